//! Coarse grid search for the PI gains used by the closed-loop tests.
//!
//! For each placement and threshold, every (kp, ki) pair on the grid runs a
//! 0 -> 10 cm setpoint step on the default tank for 300 s (kd = 0). A cell
//! shows the settling time, i.e. the end of the last sample with
//! |y - r| >= 0.1 cm, followed by the largest |y - r| over the final 100 s.
//! A dash means the loop was still outside the band during the final 100 s.
//!
//!     cargo run -p openlab-core --example tune_gains --release

use openlab_core::control::loops::{ControlLoop, LocalTank, LoopConfig, Placement};
use openlab_core::control::PidParams;
use openlab_core::plant::{CoupledTanksVi, TankConfig};

const SETPOINT: f64 = 10.0;
const BAND: f64 = 0.1;
const DURATION: f64 = 300.0;
const DT: f64 = 0.01;

struct Outcome {
    settle: f64,
    tail_max: f64,
}

fn run(placement: Placement, delta: f64, kp: f64, ki: f64) -> Outcome {
    let tank = TankConfig::default();
    let vi = CoupledTanksVi::new(tank.clone()).unwrap();
    let cfg = LoopConfig {
        placement,
        setpoint: SETPOINT,
        pid: PidParams::new(kp, ki, 0.0).with_limits(0.0, tank.params.u_max),
        delta,
        dt: DT,
        refine_events: false,
    };
    let mut control = ControlLoop::new(cfg, LocalTank::new(vi.process(), tank.period)).unwrap();
    let steps = (DURATION / DT).round() as u64;
    let mut settle = 0.0;
    let mut tail_max: f64 = 0.0;
    for _ in 0..steps {
        let rec = control.step().unwrap();
        let err = (rec.y - rec.r).abs();
        if err >= BAND {
            settle = rec.t + DT;
        }
        if rec.t >= DURATION - 100.0 {
            tail_max = tail_max.max(err);
        }
    }
    Outcome { settle, tail_max }
}

fn main() {
    let kps = [0.5, 1.0, 2.0, 3.0, 5.0, 8.0];
    let kis = [0.02, 0.05, 0.1, 0.2, 0.5];
    let cases = [
        (Placement::ErrorSampled, 0.2),
        (Placement::ErrorSampled, 0.1),
        (Placement::ErrorSampled, 0.05),
        (Placement::ControlSampled, 0.02),
    ];
    for (placement, delta) in cases {
        println!("{placement:?}, delta = {delta}");
        println!("  ki:     {}", kis.map(|k| format!("{k:>14}")).join(""));
        let mut best: Option<(f64, f64, f64)> = None;
        for &kp in &kps {
            let mut row = String::new();
            for &ki in &kis {
                let o = run(placement, delta, kp, ki);
                if o.settle < DURATION - 100.0 {
                    row.push_str(&format!("{:>7.1} ({:.3})", o.settle, o.tail_max));
                    if best.is_none_or(|b| o.settle < b.2) {
                        best = Some((kp, ki, o.settle));
                    }
                } else {
                    row.push_str(&format!("{:>14}", "-"));
                }
            }
            println!("  kp={kp:<4} {row}");
        }
        match best {
            Some((kp, ki, t)) => println!("  fastest: kp={kp} ki={ki}, settled at {t:.1} s"),
            None => println!("  no candidate settles"),
        }
    }
}
