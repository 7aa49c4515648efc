use super::sod::SodState;

/// Classical fourth-order Runge–Kutta step for `dx/dt = flow(t, x)`.
pub fn rk4_step<const N: usize, F>(flow: F, t: f64, x: &[f64; N], dt: f64) -> [f64; N]
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let axpy = |a: &[f64; N], k: &[f64; N], h: f64| -> [f64; N] { std::array::from_fn(|i| a[i] + h * k[i]) };
    let k1 = flow(t, x);
    let k2 = flow(t + dt / 2.0, &axpy(x, &k1, dt / 2.0));
    let k3 = flow(t + dt / 2.0, &axpy(x, &k2, dt / 2.0));
    let k4 = flow(t + dt, &axpy(x, &k3, dt));
    std::array::from_fn(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RefineError {
    #[error("no event crossing in [{t_lo}, {t_hi}]")]
    NoSignChange { t_lo: f64, t_hi: f64 },
    #[error("invalid refinement interval [{t_lo}, {t_hi}] with tolerance {tol}")]
    BadInterval { t_lo: f64, t_hi: f64, tol: f64 },
}

/// Locates the send-on-delta crossing of `signal` inside `[t_lo, t_hi]` by
/// bisection on `|v(t) - v(t_k)| - delta`.
///
/// The indicator must be negative (or exactly zero) at `t_lo` and
/// non-negative at `t_hi`. Returns `t_lo` when the crossing sits exactly
/// there; otherwise returns the upper end of the final bracket, so an
/// interval already no wider than `tol` yields `t_hi`.
pub fn refine_event_time<F>(signal: F, sampler: &SodState, t_lo: f64, t_hi: f64, tol: f64) -> Result<f64, RefineError>
where
    F: Fn(f64) -> f64,
{
    if !(t_lo <= t_hi && tol > 0.0) {
        return Err(RefineError::BadInterval { t_lo, t_hi, tol });
    }
    let g = |t: f64| sampler.crossing(signal(t));
    let g_lo = g(t_lo);
    if g_lo == 0.0 {
        return Ok(t_lo);
    }
    if g_lo > 0.0 || g(t_hi) < 0.0 {
        return Err(RefineError::NoSignChange { t_lo, t_hi });
    }
    let (mut lo, mut hi) = (t_lo, t_hi);
    while hi - lo > tol {
        let mid = lo + (hi - lo) / 2.0;
        if g(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
