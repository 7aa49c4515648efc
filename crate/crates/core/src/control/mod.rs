//! Control blocks: PID, the send-on-delta sampler, the fixed-step solver and
//! the closed-loop runner that wires them to a plant.

mod block;
pub mod loops;
pub mod pid;
pub mod sod;
pub mod solver;

pub use block::{Block, BlockKind};
pub use pid::{pid_step, PidController, PidParams, PidParamsError, PidState};
pub use sod::{sod_init, sod_update, BadDelta, SodSampler, SodState};
pub use solver::{refine_event_time, rk4_step, RefineError};
