//! Flat parameter vectors, gradient engines, Adam and L-BFGS, and the two-stage schedule.

mod adam;
mod check;
mod gradient;
mod lbfgs;
mod params;
mod schedule;

pub use adam::{adam_step, Adam, AdamConfig};
pub use check::{gradcheck, relative_errors, TermCheck};
pub use gradient::{fd_gradient, fd_gradient_with, fd_step, FdScheme, GradientEngine, Problem};
pub use lbfgs::{lbfgs_step, LbfgsConfig, LbfgsHistory, LbfgsOutcome};
pub use params::{FreezeMask, ParamKind, ParamLayout, ParamVector, Slot, MIN_BOX_SIZE};
pub use schedule::{
    optimize, run_stage1, run_stage2, AdamScales, Phase, ScheduleConfig, Trajectory, TrajectoryRecord,
};
