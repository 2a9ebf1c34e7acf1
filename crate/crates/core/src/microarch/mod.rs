//! The speculative core: profiles, predictors, the RSB, machine state and
//! the pipeline that runs programs on them.

mod pipeline;
mod predictor;
mod profile;
mod rsb;
mod state;
mod trace;

pub use pipeline::{
    fill_survives, run, transient_value, ArchFault, Exit, RunError, RunLimits, RunReport,
};
pub use predictor::{predict_branch, Btb, Pht};
pub use profile::{
    CpuProfile, ExceptionPolicy, Pipeline, ProfileError, RsbUnderflow, SquashPolicy, PROFILE_NAMES,
};
pub use rsb::{rsb_pop, rsb_push, Rsb};
pub use state::{ArchContext, MachineState, DEFAULT_STACK_TOP};
pub use trace::{EventKind, Trace, TraceEvent};
