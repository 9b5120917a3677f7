//! Programs, configuration, the step-driven simulator and the
//! interleaving explorer.

mod config;
pub(crate) mod engine;
mod explore;
mod program;

pub use config::{Backend, CostModel, RetryPolicy, SimConfig};
pub use engine::{
    run, ExecutionResult, SchedulePolicy, SimError, Simulator, StepOutcome, ThreadStats,
    CLOCK_START,
};
pub use explore::{explore, explore_all, ExplorationReport, ExploreOptions};
pub use program::{Op, Program, ProgramError, TxBody, LOCK_ADDR, RESERVED_BASE};
