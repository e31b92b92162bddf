//! Re-localization solvers.

mod icm;
mod init;
mod reloc;
mod trws;

pub use icm::{icm_node_update, icm_run, IcmConfig, IcmResult, NodeOrder};
pub use init::{initialize, partition_mini_problems, InitResult, InitScheme};
pub use reloc::{
    class_problem, relocalize, relocalize_class, selections, ClassRelocalization, InitKind, RelocConfig, StepKind,
    TraceRow,
};
pub use trws::{trws_solve, TrwsConfig, TrwsResult};
