//! DPG element systems, degree-of-freedom bookkeeping and global assembly.

pub mod dofmap;
pub mod global;
pub mod local;

pub use dofmap::{DofInfo, DofMap, EdgeKey, Entity};
pub use global::*;
pub use local::{
    condense, energy_error, finish_local_system, local_system, operator_norm, CellLayout, Condensed, LocalSystem,
    TraceBlock,
};
