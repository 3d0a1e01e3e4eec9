//! Execution environment, step dispatch, and the two symbolic algorithms
//! (temporal localization, part alignment).

pub mod align;
pub mod env;
pub mod eval;
pub mod exec;
pub mod registry;
pub mod temporal;
pub mod value;

pub use align::{part_alignment_score, AlignError, Alignment};
pub use env::{Environment, Provenance, RebindError};
pub use exec::{bind_candidate, execute_step, Candidate, CandidateSet, RuntimeError};
pub use registry::{ModuleEntry, ModuleRegistry, RegistryError};
pub use temporal::{locate_temporal_segment, Segment, TemporalError};
pub use value::{BBox, ImageHandle, Value, ValueTag};
