//! Compositional visual-reasoning engine: a program interpreter whose every
//! step is verified by a mixture of sub-verifiers, calibrated, and searched
//! over as a tree of candidate reasoning traces.
//!
//! All neural models sit behind the [`backends`] interfaces; the shipped
//! mocks make every run deterministic and offline.

pub mod backends;
pub mod dsl;
pub mod harness;
pub mod runtime;
pub mod search;
pub mod verification;

pub use backends::{BackendError, BackendSuite};
pub use dsl::{parse_program, serialize, validate, Program, Step};
pub use runtime::{
    execute_step, locate_temporal_segment, part_alignment_score, Environment, ModuleRegistry,
    Value,
};
pub use search::{search, SearchConfig, SearchError, SearchOutcome, SearchParams, TraceNode};
pub use verification::{calibrate, semantic_opposite, NegativeVocabulary, OppositePolicy};
