//! Bipartite entanglement distillability: NPT tests, Schmidt decompositions,
//! witnesses, direct-sum structure, normal forms and state generators.

pub mod error;
pub mod gen;
pub mod normal_forms;
pub mod numkernel;
pub mod schmidt;
pub mod state_core;
pub mod structure;
pub mod suites;
pub mod witness;

pub use error::{Error, Result};
pub use numkernel::TolerancePolicy;
pub use state_core::BipartiteState;
