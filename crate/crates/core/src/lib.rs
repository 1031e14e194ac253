//! Prioritized subnet sampling for training resource-adaptive supernets.
//!
//! One weight-shared supernet is trained with the sandwich rule. For every
//! resource constraint the trainer keeps a small pool of the subnets that
//! have trained best, and draws the medium subnet of each batch either from
//! that pool or from the structure space conditioned on the constraint. After
//! training, the top pool entries are calibrated and the most accurate one is
//! reported per constraint.
//!
//! ```
//! use pssnet::space::{enumerate_space, SupernetSpec, DEFAULT_ENUMERATION_CAP};
//!
//! let spec = SupernetSpec::default();
//! let all: Vec<_> = enumerate_space(&spec, DEFAULT_ENUMERATION_CAP).unwrap().collect();
//! assert_eq!(all.len() as u128, spec.space_size());
//! ```

pub mod config;
pub mod error;
pub mod marginals;
pub mod nn;
pub mod pool;
pub mod resource;
pub mod rng;
pub mod space;
pub mod trainer;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use space::{SubnetStructure, SupernetSpec};
pub use trainer::{Experiment, RunReport, RunState};
