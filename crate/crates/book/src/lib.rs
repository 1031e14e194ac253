//! Compiles the guide under `book/src` so `cargo test` runs its snippets.
//! mdbook cannot link the workspace crates into its own doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/space.md")]
pub mod space {}
#[doc = include_str!("../../../book/src/resources.md")]
pub mod resources {}
#[doc = include_str!("../../../book/src/marginals.md")]
pub mod marginals {}
#[doc = include_str!("../../../book/src/pool.md")]
pub mod pool {}
#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}
#[doc = include_str!("../../../book/src/calibration.md")]
pub mod calibration {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
