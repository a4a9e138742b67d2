//! Runs the guide's code listings as doc-tests. mdbook cannot compile
//! listings against a local crate, so each chapter is included here as the
//! docs of an empty module and `cargo test --doc` checks it.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/grid.md")]
pub mod grid {}
#[doc = include_str!("../../../book/src/traffic.md")]
pub mod traffic {}
#[doc = include_str!("../../../book/src/autograd.md")]
pub mod autograd {}
#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}
#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}
#[doc = include_str!("../../../book/src/synth.md")]
pub mod synth {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
#[doc = include_str!("../../../book/src/formats.md")]
pub mod formats {}
