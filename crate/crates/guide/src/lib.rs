//! The book's code snippets, compiled as doc-tests.
//!
//! mdbook cannot resolve workspace crates when testing, so each chapter is
//! pulled in here instead and checked by `cargo test`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}

#[doc = include_str!("../../../book/src/likelihood.md")]
pub mod likelihood {}

#[doc = include_str!("../../../book/src/sampler.md")]
pub mod sampler {}

#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}

#[doc = include_str!("../../../book/src/management.md")]
pub mod management {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
