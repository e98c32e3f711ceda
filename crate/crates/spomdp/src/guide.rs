//! The book chapters, compiled as doc-tests.
//!
//! Each module below pulls one chapter of `book/src` into rustdoc, so every
//! fenced Rust snippet in the book runs under `cargo test --doc`. A failing
//! snippet points here; the module name gives the chapter.

#[doc = include_str!("../../../book/src/environments.md")]
pub mod environments {}

#[doc = include_str!("../../../book/src/models_and_beliefs.md")]
pub mod models_and_beliefs {}

#[doc = include_str!("../../../book/src/policies.md")]
pub mod policies {}

#[doc = include_str!("../../../book/src/splitting.md")]
pub mod splitting {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}
