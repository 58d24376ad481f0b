//! The guide's chapters, embedded so their code samples run as doc-tests.
//! `cargo test --doc` keeps the book and the library in sync.

#[doc = include_str!("../../../book/src/encryption.md")]
pub mod encryption {}

#[doc = include_str!("../../../book/src/fixed_point.md")]
pub mod fixed_point {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}

#[doc = include_str!("../../../book/src/strategies.md")]
pub mod strategies {}

#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}
