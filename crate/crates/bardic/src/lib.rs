//! Style transfer between modern English and Early Modern (Shakespearean)
//! English: a pointer-augmented sequence-to-sequence model trained from
//! scratch in pure Rust, plus dictionary baselines, corpus tooling, and the
//! BLEU / PINC metrics used to evaluate them.

pub mod baselines;
pub mod cli;
pub mod decode;
pub mod embed;
pub mod error;
pub mod lexicon;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod text;
pub mod train;

pub use error::{Error, Result};

// The guide's chapters double as documentation pages here, so every code
// snippet in the book is compiled and run by `cargo test --doc` and can
// never drift from the library.
#[doc = include_str!("../../../book/src/introduction.md")]
#[doc(hidden)]
pub mod _guide_introduction {}
#[doc = include_str!("../../../book/src/data.md")]
#[doc(hidden)]
pub mod _guide_data {}
#[doc = include_str!("../../../book/src/embeddings.md")]
#[doc(hidden)]
pub mod _guide_embeddings {}
#[doc = include_str!("../../../book/src/model.md")]
#[doc(hidden)]
pub mod _guide_model {}
#[doc = include_str!("../../../book/src/gradients.md")]
#[doc(hidden)]
pub mod _guide_gradients {}
#[doc = include_str!("../../../book/src/training.md")]
#[doc(hidden)]
pub mod _guide_training {}
#[doc = include_str!("../../../book/src/decoding.md")]
#[doc(hidden)]
pub mod _guide_decoding {}
#[doc = include_str!("../../../book/src/evaluation.md")]
#[doc(hidden)]
pub mod _guide_evaluation {}
#[doc = include_str!("../../../book/src/cli.md")]
#[doc(hidden)]
pub mod _guide_cli {}
