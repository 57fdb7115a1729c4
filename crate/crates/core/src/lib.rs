//! Conditional generation of intent-labelled queries from small seed sets.
//!
//! The crate covers the full experimental loop: loading chunk-annotated query
//! corpora, delexicalizing slot values into placeholder tokens, mixing a small
//! labelled seed set with sentences drawn from an unannotated reservoir,
//! training a conditional variational autoencoder with hand-written gradients,
//! generating new delexicalized patterns per intent, scoring them (oracle
//! conditioning accuracy, BLEU quality/diversity, originality), and measuring
//! the downstream effect of augmentation on Kneser-Ney language models.
//!
//! All randomness is drawn from explicitly seeded ChaCha8 generators, so every
//! artifact (parameters, generations, reports) is bit-reproducible from its
//! recorded configuration.

pub mod corpus;
pub mod cvae;
pub mod embeddings;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod ngram;
pub mod synth;
pub mod transfer;

pub mod cli;

pub use error::{Error, Result};
