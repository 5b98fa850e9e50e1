//! Trauma-event text classification across domains.
//!
//! The crate is organized around one contract, [`models::Predictor`]: a
//! text goes in, the log-odds of the trauma class come out. Local models
//! ([`models`]), remote chat-completion APIs and external model servers
//! ([`remote`]) all implement it, and the explainers ([`explain`]) and the
//! evaluation harness ([`eval`]) only ever talk to that trait.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod explain;
pub mod models;
pub mod remote;
pub mod rng;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/remote.md")]
    mod remote {}
    #[doc = include_str!("../../../book/src/shap.md")]
    mod shap {}
    #[doc = include_str!("../../../book/src/slalom.md")]
    mod slalom {}
    #[doc = include_str!("../../../book/src/concepts.md")]
    mod concepts {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/agreement.md")]
    mod agreement {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
