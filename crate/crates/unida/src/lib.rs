//! Universal domain adaptation on feature vectors: one-vs-all open-set
//! heads, a target memory bank with adaptive neighborhoods, cross-domain
//! mixup and a closed/open consistency term, plus the evaluation protocol
//! and a CLI (`unida`) for synthetic and file-based runs.
//!
//! See the guide in `book/` for a walkthrough.

pub mod config;
pub mod error;
pub mod evaluate;
pub mod memory;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod scenario;
pub mod train;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
    #[doc = include_str!("../../../book/src/objectives.md")]
    mod objectives {}
    #[doc = include_str!("../../../book/src/memory.md")]
    mod memory {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/notes.md")]
    mod notes {}
}
