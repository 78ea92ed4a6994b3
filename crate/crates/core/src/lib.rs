//! Spatio-temporal tactile transformer.
//!
//! Tactile recordings (devices × frames × sensor rows × sensor cols) are cut
//! into tubelets, embedded with a learned projection plus sinusoidal
//! position, spatial and temporal tables, and encoded by a transformer with a
//! [CLS] token. The encoder is pretrained with spatial-group masked
//! reconstruction and a tubelet time-order task, then fine-tuned for action
//! classification.
//!
//! The guide in `book/` walks through each stage; its code listings are
//! compiled as doctests of this crate.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod finetune;
pub mod gradcheck;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod pretrain;
pub mod rng;
pub mod tokenizer;

pub use error::{Result, StatError};

/// The guide's chapters, compiled so their listings run as doctests.
#[cfg(doctest)]
pub mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/tactile-data.md")]
    pub mod tactile_data {}
    #[doc = include_str!("../../../book/src/tubelets.md")]
    pub mod tubelets {}
    #[doc = include_str!("../../../book/src/embeddings.md")]
    pub mod embeddings {}
    #[doc = include_str!("../../../book/src/encoder.md")]
    pub mod encoder {}
    #[doc = include_str!("../../../book/src/pretraining.md")]
    pub mod pretraining {}
    #[doc = include_str!("../../../book/src/finetuning.md")]
    pub mod finetuning {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    pub mod experiments {}
}
