pub mod bitext_dp;
pub mod corpus_model;
pub mod dataset_builder;
pub mod ctc_aligner;
pub mod error;
pub mod feature_io;
pub mod llm_client;
pub mod metrics;
pub mod pipeline;
pub mod quality;
pub mod text_normalize;
pub mod vad_chunker;

pub use error::{Error, Result};
