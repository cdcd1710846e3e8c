//! Semi-supervised speech sentiment classification.
//!
//! An attention-pooled bidirectional LSTM classifier runs over precomputed
//! speech-encoder feature sequences. It is pretrained on binary pseudo labels
//! produced by a text sentiment model from transcripts, then its output head is
//! replaced and the whole network is fine-tuned on 3-class human labels. A
//! transcript-based 2-step baseline, the weighted/unweighted REC/PRE/F1 metric
//! suite and an annotation-savings sweep harness are included.

pub mod data;
pub mod error;
pub mod harness;
pub mod labels;
pub mod metrics;
pub mod model;
pub mod numkernel;
pub mod pipeline2step;
pub mod pseudolab;
pub mod trainer;

pub use error::{Error, Result};
pub use labels::{PseudoClass, SentimentLabel};
