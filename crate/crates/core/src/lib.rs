//! Siamese sentence-embedding training on a small transformer encoder,
//! with averaged subword word vectors as a baseline and two benchmarks:
//! Spearman correlation on scored pairs and KNN classification.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datasets;
pub mod encoder;
pub mod evaluation;
pub mod gradcheck;
pub mod losses;
pub mod pooling;
pub mod static_embed;
pub mod tensor;
pub mod tokenizer;
pub mod trainer;

pub use encoder::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
pub use encoder::{EncoderConfig, EncoderError, EncoderModel};
pub use evaluation::{EncoderEmbedder, EvalError, KnnConfig, SentenceEmbedder};
pub use pooling::PoolingStrategy;
pub use static_embed::WordVectorTable;
pub use tensor::{Tape, Tensor, TensorError, Var};
pub use tokenizer::Vocabulary;
pub use trainer::{TrainConfig, TrainError, TrainSetup};
