//! Self-supervised envelope tokenizer.
//!
//! Per-frame constant-Q features pass through a frame-local MLP encoder and a
//! vector-quantization bottleneck; a GRU over the quantized sequence predicts
//! future frames with a contrastive loss whose negatives come from the same
//! excerpt, so only information that changes over time is useful to it.

pub mod loss;
pub mod model;
pub mod negatives;
pub mod quantize;
pub mod tokens;
pub mod train;

pub use loss::{infonce_loss, vqcpc_step_loss, LossParts, StepOutput};
pub use model::{NegativeSharing, NegativeSource, VqcpcConfig, VqcpcModel};
pub use negatives::{draw_negatives, sample_negatives_intra, NegativeSet};
pub use quantize::{quantize, quantize_batch, Codebook, FrozenQuantization, Quantized};
pub use tokens::{codebook_perplexity, read_token_file, write_token_file, TokenSequence};
pub use train::{extract_tokens, init_vqcpc, train_vqcpc, EncoderCheckpoint, FeatureSet, VqcpcLogRow, VqcpcTrainConfig};
