//! The HELM language model, its data pipeline and training loop.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod generate;
pub mod network;
pub mod probe;
pub mod tokenizer;
pub mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{AttentionKind, FfnKind, HmlaConfig, ModelConfig, TrainConfig, Variant};
pub use corpus::{Batch, TokenStream};
pub use checkpoint::Checkpoint;
pub use generate::generate;
pub use network::{Attention, Block, Ffn, ForwardOutput, Model};
pub use train::{StepMetrics, Trainer};

/// Stream of the parameter initialiser.
pub const STREAM_INIT: u64 = 1;
/// Stream of the batch sampler.
pub const STREAM_DATA: u64 = 2;

/// Independent generator for one component of a seeded run.
pub fn component_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
