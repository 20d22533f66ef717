//! Shared fixtures for the benchmarks.

use helm_core::model::{Batch, ModelConfig, TokenStream, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn micro(variant: Variant) -> ModelConfig {
    let mut cfg = ModelConfig::micro(variant);
    cfg.seed = 1;
    cfg
}

/// Random printable bytes, enough for batches of any preset.
pub fn corpus(bytes: usize) -> TokenStream {
    let mut r = rng(2);
    let text: String = (0..bytes).map(|_| r.random_range(b'a'..=b'z') as char).collect();
    TokenStream::from_documents(&[text])
}

pub fn batch(cfg: &ModelConfig) -> Batch {
    corpus(4096).sample(cfg.train.batch_size, cfg.seq_len, &mut rng(3))
}

/// Points on a noisy circle in the plane, for k-NN graphs.
pub fn ring(n: usize) -> Vec<Vec<f64>> {
    let mut r = rng(4);
    (0..n)
        .map(|i| {
            let a = i as f64 / n as f64 * std::f64::consts::TAU;
            vec![a.cos() + r.random_range(-0.05..0.05), a.sin() + r.random_range(-0.05..0.05)]
        })
        .collect()
}
