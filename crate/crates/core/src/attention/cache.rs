use std::fmt::Write as _;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Stored attention state of one layer.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerCache {
    /// Rotated keys and values of every head, each `[S, n+1]`.
    Full { keys: Vec<Tensor>, values: Vec<Tensor> },
    /// Latent key-value rows `[S, n_kv+1]` and shared rotary keys `[S, n_r+1]`.
    Latent { ckv: Tensor, kr: Tensor },
}

impl LayerCache {
    pub fn full(heads: usize, head_dim: usize) -> Self {
        LayerCache::Full {
            keys: vec![Tensor::zeros(0, head_dim + 1); heads],
            values: vec![Tensor::zeros(0, head_dim + 1); heads],
        }
    }

    pub fn latent(kv_latent: usize, rope_dim: usize) -> Self {
        LayerCache::Latent {
            ckv: Tensor::zeros(0, kv_latent + 1),
            kr: Tensor::zeros(0, rope_dim + 1),
        }
    }

    /// Number of cached positions.
    pub fn len(&self) -> usize {
        match self {
            LayerCache::Full { keys, .. } => keys.first().map_or(0, Tensor::rows),
            LayerCache::Latent { ckv, .. } => ckv.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Scalars stored per position, time coordinates included.
    pub fn scalars_per_position(&self) -> usize {
        match self {
            LayerCache::Full { keys, values } => {
                keys.iter().chain(values).map(Tensor::cols).sum()
            }
            LayerCache::Latent { ckv, kr } => ckv.cols() + kr.cols(),
        }
    }

    pub fn stored_scalars(&self) -> usize {
        match self {
            LayerCache::Full { keys, values } => keys.iter().chain(values).map(Tensor::len).sum(),
            LayerCache::Latent { ckv, kr } => ckv.len() + kr.len(),
        }
    }

    pub(crate) fn expect_position(&self, start: usize) -> Result<()> {
        if self.len() != start {
            return Err(Error::InvalidArgument(format!(
                "cache holds {} positions but the chunk starts at {start}",
                self.len()
            )));
        }
        Ok(())
    }
}

/// Per-layer caches for incremental decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct KvCache {
    pub layers: Vec<LayerCache>,
}

impl KvCache {
    pub fn len(&self) -> usize {
        self.layers.first().map_or(0, LayerCache::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stored_scalars(&self) -> usize {
        self.layers.iter().map(LayerCache::stored_scalars).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KvReportRow {
    pub layer: usize,
    /// `2 n h_n` space scalars per token for full keys and values.
    pub baseline_scalars: usize,
    /// `n_kv + n_r` space scalars per token for latent caching.
    pub hmla_scalars: usize,
}

impl KvReportRow {
    pub fn ratio(&self) -> f64 {
        self.baseline_scalars as f64 / self.hmla_scalars as f64
    }
}

/// Cache footprint comparison, one row per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct KvReport {
    pub rows: Vec<KvReportRow>,
    /// Time coordinates add one scalar per stored vector.
    pub baseline_with_time: usize,
    pub hmla_with_time: usize,
}

/// Cached scalars per token for full self-attention versus latent attention.
pub fn kv_cache_report(
    layers: usize,
    heads: usize,
    head_dim: usize,
    kv_latent: usize,
    rope_dim: usize,
) -> KvReport {
    let baseline = 2 * head_dim * heads;
    let hmla = kv_latent + rope_dim;
    KvReport {
        rows: (0..layers)
            .map(|layer| KvReportRow {
                layer,
                baseline_scalars: baseline,
                hmla_scalars: hmla,
            })
            .collect(),
        baseline_with_time: baseline + 2 * heads,
        hmla_with_time: hmla + 2,
    }
}

impl KvReport {
    pub fn total_baseline(&self) -> usize {
        self.rows.iter().map(|r| r.baseline_scalars).sum()
    }

    pub fn total_hmla(&self) -> usize {
        self.rows.iter().map(|r| r.hmla_scalars).sum()
    }

    pub fn total_ratio(&self) -> f64 {
        self.total_baseline() as f64 / self.total_hmla() as f64
    }

    /// CSV with columns `layer,baseline_scalars,hmla_scalars,ratio` and a final `total` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,baseline_scalars,hmla_scalars,ratio\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{:.6}",
                r.layer,
                r.baseline_scalars,
                r.hmla_scalars,
                r.ratio()
            );
        }
        let _ = writeln!(
            s,
            "total,{},{},{:.6}",
            self.total_baseline(),
            self.total_hmla(),
            self.total_ratio()
        );
        s
    }
}
