use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tokenizer::VOCAB_SIZE;
use crate::attention::HmlaDims;
use crate::autodiff::AdamWConfig;
use crate::error::{Error, Result};
use crate::layers::RMS_EPS;
use crate::lorentz::Curvature;
use crate::mice::{MiceConfig, Mixing};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Dense feed-forward blocks with full self-attention.
    HelmD,
    /// Latent attention; first block dense, the rest mixtures of experts.
    HelmMice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionKind {
    SelfAttention,
    Hmla,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FfnKind {
    Dense,
    Mice,
}

/// Latent attention sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HmlaConfig {
    pub q_latent: usize,
    pub kv_latent: usize,
    pub rope_dim: usize,
    #[serde(default)]
    pub reduced_up_projection: bool,
    /// Score divisor; `sqrt(heads + rope_dim)` when absent.
    #[serde(default)]
    pub score_scale: Option<f64>,
}

/// Optimisation and logging settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_frac: f64,
    pub final_lr_ratio: f64,
    /// Zero disables periodic checkpoints; the final step is always saved.
    pub checkpoint_every: usize,
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 8,
            lr: 3e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_frac: 0.03,
            final_lr_ratio: 0.1,
            checkpoint_every: 0,
            grad_clip: Some(1.0),
        }
    }
}

impl TrainConfig {
    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// Full description of a model; serialised as the JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    #[serde(default = "default_vocab")]
    pub vocab: usize,
    pub seq_len: usize,
    #[serde(default = "default_curvature")]
    pub curvature: f64,
    #[serde(default = "default_hope_base")]
    pub hope_base: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_eps")]
    pub rmsnorm_eps: f64,
    #[serde(default)]
    pub learnable_residual: bool,
    /// Dense feed-forward width; `4 * heads * head_dim` when absent.
    #[serde(default)]
    pub dense_hidden: Option<usize>,
    /// Expert feed-forward width; `2 * heads * head_dim` when absent.
    #[serde(default)]
    pub expert_hidden: Option<usize>,
    #[serde(default)]
    pub mice: Option<MiceConfig>,
    #[serde(default)]
    pub hmla: Option<HmlaConfig>,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_vocab() -> usize {
    VOCAB_SIZE
}

fn default_curvature() -> f64 {
    -1.0
}

fn default_hope_base() -> f64 {
    crate::attention::hope::DEFAULT_BASE
}

fn default_eps() -> f64 {
    RMS_EPS
}

impl ModelConfig {
    /// Two-layer test configuration with two heads of width 8.
    pub fn micro(variant: Variant) -> Self {
        let mut cfg = Self {
            variant,
            layers: 2,
            heads: 2,
            head_dim: 8,
            vocab: VOCAB_SIZE,
            seq_len: 64,
            curvature: -1.0,
            hope_base: default_hope_base(),
            seed: 0,
            rmsnorm_eps: RMS_EPS,
            learnable_residual: false,
            dense_hidden: None,
            expert_hidden: None,
            mice: None,
            hmla: None,
            train: TrainConfig::default(),
        };
        if variant == Variant::HelmMice {
            cfg.mice = Some(MiceConfig {
                routed: 4,
                shared: 1,
                active: 2,
                routed_curvatures: None,
                shared_curvatures: None,
                bias_step: 0.001,
                aux_weight: 1e-3,
                mixing: Mixing::GateWeighted,
                balance_bias: true,
            });
            cfg.hmla = Some(HmlaConfig {
                q_latent: 8,
                kv_latent: 8,
                rope_dim: 4,
                reduced_up_projection: false,
                score_scale: None,
            });
        }
        cfg
    }

    /// Six layers of six 64-wide heads at byte vocabulary.
    pub fn small(variant: Variant) -> Self {
        let mut cfg = Self::micro(variant);
        cfg.layers = 6;
        cfg.heads = 6;
        cfg.head_dim = 64;
        cfg.seq_len = 256;
        cfg.train.lr = 2e-4;
        if let Some(h) = &mut cfg.hmla {
            h.q_latent = 64;
            h.kv_latent = 64;
            h.rope_dim = 16;
        }
        cfg
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn k(&self) -> Curvature {
        Curvature::new(self.curvature).expect("validated")
    }

    /// Space dimension of the residual stream.
    pub fn model_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn dense_hidden(&self) -> usize {
        self.dense_hidden.unwrap_or(4 * self.model_dim())
    }

    pub fn expert_hidden(&self) -> usize {
        self.expert_hidden.unwrap_or(2 * self.model_dim())
    }

    pub fn attention_kind(&self) -> AttentionKind {
        match self.variant {
            Variant::HelmD => AttentionKind::SelfAttention,
            Variant::HelmMice => AttentionKind::Hmla,
        }
    }

    pub fn ffn_kind(&self, layer: usize) -> FfnKind {
        match self.variant {
            Variant::HelmMice if layer > 0 => FfnKind::Mice,
            _ => FfnKind::Dense,
        }
    }

    pub fn mice_layers(&self) -> usize {
        (0..self.layers)
            .filter(|l| self.ffn_kind(*l) == FfnKind::Mice)
            .count()
    }

    pub fn hmla_dims(&self) -> Option<HmlaDims> {
        self.hmla.map(|h| HmlaDims {
            heads: self.heads,
            head_dim: self.head_dim,
            q_latent: h.q_latent,
            kv_latent: h.kv_latent,
            rope_dim: h.rope_dim,
            reduced_up_projection: h.reduced_up_projection,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        Curvature::new(self.curvature).map_err(|e| Error::Config(e.to_string()))?;
        if self.layers == 0 || self.heads == 0 || self.head_dim == 0 {
            return err("layers, heads and head_dim must be positive".into());
        }
        if self.head_dim % 2 != 0 {
            return err(format!("head_dim must be even, got {}", self.head_dim));
        }
        if self.vocab < 2 {
            return err("vocab must be at least 2".into());
        }
        if self.seq_len < 2 {
            return err("seq_len must be at least 2".into());
        }
        if !(self.rmsnorm_eps > 0.0) {
            return err("rmsnorm_eps must be positive".into());
        }
        let t = &self.train;
        if t.batch_size == 0 || !(t.lr > 0.0) {
            return err("train.batch_size and train.lr must be positive".into());
        }
        if !(0.0..1.0).contains(&t.warmup_frac) || !(0.0..=1.0).contains(&t.final_lr_ratio) {
            return err("train.warmup_frac must lie in [0,1) and final_lr_ratio in [0,1]".into());
        }
        match self.variant {
            Variant::HelmD => {
                if self.mice.is_some() || self.hmla.is_some() {
                    return err("helm-d takes neither `mice` nor `hmla` settings".into());
                }
            }
            Variant::HelmMice => {
                let m = self.mice.as_ref().ok_or(Error::Config("helm-mice needs `mice`".into()))?;
                m.validate()?;
                let dims = self.hmla_dims().ok_or(Error::Config("helm-mice needs `hmla`".into()))?;
                dims.validate()?;
            }
        }
        Ok(())
    }
}
