use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cache::LayerCache;
use super::hope::{hope_rows, HopeConfig};
use super::{attend, causal_mask, row_positions};
use crate::autodiff::{Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::layers::{self, Hlt};
use crate::lorentz::Curvature;

/// Shape of a latent attention layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmlaDims {
    pub heads: usize,
    pub head_dim: usize,
    pub q_latent: usize,
    pub kv_latent: usize,
    pub rope_dim: usize,
    /// Up-project to `head_dim / 2` per head instead of `head_dim`.
    pub reduced_up_projection: bool,
}

impl HmlaDims {
    pub fn validate(&self) -> Result<()> {
        let full = self.heads * self.head_dim;
        let err = |m: String| Err(Error::Config(m));
        if self.heads == 0 || self.head_dim == 0 {
            return err("heads and head_dim must be positive".into());
        }
        if self.q_latent == 0 || self.kv_latent == 0 {
            return err("latent dimensions must be positive".into());
        }
        if 2 * self.q_latent > full || 2 * self.kv_latent > full {
            return err(format!(
                "latent dimensions ({}, {}) must not exceed heads*head_dim/2 = {}",
                self.q_latent,
                self.kv_latent,
                full / 2
            ));
        }
        if self.rope_dim == 0 || self.rope_dim % 2 != 0 || self.rope_dim > self.head_dim {
            return err(format!(
                "rope_dim must be even and at most head_dim, got {}",
                self.rope_dim
            ));
        }
        if self.reduced_up_projection && self.head_dim % 2 != 0 {
            return err("reduced up-projection needs an even head_dim".into());
        }
        Ok(())
    }

    /// Per-head width of the up-projected content queries, keys and values.
    pub fn up_dim(&self) -> usize {
        if self.reduced_up_projection {
            self.head_dim / 2
        } else {
            self.head_dim
        }
    }
}

/// Latent multi-head attention with a decoupled rotary key shared by all heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Hmla {
    pub dims: HmlaDims,
    pub k: Curvature,
    pub hope: HopeConfig,
    pub scale: f64,
    pub causal: bool,
    pub down_q: Hlt,
    pub down_kv: Hlt,
    pub up_q: Hlt,
    pub up_k: Hlt,
    pub up_v: Hlt,
    pub rope_q: Hlt,
    pub rope_k: Hlt,
    pub out: Hlt,
}

impl Hmla {
    /// `scale` defaults to `sqrt(heads + rope_dim)`.
    #[allow(clippy::too_many_arguments)]
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        model_dim: usize,
        dims: HmlaDims,
        k: Curvature,
        hope_base: f64,
        scale: Option<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        dims.validate()?;
        let h = dims.heads;
        let up = dims.up_dim();
        let scale = scale.unwrap_or_else(|| ((h + dims.rope_dim) as f64).sqrt());
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Config(format!("score scale must be positive, got {scale}")));
        }
        Ok(Self {
            dims,
            k,
            hope: HopeConfig::new(dims.rope_dim, hope_base)?,
            scale,
            causal: true,
            down_q: Hlt::init(store, &format!("{name}.wdq"), model_dim, dims.q_latent, k, rng),
            down_kv: Hlt::init(store, &format!("{name}.wdkv"), model_dim, dims.kv_latent, k, rng),
            up_q: Hlt::init(store, &format!("{name}.wuq"), dims.q_latent, h * up, k, rng),
            up_k: Hlt::init(store, &format!("{name}.wuk"), dims.kv_latent, h * up, k, rng),
            up_v: Hlt::init(store, &format!("{name}.wuv"), dims.kv_latent, h * up, k, rng),
            rope_q: Hlt::init(store, &format!("{name}.wqr"), dims.q_latent, h * dims.rope_dim, k, rng),
            rope_k: Hlt::init(store, &format!("{name}.wkr"), dims.kv_latent, dims.rope_dim, k, rng),
            out: Hlt::init(store, &format!("{name}.wo"), h * up, model_dim, k, rng),
        })
    }

    pub fn new_cache(&self) -> LayerCache {
        LayerCache::latent(self.dims.kv_latent, self.dims.rope_dim)
    }

    /// Same calling convention as [`super::SelfAttention::forward`]. The cache
    /// stores only the latent key-value rows and the rotated shared key.
    pub fn forward<'g>(
        &self,
        g: &'g Graph,
        store: &ParamStore,
        x: Var<'g>,
        batch: usize,
        start: usize,
        cache: Option<&mut LayerCache>,
    ) -> Result<Var<'g>> {
        let positions = row_positions(x.rows(), batch, start)?;
        let t = x.rows() / batch;
        let (k, h) = (self.k, self.dims.heads);

        let cq = self.down_q.forward(g, store, x)?;
        let ckv = self.down_kv.forward(g, store, x)?;
        let kr = hope_rows(self.rope_k.forward(g, store, ckv)?, &positions, &self.hope)?;
        let qc = layers::split_lift(self.up_q.affine(g, store, cq)?, h, k)?;
        let qr = layers::split_lift(self.rope_q.affine(g, store, cq)?, h, k)?;
        let queries: Vec<_> = qc
            .into_iter()
            .zip(qr)
            .map(|(c, r)| layers::hyp_concat(&[c, hope_rows(r, &positions, &self.hope)?], k))
            .collect::<Result<_>>()?;

        let merged = match cache {
            None => {
                let kc = layers::split_lift(self.up_k.affine(g, store, ckv)?, h, k)?;
                let vc = layers::split_lift(self.up_v.affine(g, store, ckv)?, h, k)?;
                let mask = self.causal.then(|| causal_mask(t, t, start, start));
                let mut seqs = Vec::with_capacity(batch);
                for b in 0..batch {
                    let (lo, hi) = (b * t, (b + 1) * t);
                    let kr_b = kr.slice_rows(lo, hi)?;
                    let mut outs = Vec::with_capacity(h);
                    for i in 0..h {
                        let key = layers::hyp_concat(&[kc[i].slice_rows(lo, hi)?, kr_b], k)?;
                        outs.push(attend(
                            queries[i].slice_rows(lo, hi)?,
                            key,
                            vc[i].slice_rows(lo, hi)?,
                            self.scale,
                            mask.as_deref(),
                            k,
                        )?);
                    }
                    seqs.push(layers::hyp_concat(&outs, k)?);
                }
                g.concat_rows(&seqs)?
            }
            Some(cache) => {
                if batch != 1 {
                    return Err(Error::InvalidArgument(
                        "cached attention decodes one sequence".into(),
                    ));
                }
                cache.expect_position(start)?;
                let LayerCache::Latent { ckv: c_rows, kr: r_rows } = cache else {
                    return Err(Error::InvalidArgument("expected a latent cache".into()));
                };
                let ckv_all = g.concat_rows(&[g.constant(c_rows.clone()), ckv])?;
                let kr_all = g.concat_rows(&[g.constant(r_rows.clone()), kr])?;
                let kc = layers::split_lift(self.up_k.affine(g, store, ckv_all)?, h, k)?;
                let vc = layers::split_lift(self.up_v.affine(g, store, ckv_all)?, h, k)?;
                let mask = self.causal.then(|| causal_mask(t, start + t, start, 0));
                let mut outs = Vec::with_capacity(h);
                for i in 0..h {
                    let key = layers::hyp_concat(&[kc[i], kr_all], k)?;
                    outs.push(attend(
                        queries[i],
                        key,
                        vc[i],
                        self.scale,
                        mask.as_deref(),
                        k,
                    )?);
                }
                *c_rows = Tensor::vstack(&[c_rows, &ckv.value()])?;
                *r_rows = Tensor::vstack(&[r_rows, &kr.value()])?;
                layers::hyp_concat(&outs, k)?
            }
        };
        self.out.forward(g, store, merged)
    }
}
