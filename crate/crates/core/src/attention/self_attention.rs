use rand::Rng;

use super::cache::LayerCache;
use super::hope::{hope_rows, HopeConfig};
use super::{attend, causal_mask, row_positions};
use crate::autodiff::{Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::layers::{self, Hlt};
use crate::lorentz::Curvature;

/// Multi-head Lorentzian self-attention with rotary queries and keys.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttention {
    pub heads: usize,
    pub head_dim: usize,
    pub k: Curvature,
    pub hope: HopeConfig,
    /// Scores are divided by this value; defaults to `sqrt(head_dim)`.
    pub scale: f64,
    pub causal: bool,
    /// Query, key and value maps for all heads at once (head `i` owns
    /// output columns `i*n .. (i+1)*n`).
    pub wq: Hlt,
    pub wk: Hlt,
    pub wv: Hlt,
    pub wo: Hlt,
}

impl SelfAttention {
    #[allow(clippy::too_many_arguments)]
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        model_dim: usize,
        heads: usize,
        head_dim: usize,
        k: Curvature,
        hope_base: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let inner = heads * head_dim;
        Ok(Self {
            heads,
            head_dim,
            k,
            hope: HopeConfig::new(head_dim, hope_base)?,
            scale: (head_dim as f64).sqrt(),
            causal: true,
            wq: Hlt::init(store, &format!("{name}.wq"), model_dim, inner, k, rng),
            wk: Hlt::init(store, &format!("{name}.wk"), model_dim, inner, k, rng),
            wv: Hlt::init(store, &format!("{name}.wv"), model_dim, inner, k, rng),
            wo: Hlt::init(store, &format!("{name}.wo"), inner, model_dim, k, rng),
        })
    }

    pub fn new_cache(&self) -> LayerCache {
        LayerCache::full(self.heads, self.head_dim)
    }

    /// Attends within each of `batch` stacked sequences whose first row sits
    /// at absolute position `start`. With a cache, `batch` must be 1 and the
    /// cache must hold exactly `start` earlier positions; it is extended with
    /// this chunk's keys and values.
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
        let k = self.k;
        let q_heads = layers::split_lift(self.wq.affine(g, store, x)?, self.heads, k)?;
        let k_heads = layers::split_lift(self.wk.affine(g, store, x)?, self.heads, k)?;
        let v_heads = layers::split_lift(self.wv.affine(g, store, x)?, self.heads, k)?;
        let q_heads: Vec<_> = q_heads
            .into_iter()
            .map(|q| hope_rows(q, &positions, &self.hope))
            .collect::<Result<_>>()?;
        let k_heads: Vec<_> = k_heads
            .into_iter()
            .map(|kh| hope_rows(kh, &positions, &self.hope))
            .collect::<Result<_>>()?;

        let merged = match cache {
            None => {
                let mask = self.causal.then(|| causal_mask(t, t, start, start));
                let mut seqs = Vec::with_capacity(batch);
                for b in 0..batch {
                    let (lo, hi) = (b * t, (b + 1) * t);
                    let mut outs = Vec::with_capacity(self.heads);
                    for h in 0..self.heads {
                        outs.push(attend(
                            q_heads[h].slice_rows(lo, hi)?,
                            k_heads[h].slice_rows(lo, hi)?,
                            v_heads[h].slice_rows(lo, hi)?,
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
                let LayerCache::Full { keys, values } = cache else {
                    return Err(Error::InvalidArgument("expected a full key-value cache".into()));
                };
                let mask = self.causal.then(|| causal_mask(t, start + t, start, 0));
                let mut outs = Vec::with_capacity(self.heads);
                for h in 0..self.heads {
                    let all_k = g.concat_rows(&[g.constant(keys[h].clone()), k_heads[h]])?;
                    let all_v = g.concat_rows(&[g.constant(values[h].clone()), v_heads[h]])?;
                    outs.push(attend(
                        q_heads[h],
                        all_k,
                        all_v,
                        self.scale,
                        mask.as_deref(),
                        k,
                    )?);
                    keys[h] = Tensor::vstack(&[&keys[h], &k_heads[h].value()])?;
                    values[h] = Tensor::vstack(&[&values[h], &v_heads[h].value()])?;
                }
                layers::hyp_concat(&outs, k)?
            }
        };
        self.wo.forward(g, store, merged)
    }
}
