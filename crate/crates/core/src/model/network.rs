use crate::attention::{Hmla, KvCache, LayerCache, SelfAttention};
use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::diagnostics;
use crate::error::{Error, Result};
use crate::layers::{self, Hffn, Residual, RmsNorm};
use crate::lorentz::Curvature;
use crate::mice::{Mice, Routing};

use super::config::{AttentionKind, FfnKind, ModelConfig};
use super::corpus::Batch;
use super::{component_rng, STREAM_INIT};

#[derive(Debug, Clone, PartialEq)]
pub enum Attention {
    Full(SelfAttention),
    Latent(Hmla),
}

impl Attention {
    fn forward<'g>(
        &self,
        g: &'g Graph,
        store: &ParamStore,
        x: Var<'g>,
        batch: usize,
        start: usize,
        cache: Option<&mut LayerCache>,
    ) -> Result<Var<'g>> {
        match self {
            Attention::Full(a) => a.forward(g, store, x, batch, start, cache),
            Attention::Latent(a) => a.forward(g, store, x, batch, start, cache),
        }
    }

    fn new_cache(&self) -> LayerCache {
        match self {
            Attention::Full(a) => a.new_cache(),
            Attention::Latent(a) => a.new_cache(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Ffn {
    Dense(Hffn),
    Mice(Mice),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub attn_norm: RmsNorm,
    pub attn: Attention,
    pub attn_residual: Residual,
    pub ffn_norm: RmsNorm,
    pub ffn: Ffn,
    pub ffn_residual: Residual,
}

/// Everything a forward pass produces.
pub struct ForwardOutput<'g> {
    /// `[rows, vocab]` scores.
    pub logits: Var<'g>,
    /// Output of the last decoder block, before the final norm.
    pub hidden: Var<'g>,
    /// Sum of MiCE balance losses (already weighted).
    pub aux: Option<Var<'g>>,
    /// Routing of each MiCE layer, in layer order.
    pub routing: Vec<Routing>,
    /// Largest manifold violation over embeddings and block outputs.
    pub max_violation: f64,
}

/// HELM decoder stack with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub embed: ParamId,
    pub blocks: Vec<Block>,
    pub final_norm: RmsNorm,
    pub head: ParamId,
}

impl Model {
    /// Fresh parameters drawn from the config seed.
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = component_rng(cfg.seed, STREAM_INIT);
        let k = cfg.k();
        let d = cfg.model_dim();
        let mut store = ParamStore::new();
        let embed = store.add(
            "embed",
            Tensor::randn(cfg.vocab, d, 0.02, &mut rng).trainable(),
        );
        let mut blocks = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let name = format!("block{l}");
            let attn_norm = RmsNorm::init(&mut store, &format!("{name}.attn_norm"), d, cfg.rmsnorm_eps, k);
            let attn = match cfg.attention_kind() {
                AttentionKind::SelfAttention => Attention::Full(SelfAttention::init(
                    &mut store,
                    &format!("{name}.attn"),
                    d,
                    cfg.heads,
                    cfg.head_dim,
                    k,
                    cfg.hope_base,
                    &mut rng,
                )?),
                AttentionKind::Hmla => {
                    let dims = cfg.hmla_dims().expect("validated");
                    let scale = cfg.hmla.and_then(|h| h.score_scale);
                    Attention::Latent(Hmla::init(
                        &mut store,
                        &format!("{name}.attn"),
                        d,
                        dims,
                        k,
                        cfg.hope_base,
                        scale,
                        &mut rng,
                    )?)
                }
            };
            let attn_residual = Residual::init(&mut store, &format!("{name}.attn_res"), cfg.learnable_residual);
            let ffn_norm = RmsNorm::init(&mut store, &format!("{name}.ffn_norm"), d, cfg.rmsnorm_eps, k);
            let ffn = match cfg.ffn_kind(l) {
                FfnKind::Dense => Ffn::Dense(Hffn::init(
                    &mut store,
                    &format!("{name}.ffn"),
                    d,
                    cfg.dense_hidden(),
                    k,
                    &mut rng,
                )),
                FfnKind::Mice => Ffn::Mice(Mice::init(
                    &mut store,
                    &format!("{name}.mice"),
                    d,
                    cfg.expert_hidden(),
                    k,
                    cfg.mice.clone().expect("validated"),
                    &mut rng,
                )?),
            };
            let ffn_residual = Residual::init(&mut store, &format!("{name}.ffn_res"), cfg.learnable_residual);
            blocks.push(Block {
                attn_norm,
                attn,
                attn_residual,
                ffn_norm,
                ffn,
                ffn_residual,
            });
        }
        let final_norm = RmsNorm::init(&mut store, "final_norm", d, cfg.rmsnorm_eps, k);
        let head = store.add(
            "head",
            Tensor::randn(d, cfg.vocab, 0.02, &mut rng).trainable(),
        );
        Ok(Self {
            cfg,
            store,
            embed,
            blocks,
            final_norm,
            head,
        })
    }

    pub fn k(&self) -> Curvature {
        self.cfg.k()
    }

    pub fn new_cache(&self) -> KvCache {
        KvCache {
            layers: self.blocks.iter().map(|b| b.attn.new_cache()).collect(),
        }
    }

    /// Mice layers in layer order.
    pub fn mice_layers(&self) -> impl Iterator<Item = &Mice> {
        self.blocks.iter().filter_map(|b| match &b.ffn {
            Ffn::Mice(m) => Some(m),
            Ffn::Dense(_) => None,
        })
    }

    /// Lifted embeddings of flattened token ids, `[rows, d+1]`.
    pub fn embed<'g>(&self, g: &'g Graph, store: &ParamStore, ids: &[u32]) -> Result<Var<'g>> {
        let rows: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        if let Some(&bad) = rows.iter().find(|&&i| i >= self.cfg.vocab) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                len: self.cfg.vocab,
            });
        }
        layers::lift(g.param(store, self.embed).gather_rows(&rows)?, self.k())
    }

    /// Runs `batch` sequences of equal length (flattened in `ids`) whose
    /// first token sits at position `start`. A cache requires `batch == 1`.
    /// `routing` overrides the MiCE top-k decision per MiCE layer.
    pub fn forward<'g>(
        &self,
        g: &'g Graph,
        ids: &[u32],
        batch: usize,
        start: usize,
        cache: Option<&mut KvCache>,
        routing: Option<&[Routing]>,
    ) -> Result<ForwardOutput<'g>> {
        self.forward_with(&self.store, g, ids, batch, start, cache, routing)
    }

    /// [`Model::forward`] with parameter values taken from `store`, which
    /// must share this model's layout.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_with<'g>(
        &self,
        store: &ParamStore,
        g: &'g Graph,
        ids: &[u32],
        batch: usize,
        start: usize,
        mut cache: Option<&mut KvCache>,
        routing: Option<&[Routing]>,
    ) -> Result<ForwardOutput<'g>> {
        if ids.is_empty() {
            return Err(Error::EmptyInput("token ids"));
        }
        if batch == 0 || ids.len() % batch != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} tokens do not split into {batch} sequences",
                ids.len()
            )));
        }
        if start + ids.len() / batch > self.cfg.seq_len {
            return Err(Error::InvalidArgument(format!(
                "sequence of length {} exceeds seq_len {}",
                start + ids.len() / batch,
                self.cfg.seq_len
            )));
        }
        let k = self.k();
        let mut x = self.embed(g, store, ids)?;
        let mut max_violation = diagnostics::max_row_violation(&x.value(), k);
        let mut aux: Option<Var<'g>> = None;
        let mut routes = Vec::new();
        let mut mice_idx = 0;
        for (l, b) in self.blocks.iter().enumerate() {
            let layer_cache = cache.as_deref_mut().map(|c| &mut c.layers[l]);
            let h = b.attn_norm.forward(g, store, x)?;
            let a = b.attn.forward(g, store, h, batch, start, layer_cache)?;
            diagnostics::check("attention", &a.value(), k)?;
            let x1 = b.attn_residual.forward(g, store, x, a, k)?;
            let h2 = b.ffn_norm.forward(g, store, x1)?;
            let f = match &b.ffn {
                Ffn::Dense(ffn) => ffn.forward(g, store, h2)?,
                Ffn::Mice(m) => {
                    let forced = routing.map(|r| &r[mice_idx]);
                    let out = m.forward(g, store, h2, batch, forced)?;
                    mice_idx += 1;
                    routes.push(out.routing);
                    if let Some(a) = out.aux {
                        aux = Some(match aux {
                            Some(acc) => acc.add(a)?,
                            None => a,
                        });
                    }
                    out.y
                }
            };
            x = b.ffn_residual.forward(g, store, x1, f, k)?;
            let v = diagnostics::max_row_violation(&x.value(), k);
            diagnostics::check("block", &x.value(), k)?;
            max_violation = max_violation.max(v);
        }
        let normed = self.final_norm.forward(g, store, x)?;
        let logits = layers::space(normed)?.matmul(g.param(store, self.head))?;
        Ok(ForwardOutput {
            logits,
            hidden: x,
            aux,
            routing: routes,
            max_violation,
        })
    }

    /// Mean next-token cross-entropy plus any balance loss. Returns the
    /// total loss, the cross-entropy alone and the forward output.
    pub fn loss<'g>(
        &self,
        g: &'g Graph,
        batch: &Batch,
        routing: Option<&[Routing]>,
    ) -> Result<(Var<'g>, Var<'g>, ForwardOutput<'g>)> {
        self.loss_with(&self.store, g, batch, routing)
    }

    pub fn loss_with<'g>(
        &self,
        store: &ParamStore,
        g: &'g Graph,
        batch: &Batch,
        routing: Option<&[Routing]>,
    ) -> Result<(Var<'g>, Var<'g>, ForwardOutput<'g>)> {
        let ids: Vec<u32> = batch.inputs.iter().flatten().copied().collect();
        let out = self.forward_with(store, g, &ids, batch.len(), 0, None, routing)?;
        let nll = out.logits.cross_entropy(&batch.flat_targets())?;
        let total = match out.aux {
            Some(a) => nll.add(a)?,
            None => nll,
        };
        Ok((total, nll, out))
    }
}
