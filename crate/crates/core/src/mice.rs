//! Mixture of experts whose feed-forward networks live on hyperboloids of
//! different curvature.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::diagnostics;
use crate::error::{Error, Result};
use crate::layers::{self, Hffn};
use crate::lorentz::Curvature;

/// How routed expert outputs enter the mixing centroid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Mixing {
    /// Routed outputs are scaled by their gate weight, shared outputs by 1.
    #[default]
    GateWeighted,
    /// Every selected output enters with weight 1.
    Unweighted,
}

/// Expert counts, curvatures and balancing knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiceConfig {
    pub routed: usize,
    pub shared: usize,
    pub active: usize,
    /// Defaults to an even spacing from -0.1 to -2.0.
    #[serde(default)]
    pub routed_curvatures: Option<Vec<f64>>,
    /// Defaults to -1 for every shared expert.
    #[serde(default)]
    pub shared_curvatures: Option<Vec<f64>>,
    #[serde(default = "default_bias_step")]
    pub bias_step: f64,
    #[serde(default = "default_aux_weight")]
    pub aux_weight: f64,
    #[serde(default)]
    pub mixing: Mixing,
    /// Switches the bias-based balancing on or off.
    #[serde(default = "default_true")]
    pub balance_bias: bool,
}

fn default_bias_step() -> f64 {
    0.001
}

fn default_aux_weight() -> f64 {
    1e-3
}

fn default_true() -> bool {
    true
}

/// `n` values evenly spaced from -0.1 to -2.0 inclusive.
pub fn spaced_curvatures(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![-0.1],
        _ => (0..n)
            .map(|i| -0.1 - 1.9 * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

impl MiceConfig {
    pub fn routed_curvatures(&self) -> Result<Vec<Curvature>> {
        let ks = self
            .routed_curvatures
            .clone()
            .unwrap_or_else(|| spaced_curvatures(self.routed));
        if ks.len() != self.routed {
            return Err(Error::Config(format!(
                "{} routed curvatures for {} routed experts",
                ks.len(),
                self.routed
            )));
        }
        ks.into_iter().map(Curvature::new).collect()
    }

    pub fn shared_curvatures(&self) -> Result<Vec<Curvature>> {
        let ks = self
            .shared_curvatures
            .clone()
            .unwrap_or_else(|| vec![-1.0; self.shared]);
        if ks.len() != self.shared {
            return Err(Error::Config(format!(
                "{} shared curvatures for {} shared experts",
                ks.len(),
                self.shared
            )));
        }
        ks.into_iter().map(Curvature::new).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.routed == 0 || self.active == 0 || self.active > self.routed {
            return Err(Error::Config(format!(
                "need 1 <= active <= routed, got active={} routed={}",
                self.active, self.routed
            )));
        }
        if !(self.bias_step >= 0.0 && self.aux_weight >= 0.0) {
            return Err(Error::Config("bias_step and aux_weight must be non-negative".into()));
        }
        self.routed_curvatures()?;
        self.shared_curvatures()?;
        Ok(())
    }
}

/// Selected experts of every token row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Routing {
    pub selected: Vec<Vec<usize>>,
}

impl Routing {
    /// Tokens routed to each of `experts` experts.
    pub fn counts(&self, experts: usize) -> Vec<usize> {
        let mut c = vec![0; experts];
        for row in &self.selected {
            for &j in row {
                c[j] += 1;
            }
        }
        c
    }
}

/// Top-`k` indices of `scores`, highest first, lowest index on ties.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// Raises the bias of under-loaded experts and lowers it for over-loaded ones.
pub fn update_balance_bias(bias: &mut [f64], counts: &[usize], step: f64) {
    let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
    for (b, &c) in bias.iter_mut().zip(counts) {
        let c = c as f64;
        if c > mean {
            *b -= step;
        } else if c < mean {
            *b += step;
        }
    }
}

/// Result of one MiCE forward pass.
pub struct MiceOutput<'g> {
    pub y: Var<'g>,
    /// Sequence-wise balance loss, already multiplied by its weight.
    pub aux: Option<Var<'g>>,
    pub routing: Routing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expert {
    pub ffn: Hffn,
    pub k: Curvature,
}

/// MiCE layer parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Mice {
    pub cfg: MiceConfig,
    pub k: Curvature,
    pub dim: usize,
    /// Gate centroids, `[dim, routed]`.
    pub centroids: ParamId,
    /// Balance biases, `[1, routed]`, updated outside the optimizer.
    pub bias: ParamId,
    pub routed: Vec<Expert>,
    pub shared: Vec<Expert>,
}

impl Mice {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        hidden: usize,
        k: Curvature,
        cfg: MiceConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let centroids = store.add(
            format!("{name}.gate"),
            Tensor::randn(dim, cfg.routed, 1.0 / (dim as f64).sqrt(), rng).trainable(),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(1, cfg.routed));
        let routed = cfg
            .routed_curvatures()?
            .into_iter()
            .enumerate()
            .map(|(i, ke)| Expert {
                ffn: Hffn::init(store, &format!("{name}.routed{i}"), dim, hidden, ke, rng),
                k: ke,
            })
            .collect();
        let shared = cfg
            .shared_curvatures()?
            .into_iter()
            .enumerate()
            .map(|(i, ke)| Expert {
                ffn: Hffn::init(store, &format!("{name}.shared{i}"), dim, hidden, ke, rng),
                k: ke,
            })
            .collect();
        Ok(Self {
            cfg,
            k,
            dim,
            centroids,
            bias,
            routed,
            shared,
        })
    }

    /// Affinity `sigmoid(x_s . y_j)`, shape `[T, routed]`.
    pub fn affinities<'g>(&self, g: &'g Graph, store: &ParamStore, x: Var<'g>) -> Result<Var<'g>> {
        layers::space(x)?
            .matmul(g.param(store, self.centroids))?
            .sigmoid()
    }

    /// Top-`active` experts per row under biased affinities.
    pub fn route(&self, s: &Tensor, bias: &[f64]) -> Routing {
        let selected = (0..s.rows())
            .map(|r| {
                let biased: Vec<f64> = s.row_slice(r).iter().zip(bias).map(|(a, b)| a + b).collect();
                top_k(&biased, self.cfg.active)
            })
            .collect();
        Routing { selected }
    }

    /// Normalised gate weights over selected experts, shape `[T, routed]`.
    pub fn gate_weights<'g>(&self, s: Var<'g>, routing: &Routing) -> Result<Var<'g>> {
        let g = s.graph();
        let (t, n) = (s.rows(), self.cfg.routed);
        let mut mask = Tensor::zeros(t, n);
        for (r, sel) in routing.selected.iter().enumerate() {
            for &j in sel {
                mask.set(r, j, 1.0);
            }
        }
        let masked = s.mul(g.constant(mask))?;
        let denom = masked.sum_axis(1)?;
        let dv = denom.value();
        if dv.data().iter().all(|d| *d > 0.0) {
            return masked.div(denom);
        }
        // Rows whose selected affinities all underflow get uniform weights.
        let mut pad = Tensor::zeros(t, 1);
        let mut uniform = Tensor::zeros(t, n);
        for r in 0..t {
            if dv.get(r, 0) <= 0.0 {
                pad.set(r, 0, 1.0);
                for &j in &routing.selected[r] {
                    uniform.set(r, j, 1.0 / routing.selected[r].len() as f64);
                }
            }
        }
        masked
            .div(denom.add(g.constant(pad))?)?
            .add(g.constant(uniform))
    }

    /// `batch` stacked sequences in `x`. When `routing` is given it replaces
    /// the top-k decision (used to hold routing fixed under perturbation).
    pub fn forward<'g>(
        &self,
        g: &'g Graph,
        store: &ParamStore,
        x: Var<'g>,
        batch: usize,
        routing: Option<&Routing>,
    ) -> Result<MiceOutput<'g>> {
        if x.cols() != self.dim + 1 {
            return Err(Error::DimensionMismatch {
                expected: self.dim + 1,
                actual: x.cols(),
            });
        }
        let rows = x.rows();
        let s = self.affinities(g, store, x)?;
        let routing = match routing {
            Some(r) => {
                if r.selected.len() != rows {
                    return Err(Error::DimensionMismatch {
                        expected: rows,
                        actual: r.selected.len(),
                    });
                }
                r.clone()
            }
            None => self.route(&s.value(), store.get(self.bias).data()),
        };
        let weights = self.gate_weights(s, &routing)?;

        let mut terms: Vec<Var<'g>> = Vec::new();
        for e in &self.shared {
            terms.push(self.expert_path(g, store, x, e)?);
        }
        for (j, e) in self.routed.iter().enumerate() {
            let idx: Vec<usize> = (0..rows)
                .filter(|r| routing.selected[*r].contains(&j))
                .collect();
            if idx.is_empty() {
                continue;
            }
            let z = self.expert_path(g, store, x.gather_rows(&idx)?, e)?;
            let z = match self.cfg.mixing {
                Mixing::GateWeighted => z.mul(weights.slice_cols(j, j + 1)?.gather_rows(&idx)?)?,
                Mixing::Unweighted => z,
            };
            terms.push(z.scatter_rows(&idx, rows)?);
        }
        let mut sum = terms[0];
        for t in &terms[1..] {
            sum = sum.add(*t)?;
        }
        let mix = layers::normalize_rows(sum, self.k)?;
        diagnostics::check("mice.mix", &mix.value(), self.k)?;
        let y = layers::residual(x, mix, 1.0, 1.0, self.k)?;

        let aux = if self.cfg.aux_weight > 0.0 {
            Some(self.aux_loss(s, &routing, batch)?)
        } else {
            None
        };
        Ok(MiceOutput { y, aux, routing })
    }

    /// Transport to the expert manifold, apply the expert, transport back.
    fn expert_path<'g>(&self, g: &'g Graph, store: &ParamStore, x: Var<'g>, e: &Expert) -> Result<Var<'g>> {
        let inside = layers::rescale(x, self.k, e.k)?;
        diagnostics::check("mice.expert_in", &inside.value(), e.k)?;
        let out = e.ffn.forward(g, store, inside)?;
        let back = layers::rescale(out, e.k, self.k)?;
        diagnostics::check("mice.expert_out", &back.value(), self.k)?;
        Ok(back)
    }

    /// `aux_weight * routed * sum_j f_j P_j` averaged over sequences, where
    /// `f_j` is the share of routing slots taken by expert `j` and `P_j` the
    /// mean normalised affinity.
    pub fn aux_loss<'g>(&self, s: Var<'g>, routing: &Routing, batch: usize) -> Result<Var<'g>> {
        let g = s.graph();
        let rows = s.rows();
        if batch == 0 || rows % batch != 0 {
            return Err(Error::InvalidArgument(format!(
                "{rows} rows do not split into {batch} sequences"
            )));
        }
        let t = rows / batch;
        let n = self.cfg.routed;
        let probs = s.div(s.sum_axis(1)?)?;
        let mut total: Option<Var<'g>> = None;
        for b in 0..batch {
            let sub = Routing {
                selected: routing.selected[b * t..(b + 1) * t].to_vec(),
            };
            let counts = sub.counts(n);
            let f: Vec<f64> = counts
                .iter()
                .map(|c| *c as f64 / (self.cfg.active * t) as f64)
                .collect();
            let p = probs.slice_rows(b * t, (b + 1) * t)?.mean_axis(0)?;
            let term = p.mul(g.constant(Tensor::row(&f)))?.sum()?;
            total = Some(match total {
                Some(acc) => acc.add(term)?,
                None => term,
            });
        }
        total
            .expect("batch > 0")
            .scale(self.cfg.aux_weight * n as f64 / batch as f64)
    }

    /// Applies one balance-bias update from routed token counts.
    pub fn update_bias(&self, store: &mut ParamStore, counts: &[usize]) {
        if self.cfg.balance_bias {
            update_balance_bias(store.get_mut(self.bias).data_mut(), counts, self.cfg.bias_step);
        }
    }
}
