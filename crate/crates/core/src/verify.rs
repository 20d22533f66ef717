//! Numerical checks of the positional-encoding and normalisation guarantees.

use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::attention::{attention_weights, causal_mask, hope, HopeConfig};
use crate::autodiff::{Graph, Tensor};
use crate::error::Result;
use crate::layers;
use crate::lorentz::{lift, sq_distance, Curvature, LorentzPoint};
use crate::model::component_rng;

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub prop: u8,
    pub name: String,
    pub observed: f64,
    pub tol: f64,
    pub pass: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] prop {} {}: observed {:.3e}, tolerance {:.3e}",
            if self.pass { "PASS" } else { "FAIL" },
            self.prop,
            self.name,
            self.observed,
            self.tol
        )?;
        if !self.detail.is_empty() {
            write!(f, " ({})", self.detail)?;
        }
        Ok(())
    }
}

fn random_point(rng: &mut ChaCha8Rng, dim: usize, std: f64, k: Curvature) -> LorentzPoint {
    let s: Vec<f64> = (0..dim)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    lift(&s, k)
}

fn seeded(prop: u64) -> ChaCha8Rng {
    component_rng(0x5eed, 100 + prop)
}

/// Negative squared distance after encoding `q` at `a` and `k` at `b`.
fn score(q: &LorentzPoint, a: usize, k: &LorentzPoint, b: usize, cfg: &HopeConfig) -> Result<f64> {
    Ok(-sq_distance(&hope(q, a, cfg)?, &hope(k, b, cfg)?)?)
}

/// Shifting both positions leaves the encoded score unchanged.
pub fn prop1(samples: usize, shifts: &[usize]) -> Result<Check> {
    let mut rng = seeded(1);
    let cfg = HopeConfig::new(16, crate::attention::hope::DEFAULT_BASE)?;
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let k = Curvature::new(-rng.random_range(0.1..2.0))?;
        let q = random_point(&mut rng, 16, 1.0, k);
        let key = random_point(&mut rng, 16, 1.0, k);
        let a = rng.random_range(0..512);
        let b = rng.random_range(0..512);
        let base = score(&q, a, &key, b, &cfg)?;
        for &s in shifts {
            let shifted = score(&q, a + s, &key, b + s, &cfg)?;
            worst = worst.max((shifted - base).abs());
        }
    }
    let tol = 1e-9;
    Ok(Check {
        prop: 1,
        name: "shift invariance".into(),
        observed: worst,
        tol,
        pass: worst <= tol,
        detail: format!("{samples} samples, shifts {shifts:?}"),
    })
}

/// `sum_k |S_k|` with `S_k` the partial sums of `exp(i r theta_l)`.
pub fn decay_term(r: usize, cfg: &HopeConfig) -> f64 {
    let (mut re, mut im) = (0.0, 0.0);
    let mut total = 0.0;
    for th in cfg.thetas() {
        re += (r as f64 * th).cos();
        im += (r as f64 * th).sin();
        total += re.hypot(im);
    }
    total
}

/// Position-free factor `max_k |A_{k+1} - A_k|` of the decay bound, where
/// `A_k` pairs the k-th rotation blocks of `a` and `b` as complex numbers.
pub fn bound_factor(a: &[f64], b: &[f64]) -> f64 {
    let m = a.len() / 2;
    let block = |k: usize| -> (f64, f64) {
        if k == m {
            return (0.0, 0.0);
        }
        let (ar, ai) = (a[2 * k], a[2 * k + 1]);
        let (br, bi) = (b[2 * k], -b[2 * k + 1]);
        (ar * br - ai * bi, ar * bi + ai * br)
    };
    (0..m)
        .map(|k| {
            let (x0, y0) = block(k);
            let (x1, y1) = block(k + 1);
            (x1 - x0).hypot(y1 - y0)
        })
        .fold(0.0, f64::max)
}

/// Windowed means of the decay bound over `r = 1..=max_r` never increase,
/// and the bound holds for every sampled head and distance.
pub fn prop2(heads: usize, max_r: usize, window: usize) -> Result<Vec<Check>> {
    let dim = 64;
    let cfg = HopeConfig::new(dim, crate::attention::hope::DEFAULT_BASE)?;
    let k = Curvature::UNIT;
    let mut rng = seeded(2);
    let terms: Vec<f64> = (1..=max_r).map(|r| decay_term(r, &cfg)).collect();
    let mut worst_rise = f64::NEG_INFINITY;
    let mut worst_slack = f64::NEG_INFINITY;
    for _ in 0..heads {
        let q = random_point(&mut rng, dim, 1.0, k);
        let key = random_point(&mut rng, dim, 1.0, k);
        let f = bound_factor(q.space(), key.space());
        let means: Vec<f64> = terms
            .chunks(window)
            .map(|c| f * c.iter().sum::<f64>() / c.len() as f64)
            .collect();
        for w in means.windows(2) {
            worst_rise = worst_rise.max(w[1] - w[0]);
        }
        let offset = -2.0 * k.inv() - 2.0 * q.time() * key.time();
        for r in 1..=max_r {
            let b = rng.random_range(0..256);
            let s = score(&q, b + r, &key, b, &cfg)?;
            let bound = offset + 2.0 * f * terms[r - 1];
            worst_slack = worst_slack.max(s - bound);
        }
    }
    let first = terms[..window.min(terms.len())].iter().sum::<f64>() / window as f64;
    let trend: Vec<String> = terms
        .chunks(window)
        .map(|c| format!("{:.2}", c.iter().sum::<f64>() / c.len() as f64))
        .collect();
    Ok(vec![
        Check {
            prop: 2,
            name: "windowed decay is non-increasing".into(),
            observed: worst_rise.max(0.0),
            tol: 0.0,
            pass: worst_rise <= 0.0,
            detail: format!(
                "{heads} heads, d={dim}, window {window}, sum|S| means [{}], first {first:.2}",
                trend.join(", ")
            ),
        },
        Check {
            prop: 2,
            name: "score below decay bound".into(),
            observed: worst_slack.max(0.0),
            tol: 1e-9,
            pass: worst_slack <= 1e-9,
            detail: format!("largest score minus bound {worst_slack:.3e}"),
        },
    ])
}

/// Attention weights of one query row over causal keys, scores unscaled.
fn weights(qs: &[LorentzPoint], keys: &[LorentzPoint], k: Curvature) -> Result<Tensor> {
    let g = Graph::new();
    let width = qs[0].coords().len();
    let stack = |ps: &[LorentzPoint]| {
        Tensor::from_vec(ps.len(), width, ps.iter().flat_map(|p| p.coords().to_vec()).collect())
    };
    let q = g.constant(stack(qs)?);
    let kv = g.constant(stack(keys)?);
    let mask = causal_mask(qs.len(), keys.len(), 0, 0);
    Ok((*attention_weights(q, kv, 1.0, Some(&mask), k)?.value()).clone())
}

/// Index of the largest weight in the last row of `w`.
fn argmax_last(w: &Tensor, len: usize) -> usize {
    let row = &w.row_slice(w.rows() - 1)[..len];
    (0..len).fold(0, |best, j| if row[j] > row[best] { j } else { best })
}

/// Keys `hope(psi, r)` make the last query attend most at distance `r`.
pub fn prop3(distances: &[usize], seeds: u64) -> Result<Vec<Check>> {
    let dim = 16;
    let cfg = HopeConfig::new(dim, crate::attention::hope::DEFAULT_BASE)?;
    let t = 32;
    let mut out = Vec::new();
    for &r in distances {
        let mut hits = 0;
        let mut seen = Vec::new();
        for seed in 0..seeds {
            let mut rng = component_rng(seed, 103);
            let k = Curvature::new(-rng.random_range(0.1..2.0))?;
            let psi = random_point(&mut rng, dim, 1.0, k);
            let shifted = hope(&psi, r, &cfg)?;
            let qs = (0..t).map(|i| hope(&psi, i, &cfg)).collect::<Result<Vec<_>>>()?;
            let keys = (0..t).map(|j| hope(&shifted, j, &cfg)).collect::<Result<Vec<_>>>()?;
            let w = weights(&qs, &keys, k)?;
            let dist = t - 1 - argmax_last(&w, t);
            if dist == r {
                hits += 1;
            } else if seen.len() < 3 {
                seen.push(dist);
            }
        }
        out.push(Check {
            prop: 3,
            name: format!("argmax at distance {r}"),
            observed: hits as f64,
            tol: seeds as f64,
            pass: hits as u64 == seeds,
            detail: if seen.is_empty() {
                format!("{hits}/{seeds} seeds peak at distance {r}")
            } else {
                format!("{hits}/{seeds} seeds; misses at {seen:?}")
            },
        });
    }
    Ok(out)
}

/// Point whose space part spreads `sq_norm` evenly over the three fastest
/// rotation blocks of a 16-dimensional head.
fn pattern_psi(sq_norm: f64, k: Curvature) -> LorentzPoint {
    let mut s = vec![0.0; 16];
    let per = (sq_norm / 3.0).sqrt();
    for b in 0..3 {
        s[2 * b] = per * 0.6;
        s[2 * b + 1] = per * 0.8;
    }
    lift(&s, k)
}

/// Smallest diagonal and sub-diagonal weight for the two constructions.
pub fn pattern_weights(sq_norm: f64, t: usize) -> Result<(f64, f64)> {
    let k = Curvature::UNIT;
    let cfg = HopeConfig::new(16, crate::attention::hope::DEFAULT_BASE)?;
    let psi = pattern_psi(sq_norm, k);
    let qs = (0..t).map(|i| hope(&psi, i, &cfg)).collect::<Result<Vec<_>>>()?;
    let w = weights(&qs, &qs, k)?;
    let diag = (0..t).map(|i| w.get(i, i)).fold(1.0, f64::min);
    let step = hope(&psi, 1, &cfg)?;
    let keys = (0..t).map(|j| hope(&step, j, &cfg)).collect::<Result<Vec<_>>>()?;
    let w = weights(&qs, &keys, k)?;
    let off = (1..t).map(|i| w.get(i, i - 1)).fold(1.0, f64::min);
    Ok((diag, off))
}

/// Diagonal and previous-token patterns reach weight 0.99 at squared norm 16
/// and sharpen as the norm grows.
pub fn prop4() -> Result<Vec<Check>> {
    let t = 32;
    let (diag, off) = pattern_weights(16.0, t)?;
    let sharpen: Vec<(f64, f64)> = [1.0f64, 4.0, 16.0]
        .iter()
        .map(|n| pattern_weights(n * n, t))
        .collect::<Result<_>>()?;
    let monotone = sharpen.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 > w[0].1);
    Ok(vec![
        Check {
            prop: 4,
            name: "diagonal pattern".into(),
            observed: diag,
            tol: 0.99,
            pass: diag >= 0.99,
            detail: format!("min nu(i,i) over {t} tokens"),
        },
        Check {
            prop: 4,
            name: "previous-token pattern".into(),
            observed: off,
            tol: 0.99,
            pass: off >= 0.99,
            detail: format!("min nu(i,i-1) over {t} tokens"),
        },
        Check {
            prop: 4,
            name: "patterns sharpen with norm".into(),
            observed: if monotone { 1.0 } else { 0.0 },
            tol: 1.0,
            pass: monotone,
            detail: format!(
                "norms 1, 4, 16: diag {:?}, off {:?}",
                sharpen.iter().map(|p| format!("{:.5}", p.0)).collect::<Vec<_>>(),
                sharpen.iter().map(|p| format!("{:.5}", p.1)).collect::<Vec<_>>()
            ),
        },
    ])
}

/// Output and gain gradient of RMSNorm for space parts scaled by `delta`.
fn rmsnorm_response(space: &Tensor, probe: &Tensor, delta: f64, k: Curvature) -> Result<(Tensor, Vec<f64>)> {
    let g = Graph::new();
    let mut scaled = space.clone();
    scaled.data_mut().iter_mut().for_each(|v| *v *= delta);
    let x = layers::lift(g.constant(scaled), k)?;
    let gain = g.variable(Tensor::ones(1, space.cols()));
    let y = layers::hyp_rmsnorm(x, gain, crate::layers::RMS_EPS, k)?;
    let loss = layers::space(y)?.mul(g.constant(probe.clone()))?.sum()?;
    let value = (*y.value()).clone();
    let grads = g.backward(loss)?;
    let dg = grads
        .wrt(gain)
        .ok_or_else(|| crate::Error::MissingGradient("gain".into()))?;
    Ok((value, dg.to_vec()))
}

/// RMSNorm output and gain gradients ignore input scaling.
pub fn prop5(scalings: &[f64]) -> Result<Vec<Check>> {
    let mut rng = seeded(5);
    let k = Curvature::new(-0.7)?;
    let (rows, dim) = (8, 16);
    let gauss = |rng: &mut ChaCha8Rng, n: usize, std: f64| -> Vec<f64> {
        (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
    };
    let space = Tensor::from_vec(rows, dim, gauss(&mut rng, rows * dim, 3.0))?;
    let probe = Tensor::from_vec(rows, dim, gauss(&mut rng, rows * dim, 1.0))?;
    let (y0, g0) = rmsnorm_response(&space, &probe, 1.0, k)?;
    let norm0 = g0.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut out = Vec::new();
    for &delta in scalings {
        let (y, gr) = rmsnorm_response(&space, &probe, delta, k)?;
        let fwd = y.max_abs_diff(&y0);
        let diff = g0.iter().zip(&gr).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let rel = diff / norm0;
        out.push(Check {
            prop: 5,
            name: format!("forward invariance at scale {delta:e}"),
            observed: fwd,
            tol: 1e-9,
            pass: fwd <= 1e-9,
            detail: "max abs output difference".into(),
        });
        out.push(Check {
            prop: 5,
            name: format!("gain-gradient invariance at scale {delta:e}"),
            observed: rel,
            tol: 1e-6,
            pass: rel <= 1e-6,
            detail: "relative gradient difference".into(),
        });
    }
    Ok(out)
}

/// Default settings of every check for `prop` (1 to 5).
pub fn run(prop: u8) -> Result<Vec<Check>> {
    match prop {
        1 => Ok(vec![prop1(1000, &[1, 7, 100])?]),
        2 => prop2(20, 256, 64),
        3 => prop3(&(1..=8).collect::<Vec<_>>(), 100),
        4 => prop4(),
        5 => prop5(&[1e-3, 1e3, 1e-2, 1e2]),
        _ => Err(crate::Error::InvalidArgument(format!("no proposition {prop}; choose 1 to 5"))),
    }
}

pub fn run_all() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for p in 1..=5 {
        out.extend(run(p)?);
    }
    Ok(out)
}
