use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};
use crate::layers;
use crate::lorentz::LorentzPoint;

pub const DEFAULT_BASE: f64 = 10_000.0;

/// Rotary schedule over a space part of even dimension `head_dim`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HopeConfig {
    pub head_dim: usize,
    pub base: f64,
}

impl HopeConfig {
    pub fn new(head_dim: usize, base: f64) -> Result<Self> {
        if head_dim == 0 || head_dim % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "rotary dimension must be even and positive, got {head_dim}"
            )));
        }
        if !(base.is_finite() && base > 1.0) {
            return Err(Error::InvalidArgument(format!("rotary base must exceed 1, got {base}")));
        }
        Ok(Self { head_dim, base })
    }

    /// `theta_l = base^(-2l/d)` for `l = 0 .. d/2`.
    pub fn thetas(&self) -> Vec<f64> {
        let d = self.head_dim as f64;
        (0..self.head_dim / 2)
            .map(|l| self.base.powf(-2.0 * l as f64 / d))
            .collect()
    }

    /// Cosine and sine tables, one row per entry of `positions`.
    pub fn tables(&self, positions: &[usize]) -> (Rc<Tensor>, Rc<Tensor>) {
        let thetas = self.thetas();
        let half = thetas.len();
        let mut cos = Tensor::zeros(positions.len(), half);
        let mut sin = Tensor::zeros(positions.len(), half);
        for (r, &p) in positions.iter().enumerate() {
            for (l, th) in thetas.iter().enumerate() {
                let a = p as f64 * th;
                cos.set(r, l, a.cos());
                sin.set(r, l, a.sin());
            }
        }
        (Rc::new(cos), Rc::new(sin))
    }
}

/// Rotates the space part of row `r` by position `positions[r]`; the time
/// column is passed through untouched.
pub fn hope_rows<'g>(x: Var<'g>, positions: &[usize], cfg: &HopeConfig) -> Result<Var<'g>> {
    if x.cols() != cfg.head_dim + 1 {
        return Err(Error::DimensionMismatch {
            expected: cfg.head_dim + 1,
            actual: x.cols(),
        });
    }
    if x.rows() != positions.len() {
        return Err(Error::DimensionMismatch {
            expected: x.rows(),
            actual: positions.len(),
        });
    }
    let (cos, sin) = cfg.tables(positions);
    let time = x.slice_cols(0, 1)?;
    let rotated = layers::space(x)?.rotate_pairs(cos, sin)?;
    x.graph().concat_cols(&[time, rotated])
}

/// Single-point rotary encoding at position `i`.
pub fn hope(z: &LorentzPoint, i: usize, cfg: &HopeConfig) -> Result<LorentzPoint> {
    if z.dim() != cfg.head_dim {
        return Err(Error::DimensionMismatch {
            expected: cfg.head_dim,
            actual: z.dim(),
        });
    }
    let s = z.space();
    let mut out = Vec::with_capacity(s.len() + 1);
    out.push(z.time());
    for (l, th) in cfg.thetas().iter().enumerate() {
        let a = i as f64 * th;
        let (c, sn) = (a.cos(), a.sin());
        let (x0, x1) = (s[2 * l], s[2 * l + 1]);
        out.push(c * x0 - sn * x1);
        out.push(sn * x0 + c * x1);
    }
    Ok(LorentzPoint::from_ambient_unchecked(out, z.curvature()))
}
