//! Rotary encoding and Lorentzian attention.

pub mod cache;
pub mod hmla;
pub mod hope;
pub mod self_attention;

pub use cache::{kv_cache_report, KvCache, KvReport, KvReportRow, LayerCache};
pub use hmla::{Hmla, HmlaDims};
pub use hope::{hope, hope_rows, HopeConfig};
pub use self_attention::SelfAttention;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::layers;
use crate::lorentz::Curvature;

/// `mask[i * s + j]` is true when key `j` (absolute position `k_start + j`)
/// lies after query `i` (absolute position `q_start + i`).
pub fn causal_mask(t: usize, s: usize, q_start: usize, k_start: usize) -> Vec<bool> {
    let mut mask = vec![false; t * s];
    for i in 0..t {
        for j in 0..s {
            mask[i * s + j] = k_start + j > q_start + i;
        }
    }
    mask
}

/// Softmax over `-d_L^2(q_i, k_j) / scale`, shape `[T, S]`.
pub fn attention_weights<'g>(
    q: Var<'g>,
    keys: Var<'g>,
    scale: f64,
    mask: Option<&[bool]>,
    k: Curvature,
) -> Result<Var<'g>> {
    if q.cols() != keys.cols() {
        return Err(Error::ShapeMismatch {
            op: "attention",
            left: q.shape(),
            right: keys.shape(),
        });
    }
    // -d^2 = 2<q,k>_L - 2/K
    let scores = layers::minkowski_matmul(q, keys)?
        .scale(2.0 / scale)?
        .add_scalar(-2.0 * k.inv() / scale)?;
    let none;
    let mask = match mask {
        Some(m) => m,
        None => {
            none = vec![false; q.rows() * keys.rows()];
            &none
        }
    };
    scores.masked_softmax(mask)
}

/// Attention output rows: centroid of `values` under the attention weights.
pub fn attend<'g>(
    q: Var<'g>,
    keys: Var<'g>,
    values: Var<'g>,
    scale: f64,
    mask: Option<&[bool]>,
    k: Curvature,
) -> Result<Var<'g>> {
    let w = attention_weights(q, keys, scale, mask, k)?;
    layers::centroid(w, values, k)
}

/// Position of every row when `batch` equal-length sequences are stacked.
pub(crate) fn row_positions(rows: usize, batch: usize, start: usize) -> Result<Vec<usize>> {
    if batch == 0 || rows % batch != 0 {
        return Err(Error::InvalidArgument(format!(
            "{rows} rows do not split into {batch} sequences"
        )));
    }
    let t = rows / batch;
    Ok((0..rows).map(|r| start + r % t).collect())
}
