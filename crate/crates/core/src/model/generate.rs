//! Greedy decoding.

use super::network::Model;
use super::tokenizer::BOS;
use crate::autodiff::{Graph, Tensor};
use crate::error::{Error, Result};

fn argmax_last(logits: &Tensor) -> u32 {
    let row = logits.row_slice(logits.rows() - 1);
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best as u32
}

/// Greedily extends `BOS + prompt` by up to `n` tokens and returns the new
/// tokens. Decoding stops early once the context reaches `seq_len`. With
/// `cached` each step feeds only the newest token through a key/value cache.
pub fn generate(model: &Model, prompt: &[u32], n: usize, cached: bool) -> Result<Vec<u32>> {
    let t_max = model.cfg.seq_len;
    let mut seq = Vec::with_capacity(prompt.len() + 1 + n);
    seq.push(BOS);
    seq.extend_from_slice(prompt);
    if seq.len() > t_max {
        return Err(Error::InvalidArgument(format!(
            "prompt of {} tokens plus BOS exceeds seq_len {t_max}",
            prompt.len()
        )));
    }
    let mut out = Vec::with_capacity(n);
    let mut cache = cached.then(|| model.new_cache());
    let mut fed = 0;
    while out.len() < n {
        let g = Graph::new();
        let next = match cache.as_mut() {
            Some(c) => {
                let f = model.forward(&g, &seq[fed..], 1, fed, Some(c), None)?;
                fed = seq.len();
                argmax_last(&f.logits.value())
            }
            None => argmax_last(&model.forward(&g, &seq, 1, 0, None, None)?.logits.value()),
        };
        out.push(next);
        if seq.len() == t_max {
            break;
        }
        seq.push(next);
    }
    Ok(out)
}
