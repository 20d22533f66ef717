//! Final-layer norm statistics for groups of words.

use std::fmt::Write as _;

use super::network::Model;
use super::tokenizer::{encode, BOS};
use crate::autodiff::Graph;
use crate::error::{Error, Result};

/// A named list of words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordGroup {
    pub name: String,
    pub words: Vec<String>,
}

/// Parses lines of the form `group: word, word`. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_groups(text: &str) -> Result<Vec<WordGroup>> {
    let mut groups = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse = |message: &str| Error::Parse {
            line: i + 1,
            message: message.to_string(),
        };
        let (name, rest) = line.split_once(':').ok_or_else(|| parse("expected `group: words`"))?;
        let name = name.trim();
        if name.is_empty() {
            return Err(parse("empty group name"));
        }
        let words: Vec<String> = rest
            .split(',')
            .map(str::trim)
            .filter(|w| !w.is_empty())
            .map(String::from)
            .collect();
        if words.is_empty() {
            return Err(parse("group has no words"));
        }
        groups.push(WordGroup {
            name: name.to_string(),
            words,
        });
    }
    Ok(groups)
}

/// Mean space norm of the last decoder block's output over the word's byte
/// positions, with the word fed after `BOS`.
pub fn word_norm(model: &Model, word: &str) -> Result<f64> {
    let mut ids = vec![BOS];
    ids.extend(encode(word));
    let g = Graph::new();
    let h = model.forward(&g, &ids, 1, 0, None, None)?.hidden.value();
    let n = ids.len() - 1;
    let total: f64 = (1..ids.len())
        .map(|r| h.row_slice(r)[1..].iter().map(|v| v * v).sum::<f64>().sqrt())
        .sum();
    Ok(total / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    pub group: String,
    pub avg_norm: f64,
    pub min: f64,
    pub max: f64,
}

pub fn norm_probe(model: &Model, groups: &[WordGroup]) -> Result<Vec<GroupStats>> {
    groups
        .iter()
        .map(|grp| {
            let norms = grp
                .words
                .iter()
                .map(|w| word_norm(model, w))
                .collect::<Result<Vec<_>>>()?;
            Ok(GroupStats {
                group: grp.name.clone(),
                avg_norm: norms.iter().sum::<f64>() / norms.len() as f64,
                min: norms.iter().copied().fold(f64::INFINITY, f64::min),
                max: norms.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            })
        })
        .collect()
}

pub fn stats_csv(stats: &[GroupStats]) -> String {
    let mut out = String::from("group,avg_norm,min,max\n");
    for s in stats {
        writeln!(out, "{},{:.6},{:.6},{:.6}", s.group, s.avg_norm, s.min, s.max).unwrap();
    }
    out
}
