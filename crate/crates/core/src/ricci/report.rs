use std::fmt::{self, Write as _};

use rayon::prelude::*;

use super::{ollivier_ricci, NeighborGraph};
use crate::error::{Error, Result};

/// One vector per line, components separated by whitespace. Blank lines are
/// skipped; every vector must have the same length.
pub fn parse_embeddings(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        line: i + 1,
                        message: format!("not a finite number: {tok:?}"),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected {} components, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput("embeddings"));
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeCurvature {
    pub i: usize,
    pub j: usize,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `(bin_lo, bin_hi, count)`.
    pub bins: Vec<(f64, f64, usize)>,
}

impl Histogram {
    /// Equal-width bins over the observed range; a degenerate range gives a
    /// single bin.
    pub fn new(values: &[f64], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidArgument("bins must be positive".into()));
        }
        if values.is_empty() {
            return Ok(Self { bins: Vec::new() });
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo == hi {
            return Ok(Self {
                bins: vec![(lo, hi, values.len())],
            });
        }
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins];
        for v in values {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        Ok(Self {
            bins: counts
                .into_iter()
                .enumerate()
                .map(|(b, c)| {
                    let blo = lo + b as f64 * width;
                    let bhi = if b + 1 == bins { hi } else { lo + (b + 1) as f64 * width };
                    (blo, bhi, c)
                })
                .collect(),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for (lo, hi, c) in &self.bins {
            writeln!(out, "{lo:.6},{hi:.6},{c}").unwrap();
        }
        out
    }
}

/// Curvature of every edge of a k-nearest-neighbour graph.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureReport {
    pub nodes: usize,
    pub k: usize,
    pub edges: Vec<EdgeCurvature>,
    /// Edges whose curvature could not be computed.
    pub skipped: Vec<(usize, usize)>,
}

impl CurvatureReport {
    pub fn from_points(points: &[Vec<f64>], k: usize) -> Result<Self> {
        let g = NeighborGraph::knn(points, k)?;
        Ok(Self::from_graph(&g, k))
    }

    pub fn from_graph(g: &NeighborGraph, k: usize) -> Self {
        let results: Vec<((usize, usize), Result<f64>)> = g
            .edges()
            .into_par_iter()
            .map(|(i, j)| ((i, j), ollivier_ricci::<f64>(g, i, j)))
            .collect();
        let mut edges = Vec::with_capacity(results.len());
        let mut skipped = Vec::new();
        for ((i, j), r) in results {
            match r {
                Ok(kappa) => edges.push(EdgeCurvature { i, j, kappa }),
                Err(_) => skipped.push((i, j)),
            }
        }
        Self {
            nodes: g.nodes(),
            k,
            edges,
            skipped,
        }
    }

    pub fn kappas(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.kappa).collect()
    }

    pub fn edges_csv(&self) -> String {
        let mut out = String::from("i,j,kappa\n");
        for e in &self.edges {
            writeln!(out, "{},{},{}", e.i, e.j, e.kappa).unwrap();
        }
        out
    }

    pub fn histogram(&self, bins: usize) -> Result<Histogram> {
        Histogram::new(&self.kappas(), bins)
    }

    pub fn summary(&self) -> Summary {
        let k = self.kappas();
        let n = k.len();
        Summary {
            edges: n,
            mean: if n > 0 { k.iter().sum::<f64>() / n as f64 } else { f64::NAN },
            min: k.iter().copied().fold(f64::INFINITY, f64::min),
            max: k.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            fraction_negative: if n > 0 {
                k.iter().filter(|v| **v < 0.0).count() as f64 / n as f64
            } else {
                0.0
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub edges: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub fraction_negative: f64,
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "edges={} mean={:.6} min={:.6} max={:.6} fraction_negative={:.6}",
            self.edges, self.mean, self.min, self.max, self.fraction_negative
        )
    }
}
