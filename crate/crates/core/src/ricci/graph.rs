use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Undirected graph without self-loops; neighbour lists are sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborGraph {
    adj: Vec<Vec<usize>>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl NeighborGraph {
    pub fn from_edges(nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = vec![Vec::new(); nodes];
        for &(i, j) in edges {
            for v in [i, j] {
                if v >= nodes {
                    return Err(Error::IndexOutOfRange { index: v, len: nodes });
                }
            }
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        Ok(Self { adj })
    }

    /// Symmetrised k-nearest-neighbour graph under Euclidean distance;
    /// equal distances prefer the lower index.
    pub fn knn(points: &[Vec<f64>], k: usize) -> Result<Self> {
        let n = points.len();
        if k == 0 || k >= n {
            return Err(Error::InvalidArgument(format!(
                "k must satisfy 1 <= k < N, got k={k}, N={n}"
            )));
        }
        let d = points[0].len();
        if let Some(p) = points.iter().find(|p| p.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: p.len(),
            });
        }
        let mut edges = Vec::with_capacity(n * k);
        for (i, p) in points.iter().enumerate() {
            let mut others: Vec<(f64, usize)> = points
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(j, q)| (sq_dist(p, q), j))
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            edges.extend(others[..k].iter().map(|&(_, j)| (i, j)));
        }
        Self::from_edges(n, &edges)
    }

    pub fn nodes(&self) -> usize {
        self.adj.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i].binary_search(&j).is_ok()
    }

    /// Each edge once as `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, a) in self.adj.iter().enumerate() {
            out.extend(a.iter().filter(|&&j| j > i).map(|&j| (i, j)));
        }
        out
    }

    /// Hop counts from `src`; `None` for unreachable nodes.
    pub fn hops_from(&self, src: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.nodes()];
        dist[src] = Some(0);
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].expect("queued nodes are reached");
            for &v in &self.adj[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }
}
