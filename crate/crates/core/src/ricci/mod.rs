//! Ollivier-Ricci curvature of k-nearest-neighbour graphs.

pub mod graph;
pub mod report;
pub mod transport;

use num_traits::Num;

pub use graph::NeighborGraph;
pub use report::{parse_embeddings, CurvatureReport, EdgeCurvature, Histogram};
pub use transport::transport_cost;

use crate::error::{Error, Result};

/// Probability mass on a set of nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure<T> {
    pub support: Vec<usize>,
    pub mass: Vec<T>,
}

impl<T: Num + Copy> DiscreteMeasure<T> {
    pub fn uniform(support: Vec<usize>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::EmptyInput("measure support"));
        }
        let n = support.iter().fold(T::zero(), |acc, _| acc + T::one());
        let w = T::one() / n;
        Ok(Self {
            mass: vec![w; support.len()],
            support,
        })
    }

    pub fn point(node: usize) -> Self {
        Self {
            support: vec![node],
            mass: vec![T::one()],
        }
    }
}

/// Uniform measure on the neighbours of `i`.
pub fn neighbor_measure<T: Num + Copy>(g: &NeighborGraph, i: usize) -> Result<DiscreteMeasure<T>> {
    if i >= g.nodes() {
        return Err(Error::IndexOutOfRange { index: i, len: g.nodes() });
    }
    if g.degree(i) == 0 {
        return Err(Error::InvalidArgument(format!("node {i} is isolated")));
    }
    DiscreteMeasure::uniform(g.neighbors(i).to_vec())
}

fn from_hops<T: Num + Copy>(h: usize) -> T {
    (0..h).fold(T::zero(), |acc, _| acc + T::one())
}

/// Exact 1-Wasserstein distance under the hop metric of `g`.
pub fn w1<T: Num + Copy + PartialOrd>(
    g: &NeighborGraph,
    mu: &DiscreteMeasure<T>,
    nu: &DiscreteMeasure<T>,
) -> Result<T> {
    let mut cost = Vec::with_capacity(mu.support.len());
    for &u in &mu.support {
        let hops = g.hops_from(u);
        let row = nu
            .support
            .iter()
            .map(|&v| hops[v].map(from_hops).ok_or(Error::Disconnected))
            .collect::<Result<Vec<T>>>()?;
        cost.push(row);
    }
    transport_cost(&mu.mass, &nu.mass, &cost)
}

/// `1 - W1(mu_i, mu_j) / d(i, j)` for distinct connected nodes.
pub fn ollivier_ricci<T: Num + Copy + PartialOrd>(g: &NeighborGraph, i: usize, j: usize) -> Result<T> {
    if i == j {
        return Err(Error::InvalidArgument("curvature needs two distinct nodes".into()));
    }
    let d = g.hops_from(i)[j].ok_or(Error::Disconnected)?;
    let mi = neighbor_measure::<T>(g, i)?;
    let mj = neighbor_measure::<T>(g, j)?;
    Ok(T::one() - w1(g, &mi, &mj)? / from_hops::<T>(d))
}
