//! Exact 1-Wasserstein distance via successive shortest augmenting paths.

use num_traits::Num;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct Arc<T> {
    to: usize,
    cap: T,
    cost: T,
}

struct FlowNet<T> {
    arcs: Vec<Arc<T>>,
    out: Vec<Vec<usize>>,
}

impl<T: Num + Copy + PartialOrd> FlowNet<T> {
    fn new(n: usize) -> Self {
        Self {
            arcs: Vec::new(),
            out: vec![Vec::new(); n],
        }
    }

    fn add(&mut self, from: usize, to: usize, cap: T, cost: T) {
        self.out[from].push(self.arcs.len());
        self.arcs.push(Arc { to, cap, cost });
        self.out[to].push(self.arcs.len());
        self.arcs.push(Arc {
            to: from,
            cap: T::zero(),
            cost: T::zero() - cost,
        });
    }

    /// Cheapest path with spare capacity, by Bellman-Ford (residual costs
    /// can be negative). Returns the arc ids along the path.
    fn shortest_path(&self, s: usize, t: usize) -> Option<Vec<usize>> {
        let n = self.out.len();
        let mut dist: Vec<Option<T>> = vec![None; n];
        let mut via: Vec<Option<usize>> = vec![None; n];
        dist[s] = Some(T::zero());
        for _ in 0..n {
            let mut changed = false;
            for u in 0..n {
                let Some(du) = dist[u] else { continue };
                for &a in &self.out[u] {
                    let arc = &self.arcs[a];
                    if !(arc.cap > T::zero()) {
                        continue;
                    }
                    let nd = du + arc.cost;
                    if dist[arc.to].is_none_or(|d| nd < d) {
                        dist[arc.to] = Some(nd);
                        via[arc.to] = Some(a);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        dist[t]?;
        let mut path = Vec::new();
        let mut v = t;
        while v != s {
            let a = via[v].expect("reached nodes have a parent");
            path.push(a);
            v = self.arcs[a ^ 1].to;
        }
        path.reverse();
        Some(path)
    }
}

/// Minimum cost of moving `supply` onto `demand` where moving one unit from
/// `i` to `j` costs `cost[i][j]`. Both masses must have equal totals.
pub fn transport_cost<T: Num + Copy + PartialOrd>(
    supply: &[T],
    demand: &[T],
    cost: &[Vec<T>],
) -> Result<T> {
    let (m, n) = (supply.len(), demand.len());
    if m == 0 || n == 0 {
        return Err(Error::EmptyInput("transport marginals"));
    }
    if cost.len() != m || cost.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidArgument(format!("cost matrix must be {m}x{n}")));
    }
    let zero = T::zero();
    if supply.iter().chain(demand).any(|v| *v < zero) {
        return Err(Error::InvalidArgument("negative mass".into()));
    }
    let total = supply.iter().fold(zero, |a, b| a + *b);
    let (s, t) = (m + n, m + n + 1);
    let mut net = FlowNet::new(m + n + 2);
    for (i, &a) in supply.iter().enumerate() {
        net.add(s, i, a, zero);
        for (j, &c) in cost[i].iter().enumerate() {
            net.add(i, m + j, total, c);
        }
    }
    for (j, &b) in demand.iter().enumerate() {
        net.add(m + j, t, b, zero);
    }
    let mut sent = zero;
    let mut value = zero;
    let limit = 4 * (m * n + m + n);
    for _ in 0..limit {
        if !(sent < total) {
            break;
        }
        let Some(path) = net.shortest_path(s, t) else { break };
        let mut push = total - sent;
        for &a in &path {
            if net.arcs[a].cap < push {
                push = net.arcs[a].cap;
            }
        }
        for &a in &path {
            net.arcs[a].cap = net.arcs[a].cap - push;
            net.arcs[a ^ 1].cap = net.arcs[a ^ 1].cap + push;
            value = value + push * net.arcs[a].cost;
        }
        sent = sent + push;
    }
    Ok(value)
}
