mod common;

use common::{brute_force_transport, rng};
use helm_core::ricci::{
    neighbor_measure, ollivier_ricci, transport_cost, w1, CurvatureReport, NeighborGraph,
};
use num_rational::Ratio;
use rand::Rng;

type Q = Ratio<i64>;

fn q(n: i64, d: i64) -> Q {
    Q::new(n, d)
}

/// Positive vectors of `parts` multiples of `1/total` summing to one.
fn compositions(total: i64, parts: usize) -> Vec<Vec<Q>> {
    if parts == 1 {
        return vec![vec![q(total, total)]];
    }
    let mut out = Vec::new();
    for first in 1..=total - parts as i64 + 1 {
        for rest in compositions_raw(total - first, parts - 1) {
            let mut v = vec![q(first, total)];
            v.extend(rest.iter().map(|&r| q(r, total)));
            out.push(v);
        }
    }
    out
}

fn compositions_raw(total: i64, parts: usize) -> Vec<Vec<i64>> {
    if parts == 1 {
        return vec![vec![total]];
    }
    (1..=total - parts as i64 + 1)
        .flat_map(|first| {
            compositions_raw(total - first, parts - 1).into_iter().map(move |mut r| {
                r.insert(0, first);
                r
            })
        })
        .collect()
}

#[test]
fn solver_equals_enumeration_on_all_small_supports() {
    let mut r = rng(77);
    let mut cases = 0;
    for m in 1..=4 {
        for n in 1..=4 {
            let costs: Vec<Vec<Vec<Q>>> = (0..6)
                .map(|_| {
                    (0..m)
                        .map(|_| (0..n).map(|_| Q::from_integer(r.random_range(0..5))).collect())
                        .collect()
                })
                .collect();
            for s in compositions(4, m) {
                for d in compositions(4, n) {
                    for c in &costs {
                        let exact = transport_cost(&s, &d, c).unwrap();
                        let brute = brute_force_transport(&s, &d, c).unwrap();
                        assert_eq!(exact, brute, "supply {s:?} demand {d:?} cost {c:?}");
                        cases += 1;
                    }
                }
            }
        }
    }
    assert_eq!(cases, 64 * 6);
}

#[test]
fn solver_handles_zero_masses_and_floats() {
    let s = [q(1, 2), q(0, 1), q(1, 2)];
    let d = [q(1, 3), q(2, 3)];
    let c = vec![
        vec![Q::from_integer(2), Q::from_integer(1)],
        vec![Q::from_integer(0), Q::from_integer(0)],
        vec![Q::from_integer(1), Q::from_integer(3)],
    ];
    let exact = transport_cost(&s, &d, &c).unwrap();
    assert_eq!(exact, brute_force_transport(&s, &d, &c).unwrap());
    assert_eq!(exact, q(4, 3));
    let sf: Vec<f64> = s.iter().map(|v| *v.numer() as f64 / *v.denom() as f64).collect();
    let df: Vec<f64> = d.iter().map(|v| *v.numer() as f64 / *v.denom() as f64).collect();
    let cf: Vec<Vec<f64>> = c.iter().map(|r| r.iter().map(|v| *v.numer() as f64).collect()).collect();
    assert!((transport_cost(&sf, &df, &cf).unwrap() - 4.0 / 3.0).abs() < 1e-12);
}

#[test]
fn graph_w1_equals_enumeration() {
    let mut r = rng(78);
    for _ in 0..200 {
        let nodes = r.random_range(3..8usize);
        let mut edges = Vec::new();
        for i in 1..nodes {
            edges.push((r.random_range(0..i), i));
        }
        for _ in 0..r.random_range(0..nodes) {
            let (a, b) = (r.random_range(0..nodes), r.random_range(0..nodes));
            if a != b {
                edges.push((a.min(b), a.max(b)));
            }
        }
        let g = NeighborGraph::from_edges(nodes, &edges).unwrap();
        for (i, j) in g.edges() {
            let (mi, mj) = (neighbor_measure::<Q>(&g, i).unwrap(), neighbor_measure::<Q>(&g, j).unwrap());
            if mi.support.len() > 4 || mj.support.len() > 4 {
                continue;
            }
            let cost: Vec<Vec<Q>> = mi
                .support
                .iter()
                .map(|&u| {
                    let hops = g.hops_from(u);
                    mj.support.iter().map(|&v| Q::from_integer(hops[v].unwrap() as i64)).collect()
                })
                .collect();
            let brute = brute_force_transport(&mi.mass, &mj.mass, &cost).unwrap();
            assert_eq!(w1(&g, &mi, &mj).unwrap(), brute);
            assert_eq!(ollivier_ricci::<Q>(&g, i, j).unwrap(), Q::from_integer(1) - brute);
        }
    }
}

fn graph(n: usize, edges: &[(usize, usize)]) -> NeighborGraph {
    NeighborGraph::from_edges(n, edges).unwrap()
}

fn cycle(n: usize) -> NeighborGraph {
    let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    graph(n, &edges)
}

#[test]
fn hand_derived_curvatures() {
    let zero = Q::from_integer(0);
    assert_eq!(ollivier_ricci::<Q>(&graph(2, &[(0, 1)]), 0, 1).unwrap(), zero);
    let path = graph(4, &[(0, 1), (1, 2), (2, 3)]);
    for (i, j) in path.edges() {
        assert_eq!(ollivier_ricci::<Q>(&path, i, j).unwrap(), zero);
    }
    let star = graph(4, &[(0, 1), (0, 2), (0, 3)]);
    assert_eq!(ollivier_ricci::<Q>(&star, 0, 2).unwrap(), zero);
    for n in [4, 5, 6] {
        assert_eq!(ollivier_ricci::<Q>(&cycle(n), 0, 1).unwrap(), zero, "C{n}");
    }
    assert_eq!(ollivier_ricci::<Q>(&cycle(3), 0, 1).unwrap(), q(1, 2));
    let k4: Vec<_> = (0..4).flat_map(|i| (i + 1..4).map(move |j| (i, j))).collect();
    let k4 = graph(4, &k4);
    for (i, j) in k4.edges() {
        assert_eq!(ollivier_ricci::<Q>(&k4, i, j).unwrap(), q(2, 3));
    }
    let double_star = graph(6, &[(0, 1), (0, 2), (0, 3), (1, 4), (1, 5)]);
    assert_eq!(ollivier_ricci::<Q>(&double_star, 0, 1).unwrap(), q(-2, 3));
}

#[test]
fn identical_embeddings_form_a_complete_graph() {
    let points = vec![vec![0.5, -1.0, 2.0]; 6];
    let report = CurvatureReport::from_points(&points, 5).unwrap();
    assert_eq!(report.edges.len(), 15);
    for e in &report.edges {
        assert!((e.kappa - 0.8).abs() < 1e-12);
    }
}

#[test]
fn distance_two_curvature() {
    // Non-adjacent pair on a path: neighbour measures are one hop apart.
    let path = graph(5, &[(0, 1), (1, 2), (2, 3), (3, 4)]);
    assert_eq!(ollivier_ricci::<Q>(&path, 1, 3).unwrap(), Q::from_integer(0));
    let k = ollivier_ricci::<f64>(&path, 0, 4).unwrap();
    assert!((k - 0.5).abs() < 1e-12);
}
