#![allow(dead_code)]

use helm_core::autodiff::{Graph, Tensor, Var};
use helm_core::lorentz::{self, Curvature, LorentzPoint};
use helm_core::Result;
pub mod grad;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn curv(k: f64) -> Curvature {
    Curvature::new(k).unwrap()
}

pub fn randn(rows: usize, cols: usize, std: f64, seed: u64) -> Tensor {
    Tensor::randn(rows, cols, std, &mut rng(seed))
}

pub fn random_point<R: Rng>(n: usize, std: f64, k: Curvature, rng: &mut R) -> LorentzPoint {
    let s: Vec<f64> = (0..n).map(|_| rng.random_range(-std..std)).collect();
    lorentz::lift(&s, k)
}

/// `x` reduced to a scalar by a fixed random projection, so every output
/// coordinate contributes to the gradient.
pub fn project<'g>(x: Var<'g>, seed: u64) -> Result<Var<'g>> {
    let c = randn(x.rows(), x.cols(), 1.0, seed);
    x.mul(x.graph().constant(c))?.sum()
}

/// Rows of `t` as Lorentz points.
pub fn points(t: &Tensor, k: Curvature) -> Vec<LorentzPoint> {
    (0..t.rows())
        .map(|r| LorentzPoint::from_ambient_unchecked(t.row_slice(r).to_vec(), k))
        .collect()
}

pub fn tensor_of(points: &[LorentzPoint]) -> Tensor {
    let cols = points[0].coords().len();
    let data = points.iter().flat_map(|p| p.coords().to_vec()).collect();
    Tensor::from_vec(points.len(), cols, data).unwrap()
}

pub fn lifted<'g>(g: &'g Graph, rows: &[LorentzPoint]) -> Var<'g> {
    g.constant(tensor_of(rows))
}

/// Deterministic English-like text: sentences from a small word grammar.
pub fn synthetic_corpus(bytes: usize, seed: u64) -> String {
    const SUBJECTS: &[&str] = &[
        "the cat", "a dog", "the old man", "my sister", "the teacher", "a small bird",
        "the farmer", "our neighbour", "the child", "a tall woman",
    ];
    const VERBS: &[&str] = &[
        "sees", "likes", "walks to", "reads about", "finds", "carries", "watches", "remembers",
    ];
    const OBJECTS: &[&str] = &[
        "the river", "a red apple", "the green hill", "an open window", "the long road",
        "a quiet house", "the morning train", "a wooden chair", "the letter", "the garden",
    ];
    const ENDS: &[&str] = &[".", " today.", " again.", " at night.", " with care."];
    let mut r = rng(seed);
    let mut out = String::with_capacity(bytes + 64);
    while out.len() < bytes {
        let s = SUBJECTS[r.random_range(0..SUBJECTS.len())];
        let v = VERBS[r.random_range(0..VERBS.len())];
        let o = OBJECTS[r.random_range(0..OBJECTS.len())];
        let e = ENDS[r.random_range(0..ENDS.len())];
        let mut first = s.chars();
        if let Some(c) = first.next() {
            out.push(c.to_ascii_uppercase());
            out.push_str(first.as_str());
        }
        out.push(' ');
        out.push_str(v);
        out.push(' ');
        out.push_str(o);
        out.push_str(e);
        out.push(if r.random_range(0..8) == 0 { '\n' } else { ' ' });
    }
    out.truncate(bytes);
    out
}

/// Operators exercised by [`closure_invocation`], in cycling order.
pub const CLOSURE_OPS: [&str; 8] = [
    "hlt", "residual", "rmsnorm", "activation", "concat", "attention", "hmla", "mice",
];

/// One randomized call of operator `case % 8` on points of a random
/// curvature in [-2, -0.1]; returns the largest output manifold violation.
pub fn closure_invocation(case: usize) -> Result<f64> {
    use helm_core::attention::{attend, causal_mask, Hmla, HmlaDims};
    use helm_core::autodiff::ParamStore;
    use helm_core::diagnostics::max_row_violation;
    use helm_core::layers::{self, Hlt};
    use helm_core::mice::{Mice, MiceConfig, Mixing};

    let mut r = rng(0xc10 + case as u64);
    let k = Curvature::new(r.random_range(-2.0..-0.1))?;
    let n = 2 * r.random_range(1..5usize);
    let rows = r.random_range(1..6usize);
    let std = [0.1, 1.0, 10.0][r.random_range(0..3usize)];
    let input = |r: &mut ChaCha8Rng, rows: usize, n: usize| -> Tensor {
        tensor_of(&(0..rows).map(|_| random_point(n, std, k, r)).collect::<Vec<_>>())
    };
    let g = Graph::new();
    let mut store = ParamStore::new();
    let x = g.constant(input(&mut r, rows, n));
    let y = match case % 8 {
        0 => {
            let out = r.random_range(1..9usize);
            let h = Hlt::init(&mut store, "h", n, out, k, &mut r);
            h.forward(&g, &store, x)?
        }
        1 => {
            let fx = g.constant(input(&mut r, rows, n));
            let (w1, w2) = (r.random_range(0.1..2.0), r.random_range(0.1..2.0));
            layers::residual(x, fx, w1, w2, k)?
        }
        2 => {
            let gain = Tensor::randn(1, n, 1.0, &mut r);
            layers::hyp_rmsnorm(x, g.constant(gain), 1e-20, k)?
        }
        3 => layers::hyp_silu(x, k)?,
        4 => {
            let m = r.random_range(1..5usize);
            let other = g.constant(input(&mut r, rows, m));
            layers::hyp_concat(&[x, other], k)?
        }
        5 => {
            let keys = g.constant(input(&mut r, rows, n));
            let vals = g.constant(input(&mut r, rows, n));
            let mask = causal_mask(rows, rows, 0, 0);
            attend(x, keys, vals, (n as f64).sqrt(), Some(&mask), k)?
        }
        6 => {
            let dims = HmlaDims {
                heads: 2,
                head_dim: n,
                q_latent: r.random_range(1..=n),
                kv_latent: r.random_range(1..=n),
                rope_dim: 2,
                reduced_up_projection: r.random_range(0..2) == 0,
            };
            let m = Hmla::init(&mut store, "m", n, dims, k, 10_000.0, None, &mut r)?;
            m.forward(&g, &store, x, 1, r.random_range(0..8), None)?
        }
        _ => {
            let cfg = MiceConfig {
                routed: 4,
                shared: 1,
                active: 2,
                routed_curvatures: None,
                shared_curvatures: None,
                bias_step: 0.001,
                aux_weight: 1e-3,
                mixing: if r.random_range(0..2) == 0 { Mixing::GateWeighted } else { Mixing::Unweighted },
                balance_bias: true,
            };
            let m = Mice::init(&mut store, "m", n, 2 * n, k, cfg, &mut r)?;
            m.forward(&g, &store, x, 1, None)?.y
        }
    };
    Ok(max_row_violation(&y.value(), k))
}

/// Minimum transport cost by enumerating every acyclic support pattern.
/// Each basic plan of the transportation polytope lives on a forest of the
/// supply/demand bipartite graph, so the optimum is among these.
pub fn brute_force_transport<T>(supply: &[T], demand: &[T], cost: &[Vec<T>]) -> Option<T>
where
    T: num_traits::Num + Copy + PartialOrd,
{
    let (m, n) = (supply.len(), demand.len());
    let cells = m * n;
    assert!(cells <= 20, "brute force is exponential");
    let mut best: Option<T> = None;
    for mask in 1u32..(1 << cells) {
        if mask.count_ones() as usize > m + n - 1 {
            continue;
        }
        if let Some(plan) = forest_plan(mask, supply, demand) {
            let total = plan
                .iter()
                .fold(T::zero(), |acc, &(i, j, f)| acc + f * cost[i][j]);
            if best.is_none_or(|b| total < b) {
                best = Some(total);
            }
        }
    }
    best
}

/// Peels leaves of the support forest; `None` if the support has a cycle
/// or the determined flows are negative or leave mass unbalanced.
fn forest_plan<T>(mask: u32, supply: &[T], demand: &[T]) -> Option<Vec<(usize, usize, T)>>
where
    T: num_traits::Num + Copy + PartialOrd,
{
    let (m, n) = (supply.len(), demand.len());
    let mut edges: Vec<(usize, usize)> = (0..m * n)
        .filter(|c| mask & (1 << c) != 0)
        .map(|c| (c / n, c % n))
        .collect();
    let mut rest_s = supply.to_vec();
    let mut rest_d = demand.to_vec();
    let mut plan = Vec::with_capacity(edges.len());
    while !edges.is_empty() {
        let degree_row = |i: usize, es: &[(usize, usize)]| es.iter().filter(|e| e.0 == i).count();
        let degree_col = |j: usize, es: &[(usize, usize)]| es.iter().filter(|e| e.1 == j).count();
        let leaf = edges.iter().position(|&(i, j)| degree_row(i, &edges) == 1 || degree_col(j, &edges) == 1)?;
        let (i, j) = edges.remove(leaf);
        let f = if degree_row(i, &edges) == 0 { rest_s[i] } else { rest_d[j] };
        if f < T::zero() {
            return None;
        }
        rest_s[i] = rest_s[i] - f;
        rest_d[j] = rest_d[j] - f;
        plan.push((i, j, f));
    }
    let balanced = rest_s.iter().chain(&rest_d).all(|v| *v == T::zero());
    balanced.then_some(plan)
}
