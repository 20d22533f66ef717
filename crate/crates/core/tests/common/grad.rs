use super::{curv, project, randn, rng};
use helm_core::attention::{attend, HmlaDims, Hmla, SelfAttention};
use helm_core::autodiff::check::{check_gradients, check_param_gradients, FD_STEP};
use helm_core::autodiff::{Graph, ParamStore, Tensor};
use helm_core::layers::{self, Hffn, Hlt, RmsNorm};
use helm_core::mice::{Mice, MiceConfig, Mixing, Routing};
use helm_core::model::{Batch, Model, ModelConfig, Variant};

pub const LAYER_TOL: f64 = 1e-4;
pub const MODEL_TOL: f64 = 1e-3;

/// Named relative errors with the tolerance each must stay under.
#[derive(Default)]
pub struct Report {
    pub checks: Vec<(String, f64, f64)>,
}

impl Report {
    fn inputs(&mut self, case: &str, errors: &[f64], tol: f64) {
        for (i, e) in errors.iter().enumerate() {
            self.checks.push((format!("{case}[{i}]"), *e, tol));
        }
    }

    fn params(&mut self, case: &str, errors: &[(String, f64)], tol: f64) {
        assert!(!errors.is_empty(), "{case}: no trainable parameters");
        for (name, e) in errors {
            self.checks.push((format!("{case}.{name}"), *e, tol));
        }
    }

    pub fn worst(&self) -> f64 {
        self.checks.iter().map(|c| c.1 / c.2).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> Vec<&(String, f64, f64)> {
        self.checks.iter().filter(|c| c.1.is_nan() || c.1 >= c.2).collect()
    }
}

pub fn hlt_inputs_and_weights(rep: &mut Report) {
    let k = curv(-0.7);
    let inputs = [randn(4, 5, 0.8, 1), randn(6, 3, 0.5, 2), randn(1, 3, 0.5, 3)];
    let errs = check_gradients(
        |_, v| {
            let x = layers::lift(v[0], k)?;
            project(layers::hlt(x, v[1], v[2], k, k)?, 10)
        },
        &inputs,
        FD_STEP,
    )
    .unwrap();
    rep.inputs("hlt_inputs_and_weights", &errs, LAYER_TOL);
}

pub fn fixed_and_learned_residual(rep: &mut Report) {
    let k = curv(-1.4);
    let inputs = [randn(3, 4, 1.0, 4), randn(3, 4, 1.0, 5), Tensor::row(&[0.7, 1.3])];
    let fixed = check_gradients(
        |_, v| {
            let y = layers::residual(layers::lift(v[0], k)?, layers::lift(v[1], k)?, 0.6, 1.7, k)?;
            project(y, 11)
        },
        &inputs[..2],
        FD_STEP,
    )
    .unwrap();
    rep.inputs("fixed_and_learned_residual", &fixed, LAYER_TOL);
    let learned = check_gradients(
        |_, v| {
            let y = layers::residual_learned(layers::lift(v[0], k)?, layers::lift(v[1], k)?, v[2], k)?;
            project(y, 12)
        },
        &inputs,
        FD_STEP,
    )
    .unwrap();
    rep.inputs("fixed_and_learned_residual", &learned, LAYER_TOL);
}

pub fn rmsnorm_silu_concat(rep: &mut Report) {
    let k = curv(-1.0);
    let inputs = [randn(3, 6, 1.2, 6), randn(1, 6, 1.0, 7), randn(3, 2, 0.9, 8)];
    let norm = check_gradients(
        |_, v| project(layers::hyp_rmsnorm(layers::lift(v[0], k)?, v[1], 1e-20, k)?, 13),
        &inputs[..2],
        FD_STEP,
    )
    .unwrap();
    rep.inputs("rmsnorm_silu_concat", &norm, LAYER_TOL);
    let silu = check_gradients(
        |_, v| project(layers::hyp_silu(layers::lift(v[0], k)?, k)?, 14),
        &inputs[..1],
        FD_STEP,
    )
    .unwrap();
    rep.inputs("rmsnorm_silu_concat", &silu, LAYER_TOL);
    let cat = check_gradients(
        |_, v| {
            let parts = [layers::lift(v[0], k)?, layers::lift(v[2], k)?];
            project(layers::hyp_concat(&parts, k)?, 15)
        },
        &inputs,
        FD_STEP,
    )
    .unwrap();
    assert_eq!(cat[1], 0.0);
    rep.inputs("rmsnorm_silu_concat", &cat, LAYER_TOL);
}

pub fn attention_centroid(rep: &mut Report) {
    let k = curv(-0.5);
    let inputs = [randn(4, 3, 0.7, 20), randn(4, 3, 0.7, 21), randn(4, 3, 0.7, 22)];
    let mask = helm_core::attention::causal_mask(4, 4, 0, 0);
    let errs = check_gradients(
        |_, v| {
            let q = layers::lift(v[0], k)?;
            let kk = layers::lift(v[1], k)?;
            let vv = layers::lift(v[2], k)?;
            project(attend(q, kk, vv, 1.7, Some(&mask), k)?, 16)
        },
        &inputs,
        FD_STEP,
    )
    .unwrap();
    rep.inputs("attention_centroid", &errs, LAYER_TOL);
}

pub fn rescale_between_curvatures(rep: &mut Report) {
    let (a, b) = (curv(-0.3), curv(-1.8));
    let errs = check_gradients(
        |_, v| project(layers::rescale(layers::lift(v[0], a)?, a, b)?, 17),
        &[randn(3, 4, 1.0, 23)],
        FD_STEP,
    )
    .unwrap();
    rep.inputs("rescale_between_curvatures", &errs, LAYER_TOL);
}

fn input_rows(rows: usize, dim: usize, seed: u64) -> Tensor {
    randn(rows, dim, 0.8, seed)
}

pub fn hlt_and_norm_parameters(rep: &mut Report) {
    let k = curv(-1.0);
    let mut store = ParamStore::new();
    let hlt = Hlt::init(&mut store, "hlt", 5, 4, k, &mut rng(30));
    let norm = RmsNorm::init(&mut store, "norm", 4, 1e-20, k);
    store.get_mut(norm.gain).data_mut().copy_from_slice(&[0.5, 1.5, -0.8, 1.1]);
    let s = input_rows(3, 5, 31);
    let errs = check_param_gradients(
        &store,
        |g, st| {
            let x = layers::lift(g.constant(s.clone()), k)?;
            project(norm.forward(g, st, hlt.forward(g, st, x)?)?, 18)
        },
        FD_STEP,
    )
    .unwrap();
    rep.params("hlt_and_norm_parameters", &errs, LAYER_TOL);
}

pub fn hffn_parameters(rep: &mut Report) {
    let k = curv(-1.2);
    let mut store = ParamStore::new();
    let ffn = Hffn::init(&mut store, "ffn", 4, 6, k, &mut rng(32));
    let s = input_rows(3, 4, 33);
    let errs = check_param_gradients(
        &store,
        |g, st| project(ffn.forward(g, st, layers::lift(g.constant(s.clone()), k)?)?, 19),
        FD_STEP,
    )
    .unwrap();
    rep.params("hffn_parameters", &errs, LAYER_TOL);
}

pub fn self_attention_parameters(rep: &mut Report) {
    let k = curv(-1.3);
    let mut store = ParamStore::new();
    let attn = SelfAttention::init(&mut store, "attn", 4, 2, 4, k, 10_000.0, &mut rng(34)).unwrap();
    let s = input_rows(6, 4, 35);
    let errs = check_param_gradients(
        &store,
        |g, st| {
            let x = layers::lift(g.constant(s.clone()), k)?;
            project(attn.forward(g, st, x, 2, 0, None)?, 20)
        },
        FD_STEP,
    )
    .unwrap();
    rep.params("self_attention_parameters", &errs, LAYER_TOL);
}

pub fn latent_attention_parameters(rep: &mut Report) {
    let k = curv(-0.8);
    let dims = HmlaDims {
        heads: 2,
        head_dim: 4,
        q_latent: 3,
        kv_latent: 2,
        rope_dim: 2,
        reduced_up_projection: false,
    };
    let mut store = ParamStore::new();
    let attn = Hmla::init(&mut store, "hmla", 5, dims, k, 10_000.0, None, &mut rng(36)).unwrap();
    let s = input_rows(4, 5, 37);
    let errs = check_param_gradients(
        &store,
        |g, st| {
            let x = layers::lift(g.constant(s.clone()), k)?;
            project(attn.forward(g, st, x, 1, 2, None)?, 21)
        },
        FD_STEP,
    )
    .unwrap();
    rep.params("latent_attention_parameters", &errs, LAYER_TOL);
}

fn mice_config(mixing: Mixing) -> MiceConfig {
    MiceConfig {
        routed: 4,
        shared: 1,
        active: 2,
        routed_curvatures: None,
        shared_curvatures: None,
        bias_step: 0.001,
        aux_weight: 0.05,
        mixing,
        balance_bias: true,
    }
}

pub fn mice_parameters_with_fixed_routing(rep: &mut Report) {
    let k = curv(-1.0);
    for mixing in [Mixing::GateWeighted, Mixing::Unweighted] {
        let mut store = ParamStore::new();
        let mice = Mice::init(&mut store, "mice", 4, 5, k, mice_config(mixing), &mut rng(38)).unwrap();
        let s = input_rows(6, 4, 39);
        let routing: Routing = {
            let g = Graph::new();
            let x = layers::lift(g.constant(s.clone()), k).unwrap();
            mice.forward(&g, &store, x, 2, None).unwrap().routing
        };
        let errs = check_param_gradients(
            &store,
            |g, st| {
                let x = layers::lift(g.constant(s.clone()), k)?;
                let out = mice.forward(g, st, x, 2, Some(&routing))?;
                let y = project(out.y, 22)?;
                match out.aux {
                    Some(a) => y.add(a),
                    None => Ok(y),
                }
            },
            FD_STEP,
        )
        .unwrap();
        assert!(errs.iter().all(|(n, _)| !n.ends_with(".bias")));
        rep.params("mice_parameters_with_fixed_routing", &errs, LAYER_TOL);
    }
}

/// Two layers, two heads of width 4, eleven symbols, five positions.
fn tiny(variant: Variant) -> ModelConfig {
    let mut cfg = ModelConfig::micro(variant);
    cfg.head_dim = 4;
    cfg.vocab = 11;
    cfg.seq_len = 5;
    cfg.learnable_residual = true;
    cfg.dense_hidden = Some(8);
    cfg.expert_hidden = Some(6);
    if let Some(h) = &mut cfg.hmla {
        h.q_latent = 4;
        h.kv_latent = 3;
        h.rope_dim = 2;
    }
    if let Some(m) = &mut cfg.mice {
        m.aux_weight = 0.01;
    }
    cfg
}

fn tiny_batch() -> Batch {
    let inputs = vec![vec![0, 3, 7, 1, 9], vec![4, 4, 10, 2, 6]];
    let targets = vec![
        vec![Some(3), Some(7), Some(1), Some(9), Some(5)],
        vec![Some(4), Some(10), None, Some(6), Some(8)],
    ];
    Batch { inputs, targets }
}

pub fn full_model_parameters(rep: &mut Report) {
    for variant in [Variant::HelmD, Variant::HelmMice] {
        let mut model = Model::new(tiny(variant)).unwrap();
        // Larger head weights so logit gradients are not dominated by round-off.
        let head = model.store.find("head").unwrap();
        *model.store.get_mut(head) = Tensor::randn(8, 11, 0.5, &mut rng(40)).trainable();
        let batch = tiny_batch();
        let routing = {
            let g = Graph::new();
            model.loss(&g, &batch, None).unwrap().2.routing
        };
        let errs = check_param_gradients(
            &model.store,
            |g, s| model.loss_with(s, g, &batch, Some(&routing)).map(|r| r.0),
            FD_STEP,
        )
        .unwrap();
        rep.params("full_model_parameters", &errs, MODEL_TOL);
    }
}

/// Every layer and full-model check, in a fixed order.
pub type Case = fn(&mut Report);

pub const ALL: &[(&str, Case)] = &[
    ("hlt_inputs_and_weights", hlt_inputs_and_weights),
    ("fixed_and_learned_residual", fixed_and_learned_residual),
    ("rmsnorm_silu_concat", rmsnorm_silu_concat),
    ("attention_centroid", attention_centroid),
    ("rescale_between_curvatures", rescale_between_curvatures),
    ("hlt_and_norm_parameters", hlt_and_norm_parameters),
    ("hffn_parameters", hffn_parameters),
    ("self_attention_parameters", self_attention_parameters),
    ("latent_attention_parameters", latent_attention_parameters),
    ("mice_parameters_with_fixed_routing", mice_parameters_with_fixed_routing),
    ("full_model_parameters", full_model_parameters),
];
