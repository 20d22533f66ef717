//! Hyperbolic layers recorded on the autodiff tape.
//!
//! Every function takes a batch of Lorentz points as a `T x (n+1)` [`Var`]
//! (one point per row, time coordinate first) and returns rows on the
//! hyperboloid of the stated curvature.

use rand::Rng;

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::diagnostics;
use crate::error::{Error, Result};
use crate::lorentz::Curvature;

/// Default RMSNorm epsilon.
pub const RMS_EPS: f64 = 1e-20;

/// `[-1, 1, ..., 1]` of width `d`.
pub fn signature_row(d: usize) -> Tensor {
    let mut t = Tensor::ones(1, d);
    t.data_mut()[0] = -1.0;
    t
}

/// Space-like columns of each row.
pub fn space(x: Var<'_>) -> Result<Var<'_>> {
    x.slice_cols(1, x.cols())
}

/// Completes space rows `[T, n]` to points `[T, n+1]` on `L^K`.
pub fn lift<'g>(s: Var<'g>, k: Curvature) -> Result<Var<'g>> {
    let time = s.square()?.sum_axis(1)?.add_scalar(-k.inv())?.sqrt()?;
    s.graph().concat_cols(&[time, s])
}

/// Row-wise `<x_i, x_i>_L` as `[T, 1]`.
pub fn minkowski_sq(x: Var<'_>) -> Result<Var<'_>> {
    let sig = x.graph().constant(signature_row(x.cols()));
    x.square()?.mul(sig)?.sum_axis(1)
}

/// Matrix of pairwise inner products `<a_i, b_j>_L`, shape `[Ta, Tb]`.
pub fn minkowski_matmul<'g>(a: Var<'g>, b: Var<'g>) -> Result<Var<'g>> {
    let sig = a.graph().constant(signature_row(a.cols()));
    a.mul(sig)?.matmul(b.transpose()?)
}

/// Divides each row by `sqrt(-K) |‖row‖_L|`, projecting time-like rows onto `L^K`.
pub fn normalize_rows<'g>(v: Var<'g>, k: Curvature) -> Result<Var<'g>> {
    let norm = minkowski_sq(v)?.abs()?.sqrt()?.scale(k.sqrt_neg())?;
    if norm.value().data().iter().any(|n| *n <= 0.0) {
        return Err(Error::DegenerateCentroid);
    }
    v.div(norm)
}

/// Lorentzian centroid of `values` (`[N, D]`) under each row of `weights` (`[T, N]`).
pub fn centroid<'g>(weights: Var<'g>, values: Var<'g>, k: Curvature) -> Result<Var<'g>> {
    normalize_rows(weights.matmul(values)?, k)
}

/// `sqrt(k_from / k_to) x`, carrying rows from `L^{k_from}` to `L^{k_to}`.
pub fn rescale<'g>(x: Var<'g>, k_from: Curvature, k_to: Curvature) -> Result<Var<'g>> {
    if k_from == k_to {
        return Ok(x);
    }
    x.scale((k_from.value() / k_to.value()).sqrt())
}

/// Lorentz linear map: `lift(x W + b)`.
///
/// A prefactor for distinct input and output curvatures would not land on
/// the output manifold, so that case is rejected; use [`rescale`] instead.
pub fn hlt<'g>(
    x: Var<'g>,
    w: Var<'g>,
    b: Var<'g>,
    k_in: Curvature,
    k_out: Curvature,
) -> Result<Var<'g>> {
    if k_in != k_out {
        return Err(Error::CurvatureMismatch {
            left: k_in.value(),
            right: k_out.value(),
        });
    }
    lift(x.matmul(w)?.add(b)?, k_out)
}

/// `lift(act(x_s))` with SiLU.
pub fn hyp_silu<'g>(x: Var<'g>, k: Curvature) -> Result<Var<'g>> {
    lift(space(x)?.silu()?, k)
}

/// Concatenates space parts of the inputs and recomputes time.
pub fn hyp_concat<'g>(parts: &[Var<'g>], k: Curvature) -> Result<Var<'g>> {
    let first = parts.first().ok_or(Error::EmptyInput("hyp_concat"))?;
    let spaces = parts.iter().map(|p| space(*p)).collect::<Result<Vec<_>>>()?;
    lift(first.graph().concat_cols(&spaces)?, k)
}

/// `normalize(w1 x + w2 fx)` with constant weights.
pub fn residual<'g>(x: Var<'g>, fx: Var<'g>, w1: f64, w2: f64, k: Curvature) -> Result<Var<'g>> {
    if w1 == 0.0 && w2 == 0.0 {
        return Err(Error::InvalidArgument("residual weights are both zero".into()));
    }
    let combo = if w2 == 0.0 {
        x.scale(w1)?
    } else if w1 == 0.0 {
        fx.scale(w2)?
    } else {
        x.scale(w1)?.add(fx.scale(w2)?)?
    };
    normalize_rows(combo, k)
}

/// Same as [`residual`] with weights taken from a `[1, 2]` node.
pub fn residual_learned<'g>(x: Var<'g>, fx: Var<'g>, w: Var<'g>, k: Curvature) -> Result<Var<'g>> {
    let combo = x.mul(w.slice_cols(0, 1)?)?.add(fx.mul(w.slice_cols(1, 2)?)?)?;
    normalize_rows(combo, k)
}

/// `lift(x_s / sqrt(mean(x_s^2) + eps) * g)`.
pub fn hyp_rmsnorm<'g>(x: Var<'g>, gain: Var<'g>, eps: f64, k: Curvature) -> Result<Var<'g>> {
    let s = space(x)?;
    let rms = s.square()?.mean_axis(1)?.add_scalar(eps)?.sqrt()?;
    lift(s.div(rms)?.mul(gain)?, k)
}

/// Weights and bias of one Lorentz linear map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hlt {
    pub w: ParamId,
    pub b: ParamId,
    pub k: Curvature,
    /// Space dimension of the input (the weight has one more row).
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Hlt {
    /// Gaussian weights with std `1/sqrt(in_dim + 1)`, zero bias.
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        k: Curvature,
        rng: &mut R,
    ) -> Self {
        let std = 1.0 / ((in_dim + 1) as f64).sqrt();
        let w = store.add(
            format!("{name}.w"),
            Tensor::randn(in_dim + 1, out_dim, std, rng).trainable(),
        );
        let b = store.add(format!("{name}.b"), Tensor::zeros(1, out_dim).trainable());
        Self {
            w,
            b,
            k,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph, store: &ParamStore, x: Var<'g>) -> Result<Var<'g>> {
        if x.cols() != self.in_dim + 1 {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim + 1,
                actual: x.cols(),
            });
        }
        hlt(x, g.param(store, self.w), g.param(store, self.b), self.k, self.k)
    }

    /// The affine part `x W + b` before lifting, shape `[T, out_dim]`.
    pub fn affine<'g>(&self, g: &'g Graph, store: &ParamStore, x: Var<'g>) -> Result<Var<'g>> {
        if x.cols() != self.in_dim + 1 {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim + 1,
                actual: x.cols(),
            });
        }
        x.matmul(g.param(store, self.w))?
            .add(g.param(store, self.b))
    }
}

/// Splits space rows `[T, h * m]` into `h` column blocks and lifts each onto `L^K`.
pub fn split_lift<'g>(u: Var<'g>, heads: usize, k: Curvature) -> Result<Vec<Var<'g>>> {
    if heads == 0 || u.cols() % heads != 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot split width {} into {heads} heads",
            u.cols()
        )));
    }
    let m = u.cols() / heads;
    (0..heads)
        .map(|h| lift(u.slice_cols(h * m, (h + 1) * m)?, k))
        .collect()
}

/// Either fixed constants or a learnable `[1, 2]` weight pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Residual {
    Fixed(f64, f64),
    Learned(ParamId),
}

impl Residual {
    pub fn init(store: &mut ParamStore, name: &str, learnable: bool) -> Self {
        if learnable {
            Residual::Learned(store.add(format!("{name}.w"), Tensor::ones(1, 2).trainable()))
        } else {
            Residual::Fixed(1.0, 1.0)
        }
    }

    pub fn forward<'g>(
        &self,
        g: &'g Graph,
        store: &ParamStore,
        x: Var<'g>,
        fx: Var<'g>,
        k: Curvature,
    ) -> Result<Var<'g>> {
        match *self {
            Residual::Fixed(w1, w2) => residual(x, fx, w1, w2, k),
            Residual::Learned(id) => residual_learned(x, fx, g.param(store, id), k),
        }
    }
}

/// Hyperbolic RMSNorm with a learnable gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsNorm {
    pub gain: ParamId,
    pub eps: f64,
    pub k: Curvature,
}

impl RmsNorm {
    pub fn init(store: &mut ParamStore, name: &str, dim: usize, eps: f64, k: Curvature) -> Self {
        let gain = store.add(format!("{name}.gain"), Tensor::ones(1, dim).trainable());
        Self { gain, eps, k }
    }

    pub fn forward<'g>(&self, g: &'g Graph, store: &ParamStore, x: Var<'g>) -> Result<Var<'g>> {
        hyp_rmsnorm(x, g.param(store, self.gain), self.eps, self.k)
    }
}

/// Hyperbolic SwiGLU feed-forward block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hffn {
    pub gate: Hlt,
    pub up: Hlt,
    pub down: Hlt,
}

impl Hffn {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        hidden: usize,
        k: Curvature,
        rng: &mut R,
    ) -> Self {
        Self {
            gate: Hlt::init(store, &format!("{name}.w1"), dim, hidden, k, rng),
            up: Hlt::init(store, &format!("{name}.w3"), dim, hidden, k, rng),
            down: Hlt::init(store, &format!("{name}.w2"), hidden, dim, k, rng),
        }
    }

    pub fn curvature(&self) -> Curvature {
        self.down.k
    }

    pub fn forward<'g>(&self, g: &'g Graph, store: &ParamStore, x: Var<'g>) -> Result<Var<'g>> {
        let k = self.curvature();
        let gate = hyp_silu(self.gate.forward(g, store, x)?, k)?;
        let up = self.up.forward(g, store, x)?;
        let y = lift(space(gate)?.mul(space(up)?)?, k)?;
        diagnostics::check("hffn.inner", &y.value(), k)?;
        self.down.forward(g, store, y)
    }
}

/// Single-point versions of the layers, evaluated without recording gradients.
pub mod point {
    use super::*;
    use crate::lorentz::LorentzPoint;

    fn row(x: &LorentzPoint) -> Tensor {
        Tensor::row(x.coords())
    }

    fn to_point(v: Var<'_>, k: Curvature) -> LorentzPoint {
        LorentzPoint::from_ambient_unchecked(v.value().data().to_vec(), k)
    }

    /// `w` is `(n+1) x m`, `b` is `1 x m`.
    pub fn hlt(x: &LorentzPoint, w: &Tensor, b: &Tensor, k_out: Curvature) -> Result<LorentzPoint> {
        let g = Graph::new();
        let y = super::hlt(
            g.constant(row(x)),
            g.constant(w.clone()),
            g.constant(b.clone()),
            x.curvature(),
            k_out,
        )?;
        Ok(to_point(y, k_out))
    }

    pub fn residual(x: &LorentzPoint, fx: &LorentzPoint, w1: f64, w2: f64) -> Result<LorentzPoint> {
        let k = x.curvature();
        if fx.curvature() != k {
            return Err(Error::CurvatureMismatch {
                left: k.value(),
                right: fx.curvature().value(),
            });
        }
        let g = Graph::new();
        let y = super::residual(g.constant(row(x)), g.constant(row(fx)), w1, w2, k)?;
        Ok(to_point(y, k))
    }

    pub fn rmsnorm(x: &LorentzPoint, gain: &[f64], eps: f64) -> Result<LorentzPoint> {
        let k = x.curvature();
        let g = Graph::new();
        let y = hyp_rmsnorm(g.constant(row(x)), g.constant(Tensor::row(gain)), eps, k)?;
        Ok(to_point(y, k))
    }

    pub fn activation(x: &LorentzPoint, act: impl Fn(f64) -> f64) -> LorentzPoint {
        let s: Vec<f64> = x.space().iter().map(|v| act(*v)).collect();
        crate::lorentz::lift(&s, x.curvature())
    }

    pub fn silu(x: &LorentzPoint) -> Result<LorentzPoint> {
        let k = x.curvature();
        let g = Graph::new();
        Ok(to_point(hyp_silu(g.constant(row(x)), k)?, k))
    }

    pub fn concat(xs: &[LorentzPoint]) -> Result<LorentzPoint> {
        let first = xs.first().ok_or(Error::EmptyInput("hyp_concat"))?;
        let k = first.curvature();
        let mut s = Vec::new();
        for x in xs {
            if x.curvature() != k {
                return Err(Error::CurvatureMismatch {
                    left: k.value(),
                    right: x.curvature().value(),
                });
            }
            s.extend_from_slice(x.space());
        }
        Ok(crate::lorentz::lift(&s, k))
    }

    /// Weights are `(w1, b1)`, `(w3, b3)`, `(w2, b2)` as for [`hlt`].
    pub fn hffn(
        x: &LorentzPoint,
        w1: (&Tensor, &Tensor),
        w3: (&Tensor, &Tensor),
        w2: (&Tensor, &Tensor),
    ) -> Result<LorentzPoint> {
        let k = x.curvature();
        let gate = silu(&hlt(x, w1.0, w1.1, k)?)?;
        let up = hlt(x, w3.0, w3.1, k)?;
        let y: Vec<f64> = gate.space().iter().zip(up.space()).map(|(a, b)| a * b).collect();
        hlt(&crate::lorentz::lift(&y, k), w2.0, w2.1, k)
    }
}

#[cfg(test)]
mod tests {
    use super::point;
    use super::*;
    use crate::lorentz::{check_on_manifold, lift as lift_point, LorentzPoint};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn k(v: f64) -> Curvature {
        Curvature::new(v).unwrap()
    }

    #[test]
    fn hlt_bias_only() {
        let x = lift_point(&[0.3, -0.2], k(-1.0));
        let w = Tensor::zeros(3, 3);
        let b = Tensor::row(&[1.0, 0.0, 0.0]);
        let y = point::hlt(&x, &w, &b, k(-1.0)).unwrap();
        assert!((y.time() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(y.space(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn hlt_identity_on_space() {
        let x = lift_point(&[0.3, -0.2, 1.7], k(-1.0));
        let mut w = Tensor::zeros(4, 3);
        for i in 0..3 {
            w.set(i + 1, i, 1.0);
        }
        let y = point::hlt(&x, &w, &Tensor::zeros(1, 3), k(-1.0)).unwrap();
        for (a, b) in y.coords().iter().zip(x.coords()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn hlt_rejects_cross_curvature() {
        let x = lift_point(&[0.3], k(-1.0));
        assert!(point::hlt(&x, &Tensor::zeros(2, 1), &Tensor::zeros(1, 1), k(-2.0)).is_err());
    }

    #[test]
    fn residual_examples() {
        let x = lift_point(&[0.4, -1.1], k(-0.5));
        let same = point::residual(&x, &x, 1.0, 1.0).unwrap();
        let first = point::residual(&x, &lift_point(&[2.0, 3.0], k(-0.5)), 1.0, 0.0).unwrap();
        for (a, b) in same.coords().iter().zip(x.coords()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in first.coords().iter().zip(x.coords()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(point::residual(&x, &x, 0.0, 0.0).is_err());
    }

    #[test]
    fn residual_homogeneous() {
        let x = lift_point(&[0.4, -1.1], k(-1.3));
        let y = lift_point(&[-2.0, 0.5], k(-1.3));
        let base = point::residual(&x, &y, 0.7, 1.9).unwrap();
        for c in [0.5, 3.0] {
            let scaled = point::residual(&x, &y, 0.7 * c, 1.9 * c).unwrap();
            for (a, b) in scaled.coords().iter().zip(base.coords()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!(check_on_manifold(&base, 1e-9));
    }

    #[test]
    fn rmsnorm_examples() {
        let n = 5;
        let x = lift_point(&[0.7; 5], k(-2.0));
        let y = point::rmsnorm(&x, &[1.0; 5], RMS_EPS).unwrap();
        for v in y.space() {
            assert!((v - 1.0).abs() < 1e-12);
        }
        assert!((y.time() - (n as f64 + 0.5).sqrt()).abs() < 1e-12);
        let z = point::rmsnorm(&x, &[0.0; 5], RMS_EPS).unwrap();
        assert_eq!(z, LorentzPoint::origin(k(-2.0), 5));
    }

    #[test]
    fn silu_values() {
        let x = lift_point(&[1.0, -1.0], k(-1.0));
        let y = point::silu(&x).unwrap();
        assert!((y.space()[0] - 0.731059).abs() < 1e-6);
        assert!((y.space()[1] + 0.268941).abs() < 1e-6);
        let o = point::silu(&LorentzPoint::origin(k(-1.0), 3)).unwrap();
        assert_eq!(o, LorentzPoint::origin(k(-1.0), 3));
        let id = point::activation(&x, |v| v);
        assert_eq!(id, x);
    }

    #[test]
    fn concat_examples() {
        let a = lift_point(&[0.6], k(-1.0));
        let b = lift_point(&[0.8], k(-1.0));
        let c = point::concat(&[a.clone(), b]).unwrap();
        assert!((c.time() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(point::concat(std::slice::from_ref(&a)).unwrap(), a);
        let o = point::concat(&[
            LorentzPoint::origin(k(-1.0), 2),
            LorentzPoint::origin(k(-1.0), 3),
        ])
        .unwrap();
        assert_eq!(o, LorentzPoint::origin(k(-1.0), 5));
        assert!(point::concat(&[]).is_err());
    }

    #[test]
    fn hffn_zero_gate_gives_hlt_of_origin() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let kk = k(-1.0);
        let x = lift_point(&[0.2, -0.4], kk);
        let w1 = Tensor::zeros(3, 3);
        let b1 = Tensor::zeros(1, 3);
        let w3 = Tensor::randn(3, 3, 1.0, &mut rng);
        let b3 = Tensor::randn(1, 3, 1.0, &mut rng);
        let w2 = Tensor::randn(4, 2, 1.0, &mut rng);
        let b2 = Tensor::randn(1, 2, 1.0, &mut rng);
        let y = point::hffn(&x, (&w1, &b1), (&w3, &b3), (&w2, &b2)).unwrap();
        let expect = point::hlt(&LorentzPoint::origin(kk, 3), &w2, &b2, kk).unwrap();
        assert_eq!(y, expect);
    }

    #[test]
    fn store_backed_layers_stay_on_manifold() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let kk = k(-0.7);
        let mut store = ParamStore::new();
        let ffn = Hffn::init(&mut store, "ffn", 4, 6, kk, &mut rng);
        let norm = RmsNorm::init(&mut store, "norm", 4, RMS_EPS, kk);
        let res = Residual::init(&mut store, "res", true);
        let g = Graph::new();
        let s = g.constant(Tensor::randn(3, 4, 1.0, &mut rng));
        let x = lift(s, kk).unwrap();
        let h = norm.forward(&g, &store, x).unwrap();
        let y = ffn.forward(&g, &store, h).unwrap();
        let out = res.forward(&g, &store, x, y, kk).unwrap();
        assert!(diagnostics::max_row_violation(&out.value(), kk) < 1e-9);
    }
}
