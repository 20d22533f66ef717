//! Exact geometry of the Lorentz (hyperboloid) model.
//!
//! A point of `L^{K,n}` is stored in ambient coordinates `[x_t, x_s]` with the
//! time-like coordinate first. All points satisfy
//! `<x, x>_L = -x_t^2 + |x_s|^2 = 1/K` with `x_t > 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constant negative sectional curvature `K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Curvature(f64);

impl Curvature {
    pub const UNIT: Curvature = Curvature(-1.0);

    pub fn new(k: f64) -> Result<Self> {
        if k.is_finite() && k < 0.0 {
            Ok(Self(k))
        } else {
            Err(Error::InvalidCurvature(k))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// `1/K`, the value of `<x,x>_L` on the manifold.
    #[inline]
    pub fn inv(self) -> f64 {
        1.0 / self.0
    }

    /// `sqrt(-K)`, the normalising factor used by centroids and residuals.
    #[inline]
    pub fn sqrt_neg(self) -> f64 {
        (-self.0).sqrt()
    }
}

impl TryFrom<f64> for Curvature {
    type Error = Error;
    fn try_from(k: f64) -> Result<Self> {
        Curvature::new(k)
    }
}

impl From<Curvature> for f64 {
    fn from(k: Curvature) -> f64 {
        k.0
    }
}

/// A point on `L^{K,n}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LorentzPoint {
    coords: Vec<f64>,
    curvature: Curvature,
}

impl LorentzPoint {
    /// `[sqrt(-1/K), 0, ..., 0]`.
    pub fn origin(k: Curvature, n: usize) -> Self {
        let mut coords = vec![0.0; n + 1];
        coords[0] = (-k.inv()).sqrt();
        Self { coords, curvature: k }
    }

    /// Wraps ambient coordinates without checking the manifold constraint.
    pub fn from_ambient_unchecked(coords: Vec<f64>, k: Curvature) -> Self {
        assert!(!coords.is_empty(), "ambient vector needs a time coordinate");
        Self { coords, curvature: k }
    }

    /// Wraps ambient coordinates, rejecting vectors off the manifold.
    pub fn from_ambient(coords: Vec<f64>, k: Curvature, tol: f64) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::EmptyInput("ambient coordinates"));
        }
        let p = Self { coords, curvature: k };
        let violation = manifold_violation(&p.coords, k);
        if violation <= tol {
            Ok(p)
        } else {
            Err(Error::ManifoldViolation {
                site: "from_ambient".into(),
                violation,
                tol,
            })
        }
    }

    #[inline]
    pub fn time(&self) -> f64 {
        self.coords[0]
    }

    #[inline]
    pub fn space(&self) -> &[f64] {
        &self.coords[1..]
    }

    /// Space-like dimension `n`.
    #[inline]
    pub fn dim(&self) -> usize {
        self.coords.len() - 1
    }

    #[inline]
    pub fn curvature(&self) -> Curvature {
        self.curvature
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    /// Negates the time coordinate. Only useful for constructing invalid
    /// points in tests of `check_on_manifold`.
    pub fn with_negated_time(mut self) -> Self {
        self.coords[0] = -self.coords[0];
        self
    }
}

impl AsRef<[f64]> for LorentzPoint {
    fn as_ref(&self) -> &[f64] {
        &self.coords
    }
}

/// Row-major `T x (n+1)` block of points sharing one curvature.
#[derive(Debug, Clone, PartialEq)]
pub struct LorentzBatch {
    rows: usize,
    width: usize,
    data: Vec<f64>,
    curvature: Curvature,
}

impl LorentzBatch {
    pub fn from_points(points: &[LorentzPoint]) -> Result<Self> {
        let first = points.first().ok_or(Error::EmptyInput("point list"))?;
        let width = first.coords.len();
        let curvature = first.curvature;
        let mut data = Vec::with_capacity(points.len() * width);
        for p in points {
            if p.coords.len() != width {
                return Err(Error::DimensionMismatch {
                    expected: width - 1,
                    actual: p.dim(),
                });
            }
            if p.curvature != curvature {
                return Err(Error::CurvatureMismatch {
                    left: curvature.value(),
                    right: p.curvature.value(),
                });
            }
            data.extend_from_slice(&p.coords);
        }
        Ok(Self {
            rows: points.len(),
            width,
            data,
            curvature,
        })
    }

    /// Builds a batch from raw row-major data without manifold checks.
    pub fn from_raw(rows: usize, width: usize, data: Vec<f64>, curvature: Curvature) -> Result<Self> {
        if width == 0 || data.len() != rows * width {
            return Err(Error::DimensionMismatch {
                expected: rows * width,
                actual: data.len(),
            });
        }
        Ok(Self {
            rows,
            width,
            data,
            curvature,
        })
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    /// Space-like dimension of each row.
    pub fn dim(&self) -> usize {
        self.width - 1
    }

    pub fn curvature(&self) -> Curvature {
        self.curvature
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn point(&self, i: usize) -> LorentzPoint {
        LorentzPoint::from_ambient_unchecked(self.row(i).to_vec(), self.curvature)
    }

    pub fn points(&self) -> impl Iterator<Item = LorentzPoint> + '_ {
        (0..self.rows).map(|i| self.point(i))
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Largest relative manifold violation over all rows.
    pub fn max_violation(&self) -> f64 {
        (0..self.rows)
            .map(|i| manifold_violation(self.row(i), self.curvature))
            .fold(0.0, f64::max)
    }
}

/// Lorentzian inner product of two ambient vectors.
#[inline]
pub fn minkowski_dot(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = -x[0] * y[0];
    for (a, b) in x[1..].iter().zip(&y[1..]) {
        acc += a * b;
    }
    acc
}

/// `<x, y>_L = -x_t y_t + x_s . y_s`. Curvatures may differ.
pub fn lorentz_inner(x: &LorentzPoint, y: &LorentzPoint) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            actual: y.dim(),
        });
    }
    Ok(minkowski_dot(&x.coords, &y.coords))
}

/// `sqrt(|<x, x>_L|)` for any ambient vector.
pub fn lorentz_norm(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    minkowski_dot(x, x).abs().sqrt()
}

/// Completes a space-like vector to a point of `L^{K,n}`.
pub fn lift(space: &[f64], k: Curvature) -> LorentzPoint {
    let sq: f64 = space.iter().map(|v| v * v).sum();
    let mut coords = Vec::with_capacity(space.len() + 1);
    coords.push((sq - k.inv()).sqrt());
    coords.extend_from_slice(space);
    LorentzPoint { coords, curvature: k }
}

/// Squared Lorentzian distance `2/K - 2<x,y>_L`.
pub fn sq_distance(x: &LorentzPoint, y: &LorentzPoint) -> Result<f64> {
    if x.curvature != y.curvature {
        return Err(Error::CurvatureMismatch {
            left: x.curvature.value(),
            right: y.curvature.value(),
        });
    }
    let d = 2.0 * x.curvature.inv() - 2.0 * lorentz_inner(x, y)?;
    Ok(clamp_rounding(d))
}

/// Rounding can push `2/K - 2<x,x>` slightly below zero.
#[inline]
pub(crate) fn clamp_rounding(d: f64) -> f64 {
    if (-1e-12..0.0).contains(&d) {
        0.0
    } else {
        d
    }
}

/// Carries `x` from `L^{K1}` onto `L^{K2}` via `x -> sqrt(K1/K2) x`.
pub fn rescale_curvature(x: &LorentzPoint, k2: Curvature) -> LorentzPoint {
    let factor = (x.curvature.value() / k2.value()).sqrt();
    LorentzPoint {
        coords: x.coords.iter().map(|c| c * factor).collect(),
        curvature: k2,
    }
}

/// Weighted Lorentzian centroid
/// `(sum w_i v_i) / (sqrt(-K) |‖sum w_i v_i‖_L|)`.
pub fn lorentz_centroid<V: AsRef<[f64]>>(
    vs: &[V],
    ws: Option<&[f64]>,
    k: Curvature,
) -> Result<LorentzPoint> {
    let first = vs.first().ok_or(Error::EmptyInput("centroid inputs"))?;
    let width = first.as_ref().len();
    if width == 0 {
        return Err(Error::EmptyInput("centroid inputs"));
    }
    if let Some(ws) = ws {
        if ws.len() != vs.len() {
            return Err(Error::DimensionMismatch {
                expected: vs.len(),
                actual: ws.len(),
            });
        }
    }
    let mut sum = vec![0.0; width];
    for (i, v) in vs.iter().enumerate() {
        let v = v.as_ref();
        if v.len() != width {
            return Err(Error::DimensionMismatch {
                expected: width,
                actual: v.len(),
            });
        }
        let w = ws.map_or(1.0, |ws| ws[i]);
        for (s, x) in sum.iter_mut().zip(v) {
            *s += w * x;
        }
    }
    let norm = lorentz_norm(&sum);
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::DegenerateCentroid);
    }
    let denom = k.sqrt_neg() * norm;
    for s in &mut sum {
        *s /= denom;
    }
    Ok(LorentzPoint {
        coords: sum,
        curvature: k,
    })
}

/// Relative violation `|<x,x>_L - 1/K| / max(1, |1/K|)`; infinite when the
/// time coordinate is not positive.
pub fn manifold_violation(coords: &[f64], k: Curvature) -> f64 {
    if coords.is_empty() || !(coords[0] > 0.0) {
        return f64::INFINITY;
    }
    let inv = k.inv();
    let v = (minkowski_dot(coords, coords) - inv).abs() / inv.abs().max(1.0);
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

pub fn check_on_manifold(x: &LorentzPoint, tol: f64) -> bool {
    manifold_violation(&x.coords, x.curvature) <= tol
}
