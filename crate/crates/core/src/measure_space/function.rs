//! Smooth test functions with recorded derivative bounds.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::MeasureError;

/// A twice-differentiable map `R^d -> R` with closed-form derivatives.
///
/// Hessians are written row-major into a `d * d` slice.
pub trait SmoothFunction: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], out: &mut [f64]);
    fn hessian(&self, x: &[f64], out: &mut [f64]);
    /// Stable textual description, used for fingerprints.
    fn describe(&self) -> String;
}

#[derive(Debug, Clone)]
pub struct Constant {
    pub dim: usize,
    pub value: f64,
}

impl SmoothFunction for Constant {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, _x: &[f64]) -> f64 {
        self.value
    }
    fn gradient(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn hessian(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn describe(&self) -> String {
        format!("constant(d={},v={:e})", self.dim, self.value)
    }
}

/// `amplitude * exp(-|x - center|^2 / scale^2)`
#[derive(Debug, Clone)]
pub struct GaussianBump {
    pub amplitude: f64,
    pub center: Vec<f64>,
    pub scale: f64,
}

impl SmoothFunction for GaussianBump {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let r2: f64 = x
            .iter()
            .zip(&self.center)
            .map(|(xi, ci)| (xi - ci) * (xi - ci))
            .sum();
        self.amplitude * (-r2 / (self.scale * self.scale)).exp()
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let f = self.value(x);
        let s2 = self.scale * self.scale;
        for (o, (xi, ci)) in out.iter_mut().zip(x.iter().zip(&self.center)) {
            *o = -2.0 * (xi - ci) / s2 * f;
        }
    }

    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let f = self.value(x);
        let s2 = self.scale * self.scale;
        for i in 0..d {
            let ui = x[i] - self.center[i];
            for j in 0..d {
                let uj = x[j] - self.center[j];
                let diag = if i == j { 2.0 / s2 } else { 0.0 };
                out[i * d + j] = f * (4.0 * ui * uj / (s2 * s2) - diag);
            }
        }
    }

    fn describe(&self) -> String {
        format!(
            "gaussian(a={:e},c={:?},s={:e})",
            self.amplitude, self.center, self.scale
        )
    }
}

/// One-dimensional polynomial `sum_k coeffs[k] x^k`.
///
/// Unbounded on the line; only meaningful as a test function on a box.
#[derive(Debug, Clone)]
pub struct Polynomial {
    pub coeffs: Vec<f64>,
}

impl Polynomial {
    fn horner(coeffs: &[f64], x: f64) -> f64 {
        coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    fn derivative_coeffs(coeffs: &[f64]) -> Vec<f64> {
        coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, c)| k as f64 * c)
            .collect()
    }
}

impl SmoothFunction for Polynomial {
    fn dim(&self) -> usize {
        1
    }
    fn value(&self, x: &[f64]) -> f64 {
        Self::horner(&self.coeffs, x[0])
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out[0] = Self::horner(&Self::derivative_coeffs(&self.coeffs), x[0]);
    }
    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let d1 = Self::derivative_coeffs(&self.coeffs);
        out[0] = Self::horner(&Self::derivative_coeffs(&d1), x[0]);
    }
    fn describe(&self) -> String {
        format!("polynomial({:?})", self.coeffs)
    }
}

type ValueFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type VectorFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// A user-supplied smooth function built from closures.
#[derive(Clone)]
pub struct ClosureFunction {
    pub dim: usize,
    pub label: String,
    pub value: Arc<ValueFn>,
    pub gradient: Arc<VectorFn>,
    pub hessian: Arc<VectorFn>,
}

impl fmt::Debug for ClosureFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClosureFunction")
            .field("dim", &self.dim)
            .field("label", &self.label)
            .finish()
    }
}

impl SmoothFunction for ClosureFunction {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        (self.gradient)(x, out)
    }
    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        (self.hessian)(x, out)
    }
    fn describe(&self) -> String {
        format!("closure({})", self.label)
    }
}

/// Compact box on which sup-norms are estimated by grid maximization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub points_per_axis: usize,
}

impl NormBox {
    pub fn cube(dim: usize, half_width: f64) -> Self {
        let points_per_axis = match dim {
            0 | 1 => 4001,
            2 => 201,
            3 => 41,
            _ => 11,
        };
        Self {
            lower: vec![-half_width; dim],
            upper: vec![half_width; dim],
            points_per_axis,
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Visits every grid node of the box.
    pub fn for_each_node(&self, mut visit: impl FnMut(&[f64])) {
        let d = self.dim();
        let m = self.points_per_axis.max(2);
        let mut index = vec![0usize; d];
        let mut x = vec![0.0; d];
        loop {
            for k in 0..d {
                let frac = index[k] as f64 / (m - 1) as f64;
                x[k] = self.lower[k] + frac * (self.upper[k] - self.lower[k]);
            }
            visit(&x);
            let mut k = 0;
            loop {
                if k == d {
                    return;
                }
                index[k] += 1;
                if index[k] < m {
                    break;
                }
                index[k] = 0;
                k += 1;
            }
        }
    }
}

impl Default for NormBox {
    fn default() -> Self {
        Self::cube(1, 8.0)
    }
}

/// A smooth function together with its sup-norms on a declared box.
///
/// `q = max{1, sup|Dphi|, sup|D^2 phi|}` with the Euclidean norm on gradients
/// and the Frobenius norm on Hessians.
#[derive(Clone)]
pub struct TestFunction {
    inner: Arc<dyn SmoothFunction>,
    sup_norm: f64,
    grad_sup: f64,
    hess_sup: f64,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("fn", &self.inner.describe())
            .field("sup_norm", &self.sup_norm)
            .field("q", &self.q())
            .finish()
    }
}

impl TestFunction {
    pub fn new(inner: Arc<dyn SmoothFunction>, norm_box: &NormBox) -> Result<Self, MeasureError> {
        if norm_box.dim() != inner.dim() {
            return Err(MeasureError::DimensionMismatch {
                expected: inner.dim(),
                found: norm_box.dim(),
            });
        }
        let d = inner.dim();
        let mut grad = vec![0.0; d];
        let mut hess = vec![0.0; d * d];
        let (mut sup, mut gsup, mut hsup) = (0.0f64, 0.0f64, 0.0f64);
        let mut bad = None;
        norm_box.for_each_node(|x| {
            let v = inner.value(x);
            inner.gradient(x, &mut grad);
            inner.hessian(x, &mut hess);
            let g = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
            let h = hess.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(v.is_finite() && g.is_finite() && h.is_finite()) && bad.is_none() {
                bad = Some((x.to_vec(), v));
            }
            sup = sup.max(v.abs());
            gsup = gsup.max(g);
            hsup = hsup.max(h);
        });
        if let Some((location, value)) = bad {
            return Err(MeasureError::InvalidFunction { location, value });
        }
        Ok(Self {
            inner,
            sup_norm: sup,
            grad_sup: gsup,
            hess_sup: hsup,
        })
    }

    /// Builds on the default box `[-8, 8]^d`.
    pub fn from_smooth(inner: impl SmoothFunction + 'static) -> Self {
        let dim = inner.dim();
        Self::new(Arc::new(inner), &NormBox::cube(dim, 8.0))
            .expect("built-in smooth functions are finite on the default box")
    }

    pub fn constant(dim: usize, value: f64) -> Self {
        Self::from_smooth(Constant { dim, value })
    }

    pub fn gaussian(amplitude: f64, center: Vec<f64>, scale: f64) -> Self {
        Self::from_smooth(GaussianBump {
            amplitude,
            center,
            scale,
        })
    }

    pub fn polynomial(coeffs: Vec<f64>) -> Self {
        Self::from_smooth(Polynomial { coeffs })
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.inner.value(x)
    }

    #[inline]
    pub fn grad(&self, x: &[f64], out: &mut [f64]) {
        self.inner.gradient(x, out)
    }

    #[inline]
    pub fn hess(&self, x: &[f64], out: &mut [f64]) {
        self.inner.hessian(x, out)
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    pub fn gradient_sup(&self) -> f64 {
        self.grad_sup
    }

    pub fn hessian_sup(&self) -> f64 {
        self.hess_sup
    }

    pub fn q(&self) -> f64 {
        1.0f64.max(self.grad_sup).max(self.hess_sup)
    }

    pub fn describe(&self) -> String {
        self.inner.describe()
    }

    /// Compares closed-form derivatives against centered finite differences
    /// of `eval` at the given points. Returns the worst relative deviation.
    pub fn derivative_mismatch(&self, points: &[Vec<f64>]) -> f64 {
        let d = self.dim();
        let mut worst = 0.0f64;
        let mut g = vec![0.0; d];
        let mut gp = vec![0.0; d];
        let mut gm = vec![0.0; d];
        let mut h = vec![0.0; d * d];
        for x in points {
            self.grad(x, &mut g);
            self.hess(x, &mut h);
            let step = 1e-5 * (1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs())));
            let mut xp = x.clone();
            for k in 0..d {
                xp[k] = x[k] + step;
                let fp = self.eval(&xp);
                self.grad(&xp, &mut gp);
                xp[k] = x[k] - step;
                let fm = self.eval(&xp);
                self.grad(&xp, &mut gm);
                xp[k] = x[k];
                let fd = (fp - fm) / (2.0 * step);
                worst = worst.max(rel_dev(g[k], fd));
                for j in 0..d {
                    let fd2 = (gp[j] - gm[j]) / (2.0 * step);
                    worst = worst.max(rel_dev(h[j * d + k], fd2));
                }
            }
        }
        worst
    }
}

fn rel_dev(exact: f64, approx: f64) -> f64 {
    (exact - approx).abs() / exact.abs().max(1e-3)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_norms_match_closed_form() {
        let phi = TestFunction::gaussian(1.0, vec![0.0], 1.0);
        assert!((phi.sup_norm() - 1.0).abs() < 1e-12);
        assert!((phi.gradient_sup() - (2.0 / std::f64::consts::E).sqrt()).abs() < 1e-5);
        assert!((phi.hessian_sup() - 2.0).abs() < 1e-12);
        assert_eq!(phi.q(), 2.0);
    }

    #[test]
    fn derivatives_agree_with_finite_differences() {
        let pts: Vec<Vec<f64>> = (0..9).map(|i| vec![-2.0 + 0.5 * i as f64]).collect();
        for f in [
            TestFunction::gaussian(0.7, vec![0.3], 1.3),
            TestFunction::polynomial(vec![1.0, -2.0, 0.5, 0.25]),
            TestFunction::constant(1, 1.0),
        ] {
            assert!(f.derivative_mismatch(&pts) < 1e-4, "{f:?}");
        }
        let g2 = TestFunction::gaussian(1.0, vec![0.5, -0.5], 1.5);
        let pts2: Vec<Vec<f64>> = (0..5)
            .map(|i| vec![-1.0 + 0.4 * i as f64, 0.3 * i as f64])
            .collect();
        assert!(g2.derivative_mismatch(&pts2) < 1e-4);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let err = TestFunction::new(Arc::new(Constant { dim: 2, value: 1.0 }), &NormBox::cube(1, 1.0));
        assert!(matches!(err, Err(MeasureError::DimensionMismatch { .. })));
    }
}
