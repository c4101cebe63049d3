//! Cylindrical functions `u(l) = F(<f_1, l>, ..., <f_p, l>)`, their flat and
//! intrinsic derivatives, and the generators acting on them.
//!
//! Flat derivatives use the uncentered representative
//! `delta u(l, x) = DF(...)^T f(x)`; no normalization against `l` is applied.

use std::fmt;
use std::sync::Arc;

use crate::measure_space::{pair, AtomicMeasure, MeasureError, TestFunction};
use crate::model::{features, transport_diffusion, Coefficients};

/// Outer function `F: R^p -> R` with gradient and Hessian (row-major).
pub trait OuterFunction: Send + Sync + fmt::Debug {
    fn arity(&self) -> usize;
    fn value(&self, y: &[f64]) -> f64;
    fn gradient(&self, y: &[f64], out: &mut [f64]);
    fn hessian(&self, y: &[f64], out: &mut [f64]);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// `offset + w . y`
#[derive(Debug, Clone)]
pub struct LinearOuter {
    pub offset: f64,
    pub weights: Vec<f64>,
}

impl OuterFunction for LinearOuter {
    fn arity(&self) -> usize {
        self.weights.len()
    }
    fn value(&self, y: &[f64]) -> f64 {
        self.offset + dot(&self.weights, y)
    }
    fn gradient(&self, _y: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.weights);
    }
    fn hessian(&self, _y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// `offset + w . y + 1/2 y^T Q y` with symmetric `Q`.
#[derive(Debug, Clone)]
pub struct QuadraticOuter {
    pub offset: f64,
    pub weights: Vec<f64>,
    pub matrix: Vec<f64>,
}

impl OuterFunction for QuadraticOuter {
    fn arity(&self) -> usize {
        self.weights.len()
    }
    fn value(&self, y: &[f64]) -> f64 {
        let p = self.arity();
        let mut quad = 0.0;
        for i in 0..p {
            for j in 0..p {
                quad += y[i] * self.matrix[i * p + j] * y[j];
            }
        }
        self.offset + dot(&self.weights, y) + 0.5 * quad
    }
    fn gradient(&self, y: &[f64], out: &mut [f64]) {
        let p = self.arity();
        for i in 0..p {
            out[i] = self.weights[i] + (0..p).map(|j| self.matrix[i * p + j] * y[j]).sum::<f64>();
        }
    }
    fn hessian(&self, _y: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.matrix);
    }
}

/// `scale * exp(offset + w . y)`
#[derive(Debug, Clone)]
pub struct ExpOuter {
    pub scale: f64,
    pub offset: f64,
    pub weights: Vec<f64>,
}

impl OuterFunction for ExpOuter {
    fn arity(&self) -> usize {
        self.weights.len()
    }
    fn value(&self, y: &[f64]) -> f64 {
        self.scale * (self.offset + dot(&self.weights, y)).exp()
    }
    fn gradient(&self, y: &[f64], out: &mut [f64]) {
        let v = self.value(y);
        for (o, w) in out.iter_mut().zip(&self.weights) {
            *o = v * w;
        }
    }
    fn hessian(&self, y: &[f64], out: &mut [f64]) {
        let v = self.value(y);
        let p = self.arity();
        for i in 0..p {
            for j in 0..p {
                out[i * p + j] = v * self.weights[i] * self.weights[j];
            }
        }
    }
}

/// `scale * sin(offset + w . y)`
#[derive(Debug, Clone)]
pub struct SineOuter {
    pub scale: f64,
    pub offset: f64,
    pub weights: Vec<f64>,
}

impl OuterFunction for SineOuter {
    fn arity(&self) -> usize {
        self.weights.len()
    }
    fn value(&self, y: &[f64]) -> f64 {
        self.scale * (self.offset + dot(&self.weights, y)).sin()
    }
    fn gradient(&self, y: &[f64], out: &mut [f64]) {
        let c = self.scale * (self.offset + dot(&self.weights, y)).cos();
        for (o, w) in out.iter_mut().zip(&self.weights) {
            *o = c * w;
        }
    }
    fn hessian(&self, y: &[f64], out: &mut [f64]) {
        let s = -self.value(y);
        let p = self.arity();
        for i in 0..p {
            for j in 0..p {
                out[i * p + j] = s * self.weights[i] * self.weights[j];
            }
        }
    }
}

/// `u(l) = F(<f_1, l>, ..., <f_p, l>)`
#[derive(Debug, Clone)]
pub struct CylindricalFunction {
    outer: Arc<dyn OuterFunction>,
    inner: Vec<TestFunction>,
}

/// Outer derivatives evaluated at the pairing vector of a fixed measure.
#[derive(Debug, Clone)]
pub struct OuterJet {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: Vec<f64>,
}

impl CylindricalFunction {
    pub fn new(outer: Arc<dyn OuterFunction>, inner: Vec<TestFunction>) -> Result<Self, MeasureError> {
        if outer.arity() != inner.len() {
            return Err(MeasureError::Configuration(format!(
                "outer function takes {} arguments but {} inner functions were given",
                outer.arity(),
                inner.len()
            )));
        }
        if let Some(f) = inner.iter().find(|f| f.dim() != inner[0].dim()) {
            return Err(MeasureError::DimensionMismatch {
                expected: inner[0].dim(),
                found: f.dim(),
            });
        }
        Ok(Self { outer, inner })
    }

    /// `<phi, .>`
    pub fn pairing(phi: TestFunction) -> Self {
        Self::new(
            Arc::new(LinearOuter {
                offset: 0.0,
                weights: vec![1.0],
            }),
            vec![phi],
        )
        .unwrap()
    }

    /// `F(<phi, .>)` for a one-argument outer function.
    pub fn of_pairing(outer: Arc<dyn OuterFunction>, phi: TestFunction) -> Result<Self, MeasureError> {
        Self::new(outer, vec![phi])
    }

    pub fn arity(&self) -> usize {
        self.inner.len()
    }

    pub fn outer(&self) -> &Arc<dyn OuterFunction> {
        &self.outer
    }

    pub fn inner(&self) -> &[TestFunction] {
        &self.inner
    }

    pub fn pairings(&self, lambda: &AtomicMeasure) -> Result<Vec<f64>, MeasureError> {
        self.inner.iter().map(|f| pair(f, lambda)).collect()
    }

    pub fn eval(&self, lambda: &AtomicMeasure) -> Result<f64, MeasureError> {
        Ok(self.outer.value(&self.pairings(lambda)?))
    }

    pub fn jet(&self, lambda: &AtomicMeasure) -> Result<OuterJet, MeasureError> {
        Ok(self.jet_at(&self.pairings(lambda)?))
    }

    pub fn jet_at(&self, y: &[f64]) -> OuterJet {
        let p = self.arity();
        let mut gradient = vec![0.0; p];
        let mut hessian = vec![0.0; p * p];
        self.outer.gradient(y, &mut gradient);
        self.outer.hessian(y, &mut hessian);
        OuterJet {
            value: self.outer.value(y),
            gradient,
            hessian,
        }
    }

    fn inner_values(&self, x: &[f64]) -> Vec<f64> {
        self.inner.iter().map(|f| f.eval(x)).collect()
    }

    pub fn flat_derivative(&self, lambda: &AtomicMeasure, x: &[f64]) -> Result<f64, MeasureError> {
        Ok(self.flat_derivative_with(&self.jet(lambda)?, x))
    }

    pub fn flat_derivative_with(&self, jet: &OuterJet, x: &[f64]) -> f64 {
        dot(&jet.gradient, &self.inner_values(x))
    }

    pub fn second_flat_derivative(&self, lambda: &AtomicMeasure, x: &[f64], y: &[f64]) -> Result<f64, MeasureError> {
        Ok(self.second_flat_derivative_with(&self.jet(lambda)?, x, y))
    }

    pub fn second_flat_derivative_with(&self, jet: &OuterJet, x: &[f64], y: &[f64]) -> f64 {
        let fx = self.inner_values(x);
        let fy = self.inner_values(y);
        let p = self.arity();
        let mut acc = 0.0;
        for i in 0..p {
            for j in 0..p {
                acc += fy[i] * jet.hessian[i * p + j] * fx[j];
            }
        }
        acc
    }

    /// `D_l u(l, x) = sum_j dF/dy_j Df_j(x)`
    pub fn intrinsic_derivative(&self, lambda: &AtomicMeasure, x: &[f64]) -> Result<Vec<f64>, MeasureError> {
        Ok(self.intrinsic_derivative_with(&self.jet(lambda)?, x))
    }

    pub fn intrinsic_derivative_with(&self, jet: &OuterJet, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        let mut out = vec![0.0; d];
        let mut g = vec![0.0; d];
        for (f, c) in self.inner.iter().zip(&jet.gradient) {
            f.grad(x, &mut g);
            for (o, v) in out.iter_mut().zip(&g) {
                *o += c * v;
            }
        }
        out
    }

    /// `d_x D_l u(l, x) = sum_j dF/dy_j D^2 f_j(x)`, row-major `d x d`.
    pub fn intrinsic_jacobian(&self, lambda: &AtomicMeasure, x: &[f64]) -> Result<Vec<f64>, MeasureError> {
        Ok(self.intrinsic_jacobian_with(&self.jet(lambda)?, x))
    }

    pub fn intrinsic_jacobian_with(&self, jet: &OuterJet, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        let mut out = vec![0.0; d * d];
        let mut h = vec![0.0; d * d];
        for (f, c) in self.inner.iter().zip(&jet.gradient) {
            f.hess(x, &mut h);
            for (o, v) in out.iter_mut().zip(&h) {
                *o += c * v;
            }
        }
        out
    }
}

/// `L u = b^T D_l u + 1/2 Tr(sigma sigma^T d_x D_l u) + 1/2 gamma delta^2 u(l, x, x)`
pub fn apply_bold_l(
    u: &CylindricalFunction,
    x: &[f64],
    lambda: &AtomicMeasure,
    a: &[f64],
    coeffs: &Coefficients,
) -> Result<f64, MeasureError> {
    let feat = features(lambda, coeffs)?;
    let jet = u.jet(lambda)?;
    Ok(apply_bold_l_with(u, &jet, x, &feat, a, coeffs))
}

pub fn apply_bold_l_with(
    u: &CylindricalFunction,
    jet: &OuterJet,
    x: &[f64],
    feat: &[f64],
    a: &[f64],
    coeffs: &Coefficients,
) -> f64 {
    let grad = u.intrinsic_derivative_with(jet, x);
    let jac = u.intrinsic_jacobian_with(jet, x);
    let gamma = coeffs.branching_rate(x, feat, a);
    transport_diffusion(&grad, &jac, x, feat, a, coeffs) + 0.5 * gamma * u.second_flat_derivative_with(jet, x, x)
}

/// Superprocess generator on `F(<phi, .>)`:
/// `F'(<phi,l>) L phi + 1/2 F''(<phi,l>) gamma phi(x)^2`.
pub fn apply_limit_generator(
    outer: &dyn OuterFunction,
    phi: &TestFunction,
    x: &[f64],
    lambda: &AtomicMeasure,
    a: &[f64],
    coeffs: &Coefficients,
) -> Result<f64, MeasureError> {
    let y = pair(phi, lambda)?;
    let feat = features(lambda, coeffs)?;
    let (d1, d2) = scalar_derivatives(outer, y);
    let lphi = crate::model::generator_l_with_features(phi, x, &feat, a, coeffs)
        .map_err(|e| MeasureError::InvalidMeasure(e.to_string()))?;
    let p = phi.eval(x);
    Ok(d1 * lphi + 0.5 * d2 * coeffs.branching_rate(x, &feat, a) * p * p)
}

fn scalar_derivatives(outer: &dyn OuterFunction, y: f64) -> (f64, f64) {
    let mut g = [0.0];
    let mut h = [0.0];
    outer.gradient(&[y], &mut g);
    outer.hessian(&[y], &mut h);
    (g[0], h[0])
}

/// Generator of the level-`n` branching diffusion on `F(<phi, .>)`:
///
/// ```text
/// F' L phi + 1/(2n) F'' |Dphi sigma|^2
///   + gamma n^2 [ F(y - phi/n)/2 + F(y + phi/n)/2 - F(y) ]
/// ```
pub fn apply_l_n(
    outer: &dyn OuterFunction,
    phi: &TestFunction,
    x: &[f64],
    lambda: &AtomicMeasure,
    a: &[f64],
    n: u64,
    coeffs: &Coefficients,
) -> Result<f64, MeasureError> {
    assert!(n >= 1, "level must be >= 1");
    let y = pair(phi, lambda)?;
    let feat = features(lambda, coeffs)?;
    Ok(apply_l_n_at(outer, phi, y, x, &feat, a, n, coeffs))
}

/// [`apply_l_n`] with the pairing `y = <phi, l>` and features precomputed.
#[allow(clippy::too_many_arguments)]
pub fn apply_l_n_at(
    outer: &dyn OuterFunction,
    phi: &TestFunction,
    y: f64,
    x: &[f64],
    feat: &[f64],
    a: &[f64],
    n: u64,
    coeffs: &Coefficients,
) -> f64 {
    let d = coeffs.dim_x();
    let (d1, d2) = scalar_derivatives(outer, y);
    let mut grad = vec![0.0; d];
    let mut hess = vec![0.0; d * d];
    phi.grad(x, &mut grad);
    phi.hess(x, &mut hess);
    let lphi = transport_diffusion(&grad, &hess, x, feat, a, coeffs);
    let nf = n as f64;
    let motion_noise = grad_sigma_sq(&grad, x, feat, a, coeffs);
    let p = phi.eval(x) / nf;
    let f0 = outer.value(&[y]);
    let jump = 0.5 * outer.value(&[y - p]) + 0.5 * outer.value(&[y + p]) - f0;
    d1 * lphi + 0.5 / nf * d2 * motion_noise + coeffs.branching_rate(x, feat, a) * nf * nf * jump
}

/// `|Dphi(x) sigma(x, ., a)|^2`
pub(crate) fn grad_sigma_sq(grad: &[f64], x: &[f64], feat: &[f64], a: &[f64], coeffs: &Coefficients) -> f64 {
    if coeffs.volatility_is_zero() {
        return 0.0;
    }
    let (d, e) = (coeffs.dim_x(), coeffs.dim_noise());
    let mut s = vec![0.0; d * e];
    coeffs.volatility(x, feat, a, &mut s);
    (0..e)
        .map(|k| {
            let v: f64 = (0..d).map(|i| grad[i] * s[i * e + k]).sum();
            v * v
        })
        .sum()
}
