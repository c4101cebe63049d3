//! Problem data: coefficients `b`, `sigma`, `gamma`, the control grid, costs
//! and feedback policies, plus the spatial generator
//! `L phi = b . Dphi + 1/2 Tr(sigma sigma^T D^2 phi)`.
//!
//! Measure dependence enters only through a finite feature vector
//! `(<f_j, mu>)_{j<F}`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measure_space::{pair, AtomicMeasure, MeasureError, NormBox, SeparatingFamily, TestFunction};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("non-finite {what} at x={x:?}, a={a:?}")]
    InvalidFunction {
        what: &'static str,
        x: Vec<f64>,
        a: Vec<f64>,
    },
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// Built-in scalar coefficient shapes available from config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientSpec {
    Constant {
        value: f64,
    },
    /// `constant + x.slope_x + a.slope_action + features.slope_features`
    Affine {
        constant: f64,
        #[serde(default)]
        x: Vec<f64>,
        #[serde(default)]
        action: Vec<f64>,
        #[serde(default)]
        features: Vec<f64>,
    },
    /// Piecewise-linear in coordinate `axis` of x, clamped outside the table.
    Table {
        axis: usize,
        xs: Vec<f64>,
        values: Vec<f64>,
    },
}

type CustomCoefficient = dyn Fn(&[f64], &[f64], &[f64]) -> f64 + Send + Sync;

/// A scalar map `(x, features, a) -> R`.
#[derive(Clone)]
pub enum ScalarCoefficient {
    Spec(CoefficientSpec),
    Custom(Arc<CustomCoefficient>),
}

impl fmt::Debug for ScalarCoefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Spec(s) => write!(f, "{s:?}"),
            Self::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl From<CoefficientSpec> for ScalarCoefficient {
    fn from(s: CoefficientSpec) -> Self {
        Self::Spec(s)
    }
}

impl ScalarCoefficient {
    pub fn constant(value: f64) -> Self {
        Self::Spec(CoefficientSpec::Constant { value })
    }

    /// `gain * a[0]`
    pub fn control_linear(gain: f64) -> Self {
        Self::Spec(CoefficientSpec::Affine {
            constant: 0.0,
            x: vec![],
            action: vec![gain],
            features: vec![],
        })
    }

    pub fn custom(f: impl Fn(&[f64], &[f64], &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self::Custom(Arc::new(f))
    }

    fn is_zero_constant(&self) -> bool {
        matches!(self, Self::Spec(CoefficientSpec::Constant { value }) if *value == 0.0)
    }

    #[inline]
    pub fn eval(&self, x: &[f64], features: &[f64], a: &[f64]) -> f64 {
        match self {
            Self::Spec(CoefficientSpec::Constant { value }) => *value,
            Self::Spec(CoefficientSpec::Affine {
                constant,
                x: sx,
                action,
                features: sf,
            }) => {
                let dot = |w: &[f64], v: &[f64]| -> f64 { w.iter().zip(v).map(|(p, q)| p * q).sum() };
                constant + dot(sx, x) + dot(action, a) + dot(sf, features)
            }
            Self::Spec(CoefficientSpec::Table { axis, xs, values }) => interp_clamped(xs, values, x[*axis]),
            Self::Custom(f) => f(x, features, a),
        }
    }

    fn validate(&self, dim_x: usize, dim_a: usize, n_feat: usize) -> Result<(), ModelError> {
        match self {
            Self::Spec(CoefficientSpec::Affine {
                x, action, features, ..
            }) => {
                if x.len() > dim_x || action.len() > dim_a || features.len() > n_feat {
                    return Err(ModelError::Configuration(
                        "affine coefficient has more slopes than dimensions".into(),
                    ));
                }
            }
            Self::Spec(CoefficientSpec::Table { axis, xs, values }) => {
                if *axis >= dim_x || xs.len() < 2 || xs.len() != values.len() || xs.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(ModelError::Configuration("malformed coefficient table".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

fn interp_clamped(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    let i = xs.partition_point(|&v| v <= x) - 1;
    let t = (x - xs[i]) / (xs[i + 1] - xs[i]);
    ys[i] + t * (ys[i + 1] - ys[i])
}

/// Declared sup-norm bounds and Lipschitz constant, audited by sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientBounds {
    pub drift: f64,
    pub volatility: f64,
    pub branching: f64,
    pub lipschitz: f64,
}

impl Default for CoefficientBounds {
    fn default() -> Self {
        Self {
            drift: 10.0,
            volatility: 10.0,
            branching: 10.0,
            lipschitz: 10.0,
        }
    }
}

/// Coefficients `b: R^d`, `sigma: R^{d x d'}` (row-major) and `gamma >= 0`.
#[derive(Debug, Clone)]
pub struct Coefficients {
    dim_x: usize,
    dim_noise: usize,
    dim_action: usize,
    drift: Vec<ScalarCoefficient>,
    volatility: Vec<ScalarCoefficient>,
    branching: ScalarCoefficient,
    feature_functions: Vec<TestFunction>,
    bounds: CoefficientBounds,
    drift_zero: bool,
    volatility_zero: bool,
}

impl Coefficients {
    pub fn new(
        dim_x: usize,
        dim_noise: usize,
        dim_action: usize,
        drift: Vec<ScalarCoefficient>,
        volatility: Vec<ScalarCoefficient>,
        branching: ScalarCoefficient,
    ) -> Result<Self, ModelError> {
        if drift.len() != dim_x {
            return Err(ModelError::Configuration(format!(
                "drift has {} components, expected {dim_x}",
                drift.len()
            )));
        }
        if volatility.len() != dim_x * dim_noise {
            return Err(ModelError::Configuration(format!(
                "volatility has {} entries, expected {}",
                volatility.len(),
                dim_x * dim_noise
            )));
        }
        let drift_zero = drift.iter().all(ScalarCoefficient::is_zero_constant);
        let volatility_zero = volatility.iter().all(ScalarCoefficient::is_zero_constant);
        let c = Self {
            dim_x,
            dim_noise,
            dim_action,
            drift,
            volatility,
            branching,
            feature_functions: Vec::new(),
            bounds: CoefficientBounds::default(),
            drift_zero,
            volatility_zero,
        };
        c.validate()?;
        Ok(c)
    }

    /// One-dimensional, measure-free coefficients.
    pub fn scalar(drift: ScalarCoefficient, volatility: ScalarCoefficient, branching: ScalarCoefficient) -> Self {
        Self::new(1, 1, 1, vec![drift], vec![volatility], branching).expect("scalar coefficients are well-formed")
    }

    /// `b = b0`, `sigma = s0`, `gamma = g0` on the line.
    pub fn constant_1d(b0: f64, s0: f64, g0: f64) -> Self {
        Self::scalar(
            ScalarCoefficient::constant(b0),
            ScalarCoefficient::constant(s0),
            ScalarCoefficient::constant(g0),
        )
    }

    pub fn with_features(mut self, features: Vec<TestFunction>) -> Result<Self, ModelError> {
        if let Some(f) = features.iter().find(|f| f.dim() != self.dim_x) {
            return Err(ModelError::Configuration(format!(
                "feature function has dimension {}, expected {}",
                f.dim(),
                self.dim_x
            )));
        }
        self.feature_functions = features;
        self.validate()?;
        Ok(self)
    }

    pub fn with_bounds(mut self, bounds: CoefficientBounds) -> Self {
        self.bounds = bounds;
        self
    }

    fn validate(&self) -> Result<(), ModelError> {
        let nf = self.feature_functions.len();
        for c in self.drift.iter().chain(&self.volatility).chain(std::iter::once(&self.branching)) {
            c.validate(self.dim_x, self.dim_action, nf)?;
        }
        Ok(())
    }

    pub fn dim_x(&self) -> usize {
        self.dim_x
    }
    pub fn dim_noise(&self) -> usize {
        self.dim_noise
    }
    pub fn dim_action(&self) -> usize {
        self.dim_action
    }
    pub fn bounds(&self) -> CoefficientBounds {
        self.bounds
    }
    pub fn feature_functions(&self) -> &[TestFunction] {
        &self.feature_functions
    }
    pub fn is_measure_free(&self) -> bool {
        self.feature_functions.is_empty()
    }
    pub fn drift_is_zero(&self) -> bool {
        self.drift_zero
    }
    pub fn volatility_is_zero(&self) -> bool {
        self.volatility_zero
    }

    #[inline]
    pub fn drift(&self, x: &[f64], feat: &[f64], a: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.drift) {
            *o = c.eval(x, feat, a);
        }
    }

    #[inline]
    pub fn volatility(&self, x: &[f64], feat: &[f64], a: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.volatility) {
            *o = c.eval(x, feat, a);
        }
    }

    #[inline]
    pub fn branching_rate(&self, x: &[f64], feat: &[f64], a: &[f64]) -> f64 {
        self.branching.eval(x, feat, a)
    }

    /// `sigma sigma^T` as a row-major `d x d` matrix.
    pub fn diffusion_matrix(&self, x: &[f64], feat: &[f64], a: &[f64]) -> Vec<f64> {
        let (d, e) = (self.dim_x, self.dim_noise);
        let mut s = vec![0.0; d * e];
        self.volatility(x, feat, a, &mut s);
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = (0..e).map(|k| s[i * e + k] * s[j * e + k]).sum();
            }
        }
        out
    }

    /// Samples coefficients on `domain x controls` and checks the declared
    /// hypotheses: finiteness, `gamma >= 0`, sup bounds and Lipschitz constant.
    pub fn audit(&self, domain: &NormBox, controls: &ControlSet, samples: usize, seed: u64) -> CoefficientAudit {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.dim_x;
        let nf = self.feature_functions.len();
        let mut report = CoefficientAudit {
            samples,
            all_finite: true,
            min_branching: f64::INFINITY,
            max_drift: 0.0,
            max_volatility: 0.0,
            max_branching: 0.0,
            lipschitz_estimate: 0.0,
            passed: false,
        };
        let mut b1 = vec![0.0; d];
        let mut b2 = vec![0.0; d];
        let mut s1 = vec![0.0; d * self.dim_noise];
        let mut s2 = vec![0.0; d * self.dim_noise];
        let draw_x = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..d)
                .map(|k| rng.random_range(domain.lower[k]..=domain.upper[k]))
                .collect()
        };
        for _ in 0..samples {
            let a = &controls.points[rng.random_range(0..controls.len())];
            let x1 = draw_x(&mut rng);
            let x2 = draw_x(&mut rng);
            let f1: Vec<f64> = (0..nf).map(|_| rng.random_range(0.0..2.0)).collect();
            let f2: Vec<f64> = (0..nf).map(|_| rng.random_range(0.0..2.0)).collect();
            self.drift(&x1, &f1, a, &mut b1);
            self.drift(&x2, &f2, a, &mut b2);
            self.volatility(&x1, &f1, a, &mut s1);
            self.volatility(&x2, &f2, a, &mut s2);
            let g = self.branching_rate(&x1, &f1, a);
            let finite = b1.iter().chain(&s1).chain(std::iter::once(&g)).all(|v| v.is_finite());
            report.all_finite &= finite;
            report.min_branching = report.min_branching.min(g);
            report.max_branching = report.max_branching.max(g.abs());
            report.max_drift = report.max_drift.max(norm(&b1));
            report.max_volatility = report.max_volatility.max(norm(&s1));
            let dist: f64 = x1.iter().zip(&x2).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
                + f1.iter().zip(&f2).map(|(p, q)| (p - q).abs()).sum::<f64>();
            if dist > 1e-12 {
                let diff = norm_diff(&b1, &b2) + norm_diff(&s1, &s2);
                report.lipschitz_estimate = report.lipschitz_estimate.max(diff / dist);
            }
        }
        let b = self.bounds;
        report.passed = report.all_finite
            && report.min_branching >= 0.0
            && report.max_drift <= b.drift
            && report.max_volatility <= b.volatility
            && report.max_branching <= b.branching
            && report.lipschitz_estimate <= b.lipschitz;
        report
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientAudit {
    pub samples: usize,
    pub all_finite: bool,
    pub min_branching: f64,
    pub max_drift: f64,
    pub max_volatility: f64,
    pub max_branching: f64,
    pub lipschitz_estimate: f64,
    pub passed: bool,
}

/// Finite grid over the compact action set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSet {
    points: Vec<Vec<f64>>,
}

impl ControlSet {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        let dim = points
            .first()
            .ok_or_else(|| ModelError::Configuration("control set is empty".into()))?
            .len();
        if points.iter().any(|p| p.len() != dim || p.iter().any(|v| !v.is_finite())) {
            return Err(ModelError::Configuration("control points must share a finite dimension".into()));
        }
        Ok(Self { points })
    }

    /// Like [`ControlSet::new`] but also checks membership in a box.
    pub fn within_box(points: Vec<Vec<f64>>, lower: &[f64], upper: &[f64]) -> Result<Self, ModelError> {
        let set = Self::new(points)?;
        for p in &set.points {
            if p.iter().zip(lower.iter().zip(upper)).any(|(v, (lo, hi))| v < lo || v > hi) {
                return Err(ModelError::Configuration(format!("control {p:?} outside the declared box")));
            }
        }
        Ok(set)
    }

    pub fn scalars(values: &[f64]) -> Self {
        Self::new(values.iter().map(|v| vec![*v]).collect()).expect("nonempty scalar control set")
    }

    pub fn singleton(dim: usize) -> Self {
        Self::new(vec![vec![0.0; dim]]).unwrap()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Index of the nearest control point; ties go to the lowest index.
    pub fn nearest(&self, a: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d: f64 = p.iter().zip(a).map(|(x, y)| (x - y).powi(2)).sum();
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }
}

/// Terminal cost `Psi` as a composition of pairings.
#[derive(Debug, Clone)]
pub enum TerminalCost {
    Zero,
    Constant(f64),
    /// `exp(-<h, lambda>)`
    ExpNegPairing(TestFunction),
    /// `<h, lambda>`
    Pairing(TestFunction),
}

impl TerminalCost {
    pub fn eval(&self, lambda: &AtomicMeasure) -> Result<f64, MeasureError> {
        Ok(match self {
            Self::Zero => 0.0,
            Self::Constant(c) => *c,
            Self::ExpNegPairing(h) => (-pair(h, lambda)?).exp(),
            Self::Pairing(h) => pair(h, lambda)?,
        })
    }
}

/// Running cost `psi(x, features, a)`, terminal cost `Psi` and the growth
/// constant `C` of `|psi| <= C (1 + d(l, 0))`, `|Psi| <= C (1 + d(l, 0)^2)`.
#[derive(Debug, Clone)]
pub struct CostSpec {
    pub running: Option<ScalarCoefficient>,
    pub terminal: TerminalCost,
    pub growth_constant: f64,
}

impl CostSpec {
    /// `psi = 0`, `Psi = exp(-<h, .>)`.
    pub fn exponential(h: TestFunction) -> Self {
        Self {
            running: None,
            terminal: TerminalCost::ExpNegPairing(h),
            growth_constant: 1.0,
        }
    }

    pub fn is_exponential(&self) -> bool {
        self.running.is_none() && matches!(self.terminal, TerminalCost::ExpNegPairing(_))
    }

    /// Empirical growth audit on the given states; returns the worst ratios
    /// `|psi| / (1 + d)` and `|Psi| / (1 + d^2)` and whether both stay `<= C`.
    pub fn audit_growth(
        &self,
        states: &[AtomicMeasure],
        family: &SeparatingFamily,
        coeffs: &Coefficients,
        controls: &ControlSet,
    ) -> Result<GrowthAudit, ModelError> {
        let mut audit = GrowthAudit {
            running_ratio: 0.0,
            terminal_ratio: 0.0,
            passed: false,
        };
        for lambda in states {
            let d0 = family.distance_to_zero_from_pairings(&family.pairings(lambda)?);
            let feat = features(lambda, coeffs)?;
            if let Some(psi) = &self.running {
                for (x, _) in lambda.atoms() {
                    for a in controls.points() {
                        let v = psi.eval(x, &feat, a).abs();
                        audit.running_ratio = audit.running_ratio.max(v / (1.0 + d0));
                    }
                }
            }
            let v = self.terminal.eval(lambda)?.abs();
            audit.terminal_ratio = audit.terminal_ratio.max(v / (1.0 + d0 * d0));
        }
        audit.passed = audit.running_ratio <= self.growth_constant && audit.terminal_ratio <= self.growth_constant;
        Ok(audit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthAudit {
    pub running_ratio: f64,
    pub terminal_ratio: f64,
    pub passed: bool,
}

/// Tabulated feedback on a space-time grid (one-dimensional state).
#[derive(Debug, Clone)]
pub struct PolicyTable {
    pub t0: f64,
    pub dt: f64,
    pub nt: usize,
    pub x_min: f64,
    pub dx: f64,
    pub nx: usize,
    /// Row-major `nt x nx` control indices.
    pub indices: Vec<usize>,
    pub controls: ControlSet,
}

impl PolicyTable {
    /// Nearest time node; linear interpolation of control values in x,
    /// then projection onto the nearest control point.
    pub fn lookup(&self, t: f64, x: f64) -> usize {
        let k = if self.nt <= 1 || self.dt <= 0.0 {
            0
        } else {
            ((t - self.t0) / self.dt).round().clamp(0.0, (self.nt - 1) as f64) as usize
        };
        let row = &self.indices[k * self.nx..(k + 1) * self.nx];
        if self.nx == 1 {
            return row[0];
        }
        let s = ((x - self.x_min) / self.dx).clamp(0.0, (self.nx - 1) as f64);
        let i = (s.floor() as usize).min(self.nx - 2);
        let frac = s - i as f64;
        let (lo, hi) = (row[i], row[i + 1]);
        if lo == hi {
            return lo;
        }
        let a: Vec<f64> = self
            .controls
            .point(lo)
            .iter()
            .zip(self.controls.point(hi))
            .map(|(p, q)| (1.0 - frac) * p + frac * q)
            .collect();
        self.controls.nearest(&a)
    }
}

type PolicyRule = dyn Fn(f64, &[f64], &[f64]) -> usize + Send + Sync;

/// Markov feedback `(t, x, features) -> control index`.
#[derive(Clone)]
pub enum FeedbackPolicy {
    Constant(usize),
    Tabulated(Arc<PolicyTable>),
    Callable(Arc<PolicyRule>),
}

impl fmt::Debug for FeedbackPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(i) => write!(f, "Constant({i})"),
            Self::Tabulated(t) => write!(f, "Tabulated({}x{})", t.nt, t.nx),
            Self::Callable(_) => f.write_str("Callable(..)"),
        }
    }
}

impl FeedbackPolicy {
    pub fn callable(rule: impl Fn(f64, &[f64], &[f64]) -> usize + Send + Sync + 'static) -> Self {
        Self::Callable(Arc::new(rule))
    }

    /// Control index at `(t, x, features)`, clamped to the control set.
    #[inline]
    pub fn action(&self, t: f64, x: &[f64], features: &[f64], controls: &ControlSet) -> usize {
        let i = match self {
            Self::Constant(i) => *i,
            Self::Tabulated(table) => table.lookup(t, x[0]),
            Self::Callable(rule) => rule(t, x, features),
        };
        i.min(controls.len() - 1)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Constant(_) => "constant-action",
            Self::Tabulated(_) => "tabulated-surface",
            Self::Callable(_) => "callable-rule",
        }
    }
}

/// `(<f_j, mu>)_{j<F}`
pub fn features(mu: &AtomicMeasure, coeffs: &Coefficients) -> Result<Vec<f64>, MeasureError> {
    coeffs.feature_functions.iter().map(|f| pair(f, mu)).collect()
}

/// `L phi(x, mu, a) = b^T Dphi(x) + 1/2 Tr(sigma sigma^T D^2 phi(x))`
pub fn generator_l(
    phi: &TestFunction,
    x: &[f64],
    mu: &AtomicMeasure,
    a: &[f64],
    coeffs: &Coefficients,
) -> Result<f64, ModelError> {
    let feat = features(mu, coeffs)?;
    generator_l_with_features(phi, x, &feat, a, coeffs)
}

pub fn generator_l_with_features(
    phi: &TestFunction,
    x: &[f64],
    feat: &[f64],
    a: &[f64],
    coeffs: &Coefficients,
) -> Result<f64, ModelError> {
    let d = coeffs.dim_x;
    let mut grad = vec![0.0; d];
    let mut hess = vec![0.0; d * d];
    phi.grad(x, &mut grad);
    phi.hess(x, &mut hess);
    if grad.iter().chain(&hess).any(|v| !v.is_finite()) {
        return Err(ModelError::InvalidFunction {
            what: "test-function derivative",
            x: x.to_vec(),
            a: a.to_vec(),
        });
    }
    Ok(transport_diffusion(&grad, &hess, x, feat, a, coeffs))
}

/// `b . g + 1/2 Tr(sigma sigma^T H)` for a given gradient and Hessian.
pub(crate) fn transport_diffusion(
    grad: &[f64],
    hess: &[f64],
    x: &[f64],
    feat: &[f64],
    a: &[f64],
    coeffs: &Coefficients,
) -> f64 {
    let d = coeffs.dim_x;
    let mut out = 0.0;
    if !coeffs.drift_zero {
        let mut b = vec![0.0; d];
        coeffs.drift(x, feat, a, &mut b);
        out += b.iter().zip(grad).map(|(p, q)| p * q).sum::<f64>();
    }
    if !coeffs.volatility_zero {
        let ss = coeffs.diffusion_matrix(x, feat, a);
        out += 0.5 * ss.iter().zip(hess).map(|(p, q)| p * q).sum::<f64>();
    }
    out
}
