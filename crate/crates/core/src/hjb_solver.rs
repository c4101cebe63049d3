//! Backward solver for the one-dimensional PDE
//!
//! ```text
//! -d_t w - max_a { b w_x + 1/2 sigma^2 w_xx - 1/2 gamma w^2 } = 0,   w(T) = h,
//! ```
//!
//! whose solution gives the value of the exponential-cost problem through
//! `v(t, l) = exp(-<w(t, .), l>)`.
//!
//! Transport and diffusion are explicit (upwind first derivative, centered
//! second derivative); the reaction term is linearly implicit,
//! `w_k = (w_{k+1} + dt H_a(w_{k+1})) / (1 + gamma dt w_{k+1} / 2)`,
//! which integrates the pure Riccati case exactly.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measure_space::{AtomicMeasure, MeasureError, TestFunction};
use crate::model::{Coefficients, ControlSet, FeedbackPolicy, PolicyTable};

/// Largest admissible `dt (sigma^2_max / dx^2 + |b|_max / dx)`.
pub const STABILITY_LIMIT: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HjbError {
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error("explicit scheme unstable: dt*(sigma^2/dx^2 + |b|/dx) = {ratio:.4} > {STABILITY_LIMIT}")]
    Unstable { ratio: f64 },
    #[error("scheme failure: w = {w} at t={t}, x={x}")]
    SchemeFailure { t: f64, x: f64, w: f64 },
    #[error("atom at x={x} outside the grid [{x_min}, {x_max}]")]
    OutOfDomain { x: f64, x_min: f64, x_max: f64 },
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Zero normal derivative.
    #[default]
    Reflecting,
    /// Edge values copied from their neighbours.
    Clamped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub t0: f64,
    pub t_end: f64,
    /// Number of time nodes including both ends.
    pub nt: usize,
    #[serde(default)]
    pub boundary: Boundary,
}

impl GridSpec {
    pub fn new(x_min: f64, x_max: f64, nx: usize, t0: f64, t_end: f64, nt: usize) -> Result<Self, HjbError> {
        let g = Self {
            x_min,
            x_max,
            nx,
            t0,
            t_end,
            nt,
            boundary: Boundary::Reflecting,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), HjbError> {
        let bad = |m: String| Err(HjbError::Configuration(m));
        if self.nx < 3 {
            return bad(format!("nx = {} < 3", self.nx));
        }
        if !(self.x_max > self.x_min) {
            return bad("x_max must exceed x_min".into());
        }
        if self.nt == 0 {
            return bad("nt must be >= 1".into());
        }
        if self.nt == 1 && self.t_end != self.t0 {
            return bad("nt = 1 requires t0 = t_end".into());
        }
        if self.nt > 1 && !(self.t_end > self.t0) {
            return bad("t_end must exceed t0".into());
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nx - 1) as f64
    }

    pub fn dt(&self) -> f64 {
        if self.nt <= 1 {
            0.0
        } else {
            (self.t_end - self.t0) / (self.nt - 1) as f64
        }
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx()
    }

    pub fn t(&self, k: usize) -> f64 {
        if k + 1 == self.nt {
            self.t_end
        } else {
            self.t0 + k as f64 * self.dt()
        }
    }
}

/// Solved `w` and the maximizing control index on every node.
#[derive(Debug, Clone)]
pub struct ValueSurface {
    pub grid: GridSpec,
    pub controls: ControlSet,
    /// Row-major `nt x nx`.
    pub w: Vec<f64>,
    pub policy: Vec<usize>,
    pub terminal: TestFunction,
}

impl ValueSurface {
    pub fn w_at(&self, k: usize, i: usize) -> f64 {
        self.w[k * self.grid.nx + i]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.w[k * self.grid.nx..(k + 1) * self.grid.nx]
    }

    pub fn policy_at(&self, k: usize, i: usize) -> usize {
        self.policy[k * self.grid.nx + i]
    }

    /// Nearest time node to `t`.
    pub fn time_index(&self, t: f64) -> usize {
        let g = &self.grid;
        if g.nt <= 1 {
            return 0;
        }
        ((t - g.t0) / g.dt()).round().clamp(0.0, (g.nt - 1) as f64) as usize
    }

    /// Linear interpolation of `w(t_k, .)` at `x`.
    pub fn interpolate(&self, k: usize, x: f64) -> Result<f64, HjbError> {
        let g = &self.grid;
        if !(x >= g.x_min && x <= g.x_max) {
            return Err(HjbError::OutOfDomain {
                x,
                x_min: g.x_min,
                x_max: g.x_max,
            });
        }
        let s = (x - g.x_min) / g.dx();
        let i = (s.floor() as usize).min(g.nx - 2);
        let f = s - i as f64;
        let row = self.row(k);
        Ok((1.0 - f) * row[i] + f * row[i + 1])
    }
}

/// Per-node, per-control coefficient tables (`b`, `sigma^2`, `gamma`).
struct NodeCoefficients {
    b: Vec<f64>,
    s2: Vec<f64>,
    g: Vec<f64>,
}

fn tabulate(coeffs: &Coefficients, grid: &GridSpec, controls: &ControlSet) -> Result<NodeCoefficients, HjbError> {
    let nc = controls.len();
    let mut t = NodeCoefficients {
        b: vec![0.0; nc * grid.nx],
        s2: vec![0.0; nc * grid.nx],
        g: vec![0.0; nc * grid.nx],
    };
    let mut b = [0.0];
    for c in 0..nc {
        let a = controls.point(c);
        for i in 0..grid.nx {
            let x = [grid.x(i)];
            coeffs.drift(&x, &[], a, &mut b);
            let s2 = coeffs.diffusion_matrix(&x, &[], a)[0];
            let g = coeffs.branching_rate(&x, &[], a);
            if !(b[0].is_finite() && s2.is_finite() && g.is_finite()) {
                return Err(HjbError::Configuration(format!("non-finite coefficient at x={}, a={a:?}", x[0])));
            }
            if g < 0.0 {
                return Err(HjbError::Configuration(format!("gamma = {g} < 0 at x={}, a={a:?}", x[0])));
            }
            t.b[c * grid.nx + i] = b[0];
            t.s2[c * grid.nx + i] = s2;
            t.g[c * grid.nx + i] = g;
        }
    }
    Ok(t)
}

/// Upwind first derivative and centered second derivative at node `i`.
fn derivatives(w: &[f64], i: usize, b: f64, dx: f64, boundary: Boundary) -> (f64, f64) {
    let n = w.len();
    if i == 0 || i == n - 1 {
        return match boundary {
            Boundary::Reflecting => {
                let j = if i == 0 { 1 } else { n - 2 };
                (0.0, 2.0 * (w[j] - w[i]) / (dx * dx))
            }
            Boundary::Clamped => (0.0, 0.0),
        };
    }
    let d1 = if b > 0.0 {
        (w[i + 1] - w[i]) / dx
    } else {
        (w[i] - w[i - 1]) / dx
    };
    (d1, (w[i + 1] - 2.0 * w[i] + w[i - 1]) / (dx * dx))
}

/// `(argmax, max)` of `b w_x + 1/2 sigma^2 w_xx - 1/2 gamma w^2` over the
/// control set; ties go to the lowest index.
fn hamiltonian_argmax(w: &[f64], i: usize, dx: f64, boundary: Boundary, tab: &NodeCoefficients, nx: usize, nc: usize) -> (usize, f64) {
    let mut best = (0usize, f64::NEG_INFINITY);
    for c in 0..nc {
        let j = c * nx + i;
        let (d1, d2) = derivatives(w, i, tab.b[j], dx, boundary);
        let h = tab.b[j] * d1 + 0.5 * tab.s2[j] * d2 - 0.5 * tab.g[j] * w[i] * w[i];
        if h > best.1 {
            best = (c, h);
        }
    }
    best
}

fn check_inputs(coeffs: &Coefficients, h: &TestFunction, grid: &GridSpec, controls: &ControlSet) -> Result<(), HjbError> {
    grid.validate()?;
    if coeffs.dim_x() != 1 || h.dim() != 1 {
        return Err(HjbError::Configuration("the solver supports one spatial dimension".into()));
    }
    if !coeffs.is_measure_free() {
        return Err(HjbError::Configuration("coefficients must not depend on the measure".into()));
    }
    if controls.dim() != coeffs.dim_action() {
        return Err(HjbError::Configuration("control dimension does not match coefficients".into()));
    }
    Ok(())
}

fn stability_ratio(tab: &NodeCoefficients, grid: &GridSpec) -> f64 {
    let s2 = tab.s2.iter().cloned().fold(0.0, f64::max);
    let b = tab.b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let dx = grid.dx();
    grid.dt() * (s2 / (dx * dx) + b / dx)
}

/// Solves backwards from `w(T) = h`.
pub fn solve_w(coeffs: &Coefficients, h: &TestFunction, grid: &GridSpec, controls: &ControlSet) -> Result<ValueSurface, HjbError> {
    check_inputs(coeffs, h, grid, controls)?;
    let tab = tabulate(coeffs, grid, controls)?;
    let ratio = stability_ratio(&tab, grid);
    if ratio > STABILITY_LIMIT {
        return Err(HjbError::Unstable { ratio });
    }
    if tab.s2.iter().any(|v| *v <= 0.0) {
        log::info!("diffusion vanishes somewhere on the grid; the equation is not uniformly elliptic");
    }
    let (nx, nt, nc) = (grid.nx, grid.nt, controls.len());
    let (dx, dt) = (grid.dx(), grid.dt());
    let mut w = vec![0.0; nt * nx];
    let mut policy = vec![0usize; nt * nx];
    for i in 0..nx {
        let v = h.eval(&[grid.x(i)]);
        if !(v >= 0.0) {
            return Err(HjbError::Configuration(format!("terminal function is {v} < 0 at x={}", grid.x(i))));
        }
        w[(nt - 1) * nx + i] = v;
    }
    {
        let last = &w[(nt - 1) * nx..];
        for i in 0..nx {
            policy[(nt - 1) * nx + i] = hamiltonian_argmax(last, i, dx, grid.boundary, &tab, nx, nc).0;
        }
    }
    for k in (0..nt - 1).rev() {
        let (head, tail) = w.split_at_mut((k + 1) * nx);
        let next = &tail[..nx];
        let cur = &mut head[k * nx..];
        for i in 0..nx {
            let (c, _) = hamiltonian_argmax(next, i, dx, grid.boundary, &tab, nx, nc);
            let j = c * nx + i;
            let (d1, d2) = derivatives(next, i, tab.b[j], dx, grid.boundary);
            let explicit = next[i] + dt * (tab.b[j] * d1 + 0.5 * tab.s2[j] * d2);
            cur[i] = explicit / (1.0 + 0.5 * tab.g[j] * dt * next[i]);
            policy[k * nx + i] = c;
        }
        if grid.boundary == Boundary::Clamped {
            cur[0] = cur[1];
            cur[nx - 1] = cur[nx - 2];
        }
        for i in 0..nx {
            if !cur[i].is_finite() || cur[i] < -1e-10 {
                return Err(HjbError::SchemeFailure {
                    t: grid.t(k),
                    x: grid.x(i),
                    w: cur[i],
                });
            }
        }
    }
    Ok(ValueSurface {
        grid: *grid,
        controls: controls.clone(),
        w,
        policy,
        terminal: h.clone(),
    })
}

/// Solves for `w~ = e^{-t} w`, which satisfies
/// `-d_t w~ - w~ - max_a { L w~ - 1/2 gamma e^t w~^2 } = 0`, `w~(T) = e^{-T} h`,
/// and maps the result back to `w`. Cross-check of [`solve_w`].
pub fn solve_w_via_discounted(
    coeffs: &Coefficients,
    h: &TestFunction,
    grid: &GridSpec,
    controls: &ControlSet,
) -> Result<Vec<f64>, HjbError> {
    check_inputs(coeffs, h, grid, controls)?;
    let tab = tabulate(coeffs, grid, controls)?;
    let ratio = stability_ratio(&tab, grid);
    if ratio > STABILITY_LIMIT {
        return Err(HjbError::Unstable { ratio });
    }
    let (nx, nt, nc) = (grid.nx, grid.nt, controls.len());
    let (dx, dt) = (grid.dx(), grid.dt());
    let mut wt = vec![0.0; nt * nx];
    let e_t = (-grid.t_end).exp();
    for i in 0..nx {
        wt[(nt - 1) * nx + i] = e_t * h.eval(&[grid.x(i)]);
    }
    for k in (0..nt - 1).rev() {
        let growth = grid.t(k + 1).exp();
        let (head, tail) = wt.split_at_mut((k + 1) * nx);
        let next = &tail[..nx];
        let cur = &mut head[k * nx..];
        for i in 0..nx {
            let mut best = (0usize, f64::NEG_INFINITY);
            for c in 0..nc {
                let j = c * nx + i;
                let (d1, d2) = derivatives(next, i, tab.b[j], dx, grid.boundary);
                let v = tab.b[j] * d1 + 0.5 * tab.s2[j] * d2 - 0.5 * tab.g[j] * growth * next[i] * next[i];
                if v > best.1 {
                    best = (c, v);
                }
            }
            let j = best.0 * nx + i;
            let (d1, d2) = derivatives(next, i, tab.b[j], dx, grid.boundary);
            let explicit = next[i] * (1.0 + dt) + dt * (tab.b[j] * d1 + 0.5 * tab.s2[j] * d2);
            cur[i] = explicit / (1.0 + 0.5 * tab.g[j] * growth * dt * next[i]);
        }
        if grid.boundary == Boundary::Clamped {
            cur[0] = cur[1];
            cur[nx - 1] = cur[nx - 2];
        }
    }
    for k in 0..nt {
        let f = grid.t(k).exp();
        for v in &mut wt[k * nx..(k + 1) * nx] {
            *v *= f;
        }
    }
    Ok(wt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualReport {
    pub max_abs: f64,
    pub t: f64,
    pub x: f64,
    pub nodes: usize,
}

/// Residual of the continuous equation on interior nodes,
/// `-(w_{k+1} - w_k)/dt - max_a { b D_c m + 1/2 sigma^2 D_2 m - 1/2 gamma w_k w_{k+1} }`
/// with `m` the time-midpoint of the two layers and centered differences.
pub fn residual_check(surface: &ValueSurface, coeffs: &Coefficients) -> Result<ResidualReport, HjbError> {
    let grid = &surface.grid;
    let tab = tabulate(coeffs, grid, &surface.controls)?;
    let (nx, nt, nc) = (grid.nx, grid.nt, surface.controls.len());
    let (dx, dt) = (grid.dx(), grid.dt());
    let mut rep = ResidualReport {
        max_abs: 0.0,
        t: grid.t_end,
        x: grid.x_min,
        nodes: 0,
    };
    let mut mid = vec![0.0; nx];
    for k in 0..nt.saturating_sub(1) {
        let (a, b) = (surface.row(k), surface.row(k + 1));
        for i in 0..nx {
            mid[i] = 0.5 * (a[i] + b[i]);
        }
        for i in 1..nx - 1 {
            let d1 = (mid[i + 1] - mid[i - 1]) / (2.0 * dx);
            let d2 = (mid[i + 1] - 2.0 * mid[i] + mid[i - 1]) / (dx * dx);
            let mut best = f64::NEG_INFINITY;
            for c in 0..nc {
                let j = c * nx + i;
                best = best.max(tab.b[j] * d1 + 0.5 * tab.s2[j] * d2 - 0.5 * tab.g[j] * a[i] * b[i]);
            }
            let r = (-(b[i] - a[i]) / dt - best).abs();
            rep.nodes += 1;
            if r > rep.max_abs || !r.is_finite() {
                rep.max_abs = r;
                rep.t = grid.t(k);
                rep.x = grid.x(i);
            }
        }
    }
    Ok(rep)
}

/// Re-solves on a box at least twice as wide, with the same `dx` and `dt`,
/// and returns the largest difference from `surface` on its own nodes.
pub fn boundary_audit(surface: &ValueSurface, coeffs: &Coefficients) -> Result<f64, HjbError> {
    let g = surface.grid;
    let ext = g.nx.div_ceil(2);
    let dx = g.dx();
    let wide = GridSpec {
        x_min: g.x_min - ext as f64 * dx,
        x_max: g.x_max + ext as f64 * dx,
        nx: g.nx + 2 * ext,
        ..g
    };
    let other = solve_w(coeffs, &surface.terminal, &wide, &surface.controls)?;
    let mut diff: f64 = 0.0;
    for k in 0..g.nt {
        for i in 0..g.nx {
            diff = diff.max((surface.w_at(k, i) - other.w_at(k, i + ext)).abs());
        }
    }
    Ok(diff)
}

/// Tabulated optimal feedback; a constant policy when the control set is a
/// single point.
pub fn extract_policy(surface: &ValueSurface) -> FeedbackPolicy {
    if surface.controls.len() == 1 {
        return FeedbackPolicy::Constant(0);
    }
    let g = &surface.grid;
    FeedbackPolicy::Tabulated(Arc::new(PolicyTable {
        t0: g.t0,
        dt: g.dt(),
        nt: g.nt,
        x_min: g.x_min,
        dx: g.dx(),
        nx: g.nx,
        indices: surface.policy.clone(),
        controls: surface.controls.clone(),
    }))
}

/// `v(t, l) = exp(-<w(t, .), l>)`, with `t` snapped to the nearest time node
/// and `w` interpolated linearly in space.
pub fn value_of_measure(surface: &ValueSurface, t: f64, lambda: &AtomicMeasure) -> Result<f64, HjbError> {
    let k = surface.time_index(t);
    let node = surface.grid.t(k);
    if (node - t).abs() > 1e-9 * (1.0 + t.abs()) {
        log::debug!("value requested at t={t}, using nearest grid time {node}");
    }
    let mut acc = 0.0;
    for i in 0..lambda.len() {
        acc += lambda.weight(i) * surface.interpolate(k, lambda.location(i)[0])?;
    }
    Ok((-acc).exp())
}

#[derive(Debug, Clone, Serialize)]
pub struct SurfaceHeader {
    pub config_hash: String,
    pub grid: GridSpec,
    pub controls: Vec<Vec<f64>>,
    pub terminal: String,
    pub residual: Option<ResidualReport>,
    pub oracle_comparisons: Vec<(String, f64)>,
}

/// Long-format surface: `t,x,w,policy`.
pub fn surface_csv(surface: &ValueSurface, config_hash: &str) -> String {
    let g = &surface.grid;
    let mut s = format!("# config_hash={config_hash}\nt,x,w,policy\n");
    for k in 0..g.nt {
        for i in 0..g.nx {
            let _ = writeln!(s, "{},{},{},{}", g.t(k), g.x(i), surface.w_at(k, i), surface.policy_at(k, i));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ScalarCoefficient;
    use crate::oracles::{gaussian_convolution, riccati_w};

    fn riccati_grid(nt: usize) -> GridSpec {
        GridSpec::new(-2.0, 2.0, 5, 0.0, 1.0, nt).unwrap()
    }

    #[test]
    fn terminal_layer_is_exact() {
        let h = TestFunction::gaussian(1.0, vec![0.3], 0.7);
        let g = GridSpec::new(-3.0, 3.0, 31, 1.0, 1.0, 1).unwrap();
        let s = solve_w(&Coefficients::constant_1d(0.0, 1.0, 1.0), &h, &g, &ControlSet::singleton(1)).unwrap();
        for i in 0..g.nx {
            assert_eq!(s.w_at(0, i), h.eval(&[g.x(i)]));
        }
    }

    #[test]
    fn riccati_case_matches_closed_form() {
        let c = Coefficients::constant_1d(0.0, 0.0, 1.0);
        let h = TestFunction::constant(1, 1.0);
        let s = solve_w(&c, &h, &riccati_grid(10_000), &ControlSet::singleton(1)).unwrap();
        let g = s.grid;
        let mut err = 0.0f64;
        for k in 0..g.nt {
            for i in 0..g.nx {
                err = err.max((s.w_at(k, i) - riccati_w(1.0, 1.0, g.t_end - g.t(k))).abs());
            }
        }
        assert!(err <= 1e-6, "{err}");
        let r = residual_check(&s, &c).unwrap();
        assert!(r.max_abs <= 1e-6, "{r:?}");
        let lam = AtomicMeasure::dirac(1, vec![0.0], 1).unwrap();
        let v = value_of_measure(&s, 0.0, &lam).unwrap();
        assert!((v - (-2.0f64 / 3.0).exp()).abs() < 1e-9);
        assert!((v - 0.51342).abs() < 1e-5);
    }

    #[test]
    fn constant_data_without_dynamics_has_zero_residual() {
        let c = Coefficients::constant_1d(0.0, 0.0, 0.0);
        let s = solve_w(&c, &TestFunction::constant(1, 0.8), &riccati_grid(50), &ControlSet::singleton(1)).unwrap();
        assert!(s.w.iter().all(|&v| v == 0.8));
        assert_eq!(residual_check(&s, &c).unwrap().max_abs, 0.0);
    }

    #[test]
    fn heat_case_matches_convolution() {
        let c = Coefficients::constant_1d(0.0, 2.0f64.sqrt(), 0.0);
        let h = TestFunction::gaussian(1.0, vec![0.0], 1.0);
        let nx = 400;
        let dx = 20.0 / (nx - 1) as f64;
        let nt = (1.0 / (0.2 * dx * dx)).ceil() as usize + 1;
        let g = GridSpec::new(-10.0, 10.0, nx, 0.0, 1.0, nt).unwrap();
        let s = solve_w(&c, &h, &g, &ControlSet::singleton(1)).unwrap();
        let mut err = 0.0f64;
        for i in 0..nx {
            let x = g.x(i);
            if x.abs() <= 5.0 {
                let oracle = gaussian_convolution(|y| (-y * y).exp(), x, 2.0);
                err = err.max((s.w_at(0, i) - oracle).abs());
            }
        }
        assert!(err <= 1e-3, "{err}");
    }

    #[test]
    fn instability_is_refused() {
        let c = Coefficients::constant_1d(0.0, 2.0, 0.0);
        let g = GridSpec::new(-1.0, 1.0, 101, 0.0, 1.0, 11).unwrap();
        let r = solve_w(&c, &TestFunction::constant(1, 1.0), &g, &ControlSet::singleton(1));
        assert!(matches!(r, Err(HjbError::Unstable { .. })));
    }

    fn branching_control() -> (Coefficients, ControlSet) {
        (
            Coefficients::scalar(
                ScalarCoefficient::constant(0.0),
                ScalarCoefficient::constant(0.0),
                ScalarCoefficient::control_linear(1.0),
            ),
            ControlSet::scalars(&[0.5, 2.0]),
        )
    }

    #[test]
    fn branching_control_prefers_small_rate() {
        let (c, a) = branching_control();
        let s = solve_w(&c, &TestFunction::constant(1, 1.0), &riccati_grid(200), &a).unwrap();
        assert!(s.policy.iter().all(|&p| p == 0));
        assert!((s.w_at(0, 2) - riccati_w(1.0, 0.5, 1.0)).abs() < 1e-12);
        match extract_policy(&s) {
            FeedbackPolicy::Tabulated(t) => assert!(t.indices.iter().all(|&p| p == 0)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn policy_attains_nodewise_maximum() {
        let c = Coefficients::scalar(
            ScalarCoefficient::control_linear(1.0),
            ScalarCoefficient::constant(0.5),
            ScalarCoefficient::constant(0.0),
        );
        let a = ControlSet::scalars(&[-1.0, 1.0]);
        let h = TestFunction::gaussian(1.0, vec![1.0], 1.0);
        let g = GridSpec::new(-6.0, 6.0, 121, 0.0, 1.0, 201).unwrap();
        let s = solve_w(&c, &h, &g, &a).unwrap();
        let dx = g.dx();
        for k in 0..g.nt - 1 {
            let next = s.row(k + 1);
            for i in 1..g.nx - 1 {
                let plus = (next[i + 1] - next[i]) / dx;
                let minus = -(next[i] - next[i - 1]) / dx;
                let want = if plus > minus { 1 } else { 0 };
                assert_eq!(s.policy_at(k, i), want, "k={k} i={i}");
            }
        }
        // steering toward the bump: right of its peak move left, left of it move right
        let k = 0;
        assert_eq!(s.policy_at(k, g.nx / 2), 1);
        assert_eq!(s.policy_at(k, 110), 0);
    }

    #[test]
    fn positivity_bounds_and_comparison() {
        let h = TestFunction::gaussian(1.0, vec![0.0], 1.5);
        let g = GridSpec::new(-6.0, 6.0, 61, 0.0, 1.0, 401).unwrap();
        let one = solve_w(&Coefficients::constant_1d(0.2, 0.8, 1.0), &h, &g, &ControlSet::singleton(1)).unwrap();
        let two = solve_w(&Coefficients::constant_1d(0.2, 0.8, 2.0), &h, &g, &ControlSet::singleton(1)).unwrap();
        for (a, b) in one.w.iter().zip(&two.w) {
            assert!(*a >= 0.0 && *a <= 1.0 + 1e-15);
            assert!(b <= a);
        }
    }

    #[test]
    fn discounted_formulation_agrees() {
        let c = Coefficients::constant_1d(0.1, 0.8, 1.0);
        let h = TestFunction::gaussian(1.0, vec![0.0], 1.0);
        let g = GridSpec::new(-6.0, 6.0, 121, 0.0, 1.0, 2001).unwrap();
        let s = solve_w(&c, &h, &g, &ControlSet::singleton(1)).unwrap();
        let alt = solve_w_via_discounted(&c, &h, &g, &ControlSet::singleton(1)).unwrap();
        let err = s.w.iter().zip(&alt).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn value_of_measure_properties() {
        let c = Coefficients::constant_1d(0.0, 0.5, 1.0);
        let h = TestFunction::gaussian(1.0, vec![0.0], 2.0);
        let g = GridSpec::new(-5.0, 5.0, 101, 0.0, 1.0, 201).unwrap();
        let s = solve_w(&c, &h, &g, &ControlSet::singleton(1)).unwrap();
        assert_eq!(value_of_measure(&s, 0.0, &AtomicMeasure::zero(3, 1)).unwrap(), 1.0);
        let a = AtomicMeasure::from_atoms(3, 1, [(vec![-0.4], 2), (vec![1.1], 1)]).unwrap();
        let b = AtomicMeasure::from_atoms(3, 1, [(vec![0.25], 4)]).unwrap();
        let va = value_of_measure(&s, 0.0, &a).unwrap();
        let vb = value_of_measure(&s, 0.0, &b).unwrap();
        let vab = value_of_measure(&s, 0.0, &a.union(&b).unwrap()).unwrap();
        assert!((vab.ln() - va.ln() - vb.ln()).abs() < 1e-12);
        let v2 = value_of_measure(&s, 0.0, &a.scale(2)).unwrap();
        assert!((v2 - va * va).abs() < 1e-12);
        let outside = AtomicMeasure::dirac(1, vec![7.0], 1).unwrap();
        assert!(matches!(value_of_measure(&s, 0.0, &outside), Err(HjbError::OutOfDomain { .. })));
    }

    #[test]
    fn boundary_audit_is_small_for_a_wide_box_and_zero_without_motion() {
        let h = TestFunction::gaussian(1.0, vec![0.0], 0.5);
        let c = Coefficients::constant_1d(0.0, 0.5, 1.0);
        let wide = GridSpec::new(-5.0, 5.0, 101, 0.0, 1.0, 401).unwrap();
        let s = solve_w(&c, &h, &wide, &ControlSet::singleton(1)).unwrap();
        assert!(boundary_audit(&s, &c).unwrap() < 1e-10);
        let narrow = GridSpec::new(-1.0, 1.0, 21, 0.0, 1.0, 401).unwrap();
        let s = solve_w(&c, &h, &narrow, &ControlSet::singleton(1)).unwrap();
        assert!(boundary_audit(&s, &c).unwrap() > 1e-3);
        let still = Coefficients::constant_1d(0.0, 0.0, 1.0);
        let s = solve_w(&still, &h, &narrow, &ControlSet::singleton(1)).unwrap();
        assert!(boundary_audit(&s, &still).unwrap() < 1e-14);
    }

    #[test]
    fn surface_export_has_hash_and_header() {
        let c = Coefficients::constant_1d(0.0, 0.0, 1.0);
        let s = solve_w(&c, &TestFunction::constant(1, 1.0), &riccati_grid(3), &ControlSet::singleton(1)).unwrap();
        let csv = surface_csv(&s, "h1");
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("# config_hash=h1"));
        assert_eq!(lines.next(), Some("t,x,w,policy"));
        assert_eq!(csv.lines().count(), 2 + 15);
    }
}
