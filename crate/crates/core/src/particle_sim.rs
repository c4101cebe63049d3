//! Forward simulation of the level-`n` controlled branching diffusion.
//!
//! Each unit of mass `1/n` moves by an Euler-Maruyama step and then, with
//! probability `1 - exp(-n gamma dt)`, dies or splits in two (probability
//! one half each) at its post-move location. Coefficients and the policy
//! read the pre-step measure and the pre-move location.
//!
//! Replicate `r` draws from the ChaCha8 stream `r` of the master seed, so a
//! batch is reproducible for any number of worker threads.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calculus::{apply_bold_l_with, apply_l_n_at, grad_sigma_sq, CylindricalFunction, OuterFunction};
use crate::measure_space::{AtomicMeasure, MeasureError, SeparatingFamily, TestFunction};
use crate::model::{transport_diffusion, Coefficients, ControlSet, FeedbackPolicy, ScalarCoefficient};
use crate::stats::{KahanSum, SampleMoments};

/// Largest admissible `n gamma dt`.
pub const EVENT_RATE_GUARD: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error("step too large: n*gamma*dt = {rate:.4} exceeds {EVENT_RATE_GUARD} at t={time}, x={x:?}")]
    StepTooLarge { rate: f64, time: f64, x: Vec<f64> },
    #[error("non-finite {what} at t={time}\n{dump}")]
    NonFinite { what: String, time: f64, dump: String },
    #[error("insufficient replicates: {got} < {needed}")]
    InsufficientReplicates { needed: usize, got: usize },
    #[error("all {0} replicates were censored")]
    AllCensored(usize),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// Functionals of the running measure.
#[derive(Debug, Clone)]
pub enum Observable {
    /// `<1, mu>`
    Mass,
    /// `<phi, mu>`
    Pairing(TestFunction),
    /// `u(mu)`
    Cylinder(CylindricalFunction),
    /// `d(mu, 0)` in the weighted metric of a separating family.
    DistanceToZero(Arc<SeparatingFamily>),
    /// `int L^n F_phi(x, mu, a(x)) mu(dx)`
    RescaledCompensator { outer: Arc<dyn OuterFunction>, phi: TestFunction },
    /// `<L phi, mu>`
    LinearCompensator(TestFunction),
    /// `int (1/n |Dphi sigma|^2 + gamma phi^2) dmu`
    LinearBracket(TestFunction),
    /// `int L u(x, mu, a(x)) mu(dx)` for the measure-space operator `L`.
    LimitCompensator(CylindricalFunction),
    /// `int gamma |delta u(mu, x)|^2 mu(dx)`
    LimitBracket(CylindricalFunction),
    /// `int psi(x, mu, a(x)) mu(dx)`
    RunningCost(ScalarCoefficient),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordMode {
    /// Value at each recorded time.
    Sample,
    /// Left-endpoint Riemann integral from the initial time.
    Integrate,
    /// Running maximum over all steps so far.
    Supremum,
}

#[derive(Debug, Clone)]
pub struct Recorded {
    pub label: String,
    pub observable: Observable,
    pub mode: RecordMode,
}

impl Recorded {
    pub fn new(label: impl Into<String>, observable: Observable, mode: RecordMode) -> Self {
        Self {
            label: label.into(),
            observable,
            mode,
        }
    }

    pub fn sample(label: impl Into<String>, observable: Observable) -> Self {
        Self::new(label, observable, RecordMode::Sample)
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub level: u64,
    pub dt: f64,
    pub t0: f64,
    pub t_end: f64,
    pub seed: u64,
    pub replicates: usize,
    /// Explosion guard on total mass; `None` means 1000 times the initial mass.
    pub mass_cap: Option<f64>,
    pub record: Vec<Recorded>,
    /// Record every `k`-th step; 0 records the initial and final times only.
    pub record_every: usize,
    /// Stream index of the first replicate.
    pub first_replicate: u64,
}

impl SimConfig {
    pub fn new(level: u64, dt: f64, t0: f64, t_end: f64, seed: u64, replicates: usize) -> Self {
        Self {
            level,
            dt,
            t0,
            t_end,
            seed,
            replicates,
            mass_cap: None,
            record: Vec::new(),
            record_every: 0,
            first_replicate: 0,
        }
    }

    pub fn with_record(mut self, r: Recorded) -> Self {
        self.record.push(r);
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Configuration(m.to_string()));
        if self.level == 0 {
            return bad("level must be >= 1");
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad("dt must be positive");
        }
        if !(self.t_end >= self.t0) {
            return bad("horizon end must not precede its start");
        }
        if self.replicates == 0 {
            return bad("replicates must be >= 1");
        }
        if let Some(c) = self.mass_cap {
            if !(c > 0.0) {
                return bad("mass_cap must be positive");
            }
        }
        Ok(())
    }

    /// Number of steps and the step actually used (the horizon is split evenly).
    pub fn grid(&self) -> (usize, f64) {
        let span = self.t_end - self.t0;
        if span <= 0.0 {
            return (0, self.dt);
        }
        let k = ((span / self.dt) - 1e-9).ceil().max(1.0) as usize;
        (k, span / k as f64)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryRecord {
    pub replicate: u64,
    pub times: Vec<f64>,
    /// Row-major `times x observables`.
    pub values: Vec<f64>,
    pub observables: usize,
    /// Births and deaths since the previous recorded time.
    pub births: Vec<u64>,
    pub deaths: Vec<u64>,
    #[serde(skip)]
    pub final_measure: AtomicMeasure,
    pub extinct_at: Option<f64>,
    pub censored: bool,
}

impl TrajectoryRecord {
    pub fn value(&self, row: usize, obs: usize) -> f64 {
        self.values[row * self.observables + obs]
    }

    pub fn terminal(&self, obs: usize) -> f64 {
        self.value(self.times.len() - 1, obs)
    }

    pub fn total_births(&self) -> u64 {
        self.births.iter().sum()
    }

    pub fn total_deaths(&self) -> u64 {
        self.deaths.iter().sum()
    }
}

/// Working population: flat locations and multiplicities.
#[derive(Debug, Clone, Default)]
struct Population {
    dim: usize,
    locs: Vec<f64>,
    mult: Vec<u64>,
}

impl Population {
    fn from_measure(m: &AtomicMeasure) -> Self {
        let mut p = Self {
            dim: m.dim(),
            ..Default::default()
        };
        for (x, k) in m.atoms() {
            p.locs.extend_from_slice(x);
            p.mult.push(k);
        }
        p
    }

    fn len(&self) -> usize {
        self.mult.len()
    }

    fn loc(&self, i: usize) -> &[f64] {
        &self.locs[i * self.dim..(i + 1) * self.dim]
    }

    fn units(&self) -> u64 {
        self.mult.iter().sum()
    }

    fn clear(&mut self) {
        self.locs.clear();
        self.mult.clear();
    }

    fn push(&mut self, x: &[f64], k: u64) {
        self.locs.extend_from_slice(x);
        self.mult.push(k);
    }

    fn to_measure(&self, level: u64) -> AtomicMeasure {
        AtomicMeasure::from_flat(level, self.dim, &self.locs, &self.mult)
    }

    fn dump(&self, level: u64) -> String {
        let mut s = format!("population: {} atoms, {} units at level {level}\n", self.len(), self.units());
        for i in 0..self.len().min(20) {
            let _ = writeln!(s, "  x={:?} k={}", self.loc(i), self.mult[i]);
        }
        s
    }
}

/// Per-step context shared by observables.
struct StepView<'a> {
    pop: &'a Population,
    n: u64,
    feat: &'a [f64],
    actions: &'a [usize],
    controls: &'a ControlSet,
    coeffs: &'a Coefficients,
}

impl StepView<'_> {
    fn weight(&self, i: usize) -> f64 {
        self.pop.mult[i] as f64 / self.n as f64
    }

    fn sum(&self, mut f: impl FnMut(&[f64], &[f64]) -> f64) -> f64 {
        let mut acc = KahanSum::default();
        for i in 0..self.pop.len() {
            let a = self.controls.point(self.actions[i]);
            acc.add(self.weight(i) * f(self.pop.loc(i), a));
        }
        acc.value()
    }

    fn pairing(&self, phi: &TestFunction) -> f64 {
        self.sum(|x, _| phi.eval(x))
    }

    fn eval(&self, obs: &Observable) -> f64 {
        let d = self.pop.dim;
        match obs {
            Observable::Mass => self.pop.units() as f64 / self.n as f64,
            Observable::Pairing(phi) => self.pairing(phi),
            Observable::Cylinder(u) => {
                let y: Vec<f64> = u.inner().iter().map(|f| self.pairing(f)).collect();
                u.outer().value(&y)
            }
            Observable::DistanceToZero(fam) => {
                let y: Vec<f64> = fam.members().iter().map(|f| self.pairing(f)).collect();
                fam.distance_to_zero_from_pairings(&y)
            }
            Observable::RescaledCompensator { outer, phi } => {
                let y = self.pairing(phi);
                self.sum(|x, a| apply_l_n_at(outer.as_ref(), phi, y, x, self.feat, a, self.n, self.coeffs))
            }
            Observable::LinearCompensator(phi) => {
                let mut g = vec![0.0; d];
                let mut h = vec![0.0; d * d];
                self.sum(|x, a| {
                    phi.grad(x, &mut g);
                    phi.hess(x, &mut h);
                    transport_diffusion(&g, &h, x, self.feat, a, self.coeffs)
                })
            }
            Observable::LinearBracket(phi) => {
                let mut g = vec![0.0; d];
                let n = self.n as f64;
                self.sum(|x, a| {
                    phi.grad(x, &mut g);
                    let p = phi.eval(x);
                    grad_sigma_sq(&g, x, self.feat, a, self.coeffs) / n
                        + self.coeffs.branching_rate(x, self.feat, a) * p * p
                })
            }
            Observable::LimitCompensator(u) => {
                let y: Vec<f64> = u.inner().iter().map(|f| self.pairing(f)).collect();
                let jet = u.jet_at(&y);
                self.sum(|x, a| apply_bold_l_with(u, &jet, x, self.feat, a, self.coeffs))
            }
            Observable::LimitBracket(u) => {
                let y: Vec<f64> = u.inner().iter().map(|f| self.pairing(f)).collect();
                let jet = u.jet_at(&y);
                self.sum(|x, a| {
                    let du = u.flat_derivative_with(&jet, x);
                    self.coeffs.branching_rate(x, self.feat, a) * du * du
                })
            }
            Observable::RunningCost(psi) => self.sum(|x, a| psi.eval(x, self.feat, a)),
        }
    }
}

fn population_features(pop: &Population, n: u64, coeffs: &Coefficients) -> Vec<f64> {
    coeffs
        .feature_functions()
        .iter()
        .map(|f| {
            let mut acc = KahanSum::default();
            for i in 0..pop.len() {
                acc.add(pop.mult[i] as f64 / n as f64 * f.eval(pop.loc(i)));
            }
            acc.value()
        })
        .collect()
}

struct Scratch {
    b: Vec<f64>,
    s: Vec<f64>,
    y: Vec<f64>,
}

/// One step of the scheme; returns `(births, deaths)`.
#[allow(clippy::too_many_arguments)]
fn advance<R: Rng>(
    pop: &Population,
    next: &mut Population,
    time: f64,
    dt: f64,
    n: u64,
    feat: &[f64],
    actions: &[usize],
    controls: &ControlSet,
    coeffs: &Coefficients,
    scratch: &mut Scratch,
    rng: &mut R,
) -> Result<(u64, u64), SimError> {
    next.clear();
    next.dim = pop.dim;
    let (d, e) = (coeffs.dim_x(), coeffs.dim_noise());
    let block = coeffs.volatility_is_zero();
    let sqdt = dt.sqrt();
    let (mut births, mut deaths) = (0u64, 0u64);
    for i in 0..pop.len() {
        let x = pop.loc(i);
        let a = controls.point(actions[i]);
        let gamma = coeffs.branching_rate(x, feat, a);
        coeffs.drift(x, feat, a, &mut scratch.b);
        if !block {
            coeffs.volatility(x, feat, a, &mut scratch.s);
        }
        if !gamma.is_finite() || gamma < 0.0 || scratch.b.iter().chain(&scratch.s).any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite {
                what: format!("coefficient (gamma={gamma}, b={:?}, sigma={:?}) at x={x:?}, a={a:?}", scratch.b, scratch.s),
                time,
                dump: pop.dump(n),
            });
        }
        let rate = n as f64 * gamma * dt;
        if rate > EVENT_RATE_GUARD * (1.0 + 1e-12) {
            return Err(SimError::StepTooLarge {
                rate,
                time,
                x: x.to_vec(),
            });
        }
        let p = -(-rate).exp_m1();
        let k = pop.mult[i];
        if block {
            for j in 0..d {
                scratch.y[j] = x[j] + scratch.b[j] * dt;
            }
            let events = if p > 0.0 {
                Binomial::new(k, p).expect("valid binomial").sample(rng)
            } else {
                0
            };
            let born = if events > 0 {
                Binomial::new(events, 0.5).expect("valid binomial").sample(rng)
            } else {
                0
            };
            births += born;
            deaths += events - born;
            let kk = k + born - (events - born);
            if kk > 0 {
                next.push(&scratch.y, kk);
            }
        } else {
            for _ in 0..k {
                scratch.y.copy_from_slice(x);
                for j in 0..d {
                    scratch.y[j] += scratch.b[j] * dt;
                }
                for l in 0..e {
                    let xi: f64 = StandardNormal.sample(rng);
                    let z = sqdt * xi;
                    for j in 0..d {
                        scratch.y[j] += scratch.s[j * e + l] * z;
                    }
                }
                let u: f64 = rng.random();
                if u < p {
                    if rng.random::<bool>() {
                        births += 1;
                        next.push(&scratch.y, 2);
                    } else {
                        deaths += 1;
                    }
                } else {
                    next.push(&scratch.y, 1);
                }
            }
        }
    }
    Ok((births, deaths))
}

/// Random-number stream of replicate `replicate` under master seed `seed`.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

/// Simulates one replicate on `[config.t0, config.t_end]`.
pub fn simulate(
    lambda0: &AtomicMeasure,
    policy: &FeedbackPolicy,
    controls: &ControlSet,
    config: &SimConfig,
    coeffs: &Coefficients,
    replicate: u64,
) -> Result<TrajectoryRecord, SimError> {
    config.validate()?;
    let n = config.level;
    if lambda0.level() != n {
        return Err(SimError::Configuration(format!(
            "initial measure has level {}, simulation level is {n}",
            lambda0.level()
        )));
    }
    if !lambda0.is_zero() && lambda0.dim() != coeffs.dim_x() {
        return Err(MeasureError::DimensionMismatch {
            expected: coeffs.dim_x(),
            found: lambda0.dim(),
        }
        .into());
    }
    if controls.dim() != coeffs.dim_action() {
        return Err(SimError::Configuration(format!(
            "control points have dimension {}, coefficients expect {}",
            controls.dim(),
            coeffs.dim_action()
        )));
    }
    let cap_units = config.mass_cap.unwrap_or(1000.0 * lambda0.total_mass().max(1.0 / n as f64)) * n as f64;
    let (steps, dt) = config.grid();
    let nobs = config.record.len();
    let mut rng = replicate_rng(config.seed, replicate);
    let mut pop = Population::from_measure(lambda0);
    pop.dim = coeffs.dim_x();
    let mut next = Population::default();
    let mut scratch = Scratch {
        b: vec![0.0; coeffs.dim_x()],
        s: vec![0.0; coeffs.dim_x() * coeffs.dim_noise()],
        y: vec![0.0; coeffs.dim_x()],
    };
    let mut acc = vec![0.0; nobs];
    let mut sup = vec![f64::NEG_INFINITY; nobs];
    let mut rec = TrajectoryRecord {
        replicate,
        times: Vec::new(),
        values: Vec::new(),
        observables: nobs,
        births: Vec::new(),
        deaths: Vec::new(),
        final_measure: lambda0.clone(),
        extinct_at: None,
        censored: false,
    };
    let (mut born, mut died) = (0u64, 0u64);
    let mut actions: Vec<usize> = Vec::new();
    let needs_every_step = config.record.iter().any(|r| r.mode != RecordMode::Sample);
    let mut k = 0usize;
    loop {
        let t = config.t0 + k as f64 * dt;
        let feat = population_features(&pop, n, coeffs);
        actions.clear();
        for i in 0..pop.len() {
            actions.push(policy.action(t, pop.loc(i), &feat, controls));
        }
        let last = k == steps;
        let record_now = k == 0 || last || (config.record_every > 0 && k.is_multiple_of(config.record_every));
        if nobs > 0 && (record_now || needs_every_step) {
            let view = StepView {
                pop: &pop,
                n,
                feat: &feat,
                actions: &actions,
                controls,
                coeffs,
            };
            let mut row = vec![0.0; nobs];
            for (j, r) in config.record.iter().enumerate() {
                match r.mode {
                    RecordMode::Sample => {
                        if record_now {
                            row[j] = view.eval(&r.observable);
                        }
                    }
                    RecordMode::Integrate => {
                        row[j] = acc[j];
                        if !last {
                            acc[j] += dt * view.eval(&r.observable);
                        }
                    }
                    RecordMode::Supremum => {
                        sup[j] = sup[j].max(view.eval(&r.observable));
                        row[j] = sup[j];
                    }
                }
                if record_now && !row[j].is_finite() {
                    return Err(SimError::NonFinite {
                        what: format!("observable '{}'", r.label),
                        time: t,
                        dump: pop.dump(n),
                    });
                }
            }
            if record_now {
                rec.values.extend_from_slice(&row);
            }
        }
        if record_now {
            rec.times.push(t);
            rec.births.push(born);
            rec.deaths.push(died);
            born = 0;
            died = 0;
        }
        if last || rec.censored {
            break;
        }
        let (b, d) = advance(&pop, &mut next, t, dt, n, &feat, &actions, controls, coeffs, &mut scratch, &mut rng)?;
        born += b;
        died += d;
        std::mem::swap(&mut pop, &mut next);
        k += 1;
        let units = pop.units();
        if units == 0 && rec.extinct_at.is_none() {
            rec.extinct_at = Some(config.t0 + k as f64 * dt);
        }
        if units as f64 > cap_units {
            rec.censored = true;
            // record the state at which the run stopped
            let t = config.t0 + k as f64 * dt;
            if nobs > 0 {
                let feat = population_features(&pop, n, coeffs);
                let actions: Vec<usize> = (0..pop.len()).map(|i| policy.action(t, pop.loc(i), &feat, controls)).collect();
                let view = StepView {
                    pop: &pop,
                    n,
                    feat: &feat,
                    actions: &actions,
                    controls,
                    coeffs,
                };
                for (j, r) in config.record.iter().enumerate() {
                    let v = view.eval(&r.observable);
                    rec.values.push(match r.mode {
                        RecordMode::Sample => v,
                        RecordMode::Integrate => acc[j],
                        RecordMode::Supremum => sup[j].max(v),
                    });
                }
            }
            rec.times.push(t);
            rec.births.push(born);
            rec.deaths.push(died);
            break;
        }
    }
    rec.final_measure = pop.to_measure(n);
    Ok(rec)
}

/// Runs `config.replicates` independent replicates in parallel; results are
/// ordered by replicate index.
pub fn simulate_batch(
    lambda0: &AtomicMeasure,
    policy: &FeedbackPolicy,
    controls: &ControlSet,
    config: &SimConfig,
    coeffs: &Coefficients,
) -> Result<Vec<TrajectoryRecord>, SimError> {
    config.validate()?;
    let first = config.first_replicate;
    (0..config.replicates as u64)
        .into_par_iter()
        .map(|r| simulate(lambda0, policy, controls, config, coeffs, first + r))
        .collect()
}

/// Per-replicate summary: terminal values of every recorded functional,
/// extinction time and event counts.
pub fn summary_csv(records: &[TrajectoryRecord], config: &SimConfig, config_hash: &str) -> String {
    let mut s = format!("# config_hash={config_hash}\nreplicate");
    for r in &config.record {
        let _ = write!(s, ",{}", r.label);
    }
    s.push_str(",extinct_at,births,deaths,censored\n");
    for rec in records {
        let _ = write!(s, "{}", rec.replicate);
        for j in 0..rec.observables {
            let _ = write!(s, ",{}", rec.terminal(j));
        }
        let ext = rec.extinct_at.map(|t| t.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            ",{ext},{},{},{}",
            rec.total_births(),
            rec.total_deaths(),
            u8::from(rec.censored)
        );
    }
    s
}

/// Long-format time series: one row per (replicate, time, functional).
pub fn series_csv(records: &[TrajectoryRecord], config: &SimConfig, config_hash: &str) -> String {
    let mut s = format!("# config_hash={config_hash}\nreplicate,t,functional,value\n");
    for rec in records {
        for (row, t) in rec.times.iter().enumerate() {
            for (j, r) in config.record.iter().enumerate() {
                let _ = writeln!(s, "{},{t},{},{}", rec.replicate, r.label, rec.value(row, j));
            }
        }
    }
    s
}

/// Columns needed by [`martingale_diagnostic`].
#[derive(Debug, Clone)]
pub enum MartingaleProbe {
    /// `M = F(<phi,mu_t>) - F(<phi,l>) - int L^n F_phi`, with the quadratic
    /// variation checked on the linear martingale of `phi`.
    Rescaled { outer: Arc<dyn OuterFunction>, phi: TestFunction },
    /// `M = u(mu_t) - u(l) - int L u`, bracket `int gamma |delta u|^2`.
    Limit { u: CylindricalFunction },
}

impl MartingaleProbe {
    /// Observables to append to a [`SimConfig`], in the order the
    /// diagnostic expects them.
    pub fn observables(&self) -> Vec<Recorded> {
        match self {
            Self::Rescaled { outer, phi } => vec![
                Recorded::sample("probe_pairing", Observable::Pairing(phi.clone())),
                Recorded::new(
                    "probe_compensator",
                    Observable::RescaledCompensator {
                        outer: outer.clone(),
                        phi: phi.clone(),
                    },
                    RecordMode::Integrate,
                ),
                Recorded::new("probe_linear_compensator", Observable::LinearCompensator(phi.clone()), RecordMode::Integrate),
                Recorded::new("probe_linear_bracket", Observable::LinearBracket(phi.clone()), RecordMode::Integrate),
            ],
            Self::Limit { u } => vec![
                Recorded::sample("probe_value", Observable::Cylinder(u.clone())),
                Recorded::new("probe_compensator", Observable::LimitCompensator(u.clone()), RecordMode::Integrate),
                Recorded::new("probe_bracket", Observable::LimitBracket(u.clone()), RecordMode::Integrate),
            ],
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MartingaleReport {
    pub replicates: usize,
    pub censored: usize,
    pub mean_terminal: f64,
    pub std_error: f64,
    /// `mean / std_error`; 0 when the martingale vanishes identically.
    pub z_statistic: f64,
    /// `E[M_T^2] / E[bracket_T]` for the martingale whose bracket is known.
    pub qv_ratio: f64,
    pub qv_ratio_std_error: f64,
}

/// Mean and quadratic-variation checks of the martingale defined by `probe`,
/// whose observables start at column `offset` of every record.
pub fn martingale_diagnostic(
    records: &[TrajectoryRecord],
    probe: &MartingaleProbe,
    offset: usize,
) -> Result<MartingaleReport, SimError> {
    const MIN_REPLICATES: usize = 100;
    let kept: Vec<&TrajectoryRecord> = records.iter().filter(|r| !r.censored).collect();
    if kept.len() < MIN_REPLICATES {
        return Err(SimError::InsufficientReplicates {
            needed: MIN_REPLICATES,
            got: kept.len(),
        });
    }
    let mut m_main = Vec::with_capacity(kept.len());
    let mut m_qv = Vec::with_capacity(kept.len());
    let mut bracket = Vec::with_capacity(kept.len());
    for r in &kept {
        let last = r.times.len() - 1;
        match probe {
            MartingaleProbe::Rescaled { outer, .. } => {
                let y0 = r.value(0, offset);
                let yt = r.value(last, offset);
                m_main.push(outer.value(&[yt]) - outer.value(&[y0]) - r.value(last, offset + 1));
                m_qv.push(yt - y0 - r.value(last, offset + 2));
                bracket.push(r.value(last, offset + 3));
            }
            MartingaleProbe::Limit { .. } => {
                let m = r.value(last, offset) - r.value(0, offset) - r.value(last, offset + 1);
                m_main.push(m);
                m_qv.push(m);
                bracket.push(r.value(last, offset + 2));
            }
        }
    }
    let main = SampleMoments::of(&m_main);
    let z = if main.std_error > 0.0 {
        main.mean / main.std_error
    } else if main.mean == 0.0 {
        0.0
    } else {
        f64::INFINITY * main.mean.signum()
    };
    let sq: Vec<f64> = m_qv.iter().map(|m| m * m).collect();
    let msq = SampleMoments::of(&sq);
    let br = SampleMoments::of(&bracket);
    let (ratio, ratio_se) = if br.mean > 0.0 {
        let ratio = msq.mean / br.mean;
        let resid: Vec<f64> = sq.iter().zip(&bracket).map(|(s, b)| s - ratio * b).collect();
        (ratio, SampleMoments::of(&resid).std_error / br.mean)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(MartingaleReport {
        replicates: kept.len(),
        censored: records.len() - kept.len(),
        mean_terminal: main.mean,
        std_error: main.std_error,
        z_statistic: z,
        qv_ratio: ratio,
        qv_ratio_std_error: ratio_se,
    })
}
