//! TOML experiment configuration: schema, `key=value` overrides, validation
//! and a content hash used to stamp every output file.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::hjb_solver::GridSpec;
use crate::mc_harness::KAPPA;
use crate::measure_space::{FamilyConfig, MeasureSpec, SeparatingFamily, TestFunction};
use crate::model::{CoefficientSpec, Coefficients, ControlSet, CostSpec, ScalarCoefficient, TerminalCost};
use crate::particle_sim::{Observable, RecordMode, Recorded, SimConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid override '{0}': expected key=value")]
    Override(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Scalar test function shapes on the line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionSpec {
    Constant { value: f64 },
    Gaussian { amplitude: f64, center: f64, scale: f64 },
    Polynomial { coeffs: Vec<f64> },
}

impl FunctionSpec {
    pub fn build(&self) -> Result<TestFunction, ConfigError> {
        match self {
            Self::Constant { value } => Ok(TestFunction::constant(1, *value)),
            Self::Gaussian {
                amplitude,
                center,
                scale,
            } => {
                if !(*scale > 0.0) {
                    return Err(ConfigError::Invalid("gaussian scale must be positive".into()));
                }
                Ok(TestFunction::gaussian(*amplitude, vec![*center], *scale))
            }
            Self::Polynomial { coeffs } => Ok(TestFunction::polynomial(coeffs.clone())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientsConfig {
    pub drift: CoefficientSpec,
    pub volatility: CoefficientSpec,
    pub branching: CoefficientSpec,
}

impl Default for CoefficientsConfig {
    fn default() -> Self {
        Self {
            drift: CoefficientSpec::Constant { value: 0.0 },
            volatility: CoefficientSpec::Constant { value: 0.0 },
            branching: CoefficientSpec::Constant { value: 1.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlsConfig {
    /// Scalar control values.
    pub values: Vec<f64>,
}

impl Default for ControlsConfig {
    fn default() -> Self {
        Self { values: vec![0.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerminalSpec {
    Zero,
    Constant { value: f64 },
    ExpNegPairing { h: FunctionSpec },
    Pairing { h: FunctionSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub terminal: TerminalSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub running: Option<CoefficientSpec>,
    pub growth_constant: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            terminal: TerminalSpec::ExpNegPairing {
                h: FunctionSpec::Constant { value: 1.0 },
            },
            running: None,
            growth_constant: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalKind {
    Mass,
    Pairing,
    Distance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordConfig {
    pub label: String,
    pub functional: FunctionalKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<FunctionSpec>,
    pub mode: RecordMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub level: u64,
    pub dt: f64,
    pub t0: f64,
    pub t_end: f64,
    pub replicates: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass_cap: Option<f64>,
    pub record_every: usize,
    /// Also write the long-format time series.
    pub write_series: bool,
    pub record: Vec<RecordConfig>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            level: 50,
            dt: 1e-3,
            t0: 0.0,
            t_end: 1.0,
            replicates: 10_000,
            mass_cap: None,
            record_every: 0,
            write_series: false,
            record: vec![RecordConfig {
                label: "mass".into(),
                functional: FunctionalKind::Mass,
                phi: None,
                mode: RecordMode::Sample,
            }],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    /// Control indices used as constant alternative policies.
    pub alternatives: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DppConfig {
    pub tau: f64,
}

impl Default for DppConfig {
    fn default() -> Self {
        Self { tau: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    pub levels: Vec<u64>,
    pub phi: FunctionSpec,
    /// Step at level one; level `n` uses `dt_level_one / n`.
    pub dt_level_one: f64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            levels: vec![1, 4, 16, 64],
            phi: FunctionSpec::Gaussian {
                amplitude: 1.0,
                center: 0.0,
                scale: 1.0,
            },
            dt_level_one: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsConfig {
    /// Finite-level bias constant; allowance is `kappa / n`.
    pub kappa: f64,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self { kappa: KAPPA }
    }
}

/// Full experiment description. Every section has defaults; unknown keys
/// are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: String,
    /// Worker threads; 0 uses all cores.
    pub workers: usize,
    pub family: FamilyConfig,
    pub coefficients: CoefficientsConfig,
    pub controls: ControlsConfig,
    pub cost: CostConfig,
    pub initial: MeasureSpec,
    pub simulation: SimulationConfig,
    pub grid: GridSpec,
    pub verify: VerifyConfig,
    pub dpp: DppConfig,
    pub scaling: ScalingConfig,
    pub stats: StatsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 20_240_601,
            output_dir: "out".into(),
            workers: 0,
            family: FamilyConfig::default(),
            coefficients: CoefficientsConfig::default(),
            controls: ControlsConfig::default(),
            cost: CostConfig::default(),
            initial: MeasureSpec::dirac(vec![0.0], 1.0),
            simulation: SimulationConfig::default(),
            grid: GridSpec {
                x_min: -2.0,
                x_max: 2.0,
                nx: 5,
                t0: 0.0,
                t_end: 1.0,
                nt: 10_001,
                boundary: Default::default(),
            },
            verify: VerifyConfig::default(),
            dpp: DppConfig::default(),
            scaling: ScalingConfig::default(),
            stats: StatsConfig::default(),
        }
    }
}

/// Splits `a.b.c=value`; the value is read as a TOML literal, or as a plain
/// string when it is not one.
fn parse_override(raw: &str) -> Result<(Vec<String>, toml::Value), ConfigError> {
    let (key, value) = raw.split_once('=').ok_or_else(|| ConfigError::Override(raw.into()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::Override(raw.into()));
    }
    let value = value.trim();
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((key.split('.').map(str::to_string).collect(), parsed))
}

fn apply_override(root: &mut toml::Table, path: &[String], value: toml::Value) -> Result<(), ConfigError> {
    let (last, parents) = path.split_last().expect("non-empty key");
    let mut table = root;
    for p in parents {
        let entry = table
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Invalid(format!("'{p}' is not a section")))?;
    }
    table.insert(last.clone(), value);
    Ok(())
}

impl ExperimentConfig {
    /// Parses `text` (possibly empty), applies `key=value` overrides and
    /// validates the result.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut root: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        if !overrides.is_empty() {
            // start from the resolved defaults so that nested overrides land
            // inside fully populated sections
            let base: Self = root.clone().try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
            root = toml::Table::try_from(&base).map_err(|e| ConfigError::Parse(e.to_string()))?;
            for o in overrides {
                let (path, value) = parse_override(o)?;
                apply_override(&mut root, &path, value)?;
            }
        }
        let cfg: Self = root.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.family().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.coefficients()?;
        if self.controls.values.is_empty() {
            return bad("controls.values is empty".into());
        }
        if self.initial.dim() != 1 {
            return bad("initial measure must be one-dimensional".into());
        }
        self.sim_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for r in &self.simulation.record {
            if r.functional == FunctionalKind::Pairing && r.phi.is_none() {
                return bad(format!("record '{}' needs phi", r.label));
            }
        }
        self.grid.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.cost()?;
        self.scaling.phi.build()?;
        if self.verify.alternatives.iter().any(|&i| i >= self.controls.values.len()) {
            return bad("verify.alternatives refers to a missing control".into());
        }
        if !(self.stats.kappa >= 0.0) {
            return bad("stats.kappa must be nonnegative".into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the resolved TOML, ignoring
    /// the output directory and worker count.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir.clear();
        canonical.workers = 0;
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        hex::encode(digest)[..16].to_string()
    }

    pub fn family(&self) -> Result<SeparatingFamily, crate::measure_space::MeasureError> {
        SeparatingFamily::from_config(&self.family)
    }

    pub fn coefficients(&self) -> Result<Coefficients, ConfigError> {
        let c = &self.coefficients;
        Coefficients::new(
            1,
            1,
            1,
            vec![ScalarCoefficient::from(c.drift.clone())],
            vec![ScalarCoefficient::from(c.volatility.clone())],
            ScalarCoefficient::from(c.branching.clone()),
        )
        .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn control_set(&self) -> ControlSet {
        ControlSet::scalars(&self.controls.values)
    }

    pub fn cost(&self) -> Result<CostSpec, ConfigError> {
        let terminal = match &self.cost.terminal {
            TerminalSpec::Zero => TerminalCost::Zero,
            TerminalSpec::Constant { value } => TerminalCost::Constant(*value),
            TerminalSpec::ExpNegPairing { h } => TerminalCost::ExpNegPairing(h.build()?),
            TerminalSpec::Pairing { h } => TerminalCost::Pairing(h.build()?),
        };
        Ok(CostSpec {
            running: self.cost.running.clone().map(ScalarCoefficient::from),
            terminal,
            growth_constant: self.cost.growth_constant,
        })
    }

    /// `h` of an exponential terminal cost.
    pub fn terminal_h(&self) -> Result<TestFunction, ConfigError> {
        match &self.cost.terminal {
            TerminalSpec::ExpNegPairing { h } => h.build(),
            _ => Err(ConfigError::Invalid("this command needs cost.terminal of kind exp_neg_pairing".into())),
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        let s = &self.simulation;
        let mut cfg = SimConfig::new(s.level, s.dt, s.t0, s.t_end, self.seed, s.replicates);
        cfg.mass_cap = s.mass_cap;
        cfg.record_every = s.record_every;
        cfg
    }

    /// Simulation config with the configured functionals attached.
    pub fn sim_config_with_records(&self) -> Result<SimConfig, ConfigError> {
        let mut cfg = self.sim_config();
        let family = std::sync::Arc::new(self.family().map_err(|e| ConfigError::Invalid(e.to_string()))?);
        for r in &self.simulation.record {
            let observable = match r.functional {
                FunctionalKind::Mass => Observable::Mass,
                FunctionalKind::Pairing => Observable::Pairing(
                    r.phi
                        .as_ref()
                        .ok_or_else(|| ConfigError::Invalid(format!("record '{}' needs phi", r.label)))?
                        .build()?,
                ),
                FunctionalKind::Distance => Observable::DistanceToZero(family.clone()),
            };
            cfg.record.push(Recorded::new(r.label.clone(), observable, r.mode));
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_hash_is_stable() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml();
        let back = ExperimentConfig::from_toml_with_overrides(&text, &[]).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 16);
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(ExperimentConfig::from_toml_with_overrides("", &[]).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml_with_overrides("sede = 3", &[]).is_err());
        assert!(ExperimentConfig::from_toml_with_overrides("[simulation]\nlevle = 3", &[]).is_err());
        assert!(ExperimentConfig::from_toml_with_overrides("", &["simulation.levle=3".into()]).is_err());
    }

    #[test]
    fn overrides_apply_with_types() {
        let cfg = ExperimentConfig::from_toml_with_overrides(
            "seed = 1\n[simulation]\nlevel = 10\ndt = 0.001\nt0 = 0.0\nt_end = 1.0\nreplicates = 5\nrecord_every = 0\nwrite_series = false\nrecord = []\n",
            &["simulation.level=20".into(), "seed=7".into(), "output_dir=results/a".into(), "controls.values=[0.5, 2.0]".into()],
        )
        .unwrap();
        assert_eq!(cfg.simulation.level, 20);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.output_dir, "results/a");
        assert_eq!(cfg.controls.values, vec![0.5, 2.0]);
        assert_ne!(cfg.hash(), ExperimentConfig::default().hash());
        let moved = ExperimentConfig::from_toml_with_overrides("", &["output_dir=elsewhere".into(), "workers=3".into()]).unwrap();
        assert_eq!(moved.hash(), ExperimentConfig::default().hash());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(ExperimentConfig::from_toml_with_overrides("", &["simulation.level=0".into()]).is_err());
        assert!(ExperimentConfig::from_toml_with_overrides("", &["grid.nx=2".into()]).is_err());
        assert!(ExperimentConfig::from_toml_with_overrides("", &["noequals".into()]).is_err());
        assert!(ExperimentConfig::from_toml_with_overrides("", &["verify.alternatives=[3]".into()]).is_err());
    }

    #[test]
    fn builds_model_objects() {
        let cfg = ExperimentConfig::default();
        let c = cfg.coefficients().unwrap();
        assert_eq!(c.branching_rate(&[0.0], &[], &[0.0]), 1.0);
        assert!(cfg.cost().unwrap().is_exponential());
        assert_eq!(cfg.sim_config_with_records().unwrap().record.len(), 1);
    }
}
