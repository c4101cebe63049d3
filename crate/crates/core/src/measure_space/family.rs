use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::function::{GaussianBump, NormBox, TestFunction};
use super::{AtomicMeasure, MeasureError};

/// Truncated separating family `{phi_0 = 1, phi_1, ..., phi_{K-1}}` with
/// weights `2^{-k} / q_k`.
#[derive(Debug, Clone)]
pub struct SeparatingFamily {
    members: Vec<TestFunction>,
    weights: Vec<f64>,
}

impl SeparatingFamily {
    pub fn new(members: Vec<TestFunction>) -> Result<Self, MeasureError> {
        let first = members
            .first()
            .ok_or_else(|| MeasureError::Configuration("separating family is empty".into()))?;
        let dim = first.dim();
        let probe: Vec<f64> = vec![0.37; dim];
        if first.sup_norm() != 1.0 || first.gradient_sup() != 0.0 || first.eval(&probe) != 1.0 {
            return Err(MeasureError::Configuration(
                "member 0 must be the constant function 1".into(),
            ));
        }
        for (k, m) in members.iter().enumerate() {
            if m.dim() != dim {
                return Err(MeasureError::DimensionMismatch {
                    expected: dim,
                    found: m.dim(),
                });
            }
            if m.sup_norm() > 1.0 + 1e-12 {
                return Err(MeasureError::Configuration(format!(
                    "member {k} has sup-norm {} > 1",
                    m.sup_norm()
                )));
            }
        }
        let weights = members
            .iter()
            .enumerate()
            .map(|(k, m)| 0.5f64.powi(k as i32) / m.q())
            .collect();
        Ok(Self { members, weights })
    }

    pub fn from_config(cfg: &FamilyConfig) -> Result<Self, MeasureError> {
        let dim = cfg.norm_box.dim();
        let mut members = vec![TestFunction::new(
            std::sync::Arc::new(super::function::Constant { dim, value: 1.0 }),
            &cfg.norm_box,
        )?];
        for b in &cfg.bumps {
            if b.center.len() != dim {
                return Err(MeasureError::DimensionMismatch {
                    expected: dim,
                    found: b.center.len(),
                });
            }
            if !(b.scale > 0.0) {
                return Err(MeasureError::Configuration("bump scale must be positive".into()));
            }
            members.push(TestFunction::new(
                std::sync::Arc::new(GaussianBump {
                    amplitude: 1.0,
                    center: b.center.clone(),
                    scale: b.scale,
                }),
                &cfg.norm_box,
            )?);
        }
        if cfg.truncation == 0 || cfg.truncation > members.len() {
            return Err(MeasureError::Configuration(format!(
                "truncation {} outside 1..={}",
                cfg.truncation,
                members.len()
            )));
        }
        members.truncate(cfg.truncation);
        Self::new(members)
    }

    /// Default eight-member family on the line.
    pub fn default_1d() -> Self {
        Self::from_config(&FamilyConfig::default()).expect("default family is valid")
    }

    pub fn dim(&self) -> usize {
        self.members[0].dim()
    }

    pub fn truncation(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[TestFunction] {
        &self.members
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn pairings(&self, lambda: &AtomicMeasure) -> Result<Vec<f64>, MeasureError> {
        if lambda.dim() != self.dim() {
            return Err(MeasureError::DimensionMismatch {
                expected: self.dim(),
                found: lambda.dim(),
            });
        }
        self.members.iter().map(|m| super::pair(m, lambda)).collect()
    }

    /// Weighted l1 distance between two pairing vectors of this family.
    pub fn distance_from_pairings(&self, a: &[f64], b: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(a.iter().zip(b))
            .map(|(w, (x, y))| w * (x - y).abs())
            .sum()
    }

    pub fn distance_to_zero_from_pairings(&self, a: &[f64]) -> f64 {
        self.weights.iter().zip(a).map(|(w, x)| w * x.abs()).sum()
    }

    /// Short hex digest identifying the members, their `q_k` and `K`.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for m in &self.members {
            h.update(m.describe().as_bytes());
            h.update(m.q().to_le_bytes());
        }
        h.update((self.members.len() as u64).to_le_bytes());
        hex::encode(h.finalize())[..16].to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpConfig {
    pub center: Vec<f64>,
    pub scale: f64,
}

/// Config-file form of a family: the constant 1 followed by unit-height
/// Gaussian bumps, truncated to the first `truncation` members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FamilyConfig {
    pub truncation: usize,
    pub bumps: Vec<BumpConfig>,
    pub norm_box: NormBox,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        let bump = |c: f64, s: f64| BumpConfig {
            center: vec![c],
            scale: s,
        };
        Self {
            truncation: 8,
            bumps: vec![
                bump(0.0, 1.0),
                bump(-1.5, 1.0),
                bump(1.5, 1.0),
                bump(0.0, 3.0),
                bump(-3.0, 1.5),
                bump(3.0, 1.5),
                bump(0.0, 0.5),
            ],
            norm_box: NormBox::cube(1, 8.0),
        }
    }
}
