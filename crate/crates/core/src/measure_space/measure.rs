use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::MeasureError;

/// A finite positive measure whose atoms carry mass `multiplicity / level`.
///
/// Atoms are kept sorted by location (lexicographic on the bit-level total
/// order of `f64`) and atoms with bitwise-identical coordinates are merged.
/// The empty atom list is the zero measure.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicMeasure {
    level: u64,
    dim: usize,
    locations: Vec<f64>,
    multiplicities: Vec<u64>,
}

fn cmp_location(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    Ordering::Equal
}

impl AtomicMeasure {
    pub fn zero(level: u64, dim: usize) -> Self {
        assert!(level >= 1, "level must be positive");
        Self {
            level,
            dim,
            locations: Vec::new(),
            multiplicities: Vec::new(),
        }
    }

    pub fn from_atoms<I>(level: u64, dim: usize, atoms: I) -> Result<Self, MeasureError>
    where
        I: IntoIterator<Item = (Vec<f64>, u64)>,
    {
        if level == 0 {
            return Err(MeasureError::InvalidMeasure("level must be >= 1".into()));
        }
        let mut raw = Vec::new();
        for (loc, m) in atoms {
            if loc.len() != dim {
                return Err(MeasureError::DimensionMismatch {
                    expected: dim,
                    found: loc.len(),
                });
            }
            if loc.iter().any(|v| !v.is_finite()) {
                return Err(MeasureError::InvalidMeasure(format!(
                    "non-finite atom location {loc:?}"
                )));
            }
            if m > 0 {
                raw.push((loc, m));
            }
        }
        Ok(Self::from_valid_atoms(level, dim, raw))
    }

    /// Builds from flat storage that the caller guarantees to be finite.
    pub(crate) fn from_flat(level: u64, dim: usize, locations: &[f64], mult: &[u64]) -> Self {
        let raw: Vec<(Vec<f64>, u64)> = mult
            .iter()
            .enumerate()
            .filter(|(_, &m)| m > 0)
            .map(|(i, &m)| (locations[i * dim..(i + 1) * dim].to_vec(), m))
            .collect();
        Self::from_valid_atoms(level, dim, raw)
    }

    fn from_valid_atoms(level: u64, dim: usize, mut raw: Vec<(Vec<f64>, u64)>) -> Self {
        raw.sort_by(|a, b| cmp_location(&a.0, &b.0));
        let mut locations = Vec::with_capacity(raw.len() * dim);
        let mut multiplicities: Vec<u64> = Vec::with_capacity(raw.len());
        let mut last: Option<Vec<f64>> = None;
        for (loc, m) in raw {
            let same = last
                .as_ref()
                .is_some_and(|l| l.iter().zip(&loc).all(|(a, b)| a.to_bits() == b.to_bits()));
            if same {
                *multiplicities.last_mut().unwrap() += m;
            } else {
                locations.extend_from_slice(&loc);
                multiplicities.push(m);
                last = Some(loc);
            }
        }
        Self {
            level,
            dim,
            locations,
            multiplicities,
        }
    }

    /// `multiplicity / level` units at a single point.
    pub fn dirac(level: u64, location: Vec<f64>, multiplicity: u64) -> Result<Self, MeasureError> {
        let dim = location.len();
        Self::from_atoms(level, dim, [(location, multiplicity)])
    }

    pub fn level(&self) -> u64 {
        self.level
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of distinct atoms.
    pub fn len(&self) -> usize {
        self.multiplicities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.multiplicities.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.multiplicities.is_empty()
    }

    pub fn total_multiplicity(&self) -> u64 {
        self.multiplicities.iter().sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.total_multiplicity() as f64 / self.level as f64
    }

    pub fn location(&self, i: usize) -> &[f64] {
        &self.locations[i * self.dim..(i + 1) * self.dim]
    }

    pub fn multiplicity(&self, i: usize) -> u64 {
        self.multiplicities[i]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.multiplicities[i] as f64 / self.level as f64
    }

    pub fn atoms(&self) -> impl Iterator<Item = (&[f64], u64)> + '_ {
        self.multiplicities
            .iter()
            .enumerate()
            .map(move |(i, &m)| (self.location(i), m))
    }

    /// Re-expresses the same measure at level `level * factor`.
    pub fn refine(&self, factor: u64) -> Self {
        assert!(factor >= 1);
        Self {
            level: self.level * factor,
            dim: self.dim,
            locations: self.locations.clone(),
            multiplicities: self.multiplicities.iter().map(|m| m * factor).collect(),
        }
    }

    /// `c * self` for a positive integer `c` at the same level.
    pub fn scale(&self, c: u64) -> Self {
        let mut out = self.clone();
        out.multiplicities.iter_mut().for_each(|m| *m *= c);
        if c == 0 {
            out.locations.clear();
            out.multiplicities.clear();
        }
        out
    }

    /// Adds `units` atoms of mass `1/level` at `location`.
    pub fn add_units(&self, location: &[f64], units: u64) -> Result<Self, MeasureError> {
        let atoms = self
            .atoms()
            .map(|(l, m)| (l.to_vec(), m))
            .chain(std::iter::once((location.to_vec(), units)));
        Self::from_atoms(self.level, self.dim, atoms)
    }

    /// Sum of two measures at a common level (the least common multiple).
    pub fn union(&self, other: &Self) -> Result<Self, MeasureError> {
        if self.dim != other.dim {
            return Err(MeasureError::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        let level = lcm(self.level, other.level);
        let a = self.refine(level / self.level);
        let b = other.refine(level / other.level);
        let atoms = a
            .atoms()
            .map(|(l, m)| (l.to_vec(), m))
            .chain(b.atoms().map(|(l, m)| (l.to_vec(), m)))
            .collect::<Vec<_>>();
        Self::from_atoms(level, self.dim, atoms)
    }

    /// `<phi, self>`; fails on a non-finite value at an atom.
    pub fn pair_with(&self, phi: impl Fn(&[f64]) -> f64) -> Result<f64, MeasureError> {
        let mut acc = 0.0;
        for (loc, m) in self.atoms() {
            let v = phi(loc);
            if !v.is_finite() {
                return Err(MeasureError::InvalidFunction {
                    location: loc.to_vec(),
                    value: v,
                });
            }
            acc += m as f64 * v;
        }
        Ok(acc / self.level as f64)
    }

    pub fn csv_header(dim: usize) -> String {
        let mut h = String::from("level");
        for k in 0..dim {
            let _ = write!(h, ",x{k}");
        }
        h.push_str(",multiplicity");
        h
    }

    /// Rows `level,x0,..,x{d-1},multiplicity`, header included.
    pub fn to_csv(&self) -> String {
        let mut out = Self::csv_header(self.dim);
        out.push('\n');
        for (loc, m) in self.atoms() {
            let _ = write!(out, "{}", self.level);
            for v in loc {
                let _ = write!(out, ",{v:e}");
            }
            let _ = writeln!(out, ",{m}");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, MeasureError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| MeasureError::Parse("missing header".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 2 || cols[0] != "level" || *cols.last().unwrap() != "multiplicity" {
            return Err(MeasureError::Parse(format!("bad header `{header}`")));
        }
        let dim = cols.len() - 2;
        let mut level = None;
        let mut atoms = Vec::new();
        for line in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != dim + 2 {
                return Err(MeasureError::Parse(format!("bad row `{line}`")));
            }
            let parse_err = |e: &dyn std::fmt::Display| MeasureError::Parse(format!("{e} in `{line}`"));
            let n: u64 = fields[0].parse().map_err(|e| parse_err(&e))?;
            if *level.get_or_insert(n) != n {
                return Err(MeasureError::Parse("rows disagree on level".into()));
            }
            let loc = fields[1..=dim]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|e| parse_err(&e)))
                .collect::<Result<Vec<_>, _>>()?;
            let m: u64 = fields[dim + 1].parse().map_err(|e| parse_err(&e))?;
            atoms.push((loc, m));
        }
        Self::from_atoms(level.unwrap_or(1), dim, atoms)
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: u64, b: u64) -> u64 {
    a / gcd(a, b) * b
}

/// Piecewise-linear density sampled on an increasing grid (unnormalized).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    pub xs: Vec<f64>,
    pub values: Vec<f64>,
}

impl GridDensity {
    pub fn uniform(lo: f64, hi: f64) -> Self {
        Self {
            xs: vec![lo, hi],
            values: vec![1.0, 1.0],
        }
    }

    fn validate(&self) -> Result<(), MeasureError> {
        if self.xs.len() < 2 || self.xs.len() != self.values.len() {
            return Err(MeasureError::InvalidMeasure(
                "density needs >= 2 matching samples".into(),
            ));
        }
        if self.xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(MeasureError::InvalidMeasure("density grid must increase".into()));
        }
        if self.values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(MeasureError::InvalidMeasure("negative or non-finite density".into()));
        }
        Ok(())
    }

    fn segment_masses(&self) -> Vec<f64> {
        self.xs
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(x, f)| 0.5 * (f[0] + f[1]) * (x[1] - x[0]))
            .collect()
    }

    pub fn mass(&self) -> f64 {
        self.segment_masses().iter().sum()
    }

    /// Inverse of the normalized CDF at probability `u` in `[0, 1]`.
    pub fn quantile(&self, u: f64) -> f64 {
        let seg = self.segment_masses();
        let total: f64 = seg.iter().sum();
        let mut target = u.clamp(0.0, 1.0) * total;
        for (i, &m) in seg.iter().enumerate() {
            if target <= m || i == seg.len() - 1 {
                let (x0, x1) = (self.xs[i], self.xs[i + 1]);
                let (f0, f1) = (self.values[i], self.values[i + 1]);
                let width = x1 - x0;
                let slope = (f1 - f0) / width;
                let target = target.min(m);
                let s = if slope.abs() < 1e-14 * (f0.abs() + f1.abs()).max(1e-300) {
                    if f0 > 0.0 {
                        target / f0
                    } else {
                        0.0
                    }
                } else {
                    // f0 s + slope s^2 / 2 = target
                    let disc = (f0 * f0 + 2.0 * slope * target).max(0.0);
                    (disc.sqrt() - f0) / slope
                };
                return x0 + s.clamp(0.0, width);
            }
            target -= m;
        }
        *self.xs.last().unwrap()
    }
}

/// Description of a finite measure to be discretized at some level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureSpec {
    /// Explicit atoms with real weights.
    Atoms { atoms: Vec<WeightedAtom> },
    /// Product of one-dimensional densities, one per coordinate; total mass
    /// is the product of the marginal integrals.
    Density { marginals: Vec<GridDensity> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedAtom {
    pub location: Vec<f64>,
    pub weight: f64,
}

impl MeasureSpec {
    pub fn dirac(location: Vec<f64>, weight: f64) -> Self {
        Self::Atoms {
            atoms: vec![WeightedAtom { location, weight }],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Atoms { atoms } => atoms.first().map_or(1, |a| a.location.len()),
            Self::Density { marginals } => marginals.len(),
        }
    }

    pub fn mass(&self) -> f64 {
        match self {
            Self::Atoms { atoms } => atoms.iter().map(|a| a.weight).sum(),
            Self::Density { marginals } => marginals.iter().map(GridDensity::mass).product(),
        }
    }

    /// Same shape with total mass multiplied by `c >= 0`.
    pub fn scaled(&self, c: f64) -> Self {
        match self {
            Self::Atoms { atoms } => Self::Atoms {
                atoms: atoms
                    .iter()
                    .map(|a| WeightedAtom {
                        location: a.location.clone(),
                        weight: a.weight * c,
                    })
                    .collect(),
            },
            Self::Density { marginals } => {
                let mut m = marginals.clone();
                if let Some(first) = m.first_mut() {
                    first.values.iter_mut().for_each(|v| *v *= c);
                }
                Self::Density { marginals: m }
            }
        }
    }
}

/// Approximates `spec` by an atomic measure of level `n` with total mass
/// `floor(n * mass) / n`.
///
/// Atom lists are rounded by largest remainder; densities are placed at the
/// midpoint quantiles `(j + 1/2) / k` of each marginal.
pub fn discretize(spec: &MeasureSpec, n: u64) -> Result<AtomicMeasure, MeasureError> {
    if n == 0 {
        return Err(MeasureError::InvalidMeasure("level must be >= 1".into()));
    }
    let dim = spec.dim();
    match spec {
        MeasureSpec::Atoms { atoms } => {
            if let Some(a) = atoms.iter().find(|a| !(a.weight >= 0.0) || !a.weight.is_finite()) {
                return Err(MeasureError::InvalidMeasure(format!(
                    "atom weight {} is negative or non-finite",
                    a.weight
                )));
            }
            let mass: f64 = atoms.iter().map(|a| a.weight).sum();
            let units = floor_units(mass, n);
            let scaled: Vec<f64> = atoms.iter().map(|a| a.weight * n as f64).collect();
            let mut mult: Vec<u64> = scaled.iter().map(|s| s.floor() as u64).collect();
            let assigned: u64 = mult.iter().sum();
            if assigned > units {
                // floating error in the floor of the total; trim from the largest atoms
                let mut excess = assigned - units;
                let mut order: Vec<usize> = (0..mult.len()).collect();
                order.sort_by(|&a, &b| mult[b].cmp(&mult[a]));
                for i in order {
                    while excess > 0 && mult[i] > 0 {
                        mult[i] -= 1;
                        excess -= 1;
                    }
                }
            } else {
                let mut order: Vec<usize> = (0..mult.len()).collect();
                order.sort_by(|&a, &b| {
                    let ra = scaled[a] - scaled[a].floor();
                    let rb = scaled[b] - scaled[b].floor();
                    rb.total_cmp(&ra).then(a.cmp(&b))
                });
                for &i in order.iter().take((units - assigned) as usize) {
                    mult[i] += 1;
                }
            }
            AtomicMeasure::from_atoms(
                n,
                dim,
                atoms.iter().zip(mult).map(|(a, m)| (a.location.clone(), m)),
            )
        }
        MeasureSpec::Density { marginals } => {
            for m in marginals {
                m.validate()?;
            }
            let units = floor_units(spec.mass(), n);
            if units == 0 {
                return Ok(AtomicMeasure::zero(n, dim));
            }
            if dim == 1 {
                let atoms = (0..units).map(|j| {
                    let u = (j as f64 + 0.5) / units as f64;
                    (vec![marginals[0].quantile(u)], 1)
                });
                return AtomicMeasure::from_atoms(n, 1, atoms);
            }
            // product grid with `side^dim >= units` cells sharing the units evenly
            let side = (units as f64).powf(1.0 / dim as f64).round().max(1.0) as u64;
            let cells = side.pow(dim as u32);
            let per_cell = units / cells;
            let extra = units % cells;
            let axis: Vec<Vec<f64>> = marginals
                .iter()
                .map(|m| {
                    (0..side)
                        .map(|j| m.quantile((j as f64 + 0.5) / side as f64))
                        .collect()
                })
                .collect();
            let mut atoms = Vec::with_capacity(cells as usize);
            for c in 0..cells {
                let mut rest = c;
                let loc: Vec<f64> = (0..dim)
                    .map(|k| {
                        let j = rest % side;
                        rest /= side;
                        axis[k][j as usize]
                    })
                    .collect();
                let m = per_cell + u64::from(c < extra);
                atoms.push((loc, m));
            }
            AtomicMeasure::from_atoms(n, dim, atoms)
        }
    }
}

fn floor_units(mass: f64, n: u64) -> u64 {
    // guard against 1.2 * 5 = 5.999999...
    let x = mass * n as f64;
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r as u64
    } else {
        x.floor() as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merges_identical_locations() {
        let m = AtomicMeasure::from_atoms(2, 1, [(vec![1.0], 1), (vec![0.0], 2), (vec![1.0], 3)])
            .unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.multiplicity(1), 4);
        assert_eq!(m.total_mass(), 3.0);
    }

    #[test]
    fn zero_multiplicity_atoms_are_dropped() {
        let m = AtomicMeasure::from_atoms(3, 1, [(vec![1.0], 0)]).unwrap();
        assert!(m.is_zero());
        assert_eq!(m.total_mass(), 0.0);
    }

    #[test]
    fn rejects_non_finite_locations() {
        assert!(AtomicMeasure::from_atoms(1, 1, [(vec![f64::NAN], 1)]).is_err());
    }

    #[test]
    fn floor_of_mass_rule() {
        let m = discretize(&MeasureSpec::dirac(vec![0.0], 1.26), 5).unwrap();
        assert!((m.total_mass() - 1.2).abs() < 1e-15);
        assert_eq!(m.total_multiplicity(), 6);
    }

    #[test]
    fn unit_dirac_gets_multiplicity_n() {
        for n in [1, 3, 50, 1000] {
            let m = discretize(&MeasureSpec::dirac(vec![0.0], 1.0), n).unwrap();
            assert_eq!(m.len(), 1);
            assert_eq!(m.multiplicity(0), n);
            assert_eq!(m.location(0), &[0.0]);
        }
    }

    #[test]
    fn uniform_density_midpoint_quantiles() {
        let spec = MeasureSpec::Density {
            marginals: vec![GridDensity::uniform(0.0, 1.0)],
        };
        let m = discretize(&spec, 4).unwrap();
        let locs: Vec<f64> = m.atoms().map(|(l, _)| l[0]).collect();
        let expected = [0.125, 0.375, 0.625, 0.875];
        for (a, b) in locs.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((m.pair_with(|x| x[0]).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn triangular_density_quantile_inverts_cdf() {
        // f(x) = 2x on [0,1]; CDF x^2
        let d = GridDensity {
            xs: vec![0.0, 1.0],
            values: vec![0.0, 2.0],
        };
        for u in [0.01, 0.25, 0.5, 0.9] {
            assert!((d.quantile(u) - f64::sqrt(u)).abs() < 1e-12);
        }
    }

    #[test]
    fn negative_weights_are_rejected() {
        let spec = MeasureSpec::Atoms {
            atoms: vec![WeightedAtom {
                location: vec![0.0],
                weight: -0.1,
            }],
        };
        assert!(matches!(discretize(&spec, 3), Err(MeasureError::InvalidMeasure(_))));
    }

    #[test]
    fn largest_remainder_rounding() {
        let spec = MeasureSpec::Atoms {
            atoms: vec![
                WeightedAtom { location: vec![0.0], weight: 0.35 },
                WeightedAtom { location: vec![1.0], weight: 0.35 },
                WeightedAtom { location: vec![2.0], weight: 0.3 },
            ],
        };
        let m = discretize(&spec, 10).unwrap();
        assert_eq!(m.total_multiplicity(), 10);
    }

    #[test]
    fn product_density_in_two_dimensions() {
        let spec = MeasureSpec::Density {
            marginals: vec![GridDensity::uniform(0.0, 1.0), GridDensity::uniform(0.0, 2.0)],
        };
        // mass 2, level 8 -> 16 units on a 4x4 grid
        let m = discretize(&spec, 8).unwrap();
        assert_eq!(m.total_multiplicity(), 16);
        assert_eq!(m.len(), 16);
        assert!((m.pair_with(|x| x[0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((m.pair_with(|x| x[1]).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let m = AtomicMeasure::from_atoms(7, 2, [(vec![0.5, -1.25], 3), (vec![1e-3, 2.0], 1)]).unwrap();
        let back = AtomicMeasure::from_csv(&m.to_csv()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn union_moves_to_common_level() {
        let a = AtomicMeasure::dirac(2, vec![0.0], 1).unwrap();
        let b = AtomicMeasure::dirac(3, vec![1.0], 1).unwrap();
        let u = a.union(&b).unwrap();
        assert_eq!(u.level(), 6);
        assert!((u.total_mass() - (0.5 + 1.0 / 3.0)).abs() < 1e-15);
    }
}
