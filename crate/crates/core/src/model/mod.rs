//! Parameter space, priors, deposit datasets and the simulator contract.

mod external;
mod surrogate;

pub use external::{AdapterConfig, ExternalSimulator};
pub use surrogate::Surrogate;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;

/// A point in parameter space. For the volcanic deposition model this is
/// `(u0, r0)`: initial plume velocity in m/s and vent radius in m. The engine
/// itself is dimension-agnostic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterVector(pub Vec<f64>);

impl ParameterVector {
    pub fn new(components: Vec<f64>) -> Self {
        ParameterVector(components)
    }

    /// Convenience constructor for the two-parameter plume model.
    pub fn plume(u0: f64, r0: f64) -> Self {
        ParameterVector(vec![u0, r0])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Initial plume velocity (first component).
    pub fn u0(&self) -> f64 {
        self.0[0]
    }

    /// Vent radius (second component).
    pub fn r0(&self) -> f64 {
        self.0[1]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Euclidean distance to another parameter vector.
    pub fn euclidean_distance(&self, other: &ParameterVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl From<DVector<f64>> for ParameterVector {
    fn from(v: DVector<f64>) -> Self {
        ParameterVector(v.data.into())
    }
}

/// Prior distribution interface used by the ABC engine.
pub trait Prior {
    fn dim(&self) -> usize;
    fn sample(&self, rng: &mut dyn rand::RngCore) -> ParameterVector;
    /// Density value at `theta` (not log).
    fn density(&self, theta: &ParameterVector) -> f64;
    fn contains(&self, theta: &ParameterVector) -> bool {
        self.density(theta) > 0.0
    }
}

/// Axis-aligned box with independent uniform marginals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl PriorBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::InvalidPriorBox(format!(
                "bound lengths differ or are empty: {} vs {}",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !l.is_finite() || !u.is_finite() || l >= u {
                return Err(Error::InvalidPriorBox(format!(
                    "dimension {i}: require finite lower < upper, got [{l}, {u}]"
                )));
            }
        }
        Ok(PriorBox { lower, upper })
    }

    /// The default plume prior: `u0 ~ U(100, 300)`, `r0 ~ U(30, 100)`.
    pub fn plume_default() -> Self {
        PriorBox {
            lower: vec![100.0, 30.0],
            upper: vec![300.0, 100.0],
        }
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| u - l)
            .product()
    }

    /// Length of the box diagonal.
    pub fn diagonal(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| (u - l) * (u - l))
            .sum::<f64>()
            .sqrt()
    }
}

impl Prior for PriorBox {
    fn dim(&self) -> usize {
        self.lower.len()
    }

    fn sample(&self, rng: &mut dyn rand::RngCore) -> ParameterVector {
        let components = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| l + rng.random::<f64>() * (u - l))
            .collect();
        ParameterVector(components)
    }

    fn density(&self, theta: &ParameterVector) -> f64 {
        if theta.dim() != self.dim() {
            return 0.0;
        }
        let inside = theta
            .as_slice()
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| v >= l && v <= u);
        if inside {
            1.0 / self.volume()
        } else {
            0.0
        }
    }
}

/// Draw `n` i.i.d. samples from the prior box. Identical seeds produce
/// identical sample lists.
pub fn sample_prior(prior: &PriorBox, seed: u64, n: usize) -> Result<Vec<ParameterVector>> {
    if n == 0 {
        return Err(Error::InvalidConfig("sample count must be >= 1".into()));
    }
    let mut rng = rng_from(seed);
    Ok((0..n).map(|_| prior.sample(&mut rng)).collect())
}

/// Ground tephra mass loads (kg/m^2) at a fixed set of measurement sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepositDataset {
    loads: Vec<f64>,
    location_ids: Vec<u32>,
}

impl DepositDataset {
    /// Builds a dataset with implicit location ids `0..n`.
    pub fn new(loads: Vec<f64>) -> Result<Self> {
        let ids = (0..loads.len() as u32).collect();
        Self::with_ids(loads, ids)
    }

    pub fn with_ids(loads: Vec<f64>, location_ids: Vec<u32>) -> Result<Self> {
        if loads.len() != location_ids.len() {
            return Err(Error::InvalidDataset(format!(
                "{} loads but {} location ids",
                loads.len(),
                location_ids.len()
            )));
        }
        if loads.is_empty() {
            return Err(Error::InvalidDataset("empty dataset".into()));
        }
        for (i, v) in loads.iter().enumerate() {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::InvalidDataset(format!(
                    "load at index {i} is {v}; loads must be finite and non-negative"
                )));
            }
        }
        Ok(DepositDataset {
            loads,
            location_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.loads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loads.is_empty()
    }

    pub fn loads(&self) -> &[f64] {
        &self.loads
    }

    pub fn location_ids(&self) -> &[u32] {
        &self.location_ids
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.loads)
    }

    pub fn total_mass(&self) -> f64 {
        self.loads.iter().sum()
    }
}

/// Fixed physical constants plus the surrogate's noise and seeding knobs.
///
/// `t0`, `n0`, `d_a` and `d_p` parameterize the full transport model and are
/// carried as run metadata; the analytic surrogate does not consume them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatorConfig {
    /// Initial temperature at the vent [K].
    pub t0: f64,
    /// Exsolved volatile mass fraction.
    pub n0: f64,
    /// Atmospheric diffusion coefficient [m^2/s].
    pub d_a: f64,
    /// Plume diffusion coefficient [m^2/s].
    pub d_p: f64,
    /// Standard deviation of the multiplicative log-normal noise.
    pub noise_scale: f64,
    /// Base RNG seed; per-call streams are derived from it.
    pub seed: u64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        SimulatorConfig {
            t0: 1256.0,
            n0: 0.01,
            d_a: 300.0,
            d_p: 1500.0,
            noise_scale: 0.1,
            seed: 0,
        }
    }
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t0 > 0.0) {
            return Err(Error::InvalidConfig(format!("t0 must be > 0, got {}", self.t0)));
        }
        if !(self.n0 > 0.0 && self.n0 < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "n0 must lie in (0, 1), got {}",
                self.n0
            )));
        }
        if !(self.d_a > 0.0 && self.d_p > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "diffusion coefficients must be > 0, got d_a={}, d_p={}",
                self.d_a, self.d_p
            )));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "noise_scale must be finite and >= 0, got {}",
                self.noise_scale
            )));
        }
        Ok(())
    }
}

/// Measurement site geometry. Shipped as a CSV data file (`id,x_m,y_m`) so
/// real field coordinates can be substituted for the synthetic fan.
#[derive(Debug, Clone, PartialEq)]
pub struct Locations {
    ids: Vec<u32>,
    x_m: Vec<f64>,
    y_m: Vec<f64>,
}

impl Locations {
    pub fn new(ids: Vec<u32>, x_m: Vec<f64>, y_m: Vec<f64>) -> Result<Self> {
        if ids.len() != x_m.len() || ids.len() != y_m.len() || ids.is_empty() {
            return Err(Error::InvalidConfig("location columns must be non-empty and equal length".into()));
        }
        Ok(Locations { ids, x_m, y_m })
    }

    /// Synthetic radial fan around the vent: `rings.len() * spokes` sites,
    /// spokes at equal azimuth steps. This generates the geometry shipped in
    /// `data/locations.csv` (6 rings x 12 spokes = 72 sites).
    pub fn radial_fan(ring_radii_m: &[f64], spokes: usize) -> Self {
        let mut ids = Vec::new();
        let mut x_m = Vec::new();
        let mut y_m = Vec::new();
        for (ri, &r) in ring_radii_m.iter().enumerate() {
            for s in 0..spokes {
                let phi = 2.0 * std::f64::consts::PI * (s as f64) / (spokes as f64);
                ids.push((ri * spokes + s) as u32);
                x_m.push(r * phi.cos());
                y_m.push(r * phi.sin());
            }
        }
        Locations { ids, x_m, y_m }
    }

    /// The default 72-site fan used throughout the test suite.
    pub fn default_fan() -> Self {
        Self::radial_fan(&[150.0, 250.0, 400.0, 600.0, 800.0, 1000.0], 12)
    }

    pub fn from_csv_path(path: &std::path::Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let mut ids = Vec::new();
        let mut x_m = Vec::new();
        let mut y_m = Vec::new();
        for record in reader.deserialize() {
            let row: LocationRow = record?;
            ids.push(row.id);
            x_m.push(row.x_m);
            y_m.push(row.y_m);
        }
        Self::new(ids, x_m, y_m)
    }

    pub fn to_csv_path(&self, path: &std::path::Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        for i in 0..self.len() {
            writer.serialize(LocationRow {
                id: self.ids[i],
                x_m: self.x_m[i],
                y_m: self.y_m[i],
            })?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    /// Distance of each site from the vent at the origin.
    pub fn radii(&self) -> Vec<f64> {
        self.x_m
            .iter()
            .zip(&self.y_m)
            .map(|(x, y)| (x * x + y * y).sqrt())
            .collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LocationRow {
    id: u32,
    x_m: f64,
    y_m: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prior_box_rejects_bad_bounds() {
        assert!(PriorBox::new(vec![1.0], vec![1.0]).is_err());
        assert!(PriorBox::new(vec![2.0], vec![1.0]).is_err());
        assert!(PriorBox::new(vec![1.0, 2.0], vec![3.0]).is_err());
        assert!(PriorBox::new(vec![f64::NAN], vec![1.0]).is_err());
    }

    #[test]
    fn sample_prior_is_deterministic() {
        let prior = PriorBox::new(vec![100.0, 30.0], vec![300.0, 100.0]).unwrap();
        let a = sample_prior(&prior, 7, 50).unwrap();
        let b = sample_prior(&prior, 7, 50).unwrap();
        assert_eq!(a, b);
        let c = sample_prior(&prior, 8, 50).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sample_prior_collapsed_support() {
        let eps = 1e-9;
        let prior = PriorBox::new(vec![100.0, 30.0], vec![100.0 + eps, 30.0 + eps]).unwrap();
        for theta in sample_prior(&prior, 3, 20).unwrap() {
            assert!((theta.u0() - 100.0).abs() <= eps);
            assert!((theta.r0() - 30.0).abs() <= eps);
        }
    }

    #[test]
    fn sample_prior_mean_matches_uniform() {
        let prior = PriorBox::new(vec![100.0, 30.0], vec![300.0, 100.0]).unwrap();
        let n = 10_000;
        let samples = sample_prior(&prior, 11, n).unwrap();
        for (dim, (expect_mean, width)) in [(200.0, 200.0), (65.0, 70.0)].iter().enumerate() {
            let mean = samples.iter().map(|t| t.as_slice()[dim]).sum::<f64>() / n as f64;
            // Standard error of the mean of U(a, b) is width / sqrt(12 n).
            let se = width / (12.0 * n as f64).sqrt();
            assert!(
                (mean - expect_mean).abs() < 3.0 * se,
                "dim {dim}: mean {mean} vs {expect_mean} (se {se})"
            );
        }
    }

    #[test]
    fn prior_sampling_uniform_ks() {
        // Kolmogorov-Smirnov statistic per dimension below 1.63/sqrt(n).
        let prior = PriorBox::new(vec![100.0, 30.0], vec![300.0, 100.0]).unwrap();
        let n = 10_000;
        let samples = sample_prior(&prior, 5, n).unwrap();
        for dim in 0..2 {
            let (l, u) = (prior.lower()[dim], prior.upper()[dim]);
            let mut vals: Vec<f64> = samples
                .iter()
                .map(|t| (t.as_slice()[dim] - l) / (u - l))
                .collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let ks = vals
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let ecdf_hi = (i + 1) as f64 / n as f64;
                    let ecdf_lo = i as f64 / n as f64;
                    (ecdf_hi - v).abs().max((v - ecdf_lo).abs())
                })
                .fold(0.0, f64::max);
            assert!(ks < 1.63 / (n as f64).sqrt(), "dim {dim}: KS = {ks}");
        }
    }

    #[test]
    fn dataset_rejects_negative_and_non_finite() {
        assert!(DepositDataset::new(vec![1.0, -0.5]).is_err());
        assert!(DepositDataset::new(vec![f64::INFINITY]).is_err());
        assert!(DepositDataset::new(vec![]).is_err());
        assert!(DepositDataset::new(vec![0.0, 3.5]).is_ok());
    }

    #[test]
    fn fan_geometry_has_expected_shape() {
        let fan = Locations::default_fan();
        assert_eq!(fan.len(), 72);
        let radii = fan.radii();
        let min = radii.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = radii.iter().cloned().fold(0.0, f64::max);
        assert!((min - 150.0).abs() < 1e-9);
        assert!((max - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn locations_csv_roundtrip() {
        let fan = Locations::default_fan();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("locations.csv");
        fan.to_csv_path(&path).unwrap();
        let back = Locations::from_csv_path(&path).unwrap();
        assert_eq!(fan, back);
    }
}
