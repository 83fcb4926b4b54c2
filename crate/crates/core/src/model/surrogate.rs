//! Analytic stand-in for the full tephra transport simulator.
//!
//! The deposit at a site with distance `r` from the vent is an isotropic
//! Gaussian footprint with multiplicative log-normal noise:
//!
//! ```text
//! H(theta)  = c_H * sqrt(u0 * r0),   c_H = 10 m^(1/2) s^(1/2)
//! sigma     = 0.2 * H(theta)
//! M_tot     = 1e9 kg * (r0 / 50 m)^2
//! y_i       = M_tot / (2 pi sigma^2) * exp(-r_i^2 / (2 sigma^2)) * exp(eps_i)
//! eps_i ~ Normal(0, noise_scale^2)
//! ```
//!
//! The noise stream for site `i` is keyed by `(seed, theta bits, i)`, so the
//! output is a pure function of `(theta, config, seed)` and any contiguous
//! site range can be computed independently by a cooperating worker.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{DepositDataset, Locations, ParameterVector, SimulatorConfig};
use crate::error::{Error, Result};
use crate::rng::{derive_stream, hash_f64s, rng_from};

const PLUME_HEIGHT_COEFF: f64 = 10.0;
const SIGMA_FRACTION: f64 = 0.2;
const MASS_SCALE_KG: f64 = 1e9;
const REFERENCE_RADIUS_M: f64 = 50.0;

#[derive(Debug, Clone)]
pub struct Surrogate {
    config: SimulatorConfig,
    locations: Locations,
    radii: Vec<f64>,
}

impl Surrogate {
    pub fn new(config: SimulatorConfig, locations: Locations) -> Result<Self> {
        config.validate()?;
        let radii = locations.radii();
        Ok(Surrogate {
            config,
            locations,
            radii,
        })
    }

    pub fn config(&self) -> &SimulatorConfig {
        &self.config
    }

    pub fn locations(&self) -> &Locations {
        &self.locations
    }

    pub fn output_len(&self) -> usize {
        self.locations.len()
    }

    /// Plume height for the given parameters [m].
    pub fn plume_height(theta: &ParameterVector) -> f64 {
        PLUME_HEIGHT_COEFF * (theta.u0() * theta.r0()).sqrt()
    }

    fn check_theta(&self, theta: &ParameterVector) -> Result<()> {
        if theta.dim() != 2 {
            return Err(Error::DimensionMismatch {
                context: "surrogate parameter vector",
                expected: 2,
                got: theta.dim(),
            });
        }
        if !theta.is_finite() || theta.u0() <= 0.0 || theta.r0() <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "plume parameters must be finite and positive, got ({}, {})",
                theta.u0(),
                theta.r0()
            )));
        }
        Ok(())
    }

    /// Simulate with the configured base seed.
    pub fn simulate(&self, theta: &ParameterVector) -> Result<DepositDataset> {
        self.simulate_seeded(theta, self.config.seed)
    }

    /// Simulate with an explicit stream seed (one per ABC work item).
    pub fn simulate_seeded(&self, theta: &ParameterVector, seed: u64) -> Result<DepositDataset> {
        let loads = self.simulate_range(theta, seed, 0..self.locations.len())?;
        DepositDataset::with_ids(loads, self.locations.ids().to_vec())
    }

    /// Loads for a contiguous range of site indices. Concatenating the
    /// ranges `0..k` and `k..n` reproduces `simulate_seeded` exactly, which
    /// is what lets a team split one simulation across workers.
    pub fn simulate_range(
        &self,
        theta: &ParameterVector,
        seed: u64,
        range: std::ops::Range<usize>,
    ) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        if range.end > self.locations.len() || range.start > range.end {
            return Err(Error::InvalidConfig(format!(
                "site range {range:?} out of bounds for {} locations",
                self.locations.len()
            )));
        }
        let sigma = SIGMA_FRACTION * Self::plume_height(theta);
        let m_tot = MASS_SCALE_KG * (theta.r0() / REFERENCE_RADIUS_M).powi(2);
        let amplitude = m_tot / (2.0 * std::f64::consts::PI * sigma * sigma);
        let theta_stream = derive_stream(seed, hash_f64s(theta.as_slice()));

        let mut loads = Vec::with_capacity(range.len());
        for i in range {
            let base = amplitude * (-self.radii[i] * self.radii[i] / (2.0 * sigma * sigma)).exp();
            let load = if self.config.noise_scale > 0.0 {
                let mut rng = rng_from(derive_stream(theta_stream, i as u64));
                let z: f64 = rng.sample(StandardNormal);
                base * (self.config.noise_scale * z).exp()
            } else {
                base
            };
            loads.push(load);
        }
        Ok(loads)
    }
}

impl crate::scheduler::ItemSimulator for Surrogate {
    /// Worker `part` of `of` computes its contiguous slice of the site
    /// vector; the default concatenating merge reassembles the dataset
    /// exactly because the noise stream is keyed per site.
    fn simulate_part(
        &self,
        item: &crate::scheduler::WorkItem,
        part: usize,
        of: usize,
    ) -> crate::scheduler::ItemOutcome {
        let n = self.locations.len();
        let chunk = n / of;
        let start = part * chunk;
        let end = if part == of - 1 { n } else { start + chunk };
        self.simulate_range(&item.theta, item.seed, start..end)
            .map_err(crate::scheduler::WorkFailure::from)
    }
}
