//! Rejection ABC and adaptive population Monte Carlo ABC.
//!
//! Both samplers work over any simulation backend, prior and dataset
//! distance. APMCABC evolves a weighted particle population: each step
//! replenishes the population by perturbing the particles that beat the
//! current threshold, then tightens the threshold to the keep-fraction
//! quantile of the merged population. The threshold sequence is strictly
//! decreasing; the run stops at the step budget, when the acceptance rate
//! falls below the configured cutoff, or when adaptation degenerates.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::distances::LearnedDistance;
use crate::error::{Error, Result};
use crate::model::{ParameterVector, Prior};
use crate::rng::{derive_stream, hash_f64s, rng_from};
use crate::scheduler::{ItemOutcome, TeamPool};
use crate::stats;

/// A weighted posterior sample point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Particle {
    pub theta: ParameterVector,
    pub weight: f64,
    pub distance: f64,
    /// FNV-1a of the simulated dataset, for run audits.
    pub dataset_hash: u64,
}

/// One APMCABC population.
#[derive(Debug, Clone)]
pub struct Generation {
    pub step: usize,
    /// Survivors plus newly simulated particles (`n_sample` of them),
    /// weights normalized over the whole list.
    pub particles: Vec<Particle>,
    pub gamma: f64,
    /// Fraction of newly simulated particles beating the previous
    /// generation's threshold (1 for the initial prior population).
    pub acceptance_rate: f64,
    /// Perturbation kernel covariance used to build this generation.
    pub kernel_cov: Option<DMatrix<f64>>,
}

impl Generation {
    /// The gamma-accepted subset with weights renormalized: the posterior
    /// sample this generation stands for, and the seed population for the
    /// next step.
    pub fn posterior_particles(&self) -> Vec<Particle> {
        let mut kept: Vec<Particle> = self
            .particles
            .iter()
            .filter(|p| p.distance < self.gamma)
            .cloned()
            .collect();
        let total: f64 = kept.iter().map(|p| p.weight).sum();
        if total > 0.0 {
            for p in &mut kept {
                p.weight /= total;
            }
        }
        kept
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbcConfig {
    pub n_sample: usize,
    /// Maximum number of recorded generations (the initial population
    /// counts as the first).
    pub n_step: usize,
    /// Stop when the acceptance rate drops below this.
    pub acc_cutoff: f64,
    /// Fraction of the population retained as the threshold quantile.
    pub keep_fraction: f64,
    pub seed: u64,
}

impl Default for AbcConfig {
    fn default() -> Self {
        AbcConfig {
            n_sample: 100,
            n_step: 12,
            acc_cutoff: 0.03,
            keep_fraction: 0.5,
            seed: 0,
        }
    }
}

impl AbcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sample < 2 || self.n_step == 0 {
            return Err(Error::InvalidConfig(
                "need n_sample >= 2 and n_step >= 1".into(),
            ));
        }
        if !(self.acc_cutoff > 0.0 && self.acc_cutoff < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "acc_cutoff must lie in (0, 1), got {}",
                self.acc_cutoff
            )));
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "keep_fraction must lie in (0, 1), got {}",
                self.keep_fraction
            )));
        }
        Ok(())
    }
}

/// Why an APMCABC run ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Termination {
    MaxSteps,
    AcceptanceCutoff { rate: f64 },
    /// The threshold hit zero spread (e.g. a constant distance) and cannot
    /// decrease further.
    DegenerateThreshold,
}

#[derive(Debug, Clone)]
pub struct ApmcRun {
    pub generations: Vec<Generation>,
    pub termination: Termination,
}

impl ApmcRun {
    pub fn final_generation(&self) -> &Generation {
        self.generations.last().expect("at least one generation")
    }
}

/// Where simulations run. The engine pins every request's seed before
/// dispatch, so outcomes cannot depend on scheduling order.
pub trait SimulationBackend {
    fn simulate_all(&mut self, requests: &[(ParameterVector, u64)]) -> Result<Vec<ItemOutcome>>;
}

impl SimulationBackend for TeamPool {
    fn simulate_all(&mut self, requests: &[(ParameterVector, u64)]) -> Result<Vec<ItemOutcome>> {
        TeamPool::simulate_all(self, requests)
    }
}

/// In-process backend for tests and toy models.
pub struct SerialBackend<F>(pub F);

impl<F> SimulationBackend for SerialBackend<F>
where
    F: FnMut(&ParameterVector, u64) -> Vec<f64>,
{
    fn simulate_all(&mut self, requests: &[(ParameterVector, u64)]) -> Result<Vec<ItemOutcome>> {
        Ok(requests
            .iter()
            .map(|(theta, seed)| Ok((self.0)(theta, *seed)))
            .collect())
    }
}

/// Copy of a particle list with weights scaled to sum to one.
fn normalized(particles: &[Particle]) -> Vec<Particle> {
    let total: f64 = particles.iter().map(|p| p.weight).sum();
    debug_assert!(total > 0.0, "population carries no weight");
    particles
        .iter()
        .map(|p| {
            let mut p = p.clone();
            p.weight /= total;
            p
        })
        .collect()
}

/// Simulate a population and return `(dataset, distance to x0)` per theta,
/// failing loudly with the offending particle index.
fn simulate_population(
    backend: &mut dyn SimulationBackend,
    d: &LearnedDistance,
    x0: &DVector<f64>,
    requests: &[(ParameterVector, u64)],
) -> Result<Vec<(DVector<f64>, f64)>> {
    let outcomes = backend.simulate_all(requests)?;
    let mut out = Vec::with_capacity(outcomes.len());
    for (index, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(loads) => {
                let x = DVector::from_vec(loads);
                let dist = d.distance(&x, x0)?;
                out.push((x, dist));
            }
            Err(failure) => {
                return Err(Error::SimulationFailed {
                    item_id: index as u64,
                    failure,
                });
            }
        }
    }
    Ok(out)
}

/// Plain rejection sampling: draw from the prior, keep every draw whose
/// simulated dataset lands within `gamma` of the observation.
pub fn rejection_abc(
    backend: &mut dyn SimulationBackend,
    prior: &dyn Prior,
    d: &LearnedDistance,
    x0: &DVector<f64>,
    gamma: f64,
    n_draws: usize,
    seed: u64,
) -> Result<Vec<Particle>> {
    if !(gamma >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "gamma must be non-negative, got {gamma}"
        )));
    }
    if n_draws == 0 {
        return Err(Error::InvalidConfig("n_draws must be >= 1".into()));
    }
    let mut rng = rng_from(derive_stream(seed, 0));
    let requests: Vec<(ParameterVector, u64)> = (0..n_draws)
        .map(|i| (prior.sample(&mut rng), derive_stream(seed, 1 + i as u64)))
        .collect();
    let simulated = simulate_population(backend, d, x0, &requests)?;

    let accepted: Vec<Particle> = requests
        .into_iter()
        .zip(simulated)
        .filter(|(_, (_, dist))| *dist < gamma)
        .map(|((theta, _), (x, dist))| Particle {
            theta,
            weight: 0.0,
            distance: dist,
            dataset_hash: hash_f64s(x.as_slice()),
        })
        .collect();
    if accepted.is_empty() {
        log::warn!("rejection ABC accepted nothing out of {n_draws} draws at gamma = {gamma}");
        return Ok(Vec::new());
    }
    let w = 1.0 / accepted.len() as f64;
    Ok(accepted
        .into_iter()
        .map(|mut p| {
            p.weight = w;
            p
        })
        .collect())
}

/// Adaptive population Monte Carlo ABC.
pub fn apmcabc(
    backend: &mut dyn SimulationBackend,
    prior: &dyn Prior,
    d: &LearnedDistance,
    x0: &DVector<f64>,
    cfg: &AbcConfig,
) -> Result<ApmcRun> {
    cfg.validate()?;
    let dim = prior.dim();
    let alpha = cfg.keep_fraction;

    // Step 0: a plain prior population.
    let step_seed = derive_stream(cfg.seed, 0);
    let mut rng = rng_from(derive_stream(step_seed, 0));
    let requests: Vec<(ParameterVector, u64)> = (0..cfg.n_sample)
        .map(|i| (prior.sample(&mut rng), derive_stream(step_seed, 1 + i as u64)))
        .collect();
    let simulated = simulate_population(backend, d, x0, &requests)?;
    // Raw importance weights: every particle carries pi(theta) over the
    // density of whatever proposed it. Prior draws get exactly 1, fresh
    // perturbed particles get pi over the kernel mixture, so raw weights
    // stay on one scale across generations and the merged population
    // normalizes coherently.
    let mut population: Vec<Particle> = requests
        .into_iter()
        .zip(&simulated)
        .map(|((theta, _), (x, dist))| Particle {
            theta,
            weight: 1.0,
            distance: *dist,
            dataset_hash: hash_f64s(x.as_slice()),
        })
        .collect();
    let distances: Vec<f64> = population.iter().map(|p| p.distance).collect();
    let gamma0 = stats::quantile(&distances, alpha);
    let mut generations = vec![Generation {
        step: 0,
        particles: normalized(&population),
        gamma: gamma0,
        acceptance_rate: 1.0,
        kernel_cov: None,
    }];

    let mut termination = Termination::MaxSteps;
    for step in 1..cfg.n_step {
        let prev_gamma = generations.last().unwrap().gamma;
        // Retained set: raw-weight particles beating the threshold.
        let mut retained: Vec<Particle> = population
            .iter()
            .filter(|p| p.distance < prev_gamma)
            .cloned()
            .collect();
        if retained.is_empty() {
            log::warn!(
                "no particle beats gamma = {prev_gamma} at step {step}; threshold adaptation is degenerate"
            );
            termination = Termination::DegenerateThreshold;
            break;
        }
        let raw_retained_sum: f64 = retained.iter().map(|p| p.weight).sum();
        let normalized_retained: Vec<f64> = retained
            .iter()
            .map(|p| p.weight / raw_retained_sum)
            .collect();

        // Perturbation kernel: twice the weighted covariance of the
        // retained set, regularized if rank-deficient.
        let thetas: Vec<DVector<f64>> = retained.iter().map(|p| p.theta.to_dvector()).collect();
        let weights: Vec<f64> = normalized_retained.clone();
        let mut kernel_cov = stats::weighted_covariance(&thetas, &weights) * 2.0;
        let chol = loop {
            match kernel_cov.clone().cholesky() {
                Some(c) => break c,
                None => {
                    let trace = kernel_cov.trace();
                    let bump = if trace > 0.0 { 1e-8 * trace } else { 1e-12 };
                    log::warn!(
                        "kernel covariance rank-deficient at step {step}; regularizing by {bump:e} I"
                    );
                    kernel_cov += DMatrix::identity(dim, dim) * bump;
                }
            }
        };

        let step_seed = derive_stream(cfg.seed, step as u64);
        let mut rng = rng_from(derive_stream(step_seed, 0));
        let ancestor_index = WeightedIndex::new(&weights)
            .map_err(|e| Error::InvalidConfig(format!("invalid retained weights: {e}")))?;

        let n_new = cfg.n_sample - retained.len();
        if n_new == 0 {
            return Err(Error::GammaStalled {
                step,
                gamma: prev_gamma,
            });
        }
        let mut proposals = Vec::with_capacity(n_new);
        for i in 0..n_new {
            let ancestor = &retained[ancestor_index.sample(&mut rng)];
            let center = ancestor.theta.to_dvector();
            // Truncated Gaussian by redraw, capped; fall back to a fresh
            // prior draw if the kernel cannot land inside the support.
            let mut proposal = None;
            for _ in 0..1000 {
                let z = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                let candidate = ParameterVector::from(&center + chol.l() * z);
                if prior.contains(&candidate) {
                    proposal = Some(candidate);
                    break;
                }
            }
            let theta = proposal.unwrap_or_else(|| {
                log::warn!("perturbation kernel escaped the prior 1000 times; drawing from the prior");
                prior.sample(&mut rng)
            });
            proposals.push((theta, derive_stream(step_seed, 1 + i as u64)));
        }

        let simulated = simulate_population(backend, d, x0, &proposals)?;
        let accepted_new = simulated
            .iter()
            .filter(|(_, dist)| *dist < prev_gamma)
            .count();
        let acceptance_rate = accepted_new as f64 / n_new as f64;

        // Raw importance weights for the fresh particles: prior density
        // over the kernel mixture induced by the (normalized) retained set.
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let norm_const = -0.5 * (dim as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
        let mixture_density = |theta: &DVector<f64>| -> f64 {
            weights
                .iter()
                .zip(&thetas)
                .map(|(w, mu)| {
                    let diff = theta - mu;
                    let solved = chol.l_dirty().solve_lower_triangular(&diff).unwrap();
                    w * (norm_const - 0.5 * solved.norm_squared()).exp()
                })
                .sum()
        };

        for ((theta, _), (x, dist)) in proposals.iter().zip(&simulated) {
            let theta_dv = theta.to_dvector();
            let denom = mixture_density(&theta_dv);
            let weight = if denom > 0.0 {
                prior.density(theta) / denom
            } else {
                0.0
            };
            retained.push(Particle {
                theta: theta.clone(),
                weight,
                distance: *dist,
                dataset_hash: hash_f64s(x.as_slice()),
            });
        }
        let merged = retained;

        let merged_distances: Vec<f64> = merged.iter().map(|p| p.distance).collect();
        let gamma = stats::quantile(&merged_distances, alpha);
        if !(gamma < prev_gamma) {
            return Err(Error::GammaStalled { step, gamma });
        }

        population = merged;
        generations.push(Generation {
            step,
            particles: normalized(&population),
            gamma,
            acceptance_rate,
            kernel_cov: Some(kernel_cov),
        });

        if acceptance_rate < cfg.acc_cutoff {
            termination = Termination::AcceptanceCutoff {
                rate: acceptance_rate,
            };
            break;
        }
    }

    Ok(ApmcRun {
        generations,
        termination,
    })
}

/// Posterior mean under squared-error loss.
pub fn bayes_estimate(particles: &[Particle]) -> Result<ParameterVector> {
    if particles.is_empty() {
        return Err(Error::EmptyParticles);
    }
    let dim = particles[0].theta.dim();
    let total: f64 = particles.iter().map(|p| p.weight).sum();
    if !(total > 0.0) {
        return Err(Error::InvalidConfig("zero total particle weight".into()));
    }
    let mut mean = vec![0.0; dim];
    for p in particles {
        for (m, v) in mean.iter_mut().zip(p.theta.as_slice()) {
            *m += p.weight / total * v;
        }
    }
    Ok(ParameterVector::new(mean))
}

/// Weighted Pearson correlation between the two plume parameters.
pub fn posterior_correlation(particles: &[Particle]) -> Result<f64> {
    if particles.len() < 2 {
        return Err(Error::EmptyParticles);
    }
    if particles[0].theta.dim() != 2 {
        return Err(Error::DimensionMismatch {
            context: "posterior correlation",
            expected: 2,
            got: particles[0].theta.dim(),
        });
    }
    let mean = bayes_estimate(particles)?;
    let total: f64 = particles.iter().map(|p| p.weight).sum();
    let (mut c00, mut c11, mut c01) = (0.0, 0.0, 0.0);
    for p in particles {
        let w = p.weight / total;
        let d0 = p.theta.u0() - mean.u0();
        let d1 = p.theta.r0() - mean.r0();
        c00 += w * d0 * d0;
        c11 += w * d1 * d1;
        c01 += w * d0 * d1;
    }
    if c00 <= 0.0 {
        return Err(Error::ZeroVariance { component: 0 });
    }
    if c11 <= 0.0 {
        return Err(Error::ZeroVariance { component: 1 });
    }
    Ok(c01 / (c00 * c11).sqrt())
}

/// Per-location predictive boxplot statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpcRow {
    pub location_id: u32,
    pub obs: f64,
    pub mean: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub lo_whisker: f64,
    pub hi_whisker: f64,
}

#[derive(Debug, Clone)]
pub struct PpcOutcome {
    pub rows: Vec<PpcRow>,
    pub draws_used: usize,
    pub draws_failed: usize,
}

/// Posterior predictive check: resample parameters by weight, simulate one
/// dataset each, and summarize per location (Tukey boxplot whiskers: the
/// most extreme data within 1.5 IQR of the quartiles).
pub fn posterior_predictive_check(
    particles: &[Particle],
    backend: &mut dyn SimulationBackend,
    x0: &DVector<f64>,
    n_draws: usize,
    seed: u64,
) -> Result<PpcOutcome> {
    if particles.is_empty() {
        return Err(Error::EmptyParticles);
    }
    if n_draws == 0 {
        return Err(Error::InvalidConfig("n_draws must be >= 1".into()));
    }
    let weights: Vec<f64> = particles.iter().map(|p| p.weight).collect();
    let index = WeightedIndex::new(&weights)
        .map_err(|e| Error::InvalidConfig(format!("invalid particle weights: {e}")))?;
    let mut rng = rng_from(derive_stream(seed, 0));
    let requests: Vec<(ParameterVector, u64)> = (0..n_draws)
        .map(|i| {
            (
                particles[index.sample(&mut rng)].theta.clone(),
                derive_stream(seed, 1 + i as u64),
            )
        })
        .collect();
    let outcomes = backend.simulate_all(&requests)?;
    let mut draws: Vec<Vec<f64>> = Vec::with_capacity(n_draws);
    let mut failed = 0usize;
    for outcome in outcomes {
        match outcome {
            Ok(loads) if loads.len() == x0.len() => draws.push(loads),
            Ok(_) => failed += 1,
            Err(f) => {
                log::warn!("predictive draw failed: {f}");
                failed += 1;
            }
        }
    }
    if draws.is_empty() {
        return Err(Error::InvalidConfig(
            "every predictive draw failed; nothing to summarize".into(),
        ));
    }

    let mut rows = Vec::with_capacity(x0.len());
    for loc in 0..x0.len() {
        let mut values: Vec<f64> = draws.iter().map(|d| d[loc]).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q25 = stats::quantile_sorted(&values, 0.25);
        let q50 = stats::quantile_sorted(&values, 0.50);
        let q75 = stats::quantile_sorted(&values, 0.75);
        let iqr = q75 - q25;
        let lo_fence = q25 - 1.5 * iqr;
        let hi_fence = q75 + 1.5 * iqr;
        let lo_whisker = values
            .iter()
            .cloned()
            .find(|v| *v >= lo_fence)
            .unwrap_or(values[0]);
        let hi_whisker = values
            .iter()
            .rev()
            .cloned()
            .find(|v| *v <= hi_fence)
            .unwrap_or(*values.last().unwrap());
        rows.push(PpcRow {
            location_id: loc as u32,
            obs: x0[loc],
            mean: stats::mean(&values),
            q25,
            q50,
            q75,
            lo_whisker,
            hi_whisker,
        });
    }
    Ok(PpcOutcome {
        rows,
        draws_used: draws.len(),
        draws_failed: failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PriorBox;
    use approx::assert_relative_eq;
    use rand::Rng;

    /// 1-D conjugate toy: theta ~ N(0,1), x | theta ~ N(theta, sigma_x^2).
    struct GaussianPrior;

    impl Prior for GaussianPrior {
        fn dim(&self) -> usize {
            1
        }

        fn sample(&self, rng: &mut dyn rand::RngCore) -> ParameterVector {
            let z: f64 = rand_distr::Distribution::sample(&StandardNormal, &mut *rng);
            ParameterVector::new(vec![z])
        }

        fn density(&self, theta: &ParameterVector) -> f64 {
            let t = theta.as_slice()[0];
            (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt()
        }

        fn contains(&self, _theta: &ParameterVector) -> bool {
            true
        }
    }

    const SIGMA_X: f64 = 0.1;

    fn toy_backend() -> SerialBackend<impl FnMut(&ParameterVector, u64) -> Vec<f64>> {
        SerialBackend(|theta: &ParameterVector, seed: u64| {
            let mut rng = rng_from(seed);
            let z: f64 = rng.sample(StandardNormal);
            vec![theta.as_slice()[0] + SIGMA_X * z]
        })
    }

    /// Analytic posterior for observation x0: N(mu_n, var_n).
    fn analytic_posterior(x0: f64) -> (f64, f64) {
        let precision = 1.0 + 1.0 / (SIGMA_X * SIGMA_X);
        let mu = (x0 / (SIGMA_X * SIGMA_X)) / precision;
        (mu, 1.0 / precision)
    }

    fn weighted_mean_var(particles: &[Particle]) -> (f64, f64, f64) {
        let total: f64 = particles.iter().map(|p| p.weight).sum();
        let mean: f64 = particles
            .iter()
            .map(|p| p.weight / total * p.theta.as_slice()[0])
            .sum();
        let var: f64 = particles
            .iter()
            .map(|p| {
                let d = p.theta.as_slice()[0] - mean;
                p.weight / total * d * d
            })
            .sum();
        let ess = 1.0
            / particles
                .iter()
                .map(|p| (p.weight / total) * (p.weight / total))
                .sum::<f64>();
        (mean, var, ess)
    }

    #[test]
    fn rejection_accepts_everything_with_zero_distance_stub() {
        let d = LearnedDistance::Euclidean;
        let prior = PriorBox::new(vec![0.0], vec![1.0]).unwrap();
        let x0 = DVector::from_column_slice(&[0.5]);
        // Simulator that always returns the observation itself.
        let mut backend = SerialBackend(|_: &ParameterVector, _| vec![0.5]);
        let accepted =
            rejection_abc(&mut backend, &prior, &d, &x0, 1e-9, 200, 3).unwrap();
        assert_eq!(accepted.len(), 200);
        let total: f64 = accepted.iter().map(|p| p.weight).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rejection_with_zero_gamma_accepts_nothing() {
        let d = LearnedDistance::Euclidean;
        let prior = PriorBox::new(vec![0.0], vec![1.0]).unwrap();
        let x0 = DVector::from_column_slice(&[0.5]);
        let mut backend = SerialBackend(|_: &ParameterVector, _| vec![0.5]);
        let accepted = rejection_abc(&mut backend, &prior, &d, &x0, 0.0, 50, 3).unwrap();
        assert!(accepted.is_empty());
    }

    #[test]
    fn rejection_recovers_conjugate_gaussian_posterior() {
        let x0_val = 0.3;
        let (mu, var) = analytic_posterior(x0_val);
        let x0 = DVector::from_column_slice(&[x0_val]);
        let mut backend = toy_backend();
        let accepted = rejection_abc(
            &mut backend,
            &GaussianPrior,
            &LearnedDistance::Euclidean,
            &x0,
            0.05,
            20_000,
            11,
        )
        .unwrap();
        assert!(accepted.len() > 300, "only {} accepted", accepted.len());
        let (mean, sample_var, ess) = weighted_mean_var(&accepted);
        let se = var.sqrt() / ess.sqrt();
        assert!(
            (mean - mu).abs() < 3.0 * se,
            "mean {mean} vs {mu} (se {se})"
        );
        assert!(
            (sample_var - var).abs() < 0.25 * var,
            "var {sample_var} vs {var}"
        );
    }

    #[test]
    fn apmcabc_recovers_conjugate_gaussian_posterior() {
        let x0_val = 0.3;
        let (mu, var) = analytic_posterior(x0_val);
        let x0 = DVector::from_column_slice(&[x0_val]);
        let mut backend = toy_backend();
        let cfg = AbcConfig {
            n_sample: 500,
            n_step: 14,
            acc_cutoff: 0.03,
            keep_fraction: 0.5,
            seed: 7,
        };
        let run = apmcabc(
            &mut backend,
            &GaussianPrior,
            &LearnedDistance::Euclidean,
            &x0,
            &cfg,
        )
        .unwrap();
        let posterior = run.final_generation().posterior_particles();
        let (mean, sample_var, ess) = weighted_mean_var(&posterior);
        let se = var.sqrt() / ess.sqrt();
        assert!(
            (mean - mu).abs() < 3.0 * se,
            "mean {mean} vs {mu} (se {se}, ess {ess})"
        );
        assert!(
            (sample_var - var).abs() < 0.25 * var,
            "var {sample_var} vs {var} (gamma {})",
            run.final_generation().gamma
        );
    }

    #[test]
    fn apmcabc_gamma_strictly_decreases_and_weights_normalize() {
        let x0 = DVector::from_column_slice(&[0.2]);
        let mut backend = toy_backend();
        let cfg = AbcConfig {
            n_sample: 120,
            n_step: 8,
            acc_cutoff: 0.01,
            keep_fraction: 0.5,
            seed: 5,
        };
        let run = apmcabc(
            &mut backend,
            &GaussianPrior,
            &LearnedDistance::Euclidean,
            &x0,
            &cfg,
        )
        .unwrap();
        assert!(run.generations.len() >= 2);
        for pair in run.generations.windows(2) {
            assert!(pair[1].gamma < pair[0].gamma);
        }
        for generation in &run.generations {
            let total: f64 = generation.particles.iter().map(|p| p.weight).sum();
            assert!((total - 1.0).abs() < 1e-12, "weights sum to {total}");
            assert_eq!(generation.particles.len(), cfg.n_sample);
            for p in generation.posterior_particles() {
                assert!(p.distance < generation.gamma);
            }
        }
    }

    #[test]
    fn apmcabc_respects_prior_box_truncation() {
        let prior = PriorBox::new(vec![0.0, 10.0], vec![1.0, 20.0]).unwrap();
        let x0 = DVector::from_column_slice(&[0.5, 15.0]);
        let mut backend = SerialBackend(|theta: &ParameterVector, seed: u64| {
            let mut rng = rng_from(seed);
            let z: f64 = rng.sample(StandardNormal);
            vec![theta.as_slice()[0] + 0.05 * z, theta.as_slice()[1] + 0.5 * z]
        });
        let cfg = AbcConfig {
            n_sample: 80,
            n_step: 6,
            acc_cutoff: 0.01,
            keep_fraction: 0.5,
            seed: 9,
        };
        let run = apmcabc(
            &mut backend,
            &prior,
            &LearnedDistance::Euclidean,
            &x0,
            &cfg,
        )
        .unwrap();
        for generation in &run.generations {
            for p in &generation.particles {
                assert!(prior.contains(&p.theta), "particle escaped the box: {:?}", p.theta);
            }
        }
    }

    #[test]
    fn constant_distance_terminates_degenerately() {
        // Distance identically zero: gamma_0 = 0, nothing beats it, and the
        // run ends after the initial prior population.
        let x0 = DVector::from_column_slice(&[0.0]);
        let mut backend = SerialBackend(|_: &ParameterVector, _| vec![0.0]);
        let cfg = AbcConfig {
            n_sample: 50,
            n_step: 5,
            ..AbcConfig::default()
        };
        let run = apmcabc(
            &mut backend,
            &GaussianPrior,
            &LearnedDistance::Euclidean,
            &x0,
            &cfg,
        )
        .unwrap();
        assert_eq!(run.generations.len(), 1);
        assert_eq!(run.termination, Termination::DegenerateThreshold);
        assert_eq!(run.generations[0].gamma, 0.0);
    }

    #[test]
    fn single_step_config_records_one_generation() {
        let x0 = DVector::from_column_slice(&[0.1]);
        let mut backend = toy_backend();
        let cfg = AbcConfig {
            n_sample: 40,
            n_step: 1,
            ..AbcConfig::default()
        };
        let run = apmcabc(
            &mut backend,
            &GaussianPrior,
            &LearnedDistance::Euclidean,
            &x0,
            &cfg,
        )
        .unwrap();
        assert_eq!(run.generations.len(), 1);
        assert_eq!(run.termination, Termination::MaxSteps);
    }

    #[test]
    fn bayes_estimate_basic_cases() {
        let particle = |u, r, w| Particle {
            theta: ParameterVector::plume(u, r),
            weight: w,
            distance: 0.0,
            dataset_hash: 0,
        };
        let single = vec![particle(3.0, 4.0, 1.0)];
        assert_eq!(bayes_estimate(&single).unwrap().as_slice(), &[3.0, 4.0]);
        let pair = vec![particle(0.0, 0.0, 0.5), particle(2.0, 2.0, 0.5)];
        assert_eq!(bayes_estimate(&pair).unwrap().as_slice(), &[1.0, 1.0]);
        assert!(bayes_estimate(&[]).is_err());
    }

    #[test]
    fn correlation_signs_and_null() {
        let line = |slope: f64, n: usize| -> Vec<Particle> {
            (0..n)
                .map(|i| Particle {
                    theta: ParameterVector::plume(i as f64, slope * i as f64 + 5.0),
                    weight: 1.0 / n as f64,
                    distance: 0.0,
                    dataset_hash: 0,
                })
                .collect()
        };
        assert_relative_eq!(posterior_correlation(&line(-1.0, 20)).unwrap(), -1.0, epsilon = 1e-12);
        assert_relative_eq!(posterior_correlation(&line(1.0, 20)).unwrap(), 1.0, epsilon = 1e-12);

        let mut rng = rng_from(13);
        let cloud: Vec<Particle> = (0..10_000)
            .map(|_| Particle {
                theta: ParameterVector::plume(rng.random::<f64>(), rng.random::<f64>()),
                weight: 1e-4,
                distance: 0.0,
                dataset_hash: 0,
            })
            .collect();
        assert!(posterior_correlation(&cloud).unwrap().abs() < 0.05);

        let degenerate: Vec<Particle> = (0..5)
            .map(|_| Particle {
                theta: ParameterVector::plume(1.0, 1.0),
                weight: 0.2,
                distance: 0.0,
                dataset_hash: 0,
            })
            .collect();
        assert!(matches!(
            posterior_correlation(&degenerate),
            Err(Error::ZeroVariance { .. })
        ));
    }

    #[test]
    fn ppc_deterministic_simulator_gives_zero_width_boxes() {
        let particles = vec![Particle {
            theta: ParameterVector::plume(2.0, 3.0),
            weight: 1.0,
            distance: 0.0,
            dataset_hash: 0,
        }];
        let mut backend = SerialBackend(|theta: &ParameterVector, _| {
            vec![theta.u0() * 1.5, theta.r0() * 2.0, 7.0]
        });
        let x0 = DVector::from_column_slice(&[3.0, 6.0, 7.0]);
        let out = posterior_predictive_check(&particles, &mut backend, &x0, 100, 21).unwrap();
        assert_eq!(out.rows.len(), 3);
        for row in &out.rows {
            assert_eq!(row.q25, row.q75);
            assert_eq!(row.lo_whisker, row.hi_whisker);
            assert_eq!(row.mean, row.q50);
        }
        assert_eq!(out.rows[2].obs, 7.0);
    }

    #[test]
    fn ppc_is_deterministic_per_seed() {
        let particles: Vec<Particle> = (0..10)
            .map(|i| Particle {
                theta: ParameterVector::plume(1.0 + i as f64, 2.0),
                weight: 0.1,
                distance: 0.0,
                dataset_hash: 0,
            })
            .collect();
        let make = || {
            SerialBackend(|theta: &ParameterVector, seed: u64| {
                let mut rng = rng_from(seed);
                vec![theta.u0() + rng.random::<f64>()]
            })
        };
        let x0 = DVector::from_column_slice(&[5.0]);
        let a = posterior_predictive_check(&particles, &mut make(), &x0, 50, 3).unwrap();
        let b = posterior_predictive_check(&particles, &mut make(), &x0, 50, 3).unwrap();
        assert_eq!(a.rows, b.rows);
        let c = posterior_predictive_check(&particles, &mut make(), &x0, 50, 4).unwrap();
        assert_ne!(a.rows, c.rows);
    }
}
