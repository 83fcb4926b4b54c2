//! Sparse Mahalanobis metric learning.
//!
//! Minimizes
//!
//! ```text
//! tr(M0^-1 M) - log det M + lambda * ||offdiag(M)||_1
//!     + eta * sum_{pairs (i,j)} K_ij (x_i - x_j)^T M (x_i - x_j)
//! ```
//!
//! over PSD matrices, with `K_ij = +1` on similar and `-1` on dissimilar
//! training pairs. The solver is proximal gradient descent: a step on the
//! smooth part, soft-thresholding of the off-diagonal entries for the l1
//! term, then projection onto the PSD cone by eigenvalue clipping, with
//! backtracking so the objective never increases across accepted iterates.

use nalgebra::{DMatrix, DVector};

use super::{SimilarityLabels, TrainingSet};
use crate::distances::MahalanobisMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SdmlConfig {
    /// Prior matrix; defaults to the sample covariance of the training
    /// datasets when `None`.
    pub m0: Option<DMatrix<f64>>,
    /// Similarity trade-off.
    pub eta: f64,
    /// l1 sparsity weight on off-diagonal entries.
    pub lambda: f64,
    pub max_iters: usize,
    /// Relative objective-change tolerance.
    pub tol: f64,
}

impl Default for SdmlConfig {
    fn default() -> Self {
        SdmlConfig {
            m0: None,
            eta: 0.15,
            lambda: 0.01,
            max_iters: 5000,
            tol: 1e-6,
        }
    }
}

impl SdmlConfig {
    fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidConfig(format!("eta must be >= 0, got {}", self.eta)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if self.max_iters == 0 || !(self.tol > 0.0) {
            return Err(Error::InvalidConfig("need max_iters >= 1 and tol > 0".into()));
        }
        Ok(())
    }
}

/// Smallest eigenvalue admitted in an iterate, relative to the largest.
const EIG_FLOOR_REL: f64 = 1e-10;
const BACKTRACK_LIMIT: usize = 40;

struct Objective {
    m0_inv: DMatrix<f64>,
    /// Constant gradient of the similarity term:
    /// `sum K_ij (x_i - x_j)(x_i - x_j)^T` over unordered training pairs.
    pair_gram: DMatrix<f64>,
    eta: f64,
    lambda: f64,
}

impl Objective {
    /// Value of the full objective; `None` when the log-det is undefined.
    fn value(&self, m: &DMatrix<f64>) -> Option<f64> {
        let chol = m.clone().cholesky()?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let trace_term = (&self.m0_inv * m).trace();
        let mut l1 = 0.0;
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                if r != c {
                    l1 += m[(r, c)].abs();
                }
            }
        }
        let pair_term = (&self.pair_gram * m).trace();
        let value = trace_term - log_det + self.lambda * l1 + self.eta * pair_term;
        value.is_finite().then_some(value)
    }

    /// Gradient of the smooth part: `M0^-1 - M^-1 + eta * pair_gram`.
    fn smooth_gradient(&self, m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        let inv = m.clone().cholesky()?.inverse();
        let mut grad = &self.m0_inv - inv;
        grad += &self.pair_gram * self.eta;
        grad.iter().all(|v| v.is_finite()).then_some(grad)
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Project onto symmetric matrices with eigenvalues at least
/// `EIG_FLOOR_REL * max_eig` (so the log-det stays defined).
fn project_pd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let floor = EIG_FLOOR_REL * max_eig.abs().max(1e-12);
    let vals = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|v| v.max(floor)),
    );
    symmetrize(&(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()))
}

fn soft_threshold_offdiag(m: &mut DMatrix<f64>, amount: f64) {
    if amount <= 0.0 {
        return;
    }
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if r != c {
                let v = m[(r, c)];
                m[(r, c)] = v.signum() * (v.abs() - amount).max(0.0);
            }
        }
    }
}

/// Sample covariance of the training datasets (mean-centered, `n - 1`
/// denominator).
pub fn sample_covariance(ts: &TrainingSet) -> DMatrix<f64> {
    let train = ts.train_indices();
    let dim = ts.data_dim();
    let mut mean = DVector::zeros(dim);
    for &i in train {
        mean += ts.dataset(i);
    }
    mean /= train.len() as f64;
    let mut cov = DMatrix::zeros(dim, dim);
    for &i in train {
        let d = ts.dataset(i) - &mean;
        cov.ger(1.0, &d, &d, 1.0);
    }
    cov / ((train.len().max(2) - 1) as f64)
}

/// Learned matrix plus the objective value at every accepted iterate.
#[derive(Debug, Clone)]
pub struct SdmlOutcome {
    pub matrix: MahalanobisMatrix,
    pub objective_trace: Vec<f64>,
}

pub fn train_sdml(
    ts: &TrainingSet,
    labels: &SimilarityLabels,
    cfg: &SdmlConfig,
) -> Result<MahalanobisMatrix> {
    train_sdml_traced(ts, labels, cfg).map(|out| out.matrix)
}

pub fn train_sdml_traced(
    ts: &TrainingSet,
    labels: &SimilarityLabels,
    cfg: &SdmlConfig,
) -> Result<SdmlOutcome> {
    cfg.validate()?;
    if labels.len() != ts.len() {
        return Err(Error::DimensionMismatch {
            context: "similarity labels vs training set",
            expected: ts.len(),
            got: labels.len(),
        });
    }
    let dim = ts.data_dim();
    let train = ts.train_indices();

    let mut m0 = match &cfg.m0 {
        Some(m) => {
            if m.nrows() != dim || m.ncols() != dim {
                return Err(Error::DimensionMismatch {
                    context: "SDML prior matrix",
                    expected: dim,
                    got: m.nrows(),
                });
            }
            symmetrize(m)
        }
        None => sample_covariance(ts),
    };
    // The prior must be invertible; nudge the diagonal if it is not.
    let m0_inv = loop {
        match m0.clone().try_inverse() {
            Some(inv) => break inv,
            None => {
                log::warn!("SDML prior singular; regularizing by +1e-6 I");
                m0 += DMatrix::identity(dim, dim) * 1e-6;
            }
        }
    };

    let mut pair_gram = DMatrix::zeros(dim, dim);
    for (a, &i) in train.iter().enumerate() {
        for &j in train.iter().skip(a + 1) {
            let k = if labels.is_similar(i, j) { 1.0 } else { -1.0 };
            let d = ts.dataset(i) - ts.dataset(j);
            pair_gram.ger(k, &d, &d, 1.0);
        }
    }

    let objective = Objective {
        m0_inv: symmetrize(&m0_inv),
        pair_gram,
        eta: cfg.eta,
        lambda: cfg.lambda,
    };

    let mut m = project_pd(&m0);
    let mut value = objective
        .value(&m)
        .ok_or(Error::SolverDiverged {
            iterations: 0,
            objective: f64::NAN,
        })?;
    let mut trace = vec![value];
    let mut step = 1.0 / (1.0 + objective.pair_gram.amax());

    for iter in 0..cfg.max_iters {
        let grad = objective.smooth_gradient(&m).ok_or(Error::SolverDiverged {
            iterations: iter,
            objective: value,
        })?;

        let mut accepted = false;
        for _ in 0..BACKTRACK_LIMIT {
            let mut candidate = &m - &grad * step;
            soft_threshold_offdiag(&mut candidate, cfg.lambda * step);
            let candidate = project_pd(&candidate);
            if let Some(cand_value) = objective.value(&candidate) {
                if cand_value < value {
                    let rel_change = (value - cand_value) / value.abs().max(1.0);
                    m = candidate;
                    value = cand_value;
                    trace.push(value);
                    accepted = true;
                    // Gentle growth so the next iteration can take a larger
                    // step after a cautious stretch.
                    step *= 2.0;
                    if rel_change < cfg.tol {
                        return finish(m, trace);
                    }
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            // No decreasing step exists at numerical resolution: converged.
            return finish(m, trace);
        }
    }
    log::warn!("SDML hit the iteration cap ({}) before tolerance", cfg.max_iters);
    finish(m, trace)
}

fn finish(m: DMatrix<f64>, objective_trace: Vec<f64>) -> Result<SdmlOutcome> {
    Ok(SdmlOutcome {
        matrix: MahalanobisMatrix::new_clipped(m)?,
        objective_trace,
    })
}
