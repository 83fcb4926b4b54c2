//! Distances between deposit datasets.
//!
//! Four interchangeable variants: plain Euclidean, Mahalanobis under a
//! learned PSD matrix, Euclidean between learned network embeddings, and
//! Euclidean between learned summary statistics. Each is the Euclidean norm
//! of a (possibly nonlinear) transform, so all of them are pseudometrics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LayerSpec, NetworkWeights};

/// Relative tolerance for the symmetry check.
const SYMMETRY_RTOL: f64 = 1e-10;
/// A matrix is accepted as PSD while `min_eig >= -PSD_RTOL * max_eig`.
const PSD_RTOL: f64 = 1e-8;

/// Symmetric positive semi-definite matrix for the Mahalanobis form
/// `d(x1, x2) = sqrt((x1-x2)^T M (x1-x2))`.
#[derive(Debug, Clone, PartialEq)]
pub struct MahalanobisMatrix {
    m: DMatrix<f64>,
}

impl MahalanobisMatrix {
    /// Validates symmetry and positive semi-definiteness.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::InvalidConfig(format!(
                "Mahalanobis matrix must be square and non-empty, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let scale = m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())).max(1e-300);
        for r in 0..m.nrows() {
            for c in (r + 1)..m.ncols() {
                if (m[(r, c)] - m[(c, r)]).abs() > SYMMETRY_RTOL * scale {
                    return Err(Error::InvalidConfig(format!(
                        "matrix asymmetric at ({r},{c}): {} vs {}",
                        m[(r, c)],
                        m[(c, r)]
                    )));
                }
            }
        }
        let eigenvalues = m.clone().symmetric_eigen().eigenvalues;
        let max_eig = eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        let min_eig = eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if min_eig < -PSD_RTOL * max_eig.max(1e-300) {
            return Err(Error::NotPositiveSemiDefinite {
                min_eigenvalue: min_eig,
                tolerance: PSD_RTOL * max_eig,
            });
        }
        Ok(MahalanobisMatrix { m })
    }

    /// Builds from a nearly-PSD matrix by clipping negative eigenvalues at
    /// zero. Used when deserializing training artifacts, where round-trips
    /// can leave tiny negative eigenvalues; logs a warning if it clips.
    pub fn new_clipped(m: DMatrix<f64>) -> Result<Self> {
        // Symmetrize first so the eigendecomposition is well-defined.
        let sym = (&m + m.transpose()) * 0.5;
        let eig = sym.clone().symmetric_eigen();
        let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if min_eig < 0.0 {
            log::warn!("clipping negative eigenvalues (min {min_eig:e}) to restore PSD");
            let mut vals = eig.eigenvalues.clone();
            vals.apply(|v| *v = v.max(0.0));
            let rebuilt =
                &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
            // Re-symmetrize against rounding in the reconstruction.
            let rebuilt = (&rebuilt + rebuilt.transpose()) * 0.5;
            Self::new(rebuilt)
        } else {
            Self::new(sym)
        }
    }

    pub fn identity(dim: usize) -> Self {
        MahalanobisMatrix {
            m: DMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn quadratic_form(&self, diff: &DVector<f64>) -> f64 {
        (diff.transpose() * &self.m * diff)[(0, 0)]
    }
}

/// Factor `L` with `M = L^T L`.
///
/// Uses the Cholesky factorization when `M` is positive definite and falls
/// back to an eigendecomposition square root (`L = diag(sqrt(lambda)) Q^T`)
/// for PSD-but-singular matrices.
pub fn cholesky_factor(m: &MahalanobisMatrix) -> Result<DMatrix<f64>> {
    if let Some(chol) = m.m.clone().cholesky() {
        // nalgebra returns lower-triangular C with M = C C^T; our convention
        // wants M = L^T L, so L = C^T.
        return Ok(chol.l().transpose());
    }
    let eig = m.m.clone().symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig < -PSD_RTOL * max_eig.max(1e-300) {
        return Err(Error::NotPositiveSemiDefinite {
            min_eigenvalue: min_eig,
            tolerance: PSD_RTOL * max_eig,
        });
    }
    let sqrt_vals = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()),
    );
    Ok(DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose())
}

/// A distance artifact: the tagged union persisted to JSON.
#[derive(Debug, Clone)]
pub enum LearnedDistance {
    Euclidean,
    Mahalanobis(MahalanobisMatrix),
    Embedding(NetworkWeights),
    SummaryStats(NetworkWeights),
}

impl LearnedDistance {
    pub fn variant_name(&self) -> &'static str {
        match self {
            LearnedDistance::Euclidean => "euclidean",
            LearnedDistance::Mahalanobis(_) => "mahalanobis",
            LearnedDistance::Embedding(_) => "embedding",
            LearnedDistance::SummaryStats(_) => "summary_stats",
        }
    }

    /// Dataset length this artifact expects; `None` for Euclidean, which
    /// works at any length.
    pub fn expected_len(&self) -> Option<usize> {
        match self {
            LearnedDistance::Euclidean => None,
            LearnedDistance::Mahalanobis(m) => Some(m.dim()),
            LearnedDistance::Embedding(w) | LearnedDistance::SummaryStats(w) => {
                Some(w.input_dim())
            }
        }
    }

    /// Distance between two datasets given as raw load vectors.
    pub fn distance(&self, x1: &DVector<f64>, x2: &DVector<f64>) -> Result<f64> {
        if x1.len() != x2.len() {
            return Err(Error::DimensionMismatch {
                context: "distance operands",
                expected: x1.len(),
                got: x2.len(),
            });
        }
        if let Some(expected) = self.expected_len() {
            if x1.len() != expected {
                return Err(Error::DimensionMismatch {
                    context: "distance operand vs artifact",
                    expected,
                    got: x1.len(),
                });
            }
        }
        match self {
            LearnedDistance::Euclidean => Ok((x1 - x2).norm()),
            LearnedDistance::Mahalanobis(m) => {
                let diff = x1 - x2;
                // Tiny negative values can appear through rounding on a
                // singular M; clamp at zero.
                Ok(m.quadratic_form(&diff).max(0.0).sqrt())
            }
            LearnedDistance::Embedding(w) | LearnedDistance::SummaryStats(w) => {
                let e1 = w.forward(x1)?;
                let e2 = w.forward(x2)?;
                Ok((e1 - e2).norm())
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let artifact = match self {
            LearnedDistance::Euclidean => ArtifactFile {
                variant: self.variant_name().into(),
                matrix: None,
                layers: None,
            },
            LearnedDistance::Mahalanobis(m) => ArtifactFile {
                variant: self.variant_name().into(),
                matrix: Some(matrix_rows(m.matrix())),
                layers: None,
            },
            LearnedDistance::Embedding(w) | LearnedDistance::SummaryStats(w) => ArtifactFile {
                variant: self.variant_name().into(),
                matrix: None,
                layers: Some(w.to_specs()),
            },
        };
        Ok(serde_json::to_string_pretty(&artifact)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let artifact: ArtifactFile = serde_json::from_str(json)?;
        match artifact.variant.as_str() {
            "euclidean" => Ok(LearnedDistance::Euclidean),
            "mahalanobis" => {
                let rows = artifact
                    .matrix
                    .ok_or_else(|| Error::InvalidConfig("mahalanobis artifact missing matrix".into()))?;
                let m = rows_to_matrix(&rows)?;
                Ok(LearnedDistance::Mahalanobis(MahalanobisMatrix::new_clipped(m)?))
            }
            "embedding" | "summary_stats" => {
                let specs = artifact
                    .layers
                    .ok_or_else(|| Error::InvalidConfig("network artifact missing layers".into()))?;
                let w = NetworkWeights::from_specs(&specs)?;
                if artifact.variant == "embedding" {
                    Ok(LearnedDistance::Embedding(w))
                } else {
                    Ok(LearnedDistance::SummaryStats(w))
                }
            }
            other => Err(Error::InvalidConfig(format!("unknown distance variant '{other}'"))),
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct ArtifactFile {
    variant: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    matrix: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    layers: Option<Vec<LayerSpec>>,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| m.row(r).iter().cloned().collect())
        .collect()
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidConfig("matrix rows must be square".into()));
    }
    Ok(DMatrix::from_fn(n, n, |r, c| rows[r][c]))
}
