//! Similarity labelling and the four distance trainers.
//!
//! Pairs of simulations are labelled similar when their generating
//! parameters are closer than a threshold `epsilon`, taken as a quantile of
//! all pairwise parameter distances. The trainers turn the labelled set into
//! a distance artifact: a Mahalanobis matrix (sparse log-det objective), a
//! contrastive or triplet embedding network, or a parameter-regression
//! network whose outputs serve as summary statistics.

mod deep;
pub mod losses;
mod sdml;
mod summary;

pub use deep::{train_contrastive, train_triplet, DeepMetricConfig, TrainOutcome};
pub use sdml::{train_sdml, train_sdml_traced, SdmlConfig, SdmlOutcome};
pub use summary::{train_summary_stats, SummaryConfig};

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParameterVector;
use crate::stats::quantile_sorted;

/// Parameter/simulation pairs with a train/test split.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    thetas: Vec<ParameterVector>,
    datasets: Vec<DVector<f64>>,
    train: Vec<usize>,
    test: Vec<usize>,
}

impl TrainingSet {
    pub fn new(
        thetas: Vec<ParameterVector>,
        datasets: Vec<DVector<f64>>,
        train: Vec<usize>,
        test: Vec<usize>,
    ) -> Result<Self> {
        let n = thetas.len();
        if n == 0 || datasets.len() != n {
            return Err(Error::InvalidConfig(format!(
                "{} thetas vs {} datasets",
                n,
                datasets.len()
            )));
        }
        let data_dim = datasets[0].len();
        if datasets.iter().any(|d| d.len() != data_dim) {
            return Err(Error::InvalidConfig("datasets have mixed lengths".into()));
        }
        let mut seen = vec![false; n];
        for &i in train.iter().chain(&test) {
            if i >= n {
                return Err(Error::InvalidConfig(format!("split index {i} out of range")));
            }
            if seen[i] {
                return Err(Error::InvalidConfig(format!("split index {i} appears twice")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidConfig(
                "train/test split must cover every sample".into(),
            ));
        }
        Ok(TrainingSet {
            thetas,
            datasets,
            train,
            test,
        })
    }

    /// Deterministic split by index order: the first `ceil(n * train_fraction)`
    /// samples train, the rest test.
    pub fn with_leading_split(
        thetas: Vec<ParameterVector>,
        datasets: Vec<DVector<f64>>,
        train_fraction: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&train_fraction) {
            return Err(Error::InvalidConfig(format!(
                "train fraction must lie in [0, 1], got {train_fraction}"
            )));
        }
        let n = thetas.len();
        let n_train = ((n as f64) * train_fraction).round() as usize;
        let train = (0..n_train).collect();
        let test = (n_train..n).collect();
        Self::new(thetas, datasets, train, test)
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn data_dim(&self) -> usize {
        self.datasets[0].len()
    }

    pub fn theta_dim(&self) -> usize {
        self.thetas[0].dim()
    }

    pub fn theta(&self, i: usize) -> &ParameterVector {
        &self.thetas[i]
    }

    pub fn thetas(&self) -> &[ParameterVector] {
        &self.thetas
    }

    pub fn dataset(&self, i: usize) -> &DVector<f64> {
        &self.datasets[i]
    }

    pub fn train_indices(&self) -> &[usize] {
        &self.train
    }

    pub fn test_indices(&self) -> &[usize] {
        &self.test
    }

    /// Writes one `{"theta": [...], "x": [...]}` record per line.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (theta, x) in self.thetas.iter().zip(&self.datasets) {
            let record = SampleRecord {
                theta: theta.as_slice().to_vec(),
                x: x.iter().cloned().collect(),
            };
            serde_json::to_writer(&mut file, &record)?;
            file.write_all(b"\n")?;
        }
        file.flush()?;
        Ok(())
    }

    pub fn write_split(&self, path: &Path) -> Result<()> {
        let split = SplitFile {
            train: self.train.clone(),
            test: self.test.clone(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&split)?)?;
        Ok(())
    }

    pub fn load(data_path: &Path, split_path: &Path) -> Result<Self> {
        let reader = BufReader::new(std::fs::File::open(data_path)?);
        let mut thetas = Vec::new();
        let mut datasets = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: SampleRecord = serde_json::from_str(&line)?;
            thetas.push(ParameterVector::new(record.theta));
            datasets.push(DVector::from_vec(record.x));
        }
        let split: SplitFile = serde_json::from_str(&std::fs::read_to_string(split_path)?)?;
        Self::new(thetas, datasets, split.train, split.test)
    }
}

#[derive(Serialize, Deserialize)]
struct SampleRecord {
    theta: Vec<f64>,
    x: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SplitFile {
    train: Vec<usize>,
    test: Vec<usize>,
}

/// Pairwise similar/dissimilar labels over a sample set.
///
/// Pair `(i, j)` is similar iff the Euclidean parameter distance is strictly
/// below `epsilon`. Labels are symmetric and there are no self-pairs.
#[derive(Debug, Clone)]
pub struct SimilarityLabels {
    epsilon: f64,
    quantile: f64,
    n: usize,
    similar: Vec<bool>,
}

impl SimilarityLabels {
    fn pair_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i != j && i < self.n && j < self.n);
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        a * self.n - a * (a + 1) / 2 + (b - a - 1)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn quantile(&self) -> f64 {
        self.quantile
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn is_similar(&self, i: usize, j: usize) -> bool {
        self.similar[self.pair_index(i, j)]
    }

    /// Indices (restricted to `pool`) similar / dissimilar to `i`.
    pub fn partners_in<'a>(&self, i: usize, pool: &'a [usize]) -> (Vec<usize>, Vec<usize>) {
        let mut sim = Vec::new();
        let mut dis = Vec::new();
        for &j in pool {
            if j == i {
                continue;
            }
            if self.is_similar(i, j) {
                sim.push(j);
            } else {
                dis.push(j);
            }
        }
        (sim, dis)
    }

    /// Samples labelled similar to every other sample; non-empty lists mean
    /// the deep trainers cannot draw a dissimilar partner for them.
    pub fn similar_to_all(&self) -> Vec<usize> {
        (0..self.n)
            .filter(|&i| (0..self.n).all(|j| j == i || self.is_similar(i, j)))
            .collect()
    }
}

/// Threshold the pairwise parameter distances at their `q`-quantile
/// (linear interpolation) and label each unordered pair.
pub fn build_similarity(thetas: &[ParameterVector], q: f64) -> Result<SimilarityLabels> {
    let n = thetas.len();
    if n < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least two samples to build similarity labels, got {n}"
        )));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "similarity quantile must lie in (0, 1), got {q}"
        )));
    }
    let mut distances = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            distances.push(thetas[i].euclidean_distance(&thetas[j]));
        }
    }
    let mut sorted = distances.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let epsilon = quantile_sorted(&sorted, q);
    let similar = distances.iter().map(|d| *d < epsilon).collect();
    let labels = SimilarityLabels {
        epsilon,
        quantile: q,
        n,
        similar,
    };
    let saturated = labels.similar_to_all();
    if !saturated.is_empty() {
        log::warn!(
            "{} sample(s) are similar to all others at q = {q} (first: {}); deep trainers will reject this labelling",
            saturated.len(),
            saturated[0]
        );
    }
    Ok(labels)
}
