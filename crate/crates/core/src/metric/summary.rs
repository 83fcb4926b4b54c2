//! Summary-statistics trainer: regress parameters on simulated datasets.
//!
//! The fitted network plays the role of a summary statistic; the distance
//! between two datasets becomes the Euclidean distance between predicted
//! parameters. Targets are standardized internally for optimization and the
//! de-standardization is folded back into the affine output layer, so the
//! stored artifact predicts parameters in natural units.

use nalgebra::DVector;
use rand::seq::SliceRandom;

use super::deep::TrainOutcome;
use super::losses;
use super::TrainingSet;
use crate::error::{Error, Result};
use crate::nn::{self, NetworkWeights, SgdConfig, SgdOptimizer};
use crate::rng::{derive_seed, derive_stream, rng_from};
use crate::stats;

#[derive(Debug, Clone)]
pub struct SummaryConfig {
    /// Hidden layer widths; the output width is the parameter dimension.
    pub hidden: Vec<usize>,
    pub sgd: SgdConfig,
}

impl SummaryConfig {
    /// Defaults: hidden layers 80/40/15, 400 epochs, batches of 2.
    pub fn new(seed: u64) -> Self {
        SummaryConfig {
            hidden: vec![80, 40, 15],
            sgd: SgdConfig {
                epochs: 400,
                batch_size: 2,
                seed,
                ..SgdConfig::default()
            },
        }
    }
}

pub fn train_summary_stats(ts: &TrainingSet, cfg: &SummaryConfig) -> Result<TrainOutcome> {
    cfg.sgd.validate()?;
    if cfg.hidden.iter().any(|&h| h == 0) {
        return Err(Error::InvalidConfig("zero-width hidden layer".into()));
    }
    let train = ts.train_indices();
    if train.is_empty() {
        return Err(Error::InvalidConfig("empty training split".into()));
    }
    let theta_dim = ts.theta_dim();

    // Per-component target standardization over the training split.
    let mut mean = vec![0.0; theta_dim];
    let mut sd = vec![0.0; theta_dim];
    for k in 0..theta_dim {
        let col: Vec<f64> = train.iter().map(|&i| ts.theta(i).as_slice()[k]).collect();
        mean[k] = stats::mean(&col);
        let s = stats::std_dev(&col);
        sd[k] = if s > 1e-12 { s } else { 1.0 };
    }
    let targets: Vec<DVector<f64>> = train
        .iter()
        .map(|&i| {
            DVector::from_iterator(
                theta_dim,
                ts.theta(i)
                    .as_slice()
                    .iter()
                    .enumerate()
                    .map(|(k, v)| (v - mean[k]) / sd[k]),
            )
        })
        .collect();

    let mut dims = Vec::with_capacity(cfg.hidden.len() + 2);
    dims.push(ts.data_dim());
    dims.extend_from_slice(&cfg.hidden);
    dims.push(theta_dim);
    let mut w = NetworkWeights::glorot(&dims, derive_seed(cfg.sgd.seed, "init"))?;
    w.prepend_layer(super::deep::scaling_layer(ts))?;
    let mut opt = SgdOptimizer::new(&cfg.sgd, &w)?;
    let shuffle_seed = derive_seed(cfg.sgd.seed, "shuffle");

    let mut trace = Vec::with_capacity(cfg.sgd.epochs);
    for epoch in 0..cfg.sgd.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng_from(derive_stream(shuffle_seed, epoch as u64)));

        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.sgd.batch_size) {
            let inputs: Vec<DVector<f64>> =
                batch.iter().map(|&p| ts.dataset(train[p]).clone()).collect();
            let batch_targets: Vec<DVector<f64>> =
                batch.iter().map(|&p| targets[p].clone()).collect();
            let (loss, mut grads) = nn::gradient(&w, &inputs, |outs| {
                losses::squared_error(outs, &batch_targets)
            })?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            epoch_loss += loss * batch.len() as f64;
            grads.layers[0].weights.fill(0.0);
            grads.layers[0].bias.fill(0.0);
            opt.step(&mut w, &grads)?;
        }
        trace.push(epoch_loss / train.len() as f64);
    }

    // Fold the de-standardization theta = sd * theta_std + mean into the
    // affine output layer, which carries no activation.
    {
        let layers = w.layers_mut();
        let last = layers.len() - 1;
        for r in 0..theta_dim {
            for c in 0..layers[last].weights.ncols() {
                layers[last].weights[(r, c)] *= sd[r];
            }
            layers[last].bias[r] = layers[last].bias[r] * sd[r] + mean[r];
        }
    }
    Ok(TrainOutcome {
        weights: w,
        loss_trace: trace,
    })
}
