//! Contrastive and triplet embedding trainers.
//!
//! Per epoch the trainer walks every training sample once. For the
//! contrastive loss it draws a partner, similar with probability
//! `p_similar`; for the triplet loss it draws one random positive and one
//! random negative per anchor. Draws come from a stream keyed by
//! `(seed, epoch, sample position)`, so training can be reproduced from any
//! epoch boundary.

use rand::seq::IndexedRandom;
use rand::Rng;

use super::losses;
use super::{SimilarityLabels, TrainingSet};
use crate::error::{Error, Result};
use crate::nn::{self, Gradients, Layer, NetworkWeights, SgdConfig, SgdOptimizer};
use crate::rng::{derive_seed, derive_stream, rng_from};

/// Architecture and optimization settings for the embedding trainers.
#[derive(Debug, Clone)]
pub struct DeepMetricConfig {
    /// Hidden layer widths between input and embedding.
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub margin: f64,
    /// Probability of drawing a similar partner (contrastive only).
    pub p_similar: f64,
    pub sgd: SgdConfig,
}

impl DeepMetricConfig {
    /// Contrastive defaults: 400 epochs, batches of 32 pairs, margin 1,
    /// similar-partner probability 0.4.
    pub fn contrastive_default(seed: u64) -> Self {
        DeepMetricConfig {
            hidden: vec![100, 80, 40],
            embedding_dim: 15,
            margin: 1.0,
            p_similar: 0.4,
            sgd: SgdConfig {
                epochs: 400,
                batch_size: 32,
                seed,
                ..SgdConfig::default()
            },
        }
    }

    /// Triplet defaults: 800 epochs, batches of 16 triplets, margin 1.
    pub fn triplet_default(seed: u64) -> Self {
        DeepMetricConfig {
            hidden: vec![100, 80, 40],
            embedding_dim: 15,
            margin: 1.0,
            p_similar: 0.4,
            sgd: SgdConfig {
                epochs: 800,
                batch_size: 16,
                seed,
                ..SgdConfig::default()
            },
        }
    }

    fn validate(&self, ts: &TrainingSet) -> Result<()> {
        self.sgd.validate()?;
        if self.embedding_dim == 0 || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidConfig("zero-width layer".into()));
        }
        if !(self.margin > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "margin must be positive, got {}",
                self.margin
            )));
        }
        if !(0.0..=1.0).contains(&self.p_similar) {
            return Err(Error::InvalidConfig(format!(
                "p_similar must lie in [0, 1], got {}",
                self.p_similar
            )));
        }
        if ts.train_indices().is_empty() {
            return Err(Error::InvalidConfig("empty training split".into()));
        }
        Ok(())
    }

    fn dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(self.embedding_dim);
        dims
    }
}

/// Trained weights plus the per-epoch loss trace.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: NetworkWeights,
    pub loss_trace: Vec<f64>,
}

/// Fixed input-scaling layer: `x / s` with `s` the largest absolute load in
/// the training split. Loads are non-negative, so the hidden ReLU behind it
/// is the identity and the layer acts as pure scaling.
pub(super) fn scaling_layer(ts: &TrainingSet) -> Layer {
    let mut max_abs = 0.0_f64;
    for &i in ts.train_indices() {
        for v in ts.dataset(i).iter() {
            max_abs = max_abs.max(v.abs());
        }
    }
    let scale = if max_abs > 0.0 { 1.0 / max_abs } else { 1.0 };
    let dim = ts.data_dim();
    let mut layer = Layer::zeros(dim, dim);
    for i in 0..dim {
        layer.weights[(i, i)] = scale;
    }
    layer
}

fn init_network(ts: &TrainingSet, cfg: &DeepMetricConfig) -> Result<NetworkWeights> {
    let mut w = NetworkWeights::glorot(&cfg.dims(ts.data_dim()), derive_seed(cfg.sgd.seed, "init"))?;
    w.prepend_layer(scaling_layer(ts))?;
    Ok(w)
}

/// Partner pools per training sample, restricted to the training split.
/// Errors if any sample lacks a similar or dissimilar partner, which is the
/// regime that saturated labellings (every partner similar) produce.
fn partner_pools(
    ts: &TrainingSet,
    labels: &SimilarityLabels,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if labels.len() != ts.len() {
        return Err(Error::DimensionMismatch {
            context: "similarity labels vs training set",
            expected: ts.len(),
            got: labels.len(),
        });
    }
    let train = ts.train_indices();
    let mut pools = Vec::with_capacity(train.len());
    for &i in train {
        let (sim, dis) = labels.partners_in(i, train);
        if sim.is_empty() {
            return Err(Error::DegenerateSimilarity {
                sample: i,
                missing: "similar",
            });
        }
        if dis.is_empty() {
            return Err(Error::DegenerateSimilarity {
                sample: i,
                missing: "dissimilar",
            });
        }
        pools.push((sim, dis));
    }
    Ok(pools)
}

/// The step applied after every batch; the first (scaling) layer is frozen
/// by zeroing its gradient.
fn apply_step(
    opt: &mut SgdOptimizer,
    w: &mut NetworkWeights,
    mut grads: Gradients,
) -> Result<()> {
    grads.layers[0].weights.fill(0.0);
    grads.layers[0].bias.fill(0.0);
    opt.step(w, &grads)
}

pub fn train_contrastive(
    ts: &TrainingSet,
    labels: &SimilarityLabels,
    cfg: &DeepMetricConfig,
) -> Result<TrainOutcome> {
    cfg.validate(ts)?;
    let pools = partner_pools(ts, labels)?;
    let train = ts.train_indices();
    let mut w = init_network(ts, cfg)?;
    let mut opt = SgdOptimizer::new(&cfg.sgd, &w)?;
    let draw_seed = derive_seed(cfg.sgd.seed, "draws");

    let mut trace = Vec::with_capacity(cfg.sgd.epochs);
    for epoch in 0..cfg.sgd.epochs {
        let epoch_seed = derive_stream(draw_seed, epoch as u64);
        let mut pairs = Vec::with_capacity(train.len());
        for (pos, &i) in train.iter().enumerate() {
            let mut rng = rng_from(derive_stream(epoch_seed, pos as u64));
            let (sim, dis) = &pools[pos];
            let similar = rng.random::<f64>() < cfg.p_similar;
            let pool = if similar { sim } else { dis };
            let j = *pool.choose(&mut rng).expect("pools validated non-empty");
            pairs.push((i, j, similar));
        }

        let mut epoch_loss = 0.0;
        for batch in pairs.chunks(cfg.sgd.batch_size) {
            let mut inputs = Vec::with_capacity(2 * batch.len());
            let mut similar_flags = Vec::with_capacity(batch.len());
            for &(i, j, similar) in batch {
                inputs.push(ts.dataset(i).clone());
                inputs.push(ts.dataset(j).clone());
                similar_flags.push(similar);
            }
            let (loss, grads) = nn::gradient(&w, &inputs, |outs| {
                losses::contrastive(outs, &similar_flags, cfg.margin)
            })?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            epoch_loss += loss * batch.len() as f64;
            apply_step(&mut opt, &mut w, grads)?;
        }
        trace.push(epoch_loss / train.len() as f64);
    }
    Ok(TrainOutcome {
        weights: w,
        loss_trace: trace,
    })
}

pub fn train_triplet(
    ts: &TrainingSet,
    labels: &SimilarityLabels,
    cfg: &DeepMetricConfig,
) -> Result<TrainOutcome> {
    cfg.validate(ts)?;
    let pools = partner_pools(ts, labels)?;
    let train = ts.train_indices();
    let mut w = init_network(ts, cfg)?;
    let mut opt = SgdOptimizer::new(&cfg.sgd, &w)?;
    let draw_seed = derive_seed(cfg.sgd.seed, "draws");

    let mut trace = Vec::with_capacity(cfg.sgd.epochs);
    for epoch in 0..cfg.sgd.epochs {
        let epoch_seed = derive_stream(draw_seed, epoch as u64);
        let mut triplets = Vec::with_capacity(train.len());
        for (pos, &anchor) in train.iter().enumerate() {
            let mut rng = rng_from(derive_stream(epoch_seed, pos as u64));
            let (sim, dis) = &pools[pos];
            let positive = *sim.choose(&mut rng).expect("pools validated non-empty");
            let negative = *dis.choose(&mut rng).expect("pools validated non-empty");
            triplets.push((anchor, positive, negative));
        }

        let mut epoch_loss = 0.0;
        for batch in triplets.chunks(cfg.sgd.batch_size) {
            let mut inputs = Vec::with_capacity(3 * batch.len());
            for &(a, p, n) in batch {
                inputs.push(ts.dataset(a).clone());
                inputs.push(ts.dataset(p).clone());
                inputs.push(ts.dataset(n).clone());
            }
            let (loss, grads) =
                nn::gradient(&w, &inputs, |outs| losses::triplet(outs, cfg.margin))?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            epoch_loss += loss * batch.len() as f64;
            apply_step(&mut opt, &mut w, grads)?;
        }
        trace.push(epoch_loss / train.len() as f64);
    }
    Ok(TrainOutcome {
        weights: w,
        loss_trace: trace,
    })
}
