//! Minibatch training loop shared by all generators.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Adam, AdamConfig, Grads, ParamStore};
use crate::preprocess::derive_seed;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub coord: f64,
    pub topo: f64,
    pub local: f64,
    pub mask: f64,
    pub sem: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            coord: 1.0,
            topo: 1.0,
            local: 1.0,
            mask: 1.0,
            sem: 1.0,
        }
    }
}

impl LossWeights {
    pub fn check(&self) -> Result<()> {
        let all = [self.coord, self.topo, self.local, self.mask, self.sem];
        if all.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0, got {all:?}")));
        }
        Ok(())
    }
}

/// Running sum and count of one loss term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub sum: f64,
    pub count: f64,
}

impl Term {
    pub fn add(&mut self, sum: f64, count: f64) {
        self.sum += sum;
        self.count += count;
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0.0).then(|| self.sum / self.count)
    }

    pub fn merge(&mut self, o: &Term) {
        self.add(o.sum, o.count);
    }
}

/// Loss components accumulated over a set of examples. For the graph models `coord` is
/// the NLL per generated node, `topo` the Bernoulli-mixture NLL per candidate edge,
/// `local` the squared error per valid local point, `mask` the BCE per local slot and
/// `sem` the BCE per edge. For the sequence model `coord` is the offset NLL per step and
/// `topo` the pen-state cross-entropy per step. `total` is the weighted objective per
/// example.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub coord: Term,
    pub topo: Term,
    pub local: Term,
    pub mask: Term,
    pub sem: Term,
    pub total: Term,
}

impl LossParts {
    pub fn merge(&mut self, o: &LossParts) {
        self.coord.merge(&o.coord);
        self.topo.merge(&o.topo);
        self.local.merge(&o.local);
        self.mask.merge(&o.mask);
        self.sem.merge(&o.sem);
        self.total.merge(&o.total);
    }

    pub fn report(&self) -> LossReport {
        LossReport {
            coord_nll: self.coord.mean(),
            topo_bce: self.topo.mean(),
            local_mse: self.local.mean(),
            mask_bce: self.mask.mean(),
            sem_bce: self.sem.mean(),
            total: self.total.mean().unwrap_or(0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub coord_nll: Option<f64>,
    pub topo_bce: Option<f64>,
    pub local_mse: Option<f64>,
    pub mask_bce: Option<f64>,
    pub sem_bce: Option<f64>,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub train: LossReport,
    pub val: Option<LossReport>,
}

/// A model whose teacher-forced loss over a batch of examples can be evaluated.
pub trait Objective {
    type Item;

    /// Mean weighted loss over `batch`, its components, and (when `grad`) the gradient.
    /// With `subsample` set, a model may score a seeded subset of each example's steps.
    fn batch_loss(
        &self,
        store: &ParamStore,
        batch: &[&Self::Item],
        grad: bool,
        subsample: Option<u64>,
    ) -> Result<(LossParts, Option<Grads>)>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Stop once the epoch loss has fallen by this fraction of the training loss at the
    /// starting parameters.
    pub stop_at_reduction: Option<f64>,
}

impl FitConfig {
    pub fn check(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config("lr must be > 0".into()));
        }
        Ok(())
    }
}

/// Relative drop of `last` below `first`, measured against `|first|`.
pub fn reduction(first: f64, last: f64) -> f64 {
    (first - last) / first.abs().max(1e-12)
}

/// Loss components over `items`, in batches, without gradients.
pub fn evaluate<O: Objective>(obj: &O, store: &ParamStore, items: &[&O::Item], batch_size: usize) -> Result<LossParts> {
    let mut parts = LossParts::default();
    for chunk in items.chunks(batch_size.max(1)) {
        let (p, _) = obj.batch_loss(store, chunk, false, None)?;
        parts.merge(&p);
    }
    Ok(parts)
}

/// Adam over shuffled minibatches. `on_epoch` sees every report as it is produced.
pub fn fit<O: Objective>(
    obj: &O,
    store: &mut ParamStore,
    adam: &mut Adam,
    train: &[&O::Item],
    val: &[&O::Item],
    cfg: &FitConfig,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<Vec<EpochReport>> {
    cfg.check()?;
    if train.is_empty() {
        return Err(Error::Dataset("empty training set".into()));
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut reports = Vec::new();
    let first = match cfg.stop_at_reduction {
        Some(_) => Some(evaluate(obj, store, train, cfg.batch_size)?.report().total),
        None => None,
    };
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch as u64));
        order.shuffle(&mut rng);
        let mut parts = LossParts::default();
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&O::Item> = chunk.iter().map(|&i| train[i]).collect();
            let step_seed = derive_seed(cfg.seed ^ 0x5ab5, (epoch * 1_000_003 + b) as u64);
            let (p, g) = obj.batch_loss(store, &batch, true, Some(step_seed))?;
            parts.merge(&p);
            adam.step(store, &g.expect("gradient requested"))?;
        }
        let val_report = if val.is_empty() {
            None
        } else {
            Some(evaluate(obj, store, val, cfg.batch_size)?.report())
        };
        let report = EpochReport {
            epoch: epoch + 1,
            train: parts.report(),
            val: val_report,
        };
        if !report.train.total.is_finite() {
            return Err(Error::NonFinite(format!("training loss at epoch {}", epoch + 1)));
        }
        on_epoch(&report);
        let total = report.train.total;
        reports.push(report);
        if let (Some(r), Some(first)) = (cfg.stop_at_reduction, first) {
            if reduction(first, total) >= r {
                break;
            }
        }
    }
    Ok(reports)
}
