use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{forward, loss_terms, Architecture, GcrnParams, ModelConfig, ParamVars};
use crate::autodiff::{sigmoid, Adam, Tape, Tensor};
use crate::data::TemporalGraph;
use crate::error::{Error, Result};

/// Losses and accuracies after one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the mini-batch losses seen during the epoch.
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the selected epoch.
    pub params: GcrnParams,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

impl TrainOutcome {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.history.iter().find(|r| r.epoch == self.best_epoch)
    }
}

/// Probability of class 1.
pub fn predict(params: &GcrnParams, tg: &TemporalGraph) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = ParamVars::bind(&mut tape, params, false);
    let fwd = forward(&mut tape, &vars, tg)?;
    Ok(sigmoid(tape.value(fwd.logit).item()))
}

/// Fraction of graphs whose thresholded prediction matches the label.
pub fn accuracy(params: &GcrnParams, graphs: &[&TemporalGraph]) -> Result<f64> {
    if graphs.is_empty() {
        return Err(Error::Undefined("accuracy of an empty set".into()));
    }
    let mut hits = 0usize;
    for tg in graphs {
        let p = predict(params, tg)?;
        hits += usize::from(u8::from(p > 0.5) == tg.label);
    }
    Ok(hits as f64 / graphs.len() as f64)
}

/// Loss and gradients of one graph, in checkpoint order.
fn loss_and_grad(params: &GcrnParams, tg: &TemporalGraph, cfg: &ModelConfig) -> Result<(f64, bool, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let vars = ParamVars::bind(&mut tape, params, true);
    let fwd = forward(&mut tape, &vars, tg)?;
    let terms = loss_terms(&mut tape, &vars, &fwd, tg.label, cfg)?;
    let loss = tape.value(terms.total).item();
    let correct = u8::from(tape.value(fwd.logit).item() > 0.0) == tg.label;
    let grads = tape.backward(terms.total)?;
    Ok((loss, correct, vars.flatten().into_iter().map(|v| grads.get(v)).collect()))
}

fn evaluate(params: &GcrnParams, graphs: &[&TemporalGraph], cfg: &ModelConfig) -> Result<(f64, f64)> {
    if graphs.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let mut loss = 0.0;
    let mut hits = 0usize;
    for tg in graphs {
        let mut tape = Tape::new();
        let vars = ParamVars::bind(&mut tape, params, false);
        let fwd = forward(&mut tape, &vars, tg)?;
        let terms = loss_terms(&mut tape, &vars, &fwd, tg.label, cfg)?;
        loss += tape.value(terms.total).item();
        hits += usize::from(u8::from(tape.value(fwd.logit).item() > 0.0) == tg.label);
    }
    let n = graphs.len() as f64;
    Ok((loss / n, hits as f64 / n))
}

/// Stratified split: within each class, a seeded shuffle sends the first
/// `round(val_fraction * count)` graphs to validation.
pub fn stratified_split(labels: &[u8], val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let n_val = (val_fraction * idx.len() as f64).round() as usize;
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Mini-batch Adam on the mean batch loss. The returned parameters are
/// those of the epoch with the highest validation accuracy, ties going to
/// the lower validation loss; without a validation set the last epoch wins.
pub fn train(graphs: &[TemporalGraph], cfg: &ModelConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    for w in cfg.grid_warnings() {
        log::warn!("{w}");
    }
    if graphs.is_empty() {
        return Err(Error::Contract("no graphs to train on".into()));
    }
    let labels: Vec<u8> = graphs.iter().map(|g| g.label).collect();
    let (train_idx, val_idx) = stratified_split(&labels, cfg.val_fraction, cfg.seed);
    if train_idx.is_empty() {
        return Err(Error::Contract("training split is empty".into()));
    }
    let val_set: Vec<&TemporalGraph> = val_idx.iter().map(|&i| &graphs[i]).collect();

    let arch = Architecture::from_config(cfg);
    let mut params = GcrnParams::init(arch, cfg.seed);
    let mut flat = params.to_tensors();
    let mut adam = Adam::new(cfg.learning_rate, &flat);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0bad_cafe);
    let mut order = train_idx.clone();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, f64, GcrnParams)> = None;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        let mut hits = 0usize;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut acc: Vec<Tensor> = flat.iter().map(|t| Tensor::zeros(t.shape())).collect();
            let mut batch_loss = 0.0;
            for &i in batch {
                let (loss, correct, grads) = loss_and_grad(&params, &graphs[i], cfg)?;
                batch_loss += loss;
                hits += usize::from(correct);
                for (a, g) in acc.iter_mut().zip(&grads) {
                    for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                        *x += y;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            batch_loss *= scale;
            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    loss: batch_loss,
                });
            }
            for a in &mut acc {
                for x in a.data_mut() {
                    *x *= scale;
                }
            }
            adam.step(&mut flat, &acc)?;
            params = GcrnParams::from_tensors(arch, flat.clone())?;
            epoch_loss += batch_loss;
            batches += 1;
        }
        let (val_loss, val_accuracy) = evaluate(&params, &val_set, cfg)?;
        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss / batches as f64,
            train_accuracy: hits as f64 / order.len() as f64,
            val_loss,
            val_accuracy,
        };
        log::info!(
            "epoch {epoch}: train loss {:.4} acc {:.3}, val loss {:.4} acc {:.3}",
            record.train_loss,
            record.train_accuracy,
            record.val_loss,
            record.val_accuracy
        );
        let better = match &best {
            None => true,
            Some(_) if val_set.is_empty() => true,
            Some((_, acc, loss, _)) => {
                val_accuracy > *acc || (val_accuracy == *acc && val_loss < *loss)
            }
        };
        if better {
            best = Some((epoch, val_accuracy, val_loss, params.clone()));
        }
        history.push(record);
    }

    let (best_epoch, params) = match best {
        Some((e, _, _, p)) => (e, p),
        None => (0, params),
    };
    Ok(TrainOutcome {
        params,
        best_epoch,
        history,
        train_indices: train_idx,
        val_indices: val_idx,
    })
}
