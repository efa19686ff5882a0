//! Training loop: Adam with a step learning-rate schedule, seeded shuffling
//! and dropout, gradient clipping, per-epoch validation and best-model
//! selection.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_stream::Segment;
use crate::loss::{classify_rates, spike_rate, spike_rate_loss, LossConfig};
use crate::network::{mix_seed, ForwardOptions, InputGeometry, NetworkModel};
use crate::neuron::SurrogateUnits;
use crate::par::Exec;
use crate::tensor::Matrix;
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr0: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Global L2 norm above which batch gradients are rescaled.
    pub clip_norm: f64,
    /// How the neurons' `tau_grad`/`scale_grad` are read for training.
    pub surrogate_units: SurrogateUnits,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr0: 0.1,
            decay_factor: 0.1,
            decay_every: 4,
            epochs: 30,
            batch_size: 16,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 10.0,
            surrogate_units: SurrogateUnits::LavaDl,
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr0 > 0.0) {
            return bad("lr0 must be positive");
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return bad("decay_factor must be in (0, 1)");
        }
        if self.decay_every == 0 || self.batch_size == 0 {
            return bad("decay_every and batch_size must be positive");
        }
        if !(self.adam_beta1 > 0.0 && self.adam_beta1 < 1.0 && self.adam_beta2 > 0.0 && self.adam_beta2 < 1.0) {
            return bad("Adam betas must be in (0, 1)");
        }
        if !(self.adam_eps > 0.0 && self.clip_norm > 0.0) {
            return bad("adam_eps and clip_norm must be positive");
        }
        Ok(())
    }
}

/// Learning rate for zero-based `epoch`: `lr0 * decay_factor^(epoch / decay_every)`.
pub fn lr_at(epoch: usize, cfg: &OptimConfig) -> f64 {
    cfg.lr0 * cfg.decay_factor.powi((epoch / cfg.decay_every) as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new<F: Real>(weights: &[Matrix<F>]) -> Self {
        Self {
            m: weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            v: weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. Rejects non-finite gradients without
/// touching the weights.
pub fn adam_step<F: Real>(
    weights: &mut [Matrix<F>],
    grads: &[Matrix<F>],
    state: &mut AdamState,
    lr: f64,
    cfg: &OptimConfig,
) -> Result<()> {
    if weights.len() != grads.len()
        || weights.len() != state.m.len()
        || weights.iter().zip(grads).any(|(w, g)| w.len() != g.len())
        || weights.iter().zip(&state.m).any(|(w, m)| w.len() != m.len())
    {
        return Err(Error::Shape("Adam: weights, gradients and state disagree".into()));
    }
    for (l, g) in grads.iter().enumerate() {
        if let Some(i) = g.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of layer {l}, element {i}")));
        }
    }
    state.t += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for ((w, g), (m, v)) in weights
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((wi, gi), mi), vi) in w
            .as_mut_slice()
            .iter_mut()
            .zip(g.as_slice())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            let g = gi.to_f64().unwrap();
            *mi = b1 * *mi + (1.0 - b1) * g;
            *vi = b2 * *vi + (1.0 - b2) * g * g;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            let updated = wi.to_f64().unwrap() - lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
            *wi = F::from_f64(updated).unwrap();
        }
    }
    Ok(())
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<F: Real>(grads: &mut [Matrix<F>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.as_slice())
        .map(|v| {
            let v = v.to_f64().unwrap();
            v * v
        })
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let k = F::from_f64(max_norm / norm).unwrap();
        grads.iter_mut().for_each(|g| g.scale(k));
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// One-based epoch number.
    pub epoch: usize,
    /// Mean training loss over the epoch.
    pub mean_loss: f64,
    /// Validation accuracy after the epoch.
    pub accuracy: f64,
    pub val_loss: f64,
    pub lr: f64,
    /// Omitted (null) in deterministic runs so metric files are reproducible.
    pub wall_time_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub mean_loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    pub rates: Vec<Vec<f64>>,
}

fn check_geometry<F: Real>(model: &NetworkModel<F>, set: &[Segment], what: &str) -> Result<()> {
    let want = model.input_geometry();
    for (i, s) in set.iter().enumerate() {
        let [_, c, h, w] = s.spikes.dims();
        if InputGeometry::new(c, h, w) != want {
            return Err(Error::Config(format!(
                "{what} segment {i} is {c}x{h}x{w}, model expects {}x{}x{}",
                want.channels, want.height, want.width
            )));
        }
    }
    Ok(())
}

/// Dropout off; accuracy is the fraction of segments whose rate argmax equals
/// the label.
pub fn evaluate<F: Real>(
    model: &NetworkModel<F>,
    dataset: &[Segment],
    loss_cfg: &LossConfig,
    exec: Exec,
) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::Usage("cannot evaluate an empty dataset".into()));
    }
    check_geometry(model, dataset, "evaluation")?;
    let per_sample = exec.try_map(dataset.len(), |i| {
        let seg = &dataset[i];
        let out = model.forward(&seg.spikes, &ForwardOptions::eval())?.output;
        let (loss, _) = spike_rate_loss(&out, seg.label, loss_cfg)?;
        let rates = spike_rate(&out)?;
        Ok::<_, Error>((loss, classify_rates(&rates), rates))
    })?;
    let n = dataset.len() as f64;
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let mut predictions = Vec::with_capacity(dataset.len());
    let mut rates = Vec::with_capacity(dataset.len());
    for ((loss, pred, r), seg) in per_sample.into_iter().zip(dataset) {
        loss_sum += loss;
        correct += (pred == seg.label) as usize;
        predictions.push(pred);
        rates.push(r);
    }
    Ok(Evaluation {
        mean_loss: loss_sum / n,
        accuracy: correct as f64 / n,
        predictions,
        rates,
    })
}

/// Loss and weight gradients for one training sample.
pub fn sample_gradients<F: Real>(
    model: &NetworkModel<F>,
    seg: &Segment,
    loss_cfg: &LossConfig,
    units: SurrogateUnits,
    dropout_seed: u64,
) -> Result<(f64, Vec<Matrix<F>>)> {
    let fwd = model.forward(&seg.spikes, &ForwardOptions::train(dropout_seed))?;
    let (loss, rate_grad) = spike_rate_loss(&fwd.output, seg.label, loss_cfg)?;
    let d_out = rate_grad.to_spike_grad(fwd.output.steps());
    let trace = fwd
        .trace
        .as_ref()
        .ok_or_else(|| Error::Usage("training forward pass kept no trace".into()))?;
    Ok((loss, model.backward_in_units(trace, &d_out, units)?.weights))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<F> {
    /// Weights from the epoch with the best validation accuracy (earliest on
    /// ties); the initial model when no epoch ran.
    pub best: NetworkModel<F>,
    pub best_epoch: Option<usize>,
    pub last: NetworkModel<F>,
    pub metrics: Vec<EpochMetrics>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TrainOptions {
    pub exec: Exec,
    /// Leave `wall_time_s` unset in the metrics.
    pub deterministic: bool,
}

pub fn train<F: Real>(
    model: NetworkModel<F>,
    train_set: &[Segment],
    val_set: &[Segment],
    loss_cfg: &LossConfig,
    opt_cfg: &OptimConfig,
    opts: TrainOptions,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome<F>> {
    opt_cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    check_geometry(&model, train_set, "training")?;
    if opt_cfg.epochs > 0 {
        if val_set.is_empty() {
            return Err(Error::Usage("validation set is empty".into()));
        }
        check_geometry(&model, val_set, "validation")?;
    }

    let mut model = model;
    let mut adam = AdamState::new(model.weights());
    let mut best = model.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_epoch = None;
    let mut metrics = Vec::with_capacity(opt_cfg.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..opt_cfg.epochs {
        let started = Instant::now();
        let lr = lr_at(epoch, opt_cfg);
        let epoch_seed = mix_seed(opt_cfg.seed, epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));

        let mut loss_sum = 0.0;
        for batch in order.chunks(opt_cfg.batch_size) {
            let model_ref = &model;
            let results = opts.exec.try_map(batch.len(), |b| {
                let idx = batch[b];
                let seed = mix_seed(epoch_seed, idx as u64);
                sample_gradients(model_ref, &train_set[idx], loss_cfg, opt_cfg.surrogate_units, seed)
            })?;
            let mut sum: Option<Vec<Matrix<F>>> = None;
            for (loss, g) in results {
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!("training loss in epoch {}", epoch + 1)));
                }
                loss_sum += loss;
                match sum.as_mut() {
                    None => sum = Some(g),
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| a.add_assign(b)),
                }
            }
            let mut grads = sum.unwrap();
            let k = F::from_f64(1.0 / batch.len() as f64).unwrap();
            grads.iter_mut().for_each(|g| g.scale(k));
            clip_global_norm(&mut grads, opt_cfg.clip_norm);
            adam_step(model.weights_mut(), &grads, &mut adam, lr, opt_cfg)?;
        }

        let eval = evaluate(&model, val_set, loss_cfg, opts.exec)?;
        let m = EpochMetrics {
            epoch: epoch + 1,
            mean_loss: loss_sum / train_set.len() as f64,
            accuracy: eval.accuracy,
            val_loss: eval.mean_loss,
            lr,
            wall_time_s: (!opts.deterministic).then(|| started.elapsed().as_secs_f64()),
        };
        if !m.mean_loss.is_finite() {
            return Err(Error::NonFinite(format!("mean loss in epoch {}", m.epoch)));
        }
        if eval.accuracy > best_acc {
            best_acc = eval.accuracy;
            best = model.clone();
            best_epoch = Some(m.epoch);
        }
        on_epoch(&m);
        metrics.push(m);
    }

    Ok(TrainOutcome {
        best,
        best_epoch,
        last: model,
        metrics,
    })
}

/// One JSON object per line.
pub fn write_metrics_jsonl(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for m in metrics {
        serde_json::to_writer(&mut w, m)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics_jsonl(path: &Path) -> Result<Vec<EpochMetrics>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<Segment>,
    pub val: Vec<Segment>,
    pub test: Vec<Segment>,
}

/// Assigns whole source streams to train/val/test (70/15/15 of the distinct
/// source ids, after a seeded shuffle), so no stream contributes segments to
/// two splits.
pub fn split_by_source(segments: Vec<Segment>, seed: u64) -> Splits {
    let ids: BTreeSet<&str> = segments.iter().map(|s| s.source_id.as_str()).collect();
    let mut ids: Vec<String> = ids.into_iter().map(str::to_owned).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = ids.len();
    let n_train = (n as f64 * 0.70).round() as usize;
    let n_val = (n as f64 * 0.15).round() as usize;
    let split_of = |id: &str| -> usize {
        let pos = ids.iter().position(|x| x == id).unwrap();
        if pos < n_train {
            0
        } else if pos < n_train + n_val {
            1
        } else {
            2
        }
    };
    let mut out = Splits {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    let index: std::collections::HashMap<String, usize> =
        ids.iter().map(|id| (id.clone(), split_of(id))).collect();
    for s in segments {
        match index[&s.source_id] {
            0 => out.train.push(s),
            1 => out.val.push(s),
            _ => out.test.push(s),
        }
    }
    out
}
