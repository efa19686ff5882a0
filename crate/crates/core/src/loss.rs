//! Spike-rate loss and rate-based classification.
//!
//! The loss is half the squared distance between output spike rates and a
//! class-dependent target rate vector, either over the whole trial or averaged
//! over every sliding window of a fixed length.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuron::SpikeRecord;
use crate::tensor::TimeSeries;
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateTarget {
    r_true: f64,
    r_false: f64,
}

impl RateTarget {
    pub fn new(r_true: f64, r_false: f64) -> Result<Self> {
        if !(r_true > 0.0 && r_true <= 1.0 && r_false >= 0.0 && r_false < r_true) {
            return Err(Error::Config(format!(
                "target rates need 0 <= r_false < r_true <= 1, got ({r_true}, {r_false})"
            )));
        }
        Ok(Self { r_true, r_false })
    }

    pub fn r_true(&self) -> f64 {
        self.r_true
    }

    pub fn r_false(&self) -> f64 {
        self.r_false
    }
}

impl Default for RateTarget {
    fn default() -> Self {
        Self {
            r_true: 0.2,
            r_false: 0.03,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LossMode {
    WholeTrial,
    MovingWindow { window_len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub mode: LossMode,
    pub target: RateTarget,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            mode: LossMode::WholeTrial,
            target: RateTarget::default(),
        }
    }
}

/// `r_true` at `label`, `r_false` elsewhere.
pub fn target_rates(label: usize, n_classes: usize, target: &RateTarget) -> Result<Vec<f64>> {
    if label >= n_classes {
        return Err(Error::Index {
            index: label,
            len: n_classes,
        });
    }
    Ok((0..n_classes)
        .map(|i| if i == label { target.r_true } else { target.r_false })
        .collect())
}

/// Mean spikes per timestep for each neuron.
pub fn spike_rate<F: Real>(record: &SpikeRecord<F>) -> Result<Vec<f64>> {
    if record.steps() == 0 {
        return Err(Error::EmptyRecord);
    }
    let mut sums = vec![0.0; record.neurons()];
    for row in record.spike_rows() {
        for (s, &v) in sums.iter_mut().zip(row) {
            *s += v.to_f64().unwrap();
        }
    }
    let t = record.steps() as f64;
    Ok(sums.into_iter().map(|s| s / t).collect())
}

/// dLoss/dRate, in the shape matching the loss mode.
#[derive(Debug, Clone, PartialEq)]
pub enum RateGrad {
    WholeTrial(Vec<f64>),
    /// One gradient per window; window `k` covers steps `k..k + window_len`.
    MovingWindow {
        window_len: usize,
        per_window: Vec<Vec<f64>>,
    },
}

impl RateGrad {
    /// Converts to dL/ds per timestep and output neuron.
    pub fn to_spike_grad<F: Real>(&self, steps: usize) -> TimeSeries<F> {
        match self {
            RateGrad::WholeTrial(g) => {
                let row: Vec<F> = g
                    .iter()
                    .map(|&v| F::from_f64(v / steps as f64).unwrap())
                    .collect();
                TimeSeries::from_rows(&vec![row; steps]).unwrap()
            }
            RateGrad::MovingWindow {
                window_len,
                per_window,
            } => {
                let n = per_window.first().map_or(0, Vec::len);
                let mut acc = vec![vec![0.0f64; n]; steps];
                for (k, g) in per_window.iter().enumerate() {
                    for row in &mut acc[k..k + window_len] {
                        for (a, &gi) in row.iter_mut().zip(g) {
                            *a += gi / *window_len as f64;
                        }
                    }
                }
                let rows: Vec<Vec<F>> = acc
                    .into_iter()
                    .map(|r| r.into_iter().map(|v| F::from_f64(v).unwrap()).collect())
                    .collect();
                TimeSeries::from_rows(&rows).unwrap()
            }
        }
    }
}

fn half_sq(r: &[f64], target: &[f64]) -> f64 {
    0.5 * r.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
}

/// Loss and gradient from precomputed whole-trial rates.
pub fn rate_loss(rates: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let grad = rates.iter().zip(target).map(|(a, b)| a - b).collect();
    (half_sq(rates, target), grad)
}

pub fn spike_rate_loss<F: Real>(
    record: &SpikeRecord<F>,
    label: usize,
    cfg: &LossConfig,
) -> Result<(f64, RateGrad)> {
    if record.steps() == 0 {
        return Err(Error::EmptyRecord);
    }
    let target = target_rates(label, record.neurons(), &cfg.target)?;
    match cfg.mode {
        LossMode::WholeTrial => {
            let (loss, grad) = rate_loss(&spike_rate(record)?, &target);
            Ok((loss, RateGrad::WholeTrial(grad)))
        }
        LossMode::MovingWindow { window_len } => {
            let steps = record.steps();
            if window_len == 0 || window_len > steps {
                return Err(Error::Config(format!(
                    "window length {window_len} must be in 1..={steps}"
                )));
            }
            let n = record.neurons();
            let n_windows = steps - window_len + 1;
            // prefix sums of spikes per neuron
            let mut prefix = vec![vec![0.0f64; n]; steps + 1];
            for t in 0..steps {
                let row = record.spikes_at(t);
                for i in 0..n {
                    prefix[t + 1][i] = prefix[t][i] + row[i].to_f64().unwrap();
                }
            }
            let mut loss = 0.0;
            let mut per_window = Vec::with_capacity(n_windows);
            for k in 0..n_windows {
                let r: Vec<f64> = (0..n)
                    .map(|i| (prefix[k + window_len][i] - prefix[k][i]) / window_len as f64)
                    .collect();
                let (l, g) = rate_loss(&r, &target);
                loss += l;
                per_window.push(g.into_iter().map(|v| v / n_windows as f64).collect());
            }
            Ok((
                loss / n_windows as f64,
                RateGrad::MovingWindow {
                    window_len,
                    per_window,
                },
            ))
        }
    }
}

/// Index of the largest rate; ties go to the lower index.
pub fn classify_rates(rates: &[f64]) -> usize {
    let mut best = 0;
    for (i, &r) in rates.iter().enumerate().skip(1) {
        if r > rates[best] {
            best = i;
        }
    }
    best
}

pub fn classify<F: Real>(record: &SpikeRecord<F>) -> Result<usize> {
    Ok(classify_rates(&spike_rate(record)?))
}
