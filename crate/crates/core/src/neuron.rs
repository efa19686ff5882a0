//! Leaky integrate-and-fire dynamics.
//!
//! Per timestep, with input `x`:
//!
//! ```text
//! single:  v' = (1 - a_v) v + x
//! cuba:    u' = (1 - a_u) u + x;   v' = (1 - a_v) v + u'
//! spike:   s  = v' >= threshold
//! reset:   v'' = v' (1 - s)        (u is never reset)
//! ```
//!
//! Training replaces ds/dv with a triangular surrogate of half-width
//! `tau_grad` and peak `scale_grad` centred on the threshold. The trainer
//! may read those two numbers in other units, see [`SurrogateUnits`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeuronMode {
    /// One state variable (membrane potential).
    Single,
    /// Current-based: synaptic current feeding the membrane potential.
    Cuba,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifParams {
    pub threshold: f64,
    pub voltage_decay: f64,
    pub current_decay: f64,
    pub tau_grad: f64,
    pub scale_grad: f64,
    pub mode: NeuronMode,
}

impl Default for LifParams {
    fn default() -> Self {
        Self {
            threshold: 1.25,
            voltage_decay: 0.03,
            current_decay: 0.25,
            tau_grad: 0.03,
            scale_grad: 3.0,
            mode: NeuronMode::Cuba,
        }
    }
}

impl LifParams {
    pub fn single(threshold: f64, voltage_decay: f64) -> Self {
        Self {
            threshold,
            voltage_decay,
            mode: NeuronMode::Single,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.threshold > 0.0
            && (0.0..=1.0).contains(&self.voltage_decay)
            && (0.0..=1.0).contains(&self.current_decay)
            && self.tau_grad > 0.0
            && self.scale_grad > 0.0
            && [self.threshold, self.tau_grad, self.scale_grad]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid neuron parameters {self:?}")))
        }
    }

    /// Triangular pseudo-derivative of the spike function at potential `v`.
    pub fn surrogate<F: Real>(&self, v: F) -> F {
        let z = ((v.to_f64().unwrap() - self.threshold) / self.tau_grad).abs();
        F::from_f64(self.scale_grad * (1.0 - z).max(0.0)).unwrap()
    }
}

/// Units for `tau_grad` and `scale_grad` when the surrogate drives training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateUnits {
    /// Half-width `tau_grad`, peak `scale_grad`.
    Literal,
    /// lava-dl convention: half-width `100 * tau_grad` and peak
    /// `0.1 * scale_grad / (2 * half-width)`. With the defaults that is a
    /// half-width of 3 and a peak of 0.05.
    #[default]
    LavaDl,
}

impl LifParams {
    /// Copy whose `tau_grad`/`scale_grad` are the literal values equivalent
    /// to reading this one in `units`.
    pub fn in_units(&self, units: SurrogateUnits) -> LifParams {
        match units {
            SurrogateUnits::Literal => *self,
            SurrogateUnits::LavaDl => {
                let tau = 100.0 * self.tau_grad;
                LifParams {
                    tau_grad: tau,
                    scale_grad: 0.1 * self.scale_grad / (2.0 * tau),
                    ..*self
                }
            }
        }
    }
}

/// How a neuron's output is formed from its pre-reset potential.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpikeFn {
    /// Binary spikes, `v >= threshold`.
    #[default]
    Heaviside,
    /// The antiderivative of the surrogate: a smooth ramp from 0 to
    /// `scale_grad * tau_grad` across the surrogate support. Its exact
    /// derivative is the surrogate, which makes BPTT checkable against finite
    /// differences. The reset still uses the binary spike.
    Relaxed,
}

impl SpikeFn {
    pub fn emit<F: Real>(self, v: F, params: &LifParams) -> F {
        match self {
            SpikeFn::Heaviside => {
                if v >= F::from_f64(params.threshold).unwrap() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            SpikeFn::Relaxed => {
                let tau = params.tau_grad;
                let z = (v.to_f64().unwrap() - params.threshold) / tau;
                let area = params.scale_grad * tau;
                let out = if z <= -1.0 {
                    0.0
                } else if z <= 0.0 {
                    area * 0.5 * (1.0 + z) * (1.0 + z)
                } else if z < 1.0 {
                    area * (1.0 - 0.5 * (1.0 - z) * (1.0 - z))
                } else {
                    area
                };
                F::from_f64(out).unwrap()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LifState<F> {
    pub u: Vec<F>,
    pub v: Vec<F>,
}

impl<F: Real> LifState<F> {
    pub fn zeros(n: usize) -> Self {
        Self {
            u: vec![F::zero(); n],
            v: vec![F::zero(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }
}

/// Per-timestep outputs of a neuron population, stored row-major `[t][i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeRecord<F> {
    steps: usize,
    neurons: usize,
    spikes: Vec<F>,
    v_pre_reset: Vec<F>,
}

impl<F: Real> SpikeRecord<F> {
    pub fn new(neurons: usize) -> Self {
        Self {
            steps: 0,
            neurons,
            spikes: Vec::new(),
            v_pre_reset: Vec::new(),
        }
    }

    /// Builds a record from explicit per-step rows. Rows must share a length.
    pub fn from_rows(spikes: &[Vec<F>], v_pre_reset: &[Vec<F>]) -> Result<Self> {
        let neurons = spikes.first().map_or(0, Vec::len);
        if spikes.len() != v_pre_reset.len()
            || spikes.iter().chain(v_pre_reset).any(|r| r.len() != neurons)
        {
            return Err(Error::Shape("ragged spike record rows".into()));
        }
        Ok(Self {
            steps: spikes.len(),
            neurons,
            spikes: spikes.concat(),
            v_pre_reset: v_pre_reset.concat(),
        })
    }

    pub fn push(&mut self, spikes: &[F], v_pre_reset: &[F]) {
        debug_assert_eq!(spikes.len(), self.neurons);
        debug_assert_eq!(v_pre_reset.len(), self.neurons);
        self.spikes.extend_from_slice(spikes);
        self.v_pre_reset.extend_from_slice(v_pre_reset);
        self.steps += 1;
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    pub fn spikes_at(&self, t: usize) -> &[F] {
        &self.spikes[t * self.neurons..(t + 1) * self.neurons]
    }

    pub fn v_pre_reset_at(&self, t: usize) -> &[F] {
        &self.v_pre_reset[t * self.neurons..(t + 1) * self.neurons]
    }

    pub fn spike_rows(&self) -> impl Iterator<Item = &[F]> {
        (0..self.steps).map(move |t| self.spikes_at(t))
    }
}

/// Advances `state` one step in place, writing outputs into `spikes` and
/// `v_pre_reset`. Dimensions are the caller's responsibility.
pub(crate) fn step_in_place<F: Real>(
    state: &mut LifState<F>,
    x: &[F],
    params: &LifParams,
    spike_fn: SpikeFn,
    spikes: &mut [F],
    v_pre_reset: &mut [F],
) {
    let keep_v = F::from_f64(1.0 - params.voltage_decay).unwrap();
    let keep_u = F::from_f64(1.0 - params.current_decay).unwrap();
    let theta = F::from_f64(params.threshold).unwrap();
    for i in 0..x.len() {
        let drive = match params.mode {
            NeuronMode::Single => x[i],
            NeuronMode::Cuba => {
                state.u[i] = keep_u * state.u[i] + x[i];
                state.u[i]
            }
        };
        let v = keep_v * state.v[i] + drive;
        v_pre_reset[i] = v;
        spikes[i] = spike_fn.emit(v, params);
        state.v[i] = if v >= theta { F::zero() } else { v };
    }
}

fn check_dims<F>(state: &LifState<F>, x: &[F]) -> Result<()> {
    if state.u.len() != state.v.len() || state.v.len() != x.len() {
        return Err(Error::Shape(format!(
            "state (u {}, v {}) vs input {}",
            state.u.len(),
            state.v.len(),
            x.len()
        )));
    }
    Ok(())
}

/// One update; returns the post-reset state, the spikes and the pre-reset
/// potentials.
pub fn lif_step<F: Real>(
    state: &LifState<F>,
    x: &[F],
    params: &LifParams,
) -> Result<(LifState<F>, Vec<F>, Vec<F>)> {
    check_dims(state, x)?;
    let mut next = state.clone();
    let mut s = vec![F::zero(); x.len()];
    let mut v = vec![F::zero(); x.len()];
    step_in_place(&mut next, x, params, SpikeFn::Heaviside, &mut s, &mut v);
    Ok((next, s, v))
}

pub fn lif_run<F: Real>(
    x_seq: &[Vec<F>],
    params: &LifParams,
    initial: &LifState<F>,
) -> Result<SpikeRecord<F>> {
    lif_run_with(x_seq, params, initial, SpikeFn::Heaviside)
}

pub fn lif_run_with<F: Real>(
    x_seq: &[Vec<F>],
    params: &LifParams,
    initial: &LifState<F>,
    spike_fn: SpikeFn,
) -> Result<SpikeRecord<F>> {
    let n = initial.len();
    let mut state = initial.clone();
    let mut record = SpikeRecord::new(n);
    let mut s = vec![F::zero(); n];
    let mut v = vec![F::zero(); n];
    for x in x_seq {
        check_dims(&state, x)?;
        step_in_place(&mut state, x, params, spike_fn, &mut s, &mut v);
        record.push(&s, &v);
    }
    Ok(record)
}

pub fn surrogate_grad<F: Real>(v_pre_reset: &[F], params: &LifParams) -> Vec<F> {
    v_pre_reset.iter().map(|&v| params.surrogate(v)).collect()
}
