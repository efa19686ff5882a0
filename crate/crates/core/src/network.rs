//! Layer stack: average pooling, flattening and dense LIF layers, with
//! forward simulation over time and backpropagation through time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_stream::SpikeTensor;
use crate::neuron::{self, LifParams, LifState, NeuronMode, SpikeFn, SpikeRecord, SurrogateUnits};
use crate::tensor::{Matrix, TimeSeries};
use crate::Real;

pub const DEFAULT_POOL_KERNEL: usize = 7;
pub const DEFAULT_HIDDEN: [usize; 2] = [32, 8];
pub const DEFAULT_DROPOUT: f64 = 0.05;
pub const N_CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputGeometry {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn units(&self) -> usize {
        self.channels * self.height * self.width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Pool {
        kernel: usize,
    },
    Flatten,
    Dense {
        in_units: usize,
        out_units: usize,
        neuron: LifParams,
        dropout_p: f64,
    },
}

impl LayerSpec {
    pub fn dense(in_units: usize, out_units: usize, neuron: LifParams, dropout_p: f64) -> Self {
        LayerSpec::Dense {
            in_units,
            out_units,
            neuron,
            dropout_p,
        }
    }
}

/// Output size of a pooling layer: rows are zero-padded up to a multiple of
/// `k`, trailing columns that do not fill a window are dropped.
pub fn pooled_dims(height: usize, width: usize, k: usize) -> Result<(usize, usize)> {
    if k == 0 || (k > height && k > width) {
        return Err(Error::Config(format!(
            "pool kernel {k} does not fit a {height}x{width} input"
        )));
    }
    Ok((height.div_ceil(k), width / k))
}

/// Non-overlapping `k x k` average pooling of every timestep and channel.
/// The result is already flattened, `[t][c*H'*W' + h*W' + w]`.
pub fn pool_forward<F: Real>(spikes: &SpikeTensor, k: usize) -> Result<TimeSeries<F>> {
    let [steps, channels, height, width] = spikes.dims();
    let (ph, pw) = pooled_dims(height, width, k)?;
    let mut out = TimeSeries::zeros(steps, channels * ph * pw);
    let frame = height * width;
    let area = F::from_usize(k * k).unwrap();
    for t in 0..steps {
        let row = out.row_mut(t);
        for &idx in spikes.active_at(t) {
            let idx = idx as usize;
            let (c, rem) = (idx / frame, idx % frame);
            let (h, w) = (rem / width, rem % width);
            let (oh, ow) = (h / k, w / k);
            if ow < pw {
                row[(c * ph + oh) * pw + ow] += F::one();
            }
        }
        // counts are exact; divide once
        for v in row.iter_mut().filter(|v| **v != F::zero()) {
            *v = *v / area;
        }
    }
    Ok(out)
}

/// Adjoint of [`pool_forward`]: spreads each pooled gradient uniformly
/// (`1/k^2`) over its window. Truncated columns receive zero. Output is dense
/// `[t][c][h][w]` over the original geometry.
pub fn pool_backward<F: Real>(
    grad: &TimeSeries<F>,
    geometry: InputGeometry,
    k: usize,
) -> Result<TimeSeries<F>> {
    let InputGeometry {
        channels,
        height,
        width,
    } = geometry;
    let (ph, pw) = pooled_dims(height, width, k)?;
    if grad.units() != channels * ph * pw {
        return Err(Error::Shape(format!(
            "pooled gradient has {} units, expected {}",
            grad.units(),
            channels * ph * pw
        )));
    }
    let cell = F::from_f64(1.0 / (k * k) as f64).unwrap();
    let mut out = TimeSeries::zeros(grad.steps(), geometry.units());
    for t in 0..grad.steps() {
        let g = grad.row(t);
        let row = out.row_mut(t);
        for c in 0..channels {
            for h in 0..height {
                for w in 0..pw * k {
                    row[(c * height + h) * width + w] = g[(c * ph + h / k) * pw + w / k] * cell;
                }
            }
        }
    }
    Ok(out)
}

/// Row-major flattening of a dense `[t][c][h][w]` buffer.
pub fn flatten<F: Real>(data: &[F], steps: usize, geometry: InputGeometry) -> Result<TimeSeries<F>> {
    TimeSeries::from_vec(steps, geometry.units(), data.to_vec())
}

pub fn unflatten<F: Real>(series: &TimeSeries<F>) -> Vec<F> {
    series.as_slice().to_vec()
}

/// One dense LIF layer over a whole sequence. `mask` holds the already scaled
/// dropout multipliers (`0` or `1/(1-p)`) for the layer inputs.
pub fn dense_forward<F: Real>(
    inputs: &TimeSeries<F>,
    weights: &Matrix<F>,
    neuron: &LifParams,
    mask: Option<&[F]>,
) -> Result<SpikeRecord<F>> {
    check_dense_shapes(inputs, weights, mask)?;
    Ok(run_dense(inputs, weights, neuron, mask, SpikeFn::Heaviside).1)
}

fn check_dense_shapes<F: Real>(
    inputs: &TimeSeries<F>,
    weights: &Matrix<F>,
    mask: Option<&[F]>,
) -> Result<()> {
    if inputs.units() != weights.cols() {
        return Err(Error::Shape(format!(
            "{} inputs into a {}x{} weight matrix",
            inputs.units(),
            weights.rows(),
            weights.cols()
        )));
    }
    if let Some(m) = mask {
        if m.len() != inputs.units() {
            return Err(Error::Shape(format!(
                "dropout mask of {} for {} inputs",
                m.len(),
                inputs.units()
            )));
        }
    }
    Ok(())
}

/// Returns the masked inputs actually seen by the synapses, and the record.
fn run_dense<F: Real>(
    inputs: &TimeSeries<F>,
    weights: &Matrix<F>,
    neuron: &LifParams,
    mask: Option<&[F]>,
    spike_fn: SpikeFn,
) -> (TimeSeries<F>, SpikeRecord<F>) {
    let n_out = weights.rows();
    let n_in = weights.cols();
    let mut state = LifState::zeros(n_out);
    let mut record = SpikeRecord::new(n_out);
    let mut seen = inputs.clone();
    let mut drive = vec![F::zero(); n_out];
    let mut s = vec![F::zero(); n_out];
    let mut v = vec![F::zero(); n_out];
    let w = weights.as_slice();
    for t in 0..inputs.steps() {
        let a = seen.row_mut(t);
        if let Some(m) = mask {
            for (ai, &mi) in a.iter_mut().zip(m) {
                *ai = *ai * mi;
            }
        }
        drive.iter_mut().for_each(|d| *d = F::zero());
        for (i, &ai) in a.iter().enumerate() {
            if ai == F::zero() {
                continue;
            }
            for (o, d) in drive.iter_mut().enumerate() {
                *d += w[o * n_in + i] * ai;
            }
        }
        neuron::step_in_place(&mut state, &drive, neuron, spike_fn, &mut s, &mut v);
        record.push(&s, &v);
    }
    (seen, record)
}

/// Gradient of one dense layer by reverse-time accumulation. `d_out[t][j]` is
/// dL/ds for output neuron `j` at step `t`. The reset factor `(1 - s)` is
/// treated as a constant.
fn dense_backward<F: Real>(
    layer: &DenseTrace<F>,
    weights: &Matrix<F>,
    neuron: &LifParams,
    d_out: &TimeSeries<F>,
    want_input_grad: bool,
) -> (Matrix<F>, Option<TimeSeries<F>>) {
    let n_out = weights.rows();
    let n_in = weights.cols();
    let steps = layer.record.steps();
    let keep_v = F::from_f64(1.0 - neuron.voltage_decay).unwrap();
    let keep_u = F::from_f64(1.0 - neuron.current_decay).unwrap();
    let theta = F::from_f64(neuron.threshold).unwrap();
    let cuba = neuron.mode == NeuronMode::Cuba;

    let mut d_w = Matrix::zeros(n_out, n_in);
    let mut d_in = want_input_grad.then(|| TimeSeries::zeros(steps, n_in));
    let mut gv_next = vec![F::zero(); n_out];
    let mut gu_next = vec![F::zero(); n_out];
    let mut gx = vec![F::zero(); n_out];
    let w = weights.as_slice();

    for t in (0..steps).rev() {
        let v_pre = layer.record.v_pre_reset_at(t);
        let g_s = d_out.row(t);
        for j in 0..n_out {
            let not_reset = if v_pre[j] >= theta { F::zero() } else { F::one() };
            let gv = g_s[j] * neuron.surrogate(v_pre[j]) + keep_v * gv_next[j] * not_reset;
            gv_next[j] = gv;
            gx[j] = if cuba {
                let gu = gv + keep_u * gu_next[j];
                gu_next[j] = gu;
                gu
            } else {
                gv
            };
        }
        let a = layer.inputs.row(t);
        let dw = d_w.as_mut_slice();
        for (i, &ai) in a.iter().enumerate() {
            if ai == F::zero() {
                continue;
            }
            for j in 0..n_out {
                dw[j * n_in + i] += gx[j] * ai;
            }
        }
        if let Some(d_in) = d_in.as_mut() {
            let row = d_in.row_mut(t);
            for (i, r) in row.iter_mut().enumerate() {
                let m = layer.mask.as_ref().map_or(F::one(), |m| m[i]);
                if m == F::zero() {
                    continue;
                }
                let mut acc = F::zero();
                for j in 0..n_out {
                    acc += w[j * n_in + i] * gx[j];
                }
                *r = acc * m;
            }
        }
    }
    (d_w, d_in)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOptions {
    /// Enables dropout and trace retention.
    pub training: bool,
    /// Seeds the per-sample dropout masks.
    pub seed: u64,
    pub spike_fn: SpikeFn,
}

impl ForwardOptions {
    pub fn eval() -> Self {
        Self {
            training: false,
            seed: 0,
            spike_fn: SpikeFn::Heaviside,
        }
    }

    pub fn train(seed: u64) -> Self {
        Self {
            training: true,
            seed,
            spike_fn: SpikeFn::Heaviside,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTrace<F> {
    /// Inputs after dropout, as seen by the synapses.
    pub inputs: TimeSeries<F>,
    pub mask: Option<Vec<F>>,
    pub record: SpikeRecord<F>,
}

/// Everything the backward pass needs from a training forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<F> {
    /// Pooled and flattened network input, before dropout.
    pub pooled: TimeSeries<F>,
    pub dense: Vec<DenseTrace<F>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forward<F> {
    pub output: SpikeRecord<F>,
    pub trace: Option<ForwardTrace<F>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    /// One matrix per dense layer, shaped like its weights.
    pub weights: Vec<Matrix<F>>,
    /// dL/d(flattened pooled input), when requested.
    pub input: Option<TimeSeries<F>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel<F> {
    input: InputGeometry,
    layers: Vec<LayerSpec>,
    weights: Vec<Matrix<F>>,
}

#[derive(Debug, Clone, Copy)]
struct DenseView<'a, F> {
    weights: &'a Matrix<F>,
    neuron: &'a LifParams,
    dropout_p: f64,
}

impl<F: Real> NetworkModel<F> {
    /// Validates the layer chain and the weight shapes.
    pub fn new(input: InputGeometry, layers: Vec<LayerSpec>, weights: Vec<Matrix<F>>) -> Result<Self> {
        let dense_shapes = validate_layers(input, &layers)?;
        if dense_shapes.len() != weights.len() {
            return Err(Error::Shape(format!(
                "{} dense layers but {} weight matrices",
                dense_shapes.len(),
                weights.len()
            )));
        }
        for (l, ((i, o), w)) in dense_shapes.iter().zip(&weights).enumerate() {
            if (w.rows(), w.cols()) != (*o, *i) {
                return Err(Error::Shape(format!(
                    "dense layer {l}: weights {}x{}, expected {o}x{i}",
                    w.rows(),
                    w.cols()
                )));
            }
        }
        Ok(Self {
            input,
            layers,
            weights,
        })
    }

    /// Uniform `[-b, b]` initialisation with `b = sqrt(1/in_units)`.
    pub fn init(input: InputGeometry, layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let shapes = validate_layers(input, &layers)?;
        let weights = shapes
            .iter()
            .enumerate()
            .map(|(l, &(n_in, n_out))| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, l as u64));
                let b = (1.0 / n_in as f64).sqrt();
                let data = (0..n_in * n_out)
                    .map(|_| F::from_f64(rng.random_range(-b..=b)).unwrap())
                    .collect();
                Matrix::from_vec(n_out, n_in, data).unwrap()
            })
            .collect();
        Ok(Self {
            input,
            layers,
            weights,
        })
    }

    /// Pool 7, flatten, dense `2*H'*W' -> 32 -> 8 -> 2`, all CUBA neurons
    /// with the default parameters and 5% dropout.
    pub fn spiking_dd(width: usize, height: usize, seed: u64) -> Result<Self> {
        Self::init(
            InputGeometry::new(2, height, width),
            default_layers(width, height, DEFAULT_POOL_KERNEL, LifParams::default(), DEFAULT_DROPOUT)?,
            seed,
        )
    }

    pub fn input_geometry(&self) -> InputGeometry {
        self.input
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn weights(&self) -> &[Matrix<F>] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix<F>] {
        &mut self.weights
    }

    pub fn pool_kernel(&self) -> Option<usize> {
        self.layers.iter().find_map(|l| match l {
            LayerSpec::Pool { kernel } => Some(*kernel),
            _ => None,
        })
    }

    /// Width of the flattened vector fed to the first dense layer.
    pub fn flat_units(&self) -> usize {
        match self.pool_kernel() {
            Some(k) => {
                let (ph, pw) = pooled_dims(self.input.height, self.input.width, k).unwrap();
                self.input.channels * ph * pw
            }
            None => self.input.units(),
        }
    }

    pub fn n_outputs(&self) -> usize {
        self.weights.last().map_or(0, Matrix::rows)
    }

    pub fn count_params(&self) -> usize {
        count_params(&self.layers)
    }

    /// Human-readable chain, e.g. `2x69x91 -> 32 -> 8 -> 2`.
    pub fn chain_summary(&self) -> String {
        let mut dims = vec![match self.pool_kernel() {
            Some(k) => {
                let (ph, pw) = pooled_dims(self.input.height, self.input.width, k).unwrap();
                format!("{}x{}x{}", self.input.channels, ph, pw)
            }
            None => format!("{}", self.input.units()),
        }];
        dims.extend(self.weights.iter().map(|w| w.rows().to_string()));
        dims.join(" -> ")
    }

    pub fn cast<G: Real>(&self) -> NetworkModel<G> {
        NetworkModel {
            input: self.input,
            layers: self.layers.clone(),
            weights: self
                .weights
                .iter()
                .map(|w| w.map(|v| G::from(v).unwrap()))
                .collect(),
        }
    }

    fn dense_layers(&self) -> Vec<DenseView<'_, F>> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Dense {
                    neuron, dropout_p, ..
                } => Some((neuron, *dropout_p)),
                _ => None,
            })
            .zip(&self.weights)
            .map(|((neuron, dropout_p), weights)| DenseView {
                weights,
                neuron,
                dropout_p,
            })
            .collect()
    }

    /// Pools (if the model has a pool layer) and flattens a spike tensor.
    pub fn prepare_input(&self, spikes: &SpikeTensor) -> Result<TimeSeries<F>> {
        let [_, c, h, w] = spikes.dims();
        if InputGeometry::new(c, h, w) != self.input {
            return Err(Error::Shape(format!(
                "input {c}x{h}x{w} does not match model geometry {}x{}x{}",
                self.input.channels, self.input.height, self.input.width
            )));
        }
        match self.pool_kernel() {
            Some(k) => pool_forward(spikes, k),
            None => {
                let dense: Vec<F> = spikes
                    .to_dense()
                    .into_iter()
                    .map(|b| if b == 1 { F::one() } else { F::zero() })
                    .collect();
                flatten(&dense, spikes.steps(), self.input)
            }
        }
    }

    pub fn forward(&self, spikes: &SpikeTensor, opts: &ForwardOptions) -> Result<Forward<F>> {
        let flat = self.prepare_input(spikes)?;
        self.forward_flat(flat, opts)
    }

    /// Runs the dense stack on an already pooled and flattened input.
    pub fn forward_flat(&self, flat: TimeSeries<F>, opts: &ForwardOptions) -> Result<Forward<F>> {
        if flat.units() != self.flat_units() {
            return Err(Error::Shape(format!(
                "flattened input has {} units, expected {}",
                flat.units(),
                self.flat_units()
            )));
        }
        let dense = self.dense_layers();
        if dense.is_empty() {
            return Err(Error::Usage("model has no dense layers".into()));
        }
        let mut traces = Vec::with_capacity(dense.len());
        let mut current = flat.clone();
        let mut output = None;
        for (l, layer) in dense.iter().enumerate() {
            let mask = (opts.training && layer.dropout_p > 0.0)
                .then(|| dropout_mask(current.units(), layer.dropout_p, mix_seed(opts.seed, l as u64)));
            let (seen, record) =
                run_dense(&current, layer.weights, layer.neuron, mask.as_deref(), opts.spike_fn);
            let next = TimeSeries::from_vec(
                record.steps(),
                record.neurons(),
                record.spike_rows().flatten().copied().collect(),
            )?;
            if opts.training {
                traces.push(DenseTrace {
                    inputs: seen,
                    mask,
                    record: record.clone(),
                });
            }
            current = next;
            output = Some(record);
        }
        Ok(Forward {
            output: output.unwrap(),
            trace: opts.training.then_some(ForwardTrace {
                pooled: flat,
                dense: traces,
            }),
        })
    }

    /// BPTT. `d_out[t][j]` is dL/ds of final-layer neuron `j` at step `t`.
    pub fn backward(&self, trace: &ForwardTrace<F>, d_out: &TimeSeries<F>) -> Result<Gradients<F>> {
        self.backward_impl(trace, d_out, false, SurrogateUnits::Literal)
    }

    /// As [`NetworkModel::backward`], reading each layer's surrogate
    /// parameters in `units`.
    pub fn backward_in_units(
        &self,
        trace: &ForwardTrace<F>,
        d_out: &TimeSeries<F>,
        units: SurrogateUnits,
    ) -> Result<Gradients<F>> {
        self.backward_impl(trace, d_out, false, units)
    }

    /// As [`NetworkModel::backward`], also returning the gradient with
    /// respect to the flattened network input.
    pub fn backward_with_input(
        &self,
        trace: &ForwardTrace<F>,
        d_out: &TimeSeries<F>,
    ) -> Result<Gradients<F>> {
        self.backward_impl(trace, d_out, true, SurrogateUnits::Literal)
    }

    fn backward_impl(
        &self,
        trace: &ForwardTrace<F>,
        d_out: &TimeSeries<F>,
        want_input: bool,
        units: SurrogateUnits,
    ) -> Result<Gradients<F>> {
        let dense = self.dense_layers();
        if trace.dense.len() != dense.len() {
            return Err(Error::Usage(format!(
                "trace has {} dense layers, model has {}",
                trace.dense.len(),
                dense.len()
            )));
        }
        let last = trace.dense.last().unwrap();
        if d_out.steps() != last.record.steps() || d_out.units() != last.record.neurons() {
            return Err(Error::Shape(format!(
                "output gradient {}x{}, expected {}x{}",
                d_out.steps(),
                d_out.units(),
                last.record.steps(),
                last.record.neurons()
            )));
        }
        let mut grads = vec![None; dense.len()];
        let mut upstream = d_out.clone();
        let mut input_grad = None;
        for l in (0..dense.len()).rev() {
            let need_in = l > 0 || want_input;
            let neuron = dense[l].neuron.in_units(units);
            let (d_w, d_in) = dense_backward(&trace.dense[l], dense[l].weights, &neuron, &upstream, need_in);
            grads[l] = Some(d_w);
            match d_in {
                Some(d) if l > 0 => upstream = d,
                d => input_grad = d,
            }
        }
        Ok(Gradients {
            weights: grads.into_iter().map(Option::unwrap).collect(),
            input: input_grad,
        })
    }
}

/// Checks the chain `[pool] flatten dense*` and returns each dense layer's
/// `(in, out)`.
fn validate_layers(input: InputGeometry, layers: &[LayerSpec]) -> Result<Vec<(usize, usize)>> {
    if input.units() == 0 {
        return Err(Error::Config("input geometry has no units".into()));
    }
    let mut flat: Option<usize> = None;
    let (mut h, mut w) = (input.height, input.width);
    let mut shapes = Vec::new();
    for (idx, layer) in layers.iter().enumerate() {
        match *layer {
            LayerSpec::Pool { kernel } => {
                if flat.is_some() || idx != 0 {
                    return Err(Error::Config("pooling must be the first layer".into()));
                }
                (h, w) = pooled_dims(h, w, kernel)?;
            }
            LayerSpec::Flatten => {
                if flat.is_some() {
                    return Err(Error::Config("duplicate flatten layer".into()));
                }
                flat = Some(input.channels * h * w);
            }
            LayerSpec::Dense {
                in_units,
                out_units,
                neuron,
                dropout_p,
            } => {
                let expected = flat.ok_or_else(|| {
                    Error::Config(format!("dense layer {idx} before flatten"))
                })?;
                if in_units == 0 || out_units == 0 {
                    return Err(Error::Config(format!("dense layer {idx} has zero units")));
                }
                if in_units != expected {
                    return Err(Error::Config(format!(
                        "dense layer {idx} takes {in_units} inputs but receives {expected}"
                    )));
                }
                if !(0.0..1.0).contains(&dropout_p) {
                    return Err(Error::Config(format!(
                        "dense layer {idx}: dropout {dropout_p} outside [0, 1)"
                    )));
                }
                neuron.validate()?;
                shapes.push((in_units, out_units));
                flat = Some(out_units);
            }
        }
    }
    Ok(shapes)
}

pub fn default_layers(
    width: usize,
    height: usize,
    kernel: usize,
    neuron: LifParams,
    dropout_p: f64,
) -> Result<Vec<LayerSpec>> {
    let (ph, pw) = pooled_dims(height, width, kernel)?;
    let flat = 2 * ph * pw;
    let [h1, h2] = DEFAULT_HIDDEN;
    Ok(vec![
        LayerSpec::Pool { kernel },
        LayerSpec::Flatten,
        LayerSpec::dense(flat, h1, neuron, dropout_p),
        LayerSpec::dense(h1, h2, neuron, dropout_p),
        LayerSpec::dense(h2, N_CLASSES, neuron, dropout_p),
    ])
}

/// Number of dense weights; the model has no biases.
pub fn count_params(layers: &[LayerSpec]) -> usize {
    layers
        .iter()
        .map(|l| match l {
            LayerSpec::Dense {
                in_units,
                out_units,
                ..
            } => in_units * out_units,
            _ => 0,
        })
        .sum()
}

/// Inverted-dropout multipliers: `0` with probability `p`, else `1/(1-p)`.
pub fn dropout_mask<F: Real>(n: usize, p: f64, seed: u64) -> Vec<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = F::from_f64(1.0 / (1.0 - p)).unwrap();
    (0..n)
        .map(|_| if rng.random::<f64>() < p { F::zero() } else { keep })
        .collect()
}

/// Derives an independent stream seed from a base seed and an index.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuron::lif_run;

    fn tiny(layers: &[(usize, usize)], neuron: LifParams, dropout: f64, seed: u64) -> NetworkModel<f64> {
        let mut specs = vec![LayerSpec::Flatten];
        specs.extend(layers.iter().map(|&(i, o)| LayerSpec::dense(i, o, neuron, dropout)));
        NetworkModel::init(InputGeometry::new(1, 1, layers[0].0), specs, seed).unwrap()
    }

    #[test]
    fn pool_dims_default_geometry() {
        assert_eq!(pooled_dims(480, 640, 7).unwrap(), (69, 91));
        assert_eq!(pooled_dims(120, 160, 7).unwrap(), (18, 22));
        assert!(pooled_dims(5, 6, 7).is_err());
        assert_eq!(pooled_dims(10, 6, 7).unwrap(), (2, 0));
    }

    #[test]
    fn pool_zero_and_full_window() {
        let zero = SpikeTensor::zeros(3, 2, 14, 14, 1000);
        let out: TimeSeries<f64> = pool_forward(&zero, 7).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));

        let coords = (0..7).flat_map(|h| (0..7).map(move |w| [0, 0, h, w]));
        let block = SpikeTensor::from_coords([1, 1, 7, 7], 1000, coords).unwrap();
        let out: TimeSeries<f64> = pool_forward(&block, 7).unwrap();
        assert_eq!(out.as_slice(), &[1.0]);
    }

    #[test]
    fn pool_padding_and_truncation() {
        // 9 rows -> 2 (padded), 9 cols -> 1 (2 truncated)
        let s = SpikeTensor::from_coords([1, 1, 9, 9], 1, [[0, 0, 8, 0], [0, 0, 0, 8], [0, 0, 0, 0]]).unwrap();
        let out: TimeSeries<f64> = pool_forward(&s, 7).unwrap();
        assert_eq!(out.units(), 2);
        assert_eq!(out.row(0), &[1.0 / 49.0, 1.0 / 49.0]);
    }

    #[test]
    fn pool_backward_is_adjoint() {
        use rand::Rng;
        let g = InputGeometry::new(2, 16, 17);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let coords: Vec<[usize; 4]> = (0..120)
            .map(|_| [rng.random_range(0..3), rng.random_range(0..2), rng.random_range(0..16), rng.random_range(0..17)])
            .collect();
        let x = SpikeTensor::from_coords([3, 2, 16, 17], 1, coords).unwrap();
        let px: TimeSeries<f64> = pool_forward(&x, 5).unwrap();
        let y = TimeSeries::from_vec(3, px.units(), (0..3 * px.units()).map(|_| rng.random::<f64>()).collect()).unwrap();
        let lhs: f64 = px.as_slice().iter().zip(y.as_slice()).map(|(a, b)| a * b).sum();
        let back = pool_backward(&y, g, 5).unwrap();
        let dense = x.to_dense();
        let rhs: f64 = dense.iter().zip(back.as_slice()).map(|(&a, b)| a as f64 * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        // truncated columns get nothing
        for t in 0..3 {
            for h in 0..16 {
                assert_eq!(back.row(t)[h * 17 + 15], 0.0);
                assert_eq!(back.row(t)[h * 17 + 16], 0.0);
            }
        }
    }

    #[test]
    fn flatten_indexing() {
        let g = InputGeometry::new(2, 69, 91);
        let mut data = vec![0.0f64; g.units()];
        data[69 * 91] = 1.0; // (c=1, h=0, w=0)
        let f = flatten(&data, 1, g).unwrap();
        assert_eq!(f.units(), 12558);
        assert_eq!(f.row(0).iter().position(|&v| v == 1.0), Some(6279));
        assert_eq!(unflatten(&f), data);
    }

    #[test]
    fn dense_null_weights_and_cuba_step() {
        let p = LifParams::default();
        let x = TimeSeries::from_rows(&[vec![1.0f64, 1.0], vec![1.0, 0.0]]).unwrap();
        let r = dense_forward(&x, &Matrix::zeros(3, 2), &p, None).unwrap();
        assert!(r.spike_rows().all(|s| s.iter().all(|&v| v == 0.0)));

        let x = TimeSeries::from_rows(&[vec![1.0f64], vec![0.0]]).unwrap();
        let w = Matrix::from_vec(1, 1, vec![2.0]).unwrap();
        let r = dense_forward(&x, &w, &p, None).unwrap();
        assert_eq!(r.v_pre_reset_at(0), &[2.0]);
        assert_eq!(r.spikes_at(0), &[1.0]);
        assert!(dense_forward(&x, &Matrix::zeros(1, 2), &p, None).is_err());
    }

    #[test]
    fn dense_matches_composition_oracle() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (n_in, n_out, steps) = (6, 4, 12);
        let p = LifParams { threshold: 0.8, ..LifParams::default() };
        let w = Matrix::from_vec(n_out, n_in, (0..n_in * n_out).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let rows: Vec<Vec<f64>> = (0..steps)
            .map(|_| (0..n_in).map(|_| if rng.random::<f64>() < 0.4 { 1.0 } else { 0.0 }).collect())
            .collect();
        let mask: Vec<f64> = (0..n_in).map(|i| if i == 2 { 0.0 } else { 1.0 / 0.9 }).collect();
        let got = dense_forward(&TimeSeries::from_rows(&rows).unwrap(), &w, &p, Some(&mask)).unwrap();

        let drives: Vec<Vec<f64>> = rows
            .iter()
            .map(|a| {
                (0..n_out)
                    .map(|o| {
                        let mut acc = 0.0;
                        for i in 0..n_in {
                            let ai = a[i] * mask[i];
                            if ai != 0.0 {
                                acc += w.get(o, i) * ai;
                            }
                        }
                        acc
                    })
                    .collect()
            })
            .collect();
        let want = lif_run(&drives, &p, &LifState::zeros(n_out)).unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn zero_input_fixed_point_and_shapes() {
        let m = NetworkModel::<f32>::spiking_dd(64, 48, 1).unwrap();
        let zero = SpikeTensor::zeros(33, 2, 48, 64, 1000);
        let f = m.forward(&zero, &ForwardOptions::train(3)).unwrap();
        assert_eq!(f.output.neurons(), 2);
        assert_eq!(f.output.steps(), 33);
        for layer in &f.trace.unwrap().dense {
            assert!(layer.record.spike_rows().all(|s| s.iter().all(|&v| v == 0.0)));
        }
        let wrong = SpikeTensor::zeros(33, 2, 48, 65, 1000);
        assert!(matches!(m.forward(&wrong, &ForwardOptions::eval()), Err(Error::Shape(_))));
    }

    #[test]
    fn construction_rejects_bad_chains() {
        let p = LifParams::default();
        let g = InputGeometry::new(1, 1, 4);
        assert!(NetworkModel::<f64>::init(g, vec![LayerSpec::dense(4, 2, p, 0.0)], 0).is_err());
        assert!(NetworkModel::<f64>::init(
            g,
            vec![LayerSpec::Flatten, LayerSpec::dense(4, 3, p, 0.0), LayerSpec::dense(2, 2, p, 0.0)],
            0
        )
        .is_err());
        assert!(NetworkModel::<f64>::init(g, vec![LayerSpec::Flatten, LayerSpec::dense(4, 2, p, 1.0)], 0).is_err());
        let ok = NetworkModel::<f64>::init(g, vec![LayerSpec::Flatten, LayerSpec::dense(4, 2, p, 0.0)], 0).unwrap();
        let mut w = ok.weights().to_vec();
        w[0] = Matrix::zeros(2, 3);
        assert!(NetworkModel::new(g, ok.layers().to_vec(), w).is_err());
    }

    #[test]
    fn param_counts() {
        let m = NetworkModel::<f32>::spiking_dd(640, 480, 0).unwrap();
        assert_eq!(m.count_params(), 402_128);
        assert_eq!(m.chain_summary(), "2x69x91 -> 32 -> 8 -> 2");
        let small = tiny(&[(3, 2)], LifParams::default(), 0.0, 0);
        assert_eq!(small.count_params(), 6);
        let none = NetworkModel::<f32>::new(InputGeometry::new(1, 1, 3), vec![LayerSpec::Flatten], vec![]).unwrap();
        assert_eq!(none.count_params(), 0);
        assert!(matches!(
            none.forward_flat(TimeSeries::zeros(2, 3), &ForwardOptions::eval()),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn init_bounds() {
        let m = tiny(&[(50, 20), (20, 2)], LifParams::default(), 0.0, 4);
        for w in m.weights() {
            let b = (1.0 / w.cols() as f64).sqrt();
            assert!(w.as_slice().iter().all(|v| v.abs() <= b));
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let m = tiny(&[(4, 3), (3, 2)], LifParams { threshold: 0.3, ..LifParams::default() }, 0.1, 2);
        let x = TimeSeries::from_rows(&vec![vec![1.0, 0.0, 1.0, 1.0]; 6]).unwrap();
        let f = m.forward_flat(x, &ForwardOptions::train(1)).unwrap();
        let g = m.backward(f.trace.as_ref().unwrap(), &TimeSeries::zeros(6, 2)).unwrap();
        assert!(g.weights.iter().all(|w| w.as_slice().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn silent_neuron_far_from_threshold_has_zero_gradient() {
        // hidden neuron 1 has zero incoming weights: its potential stays at 0,
        // far outside the surrogate support
        let p = LifParams { threshold: 0.5, tau_grad: 0.1, ..LifParams::default() };
        let mut m = tiny(&[(3, 2), (2, 2)], p, 0.0, 8);
        for i in 0..3 {
            m.weights_mut()[0].set(1, i, 0.0);
        }
        let x = TimeSeries::from_rows(&vec![vec![1.0, 1.0, 1.0]; 5]).unwrap();
        let f = m.forward_flat(x, &ForwardOptions::train(0)).unwrap();
        let g = m.backward(f.trace.as_ref().unwrap(), &TimeSeries::from_rows(&vec![vec![1.0, -1.0]; 5]).unwrap()).unwrap();
        for i in 0..3 {
            assert_eq!(g.weights[0].get(1, i), 0.0);
        }
    }

    #[test]
    fn dropout_mask_expectation() {
        let n = 20_000;
        let m: Vec<f64> = dropout_mask(n, 0.05, 17);
        let mean = m.iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.02);
        assert!(m.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.95).abs() < 1e-15));
    }

    #[test]
    fn forward_is_deterministic() {
        let m = NetworkModel::<f32>::spiking_dd(35, 21, 3).unwrap();
        let coords: Vec<[usize; 4]> = (0..200).map(|i| [i % 10, i % 2, (i * 7) % 21, (i * 13) % 35]).collect();
        let x = SpikeTensor::from_coords([10, 2, 21, 35], 1000, coords).unwrap();
        let a = m.forward(&x, &ForwardOptions::train(42)).unwrap();
        let b = m.forward(&x, &ForwardOptions::train(42)).unwrap();
        assert_eq!(a, b);
    }
}
