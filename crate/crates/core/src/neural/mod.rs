//! Fixed-architecture Q-networks with hand-written reverse-mode gradients.
//!
//! Two architectures are provided, both mapping the 154-value observation
//! (5x5x6 crop followed by 4 global scalars) to 10 action values:
//!
//! | architecture | layers | parameters (default) |
//! |---|---|---|
//! | `LargeMlp` | dense 154→256, tanh, dense 256→256, tanh, dense 256→256, tanh, dense 256→10 | 173,834 |
//! | `SmallConv` | conv 3x3 same-padding 6→10, tanh, flatten(250)+globals(4), dense 254→87, tanh, dense 87→10 | 23,615 |
//!
//! Dense weights are stored row-major `[out][in]` followed by the bias
//! vector. Convolution kernels are stored `[out_channel][ky][kx][in_channel]`
//! followed by one bias per output channel.

mod checkpoint;
mod optim;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use optim::{Optimizer, OptimizerKind};

use crate::error::{Error, Result};
use crate::world::{Action, GLOBAL_LEN, INPUT_LEN, LOCAL_CHANNELS, LOCAL_LEN, VIEW};

pub const OUTPUTS: usize = Action::COUNT;
const KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    LargeMlp { hidden: [usize; 3] },
    SmallConv { channels: usize, hidden: usize },
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture::small_conv()
    }
}

impl Architecture {
    pub fn large_mlp() -> Self {
        Architecture::LargeMlp { hidden: [256; 3] }
    }

    pub fn small_conv() -> Self {
        Architecture::SmallConv {
            channels: 10,
            hidden: 87,
        }
    }

    /// Numeric id written to checkpoints.
    pub fn id(&self) -> u32 {
        match self {
            Architecture::LargeMlp { .. } => 0,
            Architecture::SmallConv { .. } => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Architecture::LargeMlp { .. } => "large_mlp",
            Architecture::SmallConv { .. } => "small_conv",
        }
    }

    /// Width list written to checkpoints.
    pub fn shape(&self) -> Vec<u32> {
        match *self {
            Architecture::LargeMlp { hidden } => hidden.iter().map(|&h| h as u32).collect(),
            Architecture::SmallConv { channels, hidden } => vec![channels as u32, hidden as u32],
        }
    }

    pub fn from_parts(id: u32, shape: &[u32]) -> Result<Self> {
        let arch = match (id, shape) {
            (0, &[a, b, c]) => Architecture::LargeMlp {
                hidden: [a as usize, b as usize, c as usize],
            },
            (1, &[c, h]) => Architecture::SmallConv {
                channels: c as usize,
                hidden: h as usize,
            },
            _ => return Err(Error::Format(format!("unknown architecture {id} with shape {shape:?}"))),
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Architecture::LargeMlp { hidden } => hidden.iter().all(|&h| h > 0),
            Architecture::SmallConv { channels, hidden } => channels > 0 && hidden > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("architecture {self:?} has an empty layer")))
        }
    }

    fn layers(&self) -> Vec<Layer> {
        match *self {
            Architecture::LargeMlp { hidden: [a, b, c] } => vec![
                Layer::Dense { input: INPUT_LEN, output: a },
                Layer::Dense { input: a, output: b },
                Layer::Dense { input: b, output: c },
                Layer::Dense { input: c, output: OUTPUTS },
            ],
            Architecture::SmallConv { channels, hidden } => vec![
                Layer::Conv { channels },
                Layer::Dense {
                    input: VIEW * VIEW * channels + GLOBAL_LEN,
                    output: hidden,
                },
                Layer::Dense { input: hidden, output: OUTPUTS },
            ],
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers().iter().map(Layer::parameter_count).sum()
    }
}

#[derive(Debug, Clone, Copy)]
enum Layer {
    Dense { input: usize, output: usize },
    /// 3x3 same-padding convolution over the local crop; the global scalars
    /// pass through and are appended to the flattened feature map.
    Conv { channels: usize },
}

impl Layer {
    fn parameter_count(&self) -> usize {
        match *self {
            Layer::Dense { input, output } => input * output + output,
            Layer::Conv { channels } => channels * KERNEL * KERNEL * LOCAL_CHANNELS + channels,
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            Layer::Dense { input, .. } => input,
            Layer::Conv { .. } => KERNEL * KERNEL * LOCAL_CHANNELS,
        }
    }

    fn bias_len(&self) -> usize {
        match *self {
            Layer::Dense { output, .. } => output,
            Layer::Conv { channels } => channels,
        }
    }
}

/// Gradient of a loss with respect to a network's flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBatch {
    pub grads: Vec<f64>,
    pub samples: usize,
}

impl GradientBatch {
    pub fn zeros(len: usize) -> Self {
        GradientBatch {
            grads: vec![0.0; len],
            samples: 0,
        }
    }

    pub fn add(&mut self, other: &GradientBatch) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            *a += b;
        }
        self.samples += other.samples;
    }

    pub fn scale(&mut self, factor: f64) {
        self.grads.iter_mut().for_each(|g| *g *= factor);
    }
}

/// Activations recorded by a forward pass, needed for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    input: Vec<f64>,
    /// Post-activation output of every hidden layer (tanh applied).
    hidden: Vec<Vec<f64>>,
    pub q: [f64; OUTPUTS],
}

/// Action-value network with a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    arch: Architecture,
    params: Vec<f64>,
    /// Initialisation seed.
    pub seed: u64,
    /// Number of optimiser updates applied so far.
    pub step: u64,
}

impl QNetwork {
    /// Fan-in scaled uniform weights `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`,
    /// zero biases.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(arch.parameter_count());
        for layer in arch.layers() {
            let bound = 1.0 / (layer.fan_in() as f64).sqrt();
            let weights = layer.parameter_count() - layer.bias_len();
            params.extend((0..weights).map(|_| rng.random_range(-bound..bound)));
            params.extend(std::iter::repeat_n(0.0, layer.bias_len()));
        }
        Ok(QNetwork { arch, params, seed, step: 0 })
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.parameter_count() {
            return Err(Error::Domain(format!(
                "{} parameters for an architecture with {}",
                params.len(),
                arch.parameter_count()
            )));
        }
        Ok(QNetwork { arch, params, seed: 0, step: 0 })
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        Self::from_params(arch, vec![0.0; arch.parameter_count()])
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    fn check_input(input: &[f64]) -> Result<()> {
        if input.len() != INPUT_LEN {
            return Err(Error::Domain(format!("network input has {} values, expected {INPUT_LEN}", input.len())));
        }
        Ok(())
    }

    /// Action values for one observation.
    pub fn forward(&self, input: &[f64]) -> Result<[f64; OUTPUTS]> {
        Ok(self.forward_trace(input)?.q)
    }

    /// Index of the largest action value; ties go to the lowest index.
    pub fn greedy(&self, input: &[f64]) -> Result<(usize, f64)> {
        Ok(argmax(&self.forward(input)?))
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<Trace> {
        Self::check_input(input)?;
        let layers = self.arch.layers();
        let mut hidden = Vec::with_capacity(layers.len() - 1);
        let mut offset = 0;
        let mut current: Vec<f64> = input.to_vec();
        let last = layers.len() - 1;
        let mut q = [0.0; OUTPUTS];
        for (li, layer) in layers.iter().enumerate() {
            let p = &self.params[offset..offset + layer.parameter_count()];
            offset += layer.parameter_count();
            match *layer {
                Layer::Dense { input, output } => {
                    let (w, b) = p.split_at(input * output);
                    let mut out = b.to_vec();
                    for (o, acc) in out.iter_mut().enumerate() {
                        let row = &w[o * input..(o + 1) * input];
                        *acc += dot(row, &current);
                    }
                    if li == last {
                        q.copy_from_slice(&out);
                    } else {
                        out.iter_mut().for_each(|v| *v = v.tanh());
                        hidden.push(out.clone());
                        current = out;
                    }
                }
                Layer::Conv { channels } => {
                    let mut out = conv_forward(p, channels, &current[..LOCAL_LEN]);
                    out.iter_mut().for_each(|v| *v = v.tanh());
                    hidden.push(out.clone());
                    out.extend_from_slice(&current[LOCAL_LEN..]);
                    current = out;
                }
            }
        }
        Ok(Trace {
            input: input.to_vec(),
            hidden,
            q,
        })
    }

    /// Accumulates `d loss / d params` into `grad`, given `d loss / d q`.
    pub fn backward_into(&self, trace: &Trace, output_grad: &[f64; OUTPUTS], grad: &mut [f64]) {
        assert_eq!(grad.len(), self.params.len(), "gradient buffer has the wrong length");
        let layers = self.arch.layers();
        let mut ends: Vec<usize> = layers
            .iter()
            .scan(0, |acc, l| {
                *acc += l.parameter_count();
                Some(*acc)
            })
            .collect();
        ends.insert(0, 0);
        let mut upstream: Vec<f64> = output_grad.to_vec();
        for li in (0..layers.len()).rev() {
            let (start, end) = (ends[li], ends[li + 1]);
            let p = &self.params[start..end];
            let g = &mut grad[start..end];
            // Input seen by this layer.
            let layer_input: Vec<f64> = if li == 0 {
                trace.input.clone()
            } else {
                let mut v = trace.hidden[li - 1].clone();
                if matches!(layers[li - 1], Layer::Conv { .. }) {
                    v.extend_from_slice(&trace.input[LOCAL_LEN..]);
                }
                v
            };
            match layers[li] {
                Layer::Dense { input, output } => {
                    let (w, _) = p.split_at(input * output);
                    let (gw, gb) = g.split_at_mut(input * output);
                    let mut down = vec![0.0; if li > 0 { input } else { 0 }];
                    for o in 0..output {
                        let d = upstream[o];
                        if d == 0.0 {
                            continue;
                        }
                        gb[o] += d;
                        let grow = &mut gw[o * input..(o + 1) * input];
                        for (gi, xi) in grow.iter_mut().zip(&layer_input) {
                            *gi += d * xi;
                        }
                        if li > 0 {
                            let row = &w[o * input..(o + 1) * input];
                            for (di, wi) in down.iter_mut().zip(row) {
                                *di += d * wi;
                            }
                        }
                    }
                    upstream = down;
                }
                Layer::Conv { channels } => {
                    // Only the feature-map part of upstream flows into the kernel.
                    let local = &trace.input[..LOCAL_LEN];
                    conv_backward(p, channels, local, &upstream[..VIEW * VIEW * channels], g);
                    upstream = Vec::new();
                }
            }
            if li > 0 {
                // Through the tanh of the previous hidden layer.
                let act = &trace.hidden[li - 1];
                for (u, y) in upstream.iter_mut().zip(act) {
                    *u *= 1.0 - y * y;
                }
                upstream.truncate(act.len());
            }
        }
    }

    /// Gradient of `residual^2`, where `residual = target - Q(obs, action)`,
    /// with respect to the parameters.
    pub fn backward(&self, input: &[f64], action: usize, residual: f64) -> Result<GradientBatch> {
        if action >= OUTPUTS {
            return Err(Error::Domain(format!("action index {action} out of range")));
        }
        let trace = self.forward_trace(input)?;
        let mut batch = GradientBatch::zeros(self.params.len());
        let mut out = [0.0; OUTPUTS];
        out[action] = -2.0 * residual;
        self.backward_into(&trace, &out, &mut batch.grads);
        batch.samples = 1;
        Ok(batch)
    }
}

/// Largest value and its index; ties resolve to the lowest index.
pub fn argmax(values: &[f64; OUTPUTS]) -> (usize, f64) {
    let mut best = (0, values[0]);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn conv_forward(p: &[f64], channels: usize, local: &[f64]) -> Vec<f64> {
    let klen = KERNEL * KERNEL * LOCAL_CHANNELS;
    let (w, b) = p.split_at(channels * klen);
    let mut out = vec![0.0; VIEW * VIEW * channels];
    for r in 0..VIEW {
        for c in 0..VIEW {
            for oc in 0..channels {
                let kernel = &w[oc * klen..(oc + 1) * klen];
                let mut acc = b[oc];
                for ky in 0..KERNEL {
                    let ir = r as isize + ky as isize - 1;
                    if !(0..VIEW as isize).contains(&ir) {
                        continue;
                    }
                    for kx in 0..KERNEL {
                        let ic = c as isize + kx as isize - 1;
                        if !(0..VIEW as isize).contains(&ic) {
                            continue;
                        }
                        let src = (ir as usize * VIEW + ic as usize) * LOCAL_CHANNELS;
                        let k = (ky * KERNEL + kx) * LOCAL_CHANNELS;
                        acc += dot(&kernel[k..k + LOCAL_CHANNELS], &local[src..src + LOCAL_CHANNELS]);
                    }
                }
                out[(r * VIEW + c) * channels + oc] = acc;
            }
        }
    }
    out
}

/// `upstream` is the gradient w.r.t. the conv pre-activations.
fn conv_backward(p: &[f64], channels: usize, local: &[f64], upstream: &[f64], g: &mut [f64]) {
    let klen = KERNEL * KERNEL * LOCAL_CHANNELS;
    let _ = p;
    let (gw, gb) = g.split_at_mut(channels * klen);
    for r in 0..VIEW {
        for c in 0..VIEW {
            for oc in 0..channels {
                let d = upstream[(r * VIEW + c) * channels + oc];
                if d == 0.0 {
                    continue;
                }
                gb[oc] += d;
                let gk = &mut gw[oc * klen..(oc + 1) * klen];
                for ky in 0..KERNEL {
                    let ir = r as isize + ky as isize - 1;
                    if !(0..VIEW as isize).contains(&ir) {
                        continue;
                    }
                    for kx in 0..KERNEL {
                        let ic = c as isize + kx as isize - 1;
                        if !(0..VIEW as isize).contains(&ic) {
                            continue;
                        }
                        let src = (ir as usize * VIEW + ic as usize) * LOCAL_CHANNELS;
                        let k = (ky * KERNEL + kx) * LOCAL_CHANNELS;
                        for ch in 0..LOCAL_CHANNELS {
                            gk[k + ch] += d * local[src + ch];
                        }
                    }
                }
            }
        }
    }
}
