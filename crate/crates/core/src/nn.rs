//! Small fixed-topology feedforward networks with hand-written reverse mode.
//!
//! Networks are stacks of dense layers. Hidden layers use either `tanh` or
//! `relu`; the last layer is always affine. A [`OutputHead::Gaussian`] network
//! additionally carries a state-independent `log_std` vector (one entry per
//! output), so its outputs are read as the mean of a diagonal Gaussian.
//!
//! All arithmetic is `f64`. Gradients are plain parameter-shaped containers and
//! every update (`sgd_apply`, `ema_blend`) returns fresh parameters, which keeps
//! parameters immutable once produced and cheap to hand between workers.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Lower clamp for Gaussian-head log standard deviations.
pub const LOG_STD_MIN: f64 = -5.0;
/// Upper clamp for Gaussian-head log standard deviations.
pub const LOG_STD_MAX: f64 = 2.0;
/// Keeps the tanh-squash log-Jacobian finite at saturation.
pub const SQUASH_EPS: f64 = 1e-6;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error("a network needs at least two layer sizes, got {0}")]
    TooFewLayers(usize),
    #[error("layer sizes must be positive")]
    ZeroWidth,
    #[error("input width {got} does not match the first layer size {expected}")]
    InputWidth { expected: usize, got: usize },
    #[error("shape mismatch in {0}")]
    Shape(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("tau must lie in (0, 1], got {0}")]
    Tau(f64),
    #[error("network has no gaussian head")]
    NotGaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => libm::tanh(z),
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative expressed through the pre-activation `z` and activation `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    Linear,
    /// Outputs are Gaussian means; `log_std` holds one entry per output.
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Ascend,
    Descend,
}

/// Row-major batch of equally sized vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Batch {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Batch { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_flat(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NnError> {
        if data.len() != rows * cols {
            return Err(NnError::Shape("batch data length"));
        }
        Ok(Batch { rows, cols, data })
    }

    /// Builds a batch from row slices; all rows must share a width.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, NnError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(NnError::Shape("ragged batch rows"));
            }
            data.extend_from_slice(r);
        }
        Ok(Batch { rows: rows.len(), cols, data })
    }

    pub fn single(row: &[f64]) -> Self {
        Batch { rows: 1, cols: row.len(), data: row.to_vec() }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

/// Affine layer `y = W x + b` with `W` stored row-major as `outputs × inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense { inputs, outputs, weights: vec![0.0; inputs * outputs], biases: vec![0.0; outputs] }
    }

    #[inline]
    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.inputs + col]
    }

    fn same_shape(&self, other: &Dense) -> bool {
        self.inputs == other.inputs
            && self.outputs == other.outputs
            && self.weights.len() == other.weights.len()
            && self.biases.len() == other.biases.len()
    }

    fn forward(&self, x: &Batch) -> Batch {
        let mut out = Batch::zeros(x.rows, self.outputs);
        for r in 0..x.rows {
            let xr = x.row(r);
            let yr = out.row_mut(r);
            for (o, y) in yr.iter_mut().enumerate() {
                let w = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                let mut acc = self.biases[o];
                for (wi, xi) in w.iter().zip(xr) {
                    acc += wi * xi;
                }
                *y = acc;
            }
        }
        out
    }
}

/// Parameters of a feedforward network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layer_sizes: Vec<usize>,
    pub layers: Vec<Dense>,
    pub hidden_activation: Activation,
    pub output_head: OutputHead,
    /// Empty unless the head is Gaussian.
    pub log_std: Vec<f64>,
}

/// Parameter-shaped gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub layers: Vec<Dense>,
    pub log_std: Vec<f64>,
}

/// Per-layer inputs and pre-activations recorded by [`forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[i]` is what layer `i` consumed.
    inputs: Vec<Batch>,
    /// `pre[i]` is layer `i`'s affine output.
    pre: Vec<Batch>,
}

impl ForwardCache {
    pub fn layer_count(&self) -> usize {
        self.pre.len()
    }
}

fn check_sizes(layer_sizes: &[usize]) -> Result<(), NnError> {
    if layer_sizes.len() < 2 {
        return Err(NnError::TooFewLayers(layer_sizes.len()));
    }
    if layer_sizes.iter().any(|&s| s == 0) {
        return Err(NnError::ZeroWidth);
    }
    Ok(())
}

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero, log_std zero.
pub fn init_network(
    layer_sizes: &[usize],
    hidden_activation: Activation,
    output_head: OutputHead,
    seed: u64,
) -> Result<MlpParams, NnError> {
    check_sizes(layer_sizes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = layer_sizes
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / libm::sqrt(fan_in as f64);
            let weights = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
            Dense { inputs: fan_in, outputs: fan_out, weights, biases: vec![0.0; fan_out] }
        })
        .collect();
    let out = *layer_sizes.last().unwrap();
    let log_std = match output_head {
        OutputHead::Linear => Vec::new(),
        OutputHead::Gaussian => vec![0.0; out],
    };
    Ok(MlpParams {
        layer_sizes: layer_sizes.to_vec(),
        layers,
        hidden_activation,
        output_head,
        log_std,
    })
}

impl MlpParams {
    /// All-zero parameters of the given architecture.
    pub fn zeros(
        layer_sizes: &[usize],
        hidden_activation: Activation,
        output_head: OutputHead,
    ) -> Result<Self, NnError> {
        check_sizes(layer_sizes)?;
        let layers = layer_sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        let out = *layer_sizes.last().unwrap();
        let log_std = match output_head {
            OutputHead::Linear => Vec::new(),
            OutputHead::Gaussian => vec![0.0; out],
        };
        Ok(MlpParams {
            layer_sizes: layer_sizes.to_vec(),
            layers,
            hidden_activation,
            output_head,
            log_std,
        })
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum::<usize>() + self.log_std.len()
    }

    /// Checks shape consistency, finiteness and the log_std clamp.
    pub fn validate(&self) -> Result<(), NnError> {
        check_sizes(&self.layer_sizes)?;
        if self.layers.len() + 1 != self.layer_sizes.len() {
            return Err(NnError::Shape("layer count"));
        }
        for (l, w) in self.layers.iter().zip(self.layer_sizes.windows(2)) {
            if l.inputs != w[0]
                || l.outputs != w[1]
                || l.weights.len() != w[0] * w[1]
                || l.biases.len() != w[1]
            {
                return Err(NnError::Shape("layer dimensions"));
            }
        }
        let expected_std = match self.output_head {
            OutputHead::Linear => 0,
            OutputHead::Gaussian => self.output_size(),
        };
        if self.log_std.len() != expected_std {
            return Err(NnError::Shape("log_std length"));
        }
        if self.log_std.iter().any(|&s| !(LOG_STD_MIN..=LOG_STD_MAX).contains(&s)) {
            return Err(NnError::Shape("log_std outside clamp"));
        }
        if !self.values().all(|v| v.is_finite()) {
            return Err(NnError::NonFinite("parameters"));
        }
        Ok(())
    }

    /// Parameters in canonical order: per layer weights then biases, then log_std.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()))
            .chain(self.log_std.iter())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
            .chain(self.log_std.iter_mut())
    }

    fn clamp_log_std(&mut self) {
        for s in &mut self.log_std {
            *s = s.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    /// Largest absolute elementwise difference; `None` on shape mismatch.
    pub fn max_abs_diff(&self, other: &MlpParams) -> Option<f64> {
        if !self.same_shape(other) {
            return None;
        }
        Some(self.values().zip(other.values()).fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs())))
    }

    pub fn same_shape(&self, other: &MlpParams) -> bool {
        self.layer_sizes == other.layer_sizes
            && self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| a.same_shape(b))
            && self.log_std.len() == other.log_std.len()
    }

    /// Single-row convenience forward.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        let (out, _) = forward(self, &Batch::single(input))?;
        Ok(out.into_data())
    }

    /// Flattens into `(layer, kind, row, col, value)` rows.
    pub fn to_snapshot_rows(&self) -> Vec<SnapshotRow> {
        let mut rows = Vec::with_capacity(self.param_count());
        for (li, l) in self.layers.iter().enumerate() {
            for r in 0..l.outputs {
                for c in 0..l.inputs {
                    rows.push(SnapshotRow {
                        layer: li,
                        kind: ParamKind::Weight,
                        row: r,
                        col: c,
                        value: l.weight(r, c),
                    });
                }
            }
            for (r, &b) in l.biases.iter().enumerate() {
                rows.push(SnapshotRow { layer: li, kind: ParamKind::Bias, row: r, col: 0, value: b });
            }
        }
        let head_layer = self.layers.len();
        for (r, &s) in self.log_std.iter().enumerate() {
            rows.push(SnapshotRow { layer: head_layer, kind: ParamKind::LogStd, row: r, col: 0, value: s });
        }
        rows
    }

    /// Rebuilds parameters from snapshot rows; every parameter must be present.
    pub fn from_snapshot_rows(
        layer_sizes: &[usize],
        hidden_activation: Activation,
        output_head: OutputHead,
        rows: &[SnapshotRow],
    ) -> Result<Self, NnError> {
        let mut params = MlpParams::zeros(layer_sizes, hidden_activation, output_head)?;
        let mut seen = vec![false; params.param_count()];
        let n_layers = params.layers.len();
        // offsets of each layer in canonical order
        let mut offsets = Vec::with_capacity(n_layers + 1);
        let mut acc = 0;
        for l in &params.layers {
            offsets.push(acc);
            acc += l.weights.len() + l.biases.len();
        }
        offsets.push(acc);
        for row in rows {
            let slot = match row.kind {
                ParamKind::Weight => {
                    let l = params.layers.get_mut(row.layer).ok_or(NnError::Shape("snapshot layer"))?;
                    if row.row >= l.outputs || row.col >= l.inputs {
                        return Err(NnError::Shape("snapshot weight index"));
                    }
                    let i = row.row * l.inputs + row.col;
                    l.weights[i] = row.value;
                    offsets[row.layer] + i
                }
                ParamKind::Bias => {
                    let l = params.layers.get_mut(row.layer).ok_or(NnError::Shape("snapshot layer"))?;
                    if row.row >= l.outputs || row.col != 0 {
                        return Err(NnError::Shape("snapshot bias index"));
                    }
                    l.biases[row.row] = row.value;
                    offsets[row.layer] + l.weights.len() + row.row
                }
                ParamKind::LogStd => {
                    if row.layer != n_layers || row.row >= params.log_std.len() || row.col != 0 {
                        return Err(NnError::Shape("snapshot log_std index"));
                    }
                    params.log_std[row.row] = row.value;
                    offsets[n_layers] + row.row
                }
            };
            seen[slot] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(NnError::Shape("snapshot is missing parameters"));
        }
        params.validate()?;
        Ok(params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Bias,
    LogStd,
}

/// One scalar of a parameter snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRow {
    pub layer: usize,
    pub kind: ParamKind,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

impl Gradient {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Gradient {
            layers: params.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect(),
            log_std: vec![0.0; params.log_std.len()],
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()))
            .chain(self.log_std.iter())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
            .chain(self.log_std.iter_mut())
    }

    /// Structural equality with a parameter set.
    pub fn matches(&self, params: &MlpParams) -> bool {
        self.layers.len() == params.layers.len()
            && self.layers.iter().zip(&params.layers).all(|(g, p)| g.same_shape(p))
            && self.log_std.len() == params.log_std.len()
    }

    fn matches_gradient(&self, other: &Gradient) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| a.same_shape(b))
            && self.log_std.len() == other.log_std.len()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.values().all(|&v| v == 0.0)
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradient, scale: f64) -> Result<(), NnError> {
        if !self.matches_gradient(other) {
            return Err(NnError::Shape("gradient accumulate"));
        }
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.values_mut() {
            *v *= s;
        }
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.values().map(|v| v * v).sum())
    }

    /// Rescales so the L2 norm does not exceed `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let n = self.norm();
        if n > max_norm && n > 0.0 {
            self.scale(max_norm / n);
        }
    }

    pub fn max_abs_diff(&self, other: &Gradient) -> Option<f64> {
        if !self.matches_gradient(other) {
            return None;
        }
        Some(self.values().zip(other.values()).fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs())))
    }
}

/// Runs the network on a batch and records what backward needs.
pub fn forward(params: &MlpParams, input: &Batch) -> Result<(Batch, ForwardCache), NnError> {
    if input.cols() != params.input_size() {
        return Err(NnError::InputWidth { expected: params.input_size(), got: input.cols() });
    }
    let n = params.layers.len();
    let mut inputs = Vec::with_capacity(n);
    let mut pre = Vec::with_capacity(n);
    let mut current = input.clone();
    for (i, layer) in params.layers.iter().enumerate() {
        let z = layer.forward(&current);
        inputs.push(current);
        current = if i + 1 < n {
            let mut a = z.clone();
            for v in &mut a.data {
                *v = params.hidden_activation.apply(*v);
            }
            a
        } else {
            z.clone()
        };
        pre.push(z);
    }
    Ok((current, ForwardCache { inputs, pre }))
}

/// Gradient of `sum(upstream ⊙ output)` with respect to the parameters.
pub fn backward(params: &MlpParams, cache: &ForwardCache, upstream: &Batch) -> Result<Gradient, NnError> {
    backward_with_input(params, cache, upstream).map(|(g, _)| g)
}

/// As [`backward`], also returning the gradient with respect to the input batch.
pub fn backward_with_input(
    params: &MlpParams,
    cache: &ForwardCache,
    upstream: &Batch,
) -> Result<(Gradient, Batch), NnError> {
    let n = params.layers.len();
    if cache.pre.len() != n || cache.inputs.len() != n {
        return Err(NnError::Shape("stale forward cache"));
    }
    for (l, (x, z)) in params.layers.iter().zip(cache.inputs.iter().zip(&cache.pre)) {
        if x.cols() != l.inputs || z.cols() != l.outputs || x.rows() != upstream.rows() {
            return Err(NnError::Shape("stale forward cache"));
        }
    }
    if upstream.cols() != params.output_size() {
        return Err(NnError::Shape("upstream gradient width"));
    }
    if !upstream.data().iter().all(|v| v.is_finite()) {
        return Err(NnError::NonFinite("upstream gradient"));
    }

    let mut grad = Gradient::zeros_like(params);
    let mut delta = upstream.clone();
    for i in (0..n).rev() {
        let layer = &params.layers[i];
        let x = &cache.inputs[i];
        let g = &mut grad.layers[i];
        for r in 0..delta.rows() {
            let dr = delta.row(r);
            let xr = x.row(r);
            for (o, &d) in dr.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.biases[o] += d;
                let gw = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (w, xi) in gw.iter_mut().zip(xr) {
                    *w += d * xi;
                }
            }
        }
        let mut dx = Batch::zeros(delta.rows(), layer.inputs);
        for r in 0..delta.rows() {
            let dr = delta.row(r);
            let out = dx.row_mut(r);
            for (o, &d) in dr.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let w = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (xi, wi) in out.iter_mut().zip(w) {
                    *xi += d * wi;
                }
            }
        }
        if i > 0 {
            // x here is the activation of layer i-1
            let z_prev = &cache.pre[i - 1];
            for (k, v) in dx.data.iter_mut().enumerate() {
                *v *= params.hidden_activation.derivative(z_prev.data[k], x.data[k]);
            }
        }
        delta = dx;
    }
    Ok((grad, delta))
}

/// Log-density of a diagonal Gaussian evaluated at `x`.
pub fn gaussian_log_density(mean: &[f64], log_std: &[f64], x: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(x)
        .map(|((m, s), v)| {
            let z = (v - m) / libm::exp(*s);
            -0.5 * z * z - s - HALF_LN_2PI
        })
        .sum()
}

/// `sum_j ln(1 - tanh(u_j)^2 + eps)`; subtract from a raw log-density to get the
/// density of `tanh(u)`.
pub fn squash_log_jacobian(raw: &[f64]) -> f64 {
    raw.iter()
        .map(|&u| {
            let t = libm::tanh(u);
            libm::log(1.0 - t * t + SQUASH_EPS)
        })
        .sum()
}

/// Log-density of `tanh(raw)` when `raw` is drawn from the Gaussian head.
pub fn squashed_log_prob(mean: &[f64], log_std: &[f64], raw: &[f64]) -> f64 {
    gaussian_log_density(mean, log_std, raw) - squash_log_jacobian(raw)
}

/// Draws `mean + exp(log_std) * noise` for one state and returns its raw log-density.
pub fn gaussian_head_sample<R: RngCore + ?Sized>(
    params: &MlpParams,
    state: &[f64],
    rng: &mut R,
) -> Result<(Vec<f64>, f64), NnError> {
    if params.output_head != OutputHead::Gaussian {
        return Err(NnError::NotGaussian);
    }
    let mean = params.predict(state)?;
    let raw: Vec<f64> = mean
        .iter()
        .zip(&params.log_std)
        .map(|(m, s)| {
            let eps: f64 = rng.sample(StandardNormal);
            m + libm::exp(*s) * eps
        })
        .collect();
    let lp = gaussian_log_density(&mean, &params.log_std, &raw);
    Ok((raw, lp))
}

/// Gradient of `sum_r coef_r * log N(actions_r; mean(states_r), std)` plus the
/// per-row log-densities. Actions are raw (pre-squash) values held fixed, so any
/// squash correction is constant here.
pub fn log_prob_gradient(
    params: &MlpParams,
    states: &Batch,
    actions: &Batch,
    coefs: &[f64],
) -> Result<(Gradient, Vec<f64>), NnError> {
    if params.output_head != OutputHead::Gaussian {
        return Err(NnError::NotGaussian);
    }
    if actions.rows() != states.rows() || coefs.len() != states.rows() || actions.cols() != params.output_size() {
        return Err(NnError::Shape("log-prob batch"));
    }
    let (mean, cache) = forward(params, states)?;
    let inv_var: Vec<f64> = params.log_std.iter().map(|s| libm::exp(-2.0 * s)).collect();
    let mut upstream = Batch::zeros(states.rows(), params.output_size());
    let mut dlog_std = vec![0.0; params.log_std.len()];
    let mut log_probs = Vec::with_capacity(states.rows());
    for r in 0..states.rows() {
        let m = mean.row(r);
        let a = actions.row(r);
        log_probs.push(gaussian_log_density(m, &params.log_std, a));
        let c = coefs[r];
        let up = upstream.row_mut(r);
        for j in 0..m.len() {
            let diff = a[j] - m[j];
            up[j] = c * diff * inv_var[j];
            dlog_std[j] += c * (diff * diff * inv_var[j] - 1.0);
        }
    }
    let mut grad = backward(params, &cache, &upstream)?;
    grad.log_std = dlog_std;
    Ok((grad, log_probs))
}

/// Backpropagates a reparameterised objective `L(u)` with `u = mean + std * noise`.
///
/// `du` holds `dL/du` per row and output; `dlog_std_direct` is any explicit
/// derivative with respect to `log_std` that does not flow through `u` (summed
/// over rows by the caller).
pub fn reparam_gradient(
    params: &MlpParams,
    cache: &ForwardCache,
    noise: &Batch,
    du: &Batch,
    dlog_std_direct: &[f64],
) -> Result<Gradient, NnError> {
    if params.output_head != OutputHead::Gaussian {
        return Err(NnError::NotGaussian);
    }
    if noise.rows() != du.rows() || noise.cols() != du.cols() || dlog_std_direct.len() != params.log_std.len() {
        return Err(NnError::Shape("reparameterised batch"));
    }
    let mut grad = backward(params, cache, du)?;
    let std: Vec<f64> = params.log_std.iter().map(|s| libm::exp(*s)).collect();
    let mut dls = dlog_std_direct.to_vec();
    for r in 0..du.rows() {
        for (j, d) in dls.iter_mut().enumerate() {
            *d += du.row(r)[j] * std[j] * noise.row(r)[j];
        }
    }
    grad.log_std = dls;
    Ok(grad)
}

/// Gradient of `sum_r coef_r * log pi(tanh(u_r))` where `u_r = mean + std * noise_r`,
/// i.e. the squashed log-density differentiated through the sample path.
pub fn squashed_log_prob_reparam_gradient(
    params: &MlpParams,
    states: &Batch,
    noise: &Batch,
    coefs: &[f64],
) -> Result<(Gradient, Vec<f64>), NnError> {
    let (mean, cache) = forward(params, states)?;
    let rows = states.rows();
    let dim = params.output_size();
    let mut du = Batch::zeros(rows, dim);
    let mut direct = vec![0.0; dim];
    let mut log_probs = Vec::with_capacity(rows);
    for r in 0..rows {
        let raw: Vec<f64> = (0..dim)
            .map(|j| mean.row(r)[j] + libm::exp(params.log_std[j]) * noise.row(r)[j])
            .collect();
        log_probs.push(squashed_log_prob(mean.row(r), &params.log_std, &raw));
        for j in 0..dim {
            du.row_mut(r)[j] = coefs[r] * squash_correction_slope(raw[j]);
            direct[j] -= coefs[r];
        }
    }
    let grad = reparam_gradient(params, &cache, noise, &du, &direct)?;
    Ok((grad, log_probs))
}

/// `d/du [-ln(1 - tanh(u)^2 + eps)]`.
#[inline]
pub fn squash_correction_slope(u: f64) -> f64 {
    let t = libm::tanh(u);
    let s = 1.0 - t * t;
    2.0 * t * s / (s + SQUASH_EPS)
}

/// `params ± lr * gradient`, rejecting non-finite gradients.
pub fn sgd_apply(
    params: &MlpParams,
    gradient: &Gradient,
    learning_rate: f64,
    direction: Direction,
) -> Result<MlpParams, NnError> {
    if !gradient.matches(params) {
        return Err(NnError::Shape("gradient does not match parameters"));
    }
    if !gradient.is_finite() || !learning_rate.is_finite() {
        return Err(NnError::NonFinite("gradient"));
    }
    let sign = match direction {
        Direction::Ascend => 1.0,
        Direction::Descend => -1.0,
    };
    let mut next = params.clone();
    for (p, g) in next.values_mut().zip(gradient.values()) {
        *p += sign * learning_rate * g;
    }
    next.clamp_log_std();
    if !next.values().all(|v| v.is_finite()) {
        return Err(NnError::NonFinite("updated parameters"));
    }
    Ok(next)
}

/// `tau * current + (1 - tau) * proposed`, elementwise.
pub fn ema_blend(current: &MlpParams, proposed: &MlpParams, tau: f64) -> Result<MlpParams, NnError> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(NnError::Tau(tau));
    }
    if !current.same_shape(proposed) {
        return Err(NnError::Shape("ema operands"));
    }
    let mut out = current.clone();
    if tau == 1.0 {
        return Ok(out);
    }
    for (o, p) in out.values_mut().zip(proposed.values()) {
        *o = tau * *o + (1.0 - tau) * p;
    }
    out.clamp_log_std();
    Ok(out)
}

/// Update rule applied by [`Optimizer`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerSpec {
    Sgd { learning_rate: f64 },
    Adam {
        learning_rate: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_adam_eps() -> f64 {
    1e-8
}

impl OptimizerSpec {
    pub fn adam(learning_rate: f64) -> Self {
        OptimizerSpec::Adam { learning_rate, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn learning_rate(&self) -> f64 {
        match self {
            OptimizerSpec::Sgd { learning_rate } | OptimizerSpec::Adam { learning_rate, .. } => *learning_rate,
        }
    }
}

/// Stateful optimizer bound to one parameter set's shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub spec: OptimizerSpec,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(spec: OptimizerSpec, params: &MlpParams) -> Self {
        let n = match spec {
            OptimizerSpec::Sgd { .. } => 0,
            OptimizerSpec::Adam { .. } => params.param_count(),
        };
        Optimizer { spec, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Moves `params` along (ascend) or against (descend) `grad`.
    pub fn step(&mut self, params: &mut MlpParams, grad: &Gradient, direction: Direction) -> Result<(), NnError> {
        self.t += 1;
        match self.spec {
            OptimizerSpec::Sgd { learning_rate } => {
                *params = sgd_apply(params, grad, learning_rate, direction)?;
                Ok(())
            }
            OptimizerSpec::Adam { learning_rate, beta1, beta2, eps } => {
                if !grad.matches(params) {
                    return Err(NnError::Shape("gradient does not match parameters"));
                }
                if !grad.is_finite() {
                    return Err(NnError::NonFinite("gradient"));
                }
                let sign = match direction {
                    Direction::Ascend => 1.0,
                    Direction::Descend => -1.0,
                };
                let bc1 = 1.0 - libm::pow(beta1, self.t as f64);
                let bc2 = 1.0 - libm::pow(beta2, self.t as f64);
                for (((p, g), m), v) in params.values_mut().zip(grad.values()).zip(&mut self.m).zip(&mut self.v) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let mh = *m / bc1;
                    let vh = *v / bc2;
                    *p += sign * learning_rate * mh / (libm::sqrt(vh) + eps);
                }
                params.clamp_log_std();
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn linear_unit(w: f64, b: f64) -> MlpParams {
        let mut p = MlpParams::zeros(&[1, 1], Activation::Relu, OutputHead::Linear).unwrap();
        p.layers[0].weights[0] = w;
        p.layers[0].biases[0] = b;
        p
    }

    #[test]
    fn init_shapes() {
        let p = init_network(&[10, 64, 128, 1], Activation::Relu, OutputHead::Linear, 7).unwrap();
        let shapes: Vec<(usize, usize)> = p.layers.iter().map(|l| (l.outputs, l.inputs)).collect();
        assert_eq!(shapes, vec![(64, 10), (128, 64), (1, 128)]);
        assert!(p.layers.iter().all(|l| l.biases.iter().all(|&b| b == 0.0)));
        p.validate().unwrap();
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_network(&[10, 64, 128, 1], Activation::Relu, OutputHead::Linear, 7).unwrap();
        let b = init_network(&[10, 64, 128, 1], Activation::Relu, OutputHead::Linear, 7).unwrap();
        assert_eq!(a, b);
        let c = init_network(&[10, 64, 128, 1], Activation::Relu, OutputHead::Linear, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let p = init_network(&[16, 64, 2], Activation::Tanh, OutputHead::Linear, 3).unwrap();
        for l in &p.layers {
            let bound = 1.0 / libm::sqrt(l.inputs as f64);
            assert!(l.weights.iter().all(|w| w.abs() < bound));
        }
    }

    #[test]
    fn gaussian_head_exposes_means_and_log_stds() {
        let p = init_network(&[2, 64, 128, 2], Activation::Tanh, OutputHead::Gaussian, 1).unwrap();
        assert_eq!(p.output_size(), 2);
        assert_eq!(p.log_std.len(), 2);
    }

    #[test]
    fn init_rejects_bad_sizes() {
        assert_eq!(init_network(&[], Activation::Tanh, OutputHead::Linear, 0), Err(NnError::TooFewLayers(0)));
        assert_eq!(init_network(&[3], Activation::Tanh, OutputHead::Linear, 0), Err(NnError::TooFewLayers(1)));
        assert_eq!(init_network(&[3, 0, 1], Activation::Tanh, OutputHead::Linear, 0), Err(NnError::ZeroWidth));
    }

    #[test]
    fn zero_params_give_zero_output() {
        for act in [Activation::Tanh, Activation::Relu] {
            let p = MlpParams::zeros(&[3, 8, 2], act, OutputHead::Linear).unwrap();
            let out = p.predict(&[1.0, -2.0, 3.5]).unwrap();
            assert_eq!(out, vec![0.0, 0.0]);
        }
    }

    #[test]
    fn single_affine_layer() {
        let p = linear_unit(2.0, 1.0);
        assert_eq!(p.predict(&[3.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn identical_rows_identical_outputs() {
        let p = init_network(&[4, 16, 3], Activation::Tanh, OutputHead::Linear, 11).unwrap();
        let x = Batch::from_rows(&[[0.3, -0.1, 2.0, 0.5], [0.3, -0.1, 2.0, 0.5]]).unwrap();
        let (y, _) = forward(&p, &x).unwrap();
        assert_eq!(y.row(0), y.row(1));
    }

    #[test]
    fn forward_rejects_width_mismatch() {
        let p = init_network(&[4, 8, 1], Activation::Relu, OutputHead::Linear, 0).unwrap();
        let err = forward(&p, &Batch::single(&[1.0, 2.0])).unwrap_err();
        assert_eq!(err, NnError::InputWidth { expected: 4, got: 2 });
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let p = init_network(&[3, 8, 2], Activation::Tanh, OutputHead::Linear, 5).unwrap();
        let x = Batch::from_rows(&[[1.0, 2.0, 3.0]]).unwrap();
        let (_, cache) = forward(&p, &x).unwrap();
        let g = backward(&p, &cache, &Batch::zeros(1, 2)).unwrap();
        assert!(g.is_zero());
        assert!(g.matches(&p));
    }

    #[test]
    fn tanh_derivative_at_zero() {
        // f(x) = tanh(w x) realised as [1,1,1] with identity output weight
        let mut p = MlpParams::zeros(&[1, 1, 1], Activation::Tanh, OutputHead::Linear).unwrap();
        p.layers[0].weights[0] = 0.0;
        p.layers[1].weights[0] = 1.0;
        let (_, cache) = forward(&p, &Batch::single(&[1.0])).unwrap();
        let g = backward(&p, &cache, &Batch::single(&[1.0])).unwrap();
        assert!((g.layers[0].weights[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let p = init_network(&[3, 8, 2], Activation::Tanh, OutputHead::Linear, 5).unwrap();
        let q = init_network(&[3, 4, 2], Activation::Tanh, OutputHead::Linear, 5).unwrap();
        let (_, cache) = forward(&q, &Batch::single(&[1.0, 2.0, 3.0])).unwrap();
        assert!(backward(&p, &cache, &Batch::zeros(1, 2)).is_err());
    }

    #[test]
    fn standard_normal_density_at_zero() {
        let lp = gaussian_log_density(&[0.0], &[0.0], &[0.0]);
        assert!((lp + 0.918_938_533_204_672_8).abs() < 1e-12);
    }

    #[test]
    fn degenerate_variance_sample_hits_mean() {
        let mut p = MlpParams::zeros(&[1, 2], Activation::Tanh, OutputHead::Gaussian).unwrap();
        p.layers[0].biases = vec![0.7, -1.3];
        p.log_std = vec![LOG_STD_MIN, LOG_STD_MIN];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (raw, _) = gaussian_head_sample(&p, &[0.0], &mut rng).unwrap();
        assert!((raw[0] - 0.7).abs() < 0.05);
        assert!((raw[1] + 1.3).abs() < 0.05);
    }

    #[test]
    fn sample_mean_matches_head_mean() {
        let mut p = MlpParams::zeros(&[1, 1], Activation::Tanh, OutputHead::Gaussian).unwrap();
        p.layers[0].biases[0] = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let mean = (0..n).map(|_| gaussian_head_sample(&p, &[0.0], &mut rng).unwrap().0[0]).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "sample mean {mean}");
    }

    #[test]
    fn sample_requires_gaussian_head() {
        let p = MlpParams::zeros(&[1, 1], Activation::Tanh, OutputHead::Linear).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(gaussian_head_sample(&p, &[0.0], &mut rng).unwrap_err(), NnError::NotGaussian);
    }

    #[test]
    fn sgd_examples() {
        let p = linear_unit(1.0, 0.0);
        let mut g = Gradient::zeros_like(&p);
        g.layers[0].weights[0] = 2.0;
        assert_eq!(sgd_apply(&p, &g, 0.0, Direction::Descend).unwrap(), p);
        let d = sgd_apply(&p, &g, 0.1, Direction::Descend).unwrap();
        assert!((d.layers[0].weights[0] - 0.8).abs() < 1e-15);
        let a = sgd_apply(&p, &g, 0.00005, Direction::Ascend).unwrap();
        assert!((a.layers[0].weights[0] - 1.0001).abs() < 1e-15);
    }

    #[test]
    fn sgd_rejects_non_finite() {
        let p = linear_unit(1.0, 0.0);
        let mut g = Gradient::zeros_like(&p);
        g.layers[0].biases[0] = f64::NAN;
        assert_eq!(sgd_apply(&p, &g, 0.1, Direction::Ascend), Err(NnError::NonFinite("gradient")));
    }

    #[test]
    fn sgd_keeps_log_std_clamped() {
        let p = MlpParams::zeros(&[1, 1], Activation::Tanh, OutputHead::Gaussian).unwrap();
        let mut g = Gradient::zeros_like(&p);
        g.log_std[0] = 100.0;
        assert_eq!(sgd_apply(&p, &g, 1.0, Direction::Ascend).unwrap().log_std[0], LOG_STD_MAX);
        assert_eq!(sgd_apply(&p, &g, 1.0, Direction::Descend).unwrap().log_std[0], LOG_STD_MIN);
    }

    #[test]
    fn ema_examples() {
        let cur = linear_unit(1.0, 0.0);
        let prop = linear_unit(1.5, 2.0);
        assert_eq!(ema_blend(&cur, &prop, 1.0).unwrap(), cur);
        let half = ema_blend(&cur, &prop, 0.5).unwrap();
        assert_eq!(half.layers[0].weights[0], 1.25);
        let tiny = ema_blend(&cur, &prop, 1e-12).unwrap();
        assert!((tiny.layers[0].weights[0] - 1.5).abs() < 1e-11);
        assert_eq!(ema_blend(&cur, &prop, 0.0), Err(NnError::Tau(0.0)));
        assert_eq!(ema_blend(&cur, &prop, 1.5), Err(NnError::Tau(1.5)));
    }

    #[test]
    fn snapshot_round_trip_is_lossless() {
        let p = init_network(&[5, 7, 3], Activation::Tanh, OutputHead::Gaussian, 9).unwrap();
        let rows = p.to_snapshot_rows();
        assert_eq!(rows.len(), p.param_count());
        let q = MlpParams::from_snapshot_rows(&[5, 7, 3], Activation::Tanh, OutputHead::Gaussian, &rows).unwrap();
        assert_eq!(p, q);
        assert!(MlpParams::from_snapshot_rows(&[5, 7, 3], Activation::Tanh, OutputHead::Gaussian, &rows[1..]).is_err());
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut p = init_network(&[2, 3, 1], Activation::Tanh, OutputHead::Linear, 0).unwrap();
        let before = p.clone();
        let mut g = Gradient::zeros_like(&p);
        for v in g.values_mut() {
            *v = 2.5;
        }
        let mut opt = Optimizer::new(OptimizerSpec::adam(0.01), &p);
        opt.step(&mut p, &g, Direction::Descend).unwrap();
        for (a, b) in p.values().zip(before.values()) {
            assert!((b - a - 0.01).abs() < 1e-6);
        }
        let mut sgd = Optimizer::new(OptimizerSpec::Sgd { learning_rate: 0.1 }, &p);
        let q = p.clone();
        sgd.step(&mut p, &g, Direction::Ascend).unwrap();
        assert!((p.values().next().unwrap() - q.values().next().unwrap() - 0.25).abs() < 1e-12);
    }
}
