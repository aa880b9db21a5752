//! Dense policy/value network with manual backprop.
//!
//! A network is a stack of fully connected hidden layers followed by two
//! linear heads: `n_actions` policy logits and one scalar value. The
//! activations of a designated hidden layer (by default the layer feeding
//! the heads) are exposed as the agent's latent representation.
//!
//! Parameters are stored as `f64` values that are always exactly
//! representable in `f32`; [`init_params`] and [`adam::adam_step`] round
//! through `f32`, which makes the on-disk `f32` container a bit-exact
//! round trip. All arithmetic runs in `f64`.
//!
//! The same tensor machinery backs the bias-free encoder used by the
//! anomaly detector ([`EncoderSpec`], [`encoder_forward`]).

mod adam;
mod io;

pub use adam::{adam_step, AdamParams, AdamState};
pub use io::{load_params, load_params_file, save_params, save_params_file, NetKind, WeightError};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the post-activation value.
    fn derivative_from_post(self, post: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - post * post,
            Activation::Relu => {
                if post > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Architecture of a policy/value network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub n_actions: usize,
    /// Index of the hidden layer whose activations are the latent
    /// representation; defaults to the layer feeding the heads.
    pub latent_layer: usize,
}

impl NetSpec {
    /// Default agent architecture over an observation of `input_dim`.
    pub fn policy_default(input_dim: usize, n_actions: usize) -> NetSpec {
        NetSpec {
            input_dim,
            hidden: vec![128, 64],
            activation: Activation::Tanh,
            n_actions,
            latent_layer: 1,
        }
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        if self.input_dim == 0 || self.n_actions == 0 {
            return Err(NeuralError::InvalidSpec("zero input or action width".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(NeuralError::InvalidSpec("hidden widths must be >= 1".into()));
        }
        if self.latent_layer >= self.hidden.len() {
            return Err(NeuralError::InvalidSpec(format!(
                "latent layer {} out of range ({} hidden layers)",
                self.latent_layer,
                self.hidden.len()
            )));
        }
        Ok(())
    }

    /// Latent vector width.
    pub fn latent_dim(&self) -> usize {
        self.hidden[self.latent_layer]
    }

    /// Shapes of all tensors in parameter order:
    /// `[w0, b0, w1, b1, ..., w_policy, b_policy, w_value, b_value]`.
    pub fn tensor_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        let mut prev = self.input_dim;
        for &h in &self.hidden {
            shapes.push((h, prev));
            shapes.push((h, 1));
            prev = h;
        }
        shapes.push((self.n_actions, prev));
        shapes.push((self.n_actions, 1));
        shapes.push((1, prev));
        shapes.push((1, 1));
        shapes
    }
}

/// Bias-free encoder architecture: relu hidden layers, linear output,
/// no bias terms anywhere.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub out_dim: usize,
}

impl EncoderSpec {
    pub fn tensor_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        let mut prev = self.input_dim;
        for &h in &self.hidden {
            shapes.push((h, prev));
            prev = h;
        }
        shapes.push((self.out_dim, prev));
        shapes
    }
}

/// Rectangular `f64` tensor, row-major. Biases use `cols == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Tensor {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }
}

/// Ordered parameter tensors matching a spec's `tensor_shapes`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn zeros_like_shapes(shapes: &[(usize, usize)]) -> ParamSet {
        ParamSet {
            tensors: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
        }
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.tensors.iter().map(|t| (t.rows, t.cols)).collect()
    }

    /// Elementwise maximum absolute value, for blow-up diagnostics.
    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data.iter())
            .fold(0.0f64, |m, &x| m.max(x.abs()))
    }
}

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("input dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("non-finite gradient in tensor {tensor}")]
    NonFiniteGradient { tensor: usize },
}

/// Forward outputs: raw policy logits, state value, latent activations.
#[derive(Debug, Clone)]
pub struct ForwardResult {
    pub logits: Vec<f64>,
    pub value: f64,
    pub latent: Vec<f64>,
}

/// Per-sample activations retained for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input followed by each hidden layer's post-activation.
    posts: Vec<Vec<f64>>,
}

/// Loss gradient with respect to the network outputs for one sample.
#[derive(Debug, Clone)]
pub struct HeadGrad {
    pub d_logits: Vec<f64>,
    pub d_value: f64,
}

/// Draws initial parameters: weights uniform in
/// `[-sqrt(6/fan_in), sqrt(6/fan_in)]`, biases zero. Deterministic in `seed`.
pub fn init_params(spec: &NetSpec, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = Vec::new();
    for (rows, cols) in spec.tensor_shapes() {
        if cols == 1 {
            tensors.push(Tensor::zeros(rows, cols));
        } else {
            tensors.push(init_weight(rows, cols, &mut rng));
        }
    }
    ParamSet { tensors }
}

/// Bias-free encoder initialization with the same fan-in scheme.
pub fn init_encoder_params(spec: &EncoderSpec, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = spec
        .tensor_shapes()
        .into_iter()
        .map(|(rows, cols)| init_weight(rows, cols, &mut rng))
        .collect();
    ParamSet { tensors }
}

fn init_weight(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (6.0 / cols as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| (rng.gen_range(-bound..=bound) as f32) as f64)
        .collect();
    Tensor { rows, cols, data }
}

fn matvec(w: &Tensor, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.cols, x.len());
    debug_assert_eq!(w.rows, out.len());
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w.data[r * w.cols..(r + 1) * w.cols];
        let mut acc = 0.0;
        for (wv, xv) in row.iter().zip(x.iter()) {
            acc += wv * xv;
        }
        *o = acc;
    }
}

/// `out[c] += sum_r w[r][c] * d[r]` — transposed matvec for backprop.
fn matvec_t(w: &Tensor, d: &[f64], out: &mut [f64]) {
    for (r, dv) in d.iter().enumerate() {
        let row = &w.data[r * w.cols..(r + 1) * w.cols];
        for (o, wv) in out.iter_mut().zip(row.iter()) {
            *o += wv * dv;
        }
    }
}

fn check_input(expected: usize, got: usize) -> Result<(), NeuralError> {
    if expected != got {
        return Err(NeuralError::DimMismatch { expected, got });
    }
    Ok(())
}

/// Pure forward pass.
pub fn forward(spec: &NetSpec, params: &ParamSet, obs: &[f32]) -> Result<ForwardResult, NeuralError> {
    forward_traced(spec, params, obs).map(|(r, _)| r)
}

/// Forward pass that also returns the activations needed by [`backward`].
pub fn forward_traced(
    spec: &NetSpec,
    params: &ParamSet,
    obs: &[f32],
) -> Result<(ForwardResult, ForwardTrace), NeuralError> {
    check_input(spec.input_dim, obs.len())?;
    let mut posts: Vec<Vec<f64>> = Vec::with_capacity(spec.hidden.len() + 1);
    posts.push(obs.iter().map(|&v| v as f64).collect());

    for (i, &width) in spec.hidden.iter().enumerate() {
        let w = &params.tensors[2 * i];
        let b = &params.tensors[2 * i + 1];
        let mut z = vec![0.0; width];
        matvec(w, posts.last().unwrap(), &mut z);
        for (zv, bv) in z.iter_mut().zip(b.data.iter()) {
            *zv = spec.activation.apply(*zv + bv);
        }
        posts.push(z);
    }

    let h = posts.last().unwrap();
    let base = 2 * spec.hidden.len();
    let (wp, bp) = (&params.tensors[base], &params.tensors[base + 1]);
    let (wv, bv) = (&params.tensors[base + 2], &params.tensors[base + 3]);
    let mut logits = vec![0.0; spec.n_actions];
    matvec(wp, h, &mut logits);
    for (l, b) in logits.iter_mut().zip(bp.data.iter()) {
        *l += b;
    }
    let mut value = [0.0];
    matvec(wv, h, &mut value);
    let value = value[0] + bv.data[0];

    let latent = posts[spec.latent_layer + 1].clone();
    Ok((
        ForwardResult {
            logits,
            value,
            latent,
        },
        ForwardTrace { posts },
    ))
}

/// Reverse-mode gradients of a scalar loss, summed over the batch. The
/// per-sample loss gradient with respect to the heads is supplied in
/// `head_grads`.
pub fn backward(
    spec: &NetSpec,
    params: &ParamSet,
    traces: &[ForwardTrace],
    head_grads: &[HeadGrad],
) -> Result<ParamSet, NeuralError> {
    assert_eq!(traces.len(), head_grads.len());
    let mut grads = ParamSet::zeros_like_shapes(&spec.tensor_shapes());
    let base = 2 * spec.hidden.len();

    for (trace, hg) in traces.iter().zip(head_grads.iter()) {
        let h = trace.posts.last().unwrap();

        // Heads.
        accumulate_outer(&mut grads.tensors[base], &hg.d_logits, h);
        accumulate_vec(&mut grads.tensors[base + 1], &hg.d_logits);
        accumulate_outer(&mut grads.tensors[base + 2], &[hg.d_value], h);
        accumulate_vec(&mut grads.tensors[base + 3], &[hg.d_value]);

        // Delta entering the hidden stack.
        let mut delta = vec![0.0; h.len()];
        matvec_t(&params.tensors[base], &hg.d_logits, &mut delta);
        matvec_t(&params.tensors[base + 2], &[hg.d_value], &mut delta);

        for i in (0..spec.hidden.len()).rev() {
            let post = &trace.posts[i + 1];
            for (d, p) in delta.iter_mut().zip(post.iter()) {
                *d *= spec.activation.derivative_from_post(*p);
            }
            let input = &trace.posts[i];
            accumulate_outer(&mut grads.tensors[2 * i], &delta, input);
            accumulate_vec(&mut grads.tensors[2 * i + 1], &delta);
            if i > 0 {
                let mut prev = vec![0.0; input.len()];
                matvec_t(&params.tensors[2 * i], &delta, &mut prev);
                delta = prev;
            }
        }
    }

    for (idx, t) in grads.tensors.iter().enumerate() {
        if t.data.iter().any(|v| !v.is_finite()) {
            return Err(NeuralError::NonFiniteGradient { tensor: idx });
        }
    }
    Ok(grads)
}

fn accumulate_outer(grad: &mut Tensor, d: &[f64], input: &[f64]) {
    debug_assert_eq!(grad.rows, d.len());
    debug_assert_eq!(grad.cols, input.len());
    for (r, dv) in d.iter().enumerate() {
        let row = &mut grad.data[r * grad.cols..(r + 1) * grad.cols];
        for (g, iv) in row.iter_mut().zip(input.iter()) {
            *g += dv * iv;
        }
    }
}

fn accumulate_vec(grad: &mut Tensor, d: &[f64]) {
    for (g, dv) in grad.data.iter_mut().zip(d.iter()) {
        *g += dv;
    }
}

/// Bias-free relu encoder forward; output layer is linear.
pub fn encoder_forward(spec: &EncoderSpec, params: &ParamSet, x: &[f32]) -> Result<Vec<f64>, NeuralError> {
    encoder_forward_traced(spec, params, x).map(|(out, _)| out)
}

pub fn encoder_forward_traced(
    spec: &EncoderSpec,
    params: &ParamSet,
    x: &[f32],
) -> Result<(Vec<f64>, ForwardTrace), NeuralError> {
    check_input(spec.input_dim, x.len())?;
    let mut posts: Vec<Vec<f64>> = Vec::with_capacity(spec.hidden.len() + 1);
    posts.push(x.iter().map(|&v| v as f64).collect());
    for (i, &width) in spec.hidden.iter().enumerate() {
        let mut z = vec![0.0; width];
        matvec(&params.tensors[i], posts.last().unwrap(), &mut z);
        for zv in z.iter_mut() {
            *zv = Activation::Relu.apply(*zv);
        }
        posts.push(z);
    }
    let mut out = vec![0.0; spec.out_dim];
    matvec(params.tensors.last().unwrap(), posts.last().unwrap(), &mut out);
    Ok((out, ForwardTrace { posts }))
}

/// Gradients of a scalar loss through the encoder, summed over the batch.
/// `d_outs[k]` is the loss gradient at the embedding of sample `k`.
pub fn encoder_backward(
    spec: &EncoderSpec,
    params: &ParamSet,
    traces: &[ForwardTrace],
    d_outs: &[Vec<f64>],
) -> Result<ParamSet, NeuralError> {
    assert_eq!(traces.len(), d_outs.len());
    let mut grads = ParamSet::zeros_like_shapes(&spec.tensor_shapes());
    let last = spec.hidden.len();
    for (trace, d_out) in traces.iter().zip(d_outs.iter()) {
        accumulate_outer(&mut grads.tensors[last], d_out, trace.posts.last().unwrap());
        let mut delta = vec![0.0; trace.posts.last().unwrap().len()];
        matvec_t(&params.tensors[last], d_out, &mut delta);
        for i in (0..last).rev() {
            let post = &trace.posts[i + 1];
            for (d, p) in delta.iter_mut().zip(post.iter()) {
                *d *= Activation::Relu.derivative_from_post(*p);
            }
            let input = &trace.posts[i];
            accumulate_outer(&mut grads.tensors[i], &delta, input);
            if i > 0 {
                let mut prev = vec![0.0; input.len()];
                matvec_t(&params.tensors[i], &delta, &mut prev);
                delta = prev;
            }
        }
    }
    for (idx, t) in grads.tensors.iter().enumerate() {
        if t.data.iter().any(|v| !v.is_finite()) {
            return Err(NeuralError::NonFiniteGradient { tensor: idx });
        }
    }
    Ok(grads)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|&l| l - lse).collect()
}

/// A trained agent: architecture plus frozen parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySnapshot {
    pub id: String,
    pub spec: NetSpec,
    pub params: ParamSet,
}

impl PolicySnapshot {
    pub fn new(id: impl Into<String>, spec: NetSpec, params: ParamSet) -> PolicySnapshot {
        PolicySnapshot {
            id: id.into(),
            spec,
            params,
        }
    }

    pub fn forward(&self, obs: &[f32]) -> Result<ForwardResult, NeuralError> {
        forward(&self.spec, &self.params, obs)
    }

    /// Samples an action from the softmax policy, consuming one draw from
    /// `rng`. Returns the action index, its log-probability, and the forward
    /// outputs.
    pub fn act<R: rand::Rng>(
        &self,
        obs: &[f32],
        rng: &mut R,
    ) -> Result<(usize, f64, ForwardResult), NeuralError> {
        let out = self.forward(obs)?;
        let logp = log_softmax(&out.logits);
        let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        let action = crate::rng::sample_categorical(&probs, rng);
        Ok((action, logp[action], out))
    }

    /// Deterministic argmax action.
    pub fn act_argmax(&self, obs: &[f32]) -> Result<(usize, ForwardResult), NeuralError> {
        let out = self.forward(obs)?;
        let action = out
            .logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        Ok((action, out))
    }
}
