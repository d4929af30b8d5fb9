//! Minimal dense feed-forward network with analytically differentiated layers.
//!
//! The model is an MLP encoder `f` mapping inputs to an R-dimensional
//! representation, followed by two linear heads over that representation:
//! a K-output expert head (one independent sigmoid classifier per subgroup)
//! and a K-output clustering head (softmax). The backward pass is derived by
//! hand for the fixed architecture and checked against central finite
//! differences by [`grad_check`].
//!
//! Numerical conventions: logits are clamped to `[-LOGIT_CLAMP, LOGIT_CLAMP]`
//! before sigmoid/softmax so that no downstream log sees an exact 0 or 1, and
//! softmax subtracts the row max before exponentiating.

use ndarray::{Array1, Array2, Axis};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, UcslError};
use crate::loss::{clustering_loss, moe_loss, LossWeights, PROB_FLOOR};

/// Magnitude bound applied to head logits before sigmoid/softmax.
pub const LOGIT_CLAMP: f64 = 30.0;

/// Element-wise nonlinearity used between encoder layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative with respect to the pre-activation. `relu'(0) = 0`.
    #[inline]
    fn grad(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(UcslError::InvalidConfig(format!(
                "unknown activation '{other}', expected relu or tanh"
            ))),
        }
    }
}

/// Architecture and initialization settings for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub repr_dim: usize,
    pub k_subgroups: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl ModelConfig {
    /// Full constructor; validates every invariant.
    pub fn new(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        repr_dim: usize,
        k_subgroups: usize,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        let cfg = Self { input_dim, hidden_dims, repr_dim, k_subgroups, activation, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Convenience constructor with the default architecture
    /// (hidden `[64, 64]`, representation size 32, relu).
    pub fn with_defaults(input_dim: usize, k_subgroups: usize, seed: u64) -> Result<Self> {
        Self::new(input_dim, vec![64, 64], 32, k_subgroups, Activation::Relu, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(UcslError::InvalidConfig("input_dim must be >= 1".into()));
        }
        if self.repr_dim == 0 {
            return Err(UcslError::InvalidConfig("repr_dim must be >= 1".into()));
        }
        if self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(UcslError::InvalidConfig("hidden dims must be >= 1".into()));
        }
        if self.k_subgroups < 2 {
            return Err(UcslError::InvalidConfig(format!(
                "k_subgroups must be >= 2, got {}",
                self.k_subgroups
            )));
        }
        Ok(())
    }

    /// Encoder layer widths, input first, representation last.
    fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.repr_dim);
        dims
    }
}

/// One dense affine map `z = x W^T + b`, weights shaped `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl DenseLayer {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self { w: Array2::zeros((out_dim, in_dim)), b: Array1::zeros(out_dim) }
    }
}

/// All trainable parameters: encoder layers plus the two K-row heads.
///
/// The expert head row `k` is the binary classifier for subgroup `k`; the
/// clustering head rows feed a row-wise softmax. The activation travels with
/// the weights so the parameter set fully determines the function.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: Vec<DenseLayer>,
    pub expert_head: DenseLayer,
    pub cluster_head: DenseLayer,
    pub activation: Activation,
}

/// Same shape tree as [`ModelParams`], holding partial derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub encoder: Vec<DenseLayer>,
    pub expert_head: DenseLayer,
    pub cluster_head: DenseLayer,
}

impl ModelParams {
    pub fn input_dim(&self) -> usize {
        self.encoder[0].w.ncols()
    }

    pub fn repr_dim(&self) -> usize {
        self.encoder.last().expect("encoder has at least one layer").w.nrows()
    }

    pub fn k_subgroups(&self) -> usize {
        self.expert_head.w.nrows()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().into_iter().all(|(w, b)| {
            w.iter().all(|v| v.is_finite()) && b.iter().all(|v| v.is_finite())
        })
    }

    fn tensors(&self) -> Vec<(&Array2<f64>, &Array1<f64>)> {
        let mut out: Vec<_> = self.encoder.iter().map(|l| (&l.w, &l.b)).collect();
        out.push((&self.expert_head.w, &self.expert_head.b));
        out.push((&self.cluster_head.w, &self.cluster_head.b));
        out
    }

    /// Every dense layer in flatten order: encoder layers, expert head,
    /// cluster head.
    pub fn layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.encoder.iter().chain([&self.expert_head, &self.cluster_head])
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut DenseLayer> {
        self.encoder.iter_mut().chain([&mut self.expert_head, &mut self.cluster_head])
    }

    /// Zero-valued gradient tree matching this parameter set.
    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            encoder: self
                .encoder
                .iter()
                .map(|l| DenseLayer::zeros(l.w.nrows(), l.w.ncols()))
                .collect(),
            expert_head: DenseLayer::zeros(self.expert_head.w.nrows(), self.expert_head.w.ncols()),
            cluster_head: DenseLayer::zeros(self.cluster_head.w.nrows(), self.cluster_head.w.ncols()),
        }
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.tensors().into_iter().map(|(w, b)| w.len() + b.len()).sum()
    }

    /// All parameters in a fixed order: encoder layers first (weights
    /// row-major, then bias), then expert head, then cluster head.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.tensors() {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    /// Inverse of [`ModelParams::flatten`]; shapes are taken from `self`.
    pub fn assign_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(UcslError::ShapeMismatch(format!(
                "flat vector has {} entries, model has {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut idx = 0;
        let mut layers: Vec<&mut DenseLayer> = self.encoder.iter_mut().collect();
        layers.push(&mut self.expert_head);
        layers.push(&mut self.cluster_head);
        for layer in layers {
            for v in layer.w.iter_mut() {
                *v = flat[idx];
                idx += 1;
            }
            for v in layer.b.iter_mut() {
                *v = flat[idx];
                idx += 1;
            }
        }
        Ok(())
    }
}

impl Gradients {
    pub fn layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.encoder.iter().chain([&self.expert_head, &self.cluster_head])
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut DenseLayer> {
        self.encoder.iter_mut().chain([&mut self.expert_head, &mut self.cluster_head])
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in self.layers() {
            out.extend(layer.w.iter().copied());
            out.extend(layer.b.iter().copied());
        }
        out
    }

    /// In-place `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self
            .encoder
            .iter_mut()
            .chain([&mut self.expert_head, &mut self.cluster_head])
            .zip(other.encoder.iter().chain([&other.expert_head, &other.cluster_head]))
        {
            a.w.scaled_add(scale, &b.w);
            a.b.scaled_add(scale, &b.b);
        }
    }
}

fn init_dense(rng: &mut ChaCha8Rng, out_dim: usize, in_dim: usize) -> DenseLayer {
    let limit = 1.0 / (in_dim as f64).sqrt();
    let dist = Uniform::new(-limit, limit).expect("valid uniform range");
    let w = Array2::from_shape_fn((out_dim, in_dim), |_| dist.sample(rng));
    DenseLayer { w, b: Array1::zeros(out_dim) }
}

/// Draws fresh parameters: weights uniform in `+-1/sqrt(fan_in)`, biases zero.
/// Deterministic for a given `config.seed`.
pub fn init_params(config: &ModelConfig) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dims = config.layer_dims();
    let encoder = dims
        .windows(2)
        .map(|pair| init_dense(&mut rng, pair[1], pair[0]))
        .collect();
    let expert_head = init_dense(&mut rng, config.k_subgroups, config.repr_dim);
    let cluster_head = init_dense(&mut rng, config.k_subgroups, config.repr_dim);
    ModelParams { encoder, expert_head, cluster_head, activation: config.activation }
}

struct ForwardCache {
    /// `activations[0]` is the input batch; `activations[L]` the representation.
    activations: Vec<Array2<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Array2<f64>>,
}

fn affine(layer: &DenseLayer, x: &Array2<f64>) -> Array2<f64> {
    x.dot(&layer.w.t()) + &layer.b
}

fn forward(params: &ModelParams, batch: &Array2<f64>) -> Result<ForwardCache> {
    if batch.ncols() != params.input_dim() {
        return Err(UcslError::ShapeMismatch(format!(
            "batch width {} != input_dim {}",
            batch.ncols(),
            params.input_dim()
        )));
    }
    let n_layers = params.encoder.len();
    let mut activations = Vec::with_capacity(n_layers + 1);
    let mut pre = Vec::with_capacity(n_layers);
    activations.push(batch.clone());
    for (l, layer) in params.encoder.iter().enumerate() {
        let z = affine(layer, &activations[l]);
        let a = if l + 1 < n_layers {
            z.mapv(|v| params.activation.apply(v))
        } else {
            z.clone() // final projection is linear
        };
        pre.push(z);
        activations.push(a);
    }
    Ok(ForwardCache { activations, pre })
}

/// Encodes a batch: row `i` becomes `f(x_i)` in representation space.
pub fn encode(params: &ModelParams, batch: &Array2<f64>) -> Result<Array2<f64>> {
    let cache = forward(params, batch)?;
    Ok(cache.activations.into_iter().next_back().expect("nonempty"))
}

fn check_repr_width(params: &ModelParams, reprs: &Array2<f64>) -> Result<()> {
    if reprs.ncols() != params.repr_dim() {
        return Err(UcslError::ShapeMismatch(format!(
            "representation width {} != repr_dim {}",
            reprs.ncols(),
            params.repr_dim()
        )));
    }
    Ok(())
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn clamp_logits(raw: &Array2<f64>) -> Array2<f64> {
    raw.mapv(|v| v.clamp(-LOGIT_CLAMP, LOGIT_CLAMP))
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Per-expert disease probabilities `sigmoid(expert head)`, one column per
/// subgroup. Rows are independent Bernoullis, not normalized.
pub fn expert_probs(params: &ModelParams, reprs: &Array2<f64>) -> Result<Array2<f64>> {
    check_repr_width(params, reprs)?;
    let logits = clamp_logits(&affine(&params.expert_head, reprs));
    Ok(logits.mapv(sigmoid))
}

/// Row-stochastic subgroup probabilities `softmax(clustering head)`.
pub fn cluster_probs(params: &ModelParams, reprs: &Array2<f64>) -> Result<Array2<f64>> {
    check_repr_width(params, reprs)?;
    let logits = clamp_logits(&affine(&params.cluster_head, reprs));
    Ok(softmax_rows(&logits))
}

struct HeadOutputs {
    expert_p: Array2<f64>,
    cluster_p: Array2<f64>,
    expert_raw: Array2<f64>,
    cluster_raw: Array2<f64>,
}

fn head_outputs(params: &ModelParams, reprs: &Array2<f64>) -> HeadOutputs {
    let expert_raw = affine(&params.expert_head, reprs);
    let cluster_raw = affine(&params.cluster_head, reprs);
    let expert_p = clamp_logits(&expert_raw).mapv(sigmoid);
    let cluster_p = softmax_rows(&clamp_logits(&cluster_raw));
    HeadOutputs { expert_p, cluster_p, expert_raw, cluster_raw }
}

fn validate_backward_inputs(
    params: &ModelParams,
    batch: &Array2<f64>,
    labels: &[i8],
    q: &Array2<f64>,
    weights: LossWeights,
) -> Result<()> {
    weights.validate()?;
    let b = batch.nrows();
    let k = params.k_subgroups();
    if labels.len() != b || q.nrows() != b || q.ncols() != k {
        return Err(UcslError::ShapeMismatch(format!(
            "backward: batch {b} rows, labels {}, q {:?}, K = {k}",
            labels.len(),
            q.dim()
        )));
    }
    Ok(())
}

/// Value of `w_moe * L_moe + w_clu * L_clu` at the given parameters,
/// with `q` treated as a constant.
pub fn total_loss(
    params: &ModelParams,
    batch: &Array2<f64>,
    labels: &[i8],
    q: &Array2<f64>,
    weights: LossWeights,
) -> Result<f64> {
    validate_backward_inputs(params, batch, labels, q, weights)?;
    let cache = forward(params, batch)?;
    let reprs = cache.activations.last().expect("nonempty");
    let heads = head_outputs(params, reprs);
    let l_moe = moe_loss(&heads.expert_p, labels, q)?;
    let l_clu = clustering_loss(&heads.cluster_p, q)?;
    Ok(weights.moe * l_moe + weights.clustering * l_clu)
}

/// Exact analytic gradient of the total loss with respect to every parameter,
/// plus the loss value. Gradients flow into the encoder from both heads.
pub fn backward(
    params: &ModelParams,
    batch: &Array2<f64>,
    labels: &[i8],
    q: &Array2<f64>,
    weights: LossWeights,
) -> Result<(Gradients, f64)> {
    validate_backward_inputs(params, batch, labels, q, weights)?;
    let cache = forward(params, batch)?;
    let reprs = cache.activations.last().expect("nonempty").clone();
    let heads = head_outputs(params, &reprs);
    let b = batch.nrows();
    let k = params.k_subgroups();

    let l_moe = moe_loss(&heads.expert_p, labels, q)?;
    let l_clu = clustering_loss(&heads.cluster_p, q)?;
    let total = weights.moe * l_moe + weights.clustering * l_clu;
    if !total.is_finite() {
        let term = if !l_moe.is_finite() { "mixture-of-experts" } else { "clustering" };
        return Err(UcslError::Numeric(format!("{term} loss term is non-finite")));
    }

    let inv_b = 1.0 / b.max(1) as f64;

    // d L / d expert logits: (w_moe / B) * q * (p - y~), zeroed where the
    // clamp is active.
    let mut d_expert = Array2::zeros((b, k));
    for i in 0..b {
        let target = if labels[i] == 1 { 1.0 } else { 0.0 };
        for j in 0..k {
            if heads.expert_raw[[i, j]].abs() < LOGIT_CLAMP {
                d_expert[[i, j]] =
                    weights.moe * inv_b * q[[i, j]] * (heads.expert_p[[i, j]] - target);
            }
        }
    }

    // d L / d cluster logits. With I_k = [s_k > PROB_FLOOR] (the flooring in
    // the loss), the softmax Jacobian gives
    //   (w_clu / B) * (s_m * sum_k q_k I_k - q_m I_m)
    // which reduces to the familiar (s - q) when no entry is floored.
    let mut d_cluster = Array2::zeros((b, k));
    for i in 0..b {
        let mut active_q = 0.0;
        for j in 0..k {
            if heads.cluster_p[[i, j]] > PROB_FLOOR {
                active_q += q[[i, j]];
            }
        }
        for j in 0..k {
            if heads.cluster_raw[[i, j]].abs() < LOGIT_CLAMP {
                let s = heads.cluster_p[[i, j]];
                let own = if s > PROB_FLOOR { q[[i, j]] } else { 0.0 };
                d_cluster[[i, j]] = weights.clustering * inv_b * (s * active_q - own);
            }
        }
    }

    let mut grads = params.zero_gradients();
    grads.expert_head.w = d_expert.t().dot(&reprs);
    grads.expert_head.b = d_expert.sum_axis(Axis(0));
    grads.cluster_head.w = d_cluster.t().dot(&reprs);
    grads.cluster_head.b = d_cluster.sum_axis(Axis(0));

    // Backpropagate into the encoder from both heads.
    let mut d_act = d_expert.dot(&params.expert_head.w) + d_cluster.dot(&params.cluster_head.w);
    let n_layers = params.encoder.len();
    for l in (0..n_layers).rev() {
        let d_pre = if l + 1 < n_layers {
            let mut d = d_act;
            d.zip_mut_with(&cache.pre[l], |g, &z| *g *= params.activation.grad(z));
            d
        } else {
            d_act // last layer is linear
        };
        grads.encoder[l].w = d_pre.t().dot(&cache.activations[l]);
        grads.encoder[l].b = d_pre.sum_axis(Axis(0));
        d_act = d_pre.dot(&params.encoder[l].w);
    }

    Ok((grads, total))
}

/// Compares [`backward`]'s analytic gradient against central finite
/// differences over every parameter. Returns the maximum relative error,
/// with denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check(
    params: &ModelParams,
    batch: &Array2<f64>,
    labels: &[i8],
    q: &Array2<f64>,
    weights: LossWeights,
    step: f64,
) -> Result<f64> {
    if !(1e-6..=1e-3).contains(&step) {
        return Err(UcslError::ContractViolation(format!(
            "grad_check step {step} outside [1e-6, 1e-3]"
        )));
    }
    let (grads, _) = backward(params, batch, labels, q, weights)?;
    let analytic = grads.flatten();
    let base = params.flatten();
    let mut scratch = params.clone();
    let mut max_rel: f64 = 0.0;
    for i in 0..base.len() {
        let mut flat = base.clone();
        flat[i] = base[i] + step;
        scratch.assign_from_flat(&flat)?;
        let plus = total_loss(&scratch, batch, labels, q, weights)?;
        flat[i] = base[i] - step;
        scratch.assign_from_flat(&flat)?;
        let minus = total_loss(&scratch, batch, labels, q, weights)?;
        let numeric = (plus - minus) / (2.0 * step);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        max_rel = max_rel.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(max_rel)
}
