//! The Expectation-Maximization training driver.
//!
//! Each epoch alternates an M-step (gradient updates of encoder and heads
//! against the frozen pseudo-labels) with an E-step (fresh pseudo-labels from
//! SK-regularized soft K-means on the positive representations, re-identified
//! against the previous epoch's centroids). The lower bound on the joint
//! conditional log-likelihood is recorded after every E-step; in `full_batch`
//! mode the M-step is a single backtracking line-searched gradient step, so
//! the bound cannot decrease during M-steps.

use ndarray::{Array2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::clustering::{
    assemble_pseudo_labels, interpolate_soft_hard, positive_indices, soft_kmeans_sk, Centroids,
    PseudoLabelMatrix, SkConfig,
};
use crate::data::LabeledDataset;
use crate::error::{Result, UcslError};
use crate::loss::{clustering_loss, moe_loss, LossWeights, PROB_FLOOR};
use crate::nn::{
    backward, cluster_probs, encode, expert_probs, init_params, total_loss, Gradients,
    ModelConfig, ModelParams,
};
use crate::reident::{reidentify, Permutation};
use crate::seeds::derive;

const SEED_TAG_ESTEP: u64 = 0x45;
const SEED_TAG_SHUFFLE: u64 = 0x53;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    SgdMomentum,
    Adam,
}

impl Optimizer {
    pub fn name(self) -> &'static str {
        match self {
            Optimizer::SgdMomentum => "sgd_momentum",
            Optimizer::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sgd_momentum" => Ok(Optimizer::SgdMomentum),
            "adam" => Ok(Optimizer::Adam),
            other => Err(UcslError::InvalidConfig(format!(
                "unknown optimizer '{other}', expected sgd_momentum or adam"
            ))),
        }
    }
}

/// Which training procedure produced a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    DeepUcsl,
    BceKmeans,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::DeepUcsl => "deep-ucsl",
            TrainMode::BceKmeans => "bce-kmeans",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "deep-ucsl" => Ok(TrainMode::DeepUcsl),
            "bce-kmeans" => Ok(TrainMode::BceKmeans),
            other => Err(UcslError::InvalidConfig(format!(
                "unknown mode '{other}', expected deep-ucsl or bce-kmeans"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Number of (M-step, E-step) epochs; 0 returns the initialized model.
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Used by `sgd_momentum` only.
    pub momentum: f64,
    pub optimizer: Optimizer,
    pub weights: LossWeights,
    pub sk: SkConfig,
    /// Single line-searched full-batch step per M-step instead of minibatch
    /// updates; guarantees the loss cannot increase.
    pub full_batch: bool,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(epochs: usize, seed: u64) -> Self {
        Self {
            epochs,
            batch_size: 64,
            learning_rate: 0.01,
            momentum: 0.9,
            optimizer: Optimizer::Adam,
            weights: LossWeights::default(),
            sk: SkConfig::default(),
            full_batch: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(UcslError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(UcslError::InvalidConfig(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(UcslError::InvalidConfig(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        self.weights.validate()?;
        self.sk.validate()?;
        Ok(())
    }

    /// One-line summary stored in checkpoints.
    pub fn digest(&self) -> String {
        format!(
            "epochs={};batch_size={};learning_rate={};momentum={};optimizer={};w_moe={};w_clu={};sk_epsilon={};sk_iters={};kmeans_iters={};full_batch={};seed={}",
            self.epochs,
            self.batch_size,
            self.learning_rate,
            self.momentum,
            self.optimizer.name(),
            self.weights.moe,
            self.weights.clustering,
            self.sk.epsilon,
            self.sk.n_sk_iters,
            self.sk.n_kmeans_iters,
            self.full_batch,
            self.seed
        )
    }
}

/// Optimizer moment buffers; `m` doubles as the SGD velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    m: Gradients,
    v: Gradients,
    step: usize,
}

impl OptState {
    fn new(params: &ModelParams) -> Self {
        Self { m: params.zero_gradients(), v: params.zero_gradients(), step: 0 }
    }
}

/// Everything the EM loop carries between steps. The pseudo-labels and
/// centroids always describe the same epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EmState {
    pub params: ModelParams,
    pub centroids: Centroids,
    pub q: PseudoLabelMatrix,
    pub epoch: usize,
    opt: OptState,
}

/// One completed epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub elbo: f64,
    pub moe_loss: f64,
    pub clustering_loss: f64,
    pub permutation: Permutation,
    pub equidistance_ratio: f64,
    pub hardness: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    /// Fixed CSV schema:
    /// `epoch,elbo,moe_loss,clustering_loss,equidistance_ratio,hardness`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("epoch,elbo,moe_loss,clustering_loss,equidistance_ratio,hardness\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch, r.elbo, r.moe_loss, r.clustering_loss, r.equidistance_ratio, r.hardness
            ));
        }
        out
    }
}

/// Output of a full training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub centroids: Centroids,
    pub history: TrainHistory,
}

/// Lower bound on the joint conditional log-likelihood over the full dataset
/// (no batching, no averaging):
/// `sum_i sum_k q_ik log p(y_i | x_i, c_i = k) - sum_i KL(q_i || p_cluster(. | x_i))`.
pub fn elbo_lower_bound(
    params: &ModelParams,
    dataset: &LabeledDataset,
    q: &PseudoLabelMatrix,
) -> Result<f64> {
    let (n, k) = q.q.dim();
    if n != dataset.n() || k != params.k_subgroups() {
        return Err(UcslError::ShapeMismatch(format!(
            "elbo: q is {:?}, dataset has {} rows, model has K = {}",
            q.q.dim(),
            dataset.n(),
            params.k_subgroups()
        )));
    }
    let reprs = encode(params, &dataset.x)?;
    let experts = expert_probs(params, &reprs)?;
    let clusters = cluster_probs(params, &reprs)?;
    let mut bound = 0.0;
    for i in 0..n {
        let target = if dataset.y[i] == 1 { 1.0 } else { 0.0 };
        for j in 0..k {
            let qv = q.q[[i, j]];
            if qv <= 0.0 {
                continue;
            }
            let p = experts[[i, j]];
            bound += qv * (target * p.ln() + (1.0 - target) * (1.0 - p).ln());
            let s = clusters[[i, j]].max(PROB_FLOOR);
            bound -= qv * (qv.ln() - s.ln());
        }
    }
    if !bound.is_finite() {
        return Err(UcslError::Numeric("elbo is non-finite".into()));
    }
    Ok(bound)
}

fn check_dataset_for_training(dataset: &LabeledDataset, model_cfg: &ModelConfig) -> Result<()> {
    if dataset.dim() != model_cfg.input_dim {
        return Err(UcslError::ShapeMismatch(format!(
            "dataset width {} != model input_dim {}",
            dataset.dim(),
            model_cfg.input_dim
        )));
    }
    if dataset.n_pos() < model_cfg.k_subgroups {
        return Err(UcslError::InsufficientSamples(format!(
            "need at least {} positive samples, got {}",
            model_cfg.k_subgroups,
            dataset.n_pos()
        )));
    }
    Ok(())
}

struct EStepOutcome {
    q: PseudoLabelMatrix,
    centroids: Centroids,
    permutation: Permutation,
}

/// Shared body of the initialization E-step and the per-epoch E-step.
/// `previous` enables re-identification against the given centroids.
fn estimate_pseudo_labels(
    params: &ModelParams,
    dataset: &LabeledDataset,
    cfg: &TrainConfig,
    t: usize,
    total_epochs: usize,
    previous: Option<&Centroids>,
) -> Result<EStepOutcome> {
    let k = params.k_subgroups();
    let pos_idx = positive_indices(&dataset.y);
    let reprs_pos = encode(params, &dataset.positive_rows())?;
    let seed = derive(cfg.seed, SEED_TAG_ESTEP, t as u64);
    let (q_soft, mut centroids) = soft_kmeans_sk(&reprs_pos, k, &cfg.sk, seed)?;
    let (q_interp, hardness) = if total_epochs == 0 {
        (q_soft, 0.0)
    } else {
        (interpolate_soft_hard(&q_soft, t, total_epochs)?, t as f64 / total_epochs as f64)
    };
    let (q_aligned, permutation) = match previous {
        Some(prev) => {
            // Relabel the freshly clustered subgroups into the previous
            // epoch's labeling; heads already carry that labeling, so they
            // stay untouched and expert k keeps meaning subgroup k.
            let sigma = reidentify(&prev.means, &centroids.means, cfg.sk.epsilon)?;
            centroids = sigma.apply_to_centroids(&centroids)?;
            (sigma.gather_cols(&q_interp)?, sigma)
        }
        None => (q_interp, Permutation::identity(k)),
    };
    centroids.epoch_tag = t;
    let q = assemble_pseudo_labels(&q_aligned, &pos_idx, dataset.n(), &dataset.y, hardness)?;
    Ok(EStepOutcome { q, centroids, permutation })
}

/// Builds the initial state: fresh parameters plus the epoch-0 E-step
/// (no re-identification, fully soft pseudo-labels).
pub fn init_state(
    dataset: &LabeledDataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<EmState> {
    model_cfg.validate()?;
    cfg.validate()?;
    check_dataset_for_training(dataset, model_cfg)?;
    let params = init_params(model_cfg);
    let outcome = estimate_pseudo_labels(&params, dataset, cfg, 0, cfg.epochs, None)?;
    let opt = OptState::new(&params);
    Ok(EmState { params, centroids: outcome.centroids, q: outcome.q, epoch: 0, opt })
}

/// Runs one E-step with the parameters frozen: clusters the positive
/// representations, interpolates along the schedule at `t/total_epochs`,
/// re-identifies against the state's centroids, and reassembles the full
/// pseudo-label matrix. Returns the new state and the permutation applied.
pub fn e_step(
    state: &EmState,
    dataset: &LabeledDataset,
    cfg: &TrainConfig,
    t: usize,
    total_epochs: usize,
) -> Result<(EmState, Permutation)> {
    let outcome =
        estimate_pseudo_labels(&state.params, dataset, cfg, t, total_epochs, Some(&state.centroids))?;
    let mut next = state.clone();
    next.centroids = outcome.centroids;
    next.q = outcome.q;
    Ok((next, outcome.permutation))
}

fn adam_update(params: &mut ModelParams, grads: &Gradients, opt: &mut OptState, lr: f64) {
    opt.step += 1;
    let t = opt.step as i32;
    let bias1 = 1.0 - ADAM_BETA1.powi(t);
    let bias2 = 1.0 - ADAM_BETA2.powi(t);
    for (((p, g), m), v) in params
        .layers_mut()
        .zip(grads.layers())
        .zip(opt.m.layers_mut())
        .zip(opt.v.layers_mut())
    {
        Zip::from(&mut p.w).and(&g.w).and(&mut m.w).and(&mut v.w).for_each(|pw, &gw, mw, vw| {
            *mw = ADAM_BETA1 * *mw + (1.0 - ADAM_BETA1) * gw;
            *vw = ADAM_BETA2 * *vw + (1.0 - ADAM_BETA2) * gw * gw;
            *pw -= lr * (*mw / bias1) / ((*vw / bias2).sqrt() + ADAM_EPS);
        });
        Zip::from(&mut p.b).and(&g.b).and(&mut m.b).and(&mut v.b).for_each(|pb, &gb, mb, vb| {
            *mb = ADAM_BETA1 * *mb + (1.0 - ADAM_BETA1) * gb;
            *vb = ADAM_BETA2 * *vb + (1.0 - ADAM_BETA2) * gb * gb;
            *pb -= lr * (*mb / bias1) / ((*vb / bias2).sqrt() + ADAM_EPS);
        });
    }
}

fn sgd_momentum_update(
    params: &mut ModelParams,
    grads: &Gradients,
    opt: &mut OptState,
    lr: f64,
    momentum: f64,
) {
    for ((p, g), m) in params.layers_mut().zip(grads.layers()).zip(opt.m.layers_mut()) {
        Zip::from(&mut p.w).and(&g.w).and(&mut m.w).for_each(|pw, &gw, mw| {
            *mw = momentum * *mw + gw;
            *pw -= lr * *mw;
        });
        Zip::from(&mut p.b).and(&g.b).and(&mut m.b).for_each(|pb, &gb, mb| {
            *mb = momentum * *mb + gb;
            *pb -= lr * *mb;
        });
    }
}

fn gather_batch(
    dataset: &LabeledDataset,
    q: &Array2<f64>,
    indices: &[usize],
) -> (Array2<f64>, Vec<i8>, Array2<f64>) {
    let d = dataset.dim();
    let k = q.ncols();
    let mut x = Array2::zeros((indices.len(), d));
    let mut y = Vec::with_capacity(indices.len());
    let mut qb = Array2::zeros((indices.len(), k));
    for (row, &i) in indices.iter().enumerate() {
        x.row_mut(row).assign(&dataset.x.row(i));
        y.push(dataset.y[i]);
        qb.row_mut(row).assign(&q.row(i));
    }
    (x, y, qb)
}

fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rand::Rng::random_range(&mut rng, 0..=i);
        idx.swap(i, j);
    }
    idx
}

fn apply_flat_step(params: &ModelParams, grads: &[f64], scale: f64) -> ModelParams {
    let mut flat = params.flatten();
    for (p, g) in flat.iter_mut().zip(grads) {
        *p += scale * g;
    }
    let mut out = params.clone();
    out.assign_from_flat(&flat).expect("same shape");
    out
}

/// One M-step over the given frozen pseudo-labels. Minibatch mode shuffles
/// deterministically and applies the configured optimizer per batch;
/// full-batch mode takes a single backtracking line-searched gradient step
/// (at most [`MAX_HALVINGS`] halvings), keeping the previous parameters if no
/// step decreases the loss.
fn run_m_step(
    params: &ModelParams,
    opt: &OptState,
    q: &Array2<f64>,
    dataset: &LabeledDataset,
    cfg: &TrainConfig,
    weights: LossWeights,
    epoch: usize,
) -> Result<(ModelParams, OptState)> {
    cfg.validate()?;
    let mut params = params.clone();
    let mut opt = opt.clone();
    let with_context = |err: UcslError, batch: usize| match err {
        UcslError::Numeric(msg) => {
            UcslError::Numeric(format!("epoch {epoch}, batch {batch}: {msg}"))
        }
        other => other,
    };
    if cfg.full_batch {
        let y = &dataset.y;
        let (grads, loss_before) = backward(&params, &dataset.x, y, q, weights)
            .map_err(|e| with_context(e, 0))?;
        let flat_grads = grads.flatten();
        let mut alpha = cfg.learning_rate;
        for _ in 0..=MAX_HALVINGS {
            let candidate = apply_flat_step(&params, &flat_grads, -alpha);
            let loss_after = total_loss(&candidate, &dataset.x, y, q, weights)
                .map_err(|e| with_context(e, 0))?;
            if loss_after <= loss_before {
                return Ok((candidate, opt));
            }
            alpha *= 0.5;
        }
        // no step length improved the loss; keep the current parameters
        return Ok((params, opt));
    }
    let order = shuffled_indices(dataset.n(), derive(cfg.seed, SEED_TAG_SHUFFLE, epoch as u64));
    for (batch_no, chunk) in order.chunks(cfg.batch_size).enumerate() {
        let (x, y, qb) = gather_batch(dataset, q, chunk);
        let (grads, _) =
            backward(&params, &x, &y, &qb, weights).map_err(|e| with_context(e, batch_no))?;
        match cfg.optimizer {
            Optimizer::Adam => adam_update(&mut params, &grads, &mut opt, cfg.learning_rate),
            Optimizer::SgdMomentum => {
                sgd_momentum_update(&mut params, &grads, &mut opt, cfg.learning_rate, cfg.momentum)
            }
        }
    }
    if !params.all_finite() {
        return Err(UcslError::Numeric(format!(
            "parameters became non-finite during epoch {epoch}"
        )));
    }
    Ok((params, opt))
}

/// One M-step of the EM loop: descends
/// `w_moe * L_moe + w_clu * L_clu` with the state's pseudo-labels frozen.
pub fn m_step(state: &EmState, dataset: &LabeledDataset, cfg: &TrainConfig) -> Result<EmState> {
    let (params, opt) =
        run_m_step(&state.params, &state.opt, &state.q.q, dataset, cfg, cfg.weights, state.epoch)?;
    let mut next = state.clone();
    next.params = params;
    next.opt = opt;
    Ok(next)
}

/// Folded ratio (>= 1) between the largest and smallest distance from the
/// control centroid to a subgroup centroid; 1 means perfectly equidistant.
pub fn equidistance_ratio(
    params: &ModelParams,
    centroids: &Centroids,
    dataset: &LabeledDataset,
) -> Result<f64> {
    let controls: Vec<usize> = (0..dataset.n()).filter(|&i| dataset.y[i] == -1).collect();
    if controls.is_empty() {
        return Err(UcslError::InsufficientSamples(
            "equidistance ratio needs at least one control".into(),
        ));
    }
    let mut x = Array2::zeros((controls.len(), dataset.dim()));
    for (row, &i) in controls.iter().enumerate() {
        x.row_mut(row).assign(&dataset.x.row(i));
    }
    let reprs = encode(params, &x)?;
    let center = reprs.mean_axis(Axis(0)).expect("nonempty");
    let mut min_d = f64::INFINITY;
    let mut max_d: f64 = 0.0;
    for mu in centroids.means.rows() {
        let d = (&center - &mu).iter().map(|v| v * v).sum::<f64>().sqrt();
        min_d = min_d.min(d);
        max_d = max_d.max(d);
    }
    Ok(max_d / min_d)
}

/// Full Deep UCSL training: initialization E-step, then `epochs` rounds of
/// (M-step, E-step). History records the state after every E-step.
pub fn train(
    dataset: &LabeledDataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    if dataset.n_neg() == 0 {
        return Err(UcslError::InsufficientSamples(
            "training needs at least one control sample".into(),
        ));
    }
    let mut state = init_state(dataset, model_cfg, cfg)?;
    let mut history = TrainHistory::default();
    for t in 0..cfg.epochs {
        state = m_step(&state, dataset, cfg)?;
        let (next, permutation) = e_step(&state, dataset, cfg, t + 1, cfg.epochs)?;
        state = next;
        state.epoch = t + 1;

        let reprs = encode(&state.params, &dataset.x)?;
        let experts = expert_probs(&state.params, &reprs)?;
        let clusters = cluster_probs(&state.params, &reprs)?;
        let record = EpochRecord {
            epoch: t + 1,
            elbo: elbo_lower_bound(&state.params, dataset, &state.q)?,
            moe_loss: moe_loss(&experts, &dataset.y, &state.q.q)?,
            clustering_loss: clustering_loss(&clusters, &state.q.q)?,
            permutation,
            equidistance_ratio: equidistance_ratio(&state.params, &state.centroids, dataset)?,
            hardness: state.q.hardness,
        };
        history.records.push(record);
    }
    Ok(TrainOutput { params: state.params, centroids: state.centroids, history })
}

/// The comparison arm: a plain binary cross-entropy classifier (expert 0
/// alone, clustering loss off), followed by unregularized K-means on the
/// positive representations.
pub fn train_baseline_bce_kmeans(
    dataset: &LabeledDataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(ModelParams, Centroids)> {
    model_cfg.validate()?;
    cfg.validate()?;
    check_dataset_for_training(dataset, model_cfg)?;
    if dataset.n_neg() == 0 {
        return Err(UcslError::InsufficientSamples(
            "training needs at least one control sample".into(),
        ));
    }
    let mut params = init_params(model_cfg);
    let mut opt = OptState::new(&params);
    // one-hot pseudo-labels on expert 0 turn the MoE loss into a plain BCE
    let mut q = Array2::zeros((dataset.n(), model_cfg.k_subgroups));
    q.column_mut(0).fill(1.0);
    let weights = LossWeights { moe: 1.0, clustering: 0.0 };
    for epoch in 0..cfg.epochs {
        let (p, o) = run_m_step(&params, &opt, &q, dataset, cfg, weights, epoch)?;
        params = p;
        opt = o;
    }
    let reprs_pos = encode(&params, &dataset.positive_rows())?;
    let kmeans_cfg = SkConfig { epsilon: 0.0, ..cfg.sk.clone() };
    let seed = derive(cfg.seed, SEED_TAG_ESTEP, u64::MAX);
    let (_, mut centroids) =
        soft_kmeans_sk(&reprs_pos, model_cfg.k_subgroups, &kmeans_cfg, seed)?;
    centroids.epoch_tag = cfg.epochs;
    Ok((params, centroids))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SynthConfig};
    use crate::nn::Activation;
    use ndarray::array;

    fn small_dataset(seed: u64) -> LabeledDataset {
        gen_synthetic(&SynthConfig::new(40, 40, 2, seed)).unwrap()
    }

    fn small_model(dataset: &LabeledDataset, seed: u64) -> ModelConfig {
        ModelConfig::new(dataset.dim(), vec![16], 8, 2, Activation::Relu, seed).unwrap()
    }

    #[test]
    fn elbo_is_maximal_at_perfect_fit() {
        // perfect experts (saturated on the true label) and cluster head
        // matching q exactly -> both terms vanish
        let x = array![[1.0], [-1.0]];
        let y = vec![1i8, -1];
        let c_true = vec![0, -1];
        let ds = LabeledDataset::new(x, y, c_true).unwrap();
        let encoder = vec![crate::nn::DenseLayer { w: array![[1.0]], b: array![0.0] }];
        // expert logit 100 * z saturates past the clamp for |z| = 1
        let expert_head =
            crate::nn::DenseLayer { w: array![[100.0], [100.0]], b: array![0.0, 0.0] };
        let cluster_head = crate::nn::DenseLayer { w: array![[0.0], [0.0]], b: array![0.0, 0.0] };
        let params = ModelParams {
            encoder,
            expert_head,
            cluster_head,
            activation: Activation::Relu,
        };
        let q = PseudoLabelMatrix { q: Array2::from_elem((2, 2), 0.5), hardness: 0.0 };
        // positive sample: p = sigmoid(30) ~ 1; control: p = sigmoid(-30) ~ 0
        let elbo = elbo_lower_bound(&params, &ds, &q).unwrap();
        assert!(elbo <= 0.0);
        assert!(elbo > -1e-9, "elbo = {elbo}");
    }

    #[test]
    fn elbo_with_k1_is_plain_log_likelihood() {
        let x = array![[0.5], [-0.25], [1.5]];
        let y = vec![1i8, -1, 1];
        let ds = LabeledDataset::new(x.clone(), y.clone(), vec![0, -1, 0]).unwrap();
        let encoder = vec![crate::nn::DenseLayer { w: array![[1.0]], b: array![0.0] }];
        let expert_head = crate::nn::DenseLayer { w: array![[2.0]], b: array![0.1] };
        let cluster_head = crate::nn::DenseLayer { w: array![[0.0]], b: array![0.0] };
        let params =
            ModelParams { encoder, expert_head, cluster_head, activation: Activation::Relu };
        let q = PseudoLabelMatrix { q: Array2::ones((3, 1)), hardness: 0.0 };
        let elbo = elbo_lower_bound(&params, &ds, &q).unwrap();
        // independent direct evaluation: K = 1 collapses the KL (q = s = 1)
        let mut expected = 0.0;
        for i in 0..3 {
            let z = x[[i, 0]].max(0.0) * 0.0 + x[[i, 0]]; // single linear layer
            let logit = (2.0 * z + 0.1).clamp(-30.0, 30.0);
            let p = 1.0 / (1.0 + (-logit).exp());
            expected += if y[i] == 1 { p.ln() } else { (1.0 - p).ln() };
        }
        assert!((elbo - expected).abs() < 1e-12);
    }

    #[test]
    fn elbo_matches_independent_summation() {
        let ds = small_dataset(3);
        let model_cfg = small_model(&ds, 4);
        let cfg = TrainConfig::new(5, 9);
        let state = init_state(&ds, &model_cfg, &cfg).unwrap();
        let elbo = elbo_lower_bound(&state.params, &ds, &state.q).unwrap();
        // oracle: scalar double loop over hand-computed probabilities
        let reprs = encode(&state.params, &ds.x).unwrap();
        let experts = expert_probs(&state.params, &reprs).unwrap();
        let clusters = cluster_probs(&state.params, &reprs).unwrap();
        let mut expected = 0.0;
        for i in 0..ds.n() {
            for j in 0..2 {
                let qv = state.q.q[[i, j]];
                if qv <= 0.0 {
                    continue;
                }
                let target = if ds.y[i] == 1 { 1.0 } else { 0.0 };
                let p = experts[[i, j]];
                expected += qv * (target * p.ln() + (1.0 - target) * (1.0 - p).ln());
                expected -= qv * (qv.ln() - clusters[[i, j]].max(1e-12).ln());
            }
        }
        assert!((elbo - expected).abs() < 1e-10);
        // with unit weights, elbo = -N * (moe + clu)
        let l_moe = moe_loss(&experts, &ds.y, &state.q.q).unwrap();
        let l_clu = clustering_loss(&clusters, &state.q.q).unwrap();
        assert!((elbo + ds.n() as f64 * (l_moe + l_clu)).abs() < 1e-8);
    }

    #[test]
    fn e_step_is_deterministic_without_m_step() {
        let ds = small_dataset(5);
        let model_cfg = small_model(&ds, 6);
        let cfg = TrainConfig::new(10, 11);
        let state = init_state(&ds, &model_cfg, &cfg).unwrap();
        let (s1, _) = e_step(&state, &ds, &cfg, 1, 10).unwrap();
        let (s2, _) = e_step(&s1, &ds, &cfg, 1, 10).unwrap();
        assert_eq!(s1.q, s2.q);
        assert_eq!(s1.centroids.means, s2.centroids.means);
    }

    #[test]
    fn e_step_aligns_heads_with_centroids() {
        let ds = small_dataset(7);
        let model_cfg = small_model(&ds, 8);
        let cfg = TrainConfig::new(10, 13);
        let mut state = init_state(&ds, &model_cfg, &cfg).unwrap();
        for t in 1..4 {
            state = m_step(&state, &ds, &cfg).unwrap();
            let (next, _) = e_step(&state, &ds, &cfg, t, 10).unwrap();
            let sigma =
                reidentify(&state.centroids.means, &next.centroids.means, cfg.sk.epsilon).unwrap();
            assert!(sigma.is_identity(), "epoch {t}: alignment drifted: {sigma:?}");
            state = next;
            state.epoch = t;
        }
    }

    #[test]
    fn first_epoch_pseudo_labels_are_fully_soft() {
        let ds = small_dataset(9);
        let model_cfg = small_model(&ds, 10);
        let cfg = TrainConfig::new(1, 15);
        let state = init_state(&ds, &model_cfg, &cfg).unwrap();
        assert_eq!(state.q.hardness, 0.0);
        state.q.validate(&ds.y).unwrap();
    }

    #[test]
    fn m_step_zero_learning_rate_is_identity() {
        let ds = small_dataset(11);
        let model_cfg = small_model(&ds, 12);
        let mut cfg = TrainConfig::new(3, 17);
        cfg.learning_rate = 0.0;
        let state = init_state(&ds, &model_cfg, &cfg).unwrap();
        let next = m_step(&state, &ds, &cfg).unwrap();
        assert_eq!(state.params, next.params);
        // full-batch flavor too
        cfg.full_batch = true;
        let next = m_step(&state, &ds, &cfg).unwrap();
        assert_eq!(state.params, next.params);
    }

    #[test]
    fn full_batch_m_step_never_increases_loss() {
        let ds = small_dataset(13);
        let model_cfg = small_model(&ds, 14);
        let mut cfg = TrainConfig::new(5, 19);
        cfg.full_batch = true;
        cfg.learning_rate = 0.5; // deliberately too big; line search must tame it
        let mut state = init_state(&ds, &model_cfg, &cfg).unwrap();
        for t in 0..5 {
            let before =
                total_loss(&state.params, &ds.x, &ds.y, &state.q.q, cfg.weights).unwrap();
            let next = m_step(&state, &ds, &cfg).unwrap();
            let after = total_loss(&next.params, &ds.x, &ds.y, &state.q.q, cfg.weights).unwrap();
            assert!(after <= before + 1e-12, "epoch {t}: loss rose {before} -> {after}");
            state = next;
            state.epoch = t + 1;
        }
    }

    #[test]
    fn sgd_epoch_decreases_moe_loss_on_separable_data() {
        let ds = small_dataset(15);
        let model_cfg = small_model(&ds, 16);
        let mut cfg = TrainConfig::new(1, 21);
        cfg.optimizer = Optimizer::SgdMomentum;
        cfg.learning_rate = 0.05;
        let state = init_state(&ds, &model_cfg, &cfg).unwrap();
        let reprs = encode(&state.params, &ds.x).unwrap();
        let before =
            moe_loss(&expert_probs(&state.params, &reprs).unwrap(), &ds.y, &state.q.q).unwrap();
        let next = m_step(&state, &ds, &cfg).unwrap();
        let reprs = encode(&next.params, &ds.x).unwrap();
        let after =
            moe_loss(&expert_probs(&next.params, &reprs).unwrap(), &ds.y, &state.q.q).unwrap();
        assert!(after < before, "moe loss did not decrease: {before} -> {after}");
    }

    #[test]
    fn train_zero_epochs_returns_initialized_model() {
        let ds = small_dataset(17);
        let model_cfg = small_model(&ds, 18);
        let cfg = TrainConfig::new(0, 23);
        let out = train(&ds, &model_cfg, &cfg).unwrap();
        assert!(out.history.records.is_empty());
        assert_eq!(out.params, init_params(&model_cfg));
    }

    #[test]
    fn train_is_deterministic() {
        let ds = small_dataset(19);
        let model_cfg = small_model(&ds, 20);
        let cfg = TrainConfig::new(3, 25);
        let a = train(&ds, &model_cfg, &cfg).unwrap();
        let b = train(&ds, &model_cfg, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.history, b.history);
        assert_eq!(a.history.to_csv_string(), b.history.to_csv_string());
    }

    #[test]
    fn train_rejects_missing_controls() {
        let ds = gen_synthetic(&SynthConfig::new(20, 0, 2, 1)).unwrap();
        let model_cfg = small_model(&ds, 2);
        let cfg = TrainConfig::new(1, 3);
        assert!(matches!(
            train(&ds, &model_cfg, &cfg),
            Err(UcslError::InsufficientSamples(_))
        ));
    }

    #[test]
    fn train_rejects_too_few_positives() {
        let ds = gen_synthetic(&SynthConfig::new(1, 20, 2, 1)).unwrap();
        let model_cfg = small_model(&ds, 2);
        let cfg = TrainConfig::new(1, 3);
        assert!(matches!(
            train(&ds, &model_cfg, &cfg),
            Err(UcslError::InsufficientSamples(_))
        ));
    }

    #[test]
    fn history_csv_has_fixed_schema() {
        let ds = small_dataset(21);
        let model_cfg = small_model(&ds, 22);
        let cfg = TrainConfig::new(2, 27);
        let out = train(&ds, &model_cfg, &cfg).unwrap();
        let csv = out.history.to_csv_string();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "epoch,elbo,moe_loss,clustering_loss,equidistance_ratio,hardness"
        );
        assert_eq!(lines.count(), 2);
        // hardness ends at 1 for the final epoch
        let last = out.history.records.last().unwrap();
        assert_eq!(last.hardness, 1.0);
        assert_eq!(out.history.records[0].hardness, 0.5);
    }

    #[test]
    fn baseline_returns_valid_centroids_even_untrained() {
        let ds = small_dataset(23);
        let model_cfg = small_model(&ds, 24);
        let mut cfg = TrainConfig::new(2, 29);
        cfg.learning_rate = 0.0;
        let (params, centroids) = train_baseline_bce_kmeans(&ds, &model_cfg, &cfg).unwrap();
        assert!(params.all_finite());
        assert_eq!(centroids.k(), 2);
        assert!(centroids.means.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn baseline_learns_classification() {
        let ds = gen_synthetic(&SynthConfig::new(150, 150, 2, 25)).unwrap();
        let model_cfg = small_model(&ds, 26);
        let mut cfg = TrainConfig::new(120, 31);
        cfg.learning_rate = 0.02;
        let (params, centroids) = train_baseline_bce_kmeans(&ds, &model_cfg, &cfg).unwrap();
        let test =
            gen_synthetic(&SynthConfig::new(100, 100, 2, 25).resampled(26_000)).unwrap();
        let pred = crate::metrics::predict_with(
            &params,
            &centroids,
            &test.x,
            crate::metrics::ClassifierSource::SingleExpert,
            crate::metrics::SubgroupSource::Representations,
        )
        .unwrap();
        let bacc = crate::metrics::class_bacc(&test.y, &pred.hard_class).unwrap();
        assert!(bacc > 0.9, "baseline class bacc {bacc}");
    }
}
