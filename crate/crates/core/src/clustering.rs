//! Pseudo-label estimation for the E-step.
//!
//! Subgroup responsibilities for disease samples come from a soft K-means
//! whose assignment matrix is rebalanced toward equipartition by a
//! Sinkhorn-Knopp pass (tempered by `1/epsilon`), then interpolated from soft
//! to hard along the epoch schedule. Control samples always receive the
//! uniform row `1/K`.

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, UcslError};

/// Squared distances are floored at this value before inversion.
pub const DIST_FLOOR: f64 = 1e-12;

/// Minimum squared separation allowed between two seeded centroids.
pub const CENTROID_TOL: f64 = 1e-12;

/// Sinkhorn-Knopp and inner K-means settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SkConfig {
    /// SK temperature; 0 disables the balancing entirely.
    pub epsilon: f64,
    pub n_sk_iters: usize,
    pub n_kmeans_iters: usize,
    pub tol: f64,
    /// Independent K-means++ starts; the run with the lowest hard-assignment
    /// objective wins. 1 reproduces a single seeded run.
    pub n_restarts: usize,
}

impl Default for SkConfig {
    fn default() -> Self {
        Self { epsilon: 0.05, n_sk_iters: 100, n_kmeans_iters: 10, tol: 1e-6, n_restarts: 1 }
    }
}

impl SkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) {
            return Err(UcslError::InvalidConfig(format!(
                "sk epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        if self.n_sk_iters == 0 || self.n_kmeans_iters == 0 || self.n_restarts == 0 {
            return Err(UcslError::InvalidConfig("sk iteration counts must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(UcslError::InvalidConfig(format!("sk tol must be > 0, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Subgroup centers in representation space.
#[derive(Debug, Clone, PartialEq)]
pub struct Centroids {
    /// K x R matrix, one row per subgroup.
    pub means: Array2<f64>,
    /// Epoch at which these centers were last updated.
    pub epoch_tag: usize,
}

impl Centroids {
    pub fn new(means: Array2<f64>, epoch_tag: usize) -> Result<Self> {
        if means.nrows() < 2 {
            return Err(UcslError::InvalidConfig(format!(
                "need at least 2 centroids, got {}",
                means.nrows()
            )));
        }
        if means.iter().any(|v| !v.is_finite()) {
            return Err(UcslError::DegenerateClustering("non-finite centroid entry".into()));
        }
        Ok(Self { means, epoch_tag })
    }

    pub fn k(&self) -> usize {
        self.means.nrows()
    }
}

/// Full-dataset subgroup responsibilities.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelMatrix {
    /// N x K responsibilities; control rows are exactly `1/K`.
    pub q: Array2<f64>,
    /// Soft-to-hard interpolation coefficient that produced `q` (0 = fully
    /// soft, 1 = hard argmax).
    pub hardness: f64,
}

impl PseudoLabelMatrix {
    /// Checks row stochasticity (1e-8) and that control rows are exactly
    /// uniform.
    pub fn validate(&self, labels: &[i8]) -> Result<()> {
        let (n, k) = self.q.dim();
        if labels.len() != n {
            return Err(UcslError::ShapeMismatch(format!(
                "pseudo-labels have {n} rows but {} labels",
                labels.len()
            )));
        }
        if !(0.0..=1.0).contains(&self.hardness) {
            return Err(UcslError::ContractViolation(format!(
                "hardness {} outside [0, 1]",
                self.hardness
            )));
        }
        let uniform = 1.0 / k as f64;
        for (i, row) in self.q.rows().into_iter().enumerate() {
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > 1e-8 {
                return Err(UcslError::ContractViolation(format!(
                    "pseudo-label row {i} sums to {sum}"
                )));
            }
            if labels[i] == -1 && row.iter().any(|&v| v != uniform) {
                return Err(UcslError::ContractViolation(format!(
                    "control row {i} is not exactly uniform"
                )));
            }
        }
        Ok(())
    }
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Standard K-means++ seeding: first center uniform, each subsequent center
/// drawn with probability proportional to the squared distance to the nearest
/// already-chosen center. Deterministic for a given seed.
pub fn kmeanspp_init(reprs_pos: &Array2<f64>, k: usize, seed: u64) -> Result<Centroids> {
    let m = reprs_pos.nrows();
    if m < k {
        return Err(UcslError::InsufficientSamples(format!(
            "kmeans++ needs at least {k} samples, got {m}"
        )));
    }
    if reprs_pos.iter().any(|v| !v.is_finite()) {
        return Err(UcslError::ContractViolation("non-finite representation".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..m));
    let mut d2: Vec<f64> =
        (0..m).map(|i| sq_dist(reprs_pos.row(i), reprs_pos.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            return Err(UcslError::DegenerateClustering(format!(
                "only {} distinct points available for {k} centroids",
                chosen.len()
            )));
        }
        let r = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = d2.iter().rposition(|&w| w > 0.0).expect("total > 0");
        for (i, &w) in d2.iter().enumerate() {
            acc += w;
            if r < acc && w > 0.0 {
                pick = i;
                break;
            }
        }
        chosen.push(pick);
        for i in 0..m {
            let d = sq_dist(reprs_pos.row(i), reprs_pos.row(pick));
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    let mut means = Array2::zeros((k, reprs_pos.ncols()));
    for (row, &idx) in chosen.iter().enumerate() {
        means.row_mut(row).assign(&reprs_pos.row(idx));
    }
    for a in 0..k {
        for b in (a + 1)..k {
            if sq_dist(means.row(a), means.row(b)) <= CENTROID_TOL {
                return Err(UcslError::DegenerateClustering(format!(
                    "centroids {a} and {b} coincide after seeding"
                )));
            }
        }
    }
    Centroids::new(means, 0)
}

/// Inverse-squared-distance soft assignment:
/// `q_ik = (1/d2_ik) / sum_a (1/d2_ia)` with `d2` floored at [`DIST_FLOOR`].
///
/// Panics if the representation width differs from the centroid width.
pub fn soft_assign(reprs_pos: &Array2<f64>, centroids: &Centroids) -> Array2<f64> {
    assert_eq!(
        reprs_pos.ncols(),
        centroids.means.ncols(),
        "representation width must match centroid width"
    );
    let m = reprs_pos.nrows();
    let k = centroids.k();
    let mut q = Array2::zeros((m, k));
    for i in 0..m {
        let mut row_sum = 0.0;
        for j in 0..k {
            let inv = 1.0 / sq_dist(reprs_pos.row(i), centroids.means.row(j)).max(DIST_FLOOR);
            q[[i, j]] = inv;
            row_sum += inv;
        }
        for j in 0..k {
            q[[i, j]] /= row_sum;
        }
    }
    q
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Sinkhorn-Knopp balancing of a positive matrix.
///
/// Entries are tempered to `q^(1/epsilon)` and then alternately rescaled so
/// that every row sums to 1 and every column to `M/K`. Runs in log domain.
/// The last operation is always a row normalization, so row sums are exact to
/// machine precision while column sums are within the convergence deviation.
///
/// Returns the balanced matrix and a flag indicating whether the column-sum
/// deviation reached `cfg.tol` within `cfg.n_sk_iters` iterations; on
/// non-convergence the best iterate seen is returned. `epsilon = 0` is an
/// identity pass-through.
pub fn sinkhorn_knopp(q: &Array2<f64>, cfg: &SkConfig) -> Result<(Array2<f64>, bool)> {
    cfg.validate()?;
    if q.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(UcslError::ContractViolation(
            "sinkhorn_knopp requires strictly positive finite entries".into(),
        ));
    }
    if cfg.epsilon == 0.0 {
        return Ok((q.clone(), true));
    }
    let (m, k) = q.dim();
    let col_target = m as f64 / k as f64;
    let log_col_target = col_target.ln();
    let mut log_p = q.mapv(|v| v.ln() / cfg.epsilon);
    let mut best: Option<(f64, Array2<f64>)> = None;
    let mut converged = false;
    for _ in 0..cfg.n_sk_iters {
        // columns -> M/K
        for j in 0..k {
            let lse = log_sum_exp(log_p.column(j).iter().copied());
            let shift = log_col_target - lse;
            log_p.column_mut(j).mapv_inplace(|v| v + shift);
        }
        // rows -> 1 (kept last so row sums are exact)
        for i in 0..m {
            let lse = log_sum_exp(log_p.row(i).iter().copied());
            log_p.row_mut(i).mapv_inplace(|v| v - lse);
        }
        let p = log_p.mapv(f64::exp);
        let col_dev = (0..k)
            .map(|j| (p.column(j).sum() - col_target).abs())
            .fold(0.0f64, f64::max);
        if best.as_ref().is_none_or(|(d, _)| col_dev < *d) {
            best = Some((col_dev, p));
        }
        if col_dev <= cfg.tol {
            converged = true;
            break;
        }
    }
    let (_, p) = best.expect("at least one iteration ran");
    Ok((p, converged))
}

fn argmax_row(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (j, &v) in row.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = j;
        }
    }
    best
}

fn soft_kmeans_sk_single(
    reprs_pos: &Array2<f64>,
    k: usize,
    cfg: &SkConfig,
    seed: u64,
) -> Result<(Array2<f64>, Centroids)> {
    let mut centroids = kmeanspp_init(reprs_pos, k, seed)?;
    let m = reprs_pos.nrows();
    let r = reprs_pos.ncols();
    let mut q = Array2::zeros((m, k));
    for _ in 0..cfg.n_kmeans_iters {
        q = soft_assign(reprs_pos, &centroids);
        let (balanced, _) = sinkhorn_knopp(&q, cfg)?;
        q = balanced;
        let mut counts = vec![0usize; k];
        let mut sums = Array2::<f64>::zeros((k, r));
        for i in 0..m {
            let j = argmax_row(q.row(i));
            counts[j] += 1;
            let mut row = sums.row_mut(j);
            row += &reprs_pos.row(i);
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(UcslError::DegenerateClustering(format!(
                "cluster {empty} received no samples"
            )));
        }
        for j in 0..k {
            let mut row = centroids.means.row_mut(j);
            row.assign(&(&sums.row(j) / counts[j] as f64));
        }
    }
    Ok((q, centroids))
}

/// Hard-assignment objective: summed squared distance to the nearest centroid.
fn hard_sse(reprs_pos: &Array2<f64>, centroids: &Centroids) -> f64 {
    (0..reprs_pos.nrows())
        .map(|i| {
            centroids
                .means
                .rows()
                .into_iter()
                .map(|mu| sq_dist(reprs_pos.row(i), mu))
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

/// Soft K-means with Sinkhorn-Knopp equipartition, seeded by K-means++.
///
/// Each iteration computes the inverse-squared-distance soft assignment,
/// rebalances it with [`sinkhorn_knopp`], hardens it by row argmax, and moves
/// every centroid to the mean of its hard-assigned points. With
/// `cfg.n_restarts > 1`, that loop runs once per derived seed and the start
/// with the lowest hard-assignment objective wins (ties to the earliest),
/// the usual K-means multi-start discipline. Returns the final balanced soft
/// matrix together with the final centroids.
pub fn soft_kmeans_sk(
    reprs_pos: &Array2<f64>,
    k: usize,
    cfg: &SkConfig,
    seed: u64,
) -> Result<(Array2<f64>, Centroids)> {
    cfg.validate()?;
    if cfg.n_restarts == 1 {
        return soft_kmeans_sk_single(reprs_pos, k, cfg, seed);
    }
    let mut best: Option<(f64, (Array2<f64>, Centroids))> = None;
    let mut last_err = None;
    for r in 0..cfg.n_restarts {
        let restart_seed = crate::seeds::derive(seed, 0x4b4d, r as u64);
        match soft_kmeans_sk_single(reprs_pos, k, cfg, restart_seed) {
            Ok(out) => {
                let sse = hard_sse(reprs_pos, &out.1);
                if best.as_ref().is_none_or(|(b, _)| sse < *b) {
                    best = Some((sse, out));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match best {
        Some((_, out)) => Ok(out),
        None => Err(last_err.expect("n_restarts >= 1")),
    }
}

/// Linear soft-to-hard interpolation along the epoch schedule:
/// `(1 - t/T) * q + (t/T) * OneHot(argmax(q))`, ties broken toward the lowest
/// index. Fully soft at `t = 0`, fully hard at `t = T`.
pub fn interpolate_soft_hard(q_soft: &Array2<f64>, t: usize, total_epochs: usize) -> Result<Array2<f64>> {
    if total_epochs == 0 {
        return Err(UcslError::ContractViolation("total epochs must be >= 1".into()));
    }
    if t > total_epochs {
        return Err(UcslError::ContractViolation(format!(
            "epoch {t} exceeds total {total_epochs}"
        )));
    }
    let lambda = t as f64 / total_epochs as f64;
    let mut out = q_soft.mapv(|v| v * (1.0 - lambda));
    for (i, row) in q_soft.rows().into_iter().enumerate() {
        out[[i, argmax_row(row)]] += lambda;
    }
    Ok(out)
}

/// Scatters the positive-sample responsibilities into a full N x K matrix,
/// giving every control sample the exact uniform row.
///
/// `positive_indices[m]` is the dataset row of the m-th row of `q_pos`.
pub fn assemble_pseudo_labels(
    q_pos: &Array2<f64>,
    positive_indices: &[usize],
    n_total: usize,
    labels: &[i8],
    hardness: f64,
) -> Result<PseudoLabelMatrix> {
    let k = q_pos.ncols();
    let m = q_pos.nrows();
    if labels.len() != n_total {
        return Err(UcslError::ContractViolation(format!(
            "have {} labels for {n_total} samples",
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    if m != n_pos || positive_indices.len() != m {
        return Err(UcslError::ContractViolation(format!(
            "q_pos has {m} rows, index map {}, dataset has {n_pos} positives",
            positive_indices.len()
        )));
    }
    let mut q = Array2::from_elem((n_total, k), 1.0 / k as f64);
    let mut seen = vec![false; n_total];
    for (row, &idx) in positive_indices.iter().enumerate() {
        if idx >= n_total || labels[idx] != 1 || seen[idx] {
            return Err(UcslError::ContractViolation(format!(
                "index map entry {row} -> {idx} does not name a unique positive sample"
            )));
        }
        seen[idx] = true;
        q.row_mut(idx).assign(&q_pos.row(row));
    }
    let out = PseudoLabelMatrix { q, hardness };
    out.validate(labels)?;
    Ok(out)
}

/// Row indices of positive samples, in dataset order.
pub fn positive_indices(labels: &[i8]) -> Vec<usize> {
    labels
        .iter()
        .enumerate()
        .filter_map(|(i, &y)| (y == 1).then_some(i))
        .collect()
}
