//! Bijective matching of subgroup labels between consecutive epochs.
//!
//! New centroids are matched to the previous epoch's by cosine similarity,
//! balanced into a doubly stochastic matrix with Sinkhorn-Knopp, and rounded
//! to a permutation by greedy global-max extraction. The permutation is then
//! applied to centroids, pseudo-label columns, and both head rows so that
//! subgroup `k` keeps one meaning across the whole model.

use ndarray::Array2;

use crate::clustering::{Centroids, PseudoLabelMatrix, SkConfig};
use crate::error::{Result, UcslError};
use crate::nn::DenseLayer;

/// A bijection on `[0, K)` stored as a gather: output slot `k` takes source
/// index `sigma[k]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    sigma: Vec<usize>,
}

impl Permutation {
    pub fn new(sigma: Vec<usize>) -> Result<Self> {
        let k = sigma.len();
        let mut seen = vec![false; k];
        for &s in &sigma {
            if s >= k || seen[s] {
                return Err(UcslError::ContractViolation(format!(
                    "not a bijection on [0, {k}): {sigma:?}"
                )));
            }
            seen[s] = true;
        }
        Ok(Self { sigma })
    }

    pub fn identity(k: usize) -> Self {
        Self { sigma: (0..k).collect() }
    }

    /// Builds the permutation whose [`Permutation::map_label`] realizes the
    /// given label map: an item labeled `l` becomes `label_map[l]`.
    pub fn from_label_map(label_map: &[usize]) -> Result<Self> {
        let k = label_map.len();
        let mut sigma = vec![usize::MAX; k];
        for (l, &target) in label_map.iter().enumerate() {
            if target >= k || sigma[target] != usize::MAX {
                return Err(UcslError::ContractViolation(format!(
                    "label map is not a bijection: {label_map:?}"
                )));
            }
            sigma[target] = l;
        }
        Ok(Self { sigma })
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.sigma.iter().enumerate().all(|(i, &s)| i == s)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.sigma
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.sigma.len()];
        for (i, &s) in self.sigma.iter().enumerate() {
            inv[s] = i;
        }
        Self { sigma: inv }
    }

    /// New label of an item currently labeled `label` once the gather is
    /// applied: the slot that `label` moves into.
    pub fn map_label(&self, label: usize) -> usize {
        self.inverse().sigma[label]
    }

    /// Reorders rows: `out.row(k) = m.row(sigma[k])`.
    pub fn gather_rows(&self, m: &Array2<f64>) -> Result<Array2<f64>> {
        if m.nrows() != self.sigma.len() {
            return Err(UcslError::ShapeMismatch(format!(
                "permutation of size {} applied to {} rows",
                self.sigma.len(),
                m.nrows()
            )));
        }
        let mut out = Array2::zeros(m.dim());
        for (k, &s) in self.sigma.iter().enumerate() {
            out.row_mut(k).assign(&m.row(s));
        }
        Ok(out)
    }

    /// Reorders columns: `out.column(k) = m.column(sigma[k])`.
    pub fn gather_cols(&self, m: &Array2<f64>) -> Result<Array2<f64>> {
        if m.ncols() != self.sigma.len() {
            return Err(UcslError::ShapeMismatch(format!(
                "permutation of size {} applied to {} columns",
                self.sigma.len(),
                m.ncols()
            )));
        }
        let mut out = Array2::zeros(m.dim());
        for (k, &s) in self.sigma.iter().enumerate() {
            out.column_mut(k).assign(&m.column(s));
        }
        Ok(out)
    }

    pub fn apply_to_centroids(&self, c: &Centroids) -> Result<Centroids> {
        Ok(Centroids { means: self.gather_rows(&c.means)?, epoch_tag: c.epoch_tag })
    }

    pub fn apply_to_pseudo_labels(&self, p: &PseudoLabelMatrix) -> Result<PseudoLabelMatrix> {
        Ok(PseudoLabelMatrix { q: self.gather_cols(&p.q)?, hardness: p.hardness })
    }

    /// Reorders the K head rows (weights and biases together).
    pub fn apply_to_head(&self, head: &DenseLayer) -> Result<DenseLayer> {
        if head.b.len() != self.sigma.len() {
            return Err(UcslError::ShapeMismatch(format!(
                "permutation of size {} applied to head with {} rows",
                self.sigma.len(),
                head.b.len()
            )));
        }
        let w = self.gather_rows(&head.w)?;
        let mut b = head.b.clone();
        for (k, &s) in self.sigma.iter().enumerate() {
            b[k] = head.b[s];
        }
        Ok(DenseLayer { w, b })
    }
}

/// Cosine similarity matrix: entry `(i, j)` compares previous centroid `i`
/// with next centroid `j`.
pub fn centroid_similarity(mu_prev: &Array2<f64>, mu_next: &Array2<f64>) -> Result<Array2<f64>> {
    if mu_prev.dim() != mu_next.dim() {
        return Err(UcslError::ShapeMismatch(format!(
            "centroid sets {:?} vs {:?}",
            mu_prev.dim(),
            mu_next.dim()
        )));
    }
    let k = mu_prev.nrows();
    let norm = |m: &Array2<f64>, i: usize| -> Result<f64> {
        let n = m.row(i).dot(&m.row(i)).sqrt();
        if n == 0.0 {
            return Err(UcslError::DegenerateClustering(format!(
                "centroid {i} has zero norm"
            )));
        }
        Ok(n)
    };
    let mut sim = Array2::zeros((k, k));
    for i in 0..k {
        let ni = norm(mu_prev, i)?;
        for j in 0..k {
            let nj = norm(mu_next, j)?;
            sim[[i, j]] = mu_prev.row(i).dot(&mu_next.row(j)) / (ni * nj);
        }
    }
    Ok(sim)
}

/// Greedy rounding of a score matrix to a gather permutation: repeatedly take
/// the global maximum and eliminate its row and column.
fn greedy_round(scores: &Array2<f64>) -> Permutation {
    let k = scores.nrows();
    let mut sigma = vec![usize::MAX; k];
    let mut row_used = vec![false; k];
    let mut col_used = vec![false; k];
    for _ in 0..k {
        let mut best = (0, 0);
        let mut best_v = f64::NEG_INFINITY;
        for i in 0..k {
            if row_used[i] {
                continue;
            }
            for j in 0..k {
                if col_used[j] {
                    continue;
                }
                if scores[[i, j]] > best_v {
                    best_v = scores[[i, j]];
                    best = (i, j);
                }
            }
        }
        sigma[best.0] = best.1;
        row_used[best.0] = true;
        col_used[best.1] = true;
    }
    Permutation { sigma }
}

/// Exhaustive search for the gather maximizing `sum_k sim[k, sigma[k]]`.
fn brute_force_assignment(sim: &Array2<f64>) -> Permutation {
    let k = sim.nrows();
    let mut best_sigma = (0..k).collect::<Vec<_>>();
    let mut best_score = f64::NEG_INFINITY;
    let mut current = (0..k).collect::<Vec<_>>();
    permute_rec(&mut current, 0, &mut |perm| {
        let score: f64 = perm.iter().enumerate().map(|(i, &j)| sim[[i, j]]).sum();
        if score > best_score {
            best_score = score;
            best_sigma = perm.to_vec();
        }
    });
    Permutation { sigma: best_sigma }
}

fn permute_rec(items: &mut [usize], start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == items.len() {
        visit(items);
        return;
    }
    for i in start..items.len() {
        items.swap(start, i);
        permute_rec(items, start + 1, visit);
        items.swap(start, i);
    }
}

/// Matches next-epoch centroids to previous-epoch labels.
///
/// The cosine similarity is shifted by +1 (entries must be positive for the
/// tempering), normalized per next-centroid as a membership distribution over
/// previous labels, balanced to doubly stochastic with Sinkhorn-Knopp when
/// `epsilon > 0`, and rounded greedily. For K <= 8 the K! search backs the
/// rounding, so the result is exactly the assignment maximizing the total
/// similarity; beyond that the greedy rounding stands alone, and SK
/// non-convergence is an error.
///
/// The returned gather satisfies: `gather_rows(mu_next)` is aligned with
/// `mu_prev`.
pub fn reidentify(mu_prev: &Array2<f64>, mu_next: &Array2<f64>, epsilon: f64) -> Result<Permutation> {
    let sim = centroid_similarity(mu_prev, mu_next)?;
    let k = sim.nrows();
    // Appendix-style membership: shift to positive, normalize over previous
    // labels for each next centroid (columns of `sim`).
    let mut scores = sim.mapv(|v| (v + 1.0).max(1e-12));
    for j in 0..k {
        let s = scores.column(j).sum();
        scores.column_mut(j).mapv_inplace(|v| v / s);
    }
    if epsilon > 0.0 {
        let cfg = SkConfig { epsilon, ..SkConfig::default() };
        let (balanced, converged) = crate::clustering::sinkhorn_knopp(&scores, &cfg)?;
        if !converged {
            if k <= 8 {
                return Ok(brute_force_assignment(&sim));
            }
            return Err(UcslError::Reident(format!(
                "sinkhorn failed to converge for K = {k} > 8"
            )));
        }
        scores = balanced;
    }
    let greedy = greedy_round(&scores);
    if k <= 8 {
        let exact = brute_force_assignment(&sim);
        let total = |p: &Permutation| -> f64 {
            p.as_slice().iter().enumerate().map(|(i, &j)| sim[[i, j]]).sum()
        };
        if total(&exact) > total(&greedy) {
            return Ok(exact);
        }
    }
    Ok(greedy)
}
