//! Mixture-of-experts prediction and the three balanced-accuracy metrics.
//!
//! `Overall B-ACC` uses the redefined confusion counts: a disease sample
//! classified as disease but assigned the wrong subgroup counts as a false
//! positive, not a true positive.

use ndarray::{Array1, Array2};

use crate::clustering::{soft_assign, Centroids};
use crate::error::{Result, UcslError};
use crate::nn::{cluster_probs, encode, expert_probs, ModelParams};
use crate::reident::Permutation;

/// Where subgroup probabilities come from at inference time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubgroupSource {
    /// The model's own clustering head (softmax).
    ClusterHead,
    /// Inverse-squared-distance assignment to the fitted centroids in
    /// representation space; protocol parity with K-means baselines.
    Representations,
}

/// How the disease probability is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifierSource {
    /// Eq.-style mixture: experts weighted by the clustering head.
    Mixture,
    /// Expert 0 alone; the plain binary classifier of the BCE baseline.
    SingleExpert,
}

/// Predictions for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBatch {
    pub p_disease: Array1<f64>,
    pub subgroup_probs: Array2<f64>,
    pub hard_class: Vec<i8>,
    pub hard_subgroup: Vec<usize>,
}

fn argmax_row(row: ndarray::ArrayView1<f64>) -> usize {
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

/// Full-control prediction entry point.
pub fn predict_with(
    params: &ModelParams,
    centroids: &Centroids,
    x: &Array2<f64>,
    classifier: ClassifierSource,
    subgroups: SubgroupSource,
) -> Result<PredictionBatch> {
    let reprs = encode(params, x)?;
    let experts = expert_probs(params, &reprs)?;
    let subgroup_probs = match subgroups {
        SubgroupSource::ClusterHead => cluster_probs(params, &reprs)?,
        SubgroupSource::Representations => {
            if reprs.ncols() != centroids.means.ncols() {
                return Err(UcslError::ShapeMismatch(format!(
                    "representation width {} != centroid width {}",
                    reprs.ncols(),
                    centroids.means.ncols()
                )));
            }
            soft_assign(&reprs, centroids)
        }
    };
    let b = x.nrows();
    let mut p_disease = Array1::zeros(b);
    match classifier {
        ClassifierSource::Mixture => {
            let gating = cluster_probs(params, &reprs)?;
            for i in 0..b {
                p_disease[i] = experts.row(i).dot(&gating.row(i));
            }
        }
        ClassifierSource::SingleExpert => {
            for i in 0..b {
                p_disease[i] = experts[[i, 0]];
            }
        }
    }
    let hard_class = p_disease.iter().map(|&p| if p >= 0.5 { 1i8 } else { -1i8 }).collect();
    let hard_subgroup = (0..b).map(|i| argmax_row(subgroup_probs.row(i))).collect();
    Ok(PredictionBatch { p_disease, subgroup_probs, hard_class, hard_subgroup })
}

/// Mixture-of-experts prediction:
/// `p(y | x) = sum_k p_expert_k(y | x) * p_cluster(k | x)`, with subgroups
/// taken from the clustering head.
pub fn predict(
    params: &ModelParams,
    centroids: &Centroids,
    x: &Array2<f64>,
) -> Result<PredictionBatch> {
    predict_with(params, centroids, x, ClassifierSource::Mixture, SubgroupSource::ClusterHead)
}

/// Balanced accuracy of binary classification: mean of the two per-class
/// recalls. Errors when either class has zero support.
pub fn class_bacc(y_true: &[i8], y_pred: &[i8]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(UcslError::ShapeMismatch(format!(
            "class_bacc: {} truths vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    crate::loss::check_labels(y_true)?;
    crate::loss::check_labels(y_pred)?;
    let mut pos = (0usize, 0usize); // (correct, total)
    let mut neg = (0usize, 0usize);
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t == 1 {
            pos.1 += 1;
            if p == 1 {
                pos.0 += 1;
            }
        } else {
            neg.1 += 1;
            if p == -1 {
                neg.0 += 1;
            }
        }
    }
    if pos.1 == 0 || neg.1 == 0 {
        return Err(UcslError::MetricUndefined(format!(
            "class_bacc needs both classes present (n+ = {}, n- = {})",
            pos.1, neg.1
        )));
    }
    Ok(0.5 * pos.0 as f64 / pos.1 as f64 + 0.5 * neg.0 as f64 / neg.1 as f64)
}

/// Per-true-class recall matrix: `recall[c][p]` is the fraction of true-`c`
/// samples predicted as `p`. Errors if a true class is empty.
fn recall_matrix(c_true: &[usize], c_pred: &[usize], k: usize) -> Result<Array2<f64>> {
    let mut counts = Array2::<f64>::zeros((k, k));
    let mut support = vec![0usize; k];
    for (&t, &p) in c_true.iter().zip(c_pred) {
        if t >= k || p >= k {
            return Err(UcslError::ContractViolation(format!(
                "subgroup label out of range: true {t}, pred {p}, K = {k}"
            )));
        }
        counts[[t, p]] += 1.0;
        support[t] += 1;
    }
    for (c, &n) in support.iter().enumerate() {
        if n == 0 {
            return Err(UcslError::MetricUndefined(format!("true subgroup {c} is empty")));
        }
        for p in 0..k {
            counts[[c, p]] /= n as f64;
        }
    }
    Ok(counts)
}

/// Balanced subgroup accuracy with optimal label alignment.
///
/// Maximizes the macro-averaged per-class recall over all relabelings of
/// `c_pred`: exhaustively for `K <= 8`, via the Hungarian assignment on the
/// recall matrix above that. Returns the score and the permutation whose
/// [`Permutation::map_label`] sends a predicted label to its aligned label.
pub fn subgroup_bacc(c_true: &[usize], c_pred: &[usize], k: usize) -> Result<(f64, Permutation)> {
    if c_true.len() != c_pred.len() {
        return Err(UcslError::ShapeMismatch(format!(
            "subgroup_bacc: {} truths vs {} predictions",
            c_true.len(),
            c_pred.len()
        )));
    }
    if k == 0 {
        return Err(UcslError::ContractViolation("K must be >= 1".into()));
    }
    let recalls = recall_matrix(c_true, c_pred, k)?;
    // assignment[c] = predicted label aligned to true class c, maximizing
    // sum_c recalls[c][assignment[c]]
    let assignment = if k <= 8 {
        let mut best: Option<(f64, Vec<usize>)> = None;
        let mut current: Vec<usize> = (0..k).collect();
        permute_all(&mut current, 0, &mut |perm| {
            let score: f64 = perm.iter().enumerate().map(|(c, &p)| recalls[[c, p]]).sum();
            if best.as_ref().is_none_or(|(b, _)| score > *b) {
                best = Some((score, perm.to_vec()));
            }
        });
        best.expect("K >= 1").1
    } else {
        hungarian_max(&recalls)
    };
    let score: f64 =
        assignment.iter().enumerate().map(|(c, &p)| recalls[[c, p]]).sum::<f64>() / k as f64;
    // label map: predicted label assignment[c] becomes c
    let mut label_map = vec![0usize; k];
    for (c, &p) in assignment.iter().enumerate() {
        label_map[p] = c;
    }
    Ok((score, Permutation::from_label_map(&label_map)?))
}

fn permute_all(items: &mut [usize], start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == items.len() {
        visit(items);
        return;
    }
    for i in start..items.len() {
        items.swap(start, i);
        permute_all(items, start + 1, visit);
        items.swap(start, i);
    }
}

/// O(K^3) Hungarian algorithm maximizing the assignment sum of `w`;
/// returns `assignment[row] = col`.
fn hungarian_max(w: &Array2<f64>) -> Vec<usize> {
    let n = w.nrows();
    // classic potentials formulation on the minimization of (max - w)
    let big = w.iter().fold(0.0f64, |a, &v| a.max(v));
    let cost = w.mapv(|v| big - v);
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1]; // p[col] = row matched to col (1-based rows)
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Aligned labels: applies the permutation returned by [`subgroup_bacc`]
/// to every predicted label.
pub fn align_labels(c_pred: &[usize], alignment: &Permutation) -> Vec<usize> {
    c_pred.iter().map(|&c| alignment.map_label(c)).collect()
}

/// Confusion counts under the subgroup-aware definitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfusionCounts {
    /// Disease, classified disease, correct subgroup.
    pub true_pos: usize,
    /// Healthy classified disease, or disease classified disease with the
    /// wrong subgroup.
    pub false_pos: usize,
    /// Healthy classified healthy.
    pub true_neg: usize,
    /// Disease classified healthy.
    pub false_neg: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }
}

/// Overall balanced accuracy:
/// `0.5 * TP/(TP+FN) + 0.5 * TN/(TN+FP)` with the counts of
/// [`ConfusionCounts`]. `c_true` uses -1 for unknown and must be set on every
/// disease sample; `c_pred_aligned` must already be aligned.
pub fn overall_bacc(
    y_true: &[i8],
    c_true: &[i32],
    y_pred: &[i8],
    c_pred_aligned: &[usize],
) -> Result<(f64, ConfusionCounts)> {
    let n = y_true.len();
    if c_true.len() != n || y_pred.len() != n || c_pred_aligned.len() != n {
        return Err(UcslError::ShapeMismatch(format!(
            "overall_bacc: lengths y {n}, c {}, y_pred {}, c_pred {}",
            c_true.len(),
            y_pred.len(),
            c_pred_aligned.len()
        )));
    }
    let mut counts = ConfusionCounts { true_pos: 0, false_pos: 0, true_neg: 0, false_neg: 0 };
    for i in 0..n {
        match (y_true[i], y_pred[i]) {
            (1, 1) => {
                if c_true[i] < 0 {
                    return Err(UcslError::MetricUndefined(format!(
                        "disease sample {i} has no subgroup label"
                    )));
                }
                if c_true[i] as usize == c_pred_aligned[i] {
                    counts.true_pos += 1;
                } else {
                    counts.false_pos += 1;
                }
            }
            (1, _) => counts.false_neg += 1,
            (_, 1) => counts.false_pos += 1,
            _ => counts.true_neg += 1,
        }
    }
    let pos_margin = counts.true_pos + counts.false_neg;
    let neg_margin = counts.true_neg + counts.false_pos;
    if pos_margin == 0 {
        return Err(UcslError::MetricUndefined("TP + FN margin is empty".into()));
    }
    if neg_margin == 0 {
        return Err(UcslError::MetricUndefined("TN + FP margin is empty".into()));
    }
    let score = 0.5 * counts.true_pos as f64 / pos_margin as f64
        + 0.5 * counts.true_neg as f64 / neg_margin as f64;
    Ok((score, counts))
}

/// The three balanced accuracies plus alignment and confusion counts.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub class_bacc: f64,
    pub subgroup_bacc: f64,
    pub overall_bacc: f64,
    pub alignment: Permutation,
    pub counts: ConfusionCounts,
}

impl MetricsReport {
    /// Flat `key=value` record, one entry per line.
    pub fn to_key_value_lines(&self) -> String {
        let alignment: Vec<String> =
            self.alignment.as_slice().iter().map(|s| s.to_string()).collect();
        format!(
            "class_bacc={}\nsubgroup_bacc={}\noverall_bacc={}\nalignment={}\ntp={}\nfp={}\ntn={}\nfn={}\n",
            self.class_bacc,
            self.subgroup_bacc,
            self.overall_bacc,
            alignment.join(","),
            self.counts.true_pos,
            self.counts.false_pos,
            self.counts.true_neg,
            self.counts.false_neg,
        )
    }
}

/// Evaluates predictions against ground truth: class balanced accuracy over
/// all samples, subgroup balanced accuracy over true disease samples (with
/// optimal alignment), and the overall score with aligned predictions.
pub fn compute_metrics(
    y_true: &[i8],
    c_true: &[i32],
    k: usize,
    pred: &PredictionBatch,
) -> Result<MetricsReport> {
    let class = class_bacc(y_true, &pred.hard_class)?;
    let mut sub_true = Vec::new();
    let mut sub_pred = Vec::new();
    for i in 0..y_true.len() {
        if y_true[i] == 1 {
            if c_true[i] < 0 {
                return Err(UcslError::MetricUndefined(format!(
                    "disease sample {i} has no subgroup label"
                )));
            }
            sub_true.push(c_true[i] as usize);
            sub_pred.push(pred.hard_subgroup[i]);
        }
    }
    let (subgroup, alignment) = subgroup_bacc(&sub_true, &sub_pred, k)?;
    let aligned = align_labels(&pred.hard_subgroup, &alignment);
    let (overall, counts) = overall_bacc(y_true, c_true, &pred.hard_class, &aligned)?;
    Ok(MetricsReport { class_bacc: class, subgroup_bacc: subgroup, overall_bacc: overall, alignment, counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, Activation, ModelConfig};
    use crate::testutil::{random_batch, seeded_rng};
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn class_bacc_perfect_and_degenerate() {
        assert_eq!(class_bacc(&[1, -1], &[1, -1]).unwrap(), 1.0);
        // all predicted +1 on balanced truth -> 0.5
        assert_eq!(class_bacc(&[1, 1, -1, -1], &[1, 1, 1, 1]).unwrap(), 0.5);
    }

    #[test]
    fn class_bacc_hand_counted() {
        let score = class_bacc(&[1, 1, -1, -1], &[1, -1, -1, -1]).unwrap();
        assert!((score - 0.75).abs() < 1e-12);
    }

    #[test]
    fn class_bacc_requires_both_classes() {
        assert!(matches!(
            class_bacc(&[1, 1], &[1, -1]),
            Err(UcslError::MetricUndefined(_))
        ));
    }

    #[test]
    fn subgroup_bacc_identity_and_permuted() {
        let c = [0usize, 0, 1, 1, 2, 2];
        let (score, perm) = subgroup_bacc(&c, &c, 3).unwrap();
        assert_eq!(score, 1.0);
        assert!(perm.is_identity());
        // any relabeled prediction still scores 1
        let relabeled: Vec<usize> = c.iter().map(|&v| (v + 1) % 3).collect();
        let (score, perm) = subgroup_bacc(&c, &relabeled, 3).unwrap();
        assert_eq!(score, 1.0);
        let aligned = align_labels(&relabeled, &perm);
        assert_eq!(aligned, c.to_vec());
    }

    #[test]
    fn subgroup_bacc_worked_example() {
        // K=2, c_true=[0,0,1,1], c_pred=[0,1,1,1] -> 0.75 under identity
        let (score, perm) = subgroup_bacc(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert!((score - 0.75).abs() < 1e-12);
        assert!(perm.is_identity());
        // brute force over both permutations confirms
        let id_score = (0.5 + 1.0) / 2.0;
        let swap_score = (0.5 + 0.0) / 2.0;
        assert!(id_score > swap_score);
    }

    #[test]
    fn subgroup_bacc_invariant_to_true_relabeling() {
        let mut rng = seeded_rng(4);
        let c_true: Vec<usize> = (0..30).map(|_| rng.random_range(0..3)).collect();
        let c_pred: Vec<usize> = (0..30).map(|_| rng.random_range(0..3)).collect();
        let (base, _) = subgroup_bacc(&c_true, &c_pred, 3).unwrap();
        let relabeled_true: Vec<usize> = c_true.iter().map(|&v| (v + 2) % 3).collect();
        let (score, _) = subgroup_bacc(&relabeled_true, &c_pred, 3).unwrap();
        assert!((base - score).abs() < 1e-12);
    }

    #[test]
    fn subgroup_bacc_empty_class_errors() {
        assert!(matches!(
            subgroup_bacc(&[0, 0], &[0, 1], 2),
            Err(UcslError::MetricUndefined(_))
        ));
    }

    #[test]
    fn hungarian_matches_exhaustive() {
        let mut rng = seeded_rng(11);
        for _ in 0..30 {
            let k = rng.random_range(2..=6);
            let w = Array2::from_shape_fn((k, k), |_| rng.random_range(0.0..1.0));
            let hungarian = hungarian_max(&w);
            let mut best: Option<(f64, Vec<usize>)> = None;
            let mut current: Vec<usize> = (0..k).collect();
            permute_all(&mut current, 0, &mut |perm| {
                let s: f64 = perm.iter().enumerate().map(|(i, &j)| w[[i, j]]).sum();
                if best.as_ref().is_none_or(|(b, _)| s > *b) {
                    best = Some((s, perm.to_vec()));
                }
            });
            let (best_score, _) = best.unwrap();
            let h_score: f64 = hungarian.iter().enumerate().map(|(i, &j)| w[[i, j]]).sum();
            assert!((h_score - best_score).abs() < 1e-9, "hungarian suboptimal");
        }
    }

    #[test]
    fn overall_bacc_worked_example() {
        // 2 healthy (one misclassified), 2 disease (both classed disease,
        // one wrong subgroup): TP=1, FN=0, TN=1, FP=2 -> 2/3
        let y_true = [-1i8, -1, 1, 1];
        let y_pred = [-1i8, 1, 1, 1];
        let c_true = [-1i32, -1, 0, 1];
        let c_pred = [0usize, 0, 0, 0];
        let (score, counts) = overall_bacc(&y_true, &c_true, &y_pred, &c_pred).unwrap();
        assert_eq!(counts.true_pos, 1);
        assert_eq!(counts.false_neg, 0);
        assert_eq!(counts.true_neg, 1);
        assert_eq!(counts.false_pos, 2);
        assert_eq!(counts.total(), 4);
        assert!((score - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn overall_bacc_perfect_is_one() {
        let (score, _) =
            overall_bacc(&[1, -1], &[0, -1], &[1, -1], &[0, 0]).unwrap();
        assert_eq!(score, 1.0);
    }

    #[test]
    fn overall_bacc_one_sided_degenerate() {
        // all disease predicted healthy, all healthy correct -> 0.5
        let (score, counts) =
            overall_bacc(&[1, 1, -1, -1], &[0, 1, -1, -1], &[-1, -1, -1, -1], &[0, 0, 0, 0])
                .unwrap();
        assert_eq!(counts.true_pos, 0);
        assert_eq!(counts.false_neg, 2);
        assert_eq!(counts.false_pos, 0);
        assert_eq!(score, 0.5);
    }

    #[test]
    fn overall_bacc_empty_margin_errors() {
        assert!(matches!(
            overall_bacc(&[-1, -1], &[-1, -1], &[-1, -1], &[0, 0]),
            Err(UcslError::MetricUndefined(_))
        ));
    }

    fn test_model(seed: u64) -> (ModelParams, Centroids) {
        let cfg = ModelConfig::new(4, vec![3], 2, 3, Activation::Relu, seed).unwrap();
        let params = init_params(&cfg);
        let centroids = Centroids::new(
            array![[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]],
            0,
        )
        .unwrap();
        (params, centroids)
    }

    #[test]
    fn predict_uniform_experts_give_half() {
        let (mut params, centroids) = test_model(3);
        params.expert_head.w.fill(0.0);
        params.expert_head.b.fill(0.0);
        let mut rng = seeded_rng(5);
        let x = random_batch(&mut rng, 4, 4);
        let pred = predict(&params, &centroids, &x).unwrap();
        for &p in pred.p_disease.iter() {
            assert!((p - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn predict_one_hot_gating_selects_expert() {
        let (mut params, centroids) = test_model(4);
        // gating hard toward cluster 1 regardless of input
        params.cluster_head.w.fill(0.0);
        params.cluster_head.b = array![-30.0, 30.0, -30.0];
        let mut rng = seeded_rng(6);
        let x = random_batch(&mut rng, 5, 4);
        let pred = predict(&params, &centroids, &x).unwrap();
        let reprs = encode(&params, &x).unwrap();
        let experts = expert_probs(&params, &reprs).unwrap();
        for i in 0..5 {
            assert!((pred.p_disease[i] - experts[[i, 1]]).abs() < 1e-9);
        }
    }

    #[test]
    fn predict_matches_mixture_sum_oracle() {
        let (params, centroids) = test_model(9);
        let mut rng = seeded_rng(10);
        let x = random_batch(&mut rng, 4, 4);
        let pred = predict(&params, &centroids, &x).unwrap();
        let reprs = encode(&params, &x).unwrap();
        let experts = expert_probs(&params, &reprs).unwrap();
        let gating = cluster_probs(&params, &reprs).unwrap();
        for i in 0..4 {
            let direct: f64 = (0..3).map(|kk| experts[[i, kk]] * gating[[i, kk]]).sum();
            assert!((pred.p_disease[i] - direct).abs() < 1e-12);
        }
        // invariants of the batch
        for (i, &c) in pred.hard_class.iter().enumerate() {
            assert_eq!(c, if pred.p_disease[i] >= 0.5 { 1 } else { -1 });
        }
    }

    #[test]
    fn predict_invariant_under_simultaneous_permutation() {
        let (params, centroids) = test_model(12);
        let mut rng = seeded_rng(13);
        let x = random_batch(&mut rng, 6, 4);
        let base = predict(&params, &centroids, &x).unwrap();

        let sigma = Permutation::new(vec![2, 0, 1]).unwrap();
        let mut permuted = params.clone();
        permuted.expert_head = sigma.apply_to_head(&params.expert_head).unwrap();
        permuted.cluster_head = sigma.apply_to_head(&params.cluster_head).unwrap();
        let permuted_centroids = sigma.apply_to_centroids(&centroids).unwrap();
        let shuffled = predict(&permuted, &permuted_centroids, &x).unwrap();
        for i in 0..6 {
            assert!((base.p_disease[i] - shuffled.p_disease[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn predict_representation_subgroups_use_nearest_centroid() {
        let (params, centroids) = test_model(21);
        let mut rng = seeded_rng(22);
        let x = random_batch(&mut rng, 8, 4);
        let pred = predict_with(
            &params,
            &centroids,
            &x,
            ClassifierSource::Mixture,
            SubgroupSource::Representations,
        )
        .unwrap();
        let reprs = encode(&params, &x).unwrap();
        for i in 0..8 {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for j in 0..3 {
                let d: f64 = (&reprs.row(i) - &centroids.means.row(j))
                    .iter()
                    .map(|v| v * v)
                    .sum();
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            assert_eq!(pred.hard_subgroup[i], best);
        }
    }

    #[test]
    fn report_serializes_flat_key_values() {
        let report = MetricsReport {
            class_bacc: 0.975,
            subgroup_bacc: 0.9,
            overall_bacc: 0.85,
            alignment: Permutation::new(vec![1, 0]).unwrap(),
            counts: ConfusionCounts { true_pos: 8, false_pos: 2, true_neg: 9, false_neg: 1 },
        };
        let text = report.to_key_value_lines();
        assert!(text.contains("class_bacc=0.975"));
        assert!(text.contains("alignment=1,0"));
        assert!(text.contains("fn=1"));
    }
}
