//! The two training loss terms, shared by the backward pass and the trainer.
//!
//! Both losses are means over the batch and are minimized; the training
//! objective they descend is the negated lower bound on the joint conditional
//! log-likelihood (see [`crate::em::elbo_lower_bound`]).

use ndarray::Array2;

use crate::error::{Result, UcslError};

/// Probabilities are floored at this value before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

const ROW_SUM_TOL: f64 = 1e-6;

/// Relative weights of the two loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub moe: f64,
    pub clustering: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { moe: 1.0, clustering: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.moe < 0.0 || self.clustering < 0.0 || !self.moe.is_finite() || !self.clustering.is_finite() {
            return Err(UcslError::ContractViolation(format!(
                "loss weights must be finite and >= 0, got ({}, {})",
                self.moe, self.clustering
            )));
        }
        Ok(())
    }
}

pub(crate) fn check_row_stochastic(m: &Array2<f64>, name: &str) -> Result<()> {
    for (i, row) in m.rows().into_iter().enumerate() {
        let mut sum = 0.0;
        for &v in row.iter() {
            if !(v >= 0.0) {
                return Err(UcslError::ContractViolation(format!(
                    "{name} row {i} has negative or NaN entry {v}"
                )));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(UcslError::ContractViolation(format!(
                "{name} row {i} sums to {sum}, expected 1"
            )));
        }
    }
    Ok(())
}

pub(crate) fn check_labels(y: &[i8]) -> Result<()> {
    for (i, &v) in y.iter().enumerate() {
        if v != -1 && v != 1 {
            return Err(UcslError::ContractViolation(format!(
                "label at index {i} is {v}, expected -1 or +1"
            )));
        }
    }
    Ok(())
}

/// Mixture-of-classifying-experts loss.
///
/// `-(1/B) * sum_i sum_k q_ik * (y~_i log p_ik + (1 - y~_i) log(1 - p_ik))`
/// with `y~ = (y+1)/2`. Control samples participate through their uniform
/// pseudo-label rows, giving each expert weight `1/K`.
pub fn moe_loss(expert_p: &Array2<f64>, y: &[i8], q: &Array2<f64>) -> Result<f64> {
    let (b, k) = expert_p.dim();
    if q.dim() != (b, k) || y.len() != b {
        return Err(UcslError::ShapeMismatch(format!(
            "moe_loss: expert_p {:?}, q {:?}, y len {}",
            expert_p.dim(),
            q.dim(),
            y.len()
        )));
    }
    check_labels(y)?;
    check_row_stochastic(q, "q")?;
    if b == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for i in 0..b {
        let target = if y[i] == 1 { 1.0 } else { 0.0 };
        for j in 0..k {
            let p = expert_p[[i, j]];
            total += q[[i, j]] * (target * p.ln() + (1.0 - target) * (1.0 - p).ln());
        }
    }
    let loss = -total / b as f64;
    if !loss.is_finite() {
        return Err(UcslError::Numeric(
            "mixture-of-experts loss is non-finite (expert probability hit 0 or 1)".into(),
        ));
    }
    Ok(loss)
}

/// Clustering regularization loss: mean per-sample `KL(q_i || s_i)`.
///
/// Uses the conventions `0 * log 0 = 0` and `s` floored at [`PROB_FLOOR`].
/// With `q` frozen this has the same gradient as the cross-entropy
/// `-sum q log s`.
pub fn clustering_loss(cluster_p: &Array2<f64>, q: &Array2<f64>) -> Result<f64> {
    let (b, k) = cluster_p.dim();
    if q.dim() != (b, k) {
        return Err(UcslError::ShapeMismatch(format!(
            "clustering_loss: cluster_p {:?}, q {:?}",
            cluster_p.dim(),
            q.dim()
        )));
    }
    check_row_stochastic(q, "q")?;
    check_row_stochastic(cluster_p, "cluster_p")?;
    if b == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for i in 0..b {
        for j in 0..k {
            let qv = q[[i, j]];
            if qv > 0.0 {
                let s = cluster_p[[i, j]].max(PROB_FLOOR);
                total += qv * (qv.ln() - s.ln());
            }
        }
    }
    let loss = total / b as f64;
    if !loss.is_finite() {
        return Err(UcslError::Numeric("clustering loss is non-finite".into()));
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn moe_loss_half_probs_is_ln2() {
        let p = Array2::from_elem((3, 2), 0.5);
        let q = array![[0.3, 0.7], [1.0, 0.0], [0.5, 0.5]];
        let y = [1i8, -1, 1];
        let loss = moe_loss(&p, &y, &q).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn moe_loss_perfect_expert_is_tiny() {
        // p at the sigmoid(+-30) saturation levels, one-hot q.
        let hi = 1.0 / (1.0 + (-30.0f64).exp());
        let lo = 1.0 - hi;
        let p = array![[hi, 0.5], [lo, 0.5]];
        let q = array![[1.0, 0.0], [1.0, 0.0]];
        let y = [1i8, -1];
        let loss = moe_loss(&p, &y, &q).unwrap();
        assert!(loss >= 0.0 && loss <= 1e-9, "loss = {loss}");
    }

    #[test]
    fn moe_loss_matches_double_sum_oracle() {
        let p = array![[0.3, 0.8], [0.6, 0.2]];
        let q = array![[0.25, 0.75], [0.9, 0.1]];
        let y = [1i8, -1];
        // direct scalar evaluation
        let mut acc = 0.0;
        for i in 0..2 {
            let t: f64 = if y[i] == 1 { 1.0 } else { 0.0 };
            for j in 0..2 {
                let pv: f64 = p[[i, j]];
                acc += q[[i, j]] * (t * pv.ln() + (1.0 - t) * (1.0 - pv).ln());
            }
        }
        let expected = -acc / 2.0;
        let loss = moe_loss(&p, &y, &q).unwrap();
        assert!((loss - expected).abs() < 1e-15);
    }

    #[test]
    fn moe_loss_rejects_bad_rows() {
        let p = Array2::from_elem((1, 2), 0.5);
        let q = array![[0.9, 0.3]];
        assert!(matches!(
            moe_loss(&p, &[1], &q),
            Err(UcslError::ContractViolation(_))
        ));
    }

    #[test]
    fn clustering_loss_identity_is_zero() {
        let q = array![[0.2, 0.8], [0.5, 0.5]];
        let loss = clustering_loss(&q, &q).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn clustering_loss_onehot_vs_uniform_is_ln2() {
        let s = array![[0.5, 0.5]];
        let q = array![[1.0, 0.0]];
        let loss = clustering_loss(&s, &q).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn clustering_loss_uniform_any_k() {
        for k in 2..6 {
            let s = Array2::from_elem((4, k), 1.0 / k as f64);
            let loss = clustering_loss(&s, &s).unwrap();
            assert!(loss.abs() < 1e-12);
        }
    }
}
