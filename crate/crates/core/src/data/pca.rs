//! PCA projection for exporting representation-space coordinates.
//!
//! Fit on a designated set, then apply to any other set with the same width.
//! The covariance eigenproblem is solved with cyclic Jacobi rotations, which
//! is deterministic and more than fast enough at these dimensions. Sign
//! convention: the largest-magnitude loading of every component is positive.

use ndarray::{Array1, Array2};

use crate::error::{Result, UcslError};

/// A fitted projection: centering mean, component rows, and the fraction
/// of total variance each component explains.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    pub mean: Array1<f64>,
    /// `out_dims x d`, orthonormal rows, sorted by decreasing variance.
    pub components: Array2<f64>,
    pub explained: Vec<f64>,
}

impl PcaProjection {
    /// Projects rows of `z` onto the fitted components.
    pub fn project(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        if z.ncols() != self.mean.len() {
            return Err(UcslError::ShapeMismatch(format!(
                "projection fitted on width {}, input has width {}",
                self.mean.len(),
                z.ncols()
            )));
        }
        let centered = z - &self.mean;
        Ok(centered.dot(&self.components.t()))
    }

    pub fn out_dims(&self) -> usize {
        self.components.nrows()
    }
}

/// Jacobi eigendecomposition of a symmetric matrix; returns (eigenvalues,
/// eigenvectors as columns), unsorted.
fn jacobi_eigen(a: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = Array2::eye(n);
    let off = |m: &Array2<f64>| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[[i, j]] * m[[i, j]];
                }
            }
        }
        s
    };
    let scale = a.iter().fold(0.0f64, |acc, &x| acc + x * x).max(1e-300);
    for _sweep in 0..100 {
        if off(&m) <= 1e-28 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..n {
                    let mip = m[[i, p]];
                    let miq = m[[i, q]];
                    m[[i, p]] = c * mip - s * miq;
                    m[[i, q]] = s * mip + c * miq;
                }
                for i in 0..n {
                    let mpi = m[[p, i]];
                    let mqi = m[[q, i]];
                    m[[p, i]] = c * mpi - s * mqi;
                    m[[q, i]] = s * mpi + c * mqi;
                }
                for i in 0..n {
                    let vip = v[[i, p]];
                    let viq = v[[i, q]];
                    v[[i, p]] = c * vip - s * viq;
                    v[[i, q]] = s * vip + c * viq;
                }
            }
        }
    }
    let eigenvalues = Array1::from_iter((0..n).map(|i| m[[i, i]]));
    (eigenvalues, v)
}

/// Fits a PCA on `z_fit`, keeping the top `out_dims` components.
///
/// Errors when the input width is below `out_dims` or the data has no
/// variance at all; a merely rank-deficient covariance is fine (trailing
/// explained fractions are ~0).
pub fn fit_pca(z_fit: &Array2<f64>, out_dims: usize) -> Result<PcaProjection> {
    let n = z_fit.nrows();
    let d = z_fit.ncols();
    if !(2..=3).contains(&out_dims) {
        return Err(UcslError::InvalidConfig(format!("out_dims must be 2 or 3, got {out_dims}")));
    }
    if n < out_dims {
        return Err(UcslError::InsufficientSamples(format!(
            "pca needs at least {out_dims} samples, got {n}"
        )));
    }
    if d < out_dims {
        return Err(UcslError::InvalidConfig(format!(
            "cannot extract {out_dims} components from width {d}"
        )));
    }
    let mean = z_fit.mean_axis(ndarray::Axis(0)).expect("n >= 1");
    let centered = z_fit - &mean;
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let cov = centered.t().dot(&centered) / denom;
    let (eigenvalues, vectors) = jacobi_eigen(&cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigenvalues[b].total_cmp(&eigenvalues[a]));
    let max_eig = eigenvalues[order[0]];
    // roundoff on constant data produces eigenvalues ~ (eps * scale)^2;
    // anything at that level counts as no variance at all
    let data_scale = z_fit.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1e-150);
    if max_eig <= (1e-12 * data_scale).powi(2) {
        return Err(UcslError::DegenerateClustering(format!(
            "data has no variance (attained rank 0 of requested {out_dims})"
        )));
    }
    let total: f64 = eigenvalues.iter().map(|&l| l.max(0.0)).sum();
    let mut components = Array2::zeros((out_dims, d));
    let mut explained = Vec::with_capacity(out_dims);
    for (row, &idx) in order.iter().take(out_dims).enumerate() {
        let mut comp = vectors.column(idx).to_owned();
        // deterministic sign: largest-magnitude loading positive
        let dominant = comp
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if comp[dominant] < 0.0 {
            comp.mapv_inplace(|x| -x);
        }
        components.row_mut(row).assign(&comp);
        explained.push(eigenvalues[idx].max(0.0) / total);
    }
    Ok(PcaProjection { mean, components, explained })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::seeded_rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn line_data_has_tiny_second_fraction() {
        let mut rng = seeded_rng(3);
        let n = 50;
        let mut z = Array2::zeros((n, 2));
        for i in 0..n {
            let t: f64 = rng.sample(StandardNormal);
            z[[i, 0]] = 2.0 * t;
            z[[i, 1]] = -1.0 * t;
        }
        let pca = fit_pca(&z, 2).unwrap();
        assert!(pca.explained[1] <= 1e-9, "second fraction {}", pca.explained[1]);
        assert!((pca.explained[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn isotropic_gaussian_has_uniform_fractions() {
        let mut rng = seeded_rng(7);
        let d = 6;
        let z = Array2::from_shape_fn((10_000, d), |_| rng.sample::<f64, _>(StandardNormal));
        let pca = fit_pca(&z, 3).unwrap();
        for &frac in &pca.explained {
            assert!(
                (frac - 1.0 / d as f64).abs() < 0.02,
                "fraction {frac} far from {}",
                1.0 / d as f64
            );
        }
    }

    #[test]
    fn fit_set_projects_to_zero_mean() {
        let mut rng = seeded_rng(9);
        let z = Array2::from_shape_fn((40, 4), |_| rng.sample::<f64, _>(StandardNormal));
        let pca = fit_pca(&z, 2).unwrap();
        let coords = pca.project(&z).unwrap();
        for j in 0..2 {
            let mean = coords.column(j).sum() / 40.0;
            assert!(mean.abs() < 1e-9, "column {j} mean {mean}");
        }
    }

    #[test]
    fn projection_invariant_to_row_order() {
        let mut rng = seeded_rng(11);
        let z = Array2::from_shape_fn((30, 5), |_| rng.sample::<f64, _>(StandardNormal));
        let pca = fit_pca(&z, 2).unwrap();
        let mut reversed = Array2::zeros((30, 5));
        for i in 0..30 {
            reversed.row_mut(i).assign(&z.row(29 - i));
        }
        let pca_rev = fit_pca(&reversed, 2).unwrap();
        for (a, b) in pca.components.iter().zip(pca_rev.components.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn components_are_orthonormal() {
        let mut rng = seeded_rng(13);
        let z = Array2::from_shape_fn((100, 5), |_| rng.sample::<f64, _>(StandardNormal));
        let pca = fit_pca(&z, 3).unwrap();
        let gram = pca.components.dot(&pca.components.t());
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_variance_is_an_error() {
        let z = Array2::from_elem((10, 3), 4.2);
        let err = fit_pca(&z, 2).unwrap_err();
        assert!(err.to_string().contains("rank 0"), "{err}");
    }

    #[test]
    fn width_below_out_dims_is_an_error() {
        let z = Array2::zeros((10, 1));
        assert!(fit_pca(&z, 2).is_err());
    }

    #[test]
    fn recovers_a_planted_principal_axis() {
        let mut rng = seeded_rng(15);
        let n = 2000;
        let axis = [0.6f64, 0.8];
        let mut z = Array2::zeros((n, 2));
        for i in 0..n {
            let major: f64 = rng.sample::<f64, _>(StandardNormal) * 5.0;
            let minor: f64 = rng.sample::<f64, _>(StandardNormal) * 0.5;
            z[[i, 0]] = major * axis[0] - minor * axis[1];
            z[[i, 1]] = major * axis[1] + minor * axis[0];
        }
        let pca = fit_pca(&z, 2).unwrap();
        let dot = (pca.components[[0, 0]] * axis[0] + pca.components[[0, 1]] * axis[1]).abs();
        assert!(dot > 0.999, "principal axis misaligned, |cos| = {dot}");
    }
}
