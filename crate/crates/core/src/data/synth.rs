//! Synthetic benchmark generator.
//!
//! Every sample carries `d_shared` nuisance coordinates drawn from an
//! equal-weight mixture of two Gaussians at `+-nuisance_scale` (a dominant
//! factor of variation common to both classes). Disease samples additionally
//! place their `d_spec` coordinates near one vertex of a centered regular
//! simplex (the subgroup identity); controls sit at the simplex centroid.
//! An optional seeded random rotation mixes the two blocks so that no single
//! input coordinate is informative on its own.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::LabeledDataset;
use crate::error::{Result, UcslError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixMode {
    None,
    RandomRotation,
}

impl MixMode {
    pub fn name(self) -> &'static str {
        match self {
            MixMode::None => "none",
            MixMode::RandomRotation => "random_rotation",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(MixMode::None),
            "random_rotation" => Ok(MixMode::RandomRotation),
            other => Err(UcslError::InvalidConfig(format!(
                "unknown mix mode '{other}', expected none or random_rotation"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_pos: usize,
    pub n_neg: usize,
    pub k: usize,
    pub d_shared: usize,
    pub d_spec: usize,
    pub nuisance_scale: f64,
    pub subgroup_separation: f64,
    pub noise_sigma: f64,
    pub mix: MixMode,
    /// Drives the per-sample draws.
    pub seed: u64,
    /// Drives the mixing rotation; kept equal across train/test splits so
    /// both come from the same distribution.
    pub rotation_seed: u64,
}

impl SynthConfig {
    /// Defaults for everything except sample counts, K, and seed.
    pub fn new(n_pos: usize, n_neg: usize, k: usize, seed: u64) -> Self {
        Self {
            n_pos,
            n_neg,
            k,
            d_shared: 8,
            d_spec: 2,
            nuisance_scale: 3.0,
            subgroup_separation: 1.0,
            noise_sigma: 0.3,
            mix: MixMode::RandomRotation,
            seed,
            rotation_seed: seed,
        }
    }

    /// Same distribution (including the rotation), fresh sample draws.
    pub fn resampled(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn dim(&self) -> usize {
        self.d_shared + self.d_spec
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_pos + self.n_neg == 0 {
            return Err(UcslError::InvalidConfig("need at least one sample".into()));
        }
        if self.k < 2 {
            return Err(UcslError::InvalidConfig(format!("k must be >= 2, got {}", self.k)));
        }
        if self.dim() < 2 {
            return Err(UcslError::InvalidConfig("d_shared + d_spec must be >= 2".into()));
        }
        if self.d_spec < self.k - 1 {
            return Err(UcslError::InvalidConfig(format!(
                "simplex does not fit: d_spec = {} < K - 1 = {}",
                self.d_spec,
                self.k - 1
            )));
        }
        if !(self.nuisance_scale > 0.0 && self.subgroup_separation > 0.0 && self.noise_sigma > 0.0)
        {
            return Err(UcslError::InvalidConfig("scales must be > 0".into()));
        }
        Ok(())
    }
}

/// Vertices of a centered regular simplex with `k` corners embedded in
/// `d_spec` dimensions, scaled to pairwise distance `2 * separation`.
pub fn simplex_vertices(k: usize, d_spec: usize, separation: f64) -> Result<Array2<f64>> {
    if d_spec < k - 1 {
        return Err(UcslError::InvalidConfig(format!(
            "simplex does not fit: d_spec = {d_spec} < K - 1 = {}",
            k - 1
        )));
    }
    // centered unit-basis construction in R^k, orthonormalized to k-1 coords
    let mut centered = Array2::from_elem((k, k), -1.0 / k as f64);
    for i in 0..k {
        centered[[i, i]] += 1.0;
    }
    // Gram-Schmidt on the first k-1 centered rows spans the simplex plane
    let mut basis: Vec<Array1<f64>> = Vec::with_capacity(k - 1);
    for i in 0..k - 1 {
        let mut v = centered.row(i).to_owned();
        for b in &basis {
            let coef = v.dot(b);
            v.scaled_add(-coef, b);
        }
        let norm = v.dot(&v).sqrt();
        v.mapv_inplace(|x| x / norm);
        basis.push(v);
    }
    // coordinates scaled from edge sqrt(2) to 2 * separation
    let scale = separation * std::f64::consts::SQRT_2;
    let mut vertices = Array2::zeros((k, d_spec));
    for i in 0..k {
        for (j, b) in basis.iter().enumerate() {
            vertices[[i, j]] = centered.row(i).dot(b) * scale;
        }
    }
    Ok(vertices)
}

use crate::seeds::splitmix64;

/// Seeded random orthogonal matrix via modified Gram-Schmidt on a Gaussian
/// draw; deterministic given the seed.
fn random_orthogonal(d: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Array2::from_shape_fn((d, d), |_| rng.sample::<f64, _>(StandardNormal));
    let mut q = Array2::<f64>::zeros((d, d));
    for j in 0..d {
        let mut v = g.column(j).to_owned();
        for _pass in 0..2 {
            for i in 0..j {
                let coef = v.dot(&q.column(i));
                let qi = q.column(i).to_owned();
                v.scaled_add(-coef, &qi);
            }
        }
        let norm = v.dot(&v).sqrt();
        v.mapv_inplace(|x| x / norm);
        q.column_mut(j).assign(&v);
    }
    q
}

/// The rotation the generator applies for this config, or `None` when
/// `mix = none`. Exposed so tests can unmix generated data.
pub fn rotation_matrix(cfg: &SynthConfig) -> Option<Array2<f64>> {
    match cfg.mix {
        MixMode::None => None,
        MixMode::RandomRotation => {
            Some(random_orthogonal(cfg.dim(), splitmix64(cfg.rotation_seed ^ 0x526f74)))
        }
    }
}

/// Generates the benchmark dataset; positives first, then controls.
/// Deterministic given `cfg.seed`.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<LabeledDataset> {
    cfg.validate()?;
    let vertices = simplex_vertices(cfg.k, cfg.d_spec, cfg.subgroup_separation)?;
    let n = cfg.n_pos + cfg.n_neg;
    let d = cfg.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = Array2::zeros((n, d));
    let mut y = Vec::with_capacity(n);
    let mut c_true = Vec::with_capacity(n);
    for i in 0..n {
        let positive = i < cfg.n_pos;
        let mode: f64 = if rng.random::<bool>() { 1.0 } else { -1.0 };
        for j in 0..cfg.d_shared {
            x[[i, j]] = mode * cfg.nuisance_scale
                + cfg.noise_sigma * rng.sample::<f64, _>(StandardNormal);
        }
        if positive {
            let c = rng.random_range(0..cfg.k);
            for j in 0..cfg.d_spec {
                x[[i, cfg.d_shared + j]] =
                    vertices[[c, j]] + cfg.noise_sigma * rng.sample::<f64, _>(StandardNormal);
            }
            y.push(1);
            c_true.push(c as i32);
        } else {
            for j in 0..cfg.d_spec {
                x[[i, cfg.d_shared + j]] =
                    cfg.noise_sigma * rng.sample::<f64, _>(StandardNormal);
            }
            y.push(-1);
            c_true.push(-1);
        }
    }
    if let Some(r) = rotation_matrix(cfg) {
        x = x.dot(&r.t());
    }
    LabeledDataset::new(x, y, c_true)
}
