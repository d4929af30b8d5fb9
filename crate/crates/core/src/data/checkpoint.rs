//! Structured-text model checkpoints, format version 1.
//!
//! Scalar fields come first as `key=value` lines in a fixed order, followed
//! by optional `metric.*` lines, then every tensor as a
//! `tensor <name> <rows> <cols>` header with one space-separated row per
//! line, and a final `end` marker. Floats are written in shortest
//! round-trip form, so a reloaded model predicts bit-identically.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::clustering::Centroids;
use crate::em::TrainMode;
use crate::error::{Result, UcslError};
use crate::nn::{DenseLayer, ModelConfig, ModelParams};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub format_version: u32,
    pub mode: TrainMode,
    pub model_cfg: ModelConfig,
    pub params: ModelParams,
    pub centroids: Centroids,
    pub train_cfg_digest: String,
    pub final_metrics: Vec<(String, f64)>,
}

impl Checkpoint {
    pub fn new(
        mode: TrainMode,
        model_cfg: ModelConfig,
        params: ModelParams,
        centroids: Centroids,
        train_cfg_digest: String,
        final_metrics: Vec<(String, f64)>,
    ) -> Result<Self> {
        let ckpt = Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            mode,
            model_cfg,
            params,
            centroids,
            train_cfg_digest,
            final_metrics,
        };
        ckpt.check_consistent()?;
        Ok(ckpt)
    }

    fn check_consistent(&self) -> Result<()> {
        self.model_cfg.validate()?;
        let cfg = &self.model_cfg;
        if self.params.encoder.len() != cfg.hidden_dims.len() + 1
            || self.params.input_dim() != cfg.input_dim
            || self.params.repr_dim() != cfg.repr_dim
            || self.params.k_subgroups() != cfg.k_subgroups
            || self.params.activation != cfg.activation
        {
            return Err(UcslError::ShapeMismatch(
                "checkpoint parameters do not match the model config".into(),
            ));
        }
        if self.centroids.k() != cfg.k_subgroups
            || self.centroids.means.ncols() != cfg.repr_dim
        {
            return Err(UcslError::ShapeMismatch(
                "checkpoint centroids do not match the model config".into(),
            ));
        }
        if self.train_cfg_digest.contains('\n') {
            return Err(UcslError::ContractViolation("train_cfg digest contains newline".into()));
        }
        Ok(())
    }

    /// Expected tensors in serialization order: `(name, matrix view)`.
    fn tensors(&self) -> Vec<(String, Array2<f64>)> {
        let mut out = Vec::new();
        for (l, layer) in self.params.encoder.iter().enumerate() {
            out.push((format!("encoder.{l}.w"), layer.w.clone()));
            out.push((format!("encoder.{l}.b"), row_matrix(&layer.b)));
        }
        out.push(("expert_head.w".into(), self.params.expert_head.w.clone()));
        out.push(("expert_head.b".into(), row_matrix(&self.params.expert_head.b)));
        out.push(("cluster_head.w".into(), self.params.cluster_head.w.clone()));
        out.push(("cluster_head.b".into(), row_matrix(&self.params.cluster_head.b)));
        out.push(("centroids".into(), self.centroids.means.clone()));
        out
    }
}

fn row_matrix(v: &Array1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((1, v.len()), |(_, j)| v[j])
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    ckpt.check_consistent()?;
    let cfg = &ckpt.model_cfg;
    let hidden: Vec<String> = cfg.hidden_dims.iter().map(|d| d.to_string()).collect();
    let mut out = String::new();
    out.push_str(&format!("format_version={}\n", ckpt.format_version));
    out.push_str(&format!("mode={}\n", ckpt.mode.name()));
    out.push_str(&format!("input_dim={}\n", cfg.input_dim));
    out.push_str(&format!("hidden_dims={}\n", hidden.join(",")));
    out.push_str(&format!("repr_dim={}\n", cfg.repr_dim));
    out.push_str(&format!("k_subgroups={}\n", cfg.k_subgroups));
    out.push_str(&format!("activation={}\n", cfg.activation.name()));
    out.push_str(&format!("model_seed={}\n", cfg.seed));
    out.push_str(&format!("train_cfg={}\n", ckpt.train_cfg_digest));
    out.push_str(&format!("centroid_epoch={}\n", ckpt.centroids.epoch_tag));
    for (key, value) in &ckpt.final_metrics {
        out.push_str(&format!("metric.{key}={value}\n"));
    }
    for (name, tensor) in ckpt.tensors() {
        out.push_str(&format!("tensor {name} {} {}\n", tensor.nrows(), tensor.ncols()));
        for row in tensor.rows() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
    }
    out.push_str("end\n");
    fs::write(path, out)?;
    Ok(())
}

struct LineReader<'a> {
    lines: std::str::Lines<'a>,
    line_no: usize,
}

impl<'a> LineReader<'a> {
    fn next(&mut self) -> Result<&'a str> {
        self.line_no += 1;
        self.lines
            .next()
            .ok_or(UcslError::Parse { line: self.line_no, msg: "unexpected end of file".into() })
    }

    fn err(&self, msg: impl Into<String>) -> UcslError {
        UcslError::Parse { line: self.line_no, msg: msg.into() }
    }

    fn expect_key(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next()?;
        line.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix('='))
            .ok_or_else(|| self.err(format!("expected '{key}=...', found '{line}'")))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let content = fs::read_to_string(path)?;
    let mut r = LineReader { lines: content.lines(), line_no: 0 };

    let version: u32 = r
        .expect_key("format_version")?
        .parse()
        .map_err(|_| r.err("format_version is not an integer"))?;
    if version != CHECKPOINT_FORMAT_VERSION {
        return Err(r.err(format!(
            "unsupported format_version {version}, this build reads version {CHECKPOINT_FORMAT_VERSION}"
        )));
    }
    let mode = TrainMode::parse(r.expect_key("mode")?)?;
    let input_dim: usize =
        r.expect_key("input_dim")?.parse().map_err(|_| r.err("bad input_dim"))?;
    let hidden_raw = r.expect_key("hidden_dims")?;
    let hidden_dims: Vec<usize> = if hidden_raw.is_empty() {
        Vec::new()
    } else {
        hidden_raw
            .split(',')
            .map(|s| s.parse().map_err(|_| r.err(format!("bad hidden dim '{s}'"))))
            .collect::<Result<_>>()?
    };
    let repr_dim: usize = r.expect_key("repr_dim")?.parse().map_err(|_| r.err("bad repr_dim"))?;
    let k_subgroups: usize =
        r.expect_key("k_subgroups")?.parse().map_err(|_| r.err("bad k_subgroups"))?;
    let activation = crate::nn::Activation::parse(r.expect_key("activation")?)?;
    let seed: u64 = r.expect_key("model_seed")?.parse().map_err(|_| r.err("bad model_seed"))?;
    let train_cfg_digest = r.expect_key("train_cfg")?.to_string();
    let centroid_epoch: usize =
        r.expect_key("centroid_epoch")?.parse().map_err(|_| r.err("bad centroid_epoch"))?;

    let model_cfg =
        ModelConfig::new(input_dim, hidden_dims, repr_dim, k_subgroups, activation, seed)?;

    // optional metric lines, then the first tensor header
    let mut final_metrics = Vec::new();
    let mut pending = r.next()?;
    while let Some(rest) = pending.strip_prefix("metric.") {
        let (key, value) = rest
            .split_once('=')
            .ok_or_else(|| r.err(format!("malformed metric line '{pending}'")))?;
        let value: f64 = value.parse().map_err(|_| r.err(format!("bad metric value '{value}'")))?;
        final_metrics.push((key.to_string(), value));
        pending = r.next()?;
    }

    let mut expected: Vec<(String, usize, usize)> = Vec::new();
    let mut dims = vec![input_dim];
    dims.extend_from_slice(&model_cfg.hidden_dims);
    dims.push(repr_dim);
    for l in 0..dims.len() - 1 {
        expected.push((format!("encoder.{l}.w"), dims[l + 1], dims[l]));
        expected.push((format!("encoder.{l}.b"), 1, dims[l + 1]));
    }
    expected.push(("expert_head.w".into(), k_subgroups, repr_dim));
    expected.push(("expert_head.b".into(), 1, k_subgroups));
    expected.push(("cluster_head.w".into(), k_subgroups, repr_dim));
    expected.push(("cluster_head.b".into(), 1, k_subgroups));
    expected.push(("centroids".into(), k_subgroups, repr_dim));

    let mut tensors: Vec<Array2<f64>> = Vec::with_capacity(expected.len());
    for (name, rows, cols) in &expected {
        let header = pending;
        let parts: Vec<&str> = header.split(' ').collect();
        if parts.len() != 4 || parts[0] != "tensor" {
            return Err(r.err(format!("expected tensor header for '{name}', found '{header}'")));
        }
        if parts[1] != name {
            return Err(r.err(format!("expected tensor '{name}', found '{}'", parts[1])));
        }
        let got_rows: usize = parts[2].parse().map_err(|_| r.err("bad tensor row count"))?;
        let got_cols: usize = parts[3].parse().map_err(|_| r.err("bad tensor column count"))?;
        if got_rows != *rows || got_cols != *cols {
            return Err(r.err(format!(
                "tensor '{name}' has shape {got_rows}x{got_cols}, expected {rows}x{cols}"
            )));
        }
        let mut m = Array2::zeros((*rows, *cols));
        for i in 0..*rows {
            let line = r.next()?;
            let cells: Vec<&str> = line.split(' ').collect();
            if cells.len() != *cols {
                return Err(r.err(format!(
                    "tensor '{name}' row {i} has {} cells, expected {cols}",
                    cells.len()
                )));
            }
            for (j, cell) in cells.iter().enumerate() {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| r.err(format!("bad tensor value '{cell}' in '{name}'")))?;
                if !v.is_finite() {
                    return Err(r.err(format!("non-finite tensor value in '{name}'")));
                }
                m[[i, j]] = v;
            }
        }
        tensors.push(m);
        pending = r.next()?;
    }
    if pending != "end" {
        return Err(r.err(format!("expected 'end', found '{pending}'")));
    }

    let centroids_m = tensors.pop().expect("centroids tensor");
    let cluster_b = tensors.pop().expect("cluster bias");
    let cluster_w = tensors.pop().expect("cluster weights");
    let expert_b = tensors.pop().expect("expert bias");
    let expert_w = tensors.pop().expect("expert weights");
    let mut encoder = Vec::new();
    let mut iter = tensors.into_iter();
    while let (Some(w), Some(b)) = (iter.next(), iter.next()) {
        encoder.push(DenseLayer { w, b: b.row(0).to_owned() });
    }
    let params = ModelParams {
        encoder,
        expert_head: DenseLayer { w: expert_w, b: expert_b.row(0).to_owned() },
        cluster_head: DenseLayer { w: cluster_w, b: cluster_b.row(0).to_owned() },
        activation,
    };
    let centroids = Centroids { means: centroids_m, epoch_tag: centroid_epoch };

    Checkpoint::new(mode, model_cfg, params, centroids, train_cfg_digest, final_metrics)
}
