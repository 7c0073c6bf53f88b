//! Layer-wise linear probes: L2-regularized multinomial logistic regression
//! with the inverse regularization strength chosen by stratified
//! cross-validation on macro-F1.

use std::fs;
use std::path::Path;

use argmin::core::{CostFunction, Executor, Gradient, State};
use argmin::solver::gradientdescent::SteepestDescent;
use argmin::solver::linesearch::condition::ArmijoCondition;
use argmin::solver::linesearch::{BacktrackingLineSearch, MoreThuenteLineSearch};
use argmin::solver::quasinewton::LBFGS;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{write_atomic, TimeSeriesDataset};
use crate::metrics::{macro_f1, macro_f1_hard, F1Report, MetricsError};
use crate::model_bridge::{ActivationStore, BridgeError};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("invalid probe config: {0}")]
    Config(String),
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("optimizer failed: {0}")]
    Solver(String),
    #[error(transparent)]
    Store(#[from] BridgeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub c_grid: Vec<f64>,
    pub folds: usize,
    pub max_iterations: u64,
    pub standardize: bool,
    pub seed: u64,
    /// Gradient-norm threshold for convergence.
    pub tolerance: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            c_grid: vec![1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0],
            folds: 5,
            max_iterations: 1000,
            standardize: true,
            seed: 0,
            tolerance: 1e-4,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<(), ProbeError> {
        if self.folds < 2 {
            return Err(ProbeError::Config("folds must be at least 2".into()));
        }
        if self.c_grid.is_empty() {
            return Err(ProbeError::Config("c_grid is empty".into()));
        }
        if self.c_grid.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(ProbeError::Config("c_grid values must be positive".into()));
        }
        if self.c_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ProbeError::Config("c_grid must be strictly increasing".into()));
        }
        if self.max_iterations == 0 {
            return Err(ProbeError::Config("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Row-major `n × d` design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ProbeError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(ProbeError::Shape(format!(
                    "row {i} has {} features, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ProbeError::Shape("non-finite feature".into()));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn select(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

/// Column means and standard deviations of the training features. Constant
/// columns get a unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    #[serde(with = "f32_b64")]
    pub mean: Vec<f64>,
    #[serde(with = "f32_b64")]
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Self {
        let (n, d) = (x.rows.max(1) as f64, x.cols);
        let mut mean = vec![0.0; d];
        for i in 0..x.rows {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for i in 0..x.rows {
            for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for row in out.data.chunks_mut(x.cols.max(1)) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

/// `(1/N) Σ_i −log softmax(W x_i + b)_{y_i} + ‖W‖² / (2 C N)`; the bias is
/// not penalized. Parameters are `W` (row-major `K × D`) followed by `b`.
#[derive(Debug, Clone, Copy)]
pub struct LogisticObjective<'a> {
    pub x: &'a Matrix,
    pub y: &'a [usize],
    pub num_classes: usize,
    pub c: f64,
}

impl LogisticObjective<'_> {
    pub fn num_params(&self) -> usize {
        self.num_classes * (self.x.cols + 1)
    }

    fn logits(&self, theta: &[f64], row: &[f64], out: &mut [f64]) {
        let d = self.x.cols;
        let bias = &theta[self.num_classes * d..];
        for (k, z) in out.iter_mut().enumerate() {
            let w = &theta[k * d..(k + 1) * d];
            *z = bias[k] + w.iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    pub fn value_and_gradient(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let (n, d, k) = (self.x.rows, self.x.cols, self.num_classes);
        let mut grad = vec![0.0; theta.len()];
        let mut z = vec![0.0; k];
        let mut loss = 0.0;
        for i in 0..n {
            let row = self.x.row(i);
            self.logits(theta, row, &mut z);
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            loss += lse - z[self.y[i]];
            for c in 0..k {
                let p = (z[c] - lse).exp() - if c == self.y[i] { 1.0 } else { 0.0 };
                for (g, v) in grad[c * d..(c + 1) * d].iter_mut().zip(row) {
                    *g += p * v;
                }
                grad[k * d + c] += p;
            }
        }
        let nf = n as f64;
        let penalty = 1.0 / (self.c * nf);
        let w_sq: f64 = theta[..k * d].iter().map(|w| w * w).sum();
        for (j, g) in grad.iter_mut().enumerate() {
            *g /= nf;
            if j < k * d {
                *g += penalty * theta[j];
            }
        }
        (loss / nf + 0.5 * penalty * w_sq, grad)
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        self.value_and_gradient(theta).0
    }
}

impl CostFunction for LogisticObjective<'_> {
    type Param = Vec<f64>;
    type Output = f64;
    fn cost(&self, p: &Self::Param) -> Result<f64, argmin::core::Error> {
        Ok(self.value(p))
    }
}

impl Gradient for LogisticObjective<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;
    fn gradient(&self, p: &Self::Param) -> Result<Vec<f64>, argmin::core::Error> {
        Ok(self.value_and_gradient(p).1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub theta: Vec<f64>,
    pub objective: f64,
    pub gradient_norm: f64,
    pub iterations: u64,
    pub converged: bool,
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Minimize the logistic objective with L-BFGS from zero. A line-search
/// breakdown falls back to steepest descent from the origin.
pub fn fit_logistic(
    x: &Matrix,
    y: &[usize],
    num_classes: usize,
    c: f64,
    max_iterations: u64,
    tolerance: f64,
) -> Result<LogisticFit, ProbeError> {
    let problem = LogisticObjective { x, y, num_classes, c };
    let init = vec![0.0; problem.num_params()];
    let lbfgs = LBFGS::new(MoreThuenteLineSearch::new(), 10)
        .with_tolerance_grad(tolerance)
        .map_err(|e| ProbeError::Solver(e.to_string()))?;
    let run = Executor::new(problem, lbfgs)
        .configure(|s| s.param(init.clone()).max_iters(max_iterations))
        .run();
    let (theta, iterations) = match run {
        Ok(res) => {
            let st = res.state();
            (
                st.get_best_param().cloned().unwrap_or_else(|| init.clone()),
                st.get_iter(),
            )
        }
        Err(e) => {
            log::debug!("L-BFGS stopped ({e}); retrying with steepest descent");
            let ls = BacktrackingLineSearch::new(
                ArmijoCondition::new(1e-4).map_err(|e| ProbeError::Solver(e.to_string()))?,
            );
            let res = Executor::new(problem, SteepestDescent::new(ls))
                .configure(|s| s.param(init.clone()).max_iters(max_iterations))
                .run()
                .map_err(|e| ProbeError::Solver(e.to_string()))?;
            let st = res.state();
            (st.get_best_param().cloned().unwrap_or(init), st.get_iter())
        }
    };
    let (objective, grad) = problem.value_and_gradient(&theta);
    let gradient_norm = l2(&grad);
    Ok(LogisticFit {
        theta,
        objective,
        gradient_norm,
        iterations,
        converged: gradient_norm <= tolerance,
    })
}

/// Fold index per sample: each class is shuffled under `seed` and dealt
/// round-robin, continuing where the previous class stopped.
pub fn stratified_folds(labels: &[usize], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut assignment = vec![0; labels.len()];
    let mut next = 0;
    for class in 0..num_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        for i in members {
            assignment[i] = next % folds;
            next += 1;
        }
    }
    assignment
}

/// A trained probe for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerProbe {
    pub layer_index: usize,
    pub num_classes: usize,
    pub dim: usize,
    /// Row-major `C × D`.
    #[serde(with = "f32_b64")]
    pub weights: Vec<f64>,
    #[serde(with = "f32_b64")]
    pub bias: Vec<f64>,
    pub chosen_c: f64,
    pub standardizer: Option<Standardizer>,
    pub converged: bool,
    pub iterations: u64,
    /// Mean CV macro-F1 per grid value.
    pub cv_scores: Vec<f64>,
}

impl LayerProbe {
    pub fn predict(&self, features: &Matrix) -> Result<Vec<usize>, ProbeError> {
        if features.cols != self.dim {
            return Err(ProbeError::Shape(format!(
                "probe expects {} features, got {}",
                self.dim, features.cols
            )));
        }
        let x = match &self.standardizer {
            Some(s) => s.apply(features),
            None => features.clone(),
        };
        Ok((0..x.rows)
            .map(|i| {
                let row = x.row(i);
                let mut best = (0, f64::NEG_INFINITY);
                for k in 0..self.num_classes {
                    let w = &self.weights[k * self.dim..(k + 1) * self.dim];
                    let z = self.bias[k] + w.iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
                    if z > best.1 {
                        best = (k, z);
                    }
                }
                best.0
            })
            .collect())
    }
}

fn fit_probe_at(
    x: &Matrix,
    y: &[usize],
    num_classes: usize,
    c: f64,
    cfg: &ProbeConfig,
    layer_index: usize,
) -> Result<LayerProbe, ProbeError> {
    let standardizer = cfg.standardize.then(|| Standardizer::fit(x));
    let xs = match &standardizer {
        Some(s) => s.apply(x),
        None => x.clone(),
    };
    let fit = fit_logistic(&xs, y, num_classes, c, cfg.max_iterations, cfg.tolerance)?;
    let split = num_classes * x.cols;
    Ok(LayerProbe {
        layer_index,
        num_classes,
        dim: x.cols,
        weights: fit.theta[..split].to_vec(),
        bias: fit.theta[split..].to_vec(),
        chosen_c: c,
        standardizer,
        converged: fit.converged,
        iterations: fit.iterations,
        cv_scores: Vec::new(),
    })
}

/// Choose `C` by stratified CV macro-F1 (ties → smaller `C`), then refit on
/// all training rows.
pub fn train_probe(
    features: &Matrix,
    labels: &[usize],
    num_classes: usize,
    cfg: &ProbeConfig,
    layer_index: usize,
) -> Result<LayerProbe, ProbeError> {
    cfg.validate()?;
    if features.rows != labels.len() {
        return Err(ProbeError::Shape(format!(
            "{} feature rows, {} labels",
            features.rows,
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(ProbeError::Shape(format!(
            "label {bad} outside {num_classes} classes"
        )));
    }
    let mut counts = vec![0usize; num_classes];
    labels.iter().for_each(|&l| counts[l] += 1);
    if let Some(missing) = counts.iter().position(|&k| k == 0) {
        return Err(ProbeError::DegenerateLabels(format!(
            "class {missing} has no training samples"
        )));
    }
    if features.rows < cfg.folds * num_classes {
        return Err(ProbeError::Precondition(format!(
            "{} training rows cannot fill {} folds × {num_classes} classes",
            features.rows, cfg.folds
        )));
    }
    if features.data.iter().any(|v| !v.is_finite()) {
        return Err(ProbeError::Shape("non-finite feature".into()));
    }
    let assignment = stratified_folds(labels, cfg.folds, cfg.seed);
    let jobs: Vec<(usize, usize)> = (0..cfg.c_grid.len())
        .flat_map(|g| (0..cfg.folds).map(move |f| (g, f)))
        .collect();
    let fold_scores: Vec<f64> = jobs
        .par_iter()
        .map(|&(g, f)| {
            let train_idx: Vec<usize> = (0..labels.len()).filter(|&i| assignment[i] != f).collect();
            let held_idx: Vec<usize> = (0..labels.len()).filter(|&i| assignment[i] == f).collect();
            let y_train: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
            let y_held: Vec<usize> = held_idx.iter().map(|&i| labels[i]).collect();
            let probe = fit_probe_at(
                &features.select(&train_idx),
                &y_train,
                num_classes,
                cfg.c_grid[g],
                cfg,
                layer_index,
            )?;
            let pred = probe.predict(&features.select(&held_idx))?;
            Ok(macro_f1_hard(&y_held, &pred, num_classes)?.macro_f1)
        })
        .collect::<Result<_, ProbeError>>()?;
    let cv_scores: Vec<f64> = fold_scores
        .chunks(cfg.folds)
        .map(|s| s.iter().sum::<f64>() / s.len() as f64)
        .collect();
    let mut best = 0;
    for (g, &s) in cv_scores.iter().enumerate() {
        if s > cv_scores[best] {
            best = g;
        }
    }
    let mut probe = fit_probe_at(features, labels, num_classes, cfg.c_grid[best], cfg, layer_index)?;
    probe.cv_scores = cv_scores;
    if !probe.converged {
        log::warn!(
            "layer {layer_index}: no convergence within {} iterations",
            cfg.max_iterations
        );
    }
    Ok(probe)
}

/// Test metrics of `probe` on argmax predictions.
pub fn evaluate_probe(
    probe: &LayerProbe,
    features: &Matrix,
    labels: &[usize],
) -> Result<F1Report, ProbeError> {
    let pred = probe.predict(features)?;
    Ok(macro_f1_hard(labels, &pred, probe.num_classes)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeCurve {
    pub scores: Vec<f64>,
    pub chosen_c: Vec<f64>,
    pub converged: Vec<bool>,
    pub best_layer: usize,
}

impl ProbeCurve {
    pub fn new(scores: Vec<f64>, chosen_c: Vec<f64>, converged: Vec<bool>) -> Self {
        let mut best_layer = 0;
        for (l, &s) in scores.iter().enumerate() {
            if s > scores[best_layer] {
                best_layer = l;
            }
        }
        ProbeCurve {
            scores,
            chosen_c,
            converged,
            best_layer,
        }
    }

    pub fn best_score(&self) -> f64 {
        self.scores.get(self.best_layer).copied().unwrap_or(0.0)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,macro_f1,chosen_c,converged\n");
        for l in 0..self.scores.len() {
            s.push_str(&format!(
                "{l},{},{},{}\n",
                self.scores[l], self.chosen_c[l], self.converged[l]
            ));
        }
        s
    }
}

/// Per-layer probes, their test predictions and the resulting curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerwiseResult {
    pub curve: ProbeCurve,
    pub probes: Vec<LayerProbe>,
    pub test_ids: Vec<String>,
    pub test_labels: Vec<usize>,
    /// `predictions[layer][sample]`; `None` for samples without activations.
    pub predictions: Vec<Vec<Option<usize>>>,
}

/// Curve, per-layer probes and per-layer test predictions (`None` where a
/// test sample is absent).
pub type LayerwiseFit = (ProbeCurve, Vec<LayerProbe>, Vec<Vec<Option<usize>>>);

/// Train one probe per layer on in-memory features `layers[l][sample]`.
pub fn train_layerwise_features(
    train_layers: &[Vec<Vec<f64>>],
    train_labels: &[usize],
    test_layers: &[Vec<Vec<f64>>],
    test_present: &[bool],
    test_labels: &[usize],
    num_classes: usize,
    cfg: &ProbeConfig,
) -> Result<LayerwiseFit, ProbeError> {
    if train_layers.len() != test_layers.len() {
        return Err(ProbeError::Shape(format!(
            "{} training layers, {} test layers",
            train_layers.len(),
            test_layers.len()
        )));
    }
    let per_layer: Vec<(LayerProbe, Vec<Option<usize>>, f64)> = train_layers
        .par_iter()
        .zip(test_layers.par_iter())
        .enumerate()
        .map(|(l, (tr, te))| {
            let probe = train_probe(&Matrix::from_rows(tr)?, train_labels, num_classes, cfg, l)?;
            let pred = if te.is_empty() {
                Vec::new()
            } else {
                probe.predict(&Matrix::from_rows(te)?)?
            };
            let mut it = pred.into_iter();
            let full: Vec<Option<usize>> = test_present
                .iter()
                .map(|&present| if present { it.next() } else { None })
                .collect();
            let score = macro_f1(test_labels, &full, num_classes)?.macro_f1;
            Ok((probe, full, score))
        })
        .collect::<Result<_, ProbeError>>()?;
    let scores = per_layer.iter().map(|p| p.2).collect();
    let chosen = per_layer.iter().map(|p| p.0.chosen_c).collect();
    let converged = per_layer.iter().map(|p| p.0.converged).collect();
    let mut probes = Vec::new();
    let mut predictions = Vec::new();
    for (p, pred, _) in per_layer {
        probes.push(p);
        predictions.push(pred);
    }
    Ok((ProbeCurve::new(scores, chosen, converged), probes, predictions))
}

/// Probe every layer of a train/test store pair. Test samples missing from
/// the store are scored as FAILURE.
pub fn train_layerwise(
    train: &ActivationStore,
    test: &ActivationStore,
    train_ds: &TimeSeriesDataset,
    test_ds: &TimeSeriesDataset,
    cfg: &ProbeConfig,
) -> Result<LayerwiseResult, ProbeError> {
    if !train.key().is_pair_of(test.key()) {
        return Err(ProbeError::Precondition(
            "train and test stores do not share a lineage".into(),
        ));
    }
    if train.shape() != test.shape() {
        return Err(ProbeError::Precondition(format!(
            "store shapes differ: {:?} vs {:?}",
            train.shape(),
            test.shape()
        )));
    }
    if train_ds.class_names != test_ds.class_names {
        return Err(ProbeError::Precondition(
            "train and test class names differ".into(),
        ));
    }
    let num_classes = train_ds.num_classes();
    let (train_ids, train_labels): (Vec<String>, Vec<usize>) = train_ds
        .sample_ids
        .iter()
        .zip(&train_ds.labels)
        .filter(|(id, _)| train.contains(id))
        .map(|(id, &l)| (id.clone(), l))
        .unzip();
    let present: Vec<bool> = test_ds.sample_ids.iter().map(|id| test.contains(id)).collect();
    let test_ids: Vec<String> = test_ds
        .sample_ids
        .iter()
        .filter(|id| test.contains(id))
        .cloned()
        .collect();
    let train_layers = train.all_layer_features(&train_ids)?;
    let test_layers = test.all_layer_features(&test_ids)?;
    let (curve, probes, predictions) = train_layerwise_features(
        &train_layers,
        &train_labels,
        &test_layers,
        &present,
        &test_ds.labels,
        num_classes,
        cfg,
    )?;
    Ok(LayerwiseResult {
        curve,
        probes,
        test_ids: test_ds.sample_ids.clone(),
        test_labels: test_ds.labels.clone(),
        predictions,
    })
}

/// Write `layer<k>.json` per probe and `curve.csv` into `dir`.
pub fn save_probe_run(dir: &Path, result: &LayerwiseResult) -> Result<(), ProbeError> {
    fs::create_dir_all(dir)?;
    for p in &result.probes {
        let text = serde_json::to_string_pretty(p)?;
        write_atomic(&dir.join(format!("layer{}.json", p.layer_index)), text.as_bytes())?;
    }
    write_atomic(&dir.join("curve.csv"), result.curve.to_csv().as_bytes())?;
    Ok(())
}

pub fn load_probe(path: &Path) -> Result<LayerProbe, ProbeError> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Vectors persisted as base64 little-endian float32.
mod f32_b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let bytes: Vec<u8> = v.iter().flat_map(|&x| (x as f32).to_le_bytes()).collect();
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let text = String::deserialize(d)?;
        let bytes = STANDARD.decode(text).map_err(serde::de::Error::custom)?;
        if bytes.len() % 4 != 0 {
            return Err(serde::de::Error::custom(
                "float32 blob length not a multiple of 4",
            ));
        }
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn blobs(n_per: usize, d: usize, sep: f64, seed: u64) -> (Matrix, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for class in 0..2 {
            for _ in 0..n_per {
                let mut r: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                r[0] += if class == 0 { -sep / 2.0 } else { sep / 2.0 };
                rows.push(r);
                y.push(class);
            }
        }
        (Matrix::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn config_rules() {
        assert!(ProbeConfig::default().validate().is_ok());
        let mut c = ProbeConfig {
            folds: 1,
            ..ProbeConfig::default()
        };
        assert!(c.validate().is_err());
        c = ProbeConfig::default();
        c.c_grid = vec![1.0, 0.1];
        assert!(c.validate().is_err());
        c.c_grid.clear();
        assert!(c.validate().is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (x, y) = blobs(10, 3, 2.0, 1);
        let obj = LogisticObjective {
            x: &x,
            y: &y,
            num_classes: 2,
            c: 0.5,
        };
        let theta: Vec<f64> = (0..obj.num_params()).map(|i| 0.1 * i as f64 - 0.3).collect();
        let (_, g) = obj.value_and_gradient(&theta);
        for j in 0..theta.len() {
            let h = 1e-6;
            let mut a = theta.clone();
            let mut b = theta.clone();
            a[j] += h;
            b[j] -= h;
            let fd = (obj.value(&a) - obj.value(&b)) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-6, "param {j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn folds_partition_and_stratify() {
        let labels: Vec<usize> = (0..53).map(|i| i % 3).collect();
        let f = stratified_folds(&labels, 5, 9);
        for fold in 0..5 {
            for class in 0..3 {
                let k = (0..53).filter(|&i| f[i] == fold && labels[i] == class).count();
                let total = labels.iter().filter(|&&l| l == class).count();
                assert!(k == total / 5 || k == total / 5 + 1);
            }
        }
        assert_eq!(f, stratified_folds(&labels, 5, 9));
    }

    #[test]
    fn separable_blobs_are_perfect() {
        let (x, y) = blobs(30, 8, 10.0, 2);
        let (xt, yt) = blobs(30, 8, 10.0, 3);
        let probe = train_probe(&x, &y, 2, &ProbeConfig::default(), 0).unwrap();
        assert_eq!(evaluate_probe(&probe, &xt, &yt).unwrap().macro_f1, 1.0);
        assert!(ProbeConfig::default().c_grid.contains(&probe.chosen_c));
        assert_eq!(probe.cv_scores.len(), 6);
    }

    #[test]
    fn negated_probe_scores_zero() {
        let (x, y) = blobs(30, 8, 10.0, 2);
        let (xt, yt) = blobs(30, 8, 10.0, 3);
        let mut probe = train_probe(&x, &y, 2, &ProbeConfig::default(), 0).unwrap();
        probe.weights.iter_mut().for_each(|w| *w = -*w);
        probe.bias.iter_mut().for_each(|b| *b = -*b);
        // Every prediction flips: TP = 0 for both classes, so both F1 are 0.
        assert_eq!(evaluate_probe(&probe, &xt, &yt).unwrap().macro_f1, 0.0);
    }

    #[test]
    fn degenerate_and_shape_errors() {
        let (x, _) = blobs(10, 4, 1.0, 0);
        assert!(matches!(
            train_probe(&x, &[0; 20], 2, &ProbeConfig::default(), 0),
            Err(ProbeError::DegenerateLabels(_))
        ));
        let (x, y) = blobs(10, 4, 10.0, 0);
        let probe = train_probe(&x, &y, 2, &ProbeConfig::default(), 0).unwrap();
        let (bad, _) = blobs(2, 5, 1.0, 0);
        assert!(matches!(probe.predict(&bad), Err(ProbeError::Shape(_))));
    }

    #[test]
    fn artifact_roundtrip() {
        let (x, y) = blobs(10, 4, 10.0, 0);
        let probe = train_probe(&x, &y, 2, &ProbeConfig::default(), 3).unwrap();
        let text = serde_json::to_string(&probe).unwrap();
        let back: LayerProbe = serde_json::from_str(&text).unwrap();
        assert_eq!(back.layer_index, 3);
        for (a, b) in back.weights.iter().zip(&probe.weights) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn curve_best_layer() {
        let c = ProbeCurve::new(vec![0.4, 0.9, 0.9, 0.5], vec![1.0; 4], vec![true; 4]);
        assert_eq!(c.best_layer, 1);
        assert!(c
            .to_csv()
            .starts_with("layer,macro_f1,chosen_c,converged\n0,0.4,1,true\n"));
    }
}
