//! Label-only floors (majority, prior, uniform) and the random-weight probe
//! control.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::distributions::{Distribution, Uniform, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::TimeSeriesDataset;
use crate::metrics::{macro_f1_hard, MetricsError};
use crate::model_bridge::{
    extract_dataset, make_random_control, ActivationStore, BridgeError, ExtractionStyle, ModelAdapter,
    StoreKey,
};
use crate::probes::{train_layerwise, LayerwiseResult, ProbeConfig, ProbeError};
use crate::prompting::PromptFactory;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeuristicKind {
    Majority,
    Prior,
    Uniform,
}

impl HeuristicKind {
    pub const ALL: [HeuristicKind; 3] = [
        HeuristicKind::Majority,
        HeuristicKind::Prior,
        HeuristicKind::Uniform,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            HeuristicKind::Majority => "majority",
            HeuristicKind::Prior => "prior",
            HeuristicKind::Uniform => "uniform",
        }
    }

    pub fn is_stochastic(self) -> bool {
        self != HeuristicKind::Majority
    }
}

impl fmt::Display for HeuristicKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HeuristicKind {
    type Err = BaselineError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        HeuristicKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| BaselineError::Precondition(format!("unknown heuristic {s:?}")))
    }
}

fn class_counts(train_labels: &[usize], num_classes: usize) -> Result<Vec<usize>, BaselineError> {
    if train_labels.is_empty() {
        return Err(BaselineError::Precondition("no training labels".into()));
    }
    let mut counts = vec![0usize; num_classes];
    for &l in train_labels {
        *counts.get_mut(l).ok_or_else(|| {
            BaselineError::Precondition(format!("label {l} outside {num_classes} classes"))
        })? += 1;
    }
    Ok(counts)
}

/// The modal training class for every test item; ties go to the smaller index.
pub fn majority_predict(
    train_labels: &[usize],
    num_classes: usize,
    n_test: usize,
) -> Result<Vec<usize>, BaselineError> {
    let counts = class_counts(train_labels, num_classes)?;
    let mut modal = 0;
    for (k, &c) in counts.iter().enumerate() {
        if c > counts[modal] {
            modal = k;
        }
    }
    Ok(vec![modal; n_test])
}

/// I.i.d. draws from the empirical training class distribution.
pub fn prior_predict(
    train_labels: &[usize],
    num_classes: usize,
    n_test: usize,
    seed: u64,
) -> Result<Vec<usize>, BaselineError> {
    let counts = class_counts(train_labels, num_classes)?;
    let dist = WeightedIndex::new(&counts).map_err(|e| BaselineError::Precondition(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_test).map(|_| dist.sample(&mut rng)).collect())
}

/// I.i.d. uniform draws over `num_classes ≥ 2` classes.
pub fn uniform_predict(num_classes: usize, n_test: usize, seed: u64) -> Result<Vec<usize>, BaselineError> {
    if num_classes < 2 {
        return Err(BaselineError::Precondition(format!(
            "uniform predictor needs at least 2 classes, got {num_classes}"
        )));
    }
    let dist = Uniform::new(0, num_classes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_test).map(|_| dist.sample(&mut rng)).collect())
}

pub fn heuristic_predict(
    kind: HeuristicKind,
    train_labels: &[usize],
    num_classes: usize,
    n_test: usize,
    seed: u64,
) -> Result<Vec<usize>, BaselineError> {
    match kind {
        HeuristicKind::Majority => majority_predict(train_labels, num_classes, n_test),
        HeuristicKind::Prior => prior_predict(train_labels, num_classes, n_test, seed),
        HeuristicKind::Uniform => uniform_predict(num_classes, n_test, seed),
    }
}

/// Macro-F1 of a heuristic over seeds `base_seed..base_seed + num_seeds`
/// (a single run for the deterministic majority rule).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeuristicScore {
    pub kind: HeuristicKind,
    pub seeds: Vec<u64>,
    pub scores: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub sd: f64,
    /// Predictions of the first seed.
    pub predictions: Vec<usize>,
}

pub fn score_heuristic(
    kind: HeuristicKind,
    train_labels: &[usize],
    test_labels: &[usize],
    num_classes: usize,
    base_seed: u64,
    num_seeds: usize,
) -> Result<HeuristicScore, BaselineError> {
    let runs = if kind.is_stochastic() { num_seeds.max(1) } else { 1 };
    let seeds: Vec<u64> = (0..runs as u64).map(|i| base_seed + i).collect();
    let mut scores = Vec::with_capacity(runs);
    let mut first = Vec::new();
    for (i, &seed) in seeds.iter().enumerate() {
        let pred = heuristic_predict(kind, train_labels, num_classes, test_labels.len(), seed)?;
        scores.push(macro_f1_hard(test_labels, &pred, num_classes)?.macro_f1);
        if i == 0 {
            first = pred;
        }
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let sd = if scores.len() > 1 {
        (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(HeuristicScore {
        kind,
        seeds,
        scores,
        mean,
        sd,
        predictions: first,
    })
}

/// Extract → probe on a random-weight control of `reference`.
#[allow(clippy::too_many_arguments)]
pub fn random_probe_run(
    reference: &dyn ModelAdapter,
    train: &TimeSeriesDataset,
    test: &TimeSeriesDataset,
    factory: &PromptFactory,
    style: ExtractionStyle,
    shot_seed: u64,
    probe_cfg: &ProbeConfig,
    control_seed: u64,
    acts_root: &Path,
    max_skip_fraction: f64,
) -> Result<LayerwiseResult, BaselineError> {
    let control = make_random_control(reference, control_seed)?;
    let spec = control.spec().clone();
    let mut stores = Vec::with_capacity(2);
    for ds in [train, test] {
        let key = StoreKey::new(control.as_ref(), ds, factory, style, shot_seed);
        let mut store = ActivationStore::open(acts_root, key, spec.num_layers, spec.hidden_dim)?;
        extract_dataset(ds, factory, control.as_ref(), &mut store, max_skip_fraction)?;
        stores.push(store);
    }
    Ok(train_layerwise(&stores[0], &stores[1], train, test, probe_cfg)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn majority_rules() {
        let train = [0, 0, 0, 0, 0, 0, 1, 1, 1, 1];
        assert_eq!(majority_predict(&train, 2, 5).unwrap(), vec![0; 5]);
        assert_eq!(majority_predict(&[0, 1, 1, 0], 2, 2).unwrap(), vec![0, 0]);
        assert_eq!(majority_predict(&[2, 1, 2], 3, 1).unwrap(), vec![2]);
        assert!(majority_predict(&[], 2, 1).is_err());
    }

    #[test]
    fn degenerate_prior() {
        assert_eq!(prior_predict(&[1, 1, 1], 3, 50, 4).unwrap(), vec![1; 50]);
    }

    #[test]
    fn seeded_reproducibility() {
        let train = [0, 1, 2, 2];
        assert_eq!(
            prior_predict(&train, 3, 100, 7).unwrap(),
            prior_predict(&train, 3, 100, 7).unwrap()
        );
        assert_eq!(
            uniform_predict(4, 100, 7).unwrap(),
            uniform_predict(4, 100, 7).unwrap()
        );
        assert_ne!(
            uniform_predict(4, 100, 7).unwrap(),
            uniform_predict(4, 100, 8).unwrap()
        );
    }

    #[test]
    fn uniform_needs_two_classes() {
        assert!(uniform_predict(1, 10, 0).is_err());
    }

    #[test]
    fn score_summary() {
        let s = score_heuristic(HeuristicKind::Majority, &[0, 0, 1], &[0, 0, 0, 1, 1], 2, 0, 20).unwrap();
        assert_eq!(s.scores.len(), 1);
        assert_eq!(s.sd, 0.0);
        assert!((s.mean - 0.375).abs() < 1e-12);
        let p = score_heuristic(HeuristicKind::Prior, &[0, 1], &[0, 1, 0, 1], 2, 5, 20).unwrap();
        assert_eq!(p.seeds, (5..25).collect::<Vec<_>>());
        assert_eq!(p.scores.len(), 20);
    }

    #[test]
    fn kind_names() {
        for k in HeuristicKind::ALL {
            assert_eq!(k.as_str().parse::<HeuristicKind>().unwrap(), k);
        }
    }
}
