//! Run matrix over (model × dataset × modality × method × style × shots),
//! an append-only result store, and table/figure emission.

mod figures;
mod report;
mod run;

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{BaselineError, HeuristicKind};
use crate::dataset::DatasetError;
use crate::metrics::{macro_f1, MetricsError, PassAtKTable};
use crate::model_bridge::{AdapterConfig, BridgeError, ExtractionStyle, SamplingParams, SkipRecord};
use crate::probes::{ProbeConfig, ProbeCurve, ProbeError};
use crate::prompting::{PromptError, PromptStyle, VariantError, VariantTarget};
use crate::represent::{Modality, RepresentConfig};

pub use figures::{emit_figures, emit_tsne, tsne_2d, FigureOutput, TsnePanel};
pub use report::{emit_tables, load_reference_rows, ReferenceRow, TableLayout, TableOutput};
pub use run::{stability_run, Harness, MatrixSummary, StabilityReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("result store error: {0}")]
    Store(String),
    #[error("audit mismatch in {cell}: {detail}")]
    Audit { cell: String, detail: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Variant(#[from] VariantError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Prompt,
    Probe,
    Heuristic,
    RandomProbe,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Prompt,
        Method::Probe,
        Method::Heuristic,
        Method::RandomProbe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Prompt => "prompt",
            Method::Probe => "probe",
            Method::Heuristic => "heuristic",
            Method::RandomProbe => "random_probe",
        }
    }

    pub fn is_probe(self) -> bool {
        matches!(self, Method::Probe | Method::RandomProbe)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown method {s:?}")))
    }
}

/// A prompt variant within a persisted variant set.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VariantRef {
    /// Content hash of the variant-set file.
    pub set_hash: String,
    pub target: VariantTarget,
    pub id: usize,
}

/// One cell of the run matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    /// `"-"` for label-only heuristics.
    pub model: String,
    pub dataset: String,
    pub modality: Option<Modality>,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heuristic: Option<HeuristicKind>,
    pub style: PromptStyle,
    pub shots: usize,
    /// Drives shot selection, sampling, CV folds, heuristic draws and the
    /// random-control initialization, depending on the method.
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplingParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extraction: Option<ExtractionStyle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<VariantRef>,
    /// Number of seeds averaged by stochastic heuristics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heuristic_seeds: Option<usize>,
}

impl RunSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(format!("{}: {m}", self.label())));
        match self.method {
            Method::Prompt => {
                if self.sampling.is_none() || self.probe.is_some() || self.modality.is_none() {
                    return bad("prompt cells need sampling params and a modality, and no probe config");
                }
            }
            Method::Probe | Method::RandomProbe => {
                if self.probe.is_none() || self.sampling.is_some() || self.modality.is_none() {
                    return bad("probe cells need a probe config and a modality, and no sampling params");
                }
            }
            Method::Heuristic => {
                if self.heuristic.is_none() || self.modality.is_some() {
                    return bad("heuristic cells need a kind and no modality");
                }
            }
        }
        if self.variant.is_some() && self.method != Method::Prompt {
            return bad("prompt variants apply to prompt cells only");
        }
        Ok(())
    }

    /// Method label used in reports: `prompt`, `probe`, `random_probe`, or
    /// the heuristic kind.
    pub fn method_label(&self) -> String {
        match (self.method, self.heuristic) {
            (Method::Heuristic, Some(k)) => k.as_str().to_string(),
            (m, _) => m.as_str().to_string(),
        }
    }

    pub fn modality_label(&self) -> &'static str {
        self.modality.map_or("-", Modality::as_str)
    }

    pub fn label(&self) -> String {
        let mut s = format!(
            "{}/{}/{}/{}/{}/{}shot",
            self.dataset,
            self.model,
            self.modality_label(),
            self.method_label(),
            self.style,
            self.shots
        );
        if let Some(v) = &self.variant {
            s.push_str(&format!("/{}-variant{}", v.target, v.id));
        }
        if let Some(p) = &self.sampling {
            if p.num_samples > 1 {
                s.push_str(&format!("/n{}", p.num_samples));
            }
        }
        s
    }

    /// Extraction style used by probe cells.
    pub fn extraction_style(&self) -> ExtractionStyle {
        self.extraction.unwrap_or(match self.style {
            PromptStyle::Direct => ExtractionStyle::PrefillLastToken,
            PromptStyle::Cot => ExtractionStyle::PostCotLastToken,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed,
}

/// Predictions for every test sample under one tag (`greedy`, `sample3`,
/// `layer7`, `seed12`); `None` is FAILURE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub tag: String,
    pub predicted: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub cell_key: String,
    pub spec: RunSpec,
    pub status: CellStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub num_classes: usize,
    pub sample_ids: Vec<String>,
    pub labels: Vec<usize>,
    pub predictions: Vec<PredictionSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<ProbeCurve>,
    pub metrics: BTreeMap<String, f64>,
    /// Completions that did not parse to an option.
    pub parse_failures: usize,
    pub skips: Vec<SkipRecord>,
    pub wall_clock_ms: u64,
    pub versions: BTreeMap<String, String>,
}

impl RunResult {
    pub fn is_ok(&self) -> bool {
        self.status == CellStatus::Ok
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    /// Headline macro-F1 of the cell.
    pub fn macro_f1(&self) -> Option<f64> {
        self.metric("macro_f1")
    }

    /// Per-item correct counts over `sample*` prediction sets.
    pub fn correct_counts(&self) -> Vec<u64> {
        let sets: Vec<&PredictionSet> = self
            .predictions
            .iter()
            .filter(|p| p.tag.starts_with("sample"))
            .collect();
        (0..self.labels.len())
            .map(|i| {
                sets.iter()
                    .filter(|s| s.predicted[i] == Some(self.labels[i]))
                    .count() as u64
            })
            .collect()
    }

    pub fn pass_at_k(&self) -> Option<PassAtKTable> {
        let n = self
            .predictions
            .iter()
            .filter(|p| p.tag.starts_with("sample"))
            .count() as u64;
        if n < 2 {
            return None;
        }
        PassAtKTable::build(self.correct_counts(), n, &[1, n]).ok()
    }
}

/// Metrics as a pure function of the persisted predictions; used both when
/// a cell runs and when it is audited.
pub fn derive_metrics(
    method: Method,
    predictions: &[PredictionSet],
    labels: &[usize],
    num_classes: usize,
) -> Result<BTreeMap<String, f64>, HarnessError> {
    let mut m = BTreeMap::new();
    let f1 = |p: &PredictionSet| -> Result<f64, HarnessError> {
        Ok(macro_f1(labels, &p.predicted, num_classes)?.macro_f1)
    };
    let failure_rate = |p: &PredictionSet| {
        if labels.is_empty() {
            0.0
        } else {
            p.predicted.iter().filter(|x| x.is_none()).count() as f64 / labels.len() as f64
        }
    };
    match method {
        Method::Prompt => {
            let samples: Vec<&PredictionSet> = predictions
                .iter()
                .filter(|p| p.tag.starts_with("sample"))
                .collect();
            if let Some(g) = predictions.iter().find(|p| p.tag == "greedy") {
                m.insert("macro_f1".into(), f1(g)?);
                m.insert("failure_rate".into(), failure_rate(g));
            } else if !samples.is_empty() {
                let scores = samples.iter().map(|p| f1(p)).collect::<Result<Vec<_>, _>>()?;
                let n = samples.len();
                m.insert("macro_f1".into(), scores.iter().sum::<f64>() / n as f64);
                let fr: f64 = samples.iter().map(|p| failure_rate(p)).sum::<f64>() / n as f64;
                m.insert("failure_rate".into(), fr);
                if n >= 2 {
                    let correct: Vec<u64> = (0..labels.len())
                        .map(|i| {
                            samples
                                .iter()
                                .filter(|s| s.predicted[i] == Some(labels[i]))
                                .count() as u64
                        })
                        .collect();
                    let table = PassAtKTable::build(correct, n as u64, &[1, n as u64])?;
                    let p1 = table.estimate(1).unwrap_or(0.0);
                    let pn = table.estimate(n as u64).unwrap_or(0.0);
                    m.insert("pass_at_1".into(), p1);
                    m.insert(format!("pass_at_{n}"), pn);
                    m.insert("delta_pass_at_k".into(), pn - p1);
                }
            }
        }
        Method::Probe | Method::RandomProbe => {
            let mut best: Option<(usize, f64)> = None;
            for (l, p) in predictions.iter().enumerate() {
                let s = f1(p)?;
                m.insert(format!("macro_f1_layer{l:03}"), s);
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((l, s));
                }
            }
            if let Some((l, s)) = best {
                m.insert("macro_f1".into(), s);
                m.insert("best_layer".into(), l as f64);
            }
        }
        Method::Heuristic => {
            let scores = predictions.iter().map(&f1).collect::<Result<Vec<_>, _>>()?;
            if !scores.is_empty() {
                let n = scores.len() as f64;
                let mean = scores.iter().sum::<f64>() / n;
                let sd = if scores.len() > 1 {
                    (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                } else {
                    0.0
                };
                m.insert("macro_f1".into(), mean);
                m.insert("macro_f1_sd".into(), sd);
            }
        }
    }
    Ok(m)
}

/// One dataset declared in a harness config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub id: String,
    /// Prompt template; relative paths resolve against the config file.
    pub template: PathBuf,
    /// Stratified subsample sizes, drawn under the harness seed.
    #[serde(default)]
    pub max_train: Option<usize>,
    #[serde(default)]
    pub max_test: Option<usize>,
    /// Z-normalize each channel of each sample before it is represented.
    #[serde(default)]
    pub zscore: bool,
    /// Variant-set files used by stability runs.
    #[serde(default)]
    pub variants: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub modalities: Vec<Modality>,
    pub methods: Vec<Method>,
    pub styles: Vec<PromptStyle>,
    pub shots: Vec<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            modalities: Modality::ALL.to_vec(),
            methods: vec![Method::Prompt, Method::Probe],
            styles: vec![PromptStyle::Direct],
            shots: vec![0],
        }
    }
}

fn default_data_root() -> PathBuf {
    PathBuf::from("data")
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_skip_fraction() -> f64 {
    0.1
}

fn default_heuristic_seeds() -> usize {
    20
}

fn default_control_seed() -> u64 {
    1234
}

fn default_main_modality() -> Modality {
    Modality::DigitsAndVisual
}

/// Harness config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_data_root")]
    pub data_root: PathBuf,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_skip_fraction")]
    pub max_skip_fraction: f64,
    #[serde(default = "default_heuristic_seeds")]
    pub heuristic_seeds: usize,
    #[serde(default = "default_control_seed")]
    pub control_seed: u64,
    /// Modality of the model rows in the main table.
    #[serde(default = "default_main_modality")]
    pub main_modality: Modality,
    /// CSV of externally reported scores: `model,method,dataset,macro_f1`.
    #[serde(default)]
    pub reference_scores: Option<PathBuf>,
    #[serde(default)]
    pub extraction: Option<ExtractionStyle>,
    #[serde(default)]
    pub datasets: Vec<DatasetEntry>,
    #[serde(default)]
    pub models: Vec<AdapterConfig>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub sampling: Option<SamplingParams>,
    #[serde(default)]
    pub represent: RepresentConfig,
}

impl HarnessConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Load a config file; relative paths inside it are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text =
            fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.data_root);
        fix(&mut cfg.out_dir);
        if let Some(r) = cfg.reference_scores.as_mut() {
            fix(r);
        }
        for d in &mut cfg.datasets {
            fix(&mut d.template);
            d.variants.iter_mut().for_each(fix);
        }
        Ok(cfg)
    }

    pub fn dataset(&self, id: &str) -> Option<&DatasetEntry> {
        self.datasets.iter().find(|d| d.id == id)
    }

    pub fn model(&self, name: &str) -> Option<&AdapterConfig> {
        self.models.iter().find(|m| m.name == name)
    }

    pub fn greedy(&self) -> SamplingParams {
        self.sampling
            .clone()
            .unwrap_or_else(|| SamplingParams::greedy(self.seed))
    }

    /// A model cell with the config's seeds, sampling and probe settings.
    pub fn model_spec(
        &self,
        model: &str,
        dataset: &str,
        modality: Modality,
        method: Method,
        style: PromptStyle,
        shots: usize,
    ) -> RunSpec {
        let mut probe = self.probe.clone();
        probe.seed = self.seed;
        RunSpec {
            model: model.to_string(),
            dataset: dataset.to_string(),
            modality: Some(modality),
            method,
            heuristic: None,
            style,
            shots,
            seed: if method == Method::RandomProbe {
                self.control_seed
            } else {
                self.seed
            },
            sampling: (method == Method::Prompt).then(|| self.greedy()),
            probe: method.is_probe().then_some(probe),
            extraction: if method.is_probe() { self.extraction } else { None },
            variant: None,
            heuristic_seeds: None,
        }
    }

    /// Enumerate the configured grid: per dataset, the heuristic cells
    /// followed by model × modality × style × shots × method.
    pub fn expand(&self) -> Vec<RunSpec> {
        let mut specs = Vec::new();
        let g = &self.grid;
        for d in &self.datasets {
            if g.methods.contains(&Method::Heuristic) {
                for kind in HeuristicKind::ALL {
                    specs.push(RunSpec {
                        model: "-".into(),
                        dataset: d.id.clone(),
                        modality: None,
                        method: Method::Heuristic,
                        heuristic: Some(kind),
                        style: PromptStyle::Direct,
                        shots: 0,
                        seed: self.seed,
                        sampling: None,
                        probe: None,
                        extraction: None,
                        variant: None,
                        heuristic_seeds: Some(if kind.is_stochastic() {
                            self.heuristic_seeds
                        } else {
                            1
                        }),
                    });
                }
            }
            for m in &self.models {
                for &modality in &g.modalities {
                    for &style in &g.styles {
                        for &shots in &g.shots {
                            for &method in &g.methods {
                                if method != Method::Heuristic {
                                    specs.push(
                                        self.model_spec(&m.name, &d.id, modality, method, style, shots),
                                    );
                                }
                            }
                        }
                    }
                }
            }
        }
        specs
    }
}

/// Append-only JSON-lines store of cell results.
#[derive(Debug)]
pub struct ResultStore {
    dir: PathBuf,
    results: Vec<RunResult>,
}

impl ResultStore {
    pub const FILE: &'static str = "results.jsonl";

    pub fn open(dir: &Path) -> Result<Self, HarnessError> {
        fs::create_dir_all(dir)?;
        let path = dir.join(Self::FILE);
        let mut results = Vec::new();
        if path.exists() {
            for (i, line) in fs::read_to_string(&path)?.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let r: RunResult = serde_json::from_str(line)
                    .map_err(|e| HarnessError::Store(format!("{} line {}: {e}", path.display(), i + 1)))?;
                results.push(r);
            }
        }
        Ok(ResultStore {
            dir: dir.to_path_buf(),
            results,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self) -> PathBuf {
        self.dir.join(Self::FILE)
    }

    pub fn all(&self) -> &[RunResult] {
        &self.results
    }

    /// The latest successful result for every cell, in first-seen order.
    pub fn completed(&self) -> Vec<&RunResult> {
        let mut latest: BTreeMap<&str, usize> = BTreeMap::new();
        let mut order = Vec::new();
        for (i, r) in self.results.iter().enumerate() {
            if r.is_ok() && latest.insert(&r.cell_key, i).is_none() {
                order.push(r.cell_key.as_str());
            }
        }
        order.into_iter().map(|k| &self.results[latest[k]]).collect()
    }

    pub fn get(&self, cell_key: &str) -> Option<&RunResult> {
        self.results
            .iter()
            .rev()
            .find(|r| r.cell_key == cell_key && r.is_ok())
    }

    pub fn append(&mut self, result: RunResult) -> Result<(), HarnessError> {
        let mut line = serde_json::to_string(&result)?;
        line.push('\n');
        let mut f = OpenOptions::new().create(true).append(true).open(self.path())?;
        f.write_all(line.as_bytes())?;
        f.sync_all()?;
        self.results.push(result);
        Ok(())
    }

    /// Recompute every completed cell's metrics from its predictions and
    /// compare bit-for-bit. Returns the number of cells checked.
    pub fn audit(&self) -> Result<usize, HarnessError> {
        let cells = self.completed();
        for r in &cells {
            let again = derive_metrics(r.spec.method, &r.predictions, &r.labels, r.num_classes)?;
            if again.len() != r.metrics.len() {
                return Err(HarnessError::Audit {
                    cell: r.cell_key.clone(),
                    detail: "metric names differ".into(),
                });
            }
            for (k, v) in &again {
                match r.metrics.get(k) {
                    Some(stored) if stored.to_bits() == v.to_bits() => {}
                    other => {
                        return Err(HarnessError::Audit {
                            cell: r.cell_key.clone(),
                            detail: format!("{k}: stored {other:?}, recomputed {v}"),
                        })
                    }
                }
            }
            if let Some(curve) = &r.curve {
                for (l, s) in curve.scores.iter().enumerate() {
                    if r.metrics
                        .get(&format!("macro_f1_layer{l:03}"))
                        .map(|v| v.to_bits())
                        != Some(s.to_bits())
                    {
                        return Err(HarnessError::Audit {
                            cell: r.cell_key.clone(),
                            detail: format!("curve score at layer {l} differs from predictions"),
                        });
                    }
                }
            }
        }
        Ok(cells.len())
    }
}
