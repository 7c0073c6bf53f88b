use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::figures::{emit_tsne, FigureOutput, TsnePanel};
use super::{
    derive_metrics, CellStatus, HarnessConfig, HarnessError, Method, PredictionSet, ResultStore, RunResult,
    RunSpec, VariantRef,
};
use crate::baselines::{heuristic_predict, random_probe_run};
use crate::dataset::{sha256_hex, write_atomic, DatasetStore, Split, TimeSeriesDataset};
use crate::metrics::{variant_spread, PassAtKTable, SpreadReport};
use crate::model_bridge::{
    extract_dataset, ActivationStore, ExtractionSummary, ModelAdapter, SamplingParams, SkipRecord, StoreKey,
};
use crate::plot::RENDERER_VERSION;
use crate::probes::{save_probe_run, train_layerwise};
use crate::prompting::{parse_answer, PromptFactory, PromptTemplate, VariantSet};
use crate::represent::{Modality, SERIALIZER_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSummary {
    pub total: usize,
    pub executed: usize,
    pub reused: usize,
    pub failed: usize,
    /// Cell key of every spec, in input order.
    pub cell_keys: Vec<String>,
}

impl MatrixSummary {
    pub fn all_ok(&self) -> bool {
        self.failed == 0
    }
}

struct Splits {
    train: TimeSeriesDataset,
    test: TimeSeriesDataset,
    lineage: BTreeMap<String, String>,
}

/// Executes run specs against a config, persisting into `out_dir`.
pub struct Harness {
    pub config: HarnessConfig,
    pub out_dir: PathBuf,
    datasets: DatasetStore,
    variant_sets: BTreeMap<String, VariantSet>,
}

impl Harness {
    pub fn new(config: HarnessConfig, out_dir: Option<PathBuf>) -> Result<Self, HarnessError> {
        let out_dir = out_dir.unwrap_or_else(|| config.out_dir.clone());
        let datasets = DatasetStore::new(config.data_root.clone());
        let mut h = Harness {
            config,
            out_dir,
            datasets,
            variant_sets: BTreeMap::new(),
        };
        let paths: Vec<PathBuf> = h
            .config
            .datasets
            .iter()
            .flat_map(|d| d.variants.iter().cloned())
            .collect();
        for p in paths {
            h.register_variant_set(VariantSet::load(&p)?);
        }
        Ok(h)
    }

    pub fn results(&self) -> Result<ResultStore, HarnessError> {
        ResultStore::open(&self.out_dir)
    }

    /// Make a variant set addressable by cells; returns its content hash.
    pub fn register_variant_set(&mut self, set: VariantSet) -> String {
        let hash = sha256_hex(&serde_json::to_vec(&set).expect("variant set serializes"))[..16].to_string();
        self.variant_sets.insert(hash.clone(), set);
        hash
    }

    pub fn variant_set(&self, hash: &str) -> Option<&VariantSet> {
        self.variant_sets.get(hash)
    }

    fn splits(&self, id: &str) -> Result<Splits, HarnessError> {
        let entry = self
            .config
            .dataset(id)
            .ok_or_else(|| HarnessError::Config(format!("dataset {id:?} is not configured")))?;
        let manifest = self.datasets.manifest(id)?;
        let mut train = self.datasets.load_split(id, Split::Train)?;
        let mut test = self.datasets.load_split(id, Split::Test)?;
        let mut lineage = BTreeMap::new();
        for (split, m) in &manifest.splits {
            lineage.insert(format!("{split}_sha256"), m.tensor_sha256.clone());
            lineage.insert(format!("{split}_labels_sha256"), m.labels_sha256.clone());
        }
        let seed = self.config.seed;
        if let Some(n) = entry.max_train.filter(|&n| n < train.len()) {
            train = train.stratified_subsample(n, seed);
            lineage.insert("train_subsample".into(), format!("stratified n={n} seed={seed}"));
        }
        if let Some(n) = entry.max_test.filter(|&n| n < test.len()) {
            test = test.stratified_subsample(n, seed);
            lineage.insert("test_subsample".into(), format!("stratified n={n} seed={seed}"));
        }
        if entry.zscore {
            train.zscore_channels();
            test.zscore_channels();
        }
        Ok(Splits { train, test, lineage })
    }

    /// Template for a cell: the dataset's template with the cell's style,
    /// shot count and prompt variant applied.
    pub fn template(&self, spec: &RunSpec) -> Result<PromptTemplate, HarnessError> {
        let entry = self
            .config
            .dataset(&spec.dataset)
            .ok_or_else(|| HarnessError::Config(format!("dataset {:?} is not configured", spec.dataset)))?;
        let base = PromptTemplate::load(&entry.template)?;
        let mut t = match &spec.variant {
            None => base,
            Some(v) => {
                let set = self.variant_set(&v.set_hash).ok_or_else(|| {
                    HarnessError::Config(format!("variant set {} is not registered", v.set_hash))
                })?;
                if set.target != v.target {
                    return Err(HarnessError::Config(format!(
                        "variant set {} targets {}, cell asks for {}",
                        v.set_hash, set.target, v.target
                    )));
                }
                set.apply(v.id).ok_or_else(|| {
                    HarnessError::Config(format!("variant {} missing from set {}", v.id, v.set_hash))
                })?
            }
        };
        t.style = spec.style;
        t.shots_per_class = spec.shots;
        t.validate()?;
        Ok(t)
    }

    /// Content address of a cell: the run spec plus everything that determines
    /// its inputs.
    pub fn cell_key(&self, spec: &RunSpec) -> Result<String, HarnessError> {
        let lineage = self.splits_lineage(&spec.dataset)?;
        let mut doc = json!({
            "spec": spec,
            "data": lineage,
        });
        if spec.method != Method::Heuristic {
            let model = self
                .config
                .model(&spec.model)
                .ok_or_else(|| HarnessError::Config(format!("model {:?} is not configured", spec.model)))?;
            doc["model"] = serde_json::to_value(model)?;
            doc["template"] = json!(self.template(spec)?.content_hash());
            doc["represent"] = serde_json::to_value(&self.config.represent)?;
            doc["renderer"] = json!(RENDERER_VERSION);
            doc["serializer"] = json!(SERIALIZER_VERSION);
            doc["max_skip_fraction"] = json!(self.config.max_skip_fraction);
        }
        Ok(sha256_hex(&serde_json::to_vec(&doc)?)[..20].to_string())
    }

    fn splits_lineage(&self, id: &str) -> Result<BTreeMap<String, String>, HarnessError> {
        let entry = self
            .config
            .dataset(id)
            .ok_or_else(|| HarnessError::Config(format!("dataset {id:?} is not configured")))?;
        let manifest = self.datasets.manifest(id)?;
        let mut lineage = BTreeMap::new();
        for (split, m) in &manifest.splits {
            lineage.insert(format!("{split}_sha256"), m.tensor_sha256.clone());
            lineage.insert(format!("{split}_labels_sha256"), m.labels_sha256.clone());
        }
        lineage.insert("max_train".into(), format!("{:?}", entry.max_train));
        lineage.insert("max_test".into(), format!("{:?}", entry.max_test));
        lineage.insert("subsample_seed".into(), self.config.seed.to_string());
        if entry.zscore {
            lineage.insert("zscore".into(), "per sample and channel".into());
        }
        Ok(lineage)
    }

    /// Execute every spec not already completed. Cells run grouped by model,
    /// so at most one adapter is loaded at a time.
    pub fn run_matrix(&self, specs: &[RunSpec]) -> Result<MatrixSummary, HarnessError> {
        let mut store = self.results()?;
        let mut summary = MatrixSummary {
            total: specs.len(),
            executed: 0,
            reused: 0,
            failed: 0,
            cell_keys: Vec::with_capacity(specs.len()),
        };
        let mut pending: BTreeMap<String, Vec<(usize, String)>> = BTreeMap::new();
        for (i, spec) in specs.iter().enumerate() {
            spec.validate()?;
            let key = self.cell_key(spec)?;
            summary.cell_keys.push(key.clone());
            if store.get(&key).is_some() {
                summary.reused += 1;
                continue;
            }
            let group = if spec.method == Method::Heuristic {
                String::new()
            } else {
                spec.model.clone()
            };
            pending.entry(group).or_default().push((i, key));
        }
        let mut done = std::collections::BTreeSet::new();
        for (model, cells) in pending {
            let adapter: Option<Result<Box<dyn ModelAdapter>, String>> = if model.is_empty() {
                None
            } else {
                Some(
                    self.config
                        .model(&model)
                        .ok_or_else(|| format!("model {model:?} is not configured"))
                        .and_then(|m| m.open().map_err(|e| e.to_string())),
                )
            };
            for (i, key) in cells {
                if !done.insert(key.clone()) {
                    summary.reused += 1;
                    continue;
                }
                let spec = &specs[i];
                log::info!("running {} [{key}]", spec.label());
                let started = Instant::now();
                let outcome = match &adapter {
                    None => self.run_heuristic(spec, &key),
                    Some(Ok(a)) => self.run_model_cell(spec, &key, a.as_ref()),
                    Some(Err(e)) => Err(HarnessError::Config(e.clone())),
                };
                let ms = started.elapsed().as_millis() as u64;
                let result = match outcome {
                    Ok(mut r) => {
                        r.wall_clock_ms = ms;
                        summary.executed += 1;
                        r
                    }
                    Err(e) => {
                        log::error!("{} failed: {e}", spec.label());
                        summary.failed += 1;
                        failed_result(spec, &key, e.to_string(), ms)
                    }
                };
                store.append(result)?;
            }
        }
        Ok(summary)
    }

    fn base_versions(&self, splits: &Splits) -> BTreeMap<String, String> {
        let mut v = splits.lineage.clone();
        v.insert("crate".into(), env!("CARGO_PKG_VERSION").into());
        v
    }

    fn run_heuristic(&self, spec: &RunSpec, key: &str) -> Result<RunResult, HarnessError> {
        let kind = spec
            .heuristic
            .ok_or_else(|| HarnessError::Config("heuristic cell without a kind".into()))?;
        let splits = self.splits(&spec.dataset)?;
        let c = splits.train.num_classes();
        let runs = spec.heuristic_seeds.unwrap_or(1).max(1) as u64;
        let mut predictions = Vec::new();
        for s in spec.seed..spec.seed + runs {
            let pred = heuristic_predict(kind, &splits.train.labels, c, splits.test.len(), s)?;
            predictions.push(PredictionSet {
                tag: format!("seed{s}"),
                predicted: pred.into_iter().map(Some).collect(),
            });
        }
        let mut versions = self.base_versions(&splits);
        versions.insert("heuristic_seeds".into(), runs.to_string());
        self.finish(
            spec,
            key,
            &splits.test,
            predictions,
            None,
            0,
            Vec::new(),
            versions,
        )
    }

    fn run_model_cell(
        &self,
        spec: &RunSpec,
        key: &str,
        adapter: &dyn ModelAdapter,
    ) -> Result<RunResult, HarnessError> {
        let splits = self.splits(&spec.dataset)?;
        let modality = spec
            .modality
            .ok_or_else(|| HarnessError::Config("model cell without a modality".into()))?;
        let template = self.template(spec)?;
        let factory = PromptFactory::new(
            template.clone(),
            modality,
            self.config.represent.clone(),
            Some(&splits.train),
            spec.seed,
        )?;
        let mut versions = self.base_versions(&splits);
        versions.insert("adapter".into(), adapter.version());
        versions.insert("template".into(), template.content_hash());
        versions.insert("renderer".into(), RENDERER_VERSION.into());
        versions.insert("serializer".into(), SERIALIZER_VERSION.into());
        match spec.method {
            Method::Prompt => self.run_prompt(spec, key, adapter, &factory, &splits, versions),
            Method::Probe => self.run_probe(spec, key, adapter, &factory, &splits, versions),
            Method::RandomProbe => {
                let cfg = spec.probe.clone().unwrap_or_default();
                versions.insert("control_seed".into(), spec.seed.to_string());
                let result = random_probe_run(
                    adapter,
                    &splits.train,
                    &splits.test,
                    &factory,
                    spec.extraction_style(),
                    spec.seed,
                    &cfg,
                    spec.seed,
                    &self.out_dir.join("acts"),
                    self.config.max_skip_fraction,
                )?;
                save_probe_run(&self.out_dir.join("probes").join(key), &result)?;
                let sets = layer_sets(&result.predictions);
                self.finish(
                    spec,
                    key,
                    &splits.test,
                    sets,
                    Some(result.curve),
                    0,
                    Vec::new(),
                    versions,
                )
            }
            Method::Heuristic => unreachable!("heuristic cells do not load a model"),
        }
    }

    fn run_prompt(
        &self,
        spec: &RunSpec,
        key: &str,
        adapter: &dyn ModelAdapter,
        factory: &PromptFactory,
        splits: &Splits,
        mut versions: BTreeMap<String, String>,
    ) -> Result<RunResult, HarnessError> {
        let params = spec
            .sampling
            .clone()
            .unwrap_or_else(|| SamplingParams::greedy(spec.seed));
        params.validate()?;
        versions.insert("sampling".into(), serde_json::to_string(&params)?);
        let n = params.num_samples;
        let tags: Vec<String> = if n == 1 {
            vec!["greedy".into()]
        } else {
            (0..n).map(|k| format!("sample{k}")).collect()
        };
        let mut sets: Vec<PredictionSet> = tags
            .into_iter()
            .map(|tag| PredictionSet {
                tag,
                predicted: Vec::with_capacity(splits.test.len()),
            })
            .collect();
        let mut completions = String::new();
        let mut parse_failures = 0;
        let mut skips = Vec::new();
        let total = splits.test.len();
        for i in 0..total {
            let id = &splits.test.sample_ids[i];
            let outcome = factory
                .bundle(&splits.test, i)
                .map_err(HarnessError::from)
                .and_then(|b| Ok((adapter.generate(&b, &params)?, b)));
            match outcome {
                Ok((texts, bundle)) => {
                    for (set, text) in sets.iter_mut().zip(&texts) {
                        let parsed = parse_answer(text, &bundle.answer_schema);
                        if parsed.is_failure() {
                            parse_failures += 1;
                        }
                        set.predicted.push(parsed.class_index(&bundle.answer_schema));
                    }
                    completions.push_str(&serde_json::to_string(&json!({"sample_id": id, "texts": texts}))?);
                    completions.push('\n');
                }
                Err(e) => {
                    log::warn!("{}: skipping {id}: {e}", spec.label());
                    skips.push(SkipRecord {
                        sample_id: id.clone(),
                        reason: e.to_string(),
                    });
                    sets.iter_mut().for_each(|s| s.predicted.push(None));
                    if total > 0 && skips.len() as f64 / total as f64 > self.config.max_skip_fraction {
                        return Err(HarnessError::Bridge(
                            crate::model_bridge::BridgeError::TooManySkips {
                                skipped: skips.len(),
                                total,
                                threshold: self.config.max_skip_fraction,
                            },
                        ));
                    }
                }
            }
        }
        write_atomic(
            &self.out_dir.join("completions").join(format!("{key}.jsonl")),
            completions.as_bytes(),
        )?;
        self.finish(
            spec,
            key,
            &splits.test,
            sets,
            None,
            parse_failures,
            skips,
            versions,
        )
    }

    fn run_probe(
        &self,
        spec: &RunSpec,
        key: &str,
        adapter: &dyn ModelAdapter,
        factory: &PromptFactory,
        splits: &Splits,
        versions: BTreeMap<String, String>,
    ) -> Result<RunResult, HarnessError> {
        let cfg = spec.probe.clone().unwrap_or_default();
        let (stores, summaries) = self.extract_pair(spec, adapter, factory, splits)?;
        let skips = summaries.into_iter().flat_map(|s| s.skipped).collect();
        let result = train_layerwise(&stores[0], &stores[1], &splits.train, &splits.test, &cfg)?;
        save_probe_run(&self.out_dir.join("probes").join(key), &result)?;
        let sets = layer_sets(&result.predictions);
        self.finish(
            spec,
            key,
            &splits.test,
            sets,
            Some(result.curve),
            0,
            skips,
            versions,
        )
    }

    /// Train and test activation stores under `out_dir/acts`, filled in
    /// where records are missing.
    fn extract_pair(
        &self,
        spec: &RunSpec,
        adapter: &dyn ModelAdapter,
        factory: &PromptFactory,
        splits: &Splits,
    ) -> Result<(Vec<ActivationStore>, Vec<ExtractionSummary>), HarnessError> {
        let acts = self.out_dir.join("acts");
        let shape = adapter.spec().clone();
        let mut stores = Vec::with_capacity(2);
        let mut summaries = Vec::with_capacity(2);
        for ds in [&splits.train, &splits.test] {
            let k = StoreKey::new(adapter, ds, factory, spec.extraction_style(), spec.seed);
            let mut store = ActivationStore::open(&acts, k, shape.num_layers, shape.hidden_dim)?;
            summaries.push(extract_dataset(
                ds,
                factory,
                adapter,
                &mut store,
                self.config.max_skip_fraction,
            )?);
            stores.push(store);
        }
        Ok((stores, summaries))
    }

    fn open_cell(
        &self,
        spec: &RunSpec,
    ) -> Result<(Box<dyn ModelAdapter>, PromptFactory, Splits), HarnessError> {
        let model = self
            .config
            .model(&spec.model)
            .ok_or_else(|| HarnessError::Config(format!("model {:?} is not configured", spec.model)))?;
        let modality = spec
            .modality
            .ok_or_else(|| HarnessError::Config("model cell without a modality".into()))?;
        let adapter = model.open()?;
        let splits = self.splits(&spec.dataset)?;
        let factory = PromptFactory::new(
            self.template(spec)?,
            modality,
            self.config.represent.clone(),
            Some(&splits.train),
            spec.seed,
        )?;
        Ok((adapter, factory, splits))
    }

    /// Extract train and test activations for a probe cell without
    /// training; resumes existing stores.
    pub fn extract(&self, spec: &RunSpec) -> Result<Vec<(PathBuf, ExtractionSummary)>, HarnessError> {
        let (adapter, factory, splits) = self.open_cell(spec)?;
        let (stores, summaries) = self.extract_pair(spec, adapter.as_ref(), &factory, &splits)?;
        Ok(stores
            .iter()
            .map(|s| s.dir().to_path_buf())
            .zip(summaries)
            .collect())
    }

    /// t-SNE of the test split for a completed probe cell, one panel each
    /// for the raw series, the best layer and the last layer.
    pub fn tsne_figure(&self, spec: &RunSpec, out_dir: &Path) -> Result<FigureOutput, HarnessError> {
        let key = self.cell_key(spec)?;
        let store = self.results()?;
        let result = store
            .get(&key)
            .ok_or_else(|| HarnessError::Store(format!("{} has no completed result", spec.label())))?;
        let curve = result
            .curve
            .as_ref()
            .ok_or_else(|| HarnessError::Config(format!("{} is not a probe cell", spec.label())))?;
        let (adapter, factory, splits) = self.open_cell(spec)?;
        let (stores, _) = self.extract_pair(spec, adapter.as_ref(), &factory, &splits)?;
        let test = &splits.test;
        let present: Vec<usize> = (0..test.len())
            .filter(|&i| stores[1].contains(&test.sample_ids[i]))
            .collect();
        let ids: Vec<String> = present.iter().map(|&i| test.sample_ids[i].clone()).collect();
        let labels: Vec<usize> = present.iter().map(|&i| test.labels[i]).collect();
        let mut panels = vec![TsnePanel {
            source: "raw series".into(),
            features: present.iter().map(|&i| test.sample(i).to_vec()).collect(),
        }];
        let last = curve.scores.len() - 1;
        let mut layers = vec![curve.best_layer];
        if last != curve.best_layer {
            layers.push(last);
        }
        for l in layers {
            let feats = stores[1].layer_features(l, &ids)?;
            panels.push(TsnePanel {
                source: format!("layer {l}"),
                features: feats
                    .into_iter()
                    .map(|r| r.into_iter().map(|v| v as f32).collect())
                    .collect(),
            });
        }
        let mut out = emit_tsne(
            out_dir,
            &format!("tsne_{key}"),
            &panels,
            &labels,
            &test.class_names,
            spec.seed,
        )?;
        out.warnings.push(format!("t-SNE seed {}", spec.seed));
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        spec: &RunSpec,
        key: &str,
        test: &TimeSeriesDataset,
        predictions: Vec<PredictionSet>,
        curve: Option<crate::probes::ProbeCurve>,
        parse_failures: usize,
        skips: Vec<SkipRecord>,
        versions: BTreeMap<String, String>,
    ) -> Result<RunResult, HarnessError> {
        let c = test.num_classes();
        let metrics = derive_metrics(spec.method, &predictions, &test.labels, c)?;
        Ok(RunResult {
            cell_key: key.to_string(),
            spec: spec.clone(),
            status: CellStatus::Ok,
            error: None,
            num_classes: c,
            sample_ids: test.sample_ids.clone(),
            labels: test.labels.clone(),
            predictions,
            curve,
            metrics,
            parse_failures,
            skips,
            wall_clock_ms: 0,
            versions,
        })
    }
}

fn layer_sets(predictions: &[Vec<Option<usize>>]) -> Vec<PredictionSet> {
    predictions
        .iter()
        .enumerate()
        .map(|(l, p)| PredictionSet {
            tag: format!("layer{l:03}"),
            predicted: p.clone(),
        })
        .collect()
}

fn failed_result(spec: &RunSpec, key: &str, error: String, ms: u64) -> RunResult {
    RunResult {
        cell_key: key.to_string(),
        spec: spec.clone(),
        status: CellStatus::Failed,
        error: Some(error),
        num_classes: 0,
        sample_ids: Vec::new(),
        labels: Vec::new(),
        predictions: Vec::new(),
        curve: None,
        metrics: BTreeMap::new(),
        parse_failures: 0,
        skips: Vec::new(),
        wall_clock_ms: ms,
        versions: BTreeMap::new(),
    }
}

/// Prompt-wording sensitivity (one greedy run per variant) and sampling
/// variability (`n_samples` completions of the base prompt).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub dataset: String,
    pub model: String,
    pub modality: Modality,
    pub variant_set: String,
    pub variant_cells: Vec<String>,
    pub spread: SpreadReport,
    pub sampling_cell: String,
    pub pass_at_k: PassAtKTable,
}

impl StabilityReport {
    pub fn save(&self, dir: &Path) -> Result<PathBuf, HarnessError> {
        fs::create_dir_all(dir)?;
        let path = dir.join(format!(
            "{}-{}-{}-{}.json",
            self.dataset, self.model, self.modality, self.variant_set
        ));
        write_atomic(&path, serde_json::to_string_pretty(self)?.as_bytes())?;
        Ok(path)
    }
}

pub fn stability_run(
    harness: &mut Harness,
    set: VariantSet,
    dataset: &str,
    model: &str,
    modality: Modality,
    n_samples: usize,
) -> Result<StabilityReport, HarnessError> {
    set.check()?;
    let target = set.target;
    let ids: Vec<usize> = set.variants.iter().map(|v| v.id).collect();
    let set_hash = harness.register_variant_set(set);
    let seed = harness.config.seed;
    let base = RunSpec {
        model: model.to_string(),
        dataset: dataset.to_string(),
        modality: Some(modality),
        method: Method::Prompt,
        heuristic: None,
        style: crate::prompting::PromptStyle::Direct,
        shots: 0,
        seed,
        sampling: Some(harness.config.greedy()),
        probe: None,
        extraction: None,
        variant: None,
        heuristic_seeds: None,
    };
    let mut specs: Vec<RunSpec> = ids
        .iter()
        .map(|&id| RunSpec {
            variant: Some(VariantRef {
                set_hash: set_hash.clone(),
                target,
                id,
            }),
            ..base.clone()
        })
        .collect();
    specs.push(RunSpec {
        sampling: Some(SamplingParams::sampled(n_samples, seed)),
        ..base
    });
    let summary = harness.run_matrix(&specs)?;
    let store = harness.results()?;
    let result_for = |key: &String| {
        store
            .get(key)
            .ok_or_else(|| HarnessError::Store(format!("cell {key} did not complete")))
    };
    let (variant_keys, sampling_key) = summary.cell_keys.split_at(ids.len());
    let scores = variant_keys
        .iter()
        .map(|k| result_for(k).map(|r| r.macro_f1().unwrap_or(0.0)))
        .collect::<Result<Vec<_>, _>>()?;
    let sampled = result_for(&sampling_key[0])?;
    let n = n_samples as u64;
    let pass_at_k = PassAtKTable::build(sampled.correct_counts(), n, &[1, n])?;
    Ok(StabilityReport {
        dataset: dataset.to_string(),
        model: model.to_string(),
        modality,
        variant_set: set_hash,
        variant_cells: variant_keys.to_vec(),
        spread: variant_spread(&scores)?,
        sampling_cell: sampling_key[0].clone(),
        pass_at_k,
    })
}
