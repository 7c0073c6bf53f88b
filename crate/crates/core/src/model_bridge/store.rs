//! Content-addressed activation store: `<root>/<key-hash>/meta.json` plus one
//! row-major little-endian float32 blob per sample.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ActivationRecord, BridgeError, ExtractionStyle, ModelAdapter};
use crate::dataset::{decode_f32, sha256_hex, write_atomic, Split, TimeSeriesDataset};
use crate::plot::RENDERER_VERSION;
use crate::prompting::PromptFactory;
use crate::represent::{Modality, SERIALIZER_VERSION};

/// Everything that determines the bytes of a store.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StoreKey {
    pub model: String,
    pub model_version: String,
    pub dataset: String,
    pub split: Split,
    pub modality: Modality,
    pub style: ExtractionStyle,
    pub template_hash: String,
    pub shot_seed: u64,
    pub renderer_version: String,
    pub serializer_version: String,
    /// Hash of the serializer and renderer settings.
    pub represent_hash: String,
}

impl StoreKey {
    pub fn new(
        adapter: &dyn ModelAdapter,
        dataset: &TimeSeriesDataset,
        factory: &PromptFactory,
        style: ExtractionStyle,
        shot_seed: u64,
    ) -> Self {
        let represent = serde_json::to_vec(&factory.config).expect("config serializes");
        StoreKey {
            model: adapter.spec().name.clone(),
            model_version: adapter.version(),
            dataset: dataset.id.clone(),
            split: dataset.split,
            modality: factory.modality,
            style,
            template_hash: factory.template.content_hash(),
            shot_seed,
            renderer_version: RENDERER_VERSION.into(),
            serializer_version: SERIALIZER_VERSION.into(),
            represent_hash: sha256_hex(&represent),
        }
    }

    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("key serializes");
        sha256_hex(&bytes)[..16].to_string()
    }

    /// Same lineage except for the split: a train/test store pair.
    pub fn is_pair_of(&self, other: &StoreKey) -> bool {
        let mut a = self.clone();
        a.split = other.split;
        &a == other && self.split != other.split
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub sample_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreMeta {
    pub key: StoreKey,
    pub key_hash: String,
    pub num_layers: usize,
    pub hidden_dim: usize,
    /// sample id → prompt hash, for every stored record.
    pub records: BTreeMap<String, String>,
    pub skips: Vec<SkipRecord>,
}

#[derive(Debug, Clone)]
pub struct ActivationStore {
    dir: PathBuf,
    meta: StoreMeta,
}

fn blob_name(sample_id: &str) -> Result<String, BridgeError> {
    if sample_id.is_empty() || sample_id.starts_with('.') || sample_id.contains(['/', '\\', '\n']) {
        return Err(BridgeError::Store(format!(
            "sample id {sample_id:?} is not a file name"
        )));
    }
    Ok(format!("{sample_id}.f32"))
}

impl ActivationStore {
    /// Open the store for `key` under `root`, creating it when absent.
    pub fn open(
        root: &Path,
        key: StoreKey,
        num_layers: usize,
        hidden_dim: usize,
    ) -> Result<Self, BridgeError> {
        let key_hash = key.hash();
        let dir = root.join(&key_hash);
        if dir.join("meta.json").exists() {
            let store = Self::load(&dir)?;
            if store.meta.key != key {
                return Err(BridgeError::Store(format!(
                    "{} holds a different key",
                    dir.display()
                )));
            }
            if (store.meta.num_layers, store.meta.hidden_dim) != (num_layers, hidden_dim) {
                return Err(BridgeError::Store(format!(
                    "{} has shape L={} D={}, adapter reports L={num_layers} D={hidden_dim}",
                    dir.display(),
                    store.meta.num_layers,
                    store.meta.hidden_dim
                )));
            }
            return Ok(store);
        }
        let store = ActivationStore {
            dir,
            meta: StoreMeta {
                key,
                key_hash,
                num_layers,
                hidden_dim,
                records: BTreeMap::new(),
                skips: Vec::new(),
            },
        };
        store.save_meta()?;
        Ok(store)
    }

    /// Open an existing store directory.
    pub fn load(dir: &Path) -> Result<Self, BridgeError> {
        let text = fs::read_to_string(dir.join("meta.json"))
            .map_err(|e| BridgeError::Store(format!("{}: {e}", dir.display())))?;
        let meta: StoreMeta =
            serde_json::from_str(&text).map_err(|e| BridgeError::Store(format!("{}: {e}", dir.display())))?;
        if meta.key.hash() != meta.key_hash {
            return Err(BridgeError::Store(format!(
                "{}: key hash does not match key",
                dir.display()
            )));
        }
        Ok(ActivationStore {
            dir: dir.to_path_buf(),
            meta,
        })
    }

    fn save_meta(&self) -> Result<(), BridgeError> {
        let text = serde_json::to_string_pretty(&self.meta).expect("meta serializes");
        write_atomic(&self.dir.join("meta.json"), text.as_bytes())?;
        Ok(())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn meta(&self) -> &StoreMeta {
        &self.meta
    }

    pub fn key(&self) -> &StoreKey {
        &self.meta.key
    }

    /// `(L + 1, D)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.meta.num_layers + 1, self.meta.hidden_dim)
    }

    pub fn contains(&self, sample_id: &str) -> bool {
        self.meta.records.contains_key(sample_id)
    }

    pub fn len(&self) -> usize {
        self.meta.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.records.is_empty()
    }

    pub fn sample_ids(&self) -> impl Iterator<Item = &String> {
        self.meta.records.keys()
    }

    /// Append a record. Existing records are never rewritten; offering one
    /// again is a no-op.
    pub fn put(&mut self, record: &ActivationRecord) -> Result<bool, BridgeError> {
        if (record.rows, record.cols) != self.shape() {
            return Err(BridgeError::Store(format!(
                "record {} is {}×{}, store holds {}×{}",
                record.sample_id,
                record.rows,
                record.cols,
                self.shape().0,
                self.shape().1
            )));
        }
        if record.style != self.meta.key.style {
            return Err(BridgeError::Store(format!(
                "record {} was extracted with {}, store expects {}",
                record.sample_id, record.style, self.meta.key.style
            )));
        }
        if self.contains(&record.sample_id) {
            return Ok(false);
        }
        let bytes: Vec<u8> = record.matrix.iter().flat_map(|v| v.to_le_bytes()).collect();
        write_atomic(&self.dir.join(blob_name(&record.sample_id)?), &bytes)?;
        self.meta
            .records
            .insert(record.sample_id.clone(), record.prompt_hash.clone());
        self.meta.skips.retain(|s| s.sample_id != record.sample_id);
        self.save_meta()?;
        Ok(true)
    }

    pub fn record_skip(&mut self, sample_id: &str, reason: &str) -> Result<(), BridgeError> {
        self.meta.skips.retain(|s| s.sample_id != sample_id);
        self.meta.skips.push(SkipRecord {
            sample_id: sample_id.to_string(),
            reason: reason.to_string(),
        });
        self.save_meta()
    }

    pub fn get(&self, sample_id: &str) -> Result<ActivationRecord, BridgeError> {
        let prompt_hash = self
            .meta
            .records
            .get(sample_id)
            .ok_or_else(|| BridgeError::Store(format!("no record for {sample_id}")))?;
        let path = self.dir.join(blob_name(sample_id)?);
        let bytes = fs::read(&path).map_err(|e| BridgeError::Store(format!("{}: {e}", path.display())))?;
        let (rows, cols) = self.shape();
        let matrix = decode_f32(&bytes)
            .filter(|m| m.len() == rows * cols)
            .ok_or_else(|| BridgeError::Store(format!("{} has the wrong size", path.display())))?;
        Ok(ActivationRecord {
            sample_id: sample_id.to_string(),
            prompt_hash: prompt_hash.clone(),
            style: self.meta.key.style,
            rows,
            cols,
            matrix,
        })
    }

    /// Layer-`layer` features of `sample_ids`, one row each.
    pub fn layer_features(&self, layer: usize, sample_ids: &[String]) -> Result<Vec<Vec<f64>>, BridgeError> {
        if layer > self.meta.num_layers {
            return Err(BridgeError::Store(format!(
                "layer {layer} outside 0..={}",
                self.meta.num_layers
            )));
        }
        sample_ids
            .iter()
            .map(|id| Ok(self.get(id)?.layer(layer).iter().map(|&v| v as f64).collect()))
            .collect()
    }

    /// All layers of `sample_ids`: `out[layer][sample]`.
    pub fn all_layer_features(&self, sample_ids: &[String]) -> Result<Vec<Vec<Vec<f64>>>, BridgeError> {
        let (rows, _) = self.shape();
        let mut out = vec![Vec::with_capacity(sample_ids.len()); rows];
        for id in sample_ids {
            let rec = self.get(id)?;
            for (l, layer) in out.iter_mut().enumerate() {
                layer.push(rec.layer(l).iter().map(|&v| v as f64).collect());
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionSummary {
    pub total: usize,
    pub computed: usize,
    pub reused: usize,
    pub skipped: Vec<SkipRecord>,
}

/// Extract hidden states for every sample of `dataset` into `store`.
///
/// Samples already present are not recomputed. Per-sample failures are
/// recorded as skips; the job fails once the skipped fraction exceeds
/// `max_skip_fraction`.
pub fn extract_dataset(
    dataset: &TimeSeriesDataset,
    factory: &PromptFactory,
    adapter: &dyn ModelAdapter,
    store: &mut ActivationStore,
    max_skip_fraction: f64,
) -> Result<ExtractionSummary, BridgeError> {
    let key = store.key().clone();
    let spec = adapter.spec();
    let mismatch = key.dataset != dataset.id
        || key.split != dataset.split
        || key.modality != factory.modality
        || key.model != spec.name
        || key.model_version != adapter.version()
        || key.template_hash != factory.template.content_hash()
        || store.meta.num_layers != spec.num_layers
        || store.meta.hidden_dim != spec.hidden_dim;
    if mismatch {
        return Err(BridgeError::Precondition(format!(
            "store {} does not match the extraction arguments",
            store.meta.key_hash
        )));
    }
    let total = dataset.len();
    let mut summary = ExtractionSummary {
        total,
        computed: 0,
        reused: 0,
        skipped: Vec::new(),
    };
    let too_many = |skipped: usize| total > 0 && skipped as f64 / total as f64 > max_skip_fraction;
    for i in 0..total {
        let id = &dataset.sample_ids[i];
        if store.contains(id) {
            summary.reused += 1;
            continue;
        }
        let outcome = factory
            .bundle(dataset, i)
            .map_err(BridgeError::from)
            .and_then(|bundle| adapter.hidden_states(&bundle, key.style));
        match outcome {
            Ok(record) => {
                store.put(&record)?;
                summary.computed += 1;
            }
            Err(e) => {
                log::warn!("skipping {id}: {e}");
                let reason = e.to_string();
                store.record_skip(id, &reason)?;
                summary.skipped.push(SkipRecord {
                    sample_id: id.clone(),
                    reason,
                });
                if too_many(summary.skipped.len()) {
                    return Err(BridgeError::TooManySkips {
                        skipped: summary.skipped.len(),
                        total,
                        threshold: max_skip_fraction,
                    });
                }
            }
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::RenderStyle;
    use crate::model_bridge::{StubAdapter, StubConfig};
    use crate::prompting::{PromptStyle, PromptTemplate};
    use crate::represent::RepresentConfig;

    fn toy(n: usize) -> TimeSeriesDataset {
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let label = i % 2;
            labels.push(label);
            values.extend((0..6).map(|t| label as f32 + 0.01 * t as f32));
        }
        TimeSeriesDataset {
            id: "toy".into(),
            split: Split::Test,
            sample_ids: (0..n).map(|i| format!("s{i:03}")).collect(),
            values,
            num_channels: 1,
            length: 6,
            labels,
            class_names: vec!["low".into(), "high".into()],
            option_letters: vec!['A', 'B'],
            channel_names: vec!["x".into()],
            sample_rate: None,
            render_style: RenderStyle::Line,
        }
    }

    fn factory() -> PromptFactory {
        let t = PromptTemplate {
            dataset: "TOY".into(),
            task_description: "Classify the level.".into(),
            question: "Is the level low or high?".into(),
            hints: vec![],
            class_names: vec!["low".into(), "high".into()],
            style: PromptStyle::Direct,
            shots_per_class: 0,
            system_prompt: None,
        };
        PromptFactory::new(t, Modality::Digits, RepresentConfig::default(), None, 0).unwrap()
    }

    fn open(root: &Path, stub: &StubAdapter, ds: &TimeSeriesDataset, f: &PromptFactory) -> ActivationStore {
        let key = StoreKey::new(stub, ds, f, ExtractionStyle::PrefillLastToken, 0);
        ActivationStore::open(root, key, stub.spec().num_layers, stub.spec().hidden_dim).unwrap()
    }

    #[test]
    fn extract_and_resume() {
        let dir = tempfile::tempdir().unwrap();
        let (ds, f, stub) = (toy(47), factory(), StubAdapter::new(StubConfig::default()));
        let mut store = open(dir.path(), &stub, &ds, &f);
        let s = extract_dataset(&ds, &f, &stub, &mut store, 0.1).unwrap();
        assert_eq!((s.computed, s.reused), (47, 0));
        assert_eq!(store.len(), 47);
        let before = fs::read(store.dir().join("s000.f32")).unwrap();
        let rec = store.get("s005").unwrap();
        assert_eq!((rec.rows, rec.cols), (3, 8));

        let mut again = open(dir.path(), &stub, &ds, &f);
        let s = extract_dataset(&ds, &f, &stub, &mut again, 0.1).unwrap();
        assert_eq!((s.computed, s.reused), (0, 47));
        assert_eq!(fs::read(again.dir().join("s000.f32")).unwrap(), before);
        // Stored bytes round-trip to what the adapter returns.
        let bundle = f.bundle(&ds, 5).unwrap();
        assert_eq!(
            stub.hidden_states(&bundle, ExtractionStyle::PrefillLastToken)
                .unwrap(),
            rec
        );
    }

    #[test]
    fn overflow_hits_skip_threshold() {
        let dir = tempfile::tempdir().unwrap();
        let stub = StubAdapter::new(StubConfig {
            max_context_tokens: Some(3),
            ..StubConfig::default()
        });
        let (ds, f) = (toy(10), factory());
        let mut store = open(dir.path(), &stub, &ds, &f);
        let err = extract_dataset(&ds, &f, &stub, &mut store, 0.25).unwrap_err();
        assert!(matches!(
            err,
            BridgeError::TooManySkips {
                skipped: 3,
                total: 10,
                ..
            }
        ));
        let meta = ActivationStore::load(store.dir()).unwrap();
        assert_eq!(meta.meta().skips.len(), 3);
        assert!(meta.meta().skips[0].reason.contains("context window"));
    }

    #[test]
    fn key_mismatch_is_precondition_error() {
        let dir = tempfile::tempdir().unwrap();
        let (ds, f, stub) = (toy(4), factory(), StubAdapter::new(StubConfig::default()));
        let mut store = open(dir.path(), &stub, &ds, &f);
        let mut other = ds.clone();
        other.id = "other".into();
        assert!(matches!(
            extract_dataset(&other, &f, &stub, &mut store, 0.0),
            Err(BridgeError::Precondition(_))
        ));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (ds, f, stub) = (toy(2), factory(), StubAdapter::new(StubConfig::default()));
        let mut store = open(dir.path(), &stub, &ds, &f);
        let bundle = f.bundle(&ds, 0).unwrap();
        let bad =
            ActivationRecord::new(&bundle, ExtractionStyle::PrefillLastToken, 2, 8, vec![0.0; 16]).unwrap();
        assert!(matches!(store.put(&bad), Err(BridgeError::Store(_))));
    }

    #[test]
    fn pair_keys() {
        let (mut ds, f, stub) = (toy(2), factory(), StubAdapter::new(StubConfig::default()));
        let test = StoreKey::new(&stub, &ds, &f, ExtractionStyle::PrefillLastToken, 0);
        ds.split = Split::Train;
        let train = StoreKey::new(&stub, &ds, &f, ExtractionStyle::PrefillLastToken, 0);
        assert!(train.is_pair_of(&test));
        assert!(!train.is_pair_of(&train));
        assert_ne!(train.hash(), test.hash());
    }
}
