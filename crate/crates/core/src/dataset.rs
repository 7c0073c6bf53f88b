//! Canonical on-disk store for labeled time-series corpora.
//!
//! Layout: `<root>/<id>/{manifest.json, train.f32, train.labels.csv,
//! test.f32, test.labels.csv}`. Tensors are little-endian row-major f32
//! `[N × V × T]`; labels are 1-based in the CSV and 0-based in memory.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MANIFEST_FORMAT: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("shape error: {0}")]
    IngestShape(String),
    #[error("unknown label {label:?} for sample {sample}")]
    IngestLabel { sample: String, label: String },
    #[error("invalid value in sample {sample}: {reason}")]
    IngestValue { sample: String, reason: String },
    #[error("sample id error: {0}")]
    IngestId(String),
    #[error("corrupt store for {id}: {reason}")]
    CorruptStore { id: String, reason: String },
    #[error("dataset not found: {0}")]
    NotFound(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub const ALL: [Split; 2] = [Split::Train, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = DatasetError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(DatasetError::Invalid(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderStyle {
    Line,
    Spectrogram,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NanPolicy {
    #[default]
    Reject,
    ForwardFill,
    ZeroFill,
}

/// What to do with series shorter than the declared length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RaggedPolicy {
    /// Pad on the right with the last observed value.
    #[default]
    PadLast,
    Reject,
}

/// Option letters `A, B, C, ...` for `c` classes.
pub fn option_letters(c: usize) -> Vec<char> {
    (0..c).map(|i| (b'A' + i as u8) as char).collect()
}

/// One split of an ingested dataset held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    pub id: String,
    pub split: Split,
    pub sample_ids: Vec<String>,
    /// Row-major `[N × V × T]`.
    pub values: Vec<f32>,
    pub num_channels: usize,
    pub length: usize,
    /// 0-based class indices.
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub option_letters: Vec<char>,
    pub channel_names: Vec<String>,
    pub sample_rate: Option<f64>,
    pub render_style: RenderStyle,
}

impl TimeSeriesDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// The `[V × T]` block of sample `i`.
    pub fn sample(&self, i: usize) -> &[f32] {
        let stride = self.num_channels * self.length;
        &self.values[i * stride..(i + 1) * stride]
    }

    pub fn channel(&self, i: usize, v: usize) -> &[f32] {
        let s = self.sample(i);
        &s[v * self.length..(v + 1) * self.length]
    }

    /// Owned `[V][T]` copy of sample `i` in f64.
    pub fn sample_matrix(&self, i: usize) -> Vec<Vec<f64>> {
        (0..self.num_channels)
            .map(|v| self.channel(i, v).iter().map(|&x| x as f64).collect())
            .collect()
    }

    pub fn labels_one_based(&self) -> Vec<usize> {
        self.labels.iter().map(|l| l + 1).collect()
    }

    pub fn index_of(&self, sample_id: &str) -> Option<usize> {
        self.sample_ids.iter().position(|s| s == sample_id)
    }

    /// Per-sample, per-channel z-normalization. Constant channels map to zero.
    pub fn zscore_channels(&mut self) {
        let t = self.length;
        for chunk in self.values.chunks_mut(t.max(1)) {
            let n = chunk.len() as f64;
            let mean = chunk.iter().map(|&x| x as f64).sum::<f64>() / n;
            let var = chunk.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            for x in chunk.iter_mut() {
                *x = if sd > 0.0 {
                    ((*x as f64 - mean) / sd) as f32
                } else {
                    0.0
                };
            }
        }
    }

    /// Keep only the samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> TimeSeriesDataset {
        let mut out = self.clone();
        out.sample_ids = indices.iter().map(|&i| self.sample_ids[i].clone()).collect();
        out.labels = indices.iter().map(|&i| self.labels[i]).collect();
        out.values = indices
            .iter()
            .flat_map(|&i| self.sample(i).iter().copied())
            .collect();
        out
    }

    /// Stratified random subsample of at most `n` samples under `seed`.
    ///
    /// Each class keeps `round(n · share)` samples (at least one when it is
    /// present); the original sample order is preserved.
    pub fn stratified_subsample(&self, n: usize, seed: u64) -> TimeSeriesDataset {
        if n >= self.len() {
            return self.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in self.labels.iter().enumerate() {
            by_class.entry(l).or_default().push(i);
        }
        // Largest-remainder apportionment so quotas sum to exactly n.
        let total = self.len() as f64;
        let shares: Vec<f64> = by_class
            .values()
            .map(|idx| n as f64 * idx.len() as f64 / total)
            .collect();
        let mut quotas: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
        let mut order: Vec<usize> = (0..shares.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = shares[a] - shares[a].floor();
            let fb = shares[b] - shares[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        let mut remaining = n - quotas.iter().sum::<usize>();
        for &k in order.iter().cycle().take(order.len() * 2) {
            if remaining == 0 {
                break;
            }
            quotas[k] += 1;
            remaining -= 1;
        }
        let mut keep = Vec::with_capacity(n);
        for (idx, quota) in by_class.values_mut().zip(quotas) {
            idx.shuffle(&mut rng);
            keep.extend(idx.iter().take(quota.min(idx.len())));
        }
        keep.sort_unstable();
        self.select(&keep)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// One raw labeled sequence before ingestion. Missing values are NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSample {
    pub id: String,
    pub split: Split,
    pub label: String,
    #[serde(deserialize_with = "de_channels", serialize_with = "ser_channels")]
    pub channels: Vec<Vec<f64>>,
}

fn de_channels<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
    let raw: Vec<Vec<Option<f64>>> = Deserialize::deserialize(d)?;
    Ok(raw
        .into_iter()
        .map(|ch| ch.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect())
        .collect())
}

fn ser_channels<S: serde::Serializer>(ch: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
    let raw: Vec<Vec<Option<f64>>> = ch
        .iter()
        .map(|c| c.iter().map(|&v| v.is_finite().then_some(v)).collect())
        .collect();
    raw.serialize(s)
}

/// Read a JSON-lines source file, one [`SourceSample`] per line; `null`
/// marks a missing value.
pub fn read_source_jsonl(path: &Path) -> Result<Vec<SourceSample>, DatasetError> {
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Dataset-level metadata supplied at ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestMeta {
    pub id: String,
    pub class_names: Vec<String>,
    #[serde(default)]
    pub channel_names: Vec<String>,
    #[serde(default)]
    pub length: Option<usize>,
    #[serde(default)]
    pub sample_rate: Option<f64>,
    pub render_style: RenderStyle,
    #[serde(default)]
    pub provenance: String,
    #[serde(default)]
    pub nan_policy: NanPolicy,
    #[serde(default)]
    pub ragged_policy: RaggedPolicy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub n: usize,
    pub v: usize,
    pub t: usize,
    pub tensor_file: String,
    pub tensor_sha256: String,
    pub labels_file: String,
    pub labels_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub id: String,
    pub class_names: Vec<String>,
    pub option_letters: Vec<char>,
    pub channel_names: Vec<String>,
    pub sample_rate: Option<f64>,
    pub render_style: RenderStyle,
    pub provenance: String,
    pub nan_policy: NanPolicy,
    pub ragged_policy: RaggedPolicy,
    /// Sample ids that were right-padded to the declared length.
    pub padded_samples: Vec<String>,
    pub splits: BTreeMap<Split, SplitManifest>,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCount {
    pub letter: char,
    pub name: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub split: Split,
    pub n: usize,
    pub class_balance: Vec<ClassCount>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub id: String,
    pub v: usize,
    pub t: usize,
    pub c: usize,
    pub splits: Vec<SplitSummary>,
}

impl DatasetSummary {
    pub fn split(&self, split: Split) -> Option<&SplitSummary> {
        self.splits.iter().find(|s| s.split == split)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write `bytes` to `path` through a sibling temp file and an atomic rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn encode_f32(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Ids, labels and flattened values of one split during ingest.
type SplitColumns = (Vec<String>, Vec<usize>, Vec<f32>);

pub(crate) fn decode_f32(bytes: &[u8]) -> Option<Vec<f32>> {
    if !bytes.len().is_multiple_of(4) {
        return None;
    }
    Some(
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    )
}

fn encode_labels(ids: &[String], labels: &[usize]) -> Vec<u8> {
    let mut s = String::from("sample_id,label\n");
    for (id, l) in ids.iter().zip(labels) {
        s.push_str(&crate::metrics::csv_field(id));
        s.push(',');
        s.push_str(&(l + 1).to_string());
        s.push('\n');
    }
    s.into_bytes()
}

fn decode_labels(id: &str, text: &str) -> Result<(Vec<String>, Vec<usize>), DatasetError> {
    let corrupt = |reason: String| DatasetError::CorruptStore {
        id: id.to_string(),
        reason,
    };
    let mut lines = text.lines();
    if lines.next() != Some("sample_id,label") {
        return Err(corrupt("labels header missing".into()));
    }
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for line in lines {
        let (sid, label) = line
            .rsplit_once(',')
            .ok_or_else(|| corrupt(format!("bad labels row {line:?}")))?;
        let sid = sid
            .strip_prefix('"')
            .and_then(|s| s.strip_suffix('"'))
            .map(|s| s.replace("\"\"", "\""))
            .unwrap_or_else(|| sid.to_string());
        let label: usize = label
            .parse()
            .map_err(|_| corrupt(format!("bad label {label:?}")))?;
        if label == 0 {
            return Err(corrupt("labels are 1-based".into()));
        }
        ids.push(sid);
        labels.push(label - 1);
    }
    Ok((ids, labels))
}

/// Fill or reject non-finite entries of one channel according to `policy`.
fn apply_nan_policy(sample: &str, channel: &mut [f64], policy: NanPolicy) -> Result<(), DatasetError> {
    if channel.iter().any(|v| v.is_infinite()) {
        return Err(DatasetError::IngestValue {
            sample: sample.to_string(),
            reason: "infinite value".into(),
        });
    }
    if !channel.iter().any(|v| v.is_nan()) {
        return Ok(());
    }
    match policy {
        NanPolicy::Reject => Err(DatasetError::IngestValue {
            sample: sample.to_string(),
            reason: "NaN under reject policy".into(),
        }),
        NanPolicy::ZeroFill => {
            for v in channel.iter_mut().filter(|v| v.is_nan()) {
                *v = 0.0;
            }
            Ok(())
        }
        NanPolicy::ForwardFill => {
            // Leading gaps take the first observed value.
            let first =
                channel
                    .iter()
                    .copied()
                    .find(|v| !v.is_nan())
                    .ok_or_else(|| DatasetError::IngestValue {
                        sample: sample.to_string(),
                        reason: "channel has no observed values".into(),
                    })?;
            let mut last = first;
            for v in channel.iter_mut() {
                if v.is_nan() {
                    *v = last;
                } else {
                    last = *v;
                }
            }
            Ok(())
        }
    }
}

/// Filesystem-backed dataset store rooted at a `data/` directory.
#[derive(Debug, Clone)]
pub struct DatasetStore {
    root: PathBuf,
}

impl DatasetStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DatasetStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dataset_dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    /// Validate, normalize and persist a labeled collection.
    pub fn ingest(
        &self,
        samples: &[SourceSample],
        meta: &IngestMeta,
    ) -> Result<DatasetManifest, DatasetError> {
        if meta.id.is_empty() || meta.id.contains(['/', '\\']) || meta.id.starts_with('.') {
            return Err(DatasetError::Invalid(format!("bad dataset id {:?}", meta.id)));
        }
        let c = meta.class_names.len();
        if c == 0 || c > 26 {
            return Err(DatasetError::Invalid(format!(
                "need between 1 and 26 classes, got {c}"
            )));
        }
        if samples.is_empty() {
            return Err(DatasetError::IngestShape("no samples".into()));
        }
        let v = samples[0].channels.len();
        if v == 0 {
            return Err(DatasetError::IngestShape(format!(
                "sample {} has no channels",
                samples[0].id
            )));
        }
        let observed_max = samples
            .iter()
            .flat_map(|s| s.channels.iter().map(Vec::len))
            .max()
            .unwrap_or(0);
        let t = meta.length.unwrap_or(observed_max);
        if t == 0 {
            return Err(DatasetError::IngestShape("series length is zero".into()));
        }
        let channel_names = if meta.channel_names.is_empty() {
            (0..v).map(|i| format!("channel_{i}")).collect()
        } else if meta.channel_names.len() == v {
            meta.channel_names.clone()
        } else {
            return Err(DatasetError::IngestShape(format!(
                "{} channel names for {v} channels",
                meta.channel_names.len()
            )));
        };

        let mut seen = HashSet::new();
        let mut per_split: BTreeMap<Split, SplitColumns> = BTreeMap::new();
        let mut padded = Vec::new();
        for s in samples {
            if !seen.insert(s.id.as_str()) {
                return Err(DatasetError::IngestId(format!(
                    "sample id {:?} appears more than once",
                    s.id
                )));
            }
            if s.id.is_empty() || s.id.contains(['\n', '/', '\\']) {
                return Err(DatasetError::IngestId(format!("invalid sample id {:?}", s.id)));
            }
            if s.channels.len() != v {
                return Err(DatasetError::IngestShape(format!(
                    "sample {} has {} channels, expected {v}",
                    s.id,
                    s.channels.len()
                )));
            }
            let label = meta
                .class_names
                .iter()
                .position(|name| name == &s.label)
                .ok_or_else(|| DatasetError::IngestLabel {
                    sample: s.id.clone(),
                    label: s.label.clone(),
                })?;
            let entry = per_split.entry(s.split).or_default();
            let mut was_padded = false;
            for ch in &s.channels {
                if ch.is_empty() {
                    return Err(DatasetError::IngestShape(format!(
                        "sample {} has an empty channel",
                        s.id
                    )));
                }
                if ch.len() > t {
                    return Err(DatasetError::IngestShape(format!(
                        "sample {} has length {} > declared {t}",
                        s.id,
                        ch.len()
                    )));
                }
                let mut ch = ch.clone();
                apply_nan_policy(&s.id, &mut ch, meta.nan_policy)?;
                if ch.len() < t {
                    if meta.ragged_policy == RaggedPolicy::Reject {
                        return Err(DatasetError::IngestShape(format!(
                            "sample {} has length {} < {t}",
                            s.id,
                            ch.len()
                        )));
                    }
                    let last = *ch.last().expect("non-empty");
                    ch.resize(t, last);
                    was_padded = true;
                }
                for x in ch {
                    let y = x as f32;
                    if !y.is_finite() {
                        return Err(DatasetError::IngestValue {
                            sample: s.id.clone(),
                            reason: format!("{x} overflows f32"),
                        });
                    }
                    entry.2.push(y);
                }
            }
            if was_padded {
                padded.push(s.id.clone());
            }
            entry.0.push(s.id.clone());
            entry.1.push(label);
        }

        let dir = self.dataset_dir(&meta.id);
        fs::create_dir_all(&dir)?;
        let mut splits = BTreeMap::new();
        for split in Split::ALL {
            let (ids, labels, values) = per_split.remove(&split).unwrap_or_default();
            let tensor = encode_f32(&values);
            let label_bytes = encode_labels(&ids, &labels);
            let tensor_file = format!("{split}.f32");
            let labels_file = format!("{split}.labels.csv");
            write_atomic(&dir.join(&tensor_file), &tensor)?;
            write_atomic(&dir.join(&labels_file), &label_bytes)?;
            splits.insert(
                split,
                SplitManifest {
                    n: ids.len(),
                    v,
                    t,
                    tensor_file,
                    tensor_sha256: sha256_hex(&tensor),
                    labels_file,
                    labels_sha256: sha256_hex(&label_bytes),
                },
            );
        }
        let manifest = DatasetManifest {
            format_version: MANIFEST_FORMAT,
            id: meta.id.clone(),
            class_names: meta.class_names.clone(),
            option_letters: option_letters(c),
            channel_names,
            sample_rate: meta.sample_rate,
            render_style: meta.render_style,
            provenance: meta.provenance.clone(),
            nan_policy: meta.nan_policy,
            ragged_policy: meta.ragged_policy,
            padded_samples: padded,
            splits,
        };
        let mut json = serde_json::to_vec_pretty(&manifest)?;
        json.push(b'\n');
        write_atomic(&dir.join("manifest.json"), &json)?;
        Ok(manifest)
    }

    pub fn manifest(&self, id: &str) -> Result<DatasetManifest, DatasetError> {
        let path = self.dataset_dir(id).join("manifest.json");
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(DatasetError::NotFound(id.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        serde_json::from_slice(&bytes).map_err(|e| DatasetError::CorruptStore {
            id: id.to_string(),
            reason: format!("manifest: {e}"),
        })
    }

    /// Load one split, verifying checksums and declared shapes.
    pub fn load_split(&self, id: &str, split: Split) -> Result<TimeSeriesDataset, DatasetError> {
        let manifest = self.manifest(id)?;
        let sm = manifest
            .splits
            .get(&split)
            .ok_or_else(|| DatasetError::CorruptStore {
                id: id.to_string(),
                reason: format!("manifest lacks split {split}"),
            })?;
        let dir = self.dataset_dir(id);
        let corrupt = |reason: String| DatasetError::CorruptStore {
            id: id.to_string(),
            reason,
        };
        let tensor = fs::read(dir.join(&sm.tensor_file))?;
        if sha256_hex(&tensor) != sm.tensor_sha256 {
            return Err(corrupt(format!("{} checksum mismatch", sm.tensor_file)));
        }
        let label_bytes = fs::read(dir.join(&sm.labels_file))?;
        if sha256_hex(&label_bytes) != sm.labels_sha256 {
            return Err(corrupt(format!("{} checksum mismatch", sm.labels_file)));
        }
        let values = decode_f32(&tensor).ok_or_else(|| corrupt("truncated tensor".into()))?;
        if values.len() != sm.n * sm.v * sm.t {
            return Err(corrupt(format!(
                "tensor has {} values, manifest declares {}×{}×{}",
                values.len(),
                sm.n,
                sm.v,
                sm.t
            )));
        }
        let text = String::from_utf8(label_bytes).map_err(|_| corrupt("labels not UTF-8".into()))?;
        let (sample_ids, labels) = decode_labels(id, &text)?;
        if labels.len() != sm.n || labels.iter().any(|&l| l >= manifest.num_classes()) {
            return Err(corrupt("labels inconsistent with manifest".into()));
        }
        Ok(TimeSeriesDataset {
            id: id.to_string(),
            split,
            sample_ids,
            values,
            num_channels: sm.v,
            length: sm.t,
            labels,
            class_names: manifest.class_names.clone(),
            option_letters: manifest.option_letters.clone(),
            channel_names: manifest.channel_names.clone(),
            sample_rate: manifest.sample_rate,
            render_style: manifest.render_style,
        })
    }

    /// Shapes and per-split class balance.
    pub fn describe(&self, id: &str) -> Result<DatasetSummary, DatasetError> {
        let manifest = self.manifest(id)?;
        let mut splits = Vec::new();
        let (mut v, mut t) = (0, 0);
        for split in Split::ALL {
            let ds = self.load_split(id, split)?;
            v = ds.num_channels;
            t = ds.length;
            let counts = ds.class_counts();
            splits.push(SplitSummary {
                split,
                n: ds.len(),
                class_balance: manifest
                    .class_names
                    .iter()
                    .zip(&manifest.option_letters)
                    .zip(counts)
                    .map(|((name, &letter), count)| ClassCount {
                        letter,
                        name: name.clone(),
                        count,
                    })
                    .collect(),
            });
        }
        Ok(DatasetSummary {
            id: id.to_string(),
            v,
            t,
            c: manifest.num_classes(),
            splits,
        })
    }
}
