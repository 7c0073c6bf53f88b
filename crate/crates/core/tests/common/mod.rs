//! Fixtures shared by the integration targets: planted toy corpora in a
//! temporary data root and harness configs over the stub model.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tempfile::TempDir;

use tsprobe::dataset::{DatasetStore, IngestMeta, NanPolicy, RaggedPolicy, RenderStyle, SourceSample, Split};
use tsprobe::harness::HarnessConfig;

/// Class `k` series sit at level `k` plus Gaussian noise of sd `noise`.
pub fn planted_samples(
    n_train: usize,
    n_test: usize,
    classes: usize,
    len: usize,
    noise: f64,
    seed: u64,
) -> Vec<SourceSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut out = Vec::new();
    for (split, n) in [(Split::Train, n_train), (Split::Test, n_test)] {
        for i in 0..n {
            let k = i % classes;
            let series = (0..len)
                .map(|_| k as f64 + noise * normal.sample(&mut rng))
                .collect();
            out.push(SourceSample {
                id: format!("{split}-{i:04}"),
                split,
                label: class_name(k),
                channels: vec![series],
            });
        }
    }
    out
}

pub fn class_name(k: usize) -> String {
    ["Low", "Mid", "High", "Peak"][k].to_string()
}

pub struct Workspace {
    pub dir: TempDir,
}

impl Workspace {
    pub fn new() -> Self {
        Workspace {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn data_root(&self) -> PathBuf {
        self.path().join("data")
    }

    pub fn out_dir(&self) -> PathBuf {
        self.path().join("runs")
    }

    /// Ingest a planted corpus and write its prompt template.
    pub fn add_dataset(&self, id: &str, samples: &[SourceSample], classes: usize) -> PathBuf {
        let meta = IngestMeta {
            id: id.into(),
            class_names: (0..classes).map(class_name).collect(),
            channel_names: vec!["level".into()],
            length: None,
            sample_rate: None,
            render_style: RenderStyle::Line,
            provenance: "planted levels".into(),
            nan_policy: NanPolicy::default(),
            ragged_policy: RaggedPolicy::default(),
        };
        DatasetStore::new(self.data_root())
            .ingest(samples, &meta)
            .unwrap();
        let names: Vec<String> = (0..classes).map(|k| format!("{:?}", class_name(k))).collect();
        let template = format!(
            "dataset = \"{}\"\n\
             task_description = \"Play as a signal analysis expert: determine the operating level of this sensor.\"\n\
             question = \"determine the operating level of this sensor reading.\"\n\
             class_names = [{}]\n\
             hints = [\"Levels are flat; the mean tells them apart.\"]\n",
            id.to_uppercase(),
            names.join(", ")
        );
        let path = self.path().join("prompts").join(id).join("template.toml");
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, template).unwrap();
        path
    }

    /// Harness config over the given datasets; `extra` is appended verbatim
    /// (models, grid, probe sections).
    pub fn config(&self, datasets: &[&str], extra: &str) -> HarnessConfig {
        let mut text = format!(
            "seed = 0\ndata_root = {:?}\nout_dir = {:?}\n",
            self.data_root(),
            self.out_dir()
        );
        for id in datasets {
            text.push_str(&format!(
                "\n[[datasets]]\nid = \"{id}\"\ntemplate = {:?}\n",
                self.path().join("prompts").join(id).join("template.toml")
            ));
        }
        text.push_str(extra);
        let path = self.path().join(format!("harness-{}.toml", datasets.join("-")));
        fs::write(&path, &text).unwrap();
        HarnessConfig::load(&path).unwrap()
    }
}

pub const STUB_MODEL: &str = r#"
[[models]]
name = "stub"
backend = "stub"
num_layers = 4
hidden_dim = 8
"#;

/// Brute-force per-class counter: precision, recall and F1 per class with
/// 0/0 → 0, averaged over all `c` classes.
pub fn oracle_macro_f1(y: &[usize], pred: &[Option<usize>], c: usize) -> f64 {
    let mut total = 0.0;
    for k in 0..c {
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for (&t, &p) in y.iter().zip(pred) {
            let hit = p == Some(k);
            if t == k && hit {
                tp += 1;
            } else if hit {
                fp += 1;
            } else if t == k {
                fn_ += 1;
            }
        }
        let prec = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let rec = if tp + fn_ == 0 {
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        total += if prec + rec == 0.0 {
            0.0
        } else {
            2.0 * prec * rec / (prec + rec)
        };
    }
    total / c as f64
}

/// Every file under `root` with its bytes, sorted by path.
pub fn snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let bytes = fs::read(&p).unwrap();
                out.push((p, bytes));
            }
        }
    }
    out.sort();
    out
}
