mod common;

use std::fs;

use common::{oracle_macro_f1, planted_samples, snapshot, Workspace, STUB_MODEL};
use tsprobe::baselines::HeuristicKind;
use tsprobe::harness::{Harness, Method, ResultStore};
use tsprobe::prompting::PromptStyle;
use tsprobe::represent::Modality;

const TINY_MODEL: &str = r#"
[[models]]
name = "tiny"
backend = "stub"
num_layers = 4
hidden_dim = 8
max_context_tokens = 5
"#;

fn toy_workspace(seed: u64) -> Workspace {
    let ws = Workspace::new();
    ws.add_dataset("toy", &planted_samples(30, 20, 2, 16, 0.4, seed), 2);
    ws
}

#[test]
fn failing_model_does_not_stop_the_matrix_and_is_retried() {
    let ws = toy_workspace(1);
    let grid = "\n[grid]\nmodalities = [\"d\"]\nmethods = [\"prompt\", \"probe\"]\n";
    let cfg = ws.config(&["toy"], &format!("{STUB_MODEL}{TINY_MODEL}{grid}"));
    let h = Harness::new(cfg, None).unwrap();
    let specs = h.config.expand();
    assert_eq!(specs.len(), 4);

    let first = h.run_matrix(&specs).unwrap();
    assert_eq!((first.executed, first.failed), (2, 2));
    let store = h.results().unwrap();
    for (spec, key) in specs.iter().zip(&first.cell_keys) {
        let ok = store.all().iter().any(|r| &r.cell_key == key && r.is_ok());
        assert_eq!(ok, spec.model == "stub", "{}", spec.label());
    }
    let failed = store.all().iter().find(|r| !r.is_ok()).unwrap();
    assert!(
        failed.error.as_deref().unwrap().contains("skip"),
        "{:?}",
        failed.error
    );

    let second = h.run_matrix(&specs).unwrap();
    assert_eq!((second.reused, second.executed, second.failed), (2, 0, 2));
}

#[test]
fn probe_configs_share_one_extraction() {
    let ws = toy_workspace(2);
    let cfg = ws.config(&["toy"], STUB_MODEL);
    let h = Harness::new(cfg.clone(), None).unwrap();
    let spec = h.config.model_spec(
        "stub",
        "toy",
        Modality::Digits,
        Method::Probe,
        PromptStyle::Direct,
        0,
    );
    h.run_matrix(std::slice::from_ref(&spec)).unwrap();
    let acts = snapshot(&h.out_dir.join("acts"));

    let cfg = ws.config(
        &["toy"],
        &format!("{STUB_MODEL}\n[probe]\nc_grid = [0.5, 5.0]\nfolds = 3\n"),
    );
    let h = Harness::new(cfg, None).unwrap();
    let spec = h.config.model_spec(
        "stub",
        "toy",
        Modality::Digits,
        Method::Probe,
        PromptStyle::Direct,
        0,
    );
    let summary = h.run_matrix(std::slice::from_ref(&spec)).unwrap();
    assert_eq!(summary.executed, 1);
    assert_eq!(snapshot(&h.out_dir.join("acts")), acts);
    assert_eq!(h.results().unwrap().completed().len(), 2);
}

#[test]
fn probe_cell_records_every_layer() {
    let ws = toy_workspace(3);
    let cfg = ws.config(&["toy"], STUB_MODEL);
    let h = Harness::new(cfg, None).unwrap();
    let spec = h.config.model_spec(
        "stub",
        "toy",
        Modality::Digits,
        Method::Probe,
        PromptStyle::Direct,
        0,
    );
    let key = h.run_matrix(&[spec]).unwrap().cell_keys.remove(0);
    let store = h.results().unwrap();
    let r = store.get(&key).unwrap();
    assert_eq!(r.predictions.len(), 5);
    assert_eq!(r.curve.as_ref().unwrap().scores.len(), 5);
    let best = r
        .predictions
        .iter()
        .map(|p| oracle_macro_f1(&r.labels, &p.predicted, 2))
        .fold(0.0, f64::max);
    assert_eq!(r.macro_f1(), Some(best));
    assert_eq!(r.labels.len(), 20);
}

#[test]
fn heuristic_majority_matches_a_constant_oracle() {
    let ws = toy_workspace(4);
    let grid = "\n[grid]\nmethods = [\"heuristic\"]\n";
    let cfg = ws.config(&["toy"], &format!("{STUB_MODEL}{grid}"));
    let h = Harness::new(cfg, None).unwrap();
    let specs: Vec<_> = h
        .config
        .expand()
        .into_iter()
        .filter(|s| s.heuristic == Some(HeuristicKind::Majority))
        .collect();
    assert_eq!(specs.len(), 1);
    let key = h.run_matrix(&specs).unwrap().cell_keys.remove(0);
    let store = h.results().unwrap();
    let r = store.get(&key).unwrap();
    let constant = vec![r.predictions[0].predicted[0]; r.labels.len()];
    assert_eq!(r.macro_f1(), Some(oracle_macro_f1(&r.labels, &constant, 2)));
    assert_eq!(r.macro_f1(), Some(1.0 / 3.0));
}

#[test]
fn audit_rejects_an_edited_metric() {
    let ws = toy_workspace(5);
    let grid = "\n[grid]\nmodalities = [\"d\"]\nmethods = [\"prompt\"]\n";
    let cfg = ws.config(&["toy"], &format!("{STUB_MODEL}{grid}"));
    let h = Harness::new(cfg, None).unwrap();
    h.run_matrix(&h.config.expand()).unwrap();
    let store = h.results().unwrap();
    assert_eq!(store.audit().unwrap(), 1);

    let path = store.path();
    let mut row: serde_json::Value = serde_json::from_str(fs::read_to_string(&path).unwrap().trim()).unwrap();
    let f1 = row["metrics"]["macro_f1"].as_f64().unwrap();
    row["metrics"]["macro_f1"] = serde_json::json!(f1 + 0.125);
    fs::write(&path, format!("{row}\n")).unwrap();
    assert!(ResultStore::open(&h.out_dir).unwrap().audit().is_err());
}

#[test]
fn tsne_figure_has_one_point_per_test_sample_and_panel() {
    let ws = toy_workspace(6);
    let cfg = ws.config(&["toy"], STUB_MODEL);
    let h = Harness::new(cfg, None).unwrap();
    let spec = h.config.model_spec(
        "stub",
        "toy",
        Modality::Digits,
        Method::Probe,
        PromptStyle::Direct,
        0,
    );
    h.run_matrix(std::slice::from_ref(&spec)).unwrap();
    let out = h.tsne_figure(&spec, &ws.path().join("fig")).unwrap();
    let csv = out
        .files
        .iter()
        .find(|p| p.extension().is_some_and(|e| e == "csv"))
        .unwrap();
    let mut rdr = csv::Reader::from_path(csv).unwrap();
    let sources: Vec<String> = rdr.records().map(|r| r.unwrap()[0].to_string()).collect();
    assert_eq!(sources.len(), 3 * 20);
    assert_eq!(sources.iter().filter(|s| *s == "raw series").count(), 20);
    assert!(out
        .files
        .iter()
        .any(|p| p.extension().is_some_and(|e| e == "png")));
}

#[test]
fn zscore_flag_is_part_of_the_cell_key() {
    let ws = toy_workspace(7);
    let plain = ws.config(&["toy"], STUB_MODEL);
    let mut scaled = plain.clone();
    scaled.datasets[0].zscore = true;
    let spec = plain.model_spec(
        "stub",
        "toy",
        Modality::Digits,
        Method::Prompt,
        PromptStyle::Direct,
        0,
    );
    let a = Harness::new(plain, None).unwrap().cell_key(&spec).unwrap();
    let b = Harness::new(scaled, None).unwrap().cell_key(&spec).unwrap();
    assert_ne!(a, b);
}
