//! Acceptance criteria 1–7, one verdict line each.
//!
//! Runs without the libtest harness so the verdicts always reach stdout.
//! Criterion 6 needs an open model of at least 1B parameters behind the
//! HTTP adapter and the EMG corpus; it runs only when `TSPROBE_E2E_CONFIG`
//! names a harness config providing both, and otherwise reports FAIL as
//! not attainable here without failing the target.

mod common;

use std::cell::Cell;
use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use common::{oracle_macro_f1, planted_samples, snapshot, Workspace, STUB_MODEL};
use tsprobe::harness::{stability_run, Harness, HarnessConfig, Method, ResultStore};
use tsprobe::metrics::{dataset_pass_at_k, macro_f1, pass_at_k};
use tsprobe::model_bridge::ActivationStore;
use tsprobe::probes::{fit_logistic, train_probe, LogisticObjective, Matrix, ProbeConfig};
use tsprobe::prompting::{
    generate_variants, validate_variant, ChatClient, ChatError, PromptStyle, PromptTemplate, VariantTarget,
};
use tsprobe::represent::{serialize_series, Modality, SerializationConfig};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let got = serialize_series(&[1.0, 20.0, 0.33], &SerializationConfig::default()).unwrap();
    let want = "1 0 0 , 2 0 0 0 , 0 3 3";
    let elapsed = start.elapsed();
    verdict(
        got == want && elapsed < Duration::from_secs(1),
        format!("{got:?} in {elapsed:?}"),
    )
}

/// Fraction of draws in which a uniformly chosen item's random K-subset of
/// its n completions contains a correct one.
fn monte_carlo_pass_at_k(correct: &[u64], n: u64, k: u64, draws: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut idx: Vec<u64> = (0..n).collect();
    let mut hits = 0usize;
    for _ in 0..draws {
        let c = correct[rng.gen_range(0..correct.len())];
        let (chosen, _) = idx.partial_shuffle(rng, k as usize);
        if chosen.iter().any(|&s| s < c) {
            hits += 1;
        }
    }
    hits as f64 / draws as f64
}

fn criterion_2() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for f in 0..1000 {
        let c = rng.gen_range(1..=12);
        let n = rng.gen_range(1..=1000);
        let y: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let pred: Vec<Option<usize>> = (0..n)
            .map(|_| {
                if rng.gen_bool(0.1) {
                    None
                } else {
                    Some(rng.gen_range(0..c))
                }
            })
            .collect();
        let lib = macro_f1(&y, &pred, c).unwrap().macro_f1;
        let oracle = oracle_macro_f1(&y, &pred, c);
        if lib != oracle {
            return verdict(false, format!("fixture {f}: library {lib} vs oracle {oracle}"));
        }
    }

    let n = 20u64;
    let correct: Vec<u64> = (0..50).map(|_| rng.gen_range(0..=n)).collect();
    let mut worst: f64 = 0.0;
    for k in [1, 5, 10, 20] {
        let exact = dataset_pass_at_k(&correct, n, k).unwrap();
        let mc = monte_carlo_pass_at_k(&correct, n, k, 100_000, &mut rng);
        worst = worst.max((exact - mc).abs());
    }
    if worst > 0.01 {
        return verdict(false, format!("pass@K off its Monte Carlo oracle by {worst:.4}"));
    }

    for n in 1..=20u64 {
        for k in 1..=n {
            if pass_at_k(0, n, k).unwrap() != 0.0 {
                return verdict(false, format!("c=0 convention broken at n={n} K={k}"));
            }
            for c in 1..=n {
                let v = pass_at_k(c, n, k).unwrap();
                if n - c < k && v != 1.0 {
                    return verdict(false, format!("n-c<K convention broken at n={n} c={c} K={k}"));
                }
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        elapsed < Duration::from_secs(120),
        format!("1000 F1 fixtures exact, pass@K max MC gap {worst:.4}, conventions hold; {elapsed:?}"),
    )
}

/// Independent full-batch gradient descent with backtracking on
/// mean cross-entropy + ‖W‖² / (2·C·N), bias unpenalized.
fn reference_objective(x: &[Vec<f64>], y: &[usize], k: usize, c: f64, theta: &[f64]) -> (f64, Vec<f64>) {
    let (n, d) = (x.len(), x[0].len());
    let mut grad = vec![0.0; theta.len()];
    let mut loss = 0.0;
    for (row, &label) in x.iter().zip(y) {
        let z: Vec<f64> = (0..k)
            .map(|j| theta[k * d + j] + (0..d).map(|i| theta[j * d + i] * row[i]).sum::<f64>())
            .collect();
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = z.iter().map(|v| (v - m).exp()).sum();
        loss += -(z[label] - m - denom.ln());
        for j in 0..k {
            let p = (z[j] - m).exp() / denom - f64::from(j == label);
            for i in 0..d {
                grad[j * d + i] += p * row[i] / n as f64;
            }
            grad[k * d + j] += p / n as f64;
        }
    }
    let lambda = 1.0 / (c * n as f64);
    let mut reg = 0.0;
    for i in 0..k * d {
        reg += theta[i] * theta[i];
        grad[i] += lambda * theta[i];
    }
    (loss / n as f64 + 0.5 * lambda * reg, grad)
}

fn reference_minimum(x: &[Vec<f64>], y: &[usize], k: usize, c: f64) -> f64 {
    let d = x[0].len();
    let mut theta = vec![0.0; k * (d + 1)];
    let mut step = 1.0;
    let (mut f, mut g) = reference_objective(x, y, k, c, &theta);
    for _ in 0..200_000 {
        let gn2: f64 = g.iter().map(|v| v * v).sum();
        if gn2.sqrt() < 1e-10 {
            break;
        }
        loop {
            let trial: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t - step * gi).collect();
            let (ft, gt) = reference_objective(x, y, k, c, &trial);
            if ft <= f - 0.5 * step * gn2 {
                theta = trial;
                f = ft;
                g = gt;
                step *= 1.5;
                break;
            }
            step *= 0.5;
        }
    }
    f
}

fn blobs(n: usize, d: usize, sep: f64, rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<usize>) {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % 2;
        let shift = if k == 0 { -sep / 2.0 } else { sep / 2.0 };
        x.push(
            (0..d)
                .map(|j| normal.sample(rng) + if j == 0 { shift } else { 0.0 })
                .collect(),
        );
        y.push(k);
    }
    (x, y)
}

fn hard_f1(y: &[usize], pred: &[usize], c: usize) -> f64 {
    let p: Vec<Option<usize>> = pred.iter().map(|&v| Some(v)).collect();
    oracle_macro_f1(y, &p, c)
}

fn criterion_3() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = ProbeConfig::default();

    let (xtr, ytr) = blobs(100, 8, 10.0, &mut rng);
    let (xte, yte) = blobs(100, 8, 10.0, &mut rng);
    let probe = train_probe(&Matrix::from_rows(&xtr).unwrap(), &ytr, 2, &cfg, 0).unwrap();
    let pred = probe.predict(&Matrix::from_rows(&xte).unwrap()).unwrap();
    let blob_f1 = hard_f1(&yte, &pred, 2);
    if blob_f1 != 1.0 {
        return verdict(false, format!("separable blobs scored {blob_f1}"));
    }

    let again = train_probe(&Matrix::from_rows(&xtr).unwrap(), &ytr, 2, &cfg, 0).unwrap();
    let pred_again = again.predict(&Matrix::from_rows(&xte).unwrap()).unwrap();
    if again.chosen_c != probe.chosen_c || pred_again != pred {
        return verdict(false, "refit under the same seed changed chosen C or predictions");
    }

    let mut shuffled = Vec::with_capacity(50);
    for seed in 0..50u64 {
        let mut r = ChaCha8Rng::seed_from_u64(1000 + seed);
        let (xtr, mut ytr) = blobs(100, 8, 10.0, &mut r);
        let (xte, yte) = blobs(100, 8, 10.0, &mut r);
        ytr.shuffle(&mut r);
        let cfg = ProbeConfig {
            seed,
            ..ProbeConfig::default()
        };
        let p = train_probe(&Matrix::from_rows(&xtr).unwrap(), &ytr, 2, &cfg, 0).unwrap();
        shuffled.push(hard_f1(
            &yte,
            &p.predict(&Matrix::from_rows(&xte).unwrap()).unwrap(),
            2,
        ));
    }
    let mean = shuffled.iter().sum::<f64>() / shuffled.len() as f64;
    let inside = shuffled.iter().filter(|s| (*s - 0.5).abs() <= 0.1).count();
    if (mean - 0.5).abs() > 0.1 {
        return verdict(
            false,
            format!("shuffled-label mean F1 {mean:.3} outside 0.5 ± 0.1"),
        );
    }

    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut worst_rel: f64 = 0.0;
    for &(n, d, k, c) in &[
        (120usize, 6usize, 3usize, 1.0f64),
        (60, 4, 2, 0.1),
        (200, 16, 4, 10.0),
    ] {
        let x: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..d)
                    .map(|j| normal.sample(&mut rng) + if j == i % k { 1.5 } else { 0.0 })
                    .collect()
            })
            .collect();
        let y: Vec<usize> = (0..n).map(|i| i % k).collect();
        let m = Matrix::from_rows(&x).unwrap();
        let fit = fit_logistic(&m, &y, k, c, 1000, 1e-4).unwrap();
        let lib = reference_objective(&x, &y, k, c, &fit.theta).0;
        let via_lib = LogisticObjective {
            x: &m,
            y: &y,
            num_classes: k,
            c,
        }
        .value(&fit.theta);
        let reference = reference_minimum(&x, &y, k, c);
        let rel = (lib - reference).abs() / reference.abs();
        if (lib - via_lib).abs() > 1e-12 * lib.abs().max(1.0) {
            return verdict(
                false,
                format!("objective definitions disagree: {lib} vs {via_lib}"),
            );
        }
        worst_rel = worst_rel.max(rel);
    }
    let elapsed = start.elapsed();
    verdict(
        worst_rel <= 1e-4 && elapsed < Duration::from_secs(300),
        format!(
            "blobs F1 1.0; refit identical; shuffled mean {mean:.3} ({inside}/50 seeds within ±0.1); \
             objective rel. gap {worst_rel:.2e}; {elapsed:?}"
        ),
    )
}

fn criterion_4() -> Verdict {
    let start = Instant::now();
    let ws = Workspace::new();
    ws.add_dataset("planted", &planted_samples(200, 200, 2, 16, 0.3, 4), 2);
    let cfg = ws.config(&["planted"], STUB_MODEL);
    let h = Harness::new(cfg, None).unwrap();
    let spec = h.config.model_spec(
        "stub",
        "planted",
        Modality::Digits,
        Method::Probe,
        PromptStyle::Direct,
        0,
    );
    let summary = h.run_matrix(std::slice::from_ref(&spec)).unwrap();
    let store = h.results().unwrap();
    let Some(r) = store.get(&summary.cell_keys[0]) else {
        return verdict(false, "probe cell failed");
    };
    let curve = r.curve.as_ref().unwrap();
    let chance = 0.5;
    let others_in_band = curve
        .scores
        .iter()
        .enumerate()
        .all(|(l, s)| l == 1 || (s - chance).abs() <= 0.1);
    let elapsed = start.elapsed();
    let scores: Vec<String> = curve.scores.iter().map(|s| format!("{s:.3}")).collect();
    verdict(
        curve.best_layer == 1 && others_in_band && elapsed < Duration::from_secs(120),
        format!(
            "curve [{}], peak at {}; {elapsed:?}",
            scores.join(", "),
            curve.best_layer
        ),
    )
}

/// Rewriter returning `batch` prefixed copies of the base text per request.
struct MockRewriter {
    base: String,
    calls: Cell<usize>,
}

impl MockRewriter {
    fn new(template: &PromptTemplate) -> Self {
        MockRewriter {
            base: VariantTarget::System.base_text(template),
            calls: Cell::new(0),
        }
    }
}

impl ChatClient for MockRewriter {
    fn chat(&self, _system: &str, _user: &str) -> Result<String, ChatError> {
        let call = self.calls.get();
        self.calls.set(call + 1);
        let variants: Vec<serde_json::Value> = (1..=5)
            .map(|i| serde_json::json!({"id": i, "system_prompt": format!("Rewrite {call}.{i}. {}", self.base)}))
            .collect();
        Ok(serde_json::json!({ "variants": variants }).to_string())
    }
}

/// Library spread and pass@K next to their oracle recomputations.
struct StabilityCase {
    delta: f64,
    oracle_delta: f64,
    scores: Vec<f64>,
    p1: f64,
    p20: f64,
    p1_oracle: f64,
}

fn stability_case(answer: &str, noise: f64) -> Result<StabilityCase, String> {
    let ws = Workspace::new();
    ws.add_dataset("toy", &planted_samples(40, 30, 3, 12, noise, 5), 3);
    let model = STUB_MODEL.replace("hidden_dim = 8", &format!("hidden_dim = 8\n{answer}"));
    let cfg = ws.config(&["toy"], &model);
    let template = PromptTemplate::load(&cfg.dataset("toy").unwrap().template).map_err(|e| e.to_string())?;
    let rewriter = MockRewriter::new(&template);
    let set = generate_variants(&template, VariantTarget::System, &rewriter, 10, 5, 0)
        .map_err(|e| e.to_string())?;
    let mut h = Harness::new(cfg, None).map_err(|e| e.to_string())?;
    let report =
        stability_run(&mut h, set, "toy", "stub", Modality::Digits, 20).map_err(|e| e.to_string())?;
    let store = ResultStore::open(&h.out_dir).map_err(|e| e.to_string())?;
    let mut oracle_scores = Vec::new();
    for key in &report.variant_cells {
        let r = store.get(key).ok_or("variant cell missing")?;
        oracle_scores.push(oracle_macro_f1(
            &r.labels,
            &r.predictions[0].predicted,
            r.num_classes,
        ));
    }
    let max = oracle_scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = oracle_scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let sampled = store.get(&report.sampling_cell).ok_or("sampling cell missing")?;
    let counts = sampled.correct_counts();
    let p1_oracle = counts.iter().sum::<u64>() as f64 / (counts.len() as f64 * 20.0);
    Ok(StabilityCase {
        delta: report.spread.delta,
        oracle_delta: max - min,
        scores: oracle_scores,
        p1: report.pass_at_k.estimate(1).unwrap(),
        p20: report.pass_at_k.estimate(20).unwrap(),
        p1_oracle,
    })
}

fn criterion_5() -> Verdict {
    let start = Instant::now();
    let template = PromptTemplate::from_toml(
        "dataset = \"HAR\"\ntask_description = \"Classify the activity as WALKING, SITTING or LAYING.\"\n\
         question = \"Which activity is shown?\"\nclass_names = [\"WALKING\", \"SITTING\", \"LAYING\"]\n",
    )
    .unwrap();
    let rewriter = MockRewriter::new(&template);
    let set = match generate_variants(&template, VariantTarget::System, &rewriter, 10, 5, 0) {
        Ok(s) => s,
        Err(e) => return verdict(false, format!("generation failed: {e}")),
    };
    let ids: Vec<usize> = set.variants.iter().map(|v| v.id).collect();
    let all_valid = set
        .variants
        .iter()
        .all(|v| validate_variant(&v.text, &template, VariantTarget::System).is_ok());
    let dropped = VariantTarget::System
        .base_text(&template)
        .replace("SITTING", "resting");
    let rejects_missing = validate_variant(&dropped, &template, VariantTarget::System).is_err();
    if rewriter.calls.get() != 2 || ids != (1..=10).collect::<Vec<_>>() || !all_valid || !rejects_missing {
        return verdict(
            false,
            format!(
                "{} requests, ids {ids:?}, all valid: {all_valid}, missing class rejected: {rejects_missing}",
                rewriter.calls.get()
            ),
        );
    }

    let hashed = match stability_case("", 1.0) {
        Ok(v) => v,
        Err(e) => return verdict(false, format!("prompt-hash stub: {e}")),
    };
    let StabilityCase {
        delta,
        oracle_delta,
        scores,
        p1,
        p20,
        p1_oracle,
    } = hashed;
    if delta != oracle_delta || (p1 - p1_oracle).abs() > 1e-12 || p20 < p1 {
        return verdict(
            false,
            format!("prompt-hash stub: delta {delta} vs oracle {oracle_delta}, P@1 {p1} vs {p1_oracle}"),
        );
    }
    let constant = match stability_case("answer = { kind = \"signal\" }", 0.0) {
        Ok(v) => v,
        Err(e) => return verdict(false, format!("constant-correct stub: {e}")),
    };
    let (c_delta, c_p1, c_p20) = (constant.delta, constant.p1, constant.p20);
    let elapsed = start.elapsed();
    let spread: Vec<String> = scores.iter().map(|s| format!("{s:.3}")).collect();
    verdict(
        c_delta == 0.0 && c_p1 == 1.0 && c_p20 == 1.0 && elapsed < Duration::from_secs(60),
        format!(
            "2 requests, ids 1..10 valid, class-dropping rewrite rejected; hash stub delta {delta:.3} == oracle over [{}]; \
             constant-correct delta {c_delta}, P@1 {c_p1}, P@20 {c_p20}; {elapsed:?}",
            spread.join(", ")
        ),
    )
}

/// `Some` verdict only when a real-model config is provided.
fn criterion_6() -> Option<Verdict> {
    let path = std::env::var_os("TSPROBE_E2E_CONFIG")?;
    let cfg = match HarnessConfig::load(std::path::Path::new(&path)) {
        Ok(c) => c,
        Err(e) => return Some(verdict(false, format!("config: {e}"))),
    };
    let (Some(model), Some(dataset)) = (
        cfg.models.first().map(|m| m.name.clone()),
        cfg.dataset("emg").map(|d| d.id.clone()),
    ) else {
        return Some(verdict(
            false,
            "config needs one model and a dataset with id \"emg\"",
        ));
    };
    let h = match Harness::new(cfg, None) {
        Ok(h) => h,
        Err(e) => return Some(verdict(false, e.to_string())),
    };
    let specs: Vec<_> = [Method::Probe, Method::Prompt]
        .into_iter()
        .map(|m| {
            h.config
                .model_spec(&model, &dataset, Modality::Digits, m, PromptStyle::Direct, 0)
        })
        .collect();
    let summary = match h.run_matrix(&specs) {
        Ok(s) => s,
        Err(e) => return Some(verdict(false, e.to_string())),
    };
    let store = h.results().unwrap();
    let score = |i: usize| store.get(&summary.cell_keys[i]).and_then(|r| r.macro_f1());
    Some(match (score(0), score(1)) {
        (Some(probe), Some(prompt)) => verdict(
            probe > prompt,
            format!("{model}: probe {probe:.3} vs prompt {prompt:.3}"),
        ),
        _ => verdict(false, format!("{} of 2 cells failed", summary.failed)),
    })
}

fn criterion_7() -> Verdict {
    let start = Instant::now();
    let ws = Workspace::new();
    ws.add_dataset("toy", &planted_samples(40, 20, 2, 16, 0.4, 7), 2);
    let grid = "\n[grid]\nmodalities = [\"d\", \"v\", \"d+v\"]\nmethods = [\"prompt\", \"probe\"]\n";
    let cfg = ws.config(&["toy"], &format!("{STUB_MODEL}{grid}"));
    let h = Harness::new(cfg, None).unwrap();
    let specs = h.config.expand();
    let first = h.run_matrix(&specs).unwrap();
    let before = snapshot(&h.out_dir);
    let second = h.run_matrix(&specs).unwrap();
    let after = snapshot(&h.out_dir);
    let store = h.results().unwrap();
    if first.executed != 6 || store.completed().len() != 6 {
        return verdict(
            false,
            format!("expected 6 result rows, got {}", store.completed().len()),
        );
    }
    if second.executed != 0 || before != after {
        return verdict(
            false,
            format!("rerun executed {} cells or changed bytes", second.executed),
        );
    }
    if let Err(e) = store.audit() {
        return verdict(false, format!("audit: {e}"));
    }
    for r in store.completed() {
        for (tag_index, set) in r.predictions.iter().enumerate() {
            let oracle = oracle_macro_f1(&r.labels, &set.predicted, r.num_classes);
            let name = match r.spec.method {
                Method::Probe => format!("macro_f1_layer{tag_index:03}"),
                _ => "macro_f1".to_string(),
            };
            if r.metric(&name).map(f64::to_bits) != Some(oracle.to_bits()) {
                return verdict(
                    false,
                    format!("{}: {name} differs from the oracle", r.spec.label()),
                );
            }
        }
    }
    let mut records = 0;
    for entry in fs::read_dir(h.out_dir.join("acts")).unwrap() {
        let store = ActivationStore::load(&entry.unwrap().path()).unwrap();
        let (rows, cols) = store.shape();
        for id in store.sample_ids() {
            let len = fs::metadata(store.dir().join(format!("{id}.f32"))).unwrap().len();
            if len != (rows * cols * 4) as u64 || store.get(id).unwrap().matrix.len() != rows * cols {
                return verdict(false, format!("record {id} is not ({rows}, {cols})"));
            }
            records += 1;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        elapsed < Duration::from_secs(120),
        format!(
            "6 cells, rerun reused all with {} files byte-identical, audit exact, {records} records uniform; {elapsed:?}",
            after.len()
        ),
    )
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |n: usize, v: Verdict| {
        println!(
            "criterion {n}: {} - {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        if !v.pass {
            failed += 1;
        }
    };
    report(1, criterion_1());
    report(2, criterion_2());
    report(3, criterion_3());
    report(4, criterion_4());
    report(5, criterion_5());
    match criterion_6() {
        Some(v) => report(6, v),
        None => println!(
            "criterion 6: FAIL - not attainable here: needs an open model of at least 1B parameters \
             and the EMG corpus; set TSPROBE_E2E_CONFIG to run it (not counted against this target)"
        ),
    }
    report(7, criterion_7());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
