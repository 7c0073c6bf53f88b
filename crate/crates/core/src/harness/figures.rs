use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use bhtsne::tSNE;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{HarnessError, Method, ResultStore, RunResult};
use crate::baselines::HeuristicKind;
use crate::dataset::write_atomic;
use crate::plot::{draw_legend, nice_ticks, palette, Canvas, Frame, BLACK, GRID, WHITE};
use crate::represent::Modality;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FigureOutput {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| HarnessError::Store(e.to_string());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    w.into_inner().map_err(|e| HarnessError::Store(e.to_string()))
}

/// Chance level for a dataset: the uniform-guess cell when one ran,
/// otherwise 1/C.
fn chance_level(cells: &[&RunResult], dataset: &str, num_classes: usize) -> f64 {
    cells
        .iter()
        .rev()
        .find(|r| r.spec.dataset == dataset && r.spec.heuristic == Some(HeuristicKind::Uniform))
        .and_then(|r| r.macro_f1())
        .unwrap_or(1.0 / num_classes.max(1) as f64)
}

fn curve_label(r: &RunResult) -> String {
    let mut s = format!("{} {}", r.spec.model, r.spec.modality_label());
    if r.spec.method == Method::RandomProbe {
        s.push_str(" random");
    }
    if r.spec.shots > 0 {
        s.push_str(&format!(" {}shot", r.spec.shots));
    }
    if r.spec.style != crate::prompting::PromptStyle::Direct {
        s.push_str(&format!(" {}", r.spec.style));
    }
    s
}

fn layer_curve_png(title: &str, curves: &[(String, Vec<f64>)], chance: f64) -> Vec<u8> {
    let (w, h) = (720u32, 420u32);
    let mut canvas = Canvas::new(w, h);
    let max_layer = curves
        .iter()
        .map(|(_, s)| s.len())
        .max()
        .unwrap_or(1)
        .saturating_sub(1)
        .max(1);
    let frame = Frame {
        left: 56,
        top: 30,
        right: w as i64 - 16,
        bottom: h as i64 - 40,
        x_range: (0.0, max_layer as f64),
        y_range: (0.0, 1.0),
    };
    canvas.text_centered(w as i64 / 2, 10, title, 1, BLACK);
    frame.draw_axes(&mut canvas, true);
    canvas.text_centered((frame.left + frame.right) / 2, h as i64 - 16, "layer", 1, BLACK);
    canvas.text_vertical(8, frame.bottom - 40, "macro-F1", 1, BLACK);
    let cy = frame.py(chance);
    let mut x = frame.left;
    while x < frame.right {
        canvas.line(x, cy, (x + 5).min(frame.right), cy, BLACK);
        x += 10;
    }
    let mut legend = Vec::new();
    for (i, (label, scores)) in curves.iter().enumerate() {
        let xs: Vec<f64> = (0..scores.len()).map(|l| l as f64).collect();
        frame.polyline(&mut canvas, &xs, scores, palette(i));
        legend.push((label.clone(), palette(i)));
    }
    legend.push(("chance".into(), BLACK));
    draw_legend(&mut canvas, &frame, &legend);
    canvas.into_png()
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn box_png(groups: &[(String, Vec<f64>)]) -> Vec<u8> {
    let (w, h) = (480u32, 360u32);
    let mut canvas = Canvas::new(w, h);
    let frame = Frame {
        left: 56,
        top: 30,
        right: w as i64 - 16,
        bottom: h as i64 - 40,
        x_range: (0.0, groups.len() as f64),
        y_range: (0.0, 1.0),
    };
    canvas.text_centered(w as i64 / 2, 10, "macro-F1 across prompt variants", 1, BLACK);
    frame.draw_axes(&mut canvas, false);
    for (i, (label, vals)) in groups.iter().enumerate() {
        let cx = frame.px(i as f64 + 0.5);
        canvas.text_centered(cx, frame.bottom + 8, label, 1, BLACK);
        if vals.is_empty() {
            continue;
        }
        let mut v = vals.clone();
        v.sort_by(f64::total_cmp);
        let (q1, med, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
        let half = 24;
        let c = palette(i);
        canvas.line(cx, frame.py(v[0]), cx, frame.py(q1), BLACK);
        canvas.line(cx, frame.py(q3), cx, frame.py(v[v.len() - 1]), BLACK);
        canvas.line(cx - 8, frame.py(v[0]), cx + 8, frame.py(v[0]), BLACK);
        let top = frame.py(v[v.len() - 1]);
        canvas.line(cx - 8, top, cx + 8, top, BLACK);
        canvas.fill_rect(cx - half, frame.py(q3), cx + half, frame.py(q1), c);
        canvas.stroke_rect(cx - half, frame.py(q3), cx + half, frame.py(q1), BLACK);
        canvas.line(cx - half, frame.py(med), cx + half, frame.py(med), WHITE);
    }
    canvas.into_png()
}

/// Layer-wise probe curves per dataset and, when variant runs exist, the
/// per-modality spread of prompt variants.
pub fn emit_figures(store: &ResultStore, out_dir: &Path) -> Result<FigureOutput, HarnessError> {
    fs::create_dir_all(out_dir)?;
    let cells = store.completed();
    let mut out = FigureOutput::default();

    let mut by_dataset: BTreeMap<&str, Vec<&RunResult>> = BTreeMap::new();
    for r in &cells {
        if r.spec.method.is_probe() && r.curve.is_some() {
            by_dataset.entry(r.spec.dataset.as_str()).or_default().push(r);
        }
    }
    let mut rows = Vec::new();
    for (dataset, runs) in &by_dataset {
        let chance = chance_level(&cells, dataset, runs[0].num_classes);
        let mut curves = Vec::new();
        for r in runs {
            let curve = r.curve.as_ref().expect("filtered above");
            for (l, s) in curve.scores.iter().enumerate() {
                rows.push(vec![
                    dataset.to_string(),
                    r.spec.model.clone(),
                    r.spec.modality_label().into(),
                    r.spec.method.as_str().into(),
                    r.spec.style.as_str().into(),
                    r.spec.shots.to_string(),
                    l.to_string(),
                    s.to_string(),
                    chance.to_string(),
                    r.cell_key.clone(),
                ]);
            }
            curves.push((curve_label(r), curve.scores.clone()));
        }
        let png = out_dir.join(format!("layer_curves_{dataset}.png"));
        write_atomic(&png, &layer_curve_png(dataset, &curves, chance))?;
        out.files.push(png);
    }
    if by_dataset.is_empty() {
        out.warnings.push("no probe cells; layer curves skipped".into());
    } else {
        let path = out_dir.join("layer_curves.csv");
        let header = [
            "dataset", "model", "modality", "method", "style", "shots", "layer", "macro_f1", "chance", "cell",
        ];
        write_atomic(&path, &csv_bytes(&header, &rows)?)?;
        out.files.insert(0, path);
    }

    let mut rows = Vec::new();
    let mut groups: BTreeMap<Modality, Vec<f64>> = BTreeMap::new();
    for r in cells.iter().filter(|r| r.spec.variant.is_some()) {
        let (Some(m), Some(v), Some(f1)) = (r.spec.modality, &r.spec.variant, r.macro_f1()) else {
            continue;
        };
        groups.entry(m).or_default().push(f1);
        rows.push(vec![
            m.as_str().into(),
            r.spec.dataset.clone(),
            r.spec.model.clone(),
            v.set_hash.clone(),
            v.id.to_string(),
            f1.to_string(),
            r.cell_key.clone(),
        ]);
    }
    if groups.is_empty() {
        out.warnings
            .push("no prompt-variant cells; modality spread skipped".into());
    } else {
        let path = out_dir.join("modality_spread.csv");
        let header = [
            "modality",
            "dataset",
            "model",
            "variant_set",
            "variant",
            "macro_f1",
            "cell",
        ];
        write_atomic(&path, &csv_bytes(&header, &rows)?)?;
        let groups: Vec<(String, Vec<f64>)> = groups
            .into_iter()
            .map(|(m, v)| (m.as_str().to_string(), v))
            .collect();
        let png = out_dir.join("modality_spread.png");
        write_atomic(&png, &box_png(&groups))?;
        out.files.extend([path, png]);
    }
    Ok(out)
}

/// Exact t-SNE to two dimensions from a seeded Gaussian start, so the same
/// inputs and seed give the same embedding.
pub fn tsne_2d(features: &[Vec<f32>], seed: u64) -> Result<Vec<[f64; 2]>, HarnessError> {
    let n = features.len();
    if n < 4 {
        return Err(HarnessError::Config(format!(
            "t-SNE needs at least 4 points, got {n}"
        )));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(HarnessError::Config("t-SNE inputs have ragged dimensions".into()));
    }
    let data: Vec<Vec<f64>> = features
        .iter()
        .map(|f| f.iter().map(|&v| v as f64).collect())
        .collect();
    let rows: Vec<&[f64]> = data.iter().map(Vec::as_slice).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid sd");
    let init: Vec<f64> = (0..n * 2).map(|_| normal.sample(&mut rng)).collect();
    let perplexity = (((n - 1) / 3) as f64).min(30.0);
    let mut tsne: tSNE<f64, &[f64], 2> = tSNE::new(&rows);
    tsne.perplexity(perplexity)
        .epochs(500)
        .initial_embedding(init)
        .exact(|a, b| {
            a.iter()
                .zip(b.iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
        });
    let flat = tsne.embedding();
    Ok(flat.chunks(2).map(|c| [c[0], c[1]]).collect())
}

/// One panel of a t-SNE figure: a feature source (raw series, a layer's
/// activations) over the same labelled samples.
#[derive(Debug, Clone)]
pub struct TsnePanel {
    pub source: String,
    pub features: Vec<Vec<f32>>,
}

/// Project each panel with `tsne_2d` and write `<name>.csv`
/// (`source,x,y,label`, one row per sample per panel) and `<name>.png`.
pub fn emit_tsne(
    out_dir: &Path,
    name: &str,
    panels: &[TsnePanel],
    labels: &[usize],
    class_names: &[String],
    seed: u64,
) -> Result<FigureOutput, HarnessError> {
    fs::create_dir_all(out_dir)?;
    let mut rows = Vec::new();
    let mut projected = Vec::new();
    for p in panels {
        if p.features.len() != labels.len() {
            return Err(HarnessError::Config(format!(
                "panel {} has {} points for {} labels",
                p.source,
                p.features.len(),
                labels.len()
            )));
        }
        let emb = tsne_2d(&p.features, seed)?;
        for (xy, &l) in emb.iter().zip(labels) {
            let label = class_names.get(l).cloned().unwrap_or_else(|| l.to_string());
            rows.push(vec![
                p.source.clone(),
                xy[0].to_string(),
                xy[1].to_string(),
                label,
            ]);
        }
        projected.push((p.source.clone(), emb));
    }
    let csv_path = out_dir.join(format!("{name}.csv"));
    write_atomic(&csv_path, &csv_bytes(&["source", "x", "y", "label"], &rows)?)?;

    let panel_w = 300i64;
    let (w, h) = ((panel_w * projected.len().max(1) as i64) as u32, 340u32);
    let mut canvas = Canvas::new(w, h);
    for (i, (source, emb)) in projected.iter().enumerate() {
        let (x_range, y_range) = (
            crate::plot::padded_range(emb.iter().map(|p| p[0])),
            crate::plot::padded_range(emb.iter().map(|p| p[1])),
        );
        let frame = Frame {
            left: i as i64 * panel_w + 12,
            top: 24,
            right: (i as i64 + 1) * panel_w - 12,
            bottom: h as i64 - 12,
            x_range,
            y_range,
        };
        canvas.text_centered((frame.left + frame.right) / 2, 8, source, 1, BLACK);
        for t in nice_ticks(y_range.0, y_range.1, 4) {
            let y = frame.py(t);
            canvas.line(frame.left, y, frame.right, y, GRID);
        }
        for (p, &l) in emb.iter().zip(labels) {
            canvas.dot(frame.px(p[0]), frame.py(p[1]), 2, palette(l));
        }
        canvas.stroke_rect(frame.left, frame.top, frame.right, frame.bottom, BLACK);
        if i == 0 {
            let legend: Vec<_> = (0..class_names.len())
                .map(|k| (class_names[k].clone(), palette(k)))
                .collect();
            draw_legend(&mut canvas, &frame, &legend);
        }
    }
    let png_path = out_dir.join(format!("{name}.png"));
    write_atomic(&png_path, &canvas.into_png())?;
    Ok(FigureOutput {
        files: vec![csv_path, png_path],
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
    }

    #[test]
    fn tsne_is_seeded_and_separates_blobs() {
        let mut feats = Vec::new();
        for i in 0..30 {
            let c = if i < 15 { 0.0 } else { 10.0 };
            feats.push(vec![c + (i % 5) as f32 * 0.1, c - (i % 3) as f32 * 0.1, c]);
        }
        let a = tsne_2d(&feats, 3).unwrap();
        assert_eq!(a, tsne_2d(&feats, 3).unwrap());
        let centroid = |r: std::ops::Range<usize>| {
            let n = r.len() as f64;
            let (sx, sy) = a[r].iter().fold((0.0, 0.0), |s, p| (s.0 + p[0], s.1 + p[1]));
            (sx / n, sy / n)
        };
        let (c0, c1) = (centroid(0..15), centroid(15..30));
        let between = ((c0.0 - c1.0).powi(2) + (c0.1 - c1.1).powi(2)).sqrt();
        let within = a[..15]
            .iter()
            .map(|p| ((p[0] - c0.0).powi(2) + (p[1] - c0.1).powi(2)).sqrt())
            .fold(0.0, f64::max);
        assert!(between > within, "between {between} within {within}");
    }
}
