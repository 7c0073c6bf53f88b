use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{HarnessError, Method, ResultStore, RunResult};
use crate::dataset::write_atomic;
use crate::metrics::variant_spread;
use crate::prompting::PromptStyle;
use crate::represent::Modality;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableLayout {
    /// Reference rows, heuristic floors, then per-model probe and prompt.
    Main,
    /// Model × method × modality.
    ModalitySplit,
    /// Model × method × shots × style × modality.
    Ablation,
    /// Variant spread and pass@K per dataset × model × modality.
    Stability,
}

impl TableLayout {
    pub const ALL: [TableLayout; 4] = [
        TableLayout::Main,
        TableLayout::ModalitySplit,
        TableLayout::Ablation,
        TableLayout::Stability,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TableLayout::Main => "main",
            TableLayout::ModalitySplit => "modality_split",
            TableLayout::Ablation => "ablation",
            TableLayout::Stability => "stability",
        }
    }
}

impl fmt::Display for TableLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TableLayout {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TableLayout::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown table layout {s:?}")))
    }
}

/// An externally reported score, rendered verbatim with `source=imported`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub model: String,
    pub method: String,
    pub dataset: String,
    pub macro_f1: f64,
}

pub fn load_reference_rows(path: &Path) -> Result<Vec<ReferenceRow>, HarnessError> {
    let mut rdr =
        csv::Reader::from_path(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    rdr.deserialize()
        .map(|r| r.map_err(|e| HarnessError::Config(format!("{}: {e}", path.display()))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableOutput {
    pub layout: TableLayout,
    pub csv: PathBuf,
    pub markdown: PathBuf,
    pub rows: usize,
    pub warnings: Vec<String>,
}

struct Cell {
    value: f64,
    provenance: String,
}

struct Row {
    keys: Vec<String>,
    cells: BTreeMap<String, Cell>,
}

struct Table {
    key_columns: Vec<&'static str>,
    datasets: Vec<String>,
    rows: Vec<Row>,
}

impl Table {
    fn avg(&self, row: &Row) -> Option<f64> {
        let vals: Vec<f64> = self
            .datasets
            .iter()
            .map(|d| row.cells.get(d).map(|c| c.value))
            .collect::<Option<_>>()?;
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        for r in &self.rows {
            for d in &self.datasets {
                if !r.cells.contains_key(d) {
                    w.push(format!("missing cell: {} × {d}", r.keys.join("/")));
                }
            }
        }
        w
    }

    fn to_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = self.key_columns.iter().map(|s| s.to_string()).collect();
        header.extend(self.datasets.iter().cloned());
        header.push("avg".into());
        header.push("provenance".into());
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = r.keys.clone();
            for d in &self.datasets {
                rec.push(r.cells.get(d).map(|c| c.value.to_string()).unwrap_or_default());
            }
            rec.push(self.avg(r).map(|v| v.to_string()).unwrap_or_default());
            let prov: Vec<String> = self
                .datasets
                .iter()
                .filter_map(|d| r.cells.get(d).map(|c| format!("{d}={}", c.provenance)))
                .collect();
            rec.push(prov.join(";"));
            w.write_record(&rec).map_err(csv_err)?;
        }
        String::from_utf8(w.into_inner().map_err(|e| HarnessError::Store(e.to_string()))?)
            .map_err(|e| HarnessError::Store(e.to_string()))
    }

    fn to_markdown(&self, title: &str) -> String {
        let mut s = format!("# {title}\n\n|");
        for k in &self.key_columns {
            s.push_str(&format!(" {k} |"));
        }
        for d in &self.datasets {
            s.push_str(&format!(" {d} |"));
        }
        s.push_str(" Avg |\n|");
        for _ in 0..self.key_columns.len() + self.datasets.len() + 1 {
            s.push_str("---|");
        }
        s.push('\n');
        for r in &self.rows {
            s.push('|');
            for k in &r.keys {
                s.push_str(&format!(" {k} |"));
            }
            for d in &self.datasets {
                match r.cells.get(d) {
                    Some(c) => s.push_str(&format!(" {} |", fmt3(c.value))),
                    None => s.push_str("  |"),
                }
            }
            match self.avg(r) {
                Some(v) => s.push_str(&format!(" {} |\n", fmt3(v))),
                None => s.push_str("  |\n"),
            }
        }
        let warnings = self.warnings();
        if !warnings.is_empty() {
            s.push_str(&format!("\nIncomplete: {} missing cells.\n", warnings.len()));
        }
        s
    }
}

fn csv_err(e: csv::Error) -> HarnessError {
    HarnessError::Store(e.to_string())
}

/// Three decimals without the leading zero, as in the result tables.
fn fmt3(v: f64) -> String {
    let s = format!("{v:.3}");
    match s.strip_prefix("0.") {
        Some(rest) => format!(".{rest}"),
        None => s,
    }
}

/// Plain single-run cells: greedy, no prompt variant.
fn is_plain(r: &RunResult) -> bool {
    r.spec.variant.is_none() && r.spec.sampling.as_ref().is_none_or(|p| p.num_samples == 1)
}

fn find<'a>(
    cells: &[&'a RunResult],
    dataset: &str,
    pred: impl Fn(&RunResult) -> bool,
) -> Option<&'a RunResult> {
    cells
        .iter()
        .rev()
        .find(|r| r.spec.dataset == dataset && is_plain(r) && pred(r))
        .copied()
}

fn datasets_of(cells: &[&RunResult], refs: &[ReferenceRow]) -> Vec<String> {
    let set: BTreeSet<String> = cells
        .iter()
        .map(|r| r.spec.dataset.clone())
        .chain(refs.iter().map(|r| r.dataset.clone()))
        .collect();
    set.into_iter().collect()
}

fn row_from(
    keys: Vec<String>,
    datasets: &[String],
    cells: &[&RunResult],
    pred: impl Fn(&RunResult) -> bool,
) -> Row {
    let mut out = BTreeMap::new();
    for d in datasets {
        if let Some(r) = find(cells, d, &pred) {
            if let Some(v) = r.macro_f1() {
                out.insert(
                    d.clone(),
                    Cell {
                        value: v,
                        provenance: r.cell_key.clone(),
                    },
                );
            }
        }
    }
    Row { keys, cells: out }
}

fn models_of(cells: &[&RunResult]) -> Vec<String> {
    let set: BTreeSet<String> = cells
        .iter()
        .filter(|r| r.spec.method != Method::Heuristic)
        .map(|r| r.spec.model.clone())
        .collect();
    set.into_iter().collect()
}

fn main_table(cells: &[&RunResult], refs: &[ReferenceRow], main_modality: Modality) -> Table {
    let datasets = datasets_of(cells, refs);
    let mut rows = Vec::new();
    let mut ref_keys: Vec<(String, String)> = Vec::new();
    for r in refs {
        let k = (r.model.clone(), r.method.clone());
        if !ref_keys.contains(&k) {
            ref_keys.push(k);
        }
    }
    for (model, method) in ref_keys {
        let mut out = BTreeMap::new();
        for r in refs.iter().filter(|r| r.model == model && r.method == method) {
            out.insert(
                r.dataset.clone(),
                Cell {
                    value: r.macro_f1,
                    provenance: "imported".into(),
                },
            );
        }
        rows.push(Row {
            keys: vec!["reference".into(), model, method, "imported".into()],
            cells: out,
        });
    }
    let direct = |r: &RunResult| r.spec.style == PromptStyle::Direct && r.spec.shots == 0;
    let models = models_of(cells);
    for model in &models {
        let present = cells
            .iter()
            .any(|r| r.spec.method == Method::RandomProbe && &r.spec.model == model);
        if present {
            rows.push(row_from(
                vec![
                    "heuristic".into(),
                    format!("random ({model})"),
                    "probe".into(),
                    "computed".into(),
                ],
                &datasets,
                cells,
                |r| {
                    r.spec.method == Method::RandomProbe
                        && &r.spec.model == model
                        && r.spec.modality == Some(main_modality)
                        && direct(r)
                },
            ));
        }
    }
    for kind in crate::baselines::HeuristicKind::ALL {
        if cells.iter().any(|r| r.spec.heuristic == Some(kind)) {
            rows.push(row_from(
                vec![
                    "heuristic".into(),
                    "-".into(),
                    kind.as_str().into(),
                    "computed".into(),
                ],
                &datasets,
                cells,
                |r| r.spec.heuristic == Some(kind),
            ));
        }
    }
    for model in &models {
        for method in [Method::Probe, Method::Prompt] {
            if !cells
                .iter()
                .any(|r| r.spec.method == method && &r.spec.model == model)
            {
                continue;
            }
            rows.push(row_from(
                vec![
                    "model".into(),
                    model.clone(),
                    method.as_str().into(),
                    "computed".into(),
                ],
                &datasets,
                cells,
                |r| {
                    r.spec.method == method
                        && &r.spec.model == model
                        && r.spec.modality == Some(main_modality)
                        && direct(r)
                },
            ));
        }
    }
    Table {
        key_columns: vec!["group", "model", "method", "source"],
        datasets,
        rows,
    }
}

fn modality_table(cells: &[&RunResult]) -> Table {
    let datasets = datasets_of(cells, &[]);
    let mut rows = Vec::new();
    for model in models_of(cells) {
        for method in [Method::Probe, Method::Prompt, Method::RandomProbe] {
            for modality in Modality::ALL {
                let pred = |r: &RunResult| {
                    r.spec.method == method
                        && r.spec.model == model
                        && r.spec.modality == Some(modality)
                        && r.spec.style == PromptStyle::Direct
                        && r.spec.shots == 0
                };
                if !cells.iter().any(|r| is_plain(r) && pred(r)) {
                    continue;
                }
                rows.push(row_from(
                    vec![model.clone(), method.as_str().into(), modality.as_str().into()],
                    &datasets,
                    cells,
                    pred,
                ));
            }
        }
    }
    Table {
        key_columns: vec!["model", "method", "modality"],
        datasets,
        rows,
    }
}

fn ablation_table(cells: &[&RunResult]) -> Table {
    let datasets = datasets_of(cells, &[]);
    let mut combos: BTreeSet<(Method, String, usize, PromptStyle, Modality)> = BTreeSet::new();
    for r in cells.iter().filter(|r| is_plain(r)) {
        if matches!(r.spec.method, Method::Probe | Method::Prompt) {
            if let Some(m) = r.spec.modality {
                combos.insert((r.spec.method, r.spec.model.clone(), r.spec.shots, r.spec.style, m));
            }
        }
    }
    let rows = combos
        .into_iter()
        .map(|(method, model, shots, style, modality)| {
            row_from(
                vec![
                    method.as_str().into(),
                    model.clone(),
                    shots.to_string(),
                    style.as_str().into(),
                    modality.as_str().into(),
                ],
                &datasets,
                cells,
                |r| {
                    r.spec.method == method
                        && r.spec.model == model
                        && r.spec.shots == shots
                        && r.spec.style == style
                        && r.spec.modality == Some(modality)
                },
            )
        })
        .collect();
    Table {
        key_columns: vec!["method", "model", "shots", "style", "modality"],
        datasets,
        rows,
    }
}

struct StabilityRow {
    dataset: String,
    model: String,
    modality: String,
    variant_set: String,
    stats: [f64; 5],
    pass: Option<(f64, f64, f64, String)>,
    provenance: String,
}

fn stability_rows(cells: &[&RunResult]) -> Vec<StabilityRow> {
    let mut groups: BTreeMap<(String, String, Modality, String), Vec<&RunResult>> = BTreeMap::new();
    for r in cells {
        if let (Some(v), Some(m)) = (&r.spec.variant, r.spec.modality) {
            groups
                .entry((
                    r.spec.dataset.clone(),
                    r.spec.model.clone(),
                    m,
                    v.set_hash.clone(),
                ))
                .or_default()
                .push(r);
        }
    }
    let mut rows = Vec::new();
    for ((dataset, model, modality, set), mut members) in groups {
        members.sort_by_key(|r| r.spec.variant.as_ref().map(|v| v.id));
        let scores: Vec<f64> = members.iter().filter_map(|r| r.macro_f1()).collect();
        let Ok(spread) = variant_spread(&scores) else {
            continue;
        };
        let sampled = cells.iter().rev().find(|r| {
            r.spec.dataset == dataset
                && r.spec.model == model
                && r.spec.modality == Some(modality)
                && r.spec.variant.is_none()
                && r.spec.method == Method::Prompt
                && r.spec.sampling.as_ref().is_some_and(|p| p.num_samples > 1)
        });
        let pass = sampled.and_then(|r| {
            let t = r.pass_at_k()?;
            let p1 = t.estimate(1)?;
            let pn = t.estimate(t.n)?;
            Some((p1, pn, pn - p1, r.cell_key.clone()))
        });
        let provenance = members
            .iter()
            .map(|r| r.cell_key.as_str())
            .collect::<Vec<_>>()
            .join("+");
        rows.push(StabilityRow {
            dataset,
            model,
            modality: modality.as_str().into(),
            variant_set: set,
            stats: [spread.min, spread.max, spread.mean, spread.median, spread.delta],
            pass,
            provenance,
        });
    }
    rows
}

fn stability_outputs(rows: &[StabilityRow]) -> Result<(String, String, Vec<String>), HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "dataset",
        "model",
        "modality",
        "variant_set",
        "min",
        "max",
        "mean",
        "median",
        "delta",
        "p_at_1",
        "p_at_n",
        "delta_p_at_k",
        "provenance",
    ])
    .map_err(csv_err)?;
    let mut md = String::from(
        "# Prompt stability\n\n| dataset | model | modality | min | max | mean | median | Δ | P@1 | P@n | ΔP@K |\n|---|---|---|---|---|---|---|---|---|---|---|\n",
    );
    let mut warnings = Vec::new();
    for r in rows {
        let mut rec = vec![
            r.dataset.clone(),
            r.model.clone(),
            r.modality.clone(),
            r.variant_set.clone(),
        ];
        rec.extend(r.stats.iter().map(|v| v.to_string()));
        let mut prov = format!("variants={}", r.provenance);
        match &r.pass {
            Some((p1, pn, d, key)) => {
                rec.extend([p1.to_string(), pn.to_string(), d.to_string()]);
                prov.push_str(&format!(";sampling={key}"));
            }
            None => {
                rec.extend([String::new(), String::new(), String::new()]);
                warnings.push(format!(
                    "missing sampling run for {}/{}/{}",
                    r.dataset, r.model, r.modality
                ));
            }
        }
        rec.push(prov);
        w.write_record(&rec).map_err(csv_err)?;
        md.push_str(&format!("| {} | {} | {} |", r.dataset, r.model, r.modality));
        for v in r.stats {
            md.push_str(&format!(" {} |", fmt3(v)));
        }
        match &r.pass {
            Some((p1, pn, d, _)) => {
                md.push_str(&format!(" {} | {} | {} |\n", fmt3(*p1), fmt3(*pn), fmt3(*d)))
            }
            None => md.push_str("  |  |  |\n"),
        }
    }
    if !warnings.is_empty() {
        md.push_str(&format!(
            "\nIncomplete: {} missing sampling runs.\n",
            warnings.len()
        ));
    }
    let csv_text = String::from_utf8(w.into_inner().map_err(|e| HarnessError::Store(e.to_string()))?)
        .map_err(|e| HarnessError::Store(e.to_string()))?;
    Ok((csv_text, md, warnings))
}

/// Write `<out_dir>/<layout>.csv` and `<out_dir>/<layout>.md`.
pub fn emit_tables(
    store: &ResultStore,
    layout: TableLayout,
    out_dir: &Path,
    references: &[ReferenceRow],
    main_modality: Modality,
) -> Result<TableOutput, HarnessError> {
    let cells = store.completed();
    let relevant = match layout {
        TableLayout::Stability => cells.iter().any(|r| r.spec.variant.is_some()),
        _ => !cells.is_empty() || !references.is_empty(),
    };
    if !relevant {
        return Err(HarnessError::Store(format!(
            "no results for the {layout} layout in {}",
            store.dir().display()
        )));
    }
    fs::create_dir_all(out_dir)?;
    let (csv_text, md, warnings, rows) = match layout {
        TableLayout::Stability => {
            let rows = stability_rows(&cells);
            let (c, m, w) = stability_outputs(&rows)?;
            (c, m, w, rows.len())
        }
        _ => {
            let (table, title) = match layout {
                TableLayout::Main => (
                    main_table(&cells, references, main_modality),
                    "Macro-F1 across datasets",
                ),
                TableLayout::ModalitySplit => (modality_table(&cells), "Macro-F1 by modality"),
                _ => (ablation_table(&cells), "Prompting strategy ablation"),
            };
            (
                table.to_csv()?,
                table.to_markdown(title),
                table.warnings(),
                table.rows.len(),
            )
        }
    };
    for w in &warnings {
        log::warn!("{layout}: {w}");
    }
    let csv_path = out_dir.join(format!("{layout}.csv"));
    let md_path = out_dir.join(format!("{layout}.md"));
    write_atomic(&csv_path, csv_text.as_bytes())?;
    write_atomic(&md_path, md.as_bytes())?;
    Ok(TableOutput {
        layout,
        csv: csv_path,
        markdown: md_path,
        rows,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_decimals() {
        assert_eq!(fmt3(0.6111), ".611");
        assert_eq!(fmt3(1.0), "1.000");
    }

    #[test]
    fn layout_names() {
        for l in TableLayout::ALL {
            assert_eq!(l.as_str().parse::<TableLayout>().unwrap(), l);
        }
    }
}
