use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tsprobe::dataset::{read_source_jsonl, DatasetStore, IngestMeta, Split};
use tsprobe::harness::{
    emit_figures, emit_tables, load_reference_rows, stability_run, Harness, HarnessConfig, MatrixSummary,
    Method, TableLayout,
};
use tsprobe::prompting::{
    generate_variants, HttpChatClient, PromptStyle, PromptTemplate, VariantSet, VariantTarget,
};
use tsprobe::represent::{represent_sample, serialize_series, Modality, RepresentConfig};

#[derive(Parser)]
#[command(
    name = "tsprobe",
    version,
    about = "Prompting versus layer-wise probing for time-series classification"
)]
struct Cli {
    /// Harness config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a JSON-lines source file into the canonical store.
    Ingest {
        #[arg(long)]
        source: PathBuf,
        /// Ingestion metadata (TOML).
        #[arg(long)]
        meta: PathBuf,
        #[arg(long)]
        data_root: Option<PathBuf>,
    },
    /// Render one sample to PNG.
    Render {
        #[command(flatten)]
        sample: SampleArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the digit-space serialization of a sample or of literal values.
    Serialize {
        /// Comma-separated values, e.g. `1.0,20,0.33`.
        #[arg(long, conflicts_with_all = ["dataset", "index"])]
        values: Option<String>,
        #[command(flatten)]
        sample: OptionalSample,
    },
    /// Generate prompt variants with a chat-completion rewriter.
    Variants {
        #[arg(long)]
        dataset: String,
        /// `system` or `question`.
        #[arg(long)]
        target: VariantTarget,
        #[arg(long)]
        endpoint: String,
        #[arg(long)]
        rewriter_model: String,
        #[arg(long, default_value_t = 10)]
        total: usize,
        #[arg(long, default_value_t = 5)]
        batch: usize,
        #[arg(long, default_value_t = 2)]
        retries: usize,
        /// Defaults to the template's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract train and test activations for one probe cell.
    Extract(CellArgs),
    /// Extract and train layer-wise probes for one cell.
    Probe(CellArgs),
    /// Prompt the model on the test split for one cell.
    PromptEval {
        #[command(flatten)]
        cell: CellArgs,
        /// Sampled completions per item; 1 means greedy.
        #[arg(long, default_value_t = 1)]
        samples: usize,
    },
    /// Variant spread and pass@K for one dataset × model × modality.
    Stability {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        model: String,
        #[arg(long, default_value = "d")]
        modality: Modality,
        /// Variant-set JSON file.
        #[arg(long)]
        variants: PathBuf,
        #[arg(long, default_value_t = 20)]
        samples: usize,
    },
    /// Run the configured grid; completed cells are skipped.
    Matrix,
    /// Audit results, then emit tables and figures.
    Report {
        /// `main`, `modality_split`, `ablation`, `stability`; all by default.
        #[arg(long)]
        layout: Vec<TableLayout>,
        /// Also project the test activations of every completed probe cell.
        #[arg(long)]
        tsne: bool,
    },
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    dataset: String,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long)]
    index: usize,
    #[arg(long)]
    data_root: Option<PathBuf>,
}

#[derive(Args)]
struct OptionalSample {
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long)]
    index: Option<usize>,
    #[arg(long)]
    data_root: Option<PathBuf>,
}

#[derive(Args)]
struct CellArgs {
    #[arg(long)]
    dataset: String,
    #[arg(long)]
    model: String,
    #[arg(long, default_value = "d")]
    modality: Modality,
    #[arg(long, default_value = "direct")]
    style: PromptStyle,
    #[arg(long, default_value_t = 0)]
    shots: usize,
}

fn load_config(cli: &Cli) -> Result<HarnessConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| anyhow!("this command needs --config"))?;
    let mut cfg = HarnessConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn harness(cli: &Cli) -> Result<Harness> {
    Ok(Harness::new(load_config(cli)?, cli.out_dir.clone())?)
}

/// Data root: explicit flag, then the config's, then `./data`.
fn data_root(cli: &Cli, explicit: &Option<PathBuf>) -> Result<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p.clone());
    }
    if cli.config.is_some() {
        return Ok(load_config(cli)?.data_root);
    }
    Ok(PathBuf::from("data"))
}

fn represent_config(cli: &Cli) -> Result<RepresentConfig> {
    if cli.config.is_some() {
        Ok(load_config(cli)?.represent)
    } else {
        Ok(RepresentConfig::default())
    }
}

fn print_summary(summary: &MatrixSummary) {
    println!(
        "{} cells: {} executed, {} reused, {} failed",
        summary.total, summary.executed, summary.reused, summary.failed
    );
}

fn run_cell(h: &Harness, cell: &CellArgs, method: Method, samples: usize) -> Result<ExitCode> {
    let mut spec = h.config.model_spec(
        &cell.model,
        &cell.dataset,
        cell.modality,
        method,
        cell.style,
        cell.shots,
    );
    if samples > 1 {
        spec.sampling = Some(tsprobe::model_bridge::SamplingParams::sampled(
            samples,
            h.config.seed,
        ));
    }
    let summary = h.run_matrix(std::slice::from_ref(&spec))?;
    let store = h.results()?;
    let key = &summary.cell_keys[0];
    match store.get(key) {
        Some(r) => {
            println!("{} [{key}]", spec.label());
            for (name, v) in &r.metrics {
                println!("  {name} = {v:.4}");
            }
            Ok(ExitCode::SUCCESS)
        }
        None => {
            let err = store
                .all()
                .iter()
                .rev()
                .find(|r| &r.cell_key == key)
                .and_then(|r| r.error.clone())
                .unwrap_or_default();
            eprintln!("{} failed: {err}", spec.label());
            Ok(ExitCode::from(2))
        }
    }
}

fn load_sample_dataset(root: &Path, id: &str, split: Split) -> Result<tsprobe::dataset::TimeSeriesDataset> {
    Ok(DatasetStore::new(root).load_split(id, split)?)
}

fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Ingest {
            source,
            meta,
            data_root: root,
        } => {
            let root = data_root(cli, root)?;
            let meta: IngestMeta = toml::from_str(&fs::read_to_string(meta)?)
                .with_context(|| format!("parsing {}", meta.display()))?;
            let samples = read_source_jsonl(source)?;
            let store = DatasetStore::new(&root);
            store.ingest(&samples, &meta)?;
            println!("{}", serde_json::to_string_pretty(&store.describe(&meta.id)?)?);
        }
        Command::Render { sample, out } => {
            let root = data_root(cli, &sample.data_root)?;
            let ds = load_sample_dataset(&root, &sample.dataset, sample.split)?;
            if sample.index >= ds.len() {
                bail!("index {} outside 0..{}", sample.index, ds.len());
            }
            let rep = represent_sample(&ds, sample.index, Modality::Visual, &represent_config(cli)?)?;
            for (k, png) in rep.images.iter().enumerate() {
                let path = if rep.images.len() == 1 {
                    out.clone()
                } else {
                    out.with_extension(format!("{k}.png"))
                };
                fs::write(&path, png)?;
                println!("{}", path.display());
            }
        }
        Command::Serialize { values, sample } => {
            let cfg = represent_config(cli)?;
            let text = match (values, &sample.dataset, sample.index) {
                (Some(v), _, _) => {
                    let xs = v
                        .split(',')
                        .map(|s| s.trim().parse::<f64>())
                        .collect::<Result<Vec<_>, _>>()
                        .context("--values must be comma-separated numbers")?;
                    serialize_series(&xs, &cfg.serialization)?
                }
                (None, Some(id), Some(i)) => {
                    let ds = load_sample_dataset(&data_root(cli, &sample.data_root)?, id, sample.split)?;
                    if i >= ds.len() {
                        bail!("index {i} outside 0..{}", ds.len());
                    }
                    represent_sample(&ds, i, Modality::Digits, &cfg)?
                        .text
                        .unwrap_or_default()
                }
                _ => bail!("give --values, or --dataset with --index"),
            };
            println!("{text}");
        }
        Command::Variants {
            dataset,
            target,
            endpoint,
            rewriter_model,
            total,
            batch,
            retries,
            out,
        } => {
            let cfg = load_config(cli)?;
            let entry = cfg
                .dataset(dataset)
                .ok_or_else(|| anyhow!("dataset {dataset:?} is not configured"))?;
            let template = PromptTemplate::load(&entry.template)?;
            let mut client = HttpChatClient::new(endpoint, rewriter_model);
            client.api_key = std::env::var("TSPROBE_REWRITER_KEY").ok();
            let set = generate_variants(&template, *target, &client, *total, *batch, *retries)?;
            let path = match out {
                Some(p) => p.clone(),
                None => VariantSet::default_path(
                    entry.template.parent().unwrap_or(Path::new(".")),
                    &template,
                    *target,
                ),
            };
            set.save(&path)?;
            println!("{} variants -> {}", set.variants.len(), path.display());
        }
        Command::Extract(cell) => {
            let h = harness(cli)?;
            let spec = h.config.model_spec(
                &cell.model,
                &cell.dataset,
                cell.modality,
                Method::Probe,
                cell.style,
                cell.shots,
            );
            for (dir, s) in h.extract(&spec)? {
                println!(
                    "{}: {} computed, {} reused, {} skipped of {}",
                    dir.display(),
                    s.computed,
                    s.reused,
                    s.skipped.len(),
                    s.total
                );
            }
        }
        Command::Probe(cell) => return run_cell(&harness(cli)?, cell, Method::Probe, 1),
        Command::PromptEval { cell, samples } => {
            return run_cell(&harness(cli)?, cell, Method::Prompt, *samples)
        }
        Command::Stability {
            dataset,
            model,
            modality,
            variants,
            samples,
        } => {
            let mut h = harness(cli)?;
            let set = VariantSet::load(variants)?;
            let report = stability_run(&mut h, set, dataset, model, *modality, *samples)?;
            let path = report.save(&h.out_dir.join("stability"))?;
            let s = &report.spread;
            println!(
                "variants: min {:.3} max {:.3} mean {:.3} median {:.3} delta {:.3}",
                s.min, s.max, s.mean, s.median, s.delta
            );
            let n = *samples as u64;
            println!(
                "sampling: P@1 {:.3} P@{n} {:.3}",
                report.pass_at_k.estimate(1).unwrap_or(f64::NAN),
                report.pass_at_k.estimate(n).unwrap_or(f64::NAN)
            );
            println!("{}", path.display());
        }
        Command::Matrix => {
            let h = harness(cli)?;
            let summary = h.run_matrix(&h.config.expand())?;
            print_summary(&summary);
            if !summary.all_ok() {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Report { layout, tsne } => {
            let h = harness(cli)?;
            let store = h.results()?;
            let audited = store.audit()?;
            println!("audit: {audited} cells recomputed bit-for-bit");
            let refs = match &h.config.reference_scores {
                Some(p) => load_reference_rows(p)?,
                None => Vec::new(),
            };
            let layouts = if layout.is_empty() {
                TableLayout::ALL.to_vec()
            } else {
                layout.clone()
            };
            let tables = h.out_dir.join("tables");
            for l in layouts {
                match emit_tables(&store, l, &tables, &refs, h.config.main_modality) {
                    Ok(t) => {
                        println!(
                            "{} ({} rows, {} missing cells)",
                            t.csv.display(),
                            t.rows,
                            t.warnings.len()
                        );
                    }
                    Err(e) => eprintln!("{l}: skipped: {e}"),
                }
            }
            let figures = h.out_dir.join("figures");
            let f = emit_figures(&store, &figures)?;
            for w in &f.warnings {
                eprintln!("figures: {w}");
            }
            for p in &f.files {
                println!("{}", p.display());
            }
            if *tsne {
                for r in store.completed() {
                    if r.spec.method != Method::Probe {
                        continue;
                    }
                    let out = h.tsne_figure(&r.spec, &figures)?;
                    for p in &out.files {
                        println!("{}", p.display());
                    }
                }
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
