//! `xgnn`: sample masks, synthesise datasets, train, sweep, cross-validate,
//! gradient-check and render report tables.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use expander_gnn::data::{
    load_dataset, read_meta, synth_graph_dataset, synth_node_dataset, write_graph_dataset, write_node_dataset, Dataset,
    DatasetMeta, DatasetTask, ErParams, SbmParams,
};
use expander_gnn::expander::ExpanderMask;
use expander_gnn::models::suite::{model_gradcheck, suite_combos, SUITE_TOLERANCE};
use expander_gnn::train::{
    activation_sweep, cross_validate, render_table, train, CvReport, SweepReport, TableRow, TrainError, TrainHyper,
    TrainReport,
};
use expander_gnn::{Activation, Family, HeadKind, ModelConfig, Precision, Task, Variant};

#[derive(Debug, Parser)]
#[command(name = "xgnn", version, about = "Expander-sparsified graph neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one model and write its report.
    Train(TrainArgs),
    /// Train once per activation and keep the best on validation.
    Sweep(SweepArgs),
    /// k-fold cross-validation on a graph dataset.
    Cv(CvArgs),
    /// Compare reverse-mode and finite-difference gradients on small random graphs.
    Gradcheck(GradcheckArgs),
    /// Sample one expander mask and write it in text form.
    SampleMask(SampleMaskArgs),
    /// Generate a synthetic dataset directory.
    Synth(SynthArgs),
    /// Render saved reports as a table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Dataset directory, or a name looked up under $XGNN_DATA_DIR.
    #[arg(long)]
    dataset: String,
    /// JSON model config; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// gcn, gin, sage, pna or sgc.
    #[arg(long)]
    model: Option<Family>,
    /// vanilla, expander or activation-only.
    #[arg(long)]
    variant: Option<Variant>,
    /// Mask density in (0, 1]; expander only.
    #[arg(long)]
    density: Option<f64>,
    /// Message-passing layers (propagation steps for sgc).
    #[arg(long)]
    layers: Option<usize>,
    /// Hidden width.
    #[arg(long)]
    hidden: Option<usize>,
    /// linear or mlp3.
    #[arg(long)]
    head: Option<HeadKind>,
    /// Batch norm after every layer (true or false).
    #[arg(long)]
    batchnorm: Option<bool>,
    /// Linear embedding before the first layer (true or false).
    #[arg(long)]
    embedding: Option<bool>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Graphs per mini-batch (graph tasks).
    #[arg(long)]
    batch_size: Option<usize>,
    /// Stop after this many epochs without a new best validation score.
    #[arg(long)]
    early_stop: Option<usize>,
    /// f32 or f64.
    #[arg(long)]
    precision: Option<Precision>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// relu, prelu or tanh.
    #[arg(long)]
    activation: Option<Activation>,
    /// Report JSON path. Masks go to `<out>.masks/`.
    #[arg(long)]
    out: PathBuf,
    /// Also write the trained parameters to this directory.
    #[arg(long)]
    save_params: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Concurrent training jobs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CvArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// relu, prelu or tanh.
    #[arg(long)]
    activation: Option<Activation>,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Concurrent fold jobs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Only this family.
    #[arg(long)]
    model: Option<Family>,
    /// Only this variant.
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Adds this to every analytic gradient entry.
    #[arg(long, hide = true, default_value_t = 0.0)]
    inject_wrong_gradient: f64,
}

#[derive(Debug, Args)]
struct SampleMaskArgs {
    #[arg(long)]
    rows: usize,
    #[arg(long)]
    cols: usize,
    #[arg(long)]
    density: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum SynthTask {
    /// Stochastic block model, node classification.
    Node,
    /// Two-class Erdős–Rényi graphs, graph classification.
    Graph,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_enum)]
    task: SynthTask,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Nodes (node task).
    #[arg(long, default_value_t = 600)]
    nodes: usize,
    /// Classes (node task).
    #[arg(long, default_value_t = 3)]
    classes: usize,
    /// Class-mean separation in noise units (node task).
    #[arg(long, default_value_t = 1.0)]
    separation: f64,
    /// Graphs (graph task).
    #[arg(long, default_value_t = 200)]
    graphs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum ReportFormat {
    Table,
    Json,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Train, sweep or cv report files.
    #[arg(long = "in", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
    format: ReportFormat,
}

/// Exit 1 for bad input caught before compute, 2 for anything later.
enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn usage(msg: impl std::fmt::Display) -> Failure {
    Failure::Usage(msg.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Cv(a) => cmd_cv(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::SampleMask(a) => cmd_sample_mask(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("Run with --help for usage.");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn resolve_dataset(name: &str) -> Result<PathBuf, Failure> {
    let direct = PathBuf::from(name);
    if direct.is_dir() {
        return Ok(direct);
    }
    if let Some(root) = std::env::var_os("XGNN_DATA_DIR") {
        let p = Path::new(&root).join(name);
        if p.is_dir() {
            return Ok(p);
        }
    }
    Err(usage(format!("dataset '{name}' is not a directory (also tried $XGNN_DATA_DIR/{name})")))
}

fn task_of(meta: &DatasetMeta) -> Task {
    match meta.task {
        DatasetTask::NodeClassification => Task::NodeClass,
        DatasetTask::GraphClassification => Task::GraphClass,
        DatasetTask::GraphRegression => Task::GraphReg,
    }
}

/// Defaults for the task, then the config file, then explicit flags.
fn merged_config(a: &ModelArgs, activation: Option<Activation>, meta: &DatasetMeta) -> Result<ModelConfig, Failure> {
    let task = task_of(meta);
    let output_dim = meta.num_classes.unwrap_or(1);
    let family = a.model.unwrap_or(Family::Gcn);
    let mut cfg = if task.is_graph_level() {
        let mut c = ModelConfig::new(family, Variant::Vanilla, 4, 64, output_dim);
        c.head = HeadKind::Mlp3;
        c.batchnorm = true;
        c.use_initial_embedding = true;
        c
    } else {
        ModelConfig::new(family, Variant::Vanilla, 2, 256, output_dim)
    };
    cfg.task = task;
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let overlay: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let serde_json::Value::Object(overlay) = overlay else {
            return Err(usage(format!("{}: expected a JSON object", path.display())));
        };
        let mut base = serde_json::to_value(&cfg).expect("config serialises");
        base.as_object_mut().expect("object").extend(overlay);
        cfg = serde_json::from_value(base).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    }
    if let Some(f) = a.model {
        cfg.family = f;
    }
    if let Some(v) = a.variant {
        cfg.variant = v;
    }
    if a.density.is_some() {
        cfg.density = a.density;
    }
    if let Some(l) = a.layers {
        cfg.layers = l;
    }
    if let Some(h) = a.hidden {
        cfg.hidden = h;
    }
    if let Some(h) = a.head {
        cfg.head = h;
    }
    if let Some(b) = a.batchnorm {
        cfg.batchnorm = b;
    }
    if let Some(e) = a.embedding {
        cfg.use_initial_embedding = e;
    }
    if activation.is_some() {
        cfg.activation = activation;
    }
    cfg.task = task;
    cfg.output_dim = output_dim;
    cfg.seed = a.seed;
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn merged_hyper(a: &ModelArgs, cfg: &ModelConfig) -> Result<TrainHyper, Failure> {
    let mut h = TrainHyper::defaults_for(cfg);
    if let Some(v) = a.epochs {
        h.epochs = v;
    }
    if let Some(v) = a.lr {
        h.lr = v;
    }
    if let Some(v) = a.weight_decay {
        h.weight_decay = v;
    }
    if let Some(v) = a.dropout {
        h.dropout = v;
    }
    if let Some(v) = a.batch_size {
        h.batch_size = v;
    }
    if a.early_stop.is_some() {
        h.early_stop_patience = a.early_stop;
    }
    if let Some(p) = a.precision {
        h.precision = p;
    }
    h.validate().map_err(usage)?;
    Ok(h)
}

/// Validates everything that can be checked from metadata, then loads.
fn prepare(
    a: &ModelArgs,
    activation: Option<Activation>,
) -> Result<(ModelConfig, TrainHyper, Dataset), Failure> {
    let dir = resolve_dataset(&a.dataset)?;
    let meta = read_meta(&dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    let cfg = merged_config(a, activation, &meta)?;
    let hyper = merged_hyper(a, &cfg)?;
    let ds = load_dataset(&dir).with_context(|| format!("loading {}", dir.display()))?;
    Ok((cfg, hyper, ds))
}

/// Writes `bytes` next to `path` and renames it into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().context("output path has no file name")?.to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

fn runtime(e: TrainError) -> Failure {
    match e {
        TrainError::Hyper(_) | TrainError::Mismatch(_) | TrainError::SmallClass { .. } => usage(e),
        e => Failure::Runtime(e.into()),
    }
}

fn write_masks(out: &Path, masks: &[(String, ExpanderMask)]) -> anyhow::Result<Vec<String>> {
    if masks.is_empty() {
        return Ok(Vec::new());
    }
    let dir = PathBuf::from(format!("{}.masks", out.display()));
    let mut files = Vec::new();
    for (name, mask) in masks {
        let mut text = Vec::new();
        mask.write_text(&mut text)?;
        let path = dir.join(format!("{name}.mask"));
        write_atomic(&path, &text)?;
        files.push(path.display().to_string());
    }
    Ok(files)
}

fn cmd_train(a: TrainArgs) -> Result<ExitCode, Failure> {
    let (cfg, hyper, ds) = prepare(&a.model, a.activation)?;
    let outcome = match train(&cfg, &ds, &hyper, cfg.seed) {
        Ok(o) => o,
        Err(TrainError::Diverged { epoch, message, report }) => {
            write_atomic(&a.out, report.to_json().as_bytes())?;
            return Err(Failure::Runtime(anyhow::anyhow!("training diverged at epoch {epoch}: {message}")));
        }
        Err(e) => return Err(runtime(e)),
    };
    let mut report = outcome.report;
    report.mask_files = write_masks(&a.out, &outcome.model.masks())?;
    if let Some(dir) = &a.save_params {
        outcome.model.save_params(dir).with_context(|| format!("saving parameters to {}", dir.display()))?;
    }
    write_atomic(&a.out, report.to_json().as_bytes())?;
    println!("{}", report.summary_line());
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(a: SweepArgs) -> Result<ExitCode, Failure> {
    let (cfg, hyper, ds) = prepare(&a.model, None)?;
    let sweep = activation_sweep(&cfg, &ds, &hyper, cfg.seed, a.jobs).map_err(runtime)?;
    for (act, r) in &sweep.reports {
        println!("{act}: val={:.4} {}", r.val_metric, r.summary_line());
    }
    println!("selected {}", sweep.selected);
    let json = serde_json::to_string_pretty(&sweep).context("serialising sweep")?;
    write_atomic(&a.out, json.as_bytes())?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_cv(a: CvArgs) -> Result<ExitCode, Failure> {
    let (cfg, hyper, ds) = prepare(&a.model, a.activation)?;
    let Dataset::Graph(gds) = ds else {
        return Err(usage("cv needs a graph dataset"));
    };
    let cv = cross_validate(&cfg, &gds, &hyper, a.folds, a.jobs).map_err(runtime)?;
    for (i, m) in cv.fold_metrics.iter().enumerate() {
        println!("fold {i}: {m:.4}");
    }
    println!("mean={:.4} std={:.4}", cv.mean, cv.std);
    let json = serde_json::to_string_pretty(&cv).context("serialising cv report")?;
    write_atomic(&a.out, json.as_bytes())?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<ExitCode, Failure> {
    let combos: Vec<(Family, Variant)> = suite_combos()
        .into_iter()
        .filter(|&(f, v)| match a.model {
            Some(m) => f == m && (m == Family::Sgc || a.variant.is_none_or(|w| w == v)),
            None => f != Family::Sgc && a.variant.is_none_or(|w| w == v),
        })
        .collect();
    if combos.is_empty() {
        return Err(usage("no (model, variant) combination matches the filter"));
    }
    let mut ok = true;
    for (f, v) in combos {
        let err = model_gradcheck(f, v, a.seed, a.inject_wrong_gradient).map_err(|e| Failure::Runtime(e.into()))?;
        let pass = err < SUITE_TOLERANCE;
        ok &= pass;
        println!("{f} {v} max_rel_err={err:.3e} {}", if pass { "PASS" } else { "FAIL" });
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn cmd_sample_mask(a: SampleMaskArgs) -> Result<ExitCode, Failure> {
    let mask = ExpanderMask::sample(a.rows, a.cols, a.density, a.seed).map_err(usage)?;
    let mut text = Vec::new();
    mask.write_text(&mut text).context("formatting mask")?;
    write_atomic(&a.out, &text)?;
    println!("{} {} {} {}", mask.rows(), mask.cols(), mask.degree(), mask.seed());
    Ok(ExitCode::SUCCESS)
}

fn cmd_synth(a: SynthArgs) -> Result<ExitCode, Failure> {
    let dir = &a.out;
    let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = dir.file_name().ok_or_else(|| usage("--out has no directory name"))?.to_string_lossy().into_owned();
    let tmp = parent.join(format!(".{name}.tmp{}", std::process::id()));
    match a.task {
        SynthTask::Node => {
            let ds = synth_node_dataset(&SbmParams::new(a.nodes, a.classes, a.separation, a.seed)).map_err(usage)?;
            write_node_dataset(&tmp, &ds, false).context("writing dataset")?;
        }
        SynthTask::Graph => {
            let ds = synth_graph_dataset(&ErParams::new(a.graphs, a.seed)).map_err(usage)?;
            write_graph_dataset(&tmp, &ds).context("writing dataset")?;
        }
    }
    if dir.exists() {
        fs::remove_dir_all(dir).with_context(|| format!("replacing {}", dir.display()))?;
    }
    fs::rename(&tmp, dir).with_context(|| format!("renaming into {}", dir.display()))?;
    println!("{}", dir.display());
    Ok(ExitCode::SUCCESS)
}

fn table_rows(path: &Path) -> Result<Vec<TableRow>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let label = |r: &TrainReport| {
        let c = &r.config;
        match c.density {
            Some(d) => format!("{} {} {:.0}%", c.family, c.variant, d * 100.0),
            None => format!("{} {}", c.family, c.variant),
        }
    };
    if let Ok(r) = serde_json::from_str::<TrainReport>(&text) {
        return Ok(vec![TableRow::from_report(label(&r), &r)]);
    }
    if let Ok(cv) = serde_json::from_str::<CvReport>(&text) {
        let first = cv.reports.first().ok_or_else(|| usage(format!("{}: empty cv report", path.display())))?;
        return Ok(vec![TableRow::from_cv(label(first), &cv)]);
    }
    if let Ok(s) = serde_json::from_str::<SweepReport>(&text) {
        let r = s.selected_report();
        return Ok(vec![TableRow::from_report(format!("{} ({})", label(r), s.selected), r)]);
    }
    Err(usage(format!("{}: not a train, sweep or cv report", path.display())))
}

fn cmd_report(a: ReportArgs) -> Result<ExitCode, Failure> {
    let mut rows = Vec::new();
    for p in &a.inputs {
        rows.extend(table_rows(p)?);
    }
    match a.format {
        ReportFormat::Table => print!("{}", render_table(&rows)),
        ReportFormat::Json => println!("{}", serde_json::to_string_pretty(&rows).context("serialising rows")?),
    }
    Ok(ExitCode::SUCCESS)
}
