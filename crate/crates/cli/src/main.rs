mod io;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use tlsxai::config::{PipelineConfig, CONFIG_ENV};
use tlsxai::dataset::{check_columns, read_vectors_csv, write_vectors_csv, LabeledDataset, Standardizer};
use tlsxai::explain::{explain_rows, global_summary, local_report, write_beeswarm_csv, GlobalSummary};
use tlsxai::features::{FeatureSchema, Label};
use tlsxai::model::{
    cross_validate, evaluate, oversample_training, train_dataset, validation_curve, CvReport, HyperParams,
    MetricsReport, ModelKind, TreeEnsemble, ValidationCurve,
};
use tlsxai::pipeline::{extract_pcap_bytes, Extraction};
use tlsxai::synth::{sessions_to_pcap, synthesize_sessions, Profile};

use crate::io::{digest_bytes, read_input, sidecar, write_atomic, write_json, InputDigest, Provenance};

#[derive(Parser)]
#[command(name = "tlsxai", version, about = "Explainable detection of malicious TLS flows")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn pcap files into a feature CSV.
    Extract(ExtractArgs),
    /// Fit a model, with k-fold validation and a held-out test split.
    Train(TrainArgs),
    /// Score a saved model on a labeled CSV.
    Eval(EvalArgs),
    /// SHAP values: global ranking, beeswarm data, per-flow reports.
    Explain(ExplainArgs),
    /// Validation curves over hyperparameter grids.
    Tune(TuneArgs),
    /// Generate a labeled synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Args)]
struct SchemaArgs {
    /// Feature schema JSON (default: built-in schema).
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    window_seconds: Option<u32>,
    #[arg(long)]
    bin_width: Option<f64>,
    #[arg(long)]
    n_states: Option<usize>,
    /// Separate Markov matrices per direction.
    #[arg(long)]
    per_direction_markov: bool,
}

#[derive(Args)]
struct ExtractArgs {
    /// pcap files or directories (searched recursively).
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
    /// CSV with columns `path,label`; `path` matches a file name or a path
    /// relative to the input directory.
    #[arg(long)]
    label_map: Option<PathBuf>,
    /// Label for inputs outside `malware/` or `normal/` directories.
    #[arg(long, value_parser = parse_label)]
    label: Option<Label>,
    /// Z-score the output; parameters go to `<output>.scaler.json`.
    #[arg(long)]
    standardize: bool,
    /// Line-delimited JSON of every flow window and its filter outcome.
    #[arg(long)]
    dump_flows: Option<PathBuf>,
    #[command(flatten)]
    schema: SchemaArgs,
}

#[derive(Args)]
struct OversampleArgs {
    /// ADASYN on training folds only.
    #[arg(long)]
    oversample: bool,
    #[arg(long, value_parser = parse_label)]
    target_class: Option<Label>,
    #[arg(long)]
    target_fraction: Option<f64>,
    #[arg(long)]
    k_neighbors: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
}

#[derive(Args)]
struct ModelArgs {
    /// rf, xgb or extra.
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    folds: Option<usize>,
    /// Hyperparameter override, `name=value`; repeatable.
    #[arg(long = "param", value_parser = parse_assignment)]
    params: Vec<(String, f64)>,
    #[command(flatten)]
    oversample: OversampleArgs,
    #[command(flatten)]
    schema: SchemaArgs,
}

#[derive(Args)]
struct TrainArgs {
    dataset: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// Metrics report path (default `<output>.metrics.json`).
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long)]
    test_fraction: Option<f64>,
    /// Skip k-fold validation.
    #[arg(long)]
    no_cv: bool,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct EvalArgs {
    model: PathBuf,
    dataset: PathBuf,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ExplainArgs {
    model: PathBuf,
    dataset: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    top_k: Option<usize>,
    /// Explain only the first N rows.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args)]
struct TuneArgs {
    dataset: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// `name=v1,v2,...`; repeatable, one curve each.
    #[arg(long = "grid", required = true, value_parser = parse_grid)]
    grids: Vec<(String, Vec<f64>)>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct SynthArgs {
    /// normal, malware or mixed.
    #[arg(long, default_value = "mixed")]
    profile: String,
    /// Flows to generate (normal flows for `mixed`).
    #[arg(short, long)]
    n: usize,
    /// Malware flows for `mixed` (default: same as `-n`).
    #[arg(long)]
    n_malware: Option<usize>,
    #[arg(short, long)]
    output: PathBuf,
    /// Also write the generated packets as a pcap.
    #[arg(long)]
    pcap_out: Option<PathBuf>,
    #[command(flatten)]
    schema: SchemaArgs,
}

fn parse_label(s: &str) -> Result<Label, String> {
    Label::parse(s).ok_or_else(|| format!("unknown label {s:?} (expected normal or malware)"))
}

fn parse_assignment(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or("expected name=value")?;
    let v: f64 = v.trim().parse().map_err(|e| format!("{v:?}: {e}"))?;
    Ok((k.trim().to_string(), v))
}

fn parse_grid(s: &str) -> Result<(String, Vec<f64>), String> {
    let (k, vs) = s.split_once('=').ok_or("expected name=v1,v2,...")?;
    let values = vs
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err("empty grid".into());
    }
    Ok((k.trim().to_string(), values))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker pool")?;
    }
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    match cli.command {
        Command::Extract(a) => extract(config, a),
        Command::Train(a) => train(config, a),
        Command::Eval(a) => eval(config, a),
        Command::Explain(a) => explain(config, a),
        Command::Tune(a) => tune(config, a),
        Command::Synth(a) => synth(config, a),
    }
}

fn apply_schema_args(config: &mut PipelineConfig, a: &SchemaArgs) -> Result<FeatureSchema> {
    if let Some(p) = &a.schema {
        config.schema_path = Some(p.clone());
    }
    if let Some(v) = a.window_seconds {
        config.window_seconds = v;
    }
    if let Some(v) = a.bin_width {
        config.bin_width = v;
    }
    if let Some(v) = a.n_states {
        config.n_states = v;
    }
    config.per_direction_markov |= a.per_direction_markov;
    config.validate()?;
    Ok(config.schema()?)
}

fn apply_model_args(config: &mut PipelineConfig, a: &ModelArgs) -> Result<(ModelKind, FeatureSchema)> {
    if let Some(k) = a.model {
        config.model = k;
    }
    if let Some(k) = a.folds {
        config.cv_folds = k;
    }
    let kind = config.model;
    for (name, value) in &a.params {
        config.params_mut(kind).set(name, *value)?;
    }
    let o = &a.oversample;
    let os = &mut config.oversample;
    os.enabled |= o.oversample;
    if o.target_class.is_some() {
        os.target_class = o.target_class;
    }
    if o.target_fraction.is_some() {
        os.target_fraction = o.target_fraction;
    }
    if let Some(k) = o.k_neighbors {
        os.k_neighbors = k;
    }
    if let Some(b) = o.beta {
        os.beta = b;
    }
    let schema = apply_schema_args(config, &a.schema)?;
    Ok((kind, schema))
}

/// Reads a labeled feature CSV and checks its columns against `names`.
fn load_dataset(path: &Path, schema_version: &str, names: &[String]) -> Result<(LabeledDataset, InputDigest)> {
    let (bytes, digest) = read_input(path)?;
    let table = read_vectors_csv(bytes.as_slice(), schema_version).with_context(|| path.display().to_string())?;
    if !names.is_empty() && table.feature_names != names {
        let detail = match table.feature_names.iter().zip(names).position(|(a, b)| a != b) {
            Some(i) => format!("column {i} is {:?}, expected {:?}", table.feature_names[i], names[i]),
            None => format!("{} feature columns, expected {}", table.feature_names.len(), names.len()),
        };
        bail!("{}: schema mismatch: {detail}", path.display());
    }
    let ds = LabeledDataset::from_table(table, schema_version).with_context(|| path.display().to_string())?;
    if ds.is_empty() {
        bail!("{}: no samples", path.display());
    }
    Ok((ds, digest))
}

// --- extract ------------------------------------------------------------------

struct PcapInput {
    path: PathBuf,
    /// Path relative to the input root, `/`-separated.
    rel: String,
    label: Option<Label>,
}

fn is_capture(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("pcap" | "cap" | "pcapng" | "dmp")
    )
}

fn dir_label(rel: &Path) -> Option<Label> {
    rel.parent()?
        .components()
        .rev()
        .find_map(|c| match c.as_os_str().to_str()?.to_ascii_lowercase().as_str() {
            "malware" => Some(Label::Malware),
            "normal" => Some(Label::Normal),
            _ => None,
        })
}

fn load_label_map(path: &Path) -> Result<HashMap<String, Label>> {
    let mut r = csv::Reader::from_path(path).with_context(|| path.display().to_string())?;
    let mut map = HashMap::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.with_context(|| format!("{} row {}", path.display(), i + 1))?;
        let (p, l) = (rec.get(0).unwrap_or(""), rec.get(1).unwrap_or(""));
        let label = Label::parse(l).ok_or_else(|| anyhow!("{} row {}: bad label {l:?}", path.display(), i + 1))?;
        map.insert(p.trim().to_string(), label);
    }
    Ok(map)
}

fn collect_inputs(a: &ExtractArgs) -> Result<Vec<PcapInput>> {
    let map = a.label_map.as_deref().map(load_label_map).transpose()?;
    let mut out = Vec::new();
    for root in &a.inputs {
        let mut found: Vec<(PathBuf, PathBuf)> = Vec::new();
        if root.is_dir() {
            for e in walkdir::WalkDir::new(root).sort_by_file_name() {
                let e = e.with_context(|| root.display().to_string())?;
                if e.file_type().is_file() && is_capture(e.path()) {
                    let rel = e.path().strip_prefix(root).unwrap_or(e.path()).to_path_buf();
                    found.push((e.path().to_path_buf(), rel));
                }
            }
        } else if root.is_file() {
            let rel = PathBuf::from(root.file_name().unwrap_or(root.as_os_str()));
            found.push((root.clone(), rel));
        } else {
            bail!("{}: no such file or directory", root.display());
        }
        for (path, rel) in found {
            let rel_s = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let mapped = map.as_ref().and_then(|m| m.get(&rel_s).or_else(|| m.get(&name)).copied());
            let label = mapped.or_else(|| dir_label(&rel)).or(a.label);
            out.push(PcapInput { path, rel: rel_s, label });
        }
    }
    if out.is_empty() {
        bail!("no capture files found");
    }
    Ok(out)
}

#[derive(Serialize)]
struct FileLog {
    file: String,
    label: Option<Label>,
    rows: usize,
    #[serde(flatten)]
    extraction: Extraction,
}

#[derive(Serialize)]
struct ExtractLog {
    provenance: Provenance,
    files: Vec<FileLog>,
    total_rows: usize,
    unlabeled_rows: usize,
}

#[derive(Serialize)]
struct FlowDump<'a> {
    file: &'a str,
    #[serde(flatten)]
    record: &'a tlsxai::flow::FlowDebugRecord,
}

fn extract(mut config: PipelineConfig, a: ExtractArgs) -> Result<()> {
    let schema = apply_schema_args(&mut config, &a.schema)?;
    let inputs = collect_inputs(&a)?;
    let results: Vec<Result<(Extraction, InputDigest)>> = inputs
        .par_iter()
        .map(|inp| {
            let (bytes, mut digest) = read_input(&inp.path)?;
            digest.name = inp.rel.clone();
            let ex = extract_pcap_bytes(&bytes, &schema, inp.label).with_context(|| inp.path.display().to_string())?;
            Ok((ex, digest))
        })
        .collect();

    let mut vectors = Vec::new();
    let mut files = Vec::with_capacity(inputs.len());
    let mut digests = Vec::with_capacity(inputs.len());
    let mut dump = String::new();
    for (inp, r) in inputs.iter().zip(results) {
        let (mut ex, digest) = r?;
        if ex.decode.truncated {
            log::warn!("{}: capture ends mid-record", inp.path.display());
        }
        for v in &mut ex.vectors {
            v.flow_id = format!("{}:{}", inp.rel, v.flow_id);
        }
        if a.dump_flows.is_some() {
            for rec in &ex.flow_records {
                dump.push_str(&serde_json::to_string(&FlowDump { file: &inp.rel, record: rec })?);
                dump.push('\n');
            }
        }
        log::info!("{}: {} flows kept of {}", inp.rel, ex.flows.kept, ex.flows.windows);
        vectors.append(&mut ex.vectors);
        files.push(FileLog {
            file: inp.rel.clone(),
            label: inp.label,
            rows: 0,
            extraction: ex,
        });
        digests.push(digest);
    }
    for f in &mut files {
        f.rows = f.extraction.flows.kept as usize;
    }

    let names = schema.names();
    let mut scaler = None;
    if a.standardize {
        let rows: Vec<&[f64]> = vectors.iter().map(|v| v.values.as_slice()).collect();
        let s = Standardizer::fit(&names, &rows);
        for v in &mut vectors {
            v.values = s.transform(&v.values);
        }
        scaler = Some(s);
    }

    let provenance = Provenance::new("extract", &config, digests);
    let mut csv = Vec::new();
    write_vectors_csv(&mut csv, &names, &vectors)?;
    write_atomic(&a.output, &csv)?;
    write_json(&sidecar(&a.output, ".meta.json"), &provenance)?;
    if let Some(s) = scaler {
        write_json(&sidecar(&a.output, ".scaler.json"), &s)?;
    }
    if let Some(p) = &a.dump_flows {
        write_atomic(p, dump.as_bytes())?;
    }
    let unlabeled_rows = vectors.iter().filter(|v| v.label.is_none()).count();
    if unlabeled_rows > 0 {
        log::warn!("{unlabeled_rows} rows have no label");
    }
    let log = ExtractLog {
        provenance,
        files,
        total_rows: vectors.len(),
        unlabeled_rows,
    };
    write_json(&sidecar(&a.output, ".log.json"), &log)?;
    println!("{} rows from {} files -> {}", vectors.len(), inputs.len(), a.output.display());
    Ok(())
}

// --- train / eval -------------------------------------------------------------

#[derive(Serialize)]
struct ModelFile<'a> {
    #[serde(flatten)]
    model: &'a TreeEnsemble,
    provenance: &'a Provenance,
}

#[derive(Serialize)]
struct TrainReport<'a> {
    provenance: &'a Provenance,
    model: ModelKind,
    params: &'a HyperParams,
    n_train: usize,
    n_test: usize,
    synthetic_added: usize,
    cv: Option<CvReport>,
    train: MetricsReport,
    test: MetricsReport,
}

fn train(mut config: PipelineConfig, a: TrainArgs) -> Result<()> {
    if let Some(f) = a.test_fraction {
        config.test_fraction = f;
    }
    let (kind, schema) = apply_model_args(&mut config, &a.model)?;
    let (ds, digest) = load_dataset(&a.dataset, &schema.schema_version, &[])?;
    check_columns(&ds.feature_names, &schema).with_context(|| a.dataset.display().to_string())?;
    let params = config.params(kind).clone();
    let oversample = config.oversample.params(&schema);

    let (tr, te) = tlsxai::dataset::train_test_split(&ds.labels(), config.test_fraction, config.seed)?;
    let (train_ds, test_ds) = (ds.subset(&tr), ds.subset(&te));
    let cv = if a.no_cv {
        None
    } else {
        Some(cross_validate(&train_ds, kind, &params, config.cv_folds, config.seed, oversample.as_ref())?)
    };
    let (fit_ds, added) = oversample_training(&train_ds, oversample.as_ref(), config.seed)?;
    let mut model = train_dataset(kind, &fit_ds, &params)?;
    model.schema_version = schema.schema_version.clone();
    model.feature_names = ds.feature_names.clone();
    let train_m = evaluate(&model, &train_ds)?;
    let test_m = evaluate(&model, &test_ds)?;

    let provenance = Provenance::new("train", &config, vec![digest]);
    let report = TrainReport {
        provenance: &provenance,
        model: kind,
        params: &params,
        n_train: train_ds.len(),
        n_test: test_ds.len(),
        synthetic_added: added,
        cv,
        train: train_m,
        test: test_m,
    };
    write_json(&a.output, &ModelFile { model: &model, provenance: &provenance })?;
    let metrics_path = a.metrics.unwrap_or_else(|| sidecar(&a.output, ".metrics.json"));
    write_json(&metrics_path, &report)?;
    if let Some(cv) = &report.cv {
        let v = &cv.validation;
        println!(
            "cv({}): accuracy {:.4} ± {:.4}  f1 {:.4}  mcc {:.4}",
            cv.k, v.accuracy.mean, v.accuracy.std, v.f1.mean, v.mcc.mean
        );
    }
    println!(
        "test: accuracy {:.4}  precision {:.4}  recall {:.4}  f1 {:.4}  mcc {:.4}",
        test_m.accuracy, test_m.precision, test_m.recall, test_m.f1, test_m.mcc
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<(TreeEnsemble, InputDigest)> {
    let (bytes, digest) = read_input(path)?;
    let text = std::str::from_utf8(&bytes).with_context(|| path.display().to_string())?;
    let model = TreeEnsemble::from_json(text).with_context(|| path.display().to_string())?;
    Ok((model, digest))
}

#[derive(Serialize)]
struct EvalReport<'a> {
    provenance: &'a Provenance,
    model: ModelKind,
    n: usize,
    metrics: MetricsReport,
}

fn eval(config: PipelineConfig, a: EvalArgs) -> Result<()> {
    let (model, md) = load_model(&a.model)?;
    let (ds, dd) = load_dataset(&a.dataset, &model.schema_version, &model.feature_names)?;
    let metrics = evaluate(&model, &ds)?;
    let provenance = Provenance::new("eval", &config, vec![md, dd]);
    let report = EvalReport {
        provenance: &provenance,
        model: model.kind,
        n: ds.len(),
        metrics,
    };
    if let Some(p) = &a.output {
        write_json(p, &report)?;
    }
    println!("{}", serde_json::to_string_pretty(&metrics)?);
    Ok(())
}

// --- explain ------------------------------------------------------------------

#[derive(Serialize)]
struct GlobalFile<'a> {
    provenance: &'a Provenance,
    base_value: f64,
    #[serde(flatten)]
    summary: &'a GlobalSummary,
}

fn explain(mut config: PipelineConfig, a: ExplainArgs) -> Result<()> {
    if let Some(k) = a.top_k {
        config.top_k = k;
    }
    let (model, md) = load_model(&a.model)?;
    let (ds, dd) = load_dataset(&a.dataset, &model.schema_version, &model.feature_names)?;
    let n = a.limit.map_or(ds.len(), |l| l.min(ds.len()));
    let rows: Vec<&[f64]> = ds.vectors[..n].iter().map(|v| v.values.as_slice()).collect();
    let ids: Vec<String> = ds.vectors[..n].iter().map(|v| v.flow_id.clone()).collect();
    let names = if model.feature_names.is_empty() { ds.feature_names.clone() } else { model.feature_names.clone() };

    // Everything is computed before the first write, so a failed efficiency
    // check leaves the output directory untouched.
    let expls = explain_rows(&model, &rows, &ids)?;
    let summary = global_summary(&expls, &names, config.top_k)?;
    let mut global_csv = Vec::new();
    summary.write_csv(&mut global_csv)?;
    let mut beeswarm = Vec::new();
    write_beeswarm_csv(&mut beeswarm, &names, &expls, &rows)?;
    let mut local = String::new();
    for (e, x) in expls.iter().zip(&rows) {
        local.push_str(&serde_json::to_string(&local_report(e, &names, x, config.top_k))?);
        local.push('\n');
    }
    let provenance = Provenance::new("explain", &config, vec![md, dd]);
    let global = GlobalFile {
        provenance: &provenance,
        base_value: expls[0].base_value,
        summary: &summary,
    };

    let dir = &a.out_dir;
    write_json(&dir.join("global.json"), &global)?;
    write_atomic(&dir.join("global.csv"), &global_csv)?;
    write_atomic(&dir.join("beeswarm.csv"), &beeswarm)?;
    write_atomic(&dir.join("local.jsonl"), local.as_bytes())?;
    println!("explained {n} flows; top features:");
    for f in summary.features.iter().take(config.top_k) {
        println!("{:>3}. {:<28} {:.6}", f.rank, f.feature, f.mean_abs_phi);
    }
    Ok(())
}

// --- tune ---------------------------------------------------------------------

#[derive(Serialize)]
struct TuneReport<'a> {
    provenance: &'a Provenance,
    model: ModelKind,
    folds: usize,
    curves: Vec<ValidationCurve>,
}

fn tune(mut config: PipelineConfig, a: TuneArgs) -> Result<()> {
    let (kind, schema) = apply_model_args(&mut config, &a.model)?;
    let (ds, digest) = load_dataset(&a.dataset, &schema.schema_version, &[])?;
    check_columns(&ds.feature_names, &schema).with_context(|| a.dataset.display().to_string())?;
    let base = config.params(kind).clone();
    let oversample = config.oversample.params(&schema);
    let mut curves = Vec::with_capacity(a.grids.len());
    for (name, values) in &a.grids {
        let c = validation_curve(&ds, kind, &base, name, values, config.cv_folds, config.seed, oversample.as_ref())?;
        println!("{name}: best {} (validation accuracy {:.4})", c.best_value, best_accuracy(&c));
        curves.push(c);
    }
    let provenance = Provenance::new("tune", &config, vec![digest]);
    write_json(
        &a.output,
        &TuneReport {
            provenance: &provenance,
            model: kind,
            folds: config.cv_folds,
            curves,
        },
    )
}

fn best_accuracy(c: &ValidationCurve) -> f64 {
    c.points
        .iter()
        .find(|p| p.value == c.best_value)
        .map_or(f64::NAN, |p| p.validation.mean)
}

// --- synth --------------------------------------------------------------------

fn synth(mut config: PipelineConfig, a: SynthArgs) -> Result<()> {
    let schema = apply_schema_args(&mut config, &a.schema)?;
    let plan: Vec<(Profile, usize, u64)> = match a.profile.to_ascii_lowercase().as_str() {
        "mixed" => vec![
            (Profile::Normal, a.n, config.seed),
            (Profile::Malware, a.n_malware.unwrap_or(a.n), config.seed.wrapping_add(1)),
        ],
        p => vec![(p.parse::<Profile>().map_err(|e| anyhow!(e))?, a.n, config.seed)],
    };
    let mut all_sessions = Vec::new();
    let mut vectors = Vec::new();
    for (profile, n, seed) in plan {
        let sessions = synthesize_sessions(profile, n, seed);
        let per: Vec<Result<Extraction>> = sessions
            .par_iter()
            .map(|s| Ok(tlsxai::pipeline::featurize_packets(s.clone(), &schema, Some(profile.label()))?))
            .collect();
        for (i, ex) in per.into_iter().enumerate() {
            for mut v in ex?.vectors {
                v.flow_id = format!("synth-{profile}-{i}:{}", v.flow_id);
                vectors.push(v);
            }
        }
        all_sessions.extend(sessions);
    }
    let mut csv = Vec::new();
    write_vectors_csv(&mut csv, &schema.names(), &vectors)?;
    let mut inputs = Vec::new();
    if let Some(p) = &a.pcap_out {
        let pcap = sessions_to_pcap(&all_sessions);
        write_atomic(p, &pcap)?;
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        inputs.push(digest_bytes(&name, &pcap));
    }
    write_atomic(&a.output, &csv)?;
    write_json(&sidecar(&a.output, ".meta.json"), &Provenance::new("synth", &config, inputs))?;
    println!("{} synthetic flows -> {}", vectors.len(), a.output.display());
    Ok(())
}
