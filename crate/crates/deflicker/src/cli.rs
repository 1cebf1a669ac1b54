//! Command-line interface: synthesize data, train a model, apply it,
//! score outputs and sweep loss weights.
//!
//! One TOML file configures every subcommand. Each setting has a default,
//! so every flag is optional; `--set key=value` overrides single entries
//! without editing the file, and `--dump-config` prints the effective
//! result. A 16-hex-digit hash of the effective configuration is stamped
//! into datasets, reports and sweep tables so artifacts can be traced to
//! the exact setup that produced them.
//!
//! Exit codes: 0 success, 1 runtime failure (missing files, divergence),
//! 2 configuration or usage error.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluation::{evaluate_with, save_report};
use crate::flow::{flow_file_name, FlowProvider, OcclusionThresholds};
use crate::perception::{FeatureExtractor, PerceptualMetric};
use crate::synthgen::{
    apply_flicker, generate_sequence, ideal_consistent_output, BaseImage, FlickerMode,
    FlickerSpec, MotionModel, MotionSpec,
};
use crate::training::{
    run_sweep, train, Dataset, FlowBackend, IterationRecord, SweepRow, SweepSpec, TrainOptions,
    TrainingConfig, TrainingItem,
};
use crate::transform_net::TransformNet;
use crate::video_data::{load_frame_sequence, save_frame_sequence, write_flo, BitDepth,
    FrameSequence};

/// Directory against which relative pretrained weight paths resolve, so
/// one config file works across machines.
pub const WEIGHT_DIR_ENV: &str = "DEFLICKER_WEIGHT_DIR";

/// Everything a run needs, in one file. Sections cover the stages; the
/// top-level seed is a label stamped into artifacts, while each stage's
/// own seed controls its randomness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub training: TrainingConfig,
    pub evaluation: EvalConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            synth: SynthConfig::default(),
            training: TrainingConfig::default(),
            evaluation: EvalConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

/// Recipe for `synth`. Sequence `i` of `count` offsets both seeds by `i`,
/// so a dataset is fully determined by this section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub count: usize,
    /// PNG sample depth. Sixteen keeps quantization error (about 1.5e-5
    /// per sample) well below the metric tolerances; eight is for eyeballing.
    pub bit_depth: BitDepth,
    /// Also write the flicker-free `ideal/` frames for each sequence.
    pub write_ideal: bool,
    pub motion: MotionSpec,
    pub flicker: FlickerSpec,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 1,
            bit_depth: BitDepth::Sixteen,
            write_ideal: true,
            motion: MotionSpec {
                base: BaseImage::Checkerboard { cell: 8 },
                motion: MotionModel::Translation { dx: 2.0, dy: 1.0 },
                frames: 10,
                height: 48,
                width: 48,
                seed: 0,
            },
            flicker: FlickerSpec {
                mode: FlickerMode::BrightnessSinusoid { period: 5.0 },
                amplitude: 0.2,
                seed: 0,
            },
        }
    }
}

/// How `eval` (and the sweep's evaluation half) scores sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Feature space for the perceptual distance.
    pub metric: FeatureExtractor,
    pub flow_backend: FlowBackend,
    pub occlusion: OcclusionThresholds,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            metric: FeatureExtractor::FixedRandom { seed: 0 },
            flow_backend: FlowBackend::Analytic,
            occlusion: OcclusionThresholds::default(),
        }
    }
}

/// `(lambda_t, lambda_p)` pairs for `sweep`; each run trains with
/// `lambda_st = lambda_lt = lambda_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub pairs: Vec<(f64, f64)>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            pairs: vec![(100.0, 100.0), (100.0, 10.0), (100.0, 1.0)],
        }
    }
}

/// 16 hex digits of SHA-256 over the canonical TOML rendering.
pub fn config_hash(cfg: &RunConfig) -> Result<String> {
    let text = toml::to_string(cfg)
        .map_err(|e| Error::Config(format!("config not serializable: {e}")))?;
    let digest = Sha256::digest(text.as_bytes());
    Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
}

/// Reads the config file and `--set` overrides, layers them over the
/// defaults (tables merge by key, everything else replaces), and
/// deserializes. Partial sections therefore inherit the fields they do
/// not mention, while unknown keys anywhere are errors.
pub fn load_effective_config(path: Option<&Path>, sets: &[String]) -> Result<RunConfig> {
    let mut doc = toml::Value::try_from(RunConfig::default())
        .map_err(|e| Error::Config(format!("default config not serializable: {e}")))?;
    if let Some(p) = path {
        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let file: toml::Value = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
        deep_merge(&mut doc, file);
    }
    for set in sets {
        apply_override(&mut doc, set)?;
    }
    doc.try_into()
        .map_err(|e| Error::Config(e.to_string()))
}

fn deep_merge(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(base), toml::Value::Table(overlay)) => {
            for (key, value) in overlay {
                match base.get_mut(&key) {
                    Some(slot) => deep_merge(slot, value),
                    None => {
                        base.insert(key, value);
                    }
                }
            }
        }
        (slot, value) => *slot = value,
    }
}

/// Sets one dotted key in the TOML document. The value parses as a TOML
/// fragment; bare words that do not parse (enum tags, paths) fall back to
/// strings so the shell does not need nested quotes.
fn apply_override(doc: &mut toml::Value, set: &str) -> Result<()> {
    let (key, raw) = set
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{set}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("override `{set}` has an empty key")));
    }
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let segments: Vec<&str> = key.split('.').collect();
    let mut node = doc;
    for segment in &segments[..segments.len() - 1] {
        let table = node.as_table_mut().ok_or_else(|| {
            Error::Config(format!("override `{key}`: `{segment}` is not a table"))
        })?;
        node = table
            .entry(segment.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("override `{key}`: parent is not a table")))?;
    table.insert(segments[segments.len() - 1].to_string(), value);
    Ok(())
}

/// Relative pretrained weight paths resolve against [`WEIGHT_DIR_ENV`]
/// when it is set.
fn resolve_weight_path(extractor: FeatureExtractor) -> FeatureExtractor {
    match extractor {
        FeatureExtractor::Pretrained {
            weights,
            tap_layers,
        } if weights.is_relative() => {
            let weights = match std::env::var_os(WEIGHT_DIR_ENV) {
                Some(dir) => PathBuf::from(dir).join(weights),
                None => weights,
            };
            FeatureExtractor::Pretrained {
                weights,
                tap_layers,
            }
        }
        other => other,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "deflicker",
    version,
    about = "Removes temporal flicker from per-frame-processed videos."
)]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one config entry, e.g. --set training.seed=7. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,

    /// Print the effective configuration as TOML and exit.
    #[arg(long, global = true)]
    dump_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic sequences with exact flows and injected flicker.
    Synth(SynthArgs),
    /// Train a transformation network on a dataset directory.
    Train(TrainArgs),
    /// Apply a trained model to one sequence.
    Process(ProcessArgs),
    /// Score an output sequence for stability and perceptual drift.
    Eval(EvalArgs),
    /// Train once per loss-weight pair and tabulate the trade-off.
    Sweep(SweepArgs),
    /// Render human-readable summaries from a run directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Dataset directory to create.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset directory from `synth`, or one laid out the same way.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Run directory for checkpoints, the config echo and the log.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Checkpoint to resume from.
    #[arg(long, value_name = "FILE")]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ProcessArgs {
    /// Trained checkpoint (`model.ckpt` from `train`).
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Directory of original input frames.
    #[arg(long, value_name = "DIR")]
    input: PathBuf,
    /// Directory of per-frame processed frames.
    #[arg(long, value_name = "DIR")]
    processed: PathBuf,
    /// Directory for the temporally consistent output frames.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Sequence directory (contains `input/` and `processed/`, plus
    /// `motion.json` or `flows/` depending on the flow backend).
    #[arg(long, value_name = "DIR")]
    sequence: PathBuf,
    /// Directory of output frames to score.
    #[arg(long, value_name = "DIR")]
    output: PathBuf,
    /// Report stem; writes `<stem>.txt` and `<stem>.json`.
    #[arg(long, value_name = "STEM")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Training dataset directory.
    #[arg(long, value_name = "DIR")]
    train_data: PathBuf,
    /// Evaluation dataset directory; defaults to the training set.
    #[arg(long, value_name = "DIR")]
    eval_data: Option<PathBuf>,
    /// Output directory for per-run checkpoints and the sweep table.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Run directory holding `train.log`, `sweep.json` and/or reports.
    #[arg(long, value_name = "DIR")]
    from: PathBuf,
    /// Write the rendered text here instead of stdout.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

/// Runs the CLI and returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => 2,
                _ => 1,
            }
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let cfg = load_effective_config(cli.config.as_deref(), &cli.sets)?;
    let hash = config_hash(&cfg)?;
    if cli.dump_config {
        let text = toml::to_string_pretty(&cfg)
            .map_err(|e| Error::Config(format!("config not serializable: {e}")))?;
        print!("{text}");
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(Error::Config(
            "no subcommand given; run with --help for usage".into(),
        ));
    };
    match command {
        Command::Synth(args) => cmd_synth(&cfg, &hash, &args),
        Command::Train(args) => cmd_train(&cfg, &hash, &args),
        Command::Process(args) => cmd_process(&args),
        Command::Eval(args) => cmd_eval(&cfg, &hash, &args),
        Command::Sweep(args) => cmd_sweep(&cfg, &hash, &args),
        Command::Report(args) => cmd_report(&args),
    }
}

/// Dataset layout written by `synth` and read back by `train`, `eval`
/// and `sweep`:
///
/// ```text
/// out/
///   dataset.json              sequence listing, config hash, seed
///   seq_000/
///     input/frame_00001.png   originals
///     processed/              flickered originals
///     ideal/                  flicker-free target (optional)
///     flows/flow_t2_ref1.flo  exact displacement fields
///     motion.json             motion + flicker specs, adjustments
/// ```
fn cmd_synth(cfg: &RunConfig, hash: &str, args: &SynthArgs) -> Result<()> {
    let synth = &cfg.synth;
    if synth.count == 0 {
        return Err(Error::Config("synth.count must be at least 1".into()));
    }
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let mut names = Vec::with_capacity(synth.count);
    for i in 0..synth.count {
        let mut motion = synth.motion.clone();
        motion.seed = motion.seed.wrapping_add(i as u64);
        let mut flicker = synth.flicker;
        flicker.seed = flicker.seed.wrapping_add(i as u64);

        let sequence = generate_sequence(&motion)?;
        let input = FrameSequence::new(sequence.frames.frames().to_vec(), synth.bit_depth)?;
        let (processed, adjustments) = apply_flicker(&input, &flicker)?;

        let name = format!("seq_{i:03}");
        let dir = args.out.join(&name);
        save_frame_sequence(&dir.join("input"), &input)?;
        save_frame_sequence(&dir.join("processed"), &processed)?;
        if synth.write_ideal {
            let ideal = ideal_consistent_output(&input, &adjustments)?;
            save_frame_sequence(&dir.join("ideal"), &ideal)?;
        }
        let flow_dir = dir.join("flows");
        fs::create_dir_all(&flow_dir).map_err(|e| Error::io(&flow_dir, e))?;
        for ((t, reference), flow) in &sequence.flows {
            write_flo(&flow_dir.join(flow_file_name(*t, *reference)), flow)?;
        }
        write_json(
            &dir.join("motion.json"),
            &serde_json::json!({
                "motion": motion,
                "flicker": flicker,
                "adjustments": adjustments,
                "config_hash": hash,
                "seed": cfg.seed,
            }),
        )?;
        names.push(name);
    }
    write_json(
        &args.out.join("dataset.json"),
        &serde_json::json!({
            "config_hash": hash,
            "seed": cfg.seed,
            "sequences": names,
        }),
    )?;
    println!(
        "wrote {} sequence(s) to {}",
        synth.count,
        args.out.display()
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig, hash: &str, args: &TrainArgs) -> Result<()> {
    let mut training = cfg.training.clone();
    training.feature_extractor = resolve_weight_path(training.feature_extractor);
    training.validate()?;
    let dataset = load_dataset(&args.data, &training.flow_backend)?;
    dataset.validate(&training)?;

    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let echo = toml::to_string_pretty(cfg)
        .map_err(|e| Error::Config(format!("config not serializable: {e}")))?;
    let echo_path = args.out.join("config.toml");
    fs::write(&echo_path, format!("# config hash: {hash}\n{echo}"))
        .map_err(|e| Error::io(&echo_path, e))?;

    let log_path = args.out.join("train.log");
    let opts = TrainOptions {
        checkpoint_dir: Some(&args.out),
        resume: args.resume.as_deref(),
        log_path: Some(&log_path),
    };
    let outcome = train(&training, &dataset, &opts)?;
    if let Some(last) = outcome.log.last() {
        println!(
            "iteration {}: total {:.6e} (perceptual {:.6e}, short {:.6e}, long {:.6e})",
            last.iteration, last.total, last.l_p, last.l_st, last.l_lt
        );
    }
    println!("model written to {}", args.out.join("model.ckpt").display());
    Ok(())
}

fn cmd_process(args: &ProcessArgs) -> Result<()> {
    let (net, _) = TransformNet::load(&args.checkpoint)?;
    let input = load_frame_sequence(&args.input)?;
    let processed = load_frame_sequence(&args.processed)?;
    let output = net.process_video(&input, &processed)?;
    save_frame_sequence(&args.out, &output)?;
    println!("wrote {} frame(s) to {}", output.len(), args.out.display());
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, hash: &str, args: &EvalArgs) -> Result<()> {
    let eval = &cfg.evaluation;
    let processed = load_frame_sequence(&args.sequence.join("processed"))?;
    let output = load_frame_sequence(&args.output)?;
    let provider = flow_provider_for(&args.sequence, &eval.flow_backend)?;
    let metric = PerceptualMetric::new(&resolve_weight_path(eval.metric.clone()))?;
    let mut report = evaluate_with(&output, &processed, &provider, &metric, eval.occlusion)?;
    report.sequence_id = args
        .sequence
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    report.config_hash = hash.to_string();
    report.seed = cfg.seed;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    save_report(&report, &args.out)?;
    println!(
        "E_warp {:?}  D_perceptual {:?}",
        report.e_warp, report.d_perceptual
    );
    println!(
        "report written to {} and {}",
        args.out.with_extension("txt").display(),
        args.out.with_extension("json").display()
    );
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig, hash: &str, args: &SweepArgs) -> Result<()> {
    let mut base = cfg.training.clone();
    base.feature_extractor = resolve_weight_path(base.feature_extractor);
    let spec = SweepSpec {
        pairs: cfg.sweep.pairs.clone(),
        base,
    };
    spec.validate()?;
    let train_set = load_dataset(&args.train_data, &spec.base.flow_backend)?;
    let eval_dir = args.eval_data.as_deref().unwrap_or(&args.train_data);
    let eval_set = load_dataset(eval_dir, &cfg.evaluation.flow_backend)?;
    let metric = PerceptualMetric::new(&resolve_weight_path(cfg.evaluation.metric.clone()))?;

    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let opts = TrainOptions {
        checkpoint_dir: Some(&args.out),
        resume: None,
        log_path: None,
    };
    let rows = run_sweep(&spec, &train_set, &eval_set, &metric, &opts)?;

    let table = render_sweep_table(&rows, hash, cfg.seed);
    let table_path = args.out.join("sweep.txt");
    fs::write(&table_path, &table).map_err(|e| Error::io(&table_path, e))?;
    write_json(
        &args.out.join("sweep.json"),
        &serde_json::json!({
            "config_hash": hash,
            "seed": cfg.seed,
            "rows": rows,
        }),
    )?;
    print!("{table}");
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let mut text = String::new();
    let log_path = args.from.join("train.log");
    if log_path.is_file() {
        text.push_str(&render_training_log(&log_path)?);
    }
    let sweep_path = args.from.join("sweep.json");
    if sweep_path.is_file() {
        let value = read_json(&sweep_path)?;
        let rows: Vec<SweepRow> =
            serde_json::from_value(value.get("rows").cloned().unwrap_or_default())
                .map_err(|e| Error::Config(format!("{}: {e}", sweep_path.display())))?;
        let hash = value.get("config_hash").and_then(|v| v.as_str()).unwrap_or("");
        let seed = value.get("seed").and_then(|v| v.as_u64()).unwrap_or(0);
        text.push_str(&render_sweep_table(&rows, hash, seed));
    }
    for stem in report_stems(&args.from)? {
        let report = crate::evaluation::load_report(&stem)?;
        text.push_str(&format!(
            "eval {}: E_warp {:?}  D_perceptual {:?}  (metric {}, flows {}, hash {})\n",
            report.sequence_id,
            report.e_warp,
            report.d_perceptual,
            report.metric_id,
            report.flow_backend,
            report.config_hash,
        ));
    }
    if text.is_empty() {
        return Err(Error::Config(format!(
            "nothing to report under {}",
            args.from.display()
        )));
    }
    match &args.out {
        Some(path) => fs::write(path, &text).map_err(|e| Error::io(path, e))?,
        None => print!("{text}"),
    }
    Ok(())
}

/// JSON files in the run directory that parse as metric reports, by stem.
fn report_stems(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut stems = Vec::new();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    for path in paths {
        let stem = path.with_extension("");
        if crate::evaluation::load_report(&stem).is_ok() {
            stems.push(stem);
        }
    }
    Ok(stems)
}

fn render_training_log(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let record: IterationRecord = serde_json::from_str(line)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        records.push(record);
    }
    if records.is_empty() {
        return Ok(String::new());
    }
    let mut out = String::new();
    out.push_str(&format!("# training log ({} iterations)\n", records.len()));
    out.push_str(&format!(
        "{:>10} {:>14} {:>14} {:>14} {:>14}\n",
        "iteration", "perceptual", "short", "long", "total"
    ));
    // At most ten evenly spaced rows, always including first and last.
    let step = records.len().div_ceil(10).max(1);
    let mut shown: Vec<&IterationRecord> = records.iter().step_by(step).collect();
    if shown.last().map(|r| r.iteration) != records.last().map(|r| r.iteration) {
        shown.push(records.last().expect("nonempty"));
    }
    for record in shown {
        out.push_str(&format!(
            "{:>10} {:>14.6e} {:>14.6e} {:>14.6e} {:>14.6e}\n",
            record.iteration, record.l_p, record.l_st, record.l_lt, record.total
        ));
    }
    Ok(out)
}

fn render_sweep_table(rows: &[SweepRow], hash: &str, seed: u64) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "# loss-weight sweep (config hash {hash}, seed {seed})\n"
    ));
    out.push_str(&format!(
        "{:>12} {:>12} {:>10} {:>14} {:>14}\n",
        "lambda_t", "lambda_p", "ratio", "E_warp", "D_perceptual"
    ));
    for row in rows {
        out.push_str(&format!(
            "{:>12} {:>12} {:>10} {:>14.6e} {:>14.6e}\n",
            row.lambda_t, row.lambda_p, row.r, row.e_warp, row.d_perceptual
        ));
    }
    out
}

/// Reads a dataset directory: either one sequence directory (recognized
/// by its `input/` subdirectory) or a directory of such, ordered by the
/// `dataset.json` listing when present and by name otherwise.
fn load_dataset(dir: &Path, backend: &FlowBackend) -> Result<Dataset> {
    let mut dirs = Vec::new();
    if dir.join("input").is_dir() {
        dirs.push(dir.to_path_buf());
    } else {
        let listing = dir.join("dataset.json");
        if listing.is_file() {
            let value = read_json(&listing)?;
            let names: Vec<String> =
                serde_json::from_value(value.get("sequences").cloned().unwrap_or_default())
                    .map_err(|e| Error::Config(format!("{}: {e}", listing.display())))?;
            dirs.extend(names.iter().map(|name| dir.join(name)));
        } else {
            let mut found: Vec<PathBuf> = fs::read_dir(dir)
                .map_err(|e| Error::io(dir, e))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| p.join("input").is_dir())
                .collect();
            found.sort();
            dirs = found;
        }
    }
    if dirs.is_empty() {
        return Err(Error::Config(format!(
            "no sequences found under {}",
            dir.display()
        )));
    }
    let mut items = Vec::with_capacity(dirs.len());
    for d in &dirs {
        items.push(load_sequence_dir(d, backend)?);
    }
    Ok(Dataset { items })
}

fn load_sequence_dir(dir: &Path, backend: &FlowBackend) -> Result<TrainingItem> {
    let input = load_frame_sequence(&dir.join("input"))?;
    let processed = load_frame_sequence(&dir.join("processed"))?;
    let flows = flow_provider_for(dir, backend)?;
    let item = TrainingItem {
        input,
        processed,
        flows,
    };
    item.validate()?;
    Ok(item)
}

fn flow_provider_for(dir: &Path, backend: &FlowBackend) -> Result<FlowProvider> {
    match backend {
        FlowBackend::Analytic => {
            let path = dir.join("motion.json");
            let value = read_json(&path)?;
            let motion = value.get("motion").cloned().ok_or_else(|| {
                Error::Config(format!("{}: missing `motion` entry", path.display()))
            })?;
            let spec: MotionSpec = serde_json::from_value(motion)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            Ok(FlowProvider::Analytic(spec))
        }
        FlowBackend::File => Ok(FlowProvider::File {
            dir: dir.join("flows"),
        }),
        FlowBackend::Estimated { params } => {
            params.validate()?;
            Ok(FlowProvider::Estimated(*params))
        }
    }
}

fn read_json(path: &Path) -> Result<serde_json::Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Contract(format!("json encode: {e}")))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
