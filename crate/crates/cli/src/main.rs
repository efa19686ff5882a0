//! `spikedd` command-line front end.
//!
//! stdout carries JSON only; diagnostics go to stderr. Exit codes: 0 ok,
//! 1 runtime failure, 2 config/usage, 3 I/O, 4 corrupt artifact,
//! 5 output exists (pass `--overwrite`).

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use spikedd::checkpoint;
use spikedd::event_stream::{
    read_events, segment_stream, write_events, EventFormat, DEFAULT_DT_US, DEFAULT_SEGMENT_US,
};
use spikedd::evsim::{read_frames_dir, simulate_events, SimConfig};
use spikedd::loss::{classify_rates, spike_rate, LossConfig};
use spikedd::network::{ForwardOptions, LayerSpec, NetworkModel};
use spikedd::par::{init_thread_pool, Exec};
use spikedd::synthgen::{generate, load_dataset, read_manifest, write_dataset, SynthConfig, MANIFEST_FILE};
use spikedd::trainer::{evaluate, split_by_source, train, write_metrics_jsonl, OptimConfig, TrainOptions};
use spikedd::{json_hash, Error};

use manifest::{write_atomic, RunManifest};

#[derive(Parser)]
#[command(name = "spikedd", version, about = "Spiking network for event-camera distraction detection")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Single-threaded, bit-reproducible execution.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Replace existing outputs.
    #[arg(long, global = true)]
    overwrite: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a directory of PGM frames into an event file.
    Simulate(SimulateArgs),
    /// Generate the synthetic two-class dataset.
    GenSynth(GenSynthArgs),
    /// Write a freshly initialised model checkpoint.
    Init(InitArgs),
    /// Train on a dataset directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset directory.
    Eval(EvalArgs),
    /// Classify every segment of one event file.
    Infer(InferArgs),
    /// Print architecture and parameter count of a checkpoint.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct SimulateArgs {
    frames_dir: PathBuf,
    #[arg(long)]
    fps: f64,
    /// Output event file; `.csv` selects CSV, anything else the binary format.
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long)]
    contrast_threshold: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Bin,
}

impl From<FormatArg> for EventFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => EventFormat::Csv,
            FormatArg::Bin => EventFormat::Bin,
        }
    }
}

#[derive(Args)]
struct GenSynthArgs {
    /// JSON config; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
    /// Start from the reduced 160x120, 1 s preset instead of the full one.
    #[arg(long)]
    desk: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    streams_per_class: Option<usize>,
    #[arg(long, value_enum, default_value = "bin")]
    format: FormatArg,
}

#[derive(Args)]
struct InitArgs {
    #[arg(long, default_value_t = 640)]
    width: usize,
    #[arg(long, default_value_t = 480)]
    height: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    out: PathBuf,
}

/// Everything `train` reads from its config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
struct TrainConfig {
    optim: OptimConfig,
    loss: LossConfig,
    segment_us: u64,
    dt_us: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optim: OptimConfig::default(),
            loss: LossConfig::default(),
            segment_us: DEFAULT_SEGMENT_US,
            dt_us: DEFAULT_DT_US,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    dataset_dir: PathBuf,
    /// Checkpoint path; metrics go to `<stem>.metrics.jsonl` beside it.
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seeds initialisation, the split, shuffling and dropout.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum SplitArg {
    All,
    Train,
    Val,
    Test,
}

#[derive(Args)]
struct EvalArgs {
    checkpoint: PathBuf,
    dataset_dir: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    split: SplitArg,
    /// Seed the split was made with (the training seed).
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Include per-segment predictions in the report.
    #[arg(long)]
    predictions: bool,
}

#[derive(Args)]
struct InferArgs {
    checkpoint: PathBuf,
    event_file: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    checkpoint: PathBuf,
}

/// A failure plus the exit code it maps to.
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_)
            | Error::Usage(_)
            | Error::Shape(_)
            | Error::Index { .. }
            | Error::Bounds(_)
            | Error::Json(_) => 2,
            Error::Io { .. } => 3,
            Error::Corrupt { .. } | Error::Parse { .. } => 4,
            Error::NonFinite(_) | Error::EmptyRecord => 1,
        };
        Failure {
            code,
            msg: e.to_string(),
        }
    }
}

impl Failure {
    fn config(msg: impl Into<String>) -> Self {
        Failure {
            code: 2,
            msg: msg.into(),
        }
    }

    fn exists(path: &Path) -> Self {
        Failure {
            code: 5,
            msg: format!("{} exists; pass --overwrite to replace it", path.display()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        init_thread_pool(n);
    }
    let ctx = Ctx {
        exec: Exec::from_deterministic(cli.deterministic),
        deterministic: cli.deterministic,
        overwrite: cli.overwrite,
        threads,
    };
    let res = match cli.cmd {
        Command::Simulate(a) => cmd_simulate(&ctx, a),
        Command::GenSynth(a) => cmd_gen_synth(&ctx, a),
        Command::Init(a) => cmd_init(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Infer(a) => cmd_infer(a),
        Command::Inspect(a) => cmd_inspect(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

struct Ctx {
    exec: Exec,
    deterministic: bool,
    overwrite: bool,
    threads: Option<usize>,
}

impl Ctx {
    fn check_free(&self, paths: &[&Path]) -> CmdResult {
        if self.overwrite {
            return Ok(());
        }
        match paths.iter().find(|p| p.exists()) {
            Some(p) => Err(Failure::exists(p)),
            None => Ok(()),
        }
    }

    fn manifest(&self, command: &str, config: serde_json::Value, seed: Option<u64>) -> RunManifest {
        let mut m = RunManifest::start(command, config, seed);
        m.threads = self.threads;
        m.deterministic = self.deterministic;
        m
    }
}

fn read_json_config<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Failure> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Failure {
        code: 3,
        msg: format!("{}: {e}", path.display()),
    })?;
    serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

fn metrics_path(checkpoint: &Path) -> PathBuf {
    let stem = checkpoint.file_stem().map(|s| s.to_os_string()).unwrap_or_default();
    let mut name = stem;
    name.push(".metrics.jsonl");
    checkpoint.with_file_name(name)
}

fn print_json(v: &serde_json::Value) {
    use std::io::Write;
    let line = serde_json::to_string(v).expect("JSON value serialises");
    if writeln!(std::io::stdout().lock(), "{line}").is_err() {
        // reader went away (e.g. `| head`)
        std::process::exit(0);
    }
}

fn cmd_simulate(ctx: &Ctx, a: SimulateArgs) -> CmdResult {
    let mut cfg = SimConfig::default();
    if let Some(c) = a.contrast_threshold {
        cfg.contrast_threshold = c;
    }
    if let Some(e) = a.eps {
        cfg.eps = e;
    }
    cfg.validate()?;
    if !(a.fps > 0.0 && a.fps.is_finite()) {
        return Err(Failure::config(format!("--fps must be positive, got {}", a.fps)));
    }
    let run_path = sibling(&a.out, ".run.json");
    ctx.check_free(&[&a.out, &run_path])?;
    let mut run = ctx.manifest("simulate", json!({ "fps": a.fps, "sim": cfg }), None);

    let frames = read_frames_dir(&a.frames_dir, a.fps)?;
    log::info!("{} frames of {}x{}", frames.frames().len(), frames.geometry().width, frames.geometry().height);
    let stream = simulate_events(&frames, &cfg)?;
    let format = EventFormat::from_path(&a.out);
    write_atomic(&a.out, |tmp| write_events(&stream, tmp, format))?;

    run.inputs.push(a.frames_dir.display().to_string());
    run.outputs.push(a.out.display().to_string());
    run.finish(&run_path)?;
    print_json(&json!({ "events": stream.len(), "out": a.out, "duration_us": stream.duration_us() }));
    Ok(())
}

fn cmd_gen_synth(ctx: &Ctx, a: GenSynthArgs) -> CmdResult {
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => read_json_config(Some(p))?,
        None if a.desk => SynthConfig::desk(),
        None => SynthConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.streams_per_class {
        cfg.n_streams_per_class = n;
    }
    cfg.validate()?;

    let run_path = sibling(&a.out, ".run.json");
    let manifest_path = a.out.join(MANIFEST_FILE);
    let dir_in_use = a.out.is_dir() && fs::read_dir(&a.out).map(|mut d| d.next().is_some()).unwrap_or(false);
    if !ctx.overwrite {
        if dir_in_use {
            return Err(Failure::exists(&a.out));
        }
        ctx.check_free(&[&run_path])?;
    } else if manifest_path.exists() {
        // drop the previous dataset so the directory holds only this one
        if let Ok(old) = read_manifest(&a.out) {
            for e in old.streams {
                let _ = fs::remove_file(a.out.join(e.path));
            }
        }
        let _ = fs::remove_file(&manifest_path);
    }

    let mut run = ctx.manifest("gen-synth", serde_json::to_value(&cfg).map_err(Error::from)?, Some(cfg.seed));
    run.config_hash = cfg.hash();
    let streams = generate(&cfg, ctx.exec)?;
    let manifest = write_dataset(&a.out, &cfg, &streams, a.format.into())?;
    if let Some(p) = &a.config {
        run.inputs.push(p.display().to_string());
    }
    run.outputs.push(a.out.display().to_string());
    run.finish(&run_path)?;
    let events: usize = manifest.streams.iter().map(|s| s.events).sum();
    print_json(&json!({
        "out": a.out,
        "streams": manifest.streams.len(),
        "events": events,
        "config_hash": manifest.config_hash,
    }));
    Ok(())
}

fn save_checkpoint(model: &NetworkModel<f32>, path: &Path) -> Result<(), Failure> {
    let bytes = checkpoint::encode(model);
    write_atomic(path, |tmp| fs::write(tmp, &bytes).map_err(|e| io_err(tmp, e)))?;
    Ok(())
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn cmd_init(ctx: &Ctx, a: InitArgs) -> CmdResult {
    let run_path = sibling(&a.out, ".run.json");
    ctx.check_free(&[&a.out, &run_path])?;
    let mut run = ctx.manifest("init", json!({ "width": a.width, "height": a.height }), Some(a.seed));
    let model = NetworkModel::<f32>::spiking_dd(a.width, a.height, a.seed)?;
    save_checkpoint(&model, &a.out)?;
    run.outputs.push(a.out.display().to_string());
    run.finish(&run_path)?;
    print_json(&json!({ "out": a.out, "parameters": model.count_params(), "chain": model.chain_summary() }));
    Ok(())
}

fn cmd_train(ctx: &Ctx, a: TrainArgs) -> CmdResult {
    let mut cfg: TrainConfig = read_json_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.optim.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.optim.epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.optim.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.optim.lr0 = lr;
    }
    cfg.optim.validate()?;

    let metrics_out = metrics_path(&a.out);
    let run_path = sibling(&a.out, ".run.json");
    ctx.check_free(&[&a.out, &metrics_out, &run_path])?;

    let config_value = serde_json::to_value(&cfg).map_err(Error::from)?;
    let mut run = ctx.manifest("train", config_value, Some(cfg.optim.seed));
    run.config_hash = json_hash(&cfg);

    let dataset = load_dataset(&a.dataset_dir)?;
    let segments = dataset.segments(cfg.segment_us, cfg.dt_us)?;
    let splits = split_by_source(segments, cfg.optim.seed);
    log::info!(
        "{} streams; {} train / {} val / {} test segments",
        dataset.streams.len(),
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );
    let g = dataset.geometry();
    let model = NetworkModel::<f32>::spiking_dd(g.width as usize, g.height as usize, cfg.optim.seed)?;
    log::info!("model {} ({} parameters)", model.chain_summary(), model.count_params());

    let opts = TrainOptions {
        exec: ctx.exec,
        deterministic: ctx.deterministic,
    };
    let outcome = train(model, &splits.train, &splits.val, &cfg.loss, &cfg.optim, opts, |m| {
        log::info!(
            "epoch {:>2}  loss {:.5}  val acc {:.4}  val loss {:.5}  lr {:.0e}",
            m.epoch,
            m.mean_loss,
            m.accuracy,
            m.val_loss,
            m.lr
        );
    })?;

    save_checkpoint(&outcome.best, &a.out)?;
    write_atomic(&metrics_out, |tmp| write_metrics_jsonl(tmp, &outcome.metrics))?;

    let test = if splits.test.is_empty() {
        None
    } else {
        Some(evaluate(&outcome.best, &splits.test, &cfg.loss, ctx.exec)?)
    };
    run.inputs.push(a.dataset_dir.display().to_string());
    if let Some(p) = &a.config {
        run.inputs.push(p.display().to_string());
    }
    run.outputs.push(a.out.display().to_string());
    run.outputs.push(metrics_out.display().to_string());
    run.finish(&run_path)?;

    let best_val = outcome
        .best_epoch
        .map(|e| outcome.metrics[e - 1].accuracy);
    print_json(&json!({
        "checkpoint": a.out,
        "metrics": metrics_out,
        "epochs": outcome.metrics.len(),
        "best_epoch": outcome.best_epoch,
        "best_val_accuracy": best_val,
        "test_accuracy": test.as_ref().map(|t| t.accuracy),
        "test_loss": test.as_ref().map(|t| t.mean_loss),
    }));
    Ok(())
}

fn cmd_eval(ctx: &Ctx, a: EvalArgs) -> CmdResult {
    let model = checkpoint::load(&a.checkpoint)?;
    let dataset = load_dataset(&a.dataset_dir)?;
    let segments = dataset.segments(DEFAULT_SEGMENT_US, DEFAULT_DT_US)?;
    let segments = match a.split {
        SplitArg::All => segments,
        s => {
            let splits = split_by_source(segments, a.split_seed);
            match s {
                SplitArg::Train => splits.train,
                SplitArg::Val => splits.val,
                _ => splits.test,
            }
        }
    };
    let loss_cfg = LossConfig::default();
    let eval = evaluate(&model, &segments, &loss_cfg, ctx.exec)?;
    log::info!("accuracy {:.4}, mean loss {:.5} over {} segments", eval.accuracy, eval.mean_loss, segments.len());
    let mut report = json!({
        "checkpoint": a.checkpoint,
        "dataset": a.dataset_dir,
        "split": a.split,
        "segments": segments.len(),
        "accuracy": eval.accuracy,
        "mean_loss": eval.mean_loss,
    });
    if a.predictions {
        report["predictions"] = json!(eval.predictions);
    }
    print_json(&report);
    Ok(())
}

fn cmd_infer(a: InferArgs) -> CmdResult {
    let model = checkpoint::load(&a.checkpoint)?;
    let loaded = read_events(&a.event_file, EventFormat::from_path(&a.event_file))?;
    let segments = segment_stream(&loaded.stream, DEFAULT_SEGMENT_US, DEFAULT_DT_US, 0, "infer")?;
    if segments.is_empty() {
        eprintln!(
            "0 segments: stream lasts {} us, shorter than one {} us segment",
            loaded.stream.duration_us(),
            DEFAULT_SEGMENT_US
        );
        return Ok(());
    }
    let g = loaded.stream.geometry();
    let want = model.input_geometry();
    if (g.width as usize, g.height as usize) != (want.width, want.height) {
        return Err(Failure::config(format!(
            "event file is {}x{}, model expects {}x{}",
            g.width, g.height, want.width, want.height
        )));
    }
    for (i, seg) in segments.iter().enumerate() {
        let out = model.forward(&seg.spikes, &ForwardOptions::eval())?.output;
        let rates = spike_rate(&out)?;
        print_json(&json!({
            "segment": i,
            "t0_us": i as u64 * DEFAULT_SEGMENT_US,
            "rates": rates,
            "class": classify_rates(&rates),
        }));
    }
    Ok(())
}

fn cmd_inspect(a: InspectArgs) -> CmdResult {
    let model = checkpoint::load(&a.checkpoint)?;
    let layers: Vec<serde_json::Value> = model
        .layers()
        .iter()
        .map(|l| match l {
            LayerSpec::Dense {
                in_units,
                out_units,
                neuron,
                dropout_p,
            } => json!({
                "kind": "dense",
                "in_units": in_units,
                "out_units": out_units,
                "parameters": in_units * out_units,
                "neuron": neuron,
                "dropout_p": dropout_p,
            }),
            other => serde_json::to_value(other).expect("layer serialises"),
        })
        .collect();
    let g = model.input_geometry();
    print_json(&json!({
        "input": { "channels": g.channels, "height": g.height, "width": g.width },
        "chain": model.chain_summary(),
        "parameters": model.count_params(),
        "layers": layers,
    }));
    Ok(())
}
