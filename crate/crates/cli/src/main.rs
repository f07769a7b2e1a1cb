//! `gml`: command line front end.
//!
//! Exit codes: 0 success, 1 invalid input or flags, 2 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use gml_core::eval::{self, PredictionRow};
use gml_core::harness::{self, SyntheticSpec};
use gml_core::net::{self, Augmentation, BackboneConfig, Checkpoint, Sample, TrainConfig};
use gml_core::prob::Family;
use gml_core::{Error, EvalReport, GammatoneConfig, Result};

#[derive(Parser)]
#[command(name = "gml", version, about = "Generative machine listener toolkit")]
struct Cli {
    /// JSON file with optional `gammatone`, `train`, `backbone` and `synthetic` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (audio + manifest).
    Synth(SynthArgs),
    /// Compute cached spectrogram inputs for a manifest.
    Featurize(FeaturizeArgs),
    /// Cross-validated training on a feature cache.
    Train(TrainArgs),
    /// Predict score distributions for every item in a feature cache.
    Predict(PredictArgs),
    /// Simulate listening-test panels from predictions.
    Simulate(SimulateArgs),
    /// Compare predictions with subjective scores.
    Evaluate(EvaluateArgs),
    /// Render an evaluation report as a table and an SVG scatter plot.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    excerpts: Option<usize>,
    #[arg(long)]
    listeners: Option<usize>,
    /// Excerpt length in samples at 48 kHz.
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Args)]
struct FeaturizeArgs {
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory written by `featurize`.
    #[arg(long)]
    cache: PathBuf,
    #[arg(long)]
    family: Option<Family>,
    #[arg(long, value_parser = parse_augmentation)]
    augmentation: Option<Augmentation>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Log every mixed sample to provenance.csv.
    #[arg(long)]
    provenance: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    cache: PathBuf,
    /// Checkpoint files; several are ensembled.
    #[arg(long, num_args = 1.., required_unless_present = "run", conflicts_with = "run")]
    checkpoint: Vec<PathBuf>,
    /// Directory written by `train`; uses every fold checkpoint in it.
    #[arg(long)]
    run: Option<PathBuf>,
    /// Predict each item with the fold model that held it out.
    #[arg(long)]
    oof: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    predictions: PathBuf,
    /// Listeners per condition.
    #[arg(long)]
    n: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    predictions: PathBuf,
    /// CSV `condition_id,listener_id,score`.
    #[arg(long)]
    subjective: PathBuf,
    #[arg(long, default_value = "test")]
    name: String,
}

#[derive(Args)]
struct ReportArgs {
    /// JSON written by `evaluate`.
    #[arg(long)]
    report: PathBuf,
}

fn parse_augmentation(s: &str) -> std::result::Result<Augmentation, String> {
    match s {
        "none" => Ok(Augmentation::None),
        "cutmix" => Ok(Augmentation::Cutmix),
        "mixup" => Ok(Augmentation::Mixup),
        _ => Err(format!("unknown augmentation {s:?} (none, cutmix, mixup)")),
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Config {
    gammatone: GammatoneConfig,
    train: TrainConfig,
    backbone: BackboneConfig,
    synthetic: SyntheticSpec,
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    let Some(path) = path else {
        return Ok(Config::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    harness::write_atomic(path, bytes)
}

fn synth(cli: &Cli, cfg: Config, args: &SynthArgs) -> Result<()> {
    let mut spec = cfg.synthetic;
    if let Some(n) = args.excerpts {
        spec.n_excerpts = n;
    }
    if let Some(n) = args.listeners {
        spec.listeners = n;
    }
    if let Some(n) = args.samples {
        spec.excerpt_samples = n;
    }
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    let m = harness::generate_synthetic(&spec, &cli.out)?;
    eprintln!(
        "wrote {} conditions, {} ratings to {}",
        m.entries.len(),
        m.n_ratings(),
        cli.out.join("manifest.csv").display()
    );
    Ok(())
}

fn featurize(cli: &Cli, cfg: Config, args: &FeaturizeArgs) -> Result<()> {
    let m = harness::load_manifest(&args.manifest)?;
    let samples = harness::featurize(&m, &cfg.gammatone, Some(&cli.out))?;
    eprintln!("featurized {} items into {}", samples.len(), cli.out.display());
    Ok(())
}

fn train(cli: &Cli, cfg: Config, args: &TrainArgs) -> Result<()> {
    let mut tc = cfg.train;
    if let Some(f) = args.family {
        tc.loss_family = f;
    }
    if let Some(a) = args.augmentation {
        tc.augmentation = a;
    }
    if let Some(e) = args.epochs {
        tc.epochs_per_fold = e;
    }
    if let Some(k) = args.folds {
        tc.folds = k;
    }
    if let Some(lr) = args.learning_rate {
        tc.learning_rate = lr;
    }
    if let Some(b) = args.batch_size {
        tc.batch_size = b;
    }
    if let Some(s) = cli.seed {
        tc.seed = s;
    }
    tc.record_provenance |= args.provenance;
    tc.validate()?;
    let samples = harness::load_index(&args.cache)?;
    let out = net::train(&samples, &cfg.backbone, &tc)?;
    for c in &out.checkpoints {
        c.save(cli.out.join(format!("fold{}.gmlckpt", c.meta.fold)))?;
    }
    harness::write_loss_csv(cli.out.join("loss.csv"), &out.curves)?;
    if tc.record_provenance {
        harness::write_provenance_csv(cli.out.join("provenance.csv"), &out.provenance)?;
    }
    eprintln!("trained {} folds into {}", out.checkpoints.len(), cli.out.display());
    Ok(())
}

fn run_checkpoints(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "gmlckpt"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Invalid(format!("no checkpoints in {}", dir.display())));
    }
    Ok(paths)
}

fn predict_rows(checkpoints: &[Checkpoint], samples: &[Sample], oof: bool) -> Result<Vec<PredictionRow>> {
    samples
        .iter()
        .map(|s| {
            let d = if oof {
                let c = checkpoints
                    .iter()
                    .find(|c| c.meta.validation_excerpts.contains(&s.excerpt_id))
                    .ok_or_else(|| Error::Invalid(format!("no checkpoint held out excerpt {}", s.excerpt_id)))?;
                net::predict(c, &s.input)?
            } else {
                let dists = checkpoints
                    .iter()
                    .map(|c| net::predict(c, &s.input))
                    .collect::<Result<Vec<_>>>()?;
                net::ensemble(&dists)?
            };
            Ok(PredictionRow {
                condition_id: s.item_id(),
                mu: d.mu,
                log_scale: d.log_scale,
                family: d.family,
            })
        })
        .collect()
}

fn predict(cli: &Cli, args: &PredictArgs) -> Result<()> {
    let paths = match &args.run {
        Some(dir) => run_checkpoints(dir)?,
        None => args.checkpoint.clone(),
    };
    let checkpoints = paths.iter().map(Checkpoint::load).collect::<Result<Vec<_>>>()?;
    let samples = harness::load_index(&args.cache)?;
    let rows = predict_rows(&checkpoints, &samples, args.oof)?;
    eval::write_predictions(cli.out.join("predictions.csv"), &rows)?;
    eprintln!("wrote {} predictions", rows.len());
    Ok(())
}

fn simulate(cli: &Cli, args: &SimulateArgs) -> Result<()> {
    let rows = eval::read_predictions(&args.predictions)?;
    let panels = harness::simulate(&rows, args.n, cli.seed.unwrap_or(0))?;
    eval::write_subjective(cli.out.join("simulated.csv"), &panels)
}

fn evaluate(cli: &Cli, args: &EvaluateArgs) -> Result<()> {
    let predictions = eval::read_predictions(&args.predictions)?;
    let subjective = eval::read_subjective(&args.subjective)?;
    let report = eval::evaluate(&args.name, &predictions, &subjective)?;
    let json = serde_json::to_vec_pretty(&report).expect("report serialises");
    write(&cli.out.join("report.json"), &json)?;
    print!("{}", eval::render_table(&report));
    Ok(())
}

fn report(cli: &Cli, args: &ReportArgs) -> Result<()> {
    let text = std::fs::read(&args.report).map_err(|e| Error::Io {
        path: args.report.clone(),
        source: e,
    })?;
    let report: EvalReport =
        serde_json::from_slice(&text).map_err(|e| Error::Parse(format!("{}: {e}", args.report.display())))?;
    let table = eval::render_table(&report);
    write(&cli.out.join("report.txt"), table.as_bytes())?;
    write(&cli.out.join("report.svg"), eval::render_svg(&report).as_bytes())?;
    print!("{table}");
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Synth(a) => synth(cli, cfg, a),
        Command::Featurize(a) => featurize(cli, cfg, a),
        Command::Train(a) => train(cli, cfg, a),
        Command::Predict(a) => predict(cli, a),
        Command::Simulate(a) => simulate(cli, a),
        Command::Evaluate(a) => evaluate(cli, a),
        Command::Report(a) => report(cli, a),
    }
}

/// Missing input files count as bad input rather than a runtime failure.
fn is_validation(e: &Error) -> bool {
    match e {
        Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
        _ => e.is_validation(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if is_validation(&e) { 1 } else { 2 })
        }
    }
}
