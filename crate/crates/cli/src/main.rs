//! `etfcil` command-line tool.
//!
//! Exit codes: 0 on success, 2 for configuration and input errors (bad
//! flags, unreadable or malformed files, impossible sizes), 1 for failures
//! while computing.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use etfcil_core::data_io::{generate_synthetic, load_manifest, read_any, write_any, SynthSpec};
use etfcil_core::engine::{run_stream_logged, AblationFlags, EngineConfig, RunEvent};
use etfcil_core::etf::EtfClassifier;
use etfcil_core::linalg::{Matrix, DEFAULT_PINV_TOL};
use etfcil_core::ncmetrics::{nc_report, FeatureSnapshot};
use etfcil_core::{ClassId, Error};

#[derive(Parser, Debug)]
#[command(
    name = "etfcil",
    version,
    about = "Class-incremental learning over frozen embeddings with a growing ETF classifier"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a task stream described by a manifest and write the evaluation report.
    Run(RunArgs),
    /// Neural-collapse metrics of a labeled embedding file.
    Nc(NcArgs),
    /// Generate a seeded synthetic drift stream with its manifest.
    Synth(SynthArgs),
    /// Write ETF anchors as an embedding file, one record per class.
    Etf(EtfArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Task manifest (TOML).
    #[arg(long)]
    manifest: PathBuf,
    /// Report destination; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the per-stage table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write per-epoch and per-stage events as JSON lines.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Hidden width of the alignment layer.
    #[arg(long)]
    hidden: Option<usize>,
    /// Size the classifier for every class of the stream from the start.
    #[arg(long)]
    no_dynamic_etf: bool,
    /// Keep training the previous task's alignment layer instead of a fresh one.
    #[arg(long)]
    no_init_align: bool,
    /// Train with cross-entropy only.
    #[arg(long)]
    no_pap: bool,
    /// Score raw test features instead of aligned ones.
    #[arg(long)]
    no_align_test: bool,
    /// Print a line per stage to stderr.
    #[arg(short, long)]
    verbose: bool,
}

#[derive(Args, Debug)]
struct NcArgs {
    /// Labeled embeddings (EMB1, or CSV by extension).
    #[arg(long, short)]
    input: PathBuf,
    /// Classifier weights, one record per class labeled by class id.
    #[arg(long)]
    classifier: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_PINV_TOL)]
    pinv_tol: f64,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, default_value_t = SynthSpec::default().dim)]
    dim: usize,
    #[arg(long, default_value_t = SynthSpec::default().classes)]
    classes: usize,
    #[arg(long, default_value_t = SynthSpec::default().tasks)]
    tasks: usize,
    /// Samples per class before the 80/20 split.
    #[arg(long, default_value_t = SynthSpec::default().samples_per_class)]
    samples: usize,
    #[arg(long, default_value_t = SynthSpec::default().sigma)]
    sigma: f64,
    /// Drift rotation per task, radians.
    #[arg(long, default_value_t = SynthSpec::default().theta)]
    theta: f64,
    #[arg(long, default_value_t = SynthSpec::default().delta)]
    delta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct EtfArgs {
    #[arg(long)]
    classes: usize,
    #[arg(long)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "anchors.emb")]
    out: PathBuf,
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), Error> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<(), Error> {
    let manifest = load_manifest(&args.manifest)?;
    let mut cfg = EngineConfig::default();
    let mut flags = AblationFlags::default();
    manifest.config.apply(&mut cfg, &mut flags);
    if let Some(v) = args.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = args.lr {
        cfg.train.lr0 = v;
    }
    if let Some(v) = args.temperature {
        cfg.train.temperature = v;
    }
    if let Some(v) = args.batch_size {
        cfg.train.batch_size = v;
    }
    if args.hidden.is_some() {
        cfg.hidden = args.hidden;
    }
    if args.no_align_test {
        cfg.align_test = false;
    }
    if args.no_dynamic_etf {
        flags.dynamic_etf = false;
    }
    if args.no_init_align {
        flags.init_align = false;
    }
    if args.no_pap {
        flags.pap_loss = false;
    }
    cfg.train.validate()?;

    let stream = manifest.load_stream()?;
    let mut log = args
        .log
        .as_deref()
        .map(|p| File::create(p).map(BufWriter::new))
        .transpose()?;
    let mut log_err: Option<io::Error> = None;
    let report = run_stream_logged(&stream, &cfg, flags, args.seed, |event| {
        if args.verbose {
            if let RunEvent::Stage(s) = &event {
                eprintln!("task {} K_t={} A_t={:.4}", s.task, s.k_t, s.a_t);
            }
        }
        if let (Some(w), None) = (log.as_mut(), log_err.as_ref()) {
            let line = serde_json::to_string(&event).expect("events serialize");
            if let Err(e) = writeln!(w, "{line}") {
                log_err = Some(e);
            }
        }
    })?;
    if let Some(e) = log_err {
        return Err(e.into());
    }
    if let Some(mut w) = log {
        w.flush()?;
    }
    write_output(args.out.as_deref(), &report.to_json())?;
    if let Some(p) = &args.csv {
        std::fs::write(p, report.to_csv())?;
    }
    Ok(())
}

fn cmd_nc(args: NcArgs) -> Result<(), Error> {
    let snap = read_any(&args.input)?.into_snapshot()?;
    let classifier = match &args.classifier {
        Some(p) => Some(classifier_columns(&snap, p)?),
        None => None,
    };
    let report = nc_report(&snap, classifier.as_ref(), args.pinv_tol)?;
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    write_output(args.out.as_deref(), &text)
}

/// Classifier columns ordered like the snapshot's classes.
fn classifier_columns(snap: &FeatureSnapshot, path: &Path) -> Result<Matrix, Error> {
    let file = read_any(path)?;
    if file.dim != snap.dim() {
        return Err(Error::Dimension(format!(
            "classifier has dimension {}, features {}",
            file.dim,
            snap.dim()
        )));
    }
    let columns = snap
        .classes()
        .iter()
        .map(|c: &ClassId| {
            file.records
                .iter()
                .find(|(l, _)| l == c)
                .map(|(_, w)| w.clone())
                .ok_or_else(|| {
                    Error::Format(format!("classifier file has no weights for class {c}"))
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Matrix::from_columns(snap.dim(), &columns)
}

fn cmd_synth(args: SynthArgs) -> Result<(), Error> {
    let spec = SynthSpec {
        dim: args.dim,
        classes: args.classes,
        tasks: args.tasks,
        samples_per_class: args.samples,
        sigma: args.sigma,
        theta: args.theta,
        delta: args.delta,
        seed: args.seed,
    };
    generate_synthetic(&spec, &args.out)?;
    Ok(())
}

fn cmd_etf(args: EtfArgs) -> Result<(), Error> {
    let clf = EtfClassifier::new(args.dim, args.classes, args.seed)?;
    let records: Vec<_> = clf
        .anchor_columns()
        .into_iter()
        .enumerate()
        .map(|(k, w)| (k as ClassId, w))
        .collect();
    write_any(&args.out, args.dim, &records)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Nc(a) => cmd_nc(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Etf(a) => cmd_etf(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
