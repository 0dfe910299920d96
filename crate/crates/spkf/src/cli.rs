//! Argument parsing and dispatch for the `spkf` binary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use spkf_core::data::Phase;
use spkf_core::Task;

use crate::config::{parse_pairs, RunConfig};
use crate::error::{Error, Result};
use crate::pipeline::{self, RunManifest};
use crate::{fixture, tables};

#[derive(Debug, Parser)]
#[command(name = "spkf", version, about = "Spiking conformer EEG seizure pipeline")]
pub struct Cli {
    /// Plain-text key=value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-file and per-fold work (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = "spkf-out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

impl OnOff {
    fn enabled(self) -> bool {
        self == OnOff::On
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Detection,
    Prediction,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Detection => Task::Detection,
            TaskArg::Prediction => Task::Prediction,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse EDF recordings, cut and balance segments, assign folds.
    Ingest(IngestArgs),
    /// Cross-validated training; writes checkpoints and metrics.csv.
    Train(TrainArgs),
    /// Evaluate a checkpoint on its test fold.
    Eval(EvalArgs),
    /// Count operations of a checkpoint against its dense counterpart.
    Profile(ProfileArgs),
    /// Write plot-ready tables or a synthetic recording corpus.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory of .edf recordings.
    #[arg(long)]
    pub edf_dir: PathBuf,
    /// CSV with columns file_id,onset_s,offset_s.
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    /// Stride in seconds for ictal and pre-ictal segments.
    #[arg(long)]
    pub stride_ictal: Option<f64>,
    /// Stride in seconds for inter-ictal segments.
    #[arg(long)]
    pub stride_inter: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `ingest`.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Approximate updates during evaluation; defaults to the checkpoint's setting.
    #[arg(long, value_enum)]
    pub approx: Option<OnOff>,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Profile every gating threshold from 0 to T.
    #[arg(long)]
    pub tth_sweep: bool,
    /// Approximate updates for the main report; defaults to the checkpoint's setting.
    #[arg(long, value_enum)]
    pub approx: Option<OnOff>,
    /// Profile at most this many test segments.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(subcommand)]
    pub what: ExportWhat,
}

#[derive(Debug, Subcommand)]
pub enum ExportWhat {
    /// Per-case fold means of a training run as per_case.csv.
    Report {
        /// Output directory of a `train` run.
        #[arg(long)]
        run: PathBuf,
    },
    /// Synthetic EDF recordings, annotations.csv and a matching fixture.conf.
    Fixture {
        #[arg(long, default_value_t = 1)]
        cases: usize,
        #[arg(long, default_value_t = 240)]
        duration_s: usize,
    },
}

/// Configuration file plus command-line overrides.
fn resolve_config(cli: &Cli, overrides: &[(&str, Option<String>)]) -> Result<RunConfig> {
    let mut pairs = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_pairs(&text).map_err(|e| Error::format(path, e.to_string()))?
        }
        None => BTreeMap::new(),
    };
    if let Some(seed) = cli.seed {
        pairs.insert("seed".into(), seed.to_string());
    }
    for (k, v) in overrides {
        if let Some(v) = v {
            pairs.insert((*k).into(), v.clone());
        }
    }
    let text: String = pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    let cfg = RunConfig::parse(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

fn task_text(t: Option<TaskArg>) -> Option<String> {
    t.map(|t| Task::from(t).to_string())
}

fn manifest(cli: &Cli, command: &str, seed: u64, inputs: &[&Path]) -> RunManifest {
    RunManifest::new(command, cli.config.as_deref(), seed, inputs, &cli.out)
}

/// Runs the parsed command; progress goes to the log, results to stdout.
pub fn run(cli: &Cli) -> Result<()> {
    let workers = pipeline::pool(cli.jobs)?;
    match &cli.command {
        Command::Ingest(a) => {
            let cfg = resolve_config(
                cli,
                &[
                    ("task", task_text(a.task)),
                    ("stride_ictal", a.stride_ictal.map(|v| v.to_string())),
                    ("stride_inter", a.stride_inter.map(|v| v.to_string())),
                ],
            )?;
            if !a.annotations.is_file() {
                return Err(Error::io(
                    &a.annotations,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "annotation file not found"),
                ));
            }
            let m = manifest(cli, "ingest", cfg.seed, &[&a.edf_dir, &a.annotations]);
            let s = pipeline::ingest(&a.edf_dir, &a.annotations, &cli.out, &cfg, &workers)?;
            println!("files {}", s.files);
            for p in [Phase::Ictal, Phase::PreIctal, Phase::InterIctal] {
                let n = s.phase_segments.get(&p).copied().unwrap_or(0);
                if n == 0 {
                    log::warn!("no {} segments", p.as_str());
                }
                println!("{:<12} {n}", p.as_str());
            }
            println!("kept {} positive / {} negative", s.positives, s.negatives);
            m.write()
        }
        Command::Train(a) => {
            let cfg = resolve_config(
                cli,
                &[("task", task_text(a.task)), ("epochs", a.epochs.map(|v| v.to_string()))],
            )?;
            let m = manifest(cli, "train", cfg.seed, &[&a.dataset]);
            let s = pipeline::train(&a.dataset, &cfg, &cli.out, &workers)?;
            for r in &s.rows {
                println!(
                    "{} fold {}: sens {} spec {} acc {}",
                    r.case,
                    r.fold,
                    tables::percent(r.metrics.sens),
                    tables::percent(r.metrics.spec),
                    tables::percent(Some(r.metrics.acc))
                );
            }
            if let Some(mean) = s.mean {
                println!(
                    "mean: sens {} spec {} acc {}",
                    tables::percent(mean.sens),
                    tables::percent(mean.spec),
                    tables::percent(Some(mean.acc))
                );
            }
            m.write()
        }
        Command::Eval(a) => {
            let m = manifest(cli, "eval", cli.seed.unwrap_or(0), &[&a.checkpoint, &a.dataset]);
            let r = pipeline::eval(&a.checkpoint, &a.dataset, a.approx.map(OnOff::enabled), &cli.out)?;
            let show = |mode: &str, x: &spkf_core::train::Metrics| {
                println!(
                    "{mode}: sens {} spec {} acc {}",
                    tables::percent(x.sens),
                    tables::percent(x.spec),
                    tables::percent(Some(x.acc))
                )
            };
            println!("{} fold {}: {} segments", r.case, r.fold, r.segments);
            show("exact", &r.exact);
            if let Some((x, stats)) = &r.approx {
                show("approx", x);
                print!("{}", stats.report());
            }
            m.write()
        }
        Command::Profile(a) => {
            let m = manifest(cli, "profile", cli.seed.unwrap_or(0), &[&a.checkpoint, &a.dataset]);
            let r = pipeline::profile(
                &a.checkpoint,
                &a.dataset,
                a.approx.map(OnOff::enabled),
                a.tth_sweep,
                a.limit,
                &cli.out,
            )?;
            print!("{}", r.table);
            if let Some(s) = &r.skip {
                println!(
                    "skip reduction {} with accuracy delta {:+.2} points, {} predictions changed",
                    tables::percent(s.reduction_percent),
                    s.accuracy_delta,
                    s.changed_predictions
                );
            }
            for row in &r.sweep {
                println!(
                    "T_th={} adds {} reduction {} acc {}",
                    row.t_th,
                    row.adds,
                    tables::percent(row.reduction_percent),
                    tables::percent(Some(row.acc))
                );
            }
            m.write()
        }
        Command::Export(a) => match &a.what {
            ExportWhat::Report { run } => {
                let m = manifest(cli, "export report", cli.seed.unwrap_or(0), &[run]);
                for (case, x) in pipeline::export_report(run, &cli.out)? {
                    println!(
                        "{case}: sens {} spec {} acc {}",
                        tables::percent(x.sens),
                        tables::percent(x.spec),
                        tables::percent(Some(x.acc))
                    );
                }
                m.write()
            }
            ExportWhat::Fixture { cases, duration_s } => {
                let seed = cli.seed.unwrap_or(0);
                if *duration_s < 60 {
                    return Err(Error::Config("fixture recordings need at least 60 s".into()));
                }
                let m = manifest(cli, "export fixture", seed, &[]);
                let specs = fixture::small_corpus(*cases, *duration_s, seed);
                let anns = fixture::write_corpus(&cli.out, &specs)?;
                let conf = cli.out.join("fixture.conf");
                std::fs::write(&conf, pipeline::fixture_config(seed)).map_err(|e| Error::io(&conf, e))?;
                println!("{} recordings, {} seizures in {}", specs.len(), anns.len(), cli.out.display());
                m.write()
            }
        },
    }
}

/// Exit code of a whole invocation: 0 success, 1 internal error, 2 usage or input error.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
