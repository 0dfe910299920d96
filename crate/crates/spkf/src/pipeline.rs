//! The batch jobs behind the command-line subcommands.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use spkf_core::data::{
    balance_indices, extract_phases, kfold_split, segment_starts, Label, Phase, SegmentSource, Subset,
};
use spkf_core::model::ModelConfig;
use spkf_core::profile::{count_ann_ops, efficiency_ratio, format_tally, profile_segments, skip_report, OpTally};
use spkf_core::train::{evaluate, mean_metrics, train_fold, Metrics};
use spkf_core::{ApproxConfig, SkipStats};

use crate::checkpoint::{self, CheckpointMeta};
use crate::config::{CvMode, RunConfig};
use crate::container;
use crate::dataset::{self, DiskDataset};
use crate::edf::parse_recording;
use crate::error::{Error, Result};
use crate::tables::{self, case_of, file_stem, ManifestRow, MetricsRow, SweepRow};

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Thread pool capped at `jobs` workers; 0 lets rayon choose.
pub fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Record of one command invocation, written as `run_manifest.txt`.
#[derive(Clone, Debug)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<PathBuf>,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub out: PathBuf,
    pub started: Instant,
}

impl RunManifest {
    pub fn new(command: &str, config: Option<&Path>, seed: u64, inputs: &[&Path], out: &Path) -> Self {
        Self {
            command: command.into(),
            config: config.map(Path::to_path_buf),
            seed,
            inputs: inputs.iter().map(|p| p.to_path_buf()).collect(),
            out: out.to_path_buf(),
            started: Instant::now(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "command={}", self.command);
        let _ = writeln!(
            s,
            "config={}",
            self.config.as_ref().map_or_else(|| "(defaults)".into(), |p| p.display().to_string())
        );
        let _ = writeln!(s, "seed={}", self.seed);
        for p in &self.inputs {
            let _ = writeln!(s, "input={}", p.display());
        }
        let _ = writeln!(s, "out={}", self.out.display());
        let _ = writeln!(s, "engine_version={ENGINE_VERSION}");
        let _ = writeln!(s, "duration_s={:.3}", self.started.elapsed().as_secs_f64());
        s
    }

    pub fn write(&self) -> Result<()> {
        create_dir(&self.out)?;
        write_text(&self.out.join("run_manifest.txt"), &self.to_text())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IngestSummary {
    pub files: usize,
    /// Candidate segments per phase before task filtering and balancing.
    pub phase_segments: BTreeMap<Phase, usize>,
    pub positives: usize,
    pub negatives: usize,
    /// Groups left out for lacking a class or enough segments.
    pub skipped_groups: Vec<String>,
}

struct FileSegments {
    file_id: String,
    segments: Vec<(Phase, usize)>,
}

fn edf_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("edf")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::format(dir, "no .edf files found"));
    }
    Ok(files)
}

fn ingest_file(
    path: &Path,
    anns: &[spkf_core::data::SeizureAnnotation],
    cfg: &RunConfig,
    out: &Path,
) -> Result<FileSegments> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let file_id = file_stem(name).to_string();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut rec = parse_recording(&bytes, case_of(&file_id), &file_id).map_err(|d| Error::format(path, d))?;
    let ic = &cfg.ingest;
    let window = (ic.window_s * rec.fs).round() as usize;
    if window != cfg.model.sample_len || rec.n_channels() != cfg.model.channels {
        return Err(Error::format(
            path,
            format!(
                "{} Hz x {} channels gives {window}-sample windows; the model expects {} channels x {}",
                rec.fs,
                rec.n_channels(),
                cfg.model.channels,
                cfg.model.sample_len
            ),
        ));
    }
    rec.standardize();
    let phases = extract_phases(&rec, anns, &ic.phases).map_err(|e| Error::format(path, e.to_string()))?;
    let mut segments = Vec::new();
    for interval in &phases {
        let stride = match interval.phase {
            Phase::InterIctal => ic.stride_inter_s,
            _ => ic.stride_ictal_s,
        };
        for s in segment_starts(interval, rec.fs, ic.window_s, stride)? {
            if s + window <= rec.n_samples() {
                segments.push((interval.phase, s));
            }
        }
    }
    segments.sort_by_key(|&(p, s)| (s, p));
    container::save(&dataset::recording_path(out, &file_id), &rec.samples)?;
    info!("{file_id}: {} candidate segments", segments.len());
    Ok(FileSegments { file_id, segments })
}

/// Parses every EDF file of `edf_dir`, cuts phase segments, balances the
/// classes of each group and assigns folds. Writes the dataset into `out`.
pub fn ingest(
    edf_dir: &Path,
    annotations: &Path,
    out: &Path,
    cfg: &RunConfig,
    workers: &rayon::ThreadPool,
) -> Result<IngestSummary> {
    cfg.validate()?;
    let anns = tables::read_annotations(annotations)?;
    let files = edf_files(edf_dir)?;
    for a in &anns {
        if !files.iter().any(|f| f.file_stem().and_then(|s| s.to_str()) == Some(a.file_id.as_str())) {
            warn!("annotation for `{}` matches no EDF file", a.file_id);
        }
    }
    create_dir(&out.join(dataset::RECORDINGS))?;
    let per_file: Vec<FileSegments> =
        workers.install(|| files.par_iter().map(|f| ingest_file(f, &anns, cfg, out)).collect::<Result<_>>())?;

    let mut summary = IngestSummary {
        files: files.len(),
        ..IngestSummary::default()
    };
    for p in [Phase::Ictal, Phase::PreIctal, Phase::InterIctal] {
        let n = per_file.iter().flat_map(|f| &f.segments).filter(|(q, _)| *q == p).count();
        summary.phase_segments.insert(p, n);
    }

    let task = cfg.model.task;
    let mut groups: BTreeMap<String, (Vec<(String, usize)>, Vec<(String, usize)>)> = BTreeMap::new();
    for f in &per_file {
        let g = match cfg.ingest.cv {
            CvMode::PerCase => case_of(&f.file_id).to_string(),
            CvMode::Pooled => "all".to_string(),
        };
        let entry = groups.entry(g).or_default();
        for &(phase, start) in f.segments.iter().filter(|(p, _)| p.used_by(task)) {
            match phase.label() {
                Label::Positive => entry.0.push((f.file_id.clone(), start)),
                Label::Negative => entry.1.push((f.file_id.clone(), start)),
            }
        }
    }

    let mut rows = Vec::new();
    for (group, (pos, neg)) in &groups {
        if pos.is_empty() || neg.is_empty() {
            warn!("{group}: {} positive and {} negative segments; left out", pos.len(), neg.len());
            summary.skipped_groups.push(group.clone());
            continue;
        }
        let (kp, kn) = balance_indices(pos.len(), neg.len(), cfg.ingest.balance_ratio, cfg.seed)?;
        let kept: Vec<(&(String, usize), Label)> = kp
            .iter()
            .map(|&i| (&pos[i], Label::Positive))
            .chain(kn.iter().map(|&i| (&neg[i], Label::Negative)))
            .collect();
        if kept.len() < cfg.ingest.folds {
            warn!("{group}: {} segments for {} folds; left out", kept.len(), cfg.ingest.folds);
            summary.skipped_groups.push(group.clone());
            continue;
        }
        let mut fold_of = vec![0; kept.len()];
        for (f, fold) in kfold_split(kept.len(), cfg.ingest.folds, cfg.seed)?.iter().enumerate() {
            for &i in &fold.test {
                fold_of[i] = f;
            }
        }
        summary.positives += kp.len();
        summary.negatives += kn.len();
        for (((file_id, start), label), fold) in kept.into_iter().zip(fold_of) {
            rows.push(ManifestRow {
                segment_id: rows.len(),
                file_id: file_id.clone(),
                start_sample: *start,
                label,
                fold,
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::Config("no group has segments of both classes".into()));
    }
    tables::write_manifest(&out.join(dataset::MANIFEST), &rows)?;
    write_text(&out.join(dataset::CONFIG), &cfg.to_text())?;
    Ok(summary)
}

fn check_shapes(model: &ModelConfig, data: &DiskDataset, what: &str) -> Result<()> {
    if model.channels != data.channels() || model.sample_len != data.segment_len() {
        return Err(Error::Config(format!(
            "{what} expects {}x{} segments, dataset holds {}x{}",
            model.channels,
            model.sample_len,
            data.channels(),
            data.segment_len()
        )));
    }
    Ok(())
}

fn gating(model: &ModelConfig) -> Option<ApproxConfig> {
    model.approx.enabled.then_some(model.approx)
}

pub fn checkpoint_name(case: &str, fold: usize) -> String {
    format!("{case}_fold{fold:02}.spkf")
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub rows: Vec<MetricsRow>,
    pub mean: Option<Metrics>,
}

/// Cross-validated training over the folds stored in the dataset. Writes
/// one checkpoint per fold, `metrics.csv` and the effective configuration.
pub fn train(dataset_dir: &Path, cfg: &RunConfig, out: &Path, workers: &rayon::ThreadPool) -> Result<TrainSummary> {
    cfg.validate()?;
    let data = DiskDataset::open(dataset_dir)?;
    check_shapes(&cfg.model, &data, "the model")?;
    let pooled = data.config.ingest.cv == CvMode::Pooled;
    let folds = data.folds(pooled);
    create_dir(&out.join("checkpoints"))?;
    let mut tc = cfg.train;
    tc.seed = cfg.seed;

    let rows: Vec<MetricsRow> = workers.install(|| {
        folds
            .par_iter()
            .map(|(case, f, fold)| {
                let mut log = |e: &spkf_core::train::EpochStats| {
                    info!("{case} fold {f} epoch {}: loss {:.4} acc {:.3}", e.epoch, e.loss, e.accuracy)
                };
                let outcome = train_fold(&cfg.model, &data, fold, *f, &tc, None, &mut log)?;
                let meta = CheckpointMeta {
                    case: case.clone(),
                    fold: *f,
                    seed: cfg.seed,
                };
                checkpoint::save(&out.join("checkpoints").join(checkpoint_name(case, *f)), &outcome.model, &meta)?;
                let profile = profile_segments(&outcome.model, &data, &fold.test, gating(&cfg.model))?;
                let mean = profile.mean_tally();
                let row = MetricsRow {
                    case: case.clone(),
                    fold: *f,
                    metrics: outcome.exact.metrics()?,
                    skip_reduction_percent: gating(&cfg.model).and_then(|_| mean.skip_stats().reduction_percent().ok()),
                    add_ops: mean.adds,
                    mul_ops: mean.core_muls,
                };
                info!("{case} fold {f}: acc {:.2}", row.metrics.acc);
                Ok(row)
            })
            .collect::<Result<_>>()
    })?;
    tables::write_metrics(&out.join("metrics.csv"), &rows)?;
    write_text(&out.join("run.conf"), &cfg.to_text())?;
    let all: Vec<Metrics> = rows.iter().map(|r| r.metrics).collect();
    Ok(TrainSummary {
        mean: mean_metrics(&all),
        rows,
    })
}

/// Test indices of the checkpoint's own fold.
fn checkpoint_fold(data: &DiskDataset, meta: &CheckpointMeta, path: &Path) -> Result<Vec<usize>> {
    let pooled = data.config.ingest.cv == CvMode::Pooled;
    data.folds(pooled)
        .into_iter()
        .find(|(c, f, _)| *c == meta.case && *f == meta.fold)
        .map(|(_, _, fold)| fold.test)
        .ok_or_else(|| {
            Error::format(
                path,
                format!("dataset has no fold {} for `{}`", meta.fold, meta.case),
            )
        })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub case: String,
    pub fold: usize,
    pub segments: usize,
    pub exact: Metrics,
    pub approx: Option<(Metrics, SkipStats)>,
}

/// Evaluates a checkpoint on the test set of its fold, exactly and, when
/// gating is on, with approximate updates.
pub fn eval(checkpoint_path: &Path, dataset_dir: &Path, approx: Option<bool>, out: &Path) -> Result<EvalReport> {
    let ck = checkpoint::load(checkpoint_path)?;
    let data = DiskDataset::open(dataset_dir)?;
    check_shapes(&ck.model.config, &data, "the checkpoint")?;
    let test = checkpoint_fold(&data, &ck.meta, checkpoint_path)?;
    let batch = 16;
    let exact = evaluate(&ck.model, &data, &test, None, batch)?;
    let gate = match approx {
        Some(true) => Some(ck.model.config.approx),
        Some(false) => None,
        None => gating(&ck.model.config),
    };
    let approx = gate
        .map(|ac| -> Result<_> {
            let ev = evaluate(&ck.model, &data, &test, Some(ApproxConfig { enabled: true, ..ac }), batch)?;
            let stats = ev.skips.iter().fold(SkipStats::default(), |a, s| a + s.stats);
            Ok((ev.metrics()?, stats))
        })
        .transpose()?;
    let report = EvalReport {
        case: ck.meta.case,
        fold: ck.meta.fold,
        segments: test.len(),
        exact: exact.metrics()?,
        approx,
    };
    create_dir(out)?;
    let mut s = String::from("case,fold,mode,segments,sens,spec,acc,skip_reduction_percent\n");
    let mut line = |mode: &str, m: &Metrics, red: Option<f64>| {
        let p = tables::percent;
        let _ = writeln!(
            s,
            "{},{},{mode},{},{},{},{},{}",
            report.case,
            report.fold,
            report.segments,
            p(m.sens),
            p(m.spec),
            p(Some(m.acc)),
            p(red)
        );
    };
    line("exact", &report.exact, None);
    if let Some((m, st)) = &report.approx {
        line("approx", m, st.reduction_percent().ok());
    }
    write_text(&out.join("eval.csv"), &s)?;
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct ProfileReport {
    /// Mean per-segment tally of the evaluated mode.
    pub tally: OpTally,
    pub ann_ops: u64,
    pub ratio: f64,
    pub table: String,
    pub skip: Option<spkf_core::profile::SkipReport>,
    pub sweep: Vec<SweepRow>,
}

/// Operation counts of a checkpoint over (up to `limit` of) its test set.
pub fn profile(
    checkpoint_path: &Path,
    dataset_dir: &Path,
    approx: Option<bool>,
    sweep: bool,
    limit: Option<usize>,
    out: &Path,
) -> Result<ProfileReport> {
    let ck = checkpoint::load(checkpoint_path)?;
    let data = DiskDataset::open(dataset_dir)?;
    check_shapes(&ck.model.config, &data, "the checkpoint")?;
    let mut test = checkpoint_fold(&data, &ck.meta, checkpoint_path)?;
    if let Some(n) = limit {
        test.truncate(n.max(1));
    }
    let model = &ck.model;
    let cfg = &model.config;
    let gate = match approx {
        Some(true) => Some(ApproxConfig { enabled: true, ..cfg.approx }),
        Some(false) => None,
        None => gating(cfg),
    };
    let exact = profile_segments(model, &data, &test, None)?;
    let (shown, skip) = match gate {
        Some(ac) => {
            let p = profile_segments(model, &data, &test, Some(ac))?;
            let report = skip_report(&exact, &p)?;
            (p, Some(report))
        }
        None => (exact.clone(), None),
    };
    let tally = shown.mean_tally();
    let ann = count_ann_ops(cfg)?;
    let ratio = efficiency_ratio(&tally, &ann)?;
    create_dir(out)?;
    tables::write_profile(&out.join("profile.csv"), &tally, &ann, ratio)?;

    let mut rows = Vec::new();
    if sweep {
        let subset = Subset {
            source: &data,
            indices: test.clone(),
        };
        let local: Vec<usize> = (0..test.len()).collect();
        for tth in 0..=cfg.timesteps {
            let p = profile_segments(model, &subset, &local, Some(ApproxConfig::new(cfg.timesteps, tth)))?;
            let m = p.mean_tally();
            let changed = p.predictions.iter().zip(&exact.predictions).filter(|(a, b)| a != b).count();
            rows.push(SweepRow {
                t_th: tth,
                adds: m.adds,
                core_muls: m.core_muls,
                full_muls: m.full_muls,
                reduction_percent: m.skip_stats().reduction_percent().ok(),
                acc: spkf_core::train::metrics(&p.confusion())?.acc,
                changed_predictions: changed,
            });
        }
        tables::write_sweep(&out.join("sweep.csv"), &rows)?;
    }
    let mut table = format_tally(&tally);
    let _ = writeln!(
        table,
        "segments {}  ann_ops {}  snn adds {} + core muls {}  ratio {ratio:.2}",
        test.len(),
        ann.total_ops(),
        tally.adds,
        tally.core_muls
    );
    Ok(ProfileReport {
        tally,
        ann_ops: ann.total_ops(),
        ratio,
        table,
        skip,
        sweep: rows,
    })
}

/// Fold means per case from a training run's `metrics.csv`, for plotting.
pub fn export_report(run_dir: &Path, out: &Path) -> Result<Vec<(String, Metrics)>> {
    let rows = tables::read_metrics(&run_dir.join("metrics.csv"))?;
    let mut by_case: BTreeMap<&str, Vec<Metrics>> = BTreeMap::new();
    for r in &rows {
        by_case.entry(r.case.as_str()).or_default().push(r.metrics);
    }
    let mut s = String::from("case,folds,sens,spec,acc\n");
    let mut out_rows = Vec::new();
    let all: Vec<Metrics> = rows.iter().map(|r| r.metrics).collect();
    for (case, ms) in by_case.iter().map(|(c, m)| (c.to_string(), m.as_slice())).chain([("mean".to_string(), all.as_slice())]) {
        let Some(m) = mean_metrics(ms) else { continue };
        let _ = writeln!(
            s,
            "{case},{},{},{},{}",
            ms.len(),
            tables::percent(m.sens),
            tables::percent(m.spec),
            tables::percent(Some(m.acc))
        );
        out_rows.push((case, m));
    }
    create_dir(out)?;
    write_text(&out.join("per_case.csv"), &s)?;
    Ok(out_rows)
}

/// Configuration matched to [`crate::fixture::small_corpus`] recordings.
pub fn fixture_config(seed: u64) -> String {
    format!(
        "# Phase lengths scaled down to the synthetic recordings.\n\
         task=detection\nseed={seed}\npreictal_s=30\nguard_s=20\npostictal_s=20\n\
         stride_ictal=1\nstride_inter=5\nfolds=4\nepochs=3\nbatch_size=8\n"
    )
}
