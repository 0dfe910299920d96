//! End-to-end acceptance run: one PASS/FAIL line per criterion, non-zero
//! exit status if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;

use common::grad::soft_gradient_error;
use common::interp::{compare, random_model, Interp};
use common::{raster, rng, tiny_config, uniform};
use spkf::cli::main_with_args;
use spkf::edf::{parse_edf, parse_recording, EdfFile};
use spkf::fixture::{channel_labels, synthetic_edf, RecordingSpec, PHYSICAL_RANGE};
use spkf_core::data::{kfold_split, segment_count, segment_interval, EegRecording, Phase, PhaseInterval};
use spkf_core::model::{
    attention_current, attention_map, build_model, count_parameters, forward, ssa_forward, ApproxLayers,
    ForwardOptions,
};
use spkf_core::neuron::{lif_multistep, lif_step, LifState};
use spkf_core::profile::{
    count_ann_ops, count_snn_ops, efficiency_ratio, profile_segments, ratio_from_totals, skip_report,
};
use spkf_core::synth::SyntheticEeg;
use spkf_core::train::{accuracy_delta, metrics, train_fold, ConfusionMatrix, EarlyStop, FoldOutcome, TrainConfig};
use spkf_core::{ApproxConfig, LifParams, ModelConfig, Tensor};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

fn lif(v_th: f64) -> LifParams {
    LifParams {
        tau: 2.0,
        v_th,
        v_reset: 0.0,
    }
}

fn lif_correctness() -> Check {
    let step = |v: f64, x: f64| {
        let mut state = LifState::from_potential(Tensor::scalar_vec(&[v]));
        let s = lif_step(&mut state, &Tensor::scalar_vec(&[x]), &lif(1.0)).map_err(|e| e.to_string())?;
        Ok::<_, String>((s.data()[0], state.v.data()[0]))
    };
    // (v_prev, x) -> (spike, v) with H = 1.25, 0.3 and 0.
    for (v, x, s, v_next) in [(0.5, 2.0, 1.0, 0.0), (0.2, 0.4, 0.0, 0.3), (0.0, 0.0, 0.0, 0.0)] {
        let (gs, gv) = step(v, x)?;
        ensure(gs == s && (gv - v_next).abs() <= 1e-12, || format!("step({v}, {x}) gave ({gs}, {gv})"))?;
    }
    let out = lif_multistep(&Tensor::full(&[12, 1], 1.0), &lif(0.9), &Tensor::zeros(&[1])).map_err(|e| e.to_string())?;
    let want: Vec<f64> = (1..=12).map(|t| f64::from(u8::from(t % 4 == 0))).collect();
    ensure(out.data() == want.as_slice(), || format!("trace {:?}", out.data()))?;
    Ok("3 hand steps, period-4 trace".into())
}

fn approximation_boundary() -> Check {
    let mut opts = ForwardOptions::eval();
    opts.checked = true;
    for seed in 0..1000u64 {
        let t = 1 + (seed % 8) as usize;
        let mut cfg = tiny_config(1 + (seed % 2) as usize, t);
        cfg.approx_layers = ApproxLayers::ALL;
        let exact = build_model(&cfg, seed).map_err(|e| e.to_string())?;
        let mut gated = exact.clone();
        gated.config.approx = ApproxConfig::new(t, t);
        let x = uniform(&mut rng(seed), &[2, 3, 16], -3.0, 3.0);
        let a = forward(&exact, &x, &opts).map_err(|e| e.to_string())?;
        let b = forward(&gated, &x, &opts).map_err(|e| e.to_string())?;
        ensure(bits(&a.logits) == bits(&b.logits) && a.spikes == b.spikes, || format!("seed {seed} diverged"))?;
        ensure(b.total_skips().updates_skipped == 0, || format!("seed {seed} skipped updates"))?;
    }
    Ok("1000 instances, T in 1..=8".into())
}

fn gradient_fidelity() -> Check {
    let mut worst: f64 = 0.0;
    for encoders in [1, 2] {
        for seed in 0..20 {
            let err = soft_gradient_error(encoders, seed);
            ensure(err <= 1e-4, || format!("encoders={encoders} seed={seed}: {err:e}"))?;
            worst = worst.max(err);
        }
    }
    Ok(format!("40 runs, worst rel err {worst:.2e}"))
}

fn ssa_properties() -> Check {
    for seed in 0..1000u64 {
        let mut r = rng(seed);
        let (t, n) = (r.random_range(1..=4), r.random_range(1..6));
        let p = r.random_range(0.0..1.0);
        let cfg = tiny_config(1, t);
        let m = build_model(&cfg, seed).map_err(|e| e.to_string())?;
        let block = &m.encoders[0];
        let x = raster(&mut r, &[t, n, 4], p);
        let out = ssa_forward(&x, block, &cfg.lif, cfg.attention_scale).map_err(|e| e.to_string())?;
        ensure([&out.q, &out.k, &out.v, &out.output].iter().all(|r| r.is_binary()), || format!("seed {seed}: non-binary"))?;
        for step in 0..t {
            let map = attention_map(&out.q, &out.k, step).map_err(|e| e.to_string())?;
            ensure(map.data().iter().all(|&a| a >= 0.0), || format!("seed {seed}: negative map"))?;
        }
        let cur = attention_current(&out.q, &out.k, &out.v, 1.0).map_err(|e| e.to_string())?;
        ensure(cur.data().iter().all(|&a| a >= 0.0), || format!("seed {seed}: negative product"))?;
        let mut silent = block.clone();
        for b in [&mut silent.bq, &mut silent.bk, &mut silent.bv, &mut silent.bo] {
            b.fill(0.0);
        }
        let zero = ssa_forward(&Tensor::zeros(&[t, n, 4]), &silent, &cfg.lif, cfg.attention_scale)
            .map_err(|e| e.to_string())?;
        ensure(zero.output.count_nonzero() == 0, || format!("seed {seed}: silent input fired"))?;
    }
    Ok("1000 rasters".into())
}

fn parameter_budget() -> Check {
    let det = count_parameters(&ModelConfig::detection());
    let pred = count_parameters(&ModelConfig::prediction());
    ensure((7_920..=11_880).contains(&det), || format!("detection {det}"))?;
    ensure((32_240..=48_360).contains(&pred), || format!("prediction {pred}"))?;
    Ok(format!("detection {det}, prediction {pred}"))
}

fn op_counter_oracle() -> Check {
    for seed in 0..600 {
        let (m, seg) = random_model(seed);
        let tally = count_snn_ops(&m, &seg).map_err(|e| e.to_string())?;
        let (oracle, encoding, _) = Interp::run(&m, &seg);
        compare(&tally, &oracle, encoding).map_err(|e| format!("seed {seed}: {e}"))?;
    }
    Ok("600 random models".into())
}

/// Ten-fold cross validation of the detection preset on the separable fixture.
struct DeskRun {
    data: SyntheticEeg,
    cfg: ModelConfig,
    folds: Vec<FoldOutcome>,
    test: Vec<Vec<usize>>,
    elapsed: Duration,
}

fn desk_run() -> Result<DeskRun, String> {
    let data = SyntheticEeg::new(2000, 17);
    let cfg = ModelConfig::detection();
    let tc = TrainConfig {
        epochs: 50,
        batch_size: 16,
        learning_rate: 1e-3,
        seed: 17,
        early_stop: Some(EarlyStop {
            accuracy: 0.99,
            window: 192,
        }),
        ..TrainConfig::default()
    };
    let splits = kfold_split(data.segments, 10, 17).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let approx = Some(ApproxConfig::new(cfg.timesteps, 2));
    let folds = splits
        .par_iter()
        .enumerate()
        .map(|(i, f)| train_fold(&cfg, &data, f, i, &tc, approx, &mut |_| {}))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    Ok(DeskRun {
        data,
        cfg,
        folds,
        test: splits.into_iter().map(|f| f.test).collect(),
        elapsed: start.elapsed(),
    })
}

fn desk_learning(run: &DeskRun) -> Check {
    let mut accs = Vec::new();
    for f in &run.folds {
        accs.push(f.exact.metrics().map_err(|e| e.to_string())?.acc);
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let epochs = run.folds.iter().map(|f| f.history.len()).max().unwrap_or(0);
    let detail = format!(
        "mean acc {mean:.2}%, min {:.2}%, max epochs {epochs}, {:.0} s",
        accs.iter().copied().fold(f64::INFINITY, f64::min),
        run.elapsed.as_secs_f64()
    );
    ensure(mean >= 90.0 && epochs <= 50, || detail.clone())?;
    ensure(run.elapsed < Duration::from_secs(15 * 60), || detail.clone())?;
    Ok(detail)
}

fn profile_indices(run: &DeskRun) -> &[usize] {
    &run.test[0][..run.test[0].len().min(100)]
}

fn efficiency_structure(run: &DeskRun) -> Check {
    let a = ratio_from_totals(27.1e6, 2.1e6, 6.1e3).map_err(|e| e.to_string())?;
    let b = ratio_from_totals(4.1e6, 0.32e6, 1.0e3).map_err(|e| e.to_string())?;
    ensure((a - 12.87).abs() <= 0.01 && (b - 12.77).abs() <= 0.01, || format!("ratios {a:.3} / {b:.3}"))?;

    let idx = profile_indices(run);
    let model = &run.folds[0].model;
    let det = profile_segments(model, &run.data, idx, None).map_err(|e| e.to_string())?.mean_tally();
    let det_ann = count_ann_ops(&run.cfg).map_err(|e| e.to_string())?;
    let det_ratio = efficiency_ratio(&det, &det_ann).map_err(|e| e.to_string())?;

    // The prediction preset is profiled untrained; its rates are reported, not asserted.
    let pcfg = ModelConfig::prediction();
    let pred_model = build_model(&pcfg, 17).map_err(|e| e.to_string())?;
    let pred = profile_segments(&pred_model, &run.data, &idx[..idx.len().min(20)], None)
        .map_err(|e| e.to_string())?
        .mean_tally();
    let pred_ann = count_ann_ops(&pcfg).map_err(|e| e.to_string())?;
    let pred_ratio = efficiency_ratio(&pred, &pred_ann).map_err(|e| e.to_string())?;
    Ok(format!(
        "reference ratios {a:.2}/{b:.2}; detection {}+{} vs {} -> {det_ratio:.2}x; \
         prediction (untrained) {}+{} vs {} -> {pred_ratio:.2}x",
        det.adds,
        det.core_muls,
        det_ann.total_ops(),
        pred.adds,
        pred.core_muls,
        pred_ann.total_ops()
    ))
}

fn skip_reduction(run: &DeskRun) -> Check {
    let idx = profile_indices(run);
    let model = &run.folds[0].model;
    let exact = profile_segments(model, &run.data, idx, None).map_err(|e| e.to_string())?;
    let gated = profile_segments(model, &run.data, idx, Some(ApproxConfig::new(8, 2))).map_err(|e| e.to_string())?;
    let rep = skip_report(&exact, &gated).map_err(|e| e.to_string())?;
    for row in rep.rows.iter().filter(|r| r.updates.total() > 0) {
        println!("    {:<24} reduction {:>6.2}%", row.layer, row.reduction_percent.unwrap_or(0.0));
    }

    // Deltas are pooled over every test fold; the worst single fold is reported.
    let (mut exact_cm, mut approx_cm) = (ConfusionMatrix::default(), ConfusionMatrix::default());
    let mut worst: f64 = 0.0;
    for f in &run.folds {
        let approx = f.approx.as_ref().ok_or("fold without gated evaluation")?;
        worst = worst.max(accuracy_delta(&f.exact.cm, &approx.cm).map_err(|e| e.to_string())?.abs());
        exact_cm += f.exact.cm;
        approx_cm += approx.cm;
    }
    let pooled = accuracy_delta(&exact_cm, &approx_cm).map_err(|e| e.to_string())?;
    let mut all = model.clone();
    all.config.approx_layers = ApproxLayers::ALL;
    let mlp = profile_segments(&all, &run.data, idx, Some(ApproxConfig::new(8, 2))).map_err(|e| e.to_string())?;
    let mlp = skip_report(&exact, &mlp).map_err(|e| e.to_string())?;
    let detail = format!(
        "aggregate {:.2}%, dACC {pooled:+.2} pp (worst fold {worst:.2} pp); with MLP gating {:.2}% / {:+.2} pp",
        rep.reduction_percent.unwrap_or(0.0),
        mlp.reduction_percent.unwrap_or(0.0),
        mlp.accuracy_delta
    );
    ensure(pooled.abs() <= 1.0 && rep.reduction_percent.is_some_and(|p| p > 0.0), || detail.clone())?;
    Ok(detail)
}

fn segmentation() -> Check {
    let mut r = rng(10);
    for _ in 0..10_000 {
        let (len, window, stride) = (r.random_range(0..5000), r.random_range(1..600), r.random_range(1..700));
        let mut brute = 0;
        let mut start = 0;
        while start + window <= len {
            brute += 1;
            start += stride;
        }
        ensure(segment_count(len, window, stride) == brute, || format!("({len}, {window}, {stride})"))?;
    }
    let rec = EegRecording {
        case_id: "chb00".into(),
        file_id: "f".into(),
        channels: channel_labels(22),
        fs: 256.0,
        samples: Tensor::zeros(&[22, 60 * 256]),
        bit_depth: 16,
    };
    let interval = PhaseInterval {
        phase: Phase::Ictal,
        start_s: 10.0,
        end_s: 50.0,
        file_id: "f".into(),
    };
    let n = segment_interval(&interval, &rec, 5.0, 1.0).map_err(|e| e.to_string())?.len();
    ensure(n == 36, || format!("40 s interval gave {n}"))?;
    Ok("10000 triples, 40 s -> 36".into())
}

fn metrics_arithmetic() -> Check {
    let cm = ConfusionMatrix {
        tp: 94,
        fp: 1,
        tn: 99,
        fn_: 6,
    };
    let m = metrics(&cm).map_err(|e| e.to_string())?;
    ensure(m.sens == Some(94.0) && m.spec == Some(99.0) && m.acc == 96.5, || format!("{m:?}"))?;
    for k in [2, 3, 7, 1000] {
        ensure(metrics(&cm.scaled(k)).ok() == Some(m), || format!("scale {k}"))?;
    }
    Ok("94.0 / 99.0 / 96.5".into())
}

fn edf_round_trip() -> Check {
    let spec = RecordingSpec {
        file_id: "chb01_01".into(),
        channels: 23,
        duration_s: 12,
        seizures: vec![(4.0, 8.0)],
        seed: 3,
    };
    let file = synthetic_edf(&spec);
    let bytes = file.to_bytes();
    let parsed = parse_edf(&bytes)?;
    ensure(parsed == file, || "parsed file differs from the constructed one".into())?;
    ensure(parsed.payload_bytes() == file.payload_bytes(), || "payload bytes differ".into())?;
    ensure(parsed.to_bytes() == bytes, || "re-serialization differs".into())?;
    let rec = parse_recording(&bytes, "chb01", "chb01_01").map_err(|e| e.to_string())?;
    ensure(rec.n_channels() == 22, || format!("{} channels", rec.n_channels()))?;
    for c in [0, 9, 21] {
        let (gain, offset) = parsed.header.signals[c].calibration();
        for i in [0, 1000, 3071] {
            let want = gain * f64::from(file.digital[c][i]) + offset;
            ensure(rec.samples.get(&[c, i]) == want, || format!("sample ({c}, {i})"))?;
        }
    }
    let one = EdfFile::from_digital(&channel_labels(1), 4, 1.0, PHYSICAL_RANGE, vec![vec![1, -2, 3, -4]])?;
    ensure(parse_edf(&one.to_bytes())? == one, || "one-signal file".into())?;
    Ok("23 signals -> 22 channels, byte-identical".into())
}

fn cli(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("spkf").chain(args.iter().copied()))
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let s = |p: &Path| p.to_str().unwrap().to_owned();
    let corpus = root.join("corpus");
    ensure(cli(&["export", "fixture", "--out", &s(&corpus), "--seed", "9"]) == 0, || "fixture".into())?;
    let conf = s(&corpus.join("fixture.conf"));
    let data = s(&root.join("data"));
    let ann = s(&corpus.join("annotations.csv"));
    let ingest = ["ingest", "--config", &conf, "--edf-dir", &s(&corpus), "--annotations", &ann, "--out", &data];
    ensure(cli(&ingest) == 0, || "ingest".into())?;
    let train = |name: &str| {
        let out = root.join(name);
        let code = cli(&["train", "--config", &conf, "--dataset", &data, "--out", &s(&out), "--epochs", "1"]);
        (code == 0).then_some(out)
    };
    let a = train("a").ok_or("first train run failed")?;
    let b = train("b").ok_or("second train run failed")?;
    let read = |p: &Path| std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()));
    ensure(read(&a.join("metrics.csv"))? == read(&b.join("metrics.csv"))?, || "metrics.csv differs".into())?;
    let mut names: Vec<_> = std::fs::read_dir(a.join("checkpoints"))
        .map_err(|e| e.to_string())?
        .map(|e| e.map(|e| e.file_name()))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    names.sort();
    ensure(!names.is_empty(), || "no checkpoints".into())?;
    for n in &names {
        let (x, y) = (a.join("checkpoints").join(n), b.join("checkpoints").join(n));
        ensure(read(&x)? == read(&y)?, || format!("{} differs", n.to_string_lossy()))?;
    }
    Ok(format!("{} checkpoints and metrics.csv identical", names.len()))
}

fn report(n: usize, name: &str, result: Check) -> bool {
    match &result {
        Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail}"),
        Err(why) => println!("criterion {n:>2} FAIL  {name}: {why}"),
    }
    result.is_ok()
}

fn timed(f: impl FnOnce() -> Check) -> Check {
    let start = Instant::now();
    f().map(|d| format!("{d} ({:.1} s)", start.elapsed().as_secs_f64()))
}

fn main() {
    let mut ok = true;
    ok &= report(1, "LIF correctness", timed(lif_correctness));
    ok &= report(2, "approximation boundary", timed(approximation_boundary));
    ok &= report(3, "gradient fidelity", timed(gradient_fidelity));
    ok &= report(4, "spiking self-attention", timed(ssa_properties));
    ok &= report(5, "parameter budget", parameter_budget());
    ok &= report(6, "operation counter oracle", timed(op_counter_oracle));
    let desk = desk_run();
    let trained = |f: &dyn Fn(&DeskRun) -> Check| desk.as_ref().map_err(Clone::clone).and_then(f);
    ok &= report(7, "efficiency ratio", trained(&efficiency_structure));
    ok &= report(8, "skip reduction", trained(&skip_reduction));
    ok &= report(9, "desk-scale learning", trained(&desk_learning));
    ok &= report(10, "segmentation", timed(segmentation));
    ok &= report(11, "metrics arithmetic", metrics_arithmetic());
    ok &= report(12, "EDF round trip", edf_round_trip());
    ok &= report(13, "determinism", timed(determinism));
    if !ok {
        std::process::exit(1);
    }
}
