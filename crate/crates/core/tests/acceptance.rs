//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use nbeats_star::cli::{cmd_ablate, cmd_evaluate, cmd_synth, cmd_train, holdout_windows, Holdout, RunConfig};
use nbeats_star::eval::{
    aggregate_metrics, critical_value, diebold_mariano, dm_decision, point_errors, DmLoss,
};
use nbeats_star::loss::{combined_loss, nmse, pmape, LossConfig};
use nbeats_star::model::{decompose, normalize_input};
use nbeats_star::nn::grad_check;
use nbeats_star::synth::{generate, SynthSpec};
use nbeats_star::train::{train_one, TrainSchedule, TrainingData, MANIFEST_FILE};
use nbeats_star::train::PoolManifest;
use nbeats_star::{Ablation, EnsembleSpec, ModelConfig, NBeats, SplitSpec};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn desk_model() -> ModelConfig {
    ModelConfig {
        fc_width: 64,
        ..Default::default()
    }
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = Array2::from_shape_fn((2, 6), |_| rng.random_range(50.0..150.0));
    let y = Array2::from_shape_fn((2, 3), |_| rng.random_range(50.0..150.0));
    let mut variants: Vec<Option<Ablation>> = vec![None];
    variants.extend(Ablation::ALL.iter().copied().map(Some));
    let mut worst: f64 = 0.0;
    let mut runs = 0;
    for sharing in [true, false] {
        for flag in &variants {
            let mut config = ModelConfig {
                lookback: 6,
                horizon: 3,
                blocks: 2,
                fc_width: 8,
                sharing,
                ..Default::default()
            };
            if let Some(a) = flag {
                config.ablation.insert(*a);
            }
            let model = NBeats::new(config, 5).map_err(|e| e.to_string())?;
            let report = grad_check(
                &model.params,
                |p| model.record_loss(p, &x, &y).map(|(t, l, _)| (t, l)),
                1e-4,
            )
            .map_err(|e| e.to_string())?;
            let checked: usize = report.blocks.iter().map(|b| b.checked).sum();
            ensure(checked > 0, || "no coordinates checked".into())?;
            ensure(report.passed(), || {
                format!("sharing={sharing} {flag:?}: failing {:?} max rel {:.2e}", report.failing(), report.max_rel_error())
            })?;
            worst = worst.max(report.max_rel_error());
            runs += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 30.0, || format!("took {secs:.1}s"))?;
    Ok(format!("{runs} graphs, max rel error {worst:.2e}, {secs:.1}s"))
}

fn criterion_2() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    // (a) row-mean forecast has nMSE exactly one
    let mut worst_a: f64 = 0.0;
    for _ in 0..100 {
        let y = Array2::from_shape_fn((4, 12), |_| rng.random_range(1.0..1000.0));
        let yhat = Array2::from_shape_fn((4, 12), |(i, _)| y.row(i).mean().unwrap());
        let v = nmse(&y, &yhat, false).map_err(|e| e.to_string())?;
        worst_a = worst_a.max((v - 1.0).abs());
    }
    ensure(worst_a <= 1e-12, || format!("row-mean nMSE off by {worst_a:e}"))?;

    for _ in 0..1000 {
        let rows = rng.random_range(1..5);
        let cols = rng.random_range(2..13);
        let y = Array2::from_shape_fn((rows, cols), |_| rng.random_range(1.0..1000.0));
        let yhat = Array2::from_shape_fn((rows, cols), |_| rng.random_range(1.0..1000.0));
        let tau = rng.random_range(0.01..0.99);

        // (b) lambda = 0 is pMAPE bit for bit
        let cfg = LossConfig { tau, lambda: 0.0, ..Default::default() };
        let b = combined_loss(&y, &yhat, &cfg).map_err(|e| e.to_string())?;
        let p = pmape(&y, &yhat, tau).map_err(|e| e.to_string())?;
        ensure(b.total.to_bits() == p.to_bits(), || format!("lambda=0 total {} vs pmape {p}", b.total))?;

        // (c) tau = 0.5 symmetry: mirrored errors give equal loss
        let mirrored = Array2::from_shape_fn((rows, cols), |(i, j)| 2.0 * y[[i, j]] - yhat[[i, j]]);
        let l1 = pmape(&y, &yhat, 0.5).map_err(|e| e.to_string())?;
        let l2 = pmape(&y, &mirrored, 0.5).map_err(|e| e.to_string())?;
        ensure((l1 - l2).abs() <= 1e-12 * l1.abs().max(1.0), || format!("symmetry {l1} vs {l2}"))?;

        // (c) tau monotonicity: all-under forecasts get costlier as tau grows,
        // all-over forecasts get cheaper
        let under = y.mapv(|v| v * 0.8);
        let over = y.mapv(|v| v * 1.2);
        let (t1, t2) = (tau * 0.5, tau);
        let pu = (pmape(&y, &under, t1).unwrap(), pmape(&y, &under, t2).unwrap());
        let po = (pmape(&y, &over, t1).unwrap(), pmape(&y, &over, t2).unwrap());
        ensure(pu.0 < pu.1 && po.0 > po.1, || format!("monotonicity violated at tau={tau}"))?;
    }
    Ok(format!("row-mean nMSE dev {worst_a:.1e}; 1000 random cases"))
}

fn criterion_3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut worst_decomp: f64 = 0.0;
    let mut worst_scale: f64 = 0.0;
    for (i, sharing) in [true, false, true, false].into_iter().enumerate() {
        let config = ModelConfig {
            fc_width: 32,
            sharing,
            ..Default::default()
        };
        let model = NBeats::new(config, 100 + i as u64).map_err(|e| e.to_string())?;
        for _ in 0..25 {
            let x: Vec<f64> = (0..12).map(|_| rng.random_range(100.0..5000.0)).collect();
            let (f, diag) = model.forward(&x).map_err(|e| e.to_string())?;
            let parts = decompose(&diag);
            for j in 0..f.len() {
                let s: f64 = parts.iter().map(|p| p[j]).sum();
                worst_decomp = worst_decomp.max(rel(s, f[j]));
            }
            for input in &diag.inputs[1..] {
                ensure(input.iter().all(|&v| v >= 0.0), || "negative residual input".into())?;
            }
            let top = diag.inputs[0].iter().cloned().fold(f64::MIN, f64::max);
            ensure(top == 1.0, || format!("normalized max {top}"))?;
            let (xn, _) = normalize_input(&x).map_err(|e| e.to_string())?;
            ensure(xn.iter().cloned().fold(f64::MIN, f64::max) == 1.0, || "normalize_input ceiling".into())?;

            let k = rng.random_range(0.001..1000.0);
            let xk: Vec<f64> = x.iter().map(|v| v * k).collect();
            let (fk, _) = model.forward(&xk).map_err(|e| e.to_string())?;
            for (a, b) in fk.iter().zip(&f) {
                worst_scale = worst_scale.max(rel(*a, b * k));
            }
        }
    }
    ensure(worst_decomp <= 1e-9, || format!("decomposition rel error {worst_decomp:e}"))?;
    ensure(worst_scale <= 1e-12, || format!("scale equivariance rel error {worst_scale:e}"))?;

    for c in [0.37, 1.0, 123.456, 98765.4321] {
        let mut model = NBeats::new(desk_model(), 9).map_err(|e| e.to_string())?;
        model.zero_heads();
        let (f, _) = model.forward(&[c; 12]).map_err(|e| e.to_string())?;
        ensure(f.iter().all(|&v| v == c), || format!("constant {c} gave {f:?}"))?;
    }
    Ok(format!("decomposition {worst_decomp:.1e}, equivariance {worst_scale:.1e}"))
}

fn criterion_4() -> Check {
    let series = generate(&SynthSpec {
        lengths: vec![60],
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let config = desk_model();
    let schedule = TrainSchedule {
        pool_size: 1,
        seed: 4,
        ..Default::default()
    };
    let split = SplitSpec::default();
    let forecast = |k: f64| -> Result<Vec<f64>, String> {
        let s = vec![series[0].scaled(k)];
        let data = TrainingData::from_series(&s, &split.merged(), 12, 12).map_err(|e| e.to_string())?;
        let member = train_one(&data, &config, &schedule, schedule.member_seed(0)).map_err(|e| e.to_string())?;
        let model = member.model(&config).map_err(|e| e.to_string())?;
        let w = holdout_windows(&s, &split, &config, Holdout::Test).map_err(|e| e.to_string())?;
        Ok(model.forward(&w[0].x).map_err(|e| e.to_string())?.0)
    };
    let base = forecast(1.0)?;
    let big = forecast(1000.0)?;
    let worst = big
        .iter()
        .zip(&base)
        .map(|(b, a)| rel(*b, a * 1000.0))
        .fold(0.0, f64::max);
    ensure(worst <= 1e-6, || format!("max rel deviation {worst:e}"))?;
    Ok(format!("max rel deviation {worst:.1e}"))
}

fn run_config(dir: &Path, dataset: &Path, model: ModelConfig, schedule: TrainSchedule, ensemble: EnsembleSpec) -> RunConfig {
    RunConfig {
        dataset: dataset.to_path_buf(),
        output_dir: dir.to_path_buf(),
        model,
        schedule,
        ensemble,
        ..Default::default()
    }
}

fn criterion_5() -> Check {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dataset = tmp.path().join("synth.csv");
    let spec = SynthSpec::default();
    ensure(spec.lengths == vec![60; 8], || "synth default shape".into())?;
    cmd_synth(&spec, &dataset).map_err(|e| e.to_string())?;
    let cfg = run_config(
        &tmp.path().join("run"),
        &dataset,
        desk_model(),
        TrainSchedule {
            pool_size: 16,
            seed: 5,
            ..Default::default()
        },
        EnsembleSpec {
            ensemble_size: 8,
            trials: 10,
            ..Default::default()
        },
    );
    let trained = cmd_train(&cfg).map_err(|e| e.to_string())?;
    let eval = cmd_evaluate(&cfg, &trained.manifest).map_err(|e| e.to_string())?;
    let mape = eval.payload.report.averaged.aggregate.mape;
    let naive = eval.payload.seasonal_naive.aggregate.mape;
    let secs = start.elapsed().as_secs_f64();
    let summary = format!("MAPE {mape:.3}% vs seasonal naive {naive:.3}%, {secs:.0}s");
    ensure(mape < 5.0 && mape < naive, || summary.clone())?;
    ensure(start.elapsed() < Duration::from_secs(600), || summary.clone())?;
    Ok(summary)
}

fn small_schedule(seed: u64) -> TrainSchedule {
    TrainSchedule {
        epochs: 3,
        batches_per_epoch: 20,
        batch_size: 64,
        pool_size: 2,
        seed,
        ..Default::default()
    }
}

fn small_model() -> ModelConfig {
    ModelConfig {
        fc_width: 16,
        blocks: 3,
        ..Default::default()
    }
}

fn criterion_6() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dataset = tmp.path().join("synth.csv");
    cmd_synth(&SynthSpec::uniform(4, 48), &dataset).map_err(|e| e.to_string())?;
    let ensemble = EnsembleSpec {
        ensemble_size: 2,
        trials: 3,
        ..Default::default()
    };
    let cfg = run_config(tmp.path(), &dataset, small_model(), small_schedule(6), ensemble);
    let table = cmd_ablate(&cfg).map_err(|e| e.to_string())?;
    let names: Vec<&str> = table.rows.iter().map(|r| r.variant.as_str()).collect();
    ensure(names == ["full", "noL2", "noVar", "noDestd", "noReLU"], || format!("rows {names:?}"))?;
    ensure(
        table.rows.iter().all(|r| r.mape.is_finite() && r.rmse.is_finite()),
        || "non-finite metric".into(),
    )?;
    ensure(tmp.path().join("ablation.csv").exists(), || "ablation.csv missing".into())?;

    let manifest: PoolManifest = serde_json::from_str(
        &std::fs::read_to_string(tmp.path().join("ablation/noL2/pool").join(MANIFEST_FILE)).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let zero = manifest
        .members
        .iter()
        .all(|m| m.trace.first_step.nmse_term == 0.0 && m.trace.epochs.iter().all(|e| e.nmse_term == 0.0));
    ensure(zero, || "noL2 trace has nonzero nMSE".into())?;
    let full = &table.rows[0];
    let no_var = &table.rows[2];
    ensure(full.mape != no_var.mape || full.rmse != no_var.rmse, || "full and noVar identical".into())?;
    Ok(table
        .rows
        .iter()
        .map(|r| format!("{} {:.2}/{:.0}", r.variant, r.mape, r.rmse))
        .collect::<Vec<_>>()
        .join(", "))
}

/// Standard normal CDF by composite Simpson integration of the density.
fn reference_phi(z: f64) -> f64 {
    let n = 20_000;
    let a = z.abs();
    let h = a / n as f64;
    let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = pdf(0.0) + pdf(a);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * pdf(i as f64 * h);
    }
    let half = s * h / 3.0;
    if z >= 0.0 {
        0.5 + half
    } else {
        0.5 - half
    }
}

fn reference_dm(e1: &[f64], e2: &[f64], squared: bool, h: usize) -> (f64, f64) {
    let g = |e: f64| if squared { e * e } else { e.abs() };
    let n = e1.len();
    let d: Vec<f64> = (0..n).map(|t| g(e1[t]) - g(e2[t])).collect();
    let mut dbar = 0.0;
    for v in &d {
        dbar += v;
    }
    dbar /= n as f64;
    let mut lrv = 0.0;
    for k in 0..h {
        let mut acc = 0.0;
        for t in k..n {
            acc += (d[t] - dbar) * (d[t - k] - dbar);
        }
        let gamma = acc / n as f64;
        lrv += if k == 0 { gamma } else { 2.0 * gamma };
    }
    let stat = dbar / (lrv / n as f64).sqrt();
    (stat, 2.0 * (1.0 - reference_phi(stat.abs())))
}

fn criterion_7() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst_stat: f64 = 0.0;
    let mut worst_p: f64 = 0.0;
    let mut fixtures = 0;
    while fixtures < 100 {
        let n = rng.random_range(12..240);
        let h = rng.random_range(1..5);
        let squared = rng.random_bool(0.5);
        let sa = rng.random_range(0.5..50.0);
        let sb = sa * rng.random_range(0.7..1.4);
        let e1: Vec<f64> = (0..n).map(|_| sa * { let z: f64 = StandardNormal.sample(&mut rng); z }).collect();
        let e2: Vec<f64> = (0..n).map(|_| sb * { let z: f64 = StandardNormal.sample(&mut rng); z }).collect();
        let loss = if squared { DmLoss::Squared } else { DmLoss::Absolute };
        let got = diebold_mariano(&e1, &e2, loss, h).map_err(|e| e.to_string())?;
        let (stat, p) = reference_dm(&e1, &e2, squared, h);
        if got.long_run_variance.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            ensure(got.degenerate, || "nonpositive LRV not flagged".into())?;
            continue;
        }
        let s = got.statistic.ok_or("missing statistic")?;
        worst_stat = worst_stat.max((s - stat).abs() / stat.abs().max(1.0));
        worst_p = worst_p.max((got.p_value.unwrap() - p).abs());
        let flipped = diebold_mariano(&e2, &e1, loss, h).map_err(|e| e.to_string())?;
        ensure(flipped.statistic == Some(-s), || format!("antisymmetry {:?} vs {s}", flipped.statistic))?;
        fixtures += 1;
    }
    ensure(worst_stat <= 1e-9 && worst_p <= 1e-9, || format!("stat {worst_stat:e}, p {worst_p:e}"))?;

    let e: Vec<f64> = (0..20).map(|i| i as f64 - 7.5).collect();
    let same = diebold_mariano(&e, &e, DmLoss::Absolute, 1).map_err(|e| e.to_string())?;
    ensure(same.degenerate && same.statistic.is_none(), || "identical errors not degenerate".into())?;

    let d = dm_decision(-3.05, 0.01);
    ensure(d.reject_equal_accuracy, || "-3.05 not rejected".into())?;
    ensure((critical_value(0.01) - 2.5758).abs() < 1e-4, || "critical value".into())?;
    ensure(!dm_decision(-2.5, 0.01).reject_equal_accuracy, || "-2.5 rejected".into())?;
    Ok(format!("100 fixtures, stat {worst_stat:.1e}, p {worst_p:.1e}"))
}

fn criterion_8() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dataset = tmp.path().join("synth.csv");
    cmd_synth(&SynthSpec::uniform(3, 48), &dataset).map_err(|e| e.to_string())?;
    let ensemble = EnsembleSpec {
        ensemble_size: 4,
        trials: 5,
        ..Default::default()
    };
    let mut payloads = Vec::new();
    for run in ["a", "b"] {
        let cfg = run_config(&tmp.path().join(run), &dataset, small_model(), small_schedule(8), ensemble.clone());
        let trained = cmd_train(&cfg).map_err(|e| e.to_string())?;
        let eval = cmd_evaluate(&cfg, &trained.manifest).map_err(|e| e.to_string())?;
        let mut bytes = Vec::new();
        for f in ["metrics.json", "metrics_by_series.csv", "errors.csv", "mpe_histogram.csv"] {
            bytes.push(std::fs::read(eval.metrics_json.with_file_name(f)).map_err(|e| e.to_string())?);
        }
        bytes.push(std::fs::read(&trained.manifest).map_err(|e| e.to_string())?);
        payloads.push(bytes);
    }
    ensure(payloads[0] == payloads[1], || "outputs differ between runs".into())?;
    Ok(format!("{} bytes of metrics identical", payloads[0][0].len()))
}

fn criterion_9() -> Check {
    let e = point_errors(&[100.0, 200.0, 400.0], &[90.0, 210.0, 400.0]).map_err(|e| e.to_string())?;
    ensure(e.pe[0] == 10.0, || format!("PE sign: {}", e.pe[0]))?;
    let r = aggregate_metrics(&[("A".to_string(), e)]).map_err(|e| e.to_string())?;
    let m = r.aggregate;
    let expect = [5.0, 5.0, 5.0, (200.0f64 / 3.0).sqrt(), 5.0 / 3.0];
    for (got, want) in m.as_array().iter().zip(expect) {
        ensure((got - want).abs() <= 1e-12, || format!("metrics {:?} vs {expect:?}", m.as_array()))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let y: Vec<f64> = (0..12).map(|_| rng.random_range(10.0..1000.0)).collect();
        let f: Vec<f64> = y.iter().map(|v| v * rng.random_range(0.8..1.2)).collect();
        let k = rng.random_range(0.01..100.0);
        let yk: Vec<f64> = y.iter().map(|v| v * k).collect();
        let fk: Vec<f64> = f.iter().map(|v| v * k).collect();
        let a = aggregate_metrics(&[("s".into(), point_errors(&y, &f).unwrap())]).unwrap().aggregate;
        let b = aggregate_metrics(&[("s".into(), point_errors(&yk, &fk).unwrap())]).unwrap().aggregate;
        for (x, z) in [(a.medape, b.medape), (a.mape, b.mape), (a.iqr_ape, b.iqr_ape), (a.mpe, b.mpe)] {
            worst = worst.max((x - z).abs() / x.abs().max(1e-300).max(1.0));
        }
        worst = worst.max(rel(b.rmse, a.rmse * k));
    }
    ensure(worst <= 1e-12, || format!("scale behavior {worst:e}"))?;
    Ok(format!("fixtures exact, scale behavior {worst:.1e}"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("1 gradient correctness", criterion_1),
        ("2 loss identities", criterion_2),
        ("3 architecture invariants", criterion_3),
        ("4 training scale invariance", criterion_4),
        ("5 synthetic benchmark", criterion_5),
        ("6 ablation harness", criterion_6),
        ("7 Diebold-Mariano", criterion_7),
        ("8 determinism", criterion_8),
        ("9 metrics", criterion_9),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {name}: PASS ({detail})"),
            Err(detail) => {
                failed += 1;
                println!("criterion {name}: FAIL ({detail})");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
