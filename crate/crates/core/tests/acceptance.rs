//! Acceptance harness: prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails.
//!
//! Criteria 7–10 run on the standard benchmark (default configuration). The whole
//! block runs twice into separate directories and criterion 11 compares the two
//! metrics files byte for byte.

mod common;

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use leafroi::baselines::{run_baseline, BaselineNets, Method};
use leafroi::data::{gen_dataset, Dataset};
use leafroi::io::checkpoint;
use leafroi::io::report::{append_metrics, MetricsRow};
use leafroi::io::RunConfig;
use leafroi::network::{classifier_spec, fuse, roi_spec, Network};
use leafroi::train::{
    evaluate, init_seeds, run_pipeline, split_dataset, train_cls_stage, train_end_to_end, train_roi_stage, EvalMode,
    Schedule, TrainConfig,
};
use leafroi::Tensor;

const PROBE_SAMPLES: [usize; 3] = [3, 3, 2];
const PROBE_LIMIT: Duration = Duration::from_secs(300);
// One batch per epoch on the probe set, so epochs count optimizer steps.
const PROBE_ROI: Schedule = Schedule {
    epochs: 200,
    learning_rate: 0.05,
};
const PROBE_CLS: Schedule = Schedule {
    epochs: 30,
    learning_rate: 0.01,
};
const PROBE_E2E: Schedule = Schedule {
    epochs: 30,
    learning_rate: 0.005,
};
const BENCHMARK_LIMIT: Duration = Duration::from_secs(20 * 60);

struct Verdict {
    id: usize,
    pass: bool,
    detail: String,
}

fn verdict(id: usize, pass: bool, detail: impl Into<String>) -> Verdict {
    let v = Verdict {
        id,
        pass,
        detail: detail.into(),
    };
    println!("{} criterion {:>2}: {}", if v.pass { "PASS" } else { "FAIL" }, v.id, v.detail);
    v
}

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{:.2}%", 100.0 * x)).unwrap_or_else(|| "n/a".into())
}

struct Probe {
    metric: f64,
    elapsed: Duration,
}

struct Probes {
    roi: Probe,
    cls: Probe,
    e2e: Probe,
}

/// The first training samples of each class, in the configured proportions.
fn probe_set(train: &Dataset) -> Dataset {
    let mut idx = Vec::new();
    for (class, &want) in PROBE_SAMPLES.iter().enumerate() {
        idx.extend(
            train
                .samples
                .iter()
                .enumerate()
                .filter(|(_, s)| s.label == class)
                .map(|(i, _)| i)
                .take(want),
        );
    }
    train.subset(&idx)
}

/// Trains each stage from scratch on the probe set and measures training-set quality.
fn overfit_probes(probe: &Dataset, base: &TrainConfig) -> leafroi::Result<(Probes, Vec<MetricsRow>)> {
    let cfg = TrainConfig {
        roi: PROBE_ROI,
        cls: PROBE_CLS,
        e2e: PROBE_E2E,
        ..base.clone()
    };
    let [s_roi, s_cls, _] = init_seeds(cfg.seed);
    let size = probe.samples[0].mask.height();

    let t = Instant::now();
    let mut roi = Network::init(roi_spec(), s_roi)?;
    train_roi_stage(&mut roi, probe, &cfg)?;
    let seg = evaluate(&roi, probe, EvalMode::Segmentation)?;
    let roi_probe = Probe {
        metric: seg.mean_pixel_accuracy().unwrap_or(0.0),
        elapsed: t.elapsed(),
    };

    let t = Instant::now();
    let mut cls = Network::init(classifier_spec(6, 3, size)?, s_cls)?;
    train_cls_stage(&mut cls, &roi, probe, &cfg)?;
    let b = evaluate(&fuse(&roi, &cls)?, probe, EvalMode::Classification)?;
    let cls_probe = Probe {
        metric: b.accuracy.unwrap_or(0.0),
        elapsed: t.elapsed(),
    };

    // Stage C starts from an untrained classifier so the probe measures its own fitting
    let t = Instant::now();
    let fresh = Network::init(classifier_spec(6, 3, size)?, s_cls)?;
    let mut fused = fuse(&roi, &fresh)?;
    train_end_to_end(&mut fused, probe, &cfg)?;
    let c = evaluate(&fused, probe, EvalMode::Classification)?;
    let e2e_probe = Probe {
        metric: c.accuracy.unwrap_or(0.0),
        elapsed: t.elapsed(),
    };

    let rows = vec![
        MetricsRow::from_report("probe-roi", cfg.seed, &seg),
        MetricsRow::from_report("probe-cls", cfg.seed, &b),
        MetricsRow::from_report("probe-e2e", cfg.seed, &c),
    ];
    Ok((
        Probes {
            roi: roi_probe,
            cls: cls_probe,
            e2e: e2e_probe,
        },
        rows,
    ))
}

struct Benchmark {
    probes: Probes,
    pipeline_time: Duration,
    baseline_time: Duration,
    rows: Vec<MetricsRow>,
    csv: Vec<u8>,
    nets: Option<(Network, Network, Tensor)>,
}

/// Criteria 7–10 on the standard benchmark; rows are written to `dir/metrics.csv`.
fn benchmark(dir: &Path) -> leafroi::Result<Benchmark> {
    let cfg = RunConfig::default();
    let ds = gen_dataset(&cfg.gen)?;
    let split = split_dataset(&ds, cfg.train.split_ratio, cfg.train.seed)?;
    let (train, test) = (ds.subset(&split.train), ds.subset(&split.test));
    let seed = cfg.train.seed;

    let (probes, mut rows) = overfit_probes(&probe_set(&train), &cfg.train)?;

    let t = Instant::now();
    let out = run_pipeline(&train, &test, &cfg.train)?;
    let pipeline_time = t.elapsed();
    for log in &out.logs {
        let losses: Vec<String> = log.epoch_losses.iter().map(|l| format!("{l:.4}")).collect();
        println!("  {} losses: {}", log.stage, losses.join(" "));
    }
    rows.push(MetricsRow::from_report("roi", seed, &out.segmentation));
    rows.push(MetricsRow::from_report("fused", seed, &out.fused_report));
    rows.push(MetricsRow::from_report("plain", seed, &out.plain_report));

    let t = Instant::now();
    for method in Method::ALL {
        let nets = BaselineNets {
            plain: Some(&out.plain),
            stage_b: Some((&out.cls, &out.roi)),
        };
        let report = run_baseline(method, &train, &test, nets, &cfg.baseline)?;
        rows.push(MetricsRow::from_report(method.name(), seed, &report));
    }
    let baseline_time = t.elapsed();

    fs::create_dir_all(dir)?;
    let path = dir.join("metrics.csv");
    let _ = fs::remove_file(&path);
    append_metrics(&path, &rows)?;
    let probe_input = leafroi::data::batch_images(&test.samples[..4])?;
    Ok(Benchmark {
        probes,
        pipeline_time,
        baseline_time,
        rows,
        csv: fs::read(&path)?,
        nets: Some((out.roi, out.fused, probe_input)),
    })
}

fn row<'a>(rows: &'a [MetricsRow], method: &str) -> Option<&'a MetricsRow> {
    rows.iter().find(|r| r.method == method)
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut verdicts = Vec::new();

    let t = Instant::now();
    let mut worst = 0.0f64;
    let mut details = Vec::new();
    for (i, layer) in common::LAYERS.iter().enumerate() {
        let r = common::gradient_suite(layer, 20, 100 + i as u64);
        worst = worst.max(r.max_rel_error);
        details.push(format!("{layer} {:.1e}", r.max_rel_error));
    }
    let elapsed = t.elapsed();
    verdicts.push(verdict(
        1,
        worst <= 1e-6 && elapsed <= Duration::from_secs(60),
        format!(
            "finite differences, 20 instances per layer, worst rel. error {worst:.2e} (limit 1e-6) in {:.1}s [{}]",
            elapsed.as_secs_f64(),
            details.join(", ")
        ),
    ));

    let adj = common::adjoint_suite(50, 7);
    verdicts.push(verdict(2, adj <= 1e-9, format!("conv/tconv inner products, 50 instances, worst gap {adj:.2e} (limit 1e-9)")));

    let bad = common::metric_oracle_mismatches(100, 11);
    verdicts.push(verdict(3, bad == 0, format!("100 random 8x8 masks + worked 2x2 case, {bad} mismatches with the set oracle")));

    let drop = common::em_worst_decrease(20, 12);
    verdicts.push(verdict(4, drop <= 1e-9, format!("20 EM runs, largest log-likelihood decrease {drop:.2e} (slack 1e-9)")));

    let fv = common::fisher_fd_worst(20, 13);
    verdicts.push(verdict(5, fv <= 1e-4, format!("Fisher vector vs likelihood gradient, 20 instances, worst rel. error {fv:.2e} (limit 1e-4)")));

    let bp = common::bilinear_mismatches(50, 14);
    verdicts.push(verdict(6, bp == 0, format!("bilinear pooling vs double loop, 50 instances, {bp} mismatches")));

    let root = tempfile::tempdir().expect("temporary directory");
    let first = benchmark(&root.path().join("run1"));
    match &first {
        Ok(b) => {
            let p = &b.probes;
            let within = |d: Duration| d <= PROBE_LIMIT;
            verdicts.push(verdict(
                7,
                p.roi.metric >= 0.99
                    && p.cls.metric == 1.0
                    && p.e2e.metric == 1.0
                    && within(p.roi.elapsed)
                    && within(p.cls.elapsed)
                    && within(p.e2e.elapsed),
                format!(
                    "8-sample probes: Stage A pixel acc {} in {:.0}s, Stage B acc {} in {:.0}s, Stage C acc {} in {:.0}s",
                    pct(Some(p.roi.metric)),
                    p.roi.elapsed.as_secs_f64(),
                    pct(Some(p.cls.metric)),
                    p.cls.elapsed.as_secs_f64(),
                    pct(Some(p.e2e.metric)),
                    p.e2e.elapsed.as_secs_f64()
                ),
            ));
            let fused = row(&b.rows, "fused").and_then(|r| r.accuracy);
            let plain = row(&b.rows, "plain").and_then(|r| r.accuracy);
            let gain = fused.zip(plain).map(|(f, p)| f - p);
            verdicts.push(verdict(
                8,
                gain.is_some_and(|g| g >= 0.03) && b.pipeline_time <= BENCHMARK_LIMIT,
                format!(
                    "fused {} vs plain {} (gain {} pp, need >= 3), pipeline {:.1} min (limit 20)",
                    pct(fused),
                    pct(plain),
                    gain.map(|g| format!("{:+.2}", 100.0 * g)).unwrap_or_else(|| "n/a".into()),
                    b.pipeline_time.as_secs_f64() / 60.0
                ),
            ));
            let roi = row(&b.rows, "roi");
            let (pa, iou) = (roi.and_then(|r| r.mean_pixel_acc), roi.and_then(|r| r.mean_iou));
            verdicts.push(verdict(
                9,
                pa.is_some_and(|v| v >= 0.80) && iou.is_some_and(|v| v >= 0.60),
                format!("ROI test split: mean pixel acc {} (need >= 80%), mean IoU {} (need >= 60%)", pct(pa), pct(iou)),
            ));
            let names = Method::ALL.map(|m| m.name());
            let all = names.iter().all(|n| row(&b.rows, n).and_then(|r| r.accuracy).is_some());
            let clustering = row(&b.rows, "clustering").and_then(|r| r.accuracy);
            verdicts.push(verdict(
                10,
                all && clustering.is_some_and(|a| a > 0.40),
                format!(
                    "baselines in {:.1} min: clustering {}, mdfep {}, bilinear {} (clustering must exceed 40%)",
                    b.baseline_time.as_secs_f64() / 60.0,
                    pct(clustering),
                    pct(row(&b.rows, "mdfep").and_then(|r| r.accuracy)),
                    pct(row(&b.rows, "bilinear").and_then(|r| r.accuracy))
                ),
            ));
        }
        Err(e) => {
            for id in 7..=10 {
                verdicts.push(verdict(id, false, format!("benchmark failed: {e}")));
            }
        }
    }

    let second = benchmark(&root.path().join("run2"));
    let identical = match (&first, &second) {
        (Ok(a), Ok(b)) => Some(a.csv == b.csv),
        _ => None,
    };
    verdicts.push(verdict(
        11,
        identical == Some(true),
        match identical {
            Some(true) => "second run of criteria 7-10 wrote a byte-identical metrics CSV".to_string(),
            Some(false) => "metrics CSVs of the two runs differ".to_string(),
            None => "a benchmark run failed".to_string(),
        },
    ));
    if let Ok(b) = &first {
        println!("  metrics CSV:\n{}", String::from_utf8_lossy(&b.csv).trim_end().replace('\n', "\n    "));
    }

    verdicts.push(persistence(first.ok().and_then(|b| b.nets), root.path()));

    let failed = verdicts.iter().filter(|v| !v.pass).count();
    println!("{} of {} criteria passed", verdicts.len() - failed, verdicts.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

/// Saves and reloads the trained ROI and fused networks and compares forward outputs bit for bit.
fn persistence(nets: Option<(Network, Network, Tensor)>, dir: &Path) -> Verdict {
    let check = || -> leafroi::Result<(bool, String)> {
        let (roi, fused, x) = match nets {
            Some(n) => n,
            None => {
                let roi = Network::init(roi_spec(), 1)?;
                let cls = Network::init(classifier_spec(6, 3, 96)?, 2)?;
                let fused = fuse(&roi, &cls)?;
                let cfg = RunConfig::default();
                let ds = gen_dataset(&leafroi::data::GenConfig {
                    counts: [2, 1, 1],
                    ..cfg.gen
                })?;
                (roi, fused, leafroi::data::batch_images(&ds.samples)?)
            }
        };
        let mut ok = true;
        let mut parts = Vec::new();
        for (name, net) in [("roi", &roi), ("fused", &fused)] {
            let path = dir.join(format!("{name}.ckpt"));
            checkpoint::save(net, &path)?;
            let back = checkpoint::load(&path)?;
            let same_params = back == *net;
            let same_out = net.infer(&x)?.data() == back.infer(&x)?.data();
            // an independent decoder pass over the same bytes
            let again = checkpoint::decode(&fs::read(&path)?)?;
            ok &= same_params && same_out && again == back;
            parts.push(format!(
                "{name}: {} bytes, params {}, forward {}",
                fs::metadata(&path)?.len(),
                if same_params { "identical" } else { "differ" },
                if same_out { "bit-identical" } else { "differ" }
            ));
        }
        Ok((ok, parts.join("; ")))
    };
    match check() {
        Ok((ok, detail)) => verdict(12, ok, format!("checkpoint round trip: {detail}")),
        Err(e) => verdict(12, false, format!("checkpoint round trip failed: {e}")),
    }
}
