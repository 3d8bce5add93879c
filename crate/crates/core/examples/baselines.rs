//! The clustering, multiscale Fisher-vector and bilinear baselines on a reduced
//! benchmark, printed as metrics CSV rows.

use leafroi::baselines::{run_baseline, BaselineConfig, BaselineNets, Method};
use leafroi::data::{gen_dataset, GenConfig};
use leafroi::io::report::{format_table, MetricsRow};
use leafroi::network::{classifier_spec, roi_spec, Network};
use leafroi::train::{split_dataset, train_cls_stage, train_plain_classifier, train_roi_stage, Schedule, TrainConfig};

fn main() -> leafroi::Result<()> {
    let ds = gen_dataset(&GenConfig {
        size: 48,
        counts: [16, 16, 20],
        ..GenConfig::default()
    })?;
    let schedule = |epochs, learning_rate| Schedule { epochs, learning_rate };
    let cfg = TrainConfig {
        roi: schedule(10, 0.02),
        cls: schedule(10, 0.01),
        e2e: schedule(0, 0.0),
        ..TrainConfig::default()
    };
    let split = split_dataset(&ds, 0.5, cfg.seed)?;
    let (train, test) = (ds.subset(&split.train), ds.subset(&split.test));

    let mut roi = Network::init(roi_spec(), 1)?;
    train_roi_stage(&mut roi, &train, &cfg)?;
    let mut cls = Network::init(classifier_spec(6, 3, 48)?, 2)?;
    train_cls_stage(&mut cls, &roi, &train, &cfg)?;
    let mut plain = Network::init(classifier_spec(3, 3, 48)?, 3)?;
    train_plain_classifier(&mut plain, &train, &cfg)?;

    let nets = BaselineNets {
        plain: Some(&plain),
        stage_b: Some((&cls, &roi)),
    };
    let bcfg = BaselineConfig {
        gmm_components: 8,
        ..BaselineConfig::default()
    };
    let mut rows = Vec::new();
    for method in Method::ALL {
        let report = run_baseline(method, &train, &test, nets, &bcfg)?;
        rows.push(MetricsRow::from_report(method.name(), bcfg.seed, &report));
    }
    print!("{}", format_table(&rows));
    Ok(())
}
