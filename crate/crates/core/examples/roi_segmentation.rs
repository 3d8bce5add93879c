//! Trains the ROI network on a reduced benchmark and reports per-class pixel
//! accuracy and IoU on held-out scenes.

use leafroi::data::{gen_dataset, GenConfig};
use leafroi::network::{roi_spec, Network};
use leafroi::train::{evaluate, split_dataset, train_roi_stage, EvalMode, Schedule, TrainConfig};

fn main() -> leafroi::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let ds = gen_dataset(&GenConfig {
        size: 64,
        counts: [12, 12, 16],
        ..GenConfig::default()
    })?;
    let cfg = TrainConfig {
        roi: Schedule {
            epochs: 15,
            learning_rate: 0.02,
        },
        ..TrainConfig::default()
    };
    let split = split_dataset(&ds, 0.5, cfg.seed)?;
    let (train, test) = (ds.subset(&split.train), ds.subset(&split.test));
    let mut roi = Network::init(roi_spec(), 1)?;
    train_roi_stage(&mut roi, &train, &cfg)?;
    let report = evaluate(&roi, &test, EvalMode::Segmentation)?;
    let (acc, iou) = (report.pixel_accuracy.unwrap(), report.iou.unwrap());
    for (c, name) in ["background", "leaf", "spot"].iter().enumerate() {
        println!(
            "{name:<10} pixel acc {:>6.3}  IoU {:>6.3}",
            acc.per_class[c].unwrap_or(f64::NAN),
            iou.per_class[c].unwrap_or(f64::NAN)
        );
    }
    println!("mean       pixel acc {:>6.3}  IoU {:>6.3}", acc.mean.unwrap(), iou.mean.unwrap());
    Ok(())
}
