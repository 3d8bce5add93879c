//! The three training stages plus the plain comparison classifier on a reduced
//! benchmark, ending with the fused-versus-plain comparison.

use leafroi::data::{gen_dataset, GenConfig};
use leafroi::train::{run_pipeline, split_dataset, TrainConfig};

fn main() -> leafroi::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let ds = gen_dataset(&GenConfig {
        size: 64,
        counts: [48, 48, 64],
        ..GenConfig::default()
    })?;
    let cfg = TrainConfig::default();
    let split = split_dataset(&ds, 0.5, cfg.seed)?;
    let out = run_pipeline(&ds.subset(&split.train), &ds.subset(&split.test), &cfg)?;
    println!(
        "ROI mean pixel acc {:.3}, mean IoU {:.3}",
        out.segmentation.mean_pixel_accuracy().unwrap(),
        out.segmentation.mean_iou().unwrap()
    );
    println!("fused accuracy {:.3}", out.fused_report.accuracy.unwrap());
    println!("plain accuracy {:.3}", out.plain_report.accuracy.unwrap());
    if let Some(cm) = &out.fused_report.confusion {
        for c in 0..cm.classes() {
            println!("fused confusion row {c}: {:?}", cm.row(c));
        }
    }
    Ok(())
}
