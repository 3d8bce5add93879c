//! Saves a fused network to a checkpoint, reloads it and compares forward outputs.

use leafroi::data::{batch_images, gen_dataset, GenConfig};
use leafroi::io::checkpoint;
use leafroi::network::{classifier_spec, fuse, roi_spec, Network};

fn main() -> leafroi::Result<()> {
    let roi = Network::init(roi_spec(), 1)?;
    let cls = Network::init(classifier_spec(6, 3, 96)?, 2)?;
    let fused = fuse(&roi, &cls)?;
    let dir = std::env::temp_dir().join("leafroi-checkpoint-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("fused.ckpt");
    checkpoint::save(&fused, &path)?;
    let back = checkpoint::load(&path)?;
    let ds = gen_dataset(&GenConfig {
        counts: [1, 1, 1],
        ..GenConfig::default()
    })?;
    let x = batch_images(&ds.samples)?;
    let (p, q) = (fused.infer(&x)?, back.infer(&x)?);
    println!(
        "{} parameters, {} bytes on disk, outputs bit-identical: {}",
        back.param_count(),
        std::fs::metadata(&path)?.len(),
        p.data() == q.data()
    );
    let (roi2, cls2) = back.split_fused()?;
    println!("split back into {} + {} parameters", roi2.param_count(), cls2.param_count());
    Ok(())
}
