//! Generates a small synthetic leaf dataset and writes it as PPM images, PGM masks
//! and a manifest.
//!
//! Usage: `cargo run --release --example synthetic_dataset [OUT_DIR]`

use leafroi::data::{gen_dataset, GenConfig, CLASS_NAMES, LABEL_LEAF, LABEL_SPOT};
use leafroi::io::dataset::write_dataset;

fn main() -> leafroi::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "synthetic-leaves".into());
    let cfg = GenConfig {
        counts: [4, 4, 4],
        ..GenConfig::default()
    };
    let ds = gen_dataset(&cfg)?;
    let (blotch_gap, spot_gap) = cfg.palette_distances();
    println!("palette distance to leaf green: blotch {blotch_gap:.3}, spot {spot_gap:.3}");
    for s in &ds.samples {
        let n = s.mask.data().len() as f64;
        let leaf = s.mask.data().iter().filter(|&&v| v == LABEL_LEAF).count() as f64;
        let spot = s.mask.data().iter().filter(|&&v| v == LABEL_SPOT).count() as f64;
        println!(
            "{}  {:<7} leaf {:>5.1}%  spot {:>4.1}%",
            s.file_stem(),
            CLASS_NAMES[s.label],
            100.0 * leaf / n,
            100.0 * spot / n
        );
    }
    write_dataset(std::path::Path::new(&out), &ds)?;
    println!("wrote {} samples to {out}", ds.len());
    Ok(())
}
