//! Dataset directories: `images/*.ppm`, `masks/*.pgm` and `manifest.txt`.
//!
//! Each manifest line is `images/<stem>.ppm,<class>`; the mask of a sample is
//! `masks/<stem>.pgm`.

use std::fs;
use std::path::Path;

use super::netpbm::{read_pgm, read_ppm, write_pgm, write_ppm};
use crate::data::{Dataset, Sample, NUM_CLASSES};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.txt";

pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("masks"))?;
    let mut manifest = String::new();
    for s in &ds.samples {
        let stem = s.file_stem();
        write_ppm(&dir.join(format!("images/{stem}.ppm")), &s.image)?;
        write_pgm(&dir.join(format!("masks/{stem}.pgm")), &s.mask)?;
        manifest.push_str(&format!("images/{stem}.ppm,{}\n", s.label));
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

/// Reads a dataset written by [`write_dataset`]; samples keep manifest order.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |what: &str| Error::Data(format!("{MANIFEST} line {}: {what}", i + 1));
        let (image, class) = line.trim().split_once(',').ok_or_else(|| bad("expected path,class"))?;
        let label: usize = class.parse().map_err(|_| bad("class is not a number"))?;
        if label >= NUM_CLASSES {
            return Err(bad("class out of range"));
        }
        let stem = image
            .strip_prefix("images/")
            .and_then(|s| s.strip_suffix(".ppm"))
            .ok_or_else(|| bad("image path must be images/<stem>.ppm"))?;
        let index = stem
            .split_once('_')
            .and_then(|(_, n)| n.parse().ok())
            .unwrap_or(samples.len());
        let image = read_ppm(&dir.join(image))?;
        let mask = read_pgm(&dir.join(format!("masks/{stem}.pgm")))?;
        if image.shape()[1..] != [mask.height(), mask.width()] {
            return Err(bad("image and mask extents differ"));
        }
        samples.push(Sample {
            image,
            mask,
            label,
            index,
        });
    }
    if samples.is_empty() {
        return Err(Error::Data(format!("{} lists no samples", path.display())));
    }
    Ok(Dataset { samples })
}
