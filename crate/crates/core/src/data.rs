//! Seeded procedural leaf scenes with exact ROI masks.
//!
//! Each scene layers a value-noise background, branches and distractor
//! leaves under one primary superellipse leaf. Diseased classes add spots
//! inside the primary leaf. Labeling follows the dataset convention:
//! distractor leaves are background, and the primary leaf of a normal
//! sample is background too, so a normal mask is all zeros.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::metrics::LabelMask;
use crate::tensor::Tensor;

pub const NUM_CLASSES: usize = 3;
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["normal", "blotch", "spot"];

pub const LABEL_BACKGROUND: u8 = 0;
pub const LABEL_LEAF: u8 = 1;
pub const LABEL_SPOT: u8 = 2;

pub type Rgb = [f64; 3];

pub const LEAF_PALETTE: [Rgb; 4] = [
    [0.20, 0.50, 0.15],
    [0.28, 0.58, 0.20],
    [0.35, 0.62, 0.22],
    [0.24, 0.45, 0.18],
];
pub const BACKGROUND_PALETTE: [Rgb; 4] = [
    [0.40, 0.32, 0.22],
    [0.45, 0.45, 0.42],
    [0.15, 0.30, 0.12],
    [0.30, 0.24, 0.16],
];
/// Blotch lesions before blending toward the leaf greens.
pub const BLOTCH_PALETTE: [Rgb; 3] = [[0.30, 0.26, 0.10], [0.36, 0.30, 0.12], [0.26, 0.22, 0.10]];
pub const SPOT_PALETTE: [Rgb; 3] = [[0.58, 0.33, 0.15], [0.66, 0.40, 0.20], [0.50, 0.26, 0.12]];
const BRANCH_COLOR: Rgb = [0.33, 0.24, 0.15];

/// Generator knobs.
#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub size: usize,
    pub counts: [usize; NUM_CLASSES],
    /// Mean number of distractor leaves per scene.
    pub clutter: f64,
    /// Probability that a distractor leaf carries lesions of its own.
    pub distractor_spot_prob: f64,
    /// How far blotch colors are blended toward the leaf greens, in `[0, 1]`.
    pub blotch_overlap: f64,
    pub spot_count: (usize, usize),
    /// Lesion radius range in pixels for blotch and spot classes.
    pub blotch_radius: (f64, f64),
    pub spot_radius: (f64, f64),
    /// Standard deviation of additive pixel noise.
    pub pixel_noise: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            size: 96,
            counts: [118, 120, 166],
            clutter: 3.0,
            distractor_spot_prob: 0.3,
            blotch_overlap: 0.5,
            spot_count: (2, 12),
            blotch_radius: (2.0, 5.0),
            spot_radius: (1.5, 4.0),
            pixel_noise: 0.02,
            seed: 20190101,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || !self.size.is_multiple_of(16) {
            return Err(Error::Config(format!("image size {} is not a multiple of 16", self.size)));
        }
        if self.counts.contains(&0) {
            return Err(Error::Config(format!("per-class counts must be positive, got {:?}", self.counts)));
        }
        if !(0.0..=1.0).contains(&self.blotch_overlap) || !(0.0..=1.0).contains(&self.distractor_spot_prob) {
            return Err(Error::Config("overlap and probabilities must lie in [0, 1]".into()));
        }
        if self.clutter < 0.0 || self.pixel_noise < 0.0 {
            return Err(Error::Config("clutter and pixel noise must be non-negative".into()));
        }
        let (lo, hi) = self.spot_count;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("invalid spot count range {lo}..={hi}")));
        }
        for (lo, hi) in [self.blotch_radius, self.spot_radius] {
            if !(lo > 0.0 && lo <= hi) {
                return Err(Error::Config(format!("invalid lesion radius range {lo}..{hi}")));
            }
        }
        Ok(())
    }

    /// Blotch colors after blending toward the matching leaf green.
    pub fn blotch_palette(&self) -> Vec<Rgb> {
        BLOTCH_PALETTE
            .iter()
            .enumerate()
            .map(|(i, c)| lerp(*c, LEAF_PALETTE[i % LEAF_PALETTE.len()], self.blotch_overlap))
            .collect()
    }

    /// Mean RGB distance from the (blotch, spot) lesion palettes to the leaf palette.
    pub fn palette_distances(&self) -> (f64, f64) {
        (
            mean_palette_distance(&self.blotch_palette(), &LEAF_PALETTE),
            mean_palette_distance(&SPOT_PALETTE, &LEAF_PALETTE),
        )
    }
}

fn lerp(a: Rgb, b: Rgb, t: f64) -> Rgb {
    [0, 1, 2].map(|i| a[i] + (b[i] - a[i]) * t)
}

fn distance(a: Rgb, b: Rgb) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt()
}

/// Mean Euclidean distance over all color pairs.
pub fn mean_palette_distance(a: &[Rgb], b: &[Rgb]) -> f64 {
    let total: f64 = a.iter().flat_map(|x| b.iter().map(move |y| distance(*x, *y))).sum();
    total / (a.len() * b.len()) as f64
}

/// One labeled scene.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `3×H×W`, values in `[0, 1]`.
    pub image: Tensor,
    pub mask: LabelMask,
    pub label: usize,
    /// Position within its class; together with `label` it names the sample.
    pub index: usize,
}

impl Sample {
    pub fn file_stem(&self) -> String {
        format!("c{}_{:04}", self.label, self.index)
    }
}

/// A generated scene plus the primary leaf's rendered support, which the
/// mask only exposes for diseased samples.
pub struct Scene {
    pub sample: Sample,
    pub leaf_support: Vec<bool>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut c = [0; NUM_CLASSES];
        for s in &self.samples {
            c[s.label] += 1;
        }
        c
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

/// Stacks the images of `samples` into an `N×3×H×W` batch.
pub fn batch_images<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Result<Tensor> {
    let images: Vec<&Tensor> = samples.into_iter().map(|s| &s.image).collect();
    Tensor::stack(&images)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of sample `index` of `class`: `splitmix(splitmix(master) ^ (class << 32 | index))`.
///
/// Independent of generation order, so any subset can be regenerated alone.
pub fn sample_seed(master: u64, class: usize, index: usize) -> u64 {
    splitmix64(splitmix64(master) ^ ((class as u64) << 32 | index as u64))
}

/// Smooth lattice noise in `[0, 1]`.
struct ValueNoise {
    cells: usize,
    lattice: Vec<f64>,
}

impl ValueNoise {
    fn new(rng: &mut impl Rng, cells: usize) -> Self {
        let n = cells + 1;
        ValueNoise {
            cells,
            lattice: (0..n * n).map(|_| rng.random::<f64>()).collect(),
        }
    }

    /// `u, v` in `[0, 1]`.
    fn at(&self, u: f64, v: f64) -> f64 {
        let (x, y) = (u * self.cells as f64, v * self.cells as f64);
        let (x0, y0) = ((x.floor() as usize).min(self.cells - 1), (y.floor() as usize).min(self.cells - 1));
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let (tx, ty) = (smooth(x - x0 as f64), smooth(y - y0 as f64));
        let n = self.cells + 1;
        let l = |i: usize, j: usize| self.lattice[j * n + i];
        let top = l(x0, y0) + (l(x0 + 1, y0) - l(x0, y0)) * tx;
        let bottom = l(x0, y0 + 1) + (l(x0 + 1, y0 + 1) - l(x0, y0 + 1)) * tx;
        top + (bottom - top) * ty
    }
}

/// Rotated superellipse `|u/a|^p + |v/b|^p ≤ 1`.
#[derive(Clone, Copy)]
struct LeafShape {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    p: f64,
    cos: f64,
    sin: f64,
}

impl LeafShape {
    fn random(rng: &mut impl Rng, cx: f64, cy: f64, a: f64, b: f64) -> Self {
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        LeafShape {
            cx,
            cy,
            a,
            b,
            p: rng.random_range(1.6..2.6),
            cos: angle.cos(),
            sin: angle.sin(),
        }
    }

    fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.cx, y - self.cy);
        (dx * self.cos + dy * self.sin, -dx * self.sin + dy * self.cos)
    }

    fn level(&self, x: f64, y: f64) -> f64 {
        let (u, v) = self.local(x, y);
        (u / self.a).abs().powf(self.p) + (v / self.b).abs().powf(self.p)
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        self.level(x, y) <= 1.0
    }

    /// Midrib plus slanted side veins.
    fn on_vein(&self, x: f64, y: f64) -> bool {
        let (u, v) = self.local(x, y);
        if v.abs() < 0.6 && u.abs() < self.a * 0.9 {
            return true;
        }
        let spacing = self.a / 3.5;
        let slanted = u - 0.9 * v.abs();
        let phase = (slanted / spacing).rem_euclid(1.0);
        v.abs() < self.b * 0.8 && !(0.07..=0.93).contains(&phase)
    }
}

struct Canvas {
    size: usize,
    rgb: Vec<f64>,
    mask: Vec<u8>,
}

impl Canvas {
    fn set(&mut self, x: usize, y: usize, c: Rgb) {
        let plane = self.size * self.size;
        for (ch, v) in c.iter().enumerate() {
            self.rgb[ch * plane + y * self.size + x] = *v;
        }
    }

    fn get(&self, x: usize, y: usize) -> Rgb {
        let plane = self.size * self.size;
        [0, 1, 2].map(|ch| self.rgb[ch * plane + y * self.size + x])
    }

    fn centers(&self) -> impl Iterator<Item = (usize, usize, f64, f64)> + '_ {
        let s = self.size;
        (0..s).flat_map(move |y| (0..s).map(move |x| (x, y, x as f64 + 0.5, y as f64 + 0.5)))
    }
}

fn jitter(rng: &mut impl Rng, c: Rgb, amount: f64) -> Rgb {
    c.map(|v| (v + rng.random_range(-amount..amount)).clamp(0.0, 1.0))
}

fn pick(rng: &mut impl Rng, palette: &[Rgb]) -> Rgb {
    palette[rng.random_range(0..palette.len())]
}

fn paint_leaf(canvas: &mut Canvas, rng: &mut impl Rng, shape: &LeafShape, base: Rgb) -> Vec<bool> {
    let shade = ValueNoise::new(rng, 4);
    let s = canvas.size as f64;
    let vein = base.map(|v| (v * 1.25 + 0.05).min(1.0));
    let mut support = vec![false; canvas.size * canvas.size];
    for (x, y, fx, fy) in canvas.centers().collect::<Vec<_>>() {
        if !shape.contains(fx, fy) {
            continue;
        }
        support[y * canvas.size + x] = true;
        let color = if shape.on_vein(fx, fy) {
            vein
        } else {
            let k = 0.85 + 0.3 * shade.at(fx / s, fy / s);
            base.map(|v| (v * k).min(1.0))
        };
        canvas.set(x, y, color);
    }
    support
}

/// Irregular lesions whose centers lie inside `support`; returns the painted pixels.
fn paint_lesions(
    canvas: &mut Canvas,
    rng: &mut impl Rng,
    support: &[bool],
    count: usize,
    radius: (f64, f64),
    palette: &[Rgb],
) -> Vec<bool> {
    let n = canvas.size;
    let inside: Vec<usize> = (0..n * n).filter(|&i| support[i]).collect();
    let mut painted = vec![false; n * n];
    if inside.is_empty() {
        return painted;
    }
    for _ in 0..count {
        let c = inside[rng.random_range(0..inside.len())];
        let (cx, cy) = ((c % n) as f64 + 0.5, (c / n) as f64 + 0.5);
        let r0 = rng.random_range(radius.0..=radius.1);
        let lobes = rng.random_range(3..6) as f64;
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let picked = pick(rng, palette);
        let color = jitter(rng, picked, 0.03);
        let core = color.map(|v| v * 0.8);
        let reach = (r0 * 1.3).ceil() as i64;
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let (x, y) = (c as i64 % n as i64 + dx, c as i64 / n as i64 + dy);
                if x < 0 || y < 0 || x >= n as i64 || y >= n as i64 {
                    continue;
                }
                let (x, y) = (x as usize, y as usize);
                if !support[y * n + x] {
                    continue;
                }
                let (ox, oy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let rho = (ox * ox + oy * oy).sqrt();
                let edge = r0 * (1.0 + 0.25 * (lobes * oy.atan2(ox) + phase).sin());
                if rho <= edge {
                    canvas.set(x, y, if rho < 0.4 * edge { core } else { color });
                    painted[y * n + x] = true;
                }
            }
        }
    }
    painted
}

fn paint_branch(canvas: &mut Canvas, rng: &mut impl Rng) {
    let s = canvas.size as f64;
    let (x0, y0) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let width = rng.random_range(1.0..2.5);
    let color = jitter(rng, BRANCH_COLOR, 0.05);
    for (x, y, fx, fy) in canvas.centers().collect::<Vec<_>>() {
        // distance from the infinite line through (x0, y0)
        let d = ((fx - x0) * dy - (fy - y0) * dx).abs();
        if d < width {
            canvas.set(x, y, color);
        }
    }
}

/// Renders one scene of `class` from `seed`.
pub fn gen_scene(seed: u64, class: usize, cfg: &GenConfig) -> Result<Sample> {
    Ok(gen_scene_detailed(seed, class, 0, cfg)?.sample)
}

/// [`gen_scene`] plus the primary leaf's support.
pub fn gen_scene_detailed(seed: u64, class: usize, index: usize, cfg: &GenConfig) -> Result<Scene> {
    if class >= NUM_CLASSES {
        return Err(Error::Contract(format!("class {class} outside [0, {NUM_CLASSES})")));
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.size;
    let s = n as f64;
    let mut canvas = Canvas {
        size: n,
        rgb: vec![0.0; 3 * n * n],
        mask: vec![LABEL_BACKGROUND; n * n],
    };

    // background: two noise octaves blending a pair of ground colors
    let (ga, gb) = (pick(&mut rng, &BACKGROUND_PALETTE), pick(&mut rng, &BACKGROUND_PALETTE));
    let coarse = ValueNoise::new(&mut rng, 3);
    let fine = ValueNoise::new(&mut rng, 12);
    for (x, y, fx, fy) in canvas.centers().collect::<Vec<_>>() {
        let t = coarse.at(fx / s, fy / s);
        let grain = 0.85 + 0.3 * fine.at(fx / s, fy / s);
        canvas.set(x, y, lerp(ga, gb, t).map(|v| (v * grain).min(1.0)));
    }
    for _ in 0..rng.random_range(0..=2) {
        paint_branch(&mut canvas, &mut rng);
    }

    let blotch = cfg.blotch_palette();
    let distractors = rng.random_range(0.0..=2.0 * cfg.clutter).round() as usize;
    for _ in 0..distractors {
        let (cx, cy) = (rng.random_range(-0.1..1.1) * s, rng.random_range(-0.1..1.1) * s);
        let a = rng.random_range(0.14..0.26) * s;
        let b = a * rng.random_range(0.45..0.7);
        let shape = LeafShape::random(&mut rng, cx, cy, a, b);
        let picked = pick(&mut rng, &LEAF_PALETTE);
        let base = jitter(&mut rng, picked, 0.04);
        let support = paint_leaf(&mut canvas, &mut rng, &shape, base);
        if rng.random_bool(cfg.distractor_spot_prob) {
            let (palette, radius) = if rng.random_bool(0.5) {
                (&blotch[..], cfg.blotch_radius)
            } else {
                (&SPOT_PALETTE[..], cfg.spot_radius)
            };
            let count = rng.random_range(1..=cfg.spot_count.0.max(3));
            paint_lesions(&mut canvas, &mut rng, &support, count, radius, palette);
        }
    }

    let (cx, cy) = (
        s * (0.5 + rng.random_range(-0.08..0.08)),
        s * (0.5 + rng.random_range(-0.08..0.08)),
    );
    let a = rng.random_range(0.30..0.42) * s;
    let b = a * rng.random_range(0.5..0.7);
    let shape = LeafShape::random(&mut rng, cx, cy, a, b);
    let picked = pick(&mut rng, &LEAF_PALETTE);
        let base = jitter(&mut rng, picked, 0.04);
    let leaf_support = paint_leaf(&mut canvas, &mut rng, &shape, base);

    if class != 0 {
        for (m, &inside) in canvas.mask.iter_mut().zip(&leaf_support) {
            if inside {
                *m = LABEL_LEAF;
            }
        }
        let (palette, radius) = if class == 1 {
            (&blotch[..], cfg.blotch_radius)
        } else {
            (&SPOT_PALETTE[..], cfg.spot_radius)
        };
        let count = rng.random_range(cfg.spot_count.0..=cfg.spot_count.1);
        let spots = paint_lesions(&mut canvas, &mut rng, &leaf_support, count, radius, palette);
        for (m, &hit) in canvas.mask.iter_mut().zip(&spots) {
            if hit {
                *m = LABEL_SPOT;
            }
        }
    }

    if cfg.pixel_noise > 0.0 {
        let noise = Normal::new(0.0, cfg.pixel_noise).map_err(|e| Error::Config(e.to_string()))?;
        for (x, y, _, _) in canvas.centers().collect::<Vec<_>>() {
            let c = canvas.get(x, y);
            canvas.set(x, y, c.map(|v| (v + noise.sample(&mut rng)).clamp(0.0, 1.0)));
        }
    }

    Ok(Scene {
        sample: Sample {
            image: Tensor::new(vec![3, n, n], canvas.rgb)?,
            mask: LabelMask::new(n, n, canvas.mask)?,
            label: class,
            index,
        },
        leaf_support,
    })
}

/// Sample `index` of `class` under `cfg`.
pub fn gen_sample(cfg: &GenConfig, class: usize, index: usize) -> Result<Sample> {
    Ok(gen_scene_detailed(sample_seed(cfg.seed, class, index), class, index, cfg)?.sample)
}

/// All samples of one class.
pub fn gen_class(cfg: &GenConfig, class: usize) -> Result<Vec<Sample>> {
    cfg.validate()?;
    (0..cfg.counts[class]).map(|i| gen_sample(cfg, class, i)).collect()
}

/// The full dataset, ordered by class then index.
pub fn gen_dataset(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut samples = Vec::with_capacity(cfg.counts.iter().sum());
    for class in 0..NUM_CLASSES {
        samples.extend(gen_class(cfg, class)?);
    }
    Ok(Dataset { samples })
}
