//! Command-line front end.
//!
//! Every training command reads the dataset from `--data-dir`, splits it with the
//! configured ratio and seed, writes a checkpoint into `--out`, appends one row to
//! `<out>/metrics.csv` and per-epoch losses to `<out>/loss.csv`.

use std::ffi::OsString;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::baselines::{run_baseline, BaselineNets, Method};
use crate::data::{Dataset, Sample, LABEL_LEAF, LABEL_SPOT};
use crate::error::{Error, Result};
use crate::io::checkpoint;
use crate::io::dataset::{read_dataset, write_dataset};
use crate::io::netpbm::{write_pgm, write_ppm};
use crate::io::report::{append_metrics, format_table, read_metrics, MetricsRow};
use crate::io::RunConfig;
use crate::metrics::LabelMask;
use crate::network::{classifier_spec, fuse, roi_spec, Network, ROI_CLASSES};
use crate::tensor::Tensor;
use crate::train::{
    evaluate, init_seeds, predict_masks, split_dataset, train_cls_stage, train_end_to_end, train_plain_classifier,
    train_roi_stage, EvalMode, MetricsReport, TrainLog,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_TRAINING: i32 = 3;

pub const ROI_CHECKPOINT: &str = "roi.ckpt";
pub const CLS_CHECKPOINT: &str = "cls.ckpt";
pub const FUSED_CHECKPOINT: &str = "fused.ckpt";
pub const PLAIN_CHECKPOINT: &str = "plain.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const LOSS_FILE: &str = "loss.csv";

#[derive(Parser, Debug)]
#[command(name = "leafroi", version, about = "ROI-aware leaf-disease classification on synthetic scenes")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// key = value configuration file; absent keys keep their defaults
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// overrides every seed in the configuration
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// dataset directory (written by gen-data, read by everything else)
    #[arg(long, global = true, default_value = "data")]
    pub data_dir: PathBuf,
    /// directory for checkpoints, metrics and renderings
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic dataset with its manifest
    GenData,
    /// Stage A: train the ROI network on ground-truth masks
    TrainRoi,
    /// Stage B: train the 6-channel classifier on images plus frozen ROI maps
    TrainCls {
        /// train the 3-channel comparison classifier instead
        #[arg(long)]
        plain: bool,
    },
    /// Stage C: fine-tune the fused network end to end
    TrainE2e,
    /// Evaluate a checkpoint on the test split
    Eval {
        /// checkpoint to evaluate
        #[arg(long)]
        checkpoint: PathBuf,
        /// method name for the metrics row (defaults to the file stem)
        #[arg(long)]
        name: Option<String>,
    },
    /// Run a comparison baseline: clustering, mdfep or bilinear
    Baseline { method: Method },
    /// Aggregate metrics CSV files into one table
    Report {
        /// CSV files to aggregate (defaults to <out>/metrics.csv)
        files: Vec<PathBuf>,
    },
    /// Write predicted ROI masks and a ground-truth/prediction montage
    RenderRoi {
        /// number of test samples to render
        #[arg(long, default_value_t = 8)]
        count: usize,
    },
}

/// Exit code of an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::Training { .. } | Error::NonFinite { .. } => EXIT_TRAINING,
        _ => EXIT_DATA,
    }
}

/// Parses `argv` (program name first) and runs the command.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.set_seed(seed);
    }
    cfg.validate()?;
    match &cli.command {
        Command::GenData => gen_data(g, &cfg),
        Command::TrainRoi => train_roi(g, &cfg),
        Command::TrainCls { plain: false } => train_cls(g, &cfg),
        Command::TrainCls { plain: true } => train_plain(g, &cfg),
        Command::TrainE2e => train_e2e(g, &cfg),
        Command::Eval { checkpoint, name } => eval(g, &cfg, checkpoint, name.as_deref()),
        Command::Baseline { method } => baseline(g, &cfg, *method),
        Command::Report { files } => report(g, files),
        Command::RenderRoi { count } => render_roi(g, &cfg, *count),
    }
}

fn gen_data(g: &Global, cfg: &RunConfig) -> Result<()> {
    let ds = crate::data::gen_dataset(&cfg.gen)?;
    write_dataset(&g.data_dir, &ds)?;
    println!("wrote {} samples {:?} to {}", ds.len(), ds.class_counts(), g.data_dir.display());
    Ok(())
}

fn load_split(g: &Global, cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let ds = read_dataset(&g.data_dir)?;
    let split = split_dataset(&ds, cfg.train.split_ratio, cfg.train.seed)?;
    Ok((ds.subset(&split.train), ds.subset(&split.test)))
}

fn out_path(g: &Global, file: &str) -> Result<PathBuf> {
    fs::create_dir_all(&g.out)?;
    Ok(g.out.join(file))
}

fn load_from_out(g: &Global, file: &str, needed_by: &str) -> Result<Network> {
    let path = g.out.join(file);
    if !path.exists() {
        return Err(Error::Data(format!("{needed_by} needs {}; run the earlier stage first", path.display())));
    }
    checkpoint::load(&path)
}

fn append_losses(g: &Global, logs: &[TrainLog]) -> Result<()> {
    let path = out_path(g, LOSS_FILE)?;
    let fresh = fs::metadata(&path).map(|m| m.len() == 0).unwrap_or(true);
    let mut text = String::new();
    if fresh {
        text.push_str("stage,epoch,loss\n");
    }
    for log in logs {
        for (i, l) in log.epoch_losses.iter().enumerate() {
            text.push_str(&format!("{},{},{l:.10}\n", log.stage, i + 1));
        }
    }
    OpenOptions::new().create(true).append(true).open(&path)?.write_all(text.as_bytes())?;
    Ok(())
}

fn record(g: &Global, cfg: &RunConfig, method: &str, report: &MetricsReport) -> Result<()> {
    let row = MetricsRow::from_report(method, cfg.train.seed, report);
    println!("{}", row.to_line());
    append_metrics(&out_path(g, METRICS_FILE)?, &[row])
}

fn image_size(ds: &Dataset) -> Result<usize> {
    let s = ds.samples.first().ok_or_else(|| Error::Data("empty dataset".into()))?;
    if s.mask.height() != s.mask.width() {
        return Err(Error::Data("classifiers need square images".into()));
    }
    Ok(s.mask.height())
}

fn train_roi(g: &Global, cfg: &RunConfig) -> Result<()> {
    let (train, test) = load_split(g, cfg)?;
    let [seed, _, _] = init_seeds(cfg.train.seed);
    let mut roi = Network::init(roi_spec(), seed)?;
    let log = train_roi_stage(&mut roi, &train, &cfg.train)?;
    checkpoint::save(&roi, &out_path(g, ROI_CHECKPOINT)?)?;
    append_losses(g, &[log])?;
    record(g, cfg, "roi", &evaluate(&roi, &test, EvalMode::Segmentation)?)
}

fn train_cls(g: &Global, cfg: &RunConfig) -> Result<()> {
    let (train, test) = load_split(g, cfg)?;
    let roi = load_from_out(g, ROI_CHECKPOINT, "train-cls")?;
    let [_, seed, _] = init_seeds(cfg.train.seed);
    let mut cls = Network::init(classifier_spec(6, 3, image_size(&train)?)?, seed)?;
    let log = train_cls_stage(&mut cls, &roi, &train, &cfg.train)?;
    checkpoint::save(&cls, &out_path(g, CLS_CHECKPOINT)?)?;
    append_losses(g, &[log])?;
    record(g, cfg, "cls", &evaluate(&fuse(&roi, &cls)?, &test, EvalMode::Classification)?)
}

fn train_plain(g: &Global, cfg: &RunConfig) -> Result<()> {
    let (train, test) = load_split(g, cfg)?;
    let [_, _, seed] = init_seeds(cfg.train.seed);
    let mut plain = Network::init(classifier_spec(3, 3, image_size(&train)?)?, seed)?;
    let logs = train_plain_classifier(&mut plain, &train, &cfg.train)?;
    checkpoint::save(&plain, &out_path(g, PLAIN_CHECKPOINT)?)?;
    append_losses(g, &logs)?;
    record(g, cfg, "plain", &evaluate(&plain, &test, EvalMode::Classification)?)
}

fn train_e2e(g: &Global, cfg: &RunConfig) -> Result<()> {
    let (train, test) = load_split(g, cfg)?;
    let roi = load_from_out(g, ROI_CHECKPOINT, "train-e2e")?;
    let cls = load_from_out(g, CLS_CHECKPOINT, "train-e2e")?;
    let mut fused = fuse(&roi, &cls)?;
    let log = train_end_to_end(&mut fused, &train, &cfg.train)?;
    checkpoint::save(&fused, &out_path(g, FUSED_CHECKPOINT)?)?;
    append_losses(g, &[log])?;
    record(g, cfg, "fused", &evaluate(&fused, &test, EvalMode::Classification)?)
}

fn eval(g: &Global, cfg: &RunConfig, path: &Path, name: Option<&str>) -> Result<()> {
    let net = checkpoint::load(path)?;
    let (_, test) = load_split(g, cfg)?;
    let report = match (net.spec().input_size, net.spec().input_channels) {
        (None, _) => evaluate(&net, &test, EvalMode::Segmentation)?,
        (Some(_), 3) => evaluate(&net, &test, EvalMode::Classification)?,
        (Some(_), _) => {
            let roi = load_from_out(g, ROI_CHECKPOINT, "evaluating a 6-channel classifier")?;
            evaluate(&fuse(&roi, &net)?, &test, EvalMode::Classification)?
        }
    };
    if let Some(cm) = &report.confusion {
        for c in 0..cm.classes() {
            info!("confusion row {c}: {:?}", cm.row(c));
        }
    }
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned());
    let method = name.map(str::to_string).or(stem).unwrap_or_else(|| "eval".into());
    record(g, cfg, &format!("eval:{method}"), &report)
}

fn baseline(g: &Global, cfg: &RunConfig, method: Method) -> Result<()> {
    let (train, test) = load_split(g, cfg)?;
    let report = match method {
        Method::Clustering => run_baseline(method, &train, &test, BaselineNets::default(), &cfg.baseline)?,
        Method::Mdfep => {
            let plain = load_from_out(g, PLAIN_CHECKPOINT, "the mdfep baseline")?;
            let nets = BaselineNets {
                plain: Some(&plain),
                ..Default::default()
            };
            run_baseline(method, &train, &test, nets, &cfg.baseline)?
        }
        Method::Bilinear => {
            let roi = load_from_out(g, ROI_CHECKPOINT, "the bilinear baseline")?;
            let cls = load_from_out(g, CLS_CHECKPOINT, "the bilinear baseline")?;
            let nets = BaselineNets {
                stage_b: Some((&cls, &roi)),
                ..Default::default()
            };
            run_baseline(method, &train, &test, nets, &cfg.baseline)?
        }
    };
    record(g, cfg, method.name(), &report)
}

fn report(g: &Global, files: &[PathBuf]) -> Result<()> {
    let default = [g.out.join(METRICS_FILE)];
    let files = if files.is_empty() { &default[..] } else { files };
    let mut rows = Vec::new();
    for f in files {
        rows.extend(read_metrics(f)?);
    }
    let table = format_table(&rows);
    print!("{table}");
    fs::write(out_path(g, "table.txt")?, table)?;
    Ok(())
}

const LABEL_COLORS: [[f64; 3]; ROI_CLASSES] = [[0.08, 0.08, 0.08], [0.25, 0.70, 0.25], [0.95, 0.45, 0.10]];

fn colorize(mask: &LabelMask) -> [Vec<f64>; 3] {
    let mut planes = [vec![], vec![], vec![]];
    for &v in mask.data() {
        let c = LABEL_COLORS[v.min(LABEL_SPOT) as usize];
        for (p, x) in planes.iter_mut().zip(c) {
            p.push(x);
        }
    }
    planes
}

/// Rows of image | ground truth | prediction, separated by a one-pixel white gutter.
pub fn roi_montage(samples: &[Sample], predicted: &[LabelMask]) -> Result<Tensor> {
    let first = samples.first().ok_or_else(|| Error::Data("nothing to render".into()))?;
    let (h, w) = (first.mask.height(), first.mask.width());
    let (mh, mw) = (samples.len() * (h + 1) - 1, 3 * w + 2);
    let mut out = vec![1.0; 3 * mh * mw];
    for (row, (s, pred)) in samples.iter().zip(predicted).enumerate() {
        if (s.mask.height(), s.mask.width()) != (h, w) {
            return Err(Error::Data("montage samples must share one extent".into()));
        }
        let img = s.image.data();
        let panels = [
            [&img[..h * w], &img[h * w..2 * h * w], &img[2 * h * w..]].map(<[f64]>::to_vec),
            colorize(&s.mask),
            colorize(pred),
        ];
        for (col, panel) in panels.iter().enumerate() {
            for (ch, plane) in panel.iter().enumerate() {
                for y in 0..h {
                    let dst = (ch * mh + row * (h + 1) + y) * mw + col * (w + 1);
                    out[dst..dst + w].copy_from_slice(&plane[y * w..(y + 1) * w]);
                }
            }
        }
    }
    Tensor::new(vec![3, mh, mw], out)
}

fn render_roi(g: &Global, cfg: &RunConfig, count: usize) -> Result<()> {
    let roi = load_from_out(g, ROI_CHECKPOINT, "render-roi")?;
    let (_, test) = load_split(g, cfg)?;
    let samples = &test.samples[..count.min(test.len())];
    let masks = predict_masks(&roi, samples)?;
    let dir = out_path(g, "roi_masks")?;
    fs::create_dir_all(&dir)?;
    for (s, m) in samples.iter().zip(&masks) {
        write_pgm(&dir.join(format!("{}.pgm", s.file_stem())), m)?;
    }
    write_ppm(&out_path(g, "roi_montage.ppm")?, &roi_montage(samples, &masks)?)?;
    let leaf = masks.iter().flat_map(|m| m.data()).filter(|&&v| v == LABEL_LEAF).count();
    println!("rendered {} masks ({leaf} leaf pixels) to {}", masks.len(), g.out.display());
    Ok(())
}
