use std::fs;
use std::path::Path;

use leafroi::cli::{run_cli, EXIT_DATA, EXIT_OK, EXIT_USAGE};
use leafroi::io::report::read_metrics;

const TINY: &str = "\
# small and fast
gen.size = 32
gen.counts = 4, 4, 4
train.roi_epochs = 1
train.cls_epochs = 1
train.e2e_epochs = 1
baseline.gmm_components = 2
baseline.gmm_iterations = 3
baseline.svm_epochs = 20
baseline.thresholds = 0.2, 0.4
baseline.scales = 1, 2
";

fn cli(dir: &Path, args: &[&str]) -> i32 {
    let mut argv = vec!["leafroi".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    argv.extend([
        "--config".into(),
        dir.join("run.cfg").display().to_string(),
        "--data-dir".into(),
        dir.join("data").display().to_string(),
        "--out".into(),
        dir.join("out").display().to_string(),
    ]);
    run_cli(argv)
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.cfg"), TINY).unwrap();
    dir
}

#[test]
fn scripted_sequence_writes_one_row_per_stage() {
    let dir = setup();
    let d = dir.path();
    for args in [
        &["gen-data"][..],
        &["train-roi"],
        &["train-cls"],
        &["train-cls", "--plain"],
        &["train-e2e"],
        &["eval", "--checkpoint", d.join("out/fused.ckpt").to_str().unwrap()],
    ] {
        assert_eq!(cli(d, args), EXIT_OK, "{args:?}");
    }
    let manifest = fs::read_to_string(d.join("data/manifest.txt")).unwrap();
    assert_eq!(manifest.lines().count(), 12);
    assert_eq!(fs::read_dir(d.join("data/images")).unwrap().count(), 12);
    assert_eq!(fs::read_dir(d.join("data/masks")).unwrap().count(), 12);

    let rows = read_metrics(&d.join("out/metrics.csv")).unwrap();
    let methods: Vec<&str> = rows.iter().map(|r| r.method.as_str()).collect();
    assert_eq!(methods, ["roi", "cls", "plain", "fused", "eval:fused"]);
    assert!(rows[0].mean_iou.is_some() && rows[0].accuracy.is_none());
    assert!(rows[1..].iter().all(|r| r.accuracy.is_some() && r.mean_iou.is_none()));
    // evaluating the stored fused network reproduces the training-time row
    assert_eq!(rows[3].accuracy, rows[4].accuracy);

    let losses = fs::read_to_string(d.join("out/loss.csv")).unwrap();
    let stages: Vec<&str> = losses.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(stages, ["roi", "cls", "plain", "plain-ft", "e2e"]);

    for method in ["clustering", "mdfep", "bilinear"] {
        assert_eq!(cli(d, &["baseline", method]), EXIT_OK, "{method}");
    }
    assert_eq!(cli(d, &["render-roi", "--count", "3"]), EXIT_OK);
    assert_eq!(fs::read_dir(d.join("out/roi_masks")).unwrap().count(), 3);
    let montage = fs::read(d.join("out/roi_montage.ppm")).unwrap();
    assert!(montage.starts_with(b"P6\n98 98\n255\n"));

    assert_eq!(cli(d, &["report"]), EXIT_OK);
    let table = fs::read_to_string(d.join("out/table.txt")).unwrap();
    assert_eq!(table.lines().count(), 1 + 8);
    assert!(table.contains("bilinear"));
}

#[test]
fn same_arguments_give_identical_files() {
    let (a, b) = (setup(), setup());
    for dir in [&a, &b] {
        for args in [&["gen-data"][..], &["train-roi"]] {
            assert_eq!(cli(dir.path(), args), EXIT_OK);
        }
    }
    for file in ["data/manifest.txt", "data/images/c1_0002.ppm", "out/roi.ckpt", "out/metrics.csv", "out/loss.csv"] {
        assert_eq!(fs::read(a.path().join(file)).unwrap(), fs::read(b.path().join(file)).unwrap(), "{file}");
    }
}

#[test]
fn error_paths_map_to_exit_codes() {
    let dir = setup();
    let d = dir.path();
    // nothing generated yet
    assert_eq!(cli(d, &["train-roi"]), EXIT_DATA);
    assert_eq!(cli(d, &["eval", "--checkpoint", d.join("missing.ckpt").to_str().unwrap()]), EXIT_DATA);
    assert_eq!(cli(d, &["gen-data"]), EXIT_OK);
    // later stages need earlier checkpoints
    assert_eq!(cli(d, &["train-e2e"]), EXIT_DATA);
    assert_eq!(cli(d, &["baseline", "bilinear"]), EXIT_DATA);
    // a corrupt mask is a data error
    let mask = d.join("data/masks/c0_0000.pgm");
    let mut bytes = fs::read(&mask).unwrap();
    let last = bytes.len() - 1;
    bytes[last] = 7;
    fs::write(&mask, bytes).unwrap();
    assert_eq!(cli(d, &["train-roi"]), EXIT_DATA);

    fs::write(d.join("run.cfg"), "train.no_such_key = 1\n").unwrap();
    assert_eq!(cli(d, &["gen-data"]), EXIT_USAGE);
    assert_eq!(run_cli(["leafroi"]), EXIT_USAGE);
}

#[test]
fn seed_flag_overrides_the_configuration() {
    let (a, b) = (setup(), setup());
    assert_eq!(cli(a.path(), &["gen-data"]), EXIT_OK);
    assert_eq!(cli(b.path(), &["gen-data", "--seed", "5"]), EXIT_OK);
    let img = "data/images/c2_0001.ppm";
    assert_ne!(fs::read(a.path().join(img)).unwrap(), fs::read(b.path().join(img)).unwrap());
}
