//! End-to-end checks of the `rtseg` binary: command wiring, exit codes,
//! determinism of outputs.

use std::path::Path;
use std::process::{Command, Output};

fn rtseg() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rtseg"))
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const TINY_CFG: &str = "\
seed = 0
encoder.patch_size = 8
encoder.embed_dim = 16
encoder.depth = 1
encoder.heads = 2
encoder.mlp_ratio = 2
fusion.d_llm = 24
fusion.depth = 1
fusion.heads = 2
fusion.max_len = 64
decoder.d_dec = 16
scene.height = 16
scene.width = 16
train.steps = 4
";

fn write_cfg(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.cfg");
    std::fs::write(&path, TINY_CFG).unwrap();
    path
}

fn gen_data(dir: &Path, cfg: &Path, count: usize, ratio: f64) -> std::path::PathBuf {
    let data = dir.join("data");
    let out = rtseg()
        .args(["gen-data", "--config"])
        .arg(cfg)
        .arg("--out")
        .arg(&data)
        .args(["--count", &count.to_string(), "--split-ratio", &ratio.to_string()])
        .output()
        .unwrap();
    ok(&out);
    data
}

#[test]
fn gen_data_layout_and_split_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path());
    let data = gen_data(dir.path(), &cfg, 10, 0.8);
    let train = std::fs::read_to_string(data.join("train.txt")).unwrap();
    let val = std::fs::read_to_string(data.join("val.txt")).unwrap();
    assert_eq!(train.lines().count(), 8);
    assert_eq!(val.lines().count(), 2);
    for sub in ["rgb", "thermal", "labels"] {
        assert_eq!(std::fs::read_dir(data.join(sub)).unwrap().count(), 10);
    }
}

#[test]
fn gen_data_is_seed_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path());
    let a = gen_data(&dir.path().join("a"), &cfg, 4, 0.5);
    let b = gen_data(&dir.path().join("b"), &cfg, 4, 0.5);
    for name in std::fs::read_to_string(a.join("train.txt")).unwrap().lines() {
        let la = std::fs::read(a.join("labels").join(format!("{name}.png"))).unwrap();
        let lb = std::fs::read(b.join("labels").join(format!("{name}.png"))).unwrap();
        assert_eq!(la, lb, "label rasters must be byte-identical");
    }
}

#[test]
fn gen_data_zero_count_succeeds_with_empty_splits() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path());
    let data = gen_data(dir.path(), &cfg, 0, 0.8);
    assert_eq!(std::fs::read_to_string(data.join("train.txt")).unwrap(), "");
    assert_eq!(std::fs::read_to_string(data.join("val.txt")).unwrap(), "");
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    // usage error → 1
    let out = rtseg().args(["train", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    // config error → 1
    let bad_cfg = dir.path().join("bad.cfg");
    std::fs::write(&bad_cfg, "no_such_key = 1\n").unwrap();
    let out = rtseg()
        .args(["gen-data", "--config"])
        .arg(&bad_cfg)
        .arg("--out")
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    // data error → 2
    let cfg = write_cfg(dir.path());
    let out = rtseg()
        .args(["train", "--config"])
        .arg(&cfg)
        .args(["--data", "/nonexistent-rtseg-data"])
        .arg("--out")
        .arg(dir.path().join("m.ckpt"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_reruns_are_bit_identical_and_eval_reports_parse() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path());
    let data = gen_data(dir.path(), &cfg, 6, 0.67);

    let train_once = |tag: &str| -> (Vec<u8>, Vec<u8>) {
        let ckpt = dir.path().join(format!("{tag}.ckpt"));
        let out = rtseg()
            .args(["train", "--config"])
            .arg(&cfg)
            .arg("--data")
            .arg(&data)
            .arg("--out")
            .arg(&ckpt)
            .output()
            .unwrap();
        ok(&out);
        let csv = dir.path().join(format!("{tag}_loss.csv"));
        (std::fs::read(&ckpt).unwrap(), std::fs::read(csv).unwrap())
    };
    let (ckpt_a, csv_a) = train_once("a");
    let (ckpt_b, csv_b) = train_once("b");
    assert_eq!(csv_a, csv_b, "fixed-seed loss CSVs must be identical");
    assert_eq!(ckpt_a, ckpt_b, "fixed-seed checkpoints must be identical");
    assert!(String::from_utf8_lossy(&csv_a).starts_with("step,loss\n"));

    // eval with oracle predictions must report mIoU 100.0
    let report_dir = dir.path().join("report");
    let out = rtseg()
        .args(["eval", "--checkpoint"])
        .arg(dir.path().join("a.ckpt"))
        .arg("--data")
        .arg(&data)
        .args(["--split", "val", "--oracle-pred", "--counts", "--out"])
        .arg(&report_dir)
        .output()
        .unwrap();
    ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("mIoU (All9) = 1.0000"), "{stdout}");
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(report_dir.join("report.json")).unwrap())
            .unwrap();
    for name in rtseg::data::CLASS_NAMES {
        assert!(json["per_class_iou"].get(name).is_some(), "missing {name}");
    }
    assert!(report_dir.join("report.txt").is_file());
    assert!(report_dir.join("report.csv").is_file());

    // ablation flags run cleanly
    let out = rtseg()
        .args(["eval", "--checkpoint"])
        .arg(dir.path().join("a.ckpt"))
        .arg("--data")
        .arg(&data)
        .args(["--split", "val", "--zero-thermal", "--miou-rule", "fg8", "--out"])
        .arg(dir.path().join("report_zt"))
        .output()
        .unwrap();
    ok(&out);
}

#[test]
fn predict_writes_valid_label_rasters() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path());
    let data = gen_data(dir.path(), &cfg, 3, 0.67);
    let ckpt = dir.path().join("m.ckpt");
    let out = rtseg()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&ckpt)
        .args(["--steps", "2"])
        .output()
        .unwrap();
    ok(&out);

    let name = std::fs::read_to_string(data.join("val.txt"))
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    let pred = dir.path().join("pred.png");
    let run_predict = |out_path: &Path| {
        let out = rtseg()
            .args(["predict", "--checkpoint"])
            .arg(&ckpt)
            .arg("--rgb")
            .arg(data.join("rgb").join(format!("{name}.png")))
            .arg("--thermal")
            .arg(data.join("thermal").join(format!("{name}.png")))
            .arg("--out")
            .arg(out_path)
            .output()
            .unwrap();
        ok(&out);
    };
    run_predict(&pred);
    let img = image::open(&pred).unwrap().to_luma8();
    assert_eq!((img.height(), img.width()), (16, 16));
    assert!(img.pixels().all(|p| p.0[0] < 9), "labels stay in 0..9");

    // identical invocation → identical bytes
    let pred2 = dir.path().join("pred2.png");
    run_predict(&pred2);
    assert_eq!(std::fs::read(&pred).unwrap(), std::fs::read(&pred2).unwrap());

    // mismatched raster sizes → data error (exit 2)
    let out = rtseg()
        .args(["predict", "--checkpoint"])
        .arg(&ckpt)
        .arg("--rgb")
        .arg(data.join("rgb").join(format!("{name}.png")))
        .arg("--thermal")
        .arg(data.join("labels").join(format!("{name}.png"))) // wrong but same size; use a custom small png instead
        .arg("--out")
        .arg(dir.path().join("x.png"))
        .output()
        .unwrap();
    // labels png is same size so this actually runs; build a real mismatch
    let _ = out;
    let small = dir.path().join("small.png");
    image::GrayImage::new(8, 8).save(&small).unwrap();
    let out = rtseg()
        .args(["predict", "--checkpoint"])
        .arg(&ckpt)
        .arg("--rgb")
        .arg(data.join("rgb").join(format!("{name}.png")))
        .arg("--thermal")
        .arg(&small)
        .arg("--out")
        .arg(dir.path().join("x.png"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
