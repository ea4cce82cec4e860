//! End-to-end runs of the binary: train -> eval -> robustness on a tiny
//! corpus, plus config handling, residual dumps, and exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dualstream"))
}

fn run(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = bin();
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn dualstream")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).to_string()
}

fn write_ppm(path: &Path, side: usize, mut pixel: impl FnMut(usize, usize, usize) -> f64) {
    let mut bytes = format!("P6\n{side} {side}\n255\n").into_bytes();
    for y in 0..side {
        for x in 0..side {
            for c in 0..3 {
                bytes.push((pixel(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    std::fs::write(path, bytes).unwrap();
}

/// Tiny corpus: 4 noise "generated" + 4 smooth "photo" images, with
/// train/val/test rows in the manifest.
fn write_corpus(dir: &Path) -> std::path::PathBuf {
    use rand::{Rng, SeedableRng};
    let mut manifest = String::from("path,label,split\n");
    for i in 0..4 {
        let name = format!("gen_{i}.ppm");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(100 + i);
        write_ppm(&dir.join(&name), 32, |_, _, _| rng.gen_range(0.0..1.0));
        let split = if i < 2 { "train" } else if i == 2 { "val" } else { "test" };
        manifest.push_str(&format!("{name},1,{split}\n"));
    }
    for i in 0..4 {
        let name = format!("photo_{i}.ppm");
        write_ppm(&dir.join(&name), 32, |_, y, x| {
            0.3 + 0.3 * (x as f64 / 32.0) + 0.2 * (y as f64 / 32.0)
        });
        let split = if i < 2 { "train" } else if i == 2 { "val" } else { "test" };
        manifest.push_str(&format!("{name},0,{split}\n"));
    }
    let path = dir.join("manifest.csv");
    std::fs::write(&path, manifest).unwrap();
    path
}

#[test]
fn version_prints_build_metadata() {
    let out = run(&["version"], &[]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("dualstream 0.1.0"));
}

#[test]
fn init_config_writes_a_parseable_template() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let out = run(&["init-config", "--out", cfg.to_str().unwrap()], &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&cfg).unwrap();
    assert!(text.contains("[model]") && text.contains("[train]"));
    assert!(text.contains('#'), "template should carry comments");
}

#[test]
fn train_eval_robustness_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_corpus(dir.path());
    let out_dir = dir.path().join("run");

    let out = run(
        &[
            "train",
            "--manifest",
            manifest.to_str().unwrap(),
            "--out-dir",
            out_dir.to_str().unwrap(),
            "--side",
            "32",
            "--epochs",
            "2",
            "--seed",
            "7",
        ],
        &[],
    );
    assert!(out.status.success(), "train failed: {}", stderr(&out));
    assert!(out_dir.join("resolved-config.toml").is_file());
    assert!(out_dir.join("train.log").is_file());
    assert!(out_dir.join("last.ckpt").is_file());
    assert!(out_dir.join("best.ckpt").is_file());
    let log = std::fs::read_to_string(out_dir.join("train.log")).unwrap();
    assert_eq!(log.lines().count(), 2);
    assert!(log.contains("epoch=0") && log.contains("val_acc="), "{log}");

    let ckpt = out_dir.join("best.ckpt");
    let eval_dir = dir.path().join("eval");
    let out = run(
        &[
            "eval",
            "--manifest",
            manifest.to_str().unwrap(),
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--out-dir",
            eval_dir.to_str().unwrap(),
            "--split",
            "test",
        ],
        &[],
    );
    assert!(out.status.success(), "eval failed: {}", stderr(&out));
    assert!(stdout(&out).contains("TPR"));
    let kv = std::fs::read_to_string(eval_dir.join("eval-report.kv")).unwrap();
    assert!(kv.contains("acc="), "{kv}");

    // identical invocation reproduces the report byte for byte
    let eval_dir2 = dir.path().join("eval2");
    let out = run(
        &[
            "eval",
            "--manifest",
            manifest.to_str().unwrap(),
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--out-dir",
            eval_dir2.to_str().unwrap(),
            "--split",
            "test",
        ],
        &[],
    );
    assert!(out.status.success());
    assert_eq!(
        std::fs::read(eval_dir.join("eval-report.kv")).unwrap(),
        std::fs::read(eval_dir2.join("eval-report.kv")).unwrap()
    );

    let rob_dir = dir.path().join("rob");
    let out = run(
        &[
            "robustness",
            "--manifest",
            manifest.to_str().unwrap(),
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--out-dir",
            rob_dir.to_str().unwrap(),
            "--split",
            "test",
            "--master-seed",
            "5",
        ],
        &[],
    );
    assert!(out.status.success(), "robustness failed: {}", stderr(&out));
    let text = stdout(&out);
    for kind in [
        "chromaticity",
        "brightness",
        "contrast",
        "sharpness",
        "rotation",
        "gaussian_blur",
        "mean_blur",
        "average",
    ] {
        assert!(text.contains(kind), "missing {kind} in:\n{text}");
    }
    assert!(rob_dir.join("robustness-report.kv").is_file());
}

#[test]
fn out_dir_env_reroots_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_corpus(dir.path());
    let out = run(
        &[
            "train",
            "--manifest",
            manifest.to_str().unwrap(),
            "--out-dir",
            "nested/run",
            "--side",
            "32",
            "--epochs",
            "0",
        ],
        &[("DUALSTREAM_OUT_DIR", dir.path().to_str().unwrap())],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("nested/run/resolved-config.toml").is_file());
}

#[test]
fn dump_residuals_of_constant_image_are_midgray() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("flat.ppm");
    write_ppm(&img, 16, |_, _, _| 0.5);
    let maps = dir.path().join("maps");
    let out = run(
        &[
            "dump-residuals",
            "--image",
            img.to_str().unwrap(),
            "--out-dir",
            maps.to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let files: Vec<_> = std::fs::read_dir(&maps).unwrap().collect();
    assert_eq!(files.len(), 90);
    // every map of a constant image min-max normalizes to mid-gray
    // (maps are the 12x12 interior of a 16x16 image after ring cropping)
    for entry in files {
        let bytes = std::fs::read(entry.unwrap().path()).unwrap();
        let payload = &bytes[bytes.len() - 144..];
        assert!(payload.iter().all(|&b| b == 128));
    }
}

#[test]
fn dump_residuals_kernel_subset_by_name_and_index() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("x.ppm");
    write_ppm(&img, 16, |c, y, x| ((c + y + x) % 7) as f64 / 7.0);
    let maps = dir.path().join("maps");
    let out = run(
        &[
            "dump-residuals",
            "--image",
            img.to_str().unwrap(),
            "--out-dir",
            maps.to_str().unwrap(),
            "--kernels",
            "first_order_e,12",
        ],
        &[],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(std::fs::read_dir(&maps).unwrap().count(), 6); // 2 kernels x 3 colors
}

#[test]
fn bad_usage_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("broken.toml");
    std::fs::write(&cfg, "mode = \"f33\"\n").unwrap();
    let out = run(&["train", "--config", cfg.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));

    // config violation: heads must divide embed_width
    let cfg2 = dir.path().join("bad_heads.toml");
    std::fs::write(&cfg2, "[model]\nheads = 7\n").unwrap();
    let out = run(&["train", "--config", cfg2.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}

#[test]
fn missing_data_exits_two() {
    let out = run(
        &["train", "--manifest", "/nonexistent/manifest.csv", "--out-dir", "/tmp/unused-out"],
        &[],
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(!stderr(&out).is_empty());

    let out = run(
        &[
            "eval",
            "--manifest",
            "/nonexistent/manifest.csv",
            "--checkpoint",
            "/nonexistent.ckpt",
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_prints_family_table_and_exits_zero() {
    let out = run(&["gradcheck", "--seed", "11"], &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    for family in [
        "conv2d",
        "linear",
        "batchnorm_train",
        "layernorm",
        "softmax",
        "maxpool",
        "srm",
        "encoder",
        "bce",
        "full_model",
    ] {
        assert!(text.contains(family), "missing {family} in:\n{text}");
    }
    assert!(text.contains("all families within"));
}
