use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SIDE: usize = 16;

fn cgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cgan"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_csv(dir: &Path, name: &str, labels: &[u8]) -> PathBuf {
    let mut s = String::from("emotion,pixels\n");
    for (i, l) in labels.iter().enumerate() {
        let px: Vec<String> = (0..SIDE * SIDE)
            .map(|j| ((i * 31 + j * 7) % 256).to_string())
            .collect();
        s.push_str(&format!("{l},{}\n", px.join(" ")));
    }
    let path = dir.join(name);
    fs::write(&path, s).unwrap();
    path
}

fn scaled<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend(["--latent", "8", "--base-filters", "2", "--image-size", "16"]);
    v
}

/// Trains a one-epoch scaled run and returns its directory.
fn trained(dir: &TempDir) -> PathBuf {
    let labels: Vec<u8> = (0..20).map(|i| (i % 7) as u8).collect();
    let data = write_csv(dir.path(), "train.csv", &labels);
    let run = dir.path().join("run");
    let o = cgan(&scaled(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--epochs",
        "1",
        "--batch",
        "8",
    ]));
    assert!(o.status.success(), "{}", stderr(&o));
    run
}

fn ckpt(run: &Path, kind: &str) -> String {
    run.join("checkpoints")
        .join(format!("{kind}_final.ckpt"))
        .to_str()
        .unwrap()
        .to_string()
}

#[test]
fn train_130_rows_one_epoch() {
    let dir = TempDir::new().unwrap();
    let labels: Vec<u8> = (0..130).map(|i| (i % 7) as u8).collect();
    let data = write_csv(dir.path(), "fer.csv", &labels);
    let run = dir.path().join("run1");
    let o = cgan(&scaled(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--epochs",
        "1",
        "--batch",
        "64",
    ]));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("(3 steps)"));

    let losses = fs::read_to_string(run.join("losses.csv")).unwrap();
    let rows: Vec<&str> = losses.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "epoch,g_loss,d_loss,seconds");
    assert_eq!(rows.len(), 2);
    assert!(rows[1].starts_with("1,"));

    let steps = fs::read_to_string(run.join("steps.csv")).unwrap();
    assert_eq!(steps.lines().count(), 4);

    let samples: Vec<String> = fs::read_dir(run.join("samples"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(samples.len(), 28);
    assert!(samples.contains(&"epoch1_class6_3.pgm".to_string()));
    let pgm = fs::read(run.join("samples/epoch1_class0_0.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n16 16\n255\n"));
    assert!(run.join("checkpoints/generator_final.ckpt").exists());
    assert!(run.join("checkpoints/discriminator_final.ckpt").exists());
}

#[test]
fn header_echoes_flags_verbatim() {
    let dir = TempDir::new().unwrap();
    let data = write_csv(dir.path(), "d.csv", &[0, 1, 2, 3]);
    let run = dir.path().join("run");
    let o = cgan(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--epochs",
        "300",
        "--batch",
        "64",
        "--lr",
        "0.0002",
        "--latent",
        "2",
        "--base-filters",
        "1",
        "--image-size",
        "16",
        "--set",
        "sample_grid=0",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let losses = fs::read_to_string(run.join("losses.csv")).unwrap();
    for line in [
        "# epochs=300",
        "# batch_size=64",
        "# lr=0.0002",
        "# shuffle=chacha8-fisher-yates",
    ] {
        assert!(losses.lines().any(|l| l == line), "missing {line}");
    }
    assert_eq!(losses.lines().filter(|l| !l.starts_with('#')).count(), 301);
    let config = fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(config.contains("lr=0.0002\n"));
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = TempDir::new().unwrap();
    let data = write_csv(dir.path(), "d.csv", &[0, 1, 2, 3]);
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# small run\nepochs=5\nseed=3\nsample_grid=0\nlatent_dim=2\nbase_filters=1\nimage_size=16\n").unwrap();
    let run = dir.path().join("run");
    let o = cgan(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--epochs",
        "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let config = fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(config.contains("epochs=2\n"));
    assert!(config.contains("seed=3\n"));
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = TempDir::new().unwrap();
    let data = write_csv(dir.path(), "d.csv", &[0, 1]);
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "epochs=1\nlearning_rate=0.1\n").unwrap();
    let o = cgan(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rate"));
}

#[test]
fn malformed_data_exits_3() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "emotion,pixels\n9,1 2 3\n").unwrap();
    let o = cgan(&scaled(&[
        "train",
        "--data",
        bad.to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]));
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("row 2"));
}

#[test]
fn generate_writes_requested_images() {
    let dir = TempDir::new().unwrap();
    let run = trained(&dir);
    let gen = ckpt(&run, "generator");
    let out_a = dir.path().join("a");
    let o = cgan(&[
        "generate",
        "--checkpoint",
        &gen,
        "--class",
        "3",
        "--count",
        "4",
        "--out",
        out_a.to_str().unwrap(),
        "--seed",
        "5",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut names: Vec<String> = fs::read_dir(&out_a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "class3_0.pgm",
            "class3_1.pgm",
            "class3_2.pgm",
            "class3_3.pgm"
        ]
    );

    let out_b = dir.path().join("b");
    let o = cgan(&[
        "generate",
        "--checkpoint",
        &gen,
        "--class",
        "3",
        "--count",
        "4",
        "--out",
        out_b.to_str().unwrap(),
        "--seed",
        "5",
    ]);
    assert!(o.status.success());
    for n in &names {
        assert_eq!(
            fs::read(out_a.join(n)).unwrap(),
            fs::read(out_b.join(n)).unwrap()
        );
    }

    let out_all = dir.path().join("all");
    let o = cgan(&[
        "generate",
        "--checkpoint",
        &gen,
        "--class",
        "all",
        "--count",
        "2",
        "--out",
        out_all.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(fs::read_dir(&out_all).unwrap().count(), 14);
}

#[test]
fn generate_rejects_bad_class_and_wrong_checkpoint() {
    let dir = TempDir::new().unwrap();
    let run = trained(&dir);
    let out = dir.path().join("x");
    let o = cgan(&[
        "generate",
        "--checkpoint",
        &ckpt(&run, "generator"),
        "--class",
        "7",
        "--count",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = cgan(&[
        "generate",
        "--checkpoint",
        &ckpt(&run, "discriminator"),
        "--class",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("generator"));
}

#[test]
fn augment_zero_threshold_balances() {
    let dir = TempDir::new().unwrap();
    let run = trained(&dir);
    let data = write_csv(dir.path(), "imb.csv", &[0, 0, 0, 1, 2, 3, 3, 4, 5, 6]);
    let out = dir.path().join("bal.cgds");
    let o = cgan(&[
        "augment",
        "--data",
        data.to_str().unwrap(),
        "--gen",
        &ckpt(&run, "generator"),
        "--disc",
        &ckpt(&run, "discriminator"),
        "--out",
        out.to_str().unwrap(),
        "--tau",
        "0",
        "--policy",
        "match-max",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("acceptance rate 1.0000"), "{text}");
    assert!(text.contains("wrote 21 rows (10 real, 11 synthetic)"));
    let manifest = fs::read_to_string(dir.path().join("bal.cgds.manifest")).unwrap();
    assert!(manifest.contains("synthetic_total=11\n"));
    assert!(manifest.contains("sha256:"));

    let inspect = cgan(&["inspect", "--data", out.to_str().unwrap()]);
    assert!(inspect.status.success());
    for c in 0..7 {
        assert!(stdout(&inspect)
            .lines()
            .any(|l| l.starts_with(&format!("{c} ")) && l.ends_with(" 3")));
    }
}

#[test]
fn augment_missing_discriminator_exits_3() {
    let dir = TempDir::new().unwrap();
    let run = trained(&dir);
    let data = write_csv(dir.path(), "d.csv", &[0, 1]);
    let o = cgan(&[
        "augment",
        "--data",
        data.to_str().unwrap(),
        "--gen",
        &ckpt(&run, "generator"),
        "--disc",
        dir.path().join("nope.ckpt").to_str().unwrap(),
        "--out",
        dir.path().join("o.cgds").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("nope.ckpt"));
}

#[test]
fn inspect_reports_counts() {
    let dir = TempDir::new().unwrap();
    let data = write_csv(dir.path(), "d.csv", &[3, 3, 1, 0, 3]);
    let o = cgan(&["inspect", "--data", data.to_str().unwrap(), "--side", "16"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("3 Happy 3"));
    assert!(text.contains("1 Disgust 1"));
    assert!(text.contains("total 5"));
}

#[test]
fn inspect_empty_file_exits_3() {
    let dir = TempDir::new().unwrap();
    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "emotion,pixels\n").unwrap();
    let o = cgan(&["inspect", "--data", empty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    fs::write(&empty, "").unwrap();
    assert_eq!(
        cgan(&["inspect", "--data", empty.to_str().unwrap()])
            .status
            .code(),
        Some(3)
    );
}

#[test]
fn gradcheck_passes() {
    let o = cgan(&["gradcheck"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));
}
