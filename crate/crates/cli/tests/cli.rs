use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mdrnn"))
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn fixture(name: &str) -> String {
    fixtures().join(name).to_string_lossy().into_owned()
}

fn train_tiny(out: &Path, workers: &str) -> Output {
    run(&[
        "--workers",
        workers,
        "train",
        &fixture("tiny.conf"),
        "--set",
        &format!("output_dir={}", out.display()),
    ])
}

/// Width and height from a PNG's IHDR chunk.
fn png_size(path: &Path) -> (u32, u32) {
    let b = std::fs::read(path).unwrap();
    assert_eq!(&b[1..4], b"PNG");
    let be = |s: &[u8]| u32::from_be_bytes(s.try_into().unwrap());
    (be(&b[16..20]), be(&b[20..24]))
}

#[test]
fn tiny_fixture_trains_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_tiny(dir.path(), "1");
    assert!(out.status.success(), "{}", stderr(&out));
    for f in [
        "best.ckpt",
        "final.ckpt",
        "train.log",
        "validation_report.txt",
    ] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let log = std::fs::read_to_string(dir.path().join("train.log")).unwrap();
    assert_eq!(log.lines().count(), 4);
    assert!(stdout(&out).contains("pixel_error_rate = "));
}

#[test]
fn training_is_bitwise_reproducible_at_any_worker_count() {
    // Same output_dir each time: it is recorded in the checkpoint metadata.
    let dir = tempfile::tempdir().unwrap();
    let files = [
        "best.ckpt",
        "final.ckpt",
        "train.log",
        "validation_report.txt",
    ];
    let snapshot = |workers: &str| {
        assert!(train_tiny(dir.path(), workers).status.success());
        files.map(|f| std::fs::read(dir.path().join(f)).unwrap())
    };
    let a = snapshot("1");
    let b = snapshot("1");
    let c = snapshot("3");
    for (i, f) in files.iter().enumerate() {
        assert_eq!(a[i], b[i], "{f}");
        assert_eq!(a[i], c[i], "{f} with 3 workers");
    }
}

#[test]
fn missing_data_path_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "train",
        &fixture("tiny.conf"),
        "--set",
        "train_images=does-not-exist.idx",
        "--set",
        &format!("output_dir={}", dir.path().display()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("does-not-exist.idx"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn bad_config_key_is_a_usage_error() {
    let out = run(&["train", &fixture("tiny.conf"), "--set", "colour=blue"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("unknown key"));
}

#[test]
fn fixture_checkpoint_reproduces_golden_report() {
    let out = run(&[
        "eval",
        "--checkpoint",
        &fixture("tiny.ckpt"),
        "--images",
        &fixture("images-idx3-ubyte"),
        "--labels",
        &fixture("labels-idx1-ubyte"),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let golden = std::fs::read_to_string(fixtures().join("tiny_eval.txt")).unwrap();
    assert_eq!(stdout(&out), golden);
}

#[test]
fn eval_writes_optional_csvs_and_rejects_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("pred.csv");
    let conf = dir.path().join("conf.csv");
    let ok = run(&[
        "--workers",
        "2",
        "eval",
        "--checkpoint",
        &fixture("tiny.ckpt"),
        "--images",
        &fixture("images-idx3-ubyte"),
        "--labels",
        &fixture("labels-idx1-ubyte"),
        "--predictions",
        pred.to_str().unwrap(),
        "--confusion",
        conf.to_str().unwrap(),
    ]);
    assert!(ok.status.success(), "{}", stderr(&ok));
    assert_eq!(std::fs::read_to_string(&pred).unwrap().lines().count(), 13);
    assert_eq!(std::fs::read_to_string(&conf).unwrap().lines().count(), 12);

    let corrupt = dir.path().join("bad.ckpt");
    let mut bytes = std::fs::read(fixtures().join("tiny.ckpt")).unwrap();
    bytes.truncate(bytes.len() / 2);
    std::fs::write(&corrupt, bytes).unwrap();
    let out = run(&[
        "eval",
        "--checkpoint",
        corrupt.to_str().unwrap(),
        "--images",
        &fixture("images-idx3-ubyte"),
        "--labels",
        &fixture("labels-idx1-ubyte"),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("format error"));

    let mut versioned = std::fs::read(fixtures().join("tiny.ckpt")).unwrap();
    versioned[8] = 7;
    std::fs::write(&corrupt, versioned).unwrap();
    let out = run(&[
        "eval",
        "--checkpoint",
        corrupt.to_str().unwrap(),
        "--images",
        &fixture("images-idx3-ubyte"),
        "--labels",
        &fixture("labels-idx1-ubyte"),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("version 7"));

    let empty = run(&[
        "eval",
        "--checkpoint",
        &fixture("tiny.ckpt"),
        "--images",
        &fixture("images-idx3-ubyte"),
        "--labels",
        &fixture("labels-idx1-ubyte"),
        "--limit",
        "0",
    ]);
    assert_eq!(empty.status.code(), Some(2));
    assert!(stderr(&empty).contains("no evaluation data"));
}

#[test]
fn deform_identity_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture("images-idx3-ubyte");
    let p = |n: &str| dir.path().join(n).to_string_lossy().into_owned();
    let deform = |out: &str, alpha: &str, seed: &str| {
        run(&[
            "deform", "--input", &input, "--output", out, "--alpha", alpha, "--seed", seed,
        ])
    };
    assert!(deform(&p("zero"), "0", "1").status.success());
    assert_eq!(
        std::fs::read(p("zero")).unwrap(),
        std::fs::read(&input).unwrap()
    );
    assert!(deform(&p("a"), "34", "5").status.success());
    assert!(run(&[
        "--workers",
        "2",
        "deform",
        "--input",
        &input,
        "--output",
        &p("b"),
        "--seed",
        "5",
    ])
    .status
    .success());
    let a = std::fs::read(p("a")).unwrap();
    assert_eq!(a, std::fs::read(p("b")).unwrap());
    assert_ne!(a, std::fs::read(&input).unwrap());
    assert_eq!(a.len(), std::fs::read(&input).unwrap().len());

    let bad = run(&[
        "deform",
        "--input",
        &fixture("tiny.conf"),
        "--output",
        &p("c"),
    ]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(stderr(&bad).contains("parse error"));
}

#[test]
fn gradcheck_passes_and_negative_control_fails() {
    let ok = run(&["gradcheck"]);
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));
    let text = stdout(&ok);
    assert!(text.contains("shape=(2,2,2)"));
    assert!(text.contains("peephole"));
    assert!(text.contains("pass"));
    let bad = run(&["gradcheck", "--corrupt"]);
    assert_eq!(bad.status.code(), Some(3));
    assert!(stdout(&bad).contains("FAIL"));
}

#[test]
fn jacobian_raster_has_image_shape() {
    let dir = tempfile::tempdir().unwrap();
    let base = [
        "jacobian",
        "--checkpoint",
        &fixture("tiny.ckpt"),
        "--images",
        &fixture("images-idx3-ubyte"),
        "--index",
        "3",
        "--class",
        "0",
        "--output-dir",
        dir.path().to_str().unwrap(),
    ];
    let mut args = base.to_vec();
    args.extend(["--point", "14,9"]);
    let out = run(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    let png = dir.path().join("jacobian_i3_p14-9_k0.png");
    assert_eq!(png_size(&png), (28, 28));
    let side = std::fs::read_to_string(dir.path().join("jacobian_i3_p14-9_k0.txt")).unwrap();
    assert!(side.contains("focus = (14,9)"));

    let mut far = base.to_vec();
    far.extend(["--point", "28,0"]);
    let out = run(&far);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("outside"));
}

#[test]
fn inspect_preset_and_checkpoint() {
    let out = run(&["inspect", "--preset", "mnist"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("27511") && text.contains("delta"));
    let out = run(&["inspect", "--preset", "texture"]);
    assert!(stdout(&out).contains("43257"));

    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "inspect",
        "--checkpoint",
        &fixture("tiny.ckpt"),
        "--images",
        &fixture("images-idx3-ubyte"),
        "--units",
        "0:0,3:1",
        "--output-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("hidden = 2"));
    assert_eq!(png_size(&dir.path().join("unit_d3_u1.png")), (28, 28));
    assert_eq!(png_size(&dir.path().join("argmax.png")), (28, 28));
    let bad = run(&["inspect", "--preset", "imagenet"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn help_lists_flags_and_unknown_flags_fail() {
    for (cmd, flags) in [
        ("train", &["--set", "output_dir", "learning_rate"][..]),
        ("eval", &["--checkpoint", "--predictions", "--limit"][..]),
        ("deform", &["--sigma", "--alpha", "--seed"][..]),
        ("jacobian", &["--point", "--class", "--output-dir"][..]),
        ("inspect", &["--preset", "--units"][..]),
        ("gradcheck", &["--larger", "--corrupt", "--workers"][..]),
    ] {
        let out = run(&[cmd, "--help"]);
        assert_eq!(out.status.code(), Some(0));
        let text = stdout(&out);
        for f in flags {
            assert!(text.contains(f), "{cmd} --help lacks {f}");
        }
        let bad = run(&[cmd, "--no-such-flag"]);
        assert_eq!(bad.status.code(), Some(1));
    }
}
