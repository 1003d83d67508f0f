use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use hyperpix::imageio::{decode_image, encode_image};
use hyperpix::Image;

fn hyperpix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hyperpix"))
        .args(args)
        .env("HYPERPIX_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = hyperpix(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Stderr of a run that must fail.
fn fails(args: &[&str]) -> String {
    let out = hyperpix(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn pattern(h: usize, w: usize, phase: f32) -> Image {
    Image::from_fn(h, w, 3, |r, c, ch| {
        0.5 + 0.4 * ((r as f32 * 0.3 + c as f32 * 0.2 + ch as f32 + phase).sin())
    })
}

fn write_config(dir: &Path, steps: u64, seed: u64, checkpoint: &str) -> PathBuf {
    let data = dir.join("data");
    if !data.exists() {
        std::fs::create_dir(&data).unwrap();
        encode_image(&pattern(32, 32, 0.0), &data.join("a.png")).unwrap();
    }
    let path = dir.join(format!("{checkpoint}.cfg"));
    std::fs::write(
        &path,
        format!(
            "# tiny run\nlr = 0.0001\nbatch = 2\nsteps = {steps}\npatch = 16\nscales = 1, 2\nstride = 16\n\
             seed = {seed}\ndataset = data\ncheckpoint = {checkpoint}\n"
        ),
    )
    .unwrap();
    path
}

/// Working directory holding a briefly trained checkpoint and two inputs,
/// shared by every test in this file.
fn workspace() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(format!("cli-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        let config = write_config(&dir, 2, 1, "phi.ckpt");
        let stdout = ok(&["train", "--config", s(&config)]);
        assert!(stdout.contains("trained 2 steps"), "{stdout}");
        encode_image(&pattern(32, 32, 0.0), &dir.join("a.png")).unwrap();
        encode_image(&pattern(32, 32, 2.0), &dir.join("b.png")).unwrap();
        dir
    })
}

fn phi() -> String {
    workspace().join("phi.ckpt").to_str().unwrap().to_string()
}

fn input(name: &str) -> String {
    workspace().join(name).to_str().unwrap().to_string()
}

#[test]
fn upscale_doubles_a_png() {
    let out = tempfile::tempdir().unwrap();
    let target = out.path().join("up.png");
    ok(&["upscale", &input("a.png"), "--scale", "2", "--phi", &phi(), "--out", s(&target)]);
    assert_eq!(decode_image(&target).unwrap().dims(), (64, 64));

    let wide = out.path().join("wide.ppm");
    ok(&["upscale", &input("a.png"), "--scale", "2.5x1", "--phi", &phi(), "--out", s(&wide)]);
    assert_eq!(decode_image(&wide).unwrap().dims(), (32, 80));
}

#[test]
fn interpolate_writes_frames_and_manifest() {
    let out = tempfile::tempdir().unwrap();
    let dir = out.path().join("strip");
    ok(&["interpolate", &input("a.png"), &input("b.png"), "--phi", &phi(), "--steps", "11", "--out", s(&dir)]);
    let mut names: Vec<String> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names.len(), 12);
    assert_eq!(names.iter().filter(|n| n.ends_with(".png")).count(), 11);
    let manifest = std::fs::read_to_string(dir.join("manifest.txt")).unwrap();
    assert_eq!(manifest.lines().filter(|l| !l.starts_with('#')).count(), 11);

    let layered = out.path().join("layered");
    ok(&[
        "interpolate",
        &input("a.png"),
        &input("b.png"),
        "--phi",
        &phi(),
        "--steps",
        "3",
        "--mode",
        "layerwise:2",
        "--size",
        "24",
        "--out",
        s(&layered),
    ]);
    assert_eq!(decode_image(&layered.join("strip_000.png")).unwrap().dims(), (24, 24));
}

#[test]
fn evaluate_writes_rows_and_summaries() {
    let out = tempfile::tempdir().unwrap();
    let set = out.path().join("pair");
    std::fs::create_dir(&set).unwrap();
    encode_image(&pattern(36, 36, 0.5), &set.join("one.png")).unwrap();
    encode_image(&pattern(40, 28, 1.5), &set.join("two.png")).unwrap();
    let table = out.path().join("scores.tsv");
    let stdout = ok(&["evaluate", s(&set), "--phi", &phi(), "--scales", "2,3,4", "--out", s(&table)]);
    assert!(stdout.contains("bicubic") && stdout.contains("x3"), "{stdout}");
    let tsv = std::fs::read_to_string(&table).unwrap();
    let rows: Vec<&str> = tsv.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 14);
    assert_eq!(rows.iter().filter(|r| r.contains("\tmean\tall\t")).count(), 2);

    let ybord = out.path().join("y.tsv");
    ok(&["evaluate", s(&set), "--phi", &phi(), "--scales", "2", "--convention", "y-border", "--out", s(&ybord)]);
    assert!(std::fs::read_to_string(&ybord).unwrap().starts_with("# convention: y-border"));
}

#[test]
fn encode_render_and_baseline() {
    let out = tempfile::tempdir().unwrap();
    let (t1, t2) = (out.path().join("a.theta"), out.path().join("b.theta"));
    ok(&["encode", &input("a.png"), "--phi", &phi(), "--out", s(&t1)]);
    ok(&["encode", &input("a.png"), "--phi", &phi(), "--out", s(&t2)]);
    assert_eq!(std::fs::read(&t1).unwrap(), std::fs::read(&t2).unwrap());

    let img = out.path().join("r.png");
    ok(&["render", s(&t1), "--rows", "7", "--cols", "13", "--scale", "2", "--out", s(&img)]);
    assert_eq!(decode_image(&img).unwrap().dims(), (7, 13));

    let base = out.path().join("b.png");
    ok(&["baseline", &input("a.png"), "--scale", "3", "--out", s(&base)]);
    assert_eq!(decode_image(&base).unwrap().dims(), (96, 96));
}

#[test]
fn training_is_reproducible_from_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["x.ckpt", "y.ckpt"] {
        let cfg = write_config(dir.path(), 2, 7, name);
        ok(&["train", "--config", s(&cfg), "--steps", "1"]);
    }
    let (x, y) = (dir.path().join("x.ckpt"), dir.path().join("y.ckpt"));
    assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
}

#[test]
fn errors_are_one_categorized_line_and_leave_no_output() {
    let out = tempfile::tempdir().unwrap();
    let target = out.path().join("up.png");
    let missing = out.path().join("missing.png");

    let err = fails(&["upscale", s(&missing), "--scale", "2", "--phi", &phi(), "--out", s(&target)]);
    assert!(err.starts_with("error: io: "), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);

    let garbage = out.path().join("garbage.ckpt");
    std::fs::write(&garbage, b"HPIX but not really").unwrap();
    let err = fails(&["upscale", &input("a.png"), "--scale", "2", "--phi", s(&garbage), "--out", s(&target)]);
    assert!(err.starts_with("error: checkpoint: "), "{err}");

    let strip = out.path().join("strip");
    fails(&["interpolate", &input("a.png"), &input("b.png"), "--phi", s(&garbage), "--out", s(&strip)]);
    let err = fails(&["baseline", &input("a.png"), "--scale", "2", "--out", s(&out.path().join("x.gif"))]);
    assert!(err.starts_with("error: image: "), "{err}");

    let names: Vec<_> = std::fs::read_dir(out.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, ["garbage.ckpt"]);

    let err = fails(&["upscale", &input("a.png"), "--scale", "0.5", "--phi", &phi(), "--out", s(&target)]);
    assert!(err.contains("scale"), "{err}");
}

#[test]
fn unknown_flags_are_rejected() {
    let err = fails(&["baseline", &input("a.png"), "--scale", "2", "--out", "x.png", "--sharpen"]);
    assert!(err.contains("--sharpen"), "{err}");
    assert!(!Path::new("x.png").exists());
}

#[test]
fn help_lists_every_flag() {
    let top = ok(&["--help"]);
    for cmd in ["train", "encode", "render", "upscale", "interpolate", "evaluate", "baseline", "--threads"] {
        assert!(top.contains(cmd), "top-level help lacks {cmd}");
    }
    let cases: [(&str, &[&str]); 7] = [
        ("train", &["--config", "--seed", "--steps", "--threads"]),
        ("encode", &["--phi", "--out"]),
        ("render", &["--rows", "--cols", "--scale", "--out"]),
        ("upscale", &["--scale", "--phi", "--stride", "--out"]),
        ("interpolate", &["--phi", "--steps", "--mode", "--size", "--out"]),
        ("evaluate", &["--phi", "--scales", "--convention", "--out"]),
        ("baseline", &["--scale", "--out"]),
    ];
    for (cmd, flags) in cases {
        let help = ok(&[cmd, "--help"]);
        for flag in flags {
            assert!(help.contains(flag), "`{cmd} --help` lacks {flag}");
        }
    }
}

#[test]
fn thread_cap_is_accepted() {
    let out = tempfile::tempdir().unwrap();
    let target = out.path().join("up.png");
    ok(&["--threads", "2", "upscale", &input("a.png"), "--scale", "3", "--phi", &phi(), "--out", s(&target)]);
    assert_eq!(decode_image(&target).unwrap().dims(), (96, 96));
}
