use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ssal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssal"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = ssal(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const TINY: &[&str] = &[
    "--set", "data.size=[32, 32]",
    "--set", "data.synth_n=40",
    "--set", "split.pool_size=30",
    "--set", "split.test_size=10",
    "--set", "al.budget=6",
    "--set", "al.batch=3",
    "--set", "al.iterations=2",
    "--set", "al.clusters=2",
    "--set", "net.base_channels=4",
    "--set", "net.norm_groups=4",
    "--set", "ssl.epochs=1",
    "--set", "seg.base_epochs=1",
    "--set", "seg.iter_epochs=1",
];

fn with_tiny<'a>(out: &'a str, rest: &[&'a str]) -> Vec<&'a str> {
    let mut v: Vec<&str> = TINY.to_vec();
    v.push("--set");
    v.push(out);
    v.extend_from_slice(rest);
    v
}

#[test]
fn exit_codes_follow_the_error_kind() {
    assert_eq!(ssal(&["--set", "al.bogus=1", "al"]).status.code(), Some(2));
    assert_eq!(ssal(&["--set", "al.budget=400", "al"]).status.code(), Some(4));
    let empty = tempfile::tempdir().unwrap();
    let images = format!("data.images=\"{}\"", empty.path().display());
    let out = ssal(&["--set", "data.source=dir", "--set", &images, "eval", "--checkpoint", "x", "--out", "y"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(ssal(&["plot", "/nonexistent/report.json", "--out", "x.svg"]).status.code(), Some(1));
}

#[test]
fn synth_writes_a_loadable_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    ok(&["synth", "--n", "4", "--size", "32x32", "--out", out.to_str().unwrap()]);
    assert_eq!(fs::read_dir(out.join("images")).unwrap().count(), 4);
    assert_eq!(fs::read_dir(out.join("masks")).unwrap().count(), 4);
    let manifest = format!("data.manifest=\"{}\"", out.join("manifest.json").display());
    let cfg = [
        "--set", "data.source=manifest",
        "--set", &manifest,
        "--set", "data.size=[32, 32]",
        "--set", "split.pool_size=3",
        "--set", "split.test_size=1",
        "--set", "al.budget=2",
        "--set", "al.iterations=0",
        "--set", "al.clusters=2",
        "--set", "net.base_channels=4",
        "--set", "net.norm_groups=4",
        "--set", "ssl.epochs=1",
    ];
    let pre = dir.path().join("pre");
    let mut args = cfg.to_vec();
    args.extend(["pretrain", "--out", pre.to_str().unwrap()]);
    ok(&args);
    assert!(pre.join("ssl.bin").exists());
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn step_by_step_commands_compose() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out_dir = format!("out_dir=\"{}\"", d.join("runs").display());
    ok(&with_tiny(&out_dir, &["pretrain", "--out", s(&d.join("pre"))]));
    ok(&with_tiny(
        &out_dir,
        &["extract", "--checkpoint", s(&d.join("pre/ssl.bin")), "--out", s(&d.join("f.feat"))],
    ));
    for name in ["a.json", "b.json"] {
        ok(&with_tiny(&out_dir, &["select", "--features", s(&d.join("f.feat")), "--out", s(&d.join(name))]));
    }
    let a = fs::read(d.join("a.json")).unwrap();
    assert_eq!(a, fs::read(d.join("b.json")).unwrap());
    ok(&with_tiny(
        &out_dir,
        &[
            "train",
            "--selection",
            s(&d.join("a.json")),
            "--init",
            s(&d.join("pre/ssl.bin")),
            "--out",
            s(&d.join("seg.bin")),
        ],
    ));
    let stdout = ok(&with_tiny(
        &out_dir,
        &["eval", "--checkpoint", s(&d.join("seg.bin")), "--out", s(&d.join("eval"))],
    ));
    assert!(stdout.contains("mean dice"));
    assert!(d.join("eval/dice.csv").exists());
    let summary = fs::read_to_string(d.join("eval/summary.json")).unwrap();
    assert!(summary.contains("\"n\": 10"));
}

#[test]
fn al_resumes_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("runs");
    let out_dir = format!("out_dir=\"{}\"", runs.display());
    let first = ok(&with_tiny(&out_dir, &["--set", "al.method=random", "al", "--stop-after", "0"]));
    assert!(first.contains("stopped early"));
    let second = ok(&with_tiny(&out_dir, &["--set", "al.method=random", "al"]));
    assert!(second.contains("2,12,"), "{second}");
    let svg = dir.path().join("fig.svg");
    ok(&["plot", s(&runs), "--out", s(&svg)]);
    let csv = fs::read_to_string(dir.path().join("fig.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3);
}
