use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn omni_fmi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_omni-fmi"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = omni_fmi(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn metric(report: &str, name: &str) -> f64 {
    report
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{name},")))
        .unwrap_or_else(|| panic!("no {name} in report"))
        .parse()
        .unwrap()
}

#[test]
fn synth_run_eval() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    let est = dir.path().join("est.csv");
    let report = dir.path().join("report.csv");
    let plot = dir.path().join("plot.csv");
    ok(&["synth", "--out", p(&seq), "--frames", "6", "--walk", "1.5", "--seed", "4"]);
    assert!(seq.join("frame_0005.png").is_file() && seq.join("gt.csv").is_file());

    let msg = ok(&["run", "--calib", p(&seq.join("calib.txt")), "--frames", p(&seq), "--out", p(&est)]);
    assert!(msg.contains("wrote 6 frames"), "{msg}");
    let csv = fs::read_to_string(&est).unwrap();
    assert!(csv.starts_with("frame_index,timestamp,qw,qx,qy,qz"));
    assert_eq!(csv.lines().count(), 7);

    ok(&[
        "eval",
        "--est",
        p(&est),
        "--gt",
        p(&seq.join("gt.csv")),
        "--report",
        p(&report),
        "--plot",
        p(&plot),
    ]);
    let report = fs::read_to_string(&report).unwrap();
    assert!(metric(&report, "mean_rmse") <= 0.02, "{report}");
    assert_eq!(metric(&report, "aligned"), 6.0);
    let plot = fs::read_to_string(&plot).unwrap();
    assert!(plot.lines().next().unwrap().contains("est_rel_yaw"));
    assert_eq!(plot.lines().count(), 7);
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    ok(&["synth", "--out", p(&seq), "--frames", "2", "--yaw-rate", "2deg"]);
    let cfg = dir.path().join("run.cfg");
    // An impossible threshold rejects every tile ...
    fs::write(&cfg, "# thresholds\nth-pr = 0.99\nth_pnr 1.5\n").unwrap();
    let (calib, f1, f2) = (seq.join("calib.txt"), seq.join("frame_0000.png"), seq.join("frame_0001.png"));
    let args = |extra: &[&'static str]| {
        let mut v = vec!["--config", p(&cfg), "register", "--calib", p(&calib), "--frame1", p(&f1), "--frame2", p(&f2)];
        v.extend_from_slice(extra);
        ok(&v)
    };
    let out = args(&[]);
    assert!(out.contains("accepted 0") && out.contains("failed:"), "{out}");
    // ... until the command line overrides it.
    let out = args(&["--th-pr", "0.03"]);
    let yaw: f64 = out.split_whitespace().nth(5).unwrap().parse().unwrap();
    assert!((yaw.abs() - 2f64.to_radians()).abs() < 0.2f64.to_radians(), "{out}");
}

#[test]
fn debug_dump_and_unwrap() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    ok(&["synth", "--out", p(&seq), "--frames", "2", "--yaw-rate", "1"]);
    let dump = dir.path().join("dump");
    ok(&[
        "run",
        "--calib",
        p(&seq.join("calib.txt")),
        "--frames",
        p(&seq),
        "--out",
        p(&dir.path().join("est.csv")),
        "--debug-dump",
        p(&dump),
    ]);
    let pair = dump.join("pair_0001");
    for f in ["flow.csv", "flow.png", "tile_000_rotation_scale.pgm", "tile_000_translation.pgm"] {
        assert!(pair.join(f).is_file(), "missing {f}");
    }

    let pano = dir.path().join("pano.png");
    let msg = ok(&[
        "unwrap",
        "--calib",
        p(&seq.join("calib.txt")),
        "--image",
        p(&seq.join("frame_0000.png")),
        "--out",
        p(&pano),
    ]);
    assert!(msg.contains("panorama"));
    let img = omni_fmi::Image::load(&pano).unwrap();
    assert!(img.width() > img.height());
}

#[test]
fn errors_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = omni_fmi(&[
        "run",
        "--calib",
        p(&dir.path().join("none.txt")),
        "--frames",
        p(dir.path()),
        "--out",
        p(&dir.path().join("x.csv")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));

    assert_eq!(omni_fmi(&["run", "--bogus"]).status.code(), Some(2));
    assert_eq!(omni_fmi(&["synth", "--out", "x", "--walk", "1", "--yaw-rate", "1"]).status.code(), Some(2));
}
