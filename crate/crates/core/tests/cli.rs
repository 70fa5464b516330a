//! End-to-end checks of the `ttf` binary: subcommands, outputs and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ttf::harness::SequenceReport;

fn ttf(args: &[&str], config: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ttf"));
    cmd.args(args);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("run.cfg");
    fs::write(&path, body).unwrap();
    path
}

const SMALL: &str = "synth.frame_count = 9\nwidth = 56\nheight = 42\n\
                     synth.change_fraction = 0.2\nemit_masks = true\nemit_tokens = true\n";

#[test]
fn run_writes_report_masks_and_tokens() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("out");
    let res = ttf(&["run", "--out", out.to_str().unwrap()], Some(&cfg));
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    let report = SequenceReport::from_json(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.steps.len(), 9);
    assert_eq!(report.grid.patch_count, 12);
    // keyframes at 0, 3, 6 get no mask file
    let masks = fs::read_dir(out.join("masks")).unwrap().count();
    assert_eq!(masks, 6);
    let pgm = fs::read(out.join("masks").join("mask_000001.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n4 3\n255\n"));
    assert!(pgm[pgm.len() - 12..].iter().all(|&b| b == 0 || b == 255));

    let verify = ttf(&["verify-qreuse", "--report", out.to_str().unwrap()], None);
    assert!(verify.status.success(), "{}", String::from_utf8_lossy(&verify.stderr));
    assert!(out.join("qreuse.json").is_file());
}

#[test]
fn seed_flag_changes_results_and_synth_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let run = |name: &str, seed: &str| {
        let out = tmp.path().join(name);
        assert!(ttf(&["synth", "--out", out.to_str().unwrap(), "--seed", seed], Some(&cfg)).status.success());
        fs::read(out.join("frame_000004.ppm")).unwrap()
    };
    assert_eq!(run("a", "5"), run("b", "5"));
    assert_ne!(run("a", "5"), run("c", "6"));
}

#[test]
fn sweep_writes_one_row_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("sweep");
    let res = ttf(&["sweep", "--out", out.to_str().unwrap(), "--param", "K", "--values", "2,3,9"], Some(&cfg));
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert_eq!(fs::read_dir(out.join("runs")).unwrap().count(), 3);
}

#[test]
fn exit_codes_follow_error_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let out = out.to_str().unwrap();

    let bad_key = write_config(tmp.path(), "no_such_key = 1\nsynth.frame_count = 2\n");
    assert_eq!(ttf(&["run", "--out", out], Some(&bad_key)).status.code(), Some(2));

    let missing = write_config(tmp.path(), "frames_dir = does/not/exist\n");
    assert_eq!(ttf(&["run", "--out", out], Some(&missing)).status.code(), Some(3));

    let bad_dims = write_config(tmp.path(), "synth.frame_count = 2\nwidth = 50\n");
    assert_eq!(ttf(&["run", "--out", out], Some(&bad_dims)).status.code(), Some(2));

    // a run directory without tokens cannot be replayed
    fs::create_dir_all(tmp.path().join("empty")).unwrap();
    let res = ttf(&["verify-qreuse", "--report", tmp.path().join("empty").to_str().unwrap()], None);
    assert_eq!(res.status.code(), Some(3));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    for name in ["default.cfg", "real_robot.cfg"] {
        ttf::harness::RunConfig::load(&dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}
