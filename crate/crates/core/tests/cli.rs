//! Runs the `vidgeo` binary end to end on small inputs.

use std::path::Path;
use std::process::{Command, Output};

fn vidgeo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vidgeo")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn metric_rows(dir: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(dir.join("metrics.csv")).unwrap();
    assert_eq!(
        r.headers().unwrap().iter().collect::<Vec<_>>(),
        ["rel", "delta1", "rel_p", "delta_p_025", "n_mean_deg", "n_med_deg", "delta_1125", "valid_count"]
    );
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec!["--out", p(dir), "synth", "--frames", "3", "--res", "16x16"];
    args.extend_from_slice(extra);
    let out = vidgeo(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&vidgeo(&["--help"])), 0);
    assert_eq!(code(&vidgeo(&["eval", "--help"])), 0);
}

#[test]
fn parse_errors_exit_one() {
    assert_eq!(code(&vidgeo(&[])), 1);
    assert_eq!(code(&vidgeo(&["no-such-command"])), 1);
    assert_eq!(code(&vidgeo(&["synth", "--res", "16by16"])), 1);
    assert_eq!(code(&vidgeo(&["train-toy", "--weights", "1,-1"])), 1);
    assert_eq!(code(&vidgeo(&["infer", "--mode", "sideways", "--checkpoint", "x", "--input", "y"])), 1);
}

#[test]
fn validation_fails_before_any_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let r = vidgeo(&["--out", p(&out), "infer", "--checkpoint", "/nonexistent/ckpt", "--input", "/nonexistent/seq"]);
    assert_eq!(code(&r), 1);
    assert!(String::from_utf8_lossy(&r.stderr).contains("/nonexistent/ckpt"));
    assert!(!out.exists());

    let r = vidgeo(&["--out", p(&out), "attn-verify", "--dim", "10", "--heads", "4"]);
    assert_eq!(code(&r), 1);
    assert!(!out.exists());
}

#[test]
fn eval_of_ground_truth_against_itself_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("seq");
    synth(&seq, &["--scene", "sphere"]);
    let res = tmp.path().join("res");
    for align in ["none", "scale-seq", "affine"] {
        let r = vidgeo(&["--out", p(&res), "eval", "--pred", p(&seq), "--gt", p(&seq), "--align", align]);
        assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
        let rows = metric_rows(&res);
        assert_eq!(rows.len(), 2, "one sequence plus the pooled row");
        for row in rows {
            let num = |i: usize| row[i].parse::<f64>().unwrap();
            assert!(num(0).abs() < 1e-6 && num(1) == 1.0, "{align}: {row:?}");
            assert_eq!(num(4), 0.0);
            assert_eq!(num(6), 1.0);
            if align != "affine" {
                assert!(num(2).abs() < 1e-6 && num(3) == 1.0);
            }
        }
    }
}

#[test]
fn eval_rejects_mismatched_sequences() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, &[]);
    let r = vidgeo(&["--out", p(&b), "synth", "--frames", "2", "--res", "16x16"]);
    assert_eq!(code(&r), 0);
    let res = tmp.path().join("res");
    let r = vidgeo(&["--out", p(&res), "eval", "--pred", p(&b), "--gt", p(&a)]);
    assert_eq!(code(&r), 1);
    assert!(!res.exists());
}

#[test]
fn synth_train_infer_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("seq");
    synth(&seq, &[]);
    assert!(seq.join("frame_0002.vgeo").exists() && seq.join("scene.txt").exists());

    let run = tmp.path().join("run");
    let r = vidgeo(&[
        "--out", p(&run), "train-toy", "--steps", "2", "--sequences", "2", "--frames", "2", "--res", "16x16",
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    assert!(run.join("checkpoint").join("manifest.txt").exists());
    let log = std::fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);

    let pred = tmp.path().join("pred");
    let ckpt = run.join("checkpoint");
    let r = vidgeo(&[
        "--out", p(&pred), "infer", "--checkpoint", p(&ckpt), "--input", p(&seq), "--mode", "chunked", "--chunk",
        "2", "--window", "2",
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    for prefix in ["points", "depth", "normals"] {
        assert!(pred.join(format!("{prefix}_0002.vgeo")).exists());
    }

    // an unbounded cache gives the same first chunk, since nothing has
    // been evicted yet
    let unbounded = tmp.path().join("unbounded");
    let r = vidgeo(&[
        "--out", p(&unbounded), "infer", "--checkpoint", p(&ckpt), "--input", p(&seq), "--mode", "chunked",
        "--chunk", "2",
    ]);
    assert_eq!(code(&r), 0);
    for f in ["depth_0000.vgeo", "depth_0001.vgeo"] {
        let a = std::fs::read(pred.join(f)).unwrap();
        assert_eq!(a, std::fs::read(unbounded.join(f)).unwrap());
    }

    let res = tmp.path().join("res");
    let r = vidgeo(&["--out", p(&res), "eval", "--pred", p(&pred), "--gt", p(&seq)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let rows = metric_rows(&res);
    assert_eq!(rows.len(), 2);
    assert!(rows[1][0].parse::<f64>().unwrap().is_finite());
}

#[test]
fn refine_densifies_corrupted_depth() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("seq");
    synth(&seq, &["--corrupt"]);
    let out = tmp.path().join("labels");
    let r = vidgeo(&[
        "--out", p(&out), "refine", "--raw", p(&seq.join("raw")), "--mono", p(&seq.join("mono")),
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let labels = vidgeo::io::read_frames(&out, "depth").unwrap();
    assert_eq!(labels.dims(), [3, 16, 16]);
    assert!(labels.data().iter().all(|d| *d > 0.0 && d.is_finite()));

    let r = vidgeo(&[
        "--out", p(&out), "refine", "--raw", p(&seq.join("raw")), "--mono", p(&seq.join("mono")), "--teacher", "toy",
    ]);
    assert_eq!(code(&r), 1, "toy teacher without a checkpoint");
}

#[test]
fn attn_verify_and_its_negative_control() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("v");
    let args = ["--out", p(&out), "attn-verify", "--frames", "4", "--dim", "8", "--heads", "2", "--trials", "3"];
    assert_eq!(code(&vidgeo(&args)), 0);
    let mut broken = args.to_vec();
    broken.push("--break-mask");
    assert_eq!(code(&vidgeo(&broken)), 2);
}

#[test]
fn bench_writes_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("b");
    let r = vidgeo(&[
        "--out", p(&out), "bench", "--max-frames", "8", "--min-frames", "4", "--chunk-sizes", "2,4", "--window",
        "4", "--res", "16x16", "--repeats", "1",
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let text = std::fs::read_to_string(out.join("bench.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("mode,N,C,window,ms_per_frame,peak_cache_frames"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 6);
    for row in rows.iter().filter(|r| r.starts_with("chunked")) {
        assert!(row.split(',').next_back().unwrap().parse::<usize>().unwrap() <= 4);
    }
}
