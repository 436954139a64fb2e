use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use stgconvnet::run::file_digest;
use stgconvnet::tensor::{read_stv, write_mask, write_stv, Dims, MaskTensor, StvDtype, VideoTensor};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_stgconvnet"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn stgconvnet")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// 8x8 gray video with T frames of a drifting diagonal ramp.
fn gray_video(dir: &Path, name: &str, frames: usize) -> PathBuf {
    let v = VideoTensor::from_fn(Dims::new(1, 8, 8, frames), |_, y, x, t| ((y * 20 + x * 9 + t * 13) % 256) as f64);
    let p = dir.join(name);
    write_stv(&v, &p, StvDtype::U8).unwrap();
    p
}

fn tiny_config(dir: &Path, extra: &str) -> PathBuf {
    let p = dir.join("tiny.cfg");
    fs::write(
        &p,
        format!(
            "# smoke\nlayer=conv3d filters=2 kernel=3x3x2 stride=1x1x1\niterations=5\nlangevin_steps=2\n\
             num_chains=2\nlearning_rate=1e-4\nseed=7\n{extra}"
        ),
    )
    .unwrap();
    p
}

#[test]
fn train_smoke_run() {
    let dir = tempfile::tempdir().unwrap();
    let video = gray_video(dir.path(), "v.stv", 6);
    let cfg = tiny_config(dir.path(), "checkpoint_every=2\n");
    let out = dir.path().join("run");
    ok(&["train", "--config", s(&cfg), "--out", s(&out), s(&video)]);
    let diag = fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    assert_eq!(diag.lines().count(), 6);
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("[diagnostics]"));
    assert!(manifest.contains(&file_digest(&video).unwrap()));
    assert!(out.join("checkpoint/params.stp").exists());
    assert!(out.join("checkpoint_000002/checkpoint.txt").exists());
    assert!(out.join("checkpoint_000004/checkpoint.txt").exists());
    assert!(out.join("synth_1_u8.stv").exists());
}

#[test]
fn template_and_invalid_key() {
    let out = ok(&["train", "--emit-template", "exp1"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("layer=conv3d filters=120 kernel=15x15x15 stride=7x7x7"));

    let dir = tempfile::tempdir().unwrap();
    let video = gray_video(dir.path(), "v.stv", 6);
    let cfg = tiny_config(dir.path(), "warp_factor=9\n");
    let out = run(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("o")), s(&video)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("warp_factor") && err.contains("line 8"), "{err}");
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.stv");
    fs::write(&junk, b"not a video").unwrap();
    let out = run(&["convert", s(&junk), s(&dir.path().join("frames"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synthesize_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let video = gray_video(dir.path(), "v.stv", 6);
    let cfg = tiny_config(dir.path(), "");
    let run_dir = dir.path().join("run");
    ok(&["train", "--config", s(&cfg), "--out", s(&run_dir), s(&video)]);
    let ck = run_dir.join("checkpoint");

    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for o in [&a, &b] {
        ok(&["synthesize", "--checkpoint", s(&ck), "--steps", "5", "--seed", "3", "--init", "noise", "--out", s(o)]);
    }
    for m in 0..3 {
        for suffix in ["", "_u8"] {
            let f = format!("synth_{m}{suffix}.stv");
            assert_eq!(fs::read(a.join(&f)).unwrap(), fs::read(b.join(&f)).unwrap(), "{f}");
        }
    }
    assert!(!a.join("synth_3.stv").exists());

    let z = dir.path().join("z");
    ok(&["synthesize", "--checkpoint", s(&ck), "--steps", "0", "--count", "2", "--out", s(&z)]);
    let v = read_stv(z.join("synth_0.stv")).unwrap();
    assert!(v.data().iter().all(|&x| x == 0.0));
}

#[test]
fn training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let video = gray_video(dir.path(), "v.stv", 6);
    let cfg = tiny_config(dir.path(), "");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["--threads", "1", "train", "--config", s(&cfg), "--out", s(&a), s(&video)]);
    let out = bin()
        .env("STG_THREADS", "3")
        .args(["train", "--config", s(&cfg), "--out", s(&b), s(&video)])
        .output()
        .unwrap();
    assert!(out.status.success());
    for f in ["checkpoint/params.stp", "synth_0.stv", "diagnostics.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn convert_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let video = gray_video(dir.path(), "v.stv", 4);
    let frames = dir.path().join("frames");
    ok(&["convert", s(&video), s(&frames)]);
    assert!(frames.join("frame_0003.pgm").exists());
    let back = dir.path().join("back.stv");
    ok(&["convert", s(&frames), s(&back)]);
    assert_eq!(fs::read(&video).unwrap(), fs::read(&back).unwrap());
}

#[test]
fn recover_and_baseline_tables() {
    let dir = tempfile::tempdir().unwrap();
    let video = gray_video(dir.path(), "clip.stv", 6);
    let cfg = tiny_config(dir.path(), "");
    let before = file_digest(&video).unwrap();

    let out_dir = dir.path().join("rec");
    let out = ok(&[
        "recover", "--config", s(&cfg), "--occlusion", "missing_frames:0.5", "--sweeps", "5", "--estimate", "last_sample",
        "--out", s(&out_dir), s(&video),
    ]);
    let csv = fs::read_to_string(out_dir.join("results.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("name,ours,mrf_l1,mrf_l2"));
    assert!(lines.next().unwrap().starts_with("clip,"));
    assert!(String::from_utf8(out.stdout).unwrap().contains("average"));
    let mask = stgconvnet::tensor::read_mask(out_dir.join("clip_mask.stv")).unwrap();
    assert_eq!(mask.occluded_count(), 3 * 64);

    // user supplied mask, no truth: no table
    let mut m = MaskTensor::all_observed(8, 8, 6);
    m.set_observed(3, 3, 2, false);
    let mask_path = dir.path().join("m.stv");
    write_mask(&m, &mask_path).unwrap();
    let mask_before = file_digest(&mask_path).unwrap();
    let out_dir = dir.path().join("rec2");
    ok(&["recover", "--config", s(&cfg), "--mask", s(&mask_path), "--no-baseline", "--out", s(&out_dir), s(&video)]);
    assert!(out_dir.join("clip_recovered.stv").exists());
    assert!(!out_dir.join("results.csv").exists());

    let out_dir = dir.path().join("base");
    ok(&[
        "baseline", "--potential", "l1", "--lambda", "0.5", "--sweeps", "4", "--estimate", "mean_of_last:2",
        "--occlusion", "salt_pepper:0.3:2x2", "--out", s(&out_dir), s(&video),
    ]);
    let csv = fs::read_to_string(out_dir.join("results.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("name,mrf_l1"));

    assert_eq!(file_digest(&video).unwrap(), before);
    assert_eq!(file_digest(&mask_path).unwrap(), mask_before);
}

#[test]
fn inpaint_runs() {
    let dir = tempfile::tempdir().unwrap();
    let video = gray_video(dir.path(), "clip.stv", 6);
    let cfg = tiny_config(dir.path(), "");
    let mut m = MaskTensor::all_observed(8, 8, 6);
    for t in 0..6 {
        m.set_observed(4, 4, t, false);
    }
    let mask_path = dir.path().join("obj.stv");
    write_mask(&m, &mask_path).unwrap();
    let before = file_digest(&mask_path).unwrap();
    let out_dir = dir.path().join("inp");
    ok(&["inpaint", "--config", s(&cfg), "--mask", s(&mask_path), "--out", s(&out_dir), s(&video)]);
    let orig = read_stv(&video).unwrap();
    let got = read_stv(out_dir.join("clip_inpainted.stv")).unwrap();
    assert_eq!(got.get(0, 0, 0, 0), orig.get(0, 0, 0, 0));
    assert_eq!(file_digest(&mask_path).unwrap(), before);
}

#[test]
fn gradcheck_command() {
    let out = ok(&["gradcheck", "--nets", "5", "--layers", "3"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for op in ["grad_input", "grad_params", "energy_grad"] {
        assert!(text.contains(op), "{text}");
    }
}
