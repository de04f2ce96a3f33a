use motionbench::bench::{synth_tracks, Level, SensitivityReport, SynthKind, SynthParams};
use motionbench::dist::{write_embeddings, EmbeddingSet};
use motionbench::model::{write_checkpoint, Checkpoint, ModelConfig};
use motionbench::motion::{write_flow, write_frame, FlowField, Frame};
use motionbench::recon::read_report_csv;
use motionbench::trackdata::write_trackset;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_motionbench"));
    c.env_remove("MOTIONBENCH_CONFIG");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    let out = bin().current_dir(dir).args(args).args(["--set", &format!("out_dir={}", dir.display())]).output().unwrap();
    if !out.status.success() {
        eprintln!("stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?} failed");
    String::from_utf8(out.stdout).unwrap()
}

fn pan_clip(dir: &Path, name: &str, seed: u64) -> PathBuf {
    let p = SynthParams {
        velocity: [1.5, -0.5],
        ..SynthParams::default()
    };
    let ts = synth_tracks(SynthKind::Pan, 16, 40, &p, seed).unwrap();
    let path = dir.join(name);
    std::fs::write(&path, write_trackset(&ts).unwrap()).unwrap();
    path
}

fn identity_checkpoint(dir: &Path) -> PathBuf {
    let path = dir.join("identity.tjw");
    std::fs::write(&path, write_checkpoint(&Checkpoint::Identity).unwrap()).unwrap();
    path
}

fn toy_config_file(dir: &Path) -> PathBuf {
    let mut text = String::from("# toy model\nscore.n_support=16\nscore.n_query=16\n");
    for (k, v) in ModelConfig::toy().to_pairs() {
        text.push_str(&format!("model.{k}={v}\n"));
    }
    text.push_str("train.steps=3\ntrain.batch_size=2\ntrain.n_support=16\ntrain.n_query=16\ntrain.warmup_steps=1\n");
    let path = dir.join("toy.cfg");
    std::fs::write(&path, text).unwrap();
    path
}

fn value_rows(csv_text: &str) -> Vec<Vec<String>> {
    csv_text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
    assert_eq!(bin().arg("--version").output().unwrap().status.code(), Some(0));
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(run(d, &["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(d, &["aj", "--seed", "1", "--out", "a.csv", "--checkpoint", "missing.tjw", "x.trk"]).status.code(), Some(2));
    let clip = pan_clip(d, "c.trk", 1);
    let ck = identity_checkpoint(d);
    let args = ["aj", "--seed", "1", "--out", "a.csv", "--checkpoint", ck.to_str().unwrap(), clip.to_str().unwrap()];
    let mut bad = args.to_vec();
    bad.extend(["--set", "bogus.key=1"]);
    assert_eq!(run(d, &bad).status.code(), Some(1));
    // 40 tracks cannot be split into 256 + 256.
    assert_eq!(run(d, &args).status.code(), Some(1));
    std::fs::write(d.join("broken.trk"), b"TRK1 too short").unwrap();
    assert_eq!(run(d, &["motion-stats", "--out", "m.csv", "broken.trk"]).status.code(), Some(1));
}

#[test]
fn numerical_failures_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let frame = Frame::new(2, 2, 1, vec![0.5; 4]).unwrap();
    std::fs::write(d.join("a.img"), write_frame(&frame).unwrap()).unwrap();
    let flow = FlowField::new(2, 2, vec![[0.0, 0.0]; 4], vec![true; 4]).unwrap();
    std::fs::write(d.join("f.flo"), write_flow(&flow).unwrap()).unwrap();
    let out = run(d, &["warp", "--frames", "a.img", "a.img", "--flows", "f.flo", "--out", "w.csv"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn outputs_cannot_escape_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    pan_clip(d, "c.trk", 1);
    assert_eq!(run(d, &["motion-stats", "--out", "../escape.csv", "c.trk"]).status.code(), Some(1));
    assert_eq!(run(d, &["motion-stats", "--out", "/tmp/escape.csv", "c.trk"]).status.code(), Some(1));
    assert!(!d.parent().unwrap().join("escape.csv").exists());
}

#[test]
fn identity_reconstruction_scores_one_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    pan_clip(d, "c.trk", 3);
    identity_checkpoint(d);
    let args = [
        "aj", "--seed", "9", "--checkpoint", "identity.tjw", "--out", "aj.csv", "--set", "score.n_support=20", "--set", "score.n_query=20", "c.trk",
    ];
    let stdout = ok(d, &args);
    assert!(stdout.contains("AJ 1"), "{stdout}");
    let first = std::fs::read(d.join("aj.csv")).unwrap();
    assert!(first.starts_with(b"# motionbench "));
    let report = read_report_csv(&first[..]).unwrap();
    assert_eq!(report.overall, 1.0);
    ok(d, &args);
    assert_eq!(std::fs::read(d.join("aj.csv")).unwrap(), first);

    ok(d, &["localize", "--report", "aj.csv", "--window", "1", "--out", "loc.csv"]);
    let loc = std::fs::read_to_string(d.join("loc.csv")).unwrap();
    assert_eq!(value_rows(&loc).iter().filter(|r| r[0] == "point").count(), 20);
}

#[test]
fn multi_video_aj_reports_each_video_and_the_mean() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    pan_clip(d, "a.trk", 1);
    pan_clip(d, "b.trk", 2);
    identity_checkpoint(d);
    let base = [
        "aj", "--seed", "1", "--checkpoint", "identity.tjw", "--set", "score.n_support=20", "--set", "score.n_query=20", "a.trk", "b.trk",
    ];
    let mut one = base.to_vec();
    one.extend(["--out", "one.csv"]);
    ok(d, &one);
    let mut two = base.to_vec();
    two.extend(["--out", "two.csv", "--jobs", "2"]);
    ok(d, &two);
    let text = std::fs::read_to_string(d.join("one.csv")).unwrap();
    let rows = value_rows(&text);
    assert_eq!(rows.iter().filter(|r| r[0] == "video").count(), 2);
    assert_eq!(rows.last().unwrap()[0], "summary");
    assert_eq!(rows.last().unwrap()[3], "1");
    let strip = |s: String| s.lines().skip(1).collect::<Vec<_>>().join("\n");
    assert_eq!(strip(text), strip(std::fs::read_to_string(d.join("two.csv")).unwrap()));
}

#[test]
fn frechet_of_a_set_with_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let rows: Vec<Vec<f64>> = (0..8).map(|i| (0..3).map(|k| ((i * 7 + k * 3) % 5) as f64 * 0.5).collect()).collect();
    let es = EmbeddingSet::from_rows(rows, (0..8).map(|i| format!("v{i}")).collect()).unwrap();
    std::fs::write(d.join("e.lat"), write_embeddings(&es).unwrap()).unwrap();
    ok(d, &["frechet", "e.lat", "e.lat", "--out", "f.csv"]);
    let rows = value_rows(&std::fs::read_to_string(d.join("f.csv")).unwrap());
    let v: f64 = rows[0][1].parse().unwrap();
    assert!(v.abs() <= 1e-9, "{v}");
    ok(d, &["mmd", "e.lat", "e.lat", "--out", "m.csv"]);
}

#[test]
fn train_embed_and_sensitivity_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = toy_config_file(d);
    let cfg = cfg.to_str().unwrap();
    pan_clip(d, "a.trk", 1);
    pan_clip(d, "b.trk", 2);
    ok(d, &["--config", cfg, "train", "--seed", "4", "--out", "toy.tjw", "--loss-out", "loss.csv", "a.trk", "b.trk"]);
    let losses = std::fs::read_to_string(d.join("loss.csv")).unwrap();
    assert_eq!(value_rows(&losses).len(), 3);

    ok(d, &["--config", cfg, "embed", "--checkpoint", "toy.tjw", "--out", "e.lat", "a.trk", "b.trk"]);
    ok(d, &["--config", cfg, "pairdist", "--checkpoint", "toy.tjw", "a.trk", "b.trk", "--out", "p.csv"]);

    ok(d, &["--config", cfg, "sensitivity", "--checkpoint", "toy.tjw", "--seed", "5", "--out", "s.csv", "a.trk", "b.trk"]);
    let text = std::fs::read(d.join("s.csv")).unwrap();
    let report = SensitivityReport::read_csv(&text[..]).unwrap();
    assert_eq!(report.levels.len(), 5);
    assert_eq!(value_rows(&String::from_utf8(text).unwrap()).len(), 10);

    ok(d, &["sensitivity", "--metric", "length", "--levels", "2.1,2.3", "--seed", "5", "--out", "len.csv", "a.trk"]);
    let r = SensitivityReport::read_csv(&std::fs::read(d.join("len.csv")).unwrap()[..]).unwrap();
    assert_eq!(r.levels.iter().map(|l| l.level).collect::<Vec<_>>(), vec![Level::L2_1, Level::L2_3]);
}

#[test]
fn synth_corrupt_and_motion_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--kind", "rotate", "--frames", "16", "--tracks", "4096", "--seed", "2", "--out", "grid.trk"]);
    ok(d, &["histogram", "grid.trk", "--out", "h.csv"]);
    assert_eq!(value_rows(&std::fs::read_to_string(d.join("h.csv")).unwrap()).len(), 9216);

    ok(d, &["synth", "--count", "3", "--frames", "8", "--tracks", "10", "--seed", "2", "--out", "set"]);
    assert!(d.join("set/clip_0002.trk").exists());
    ok(d, &["corrupt", "set/clip_0000.trk", "--level", "2.2", "--mode", "spatiotemporal", "--seed", "1", "--out", "bent.trk"]);
    ok(d, &["motion-stats", "--out", "stats.csv", "set/clip_0000.trk", "bent.trk"]);
    assert_eq!(value_rows(&std::fs::read_to_string(d.join("stats.csv")).unwrap()).len(), 20);
    assert_eq!(
        run(d, &["corrupt", "bent.trk", "--level", "3.1", "--mode", "spatial", "--seed", "1", "--out", "x.trk"]).status.code(),
        Some(1)
    );
}

#[test]
fn warp_and_correlate_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let a = Frame::new(2, 3, 1, vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]).unwrap();
    std::fs::write(d.join("a.img"), write_frame(&a).unwrap()).unwrap();
    let flow = FlowField::new(2, 3, vec![[0.0, 0.0]; 6], vec![false; 6]).unwrap();
    std::fs::write(d.join("f.flo"), write_flow(&flow).unwrap()).unwrap();
    ok(d, &["warp", "--frames", "a.img", "a.img", "a.img", "--flows", "f.flo", "f.flo", "--out", "w.csv"]);
    let rows = value_rows(&std::fs::read_to_string(d.join("w.csv")).unwrap());
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[2][0], "mean");
    assert_eq!(rows[2][1].parse::<f64>().unwrap(), 0.0);

    let mut ratings = String::from("video_id,rater_id,question,score\n");
    for v in 0..5 {
        for r in 0..3 {
            ratings.push_str(&format!("v{v},r{r},realism,{}\n", v * 10 + r * 3));
        }
    }
    std::fs::write(d.join("ratings.csv"), ratings).unwrap();
    std::fs::write(d.join("scores.csv"), "video_id,score\nv0,1\nv1,2\nv2,3\nv3,4\nv4,5\n").unwrap();
    std::fs::write(d.join("labels.csv"), "video_id,label\nv0,0\nv1,0\nv2,1\nv3,1\nv4,1\n").unwrap();
    ok(d, &[
        "correlate", "--ratings", "ratings.csv", "--scores", "scores.csv", "--question", "realism", "--labels", "labels.csv", "--out", "c.csv",
    ]);
    let rows = value_rows(&std::fs::read_to_string(d.join("c.csv")).unwrap());
    let get = |k: &str| rows.iter().find(|r| r[0] == k).unwrap()[2].parse::<f64>().unwrap();
    assert!((get("spearman_rho") - 1.0).abs() < 1e-12);
    assert_eq!(get("roc_auc"), 1.0);
}

#[test]
fn config_file_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    pan_clip(d, "c.trk", 3);
    identity_checkpoint(d);
    std::fs::write(d.join("env.cfg"), "score.n_support=20\nscore.n_query=20\n").unwrap();
    let out = bin()
        .current_dir(d)
        .env("MOTIONBENCH_CONFIG", d.join("env.cfg"))
        .args(["aj", "--seed", "1", "--checkpoint", "identity.tjw", "--out", "aj.csv", "c.trk"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let header = std::fs::read_to_string(d.join("aj.csv")).unwrap();
    assert!(header.lines().next().unwrap().contains("score.n_support=20"));
}
