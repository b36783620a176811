use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use mot3d::config::RunConfig;
use mot3d::eval::{gt_tracklets, TrackReport};
use mot3d::pipeline::{load_dataset, tracklet_path, DatasetIndex};
use tempfile::TempDir;

/// Small and fast: two stages of two epochs each.
const SMALL: &str = "seed = 9\n[generate]\nsequences = 2\n[schedule]\npretrain_epochs = 2\njoint_epochs = 2\n";

fn mot3d(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mot3d"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = mot3d(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    mot3d(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn workspace() -> (TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let cfg = s(&cfg).to_string();
    (dir, cfg)
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn generate_is_byte_reproducible() {
    let (dir, cfg) = workspace();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["--config", &cfg, "generate", "--out", s(&a), "--sequences", "1"]);
    ok(&["--config", &cfg, "--jobs", "1", "generate", "--out", s(&b), "--sequences", "1"]);
    let (fa, fb) = (files(&a), files(&b));
    assert!(fa.len() >= 3, "{:?}", fa.keys());
    assert_eq!(fa, fb);
    let c = dir.path().join("c");
    ok(&["--config", &cfg, "--seed", "10", "generate", "--out", s(&c), "--sequences", "1"]);
    assert_ne!(files(&c), fa);
}

#[test]
fn index_lists_every_sequence() {
    let (dir, cfg) = workspace();
    let out = dir.path().join("data");
    ok(&["--config", &cfg, "generate", "--out", s(&out), "--sequences", "4"]);
    let idx = DatasetIndex::read(&out).unwrap();
    assert_eq!(idx.sequences.len(), 4);
    assert_eq!(idx.seed, 9);
    let seqs = load_dataset(&out).unwrap();
    assert!(seqs.iter().all(|q| q.gt.num_frames() == 25));
}

#[test]
fn too_few_objects_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[scene.layout]\nmin_objects = 2\nmax_objects = 2\n").unwrap();
    let out = mot3d(&["--config", s(&cfg), "generate", "--out", s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least 3 objects"));
    assert!(!dir.path().join("x").exists());
}

#[test]
fn bad_invocations_exit_with_two() {
    let (dir, cfg) = workspace();
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let ck = dir.path().join("ck.json");
    assert_eq!(code(&["--config", &cfg, "train", "--data", s(&empty), "--checkpoint", s(&ck)]), 2);
    assert!(!ck.exists());
    assert_eq!(code(&["track", "--data", s(&empty), "--out", s(&empty), "--heuristic"]), 2);
    assert_eq!(code(&["eval", "--data", s(&empty), "--tracklets", s(&empty)]), 2);
    // a model source is required, and the two sources exclude each other
    assert_eq!(code(&["track", "--data", s(&empty), "--out", s(&empty)]), 2);
    assert_eq!(
        code(&["track", "--data", s(&empty), "--out", s(&empty), "--heuristic", "--checkpoint", s(&ck)]),
        2
    );
    assert_eq!(code(&["--config", s(&dir.path().join("none.toml")), "--print-config"]), 2);
    assert_eq!(code(&["--jobs", "0", "--print-config"]), 2);
    assert_eq!(code(&[]), 2);
}

#[test]
fn missing_checkpoint_is_reported() {
    let (dir, cfg) = workspace();
    let data = dir.path().join("data");
    ok(&["--config", &cfg, "generate", "--out", s(&data), "--sequences", "1"]);
    let out = mot3d(&[
        "track",
        "--data",
        s(&data),
        "--out",
        s(&dir.path().join("t")),
        "--checkpoint",
        s(&dir.path().join("nope.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));
}

#[test]
fn train_resume_track_eval() {
    let (dir, cfg) = workspace();
    let data = dir.path().join("data");
    ok(&["--config", &cfg, "generate", "--out", s(&data)]);

    let full = dir.path().join("full.json");
    ok(&["--config", &cfg, "train", "--data", s(&data), "--checkpoint", s(&full)]);
    let log = std::fs::read_to_string(full.with_extension("csv")).unwrap();
    let rows: Vec<&str> = log.lines().collect();
    assert_eq!(rows[0], "epoch,stage,track_loss,noc_loss,rec_loss,total_loss");
    assert_eq!(rows.len(), 5);
    assert!(rows[1].starts_with("0,pretrain,") && rows[4].starts_with("3,joint,"));

    let again = dir.path().join("again.json");
    ok(&["--config", &cfg, "train", "--data", s(&data), "--checkpoint", s(&again)]);
    assert_eq!(std::fs::read(&again).unwrap(), std::fs::read(&full).unwrap());

    let half = dir.path().join("half.json");
    ok(&["--config", &cfg, "train", "--data", s(&data), "--checkpoint", s(&half), "--epochs", "2"]);
    let half_log = std::fs::read_to_string(half.with_extension("csv")).unwrap();
    assert_eq!(half_log.lines().count(), 3);
    let resumed = dir.path().join("resumed.json");
    ok(&[
        "--config",
        &cfg,
        "train",
        "--data",
        s(&data),
        "--checkpoint",
        s(&resumed),
        "--resume",
        s(&half),
    ]);
    assert_eq!(std::fs::read_to_string(resumed.with_extension("csv")).unwrap(), log);
    assert_eq!(std::fs::read(&resumed).unwrap(), std::fs::read(&full).unwrap());

    let gnn = dir.path().join("gnn");
    let heur = dir.path().join("heur");
    ok(&["--config", &cfg, "track", "--data", s(&data), "--out", s(&gnn), "--checkpoint", s(&full)]);
    ok(&["--config", &cfg, "track", "--data", s(&data), "--out", s(&heur), "--heuristic"]);
    ok(&[
        "--config",
        &cfg,
        "track",
        "--data",
        s(&data),
        "--out",
        s(&dir.path().join("nogeo")),
        "--checkpoint",
        s(&full),
        "--no-geometry",
    ]);
    let idx = DatasetIndex::read(&data).unwrap();
    for e in &idx.sequences {
        assert!(tracklet_path(&gnn, &e.id).is_file());
        assert!(tracklet_path(&heur, &e.id).is_file());
    }

    let report = dir.path().join("report");
    let table = ok(&["eval", "--data", s(&data), "--tracklets", s(&gnn), "--out", s(&report)]);
    assert!(table.contains("MOTA") && table.contains("overall"));
    let r = TrackReport::from_json(&std::fs::read_to_string(report.join("report.json")).unwrap()).unwrap();
    assert_eq!(r.per_sequence.len(), 2);
    assert_eq!(std::fs::read_to_string(report.join("report.txt")).unwrap(), table);
    let csv = std::fs::read_to_string(report.join("trajectories.csv")).unwrap();
    assert!(csv.starts_with("sequence,source,id,class,frame,x,y,z"));
}

#[test]
fn ground_truth_against_itself_scores_one() {
    let (dir, cfg) = workspace();
    let data = dir.path().join("data");
    ok(&["--config", &cfg, "generate", "--out", s(&data)]);
    let tracks = dir.path().join("gt");
    std::fs::create_dir(&tracks).unwrap();
    for q in load_dataset(&data).unwrap() {
        gt_tracklets(&q.gt).write(&tracklet_path(&tracks, &q.gt.id)).unwrap();
    }
    let report = dir.path().join("report");
    ok(&["eval", "--data", s(&data), "--tracklets", s(&tracks), "--out", s(&report)]);
    let r = TrackReport::from_json(&std::fs::read_to_string(report.join("report.json")).unwrap()).unwrap();
    assert_eq!(r.overall.mota, Some(1.0));

    // a missing tracklet file is named in the error
    let first = DatasetIndex::read(&data).unwrap().sequences[0].id.clone();
    std::fs::remove_file(tracklet_path(&tracks, &first)).unwrap();
    let out = mot3d(&["eval", "--data", s(&data), "--tracklets", s(&tracks)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(&first));
}

#[test]
fn printed_config_is_the_full_default_and_round_trips() {
    let text = ok(&["--print-config"]);
    let cfg = RunConfig::from_toml(&text).unwrap();
    assert_eq!(cfg, RunConfig::default());
    assert_eq!(cfg.to_toml().unwrap(), text);
    for section in ["[generate]", "[scene.motion]", "[scene.layout]", "[noise]", "[gnn]", "[schedule]", "[eval]"] {
        assert!(text.contains(section), "missing {section}");
    }
    let (_dir, small) = workspace();
    let text = ok(&["--config", &small, "--seed", "4", "--print-config"]);
    let cfg = RunConfig::from_toml(&text).unwrap();
    assert_eq!((cfg.seed, cfg.generate.sequences, cfg.schedule.pretrain_epochs), (4, 2, 2));
}

#[test]
fn config_rejects_unknown_keys_and_bad_values() {
    assert!(RunConfig::from_toml("colour = 1\n").is_err());
    assert!(RunConfig::from_toml("[gnn]\nwindow = 1\n").is_err());
    assert!(RunConfig::from_toml("[eval]\nradius = -0.4\n").is_err());
    assert!(RunConfig::from_toml("[generate]\nsequences = 0\n").is_err());
    let err = RunConfig::from_toml("[schedule]\nbeta1 = 1.0\n").unwrap_err();
    assert!(err.is_invalid_input());
}
