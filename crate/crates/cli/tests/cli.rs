use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use duoview::objective::TextViews;
use duoview::pairing::ClipLength;
use duoview_cli::{AblationGrid, RunConfig};

fn duoview(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_duoview"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, cfg: &RunConfig) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn demo_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/demo.json")
}

#[test]
fn bundled_demo_config_is_the_default() {
    let cfg = RunConfig::load(&demo_config()).unwrap();
    assert_eq!(cfg, RunConfig::default());
    cfg.validate().unwrap();
    assert_eq!(cfg.world.n_videos, 8);
    assert_eq!(cfg.world.duration_s, 60.0);
    assert_eq!(cfg.world.fps, 8.0);
    assert_eq!(cfg.world.feature_dim, 16);
    assert_eq!((cfg.hyper.d, cfg.hyper.batch, cfg.hyper.steps), (64, 16, 300));
}

#[test]
fn full_demo_pipeline_succeeds_and_replays_identically() {
    let dir = tempfile::tempdir().unwrap();
    let demo = demo_config();
    let demo = demo.to_str().unwrap();
    for out in ["a", "b"] {
        let o = duoview(&["all", "--config", demo, "--out", out], dir.path());
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in ["metrics.csv", "per_class.csv", "caption_metrics.csv", "captions_pred.jsonl", "pairs.jsonl"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between identical runs");
    }
    let metrics = std::fs::read_to_string(dir.path().join("a/metrics.csv")).unwrap();
    assert!(metrics.starts_with("task,metric,value\n"));
    for task in ["retrieval,recall@10", "grounding,recall@1", "zeroshot,tool_map", "zeroshot_random,tool_map"] {
        assert!(metrics.contains(task), "{task} missing");
    }
    assert!(dir.path().join("a/actmap_vid0008.csv").exists());

    // Same inputs again with --force: idempotent.
    let before = std::fs::read(dir.path().join("a/metrics.csv")).unwrap();
    let o = duoview(&["eval-retrieval", "--config", demo, "--out", "a", "--force"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read(dir.path().join("a/metrics.csv")).unwrap(), before);

    // Without --force nothing is overwritten.
    for cmd in ["gen-data", "build-pairs", "train", "eval-retrieval", "eval-zeroshot", "eval-caption"] {
        let o = duoview(&[cmd, "--config", demo, "--out", "a"], dir.path());
        assert_eq!(code(&o), 2, "{cmd}");
        assert!(stderr(&o).contains("--force"), "{cmd}: {}", stderr(&o));
    }
}

#[test]
fn missing_inputs_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let o = duoview(&["build-pairs", "--out", "o"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("train.videos.jsonl"), "{}", stderr(&o));
    let o = duoview(&["eval-retrieval", "--out", "o"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("params.json"), "{}", stderr(&o));
    let o = duoview(&["train", "--config", "nope.json"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("nope.json"));
}

#[test]
fn invalid_config_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        pairs_per_a: 0,
        ..RunConfig::default()
    };
    let p = write_config(dir.path(), &cfg);
    let o = duoview(&["gen-data", "--config", p.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("pairs_per_a"));
    std::fs::write(&p, "{\"hyper\": {\"tau\": \"hot\"}}").unwrap();
    let o = duoview(&["gen-data", "--config", p.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn diverging_training_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.hyper.lr = 1e300;
    cfg.hyper.steps = 20;
    let p = write_config(dir.path(), &cfg);
    let p = p.to_str().unwrap();
    for cmd in ["gen-data", "build-pairs"] {
        assert_eq!(code(&duoview(&[cmd, "--config", p], dir.path())), 0);
    }
    let o = duoview(&["train", "--config", p], dir.path());
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"));
}

#[test]
fn seed_flag_changes_the_world() {
    let dir = tempfile::tempdir().unwrap();
    for (out, seed) in [("s1", "1"), ("s2", "2")] {
        assert_eq!(code(&duoview(&["gen-data", "--out", out, "--seed", seed], dir.path())), 0);
    }
    let read = |o: &str| std::fs::read(dir.path().join(o).join("corpus/train.transcripts.jsonl")).unwrap();
    assert_ne!(read("s1"), read("s2"));
}

#[test]
fn ablate_emits_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig {
        seeds: vec![0],
        ablation: AblationGrid {
            views: vec![TextViews::Both, TextViews::A],
            clip_lengths: vec![ClipLength::default(), ClipLength::Fixed { seconds: 4.0 }, ClipLength::Fixed { seconds: 2.0 }],
            frames: vec![1, 4],
        },
        ..RunConfig::default()
    };
    cfg.hyper.steps = 5;
    let p = write_config(dir.path(), &cfg);
    let o = duoview(&["ablate", "--config", p.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("out/ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "views,clip_length,frames,n_seeds,recall@1,recall@5,recall@10,median_rank");
    assert_eq!(lines.len() - 1, 2 * 3 * 2);
    assert!(lines[1].starts_with("both,random2-10,1,1,"));
}

#[test]
fn custom_prompt_file_is_used_and_checked() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.hyper.steps = 5;
    let p = write_config(dir.path(), &cfg);
    let p = p.to_str().unwrap();
    for cmd in ["gen-data", "build-pairs", "train"] {
        assert_eq!(code(&duoview(&[cmd, "--config", p], dir.path())), 0);
    }
    let world: duoview::corpus::WorldConfig =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/corpus/world.json")).unwrap()).unwrap();
    let mut sets = duoview::zeroshot::synthetic_prompts(&world);
    sets[0].classes[0].prompt = "a completely different sentence".into();
    std::fs::write(dir.path().join("prompts.json"), serde_json::to_string(&sets).unwrap()).unwrap();
    let o = duoview(&["eval-zeroshot", "--config", p, "--prompts", "prompts.json"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    sets.pop();
    std::fs::write(dir.path().join("bad.json"), serde_json::to_string(&sets).unwrap()).unwrap();
    let o = duoview(&["eval-zeroshot", "--config", p, "--prompts", "bad.json", "--force"], dir.path());
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let o = duoview(&["eval-zeroshot", "--config", p, "--prompts", "missing.json", "--force"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("missing.json"));
}
