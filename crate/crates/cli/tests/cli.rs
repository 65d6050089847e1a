use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use isib::checkpoint;
use isib::config::Config;
use isib::dataset::{read_corpus, write_corpus};
use isib_core::experiment::build_world;

const TINY: &str = r#"
seed = 3
[experiment]
seeds = [1, 2]
alphas = [0.0, 0.3]
[experiment.world]
train_utts_l1 = 40
train_utts_l2 = 40
test_utts = 10
[experiment.world.accented_test]
speakers = 3
utts_per_speaker = 4
[experiment.world.strong_accented_test]
speakers = 3
utts_per_speaker = 4
[experiment.world.adapt_pool]
speakers = 20
utts_per_speaker = 4
[experiment.model]
codebook_size = 16
[experiment.train]
stage1_epochs = 2
stage2_epochs = 1
[experiment.adapt]
sizes = [20, 40]
epochs = [2, 2]
"#;

fn isib(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_isib")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = isib(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn workspace(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.toml"), config).unwrap();
    dir
}

fn read_dir_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn staged_training_equals_all_at_once() {
    let ws = workspace(TINY);
    let d = ws.path();
    ok(d, &["gen-data", "--config", "cfg.toml"]);
    ok(d, &["init-centroids", "--config", "cfg.toml", "--init", "l1", "--out", "ck0"]);
    ok(d, &["train", "--config", "cfg.toml", "--stage", "1", "--init", "l1", "--alpha", "0.3", "--from", "ck0", "--out", "ck1"]);
    ok(d, &["train", "--config", "cfg.toml", "--stage", "2", "--init", "l1", "--alpha", "0.3", "--from", "ck1", "--out", "ck2"]);
    ok(d, &["train", "--config", "cfg.toml", "--stage", "all", "--init", "l1", "--alpha", "0.3", "--out", "ck_all"]);
    for f in ["params.bin", "manifest.json"] {
        assert_eq!(fs::read(d.join("ck2").join(f)).unwrap(), fs::read(d.join("ck_all").join(f)).unwrap(), "{f}");
    }
    let log = fs::read_to_string(d.join("ck_all/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 2 + 1);
}

#[test]
fn checkpoint_save_load_save_is_byte_identical() {
    let ws = workspace(TINY);
    let d = ws.path();
    ok(d, &["gen-data", "--config", "cfg.toml"]);
    ok(d, &["train", "--config", "cfg.toml", "--stage", "all", "--init", "l2", "--out", "a"]);
    let (ckpt, manifest) = checkpoint::load(&d.join("a")).unwrap();
    checkpoint::save(&d.join("b"), &ckpt, &manifest.model).unwrap();
    assert_eq!(read_dir_bytes(&d.join("a")).into_iter().filter(|(p, _)| p != Path::new("train_log.csv")).collect::<Vec<_>>(), read_dir_bytes(&d.join("b")));

    fs::write(d.join("b/params.bin"), [0u8; 8]).unwrap();
    assert!(checkpoint::load(&d.join("b")).is_err());
}

#[test]
fn eval_and_tokenize_outputs() {
    let ws = workspace(TINY);
    let d = ws.path();
    ok(d, &["gen-data", "--config", "cfg.toml"]);
    ok(d, &["train", "--config", "cfg.toml", "--stage", "all", "--init", "l1", "--out", "ck"]);

    let out = ok(d, &["eval", "--checkpoint", "ck", "--data", "data/test-accented"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let errors = ["substitutions", "deletions", "insertions"].iter().map(|k| v[k].as_u64().unwrap()).sum::<u64>();
    let rate = v["rate"].as_f64().unwrap();
    assert!((rate - errors as f64 / v["ref_len"].as_u64().unwrap() as f64).abs() < 1e-12);

    ok(d, &["tokenize", "--checkpoint", "ck", "--data", "data/test-l2", "--out", "tokens.txt"]);
    let corpus = read_corpus(&d.join("data/test-l2")).unwrap();
    let text = fs::read_to_string(d.join("tokens.txt")).unwrap();
    assert_eq!(text.lines().count(), corpus.len());
    for (line, u) in text.lines().zip(&corpus) {
        let ids: Vec<usize> = line.split(' ').map(|t| t.parse().unwrap()).collect();
        assert_eq!(ids.len(), u.frames());
        assert!(ids.iter().all(|&i| i < 16));
    }
}

#[test]
fn experiment_tables_are_fully_populated() {
    let ws = workspace(TINY);
    let d = ws.path();
    ok(d, &["experiment", "--config", "cfg.toml", "--out", "r"]);
    for (stem, conditions) in [("native_only", 4), ("accent_adapted", 2)] {
        let mut rdr = csv::Reader::from_path(d.join(format!("r/{stem}.csv"))).unwrap();
        let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
        assert_eq!(rows.len(), 2 * 3, "{stem}");
        for r in &rows {
            assert_eq!(r.len(), 4 + conditions);
            for c in 4..r.len() {
                assert!(r[c].parse::<f64>().is_ok(), "{stem}: {r:?}");
            }
        }
        let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join(format!("r/{stem}.json"))).unwrap()).unwrap();
        assert_eq!(json["seeds"], serde_json::json!([1, 2]));
    }
}

#[test]
fn exit_codes() {
    let ws = workspace(TINY);
    let d = ws.path();
    let code = |args: &[&str]| isib(d, args).status.code().unwrap();
    assert_eq!(code(&["gen-data", "--config", "missing.toml"]), 2);
    assert_eq!(code(&["train", "--config", "cfg.toml", "--stage", "7", "--init", "l1", "--out", "x"]), 2);
    fs::write(d.join("bad.toml"), "[experiment]\nno_such_key = 1\n").unwrap();
    assert_eq!(code(&["gen-data", "--config", "bad.toml"]), 2);
    fs::write(d.join("alpha.toml"), "[experiment]\nalphas = [1.5]\n").unwrap();
    assert_eq!(code(&["gen-data", "--config", "alpha.toml"]), 2);

    ok(d, &["gen-data", "--config", "cfg.toml"]);
    assert_eq!(code(&["train", "--config", "cfg.toml", "--stage", "2", "--init", "l1", "--out", "x"]), 2);
    assert_eq!(code(&["eval", "--checkpoint", "nowhere", "--data", "data/test-l2"]), 2);

    let diverge = TINY.replace("stage2_epochs = 1", "stage2_epochs = 1\nstage1_lr = 1e30");
    fs::write(d.join("diverge.toml"), diverge).unwrap();
    assert_eq!(code(&["train", "--config", "diverge.toml", "--stage", "1", "--init", "l1", "--out", "x"]), 3);
}

#[test]
fn config_formats_and_relative_paths() {
    let ws = workspace(TINY);
    let d = ws.path();
    let toml_cfg = Config::load(&d.join("cfg.toml")).unwrap();
    assert_eq!(toml_cfg.paths.data_dir, d.join("data"));
    let json = serde_json::to_string(&Config { paths: Default::default(), ..toml_cfg.clone() }).unwrap();
    fs::write(d.join("cfg.json"), json).unwrap();
    assert_eq!(Config::load(&d.join("cfg.json")).unwrap(), toml_cfg);

    let shifted = toml_cfg.with_seed(Some(10));
    assert_eq!(shifted.seed, 10);
    assert_eq!(shifted.experiment.seeds, vec![10, 11]);
}

#[test]
fn corpus_files_round_trip() {
    let cfg = Config::load(&workspace(TINY).path().join("cfg.toml")).unwrap();
    let world = build_world(&cfg.experiment.world, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), "test-accented", &world.test_accented).unwrap();
    assert_eq!(read_corpus(dir.path()).unwrap(), world.test_accented);
}
