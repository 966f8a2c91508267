use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use harm_core::{Domain, LabelingFn, World};

fn harm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_harm")).args(args).output().unwrap()
}

fn run_ok(args: &[&str]) -> Output {
    let out = harm(args);
    assert!(out.status.success(), "harm {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

const SMALL: &str = "\
[data]
n = 120
p = 8
[model]
hidden = 3
[train]
methods = erm,wt
epochs = 3
[bounds]
budget = 4
[seeds]
list = 0,1
";

fn pipeline(cfg: &Path, out: &Path) {
    for cmd in ["gen-data", "train", "report"] {
        run_ok(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), cmd]);
    }
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    walkdir::WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().is_file())
        .map(|e| (e.path().strip_prefix(root).unwrap().display().to_string(), std::fs::read(e.path()).unwrap()))
        .collect()
}

#[test]
fn pipeline_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.cfg", SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    pipeline(&cfg, &a);
    pipeline(&cfg, &b);
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(ta.iter().any(|(p, _)| p.ends_with("bounds.csv")));
    assert!(ta.iter().any(|(p, _)| p.ends_with(".harm")));
    assert_eq!(ta, tb);
}

#[test]
fn outputs_parse_back_and_add_up() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.cfg", SMALL);
    let out = tmp.path().join("nested/out");
    pipeline(&cfg, &out);
    let rows = harm_core::formats::bounds_from_csv(&std::fs::read_to_string(out.join("reports/bounds.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        assert_eq!(r.bound_c, r.train_err + r.c + r.phi);
        assert_eq!(r.bound_d, r.train_err + r.d_theta);
    }
    let svg = std::fs::read_to_string(out.join("reports/bounds.svg")).unwrap();
    assert_eq!(svg.matches("class=\"bar\"").count(), 4 * 2);
    for (path, bytes) in tree(&out) {
        let text = String::from_utf8(bytes).unwrap_or_default();
        if path.contains("traces") {
            harm_core::formats::trace_from_csv(&text).unwrap();
        } else if path.ends_with(".csv") && path.contains("data") {
            harm_core::formats::dataset_from_csv(&text, harm_core::Origin::Source).unwrap();
        }
    }
    let m0 = harm_core::models::load_checkpoint(&out.join("models/erm-seed-0.harm")).unwrap();
    let m1 = harm_core::models::load_checkpoint(&out.join("models/erm-seed-1.harm")).unwrap();
    assert_ne!(m0, m1);
}

fn manifest_hash(out: &Path) -> String {
    let text = std::fs::read_to_string(out.join("manifest-gen-data.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["config_hash"].as_str().unwrap().to_string()
}

#[test]
fn manifest_hash_tracks_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let a = write_config(tmp.path(), "a.cfg", SMALL);
    let same = write_config(tmp.path(), "same.cfg", &format!("# comment\n{SMALL}"));
    let other = write_config(tmp.path(), "b.cfg", &SMALL.replace("n = 120", "n = 121"));
    let mut hashes = Vec::new();
    for (i, cfg) in [&a, &same, &other].iter().enumerate() {
        let out = tmp.path().join(format!("o{i}"));
        run_ok(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "gen-data"]);
        hashes.push(manifest_hash(&out));
    }
    assert_eq!(hashes[0], hashes[1]);
    assert_ne!(hashes[0], hashes[2]);
}

#[test]
fn wr_without_annotations_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "w.cfg", "[data]\nkind = world\nworlds = 1\n[train]\nmethods = wr\nepochs = 1\n");
    let out = tmp.path().join("o");
    run_ok(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "gen-data"]);
    let res = harm(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "train"]);
    assert_eq!(res.status.code(), Some(1), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(!out.join("models").exists());
}

#[test]
fn config_and_io_errors_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write_config(tmp.path(), "bad.cfg", "[data]\nnope = 1\n");
    assert_eq!(harm(&["--config", bad.to_str().unwrap(), "gen-data"]).status.code(), Some(1));
    let missing = tmp.path().join("absent.cfg");
    assert_eq!(harm(&["--config", missing.to_str().unwrap(), "gen-data"]).status.code(), Some(3));
    let cfg = write_config(tmp.path(), "ok.cfg", SMALL);
    let out = tmp.path().join("fresh");
    assert_eq!(harm(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "train"]).status.code(), Some(3));
}

#[test]
fn seed_flag_overrides_the_list() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.cfg", SMALL);
    let out = tmp.path().join("o");
    run_ok(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "7", "gen-data"]);
    assert!(out.join("data/seed-7").exists());
    assert!(!out.join("data/seed-0").exists());
}

#[test]
fn identical_source_and_target_have_no_divergence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "w.cfg", "[data]\nkind = world\nworlds = 1\n[train]\nepochs = 2\n[bounds]\nestimator = exact\n");
    let (cfg, out) = (cfg.to_str().unwrap(), tmp.path().join("o"));
    let out = out.to_str().unwrap();
    run_ok(&["--config", cfg, "--out", out, "gen-data"]);
    let dir = Path::new(out).join("data/seed-0");
    std::fs::copy(dir.join("train.csv"), dir.join("test.csv")).unwrap();
    run_ok(&["--config", cfg, "--out", out, "train"]);
    run_ok(&["--config", cfg, "--out", out, "report"]);
    let rows = harm_core::formats::bounds_from_csv(&std::fs::read_to_string(Path::new(out).join("reports/bounds.csv")).unwrap()).unwrap();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.d_theta == 0.0), "{rows:?}");
}

fn corrupt_world(dir: &Path) -> (PathBuf, PathBuf, String) {
    let d = Domain::binary(4).unwrap();
    let f_h = LabelingFn::from_fn(&d, |c| c[0] == 1);
    let f_m = LabelingFn::from_fn(&d, |c| c[2] == 1);
    let mixed = LabelingFn::from_fn(&d, |c| c[0] == c[2]);
    let world = World::new(f_h.clone(), f_m.clone(), vec![0, 1], vec![2, 3]).unwrap();
    let (wp, cp) = (dir.join("world.txt"), dir.join("class.txt"));
    world.save(&wp).unwrap();
    let class: String = [&f_h, &f_h.complement(), &f_m, &mixed].iter().map(|f| f.to_bitstring() + "\n").collect();
    std::fs::write(&cp, class).unwrap();
    (wp, cp, mixed.to_bitstring())
}

#[test]
fn corrupt_world_names_the_offending_member() {
    let tmp = tempfile::tempdir().unwrap();
    let (wp, cp, bits) = corrupt_world(tmp.path());
    let cfg = write_config(
        tmp.path(),
        "v.cfg",
        &format!("[data]\nkind = world\nworld_file = {}\nclass_file = {}\n", wp.display(), cp.display()),
    );
    let res = harm(&["--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap(), "verify"]);
    assert_ne!(res.status.code(), Some(0));
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains(&bits), "{stderr}");
}

#[test]
fn verify_writes_a_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "v.cfg", "[data]\nkind = world\nworld_p = 4\naligned = 1\nmisaligned = 1\nworlds = 5\ntrials = 3\n");
    let out = tmp.path().join("o");
    let res = harm(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "verify"]);
    assert!(res.status.code() == Some(0) || res.status.code() == Some(1));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("verify/report.json")).unwrap()).unwrap();
    let worlds = v["worlds"].as_array().unwrap();
    assert_eq!(worlds.len(), 5);
    for w in worlds {
        assert!(w["class_size"].as_u64().unwrap() >= 3);
        assert!(w["theorem_3_2"]["violations"].is_array());
    }
    assert_eq!(v["passed"].as_bool().unwrap(), res.status.code() == Some(0));
}
