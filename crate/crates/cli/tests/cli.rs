use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sparseemg::classifiers::TrainedModel;
use sparseemg::sweep::SweepResult;

fn sparseemg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparseemg"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = sparseemg(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn synth(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let mut args = vec!["synth", "--channels", "16", "--gestures", "4", "--seed", "7", "--name", name];
    args.extend_from_slice(extra);
    ok(dir, &args);
    dir.join("out/synth").join(name).join("dataset")
}

#[test]
fn synth_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "a", &[]);
    synth(tmp.path(), "b", &[]);
    let a = tree(&tmp.path().join("out/synth/a"));
    let b = tree(&tmp.path().join("out/synth/b"));
    assert_eq!(a.len(), 1 + 1 + 4 * 8);
    assert_eq!(a, b);
}

#[test]
fn sweep_on_sixteen_candidates_caps_the_curve() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "d", &[]);
    let data = data.to_str().unwrap();
    let line = ok(
        tmp.path(),
        &["sweep", "--data", data, "--scheme", "PI", "--classifier", "RF", "--max", "20", "--seed", "3", "--name", "s"],
    );
    assert!(line.starts_with("sweep: chosen E="), "{line}");
    let run = tmp.path().join("out/sweep/s");
    let curve = std::fs::read_to_string(run.join("curve.csv")).unwrap();
    let mut lines = curve.lines();
    assert_eq!(lines.next(), Some("E,accuracy,sparsity_score"));
    let es: Vec<usize> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(es, (2..=16).collect::<Vec<_>>());

    let result: SweepResult = serde_json::from_str(&std::fs::read_to_string(run.join("result.json")).unwrap()).unwrap();
    let model = TrainedModel::load(run.join("model.json")).unwrap();
    assert_eq!(model.electrode_order, result.chosen.electrodes);
    let ranking = std::fs::read_to_string(run.join("ranking.csv")).unwrap();
    assert!(ranking.starts_with("rank,electrode_id,score,scheme\n"));

    let provenance: Value = serde_json::from_str(&std::fs::read_to_string(run.join("run.json")).unwrap()).unwrap();
    assert_eq!(provenance["command"], "sweep");
    assert_eq!(provenance["config"]["method"]["scheme"], "PI");
    assert_eq!(provenance["config"]["max_electrodes"], 20);

    // serial run writes the same curve and result
    ok(
        tmp.path(),
        &["sweep", "--data", data, "--max", "20", "--seed", "3", "--workers", "1", "--name", "serial"],
    );
    let serial = tmp.path().join("out/sweep/serial");
    for file in ["curve.csv", "result.json", "model.json", "ranking.csv"] {
        assert_eq!(std::fs::read(run.join(file)).unwrap(), std::fs::read(serial.join(file)).unwrap(), "{file}");
    }

    ok(
        tmp.path(),
        &[
            "stencil",
            "--data",
            data,
            "--result",
            run.join("result.json").to_str().unwrap(),
            "--length",
            "250",
            "--wrist",
            "160",
            "--elbow",
            "250",
            "--name",
            "st",
        ],
    );
    let svg = std::fs::read_to_string(tmp.path().join("out/stencil/st/stencil.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let holes = doc.descendants().filter(|n| n.has_tag_name("circle")).count();
    assert_eq!(holes, result.chosen.electrode_count);
}

#[test]
fn bench_grid_puts_pi_forest_near_the_best_row() {
    let tmp = tempfile::tempdir().unwrap();
    for seed in 0..10 {
        let name = format!("b{seed}");
        ok(tmp.path(), &["bench", "--seed", &seed.to_string(), "--name", &name]);
        let summary = std::fs::read_to_string(tmp.path().join("out/bench").join(&name).join("summary.csv")).unwrap();
        let rows: Vec<Vec<&str>> = summary.lines().skip(1).map(|l| l.split(',').collect()).collect();
        assert_eq!(rows.len(), 12);
        let chosen = |r: &Vec<&str>| r[3].parse::<f64>().unwrap();
        let best = rows.iter().map(chosen).fold(f64::MIN, f64::max);
        let pi_rf = rows.iter().find(|r| r[0] == "PI" && r[1] == "RF").map(chosen).unwrap();
        assert!(best - pi_rf <= 3.0, "seed {seed}: PI+RF {pi_rf} vs best {best}");
    }
}

#[test]
fn rank_crossuser_and_bandcompare_write_their_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "d", &["--users", "3"]);
    let data = data.to_str().unwrap();

    ok(tmp.path(), &["rank", "--data", data, "--scheme", "MI", "--name", "r"]);
    let run = tmp.path().join("out/rank/r");
    let ranking = std::fs::read_to_string(run.join("ranking.csv")).unwrap();
    assert_eq!(ranking.lines().count(), 17);
    let features = std::fs::read_to_string(run.join("features.csv")).unwrap();
    assert!(features.starts_with("label,e0_w0,e0_w1,e0_w2,e1_w0"));
    assert_eq!(features.lines().count(), 33);

    ok(tmp.path(), &["crossuser", "--data", data, "--source", "u1", "--max", "6", "--name", "c"]);
    let table = std::fs::read_to_string(tmp.path().join("out/crossuser/c/crossuser.csv")).unwrap();
    assert_eq!(table.lines().next(), Some("user,accuracy,is_source"));
    assert_eq!(table.lines().count(), 4);
    assert!(table.contains("u1,") && table.lines().filter(|l| l.ends_with(",true")).count() == 1);

    ok(tmp.path(), &["bandcompare", "--data", data, "--k", "4", "--scheme", "RMSI", "--name", "k"]);
    let band: Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("out/bandcompare/k/bandcompare.json")).unwrap()).unwrap();
    assert_eq!(band["band_electrodes"], serde_json::json!([0, 4, 8, 12]));
    assert!(band["sparse_accuracy"].as_f64().unwrap() >= band["band_accuracy"].as_f64().unwrap());
}

#[test]
fn failures_exit_nonzero_with_a_structured_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), "d", &[]);
    let data = data.to_str().unwrap();

    let out = sparseemg(tmp.path(), &["sweep", "--data", data, "--gestures", "0,9", "--name", "x"]);
    assert!(!out.status.success());
    let err: Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert_eq!(err["error"]["field"], "gestures[1]");

    let out = sparseemg(tmp.path(), &["sweep", "--data", "missing-dir"]);
    assert!(!out.status.success());
    let err: Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert!(err["error"]["message"].as_str().unwrap().contains("missing-dir"));

    let out = sparseemg(tmp.path(), &["sweep", "--data", data, "--no-such-flag"]);
    assert!(!out.status.success());

    let out = sparseemg(tmp.path(), &["sweep", "--data", data, "--w1", "0.7", "--w2", "0.7"]);
    assert!(!out.status.success());
    let err: Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert_eq!(err["error"]["field"], "weights");
}
