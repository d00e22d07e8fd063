use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use portrule_server::cli::fixture_files;

fn models() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models/akap")
}

fn portrule(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_portrule")).args(args).output().unwrap()
}

fn run_akap(dir: &Path, strategy: &Path, seed: &str, extra: &[&str]) -> Output {
    let bundle = models().join("akap.bundle.json");
    let out = dir.join("tree.json");
    let mut args = vec![
        "run",
        "--model",
        bundle.to_str().unwrap(),
        "--strategy",
        strategy.to_str().unwrap(),
        "--seed",
        seed,
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    portrule(&args)
}

#[test]
fn checked_in_fixture_matches_the_generator() {
    for (name, text) in fixture_files("akap").unwrap() {
        let on_disk = fs::read_to_string(models().join(&name)).unwrap();
        assert_eq!(on_disk, text, "{name} is stale; regenerate with `portrule fixture akap --dir models/akap`");
    }
}

#[test]
fn run_writes_tree_csv_and_final_state() {
    let dir = tempfile::tempdir().unwrap();
    let state = dir.path().join("final.json");
    let out = run_akap(
        dir.path(),
        &models().join("akap.strat"),
        "42",
        &["--metric", "SA", "--final-state", state.to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = String::from_utf8(out.stdout).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("node,step,SA"));
    let values: Vec<u64> = lines.map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert!(values.windows(2).all(|w| w[0] <= w[1]));
    assert!(dir.path().join("tree.json").exists());
    let g: serde_json::Value = serde_json::from_str(&fs::read_to_string(state).unwrap()).unwrap();
    let bound: Vec<&serde_json::Value> = g["edges"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|e| e["ends"].as_array().unwrap().iter().map(|end| &end[0]))
        .collect();
    let camp = g["nodes"].as_array().unwrap().iter().filter(|n| n["name"] == "cAMP");
    assert!(camp.into_iter().all(|n| bound.contains(&&n["id"])), "free cAMP left");

    let verify = portrule(&[
        "verify",
        "--tree",
        dir.path().join("tree.json").to_str().unwrap(),
        "--model",
        models().join("akap.bundle.json").to_str().unwrap(),
    ]);
    assert_eq!(verify.status.code(), Some(0), "{}", String::from_utf8_lossy(&verify.stdout));
}

#[test]
fn same_command_twice_gives_identical_trees() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let strat = models().join("akap.strat");
    run_akap(a.path(), &strat, "7", &[]);
    run_akap(b.path(), &strat, "7", &[]);
    let ta = fs::read(a.path().join("tree.json")).unwrap();
    let tb = fs::read(b.path().join("tree.json")).unwrap();
    assert!(!ta.is_empty());
    assert_eq!(ta, tb);
}

#[test]
fn exit_codes_follow_the_terminal_status() {
    let dir = tempfile::tempdir().unwrap();
    let strat = dir.path().join("s.strat");

    fs::write(&strat, "r1; fail").unwrap();
    assert_eq!(run_akap(dir.path(), &strat, "0", &[]).status.code(), Some(1));

    fs::write(&strat, "r1 +").unwrap();
    let out = run_akap(dir.path(), &strat, "0", &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));

    fs::write(&strat, "repeat*(r4)").unwrap();
    let out = run_akap(dir.path(), &strat, "0", &["--budget", "5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("budget"));

    let missing = dir.path().join("missing.strat");
    assert_eq!(run_akap(dir.path(), &missing, "0", &[]).status.code(), Some(2));
}

#[test]
fn deep_search_flag_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let strat = dir.path().join("s.strat");
    fs::write(&strat, "ppick(r3/0.5, id/0.5); r1").unwrap();
    let out = run_akap(dir.path(), &strat, "0", &["--search", "deep"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn extra_rules_file_is_appended() {
    let dir = tempfile::tempdir().unwrap();
    let bundle: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(models().join("akap.bundle.json")).unwrap()).unwrap();
    let mut bare = bundle.clone();
    let rules = bare.as_object_mut().unwrap().remove("rules").unwrap();
    let (b, r) = (dir.path().join("bare.json"), dir.path().join("rules.json"));
    fs::write(&b, bare.to_string()).unwrap();
    fs::write(&r, rules.to_string()).unwrap();
    let strat = dir.path().join("s.strat");
    fs::write(&strat, "r4").unwrap();
    let args = ["run", "--model", b.to_str().unwrap(), "--strategy", strat.to_str().unwrap()];
    assert_eq!(portrule(&args).status.code(), Some(2));
    let mut with_rules = args.to_vec();
    with_rules.extend(["--rules", r.to_str().unwrap()]);
    assert_eq!(portrule(&with_rules).status.code(), Some(0));
}
