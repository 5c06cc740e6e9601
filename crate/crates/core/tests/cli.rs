use std::fs;
use std::process::Command;

fn okb() -> Command {
    Command::new(env!("CARGO_BIN_EXE_okb"))
}

fn write_config(dir: &std::path::Path, method: &str) -> std::path::PathBuf {
    let path = dir.join(format!("{method}.toml"));
    fs::write(
        &path,
        format!(
            r#"
method = "{method}"
seeds = [0]
test_grid_h = 4
max_iters = 2
output_dir = "out"

[environment]
name = "corridors"
params = {{ length = 2, discount = 0.9 }}
"#
        ),
    )
    .unwrap();
    path
}

#[test]
fn run_eval_compare_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "okb");
    let st = okb().arg("run").arg(&cfg).status().unwrap();
    assert_eq!(st.code(), Some(0));
    let out = dir.path().join("out");
    for ext in ["csv", "log.jsonl", "snapshot.txt"] {
        assert!(out.join(format!("okb-seed0.{ext}")).exists(), "missing {ext}");
    }

    let eval = okb().arg("eval").arg(out.join("okb-seed0.snapshot.txt")).args(["--grid", "5"]).output().unwrap();
    assert_eq!(eval.status.code(), Some(0));
    let text = String::from_utf8(eval.stdout).unwrap();
    assert!(text.starts_with("method,seed,iteration,w_0,w_1"));
    assert_eq!(text.lines().count(), 1 + 6);

    let cmp = okb().arg("compare").arg(out.join("okb-seed0.csv")).output().unwrap();
    assert_eq!(cmp.status.code(), Some(0));
    assert!(String::from_utf8(cmp.stdout).unwrap().contains("okb"));
}

#[test]
fn demo_counterexample_passes() {
    let out = okb().args(["demo", "counterexample"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8(out.stdout).unwrap().contains("PASS"));
}

#[test]
fn bad_input_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(okb().arg("run").arg(dir.path().join("missing.toml")).status().unwrap().code(), Some(2));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "method = \"okb\"\nseeds = [0]\nbogus = 1\n").unwrap();
    assert_eq!(okb().arg("run").arg(&bad).status().unwrap().code(), Some(2));

    let csv = dir.path().join("wrong.csv");
    fs::write(&csv, "a,b\n1,2\n").unwrap();
    assert_eq!(okb().arg("compare").arg(&csv).status().unwrap().code(), Some(2));

    assert_eq!(okb().arg("frobnicate").status().unwrap().code(), Some(2));
}

#[test]
fn numerical_errors_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(
        &path,
        r#"
method = "okb"
seeds = [0]
max_iters = 1
output_dir = "out"

[environment]
name = "random-mcp"
params = { n_states = 5, n_actions = 2, d = 7, discount = 0.9, branching = 2, mcp_seed = 1 }
"#,
    )
    .unwrap();
    let out = okb().arg("run").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
