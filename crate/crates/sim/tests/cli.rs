use std::process::Command;

fn probfed() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_probfed"));
    cmd.env_remove("PROBFED_OUT");
    cmd
}

#[test]
fn list_scenarios() {
    let out = probfed().arg("list-scenarios").output().unwrap();
    assert!(out.status.success());
    let names = String::from_utf8(out.stdout).unwrap();
    assert_eq!(
        names.lines().collect::<Vec<_>>(),
        ["complementary-experts", "perfect-vs-random", "paper-shape", "dropout-tolerance"]
    );
}

#[test]
fn run_and_replay_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let status = probfed()
        .args(["run", "complementary-experts", "--out"])
        .arg(&a)
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(0));
    let status = probfed()
        .args(["run", "complementary-experts", "--mode", "tcp", "--seed", "12", "--out"])
        .arg(&b)
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(0));
    let same = probfed().arg("replay-check").arg(&a).arg(&a).output().unwrap().status;
    assert_eq!(same.code(), Some(0));
    let out = probfed().arg("replay-check").arg(&a).arg(&b).output().unwrap();
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8(out.stdout).unwrap().contains("report.csv line 2"));
    let missing = probfed().arg("replay-check").arg(&a).arg(dir.path().join("none")).output().unwrap().status;
    assert_eq!(missing.code(), Some(3));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.conf");
    std::fs::write(&path, "name = bad\nseed = 1\nqos: 2\nclient.id = 1\nclient.kind = synthetic\n").unwrap();
    let out = probfed().arg("run").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("unknown key `qos`"));
    let out = probfed().args(["run", "no-such-scenario"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lonely.conf");
    std::fs::write(
        &path,
        "name = lonely\nseed = 1\nwait_ms = 0\nclient.id = 1\nclient.kind = synthetic\n",
    )
    .unwrap();
    let out = probfed().arg("run").arg(&path).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("lonely") && err.contains("need 2"), "{err}");
}

#[test]
fn env_var_sets_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let status = probfed()
        .env("PROBFED_OUT", dir.path())
        .args(["run", "dropout-tolerance"])
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    for f in ["report.csv", "trace.csv", "bytes.csv", "config.echo"] {
        assert!(dir.path().join("dropout-tolerance").join(f).is_file(), "{f}");
    }
}
