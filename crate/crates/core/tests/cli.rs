use std::process::{Command, Output};

use apt_forge::cli::{EXIT_INPUT, SWEEP_HEADER};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_apt-forge")).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn design_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cliff.json");
    let out = run(&["design", "--env", "cliff", "--strategy", "opt-adm", "--out", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).starts_with("opt-adm "));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(report["instance"], "cliff");
    assert_eq!(report["strategy"], "opt-adm");
    assert_eq!(report["admissible"], true);
    assert!(report["outcome"]["cost"].as_f64().unwrap() >= 0.0);
    assert!(report["bounds"]["thm3_interval"].is_array());
}

#[test]
fn sweep_emits_one_row_per_job() {
    let out = run(&["sweep", "--env", "cliff", "--sweep-lambda", "0:1:2", "--sweep-epsilon", "0.1:0.2:2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], SWEEP_HEADER);
    assert_eq!(lines.len(), 1 + 2 * 2 * 4);
    assert!(lines[1].starts_with("cliff,opt,0,0.1,"));
    assert!(lines[16].starts_with("cliff,constrain-optimize,1,0.2,"));
    for line in &lines[1..] {
        assert_eq!(line.split(',').count(), SWEEP_HEADER.split(',').count());
    }
}

#[test]
fn generated_instances_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("random.json");
    let path = path.to_str().unwrap();
    let first = run(&["generate", "--seed", "9", "--states", "3", "--actions", "2"]);
    let second = run(&["generate", "--seed", "9", "--states", "3", "--actions", "2", "--out", path]);
    assert!(first.status.success() && second.status.success());
    assert_eq!(stdout(&first), std::fs::read_to_string(path).unwrap());

    let design = run(&["design", "--mdp", path, "--strategy", "opt"]);
    assert!(design.status.success(), "{}", String::from_utf8_lossy(&design.stderr));
    let report: serde_json::Value = serde_json::from_str(stdout(&design).split_once('\n').unwrap().1).unwrap();
    assert_eq!(report["instance"], "random");
}

#[test]
fn bad_input_exits_with_input_status() {
    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("broken.json");
    std::fs::write(
        &broken,
        r#"{"n_states":1,"n_actions":1,"gamma":0.9,"sigma":[1.0],"P":[[[0.99]]],"R":[[0.0]]}"#,
    )
    .unwrap();
    let cases: [&[&str]; 5] = [
        &["design", "--env", "nowhere"],
        &["design", "--env", "cliff", "--gamma", "1.0"],
        &["design", "--env", "cliff", "--epsilon", "-1"],
        &["design", "--mdp", broken.to_str().unwrap()],
        &["generate", "--states", "0"],
    ];
    for args in cases {
        let out = run(args);
        assert_eq!(out.status.code(), Some(EXIT_INPUT), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    }
}

#[test]
fn reruns_are_byte_identical() {
    let args = ["design", "--env", "action_hacking", "--strategy", "constrain-optimize"];
    let (a, b) = (run(&args), run(&args));
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let single = run(&["sweep", "--env", "grass_mud"]);
    assert_eq!(stdout(&single).lines().count(), 1 + 4);
}
