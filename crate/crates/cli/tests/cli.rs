use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_delaylqr");
const EXAMPLE: &str = include_str!("../configs/example.toml");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Small learning budget so the CLI tests stay quick.
fn quick_config() -> String {
    EXAMPLE.replace("rollouts = 400", "rollouts = 80").replace("max_policy_iters = 50", "max_policy_iters = 4")
}

#[test]
fn solve_writes_documented_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), EXAMPLE);
    let out = dir.path().join("out");
    let res = run(&["solve", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", stderr(&res));

    let gains = fs::read_to_string(out.join("gains.csv")).unwrap();
    assert!(gains.starts_with("source,iteration,k_1_1,k_1_2,step,residual,rank,condition,radius\n"));
    assert!(!gains.contains('\r'));
    let last: Vec<&str> = gains.lines().last().unwrap().split(',').collect();
    let k: Vec<f64> = last[2..4].iter().map(|s| s.parse().unwrap()).collect();
    assert_eq!(format!("{:.4}", k[0]), "0.8557");
    assert_eq!(format!("{:.4}", k[1]), "-0.2243");

    let stack = fs::read_to_string(out.join("p_stack.csv")).unwrap();
    let header = stack.lines().next().unwrap();
    assert_eq!(header.split(',').count(), 1 + 12);

    let stability = fs::read_to_string(out.join("stability.txt")).unwrap();
    assert!(stability.contains("verdict = stabilizing\n"));

    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["mode"], "solve");
    assert!(summary["config"]["model"]["A"].is_array());
}

#[test]
fn check_stability_of_zero_gain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), EXAMPLE);
    let out = dir.path().join("out");
    let res = run(&["check-stability", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", stderr(&res));
    let text = fs::read_to_string(out.join("stability.txt")).unwrap();
    assert!(text.contains("verdict = stabilizing"));
    let radius: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("spectral_radius = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(radius < 1.0);
}

#[test]
fn unstable_gain_is_reported_not_stabilizing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &EXAMPLE.replace("gain = [[0.0, 0.0]]", "gain = [[-3.0, 0.0]]"));
    let out = dir.path().join("out");
    let res = run(&["check-stability", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(res.status.success());
    assert!(fs::read_to_string(out.join("stability.txt")).unwrap().contains("verdict = not stabilizing"));
}

#[test]
fn malformed_matrix_exits_with_field_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &EXAMPLE.replace("A = [[1.1, -0.3], [1.0, 0.0]]", "A = [[1.1, -0.3, 1.0]]"));
    let res = run(&["solve", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    let err = stderr(&res);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: kind=config detail=model.A"), "{err}");
}

#[test]
fn syntax_error_exits_two_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &EXAMPLE.replace("delay = 2", "delay = = 2"));
    let res = run(&["solve", "--config", &cfg]);
    assert_eq!(res.status.code(), Some(2));
    let err = stderr(&res);
    assert!(err.starts_with("error: kind=parse"), "{err}");
    assert!(err.contains("line"), "{err}");
}

#[test]
fn numerical_failures_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &EXAMPLE.replace("k0 = [[0.0, 0.0]]\ntol = 1e-10", "k0 = [[-3.0, 0.0]]\ntol = 1e-10"));
    let res = run(&["solve", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(3), "{}", stderr(&res));
    assert!(stderr(&res).starts_with("error: kind=not_stabilizing"));
}

#[test]
fn unwritable_output_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), EXAMPLE);
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let res = run(&["solve", "--config", &cfg, "--out", blocker.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(4), "{}", stderr(&res));
    assert!(stderr(&res).starts_with("error: kind=io"));
}

#[test]
fn printed_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &EXAMPLE.replace("x0 = [0.4, 0.6]", "x0 = [0.30000000000000004, 0.6]"));
    let first = run(&["learn", "--config", &cfg, "--seed", "9", "--print-config"]);
    assert!(first.status.success());
    let printed = String::from_utf8(first.stdout).unwrap();
    assert!(printed.contains("seed = 9"));
    assert!(printed.contains("0.30000000000000004"));
    let again = write_config(dir.path(), &printed);
    let second = run(&["learn", "--config", &again, "--print-config"]);
    assert_eq!(String::from_utf8(second.stdout).unwrap(), printed);
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &quick_config());
    let outputs: Vec<_> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            let res = run(&["example", "--config", &cfg, "--seed", "3", "--out", out.to_str().unwrap()]);
            assert!(res.status.success(), "{}", stderr(&res));
            out
        })
        .collect();
    for file in ["gains.csv", "p_stack.csv", "stability.txt"] {
        assert_eq!(fs::read(outputs[0].join(file)).unwrap(), fs::read(outputs[1].join(file)).unwrap(), "{file}");
    }
    let other = dir.path().join("c");
    run(&["example", "--config", &cfg, "--seed", "4", "--out", other.to_str().unwrap()]);
    assert_ne!(fs::read(outputs[0].join("gains.csv")).unwrap(), fs::read(other.join("gains.csv")).unwrap());
}

#[test]
fn simulate_writes_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), EXAMPLE);
    let out = dir.path().join("out");
    let res = run(&["simulate", "--config", &cfg, "--rollouts", "3", "--horizon", "10", "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", stderr(&res));
    let text = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "rollout,k,x_1,x_2,u_1,w");
    assert_eq!(lines.count(), 3 * 11);
    let first: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&first[..5], ["0", "0", "4.0000000000000002e-1", "5.9999999999999998e-1", "-2.0000000000000001e-1"]);
}

#[test]
fn bundled_example_runs_without_a_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let res = run(&["paper-example", "--rollouts", "80", "--max-iter", "3", "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", stderr(&res));
    let gains = fs::read_to_string(out.join("gains.csv")).unwrap();
    assert!(gains.lines().any(|l| l.starts_with("solve,")));
    assert!(gains.lines().last().unwrap().starts_with("learn,3,"));
}
