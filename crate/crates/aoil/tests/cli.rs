//! End-to-end checks of the compiled binary: argument parsing, exit codes,
//! and the artifact contract, exercised the way a user would from a shell.

use std::path::Path;
use std::process::{Command, Output};

fn aoil(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aoil"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

#[test]
fn generate_run_gradcheck_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    let generated = aoil(
        root,
        &[
            "generate",
            "--stream",
            "sea",
            "--thresholds",
            "4,7",
            "--segment-length",
            "300",
            "--noise",
            "0.05",
            "--seed",
            "11",
            "--out",
            "data",
        ],
    );
    assert!(generated.status.success(), "{}", String::from_utf8_lossy(&generated.stderr));
    assert!(root.join("data/stream.csv").exists());

    let run = aoil(
        root,
        &[
            "run",
            "--data",
            "data/stream.csv",
            "--seed",
            "11",
            "--hidden-dim",
            "10",
            "--memory-units",
            "8",
            "--attention-dim",
            "6",
            "--out",
            "out",
        ],
    );
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let summary = stdout_of(&run);
    assert!(summary.contains("mode=aoil"), "unexpected stdout: {summary}");
    assert!(summary.contains("examples=600"));
    for artifact in
        ["summary.txt", "trace.csv", "drift_events.csv", "model.ckpt", "config_echo.txt"]
    {
        assert!(root.join("out").join(artifact).exists(), "missing {artifact}");
    }

    let gradcheck = aoil(
        root,
        &[
            "gradcheck",
            "--input-dim",
            "4",
            "--hidden-dim",
            "6",
            "--memory-units",
            "4",
            "--attention-dim",
            "5",
            "--seed",
            "2",
        ],
    );
    assert!(gradcheck.status.success());
    assert!(stdout_of(&gradcheck).contains("PASS"));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    aoil(
        root,
        &[
            "generate",
            "--stream",
            "sea",
            "--thresholds",
            "4",
            "--segment-length",
            "200",
            "--seed",
            "1",
            "--out",
            "data",
        ],
    );
    std::fs::write(root.join("run.conf"), "seed = 5\nhidden_dim = 12\nlambda = 0.001\n").unwrap();

    let run = aoil(
        root,
        &[
            "run",
            "--data",
            "data/stream.csv",
            "--config",
            "run.conf",
            "--seed",
            "9",
            "--out",
            "out",
        ],
    );
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let echo = std::fs::read_to_string(root.join("out/config_echo.txt")).unwrap();
    assert!(echo.contains("seed = 9"), "flag must beat the file: {echo}");
    assert!(echo.contains("hidden_dim = 12"), "file must beat the default: {echo}");
    assert!(echo.contains("lambda = 0.001"));
}

#[test]
fn bad_invocations_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    let unknown_stream = aoil(root, &["generate", "--stream", "spiral", "--out", "x"]);
    assert!(!unknown_stream.status.success());
    assert!(!String::from_utf8_lossy(&unknown_stream.stderr).is_empty());

    let missing_data = aoil(root, &["run", "--data", "nowhere.csv", "--out", "out"]);
    assert!(!missing_data.status.success());
    assert!(String::from_utf8_lossy(&missing_data.stderr).contains("nowhere.csv"));

    let bad_mode = aoil(root, &["run", "--data", "nowhere.csv", "--mode", "psychic"]);
    assert!(!bad_mode.status.success());

    let corrupted_gradcheck = aoil(
        root,
        &[
            "gradcheck",
            "--input-dim",
            "4",
            "--hidden-dim",
            "6",
            "--memory-units",
            "4",
            "--attention-dim",
            "5",
            "--corrupt",
            "classifier.weight",
        ],
    );
    assert!(
        !corrupted_gradcheck.status.success(),
        "a deliberately damaged gradient must fail the check"
    );
}
