use std::path::Path;
use std::process::{Command, Output};

fn jmls(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jmls"))
        .args(args)
        .output()
        .unwrap()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_model(path: &Path, pi: [[f64; 2]; 2], p_s1: [f64; 2]) {
    let json = serde_json::json!({
        "dims": { "n_z": 1, "n_y": 1, "n_u": 1, "k": 2 },
        "modes": [
            { "a": [[0.8]], "b": [[1.0]], "c": [[1.5]], "d": [[0.0]], "q": [[0.05]], "r": [[0.05]] },
            { "a": [[-0.5]], "b": [[-2.0]], "c": [[1.0]], "d": [[0.0]], "q": [[0.02]], "r": [[0.08]] }
        ],
        "pi": pi,
        "p_s1": p_s1,
        "mu1": [0.0],
        "p1": [[1.0]]
    });
    std::fs::write(path, serde_json::to_string_pretty(&json).unwrap()).unwrap();
}

#[test]
fn simulate_identify_smooth_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let model = d.join("model.json");
    write_model(&model, [[0.9, 0.1], [0.2, 0.8]], [0.5, 0.5]);
    let data = d.join("data.csv");
    let out = jmls(&[
        "simulate",
        "--model",
        arg(&model),
        "--out",
        arg(&data),
        "--length",
        "200",
        "--seed",
        "3",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&data).unwrap();
    assert!(text.starts_with("t,u1,y1\n1,"));
    assert_eq!(text.lines().count(), 201);

    let id_dir = d.join("id");
    let out = jmls(&[
        "identify",
        "--data",
        arg(&data),
        "--init",
        arg(&model),
        "--truth",
        arg(&model),
        "--particles",
        "3",
        "--iters",
        "4",
        "--out-dir",
        arg(&id_dir),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let log = std::fs::read_to_string(id_dir.join("iterates.csv")).unwrap();
    assert!(log.starts_with("k,gamma_k,mode,param_block,frobenius_delta,h2_error_if_truth_known\n"));
    assert_eq!(log.lines().count(), 1 + 4 * 2 * 7);

    let out = jmls(&[
        "identify",
        "--data",
        arg(&data),
        "--resume",
        arg(&id_dir.join("checkpoint.json")),
        "--iters",
        "2",
        "--out-dir",
        arg(&d.join("id2")),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let resumed = std::fs::read_to_string(d.join("id2").join("iterates.csv")).unwrap();
    assert!(resumed.lines().nth(1).unwrap().starts_with("5,"));

    let marg = d.join("marginals.csv");
    let trace = d.join("trace.csv");
    let out = jmls(&[
        "smooth",
        "--model",
        arg(&model),
        "--data",
        arg(&data),
        "--out",
        arg(&marg),
        "--trace",
        arg(&trace),
        "--iters",
        "30",
        "--burn-in",
        "10",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let m = std::fs::read_to_string(&marg).unwrap();
    assert!(m.starts_with("t,p_mode1,p_mode2\n"));
    for line in m.lines().skip(1) {
        let p: Vec<f64> = line
            .split(',')
            .skip(1)
            .map(|v| v.parse().unwrap())
            .collect();
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
    }
    assert_eq!(
        std::fs::read_to_string(&trace).unwrap().lines().count(),
        1 + 30 * 200
    );

    let out = jmls(&[
        "eval-h2",
        "--truth",
        arg(&model),
        "--estimate",
        arg(&id_dir.join("estimate.json")),
    ]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["per_mode"].as_array().unwrap().len(), 2);

    let out = jmls(&["eval-h2", "--truth", arg(&model), "--estimate", arg(&model)]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["mean"].as_f64(), Some(0.0));
    assert_eq!(report["permutation"], serde_json::json!([1, 2]));
}

#[test]
fn invalid_model_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("bad.json");
    write_model(&model, [[0.9, 0.1], [0.2, 0.7]], [0.5, 0.5]);
    let out = jmls(&[
        "simulate",
        "--model",
        arg(&model),
        "--out",
        arg(&dir.path().join("d.csv")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 2 of Pi sums to 0.9"));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(jmls(&["identify"]).status.code(), Some(1));
    assert_eq!(jmls(&["no-such-command"]).status.code(), Some(1));
    assert!(jmls(&["--help"]).status.success());
}

#[test]
fn numerical_failure_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let model = d.join("alt.json");
    // Deterministic alternation 1, 2, 1, ...
    write_model(&model, [[0.0, 1.0], [1.0, 0.0]], [1.0, 0.0]);
    let data = d.join("data.csv");
    assert!(jmls(&[
        "simulate",
        "--model",
        arg(&model),
        "--out",
        arg(&data),
        "--length",
        "20"
    ])
    .status
    .success());
    let id = d.join("id");
    let out = jmls(&[
        "identify",
        "--data",
        arg(&data),
        "--init",
        arg(&model),
        "--iters",
        "1",
        "--out-dir",
        arg(&id),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let ckpt = id.join("checkpoint.json");
    let mut state: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&ckpt).unwrap()).unwrap();
    state["reference"] = serde_json::json!(vec![1; 20]);
    std::fs::write(&ckpt, state.to_string()).unwrap();
    let out = jmls(&[
        "identify",
        "--data",
        arg(&data),
        "--resume",
        arg(&ckpt),
        "--iters",
        "1",
        "--out-dir",
        arg(&d.join("id2")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("t=2") && err.contains("iteration 2"), "{err}");
}

#[test]
fn example_with_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "t_len = 80\nn_iters = 2\n").unwrap();
    let out_dir = dir.path().join("ex");
    let out = jmls(&[
        "example1",
        "--config",
        arg(&cfg),
        "--repeats",
        "2",
        "--out-dir",
        arg(&out_dir),
        "--seed",
        "4",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out_dir.join("aggregate.csv").exists());
    assert!(out_dir.join("repeat_02_iterates.csv").exists());
    let data = std::fs::read_to_string(out_dir.join("repeat_01_data.csv")).unwrap();
    assert_eq!(data.lines().count(), 81);

    std::fs::write(&cfg, "n_repeats = 0\n").unwrap();
    let out = jmls(&[
        "example2",
        "--config",
        arg(&cfg),
        "--out-dir",
        arg(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(1));
}
