use jmls_core::experiments::{read_aggregate, read_repeat_curve, run_experiment, ExperimentConfig};
use jmls_core::io::{load_dataset, load_model};

fn small(dir: &std::path::Path, repeats: usize, iters: usize) -> ExperimentConfig {
    ExperimentConfig {
        t_len: 120,
        n_iters: iters,
        n_repeats: repeats,
        seed: 9,
        out_dir: dir.to_path_buf(),
        ..ExperimentConfig::example1()
    }
}

#[test]
fn single_iteration_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run_experiment(&small(dir.path(), 1, 1)).unwrap();
    let curve = read_repeat_curve(&dir.path().join("repeat_01_iterates.csv")).unwrap();
    assert_eq!(curve.len(), 1);
    assert_eq!(
        read_aggregate(&dir.path().join("aggregate.csv"))
            .unwrap()
            .len(),
        1
    );
    assert!(summary.files.iter().all(|f| f.exists()));
}

#[test]
fn aggregate_is_mean_of_repeats() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run_experiment(&small(dir.path(), 3, 6)).unwrap();
    let agg = read_aggregate(&dir.path().join("aggregate.csv")).unwrap();
    let curves: Vec<_> = (1..=3)
        .map(|r| {
            read_repeat_curve(&dir.path().join(format!("repeat_{r:02}_iterates.csv"))).unwrap()
        })
        .collect();
    for (i, row) in agg.iter().enumerate() {
        let vals: Vec<f64> = curves
            .iter()
            .map(|c| c[i].1)
            .filter(|v| v.is_finite())
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert_eq!(row.n_finite, vals.len());
        assert!((row.mean - mean).abs() <= 1e-12 * mean.abs().max(1.0));
        for (c, s) in curves.iter().zip(&summary.repeats) {
            assert_eq!(c[i].1.to_bits(), s.mean_h2[i].to_bits());
        }
    }
}

#[test]
fn emitted_files_read_back() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&small(dir.path(), 1, 2)).unwrap();
    let truth = load_model(&dir.path().join("repeat_01_truth.json")).unwrap();
    let fin = load_model(&dir.path().join("repeat_01_final.json")).unwrap();
    let data = load_dataset(&dir.path().join("repeat_01_data.csv")).unwrap();
    assert_eq!(data.len(), 120);
    let self_report = jmls_core::match_modes(&truth, &truth).unwrap();
    assert!(self_report.per_mode.iter().all(|&e| e == 0.0));
    assert_eq!(fin.dims, truth.dims);
    let bode = std::fs::read_to_string(dir.path().join("bode.csv")).unwrap();
    assert_eq!(bode.lines().count(), 1 + 3 * 2 * 200);
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_experiment(&small(a.path(), 2, 4)).unwrap();
    run_experiment(&small(b.path(), 2, 4)).unwrap();
    let mut names: Vec<_> = std::fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len(), 2 * 5 + 2);
    for n in names {
        assert_eq!(
            std::fs::read(a.path().join(&n)).unwrap(),
            std::fs::read(b.path().join(&n)).unwrap()
        );
    }
}

#[test]
fn invalid_config_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path(), 1, 1);
    cfg.n_particles = 1;
    assert!(run_experiment(&cfg).is_err());
}
