mod common;

use common::*;
use jmls_core::experiments::{draw_example1_model, DrawRanges};
use jmls_core::io::{load_checkpoint, save_checkpoint};
use jmls_core::linalg::min_eigenvalue;
use jmls_core::model::{generate_input, validate_model};
use jmls_core::psaem::psaem_step;
use jmls_core::{
    match_modes, rb_psaem, resume_psaem, simulate, JmlsError, JmlsModel, ModeParams, PsaemConfig,
    PsaemState,
};
use nalgebra::{DMatrix, DVector};

#[test]
fn iterates_stay_valid() {
    let mut r = rng(81);
    let truth = random_model(&mut r, 2, 1, 1, 2);
    let data = random_data(&mut r, &truth, 150);
    let cfg = PsaemConfig {
        history_cap: 5,
        ..PsaemConfig::new(3, 40)
    };
    let mut count = 0;
    let state = rb_psaem(truth.clone(), &data, &cfg, &mut r, |rep| {
        count += 1;
        assert_eq!(rep.k, count);
        assert!(
            validate_model(rep.theta).is_empty(),
            "{:?}",
            validate_model(rep.theta)
        );
        for n in 0..2 {
            assert!((rep.theta.pi.row(n).sum() - 1.0).abs() < 1e-12);
            assert!(min_eigenvalue(&rep.theta.modes[n].q) >= 0.0);
            assert!(min_eigenvalue(&rep.theta.modes[n].r) >= 0.0);
        }
    })
    .unwrap();
    assert_eq!(state.iteration, 40);
    assert_eq!(state.history.len(), 5);
    assert_eq!(state.history.last().unwrap(), &state.theta);
}

#[test]
fn checkpoint_resume_is_exact() {
    let mut r = rng(82);
    let truth = random_model(&mut r, 1, 1, 1, 2);
    let data = random_data(&mut r, &truth, 100);
    let cfg = PsaemConfig::new(3, 12);

    let straight = rb_psaem(truth.clone(), &data, &cfg, &mut rng(5), |_| {}).unwrap();

    let mut stream = rng(5);
    let half = PsaemConfig { n_iters: 6, ..cfg };
    let partial = rb_psaem(truth, &data, &half, &mut stream, |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.json");
    save_checkpoint(&path, &partial).unwrap();
    let restored = load_checkpoint(&path).unwrap();
    assert_eq!(restored.reference, partial.reference);
    assert_eq!(restored.iteration, 6);
    let resumed = resume_psaem(restored, &data, &cfg, &mut stream, &mut |_| {}).unwrap();
    assert_eq!(resumed.theta, straight.theta);
    assert_eq!(resumed.reference, straight.reference);
}

#[test]
fn unreachable_mode_reports_persistent_starvation() {
    let mut r = rng(83);
    let mut model = JmlsModel::new(
        vec![
            ModeParams::scalar(0.5, 1.0, 1.0, 0.0, 0.1, 0.1),
            ModeParams::scalar(-0.5, 1.0, 2.0, 0.0, 0.1, 0.1),
        ],
        DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.5]),
    );
    model.p_s1 = DVector::from_vec(vec![1.0, 0.0]);
    let u = generate_input(80, 1, 0.5, &mut r).unwrap();
    let (data, _) = simulate(&model, &u, &mut r).unwrap();
    let cfg = PsaemConfig::new(3, 200);
    let mut state = PsaemState::init(model, data.len(), &mut r).unwrap();
    let mut err = None;
    for _ in 0..200 {
        if let Err(e) = psaem_step(&mut state, &data, &cfg, &mut r, &mut |_| {}) {
            err = Some(e);
            break;
        }
    }
    match err {
        Some(JmlsError::PersistentStarvation {
            mode,
            iterations,
            k,
        }) => {
            assert_eq!(mode, 2);
            assert_eq!(iterations, 51);
            assert_eq!(k, 51);
        }
        other => panic!("expected starvation, got {other:?}"),
    }
}

#[test]
fn started_at_truth_does_not_diverge() {
    let mut r = rng(84);
    let truth = draw_example1_model(&mut r, &DrawRanges::default());
    let u = generate_input(2000, 1, 0.9, &mut r).unwrap();
    let (data, _) = simulate(&truth, &u, &mut r).unwrap();
    let mut curve = Vec::new();
    rb_psaem(
        truth.clone(),
        &data,
        &PsaemConfig::new(3, 100),
        &mut r,
        |rep| {
            curve.push(match_modes(&truth, rep.theta).unwrap().mean);
        },
    )
    .unwrap();
    let ceiling = curve[..10].iter().cloned().fold(0.0, f64::max);
    let late = curve[50..].iter().cloned().fold(0.0, f64::max);
    assert!(late <= ceiling, "late {late} above early ceiling {ceiling}");
}

#[test]
fn rejects_bad_arguments() {
    let mut r = rng(85);
    let truth = random_model(&mut r, 1, 1, 1, 2);
    let data = random_data(&mut r, &truth, 20);
    assert!(rb_psaem(
        truth.clone(),
        &data,
        &PsaemConfig::new(1, 3),
        &mut r,
        |_| {}
    )
    .is_err());
    let mut bad = truth.clone();
    bad.pi[(0, 0)] = 0.2;
    assert!(matches!(
        rb_psaem(bad, &data, &PsaemConfig::new(3, 3), &mut r, |_| {}),
        Err(JmlsError::InvalidModel(_))
    ));
    let short = data.slice(0..10);
    let state = PsaemState::init(truth, 20, &mut r).unwrap();
    assert!(resume_psaem(state, &short, &PsaemConfig::new(3, 3), &mut r, &mut |_| {}).is_err());
}
