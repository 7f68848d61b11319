mod common;

use arflow::numcore::gradcheck;

#[test]
fn every_op_matches_finite_differences() {
    for (name, inputs, f) in common::op_cases() {
        let report = gradcheck::check(&inputs, 1e-5, 1e-6, &f).unwrap();
        assert!(report.passes(2e-4), "{name}: {report:?}");
        assert!(report.checked > 0);
    }
}

#[test]
fn two_chunk_model_loss_matches_finite_differences() {
    let report = common::model_gradcheck().unwrap();
    assert!(report.passes(2e-4), "{report:?}");
}
