mod common;

use common::{clstm_two_frame_check, omcnn_loss_check, op_checks, GRAD_TOL};

#[test]
fn every_op_matches_finite_differences() {
    let mut failures = Vec::new();
    for (name, report) in op_checks() {
        let r = report.unwrap_or_else(|e| panic!("{name}: {e}"));
        if !r.passes(GRAD_TOL) {
            failures.push(format!("{name}: {:.3e} at {:?}", r.max_rel_error, r.worst));
        }
    }
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn omcnn_loss_gradient() {
    let r = omcnn_loss_check(2).unwrap();
    assert!(r.passes(GRAD_TOL), "{:.3e} at {:?}", r.max_rel_error, r.worst);
}

#[test]
fn clstm_two_frame_gradient() {
    let r = clstm_two_frame_check(3).unwrap();
    assert!(r.passes(GRAD_TOL), "{:.3e} at {:?}", r.max_rel_error, r.worst);
}
