mod common;

use common::*;

#[test]
fn trilinear_backward_matches_finite_differences() {
    let st = grad_trilinear(20, 101);
    assert!(st.max <= OPERATOR_TOL, "max rel err {:.3e}", st.max);
}

#[test]
fn aggregation_backward_matches_finite_differences() {
    let st = grad_aggregation(20, 102);
    assert!(st.max <= OPERATOR_TOL, "max rel err {:.3e}", st.max);
}

#[test]
fn conv_backward_matches_finite_differences() {
    let st = grad_conv(20, 103);
    assert!(st.max <= OPERATOR_TOL, "max rel err {:.3e}", st.max);
}

#[test]
fn weight_branch_matches_finite_differences() {
    let st = grad_weight_branch(6, 104);
    assert!(st.max <= OPERATOR_TOL, "max rel err {:.3e}", st.max);
}

#[test]
fn end_to_end_matches_small_step_differences() {
    let st = grad_end_to_end_f64(2, 105);
    assert!(st.max <= END_TO_END_TOL, "max rel err {:.3e}", st.max);
}
