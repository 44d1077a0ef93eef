//! Kernels against straightforward reference loops.

mod common;

const CASES: usize = 1000;
const TOL: f64 = 1e-12;

#[test]
fn conv2d_matches_reference() {
    let err = common::conv_oracle(CASES, 11);
    assert!(err <= TOL, "max deviation {err:e}");
}

#[test]
fn conv_transpose2d_matches_reference() {
    let err = common::conv_transpose_oracle(CASES, 12);
    assert!(err <= TOL, "max deviation {err:e}");
}

#[test]
fn pooling_matches_reference() {
    let err = common::pool_oracle(CASES, 13);
    assert!(err <= TOL, "max deviation {err:e}");
}

#[test]
fn batchnorm_matches_reference() {
    let err = common::batchnorm_oracle(CASES, 14);
    assert!(err <= TOL, "max deviation {err:e}");
}

#[test]
fn confusion_matches_voxel_tally() {
    assert_eq!(common::confusion_oracle(CASES, 15), 0);
}
