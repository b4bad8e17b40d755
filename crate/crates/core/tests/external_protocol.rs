mod common;

use std::time::Duration;

use audexplain::predict::external_predict;
use audexplain::{Error, ExternalError};

#[test]
fn manifest_and_result_round_trip() {
    common::golden_round_trip().unwrap();
}

#[test]
fn results_are_matched_by_id() {
    common::golden_id_matching().unwrap();
}

#[test]
fn nonzero_exit_is_reported_with_diagnostics() {
    common::golden_nonzero_exit().unwrap();
}

#[test]
fn malformed_result_is_rejected() {
    common::golden_malformed().unwrap();
}

#[test]
fn missing_id_is_named() {
    common::golden_missing_id().unwrap();
}

#[test]
fn slow_predictor_times_out() {
    let dir = tempfile::tempdir().unwrap();
    let batch = vec![common::noise(2000, 0.1, 1)];
    let err = external_predict(
        &common::echo_command("sleep"),
        &batch,
        dir.path(),
        Duration::from_millis(300),
        &["x".to_string()],
    )
    .unwrap_err();
    assert!(matches!(err, Error::External(ExternalError::Timeout { .. })), "{err:?}");
}
