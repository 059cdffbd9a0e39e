//! Plane fitting against an explicit hat-matrix projection.

mod common;

use common::plane::{oracle_residual, run_plane_oracle, segmentations};
use lsfuse::energy::segment_residual;
use lsfuse::Grid;

#[test]
fn residuals_match_the_hat_matrix_on_twenty_segmentations() {
    let report = run_plane_oracle();
    assert!(
        report.segments_checked > 100,
        "only {} segments",
        report.segments_checked
    );
    assert!(
        report.max_deviation < 1e-9,
        "deviation {:e}",
        report.max_deviation
    );
    assert!(
        report.max_relative_loss_gap < 1e-9,
        "relative gap {:e}",
        report.max_relative_loss_gap
    );
}

#[test]
fn planar_fields_have_no_residual() {
    let report = run_plane_oracle();
    assert!(
        report.max_planar_residual < 1e-12,
        "residual {:e}",
        report.max_planar_residual
    );
    assert!(
        report.max_planar_loss < 1e-12,
        "loss {:e}",
        report.max_planar_loss
    );
}

#[test]
fn collinear_segments_are_degenerate_for_both() {
    let d = Grid::from_fn(10, 10, |u, v| (u * v) as f64);
    let row: Vec<usize> = (0..10).map(|u| 30 + u).collect();
    assert!(segment_residual(&d, &row).is_none());
    assert!(oracle_residual(&d, &row).is_none());
    assert!(segment_residual(&d, &row[..2]).is_none());
}

#[test]
fn there_are_twenty_segmentations() {
    assert_eq!(segmentations().len(), 20);
}
