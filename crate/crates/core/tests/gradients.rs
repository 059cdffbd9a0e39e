//! Central finite differences against every analytic gradient of the
//! objective, with occlusion masks held fixed.

mod common;

use std::time::Instant;

use common::gradient::{
    perturbed_all, scene, standard_checks, worst_error, Centre, HEIGHT, KNOT_MARGIN, REL_TOL, STEP,
    WIDTH,
};
use lsfuse::image_ops::{warp_by_disparity, WarpDirection};
use lsfuse::{DenseDisparityField, Grid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn check(name: &str) {
    let (_, weights, centre) = standard_checks()
        .into_iter()
        .find(|(n, _, _)| *n == name)
        .expect("known check");
    let (worst, checked) = worst_error(weights, centre);
    assert!(
        checked > 0,
        "{name}: no coordinate above the magnitude floor"
    );
    assert!(
        worst < REL_TOL,
        "{name}: max relative error {worst:e} over {checked} coordinates"
    );
}

#[test]
fn lidar_gradient_matches_finite_differences() {
    check("lidar");
}

#[test]
fn photometric_gradient_matches_finite_differences() {
    check("photometric");
}

#[test]
fn census_gradient_matches_finite_differences() {
    check("census");
}

#[test]
fn image_gradient_term_matches_finite_differences() {
    check("image-gradient");
}

#[test]
fn full_warping_gradient_matches_finite_differences() {
    check("warping");
}

#[test]
fn smoothness_gradient_matches_finite_differences() {
    check("smoothness");
}

#[test]
fn plane_gradient_matches_finite_differences() {
    check("plane");
}

#[test]
fn root_plane_gradient_matches_finite_differences() {
    check("plane-root");
}

#[test]
fn total_gradient_matches_finite_differences_in_time() {
    let start = Instant::now();
    check("total");
    assert!(start.elapsed().as_secs() < 120);
}

#[test]
fn warp_slope_matches_finite_differences() {
    let pair = scene(3, Centre::Wave).pair;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for direction in [WarpDirection::ToLeft, WarpDirection::ToRight] {
        let d = Grid::from_fn(WIDTH, HEIGHT, |u, v| loop {
            let d =
                4.0 + (u as f64 * 0.1).sin() + (v as f64 * 0.07).cos() + rng.random_range(0.0..1.0);
            let frac = d - d.floor();
            if (KNOT_MARGIN..=1.0 - KNOT_MARGIN).contains(&frac) {
                return d;
            }
        });
        let d = DenseDisparityField::new(d);
        let warped = warp_by_disparity(&pair.right, &d, direction);
        let plus = warp_by_disparity(&pair.right, &perturbed_all(&d, STEP), direction);
        let minus = warp_by_disparity(&pair.right, &perturbed_all(&d, -STEP), direction);
        let mut checked = 0;
        for i in 0..WIDTH * HEIGHT {
            if !(warped.valid.as_slice()[i]
                && plus.valid.as_slice()[i]
                && minus.valid.as_slice()[i])
            {
                continue;
            }
            for c in 0..3 {
                let a = warped.slope.as_slice()[i][c];
                if a.abs() <= 1e-6 {
                    continue;
                }
                let numeric =
                    (plus.values.as_slice()[i][c] - minus.values.as_slice()[i][c]) / (2.0 * STEP);
                assert!(
                    (numeric - a).abs() / a.abs() < REL_TOL,
                    "pixel {i} channel {c}"
                );
                checked += 1;
            }
        }
        assert!(checked > WIDTH * HEIGHT);
    }
}
