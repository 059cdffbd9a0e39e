//! Finite-difference oracle for the analytic gradients of the objective,
//! with occlusion masks held fixed.
//!
//! Fields are random and smooth, conditioned so that the difference quotient
//! is a valid oracle at every coordinate: no warp sample sits within 0.15 px
//! of an interpolation knot, no Lidar residual sits near the truncation
//! radius, no colour or colour-gradient residual sits inside the
//! high-curvature core of the robust penalty, and no first or second
//! difference of the field sits near zero.

use lsfuse::data_io::{generate_synthetic_scene, SceneBundle, SynthSpec};
use lsfuse::energy::{EnergyProblem, LossWeights, OcclusionMasks, PlaneNorm, TermToggles};
use lsfuse::image_ops::{sample_row, RgbImage, WarpDirection};
use lsfuse::segmentation::slic_segment;
use lsfuse::{DenseDisparityField, Grid, Side, SparseDisparityMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const WIDTH: usize = 64;
pub const HEIGHT: usize = 32;
pub const STEP: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-4;
pub const MAGNITUDE_FLOOR: f64 = 1e-8;

pub const KNOT_MARGIN: f64 = 0.15;
const TRUNCATION_MARGIN: f64 = 0.05;
/// The robust penalty bends on a scale of 1e-3. Near zero a central
/// difference has relative truncation error near `(slope * STEP)^2 / 2e-6`;
/// it falls as the fourth power of the residual beyond that scale, which
/// matters where contributions cancel to a small total.
const ROBUST_MARGIN: f64 = 5e-3;
/// Residuals moving slower than this per pixel of disparity shift by at most
/// 2e-6 under a perturbation of `STEP` and need no margin.
const SLOPE_FLOOR: f64 = 2e-2;
/// Smoothness penalises first and second differences of `d` through a
/// smoothed absolute value with a 1e-6 core; a perturbation of `STEP` moves
/// a second difference by up to `2 * STEP`.
const DIFFERENCE_MARGIN: f64 = 1e-3;

type Sampled = Option<([f64; 3], [f64; 3])>;

fn warped_colour(source: &RgbImage, u: usize, v: usize, d: f64, sign: f64) -> Sampled {
    sample_row(source, u as f64 + sign * d, v)
}

fn residuals_clear(a: [f64; 3], b: [f64; 3], slope: [f64; 3]) -> bool {
    (0..3).all(|c| (a[c] - b[c]).abs() >= ROBUST_MARGIN || slope[c] < SLOPE_FLOOR)
}

/// Raster-order rejection sampling: each pixel draws until every residual it
/// closes with its already fixed left and upper neighbours is clear. A row
/// that dead-ends is redrawn from its first pixel.
fn conditioned_field(
    rng: &mut ChaCha8Rng,
    centre: &Grid<f64>,
    observed: &RgbImage,
    source: &RgbImage,
    side: Side,
    lidar: &SparseDisparityMap,
    truncation: f64,
) -> DenseDisparityField {
    let sign = WarpDirection::reconstructing(side).sign();
    let mut grid = Grid::new(WIDTH, HEIGHT, 0.0);
    let mut est: Grid<Sampled> = Grid::new(WIDTH, HEIGHT, None);
    let acceptable = |grid: &Grid<f64>, est: &Grid<Sampled>, u: usize, v: usize, d: f64| {
        let frac = d - d.floor();
        if !(KNOT_MARGIN..=1.0 - KNOT_MARGIN).contains(&frac) {
            return None;
        }
        if let Some(l) = lidar.get(u, v) {
            if ((d - l).abs() - truncation).abs() < TRUNCATION_MARGIN {
                return None;
            }
        }
        let differences_clear = [(1, 0), (0, 1)].iter().all(|&(du, dv)| {
            let first = (u >= du && v >= dv).then(|| d - grid[(u - du, v - dv)]);
            let second = (u >= 2 * du && v >= 2 * dv)
                .then(|| d - 2.0 * grid[(u - du, v - dv)] + grid[(u - 2 * du, v - 2 * dv)]);
            [first, second]
                .iter()
                .flatten()
                .all(|x: &f64| x.abs() >= DIFFERENCE_MARGIN)
        });
        if !differences_clear {
            return None;
        }
        let here = warped_colour(source, u, v, d, sign);
        let obs = observed[(u, v)];
        if let Some((e, es)) = here {
            if !residuals_clear(e, obs, es.map(f64::abs)) {
                return None;
            }
        }
        for (nu, nv) in [(u.wrapping_sub(1), v), (u, v.wrapping_sub(1))] {
            if nu >= WIDTH || nv >= HEIGHT {
                continue;
            }
            if let (Some((e, es)), Some((n, ns))) = (here, est[(nu, nv)]) {
                let o = observed[(nu, nv)];
                let est_diff = [e[0] - n[0], e[1] - n[1], e[2] - n[2]];
                let obs_diff = [obs[0] - o[0], obs[1] - o[1], obs[2] - o[2]];
                let slope = [0, 1, 2].map(|c| es[c].abs().max(ns[c].abs()));
                if !residuals_clear(est_diff, obs_diff, slope) {
                    return None;
                }
            }
        }
        Some(here)
    };
    for v in 0..HEIGHT {
        let mut restarts = 0;
        'row: loop {
            restarts += 1;
            assert!(restarts < 1_000, "could not condition row {v} on {side:?}");
            for u in 0..WIDTH {
                let placed = (0..500).find_map(|_| {
                    let d = centre[(u, v)] + rng.random_range(-1.25..1.25);
                    acceptable(&grid, &est, u, v, d).map(|here| (d, here))
                });
                match placed {
                    Some((d, here)) => {
                        grid[(u, v)] = d;
                        est[(u, v)] = here;
                    }
                    None => continue 'row,
                }
            }
            break;
        }
    }
    DenseDisparityField::new(grid)
}

pub struct Fixture {
    pub problem: EnergyProblem,
    pub left: DenseDisparityField,
    pub right: DenseDisparityField,
    pub masks: OcclusionMasks,
}

/// Where the random fields are centred.
#[derive(Clone, Copy)]
pub enum Centre {
    /// A smooth sinusoid unrelated to the scene.
    Wave,
    /// The ground truth, with outlier-free Lidar, which keeps the total
    /// energy near 0.1 and the roundoff floor of the quotient near 1e-12 * E.
    Truth,
}

pub fn scene(seed: u64, centre: Centre) -> SceneBundle {
    let spec = SynthSpec {
        width: WIDTH,
        height: HEIGHT,
        disparity_range: (3.0, 9.0),
        outlier_fraction: match centre {
            Centre::Wave => 0.2,
            Centre::Truth => 0.0,
        },
        seed,
        ..SynthSpec::default()
    };
    generate_synthetic_scene(&spec).unwrap()
}

fn centre_grid(scene: &SceneBundle, side: Side, centre: Centre, rng: &mut ChaCha8Rng) -> Grid<f64> {
    match centre {
        Centre::Wave => {
            let phase: f64 = rng.random_range(0.0..6.0);
            Grid::from_fn(WIDTH, HEIGHT, |u, v| {
                7.0 + 2.0 * (u as f64 * 0.08 + phase).sin() + 1.5 * (v as f64 * 0.11).cos()
            })
        }
        Centre::Truth => {
            let gt = match side {
                Side::Left => scene.gt.as_ref(),
                Side::Right => scene.gt_right.as_ref(),
            };
            // Disoccluded pixels carry no truth; fields must stay clear of the
            // projection onto `[0, d_max]`.
            let gt = gt.expect("synthetic scenes carry ground truth");
            Grid::from_fn(WIDTH, HEIGHT, |u, v| gt.get(u, v).unwrap_or(6.0).max(2.0))
        }
    }
}

pub fn fixture(weights: LossWeights, seed: u64, centre: Centre) -> Fixture {
    let scene = scene(seed, centre);
    let pair = &scene.pair;
    let (lidar_l, lidar_r) = scene.lidar_maps();
    let segs = [
        slic_segment(&pair.left, 12, 10.0, 10).unwrap(),
        slic_segment(&pair.right, 12, 10.0, 10).unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let t = weights.lidar_truncation;
    let centre_l = centre_grid(&scene, Side::Left, centre, &mut rng);
    let centre_r = centre_grid(&scene, Side::Right, centre, &mut rng);
    let left = conditioned_field(
        &mut rng,
        &centre_l,
        &pair.left,
        &pair.right,
        Side::Left,
        &lidar_l,
        t,
    );
    let right = conditioned_field(
        &mut rng,
        &centre_r,
        &pair.right,
        &pair.left,
        Side::Right,
        &lidar_r,
        t,
    );
    let problem = EnergyProblem::new(pair, [lidar_l, lidar_r], segs, weights).unwrap();
    let masks = problem.occlusion_masks(&left, &right);
    Fixture {
        problem,
        left,
        right,
        masks,
    }
}

pub fn perturbed(d: &DenseDisparityField, i: usize, delta: f64) -> DenseDisparityField {
    let mut g = d.grid().clone();
    g.as_mut_slice()[i] += delta;
    DenseDisparityField::new(g)
}

pub fn perturbed_all(d: &DenseDisparityField, delta: f64) -> DenseDisparityField {
    DenseDisparityField::new(d.grid().map(|x| x + delta))
}

/// Largest relative error over all coordinates whose analytic gradient
/// exceeds the floor, and how many such coordinates there were.
pub fn max_relative_error(f: &Fixture) -> (f64, usize) {
    let base = f.problem.evaluate(&f.left, &f.right, &f.masks);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for side in [Side::Left, Side::Right] {
        let analytic = base.grad(side);
        for i in 0..WIDTH * HEIGHT {
            let a = analytic.as_slice()[i];
            if a.abs() <= MAGNITUDE_FLOOR {
                continue;
            }
            let eval = |delta: f64| {
                let (l, r) = match side {
                    Side::Left => (perturbed(&f.left, i, delta), f.right.clone()),
                    Side::Right => (f.left.clone(), perturbed(&f.right, i, delta)),
                };
                f.problem.evaluate(&l, &r, &f.masks).total
            };
            let numeric = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
            worst = worst.max((numeric - a).abs() / a.abs());
            checked += 1;
        }
    }
    (worst, checked)
}

pub fn only(lidar: bool, warping: bool, smoothness: bool, plane: bool) -> TermToggles {
    TermToggles {
        lidar,
        warping,
        smoothness,
        plane,
    }
}

pub fn with(enabled: TermToggles) -> LossWeights {
    LossWeights {
        enabled,
        ..LossWeights::default()
    }
}

/// Worst relative error over two seeded fixtures.
pub fn worst_error(weights: LossWeights, centre: Centre) -> (f64, usize) {
    [1, 2].iter().fold((0.0f64, 0), |(worst, checked), &seed| {
        let (w, c) = max_relative_error(&fixture(weights, seed, centre));
        (worst.max(w), checked + c)
    })
}

/// Every term on its own, the three matching sub-terms, both plane norms,
/// and the total.
pub fn standard_checks() -> Vec<(&'static str, LossWeights, Centre)> {
    let warping = with(only(false, true, false, false));
    vec![
        ("lidar", with(only(true, false, false, false)), Centre::Wave),
        (
            "photometric",
            LossWeights {
                census: 0.0,
                gradient: 0.0,
                ..warping
            },
            Centre::Wave,
        ),
        // Photometric is always part of the warping term; a large census
        // weight makes census dominate the checked gradient.
        (
            "census",
            LossWeights {
                census: 10.0,
                gradient: 0.0,
                ..warping
            },
            Centre::Wave,
        ),
        (
            "image-gradient",
            LossWeights {
                census: 0.0,
                gradient: 10.0,
                ..warping
            },
            Centre::Wave,
        ),
        ("warping", warping, Centre::Wave),
        (
            "smoothness",
            with(only(false, false, true, false)),
            Centre::Wave,
        ),
        ("plane", with(only(false, false, false, true)), Centre::Wave),
        (
            "plane-root",
            LossWeights {
                plane_norm: PlaneNorm::Root,
                ..with(only(false, false, false, true))
            },
            Centre::Wave,
        ),
        ("total", LossWeights::default(), Centre::Truth),
    ]
}
