//! Brute-force metrics: per-pixel error lists, then plain counts and means.

use lsfuse::data_io::CalibrationSet;
use lsfuse::eval::compute_metrics;
use lsfuse::{DenseDisparityField, Grid, SparseDisparityMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Brute {
    pub abs_rel: f64,
    pub bad2: f64,
    pub bad3: f64,
    pub bad5: f64,
    pub delta_125: f64,
    pub count: usize,
}

pub fn brute_metrics(
    pred: &Grid<f64>,
    gt: &SparseDisparityMap,
    baseline: f64,
    focal: f64,
) -> Brute {
    let (w, h) = gt.dims();
    let mut errors = Vec::new();
    let mut rel = Vec::new();
    let mut ratio = Vec::new();
    for v in 0..h {
        for u in 0..w {
            if !gt.mask[(u, v)] {
                continue;
            }
            let (p, g) = (pred[(u, v)], gt.values[(u, v)]);
            errors.push((p - g).abs());
            let depth_p = baseline * focal / p.max(0.1);
            let depth_g = baseline * focal / g.max(0.1);
            rel.push((depth_p - depth_g).abs() / depth_g);
            ratio.push((depth_p / depth_g).max(depth_g / depth_p));
        }
    }
    let n = errors.len() as f64;
    let frac = |t: f64| errors.iter().filter(|&&e| e > t).count() as f64 / n;
    Brute {
        abs_rel: rel.iter().sum::<f64>() / n,
        bad2: frac(2.0),
        bad3: frac(3.0),
        bad5: frac(5.0),
        delta_125: ratio.iter().filter(|&&r| r < 1.25).count() as f64 / n,
        count: errors.len(),
    }
}

pub struct MetricsOracleReport {
    pub instances: usize,
    pub mismatches: usize,
    pub identity_ok: bool,
}

/// Random instances with sizes, densities and error scales drawn per
/// instance; comparison is exact.
pub fn run_metrics_oracle(instances: usize) -> MetricsOracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatches = 0;
    let mut identity_ok = true;
    for _ in 0..instances {
        let (w, h) = (rng.random_range(1..40), rng.random_range(1..30));
        let focal = rng.random_range(100.0..1000.0);
        let baseline = rng.random_range(0.05..1.0);
        let calib = CalibrationSet::synthetic(w, h, focal, baseline).expect("calibration");
        let density = rng.random_range(0.05..1.0);
        let scale: f64 = rng.random_range(0.0..10.0);
        let mut gt = SparseDisparityMap::empty(w, h);
        let mut pred = Grid::new(w, h, 0.0);
        for i in 0..w * h {
            let g: f64 = rng.random_range(0.0..80.0);
            pred.as_mut_slice()[i] = (g + rng.random_range(-scale..=scale)).clamp(0.0, 192.0);
            if rng.random_bool(density) {
                gt.values.as_mut_slice()[i] = g;
                gt.mask.as_mut_slice()[i] = true;
            }
        }
        if gt.mask.count_true() == 0 {
            gt.mask.as_mut_slice()[0] = true;
        }
        let ours =
            compute_metrics(&DenseDisparityField::new(pred.clone()), &gt, &calib).expect("metrics");
        let brute = brute_metrics(&pred, &gt, baseline, focal);
        let same = ours.abs_rel == brute.abs_rel
            && ours.bad2 == brute.bad2
            && ours.bad3 == brute.bad3
            && ours.bad5 == brute.bad5
            && ours.delta_125 == brute.delta_125
            && ours.count == brute.count
            && ours.density == 1.0;
        mismatches += (!same) as usize;

        let identity = compute_metrics(&DenseDisparityField::new(gt.values.clone()), &gt, &calib)
            .expect("metrics");
        identity_ok &= identity.abs_rel == 0.0
            && identity.bad2 == 0.0
            && identity.bad3 == 0.0
            && identity.bad5 == 0.0
            && identity.delta_125 == 1.0;
    }
    MetricsOracleReport {
        instances,
        mismatches,
        identity_ok,
    }
}
