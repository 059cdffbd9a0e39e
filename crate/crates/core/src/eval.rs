//! Disparity and depth error metrics, a nearest-neighbour Lidar baseline, and
//! the sparsity / noise sweep harnesses.

use std::fmt::Write as _;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data_io::{CalibrationSet, SceneBundle};
use crate::error::{Error, Result};
pub use crate::geometry::nearest_neighbour_fill;
use crate::geometry::{disparity_to_depth, DenseDisparityField, SparseDisparityMap, D_MAX};
use crate::grid::Grid;
use crate::pipeline::{run_feedback_loop, FusionConfig, FusionResult};

/// Predicted (and reference) disparities are floored here before depth conversion.
pub const DISPARITY_FLOOR: f64 = 0.1;

/// Space in which the relative error is measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RelativeErrorDomain {
    #[default]
    Depth,
    Disparity,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub abs_rel: f64,
    pub bad2: f64,
    pub bad3: f64,
    pub bad5: f64,
    pub delta_125: f64,
    /// Valid fraction of the prediction.
    pub density: f64,
    pub count: usize,
    pub disparity_floor: f64,
    pub domain: RelativeErrorDomain,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "abs_rel,bad2,bad3,bad5,delta_125,density,count";

    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        for (k, v) in [
            ("abs_rel", self.abs_rel),
            ("bad2", self.bad2),
            ("bad3", self.bad3),
            ("bad5", self.bad5),
            ("delta_125", self.delta_125),
            ("density", self.density),
        ] {
            let _ = writeln!(s, "{k}={v:.6}");
        }
        let _ = writeln!(s, "count={}", self.count);
        let _ = writeln!(s, "disparity_floor={}", self.disparity_floor);
        let domain = match self.domain {
            RelativeErrorDomain::Depth => "depth",
            RelativeErrorDomain::Disparity => "disparity",
        };
        let _ = writeln!(s, "abs_rel_domain={domain}");
        s
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            self.abs_rel, self.bad2, self.bad3, self.bad5, self.delta_125, self.density, self.count
        )
    }
}

/// Metrics of a dense prediction over the valid ground-truth pixels.
pub fn compute_metrics(
    pred: &DenseDisparityField,
    gt: &SparseDisparityMap,
    calib: &CalibrationSet,
) -> Result<MetricsReport> {
    compute_metrics_with(pred.grid(), None, gt, calib, RelativeErrorDomain::Depth)
}

/// Metrics of a sparse prediction over pixels valid in both maps; density is
/// the prediction's valid fraction.
pub fn compute_sparse_metrics(
    pred: &SparseDisparityMap,
    gt: &SparseDisparityMap,
    calib: &CalibrationSet,
) -> Result<MetricsReport> {
    compute_metrics_with(
        &pred.values,
        Some(&pred.mask),
        gt,
        calib,
        RelativeErrorDomain::Depth,
    )
}

pub fn compute_metrics_with(
    pred: &Grid<f64>,
    pred_mask: Option<&Grid<bool>>,
    gt: &SparseDisparityMap,
    calib: &CalibrationSet,
    domain: RelativeErrorDomain,
) -> Result<MetricsReport> {
    if pred.dims() != gt.dims() || pred_mask.is_some_and(|m| m.dims() != gt.dims()) {
        return Err(Error::Shape(format!(
            "prediction {:?}, ground truth {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    let mut count = 0usize;
    let (mut bad2, mut bad3, mut bad5, mut delta) = (0usize, 0usize, 0usize, 0usize);
    let mut rel = 0.0;
    for (i, (&m, &g)) in gt
        .mask
        .as_slice()
        .iter()
        .zip(gt.values.as_slice())
        .enumerate()
    {
        if !m || pred_mask.is_some_and(|pm| !pm.as_slice()[i]) {
            continue;
        }
        let p = pred.as_slice()[i];
        count += 1;
        let err = (p - g).abs();
        bad2 += (err > 2.0) as usize;
        bad3 += (err > 3.0) as usize;
        bad5 += (err > 5.0) as usize;
        let zp = disparity_to_depth(p.max(DISPARITY_FLOOR), calib.baseline, calib.focal)?;
        let zg = disparity_to_depth(g.max(DISPARITY_FLOOR), calib.baseline, calib.focal)?;
        rel += match domain {
            RelativeErrorDomain::Depth => (zp - zg).abs() / zg,
            RelativeErrorDomain::Disparity => err / g.max(DISPARITY_FLOOR),
        };
        if (zp / zg).max(zg / zp) < 1.25 {
            delta += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyGroundTruth);
    }
    let n = count as f64;
    let density = match pred_mask {
        None => 1.0,
        Some(m) => m.count_true() as f64 / m.len() as f64,
    };
    Ok(MetricsReport {
        abs_rel: rel / n,
        bad2: bad2 as f64 / n,
        bad3: bad3 as f64 / n,
        bad5: bad5 as f64 / n,
        delta_125: delta as f64 / n,
        density,
        count,
        disparity_floor: DISPARITY_FLOOR,
        domain,
    })
}

/// How a sweep thins the Lidar input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SparsityControl {
    /// Keep the row bands of this many beams out of [`FULL_BEAMS`].
    Beams(usize),
    /// Keep this fraction of points, chosen uniformly.
    KeepFraction(f64),
}

impl SparsityControl {
    fn value(self) -> f64 {
        match self {
            SparsityControl::Beams(b) => b as f64,
            SparsityControl::KeepFraction(f) => f,
        }
    }
}

pub const FULL_BEAMS: usize = 64;

/// Emulates a sensor with `beams` lines by splitting the rows into
/// [`FULL_BEAMS`] equal bands and keeping every `FULL_BEAMS / beams`-th band.
pub fn beam_decimate(map: &SparseDisparityMap, beams: usize) -> Result<SparseDisparityMap> {
    if beams > FULL_BEAMS {
        return Err(Error::InvalidInput(format!(
            "at most {FULL_BEAMS} beams, got {beams}"
        )));
    }
    let (w, h) = map.dims();
    if beams == 0 {
        return Ok(SparseDisparityMap::empty(w, h));
    }
    let stride = FULL_BEAMS as f64 / beams as f64;
    let keep_band: Vec<bool> = (0..FULL_BEAMS)
        .map(|b| {
            let k = (b as f64 / stride).floor();
            (k * stride).round() as usize == b
        })
        .collect();
    let keep = Grid::from_fn(w, h, |_, v| {
        keep_band[(v * FULL_BEAMS / h).min(FULL_BEAMS - 1)]
    });
    Ok(map.restrict(&keep))
}

/// Keeps `round(fraction * valid)` points chosen by a seeded draw.
pub fn keep_fraction(
    map: &SparseDisparityMap,
    fraction: f64,
    seed: u64,
) -> Result<SparseDisparityMap> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidInput(format!(
            "keep fraction must lie in [0, 1], got {fraction}"
        )));
    }
    let valid: Vec<usize> = (0..map.mask.len())
        .filter(|&i| map.mask.as_slice()[i])
        .collect();
    let amount = (fraction * valid.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Grid::new(map.width(), map.height(), false);
    for j in index::sample(&mut rng, valid.len(), amount) {
        keep.as_mut_slice()[valid[j]] = true;
    }
    Ok(map.restrict(&keep))
}

/// Adds `N(0, sigma)` to a seeded subset of `fraction` of the valid points.
/// The subset depends only on `seed`, not on `sigma`.
pub fn add_lidar_noise(
    map: &SparseDisparityMap,
    sigma: f64,
    fraction: f64,
    seed: u64,
) -> Result<SparseDisparityMap> {
    if !(sigma >= 0.0 && sigma.is_finite()) || !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidInput(format!(
            "bad noise settings sigma={sigma} fraction={fraction}"
        )));
    }
    let valid: Vec<usize> = (0..map.mask.len())
        .filter(|&i| map.mask.as_slice()[i])
        .collect();
    let amount = (fraction * valid.len() as f64).round() as usize;
    let mut pick = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = index::sample(&mut pick, valid.len(), amount).into_vec();
    chosen.sort_unstable();
    let mut out = map.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let mut draw = ChaCha8Rng::seed_from_u64(seed);
    draw.set_stream(1);
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
    for j in chosen {
        let i = valid[j];
        let d = out.values.as_slice()[i] + normal.sample(&mut draw);
        out.values.as_mut_slice()[i] = d.clamp(DISPARITY_FLOOR, D_MAX);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepKind {
    Sparsity,
    Noise,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub control: f64,
    pub report: MetricsReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub kind: SweepKind,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let name = match self.kind {
            SweepKind::Sparsity => "control",
            SweepKind::Noise => "sigma",
        };
        let mut s = format!("{name},{}\n", MetricsReport::CSV_HEADER);
        for p in &self.points {
            let _ = writeln!(s, "{},{}", p.control, p.report.to_csv_row());
        }
        s
    }
}

fn check_monotone(values: &[f64]) -> Result<()> {
    let up = values.windows(2).all(|w| w[0] < w[1]);
    let down = values.windows(2).all(|w| w[0] > w[1]);
    if up || down {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "sweep controls must be strictly monotone: {values:?}"
        )))
    }
}

/// Runs the fusion on `scene` and scores the left field against its ground truth.
pub fn fuse_and_score(
    scene: &SceneBundle,
    cfg: &FusionConfig,
) -> Result<(FusionResult, MetricsReport)> {
    let gt = scene
        .gt
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("scene has no ground truth".into()))?;
    let result = run_feedback_loop(scene, cfg)?;
    let report = compute_metrics(&result.left, gt, &scene.calib)?;
    Ok((result, report))
}

pub fn sparsity_sweep(
    scene: &SceneBundle,
    cfg: &FusionConfig,
    controls: &[SparsityControl],
    seed: u64,
) -> Result<SweepResult> {
    check_monotone(&controls.iter().map(|c| c.value()).collect::<Vec<_>>())?;
    let (l, r) = scene.lidar_maps();
    let mut points = Vec::with_capacity(controls.len());
    for &c in controls {
        let (tl, tr) = match c {
            SparsityControl::Beams(b) => (beam_decimate(&l, b)?, beam_decimate(&r, b)?),
            SparsityControl::KeepFraction(f) => {
                (keep_fraction(&l, f, seed)?, keep_fraction(&r, f, seed ^ 1)?)
            }
        };
        let (_, report) = fuse_and_score(&scene.with_lidar(tl, tr), cfg)?;
        points.push(SweepPoint {
            control: c.value(),
            report,
        });
    }
    Ok(SweepResult {
        kind: SweepKind::Sparsity,
        points,
    })
}

pub fn noise_sweep(
    scene: &SceneBundle,
    cfg: &FusionConfig,
    sigmas: &[f64],
    fraction: f64,
    seed: u64,
) -> Result<SweepResult> {
    check_monotone(sigmas)?;
    let (l, r) = scene.lidar_maps();
    let mut points = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let nl = add_lidar_noise(&l, sigma, fraction, seed)?;
        let nr = add_lidar_noise(&r, sigma, fraction, seed ^ 1)?;
        let (_, report) = fuse_and_score(&scene.with_lidar(nl, nr), cfg)?;
        points.push(SweepPoint {
            control: sigma,
            report,
        });
    }
    Ok(SweepResult {
        kind: SweepKind::Noise,
        points,
    })
}
