//! Stereo initialisation, the Verify/Update feedback loop that cleans Lidar
//! against the current disparity estimate, and the per-scene variational solver.

pub mod init;
pub mod optimize;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use init::{
    aggregate_costs, build_cost_volume, build_cost_volume_for, initialize_disparity, median3,
    soft_argmin, soft_argmin_scaled, CostVolume, InitConfig, MAX_MATCH_COST,
};
pub use optimize::{update_optimize, OptimizerConfig, OptimizerTrace, Pyramid, TraceEntry};

use crate::data_io::SceneBundle;
use crate::energy::{LossWeights, OcclusionMasks};
use crate::error::{Error, Result};
use crate::geometry::{
    density, nearest_median_fill, DenseDisparityField, SparseDisparityMap, D_MAX,
};
use crate::grid::Grid;
use crate::segmentation::{DEFAULT_COMPACTNESS, DEFAULT_ITERATIONS};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationConfig {
    pub compactness: f64,
    pub iterations: usize,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            compactness: DEFAULT_COMPACTNESS,
            iterations: DEFAULT_ITERATIONS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub weights: LossWeights,
    /// Largest |stereo - Lidar| disparity gap (px) at which a point is kept.
    pub verify_threshold: f64,
    pub rounds: usize,
    pub d_max: f64,
    /// Lidar neighbours whose median seeds pixels the stereo pair cannot resolve.
    pub seed_neighbours: usize,
    /// Compare Lidar against the 3x3 median of the estimate rather than the
    /// estimate itself, so single-pixel excursions onto a point cannot vouch for it.
    pub verify_median: bool,
    pub optimizer: OptimizerConfig,
    pub init: InitConfig,
    pub segmentation: SegmentationConfig,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            verify_threshold: 1.5,
            rounds: 5,
            d_max: D_MAX,
            seed_neighbours: 9,
            verify_median: true,
            optimizer: OptimizerConfig::default(),
            init: InitConfig::default(),
            segmentation: SegmentationConfig::default(),
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.verify_threshold.is_finite() && self.verify_threshold > 0.0) {
            return Err(Error::Config(format!(
                "verify_threshold must be > 0, got {}",
                self.verify_threshold
            )));
        }
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be >= 1".into()));
        }
        if !(self.d_max > 0.0 && self.d_max <= D_MAX) {
            return Err(Error::Config(format!(
                "d_max must lie in (0, {D_MAX}], got {}",
                self.d_max
            )));
        }
        if self.seed_neighbours == 0 {
            return Err(Error::Config("seed_neighbours must be >= 1".into()));
        }
        if self.segmentation.iterations == 0 || !(self.segmentation.compactness > 0.0) {
            return Err(Error::Config(
                "segmentation needs compactness > 0 and iterations >= 1".into(),
            ));
        }
        self.weights.validate()?;
        self.optimizer.validate()?;
        self.init.validate()
    }

    /// Parses a TOML document; absent keys keep their defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}

/// Keeps the Lidar points within `threshold` of the stereo estimate.
/// Returns the kept points and the keep mask.
pub fn verify_clean(
    stereo: &DenseDisparityField,
    lidar: &SparseDisparityMap,
    threshold: f64,
) -> Result<(SparseDisparityMap, Grid<bool>)> {
    if stereo.dims() != lidar.dims() {
        return Err(Error::Shape(format!(
            "stereo field {:?}, lidar {:?}",
            stereo.dims(),
            lidar.dims()
        )));
    }
    let keep = Grid::from_fn(lidar.width(), lidar.height(), |u, v| {
        lidar
            .get(u, v)
            .is_some_and(|d| (stereo[(u, v)] - d).abs() < threshold)
    });
    Ok((lidar.restrict(&keep), keep))
}

/// Replaces the values of `stereo` that fail the left-right check with the
/// median of the `neighbours` nearest Lidar points. Views without Lidar are
/// left unchanged.
pub fn seed_with_lidar(
    stereo: (&DenseDisparityField, &DenseDisparityField),
    lidar: (&SparseDisparityMap, &SparseDisparityMap),
    threshold: f64,
    neighbours: usize,
) -> Result<(DenseDisparityField, DenseDisparityField)> {
    let masks = OcclusionMasks::compute(stereo.0, stereo.1, threshold);
    let one = |field: &DenseDisparityField,
               map: &SparseDisparityMap,
               keep: &Grid<bool>|
     -> Result<DenseDisparityField> {
        if map.dims() != field.dims() {
            return Err(Error::Shape(format!(
                "lidar {:?}, field {:?}",
                map.dims(),
                field.dims()
            )));
        }
        if map.valid_count() == 0 {
            return Ok(field.clone());
        }
        let fill = nearest_median_fill(map, neighbours)?;
        Ok(DenseDisparityField::new(Grid::from_fn(
            field.width(),
            field.height(),
            |u, v| {
                if keep[(u, v)] {
                    field[(u, v)]
                } else {
                    fill[(u, v)]
                }
            },
        )))
    };
    Ok((
        one(stereo.0, lidar.0, &masks.left)?,
        one(stereo.1, lidar.1, &masks.right)?,
    ))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RoundTally {
    pub round: usize,
    pub kept_left: usize,
    pub kept_right: usize,
    pub removed_left: usize,
    pub removed_right: usize,
}

/// What the loop carries between rounds.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedbackState {
    pub round: usize,
    pub verify: (DenseDisparityField, DenseDisparityField),
    pub cleaned: (SparseDisparityMap, SparseDisparityMap),
    pub keep: (Grid<bool>, Grid<bool>),
    pub tallies: Vec<RoundTally>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionResult {
    pub left: DenseDisparityField,
    pub right: DenseDisparityField,
    /// Stereo-only initializer output.
    pub initial: (DenseDisparityField, DenseDisparityField),
    pub cleaned: (SparseDisparityMap, SparseDisparityMap),
    pub keep: (Grid<bool>, Grid<bool>),
    /// Solver pass on the uncleaned Lidar that produces the first Verify estimate.
    pub verify_trace: OptimizerTrace,
    /// One Update pass per round.
    pub traces: Vec<OptimizerTrace>,
    pub tallies: Vec<RoundTally>,
    pub input_density: (f64, f64),
    pub cleaned_density: (f64, f64),
}

impl FusionResult {
    /// Per-round tallies followed by every optimizer trace line.
    pub fn report_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "input_density_left={:.6} input_density_right={:.6} cleaned_density_left={:.6} cleaned_density_right={:.6}",
            self.input_density.0, self.input_density.1, self.cleaned_density.0, self.cleaned_density.1
        );
        for t in &self.tallies {
            let _ = writeln!(
                s,
                "round={} kept_left={} kept_right={} removed_left={} removed_right={}",
                t.round, t.kept_left, t.kept_right, t.removed_left, t.removed_right
            );
        }
        for line in self.verify_trace.to_key_values().lines() {
            let _ = writeln!(s, "phase=verify {line}");
        }
        for t in &self.traces {
            for line in t.to_key_values().lines() {
                let _ = writeln!(s, "phase=update {line}");
            }
        }
        s
    }
}

/// Verify against the current estimate, then Update with the surviving
/// points; repeated `cfg.rounds` times. The first estimate comes from the
/// solver fed the uncleaned Lidar, started from the stereo initializer seeded
/// with Lidar where the stereo pair is inconsistent. Each round filters the
/// raw input afresh, so points may come back.
pub fn run_feedback_loop(scene: &SceneBundle, cfg: &FusionConfig) -> Result<FusionResult> {
    cfg.validate()?;
    let pair = &scene.pair;
    let (raw_l, raw_r) = scene.lidar_maps();
    let initial = initialize_disparity(pair, &cfg.init, cfg.d_max)?;
    let seeded = seed_with_lidar(
        (&initial.0, &initial.1),
        (&raw_l, &raw_r),
        cfg.weights.occlusion_threshold,
        cfg.seed_neighbours,
    )?;
    let mut pyramid = Pyramid::build(pair, cfg)?;
    pyramid.set_lidar([&raw_l, &raw_r])?;
    let (vl, vr, verify_trace) = pyramid.optimize((&seeded.0, &seeded.1), cfg, 0)?;
    let mut state = FeedbackState {
        round: 0,
        verify: (vl, vr),
        cleaned: (raw_l.clone(), raw_r.clone()),
        keep: (raw_l.mask.clone(), raw_r.mask.clone()),
        tallies: Vec::with_capacity(cfg.rounds),
    };
    let mut traces = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        state.round = round;
        let (probe_l, probe_r) = if cfg.verify_median {
            (
                DenseDisparityField::new(median3(state.verify.0.grid())),
                DenseDisparityField::new(median3(state.verify.1.grid())),
            )
        } else {
            state.verify.clone()
        };
        let (cl, kl) = verify_clean(&probe_l, &raw_l, cfg.verify_threshold)?;
        let (cr, kr) = verify_clean(&probe_r, &raw_r, cfg.verify_threshold)?;
        state.tallies.push(RoundTally {
            round,
            kept_left: cl.valid_count(),
            kept_right: cr.valid_count(),
            removed_left: raw_l.valid_count() - cl.valid_count(),
            removed_right: raw_r.valid_count() - cr.valid_count(),
        });
        pyramid.set_lidar([&cl, &cr])?;
        let (fl, fr, trace) = pyramid.optimize((&state.verify.0, &state.verify.1), cfg, round)?;
        traces.push(trace);
        state.cleaned = (cl, cr);
        state.keep = (kl, kr);
        state.verify = (fl, fr);
    }
    let FeedbackState {
        verify: (left, right),
        cleaned,
        keep,
        tallies,
        ..
    } = state;
    Ok(FusionResult {
        left,
        right,
        initial,
        input_density: (density(&raw_l), density(&raw_r)),
        cleaned_density: (density(&cleaned.0), density(&cleaned.1)),
        cleaned,
        keep,
        verify_trace,
        traces,
        tallies,
    })
}
