use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data_io::ImagePair;
use crate::energy::{EnergyBreakdown, EnergyProblem};
use crate::error::{Error, Result};
use crate::geometry::{DenseDisparityField, Side, SparseDisparityMap};
use crate::grid::Grid;
use crate::image_ops::RgbImage;
use crate::pipeline::FusionConfig;
use crate::segmentation::{default_segment_count, slic_segment};

/// Smallest side length a pyramid level may have.
pub const MIN_LEVEL_SIZE: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub levels: usize,
    /// Iteration budget per level, coarse to fine. The last entry repeats
    /// when there are more levels than entries.
    pub iterations: Vec<usize>,
    /// Initial step in pixels along the preconditioned direction.
    pub initial_step: f64,
    pub max_step: f64,
    pub step_growth: f64,
    /// Consecutive rejected steps after which a level stops.
    pub patience: usize,
    /// Occlusion masks are recomputed every this many iterations.
    pub refresh_interval: usize,
    pub stall_window: usize,
    pub stall_tolerance: f64,
    /// Decay of the running squared-gradient average.
    pub gradient_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            iterations: vec![100, 150, 200],
            initial_step: 0.5,
            max_step: 4.0,
            step_growth: 1.2,
            patience: 12,
            refresh_interval: 25,
            stall_window: 10,
            stall_tolerance: 1e-5,
            gradient_decay: 0.9,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.levels == 0 {
            return bad("optimizer levels must be >= 1");
        }
        if self.iterations.is_empty() {
            return bad("optimizer iterations must list at least one budget");
        }
        if !(self.initial_step > 0.0
            && self.max_step >= self.initial_step
            && self.max_step.is_finite())
        {
            return bad("optimizer steps need 0 < initial_step <= max_step");
        }
        if !(self.step_growth >= 1.0 && self.step_growth.is_finite()) {
            return bad("optimizer step_growth must be >= 1");
        }
        if self.patience == 0 || self.refresh_interval == 0 || self.stall_window == 0 {
            return bad("optimizer patience, refresh_interval and stall_window must be >= 1");
        }
        if !(self.stall_tolerance >= 0.0) {
            return bad("optimizer stall_tolerance must be >= 0");
        }
        if !(0.0..1.0).contains(&self.gradient_decay) {
            return bad("optimizer gradient_decay must lie in [0, 1)");
        }
        Ok(())
    }

    /// Budget of pyramid level `level` (0 = finest) out of `count` levels.
    pub fn budget(&self, level: usize, count: usize) -> usize {
        let coarse_index = count - 1 - level;
        *self
            .iterations
            .get(coarse_index)
            .unwrap_or_else(|| self.iterations.last().expect("validated non-empty"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceEntry {
    pub round: usize,
    /// Pyramid level, 0 being full resolution.
    pub level: usize,
    pub iteration: usize,
    /// Occlusion masks were recomputed and the energy re-evaluated here.
    pub refresh: bool,
    pub accepted: bool,
    pub step: f64,
    /// Energy of the current iterate (after acceptance or rejection).
    pub total: f64,
    pub lidar: f64,
    pub warping: f64,
    pub smoothness: f64,
    pub plane: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerTrace {
    pub entries: Vec<TraceEntry>,
}

impl OptimizerTrace {
    #[allow(clippy::too_many_arguments)]
    fn record(
        &mut self,
        round: usize,
        level: usize,
        iteration: usize,
        refresh: bool,
        accepted: bool,
        step: f64,
        e: &EnergyBreakdown,
    ) {
        self.entries.push(TraceEntry {
            round,
            level,
            iteration,
            refresh,
            accepted,
            step,
            total: e.total,
            lidar: e.lidar,
            warping: e.warping,
            smoothness: e.smoothness,
            plane: e.plane,
        });
    }

    /// Within every stretch between mask refreshes, the current energy never rises.
    pub fn is_monotone(&self) -> bool {
        self.entries.windows(2).all(|w| {
            w[1].refresh
                || w[1].level != w[0].level
                || w[1].round != w[0].round
                || w[1].total <= w[0].total
        })
    }

    pub fn final_energy(&self) -> Option<f64> {
        self.entries.last().map(|e| e.total)
    }

    pub fn extend(&mut self, other: OptimizerTrace) {
        self.entries.extend(other.entries);
    }

    /// One `key=value` line per entry.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            let _ = writeln!(
                s,
                "round={} level={} iter={} refresh={} accepted={} step={:.6e} total={:.12e} lidar={:.12e} warping={:.12e} smoothness={:.12e} plane={:.12e}",
                e.round,
                e.level,
                e.iteration,
                e.refresh as u8,
                e.accepted as u8,
                e.step,
                e.total,
                e.lidar,
                e.warping,
                e.smoothness,
                e.plane
            );
        }
        s
    }
}

fn downsample_rgb(img: &RgbImage) -> RgbImage {
    let (w, h) = (img.width() / 2, img.height() / 2);
    Grid::from_fn(w, h, |u, v| {
        let (x, y) = (2 * u, 2 * v);
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            *o = 0.25
                * (img[(x, y)][c]
                    + img[(x + 1, y)][c]
                    + img[(x, y + 1)][c]
                    + img[(x + 1, y + 1)][c]);
        }
        out
    })
}

fn clamp_field(g: Grid<f64>, upper: f64) -> DenseDisparityField {
    DenseDisparityField::new(g.map(|&x| if x.is_nan() { 0.0 } else { x.clamp(0.0, upper) }))
}

struct Level {
    problem: EnergyProblem,
    /// Disparity scale relative to full resolution.
    scale: f64,
}

/// Per-resolution energy problems, built once per scene and reused across
/// feedback rounds. Index 0 is full resolution.
pub struct Pyramid {
    levels: Vec<Level>,
}

impl Pyramid {
    pub fn build(pair: &ImagePair, cfg: &FusionConfig) -> Result<Self> {
        let mut images = vec![(pair.left.clone(), pair.right.clone())];
        while images.len() < cfg.optimizer.levels {
            let (l, r) = images.last().expect("non-empty");
            if l.width() / 2 < MIN_LEVEL_SIZE || l.height() / 2 < MIN_LEVEL_SIZE {
                break;
            }
            images.push((downsample_rgb(l), downsample_rgb(r)));
        }
        let full_count = default_segment_count(pair.width(), pair.height());
        let mut levels = Vec::with_capacity(images.len());
        for (i, (l, r)) in images.into_iter().enumerate() {
            let (w, h) = l.dims();
            let target = full_count.min((w * h / 16).max(1));
            let seg = |img: &RgbImage| {
                slic_segment(
                    img,
                    target,
                    cfg.segmentation.compactness,
                    cfg.segmentation.iterations,
                )
            };
            let segs = [seg(&l)?, seg(&r)?];
            let level_pair = ImagePair::new(l, r)?;
            let empty = SparseDisparityMap::empty(w, h);
            levels.push(Level {
                problem: EnergyProblem::new(
                    &level_pair,
                    [empty.clone(), empty],
                    segs,
                    cfg.weights,
                )?,
                scale: 0.5f64.powi(i as i32),
            });
        }
        Ok(Self { levels })
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn problem(&self, level: usize) -> &EnergyProblem {
        &self.levels[level].problem
    }

    pub fn set_lidar(&mut self, lidar: [&SparseDisparityMap; 2]) -> Result<()> {
        let mut maps = [lidar[0].clone(), lidar[1].clone()];
        for level in &mut self.levels {
            if level.problem.dims() != maps[0].dims() {
                maps = [maps[0].downsample2(), maps[1].downsample2()];
            }
            level.problem.set_lidar(Side::Left, maps[0].clone())?;
            level.problem.set_lidar(Side::Right, maps[1].clone())?;
        }
        Ok(())
    }

    /// Coarse-to-fine minimisation starting from `init`. The start of each
    /// finer level is its own downsampled `init` plus the upsampled change
    /// achieved on the level below.
    pub fn optimize(
        &self,
        init: (&DenseDisparityField, &DenseDisparityField),
        cfg: &FusionConfig,
        round: usize,
    ) -> Result<(DenseDisparityField, DenseDisparityField, OptimizerTrace)> {
        let n = self.levels.len();
        let mut inits = vec![(init.0.grid().clone(), init.1.grid().clone())];
        for _ in 1..n {
            let (l, r) = inits.last().expect("non-empty");
            inits.push((
                l.downsample2().map(|x| 0.5 * x),
                r.downsample2().map(|x| 0.5 * x),
            ));
        }
        let mut trace = OptimizerTrace::default();
        let mut correction: Option<(Grid<f64>, Grid<f64>)> = None;
        let mut result = None;
        for level in (0..n).rev() {
            let upper = cfg.d_max * self.levels[level].scale;
            let (il, ir) = &inits[level];
            let (sl, sr) = match &correction {
                None => (il.clone(), ir.clone()),
                Some((cl, cr)) => {
                    let (w, h) = il.dims();
                    let add = |base: &Grid<f64>, c: &Grid<f64>| {
                        base.zip_map(&c.upsample_to(w, h), |b, c| b + 2.0 * c)
                    };
                    (add(il, cl), add(ir, cr))
                }
            };
            let start = (clamp_field(sl, upper), clamp_field(sr, upper));
            let budget = cfg.optimizer.budget(level, n);
            let (fl, fr) = descend(
                &self.levels[level].problem,
                start,
                upper,
                budget,
                &cfg.optimizer,
                round,
                level,
                &mut trace,
            )?;
            correction = Some((
                fl.grid().zip_map(il, |a, b| a - b),
                fr.grid().zip_map(ir, |a, b| a - b),
            ));
            result = Some((fl, fr));
        }
        let (l, r) = result.expect("at least one level");
        Ok((l, r, trace))
    }
}

fn numerical(message: String, trace: &OptimizerTrace) -> Error {
    Error::NumericalFailure {
        message,
        trace: Box::new(trace.clone()),
    }
}

/// Diagonally preconditioned descent direction from a running mean of squared gradients.
struct Preconditioner {
    decay: f64,
    steps: i32,
    second: [Vec<f64>; 2],
}

impl Preconditioner {
    fn new(len: usize, decay: f64) -> Self {
        Self {
            decay,
            steps: 0,
            second: [vec![0.0; len], vec![0.0; len]],
        }
    }

    fn direction(&mut self, grads: [&Grid<f64>; 2]) -> [Vec<f64>; 2] {
        self.steps += 1;
        let bias = 1.0 - self.decay.powi(self.steps);
        let mut mean = 0.0;
        let mut count = 0usize;
        for (s, g) in self.second.iter_mut().zip(grads) {
            for (v, &x) in s.iter_mut().zip(g.as_slice()) {
                *v = self.decay * *v + (1.0 - self.decay) * x * x;
                mean += *v;
                count += 1;
            }
        }
        let floor = 1e-3 * (mean / (count as f64 * bias)).sqrt() + f64::MIN_POSITIVE;
        let mut out = [Vec::new(), Vec::new()];
        for ((o, s), g) in out.iter_mut().zip(&self.second).zip(grads) {
            *o = s
                .iter()
                .zip(g.as_slice())
                .map(|(&v, &x)| x / ((v / bias).sqrt() + floor))
                .collect();
        }
        out
    }
}

#[allow(clippy::too_many_arguments)]
fn descend(
    problem: &EnergyProblem,
    start: (DenseDisparityField, DenseDisparityField),
    upper: f64,
    budget: usize,
    cfg: &OptimizerConfig,
    round: usize,
    level: usize,
    trace: &mut OptimizerTrace,
) -> Result<(DenseDisparityField, DenseDisparityField)> {
    let (mut dl, mut dr) = start;
    if budget == 0 {
        return Ok((dl, dr));
    }
    let (w, h) = problem.dims();
    let mut masks = problem.occlusion_masks(&dl, &dr);
    let mut cur = problem.evaluate(&dl, &dr, &masks);
    if !cur.total.is_finite() {
        return Err(numerical(
            format!("non-finite energy at start of level {level}"),
            trace,
        ));
    }
    let mut step = cfg.initial_step;
    trace.record(round, level, 0, true, true, step, &cur);
    let mut pre = Preconditioner::new(w * h, cfg.gradient_decay);
    let mut dir = pre.direction([&cur.grad_left, &cur.grad_right]);
    let mut history = vec![cur.total];
    let mut rejects = 0;
    for it in 1..=budget {
        if it % cfg.refresh_interval == 0 {
            masks = problem.occlusion_masks(&dl, &dr);
            cur = problem.evaluate(&dl, &dr, &masks);
            if !cur.total.is_finite() {
                return Err(numerical(
                    format!("non-finite energy after mask refresh at level {level}"),
                    trace,
                ));
            }
            trace.record(round, level, it, true, true, step, &cur);
            dir = pre.direction([&cur.grad_left, &cur.grad_right]);
            history.clear();
            history.push(cur.total);
        }
        let shift = |f: &DenseDisparityField, d: &[f64]| {
            let g = Grid::from_vec(
                w,
                h,
                f.grid()
                    .as_slice()
                    .iter()
                    .zip(d)
                    .map(|(x, g)| x - step * g)
                    .collect(),
            )
            .expect("same size");
            clamp_field(g, upper)
        };
        let cl = shift(&dl, &dir[0]);
        let cr = shift(&dr, &dir[1]);
        let cand = problem.evaluate(&cl, &cr, &masks);
        if !cand.total.is_finite() {
            return Err(numerical(
                format!("non-finite energy at level {level}, iteration {it}"),
                trace,
            ));
        }
        let accepted = cand.total <= cur.total;
        if accepted {
            dl = cl;
            dr = cr;
            cur = cand;
            dir = pre.direction([&cur.grad_left, &cur.grad_right]);
            step = (step * cfg.step_growth).min(cfg.max_step);
            rejects = 0;
        } else {
            step *= 0.5;
            rejects += 1;
        }
        trace.record(round, level, it, false, accepted, step, &cur);
        history.push(cur.total);
        if rejects >= cfg.patience {
            break;
        }
        if history.len() > cfg.stall_window {
            let past = history[history.len() - 1 - cfg.stall_window];
            let gain = (past - cur.total) / past.abs().max(f64::MIN_POSITIVE);
            if gain < cfg.stall_tolerance {
                break;
            }
        }
    }
    Ok((dl, dr))
}

/// Single Update pass over one resolution pyramid built for this call.
pub fn update_optimize(
    pair: &ImagePair,
    lidar: [&SparseDisparityMap; 2],
    init: (&DenseDisparityField, &DenseDisparityField),
    cfg: &FusionConfig,
) -> Result<(DenseDisparityField, DenseDisparityField, OptimizerTrace)> {
    cfg.validate()?;
    let dims = (pair.width(), pair.height());
    if init.0.dims() != dims || init.1.dims() != dims {
        return Err(Error::Shape(format!(
            "initial fields {:?}/{:?}, images {dims:?}",
            init.0.dims(),
            init.1.dims()
        )));
    }
    let mut pyramid = Pyramid::build(pair, cfg)?;
    pyramid.set_lidar(lidar)?;
    pyramid.optimize(init, cfg, 0)
}
