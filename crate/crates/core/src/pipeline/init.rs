use serde::{Deserialize, Serialize};

use crate::data_io::ImagePair;
use crate::error::{Error, Result};
use crate::geometry::{DenseDisparityField, Side, D_MAX};
use crate::grid::Grid;
use crate::image_ops::{census_offsets, census_response, to_gray, GrayImage};

/// Matching costs laid out as `(v * W + u) * D + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostVolume {
    width: usize,
    height: usize,
    levels: usize,
    costs: Vec<f32>,
}

impl CostVolume {
    pub fn new(width: usize, height: usize, levels: usize, fill: f32) -> Self {
        Self {
            width,
            height,
            levels,
            costs: vec![fill; width * height * levels],
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.levels)
    }

    #[inline]
    pub fn at(&self, u: usize, v: usize) -> &[f32] {
        let i = (v * self.width + u) * self.levels;
        &self.costs[i..i + self.levels]
    }

    #[inline]
    pub fn at_mut(&mut self, u: usize, v: usize) -> &mut [f32] {
        let i = (v * self.width + u) * self.levels;
        &mut self.costs[i..i + self.levels]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.costs
    }

    /// Index of the lowest cost per pixel (first on ties).
    pub fn argmin(&self) -> Grid<usize> {
        Grid::from_fn(self.width, self.height, |u, v| {
            let c = self.at(u, v);
            let mut best = 0;
            for k in 1..c.len() {
                if c[k] < c[best] {
                    best = k;
                }
            }
            best
        })
    }
}

/// Cost assigned when the matching pixel falls outside the other image.
/// Soft-census distances lie in `[0, 4)`.
pub const MAX_MATCH_COST: f32 = 4.0;

/// Soft-census descriptors with border-replicated neighbours, so that every
/// pixel carries a descriptor.
fn clamped_census(img: &GrayImage, window: usize) -> Vec<f32> {
    let (w, h) = img.dims();
    let offsets = census_offsets(window);
    let k = offsets.len();
    let mut out = vec![0.0f32; w * h * k];
    for v in 0..h {
        for u in 0..w {
            let c = img[(u, v)];
            let base = (v * w + u) * k;
            for (j, &(du, dv)) in offsets.iter().enumerate() {
                let x = (u as isize + du).clamp(0, w as isize - 1) as usize;
                let y = (v as isize + dv).clamp(0, h as isize - 1) as usize;
                out[base + j] = census_response(c - img[(x, y)]) as f32;
            }
        }
    }
    out
}

/// Census-distance cost volume for the view `side`: the left view matches
/// `(u, v)` against `(u - k, v)` in the right image, the right view against
/// `(u + k, v)` in the left image.
pub fn build_cost_volume_for(
    pair: &ImagePair,
    levels: usize,
    window: usize,
    side: Side,
) -> Result<CostVolume> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!(
            "census window must be odd and >= 3, got {window}"
        )));
    }
    if levels == 0 {
        return Err(Error::InvalidInput(
            "cost volume needs at least one level".into(),
        ));
    }
    let (w, h) = (pair.width(), pair.height());
    let own = clamped_census(&to_gray(pair.image(side)), window);
    let other = clamped_census(&to_gray(pair.image(side.other())), window);
    let k = census_offsets(window).len();
    let inv_k = 1.0 / k as f32;
    let mut vol = CostVolume::new(w, h, levels, MAX_MATCH_COST);
    for v in 0..h {
        for u in 0..w {
            let a = &own[(v * w + u) * k..(v * w + u + 1) * k];
            let cell = vol.at_mut(u, v);
            for (d, c) in cell.iter_mut().enumerate() {
                let x = match side {
                    Side::Left if d <= u => u - d,
                    Side::Right if u + d < w => u + d,
                    _ => break,
                };
                let b = &other[(v * w + x) * k..(v * w + x + 1) * k];
                let mut s = 0.0f32;
                for j in 0..k {
                    let e = a[j] - b[j];
                    s += e * e;
                }
                *c = s * inv_k;
            }
        }
    }
    Ok(vol)
}

/// Left-view cost volume with the default census window.
pub fn build_cost_volume(pair: &ImagePair, levels: usize) -> Result<CostVolume> {
    build_cost_volume_for(
        pair,
        levels,
        crate::image_ops::DEFAULT_CENSUS_WINDOW,
        Side::Left,
    )
}

/// Semi-global aggregation along the horizontal and vertical scanline
/// directions (both senses). Path costs are summed.
pub fn aggregate_costs(vol: &CostVolume, p1: f32, p2: f32) -> Result<CostVolume> {
    if !(p1 >= 0.0 && p2 >= p1) {
        return Err(Error::InvalidInput(format!(
            "need 0 <= P1 <= P2, got P1={p1} P2={p2}"
        )));
    }
    let (w, h, d) = vol.dims();
    let mut out = CostVolume::new(w, h, d, 0.0);
    let mut prev = vec![0.0f32; d];
    let mut cur = vec![0.0f32; d];
    // (start, step, count) sequences for each scanline of each direction.
    let mut scan = |lines: &mut dyn Iterator<Item = Vec<(usize, usize)>>| {
        for line in lines {
            for (n, &(u, v)) in line.iter().enumerate() {
                let c = vol.at(u, v);
                if n == 0 {
                    cur.copy_from_slice(c);
                } else {
                    let min_prev = prev.iter().copied().fold(f32::INFINITY, f32::min);
                    for k in 0..d {
                        let mut best = prev[k];
                        if k > 0 {
                            best = best.min(prev[k - 1] + p1);
                        }
                        if k + 1 < d {
                            best = best.min(prev[k + 1] + p1);
                        }
                        best = best.min(min_prev + p2);
                        cur[k] = c[k] + best - min_prev;
                    }
                }
                for (o, &x) in out.at_mut(u, v).iter_mut().zip(&cur) {
                    *o += x;
                }
                std::mem::swap(&mut prev, &mut cur);
            }
        }
    };
    scan(&mut (0..h).map(|v| (0..w).map(|u| (u, v)).collect()));
    scan(&mut (0..h).map(|v| (0..w).rev().map(|u| (u, v)).collect()));
    scan(&mut (0..w).map(|u| (0..h).map(|v| (u, v)).collect()));
    scan(&mut (0..w).map(|u| (0..h).rev().map(|v| (u, v)).collect()));
    Ok(out)
}

/// `sum_k k softmax_k(-cost)` per pixel, at unit temperature.
pub fn soft_argmin(vol: &CostVolume) -> DenseDisparityField {
    soft_argmin_scaled(vol, 1.0)
}

/// Soft-argmin of `-sharpness * cost`.
pub fn soft_argmin_scaled(vol: &CostVolume, sharpness: f64) -> DenseDisparityField {
    let (w, h, _) = vol.dims();
    DenseDisparityField::new(Grid::from_fn(w, h, |u, v| {
        let c = vol.at(u, v);
        let lo = c.iter().copied().fold(f32::INFINITY, f32::min) as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for (k, &x) in c.iter().enumerate() {
            let p = (-sharpness * (x as f64 - lo)).exp();
            num += k as f64 * p;
            den += p;
        }
        num / den
    }))
}

/// 3x3 median with border replication.
pub fn median3(field: &Grid<f64>) -> Grid<f64> {
    let (w, h) = field.dims();
    Grid::from_fn(w, h, |u, v| {
        let mut win = [0.0; 9];
        let mut n = 0;
        for dv in -1isize..=1 {
            for du in -1isize..=1 {
                let x = (u as isize + du).clamp(0, w as isize - 1) as usize;
                let y = (v as isize + dv).clamp(0, h as isize - 1) as usize;
                win[n] = field[(x, y)];
                n += 1;
            }
        }
        win.sort_by(|a, b| a.total_cmp(b));
        win[4]
    })
}

/// Settings of the classical stereo initializer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    pub penalty_small: f32,
    pub penalty_large: f32,
    pub census_window: usize,
    /// Multiplier on path-averaged costs before the soft-argmin readout.
    pub sharpness: f64,
    pub median: bool,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            penalty_small: 0.03,
            penalty_large: 0.48,
            census_window: 5,
            sharpness: 100.0,
            median: true,
        }
    }
}

impl InitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.penalty_small >= 0.0 && self.penalty_large >= self.penalty_small) {
            return Err(Error::Config(
                "initializer penalties need 0 <= small <= large".into(),
            ));
        }
        if self.census_window < 3 || self.census_window.is_multiple_of(2) {
            return Err(Error::Config(
                "initializer census window must be odd and >= 3".into(),
            ));
        }
        if !(self.sharpness.is_finite() && self.sharpness > 0.0) {
            return Err(Error::Config("initializer sharpness must be > 0".into()));
        }
        Ok(())
    }
}

/// Disparity levels searched for a maximum disparity `d_max`.
pub fn level_count(d_max: f64) -> usize {
    (d_max.min(D_MAX).floor() as usize).max(1)
}

/// Stereo-only estimate for both views.
pub fn initialize_disparity(
    pair: &ImagePair,
    cfg: &InitConfig,
    d_max: f64,
) -> Result<(DenseDisparityField, DenseDisparityField)> {
    cfg.validate()?;
    let levels = level_count(d_max);
    let one = |side| -> Result<DenseDisparityField> {
        let raw = build_cost_volume_for(pair, levels, cfg.census_window, side)?;
        let agg = aggregate_costs(&raw, cfg.penalty_small, cfg.penalty_large)?;
        let d = soft_argmin_scaled(&agg, cfg.sharpness / 4.0);
        Ok(if cfg.median {
            DenseDisparityField::new(median3(d.grid()))
        } else {
            d
        })
    };
    Ok((one(Side::Left)?, one(Side::Right)?))
}
