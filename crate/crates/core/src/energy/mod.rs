//! The fusion objective: Lidar agreement, image warping, edge-aware smoothness
//! and superpixel planarity, each with an analytic gradient with respect to
//! both disparity fields.

pub mod lidar;
pub mod plane;
pub mod robust;
pub mod smoothness;
pub mod warping;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use lidar::lidar_loss;
pub use plane::{plane_fit_loss, plane_params, segment_residual, PlaneNorm, PlaneParams};
pub use robust::{robust_phi, robust_phi_derivative, truncated_l2};
pub use smoothness::{smoothness_loss, smoothness_loss_weighted, SmoothnessWeights};
pub use warping::{census_loss, gradient_loss, photometric_loss, warping_loss, WarpingTerms};

use crate::data_io::ImagePair;
use crate::error::{Error, Result};
use crate::geometry::{DenseDisparityField, Side, SparseDisparityMap};
use crate::grid::Grid;
use crate::image_ops::{
    occlusion_mask, soft_census, to_gray, RgbImage, SoftCensusField, WarpDirection,
    DEFAULT_CENSUS_WINDOW, DEFAULT_OCCLUSION_THRESHOLD,
};
use crate::segmentation::SuperpixelSegmentation;
use warping::add_scaled;

/// A scalar loss and its gradient with respect to one disparity field.
#[derive(Clone, Debug, PartialEq)]
pub struct TermValue {
    pub value: f64,
    pub grad: Grid<f64>,
}

/// Which of the four top-level terms take part.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TermToggles {
    pub lidar: bool,
    pub warping: bool,
    pub smoothness: bool,
    pub plane: bool,
}

impl Default for TermToggles {
    fn default() -> Self {
        Self {
            lidar: true,
            warping: true,
            smoothness: true,
            plane: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub warping: f64,
    pub smoothness: f64,
    pub plane: f64,
    /// Census weight inside the warping term.
    pub census: f64,
    /// Gradient-matching weight inside the warping term.
    pub gradient: f64,
    /// Edge sensitivity of the first-order smoothness weights.
    pub edge_first: f64,
    /// Edge sensitivity of the second-order smoothness weights.
    pub edge_second: f64,
    /// Residual (in pixels) beyond which a Lidar point stops pulling.
    pub lidar_truncation: f64,
    pub occlusion_threshold: f64,
    pub census_window: usize,
    pub plane_norm: PlaneNorm,
    pub enabled: TermToggles,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            warping: 1.0,
            smoothness: 0.001,
            plane: 0.01,
            census: 0.1,
            gradient: 1.0,
            edge_first: 0.5,
            edge_second: 0.5,
            lidar_truncation: 3.0,
            occlusion_threshold: DEFAULT_OCCLUSION_THRESHOLD,
            census_window: DEFAULT_CENSUS_WINDOW,
            plane_norm: PlaneNorm::Squared,
            enabled: TermToggles::default(),
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = [
            ("warping", self.warping),
            ("smoothness", self.smoothness),
            ("plane", self.plane),
            ("census", self.census),
            ("gradient", self.gradient),
            ("edge_first", self.edge_first),
            ("edge_second", self.edge_second),
        ];
        for (name, x) in finite_nonneg {
            if !(x.is_finite() && x >= 0.0) {
                return Err(Error::Config(format!(
                    "weight {name} must be finite and >= 0, got {x}"
                )));
            }
        }
        if !(self.lidar_truncation.is_finite() && self.lidar_truncation > 0.0) {
            return Err(Error::Config(format!(
                "lidar_truncation must be > 0, got {}",
                self.lidar_truncation
            )));
        }
        if !(self.occlusion_threshold.is_finite() && self.occlusion_threshold > 0.0) {
            return Err(Error::Config(format!(
                "occlusion_threshold must be > 0, got {}",
                self.occlusion_threshold
            )));
        }
        if self.census_window < 3 || self.census_window.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "census_window must be odd and >= 3, got {}",
                self.census_window
            )));
        }
        Ok(())
    }
}

/// Per-view occlusion masks, held fixed between refreshes.
#[derive(Clone, Debug, PartialEq)]
pub struct OcclusionMasks {
    pub left: Grid<bool>,
    pub right: Grid<bool>,
}

impl OcclusionMasks {
    pub fn compute(
        d_left: &DenseDisparityField,
        d_right: &DenseDisparityField,
        threshold: f64,
    ) -> Self {
        Self {
            left: occlusion_mask(d_left, d_right, threshold, Side::Left),
            right: occlusion_mask(d_left, d_right, threshold, Side::Right),
        }
    }

    pub fn all_visible(width: usize, height: usize) -> Self {
        Self {
            left: Grid::new(width, height, true),
            right: Grid::new(width, height, true),
        }
    }

    pub fn get(&self, side: Side) -> &Grid<bool> {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }
}

/// Term values (each the mean of its left and right evaluation), the weighted
/// total, and the gradient of the total with respect to each field.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyBreakdown {
    pub lidar: f64,
    pub photometric: f64,
    pub census: f64,
    pub gradient: f64,
    pub warping: f64,
    pub smoothness: f64,
    pub plane: f64,
    pub total: f64,
    pub weights: LossWeights,
    pub grad_left: Grid<f64>,
    pub grad_right: Grid<f64>,
}

impl EnergyBreakdown {
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        for (k, v) in [
            ("lidar", self.lidar),
            ("photometric", self.photometric),
            ("census", self.census),
            ("gradient", self.gradient),
            ("warping", self.warping),
            ("smoothness", self.smoothness),
            ("plane", self.plane),
            ("total", self.total),
            ("weight_warping", self.weights.warping),
            ("weight_smoothness", self.weights.smoothness),
            ("weight_plane", self.weights.plane),
        ] {
            let _ = writeln!(s, "{k}={v:.17e}");
        }
        s
    }

    pub fn grad(&self, side: Side) -> &Grid<f64> {
        match side {
            Side::Left => &self.grad_left,
            Side::Right => &self.grad_right,
        }
    }
}

#[derive(Clone, Debug)]
struct ViewData {
    image: RgbImage,
    census: SoftCensusField,
    smooth: SmoothnessWeights,
    lidar: SparseDisparityMap,
    segmentation: SuperpixelSegmentation,
}

/// Everything the objective needs at one resolution, with the per-image
/// precomputation done once.
#[derive(Clone, Debug)]
pub struct EnergyProblem {
    views: [ViewData; 2],
    weights: LossWeights,
}

fn side_index(side: Side) -> usize {
    match side {
        Side::Left => 0,
        Side::Right => 1,
    }
}

impl EnergyProblem {
    pub fn new(
        pair: &ImagePair,
        lidar: [SparseDisparityMap; 2],
        segmentation: [SuperpixelSegmentation; 2],
        weights: LossWeights,
    ) -> Result<Self> {
        weights.validate()?;
        let dims = (pair.width(), pair.height());
        for (name, d) in [
            ("left lidar", lidar[0].dims()),
            ("right lidar", lidar[1].dims()),
            ("left segmentation", segmentation[0].dims()),
            ("right segmentation", segmentation[1].dims()),
        ] {
            if d != dims {
                return Err(Error::Shape(format!(
                    "{name} is {d:?}, images are {dims:?}"
                )));
            }
        }
        let [lidar_l, lidar_r] = lidar;
        let [seg_l, seg_r] = segmentation;
        let view = |image: &RgbImage, lidar, segmentation| -> Result<ViewData> {
            Ok(ViewData {
                census: soft_census(&to_gray(image), weights.census_window)?,
                smooth: SmoothnessWeights::new(image, weights.edge_first, weights.edge_second),
                image: image.clone(),
                lidar,
                segmentation,
            })
        };
        Ok(Self {
            views: [
                view(&pair.left, lidar_l, seg_l)?,
                view(&pair.right, lidar_r, seg_r)?,
            ],
            weights,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.views[0].image.dims()
    }

    pub fn weights(&self) -> &LossWeights {
        &self.weights
    }

    pub fn lidar(&self, side: Side) -> &SparseDisparityMap {
        &self.views[side_index(side)].lidar
    }

    /// Replaces the Lidar points used by the objective (e.g. after cleaning).
    pub fn set_lidar(&mut self, side: Side, map: SparseDisparityMap) -> Result<()> {
        if map.dims() != self.dims() {
            return Err(Error::Shape(format!(
                "lidar is {:?}, problem is {:?}",
                map.dims(),
                self.dims()
            )));
        }
        self.views[side_index(side)].lidar = map;
        Ok(())
    }

    pub fn segmentation(&self, side: Side) -> &SuperpixelSegmentation {
        &self.views[side_index(side)].segmentation
    }

    pub fn occlusion_masks(
        &self,
        d_left: &DenseDisparityField,
        d_right: &DenseDisparityField,
    ) -> OcclusionMasks {
        OcclusionMasks::compute(d_left, d_right, self.weights.occlusion_threshold)
    }

    /// Evaluates the objective with `masks` held fixed.
    pub fn evaluate(
        &self,
        d_left: &DenseDisparityField,
        d_right: &DenseDisparityField,
        masks: &OcclusionMasks,
    ) -> EnergyBreakdown {
        let dims = self.dims();
        assert_eq!(d_left.dims(), dims, "left field size");
        assert_eq!(d_right.dims(), dims, "right field size");
        let wt = self.weights;
        let on = wt.enabled;
        let mut grads = [
            Grid::new(dims.0, dims.1, 0.0),
            Grid::new(dims.0, dims.1, 0.0),
        ];
        let (
            mut lidar,
            mut photometric,
            mut census,
            mut gradient,
            mut warping,
            mut smooth,
            mut plane,
        ) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for side in [Side::Left, Side::Right] {
            let s = side_index(side);
            let view = &self.views[s];
            let other = &self.views[1 - s];
            let d = if s == 0 { d_left } else { d_right };
            let g = &mut grads[s];
            if on.lidar {
                let t = lidar_loss(d, &view.lidar, wt.lidar_truncation);
                lidar += 0.5 * t.value;
                add_scaled(g, &t.grad, 0.5);
            }
            if on.warping {
                let t = warping_loss(
                    &view.image,
                    &view.census,
                    &other.image,
                    d,
                    WarpDirection::reconstructing(side),
                    masks.get(side),
                    wt.census,
                    wt.gradient,
                );
                photometric += 0.5 * t.photometric;
                census += 0.5 * t.census;
                gradient += 0.5 * t.gradient;
                warping += 0.5 * t.total;
                add_scaled(g, &t.grad, 0.5 * wt.warping);
            }
            if on.smoothness {
                let t = smoothness_loss_weighted(d, &view.smooth);
                smooth += 0.5 * t.value;
                add_scaled(g, &t.grad, 0.5 * wt.smoothness);
            }
            if on.plane {
                let t = plane_fit_loss(d, &view.segmentation, wt.plane_norm);
                plane += 0.5 * t.value;
                add_scaled(g, &t.grad, 0.5 * wt.plane);
            }
        }
        let [grad_left, grad_right] = grads;
        EnergyBreakdown {
            lidar,
            photometric,
            census,
            gradient,
            warping,
            smoothness: smooth,
            plane,
            total: lidar + wt.warping * warping + wt.smoothness * smooth + wt.plane * plane,
            weights: wt,
            grad_left,
            grad_right,
        }
    }
}

/// One-shot evaluation with occlusion masks derived from the fields themselves.
pub fn total_energy(
    pair: &ImagePair,
    d_left: &DenseDisparityField,
    d_right: &DenseDisparityField,
    lidar: [&SparseDisparityMap; 2],
    segmentation: [&SuperpixelSegmentation; 2],
    weights: &LossWeights,
) -> Result<EnergyBreakdown> {
    let problem = EnergyProblem::new(
        pair,
        [lidar[0].clone(), lidar[1].clone()],
        [segmentation[0].clone(), segmentation[1].clone()],
        *weights,
    )?;
    if d_left.dims() != problem.dims() || d_right.dims() != problem.dims() {
        return Err(Error::Shape(format!(
            "disparity fields {:?}/{:?}, images {:?}",
            d_left.dims(),
            d_right.dims(),
            problem.dims()
        )));
    }
    let masks = problem.occlusion_masks(d_left, d_right);
    Ok(problem.evaluate(d_left, d_right, &masks))
}
