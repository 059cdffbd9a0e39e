//! Image-space primitives: grey conversion, finite-difference gradients,
//! disparity warping with sampling derivatives, soft census descriptors and
//! left-right occlusion masks.

use crate::error::{Error, Result};
use crate::geometry::{DenseDisparityField, Side};
use crate::grid::Grid;

pub type RgbImage = Grid<[f64; 3]>;
pub type GrayImage = Grid<f64>;

/// Damping constant of the soft census response.
pub const CENSUS_DAMPING: f64 = 0.81;
pub const DEFAULT_CENSUS_WINDOW: usize = 5;

pub fn to_gray(rgb: &RgbImage) -> GrayImage {
    rgb.map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
}

pub fn channel(rgb: &RgbImage, c: usize) -> GrayImage {
    rgb.map(|p| p[c])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientOrder {
    First,
    Second,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub du: Grid<f64>,
    pub dv: Grid<f64>,
}

/// First order: forward differences, last column / row zero.
/// Second order: `g(x-1) - 2 g(x) + g(x+1)` per axis, borders zero.
pub fn spatial_gradients(img: &GrayImage, order: GradientOrder) -> Gradients {
    let (w, h) = img.dims();
    match order {
        GradientOrder::First => Gradients {
            du: Grid::from_fn(w, h, |u, v| {
                if u + 1 < w {
                    img[(u + 1, v)] - img[(u, v)]
                } else {
                    0.0
                }
            }),
            dv: Grid::from_fn(w, h, |u, v| {
                if v + 1 < h {
                    img[(u, v + 1)] - img[(u, v)]
                } else {
                    0.0
                }
            }),
        },
        GradientOrder::Second => Gradients {
            du: Grid::from_fn(w, h, |u, v| {
                if u > 0 && u + 1 < w {
                    img[(u - 1, v)] - 2.0 * img[(u, v)] + img[(u + 1, v)]
                } else {
                    0.0
                }
            }),
            dv: Grid::from_fn(w, h, |u, v| {
                if v > 0 && v + 1 < h {
                    img[(u, v - 1)] - 2.0 * img[(u, v)] + img[(u, v + 1)]
                } else {
                    0.0
                }
            }),
        },
    }
}

/// Per-pixel `mean_c(|d_u I_c| + |d_v I_c|)` used by edge-aware weighting.
pub fn gradient_magnitude(rgb: &RgbImage, order: GradientOrder) -> Grid<f64> {
    let mut acc = Grid::new(rgb.width(), rgb.height(), 0.0);
    for c in 0..3 {
        let g = spatial_gradients(&channel(rgb, c), order);
        for (i, a) in acc.as_mut_slice().iter_mut().enumerate() {
            *a += (g.du.as_slice()[i].abs() + g.dv.as_slice()[i].abs()) / 3.0;
        }
    }
    acc
}

/// Values that can be linearly interpolated channel-wise.
pub trait Sample: Copy {
    const ZERO: Self;
    fn lerp(a: Self, b: Self, t: f64) -> Self;
    fn diff(a: Self, b: Self) -> Self;
    fn scale(self, s: f64) -> Self;
}

impl Sample for f64 {
    const ZERO: Self = 0.0;
    fn lerp(a: Self, b: Self, t: f64) -> Self {
        a + (b - a) * t
    }
    fn diff(a: Self, b: Self) -> Self {
        a - b
    }
    fn scale(self, s: f64) -> Self {
        self * s
    }
}

impl Sample for [f64; 3] {
    const ZERO: Self = [0.0; 3];
    fn lerp(a: Self, b: Self, t: f64) -> Self {
        [0, 1, 2].map(|c| a[c] + (b[c] - a[c]) * t)
    }
    fn diff(a: Self, b: Self) -> Self {
        [0, 1, 2].map(|c| a[c] - b[c])
    }
    fn scale(self, s: f64) -> Self {
        self.map(|x| x * s)
    }
}

/// The view a warp reconstructs.
///
/// `ToLeft` samples the (right) source at `u - d`; `ToRight` samples the
/// (left) source at `u + d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WarpDirection {
    ToLeft,
    ToRight,
}

impl WarpDirection {
    pub fn reconstructing(side: Side) -> Self {
        match side {
            Side::Left => WarpDirection::ToLeft,
            Side::Right => WarpDirection::ToRight,
        }
    }

    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            WarpDirection::ToLeft => -1.0,
            WarpDirection::ToRight => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Warped<T> {
    pub values: Grid<T>,
    /// Sample position inside `[0, W-1]`.
    pub valid: Grid<bool>,
    /// Derivative of each warped value with respect to the disparity at that pixel.
    pub slope: Grid<T>,
}

/// Horizontal linear interpolation of row `v` at `x`, with the slope `dI/dx`.
/// `None` when `x` lies outside `[0, W-1]`.
#[inline]
pub fn sample_row<T: Sample>(img: &Grid<T>, x: f64, v: usize) -> Option<(T, T)> {
    let w = img.width();
    if !(x >= 0.0 && x <= (w - 1) as f64) {
        return None;
    }
    let x0 = (x.floor() as usize).min(w - 1);
    let x1 = (x0 + 1).min(w - 1);
    let t = x - x0 as f64;
    let (a, b) = (*img.get(x0, v), *img.get(x1, v));
    let slope = if x1 == x0 { T::ZERO } else { T::diff(b, a) };
    Some((T::lerp(a, b, t), slope))
}

pub fn warp_by_disparity<T: Sample>(
    img: &Grid<T>,
    disp: &DenseDisparityField,
    direction: WarpDirection,
) -> Warped<T> {
    assert_eq!(
        img.dims(),
        disp.dims(),
        "warp: image and disparity sizes differ"
    );
    let (w, h) = img.dims();
    let sign = direction.sign();
    let mut values = Grid::new(w, h, T::ZERO);
    let mut valid = Grid::new(w, h, false);
    let mut slope = Grid::new(w, h, T::ZERO);
    for v in 0..h {
        for u in 0..w {
            let x = u as f64 + sign * disp[(u, v)];
            if let Some((val, s)) = sample_row(img, x, v) {
                values[(u, v)] = val;
                slope[(u, v)] = s.scale(sign);
                valid[(u, v)] = true;
            }
        }
    }
    Warped {
        values,
        valid,
        slope,
    }
}

/// Soft census response for a centre-minus-neighbour difference.
#[inline]
pub fn census_response(diff: f64) -> f64 {
    diff / (CENSUS_DAMPING + diff * diff).sqrt()
}

/// Derivative of [`census_response`] with respect to its argument.
#[inline]
pub fn census_response_derivative(diff: f64) -> f64 {
    let s = CENSUS_DAMPING + diff * diff;
    CENSUS_DAMPING / (s * s.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SoftCensusField {
    width: usize,
    height: usize,
    offsets: Vec<(isize, isize)>,
    /// `(v * width + u) * K + k`.
    responses: Vec<f64>,
    valid: Grid<bool>,
}

impl SoftCensusField {
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn offsets(&self) -> &[(isize, isize)] {
        &self.offsets
    }

    pub fn valid(&self) -> &Grid<bool> {
        &self.valid
    }

    #[inline]
    pub fn responses_at(&self, u: usize, v: usize) -> &[f64] {
        let k = self.offsets.len();
        let i = (v * self.width + u) * k;
        &self.responses[i..i + k]
    }
}

/// Offsets of a `window x window` neighbourhood, centre excluded, row-major.
pub fn census_offsets(window: usize) -> Vec<(isize, isize)> {
    let r = (window / 2) as isize;
    let mut out = Vec::with_capacity(window * window - 1);
    for dv in -r..=r {
        for du in -r..=r {
            if du != 0 || dv != 0 {
                out.push((du, dv));
            }
        }
    }
    out
}

pub fn soft_census(img: &GrayImage, window: usize) -> Result<SoftCensusField> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!(
            "census window must be odd and >= 3, got {window}"
        )));
    }
    let (w, h) = img.dims();
    let r = window / 2;
    let offsets = census_offsets(window);
    let k = offsets.len();
    let mut responses = vec![0.0; w * h * k];
    let valid = Grid::from_fn(w, h, |u, v| u >= r && v >= r && u + r < w && v + r < h);
    for v in r..h.saturating_sub(r) {
        for u in r..w.saturating_sub(r) {
            let c = img[(u, v)];
            let base = (v * w + u) * k;
            for (j, &(du, dv)) in offsets.iter().enumerate() {
                let n = img[((u as isize + du) as usize, (v as isize + dv) as usize)];
                responses[base + j] = census_response(c - n);
            }
        }
    }
    Ok(SoftCensusField {
        width: w,
        height: h,
        offsets,
        responses,
        valid,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CensusDistance {
    /// Mean squared response difference, in `[0, 4)`.
    pub values: Grid<f64>,
    pub valid: Grid<bool>,
}

pub fn census_distance(a: &SoftCensusField, b: &SoftCensusField) -> Result<CensusDistance> {
    if a.dims() != b.dims() || a.offsets != b.offsets {
        return Err(Error::Shape(format!(
            "census fields differ: {:?}/{} vs {:?}/{}",
            a.dims(),
            a.offsets.len(),
            b.dims(),
            b.offsets.len()
        )));
    }
    let (w, h) = a.dims();
    let k = a.offsets.len() as f64;
    let valid = a.valid.zip_map(&b.valid, |&x, &y| x && y);
    let values = Grid::from_fn(w, h, |u, v| {
        if !valid[(u, v)] {
            return 0.0;
        }
        a.responses_at(u, v)
            .iter()
            .zip(b.responses_at(u, v))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / k
    });
    Ok(CensusDistance { values, valid })
}

pub const DEFAULT_OCCLUSION_THRESHOLD: f64 = 1.0;

/// Left-right consistency mask for the view `side`.
///
/// For the left view a pixel is kept iff `u - D_l(u,v)` lies inside the image
/// and `|D_l(u,v) - D_r(u - D_l(u,v), v)| < threshold` (linear sampling of `D_r`).
/// The right view uses `u + D_r` against `D_l`.
pub fn occlusion_mask(
    d_left: &DenseDisparityField,
    d_right: &DenseDisparityField,
    threshold: f64,
    side: Side,
) -> Grid<bool> {
    assert_eq!(
        d_left.dims(),
        d_right.dims(),
        "occlusion: field sizes differ"
    );
    let (own, other, sign) = match side {
        Side::Left => (d_left, d_right, -1.0),
        Side::Right => (d_right, d_left, 1.0),
    };
    let (w, h) = own.dims();
    Grid::from_fn(w, h, |u, v| {
        let d = own[(u, v)];
        match sample_row(other.grid(), u as f64 + sign * d, v) {
            Some((o, _)) => (d - o).abs() < threshold,
            None => false,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> GrayImage {
        Grid::from_fn(w, h, |u, _| u as f64 / w as f64)
    }

    #[test]
    fn gray_weights() {
        let img = Grid::from_vec(3, 1, vec![[1.0; 3], [0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        let g = to_gray(&img);
        assert!((g[(0, 0)] - 1.0).abs() < 1e-12);
        assert_eq!(g[(1, 0)], 0.0);
        assert!((g[(2, 0)] - 0.299).abs() < 1e-12);
    }

    #[test]
    fn gradients_of_constant_and_ramp() {
        let c = Grid::new(8, 6, 0.4);
        for order in [GradientOrder::First, GradientOrder::Second] {
            let g = spatial_gradients(&c, order);
            assert!(g.du.iter().chain(g.dv.iter()).all(|&x| x == 0.0));
        }
        let r = ramp(8, 6);
        let g = spatial_gradients(&r, GradientOrder::First);
        for v in 0..6 {
            for u in 0..7 {
                assert!((g.du[(u, v)] - 1.0 / 8.0).abs() < 1e-12);
            }
            assert_eq!(g.du[(7, v)], 0.0);
        }
        assert!(g.dv.iter().all(|&x| x == 0.0));
        let g2 = spatial_gradients(&r, GradientOrder::Second);
        for v in 1..5 {
            for u in 1..7 {
                assert!(g2.du[(u, v)].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn second_difference_of_impulse() {
        let mut img = Grid::new(5, 5, 0.0);
        img[(2, 2)] = 0.7;
        let g = spatial_gradients(&img, GradientOrder::Second);
        // Stencil: (0 - 2*0.7 + 0) per axis.
        assert!((g.du[(2, 2)] + g.dv[(2, 2)] - (-2.0 * 0.7 * 2.0)).abs() < 1e-12);
        assert!((g.du[(1, 2)] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn zero_disparity_warp_is_identity() {
        let img = Grid::from_fn(10, 4, |u, v| (u * 3 + v) as f64 * 0.01);
        let d = DenseDisparityField::constant(10, 4, 0.0);
        for dir in [WarpDirection::ToLeft, WarpDirection::ToRight] {
            let w = warp_by_disparity(&img, &d, dir);
            assert_eq!(w.values, img);
            assert!(w.valid.iter().all(|&b| b));
        }
    }

    #[test]
    fn constant_image_warps_to_constant() {
        let img = Grid::new(12, 3, [0.3, 0.2, 0.1]);
        let d = DenseDisparityField::new(Grid::from_fn(12, 3, |u, _| (u as f64 * 0.37) % 2.5));
        let w = warp_by_disparity(&img, &d, WarpDirection::ToLeft);
        for (val, ok) in w.values.iter().zip(w.valid.iter()) {
            if *ok {
                for c in 0..3 {
                    assert!((val[c] - [0.3, 0.2, 0.1][c]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn out_of_bounds_samples_are_invalid() {
        let img = ramp(10, 2);
        let d = DenseDisparityField::constant(10, 2, 3.5);
        let w = warp_by_disparity(&img, &d, WarpDirection::ToLeft);
        for u in 0..10 {
            assert_eq!(w.valid[(u, 0)], u as f64 >= 3.5);
        }
        let w = warp_by_disparity(&img, &d, WarpDirection::ToRight);
        for u in 0..10 {
            assert_eq!(w.valid[(u, 0)], u as f64 + 3.5 <= 9.0);
        }
    }

    #[test]
    fn census_of_constant_image_is_zero() {
        let f = soft_census(&Grid::new(9, 9, 0.6), 5).unwrap();
        assert!(f.responses.iter().all(|&r| r == 0.0));
        assert!(f.valid[(2, 2)] && !f.valid[(1, 2)] && !f.valid[(7, 2)]);
    }

    #[test]
    fn census_response_value() {
        assert!((census_response(0.9) - 0.9 / (1.62f64).sqrt()).abs() < 1e-12);
        assert!((census_response(0.9) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn census_window_validation() {
        let img = Grid::new(9, 9, 0.0);
        assert!(soft_census(&img, 4).is_err());
        assert!(soft_census(&img, 1).is_err());
        assert_eq!(soft_census(&img, 3).unwrap().offsets().len(), 8);
    }

    #[test]
    fn census_distance_properties() {
        let a = soft_census(
            &Grid::from_fn(12, 10, |u, v| ((u * 7 + v * 3) % 5) as f64 * 0.2),
            5,
        )
        .unwrap();
        let b = soft_census(
            &Grid::from_fn(12, 10, |u, v| ((u * 3 + v * 5) % 7) as f64 * 0.1),
            5,
        )
        .unwrap();
        let aa = census_distance(&a, &a).unwrap();
        assert!(aa.values.iter().all(|&x| x == 0.0));
        let ab = census_distance(&a, &b).unwrap();
        let ba = census_distance(&b, &a).unwrap();
        assert_eq!(ab, ba);
        assert!(ab.values.iter().all(|&x| (0.0..4.0).contains(&x)));
        let small = soft_census(&Grid::new(8, 8, 0.0), 5).unwrap();
        assert!(matches!(census_distance(&a, &small), Err(Error::Shape(_))));
    }

    #[test]
    fn census_distance_saturates_at_four() {
        // Responses near +1 vs near -1 at every offset.
        let mut a = soft_census(&Grid::new(7, 7, 0.0), 3).unwrap();
        let mut b = a.clone();
        a.responses.iter_mut().for_each(|r| *r = 1.0);
        b.responses.iter_mut().for_each(|r| *r = -1.0);
        let d = census_distance(&a, &b).unwrap();
        assert_eq!(d.values[(3, 3)], 4.0);
    }

    #[test]
    fn occlusion_examples() {
        let c = DenseDisparityField::constant(20, 3, 4.0);
        let o = occlusion_mask(&c, &c, 1.0, Side::Left);
        for u in 0..20 {
            assert_eq!(o[(u, 1)], u >= 4);
        }
        let a = DenseDisparityField::constant(20, 3, 10.0);
        let b = DenseDisparityField::constant(20, 3, 30.0);
        assert!(occlusion_mask(&a, &b, 1.0, Side::Left).iter().all(|&x| !x));
        let o = occlusion_mask(&c, &c, 1.0, Side::Right);
        for u in 0..20 {
            assert_eq!(o[(u, 1)], u + 4 <= 19);
        }
    }
}
