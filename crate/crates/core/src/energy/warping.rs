use crate::energy::robust::{robust_phi, robust_phi_derivative};
use crate::energy::TermValue;
use crate::geometry::DenseDisparityField;
use crate::grid::Grid;
use crate::image_ops::{
    to_gray, warp_by_disparity, RgbImage, SoftCensusField, WarpDirection, Warped, CENSUS_DAMPING,
};

/// Robust per-channel colour residual, averaged over pixels kept by
/// `occlusion` whose warp sample lies inside the source image.
pub fn photometric_loss(
    observed: &RgbImage,
    warped: &Warped<[f64; 3]>,
    occlusion: &Grid<bool>,
) -> TermValue {
    let (w, h) = observed.dims();
    let mut grad = Grid::new(w, h, 0.0);
    let keep: Vec<usize> = (0..w * h)
        .filter(|&i| occlusion.as_slice()[i] && warped.valid.as_slice()[i])
        .collect();
    if keep.is_empty() {
        return TermValue { value: 0.0, grad };
    }
    let norm = 1.0 / (3.0 * keep.len() as f64);
    let mut value = 0.0;
    for &i in &keep {
        let (obs, est, slope) = (
            observed.as_slice()[i],
            warped.values.as_slice()[i],
            warped.slope.as_slice()[i],
        );
        let mut g = 0.0;
        for c in 0..3 {
            let r = est[c] - obs[c];
            value += robust_phi(r);
            g += robust_phi_derivative(r) * slope[c];
        }
        grad.as_mut_slice()[i] = g * norm;
    }
    TermValue {
        value: value * norm,
        grad,
    }
}

/// Robust difference of first-order image gradients. A pixel counts when it
/// and its forward neighbours are kept and validly warped.
pub fn gradient_loss(
    observed: &RgbImage,
    warped: &Warped<[f64; 3]>,
    occlusion: &Grid<bool>,
) -> TermValue {
    let (w, h) = observed.dims();
    let valid = warped.valid.as_slice();
    let ok = |i: usize, u: usize, v: usize| {
        occlusion.as_slice()[i]
            && valid[i]
            && (u + 1 >= w || valid[i + 1])
            && (v + 1 >= h || valid[i + w])
    };
    let obs = observed.as_slice();
    let est = warped.values.as_slice();
    let mut count = 0usize;
    let mut value = 0.0;
    // Adjoint with respect to each warped channel value.
    let mut adj = vec![[0.0f64; 3]; w * h];
    for v in 0..h {
        for u in 0..w {
            let i = v * w + u;
            if !ok(i, u, v) {
                continue;
            }
            count += 1;
            for c in 0..3 {
                if u + 1 < w {
                    let r = (est[i + 1][c] - est[i][c]) - (obs[i + 1][c] - obs[i][c]);
                    value += robust_phi(r);
                    let k = robust_phi_derivative(r);
                    adj[i + 1][c] += k;
                    adj[i][c] -= k;
                } else {
                    value += robust_phi(0.0);
                }
                if v + 1 < h {
                    let r = (est[i + w][c] - est[i][c]) - (obs[i + w][c] - obs[i][c]);
                    value += robust_phi(r);
                    let k = robust_phi_derivative(r);
                    adj[i + w][c] += k;
                    adj[i][c] -= k;
                } else {
                    value += robust_phi(0.0);
                }
            }
        }
    }
    let mut grad = Grid::new(w, h, 0.0);
    if count == 0 {
        return TermValue { value: 0.0, grad };
    }
    let norm = 1.0 / (6.0 * count as f64);
    let slope = warped.slope.as_slice();
    for (i, g) in grad.as_mut_slice().iter_mut().enumerate() {
        *g = norm * (0..3).map(|c| adj[i][c] * slope[i][c]).sum::<f64>();
    }
    TermValue {
        value: value * norm,
        grad,
    }
}

/// Robust soft-census distance between the observed descriptor and the
/// descriptor of the warped grey image. A pixel counts when its window is
/// inside the image, fully validly warped, and the pixel is kept.
pub fn census_loss(
    observed: &SoftCensusField,
    warped: &Warped<f64>,
    occlusion: &Grid<bool>,
) -> TermValue {
    let (w, h) = observed.dims();
    let offsets: Vec<isize> = observed
        .offsets()
        .iter()
        .map(|&(du, dv)| dv * w as isize + du)
        .collect();
    let k = offsets.len() as f64;
    let est = warped.values.as_slice();
    let valid = warped.valid.as_slice();
    let n = w * h;
    let mut adj = vec![0.0; n];
    let mut count = 0usize;
    let mut value = 0.0;
    // Per neighbour: response error times response slope.
    let mut scaled = vec![0.0; offsets.len()];
    let occ = occlusion.as_slice();
    let census_valid = observed.valid().as_slice();
    for v in 0..h {
        for u in 0..w {
            let i = v * w + u;
            if !(occ[i] && census_valid[i] && valid[i]) {
                continue;
            }
            if offsets.iter().any(|&o| !valid[(i as isize + o) as usize]) {
                continue;
            }
            count += 1;
            let reference = observed.responses_at(u, v);
            let mut dist = 0.0;
            let centre = est[i];
            for (j, &o) in offsets.iter().enumerate() {
                let x = centre - est[(i as isize + o) as usize];
                let s = CENSUS_DAMPING + x * x;
                let inv = 1.0 / s.sqrt();
                let e = x * inv - reference[j];
                dist += e * e;
                scaled[j] = e * CENSUS_DAMPING * inv * inv * inv;
            }
            dist /= k;
            value += robust_phi(dist);
            let outer = robust_phi_derivative(dist) * 2.0 / k;
            let mut centre_adj = 0.0;
            for (j, &o) in offsets.iter().enumerate() {
                let g = outer * scaled[j];
                centre_adj += g;
                adj[(i as isize + o) as usize] -= g;
            }
            adj[i] += centre_adj;
        }
    }
    let mut grad = Grid::new(w, h, 0.0);
    if count == 0 {
        return TermValue { value: 0.0, grad };
    }
    let norm = 1.0 / count as f64;
    for ((g, a), s) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(&adj)
        .zip(warped.slope.as_slice())
    {
        *g = norm * a * s;
    }
    TermValue {
        value: value * norm,
        grad,
    }
}

/// The three image-matching terms for one view, and their weighted sum
/// `photometric + census_weight * census + gradient_weight * gradient`.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpingTerms {
    pub photometric: f64,
    pub census: f64,
    pub gradient: f64,
    pub total: f64,
    pub grad: Grid<f64>,
}

/// Evaluates the matching terms of `observed` against `source` warped by `disp`.
#[allow(clippy::too_many_arguments)]
pub fn warping_loss(
    observed: &RgbImage,
    observed_census: &SoftCensusField,
    source: &RgbImage,
    disp: &DenseDisparityField,
    direction: WarpDirection,
    occlusion: &Grid<bool>,
    census_weight: f64,
    gradient_weight: f64,
) -> WarpingTerms {
    let warped = warp_by_disparity(source, disp, direction);
    let photo = photometric_loss(observed, &warped, occlusion);
    let mut grad = photo.grad;
    let census = if census_weight != 0.0 {
        let gray = Warped {
            values: to_gray(&warped.values),
            valid: warped.valid.clone(),
            slope: to_gray(&warped.slope),
        };
        let t = census_loss(observed_census, &gray, occlusion);
        add_scaled(&mut grad, &t.grad, census_weight);
        t.value
    } else {
        0.0
    };
    let gradient = if gradient_weight != 0.0 {
        let t = gradient_loss(observed, &warped, occlusion);
        add_scaled(&mut grad, &t.grad, gradient_weight);
        t.value
    } else {
        0.0
    };
    WarpingTerms {
        photometric: photo.value,
        census,
        gradient,
        total: photo.value + census_weight * census + gradient_weight * gradient,
        grad,
    }
}

pub(crate) fn add_scaled(acc: &mut Grid<f64>, other: &Grid<f64>, k: f64) {
    for (a, b) in acc.as_mut_slice().iter_mut().zip(other.as_slice()) {
        *a += k * b;
    }
}
