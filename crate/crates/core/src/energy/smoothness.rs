use crate::energy::robust::{smooth_abs, smooth_abs_derivative};
use crate::energy::TermValue;
use crate::geometry::DenseDisparityField;
use crate::grid::Grid;
use crate::image_ops::{gradient_magnitude, GradientOrder, RgbImage};

/// Edge-aware per-pixel weights `exp(-alpha1 |grad I|)` and `exp(-alpha2 |lap I|)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothnessWeights {
    pub first: Grid<f64>,
    pub second: Grid<f64>,
}

impl SmoothnessWeights {
    pub fn new(img: &RgbImage, alpha1: f64, alpha2: f64) -> Self {
        Self {
            first: gradient_magnitude(img, GradientOrder::First).map(|g| (-alpha1 * g).exp()),
            second: gradient_magnitude(img, GradientOrder::Second).map(|g| (-alpha2 * g).exp()),
        }
    }
}

pub fn smoothness_loss(
    d: &DenseDisparityField,
    img: &RgbImage,
    alpha1: f64,
    alpha2: f64,
) -> TermValue {
    smoothness_loss_weighted(d, &SmoothnessWeights::new(img, alpha1, alpha2))
}

/// `sum(w1 (|d_u d| + |d_v d|) + w2 (|d_uu d| + |d_vv d|)) / N` with
/// forward first differences and central second differences.
pub fn smoothness_loss_weighted(d: &DenseDisparityField, weights: &SmoothnessWeights) -> TermValue {
    let (w, h) = d.dims();
    assert_eq!(weights.first.dims(), (w, h), "smoothness: size mismatch");
    let n = (w * h) as f64;
    let dg = d.grid();
    let mut grad = Grid::new(w, h, 0.0);
    let mut value = 0.0;
    let g = grad.as_mut_slice();
    let x = dg.as_slice();
    for v in 0..h {
        for u in 0..w {
            let i = v * w + u;
            let w1 = weights.first.as_slice()[i] / n;
            let w2 = weights.second.as_slice()[i] / n;

            // First order, zero-padded at the far border.
            if u + 1 < w {
                let s = x[i + 1] - x[i];
                value += w1 * smooth_abs(s);
                let k = w1 * smooth_abs_derivative(s);
                g[i + 1] += k;
                g[i] -= k;
            } else {
                value += w1 * smooth_abs(0.0);
            }
            if v + 1 < h {
                let s = x[i + w] - x[i];
                value += w1 * smooth_abs(s);
                let k = w1 * smooth_abs_derivative(s);
                g[i + w] += k;
                g[i] -= k;
            } else {
                value += w1 * smooth_abs(0.0);
            }

            // Second order, zero at borders.
            if u > 0 && u + 1 < w {
                let s = x[i - 1] - 2.0 * x[i] + x[i + 1];
                value += w2 * smooth_abs(s);
                let k = w2 * smooth_abs_derivative(s);
                g[i - 1] += k;
                g[i] -= 2.0 * k;
                g[i + 1] += k;
            } else {
                value += w2 * smooth_abs(0.0);
            }
            if v > 0 && v + 1 < h {
                let s = x[i - w] - 2.0 * x[i] + x[i + w];
                value += w2 * smooth_abs(s);
                let k = w2 * smooth_abs_derivative(s);
                g[i - w] += k;
                g[i] -= 2.0 * k;
                g[i + w] += k;
            } else {
                value += w2 * smooth_abs(0.0);
            }
        }
    }
    TermValue { value, grad }
}
