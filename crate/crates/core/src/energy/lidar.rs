use crate::energy::robust::truncated_l2;
use crate::energy::TermValue;
use crate::geometry::{DenseDisparityField, SparseDisparityMap};
use crate::grid::Grid;

/// Mean truncated-quadratic residual over the valid entries of `lidar`
/// (its mask is the keep mask). Zero with zero gradient when no point is kept.
pub fn lidar_loss(d: &DenseDisparityField, lidar: &SparseDisparityMap, epsilon: f64) -> TermValue {
    assert_eq!(d.dims(), lidar.dims(), "lidar loss: size mismatch");
    let (w, h) = d.dims();
    let mut grad = Grid::new(w, h, 0.0);
    let n = lidar.valid_count();
    if n == 0 {
        return TermValue { value: 0.0, grad };
    }
    let inv = 1.0 / n as f64;
    let mut value = 0.0;
    for (u, v, target) in lidar.valid_entries() {
        let (t, dt) = truncated_l2(d[(u, v)] - target, epsilon);
        value += t;
        grad[(u, v)] = dt * inv;
    }
    TermValue {
        value: value * inv,
        grad,
    }
}
