/// Offset inside the Charbonnier-style kernel `phi(s) = sqrt(s^2 + 0.001^2)`.
pub const PHI_OFFSET: f64 = 0.001;

#[inline]
pub fn robust_phi(s: f64) -> f64 {
    (s * s + PHI_OFFSET * PHI_OFFSET).sqrt()
}

#[inline]
pub fn robust_phi_derivative(s: f64) -> f64 {
    s / robust_phi(s)
}

/// `0.5 x^2` for `|x| < epsilon`, else `0.5 epsilon^2`. Returns `(value, d/dx)`.
#[inline]
pub fn truncated_l2(x: f64, epsilon: f64) -> (f64, f64) {
    if x.abs() < epsilon {
        (0.5 * x * x, x)
    } else {
        (0.5 * epsilon * epsilon, 0.0)
    }
}

/// Differentiable `|x|` used on disparity derivatives.
pub const SMOOTH_ABS_EPS: f64 = 1e-6;

#[inline]
pub fn smooth_abs(x: f64) -> f64 {
    (x * x + SMOOTH_ABS_EPS * SMOOTH_ABS_EPS).sqrt()
}

#[inline]
pub fn smooth_abs_derivative(x: f64) -> f64 {
    x / smooth_abs(x)
}
