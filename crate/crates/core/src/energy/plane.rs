use crate::energy::TermValue;
use crate::geometry::DenseDisparityField;
use crate::grid::Grid;
use crate::segmentation::SuperpixelSegmentation;

/// How a segment's plane residual is turned into a loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaneNorm {
    /// `|r|^2 / N_seg`.
    #[default]
    Squared,
    /// `|r| / sqrt(N_seg)`.
    Root,
}

/// Least-squares plane `d = a u + b v + c`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl PlaneParams {
    #[inline]
    pub fn eval(&self, u: f64, v: f64) -> f64 {
        self.a * u + self.b * v + self.c
    }
}

/// Relative determinant below which the design matrix counts as rank deficient.
const DEGENERACY_TOL: f64 = 1e-9;

/// Fits a plane through `(u, v, d)` samples from centred normal equations.
/// `None` for fewer than three samples or collinear pixel coordinates.
pub fn plane_params(coords: &[(f64, f64)], values: &[f64]) -> Option<PlaneParams> {
    assert_eq!(coords.len(), values.len());
    let n = coords.len();
    if n < 3 {
        return None;
    }
    let nf = n as f64;
    let (mut su, mut sv, mut sd) = (0.0, 0.0, 0.0);
    for (&(u, v), &d) in coords.iter().zip(values) {
        su += u;
        sv += v;
        sd += d;
    }
    let (mu, mv, md) = (su / nf, sv / nf, sd / nf);
    let (mut xx, mut xy, mut yy, mut xd, mut yd) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&(u, v), &d) in coords.iter().zip(values) {
        let (x, y, z) = (u - mu, v - mv, d - md);
        xx += x * x;
        xy += x * y;
        yy += y * y;
        xd += x * z;
        yd += y * z;
    }
    let det = xx * yy - xy * xy;
    if !(det > DEGENERACY_TOL * xx * yy) || xx == 0.0 || yy == 0.0 {
        return None;
    }
    let a = (yy * xd - xy * yd) / det;
    let b = (xx * yd - xy * xd) / det;
    Some(PlaneParams {
        a,
        b,
        c: md - a * mu - b * mv,
    })
}

/// Residual of `d` against its own plane over one segment, in segment order.
pub fn segment_residual(d: &Grid<f64>, members: &[usize]) -> Option<Vec<f64>> {
    let w = d.width();
    let coords: Vec<(f64, f64)> = members
        .iter()
        .map(|&i| ((i % w) as f64, (i / w) as f64))
        .collect();
    let values: Vec<f64> = members.iter().map(|&i| d.as_slice()[i]).collect();
    let p = plane_params(&coords, &values)?;
    Some(
        coords
            .iter()
            .zip(&values)
            .map(|(&(u, v), &z)| z - p.eval(u, v))
            .collect(),
    )
}

/// Mean over segments of the per-segment plane residual norm. Degenerate
/// segments count towards the mean but contribute nothing.
pub fn plane_fit_loss(
    d: &DenseDisparityField,
    seg: &SuperpixelSegmentation,
    norm: PlaneNorm,
) -> TermValue {
    assert_eq!(d.dims(), seg.dims(), "plane loss: size mismatch");
    let (w, h) = d.dims();
    let mut grad = Grid::new(w, h, 0.0);
    let count = seg.segment_count();
    if count == 0 {
        return TermValue { value: 0.0, grad };
    }
    let inv_count = 1.0 / count as f64;
    let mut value = 0.0;
    for members in seg.segments() {
        let Some(r) = segment_residual(d.grid(), members) else {
            continue;
        };
        let n = members.len() as f64;
        let sq: f64 = r.iter().map(|x| x * x).sum();
        // (I - H) is a symmetric projector, so grad |r|^2 = 2 r.
        match norm {
            PlaneNorm::Squared => {
                value += sq / n;
                let k = 2.0 / n * inv_count;
                for (&i, &ri) in members.iter().zip(&r) {
                    grad.as_mut_slice()[i] = k * ri;
                }
            }
            PlaneNorm::Root => {
                let len = sq.sqrt();
                value += len / n.sqrt();
                if len > 0.0 {
                    let k = inv_count / (len * n.sqrt());
                    for (&i, &ri) in members.iter().zip(&r) {
                        grad.as_mut_slice()[i] = k * ri;
                    }
                }
            }
        }
    }
    TermValue {
        value: value * inv_count,
        grad,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_halves(w: usize, h: usize) -> SuperpixelSegmentation {
        SuperpixelSegmentation::from_labels(&Grid::from_fn(w, h, |u, _| (u >= w / 2) as u32))
    }

    #[test]
    fn recovers_exact_plane() {
        let coords: Vec<_> = (0..20).map(|i| ((i % 5) as f64, (i / 5) as f64)).collect();
        let values: Vec<_> = coords
            .iter()
            .map(|&(u, v)| 0.3 * u - 1.5 * v + 7.0)
            .collect();
        let p = plane_params(&coords, &values).unwrap();
        assert!((p.a - 0.3).abs() < 1e-12);
        assert!((p.b + 1.5).abs() < 1e-12);
        assert!((p.c - 7.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_and_tiny_sets_are_degenerate() {
        let row: Vec<_> = (0..6).map(|u| (u as f64, 2.0)).collect();
        assert!(plane_params(&row, &[1.0; 6]).is_none());
        assert!(plane_params(&[(0.0, 0.0), (1.0, 1.0)], &[1.0, 2.0]).is_none());
    }

    #[test]
    fn planar_field_has_zero_loss() {
        let d = DenseDisparityField::new(Grid::from_fn(12, 8, |u, v| {
            20.0 + 0.25 * u as f64 - 0.5 * v as f64
        }));
        let t = plane_fit_loss(&d, &two_halves(12, 8), PlaneNorm::Squared);
        assert!(t.value < 1e-20);
        assert!(t.grad.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn bump_has_positive_loss() {
        let mut g = Grid::new(12, 8, 30.0);
        g[(3, 3)] = 40.0;
        let t = plane_fit_loss(
            &DenseDisparityField::new(g),
            &two_halves(12, 8),
            PlaneNorm::Squared,
        );
        assert!(t.value > 0.1);
        assert!(t.grad[(3, 3)] > 0.0);
        assert_eq!(t.grad[(9, 3)], 0.0);
    }

    #[test]
    fn root_norm_is_scale_linear() {
        let mut g = Grid::new(12, 8, 30.0);
        g[(3, 3)] = 34.0;
        let seg = two_halves(12, 8);
        let a = plane_fit_loss(&DenseDisparityField::new(g.clone()), &seg, PlaneNorm::Root).value;
        g[(3, 3)] = 38.0;
        let b = plane_fit_loss(&DenseDisparityField::new(g), &seg, PlaneNorm::Root).value;
        assert!((b / a - 2.0).abs() < 1e-9);
    }
}
