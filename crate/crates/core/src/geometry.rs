//! Depth/disparity conversion and Lidar-to-image projection.

use crate::data_io::{CalibrationSet, RawScan};
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Upper bound of the disparity search range in pixels.
pub const D_MAX: f64 = 192.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

/// Sparse per-pixel disparities with an explicit validity mask.
///
/// Invalid entries hold `0.0`; their value carries no meaning.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseDisparityMap {
    pub values: Grid<f64>,
    pub mask: Grid<bool>,
}

impl SparseDisparityMap {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            values: Grid::new(width, height, 0.0),
            mask: Grid::new(width, height, false),
        }
    }

    /// Every pixel valid.
    pub fn from_dense(values: Grid<f64>) -> Self {
        let mask = Grid::new(values.width(), values.height(), true);
        Self { values, mask }
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dims()
    }

    pub fn valid_count(&self) -> usize {
        self.mask.count_true()
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> Option<f64> {
        self.mask[(u, v)].then(|| self.values[(u, v)])
    }

    pub fn set(&mut self, u: usize, v: usize, value: f64) {
        self.values[(u, v)] = value;
        self.mask[(u, v)] = true;
    }

    pub fn clear(&mut self, u: usize, v: usize) {
        self.values[(u, v)] = 0.0;
        self.mask[(u, v)] = false;
    }

    /// Keeps only the entries selected by `keep`; unselected entries become invalid.
    pub fn restrict(&self, keep: &Grid<bool>) -> Self {
        let mut out = self.clone();
        for i in 0..out.mask.len() {
            if !keep.as_slice()[i] {
                out.mask.as_mut_slice()[i] = false;
                out.values.as_mut_slice()[i] = 0.0;
            }
        }
        out
    }

    /// Iterator over `(u, v, disparity)` of valid entries in row-major order.
    pub fn valid_entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let w = self.width();
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(move |(i, _)| (i % w, i / w, self.values.as_slice()[i]))
    }

    /// 2x decimation for pyramid levels: each coarse pixel takes the largest
    /// (nearest) disparity of its 2x2 block, scaled by 0.5.
    pub fn downsample2(&self) -> Self {
        let (w, h) = (self.width() / 2, self.height() / 2);
        let mut out = Self::empty(w, h);
        for v in 0..h {
            for u in 0..w {
                let mut best: Option<f64> = None;
                for (du, dv) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    if let Some(d) = self.get(2 * u + du, 2 * v + dv) {
                        best = Some(best.map_or(d, |b: f64| b.max(d)));
                    }
                }
                if let Some(d) = best {
                    out.set(u, v, 0.5 * d);
                }
            }
        }
        out
    }
}

/// Dense disparity grid, every value finite and inside `[0, D_MAX]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseDisparityField(Grid<f64>);

impl DenseDisparityField {
    /// Clamps every value into `[0, D_MAX]`; non-finite entries become 0.
    pub fn new(values: Grid<f64>) -> Self {
        let mut field = Self(values);
        field.project();
        field
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self::new(Grid::new(width, height, value))
    }

    pub fn grid(&self) -> &Grid<f64> {
        &self.0
    }

    pub fn into_grid(self) -> Grid<f64> {
        self.0
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    pub(crate) fn project(&mut self) {
        for x in self.0.as_mut_slice() {
            *x = if x.is_finite() {
                x.clamp(0.0, D_MAX)
            } else {
                0.0
            };
        }
    }
}

impl std::ops::Index<(usize, usize)> for DenseDisparityField {
    type Output = f64;

    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

pub fn depth_to_disparity(depth: f64, baseline: f64, focal: f64) -> Result<f64> {
    check_positive("baseline", baseline)?;
    check_positive("focal length", focal)?;
    if !(depth > 0.0) {
        return Err(Error::Domain(format!(
            "depth must be positive, got {depth}"
        )));
    }
    Ok(baseline * focal / depth)
}

pub fn disparity_to_depth(disparity: f64, baseline: f64, focal: f64) -> Result<f64> {
    check_positive("baseline", baseline)?;
    check_positive("focal length", focal)?;
    if !(disparity > 0.0) {
        return Err(Error::Domain(format!(
            "disparity must be positive, got {disparity}"
        )));
    }
    Ok(baseline * focal / disparity)
}

fn check_positive(what: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} must be positive, got {x}")))
    }
}

/// Bookkeeping for points discarded during projection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ProjectionStats {
    pub projected: usize,
    pub behind_camera: usize,
    pub outside_frame: usize,
    pub beyond_max_disparity: usize,
    pub collisions: usize,
}

pub fn project_lidar(
    scan: &RawScan,
    calib: &CalibrationSet,
    width: usize,
    height: usize,
    side: Side,
) -> SparseDisparityMap {
    project_lidar_with_stats(scan, calib, width, height, side).0
}

/// Projects every point with `P_side * T`, rounds to the nearest pixel (half-up)
/// and z-buffers collisions by keeping the largest disparity.
pub fn project_lidar_with_stats(
    scan: &RawScan,
    calib: &CalibrationSet,
    width: usize,
    height: usize,
    side: Side,
) -> (SparseDisparityMap, ProjectionStats) {
    let projection = calib.projection(side);
    let t = &calib.extrinsic;
    let bf = calib.baseline * calib.focal;
    let mut map = SparseDisparityMap::empty(width, height);
    let mut stats = ProjectionStats::default();

    for p in &scan.points {
        let x = [p[0] as f64, p[1] as f64, p[2] as f64, 1.0];
        let mut cam = [0.0; 4];
        for (r, c) in cam.iter_mut().enumerate() {
            *c = (0..4).map(|k| t[r][k] * x[k]).sum();
        }
        let mut img = [0.0; 3];
        for (r, c) in img.iter_mut().enumerate() {
            *c = (0..4).map(|k| projection[r][k] * cam[k]).sum();
        }
        let depth = img[2];
        if !(depth > 0.0) {
            stats.behind_camera += 1;
            continue;
        }
        let u = (img[0] / depth + 0.5).floor();
        let v = (img[1] / depth + 0.5).floor();
        if !(u >= 0.0 && v >= 0.0 && u < width as f64 && v < height as f64) {
            stats.outside_frame += 1;
            continue;
        }
        let disparity = bf / depth;
        if !(disparity < D_MAX) {
            stats.beyond_max_disparity += 1;
            continue;
        }
        let (u, v) = (u as usize, v as usize);
        match map.get(u, v) {
            Some(existing) => {
                stats.collisions += 1;
                if disparity > existing {
                    map.set(u, v, disparity);
                }
            }
            None => {
                stats.projected += 1;
                map.set(u, v, disparity);
            }
        }
    }
    (map, stats)
}

/// Fraction of valid pixels.
pub fn density(map: &SparseDisparityMap) -> f64 {
    let n = map.mask.len();
    if n == 0 {
        0.0
    } else {
        map.valid_count() as f64 / n as f64
    }
}

/// Fills every pixel with the median of its `k` Euclidean-nearest valid
/// points (all points when fewer exist), neighbours ordered by distance, then
/// row, then column. `k = 1` is plain nearest-neighbour interpolation.
pub fn nearest_median_fill(map: &SparseDisparityMap, k: usize) -> Result<DenseDisparityField> {
    if k == 0 {
        return Err(Error::InvalidInput("nearest fill needs k >= 1".into()));
    }
    let (w, h) = map.dims();
    let rows: Vec<Vec<(usize, f64)>> = (0..h)
        .map(|v| {
            (0..w)
                .filter_map(|u| map.get(u, v).map(|d| (u, d)))
                .collect()
        })
        .collect();
    let total: usize = rows.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::InvalidInput(
            "nearest fill needs at least one point".into(),
        ));
    }
    let k = k.min(total);
    let mut out = Grid::new(w, h, 0.0);
    // Sorted by (squared distance, row, column); value carried along.
    let mut best: Vec<(usize, usize, usize, f64)> = Vec::with_capacity(k + 1);
    let mut values = Vec::with_capacity(k);
    for v in 0..h {
        for u in 0..w {
            best.clear();
            let bound = |best: &Vec<(usize, usize, usize, f64)>| {
                if best.len() < k {
                    usize::MAX
                } else {
                    best[k - 1].0
                }
            };
            for dv in 0..h {
                if dv * dv > bound(&best) {
                    break;
                }
                let above = v.checked_sub(dv);
                let below = if dv > 0 && v + dv < h {
                    Some(v + dv)
                } else {
                    None
                };
                for y in [above, below].into_iter().flatten() {
                    let row = &rows[y];
                    let at = row.partition_point(|&(x, _)| x < u);
                    let consider = |j: usize, best: &mut Vec<(usize, usize, usize, f64)>| -> bool {
                        let (x, d) = row[j];
                        let cand = (dv * dv + x.abs_diff(u).pow(2), y, x, d);
                        if best.len() == k
                            && (cand.0, cand.1, cand.2)
                                >= (best[k - 1].0, best[k - 1].1, best[k - 1].2)
                        {
                            return cand.0 <= best[k - 1].0;
                        }
                        let pos =
                            best.partition_point(|b| (b.0, b.1, b.2) < (cand.0, cand.1, cand.2));
                        best.insert(pos, cand);
                        best.truncate(k);
                        true
                    };
                    for j in (0..at).rev() {
                        if !consider(j, &mut best) {
                            break;
                        }
                    }
                    for j in at..row.len() {
                        if !consider(j, &mut best) {
                            break;
                        }
                    }
                }
            }
            values.clear();
            values.extend(best.iter().map(|b| b.3));
            values.sort_by(|a, b| a.total_cmp(b));
            let n = values.len();
            out[(u, v)] = if n % 2 == 1 {
                values[n / 2]
            } else {
                0.5 * (values[n / 2 - 1] + values[n / 2])
            };
        }
    }
    Ok(DenseDisparityField::new(out))
}

pub fn nearest_neighbour_fill(map: &SparseDisparityMap) -> Result<DenseDisparityField> {
    nearest_median_fill(map, 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn calib() -> CalibrationSet {
        CalibrationSet::from_projections(
            [
                [700.0, 0.0, 32.0, 0.0],
                [0.0, 700.0, 16.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
            ],
            [
                [700.0, 0.0, 32.0, -350.0],
                [0.0, 700.0, 16.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
            ],
            crate::data_io::IDENTITY4,
        )
        .unwrap()
    }

    #[test]
    fn depth_disparity_examples() {
        assert!((depth_to_disparity(35.0, 0.5, 700.0).unwrap() - 10.0).abs() < 1e-12);
        assert!((depth_to_disparity(350.0, 0.5, 700.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(
            depth_to_disparity(0.0, 0.5, 700.0),
            Err(Error::Domain(_))
        ));
        assert!((disparity_to_depth(10.0, 0.5, 700.0).unwrap() - 35.0).abs() < 1e-12);
        assert!(matches!(
            disparity_to_depth(0.0, 0.5, 700.0),
            Err(Error::Domain(_))
        ));
        for x in [1.0, 5.0, 80.0] {
            let d = depth_to_disparity(x, 0.5, 700.0).unwrap();
            let back = disparity_to_depth(d, 0.5, 700.0).unwrap();
            assert!(((back - x) / x).abs() < 1e-9);
        }
    }

    #[test]
    fn strictly_decreasing_in_depth() {
        let mut prev = f64::INFINITY;
        for i in 1..200 {
            let d = depth_to_disparity(i as f64 * 0.37, 0.54, 721.0).unwrap();
            assert!(d < prev);
            prev = d;
        }
    }

    #[test]
    fn optical_axis_point_lands_on_principal_point() {
        let scan = RawScan::from_points(vec![[0.0, 0.0, 35.0, 0.0]]);
        let map = project_lidar(&scan, &calib(), 64, 32, Side::Left);
        assert_eq!(map.valid_count(), 1);
        assert!((map.get(32, 16).unwrap() - 10.0).abs() < 1e-12);
        // Right camera shifted by the baseline: same disparity, u moves left.
        let right = project_lidar(&scan, &calib(), 64, 32, Side::Right);
        assert!((right.get(22, 16).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn drops_points_behind_camera() {
        let scan = RawScan::from_points(vec![[0.0, 0.0, -2.0, 0.0]]);
        let (map, stats) = project_lidar_with_stats(&scan, &calib(), 64, 32, Side::Left);
        assert_eq!(map.valid_count(), 0);
        assert_eq!(stats.behind_camera, 1);
    }

    #[test]
    fn collisions_keep_nearest_point() {
        let scan = RawScan::from_points(vec![[0.0, 0.0, 20.0, 0.0], [0.0, 0.0, 10.0, 0.0]]);
        let map = project_lidar(&scan, &calib(), 64, 32, Side::Left);
        assert!((map.get(32, 16).unwrap() - 35.0).abs() < 1e-12);
    }

    #[test]
    fn large_disparities_are_dropped_and_tallied() {
        // 350 / 1.0 = 350 px > D_MAX
        let scan = RawScan::from_points(vec![[0.0, 0.0, 1.0, 0.0]]);
        let (map, stats) = project_lidar_with_stats(&scan, &calib(), 64, 32, Side::Left);
        assert_eq!(map.valid_count(), 0);
        assert_eq!(stats.beyond_max_disparity, 1);
    }

    #[test]
    fn density_extremes() {
        let mut m = SparseDisparityMap::empty(4, 4);
        assert_eq!(density(&m), 0.0);
        for v in 0..4 {
            for u in 0..4 {
                m.set(u, v, 1.0);
            }
        }
        assert_eq!(density(&m), 1.0);
    }

    #[test]
    fn dense_field_is_clamped() {
        let f =
            DenseDisparityField::new(Grid::from_vec(3, 1, vec![-1.0, 500.0, f64::NAN]).unwrap());
        assert_eq!(f.grid().as_slice(), &[0.0, D_MAX, 0.0]);
    }

    #[test]
    fn nearest_fill_copies_single_point_and_respects_ties() {
        let mut m = SparseDisparityMap::empty(5, 5);
        m.set(1, 1, 7.0);
        assert!(nearest_neighbour_fill(&m)
            .unwrap()
            .grid()
            .iter()
            .all(|&x| x == 7.0));
        m.set(3, 1, 9.0);
        let f = nearest_neighbour_fill(&m).unwrap();
        assert_eq!(f[(2, 4)], 7.0);
        assert_eq!(f[(4, 0)], 9.0);
        assert!(nearest_neighbour_fill(&SparseDisparityMap::empty(3, 3)).is_err());
    }

    #[test]
    fn median_fill_rejects_isolated_outlier() {
        let mut m = SparseDisparityMap::empty(9, 9);
        for (u, v) in [
            (1, 1),
            (4, 1),
            (7, 1),
            (1, 4),
            (7, 4),
            (1, 7),
            (4, 7),
            (7, 7),
        ] {
            m.set(u, v, 10.0);
        }
        m.set(4, 4, 40.0);
        assert_eq!(nearest_neighbour_fill(&m).unwrap()[(4, 4)], 40.0);
        let f = nearest_median_fill(&m, 5).unwrap();
        assert!(f.grid().iter().all(|&x| x == 10.0));
        assert!(nearest_median_fill(&m, 0).is_err());
    }

    #[test]
    fn median_fill_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let (w, h) = (rng.random_range(1..12), rng.random_range(1..12));
            let mut m = SparseDisparityMap::empty(w, h);
            for v in 0..h {
                for u in 0..w {
                    if rng.random_bool(0.2) {
                        m.set(u, v, rng.random_range(0.0..50.0f64).round());
                    }
                }
            }
            if m.valid_count() == 0 {
                continue;
            }
            let k = rng.random_range(1..6);
            let fast = nearest_median_fill(&m, k).unwrap();
            for v in 0..h {
                for u in 0..w {
                    let mut all: Vec<(usize, usize, usize, f64)> = m
                        .valid_entries()
                        .map(|(x, y, d)| (x.abs_diff(u).pow(2) + y.abs_diff(v).pow(2), y, x, d))
                        .collect();
                    all.sort_by_key(|a| (a.0, a.1, a.2));
                    let mut vals: Vec<f64> = all.iter().take(k).map(|a| a.3).collect();
                    vals.sort_by(|a, b| a.total_cmp(b));
                    let n = vals.len();
                    let med = if n % 2 == 1 {
                        vals[n / 2]
                    } else {
                        0.5 * (vals[n / 2 - 1] + vals[n / 2])
                    };
                    assert_eq!(fast[(u, v)], med);
                }
            }
        }
    }
}
