//! Brute-force plane-fit oracle: the hat matrix `H = P (PᵀP)⁻¹ Pᵀ` built
//! explicitly with nalgebra, applied to each segment.

use lsfuse::data_io::{generate_synthetic_scene, SynthSpec};
use lsfuse::energy::{plane_fit_loss, segment_residual, PlaneNorm};
use lsfuse::segmentation::{slic_segment, SuperpixelSegmentation};
use lsfuse::{DenseDisparityField, Grid};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `(I - H) d` over one segment, or `None` when `PᵀP` is singular.
pub fn oracle_residual(d: &Grid<f64>, members: &[usize]) -> Option<Vec<f64>> {
    let w = d.width();
    let n = members.len();
    let p = DMatrix::from_fn(n, 3, |r, c| {
        let i = members[r];
        match c {
            0 => (i % w) as f64,
            1 => (i / w) as f64,
            _ => 1.0,
        }
    });
    let gram = p.transpose() * &p;
    let inverse = gram.try_inverse()?;
    let hat = &p * inverse * p.transpose();
    let values = DVector::from_iterator(n, members.iter().map(|&i| d.as_slice()[i]));
    let residual = &values - hat * &values;
    Some(residual.iter().copied().collect())
}

/// Twenty segmentations: SLIC on synthetic scenes of assorted sizes, and
/// random axis-aligned block partitions.
pub fn segmentations() -> Vec<SuperpixelSegmentation> {
    let mut out = Vec::new();
    for k in 0..10u64 {
        let (w, h) = (32 + 16 * (k as usize % 4), 32 + 8 * (k as usize % 3));
        let scene = generate_synthetic_scene(&SynthSpec {
            width: w,
            height: h,
            disparity_range: (3.0, 12.0),
            seed: 100 + k,
            ..SynthSpec::default()
        })
        .expect("synthetic scene");
        out.push(slic_segment(&scene.pair.left, 6 + k as usize, 10.0, 10).expect("slic"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let (w, h) = (rng.random_range(20..60), rng.random_range(20..50));
        let (bw, bh) = (rng.random_range(3..12), rng.random_range(3..12));
        let labels = Grid::from_fn(w, h, |u, v| ((u / bw) + 100 * (v / bh)) as u32);
        out.push(SuperpixelSegmentation::from_labels(&labels));
    }
    out
}

pub struct PlaneOracleReport {
    /// Largest deviation between library and oracle residuals, and between
    /// library and oracle loss values.
    pub max_deviation: f64,
    /// Largest relative gap between library and oracle per-segment losses.
    pub max_relative_loss_gap: f64,
    /// Largest residual on exactly planar fields.
    pub max_planar_residual: f64,
    /// Largest loss on exactly planar fields, over both norms.
    pub max_planar_loss: f64,
    pub segments_checked: usize,
}

pub fn run_plane_oracle() -> PlaneOracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut max_deviation = 0.0f64;
    let mut max_relative_loss_gap = 0.0f64;
    let mut max_planar_residual = 0.0f64;
    let mut max_planar_loss = 0.0f64;
    let mut segments_checked = 0;
    for seg in segmentations() {
        let (w, h) = seg.dims();
        let random = Grid::from_fn(w, h, |_, _| rng.random_range(1.0..60.0));
        // Planes stay inside the valid disparity range so the field does not clamp them.
        let planes: Vec<(f64, f64, f64)> = (0..seg.segment_count())
            .map(|_| {
                (
                    rng.random_range(-0.2..0.2),
                    rng.random_range(-0.2..0.2),
                    rng.random_range(40.0..60.0),
                )
            })
            .collect();
        let mut planar = Grid::new(w, h, 0.0);
        for (members, &(a, b, c)) in seg.segments().iter().zip(&planes) {
            for &i in members {
                planar.as_mut_slice()[i] = a * (i % w) as f64 + b * (i / w) as f64 + c;
            }
        }
        let mut oracle_loss = 0.0;
        for members in seg.segments() {
            let ours = segment_residual(&random, members);
            let theirs = oracle_residual(&random, members);
            match (ours, theirs) {
                (Some(r), Some(o)) => {
                    for (x, y) in r.iter().zip(&o) {
                        max_deviation = max_deviation.max((x - y).abs());
                    }
                    let n = members.len() as f64;
                    let theirs = o.iter().map(|x| x * x).sum::<f64>() / n;
                    let ours = r.iter().map(|x| x * x).sum::<f64>() / n;
                    max_relative_loss_gap = max_relative_loss_gap
                        .max((ours - theirs).abs() / theirs.max(f64::MIN_POSITIVE));
                    oracle_loss += theirs;
                    segments_checked += 1;
                }
                (None, None) => {}
                // Singular for one and not the other: report as a mismatch.
                _ => max_deviation = f64::INFINITY,
            }
            if let Some(r) = segment_residual(&planar, members) {
                for x in r {
                    max_planar_residual = max_planar_residual.max(x.abs());
                }
            }
        }
        oracle_loss /= seg.segment_count() as f64;
        let ours =
            plane_fit_loss(&DenseDisparityField::new(random), &seg, PlaneNorm::Squared).value;
        max_deviation = max_deviation.max((ours - oracle_loss).abs());
        max_relative_loss_gap = max_relative_loss_gap.max((ours - oracle_loss).abs() / oracle_loss);
        let planar = DenseDisparityField::new(planar);
        for norm in [PlaneNorm::Squared, PlaneNorm::Root] {
            max_planar_loss = max_planar_loss.max(plane_fit_loss(&planar, &seg, norm).value);
        }
    }
    PlaneOracleReport {
        max_deviation,
        max_relative_loss_gap,
        max_planar_residual,
        max_planar_loss,
        segments_checked,
    }
}
