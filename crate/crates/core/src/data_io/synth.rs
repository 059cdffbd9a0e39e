//! Seeded synthetic stereo + Lidar scenes with known ground truth.
//!
//! The scene is a Voronoi partition of the left image into regions, each
//! carrying an exact disparity plane. The left image is a smoothed random
//! texture tinted per region; the right image is rendered by backward warping
//! the left image with the right-view ground truth, so the ground truth is
//! exact by construction. Lidar samples are drawn uniformly and then
//! corrupted with planted outliers and Gaussian noise.
//!
//! All randomness comes from one `ChaCha8` key (the seed) with a separate
//! stream per concern, so changing e.g. the noise level never changes the
//! texture or the Lidar sampling pattern.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::data_io::calib::CalibrationSet;
use crate::data_io::scene::{CorruptionRecord, ImagePair, LidarInput, SceneBundle};
use crate::error::{Error, Result};
use crate::geometry::{SparseDisparityMap, D_MAX};
use crate::grid::Grid;
use crate::image_ops::RgbImage;

const STREAM_LAYOUT: u64 = 1;
const STREAM_TEXTURE: u64 = 2;
const STREAM_FILL: u64 = 3;
const STREAM_MASK_LEFT: u64 = 4;
const STREAM_MASK_RIGHT: u64 = 5;
const STREAM_OUTLIER_LEFT: u64 = 6;
const STREAM_OUTLIER_RIGHT: u64 = 7;
const STREAM_NOISE_LEFT: u64 = 8;
const STREAM_NOISE_RIGHT: u64 = 9;

const TEXTURE_AMPLITUDE: f64 = 0.16;
const MAX_SLOPE_U: f64 = 0.03;
const MAX_SLOPE_V: f64 = 0.06;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    /// Dominant spatial frequency of the texture, cycles per pixel.
    pub texture_frequency: f64,
    pub plane_count: usize,
    /// Fraction of pixels carrying a Lidar sample.
    pub lidar_density: f64,
    /// Fraction of Lidar samples replaced by planted outliers.
    pub outlier_fraction: f64,
    /// Outlier offset magnitude range in pixels.
    pub outlier_offset: (f64, f64),
    /// Gaussian noise added to the remaining samples, pixels.
    pub noise_sigma: f64,
    /// Half-width in pixels of the band around region boundaries where an
    /// outlier may instead take the disparity across the boundary. 0 disables.
    pub misalignment_band: f64,
    /// Range of per-region plane disparities at the region seed.
    pub disparity_range: (f64, f64),
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            width: 256,
            height: 128,
            texture_frequency: 0.15,
            plane_count: 6,
            lidar_density: 0.10,
            outlier_fraction: 0.20,
            outlier_offset: (5.0, 30.0),
            noise_sigma: 0.0,
            misalignment_band: 0.0,
            disparity_range: (10.0, 40.0),
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidInput(format!("synthetic spec: {msg}")));
        if self.width < 32 || self.height < 32 {
            return bad("image must be at least 32x32");
        }
        if !(0.0..=1.0).contains(&self.lidar_density) {
            return bad("lidar density must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.outlier_fraction) {
            return bad("outlier fraction must lie in [0, 1]");
        }
        if !(self.texture_frequency > 0.0 && self.texture_frequency <= 0.5) {
            return bad("texture frequency must lie in (0, 0.5]");
        }
        if self.plane_count == 0 {
            return bad("plane count must be positive");
        }
        let (lo, hi) = self.outlier_offset;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return bad("outlier offset range must satisfy 0 <= lo <= hi");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise sigma must be non-negative");
        }
        if !(self.misalignment_band >= 0.0 && self.misalignment_band.is_finite()) {
            return bad("misalignment band must be non-negative");
        }
        let (dlo, dhi) = self.disparity_range;
        if !(dlo >= 1.0 && dhi >= dlo && dhi < D_MAX - 1.0) {
            return bad("disparity range must satisfy 1 <= lo <= hi < d_max - 1");
        }
        Ok(())
    }

    /// `key=value` lines, one per field.
    pub fn to_meta(&self) -> String {
        format!(
            "width={}\nheight={}\ntexture_frequency={}\nplane_count={}\nlidar_density={}\n\
             outlier_fraction={}\noutlier_offset_min={}\noutlier_offset_max={}\nnoise_sigma={}\n\
             misalignment_band={}\ndisparity_min={}\ndisparity_max={}\nseed={}\n",
            self.width,
            self.height,
            self.texture_frequency,
            self.plane_count,
            self.lidar_density,
            self.outlier_fraction,
            self.outlier_offset.0,
            self.outlier_offset.1,
            self.noise_sigma,
            self.misalignment_band,
            self.disparity_range.0,
            self.disparity_range.1,
            self.seed
        )
    }

    /// Reads fields from parsed meta entries; absent keys keep their defaults.
    pub fn from_meta(entries: &std::collections::BTreeMap<String, String>) -> Result<Self> {
        fn get<T: std::str::FromStr>(
            entries: &std::collections::BTreeMap<String, String>,
            key: &str,
            default: T,
        ) -> Result<T> {
            match entries.get(key) {
                None => Ok(default),
                Some(v) => v
                    .parse()
                    .map_err(|_| Error::SceneParse(format!("bad value for {key}: {v:?}"))),
            }
        }
        let d = SynthSpec::default();
        let spec = SynthSpec {
            width: get(entries, "width", d.width)?,
            height: get(entries, "height", d.height)?,
            texture_frequency: get(entries, "texture_frequency", d.texture_frequency)?,
            plane_count: get(entries, "plane_count", d.plane_count)?,
            lidar_density: get(entries, "lidar_density", d.lidar_density)?,
            outlier_fraction: get(entries, "outlier_fraction", d.outlier_fraction)?,
            outlier_offset: (
                get(entries, "outlier_offset_min", d.outlier_offset.0)?,
                get(entries, "outlier_offset_max", d.outlier_offset.1)?,
            ),
            noise_sigma: get(entries, "noise_sigma", d.noise_sigma)?,
            misalignment_band: get(entries, "misalignment_band", d.misalignment_band)?,
            disparity_range: (
                get(entries, "disparity_min", d.disparity_range.0)?,
                get(entries, "disparity_max", d.disparity_range.1)?,
            ),
            seed: get(entries, "seed", d.seed)?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Clone, Copy, Debug)]
struct Plane {
    seed_u: f64,
    seed_v: f64,
    d0: f64,
    a: f64,
    b: f64,
}

impl Plane {
    fn at(&self, u: f64, v: f64) -> f64 {
        self.d0 + self.a * (u - self.seed_u) + self.b * (v - self.seed_v)
    }
}

struct Layout {
    planes: Vec<Plane>,
}

impl Layout {
    fn region_of(&self, u: f64, v: f64) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (k, p) in self.planes.iter().enumerate() {
            let d2 = (u - p.seed_u).powi(2) + (v - p.seed_v).powi(2);
            if d2 < best.0 {
                best = (d2, k);
            }
        }
        best.1
    }
}

fn make_layout(spec: &SynthSpec) -> (Layout, Grid<usize>) {
    let mut rng = stream(spec.seed, STREAM_LAYOUT);
    let (w, h) = (spec.width as f64, spec.height as f64);
    let mut planes: Vec<Plane> = (0..spec.plane_count)
        .map(|_| Plane {
            seed_u: rng.random_range(0.0..w),
            seed_v: rng.random_range(0.0..h),
            d0: 0.0,
            a: 0.0,
            b: 0.0,
        })
        .collect();
    let layout = Layout {
        planes: planes.clone(),
    };
    let regions = Grid::from_fn(spec.width, spec.height, |u, v| {
        layout.region_of(u as f64, v as f64)
    });

    let (dlo, dhi) = spec.disparity_range;
    for (k, plane) in planes.iter_mut().enumerate() {
        let pixels: Vec<(usize, usize)> = (0..spec.height)
            .flat_map(|v| (0..spec.width).map(move |u| (u, v)))
            .filter(|&(u, v)| regions[(u, v)] == k)
            .collect();
        let mut accepted = false;
        for _ in 0..64 {
            plane.d0 = if dhi > dlo {
                rng.random_range(dlo..dhi)
            } else {
                dlo
            };
            plane.a = rng.random_range(-MAX_SLOPE_U..MAX_SLOPE_U);
            plane.b = rng.random_range(-MAX_SLOPE_V..MAX_SLOPE_V);
            let ok = pixels.iter().all(|&(u, v)| {
                let d = plane.at(u as f64, v as f64);
                (1.0..=D_MAX - 1.0).contains(&d)
            });
            if ok {
                accepted = true;
                break;
            }
        }
        if !accepted {
            plane.a = 0.0;
            plane.b = 0.0;
        }
    }
    (Layout { planes }, regions)
}

/// Gaussian-smoothed white noise normalised to zero mean and unit variance.
fn smooth_noise(width: usize, height: usize, frequency: f64, rng: &mut ChaCha8Rng) -> Grid<f64> {
    let white = Grid::from_fn(width, height, |_, _| StandardNormal.sample(rng));
    let sigma = 1.0 / (2.0 * std::f64::consts::PI * frequency);
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let blur = |g: &Grid<f64>, horizontal: bool| {
        Grid::from_fn(width, height, |u, v| {
            let mut acc = 0.0;
            for (j, k) in kernel.iter().enumerate() {
                let off = j as isize - radius;
                let (su, sv) = if horizontal {
                    ((u as isize + off).clamp(0, width as isize - 1) as usize, v)
                } else {
                    (u, (v as isize + off).clamp(0, height as isize - 1) as usize)
                };
                acc += k * g[(su, sv)];
            }
            acc / norm
        })
    };
    let smooth = blur(&blur(&white, true), false);
    let n = smooth.len() as f64;
    let mean = smooth.iter().sum::<f64>() / n;
    let var = smooth.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-12);
    smooth.map(|x| (x - mean) / std)
}

fn bilinear_rgb(img: &RgbImage, u: f64, v: usize) -> [f64; 3] {
    let u0 = u.floor() as usize;
    let u1 = (u0 + 1).min(img.width() - 1);
    let t = u - u0 as f64;
    let (a, b) = (img[(u0, v)], img[(u1, v)]);
    [0, 1, 2].map(|c| a[c] * (1.0 - t) + b[c] * t)
}

struct Tints {
    base: Vec<[f64; 3]>,
    gain: Vec<[f64; 3]>,
}

fn make_tints(count: usize, rng: &mut ChaCha8Rng) -> Tints {
    let base = (0..count)
        .map(|_| [0, 1, 2].map(|_| rng.random_range(0.3..0.7)))
        .collect();
    let gain = (0..count)
        .map(|_| [0, 1, 2].map(|_| rng.random_range(0.8..1.2)))
        .collect();
    Tints { base, gain }
}

fn shade(tints: &Tints, region: usize, n: f64) -> [f64; 3] {
    [0, 1, 2].map(|c| {
        (tints.base[region][c] + TEXTURE_AMPLITUDE * tints.gain[region][c] * n).clamp(0.0, 1.0)
    })
}

/// Right-view rendering: ground truth, region labels and the colour image.
struct RightView {
    image: RgbImage,
    gt: SparseDisparityMap,
    regions: Grid<usize>,
}

fn render_right(spec: &SynthSpec, layout: &Layout, left: &RgbImage, fill: &Grid<f64>) -> RightView {
    let (w, h) = (spec.width, spec.height);
    let mut image = Grid::new(w, h, [0.0; 3]);
    let mut gt = SparseDisparityMap::empty(w, h);
    let mut regions = Grid::new(w, h, usize::MAX);
    let fill_tint = Tints {
        base: vec![[0.5; 3]],
        gain: vec![[1.0; 3]],
    };
    let max_u = (w - 1) as f64;
    for v in 0..h {
        let vf = v as f64;
        for x in 0..w {
            let xf = x as f64;
            let mut best: Option<(f64, f64, usize)> = None;
            for (k, p) in layout.planes.iter().enumerate() {
                // Solve u - plane_k(u, v) = x for the left-image column u.
                let u = (xf + p.d0 - p.a * p.seed_u + p.b * (vf - p.seed_v)) / (1.0 - p.a);
                if !(0.0..=max_u).contains(&u) || layout.region_of(u, vf) != k {
                    continue;
                }
                let d = u - xf;
                if d > 0.0 && best.is_none_or(|(bd, _, _)| d > bd) {
                    best = Some((d, u, k));
                }
            }
            match best {
                Some((d, u, k)) => {
                    image[(x, v)] = bilinear_rgb(left, u, v);
                    gt.set(x, v, d);
                    regions[(x, v)] = k;
                }
                None => image[(x, v)] = shade(&fill_tint, 0, fill[(x, v)]),
            }
        }
    }
    RightView { image, gt, regions }
}

fn sample_mask(gt: &SparseDisparityMap, density: f64, rng: &mut ChaCha8Rng) -> SparseDisparityMap {
    let mut out = SparseDisparityMap::empty(gt.width(), gt.height());
    for v in 0..gt.height() {
        for u in 0..gt.width() {
            let take = rng.random_bool(density);
            if let (true, Some(d)) = (take, gt.get(u, v)) {
                out.set(u, v, d);
            }
        }
    }
    out
}

/// Disparity across the nearest region boundary within `band` px, if any.
fn across_boundary(
    gt: &SparseDisparityMap,
    regions: &Grid<usize>,
    u: usize,
    v: usize,
    band: f64,
) -> Option<f64> {
    let reach = band.floor() as isize;
    let own = regions[(u, v)];
    for off in 1..=reach {
        for sign in [-1isize, 1] {
            let su = u as isize + sign * off;
            if su < 0 || su >= gt.width() as isize {
                continue;
            }
            let su = su as usize;
            if regions[(su, v)] != own && regions[(su, v)] != usize::MAX {
                if let Some(d) = gt.get(su, v) {
                    return Some(d);
                }
            }
        }
    }
    None
}

fn corrupt(
    lidar: &mut SparseDisparityMap,
    gt: &SparseDisparityMap,
    regions: &Grid<usize>,
    spec: &SynthSpec,
    outlier_rng: &mut ChaCha8Rng,
    noise_rng: &mut ChaCha8Rng,
) -> Grid<bool> {
    let mut record = Grid::new(lidar.width(), lidar.height(), false);
    let valid: Vec<(usize, usize)> = lidar.valid_entries().map(|(u, v, _)| (u, v)).collect();
    let n_out = (spec.outlier_fraction * valid.len() as f64).round() as usize;
    let mut chosen = index::sample(outlier_rng, valid.len(), n_out.min(valid.len())).into_vec();
    chosen.sort_unstable();
    let ceiling = D_MAX - 1e-3;
    let (lo, hi) = spec.outlier_offset;
    for &i in &chosen {
        let (u, v) = valid[i];
        let d = lidar.values[(u, v)];
        let displaced = if spec.misalignment_band > 0.0 && outlier_rng.random_bool(0.5) {
            across_boundary(gt, regions, u, v, spec.misalignment_band)
        } else {
            None
        };
        let new = match displaced {
            Some(x) => x,
            None => {
                let mag = if hi > lo {
                    outlier_rng.random_range(lo..=hi)
                } else {
                    lo
                };
                let sign = if outlier_rng.random_bool(0.5) {
                    1.0
                } else {
                    -1.0
                };
                let mut x = d + sign * mag;
                if !(0.0..ceiling).contains(&x) {
                    x = d - sign * mag;
                }
                x.clamp(0.0, ceiling)
            }
        };
        lidar.values[(u, v)] = new;
        record[(u, v)] = true;
    }
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).expect("sigma validated");
        for (u, v) in valid {
            if !record[(u, v)] {
                let x = lidar.values[(u, v)] + normal.sample(noise_rng);
                lidar.values[(u, v)] = x.clamp(0.0, ceiling);
            }
        }
    }
    record
}

pub fn generate_synthetic_scene(spec: &SynthSpec) -> Result<SceneBundle> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let (layout, regions) = make_layout(spec);

    let gt_left = SparseDisparityMap::from_dense(Grid::from_fn(w, h, |u, v| {
        layout.planes[regions[(u, v)]].at(u as f64, v as f64)
    }));

    let mut tex_rng = stream(spec.seed, STREAM_TEXTURE);
    let tints = make_tints(spec.plane_count, &mut tex_rng);
    let noise = smooth_noise(w, h, spec.texture_frequency, &mut tex_rng);
    let left = Grid::from_fn(w, h, |u, v| shade(&tints, regions[(u, v)], noise[(u, v)]));

    let fill = smooth_noise(
        w,
        h,
        spec.texture_frequency,
        &mut stream(spec.seed, STREAM_FILL),
    );
    let right = render_right(spec, &layout, &left, &fill);
    let render_valid = right.gt.mask.clone();

    let mut lidar_left = sample_mask(
        &gt_left,
        spec.lidar_density,
        &mut stream(spec.seed, STREAM_MASK_LEFT),
    );
    let mut lidar_right = sample_mask(
        &right.gt,
        spec.lidar_density,
        &mut stream(spec.seed, STREAM_MASK_RIGHT),
    );
    let record_left = corrupt(
        &mut lidar_left,
        &gt_left,
        &regions,
        spec,
        &mut stream(spec.seed, STREAM_OUTLIER_LEFT),
        &mut stream(spec.seed, STREAM_NOISE_LEFT),
    );
    let record_right = corrupt(
        &mut lidar_right,
        &right.gt,
        &right.regions,
        spec,
        &mut stream(spec.seed, STREAM_OUTLIER_RIGHT),
        &mut stream(spec.seed, STREAM_NOISE_RIGHT),
    );

    let focal = 721.5377 * w as f64 / 1242.0;
    let calib = CalibrationSet::synthetic(w, h, focal, 0.54)?;

    Ok(SceneBundle {
        pair: ImagePair::new(left, right.image)?,
        lidar: LidarInput::Projected {
            left: lidar_left,
            right: lidar_right,
        },
        calib,
        gt: Some(gt_left),
        gt_right: Some(right.gt),
        corruption: Some(CorruptionRecord {
            left: record_left,
            right: record_right,
        }),
        render_valid: Some(render_valid),
        synth: Some(spec.clone()),
    })
}

/// Per-pixel region ids of the left view, exposed for planarity checks.
pub fn synthetic_regions(spec: &SynthSpec) -> Result<Grid<usize>> {
    spec.validate()?;
    Ok(make_layout(spec).1)
}
