//! SLIC superpixels with connectivity enforcement.
//!
//! Clustering runs in an opponent colour space `(grey, R-G, B-(R+G)/2)`
//! scaled by 100, combined with image position:
//! `dist = |colour - centre colour| + (compactness / spacing) * |pos - centre pos|`.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::image_ops::RgbImage;

/// Mean segment area used to derive a default segment count.
pub const MEAN_SEGMENT_AREA: f64 = 780.0;
pub const DEFAULT_COMPACTNESS: f64 = 10.0;
pub const DEFAULT_ITERATIONS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct SuperpixelSegmentation {
    labels: Grid<u32>,
    segments: Vec<Vec<usize>>,
}

impl SuperpixelSegmentation {
    /// Builds a segmentation from arbitrary labels, relabelling every
    /// 4-connected component to a contiguous id in raster order.
    pub fn from_labels(labels: &Grid<u32>) -> Self {
        let (owner, count) = connected_components(labels);
        Self::from_owner(&owner, count)
    }

    fn from_owner(owner: &Grid<usize>, count: usize) -> Self {
        let mut remap = vec![u32::MAX; count];
        let mut next = 0u32;
        let mut labels = Grid::new(owner.width(), owner.height(), 0u32);
        let mut segments: Vec<Vec<usize>> = Vec::new();
        for (i, &o) in owner.iter().enumerate() {
            if remap[o] == u32::MAX {
                remap[o] = next;
                next += 1;
                segments.push(Vec::new());
            }
            labels.as_mut_slice()[i] = remap[o];
            segments[remap[o] as usize].push(i);
        }
        Self { labels, segments }
    }

    pub fn labels(&self) -> &Grid<u32> {
        &self.labels
    }

    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }

    /// Linear (row-major) pixel indices of each segment, ascending.
    pub fn segments(&self) -> &[Vec<usize>] {
        &self.segments
    }

    pub fn dims(&self) -> (usize, usize) {
        self.labels.dims()
    }
}

pub fn default_segment_count(width: usize, height: usize) -> usize {
    ((width * height) as f64 / MEAN_SEGMENT_AREA)
        .round()
        .max(1.0) as usize
}

fn features(img: &RgbImage) -> Grid<[f64; 3]> {
    img.map(|p| {
        let gray = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
        [
            100.0 * gray,
            100.0 * (p[0] - p[1]),
            100.0 * (p[2] - 0.5 * (p[0] + p[1])),
        ]
    })
}

#[inline]
fn color_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[derive(Clone, Copy, Debug)]
struct Center {
    u: f64,
    v: f64,
    color: [f64; 3],
}

pub fn slic_segment(
    img: &RgbImage,
    target_segments: usize,
    compactness: f64,
    iterations: usize,
) -> Result<SuperpixelSegmentation> {
    let (w, h) = img.dims();
    if w < 16 || h < 16 {
        return Err(Error::InvalidInput(format!(
            "segmentation needs at least 16x16 pixels, got {w}x{h}"
        )));
    }
    if target_segments == 0 || target_segments > w * h {
        return Err(Error::InvalidInput(format!(
            "target segment count {target_segments} outside [1, {}]",
            w * h
        )));
    }
    if !(compactness >= 0.0 && compactness.is_finite()) {
        return Err(Error::InvalidInput(
            "compactness must be non-negative".into(),
        ));
    }
    let feat = features(img);
    let spacing = ((w * h) as f64 / target_segments as f64).sqrt();
    let nx = ((w as f64 / spacing).round() as usize).max(1);
    let ny = ((h as f64 / spacing).round() as usize).max(1);
    let (sx, sy) = (w as f64 / nx as f64, h as f64 / ny as f64);

    let mut centers: Vec<Center> = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let u = ((i as f64 + 0.5) * sx).floor() as usize;
            let v = ((j as f64 + 0.5) * sy).floor() as usize;
            let (u, v) = lowest_gradient_near(&feat, u.min(w - 1), v.min(h - 1));
            centers.push(Center {
                u: u as f64,
                v: v as f64,
                color: feat[(u, v)],
            });
        }
    }

    let mut labels = Grid::from_fn(w, h, |u, v| {
        let i = ((u as f64 / sx) as usize).min(nx - 1);
        let j = ((v as f64 / sy) as usize).min(ny - 1);
        j * nx + i
    });
    let spatial_weight = compactness / spacing;
    let mut dist = Grid::new(w, h, f64::INFINITY);

    for _ in 0..iterations {
        dist.as_mut_slice().fill(f64::INFINITY);
        for (k, c) in centers.iter().enumerate() {
            let u_lo = (c.u - spacing).floor().max(0.0) as usize;
            let u_hi = ((c.u + spacing).ceil() as usize).min(w - 1);
            let v_lo = (c.v - spacing).floor().max(0.0) as usize;
            let v_hi = ((c.v + spacing).ceil() as usize).min(h - 1);
            for v in v_lo..=v_hi {
                for u in u_lo..=u_hi {
                    let ds = ((u as f64 - c.u).powi(2) + (v as f64 - c.v).powi(2)).sqrt();
                    let d = color_dist(&feat[(u, v)], &c.color) + spatial_weight * ds;
                    if d < dist[(u, v)] {
                        dist[(u, v)] = d;
                        labels[(u, v)] = k;
                    }
                }
            }
        }
        let mut sums = vec![(0.0, 0.0, [0.0; 3], 0usize); centers.len()];
        for v in 0..h {
            for u in 0..w {
                let s = &mut sums[labels[(u, v)]];
                s.0 += u as f64;
                s.1 += v as f64;
                for c in 0..3 {
                    s.2[c] += feat[(u, v)][c];
                }
                s.3 += 1;
            }
        }
        for (c, s) in centers.iter_mut().zip(&sums) {
            if s.3 > 0 {
                let n = s.3 as f64;
                *c = Center {
                    u: s.0 / n,
                    v: s.1 / n,
                    color: s.2.map(|x| x / n),
                };
            }
        }
    }

    let labels32 = labels.map(|&l| l as u32);
    let min_size = ((spacing * spacing) / 4.0).floor() as usize;
    Ok(enforce_connectivity(
        &labels32,
        min_size,
        2 * target_segments,
    ))
}

fn lowest_gradient_near(feat: &Grid<[f64; 3]>, u: usize, v: usize) -> (usize, usize) {
    let (w, h) = feat.dims();
    let grad = |x: usize, y: usize| {
        if x == 0 || y == 0 || x + 1 >= w || y + 1 >= h {
            return f64::INFINITY;
        }
        color_dist(&feat[(x + 1, y)], &feat[(x - 1, y)]).powi(2)
            + color_dist(&feat[(x, y + 1)], &feat[(x, y - 1)]).powi(2)
    };
    let mut best = (grad(u, v), u, v);
    for dv in -1isize..=1 {
        for du in -1isize..=1 {
            let (x, y) = (u as isize + du, v as isize + dv);
            if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
                continue;
            }
            let g = grad(x as usize, y as usize);
            if g < best.0 {
                best = (g, x as usize, y as usize);
            }
        }
    }
    (best.1, best.2)
}

/// Labels each 4-connected component of equal labels; returns (owner grid, count).
fn connected_components(labels: &Grid<u32>) -> (Grid<usize>, usize) {
    let (w, h) = labels.dims();
    let mut owner = Grid::new(w, h, usize::MAX);
    let mut count = 0;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if owner.as_slice()[start] != usize::MAX {
            continue;
        }
        let label = labels.as_slice()[start];
        owner.as_mut_slice()[start] = count;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (u, v) = (i % w, i / w);
            for (nu, nv) in neighbours4(u, v, w, h) {
                let j = nv * w + nu;
                if owner.as_slice()[j] == usize::MAX && labels.as_slice()[j] == label {
                    owner.as_mut_slice()[j] = count;
                    queue.push_back(j);
                }
            }
        }
        count += 1;
    }
    (owner, count)
}

#[inline]
fn neighbours4(u: usize, v: usize, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    let cand = [
        (u.wrapping_sub(1), v),
        (u + 1, v),
        (u, v.wrapping_sub(1)),
        (u, v + 1),
    ];
    cand.into_iter().filter(move |&(x, y)| x < w && y < h)
}

/// Splits labels into 4-connected components, then repeatedly merges the
/// smallest component into the neighbour sharing the longest boundary until
/// every component has at least `min_size` pixels and there are at most
/// `max_count` of them.
pub fn enforce_connectivity(
    labels: &Grid<u32>,
    min_size: usize,
    max_count: usize,
) -> SuperpixelSegmentation {
    let (w, h) = labels.dims();
    let (mut owner, count) = connected_components(labels);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); count];
    for (i, &o) in owner.iter().enumerate() {
        groups[o].push(i);
    }
    let mut alive = count;
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> = groups
        .iter()
        .enumerate()
        .map(|(g, px)| Reverse((px.len(), g)))
        .collect();
    let max_count = max_count.max(1);

    while let Some(Reverse((size, g))) = heap.pop() {
        if groups[g].len() != size || size == 0 {
            continue;
        }
        if alive <= 1 || (size >= min_size && alive <= max_count) {
            break;
        }
        let mut shared: Vec<(usize, usize)> = Vec::new();
        for &i in &groups[g] {
            for (nu, nv) in neighbours4(i % w, i / w, w, h) {
                let o = owner[(nu, nv)];
                if o != g {
                    match shared.iter_mut().find(|(id, _)| *id == o) {
                        Some(entry) => entry.1 += 1,
                        None => shared.push((o, 1)),
                    }
                }
            }
        }
        let Some(&(target, _)) = shared
            .iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        else {
            continue;
        };
        let moved = std::mem::take(&mut groups[g]);
        for &i in &moved {
            owner.as_mut_slice()[i] = target;
        }
        groups[target].extend(moved);
        alive -= 1;
        heap.push(Reverse((groups[target].len(), target)));
    }
    SuperpixelSegmentation::from_owner(&owner, count)
}
