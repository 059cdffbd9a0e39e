//! Row-major 2-D containers shared by every image-space module.

use std::ops::{Index, IndexMut};

/// Dense row-major grid, indexed by `(u, v)` = (column, row).
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn new(width: usize, height: usize, fill: T) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }
}

impl<T> Grid<T> {
    /// Wraps an existing buffer. Returns `None` when the length does not match.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Option<Self> {
        (data.len() == width * height).then_some(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn same_dims<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    #[inline]
    pub fn idx(&self, u: usize, v: usize) -> usize {
        v * self.width + u
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> &T {
        &self.data[v * self.width + u]
    }

    #[inline]
    pub fn get_mut(&mut self, u: usize, v: usize) -> &mut T {
        &mut self.data[v * self.width + u]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, v: usize) -> &[T] {
        &self.data[v * self.width..(v + 1) * self.width]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn zip_map<U, R>(&self, other: &Grid<U>, mut f: impl FnMut(&T, &U) -> R) -> Grid<R> {
        assert!(self.same_dims(other), "grid dimension mismatch");
        Grid {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| f(a, b))
                .collect(),
        }
    }
}

impl<T> Index<(usize, usize)> for Grid<T> {
    type Output = T;

    #[inline]
    fn index(&self, (u, v): (usize, usize)) -> &T {
        &self.data[v * self.width + u]
    }
}

impl<T> IndexMut<(usize, usize)> for Grid<T> {
    #[inline]
    fn index_mut(&mut self, (u, v): (usize, usize)) -> &mut T {
        &mut self.data[v * self.width + u]
    }
}

impl Grid<bool> {
    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

impl Grid<f64> {
    /// 2x2 box decimation; odd trailing rows/columns are dropped.
    pub fn downsample2(&self) -> Grid<f64> {
        let (w, h) = (self.width / 2, self.height / 2);
        Grid::from_fn(w, h, |u, v| {
            let (x, y) = (2 * u, 2 * v);
            0.25 * (self[(x, y)] + self[(x + 1, y)] + self[(x, y + 1)] + self[(x + 1, y + 1)])
        })
    }

    /// Bilinear upsampling to an arbitrary target size using pixel-center alignment.
    pub fn upsample_to(&self, width: usize, height: usize) -> Grid<f64> {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let max_u = self.width as f64 - 1.0;
        let max_v = self.height as f64 - 1.0;
        Grid::from_fn(width, height, |u, v| {
            let x = ((u as f64 + 0.5) * sx - 0.5).clamp(0.0, max_u);
            let y = ((v as f64 + 0.5) * sy - 0.5).clamp(0.0, max_v);
            let (x0, y0) = (x.floor() as usize, y.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
            let (fx, fy) = (x - x0 as f64, y - y0 as f64);
            let top = self[(x0, y0)] * (1.0 - fx) + self[(x1, y0)] * fx;
            let bottom = self[(x0, y1)] * (1.0 - fx) + self[(x1, y1)] * fx;
            top * (1.0 - fy) + bottom * fy
        })
    }
}
