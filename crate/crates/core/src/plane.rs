//! Single-channel `f64` working grid used by all numeric code.
//!
//! [`Tensor`](crate::Tensor) is the storage and exchange type (`f32`); every
//! transform unpacks channels into planes, works in double precision and
//! packs the result back.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Plane {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::InvalidDims(format!(
                "plane {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Plane {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Plane {
            height,
            width,
            data,
        }
    }

    /// Unit impulse at `(row, col)`.
    pub fn impulse(height: usize, width: usize, row: usize, col: usize) -> Self {
        let mut p = Self::zeros(height, width);
        p.set(row, col, 1.0);
        p
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
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
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, other: &Plane) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Element-wise combination of two planes of equal shape.
    pub fn zip_map(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        debug_assert_eq!(self.dims(), other.dims());
        Plane {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn scale(&self, k: f64) -> Plane {
        self.map(|v| v * k)
    }

    /// Copy into the top-left corner of a larger zero plane.
    pub fn pad_to(&self, height: usize, width: usize) -> Plane {
        self.embed(height, width, 0, 0)
    }

    /// Copy into a zero plane of the given size with the top-left corner at
    /// `(row, col)`. Pixels falling outside the target are dropped.
    pub fn embed(&self, height: usize, width: usize, row: usize, col: usize) -> Plane {
        let mut out = Plane::zeros(height, width);
        for r in 0..self.height {
            let tr = r + row;
            if tr >= height {
                break;
            }
            for c in 0..self.width {
                let tc = c + col;
                if tc >= width {
                    break;
                }
                out.data[tr * width + tc] = self.data[r * self.width + c];
            }
        }
        out
    }

    /// Window of size `height x width` starting at `(row, col)`; pixels
    /// outside `self` read as zero.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Plane {
        Plane::from_fn(height, width, |r, c| {
            let (sr, sc) = (r + row, c + col);
            if sr < self.height && sc < self.width {
                self.get(sr, sc)
            } else {
                0.0
            }
        })
    }

    /// Rescale so the plane sums to one. Returns `None` for a zero-sum plane.
    pub fn normalized_sum(&self) -> Option<Plane> {
        let s = self.sum();
        (s > 0.0 && s.is_finite()).then(|| self.scale(1.0 / s))
    }

    /// Affine map onto `[lo, hi]`. Returns `None` for a constant plane.
    pub fn rescale_range(&self, lo: f64, hi: f64) -> Option<Plane> {
        let (mn, mx) = (self.min(), self.max());
        if !(mx > mn) {
            return None;
        }
        let k = (hi - lo) / (mx - mn);
        let mut out = self.map(|v| lo + (v - mn) * k);
        // pin the endpoints exactly
        for (o, &v) in out.data.iter_mut().zip(&self.data) {
            if v == mn {
                *o = lo;
            } else if v == mx {
                *o = hi;
            }
        }
        Some(out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
