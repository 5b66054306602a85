//! 2-D FFT helpers on row-major complex buffers, plus the full-size linear
//! convolution and its adjoint built on them.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::plane::Plane;

pub struct Fft2 {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

fn plan_cache() -> &'static Mutex<HashMap<(usize, usize), Arc<Fft2>>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<Fft2>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

impl Fft2 {
    /// Shared plan for a `height x width` transform.
    pub fn plan(height: usize, width: usize) -> Arc<Fft2> {
        let mut cache = plan_cache().lock().expect("fft plan cache poisoned");
        cache
            .entry((height, width))
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                Arc::new(Fft2 {
                    height,
                    width,
                    row_fwd: planner.plan_fft_forward(width),
                    row_inv: planner.plan_fft_inverse(width),
                    col_fwd: planner.plan_fft_forward(height),
                    col_inv: planner.plan_fft_inverse(height),
                })
            })
            .clone()
    }

    fn run(&self, buf: &mut [Complex64], rows: &dyn Fft<f64>, cols: &dyn Fft<f64>) {
        let (h, w) = (self.height, self.width);
        assert_eq!(buf.len(), h * w);
        for line in buf.chunks_exact_mut(w) {
            rows.process(line);
        }
        let mut col = vec![Complex64::new(0.0, 0.0); h];
        for c in 0..w {
            for r in 0..h {
                col[r] = buf[r * w + c];
            }
            cols.process(&mut col);
            for r in 0..h {
                buf[r * w + c] = col[r];
            }
        }
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.run(buf, self.row_fwd.as_ref(), self.col_fwd.as_ref());
    }

    /// Inverse transform including the `1/(h*w)` normalization.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.run(buf, self.row_inv.as_ref(), self.col_inv.as_ref());
        let k = 1.0 / (self.height * self.width) as f64;
        for v in buf.iter_mut() {
            *v *= k;
        }
    }

    /// Spectrum of a real plane zero-padded to this transform's size.
    pub fn spectrum(&self, plane: &Plane) -> Vec<Complex64> {
        let padded = if plane.dims() == (self.height, self.width) {
            plane.clone()
        } else {
            plane.pad_to(self.height, self.width)
        };
        let mut buf: Vec<Complex64> = padded
            .data()
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        self.forward(&mut buf);
        buf
    }

    /// Real part of the inverse transform.
    pub fn real_inverse(&self, mut buf: Vec<Complex64>) -> Plane {
        self.inverse(&mut buf);
        let data = buf.into_iter().map(|c| c.re).collect();
        Plane::from_vec(self.height, self.width, data).expect("buffer sized by plan")
    }
}

/// Full-size linear convolution: output is `(h1+h2-1) x (w1+w2-1)`.
pub fn convolve_full(x: &Plane, p: &Plane) -> Plane {
    let (h, w) = (x.height() + p.height() - 1, x.width() + p.width() - 1);
    let plan = Fft2::plan(h, w);
    let xs = plan.spectrum(x);
    let ps = plan.spectrum(p);
    let prod = xs.iter().zip(&ps).map(|(a, b)| a * b).collect();
    plan.real_inverse(prod)
}

/// Adjoint of `p -> convolve_full(x, p)` evaluated on `residual`: the valid
/// cross-correlation of `residual` with `x`, returned at the PSF size.
pub fn correlate_adjoint(x: &Plane, residual: &Plane, psf_dims: (usize, usize)) -> Plane {
    let (h, w) = residual.dims();
    let plan = Fft2::plan(h, w);
    let xs = plan.spectrum(x);
    let rs = plan.spectrum(residual);
    let prod = xs.iter().zip(&rs).map(|(a, b)| a.conj() * b).collect();
    plan.real_inverse(prod).crop(0, 0, psf_dims.0, psf_dims.1)
}

/// Circular autocorrelation `IDFT(|DFT(t)|^2)` with zero lag at index (0,0).
pub fn circular_autocorrelation(t: &Plane) -> Plane {
    let plan = Fft2::plan(t.height(), t.width());
    let s = plan.spectrum(t);
    let power = s
        .into_iter()
        .map(|c| Complex64::new(c.norm_sqr(), 0.0))
        .collect();
    plan.real_inverse(power)
}

/// Move the zero-frequency / zero-lag sample from (0,0) to (h/2, w/2).
pub fn fftshift(p: &Plane) -> Plane {
    let (h, w) = p.dims();
    Plane::from_fn(h, w, |r, c| p.get((r + h - h / 2) % h, (c + w - w / 2) % w))
}

/// Signed integer frequency index for DFT bin `k` of an `n`-point transform.
#[inline]
pub fn signed_frequency(k: usize, n: usize) -> f64 {
    if k > n / 2 {
        k as f64 - n as f64
    } else {
        k as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct(x: &Plane, p: &Plane) -> Plane {
        let (h, w) = (x.height() + p.height() - 1, x.width() + p.width() - 1);
        let mut out = Plane::zeros(h, w);
        for i in 0..x.height() {
            for j in 0..x.width() {
                for k in 0..p.height() {
                    for l in 0..p.width() {
                        let v = out.get(i + k, j + l) + x.get(i, j) * p.get(k, l);
                        out.set(i + k, j + l, v);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn hand_convolution_1d() {
        let x = Plane::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let p = Plane::from_vec(1, 2, vec![1.0, 1.0]).unwrap();
        let y = convolve_full(&x, &p);
        for (a, b) in y.data().iter().zip([1.0, 3.0, 2.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn odd_sizes_match_direct_sum() {
        let x = Plane::from_fn(5, 7, |r, c| ((r * 7 + c) as f64).sin());
        let p = Plane::from_fn(3, 4, |r, c| ((r + 2 * c) as f64).cos());
        let a = convolve_full(&x, &p);
        let b = direct(&x, &p);
        let err = a.zip_map(&b, |u, v| u - v).norm() / b.norm();
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn adjoint_identity() {
        let x = Plane::from_fn(6, 5, |r, c| ((r * 3 + c) as f64 * 0.7).sin());
        let p = Plane::from_fn(4, 3, |r, c| ((r + c) as f64 * 0.3).cos());
        let r = Plane::from_fn(9, 7, |r, c| ((r * c) as f64 * 0.11).sin());
        let lhs = convolve_full(&x, &p).dot(&r);
        let rhs = p.dot(&correlate_adjoint(&x, &r, (4, 3)));
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn fftshift_centers_origin() {
        let p = Plane::impulse(4, 5, 0, 0);
        let s = fftshift(&p);
        assert_eq!(s.get(2, 2), 1.0);
    }
}
