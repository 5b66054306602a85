//! Image and key quality metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plane::Plane;
use crate::tensor::Tensor;

pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub name: String,
    pub value: f64,
    pub params: BTreeMap<String, f64>,
}

impl MetricResult {
    pub fn psnr(a: &Tensor, b: &Tensor) -> Result<Self> {
        Ok(MetricResult {
            name: "psnr".into(),
            value: psnr(a, b)?,
            params: BTreeMap::from([("peak".into(), 1.0), ("cap_db".into(), PSNR_CAP_DB)]),
        })
    }

    pub fn ssim(a: &Tensor, b: &Tensor) -> Result<Self> {
        Ok(MetricResult {
            name: "ssim".into(),
            value: ssim(a, b)?,
            params: BTreeMap::from([
                ("window".into(), SSIM_WINDOW as f64),
                ("sigma".into(), SSIM_SIGMA),
                ("k1".into(), SSIM_K1),
                ("k2".into(), SSIM_K2),
                ("range".into(), 1.0),
            ]),
        })
    }
}

fn same_dims(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimMismatch(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_dims(a, b)?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    Ok(s / a.len() as f64)
}

/// PSNR in dB for data with peak 1, capped at 100 dB.
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    psnr_with_peak(a, b, 1.0)
}

pub fn psnr_with_peak(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / m).log10()).min(PSNR_CAP_DB))
}

fn gaussian_taps() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering with a 1-D kernel along both axes.
fn filter_valid(p: &Plane, taps: &[f64]) -> Plane {
    let k = taps.len();
    let (h, w) = p.dims();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let rows = Plane::from_fn(h, ow, |r, c| (0..k).map(|i| taps[i] * p.get(r, c + i)).sum());
    Plane::from_fn(oh, ow, |r, c| (0..k).map(|i| taps[i] * rows.get(r + i, c)).sum())
}

fn ssim_plane(a: &Plane, b: &Plane, taps: &[f64]) -> f64 {
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let mu_a = filter_valid(a, taps);
    let mu_b = filter_valid(b, taps);
    let aa = filter_valid(&a.zip_map(a, |x, y| x * y), taps);
    let bb = filter_valid(&b.zip_map(b, |x, y| x * y), taps);
    let ab = filter_valid(&a.zip_map(b, |x, y| x * y), taps);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a.data()[i], mu_b.data()[i]);
        let va = aa.data()[i] - ma * ma;
        let vb = bb.data()[i] - mb * mb;
        let cov = ab.data()[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / n as f64
}

/// Mean SSIM over all fully-contained 11x11 Gaussian windows, averaged
/// over channels.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_dims(a, b)?;
    let (h, w) = a.spatial();
    if h.min(w) < SSIM_WINDOW {
        return Err(Error::TooSmall {
            side: h.min(w),
            min: SSIM_WINDOW,
        });
    }
    let taps = gaussian_taps();
    let pa = a.planes();
    let pb = b.planes();
    let sum: f64 = pa.iter().zip(&pb).map(|(x, y)| ssim_plane(x, y, &taps)).sum();
    Ok(sum / pa.len() as f64)
}

/// `min_c |est - c truth| / |truth|`, returned with the optimal `c`.
pub fn scale_optimal_error(est: &Tensor, truth: &Tensor) -> Result<(f64, f64)> {
    same_dims(est, truth)?;
    let (mut et, mut tt, mut ee) = (0.0, 0.0, 0.0);
    for (&e, &t) in est.data().iter().zip(truth.data()) {
        let (e, t) = (e as f64, t as f64);
        et += e * t;
        tt += t * t;
        ee += e * e;
    }
    if tt == 0.0 {
        return Err(Error::ZeroTruth);
    }
    let c = et / tt;
    // |e - c t|^2 = ee - 2 c et + c^2 tt = ee - et^2 / tt
    let resid = (ee - et * et / tt).max(0.0);
    Ok((resid.sqrt() / tt.sqrt(), c))
}

/// Intersection over union of two supports (nonzero entries); two empty
/// supports score 1.
pub fn support_iou(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_dims(a, b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (x, y) = (x != 0.0, y != 0.0);
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(h: usize, w: usize, v: Vec<f32>) -> Tensor {
        Tensor::new(vec![h, w], v).unwrap()
    }

    #[test]
    fn psnr_cases() {
        let a = t(2, 2, vec![0.1, 0.2, 0.3, 0.4]);
        assert_eq!(psnr(&a, &a).unwrap(), 100.0);
        let b = t(2, 2, vec![0.2, 0.3, 0.4, 0.5]);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-4);
        assert!(matches!(psnr(&a, &t(1, 4, vec![0.0; 4])), Err(Error::DimMismatch(_))));
    }

    #[test]
    fn ssim_identity_and_small() {
        let a = Tensor::new(vec![16, 16], (0..256).map(|i| (i % 7) as f32 / 7.0).collect()).unwrap();
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        let s = Tensor::zeros(&[10, 20]).unwrap();
        assert!(matches!(ssim(&s, &s), Err(Error::TooSmall { side: 10, min: 11 })));
    }

    #[test]
    fn gaussian_taps_sum_to_one() {
        let g = gaussian_taps();
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(g[0], g[10]);
    }

    #[test]
    fn scale_error_cases() {
        let truth = t(1, 3, vec![1.0, 2.0, 3.0]);
        let est = t(1, 3, vec![3.0, 6.0, 9.0]);
        let (e, c) = scale_optimal_error(&est, &truth).unwrap();
        assert!(e < 1e-7 && (c - 3.0).abs() < 1e-9);
        let truth = t(1, 2, vec![1.0, 0.0]);
        let est = t(1, 2, vec![0.0, 2.0]);
        let (e, c) = scale_optimal_error(&est, &truth).unwrap();
        assert_eq!((e, c), (2.0, 0.0));
        assert!(matches!(
            scale_optimal_error(&est, &t(1, 2, vec![0.0, 0.0])),
            Err(Error::ZeroTruth)
        ));
    }

    #[test]
    fn iou_cases() {
        let a = t(1, 4, vec![1.0, 1.0, 0.0, 0.0]);
        let b = t(1, 4, vec![0.0, 1.0, 1.0, 0.0]);
        let c = t(1, 4, vec![0.0, 0.0, 1.0, 1.0]);
        let z = t(1, 4, vec![0.0; 4]);
        assert_eq!(support_iou(&a, &a).unwrap(), 1.0);
        assert_eq!(support_iou(&a, &c).unwrap(), 0.0);
        assert!((support_iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(support_iou(&z, &z).unwrap(), 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn psnr_symmetric(a in prop::collection::vec(0f32..1.0, 64), b in prop::collection::vec(0f32..1.0, 64)) {
            let (a, b) = (t(8, 8, a), t(8, 8, b));
            prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        }

        #[test]
        fn ssim_bounded_symmetric(a in prop::collection::vec(0f32..1.0, 144), b in prop::collection::vec(0f32..1.0, 144)) {
            let (a, b) = (t(12, 12, a), t(12, 12, b));
            let s = ssim(&a, &b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
            prop_assert!((s - ssim(&b, &a).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn scale_error_matches_grid_search(e in prop::collection::vec(-1f32..1.0, 16), tr in prop::collection::vec(0.1f32..1.0, 16)) {
            let (e, tr) = (t(4, 4, e), t(4, 4, tr));
            let (err, c) = scale_optimal_error(&e, &tr).unwrap();
            let nt = tr.channel(0).norm();
            let f = |c: f64| e.channel(0).zip_map(&tr.channel(0), |x, y| x - c * y).norm() / nt;
            // golden-section search on the convex 1-D objective
            let (mut lo, mut hi) = (-20.0f64, 20.0f64);
            let g = (5f64.sqrt() - 1.0) / 2.0;
            for _ in 0..200 {
                let m1 = hi - g * (hi - lo);
                let m2 = lo + g * (hi - lo);
                if f(m1) < f(m2) { hi = m2 } else { lo = m1 }
            }
            prop_assert!((f((lo + hi) / 2.0) - err).abs() < 1e-6);
            prop_assert!(((lo + hi) / 2.0 - c).abs() < 1e-4);
        }
    }
}
