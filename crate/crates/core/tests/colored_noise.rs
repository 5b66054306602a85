use num_complex::Complex64;
use opencam::noise::{colored_noise, ColoredNoiseSpec, Rng};
use opencam::Plane;

/// Separable naive DFT.
fn dft2(p: &Plane) -> Vec<Complex64> {
    let (h, w) = p.dims();
    let tw = |n: usize, k: usize, j: usize| Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * (k * j % n) as f64 / n as f64);
    let mut rows = vec![Complex64::new(0.0, 0.0); h * w];
    for r in 0..h {
        for k in 0..w {
            rows[r * w + k] = (0..w).map(|j| tw(w, k, j) * p.get(r, j)).sum();
        }
    }
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for c in 0..w {
        for k in 0..h {
            out[k * w + c] = (0..h).map(|j| tw(h, k, j) * rows[j * w + c]).sum();
        }
    }
    out
}

fn slope(p: &Plane) -> f64 {
    let (h, w) = p.dims();
    let s = dft2(p);
    let rmax = h.min(w) / 4;
    let mut bins = vec![(0.0, 0usize); rmax + 1];
    for r in 0..h {
        for c in 0..w {
            let u = if r > h / 2 { r as f64 - h as f64 } else { r as f64 };
            let v = if c > w / 2 { c as f64 - w as f64 } else { c as f64 };
            let k = (u * u + v * v).sqrt().round() as usize;
            if (1..=rmax).contains(&k) {
                bins[k].0 += s[r * w + c].norm_sqr();
                bins[k].1 += 1;
            }
        }
    }
    let pts: Vec<(f64, f64)> = (1..=rmax).map(|k| ((k as f64).ln(), (bins[k].0 / bins[k].1 as f64).ln())).collect();
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>()
}

fn mean_slope(beta: f64, side: usize) -> f64 {
    (0..20u64)
        .map(|s| {
            let t = colored_noise(&ColoredNoiseSpec::square(side, beta), &mut Rng::new(s)).unwrap();
            slope(&t.channel(0))
        })
        .sum::<f64>()
        / 20.0
}

#[test]
fn white_when_beta_zero() {
    let m = mean_slope(0.0, 64);
    assert!(m.abs() < 0.2, "{m}");
}

#[test]
fn slope_minus_four() {
    let m = mean_slope(4.0, 128);
    assert!((m + 4.0).abs() < 0.5, "{m}");
}

#[test]
fn library_slope_estimator_agrees() {
    let t = colored_noise(&ColoredNoiseSpec::square(64, 2.0), &mut Rng::new(1)).unwrap();
    let p = t.channel(0);
    assert!((opencam::noise::radial_psd_slope(&p) - slope(&p)).abs() < 1e-6);
}
