use opencam::metrics::{psnr, scale_optimal_error, ssim, support_iou};
use opencam::noise::Rng;
use opencam::Tensor;

fn random(dims: &[usize], rng: &mut Rng) -> Tensor {
    let n: usize = dims.iter().product();
    Tensor::new(dims.to_vec(), (0..n).map(|_| rng.uniform() as f32).collect()).unwrap()
}

/// Direct windowed SSIM with an explicit 2-D Gaussian for one channel.
fn ssim_channel(a: &Tensor, b: &Tensor, ch: usize) -> f64 {
    let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
    let norm: f64 = g.iter().sum::<f64>().powi(2);
    let (h, w) = a.spatial();
    let (c1, c2) = (1e-4, 9e-4);
    let mut total = 0.0;
    for r in 0..=h - 11 {
        for c in 0..=w - 11 {
            let mut s = [0.0f64; 5];
            for i in 0..11 {
                for j in 0..11 {
                    let wt = g[i] * g[j] / norm;
                    let x = a.get(r + i, c + j, ch) as f64;
                    let y = b.get(r + i, c + j, ch) as f64;
                    s[0] += wt * x;
                    s[1] += wt * y;
                    s[2] += wt * x * x;
                    s[3] += wt * y * y;
                    s[4] += wt * x * y;
                }
            }
            let (va, vb, cov) = (s[2] - s[0] * s[0], s[3] - s[1] * s[1], s[4] - s[0] * s[1]);
            total += (2.0 * s[0] * s[1] + c1) * (2.0 * cov + c2) / ((s[0] * s[0] + s[1] * s[1] + c1) * (va + vb + c2));
        }
    }
    total / ((h - 10) * (w - 10)) as f64
}

#[test]
fn three_channel_ssim_averages_channels() {
    let mut rng = Rng::new(2);
    let a = random(&[20, 17, 3], &mut rng);
    let b = random(&[20, 17, 3], &mut rng);
    let want = (0..3).map(|c| ssim_channel(&a, &b, c)).sum::<f64>() / 3.0;
    assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-9);
}

#[test]
fn psnr_known_values() {
    let a = Tensor::filled(&[4, 4], 0.5).unwrap();
    let b = Tensor::filled(&[4, 4], 0.6).unwrap();
    let expected = 10.0 * (1.0 / (0.1f32 as f64 - 0.0).powi(2)).log10();
    assert!((psnr(&a, &b).unwrap() - expected).abs() < 1e-4);
    assert_eq!(psnr(&a, &a).unwrap(), 100.0);
}

#[test]
fn scale_error_and_iou() {
    let mut rng = Rng::new(3);
    let t = random(&[8, 8], &mut rng);
    let scaled = Tensor::new(vec![8, 8], t.data().iter().map(|v| 2.5 * v).collect()).unwrap();
    let (e, c) = scale_optimal_error(&scaled, &t).unwrap();
    assert!(e < 1e-6 && (c - 2.5).abs() < 1e-6);
    let a = Tensor::new(vec![1, 4], vec![1.0, 1.0, 0.0, 0.0]).unwrap();
    let b = Tensor::new(vec![1, 4], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
    assert!((support_iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-12);
}
