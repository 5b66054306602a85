use opencam::keygen::{draw_keyspec, make_key};
use opencam::noise::Rng;
use opencam::optics::{forward_double, forward_single, full_convolve, NoiseModel};
use opencam::Tensor;
use proptest::prelude::*;

fn direct(x: &Tensor, p: &Tensor, ch: usize) -> Vec<f64> {
    let (xh, xw) = x.spatial();
    let (ph, pw) = p.spatial();
    let w = xw + pw - 1;
    let mut out = vec![0.0; (xh + ph - 1) * w];
    for i in 0..xh {
        for j in 0..xw {
            for k in 0..ph {
                for l in 0..pw {
                    out[(i + k) * w + j + l] += x.get(i, j, ch) as f64 * p.get(k, l, ch) as f64;
                }
            }
        }
    }
    out
}

fn random(dims: &[usize], rng: &mut Rng) -> Tensor {
    let n: usize = dims.iter().product();
    Tensor::new(dims.to_vec(), (0..n).map(|_| rng.uniform() as f32).collect()).unwrap()
}

fn max_rel(got: &Tensor, want: &[f64], ch: usize) -> f64 {
    let (h, w) = got.spatial();
    let mut num = 0.0;
    let mut den = 0.0;
    for r in 0..h {
        for c in 0..w {
            let d = got.get(r, c, ch) as f64 - want[r * w + c];
            num += d * d;
            den += want[r * w + c] * want[r * w + c];
        }
    }
    (num / den).sqrt()
}

#[test]
fn rectangular_three_channel_convolution() {
    let mut rng = Rng::new(5);
    let x = random(&[9, 13, 3], &mut rng);
    let p = random(&[4, 6, 3], &mut rng);
    let y = full_convolve(&x, &p).unwrap();
    assert_eq!(y.dims(), &[12, 18, 3]);
    for ch in 0..3 {
        assert!(max_rel(&y, &direct(&x, &p, ch), ch) < 1e-6);
    }
}

#[test]
fn double_mask_is_elementwise_scaled_convolution() {
    let key = make_key(&draw_keyspec(4, 8, (23, 23), 3).unwrap()).unwrap();
    let mut rng = Rng::new(1);
    let x = random(&[16, 16, 3], &mut rng);
    let y = forward_double(&x, &key, NoiseModel::NONE, &mut rng).unwrap();
    for ch in 0..3 {
        let conv = direct(&x, &key.psf, ch);
        let want: Vec<f64> = (0..23 * 23)
            .map(|i| conv[i] * key.scaling.get(i / 23, i % 23, ch) as f64)
            .collect();
        assert!(max_rel(&y.data, &want, ch) < 1e-6);
    }
}

#[test]
fn noise_has_requested_sigma() {
    let key = make_key(&draw_keyspec(2, 32, (95, 95), 1).unwrap()).unwrap();
    let x = random(&[64, 64], &mut Rng::new(3));
    let clean = forward_double(&x, &key, NoiseModel::NONE, &mut Rng::new(0)).unwrap();
    let noisy = forward_double(&x, &key, NoiseModel::new(0.05).unwrap(), &mut Rng::new(0)).unwrap();
    let d: Vec<f64> = noisy
        .data
        .data()
        .iter()
        .zip(clean.data.data())
        .map(|(&a, &b)| a as f64 - b as f64)
        .collect();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len() as f64).sqrt();
    assert!(mean.abs() < 2e-3, "{mean}");
    assert!((sd - 0.05).abs() < 2e-3, "{sd}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn single_mask_matches_direct_sum(
        xh in 1usize..10, xw in 1usize..10, ph in 1usize..6, pw in 1usize..6, seed in 0u64..1000
    ) {
        let mut rng = Rng::new(seed);
        let x = random(&[xh, xw], &mut rng);
        let p = random(&[ph, pw], &mut rng);
        let y = forward_single(&x, &p, NoiseModel::NONE, &mut rng).unwrap();
        prop_assert_eq!(y.data.dims(), &[xh + ph - 1, xw + pw - 1]);
        prop_assert!(max_rel(&y.data, &direct(&x, &p, 0), 0) < 1e-6);
    }

    #[test]
    fn convolution_is_linear(seed in 0u64..1000, a in 0.1f32..3.0) {
        let mut rng = Rng::new(seed);
        let x1 = random(&[6, 7], &mut rng);
        let x2 = random(&[6, 7], &mut rng);
        let p = random(&[3, 3], &mut rng);
        let sum = Tensor::new(vec![6, 7], x1.data().iter().zip(x2.data()).map(|(u, v)| a * u + v).collect()).unwrap();
        let y = full_convolve(&sum, &p).unwrap();
        let y1 = full_convolve(&x1, &p).unwrap();
        let y2 = full_convolve(&x2, &p).unwrap();
        for i in 0..y.len() {
            let want = a as f64 * y1.data()[i] as f64 + y2.data()[i] as f64;
            prop_assert!((y.data()[i] as f64 - want).abs() < 1e-5 * (1.0 + want.abs()));
        }
    }
}
