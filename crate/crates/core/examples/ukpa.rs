//! Uniform known-plaintext attacks: estimate the scaling mask from a
//! uniform-scene response or from the mean of many captures.

use opencam::attacks::{ukpa_average, ukpa_usr};
use opencam::keygen::{draw_keyspec, make_key, KeySpec};
use opencam::metrics::psnr;
use opencam::noise::{derive_seed, Rng};
use opencam::optics::{forward_double, synthetic_scene, uniform_scene_response, Measurement, NoiseModel};
use opencam::{keyed_decrypt, WienerConfig};

pub fn run_example() -> opencam::Result<()> {
    let n = 64;
    let cfg = WienerConfig::default();
    let key = make_key(&draw_keyspec(4, n, KeySpec::sensor_for_scene((n, n), n), 1)?)?;
    let x = synthetic_scene((n, n), 1, 9)?;
    let y = forward_double(&x, &key, NoiseModel::NONE, &mut Rng::new(0))?;
    println!("keyed decryption {:.2} dB", psnr(&keyed_decrypt(&y, &key, &cfg, (n, n))?, &x)?);

    let usr = uniform_scene_response(&key, 1.0, NoiseModel::NONE, &mut Rng::new(0))?;
    let mut r = ukpa_usr(&usr, &y, &key.psf, &cfg, (n, n))?;
    r.score_scene(&x)?;
    r.score_key(&key)?;
    println!("uniform-scene response: scaling error {:.3}, {:.2} dB", r.metrics["scaling_error"], r.metrics["psnr"]);

    for count in [10u64, 100] {
        let set = (0..count)
            .map(|j| forward_double(&synthetic_scene((n, n), 1, derive_seed(4, j))?, &key, NoiseModel::NONE, &mut Rng::new(j)))
            .collect::<opencam::Result<Vec<Measurement>>>()?;
        let mut r = ukpa_average(&set, &y, &key.psf, &cfg, (n, n))?;
        r.score_scene(&x)?;
        r.score_key(&key)?;
        println!("average of {count:>3}: scaling error {:.3}, {:.2} dB", r.metrics["scaling_error"], r.metrics["psnr"]);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> opencam::Result<()> {
    run_example()
}
