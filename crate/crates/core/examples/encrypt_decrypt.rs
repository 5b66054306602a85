//! Capture a synthetic scene through a double-mask camera, then decrypt it
//! with the right key and with a wrong one.

use std::path::PathBuf;

use opencam::experiment::write_montage;
use opencam::keygen::{draw_keyspec, make_key, KeySpec};
use opencam::metrics::{psnr, ssim};
use opencam::noise::Rng;
use opencam::optics::{forward_double, synthetic_scene, NoiseModel};
use opencam::{keyed_decrypt, WienerConfig};

fn out_dir(name: &str) -> PathBuf {
    std::env::var_os("OPENCAM_EXAMPLE_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(std::env::temp_dir)
        .join("opencam-examples")
        .join(name)
}

pub fn run_example() -> opencam::Result<()> {
    let n = 64;
    let sensor = KeySpec::sensor_for_scene((n, n), n);
    let key = make_key(&draw_keyspec(1, n, sensor, 1)?)?;
    let wrong = make_key(&draw_keyspec(2, n, sensor, 1)?)?;
    let x = synthetic_scene((n, n), 1, 42)?;
    let mut rng = Rng::new(0);

    for sigma in [0.0, 1e-3, 1e-2] {
        let y = forward_double(&x, &key, NoiseModel::new(sigma)?, &mut rng)?;
        let cfg = if sigma == 0.0 { WienerConfig::noiseless() } else { WienerConfig::default() };
        let good = keyed_decrypt(&y, &key, &cfg, (n, n))?;
        let bad = keyed_decrypt(&y, &wrong, &cfg, (n, n))?;
        println!(
            "sigma {sigma:<6} correct key {:6.2} dB (ssim {:.3})   wrong key {:6.2} dB (ssim {:.3})",
            psnr(&good, &x)?,
            ssim(&good, &x)?,
            psnr(&bad, &x)?,
            ssim(&bad, &x)?
        );
        if sigma == 1e-3 {
            let dir = out_dir("encrypt_decrypt");
            std::fs::create_dir_all(&dir).map_err(|e| opencam::Error::Io { path: dir.clone(), source: e })?;
            y.save(dir.join("measurement.ocam"))?;
            write_montage(&dir.join("montage.png"), &[&x, &good, &bad])?;
            println!("montage (truth | correct | wrong) in {}", dir.display());
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> opencam::Result<()> {
    run_example()
}
