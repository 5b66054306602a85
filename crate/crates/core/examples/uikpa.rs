//! Joint estimation of the scaling mask and PSF from a uniform-scene
//! response and a bright-source capture, for increasing source strength.

use opencam::attacks::{trace_non_increasing, uikpa, AlsConfig};
use opencam::keygen::{draw_keyspec, make_key, KeySpec};
use opencam::metrics::psnr;
use opencam::noise::Rng;
use opencam::optics::{add_bright_source, forward_double, synthetic_scene, uniform_scene_response, NoiseModel};
use opencam::{keyed_decrypt, WienerConfig};

pub fn run_example() -> opencam::Result<()> {
    let n = 32;
    let c = (n / 2, n / 2);
    let cfg = WienerConfig::default();
    let als = AlsConfig::default();
    let key = make_key(&draw_keyspec(0, n, KeySpec::sensor_for_scene((n, n), n), 1)?)?;
    let x = synthetic_scene((n, n), 1, 200)?;
    let y = forward_double(&x, &key, NoiseModel::NONE, &mut Rng::new(0))?;
    let usr = uniform_scene_response(&key, 1.0, NoiseModel::NONE, &mut Rng::new(0))?;
    println!("keyed decryption {:.2} dB", psnr(&keyed_decrypt(&y, &key, &cfg, (n, n))?, &x)?);
    for r in [1e2, 1e3, 1e4, 1e5] {
        let yb = forward_double(&add_bright_source(&x, c.0, c.1, r)?, &key, NoiseModel::NONE, &mut Rng::new(0))?;
        let mut report = uikpa(&usr, &yb, &y, &als, &cfg, (n, n), (n, n), c)?;
        report.score_scene(&x)?;
        report.score_key(&key)?;
        let first = report.trace.first().map(|t| t.objective).unwrap_or(f64::NAN);
        let last = report.trace.last().map(|t| t.objective).unwrap_or(f64::NAN);
        println!(
            "r={r:e}: {:.2} dB, scaling error {:.3}, PSF error {:.3}, objective {first:.3e} -> {last:.3e} (monotone {})",
            report.metrics["psnr"],
            report.metrics["scaling_error"],
            report.metrics["psf_error"],
            trace_non_increasing(&report.trace)
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> opencam::Result<()> {
    run_example()
}
