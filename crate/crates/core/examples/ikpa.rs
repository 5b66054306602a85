//! Impulse known-plaintext attack on single- and double-mask cameras.

use opencam::attacks::ikpa;
use opencam::keygen::{draw_keyspec, make_key_with, KeySpec, MaskCount, PsfDesign};
use opencam::metrics::psnr;
use opencam::noise::Rng;
use opencam::optics::{add_bright_source, forward_double, synthetic_scene, NoiseModel};
use opencam::{keyed_decrypt, WienerConfig};

pub fn run_example() -> opencam::Result<()> {
    let n = 64;
    let c = (n / 2, n / 2);
    let cfg = WienerConfig::noiseless();
    let spec = draw_keyspec(3, n, KeySpec::sensor_for_scene((n, n), n), 1)?;
    let x = synthetic_scene((n, n), 1, 5)?;
    for masks in [MaskCount::Single, MaskCount::Double] {
        let key = make_key_with(&spec, PsfDesign::Opencam, masks)?;
        let y = forward_double(&x, &key, NoiseModel::NONE, &mut Rng::new(0))?;
        let keyed = psnr(&keyed_decrypt(&y, &key, &cfg, (n, n))?, &x)?;
        for r in [1e2, 1e3, 1e4] {
            let yb = forward_double(&add_bright_source(&x, c.0, c.1, r)?, &key, NoiseModel::NONE, &mut Rng::new(0))?;
            let mut report = ikpa(&yb, &y, &cfg, (n, n), (n, n), c)?;
            report.score_scene(&x)?;
            report.score_key(&key)?;
            println!(
                "{masks:?}-mask r={r:e}: keyed {keyed:.2} dB, attack {:.2} dB, PSF error {:.3}",
                report.metric("psnr").unwrap_or(f64::NAN),
                report.metric("psf_error").unwrap_or(f64::NAN)
            );
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> opencam::Result<()> {
    run_example()
}
