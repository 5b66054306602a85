//! Autocorrelation diagnostic: how impulse-like is the autocorrelation of
//! each PSF design?

use opencam::attacks::{autocorrelation, impulse_likeness};
use opencam::keygen::{baseline_psf, draw_keyspec, make_opencam_psf, BaselineKind};
use opencam::noise::Rng;

pub fn run_example() -> opencam::Result<()> {
    let seeds = 8u64;
    let mut sums = [0.0f64; 3];
    for seed in 0..seeds {
        let mut spec = draw_keyspec(seed, 128, (255, 255), 1)?;
        spec.alpha = 0.5;
        spec.beta = Rng::child(seed, 99).uniform_range(2.0, 10.0);
        let psfs = [
            make_opencam_psf(&spec)?,
            baseline_psf(BaselineKind::WhiteBlend, &spec)?,
            baseline_psf(BaselineKind::RandomSpeckle, &spec)?,
        ];
        for (s, p) in sums.iter_mut().zip(&psfs) {
            *s += impulse_likeness(&autocorrelation(p)?);
        }
    }
    let names = ["opencam", "white_blend", "random_speckle"];
    for (name, s) in names.iter().zip(sums) {
        println!("{name:<15} mean impulse likeness {:.4}", s / seeds as f64);
    }
    println!("higher means a broader, less impulse-like autocorrelation");
    Ok(())
}

#[allow(dead_code)]
fn main() -> opencam::Result<()> {
    run_example()
}
