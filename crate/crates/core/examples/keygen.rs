//! Generate an OpEnCam key and the baseline PSFs, report their spectrum
//! floors and write the keys with PNG previews.

use std::path::PathBuf;

use opencam::keygen::{draw_keyspec, make_key_with, BaselineKind, KeySpec, MaskCount, PsfDesign};
use opencam::tensor::save_png_visualization;

fn out_dir(name: &str) -> PathBuf {
    std::env::var_os("OPENCAM_EXAMPLE_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(std::env::temp_dir)
        .join("opencam-examples")
        .join(name)
}

pub fn run_example() -> opencam::Result<()> {
    let dir = out_dir("keygen");
    let sensor = KeySpec::sensor_for_scene((64, 64), 64);
    let spec = draw_keyspec(7, 64, sensor, 1)?;
    println!("alpha {:.3} beta {:.3} feature size {}", spec.alpha, spec.beta, spec.feature_size);
    let designs = std::iter::once(PsfDesign::Opencam).chain(BaselineKind::ALL.into_iter().map(PsfDesign::Baseline));
    for design in designs {
        let key = make_key_with(&spec, design, MaskCount::Double)?;
        let sub = dir.join(design.name());
        key.save(&sub)?;
        save_png_visualization(&key.psf, sub.join("psf.png"), true)?;
        save_png_visualization(&key.scaling, sub.join("scaling.png"), false)?;
        println!(
            "{:<18} spectrum floor {:.2e} degenerate {}",
            design.name(),
            key.spectrum_floor(),
            key.is_degenerate()
        );
    }
    println!("keys written to {}", dir.display());
    Ok(())
}

#[allow(dead_code)]
fn main() -> opencam::Result<()> {
    run_example()
}
