//! Thresholding a point-source capture recovers a binary PSF's support
//! despite the scaling mask; the blended OpEnCam PSF resists better.

use opencam::attacks::{default_tau_grid, embed_support, threshold_support_attack};
use opencam::keygen::{draw_keyspec, make_key_with, BaselineKind, KeySpec, MaskCount, PsfDesign};
use opencam::noise::Rng;
use opencam::optics::{forward_double, synthesize_scene, NoiseModel, SceneKind, SceneSpec};

pub fn run_example() -> opencam::Result<()> {
    let n = 64;
    let sensor = KeySpec::sensor_for_scene((n, n), n);
    let c = (n / 2, n / 2);
    let impulse = SceneSpec::new((n, n), 1, SceneKind::Impulse { row: c.0, col: c.1, amplitude: 1.0 });
    let x = synthesize_scene(&impulse, &mut Rng::new(0))?;
    for design in [PsfDesign::Baseline(BaselineKind::PhlatcamContour), PsfDesign::Opencam] {
        let mut ious = Vec::new();
        for seed in 0..5 {
            let spec = draw_keyspec(seed, n, sensor, 1)?;
            let key = make_key_with(&spec, design, MaskCount::Double)?;
            let y = forward_double(&x, &key, NoiseModel::NONE, &mut Rng::new(0))?;
            let reference = embed_support(&design.structural_support(&spec)?, sensor, c)?;
            let r = threshold_support_attack(&y.data, &default_tau_grid(&y.data), &reference)?;
            ious.push(r.best_iou);
        }
        let shown: Vec<String> = ious.iter().map(|v| format!("{v:.3}")).collect();
        println!("{:<17} best IoU per key: {}", design.name(), shown.join(" "));
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> opencam::Result<()> {
    run_example()
}
