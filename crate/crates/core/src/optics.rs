//! Forward imaging: `Y = S * (P conv X) + N` with full-size zero-padded
//! convolution, plus scene synthesis for the attack protocols.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::convolve_full;
use crate::keygen::Key;
use crate::noise::{colored_noise_plane, ColoredNoiseSpec, Rng};
use crate::plane::Plane;
use crate::tensor::{load_png_as_scene, read_tensor, sidecar_path, write_tensor, Tensor};

/// Additive Gaussian sensor noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma: f64,
}

impl NoiseModel {
    pub const NONE: NoiseModel = NoiseModel { sigma: 0.0 };

    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidSpec(format!("sigma must be >= 0, got {sigma}")));
        }
        Ok(NoiseModel { sigma })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MeasurementMeta {
    pub key_id: String,
    pub scene_id: String,
    pub sigma: f64,
    pub seed: u64,
}

/// Sensor-plane ciphertext.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub data: Tensor,
    pub meta: MeasurementMeta,
}

impl Measurement {
    pub fn with_ids(mut self, key_id: impl Into<String>, scene_id: impl Into<String>) -> Self {
        self.meta.key_id = key_id.into();
        self.meta.scene_id = scene_id.into();
        self
    }

    /// Writes the tensor to `path` and metadata to `path.json`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_tensor(&self.data, path)?;
        let side = sidecar_path(path);
        let json = serde_json::to_string_pretty(&self.meta)?;
        std::fs::write(&side, json + "\n").map_err(|e| Error::io(&side, e))
    }

    /// Reads a measurement; a missing metadata sidecar yields default metadata.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let data = read_tensor(path)?;
        let side = sidecar_path(path);
        let meta = match std::fs::read(&side) {
            Ok(raw) => serde_json::from_slice(&raw)?,
            Err(_) => MeasurementMeta::default(),
        };
        Ok(Measurement { data, meta })
    }
}

/// Full linear convolution of scene `x` with PSF `p`, channel by channel.
/// Output is `(H1+H2-1) x (W1+W2-1)` with the rank of `x`.
pub fn full_convolve(x: &Tensor, p: &Tensor) -> Result<Tensor> {
    if x.channels() != p.channels() {
        return Err(Error::ChannelMismatch(x.channels(), p.channels()));
    }
    let planes: Vec<Plane> = x
        .planes()
        .iter()
        .zip(p.planes().iter())
        .map(|(xc, pc)| convolve_full(xc, pc))
        .collect();
    Tensor::from_planes(&planes, x.ndim() == 3 || p.ndim() == 3)
}

fn add_noise(planes: &mut [Plane], noise: NoiseModel, rng: &mut Rng) {
    if noise.sigma == 0.0 {
        return;
    }
    // draw in storage order (row-major, channel-last)
    let n = planes[0].len();
    for i in 0..n {
        for p in planes.iter_mut() {
            p.data_mut()[i] += noise.sigma * rng.normal();
        }
    }
}

fn measurement(planes: Vec<Plane>, rank3: bool, noise: NoiseModel) -> Result<Measurement> {
    Ok(Measurement {
        data: Tensor::from_planes(&planes, rank3)?,
        meta: MeasurementMeta {
            sigma: noise.sigma,
            ..Default::default()
        },
    })
}

/// Single-mask capture `Y = P conv X + N`.
pub fn forward_single(x: &Tensor, p: &Tensor, noise: NoiseModel, rng: &mut Rng) -> Result<Measurement> {
    let clean = full_convolve(x, p)?;
    let mut planes = clean.planes();
    add_noise(&mut planes, noise, rng);
    measurement(planes, clean.ndim() == 3, noise)
}

/// Double-mask capture `Y = S . (P conv X) + N`.
pub fn forward_double(x: &Tensor, key: &Key, noise: NoiseModel, rng: &mut Rng) -> Result<Measurement> {
    let conv = full_convolve(x, &key.psf)?;
    if conv.dims() != key.scaling.dims() {
        return Err(Error::DimMismatch(format!(
            "convolution output {:?} vs scaling mask {:?}",
            conv.dims(),
            key.scaling.dims()
        )));
    }
    let mut planes: Vec<Plane> = conv
        .planes()
        .iter()
        .zip(key.scaling.planes().iter())
        .map(|(z, s)| z.zip_map(s, |a, b| a * b))
        .collect();
    add_noise(&mut planes, noise, rng);
    Ok(measurement(planes, conv.ndim() == 3, noise)?.with_ids(key.id(), ""))
}

fn scene_tensor_dims(dims: (usize, usize), channels: usize) -> Vec<usize> {
    if channels == 1 {
        vec![dims.0, dims.1]
    } else {
        vec![dims.0, dims.1, channels]
    }
}

/// Response to a constant scene of the given level.
pub fn uniform_scene_response(
    key: &Key,
    level: f64,
    noise: NoiseModel,
    rng: &mut Rng,
) -> Result<Measurement> {
    let x = Tensor::filled(&scene_tensor_dims(key.scene_dims(), key.spec.channels), level as f32)?;
    Ok(forward_double(&x, key, noise, rng)?.with_ids(key.id(), format!("uniform-{level}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneKind {
    /// PNG file, resampled to the scene dims.
    Natural { path: PathBuf },
    /// Procedural natural-like image from the builtin generator.
    Synthetic { seed: u64 },
    Uniform { level: f64 },
    Impulse { row: usize, col: usize, amplitude: f64 },
    /// Base scene plus one pixel of amplitude `r * max(base)`.
    BrightSource {
        base: Box<SceneKind>,
        row: usize,
        col: usize,
        r: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub kind: SceneKind,
}

impl SceneSpec {
    pub fn new(dims: (usize, usize), channels: usize, kind: SceneKind) -> Self {
        SceneSpec {
            height: dims.0,
            width: dims.1,
            channels,
            kind,
        }
    }

    /// Default bright-source position: the scene centre.
    pub fn center(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }
}

/// Add `r * max(scene)` at `(row, col)` in every channel.
pub fn add_bright_source(scene: &Tensor, row: usize, col: usize, r: f64) -> Result<Tensor> {
    let (h, w) = scene.spatial();
    if row >= h || col >= w {
        return Err(Error::InvalidDims(format!("bright source ({row},{col}) outside {h}x{w}")));
    }
    let amp = r * scene.max() as f64;
    scene.map_planes(|p| {
        let mut q = p.clone();
        q.set(row, col, p.get(row, col) + amp);
        q
    })
}

pub fn synthesize_scene(spec: &SceneSpec, rng: &mut Rng) -> Result<Tensor> {
    let dims = (spec.height, spec.width);
    if dims.0 == 0 || dims.1 == 0 || !(spec.channels == 1 || spec.channels == 3) {
        return Err(Error::InvalidDims(format!("scene {dims:?} x {}", spec.channels)));
    }
    let tdims = scene_tensor_dims(dims, spec.channels);
    match &spec.kind {
        SceneKind::Natural { path } => {
            if !path.exists() {
                return Err(Error::FileMissing(path.clone()));
            }
            let t = if path.extension().is_some_and(|e| e == "ocam") {
                read_tensor(path)?
            } else {
                load_png_as_scene(path, spec.channels)?
            };
            if t.channels() != spec.channels {
                return Err(Error::ChannelMismatch(t.channels(), spec.channels));
            }
            t.resize(dims.0, dims.1)
        }
        SceneKind::Synthetic { seed } => synthetic_scene(dims, spec.channels, *seed),
        SceneKind::Uniform { level } => {
            if *level < 0.0 {
                return Err(Error::InvalidSpec("scene values must be >= 0".into()));
            }
            Tensor::filled(&tdims, *level as f32)
        }
        SceneKind::Impulse { row, col, amplitude } => {
            if *row >= dims.0 || *col >= dims.1 || *amplitude < 0.0 {
                return Err(Error::InvalidSpec(format!("impulse ({row},{col}) amplitude {amplitude}")));
            }
            let p = Plane::impulse(dims.0, dims.1, *row, *col).scale(*amplitude);
            Tensor::from_planes(&vec![p; spec.channels], spec.channels == 3)
        }
        SceneKind::BrightSource { base, row, col, r } => {
            let base = synthesize_scene(
                &SceneSpec {
                    kind: (**base).clone(),
                    ..spec.clone()
                },
                rng,
            )?;
            add_bright_source(&base, *row, *col, *r)
        }
    }
}

/// Procedural stand-in for a natural photograph: a `1/f^2` colored-noise
/// texture under a smooth illumination gradient with a few flat-shaded
/// discs and rectangles, per-channel tinted, in `[0, 1]`.
pub fn synthetic_scene(dims: (usize, usize), channels: usize, seed: u64) -> Result<Tensor> {
    let (h, w) = dims;
    let mut rng = Rng::new(seed);
    let texture = colored_noise_plane(
        &ColoredNoiseSpec {
            height: h,
            width: w,
            beta: 2.0,
        },
        &mut rng,
    )
    .map(|p| p.rescale_range(0.0, 1.0).unwrap_or_else(|| Plane::filled(h, w, 0.5)))
    .unwrap_or_else(|_| Plane::filled(h, w, 0.5));
    let (gy, gx) = (rng.uniform_range(-0.3, 0.3), rng.uniform_range(-0.3, 0.3));
    let base_level = rng.uniform_range(0.25, 0.55);
    let mut lum = Plane::from_fn(h, w, |r, c| {
        let y = r as f64 / h.max(2) as f64 - 0.5;
        let x = c as f64 / w.max(2) as f64 - 0.5;
        base_level + gy * y + gx * x + 0.35 * (texture.get(r, c) - 0.5)
    });
    let shapes = 3 + rng.below(5);
    for _ in 0..shapes {
        let cy = rng.uniform() * h as f64;
        let cx = rng.uniform() * w as f64;
        let ry = (0.05 + 0.2 * rng.uniform()) * h as f64 + 1.0;
        let rx = (0.05 + 0.2 * rng.uniform()) * w as f64 + 1.0;
        let level = rng.uniform_range(0.05, 0.95);
        let disc = rng.uniform() < 0.5;
        for r in 0..h {
            for c in 0..w {
                let dy = (r as f64 - cy) / ry;
                let dx = (c as f64 - cx) / rx;
                let inside = if disc {
                    dy * dy + dx * dx <= 1.0
                } else {
                    dy.abs() <= 1.0 && dx.abs() <= 1.0
                };
                if inside {
                    let v = level + 0.15 * (texture.get(r, c) - 0.5);
                    lum.set(r, c, v);
                }
            }
        }
    }
    let planes: Vec<Plane> = (0..channels)
        .map(|_| {
            let tint = if channels == 1 { 1.0 } else { rng.uniform_range(0.8, 1.2) };
            lum.map(|v| (v * tint).clamp(0.0, 1.0))
        })
        .collect();
    Tensor::from_planes(&planes, channels == 3)
}
