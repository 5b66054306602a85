//! Encryption keys: the multiplexing PSF `P` and the scaling mask `S`.
//!
//! `P = alpha * P_colr + (1 - alpha) * P_cont`, where `P_cont` is a binary
//! band around the zero level set of Perlin noise and `P_colr` is min-max
//! normalized colored noise. `S` is colored noise with the same `beta`,
//! mapped affinely onto `[s_min, 1]`. Every random draw comes from a child
//! stream of the key seed (see the `STREAM_*` constants), so any component
//! can be regenerated on its own.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::noise::{colored_noise_plane, perlin_field, ColoredNoiseSpec, PerlinSpec, Rng};
use crate::plane::Plane;
use crate::tensor::{read_tensor, write_tensor, Tensor};

pub const GENERATOR_VERSION: &str = "opencam-keygen/1";

pub const STREAM_SPEC: u64 = 0;
pub const STREAM_PERMUTATION: u64 = 1;
/// `STREAM_PSF_NOISE + 16 * attempt + channel`
pub const STREAM_PSF_NOISE: u64 = 0x100;
/// `STREAM_SCALING + 16 * attempt + channel`
pub const STREAM_SCALING: u64 = 0x200;
pub const STREAM_BASELINE: u64 = 0x300;

pub const DEFAULT_S_MIN: f64 = 0.2;
pub const DEFAULT_CONTOUR_FILL: f64 = 0.10;
/// Keys whose PSF spectrum floor (min |DFT| / max |DFT|) is below this are
/// rejected as degenerate.
pub const SPECTRUM_FLOOR_LIMIT: f64 = 1e-6;
const MAX_NOISE_ATTEMPTS: u64 = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeySpec {
    pub seed: u64,
    pub psf_side: usize,
    /// Sensor `(height, width)`.
    pub sensor_dims: (usize, usize),
    pub channels: usize,
    pub alpha: f64,
    pub beta: f64,
    pub feature_size: usize,
    pub s_min: f64,
    pub contour_fill: f64,
}

/// Largest divisor of `side` not exceeding `max(1, side / 8)`.
pub fn default_feature_size(side: usize) -> usize {
    let target = (side / 8).max(1);
    (1..=target).rev().find(|d| side % d == 0).unwrap_or(1)
}

/// Draw `alpha ~ U(0,1)` and `beta ~ U(1,10)` from the seed; other fields
/// take their defaults.
pub fn draw_keyspec(
    seed: u64,
    psf_side: usize,
    sensor_dims: (usize, usize),
    channels: usize,
) -> Result<KeySpec> {
    if psf_side == 0 || sensor_dims.0 == 0 || sensor_dims.1 == 0 {
        return Err(Error::InvalidDims(format!(
            "psf side {psf_side} and sensor {sensor_dims:?} must be positive"
        )));
    }
    if channels != 1 && channels != 3 {
        return Err(Error::InvalidDims(format!("channels must be 1 or 3, got {channels}")));
    }
    let mut rng = Rng::child(seed, STREAM_SPEC);
    let alpha = rng.uniform();
    let beta = rng.uniform_range(1.0, 10.0);
    Ok(KeySpec {
        seed,
        psf_side,
        sensor_dims,
        channels,
        alpha,
        beta,
        feature_size: default_feature_size(psf_side),
        s_min: DEFAULT_S_MIN,
        contour_fill: DEFAULT_CONTOUR_FILL,
    })
}

impl KeySpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidSpec(format!("alpha {} outside [0,1]", self.alpha)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidSpec(format!("beta {} must be >= 0", self.beta)));
        }
        if !(self.s_min > 0.0 && self.s_min < 1.0) {
            return Err(Error::InvalidSpec(format!("s_min {} outside (0,1)", self.s_min)));
        }
        if !(self.contour_fill > 0.0 && self.contour_fill < 1.0) {
            return Err(Error::InvalidSpec(format!(
                "contour_fill {} outside (0,1)",
                self.contour_fill
            )));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::InvalidSpec(format!("channels {}", self.channels)));
        }
        if self.psf_side == 0 || self.sensor_dims.0 == 0 || self.sensor_dims.1 == 0 {
            return Err(Error::InvalidDims("zero-sized key".into()));
        }
        Ok(())
    }

    /// Scene size whose full convolution with the PSF fills the sensor.
    pub fn scene_dims(&self) -> Option<(usize, usize)> {
        let (h, w) = self.sensor_dims;
        (h >= self.psf_side && w >= self.psf_side)
            .then(|| (h + 1 - self.psf_side, w + 1 - self.psf_side))
    }

    /// Sensor size for a scene of the given size.
    pub fn sensor_for_scene(scene: (usize, usize), psf_side: usize) -> (usize, usize) {
        (scene.0 + psf_side - 1, scene.1 + psf_side - 1)
    }

    pub fn key_id(&self) -> String {
        format!("k{:016x}", self.seed)
    }
}

/// Binary contour mask: pixels where `|perlin| <= tau`, with `tau` found by
/// bisection so that the filled fraction matches `contour_fill`.
pub fn perlin_contour_psf(spec: &KeySpec) -> Result<Tensor> {
    Tensor::from_planes(&[contour_plane(spec)?], false)
}

fn contour_plane(spec: &KeySpec) -> Result<Plane> {
    let mut rng = Rng::child(spec.seed, STREAM_PERMUTATION);
    let perlin = PerlinSpec::random(spec.psf_side, spec.feature_size, &mut rng);
    let field = perlin_field(&perlin)?.channel(0);
    let mags: Vec<f64> = field.data().iter().map(|v| v.abs()).collect();
    let n = mags.len() as f64;
    let fill = |tau: f64| mags.iter().filter(|&&m| m <= tau).count() as f64 / n;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if fill(mid) < spec.contour_fill {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(field.map(|v| if v.abs() <= hi { 1.0 } else { 0.0 }))
}

fn min_max_normalized(p: &Plane) -> Option<Plane> {
    p.rescale_range(0.0, 1.0)
}

/// Min-max normalized colored noise for one PSF channel. A constant field
/// is regenerated from the next attempt's stream.
pub fn psf_noise_component(spec: &KeySpec, channel: usize) -> Result<Plane> {
    noise_with_retries(spec, STREAM_PSF_NOISE, channel, (spec.psf_side, spec.psf_side))
}

fn noise_with_retries(
    spec: &KeySpec,
    base: u64,
    channel: usize,
    dims: (usize, usize),
) -> Result<Plane> {
    let ns = ColoredNoiseSpec {
        height: dims.0,
        width: dims.1,
        beta: spec.beta,
    };
    for attempt in 0..MAX_NOISE_ATTEMPTS {
        let mut rng = Rng::child(spec.seed, base + 16 * attempt + channel as u64);
        match colored_noise_plane(&ns, &mut rng) {
            Ok(field) => {
                if let Some(norm) = min_max_normalized(&field) {
                    return Ok(norm);
                }
            }
            Err(Error::DegenerateNoise) => {}
            Err(e) => return Err(e),
        }
    }
    Err(Error::DegenerateNoise)
}

/// The multiplexing PSF, one sum-normalized plane per channel.
pub fn make_opencam_psf(spec: &KeySpec) -> Result<Tensor> {
    spec.validate()?;
    let contour = contour_plane(spec)?;
    let planes = (0..spec.channels)
        .map(|c| {
            let colr = psf_noise_component(spec, c)?;
            let blend = colr.zip_map(&contour, |n, k| spec.alpha * n + (1.0 - spec.alpha) * k);
            blend.normalized_sum().ok_or(Error::DegenerateNoise)
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::from_planes(&planes, spec.channels == 3)
}

/// The scaling mask: colored noise mapped onto `[s_min, 1]` per channel.
pub fn make_scaling_mask(spec: &KeySpec) -> Result<Tensor> {
    spec.validate()?;
    let planes = (0..spec.channels)
        .map(|c| {
            let unit = noise_with_retries(spec, STREAM_SCALING, c, spec.sensor_dims)?;
            unit.rescale_range(spec.s_min, 1.0).ok_or(Error::DegenerateNoise)
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::from_planes(&planes, spec.channels == 3)
}

/// Baseline multiplexing-mask generators used for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Perlin contour blended with white (not colored) noise.
    WhiteBlend,
    /// Pure binary Perlin contour.
    PhlatcamContour,
    /// Sixteen random point openings.
    MultiPinhole,
    /// Fair Bernoulli field.
    RandomBinary,
    /// Uniform random field.
    RandomSpeckle,
}

pub const MULTI_PINHOLE_COUNT: usize = 16;

impl BaselineKind {
    pub const ALL: [BaselineKind; 5] = [
        BaselineKind::WhiteBlend,
        BaselineKind::PhlatcamContour,
        BaselineKind::MultiPinhole,
        BaselineKind::RandomBinary,
        BaselineKind::RandomSpeckle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::WhiteBlend => "white_blend",
            BaselineKind::PhlatcamContour => "phlatcam_contour",
            BaselineKind::MultiPinhole => "multi_pinhole",
            BaselineKind::RandomBinary => "random_binary",
            BaselineKind::RandomSpeckle => "random_speckle",
        }
    }

    /// Whether the PSF takes only two values.
    pub fn is_binary(self) -> bool {
        matches!(
            self,
            BaselineKind::PhlatcamContour | BaselineKind::MultiPinhole | BaselineKind::RandomBinary
        )
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        BaselineKind::ALL
            .into_iter()
            .find(|k| k.name() == s || k.name().replace('_', "-") == s)
            .ok_or_else(|| Error::UnknownKind(s.to_string()))
    }
}

impl std::fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

pub fn baseline_psf(kind: BaselineKind, spec: &KeySpec) -> Result<Tensor> {
    spec.validate()?;
    let n = spec.psf_side;
    let mut rng = Rng::child(spec.seed, STREAM_BASELINE);
    let shared: Option<Plane> = match kind {
        BaselineKind::PhlatcamContour => Some(contour_plane(spec)?),
        BaselineKind::MultiPinhole => {
            if n * n < MULTI_PINHOLE_COUNT {
                return Err(Error::InvalidDims(format!(
                    "{n}x{n} PSF cannot hold {MULTI_PINHOLE_COUNT} pinholes"
                )));
            }
            let mut idx: Vec<usize> = (0..n * n).collect();
            rng.shuffle(&mut idx);
            let mut p = Plane::zeros(n, n);
            for &i in &idx[..MULTI_PINHOLE_COUNT] {
                p.data_mut()[i] = 1.0;
            }
            Some(p)
        }
        BaselineKind::RandomBinary => {
            let mut p = Plane::from_fn(n, n, |_, _| (rng.next_u64() >> 63) as f64);
            if p.sum() == 0.0 {
                p.set(0, 0, 1.0);
            }
            Some(p)
        }
        BaselineKind::RandomSpeckle => Some(Plane::from_fn(n, n, |_, _| rng.uniform())),
        BaselineKind::WhiteBlend => None,
    };
    let planes = (0..spec.channels)
        .map(|c| {
            let raw = match &shared {
                Some(p) => p.clone(),
                None => {
                    let contour = contour_plane(spec)?;
                    let mut white_rng = Rng::child(spec.seed, STREAM_BASELINE + 1 + c as u64);
                    let white = Plane::from_fn(n, n, |_, _| white_rng.normal());
                    let white = min_max_normalized(&white).ok_or(Error::DegenerateNoise)?;
                    white.zip_map(&contour, |w, k| spec.alpha * w + (1.0 - spec.alpha) * k)
                }
            };
            raw.normalized_sum().ok_or(Error::DegenerateNoise)
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::from_planes(&planes, spec.channels == 3)
}

/// Which multiplexing PSF a camera uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsfDesign {
    Opencam,
    Baseline(BaselineKind),
}

impl PsfDesign {
    pub fn name(self) -> String {
        match self {
            PsfDesign::Opencam => "opencam".into(),
            PsfDesign::Baseline(k) => k.name().into(),
        }
    }

    pub fn psf(self, spec: &KeySpec) -> Result<Tensor> {
        match self {
            PsfDesign::Opencam => make_opencam_psf(spec),
            PsfDesign::Baseline(k) => baseline_psf(k, spec),
        }
    }

    /// Support an attacker thresholding a point-source capture is trying
    /// to recover: the Perlin contour for contour-based designs, the
    /// nonzero set otherwise.
    pub fn structural_support(self, spec: &KeySpec) -> Result<Tensor> {
        match self {
            PsfDesign::Opencam
            | PsfDesign::Baseline(BaselineKind::WhiteBlend)
            | PsfDesign::Baseline(BaselineKind::PhlatcamContour) => perlin_contour_psf(spec),
            PsfDesign::Baseline(_) => {
                let p = self.psf(spec)?.channel(0);
                Tensor::from_planes(&[p.map(|v| if v > 0.0 { 1.0 } else { 0.0 })], false)
            }
        }
    }
}

impl std::str::FromStr for PsfDesign {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "opencam" {
            Ok(PsfDesign::Opencam)
        } else {
            s.parse().map(PsfDesign::Baseline)
        }
    }
}

/// Single-mask cameras have no scaling mask (`S = 1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskCount {
    Single,
    Double,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Key {
    pub psf: Tensor,
    pub scaling: Tensor,
    pub spec: KeySpec,
    pub design: PsfDesign,
    pub masks: MaskCount,
}

pub fn make_key(spec: &KeySpec) -> Result<Key> {
    make_key_with(spec, PsfDesign::Opencam, MaskCount::Double)
}

pub fn make_key_with(spec: &KeySpec, design: PsfDesign, masks: MaskCount) -> Result<Key> {
    let psf = design.psf(spec)?;
    let scaling = match masks {
        MaskCount::Double => make_scaling_mask(spec)?,
        MaskCount::Single => {
            let (h, w) = spec.sensor_dims;
            let dims: Vec<usize> = if spec.channels == 3 {
                vec![h, w, 3]
            } else {
                vec![h, w]
            };
            Tensor::filled(&dims, 1.0)?
        }
    };
    let key = Key {
        psf,
        scaling,
        spec: spec.clone(),
        design,
        masks,
    };
    key.validate()?;
    Ok(key)
}

/// `min |DFT(P)| / max |DFT(P)|` over all channels, on the PSF's own grid.
pub fn spectrum_floor(psf: &Tensor) -> f64 {
    let (h, w) = psf.spatial();
    let plan = Fft2::plan(h, w);
    psf.planes()
        .iter()
        .map(|p| {
            let s = plan.spectrum(p);
            let mags = s.iter().map(|c| c.norm());
            let (mn, mx) = mags.fold((f64::INFINITY, 0.0f64), |(a, b), m| (a.min(m), b.max(m)));
            if mx > 0.0 {
                mn / mx
            } else {
                0.0
            }
        })
        .fold(f64::INFINITY, f64::min)
}

impl Key {
    pub fn id(&self) -> String {
        self.spec.key_id()
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.spec;
        if self.psf.spatial() != (s.psf_side, s.psf_side) || self.psf.channels() != s.channels {
            return Err(Error::DimMismatch(format!(
                "psf dims {:?} disagree with spec",
                self.psf.dims()
            )));
        }
        if self.scaling.spatial() != s.sensor_dims || self.scaling.channels() != s.channels {
            return Err(Error::DimMismatch(format!(
                "scaling dims {:?} disagree with spec",
                self.scaling.dims()
            )));
        }
        if self.psf.min() < 0.0 {
            return Err(Error::DegenerateKey("negative PSF value".into()));
        }
        for (c, p) in self.psf.planes().iter().enumerate() {
            if (p.sum() - 1.0).abs() > 1e-5 {
                return Err(Error::DegenerateKey(format!("PSF channel {c} sums to {}", p.sum())));
            }
        }
        let lo = s.s_min as f32;
        if self.scaling.data().iter().any(|&v| !(v > 0.0 && v >= lo - 1e-6 && v <= 1.0)) {
            return Err(Error::DegenerateKey("scaling mask outside [s_min, 1]".into()));
        }
        Ok(())
    }

    pub fn spectrum_floor(&self) -> f64 {
        spectrum_floor(&self.psf)
    }

    pub fn is_degenerate(&self) -> bool {
        self.spectrum_floor() < SPECTRUM_FLOOR_LIMIT
    }

    pub fn scene_dims(&self) -> (usize, usize) {
        self.spec
            .scene_dims()
            .expect("validated key has sensor at least as large as the PSF")
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_tensor(&self.psf, dir.join("psf.ocam"))?;
        write_tensor(&self.scaling, dir.join("scaling.ocam"))?;
        let file = KeyFile::from_key(self);
        let json = serde_json::to_string_pretty(&file)?;
        let path = dir.join("key.json");
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Key> {
        let dir = dir.as_ref();
        let path = dir.join("key.json");
        let raw = std::fs::read(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::FileMissing(path.clone())
            } else {
                Error::io(&path, e)
            }
        })?;
        let file: KeyFile = serde_json::from_slice(&raw)?;
        let key = Key {
            psf: read_tensor(dir.join("psf.ocam"))?,
            scaling: read_tensor(dir.join("scaling.ocam"))?,
            spec: file.spec(),
            design: file.design,
            masks: file.masks,
        };
        key.validate()?;
        Ok(key)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyDims {
    pub psf: [usize; 2],
    pub sensor: [usize; 2],
    pub channels: usize,
}

/// On-disk `key.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyFile {
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    pub dims: KeyDims,
    pub s_min: f64,
    pub contour_fill: f64,
    pub feature_size: usize,
    pub design: PsfDesign,
    pub masks: MaskCount,
    pub spectrum_floor: f64,
    pub generator_version: String,
}

impl KeyFile {
    pub fn from_key(key: &Key) -> Self {
        let s = &key.spec;
        KeyFile {
            seed: s.seed,
            alpha: s.alpha,
            beta: s.beta,
            dims: KeyDims {
                psf: [s.psf_side, s.psf_side],
                sensor: [s.sensor_dims.0, s.sensor_dims.1],
                channels: s.channels,
            },
            s_min: s.s_min,
            contour_fill: s.contour_fill,
            feature_size: s.feature_size,
            design: key.design,
            masks: key.masks,
            spectrum_floor: key.spectrum_floor(),
            generator_version: GENERATOR_VERSION.into(),
        }
    }

    pub fn spec(&self) -> KeySpec {
        KeySpec {
            seed: self.seed,
            psf_side: self.dims.psf[0],
            sensor_dims: (self.dims.sensor[0], self.dims.sensor[1]),
            channels: self.dims.channels,
            alpha: self.alpha,
            beta: self.beta,
            feature_size: self.feature_size,
            s_min: self.s_min,
            contour_fill: self.contour_fill,
        }
    }
}
