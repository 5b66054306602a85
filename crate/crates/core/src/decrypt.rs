//! Keyed decryption: scaling normalization `Y / (S + eps)` followed by
//! Tikhonov-regularized deconvolution evaluated as a Fourier-domain filter.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::keygen::Key;
use crate::optics::Measurement;
use crate::plane::Plane;
use crate::tensor::Tensor;

pub const DEFAULT_GAMMA: f64 = 3e-4;
pub const DEFAULT_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WienerConfig {
    pub gamma: f64,
    pub epsilon: f64,
}

impl Default for WienerConfig {
    fn default() -> Self {
        WienerConfig {
            gamma: DEFAULT_GAMMA,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl WienerConfig {
    /// Settings for noiseless data.
    pub fn noiseless() -> Self {
        WienerConfig {
            gamma: 1e-6,
            epsilon: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidSpec(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidSpec(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Element-wise `y / (s + epsilon)`.
pub fn scaling_normalize(y: &Tensor, s: &Tensor, epsilon: f64) -> Result<Tensor> {
    if y.dims() != s.dims() {
        return Err(Error::DimMismatch(format!(
            "measurement {:?} vs scaling mask {:?}",
            y.dims(),
            s.dims()
        )));
    }
    let planes: Vec<Plane> = y
        .planes()
        .iter()
        .zip(s.planes().iter())
        .map(|(yc, sc)| yc.zip_map(sc, |a, b| a / (b + epsilon)))
        .collect();
    Tensor::from_planes_like(&planes, y)
}

/// Unclamped Tikhonov solution on the full grid of `y`:
/// `IDFT(conj(P) Y / (|P|^2 + gamma))` with `p` zero-padded to the grid.
pub fn tikhonov_full(y: &Plane, p: &Plane, gamma: f64) -> Result<Plane> {
    let (h, w) = y.dims();
    let plan = Fft2::plan(h, w);
    let ps = plan.spectrum(p);
    let ys = plan.spectrum(y);
    let mut out = Vec::with_capacity(ps.len());
    for (pv, yv) in ps.iter().zip(&ys) {
        let denom = pv.norm_sqr() + gamma;
        if denom == 0.0 {
            return Err(Error::DegenerateKey(
                "PSF spectrum has an exact zero and gamma = 0".into(),
            ));
        }
        out.push(pv.conj() * yv / Complex64::new(denom, 0.0));
    }
    Ok(plan.real_inverse(out))
}

/// Deconvolve one channel and crop to the scene footprint.
pub fn wiener_plane(y_n: &Plane, p: &Plane, gamma: f64, scene_dims: (usize, usize)) -> Result<Plane> {
    let full = tikhonov_full(y_n, p, gamma)?;
    Ok(full
        .crop(0, 0, scene_dims.0, scene_dims.1)
        .map(|v| v.max(0.0)))
}

fn check_grid(y: &Tensor, p: &Tensor, scene_dims: (usize, usize)) -> Result<()> {
    let (ph, pw) = p.spatial();
    let expect = (scene_dims.0 + ph - 1, scene_dims.1 + pw - 1);
    if scene_dims.0 == 0 || scene_dims.1 == 0 || y.spatial() != expect {
        return Err(Error::DimMismatch(format!(
            "measurement {:?} is not the full convolution of scene {:?} with PSF {:?}",
            y.spatial(),
            scene_dims,
            (ph, pw)
        )));
    }
    if y.channels() != p.channels() {
        return Err(Error::ChannelMismatch(y.channels(), p.channels()));
    }
    Ok(())
}

/// Per-channel Wiener deconvolution of a scaling-normalized measurement,
/// cropped at the origin to `scene_dims` and clamped to be nonnegative.
pub fn wiener_decrypt(y_n: &Tensor, p: &Tensor, cfg: &WienerConfig, scene_dims: (usize, usize)) -> Result<Tensor> {
    cfg.validate()?;
    check_grid(y_n, p, scene_dims)?;
    let planes = y_n
        .planes()
        .iter()
        .zip(p.planes().iter())
        .map(|(yc, pc)| wiener_plane(yc, pc, cfg.gamma, scene_dims))
        .collect::<Result<Vec<_>>>()?;
    Tensor::from_planes_like(&planes, y_n)
}

/// Decrypt with the full key: normalize by `S`, then invert `P`.
pub fn keyed_decrypt(y: &Measurement, key: &Key, cfg: &WienerConfig, scene_dims: (usize, usize)) -> Result<Tensor> {
    let y_n = scaling_normalize(&y.data, &key.scaling, cfg.epsilon)?;
    wiener_decrypt(&y_n, &key.psf, cfg, scene_dims)
}
