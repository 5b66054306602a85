//! Classical cryptanalysis of lensless encryption cameras: autocorrelation
//! diagnostic, support thresholding, and known-plaintext key estimation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decrypt::{scaling_normalize, wiener_decrypt, WienerConfig};
use crate::error::{Error, Result};
use crate::fft::{circular_autocorrelation, convolve_full, correlate_adjoint, fftshift};
use crate::keygen::Key;
use crate::metrics::{psnr, scale_optimal_error, ssim, SSIM_WINDOW};
use crate::optics::Measurement;
use crate::plane::Plane;
use crate::tensor::{save_png_visualization, write_tensor, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttackKind {
    #[serde(rename = "autocorr")]
    Autocorr,
    #[serde(rename = "threshold")]
    Threshold,
    #[serde(rename = "ikpa")]
    Ikpa,
    #[serde(rename = "ukpa-usr")]
    UkpaUsr,
    #[serde(rename = "ukpa-avg")]
    UkpaAvg,
    #[serde(rename = "uikpa")]
    Uikpa,
}

impl AttackKind {
    pub const ALL: [AttackKind; 6] = [
        AttackKind::Autocorr,
        AttackKind::Threshold,
        AttackKind::Ikpa,
        AttackKind::UkpaUsr,
        AttackKind::UkpaAvg,
        AttackKind::Uikpa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Autocorr => "autocorr",
            AttackKind::Threshold => "threshold",
            AttackKind::Ikpa => "ikpa",
            AttackKind::UkpaUsr => "ukpa-usr",
            AttackKind::UkpaAvg => "ukpa-avg",
            AttackKind::Uikpa => "uikpa",
        }
    }
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AttackKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('_', "-");
        AttackKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| Error::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub step: f64,
    pub backtracks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackReport {
    pub kind: AttackKind,
    pub estimated_psf: Option<Tensor>,
    pub estimated_scaling: Option<Tensor>,
    pub decrypted: Option<Tensor>,
    pub support: Option<Tensor>,
    pub metrics: BTreeMap<String, f64>,
    pub trace: Vec<TraceRow>,
}

#[derive(Serialize)]
struct ReportFile<'a> {
    kind: AttackKind,
    metrics: &'a BTreeMap<String, f64>,
    files: Vec<String>,
    trace_rows: usize,
}

impl AttackReport {
    pub fn new(kind: AttackKind) -> Self {
        AttackReport {
            kind,
            estimated_psf: None,
            estimated_scaling: None,
            decrypted: None,
            support: None,
            metrics: BTreeMap::new(),
            trace: Vec::new(),
        }
    }

    /// Adds PSNR (and SSIM when the scene is large enough) of the decrypted
    /// scene against `truth`.
    pub fn score_scene(&mut self, truth: &Tensor) -> Result<()> {
        if let Some(d) = &self.decrypted {
            self.metrics.insert("psnr".into(), psnr(d, truth)?);
            if truth.height().min(truth.width()) >= SSIM_WINDOW {
                self.metrics.insert("ssim".into(), ssim(d, truth)?);
            }
        }
        Ok(())
    }

    /// Adds scale-optimal relative errors of the estimated key parts.
    pub fn score_key(&mut self, key: &Key) -> Result<()> {
        if let Some(p) = &self.estimated_psf {
            self.metrics
                .insert("psf_error".into(), scale_optimal_error(p, &key.psf)?.0);
        }
        if let Some(s) = &self.estimated_scaling {
            let (e, c) = scale_optimal_error(s, &key.scaling)?;
            self.metrics.insert("scaling_error".into(), e);
            self.metrics.insert("scaling_scale".into(), c);
        }
        Ok(())
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    /// Writes `report.json`, tensors with PNG previews, and `trace.csv`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = Vec::new();
        let parts = [
            ("estimated_psf", &self.estimated_psf),
            ("estimated_scaling", &self.estimated_scaling),
            ("decrypted", &self.decrypted),
            ("support", &self.support),
        ];
        for (name, t) in parts {
            if let Some(t) = t {
                let f = format!("{name}.ocam");
                write_tensor(t, dir.join(&f))?;
                save_png_visualization(t, dir.join(format!("{name}.png")), true)?;
                files.push(f);
            }
        }
        if !self.trace.is_empty() {
            let path = dir.join("trace.csv");
            let mut w = csv::Writer::from_path(&path)?;
            for row in &self.trace {
                w.serialize(row)?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            files.push("trace.csv".into());
        }
        let file = ReportFile {
            kind: self.kind,
            metrics: &self.metrics,
            files,
            trace_rows: self.trace.len(),
        };
        let path = dir.join("report.json");
        std::fs::write(&path, serde_json::to_string_pretty(&file)? + "\n").map_err(|e| Error::io(&path, e))
    }
}

/// Mean-removed circular autocorrelation per channel, zero lag moved to
/// `(h/2, w/2)` and scaled so the zero-lag value is 1.
pub fn autocorrelation(t: &Tensor) -> Result<Tensor> {
    t.map_planes(|p| {
        let m = p.mean();
        let a = fftshift(&circular_autocorrelation(&p.map(|v| v - m)));
        let peak = a.max();
        if peak > 0.0 {
            a.scale(1.0 / peak)
        } else {
            Plane::zeros(p.height(), p.width())
        }
    })
}

/// `1 - E(center 3x3) / E(total)` for a centred autocorrelation, with
/// energy the sum of squares over all channels.
pub fn impulse_likeness(acorr: &Tensor) -> f64 {
    let (h, w) = acorr.spatial();
    let (cr, cc) = (h / 2, w / 2);
    let (mut center, mut total) = (0.0, 0.0);
    for p in acorr.planes() {
        for r in 0..h {
            for c in 0..w {
                let e = p.get(r, c).powi(2);
                total += e;
                if r.abs_diff(cr) <= 1 && c.abs_diff(cc) <= 1 {
                    center += e;
                }
            }
        }
    }
    if total == 0.0 {
        0.0
    } else {
        1.0 - center / total
    }
}

/// 64 log-spaced thresholds over `[1e-4, 1] * max(y)`.
pub fn default_tau_grid(y: &Tensor) -> Vec<f64> {
    let max = y.max().max(0.0) as f64;
    (0..64)
        .map(|i| max * 10f64.powf(-4.0 + 4.0 * i as f64 / 63.0))
        .collect()
}

/// Place a PSF-sized support at `offset` on a sensor grid.
pub fn embed_support(support: &Tensor, sensor: (usize, usize), offset: (usize, usize)) -> Result<Tensor> {
    let p = support.channel(0).map(|v| if v != 0.0 { 1.0 } else { 0.0 });
    Tensor::from_planes(&[p.embed(sensor.0, sensor.1, offset.0, offset.1)], false)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdResult {
    pub best_iou: f64,
    pub best_tau: f64,
    pub support: Tensor,
    pub curve: Vec<(f64, f64)>,
}

/// Sweep `y > tau` over `tau_grid` and score each support against
/// `reference` (sensor-sized, single channel). Multi-channel measurements
/// are averaged over channels first.
pub fn threshold_support_attack(y: &Tensor, tau_grid: &[f64], reference: &Tensor) -> Result<ThresholdResult> {
    if reference.spatial() != y.spatial() {
        return Err(Error::DimMismatch(format!(
            "reference {:?} vs measurement {:?}",
            reference.spatial(),
            y.spatial()
        )));
    }
    let planes = y.planes();
    let mut mean = planes[0].clone();
    for p in &planes[1..] {
        mean = mean.zip_map(p, |a, b| a + b);
    }
    let mean = mean.scale(1.0 / planes.len() as f64);
    let refp = reference.channel(0);
    let mut best: Option<(f64, f64, Plane)> = None;
    let mut curve = Vec::with_capacity(tau_grid.len());
    for &tau in tau_grid {
        let s = mean.map(|v| if v > tau { 1.0 } else { 0.0 });
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in s.data().iter().zip(refp.data()) {
            let (a, b) = (a != 0.0, b != 0.0);
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        let iou = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
        curve.push((tau, iou));
        if best.as_ref().is_none_or(|b| iou > b.0) {
            best = Some((iou, tau, s));
        }
    }
    let (best_iou, best_tau, s) = best.ok_or(Error::EmptySet)?;
    Ok(ThresholdResult {
        best_iou,
        best_tau,
        support: Tensor::from_planes(&[s], false)?,
        curve,
    })
}

impl ThresholdResult {
    pub fn into_report(self) -> AttackReport {
        let mut r = AttackReport::new(AttackKind::Threshold);
        r.metrics.insert("best_iou".into(), self.best_iou);
        r.metrics.insert("best_tau".into(), self.best_tau);
        r.support = Some(self.support);
        r
    }
}

fn check_sensor(y: &Tensor, scene_dims: (usize, usize), psf_dims: (usize, usize)) -> Result<()> {
    let expect = (scene_dims.0 + psf_dims.0 - 1, scene_dims.1 + psf_dims.1 - 1);
    if y.spatial() != expect {
        return Err(Error::DimMismatch(format!(
            "measurement {:?} vs expected sensor {:?}",
            y.spatial(),
            expect
        )));
    }
    Ok(())
}

/// Crop a PSF-sized window at `offset`, clamp to nonnegative and normalize
/// each channel to unit sum.
pub fn psf_from_response(y: &Tensor, offset: (usize, usize), psf_dims: (usize, usize)) -> Result<Tensor> {
    y.map_planes(|p| {
        let c = p
            .crop(offset.0, offset.1, psf_dims.0, psf_dims.1)
            .map(|v| v.max(0.0));
        c.normalized_sum()
            .unwrap_or_else(|| Plane::filled(psf_dims.0, psf_dims.1, 1.0 / (psf_dims.0 * psf_dims.1) as f64))
    })
}

/// Impulse known-plaintext attack: treat the bright-source capture as the
/// PSF and decrypt with the scaling mask assumed to be 1.
pub fn ikpa(
    y_bright: &Measurement,
    y_target: &Measurement,
    cfg: &WienerConfig,
    scene_dims: (usize, usize),
    psf_dims: (usize, usize),
    source: (usize, usize),
) -> Result<AttackReport> {
    check_sensor(&y_bright.data, scene_dims, psf_dims)?;
    check_sensor(&y_target.data, scene_dims, psf_dims)?;
    let p_hat = psf_from_response(&y_bright.data, source, psf_dims)?;
    let decrypted = wiener_decrypt(&y_target.data, &p_hat, cfg, scene_dims)?;
    let mut r = AttackReport::new(AttackKind::Ikpa);
    r.estimated_psf = Some(p_hat);
    r.decrypted = Some(decrypted);
    Ok(r)
}

fn ukpa_with(
    kind: AttackKind,
    s_hat: Tensor,
    y_target: &Measurement,
    psf_guess: &Tensor,
    cfg: &WienerConfig,
    scene_dims: (usize, usize),
) -> Result<AttackReport> {
    let y_n = scaling_normalize(&y_target.data, &s_hat, cfg.epsilon)?;
    let decrypted = wiener_decrypt(&y_n, psf_guess, cfg, scene_dims)?;
    let mut r = AttackReport::new(kind);
    r.estimated_scaling = Some(s_hat);
    r.decrypted = Some(decrypted);
    Ok(r)
}

/// Uniform known-plaintext attack: the uniform-scene response stands in
/// for the scaling mask.
pub fn ukpa_usr(
    y_usr: &Measurement,
    y_target: &Measurement,
    psf_guess: &Tensor,
    cfg: &WienerConfig,
    scene_dims: (usize, usize),
) -> Result<AttackReport> {
    ukpa_with(AttackKind::UkpaUsr, y_usr.data.clone(), y_target, psf_guess, cfg, scene_dims)
}

/// Uniform known-plaintext attack using the mean of many captures.
pub fn ukpa_average(
    measurements: &[Measurement],
    y_target: &Measurement,
    psf_guess: &Tensor,
    cfg: &WienerConfig,
    scene_dims: (usize, usize),
) -> Result<AttackReport> {
    let s_hat = mean_measurement(measurements)?;
    let mut r = ukpa_with(AttackKind::UkpaAvg, s_hat, y_target, psf_guess, cfg, scene_dims)?;
    r.metrics.insert("n".into(), measurements.len() as f64);
    Ok(r)
}

/// Element-wise mean of a set of equally sized measurements.
pub fn mean_measurement(measurements: &[Measurement]) -> Result<Tensor> {
    let first = measurements.first().ok_or(Error::EmptySet)?;
    let mut acc: Vec<f64> = vec![0.0; first.data.len()];
    for m in measurements {
        if m.data.dims() != first.data.dims() {
            return Err(Error::DimMismatch(format!("{:?} vs {:?}", m.data.dims(), first.data.dims())));
        }
        for (a, &v) in acc.iter_mut().zip(m.data.data()) {
            *a += v as f64;
        }
    }
    let n = measurements.len() as f64;
    Tensor::new(first.data.dims().to_vec(), acc.into_iter().map(|v| (v / n) as f32).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StepRule {
    /// Start every PSF step at this size, halving on increase.
    Fixed { step: f64 },
    /// Start from twice the last accepted step (first try `1/L` with `L`
    /// a Lipschitz bound), halving on increase.
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlsConfig {
    pub outer_iters: usize,
    pub psf_step_count: usize,
    pub step_rule: StepRule,
    pub epsilon_ls: f64,
    pub nonneg_projection: bool,
    pub max_backtracks: usize,
    /// Maximum rounds of ratio refinement applied to the warm start: `S`
    /// from the uniform capture divided by `P conv 1`, then `P` from the
    /// bright capture divided by `S`. Stops early once `P` changes by less
    /// than `1e-6` relative.
    pub init_rounds: usize,
}

impl Default for AlsConfig {
    fn default() -> Self {
        AlsConfig {
            outer_iters: 50,
            psf_step_count: 5,
            step_rule: StepRule::Adaptive,
            epsilon_ls: 1e-12,
            nonneg_projection: true,
            max_backtracks: 40,
            init_rounds: 100,
        }
    }
}

impl AlsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_iters == 0 {
            return Err(Error::InvalidSpec("outer_iters must be >= 1".into()));
        }
        if !(self.epsilon_ls >= 0.0) {
            return Err(Error::InvalidSpec("epsilon_ls must be >= 0".into()));
        }
        Ok(())
    }
}

/// Lower clamp for the scaling estimate, keeping it strictly positive.
pub const SCALING_FLOOR: f64 = 1e-6;

/// One channel of the joint scaling/PSF problem with two known plaintexts:
/// a uniform scene of known `level` and a point source of unknown
/// amplitude `c` at `source`.
#[derive(Debug, Clone)]
pub struct AlsProblem {
    pub y_usr: Plane,
    pub y_bright: Plane,
    pub level: f64,
    pub source: (usize, usize),
    pub scene_dims: (usize, usize),
    pub psf_dims: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct AlsState {
    pub scaling: Plane,
    pub psf: Plane,
    pub amplitude: f64,
}

impl AlsProblem {
    fn sensor(&self) -> (usize, usize) {
        self.y_usr.dims()
    }

    /// `P conv X1` for the uniform scene.
    pub fn z_usr(&self, psf: &Plane) -> Plane {
        let x1 = Plane::filled(self.scene_dims.0, self.scene_dims.1, self.level);
        convolve_full(&x1, psf)
    }

    /// `P conv delta` at the source, i.e. the PSF embedded at the source.
    pub fn z_point(&self, psf: &Plane) -> Plane {
        let (h, w) = self.sensor();
        psf.embed(h, w, self.source.0, self.source.1)
    }

    pub fn objective(&self, st: &AlsState) -> f64 {
        let z1 = self.z_usr(&st.psf);
        let z2 = self.z_point(&st.psf);
        let mut f = 0.0;
        for i in 0..z1.len() {
            let s = st.scaling.data()[i];
            let r1 = self.y_usr.data()[i] - s * z1.data()[i];
            let r2 = self.y_bright.data()[i] - s * st.amplitude * z2.data()[i];
            f += r1 * r1 + r2 * r2;
        }
        f
    }

    /// Exact per-pixel minimizer over `S` for fixed `P` and `c`, clamped
    /// to `(0, 1]`.
    pub fn scaling_step(&self, psf: &Plane, amplitude: f64, eps: f64) -> Plane {
        let z1 = self.z_usr(psf);
        let z2 = self.z_point(psf).scale(amplitude);
        let (h, w) = self.sensor();
        Plane::from_fn(h, w, |r, c| {
            let (a, b) = (z1.get(r, c), z2.get(r, c));
            let num = self.y_usr.get(r, c) * a + self.y_bright.get(r, c) * b;
            let den = a * a + b * b + eps;
            if den > 0.0 {
                (num / den).clamp(SCALING_FLOOR, 1.0)
            } else {
                1.0
            }
        })
    }

    /// Least-squares source amplitude for fixed `S` and `P`.
    pub fn amplitude_step(&self, scaling: &Plane, psf: &Plane) -> f64 {
        let m = self.z_point(psf).zip_map(scaling, |z, s| z * s);
        let den = m.dot(&m);
        if den > 0.0 {
            (self.y_bright.dot(&m) / den).max(0.0)
        } else {
            0.0
        }
    }

    /// Gradient of the objective with respect to `P` (up to a factor 2).
    pub fn psf_gradient(&self, st: &AlsState) -> Plane {
        let x1 = Plane::filled(self.scene_dims.0, self.scene_dims.1, self.level);
        let z1 = convolve_full(&x1, &st.psf);
        let z2 = self.z_point(&st.psf);
        let s = &st.scaling;
        let w1 = Plane::from_fn(z1.height(), z1.width(), |r, c| {
            let sv = s.get(r, c);
            sv * (sv * z1.get(r, c) - self.y_usr.get(r, c))
        });
        let w2 = Plane::from_fn(z1.height(), z1.width(), |r, c| {
            let sv = s.get(r, c);
            sv * (sv * st.amplitude * z2.get(r, c) - self.y_bright.get(r, c))
        });
        let g1 = correlate_adjoint(&x1, &w1, self.psf_dims);
        let g2 = w2
            .crop(self.source.0, self.source.1, self.psf_dims.0, self.psf_dims.1)
            .scale(st.amplitude);
        g1.zip_map(&g2, |a, b| a + b)
    }

    /// Upper bound on the Lipschitz constant of the (halved) gradient.
    fn lipschitz(&self, st: &AlsState) -> f64 {
        let smax = st.scaling.max().max(SCALING_FLOOR);
        let n1 = self.level.abs() * (self.scene_dims.0 * self.scene_dims.1) as f64;
        smax * smax * (n1 * n1 + st.amplitude * st.amplitude)
    }
}

/// Euclidean projection onto `{p >= 0, sum p = 1}`.
pub fn project_simplex(v: &Plane) -> Plane {
    let mut u: Vec<f64> = v.data().to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut css = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        css += ui;
        let t = (css - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.map(|x| (x - theta).max(0.0))
}

/// Euclidean projection onto `{sum p = 1}`.
pub fn project_unit_sum(v: &Plane) -> Plane {
    let shift = (v.sum() - 1.0) / v.len() as f64;
    v.map(|x| x - shift)
}

#[derive(Debug, Clone)]
pub struct AlsOutcome {
    pub state: AlsState,
    pub trace: Vec<TraceRow>,
}

/// Warm start: `S0` is the uniform response scaled into `(0, 1]`; `P0` is
/// the bright response cropped at the source and divided by `S0` there.
pub fn als_init(prob: &AlsProblem, eps: f64) -> AlsState {
    als_init_refined(prob, eps, 0)
}

/// [`als_init`] followed by up to `rounds` of ratio refinement.
pub fn als_init_refined(prob: &AlsProblem, eps: f64, rounds: usize) -> AlsState {
    let peak = prob.y_usr.max();
    let scaling = if peak > 0.0 {
        prob.y_usr.map(|v| (v / peak).clamp(SCALING_FLOOR, 1.0))
    } else {
        Plane::filled(prob.y_usr.height(), prob.y_usr.width(), 1.0)
    };
    let (ph, pw) = prob.psf_dims;
    let yb = prob.y_bright.crop(prob.source.0, prob.source.1, ph, pw);
    let sb = scaling.crop(prob.source.0, prob.source.1, ph, pw);
    let raw = yb.zip_map(&sb, |y, s| (y / (s + eps)).max(0.0));
    let uniform = Plane::filled(ph, pw, 1.0 / (ph * pw) as f64);
    let mut psf = raw.normalized_sum().unwrap_or_else(|| uniform.clone());
    let mut scaling = scaling;
    for _ in 0..rounds {
        let z1 = prob.z_usr(&psf);
        scaling = prob
            .y_usr
            .zip_map(&z1, |y, z| if z > 0.0 { y / z } else { 1.0 })
            .map(|v| v.clamp(SCALING_FLOOR, 1.0));
        let sb = scaling.crop(prob.source.0, prob.source.1, ph, pw);
        let next = yb
            .zip_map(&sb, |y, s| (y / (s + eps)).max(0.0))
            .normalized_sum()
            .unwrap_or_else(|| uniform.clone());
        let change = next.zip_map(&psf, |a, b| a - b).norm() / psf.norm().max(f64::MIN_POSITIVE);
        psf = next;
        if change < 1e-6 {
            break;
        }
    }
    let amplitude = prob.amplitude_step(&scaling, &psf);
    AlsState {
        scaling,
        psf,
        amplitude,
    }
}

/// Alternating minimization of the two-plaintext objective. Each block
/// update is a descent step, so the recorded objective never increases.
pub fn als_solve(prob: &AlsProblem, init: AlsState, cfg: &AlsConfig) -> Result<AlsOutcome> {
    cfg.validate()?;
    let mut st = init;
    let mut f = prob.objective(&st);
    if !f.is_finite() {
        return Err(Error::NonFiniteObjective { iteration: 0 });
    }
    let mut trace = vec![TraceRow {
        iteration: 0,
        objective: f,
        step: 0.0,
        backtracks: 0,
    }];
    let mut last_step: Option<f64> = None;
    for it in 1..=cfg.outer_iters {
        let s_new = prob.scaling_step(&st.psf, st.amplitude, cfg.epsilon_ls);
        let cand = AlsState {
            scaling: s_new,
            ..st.clone()
        };
        let fc = prob.objective(&cand);
        if fc <= f {
            st = cand;
            f = fc;
        }
        let c_new = prob.amplitude_step(&st.scaling, &st.psf);
        let cand = AlsState {
            amplitude: c_new,
            ..st.clone()
        };
        let fc = prob.objective(&cand);
        if fc <= f {
            st = cand;
            f = fc;
        }
        let mut backtracks = 0;
        let mut accepted = 0.0;
        for _ in 0..cfg.psf_step_count {
            let g = prob.psf_gradient(&st);
            let step = match (cfg.step_rule, last_step) {
                (StepRule::Fixed { step }, _) => step,
                (StepRule::Adaptive, Some(s)) => 2.0 * s,
                (StepRule::Adaptive, None) => 1.0 / prob.lipschitz(&st),
            };
            match psf_line_search(prob, &st, f, &g, step, cfg, it)? {
                Some((cand, fc, step, bt)) => {
                    st = cand;
                    f = fc;
                    accepted = step;
                    backtracks += bt;
                    last_step = Some(step);
                }
                None => {
                    backtracks += cfg.max_backtracks + 1;
                    break;
                }
            }
        }
        if !f.is_finite() {
            return Err(Error::NonFiniteObjective { iteration: it });
        }
        trace.push(TraceRow {
            iteration: it,
            objective: f,
            step: accepted,
            backtracks,
        });
    }
    Ok(AlsOutcome { state: st, trace })
}

/// Backtracking along `P - t dir` projected onto the feasible set. Returns
/// the first candidate that does not increase the objective.
fn psf_line_search(
    prob: &AlsProblem,
    st: &AlsState,
    f: f64,
    dir: &Plane,
    mut step: f64,
    cfg: &AlsConfig,
    iteration: usize,
) -> Result<Option<(AlsState, f64, f64, usize)>> {
    for bt in 0..=cfg.max_backtracks {
        let trial = st.psf.zip_map(dir, |p, d| p - step * d);
        let trial = if cfg.nonneg_projection {
            project_simplex(&trial)
        } else {
            project_unit_sum(&trial)
        };
        let cand = AlsState {
            psf: trial,
            ..st.clone()
        };
        let fc = prob.objective(&cand);
        if !fc.is_finite() {
            return Err(Error::NonFiniteObjective { iteration });
        }
        if fc <= f {
            return Ok(Some((cand, fc, step, bt)));
        }
        step *= 0.5;
    }
    Ok(None)
}

/// Uniform-plus-impulse known-plaintext attack: estimate `(S, P)` jointly
/// from a uniform-scene capture and a bright-source capture, then decrypt.
#[allow(clippy::too_many_arguments)]
pub fn uikpa(
    y_usr: &Measurement,
    y_bright: &Measurement,
    y_target: &Measurement,
    als: &AlsConfig,
    cfg: &WienerConfig,
    scene_dims: (usize, usize),
    psf_dims: (usize, usize),
    source: (usize, usize),
) -> Result<AttackReport> {
    for y in [y_usr, y_bright, y_target] {
        check_sensor(&y.data, scene_dims, psf_dims)?;
    }
    let usr = y_usr.data.planes();
    let bright = y_bright.data.planes();
    let mut s_planes = Vec::with_capacity(usr.len());
    let mut p_planes = Vec::with_capacity(usr.len());
    let mut trace: Vec<TraceRow> = Vec::new();
    let mut amplitude = 0.0;
    for (u, b) in usr.into_iter().zip(bright) {
        let prob = AlsProblem {
            y_usr: u,
            y_bright: b,
            level: 1.0,
            source,
            scene_dims,
            psf_dims,
        };
        let init = als_init_refined(&prob, cfg.epsilon, als.init_rounds);
        let out = als_solve(&prob, init, als)?;
        if trace.is_empty() {
            trace = out.trace;
        } else {
            for (t, o) in trace.iter_mut().zip(out.trace) {
                t.objective += o.objective;
                t.backtracks += o.backtracks;
                t.step = t.step.max(o.step);
            }
        }
        amplitude += out.state.amplitude;
        s_planes.push(out.state.scaling);
        p_planes.push(out.state.psf);
    }
    let like = &y_target.data;
    let s_hat = Tensor::from_planes_like(&s_planes, like)?;
    let p_hat = Tensor::from_planes(&p_planes, like.ndim() == 3)?;
    let y_n = scaling_normalize(&y_target.data, &s_hat, cfg.epsilon)?;
    let decrypted = wiener_decrypt(&y_n, &p_hat, cfg, scene_dims)?;
    let mut r = AttackReport::new(AttackKind::Uikpa);
    r.metrics.insert(
        "final_objective".into(),
        trace.last().map(|t| t.objective).unwrap_or(f64::NAN),
    );
    r.metrics.insert("amplitude".into(), amplitude / s_planes.len() as f64);
    r.estimated_scaling = Some(s_hat);
    r.estimated_psf = Some(p_hat);
    r.decrypted = Some(decrypted);
    r.trace = trace;
    Ok(r)
}

/// True when every objective in the trace is no larger than its
/// predecessor.
pub fn trace_non_increasing(trace: &[TraceRow]) -> bool {
    trace.windows(2).all(|w| w[1].objective <= w[0].objective)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keygen::{draw_keyspec, make_key, make_key_with, BaselineKind, MaskCount, PsfDesign};
    use crate::noise::Rng;
    use crate::optics::{forward_double, NoiseModel, SceneKind, SceneSpec, synthesize_scene};
    use proptest::prelude::*;

    #[test]
    fn kind_parse() {
        assert_eq!("ukpa_avg".parse::<AttackKind>().unwrap(), AttackKind::UkpaAvg);
        assert_eq!("uikpa".parse::<AttackKind>().unwrap(), AttackKind::Uikpa);
        assert!(matches!("nope".parse::<AttackKind>(), Err(Error::UnknownKind(_))));
    }

    #[test]
    fn autocorr_of_delta_is_delta() {
        let d = Tensor::from_planes(&[Plane::impulse(16, 16, 3, 5)], false).unwrap();
        let a = autocorrelation(&d).unwrap();
        assert!((a.get(8, 8, 0) - 1.0).abs() < 1e-6);
        let off: f64 = a.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>() - 1.0;
        assert!(off < 1e-2);
        assert!(impulse_likeness(&a) < 1e-2);
    }

    #[test]
    fn impulse_likeness_of_constant() {
        let c = Tensor::filled(&[20, 20], 0.3).unwrap();
        assert!((impulse_likeness(&c) - (1.0 - 9.0 / 400.0)).abs() < 1e-9);
    }

    #[test]
    fn autocorr_shift_invariant_and_symmetric() {
        let mut rng = Rng::new(1);
        let p = Plane::from_fn(16, 16, |_, _| rng.uniform());
        let shifted = Plane::from_fn(16, 16, |r, c| p.get((r + 5) % 16, (c + 11) % 16));
        let a = autocorrelation(&Tensor::from_planes(&[p], false).unwrap()).unwrap();
        let b = autocorrelation(&Tensor::from_planes(&[shifted], false).unwrap()).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-6);
        }
        for r in 1..16 {
            for c in 1..16 {
                assert!((a.get(r, c, 0) - a.get(16 - r, 16 - c, 0)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn tau_grid_shape() {
        let y = Tensor::filled(&[4, 4], 2.0).unwrap();
        let g = default_tau_grid(&y);
        assert_eq!(g.len(), 64);
        assert!((g[0] - 2e-4).abs() < 1e-12 && (g[63] - 2.0).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn threshold_on_zero_measurement() {
        let y = Tensor::zeros(&[8, 8]).unwrap();
        let mut refp = Plane::zeros(8, 8);
        refp.set(2, 2, 1.0);
        let refp = Tensor::from_planes(&[refp], false).unwrap();
        let r = threshold_support_attack(&y, &[1e-3, 1e-2, 0.1], &refp).unwrap();
        assert!(r.curve.iter().all(|&(_, iou)| iou == 0.0));
    }

    #[test]
    fn threshold_recovers_binary_contour() {
        let spec = draw_keyspec(9, 32, (63, 63), 1).unwrap();
        let design = PsfDesign::Baseline(BaselineKind::PhlatcamContour);
        let key = make_key_with(&spec, design, MaskCount::Double).unwrap();
        let scene = SceneSpec::new((32, 32), 1, SceneKind::Impulse { row: 16, col: 16, amplitude: 1.0 });
        let x = synthesize_scene(&scene, &mut Rng::new(0)).unwrap();
        let y = forward_double(&x, &key, NoiseModel::NONE, &mut Rng::new(0)).unwrap();
        let reference = embed_support(&design.structural_support(&spec).unwrap(), (63, 63), (16, 16)).unwrap();
        let r = threshold_support_attack(&y.data, &default_tau_grid(&y.data), &reference).unwrap();
        assert!(r.best_iou >= 0.99, "{}", r.best_iou);
    }

    #[test]
    fn simplex_projection() {
        let v = Plane::from_vec(1, 4, vec![0.5, 0.6, -0.2, 0.1]).unwrap();
        let p = project_simplex(&v);
        assert!((p.sum() - 1.0).abs() < 1e-12);
        assert!(p.min() >= 0.0);
        // already feasible points are fixed
        let q = Plane::from_vec(1, 3, vec![0.2, 0.3, 0.5]).unwrap();
        let pq = project_simplex(&q);
        for (a, b) in pq.data().iter().zip(q.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn simplex_projection_is_nearest(v in prop::collection::vec(-1f64..2.0, 6), w in prop::collection::vec(0f64..1.0, 6)) {
            let v = Plane::from_vec(1, 6, v).unwrap();
            let p = project_simplex(&v);
            let ws: f64 = w.iter().sum::<f64>().max(1e-9);
            let q = Plane::from_vec(1, 6, w.iter().map(|x| x / ws).collect()).unwrap();
            let d = |a: &Plane| a.zip_map(&v, |x, y| x - y).norm();
            prop_assert!(d(&p) <= d(&q) + 1e-9);
        }
    }

    fn ideal_problem(seed: u64) -> (AlsProblem, AlsState) {
        let spec = draw_keyspec(seed, 8, (23, 23), 1).unwrap();
        let key = make_key(&spec).unwrap();
        let s = key.scaling.channel(0);
        let p = key.psf.channel(0);
        let mut prob = AlsProblem {
            y_usr: Plane::zeros(23, 23),
            y_bright: Plane::zeros(23, 23),
            level: 1.0,
            source: (8, 8),
            scene_dims: (16, 16),
            psf_dims: (8, 8),
        };
        prob.y_usr = prob.z_usr(&p).zip_map(&s, |z, s| z * s);
        prob.y_bright = prob.z_point(&p).zip_map(&s, |z, s| z * s);
        (prob, AlsState { scaling: s, psf: p, amplitude: 1.0 })
    }

    #[test]
    fn als_fixed_point_at_truth() {
        let (prob, truth) = ideal_problem(4);
        assert!(prob.objective(&truth) < 1e-20);
        let cfg = AlsConfig { outer_iters: 5, ..Default::default() };
        let out = als_solve(&prob, truth.clone(), &cfg).unwrap();
        assert!(out.trace.last().unwrap().objective < 1e-12);
        let diff = out.state.psf.zip_map(&truth.psf, |a, b| a - b).norm() / truth.psf.norm();
        assert!(diff < 1e-6, "{diff}");
    }

    #[test]
    fn scaling_step_is_pixelwise_least_squares() {
        let (prob, truth) = ideal_problem(5);
        let psf = truth.psf.map(|v| v * 0.9 + 0.1 / 64.0);
        let s = prob.scaling_step(&psf, 1.3, 0.0);
        let z1 = prob.z_usr(&psf);
        let z2 = prob.z_point(&psf).scale(1.3);
        for i in (0..s.len()).step_by(7) {
            let (a, b) = (z1.data()[i], z2.data()[i]);
            let (y1, y2) = (prob.y_usr.data()[i], prob.y_bright.data()[i]);
            let f = |x: f64| (y1 - x * a).powi(2) + (y2 - x * b).powi(2);
            let best = (0..=20000)
                .map(|k| SCALING_FLOOR + k as f64 * (1.0 - SCALING_FLOOR) / 20000.0)
                .min_by(|x, y| f(*x).total_cmp(&f(*y)))
                .unwrap();
            assert!(f(s.data()[i]) <= f(best) + 1e-12);
        }
    }

    #[test]
    fn als_objective_monotone_from_warm_start() {
        let (prob, _) = ideal_problem(6);
        let init = als_init(&prob, 1e-3);
        let out = als_solve(&prob, init, &AlsConfig { outer_iters: 20, ..Default::default() }).unwrap();
        assert!(trace_non_increasing(&out.trace));
        assert!(out.trace.last().unwrap().objective < out.trace[0].objective);
    }

    #[test]
    fn ukpa_average_empty_and_identical() {
        let y = Measurement {
            data: Tensor::new(vec![5, 5], (0..25).map(|i| 0.2 + i as f32 / 40.0).collect()).unwrap(),
            meta: Default::default(),
        };
        let psf = Tensor::filled(&[2, 2], 0.25).unwrap();
        let cfg = WienerConfig::default();
        assert!(matches!(ukpa_average(&[], &y, &psf, &cfg, (4, 4)), Err(Error::EmptySet)));
        let r = ukpa_average(&[y.clone(), y.clone()], &y, &psf, &cfg, (4, 4)).unwrap();
        assert!(r.estimated_scaling.unwrap().bit_eq(&y.data));
    }
}
