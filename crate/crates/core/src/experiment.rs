//! Seeded end-to-end studies: keyed decryption with a wrong-key control,
//! attack studies, and the privacy-utility summary.
//!
//! Every job draws its randomness from `derive_seed` streams of the config
//! seeds, so results do not depend on scheduling. Rows are assembled in
//! job order and written single-threaded.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::{
    autocorrelation, default_tau_grid, embed_support, ikpa, impulse_likeness, mean_measurement,
    threshold_support_attack, trace_non_increasing, ukpa_average, ukpa_usr, uikpa, AlsConfig,
    AttackKind, AttackReport,
};
use crate::decrypt::{keyed_decrypt, WienerConfig};
use crate::error::{Error, Result};
use crate::keygen::{draw_keyspec, make_key_with, Key, KeySpec, MaskCount, PsfDesign};
use crate::metrics::{psnr, ssim, SSIM_WINDOW};
use crate::noise::{derive_seed, Rng};
use crate::optics::{
    add_bright_source, forward_double, synthetic_scene, uniform_scene_response, Measurement, NoiseModel,
    SceneKind, SceneSpec, synthesize_scene,
};
use crate::plane::Plane;
use crate::tensor::{load_png_as_scene, write_png_u8, write_tensor, Tensor};

const STREAM_WRONG_KEY: u64 = 0x57;
const STREAM_TARGET_NOISE: u64 = 1;
const STREAM_BRIGHT_NOISE: u64 = 2;
const STREAM_USR_NOISE: u64 = 3;
const STREAM_AVERAGE_SET: u64 = 0x1000;

/// A camera: PSF design plus number of masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Camera {
    pub design: PsfDesign,
    pub masks: MaskCount,
}

impl Camera {
    pub const OPENCAM_DOUBLE: Camera = Camera {
        design: PsfDesign::Opencam,
        masks: MaskCount::Double,
    };
    pub const OPENCAM_SINGLE: Camera = Camera {
        design: PsfDesign::Opencam,
        masks: MaskCount::Single,
    };

    pub fn label(&self) -> String {
        let m = match self.masks {
            MaskCount::Single => "single",
            MaskCount::Double => "double",
        };
        format!("{}-{m}", self.design.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneSource {
    /// `count` procedural scenes seeded from `seed`.
    Builtin { count: usize, seed: u64 },
    /// Every `*.png` in the directory, sorted by file name.
    Directory { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub scene_dims: [usize; 2],
    pub psf_side: usize,
    pub channels: usize,
    pub key_seeds: Vec<u64>,
    pub scenes: SceneSource,
    pub sigma: f64,
    pub noise_seed: u64,
    pub wiener: WienerConfig,
    pub als: AlsConfig,
    pub attacks: Vec<AttackKind>,
    pub cameras: Vec<Camera>,
    pub r_grid: Vec<f64>,
    pub ikpa_r: f64,
    pub ukpa_average_n: usize,
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses the rayon default.
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "study".into(),
            scene_dims: [128, 128],
            psf_side: 128,
            channels: 1,
            key_seeds: (0..20).collect(),
            scenes: SceneSource::Builtin { count: 8, seed: 0 },
            sigma: 0.0,
            noise_seed: 0,
            wiener: WienerConfig::default(),
            als: AlsConfig::default(),
            attacks: Vec::new(),
            cameras: vec![Camera::OPENCAM_DOUBLE],
            r_grid: vec![1e2, 1e3, 1e4, 1e5],
            ikpa_r: 1e3,
            ukpa_average_n: 500,
            output_dir: PathBuf::from("out"),
            workers: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::Config(format!("config file {} not found", path.display()))
            } else {
                Error::io(path, e)
            }
        })?;
        serde_json::from_slice(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn scene_dims(&self) -> (usize, usize) {
        (self.scene_dims[0], self.scene_dims[1])
    }

    pub fn sensor_dims(&self) -> (usize, usize) {
        KeySpec::sensor_for_scene(self.scene_dims(), self.psf_side)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.scene_dims.contains(&0) || self.psf_side == 0 {
            return bad("scene_dims and psf_side must be positive".into());
        }
        if self.channels != 1 && self.channels != 3 {
            return bad(format!("channels must be 1 or 3, got {}", self.channels));
        }
        if self.key_seeds.is_empty() {
            return bad("key_seeds is empty".into());
        }
        if self.cameras.is_empty() {
            return bad("cameras is empty".into());
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be >= 0, got {}", self.sigma));
        }
        if self.r_grid.windows(2).any(|w| w[1] <= w[0]) || self.r_grid.iter().any(|r| !(*r > 0.0)) {
            return bad("r_grid must be positive and strictly increasing".into());
        }
        match &self.scenes {
            SceneSource::Builtin { count, .. } if *count == 0 => return bad("scene count is 0".into()),
            SceneSource::Directory { path } if !path.is_dir() => {
                return bad(format!("scene directory {} does not exist", path.display()))
            }
            _ => {}
        }
        self.wiener.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.als.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, excluding `output_dir` and
    /// `workers` which do not affect results.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.workers = 0;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    fn noise(&self) -> NoiseModel {
        NoiseModel { sigma: self.sigma }
    }
}

/// One metric row. Optional fields are empty in the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub study: String,
    pub camera: String,
    pub key_id: String,
    pub scene_id: String,
    pub case: String,
    pub r: Option<f64>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub reference_psnr: Option<f64>,
    pub score: Option<f64>,
    /// Directory of the row's tensors, relative to the output directory.
    pub artifact: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        Some(Aggregate {
            mean,
            std: var.sqrt(),
            n,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub code_version: String,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub study: String,
    pub rows: Vec<Row>,
    pub aggregates: BTreeMap<String, Aggregate>,
    pub flags: BTreeMap<String, bool>,
    pub provenance: Provenance,
}

impl RunSummary {
    fn new(study: &str, cfg: &ExperimentConfig, rows: Vec<Row>) -> Self {
        let mut groups: BTreeMap<String, Vec<(Option<f64>, Option<f64>, Option<f64>)>> = BTreeMap::new();
        for r in &rows {
            let mut k = format!("{}/{}", r.camera, r.case);
            if let Some(rv) = r.r {
                k.push_str(&format!("/r={rv:e}"));
            }
            groups.entry(k).or_default().push((r.psnr, r.ssim, r.score));
        }
        let mut aggregates = BTreeMap::new();
        for (k, v) in groups {
            let cols: [(&str, Vec<f64>); 3] = [
                ("psnr", v.iter().filter_map(|t| t.0).collect()),
                ("ssim", v.iter().filter_map(|t| t.1).collect()),
                ("score", v.iter().filter_map(|t| t.2).collect()),
            ];
            for (name, vals) in cols {
                if let Some(a) = Aggregate::of(&vals) {
                    aggregates.insert(format!("{k}/{name}"), a);
                }
            }
        }
        RunSummary {
            study: study.into(),
            rows,
            aggregates,
            flags: BTreeMap::new(),
            provenance: Provenance {
                config_hash: cfg.hash(),
                code_version: env!("CARGO_PKG_VERSION").into(),
                timestamp: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
            },
        }
    }

    pub fn mean(&self, camera: &str, case: &str, column: &str) -> Option<f64> {
        self.aggregates
            .get(&format!("{camera}/{case}/{column}"))
            .map(|a| a.mean)
    }

    /// Writes `rows.csv` (deterministic) and `summary.json` (with timestamp)
    /// under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("rows.csv");
        let mut w = csv::Writer::from_path(&path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        let path = dir.join("summary.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(&path, e))
    }
}

/// Loaded scene set shared by all jobs.
pub struct Scenes {
    pub items: Vec<(String, Tensor)>,
}

pub fn load_scenes(cfg: &ExperimentConfig) -> Result<Scenes> {
    let dims = cfg.scene_dims();
    let items = match &cfg.scenes {
        SceneSource::Builtin { count, seed } => (0..*count)
            .map(|i| {
                let t = synthetic_scene(dims, cfg.channels, derive_seed(*seed, i as u64))?;
                Ok((format!("synthetic-{i:03}"), t))
            })
            .collect::<Result<Vec<_>>>()?,
        SceneSource::Directory { path } => {
            let mut files: Vec<PathBuf> = std::fs::read_dir(path)
                .map_err(|e| Error::io(path, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(Error::Config(format!("no PNG files in {}", path.display())));
            }
            files
                .iter()
                .map(|f| {
                    let t = load_png_as_scene(f, cfg.channels)?.resize(dims.0, dims.1)?;
                    let id = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                    Ok((id, t))
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    Ok(Scenes { items })
}

fn camera_key(cfg: &ExperimentConfig, camera: Camera, seed: u64) -> Result<Key> {
    let spec = draw_keyspec(seed, cfg.psf_side, cfg.sensor_dims(), cfg.channels)?;
    make_key_with(&spec, camera.design, camera.masks)
}

type KeyCache = HashMap<(Camera, u64), Key>;

fn build_keys(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<KeyCache> {
    let pairs: Vec<(Camera, u64)> = cfg
        .cameras
        .iter()
        .flat_map(|c| seeds.iter().map(move |s| (*c, *s)))
        .collect();
    let keys = pairs
        .par_iter()
        .map(|(c, s)| camera_key(cfg, *c, *s))
        .collect::<Result<Vec<_>>>()?;
    Ok(pairs.into_iter().zip(keys).collect())
}

fn with_pool<T: Send>(cfg: &ExperimentConfig, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if cfg.workers > 0 {
        b = b.num_threads(cfg.workers);
    }
    let pool = b.build().map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}

fn job_rng(cfg: &ExperimentConfig, key_seed: u64, scene: usize, stream: u64) -> Rng {
    Rng::child(derive_seed(derive_seed(cfg.noise_seed, key_seed), scene as u64), stream)
}

fn save(dir: &Path, name: &str, t: &Tensor) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_tensor(t, dir.join(format!("{name}.ocam")))
}

/// Side-by-side PNG of equally sized scenes, clamped to `[0, 1]`.
pub fn write_montage(path: &Path, panels: &[&Tensor]) -> Result<()> {
    let first = panels.first().ok_or(Error::EmptySet)?;
    let (h, w) = first.spatial();
    let c = first.channels();
    let gap = 2;
    let total_w = panels.len() * w + (panels.len() - 1) * gap;
    let mut pix = vec![255u8; h * total_w * c];
    for (i, t) in panels.iter().enumerate() {
        if t.spatial() != (h, w) || t.channels() != c {
            return Err(Error::DimMismatch("montage panels differ in size".into()));
        }
        for r in 0..h {
            for col in 0..w {
                for ch in 0..c {
                    let v = (t.get(r, col, ch).clamp(0.0, 1.0) * 255.0).round() as u8;
                    pix[(r * total_w + i * (w + gap) + col) * c + ch] = v;
                }
            }
        }
    }
    let color = if c == 3 { png::ColorType::Rgb } else { png::ColorType::Grayscale };
    write_png_u8(path, total_w, h, color, &pix)
}

fn quality(est: &Tensor, truth: &Tensor) -> Result<(f64, Option<f64>)> {
    let p = psnr(est, truth)?;
    let s = if truth.height().min(truth.width()) >= SSIM_WINDOW {
        Some(ssim(est, truth)?)
    } else {
        None
    };
    Ok((p, s))
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    scenes: &'a Scenes,
    keys: &'a KeyCache,
    root: PathBuf,
}

impl Ctx<'_> {
    fn artifact(&self, study: &str, camera: Camera, key: &Key, scene: Option<&str>, extra: Option<String>) -> (PathBuf, String) {
        let mut rel = PathBuf::from(study).join(camera.label()).join(key.id());
        if let Some(s) = scene {
            rel.push(s);
        }
        if let Some(e) = extra {
            rel.push(e);
        }
        let s = rel.to_string_lossy().replace('\\', "/");
        (self.root.join(&rel), s)
    }

    fn capture(&self, key: &Key, x: &Tensor, key_seed: u64, scene: usize, stream: u64) -> Result<Measurement> {
        let mut rng = job_rng(self.cfg, key_seed, scene, stream);
        forward_double(x, key, self.cfg.noise(), &mut rng)
    }
}

/// Correct-key and wrong-key decryption for every (camera, key, scene).
pub fn run_keyed_study(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let scenes = load_scenes(cfg)?;
    with_pool(cfg, || -> Result<RunSummary> {
        let wrong_seeds: Vec<u64> = cfg.key_seeds.iter().map(|s| derive_seed(*s, STREAM_WRONG_KEY)).collect();
        let all: Vec<u64> = cfg.key_seeds.iter().chain(&wrong_seeds).copied().collect();
        let keys = build_keys(cfg, &all)?;
        let ctx = Ctx {
            cfg,
            scenes: &scenes,
            keys: &keys,
            root: cfg.output_dir.clone(),
        };
        let jobs = job_list(cfg, scenes.items.len());
        let rows = jobs
            .par_iter()
            .map(|&(camera, ki, si)| keyed_job(&ctx, camera, cfg.key_seeds[ki], si))
            .collect::<Result<Vec<_>>>()?;
        let summary = RunSummary::new("keyed", cfg, rows.into_iter().flatten().collect());
        summary.write(cfg.output_dir.join("keyed"))?;
        Ok(summary)
    })?
}

fn job_list(cfg: &ExperimentConfig, n_scenes: usize) -> Vec<(Camera, usize, usize)> {
    let mut jobs = Vec::new();
    for &c in &cfg.cameras {
        for ki in 0..cfg.key_seeds.len() {
            for si in 0..n_scenes {
                jobs.push((c, ki, si));
            }
        }
    }
    jobs
}

fn keyed_job(ctx: &Ctx, camera: Camera, seed: u64, si: usize) -> Result<Vec<Row>> {
    let key = &ctx.keys[&(camera, seed)];
    let wrong = &ctx.keys[&(camera, derive_seed(seed, STREAM_WRONG_KEY))];
    let (scene_id, x) = &ctx.scenes.items[si];
    let dims = ctx.cfg.scene_dims();
    let y = ctx.capture(key, x, seed, si, STREAM_TARGET_NOISE)?.with_ids(key.id(), scene_id);
    let good = keyed_decrypt(&y, key, &ctx.cfg.wiener, dims)?;
    let bad = keyed_decrypt(&y, wrong, &ctx.cfg.wiener, dims)?;
    let (dir, rel) = ctx.artifact("keyed", camera, key, Some(scene_id), None);
    y.save(dir_file(&dir, "measurement.ocam")?)?;
    save(&dir, "correct_key", &good)?;
    save(&dir, "wrong_key", &bad)?;
    write_montage(&dir.join("montage.png"), &[x, &good, &bad])?;
    let mut rows = Vec::new();
    for (case, est) in [("correct_key", &good), ("wrong_key", &bad)] {
        let (p, s) = quality(est, x)?;
        rows.push(Row {
            study: "keyed".into(),
            camera: camera.label(),
            key_id: key.id(),
            scene_id: scene_id.clone(),
            case: case.into(),
            r: None,
            psnr: Some(p),
            ssim: s,
            reference_psnr: None,
            score: None,
            artifact: rel.clone(),
        });
    }
    Ok(rows)
}

fn dir_file(dir: &Path, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(dir.join(name))
}

/// Runs one attack over every (camera, key[, scene][, r]) case.
pub fn run_attack_study(cfg: &ExperimentConfig, kind: AttackKind) -> Result<RunSummary> {
    cfg.validate()?;
    let scenes = load_scenes(cfg)?;
    let study = kind.name();
    with_pool(cfg, || -> Result<RunSummary> {
        let keys = build_keys(cfg, &cfg.key_seeds)?;
        let ctx = Ctx {
            cfg,
            scenes: &scenes,
            keys: &keys,
            root: cfg.output_dir.clone(),
        };
        let per_key = matches!(kind, AttackKind::Autocorr | AttackKind::Threshold | AttackKind::UkpaAvg);
        let jobs: Vec<(Camera, usize, usize)> = if per_key {
            job_list(cfg, 1)
        } else {
            job_list(cfg, scenes.items.len())
        };
        let rows = jobs
            .par_iter()
            .map(|&(camera, ki, si)| attack_job(&ctx, kind, camera, cfg.key_seeds[ki], si))
            .collect::<Result<Vec<_>>>()?;
        let mut summary = RunSummary::new(study, cfg, rows.into_iter().flatten().collect());
        add_flags(&mut summary, kind, cfg);
        summary.write(cfg.output_dir.join(study))?;
        Ok(summary)
    })?
}

/// Runs every attack listed in the config; an empty list yields a single
/// empty `noop` summary.
pub fn run_attack_studies(cfg: &ExperimentConfig) -> Result<Vec<RunSummary>> {
    if cfg.attacks.is_empty() {
        cfg.validate()?;
        return Ok(vec![RunSummary::new("noop", cfg, Vec::new())]);
    }
    cfg.attacks.iter().map(|k| run_attack_study(cfg, *k)).collect()
}

fn attack_row(kind: AttackKind, camera: Camera, key: &Key, scene_id: &str, rel: String) -> Row {
    Row {
        study: kind.name().into(),
        camera: camera.label(),
        key_id: key.id(),
        scene_id: scene_id.into(),
        case: "attack".into(),
        r: None,
        psnr: None,
        ssim: None,
        reference_psnr: None,
        score: None,
        artifact: rel,
    }
}

fn finish_report(
    ctx: &Ctx,
    report: &mut AttackReport,
    dir: &Path,
    x: &Tensor,
    keyed: &Tensor,
    key: &Key,
    row: &mut Row,
) -> Result<()> {
    report.score_scene(x)?;
    report.score_key(key)?;
    report.save(dir)?;
    if let Some(d) = &report.decrypted {
        write_montage(&dir.join("montage.png"), &[x, keyed, d])?;
        let (p, s) = quality(d, x)?;
        row.psnr = Some(p);
        row.ssim = s;
    }
    row.reference_psnr = Some(psnr(keyed, x)?);
    let _ = ctx;
    Ok(())
}

fn attack_job(ctx: &Ctx, kind: AttackKind, camera: Camera, seed: u64, si: usize) -> Result<Vec<Row>> {
    let cfg = ctx.cfg;
    let key = &ctx.keys[&(camera, seed)];
    let dims = cfg.scene_dims();
    let psf_dims = (cfg.psf_side, cfg.psf_side);
    let center = (dims.0 / 2, dims.1 / 2);
    match kind {
        AttackKind::Autocorr => {
            let (dir, rel) = ctx.artifact(kind.name(), camera, key, None, None);
            let a = autocorrelation(&key.psf)?;
            let mut report = AttackReport::new(kind);
            let score = impulse_likeness(&a);
            report.metrics.insert("impulse_likeness".into(), score);
            report.save(&dir)?;
            save(&dir, "autocorrelation", &a)?;
            let mut row = attack_row(kind, camera, key, "", rel);
            row.score = Some(score);
            Ok(vec![row])
        }
        AttackKind::Threshold => {
            let (dir, rel) = ctx.artifact(kind.name(), camera, key, None, None);
            let spec = SceneSpec::new(
                dims,
                cfg.channels,
                SceneKind::Impulse {
                    row: center.0,
                    col: center.1,
                    amplitude: 1.0,
                },
            );
            let x = synthesize_scene(&spec, &mut Rng::new(0))?;
            let y = ctx.capture(key, &x, seed, 0, STREAM_BRIGHT_NOISE)?;
            let reference = embed_support(&camera.design.structural_support(&key.spec)?, cfg.sensor_dims(), center)?;
            let result = threshold_support_attack(&y.data, &default_tau_grid(&y.data), &reference)?;
            let score = result.best_iou;
            result.into_report().save(&dir)?;
            let mut row = attack_row(kind, camera, key, "impulse", rel);
            row.score = Some(score);
            Ok(vec![row])
        }
        AttackKind::Ikpa => {
            let (scene_id, x) = &ctx.scenes.items[si];
            let (dir, rel) = ctx.artifact(kind.name(), camera, key, Some(scene_id), None);
            let y = ctx.capture(key, x, seed, si, STREAM_TARGET_NOISE)?;
            let xb = add_bright_source(x, center.0, center.1, cfg.ikpa_r)?;
            let yb = ctx.capture(key, &xb, seed, si, STREAM_BRIGHT_NOISE)?;
            let keyed = keyed_decrypt(&y, key, &cfg.wiener, dims)?;
            let mut report = ikpa(&yb, &y, &cfg.wiener, dims, psf_dims, center)?;
            let mut row = attack_row(kind, camera, key, scene_id, rel);
            row.r = Some(cfg.ikpa_r);
            finish_report(ctx, &mut report, &dir, x, &keyed, key, &mut row)?;
            row.score = report.metric("psf_error");
            Ok(vec![row])
        }
        AttackKind::UkpaUsr => {
            let (scene_id, x) = &ctx.scenes.items[si];
            let (dir, rel) = ctx.artifact(kind.name(), camera, key, Some(scene_id), None);
            let y = ctx.capture(key, x, seed, si, STREAM_TARGET_NOISE)?;
            let mut rng = job_rng(cfg, seed, si, STREAM_USR_NOISE);
            let yu = uniform_scene_response(key, 1.0, cfg.noise(), &mut rng)?;
            let keyed = keyed_decrypt(&y, key, &cfg.wiener, dims)?;
            let mut report = ukpa_usr(&yu, &y, &key.psf, &cfg.wiener, dims)?;
            let mut row = attack_row(kind, camera, key, scene_id, rel);
            finish_report(ctx, &mut report, &dir, x, &keyed, key, &mut row)?;
            row.score = report.metric("scaling_error");
            Ok(vec![row])
        }
        AttackKind::UkpaAvg => {
            let set = averaging_set(cfg, key, seed)?;
            let mut rows = Vec::new();
            for (si, (scene_id, x)) in ctx.scenes.items.iter().enumerate() {
                let (dir, rel) = ctx.artifact(kind.name(), camera, key, Some(scene_id), None);
                let y = ctx.capture(key, x, seed, si, STREAM_TARGET_NOISE)?;
                let keyed = keyed_decrypt(&y, key, &cfg.wiener, dims)?;
                let mut report = ukpa_average(&set, &y, &key.psf, &cfg.wiener, dims)?;
                let mut row = attack_row(kind, camera, key, scene_id, rel);
                finish_report(ctx, &mut report, &dir, x, &keyed, key, &mut row)?;
                row.score = report.metric("scaling_error");
                rows.push(row);
            }
            Ok(rows)
        }
        AttackKind::Uikpa => {
            let (scene_id, x) = &ctx.scenes.items[si];
            let y = ctx.capture(key, x, seed, si, STREAM_TARGET_NOISE)?;
            let mut rng = job_rng(cfg, seed, si, STREAM_USR_NOISE);
            let yu = uniform_scene_response(key, 1.0, cfg.noise(), &mut rng)?;
            let keyed = keyed_decrypt(&y, key, &cfg.wiener, dims)?;
            let mut rows = Vec::new();
            for &r in &cfg.r_grid {
                let (dir, rel) = ctx.artifact(kind.name(), camera, key, Some(scene_id), Some(format!("r{r:e}")));
                let xb = add_bright_source(x, center.0, center.1, r)?;
                let yb = ctx.capture(key, &xb, seed, si, STREAM_BRIGHT_NOISE)?;
                let mut report = uikpa(&yu, &yb, &y, &cfg.als, &cfg.wiener, dims, psf_dims, center)?;
                let mut row = attack_row(kind, camera, key, scene_id, rel);
                row.r = Some(r);
                finish_report(ctx, &mut report, &dir, x, &keyed, key, &mut row)?;
                row.score = Some(if trace_non_increasing(&report.trace) { 1.0 } else { 0.0 });
                rows.push(row);
            }
            Ok(rows)
        }
    }
}

/// Captures of `ukpa_average_n` builtin scenes drawn for this key.
fn averaging_set(cfg: &ExperimentConfig, key: &Key, seed: u64) -> Result<Vec<Measurement>> {
    let dims = cfg.scene_dims();
    (0..cfg.ukpa_average_n)
        .map(|j| {
            let s = derive_seed(seed, STREAM_AVERAGE_SET + j as u64);
            let x = synthetic_scene(dims, cfg.channels, s)?;
            let mut rng = Rng::child(derive_seed(cfg.noise_seed, s), STREAM_TARGET_NOISE);
            forward_double(&x, key, cfg.noise(), &mut rng)
        })
        .collect()
}

/// Mean of the averaging set for one key (exposed for inspection).
pub fn averaged_scaling_estimate(cfg: &ExperimentConfig, key: &Key) -> Result<Tensor> {
    mean_measurement(&averaging_set(cfg, key, key.spec.seed)?)
}

fn add_flags(summary: &mut RunSummary, kind: AttackKind, cfg: &ExperimentConfig) {
    match kind {
        AttackKind::Ikpa => {
            for camera in &cfg.cameras {
                let label = camera.label();
                let gaps: Vec<f64> = summary
                    .rows
                    .iter()
                    .filter(|r| r.camera == label)
                    .filter_map(|r| Some(r.reference_psnr? - r.psnr?))
                    .collect();
                if let Some(a) = Aggregate::of(&gaps) {
                    summary.aggregates.insert(format!("{label}/attack/gap_db"), a);
                    summary.flags.insert(format!("{label}/break"), a.mean <= 1.0);
                }
            }
        }
        AttackKind::Uikpa => {
            let mono = summary.rows.iter().all(|r| r.score == Some(1.0));
            summary.flags.insert("objective_non_increasing".into(), mono);
            for camera in &cfg.cameras {
                let label = camera.label();
                let means: Vec<f64> = cfg
                    .r_grid
                    .iter()
                    .filter_map(|r| summary.mean(&label, &format!("attack/r={r:e}"), "psnr"))
                    .collect();
                let trend = means.len() == cfg.r_grid.len() && means.windows(2).all(|w| w[1] >= w[0]);
                summary.flags.insert(format!("{label}/psnr_trend_non_decreasing"), trend);
            }
        }
        _ => {}
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyUtilityRow {
    pub camera: String,
    pub attack: String,
    pub keyed_psnr: f64,
    pub keyed_ssim: Option<f64>,
    pub attack_psnr: f64,
    pub attack_ssim: Option<f64>,
}

fn mean_of(rows: &[&Row], f: impl Fn(&Row) -> Option<f64>) -> Option<f64> {
    Aggregate::of(&rows.iter().filter_map(|r| f(r)).collect::<Vec<_>>()).map(|a| a.mean)
}

/// One row per (camera, attack): keyed utility against attack privacy.
/// Attacks without decrypted scenes (autocorrelation, thresholding) are
/// skipped.
pub fn privacy_utility_table(summaries: &[RunSummary]) -> Result<Vec<PrivacyUtilityRow>> {
    let keyed: Vec<&Row> = summaries
        .iter()
        .filter(|s| s.study == "keyed")
        .flat_map(|s| &s.rows)
        .filter(|r| r.case == "correct_key")
        .collect();
    if keyed.is_empty() {
        return Err(Error::MissingStudy("keyed".into()));
    }
    let mut groups: BTreeMap<(String, String), Vec<&Row>> = BTreeMap::new();
    for s in summaries.iter().filter(|s| s.study != "keyed") {
        for r in s.rows.iter().filter(|r| r.psnr.is_some()) {
            groups.entry((r.camera.clone(), r.study.clone())).or_default().push(r);
        }
    }
    if groups.is_empty() {
        return Err(Error::MissingStudy("attack".into()));
    }
    let mut out = Vec::new();
    for ((camera, attack), rows) in groups {
        let k: Vec<&Row> = keyed.iter().copied().filter(|r| r.camera == camera).collect();
        if k.is_empty() {
            return Err(Error::MissingStudy(format!("keyed study for {camera}")));
        }
        out.push(PrivacyUtilityRow {
            keyed_psnr: mean_of(&k, |r| r.psnr).unwrap_or(f64::NAN),
            keyed_ssim: mean_of(&k, |r| r.ssim),
            attack_psnr: mean_of(&rows, |r| r.psnr).unwrap_or(f64::NAN),
            attack_ssim: mean_of(&rows, |r| r.ssim),
            camera,
            attack,
        });
    }
    Ok(out)
}

/// Writes `privacy_utility.csv` and a scatter plot
/// `privacy_utility.png` (x: attack PSNR, y: keyed PSNR).
pub fn write_privacy_utility(rows: &[PrivacyUtilityRow], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("privacy_utility.csv");
    let mut w = csv::Writer::from_path(&path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    write_png_u8(&dir.join("privacy_utility.png"), 256, 256, png::ColorType::Rgb, &scatter(rows))
}

fn scatter(rows: &[PrivacyUtilityRow]) -> Vec<u8> {
    const SIDE: usize = 256;
    const MARGIN: usize = 16;
    let mut img = Plane::filled(SIDE, SIDE, 1.0);
    for i in MARGIN..SIDE - MARGIN {
        img.set(SIDE - MARGIN, i, 0.0);
        img.set(i, MARGIN, 0.0);
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.attack_psnr).filter(|v| v.is_finite()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.keyed_psnr).filter(|v| v.is_finite()).collect();
    let range = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 1.0;
        (lo, hi)
    };
    let mut pix = vec![0u8; SIDE * SIDE * 3];
    for (i, v) in img.data().iter().enumerate() {
        let g = (v * 255.0) as u8;
        pix[3 * i..3 * i + 3].copy_from_slice(&[g, g, g]);
    }
    if xs.is_empty() || ys.is_empty() {
        return pix;
    }
    let (x0, x1) = range(&xs);
    let (y0, y1) = range(&ys);
    let span = (SIDE - 2 * MARGIN) as f64;
    const PALETTE: [[u8; 3]; 6] = [[214, 39, 40], [31, 119, 180], [44, 160, 44], [255, 127, 14], [148, 103, 189], [140, 86, 75]];
    for (k, r) in rows.iter().enumerate() {
        if !(r.attack_psnr.is_finite() && r.keyed_psnr.is_finite()) {
            continue;
        }
        let cx = MARGIN as f64 + (r.attack_psnr - x0) / (x1 - x0) * span;
        let cy = (SIDE - MARGIN) as f64 - (r.keyed_psnr - y0) / (y1 - y0) * span;
        for dy in -2i64..=2 {
            for dx in -2i64..=2 {
                let (px, py) = (cx as i64 + dx, cy as i64 + dy);
                if (0..SIDE as i64).contains(&px) && (0..SIDE as i64).contains(&py) {
                    let i = 3 * (py as usize * SIDE + px as usize);
                    pix[i..i + 3].copy_from_slice(&PALETTE[k % PALETTE.len()]);
                }
            }
        }
    }
    pix
}

/// Keyed study, every configured attack, and the privacy-utility table
/// when both kinds of study produced rows.
pub fn run_all(cfg: &ExperimentConfig) -> Result<Vec<RunSummary>> {
    let mut out = vec![run_keyed_study(cfg)?];
    out.extend(run_attack_studies(cfg)?.into_iter().filter(|s| s.study != "noop"));
    match privacy_utility_table(&out) {
        Ok(rows) => write_privacy_utility(&rows, &cfg.output_dir)?,
        Err(Error::MissingStudy(_)) => {}
        Err(e) => return Err(e),
    }
    Ok(out)
}
