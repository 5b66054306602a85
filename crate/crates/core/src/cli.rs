//! `opencam` command-line front end.
//!
//! Exit codes: 0 ok, 1 other failure, 2 invalid arguments or unknown kind,
//! 3 degenerate key, 4 dimension mismatch, 5 attack failure. Failures print
//! one JSON object `{"error", "message", "exit_code"}` on stderr.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{CommandFactory, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use crate::attacks::{
    autocorrelation, default_tau_grid, embed_support, ikpa, impulse_likeness, threshold_support_attack, ukpa_average,
    ukpa_usr, uikpa, AlsConfig, AttackKind, AttackReport,
};
use crate::decrypt::{keyed_decrypt, WienerConfig, DEFAULT_EPSILON, DEFAULT_GAMMA};
use crate::error::{Error, Result};
use crate::experiment::{run_all, write_montage, ExperimentConfig};
use crate::keygen::{draw_keyspec, make_key_with, BaselineKind, Key, KeySpec, MaskCount, PsfDesign};
use crate::metrics::{psnr, ssim, SSIM_WINDOW};
use crate::noise::{derive_seed, Rng};
use crate::optics::{
    add_bright_source, forward_double, synthesize_scene, synthetic_scene, uniform_scene_response, Measurement,
    NoiseModel, SceneKind, SceneSpec,
};
use crate::tensor::{load_png_as_scene, read_tensor, save_png_visualization, write_tensor, Tensor};

/// Attempts made by `keygen` before giving up on a degenerate key.
pub const KEYGEN_ATTEMPTS: u64 = 8;

const STREAM_TARGET: u64 = 1;
const STREAM_BRIGHT: u64 = 2;
const STREAM_USR: u64 = 3;
const STREAM_SCENE: u64 = 4;
const STREAM_SET: u64 = 0x1000;

#[derive(Debug, Parser)]
#[command(name = "opencam", version, about = "Double-mask lensless encryption camera: keys, capture, decryption and attacks")]
pub struct Cli {
    /// Master seed; all randomness derives from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output path (a directory or a file depending on the subcommand).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Suppress the JSON summary on stdout.
    #[arg(long, global = true)]
    pub quiet: bool,
    /// JSON file of defaults. Keys are flag names with `_` for `-`; explicit
    /// flags win. For `study` this is an experiment config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a key and write psf.ocam, scaling.ocam, key.json and previews.
    Keygen(KeygenArgs),
    /// Simulate a capture of a scene through a key.
    Encrypt(EncryptArgs),
    /// Decrypt a measurement with its key.
    Decrypt(DecryptArgs),
    /// Run one attack and write its report.
    Attack(AttackArgs),
    /// Run a keyed study plus the configured attack studies.
    Study(StudyArgs),
    /// Print header or key information as JSON.
    Inspect(InspectArgs),
}

#[derive(Debug, clap::Args)]
pub struct KeygenArgs {
    /// PSF side length in pixels [default: 128].
    #[arg(long)]
    pub psf_side: Option<usize>,
    /// Scene size as HxW [default: 128x128].
    #[arg(long)]
    pub scene_dims: Option<String>,
    /// 1 or 3 [default: 1].
    #[arg(long)]
    pub channels: Option<usize>,
    /// Baseline PSF instead of the contour design:
    /// multi_pinhole, phlatcam_contour, white_blend, uniform_random, gaussian.
    #[arg(long)]
    pub baseline: Option<String>,
    /// Omit the scaling mask (S = 1).
    #[arg(long)]
    pub single_mask: bool,
}

#[derive(Debug, clap::Args)]
pub struct EncryptArgs {
    /// Key directory.
    #[arg(long)]
    pub key: Option<PathBuf>,
    /// Scene PNG or .ocam tensor at the key's scene size.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Gaussian read-noise standard deviation [default: 0].
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Add a bright point source: amplitude r * max(scene) at (row, col).
    #[arg(long, value_name = "R@ROW,COL")]
    pub bright: Option<String>,
}

#[derive(Debug, clap::Args)]
pub struct DecryptArgs {
    /// Key directory.
    #[arg(long)]
    pub key: Option<PathBuf>,
    /// Measurement tensor (.ocam).
    #[arg(long)]
    pub measurement: Option<PathBuf>,
    /// Tikhonov weight [default: 3e-4].
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Scaling-normalization offset [default: 1e-3].
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Ground-truth scene; adds PSNR and SSIM to the metrics file.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct AttackArgs {
    /// autocorr, threshold, ikpa, ukpa-usr, ukpa-avg or uikpa.
    #[arg(long)]
    pub kind: Option<String>,
    /// Key used to simulate missing captures and to score estimates.
    #[arg(long)]
    pub key: Option<PathBuf>,
    /// Target scene; a seeded synthetic scene is used when absent.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Target measurement (simulated from --key when absent).
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Bright-source measurement for ikpa and uikpa.
    #[arg(long)]
    pub bright: Option<PathBuf>,
    /// Uniform-scene response for ukpa-usr and uikpa.
    #[arg(long)]
    pub usr: Option<PathBuf>,
    /// Measurements averaged by ukpa-avg (repeatable).
    #[arg(long = "set")]
    pub set: Vec<PathBuf>,
    /// Size of the simulated averaging set [default: 100].
    #[arg(long)]
    pub set_size: Option<usize>,
    /// PSF side, required when no key is given.
    #[arg(long)]
    pub psf_side: Option<usize>,
    /// Bright-source ratio for simulated captures [default: 1000].
    #[arg(long)]
    pub r: Option<f64>,
    /// Bright-source position as ROW,COL [default: scene centre].
    #[arg(long)]
    pub source: Option<String>,
    /// Read noise for simulated captures [default: 0].
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Tikhonov weight for decryption-based scores [default: 3e-4].
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Scaling-normalization offset [default: 1e-3].
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Outer ALS iterations for uikpa [default: 50].
    #[arg(long)]
    pub outer_iters: Option<usize>,
}

#[derive(Debug, clap::Args)]
pub struct StudyArgs {
    /// Attack kinds to run, comma separated; overrides the config.
    #[arg(long, value_delimiter = ',')]
    pub attacks: Vec<String>,
    /// Worker threads; overrides the config.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, clap::Args)]
pub struct InspectArgs {
    /// An .ocam tensor or a key directory.
    pub path: PathBuf,
}

/// Flat defaults read from `--config` by every subcommand except `study`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Defaults {
    seed: Option<u64>,
    out: Option<PathBuf>,
    psf_side: Option<usize>,
    scene_dims: Option<String>,
    channels: Option<usize>,
    baseline: Option<String>,
    single_mask: Option<bool>,
    key: Option<PathBuf>,
    scene: Option<PathBuf>,
    sigma: Option<f64>,
    bright: Option<String>,
    measurement: Option<PathBuf>,
    gamma: Option<f64>,
    epsilon: Option<f64>,
    truth: Option<PathBuf>,
    kind: Option<String>,
    r: Option<f64>,
    source: Option<String>,
    set_size: Option<usize>,
    outer_iters: Option<usize>,
}

/// Failure carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub kind: String,
    pub message: String,
}

impl CliError {
    fn usage(sub: &str, message: impl Into<String>) -> Self {
        let mut cmd = Cli::command();
        let usage = cmd
            .find_subcommand_mut(sub)
            .map(|c| c.render_usage().to_string())
            .unwrap_or_default();
        CliError {
            code: 2,
            kind: "InvalidArgs".into(),
            message: format!("{}\n{usage}", message.into()),
        }
    }

    fn from_error(e: Error, attack: bool) -> Self {
        let code = match &e {
            Error::UnknownKind(_) | Error::Config(_) | Error::InvalidSpec(_) => 2,
            Error::DegenerateKey(_) => 3,
            Error::DimMismatch(_) | Error::ChannelMismatch(..) | Error::InvalidDims(_) => 4,
            _ if attack => 5,
            _ => 1,
        };
        CliError {
            code,
            kind: e.kind().into(),
            message: e.to_string(),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({"error": self.kind, "message": self.message, "exit_code": self.code})
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

trait OrCli<T> {
    fn cli(self) -> CliResult<T>;
    fn cli_attack(self) -> CliResult<T>;
}

impl<T> OrCli<T> for Result<T> {
    fn cli(self) -> CliResult<T> {
        self.map_err(|e| CliError::from_error(e, false))
    }
    fn cli_attack(self) -> CliResult<T> {
        self.map_err(|e| CliError::from_error(e, true))
    }
}

/// Entry point for the binary.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

/// Parses `args` (including the program name), executes, and returns the
/// exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind::*;
            let code = match e.kind() {
                DisplayHelp | DisplayVersion | DisplayHelpOnMissingArgumentOrSubcommand => 0,
                _ => 2,
            };
            let _ = e.print();
            if code != 0 {
                let err = json!({"error": "InvalidArgs", "message": e.kind().to_string(), "exit_code": 2});
                eprintln!("{err}");
            }
            return code;
        }
    };
    let quiet = cli.quiet;
    match execute(cli) {
        Ok(v) => {
            if !quiet {
                println!("{}", serde_json::to_string_pretty(&v).unwrap_or_default());
            }
            0
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.code
        }
    }
}

fn load_defaults(path: Option<&Path>) -> CliResult<Defaults> {
    let Some(path) = path else {
        return Ok(Defaults::default());
    };
    let raw = std::fs::read(path).map_err(|e| CliError {
        code: 2,
        kind: "ConfigError".into(),
        message: format!("{}: {e}", path.display()),
    })?;
    serde_json::from_slice(&raw).map_err(|e| CliError {
        code: 2,
        kind: "ConfigError".into(),
        message: format!("{}: {e}", path.display()),
    })
}

/// Runs a parsed invocation and returns its JSON summary.
pub fn execute(cli: Cli) -> CliResult<serde_json::Value> {
    if let Command::Study(args) = &cli.command {
        return study(&cli, args);
    }
    let d = load_defaults(cli.config.as_deref())?;
    let seed = cli.seed.or(d.seed).unwrap_or(0);
    let out = cli.out.clone().or(d.out.clone());
    let sub = match &cli.command {
        Command::Keygen(_) => "keygen",
        Command::Encrypt(_) => "encrypt",
        Command::Decrypt(_) => "decrypt",
        Command::Attack(_) => "attack",
        Command::Study(_) => "study",
        Command::Inspect(_) => "inspect",
    };
    if let Command::Inspect(a) = &cli.command {
        return inspect(&a.path);
    }
    let out = out.ok_or_else(|| CliError::usage(sub, "missing required flag --out"))?;
    match &cli.command {
        Command::Keygen(a) => keygen(a, &d, seed, &out),
        Command::Encrypt(a) => encrypt(a, &d, seed, &out),
        Command::Decrypt(a) => decrypt(a, &d, &out),
        Command::Attack(a) => attack(a, &d, seed, &out),
        Command::Study(_) | Command::Inspect(_) => unreachable!("handled above"),
    }
}

fn parse_dims(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("expected HxW, got `{s}`"));
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    if h == 0 || w == 0 {
        return Err(bad());
    }
    Ok((h, w))
}

fn parse_position(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("expected ROW,COL, got `{s}`"));
    let (r, c) = s.split_once(',').ok_or_else(bad)?;
    Ok((r.trim().parse().map_err(|_| bad())?, c.trim().parse().map_err(|_| bad())?))
}

/// `r@row,col`.
pub fn parse_bright(s: &str) -> Result<(f64, (usize, usize))> {
    let (r, pos) = s
        .split_once('@')
        .ok_or_else(|| Error::Config(format!("expected R@ROW,COL, got `{s}`")))?;
    let r: f64 = r
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad bright ratio `{r}`")))?;
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::Config(format!("bright ratio must be >= 0, got {r}")));
    }
    Ok((r, parse_position(pos)?))
}

fn keygen(a: &KeygenArgs, d: &Defaults, seed: u64, out: &Path) -> CliResult<serde_json::Value> {
    let psf_side = a.psf_side.or(d.psf_side).unwrap_or(128);
    let scene = match a.scene_dims.as_ref().or(d.scene_dims.as_ref()) {
        Some(s) => parse_dims(s).cli()?,
        None => (128, 128),
    };
    let channels = a.channels.or(d.channels).unwrap_or(1);
    let design = match a.baseline.as_ref().or(d.baseline.as_ref()) {
        Some(b) => PsfDesign::Baseline(b.parse::<BaselineKind>().cli()?),
        None => PsfDesign::Opencam,
    };
    let masks = if a.single_mask || d.single_mask.unwrap_or(false) {
        MaskCount::Single
    } else {
        MaskCount::Double
    };
    let sensor = KeySpec::sensor_for_scene(scene, psf_side);
    let mut attempt_seed = seed;
    let mut key = None;
    for attempt in 0..KEYGEN_ATTEMPTS {
        if attempt > 0 {
            attempt_seed = derive_seed(seed, attempt);
        }
        let spec = draw_keyspec(attempt_seed, psf_side, sensor, channels).cli()?;
        let k = make_key_with(&spec, design, masks).cli()?;
        if !k.is_degenerate() {
            key = Some((k, attempt));
            break;
        }
    }
    let (key, attempt) = key.ok_or_else(|| {
        CliError::from_error(
            Error::DegenerateKey(format!("{KEYGEN_ATTEMPTS} attempts from seed {seed} were all degenerate")),
            false,
        )
    })?;
    key.save(out).cli()?;
    save_png_visualization(&key.psf, out.join("psf.png"), true).cli()?;
    save_png_visualization(&key.scaling, out.join("scaling.png"), false).cli()?;
    Ok(json!({
        "key_id": key.id(),
        "seed": key.spec.seed,
        "regenerations": attempt,
        "design": key.design.name(),
        "spectrum_floor": key.spectrum_floor(),
        "out": out,
    }))
}

fn load_key(path: Option<&PathBuf>, sub: &str) -> CliResult<Key> {
    let p = path.ok_or_else(|| CliError::usage(sub, "missing required flag --key"))?;
    Key::load(p).cli()
}

fn scene_tensor_dims(key: &Key) -> Vec<usize> {
    let (h, w) = key.scene_dims();
    if key.spec.channels == 3 {
        vec![h, w, 3]
    } else {
        vec![h, w]
    }
}

/// Reads a scene from PNG or `.ocam` and checks it against the key.
fn load_scene(path: &Path, key: &Key) -> Result<Tensor> {
    let t = if path.extension().is_some_and(|e| e == "ocam") {
        read_tensor(path)?
    } else {
        load_png_as_scene(path, key.spec.channels)?
    };
    let want = scene_tensor_dims(key);
    if t.dims() != want.as_slice() {
        return Err(Error::DimMismatch(format!(
            "scene {:?} does not fit key scene size {want:?}",
            t.dims()
        )));
    }
    Ok(t)
}

fn scene_id(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn encrypt(a: &EncryptArgs, d: &Defaults, seed: u64, out: &Path) -> CliResult<serde_json::Value> {
    let key = load_key(a.key.as_ref().or(d.key.as_ref()), "encrypt")?;
    let scene_path = a
        .scene
        .as_ref()
        .or(d.scene.as_ref())
        .ok_or_else(|| CliError::usage("encrypt", "missing required flag --scene"))?;
    let mut x = load_scene(scene_path, &key).cli()?;
    let sigma = a.sigma.or(d.sigma).unwrap_or(0.0);
    let noise = NoiseModel::new(sigma).cli()?;
    let mut id = scene_id(scene_path);
    if let Some(b) = a.bright.as_ref().or(d.bright.as_ref()) {
        let (r, (row, col)) = parse_bright(b).cli()?;
        if row >= x.height() || col >= x.width() {
            return Err(CliError::from_error(
                Error::DimMismatch(format!("bright source ({row},{col}) outside scene {:?}", x.spatial())),
                false,
            ));
        }
        x = add_bright_source(&x, row, col, r).cli()?;
        id = format!("{id}+bright{r}@{row},{col}");
    }
    let mut rng = Rng::child(seed, STREAM_TARGET);
    let mut y = forward_double(&x, &key, noise, &mut rng).cli()?.with_ids(key.id(), id);
    y.meta.seed = seed;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::from_error(Error::Io { path: parent.into(), source: e }, false))?;
    }
    y.save(out).cli()?;
    Ok(json!({"key_id": key.id(), "scene_id": y.meta.scene_id, "dims": y.data.dims(), "sigma": sigma, "out": out}))
}

fn decrypt(a: &DecryptArgs, d: &Defaults, out: &Path) -> CliResult<serde_json::Value> {
    let key = load_key(a.key.as_ref().or(d.key.as_ref()), "decrypt")?;
    let mpath = a
        .measurement
        .as_ref()
        .or(d.measurement.as_ref())
        .ok_or_else(|| CliError::usage("decrypt", "missing required flag --measurement"))?;
    let y = Measurement::load(mpath).cli()?;
    let cfg = WienerConfig {
        gamma: a.gamma.or(d.gamma).unwrap_or(DEFAULT_GAMMA),
        epsilon: a.epsilon.or(d.epsilon).unwrap_or(DEFAULT_EPSILON),
    };
    cfg.validate().cli()?;
    let x_hat = keyed_decrypt(&y, &key, &cfg, key.scene_dims()).cli()?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::from_error(Error::Io { path: parent.into(), source: e }, false))?;
    }
    write_tensor(&x_hat, out).cli()?;
    save_png_visualization(&x_hat, out.with_extension("png"), false).cli()?;
    let mut metrics = json!({
        "key_id": key.id(),
        "measurement": mpath,
        "gamma": cfg.gamma,
        "epsilon": cfg.epsilon,
    });
    if let Some(t) = a.truth.as_ref().or(d.truth.as_ref()) {
        let truth = load_scene(t, &key).cli()?;
        metrics["psnr"] = json!(psnr(&x_hat, &truth).cli()?);
        if truth.height().min(truth.width()) >= SSIM_WINDOW {
            metrics["ssim"] = json!(ssim(&x_hat, &truth).cli()?);
        }
    }
    let mpath = out.with_extension("metrics.json");
    std::fs::write(&mpath, serde_json::to_string_pretty(&metrics).unwrap_or_default() + "\n")
        .map_err(|e| CliError::from_error(Error::Io { path: mpath.clone(), source: e }, false))?;
    Ok(metrics)
}

struct AttackInputs {
    key: Option<Key>,
    truth: Option<Tensor>,
    scene_dims: (usize, usize),
    psf_dims: (usize, usize),
    source: (usize, usize),
    seed: u64,
    noise: NoiseModel,
    r: f64,
}

impl AttackInputs {
    fn need_key(&self, what: &str) -> Result<&Key> {
        self.key
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{what} needs --key or a measurement file")))
    }

    fn truth(&self) -> Result<&Tensor> {
        self.truth.as_ref().ok_or_else(|| Error::Config("no scene available".into()))
    }

    fn capture(&self, x: &Tensor, stream: u64) -> Result<Measurement> {
        let key = self.need_key("simulation")?;
        let mut rng = Rng::child(self.seed, stream);
        forward_double(x, key, self.noise, &mut rng)
    }

    fn target(&self, file: Option<&PathBuf>) -> Result<Measurement> {
        match file {
            Some(p) => Measurement::load(p),
            None => self.capture(self.truth()?, STREAM_TARGET),
        }
    }

    fn bright(&self, file: Option<&PathBuf>) -> Result<Measurement> {
        match file {
            Some(p) => Measurement::load(p),
            None => {
                let xb = add_bright_source(self.truth()?, self.source.0, self.source.1, self.r)?;
                self.capture(&xb, STREAM_BRIGHT)
            }
        }
    }

    fn usr(&self, file: Option<&PathBuf>) -> Result<Measurement> {
        match file {
            Some(p) => Measurement::load(p),
            None => {
                let key = self.need_key("ukpa")?;
                let mut rng = Rng::child(self.seed, STREAM_USR);
                uniform_scene_response(key, 1.0, self.noise, &mut rng)
            }
        }
    }
}

fn attack(a: &AttackArgs, d: &Defaults, seed: u64, out: &Path) -> CliResult<serde_json::Value> {
    let kind_s = a
        .kind
        .as_ref()
        .or(d.kind.as_ref())
        .ok_or_else(|| CliError::usage("attack", "missing required flag --kind"))?;
    let kind: AttackKind = kind_s.parse().cli()?;
    let key = match a.key.as_ref().or(d.key.as_ref()) {
        Some(p) => Some(Key::load(p).cli()?),
        None => None,
    };
    let (scene_dims, psf_dims) = match (&key, a.psf_side.or(d.psf_side), &a.target) {
        (Some(k), _, _) => (k.scene_dims(), (k.spec.psf_side, k.spec.psf_side)),
        (None, Some(side), Some(t)) => {
            let y = Measurement::load(t).cli()?;
            let (h, w) = y.data.spatial();
            if h < side || w < side {
                return Err(CliError::from_error(
                    Error::DimMismatch(format!("measurement {h}x{w} smaller than PSF {side}")),
                    false,
                ));
            }
            ((h + 1 - side, w + 1 - side), (side, side))
        }
        _ => return Err(CliError::usage("attack", "give --key, or --target together with --psf-side")),
    };
    let source = match a.source.as_ref().or(d.source.as_ref()) {
        Some(s) => parse_position(s).cli()?,
        None => (scene_dims.0 / 2, scene_dims.1 / 2),
    };
    if source.0 >= scene_dims.0 || source.1 >= scene_dims.1 {
        return Err(CliError::from_error(
            Error::DimMismatch(format!("source {source:?} outside scene {scene_dims:?}")),
            false,
        ));
    }
    let truth = match (a.scene.as_ref().or(d.scene.as_ref()), &key) {
        (Some(p), Some(k)) => Some(load_scene(p, k).cli()?),
        (Some(p), None) => Some(read_tensor(p).cli()?),
        (None, Some(k)) => Some(synthetic_scene(scene_dims, k.spec.channels, derive_seed(seed, STREAM_SCENE)).cli()?),
        (None, None) => None,
    };
    let inputs = AttackInputs {
        key,
        truth,
        scene_dims,
        psf_dims,
        source,
        seed,
        noise: NoiseModel::new(a.sigma.or(d.sigma).unwrap_or(0.0)).cli()?,
        r: a.r.or(d.r).unwrap_or(1e3),
    };
    let wiener = WienerConfig {
        gamma: a.gamma.or(d.gamma).unwrap_or(DEFAULT_GAMMA),
        epsilon: a.epsilon.or(d.epsilon).unwrap_or(DEFAULT_EPSILON),
    };
    wiener.validate().cli()?;
    let mut als = AlsConfig::default();
    if let Some(n) = a.outer_iters.or(d.outer_iters) {
        als.outer_iters = n;
    }
    als.validate().cli()?;
    let set_size = a.set_size.or(d.set_size).unwrap_or(100);
    let report = run_attack(kind, a, &inputs, &wiener, &als, set_size, out).cli_attack()?;
    let mut v = json!({"kind": kind.name(), "out": out, "metrics": report.metrics});
    if !report.trace.is_empty() {
        v["trace_rows"] = json!(report.trace.len());
    }
    Ok(v)
}

fn run_attack(
    kind: AttackKind,
    a: &AttackArgs,
    inp: &AttackInputs,
    wiener: &WienerConfig,
    als: &AlsConfig,
    set_size: usize,
    out: &Path,
) -> Result<AttackReport> {
    let mut report = match kind {
        AttackKind::Autocorr => {
            let t = match (&inp.key, &a.target) {
                (_, Some(p)) => Measurement::load(p)?.data,
                (Some(k), None) => k.psf.clone(),
                (None, None) => return Err(Error::Config("autocorr needs --key or --target".into())),
            };
            let acorr = autocorrelation(&t)?;
            std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            write_tensor(&acorr, out.join("autocorrelation.ocam"))?;
            save_png_visualization(&acorr, out.join("autocorrelation.png"), true)?;
            let mut r = AttackReport::new(kind);
            r.metrics.insert("impulse_likeness".into(), impulse_likeness(&acorr));
            r
        }
        AttackKind::Threshold => {
            let key = inp.need_key("threshold reference support")?;
            let y = match &a.target {
                Some(p) => Measurement::load(p)?,
                None => {
                    let spec = SceneSpec::new(
                        inp.scene_dims,
                        key.spec.channels,
                        SceneKind::Impulse {
                            row: inp.source.0,
                            col: inp.source.1,
                            amplitude: 1.0,
                        },
                    );
                    let x = synthesize_scene(&spec, &mut Rng::new(inp.seed))?;
                    inp.capture(&x, STREAM_TARGET)?
                }
            };
            let support = key.design.structural_support(&key.spec)?;
            let reference = embed_support(&support, key.spec.sensor_dims, inp.source)?;
            threshold_support_attack(&y.data, &default_tau_grid(&y.data), &reference)?.into_report()
        }
        AttackKind::Ikpa => {
            let y = inp.target(a.target.as_ref())?;
            let yb = inp.bright(a.bright.as_ref())?;
            ikpa(&yb, &y, wiener, inp.scene_dims, inp.psf_dims, inp.source)?
        }
        AttackKind::UkpaUsr => {
            let key = inp.need_key("ukpa-usr PSF")?;
            let y = inp.target(a.target.as_ref())?;
            let yu = inp.usr(a.usr.as_ref())?;
            ukpa_usr(&yu, &y, &key.psf, wiener, inp.scene_dims)?
        }
        AttackKind::UkpaAvg => {
            let key = inp.need_key("ukpa-avg PSF")?;
            let y = inp.target(a.target.as_ref())?;
            let set = if a.set.is_empty() {
                (0..set_size)
                    .map(|j| {
                        let x = synthetic_scene(inp.scene_dims, key.spec.channels, derive_seed(inp.seed, STREAM_SET + j as u64))?;
                        inp.capture(&x, STREAM_SET + j as u64)
                    })
                    .collect::<Result<Vec<_>>>()?
            } else {
                a.set.iter().map(Measurement::load).collect::<Result<Vec<_>>>()?
            };
            ukpa_average(&set, &y, &key.psf, wiener, inp.scene_dims)?
        }
        AttackKind::Uikpa => {
            let y = inp.target(a.target.as_ref())?;
            let yb = inp.bright(a.bright.as_ref())?;
            let yu = inp.usr(a.usr.as_ref())?;
            let mut r = uikpa(&yu, &yb, &y, als, wiener, inp.scene_dims, inp.psf_dims, inp.source)?;
            r.metrics.insert("r".into(), inp.r);
            r
        }
    };
    if let Some(t) = &inp.truth {
        if report.decrypted.is_some() && t.dims() == report.decrypted.as_ref().map(|d| d.dims()).unwrap_or_default() {
            report.score_scene(t)?;
        }
    }
    if let Some(k) = &inp.key {
        report.score_key(k)?;
    }
    report.save(out)?;
    if let (Some(k), Some(t), Some(dec)) = (&inp.key, &inp.truth, &report.decrypted) {
        if t.dims() == dec.dims() {
            let y = inp.target(a.target.as_ref())?;
            let keyed = keyed_decrypt(&y, k, wiener, inp.scene_dims)?;
            write_montage(&out.join("montage.png"), &[t, &keyed, dec])?;
        }
    }
    Ok(report)
}

fn study(cli: &Cli, a: &StudyArgs) -> CliResult<serde_json::Value> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_json_file(p).cli()?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.noise_seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    if !a.attacks.is_empty() {
        cfg.attacks = a
            .attacks
            .iter()
            .map(|s| s.parse::<AttackKind>())
            .collect::<Result<Vec<_>>>()
            .cli()?;
    }
    if let Some(w) = a.workers {
        cfg.workers = w;
    }
    cfg.validate().cli()?;
    std::fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| CliError::from_error(Error::io(&cfg.output_dir, e), false))?;
    let cfg_path = cfg.output_dir.join("config.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).unwrap_or_default() + "\n")
        .map_err(|e| CliError::from_error(Error::io(&cfg_path, e), false))?;
    let summaries = run_all(&cfg).cli_attack()?;
    let studies: Vec<_> = summaries
        .iter()
        .map(|s| json!({"study": s.study, "rows": s.rows.len(), "flags": s.flags}))
        .collect();
    Ok(json!({"output_dir": cfg.output_dir, "config_hash": cfg.hash(), "studies": studies}))
}

fn inspect(path: &Path) -> CliResult<serde_json::Value> {
    if path.is_dir() {
        let key = Key::load(path).cli()?;
        return Ok(json!({
            "type": "key",
            "key_id": key.id(),
            "key": crate::keygen::KeyFile::from_key(&key),
            "scene_dims": key.scene_dims(),
            "degenerate": key.is_degenerate(),
        }));
    }
    let t = read_tensor(path).cli()?;
    let mut v = json!({
        "type": "tensor",
        "dims": t.dims(),
        "min": t.min(),
        "max": t.max(),
        "mean": t.mean(),
    });
    let side = crate::tensor::sidecar_path(path);
    if let Ok(raw) = std::fs::read(&side) {
        if let Ok(meta) = serde_json::from_slice::<serde_json::Value>(&raw) {
            v["meta"] = meta;
        }
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_bright_and_dims() {
        assert_eq!(parse_bright("1000@64,64").unwrap(), (1000.0, (64, 64)));
        assert!(parse_bright("1000").is_err());
        assert!(parse_bright("-1@1,1").is_err());
        assert_eq!(parse_dims("32x48").unwrap(), (32, 48));
        assert!(parse_dims("0x4").is_err());
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(run_from(["opencam", "--help"]), 0);
        for sub in ["keygen", "encrypt", "decrypt", "attack", "study", "inspect"] {
            assert_eq!(run_from(["opencam", sub, "--help"]), 0, "{sub}");
        }
    }

    #[test]
    fn unknown_flag_and_missing_out_exit_two() {
        assert_eq!(run_from(["opencam", "keygen", "--bogus"]), 2);
        assert_eq!(run_from(["opencam", "--quiet", "keygen", "--psf-side", "8"]), 2);
    }

    #[test]
    fn unknown_attack_kind_exits_two() {
        let d = tempfile::tempdir().unwrap();
        let out = d.path().join("a");
        let code = run_from([
            "opencam".as_ref(),
            "--quiet".as_ref(),
            "attack".as_ref(),
            "--kind".as_ref(),
            "frobnicate".as_ref(),
            "--out".as_ref(),
            out.as_os_str(),
        ]);
        assert_eq!(code, 2);
    }

    #[test]
    fn config_defaults_and_override() {
        let d = tempfile::tempdir().unwrap();
        let cfg = d.path().join("c.json");
        std::fs::write(&cfg, r#"{"psf_side": 8, "scene_dims": "8x8", "seed": 5}"#).unwrap();
        let out = d.path().join("k");
        let args: Vec<OsString> = vec![
            "opencam".into(),
            "--quiet".into(),
            "--config".into(),
            cfg.clone().into(),
            "keygen".into(),
            "--psf-side".into(),
            "4".into(),
            "--out".into(),
            out.clone().into(),
        ];
        assert_eq!(run_from(args), 0);
        let key = Key::load(&out).unwrap();
        assert_eq!(key.spec.psf_side, 4);
        assert_eq!(key.scene_dims(), (8, 8));
        assert_eq!(key.spec.seed, 5);
        std::fs::write(&cfg, r#"{"nonsense": 1}"#).unwrap();
        let args: Vec<OsString> = vec![
            "opencam".into(),
            "--quiet".into(),
            "--config".into(),
            cfg.into(),
            "keygen".into(),
            "--out".into(),
            out.into(),
        ];
        assert_eq!(run_from(args), 2);
    }
}
