use std::path::Path;
use std::process::{Command, Output};

use opencam::keygen::Key;
use opencam::optics::{synthetic_scene, Measurement};
use opencam::tensor::{read_tensor, save_png_visualization};

fn opencam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_opencam")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn keygen(dir: &Path, seed: &str, extra: &[&str]) -> Output {
    let mut args = vec!["--quiet", "--seed", seed, "keygen", "--psf-side", "32", "--scene-dims", "32x32", "--out", p(dir)];
    args.extend_from_slice(extra);
    opencam(&args)
}

fn scene_png(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("scene.png");
    save_png_visualization(&synthetic_scene((32, 32), 1, 8).unwrap(), &path, false).unwrap();
    path
}

#[test]
fn help_on_every_subcommand() {
    for sub in ["keygen", "encrypt", "decrypt", "attack", "study", "inspect"] {
        let o = opencam(&[sub, "--help"]);
        assert!(o.status.success(), "{sub}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("--out"), "{sub}");
    }
}

#[test]
fn keygen_is_reproducible_and_requires_out() {
    let d = tempfile::tempdir().unwrap();
    assert!(keygen(&d.path().join("a"), "9", &[]).status.success());
    assert!(keygen(&d.path().join("b"), "9", &[]).status.success());
    let a = std::fs::read(d.path().join("a/key.json")).unwrap();
    let b = std::fs::read(d.path().join("b/key.json")).unwrap();
    assert_eq!(a, b);
    for f in ["psf.ocam", "scaling.ocam", "psf.png", "scaling.png"] {
        assert!(d.path().join("a").join(f).exists(), "{f}");
    }
    let o = opencam(&["keygen", "--psf-side", "8"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn multi_pinhole_has_sixteen_nonzeros() {
    let d = tempfile::tempdir().unwrap();
    let o = keygen(d.path(), "1", &["--baseline", "multi_pinhole"]);
    assert!(o.status.success());
    let psf = read_tensor(d.path().join("psf.ocam")).unwrap();
    assert_eq!(psf.data().iter().filter(|&&v| v != 0.0).count(), 16);
}

#[test]
fn encrypt_decrypt_roundtrip() {
    let d = tempfile::tempdir().unwrap();
    let key = d.path().join("key");
    assert!(keygen(&key, "3", &[]).status.success());
    let scene = scene_png(d.path());
    let y1 = d.path().join("y1.ocam");
    let y2 = d.path().join("y2.ocam");
    for y in [&y1, &y2] {
        let o = opencam(&["--quiet", "encrypt", "--key", p(&key), "--scene", p(&scene), "--sigma", "0", "--out", p(y)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(std::fs::read(&y1).unwrap(), std::fs::read(&y2).unwrap());
    assert!(Path::new(&format!("{}.json", p(&y1))).exists());

    let x = d.path().join("x.ocam");
    let o = opencam(&[
        "--quiet", "decrypt", "--key", p(&key), "--measurement", p(&y1), "--truth", p(&scene),
        "--gamma", "1e-6", "--epsilon", "1e-6", "--out", p(&x),
    ]);
    assert!(o.status.success());
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(d.path().join("x.metrics.json")).unwrap()).unwrap();
    assert!(m["psnr"].as_f64().unwrap() >= 40.0, "{m}");
    assert!(d.path().join("x.png").exists());

    let xd = d.path().join("xd.ocam");
    assert!(opencam(&["--quiet", "decrypt", "--key", p(&key), "--measurement", p(&y1), "--out", p(&xd)]).status.success());
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(d.path().join("xd.metrics.json")).unwrap()).unwrap();
    assert_eq!(m["gamma"].as_f64(), Some(3e-4));

    let other = d.path().join("other");
    assert!(keygen(&other, "4", &[]).status.success());
    let xw = d.path().join("xw.ocam");
    let o = opencam(&["--quiet", "decrypt", "--key", p(&other), "--measurement", p(&y1), "--truth", p(&scene), "--out", p(&xw)]);
    assert!(o.status.success());
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(d.path().join("xw.metrics.json")).unwrap()).unwrap();
    assert!(m["psnr"].as_f64().unwrap() < 20.0);
}

#[test]
fn bright_source_adds_scaled_impulse() {
    let d = tempfile::tempdir().unwrap();
    let key_dir = d.path().join("key");
    assert!(keygen(&key_dir, "5", &[]).status.success());
    let scene = scene_png(d.path());
    let plain = d.path().join("plain.ocam");
    let bright = d.path().join("bright.ocam");
    assert!(opencam(&["--quiet", "encrypt", "--key", p(&key_dir), "--scene", p(&scene), "--out", p(&plain)]).status.success());
    let o = opencam(&["--quiet", "encrypt", "--key", p(&key_dir), "--scene", p(&scene), "--bright", "1000@16,16", "--out", p(&bright)]);
    assert!(o.status.success());
    let key = Key::load(&key_dir).unwrap();
    let x = opencam::tensor::load_png_as_scene(&scene, 1).unwrap();
    let amp = 1000.0 * x.max() as f64;
    let (a, b) = (Measurement::load(&plain).unwrap(), Measurement::load(&bright).unwrap());
    for k in (0..32).step_by(5) {
        for l in (0..32).step_by(7) {
            let (r, c) = (16 + k, 16 + l);
            let diff = b.data.get(r, c, 0) as f64 - a.data.get(r, c, 0) as f64;
            let want = amp * key.scaling.get(r, c, 0) as f64 * key.psf.get(k, l, 0) as f64;
            assert!((diff - want).abs() < 1e-4 * (1.0 + want.abs()), "{diff} vs {want}");
        }
    }
}

#[test]
fn dimension_mismatch_exits_four() {
    let d = tempfile::tempdir().unwrap();
    let key = d.path().join("key");
    let o = opencam(&["--quiet", "keygen", "--psf-side", "16", "--scene-dims", "8x8", "--out", p(&key)]);
    assert!(o.status.success());
    let scene = scene_png(d.path());
    let o = opencam(&["encrypt", "--key", p(&key), "--scene", p(&scene), "--out", p(&d.path().join("y.ocam"))]);
    assert_eq!(o.status.code(), Some(4));
    let err: serde_json::Value = serde_json::from_slice(o.stderr.trim_ascii()).unwrap();
    assert_eq!(err["error"], "DimMismatch");
}

#[test]
fn attacks_write_reports() {
    let d = tempfile::tempdir().unwrap();
    let key = d.path().join("key");
    assert!(keygen(&key, "2", &[]).status.success());
    let out = d.path().join("ac");
    assert!(opencam(&["--quiet", "attack", "--kind", "autocorr", "--key", p(&key), "--out", p(&out)]).status.success());
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert!(r["metrics"]["impulse_likeness"].is_f64());

    let out = d.path().join("ui");
    let o = opencam(&["--quiet", "attack", "--kind", "uikpa", "--r", "1000", "--key", p(&key), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(out.join("trace.csv")).unwrap();
    let objs: Vec<f64> = rdr.records().map(|r| r.unwrap()[1].parse().unwrap()).collect();
    assert!(objs.len() > 1);
    assert!(objs.windows(2).all(|w| w[1] <= w[0]));
    assert!(out.join("montage.png").exists());

    let binary = d.path().join("binary");
    assert!(keygen(&binary, "2", &["--baseline", "phlatcam_contour"]).status.success());
    let out = d.path().join("th");
    assert!(opencam(&["--quiet", "attack", "--kind", "threshold", "--key", p(&binary), "--out", p(&out)]).status.success());
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert!(r["metrics"]["best_iou"].as_f64().unwrap() >= 0.99);

    let o = opencam(&["attack", "--kind", "nope", "--key", p(&key), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn study_and_inspect() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("study.json");
    std::fs::write(
        &cfg,
        r#"{"scene_dims":[16,16],"psf_side":8,"key_seeds":[1,2],"scenes":{"kind":"builtin","count":2,"seed":0},"attacks":["ikpa"]}"#,
    )
    .unwrap();
    let out = d.path().join("run");
    let o = opencam(&["--quiet", "--config", p(&cfg), "--out", p(&out), "study"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["keyed/rows.csv", "keyed/summary.json", "ikpa/rows.csv", "privacy_utility.csv", "privacy_utility.png", "config.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let o = opencam(&["inspect", p(&out.join("keyed/k0000000000000001/"))]);
    assert!(!o.status.success());
    let tensor = std::fs::read_dir(out.join("keyed/opencam-double/k0000000000000001/synthetic-000")).unwrap().count();
    assert!(tensor >= 3);
    let o = opencam(&["inspect", p(&out.join("keyed/opencam-double/k0000000000000001/synthetic-000/correct_key.ocam"))]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["dims"], serde_json::json!([16, 16]));
}
