//! Dense real tensors, the `OPENCAM1` binary format, and PNG import/export.
//!
//! Layout is row-major and channel-last: element `(r, c, ch)` of a
//! `H x W x C` tensor lives at `(r * W + c) * C + ch`. A 2-D tensor behaves
//! as a single-channel image.
//!
//! `OPENCAM1` file layout (all integers little-endian):
//!
//! | bytes          | field                         |
//! |----------------|-------------------------------|
//! | 8              | magic `b"OPENCAM1"`           |
//! | 2              | version (`u16`, currently 1)  |
//! | 1              | ndim (`u8`, 2 or 3)           |
//! | 4 * ndim       | dims (`u32` each)             |
//! | 4 * prod(dims) | payload (`f32`, row-major)    |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plane::Plane;

pub const MAGIC: &[u8; 8] = b"OPENCAM1";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if !(2..=3).contains(&dims.len()) {
            return Err(Error::InvalidTensor(format!(
                "rank {} not supported (2 or 3)",
                dims.len()
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidTensor(format!("zero-sized dimension in {dims:?}")));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::InvalidTensor(format!(
                "dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidTensor(format!("non-finite value at index {i}")));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: &[usize], value: f32) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims.to_vec(), vec![value; n])
    }

    /// Pack planes as channels. One plane gives a 2-D tensor unless
    /// `force_3d` is set.
    pub fn from_planes(planes: &[Plane], force_3d: bool) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::InvalidTensor("no channels".into()))?;
        let (h, w) = first.dims();
        if planes.iter().any(|p| p.dims() != (h, w)) {
            return Err(Error::InvalidTensor("channel planes differ in size".into()));
        }
        let ch = planes.len();
        let mut data = Vec::with_capacity(h * w * ch);
        for i in 0..h * w {
            for p in planes {
                data.push(p.data()[i] as f32);
            }
        }
        let dims = if ch == 1 && !force_3d {
            vec![h, w]
        } else {
            vec![h, w, ch]
        };
        Self::new(dims, data)
    }

    /// Like [`Tensor::from_planes`] but keeps the rank of `like`.
    pub fn from_planes_like(planes: &[Plane], like: &Tensor) -> Result<Self> {
        Self::from_planes(planes, like.ndim() == 3)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn height(&self) -> usize {
        self.dims[0]
    }

    pub fn width(&self) -> usize {
        self.dims[1]
    }

    pub fn channels(&self) -> usize {
        self.dims.get(2).copied().unwrap_or(1)
    }

    /// `(height, width)`.
    pub fn spatial(&self) -> (usize, usize) {
        (self.dims[0], self.dims[1])
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[(row * self.width() + col) * self.channels() + ch]
    }

    /// One channel unpacked to an `f64` plane.
    pub fn channel(&self, ch: usize) -> Plane {
        let c = self.channels();
        assert!(ch < c, "channel {ch} out of range ({c})");
        let data = self
            .data
            .iter()
            .skip(ch)
            .step_by(c)
            .map(|&v| v as f64)
            .collect();
        Plane::from_vec(self.height(), self.width(), data).expect("tensor dims consistent")
    }

    pub fn planes(&self) -> Vec<Plane> {
        (0..self.channels()).map(|c| self.channel(c)).collect()
    }

    /// Apply `f` to every channel plane, keeping this tensor's rank.
    pub fn map_planes(&self, mut f: impl FnMut(&Plane) -> Plane) -> Result<Tensor> {
        let planes: Vec<Plane> = self.planes().iter().map(&mut f).collect();
        Tensor::from_planes_like(&planes, self)
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    /// Bit-level equality (distinguishes `0.0` from `-0.0`).
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.dims == other.dims
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Bilinear resample to `height x width` (sample centres aligned).
    pub fn resize(&self, height: usize, width: usize) -> Result<Tensor> {
        if (height, width) == self.spatial() {
            return Ok(self.clone());
        }
        let (h, w) = self.spatial();
        self.map_planes(|p| {
            Plane::from_fn(height, width, |r, c| {
                let y = ((r as f64 + 0.5) * h as f64 / height as f64 - 0.5).clamp(0.0, (h - 1) as f64);
                let x = ((c as f64 + 0.5) * w as f64 / width as f64 - 0.5).clamp(0.0, (w - 1) as f64);
                let (y0, x0) = (y.floor() as usize, x.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
                let (fy, fx) = (y - y0 as f64, x - x0 as f64);
                let top = p.get(y0, x0) * (1.0 - fx) + p.get(y0, x1) * fx;
                let bot = p.get(y1, x0) * (1.0 - fx) + p.get(y1, x1) * fx;
                top * (1.0 - fy) + bot * fy
            })
        })
    }
}

pub fn write_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut header = Vec::with_capacity(11 + 4 * t.ndim());
    header.extend_from_slice(MAGIC);
    header.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    header.push(t.ndim() as u8);
    for &d in t.dims() {
        let d = u32::try_from(d)
            .map_err(|_| Error::InvalidTensor(format!("dimension {d} exceeds u32")))?;
        header.extend_from_slice(&d.to_le_bytes());
    }
    let io = |e| Error::io(path, e);
    out.write_all(&header).map_err(io)?;
    let mut payload = Vec::with_capacity(4 * t.len());
    for v in t.data() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&payload).map_err(io)?;
    out.flush().map_err(io)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::FileMissing(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}

/// Parse an in-memory `OPENCAM1` image.
pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(Error::BadMagic);
    }
    let truncated = |expected| Error::TruncatedPayload {
        expected,
        found: bytes.len(),
    };
    if bytes.len() < 11 {
        return Err(truncated(11));
    }
    let version = u16::from_le_bytes([bytes[8], bytes[9]]);
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let ndim = bytes[10] as usize;
    if !(2..=3).contains(&ndim) {
        return Err(Error::InvalidTensor(format!("ndim {ndim} not in {{2,3}}")));
    }
    let header_len = 11 + 4 * ndim;
    if bytes.len() < header_len {
        return Err(truncated(header_len));
    }
    let dims: Vec<usize> = bytes[11..header_len]
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
        .collect();
    let n: usize = dims.iter().product();
    let expected = header_len + 4 * n;
    if bytes.len() < expected {
        return Err(truncated(expected));
    }
    let data = bytes[header_len..expected]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Tensor::new(dims, data)
}

/// Load an 8- or 16-bit PNG as a `[0, 1]` scene with 1 or 3 channels.
/// Grayscale conversion uses luma weights 0.299 / 0.587 / 0.114; alpha is
/// dropped.
pub fn load_png_as_scene(path: impl AsRef<Path>, channels: usize) -> Result<Tensor> {
    let path = path.as_ref();
    if channels != 1 && channels != 3 {
        return Err(Error::InvalidSpec(format!("channels must be 1 or 3, got {channels}")));
    }
    let file = File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::FileMissing(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Decode(e.to_string()))?;
    let src_depth = reader.info().bit_depth as u8;
    let indexed = reader.info().color_type == png::ColorType::Indexed;
    if !indexed && src_depth != 8 && src_depth != 16 {
        return Err(Error::UnsupportedBitDepth(src_depth));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Decode("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Decode(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let samples: Vec<f64> = match info.bit_depth {
        png::BitDepth::Eight => buf[..info.buffer_size()]
            .iter()
            .map(|&b| b as f64 / 255.0)
            .collect(),
        png::BitDepth::Sixteen => buf[..info.buffer_size()]
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / 65535.0)
            .collect(),
        other => return Err(Error::UnsupportedBitDepth(other as u8)),
    };
    let spp = info.color_type.samples();
    let rgb = |i: usize| -> [f64; 3] {
        let px = &samples[i * spp..(i + 1) * spp];
        match info.color_type {
            png::ColorType::Grayscale | png::ColorType::GrayscaleAlpha => [px[0]; 3],
            _ => [px[0], px[1], px[2]],
        }
    };
    let mut data = Vec::with_capacity(h * w * channels);
    for i in 0..h * w {
        let [r, g, b] = rgb(i);
        if channels == 1 {
            let luma = match info.color_type {
                png::ColorType::Grayscale | png::ColorType::GrayscaleAlpha => r,
                _ => 0.299 * r + 0.587 * g + 0.114 * b,
            };
            data.push(luma as f32);
        } else {
            data.extend([r as f32, g as f32, b as f32]);
        }
    }
    let dims = if channels == 1 { vec![h, w] } else { vec![h, w, 3] };
    Tensor::new(dims, data)
}

/// Range record written next to every visualization PNG.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisualizationSidecar {
    pub min: f32,
    pub max: f32,
    pub normalized: bool,
}

/// `image.png` -> `image.png.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Write an 8-bit PNG of a 2-D or 3-channel tensor plus a JSON sidecar
/// holding the original `(min, max)`.
///
/// With `normalize`, values map affinely `min -> 0`, `max -> 255`, and a
/// constant tensor maps to mid-gray 128. Without it, values are clamped to
/// `[0, 1]` and scaled by 255.
pub fn save_png_visualization(t: &Tensor, path: impl AsRef<Path>, normalize: bool) -> Result<()> {
    let path = path.as_ref();
    let ch = t.channels();
    if ch != 1 && ch != 3 {
        return Err(Error::InvalidSpec(format!(
            "visualization needs 1 or 3 channels, got {ch}"
        )));
    }
    let (mn, mx) = (t.min(), t.max());
    let pixels: Vec<u8> = if normalize {
        if mx > mn {
            let span = mx as f64 - mn as f64;
            t.data()
                .iter()
                .map(|&v| ((v as f64 - mn as f64) / span * 255.0).round().clamp(0.0, 255.0) as u8)
                .collect()
        } else {
            vec![128; t.len()]
        }
    } else {
        t.data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) as f64 * 255.0).round() as u8)
            .collect()
    };
    let color = if ch == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    };
    write_png_u8(path, t.width(), t.height(), color, &pixels)?;
    let sidecar = VisualizationSidecar {
        min: mn,
        max: mx,
        normalized: normalize,
    };
    let side = sidecar_path(path);
    let json = serde_json::to_vec_pretty(&sidecar)?;
    std::fs::write(&side, json).map_err(|e| Error::io(&side, e))
}

pub(crate) fn write_png_u8(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    pixels: &[u8],
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let to_io = |e: png::EncodingError| match e {
        png::EncodingError::IoError(io) => Error::io(path, io),
        other => Error::Decode(other.to_string()),
    };
    let mut writer = enc.write_header().map_err(to_io)?;
    writer.write_image_data(pixels).map_err(to_io)?;
    writer.finish().map_err(to_io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn rejects_wrong_length_and_nan() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![1, 1], vec![f32::NAN]).is_err());
        assert!(Tensor::new(vec![4], vec![0.0; 4]).is_err());
    }

    #[test]
    fn header_size_arithmetic() {
        let d = tmp();
        let p = d.path().join("z.ocam");
        write_tensor(&Tensor::zeros(&[2, 3]).unwrap(), &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 8 + 2 + 1 + 8 + 24);
        assert_eq!(&bytes[11..15], &2u32.to_le_bytes());
        assert_eq!(&bytes[15..19], &3u32.to_le_bytes());

        let one = Tensor::new(vec![1, 1], vec![0.5]).unwrap();
        write_tensor(&one, &p).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 23);
    }

    #[test]
    fn three_channel_header() {
        let d = tmp();
        let p = d.path().join("c.ocam");
        write_tensor(&Tensor::zeros(&[4, 4, 3]).unwrap(), &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(bytes[10], 3);
        assert_eq!(read_tensor(&p).unwrap().dims(), &[4, 4, 3]);
    }

    #[test]
    fn bad_magic_truncation_and_version() {
        let d = tmp();
        let p = d.path().join("t.ocam");
        write_tensor(&Tensor::filled(&[2, 2], 1.0).unwrap(), &p).unwrap();
        let good = std::fs::read(&p).unwrap();

        let mut bad = good.clone();
        bad[7] = b'2';
        assert!(matches!(decode_tensor(&bad), Err(Error::BadMagic)));

        let mut v2 = good.clone();
        v2[8] = 2;
        assert!(matches!(decode_tensor(&v2), Err(Error::UnsupportedVersion(2))));

        assert!(matches!(
            decode_tensor(&good[..good.len() - 1]),
            Err(Error::TruncatedPayload { .. })
        ));
    }

    #[test]
    fn unwritable_path_is_io_failure() {
        let t = Tensor::zeros(&[1, 1]).unwrap();
        let err = write_tensor(&t, "/nonexistent-dir/x/y.ocam").unwrap_err();
        assert_eq!(err.kind(), "IoFailure");
    }

    fn gray_png(path: &Path, depth: png::BitDepth, raw: &[u8], w: u32, h: u32) {
        let file = File::create(path).unwrap();
        let mut enc = png::Encoder::new(BufWriter::new(file), w, h);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(depth);
        let mut wr = enc.write_header().unwrap();
        wr.write_image_data(raw).unwrap();
    }

    #[test]
    fn png_scaling_rules() {
        let d = tmp();
        let white = d.path().join("w.png");
        gray_png(&white, png::BitDepth::Eight, &[255; 6], 3, 2);
        let t = load_png_as_scene(&white, 1).unwrap();
        assert_eq!(t.dims(), &[2, 3]);
        assert!(t.data().iter().all(|&v| v == 1.0));

        let black = d.path().join("b.png");
        gray_png(&black, png::BitDepth::Eight, &[0; 4], 2, 2);
        assert!(load_png_as_scene(&black, 3).unwrap().data().iter().all(|&v| v == 0.0));

        let mid = d.path().join("m.png");
        gray_png(&mid, png::BitDepth::Sixteen, &32768u16.to_be_bytes(), 1, 1);
        let v = load_png_as_scene(&mid, 1).unwrap().data()[0];
        assert!((v as f64 - 32768.0 / 65535.0).abs() < 1e-7, "{v}");
    }

    #[test]
    fn low_bit_depth_rejected() {
        let d = tmp();
        let p = d.path().join("l.png");
        gray_png(&p, png::BitDepth::Four, &[0x12], 2, 1);
        assert!(matches!(load_png_as_scene(&p, 1), Err(Error::UnsupportedBitDepth(4))));
    }

    #[test]
    fn luma_weights() {
        let d = tmp();
        let p = d.path().join("rgb.png");
        write_png_u8(&p, 1, 1, png::ColorType::Rgb, &[255, 0, 0]).unwrap();
        let v = load_png_as_scene(&p, 1).unwrap().data()[0];
        assert!((v - 0.299).abs() < 1e-6);
    }

    #[test]
    fn visualization_rules() {
        let d = tmp();
        let p = d.path().join("v.png");
        save_png_visualization(&Tensor::filled(&[3, 3], 0.7).unwrap(), &p, true).unwrap();
        let back = load_png_as_scene(&p, 1).unwrap();
        assert!(back.data().iter().all(|&v| (v - 128.0 / 255.0).abs() < 1e-7));

        let ramp = Tensor::new(vec![1, 3], vec![0.0, 0.5, 1.0]).unwrap();
        save_png_visualization(&ramp, &p, false).unwrap();
        let back = load_png_as_scene(&p, 1).unwrap();
        assert_eq!(back.data()[0], 0.0);
        assert!((back.data()[1] - 128.0 / 255.0).abs() < 1e-7);
        assert_eq!(back.data()[2], 1.0);

        let wide = Tensor::new(vec![1, 3], vec![-0.2, 1.0, 3.1]).unwrap();
        save_png_visualization(&wide, &p, true).unwrap();
        let side: serde_json::Value =
            serde_json::from_slice(&std::fs::read(sidecar_path(&p)).unwrap()).unwrap();
        assert_eq!(side["min"].as_f64().unwrap() as f32, -0.2f32);
        assert_eq!(side["max"].as_f64().unwrap() as f32, 3.1f32);
    }

    fn arb_tensor() -> impl Strategy<Value = Tensor> {
        (1usize..6, 1usize..6, prop::option::of(1usize..4)).prop_flat_map(|(h, w, c)| {
            let n = h * w * c.unwrap_or(1);
            prop::collection::vec(-1e6f32..1e6f32, n).prop_map(move |data| {
                let dims = match c {
                    Some(c) => vec![h, w, c],
                    None => vec![h, w],
                };
                Tensor::new(dims, data).unwrap()
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn write_read_is_bit_exact(t in arb_tensor()) {
            let d = tmp();
            let p = d.path().join("r.ocam");
            write_tensor(&t, &p).unwrap();
            prop_assert!(read_tensor(&p).unwrap().bit_eq(&t));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn normalized_png_round_trip(data in prop::collection::vec(-5f32..5f32, 12)) {
            let t = Tensor::new(vec![3, 4], data).unwrap();
            let d = tmp();
            let p = d.path().join("n.png");
            save_png_visualization(&t, &p, true).unwrap();
            let back = load_png_as_scene(&p, 1).unwrap();
            let (mn, mx) = (t.min() as f64, t.max() as f64);
            for (&o, &b) in t.data().iter().zip(back.data()) {
                let expect = if mx > mn { (o as f64 - mn) / (mx - mn) } else { 128.0 / 255.0 };
                prop_assert!((expect - b as f64).abs() <= 1.0 / 255.0 + 1e-6);
            }
        }
    }
}
