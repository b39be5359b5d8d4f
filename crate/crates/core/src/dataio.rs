//! Image, disparity and manifest I/O.
//!
//! Supported encodings:
//! - PGM `P5` with 8-bit samples,
//! - PNG grayscale (8 or 16 bit, 16-bit reduced to the high byte) and color
//!   (converted with luma weights 0.299/0.587/0.114),
//! - PFM `Pf` single channel, rows stored bottom-to-top, scale sign selects
//!   endianness,
//! - KITTI 16-bit PNG disparities (`raw / 256`, zero marks invalid).

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::costvol::IngestMode;
use crate::error::{Error, Result};
use crate::grid::{GrayImage, Grid, RealMap};

/// Upper bound on pixel count accepted from file headers.
const MAX_PIXELS: usize = 1 << 28;

/// Reference disparity with a validity mask. Invalid pixels carry 0.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    disparity: RealMap,
    valid: Grid<bool>,
}

impl GroundTruth {
    /// Builds ground truth from a raster, marking finite positive values valid.
    pub fn from_disparity(raw: RealMap) -> Self {
        let valid = raw.map(|&v| v.is_finite() && v > 0.0);
        let disparity = raw.map(|&v| if v.is_finite() && v > 0.0 { v } else { 0.0 });
        Self { disparity, valid }
    }

    pub fn new(disparity: RealMap, valid: Grid<bool>) -> Result<Self> {
        if !disparity.same_shape(&valid) {
            return Err(Error::DimensionMismatch("ground truth mask".into()));
        }
        let bad = disparity
            .as_slice()
            .iter()
            .zip(valid.as_slice())
            .any(|(d, &v)| v && !d.is_finite());
        if bad {
            return Err(Error::Malformed("non-finite disparity marked valid".into()));
        }
        Ok(Self { disparity, valid })
    }

    pub fn disparity(&self) -> &RealMap {
        &self.disparity
    }

    pub fn valid(&self) -> &Grid<bool> {
        &self.valid
    }

    pub fn width(&self) -> usize {
        self.disparity.width()
    }

    pub fn height(&self) -> usize {
        self.disparity.height()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.as_slice().iter().filter(|&&v| v).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GtEncoding {
    Pfm,
    KittiPng16,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapEncoding {
    Pfm,
    Png16Scaled,
}

/// One stereo pair of a dataset manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub left: PathBuf,
    pub right: PathBuf,
    pub gt: PathBuf,
    pub gt_encoding: GtEncoding,
    pub d_max: usize,
    pub tau: f64,
    /// Label used in reports; defaults to the left image's file stem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Precomputed STCVOL cost volume for external-volume runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume_mode: Option<IngestMode>,
}

impl ManifestEntry {
    /// Report label: `name`, else the left image's file stem.
    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            self.left
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Parses a manifest (JSON array of entries). Relative paths are resolved
    /// against `base`.
    pub fn from_json(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut entries: Vec<ManifestEntry> = serde_json::from_str(text)?;
        for (i, e) in entries.iter_mut().enumerate() {
            if e.d_max < 1 {
                return Err(Error::InvalidParameter(format!("entry {i}: d_max must be >= 1")));
            }
            if !(e.tau > 0.0) {
                return Err(Error::InvalidParameter(format!("entry {i}: tau must be > 0")));
            }
            for p in [&mut e.left, &mut e.right, &mut e.gt].into_iter().chain(e.volume.as_mut()) {
                if p.as_os_str().is_empty() {
                    return Err(Error::InvalidParameter(format!("entry {i}: empty path")));
                }
                if let Some(base) = base {
                    if p.is_relative() {
                        *p = base.join(&*p);
                    }
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path.parent())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.entries)?)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

fn checked_area(width: usize, height: usize) -> Result<usize> {
    if width == 0 || height == 0 {
        return Err(Error::Empty("zero-sized image"));
    }
    match width.checked_mul(height) {
        Some(n) if n <= MAX_PIXELS => Ok(n),
        _ => Err(Error::Malformed(format!("dimension overflow: {width}x{height}"))),
    }
}

/// Netpbm-style header tokenizer: whitespace separated, `#` comments.
struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn token(&mut self) -> Option<&'a str> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            None
        } else {
            std::str::from_utf8(&self.bytes[start..self.pos]).ok()
        }
    }

    fn number<T: std::str::FromStr>(&mut self) -> Option<T> {
        self.token()?.parse().ok()
    }

    /// Consumes the single whitespace byte terminating the header.
    fn payload(self) -> Option<&'a [u8]> {
        if self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            Some(&self.bytes[self.pos + 1..])
        } else {
            None
        }
    }
}

fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let unsupported = || Error::UnsupportedFormat("expected 8-bit binary PGM (P5)".into());
    let mut cur = HeaderCursor { bytes, pos: 0 };
    if cur.token() != Some("P5") {
        return Err(unsupported());
    }
    let width: usize = cur.number().ok_or_else(unsupported)?;
    let height: usize = cur.number().ok_or_else(unsupported)?;
    let maxval: u32 = cur.number().ok_or_else(unsupported)?;
    if maxval == 0 || maxval > 255 {
        return Err(unsupported());
    }
    let payload = cur.payload().ok_or_else(unsupported)?;
    let n = checked_area(width, height)?;
    if payload.len() < n {
        return Err(Error::Malformed(format!(
            "PGM payload has {} bytes, expected {n}",
            payload.len()
        )));
    }
    GrayImage::new(width, height, payload[..n].to_vec())
}

fn luma(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64)
        .round()
        .clamp(0.0, 255.0) as u8
}

fn decode_png_gray(bytes: &[u8]) -> Result<GrayImage> {
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::UnsupportedFormat(format!("png: {e}")))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Malformed("png dimension overflow".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Malformed(format!("png: {e}")))?;
    let (width, height) = (info.width as usize, info.height as usize);
    checked_area(width, height)?;
    let channels = info.color_type.samples();
    let sixteen = info.bit_depth == png::BitDepth::Sixteen;
    let bytes_per_sample = if sixteen { 2 } else { 1 };
    let sample = |row: &[u8], x: usize, c: usize| -> u8 {
        // High byte of big-endian 16-bit samples is the 8-bit value shifted right.
        row[(x * channels + c) * bytes_per_sample]
    };
    let mut pixels = Vec::with_capacity(width * height);
    for y in 0..height {
        let row = &buf[y * info.line_size..(y + 1) * info.line_size];
        for x in 0..width {
            let v = match info.color_type {
                png::ColorType::Grayscale | png::ColorType::GrayscaleAlpha => sample(row, x, 0),
                png::ColorType::Rgb | png::ColorType::Rgba => {
                    luma(sample(row, x, 0), sample(row, x, 1), sample(row, x, 2))
                }
                png::ColorType::Indexed => {
                    return Err(Error::UnsupportedFormat("unexpanded palette png".into()))
                }
            };
            pixels.push(v);
        }
    }
    GrayImage::new(width, height, pixels)
}

/// Loads an 8-bit PGM or a PNG as grayscale.
pub fn load_gray_image(path: &Path) -> Result<GrayImage> {
    let bytes = read_file(path)?;
    decode_gray_image(&bytes)
}

pub fn decode_gray_image(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.starts_with(b"\x89PNG") {
        decode_png_gray(bytes)
    } else if bytes.starts_with(b"P5") {
        decode_pgm(bytes)
    } else {
        Err(Error::UnsupportedFormat("expected PGM (P5) or PNG".into()))
    }
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.pixels());
    out
}

/// Saves a grayscale image; `.png` paths are written as 8-bit PNG, anything
/// else as PGM.
pub fn save_gray_image(img: &GrayImage, path: &Path) -> Result<()> {
    let is_png = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("png"))
        .unwrap_or(false);
    if is_png {
        write_png(path, img.width(), img.height(), png::BitDepth::Eight, img.pixels())
    } else {
        std::fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
    }
}

fn write_png(path: &Path, width: usize, height: usize, depth: png::BitDepth, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(depth);
    let to_err = |e: png::EncodingError| Error::Malformed(format!("png encode: {e}"));
    let mut writer = encoder.write_header().map_err(to_err)?;
    writer.write_image_data(data).map_err(to_err)?;
    writer.finish().map_err(to_err)
}

pub fn decode_pfm(bytes: &[u8]) -> Result<RealMap> {
    let malformed = |m: &str| Error::Malformed(format!("pfm: {m}"));
    let mut cur = HeaderCursor { bytes, pos: 0 };
    match cur.token() {
        Some("Pf") => {}
        Some("PF") => return Err(Error::UnsupportedFormat("color PFM".into())),
        _ => return Err(malformed("bad magic")),
    }
    let width: usize = cur.number().ok_or_else(|| malformed("width"))?;
    let height: usize = cur.number().ok_or_else(|| malformed("height"))?;
    let scale: f64 = cur.number().ok_or_else(|| malformed("scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(malformed("scale"));
    }
    let little = scale < 0.0;
    let payload = cur.payload().ok_or_else(|| malformed("header terminator"))?;
    let n = checked_area(width, height)?;
    if payload.len() < n * 4 {
        return Err(malformed("truncated payload"));
    }
    let mut data = vec![0f32; n];
    for (i, chunk) in payload[..n * 4].chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let (x, file_row) = (i % width, i / width);
        data[(height - 1 - file_row) * width + x] = v;
    }
    Grid::from_vec(width, height, data)
}

pub fn encode_pfm(map: &RealMap) -> Vec<u8> {
    let (w, h) = (map.width(), map.height());
    let mut out = format!("Pf\n{w} {h}\n-1\n").into_bytes();
    out.reserve(w * h * 4);
    for y in (0..h).rev() {
        for &v in map.row(y) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn load_pfm(path: &Path) -> Result<RealMap> {
    decode_pfm(&read_file(path)?)
}

fn decode_png16(bytes: &[u8]) -> Result<Grid<u16>> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Malformed(format!("png: {e}")))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Malformed("png dimension overflow".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Malformed(format!("png: {e}")))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(Error::UnsupportedFormat("expected 16-bit grayscale PNG".into()));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    checked_area(width, height)?;
    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        let row = &buf[y * info.line_size..];
        for x in 0..width {
            data.push(u16::from_be_bytes([row[2 * x], row[2 * x + 1]]));
        }
    }
    Grid::from_vec(width, height, data)
}

pub fn decode_ground_truth(bytes: &[u8], encoding: GtEncoding) -> Result<GroundTruth> {
    match encoding {
        GtEncoding::Pfm => Ok(GroundTruth::from_disparity(decode_pfm(bytes)?)),
        GtEncoding::KittiPng16 => {
            let raw = decode_png16(bytes)?;
            let valid = raw.map(|&r| r > 0);
            let disparity = raw.map(|&r| r as f32 / 256.0);
            GroundTruth::new(disparity, valid)
        }
    }
}

pub fn load_ground_truth(path: &Path, encoding: GtEncoding) -> Result<GroundTruth> {
    decode_ground_truth(&read_file(path)?, encoding)
}

/// Quantizes a disparity to the KITTI 16-bit encoding.
pub fn png16_value(v: f32) -> u16 {
    (v as f64 * 256.0).round().clamp(0.0, 65535.0) as u16
}

pub fn save_map(map: &RealMap, path: &Path, encoding: MapEncoding) -> Result<()> {
    match encoding {
        MapEncoding::Pfm => write_atomic(path, &encode_pfm(map)),
        MapEncoding::Png16Scaled => {
            if map.as_slice().iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(
                    "png16-scaled requires finite values".into(),
                ));
            }
            let mut data = Vec::with_capacity(map.len() * 2);
            for &v in map.as_slice() {
                data.extend_from_slice(&png16_value(v).to_be_bytes());
            }
            write_png(path, map.width(), map.height(), png::BitDepth::Sixteen, &data)
        }
    }
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    static SEQ: AtomicUsize = AtomicUsize::new(0);
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}-{}", std::process::id(), SEQ.fetch_add(1, Ordering::Relaxed)));
    let tmp = PathBuf::from(tmp);
    let mut f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes)
        .and_then(|_| f.sync_all())
        .map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_bytes_are_identity() {
        let bytes = b"P5\n2 2\n255\n\x00\xff\x80\x40";
        let img = decode_gray_image(bytes).unwrap();
        assert_eq!((img.width(), img.height()), (2, 2));
        assert_eq!(img.pixels(), &[0, 255, 128, 64]);
    }

    #[test]
    fn pgm_with_comment_header() {
        let bytes = b"P5\n# made by hand\n2 1\n255\n\x07\x09";
        assert_eq!(decode_gray_image(bytes).unwrap().pixels(), &[7, 9]);
    }

    #[test]
    fn truncated_pgm_header_is_unsupported() {
        let err = decode_gray_image(b"P5\n2 ").unwrap_err();
        assert!(err.to_string().contains("unsupported format"), "{err}");
    }

    #[test]
    fn sixteen_bit_pgm_is_unsupported() {
        let err = decode_gray_image(b"P5\n1 1\n65535\n\x00\x01").unwrap_err();
        assert!(matches!(err, Error::UnsupportedFormat(_)));
    }

    #[test]
    fn zero_sized_pgm_is_rejected() {
        assert!(decode_gray_image(b"P5\n0 4\n255\n").is_err());
    }

    #[test]
    fn pfm_stores_rows_bottom_up() {
        let map = Grid::from_vec(2, 2, vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let bytes = encode_pfm(&map);
        let header_len = b"Pf\n2 2\n-1\n".len();
        let first = f32::from_le_bytes(bytes[header_len..header_len + 4].try_into().unwrap());
        assert_eq!(first, 3.0);
        assert_eq!(decode_pfm(&bytes).unwrap(), map);
    }

    #[test]
    fn big_endian_pfm_is_read() {
        let mut bytes = b"Pf\n1 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&2.5f32.to_be_bytes());
        assert_eq!(decode_pfm(&bytes).unwrap().get(0, 0), 2.5);
    }

    #[test]
    fn pfm_negative_infinity_is_invalid_gt() {
        let map = Grid::from_vec(2, 1, vec![f32::NEG_INFINITY, 3.0]).unwrap();
        let gt = decode_ground_truth(&encode_pfm(&map), GtEncoding::Pfm).unwrap();
        assert!(!gt.valid().get(0, 0));
        assert!(gt.valid().get(1, 0));
        assert_eq!(gt.disparity().get(1, 0), 3.0);
    }

    #[test]
    fn png16_scaling_and_clamp() {
        assert_eq!(png16_value(100.0), 25600);
        assert_eq!(png16_value(-1.0), 0);
        assert_eq!(png16_value(1e9), 65535);
    }

    #[test]
    fn kitti_png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gt.png");
        let map = Grid::from_vec(3, 1, vec![100.0f32, 0.0, 12.3]).unwrap();
        save_map(&map, &path, MapEncoding::Png16Scaled).unwrap();
        let gt = load_ground_truth(&path, GtEncoding::KittiPng16).unwrap();
        assert_eq!(gt.disparity().get(0, 0), 100.0);
        assert!(gt.valid().get(0, 0));
        assert!(!gt.valid().get(1, 0));
        assert!((gt.disparity().get(2, 0) - 12.3).abs() <= 1.0 / 256.0);
    }

    #[test]
    fn png16_rejects_non_finite() {
        let dir = tempfile::tempdir().unwrap();
        let map = Grid::from_vec(1, 1, vec![f32::NAN]).unwrap();
        assert!(save_map(&map, &dir.path().join("x.png"), MapEncoding::Png16Scaled).is_err());
    }

    #[test]
    fn color_png_uses_luma() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.png");
        let file = File::create(&path).unwrap();
        let mut enc = png::Encoder::new(BufWriter::new(file), 2, 1);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().unwrap();
        w.write_image_data(&[255, 0, 0, 10, 200, 30]).unwrap();
        w.finish().unwrap();
        let img = load_gray_image(&path).unwrap();
        assert_eq!(img.pixels(), &[luma(255, 0, 0), luma(10, 200, 30)]);
        assert_eq!(img.pixels()[0], 76);
    }

    #[test]
    fn sixteen_bit_gray_png_is_shifted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g16.png");
        write_png(&path, 2, 1, png::BitDepth::Sixteen, &[0x12, 0x34, 0xff, 0x01]).unwrap();
        assert_eq!(load_gray_image(&path).unwrap().pixels(), &[0x12, 0xff]);
    }

    #[test]
    fn manifest_parses_and_validates() {
        let text = r#"[{"left":"l.png","right":"r.png","gt":"gt.pfm","gt_encoding":"pfm","d_max":64,"tau":3}]"#;
        let m = DatasetManifest::from_json(text, Some(Path::new("/data"))).unwrap();
        assert_eq!(m.entries[0].left, PathBuf::from("/data/l.png"));
        assert_eq!(m.entries[0].gt_encoding, GtEncoding::Pfm);
        let bad = text.replace("\"tau\":3", "\"tau\":0");
        assert!(DatasetManifest::from_json(&bad, None).is_err());
        let bad = text.replace("\"d_max\":64", "\"d_max\":0");
        assert!(DatasetManifest::from_json(&bad, None).is_err());
        let bad = text.replace("l.png", "");
        assert!(DatasetManifest::from_json(&bad, None).is_err());
    }

    #[test]
    fn manifest_optional_fields() {
        let text = r#"[{"left":"a/l0.png","right":"r.png","gt":"gt.pfm","gt_encoding":"pfm","d_max":4,"tau":1,
            "volume":"v.stcvol","volume_mode":"probabilities"}]"#;
        let m = DatasetManifest::from_json(text, Some(Path::new("/data"))).unwrap();
        assert_eq!(m.entries[0].volume.as_deref(), Some(Path::new("/data/v.stcvol")));
        assert_eq!(m.entries[0].volume_mode, Some(IngestMode::Probabilities));
        assert_eq!(m.entries[0].label(), "l0");
        let back = DatasetManifest::from_json(&m.to_json().unwrap(), None).unwrap();
        assert_eq!(back, m);
    }
}
