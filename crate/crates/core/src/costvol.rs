//! Matching-cost volumes: census transform, Hamming costs, right-reference
//! remapping, self-matching and ingestion of externally computed volumes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GrayImage;
use crate::par;

/// H×W×D matching costs stored in `[y][x][d]` order. Hypothesis `i` is the
/// disparity `i`, so a volume built for `d_max` holds `d_max + 1` levels.
#[derive(Clone, Debug, PartialEq)]
pub struct CostVolume {
    width: usize,
    height: usize,
    levels: usize,
    data: Vec<f32>,
}

impl CostVolume {
    pub fn new(width: usize, height: usize, levels: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || levels == 0 {
            return Err(Error::Empty("cost volume with a zero dimension"));
        }
        if data.len() != width * height * levels {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height}x{levels} volume needs {} costs, got {}",
                width * height * levels,
                data.len()
            )));
        }
        if data.iter().any(|c| !c.is_finite()) {
            return Err(Error::Malformed("non-finite cost".into()));
        }
        Ok(Self {
            width,
            height,
            levels,
            data,
        })
    }

    pub(crate) fn zeros(width: usize, height: usize, levels: usize) -> Self {
        Self {
            width,
            height,
            levels,
            data: vec![0.0; width * height * levels],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        levels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * levels);
        for y in 0..height {
            for x in 0..width {
                for d in 0..levels {
                    data.push(f(x, y, d));
                }
            }
        }
        Self {
            width,
            height,
            levels,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of hypotheses D.
    #[inline]
    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Largest disparity hypothesis.
    #[inline]
    pub fn d_max(&self) -> usize {
        self.levels - 1
    }

    #[inline]
    pub fn cost(&self, x: usize, y: usize, d: usize) -> f32 {
        self.data[(y * self.width + x) * self.levels + d]
    }

    /// The cost curve `c(p)` of one pixel.
    #[inline]
    pub fn curve(&self, x: usize, y: usize) -> &[f32] {
        let start = (y * self.width + x) * self.levels;
        &self.data[start..start + self.levels]
    }

    #[inline]
    pub fn curve_at(&self, pixel: usize) -> &[f32] {
        &self.data[pixel * self.levels..(pixel + 1) * self.levels]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn is_normalized(&self) -> bool {
        self.data.iter().all(|&c| (0.0..=1.0).contains(&c))
    }

    pub fn same_shape(&self, other: &CostVolume) -> bool {
        self.width == other.width && self.height == other.height && self.levels == other.levels
    }

    /// Rescales all costs linearly to `[0, 1]`. A flat volume maps to zeros.
    pub fn min_max_normalize(&mut self) {
        let (lo, hi) = self
            .data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &c| (lo.min(c), hi.max(c)));
        let span = hi - lo;
        for c in &mut self.data {
            *c = if span > 0.0 {
                ((*c - lo) / span).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
    }
}

/// Per-pixel census descriptors. Bit `j` of a descriptor corresponds to the
/// `j`-th window position in raster order; the center bit is always zero.
#[derive(Clone, Debug, PartialEq)]
pub struct CensusImage {
    width: usize,
    height: usize,
    window: usize,
    words: usize,
    bits: Vec<u64>,
}

impl CensusImage {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Descriptor length in bits (window area).
    pub fn bit_len(&self) -> usize {
        self.window * self.window
    }

    #[inline]
    pub fn descriptor(&self, x: usize, y: usize) -> &[u64] {
        let start = (y * self.width + x) * self.words;
        &self.bits[start..start + self.words]
    }

    pub fn bit(&self, x: usize, y: usize, j: usize) -> bool {
        self.descriptor(x, y)[j / 64] >> (j % 64) & 1 == 1
    }
}

#[inline]
pub fn hamming(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

fn check_window(window: usize) -> Result<()> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "census window must be odd and >= 3, got {window}"
        )));
    }
    Ok(())
}

/// Census transform: bit set iff the neighbor is strictly darker than the
/// center. Neighbors outside the image read replicated border intensities.
pub fn census_transform(img: &GrayImage, window: usize) -> Result<CensusImage> {
    check_window(window)?;
    let (w, h) = (img.width(), img.height());
    let words = (window * window).div_ceil(64);
    let r = (window / 2) as isize;
    let mut bits = vec![0u64; w * h * words];
    par::for_each_row(&mut bits, w * words, |y, row| {
        for x in 0..w {
            let center = img.get(x, y);
            let desc = &mut row[x * words..(x + 1) * words];
            let mut j = 0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let v = img.get_clamped(x as isize + dx, y as isize + dy);
                    if v < center {
                        desc[j / 64] |= 1 << (j % 64);
                    }
                    j += 1;
                }
            }
        }
    });
    Ok(CensusImage {
        width: w,
        height: h,
        window,
        words,
        bits,
    })
}

/// `c_i(x, y) = Hamming(left(x, y), right(max(x - i, 0), y)) / window²`.
pub fn build_cost_volume(left: &CensusImage, right: &CensusImage, d_max: usize) -> Result<CostVolume> {
    if left.width != right.width || left.height != right.height || left.window != right.window {
        return Err(Error::DimensionMismatch("census images differ in size or window".into()));
    }
    if d_max < 1 {
        return Err(Error::InvalidParameter("d_max must be >= 1".into()));
    }
    let (w, h, levels) = (left.width, left.height, d_max + 1);
    let norm = 1.0 / left.bit_len() as f32;
    let mut vol = CostVolume::zeros(w, h, levels);
    par::for_each_row(vol.as_mut_slice(), w * levels, |y, row| {
        for x in 0..w {
            let l = left.descriptor(x, y);
            for d in 0..levels {
                let xr = x.saturating_sub(d);
                row[x * levels + d] = hamming(l, right.descriptor(xr, y)) as f32 * norm;
            }
        }
    });
    Ok(vol)
}

/// Census pipeline from raw images.
pub fn census_cost_volume(left: &GrayImage, right: &GrayImage, d_max: usize, window: usize) -> Result<CostVolume> {
    let l = census_transform(left, window)?;
    let r = census_transform(right, window)?;
    build_cost_volume(&l, &r, d_max)
}

/// Right-reference volume by index remap: `c^r_i(x, y) = c_i(x + i, y)`,
/// clamping to the last column.
pub fn derive_right_volume(vol: &CostVolume) -> CostVolume {
    let (w, levels) = (vol.width, vol.levels);
    let mut out = CostVolume::zeros(w, vol.height, levels);
    par::for_each_row(out.as_mut_slice(), w * levels, |y, row| {
        for x in 0..w {
            for d in 0..levels {
                row[x * levels + d] = vol.cost((x + d).min(w - 1), y, d);
            }
        }
    });
    out
}

/// Inverse remap of [`derive_right_volume`]: `c_i(x, y) = c^r_i(x - i, y)`,
/// clamping to column 0.
pub fn derive_left_volume(right: &CostVolume) -> CostVolume {
    let (w, levels) = (right.width, right.levels);
    let mut out = CostVolume::zeros(w, right.height, levels);
    par::for_each_row(out.as_mut_slice(), w * levels, |y, row| {
        for x in 0..w {
            for d in 0..levels {
                row[x * levels + d] = right.cost(x.saturating_sub(d), y, d);
            }
        }
    });
    out
}

/// Self-matching volume over offsets `[-d_max, d_max]`. Level `k` holds
/// offset `k - d_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct SelfCostVolume {
    d_max: usize,
    volume: CostVolume,
}

impl SelfCostVolume {
    pub fn from_volume(volume: CostVolume) -> Result<Self> {
        if volume.levels() % 2 == 0 {
            return Err(Error::DimensionMismatch(
                "self-matching volume needs an odd number of offsets".into(),
            ));
        }
        Ok(Self {
            d_max: volume.levels() / 2,
            volume,
        })
    }

    pub fn d_max(&self) -> usize {
        self.d_max
    }

    pub fn width(&self) -> usize {
        self.volume.width()
    }

    pub fn height(&self) -> usize {
        self.volume.height()
    }

    pub fn volume(&self) -> &CostVolume {
        &self.volume
    }

    #[inline]
    pub fn offset_cost(&self, x: usize, y: usize, offset: isize) -> f32 {
        self.volume.cost(x, y, (offset + self.d_max as isize) as usize)
    }

    /// Curve over offsets `-d_max..=d_max`.
    #[inline]
    pub fn curve(&self, x: usize, y: usize) -> &[f32] {
        self.volume.curve(x, y)
    }
}

/// Census cost of `img` against itself: offset `o` compares `p` with the
/// pixel at `x - o` (border replicated).
pub fn build_self_volume(img: &GrayImage, d_max: usize, window: usize) -> Result<SelfCostVolume> {
    if d_max < 1 {
        return Err(Error::InvalidParameter("d_max must be >= 1".into()));
    }
    let census = census_transform(img, window)?;
    let (w, levels) = (census.width, 2 * d_max + 1);
    let norm = 1.0 / census.bit_len() as f32;
    let mut vol = CostVolume::zeros(w, census.height, levels);
    par::for_each_row(vol.as_mut_slice(), w * levels, |y, row| {
        for x in 0..w {
            let p = census.descriptor(x, y);
            for k in 0..levels {
                let offset = k as isize - d_max as isize;
                let xq = (x as isize - offset).clamp(0, w as isize - 1) as usize;
                row[x * levels + k] = hamming(p, census.descriptor(xq, y)) as f32 * norm;
            }
        }
    });
    SelfCostVolume::from_volume(vol)
}

pub const STCVOL_MAGIC: &[u8; 8] = b"STCVOL01";

/// How to interpret values read from an STCVOL file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IngestMode {
    /// Lower is better; rescaled only if a value falls outside `[0, 1]`.
    Costs,
    /// Matching probabilities; negated then rescaled to `[0, 1]`.
    Probabilities,
}

pub fn encode_stcvol(vol: &CostVolume) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + vol.data.len() * 4);
    out.extend_from_slice(STCVOL_MAGIC);
    for dim in [vol.height, vol.width, vol.levels] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for c in &vol.data {
        out.extend_from_slice(&c.to_le_bytes());
    }
    out
}

/// Parses an STCVOL payload without any normalization.
pub fn decode_stcvol(bytes: &[u8]) -> Result<CostVolume> {
    if bytes.len() < 20 || &bytes[..8] != STCVOL_MAGIC {
        return Err(Error::Malformed("bad STCVOL magic".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    let (h, w, d) = (dim(0), dim(1), dim(2));
    let n = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(d))
        .ok_or_else(|| Error::Malformed("STCVOL dimension overflow".into()))?;
    let payload = &bytes[20..];
    if n.checked_mul(4) != Some(payload.len()) {
        return Err(Error::Malformed(format!(
            "STCVOL header {h}x{w}x{d} does not match payload of {} bytes",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    CostVolume::new(w, h, d, data)
}

/// Decodes and normalizes per `mode`.
pub fn ingest_stcvol(bytes: &[u8], mode: IngestMode) -> Result<CostVolume> {
    let mut vol = decode_stcvol(bytes)?;
    match mode {
        IngestMode::Probabilities => {
            vol.data.iter_mut().for_each(|v| *v = -*v);
            vol.min_max_normalize();
        }
        IngestMode::Costs => {
            if !vol.is_normalized() {
                vol.min_max_normalize();
            }
        }
    }
    Ok(vol)
}

pub fn ingest_cost_volume(path: &Path, mode: IngestMode) -> Result<CostVolume> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ingest_stcvol(&bytes, mode)
}

pub fn save_cost_volume(vol: &CostVolume, path: &Path) -> Result<()> {
    crate::dataio::write_atomic(path, &encode_stcvol(vol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn patch_image() -> GrayImage {
        GrayImage::new(3, 3, vec![5, 1, 2, 4, 3, 9, 8, 7, 6]).unwrap()
    }

    #[test]
    fn census_hand_example() {
        let c = census_transform(&patch_image(), 3).unwrap();
        let bits: Vec<u8> = (0..9).map(|j| c.bit(1, 1, j) as u8).collect();
        assert_eq!(bits, vec![0, 1, 1, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn census_of_constant_image_is_zero() {
        let img = GrayImage::from_fn(6, 5, |_, _| 42);
        let c = census_transform(&img, 5).unwrap();
        assert!(c.bits.iter().all(|&w| w == 0));
    }

    #[test]
    fn census_nine_gives_81_bits() {
        let c = census_transform(&patch_image(), 9).unwrap();
        assert_eq!(c.bit_len(), 81);
        assert_eq!(c.descriptor(0, 0).len(), 2);
        assert!(!c.bit(1, 1, 40));
    }

    #[test]
    fn census_rejects_even_window() {
        assert!(census_transform(&patch_image(), 4).is_err());
        assert!(census_transform(&patch_image(), 1).is_err());
    }

    #[test]
    fn hamming_cost_of_hand_descriptors() {
        // 011000000 vs 000000000
        let a = [0b110u64];
        let b = [0u64];
        assert!((hamming(&a, &b) as f32 / 9.0 - 0.2222).abs() < 1e-4);
    }

    #[test]
    fn identical_images_give_zero_cost_at_zero_disparity() {
        let img = GrayImage::from_fn(12, 6, |x, y| ((x * 37 + y * 91) % 251) as u8);
        let vol = census_cost_volume(&img, &img, 4, 3).unwrap();
        for y in 0..6 {
            for x in 0..12 {
                assert_eq!(vol.cost(x, y, 0), 0.0);
            }
        }
        assert!(vol.is_normalized());
        assert_eq!(vol.levels(), 5);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let a = census_transform(&GrayImage::from_fn(4, 4, |x, _| x as u8), 3).unwrap();
        let b = census_transform(&GrayImage::from_fn(5, 4, |x, _| x as u8), 3).unwrap();
        assert!(matches!(build_cost_volume(&a, &b, 2), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn right_volume_remaps_coordinates() {
        let vol = CostVolume::from_fn(16, 1, 5, |x, _, d| if x == 7 && d == 3 { 0.0 } else { 1.0 });
        let r = derive_right_volume(&vol);
        assert_eq!(r.cost(4, 0, 3), 0.0);
        let zeros = r.as_slice().iter().filter(|&&c| c == 0.0).count();
        assert_eq!(zeros, 1);
    }

    #[test]
    fn right_volume_of_identical_images_matches_at_zero() {
        let img = GrayImage::from_fn(10, 4, |x, y| ((x * 13 + y * 7) % 17 * 15) as u8);
        let vol = census_cost_volume(&img, &img, 3, 3).unwrap();
        let r = derive_right_volume(&vol);
        for y in 0..4 {
            for x in 0..10 {
                assert_eq!(r.cost(x, y, 0), vol.cost(x, y, 0));
            }
        }
    }

    #[test]
    fn self_volume_zero_offset_and_periodic_stripes() {
        let img = GrayImage::from_fn(32, 8, |x, _| [10, 60, 200, 120][x % 4]);
        let sv = build_self_volume(&img, 5, 3).unwrap();
        for y in 0..8 {
            for x in 0..32 {
                assert_eq!(sv.offset_cost(x, y, 0), 0.0);
            }
        }
        for x in 10..22 {
            for o in -5isize..=5 {
                let c = sv.offset_cost(x, 4, o);
                if o % 4 == 0 {
                    assert_eq!(c, 0.0, "x={x} o={o}");
                } else {
                    assert!(c > 0.0, "x={x} o={o}");
                }
            }
        }
        let flat = build_self_volume(&GrayImage::from_fn(8, 8, |_, _| 9), 3, 3).unwrap();
        assert!(flat.volume().as_slice().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn ingest_probabilities_negates_and_normalizes() {
        let vol = CostVolume::new(1, 1, 3, vec![0.7, 0.2, 0.1]).unwrap();
        let out = ingest_stcvol(&encode_stcvol(&vol), IngestMode::Probabilities).unwrap();
        let c = out.curve(0, 0);
        assert!((c[0] - 0.0).abs() < 1e-6);
        assert!((c[1] - 0.8333).abs() < 1e-4);
        assert!((c[2] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ingest_normalized_costs_pass_through() {
        let vol = CostVolume::from_fn(3, 2, 4, |x, y, d| ((x + 2 * y + 3 * d) % 7) as f32 / 7.0);
        let out = ingest_stcvol(&encode_stcvol(&vol), IngestMode::Costs).unwrap();
        assert_eq!(out, vol);
        let wide = CostVolume::from_fn(2, 1, 2, |x, _, d| (x * 4 + d) as f32);
        let out = ingest_stcvol(&encode_stcvol(&wide), IngestMode::Costs).unwrap();
        assert!(out.is_normalized());
        assert_eq!(out.cost(1, 0, 1), 1.0);
    }

    #[test]
    fn ingest_rejects_bad_files() {
        let vol = CostVolume::from_fn(2, 2, 2, |_, _, _| 0.5);
        let mut bytes = encode_stcvol(&vol);
        bytes.truncate(bytes.len() - 4);
        assert!(ingest_stcvol(&bytes, IngestMode::Costs).is_err());
        let mut bytes = encode_stcvol(&vol);
        bytes[0] = b'X';
        assert!(ingest_stcvol(&bytes, IngestMode::Costs).is_err());
    }

    proptest! {
        #[test]
        fn hamming_is_symmetric(a in proptest::collection::vec(any::<u64>(), 2), b in proptest::collection::vec(any::<u64>(), 2)) {
            prop_assert_eq!(hamming(&a, &b), hamming(&b, &a));
        }

        #[test]
        fn left_right_remap_roundtrip(seed in any::<u64>()) {
            let (w, h, levels) = (9usize, 3usize, 4usize);
            let vol = CostVolume::from_fn(w, h, levels, |x, y, d| {
                let v = seed.wrapping_mul(6364136223846793005).wrapping_add((x * 131 + y * 17 + d * 3) as u64);
                (v >> 40) as f32 / (1u64 << 24) as f32
            });
            let back = derive_left_volume(&derive_right_volume(&vol));
            for y in 0..h {
                for x in 0..w {
                    for d in 0..levels {
                        // x - d and then x stay in-image: exact.
                        if x >= d {
                            prop_assert_eq!(back.cost(x, y, d), vol.cost(x, y, d));
                        }
                    }
                }
            }
        }
    }
}
