//! Feature stacks for forest-based confidence estimation, the image pyramid
//! behind multi-scale channels, and the `STFEAT` exchange format.
//!
//! Channels hold raw measure values. Lower-resolution channels are brought
//! back to full resolution by nearest-neighbor upsampling.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aggregate::{ScanPath, ScanlineResult};
use crate::dataio::write_atomic;
use crate::error::{Error, Result};
use crate::grid::{GrayImage, Grid};
use crate::measures::{compute_measure, MeasureId, MeasureKind, MeasureParams};
use crate::pipeline::MatchResult;

/// Full, half and quarter resolution.
#[derive(Clone, Debug)]
pub struct ImagePyramid {
    pub levels: [GrayImage; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    Full,
    Half,
    Quarter,
}

impl Scale {
    pub const ALL: [Scale; 3] = [Scale::Full, Scale::Half, Scale::Quarter];

    pub fn level(self) -> usize {
        self as usize
    }

    fn tag(self) -> &'static str {
        match self {
            Scale::Full => "f",
            Scale::Half => "h",
            Scale::Quarter => "q",
        }
    }
}

/// Halves both dimensions (floor) averaging 2×2 blocks.
pub fn downsample(img: &GrayImage) -> GrayImage {
    let (w, h) = ((img.width() / 2).max(1), (img.height() / 2).max(1));
    GrayImage::from_fn(w, h, |x, y| {
        let mut sum = 0u32;
        for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            sum += img.get_clamped((2 * x + dx) as isize, (2 * y + dy) as isize) as u32;
        }
        ((sum + 2) / 4) as u8
    })
}

pub fn build_pyramid(img: &GrayImage) -> Result<ImagePyramid> {
    if img.width() < 4 || img.height() < 4 {
        return Err(Error::InvalidParameter(format!(
            "pyramid needs at least 4x4 pixels, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    let half = downsample(img);
    let quarter = downsample(&half);
    Ok(ImagePyramid {
        levels: [img.clone(), half, quarter],
    })
}

/// Disparity range at a pyramid level: `max(1, d_max >> level)`.
pub fn scale_d_max(d_max: usize, scale: Scale) -> usize {
    (d_max >> scale.level()).max(1)
}

/// Nearest-neighbor upsampling to `width × height`.
pub fn upsample_nearest(map: &Grid<f32>, width: usize, height: usize) -> Grid<f32> {
    Grid::from_fn(width, height, |x, y| {
        let sx = (x * map.width() / width).min(map.width() - 1);
        let sy = (y * map.height() / height).min(map.height() - 1);
        map.get(sx, sy)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StackKind {
    GCP,
    ENS7,
    ENS23,
    LEV22,
    LEV50,
    O1,
    O2,
    FA1,
    FA2,
    SGMF,
}

impl StackKind {
    pub const ALL: [StackKind; 10] = [
        StackKind::GCP,
        StackKind::ENS7,
        StackKind::ENS23,
        StackKind::LEV22,
        StackKind::LEV50,
        StackKind::O1,
        StackKind::O2,
        StackKind::FA1,
        StackKind::FA2,
        StackKind::SGMF,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StackKind::GCP => "GCP",
            StackKind::ENS7 => "ENS7",
            StackKind::ENS23 => "ENS23",
            StackKind::LEV22 => "LEV22",
            StackKind::LEV50 => "LEV50",
            StackKind::O1 => "O1",
            StackKind::O2 => "O2",
            StackKind::FA1 => "FA1",
            StackKind::FA2 => "FA2",
            StackKind::SGMF => "SGMF",
        }
    }

    pub fn channel_count(self) -> usize {
        self.channels().len()
    }

    pub fn needs_pyramid(self) -> bool {
        matches!(self, StackKind::ENS7 | StackKind::ENS23)
    }

    pub fn needs_scanlines(self) -> bool {
        self == StackKind::SGMF
    }

    /// Channel sources in composition order.
    pub fn channels(self) -> Vec<Channel> {
        use MeasureKind::*;
        let m = |k: MeasureKind| Channel::Measure(MeasureId::new(k), Scale::Full);
        let win = |k: MeasureKind, apex: usize| {
            Channel::Measure(MeasureId::windowed(k, 3 + 2 * apex).expect("windowed kind"), Scale::Full)
        };
        let fhq = |k: MeasureKind| Scale::ALL.map(|s| Channel::Measure(MeasureId::new(k), s));
        let apexes = |kinds: &[MeasureKind], apexes: &[usize]| -> Vec<Channel> {
            kinds
                .iter()
                .flat_map(|&k| apexes.iter().map(move |&a| win(k, a)))
                .collect()
        };
        match self {
            StackKind::GCP => vec![m(MSM), m(DB), m(MMN), m(ALM), m(LRC), m(LRD), m(DTD), win(MDD, 1)],
            StackKind::ENS7 => {
                let mut v = vec![m(LRC)];
                v.extend(fhq(HGM));
                v.extend(fhq(DMV));
                v
            }
            StackKind::ENS23 => {
                let mut v = Vec::new();
                v.extend(fhq(PKR));
                v.extend(fhq(NEM));
                v.extend(fhq(PER));
                v.push(m(LRC));
                v.extend(fhq(HGM));
                v.extend(fhq(DMV));
                v.extend(fhq(DAM));
                v.extend(fhq(ZSAD));
                v.push(m(SGE));
                v
            }
            StackKind::LEV22 => {
                let mut v: Vec<Channel> = [PKR, PKRN, MSM, MM, WMN, MLM, PER, NEM, LRD, LC].map(m).to_vec();
                v.extend(apexes(&[VAR], &[1, 2, 3, 4]));
                v.push(m(DTD));
                v.extend(apexes(&[MDD], &[1, 2, 3, 4]));
                v.extend([m(LRC), m(HGM), m(DLB)]);
                v
            }
            StackKind::LEV50 => {
                let mut v: Vec<Channel> = [
                    MSM, PKR, PKRN, MM, MMN, WMN, WMNN, MLM, PER, NEM, LRD, LC, ALM, DTD, DTE, LRC, HGM, DLB, DB, NOI,
                ]
                .map(m)
                .to_vec();
                v.extend(apexes(&[VAR, MDD, MND, SKEW, IVAR], &[1, 3, 4, 6, 9, 14]));
                v
            }
            StackKind::O1 => apexes(&[DA, DS, MED, MDD, VAR], &[1, 2, 3, 4]),
            StackKind::O2 => {
                let mut v = apexes(&[DA, DS, MED, MDD, VAR], &[1, 2, 3, 4, 5, 6, 7, 8, 9]);
                v.extend([m(DLB), m(UC)]);
                v
            }
            StackKind::FA1 => {
                let mut v = vec![m(LRC), m(DB), m(LRD)];
                v.extend(apexes(&[MDD], &[1, 2, 3]));
                v.extend([m(MLM), m(MSM)]);
                v
            }
            StackKind::FA2 => {
                let mut v = vec![m(LRD), m(PKRN)];
                v.extend(apexes(&[MDD], &[1, 2, 3, 4]));
                v.extend([m(MLM), m(NEM)]);
                v
            }
            StackKind::SGMF => {
                let mut v: Vec<Channel> = (0..4).map(Channel::PathDisparity).collect();
                for s in 0..4 {
                    for z in 0..4 {
                        v.push(Channel::CrossCost { s, z });
                    }
                }
                v
            }
        }
    }
}

impl std::str::FromStr for StackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StackKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown feature stack '{s}'")))
    }
}

/// Where one channel comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    Measure(MeasureId, Scale),
    /// `d^s_1`
    PathDisparity(usize),
    /// `c^z_{d^s_1}`
    CrossCost { s: usize, z: usize },
}

impl Channel {
    pub fn name(&self, multiscale: bool) -> String {
        match *self {
            Channel::Measure(id, scale) if multiscale => format!("{id}@{}", scale.tag()),
            Channel::Measure(id, _) => id.to_string(),
            Channel::PathDisparity(s) => format!("d1[{}]", ScanPath::ALL[s].name()),
            Channel::CrossCost { s, z } => {
                format!("c[{}](d1[{}])", ScanPath::ALL[z].name(), ScanPath::ALL[s].name())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStack {
    pub kind: Option<StackKind>,
    pub width: usize,
    pub height: usize,
    pub names: Vec<String>,
    pub channels: Vec<Grid<f32>>,
}

impl FeatureStack {
    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn channel(&self, name: &str) -> Option<&Grid<f32>> {
        self.names.iter().position(|n| n == name).map(|i| &self.channels[i])
    }
}

/// Precomputed constituents, keyed by channel.
pub struct StackSources<'a> {
    pub maps: Vec<(Channel, Grid<f32>)>,
    pub scanlines: Option<&'a ScanlineResult>,
}

/// Gathers `kind`'s channels from `sources`, upsampling as needed.
pub fn assemble_stack(kind: StackKind, sources: &StackSources, width: usize, height: usize) -> Result<FeatureStack> {
    let multiscale = kind.needs_pyramid();
    let mut names = Vec::new();
    let mut channels = Vec::new();
    for ch in kind.channels() {
        let map = match ch {
            Channel::Measure(..) => sources
                .maps
                .iter()
                .find(|(c, _)| *c == ch)
                .map(|(_, m)| m.clone())
                .ok_or_else(|| Error::InvalidParameter(format!("missing constituent {}", ch.name(multiscale))))?,
            Channel::PathDisparity(s) => {
                let scan = sources.scanlines.ok_or(Error::MissingInput("scanline aggregation result"))?;
                scan.path_disparities[s].clone()
            }
            Channel::CrossCost { s, z } => {
                let scan = sources.scanlines.ok_or(Error::MissingInput("scanline aggregation result"))?;
                let (w, h) = (scan.total.width(), scan.total.height());
                Grid::from_fn(w, h, |x, y| scan.cross_cost(x, y, s, z))
            }
        };
        let map = if map.width() == width && map.height() == height {
            map
        } else {
            upsample_nearest(&map, width, height)
        };
        names.push(ch.name(multiscale));
        channels.push(map);
    }
    Ok(FeatureStack {
        kind: Some(kind),
        width,
        height,
        names,
        channels,
    })
}

/// Match results per pyramid level; `half` and `quarter` are needed only for
/// multi-scale stacks.
pub struct ScaleRuns<'a> {
    pub full: &'a MatchResult,
    pub half: Option<&'a MatchResult>,
    pub quarter: Option<&'a MatchResult>,
}

/// Computes every constituent of `kind` and assembles the stack.
pub fn compute_stack(kind: StackKind, runs: &ScaleRuns, params: &MeasureParams) -> Result<FeatureStack> {
    let mut maps = Vec::new();
    for ch in kind.channels() {
        if let Channel::Measure(id, scale) = ch {
            let run = match scale {
                Scale::Full => Some(runs.full),
                Scale::Half => runs.half,
                Scale::Quarter => runs.quarter,
            }
            .ok_or(Error::MissingInput("pyramid level match result"))?;
            let conf = compute_measure(&run.inputs()?, params, id)?;
            maps.push((ch, conf.raw.map(|&v| v as f32)));
        }
    }
    let sources = StackSources {
        maps,
        scanlines: runs.full.scanlines.as_ref(),
    };
    assemble_stack(kind, &sources, runs.full.volume.width(), runs.full.volume.height())
}

pub const STFEAT_MAGIC: &[u8; 8] = b"STFEAT01";

pub fn encode_stack(stack: &FeatureStack) -> Result<Vec<u8>> {
    if stack.is_empty() {
        return Err(Error::Empty("feature stack"));
    }
    let (w, h, c) = (stack.width, stack.height, stack.len());
    let mut out = Vec::with_capacity(20 + w * h * c * 4);
    out.extend_from_slice(STFEAT_MAGIC);
    for v in [h, w, c] {
        out.extend_from_slice(&u32::try_from(v).map_err(|_| Error::Malformed("dimension overflow".into()))?.to_le_bytes());
    }
    for name in &stack.names {
        let len = u16::try_from(name.len()).map_err(|_| Error::Malformed(format!("channel name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    for i in 0..w * h {
        for ch in &stack.channels {
            out.extend_from_slice(&ch.as_slice()[i].to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_stack(bytes: &[u8]) -> Result<FeatureStack> {
    let err = |m: &str| Error::Malformed(format!("STFEAT: {m}"));
    if bytes.len() < 20 || &bytes[..8] != STFEAT_MAGIC {
        return Err(err("bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (h, w, c) = (u32_at(8), u32_at(12), u32_at(16));
    if w == 0 || h == 0 || c == 0 {
        return Err(err("empty stack"));
    }
    let mut pos = 20;
    let mut names = Vec::with_capacity(c);
    for _ in 0..c {
        let len_bytes = bytes.get(pos..pos + 2).ok_or_else(|| err("truncated names"))?;
        let len = u16::from_le_bytes([len_bytes[0], len_bytes[1]]) as usize;
        pos += 2;
        let name = bytes.get(pos..pos + len).ok_or_else(|| err("truncated names"))?;
        names.push(String::from_utf8(name.to_vec()).map_err(|_| err("channel name is not UTF-8"))?);
        pos += len;
    }
    let body = &bytes[pos..];
    if body.len() != w * h * c * 4 {
        return Err(err("payload size mismatch"));
    }
    let mut channels = vec![Vec::with_capacity(w * h); c];
    for (k, chunk) in body.chunks_exact(4).enumerate() {
        channels[k % c].push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    let channels = channels
        .into_iter()
        .map(|v| Grid::from_vec(w, h, v))
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureStack {
        kind: None,
        width: w,
        height: h,
        names,
        channels,
    })
}

pub fn export_stack(stack: &FeatureStack, path: &Path) -> Result<()> {
    write_atomic(path, &encode_stack(stack)?)
}

pub fn read_stack(path: &Path) -> Result<FeatureStack> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_stack(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pyramid_levels() {
        let p = build_pyramid(&GrayImage::from_fn(8, 8, |_, _| 77)).unwrap();
        assert_eq!((p.levels[1].width(), p.levels[1].height()), (4, 4));
        assert_eq!((p.levels[2].width(), p.levels[2].height()), (2, 2));
        assert!(p.levels[2].pixels().iter().all(|&v| v == 77));
        let odd = build_pyramid(&GrayImage::from_fn(9, 9, |x, y| (x + y) as u8)).unwrap();
        assert_eq!(odd.levels[1].width(), 4);
        assert_eq!(odd.levels[2].width(), 2);
        assert!(build_pyramid(&GrayImage::from_fn(3, 8, |_, _| 0)).is_err());
    }

    #[test]
    fn d_max_scaling() {
        assert_eq!(scale_d_max(64, Scale::Half), 32);
        assert_eq!(scale_d_max(64, Scale::Quarter), 16);
        assert_eq!(scale_d_max(2, Scale::Quarter), 1);
    }

    #[test]
    fn channel_counts() {
        let expected = [
            (StackKind::GCP, 8),
            (StackKind::ENS7, 7),
            (StackKind::ENS23, 23),
            (StackKind::LEV22, 22),
            (StackKind::LEV50, 50),
            (StackKind::O1, 20),
            (StackKind::O2, 47),
            (StackKind::FA1, 8),
            (StackKind::FA2, 8),
            (StackKind::SGMF, 20),
        ];
        for (kind, n) in expected {
            assert_eq!(kind.channel_count(), n, "{}", kind.name());
            let names: Vec<String> = kind.channels().iter().map(|c| c.name(kind.needs_pyramid())).collect();
            let mut unique = names.clone();
            unique.sort();
            unique.dedup();
            assert_eq!(unique.len(), n, "duplicate channel in {}", kind.name());
        }
    }

    #[test]
    fn o1_and_gcp_compositions() {
        let names: Vec<String> = StackKind::O1.channels().iter().map(|c| c.name(false)).collect();
        assert_eq!(&names[..4], &["DA_5", "DA_7", "DA_9", "DA_11"]);
        assert_eq!(names[19], "VAR_11");
        let gcp: Vec<String> = StackKind::GCP.channels().iter().map(|c| c.name(false)).collect();
        assert_eq!(gcp, ["MSM", "DB", "MMN", "ALM", "LRC", "LRD", "DTD", "MDD_5"]);
        let lev: Vec<String> = StackKind::LEV50.channels().iter().map(|c| c.name(false)).collect();
        assert_eq!(lev[20..26], ["VAR_5", "VAR_9", "VAR_11", "VAR_15", "VAR_21", "VAR_31"]);
    }

    #[test]
    fn upsampling_is_nearest_neighbor() {
        let small = Grid::from_vec(2, 1, vec![1.0f32, 2.0]).unwrap();
        let up = upsample_nearest(&small, 5, 2);
        assert_eq!(up.row(0), &[1.0, 1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn stfeat_round_trip_and_empty() {
        let stack = FeatureStack {
            kind: None,
            width: 3,
            height: 2,
            names: vec!["a".into(), "DA_5".into()],
            channels: vec![
                Grid::from_fn(3, 2, |x, y| (x + 10 * y) as f32),
                Grid::from_fn(3, 2, |x, y| -((x * y) as f32) / 3.0),
            ],
        };
        let bytes = encode_stack(&stack).unwrap();
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 2);
        let back = decode_stack(&bytes).unwrap();
        assert_eq!(back.names, stack.names);
        assert_eq!(back.channels, stack.channels);
        let empty = FeatureStack {
            kind: None,
            width: 3,
            height: 2,
            names: vec![],
            channels: vec![],
        };
        assert!(encode_stack(&empty).is_err());
        assert!(decode_stack(&bytes[..bytes.len() - 1]).is_err());
    }
}
