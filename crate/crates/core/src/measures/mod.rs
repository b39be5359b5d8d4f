//! Hand-crafted confidence measures.
//!
//! Every measure is evaluated exactly as its formula is written (`raw`) and
//! then oriented so that larger means more confident (`scores`). The catalog
//! records both signs for every entry.
//!
//! Shared conventions:
//! * denominators are guarded with `max(·, epsilon_div)`;
//! * windows are square, centered on `p` and clipped at image borders;
//! * `p^r` is `(x - d1(p), y)` clamped to column 0.

mod dispmap;
mod full;
mod image;
mod local;
mod lr;
mod selfmatch;
mod sgm;
pub(crate) mod window;
mod windowed;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aggregate::{ScanlineResult, SgmParams};
use crate::costvol::{CostVolume, SelfCostVolume};
use crate::curve::{curve_stats, wta, CurveStats};
use crate::error::{Error, Result};
use crate::grid::{DisparityMap, GrayImage, Grid};

/// Window sizes of the standard sweep.
pub const WINDOW_SWEEP: [usize; 10] = [5, 7, 9, 11, 13, 15, 17, 19, 21, 31];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WpkrMode {
    /// Weight compares `l(p)` with `l(q)`.
    SameImage,
    /// Weight compares `l(p)` with `r(q)`.
    CrossImage,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasureParams {
    pub sigma_nlm: f64,
    pub sigma_mlm: f64,
    pub s_per: f64,
    pub gamma_lc: f64,
    pub gamma_ps: f64,
    pub wpkr_threshold: f64,
    pub wpkr_mode: WpkrMode,
    /// Default window for windowed measures whose id carries no size.
    pub window: usize,
    pub epsilon_div: f64,
    /// Gradient magnitude marking a disparity discontinuity.
    pub edge_threshold_disparity: f64,
    /// Gradient magnitude marking an intensity edge.
    pub edge_threshold_image: f64,
    /// Penalties used by SGE.
    pub sgm: SgmParams,
}

impl Default for MeasureParams {
    fn default() -> Self {
        Self {
            sigma_nlm: 0.5,
            sigma_mlm: 0.15,
            s_per: 0.1,
            gamma_lc: 0.5,
            gamma_ps: 4.0,
            wpkr_threshold: 10.0,
            wpkr_mode: WpkrMode::SameImage,
            window: 5,
            epsilon_div: 1e-6,
            edge_threshold_disparity: 2.0,
            edge_threshold_image: 20.0,
            sgm: SgmParams::default(),
        }
    }
}

pub fn validate_window(window: usize) -> Result<()> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::InvalidParameter(format!("window must be odd and >= 3, got {window}")));
    }
    Ok(())
}

impl MeasureParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sigma_nlm", self.sigma_nlm),
            ("sigma_mlm", self.sigma_mlm),
            ("s_per", self.s_per),
            ("gamma_lc", self.gamma_lc),
            ("gamma_ps", self.gamma_ps),
            ("epsilon_div", self.epsilon_div),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("wpkr_threshold", self.wpkr_threshold),
            ("edge_threshold_disparity", self.edge_threshold_disparity),
            ("edge_threshold_image", self.edge_threshold_image),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be non-negative, got {v}")));
            }
        }
        validate_window(self.window)?;
        self.sgm.validate()
    }
}

/// Optional input components a measure may need.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Input {
    CostVolume,
    Disparity,
    RightView,
    LeftImage,
    RightImage,
    SelfLeft,
    SelfRight,
    Scanlines,
    PreAggregation,
}

impl Input {
    fn name(self) -> &'static str {
        match self {
            Input::CostVolume => "cost volume",
            Input::Disparity => "disparity map",
            Input::RightView => "right cost volume and disparity",
            Input::LeftImage => "left image",
            Input::RightImage => "right image",
            Input::SelfLeft => "left self-matching volume",
            Input::SelfRight => "right self-matching volume",
            Input::Scanlines => "scanline aggregation result",
            Input::PreAggregation => "pre-aggregation cost volume",
        }
    }
}

/// Everything a measure may read. The left volume, its curve statistics and
/// disparity map are always present; the rest is attached on demand.
#[derive(Clone, Copy)]
pub struct MeasureInputs<'a> {
    pub volume: &'a CostVolume,
    pub stats: &'a Grid<CurveStats>,
    pub disparity: &'a DisparityMap,
    pub right_volume: Option<&'a CostVolume>,
    pub right_disparity: Option<&'a DisparityMap>,
    pub left_image: Option<&'a GrayImage>,
    pub right_image: Option<&'a GrayImage>,
    pub self_left: Option<&'a SelfCostVolume>,
    pub self_right: Option<&'a SelfCostVolume>,
    pub scanlines: Option<&'a ScanlineResult>,
    pub pre_aggregation: Option<&'a CostVolume>,
}

impl<'a> MeasureInputs<'a> {
    pub fn new(volume: &'a CostVolume, stats: &'a Grid<CurveStats>, disparity: &'a DisparityMap) -> Result<Self> {
        let (w, h) = (volume.width(), volume.height());
        if stats.width() != w || stats.height() != h || disparity.width() != w || disparity.height() != h {
            return Err(Error::DimensionMismatch("curve statistics or disparity map".into()));
        }
        Ok(Self {
            volume,
            stats,
            disparity,
            right_volume: None,
            right_disparity: None,
            left_image: None,
            right_image: None,
            self_left: None,
            self_right: None,
            scanlines: None,
            pre_aggregation: None,
        })
    }

    fn check(&self, w: usize, h: usize, what: &str) -> Result<()> {
        if w != self.volume.width() || h != self.volume.height() {
            return Err(Error::DimensionMismatch(format!(
                "{what} is {w}x{h}, expected {}x{}",
                self.volume.width(),
                self.volume.height()
            )));
        }
        Ok(())
    }

    pub fn with_right(mut self, volume: &'a CostVolume, disparity: &'a DisparityMap) -> Result<Self> {
        self.check(volume.width(), volume.height(), "right volume")?;
        self.check(disparity.width(), disparity.height(), "right disparity")?;
        self.right_volume = Some(volume);
        self.right_disparity = Some(disparity);
        Ok(self)
    }

    pub fn with_images(mut self, left: &'a GrayImage, right: &'a GrayImage) -> Result<Self> {
        self.check(left.width(), left.height(), "left image")?;
        self.check(right.width(), right.height(), "right image")?;
        self.left_image = Some(left);
        self.right_image = Some(right);
        Ok(self)
    }

    pub fn with_self_volumes(mut self, left: &'a SelfCostVolume, right: &'a SelfCostVolume) -> Result<Self> {
        self.check(left.width(), left.height(), "left self volume")?;
        self.check(right.width(), right.height(), "right self volume")?;
        self.self_left = Some(left);
        self.self_right = Some(right);
        Ok(self)
    }

    pub fn with_scanlines(mut self, scanlines: &'a ScanlineResult) -> Result<Self> {
        self.check(scanlines.total.width(), scanlines.total.height(), "scanline result")?;
        self.scanlines = Some(scanlines);
        Ok(self)
    }

    pub fn with_pre_aggregation(mut self, volume: &'a CostVolume) -> Result<Self> {
        self.check(volume.width(), volume.height(), "pre-aggregation volume")?;
        self.pre_aggregation = Some(volume);
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.volume.width()
    }

    pub fn height(&self) -> usize {
        self.volume.height()
    }

    pub fn has(&self, input: Input) -> bool {
        match input {
            Input::CostVolume | Input::Disparity => true,
            Input::RightView => self.right_volume.is_some() && self.right_disparity.is_some(),
            Input::LeftImage => self.left_image.is_some(),
            Input::RightImage => self.right_image.is_some(),
            Input::SelfLeft => self.self_left.is_some(),
            Input::SelfRight => self.self_right.is_some(),
            Input::Scanlines => self.scanlines.is_some(),
            Input::PreAggregation => self.pre_aggregation.is_some(),
        }
    }

    fn require(&self, input: Input) -> Result<()> {
        if self.has(input) {
            Ok(())
        } else {
            Err(Error::MissingInput(input.name()))
        }
    }

    pub(crate) fn right(&self) -> Result<(&'a CostVolume, &'a DisparityMap)> {
        match (self.right_volume, self.right_disparity) {
            (Some(v), Some(d)) => Ok((v, d)),
            _ => Err(Error::MissingInput(Input::RightView.name())),
        }
    }

    pub(crate) fn left_image(&self) -> Result<&'a GrayImage> {
        self.left_image.ok_or(Error::MissingInput(Input::LeftImage.name()))
    }

    pub(crate) fn right_image(&self) -> Result<&'a GrayImage> {
        self.right_image.ok_or(Error::MissingInput(Input::RightImage.name()))
    }

    pub(crate) fn self_left(&self) -> Result<&'a SelfCostVolume> {
        self.self_left.ok_or(Error::MissingInput(Input::SelfLeft.name()))
    }

    pub(crate) fn self_right(&self) -> Result<&'a SelfCostVolume> {
        self.self_right.ok_or(Error::MissingInput(Input::SelfRight.name()))
    }

    pub(crate) fn scanlines(&self) -> Result<&'a ScanlineResult> {
        self.scanlines.ok_or(Error::MissingInput(Input::Scanlines.name()))
    }

    pub(crate) fn pre_aggregation(&self) -> Result<&'a CostVolume> {
        self.pre_aggregation.ok_or(Error::MissingInput(Input::PreAggregation.name()))
    }

    /// `x` coordinate of `p^r`, clamped to the image.
    #[inline]
    pub(crate) fn xr(&self, x: usize, y: usize) -> usize {
        x.saturating_sub(self.disparity.get(x, y).round().max(0.0) as usize)
    }
}

/// Owned bundle of the always-required inputs, for callers that start from a
/// bare volume.
pub struct VolumeAnalysis {
    pub stats: Grid<CurveStats>,
    pub disparity: DisparityMap,
}

impl VolumeAnalysis {
    pub fn new(volume: &CostVolume) -> Self {
        Self {
            stats: curve_stats(volume),
            disparity: wta(volume),
        }
    }

    pub fn inputs<'a>(&'a self, volume: &'a CostVolume) -> Result<MeasureInputs<'a>> {
        MeasureInputs::new(volume, &self.stats, &self.disparity)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    LocalCurve,
    WindowedPeak,
    FullCurve,
    LeftRight,
    DisparityMap,
    Image,
    SelfMatching,
    Sgm,
}

macro_rules! measure_kinds {
    ($($kind:ident),* $(,)?) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum MeasureKind { $($kind),* }

        impl MeasureKind {
            pub const ALL: &'static [MeasureKind] = &[$(MeasureKind::$kind),*];

            pub fn name(self) -> &'static str {
                match self { $(MeasureKind::$kind => stringify!($kind)),* }
            }
        }
    };
}

measure_kinds!(
    MSM, MM, MMN, NLM, NLMN, CUR, LC, PKR, PKRN, DAM, //
    APKR, APKRN, WPKR, WPKRN, LMN, SGE, //
    PER, MLM, ALM, NEM, NOI, WMN, WMNN, PWCFA, //
    LRC, LRD, ZSAD, ACC, UC, UCC, UCO, //
    DTD, DMV, VAR, SKEW, MDD, MND, DA, DS, MED, //
    DB, DLB, HGM, DTE, IVAR, //
    DTS, DSM, SAMM, //
    SCS, PS,
);

/// Static description of one measure.
#[derive(Clone, Debug, Serialize)]
pub struct CatalogEntry {
    pub id: &'static str,
    pub family: Family,
    pub formula: &'static str,
    pub requires: &'static [Input],
    pub params: &'static [&'static str],
    pub windowed: bool,
    /// Sign with which the formula's value grows with confidence as written.
    pub verbatim_sign: i8,
    /// Sign applied to raw values to obtain evaluation scores.
    pub evaluation_sign: i8,
    /// False for auxiliary maps that are features but not confidences.
    pub evaluable: bool,
    pub notes: &'static str,
}

use Input as I;

const NONE: &[Input] = &[];

impl MeasureKind {
    pub fn family(self) -> Family {
        use MeasureKind::*;
        match self {
            MSM | MM | MMN | NLM | NLMN | CUR | LC | PKR | PKRN | DAM => Family::LocalCurve,
            APKR | APKRN | WPKR | WPKRN | LMN | SGE => Family::WindowedPeak,
            PER | MLM | ALM | NEM | NOI | WMN | WMNN | PWCFA => Family::FullCurve,
            LRC | LRD | ZSAD | ACC | UC | UCC | UCO => Family::LeftRight,
            DTD | DMV | VAR | SKEW | MDD | MND | DA | DS | MED => Family::DisparityMap,
            DB | DLB | HGM | DTE | IVAR => Family::Image,
            DTS | DSM | SAMM => Family::SelfMatching,
            SCS | PS => Family::Sgm,
        }
    }

    pub fn is_windowed(self) -> bool {
        use MeasureKind::*;
        matches!(
            self,
            APKR | APKRN | WPKR | WPKRN | LMN | SGE | ZSAD | VAR | SKEW | MDD | MND | DA | DS | MED | IVAR
        )
    }

    /// Inputs needed beyond the cost volume and disparity map.
    pub fn requires(self, params: &MeasureParams) -> &'static [Input] {
        use MeasureKind::*;
        match self {
            WPKR | WPKRN if params.wpkr_mode == WpkrMode::CrossImage => &[I::LeftImage, I::RightImage],
            WPKR | WPKRN => &[I::LeftImage],
            LRC | LRD => &[I::RightView],
            ZSAD => &[I::LeftImage, I::RightImage],
            HGM | DTE | IVAR => &[I::LeftImage],
            DTS | SAMM => &[I::SelfLeft],
            DSM => &[I::SelfLeft, I::SelfRight],
            SCS => &[I::Scanlines],
            PS => &[I::PreAggregation],
            _ => NONE,
        }
    }

    pub fn catalog_entry(self) -> CatalogEntry {
        use MeasureKind::*;
        let defaults = MeasureParams::default();
        let (formula, params, verbatim_sign, evaluation_sign, notes): (&str, &[&str], i8, i8, &str) = match self {
            MSM => ("-c_d1", &[], -1, 1, ""),
            MM => ("c_d2m - c_d1", &[], 1, 1, "falls back to c_d2 when no second local minimum exists"),
            MMN => ("c_d2 - c_d1", &[], 1, 1, ""),
            NLM => ("exp((c_d2m - c_d1) / (2 sigma^2))", &["sigma_nlm"], 1, 1, ""),
            NLMN => ("exp((c_d2 - c_d1) / (2 sigma^2))", &["sigma_nlm"], 1, 1, ""),
            CUR => ("-2 c_d1 + c_(d1-1) + c_(d1+1)", &[], 1, 1, "missing neighbor at the range border mirrored"),
            LC => ("(max(c_(d1-1), c_(d1+1)) - c_d1) / gamma", &["gamma_lc"], 1, 1, "missing neighbor mirrored"),
            PKR => ("c_d2m / c_d1", &["epsilon_div"], 1, 1, ""),
            PKRN => ("c_d2 / c_d1", &["epsilon_div"], 1, 1, ""),
            DAM => ("|d1 - d2|", &[], 1, -1, "larger ambiguity distance means lower confidence"),
            APKR => ("sum_q c_d2m(p)(q) / c_d1(p)(q)", &["window", "epsilon_div"], 1, 1, ""),
            APKRN => ("sum_q c_d2(p)(q) / c_d1(p)(q)", &["window", "epsilon_div"], 1, 1, ""),
            WPKR => (
                "sum_q a(p,q) c_d2m(p)(q) / c_d1(p)(q), a = [|l(p) - l(q)| < w]",
                &["window", "wpkr_threshold", "wpkr_mode", "epsilon_div"],
                1,
                1,
                "",
            ),
            WPKRN => (
                "sum_q a(p,q) c_d2(p)(q) / c_d1(p)(q), a = [|l(p) - l(q)| < w]",
                &["window", "wpkr_threshold", "wpkr_mode", "epsilon_div"],
                1,
                1,
                "",
            ),
            LMN => ("#{q in N(p): c_d1(p)(q) is a local minimum of c(q)}", &["window"], 1, 1, ""),
            SGE => (
                "sum over 4 axis rays of c_d1(q) + P1 [|dd1| = 1] + P2 [|dd1| > 1]",
                &["window", "sgm.p1", "sgm.p2"],
                1,
                -1,
                "energy; ray length equals the window radius",
            ),
            PER => ("sum_(i != d1) exp(-(c_d1 - c_i)^2 / s^2)", &["s_per"], 1, -1, "large when many costs sit near the minimum"),
            MLM => ("exp(-c_d1 / (2 sigma)) / sum_i exp(-c_i / (2 sigma))", &["sigma_mlm"], 1, 1, ""),
            ALM => ("1 / sum_i exp(-c_i / (2 sigma))", &["sigma_mlm"], 1, 1, ""),
            NEM => ("p log p, p = exp(-c_d1) / sum_i exp(-c_i)", &[], 1, 1, "single term"),
            NOI => ("#{i: c_i < c_(i-1) and c_i < c_(i+1)}", &[], 1, -1, "more local minima means lower confidence"),
            WMN => ("(c_d2m - c_d1) / sum_i c_i", &["epsilon_div"], 1, 1, ""),
            WMNN => ("(c_d2 - c_d1) / sum_i c_i", &["epsilon_div"], 1, 1, ""),
            PWCFA => (
                "1 / sum_i max(min(|i - d1| - 1, 1/3), 0)^2 / max(c_i - c_d1 - sum_j c_j / (3 d_max), 1)",
                &["epsilon_div"],
                1,
                1,
                "range term replaced by 1/3 for [0,1] costs",
            ),
            LRC => ("-|d1(p) - d1^r(p^r)|", &[], -1, 1, ""),
            LRD => ("(c_d2 - c_d1) / |c_d1(p) - c^r_d1r(p^r)|", &["epsilon_div"], 1, 1, ""),
            ZSAD => (
                "sum_q |l(q) - mu_l(p) - r(q^r) + mu_r(p^r)|",
                &["window"],
                1,
                -1,
                "dissimilarity; borders replicated",
            ),
            ACC => ("0 if p collides and d1(p) is not the max or c_d1(p) not the min of the group, else 1", &[], 1, 1, ""),
            UC => ("0 if p collides and c_d1(p) is not the min of the group, else 1", &[], 1, 1, ""),
            UCC => (
                "0 if p collides and c_d1(p) is not the min of the group, else -c_d1",
                &[],
                1,
                1,
                "colliding losers are scored below every winner",
            ),
            UCO => ("-#{q != p: q^r = p^r}", &[], -1, 1, ""),
            DTD => ("min distance to a disparity edge", &["edge_threshold_disparity"], 1, 1, "two-pass chamfer"),
            DMV => ("||grad d1||", &[], 1, -1, "strong disparity gradients mean lower confidence"),
            VAR => ("-mean_q (d1(q) - mu)^2", &["window"], -1, 1, ""),
            SKEW => ("-mean_q (d1(q) - mu)^3", &["window"], -1, 1, ""),
            MDD => ("-|d1(p) - median(d1)|", &["window"], -1, 1, ""),
            MND => ("-|d1(p) - mu(d1)|", &["window"], -1, 1, ""),
            DA => ("H[d1(p)](p)", &["window"], 1, 1, ""),
            DS => ("-log(#distinct(d1) / #N(p))", &["window"], 1, 1, "fewer distinct hypotheses give larger values"),
            MED => ("median_q d1(q)", &["window"], 1, 1, "auxiliary feature, lower median"),
            DB => ("min(x, y, W - x, H - y)", &[], 1, 1, ""),
            DLB => ("min(x, d_max)", &[], 1, 1, ""),
            HGM => ("|grad_x l|", &[], 1, 1, ""),
            DTE => ("min distance to an intensity edge", &["edge_threshold_image"], 1, 1, "two-pass chamfer"),
            IVAR => ("mean_q (l(q) - mu_l)^2", &["window"], 1, 1, ""),
            DTS => ("min_(o != 0) c^ll_o", &[], 1, 1, "offset 0 excluded"),
            DSM => ("DTS^l(p) DTS^r(p^r) / c_d1(p)^2", &["epsilon_div"], 1, 1, ""),
            SAMM => ("corr_o(c_(o+d1), c^ll_o)", &[], 1, 1, "0 when either curve is constant"),
            SCS => ("#{s: d1^s(p) = d1(p)}", &[], 1, 1, "scanline aggregation only"),
            PS => (
                "(c*_d2 - c*_d1) / c*_d1 (1 - min(|d*2 - d*1|, g)/g) (1 - min(|d*1 - d1|, g)/g)",
                &["gamma_ps", "epsilon_div"],
                1,
                1,
                "starred values after aggregation, d1 before it",
            ),
        };
        CatalogEntry {
            id: self.name(),
            family: self.family(),
            formula,
            requires: self.requires(&defaults),
            params,
            windowed: self.is_windowed(),
            verbatim_sign,
            evaluation_sign,
            evaluable: self != MED,
            notes,
        }
    }

    pub fn evaluation_sign(self) -> f64 {
        self.catalog_entry().evaluation_sign as f64
    }
}

/// The full catalog.
pub fn catalog() -> Vec<CatalogEntry> {
    MeasureKind::ALL.iter().map(|k| k.catalog_entry()).collect()
}

/// A measure and, for windowed measures, its window size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MeasureId {
    pub kind: MeasureKind,
    pub window: Option<usize>,
}

impl MeasureId {
    pub fn new(kind: MeasureKind) -> Self {
        Self { kind, window: None }
    }

    pub fn windowed(kind: MeasureKind, window: usize) -> Result<Self> {
        if !kind.is_windowed() {
            return Err(Error::UnknownMeasure(format!("{}_{window}", kind.name())));
        }
        validate_window(window)?;
        Ok(Self {
            kind,
            window: Some(window),
        })
    }

    pub fn window_or(&self, params: &MeasureParams) -> usize {
        self.window.unwrap_or(params.window)
    }
}

impl fmt::Display for MeasureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.window {
            Some(w) => write!(f, "{}_{w}", self.kind.name()),
            None => f.write_str(self.kind.name()),
        }
    }
}

impl FromStr for MeasureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MeasureKind::ALL
            .iter()
            .copied()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownMeasure(s.to_string()))
    }
}

impl FromStr for MeasureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Ok(kind) = s.parse::<MeasureKind>() {
            return Ok(MeasureId::new(kind));
        }
        let (name, size) = s.rsplit_once('_').ok_or_else(|| Error::UnknownMeasure(s.to_string()))?;
        let kind: MeasureKind = name.parse().map_err(|_| Error::UnknownMeasure(s.to_string()))?;
        let window: usize = size.parse().map_err(|_| Error::UnknownMeasure(s.to_string()))?;
        MeasureId::windowed(kind, window)
    }
}

impl Serialize for MeasureId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MeasureId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Per-pixel confidence for one measure.
#[derive(Clone, Debug)]
pub struct ConfidenceMap {
    pub id: MeasureId,
    /// Formula value as written.
    pub raw: Grid<f64>,
    /// Evaluation-oriented: larger is more confident.
    pub scores: Grid<f64>,
    pub params: MeasureParams,
}

impl ConfidenceMap {
    pub fn width(&self) -> usize {
        self.raw.width()
    }

    pub fn height(&self) -> usize {
        self.raw.height()
    }
}

pub(crate) fn pixel_map(w: usize, h: usize, f: impl Fn(usize, usize) -> f64 + Sync + Send) -> Grid<f64> {
    let mut out = Grid::filled(w, h, 0f64);
    crate::par::for_each_row(out.as_mut_slice(), w, |y, row| {
        for (x, v) in row.iter_mut().enumerate() {
            *v = f(x, y);
        }
    });
    out
}

/// Division guarded by `max(den, eps)`.
#[inline]
pub(crate) fn guarded(num: f64, den: f64, eps: f64) -> f64 {
    num / den.max(eps)
}

fn finalize(id: MeasureId, raw: Grid<f64>, params: &MeasureParams, inputs: &MeasureInputs) -> ConfidenceMap {
    let raw = raw.map(|&v| {
        if v.is_nan() {
            0.0
        } else {
            v.clamp(-f64::MAX, f64::MAX)
        }
    });
    let scores = if id.kind == MeasureKind::UCC {
        lr::ucc_scores(&raw, inputs)
    } else {
        let sign = id.kind.evaluation_sign();
        raw.map(|&v| sign * v)
    };
    ConfidenceMap {
        id,
        raw,
        scores,
        params: *params,
    }
}

/// Computes one measure.
pub fn compute_measure(inputs: &MeasureInputs, params: &MeasureParams, id: MeasureId) -> Result<ConfidenceMap> {
    params.validate()?;
    for &input in id.kind.requires(params) {
        inputs.require(input)?;
    }
    let window = id.window_or(params);
    if id.kind.is_windowed() {
        validate_window(window)?;
    } else if id.window.is_some() {
        return Err(Error::UnknownMeasure(id.to_string()));
    }
    let raw = match id.kind.family() {
        Family::LocalCurve => local::compute(id.kind, inputs, params),
        Family::WindowedPeak => windowed::compute(id.kind, window, inputs, params)?,
        Family::FullCurve => full::compute(id.kind, inputs, params),
        Family::LeftRight => lr::compute(id.kind, window, inputs, params)?,
        Family::DisparityMap => dispmap::compute(id.kind, window, inputs, params),
        Family::Image => image::compute(id.kind, window, inputs, params)?,
        Family::SelfMatching => selfmatch::compute(id.kind, inputs, params)?,
        Family::Sgm => sgm::compute(id.kind, inputs, params)?,
    };
    Ok(finalize(id, raw, params, inputs))
}

/// Computes several measures, independently and in order.
pub fn compute_measures(
    inputs: &MeasureInputs,
    params: &MeasureParams,
    ids: &[MeasureId],
) -> Result<Vec<ConfidenceMap>> {
    ids.iter().map(|&id| compute_measure(inputs, params, id)).collect()
}

fn family_op(
    family: Family,
    inputs: &MeasureInputs,
    params: &MeasureParams,
    ids: &[MeasureId],
) -> Result<Vec<ConfidenceMap>> {
    if let Some(bad) = ids.iter().find(|id| id.kind.family() != family) {
        return Err(Error::InvalidParameter(format!("{bad} does not belong to the {family:?} family")));
    }
    compute_measures(inputs, params, ids)
}

pub fn local_curve_measures(inputs: &MeasureInputs, params: &MeasureParams, ids: &[MeasureId]) -> Result<Vec<ConfidenceMap>> {
    family_op(Family::LocalCurve, inputs, params, ids)
}

pub fn windowed_peak_measures(inputs: &MeasureInputs, params: &MeasureParams, ids: &[MeasureId]) -> Result<Vec<ConfidenceMap>> {
    family_op(Family::WindowedPeak, inputs, params, ids)
}

pub fn full_curve_measures(inputs: &MeasureInputs, params: &MeasureParams, ids: &[MeasureId]) -> Result<Vec<ConfidenceMap>> {
    family_op(Family::FullCurve, inputs, params, ids)
}

pub fn lr_measures(inputs: &MeasureInputs, params: &MeasureParams, ids: &[MeasureId]) -> Result<Vec<ConfidenceMap>> {
    family_op(Family::LeftRight, inputs, params, ids)
}

pub fn disparity_map_measures(inputs: &MeasureInputs, params: &MeasureParams, ids: &[MeasureId]) -> Result<Vec<ConfidenceMap>> {
    family_op(Family::DisparityMap, inputs, params, ids)
}

pub fn image_measures(inputs: &MeasureInputs, params: &MeasureParams, ids: &[MeasureId]) -> Result<Vec<ConfidenceMap>> {
    family_op(Family::Image, inputs, params, ids)
}

pub fn self_matching_measures(inputs: &MeasureInputs, params: &MeasureParams, ids: &[MeasureId]) -> Result<Vec<ConfidenceMap>> {
    family_op(Family::SelfMatching, inputs, params, ids)
}

pub fn sgm_measures(inputs: &MeasureInputs, params: &MeasureParams, ids: &[MeasureId]) -> Result<Vec<ConfidenceMap>> {
    family_op(Family::Sgm, inputs, params, ids)
}

/// Measures that can be evaluated as confidences, optionally including the
/// scanline-aggregation-only family. Windowed measures use the default
/// window.
pub fn evaluable_measures(include_sgm: bool) -> Vec<MeasureId> {
    MeasureKind::ALL
        .iter()
        .copied()
        .filter(|k| k.catalog_entry().evaluable)
        .filter(|k| include_sgm || k.family() != Family::Sgm)
        .map(MeasureId::new)
        .collect()
}
