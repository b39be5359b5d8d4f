//! Cost aggregation: cross-based adaptive support (CBCA) and 4-path
//! semi-global matching.

use serde::{Deserialize, Serialize};

use crate::costvol::CostVolume;
use crate::curve::wta;
use crate::error::{Error, Result};
use crate::grid::{DisparityMap, GrayImage, Grid};
use crate::par;

/// Arm lengths of one pixel's cross, in pixels, excluding the anchor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Arms {
    pub left: u16,
    pub right: u16,
    pub up: u16,
    pub down: u16,
}

impl Arms {
    fn min(self, o: Arms) -> Arms {
        Arms {
            left: self.left.min(o.left),
            right: self.right.min(o.right),
            up: self.up.min(o.up),
            down: self.down.min(o.down),
        }
    }
}

pub type CrossMap = Grid<Arms>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CbcaParams {
    pub max_arm: usize,
    /// Intensity threshold on the 8-bit scale.
    pub tau_color: f32,
    pub iterations: usize,
}

impl Default for CbcaParams {
    fn default() -> Self {
        Self {
            max_arm: 17,
            tau_color: 20.0,
            iterations: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgmParams {
    pub p1: f32,
    pub p2: f32,
}

impl Default for SgmParams {
    fn default() -> Self {
        Self { p1: 0.03, p2: 0.12 }
    }
}

impl SgmParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.p1.is_finite() && self.p2.is_finite() && self.p1 >= 0.0 && self.p1 <= self.p2;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "SGM penalties need 0 <= P1 <= P2, got P1={} P2={}",
                self.p1, self.p2
            )))
        }
    }
}

/// Arms grow while the spatial distance stays below `max_arm` and the
/// intensity difference to the anchor stays below `tau_color`.
pub fn build_cross(img: &GrayImage, max_arm: usize, tau_color: f32) -> Result<CrossMap> {
    if max_arm < 1 {
        return Err(Error::InvalidParameter("max_arm must be >= 1".into()));
    }
    let (w, h) = (img.width() as isize, img.height() as isize);
    let arm = |x: isize, y: isize, dx: isize, dy: isize| -> u16 {
        let anchor = img.get(x as usize, y as usize) as f32;
        let mut len = 0;
        for k in 1..max_arm as isize {
            let (qx, qy) = (x + k * dx, y + k * dy);
            if qx < 0 || qy < 0 || qx >= w || qy >= h {
                break;
            }
            if (img.get(qx as usize, qy as usize) as f32 - anchor).abs() >= tau_color {
                break;
            }
            len = k as u16;
        }
        len
    };
    Ok(Grid::from_fn(img.width(), img.height(), |x, y| {
        let (x, y) = (x as isize, y as isize);
        Arms {
            left: arm(x, y, -1, 0),
            right: arm(x, y, 1, 0),
            up: arm(x, y, 0, -1),
            down: arm(x, y, 0, 1),
        }
    }))
}

/// Replaces every cost by the mean over the combined support `U_d(p)`: the
/// left cross of `p` intersected with the right cross of `p - d`, built as
/// horizontal segments hanging off the vertical arm. Repeated `iterations`
/// times.
pub fn cbca_aggregate(
    vol: &CostVolume,
    cross_left: &CrossMap,
    cross_right: &CrossMap,
    iterations: usize,
) -> Result<CostVolume> {
    let (w, h, levels) = (vol.width(), vol.height(), vol.levels());
    if cross_left.width() != w
        || cross_left.height() != h
        || !cross_left.same_shape(cross_right)
    {
        return Err(Error::DimensionMismatch("cross maps do not match the volume".into()));
    }
    let mut current = vol.clone();
    for _ in 0..iterations {
        let slices = par::map_range(levels, |d| {
            aggregate_slice(&current, d, cross_left, cross_right)
        });
        let mut next = CostVolume::zeros(w, h, levels);
        let out = next.as_mut_slice();
        for (d, slice) in slices.iter().enumerate() {
            for (i, &v) in slice.iter().enumerate() {
                out[i * levels + d] = v;
            }
        }
        current = next;
    }
    Ok(current)
}

fn aggregate_slice(vol: &CostVolume, d: usize, left: &CrossMap, right: &CrossMap) -> Vec<f32> {
    let (w, h) = (vol.width(), vol.height());
    let arms = Grid::from_fn(w, h, |x, y| left.get(x, y).min(right.get(x.saturating_sub(d), y)));

    // Horizontal segment sums and sizes.
    let mut hsum = vec![0f64; w * h];
    let mut hcount = vec![0u32; w * h];
    let mut prefix = vec![0f64; w + 1];
    for y in 0..h {
        for x in 0..w {
            prefix[x + 1] = prefix[x] + vol.cost(x, y, d) as f64;
        }
        for x in 0..w {
            let a = arms.get(x, y);
            let (lo, hi) = (x - a.left as usize, x + a.right as usize);
            hsum[y * w + x] = prefix[hi + 1] - prefix[lo];
            hcount[y * w + x] = (hi - lo + 1) as u32;
        }
    }

    // Vertical gather along the arm of the anchor.
    let mut out = vec![0f32; w * h];
    let mut psum = vec![0f64; h + 1];
    let mut pcount = vec![0u64; h + 1];
    for x in 0..w {
        for y in 0..h {
            psum[y + 1] = psum[y] + hsum[y * w + x];
            pcount[y + 1] = pcount[y] + hcount[y * w + x] as u64;
        }
        for y in 0..h {
            let a = arms.get(x, y);
            let (lo, hi) = (y - a.up as usize, y + a.down as usize);
            let s = psum[hi + 1] - psum[lo];
            let n = pcount[hi + 1] - pcount[lo];
            out[y * w + x] = (s / n as f64) as f32;
        }
    }
    out
}

/// Census-style CBCA over a pair: crosses from both images, then
/// [`cbca_aggregate`].
pub fn cbca_pair(vol: &CostVolume, left: &GrayImage, right: &GrayImage, params: &CbcaParams) -> Result<CostVolume> {
    let cl = build_cross(left, params.max_arm, params.tau_color)?;
    let cr = build_cross(right, params.max_arm, params.tau_color)?;
    cbca_aggregate(vol, &cl, &cr, params.iterations)
}

/// The four scanline directions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScanPath {
    LeftToRight,
    RightToLeft,
    TopToBottom,
    BottomToTop,
}

impl ScanPath {
    pub const ALL: [ScanPath; 4] = [
        ScanPath::LeftToRight,
        ScanPath::RightToLeft,
        ScanPath::TopToBottom,
        ScanPath::BottomToTop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScanPath::LeftToRight => "lr",
            ScanPath::RightToLeft => "rl",
            ScanPath::TopToBottom => "tb",
            ScanPath::BottomToTop => "bt",
        }
    }
}

/// Outputs of semi-global aggregation.
#[derive(Clone, Debug)]
pub struct ScanlineResult {
    /// Per-path aggregated costs `C_s`, in [`ScanPath::ALL`] order.
    pub paths: Vec<CostVolume>,
    /// Per-path winner-take-all disparities `d^s_1`.
    pub path_disparities: Vec<DisparityMap>,
    /// `C_SGM = Σ_s C_s`, unnormalized.
    pub total: CostVolume,
    /// Upper bound of `C_SGM`: `|S| · (max(1, max C) + P2)`.
    pub bound: f32,
}

impl ScanlineResult {
    /// `C_SGM / bound`: a `[0, 1]` volume preserving cost ratios.
    pub fn normalized(&self) -> CostVolume {
        let inv = if self.bound > 0.0 { 1.0 / self.bound } else { 0.0 };
        let mut out = self.total.clone();
        out.as_mut_slice()
            .iter_mut()
            .for_each(|c| *c = (*c * inv).clamp(0.0, 1.0));
        out
    }

    /// `c^z_{d^s_1}(p)`: cost of path `z` at the disparity chosen by path `s`.
    pub fn cross_cost(&self, x: usize, y: usize, s: usize, z: usize) -> f32 {
        let d = self.path_disparities[s].get(x, y) as usize;
        self.paths[z].cost(x, y, d)
    }
}

/// One step of the scanline recurrence:
/// `L(p,d) = C(p,d) + min[L(q,d), L(q,d±1)+P1, min_o L(q,o)+P2] - min_k L(q,k)`.
#[inline]
fn sgm_step(cost: &[f32], prev: &[f32], out: &mut [f32], p1: f32, p2: f32) {
    let min_prev = prev.iter().copied().fold(f32::INFINITY, f32::min);
    let levels = cost.len();
    for d in 0..levels {
        let mut best = prev[d];
        if d > 0 {
            best = best.min(prev[d - 1] + p1);
        }
        if d + 1 < levels {
            best = best.min(prev[d + 1] + p1);
        }
        best = best.min(min_prev + p2);
        out[d] = cost[d] + best - min_prev;
    }
}

/// Aggregates the volume along a single direction.
pub fn scanline_aggregate(vol: &CostVolume, path: ScanPath, params: &SgmParams) -> Result<CostVolume> {
    params.validate()?;
    let (w, h, levels) = (vol.width(), vol.height(), vol.levels());
    let (p1, p2) = (params.p1, params.p2);
    let mut out = CostVolume::zeros(w, h, levels);
    let row_len = w * levels;
    match path {
        ScanPath::LeftToRight | ScanPath::RightToLeft => {
            let forward = path == ScanPath::LeftToRight;
            par::for_each_row(out.as_mut_slice(), row_len, |y, row| {
                let src = &vol.as_slice()[y * row_len..(y + 1) * row_len];
                let first = if forward { 0 } else { w - 1 };
                row[first * levels..(first + 1) * levels]
                    .copy_from_slice(&src[first * levels..(first + 1) * levels]);
                for k in 1..w {
                    let (x, q) = if forward { (k, k - 1) } else { (w - 1 - k, w - k) };
                    let (a, b) = row.split_at_mut(x.max(q) * levels);
                    let (prev, cur) = if forward {
                        (&a[q * levels..], &mut b[..levels])
                    } else {
                        (&b[..levels], &mut a[x * levels..])
                    };
                    sgm_step(&src[x * levels..(x + 1) * levels], prev, &mut cur[..levels], p1, p2);
                }
            });
        }
        ScanPath::TopToBottom | ScanPath::BottomToTop => {
            let forward = path == ScanPath::TopToBottom;
            let data = out.as_mut_slice();
            let first = if forward { 0 } else { h - 1 };
            data[first * row_len..(first + 1) * row_len]
                .copy_from_slice(&vol.as_slice()[first * row_len..(first + 1) * row_len]);
            for k in 1..h {
                let (y, q) = if forward { (k, k - 1) } else { (h - 1 - k, h - k) };
                let (a, b) = data.split_at_mut(y.max(q) * row_len);
                let (prev, cur) = if forward {
                    (&a[q * row_len..], &mut b[..row_len])
                } else {
                    (&b[..row_len], &mut a[y * row_len..(y + 1) * row_len])
                };
                let src = &vol.as_slice()[y * row_len..(y + 1) * row_len];
                for x in 0..w {
                    let r = x * levels..(x + 1) * levels;
                    sgm_step(&src[r.clone()], &prev[r.clone()], &mut cur[r], p1, p2);
                }
            }
        }
    }
    Ok(out)
}

/// Four-path SGM. Every path starts with `L = C` on its first pixel.
pub fn sgm_aggregate(vol: &CostVolume, params: &SgmParams) -> Result<ScanlineResult> {
    params.validate()?;
    let paths = par::map_range(4, |i| scanline_aggregate(vol, ScanPath::ALL[i], params))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut total = CostVolume::zeros(vol.width(), vol.height(), vol.levels());
    for p in &paths {
        for (t, c) in total.as_mut_slice().iter_mut().zip(p.as_slice()) {
            *t += c;
        }
    }
    let path_disparities = paths.iter().map(wta).collect();
    let max_cost = vol.as_slice().iter().copied().fold(1.0f32, f32::max);
    Ok(ScanlineResult {
        paths,
        path_disparities,
        total,
        bound: 4.0 * (max_cost + params.p2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve_volume(curves: &[&[f32]]) -> CostVolume {
        let levels = curves[0].len();
        let data = curves.iter().flat_map(|c| c.iter().copied()).collect();
        CostVolume::new(curves.len(), 1, levels, data).unwrap()
    }

    #[test]
    fn constant_image_arms_reach_max_minus_one() {
        let img = GrayImage::from_fn(40, 40, |_, _| 100);
        let cross = build_cross(&img, 17, 20.0).unwrap();
        let a = cross.get(20, 20);
        assert_eq!((a.left, a.right, a.up, a.down), (16, 16, 16, 16));
    }

    #[test]
    fn arms_stop_at_step_edge() {
        let img = GrayImage::from_fn(20, 5, |x, _| if x < 10 { 10 } else { 200 });
        let cross = build_cross(&img, 17, 20.0).unwrap();
        assert_eq!(cross.get(7, 2).right, 2);
        assert_eq!(cross.get(12, 2).left, 2);
        assert_eq!(cross.get(9, 2).right, 0);
    }

    #[test]
    fn corner_arms_are_truncated() {
        let img = GrayImage::from_fn(6, 6, |_, _| 0);
        let a = build_cross(&img, 17, 20.0).unwrap().get(0, 0);
        assert_eq!((a.left, a.up), (0, 0));
        assert_eq!((a.right, a.down), (5, 5));
    }

    #[test]
    fn singleton_support_is_identity() {
        let img = GrayImage::from_fn(7, 5, |x, y| (x * 30 + y) as u8);
        let vol = CostVolume::from_fn(7, 5, 3, |x, y, d| ((x * 7 + y * 3 + d) % 11) as f32 / 11.0);
        let cross = build_cross(&img, 17, 0.0).unwrap();
        let out = cbca_aggregate(&vol, &cross, &cross, 3).unwrap();
        assert_eq!(out, vol);
    }

    #[test]
    fn constant_volume_is_unchanged() {
        let img = GrayImage::from_fn(9, 9, |x, _| (x * 5) as u8);
        let vol = CostVolume::from_fn(9, 9, 4, |_, _, _| 0.375);
        let cross = build_cross(&img, 5, 20.0).unwrap();
        let out = cbca_aggregate(&vol, &cross, &cross, 2).unwrap();
        assert!(out.as_slice().iter().all(|&c| (c - 0.375).abs() < 1e-7));
    }

    #[test]
    fn three_pixel_horizontal_support_averages() {
        let img = GrayImage::from_fn(3, 1, |_, _| 50);
        let cross = build_cross(&img, 17, 20.0).unwrap();
        let vol = CostVolume::new(3, 1, 1, vec![0.0, 1.0, 0.0]).unwrap();
        let out = cbca_aggregate(&vol, &cross, &cross, 1).unwrap();
        assert!((out.cost(1, 0, 0) - 1.0 / 3.0).abs() < 1e-7);
    }

    #[test]
    fn sgm_hand_trace() {
        let vol = curve_volume(&[&[0.0, 1.0], &[1.0, 0.0], &[0.0, 1.0]]);
        let params = SgmParams { p1: 1.0, p2: 2.0 };
        let l = scanline_aggregate(&vol, ScanPath::LeftToRight, &params).unwrap();
        assert_eq!(l.curve(1, 0), &[1.0, 1.0]);
        assert_eq!(l.curve(2, 0), &[0.0, 1.0]);
        assert_eq!(wta(&l).get(2, 0), 0.0);
        let r = scanline_aggregate(&vol, ScanPath::RightToLeft, &params).unwrap();
        assert_eq!(r.curve(2, 0), &[0.0, 1.0]);
    }

    #[test]
    fn zero_penalties_keep_per_pixel_argmin() {
        let vol = CostVolume::from_fn(6, 5, 5, |x, y, d| ((x * 13 + y * 29 + d * 7) % 17) as f32 / 17.0);
        let res = sgm_aggregate(&vol, &SgmParams { p1: 0.0, p2: 0.0 }).unwrap();
        assert_eq!(wta(&res.total), wta(&vol));
        assert_eq!(wta(&res.normalized()), wta(&vol));
    }

    #[test]
    fn constant_volume_ties_to_zero() {
        let vol = CostVolume::from_fn(4, 4, 3, |_, _, _| 0.5);
        let res = sgm_aggregate(&vol, &SgmParams::default()).unwrap();
        for pd in &res.path_disparities {
            assert!(pd.as_slice().iter().all(|&d| d == 0.0));
        }
    }

    #[test]
    fn sum_of_paths_and_normalization() {
        let vol = CostVolume::from_fn(5, 4, 4, |x, y, d| ((x + 2 * y + 3 * d) % 5) as f32 / 4.0);
        let res = sgm_aggregate(&vol, &SgmParams::default()).unwrap();
        assert_eq!(res.paths.len(), 4);
        for i in 0..vol.as_slice().len() {
            let s: f32 = res.paths.iter().map(|p| p.as_slice()[i]).sum();
            assert!((s - res.total.as_slice()[i]).abs() < 1e-6);
        }
        assert!(res.normalized().is_normalized());
    }

    #[test]
    fn invalid_penalties_are_rejected() {
        let vol = CostVolume::from_fn(2, 2, 2, |_, _, _| 0.0);
        assert!(sgm_aggregate(&vol, &SgmParams { p1: 0.5, p2: 0.1 }).is_err());
        assert!(sgm_aggregate(&vol, &SgmParams { p1: -0.1, p2: 0.1 }).is_err());
    }

    #[test]
    fn vertical_path_matches_horizontal_on_transpose() {
        let (w, h, levels) = (5, 7, 3);
        let vol = CostVolume::from_fn(w, h, levels, |x, y, d| ((x * 5 + y * 3 + d * 11) % 13) as f32 / 13.0);
        let t = CostVolume::from_fn(h, w, levels, |x, y, d| vol.cost(y, x, d));
        let p = SgmParams { p1: 0.1, p2: 0.3 };
        let v = scanline_aggregate(&vol, ScanPath::BottomToTop, &p).unwrap();
        let hz = scanline_aggregate(&t, ScanPath::RightToLeft, &p).unwrap();
        for y in 0..h {
            for x in 0..w {
                assert_eq!(v.curve(x, y), hz.curve(y, x));
            }
        }
    }
}
