use super::{guarded, pixel_map, MeasureInputs, MeasureKind, MeasureParams};
use crate::costvol::SelfCostVolume;
use crate::error::Result;
use crate::grid::Grid;

/// Smallest self-matching cost over every non-zero offset whose target
/// column lies inside the image (0 when there is none).
#[inline]
pub(crate) fn distinctiveness(vol: &SelfCostVolume, x: usize, y: usize) -> f64 {
    let center = vol.d_max() as isize;
    let w = vol.width() as isize;
    let best = vol
        .curve(x, y)
        .iter()
        .enumerate()
        .filter(|&(i, _)| {
            let offset = i as isize - center;
            let xq = x as isize - offset;
            offset != 0 && (0..w).contains(&xq)
        })
        .map(|(_, &c)| c as f64)
        .fold(f64::INFINITY, f64::min);
    if best.is_finite() {
        best
    } else {
        0.0
    }
}

/// Pearson correlation between `c_(o + d1)` and `c^ll_o` over the offsets
/// where both are defined.
pub(crate) fn samm(curve: &[f32], d1: usize, self_curve: &[f32], self_d_max: usize) -> f64 {
    let pairs: Vec<(f64, f64)> = self_curve
        .iter()
        .enumerate()
        .filter_map(|(j, &cll)| {
            let i = j as isize - self_d_max as isize + d1 as isize;
            (i >= 0 && (i as usize) < curve.len()).then(|| (curve[i as usize] as f64, cll as f64))
        })
        .collect();
    if pairs.len() < 2 {
        return 0.0;
    }
    let n = pairs.len() as f64;
    let ma = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mb = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0f64, 0f64, 0f64);
    for &(a, b) in &pairs {
        sab += (a - ma) * (b - mb);
        saa += (a - ma) * (a - ma);
        sbb += (b - mb) * (b - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

pub(super) fn compute(kind: MeasureKind, inputs: &MeasureInputs, params: &MeasureParams) -> Result<Grid<f64>> {
    let (w, h) = (inputs.width(), inputs.height());
    let left = inputs.self_left()?;
    Ok(match kind {
        MeasureKind::DTS => pixel_map(w, h, |x, y| distinctiveness(left, x, y)),
        MeasureKind::DSM => {
            let right = inputs.self_right()?;
            pixel_map(w, h, |x, y| {
                let c1 = inputs.stats.get(x, y).c_d1 as f64;
                let xr = inputs.xr(x, y);
                guarded(distinctiveness(left, x, y) * distinctiveness(right, xr, y), c1 * c1, params.epsilon_div)
            })
        }
        MeasureKind::SAMM => pixel_map(w, h, |x, y| {
            let s = inputs.stats.get(x, y);
            samm(inputs.volume.curve(x, y), s.d1, left.curve(x, y), left.d_max())
        }),
        _ => unreachable!("{kind:?} is not a self-matching measure"),
    })
}
