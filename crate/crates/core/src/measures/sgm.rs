use super::{guarded, pixel_map, MeasureInputs, MeasureKind, MeasureParams};
use crate::curve::argmin;
use crate::error::Result;
use crate::grid::Grid;

/// `(c*_d2 - c*_d1) / c*_d1 · (1 - min(|d*2 - d*1|, γ)/γ) · (1 - min(|d*1 - d1|, γ)/γ)`
pub(crate) fn ps(c1: f64, c2: f64, d1s: usize, d2s: usize, d1: usize, gamma: f64, eps: f64) -> f64 {
    let spread = (d2s.abs_diff(d1s) as f64).min(gamma) / gamma;
    let shift = (d1s.abs_diff(d1) as f64).min(gamma) / gamma;
    guarded(c2 - c1, c1, eps) * (1.0 - spread) * (1.0 - shift)
}

pub(super) fn compute(kind: MeasureKind, inputs: &MeasureInputs, params: &MeasureParams) -> Result<Grid<f64>> {
    let (w, h) = (inputs.width(), inputs.height());
    Ok(match kind {
        MeasureKind::SCS => {
            let scan = inputs.scanlines()?;
            pixel_map(w, h, |x, y| {
                let d1 = inputs.disparity.get(x, y);
                scan.path_disparities.iter().filter(|d| d.get(x, y) == d1).count() as f64
            })
        }
        MeasureKind::PS => {
            let pre = inputs.pre_aggregation()?;
            pixel_map(w, h, |x, y| {
                let s = inputs.stats.get(x, y);
                let d1 = argmin(pre.curve(x, y));
                ps(
                    s.c_d1 as f64,
                    s.c_d2 as f64,
                    s.d1,
                    s.d2,
                    d1,
                    params.gamma_ps,
                    params.epsilon_div,
                )
            })
        }
        _ => unreachable!("{kind:?} is not a scanline measure"),
    })
}
