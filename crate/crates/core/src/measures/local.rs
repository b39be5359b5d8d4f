use super::{guarded, pixel_map, MeasureInputs, MeasureKind, MeasureParams};
use crate::curve::CurveStats;
use crate::grid::Grid;

/// Costs either side of `d1`; a missing neighbor mirrors the present one.
#[inline]
fn neighbors(curve: &[f32], d1: usize) -> (f64, f64) {
    let n = curve.len();
    let left = if d1 > 0 { curve[d1 - 1] } else { curve[d1 + 1] };
    let right = if d1 + 1 < n { curve[d1 + 1] } else { curve[d1 - 1] };
    (left as f64, right as f64)
}

pub(crate) fn evaluate(kind: MeasureKind, curve: &[f32], s: &CurveStats, params: &MeasureParams) -> f64 {
    let c1 = s.c_d1 as f64;
    let c2 = s.c_d2 as f64;
    let c2m = s.c_d2m as f64;
    let eps = params.epsilon_div;
    let two_sigma2 = 2.0 * params.sigma_nlm * params.sigma_nlm;
    match kind {
        MeasureKind::MSM => -c1,
        MeasureKind::MM => c2m - c1,
        MeasureKind::MMN => c2 - c1,
        MeasureKind::NLM => ((c2m - c1) / two_sigma2).exp(),
        MeasureKind::NLMN => ((c2 - c1) / two_sigma2).exp(),
        MeasureKind::CUR => {
            let (l, r) = neighbors(curve, s.d1);
            -2.0 * c1 + l + r
        }
        MeasureKind::LC => {
            let (l, r) = neighbors(curve, s.d1);
            (l.max(r) - c1) / params.gamma_lc
        }
        MeasureKind::PKR => guarded(c2m, c1, eps),
        MeasureKind::PKRN => guarded(c2, c1, eps),
        MeasureKind::DAM => s.d1.abs_diff(s.d2) as f64,
        _ => unreachable!("{kind:?} is not a local curve measure"),
    }
}

pub(super) fn compute(kind: MeasureKind, inputs: &MeasureInputs, params: &MeasureParams) -> Grid<f64> {
    pixel_map(inputs.width(), inputs.height(), |x, y| {
        evaluate(kind, inputs.volume.curve(x, y), &inputs.stats.get(x, y), params)
    })
}
