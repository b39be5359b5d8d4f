use super::{guarded, pixel_map, MeasureInputs, MeasureKind, MeasureParams};
use crate::curve::CurveStats;
use crate::grid::Grid;

pub(crate) fn evaluate(kind: MeasureKind, curve: &[f32], s: &CurveStats, params: &MeasureParams) -> f64 {
    let c1 = s.c_d1 as f64;
    let eps = params.epsilon_div;
    match kind {
        MeasureKind::PER => {
            let s2 = params.s_per * params.s_per;
            curve
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != s.d1)
                .map(|(_, &c)| (-(c1 - c as f64).powi(2) / s2).exp())
                .sum()
        }
        MeasureKind::MLM => {
            let k = 2.0 * params.sigma_mlm;
            // Shifting every exponent by c_d1 keeps the ratio and avoids underflow.
            let den: f64 = curve.iter().map(|&c| (-(c as f64 - c1) / k).exp()).sum();
            1.0 / den.max(eps)
        }
        MeasureKind::ALM => {
            let k = 2.0 * params.sigma_mlm;
            let den: f64 = curve.iter().map(|&c| (-(c as f64) / k).exp()).sum();
            1.0 / den.max(eps)
        }
        MeasureKind::NEM => {
            let p = (-c1).exp() / s.sum_exp_neg;
            p * p.ln()
        }
        MeasureKind::NOI => s.n_local_minima as f64,
        MeasureKind::WMN => guarded(s.c_d2m as f64 - c1, s.sum_costs, eps),
        MeasureKind::WMNN => guarded(s.c_d2 as f64 - c1, s.sum_costs, eps),
        MeasureKind::PWCFA => {
            let range = (curve.len() - 1) as f64;
            let bias = s.sum_costs / (3.0 * range);
            let third = 1.0 / 3.0;
            let den: f64 = curve
                .iter()
                .enumerate()
                .map(|(i, &c)| {
                    let num = ((i.abs_diff(s.d1) as f64 - 1.0).min(third)).max(0.0).powi(2);
                    num / (c as f64 - c1 - bias).max(1.0)
                })
                .sum();
            1.0 / den.max(eps)
        }
        _ => unreachable!("{kind:?} is not a full curve measure"),
    }
}

pub(super) fn compute(kind: MeasureKind, inputs: &MeasureInputs, params: &MeasureParams) -> Grid<f64> {
    pixel_map(inputs.width(), inputs.height(), |x, y| {
        evaluate(kind, inputs.volume.curve(x, y), &inputs.stats.get(x, y), params)
    })
}
