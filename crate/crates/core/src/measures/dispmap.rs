use super::window::{chamfer_distance, edge_map, gradient, sliding_histograms, WindowMoments};
use super::{pixel_map, MeasureInputs, MeasureKind, MeasureParams};
use crate::grid::Grid;

/// Integer labels used by the histogram measures.
pub(crate) fn labels(disparity: &Grid<f32>) -> Grid<usize> {
    disparity.map(|&d| if d.is_finite() && d > 0.0 { d.round() as usize } else { 0 })
}

pub(super) fn compute(kind: MeasureKind, window: usize, inputs: &MeasureInputs, params: &MeasureParams) -> Grid<f64> {
    let (w, h) = (inputs.width(), inputs.height());
    let disp = inputs.disparity.map(|&d| d as f64);
    let r = window / 2;
    match kind {
        MeasureKind::DTD => chamfer_distance(&edge_map(&disp, params.edge_threshold_disparity)),
        MeasureKind::DMV => pixel_map(w, h, |x, y| {
            let (gx, gy) = gradient(&disp, x, y);
            (gx * gx + gy * gy).sqrt()
        }),
        MeasureKind::VAR | MeasureKind::SKEW | MeasureKind::MND => {
            let moments = WindowMoments::new(w, h, |x, y| disp.get(x, y));
            pixel_map(w, h, |x, y| {
                let m = moments.at(x, y, r);
                match kind {
                    MeasureKind::VAR => -m.m2 / m.n,
                    MeasureKind::SKEW => -m.m3 / m.n,
                    _ => -(disp.get(x, y) - m.mean).abs(),
                }
            })
        }
        MeasureKind::MDD | MeasureKind::DA | MeasureKind::DS | MeasureKind::MED => {
            let hist = sliding_histograms(&labels(inputs.disparity), r);
            pixel_map(w, h, |x, y| {
                let s = hist.get(x, y);
                match kind {
                    MeasureKind::MDD => -(disp.get(x, y) - s.median as f64).abs(),
                    MeasureKind::DA => s.agreement as f64,
                    MeasureKind::DS => -(s.distinct as f64 / s.count as f64).ln(),
                    _ => s.median as f64,
                }
            })
        }
        _ => unreachable!("{kind:?} is not a disparity map measure"),
    }
}
