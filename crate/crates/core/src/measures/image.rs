use super::window::{chamfer_distance, edge_map, gradient, WindowMoments};
use super::{pixel_map, MeasureInputs, MeasureKind, MeasureParams};
use crate::error::Result;
use crate::grid::Grid;

pub(super) fn compute(
    kind: MeasureKind,
    window: usize,
    inputs: &MeasureInputs,
    params: &MeasureParams,
) -> Result<Grid<f64>> {
    let (w, h) = (inputs.width(), inputs.height());
    Ok(match kind {
        MeasureKind::DB => pixel_map(w, h, |x, y| x.min(y).min(w - x).min(h - y) as f64),
        MeasureKind::DLB => {
            let d_max = inputs.volume.d_max();
            pixel_map(w, h, |x, _| x.min(d_max) as f64)
        }
        _ => {
            let img = inputs.left_image()?.grid().map(|&v| v as f64);
            match kind {
                MeasureKind::HGM => pixel_map(w, h, |x, y| gradient(&img, x, y).0.abs()),
                MeasureKind::DTE => chamfer_distance(&edge_map(&img, params.edge_threshold_image)),
                MeasureKind::IVAR => {
                    let moments = WindowMoments::new(w, h, |x, y| img.get(x, y));
                    pixel_map(w, h, |x, y| {
                        let m = moments.at(x, y, window / 2);
                        m.m2 / m.n
                    })
                }
                _ => unreachable!("{kind:?} is not an image measure"),
            }
        }
    })
}
