use super::window::span;
use super::{guarded, pixel_map, MeasureInputs, MeasureKind, MeasureParams, WpkrMode};
use crate::curve::is_local_min;
use crate::error::Result;
use crate::grid::Grid;

pub(super) fn compute(
    kind: MeasureKind,
    window: usize,
    inputs: &MeasureInputs,
    params: &MeasureParams,
) -> Result<Grid<f64>> {
    let (w, h) = (inputs.width(), inputs.height());
    let r = window / 2;
    let vol = inputs.volume;
    let eps = params.epsilon_div;
    Ok(match kind {
        MeasureKind::APKR | MeasureKind::APKRN => {
            let naive = kind == MeasureKind::APKRN;
            pixel_map(w, h, |x, y| {
                let s = inputs.stats.get(x, y);
                let num = if naive { s.d2 } else { s.d2m };
                ratio_sum(inputs, x, y, r, s.d1, num, eps, |_, _| true)
            })
        }
        MeasureKind::WPKR | MeasureKind::WPKRN => {
            let naive = kind == MeasureKind::WPKRN;
            let left = inputs.left_image()?;
            let other = match params.wpkr_mode {
                WpkrMode::SameImage => left,
                WpkrMode::CrossImage => inputs.right_image()?,
            };
            let thr = params.wpkr_threshold;
            pixel_map(w, h, |x, y| {
                let s = inputs.stats.get(x, y);
                let num = if naive { s.d2 } else { s.d2m };
                let lp = left.get(x, y) as f64;
                ratio_sum(inputs, x, y, r, s.d1, num, eps, |qx, qy| {
                    (lp - other.get(qx, qy) as f64).abs() < thr
                })
            })
        }
        MeasureKind::LMN => pixel_map(w, h, |x, y| {
            let d1 = inputs.stats.get(x, y).d1;
            let (x0, x1) = span(x, r, w);
            let (y0, y1) = span(y, r, h);
            let mut n = 0usize;
            for qy in y0..=y1 {
                for qx in x0..=x1 {
                    if is_local_min(vol.curve(qx, qy), d1) {
                        n += 1;
                    }
                }
            }
            n as f64
        }),
        MeasureKind::SGE => {
            let (p1, p2) = (params.sgm.p1 as f64, params.sgm.p2 as f64);
            pixel_map(w, h, |x, y| sge_at(inputs, x, y, r, p1, p2))
        }
        _ => unreachable!("{kind:?} is not a windowed peak measure"),
    })
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn ratio_sum(
    inputs: &MeasureInputs,
    x: usize,
    y: usize,
    r: usize,
    den: usize,
    num: usize,
    eps: f64,
    weight: impl Fn(usize, usize) -> bool,
) -> f64 {
    let (w, h) = (inputs.width(), inputs.height());
    let (x0, x1) = span(x, r, w);
    let (y0, y1) = span(y, r, h);
    let mut acc = 0f64;
    for qy in y0..=y1 {
        for qx in x0..=x1 {
            if weight(qx, qy) {
                let c = inputs.volume.curve(qx, qy);
                acc += guarded(c[num] as f64, c[den] as f64, eps);
            }
        }
    }
    acc
}

/// Energy along four axis rays starting at `p`, each `r` steps long.
fn sge_at(inputs: &MeasureInputs, x: usize, y: usize, r: usize, p1: f64, p2: f64) -> f64 {
    let (w, h) = (inputs.width() as isize, inputs.height() as isize);
    let d1 = |qx: isize, qy: isize| inputs.stats.get(qx as usize, qy as usize).d1;
    let cost = |qx: isize, qy: isize| inputs.stats.get(qx as usize, qy as usize).c_d1 as f64;
    let mut total = 0f64;
    for (dx, dy) in [(1isize, 0isize), (-1, 0), (0, 1), (0, -1)] {
        let (mut qx, mut qy) = (x as isize, y as isize);
        total += cost(qx, qy);
        for _ in 0..r {
            let (nx, ny) = (qx + dx, qy + dy);
            if nx < 0 || ny < 0 || nx >= w || ny >= h {
                break;
            }
            let jump = d1(qx, qy).abs_diff(d1(nx, ny));
            total += cost(nx, ny);
            if jump == 1 {
                total += p1;
            } else if jump > 1 {
                total += p2;
            }
            qx = nx;
            qy = ny;
        }
    }
    total
}
