use std::collections::HashMap;

use super::{guarded, pixel_map, MeasureInputs, MeasureKind, MeasureParams};
use crate::error::Result;
use crate::grid::Grid;

pub(super) fn compute(
    kind: MeasureKind,
    window: usize,
    inputs: &MeasureInputs,
    params: &MeasureParams,
) -> Result<Grid<f64>> {
    let (w, h) = (inputs.width(), inputs.height());
    let eps = params.epsilon_div;
    Ok(match kind {
        MeasureKind::LRC => {
            let (_, right_disp) = inputs.right()?;
            pixel_map(w, h, |x, y| {
                let xr = inputs.xr(x, y);
                -((inputs.disparity.get(x, y) - right_disp.get(xr, y)).abs() as f64)
            })
        }
        MeasureKind::LRD => {
            let (right_vol, right_disp) = inputs.right()?;
            pixel_map(w, h, |x, y| {
                let s = inputs.stats.get(x, y);
                let xr = inputs.xr(x, y);
                let dr = right_disp.get(xr, y).round().max(0.0) as usize;
                let cr = right_vol.cost(xr, y, dr.min(right_vol.d_max())) as f64;
                guarded(s.c_d2 as f64 - s.c_d1 as f64, (s.c_d1 as f64 - cr).abs(), eps)
            })
        }
        MeasureKind::ZSAD => {
            let left = inputs.left_image()?;
            let right = inputs.right_image()?;
            let r = (window / 2) as isize;
            let n = (window * window) as f64;
            pixel_map(w, h, |x, y| {
                let (px, py) = (x as isize, y as isize);
                let prx = px - inputs.disparity.get(x, y).round() as isize;
                let mut ml = 0f64;
                let mut mr = 0f64;
                for oy in -r..=r {
                    for ox in -r..=r {
                        ml += left.get_clamped(px + ox, py + oy) as f64;
                        mr += right.get_clamped(prx + ox, py + oy) as f64;
                    }
                }
                ml /= n;
                mr /= n;
                let mut acc = 0f64;
                for oy in -r..=r {
                    for ox in -r..=r {
                        let a = left.get_clamped(px + ox, py + oy) as f64 - ml;
                        let b = right.get_clamped(prx + ox, py + oy) as f64 - mr;
                        acc += (a - b).abs();
                    }
                }
                acc
            })
        }
        MeasureKind::ACC | MeasureKind::UC | MeasureKind::UCC | MeasureKind::UCO => collisions(kind, inputs),
        _ => unreachable!("{kind:?} is not a left-right measure"),
    })
}

/// Pixels of one row grouped by the (unclamped) right column they match.
fn collision_groups(inputs: &MeasureInputs, y: usize) -> HashMap<i64, Vec<usize>> {
    let mut groups: HashMap<i64, Vec<usize>> = HashMap::new();
    for x in 0..inputs.width() {
        let xr = x as i64 - inputs.disparity.get(x, y).round() as i64;
        groups.entry(xr).or_default().push(x);
    }
    groups
}

fn collisions(kind: MeasureKind, inputs: &MeasureInputs) -> Grid<f64> {
    let w = inputs.width();
    let rows = crate::par::map_range(inputs.height(), |y| {
        let mut out = vec![0f64; w];
        let cost = |x: usize| inputs.stats.get(x, y).c_d1;
        let disp = |x: usize| inputs.disparity.get(x, y);
        for group in collision_groups(inputs, y).values() {
            let collides = group.len() > 1;
            let min_cost = group.iter().map(|&x| cost(x)).fold(f32::INFINITY, f32::min);
            let max_disp = group.iter().map(|&x| disp(x)).fold(f32::NEG_INFINITY, f32::max);
            for &x in group {
                let cost_winner = cost(x) == min_cost;
                out[x] = match kind {
                    MeasureKind::ACC => (!collides || (disp(x) == max_disp && cost_winner)) as u8 as f64,
                    MeasureKind::UC => (!collides || cost_winner) as u8 as f64,
                    MeasureKind::UCC if !collides || cost_winner => -(cost(x) as f64),
                    MeasureKind::UCC => 0.0,
                    MeasureKind::UCO => -((group.len() - 1) as f64),
                    _ => unreachable!(),
                };
            }
        }
        out
    });
    Grid::from_vec(w, inputs.height(), rows.into_iter().flatten().collect()).expect("shape preserved")
}

/// UCC scores: winners keep `-c_d1`, colliding losers fall below any winner.
pub(super) fn ucc_scores(raw: &Grid<f64>, inputs: &MeasureInputs) -> Grid<f64> {
    let uc = collisions(MeasureKind::UC, inputs);
    let floor = raw.as_slice().iter().copied().fold(0f64, f64::min) - 1.0;
    Grid::from_vec(
        raw.width(),
        raw.height(),
        raw.as_slice()
            .iter()
            .zip(uc.as_slice())
            .map(|(&v, &winner)| if winner > 0.0 { v } else { floor })
            .collect(),
    )
    .expect("shape preserved")
}

