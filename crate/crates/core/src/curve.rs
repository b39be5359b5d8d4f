//! Winner-take-all selection and per-pixel cost-curve statistics.
//!
//! Conventions used throughout: every argmin breaks ties towards the lowest
//! hypothesis; `c_i` is a local minimum if it is strictly below both
//! neighbors, boundary hypotheses being compared with their single neighbor.

use crate::costvol::CostVolume;
use crate::grid::{DisparityMap, Grid};
use crate::par;

/// Summary of one cost curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveStats {
    pub d1: usize,
    pub c_d1: f32,
    /// Global second minimum (any hypothesis other than `d1`).
    pub d2: usize,
    pub c_d2: f32,
    /// Smallest local minimum other than `d1`; falls back to `d2` when none
    /// exists (see `has_d2m`).
    pub d2m: usize,
    pub c_d2m: f32,
    pub has_d2m: bool,
    pub n_local_minima: usize,
    pub sum_costs: f64,
    /// `Σ_i e^{-c_i}`.
    pub sum_exp_neg: f64,
}

#[inline]
pub fn is_local_min(curve: &[f32], i: usize) -> bool {
    let n = curve.len();
    if n < 2 {
        return false;
    }
    let c = curve[i];
    let left_ok = i == 0 || c < curve[i - 1];
    let right_ok = i + 1 == n || c < curve[i + 1];
    left_ok && right_ok
}

#[inline]
pub fn argmin(curve: &[f32]) -> usize {
    let mut best = 0;
    for (i, &c) in curve.iter().enumerate().skip(1) {
        if c < curve[best] {
            best = i;
        }
    }
    best
}

/// Statistics of a single curve. Requires at least two hypotheses.
pub fn analyze_curve(curve: &[f32]) -> CurveStats {
    debug_assert!(curve.len() >= 2);
    let d1 = argmin(curve);
    let mut d2 = usize::MAX;
    let mut d2m = usize::MAX;
    let mut n_local_minima = 0;
    let mut sum_costs = 0f64;
    let mut sum_exp_neg = 0f64;
    for (i, &c) in curve.iter().enumerate() {
        sum_costs += c as f64;
        sum_exp_neg += (-(c as f64)).exp();
        let local = is_local_min(curve, i);
        if local {
            n_local_minima += 1;
        }
        if i == d1 {
            continue;
        }
        if d2 == usize::MAX || c < curve[d2] {
            d2 = i;
        }
        if local && (d2m == usize::MAX || c < curve[d2m]) {
            d2m = i;
        }
    }
    let has_d2m = d2m != usize::MAX;
    if !has_d2m {
        d2m = d2;
    }
    CurveStats {
        d1,
        c_d1: curve[d1],
        d2,
        c_d2: curve[d2],
        d2m,
        c_d2m: curve[d2m],
        has_d2m,
        n_local_minima,
        sum_costs,
        sum_exp_neg,
    }
}

/// `d1(p) = argmin_i c_i(p)`.
pub fn wta(vol: &CostVolume) -> DisparityMap {
    let (w, h) = (vol.width(), vol.height());
    let mut out = Grid::filled(w, h, 0f32);
    par::for_each_row(out.as_mut_slice(), w, |y, row| {
        for (x, d) in row.iter_mut().enumerate() {
            *d = argmin(vol.curve(x, y)) as f32;
        }
    });
    out
}

/// Minimum cost per pixel.
pub fn min_costs(vol: &CostVolume) -> Grid<f32> {
    Grid::from_fn(vol.width(), vol.height(), |x, y| {
        vol.curve(x, y).iter().copied().fold(f32::INFINITY, f32::min)
    })
}

pub fn curve_stats(vol: &CostVolume) -> Grid<CurveStats> {
    let (w, h) = (vol.width(), vol.height());
    let rows = par::map_range(h, |y| (0..w).map(|x| analyze_curve(vol.curve(x, y))).collect::<Vec<_>>());
    Grid::from_vec(w, h, rows.into_iter().flatten().collect()).expect("shape preserved")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const CURVE: [f32; 8] = [0.9, 0.3, 0.6, 0.8, 0.1, 0.5, 0.4, 0.7];

    #[test]
    fn wta_examples() {
        let vol = CostVolume::new(3, 1, 8, {
            let mut v = CURVE.to_vec();
            v.extend([0.5; 8]);
            v.extend([0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2]);
            v
        })
        .unwrap();
        let d = wta(&vol);
        assert_eq!(d.as_slice(), &[4.0, 0.0, 7.0]);
    }

    #[test]
    fn stats_of_reference_curve() {
        let s = analyze_curve(&CURVE);
        assert_eq!((s.d1, s.c_d1), (4, 0.1));
        assert_eq!((s.d2, s.c_d2), (1, 0.3));
        assert_eq!((s.d2m, s.c_d2m, s.has_d2m), (1, 0.3, true));
        assert_eq!(s.n_local_minima, 3);
        let minima: Vec<usize> = (0..8).filter(|&i| is_local_min(&CURVE, i)).collect();
        assert_eq!(minima, vec![1, 4, 6]);
    }

    #[test]
    fn naive_and_local_second_minimum_differ() {
        let s = analyze_curve(&[0.5, 0.2, 0.1, 0.3, 0.25, 0.4]);
        assert_eq!((s.d2, s.c_d2), (1, 0.2));
        assert_eq!((s.d2m, s.c_d2m), (4, 0.25));
    }

    #[test]
    fn decreasing_curve_has_no_second_local_minimum() {
        let s = analyze_curve(&[0.5, 0.4, 0.3, 0.2, 0.1, 0.05]);
        assert_eq!(s.d1, 5);
        assert_eq!(s.n_local_minima, 1);
        assert!(!s.has_d2m);
        assert_eq!((s.d2m, s.c_d2m), (s.d2, s.c_d2));
    }

    #[test]
    fn plateau_has_no_local_minimum() {
        let s = analyze_curve(&[0.5, 0.2, 0.2, 0.2, 0.6]);
        assert_eq!(s.n_local_minima, 0);
        assert_eq!(s.d1, 1);
    }

    fn reference_scan(c: &[f32]) -> (usize, usize, Option<usize>, usize) {
        let n = c.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| c[a].total_cmp(&c[b]).then(a.cmp(&b)));
        let d1 = order[0];
        let d2 = order[1];
        let local: Vec<usize> = (0..n)
            .filter(|&i| {
                let l = if i == 0 { f32::INFINITY } else { c[i - 1] };
                let r = if i == n - 1 { f32::INFINITY } else { c[i + 1] };
                c[i] < l && c[i] < r
            })
            .collect();
        let d2m = order.iter().copied().find(|&i| i != d1 && local.contains(&i));
        (d1, d2, d2m, local.len())
    }

    proptest! {
        #[test]
        fn matches_exhaustive_scan(curve in proptest::collection::vec(0u8..20, 2..16)) {
            let c: Vec<f32> = curve.iter().map(|&v| v as f32 / 20.0).collect();
            let s = analyze_curve(&c);
            let (d1, d2, d2m, n) = reference_scan(&c);
            prop_assert_eq!(s.d1, d1);
            prop_assert_eq!(s.d2, d2);
            prop_assert_eq!(s.n_local_minima, n);
            prop_assert_eq!(s.has_d2m, d2m.is_some());
            if let Some(m) = d2m {
                prop_assert_eq!(s.d2m, m);
            }
            prop_assert!(s.c_d1 <= s.c_d2 && s.c_d2 <= s.c_d2m);
            prop_assert_ne!(s.d1, s.d2);
        }

        #[test]
        fn constant_shift_invariance(curve in proptest::collection::vec(0u8..50, 2..12), k in 0u8..8) {
            let c: Vec<f32> = curve.iter().map(|&v| v as f32 / 64.0).collect();
            let shift = k as f32 / 8.0;
            let shifted: Vec<f32> = c.iter().map(|v| v + shift).collect();
            let (a, b) = (analyze_curve(&c), analyze_curve(&shifted));
            prop_assert_eq!((a.d1, a.d2, a.d2m, a.n_local_minima), (b.d1, b.d2, b.d2m, b.n_local_minima));
            prop_assert!((b.c_d1 - a.c_d1 - shift).abs() < 1e-6);
            prop_assert!((b.c_d2m - a.c_d2m - shift).abs() < 1e-6);
        }
    }
}
