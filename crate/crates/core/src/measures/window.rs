//! Local-window machinery: clipped windows, integral images, sliding
//! disparity histograms, gradients and chamfer distance transforms.

use crate::grid::Grid;

/// Inclusive clipped window bounds `[lo, hi]` around `c` with radius `r`.
#[inline]
pub(crate) fn span(c: usize, r: usize, n: usize) -> (usize, usize) {
    (c.saturating_sub(r), (c + r).min(n - 1))
}

/// Summed-area table over `f64` values.
pub(crate) struct Integral {
    w: usize,
    table: Vec<f64>,
}

impl Integral {
    pub(crate) fn new(w: usize, h: usize, value: impl Fn(usize, usize) -> f64) -> Self {
        let stride = w + 1;
        let mut table = vec![0f64; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0f64;
            for x in 0..w {
                row += value(x, y);
                table[(y + 1) * stride + x + 1] = table[y * stride + x + 1] + row;
            }
        }
        Self { w, table }
    }

    /// Sum over the inclusive rectangle.
    #[inline]
    pub(crate) fn sum(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let s = self.w + 1;
        self.table[(y1 + 1) * s + x1 + 1] - self.table[y0 * s + x1 + 1] - self.table[(y1 + 1) * s + x0]
            + self.table[y0 * s + x0]
    }
}

/// Central moments of a map over clipped square windows, via integral images
/// of the first three raw powers.
pub(crate) struct WindowMoments {
    w: usize,
    h: usize,
    s1: Integral,
    s2: Integral,
    s3: Integral,
}

pub(crate) struct Moments {
    pub n: f64,
    pub mean: f64,
    /// `Σ (v - mean)²`
    pub m2: f64,
    /// `Σ (v - mean)³`
    pub m3: f64,
}

impl WindowMoments {
    pub(crate) fn new(w: usize, h: usize, value: impl Fn(usize, usize) -> f64 + Copy) -> Self {
        Self {
            w,
            h,
            s1: Integral::new(w, h, value),
            s2: Integral::new(w, h, |x, y| value(x, y).powi(2)),
            s3: Integral::new(w, h, |x, y| value(x, y).powi(3)),
        }
    }

    pub(crate) fn at(&self, x: usize, y: usize, r: usize) -> Moments {
        let (x0, x1) = span(x, r, self.w);
        let (y0, y1) = span(y, r, self.h);
        let n = ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64;
        let a = self.s1.sum(x0, y0, x1, y1);
        let b = self.s2.sum(x0, y0, x1, y1);
        let c = self.s3.sum(x0, y0, x1, y1);
        let mean = a / n;
        let m2 = (b - n * mean * mean).max(0.0);
        let m3 = c - 3.0 * mean * b + 3.0 * mean * mean * a - n * mean.powi(3);
        Moments { n, mean, m2, m3 }
    }
}

/// Histogram statistics of integer labels in a window.
#[derive(Clone, Copy, Debug)]
pub(crate) struct HistogramStats {
    pub count: usize,
    /// Occurrences of the center pixel's label.
    pub agreement: usize,
    pub distinct: usize,
    /// Lower median.
    pub median: usize,
}

/// Computes [`HistogramStats`] for every pixel with a histogram that slides
/// along each row.
pub(crate) fn sliding_histograms(labels: &Grid<usize>, r: usize) -> Grid<HistogramStats> {
    let (w, h) = (labels.width(), labels.height());
    let bins = labels.as_slice().iter().copied().max().unwrap_or(0) + 1;
    let rows = crate::par::map_range(h, |y| {
        let (y0, y1) = span(y, r, h);
        let mut hist = vec![0usize; bins];
        let mut distinct = 0usize;
        let mut count = 0usize;
        let add = |hist: &mut [usize], x: usize, sign: bool, distinct: &mut usize, count: &mut usize| {
            for yy in y0..=y1 {
                let b = labels.get(x, yy);
                if sign {
                    if hist[b] == 0 {
                        *distinct += 1;
                    }
                    hist[b] += 1;
                    *count += 1;
                } else {
                    hist[b] -= 1;
                    if hist[b] == 0 {
                        *distinct -= 1;
                    }
                    *count -= 1;
                }
            }
        };
        let mut out = Vec::with_capacity(w);
        for x in 0..=r.min(w - 1) {
            add(&mut hist, x, true, &mut distinct, &mut count);
        }
        for x in 0..w {
            if x > 0 {
                if x + r < w {
                    add(&mut hist, x + r, true, &mut distinct, &mut count);
                }
                if x > r {
                    add(&mut hist, x - r - 1, false, &mut distinct, &mut count);
                }
            }
            let target = count.div_ceil(2).max(1);
            let mut acc = 0;
            let mut median = 0;
            for (b, &n) in hist.iter().enumerate() {
                acc += n;
                if acc >= target {
                    median = b;
                    break;
                }
            }
            out.push(HistogramStats {
                count,
                agreement: hist[labels.get(x, y)],
                distinct,
                median,
            });
        }
        out
    });
    Grid::from_vec(w, h, rows.into_iter().flatten().collect()).expect("shape preserved")
}

/// Central-difference gradient `(gx, gy)` with replicated borders.
#[inline]
pub(crate) fn gradient(map: &Grid<f64>, x: usize, y: usize) -> (f64, f64) {
    let (x, y) = (x as isize, y as isize);
    let gx = (map.get_clamped(x + 1, y) - map.get_clamped(x - 1, y)) / 2.0;
    let gy = (map.get_clamped(x, y + 1) - map.get_clamped(x, y - 1)) / 2.0;
    (gx, gy)
}

/// Pixels whose gradient magnitude reaches `threshold`.
pub(crate) fn edge_map(map: &Grid<f64>, threshold: f64) -> Grid<bool> {
    Grid::from_fn(map.width(), map.height(), |x, y| {
        let (gx, gy) = gradient(map, x, y);
        (gx * gx + gy * gy).sqrt() >= threshold
    })
}

/// Value used when a map has no edge at all.
pub(crate) fn no_edge_distance(w: usize, h: usize) -> f64 {
    ((w * w + h * h) as f64).sqrt()
}

/// Two-pass 3×3 chamfer transform with unit axial and `√2` diagonal steps.
pub(crate) fn chamfer_distance(edges: &Grid<bool>) -> Grid<f64> {
    let (w, h) = (edges.width(), edges.height());
    let diag = std::f64::consts::SQRT_2;
    let mut d = edges.map(|&e| if e { 0.0 } else { f64::INFINITY });
    for y in 0..h {
        for x in 0..w {
            let mut v = d.get(x, y);
            if x > 0 {
                v = v.min(d.get(x - 1, y) + 1.0);
            }
            if y > 0 {
                v = v.min(d.get(x, y - 1) + 1.0);
                if x > 0 {
                    v = v.min(d.get(x - 1, y - 1) + diag);
                }
                if x + 1 < w {
                    v = v.min(d.get(x + 1, y - 1) + diag);
                }
            }
            d.set(x, y, v);
        }
    }
    for y in (0..h).rev() {
        for x in (0..w).rev() {
            let mut v = d.get(x, y);
            if x + 1 < w {
                v = v.min(d.get(x + 1, y) + 1.0);
            }
            if y + 1 < h {
                v = v.min(d.get(x, y + 1) + 1.0);
                if x + 1 < w {
                    v = v.min(d.get(x + 1, y + 1) + diag);
                }
                if x > 0 {
                    v = v.min(d.get(x - 1, y + 1) + diag);
                }
            }
            d.set(x, y, v);
        }
    }
    let cap = no_edge_distance(w, h);
    d.map(|&v| if v.is_finite() { v } else { cap })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integral_matches_direct_sum() {
        let g = Grid::from_fn(7, 5, |x, y| (x * 3 + y * 5) as f64);
        let ii = Integral::new(7, 5, |x, y| g.get(x, y));
        let direct: f64 = (1..=4).flat_map(|y| (2..=6).map(move |x| (x, y))).map(|(x, y)| g.get(x, y)).sum();
        assert_eq!(ii.sum(2, 1, 6, 4), direct);
    }

    #[test]
    fn sliding_histogram_matches_brute_force() {
        let labels = Grid::from_fn(9, 6, |x, y| (x * 7 + y * 3) % 5);
        let r = 2;
        let stats = sliding_histograms(&labels, r);
        for y in 0..6 {
            for x in 0..9 {
                let (x0, x1) = span(x, r, 9);
                let (y0, y1) = span(y, r, 6);
                let mut vals = vec![];
                for yy in y0..=y1 {
                    for xx in x0..=x1 {
                        vals.push(labels.get(xx, yy));
                    }
                }
                vals.sort();
                let s = stats.get(x, y);
                assert_eq!(s.count, vals.len());
                assert_eq!(s.median, vals[(vals.len() - 1) / 2]);
                assert_eq!(s.agreement, vals.iter().filter(|&&v| v == labels.get(x, y)).count());
                let mut u = vals.clone();
                u.dedup();
                assert_eq!(s.distinct, u.len());
            }
        }
    }

    #[test]
    fn chamfer_is_exact_octile_distance() {
        let edges = Grid::from_fn(11, 8, |x, y| (x, y) == (2, 3) || (x, y) == (9, 6));
        let d = chamfer_distance(&edges);
        for y in 0usize..8 {
            for x in 0usize..11 {
                let best = [(2usize, 3usize), (9, 6)]
                    .iter()
                    .map(|&(ex, ey)| {
                        let dx = x.abs_diff(ex) as f64;
                        let dy = y.abs_diff(ey) as f64;
                        dx.max(dy) + (std::f64::consts::SQRT_2 - 1.0) * dx.min(dy)
                    })
                    .fold(f64::INFINITY, f64::min);
                assert!((d.get(x, y) - best).abs() < 1e-12);
            }
        }
    }
}
