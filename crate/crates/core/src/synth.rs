//! Seeded synthetic stereo pairs with exact ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataio::GroundTruth;
use crate::grid::{GrayImage, Grid};

/// Random texture mixing per-pixel noise with 4×4 blocks.
pub fn textured_image(width: usize, height: usize, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bw = width.div_ceil(4);
    let blocks: Vec<f32> = (0..bw * height.div_ceil(4)).map(|_| rng.random_range(0.0..255.0)).collect();
    let fine: Vec<f32> = (0..width * height).map(|_| rng.random_range(0.0..255.0)).collect();
    GrayImage::from_fn(width, height, |x, y| {
        let v = 0.6 * fine[y * width + x] + 0.4 * blocks[(y / 4) * bw + x / 4];
        v.round().clamp(0.0, 255.0) as u8
    })
}

pub struct SyntheticPair {
    pub left: GrayImage,
    pub right: GrayImage,
    pub ground_truth: GroundTruth,
}

/// Renders a pair from a left disparity map: every left pixel is copied to
/// `x - d` on the right, nearer (larger disparity) surfaces winning; right
/// pixels nobody maps to get fresh texture. Left pixels whose match is hidden
/// or falls outside the image are marked invalid in the ground truth.
pub fn render_pair(disparity: &Grid<usize>, seed: u64) -> SyntheticPair {
    let (w, h) = (disparity.width(), disparity.height());
    let left = textured_image(w, h, seed);
    let filler = textured_image(w, h, seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut owner: Vec<Option<usize>> = vec![None; w * h];
    for y in 0..h {
        for x in 0..w {
            let d = disparity.get(x, y);
            if d > x {
                continue;
            }
            let slot = &mut owner[y * w + x - d];
            if slot.is_none_or(|o| disparity.get(o, y) < d) {
                *slot = Some(x);
            }
        }
    }
    let right = GrayImage::from_fn(w, h, |x, y| match owner[y * w + x] {
        Some(src) => left.get(src, y),
        None => filler.get(x, y),
    });
    let valid = Grid::from_fn(w, h, |x, y| {
        let d = disparity.get(x, y);
        d <= x && owner[y * w + x - d] == Some(x)
    });
    let gt = GroundTruth::new(disparity.map(|&d| d as f32), valid).expect("shapes match");
    SyntheticPair {
        left,
        right,
        ground_truth: gt,
    }
}

/// Right view equal to the left view shifted by a constant `shift`.
pub fn shifted_pair(width: usize, height: usize, shift: usize, seed: u64) -> SyntheticPair {
    render_pair(&Grid::filled(width, height, shift), seed)
}

/// A fronto-parallel background with a nearer rectangle in the middle.
pub fn layered_pair(width: usize, height: usize, background: usize, foreground: usize, seed: u64) -> SyntheticPair {
    let (x0, x1) = (width / 3, 2 * width / 3);
    let (y0, y1) = (height / 4, 3 * height / 4);
    let disp = Grid::from_fn(width, height, |x, y| {
        if (x0..x1).contains(&x) && (y0..y1).contains(&y) {
            foreground
        } else {
            background
        }
    });
    render_pair(&disp, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shifted_pair_matches_by_construction() {
        let p = shifted_pair(32, 8, 3, 1);
        for y in 0..8 {
            for x in 3..32 {
                assert_eq!(p.left.get(x, y), p.right.get(x - 3, y));
                assert!(p.ground_truth.valid().get(x, y));
            }
            for x in 0..3 {
                assert!(!p.ground_truth.valid().get(x, y));
            }
        }
    }

    #[test]
    fn layered_pair_marks_occlusions() {
        let p = layered_pair(60, 20, 2, 8, 5);
        let valid = p.ground_truth.valid();
        // Background just left of the rectangle is hidden by it on the right view.
        assert!(!valid.get(19, 10));
        assert!(valid.get(30, 10));
        assert_eq!(p.ground_truth.disparity().get(30, 10), 8.0);
    }

    #[test]
    fn deterministic_for_a_seed() {
        assert_eq!(textured_image(16, 16, 9), textured_image(16, 16, 9));
        assert_ne!(textured_image(16, 16, 9), textured_image(16, 16, 10));
    }
}
