//! Browser bindings: match a synthetic scene, render confidence heatmaps and
//! plot sparsification curves.

use stereoconf::evalauc::{optimal_auc, sparsify, SparsificationCurve};
use stereoconf::measures::{compute_measure, evaluable_measures, MeasureId, MeasureParams};
use stereoconf::pipeline::{match_pair, MatchResult, PipelineParams, StereoAlgorithm};
use stereoconf::synth::{layered_pair, textured_image, SyntheticPair};
use stereoconf::{GrayImage, Grid};
use wasm_bindgen::prelude::*;

const TAU: f64 = 1.0;

/// Five-stop perceptual ramp, dark blue to yellow.
const RAMP: [[f32; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

fn ramp(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) as f32 } else { 0.0 };
    let pos = t * (RAMP.len() - 1) as f32;
    let i = (pos as usize).min(RAMP.len() - 2);
    let f = pos - i as f32;
    let mut out = [0u8; 3];
    for (c, o) in out.iter_mut().enumerate() {
        *o = (RAMP[i][c] + f * (RAMP[i + 1][c] - RAMP[i][c])).round() as u8;
    }
    out
}

fn rgba(n: usize, mut color: impl FnMut(usize) -> [u8; 3]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 * n);
    for i in 0..n {
        out.extend_from_slice(&color(i));
        out.push(255);
    }
    out
}

/// Rank-normalizes values to `[0, 1]`, ties sharing their lowest rank.
fn rank_normalize(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let scale = (values.len().max(2) - 1) as f64;
    let mut out = vec![0.0; values.len()];
    let mut start = 0;
    for k in 0..order.len() {
        if values[order[k]] != values[order[start]] {
            start = k;
        }
        out[order[k]] = start as f64 / scale;
    }
    out
}

/// Adds zero-mean texture noise of amplitude `amount` gray levels.
fn add_noise(img: &GrayImage, amount: u8, seed: u64) -> GrayImage {
    let n = textured_image(img.width(), img.height(), seed);
    GrayImage::from_fn(img.width(), img.height(), |x, y| {
        let delta = (n.get(x, y) as i32 - 128) * amount as i32 / 128;
        (img.get(x, y) as i32 + delta).clamp(0, 255) as u8
    })
}

/// Plain-Rust core of [`Scene`].
pub struct SceneState {
    pub pair: SyntheticPair,
    pub run: MatchResult,
}

impl SceneState {
    pub fn new(
        width: usize,
        height: usize,
        background: usize,
        foreground: usize,
        seed: u64,
        noise: u8,
        algorithm: &str,
    ) -> Result<Self, String> {
        let algo: StereoAlgorithm = algorithm.parse().map_err(|e: stereoconf::Error| e.to_string())?;
        if algo == StereoAlgorithm::ExternalVolume {
            return Err("the demo runs census-cbca or census-sgm".into());
        }
        if !(16..=512).contains(&width) || !(16..=512).contains(&height) {
            return Err("width and height must lie in [16, 512]".into());
        }
        if background >= foreground || foreground + 2 >= width / 2 {
            return Err("need background < foreground < width / 2 - 2".into());
        }
        let mut pair = layered_pair(width, height, background, foreground, seed);
        if noise > 0 {
            pair.right = add_noise(&pair.right, noise, seed ^ 0x9e37_79b9);
        }
        let d_max = (foreground + 4).min(width - 1);
        let run = match_pair(&pair.left, &pair.right, d_max, &PipelineParams::default(), algo).map_err(|e| e.to_string())?;
        Ok(Self { pair, run })
    }

    pub fn d1(&self) -> f64 {
        stereoconf::evalauc::d1_rate(&self.run.disparity, &self.pair.ground_truth, None, TAU).unwrap_or(f64::NAN)
    }

    pub fn disparity_rgba(&self) -> Vec<u8> {
        let d_max = self.run.d_max() as f64;
        let disp = self.run.disparity.as_slice();
        rgba(disp.len(), |i| ramp(disp[i] as f64 / d_max))
    }

    /// Correct pixels in gray, errors in red, pixels without ground truth black.
    pub fn error_rgba(&self) -> Vec<u8> {
        let gt = &self.pair.ground_truth;
        let img = self.pair.left.pixels();
        rgba(img.len(), |i| {
            if !gt.valid().as_slice()[i] {
                return [0, 0, 0];
            }
            let err = (self.run.disparity.as_slice()[i] - gt.disparity().as_slice()[i]).abs() as f64 > TAU;
            let g = img[i] / 2 + 64;
            if err {
                [230, 40, 40]
            } else {
                [g, g, g]
            }
        })
    }

    pub fn left_rgba(&self) -> Vec<u8> {
        let img = self.pair.left.pixels();
        rgba(img.len(), |i| [img[i]; 3])
    }

    pub fn scores(&self, measure: &str, window: usize) -> Result<Grid<f64>, String> {
        let id: MeasureId = measure.parse().map_err(|e: stereoconf::Error| e.to_string())?;
        let params = MeasureParams {
            window,
            ..MeasureParams::default()
        };
        let inputs = self.run.inputs().map_err(|e| e.to_string())?;
        compute_measure(&inputs, &params, id)
            .map(|c| c.scores)
            .map_err(|e| e.to_string())
    }

    /// Heatmap of rank-normalized scores; bright means confident.
    pub fn confidence_rgba(&self, measure: &str, window: usize) -> Result<Vec<u8>, String> {
        let scores = self.scores(measure, window)?;
        let ranks = rank_normalize(scores.as_slice());
        Ok(rgba(ranks.len(), |i| ramp(ranks[i])))
    }

    pub fn curve(&self, measure: &str, window: usize, samples: usize) -> Result<SparsificationCurve, String> {
        let scores = self.scores(measure, window)?;
        sparsify(&scores, &self.run.disparity, &self.pair.ground_truth, TAU, samples).map_err(|e| e.to_string())
    }
}

/// A matched synthetic scene: a textured foreground square over a
/// textured background at two disparities.
#[wasm_bindgen]
pub struct Scene {
    state: SceneState,
}

#[wasm_bindgen]
impl Scene {
    #[wasm_bindgen(constructor)]
    pub fn new(
        width: usize,
        height: usize,
        background: usize,
        foreground: usize,
        seed: u32,
        noise: u8,
        algorithm: &str,
    ) -> Result<Scene, JsError> {
        SceneState::new(width, height, background, foreground, seed as u64, noise, algorithm)
            .map(|state| Scene { state })
            .map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.state.pair.left.width()
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.state.pair.left.height()
    }

    /// Full-density error rate at one pixel.
    #[wasm_bindgen(getter)]
    pub fn d1(&self) -> f64 {
        self.state.d1()
    }

    #[wasm_bindgen(js_name = leftRgba)]
    pub fn left_rgba(&self) -> Vec<u8> {
        self.state.left_rgba()
    }

    #[wasm_bindgen(js_name = disparityRgba)]
    pub fn disparity_rgba(&self) -> Vec<u8> {
        self.state.disparity_rgba()
    }

    #[wasm_bindgen(js_name = errorRgba)]
    pub fn error_rgba(&self) -> Vec<u8> {
        self.state.error_rgba()
    }

    #[wasm_bindgen(js_name = confidenceRgba)]
    pub fn confidence_rgba(&self, measure: &str, window: usize) -> Result<Vec<u8>, JsError> {
        self.state.confidence_rgba(measure, window).map_err(|e| JsError::new(&e))
    }

    pub fn sparsify(&self, measure: &str, window: usize, samples: usize) -> Result<Curve, JsError> {
        self.state
            .curve(measure, window, samples)
            .map(|inner| Curve { inner })
            .map_err(|e| JsError::new(&e))
    }
}

/// Sampled sparsification curve.
#[wasm_bindgen]
pub struct Curve {
    inner: SparsificationCurve,
}

#[wasm_bindgen]
impl Curve {
    pub fn densities(&self) -> Vec<f64> {
        self.inner.densities.clone()
    }

    #[wasm_bindgen(js_name = errorRates)]
    pub fn error_rates(&self) -> Vec<f64> {
        self.inner.error_rates.clone()
    }

    /// Error rates of the ideal ranking at the same densities.
    #[wasm_bindgen(js_name = optimalRates)]
    pub fn optimal_rates(&self) -> Vec<f64> {
        let eps = self.inner.epsilon;
        self.inner
            .densities
            .iter()
            .map(|&p| (1.0 - (1.0 - eps) / p).max(0.0))
            .collect()
    }

    #[wasm_bindgen(getter)]
    pub fn auc(&self) -> f64 {
        self.inner.auc()
    }

    #[wasm_bindgen(getter, js_name = optimalAuc)]
    pub fn optimal_auc(&self) -> f64 {
        optimal_auc(self.inner.epsilon).unwrap_or(f64::NAN)
    }

    #[wasm_bindgen(getter)]
    pub fn epsilon(&self) -> f64 {
        self.inner.epsilon
    }
}

/// Measure ids usable on a scene matched with `algorithm`.
#[wasm_bindgen(js_name = measureIds)]
pub fn measure_ids(algorithm: &str) -> Vec<String> {
    let sgm = algorithm.parse::<StereoAlgorithm>().is_ok_and(|a| a.has_scanlines());
    evaluable_measures(sgm).iter().map(|m| m.to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_normalization_shares_ties() {
        assert_eq!(rank_normalize(&[3.0, 1.0, 3.0, 2.0]), [2.0 / 3.0, 0.0, 2.0 / 3.0, 1.0 / 3.0]);
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp(0.0), [68, 1, 84]);
        assert_eq!(ramp(1.0), [253, 231, 37]);
        assert_eq!(ramp(f64::NAN), [68, 1, 84]);
    }

    #[test]
    fn scene_operations() {
        let s = SceneState::new(64, 48, 2, 6, 1, 0, "census-sgm").unwrap();
        assert!(s.d1() < 0.2);
        assert_eq!(s.disparity_rgba().len(), 64 * 48 * 4);
        assert_eq!(s.confidence_rgba("PKRN", 5).unwrap().len(), 64 * 48 * 4);
        let c = s.curve("LRD", 5, 20).unwrap();
        assert!(c.auc() >= c.optimal_auc() - 1e-12);
        assert!(s.curve("NOPE", 5, 20).is_err());
        let noisy = SceneState::new(64, 48, 2, 6, 1, 120, "census-sgm").unwrap();
        assert!(noisy.d1() > s.d1());
        assert!(SceneState::new(64, 48, 6, 2, 1, 0, "census-sgm").is_err());
        assert!(SceneState::new(64, 48, 2, 6, 1, 0, "external-volume").is_err());
    }

    #[test]
    fn measure_lists_follow_algorithm() {
        assert_eq!(measure_ids("census-sgm").len(), measure_ids("census-cbca").len() + 2);
    }
}
