//! Procedural 32x32 RGB classification data.
//!
//! Class `c` is the pair (shape `c % 5`, stripe orientation `(c / 5) % 4`),
//! with stripe period varying for larger class counts. An image is a striped
//! background with several striped copies of the class shape scattered over
//! it, so class evidence is spread across the frame rather than sitting in
//! one central object. Shapes and background take colours from opposite
//! halves of the intensity range, with the polarity drawn per sample, plus a
//! weak class tint. `difficulty` in `[0, 1]` scales orientation jitter, pixel
//! noise and the number of distractor shapes from other classes, and weakens
//! the tint.

use std::f32::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{cifar::IMAGE_BYTES, Split, HEIGHT, WIDTH};
use crate::error::{Error, Result};
use crate::rng::{self, Rng as StreamRng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticParams {
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub difficulty: f32,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            n_train: 5000,
            n_test: 1000,
            seed: 0,
            difficulty: 0.6,
        }
    }
}

const SHAPES: usize = 5;
const ORIENTATIONS: usize = 4;

/// Generates `(train, test)` splits; labels are assigned round-robin so every
/// class count is within one of every other.
pub fn make_synthetic(num_classes: usize, params: &SyntheticParams) -> Result<(Split, Split)> {
    if num_classes < 2 || num_classes > 256 {
        return Err(Error::Parameter(format!(
            "synthetic data supports 2..=256 classes, got {num_classes}"
        )));
    }
    if !(0.0..=1.0).contains(&params.difficulty) {
        return Err(Error::Parameter(format!(
            "difficulty {} outside [0, 1]",
            params.difficulty
        )));
    }
    let train = generate(num_classes, params.n_train, params.difficulty, params.seed, 0);
    let test = generate(num_classes, params.n_test, params.difficulty, params.seed, 1);
    Ok((train, test))
}

fn generate(num_classes: usize, n: usize, difficulty: f32, seed: u64, split: u64) -> Split {
    let mut rng = rng::stream(seed, split, Stream::Other(0x5EED));
    let mut pixels = Vec::with_capacity(n * IMAGE_BYTES);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % num_classes;
        render(class, difficulty, &mut rng, &mut pixels);
        labels.push(class as u8);
    }
    Split {
        pixels,
        labels,
        coarse: None,
    }
}

fn inside(shape: usize, u: f32, v: f32, r: f32) -> bool {
    match shape {
        0 => u * u + v * v < r * r,
        1 => u.abs().max(v.abs()) < 0.8 * r,
        2 => v < 0.5 * r && v > -r && u.abs() < (v + r) * 0.577_35,
        3 => {
            let d2 = u * u + v * v;
            d2 < r * r && d2 > 0.3 * r * r
        }
        _ => (u.abs() < 0.3 * r && v.abs() < r) || (v.abs() < 0.3 * r && u.abs() < r),
    }
}

fn tint(class: usize) -> [f32; 3] {
    let h = class as f32 * 2.399_963; // golden angle keeps neighbours apart
    [0.0, 2.094_395, 4.188_790].map(|o| (h + o).cos())
}

fn render(class: usize, difficulty: f32, rng: &mut StreamRng, out: &mut Vec<u8>) {
    let shape = class % SHAPES;
    let orient = (class / SHAPES) % ORIENTATIONS;
    let freq_band = class / (SHAPES * ORIENTATIONS);
    let d = difficulty;

    let theta = orient as f32 * PI / ORIENTATIONS as f32 + rng.random_range(-1.0..=1.0) * d * PI / 9.0;
    let period = 4.0 + 1.5 * (freq_band % 4) as f32 + rng.random_range(-0.4..=0.4);
    let phase = rng.random_range(0.0..2.0 * PI);

    let strength = 0.35 * (1.0 - 0.5 * d);
    let t = tint(class);
    let light_shapes = rng.random::<bool>();
    let mut colour = |lo: f32, hi: f32, bias: f32| {
        let mut c = [0.0f32; 3];
        for (k, v) in c.iter_mut().enumerate() {
            *v = (rng.random_range(lo..hi) + bias * t[k]).clamp(0.0, 1.0);
        }
        c
    };
    // Shapes and background sit on opposite halves of the intensity range,
    // with random polarity, so every copy stays visible.
    let (dark, light) = ((0.0, 0.45), (0.55, 1.0));
    let (b, f) = if light_shapes { (dark, light) } else { (light, dark) };
    let bg = [colour(b.0, b.1, 0.5 * strength), colour(b.0, b.1, 0.5 * strength)];
    let fg = [colour(f.0, f.1, strength), colour(f.0, f.1, strength)];

    // (shape, centre x, centre y, radius, rotation, stripe angle, colours)
    let mut stamps = Vec::new();
    let copies = rng.random_range(3..=5);
    for _ in 0..copies {
        let (cx, cy) = (rng.random_range(2.0..30.0), rng.random_range(2.0..30.0));
        let r = rng.random_range(4.0..7.5);
        let rot = rng.random_range(-1.0..=1.0) * PI / 8.0;
        stamps.push((shape, cx, cy, r, rot, theta, fg));
    }
    let distractors = (rng.random::<f32>() * 2.5 * d) as usize;
    for _ in 0..distractors {
        let other = (shape + rng.random_range(1..SHAPES)) % SHAPES;
        let (cx, cy) = (rng.random_range(2.0..30.0), rng.random_range(2.0..30.0));
        let r = rng.random_range(4.0..7.0);
        let angle = rng.random_range(0.0..PI);
        let cols = [[0.0f32; 3], [0.0; 3]].map(|_| [0; 3].map(|_| rng.random_range(0.0..1.0f32)));
        stamps.push((other, cx, cy, r, 0.0, angle, cols));
    }
    // later stamps paint over earlier ones; shuffle so distractors can hide copies
    for i in (1..stamps.len()).rev() {
        let j = rng.random_range(0..=i);
        stamps.swap(i, j);
    }
    let noise = Normal::new(0.0f32, 0.03 + 0.15 * d).expect("finite std");

    let mut img = [0f32; IMAGE_BYTES];
    let plane = HEIGHT * WIDTH;
    for y in 0..HEIGHT {
        for x in 0..WIDTH {
            let (fx, fy) = (x as f32, y as f32);
            let wave = |angle: f32| {
                let (s, c) = angle.sin_cos();
                0.5 + 0.5 * (2.0 * PI * (fx * c + fy * s) / period + phase).sin()
            };
            let w = wave(theta);
            let mut rgb = [0, 1, 2].map(|c| bg[0][c] * w + bg[1][c] * (1.0 - w));
            for &(sh, cx, cy, r, rot, angle, cols) in &stamps {
                let (px, py) = (fx - cx, fy - cy);
                let (sr, cr) = rot.sin_cos();
                let (u, v) = (cr * px + sr * py, -sr * px + cr * py);
                if inside(sh, u, v, r) {
                    let w = wave(angle);
                    rgb = [0, 1, 2].map(|c| cols[0][c] * w + cols[1][c] * (1.0 - w));
                }
            }
            for c in 0..3 {
                img[c * plane + y * WIDTH + x] = rgb[c] + noise.sample(rng);
            }
        }
    }
    out.extend(img.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticParams {
        SyntheticParams {
            n_train: 400,
            n_test: 200,
            seed: 3,
            difficulty: 0.6,
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = make_synthetic(10, &small()).unwrap();
        let b = make_synthetic(10, &small()).unwrap();
        assert_eq!(a, b);
        let c = make_synthetic(10, &SyntheticParams { seed: 4, ..small() }).unwrap();
        assert_ne!(a.0.pixels, c.0.pixels);
    }

    #[test]
    fn labels_balanced() {
        let (train, _) = make_synthetic(7, &SyntheticParams { n_train: 101, ..small() }).unwrap();
        let mut counts = [0usize; 7];
        for &y in &train.labels {
            counts[y as usize] += 1;
        }
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1, "{counts:?}");
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(make_synthetic(1, &small()).is_err());
        assert!(make_synthetic(10, &SyntheticParams { difficulty: 1.5, ..small() }).is_err());
    }
}
