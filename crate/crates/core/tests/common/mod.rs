#![allow(dead_code)]

pub mod gradcheck;
pub mod oracles;

use defn_core::harness::Case;
use defn_core::volume_io::{LabeledVolume, Spacing};
use defn_core::Grid3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A layered toy retina: background, a retina slab along H, a hole (2) cut
/// into the slab and an edema pocket (3) beside it. Intensities depend on the
/// class with a little seeded noise.
pub fn synthetic_case(n: usize, seed: u64) -> LabeledVolume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = n as f64 / 2.0;
    let top = n as f64 * rng.random_range(0.3..0.4);
    let bottom = n as f64 * rng.random_range(0.65..0.75);
    let hole_r = n as f64 * rng.random_range(0.12..0.18);
    let hole = [c + rng.random_range(-2.0..2.0), top + hole_r * 0.6, c + rng.random_range(-2.0..2.0)];
    let edema_r = n as f64 * rng.random_range(0.08..0.12);
    let edema = [hole[0], (top + bottom) / 2.0 + 2.0, hole[2] + hole_r + edema_r + 1.0];
    let dist = |p: [f64; 3], q: [f64; 3]| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
    let labels = Grid3::from_fn([n, n, n], |d, h, w| {
        let p = [d as f64, h as f64, w as f64];
        let hf = h as f64;
        if dist(p, hole) <= hole_r && hf >= top - 1.0 {
            2
        } else if hf < top || hf > bottom {
            0
        } else if dist(p, edema) <= edema_r {
            3
        } else {
            1
        }
    });
    let level = [0.1f32, 0.7, 0.3, 0.45];
    let image = labels.map(|&l| (level[l as usize] + rng.random_range(-0.05f32..0.05)).clamp(0.0, 1.0));
    LabeledVolume::new(image, labels, Spacing::new(0.05, 0.012, 0.012).unwrap(), format!("synthetic{seed}")).unwrap()
}

pub fn synthetic_cases(count: usize, n: usize, seed: u64) -> Vec<Case> {
    (0..count)
        .map(|i| Case {
            name: format!("case{i}"),
            volume: synthetic_case(n, seed + i as u64),
        })
        .collect()
}

/// Foreground Dice (classes 1..) pooled over the grids.
pub fn foreground_dice(pred: &[u8], truth: &[u8]) -> f64 {
    let mut inter = 0usize;
    let mut total = 0usize;
    for c in 1..4u8 {
        for (&p, &t) in pred.iter().zip(truth) {
            inter += (p == c && t == c) as usize;
            total += (p == c) as usize + (t == c) as usize;
        }
    }
    2.0 * inter as f64 / total as f64
}
