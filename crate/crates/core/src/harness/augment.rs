//! Training-time spatial and intensity augmentation. Every transform keeps
//! image and labels aligned; spatial ones use nearest-neighbor labels.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::AugmentConfig;
use crate::grid::Grid3;
use crate::volume_io::LabeledVolume;
use crate::Result;

fn flip_axis<T: Copy>(g: &Grid3<T>, axis: usize) -> Grid3<T> {
    let [dn, hn, wn] = g.dims();
    Grid3::from_fn(g.dims(), |d, h, w| match axis {
        0 => *g.get(dn - 1 - d, h, w),
        1 => *g.get(d, hn - 1 - h, w),
        _ => *g.get(d, h, wn - 1 - w),
    })
}

/// Rotates each B-scan plane by `quarter * 90°`. Needs `H == W`.
fn rotate_hw<T: Copy>(g: &Grid3<T>, quarter: u32) -> Grid3<T> {
    let [_, hn, wn] = g.dims();
    debug_assert_eq!(hn, wn);
    let n = hn - 1;
    Grid3::from_fn(g.dims(), |d, h, w| match quarter % 4 {
        0 => *g.get(d, h, w),
        1 => *g.get(d, w, n - h),
        2 => *g.get(d, n - h, n - w),
        _ => *g.get(d, n - w, h),
    })
}

fn shift<T: Copy>(g: &Grid3<T>, off: [isize; 3], fill: T) -> Grid3<T> {
    Grid3::from_fn(g.dims(), |d, h, w| {
        let s = [d as isize - off[0], h as isize - off[1], w as isize - off[2]];
        if g.in_bounds(s[0], s[1], s[2]) {
            *g.get(s[0] as usize, s[1] as usize, s[2] as usize)
        } else {
            fill
        }
    })
}

/// Isotropic zoom about the volume center, same output size.
fn zoom(image: &Grid3<f32>, labels: &Grid3<u8>, factor: f64) -> (Grid3<f32>, Grid3<u8>) {
    let dims = image.dims();
    let src = |i: usize, n: usize| (i as f64 + 0.5 - n as f64 / 2.0) / factor + n as f64 / 2.0 - 0.5;
    let img = Grid3::from_fn(dims, |d, h, w| {
        let c = [src(d, dims[0]), src(h, dims[1]), src(w, dims[2])];
        let mut acc = 0.0f64;
        for corner in 0..8 {
            let mut weight = 1.0;
            let mut idx = [0usize; 3];
            for a in 0..3 {
                let lo = c[a].floor();
                let f = c[a] - lo;
                let hi = corner >> a & 1 == 1;
                let p = (if hi { lo + 1.0 } else { lo }).clamp(0.0, (dims[a] - 1) as f64);
                idx[a] = p as usize;
                weight *= if hi { f } else { 1.0 - f };
            }
            acc += weight * *image.get(idx[0], idx[1], idx[2]) as f64;
        }
        acc as f32
    });
    let lab = Grid3::from_fn(dims, |d, h, w| {
        let c = [src(d, dims[0]), src(h, dims[1]), src(w, dims[2])];
        let i: Vec<usize> = (0..3)
            .map(|a| c[a].round().clamp(0.0, (dims[a] - 1) as f64) as usize)
            .collect();
        *labels.get(i[0], i[1], i[2])
    });
    (img, lab)
}

/// Applies each enabled transform with probability `cfg.probability`.
pub fn augment_sample(v: &LabeledVolume, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<LabeledVolume> {
    let mut image = v.image().clone();
    let mut labels = v.labels().clone();
    let hit = |rng: &mut dyn rand::RngCore, on: bool| on && rng.random_bool(cfg.probability);

    if hit(rng, cfg.flip) {
        let axis = rng.random_range(0..3);
        image = flip_axis(&image, axis);
        labels = flip_axis(&labels, axis);
    }
    let [_, hn, wn] = image.dims();
    if hit(rng, cfg.rotate && hn == wn) {
        let q = rng.random_range(1..4);
        image = rotate_hw(&image, q);
        labels = rotate_hw(&labels, q);
    }
    if hit(rng, cfg.translate && cfg.translate_max > 0) {
        let m = cfg.translate_max as i64;
        let mut off = [0isize; 3];
        for o in &mut off {
            *o = rng.random_range(-m..=m) as isize;
        }
        image = shift(&image, off, 0.0);
        labels = shift(&labels, off, 0);
    }
    if hit(rng, cfg.scale) {
        let f = rng.random_range(cfg.scale_range[0]..=cfg.scale_range[1]);
        (image, labels) = zoom(&image, &labels, f);
    }
    if hit(rng, cfg.histogram) {
        let g = rng.random_range(cfg.gamma_range[0]..=cfg.gamma_range[1]) as f32;
        image.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0).powf(g));
    }
    if hit(rng, cfg.noise && cfg.noise_std > 0.0) {
        let n = Normal::new(0.0f32, cfg.noise_std as f32).expect("validated std");
        image
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = (*v + n.sample(rng)).clamp(0.0, 1.0));
    }
    LabeledVolume::new(image, labels, v.spacing(), v.meta.clone())
}
