//! Brute-force reference implementations used to cross-check the library.

use std::collections::VecDeque;

use defn_core::volume_io::Spacing;
use defn_core::Grid3;
use rand::Rng;

/// Random labels in `0..classes`: either i.i.d. per voxel or a few painted
/// boxes over a background, so both ragged and blocky surfaces show up.
pub fn random_labels(rng: &mut impl Rng, dims: [usize; 3], classes: u8) -> Grid3<u8> {
    if rng.random_bool(0.5) {
        return Grid3::from_fn(dims, |_, _, _| rng.random_range(0..classes));
    }
    let mut g = Grid3::filled(dims, 0u8);
    for _ in 0..rng.random_range(1..6) {
        let c = rng.random_range(0..classes);
        let lo: Vec<usize> = dims.iter().map(|&n| rng.random_range(0..n)).collect();
        let hi: Vec<usize> = (0..3).map(|i| rng.random_range(lo[i]..dims[i]) + 1).collect();
        for d in lo[0]..hi[0] {
            for h in lo[1]..hi[1] {
                for w in lo[2]..hi[2] {
                    *g.get_mut(d, h, w) = c;
                }
            }
        }
    }
    g
}

pub fn random_spacing(rng: &mut impl Rng) -> Spacing {
    Spacing::new(
        rng.random_range(0.01..0.2),
        rng.random_range(0.01..0.2),
        rng.random_range(0.01..0.2),
    )
    .unwrap()
}

const FACES: [[isize; 3]; 6] = [[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]];

fn offset(dims: [usize; 3], p: [usize; 3], o: [isize; 3]) -> Option<[usize; 3]> {
    let mut q = [0usize; 3];
    for i in 0..3 {
        let v = p[i] as isize + o[i];
        if v < 0 || v >= dims[i] as isize {
            return None;
        }
        q[i] = v as usize;
    }
    Some(q)
}

/// Voxels of `class` touching another class or the grid border across a face.
pub fn surface(labels: &Grid3<u8>, class: u8) -> Vec<[usize; 3]> {
    let dims = labels.dims();
    let mut out = Vec::new();
    for d in 0..dims[0] {
        for h in 0..dims[1] {
            for w in 0..dims[2] {
                if *labels.get(d, h, w) != class {
                    continue;
                }
                let edge = FACES.iter().any(|&o| match offset(dims, [d, h, w], o) {
                    None => true,
                    Some(q) => *labels.get(q[0], q[1], q[2]) != class,
                });
                if edge {
                    out.push([d, h, w]);
                }
            }
        }
    }
    out
}

fn min_distance(p: [usize; 3], set: &[[usize; 3]], sp: [f64; 3]) -> f64 {
    set.iter()
        .map(|q| {
            (0..3)
                .map(|i| ((p[i] as f64 - q[i] as f64) * sp[i]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

fn percentile(sorted: &[f64], pct: f64) -> f64 {
    let pos = pct / 100.0 * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    if i + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    let frac = pos - i as f64;
    sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
}

/// `(ASSD, HD, HD95)` for one class from all surface-pair distances, or
/// `None` when either surface is empty.
pub fn surface_metrics(pred: &Grid3<u8>, truth: &Grid3<u8>, class: u8, spacing: Spacing) -> Option<(f64, f64, f64)> {
    let sp = spacing.as_array();
    let a = surface(pred, class);
    let b = surface(truth, class);
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let ab: Vec<f64> = a.iter().map(|&p| min_distance(p, &b, sp)).collect();
    let ba: Vec<f64> = b.iter().map(|&p| min_distance(p, &a, sp)).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let assd = 0.5 * (mean(&ab) + mean(&ba));
    let mut pooled: Vec<f64> = ab.into_iter().chain(ba).collect();
    pooled.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let hd = *pooled.last().unwrap();
    Some((assd, hd, percentile(&pooled, 95.0)))
}

/// `(|P∩T|, |P∪T|, |P| + |T|)` for one class.
pub fn overlap(pred: &Grid3<u8>, truth: &Grid3<u8>, class: u8) -> (u64, u64, u64) {
    let mut inter = 0;
    let mut union = 0;
    let mut total = 0;
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        let (a, b) = (p == class, t == class);
        inter += (a && b) as u64;
        union += (a || b) as u64;
        total += a as u64 + b as u64;
    }
    (inter, union, total)
}

/// Adjusted Rand index by classifying every unordered pair of items.
pub fn ari_by_pairs(a: &[u8], b: &[u8]) -> f64 {
    let (mut both, mut only_a, mut only_b, mut neither) = (0i128, 0i128, 0i128, 0i128);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => both += 1,
                (true, false) => only_a += 1,
                (false, true) => only_b += 1,
                (false, false) => neither += 1,
            }
        }
    }
    let num = 2 * (neither * both - only_a * only_b);
    let den = (neither + only_a) * (only_a + both) + (neither + only_b) * (only_b + both);
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Breadth-first search from every `seeds` voxel through face-adjacent voxels
/// labeled `class`; returns the reached `class` voxels outside the seeds.
pub fn flood_from(labels: &Grid3<u8>, seeds: &Grid3<bool>, class: u8) -> Grid3<bool> {
    let dims = labels.dims();
    let mut reached = Grid3::filled(dims, false);
    let mut visited = Grid3::filled(dims, false);
    let mut queue = VecDeque::new();
    for d in 0..dims[0] {
        for h in 0..dims[1] {
            for w in 0..dims[2] {
                if *seeds.get(d, h, w) {
                    *visited.get_mut(d, h, w) = true;
                    queue.push_back([d, h, w]);
                }
            }
        }
    }
    while let Some(p) = queue.pop_front() {
        for o in FACES {
            let Some(q) = offset(dims, p, o) else { continue };
            if *visited.get(q[0], q[1], q[2]) || *labels.get(q[0], q[1], q[2]) != class {
                continue;
            }
            *visited.get_mut(q[0], q[1], q[2]) = true;
            *reached.get_mut(q[0], q[1], q[2]) = true;
            queue.push_back(q);
        }
    }
    reached
}

/// Coordinates of the `true` voxels of a mask.
pub fn voxels(mask: &Grid3<bool>) -> Vec<[usize; 3]> {
    (0..mask.len()).filter(|&i| mask.data()[i]).map(|i| mask.coords(i)).collect()
}

/// Smallest Euclidean voxel distance from `p` to any of `set`.
pub fn voxel_distance(p: [usize; 3], set: &[[usize; 3]]) -> f64 {
    min_distance(p, set, [1.0; 3])
}
