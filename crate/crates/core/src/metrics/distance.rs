//! Surface voxels and exact Euclidean distance transforms.

use serde::{Deserialize, Serialize};

use super::{MetricsInput, PerClass};
use crate::error::{Error, Result};
use crate::grid::{face_neighbors, Grid3};
use crate::volume_io::Spacing;

/// How the two directed mean surface distances are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AssdMode {
    /// Average of the two directed means.
    #[default]
    SymmetricAverage,
    /// Sum of the two directed means.
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistanceUnits {
    #[default]
    Millimeters,
    Voxels,
}

fn surface_mask(labels: &Grid3<u8>, class: u8) -> Vec<bool> {
    let dims = labels.dims();
    let data = labels.data();
    (0..data.len())
        .map(|i| {
            if data[i] != class {
                return false;
            }
            let p = labels.coords(i);
            // out-of-bounds neighbors count as other-class
            let inside = face_neighbors(dims, p).count();
            inside < 6 || face_neighbors(dims, p).any(|q| labels[q] != class)
        })
        .collect()
}

/// Class voxels with at least one face neighbor of another class or outside
/// the grid, in raster order.
pub fn surface_extract(labels: &Grid3<u8>, class: u8) -> Vec<[usize; 3]> {
    surface_mask(labels, class)
        .iter()
        .enumerate()
        .filter(|(_, &s)| s)
        .map(|(i, _)| labels.coords(i))
        .collect()
}

/// Lower envelope of parabolas along one line; `f` holds squared distances
/// (infinite where no feature), sampled at positions `i·step`.
fn envelope_1d(f: &[f64], step: f64, out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    v.clear();
    z.clear();
    let pos = |i: usize| i as f64 * step;
    for q in 0..f.len() {
        if f[q].is_infinite() {
            continue;
        }
        let xq = pos(q);
        loop {
            let Some(&p) = v.last() else {
                v.push(q);
                z.push(f64::NEG_INFINITY);
                break;
            };
            let xp = pos(p);
            let s = ((f[q] + xq * xq) - (f[p] + xp * xp)) / (2.0 * (xq - xp));
            if s <= *z.last().expect("z tracks v") {
                v.pop();
                z.pop();
                continue;
            }
            v.push(q);
            z.push(s);
            break;
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let x = pos(q);
        while k + 1 < v.len() && z[k + 1] < x {
            k += 1;
        }
        let d = x - pos(v[k]);
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance (in physical units) from every voxel to the
/// nearest `true` voxel of `features`; infinite if there is none.
pub fn edt_squared(features: &[bool], dims: [usize; 3], spacing: Spacing) -> Vec<f64> {
    let [dn, hn, wn] = dims;
    let mut g: Vec<f64> = features
        .iter()
        .map(|&f| if f { 0.0 } else { f64::INFINITY })
        .collect();
    let steps = spacing.as_array();
    let (mut v, mut z) = (Vec::new(), Vec::new());
    let strides = [hn * wn, wn, 1];
    for axis in [2usize, 1, 0] {
        let n = dims[axis];
        let st = strides[axis];
        let mut line = vec![0.0; n];
        let mut out = vec![0.0; n];
        for start in 0..dn * hn * wn {
            if (start / st) % n != 0 {
                continue;
            }
            for (i, l) in line.iter_mut().enumerate() {
                *l = g[start + i * st];
            }
            envelope_1d(&line, steps[axis], &mut out, &mut v, &mut z);
            for (i, &o) in out.iter().enumerate() {
                g[start + i * st] = o;
            }
        }
    }
    g
}

/// Distances from every surface voxel of `from` to the nearest surface voxel
/// of `to`, in raster order of `from`.
fn directed(from: &[bool], to_edt: &[f64]) -> Vec<f64> {
    from.iter()
        .zip(to_edt)
        .filter(|(&s, _)| s)
        .map(|(_, &d2)| d2.sqrt())
        .collect()
}

/// Directed surface distances (truth → prediction, prediction → truth) for
/// one class, or `None` if either surface is empty.
pub fn surface_distances(m: &MetricsInput, class: u8) -> Option<(Vec<f64>, Vec<f64>)> {
    let dims = m.pred.dims();
    let sp = surface_mask(m.pred, class);
    let st = surface_mask(m.truth, class);
    if !sp.contains(&true) || !st.contains(&true) {
        return None;
    }
    let ep = edt_squared(&sp, dims, m.spacing);
    let et = edt_squared(&st, dims, m.spacing);
    Some((directed(&st, &ep), directed(&sp, &et)))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub(crate) fn assd_from(t2p: &[f64], p2t: &[f64], mode: AssdMode) -> f64 {
    let total = mean(t2p) + mean(p2t);
    match mode {
        AssdMode::SymmetricAverage => total / 2.0,
        AssdMode::Sum => total,
    }
}

/// Linear-interpolated percentile of the pooled directed distances.
pub(crate) fn percentile_from(t2p: &[f64], p2t: &[f64], pct: f64) -> f64 {
    let mut all: Vec<f64> = t2p.iter().chain(p2t).copied().collect();
    all.sort_by(f64::total_cmp);
    let rank = pct / 100.0 * (all.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    all[lo] + (all[hi] - all[lo]) * (rank - lo as f64)
}

/// Average symmetric surface distance per class.
pub fn assd(m: &MetricsInput, mode: AssdMode) -> PerClass {
    PerClass::from_values(
        m.classes
            .iter()
            .map(|&c| surface_distances(m, c).map(|(a, b)| assd_from(&a, &b, mode)))
            .collect(),
    )
}

/// Percentile (100 = classic Hausdorff) of the pooled directed surface distances.
pub fn hausdorff(m: &MetricsInput, percentile: f64) -> Result<PerClass> {
    if !(0.0..=100.0).contains(&percentile) {
        return Err(Error::InvalidArgument(format!("percentile {percentile} outside [0, 100]")));
    }
    Ok(PerClass::from_values(
        m.classes
            .iter()
            .map(|&c| surface_distances(m, c).map(|(a, b)| percentile_from(&a, &b, percentile)))
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_surface_excludes_center() {
        let g = Grid3::filled([3, 3, 3], 1u8);
        assert_eq!(surface_extract(&g, 1).len(), 26);
        let mut g = Grid3::filled([5, 5, 5], 0u8);
        for d in 1..4 {
            for h in 1..4 {
                for w in 1..4 {
                    g[[d, h, w]] = 1;
                }
            }
        }
        let s = surface_extract(&g, 1);
        assert_eq!(s.len(), 26);
        assert!(!s.contains(&[2, 2, 2]));
        assert!(surface_extract(&g, 3).is_empty());
    }

    #[test]
    fn three_four_five() {
        let mut p = Grid3::filled([1, 4, 5], 0u8);
        let mut t = p.clone();
        t[[0, 0, 0]] = 1;
        p[[0, 3, 4]] = 1;
        let m = MetricsInput::new(&p, &t, Spacing::isotropic(1.0).unwrap(), &[1]).unwrap();
        assert!((assd(&m, AssdMode::SymmetricAverage).values[0].unwrap() - 5.0).abs() < 1e-12);
        assert!((assd(&m, AssdMode::Sum).values[0].unwrap() - 10.0).abs() < 1e-12);
        assert!((hausdorff(&m, 100.0).unwrap().values[0].unwrap() - 5.0).abs() < 1e-12);
        assert!((hausdorff(&m, 95.0).unwrap().values[0].unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn edt_matches_brute_force_anisotropic() {
        let dims = [4, 5, 6];
        let n = 120;
        let feats: Vec<bool> = (0..n).map(|i| (i * 37 + 11) % 17 == 0).collect();
        let sp = Spacing::new(0.5, 1.5, 0.25).unwrap();
        let e = edt_squared(&feats, dims, sp);
        let g = Grid3::filled(dims, 0u8);
        for i in 0..n {
            let a = g.coords(i);
            let best = (0..n)
                .filter(|&j| feats[j])
                .map(|j| {
                    let b = g.coords(j);
                    let dd = (a[0] as f64 - b[0] as f64) * 0.5;
                    let dh = (a[1] as f64 - b[1] as f64) * 1.5;
                    let dw = (a[2] as f64 - b[2] as f64) * 0.25;
                    dd * dd + dh * dh + dw * dw
                })
                .fold(f64::INFINITY, f64::min);
            assert!((e[i] - best).abs() < 1e-9, "voxel {i}: {} vs {best}", e[i]);
        }
    }

    #[test]
    fn missing_surface_is_undefined() {
        let p = Grid3::filled([2, 2, 2], 0u8);
        let t = Grid3::filled([2, 2, 2], 1u8);
        let m = MetricsInput::new(&p, &t, Spacing::isotropic(1.0).unwrap(), &[1]).unwrap();
        assert_eq!(assd(&m, AssdMode::default()).values, vec![None]);
    }
}
