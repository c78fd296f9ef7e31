use super::{LabeledVolume, Spacing};
use crate::error::{Error, Result};
use crate::grid::Grid3;

/// Source coordinate of a target voxel center (half-pixel aligned).
#[inline]
fn src_coord(dst: usize, src_len: usize, dst_len: usize) -> f64 {
    if src_len == dst_len {
        return dst as f64;
    }
    let c = (dst as f64 + 0.5) * (src_len as f64 / dst_len as f64) - 0.5;
    c.clamp(0.0, (src_len - 1) as f64)
}

#[inline]
fn nearest(dst: usize, src_len: usize, dst_len: usize) -> usize {
    if src_len == dst_len {
        return dst;
    }
    let c = ((dst as f64 + 0.5) * (src_len as f64 / dst_len as f64)).floor() as usize;
    c.min(src_len - 1)
}

fn axis_weights(src_len: usize, dst_len: usize) -> Vec<(usize, usize, f64)> {
    (0..dst_len)
        .map(|i| {
            let c = src_coord(i, src_len, dst_len);
            let lo = c.floor() as usize;
            let hi = (lo + 1).min(src_len - 1);
            (lo, hi, c - lo as f64)
        })
        .collect()
}

pub(crate) fn trilinear(src: &Grid3<f32>, target: [usize; 3]) -> Grid3<f32> {
    let [sd, sh, sw] = src.dims();
    let wd = axis_weights(sd, target[0]);
    let wh = axis_weights(sh, target[1]);
    let ww = axis_weights(sw, target[2]);
    Grid3::from_fn(target, |d, h, w| {
        let (d0, d1, fd) = wd[d];
        let (h0, h1, fh) = wh[h];
        let (w0, w1, fw) = ww[w];
        let at = |a, b, c| *src.get(a, b, c) as f64;
        let c00 = at(d0, h0, w0) * (1.0 - fw) + at(d0, h0, w1) * fw;
        let c01 = at(d0, h1, w0) * (1.0 - fw) + at(d0, h1, w1) * fw;
        let c10 = at(d1, h0, w0) * (1.0 - fw) + at(d1, h0, w1) * fw;
        let c11 = at(d1, h1, w0) * (1.0 - fw) + at(d1, h1, w1) * fw;
        let c0 = c00 * (1.0 - fh) + c01 * fh;
        let c1 = c10 * (1.0 - fh) + c11 * fh;
        (c0 * (1.0 - fd) + c1 * fd) as f32
    })
}

/// Nearest-neighbor resampling of a label grid.
pub fn resample_labels_nearest(src: &Grid3<u8>, target: [usize; 3]) -> Grid3<u8> {
    let [sd, sh, sw] = src.dims();
    let nd: Vec<usize> = (0..target[0]).map(|i| nearest(i, sd, target[0])).collect();
    let nh: Vec<usize> = (0..target[1]).map(|i| nearest(i, sh, target[1])).collect();
    let nw: Vec<usize> = (0..target[2]).map(|i| nearest(i, sw, target[2])).collect();
    Grid3::from_fn(target, |d, h, w| *src.get(nd[d], nh[h], nw[w]))
}

/// Resamples to `target` voxels, keeping the physical extent.
pub fn resample_volume(v: &LabeledVolume, target: [usize; 3]) -> Result<LabeledVolume> {
    if target.iter().any(|&n| n == 0) {
        return Err(Error::InvalidArgument(format!(
            "target dims must be >= 1, got {target:?}"
        )));
    }
    let src = v.dims();
    let sp = v.spacing();
    let spacing = Spacing::new(
        sp.d * src[0] as f64 / target[0] as f64,
        sp.h * src[1] as f64 / target[1] as f64,
        sp.w * src[2] as f64 / target[2] as f64,
    )?;
    let image = trilinear(v.image(), target);
    let labels = resample_labels_nearest(v.labels(), target);
    LabeledVolume::new(image, labels, spacing, v.meta.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(dims: [usize; 3]) -> LabeledVolume {
        let n = (dims[0] * dims[1] * dims[2]) as f32;
        let img = Grid3::from_fn(dims, |d, h, w| {
            ((d * dims[1] + h) * dims[2] + w) as f32 / n
        });
        let lab = Grid3::from_fn(dims, |d, h, w| ((d + h + w) % 4) as u8);
        LabeledVolume::new(img, lab, Spacing::new(0.5, 0.25, 0.125).unwrap(), "ramp").unwrap()
    }

    #[test]
    fn identity_resample() {
        let v = ramp([6, 5, 4]);
        let r = resample_volume(&v, [6, 5, 4]).unwrap();
        assert_eq!(r.labels(), v.labels());
        for (a, b) in r.image().data().iter().zip(v.image().data()) {
            assert!((a - b).abs() <= 1e-6);
        }
        assert_eq!(r.spacing(), v.spacing());
    }

    #[test]
    fn constant_field_stays_constant() {
        let v = LabeledVolume::new(
            Grid3::filled([5, 7, 3], 0.3),
            Grid3::filled([5, 7, 3], 1),
            Spacing::isotropic(1.0).unwrap(),
            "",
        )
        .unwrap();
        let r = resample_volume(&v, [9, 4, 11]).unwrap();
        assert!(r.image().data().iter().all(|&x| (x - 0.3).abs() < 1e-6));
        assert!(r.labels().data().iter().all(|&l| l == 1));
    }

    #[test]
    fn physical_extent_preserved() {
        let v = ramp([48, 8, 8]);
        let r = resample_volume(&v, [96, 8, 8]).unwrap();
        assert!((r.spacing().d - v.spacing().d / 2.0).abs() < 1e-12);
        let ext = |x: &LabeledVolume| {
            let s = x.spacing();
            let d = x.dims();
            [s.d * d[0] as f64, s.h * d[1] as f64, s.w * d[2] as f64]
        };
        for (a, b) in ext(&v).iter().zip(ext(&r).iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_target_rejected() {
        assert!(resample_volume(&ramp([2, 2, 2]), [0, 2, 2]).is_err());
    }
}
