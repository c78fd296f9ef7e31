use super::InjectionResult;
use crate::error::{Error, Result};
use crate::volume_io::{LabeledVolume, BACKGROUND};

/// Separable Gaussian blur of an `h × w` image with mirrored edges.
pub fn gaussian_blur_2d(img: &[f32], h: usize, w: usize, sigma: f64) -> Vec<f32> {
    if sigma <= 0.0 || img.is_empty() {
        return img.to_vec();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let period = 2 * n;
        let mut j = i.rem_euclid(period.max(1));
        if j >= n {
            j = period - 1 - j;
        }
        j.clamp(0, n - 1) as usize
    };
    let pass = |src: &[f32], along_w: bool| -> Vec<f32> {
        let mut out = vec![0f32; src.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    let o = k as isize - r;
                    let v = if along_w {
                        src[y * w + reflect(x as isize + o, w)]
                    } else {
                        src[reflect(y as isize + o, h) * w + x]
                    };
                    acc += kv * v as f64;
                }
                out[y * w + x] = (acc / norm) as f32;
            }
        }
        out
    };
    pass(&pass(img, true), false)
}

/// Top-left corner of an all-background `ph × pw` window of slice labels
/// that avoids `mask`, nearest to `(cy, cx)`.
fn find_patch(
    labels: &[u8],
    mask: &[bool],
    (h, w): (usize, usize),
    (ph, pw): (usize, usize),
    (cy, cx): (f64, f64),
) -> Option<(usize, usize)> {
    if ph > h || pw > w {
        return None;
    }
    // summed-area table of unusable voxels
    let mut bad = vec![0u32; (h + 1) * (w + 1)];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let b = (labels[i] != BACKGROUND || mask[i]) as u32;
            bad[(y + 1) * (w + 1) + x + 1] =
                b + bad[y * (w + 1) + x + 1] + bad[(y + 1) * (w + 1) + x] - bad[y * (w + 1) + x];
        }
    }
    let sum = |y: usize, x: usize| {
        bad[(y + ph) * (w + 1) + x + pw] + bad[y * (w + 1) + x] - bad[y * (w + 1) + x + pw] - bad[(y + ph) * (w + 1) + x]
    };
    let mut best: Option<(f64, (usize, usize))> = None;
    for y in 0..=h - ph {
        for x in 0..=w - pw {
            if sum(y, x) != 0 {
                continue;
            }
            let dy = y as f64 + ph as f64 / 2.0 - cy;
            let dx = x as f64 + pw as f64 / 2.0 - cx;
            let d = dy * dy + dx * dx;
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, (y, x)));
            }
        }
    }
    best.map(|(_, p)| p)
}

/// Fills the injected region of every affected slice with blurred background
/// texture cropped from the same slice. Labels are left untouched.
pub fn synthesize_image(r: &InjectionResult, blur_sigma: f64) -> Result<LabeledVolume> {
    if !(blur_sigma.is_finite() && blur_sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("blur sigma {blur_sigma}")));
    }
    if !r.injected_mask.data().contains(&true) {
        return Err(Error::EmptyInjection);
    }
    let v = &r.volume;
    let [dn, hn, wn] = v.dims();
    let mut image = v.image().clone();
    for d in 0..dn {
        let mask = r.injected_mask.slice(d);
        let cells: Vec<(usize, usize)> = (0..hn * wn).filter(|&i| mask[i]).map(|i| (i / wn, i % wn)).collect();
        if cells.is_empty() {
            continue;
        }
        let y0 = cells.iter().map(|c| c.0).min().expect("non-empty");
        let y1 = cells.iter().map(|c| c.0).max().expect("non-empty");
        let x0 = cells.iter().map(|c| c.1).min().expect("non-empty");
        let x1 = cells.iter().map(|c| c.1).max().expect("non-empty");
        let (bh, bw) = (y1 - y0 + 1, x1 - x0 + 1);
        let center = ((y0 + y1) as f64 / 2.0, (x0 + x1) as f64 / 2.0);
        let labels = v.labels().slice(d);

        // Largest background window available, halving until one fits.
        let (mut ph, mut pw) = (bh, bw);
        let origin = loop {
            if let Some(o) = find_patch(labels, mask, (hn, wn), (ph, pw), center) {
                break o;
            }
            if ph == 1 && pw == 1 {
                return Err(Error::NoBackground { slice: d });
            }
            ph = ph.div_ceil(2);
            pw = pw.div_ceil(2);
        };
        let src = image.slice(d);
        let patch: Vec<f32> = (0..ph * pw)
            .map(|i| src[(origin.0 + i / pw) * wn + origin.1 + i % pw])
            .collect();
        // stitch copies of the patch over the bounding box
        let stitched: Vec<f32> = (0..bh * bw)
            .map(|i| patch[(i / bw % ph) * pw + (i % bw) % pw])
            .collect();
        let blurred = gaussian_blur_2d(&stitched, bh, bw, blur_sigma);
        let plane = image.slice_mut(d);
        for &(y, x) in &cells {
            plane[y * wn + x] = blurred[(y - y0) * bw + (x - x0)].clamp(0.0, 1.0);
        }
    }
    v.with_image(image)
}
