//! `slice_dir` layout: `images/*.png`, `masks/*.png`, `spacing.json`.

use std::cmp::Ordering;
use std::fs;
use std::path::{Path, PathBuf};

use image::{ColorType, DynamicImage, GrayImage};

use super::{ClassMap, LabeledVolume, Spacing};
use crate::error::{Error, Result};
use crate::grid::Grid3;

const SIDECAR: &str = "spacing.json";

/// Numeric-aware ordering: `2.png < 10.png`.
pub(crate) fn natural_cmp(a: &str, b: &str) -> Ordering {
    let (mut ai, mut bi) = (a.chars().peekable(), b.chars().peekable());
    loop {
        match (ai.peek().copied(), bi.peek().copied()) {
            (None, None) => return Ordering::Equal,
            (None, Some(_)) => return Ordering::Less,
            (Some(_), None) => return Ordering::Greater,
            (Some(x), Some(y)) if x.is_ascii_digit() && y.is_ascii_digit() => {
                let mut na = String::new();
                while let Some(c) = ai.peek().copied().filter(char::is_ascii_digit) {
                    na.push(c);
                    ai.next();
                }
                let mut nb = String::new();
                while let Some(c) = bi.peek().copied().filter(char::is_ascii_digit) {
                    nb.push(c);
                    bi.next();
                }
                let ta = na.trim_start_matches('0');
                let tb = nb.trim_start_matches('0');
                let ord = ta
                    .len()
                    .cmp(&tb.len())
                    .then_with(|| ta.cmp(tb))
                    .then_with(|| na.len().cmp(&nb.len()));
                if ord != Ordering::Equal {
                    return ord;
                }
            }
            (Some(x), Some(y)) => {
                if x != y {
                    return x.cmp(&y);
                }
                ai.next();
                bi.next();
            }
        }
    }
}

fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = p
            .extension()
            .map(|e| e.eq_ignore_ascii_case("png"))
            .unwrap_or(false);
        if is_png && p.is_file() {
            files.push(p);
        }
    }
    files.sort_by(|a, b| {
        natural_cmp(
            &a.file_name().unwrap().to_string_lossy(),
            &b.file_name().unwrap().to_string_lossy(),
        )
    });
    Ok(files)
}

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn read_intensity_slice(path: &Path) -> Result<(u32, u32, Vec<f32>)> {
    let img = open(path)?;
    let (w, h) = (img.width(), img.height());
    let vals = match img.color() {
        ColorType::L16 | ColorType::La16 | ColorType::Rgb16 | ColorType::Rgba16 => img
            .to_luma16()
            .into_raw()
            .into_iter()
            .map(|v| v as f32 / 65535.0)
            .collect(),
        _ => img
            .to_luma8()
            .into_raw()
            .into_iter()
            .map(|v| v as f32 / 255.0)
            .collect(),
    };
    Ok((w, h, vals))
}

fn read_mask_slice(path: &Path, classes: &ClassMap) -> Result<(u32, u32, Vec<u8>)> {
    let img = open(path)?;
    let (w, h) = (img.width(), img.height());
    let ids = match img.color() {
        ColorType::L8 | ColorType::La8 | ColorType::L16 | ColorType::La16 => {
            let gray = img.to_luma8();
            gray.into_raw()
                .into_iter()
                .map(|v| {
                    if classes.contains(v) {
                        Ok(v)
                    } else {
                        Err(Error::UnregisteredColor {
                            color: [v, v, v],
                            path: path.to_path_buf(),
                        })
                    }
                })
                .collect::<Result<Vec<u8>>>()?
        }
        _ => img
            .to_rgb8()
            .pixels()
            .map(|p| {
                classes
                    .id_for_color(p.0)
                    .ok_or_else(|| Error::UnregisteredColor {
                        color: p.0,
                        path: path.to_path_buf(),
                    })
            })
            .collect::<Result<Vec<u8>>>()?,
    };
    Ok((w, h, ids))
}

fn read_spacing(dir: &Path) -> Result<Spacing> {
    let p = dir.join(SIDECAR);
    if !p.exists() {
        log::warn!(
            "{} missing; using placeholder spacing {:?} (not authoritative)",
            p.display(),
            Spacing::PLACEHOLDER
        );
        return Ok(Spacing::PLACEHOLDER);
    }
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let s: Spacing =
        serde_json::from_str(&text).map_err(|e| Error::format(&p, e.to_string()))?;
    s.validate()?;
    Ok(s)
}

pub(super) fn load_image(dir: &Path) -> Result<(Grid3<f32>, Spacing)> {
    let images = list_pngs(&dir.join("images"))?;
    if images.is_empty() {
        return Err(Error::InvalidVolume(format!("{} has no image slices", dir.display())));
    }
    let mut data = Vec::new();
    let mut plane = None;
    for ip in &images {
        let (w, h, vals) = read_intensity_slice(ip)?;
        if *plane.get_or_insert((w, h)) != (w, h) {
            return Err(Error::Shape(format!("{} is {w}x{h}, earlier slices differ", ip.display())));
        }
        data.extend(vals);
    }
    let (w, h) = plane.expect("at least one slice");
    let dims = [images.len(), h as usize, w as usize];
    Ok((Grid3::from_vec(dims, data)?, read_spacing(dir)?))
}

pub(super) fn load(dir: &Path, classes: &ClassMap) -> Result<LabeledVolume> {
    let images = list_pngs(&dir.join("images"))?;
    let masks = list_pngs(&dir.join("masks"))?;
    if images.is_empty() {
        return Err(Error::InvalidVolume(format!(
            "{} has no image slices",
            dir.display()
        )));
    }
    if images.len() != masks.len() {
        return Err(Error::Shape(format!(
            "{} image slices vs {} mask slices in {}",
            images.len(),
            masks.len(),
            dir.display()
        )));
    }
    let depth = images.len();
    let mut image_data = Vec::new();
    let mut label_data = Vec::new();
    let mut plane: Option<(u32, u32)> = None;
    for (ip, mp) in images.iter().zip(&masks) {
        let (w, h, vals) = read_intensity_slice(ip)?;
        let (mw, mh, ids) = read_mask_slice(mp, classes)?;
        if (w, h) != (mw, mh) {
            return Err(Error::Shape(format!(
                "{} is {w}x{h} but {} is {mw}x{mh}",
                ip.display(),
                mp.display()
            )));
        }
        match plane {
            None => plane = Some((w, h)),
            Some(p) if p != (w, h) => {
                return Err(Error::Shape(format!(
                    "{} is {w}x{h}, earlier slices are {}x{}",
                    ip.display(),
                    p.0,
                    p.1
                )))
            }
            _ => {}
        }
        image_data.extend(vals);
        label_data.extend(ids);
    }
    let (w, h) = plane.expect("at least one slice");
    let dims = [depth, h as usize, w as usize];
    LabeledVolume::with_classes(
        Grid3::from_vec(dims, image_data)?,
        Grid3::from_vec(dims, label_data)?,
        read_spacing(dir)?,
        dir.display().to_string(),
        classes,
    )
}

pub(super) fn save(v: &LabeledVolume, dir: &Path) -> Result<()> {
    let img_dir = dir.join("images");
    let mask_dir = dir.join("masks");
    for d in [&img_dir, &mask_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let [depth, h, w] = v.dims();
    let width = depth.to_string().len().max(3);
    for d in 0..depth {
        let name = format!("{d:0width$}.png");
        let pixels: Vec<u8> = v
            .image()
            .slice(d)
            .iter()
            .map(|&x| (x.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let img = GrayImage::from_raw(w as u32, h as u32, pixels).expect("slice size");
        let p = img_dir.join(&name);
        img.save(&p).map_err(|source| Error::Image { path: p, source })?;
        let mask =
            GrayImage::from_raw(w as u32, h as u32, v.labels().slice(d).to_vec()).expect("slice");
        let p = mask_dir.join(&name);
        mask.save(&p).map_err(|source| Error::Image { path: p, source })?;
    }
    let p = dir.join(SIDECAR);
    let text = serde_json::to_string_pretty(&v.spacing()).expect("spacing serializes");
    fs::write(&p, text).map_err(|e| Error::io(&p, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn natural_order() {
        let mut v = vec!["10.png", "2.png", "1.png", "002.png", "a1", "a10", "a2"];
        v.sort_by(|a, b| natural_cmp(a, b));
        assert_eq!(v, vec!["1.png", "2.png", "002.png", "10.png", "a1", "a2", "a10"]);
    }
}
