//! Minimal single-file NIfTI-1 reader/writer (`.nii`, `.nii.gz`).
//!
//! Only what the pipeline needs: 3D scalar volumes, common integer and float
//! datatypes, `pixdim` spacing and `scl_slope`/`scl_inter` scaling. Orientation
//! matrices are written as unset and ignored on read.

use std::fs::File;
use std::io::{BufWriter, Cursor, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ByteOrder, LittleEndian, WriteBytesExt};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{ClassMap, LabeledVolume, Spacing};
use crate::error::{Error, Result};
use crate::grid::Grid3;

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;
const DT_INT8: i16 = 256;
const DT_UINT16: i16 = 512;
const DT_UINT32: i16 = 768;

/// A decoded scalar volume.
struct RawVolume {
    dims: [usize; 3],
    spacing: [f64; 3],
    datatype: i16,
    values: Vec<f64>,
}

fn is_gz(path: &Path) -> bool {
    path.to_string_lossy().to_lowercase().ends_with(".gz")
}

/// `case.nii.gz` -> `case_seg.nii.gz`.
pub(super) fn label_path(image_path: &Path) -> PathBuf {
    let name = image_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let (stem, ext) = if let Some(s) = name.strip_suffix(".nii.gz") {
        (s.to_string(), ".nii.gz")
    } else if let Some(s) = name.strip_suffix(".nii") {
        (s.to_string(), ".nii")
    } else {
        (name.clone(), ".nii.gz")
    };
    image_path.with_file_name(format!("{stem}_seg{ext}"))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|e| Error::io(path, e))?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(Cursor::new(raw))
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn read_raw(path: &Path) -> Result<RawVolume> {
    let bytes = read_bytes(path)?;
    if bytes.len() < HEADER_SIZE {
        return Err(Error::format(path, "file shorter than a NIfTI-1 header"));
    }
    if LittleEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32 {
        parse::<LittleEndian>(path, &bytes)
    } else if BigEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32 {
        parse::<BigEndian>(path, &bytes)
    } else {
        Err(Error::format(path, "sizeof_hdr is not 348"))
    }
}

fn parse<B: ByteOrder>(path: &Path, b: &[u8]) -> Result<RawVolume> {
    let ndim = B::read_i16(&b[40..42]);
    if !(1..=7).contains(&ndim) {
        return Err(Error::format(path, format!("bad dim[0] = {ndim}")));
    }
    let mut dim = [1usize; 7];
    for (i, slot) in dim.iter_mut().enumerate().take(ndim as usize) {
        let v = B::read_i16(&b[42 + 2 * i..44 + 2 * i]);
        if v < 1 {
            return Err(Error::format(path, format!("bad dim[{}] = {v}", i + 1)));
        }
        *slot = v as usize;
    }
    if dim[3..].iter().any(|&n| n != 1) {
        return Err(Error::format(path, "only 3D scalar volumes are supported"));
    }
    let datatype = B::read_i16(&b[70..72]);
    let mut pixdim = [1f64; 3];
    for (i, p) in pixdim.iter_mut().enumerate() {
        let v = B::read_f32(&b[80 + 4 * i..84 + 4 * i]) as f64;
        *p = if v > 0.0 { v } else { 1.0 };
    }
    let vox_offset = B::read_f32(&b[108..112]).max(VOX_OFFSET as f32) as usize;
    let slope = B::read_f32(&b[112..116]) as f64;
    let inter = B::read_f32(&b[116..120]) as f64;
    let magic = &b[344..348];
    if magic != b"n+1\0" {
        return Err(Error::format(path, "not a single-file NIfTI-1 (magic n+1)"));
    }

    let n = dim[0] * dim[1] * dim[2];
    let width = match datatype {
        DT_UINT8 | DT_INT8 => 1,
        DT_INT16 | DT_UINT16 => 2,
        DT_INT32 | DT_UINT32 | DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => return Err(Error::format(path, format!("unsupported datatype {other}"))),
    };
    let data = b
        .get(vox_offset..vox_offset + n * width)
        .ok_or_else(|| Error::format(path, "truncated voxel data"))?;
    let mut values: Vec<f64> = (0..n)
        .map(|i| {
            let c = &data[i * width..(i + 1) * width];
            match datatype {
                DT_UINT8 => c[0] as f64,
                DT_INT8 => c[0] as i8 as f64,
                DT_INT16 => B::read_i16(c) as f64,
                DT_UINT16 => B::read_u16(c) as f64,
                DT_INT32 => B::read_i32(c) as f64,
                DT_UINT32 => B::read_u32(c) as f64,
                DT_FLOAT32 => B::read_f32(c) as f64,
                _ => B::read_f64(c),
            }
        })
        .collect();
    if slope != 0.0 && slope.is_finite() && (slope != 1.0 || inter != 0.0) {
        for v in &mut values {
            *v = *v * slope + inter;
        }
    }
    // NIfTI x (fastest) is our W axis; z is D.
    Ok(RawVolume {
        dims: [dim[2], dim[1], dim[0]],
        spacing: [pixdim[2], pixdim[1], pixdim[0]],
        datatype,
        values,
    })
}

fn header(dims: [usize; 3], spacing: Spacing, datatype: i16, bitpix: i16) -> Result<Vec<u8>> {
    let mut h = vec![0u8; VOX_OFFSET];
    LittleEndian::write_i32(&mut h[0..4], HEADER_SIZE as i32);
    LittleEndian::write_i16(&mut h[40..42], 3);
    let xyz = [dims[2], dims[1], dims[0]];
    for (i, &n) in xyz.iter().enumerate() {
        let n = i16::try_from(n)
            .map_err(|_| Error::InvalidVolume(format!("dimension {n} too large for NIfTI-1")))?;
        LittleEndian::write_i16(&mut h[42 + 2 * i..44 + 2 * i], n);
    }
    for i in 3..7 {
        LittleEndian::write_i16(&mut h[42 + 2 * i..44 + 2 * i], 1);
    }
    LittleEndian::write_i16(&mut h[70..72], datatype);
    LittleEndian::write_i16(&mut h[72..74], bitpix);
    LittleEndian::write_f32(&mut h[76..80], 1.0);
    let pix = [spacing.w, spacing.h, spacing.d];
    for (i, &p) in pix.iter().enumerate() {
        LittleEndian::write_f32(&mut h[80 + 4 * i..84 + 4 * i], p as f32);
    }
    LittleEndian::write_f32(&mut h[108..112], VOX_OFFSET as f32);
    LittleEndian::write_f32(&mut h[112..116], 1.0);
    // xyzt_units: millimetres
    h[123] = 2;
    h[344..348].copy_from_slice(b"n+1\0");
    Ok(h)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let res = if is_gz(path) {
        let mut enc = GzEncoder::new(BufWriter::new(file), Compression::fast());
        enc.write_all(bytes).and_then(|_| enc.finish().map(|_| ()))
    } else {
        let mut w = BufWriter::new(file);
        w.write_all(bytes).and_then(|_| w.flush())
    };
    res.map_err(|e| Error::io(path, e))
}

pub(super) fn write_labels(labels: &Grid3<u8>, spacing: Spacing, path: &Path) -> Result<()> {
    let mut bytes = header(labels.dims(), spacing, DT_UINT8, 8)?;
    bytes.extend_from_slice(labels.data());
    write_file(path, &bytes)
}

pub(super) fn save(v: &LabeledVolume, path: &Path) -> Result<()> {
    let mut bytes = header(v.dims(), v.spacing(), DT_FLOAT32, 32)?;
    bytes.reserve(v.image().len() * 4);
    for &x in v.image().data() {
        bytes.write_f32::<LittleEndian>(x).expect("vec write");
    }
    write_file(path, &bytes)?;
    write_labels(v.labels(), v.spacing(), &label_path(path))
}

fn normalize_intensities(raw: &RawVolume) -> Vec<f32> {
    let vals = &raw.values;
    let (lo, hi) = vals
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let fixed_range = match raw.datatype {
        DT_UINT8 => Some(255.0),
        DT_UINT16 => Some(65535.0),
        _ => None,
    };
    match fixed_range {
        Some(r) if lo >= 0.0 && hi <= r => vals.iter().map(|&v| (v / r) as f32).collect(),
        _ if lo >= 0.0 && hi <= 1.0 => vals.iter().map(|&v| v as f32).collect(),
        _ => {
            let span = if hi > lo { hi - lo } else { 1.0 };
            vals.iter().map(|&v| ((v - lo) / span) as f32).collect()
        }
    }
}

fn label_values(lab: &RawVolume, lab_path: &Path, classes: &ClassMap) -> Result<Vec<u8>> {
    lab.values
        .iter()
        .map(|&v| {
            let r = v.round();
            if r >= 0.0 && r < classes.len() as f64 && (v - r).abs() < 1e-6 {
                Ok(r as u8)
            } else {
                Err(Error::InvalidVolume(format!(
                    "label value {v} in {} is not a registered class",
                    lab_path.display()
                )))
            }
        })
        .collect()
}

/// A bare label file, e.g. one written by `write_labels`.
pub(super) fn load_labels(path: &Path, classes: &ClassMap) -> Result<(Grid3<u8>, Spacing)> {
    let lab = read_raw(path)?;
    let spacing = Spacing::new(lab.spacing[0], lab.spacing[1], lab.spacing[2])?;
    Ok((Grid3::from_vec(lab.dims, label_values(&lab, path, classes)?)?, spacing))
}

/// Intensities and spacing only, for cases without a label file.
pub(super) fn load_image(path: &Path) -> Result<(Grid3<f32>, Spacing)> {
    let img = read_raw(path)?;
    let spacing = Spacing::new(img.spacing[0], img.spacing[1], img.spacing[2])?;
    Ok((Grid3::from_vec(img.dims, normalize_intensities(&img))?, spacing))
}

pub(super) fn load(path: &Path, classes: &ClassMap) -> Result<LabeledVolume> {
    let img = read_raw(path)?;
    let lab_path = label_path(path);
    let lab = read_raw(&lab_path)?;
    if img.dims != lab.dims {
        return Err(Error::Shape(format!(
            "image {:?} vs mask {:?} ({})",
            img.dims,
            lab.dims,
            lab_path.display()
        )));
    }
    let labels = label_values(&lab, &lab_path, classes)?;
    let spacing = Spacing::new(img.spacing[0], img.spacing[1], img.spacing[2])?;
    let image = Grid3::from_vec(img.dims, normalize_intensities(&img))?;
    let labels = Grid3::from_vec(lab.dims, labels)?;
    LabeledVolume::with_classes(
        image,
        labels,
        spacing,
        path.display().to_string(),
        classes,
    )
}
