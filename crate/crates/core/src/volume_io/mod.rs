//! Volumetric image + label-mask containers and their on-disk formats.
//!
//! Two formats are supported:
//!
//! * `nifti`: `<stem>.nii[.gz]` holds float intensities, `<stem>_seg.nii[.gz]`
//!   holds class ids. Spacing lives in `pixdim`.
//! * `slice_dir`: `images/NNN.png` (grayscale) and `masks/NNN.png` (class ids
//!   as gray values, or RGB colors looked up in a [`ClassMap`]), with a
//!   `spacing.json` sidecar `{"mm_d": .., "mm_h": .., "mm_w": ..}`.
//!
//! Axis convention: grids are `(D, H, W)`; `D` indexes slices.

mod nifti;
pub(crate) mod resample;
mod slices;

pub(crate) use slices::natural_cmp;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid3;

pub use resample::{resample_volume, resample_labels_nearest};

/// Class ids used throughout the pipeline.
pub const BACKGROUND: u8 = 0;
pub const RETINA: u8 = 1;
pub const MACULAR_HOLE: u8 = 2;
pub const MACULAR_EDEMA: u8 = 3;

/// Physical voxel size in millimetres along (D, H, W).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spacing {
    #[serde(rename = "mm_d")]
    pub d: f64,
    #[serde(rename = "mm_h")]
    pub h: f64,
    #[serde(rename = "mm_w")]
    pub w: f64,
}

impl Spacing {
    /// Non-authoritative fallback for scans without spacing metadata.
    /// The public OCT macular-hole data does not publish voxel sizes.
    pub const PLACEHOLDER: Spacing = Spacing {
        d: 0.03,
        h: 0.0039,
        w: 0.0115,
    };

    pub fn new(d: f64, h: f64, w: f64) -> Result<Self> {
        let s = Spacing { d, h, w };
        s.validate()?;
        Ok(s)
    }

    pub fn isotropic(mm: f64) -> Result<Self> {
        Spacing::new(mm, mm, mm)
    }

    pub fn validate(&self) -> Result<()> {
        for (axis, v) in [("d", self.d), ("h", self.h), ("w", self.w)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidVolume(format!(
                    "spacing along {axis} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.d, self.h, self.w]
    }

    pub fn voxel_volume(&self) -> f64 {
        self.d * self.h * self.w
    }

    pub fn scaled(&self, factor: f64) -> Spacing {
        Spacing {
            d: self.d * factor,
            h: self.h * factor,
            w: self.w * factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub id: u8,
    pub name: String,
    pub color: [u8; 3],
}

/// Ordered class registry with display colors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMap {
    entries: Vec<ClassEntry>,
}

impl Default for ClassMap {
    fn default() -> Self {
        let e = |id, name: &str, color| ClassEntry {
            id,
            name: name.to_string(),
            color,
        };
        ClassMap {
            entries: vec![
                e(BACKGROUND, "background", [0, 0, 0]),
                e(RETINA, "retina", [0, 255, 0]),
                e(MACULAR_HOLE, "macular_hole", [255, 0, 0]),
                e(MACULAR_EDEMA, "macular_edema", [0, 0, 255]),
            ],
        }
    }
}

impl ClassMap {
    pub fn new(entries: Vec<ClassEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidArgument("class map is empty".into()));
        }
        for (i, e) in entries.iter().enumerate() {
            if e.id as usize != i {
                return Err(Error::InvalidArgument(format!(
                    "class ids must be contiguous from 0; position {i} has id {}",
                    e.id
                )));
            }
            if entries[..i].iter().any(|o| o.color == e.color) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate class color {:?}",
                    e.color
                )));
            }
        }
        Ok(ClassMap { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ClassEntry] {
        &self.entries
    }

    pub fn id_for_color(&self, color: [u8; 3]) -> Option<u8> {
        self.entries.iter().find(|e| e.color == color).map(|e| e.id)
    }

    pub fn name(&self, id: u8) -> Option<&str> {
        self.entries.get(id as usize).map(|e| e.name.as_str())
    }

    pub fn contains(&self, id: u8) -> bool {
        (id as usize) < self.entries.len()
    }
}

/// Co-registered intensity and label grids with physical spacing.
///
/// Intensities are in `[0, 1]`; labels are class ids of a [`ClassMap`].
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVolume {
    image: Grid3<f32>,
    labels: Grid3<u8>,
    spacing: Spacing,
    pub meta: String,
}

impl LabeledVolume {
    /// Builds a volume validated against the default four-class map.
    pub fn new(
        image: Grid3<f32>,
        labels: Grid3<u8>,
        spacing: Spacing,
        meta: impl Into<String>,
    ) -> Result<Self> {
        Self::with_classes(image, labels, spacing, meta, &ClassMap::default())
    }

    pub fn with_classes(
        image: Grid3<f32>,
        labels: Grid3<u8>,
        spacing: Spacing,
        meta: impl Into<String>,
        classes: &ClassMap,
    ) -> Result<Self> {
        if image.dims() != labels.dims() {
            return Err(Error::Shape(format!(
                "image {:?} vs labels {:?}",
                image.dims(),
                labels.dims()
            )));
        }
        if image.dims().iter().any(|&n| n == 0) {
            return Err(Error::InvalidVolume(format!(
                "empty dimension in {:?}",
                image.dims()
            )));
        }
        spacing.validate()?;
        if let Some(bad) = labels.data().iter().find(|&&l| !classes.contains(l)) {
            return Err(Error::InvalidVolume(format!(
                "label {bad} is not a registered class (have {})",
                classes.len()
            )));
        }
        if let Some(bad) = image
            .data()
            .iter()
            .find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(Error::InvalidVolume(format!(
                "intensity {bad} outside [0, 1]"
            )));
        }
        Ok(LabeledVolume {
            image,
            labels,
            spacing,
            meta: meta.into(),
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.image.dims()
    }

    pub fn image(&self) -> &Grid3<f32> {
        &self.image
    }

    pub fn labels(&self) -> &Grid3<u8> {
        &self.labels
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn into_parts(self) -> (Grid3<f32>, Grid3<u8>, Spacing, String) {
        (self.image, self.labels, self.spacing, self.meta)
    }

    /// Replaces the label grid, keeping image and spacing.
    pub fn with_labels(&self, labels: Grid3<u8>) -> Result<Self> {
        LabeledVolume::new(self.image.clone(), labels, self.spacing, self.meta.clone())
    }

    pub fn with_image(&self, image: Grid3<f32>) -> Result<Self> {
        LabeledVolume::new(image, self.labels.clone(), self.spacing, self.meta.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeFormat {
    Nifti,
    SliceDir,
}

impl std::str::FromStr for VolumeFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nifti" => Ok(VolumeFormat::Nifti),
            "slice_dir" | "slices" => Ok(VolumeFormat::SliceDir),
            other => Err(Error::InvalidArgument(format!("unknown format {other:?}"))),
        }
    }
}

impl VolumeFormat {
    /// `nifti` for `.nii`/`.nii.gz` paths, `slice_dir` otherwise.
    pub fn infer(path: &Path) -> VolumeFormat {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().to_lowercase())
            .unwrap_or_default();
        if name.ends_with(".nii") || name.ends_with(".nii.gz") {
            VolumeFormat::Nifti
        } else {
            VolumeFormat::SliceDir
        }
    }
}

pub fn load_volume(path: &Path, format: VolumeFormat) -> Result<LabeledVolume> {
    load_volume_with(path, format, &ClassMap::default())
}

pub fn load_volume_with(
    path: &Path,
    format: VolumeFormat,
    classes: &ClassMap,
) -> Result<LabeledVolume> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
        ));
    }
    match format {
        VolumeFormat::Nifti => nifti::load(path, classes),
        VolumeFormat::SliceDir => slices::load(path, classes),
    }
}

/// Loads only the intensity grid and spacing; no label file is needed.
pub fn load_image(path: &Path, format: VolumeFormat) -> Result<(Grid3<f32>, Spacing)> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
        ));
    }
    match format {
        VolumeFormat::Nifti => nifti::load_image(path),
        VolumeFormat::SliceDir => slices::load_image(path),
    }
}

/// Reads a label-only NIfTI file.
pub fn load_label_grid(path: &Path) -> Result<(Grid3<u8>, Spacing)> {
    nifti::load_labels(path, &ClassMap::default())
}

pub fn save_volume(v: &LabeledVolume, path: &Path, format: VolumeFormat) -> Result<()> {
    match format {
        VolumeFormat::Nifti => nifti::save(v, path),
        VolumeFormat::SliceDir => slices::save(v, path),
    }
}

/// Writes a bare label grid as a uint8 NIfTI file.
pub fn save_label_grid(labels: &Grid3<u8>, spacing: Spacing, path: &Path) -> Result<()> {
    nifti::write_labels(labels, spacing, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_class_map_is_valid() {
        let m = ClassMap::default();
        assert!(ClassMap::new(m.entries().to_vec()).is_ok());
        assert_eq!(m.id_for_color([255, 0, 0]), Some(MACULAR_HOLE));
        assert_eq!(m.id_for_color([1, 2, 3]), None);
    }

    #[test]
    fn class_map_rejects_gaps_and_duplicate_colors() {
        let mut e = ClassMap::default().entries().to_vec();
        e[2].id = 5;
        assert!(ClassMap::new(e).is_err());
        let mut e = ClassMap::default().entries().to_vec();
        e[3].color = e[1].color;
        assert!(ClassMap::new(e).is_err());
    }

    #[test]
    fn volume_invariants_are_enforced() {
        let img = Grid3::filled([2, 2, 2], 0.5f32);
        let lab = Grid3::filled([2, 2, 2], 0u8);
        let sp = Spacing::isotropic(1.0).unwrap();
        assert!(LabeledVolume::new(img.clone(), lab.clone(), sp, "ok").is_ok());
        assert!(LabeledVolume::new(img.clone(), Grid3::filled([2, 2, 3], 0), sp, "").is_err());
        assert!(LabeledVolume::new(img.clone(), Grid3::filled([2, 2, 2], 9), sp, "").is_err());
        assert!(Spacing::new(1.0, 0.0, 1.0).is_err());
        assert!(LabeledVolume::new(Grid3::filled([2, 2, 2], 1.5), lab, sp, "").is_err());
    }

    #[test]
    fn format_inference() {
        assert_eq!(VolumeFormat::infer(Path::new("a/b.nii.gz")), VolumeFormat::Nifti);
        assert_eq!(VolumeFormat::infer(Path::new("a/case01")), VolumeFormat::SliceDir);
    }
}
