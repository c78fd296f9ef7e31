use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::volume_io::{load_volume, resample_volume, natural_cmp, LabeledVolume, VolumeFormat};

fn is_nifti_image(name: &str) -> bool {
    let lower = name.to_lowercase();
    let stem = lower.strip_suffix(".nii.gz").or_else(|| lower.strip_suffix(".nii"));
    matches!(stem, Some(s) if !s.ends_with("_seg"))
}

/// Cases in `dir`, in natural name order: NIfTI images (their `_seg`
/// partners are found by the loader) and slice directories with `images/`.
pub fn list_cases(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let name = entry.file_name().to_string_lossy().into_owned();
        if path.is_dir() && path.join("images").is_dir() {
            out.push(path);
        } else if path.is_file() && is_nifti_image(&name) {
            out.push(path);
        }
    }
    if out.is_empty() {
        return Err(Error::Dataset(format!("no cases found in {}", dir.display())));
    }
    out.sort_by(|a, b| natural_cmp(&a.to_string_lossy(), &b.to_string_lossy()));
    Ok(out)
}

pub fn case_name(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.strip_suffix(".nii.gz")
        .or_else(|| name.strip_suffix(".nii"))
        .unwrap_or(&name)
        .to_string()
}

/// A named case.
#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub name: String,
    pub volume: LabeledVolume,
}

/// Loads every case of `dir` at native resolution.
pub fn load_cases(dir: &Path) -> Result<Vec<Case>> {
    list_cases(dir)?
        .into_iter()
        .map(|p| {
            let volume = load_volume(&p, VolumeFormat::infer(&p))?;
            Ok(Case {
                name: case_name(&p),
                volume,
            })
        })
        .collect()
}

/// Resamples every case to the network input size.
pub fn to_input_size(cases: &[Case], size: [usize; 3]) -> Result<Vec<Case>> {
    cases
        .iter()
        .map(|c| {
            Ok(Case {
                name: c.name.clone(),
                volume: resample_volume(&c.volume, size)?,
            })
        })
        .collect()
}
