//! 3D reconstruction and ETDRS-sector quantification of a label volume.

mod etdrs;
mod mesh;

pub use etdrs::{
    build_etdrs_grid, locate_macula_center, sector_volumes, CenterSource, EtdrsGrid, EtdrsReport, Laterality,
    Sector, ETDRS_DIAMETERS_MM, REPORT_CLASSES,
};
pub use mesh::{extract_mesh, smooth_class_field, ClassMesh};

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid3;
use crate::volume_io::{resample_labels_nearest, Spacing};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconConfig {
    /// Gaussian smoothing in voxels.
    pub sigma: f64,
    pub iso: f64,
    /// Slice count the labels are resampled to before meshing, so meshing
    /// cost does not depend on the input's slice count; 0 keeps the input.
    pub working_depth: usize,
    pub laterality: Laterality,
    /// En-face `(h, w)` grid center in mm; located automatically if unset.
    pub center_mm: Option<(f64, f64)>,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            sigma: 1.0,
            iso: 0.5,
            working_depth: 96,
            laterality: Laterality::OD,
            center_mm: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconOutput {
    pub meshes: Vec<ClassMesh>,
    pub grid: EtdrsGrid,
    pub center_source: CenterSource,
    pub report: EtdrsReport,
    pub seconds: f64,
    pub files: Vec<PathBuf>,
}

/// Grid from a located or overridden center, then sector counts.
pub fn quantify(labels: &Grid3<u8>, spacing: Spacing, cfg: &ReconConfig) -> Result<(EtdrsGrid, CenterSource, EtdrsReport)> {
    let [_, hn, wn] = labels.dims();
    let (center, source) = match cfg.center_mm {
        Some(c) => (c, CenterSource::Override),
        None => locate_macula_center(labels, spacing),
    };
    let grid = build_etdrs_grid(center, (hn, wn), spacing, cfg.laterality)?;
    let report = sector_volumes(labels, &grid)?;
    Ok((grid, source, report))
}

/// Per-class meshes of the hole, edema and retina classes.
pub fn class_meshes(labels: &Grid3<u8>, spacing: Spacing, cfg: &ReconConfig) -> Result<Vec<ClassMesh>> {
    if !(cfg.sigma >= 0.0) || !(cfg.iso > 0.0 && cfg.iso < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "smoothing sigma must be >= 0 and iso level in (0, 1), got {} / {}",
            cfg.sigma, cfg.iso
        )));
    }
    let [dn, hn, wn] = labels.dims();
    let (work, work_spacing) = if cfg.working_depth > 0 && cfg.working_depth != dn {
        let g = resample_labels_nearest(labels, [cfg.working_depth, hn, wn]);
        let sp = Spacing::new(spacing.d * dn as f64 / cfg.working_depth as f64, spacing.h, spacing.w)?;
        (g, sp)
    } else {
        (labels.clone(), spacing)
    };
    Ok(REPORT_CLASSES
        .iter()
        .map(|&(class, _)| {
            let field = smooth_class_field(&work, class, cfg.sigma);
            extract_mesh(&field, cfg.iso, work_spacing, class)
        })
        .collect())
}

fn write_outputs(out_dir: &Path, out: &ReconOutput, files: &mut Vec<PathBuf>) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let create = |p: &Path| fs::File::create(p).map(std::io::BufWriter::new).map_err(|e| Error::io(p, e));
    for (mesh, (_, name)) in out.meshes.iter().zip(REPORT_CLASSES) {
        for ext in ["ply", "obj"] {
            let p = out_dir.join(format!("mesh_{name}.{ext}"));
            files.push(p.clone());
            let f = create(&p)?;
            let r = if ext == "ply" { mesh.write_ply(f) } else { mesh.write_obj(f) };
            r.map_err(|e| Error::io(&p, e))?;
        }
    }
    let p = out_dir.join("etdrs.csv");
    files.push(p.clone());
    out.report.write_csv(create(&p)?).map_err(|e| Error::io(&p, e))?;
    let p = out_dir.join("summary.json");
    files.push(p.clone());
    let summary = serde_json::json!({
        "grid": out.grid,
        "center_source": out.center_source,
        "seconds": out.seconds,
        "mesh_volumes_mm3": out.meshes.iter().map(|m| m.signed_volume()).collect::<Vec<_>>(),
        "empty_meshes": out.meshes.iter().filter(|m| m.is_empty()).map(|m| m.class).collect::<Vec<_>>(),
    });
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(&p, text).map_err(|e| Error::io(&p, e))
}

/// Meshes, ETDRS report and timing for one case. Files are written to
/// `out_dir` when given; on failure any files already written are removed.
pub fn reconstruct_case(
    labels: &Grid3<u8>,
    spacing: Spacing,
    out_dir: Option<&Path>,
    cfg: &ReconConfig,
) -> Result<ReconOutput> {
    let start = Instant::now();
    spacing.validate()?;
    let meshes = class_meshes(labels, spacing, cfg)?;
    let (grid, center_source, report) = quantify(labels, spacing, cfg)?;
    let mut out = ReconOutput {
        meshes,
        grid,
        center_source,
        report,
        seconds: start.elapsed().as_secs_f64(),
        files: Vec::new(),
    };
    if let Some(dir) = out_dir {
        let mut files = Vec::new();
        if let Err(e) = write_outputs(dir, &out, &mut files) {
            for f in &files {
                let _ = fs::remove_file(f);
            }
            return Err(e);
        }
        out.files = files;
    }
    out.seconds = start.elapsed().as_secs_f64();
    Ok(out)
}
