//! ETDRS macular grid: a central disc and two rings split into quadrants,
//! laid over the en-face (H × W) plane.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid3;
use crate::volume_io::{Spacing, MACULAR_EDEMA, MACULAR_HOLE, RETINA};

/// Circle diameters in mm (one optic-disc unit is 1 mm).
pub const ETDRS_DIAMETERS_MM: [f64; 3] = [1.0, 3.0, 6.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Laterality {
    /// Right eye: nasal is toward increasing W.
    #[default]
    OD,
    /// Left eye: nasal is toward decreasing W.
    OS,
}

impl std::str::FromStr for Laterality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "OD" => Ok(Laterality::OD),
            "OS" => Ok(Laterality::OS),
            other => Err(Error::InvalidArgument(format!("laterality must be OD or OS, got {other:?}"))),
        }
    }
}

/// The nine sectors in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sector {
    F,
    IS,
    II,
    IT,
    IN,
    OS,
    OI,
    OT,
    ON,
}

impl Sector {
    pub const ALL: [Sector; 9] = [
        Sector::F,
        Sector::IS,
        Sector::II,
        Sector::IT,
        Sector::IN,
        Sector::OS,
        Sector::OI,
        Sector::OT,
        Sector::ON,
    ];

    pub fn is_inner_circle(self) -> bool {
        matches!(self, Sector::F | Sector::IS | Sector::II | Sector::IT | Sector::IN)
    }
}

impl fmt::Display for Sector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Where the grid center came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterSource {
    MacularHole,
    Edema,
    VolumeCenter,
    Override,
}

/// En-face `(h, w)` position in mm of the macula center: centroid of hole
/// voxels, else of edema voxels, else the middle of the volume.
pub fn locate_macula_center(labels: &Grid3<u8>, spacing: Spacing) -> ((f64, f64), CenterSource) {
    let [_, hn, wn] = labels.dims();
    for (class, source) in [(MACULAR_HOLE, CenterSource::MacularHole), (MACULAR_EDEMA, CenterSource::Edema)] {
        let (mut sh, mut sw, mut n) = (0.0, 0.0, 0usize);
        for (i, &l) in labels.data().iter().enumerate() {
            if l == class {
                let [_, h, w] = labels.coords(i);
                sh += h as f64;
                sw += w as f64;
                n += 1;
            }
        }
        if n > 0 {
            return ((sh / n as f64 * spacing.h, sw / n as f64 * spacing.w), source);
        }
    }
    (
        ((hn - 1) as f64 / 2.0 * spacing.h, (wn - 1) as f64 / 2.0 * spacing.w),
        CenterSource::VolumeCenter,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtdrsGrid {
    /// En-face `(h, w)` center in mm.
    pub center_mm: (f64, f64),
    pub diameters_mm: [f64; 3],
    pub laterality: Laterality,
    pub spacing: Spacing,
    /// En-face grid size `(H, W)` the grid was built for.
    pub extent: (usize, usize),
    /// True when part of the outer circle falls outside the volume footprint.
    pub clipped: bool,
}

/// Grid centered at `center_mm` over an `H × W` footprint.
pub fn build_etdrs_grid(
    center_mm: (f64, f64),
    extent: (usize, usize),
    spacing: Spacing,
    laterality: Laterality,
) -> Result<EtdrsGrid> {
    spacing.validate()?;
    let (hn, wn) = extent;
    let (hmax, wmax) = (hn as f64 * spacing.h, wn as f64 * spacing.w);
    let (ch, cw) = center_mm;
    // footprint spans voxel edges, from -s/2 to (n - 1/2)s
    let (h_lo, h_hi) = (-0.5 * spacing.h, hmax - 0.5 * spacing.h);
    let (w_lo, w_hi) = (-0.5 * spacing.w, wmax - 0.5 * spacing.w);
    if !(h_lo..=h_hi).contains(&ch) || !(w_lo..=w_hi).contains(&cw) {
        return Err(Error::InvalidArgument(format!(
            "grid center ({ch}, {cw}) mm is outside the en-face extent"
        )));
    }
    let r = ETDRS_DIAMETERS_MM[2] / 2.0;
    let clipped = ch - r < h_lo || ch + r > h_hi || cw - r < w_lo || cw + r > w_hi;
    if clipped {
        log::warn!("ETDRS outer circle extends beyond the scanned area; volumes cover the overlap only");
    }
    Ok(EtdrsGrid {
        center_mm,
        diameters_mm: ETDRS_DIAMETERS_MM,
        laterality,
        spacing,
        extent,
        clipped,
    })
}

impl EtdrsGrid {
    pub fn radii_mm(&self) -> [f64; 3] {
        self.diameters_mm.map(|d| d / 2.0)
    }

    /// Sector of an en-face point given as mm offsets from the center
    /// (`dh` toward increasing H, `dw` toward increasing W). Points on a
    /// circle belong to the inner region; points on a 45° ray belong to the
    /// quadrant counterclockwise of it.
    pub fn sector_at(&self, dh: f64, dw: f64) -> Option<Sector> {
        let [r0, r1, r2] = self.radii_mm();
        let r = dh.hypot(dw);
        if r <= r0 {
            return Some(Sector::F);
        }
        if r > r2 {
            return None;
        }
        let inner = r <= r1;
        // superior is toward decreasing H (image rows grow downward)
        let theta = (-dh).atan2(dw).to_degrees();
        let q = ((theta - 45.0).rem_euclid(360.0) / 90.0).floor() as usize % 4;
        let nasal_right = self.laterality == Laterality::OD;
        use Sector::*;
        Some(match (q, inner) {
            (0, true) => IS,
            (0, false) => OS,
            (2, true) => II,
            (2, false) => OI,
            (1, true) => if nasal_right { IT } else { IN },
            (1, false) => if nasal_right { OT } else { ON },
            (_, true) => if nasal_right { IN } else { IT },
            (_, false) => if nasal_right { ON } else { OT },
        })
    }

    /// Sector of every en-face voxel, row-major over `H × W`.
    pub fn sector_map(&self) -> Vec<Option<Sector>> {
        let (hn, wn) = self.extent;
        let (ch, cw) = self.center_mm;
        (0..hn * wn)
            .map(|i| {
                let (h, w) = (i / wn, i % wn);
                self.sector_at(h as f64 * self.spacing.h - ch, w as f64 * self.spacing.w - cw)
            })
            .collect()
    }
}

/// Classes reported per region.
pub const REPORT_CLASSES: [(u8, &str); 3] = [(MACULAR_HOLE, "MH"), (MACULAR_EDEMA, "ME"), (RETINA, "RA")];

/// Per-sector voxel counts for the hole, edema and retina classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtdrsReport {
    /// `counts[s][k]`: voxels of `REPORT_CLASSES[k]` in `Sector::ALL[s]`.
    pub counts: [[u64; 3]; 9],
    pub voxel_volume_mm3: f64,
    pub clipped: bool,
}

impl EtdrsReport {
    pub fn sector_count(&self, s: Sector, class_idx: usize) -> u64 {
        self.counts[s as usize][class_idx]
    }

    pub fn inner_circle_count(&self, class_idx: usize) -> u64 {
        Sector::ALL
            .iter()
            .filter(|s| s.is_inner_circle())
            .map(|&s| self.sector_count(s, class_idx))
            .sum()
    }

    pub fn outer_circle_count(&self, class_idx: usize) -> u64 {
        Sector::ALL.iter().map(|&s| self.sector_count(s, class_idx)).sum()
    }

    /// `(region, class, volume_mm3)` rows: the nine sectors, then IC and OC.
    pub fn rows(&self) -> Vec<(String, &'static str, f64)> {
        let mut rows = Vec::new();
        let v = self.voxel_volume_mm3;
        for s in Sector::ALL {
            for (k, (_, name)) in REPORT_CLASSES.iter().enumerate() {
                rows.push((s.to_string(), *name, self.sector_count(s, k) as f64 * v));
            }
        }
        for (region, f) in [("IC", Self::inner_circle_count as fn(&Self, usize) -> u64), ("OC", Self::outer_circle_count)] {
            for (k, (_, name)) in REPORT_CLASSES.iter().enumerate() {
                rows.push((region.to_string(), *name, f(self, k) as f64 * v));
            }
        }
        rows
    }

    pub fn write_csv(&self, mut out: impl std::io::Write) -> std::io::Result<()> {
        writeln!(out, "region,class,volume_mm3")?;
        for (region, class, vol) in self.rows() {
            writeln!(out, "{region},{class},{vol}")?;
        }
        Ok(())
    }
}

/// Counts class voxels whose en-face projection falls in each sector.
pub fn sector_volumes(labels: &Grid3<u8>, grid: &EtdrsGrid) -> Result<EtdrsReport> {
    let [dn, hn, wn] = labels.dims();
    if grid.extent != (hn, wn) {
        return Err(Error::InvalidArgument(format!(
            "grid built for {:?}, labels are {hn}×{wn} en face",
            grid.extent
        )));
    }
    let map = grid.sector_map();
    let mut counts = [[0u64; 3]; 9];
    for d in 0..dn {
        for (i, &l) in labels.slice(d).iter().enumerate() {
            let Some(s) = map[i] else { continue };
            if let Some(k) = REPORT_CLASSES.iter().position(|&(c, _)| c == l) {
                counts[s as usize][k] += 1;
            }
        }
    }
    Ok(EtdrsReport {
        counts,
        voxel_volume_mm3: grid.spacing.voxel_volume(),
        clipped: grid.clipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(spacing: f64, n: usize) -> EtdrsGrid {
        let sp = Spacing::isotropic(spacing).unwrap();
        let c = (n - 1) as f64 / 2.0 * spacing;
        build_etdrs_grid((c, c), (n, n), sp, Laterality::OD).unwrap()
    }

    #[test]
    fn diameters_are_standard() {
        let g = grid(0.01, 101);
        assert_eq!(g.diameters_mm, [1.0, 3.0, 6.0]);
        // central radius is 50 voxels at 0.01 mm spacing
        assert_eq!(g.sector_at(0.0, 0.5), Some(Sector::F));
        assert_ne!(g.sector_at(0.0, 0.51), Some(Sector::F));
    }

    #[test]
    fn quadrants_follow_laterality() {
        let mut g = grid(0.01, 101);
        assert_eq!(g.sector_at(-1.0, 0.0), Some(Sector::IS));
        assert_eq!(g.sector_at(1.0, 0.0), Some(Sector::II));
        assert_eq!(g.sector_at(0.0, 1.0), Some(Sector::IN));
        assert_eq!(g.sector_at(0.0, -2.0), Some(Sector::OT));
        g.laterality = Laterality::OS;
        assert_eq!(g.sector_at(0.0, 1.0), Some(Sector::IT));
        assert_eq!(g.sector_at(0.0, -2.0), Some(Sector::ON));
        assert_eq!(g.sector_at(0.0, 3.01), None);
    }

    #[test]
    fn diagonal_ties_go_counterclockwise() {
        let g = grid(0.01, 101);
        // 45° ray (up-right) belongs to superior
        assert_eq!(g.sector_at(-1.0, 1.0), Some(Sector::IS));
        // 135° ray (up-left) belongs to the left quadrant (temporal for OD)
        assert_eq!(g.sector_at(-1.0, -1.0), Some(Sector::IT));
    }

    #[test]
    fn center_override_outside_is_rejected() {
        let sp = Spacing::isotropic(0.1).unwrap();
        assert!(build_etdrs_grid((50.0, 0.0), (10, 10), sp, Laterality::OD).is_err());
        assert!(build_etdrs_grid((0.45, 0.45), (10, 10), sp, Laterality::OD).unwrap().clipped);
    }

    #[test]
    fn center_fallback_chain() {
        let sp = Spacing::isotropic(1.0).unwrap();
        let mut g = Grid3::filled([3, 5, 5], 0u8);
        assert_eq!(locate_macula_center(&g, sp), ((2.0, 2.0), CenterSource::VolumeCenter));
        g[[0, 1, 1]] = MACULAR_EDEMA;
        g[[0, 1, 3]] = MACULAR_EDEMA;
        assert_eq!(locate_macula_center(&g, sp), ((1.0, 2.0), CenterSource::Edema));
        g[[2, 2, 2]] = MACULAR_HOLE;
        assert_eq!(locate_macula_center(&g, sp), ((2.0, 2.0), CenterSource::MacularHole));
    }
}
