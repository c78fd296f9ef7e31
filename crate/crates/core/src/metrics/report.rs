use std::io::Write;

use serde::{Deserialize, Serialize};

use super::distance::{assd_from, percentile_from, surface_distances, AssdMode, DistanceUnits};
use super::{adj_rand, adj_rand_per_class, dice_coef, miou, MetricsInput, PerClass};
use crate::error::Result;
use crate::grid::Grid3;
use crate::volume_io::{Spacing, MACULAR_EDEMA, MACULAR_HOLE, RETINA};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsOptions {
    /// Class ids to score; background is normally left out.
    pub classes: Vec<u8>,
    pub assd_mode: AssdMode,
    pub units: DistanceUnits,
    /// Percentile used for the robust Hausdorff column.
    pub hd_percentile: f64,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        MetricsOptions {
            classes: vec![RETINA, MACULAR_HOLE, MACULAR_EDEMA],
            assd_mode: AssdMode::SymmetricAverage,
            units: DistanceUnits::Millimeters,
            hd_percentile: 95.0,
        }
    }
}

/// One output row: a class, or the macro mean (`class == "mean"`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class: String,
    pub miou_pct: Option<f64>,
    pub dice_pct: Option<f64>,
    pub assd_mm: Option<f64>,
    pub hd_mm: Option<f64>,
    pub hd95_mm: Option<f64>,
    pub adj_rand: Option<f64>,
    pub valid: bool,
}

impl ClassRow {
    fn new(class: String, v: [Option<f64>; 6]) -> Self {
        ClassRow {
            class,
            miou_pct: v[0],
            dice_pct: v[1],
            assd_mm: v[2],
            hd_mm: v[3],
            hd95_mm: v[4],
            adj_rand: v[5],
            valid: v.iter().all(Option::is_some),
        }
    }
}

/// Metrics of one case. Class rows carry one-vs-rest adjusted Rand indices;
/// the mean row carries the index of the full multi-class partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub case: String,
    pub rows: Vec<ClassRow>,
    pub mean: ClassRow,
}

pub const CSV_HEADER: &str = "case,class,miou_pct,dice_pct,assd_mm,hd_mm,hd95_mm,adj_rand,valid";

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl MetricsReport {
    pub fn csv_rows(&self) -> Vec<String> {
        self.rows
            .iter()
            .chain(std::iter::once(&self.mean))
            .map(|r| {
                format!(
                    "{},{},{},{},{},{},{},{},{}",
                    self.case,
                    r.class,
                    cell(r.miou_pct),
                    cell(r.dice_pct),
                    cell(r.assd_mm),
                    cell(r.hd_mm),
                    cell(r.hd95_mm),
                    cell(r.adj_rand),
                    r.valid
                )
            })
            .collect()
    }

    pub fn write_csv(reports: &[MetricsReport], mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for r in reports {
            for line in r.csv_rows() {
                writeln!(out, "{line}")?;
            }
        }
        Ok(())
    }
}

/// All metrics for one case.
pub fn evaluate_case(
    case: &str,
    pred: &Grid3<u8>,
    truth: &Grid3<u8>,
    spacing: Spacing,
    opts: &MetricsOptions,
) -> Result<MetricsReport> {
    let spacing = match opts.units {
        DistanceUnits::Millimeters => spacing,
        DistanceUnits::Voxels => Spacing::isotropic(1.0)?,
    };
    let m = MetricsInput::new(pred, truth, spacing, &opts.classes)?;
    let iou = miou(&m)?;
    let dice = dice_coef(&m)?;
    let ari = adj_rand_per_class(&m)?;
    let mut assd_v = Vec::new();
    let mut hd_v = Vec::new();
    let mut hd95_v = Vec::new();
    for &c in &opts.classes {
        let d = surface_distances(&m, c);
        assd_v.push(d.as_ref().map(|(a, b)| assd_from(a, b, opts.assd_mode)));
        hd_v.push(d.as_ref().map(|(a, b)| percentile_from(a, b, 100.0)));
        hd95_v.push(d.as_ref().map(|(a, b)| percentile_from(a, b, opts.hd_percentile)));
    }
    let (assd_v, hd_v, hd95_v) = (
        PerClass::from_values(assd_v),
        PerClass::from_values(hd_v),
        PerClass::from_values(hd95_v),
    );
    let rows = opts
        .classes
        .iter()
        .enumerate()
        .map(|(i, c)| {
            ClassRow::new(
                c.to_string(),
                [
                    iou.values[i],
                    dice.values[i],
                    assd_v.values[i],
                    hd_v.values[i],
                    hd95_v.values[i],
                    ari.values[i],
                ],
            )
        })
        .collect();
    let mean = ClassRow::new(
        "mean".into(),
        [iou.mean, dice.mean, assd_v.mean, hd_v.mean, hd95_v.mean, Some(adj_rand(&m)?)],
    );
    Ok(MetricsReport {
        case: case.to_string(),
        rows,
        mean,
    })
}
