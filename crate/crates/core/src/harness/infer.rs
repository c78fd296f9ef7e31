use std::path::Path;

use super::config::InferenceMode;
use super::data::Case;
use crate::error::{Error, Result};
use crate::grid::Grid3;
use crate::metrics::{evaluate_case, ClassRow, MetricsOptions, MetricsReport};
use crate::net::{argmax_classes, defn_forward, Defn};
use crate::nn::{ParamSet, Tensor};
use crate::volume_io::resample::trilinear;
use crate::volume_io::resample_labels_nearest;

/// Logits `(K, D, H, W)` of one input-sized volume.
fn logits_of(net: &Defn, params: &ParamSet<f32>, image: &Grid3<f32>) -> Result<Tensor<f32>> {
    let [d, h, w] = image.dims();
    let x = Tensor::from_vec(&[1, 1, d, h, w], image.data().to_vec());
    defn_forward(net, params, &x)
}

fn tile_starts(len: usize, tile: usize) -> Vec<usize> {
    if len <= tile {
        return vec![0];
    }
    let mut s: Vec<usize> = (0..).map(|i| i * tile).take_while(|&p| p + tile < len).collect();
    s.push(len - tile);
    s
}

/// Label grid for `image` at its own geometry.
///
/// `Resample` runs the network once on the volume resampled to `input_size`
/// and maps the argmax back with nearest-neighbor. `Tile` covers the volume
/// with input-sized windows (zero-padded where the volume is smaller) and
/// averages overlapping logits. Ties go to the lowest class id.
pub fn predict_labels(
    net: &Defn,
    params: &ParamSet<f32>,
    image: &Grid3<f32>,
    input_size: [usize; 3],
    mode: InferenceMode,
) -> Result<Grid3<u8>> {
    let dims = image.dims();
    match mode {
        InferenceMode::Resample => {
            let x = if dims == input_size { image.clone() } else { trilinear(image, input_size) };
            let y = logits_of(net, params, &x)?;
            let labels = Grid3::from_vec(input_size, argmax_classes(&y, 0))?;
            Ok(if dims == input_size { labels } else { resample_labels_nearest(&labels, dims) })
        }
        InferenceMode::Tile => {
            let k = net.config.num_classes;
            let n = dims.iter().product::<usize>();
            let mut acc = vec![0f64; k * n];
            let mut hits = vec![0u32; n];
            let [td, th, tw] = input_size;
            for &d0 in &tile_starts(dims[0], td) {
                for &h0 in &tile_starts(dims[1], th) {
                    for &w0 in &tile_starts(dims[2], tw) {
                        let tile = Grid3::from_fn(input_size, |d, h, w| {
                            let p = [d0 + d, h0 + h, w0 + w];
                            if p[0] < dims[0] && p[1] < dims[1] && p[2] < dims[2] {
                                *image.get(p[0], p[1], p[2])
                            } else {
                                0.0
                            }
                        });
                        let y = logits_of(net, params, &tile)?;
                        for d in 0..td.min(dims[0] - d0) {
                            for h in 0..th.min(dims[1] - h0) {
                                for w in 0..tw.min(dims[2] - w0) {
                                    let i = image.index(d0 + d, h0 + h, w0 + w);
                                    let j = (d * th + h) * tw + w;
                                    hits[i] += 1;
                                    for c in 0..k {
                                        acc[c * n + i] += y.plane(0, c)[j] as f64;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            let labels = (0..n)
                .map(|i| {
                    let mut best = 0;
                    for c in 1..k {
                        if acc[c * n + i] > acc[best * n + i] {
                            best = c;
                        }
                    }
                    debug_assert!(hits[i] > 0);
                    best as u8
                })
                .collect();
            Grid3::from_vec(dims, labels)
        }
    }
}

/// Per-case reports and their macro aggregate (case `"ALL"`).
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub cases: Vec<MetricsReport>,
    pub aggregate: MetricsReport,
}

impl Evaluation {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        let all: Vec<MetricsReport> = self.cases.iter().cloned().chain([self.aggregate.clone()]).collect();
        MetricsReport::write_csv(&all, &mut buf).expect("writing to memory");
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

fn mean_valid(vals: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = vals.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn aggregate_row(rows: &[&ClassRow], class: String) -> ClassRow {
    let col = |f: fn(&ClassRow) -> Option<f64>| mean_valid(rows.iter().map(|r| f(r)));
    let vals = [
        col(|r| r.miou_pct),
        col(|r| r.dice_pct),
        col(|r| r.assd_mm),
        col(|r| r.hd_mm),
        col(|r| r.hd95_mm),
        col(|r| r.adj_rand),
    ];
    ClassRow {
        class,
        miou_pct: vals[0],
        dice_pct: vals[1],
        assd_mm: vals[2],
        hd_mm: vals[3],
        hd95_mm: vals[4],
        adj_rand: vals[5],
        valid: vals.iter().all(Option::is_some),
    }
}

/// Macro average over cases: each cell is the mean of that cell over the
/// cases where it is defined.
pub fn aggregate(reports: &[MetricsReport]) -> Result<MetricsReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Dataset("no reports to aggregate".into()))?;
    let rows = (0..first.rows.len())
        .map(|i| {
            let col: Vec<&ClassRow> = reports.iter().map(|r| &r.rows[i]).collect();
            aggregate_row(&col, first.rows[i].class.clone())
        })
        .collect();
    let means: Vec<&ClassRow> = reports.iter().map(|r| &r.mean).collect();
    Ok(MetricsReport {
        case: "ALL".into(),
        rows,
        mean: aggregate_row(&means, "mean".into()),
    })
}

/// Source of predictions for [`evaluate`].
pub enum Predictor<'a> {
    Network {
        net: &'a Defn,
        params: &'a ParamSet<f32>,
        input_size: [usize; 3],
        mode: InferenceMode,
    },
    /// Uses the ground truth as the prediction; checks the evaluation path.
    Oracle,
}

pub fn evaluate(predictor: &Predictor, cases: &[Case], opts: &MetricsOptions) -> Result<Evaluation> {
    if cases.is_empty() {
        return Err(Error::Dataset("test set is empty".into()));
    }
    let mut reports = Vec::with_capacity(cases.len());
    for c in cases {
        let pred = match predictor {
            Predictor::Network {
                net,
                params,
                input_size,
                mode,
            } => predict_labels(net, params, c.volume.image(), *input_size, *mode)?,
            Predictor::Oracle => c.volume.labels().clone(),
        };
        reports.push(evaluate_case(&c.name, &pred, c.volume.labels(), c.volume.spacing(), opts)?);
        log::info!("evaluated {}", c.name);
    }
    let aggregate = aggregate(&reports)?;
    Ok(Evaluation {
        cases: reports,
        aggregate,
    })
}
