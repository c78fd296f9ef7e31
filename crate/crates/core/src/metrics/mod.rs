//! Overlap, surface-distance and partition-agreement metrics on label grids.
//!
//! Per-class results are `None` when a metric is undefined for the class
//! (class absent from both grids, or a surface missing for distances). Means
//! run over defined values only.

mod distance;
mod report;

pub use distance::{assd, edt_squared, hausdorff, surface_extract, surface_distances, AssdMode, DistanceUnits};
pub use report::{evaluate_case, ClassRow, MetricsOptions, MetricsReport};

use crate::error::{Error, Result};
use crate::grid::Grid3;
use crate::volume_io::Spacing;

/// Two label grids of equal shape, their voxel spacing and the classes to score.
#[derive(Debug, Clone, Copy)]
pub struct MetricsInput<'a> {
    pub pred: &'a Grid3<u8>,
    pub truth: &'a Grid3<u8>,
    pub spacing: Spacing,
    pub classes: &'a [u8],
}

impl<'a> MetricsInput<'a> {
    pub fn new(pred: &'a Grid3<u8>, truth: &'a Grid3<u8>, spacing: Spacing, classes: &'a [u8]) -> Result<Self> {
        if pred.dims() != truth.dims() {
            return Err(Error::Shape(format!(
                "prediction {:?} and truth {:?} differ in shape",
                pred.dims(),
                truth.dims()
            )));
        }
        if pred.is_empty() {
            return Err(Error::Shape("empty label grids".into()));
        }
        spacing.validate()?;
        Ok(MetricsInput {
            pred,
            truth,
            spacing,
            classes,
        })
    }
}

/// Per-class values in the order of the evaluated classes, plus their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct PerClass {
    pub values: Vec<Option<f64>>,
    pub mean: Option<f64>,
}

impl PerClass {
    pub(crate) fn from_values(values: Vec<Option<f64>>) -> Self {
        let valid: Vec<f64> = values.iter().flatten().copied().collect();
        let mean = (!valid.is_empty()).then(|| valid.iter().sum::<f64>() / valid.len() as f64);
        PerClass { values, mean }
    }
}

/// `(|P∩T|, |P|, |T|)` for one class.
fn overlap_counts(m: &MetricsInput, class: u8) -> (usize, usize, usize) {
    let (mut inter, mut p, mut t) = (0, 0, 0);
    for (&a, &b) in m.pred.data().iter().zip(m.truth.data()) {
        let (ia, ib) = (a == class, b == class);
        p += ia as usize;
        t += ib as usize;
        inter += (ia && ib) as usize;
    }
    (inter, p, t)
}

fn overlap_metric(m: &MetricsInput, f: impl Fn(usize, usize, usize) -> f64) -> Result<PerClass> {
    let values: Vec<Option<f64>> = m
        .classes
        .iter()
        .map(|&c| {
            let (i, p, t) = overlap_counts(m, c);
            (p + t > 0).then(|| f(i, p, t))
        })
        .collect();
    if values.iter().all(Option::is_none) {
        return Err(Error::InvalidArgument(
            "every evaluated class is empty in both grids".into(),
        ));
    }
    Ok(PerClass::from_values(values))
}

/// Intersection over union, in percent.
pub fn miou(m: &MetricsInput) -> Result<PerClass> {
    overlap_metric(m, |i, p, t| 100.0 * i as f64 / (p + t - i) as f64)
}

/// Dice coefficient, in percent.
pub fn dice_coef(m: &MetricsInput) -> Result<PerClass> {
    overlap_metric(m, |i, p, t| 200.0 * i as f64 / (p + t) as f64)
}

/// Counts of co-occurring labels between two partitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<u64>>,
    pub row_sums: Vec<u64>,
    pub col_sums: Vec<u64>,
    pub total: u64,
}

impl ContingencyTable {
    pub fn new(a: &[u8], b: &[u8]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::Shape(format!("partitions of {} and {} items", a.len(), b.len())));
        }
        let mut counts = vec![vec![0u64; 256]; 256];
        for (&x, &y) in a.iter().zip(b) {
            counts[x as usize][y as usize] += 1;
        }
        let row_sums = counts.iter().map(|r| r.iter().sum()).collect();
        let col_sums = (0..256).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
        Ok(ContingencyTable {
            counts,
            row_sums,
            col_sums,
            total: a.len() as u64,
        })
    }
}

fn pairs(n: u64) -> f64 {
    if n < 2 {
        0.0
    } else {
        (n as f64) * (n as f64 - 1.0) / 2.0
    }
}

/// Adjusted Rand index of two partitions of the same items. Returns 0 when
/// the expected-index correction leaves a zero denominator (e.g. both
/// partitions are a single cluster).
pub fn adj_rand_partitions(a: &[u8], b: &[u8]) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::InvalidArgument("adjusted Rand index of empty partitions".into()));
    }
    let t = ContingencyTable::new(a, b)?;
    let sum_ij: f64 = t.counts.iter().flatten().map(|&n| pairs(n)).sum();
    let sum_a: f64 = t.row_sums.iter().map(|&n| pairs(n)).sum();
    let sum_b: f64 = t.col_sums.iter().map(|&n| pairs(n)).sum();
    let all = pairs(t.total);
    if all == 0.0 {
        return Ok(0.0);
    }
    let expected = sum_a * sum_b / all;
    let max = 0.5 * (sum_a + sum_b);
    let denom = max - expected;
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((sum_ij - expected) / denom)
}

/// Adjusted Rand index of the partitions induced by all labels of the two grids.
pub fn adj_rand(m: &MetricsInput) -> Result<f64> {
    adj_rand_partitions(m.pred.data(), m.truth.data())
}

/// One-vs-rest adjusted Rand index per evaluated class.
pub fn adj_rand_per_class(m: &MetricsInput) -> Result<PerClass> {
    let mut values = Vec::with_capacity(m.classes.len());
    for &c in m.classes {
        let a: Vec<u8> = m.pred.data().iter().map(|&v| (v == c) as u8).collect();
        let b: Vec<u8> = m.truth.data().iter().map(|&v| (v == c) as u8).collect();
        let present = a.iter().chain(&b).any(|&v| v == 1);
        values.push(if present { Some(adj_rand_partitions(&a, &b)?) } else { None });
    }
    Ok(PerClass::from_values(values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(v: Vec<u8>) -> Grid3<u8> {
        Grid3::from_vec([2, 2, 2], v).unwrap()
    }

    #[test]
    fn overlap_hand_values() {
        let p = grid(vec![1, 1, 1, 1, 0, 0, 0, 0]);
        let t = grid(vec![1, 1, 1, 0, 1, 0, 0, 0]);
        let m = MetricsInput::new(&p, &t, Spacing::isotropic(1.0).unwrap(), &[1]).unwrap();
        assert!((miou(&m).unwrap().values[0].unwrap() - 60.0).abs() < 1e-12);
        assert!((dice_coef(&m).unwrap().values[0].unwrap() - 75.0).abs() < 1e-12);
    }

    #[test]
    fn absent_class_is_excluded() {
        let p = grid(vec![1; 8]);
        let m = MetricsInput::new(&p, &p, Spacing::isotropic(1.0).unwrap(), &[1, 2]).unwrap();
        let r = miou(&m).unwrap();
        assert_eq!(r.values, vec![Some(100.0), None]);
        assert_eq!(r.mean, Some(100.0));
        let m = MetricsInput::new(&p, &p, Spacing::isotropic(1.0).unwrap(), &[2]).unwrap();
        assert!(miou(&m).is_err());
    }

    #[test]
    fn ari_hand_values() {
        assert!((adj_rand_partitions(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap() + 0.5).abs() < 1e-12);
        assert_eq!(adj_rand_partitions(&[0, 0, 1, 1], &[5, 5, 2, 2]).unwrap(), 1.0);
        assert_eq!(adj_rand_partitions(&[3; 6], &[0, 1, 0, 1, 2, 2]).unwrap(), 0.0);
        assert_eq!(adj_rand_partitions(&[3; 6], &[3; 6]).unwrap(), 0.0);
    }
}
