use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Endpoint weights of (focal, boundary, dice, CE) at the start and end of
/// training, plus the ranking coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightSchedule {
    pub start: [f64; 4],
    pub end: [f64; 4],
    pub beta: f64,
}

impl Default for WeightSchedule {
    fn default() -> Self {
        WeightSchedule {
            start: [0.10, 0.10, 0.40, 0.40],
            end: [0.30, 0.30, 0.20, 0.20],
            beta: 0.1,
        }
    }
}

impl WeightSchedule {
    pub fn validate(&self) -> Result<()> {
        for ends in [&self.start, &self.end] {
            if ends.iter().any(|w| !(0.0..=1.0).contains(w)) {
                return Err(Error::Config(format!("schedule weights must lie in [0, 1], got {ends:?}")));
            }
            if ends.iter().sum::<f64>() <= 0.0 {
                return Err(Error::Config("schedule endpoint weights are all zero".into()));
            }
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::Config(format!("ranking coefficient must be >= 0, got {}", self.beta)));
        }
        Ok(())
    }
}

/// Linear interpolation between the endpoints at training fraction `tau`,
/// renormalized to sum to one.
pub fn schedule_weights(tau: f64, s: &WeightSchedule) -> Result<[f64; 4]> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!("training fraction {tau} outside [0, 1]")));
    }
    s.validate()?;
    let mut w = [0.0; 4];
    for i in 0..4 {
        w[i] = (1.0 - tau) * s.start[i] + tau * s.end[i];
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_endpoints_and_midpoint() {
        let s = WeightSchedule::default();
        let close = |a: [f64; 4], b: [f64; 4]| a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12);
        assert!(close(schedule_weights(0.0, &s).unwrap(), [0.1, 0.1, 0.4, 0.4]));
        assert!(close(schedule_weights(1.0, &s).unwrap(), [0.3, 0.3, 0.2, 0.2]));
        assert!(close(schedule_weights(0.5, &s).unwrap(), [0.2, 0.2, 0.3, 0.3]));
    }

    #[test]
    fn out_of_range_tau_rejected() {
        let s = WeightSchedule::default();
        assert!(schedule_weights(-0.01, &s).is_err());
        assert!(schedule_weights(1.5, &s).is_err());
        assert!(schedule_weights(f64::NAN, &s).is_err());
    }
}
