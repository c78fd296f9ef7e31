//! Segmentation losses and the training-phase weight schedule.
//!
//! Every term returns its value together with the gradient with respect to
//! the logits, so the trainer can seed the network's backward pass with the
//! weighted sum directly.

mod schedule;
mod terms;

pub use schedule::{schedule_weights, WeightSchedule};
pub use terms::{
    boundary_loss, ce_loss, deep_ranking_loss, deep_ranking_loss_with, dice_loss, focal_loss,
    RankingSamples,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};

/// Logits, one-hot target, and the softmax of the logits.
#[derive(Debug, Clone)]
pub struct LossBatch<T: Scalar> {
    logits: Tensor<T>,
    target: Tensor<T>,
    log_probs: Tensor<T>,
    probs: Tensor<T>,
}

impl<T: Scalar> LossBatch<T> {
    pub fn new(logits: Tensor<T>, target: Tensor<T>) -> Result<Self> {
        if logits.shape().len() != 5 || logits.shape() != target.shape() {
            return Err(Error::Shape(format!(
                "logits {:?} and target {:?} must share a (B, C, D, H, W) shape",
                logits.shape(),
                target.shape()
            )));
        }
        if logits.shape()[1] < 2 || logits.numel() == 0 {
            return Err(Error::Shape(format!("need >= 2 classes and >= 1 voxel, got {:?}", logits.shape())));
        }
        if !logits.all_finite() {
            return Err(Error::NonFinite("logits".into()));
        }
        let [bn, cn, ..] = logits.dims5();
        let s = logits.spatial();
        for b in 0..bn {
            for i in 0..s {
                let mut total = T::zero();
                for c in 0..cn {
                    let t = target.plane(b, c)[i];
                    if t != T::zero() && t != T::one() {
                        return Err(Error::InvalidArgument(format!("target entry {:?} is not 0 or 1", t)));
                    }
                    total += t;
                }
                if total != T::one() {
                    return Err(Error::InvalidArgument("target is not one-hot".into()));
                }
            }
        }
        let (log_probs, probs) = log_softmax(&logits);
        Ok(LossBatch {
            logits,
            target,
            log_probs,
            probs,
        })
    }

    /// Builds the one-hot target from class ids laid out `(B, D, H, W)`.
    pub fn from_labels(logits: Tensor<T>, labels: &[u8]) -> Result<Self> {
        if logits.shape().len() != 5 {
            return Err(Error::Shape(format!("logits must be 5-D, got {:?}", logits.shape())));
        }
        let [bn, cn, ..] = logits.dims5();
        let s = logits.spatial();
        if labels.len() != bn * s {
            return Err(Error::Shape(format!("{} labels for {} voxels", labels.len(), bn * s)));
        }
        let mut target = Tensor::zeros(logits.shape());
        for b in 0..bn {
            for (i, &l) in labels[b * s..(b + 1) * s].iter().enumerate() {
                if l as usize >= cn {
                    return Err(Error::InvalidArgument(format!("label {l} outside {cn} classes")));
                }
                target.plane_mut(b, l as usize)[i] = T::one();
            }
        }
        Self::new(logits, target)
    }

    pub fn logits(&self) -> &Tensor<T> {
        &self.logits
    }

    pub fn target(&self) -> &Tensor<T> {
        &self.target
    }

    pub fn probs(&self) -> &Tensor<T> {
        &self.probs
    }

    pub fn log_probs(&self) -> &Tensor<T> {
        &self.log_probs
    }

    pub fn classes(&self) -> usize {
        self.logits.shape()[1]
    }

    /// Voxels across the batch (`B·D·H·W`).
    pub fn voxels(&self) -> usize {
        self.logits.shape()[0] * self.logits.spatial()
    }
}

/// Channel-wise log-softmax and softmax.
fn log_softmax<T: Scalar>(z: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let [bn, cn, ..] = z.dims5();
    let s = z.spatial();
    let mut ls = Tensor::zeros(z.shape());
    let mut p = Tensor::zeros(z.shape());
    for b in 0..bn {
        for i in 0..s {
            let mut mx = T::neg_infinity();
            for c in 0..cn {
                mx = mx.max(z.plane(b, c)[i]);
            }
            let mut sum = T::zero();
            for c in 0..cn {
                sum += (z.plane(b, c)[i] - mx).exp();
            }
            let lse = mx + sum.ln();
            for c in 0..cn {
                let l = z.plane(b, c)[i] - lse;
                ls.plane_mut(b, c)[i] = l;
                p.plane_mut(b, c)[i] = l.exp();
            }
        }
    }
    (ls, p)
}

/// Pulls a gradient with respect to the probabilities back to the logits.
pub(crate) fn softmax_backward<T: Scalar>(probs: &Tensor<T>, g_probs: &Tensor<T>) -> Tensor<T> {
    let [bn, cn, ..] = probs.dims5();
    let s = probs.spatial();
    let mut out = Tensor::zeros(probs.shape());
    for b in 0..bn {
        for i in 0..s {
            let mut dot = T::zero();
            for c in 0..cn {
                dot += probs.plane(b, c)[i] * g_probs.plane(b, c)[i];
            }
            for c in 0..cn {
                let p = probs.plane(b, c)[i];
                out.plane_mut(b, c)[i] = p * (g_probs.plane(b, c)[i] - dot);
            }
        }
    }
    out
}

/// Like [`softmax_backward`] but takes `h = p ⊙ g` (finite even where `g`
/// alone would overflow).
pub(crate) fn softmax_backward_scaled<T: Scalar>(probs: &Tensor<T>, h: &Tensor<T>) -> Tensor<T> {
    let [bn, cn, ..] = probs.dims5();
    let s = probs.spatial();
    let mut out = Tensor::zeros(probs.shape());
    for b in 0..bn {
        for i in 0..s {
            let mut sum = T::zero();
            for c in 0..cn {
                sum += h.plane(b, c)[i];
            }
            for c in 0..cn {
                out.plane_mut(b, c)[i] = h.plane(b, c)[i] - probs.plane(b, c)[i] * sum;
            }
        }
    }
    out
}

/// A loss value and its gradient with respect to the logits.
#[derive(Debug, Clone)]
pub struct LossTerm<T> {
    pub value: f64,
    pub grad: Tensor<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FocalConfig {
    pub gamma: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        FocalConfig { gamma: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiceConfig {
    pub eps_numerator: f64,
    pub eps_denominator: f64,
}

impl Default for DiceConfig {
    fn default() -> Self {
        DiceConfig {
            eps_numerator: 1e-5,
            eps_denominator: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundaryConfig {
    /// Edge length of the averaging cube (odd).
    pub kernel: usize,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        BoundaryConfig { kernel: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeepRankingConfig {
    pub margin: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub seed: u64,
}

impl Default for DeepRankingConfig {
    fn default() -> Self {
        DeepRankingConfig {
            margin: 1.0,
            n_pos: 256,
            n_neg: 256,
            seed: 0,
        }
    }
}

/// All loss settings of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub focal: FocalConfig,
    pub boundary: BoundaryConfig,
    pub dice: DiceConfig,
    pub ranking: DeepRankingConfig,
    pub schedule: WeightSchedule,
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.focal.gamma.is_finite() && self.focal.gamma >= 0.0) {
            return bad("focal gamma must be finite and >= 0");
        }
        if self.boundary.kernel == 0 || self.boundary.kernel % 2 == 0 {
            return bad("boundary kernel must be odd");
        }
        if !(self.dice.eps_numerator > 0.0 && self.dice.eps_denominator > 0.0) {
            return bad("dice epsilons must be > 0");
        }
        let r = &self.ranking;
        if !(r.margin.is_finite() && r.margin >= 0.0) || r.n_pos == 0 || r.n_neg == 0 {
            return bad("ranking margin must be >= 0 and sample counts >= 1");
        }
        self.schedule.validate()
    }
}

/// Per-term values, their weights, and the combined total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub tau: f64,
    /// Weights of (focal, boundary, dice, CE).
    pub weights: [f64; 4],
    pub focal: f64,
    pub boundary: f64,
    pub dice: f64,
    pub ce: f64,
    pub ranking: f64,
    pub beta: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn terms(&self) -> [f64; 4] {
        [self.focal, self.boundary, self.dice, self.ce]
    }
}

/// Weighted sum of the four scheduled terms plus `β` times the ranking term.
pub fn dwc_total<T: Scalar>(b: &LossBatch<T>, tau: f64, cfg: &LossConfig) -> Result<(LossBreakdown, Tensor<T>)> {
    let weights = schedule_weights(tau, &cfg.schedule)?;
    let beta = cfg.schedule.beta;
    let terms = [
        focal_loss(b, &cfg.focal)?,
        boundary_loss(b, &cfg.boundary)?,
        dice_loss(b, &cfg.dice)?,
        ce_loss(b)?,
    ];
    let mut grad = Tensor::zeros(b.logits().shape());
    let mut total = 0.0;
    for (t, &w) in terms.iter().zip(&weights) {
        total += w * t.value;
        let wt = T::of(w);
        grad.data_mut().iter_mut().zip(t.grad.data()).for_each(|(g, &d)| *g += wt * d);
    }
    let mut ranking = 0.0;
    if beta != 0.0 {
        let r = deep_ranking_loss(b, &cfg.ranking)?;
        ranking = r.value;
        total += beta * r.value;
        let bt = T::of(beta);
        grad.data_mut().iter_mut().zip(r.grad.data()).for_each(|(g, &d)| *g += bt * d);
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    let breakdown = LossBreakdown {
        tau,
        weights,
        focal: terms[0].value,
        boundary: terms[1].value,
        dice: terms[2].value,
        ce: terms[3].value,
        ranking,
        beta,
        total,
    };
    Ok((breakdown, grad))
}
