use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::augment_sample;
use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use super::data::Case;
use crate::error::{Error, Result};
use crate::loss::{dwc_total, LossBatch, LossBreakdown};
use crate::net::Defn;
use crate::nn::{AdamW, Ctx, ParamSet, Tape, Tensor, Var};
use crate::sdi::augment_volume;
use crate::volume_io::{resample_volume, LabeledVolume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Finetune,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Finetune => "finetune",
        }
    }
}

pub const LOG_HEADER: &str =
    "step,tau,lambda_focal,lambda_boundary,lambda_dice,lambda_ce,l_focal,l_boundary,l_dice,l_ce,l_rank,total";

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub loss: LossBreakdown,
}

impl LogRow {
    pub fn csv(&self) -> String {
        let l = &self.loss;
        let w = l.weights;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.step, l.tau, w[0], w[1], w[2], w[3], l.focal, l.boundary, l.dice, l.ce, l.ranking, l.total
        )
    }
}

/// Schedule position of 0-based step `step` out of `total`: 0 at the first
/// step, 1 at the last.
pub fn schedule_tau(step: u64, total: u64) -> f64 {
    if total <= 1 {
        1.0
    } else {
        (step as f64 / (total - 1) as f64).min(1.0)
    }
}

/// Optimizer steps for `epochs` passes over `cases` samples.
pub fn planned_steps(epochs: usize, cases: usize, batch: usize, cap: Option<u64>) -> u64 {
    let per_epoch = cases.div_ceil(batch) as u64;
    let n = epochs as u64 * per_epoch;
    cap.map_or(n, |c| n.min(c))
}

fn step_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Owns parameters, optimizer state and the position in the run. Each step
/// draws its randomness from `(seed, step)` only, so a resumed run repeats
/// the uninterrupted one exactly.
pub struct Trainer {
    pub config: RunConfig,
    pub phase: Phase,
    pub net: Defn,
    pub params: ParamSet<f32>,
    pub optimizer: AdamW<f32>,
    /// Steps completed so far.
    pub step: u64,
    pub total_steps: u64,
    cases: Vec<Case>,
}

impl Trainer {
    /// Fresh run with randomly initialized weights.
    pub fn new(config: RunConfig, phase: Phase, cases: Vec<Case>, total_steps: u64) -> Result<Self> {
        let net = Defn::new(config.model.clone())?;
        let params = net.init(&mut step_rng(config.seed, u64::MAX));
        Self::with_params(config, phase, cases, total_steps, net, params)
    }

    /// Fine-tuning from a pre-trained checkpoint: weights only, new optimizer.
    pub fn from_pretrained(
        config: RunConfig,
        cases: Vec<Case>,
        total_steps: u64,
        ckpt: &Checkpoint,
    ) -> Result<Self> {
        if ckpt.config.model != config.model {
            return Err(Error::Checkpoint(format!(
                "checkpoint model {:?} does not match configured model {:?}",
                ckpt.config.model, config.model
            )));
        }
        let net = Defn::new(config.model.clone())?;
        Self::with_params(config, Phase::Finetune, cases, total_steps, net, ckpt.params.clone())
    }

    /// Continues an interrupted run. The checkpoint's config is used.
    pub fn resume(ckpt: Checkpoint, cases: Vec<Case>) -> Result<Self> {
        let net = Defn::new(ckpt.config.model.clone())?;
        let mut t = Self::with_params(ckpt.config, ckpt.phase, cases, ckpt.total_steps, net, ckpt.params)?;
        if let Some(opt) = ckpt.optimizer {
            t.optimizer = opt;
        }
        t.step = ckpt.step;
        Ok(t)
    }

    fn with_params(
        config: RunConfig,
        phase: Phase,
        cases: Vec<Case>,
        total_steps: u64,
        net: Defn,
        params: ParamSet<f32>,
    ) -> Result<Self> {
        config.validate()?;
        if cases.is_empty() {
            return Err(Error::Dataset("training set is empty".into()));
        }
        let size = config.train.input_size;
        if let Some(c) = cases.iter().find(|c| c.volume.dims() != size) {
            return Err(Error::Shape(format!(
                "case {} is {:?}, expected input size {size:?}",
                c.name,
                c.volume.dims()
            )));
        }
        net.check_params(&params)?;
        let optimizer = AdamW::new(config.optim, &params);
        Ok(Trainer {
            config,
            phase,
            net,
            params,
            optimizer,
            step: 0,
            total_steps,
            cases,
        })
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.total_steps
    }

    /// Case indices of batch `step`: an epoch-wise seeded permutation.
    pub fn batch_indices(&self, step: u64) -> Vec<usize> {
        let n = self.cases.len();
        let bs = self.config.train.batch_size.min(n);
        let per_epoch = n.div_ceil(bs) as u64;
        let epoch = step / per_epoch;
        let within = (step % per_epoch) as usize;
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut step_rng(self.config.seed, (1 << 63) | epoch));
        let start = within * bs;
        perm[start..(start + bs).min(n)].to_vec()
    }

    fn prepare(&self, case: &Case, rng: &mut ChaCha8Rng) -> Result<LabeledVolume> {
        let aug = &self.config.augment;
        let mut v = case.volume.clone();
        if aug.sdi_probability > 0.0 && rng.random_bool(aug.sdi_probability) {
            let seed = rng.random();
            match augment_volume(&v, &self.config.sdi, seed) {
                Ok((injected, _)) => v = resample_volume(&injected, self.config.train.input_size)?,
                Err(e) => log::debug!("skipping defect injection on {}: {e}", case.name),
            }
        }
        augment_sample(&v, aug, rng)
    }

    /// Runs one optimizer step and returns its log row.
    pub fn step_once(&mut self) -> Result<LogRow> {
        if self.is_done() {
            return Err(Error::InvalidArgument("training already finished".into()));
        }
        let step = self.step;
        let tau = schedule_tau(step, self.total_steps);
        let mut rng = step_rng(self.config.seed, step);
        let ids = self.batch_indices(step);
        let [d, h, w] = self.config.train.input_size;
        let s = d * h * w;
        let mut x = Vec::with_capacity(ids.len() * s);
        let mut labels = Vec::with_capacity(ids.len() * s);
        for &i in &ids {
            let v = self.prepare(&self.cases[i], &mut rng)?;
            x.extend_from_slice(v.image().data());
            labels.extend_from_slice(v.labels().data());
        }
        let x = Tensor::from_vec(&[ids.len(), 1, d, h, w], x);
        let mut loss_cfg = self.config.loss.clone();
        loss_cfg.ranking.seed = rng.random();

        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &self.params, true, true, step_rng(self.config.seed, step ^ (1 << 62)));
        let logits = self.net.forward(&ctx, &Var::constant(x))?;
        let nonfinite = |what: &str| {
            let names: Vec<&str> = ids.iter().map(|&i| self.cases[i].name.as_str()).collect();
            Error::NonFinite(format!("{what} at step {step}, batch {ids:?} ({})", names.join(", ")))
        };
        if !logits.value().all_finite() {
            return Err(nonfinite("logits"));
        }
        let batch = LossBatch::from_labels(logits.value().clone(), &labels)?;
        let (breakdown, grad) = match dwc_total(&batch, tau, &loss_cfg) {
            Err(Error::NonFinite(_)) => return Err(nonfinite("loss")),
            other => other?,
        };
        drop(batch);
        let mut grads = tape.backward(&logits, grad);
        let grads = ctx.collect_grads(&mut grads);
        drop(ctx);
        if grads.values().any(|g| !g.all_finite()) {
            return Err(nonfinite("gradient"));
        }
        self.optimizer.update(&mut self.params, &grads)?;
        self.step += 1;
        Ok(LogRow { step, loss: breakdown })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            phase: self.phase,
            step: self.step,
            total_steps: self.total_steps,
            tau: schedule_tau(self.step.saturating_sub(1), self.total_steps),
            params: self.params.clone(),
            optimizer: Some(self.optimizer.clone()),
        }
    }
}

/// Where a run writes its files.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFiles {
    pub log: PathBuf,
    pub last_checkpoint: PathBuf,
}

impl RunFiles {
    pub fn new(dir: &Path, phase: Phase) -> Self {
        RunFiles {
            log: dir.join(format!("{}_log.csv", phase.name())),
            last_checkpoint: dir.join(format!("{}_last.ckpt", phase.name())),
        }
    }

    pub fn periodic(&self, step: u64) -> PathBuf {
        let dir = self.last_checkpoint.parent().unwrap_or(Path::new("."));
        let stem = self
            .last_checkpoint
            .file_name()
            .map(|n| n.to_string_lossy().replace("_last.ckpt", ""))
            .unwrap_or_default();
        dir.join(format!("{stem}_step{step}.ckpt"))
    }
}

/// Runs the trainer to completion, logging every step and checkpointing
/// every `checkpoint_every` steps and at the end.
pub fn run(trainer: &mut Trainer, files: &RunFiles) -> Result<Vec<LogRow>> {
    let resumed = trainer.step > 0 && files.log.exists();
    if let Some(dir) = files.log.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(resumed)
        .truncate(!resumed)
        .open(&files.log)
        .map_err(|e| Error::io(&files.log, e))?;
    if !resumed {
        writeln!(log, "{LOG_HEADER}").map_err(|e| Error::io(&files.log, e))?;
    }
    let every = trainer.config.train.checkpoint_every;
    let mut rows = Vec::new();
    while !trainer.is_done() {
        let row = trainer.step_once()?;
        writeln!(log, "{}", row.csv()).map_err(|e| Error::io(&files.log, e))?;
        log::info!("{} step {} tau {:.4} loss {:.6}", trainer.phase.name(), row.step, row.loss.tau, row.loss.total);
        rows.push(row);
        if every > 0 && trainer.step % every == 0 && !trainer.is_done() {
            trainer.checkpoint().save(&files.periodic(trainer.step))?;
        }
    }
    log.flush().map_err(|e| Error::io(&files.log, e))?;
    trainer.checkpoint().save(&files.last_checkpoint)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tau_spans_unit_interval() {
        assert_eq!(schedule_tau(0, 5), 0.0);
        assert_eq!(schedule_tau(4, 5), 1.0);
        assert_eq!(schedule_tau(2, 5), 0.5);
        assert_eq!(schedule_tau(0, 1), 1.0);
    }

    #[test]
    fn step_counts() {
        assert_eq!(planned_steps(3, 5, 2, None), 9);
        assert_eq!(planned_steps(3, 5, 2, Some(4)), 4);
        assert_eq!(planned_steps(0, 5, 2, None), 0);
    }
}
