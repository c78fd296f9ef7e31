use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::metrics::MetricsOptions;
use crate::net::NetConfig;
use crate::nn::AdamWConfig;
use crate::recon::ReconConfig;
use crate::sdi::SdiConfig;

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "DEFN_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory of cases for pre-training.
    pub pretrain: Option<PathBuf>,
    pub finetune: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Network input `(D, H, W)`; volumes are resampled to it.
    pub input_size: [usize; 3],
    pub batch_size: usize,
    /// Required for the matching phase; there is no sensible default.
    pub pretrain_epochs: Option<usize>,
    pub finetune_epochs: Option<usize>,
    /// Upper bound on optimizer steps, for short runs.
    pub max_steps: Option<u64>,
    /// Save a checkpoint every this many steps (0 = only at the end).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            input_size: [96, 96, 96],
            batch_size: 8,
            pretrain_epochs: None,
            finetune_epochs: None,
            max_steps: None,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub flip: bool,
    pub rotate: bool,
    pub translate: bool,
    pub scale: bool,
    pub noise: bool,
    pub histogram: bool,
    /// Chance that each enabled transform is applied to a sample.
    pub probability: f64,
    /// Largest shift per axis, in voxels.
    pub translate_max: usize,
    pub scale_range: [f64; 2],
    pub noise_std: f64,
    /// Range of the intensity exponent of the histogram transform.
    pub gamma_range: [f64; 2],
    /// Chance of injecting a synthetic defect before resampling.
    pub sdi_probability: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip: true,
            rotate: true,
            translate: true,
            scale: true,
            noise: true,
            histogram: true,
            probability: 0.5,
            translate_max: 4,
            scale_range: [0.9, 1.1],
            noise_std: 0.02,
            gamma_range: [0.7, 1.5],
            sdi_probability: 0.0,
        }
    }
}

impl AugmentConfig {
    /// Everything off.
    pub fn none() -> Self {
        AugmentConfig {
            flip: false,
            rotate: false,
            translate: false,
            scale: false,
            noise: false,
            histogram: false,
            sdi_probability: 0.0,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    /// Resample the whole volume to the input size and back.
    #[default]
    Resample,
    /// Cover the volume with input-sized tiles at native resolution.
    Tile,
}

/// Everything a run needs, read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub inference: InferenceMode,
    pub data: DataConfig,
    pub model: NetConfig,
    pub train: TrainConfig,
    pub optim: AdamWConfig,
    pub augment: AugmentConfig,
    pub sdi: SdiConfig,
    pub loss: LossConfig,
    pub metrics: MetricsOptions,
    pub recon: ReconConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            inference: InferenceMode::Resample,
            data: DataConfig::default(),
            model: NetConfig::default(),
            train: TrainConfig::default(),
            optim: AdamWConfig::default(),
            augment: AugmentConfig::default(),
            sdi: SdiConfig::default(),
            loss: LossConfig::default(),
            metrics: MetricsOptions::default(),
            recon: ReconConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Applies `DEFN_SEED` when set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        if t.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        let (m, lo) = (self.model.size_multiple(), self.model.min_size());
        if t.input_size.iter().any(|&s| s < lo || s % m != 0) {
            return Err(Error::Config(format!(
                "input_size {:?} must be multiples of {m} and at least {lo}",
                t.input_size
            )));
        }
        let o = &self.optim;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", o.lr)));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) || o.weight_decay < 0.0 {
            return Err(Error::Config(format!("invalid optimizer settings {o:?}")));
        }
        let a = &self.augment;
        let prob_ok = |p: f64| (0.0..=1.0).contains(&p);
        if !prob_ok(a.probability)
            || !prob_ok(a.sdi_probability)
            || !(a.scale_range[0] > 0.0 && a.scale_range[0] <= a.scale_range[1])
            || !(a.gamma_range[0] > 0.0 && a.gamma_range[0] <= a.gamma_range[1])
            || !(a.noise_std >= 0.0)
        {
            return Err(Error::Config(format!("invalid augmentation settings {a:?}")));
        }
        self.model.validate()?;
        self.sdi.validate()?;
        self.loss.validate()
    }
}
