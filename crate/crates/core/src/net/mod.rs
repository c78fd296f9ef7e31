//! The dual-encoder segmentation network.
//!
//! A spatial gate and a convolutional stem feed two encoders that run side by
//! side over four resolution halvings: a main path with a frequency-domain
//! block per stage, and a parallel path of HSE blocks. Their features are
//! summed per level and decoded by a U-shaped decoder with skip concatenation.

mod blocks;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use blocks::{FughBlock, HseBlock, S3dsaBlock, SeBlock, HSE_EXPANSION};

use crate::error::{Error, Result};
use crate::nn::ops;
use crate::nn::{Ctx, ParamSet, Scalar, Tape, Tensor, Var};
use blocks::{conv, init_conv, init_norm, init_pointwise, instance_norm, pointwise};

/// Number of resolution halvings in each encoder.
pub const STAGES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Upsample {
    /// Learned kernel-2 stride-2 transposed convolution.
    #[default]
    Transposed,
    /// Fixed trilinear doubling followed by a 1×1×1 convolution.
    Trilinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub base_channels: usize,
    pub fugh_groups: usize,
    pub se_ratio: usize,
    /// Stochastic-depth rate of the deepest HSE block; shallower blocks get
    /// linearly smaller rates down to zero.
    pub droppath_rate: f64,
    pub upsample: Upsample,
    /// Share the frequency-domain mixer weights between real and imaginary parts.
    pub fugh_shared_weights: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            in_channels: 1,
            num_classes: 4,
            base_channels: 16,
            fugh_groups: 4,
            se_ratio: 4,
            droppath_rate: 0.1,
            upsample: Upsample::Transposed,
            fugh_shared_weights: true,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.in_channels == 0 || self.num_classes < 2 {
            return bad(format!(
                "need at least one input channel and two classes, got {} / {}",
                self.in_channels, self.num_classes
            ));
        }
        if self.base_channels == 0 || self.fugh_groups == 0 || self.base_channels % self.fugh_groups != 0 {
            return bad(format!(
                "base_channels {} must be a positive multiple of fugh_groups {}",
                self.base_channels, self.fugh_groups
            ));
        }
        if self.se_ratio == 0 || self.base_channels < self.se_ratio {
            return bad(format!(
                "base_channels {} must be at least se_ratio {}",
                self.base_channels, self.se_ratio
            ));
        }
        if !(0.0..1.0).contains(&self.droppath_rate) {
            return bad(format!("droppath_rate must be in [0, 1), got {}", self.droppath_rate));
        }
        Ok(())
    }

    /// Channel width at resolution level `i` (0 = full resolution).
    pub fn width(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Spatial dims must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << STAGES
    }

    /// Smallest usable spatial dim: the bottleneck's spectral blocks need
    /// at least two voxels per axis.
    pub fn min_size(&self) -> usize {
        2 * self.size_multiple()
    }
}

/// The network: block layout derived from a [`NetConfig`].
#[derive(Debug, Clone)]
pub struct Defn {
    pub config: NetConfig,
    gate: S3dsaBlock,
    main_fugh: Vec<FughBlock>,
    hse: Vec<HseBlock>,
}

impl Defn {
    pub fn new(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let main_fugh = (0..STAGES)
            .map(|i| {
                let mut b = FughBlock::new(format!("main.{i}.fugh"), config.width(i), config.fugh_groups)?;
                b.shared_weights = config.fugh_shared_weights;
                Ok(b)
            })
            .collect::<Result<Vec<_>>>()?;
        let hse = (0..=STAGES)
            .map(|i| {
                let rate = config.droppath_rate * i as f64 / STAGES as f64;
                let mut b = HseBlock::new(
                    format!("hse.{i}"),
                    config.width(i),
                    config.fugh_groups,
                    config.se_ratio,
                    rate,
                )?;
                b.fugh.shared_weights = config.fugh_shared_weights;
                Ok(b)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Defn {
            gate: S3dsaBlock::new("gate", config.in_channels),
            main_fugh,
            hse,
            config,
        })
    }

    /// Fresh parameters.
    pub fn init<T: Scalar>(&self, rng: &mut impl Rng) -> ParamSet<T> {
        let cfg = &self.config;
        let mut p = ParamSet::new();
        self.gate.init(&mut p, rng);
        let c0 = cfg.width(0);
        init_conv(&mut p, "stem.conv", cfg.in_channels, c0, 3, rng);
        init_norm(&mut p, "stem.norm", c0);
        for i in 0..STAGES {
            self.main_fugh[i].init(&mut p, rng);
            init_conv(&mut p, &format!("main.{i}.down.conv"), cfg.width(i), cfg.width(i + 1), 3, rng);
            init_norm(&mut p, &format!("main.{i}.down.norm"), cfg.width(i + 1));
        }
        for (i, block) in self.hse.iter().enumerate() {
            if i > 0 {
                init_conv(&mut p, &format!("hse.{i}.down.conv"), cfg.width(i - 1), cfg.width(i), 3, rng);
                init_norm(&mut p, &format!("hse.{i}.down.norm"), cfg.width(i));
            }
            block.init(&mut p, rng);
        }
        for j in 0..STAGES {
            let (hi, lo) = (cfg.width(j + 1), cfg.width(j));
            match cfg.upsample {
                Upsample::Transposed => {
                    let fan_in = hi * 8;
                    p.insert(
                        format!("dec.{j}.up.weight"),
                        crate::nn::fan_in_uniform(&[hi, lo, 2, 2, 2], fan_in, rng),
                    );
                    p.insert(format!("dec.{j}.up.bias"), crate::nn::fan_in_uniform(&[lo], fan_in, rng));
                }
                Upsample::Trilinear => init_pointwise(&mut p, &format!("dec.{j}.up"), hi, lo, 1, rng),
            }
            init_conv(&mut p, &format!("dec.{j}.conv"), 2 * lo, lo, 3, rng);
            init_norm(&mut p, &format!("dec.{j}.norm"), lo);
        }
        init_pointwise(&mut p, "head", c0, cfg.num_classes, 1, rng);
        p
    }

    /// Checks that `params` has exactly the tensors this layout expects.
    pub fn check_params<T: Scalar>(&self, params: &ParamSet<T>) -> Result<()> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let expected: ParamSet<f32> = self.init(&mut rng);
        for (name, t) in expected.iter() {
            match params.get(name) {
                None => return Err(Error::Checkpoint(format!("missing parameter {name}"))),
                Some(p) if p.shape() != t.shape() => {
                    return Err(Error::Checkpoint(format!(
                        "parameter {name}: shape {:?}, expected {:?}",
                        p.shape(),
                        t.shape()
                    )))
                }
                _ => {}
            }
        }
        if let Some(extra) = params.names().find(|n| expected.get(n).is_none()) {
            return Err(Error::Checkpoint(format!("unexpected parameter {extra}")));
        }
        Ok(())
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let m = self.config.size_multiple();
        let lo = self.config.min_size();
        let ok = shape.len() == 5
            && shape[0] > 0
            && shape[1] == self.config.in_channels
            && shape[2..].iter().all(|&s| s >= lo && s % m == 0);
        if !ok {
            return Err(Error::Shape(format!(
                "network input must be (B, {}, D, H, W) with D, H, W multiples of {m} and at least {lo}, got {shape:?}",
                self.config.in_channels
            )));
        }
        Ok(())
    }

    fn down<T: Scalar>(&self, ctx: &Ctx<T>, x: &Var<T>, prefix: &str) -> Result<Var<T>> {
        let y = ops::maxpool2(ctx.tape, x);
        let y = conv(ctx, &y, &format!("{prefix}.conv"))?;
        let y = instance_norm(ctx, &y, &format!("{prefix}.norm"))?;
        Ok(ops::gelu(ctx.tape, &y))
    }

    /// Logits `(B, num_classes, D, H, W)` for input `(B, in_channels, D, H, W)`.
    pub fn forward<T: Scalar>(&self, ctx: &Ctx<T>, x: &Var<T>) -> Result<Var<T>> {
        self.check_input(x.shape())?;
        let x = self.gate.forward(ctx, x)?;
        let stem = conv(ctx, &x, "stem.conv")?;
        let stem = instance_norm(ctx, &stem, "stem.norm")?;
        let stem = ops::gelu(ctx.tape, &stem);

        let mut fused = Vec::with_capacity(STAGES + 1);
        let mut m = stem.clone();
        let mut h = self.hse[0].forward(ctx, &stem)?;
        for i in 0..STAGES {
            let skip = self.main_fugh[i].forward(ctx, &m)?;
            m = self.down(ctx, &skip, &format!("main.{i}.down"))?;
            let next = self.down(ctx, &h, &format!("hse.{}.down", i + 1))?;
            fused.push(ops::add(ctx.tape, &skip, &h));
            h = self.hse[i + 1].forward(ctx, &next)?;
        }
        let mut d = ops::add(ctx.tape, &m, &h);
        drop((m, h));

        for j in (0..STAGES).rev() {
            let up = match self.config.upsample {
                Upsample::Transposed => {
                    let w = ctx.param(&format!("dec.{j}.up.weight"))?;
                    let b = ctx.param(&format!("dec.{j}.up.bias"))?;
                    ops::conv_transpose2(ctx.tape, &d, &w, Some(&b))
                }
                Upsample::Trilinear => {
                    let u = ops::upsample2_trilinear(ctx.tape, &d);
                    pointwise(ctx, &u, &format!("dec.{j}.up"), 1)?
                }
            };
            let skip = fused.pop().expect("one fused level per stage");
            let cat = ops::concat_channels(ctx.tape, &up, &skip);
            let y = conv(ctx, &cat, &format!("dec.{j}.conv"))?;
            let y = instance_norm(ctx, &y, &format!("dec.{j}.norm"))?;
            d = ops::gelu(ctx.tape, &y);
        }
        pointwise(ctx, &d, "head", 1)
    }
}

use rand::SeedableRng;

/// Evaluation-mode forward pass: no dropout, no gradient state.
pub fn defn_forward<T: Scalar>(net: &Defn, params: &ParamSet<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let tape = Tape::new();
    let ctx = Ctx::inference(&tape, params);
    let y = net.forward(&ctx, &Var::constant(x.clone()))?;
    drop(ctx);
    let out = std::rc::Rc::try_unwrap(y.shared()).unwrap_or_else(|rc| (*rc).clone());
    if !out.all_finite() {
        return Err(Error::NonFinite("network output".into()));
    }
    Ok(out)
}

/// Per-voxel argmax over the class axis of `(B, K, D, H, W)` logits.
pub fn argmax_classes<T: Scalar>(logits: &Tensor<T>, sample: usize) -> Vec<u8> {
    let [_, k, ..] = logits.dims5();
    let s = logits.spatial();
    (0..s)
        .map(|i| {
            let mut best = 0;
            let mut best_v = logits.plane(sample, 0)[i];
            for c in 1..k {
                let v = logits.plane(sample, c)[i];
                if v > best_v {
                    best = c;
                    best_v = v;
                }
            }
            best as u8
        })
        .collect()
}
