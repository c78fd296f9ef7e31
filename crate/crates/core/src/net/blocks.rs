//! Building blocks of the segmentation network.
//!
//! Each block owns a parameter-name prefix, registers its tensors with
//! `init`, and reads them back through a [`Ctx`] during `forward`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::ops;
use crate::nn::{fan_in_uniform, Ctx, ParamSet, Scalar, Tensor, Var};

fn join(prefix: &str, name: &str) -> String {
    format!("{prefix}.{name}")
}

/// Registers `(weight, bias)` for a same-padded `k³` convolution.
pub(crate) fn init_conv<T: Scalar>(
    params: &mut ParamSet<T>,
    prefix: &str,
    cin: usize,
    cout: usize,
    k: usize,
    rng: &mut impl Rng,
) {
    let fan_in = cin * k * k * k;
    params.insert(join(prefix, "weight"), fan_in_uniform(&[cout, cin, k, k, k], fan_in, rng));
    params.insert(join(prefix, "bias"), fan_in_uniform(&[cout], fan_in, rng));
}

/// Registers `(weight, bias)` for a grouped 1×1×1 convolution / linear layer.
pub(crate) fn init_pointwise<T: Scalar>(
    params: &mut ParamSet<T>,
    prefix: &str,
    cin: usize,
    cout: usize,
    groups: usize,
    rng: &mut impl Rng,
) {
    let fan_in = cin / groups;
    params.insert(join(prefix, "weight"), fan_in_uniform(&[cout, fan_in], fan_in, rng));
    params.insert(join(prefix, "bias"), fan_in_uniform(&[cout], fan_in, rng));
}

/// Registers unit scale / zero shift for a normalization layer.
pub(crate) fn init_norm<T: Scalar>(params: &mut ParamSet<T>, prefix: &str, channels: usize) {
    params.insert(join(prefix, "weight"), Tensor::full(&[channels], T::one()));
    params.insert(join(prefix, "bias"), Tensor::zeros(&[channels]));
}

pub(crate) fn conv<T: Scalar>(ctx: &Ctx<T>, x: &Var<T>, prefix: &str) -> Result<Var<T>> {
    let w = ctx.param(&join(prefix, "weight"))?;
    let b = ctx.param(&join(prefix, "bias"))?;
    check_channels(x, w.shape()[1], prefix)?;
    Ok(ops::conv3d(ctx.tape, x, &w, Some(&b)))
}

pub(crate) fn pointwise<T: Scalar>(
    ctx: &Ctx<T>,
    x: &Var<T>,
    prefix: &str,
    groups: usize,
) -> Result<Var<T>> {
    let w = ctx.param(&join(prefix, "weight"))?;
    let b = ctx.param(&join(prefix, "bias"))?;
    check_channels(x, w.shape()[1] * groups, prefix)?;
    Ok(ops::pointwise(ctx.tape, x, &w, Some(&b), groups))
}

pub(crate) fn instance_norm<T: Scalar>(ctx: &Ctx<T>, x: &Var<T>, prefix: &str) -> Result<Var<T>> {
    let g = ctx.param(&join(prefix, "weight"))?;
    let b = ctx.param(&join(prefix, "bias"))?;
    check_channels(x, g.shape()[0], prefix)?;
    Ok(ops::instance_norm(ctx.tape, x, &g, &b))
}

pub(crate) fn layer_norm<T: Scalar>(ctx: &Ctx<T>, x: &Var<T>, prefix: &str) -> Result<Var<T>> {
    let g = ctx.param(&join(prefix, "weight"))?;
    let b = ctx.param(&join(prefix, "bias"))?;
    check_channels(x, g.shape()[0], prefix)?;
    Ok(ops::layer_norm_channels(ctx.tape, x, &g, &b))
}

fn check_channels<T: Scalar>(x: &Var<T>, expected: usize, prefix: &str) -> Result<()> {
    let got = x.shape().get(1).copied().unwrap_or(0);
    if x.shape().len() != 5 || got != expected {
        return Err(Error::Config(format!(
            "{prefix}: expected {expected} input channels, input shape {:?}",
            x.shape()
        )));
    }
    Ok(())
}

/// Frequency-domain block: FFT over space, a grouped two-layer channel mixer
/// with a residual applied to real and imaginary parts, inverse FFT.
#[derive(Debug, Clone)]
pub struct FughBlock {
    pub prefix: String,
    pub channels: usize,
    pub groups: usize,
    /// Real and imaginary paths share the mixer weights.
    pub shared_weights: bool,
}

impl FughBlock {
    pub fn new(prefix: impl Into<String>, channels: usize, groups: usize) -> Result<Self> {
        if groups == 0 || channels % groups != 0 {
            return Err(Error::Config(format!(
                "FuGH: {channels} channels not divisible by {groups} groups"
            )));
        }
        Ok(FughBlock {
            prefix: prefix.into(),
            channels,
            groups,
            shared_weights: true,
        })
    }

    fn paths(&self) -> Vec<String> {
        if self.shared_weights {
            vec![self.prefix.clone()]
        } else {
            vec![join(&self.prefix, "real"), join(&self.prefix, "imag")]
        }
    }

    pub fn init<T: Scalar>(&self, params: &mut ParamSet<T>, rng: &mut impl Rng) {
        for p in self.paths() {
            let (c, g) = (self.channels, self.groups);
            init_pointwise(params, &join(&p, "conv1"), c, c, g, rng);
            init_pointwise(params, &join(&p, "conv2"), c, c, g, rng);
        }
    }

    fn mixer<T: Scalar>(&self, ctx: &Ctx<T>, u: &Var<T>, path: &str) -> Result<Var<T>> {
        let h = pointwise(ctx, u, &join(path, "conv1"), self.groups)?;
        let h = ops::gelu(ctx.tape, &h);
        let h = pointwise(ctx, &h, &join(path, "conv2"), self.groups)?;
        Ok(ops::add(ctx.tape, &h, u))
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<T>, x: &Var<T>) -> Result<Var<T>> {
        check_channels(x, self.channels, &self.prefix)?;
        let [_, _, d, h, w] = x.value().dims5();
        if d < 2 || h < 2 || w < 2 {
            return Err(Error::Config(format!(
                "{}: spatial dims must be >= 2, got {:?}",
                self.prefix,
                x.shape()
            )));
        }
        let spec = ops::fft3(ctx.tape, x);
        let mixed = if self.shared_weights {
            self.mixer(ctx, &spec, &self.prefix)?
        } else {
            let b = x.shape()[0];
            let paths = self.paths();
            let re = ops::batch_slice(ctx.tape, &spec, 0, b);
            let im = ops::batch_slice(ctx.tape, &spec, b, b);
            let re = self.mixer(ctx, &re, &paths[0])?;
            let im = self.mixer(ctx, &im, &paths[1])?;
            ops::batch_concat(ctx.tape, &re, &im)
        };
        if log::log_enabled!(log::Level::Trace) {
            log::trace!(
                "{}: inverse-FFT imaginary residue {:.3e}",
                self.prefix,
                ops::imag_residue(mixed.value())
            );
        }
        Ok(ops::ifft3_real(ctx.tape, &mixed))
    }
}

/// Spatial gate: `x ⊙ sigmoid(conv3³(x))`.
#[derive(Debug, Clone)]
pub struct S3dsaBlock {
    pub prefix: String,
    pub channels: usize,
}

impl S3dsaBlock {
    pub fn new(prefix: impl Into<String>, channels: usize) -> Self {
        S3dsaBlock {
            prefix: prefix.into(),
            channels,
        }
    }

    pub fn init<T: Scalar>(&self, params: &mut ParamSet<T>, rng: &mut impl Rng) {
        init_conv(params, &join(&self.prefix, "conv"), self.channels, self.channels, 3, rng);
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<T>, x: &Var<T>) -> Result<Var<T>> {
        let a = conv(ctx, x, &join(&self.prefix, "conv"))?;
        let a = ops::sigmoid(ctx.tape, &a);
        Ok(ops::mul(ctx.tape, x, &a))
    }
}

/// Squeeze-and-excitation channel gate.
#[derive(Debug, Clone)]
pub struct SeBlock {
    pub prefix: String,
    pub channels: usize,
    pub ratio: usize,
}

impl SeBlock {
    pub fn new(prefix: impl Into<String>, channels: usize, ratio: usize) -> Result<Self> {
        if ratio == 0 || channels < ratio {
            return Err(Error::Config(format!(
                "SE: {channels} channels is smaller than reduction ratio {ratio}"
            )));
        }
        Ok(SeBlock {
            prefix: prefix.into(),
            channels,
            ratio,
        })
    }

    pub fn hidden(&self) -> usize {
        self.channels / self.ratio
    }

    pub fn init<T: Scalar>(&self, params: &mut ParamSet<T>, rng: &mut impl Rng) {
        init_pointwise(params, &join(&self.prefix, "fc1"), self.channels, self.hidden(), 1, rng);
        init_pointwise(params, &join(&self.prefix, "fc2"), self.hidden(), self.channels, 1, rng);
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<T>, x: &Var<T>) -> Result<Var<T>> {
        let z = ops::global_avg_pool(ctx.tape, x);
        let z = pointwise(ctx, &z, &join(&self.prefix, "fc1"), 1)?;
        let z = ops::gelu(ctx.tape, &z);
        let z = pointwise(ctx, &z, &join(&self.prefix, "fc2"), 1)?;
        let gate = ops::sigmoid(ctx.tape, &z);
        Ok(ops::mul_channel_gate(ctx.tape, x, &gate))
    }
}

/// FuGH followed by a normalized inverted-bottleneck branch with an SE gate
/// and stochastic depth, added back onto its own input.
#[derive(Debug, Clone)]
pub struct HseBlock {
    pub prefix: String,
    pub channels: usize,
    pub fugh: FughBlock,
    pub se: SeBlock,
    pub droppath_rate: f64,
}

/// Width multiplier of the pointwise expansion.
pub const HSE_EXPANSION: usize = 4;

impl HseBlock {
    pub fn new(
        prefix: impl Into<String>,
        channels: usize,
        groups: usize,
        se_ratio: usize,
        droppath_rate: f64,
    ) -> Result<Self> {
        let prefix = prefix.into();
        if !(0.0..1.0).contains(&droppath_rate) {
            return Err(Error::Config(format!(
                "droppath rate must be in [0, 1), got {droppath_rate}"
            )));
        }
        Ok(HseBlock {
            fugh: FughBlock::new(join(&prefix, "fugh"), channels, groups)?,
            se: SeBlock::new(join(&prefix, "se"), channels, se_ratio)?,
            prefix,
            channels,
            droppath_rate,
        })
    }

    pub fn init<T: Scalar>(&self, params: &mut ParamSet<T>, rng: &mut impl Rng) {
        let c = self.channels;
        let p = &self.prefix;
        self.fugh.init(params, rng);
        init_norm(params, &join(p, "ln0"), c);
        init_conv(params, &join(p, "conv1"), c, c, 3, rng);
        init_norm(params, &join(p, "ln1"), c);
        init_pointwise(params, &join(p, "conv2"), c, HSE_EXPANSION * c, 1, rng);
        init_norm(params, &join(p, "ln2"), HSE_EXPANSION * c);
        init_pointwise(params, &join(p, "conv3"), HSE_EXPANSION * c, c, 1, rng);
        self.se.init(params, rng);
    }

    pub fn forward<T: Scalar>(&self, ctx: &Ctx<T>, x: &Var<T>) -> Result<Var<T>> {
        let p = &self.prefix;
        let y = self.fugh.forward(ctx, x)?;
        let y = layer_norm(ctx, &y, &join(p, "ln0"))?;
        let y = conv(ctx, &y, &join(p, "conv1"))?;
        let x1 = layer_norm(ctx, &y, &join(p, "ln1"))?;

        let r = pointwise(ctx, &x1, &join(p, "conv2"), 1)?;
        let r = layer_norm(ctx, &r, &join(p, "ln2"))?;
        let r = ops::gelu(ctx.tape, &r);
        let r = pointwise(ctx, &r, &join(p, "conv3"), 1)?;
        let r = self.se.forward(ctx, &r)?;
        let r = self.drop_path(ctx, &r);
        Ok(ops::add(ctx.tape, &r, &x1))
    }

    fn drop_path<T: Scalar>(&self, ctx: &Ctx<T>, r: &Var<T>) -> Var<T> {
        if !ctx.training || self.droppath_rate == 0.0 {
            return r.clone();
        }
        let keep = 1.0 - self.droppath_rate;
        let factors = (0..r.shape()[0])
            .map(|_| {
                if ctx.uniform() < keep {
                    T::of(1.0 / keep)
                } else {
                    T::zero()
                }
            })
            .collect();
        ops::scale_samples(ctx.tape, r, factors)
    }
}
