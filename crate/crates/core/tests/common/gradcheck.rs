#![allow(dead_code)]

use std::rc::Rc;

use defn_core::nn::{Ctx, ParamSet, Tape, Tensor, Var};
use defn_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-3;
/// Gradient magnitudes below this are compared absolutely.
pub const FLOOR: f64 = 1e-4;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Replaces every parameter with random values so that no gradient path is
/// hidden by a degenerate initialization (unit scales, zero shifts).
pub fn randomize(params: &mut ParamSet<f64>, rng: &mut impl Rng) {
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for n in names {
        let t = params.get_mut(&n).unwrap();
        let scale_like = n.ends_with("norm.weight") || n.contains(".ln") && n.ends_with(".weight");
        for v in t.data_mut() {
            *v = if scale_like { rng.random_range(0.5..1.5) } else { rng.random_range(-0.6..0.6) };
        }
    }
}

/// Worst relative error between the tape gradient and central differences of
/// `L = Σ f(x) ⊙ R`, over every input element and every parameter element.
pub fn check_module(
    params: &ParamSet<f64>,
    x: &Tensor<f64>,
    seed: u64,
    f: impl Fn(&Ctx<f64>, &Var<f64>) -> Result<Var<f64>>,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eval = |p: &ParamSet<f64>, x: &Tensor<f64>| -> Tensor<f64> {
        let tape = Tape::new();
        let ctx = Ctx::inference(&tape, p);
        f(&ctx, &Var::constant(x.clone())).unwrap().value().clone()
    };
    let y0 = eval(params, x);
    let r = random_tensor(y0.shape(), -1.0, 1.0, &mut rng);
    let loss = |p: &ParamSet<f64>, x: &Tensor<f64>| -> f64 {
        eval(p, x).data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    };

    let tape = Tape::new();
    let ctx = Ctx::new(&tape, params, true, false, ChaCha8Rng::seed_from_u64(0));
    let xv = tape.leaf(Rc::new(x.clone()));
    let y = f(&ctx, &xv).unwrap();
    let mut grads = tape.backward(&y, r.clone());
    let gx = grads.take(&xv).unwrap_or_else(|| Tensor::zeros(x.shape()));
    let gp = ctx.collect_grads(&mut grads);

    let mut worst = 0.0f64;
    for i in 0..x.numel() {
        let mut xp = x.clone();
        xp.data_mut()[i] += STEP;
        let mut xm = x.clone();
        xm.data_mut()[i] -= STEP;
        let n = (loss(params, &xp) - loss(params, &xm)) / (2.0 * STEP);
        worst = worst.max(rel_err(gx.data()[i], n));
    }
    for (name, t) in params.iter() {
        let zero = Tensor::zeros(t.shape());
        let a = gp.get(name).unwrap_or(&zero);
        for i in 0..t.numel() {
            let mut pp = params.clone();
            pp.get_mut(name).unwrap().data_mut()[i] += STEP;
            let mut pm = params.clone();
            pm.get_mut(name).unwrap().data_mut()[i] -= STEP;
            let n = (loss(&pp, x) - loss(&pm, x)) / (2.0 * STEP);
            let e = rel_err(a.data()[i], n);
            if e > TOLERANCE {
                eprintln!("{name}[{i}]: tape {} vs numeric {n}", a.data()[i]);
            }
            worst = worst.max(e);
        }
    }
    worst
}

/// Worst relative error of an analytic logit gradient against central
/// differences of the scalar loss.
pub fn check_logit_grad(
    logits: &Tensor<f64>,
    value_and_grad: impl Fn(&Tensor<f64>) -> (f64, Tensor<f64>),
) -> f64 {
    let (_, g) = value_and_grad(logits);
    let mut worst = 0.0f64;
    for i in 0..logits.numel() {
        let mut p = logits.clone();
        p.data_mut()[i] += STEP;
        let mut m = logits.clone();
        m.data_mut()[i] -= STEP;
        let n = (value_and_grad(&p).0 - value_and_grad(&m).0) / (2.0 * STEP);
        worst = worst.max(rel_err(g.data()[i], n));
    }
    worst
}

use defn_core::loss::{
    boundary_loss, ce_loss, deep_ranking_loss_with, dice_loss, dwc_total, focal_loss, BoundaryConfig,
    DeepRankingConfig, DiceConfig, FocalConfig, LossBatch, LossConfig, RankingSamples,
};
use defn_core::net::{FughBlock, HseBlock, S3dsaBlock, SeBlock};
use defn_core::nn::ops;

fn conv_params(p: &mut ParamSet<f64>, name: &str, shape: &[usize], rng: &mut impl Rng) {
    p.insert(format!("{name}.weight"), random_tensor(shape, -0.5, 0.5, rng));
    p.insert(format!("{name}.bias"), random_tensor(&[shape[0]], -0.5, 0.5, rng));
}

fn norm_params(p: &mut ParamSet<f64>, name: &str, c: usize, rng: &mut impl Rng) {
    p.insert(format!("{name}.weight"), random_tensor(&[c], 0.5, 1.5, rng));
    p.insert(format!("{name}.bias"), random_tensor(&[c], -0.5, 0.5, rng));
}

fn pv(ctx: &Ctx<f64>, name: &str) -> (Var<f64>, Var<f64>) {
    (ctx.param(&format!("{name}.weight")).unwrap(), ctx.param(&format!("{name}.bias")).unwrap())
}

/// Gradient checks of every network block on a `1×2×4³` input.
pub fn block_checks() -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let x = random_tensor(&[1, 2, 4, 4, 4], -1.0, 1.0, &mut rng);
    let mut out = Vec::new();
    let mut run = |name: &str, params: ParamSet<f64>, f: &dyn Fn(&Ctx<f64>, &Var<f64>) -> Result<Var<f64>>| {
        out.push((name.to_string(), check_module(&params, &x, name.len() as u64, f)));
    };

    for (shared, groups) in [(true, 1), (true, 2), (false, 1), (false, 2)] {
        let mut b = FughBlock::new("fugh", 2, groups).unwrap();
        b.shared_weights = shared;
        let mut p = ParamSet::new();
        b.init(&mut p, &mut rng);
        randomize(&mut p, &mut rng);
        let label = format!("fugh(shared={shared},groups={groups})");
        run(&label, p, &|c, v| b.forward(c, v));
    }

    let gate = S3dsaBlock::new("gate", 2);
    let mut p = ParamSet::new();
    gate.init(&mut p, &mut rng);
    randomize(&mut p, &mut rng);
    run("s3dsa", p, &|c, v| gate.forward(c, v));

    let se = SeBlock::new("se", 2, 2).unwrap();
    let mut p = ParamSet::new();
    se.init(&mut p, &mut rng);
    randomize(&mut p, &mut rng);
    run("se", p, &|c, v| se.forward(c, v));

    let hse = HseBlock::new("hse", 2, 2, 2, 0.0).unwrap();
    let mut p = ParamSet::new();
    hse.init(&mut p, &mut rng);
    randomize(&mut p, &mut rng);
    run("hse", p, &|c, v| hse.forward(c, v));

    // stem: conv, instance norm, GELU
    let mut p = ParamSet::new();
    conv_params(&mut p, "stem.conv", &[2, 2, 3, 3, 3], &mut rng);
    norm_params(&mut p, "stem.norm", 2, &mut rng);
    run("stem", p, &|c, v| {
        let (w, b) = pv(c, "stem.conv");
        let y = ops::conv3d(c.tape, v, &w, Some(&b));
        let (g, s) = pv(c, "stem.norm");
        Ok(ops::gelu(c.tape, &ops::instance_norm(c.tape, &y, &g, &s)))
    });

    // encoder down step: max-pool, conv, instance norm, GELU
    let mut p = ParamSet::new();
    conv_params(&mut p, "down.conv", &[3, 2, 3, 3, 3], &mut rng);
    norm_params(&mut p, "down.norm", 3, &mut rng);
    run("down", p, &|c, v| {
        let y = ops::maxpool2(c.tape, v);
        let (w, b) = pv(c, "down.conv");
        let y = ops::conv3d(c.tape, &y, &w, Some(&b));
        let (g, s) = pv(c, "down.norm");
        Ok(ops::gelu(c.tape, &ops::instance_norm(c.tape, &y, &g, &s)))
    });

    // decoder level with either upsampling, fed by a pooled copy of the input
    for transposed in [true, false] {
        let mut p = ParamSet::new();
        if transposed {
            p.insert("up.weight", random_tensor(&[2, 2, 2, 2, 2], -0.5, 0.5, &mut rng));
            p.insert("up.bias", random_tensor(&[2], -0.5, 0.5, &mut rng));
        } else {
            conv_params(&mut p, "up", &[2, 2], &mut rng);
        }
        conv_params(&mut p, "dec.conv", &[2, 4, 3, 3, 3], &mut rng);
        norm_params(&mut p, "dec.norm", 2, &mut rng);
        conv_params(&mut p, "head", &[4, 2], &mut rng);
        let label = if transposed { "decoder(transposed)+head" } else { "decoder(trilinear)+head" };
        run(label, p, &move |c, v| {
            let low = ops::maxpool2(c.tape, v);
            let (w, b) = pv(c, "up");
            let up = if transposed {
                ops::conv_transpose2(c.tape, &low, &w, Some(&b))
            } else {
                let u = ops::upsample2_trilinear(c.tape, &low);
                ops::pointwise(c.tape, &u, &w, Some(&b), 1)
            };
            let cat = ops::concat_channels(c.tape, &up, v);
            let (w, b) = pv(c, "dec.conv");
            let y = ops::conv3d(c.tape, &cat, &w, Some(&b));
            let (g, s) = pv(c, "dec.norm");
            let y = ops::gelu(c.tape, &ops::instance_norm(c.tape, &y, &g, &s));
            let (w, b) = pv(c, "head");
            Ok(ops::pointwise(c.tape, &y, &w, Some(&b), 1))
        });
    }
    out
}

fn batch(logits: &Tensor<f64>, labels: &[u8]) -> LossBatch<f64> {
    LossBatch::from_labels(logits.clone(), labels).unwrap()
}

/// Gradient checks of every loss term and the combined loss, on `1×2×4³`
/// and `1×4×2³` logits.
pub fn loss_checks() -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut out = Vec::new();
    for (k, dims) in [(2usize, [4usize, 4, 4]), (4, [2, 2, 2])] {
        let s: usize = dims.iter().product();
        let logits = random_tensor(&[1, k, dims[0], dims[1], dims[2]], -2.0, 2.0, &mut rng);
        let mut labels: Vec<u8> = (0..s).map(|_| rng.random_range(0..k as u8)).collect();
        labels[0] = 1;
        let tag = format!("{k}x{}^3", dims[0]);
        let mut push = |name: &str, e: f64| out.push((format!("{name} [{tag}]"), e));

        push("ce", check_logit_grad(&logits, |l| {
            let t = ce_loss(&batch(l, &labels)).unwrap();
            (t.value, t.grad)
        }));
        for gamma in [0.0, 0.5, 2.0] {
            push(&format!("focal(gamma={gamma})"), check_logit_grad(&logits, |l| {
                let t = focal_loss(&batch(l, &labels), &FocalConfig { gamma }).unwrap();
                (t.value, t.grad)
            }));
        }
        for kernel in [1, 3] {
            push(&format!("boundary(kernel={kernel})"), check_logit_grad(&logits, |l| {
                let t = boundary_loss(&batch(l, &labels), &BoundaryConfig { kernel }).unwrap();
                (t.value, t.grad)
            }));
        }
        push("dice", check_logit_grad(&logits, |l| {
            let t = dice_loss(&batch(l, &labels), &DiceConfig::default()).unwrap();
            (t.value, t.grad)
        }));
        // margin large enough that every hinge is active
        let rcfg = DeepRankingConfig { margin: 5.0, n_pos: 6, n_neg: 6, seed: 3 };
        let samples = RankingSamples::draw(&batch(&logits, &labels), &rcfg, &mut rng).unwrap();
        push("deep_ranking", check_logit_grad(&logits, |l| {
            let t = deep_ranking_loss_with(&batch(l, &labels), &rcfg, &samples).unwrap();
            (t.value, t.grad)
        }));
        let mut cfg = LossConfig::default();
        cfg.ranking = DeepRankingConfig { margin: 5.0, n_pos: 6, n_neg: 6, seed: 9 };
        push("dwc_total(tau=0.3)", check_logit_grad(&logits, |l| {
            let (b, g) = dwc_total(&batch(l, &labels), 0.3, &cfg).unwrap();
            (b.total, g)
        }));
    }
    out
}
