//! Instance normalization (over space, per channel) and channels-first layer
//! normalization (over channels, per voxel), both with per-channel affine.

use std::rc::Rc;

use crate::nn::{Scalar, Tape, Tensor, Var};

pub const NORM_EPS: f64 = 1e-5;

fn affine_backward<T: Scalar>(
    g: &Tensor<T>,
    xhat: &Tensor<T>,
    gamma: &Tensor<T>,
    needs: &[bool],
) -> (Option<Tensor<T>>, Option<Tensor<T>>, Tensor<T>) {
    let [bn, cn, ..] = g.dims5();
    let s = g.spatial();
    let mut gg = vec![T::zero(); cn];
    let mut gb = vec![T::zero(); cn];
    let mut gxhat = Tensor::zeros(g.shape());
    for b in 0..bn {
        for c in 0..cn {
            let off = (b * cn + c) * s;
            let gs = &g.data()[off..off + s];
            let xs = &xhat.data()[off..off + s];
            if needs[1] {
                gg[c] += gs.iter().zip(xs).map(|(&a, &b)| a * b).sum::<T>();
            }
            if needs[2] {
                gb[c] += gs.iter().copied().sum::<T>();
            }
            let gam = gamma.data()[c];
            for (o, &gv) in gxhat.data_mut()[off..off + s].iter_mut().zip(gs) {
                *o = gv * gam;
            }
        }
    }
    (
        needs[1].then(|| Tensor::from_vec(&[cn], gg)),
        needs[2].then(|| Tensor::from_vec(&[cn], gb)),
        gxhat,
    )
}

fn apply_affine<T: Scalar>(xhat: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Tensor<T> {
    let [_, cn, ..] = xhat.dims5();
    let s = xhat.spatial();
    let mut y = xhat.clone();
    for (i, chunk) in y.data_mut().chunks_mut(s).enumerate() {
        let (g, b) = (gamma.data()[i % cn], beta.data()[i % cn]);
        chunk.iter_mut().for_each(|v| *v = *v * g + b);
    }
    y
}

pub fn instance_norm<T: Scalar>(
    tape: &Tape<T>,
    x: &Var<T>,
    gamma: &Var<T>,
    beta: &Var<T>,
) -> Var<T> {
    let s = x.value().spatial();
    let eps = T::of(NORM_EPS);
    let inv_n = T::of(1.0 / s as f64);
    let mut xhat = x.value().clone();
    let mut inv_std = Vec::with_capacity(xhat.numel() / s);
    for chunk in xhat.data_mut().chunks_mut(s) {
        let mean = chunk.iter().copied().sum::<T>() * inv_n;
        let var = chunk.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
        let inv = T::one() / (var + eps).sqrt();
        chunk.iter_mut().for_each(|v| *v = (*v - mean) * inv);
        inv_std.push(inv);
    }
    let y = apply_affine(&xhat, gamma.value(), beta.value());
    let xhat = Rc::new(xhat);
    let gam = gamma.shared();
    tape.record(y, &[x, gamma, beta], move |g, needs| {
        let (gg, gb, gxhat) = affine_backward(g, &xhat, &gam, needs);
        let gx = needs[0].then(|| {
            let mut gx = gxhat;
            for ((chunk, xs), &inv) in gx
                .data_mut()
                .chunks_mut(s)
                .zip(xhat.data().chunks(s))
                .zip(&inv_std)
            {
                let m1 = chunk.iter().copied().sum::<T>() * inv_n;
                let m2 = chunk.iter().zip(xs).map(|(&a, &b)| a * b).sum::<T>() * inv_n;
                for (v, &xh) in chunk.iter_mut().zip(xs) {
                    *v = inv * (*v - m1 - xh * m2);
                }
            }
            gx
        });
        vec![gx, gg, gb]
    })
}

/// Layer norm across channels at every voxel (channels-first layout).
pub fn layer_norm_channels<T: Scalar>(
    tape: &Tape<T>,
    x: &Var<T>,
    gamma: &Var<T>,
    beta: &Var<T>,
) -> Var<T> {
    let [bn, cn, ..] = x.value().dims5();
    let s = x.value().spatial();
    let eps = T::of(NORM_EPS);
    let inv_c = T::of(1.0 / cn as f64);
    let mut xhat = x.value().clone();
    let mut inv_std = vec![T::zero(); bn * s];
    for b in 0..bn {
        let xs = &mut xhat.data_mut()[b * cn * s..(b + 1) * cn * s];
        let mut mean = vec![T::zero(); s];
        for c in 0..cn {
            for (m, &v) in mean.iter_mut().zip(&xs[c * s..(c + 1) * s]) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m *= inv_c);
        let mut var = vec![T::zero(); s];
        for c in 0..cn {
            for ((acc, &v), &m) in var.iter_mut().zip(&xs[c * s..(c + 1) * s]).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let inv = &mut inv_std[b * s..(b + 1) * s];
        for (i, v) in inv.iter_mut().zip(&var) {
            *i = T::one() / (*v * inv_c + eps).sqrt();
        }
        for c in 0..cn {
            for ((v, &m), &i) in xs[c * s..(c + 1) * s].iter_mut().zip(&mean).zip(inv.iter()) {
                *v = (*v - m) * i;
            }
        }
    }
    let y = apply_affine(&xhat, gamma.value(), beta.value());
    let xhat = Rc::new(xhat);
    let gam = gamma.shared();
    tape.record(y, &[x, gamma, beta], move |g, needs| {
        let (gg, gb, gxhat) = affine_backward(g, &xhat, &gam, needs);
        let gx = needs[0].then(|| {
            let mut gx = gxhat;
            for b in 0..bn {
                let gs = &mut gx.data_mut()[b * cn * s..(b + 1) * cn * s];
                let xs = &xhat.data()[b * cn * s..(b + 1) * cn * s];
                let mut m1 = vec![T::zero(); s];
                let mut m2 = vec![T::zero(); s];
                for c in 0..cn {
                    let (gc, xc) = (&gs[c * s..(c + 1) * s], &xs[c * s..(c + 1) * s]);
                    for i in 0..s {
                        m1[i] += gc[i];
                        m2[i] += gc[i] * xc[i];
                    }
                }
                let inv = &inv_std[b * s..(b + 1) * s];
                for c in 0..cn {
                    let xc = &xs[c * s..(c + 1) * s];
                    for (i, v) in gs[c * s..(c + 1) * s].iter_mut().enumerate() {
                        *v = inv[i] * (*v - m1[i] * inv_c - xc[i] * m2[i] * inv_c);
                    }
                }
            }
            gx
        });
        vec![gx, gg, gb]
    })
}
