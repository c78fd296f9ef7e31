use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::nn::{Scalar, Tape, Tensor, Var};

#[inline]
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

#[inline]
pub fn gelu_grad_scalar(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2)) + x * (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn add<T: Scalar>(tape: &Tape<T>, a: &Var<T>, b: &Var<T>) -> Var<T> {
    let out = a.value().zip_map(b.value(), |x, y| x + y);
    tape.record(out, &[a, b], |g, needs| {
        vec![
            needs[0].then(|| g.clone()),
            needs[1].then(|| g.clone()),
        ]
    })
}

pub fn mul<T: Scalar>(tape: &Tape<T>, a: &Var<T>, b: &Var<T>) -> Var<T> {
    let out = a.value().zip_map(b.value(), |x, y| x * y);
    let (av, bv) = (a.shared(), b.shared());
    tape.record(out, &[a, b], move |g, needs| {
        vec![
            needs[0].then(|| g.zip_map(&bv, |g, y| g * y)),
            needs[1].then(|| g.zip_map(&av, |g, x| g * x)),
        ]
    })
}

/// Exact (erf-based) GELU.
pub fn gelu<T: Scalar>(tape: &Tape<T>, x: &Var<T>) -> Var<T> {
    let out = x.value().map(|v| T::of(gelu_scalar(v.f64())));
    let xv = x.shared();
    tape.record(out, &[x], move |g, _| {
        vec![Some(g.zip_map(&xv, |g, x| g * T::of(gelu_grad_scalar(x.f64()))))]
    })
}

pub fn sigmoid<T: Scalar>(tape: &Tape<T>, x: &Var<T>) -> Var<T> {
    let out = x.value().map(|v| T::of(sigmoid_scalar(v.f64())));
    let yv = std::rc::Rc::new(out.clone());
    tape.record(out, &[x], move |g, _| {
        vec![Some(g.zip_map(&yv, |g, y| g * y * (T::one() - y)))]
    })
}

/// Multiplies every element of sample `b` by the constant `factors[b]`.
pub fn scale_samples<T: Scalar>(tape: &Tape<T>, x: &Var<T>, factors: Vec<T>) -> Var<T> {
    let b = x.shape()[0];
    assert_eq!(factors.len(), b);
    let per = x.value().numel() / b;
    let apply = move |t: &Tensor<T>, f: &[T]| {
        let mut out = t.clone();
        for (chunk, &s) in out.data_mut().chunks_mut(per).zip(f) {
            chunk.iter_mut().for_each(|v| *v *= s);
        }
        out
    };
    let out = apply(x.value(), &factors);
    tape.record(out, &[x], move |g, _| vec![Some(apply(g, &factors))])
}

/// `x[b, c, ...] * gate[b, c, 0, 0, 0]`.
pub fn mul_channel_gate<T: Scalar>(tape: &Tape<T>, x: &Var<T>, gate: &Var<T>) -> Var<T> {
    let [bn, cn, ..] = x.value().dims5();
    assert_eq!(gate.shape(), &[bn, cn, 1, 1, 1]);
    let s = x.value().spatial();
    let mut out = x.value().clone();
    for (i, chunk) in out.data_mut().chunks_mut(s).enumerate() {
        let gv = gate.value().data()[i];
        chunk.iter_mut().for_each(|v| *v *= gv);
    }
    let (xv, gv) = (x.shared(), gate.shared());
    tape.record(out, &[x, gate], move |g, needs| {
        let gx = needs[0].then(|| {
            let mut r = g.clone();
            for (i, chunk) in r.data_mut().chunks_mut(s).enumerate() {
                let k = gv.data()[i];
                chunk.iter_mut().for_each(|v| *v *= k);
            }
            r
        });
        let gg = needs[1].then(|| {
            let data = g
                .data()
                .chunks(s)
                .zip(xv.data().chunks(s))
                .map(|(a, b)| a.iter().zip(b).map(|(&p, &q)| p * q).sum())
                .collect();
            Tensor::from_vec(&[bn, cn, 1, 1, 1], data)
        });
        vec![gx, gg]
    })
}

/// Mean over spatial axes: `(B, C, D, H, W) -> (B, C, 1, 1, 1)`.
pub fn global_avg_pool<T: Scalar>(tape: &Tape<T>, x: &Var<T>) -> Var<T> {
    let [bn, cn, ..] = x.value().dims5();
    let s = x.value().spatial();
    let inv = T::of(1.0 / s as f64);
    let data = x
        .value()
        .data()
        .chunks(s)
        .map(|c| c.iter().copied().sum::<T>() * inv)
        .collect();
    let out = Tensor::from_vec(&[bn, cn, 1, 1, 1], data);
    let shape = x.shape().to_vec();
    tape.record(out, &[x], move |g, _| {
        let mut r = Tensor::zeros(&shape);
        for (chunk, &gv) in r.data_mut().chunks_mut(s).zip(g.data()) {
            chunk.iter_mut().for_each(|v| *v = gv * inv);
        }
        vec![Some(r)]
    })
}

/// Concatenates along the channel axis.
pub fn concat_channels<T: Scalar>(tape: &Tape<T>, a: &Var<T>, b: &Var<T>) -> Var<T> {
    let [bn, ca, d, h, w] = a.value().dims5();
    let [bb, cb, d2, h2, w2] = b.value().dims5();
    assert_eq!((bn, d, h, w), (bb, d2, h2, w2), "concat shape mismatch");
    let s = d * h * w;
    let mut data = Vec::with_capacity(bn * (ca + cb) * s);
    for i in 0..bn {
        data.extend_from_slice(&a.value().data()[i * ca * s..(i + 1) * ca * s]);
        data.extend_from_slice(&b.value().data()[i * cb * s..(i + 1) * cb * s]);
    }
    let out = Tensor::from_vec(&[bn, ca + cb, d, h, w], data);
    tape.record(out, &[a, b], move |g, needs| {
        let split = |first: bool| {
            let (c, off) = if first { (ca, 0) } else { (cb, ca) };
            let mut v = Vec::with_capacity(bn * c * s);
            for i in 0..bn {
                let base = (i * (ca + cb) + off) * s;
                v.extend_from_slice(&g.data()[base..base + c * s]);
            }
            Tensor::from_vec(&[bn, c, d, h, w], v)
        };
        vec![needs[0].then(|| split(true)), needs[1].then(|| split(false))]
    })
}

/// Samples `[start, start + len)` along the batch axis.
pub fn batch_slice<T: Scalar>(tape: &Tape<T>, x: &Var<T>, start: usize, len: usize) -> Var<T> {
    let shape = x.shape().to_vec();
    let per: usize = shape[1..].iter().product();
    let mut out_shape = shape.clone();
    out_shape[0] = len;
    let out = Tensor::from_vec(
        &out_shape,
        x.value().data()[start * per..(start + len) * per].to_vec(),
    );
    tape.record(out, &[x], move |g, _| {
        let mut r = Tensor::zeros(&shape);
        r.data_mut()[start * per..(start + len) * per].copy_from_slice(g.data());
        vec![Some(r)]
    })
}

/// Concatenates along the batch axis.
pub fn batch_concat<T: Scalar>(tape: &Tape<T>, a: &Var<T>, b: &Var<T>) -> Var<T> {
    assert_eq!(a.shape()[1..], b.shape()[1..], "batch concat shape mismatch");
    let mut shape = a.shape().to_vec();
    shape[0] += b.shape()[0];
    let na = a.value().numel();
    let mut data = a.value().data().to_vec();
    data.extend_from_slice(b.value().data());
    let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
    tape.record(Tensor::from_vec(&shape, data), &[a, b], move |g, needs| {
        vec![
            needs[0].then(|| Tensor::from_vec(&sa, g.data()[..na].to_vec())),
            needs[1].then(|| Tensor::from_vec(&sb, g.data()[na..].to_vec())),
        ]
    })
}
