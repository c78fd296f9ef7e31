//! Factor-2 trilinear upsampling (half-pixel aligned, edge clamped).

use crate::nn::{Scalar, Tape, Tensor, Var};

/// `(outer, n, inner)` split of a contiguous tensor around `axis`.
fn split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn up_axis<T: Scalar>(x: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, n, inner) = split(x.shape(), axis);
    let mut shape = x.shape().to_vec();
    shape[axis] = 2 * n;
    let mut out = Tensor::zeros(&shape);
    let (near, far) = (T::of(0.75), T::of(0.25));
    let xd = x.data();
    let od = out.data_mut();
    for o in 0..outer {
        for i in 0..n {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            let src = |j: usize| &xd[(o * n + j) * inner..(o * n + j + 1) * inner];
            let (c, l, h) = (src(i), src(lo), src(hi));
            let e = (o * 2 * n + 2 * i) * inner;
            for k in 0..inner {
                od[e + k] = near * c[k] + far * l[k];
                od[e + inner + k] = near * c[k] + far * h[k];
            }
        }
    }
    out
}

fn up_axis_transpose<T: Scalar>(g: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, n2, inner) = split(g.shape(), axis);
    let n = n2 / 2;
    let mut shape = g.shape().to_vec();
    shape[axis] = n;
    let mut out = Tensor::zeros(&shape);
    let (near, far) = (T::of(0.75), T::of(0.25));
    let gd = g.data();
    let od = out.data_mut();
    for o in 0..outer {
        for i in 0..n {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            let e = (o * n2 + 2 * i) * inner;
            for k in 0..inner {
                let (ge, go) = (gd[e + k], gd[e + inner + k]);
                od[(o * n + i) * inner + k] += near * (ge + go);
                od[(o * n + lo) * inner + k] += far * ge;
                od[(o * n + hi) * inner + k] += far * go;
            }
        }
    }
    out
}

/// Doubles every spatial dimension of a `(B, C, D, H, W)` tensor.
pub fn upsample2_trilinear<T: Scalar>(tape: &Tape<T>, x: &Var<T>) -> Var<T> {
    let mut y = x.value().clone();
    for axis in 2..5 {
        y = up_axis(&y, axis);
    }
    tape.record(y, &[x], |g, _| {
        let mut gx = g.clone();
        for axis in (2..5).rev() {
            gx = up_axis_transpose(&gx, axis);
        }
        vec![Some(gx)]
    })
}
