//! Convolutions and pooling on `(B, C, D, H, W)` tensors.
//!
//! Weight layouts:
//! * [`conv3d`]: `(C_out, C_in, k, k, k)`, odd `k`, zero "same" padding, stride 1.
//! * [`pointwise`]: `(C_out, C_in / groups)`, grouped 1×1×1 channel mixing.
//! * [`conv_transpose2`]: `(C_in, C_out, 2, 2, 2)`, stride 2.

use crate::nn::{Scalar, Tape, Tensor, Var};

/// Unfolds the `k³` neighborhood of every voxel of depth slice `d` into
/// `cols`, laid out `(C_in·k³, H·W)`.
fn im2col_slice<T: Scalar>(
    x: &[T],
    cin: usize,
    dims: [usize; 3],
    k: usize,
    d: usize,
    cols: &mut [T],
) {
    let [dn, hn, wn] = dims;
    let p = (k / 2) as isize;
    let hw = hn * wn;
    let plane = dn * hw;
    let mut row = 0;
    for ci in 0..cin {
        for kd in 0..k {
            let sd = d as isize + kd as isize - p;
            for kh in 0..k {
                for kw in 0..k {
                    let dst = &mut cols[row * hw..(row + 1) * hw];
                    row += 1;
                    if sd < 0 || sd >= dn as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let off_w = kw as isize - p;
                    let w_lo = (-off_w).max(0) as usize;
                    let w_hi = (wn as isize - off_w).min(wn as isize).max(0) as usize;
                    for h in 0..hn {
                        let sh = h as isize + kh as isize - p;
                        let line = &mut dst[h * wn..(h + 1) * wn];
                        if sh < 0 || sh >= hn as isize || w_lo >= w_hi {
                            line.fill(T::zero());
                            continue;
                        }
                        line[..w_lo].fill(T::zero());
                        line[w_hi..].fill(T::zero());
                        let src = ci * plane + sd as usize * hw + sh as usize * wn;
                        let a = (src as isize + w_lo as isize + off_w) as usize;
                        line[w_lo..w_hi].copy_from_slice(&x[a..a + (w_hi - w_lo)]);
                    }
                }
            }
        }
    }
}

fn conv3d_raw<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Tensor<T> {
    let [bn, cin, dn, hn, wn] = x.dims5();
    let [cout, wcin, k, k2, k3] = w.dims5();
    assert_eq!(cin, wcin, "conv3d channel mismatch");
    assert!(k == k2 && k == k3 && k % 2 == 1, "conv3d needs an odd cubic kernel");
    let kk = cin * k * k * k;
    let hw = hn * wn;
    let s = dn * hw;
    let mut out = Tensor::zeros(&[bn, cout, dn, hn, wn]);
    let mut cols = vec![T::zero(); kk * hw];
    for b in 0..bn {
        let xs = &x.data()[b * cin * s..(b + 1) * cin * s];
        for d in 0..dn {
            im2col_slice(xs, cin, [dn, hn, wn], k, d, &mut cols);
            let base = b * cout * s + d * hw;
            T::gemm(
                cout,
                kk,
                hw,
                T::one(),
                w.data(),
                kk as isize,
                1,
                &cols,
                hw as isize,
                1,
                T::zero(),
                &mut out.data_mut()[base..],
                s as isize,
                1,
            );
        }
    }
    out
}

fn add_bias<T: Scalar>(out: &mut Tensor<T>, bias: &Tensor<T>) {
    let [_, c, ..] = out.dims5();
    let s = out.spatial();
    for (i, chunk) in out.data_mut().chunks_mut(s).enumerate() {
        let bv = bias.data()[i % c];
        chunk.iter_mut().for_each(|v| *v += bv);
    }
}

fn bias_grad<T: Scalar>(g: &Tensor<T>) -> Tensor<T> {
    let [_, c, ..] = g.dims5();
    let s = g.spatial();
    let mut r = vec![T::zero(); c];
    for (i, chunk) in g.data().chunks(s).enumerate() {
        r[i % c] += chunk.iter().copied().sum::<T>();
    }
    Tensor::from_vec(&[c], r)
}

/// Same-padded stride-1 3D convolution.
pub fn conv3d<T: Scalar>(
    tape: &Tape<T>,
    x: &Var<T>,
    w: &Var<T>,
    bias: Option<&Var<T>>,
) -> Var<T> {
    let mut out = conv3d_raw(x.value(), w.value());
    if let Some(b) = bias {
        add_bias(&mut out, b.value());
    }
    let (xv, wv) = (x.shared(), w.shared());
    let backward = move |g: &Tensor<T>, needs: &[bool]| {
        let [cout, cin, k, ..] = wv.dims5();
        let gx = needs[0].then(|| {
            // Transposed conv of a same-padded odd kernel = conv with the
            // spatially flipped, channel-transposed kernel.
            let k3 = k * k * k;
            let mut wt = Tensor::zeros(&[cin, cout, k, k, k]);
            for co in 0..cout {
                for ci in 0..cin {
                    for t in 0..k3 {
                        wt.data_mut()[(ci * cout + co) * k3 + (k3 - 1 - t)] =
                            wv.data()[(co * cin + ci) * k3 + t];
                    }
                }
            }
            conv3d_raw(g, &wt)
        });
        let gw = needs[1].then(|| {
            let [bn, _, dn, hn, wn] = xv.dims5();
            let kk = cin * k * k * k;
            let hw = hn * wn;
            let s = dn * hw;
            let mut gw = Tensor::zeros(wv.shape());
            let mut cols = vec![T::zero(); kk * hw];
            for b in 0..bn {
                let xs = &xv.data()[b * cin * s..(b + 1) * cin * s];
                for d in 0..dn {
                    im2col_slice(xs, cin, [dn, hn, wn], k, d, &mut cols);
                    T::gemm(
                        cout,
                        hw,
                        kk,
                        T::one(),
                        &g.data()[b * cout * s + d * hw..],
                        s as isize,
                        1,
                        &cols,
                        1,
                        hw as isize,
                        T::one(),
                        gw.data_mut(),
                        kk as isize,
                        1,
                    );
                }
            }
            gw
        });
        let mut r = vec![gx, gw];
        if needs.len() > 2 {
            r.push(needs[2].then(|| bias_grad(g)));
        }
        r
    };
    match bias {
        Some(b) => tape.record(out, &[x, w, b], backward),
        None => tape.record(out, &[x, w], backward),
    }
}

/// Grouped 1×1×1 convolution (also used as a fully connected layer on
/// `(B, C, 1, 1, 1)` inputs).
pub fn pointwise<T: Scalar>(
    tape: &Tape<T>,
    x: &Var<T>,
    w: &Var<T>,
    bias: Option<&Var<T>>,
    groups: usize,
) -> Var<T> {
    let [bn, cin, dn, hn, wn] = x.value().dims5();
    let cout = w.shape()[0];
    let cig = w.shape()[1];
    assert!(groups >= 1 && cin % groups == 0 && cout % groups == 0, "bad group count");
    assert_eq!(cig * groups, cin, "pointwise weight does not match input channels");
    let cog = cout / groups;
    let s = dn * hn * wn;
    let mut out = Tensor::zeros(&[bn, cout, dn, hn, wn]);
    for b in 0..bn {
        for g in 0..groups {
            T::gemm(
                cog,
                cig,
                s,
                T::one(),
                &w.value().data()[g * cog * cig..],
                cig as isize,
                1,
                &x.value().data()[(b * cin + g * cig) * s..],
                s as isize,
                1,
                T::zero(),
                &mut out.data_mut()[(b * cout + g * cog) * s..],
                s as isize,
                1,
            );
        }
    }
    if let Some(bv) = bias {
        add_bias(&mut out, bv.value());
    }
    let (xv, wv) = (x.shared(), w.shared());
    let backward = move |gout: &Tensor<T>, needs: &[bool]| {
        let gx = needs[0].then(|| {
            let mut gx = Tensor::zeros(xv.shape());
            for b in 0..bn {
                for g in 0..groups {
                    T::gemm(
                        cig,
                        cog,
                        s,
                        T::one(),
                        &wv.data()[g * cog * cig..],
                        1,
                        cig as isize,
                        &gout.data()[(b * cout + g * cog) * s..],
                        s as isize,
                        1,
                        T::zero(),
                        &mut gx.data_mut()[(b * cin + g * cig) * s..],
                        s as isize,
                        1,
                    );
                }
            }
            gx
        });
        let gw = needs[1].then(|| {
            let mut gw = Tensor::zeros(wv.shape());
            for b in 0..bn {
                for g in 0..groups {
                    T::gemm(
                        cog,
                        s,
                        cig,
                        T::one(),
                        &gout.data()[(b * cout + g * cog) * s..],
                        s as isize,
                        1,
                        &xv.data()[(b * cin + g * cig) * s..],
                        1,
                        s as isize,
                        T::one(),
                        &mut gw.data_mut()[g * cog * cig..],
                        cig as isize,
                        1,
                    );
                }
            }
            gw
        });
        let mut r = vec![gx, gw];
        if needs.len() > 2 {
            r.push(needs[2].then(|| bias_grad(gout)));
        }
        r
    };
    match bias {
        Some(b) => tape.record(out, &[x, w, b], backward),
        None => tape.record(out, &[x, w], backward),
    }
}

/// Kernel-2 stride-2 transposed convolution: doubles every spatial dim.
pub fn conv_transpose2<T: Scalar>(
    tape: &Tape<T>,
    x: &Var<T>,
    w: &Var<T>,
    bias: Option<&Var<T>>,
) -> Var<T> {
    let [bn, cin, dn, hn, wn] = x.value().dims5();
    let [wcin, cout, ..] = w.value().dims5();
    assert_eq!(cin, wcin, "transposed conv channel mismatch");
    let c8 = cout * 8;
    let s = dn * hn * wn;
    let (od, oh, ow) = (2 * dn, 2 * hn, 2 * wn);
    let os = od * oh * ow;
    // Output offset of (co, tap) for input voxel `v`.
    let scatter_index = move |co: usize, tap: usize, v: usize| {
        let (i, j, l) = (tap >> 2, (tap >> 1) & 1, tap & 1);
        let (d, h, ww) = (v / (hn * wn), (v / wn) % hn, v % wn);
        co * os + ((2 * d + i) * oh + 2 * h + j) * ow + 2 * ww + l
    };
    let mut out = Tensor::zeros(&[bn, cout, od, oh, ow]);
    let mut y = vec![T::zero(); c8 * s];
    for b in 0..bn {
        T::gemm(
            c8,
            cin,
            s,
            T::one(),
            w.value().data(),
            1,
            c8 as isize,
            &x.value().data()[b * cin * s..],
            s as isize,
            1,
            T::zero(),
            &mut y,
            s as isize,
            1,
        );
        let ob = &mut out.data_mut()[b * cout * os..(b + 1) * cout * os];
        for r in 0..c8 {
            let (co, tap) = (r / 8, r % 8);
            for v in 0..s {
                ob[scatter_index(co, tap, v)] = y[r * s + v];
            }
        }
    }
    if let Some(bv) = bias {
        add_bias(&mut out, bv.value());
    }
    let (xv, wv) = (x.shared(), w.shared());
    let backward = move |g: &Tensor<T>, needs: &[bool]| {
        let mut gx = needs[0].then(|| Tensor::zeros(xv.shape()));
        let mut gw = needs[1].then(|| Tensor::zeros(wv.shape()));
        let mut gy = vec![T::zero(); c8 * s];
        for b in 0..bn {
            let gb = &g.data()[b * cout * os..(b + 1) * cout * os];
            for r in 0..c8 {
                let (co, tap) = (r / 8, r % 8);
                for v in 0..s {
                    gy[r * s + v] = gb[scatter_index(co, tap, v)];
                }
            }
            if let Some(gx) = gx.as_mut() {
                T::gemm(
                    cin,
                    c8,
                    s,
                    T::one(),
                    wv.data(),
                    c8 as isize,
                    1,
                    &gy,
                    s as isize,
                    1,
                    T::zero(),
                    &mut gx.data_mut()[b * cin * s..],
                    s as isize,
                    1,
                );
            }
            if let Some(gw) = gw.as_mut() {
                T::gemm(
                    cin,
                    s,
                    c8,
                    T::one(),
                    &xv.data()[b * cin * s..],
                    s as isize,
                    1,
                    &gy,
                    1,
                    s as isize,
                    T::one(),
                    gw.data_mut(),
                    c8 as isize,
                    1,
                );
            }
        }
        let mut r = vec![gx, gw];
        if needs.len() > 2 {
            r.push(needs[2].then(|| bias_grad(g)));
        }
        r
    };
    match bias {
        Some(b) => tape.record(out, &[x, w, b], backward),
        None => tape.record(out, &[x, w], backward),
    }
}

/// 2×2×2 max pooling with stride 2; spatial dims must be even.
pub fn maxpool2<T: Scalar>(tape: &Tape<T>, x: &Var<T>) -> Var<T> {
    let [bn, cn, dn, hn, wn] = x.value().dims5();
    assert!(
        dn % 2 == 0 && hn % 2 == 0 && wn % 2 == 0,
        "maxpool2 needs even spatial dims"
    );
    let (od, oh, ow) = (dn / 2, hn / 2, wn / 2);
    let s = dn * hn * wn;
    let os = od * oh * ow;
    let mut out = Tensor::zeros(&[bn, cn, od, oh, ow]);
    let mut arg = vec![0usize; bn * cn * os];
    let xd = x.value().data();
    for p in 0..bn * cn {
        let src = &xd[p * s..(p + 1) * s];
        for d in 0..od {
            for h in 0..oh {
                for w in 0..ow {
                    let mut best = 2 * d * hn * wn + 2 * h * wn + 2 * w;
                    for tap in 1..8 {
                        let (i, j, l) = (tap >> 2, (tap >> 1) & 1, tap & 1);
                        let idx = ((2 * d + i) * hn + 2 * h + j) * wn + 2 * w + l;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    let o = p * os + (d * oh + h) * ow + w;
                    out.data_mut()[o] = src[best];
                    arg[o] = p * s + best;
                }
            }
        }
    }
    let shape = x.shape().to_vec();
    tape.record(out, &[x], move |g, _| {
        let mut gx = Tensor::zeros(&shape);
        for (o, &i) in arg.iter().enumerate() {
            gx.data_mut()[i] += g.data()[o];
        }
        vec![Some(gx)]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct_conv(x: &Tensor<f64>, w: &Tensor<f64>) -> Tensor<f64> {
        let [bn, cin, dn, hn, wn] = x.dims5();
        let [cout, _, k, ..] = w.dims5();
        let p = (k / 2) as isize;
        let mut out = Tensor::zeros(&[bn, cout, dn, hn, wn]);
        for b in 0..bn {
            for co in 0..cout {
                for d in 0..dn {
                    for h in 0..hn {
                        for ww in 0..wn {
                            let mut acc = 0.0;
                            for ci in 0..cin {
                                for kd in 0..k {
                                    for kh in 0..k {
                                        for kw in 0..k {
                                            let sd = d as isize + kd as isize - p;
                                            let sh = h as isize + kh as isize - p;
                                            let sw = ww as isize + kw as isize - p;
                                            if sd < 0
                                                || sh < 0
                                                || sw < 0
                                                || sd >= dn as isize
                                                || sh >= hn as isize
                                                || sw >= wn as isize
                                            {
                                                continue;
                                            }
                                            let xi = (((b * cin + ci) * dn + sd as usize) * hn
                                                + sh as usize)
                                                * wn
                                                + sw as usize;
                                            let wi = (((co * cin + ci) * k + kd) * k + kh) * k + kw;
                                            acc += x.data()[xi] * w.data()[wi];
                                        }
                                    }
                                }
                            }
                            let oi = (((b * cout + co) * dn + d) * hn + h) * wn + ww;
                            out.data_mut()[oi] = acc;
                        }
                    }
                }
            }
        }
        out
    }

    fn pseudo(shape: &[usize], seed: u64) -> Tensor<f64> {
        Tensor::from_fn(shape, |i| {
            let v = (i as u64 + 1).wrapping_mul(6364136223846793005).wrapping_add(seed);
            ((v >> 33) % 1000) as f64 / 500.0 - 1.0
        })
    }

    #[test]
    fn conv3d_matches_direct_loops() {
        let x = pseudo(&[2, 3, 4, 5, 3], 1);
        let w = pseudo(&[2, 3, 3, 3, 3], 2);
        let got = conv3d_raw(&x, &w);
        assert!(got.max_abs_diff(&direct_conv(&x, &w)) < 1e-12);
    }

    #[test]
    fn transpose_conv_places_taps() {
        let tape = Tape::new();
        let x = Var::constant(Tensor::from_vec(&[1, 1, 1, 1, 1], vec![2.0f64]));
        let w = Var::constant(Tensor::from_fn(&[1, 1, 2, 2, 2], |i| i as f64));
        let y = conv_transpose2(&tape, &x, &w, None);
        assert_eq!(y.shape(), &[1, 1, 2, 2, 2]);
        let expect: Vec<f64> = (0..8).map(|i| 2.0 * i as f64).collect();
        assert_eq!(y.value().data(), &expect[..]);
    }

    #[test]
    fn maxpool_picks_maximum() {
        let tape = Tape::new();
        let x = Var::constant(Tensor::from_fn(&[1, 1, 2, 2, 2], |i| (i * 7 % 8) as f64));
        let y = maxpool2(&tape, &x);
        assert_eq!(y.value().data(), &[7.0]);
    }
}
