//! 3D discrete Fourier transforms over the spatial axes of `(B, C, D, H, W)`
//! tensors. A spectrum is carried as a real tensor of shape `(2B, C, D, H, W)`:
//! samples `0..B` hold real parts, `B..2B` the matching imaginary parts.
//! The forward transform is unnormalized, the inverse scales by `1/(D·H·W)`.

use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::nn::{Scalar, Tape, Tensor, Var};

pub(crate) struct Fft3<T: Scalar> {
    dims: [usize; 3],
    forward: [Arc<dyn Fft<T>>; 3],
    inverse: [Arc<dyn Fft<T>>; 3],
}

impl<T: Scalar> Fft3<T> {
    pub(crate) fn new(dims: [usize; 3]) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = |p: &mut FftPlanner<T>, n| p.plan_fft_forward(n);
        let inv = |p: &mut FftPlanner<T>, n| p.plan_fft_inverse(n);
        Fft3 {
            dims,
            forward: [
                fwd(&mut planner, dims[0]),
                fwd(&mut planner, dims[1]),
                fwd(&mut planner, dims[2]),
            ],
            inverse: [
                inv(&mut planner, dims[0]),
                inv(&mut planner, dims[1]),
                inv(&mut planner, dims[2]),
            ],
        }
    }

    /// In-place unnormalized transform of one `D·H·W` volume.
    pub(crate) fn run(&self, buf: &mut [Complex<T>], inverse: bool) {
        let [dn, hn, wn] = self.dims;
        let plans = if inverse { &self.inverse } else { &self.forward };
        if wn > 1 {
            plans[2].process(buf);
        }
        if hn > 1 {
            let mut line = vec![Complex::default(); hn * wn];
            for d in 0..dn {
                let plane = &mut buf[d * hn * wn..(d + 1) * hn * wn];
                for w in 0..wn {
                    for h in 0..hn {
                        line[w * hn + h] = plane[h * wn + w];
                    }
                }
                plans[1].process(&mut line);
                for w in 0..wn {
                    for h in 0..hn {
                        plane[h * wn + w] = line[w * hn + h];
                    }
                }
            }
        }
        if dn > 1 {
            let hw = hn * wn;
            let mut line = vec![Complex::default(); dn * hw];
            for p in 0..hw {
                for d in 0..dn {
                    line[p * dn + d] = buf[d * hw + p];
                }
            }
            plans[0].process(&mut line);
            for p in 0..hw {
                for d in 0..dn {
                    buf[d * hw + p] = line[p * dn + d];
                }
            }
        }
    }
}

fn spatial_dims<T: Scalar>(t: &Tensor<T>) -> [usize; 3] {
    let [_, _, d, h, w] = t.dims5();
    [d, h, w]
}

/// Real volume -> stacked (real, imaginary) spectrum.
fn forward_stacked<T: Scalar>(x: &Tensor<T>, plan: &Fft3<T>) -> Tensor<T> {
    let [bn, cn, d, h, w] = x.dims5();
    let s = d * h * w;
    let mut out = Tensor::zeros(&[2 * bn, cn, d, h, w]);
    let half = bn * cn * s;
    let mut buf = vec![Complex::default(); s];
    for p in 0..bn * cn {
        for (c, &v) in buf.iter_mut().zip(&x.data()[p * s..(p + 1) * s]) {
            *c = Complex::new(v, T::zero());
        }
        plan.run(&mut buf, false);
        let o = out.data_mut();
        for (i, c) in buf.iter().enumerate() {
            o[p * s + i] = c.re;
            o[half + p * s + i] = c.im;
        }
    }
    out
}

/// Stacked spectrum -> real part of the unnormalized inverse, times `scale`.
/// Also returns the largest |imaginary| value seen.
fn inverse_real<T: Scalar>(z: &Tensor<T>, plan: &Fft3<T>, scale: T) -> (Tensor<T>, f64) {
    let [b2, cn, d, h, w] = z.dims5();
    assert!(b2 % 2 == 0, "spectrum batch must be even (real, imaginary)");
    let bn = b2 / 2;
    let s = d * h * w;
    let half = bn * cn * s;
    let mut out = Tensor::zeros(&[bn, cn, d, h, w]);
    let mut buf = vec![Complex::default(); s];
    let mut residue = 0.0f64;
    for p in 0..bn * cn {
        for (i, c) in buf.iter_mut().enumerate() {
            *c = Complex::new(z.data()[p * s + i], z.data()[half + p * s + i]);
        }
        plan.run(&mut buf, true);
        for (o, c) in out.data_mut()[p * s..(p + 1) * s].iter_mut().zip(&buf) {
            *o = c.re * scale;
            residue = residue.max((c.im * scale).abs().f64());
        }
    }
    (out, residue)
}

/// Spatial FFT of a real tensor, returned as a stacked spectrum.
pub fn fft3<T: Scalar>(tape: &Tape<T>, x: &Var<T>) -> Var<T> {
    let dims = spatial_dims(x.value());
    let plan = Fft3::new(dims);
    let out = forward_stacked(x.value(), &plan);
    tape.record(out, &[x], move |g, _| {
        // d/dx of (Re X, Im X) pulled back through the DFT is the real part of
        // the unnormalized inverse transform of (g_re + i g_im).
        let (gx, _) = inverse_real(g, &plan, T::one());
        vec![Some(gx)]
    })
}

/// Real part of the inverse spatial FFT of a stacked spectrum.
pub fn ifft3_real<T: Scalar>(tape: &Tape<T>, z: &Var<T>) -> Var<T> {
    let dims = spatial_dims(z.value());
    let plan = Fft3::new(dims);
    let n = T::of((dims[0] * dims[1] * dims[2]) as f64);
    let (out, _) = inverse_real(z.value(), &plan, T::one() / n);
    tape.record(out, &[z], move |g, _| {
        let mut gz = forward_stacked(g, &plan);
        gz.data_mut().iter_mut().for_each(|v| *v = *v / n);
        vec![Some(gz)]
    })
}

/// Largest |imaginary part| of the normalized inverse transform, i.e. how far
/// the spectrum is from Hermitian symmetry.
pub fn imag_residue<T: Scalar>(z: &Tensor<T>) -> f64 {
    let dims = spatial_dims(z);
    let plan = Fft3::new(dims);
    let n = T::of((dims[0] * dims[1] * dims[2]) as f64);
    inverse_real(z, &plan, T::one() / n).1
}
