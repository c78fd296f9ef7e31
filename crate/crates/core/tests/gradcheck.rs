mod common;

use std::rc::Rc;

use common::gradcheck::{block_checks, loss_checks, random_tensor, randomize, TOLERANCE};

const NET_STEP: f64 = 1e-6;
use defn_core::net::{Defn, NetConfig, Upsample};
use defn_core::nn::{Ctx, Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn every_block_matches_finite_differences() {
    for (name, err) in block_checks() {
        println!("{name}: {err:.3e}");
        assert!(err < TOLERANCE, "{name}: relative error {err}");
    }
}

#[test]
fn every_loss_term_matches_finite_differences() {
    for (name, err) in loss_checks() {
        println!("{name}: {err:.3e}");
        assert!(err < TOLERANCE, "{name}: relative error {err}");
    }
}

/// Whole network: the tape's directional derivative along random
/// directions in (input, parameter) space against a central difference.
/// Base width 4 keeps the channel layer norms away from the near-singular
/// two-channel case. The step is smaller than the per-block one because a
/// simultaneous move of ~40k coordinates by 1e-5 already crosses max-pool
/// switches and steep norm regions somewhere in a 32³ volume.
#[test]
fn whole_network_directional_derivative() {
    for upsample in [Upsample::Transposed, Upsample::Trilinear] {
        let cfg = NetConfig {
            base_channels: 4,
            fugh_groups: 2,
            se_ratio: 2,
            droppath_rate: 0.0,
            upsample,
            ..Default::default()
        };
        let net = Defn::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = net.init::<f64>(&mut rng);
        randomize(&mut params, &mut rng);
        let x = random_tensor(&[1, 1, 32, 32, 32], 0.0, 1.0, &mut rng);
        let probe = net.forward(&Ctx::inference(&Tape::new(), &params), &Var::constant(x.clone())).unwrap();
        let r = random_tensor(probe.shape(), -1.0, 1.0, &mut rng);
        let loss = |p: &defn_core::nn::ParamSet<f64>, x: &defn_core::nn::Tensor<f64>| -> f64 {
            let tape = Tape::new();
            let y = net.forward(&Ctx::inference(&tape, p), &Var::constant(x.clone())).unwrap();
            y.value().data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
        };

        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &params, true, false, ChaCha8Rng::seed_from_u64(0));
        let xv = tape.leaf(Rc::new(x.clone()));
        let y = net.forward(&ctx, &xv).unwrap();
        let mut grads = tape.backward(&y, r.clone());
        let gx = grads.take(&xv).unwrap();
        let gp = ctx.collect_grads(&mut grads);
        assert_eq!(gp.len(), params.len(), "every parameter receives a gradient");

        for trial in 0..2 {
            let dx = random_tensor(x.shape(), -1.0, 1.0, &mut rng);
            let mut analytic: f64 = gx.data().iter().zip(dx.data()).map(|(a, b)| a * b).sum();
            let mut plus = params.clone();
            let mut minus = params.clone();
            for (name, t) in params.iter() {
                let d = random_tensor(t.shape(), -1.0, 1.0, &mut rng);
                analytic += gp[name].data().iter().zip(d.data()).map(|(a, b)| a * b).sum::<f64>();
                let pp = plus.get_mut(name).unwrap();
                pp.data_mut().iter_mut().zip(d.data()).for_each(|(v, dv)| *v += NET_STEP * dv);
                let pm = minus.get_mut(name).unwrap();
                pm.data_mut().iter_mut().zip(d.data()).for_each(|(v, dv)| *v -= NET_STEP * dv);
            }
            let xp = x.zip_map(&dx, |a, b| a + NET_STEP * b);
            let xm = x.zip_map(&dx, |a, b| a - NET_STEP * b);
            let numeric = (loss(&plus, &xp) - loss(&minus, &xm)) / (2.0 * NET_STEP);
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
            println!("{upsample:?} direction {trial}: tape {analytic:.9e} numeric {numeric:.9e} rel {err:.2e}");
            assert!(err < TOLERANCE);
        }
    }
}
