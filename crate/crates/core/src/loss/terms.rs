use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{softmax_backward, softmax_backward_scaled, BoundaryConfig, DeepRankingConfig, DiceConfig, FocalConfig, LossBatch, LossTerm};
use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};

/// Mean over voxels of `-Σ_c t_c log p_c`.
pub fn ce_loss<T: Scalar>(b: &LossBatch<T>) -> Result<LossTerm<T>> {
    let n = b.voxels() as f64;
    let mut value = 0.0;
    for (&t, &l) in b.target().data().iter().zip(b.log_probs().data()) {
        if t != T::zero() {
            value -= (t * l).f64();
        }
    }
    let inv = T::of(1.0 / n);
    let grad = b.probs().zip_map(b.target(), |p, t| (p - t) * inv);
    Ok(LossTerm { value: value / n, grad })
}

/// Mean over voxels of `Σ_c -(1 - p_c)^γ · log p_c · t_c`.
pub fn focal_loss<T: Scalar>(b: &LossBatch<T>, cfg: &FocalConfig) -> Result<LossTerm<T>> {
    let gamma = cfg.gamma;
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(Error::InvalidArgument(format!("focal gamma {gamma}")));
    }
    let n = b.voxels() as f64;
    let mut value = 0.0;
    // h_c = t_c · p_c · d/dp[-(1-p)^γ ln p] at p = p_c
    let mut h = Tensor::zeros(b.logits().shape());
    for (((&t, &ls), &p), g) in b
        .target()
        .data()
        .iter()
        .zip(b.log_probs().data())
        .zip(b.probs().data())
        .zip(h.data_mut())
    {
        if t == T::zero() {
            continue;
        }
        let (ls, p, t) = (ls.f64(), p.f64(), t.f64());
        let q = 1.0 - p;
        let modulate = if gamma == 0.0 { 1.0 } else { q.powf(gamma) };
        value -= modulate * ls * t;
        let dmod_p = if gamma == 0.0 || q <= 0.0 {
            0.0
        } else {
            gamma * q.powf(gamma - 1.0) * p * ls
        };
        *g = T::of(t * (dmod_p - modulate) / n);
    }
    let grad = softmax_backward_scaled(b.probs(), &h);
    Ok(LossTerm { value: value / n, grad })
}

/// Per-axis in-bounds neighbor count of a centered window of radius `r`.
fn window_count(i: usize, n: usize, r: usize) -> usize {
    let lo = i.saturating_sub(r);
    let hi = (i + r).min(n - 1);
    hi - lo + 1
}

/// Sum over the in-bounds `(2r+1)³` window around every voxel of one plane.
fn box_sum<T: Scalar>(x: &[T], dims: [usize; 3], r: usize) -> Vec<T> {
    let mut cur = x.to_vec();
    let strides = [dims[1] * dims[2], dims[2], 1];
    for axis in 0..3 {
        let n = dims[axis];
        let st = strides[axis];
        let mut next = vec![T::zero(); cur.len()];
        for (idx, out) in next.iter_mut().enumerate() {
            let i = (idx / st) % n;
            let base = idx - i * st;
            let lo = i.saturating_sub(r);
            let hi = (i + r).min(n - 1);
            let mut acc = T::zero();
            for j in lo..=hi {
                acc += cur[base + j * st];
            }
            *out = acc;
        }
        cur = next;
    }
    cur
}

fn counts<T: Scalar>(dims: [usize; 3], r: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(dims.iter().product());
    for d in 0..dims[0] {
        for h in 0..dims[1] {
            for w in 0..dims[2] {
                let c = window_count(d, dims[0], r) * window_count(h, dims[1], r) * window_count(w, dims[2], r);
                out.push(T::of(c as f64));
            }
        }
    }
    out
}

/// Mean squared difference between the boundary responses `avgpool(x) - x` of
/// the probabilities and the target. Averaging uses in-bounds neighbors only.
pub fn boundary_loss<T: Scalar>(b: &LossBatch<T>, cfg: &BoundaryConfig) -> Result<LossTerm<T>> {
    if cfg.kernel % 2 == 0 {
        return Err(Error::InvalidArgument(format!("boundary kernel {} is even", cfg.kernel)));
    }
    let r = cfg.kernel / 2;
    let [bn, cn, d, h, w] = b.logits().dims5();
    let dims = [d, h, w];
    let s = d * h * w;
    let cnt: Vec<T> = counts(dims, r);
    let n = (bn * cn * s) as f64;
    let mut value = 0.0;
    let mut g_probs = Tensor::zeros(b.logits().shape());
    for bi in 0..bn {
        for c in 0..cn {
            let p = b.probs().plane(bi, c);
            let t = b.target().plane(bi, c);
            let diff: Vec<T> = p.iter().zip(t).map(|(&p, &t)| p - t).collect();
            // The response is linear, so B_I - B_T is the response of I - T.
            let pooled = box_sum(&diff, dims, r);
            let resp: Vec<T> = pooled
                .iter()
                .zip(&cnt)
                .zip(&diff)
                .map(|((&s, &k), &x)| s / k - x)
                .collect();
            value += resp.iter().map(|v| v.f64() * v.f64()).sum::<f64>();
            // Adjoint of (A - I): A^T u = box_sum(u / count), symmetric window.
            let scaled: Vec<T> = resp.iter().zip(&cnt).map(|(&v, &k)| v / k).collect();
            let back = box_sum(&scaled, dims, r);
            let k = T::of(2.0 / n);
            for ((g, &a), &v) in g_probs.plane_mut(bi, c).iter_mut().zip(&back).zip(&resp) {
                *g = k * (a - v);
            }
        }
    }
    let grad = softmax_backward(b.probs(), &g_probs);
    Ok(LossTerm { value: value / n, grad })
}

/// `1 - (2I_c + ε_n) / (P_c + T_c + ε_d)` per class, averaged over classes;
/// sums run over the whole batch.
pub fn dice_loss<T: Scalar>(b: &LossBatch<T>, cfg: &DiceConfig) -> Result<LossTerm<T>> {
    let [bn, cn, ..] = b.logits().dims5();
    let (en, ed) = (cfg.eps_numerator, cfg.eps_denominator);
    let mut value = 0.0;
    let mut g_probs = Tensor::zeros(b.logits().shape());
    for c in 0..cn {
        let (mut inter, mut psum, mut tsum) = (0.0, 0.0, 0.0);
        for bi in 0..bn {
            for (&p, &t) in b.probs().plane(bi, c).iter().zip(b.target().plane(bi, c)) {
                inter += (p * t).f64();
                psum += p.f64();
                tsum += t.f64();
            }
        }
        let num = 2.0 * inter + en;
        let den = psum + tsum + ed;
        value += 1.0 - num / den;
        let inv_c = 1.0 / cn as f64;
        for bi in 0..bn {
            let t = b.target().plane(bi, c).to_vec();
            for (g, &t) in g_probs.plane_mut(bi, c).iter_mut().zip(&t) {
                *g = T::of(-inv_c * (2.0 * t.f64() / den - num / (den * den)));
            }
        }
    }
    let grad = softmax_backward(b.probs(), &g_probs);
    Ok(LossTerm {
        value: value / cn as f64,
        grad,
    })
}

/// Voxel indices drawn for the ranking term, per foreground class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankingSamples {
    /// `(class, positive flat indices, negative flat indices)`; a flat index
    /// addresses `(b, voxel)` as `b·S + voxel`.
    pub classes: Vec<(usize, Vec<usize>, Vec<usize>)>,
}

fn class_members<T: Scalar>(b: &LossBatch<T>, c: usize) -> (Vec<usize>, Vec<usize>) {
    let [bn, ..] = b.logits().dims5();
    let s = b.logits().spatial();
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for bi in 0..bn {
        for (i, &t) in b.target().plane(bi, c).iter().enumerate() {
            if t == T::one() {
                pos.push(bi * s + i);
            } else {
                neg.push(bi * s + i);
            }
        }
    }
    (pos, neg)
}

impl RankingSamples {
    /// Uniform draws with replacement from the class's voxels (positives) and
    /// from all other voxels (negatives), for every present foreground class.
    pub fn draw<T: Scalar>(b: &LossBatch<T>, cfg: &DeepRankingConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut classes = Vec::new();
        for c in 1..b.classes() {
            let (pos, neg) = class_members(b, c);
            if pos.is_empty() {
                continue;
            }
            let p = (0..cfg.n_pos).map(|_| pos[rng.random_range(0..pos.len())]).collect();
            let n = if neg.is_empty() {
                Vec::new()
            } else {
                (0..cfg.n_neg).map(|_| neg[rng.random_range(0..neg.len())]).collect()
            };
            classes.push((c, p, n));
        }
        if classes.is_empty() {
            return Err(Error::NoForeground);
        }
        Ok(RankingSamples { classes })
    }
}

/// Ranking term with samples drawn from `cfg.seed`.
pub fn deep_ranking_loss<T: Scalar>(b: &LossBatch<T>, cfg: &DeepRankingConfig) -> Result<LossTerm<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let samples = RankingSamples::draw(b, cfg, &mut rng)?;
    deep_ranking_loss_with(b, cfg, &samples)
}

/// `max(0, m + Σ(p_i - μ)² - Σ(n_j - μ)²)` per class on the class
/// probability, with `μ` the mean probability over the class's voxels;
/// averaged over the sampled classes.
pub fn deep_ranking_loss_with<T: Scalar>(
    b: &LossBatch<T>,
    cfg: &DeepRankingConfig,
    samples: &RankingSamples,
) -> Result<LossTerm<T>> {
    if samples.classes.is_empty() {
        return Err(Error::NoForeground);
    }
    let s = b.logits().spatial();
    let cn = b.classes();
    let k = samples.classes.len() as f64;
    let prob = |c: usize, flat: usize| b.probs().plane(flat / s, c)[flat % s].f64();
    let mut value = 0.0;
    let mut g_probs = Tensor::zeros(b.logits().shape());
    for (c, pos, neg) in &samples.classes {
        let c = *c;
        if c >= cn {
            return Err(Error::InvalidArgument(format!("ranking class {c} outside {cn} classes")));
        }
        let (members, _) = class_members(b, c);
        if members.is_empty() {
            return Err(Error::InvalidArgument(format!("class {c} has no voxels")));
        }
        let mu = members.iter().map(|&i| prob(c, i)).sum::<f64>() / members.len() as f64;
        let sp: f64 = pos.iter().map(|&i| (prob(c, i) - mu).powi(2)).sum();
        let sn: f64 = neg.iter().map(|&i| (prob(c, i) - mu).powi(2)).sum();
        let term = cfg.margin + sp - sn;
        if term <= 0.0 {
            continue;
        }
        value += term;
        let mut add = |flat: usize, d: f64| {
            let g = &mut g_probs.plane_mut(flat / s, c)[flat % s];
            *g += T::of(d / k);
        };
        let mut dmu = 0.0;
        for &i in pos {
            let d = 2.0 * (prob(c, i) - mu);
            add(i, d);
            dmu -= d;
        }
        for &j in neg {
            let d = 2.0 * (prob(c, j) - mu);
            add(j, -d);
            dmu += d;
        }
        let share = dmu / members.len() as f64;
        for &i in &members {
            add(i, share);
        }
    }
    let grad = softmax_backward(b.probs(), &g_probs);
    Ok(LossTerm { value: value / k, grad })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(logits: Vec<f64>, labels: &[u8], shape: [usize; 5]) -> LossBatch<f64> {
        LossBatch::from_labels(Tensor::from_vec(&shape, logits), labels).unwrap()
    }

    #[test]
    fn uniform_two_class_ce_is_ln2() {
        let b = batch(vec![0.0, 0.0], &[0], [1, 2, 1, 1, 1]);
        assert!((ce_loss(&b).unwrap().value - 2f64.ln()).abs() < 1e-12);
        let b = batch(vec![0.0; 4], &[2], [1, 4, 1, 1, 1]);
        assert!((ce_loss(&b).unwrap().value - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn focal_hand_value() {
        let b = batch(vec![0.0, 0.0], &[0], [1, 2, 1, 1, 1]);
        let v = focal_loss(&b, &FocalConfig { gamma: 2.0 }).unwrap().value;
        assert!((v - 0.25 * 2f64.ln()).abs() < 1e-12);
        assert!((v - 0.1733).abs() < 1e-4);
    }

    #[test]
    fn confident_correct_prediction_has_no_loss() {
        let b = batch(vec![50.0, 0.0, 0.0, 50.0], &[0, 1], [1, 2, 2, 1, 1]);
        assert!(focal_loss(&b, &FocalConfig::default()).unwrap().value < 1e-6);
        assert!(ce_loss(&b).unwrap().value < 1e-6);
    }

    #[test]
    fn boundary_line_matches_hand_pooling() {
        // one class plane along a 3-voxel line: I = (1,0,0), T = (0,0,1)
        // in-bounds means: I -> (1/2, 1/3, 0), T -> (0, 1/3, 1/2)
        // B_I = (-1/2, 1/3, 0), B_T = (0, 1/3, -1/2)
        let big = 60.0;
        let logits = vec![big, 0.0, 0.0, 0.0, big, big];
        let b = batch(logits, &[1, 1, 0], [1, 2, 1, 1, 3]);
        let v = boundary_loss(&b, &BoundaryConfig::default()).unwrap().value;
        // class 0 plane (p ≈ (1,0,0), t = (0,0,1)) and class 1 plane mirror it
        let per_plane = 0.25 + 0.0 + 0.25;
        let expected = 2.0 * per_plane / 6.0;
        assert!((v - expected).abs() < 1e-9, "{v} vs {expected}");
    }

    #[test]
    fn boundary_is_zero_for_constant_fields() {
        let b = batch(vec![0.3; 2 * 27], &[1; 27], [1, 2, 3, 3, 3]);
        // target is constant (all class 1); probabilities are constant too
        assert!(boundary_loss(&b, &BoundaryConfig::default()).unwrap().value < 1e-24);
    }

    #[test]
    fn dice_half_coverage_closed_form() {
        // class 1 covers 4 of 8 voxels; p = 0.5 everywhere for both classes
        let labels = [1, 1, 1, 1, 0, 0, 0, 0];
        let b = batch(vec![0.0; 16], &labels, [1, 2, 2, 2, 2]);
        let cfg = DiceConfig::default();
        let v = dice_loss(&b, &cfg).unwrap().value;
        let term = 1.0 - (2.0 * 0.25 * 8.0 + 1e-5) / (0.5 * 8.0 + 0.5 * 8.0 + 1e-5);
        assert!((v - term).abs() < 1e-12);
    }

    #[test]
    fn ranking_hand_value() {
        // class 1 at 4 voxels, probabilities set through logits
        let p1 = [0.9, 0.8, 0.85, 0.85, 0.2, 0.1];
        let labels = [1, 1, 1, 1, 0, 0];
        let logits: Vec<f64> = p1
            .iter()
            .map(|_| 0.0)
            .chain(p1.iter().map(|&p: &f64| (p / (1.0 - p)).ln()))
            .collect();
        let b = batch(logits, &labels, [1, 2, 1, 1, 6]);
        let samples = RankingSamples {
            classes: vec![(1, vec![0, 1], vec![4, 5])],
        };
        let cfg = DeepRankingConfig {
            margin: 1.0,
            n_pos: 2,
            n_neg: 2,
            seed: 0,
        };
        let v = deep_ranking_loss_with(&b, &cfg, &samples).unwrap().value;
        assert!((v - 0.02).abs() < 1e-9, "{v}");
    }

    #[test]
    fn ranking_degenerate_equals_margin() {
        let b = batch(vec![0.0; 8], &[1, 1, 0, 0], [1, 2, 1, 2, 2]);
        let cfg = DeepRankingConfig {
            margin: 0.7,
            ..Default::default()
        };
        assert!((deep_ranking_loss(&b, &cfg).unwrap().value - 0.7).abs() < 1e-12);
    }

    #[test]
    fn ranking_needs_foreground() {
        let b = batch(vec![0.0; 4], &[0, 0], [1, 2, 1, 1, 2]);
        assert!(matches!(
            deep_ranking_loss(&b, &DeepRankingConfig::default()),
            Err(Error::NoForeground)
        ));
    }
}
