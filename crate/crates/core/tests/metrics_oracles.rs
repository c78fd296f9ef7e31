mod common;

use common::oracles::{ari_by_pairs, overlap, random_labels, random_spacing, surface_metrics};
use defn_core::metrics::{adj_rand, assd, dice_coef, hausdorff, miou, AssdMode, MetricsInput};
use defn_core::volume_io::Spacing;
use defn_core::Grid3;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const CLASSES: [u8; 4] = [0, 1, 2, 3];

fn pair(seed: u64) -> (Grid3<u8>, Grid3<u8>, Spacing) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random_labels(&mut rng, [8, 8, 8], 4);
    let b = random_labels(&mut rng, [8, 8, 8], 4);
    (a, b, random_spacing(&mut rng))
}

#[test]
fn overlap_matches_counts() {
    for seed in 0..200 {
        let (p, t, sp) = pair(seed);
        let m = MetricsInput::new(&p, &t, sp, &CLASSES).unwrap();
        let iou = miou(&m).unwrap();
        let dsc = dice_coef(&m).unwrap();
        for (k, &c) in CLASSES.iter().enumerate() {
            let (inter, union, total) = overlap(&p, &t, c);
            if union == 0 {
                assert_eq!(iou.values[k], None);
                continue;
            }
            let want_iou = inter as f64 / union as f64 * 100.0;
            let want_dice = 2.0 * inter as f64 / total as f64 * 100.0;
            assert!((iou.values[k].unwrap() - want_iou).abs() <= 1e-12, "seed {seed}");
            assert!((dsc.values[k].unwrap() - want_dice).abs() <= 1e-12, "seed {seed}");
            assert!(iou.values[k].unwrap() <= dsc.values[k].unwrap());
        }
        assert!(iou.mean.unwrap() <= dsc.mean.unwrap());
    }
}

#[test]
fn surface_distances_match_all_pairs() {
    for seed in 0..200 {
        let (p, t, sp) = pair(seed);
        let m = MetricsInput::new(&p, &t, sp, &CLASSES).unwrap();
        let a = assd(&m, AssdMode::SymmetricAverage);
        let hd = hausdorff(&m, 100.0).unwrap();
        let hd95 = hausdorff(&m, 95.0).unwrap();
        for (k, &c) in CLASSES.iter().enumerate() {
            match surface_metrics(&p, &t, c, sp) {
                None => {
                    assert_eq!(a.values[k], None);
                    assert_eq!(hd.values[k], None);
                }
                Some((want_assd, want_hd, want_hd95)) => {
                    assert!((a.values[k].unwrap() - want_assd).abs() <= 1e-9, "seed {seed} class {c}");
                    assert!((hd.values[k].unwrap() - want_hd).abs() <= 1e-9, "seed {seed} class {c}");
                    assert!((hd95.values[k].unwrap() - want_hd95).abs() <= 1e-9, "seed {seed} class {c}");
                    assert!(hd95.values[k].unwrap() <= hd.values[k].unwrap());
                }
            }
        }
    }
}

#[test]
fn ari_matches_pair_counting() {
    for seed in 0..200 {
        let (p, t, sp) = pair(seed);
        let m = MetricsInput::new(&p, &t, sp, &CLASSES).unwrap();
        let want = ari_by_pairs(p.data(), t.data());
        assert!((adj_rand(&m).unwrap() - want).abs() <= 1e-12, "seed {seed}");
    }
}

#[test]
fn ari_degenerate_partitions() {
    let one = Grid3::filled([2, 2, 2], 1u8);
    let m = MetricsInput::new(&one, &one, Spacing::isotropic(1.0).unwrap(), &[1]).unwrap();
    assert_eq!(adj_rand(&m).unwrap(), 0.0);
    assert_eq!(ari_by_pairs(one.data(), one.data()), 0.0);
}

fn small_grid() -> impl Strategy<Value = Grid3<u8>> {
    proptest::collection::vec(0u8..4, 4 * 5 * 3).prop_map(|v| Grid3::from_vec([4, 5, 3], v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_are_symmetric(p in small_grid(), t in small_grid()) {
        let sp = Spacing::new(0.3, 0.1, 0.2).unwrap();
        let ab = MetricsInput::new(&p, &t, sp, &CLASSES).unwrap();
        let ba = MetricsInput::new(&t, &p, sp, &CLASSES).unwrap();
        prop_assert_eq!(dice_coef(&ab).unwrap(), dice_coef(&ba).unwrap());
        prop_assert_eq!(hausdorff(&ab, 100.0).unwrap(), hausdorff(&ba, 100.0).unwrap());
        let (x, y) = (assd(&ab, AssdMode::SymmetricAverage), assd(&ba, AssdMode::SymmetricAverage));
        for (u, v) in x.values.iter().zip(&y.values) {
            match (u, v) {
                (Some(u), Some(v)) => prop_assert!((u - v).abs() < 1e-12),
                _ => prop_assert_eq!(u, v),
            }
        }
        prop_assert!((adj_rand(&ab).unwrap() - adj_rand(&ba).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn identical_grids_score_perfectly(p in small_grid()) {
        let sp = Spacing::new(0.3, 0.1, 0.2).unwrap();
        let m = MetricsInput::new(&p, &p, sp, &CLASSES).unwrap();
        for v in dice_coef(&m).unwrap().values.iter().flatten() {
            prop_assert_eq!(*v, 100.0);
        }
        for v in hausdorff(&m, 100.0).unwrap().values.iter().flatten() {
            prop_assert_eq!(*v, 0.0);
        }
        let distinct = CLASSES.iter().filter(|&&c| p.data().contains(&c)).count();
        if distinct > 1 {
            prop_assert!((adj_rand(&m).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn robust_hausdorff_is_monotone(p in small_grid(), t in small_grid(), q in 0.0f64..100.0) {
        let sp = Spacing::new(0.3, 0.1, 0.2).unwrap();
        let m = MetricsInput::new(&p, &t, sp, &CLASSES).unwrap();
        let lo = hausdorff(&m, q).unwrap();
        let hi = hausdorff(&m, 100.0).unwrap();
        for (a, b) in lo.values.iter().zip(&hi.values) {
            if let (Some(a), Some(b)) = (a, b) {
                prop_assert!(a <= b);
            }
        }
    }
}
