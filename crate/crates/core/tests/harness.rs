mod common;

use common::{synthetic_case, synthetic_cases};
use defn_core::harness::{
    aggregate, evaluate, predict_labels, run, schedule_tau, Case, Checkpoint, InferenceMode, Phase, Predictor, RunConfig,
    RunFiles, Trainer, LOG_HEADER,
};
use defn_core::metrics::{evaluate_case, ClassRow, MetricsOptions};
use defn_core::net::{argmax_classes, defn_forward, NetConfig};
use defn_core::nn::{ParamSet, Tensor};
use defn_core::Error;

fn small_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig {
        seed,
        model: NetConfig {
            base_channels: 4,
            fugh_groups: 2,
            se_ratio: 2,
            ..Default::default()
        },
        ..Default::default()
    };
    cfg.train.input_size = [32; 3];
    cfg.train.batch_size = 1;
    cfg.optim.lr = 1e-3;
    cfg
}

fn bits(p: &ParamSet<f32>) -> Vec<(String, Vec<u32>)> {
    p.iter()
        .map(|(k, t)| (k.to_string(), t.data().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

#[test]
fn one_step_run_writes_log_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(small_config(1), Phase::Pretrain, synthetic_cases(2, 32, 0), 1).unwrap();
    let files = RunFiles::new(dir.path(), Phase::Pretrain);
    let rows = run(&mut t, &files).unwrap();
    assert_eq!(rows.len(), 1);
    let log = std::fs::read_to_string(&files.log).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines, vec![LOG_HEADER, rows[0].csv().as_str()]);
    assert_eq!(lines[1].split(',').count(), LOG_HEADER.split(',').count());
    let ck = Checkpoint::load(&files.last_checkpoint).unwrap();
    assert_eq!(ck.step, 1);
    assert_eq!(bits(&ck.params), bits(&t.params));
}

#[test]
fn training_is_deterministic_and_resumable() {
    let mut cfg = small_config(9);
    cfg.augment.sdi_probability = 0.5;
    cfg.sdi.target_slices = 32;
    cfg.sdi.base_radius = 4.0;
    let cases = || synthetic_cases(3, 32, 20);

    let mut a = Trainer::new(cfg.clone(), Phase::Pretrain, cases(), 3).unwrap();
    let rows_a: Vec<_> = (0..3).map(|_| a.step_once().unwrap()).collect();

    let mut b = Trainer::new(cfg.clone(), Phase::Pretrain, cases(), 3).unwrap();
    let first = b.step_once().unwrap();
    assert_eq!(first.csv(), rows_a[0].csv());
    let bytes = b.checkpoint().to_bytes();
    drop(b);
    let mut c = Trainer::resume(Checkpoint::from_bytes(&bytes).unwrap(), cases()).unwrap();
    assert_eq!(c.step, 1);
    let rest: Vec<_> = (0..2).map(|_| c.step_once().unwrap()).collect();
    assert!(c.is_done());
    for (x, y) in rows_a[1..].iter().zip(&rest) {
        assert_eq!(x.csv(), y.csv());
    }
    assert_eq!(bits(&a.params), bits(&c.params));
    assert_eq!(a.optimizer.step, c.optimizer.step);
}

#[test]
fn tau_increases_to_one() {
    for total in [1u64, 2, 7, 100] {
        let taus: Vec<f64> = (0..total).map(|s| schedule_tau(s, total)).collect();
        assert!(taus.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(*taus.last().unwrap(), 1.0);
        assert!(taus.iter().all(|t| (0.0..=1.0).contains(t)));
    }
}

#[test]
fn zero_weights_predict_background() {
    let cfg = small_config(0);
    let t = Trainer::new(cfg.clone(), Phase::Pretrain, synthetic_cases(1, 32, 0), 1).unwrap();
    let mut zero = t.params.clone();
    zero.map_all(|_, p| p.data_mut().iter_mut().for_each(|v| *v = 0.0));
    let image = synthetic_case(40, 3).image().clone();
    for mode in [InferenceMode::Resample, InferenceMode::Tile] {
        let pred = predict_labels(&t.net, &zero, &image, [32; 3], mode).unwrap();
        assert_eq!(pred.dims(), image.dims());
        assert!(pred.data().iter().all(|&l| l == 0));
    }
}

#[test]
fn prediction_at_input_size_is_plain_argmax() {
    let cfg = small_config(2);
    let t = Trainer::new(cfg, Phase::Pretrain, synthetic_cases(1, 32, 0), 1).unwrap();
    let v = synthetic_case(32, 4);
    let x = Tensor::from_vec(&[1, 1, 32, 32, 32], v.image().data().to_vec());
    let want = argmax_classes(&defn_forward(&t.net, &t.params, &x).unwrap(), 0);
    for mode in [InferenceMode::Resample, InferenceMode::Tile] {
        let got = predict_labels(&t.net, &t.params, v.image(), [32; 3], mode).unwrap();
        assert_eq!(got.data(), &want[..]);
    }
}

fn mean_of(rows: &[&ClassRow], f: impl Fn(&ClassRow) -> Option<f64>) -> Option<f64> {
    let v: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

#[test]
fn aggregate_averages_defined_cells() {
    let opts = MetricsOptions::default();
    let truth = synthetic_case(32, 1);
    let mut reports = Vec::new();
    for seed in 2..6 {
        let other = synthetic_case(32, seed);
        // drop the edema class from some predictions so cells go undefined
        let mut pred = other.labels().clone();
        if seed % 2 == 0 {
            pred.data_mut().iter_mut().filter(|l| **l == 3).for_each(|l| *l = 1);
        }
        reports.push(evaluate_case(&format!("c{seed}"), &pred, truth.labels(), truth.spacing(), &opts).unwrap());
    }
    let agg = aggregate(&reports).unwrap();
    assert_eq!(agg.case, "ALL");
    let getters: [fn(&ClassRow) -> Option<f64>; 6] = [
        |r| r.miou_pct,
        |r| r.dice_pct,
        |r| r.assd_mm,
        |r| r.hd_mm,
        |r| r.hd95_mm,
        |r| r.adj_rand,
    ];
    for i in 0..=agg.rows.len() {
        let (got, col): (&ClassRow, Vec<&ClassRow>) = if i < agg.rows.len() {
            (&agg.rows[i], reports.iter().map(|r| &r.rows[i]).collect())
        } else {
            (&agg.mean, reports.iter().map(|r| &r.mean).collect())
        };
        for g in getters {
            match (g(got), mean_of(&col, g)) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12),
                (a, b) => assert_eq!(a, b),
            }
        }
    }
}

#[test]
fn oracle_evaluation_is_perfect_and_empty_set_fails() {
    let cases = synthetic_cases(2, 32, 30);
    let e = evaluate(&Predictor::Oracle, &cases, &MetricsOptions::default()).unwrap();
    assert_eq!(e.aggregate.mean.dice_pct, Some(100.0));
    assert_eq!(e.aggregate.mean.hd_mm, Some(0.0));
    let empty: Vec<Case> = Vec::new();
    let err = evaluate(&Predictor::Oracle, &empty, &MetricsOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Dataset(_)));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn bad_inputs_are_reported() {
    let cfg = small_config(0);
    assert!(matches!(
        Trainer::new(cfg.clone(), Phase::Pretrain, Vec::new(), 1),
        Err(Error::Dataset(_))
    ));
    assert!(matches!(
        Trainer::new(cfg.clone(), Phase::Pretrain, synthetic_cases(1, 48, 0), 1),
        Err(Error::Shape(_))
    ));
    let mut bad = cfg.clone();
    bad.train.input_size = [24; 3];
    assert_eq!(
        Trainer::new(bad, Phase::Pretrain, synthetic_cases(1, 24, 0), 1).err().unwrap().exit_code(),
        2
    );

    // pre-trained weights for a different model
    let t = Trainer::new(cfg.clone(), Phase::Pretrain, synthetic_cases(1, 32, 0), 1).unwrap();
    let mut other = cfg.clone();
    other.model.base_channels = 8;
    let err = Trainer::from_pretrained(other, synthetic_cases(1, 32, 0), 1, &t.checkpoint()).err().unwrap();
    assert!(matches!(err, Error::Checkpoint(_)));

    // non-finite weights stop training with a numeric failure
    let mut t = Trainer::new(cfg, Phase::Pretrain, synthetic_cases(1, 32, 0), 2).unwrap();
    let name = t.params.names().next().unwrap().to_string();
    t.params.get_mut(&name).unwrap().data_mut()[0] = f32::NAN;
    let err = t.step_once().unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)));
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn config_round_trips_through_toml() {
    let mut cfg = small_config(17);
    cfg.train.max_steps = Some(12);
    cfg.inference = InferenceMode::Tile;
    let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(back, cfg);
    assert!(RunConfig::from_toml("unknown_key = 1").is_err());
}
