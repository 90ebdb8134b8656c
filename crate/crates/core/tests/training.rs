use std::fs;

use apll_core::harness::{self, prepare_data, top1_accuracy, ExperimentConfig, Trainer};
use apll_core::nn::{Architecture, KeyEncoder, NetworkParams};
use apll_core::GenerationMode;

fn separable(dir: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        classes: 3,
        dim: 4,
        separation: 6.0,
        train_size: 600,
        test_size: 300,
        mode: GenerationMode::Standard,
        q: 0.0,
        perturbation: 0.0,
        use_transition: false,
        encoder_widths: vec![16],
        projection_hidden: 8,
        embedding_dim: 8,
        noise_std: 0.0,
        mask_prob: 0.0,
        lambda: 0.0,
        batch_size: 32,
        lr: 0.05,
        epochs: 30,
        warmup_epochs: Some(30),
        output_dir: dir.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

#[test]
fn clean_singletons_reduce_to_cross_entropy_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = separable(dir.path());
    let data = prepare_data(&cfg).unwrap();
    assert!(data.train.candidates().iter().all(|s| s.len() == 1));
    let train = data.train.clean().clone();
    let outcome = Trainer::new(&cfg, data).unwrap().train(None).unwrap();
    assert!(outcome.rows.iter().all(|r| r.con_loss == 0.0));
    let acc = top1_accuracy(&outcome.checkpoint.params, &train).unwrap();
    assert!(acc >= 0.99, "train accuracy {acc}");
}

#[test]
fn untrained_network_is_at_chance() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = separable(dir.path());
    cfg.classes = 5;
    cfg.dim = 5;
    cfg.test_size = 4000;
    let data = prepare_data(&cfg).unwrap();
    let net = NetworkParams::init(&cfg.architecture(5), 3).unwrap();
    let acc = top1_accuracy(&net, &data.test).unwrap();
    let p = 0.2;
    let sigma = (p * (1.0 - p) / 4000.0f64).sqrt();
    // a random function of the features is only independent of the label in
    // distribution, so allow the per-class skew of one untrained draw
    assert!((acc - p).abs() <= 3.0 * sigma + 0.05, "accuracy {acc}");
}

#[test]
fn ema_key_encoder_approaches_a_frozen_query_geometrically() {
    let arch = Architecture::new(4, 3);
    let query = NetworkParams::init(&arch, 1).unwrap();
    let mut key = KeyEncoder::from_query(&NetworkParams::init(&arch, 2).unwrap());
    let gap = |k: &KeyEncoder| {
        k.params
            .tensors()
            .iter()
            .zip(query.tensors())
            .map(|(a, b)| (a - b).mapv(|v| v * v).sum())
            .sum::<f64>()
            .sqrt()
    };
    let start = gap(&key);
    let m = 0.9;
    for t in 1..=50 {
        key.ema_update(&query, m).unwrap();
        assert!((gap(&key) - start * m.powi(t)).abs() <= 1e-12 * start.max(1.0));
    }
}

#[test]
fn evaluation_reproduces_the_final_metrics_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        classes: 4,
        dim: 4,
        train_size: 300,
        test_size: 200,
        q: 0.3,
        rival_support: 2,
        rival_weight: 0.5,
        encoder_widths: vec![16],
        projection_hidden: 8,
        embedding_dim: 8,
        batch_size: 32,
        lr: 0.05,
        epochs: 6,
        output_dir: dir.path().to_path_buf(),
        ..ExperimentConfig::default()
    };
    harness::cmd_generate(&cfg).unwrap();
    let outcome = harness::cmd_train(&cfg).unwrap();
    let last = *outcome.rows.last().unwrap();
    let ck = dir.path().join(harness::CHECKPOINT);

    let on_train = harness::cmd_eval(&ck, &dir.path().join(harness::TRAIN_PLL)).unwrap();
    assert_eq!(on_train.prototype_acc, Some(last.prototype_acc));
    let on_test = harness::cmd_eval(&ck, &dir.path().join(harness::TEST_CLEAN)).unwrap();
    assert_eq!(on_test.top1, last.test_acc);
    assert_eq!(on_test.prototype_acc, None);

    let metrics = fs::read_to_string(dir.path().join(harness::METRICS)).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next().unwrap(), harness::MetricsRow::HEADER);
    assert_eq!(lines.count(), cfg.epochs);
    for row in &outcome.rows {
        assert!((0.0..=1.0).contains(&row.test_acc) && (0.0..=1.0).contains(&row.prototype_acc));
    }
    let timing = fs::read_to_string(dir.path().join(harness::TIMING)).unwrap();
    assert_eq!(timing.lines().count(), cfg.epochs + 1);
}

#[test]
fn warm_up_freezes_the_queue_and_drops_the_contrastive_term() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = separable(dir.path());
    cfg.q = 0.3;
    cfg.lambda = 0.5;
    cfg.epochs = 5;
    cfg.warmup_epochs = Some(3);
    let outcome = Trainer::new(&cfg, prepare_data(&cfg).unwrap()).unwrap().train(None).unwrap();
    for row in &outcome.rows {
        if row.epoch < 3 {
            assert_eq!(row.con_loss, 0.0);
            assert_eq!(row.combined, row.cls_loss);
        } else {
            assert!(row.con_loss > 0.0);
        }
    }
}

#[test]
fn standard_zero_rate_output_is_clean_data_with_singletons() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = separable(dir.path());
    harness::cmd_generate(&cfg).unwrap();
    let pll = fs::read_to_string(dir.path().join(harness::TRAIN_PLL)).unwrap();
    let clean = fs::read_to_string(dir.path().join(harness::TRAIN_CLEAN)).unwrap();
    for (p, c) in pll.lines().skip(1).zip(clean.lines().skip(1)) {
        let pf: Vec<&str> = p.split(',').collect();
        let cf: Vec<&str> = c.split(',').collect();
        let label: usize = pf[1].parse().unwrap();
        assert_eq!(pf[2], "-1");
        assert_eq!(u64::from_str_radix(pf[3], 16).unwrap(), 1 << label);
        assert_eq!(&pf[4..], &cf[cf.len() - cfg.dim..]);
    }
}
