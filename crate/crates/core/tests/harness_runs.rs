use std::fs;
use std::sync::Arc;

use proptest::prelude::*;
use stat_core::checkpoint::{Checkpoint, OptimizerState, Stage};
use stat_core::config::{DataSource, ExperimentConfig, ManifestSource};
use stat_core::data::{
    generate_synthetic, write_dataset, SplitKind, SyntheticMode, SyntheticTaskSpec, TensorShape, DEFAULT_SAMPLE_RATE_HZ,
};
use stat_core::error::StatError;
use stat_core::harness::*;
use stat_core::metrics::EvalReport;
use stat_core::model::StatModel;
use stat_core::optim::{Adam, AdamConfig};
use stat_core::tokenizer::{TubeletConfig, TubeletGrid};
use tempfile::tempdir;

fn tiny_config(mode: SyntheticMode, classes: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig { seed: 3, ..Default::default() };
    c.data = DataSource::Synthetic(SyntheticTaskSpec {
        noise_std: 0.2,
        train_per_class: 4,
        validation_per_class: 2,
        test_per_class: 3,
        seed: 5,
        ..SyntheticTaskSpec::new(mode, classes, TensorShape::new(1, 10, 8, 8))
    });
    c.tubelet = TubeletConfig { frames: 5, patch: 4 };
    c.model.dim = 8;
    c.model.layers = 1;
    c.model.heads = 2;
    c.model.ff_dim = 16;
    c.pretrain.epochs = 3;
    c.pretrain.batch_size = 4;
    c.finetune.epochs = 4;
    c.finetune.batch_size = 4;
    c
}

fn read(path: &std::path::Path) -> Vec<u8> {
    fs::read(path).unwrap()
}

#[test]
fn pretrain_log_has_one_row_per_step() {
    let config = tiny_config(SyntheticMode::Mixed, 4);
    let dir = tempdir().unwrap();
    let ckpt = run_pretrain(&config, dir.path(), None).unwrap();
    assert_eq!(ckpt.epoch, 3);
    let log = fs::read_to_string(dir.path().join(PRETRAIN_LOG)).unwrap();
    let rows: Vec<&str> = log.lines().skip(1).collect();
    // 16 training samples, batches of 4.
    assert_eq!(rows.len(), 3 * 4);
    for (i, row) in rows.iter().enumerate() {
        let f: Vec<f64> = row.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(f[0] as usize, i / 4 + 1);
        assert_eq!(f[1] as usize, i + 1);
        assert!((f[4] - (f[2] + config.pretrain.beta * f[3])).abs() < 1e-9);
    }
    for e in 1..=3 {
        assert!(dir.path().join(pretrain_checkpoint_name(e)).exists());
    }
}

#[test]
fn disabled_pretraining_is_an_error() {
    let mut config = tiny_config(SyntheticMode::Mixed, 4);
    config.pretrain.enabled = false;
    let dir = tempdir().unwrap();
    let err = run_pretrain(&config, dir.path(), None).unwrap_err();
    assert!(matches!(err, StatError::PretrainingDisabled));
    assert_eq!(err.to_string(), "pretraining not enabled in config");
}

#[test]
fn same_config_and_seed_give_identical_bytes() {
    let config = tiny_config(SyntheticMode::Mixed, 4);
    let a = tempdir().unwrap();
    let b = tempdir().unwrap();
    let pa = run_pretrain(&config, a.path(), None).unwrap();
    let pb = run_pretrain(&config, b.path(), None).unwrap();
    for e in 1..=3 {
        let name = pretrain_checkpoint_name(e);
        assert_eq!(read(&a.path().join(&name)), read(&b.path().join(&name)));
    }
    assert_eq!(read(&a.path().join(PRETRAIN_LOG)), read(&b.path().join(PRETRAIN_LOG)));
    run_finetune(&config, a.path(), Some(&pa), None).unwrap();
    run_finetune(&config, b.path(), Some(&pb), None).unwrap();
    assert_eq!(read(&a.path().join(FINETUNE_BEST)), read(&b.path().join(FINETUNE_BEST)));
    assert_eq!(read(&a.path().join(FINETUNE_LOG)), read(&b.path().join(FINETUNE_LOG)));

    let mut other = config.clone();
    other.seed += 1;
    let c = tempdir().unwrap();
    run_pretrain(&other, c.path(), None).unwrap();
    assert_ne!(read(&a.path().join(pretrain_checkpoint_name(3))), read(&c.path().join(pretrain_checkpoint_name(3))));
}

#[test]
fn resumed_runs_match_uninterrupted_runs() {
    let mut config = tiny_config(SyntheticMode::Mixed, 4);
    config.model.dropout = 0.1;
    let exp = Experiment::new(config).unwrap();

    let full = tempdir().unwrap();
    let pre_full = exp.pretrain(full.path(), None).unwrap();
    let ft_full = exp.finetune(full.path(), Some(&pre_full), None).unwrap();

    let split = tempdir().unwrap();
    exp.pretrain_until(split.path(), None, 1).unwrap();
    let saved = Checkpoint::load(&split.path().join(pretrain_checkpoint_name(1))).unwrap();
    let pre_resumed = exp.pretrain(split.path(), Some(&saved)).unwrap();
    assert_eq!(pre_resumed.to_bytes(), pre_full.to_bytes());
    assert_eq!(read(&split.path().join(PRETRAIN_LOG)), read(&full.path().join(PRETRAIN_LOG)));

    exp.finetune_until(split.path(), Some(&pre_resumed), None, 2).unwrap();
    let saved = Checkpoint::load(&split.path().join(finetune_checkpoint_name(2))).unwrap();
    let ft_resumed = exp.finetune(split.path(), Some(&pre_resumed), Some(&saved)).unwrap();
    assert_eq!(ft_resumed.last.to_bytes(), ft_full.last.to_bytes());
    assert_eq!(ft_resumed.best.to_bytes(), ft_full.best.to_bytes());
    assert_eq!(ft_resumed.history, ft_full.history);
    assert_eq!(read(&split.path().join(FINETUNE_LOG)), read(&full.path().join(FINETUNE_LOG)));
    assert_eq!(read(&split.path().join(FINETUNE_BEST)), read(&full.path().join(FINETUNE_BEST)));
}

#[test]
fn best_epoch_has_the_logged_maximum() {
    let mut config = tiny_config(SyntheticMode::Mixed, 4);
    config.finetune.epochs = 8;
    let dir = tempdir().unwrap();
    let outcome = run_finetune(&config, dir.path(), None, None).unwrap();
    let log = fs::read_to_string(dir.path().join(FINETUNE_LOG)).unwrap();
    let accs: Vec<(u64, f64)> = log
        .lines()
        .skip(1)
        .map(|r| {
            let f: Vec<&str> = r.split(',').collect();
            (f[0].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect();
    assert_eq!(accs.len(), 8);
    let max = accs.iter().map(|a| a.1).fold(f64::MIN, f64::max);
    let first_at_max = accs.iter().find(|a| a.1 == max).unwrap().0;
    assert_eq!(outcome.best_epoch(), first_at_max);
    assert_eq!(Checkpoint::load(&dir.path().join(FINETUNE_BEST)).unwrap(), outcome.best);
    assert_eq!(outcome.best.metrics["val_acc1"], max);
}

#[test]
fn evaluation_is_repeatable_and_consistent() {
    let config = tiny_config(SyntheticMode::Mixed, 4);
    let dir = tempdir().unwrap();
    let outcome = run_finetune(&config, dir.path(), None, None).unwrap();
    let a = run_eval(&outcome.best, SplitKind::Test, &dir.path().join("a")).unwrap();
    let b = run_eval(&outcome.best, SplitKind::Test, &dir.path().join("b")).unwrap();
    assert_eq!(a, b);
    assert_eq!(read(&dir.path().join("a/eval_test.toml")), read(&dir.path().join("b/eval_test.toml")));
    let trace: u64 = (0..4).map(|i| a.confusion[i][i]).sum();
    assert_eq!(a.acc1, trace as f64 / a.samples as f64);
    assert_eq!(a.samples, 12);
    let text = fs::read_to_string(dir.path().join("a/eval_test.toml")).unwrap();
    assert_eq!(EvalReport::from_toml(&text).unwrap(), a);
    let grid = fs::read_to_string(dir.path().join("a/confusion_test.csv")).unwrap();
    assert_eq!(grid.lines().count(), 4);
}

/// A 3-class checkpoint whose predictions on a hand-picked test split are
/// (0, 1, 1, 2) against labels (0, 0, 1, 2).
#[test]
fn toy_checkpoint_reproduces_hand_computed_metrics() {
    let dir = tempdir().unwrap();
    let data_dir = dir.path().join("data");
    let shape = TensorShape::new(1, 10, 8, 8);
    let spec = SyntheticTaskSpec {
        noise_std: 1.0,
        train_per_class: 2,
        validation_per_class: 1,
        test_per_class: 20,
        seed: 9,
        ..SyntheticTaskSpec::new(SyntheticMode::SpatialPair, 3, shape)
    };
    let mut dataset = generate_synthetic(&spec).unwrap();
    // Round through f32 so predictions match the reloaded files exactly.
    for s in dataset.train.iter_mut().chain(dataset.validation.iter_mut()).chain(dataset.test.iter_mut()) {
        let v = s.tensor.values().mapv(|x| x as f32 as f64);
        s.tensor = stat_core::data::TactileTensor::new(v, DEFAULT_SAMPLE_RATE_HZ).unwrap();
    }

    let mut config = tiny_config(SyntheticMode::SpatialPair, 3);
    config.data = DataSource::Manifest(ManifestSource {
        manifest: data_dir.join("manifest.csv"),
        root: None,
        shape,
        class_names: dataset.class_names.clone(),
        train_per_class: None,
        sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
    });
    let mut model = StatModel::new(config.model_config()).unwrap();
    let grid = TubeletGrid::new(shape, config.tubelet).unwrap();
    let prepared = PreparedData::from_dataset(&dataset, &grid, None).unwrap();

    // Center the classifier so every class wins on some candidate.
    let w = model.classifier.weight;
    model.params.get_mut(w).mapv_inplace(|v| v * 50.0);
    let log_probs = |model: &StatModel| -> Vec<Vec<f64>> {
        prepared.test.tokens.iter().map(|t| model.predict(t).unwrap().iter().map(|p| p.ln()).collect()).collect()
    };
    let lp = log_probs(&model);
    let b = model.classifier.bias;
    for c in 0..3 {
        let mean = lp.iter().map(|r| r[c]).sum::<f64>() / lp.len() as f64;
        model.params.get_mut(b)[[0, c]] -= mean;
    }
    let predicted: Vec<usize> =
        log_probs(&model).iter().map(|r| (0..3).max_by(|&i, &j| r[i].total_cmp(&r[j])).unwrap()).collect();
    let pick =
        |class: usize, skip: usize| predicted.iter().enumerate().filter(|(_, &p)| p == class).nth(skip).unwrap().0;
    let chosen = [(pick(0, 0), 0), (pick(1, 0), 0), (pick(1, 1), 1), (pick(2, 0), 2)];
    dataset.test = chosen
        .iter()
        .map(|&(i, label)| {
            let mut s = dataset.test[i].clone();
            s.label = label;
            s
        })
        .collect();
    write_dataset(&data_dir, &dataset).unwrap();

    let exp = Experiment::new(config.clone()).unwrap();
    let ckpt = Checkpoint {
        stage: Stage::Finetune,
        epoch: 1,
        seed: config.seed,
        config_toml: config.to_toml(),
        metrics: Default::default(),
        params: model.params.clone(),
        optimizer: OptimizerState::from_adam(&Adam::new(AdamConfig::new(1e-3, 0.0), &model.params)),
    };
    let path = dir.path().join("toy.ckpt");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let report = exp.evaluate(&loaded, SplitKind::Test).unwrap();
    assert_eq!(report.confusion, vec![vec![1, 1, 0], vec![0, 1, 0], vec![0, 0, 1]]);
    assert_eq!(report.acc1, 0.75);
    assert_eq!(report.acc3, 1.0);
    assert!((report.macro_f1 - 7.0 / 9.0).abs() < 1e-12);
    assert_eq!(run_eval(&loaded, SplitKind::Test, &dir.path().join("eval")).unwrap(), report);
}

#[test]
fn corrupt_and_mismatched_checkpoints_are_rejected() {
    let config = tiny_config(SyntheticMode::Mixed, 4);
    let dir = tempdir().unwrap();
    run_pretrain(&config, dir.path(), None).unwrap();
    let path = dir.path().join(pretrain_checkpoint_name(1));
    let mut bytes = read(&path);
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    assert!(matches!(Checkpoint::from_bytes(&bytes), Err(StatError::CorruptCheckpoint(_))));
    assert!(matches!(Checkpoint::from_bytes(&bytes[..20]), Err(StatError::CorruptCheckpoint(_))));
    assert!(matches!(Checkpoint::load(&dir.path().join("absent.ckpt")), Err(StatError::MissingFile(_))));

    let good = Checkpoint::load(&path).unwrap();
    let mut wider = config.clone();
    wider.model.dim = 16;
    let exp = Experiment::new(wider).unwrap();
    assert!(matches!(exp.evaluate(&good, SplitKind::Test), Err(StatError::ArchitectureMismatch(_))));
    let mut model = exp.build_model().unwrap();
    assert!(matches!(load_backbone(&mut model, &good), Err(StatError::ArchitectureMismatch(_))));
    // A pretraining checkpoint cannot resume fine-tuning.
    let exp = Experiment::new(config).unwrap();
    assert!(exp.finetune(dir.path(), None, Some(&good)).is_err());
}

#[test]
fn backbone_transfer_keeps_the_fresh_classifier() {
    let config = tiny_config(SyntheticMode::Mixed, 4);
    let dir = tempdir().unwrap();
    let pre = run_pretrain(&config, dir.path(), None).unwrap();
    let exp = Experiment::new(config).unwrap();
    let fresh = exp.build_model().unwrap();
    let mut model = exp.build_model().unwrap();
    load_backbone(&mut model, &pre).unwrap();
    for (id, name, value) in model.params.iter() {
        let source = if name.starts_with("head.classifier.") {
            fresh.params.get(id)
        } else {
            pre.params.get(pre.params.id(name).unwrap())
        };
        assert_eq!(value, source, "{name}");
    }
}

#[test]
fn labeled_subset_is_stratified() {
    let mut config = tiny_config(SyntheticMode::Mixed, 4);
    config.finetune.labeled_samples = Some(8);
    let exp = Experiment::new(config).unwrap();
    let idx = exp.labeled_indices();
    assert_eq!(idx.len(), 8);
    let mut counts = [0; 4];
    for &i in &idx {
        counts[exp.data.train.labels[i]] += 1;
    }
    assert_eq!(counts, [2; 4]);
    assert_eq!(exp.labeled_indices(), idx);
}

#[test]
fn ablation_table_has_five_rows_on_shared_data() {
    let mut config = tiny_config(SyntheticMode::Mixed, 4);
    config.pretrain.epochs = 1;
    config.finetune.epochs = 1;
    let dir = tempdir().unwrap();
    let table = run_ablation_suite(&config, dir.path()).unwrap();
    let ids: Vec<u8> = table.rows.iter().map(|r| r.strategy).collect();
    assert_eq!(ids, vec![1, 2, 3, 4, 5]);
    let data = PreparedData::load(&config).unwrap();
    assert!(table.rows.iter().all(|r| r.fingerprint == data.fingerprint));
    let r = table.row(4).unwrap();
    assert!(!r.use_temporal && !r.use_spatial && r.temporal_task);
    let csv = fs::read_to_string(dir.path().join(ABLATION_TABLE)).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert_eq!(csv, table.to_csv());
    for id in 1..=5 {
        assert!(dir.path().join(format!("strategy_{id}")).join("eval_test.toml").exists());
    }

    // Reusing prepared data gives the same table.
    let again = run_ablation_with_data(&config, Arc::new(data), &dir.path().join("again")).unwrap();
    assert_eq!(again, table);
}

#[test]
fn ablation_needs_synthetic_data() {
    let mut config = tiny_config(SyntheticMode::Mixed, 4);
    config.data = DataSource::Manifest(ManifestSource {
        manifest: "nowhere.csv".into(),
        root: None,
        shape: TensorShape::new(1, 10, 8, 8),
        class_names: vec!["a".into(), "b".into()],
        train_per_class: None,
        sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
    });
    assert!(matches!(run_ablation_suite(&config, tempdir().unwrap().path()), Err(StatError::Config { .. })));
}

#[test]
fn gradcheck_and_synth_write_files() {
    let config = tiny_config(SyntheticMode::Mixed, 4);
    let dir = tempdir().unwrap();
    let suite = run_gradcheck(&config, dir.path(), stat_core::gradcheck::GradCheckOptions::default()).unwrap();
    assert!(suite.passed(), "{}\n{}", suite.pretrain, suite.finetune);
    assert!(dir.path().join("gradcheck_pretrain.csv").exists());
    let manifest = run_synth(&config, &dir.path().join("synth")).unwrap();
    assert_eq!(manifest.records.len(), 4 * (4 + 2 + 3));
    assert!(dir.path().join("synth/manifest.csv").exists());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_round_trips(
        seed in any::<u32>(),
        dim in 1usize..16,
        layers in 1usize..4,
        ratio in 0.05f64..0.95,
        beta in 0.0f64..4.0,
        lr in 1e-5f64..1e-1,
        toggles in any::<(bool, bool, bool, bool)>(),
        labeled in prop::option::of(1usize..500),
    ) {
        let mut c = ExperimentConfig { seed: seed as u64, ..Default::default() };
        c.model.dim = 2 * dim;
        c.model.layers = layers;
        c.model.use_spatial = toggles.0;
        c.model.use_temporal = toggles.1;
        c.pretrain.enabled = toggles.2;
        c.pretrain.temporal_task = toggles.3;
        c.pretrain.mask_ratio = ratio;
        c.pretrain.beta = beta;
        c.finetune.lr = lr;
        c.finetune.labeled_samples = labeled;
        let text = c.to_toml();
        let back = ExperimentConfig::parse(&text).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.to_toml(), text);
    }
}
