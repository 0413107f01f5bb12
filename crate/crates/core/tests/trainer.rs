use scd_autograd::Tensor;
use scd_core::datamodel::{synth_samples, Sample, SynthConfig};
use scd_core::losses::LossWeights;
use scd_core::metrics::SelectionMetric;
use scd_core::network::{Model, ModelConfig};
use scd_core::trainer::{
    evaluate, fit, train_step, FitOutput, GroundTruthPredictor, ModelPredictor, RunLog, Sgd,
    TrainConfig,
};
use scd_core::Error;

fn tiny() -> ModelConfig {
    let mut cfg = ModelConfig::small(3);
    cfg.encoder.stage_channels = vec![8, 8, 16, 16, 32];
    cfg.encoder.stage_blocks = vec![1, 1, 1, 1];
    cfg.decoder.channels = vec![16, 16, 8];
    cfg.cbam.reduction = 4;
    cfg.interaction.heads = 2;
    cfg
}

fn data(n: usize, seed: u64) -> Vec<Sample> {
    let cfg = SynthConfig {
        n_samples: n,
        ..SynthConfig::default()
    };
    synth_samples(&cfg, seed).unwrap().0
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        total_epochs: epochs,
        batch_size: 2,
        ..TrainConfig::default()
    }
}

#[test]
fn same_seed_gives_identical_run_logs_and_weights() {
    let (train, eval) = (data(4, 1), data(2, 2));
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut logs = Vec::new();
    let mut models = Vec::new();
    for d in &dirs {
        let mut model = Model::new(tiny()).unwrap();
        let out = FitOutput {
            dir: d.path(),
            palette: None,
        };
        logs.push(
            fit(
                &mut model,
                &train,
                &eval,
                &quick(2),
                &LossWeights::default(),
                Some(out),
                None,
            )
            .unwrap(),
        );
        models.push(model);
    }
    assert_eq!(logs[0], logs[1]);
    let bytes = |i: usize, f: &str| std::fs::read(dirs[i].path().join(f)).unwrap();
    assert_eq!(bytes(0, "runlog.jsonl"), bytes(1, "runlog.jsonl"));
    assert_eq!(bytes(0, "final.ckpt"), bytes(1, "final.ckpt"));
    for ((_, p), (_, q)) in models[0].store.iter().zip(models[1].store.iter()) {
        assert!(p
            .value
            .data()
            .iter()
            .zip(q.value.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }
    assert_eq!(
        RunLog::read(&dirs[0].path().join("runlog.jsonl")).unwrap(),
        logs[0]
    );
}

#[test]
fn different_seed_changes_the_trajectory() {
    let train = data(4, 1);
    let run = |seed| {
        let mut model = Model::new(tiny()).unwrap();
        let cfg = TrainConfig { seed, ..quick(1) };
        fit(
            &mut model,
            &train,
            &train,
            &cfg,
            &LossWeights::default(),
            None,
            None,
        )
        .unwrap()
    };
    assert_ne!(run(0).records[0].step_totals, run(1).records[0].step_totals);
}

#[test]
fn records_follow_schedule_and_recombine() {
    let train = data(4, 3);
    let mut model = Model::new(tiny()).unwrap();
    let w = LossWeights {
        beta: 0.5,
        gamma: 2.0,
        ..LossWeights::default()
    };
    let cfg = TrainConfig {
        eval_every: 2,
        ..quick(3)
    };
    let log = fit(&mut model, &train, &train, &cfg, &w, None, None).unwrap();
    let epochs: Vec<usize> = log.records.iter().map(|r| r.epoch).collect();
    assert_eq!(epochs, vec![0, 1, 2]);
    let schedule = cfg.schedule();
    for r in &log.records {
        assert_eq!(r.lr, schedule.lr_at(r.epoch as f64).unwrap());
        assert_eq!(r.step_totals.len(), 2);
        let re = r.loss.recombine(&w);
        assert!((re - r.loss.total).abs() <= 1e-6 * r.loss.total.abs());
    }
    assert!(log.records.windows(2).all(|p| p[1].lr <= p[0].lr));
    // evaluation after epoch 1 and at the end
    let evaluated: Vec<bool> = log.records.iter().map(|r| r.metrics.is_some()).collect();
    assert_eq!(evaluated, vec![false, true, true]);
    assert_eq!(log.step_totals().len(), 6);
}

#[test]
fn oracle_predictor_scores_one_every_epoch() {
    let (train, eval) = (data(2, 4), data(3, 5));
    let mut model = Model::new(tiny()).unwrap();
    let cfg = TrainConfig {
        eval_every: 1,
        ..quick(2)
    };
    let log = fit(
        &mut model,
        &train,
        &eval,
        &cfg,
        &LossWeights::default(),
        None,
        Some(&GroundTruthPredictor),
    )
    .unwrap();
    for r in &log.records {
        let m = r.metrics.unwrap();
        assert_eq!((m.oa, m.fscd, m.miou, m.sek), (1.0, 1.0, 1.0, 1.0));
    }
    let report = evaluate(&GroundTruthPredictor, &eval, 2, vec![0]).unwrap();
    assert_eq!(report.n_scenes, 3);
    assert_eq!(report.n_pixels, 3 * 64 * 64);
}

#[test]
fn best_checkpoint_is_at_least_as_good_as_final() {
    let (train, eval) = (data(4, 6), data(2, 7));
    let dir = tempfile::tempdir().unwrap();
    let mut model = Model::new(tiny()).unwrap();
    let cfg = TrainConfig {
        selection_metric: SelectionMetric::Miou,
        ..quick(3)
    };
    let out = FitOutput {
        dir: dir.path(),
        palette: None,
    };
    let log = fit(
        &mut model,
        &train,
        &eval,
        &cfg,
        &LossWeights::default(),
        Some(out),
        None,
    )
    .unwrap();
    let best = log.best.clone().unwrap();
    assert_eq!(best.metric, SelectionMetric::Miou);
    let best_value = log
        .records
        .iter()
        .filter_map(|r| r.metrics)
        .map(|m| m.miou)
        .fold(f64::MIN, f64::max);
    assert_eq!(best.value, best_value);
    let score = |name: &str| {
        let (m, _) = Model::load(&dir.path().join(name)).unwrap();
        let p = ModelPredictor {
            model: &m,
            threshold: cfg.threshold,
        };
        evaluate(&p, &eval, 2, vec![]).unwrap().miou
    };
    assert_eq!(score("best.ckpt"), best.value);
    assert!(score("best.ckpt") >= score("final.ckpt"));
}

#[test]
fn zero_lr_step_leaves_trainable_parameters_alone() {
    let train = data(2, 8);
    let mut model = Model::new(tiny()).unwrap();
    let before = model.store.clone();
    let mut opt = Sgd::new(0.9, 1e-4, true);
    let b = train_step(
        &mut model,
        &mut opt,
        &train,
        0.0,
        &LossWeights::default(),
        None,
    )
    .unwrap();
    assert!(b.total.is_finite());
    let mut buffers_moved = false;
    for ((id, p), (_, q)) in model.store.iter().zip(before.iter()) {
        let same = p
            .value
            .data()
            .iter()
            .zip(q.value.data())
            .all(|(a, c)| a.to_bits() == c.to_bits());
        if p.trainable {
            assert!(same, "{}", p.name);
            assert_eq!(opt.velocity(id).unwrap().shape(), p.value.shape());
        } else {
            assert!(opt.velocity(id).is_none());
            buffers_moved |= !same;
        }
    }
    // running statistics still follow the batch
    assert!(buffers_moved);
}

#[test]
fn non_finite_loss_aborts() {
    let train = data(2, 9);
    let mut model = Model::new(tiny()).unwrap();
    let id = model.store.find("sem_decoder.head.weight").unwrap();
    let shape = model.store.get(id).shape().to_vec();
    model.store.set(id, Tensor::full(&shape, f64::NAN)).unwrap();
    let mut opt = Sgd::new(0.9, 0.0, true);
    let err = train_step(
        &mut model,
        &mut opt,
        &train,
        0.1,
        &LossWeights::default(),
        None,
    )
    .unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss(_)), "{err}");
    let err = fit(
        &mut model,
        &train,
        &train,
        &quick(1),
        &LossWeights::default(),
        None,
        None,
    )
    .unwrap_err();
    assert!(err.to_string().contains("epoch 0"), "{err}");
}

#[test]
fn empty_training_set_is_rejected() {
    let mut model = Model::new(tiny()).unwrap();
    let empty: Vec<Sample> = Vec::new();
    let err = fit(
        &mut model,
        &empty,
        &empty,
        &quick(1),
        &LossWeights::default(),
        None,
        None,
    )
    .unwrap_err();
    assert!(matches!(err, Error::EmptyDataset));
}

#[test]
fn augmentation_handles_non_square_scenes() {
    let cfg = SynthConfig {
        n_samples: 4,
        height: 64,
        width: 96,
        ..SynthConfig::default()
    };
    let train = synth_samples(&cfg, 10).unwrap().0;
    let mut model = Model::new(tiny()).unwrap();
    let log = fit(
        &mut model,
        &train,
        &train,
        &quick(2),
        &LossWeights::default(),
        None,
        None,
    )
    .unwrap();
    assert!(log.step_totals().iter().all(|v| v.is_finite()));
}
