mod common;

use common::*;
use dast_core::data::{label_rul, sliding_windows, DatasetSplit, EngineSeries, WindowSpec};
use dast_core::{train, DastConfig, DastModel, Sequential, Tape, TrainConfig, Trainer, Variant};
use rand::Rng;

/// Engines whose four channels drift linearly towards failure.
fn toy_split(engines: usize, seed: u64) -> DatasetSplit {
    let mut r = rng(seed);
    let mut windows = Vec::new();
    for unit in 0..engines {
        let len = 12 + unit * 3;
        let rows: Vec<Vec<f64>> = (0..len)
            .map(|t| {
                let wear = t as f64 / len as f64;
                (0..4).map(|j| wear * (j + 1) as f64 / 4.0 + 0.02 * r.random::<f64>()).collect()
            })
            .collect();
        let s = EngineSeries::new(unit as u32 + 1, (1..=len as u32).collect(), vec![[0.0; 3]; len], rows, vec![1, 2, 3, 4])
            .unwrap();
        windows.extend(sliding_windows(&s, WindowSpec::new(6), &label_rul(len, 125.0)).unwrap());
    }
    let test = windows.iter().step_by(5).cloned().collect();
    DatasetSplit { train: windows, test }
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, batch_size: 8, learning_rate: 1e-2, seed: 3, ..TrainConfig::default() }
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let data = toy_split(3, 1);
    let mut model = DastModel::new(toy_config(), 1).unwrap();
    let before = model.params().clone();
    let config = TrainConfig { learning_rate: 0.0, ..quick(2) };
    train(&mut model, &data, &config, &Sequential, |_, _, _| Ok(())).unwrap();
    for (a, b) in before.params().iter().zip(model.params().params()) {
        assert_eq!(a.value, b.value, "{}", a.name);
    }
}

#[test]
fn same_seed_same_run() {
    let data = toy_split(3, 2);
    let run = || {
        let mut model = DastModel::new(toy_config(), 2).unwrap();
        let (hist, _) = train(&mut model, &data, &quick(3), &Sequential, |_, _, _| Ok(())).unwrap();
        (hist, model.params().clone())
    };
    let (h1, p1) = run();
    let (h2, p2) = run();
    assert_eq!(h1, h2);
    for (a, b) in p1.params().iter().zip(p2.params()) {
        assert_eq!(a.value, b.value);
    }
}

#[test]
fn resuming_matches_an_uninterrupted_run() {
    let data = toy_split(3, 3);
    let mut straight = DastModel::new(toy_config(), 3).unwrap();
    let (full, _) = train(&mut straight, &data, &quick(4), &Sequential, |_, _, _| Ok(())).unwrap();

    let mut first = DastModel::new(toy_config(), 3).unwrap();
    let (_, trainer) = train(&mut first, &data, &quick(2), &Sequential, |_, _, _| Ok(())).unwrap();
    let mut resumed = Trainer::resume(quick(4), &mut first, trainer.state().clone()).unwrap();
    let mut tail = Vec::new();
    while !resumed.is_finished() {
        tail.push(resumed.run_epoch(&mut first, &data, &Sequential).unwrap());
    }
    assert_eq!(&full[2..], &tail[..]);
    assert_eq!(straight.params().params()[0].value, first.params().params()[0].value);
}

#[test]
fn training_reduces_loss() {
    let data = toy_split(4, 4);
    let mut model = DastModel::new(DastConfig { dropout: 0.0, ..toy_config() }, 4).unwrap();
    let config = TrainConfig { dropout: 0.0, learning_rate: 2e-2, ..quick(15) };
    let (hist, trainer) = train(&mut model, &data, &config, &Sequential, |_, _, _| Ok(())).unwrap();
    assert!(hist.last().unwrap().train_loss < 0.5 * hist[0].train_loss, "{hist:?}");
    let best = trainer.state().best_test_rmse.unwrap();
    assert!(hist.iter().all(|h| h.test_rmse.unwrap() >= best));
    assert!(trainer.best_params().is_some());
}

#[test]
fn every_parameter_receives_gradient() {
    let data = toy_split(2, 5);
    for variant in Variant::ALL {
        let model = DastModel::new(DastConfig { variant, ..toy_config() }, 5).unwrap();
        let mut totals = vec![0.0f64; model.params().len()];
        for sample in data.train.iter().take(4) {
            let mut tape = Tape::new();
            let mut r = rng(0);
            let mut pass = model.begin_pass(&mut tape, true, true, &mut r, false);
            let out = model.forward(&mut pass, &sample.matrix).unwrap();
            let binding = pass.binding;
            tape.backward(out).unwrap();
            for (t, &v) in totals.iter_mut().zip(binding.vars()) {
                *t += tape.grad(v).map_or(0.0, |g| g.iter().map(|x| x.abs()).sum());
            }
        }
        for (p, t) in model.params().params().iter().zip(&totals) {
            assert!(*t > 0.0, "{variant}: {} has no gradient", p.name);
        }
    }
}

#[test]
fn batch_step_follows_the_whole_batch_loss_gradient() {
    // one tape holding every sample; rectification is off on the first
    // step, so the update is exactly -lr times the gradient
    let data = toy_split(2, 6);
    let cfg = DastConfig { dropout: 0.0, ..toy_config() };
    let mut model = DastModel::new(cfg, 6).unwrap();
    let batch: Vec<_> = data.train.iter().take(7).collect();

    let mut tape = Tape::new();
    let mut r = rng(0);
    let mut pass = model.begin_pass(&mut tape, true, true, &mut r, false);
    let mut outs = Vec::new();
    for s in &batch {
        outs.push(model.forward(&mut pass, &s.matrix).unwrap());
    }
    let binding = pass.binding;
    let mut preds = outs[0];
    for &o in &outs[1..] {
        preds = tape.concat_cols(&[preds, o]).unwrap();
    }
    let labels: Vec<f64> = batch.iter().map(|s| s.label).collect();
    let loss = tape.rmse_loss(preds, &labels).unwrap();
    tape.backward(loss).unwrap();
    let expected: Vec<Vec<f64>> = binding.vars().iter().map(|&v| tape.grad(v).unwrap().to_vec()).collect();

    let before = model.params().clone();
    let lr = 1e-3;
    let config = TrainConfig { dropout: 0.0, learning_rate: lr, ..quick(1) };
    let mut trainer = Trainer::new(config, &mut model).unwrap();
    trainer.step(&mut model, &batch, 0, &Sequential).unwrap();
    for ((b, a), g) in before.params().iter().zip(model.params().params()).zip(&expected) {
        for ((x0, x1), gi) in b.value.data().iter().zip(a.value.data()).zip(g) {
            assert!((x0 - lr * gi - x1).abs() < 1e-12, "{}: {x0} {x1} {gi}", b.name);
        }
    }
}
