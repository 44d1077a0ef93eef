//! Training loop, checkpoint persistence, evaluation and the ablation harness.

mod common;

use common::phantom_set;
use msseg_core::metrics::{confusion, MetricsReport};
use msseg_core::model::ModelConfig;
use msseg_core::tensor::ParamKind;
use msseg_core::train::{
    evaluate, load_checkpoint, predict, run_ablation, save_checkpoint, train, Checkpoint, FoldData, TrainConfig,
};

fn small_fold() -> FoldData {
    let vols = phantom_set(0, 5, 10, 32);
    FoldData {
        train: vols[..3].to_vec(),
        val: vols[3..4].to_vec(),
        test: vols[4..].to_vec(),
    }
}

fn quick(epochs: usize, max_steps: Option<usize>) -> TrainConfig {
    TrainConfig {
        epochs,
        lr: 0.05,
        batch_size: 4,
        seed: 11,
        max_steps,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_learning_rate_leaves_weights_unchanged() {
    let data = small_fold();
    let mcfg = ModelConfig::miniature();
    let tcfg = TrainConfig { lr: 0.0, ..quick(1, Some(3)) };
    let out = train(&data, &mcfg, &tcfg, &mut |_| {}).unwrap();
    assert_eq!(out.step_losses.len(), 3);
    let init = out.best.net().unwrap().init_params().unwrap();
    let mut buffers_moved = false;
    for (name, p) in out.best.params.iter() {
        let before = init.get(name).unwrap();
        match p.kind {
            ParamKind::Trainable => assert_eq!(&p.value, before, "{name}"),
            ParamKind::Buffer => buffers_moved |= &p.value != before,
        }
    }
    assert!(buffers_moved, "running statistics should still update");
}

#[test]
fn fixed_seed_gives_identical_loss_sequences() {
    let data = small_fold();
    let mcfg = ModelConfig::miniature();
    let run = |seed| {
        let tcfg = TrainConfig { seed, ..quick(10, Some(10)) };
        train(&data, &mcfg, &tcfg, &mut |_| {}).unwrap().step_losses
    };
    let a = run(3);
    let b = run(3);
    assert_eq!(a.len(), 10);
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_ne!(bits(&a), bits(&run(4)));
}

#[test]
fn best_snapshot_tracks_the_validation_maximum() {
    let data = small_fold();
    let mut seen = Vec::new();
    let out = train(&data, &ModelConfig::miniature(), &quick(4, None), &mut |r| seen.push(*r)).unwrap();
    assert_eq!(seen, out.history);
    assert_eq!(out.history.len(), 4);
    let steps_per_epoch = (3 * 10usize).div_ceil(4);
    for (i, r) in out.history.iter().enumerate() {
        assert_eq!(r.epoch, i + 1);
        assert_eq!(r.steps, steps_per_epoch * (i + 1));
        assert!(r.train_loss.is_finite() && (0.0..=1.0).contains(&r.val_dice));
    }
    let max = out.history.iter().map(|r| r.val_dice).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(out.best.best_val_dice, max);
    let first = out.history.iter().find(|r| r.val_dice == max).unwrap();
    assert_eq!(out.best.cursor.epoch, first.epoch);
    assert_eq!(out.best.cursor.step, first.steps);

    let net = out.best.net().unwrap();
    let recomputed = msseg_core::train::validation_dice(&net, &out.best.params, &data.val).unwrap();
    assert_eq!(recomputed, max);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let data = small_fold();
    let out = train(&data, &ModelConfig::miniature(), &quick(2, Some(8)), &mut |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("best.ckpt");
    save_checkpoint(&out.best, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, out.best);
    for v in &data.test {
        assert_eq!(predict(&loaded, &v.image).unwrap(), predict(&out.best, &v.image).unwrap());
    }
    let again = dir.path().join("again.ckpt");
    save_checkpoint(&loaded, &again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());

    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x10;
    assert!(Checkpoint::decode(&bytes).is_err());
}

#[test]
fn evaluation_report_matches_saved_predictions() {
    let data = small_fold();
    let out = train(&data, &ModelConfig::miniature(), &quick(1, Some(6)), &mut |_| {}).unwrap();
    let items: Vec<_> = data.val.iter().chain(&data.test).cloned().collect();
    let eval = evaluate(&out.best, &items).unwrap();
    assert_eq!(eval.predictions.len(), items.len());
    let dir = tempfile::tempdir().unwrap();
    let mut counts = Vec::new();
    for (item, pred) in items.iter().zip(&eval.predictions) {
        let path = dir.path().join(format!("{}.pred.msmsk", item.id));
        msseg_core::data::save_mask(pred, &path).unwrap();
        let back = msseg_core::data::load_mask(&path).unwrap();
        counts.push((item.id.clone(), confusion(&back, &item.mask).unwrap()));
    }
    let recomputed = MetricsReport::from_counts(counts).unwrap();
    assert_eq!(recomputed, eval.report);
    assert_eq!(recomputed.to_kv(), eval.report.to_kv());
}

#[test]
fn zero_epochs_yields_the_initial_model() {
    let mut data = small_fold();
    data.val.clear();
    let out = train(&data, &ModelConfig::miniature(), &quick(0, None), &mut |_| {}).unwrap();
    assert!(out.history.is_empty() && out.step_losses.is_empty());
    assert!(out.best.best_val_dice.is_nan());
    assert_eq!(out.best.params, out.best.net().unwrap().init_params().unwrap());
    let bytes = out.best.encode().unwrap();
    assert!(Checkpoint::decode(&bytes).unwrap().best_val_dice.is_nan());
}

#[test]
fn training_input_errors() {
    let mcfg = ModelConfig::miniature();
    let data = small_fold();
    let mut no_train = data.clone();
    no_train.train.clear();
    assert!(train(&no_train, &mcfg, &quick(1, None), &mut |_| {}).is_err());
    let mut no_val = data.clone();
    no_val.val.clear();
    assert!(train(&no_val, &mcfg, &quick(1, None), &mut |_| {}).is_err());
    let wrong_size = ModelConfig { input_size: 64, ..mcfg.clone() };
    assert!(train(&data, &wrong_size, &quick(1, None), &mut |_| {}).is_err());
    let bad_batch = TrainConfig { batch_size: 0, ..quick(1, None) };
    assert!(train(&data, &mcfg, &bad_batch, &mut |_| {}).is_err());
}

#[test]
fn ablation_grid_shape_and_order() {
    let vols = phantom_set(20, 8, 10, 32);
    let fold = |t: usize| {
        let test = vec![vols[t].clone()];
        let val = vec![vols[(t + 1) % 8].clone()];
        let train = vols.iter().enumerate().filter(|(i, _)| *i != t && *i != (t + 1) % 8).map(|(_, v)| v.clone()).take(2).collect();
        FoldData { train, val, test }
    };
    let folds = vec![(2, fold(1)), (4, fold(3))];
    let mut calls = Vec::new();
    let grid = run_ablation(&folds, &ModelConfig::miniature(), &quick(1, Some(2)), &mut |name, f, _| {
        calls.push((name.to_string(), f))
    })
    .unwrap();
    assert_eq!(grid.variants, [
            "FC-DenseNet",
            "FC-DenseNet + C-LSTM",
            "FC-DenseNet + SA",
            "FC-DenseNet + SA + C-LSTM"
        ]);
    assert_eq!(grid.fold_ids, [2, 4]);
    assert_eq!(grid.dice.len(), 4);
    for (row, mean) in grid.dice.iter().zip(&grid.mean) {
        assert_eq!(row.len(), 2);
        assert!(row.iter().all(|d| d.is_finite()));
        assert!((mean - (row[0] + row[1]) / 2.0).abs() < 1e-15);
    }
    assert_eq!(calls.len(), 8);
    let text = grid.to_text();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].contains("Fold2") && lines[0].contains("Fold4") && lines[0].contains("Mean"));
    assert!(lines[4].starts_with("FC-DenseNet + SA + C-LSTM"));
}
