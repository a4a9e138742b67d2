use std::sync::OnceLock;

use proptest::prelude::*;
use tte::autograd::GradCheckConfig;
use tte::checkpoint::Checkpoint;
use tte::diagnostics::{model_grad_check, small_config};
use tte::features::{FeatureDims, FeatureVariant, PathInputs};
use tte::ingest::split_dataset;
use tte::ingest::SplitMode;
use tte::model::{LossVariant, Model, ModelConfig};
use tte::synth::{generate, SpeedField, SynthConfig};
use tte::traffic::{StoreConfig, TrafficStore};
use tte::train::{
    baseline_spd_mean, evaluate, AdamConfig, metrics, prepare_examples, train, Estimator, Example, GridLstm, TrainConfig,
};

struct World {
    cell_count: usize,
    store: TrafficStore,
    train: Vec<Example>,
    val: Vec<Example>,
}

fn world() -> &'static World {
    static WORLD: OnceLock<World> = OnceLock::new();
    WORLD.get_or_init(|| {
        let cfg = SynthConfig {
            n: 16,
            trajectories: 1200,
            min_cells: 6,
            max_cells: 20,
            ..SynthConfig::default()
        };
        let field = SpeedField::city(cfg.n, cfg.seed);
        let w = generate(&cfg, &field).unwrap();
        let split = split_dataset(w.trajectories, 3, SplitMode::Shuffle).unwrap();
        let store = TrafficStore::build(&split.train, &w.spec, StoreConfig::default()).unwrap();
        let stages = ModelConfig::default().stages;
        let (train, _) = prepare_examples(&split.train, &store, &w.spec, 3, stages);
        let (val, _) = prepare_examples(&split.val, &store, &w.spec, 3, stages);
        World {
            cell_count: w.spec.cell_count(),
            store,
            train,
            val,
        }
    })
}

fn desk(features: FeatureVariant, loss: LossVariant) -> ModelConfig {
    ModelConfig {
        features,
        loss,
        dims: FeatureDims {
            emb: 16,
            traffic_hidden: 16,
            rings: 3,
        },
        hidden: 16,
        ..ModelConfig::default()
    }
}

#[test]
fn every_variant_passes_the_gradient_check() {
    let gc = GradCheckConfig::default();
    for features in FeatureVariant::ALL {
        for loss in LossVariant::ALL {
            for (n, seed) in [(1, 11), (4, 12)] {
                let r = model_grad_check(small_config(features, loss, 8), n, seed, &gc).unwrap();
                assert!(r.passed(), "{features}/{loss} n={n}: {:?}", r.worst);
            }
        }
    }
}

#[test]
fn overfits_a_single_example() {
    let w = world();
    let one = vec![w.train[0].clone()];
    let mut model = Model::new(desk(FeatureVariant::StTrafDs, LossVariant::DualAux), w.cell_count, 5);
    // The head emits raw seconds; at the default rate 200 Adam steps move
    // each weight by at most 0.4, too little to reach a few hundred seconds.
    let cfg = TrainConfig {
        epochs: 200,
        patience: 200,
        adam: AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        },
        ..TrainConfig::default()
    };
    let report = train(&mut model, &one, &one, &cfg).unwrap();
    let last = report.curve.last().unwrap().train_loss;
    assert!(last < 1e-3, "final training loss {last}");
}

#[test]
fn grid_lstm_overfits_a_single_example() {
    let w = world();
    let one = vec![w.train[0].clone()];
    let mut model = GridLstm::new(16, 100.0, 300.0, 0.05, 5);
    let cfg = TrainConfig {
        epochs: 1000,
        patience: 1000,
        ..TrainConfig::default()
    };
    train(&mut model, &one, &one, &cfg).unwrap();
    let rel = (model.predict(&one[0]).unwrap() / one[0].truth() - 1.0).abs();
    assert!(rel < 0.01, "relative error {rel}");
}

#[test]
fn training_is_reproducible_and_checkpoints_are_exact() {
    let w = world();
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    let mcfg = desk(FeatureVariant::StTrafDs, LossVariant::DualAux);
    let run = || {
        let mut m = Model::new(mcfg, w.cell_count, 9);
        let r = train(&mut m, &w.train[..200], &w.val, &cfg).unwrap();
        (m, r)
    };
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(ra, rb);
    assert_eq!(a.params, b.params);

    let mut buf = Vec::new();
    Checkpoint::from_model(&a, String::new()).write(&mut buf).unwrap();
    let restored = Checkpoint::read(buf.as_slice()).unwrap().into_model(mcfg).unwrap();
    let ma = evaluate(&a, &w.val).unwrap();
    let mb = evaluate(&restored, &w.val).unwrap();
    assert_eq!(ma.mae.to_bits(), mb.mae.to_bits());
    assert_eq!(ma.rmse.to_bits(), mb.rmse.to_bits());
    assert_eq!(ma.mape.to_bits(), mb.mape.to_bits());
}

/// Trains both the full model and the grid-LSTM baseline; the curve of the
/// full model should mostly decrease and it should end up ahead.
#[test]
fn full_model_learns_and_beats_grid_lstm() {
    let w = world();
    let cfg = TrainConfig {
        epochs: 10,
        ..TrainConfig::default()
    };
    let mut full = Model::new(desk(FeatureVariant::StTrafDs, LossVariant::DualAux), w.cell_count, 1);
    let rf = train(&mut full, &w.train, &w.val, &cfg).unwrap();
    let rises = rf.curve.windows(2).filter(|p| p[1].train_loss > p[0].train_loss).count();
    assert!(rises * 10 <= rf.curve.len(), "train loss rose in {rises} of {} epochs", rf.curve.len());

    let mut grid = GridLstm::new(16, 100.0, 300.0, 0.05, 1);
    let rg = train(&mut grid, &w.train, &w.val, &cfg).unwrap();
    println!("full {:.4}, grid_lstm {:.4}", rf.best_val_mape, rg.best_val_mape);
    assert!(rf.best_val_mape < rg.best_val_mape);
}

#[test]
fn spd_mean_falls_back_to_the_global_mean() {
    let w = world();
    let global = w.store.global_mean().unwrap().v;
    let ex = &w.val[0];
    let mut inputs: PathInputs = ex.inputs.clone();
    // a cell id outside the grid never has history
    for c in &mut inputs.cells {
        c.cell = tte::grid::GridCell::new(1000, 1000);
    }
    let expected: f64 = inputs.cells.iter().map(|c| c.len_m / global).sum();
    let got = baseline_spd_mean(&w.store, &inputs).unwrap();
    assert!((got - expected).abs() <= 1e-9 * expected);
}

proptest! {
    #[test]
    fn metrics_match_a_scalar_pass(pairs in prop::collection::vec((1.0..5000.0f64, 1.0..5000.0f64), 1..60)) {
        let preds: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let truths: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let m = metrics(&preds, &truths).unwrap();
        let (mut abs, mut sq, mut rel) = (0.0, 0.0, 0.0);
        for (p, t) in preds.iter().zip(&truths) {
            abs += (p - t).abs();
            sq += (p - t) * (p - t);
            rel += (p - t).abs() / t;
        }
        let k = preds.len() as f64;
        prop_assert!((m.mae - abs / k).abs() <= 1e-12 * (abs / k).max(1.0));
        prop_assert!((m.rmse - (sq / k).sqrt()).abs() <= 1e-12 * (sq / k).sqrt().max(1.0));
        prop_assert!((m.mape - rel / k).abs() <= 1e-12 * (rel / k).max(1.0));
        if preds.len() == 1 {
            prop_assert!((m.mae - m.rmse).abs() <= 1e-12 * m.mae.max(1.0));
        }
    }
}
