use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tte::autograd::{ParamStore, Tape, Tensor};
use tte::diagnostics::{random_path_inputs, random_targets, small_config};
use tte::features::FeatureVariant;
use tte::model::{dual_loss, predict_intervals, IntervalPredictions, LossVariant, Model};

fn gradient_bits(model: &Model, tape: &Tape, loss: tte::autograd::Var) -> Vec<Vec<u64>> {
    let g = tape.backward(loss).unwrap();
    model
        .params
        .ids()
        .map(|id| g.dense(&model.params, id).iter().map(|v| v.to_bits()).collect())
        .collect()
}

proptest! {
    #[test]
    fn intervals_sum_to_the_total(n in 1usize..10, h in 1usize..6, seed in any::<u64>(), zero_bias in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::uniform(&[1, h], -2.0, 2.0, &mut rng), false);
        let bias = if zero_bias { 0.0 } else { rng.gen_range(-5.0..5.0) };
        let b = store.add("b", Tensor::scalar(bias), false);
        let hs_data: Vec<Vec<f64>> = (0..n).map(|_| (0..h).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let mut tape = Tape::new(&store);
        let hs: Vec<_> = hs_data.iter().map(|v| tape.constant_vec(v.clone()).unwrap()).collect();
        let pred = predict_intervals(&mut tape, &hs, w, b).unwrap();
        let tf = tape.value(pred.tf).to_vec();
        let tb = tape.value(pred.tb).to_vec();
        let wv = store.value(w).data();
        let w_sum: f64 = (0..h).map(|k| wv[k] * hs_data.iter().map(|x| x[k]).sum::<f64>()).sum();
        prop_assert_eq!(tb[n - 1], 0.0);
        prop_assert_eq!(tape.scalar(pred.total), tf[n - 1]);
        for i in 0..n - 1 {
            let residual = tf[i] + tb[i] - w_sum;
            prop_assert!((residual - 2.0 * bias).abs() < 1e-9);
            prop_assert!((tf[i] + tb[i] - tape.scalar(pred.total) - bias).abs() < 1e-9);
        }
    }

    #[test]
    fn unmasked_targets_are_ignored(n in 1usize..6, seed in any::<u64>(), junk in -1e6..1e6f64) {
        let cfg = small_config(FeatureVariant::StTrafDs, LossVariant::DualAux, 4);
        let model = Model::new(cfg, tte::diagnostics::CHECK_GRID_N.pow(2), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = random_path_inputs(&mut rng, n, cfg.dims.rings);
        let clean = random_targets(&mut rng, n);
        let mut dirty = clean.clone();
        for i in 0..n {
            if !dirty.mask[i] {
                dirty.tf[i] = junk;
                dirty.tb[i] = -junk;
            }
        }
        let run = |tgt| {
            let mut tape = Tape::new(&model.params);
            let loss = model.loss(&mut tape, &inputs, tgt).unwrap();
            (tape.scalar(loss).to_bits(), gradient_bits(&model, &tape, loss))
        };
        prop_assert_eq!(run(&clean), run(&dirty));
    }

    #[test]
    fn loss_is_zero_exactly_at_the_targets(n in 1usize..8, seed in any::<u64>(), k in 0usize..8, delta in 0.01..10.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tgt = random_targets(&mut rng, n);
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let mut tf = tgt.tf.clone();
        let mut tb = tgt.tb.clone();
        tb[n - 1] = 0.0;
        let exact = {
            let pred = IntervalPredictions {
                tf: tape.constant_vec(tf.clone()).unwrap(),
                tb: tape.constant_vec(tb.clone()).unwrap(),
                total: tape.constant_vec(vec![tgt.total]).unwrap(),
            };
            let l = dual_loss(&mut tape, &pred, &tgt, 0.0).unwrap();
            tape.scalar(l)
        };
        prop_assert_eq!(exact, 0.0);
        let masked: Vec<usize> = (0..n).filter(|&i| tgt.mask[i]).collect();
        let i = masked[k % masked.len()];
        tf[i] += delta;
        let pred = IntervalPredictions {
            tf: tape.constant_vec(tf).unwrap(),
            tb: tape.constant_vec(tb).unwrap(),
            total: tape.constant_vec(vec![tgt.total]).unwrap(),
        };
        let l = dual_loss(&mut tape, &pred, &tgt, 0.0).unwrap();
        prop_assert!(tape.scalar(l) > 0.0);
    }
}
