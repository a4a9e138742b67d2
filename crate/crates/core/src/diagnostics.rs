//! Random model instances for gradient and invariant checks.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{grad_check, GradCheckConfig, GradCheckReport};
use crate::error::Result;
use crate::features::{CellInputs, FeatureDims, FeatureVariant, PathInputs};
use crate::grid::GridCell;
use crate::model::{LossVariant, Model, ModelConfig, SupervisionTargets};

/// Side of the grid random instances live on.
pub const CHECK_GRID_N: usize = 4;

fn traffic_seq<R: Rng>(rng: &mut R, max_len: usize) -> Vec<[f64; 4]> {
    let len = rng.gen_range(0..=max_len);
    (0..len)
        .map(|_| [rng.gen(), rng.gen_range(0.2..2.0), rng.gen_range(0.0..3.0), rng.gen_range(0.1..2.0)])
        .collect()
}

/// A path of `n` cells with random but well-scaled feature inputs.
pub fn random_path_inputs<R: Rng>(rng: &mut R, n: usize, rings: usize) -> PathInputs {
    let cells = (0..n)
        .map(|_| {
            let cell = GridCell::new(rng.gen_range(0..CHECK_GRID_N), rng.gen_range(0..CHECK_GRID_N));
            let mut driving = [0.0; 4];
            driving[rng.gen_range(0..3)] = 1.0;
            driving[3] = rng.gen();
            CellInputs {
                cell,
                row: cell.x * CHECK_GRID_N + cell.y,
                len_m: rng.gen_range(10.0..300.0),
                driving,
                short: (0..rings).map(|_| traffic_seq(rng, 4)).collect(),
                long: traffic_seq(rng, 4),
                mean_speed: rng.gen_range(0.3..1.5),
            }
        })
        .collect();
    PathInputs {
        hour: rng.gen_range(0..24),
        cells,
    }
}

/// Targets with increasing forward times over a random non-empty mask.
pub fn random_targets<R: Rng>(rng: &mut R, n: usize) -> SupervisionTargets {
    let mut mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.7)).collect();
    let forced = rng.gen_range(0..n);
    mask[forced] = true;
    let mut leave = Vec::with_capacity(n);
    let mut t = 0.0;
    for _ in 0..n {
        t += rng.gen_range(5.0..60.0);
        leave.push(t);
    }
    let total = t;
    let (tf, tb) = leave
        .iter()
        .zip(&mask)
        .map(|(&l, &m)| if m { (l, total - l) } else { (1.0, 1.0) })
        .unzip();
    SupervisionTargets { mask, tf, tb, total }
}

/// Scaled-down model settings used for gradient checks.
pub fn small_config(features: FeatureVariant, loss: LossVariant, hidden: usize) -> ModelConfig {
    ModelConfig {
        features,
        loss,
        dims: FeatureDims {
            emb: 3,
            traffic_hidden: 3,
            rings: 2,
        },
        hidden,
        target_floor_s: 0.0,
        init_scale: 0.5,
        ..ModelConfig::default()
    }
}

/// Checks the loss gradient of a freshly initialised model on one random
/// path of `n` cells against finite differences.
pub fn model_grad_check(cfg: ModelConfig, n: usize, seed: u64, gc: &GradCheckConfig) -> Result<GradCheckReport> {
    let model = Model::new(cfg, CHECK_GRID_N * CHECK_GRID_N, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let inputs = random_path_inputs(&mut rng, n, cfg.dims.rings);
    let targets = random_targets(&mut rng, n);
    grad_check(&model.params, |tape| model.loss(tape, &inputs, &targets), gc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn targets_are_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..6 {
            let t = random_targets(&mut rng, n);
            assert!(t.sample_count() >= 1);
            for i in 0..n {
                if t.mask[i] {
                    assert!((t.tf[i] + t.tb[i] - t.total).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn small_model_passes() {
        let cfg = small_config(FeatureVariant::StTrafDs, LossVariant::DualAux, 4);
        let r = model_grad_check(cfg, 3, 1, &GradCheckConfig::default()).unwrap();
        assert!(r.passed(), "{r:?}");
    }
}
