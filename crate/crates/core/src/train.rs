//! Optimizer, training loop, metrics, baselines and variant sweeps.

use std::io::Write;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, LstmParams, ParamGrad, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::features::{prepare_path, FeatureVariant, PathInputs, StageThresholds};
use crate::grid::{trace_path, GridSpec};
use crate::ingest::Trajectory;
use crate::model::{relative_squared_error, LossVariant, Model, ModelConfig, SupervisionTargets};
use crate::traffic::TrafficStore;

/// One path ready for training or evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub inputs: PathInputs,
    pub targets: SupervisionTargets,
}

impl Example {
    pub fn truth(&self) -> f64 {
        self.targets.total
    }
}

/// Traces and featurizes trajectories. Those that cannot be used (no grid
/// path, zero length) are skipped with a warning; the count is returned.
pub fn prepare_examples(
    trajs: &[Trajectory],
    store: &TrafficStore,
    spec: &GridSpec,
    rings: usize,
    stages: StageThresholds,
) -> (Vec<Example>, usize) {
    let mut out = Vec::with_capacity(trajs.len());
    let mut skipped = 0;
    for traj in trajs {
        let prepared = trace_path(spec, &traj.points).and_then(|path| {
            let inputs = prepare_path(&path, store, spec, rings, stages)?;
            Ok(Example {
                id: traj.id.clone(),
                inputs,
                targets: SupervisionTargets::from_path(&path),
            })
        });
        match prepared {
            Ok(ex) => out.push(ex),
            Err(e) => {
                warn!("skipping trajectory {}: {e}", traj.id);
                skipped += 1;
            }
        }
    }
    (out, skipped)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.002,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Row-sparse gradients update only the rows
/// they carry, moments included.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, cfg: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
        Self {
            cfg,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn first_moment(&self, id: ParamId) -> &[f64] {
        &self.m[id.index()]
    }

    pub fn second_moment(&self, id: ParamId) -> &[f64] {
        &self.v[id.index()]
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        for (id, g) in grads.iter() {
            let finite = match g {
                ParamGrad::Dense(d) => d.iter().all(|v| v.is_finite()),
                ParamGrad::Rows(rows) => rows.values().flatten().all(|v| v.is_finite()),
            };
            if !finite {
                return Err(Error::NonFinite(format!("gradient of {}", store.get(id).name)));
            }
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let update = |w: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64]| {
            for k in 0..g.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                w[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
            }
        };
        for (id, g) in grads.iter() {
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            let value = store.value_mut(id);
            match g {
                ParamGrad::Dense(g) => update(value.data_mut(), m, v, g),
                ParamGrad::Rows(rows) => {
                    let dim = value.shape()[1];
                    for (&r, g) in rows {
                        let span = r * dim..(r + 1) * dim;
                        update(&mut value.data_mut()[span.clone()], &mut m[span.clone()], &mut v[span], g);
                    }
                }
            }
        }
        Ok(())
    }
}

/// One Adam update of `store` from `grads`.
pub fn adam_step(store: &mut ParamStore, grads: &Gradients, state: &mut Adam) -> Result<()> {
    state.step(store, grads)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub epochs: usize,
    /// Stop after this many epochs without a better validation MAPE.
    pub patience: usize,
    pub seed: u64,
    /// Examples per optimizer step; their gradients are averaged.
    pub batch_size: usize,
    /// Global gradient-norm clip; 0 disables it.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            epochs: 30,
            patience: 5,
            seed: 42,
            batch_size: 1,
            grad_clip: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mape: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub count: usize,
    /// Seconds.
    pub mae: f64,
    /// Seconds.
    pub rmse: f64,
    pub mape: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub curve: Vec<EpochStats>,
}

/// MAE, RMSE and MAPE of `preds` against positive `truths`.
pub fn metrics(preds: &[f64], truths: &[f64]) -> Result<MetricsReport> {
    if preds.is_empty() {
        return Err(Error::invalid("no examples to evaluate"));
    }
    if preds.len() != truths.len() {
        return Err(Error::invalid("prediction and truth counts differ"));
    }
    let n = preds.len() as f64;
    let (mut abs, mut sq, mut pct) = (0.0, 0.0, 0.0);
    for (&p, &y) in preds.iter().zip(truths) {
        let e = p - y;
        abs += e.abs();
        sq += e * e;
        pct += e.abs() / y;
    }
    Ok(MetricsReport {
        count: preds.len(),
        mae: abs / n,
        rmse: (sq / n).sqrt(),
        mape: pct / n,
        curve: Vec::new(),
    })
}

/// Something with trainable parameters, a per-example loss and a
/// travel-time output.
pub trait Estimator {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn loss(&self, tape: &mut Tape, ex: &Example) -> Result<Var>;
    fn total(&self, tape: &mut Tape, ex: &Example) -> Result<Var>;

    fn predict(&self, ex: &Example) -> Result<f64> {
        let mut tape = Tape::new(self.params());
        let y = self.total(&mut tape, ex)?;
        Ok(tape.scalar(y))
    }
}

impl Estimator for Model {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn loss(&self, tape: &mut Tape, ex: &Example) -> Result<Var> {
        Model::loss(self, tape, &ex.inputs, &ex.targets)
    }

    fn total(&self, tape: &mut Tape, ex: &Example) -> Result<Var> {
        Model::total(self, tape, &ex.inputs)
    }
}

pub fn evaluate<E: Estimator>(model: &E, examples: &[Example]) -> Result<MetricsReport> {
    let preds = examples.iter().map(|ex| model.predict(ex)).collect::<Result<Vec<_>>>()?;
    let truths: Vec<f64> = examples.iter().map(Example::truth).collect();
    metrics(&preds, &truths)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub curve: Vec<EpochStats>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_mape: f64,
}

/// Seeded per-example training with early stopping. On return the model
/// holds the parameters of the best validation epoch.
pub fn train<E: Estimator>(model: &mut E, train: &[Example], val: &[Example], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.params(), cfg.adam);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = Vec::new();
    let mut best: Option<(usize, f64, ParamStore)> = None;
    let mut stale = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut used) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let mut acc = Gradients::empty(model.params());
            let mut in_batch = 0;
            for &i in batch {
                let ex = &train[i];
                if ex.targets.sample_count() == 0 {
                    warn!("skipping {}: no sampled cells", ex.id);
                    continue;
                }
                let tape_out = {
                    let mut tape = Tape::new(model.params());
                    let loss = model.loss(&mut tape, ex)?;
                    (tape.scalar(loss), tape.backward(loss)?)
                };
                loss_sum += tape_out.0;
                acc.accumulate(&tape_out.1);
                in_batch += 1;
            }
            if in_batch == 0 {
                continue;
            }
            used += in_batch;
            if in_batch > 1 {
                acc.scale(1.0 / in_batch as f64);
            }
            if cfg.grad_clip > 0.0 {
                let norm = acc.global_norm();
                if norm > cfg.grad_clip {
                    acc.scale(cfg.grad_clip / norm);
                }
            }
            adam.step(model.params_mut(), &acc)?;
        }
        let train_loss = loss_sum / used.max(1) as f64;
        let val_mape = if val.is_empty() {
            train_loss
        } else {
            evaluate(model, val)?.mape
        };
        info!("epoch {epoch}: train loss {train_loss:.6}, val MAPE {val_mape:.4}");
        curve.push(EpochStats {
            epoch,
            train_loss,
            val_mape,
        });
        match &best {
            Some((_, b, _)) if val_mape >= *b => {
                stale += 1;
                if stale >= cfg.patience {
                    debug!("early stop after epoch {epoch}");
                    break;
                }
            }
            _ => {
                best = Some((epoch, val_mape, model.params().clone()));
                stale = 0;
            }
        }
    }
    let (best_epoch, best_val_mape, params) = best.expect("at least one epoch ran");
    *model.params_mut() = params;
    Ok(TrainReport {
        curve,
        best_epoch,
        best_val_mape,
    })
}

/// Sum over cells of overlap length over the cell's all-time mean speed,
/// falling back to the global mean for cells without history.
pub fn baseline_spd_mean(store: &TrafficStore, inputs: &PathInputs) -> Result<f64> {
    let global = store
        .global_mean()
        .ok_or_else(|| Error::invalid("traffic store has no history"))?;
    Ok(inputs
        .cells
        .iter()
        .map(|c| c.len_m / store.cell_mean(c.cell).unwrap_or(global).v)
        .sum())
}

pub fn evaluate_spd_mean(store: &TrafficStore, examples: &[Example]) -> Result<MetricsReport> {
    let preds = examples
        .iter()
        .map(|ex| baseline_spd_mean(store, &ex.inputs))
        .collect::<Result<Vec<_>>>()?;
    let truths: Vec<f64> = examples.iter().map(Example::truth).collect();
    metrics(&preds, &truths)
}

/// Unidirectional LSTM over per-cell overlap lengths with an affine head on
/// the final state, trained on the relative squared error of the total. The
/// head output is in units of `time_ref` seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct GridLstm {
    pub params: ParamStore,
    pub lstm: LstmParams,
    pub w: ParamId,
    pub b: ParamId,
    /// Lengths enter the LSTM divided by this many meters.
    pub len_ref: f64,
    pub time_ref: f64,
}

impl GridLstm {
    pub fn new(hidden: usize, len_ref: f64, time_ref: f64, init_scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let lstm = LstmParams::register(&mut params, "grid_lstm", 1, hidden, init_scale, &mut rng);
        let w = params.add(
            "grid_lstm.head.w",
            Tensor::uniform(&[1, hidden], -init_scale, init_scale, &mut rng),
            false,
        );
        let b = params.add("grid_lstm.head.b", Tensor::uniform(&[1], -init_scale, init_scale, &mut rng), false);
        Self {
            params,
            lstm,
            w,
            b,
            len_ref,
            time_ref,
        }
    }
}

impl Estimator for GridLstm {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn loss(&self, tape: &mut Tape, ex: &Example) -> Result<Var> {
        let y = self.total(tape, ex)?;
        relative_squared_error(tape, y, ex.truth())
    }

    fn total(&self, tape: &mut Tape, ex: &Example) -> Result<Var> {
        let xs = ex
            .inputs
            .cells
            .iter()
            .map(|c| tape.constant_vec(vec![c.len_m / self.len_ref]))
            .collect::<Result<Vec<_>>>()?;
        let h = self.lstm.last_hidden(tape, &xs)?;
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        let y = tape.matvec(w, h)?;
        let y = tape.add(y, b)?;
        tape.scale(y, self.time_ref)
    }
}

pub fn baseline_grid_lstm(model: &GridLstm, ex: &Example) -> Result<f64> {
    model.predict(ex)
}

/// One row of an ablation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub features: String,
    pub loss: String,
    pub best_epoch: usize,
    pub best_val_mape: f64,
    pub first_epoch_val_mape: f64,
    pub test: MetricsReport,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Variant {
    pub features: FeatureVariant,
    pub loss: LossVariant,
}

impl Variant {
    pub fn name(&self) -> String {
        format!("{}/{}", self.features, self.loss)
    }
}

/// Trains and evaluates every variant from the same seed.
pub fn run_ablation_suite(
    train_set: &[Example],
    val: &[Example],
    test: &[Example],
    base: ModelConfig,
    cell_count: usize,
    variants: &[Variant],
    cfg: &TrainConfig,
) -> Result<Vec<AblationRow>> {
    variants
        .iter()
        .map(|v| {
            let mcfg = ModelConfig {
                features: v.features,
                loss: v.loss,
                ..base
            };
            let mut model = Model::new(mcfg, cell_count, cfg.seed);
            let report = train(&mut model, train_set, val, cfg)?;
            let mut test_report = evaluate(&model, test)?;
            test_report.curve = report.curve.clone();
            info!("{}: best val MAPE {:.4}, test MAPE {:.4}", v.name(), report.best_val_mape, test_report.mape);
            Ok(AblationRow {
                name: v.name(),
                features: v.features.to_string(),
                loss: v.loss.to_string(),
                best_epoch: report.best_epoch,
                best_val_mape: report.best_val_mape,
                first_epoch_val_mape: report.curve[0].val_mape,
                test: test_report,
            })
        })
        .collect()
}

/// `name,count,mae,rmse,mape` rows.
pub fn write_metrics_csv<W: Write>(out: W, rows: &[(String, MetricsReport)]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["name", "count", "mae", "rmse", "mape"])?;
    for (name, r) in rows {
        w.write_record([
            name.clone(),
            r.count.to_string(),
            r.mae.to_string(),
            r.rmse.to_string(),
            r.mape.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `epoch,train_loss,val_mape` rows.
pub fn write_curve_csv<W: Write>(out: W, curve: &[EpochStats]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["epoch", "train_loss", "val_mape"])?;
    for s in curve {
        w.write_record([s.epoch.to_string(), s.train_loss.to_string(), s.val_mape.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ablation_csv<W: Write>(out: W, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record([
        "name",
        "features",
        "loss",
        "best_epoch",
        "best_val_mape",
        "first_epoch_val_mape",
        "test_mae",
        "test_rmse",
        "test_mape",
    ])?;
    for r in rows {
        w.write_record([
            r.name.clone(),
            r.features.clone(),
            r.loss.clone(),
            r.best_epoch.to_string(),
            r.best_val_mape.to_string(),
            r.first_epoch_val_mape.to_string(),
            r.test.mae.to_string(),
            r.test.rmse.to_string(),
            r.test.mape.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_hand_values() {
        let r = metrics(&[100.0, 200.0], &[110.0, 190.0]).unwrap();
        assert!((r.mae - 10.0).abs() < 1e-12);
        assert!((r.rmse - 10.0).abs() < 1e-12);
        let mape = (10.0 / 110.0 + 10.0 / 190.0) / 2.0;
        assert!((r.mape - mape).abs() < 1e-15);
        assert!((r.mape - 0.0718).abs() < 1e-4);

        let perfect = metrics(&[5.0, 7.0], &[5.0, 7.0]).unwrap();
        assert_eq!((perfect.mae, perfect.rmse, perfect.mape), (0.0, 0.0, 0.0));
        let one = metrics(&[3.0], &[7.0]).unwrap();
        assert_eq!(one.mae, one.rmse);
        assert!(metrics(&[], &[]).is_err());
    }

    fn one_param(v: Vec<f64>) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::vector(v), false);
        (store, id)
    }

    fn dense(store: &ParamStore, id: ParamId, g: Vec<f64>) -> Gradients {
        let mut tape = Tape::new(store);
        let x = tape.param(id);
        let c = tape.constant_vec(g).unwrap();
        let p = tape.mul(x, c).unwrap();
        let s = tape.sum(p).unwrap();
        tape.backward(s).unwrap()
    }

    #[test]
    fn adam_first_step_is_lr() {
        let (mut store, id) = one_param(vec![1.0, -3.0]);
        let grads = dense(&store, id, vec![1.0, 1.0]);
        let mut adam = Adam::new(&store, AdamConfig::default());
        adam_step(&mut store, &grads, &mut adam).unwrap();
        // m̂ = 1, v̂ = 1, so the step is lr / (1 + eps)
        let expected = 0.002 / (1.0 + 1e-8);
        assert!((store.value(id).data()[0] - (1.0 - expected)).abs() < 1e-15);
        assert!((store.value(id).data()[1] - (-3.0 - expected)).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_gradient() {
        let (mut store, id) = one_param(vec![0.5]);
        let mut adam = Adam::new(&store, AdamConfig::default());
        let zero = dense(&store, id, vec![0.0]);
        adam.step(&mut store, &zero).unwrap();
        assert_eq!(store.value(id).data(), &[0.5]);

        let one = dense(&store, id, vec![1.0]);
        adam.step(&mut store, &one).unwrap();
        let (m, v) = (adam.first_moment(id)[0], adam.second_moment(id)[0]);
        adam.step(&mut store, &zero).unwrap();
        assert_eq!(adam.first_moment(id)[0], 0.9 * m);
        assert_eq!(adam.second_moment(id)[0], 0.999 * v);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let (mut store, id) = one_param(vec![0.5]);
        let mut grads = dense(&store, id, vec![1.0]);
        grads.scale(f64::INFINITY);
        let mut adam = Adam::new(&store, AdamConfig::default());
        match adam.step(&mut store, &grads) {
            Err(Error::NonFinite(msg)) => assert!(msg.contains('w')),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(store.value(id).data(), &[0.5]);
    }

    #[test]
    fn sparse_rows_leave_others_untouched() {
        let mut store = ParamStore::new();
        let table = store.add("emb", Tensor::new(vec![3, 2], vec![1.0; 6]).unwrap(), true);
        let mut tape = Tape::new(&store);
        let r = tape.row(table, 2).unwrap();
        let s = tape.sum(r).unwrap();
        let grads = tape.backward(s).unwrap();
        let mut adam = Adam::new(&store, AdamConfig::default());
        adam.step(&mut store, &grads).unwrap();
        let v = store.value(table).data();
        assert_eq!(&v[..4], &[1.0; 4]);
        assert!(v[4] < 1.0 && v[5] < 1.0);
    }
}
