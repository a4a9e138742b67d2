//! Bidirectional recurrent layer, interval predictions and the losses.
//!
//! Each BiLSTM step emits `h_i = [fwd_i, bwd_i]`. A single affine head
//! `(W, b)` turns prefix sums of the `h_i` into start-to-cell interval
//! predictions and suffix sums into cell-to-end predictions; the last
//! forward prediction is the travel time of the whole path.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{prefix_sums, suffix_sums, LstmParams, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::features::{FeatureDims, FeatureParams, FeatureVariant, PathInputs, StageThresholds};
use crate::grid::GridPath;

/// Training objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum LossVariant {
    /// Forward and backward interval losses.
    #[default]
    DualAux,
    ForAux,
    BackAux,
    /// Relative squared error of the total, predicted from the final
    /// forward and backward states.
    NoAux,
    /// Like `NoAux` with a unidirectional LSTM.
    LstmNoAux,
}

impl LossVariant {
    pub const ALL: [LossVariant; 5] = [
        LossVariant::DualAux,
        LossVariant::ForAux,
        LossVariant::BackAux,
        LossVariant::NoAux,
        LossVariant::LstmNoAux,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossVariant::DualAux => "dual_aux",
            LossVariant::ForAux => "for_aux",
            LossVariant::BackAux => "back_aux",
            LossVariant::NoAux => "no_aux",
            LossVariant::LstmNoAux => "lstm_no_aux",
        }
    }

    pub fn bidirectional(self) -> bool {
        self != LossVariant::LstmNoAux
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossVariant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown loss variant {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub features: FeatureVariant,
    pub loss: LossVariant,
    pub dims: FeatureDims,
    /// Hidden size of each direction of the recurrent layer.
    pub hidden: usize,
    pub stages: StageThresholds,
    /// Interval targets below this many seconds are raised to it.
    pub target_floor_s: f64,
    /// Half-width of the uniform init of recurrent weights and the head.
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            features: FeatureVariant::default(),
            loss: LossVariant::default(),
            dims: FeatureDims::default(),
            hidden: 100,
            stages: StageThresholds::default(),
            target_floor_s: 1.0,
            init_scale: 0.05,
        }
    }
}

/// All trainable weights plus the ids locating each group.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub cell_count: usize,
    pub params: ParamStore,
    pub features: FeatureParams,
    pub fwd: LstmParams,
    pub bwd: Option<LstmParams>,
    /// Head weight, `[1, 2 * hidden]` (`[1, hidden]` when unidirectional).
    pub w: ParamId,
    pub b: ParamId,
}

impl Model {
    pub fn new(cfg: ModelConfig, cell_count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let features = FeatureParams::register(&mut params, cfg.features, cfg.dims, cell_count, cfg.init_scale, &mut rng);
        let input = features.feature_len();
        let s = cfg.init_scale;
        let fwd = LstmParams::register(&mut params, "bilstm.fwd", input, cfg.hidden, s, &mut rng);
        let bwd = cfg
            .loss
            .bidirectional()
            .then(|| LstmParams::register(&mut params, "bilstm.bwd", input, cfg.hidden, s, &mut rng));
        let width = if bwd.is_some() { 2 * cfg.hidden } else { cfg.hidden };
        let w = params.add("head.w", Tensor::uniform(&[1, width], -s, s, &mut rng), false);
        let b = params.add("head.b", Tensor::uniform(&[1], -s, s, &mut rng), false);
        Self {
            cfg,
            cell_count,
            params,
            features,
            fwd,
            bwd,
            w,
            b,
        }
    }

    /// Per-step hidden states; `[fwd_i, bwd_i]` when bidirectional.
    pub fn hidden_states(&self, tape: &mut Tape, inputs: &PathInputs) -> Result<Vec<Var>> {
        let xs = self.features.assemble_path(tape, inputs)?;
        match self.bwd {
            Some(bwd) => bilstm_forward(tape, &self.fwd, &bwd, &xs),
            None => {
                if xs.is_empty() {
                    return Err(Error::invalid("empty path"));
                }
                self.fwd.run(tape, &xs)
            }
        }
    }

    /// Interval predictions (bidirectional models only).
    pub fn intervals(&self, tape: &mut Tape, inputs: &PathInputs) -> Result<IntervalPredictions> {
        let hs = self.hidden_states(tape, inputs)?;
        predict_intervals(tape, &hs, self.w, self.b)
    }

    /// Travel-time estimate of the whole path as a tape scalar.
    pub fn total(&self, tape: &mut Tape, inputs: &PathInputs) -> Result<Var> {
        match self.cfg.loss {
            LossVariant::DualAux | LossVariant::ForAux | LossVariant::BackAux => {
                Ok(self.intervals(tape, inputs)?.total)
            }
            LossVariant::NoAux | LossVariant::LstmNoAux => {
                let hs = self.hidden_states(tape, inputs)?;
                let last = *hs.last().expect("non-empty");
                let feat = match self.cfg.loss {
                    LossVariant::NoAux => {
                        let h = self.cfg.hidden;
                        let fwd_n = tape.slice(last, 0, h)?;
                        let bwd_1 = tape.slice(hs[0], h, h)?;
                        tape.concat(&[fwd_n, bwd_1])?
                    }
                    _ => last,
                };
                let w = tape.param(self.w);
                let b = tape.param(self.b);
                let y = tape.matvec(w, feat)?;
                tape.add(y, b)
            }
        }
    }

    /// Training objective of one example under the configured variant.
    pub fn loss(&self, tape: &mut Tape, inputs: &PathInputs, tgt: &SupervisionTargets) -> Result<Var> {
        let floor = self.cfg.target_floor_s;
        match self.cfg.loss {
            LossVariant::DualAux => {
                let pred = self.intervals(tape, inputs)?;
                dual_loss(tape, &pred, tgt, floor)
            }
            LossVariant::ForAux | LossVariant::BackAux => {
                let pred = self.intervals(tape, inputs)?;
                let (fwd, bwd) = interval_terms(tape, &pred, tgt, floor)?;
                let term = if self.cfg.loss == LossVariant::ForAux { fwd } else { bwd };
                tape.scale(term, 1.0 / tgt.sample_count() as f64)
            }
            LossVariant::NoAux | LossVariant::LstmNoAux => {
                let pred = self.total(tape, inputs)?;
                relative_squared_error(tape, pred, tgt.total.max(floor))
            }
        }
    }

    pub fn predict(&self, inputs: &PathInputs) -> Result<f64> {
        let mut tape = Tape::new(&self.params);
        let total = self.total(&mut tape, inputs)?;
        Ok(tape.scalar(total))
    }
}

/// Runs both directions from zero state and concatenates per step.
pub fn bilstm_forward(tape: &mut Tape, fwd: &LstmParams, bwd: &LstmParams, xs: &[Var]) -> Result<Vec<Var>> {
    if xs.is_empty() {
        return Err(Error::invalid("empty path"));
    }
    let forward = fwd.run(tape, xs)?;
    let reversed: Vec<Var> = xs.iter().rev().copied().collect();
    let mut backward = bwd.run(tape, &reversed)?;
    backward.reverse();
    forward
        .into_iter()
        .zip(backward)
        .map(|(f, b)| tape.concat(&[f, b]))
        .collect()
}

/// Head outputs for one path, as tape values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntervalPredictions {
    /// `[n]`: start to leaving cell `i`.
    pub tf: Var,
    /// `[n]`: leaving cell `i` to the end; the last entry is a constant 0.
    pub tb: Var,
    /// `[1]`: equals the last entry of `tf`.
    pub total: Var,
}

/// `tf_i = W·(h_1 + … + h_i) + b`, `tb_i = W·(h_{i+1} + … + h_n) + b` for
/// `i < n` and `tb_n = 0`.
pub fn predict_intervals(tape: &mut Tape, hs: &[Var], w: ParamId, b: ParamId) -> Result<IntervalPredictions> {
    let pre = prefix_sums(tape, hs)?;
    let suf = suffix_sums(tape, hs)?;
    let wv = tape.param(w);
    let bv = tape.param(b);
    let n = hs.len();
    let mut tf = Vec::with_capacity(n);
    for &p in &pre {
        let y = tape.matvec(wv, p)?;
        tf.push(tape.add(y, bv)?);
    }
    let mut tb = Vec::with_capacity(n);
    for &s in &suf[..n - 1] {
        let y = tape.matvec(wv, s)?;
        tb.push(tape.add(y, bv)?);
    }
    tb.push(tape.zeros(1));
    let total = tf[n - 1];
    Ok(IntervalPredictions {
        tf: tape.concat(&tf)?,
        tb: tape.concat(&tb)?,
        total,
    })
}

/// Mask and interval targets of one path.
#[derive(Clone, Debug, PartialEq)]
pub struct SupervisionTargets {
    pub mask: Vec<bool>,
    /// Seconds from the first GPS point to leaving the cell; 1 where masked out.
    pub tf: Vec<f64>,
    /// Seconds from leaving the cell to the last GPS point; 1 where masked out.
    pub tb: Vec<f64>,
    pub total: f64,
}

impl SupervisionTargets {
    pub fn from_path(path: &GridPath) -> Self {
        let end = path.end_t();
        let mut mask = Vec::with_capacity(path.len());
        let mut tf = Vec::with_capacity(path.len());
        let mut tb = Vec::with_capacity(path.len());
        for c in &path.cells {
            match c.leave_t {
                Some(t) if c.has_sample => {
                    mask.push(true);
                    tf.push(t - path.start_t);
                    tb.push(end - t);
                }
                _ => {
                    mask.push(false);
                    tf.push(1.0);
                    tb.push(1.0);
                }
            }
        }
        Self {
            mask,
            tf,
            tb,
            total: path.total_time_s,
        }
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn sample_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Masked squared relative errors, summed: `(Σ_f, Σ_b)`. The backward term
/// skips the last cell, whose target and prediction are both 0.
fn interval_terms(
    tape: &mut Tape,
    pred: &IntervalPredictions,
    tgt: &SupervisionTargets,
    floor: f64,
) -> Result<(Var, Var)> {
    let n = tgt.len();
    if tape.shape(pred.tf) != [n] {
        return Err(Error::Shape {
            op: "dual_loss",
            lhs: tape.shape(pred.tf).to_vec(),
            rhs: vec![n],
        });
    }
    if tgt.sample_count() == 0 {
        return Err(Error::invalid("mask has no samples"));
    }
    let fwd_idx: Vec<usize> = (0..n).filter(|&i| tgt.mask[i]).collect();
    let bwd_idx: Vec<usize> = (0..n.saturating_sub(1)).filter(|&i| tgt.mask[i]).collect();
    let term = |tape: &mut Tape, v: Var, targets: &[f64], idx: &[usize]| -> Result<Var> {
        let t: Vec<f64> = idx.iter().map(|&i| targets[i].max(floor)).collect();
        if let Some(bad) = t.iter().find(|&&x| x <= 0.0) {
            return Err(Error::invalid(format!("non-positive interval target {bad}")));
        }
        let picked = tape.gather(v, idx)?;
        let tc = tape.constant_vec(t.clone())?;
        let diff = tape.sub(picked, tc)?;
        let sq = tape.square(diff)?;
        let t2: Vec<f64> = t.iter().map(|x| x * x).collect();
        let rel = tape.div_const(sq, &t2)?;
        tape.sum(rel)
    };
    let f = term(tape, pred.tf, &tgt.tf, &fwd_idx)?;
    let b = term(tape, pred.tb, &tgt.tb, &bwd_idx)?;
    Ok((f, b))
}

/// `[Σ M((tf̂−tf)/tf)² + Σ M'((tb̂−tb)/tb)²] / (2 ΣM)` with `M'` equal to
/// `M` except at the last cell.
pub fn dual_loss(tape: &mut Tape, pred: &IntervalPredictions, tgt: &SupervisionTargets, floor: f64) -> Result<Var> {
    let (f, b) = interval_terms(tape, pred, tgt, floor)?;
    let s = tape.add(f, b)?;
    tape.scale(s, 1.0 / (2.0 * tgt.sample_count() as f64))
}

/// `((pred − truth) / truth)²`.
pub fn relative_squared_error(tape: &mut Tape, pred: Var, truth: f64) -> Result<Var> {
    if truth <= 0.0 {
        return Err(Error::invalid(format!("non-positive travel time {truth}")));
    }
    let t = tape.constant_vec(vec![truth])?;
    let d = tape.sub(pred, t)?;
    let r = tape.scale(d, 1.0 / truth)?;
    let sq = tape.square(r)?;
    tape.sum(sq)
}

/// End-to-end estimate in seconds.
pub fn predict_travel_time(model: &Model, inputs: &PathInputs) -> Result<f64> {
    model.predict(inputs)
}
