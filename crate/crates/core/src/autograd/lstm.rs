use rand::Rng;

use super::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Weights of one LSTM layer.
///
/// `w` is `[4H, I + H]` applied to `[x, h_prev]`, `b` is `[4H]`; gate
/// blocks are ordered input, forget, candidate, output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmParams {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmParams {
    /// Registers `{prefix}.w` and `{prefix}.b`, initialized uniformly in
    /// `[-scale, scale]`.
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let w = store.add(
            format!("{prefix}.w"),
            Tensor::uniform(&[4 * hidden, input + hidden], -scale, scale, rng),
            false,
        );
        let b = store.add(
            format!("{prefix}.b"),
            Tensor::uniform(&[4 * hidden], -scale, scale, rng),
            false,
        );
        Self { w, b, input, hidden }
    }

    /// One step: returns `(h, c)`.
    pub fn cell(&self, tape: &mut Tape, x: Var, h_prev: Var, c_prev: Var) -> Result<(Var, Var)> {
        if tape.shape(x) != [self.input] {
            return Err(Error::Shape {
                op: "lstm_cell",
                lhs: tape.shape(x).to_vec(),
                rhs: vec![self.input],
            });
        }
        let h = self.hidden;
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        let xh = tape.concat(&[x, h_prev])?;
        let pre = tape.matvec(w, xh)?;
        let pre = tape.add(pre, b)?;

        let i = tape.slice(pre, 0, h)?;
        let f = tape.slice(pre, h, h)?;
        let g = tape.slice(pre, 2 * h, h)?;
        let o = tape.slice(pre, 3 * h, h)?;
        let i = tape.sigmoid(i)?;
        let f = tape.sigmoid(f)?;
        let g = tape.tanh(g)?;
        let o = tape.sigmoid(o)?;

        let keep = tape.mul(f, c_prev)?;
        let write = tape.mul(i, g)?;
        let c = tape.add(keep, write)?;
        let tc = tape.tanh(c)?;
        let h_new = tape.mul(o, tc)?;
        Ok((h_new, c))
    }

    /// Runs the sequence from zero state and returns every hidden state.
    pub fn run(&self, tape: &mut Tape, xs: &[Var]) -> Result<Vec<Var>> {
        let mut h = tape.zeros(self.hidden);
        let mut c = tape.zeros(self.hidden);
        let mut out = Vec::with_capacity(xs.len());
        for &x in xs {
            (h, c) = self.cell(tape, x, h, c)?;
            out.push(h);
        }
        Ok(out)
    }

    /// Final hidden state; the zero vector for an empty sequence.
    pub fn last_hidden(&self, tape: &mut Tape, xs: &[Var]) -> Result<Var> {
        match self.run(tape, xs)?.last() {
            Some(&h) => Ok(h),
            None => Ok(tape.zeros(self.hidden)),
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autograd::{grad_check, sigmoid, GradCheckConfig};

    #[test]
    fn zero_weights_give_zero_state() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lstm = LstmParams::register(&mut store, "l", 3, 4, 0.0, &mut rng);
        let mut tape = Tape::new(&store);
        let x = tape.constant_vec(vec![1.0, -2.0, 0.5]).unwrap();
        let hs = lstm.run(&mut tape, &[x, x]).unwrap();
        assert!(tape.value(hs[1]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let (input, hidden) = (2, 3);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let lstm = LstmParams::register(&mut store, "l", input, hidden, 0.5, &mut rng);
        let bias = store.value_mut(lstm.b).data_mut();
        for v in &mut bias[hidden..2 * hidden] {
            *v = 100.0;
        }
        let w = store.value(lstm.w).data().to_vec();
        let b = store.value(lstm.b).data().to_vec();

        let x = [0.3, -0.7];
        let h_prev = [0.1, 0.2, -0.3];
        let c_prev = [0.5, -1.0, 2.0];
        let mut tape = Tape::new(&store);
        let xv = tape.constant_vec(x.to_vec()).unwrap();
        let hv = tape.constant_vec(h_prev.to_vec()).unwrap();
        let cv = tape.constant_vec(c_prev.to_vec()).unwrap();
        let (_, c) = lstm.cell(&mut tape, xv, hv, cv).unwrap();

        let xh: Vec<f64> = x.iter().chain(&h_prev).copied().collect();
        let pre = |r: usize| -> f64 {
            let row = &w[r * (input + hidden)..(r + 1) * (input + hidden)];
            row.iter().zip(&xh).map(|(a, b)| a * b).sum::<f64>() + b[r]
        };
        for k in 0..hidden {
            let i = sigmoid(pre(k));
            let g = pre(2 * hidden + k).tanh();
            let expected = c_prev[k] + i * g;
            assert!((tape.value(c)[k] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn hidden_gradient_matches_finite_differences() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lstm = LstmParams::register(&mut store, "l", 4, 8, 0.5, &mut rng);
        let xs: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let readout: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let report = grad_check(
            &store,
            |tape| {
                let vars = xs
                    .iter()
                    .map(|x| tape.constant_vec(x.clone()))
                    .collect::<Result<Vec<_>>>()?;
                let h = lstm.last_hidden(tape, &vars)?;
                let r = tape.constant_vec(readout.clone())?;
                let p = tape.mul(h, r)?;
                tape.sum(p)
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }
}
