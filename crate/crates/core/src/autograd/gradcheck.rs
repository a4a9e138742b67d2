use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub eps: f64,
    /// Maximum accepted relative error.
    pub tol: f64,
    /// Denominator floor so that coordinates with a vanishing gradient are
    /// judged on absolute error.
    pub floor: f64,
    /// Check at most this many coordinates per parameter (sampled by
    /// `seed`); `None` checks all of them.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tol: 1e-4,
            floor: 1e-6,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoordCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// Coordinate with the largest relative error.
    pub worst: Option<CoordCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

/// Compares reverse-mode gradients of the scalar built by `f` with central
/// finite differences, one parameter coordinate at a time.
pub fn grad_check<F>(store: &ParamStore, f: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new(s);
        let out = f(&mut tape)?;
        let v = tape.scalar(out);
        if !v.is_finite() {
            return Err(Error::NonFinite("objective at perturbed point".into()));
        }
        Ok(v)
    };

    let grads = {
        let mut tape = Tape::new(store);
        let out = f(&mut tape)?;
        tape.backward(out)?
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut work = store.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
        tol: cfg.tol,
    };
    for (id, param) in store.iter() {
        let analytic = grads.dense(store, id);
        let len = param.value.len();
        let coords: Vec<usize> = match cfg.max_coords {
            Some(k) if k < len => {
                let mut c = sample(&mut rng, len, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..len).collect(),
        };
        for k in coords {
            let orig = param.value.data()[k];
            work.value_mut(id).data_mut()[k] = orig + cfg.eps;
            let up = eval(&work)?;
            work.value_mut(id).data_mut()[k] = orig - cfg.eps;
            let down = eval(&work)?;
            work.value_mut(id).data_mut()[k] = orig;

            let numeric = (up - down) / (2.0 * cfg.eps);
            let a = analytic[k];
            let rel_err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
            report.checked += 1;
            if report.worst.is_none() || rel_err > report.max_rel_err {
                report.max_rel_err = rel_err;
                report.worst = Some(CoordCheck {
                    param: param.name.clone(),
                    index: k,
                    analytic: a,
                    numeric,
                    rel_err,
                });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tensor;

    #[test]
    fn square_at_three() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(3.0), false);
        let report = grad_check(
            &store,
            |tape| {
                let x = tape.param(w);
                let y = tape.square(x)?;
                tape.sum(y)
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        let worst = report.worst.unwrap();
        assert_eq!(worst.analytic, 6.0);
        assert!((worst.numeric - 6.0).abs() < 1e-9);
    }

    #[test]
    fn corrupted_rule_is_located() {
        let mut store = ParamStore::new();
        store.add("a", Tensor::vector(vec![0.4, -0.2]), false);
        let b = store.add("b", Tensor::vector(vec![0.9, 0.05, -1.3]), false);
        let report = grad_check(
            &store,
            |tape| {
                let a = tape.param(crate::autograd::ParamId(0));
                let sa = tape.sum(a)?;
                let x = tape.param(b);
                // cube with a derivative that is off by a constant
                let y = tape.map(x, |v| v * v * v, |v, _| 3.0 * v * v + 0.5)?;
                let sb = tape.sum(y)?;
                tape.add(sa, sb)
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(!report.passed());
        let worst = report.worst.unwrap();
        assert_eq!(worst.param, "b");
        assert_eq!(worst.index, 1);
    }
}
