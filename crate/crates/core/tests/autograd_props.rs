use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tte::autograd::{grad_check, GradCheckConfig, ParamId, ParamStore, Tape, Tensor, Var};
use tte::Result;

#[derive(Clone, Copy, Debug)]
enum Op {
    Add,
    Sub,
    Mul,
    Scale,
    MatVec,
    ConcatSlice,
    Gather,
    Sigmoid,
    Tanh,
    Square,
    DivConst,
    Row,
}

const OPS: [Op; 12] = [
    Op::Add,
    Op::Sub,
    Op::Mul,
    Op::Scale,
    Op::MatVec,
    Op::ConcatSlice,
    Op::Gather,
    Op::Sigmoid,
    Op::Tanh,
    Op::Square,
    Op::DivConst,
    Op::Row,
];

struct Case {
    store: ParamStore,
    a: ParamId,
    b: ParamId,
    m: ParamId,
    table: ParamId,
    /// Random readout weights so that the objective is not symmetric.
    readout: Vec<f64>,
    denom: Vec<f64>,
    idx: Vec<usize>,
    row: usize,
    start: usize,
    factor: f64,
}

fn case(k: usize, seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let a = store.add("a", Tensor::uniform(&[k], -2.0, 2.0, &mut rng), false);
    let b = store.add("b", Tensor::uniform(&[k], -2.0, 2.0, &mut rng), false);
    let m = store.add("m", Tensor::uniform(&[k + 1, k], -1.0, 1.0, &mut rng), false);
    let table = store.add("table", Tensor::uniform(&[4, k], -1.0, 1.0, &mut rng), true);
    Case {
        store,
        a,
        b,
        m,
        table,
        readout: (0..2 * k + 1).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        denom: (0..k).map(|_| rng.gen_range(0.5..3.0)).collect(),
        idx: (0..k + 2).map(|_| rng.gen_range(0..2 * k)).collect(),
        row: rng.gen_range(0..4),
        start: rng.gen_range(0..k),
        factor: rng.gen_range(-3.0..3.0),
    }
}

fn objective(c: &Case, op: Op, tape: &mut Tape) -> Result<Var> {
    let a = tape.param(c.a);
    let b = tape.param(c.b);
    let y = match op {
        Op::Add => tape.add(a, b)?,
        Op::Sub => tape.sub(a, b)?,
        Op::Mul => tape.mul(a, b)?,
        Op::Scale => tape.scale(a, c.factor)?,
        Op::MatVec => {
            let m = tape.param(c.m);
            tape.matvec(m, a)?
        }
        Op::ConcatSlice => {
            let ab = tape.concat(&[a, b])?;
            let k = tape.shape(a)[0];
            tape.slice(ab, c.start, k)?
        }
        Op::Gather => {
            let ab = tape.concat(&[a, b])?;
            tape.gather(ab, &c.idx)?
        }
        Op::Sigmoid => tape.sigmoid(a)?,
        Op::Tanh => tape.tanh(a)?,
        Op::Square => tape.square(a)?,
        Op::DivConst => tape.div_const(a, &c.denom)?,
        Op::Row => {
            let r = tape.row(c.table, c.row)?;
            tape.mul(r, b)?
        }
    };
    let len = tape.shape(y)[0];
    let w = tape.constant_vec(c.readout[..len].to_vec())?;
    let z = tape.mul(y, w)?;
    tape.sum(z)
}

proptest! {
    #[test]
    fn every_op_matches_finite_differences(k in 1usize..6, seed in any::<u64>(), which in 0usize..OPS.len()) {
        let c = case(k, seed);
        let op = OPS[which];
        let report = grad_check(&c.store, |t| objective(&c, op, t), &GradCheckConfig::default()).unwrap();
        prop_assert!(report.passed(), "{:?}: {:?}", op, report);
    }

    #[test]
    fn gradients_are_bitwise_deterministic(k in 1usize..6, seed in any::<u64>(), which in 0usize..OPS.len()) {
        let c = case(k, seed);
        let run = || {
            let mut tape = Tape::new(&c.store);
            let out = objective(&c, OPS[which], &mut tape).unwrap();
            let g = tape.backward(out).unwrap();
            let bits: Vec<Vec<u64>> = c
                .store
                .ids()
                .map(|id| g.dense(&c.store, id).iter().map(|v| v.to_bits()).collect())
                .collect();
            (tape.scalar(out).to_bits(), bits)
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn shared_use_accumulates(v in -10.0..10.0f64, uses in 1usize..5) {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::scalar(v), false);
        let mut tape = Tape::new(&store);
        let p = tape.param(x);
        let mut acc = p;
        for _ in 1..uses {
            acc = tape.add(acc, p).unwrap();
        }
        let out = tape.sum(acc).unwrap();
        let g = tape.backward(out).unwrap();
        prop_assert_eq!(g.dense(&store, x), vec![uses as f64]);
    }
}
