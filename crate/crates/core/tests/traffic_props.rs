use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tte::grid::{neighbor_set, BBox, GpsPoint, GridCell, GridSpec};
use tte::ingest::Trajectory;
use tte::traffic::{StoreConfig, TrafficStore, LONG_HORIZON, SHORT_HORIZON};

const T0: f64 = 1_400_000_000.0;

fn spec() -> GridSpec {
    GridSpec::new(BBox::new(41.10, -8.70, 41.12, -8.675), 6).unwrap()
}

/// Slow trips departing on one of `days` days, within two hours of the
/// same time of day, so that both short and long bins fill up.
fn trips(days: u32) -> impl Strategy<Value = Vec<Trajectory>> {
    let trip = (0..days, 0.0..7200.0f64, prop::collection::vec((0.0..1.0f64, 0.0..1.0f64, 10u32..120), 2..6));
    prop::collection::vec(trip, 1..40).prop_map(|raw| {
        raw.into_iter()
            .enumerate()
            .map(|(k, (day, start, pts))| {
                let mut t = T0 + day as f64 * 86_400.0 + start.floor();
                let points = pts
                    .into_iter()
                    .map(|(u, v, dt)| {
                        t += dt as f64;
                        GpsPoint::new(41.10 + 0.02 * u, -8.70 + 0.025 * v, t)
                    })
                    .collect();
                Trajectory {
                    id: format!("t{k}"),
                    points,
                }
            })
            .collect()
    })
}

fn build(trajs: &[Trajectory]) -> TrafficStore {
    TrafficStore::build(trajs, &spec(), StoreConfig::default()).unwrap()
}

proptest! {
    #[test]
    fn build_ignores_input_order(trajs in trips(3), seed in any::<u64>()) {
        let mut shuffled = trajs.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(build(&trajs), build(&shuffled));
    }

    #[test]
    fn short_term_window_and_skip_rule(
        trajs in trips(1),
        dq in 0.0..9000.0f64,
        x in 0usize..6,
        y in 0usize..6,
        len in 0.0..200.0f64,
    ) {
        let store = build(&trajs);
        let q = T0 + dq;
        let cell = GridCell::new(x, y);
        let seq = store.query_short_term(cell, q, len);
        prop_assert!(seq.len() <= SHORT_HORIZON);
        let width = 300.0;
        let current = (q / width).floor() as i64;
        let mut populated = 0;
        for b in current - SHORT_HORIZON as i64 - 1..=current {
            let inside = b as f64 * width >= q - 3600.0 && (b + 1) as f64 * width <= q;
            if inside && store.short_bin(cell, b).is_some() {
                populated += 1;
            }
        }
        prop_assert_eq!(seq.len(), populated);
        for w in seq.windows(2) {
            prop_assert!(w[0].j > w[1].j);
        }
        for x in &seq {
            let bin = current - x.j as i64;
            prop_assert!(bin as f64 * width >= q - 3600.0);
            prop_assert!((bin + 1) as f64 * width <= q);
            let stat = store.short_bin(cell, bin).expect("emitted bin has a stat");
            prop_assert_eq!((stat.v, stat.n), (x.v, x.n));
            prop_assert!((x.est_time * x.v - len).abs() <= 1e-9 * len.max(1.0));
        }
    }

    #[test]
    fn long_term_skip_rule(trajs in trips(9), day in 1u32..10, dq in 0.0..7200.0f64, x in 0usize..6, y in 0usize..6) {
        let store = build(&trajs);
        let q = T0 + day as f64 * 86_400.0 + dq;
        let cell = GridCell::new(x, y);
        let seq = store.query_long_term(cell, q, 50.0);
        prop_assert!(seq.len() <= LONG_HORIZON);
        let day = (q.floor() as i64).div_euclid(86_400);
        let hour = ((q.floor() as i64).rem_euclid(86_400) / 3600) as usize;
        let expected: Vec<usize> = (1..=LONG_HORIZON)
            .rev()
            .filter(|&j| store.long_bin(cell, day - j as i64, hour).is_some())
            .collect();
        prop_assert_eq!(seq.iter().map(|x| x.j).collect::<Vec<_>>(), expected);
    }

    #[test]
    fn ring_pooling_matches_brute_force(
        trajs in trips(1),
        dq in 0.0..9000.0f64,
        x in 0usize..6,
        y in 0usize..6,
        d in 0usize..3,
    ) {
        let store = build(&trajs);
        let s = spec();
        let q = T0 + dq;
        let center = GridCell::new(x, y);
        let pooled = store.ring_pooled_input(&s, center, d, q, 75.0);
        let current = (q / 300.0).floor() as i64;
        let ring: Vec<GridCell> = neighbor_set(&s, center, d).into_iter().flatten().collect();
        for item in &pooled {
            let bin = current - item.j as i64;
            let (mut vn, mut n) = (0.0, 0u32);
            for c in &ring {
                if let Some(st) = store.short_bin(*c, bin) {
                    vn += st.v * st.n as f64;
                    n += st.n;
                }
            }
            prop_assert!(n > 0);
            prop_assert_eq!(item.n, n);
            prop_assert!((item.v - vn / n as f64).abs() <= 1e-12 * item.v);
            prop_assert!((item.est_time * item.v - 75.0).abs() <= 1e-9 * 75.0);
        }
        if d == 0 {
            prop_assert_eq!(pooled, store.query_short_term(center, q, 75.0));
        }
    }
}
