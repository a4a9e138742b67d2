use proptest::prelude::*;
use tte::grid::{neighbor_set, trace_path, BBox, GpsPoint, GridSpec};

fn spec(n: usize) -> GridSpec {
    GridSpec::new(BBox::new(41.10, -8.70, 41.20, -8.55), n).unwrap()
}

/// Points strictly inside the bbox, one every 1..60 seconds.
fn trajectory() -> impl Strategy<Value = Vec<GpsPoint>> {
    prop::collection::vec((0.0..1.0f64, 0.0..1.0f64, 1.0..60.0f64), 2..15).prop_map(|raw| {
        let mut t = 1_400_000_000.0;
        raw.into_iter()
            .map(|(u, v, dt)| {
                t += dt.round();
                GpsPoint::new(41.10 + 0.1 * u, -8.70 + 0.15 * v, t)
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn consecutive_cells_are_adjacent(n in 1usize..40, traj in trajectory()) {
        let path = trace_path(&spec(n), &traj).unwrap();
        for w in path.cells.windows(2) {
            prop_assert_eq!(w[0].cell.chebyshev(&w[1].cell), 1);
        }
    }

    #[test]
    fn lengths_sum_to_polyline(n in 1usize..40, traj in trajectory()) {
        let s = spec(n);
        let path = trace_path(&s, &traj).unwrap();
        let poly: f64 = traj.windows(2).map(|w| s.distance_m(&w[0], &w[1])).sum();
        let total: f64 = path.cells.iter().map(|c| c.len_m).sum();
        prop_assert!((total - poly).abs() <= 1e-6 * poly.max(1e-9), "{} vs {}", total, poly);
    }

    #[test]
    fn every_fix_lands_on_a_sampled_cell(n in 1usize..40, traj in trajectory()) {
        let s = spec(n);
        let path = trace_path(&s, &traj).unwrap();
        for p in &traj {
            let cell = s.locate(p).unwrap();
            prop_assert!(path.cells.iter().any(|c| c.cell == cell && c.has_sample));
        }
    }

    #[test]
    fn tracing_is_deterministic(n in 1usize..40, traj in trajectory()) {
        let s = spec(n);
        prop_assert_eq!(trace_path(&s, &traj).unwrap(), trace_path(&s, &traj).unwrap());
    }

    #[test]
    fn neighbor_rings(n in 1usize..20, x in 0usize..20, y in 0usize..20, d in 0usize..5) {
        let s = spec(n);
        let g = tte::grid::GridCell::new(x % n, y % n);
        let ring = neighbor_set(&s, g, d);
        prop_assert_eq!(ring.len(), if d == 0 { 1 } else { 8 * d });
        let present: Vec<_> = ring.iter().flatten().copied().collect();
        for c in &present {
            prop_assert_eq!(c.chebyshev(&g), d);
        }
        // brute force: every in-grid cell at distance d is listed exactly once
        let expected = (0..n)
            .flat_map(|i| (0..n).map(move |j| tte::grid::GridCell::new(i, j)))
            .filter(|c| c.chebyshev(&g) == d)
            .count();
        let mut sorted = present.clone();
        sorted.sort();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), present.len());
        prop_assert_eq!(present.len(), expected);
    }
}
