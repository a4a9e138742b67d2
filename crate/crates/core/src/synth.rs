//! Synthetic city: a known per-cell, per-hour speed field and taxi-like
//! trips driven through it.
//!
//! ```
//! use tte::synth::{generate, SpeedField, SynthConfig};
//!
//! let cfg = SynthConfig { n: 8, trajectories: 20, min_cells: 3, max_cells: 6, ..SynthConfig::default() };
//! let field = SpeedField::city(cfg.n, cfg.seed);
//! let world = generate(&cfg, &field).unwrap();
//! assert_eq!(world.trajectories.len(), 20);
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

use crate::error::{Error, Result};
use crate::grid::{supercover, GridCell, GridSpec, GpsPoint};
use crate::ingest::Trajectory;
use crate::traffic::{hour_of_day, DAY_S};

/// Ground-truth speeds: `base[cell] * hourly[hour]`, with optional
/// log-normal noise applied per route piece.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeedField {
    pub n: usize,
    /// m/s, row-major by cell id.
    pub base: Vec<f64>,
    pub hourly: [f64; 24],
    /// Standard deviation of the log of the noise factor.
    pub sigma: f64,
}

impl SpeedField {
    pub fn constant(n: usize, v: f64) -> Self {
        Self {
            n,
            base: vec![v; n * n],
            hourly: [1.0; 24],
            sigma: 0.0,
        }
    }

    /// A slow centre, faster outskirts and a few smooth random bumps, with
    /// morning and evening rush hours.
    pub fn city(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f1e1d);
        let bumps: Vec<(f64, f64, f64, f64)> = (0..6)
            .map(|_| {
                (
                    rng.gen_range(0.0..n as f64),
                    rng.gen_range(0.0..n as f64),
                    rng.gen_range(0.1..0.25) * n as f64,
                    rng.gen_range(-2.5..2.5),
                )
            })
            .collect();
        let c = n as f64 / 2.0;
        let mut base = Vec::with_capacity(n * n);
        for x in 0..n {
            for y in 0..n {
                let (gx, gy) = (x as f64 + 0.5, y as f64 + 0.5);
                let r2 = ((gx - c).powi(2) + (gy - c).powi(2)) / (0.3 * n as f64).powi(2);
                let mut v = 14.0 - 7.0 * (-0.5 * r2).exp();
                for &(bx, by, w, a) in &bumps {
                    v += a * (-((gx - bx).powi(2) + (gy - by).powi(2)) / (2.0 * w * w)).exp();
                }
                base.push(v.max(3.0));
            }
        }
        let mut hourly = [1.0; 24];
        for (h, m) in hourly.iter_mut().enumerate() {
            let h = h as f64 + 0.5;
            *m = 1.0 - 0.5 * (-(h - 8.5).powi(2) / 2.0).exp() - 0.45 * (-(h - 18.0).powi(2) / 2.5).exp();
        }
        Self {
            n,
            base,
            hourly,
            sigma: 0.1,
        }
    }

    pub fn effective(&self, cell: GridCell, hour: usize) -> f64 {
        self.base[cell.x * self.n + cell.y] * self.hourly[hour % 24]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub trajectories: usize,
    pub interval_s: f64,
    pub seed: u64,
    /// Departures are spread uniformly over this many days.
    pub days: u32,
    /// Noise sigma, overriding the field's.
    pub sigma: f64,
    pub cell_m: f64,
    pub origin_lat: f64,
    pub origin_lon: f64,
    /// Unix time of the first day's midnight.
    pub start_t: f64,
    /// Manhattan distance between route endpoints, in cells.
    pub min_cells: usize,
    pub max_cells: usize,
    /// Probability of keeping the current heading when both axes still
    /// lead towards the destination.
    pub keep_heading: f64,
    pub max_retries: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 32,
            trajectories: 5000,
            interval_s: 15.0,
            seed: 7,
            days: 14,
            sigma: 0.1,
            cell_m: 200.0,
            origin_lat: 41.14,
            origin_lon: -8.62,
            start_t: 1_372_636_800.0,
            min_cells: 8,
            max_cells: 30,
            keep_heading: 0.85,
            max_retries: 1000,
        }
    }
}

impl SynthConfig {
    pub fn spec(&self) -> Result<GridSpec> {
        let side = self.cell_m * self.n as f64;
        GridSpec::from_extent(self.origin_lat, self.origin_lon, side, side, self.n)
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.trajectories == 0 || self.days == 0 {
            return Err(Error::Config("synth counts must be positive".into()));
        }
        if !(self.interval_s > 0.0) || !(self.cell_m > 0.0) || self.sigma < 0.0 {
            return Err(Error::Config("synth interval, cell size and sigma must be positive".into()));
        }
        if self.min_cells > self.max_cells {
            return Err(Error::Config("min_cells exceeds max_cells".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthWorld {
    pub spec: GridSpec,
    pub trajectories: Vec<Trajectory>,
}

/// Generates `cfg.trajectories` trips. Trip `k` draws from its own stream
/// of the seeded generator, so every trip depends only on `(seed, k)`.
pub fn generate(cfg: &SynthConfig, field: &SpeedField) -> Result<SynthWorld> {
    cfg.validate()?;
    if field.n != cfg.n {
        return Err(Error::Config(format!("speed field is {}x{}, grid is {}", field.n, field.n, cfg.n)));
    }
    let spec = cfg.spec()?;
    let field = SpeedField {
        sigma: cfg.sigma,
        ..field.clone()
    };
    let span = cfg.days as f64 * DAY_S as f64;
    let trajectories = (0..cfg.trajectories)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(k as u64 + 1);
            let cells = random_route(cfg, &mut rng)?;
            let depart = cfg.start_t + rng.gen_range(0.0..span).floor();
            let waypoints = route_waypoints(&cells, &mut rng);
            let points = simulate_route(&spec, &field, &waypoints, depart, cfg.interval_s, &mut rng)?;
            Ok(Trajectory {
                id: format!("synth-{k:05}"),
                points,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SynthWorld { spec, trajectories })
}

/// Axis-aligned walk from a random cell to a random destination, always
/// stepping towards it and preferring to keep its heading.
pub fn random_route<R: Rng>(cfg: &SynthConfig, rng: &mut R) -> Result<Vec<GridCell>> {
    let n = cfg.n;
    for _ in 0..cfg.max_retries {
        let a = GridCell::new(rng.gen_range(0..n), rng.gen_range(0..n));
        let b = GridCell::new(rng.gen_range(0..n), rng.gen_range(0..n));
        let dist = a.x.abs_diff(b.x) + a.y.abs_diff(b.y);
        if dist < cfg.min_cells.max(1) || dist > cfg.max_cells {
            continue;
        }
        let mut cells = vec![a];
        let mut cur = a;
        let mut along_x = rng.gen_bool(0.5);
        while cur != b {
            let can_x = cur.x != b.x;
            let can_y = cur.y != b.y;
            along_x = match (can_x, can_y) {
                (true, false) => true,
                (false, true) => false,
                _ => {
                    if rng.gen_bool(cfg.keep_heading) {
                        along_x
                    } else {
                        !along_x
                    }
                }
            };
            if along_x {
                cur.x = if b.x > cur.x { cur.x + 1 } else { cur.x - 1 };
            } else {
                cur.y = if b.y > cur.y { cur.y + 1 } else { cur.y - 1 };
            }
            cells.push(cur);
        }
        return Ok(cells);
    }
    Err(Error::Config(format!(
        "no route between {} and {} cells found after {} tries",
        cfg.min_cells, cfg.max_cells, cfg.max_retries
    )))
}

/// Cell centres of the route, with the endpoints jittered inside their
/// cells. Coordinates are continuous grid coordinates.
fn route_waypoints<R: Rng>(cells: &[GridCell], rng: &mut R) -> Vec<(f64, f64)> {
    let last = cells.len() - 1;
    cells
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let (jx, jy) = if i == 0 || i == last {
                (rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4))
            } else {
                (0.0, 0.0)
            };
            (c.x as f64 + 0.5 + jx, c.y as f64 + 0.5 + jy)
        })
        .collect()
}

/// Drives along `waypoints` (grid coordinates) from `depart`, at the field
/// speed of each crossed cell and the hour at which the cell is entered,
/// times one noise factor per piece. Emits a fix every `interval_s` plus one
/// on arrival.
pub fn simulate_route<R: Rng>(
    spec: &GridSpec,
    field: &SpeedField,
    waypoints: &[(f64, f64)],
    depart: f64,
    interval_s: f64,
    rng: &mut R,
) -> Result<Vec<GpsPoint>> {
    if waypoints.len() < 2 {
        return Err(Error::invalid("route needs at least two waypoints"));
    }
    let noise = if field.sigma > 0.0 {
        Some(LogNormal::new(0.0, field.sigma).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let (ch, cw) = (spec.cell_height_m(), spec.cell_width_m());
    let mut t = depart;
    let mut next_fix = depart;
    let mut points = Vec::new();
    for leg in waypoints.windows(2) {
        let (a, b) = (leg[0], leg[1]);
        let leg_m = ((b.0 - a.0) * ch).hypot((b.1 - a.1) * cw);
        let mut start = 0.0;
        for (cell, frac) in supercover(spec.n(), a, b) {
            if frac <= 0.0 {
                continue;
            }
            let factor = noise.as_ref().map_or(1.0, |d| d.sample(rng));
            let v = field.effective(cell, hour_of_day(t, 0)) * factor;
            let dt = frac * leg_m / v;
            // fixes that fall inside this piece
            while next_fix < t + dt {
                let u = start + frac * (next_fix - t) / dt;
                points.push(spec.point_at(a.0 + u * (b.0 - a.0), a.1 + u * (b.1 - a.1), next_fix));
                next_fix += interval_s;
            }
            t += dt;
            start += frac;
        }
    }
    let end = waypoints[waypoints.len() - 1];
    if points.last().is_none_or(|p| t > p.t) {
        points.push(spec.point_at(end.0, end.1, t));
    }
    Ok(points)
}
