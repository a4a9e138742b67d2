//! Historical per-cell speed statistics and the traffic-sequence queries
//! that feed the short-term and long-term traffic encoders.
//!
//! Every consecutive GPS pair contributes its implied speed to every cell
//! the segment crosses, in the time bin of the segment's start. Short-term
//! bins are absolute `delta_s`-wide intervals; long-term buckets are
//! (local day, local hour-of-day) pairs.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::binio::{LeReader, LeWriter};
use crate::error::{Error, Result};
use crate::grid::{neighbor_set, supercover, BBox, GridCell, GridSpec};
use crate::ingest::Trajectory;

/// Number of short-term bins before the query (one hour of 5-minute bins).
pub const SHORT_HORIZON: usize = 12;
/// Number of previous days consulted for long-term features.
pub const LONG_HORIZON: usize = 7;
/// Contributions below this speed are clamped to it.
pub const MIN_SPEED_MPS: f64 = 0.5;

pub const DAY_S: i64 = 86_400;
pub const HOUR_S: i64 = 3_600;

const SNAPSHOT_MAGIC: &[u8; 8] = b"TTESTORE";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinStat {
    /// Mean speed, m/s.
    pub v: f64,
    pub n: u32,
}

/// One step of a traffic sequence: `(j, v_j, n_j, len / v_j)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrafficInput {
    /// Closeness index, 1 = most recent.
    pub j: usize,
    pub v: f64,
    pub n: u32,
    pub est_time: f64,
}

impl TrafficInput {
    fn from_stat(j: usize, stat: BinStat, len_m: f64) -> Self {
        Self {
            j,
            v: stat.v,
            n: stat.n,
            est_time: len_m / stat.v,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StoreConfig {
    /// Short-term bin width in seconds.
    pub delta_s: u32,
    /// Offset added to unix time to get the dataset's local clock.
    pub tz_offset_s: i64,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            delta_s: 300,
            tz_offset_s: 0,
        }
    }
}

/// Local hour-of-day of a unix timestamp.
pub fn hour_of_day(t: f64, tz_offset_s: i64) -> usize {
    let local = t.floor() as i64 + tz_offset_s;
    (local.rem_euclid(DAY_S) / HOUR_S) as usize
}

/// Local day index of a unix timestamp.
pub fn day_index(t: f64, tz_offset_s: i64) -> i64 {
    (t.floor() as i64 + tz_offset_s).div_euclid(DAY_S)
}

type ShortKey = (GridCell, i64);
type LongKey = (GridCell, i64, u8);

#[derive(Clone, Debug, PartialEq)]
pub struct TrafficStore {
    cfg: StoreConfig,
    bbox: BBox,
    n: usize,
    short: BTreeMap<ShortKey, BinStat>,
    long: BTreeMap<LongKey, BinStat>,
    cell_mean: BTreeMap<GridCell, BinStat>,
    global_mean: Option<BinStat>,
}

/// Order-independent mean: contributions are sorted before summation.
fn finalize(mut xs: Vec<f64>) -> BinStat {
    xs.sort_by(f64::total_cmp);
    let sum: f64 = xs.iter().sum();
    BinStat {
        v: sum / xs.len() as f64,
        n: xs.len() as u32,
    }
}

fn finalize_map<K: Ord>(m: BTreeMap<K, Vec<f64>>) -> BTreeMap<K, BinStat> {
    m.into_iter().map(|(k, v)| (k, finalize(v))).collect()
}

impl TrafficStore {
    /// Aggregates speed statistics from `trajs`. Trajectories that cannot be
    /// mapped onto the grid are skipped.
    pub fn build(trajs: &[Trajectory], spec: &GridSpec, cfg: StoreConfig) -> Result<Self> {
        if cfg.delta_s == 0 {
            return Err(Error::invalid("short-term bin width must be positive"));
        }
        let mut short: BTreeMap<ShortKey, Vec<f64>> = BTreeMap::new();
        let mut long: BTreeMap<LongKey, Vec<f64>> = BTreeMap::new();
        let mut per_cell: BTreeMap<GridCell, Vec<f64>> = BTreeMap::new();
        let mut all = Vec::new();
        let width = cfg.delta_s as f64;
        let mut skipped = 0usize;
        for traj in trajs {
            let Ok(coords) = traj
                .points
                .iter()
                .map(|p| spec.grid_coords(p))
                .collect::<Result<Vec<_>>>()
            else {
                skipped += 1;
                continue;
            };
            for (k, w) in traj.points.windows(2).enumerate() {
                let dt = w[1].t - w[0].t;
                if !(dt > 0.0) {
                    continue;
                }
                let speed = (spec.distance_m(&w[0], &w[1]) / dt).max(MIN_SPEED_MPS);
                let bin = (w[0].t / width).floor() as i64;
                let day = day_index(w[0].t, cfg.tz_offset_s);
                let hour = hour_of_day(w[0].t, cfg.tz_offset_s) as u8;
                for (cell, _) in supercover(spec.n(), coords[k], coords[k + 1]) {
                    short.entry((cell, bin)).or_default().push(speed);
                    long.entry((cell, day, hour)).or_default().push(speed);
                    per_cell.entry(cell).or_default().push(speed);
                    all.push(speed);
                }
            }
        }
        if skipped > 0 {
            log::warn!("traffic store: skipped {skipped} trajectories outside the grid");
        }
        Ok(Self {
            cfg,
            bbox: *spec.bbox(),
            n: spec.n(),
            short: finalize_map(short),
            long: finalize_map(long),
            cell_mean: finalize_map(per_cell),
            global_mean: (!all.is_empty()).then(|| finalize(all)),
        })
    }

    pub fn config(&self) -> StoreConfig {
        self.cfg
    }

    pub fn is_empty(&self) -> bool {
        self.short.is_empty()
    }

    /// The partition the store was built on.
    pub fn grid_spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.bbox, self.n)
    }

    /// Checks that this store was built on the same partition as `spec`.
    pub fn check_grid(&self, spec: &GridSpec) -> Result<()> {
        if self.n != spec.n() || self.bbox != *spec.bbox() {
            return Err(Error::invalid(format!(
                "store grid {}x{} {:?} does not match {}x{} {:?}",
                self.n,
                self.n,
                self.bbox,
                spec.n(),
                spec.n(),
                spec.bbox()
            )));
        }
        Ok(())
    }

    pub fn short_bin(&self, cell: GridCell, bin: i64) -> Option<BinStat> {
        self.short.get(&(cell, bin)).copied()
    }

    pub fn long_bin(&self, cell: GridCell, day: i64, hour: usize) -> Option<BinStat> {
        self.long.get(&(cell, day, hour as u8)).copied()
    }

    /// All-time mean speed of a cell.
    pub fn cell_mean(&self, cell: GridCell) -> Option<BinStat> {
        self.cell_mean.get(&cell).copied()
    }

    pub fn global_mean(&self) -> Option<BinStat> {
        self.global_mean
    }

    pub fn short_len(&self) -> usize {
        self.short.len()
    }

    pub fn long_len(&self) -> usize {
        self.long.len()
    }

    /// Absolute short-term bin index containing `t`.
    pub fn bin_of(&self, t: f64) -> i64 {
        (t / self.cfg.delta_s as f64).floor() as i64
    }

    /// `(j, bin)` for the short-term window, oldest first. Only bins lying
    /// entirely inside `[query_t - 12 * delta_s, query_t)` qualify: twelve of
    /// them when `query_t` falls on a bin boundary, eleven otherwise.
    pub fn short_window(&self, query_t: f64) -> impl Iterator<Item = (usize, i64)> {
        let width = self.cfg.delta_s as f64;
        let current = self.bin_of(query_t);
        let earliest = query_t - SHORT_HORIZON as f64 * width;
        (1..=SHORT_HORIZON)
            .rev()
            .map(move |j| (j, current - j as i64))
            .filter(move |&(_, bin)| bin as f64 * width >= earliest)
    }

    pub fn query_short_term(&self, cell: GridCell, query_t: f64, len_m: f64) -> Vec<TrafficInput> {
        self.short_window(query_t)
            .filter_map(|(j, bin)| self.short_bin(cell, bin).map(|s| TrafficInput::from_stat(j, s, len_m)))
            .collect()
    }

    pub fn query_long_term(&self, cell: GridCell, query_t: f64, len_m: f64) -> Vec<TrafficInput> {
        let day = day_index(query_t, self.cfg.tz_offset_s);
        let hour = hour_of_day(query_t, self.cfg.tz_offset_s);
        (1..=LONG_HORIZON)
            .rev()
            .filter_map(|j| {
                self.long_bin(cell, day - j as i64, hour)
                    .map(|s| TrafficInput::from_stat(j, s, len_m))
            })
            .collect()
    }

    /// Short-term sequence for the ring of cells at distance `d` from
    /// `center`, pooling each bin across the ring: count-weighted mean speed
    /// and summed count. `len_m` is always the centre cell's overlap.
    pub fn ring_pooled_input(
        &self,
        spec: &GridSpec,
        center: GridCell,
        d: usize,
        query_t: f64,
        len_m: f64,
    ) -> Vec<TrafficInput> {
        let ring: Vec<GridCell> = neighbor_set(spec, center, d).into_iter().flatten().collect();
        self.short_window(query_t)
            .filter_map(|(j, bin)| {
                let stats: Vec<BinStat> = ring.iter().filter_map(|&c| self.short_bin(c, bin)).collect();
                let pooled = match stats.as_slice() {
                    [] => return None,
                    [one] => *one,
                    many => {
                        let n: u32 = many.iter().map(|s| s.n).sum();
                        let weighted: f64 = many.iter().map(|s| s.v * s.n as f64).sum();
                        BinStat {
                            v: weighted / n as f64,
                            n,
                        }
                    }
                };
                Some(TrafficInput::from_stat(j, pooled, len_m))
            })
            .collect()
    }

    /// Writes the versioned little-endian snapshot.
    pub fn write_snapshot<W: Write>(&self, out: W) -> Result<()> {
        let mut w = LeWriter::new(out);
        w.bytes(SNAPSHOT_MAGIC)?;
        w.u32(SNAPSHOT_VERSION)?;
        w.u32(self.cfg.delta_s)?;
        w.i64(self.cfg.tz_offset_s)?;
        w.u32(self.n as u32)?;
        for v in [self.bbox.min_lat, self.bbox.min_lon, self.bbox.max_lat, self.bbox.max_lon] {
            w.f64(v)?;
        }
        let g = self.global_mean.unwrap_or(BinStat { v: 0.0, n: 0 });
        w.f64(g.v)?;
        w.u32(g.n)?;
        w.u64(self.short.len() as u64)?;
        for (&(cell, bin), s) in &self.short {
            w.u16(cell.x as u16)?;
            w.u16(cell.y as u16)?;
            w.i64(bin)?;
            w.f64(s.v)?;
            w.u32(s.n)?;
        }
        w.u64(self.long.len() as u64)?;
        for (&(cell, day, hour), s) in &self.long {
            w.u16(cell.x as u16)?;
            w.u16(cell.y as u16)?;
            w.i64(day)?;
            w.u8(hour)?;
            w.bytes(&[0; 3])?;
            w.f64(s.v)?;
            w.u32(s.n)?;
        }
        w.u64(self.cell_mean.len() as u64)?;
        for (&cell, s) in &self.cell_mean {
            w.u16(cell.x as u16)?;
            w.u16(cell.y as u16)?;
            w.f64(s.v)?;
            w.u32(s.n)?;
        }
        w.finish()?;
        Ok(())
    }

    pub fn read_snapshot<R: Read>(input: R) -> Result<Self> {
        let mut r = LeReader::new(input);
        if &r.array::<8>()? != SNAPSHOT_MAGIC {
            return Err(Error::Format("not a traffic store snapshot".into()));
        }
        let version = r.u32()?;
        if version != SNAPSHOT_VERSION {
            return Err(Error::Version {
                what: "traffic store snapshot",
                found: version,
                expected: SNAPSHOT_VERSION,
            });
        }
        let delta_s = r.u32()?;
        let tz_offset_s = r.i64()?;
        let n = r.u32()? as usize;
        let bbox = BBox::new(r.f64()?, r.f64()?, r.f64()?, r.f64()?);
        let g = BinStat { v: r.f64()?, n: r.u32()? };
        let cell = |r: &mut LeReader<R>| -> Result<GridCell> {
            Ok(GridCell::new(r.u16()? as usize, r.u16()? as usize))
        };
        let mut short = BTreeMap::new();
        for _ in 0..r.u64()? {
            let c = cell(&mut r)?;
            let bin = r.i64()?;
            short.insert((c, bin), BinStat { v: r.f64()?, n: r.u32()? });
        }
        let mut long = BTreeMap::new();
        for _ in 0..r.u64()? {
            let c = cell(&mut r)?;
            let day = r.i64()?;
            let hour = r.u8()?;
            r.array::<3>()?;
            long.insert((c, day, hour), BinStat { v: r.f64()?, n: r.u32()? });
        }
        let mut cell_mean = BTreeMap::new();
        for _ in 0..r.u64()? {
            let c = cell(&mut r)?;
            cell_mean.insert(c, BinStat { v: r.f64()?, n: r.u32()? });
        }
        r.expect_eof()?;
        Ok(Self {
            cfg: StoreConfig { delta_s, tz_offset_s },
            bbox,
            n,
            short,
            long,
            cell_mean,
            global_mean: (g.n > 0).then_some(g),
        })
    }
}
