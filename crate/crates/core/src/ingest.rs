//! Trajectory file parsing, sanity filtering and dataset splitting.
//!
//! Two input formats are supported:
//!
//! * the Porto taxi CSV, where `POLYLINE` is a JSON array of `[lon, lat]`
//!   pairs sampled every 15 seconds from the trip's `TIMESTAMP`;
//! * a generic one-point-per-row CSV with header `trip_id,lat,lon,t`, which
//!   is also what [`write_generic_csv`] produces.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{local_distance_m, BBox, GpsPoint};

/// Fixed sampling interval of the Porto polylines.
pub const PORTO_SAMPLING_INTERVAL_S: f64 = 15.0;

pub const GENERIC_HEADER: [&str; 4] = ["trip_id", "lat", "lon", "t"];

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub id: String,
    pub points: Vec<GpsPoint>,
}

impl Trajectory {
    pub fn start_t(&self) -> f64 {
        self.points.first().map_or(f64::NAN, |p| p.t)
    }

    pub fn duration_s(&self) -> f64 {
        match (self.points.first(), self.points.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }
}

/// A row that could not be turned into data; parsing continues past it.
#[derive(Clone, Debug, PartialEq)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Parsed {
    pub trajectories: Vec<Trajectory>,
    pub errors: Vec<RowError>,
    /// Rows skipped on purpose (missing-data flag, too few points).
    pub dropped: usize,
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Format(format!("header has no {name} column")))
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

pub fn parse_porto_csv<R: Read>(input: R) -> Result<Parsed> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Format(format!("unreadable header: {e}")))?
        .clone();
    let trip_col = column(&headers, "TRIP_ID")?;
    let ts_col = column(&headers, "TIMESTAMP")?;
    let missing_col = column(&headers, "MISSING_DATA")?;
    let poly_col = column(&headers, "POLYLINE")?;

    let mut out = Parsed::default();
    for rec in rdr.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                out.errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let line = line_of(&rec);
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        let missing = field(missing_col);
        if missing.eq_ignore_ascii_case("true") {
            out.dropped += 1;
            continue;
        }
        let start: i64 = match field(ts_col).parse() {
            Ok(v) => v,
            Err(e) => {
                out.errors.push(RowError {
                    line,
                    message: format!("TIMESTAMP: {e}"),
                });
                continue;
            }
        };
        let poly: Vec<[f64; 2]> = match serde_json::from_str(field(poly_col)) {
            Ok(v) => v,
            Err(e) => {
                out.errors.push(RowError {
                    line,
                    message: format!("POLYLINE: {e}"),
                });
                continue;
            }
        };
        if poly.len() < 2 {
            out.dropped += 1;
            continue;
        }
        let points = poly
            .iter()
            .enumerate()
            .map(|(k, &[lon, lat])| {
                GpsPoint::new(lat, lon, start as f64 + PORTO_SAMPLING_INTERVAL_S * k as f64)
            })
            .collect();
        out.trajectories.push(Trajectory {
            id: field(trip_col).to_string(),
            points,
        });
    }
    Ok(out)
}

pub fn parse_generic_csv<R: Read>(input: R) -> Result<Parsed> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Format(format!("unreadable header: {e}")))?
        .clone();
    let cols = GENERIC_HEADER
        .iter()
        .map(|name| column(&headers, name))
        .collect::<Result<Vec<_>>>()?;

    let mut out = Parsed::default();
    let mut index: HashMap<String, usize> = HashMap::new();
    for rec in rdr.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                out.errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let line = line_of(&rec);
        let get = |i: usize| rec.get(cols[i]).unwrap_or("").trim();
        let nums: std::result::Result<Vec<f64>, _> = (1..4).map(|i| get(i).parse::<f64>()).collect();
        let nums = match nums {
            Ok(v) if v.iter().all(|x| x.is_finite()) => v,
            Ok(_) => {
                out.errors.push(RowError {
                    line,
                    message: "non-finite coordinate or timestamp".into(),
                });
                continue;
            }
            Err(e) => {
                out.errors.push(RowError {
                    line,
                    message: format!("non-numeric field: {e}"),
                });
                continue;
            }
        };
        let id = get(0).to_string();
        let slot = *index.entry(id.clone()).or_insert_with(|| {
            out.trajectories.push(Trajectory {
                id,
                points: Vec::new(),
            });
            out.trajectories.len() - 1
        });
        out.trajectories[slot]
            .points
            .push(GpsPoint::new(nums[0], nums[1], nums[2]));
    }
    for traj in &mut out.trajectories {
        traj.points.sort_by(|a, b| a.t.total_cmp(&b.t));
    }
    Ok(out)
}

/// Writes trajectories in the generic format (`\n` line endings, shortest
/// round-trip float formatting).
pub fn write_generic_csv<W: Write>(out: W, trajs: &[Trajectory]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(GENERIC_HEADER)?;
    for traj in trajs {
        for p in &traj.points {
            w.write_record([
                traj.id.as_str(),
                &p.lat.to_string(),
                &p.lon.to_string(),
                &p.t.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Limits {
    pub bbox: Option<BBox>,
    pub min_points: usize,
    pub max_speed_mps: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            bbox: None,
            min_points: 2,
            max_speed_mps: 50.0,
        }
    }
}

impl Limits {
    pub fn accepts(&self, traj: &Trajectory) -> bool {
        let pts = &traj.points;
        if pts.len() < self.min_points.max(2) {
            return false;
        }
        if let Some(b) = &self.bbox {
            if !pts.iter().all(|p| b.contains(p.lat, p.lon)) {
                return false;
            }
        }
        pts.windows(2).all(|w| {
            let dt = w[1].t - w[0].t;
            dt > 0.0 && local_distance_m(&w[0], &w[1]) / dt <= self.max_speed_mps
        })
    }
}

pub fn filter_valid(trajs: Vec<Trajectory>, limits: &Limits) -> Vec<Trajectory> {
    trajs.into_iter().filter(|t| limits.accepts(t)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SplitMode {
    /// Seeded shuffle, then 80/10/10.
    #[default]
    Shuffle,
    /// Ordered by start time: earliest 80% train, then validation, then test.
    TimeOrdered,
}

impl std::str::FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shuffle" => Ok(Self::Shuffle),
            "time" => Ok(Self::TimeOrdered),
            other => Err(Error::Config(format!("unknown split mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct DatasetSplit {
    pub train: Vec<Trajectory>,
    pub val: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

pub fn split_dataset(mut trajs: Vec<Trajectory>, seed: u64, mode: SplitMode) -> Result<DatasetSplit> {
    let n = trajs.len();
    if n < 10 {
        return Err(Error::TooFewTrajectories(format!(
            "a split needs at least 10 trajectories, got {n}"
        )));
    }
    match mode {
        SplitMode::Shuffle => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            trajs.shuffle(&mut rng);
        }
        SplitMode::TimeOrdered => trajs.sort_by(|a, b| a.start_t().total_cmp(&b.start_t())),
    }
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let test = trajs.split_off(n_train + n_val);
    let val = trajs.split_off(n_train);
    Ok(DatasetSplit {
        train: trajs,
        val,
        test,
    })
}
