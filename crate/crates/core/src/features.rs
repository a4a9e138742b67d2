//! Per-cell feature vectors `[V_sp, V_tp, V_dri, V_short, V_long]`.
//!
//! Everything that does not depend on trainable weights (cell ids, the
//! driving state, the traffic sequences) is computed once per path by
//! [`prepare_path`]; [`FeatureParams::assemble_path`] then records the
//! trainable part on a tape.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autograd::{LstmParams, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::grid::{GridCell, GridPath, GridSpec};
use crate::traffic::{hour_of_day, TrafficInput, TrafficStore, LONG_HORIZON, SHORT_HORIZON};

pub const HOURS_PER_DAY: usize = 24;
pub const DRIVING_STATE_LEN: usize = 4;

/// Which feature groups feed the recurrent layer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum FeatureVariant {
    /// Spatial and temporal embeddings only.
    St,
    /// The cell's all-time mean speed as a single scalar.
    NaiveTraf,
    /// Short- and long-term traffic encodings only.
    Traf,
    StTraf,
    #[default]
    StTrafDs,
}

impl FeatureVariant {
    pub const ALL: [FeatureVariant; 5] = [
        FeatureVariant::St,
        FeatureVariant::NaiveTraf,
        FeatureVariant::Traf,
        FeatureVariant::StTraf,
        FeatureVariant::StTrafDs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureVariant::St => "ST",
            FeatureVariant::NaiveTraf => "NaiveTraf",
            FeatureVariant::Traf => "Traf",
            FeatureVariant::StTraf => "ST+Traf",
            FeatureVariant::StTrafDs => "ST+Traf+DS",
        }
    }

    pub fn uses_embeddings(self) -> bool {
        matches!(self, FeatureVariant::St | FeatureVariant::StTraf | FeatureVariant::StTrafDs)
    }

    pub fn uses_traffic(self) -> bool {
        matches!(self, FeatureVariant::Traf | FeatureVariant::StTraf | FeatureVariant::StTrafDs)
    }

    pub fn uses_driving_state(self) -> bool {
        self == FeatureVariant::StTrafDs
    }

    pub fn uses_naive_speed(self) -> bool {
        self == FeatureVariant::NaiveTraf
    }
}

impl fmt::Display for FeatureVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureVariant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown feature variant {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureDims {
    /// Width of the spatial and temporal embeddings.
    pub emb: usize,
    /// Hidden size of the short- and long-term traffic encoders.
    pub traffic_hidden: usize,
    /// Neighbour rings `d = 0..rings` pooled for short-term traffic.
    pub rings: usize,
}

impl Default for FeatureDims {
    fn default() -> Self {
        Self {
            emb: 100,
            traffic_hidden: 100,
            rings: 3,
        }
    }
}

impl FeatureDims {
    pub fn feature_len(&self, variant: FeatureVariant) -> usize {
        let mut len = 0;
        if variant.uses_embeddings() {
            len += 2 * self.emb;
        }
        if variant.uses_driving_state() {
            len += DRIVING_STATE_LEN;
        }
        if variant.uses_traffic() {
            len += (self.rings + 1) * self.traffic_hidden;
        }
        if variant.uses_naive_speed() {
            len += 1;
        }
        len
    }
}

/// Cumulative-length fractions separating the start, middle and end stages.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageThresholds {
    pub start: f64,
    pub end: f64,
}

impl Default for StageThresholds {
    fn default() -> Self {
        Self { start: 0.25, end: 0.75 }
    }
}

/// `[is_start, is_middle, is_end, progress]` for cell `i`, where progress is
/// the fraction of the path length covered once the cell is left. The last
/// cell is always in the end stage.
pub fn driving_state(path: &GridPath, i: usize, stages: StageThresholds) -> Result<[f64; 4]> {
    if i >= path.len() {
        return Err(Error::invalid(format!("cell index {i} out of range for path of {}", path.len())));
    }
    let total = path.total_length_m();
    if total <= 0.0 {
        return Err(Error::InvalidTrajectory("path has zero length".into()));
    }
    let covered: f64 = path.cells[..=i].iter().map(|c| c.len_m).sum();
    let progress = (covered / total).min(1.0);
    let stage = if i + 1 == path.len() || progress >= stages.end {
        2
    } else if progress <= stages.start {
        0
    } else {
        1
    };
    let mut out = [0.0; 4];
    out[stage] = 1.0;
    out[3] = progress;
    Ok(out)
}

/// Fixed rescaling of raw traffic statistics before they enter an encoder,
/// so that gates do not start saturated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrafficScaling {
    /// Reference speed, m/s.
    pub v_ref: f64,
    /// Reference length, meters.
    pub len_ref: f64,
}

impl TrafficScaling {
    pub fn new(store: &TrafficStore, spec: &GridSpec) -> Self {
        let v_ref = store.global_mean().map_or(10.0, |s| s.v);
        Self {
            v_ref,
            len_ref: 0.5 * (spec.cell_height_m() + spec.cell_width_m()),
        }
    }

    /// `(j, v, n, len/v)` mapped to `(j/H, v/v_ref, ln(1+n), time/t_ref)`.
    pub fn encode(&self, x: &TrafficInput, horizon: usize) -> [f64; 4] {
        [
            x.j as f64 / horizon as f64,
            x.v / self.v_ref,
            (1.0 + x.n as f64).ln(),
            x.est_time * self.v_ref / self.len_ref,
        ]
    }
}

/// Weight-independent inputs of one path cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellInputs {
    pub cell: GridCell,
    /// Row of the spatial embedding table.
    pub row: usize,
    pub len_m: f64,
    pub driving: [f64; 4],
    /// One scaled sequence per ring, oldest first.
    pub short: Vec<Vec<[f64; 4]>>,
    pub long: Vec<[f64; 4]>,
    /// All-time mean speed of the cell over the reference speed.
    pub mean_speed: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathInputs {
    pub hour: usize,
    pub cells: Vec<CellInputs>,
}

impl PathInputs {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// Short-term sequences for rings `0..rings`, anchored at `query_t`.
pub fn short_traffic_inputs(
    store: &TrafficStore,
    spec: &GridSpec,
    cell: GridCell,
    query_t: f64,
    len_m: f64,
    rings: usize,
) -> Vec<Vec<TrafficInput>> {
    (0..rings)
        .map(|d| store.ring_pooled_input(spec, cell, d, query_t, len_m))
        .collect()
}

/// Computes every weight-independent input of `path`. Traffic queries for
/// all cells are anchored at the path start time.
pub fn prepare_path(
    path: &GridPath,
    store: &TrafficStore,
    spec: &GridSpec,
    rings: usize,
    stages: StageThresholds,
) -> Result<PathInputs> {
    let scaling = TrafficScaling::new(store, spec);
    let tz = store.config().tz_offset_s;
    let query_t = path.start_t;
    let fallback = store.global_mean().map_or(scaling.v_ref, |s| s.v);
    let cells = path
        .cells
        .iter()
        .enumerate()
        .map(|(i, pc)| {
            let short = short_traffic_inputs(store, spec, pc.cell, query_t, pc.len_m, rings)
                .iter()
                .map(|seq| seq.iter().map(|x| scaling.encode(x, SHORT_HORIZON)).collect())
                .collect();
            let long = store
                .query_long_term(pc.cell, query_t, pc.len_m)
                .iter()
                .map(|x| scaling.encode(x, LONG_HORIZON))
                .collect();
            let mean = store.cell_mean(pc.cell).map_or(fallback, |s| s.v);
            Ok(CellInputs {
                cell: pc.cell,
                row: spec.cell_id(pc.cell)?,
                len_m: pc.len_m,
                driving: driving_state(path, i, stages)?,
                short,
                long,
                mean_speed: mean / scaling.v_ref,
            })
        })
        .collect::<Result<_>>()?;
    Ok(PathInputs {
        hour: hour_of_day(query_t, tz),
        cells,
    })
}

/// Trainable feature-extraction weights for one variant.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureParams {
    pub variant: FeatureVariant,
    pub dims: FeatureDims,
    /// `[N², emb]`, keyed by cell id.
    pub spatial: Option<ParamId>,
    /// `[24, emb]`, keyed by hour of day.
    pub temporal: Option<ParamId>,
    /// Shared by all rings.
    pub short: Option<LstmParams>,
    pub long: Option<LstmParams>,
}

impl FeatureParams {
    /// Embeddings start uniform in `[-1, 1]`, encoder weights uniform in
    /// `[-lstm_scale, lstm_scale]`.
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        variant: FeatureVariant,
        dims: FeatureDims,
        cell_count: usize,
        lstm_scale: f64,
        rng: &mut R,
    ) -> Self {
        let (mut spatial, mut temporal, mut short, mut long) = (None, None, None, None);
        if variant.uses_embeddings() {
            spatial = Some(store.add(
                "spatial_emb",
                Tensor::uniform(&[cell_count, dims.emb], -1.0, 1.0, rng),
                true,
            ));
            temporal = Some(store.add(
                "temporal_emb",
                Tensor::uniform(&[HOURS_PER_DAY, dims.emb], -1.0, 1.0, rng),
                true,
            ));
        }
        if variant.uses_traffic() {
            short = Some(LstmParams::register(store, "short_lstm", 4, dims.traffic_hidden, lstm_scale, rng));
            long = Some(LstmParams::register(store, "long_lstm", 4, dims.traffic_hidden, lstm_scale, rng));
        }
        Self {
            variant,
            dims,
            spatial,
            temporal,
            short,
            long,
        }
    }

    pub fn feature_len(&self) -> usize {
        self.dims.feature_len(self.variant)
    }

    /// Concatenated last hidden states of the shared encoder, one per ring;
    /// an empty ring contributes zeros.
    pub fn encode_short_traffic(&self, tape: &mut Tape, rings: &[Vec<[f64; 4]>]) -> Result<Var> {
        let lstm = self.short.ok_or_else(|| Error::invalid("variant has no traffic encoder"))?;
        let parts = rings
            .iter()
            .map(|seq| encode_sequence(tape, &lstm, seq))
            .collect::<Result<Vec<_>>>()?;
        tape.concat(&parts)
    }

    pub fn encode_long_traffic(&self, tape: &mut Tape, seq: &[[f64; 4]]) -> Result<Var> {
        let lstm = self.long.ok_or_else(|| Error::invalid("variant has no traffic encoder"))?;
        encode_sequence(tape, &lstm, seq)
    }

    /// Feature vector of cell `i`.
    pub fn assemble(&self, tape: &mut Tape, path: &PathInputs, i: usize) -> Result<Var> {
        let temporal = match self.temporal {
            Some(t) => Some(tape.row(t, path.hour)?),
            None => None,
        };
        let cell = path
            .cells
            .get(i)
            .ok_or_else(|| Error::invalid(format!("cell index {i} out of range")))?;
        self.assemble_cell(tape, cell, temporal)
    }

    /// Feature vectors of every cell; the temporal row is looked up once.
    pub fn assemble_path(&self, tape: &mut Tape, path: &PathInputs) -> Result<Vec<Var>> {
        let temporal = match self.temporal {
            Some(t) => Some(tape.row(t, path.hour)?),
            None => None,
        };
        path.cells
            .iter()
            .map(|c| self.assemble_cell(tape, c, temporal))
            .collect()
    }

    fn assemble_cell(&self, tape: &mut Tape, cell: &CellInputs, temporal: Option<Var>) -> Result<Var> {
        let mut parts = Vec::with_capacity(5);
        if let (Some(sp), Some(tp)) = (self.spatial, temporal) {
            parts.push(tape.row(sp, cell.row)?);
            parts.push(tp);
        }
        if self.variant.uses_driving_state() {
            parts.push(tape.constant_vec(cell.driving.to_vec())?);
        }
        if self.variant.uses_traffic() {
            parts.push(self.encode_short_traffic(tape, &cell.short)?);
            parts.push(self.encode_long_traffic(tape, &cell.long)?);
        }
        if self.variant.uses_naive_speed() {
            parts.push(tape.constant_vec(vec![cell.mean_speed])?);
        }
        tape.concat(&parts)
    }
}

/// Spatial embedding row of `cell`.
pub fn embed_spatial(tape: &mut Tape, table: ParamId, spec: &GridSpec, cell: GridCell) -> Result<Var> {
    tape.row(table, spec.cell_id(cell)?)
}

/// Temporal embedding row for the hour of `start_t`.
pub fn embed_temporal(tape: &mut Tape, table: ParamId, start_t: f64, tz_offset_s: i64) -> Result<Var> {
    tape.row(table, hour_of_day(start_t, tz_offset_s))
}

fn encode_sequence(tape: &mut Tape, lstm: &LstmParams, seq: &[[f64; 4]]) -> Result<Var> {
    let xs = seq
        .iter()
        .map(|x| tape.constant_vec(x.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    lstm.last_hidden(tape, &xs)
}
