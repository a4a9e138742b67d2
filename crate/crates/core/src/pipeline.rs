//! End-to-end stages shared by the command-line tool and the tests.

use log::info;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::grid::{BBox, GridSpec};
use crate::ingest::{filter_valid, split_dataset, DatasetSplit, Trajectory};
use crate::model::Model;
use crate::traffic::TrafficStore;
use crate::train::{evaluate, evaluate_spd_mean, prepare_examples, train, Example, MetricsReport, TrainReport};

/// The bounding box of every point, or `None` when there are no points.
pub fn data_extent(trajs: &[Trajectory]) -> Option<BBox> {
    let mut pts = trajs.iter().flat_map(|t| &t.points);
    let first = pts.next()?;
    let mut b = BBox::new(first.lat, first.lon, first.lat, first.lon);
    for p in pts {
        b.min_lat = b.min_lat.min(p.lat);
        b.min_lon = b.min_lon.min(p.lon);
        b.max_lat = b.max_lat.max(p.lat);
        b.max_lon = b.max_lon.max(p.lon);
    }
    Some(b)
}

/// The configured grid, or one spanning `trajs` when no bbox is set.
pub fn grid_for(cfg: &Config, trajs: &[Trajectory]) -> Result<GridSpec> {
    let bbox = match cfg.bbox {
        Some(b) => b,
        None => data_extent(trajs).ok_or_else(|| Error::invalid("no points to derive a bounding box from"))?,
    };
    GridSpec::new(bbox, cfg.grid_n)
}

/// Split trajectories, the grid, the store built from the training split, and
/// model-ready examples for each split.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub spec: GridSpec,
    pub store: TrafficStore,
    pub split: DatasetSplit,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
}

/// Filters and splits `trajs`. The grid spans the filtered data unless the
/// configuration fixes a bbox.
pub fn split_valid(cfg: &Config, trajs: Vec<Trajectory>) -> Result<(GridSpec, DatasetSplit)> {
    let total = trajs.len();
    let valid = filter_valid(trajs, &cfg.limits());
    info!("{} of {total} trajectories pass the validity filter", valid.len());
    let spec = grid_for(cfg, &valid)?;
    let split = split_dataset(valid, cfg.seed, cfg.split)?;
    Ok((spec, split))
}

pub fn build_store(cfg: &Config, trajs: Vec<Trajectory>) -> Result<TrafficStore> {
    let (spec, split) = split_valid(cfg, trajs)?;
    TrafficStore::build(&split.train, &spec, cfg.store)
}

/// Prepares a dataset, reusing `store` when given. A supplied store must sit
/// on the same grid the configuration produces.
pub fn prepare_dataset(cfg: &Config, trajs: Vec<Trajectory>, store: Option<TrafficStore>) -> Result<Dataset> {
    let (spec, split) = split_valid(cfg, trajs)?;
    let store = match store {
        Some(s) => {
            s.check_grid(&spec)?;
            s
        }
        None => TrafficStore::build(&split.train, &spec, cfg.store)?,
    };
    let (rings, stages) = (cfg.model.dims.rings, cfg.model.stages);
    let (train, a) = prepare_examples(&split.train, &store, &spec, rings, stages);
    let (val, b) = prepare_examples(&split.val, &store, &spec, rings, stages);
    let (test, c) = prepare_examples(&split.test, &store, &spec, rings, stages);
    if a + b + c > 0 {
        info!("skipped {} trajectories that do not map onto the grid", a + b + c);
    }
    Ok(Dataset {
        spec,
        store,
        split,
        train,
        val,
        test,
    })
}

pub fn fit(cfg: &Config, data: &Dataset) -> Result<(Model, TrainReport)> {
    let mut model = Model::new(cfg.model, data.spec.cell_count(), cfg.seed);
    let report = train(&mut model, &data.train, &data.val, &cfg.train_config())?;
    Ok((model, report))
}

/// Test-split metrics of `model` and of the historical mean-speed baseline.
pub fn test_metrics(model: &Model, data: &Dataset) -> Result<Vec<(String, MetricsReport)>> {
    Ok(vec![
        ("model".to_string(), evaluate(model, &data.test)?),
        ("spd_mean".to_string(), evaluate_spd_mean(&data.store, &data.test)?),
    ])
}
