//! Plain-text run configuration.
//!
//! One `key = value` pair per line. Blank lines are ignored and `#` starts a
//! comment. Unknown keys are rejected so that typos do not silently fall back
//! to defaults. [`Config::to_text`] writes every key in a fixed order, which
//! makes the text usable as a reproducibility snapshot.
//!
//! ```
//! use tte::config::Config;
//!
//! let mut cfg = Config::default();
//! cfg.apply_text("grid_n = 32\nepochs = 3 # short run\n").unwrap();
//! assert_eq!(cfg.grid_n, 32);
//! assert_eq!(cfg.train.epochs, 3);
//! assert_eq!(Config::from_text(&cfg.to_text()).unwrap(), cfg);
//! ```

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::BBox;
use crate::ingest::{Limits, SplitMode};
use crate::model::ModelConfig;
use crate::synth::SynthConfig;
use crate::traffic::StoreConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    /// Seed for the dataset split, parameter init and example shuffling.
    pub seed: u64,
    /// Grid bounds; `None` takes the extent of the training data.
    pub bbox: Option<BBox>,
    pub grid_n: usize,
    pub store: StoreConfig,
    pub min_points: usize,
    pub max_speed_mps: f64,
    pub split: SplitMode,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
}

impl Default for Config {
    fn default() -> Self {
        let limits = Limits::default();
        Self {
            seed: 42,
            bbox: None,
            grid_n: 128,
            store: StoreConfig::default(),
            min_points: limits.min_points,
            max_speed_mps: limits.max_speed_mps,
            split: SplitMode::Shuffle,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bbox(value: &str) -> Result<Option<BBox>> {
    if value == "auto" {
        return Ok(None);
    }
    let parts: Vec<f64> = value
        .split(',')
        .map(|p| parse("bbox", p.trim()))
        .collect::<Result<_>>()?;
    match parts[..] {
        [a, b, c, d] => Ok(Some(BBox::new(a, b, c, d))),
        _ => Err(Error::Config(
            "bbox: expected min_lat,min_lon,max_lat,max_lon or auto".into(),
        )),
    }
}

fn parse_split(value: &str) -> Result<SplitMode> {
    match value {
        "shuffle" => Ok(SplitMode::Shuffle),
        "time" => Ok(SplitMode::TimeOrdered),
        _ => Err(Error::Config(format!("split: expected shuffle or time, got {value:?}"))),
    }
}

impl Config {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_file(path)?;
        Ok(cfg)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        self.apply_text(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.apply_pair(line)
                .map_err(|e| Error::Config(format!("line {}: {e}", no + 1)))?;
        }
        Ok(())
    }

    /// Applies a single `key=value` override.
    pub fn apply_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key = value, got {pair:?}")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        let s = &mut self.synth;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "bbox" => self.bbox = parse_bbox(v)?,
            "grid_n" => self.grid_n = parse(key, v)?,
            "delta_s" => self.store.delta_s = parse(key, v)?,
            "tz_offset_s" => self.store.tz_offset_s = parse(key, v)?,
            "min_points" => self.min_points = parse(key, v)?,
            "max_speed_mps" => self.max_speed_mps = parse(key, v)?,
            "split" => self.split = parse_split(v)?,

            "feature_variant" => m.features = v.parse()?,
            "loss_variant" => m.loss = v.parse()?,
            "emb_dim" => m.dims.emb = parse(key, v)?,
            "traffic_hidden" => m.dims.traffic_hidden = parse(key, v)?,
            "rings" => m.dims.rings = parse(key, v)?,
            "hidden" => m.hidden = parse(key, v)?,
            "stage_start" => m.stages.start = parse(key, v)?,
            "stage_end" => m.stages.end = parse(key, v)?,
            "target_floor_s" => m.target_floor_s = parse(key, v)?,
            "init_scale" => m.init_scale = parse(key, v)?,

            "lr" => t.adam.lr = parse(key, v)?,
            "beta1" => t.adam.beta1 = parse(key, v)?,
            "beta2" => t.adam.beta2 = parse(key, v)?,
            "adam_eps" => t.adam.eps = parse(key, v)?,
            "epochs" => t.epochs = parse(key, v)?,
            "patience" => t.patience = parse(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "grad_clip" => t.grad_clip = parse(key, v)?,

            "synth_seed" => s.seed = parse(key, v)?,
            "synth_n" => s.n = parse(key, v)?,
            "synth_trajectories" => s.trajectories = parse(key, v)?,
            "synth_interval_s" => s.interval_s = parse(key, v)?,
            "synth_days" => s.days = parse(key, v)?,
            "synth_sigma" => s.sigma = parse(key, v)?,
            "synth_cell_m" => s.cell_m = parse(key, v)?,
            "synth_min_cells" => s.min_cells = parse(key, v)?,
            "synth_max_cells" => s.max_cells = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every key in canonical order. Floats use the shortest representation
    /// that parses back to the same value.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let s = &self.synth;
        let bbox = match &self.bbox {
            None => "auto".to_string(),
            Some(b) => format!("{:?},{:?},{:?},{:?}", b.min_lat, b.min_lon, b.max_lat, b.max_lon),
        };
        let split = match self.split {
            SplitMode::Shuffle => "shuffle",
            SplitMode::TimeOrdered => "time",
        };
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("bbox", bbox);
        kv("grid_n", self.grid_n.to_string());
        kv("delta_s", self.store.delta_s.to_string());
        kv("tz_offset_s", self.store.tz_offset_s.to_string());
        kv("min_points", self.min_points.to_string());
        kv("max_speed_mps", format!("{:?}", self.max_speed_mps));
        kv("split", split.to_string());
        kv("feature_variant", m.features.name().to_string());
        kv("loss_variant", m.loss.name().to_string());
        kv("emb_dim", m.dims.emb.to_string());
        kv("traffic_hidden", m.dims.traffic_hidden.to_string());
        kv("rings", m.dims.rings.to_string());
        kv("hidden", m.hidden.to_string());
        kv("stage_start", format!("{:?}", m.stages.start));
        kv("stage_end", format!("{:?}", m.stages.end));
        kv("target_floor_s", format!("{:?}", m.target_floor_s));
        kv("init_scale", format!("{:?}", m.init_scale));
        kv("lr", format!("{:?}", t.adam.lr));
        kv("beta1", format!("{:?}", t.adam.beta1));
        kv("beta2", format!("{:?}", t.adam.beta2));
        kv("adam_eps", format!("{:?}", t.adam.eps));
        kv("epochs", t.epochs.to_string());
        kv("patience", t.patience.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("grad_clip", format!("{:?}", t.grad_clip));
        kv("synth_seed", s.seed.to_string());
        kv("synth_n", s.n.to_string());
        kv("synth_trajectories", s.trajectories.to_string());
        kv("synth_interval_s", format!("{:?}", s.interval_s));
        kv("synth_days", s.days.to_string());
        kv("synth_sigma", format!("{:?}", s.sigma));
        kv("synth_cell_m", format!("{:?}", s.cell_m));
        kv("synth_min_cells", s.min_cells.to_string());
        kv("synth_max_cells", s.max_cells.to_string());
        out
    }

    pub fn limits(&self) -> Limits {
        Limits {
            bbox: self.bbox,
            min_points: self.min_points,
            max_speed_mps: self.max_speed_mps,
        }
    }

    /// Training settings with the shared seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureVariant;
    use crate::model::LossVariant;

    #[test]
    fn comments_and_whitespace() {
        let cfg = Config::from_text("# header\n\n  hidden=8  \nloss_variant = for_aux # x\n").unwrap();
        assert_eq!(cfg.model.hidden, 8);
        assert_eq!(cfg.model.loss, LossVariant::ForAux);
    }

    #[test]
    fn unknown_key_and_bad_value() {
        let e = Config::from_text("hiden = 8").unwrap_err().to_string();
        assert!(e.contains("line 1") && e.contains("hiden"), "{e}");
        assert!(Config::from_text("grid_n = -3").is_err());
        assert!(Config::from_text("bbox = 1,2,3").is_err());
        assert!(Config::from_text("just words").is_err());
    }

    #[test]
    fn later_values_win() {
        let mut cfg = Config::from_text("epochs = 3\nepochs = 4").unwrap();
        assert_eq!(cfg.train.epochs, 4);
        cfg.apply_pair("feature_variant=ST").unwrap();
        assert_eq!(cfg.model.features, FeatureVariant::St);
    }

    #[test]
    fn canonical_text_round_trips() {
        let mut cfg = Config {
            bbox: Some(BBox::new(41.1, -8.7, 41.25, -8.5)),
            split: SplitMode::TimeOrdered,
            ..Config::default()
        };
        cfg.train.adam.lr = 0.1 + 0.2;
        cfg.store.tz_offset_s = -3600;
        let text = cfg.to_text();
        assert_eq!(Config::from_text(&text).unwrap(), cfg);
        assert_eq!(Config::from_text(&text).unwrap().to_text(), text);
    }
}
