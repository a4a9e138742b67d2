use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{error, info, warn};

use tte::autograd::GradCheckConfig;
use tte::checkpoint::Checkpoint;
use tte::config::Config;
use tte::diagnostics::{model_grad_check, small_config};
use tte::features::{prepare_path, FeatureVariant};
use tte::grid::{trace_path, GpsPoint};
use tte::ingest::{parse_generic_csv, parse_porto_csv, write_generic_csv, Trajectory};
use tte::manifest::RunManifest;
use tte::model::{LossVariant, Model};
use tte::pipeline::{build_store, fit, prepare_dataset, test_metrics};
use tte::synth::{generate, SpeedField};
use tte::traffic::TrafficStore;
use tte::train::{run_ablation_suite, write_ablation_csv, write_curve_csv, write_metrics_csv, Variant};
use tte::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_CHECK: u8 = 3;
const EXIT_VERSION: u8 = 4;

/// Travel-time estimation on grid-partitioned GPS trajectories.
#[derive(Parser, Debug)]
#[command(name = "tte", version)]
struct Cli {
    /// Configuration file(s) of `key = value` lines, applied in order.
    #[arg(long, global = true)]
    config: Vec<PathBuf>,
    /// Override a configuration key, e.g. `--set epochs=5`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Where to write the run manifest (default: next to the main output).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Porto,
    Generic,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Suite {
    Features,
    Losses,
    All,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Parse raw trajectories, drop invalid ones and write the generic CSV.
    Ingest {
        #[arg(long, value_enum, default_value = "porto")]
        format: Format,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Generate the synthetic city and write it as generic CSV.
    Synth {
        #[arg(long)]
        output: PathBuf,
        /// Also write the matching `bbox`/`grid_n` configuration lines here.
        #[arg(long)]
        grid_config: Option<PathBuf>,
    },
    /// Build the traffic store from the training split.
    BuildStore {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train a model and write its checkpoint and learning curve.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Learning-curve CSV.
        #[arg(long)]
        curve: Option<PathBuf>,
        /// Reuse a store snapshot instead of rebuilding it.
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Evaluate a checkpoint and the mean-speed baseline on the test split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Report path; `.json` writes JSON, anything else CSV.
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Read one path per stdin line as `[[lat, lon, t], ...]` and print its
    /// estimated travel time in seconds.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        store: PathBuf,
    },
    /// Train feature or loss variants from one seed and tabulate them.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        suite: Suite,
    },
    /// Compare analytic and finite-difference gradients of the full loss.
    Gradcheck {
        #[arg(long, default_value_t = 8)]
        hidden: usize,
        /// Path lengths to check, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "1,2,5")]
        lengths: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::Ingest { .. } => "ingest",
            Cmd::Synth { .. } => "synth",
            Cmd::BuildStore { .. } => "build-store",
            Cmd::Train { .. } => "train",
            Cmd::Eval { .. } => "eval",
            Cmd::Predict { .. } => "predict",
            Cmd::Ablate { .. } => "ablate",
            Cmd::Gradcheck { .. } => "gradcheck",
        }
    }

    fn main_output(&self) -> Option<&Path> {
        match self {
            Cmd::Ingest { output, .. }
            | Cmd::Synth { output, .. }
            | Cmd::BuildStore { output, .. }
            | Cmd::Eval { output, .. }
            | Cmd::Ablate { output, .. } => Some(output),
            Cmd::Train { checkpoint, .. } => Some(checkpoint),
            Cmd::Predict { .. } | Cmd::Gradcheck { .. } => None,
        }
    }
}

enum Failure {
    Usage(String),
    Lib(Error),
    Check(String),
    /// Some predict lines failed; the rest were answered.
    BadLines(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Lib(Error::Io(e))
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Check(_) => EXIT_CHECK,
            Failure::BadLines(_) => EXIT_DATA,
            Failure::Lib(e) => match e {
                Error::Config(_) => EXIT_USAGE,
                Error::Version { .. } => EXIT_VERSION,
                _ => EXIT_DATA,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Usage(m) | Failure::Check(m) => m.clone(),
            Failure::Lib(e) => e.to_string(),
            Failure::BadLines(k) => format!("{k} input line(s) could not be estimated"),
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::Lib(Error::Format(format!("cannot open {}: {e}", path.display()))))
}

fn create(path: &Path, manifest: &mut RunManifest) -> Result<BufWriter<File>, Failure> {
    manifest.output(path);
    Ok(BufWriter::new(File::create(path)?))
}

fn read_trajectories(path: &Path, manifest: &mut RunManifest) -> Result<Vec<Trajectory>, Failure> {
    let reader = open(path)?;
    manifest.input(path)?;
    let parsed = manifest.timed("parse", || parse_generic_csv(reader))?;
    for e in parsed.errors.iter().take(5) {
        warn!("{}: {e}", path.display());
    }
    Ok(parsed.trajectories)
}

fn read_store(path: &Path, manifest: &mut RunManifest) -> Result<TrafficStore, Failure> {
    let reader = open(path)?;
    manifest.input(path)?;
    Ok(TrafficStore::read_snapshot(reader)?)
}

fn read_model(path: &Path, manifest: &mut RunManifest) -> Result<(Config, Model), Failure> {
    let reader = open(path)?;
    manifest.input(path)?;
    let ck = Checkpoint::read(reader)?;
    let cfg = Config::from_text(&ck.config)?;
    let model = ck.into_model(cfg.model)?;
    Ok((cfg, model))
}

fn run(cli: &Cli, cfg: &Config, manifest: &mut RunManifest) -> Result<(), Failure> {
    match &cli.cmd {
        Cmd::Ingest { format, input, output } => {
            let reader = open(input)?;
            manifest.input(input)?;
            let parsed = manifest.timed("parse", || match format {
                Format::Porto => parse_porto_csv(reader),
                Format::Generic => parse_generic_csv(reader),
            })?;
            for e in parsed.errors.iter().take(5) {
                warn!("{}: {e}", input.display());
            }
            let total = parsed.trajectories.len();
            let valid = tte::ingest::filter_valid(parsed.trajectories, &cfg.limits());
            info!(
                "{} trajectories kept, {} filtered, {} rows unparseable, {} empty",
                valid.len(),
                total - valid.len(),
                parsed.errors.len(),
                parsed.dropped
            );
            write_generic_csv(create(output, manifest)?, &valid)?;
        }
        Cmd::Synth { output, grid_config } => {
            let field = SpeedField::city(cfg.synth.n, cfg.synth.seed);
            let world = manifest.timed("generate", || generate(&cfg.synth, &field))?;
            write_generic_csv(create(output, manifest)?, &world.trajectories)?;
            if let Some(path) = grid_config {
                let b = world.spec.bbox();
                let mut w = create(path, manifest)?;
                writeln!(w, "bbox = {:?},{:?},{:?},{:?}", b.min_lat, b.min_lon, b.max_lat, b.max_lon)?;
                writeln!(w, "grid_n = {}", world.spec.n())?;
                w.flush()?;
            }
            info!("wrote {} trajectories", world.trajectories.len());
        }
        Cmd::BuildStore { data, output } => {
            let trajs = read_trajectories(data, manifest)?;
            let store = manifest.timed("build", || build_store(cfg, trajs))?;
            let mut w = create(output, manifest)?;
            store.write_snapshot(&mut w)?;
            w.flush()?;
        }
        Cmd::Train {
            data,
            checkpoint,
            curve,
            store,
        } => {
            let trajs = read_trajectories(data, manifest)?;
            let store = store.as_deref().map(|p| read_store(p, manifest)).transpose()?;
            let ds = manifest.timed("prepare", || prepare_dataset(cfg, trajs, store))?;
            info!("{} train / {} val / {} test examples", ds.train.len(), ds.val.len(), ds.test.len());
            let (model, report) = manifest.timed("train", || fit(cfg, &ds))?;
            info!("best epoch {} with val MAPE {:.4}", report.best_epoch, report.best_val_mape);
            let mut w = create(checkpoint, manifest)?;
            Checkpoint::from_model(&model, cfg.to_text()).write(&mut w)?;
            w.flush()?;
            if let Some(path) = curve {
                write_curve_csv(create(path, manifest)?, &report.curve)?;
            }
        }
        Cmd::Eval {
            data,
            checkpoint,
            output,
            store,
        } => {
            let (ck_cfg, model) = read_model(checkpoint, manifest)?;
            if ck_cfg.model != cfg.model {
                warn!("model settings from the checkpoint override the configuration");
            }
            let cfg = Config {
                model: ck_cfg.model,
                ..cfg.clone()
            };
            let trajs = read_trajectories(data, manifest)?;
            let store = store.as_deref().map(|p| read_store(p, manifest)).transpose()?;
            let ds = manifest.timed("prepare", || prepare_dataset(&cfg, trajs, store))?;
            let rows = manifest.timed("evaluate", || test_metrics(&model, &ds))?;
            for (name, r) in &rows {
                println!("{name}: MAE {:.2} s, RMSE {:.2} s, MAPE {:.4} (n = {})", r.mae, r.rmse, r.mape, r.count);
            }
            let mut w = create(output, manifest)?;
            if output.extension().is_some_and(|e| e == "json") {
                let map: std::collections::BTreeMap<_, _> = rows.into_iter().collect();
                serde_json::to_writer_pretty(&mut w, &map).map_err(Error::from)?;
                writeln!(w)?;
            } else {
                write_metrics_csv(&mut w, &rows)?;
            }
            w.flush()?;
        }
        Cmd::Predict { checkpoint, store } => {
            let (ck_cfg, model) = read_model(checkpoint, manifest)?;
            let store = read_store(store, manifest)?;
            let spec = store.grid_spec()?;
            let (rings, stages) = (ck_cfg.model.dims.rings, ck_cfg.model.stages);
            let stdout = io::stdout();
            let mut out = stdout.lock();
            let mut bad = 0;
            for (no, line) in io::stdin().lock().lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let estimate = serde_json::from_str::<Vec<[f64; 3]>>(&line)
                    .map_err(Error::from)
                    .and_then(|pts| {
                        let pts: Vec<GpsPoint> = pts.iter().map(|p| GpsPoint::new(p[0], p[1], p[2])).collect();
                        let path = trace_path(&spec, &pts)?;
                        let inputs = prepare_path(&path, &store, &spec, rings, stages)?;
                        model.predict(&inputs)
                    });
                match estimate {
                    Ok(v) => writeln!(out, "{v}")?,
                    Err(e) => {
                        bad += 1;
                        warn!("line {}: {e}", no + 1);
                        writeln!(out, "NaN")?;
                    }
                }
            }
            out.flush()?;
            if bad > 0 {
                return Err(Failure::BadLines(bad));
            }
        }
        Cmd::Ablate { data, output, suite } => {
            let trajs = read_trajectories(data, manifest)?;
            let ds = manifest.timed("prepare", || prepare_dataset(cfg, trajs, None))?;
            let mut variants = Vec::new();
            if matches!(suite, Suite::Features | Suite::All) {
                variants.extend(FeatureVariant::ALL.iter().map(|&features| Variant {
                    features,
                    loss: cfg.model.loss,
                }));
            }
            if matches!(suite, Suite::Losses | Suite::All) {
                for &loss in &LossVariant::ALL {
                    let v = Variant {
                        features: cfg.model.features,
                        loss,
                    };
                    if !variants.contains(&v) {
                        variants.push(v);
                    }
                }
            }
            let rows = manifest.timed("train", || {
                run_ablation_suite(
                    &ds.train,
                    &ds.val,
                    &ds.test,
                    cfg.model,
                    ds.spec.cell_count(),
                    &variants,
                    &cfg.train_config(),
                )
            })?;
            for r in &rows {
                println!("{:<24} best val MAPE {:.4}  test MAPE {:.4}", r.name, r.best_val_mape, r.test.mape);
            }
            write_ablation_csv(create(output, manifest)?, &rows)?;
        }
        Cmd::Gradcheck {
            hidden,
            lengths,
            seeds,
            tol,
        } => {
            if *seeds == 0 || lengths.is_empty() || lengths.contains(&0) {
                return Err(Failure::Usage("gradcheck needs positive path lengths and seeds".into()));
            }
            let gc = GradCheckConfig {
                tol: *tol,
                ..GradCheckConfig::default()
            };
            let mcfg = small_config(cfg.model.features, cfg.model.loss, *hidden);
            let mut worst = 0.0f64;
            let mut failed = Vec::new();
            for &n in lengths {
                for seed in 0..*seeds {
                    let r = model_grad_check(mcfg, n, cfg.seed.wrapping_add(seed), &gc)?;
                    worst = worst.max(r.max_rel_err);
                    if !r.passed() {
                        failed.push(format!("n={n} seed={seed}: {:?}", r.worst));
                    }
                }
            }
            println!("max relative error {worst:.3e} (tolerance {tol:.0e})");
            if !failed.is_empty() {
                return Err(Failure::Check(format!("gradient check failed: {}", failed.join("; "))));
            }
            println!("PASS");
        }
    }
    Ok(())
}

fn load_config(cli: &Cli) -> Result<Config, Failure> {
    let mut cfg = Config::default();
    for path in &cli.config {
        if !path.exists() {
            return Err(Failure::Lib(Error::Format(format!("config file {} not found", path.display()))));
        }
        cfg.apply_file(path)?;
    }
    for pair in &cli.overrides {
        cfg.apply_pair(pair)?;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(f) => {
            error!("{}", f.message());
            return ExitCode::from(f.code());
        }
    };
    let mut manifest = RunManifest::new(cli.cmd.name(), cfg.to_text(), cfg.seed);
    let result = run(&cli, &cfg, &mut manifest);
    manifest.success = result.is_ok();
    if let Err(f) = &result {
        manifest.error = Some(f.message());
    }
    let manifest_path = cli
        .manifest
        .clone()
        .or_else(|| cli.cmd.main_output().map(|p| PathBuf::from(format!("{}.manifest.json", p.display()))));
    if let Some(path) = manifest_path {
        if let Err(e) = manifest.write(&path) {
            warn!("could not write manifest {}: {e}", path.display());
        }
    }
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            error!("{}", f.message());
            ExitCode::from(f.code())
        }
    }
}
