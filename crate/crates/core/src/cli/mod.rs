//! `stdn ingest|synth|train|eval|ablate`.

mod manifest;

use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};

pub use manifest::{InputDigest, RunManifest};

use crate::config::KvConfig;
use crate::data::{
    ingest_trips, scan_time_range, synthesize_city, write_trips_csv, GeoBounds, GridSpec, SynthConfig, TensorBundle,
    TimeSpec,
};
use crate::error::{Error, Result};
use crate::io_util::write_atomic;
use crate::model::{ModelConfig, Stdn, Variant};
use crate::train::{
    evaluate, historical_average_baseline, persist_to_dir, prepare, run_ablation, run_once, samples_for_model,
    AblationPlan, Metrics, RunData, SplitConfig, TrainConfig,
};

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "STDN_OUT_ROOT";

#[derive(Debug, Parser)]
#[command(name = "stdn", version, about = "Spatial-temporal dynamic network traffic forecasting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Aggregate a trip CSV into a tensor bundle.
    Ingest(IngestArgs),
    /// Generate a synthetic trip CSV plus a ground-truth sidecar.
    Synth(SynthArgs),
    /// Train one model on a bundle.
    Train(TrainArgs),
    /// Score a checkpoint on a bundle.
    Eval(EvalArgs),
    /// Train a variant-by-seed grid and tabulate the results.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Trip CSV (region ids or coordinates).
    #[arg(long)]
    pub trips: PathBuf,
    /// Grid as ROWSxCOLS.
    #[arg(long, default_value = "10x20", value_parser = parse_grid)]
    pub grid: (usize, usize),
    /// Interval length in minutes.
    #[arg(long, default_value_t = 30)]
    pub interval: u32,
    /// Horizon start (epoch seconds or ISO-8601); defaults to midnight
    /// before the first departure.
    #[arg(long)]
    pub start: Option<String>,
    /// Horizon length in days; defaults to covering the last arrival.
    #[arg(long)]
    pub days: Option<usize>,
    /// Bounding box MIN_LAT,MIN_LON,MAX_LAT,MAX_LON for coordinate files.
    #[arg(long, value_parser = parse_bounds)]
    pub bounds: Option<GeoBounds>,
    /// Output bundle file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// `key = value` synthetic city description; defaults apply without one.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output trip CSV; the sidecar is written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SettingsArgs {
    /// `key = value` file with model, training and split settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra `key=value` overrides applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[command(flatten)]
    pub settings: SettingsArgs,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for checkpoint, run record and manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub bundle: PathBuf,
    /// Score targets in the last N days.
    #[arg(long, conflicts_with_all = ["from", "to"])]
    pub test_days: Option<usize>,
    /// First target interval scored.
    #[arg(long)]
    pub from: Option<usize>,
    /// One past the last target interval scored.
    #[arg(long)]
    pub to: Option<usize>,
    /// Samples whose true volume is below this are not scored.
    #[arg(long, default_value_t = 10.0)]
    pub threshold: f64,
    /// Metrics JSON output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[command(flatten)]
    pub settings: SettingsArgs,
    /// Comma-separated variants, in table order.
    #[arg(long, value_delimiter = ',', default_value = "LSTN,LSTN-FI,LSTN-FGM,LSTN-L,LSTN-SL,LSTN-PSAM,STDN")]
    pub variants: Vec<Variant>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub seeds: Vec<u64>,
    /// Cells trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Record wall-clock seconds in run records.
    #[arg(long)]
    pub timed: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_grid(s: &str) -> std::result::Result<(usize, usize), String> {
    let (r, c) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected ROWSxCOLS, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("invalid grid size `{s}`"));
    Ok((parse(r)?, parse(c)?))
}

fn parse_bounds(s: &str) -> std::result::Result<GeoBounds, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| format!("invalid bounds `{s}`"))?;
    match v.as_slice() {
        [min_lat, min_lon, max_lat, max_lon] => Ok(GeoBounds {
            min_lat: *min_lat,
            min_lon: *min_lon,
            max_lat: *max_lat,
            max_lon: *max_lon,
        }),
        _ => Err(format!("bounds need four numbers, got `{s}`")),
    }
}

/// Model, training and split settings after all layers were applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitConfig,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            split: SplitConfig::default(),
        }
    }
}

impl Settings {
    fn apply(&mut self, cfg: &KvConfig) -> Result<()> {
        self.model.apply_kv(cfg)?;
        self.train.apply_kv(cfg)?;
        self.split.test_days = cfg.get_or("test_days", self.split.test_days)?;
        self.split.train_fraction = cfg.get_or("train_fraction", self.split.train_fraction)?;
        cfg.reject_unknown()
    }

    /// Defaults, then the config file, then `key=value` overrides.
    pub fn load(args: &SettingsArgs) -> Result<Self> {
        let mut s = Self::default();
        if let Some(path) = &args.config {
            s.apply(&KvConfig::load(path)?)?;
        }
        if !args.overrides.is_empty() {
            s.apply(&KvConfig::parse(&args.overrides.join("\n"), "--set")?)?;
        }
        Ok(s)
    }
}

fn out_root() -> PathBuf {
    std::env::var_os(OUT_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

fn out_or_default(out: &Option<PathBuf>, name: &str) -> PathBuf {
    out.clone().unwrap_or_else(|| out_root().join(name))
}

fn read_bundle(path: &Path) -> Result<TensorBundle> {
    TensorBundle::read(&mut BufReader::new(File::open(path)?))
}

fn cmd_ingest(a: &IngestArgs) -> Result<()> {
    let mut grid = GridSpec::new(a.grid.0, a.grid.1)?;
    if let Some(b) = a.bounds {
        grid = grid.with_bounds(b)?;
    }
    let scanned = if a.start.is_none() || a.days.is_none() {
        scan_time_range(BufReader::new(File::open(&a.trips)?))?
    } else {
        None
    };
    let start = match &a.start {
        Some(s) => crate::data::parse_timestamp(s).ok_or_else(|| Error::config(format!("invalid --start `{s}`")))?,
        None => {
            let (lo, _) = scanned.ok_or_else(|| Error::data("no parseable trips to infer the horizon from"))?;
            lo.div_euclid(86_400) * 86_400
        }
    };
    let days = match a.days {
        Some(d) => d,
        None => {
            let (_, hi) = scanned.ok_or_else(|| Error::data("no parseable trips to infer the horizon from"))?;
            ((hi - start) / 86_400 + 1).max(1) as usize
        }
    };
    let time = TimeSpec::days(a.interval, start, days)?;
    let table = ingest_trips(BufReader::new(File::open(&a.trips)?), &grid, &time)?;
    for d in table.malformed.iter().take(10) {
        warn!("{}:{}: {}", a.trips.display(), d.line, d.message);
    }
    let bundle = TensorBundle::from_trips(&table, &grid, &time);
    let mut bytes = Vec::new();
    bundle.write(&mut bytes)?;
    let out = out_or_default(&a.out, "bundle.stdn");
    write_atomic(&out, &bytes)?;
    println!(
        "ingested {} trips into {}x{} grid, {} intervals of {} min; skipped {} outside grid, {} outside horizon, {} malformed",
        table.len(),
        grid.rows,
        grid.cols,
        time.intervals,
        a.interval,
        table.skipped_out_of_grid,
        table.skipped_out_of_horizon,
        table.malformed.len()
    );
    println!("wrote {}", out.display());
    Ok(())
}

/// Ground truth written next to a synthetic trip file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSidecar {
    pub seed: u64,
    pub trip_count: usize,
    pub dropped_late: usize,
    pub grid: GridSpec,
    pub time: TimeSpec,
    /// Injected peak shift per day, in intervals.
    pub day_shifts: Vec<i64>,
}

pub fn sidecar_path(trips: &Path) -> PathBuf {
    let mut s = trips.as_os_str().to_owned();
    s.push(".truth.json");
    PathBuf::from(s)
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let config = match &a.config {
        Some(p) => {
            let kv = KvConfig::load(p)?;
            let c = SynthConfig::from_kv(&kv)?;
            kv.reject_unknown()?;
            c
        }
        None => SynthConfig::default(),
    };
    let outcome = synthesize_city(&config, a.seed)?;
    let mut csv = Vec::new();
    write_trips_csv(&mut csv, &outcome.trips.records, &outcome.offsets_s, &outcome.time)?;
    let out = out_or_default(&a.out, "trips.csv");
    write_atomic(&out, &csv)?;
    let sidecar = SynthSidecar {
        seed: a.seed,
        trip_count: outcome.trips.len(),
        dropped_late: outcome.dropped_late,
        grid: outcome.grid.clone(),
        time: outcome.time.clone(),
        day_shifts: outcome.day_shifts.clone(),
    };
    write_atomic(&sidecar_path(&out), serde_json::to_string_pretty(&sidecar)?.as_bytes())?;
    println!(
        "synthesized {} trips over {} days ({} dropped past the horizon); wrote {}",
        outcome.trips.len(),
        config.days,
        outcome.dropped_late,
        out.display()
    );
    Ok(())
}

fn cmd_train(a: &TrainArgs, argv: &[String]) -> Result<()> {
    let mut settings = Settings::load(&a.settings)?;
    if let Some(v) = a.variant {
        settings.model.variant = v;
    }
    if let Some(s) = a.seed {
        settings.train.seed = s;
    }
    let out = out_or_default(&a.out, "train");
    fs::create_dir_all(&out)?;
    let mut inputs: Vec<&Path> = vec![&a.bundle];
    if let Some(c) = &a.settings.config {
        inputs.push(c);
    }
    RunManifest::new(argv.to_vec(), &inputs, serde_json::to_value(&settings)?)?.write(&out.join("manifest.json"))?;

    let bundle = read_bundle(&a.bundle)?;
    let spec = settings.model.sample_spec(bundle.time.intervals_per_day()?);
    let (set, split) = prepare(&bundle, &spec, &settings.split)?;
    info!("{} train / {} val / {} test samples", split.train.len(), split.val.len(), split.test.len());
    let data = RunData {
        set: &set,
        train: &split.train,
        val: &split.val,
        test: &split.test,
    };
    let (model, record) = run_once(data, &settings.model, &settings.train, false)?;
    let mut ckpt = Vec::new();
    model.save(&mut ckpt)?;
    write_atomic(&out.join("model.ckpt"), &ckpt)?;
    write_atomic(&out.join("run.json"), record.to_json()?.as_bytes())?;
    println!(
        "{} seed {}: {} epochs, best epoch {:?}, best val loss {:?}",
        record.variant,
        record.seed,
        record.history.len(),
        record.best_epoch,
        record.best_val_loss
    );
    if let Some(m) = &record.metrics {
        print_metrics(m);
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a (no samples)".into(), |x| format!("{x:.4}"))
}

fn print_metrics(m: &Metrics) {
    println!(
        "start: rmse {} mape {} (n_evaluated {} of {})",
        fmt_opt(m.start.rmse),
        fmt_opt(m.start.mape),
        m.start.n_evaluated,
        m.total
    );
    println!(
        "end:   rmse {} mape {} (n_evaluated {} of {})",
        fmt_opt(m.end.rmse),
        fmt_opt(m.end.mape),
        m.end.n_evaluated,
        m.total
    );
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let model = Stdn::load(&mut BufReader::new(File::open(&a.checkpoint)?))?;
    let bundle = read_bundle(&a.bundle)?;
    let set = samples_for_model(&bundle, &model)?;
    let m = bundle.volume.intervals();
    let range = match (a.test_days, a.from, a.to) {
        (Some(d), _, _) => m.saturating_sub(d * bundle.time.intervals_per_day()?)..m,
        (None, from, to) => from.unwrap_or(0)..to.unwrap_or(m),
    };
    let indices = set.indices_in(range.clone());
    let metrics = evaluate(&model, &set, &indices, a.threshold, 1)?;
    println!(
        "{} on target intervals {}..{} ({} samples, threshold {})",
        model.variant(),
        range.start,
        range.end,
        indices.len(),
        a.threshold
    );
    print_metrics(&metrics);
    if let Some(out) = &a.out {
        write_atomic(out, serde_json::to_string_pretty(&metrics)?.as_bytes())?;
    }
    Ok(())
}

fn cmd_ablate(a: &AblateArgs, argv: &[String]) -> Result<i32> {
    let settings = Settings::load(&a.settings)?;
    let out = out_or_default(&a.out, "ablate");
    let runs_dir = out.join("runs");
    fs::create_dir_all(&runs_dir)?;
    let mut inputs: Vec<&Path> = vec![&a.bundle];
    if let Some(c) = &a.settings.config {
        inputs.push(c);
    }
    let plan = AblationPlan {
        variants: a.variants.clone(),
        seeds: a.seeds.clone(),
        model: settings.model.clone(),
        train: settings.train.clone(),
        jobs: a.jobs.max(1),
        timed: a.timed,
    };
    let effective = serde_json::json!({ "settings": settings, "variants": plan.variants, "seeds": plan.seeds });
    RunManifest::new(argv.to_vec(), &inputs, effective)?.write(&out.join("manifest.json"))?;

    let bundle = read_bundle(&a.bundle)?;
    let spec = settings.model.sample_spec(bundle.time.intervals_per_day()?);
    let (set, split) = prepare(&bundle, &spec, &settings.split)?;
    let data = RunData {
        set: &set,
        train: &split.train,
        val: &split.val,
        test: &split.test,
    };
    let persist = persist_to_dir(&runs_dir);
    let report = run_ablation(data, &plan, Some(&persist))?;
    write_atomic(&out.join("report.csv"), report.to_csv()?.as_bytes())?;
    let mut text = report.to_text();
    if !split.test.is_empty() {
        let entries: Vec<_> = split.test.iter().map(|&k| set.entries[k]).collect();
        let ha = historical_average_baseline(
            &bundle.volume,
            &bundle.time,
            split.fit_range.clone(),
            &entries,
            settings.train.eval_threshold,
        )?;
        text.push_str(&format!(
            "HA baseline: rmse_start {} rmse_end {}\n",
            fmt_opt(ha.start.rmse),
            fmt_opt(ha.end.rmse)
        ));
    }
    write_atomic(&out.join("report.txt"), text.as_bytes())?;
    print!("{text}");
    Ok(report.exit_code())
}

/// Parse `argv` and run; returns the process exit code.
pub fn run(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Ingest(a) => cmd_ingest(a).map(|_| 0),
        Command::Synth(a) => cmd_synth(a).map(|_| 0),
        Command::Train(a) => cmd_train(a, &argv).map(|_| 0),
        Command::Eval(a) => cmd_eval(a).map(|_| 0),
        Command::Ablate(a) => cmd_ablate(a, &argv),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_flag_parses() {
        assert_eq!(parse_grid("4x4").unwrap(), (4, 4));
        assert_eq!(parse_grid("10X20").unwrap(), (10, 20));
        assert!(parse_grid("4").is_err());
    }

    #[test]
    fn ingest_defaults() {
        let cli = Cli::try_parse_from(["stdn", "ingest", "--trips", "t.csv"]).unwrap();
        let Command::Ingest(a) = cli.command else { panic!("wrong command") };
        assert_eq!((a.grid, a.interval), ((10, 20), 30));
    }

    #[test]
    fn omitted_settings_fall_back_to_defaults() {
        let s = Settings::load(&SettingsArgs {
            config: None,
            overrides: vec![],
        })
        .unwrap();
        let m = &s.model;
        assert_eq!(
            (m.patch_size, m.conv_layers, m.filters, m.flow_lookback, m.short_len, m.days, m.shifts, m.hidden),
            (7, 3, 64, 2, 7, 3, 3, 128)
        );
        assert_eq!((m.lambda, m.dropout), (0.5, 0.5));
        assert_eq!((s.train.batch_size, s.train.learning_rate), (64, 0.001));
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let s = Settings::load(&SettingsArgs {
            config: None,
            overrides: vec!["hidden = 16".into(), "batch_size=8".into()],
        })
        .unwrap();
        assert_eq!((s.model.hidden, s.train.batch_size), (16, 8));
        let bad = Settings::load(&SettingsArgs {
            config: None,
            overrides: vec!["hiden = 16".into()],
        });
        assert!(matches!(bad, Err(Error::Parse { .. })));
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(vec!["stdn".into(), "bogus".into()]), 1);
        assert_eq!(run(vec!["stdn".into(), "train".into()]), 1);
    }

    #[test]
    fn ablate_defaults_to_full_ladder() {
        let cli = Cli::try_parse_from(["stdn", "ablate", "--bundle", "b"]).unwrap();
        let Command::Ablate(a) = cli.command else { panic!("wrong command") };
        assert_eq!(a.variants, Variant::ALL.to_vec());
        assert_eq!(a.seeds, vec![1, 2, 3]);
    }
}
