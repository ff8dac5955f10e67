//! `rwis`: offline pipeline commands and the online service.
//!
//! Global flags may also come from the environment: `RWIS_CONFIG`,
//! `RWIS_SEED`, `RWIS_OUT`, `RWIS_ARTIFACTS`.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rwis_core::anomaly::{write_labels_csv, LabelRecord};
use rwis_core::config::Config;
use rwis_core::data::{write_csv_file, SlotSource, HUMIDITY_BOUNDS, TEMP_BOUNDS};
use rwis_core::evaluation::{
    corrupt_station, generate_scenario, run_detector_benchmark, run_forecast_benchmark, Variant, PURPOSE_TEST,
};
use rwis_core::pipeline::{self, Artifacts, REPORT_FILE};
use rwis_core::{Channel, Horizon};
use rwis_service::Service;

#[derive(Parser, Debug)]
#[command(name = "rwis", version, about = "Road weather forecasting, correction and sensor fault detection")]
struct Cli {
    /// TOML configuration; missing keys take their defaults.
    #[arg(long, global = true, env = "RWIS_CONFIG")]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration's.
    #[arg(long, global = true, env = "RWIS_SEED")]
    seed: Option<u64>,
    /// Output directory (or store directory for `serve`).
    #[arg(long, global = true, env = "RWIS_OUT")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic benchmark stations as CSV.
    Synth {
        /// Also write a fault-injected copy and its truth labels.
        #[arg(long)]
        faults: bool,
    },
    /// Train correction grid, anomaly predictor and thresholds.
    Train { data: PathBuf },
    /// Re-tune detection thresholds of existing artifacts.
    TuneThreshold {
        data: PathBuf,
        #[arg(long, env = "RWIS_ARTIFACTS")]
        artifacts: Option<PathBuf>,
    },
    /// Label every observation of a CSV with the trained detector.
    Detect {
        data: PathBuf,
        #[arg(long, env = "RWIS_ARTIFACTS")]
        artifacts: Option<PathBuf>,
    },
    /// Physical and corrected forecasts for every issue slot of a CSV.
    Correct {
        data: PathBuf,
        #[arg(long, env = "RWIS_ARTIFACTS")]
        artifacts: Option<PathBuf>,
    },
    /// Run both benchmarks into a timestamped directory.
    Evaluate,
    /// Serve the HTTP API.
    Serve {
        #[arg(long, env = "RWIS_ARTIFACTS")]
        artifacts: Option<PathBuf>,
        /// Listen address, overriding the configuration's.
        #[arg(long)]
        bind: Option<String>,
    },
}

fn load_config(cli: &Cli) -> Result<Config> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    Ok(match cli.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn out_dir(cli: &Cli, default: &Path) -> Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| default.to_path_buf());
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_rows(path: &Path, rows: &[pipeline::CorrectedForecast]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn synth(cli: &Cli, cfg: &Config, faults: bool) -> Result<()> {
    let dir = out_dir(cli, Path::new("."))?;
    let data = generate_scenario(&cfg.scenario)?;
    let path = dir.join("synthetic.csv");
    write_csv_file(&data.stations, &path)?;
    println!("wrote {} ({} stations, {} slots)", path.display(), data.stations.len(), data.spec.slots());
    if faults {
        let mut corrupted = Vec::new();
        let mut truth = Vec::new();
        for (i, s) in data.stations.iter().enumerate() {
            let (mut c, labels) = corrupt_station(&data.spec, PURPOSE_TEST, i, s)?;
            // sensors saturate; keep the file within the parser's bounds
            for slot in c.slots_mut() {
                if let Some(v) = &mut slot.reading {
                    for ch in Channel::ALL {
                        let (lo, hi) = if ch == Channel::Humidity { HUMIDITY_BOUNDS } else { TEMP_BOUNDS };
                        v[ch] = v[ch].clamp(lo, hi);
                    }
                }
            }
            for ch in Channel::ALL {
                for (t, l) in labels[ch.index()].iter().enumerate() {
                    truth.push(LabelRecord {
                        station_id: s.station_id().to_string(),
                        timestamp: s.slot_time(t),
                        channel: ch,
                        label: *l,
                        residual: 0.0,
                    });
                }
            }
            corrupted.push(c);
        }
        let path = dir.join("synthetic_faulty.csv");
        write_csv_file(&corrupted, &path)?;
        let lpath = dir.join("synthetic_faulty_labels.csv");
        write_labels_csv(&truth, BufWriter::new(File::create(&lpath)?))?;
        println!("wrote {} and {}", path.display(), lpath.display());
    }
    Ok(())
}

fn train(cli: &Cli, cfg: &Config, data: &Path) -> Result<()> {
    let started = Instant::now();
    let stations = pipeline::load_series(data, cfg)?;
    let (artifacts, report) = pipeline::train(&stations, cfg)?;
    let dir = out_dir(cli, Path::new(&cfg.service.artifacts))?;
    artifacts.save(&dir)?;
    report.save(dir.join(REPORT_FILE))?;
    println!("grid {} from {} stations", report.grid_version, report.stations.len());
    println!("{:<12} {:>3} {:>7} {:>10} {:>10}", "channel", "h", "rows", "mae_0", "mae_final");
    for c in &report.cells {
        println!(
            "{:<12} {:>3} {:>7} {:>10.4} {:>10.4}",
            c.channel.to_string(),
            c.horizon.to_string(),
            c.rows,
            c.initial_mae,
            c.final_mae
        );
    }
    for t in &report.tuning {
        println!(
            "threshold {:<12} {:>9.4}  f1 {:.3}  ({} faults / {} slots)",
            t.channel.to_string(),
            t.threshold,
            t.f1,
            t.anomalies,
            t.samples
        );
    }
    println!("artifacts in {} ({:.1}s)", dir.display(), started.elapsed().as_secs_f64());
    Ok(())
}

fn artifacts_dir(cfg: &Config, given: &Option<PathBuf>) -> PathBuf {
    given.clone().unwrap_or_else(|| PathBuf::from(&cfg.service.artifacts))
}

fn tune(cli: &Cli, cfg: &Config, data: &Path, artifacts: &Option<PathBuf>) -> Result<()> {
    let src = artifacts_dir(cfg, artifacts);
    let mut art = Artifacts::load(&src)?;
    let stations = pipeline::load_series(data, cfg)?;
    if stations.is_empty() {
        bail!("{}: no stations", data.display());
    }
    let refs: Vec<_> = stations.iter().collect();
    let (detector, tuning) = pipeline::tune_thresholds(&art.predictor, &refs, cfg)?;
    art.detector = detector;
    let dir = out_dir(cli, &src)?;
    art.save(&dir)?;
    for t in &tuning {
        println!("threshold {:<12} {:>9.4}  f1 {:.3}", t.channel.to_string(), t.threshold, t.f1);
    }
    Ok(())
}

fn detect(cli: &Cli, cfg: &Config, data: &Path, artifacts: &Option<PathBuf>) -> Result<()> {
    let art = Artifacts::load(artifacts_dir(cfg, artifacts))?;
    let stations = pipeline::load_series(data, cfg)?;
    let labels = pipeline::detect_stations(&stations, &art)?;
    let dir = out_dir(cli, Path::new("."))?;
    let path = dir.join("labels.csv");
    write_labels_csv(&labels, BufWriter::new(File::create(&path)?))?;
    let flagged = labels.iter().filter(|l| l.label.is_anomaly()).count();
    println!("{flagged} of {} channel readings flagged; wrote {}", labels.len(), path.display());
    Ok(())
}

fn correct(cli: &Cli, cfg: &Config, data: &Path, artifacts: &Option<PathBuf>) -> Result<()> {
    let art = Artifacts::load(artifacts_dir(cfg, artifacts))?;
    let stations = pipeline::load_series(data, cfg)?;
    let rows = pipeline::correct_stations(&stations, &art)?;
    let dir = out_dir(cli, Path::new("."))?;
    let path = dir.join("corrected.csv");
    write_rows(&path, &rows)?;
    println!("{} forecasts; wrote {}", rows.len(), path.display());
    Ok(())
}

fn evaluate(cli: &Cli, cfg: &Config) -> Result<()> {
    let started = Instant::now();
    let root = cli.out.clone().unwrap_or_else(|| PathBuf::from("rwis-eval"));
    let dir = root.join(chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string());
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let data = generate_scenario(&cfg.scenario)?;
    let fb = run_forecast_benchmark(&data, &cfg.benchmark)?;
    let db = run_detector_benchmark(&data, &cfg.benchmark)?;
    fb.write_dir(&dir)?;
    db.write_dir(&dir)?;

    println!("forecast MAE (held-out stations)");
    println!("{:<12} {:>3} {:>14} {:>10} {:>10}", "channel", "h", "with_anomalies", "metro", "corrected");
    for c in Channel::ALL {
        for h in [Horizon::H1, Horizon::H2, Horizon::H3] {
            let m = |v| fb.table.forecast_mae(c, h, v).unwrap_or(f64::NAN);
            println!(
                "{:<12} {:>3} {:>14.4} {:>10.4} {:>10.4}",
                c.to_string(),
                h.to_string(),
                m(Variant::WithAnomalies),
                m(Variant::MetroOnly),
                m(Variant::Corrected)
            );
        }
    }
    println!("detector (ridge lambda {})", db.ridge_lambda);
    println!("{:<8} {:>9} {:>9} {:>9} {:>9}", "algo", "precision", "recall", "f1", "paper_f1");
    for r in &db.table.detector {
        println!(
            "{:<8} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
            r.algorithm, r.precision, r.recall, r.f1, r.paper_f1
        );
    }
    println!("wrote {} ({:.1}s)", dir.display(), started.elapsed().as_secs_f64());
    Ok(())
}

fn serve(cli: &Cli, cfg: &Config, artifacts: &Option<PathBuf>, bind: &Option<String>) -> Result<()> {
    let art = Artifacts::load(artifacts_dir(cfg, artifacts))?;
    let store = cli.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.service.store));
    let svc = Arc::new(Service::open(art, &store)?);
    tracing::info!(store = %store.display(), stations = svc.station_ids().len(), "store replayed");
    let addr = bind.clone().unwrap_or_else(|| cfg.service.bind.clone());
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(rwis_service::serve(svc, &addr))?;
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Synth { faults } => synth(&cli, &cfg, *faults),
        Command::Train { data } => train(&cli, &cfg, data),
        Command::TuneThreshold { data, artifacts } => tune(&cli, &cfg, data, artifacts),
        Command::Detect { data, artifacts } => detect(&cli, &cfg, data, artifacts),
        Command::Correct { data, artifacts } => correct(&cli, &cfg, data, artifacts),
        Command::Evaluate => evaluate(&cli, &cfg),
        Command::Serve { artifacts, bind } => serve(&cli, &cfg, artifacts, bind),
    }
}
