//! Command-line front end: simulate pendulum data, identify parameters, and
//! run the benchmark protocol.

mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kbinn::bench::{
    export_showcase, format_table, run_frequency_sweep, run_showcase, run_study, write_study, write_sweep, IdentResult,
    Method, RunStatus,
};
use kbinn::linalg::Mat;
use kbinn::model::{
    aligned_dt, load_measurements, measure, sample_times, save_measurements, simulate_model, DoublePendulum,
    MeasurementSeries, NoiseSpec, SeriesMeta,
};
use kbinn::nets::NetKind;
use kbinn::seed::derive_seed;
use kbinn::train::TrainMode;
use kbinn::{Error, Result};

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "kbinn", version, about = "Parameter identification with Kalman-Bucy-informed neural networks")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags override values from `--config`, which override built-in defaults.
#[derive(Args, Debug, Default)]
struct Common {
    /// TOML run configuration [default: built-in defaults]
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed for every random stream [default: 0]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory [default: out]
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Sampling frequency in Hz [default: 1000]
    #[arg(long, global = true, value_name = "HZ")]
    frequency_hz: Option<f64>,
    /// Measurement span in seconds [default: 3]
    #[arg(long, global = true, value_name = "S")]
    duration_s: Option<f64>,
    /// Measurement noise variance r in R = r·I [default: 0.25]
    #[arg(long, global = true, value_name = "R")]
    noise_r: Option<f64>,
    /// Number of study runs [default: 10]
    #[arg(long, global = true)]
    runs: Option<usize>,
    /// Comma-separated methods: kbinn, baseline [default: kbinn,baseline]
    #[arg(long, global = true, value_name = "LIST")]
    methods: Option<String>,
    /// Identification loss: kbinn or pinn [default: kbinn]
    #[arg(long, global = true, value_name = "MODE")]
    mode: Option<String>,
    /// Training epochs [default: 15000]
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Learning rate [default: 0.003]
    #[arg(long, global = true)]
    lr: Option<f64>,
    /// Parallel benchmark runs [default: 1]
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the damped pendulum and write noisy measurements
    Simulate,
    /// Identify pendulum parameters from a measurement CSV
    Identify {
        /// Measurement CSV with header t,y1,...,y4
        measurements: PathBuf,
    },
    /// Random-parameter study comparing identification methods
    Study,
    /// Identification error over sampling frequencies
    Sweep,
    /// Train on the showcase scenario and export the prediction band
    Showcase,
}

fn build_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = &c.out {
        cfg.out = v.clone();
    }
    if let Some(v) = c.frequency_hz {
        cfg.study.frequency_hz = v;
    }
    if let Some(v) = c.duration_s {
        cfg.study.duration_s = v;
    }
    if let Some(v) = c.noise_r {
        cfg.study.noise_r = v;
    }
    if let Some(v) = c.runs {
        cfg.study.runs = v;
    }
    if let Some(v) = &c.methods {
        cfg.methods = v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    }
    if let Some(v) = &c.mode {
        cfg.mode = match v.as_str() {
            "kbinn" => TrainMode::Kbinn,
            "pinn" => TrainMode::Pinn,
            other => return Err(Error::Config(format!("unknown mode `{other}` (expected kbinn or pinn)"))),
        };
    }
    if let Some(v) = c.epochs {
        cfg.profile.train.epochs = v;
    }
    if let Some(v) = c.lr {
        cfg.profile.train.learning_rate = v;
    }
    if let Some(v) = c.jobs {
        cfg.jobs = v;
    }
    cfg.profile.train.mode = cfg.mode;
    cfg.apply_master_seed();
    cfg.validate()?;
    Ok(cfg)
}

fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.json")
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("plain data serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    let s = &cfg.simulate;
    let study = &cfg.study;
    if study.noise_r.is_nan() || study.noise_r < 0.0 {
        return Err(Error::Config(format!("noise_r must be non-negative, got {}", study.noise_r)));
    }
    let model = DoublePendulum::with_damping(s.damping);
    let dt = aligned_dt(study.frequency_hz, study.sim_max_dt);
    let traj = simulate_model(&model, &s.theta, &s.x0, study.duration_s, dt)?;
    let noise = NoiseSpec {
        q: Mat::zeros(4, 4),
        r: Mat::identity(4).scale(study.noise_r),
        seed: derive_seed(cfg.seed, "simulate-noise", 0),
    };
    let times = sample_times(study.frequency_hz, study.duration_s, s.include_zero);
    let mut series = measure(&traj, &model, &noise, &times)?;
    series.meta.truth = Some(s.theta.to_vec());
    series.meta.x0 = Some(s.x0.to_vec());
    series.meta.seed = Some(noise.seed);
    cfg.echo()?;
    let path = cfg.out.join("measurements.csv");
    save_measurements(&series, &path)?;
    write_json(&sidecar_path(&path), &series.meta)?;
    eprintln!("wrote {} samples to {}", series.len(), path.display());
    Ok(())
}

fn load_with_sidecar(path: &Path) -> Result<MeasurementSeries> {
    let mut series = load_measurements(path)?;
    let side = sidecar_path(path);
    if side.exists() {
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let meta: SeriesMeta =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", side.display())))?;
        series.meta = SeriesMeta { frequency_hz: series.meta.frequency_hz, ..meta };
    }
    Ok(series)
}

fn cmd_identify(cfg: &RunConfig, measurements: &Path) -> Result<()> {
    let series = load_with_sidecar(measurements)?;
    let model = DoublePendulum::undamped();
    if series.output_dim() != 4 {
        return Err(Error::Config(format!("expected 4 output columns, found {}", series.output_dim())));
    }
    let x0 = cfg.identify.x0.clone().or_else(|| series.meta.x0.clone()).ok_or_else(|| {
        Error::Config("initial state unknown: set identify.x0 or provide the metadata sidecar".into())
    })?;
    let r_diag = cfg
        .identify
        .r_diag
        .clone()
        .or_else(|| series.meta.r_diag.clone())
        .unwrap_or_else(|| vec![cfg.study.noise_r; 4]);
    let r = Mat::diag(&r_diag);
    cfg.echo()?;

    let log_path = cfg.out.join("train_log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
    let mut log_err = None;
    let outcome = cfg.profile.identify(&series, &model, &x0, &r, &mut |rec| {
        if log_err.is_none() {
            let line = serde_json::to_string(rec).expect("record serializes");
            if let Err(e) = writeln!(log, "{line}") {
                log_err = Some(e);
            }
        }
    });
    if let Some(e) = log_err {
        return Err(Error::io(&log_path, e));
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    let (report, mean, cov) = outcome?;

    mean.net.save(&cfg.out.join("mean_net.json"), NetKind::Mean)?;
    cov.net.save(&cfg.out.join("cov_net.json"), NetKind::Covariance)?;
    let result = IdentResult {
        method: match cfg.mode {
            TrainMode::Kbinn => "kbinn".into(),
            TrainMode::Pinn => "pinn".into(),
        },
        theta_hat: report.theta_hat.clone(),
        theta_init: report.theta_init.clone(),
        abs_err: None,
        converged: report.converged,
        iterations: report.history.len(),
        final_loss: report.best_loss,
        wall_time_s: report.wall_time_s,
    }
    .with_truth(series.meta.truth.as_deref());
    write_json(&cfg.out.join("ident.json"), &result)?;
    println!("theta_hat = {:?}", result.theta_hat);
    if let Some(err) = &result.abs_err {
        println!("abs_err   = {err:?}");
    }
    Ok(())
}

fn parse_methods(names: &[String]) -> Result<Vec<Method>> {
    if names.is_empty() {
        return Err(Error::Config("no methods given".into()));
    }
    names.iter().map(|n| n.parse()).collect()
}

fn cmd_study(cfg: &RunConfig) -> Result<()> {
    let methods = parse_methods(&cfg.methods)?;
    cfg.echo()?;
    let result = run_study(&cfg.study, &methods, &cfg.profile, &cfg.baseline, cfg.jobs, &|r| {
        eprintln!("run {} {}: abs_err {:.4?} ({})", r.run, r.method.as_str(), r.abs_err, r.status.as_str());
    })?;
    write_study(&result, &cfg.out)?;
    print!("{}", format_table(&result.aggregates));
    if result.rows.iter().all(|r| r.status == RunStatus::Failed) {
        return Err(Error::Numerical("every run failed".into()));
    }
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig) -> Result<()> {
    cfg.echo()?;
    let result = run_frequency_sweep(&cfg.sweep_config(), &cfg.profile, cfg.jobs, &|r| {
        eprintln!(
            "{} Hz scenario {}: mean abs err {:.4} ({})",
            r.frequency_hz,
            r.scenario,
            r.mean_abs_err,
            r.status.as_str()
        );
    })?;
    write_sweep(&result, &cfg.out)?;
    println!("{:>12} {:>12} {:>12} {:>12}", "frequency_hz", "q1", "median", "q3");
    for (f, b) in &result.boxplot {
        println!("{f:>12} {:>12.4} {:>12.4} {:>12.4}", b.q1, b.median, b.q3);
    }
    if result.rows.iter().all(|r| r.status == RunStatus::Failed) {
        return Err(Error::Numerical("every run failed".into()));
    }
    Ok(())
}

fn cmd_showcase(cfg: &RunConfig) -> Result<()> {
    cfg.echo()?;
    let (result, series, mean, cov) = run_showcase(&cfg.showcase_config(), &cfg.profile)?;
    export_showcase(&series, &mean, &cov, &[cfg.study.noise_r; 4], &cfg.out.join("showcase.csv"))?;
    mean.net.save(&cfg.out.join("mean_net.json"), NetKind::Mean)?;
    cov.net.save(&cfg.out.join("cov_net.json"), NetKind::Covariance)?;
    write_json(&cfg.out.join("showcase.json"), &result)?;
    println!("theta_hat = {:?}", result.report.theta_hat);
    println!("abs_err   = {:?}", result.abs_err);
    println!("coverage  = {:?}", result.coverage);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = build_config(&cli.common)?;
    match &cli.command {
        Command::Simulate => cmd_simulate(&cfg),
        Command::Identify { measurements } => cmd_identify(&cfg, measurements),
        Command::Study => cmd_study(&cfg),
        Command::Sweep => cmd_sweep(&cfg),
        Command::Showcase => cmd_showcase(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
