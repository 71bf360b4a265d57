//! Benchmark protocol on the double pendulum: a random-parameter study, a
//! sampling-frequency sweep, a showcase export, and a shooting baseline for
//! comparison.

mod baseline;
mod showcase;
pub mod stats;

pub use baseline::{baseline_identify, BaselineConfig, IdentResult};
pub use showcase::{band_coverage, export_showcase, run_showcase, ShowcaseConfig, ShowcaseResult};

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_4;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ekbf::KbinnLossConfig;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::{
    aligned_dt, measure, sample_times, simulate_model, DoublePendulum, MeasurementSeries, NoiseSpec, StateSpaceModel,
};
use crate::nets::{CovNet, MeanNet};
use crate::seed::derive_seed;
use crate::train::{identify_with_log, EpochRecord, LrMultipliers, NetConfigs, TrainConfig, TrainReport};
use stats::{BoxStats, Summary};

pub const PARAM_NAMES: [&str; 3] = ["l1", "l2", "M"];

/// Loss weights, filter noise and training settings used for KBINN runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentProfile {
    pub alpha: [f64; 3],
    /// Process noise `Q = q₀·I` assumed by the filter.
    pub process_q: f64,
    /// Initial covariance `P̂₀`; defaults to `R` when absent.
    pub p0_diag: Option<Vec<f64>>,
    pub train: TrainConfig,
    pub nets: NetConfigs,
}

impl Default for IdentProfile {
    /// Minibatch settings tuned on the pendulum study scenarios.
    fn default() -> Self {
        IdentProfile {
            alpha: [0.03, 0.1, 1.0],
            process_q: 1e-2,
            p0_diag: None,
            train: TrainConfig {
                learning_rate: 3e-3,
                epochs: 15_000,
                batch_size: Some(300),
                theta_warmup: 2_500,
                warmup_without_dynamics: true,
                lr_multipliers: LrMultipliers::default(),
                ..TrainConfig::default()
            },
            nets: NetConfigs::default(),
        }
    }
}

impl IdentProfile {
    pub fn loss_config(&self, x0: &[f64], r: &Mat<f64>) -> KbinnLossConfig {
        let n = x0.len();
        let noise = NoiseSpec { q: Mat::identity(n).scale(self.process_q), r: r.clone(), seed: 0 };
        let mut cfg = KbinnLossConfig::new(x0.to_vec(), noise);
        cfg.alpha = self.alpha;
        if let Some(d) = &self.p0_diag {
            cfg.p0 = Mat::diag(d);
        }
        cfg
    }

    /// Runs KBINN on `series` starting from the known initial state `x0`.
    pub fn identify<M: StateSpaceModel>(
        &self,
        series: &MeasurementSeries,
        model: &M,
        x0: &[f64],
        r: &Mat<f64>,
        log: &mut dyn FnMut(&EpochRecord),
    ) -> Result<(TrainReport, MeanNet, CovNet)> {
        let loss = self.loss_config(x0, r);
        identify_with_log(series, model, &loss, &self.train, &self.nets, log)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Kbinn,
    Baseline,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Kbinn => "kbinn",
            Method::Baseline => "baseline",
        }
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "kbinn" => Ok(Method::Kbinn),
            "baseline" => Ok(Method::Baseline),
            other => Err(Error::Config(format!("unknown method `{other}` (expected kbinn or baseline)"))),
        }
    }
}

/// Random-parameter study protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub runs: usize,
    pub frequency_hz: f64,
    pub duration_s: f64,
    /// Measurement noise `R = r·I`.
    pub noise_r: f64,
    /// Half-width of the uniform initial-angle distribution, in rad.
    pub angle_range: f64,
    /// Bounds of the uniform parameter distribution.
    pub param_low: f64,
    pub param_high: f64,
    /// Damping of the data-generating system, in 1/s.
    pub truth_damping: f64,
    pub sim_max_dt: f64,
    pub seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            runs: 10,
            frequency_hz: 1000.0,
            duration_s: 3.0,
            noise_r: 0.25,
            angle_range: FRAC_PI_4,
            param_low: 0.0,
            param_high: 1.0,
            truth_damping: crate::model::TRUTH_DAMPING,
            sim_max_dt: 1e-4,
            seed: 0,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if !(self.frequency_hz > 0.0) || !(self.duration_s > 0.0) {
            return Err(Error::Config("frequency and duration must be positive".into()));
        }
        if !(self.noise_r > 0.0) {
            return Err(Error::Config(format!("noise_r must be positive for identification, got {}", self.noise_r)));
        }
        if !(self.param_low >= 0.0 && self.param_high <= 1.0 && self.param_low < self.param_high) {
            return Err(Error::Config("parameter range must lie within [0, 1]".into()));
        }
        if !(self.angle_range >= 0.0) {
            return Err(Error::Config("angle_range must be non-negative".into()));
        }
        Ok(())
    }

    pub fn r(&self) -> Mat<f64> {
        Mat::identity(4).scale(self.noise_r)
    }
}

/// True parameters, initial state and noise seed of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub index: usize,
    pub theta: [f64; 3],
    pub x0: [f64; 4],
    pub noise_seed: u64,
}

impl Scenario {
    /// Draws scenario `index` from its own stream of `(seed, "scenario", index)`.
    pub fn draw(cfg: &StudyConfig, index: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "scenario", index as u64));
        let mut param = || loop {
            let v = rng.gen_range(cfg.param_low..cfg.param_high);
            // the open interval; an exact zero would be an invalid model
            if v > 0.0 {
                break v;
            }
        };
        let theta = [param(), param(), param()];
        let a = cfg.angle_range;
        let mut angle = || if a > 0.0 { rng.gen_range(-a..a) } else { 0.0 };
        let x0 = [angle(), 0.0, angle(), 0.0];
        Scenario { index, theta, x0, noise_seed: derive_seed(cfg.seed, "noise", index as u64) }
    }

    /// Simulates the damped truth and samples it at `frequency_hz` on `(0, T]`.
    pub fn measure(&self, cfg: &StudyConfig, frequency_hz: f64) -> Result<MeasurementSeries> {
        let truth = DoublePendulum::with_damping(cfg.truth_damping);
        let dt = aligned_dt(frequency_hz, cfg.sim_max_dt);
        let traj = simulate_model(&truth, &self.theta, &self.x0, cfg.duration_s, dt)?;
        let noise = NoiseSpec { q: Mat::zeros(4, 4), r: cfg.r(), seed: self.noise_seed };
        let mut series = measure(&traj, &truth, &noise, &sample_times(frequency_hz, cfg.duration_s, false))?;
        series.meta.truth = Some(self.theta.to_vec());
        series.meta.x0 = Some(self.x0.to_vec());
        series.meta.seed = Some(self.noise_seed);
        Ok(series)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    NotConverged,
    /// The method errored; errors are those of the initial guess.
    Failed,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::NotConverged => "not_converged",
            RunStatus::Failed => "failed",
        }
    }

    pub fn flagged(self) -> bool {
        self == RunStatus::Failed
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub run: usize,
    pub method: Method,
    pub theta_true: [f64; 3],
    pub theta_hat: [f64; 3],
    pub abs_err: [f64; 3],
    pub wall_s: f64,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub message: Option<String>,
}

impl StudyRow {
    pub fn max_err(&self) -> f64 {
        self.abs_err.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean_err(&self) -> f64 {
        self.abs_err.iter().sum::<f64>() / 3.0
    }
}

fn midpoint_theta() -> [f64; 3] {
    let m = DoublePendulum::undamped();
    let p = m.params();
    [p[0].midpoint(), p[1].midpoint(), p[2].midpoint()]
}

fn to3(v: &[f64]) -> [f64; 3] {
    [v[0], v[1], v[2]]
}

fn abs_err(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [(a[0] - b[0]).abs(), (a[1] - b[1]).abs(), (a[2] - b[2]).abs()]
}

/// Identifies one series with one method against the undamped model.
pub fn identify_scenario(
    scenario: &Scenario,
    series: &MeasurementSeries,
    r: &Mat<f64>,
    method: Method,
    profile: &IdentProfile,
    baseline: &BaselineConfig,
) -> StudyRow {
    let start = Instant::now();
    let model = DoublePendulum::undamped();
    let init = midpoint_theta();
    let outcome: Result<(Vec<f64>, bool)> = match method {
        Method::Kbinn => {
            let mut p = profile.clone();
            p.train.seed = derive_seed(profile.train.seed, "kbinn-run", scenario.index as u64);
            p.identify(series, &model, &scenario.x0, r, &mut |_| {}).map(|(rep, _, _)| (rep.theta_hat, rep.converged))
        }
        Method::Baseline => {
            baseline_identify(series, &model, &scenario.x0, &init, baseline).map(|res| (res.theta_hat, res.converged))
        }
    };
    let (theta_hat, status, message) = match outcome {
        Ok((th, conv)) => (to3(&th), if conv { RunStatus::Ok } else { RunStatus::NotConverged }, None),
        Err(e) => (init, RunStatus::Failed, Some(e.to_string())),
    };
    StudyRow {
        run: scenario.index,
        method,
        theta_true: scenario.theta,
        theta_hat,
        abs_err: abs_err(&theta_hat, &scenario.theta),
        wall_s: start.elapsed().as_secs_f64(),
        status,
        message,
    }
}

/// Per-method, per-parameter summaries.
pub type Aggregates = BTreeMap<String, BTreeMap<String, Summary>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub rows: Vec<StudyRow>,
    pub aggregates: Aggregates,
    /// Aggregates without failed rows.
    pub aggregates_excluding_flagged: Aggregates,
    pub boxplot: BTreeMap<String, BTreeMap<String, BoxStats>>,
}

/// Summaries of `|Δl1|, |Δl2|, |ΔM|` per method.
pub fn aggregate(rows: &[StudyRow], skip_flagged: bool) -> Aggregates {
    let mut out = Aggregates::new();
    for method in methods_in(rows) {
        let sel: Vec<&StudyRow> =
            rows.iter().filter(|r| r.method == method && !(skip_flagged && r.status.flagged())).collect();
        let mut per = BTreeMap::new();
        for (k, name) in PARAM_NAMES.iter().enumerate() {
            let col: Vec<f64> = sel.iter().map(|r| r.abs_err[k]).collect();
            per.insert(name.to_string(), Summary::of(&col));
        }
        out.insert(method.as_str().to_string(), per);
    }
    out
}

fn methods_in(rows: &[StudyRow]) -> Vec<Method> {
    let mut m: Vec<Method> = rows.iter().map(|r| r.method).collect();
    m.sort();
    m.dedup();
    m
}

fn boxplots(rows: &[StudyRow]) -> BTreeMap<String, BTreeMap<String, BoxStats>> {
    let mut out = BTreeMap::new();
    for method in methods_in(rows) {
        let mut per = BTreeMap::new();
        for (k, name) in PARAM_NAMES.iter().enumerate() {
            let col: Vec<f64> = rows.iter().filter(|r| r.method == method).map(|r| r.abs_err[k]).collect();
            per.insert(name.to_string(), BoxStats::of(&col));
        }
        out.insert(method.as_str().to_string(), per);
    }
    out
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Runs every scenario with every method. Failing runs become flagged rows;
/// the study itself only fails on invalid configuration or data generation.
pub fn run_study(
    cfg: &StudyConfig,
    methods: &[Method],
    profile: &IdentProfile,
    baseline: &BaselineConfig,
    jobs: usize,
    progress: &(dyn Fn(&StudyRow) + Sync),
) -> Result<StudyResult> {
    cfg.validate()?;
    if methods.is_empty() {
        return Err(Error::Config("no identification method selected".into()));
    }
    let scenarios: Vec<Scenario> = (0..cfg.runs).map(|i| Scenario::draw(cfg, i)).collect();
    let series: Vec<MeasurementSeries> =
        scenarios.iter().map(|s| s.measure(cfg, cfg.frequency_hz)).collect::<Result<_>>()?;
    let tasks: Vec<(usize, Method)> = (0..cfg.runs).flat_map(|i| methods.iter().map(move |&m| (i, m))).collect();
    let r = cfg.r();
    let rows: Vec<StudyRow> = pool(jobs)?.install(|| {
        tasks
            .par_iter()
            .map(|&(i, m)| {
                let row = identify_scenario(&scenarios[i], &series[i], &r, m, profile, baseline);
                progress(&row);
                row
            })
            .collect()
    });
    Ok(StudyResult {
        aggregates: aggregate(&rows, false),
        aggregates_excluding_flagged: aggregate(&rows, true),
        boxplot: boxplots(&rows),
        rows,
    })
}

/// Method × parameter table of `mean ± std`.
pub fn format_table(aggregates: &Aggregates) -> String {
    let mut s = format!("{:<10}", "method");
    for p in PARAM_NAMES {
        s.push_str(&format!("{:>20}", format!("|Δ{p}|")));
    }
    s.push('\n');
    for (method, per) in aggregates {
        s.push_str(&format!("{method:<10}"));
        for p in PARAM_NAMES {
            let a = &per[p];
            s.push_str(&format!("{:>20}", format!("{:.3} ± {:.3}", a.mean, a.std)));
        }
        s.push('\n');
    }
    s
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("plain data serializes")
}

/// Writes `study.csv`, `aggregates.json` and `boxplot.json` into `dir`.
pub fn write_study(result: &StudyResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut csv = String::from(
        "run,method,l1_true,l2_true,M_true,l1_hat,l2_hat,M_hat,abs_err_l1,abs_err_l2,abs_err_M,wall_s,status\n",
    );
    for r in &result.rows {
        let nums: Vec<String> = r
            .theta_true
            .iter()
            .chain(&r.theta_hat)
            .chain(&r.abs_err)
            .chain(std::iter::once(&r.wall_s))
            .map(|v| format!("{v:?}"))
            .collect();
        csv.push_str(&format!("{},{},{},{}\n", r.run, r.method.as_str(), nums.join(","), r.status.as_str()));
    }
    write_text(&dir.join("study.csv"), &csv)?;
    let agg = serde_json::json!({
        "all_rows": result.aggregates,
        "excluding_flagged": result.aggregates_excluding_flagged,
    });
    write_text(&dir.join("aggregates.json"), &json(&agg))?;
    write_text(&dir.join("boxplot.json"), &json(&result.boxplot))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub frequencies_hz: Vec<f64>,
    pub scenarios: usize,
    /// Protocol settings shared with the study; `runs` and `frequency_hz`
    /// are ignored.
    pub study: StudyConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            frequencies_hz: vec![3.0, 10.0, 30.0, 100.0, 300.0, 1000.0],
            scenarios: 5,
            study: StudyConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub frequency_hz: f64,
    pub scenario: usize,
    pub mean_abs_err: f64,
    /// Mean of `|Δθⱼ| / θⱼ`.
    pub mean_rel_err: f64,
    pub theta_hat: [f64; 3],
    pub status: RunStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Box-plot data of the mean absolute error per frequency.
    pub boxplot: Vec<(f64, BoxStats)>,
}

impl SweepResult {
    pub fn median_at(&self, f: f64) -> f64 {
        self.boxplot.iter().find(|(g, _)| *g == f).map_or(f64::NAN, |(_, b)| b.median)
    }
}

/// KBINN at each sampling frequency on the same scenarios.
pub fn run_frequency_sweep(
    cfg: &SweepConfig,
    profile: &IdentProfile,
    jobs: usize,
    progress: &(dyn Fn(&SweepRow) + Sync),
) -> Result<SweepResult> {
    cfg.study.validate()?;
    if cfg.frequencies_hz.is_empty() || cfg.scenarios == 0 {
        return Err(Error::Config("sweep needs at least one frequency and one scenario".into()));
    }
    if let Some(f) = cfg.frequencies_hz.iter().find(|&&f| !(f > 0.0)) {
        return Err(Error::Config(format!("frequency {f} is not positive")));
    }
    let scenarios: Vec<Scenario> = (0..cfg.scenarios).map(|i| Scenario::draw(&cfg.study, i)).collect();
    let mut tasks = Vec::new();
    for &f in &cfg.frequencies_hz {
        for s in &scenarios {
            tasks.push((f, s.measure(&cfg.study, f)?, s));
        }
    }
    let r = cfg.study.r();
    let rows: Vec<SweepRow> = pool(jobs)?.install(|| {
        tasks
            .par_iter()
            .map(|(f, series, s)| {
                let row = identify_scenario(s, series, &r, Method::Kbinn, profile, &BaselineConfig::default());
                let rel = row.abs_err.iter().zip(&s.theta).map(|(e, t)| e / t).sum::<f64>() / 3.0;
                let out = SweepRow {
                    frequency_hz: *f,
                    scenario: s.index,
                    mean_abs_err: row.mean_err(),
                    mean_rel_err: rel,
                    theta_hat: row.theta_hat,
                    status: row.status,
                };
                progress(&out);
                out
            })
            .collect()
    });
    let boxplot = cfg
        .frequencies_hz
        .iter()
        .map(|&f| {
            let col: Vec<f64> = rows.iter().filter(|r| r.frequency_hz == f).map(|r| r.mean_abs_err).collect();
            (f, BoxStats::of(&col))
        })
        .collect();
    Ok(SweepResult { rows, boxplot })
}

/// Writes `sweep.csv` and `boxplot.json` into `dir`.
pub fn write_sweep(result: &SweepResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut csv = String::from("frequency_hz,scenario,mean_abs_err,mean_rel_err,status\n");
    for r in &result.rows {
        csv.push_str(&format!(
            "{:?},{},{:?},{:?},{}\n",
            r.frequency_hz,
            r.scenario,
            r.mean_abs_err,
            r.mean_rel_err,
            r.status.as_str()
        ));
    }
    write_text(&dir.join("sweep.csv"), &csv)?;
    let records: Vec<_> =
        result.boxplot.iter().map(|(f, b)| serde_json::json!({ "frequency_hz": f, "mean_abs_err": b })).collect();
    write_text(&dir.join("boxplot.json"), &json(&records))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(run: usize, method: Method, err: [f64; 3], status: RunStatus) -> StudyRow {
        StudyRow {
            run,
            method,
            theta_true: [0.5; 3],
            theta_hat: [0.5; 3],
            abs_err: err,
            wall_s: 0.0,
            status,
            message: None,
        }
    }

    #[test]
    fn scenarios_follow_the_protocol_and_are_reproducible() {
        let cfg = StudyConfig::default();
        for i in 0..50 {
            let s = Scenario::draw(&cfg, i);
            assert!(s.theta.iter().all(|&v| v > 0.0 && v < 1.0));
            assert!(s.x0[0].abs() <= FRAC_PI_4 && s.x0[2].abs() <= FRAC_PI_4);
            assert_eq!((s.x0[1], s.x0[3]), (0.0, 0.0));
            assert_eq!(s, Scenario::draw(&cfg, i));
        }
        assert_ne!(Scenario::draw(&cfg, 0), Scenario::draw(&cfg, 1));
    }

    #[test]
    fn scenario_series_is_deterministic() {
        let cfg = StudyConfig { duration_s: 0.2, ..StudyConfig::default() };
        let s = Scenario::draw(&cfg, 3);
        let a = s.measure(&cfg, 100.0).unwrap();
        let b = s.measure(&cfg, 100.0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
        assert_eq!(a.meta.truth.as_deref(), Some(&s.theta[..]));
    }

    #[test]
    fn aggregates_match_rows() {
        let rows = vec![
            row(0, Method::Kbinn, [0.01, 0.02, 0.03], RunStatus::Ok),
            row(1, Method::Kbinn, [0.05, 0.00, 0.40], RunStatus::Ok),
            row(2, Method::Kbinn, [0.50, 0.50, 0.50], RunStatus::Failed),
            row(0, Method::Baseline, [0.3, 0.2, 0.1], RunStatus::NotConverged),
        ];
        let all = aggregate(&rows, false);
        let clean = aggregate(&rows, true);
        let k = &all["kbinn"]["l1"];
        assert!((k.mean - (0.01 + 0.05 + 0.5) / 3.0).abs() < 1e-12);
        assert_eq!(k.n, 3);
        assert_eq!(clean["kbinn"]["l1"].n, 2);
        assert!((clean["kbinn"]["M"].mean - 0.215).abs() < 1e-12);
        assert_eq!(all["baseline"]["l2"].std, 0.0);
        let table = format_table(&all);
        assert_eq!(table.lines().count(), 3);
        assert!(table.contains("0.300 ± 0.000"));
    }

    #[test]
    fn method_names() {
        assert_eq!("kbinn".parse::<Method>().unwrap(), Method::Kbinn);
        assert_eq!(" baseline".parse::<Method>().unwrap(), Method::Baseline);
        assert!("nlgrey".parse::<Method>().is_err());
    }

    #[test]
    fn study_files_have_the_documented_columns() {
        let rows = vec![row(0, Method::Kbinn, [0.01, 0.02, 0.03], RunStatus::Ok)];
        let res = StudyResult {
            aggregates: aggregate(&rows, false),
            aggregates_excluding_flagged: aggregate(&rows, true),
            boxplot: boxplots(&rows),
            rows,
        };
        let dir = tempfile::tempdir().unwrap();
        write_study(&res, dir.path()).unwrap();
        let csv = fs::read_to_string(dir.path().join("study.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "run,method,l1_true,l2_true,M_true,l1_hat,l2_hat,M_hat,abs_err_l1,abs_err_l2,abs_err_M,wall_s,status"
        );
        assert!(lines.next().unwrap().starts_with("0,kbinn,0.5,"));
        let agg: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("aggregates.json")).unwrap()).unwrap();
        assert!(agg["excluding_flagged"]["kbinn"]["M"]["mean"].is_number());
    }

    #[test]
    fn invalid_study_configs() {
        assert!(StudyConfig { runs: 0, ..StudyConfig::default() }.validate().is_err());
        assert!(StudyConfig { noise_r: 0.0, ..StudyConfig::default() }.validate().is_err());
        assert!(StudyConfig { param_high: 2.0, ..StudyConfig::default() }.validate().is_err());
    }
}
