use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{IdentProfile, Scenario, StudyConfig};
use crate::error::{Error, Result};
use crate::model::{DoublePendulum, DoublePendulumParams, MeasurementSeries};
use crate::nets::{CovNet, MeanNet};
use crate::train::TrainReport;

/// One fixed scenario: `l1 = 0.6 m`, `l2 = 0.9 m`, masses 0.3 kg and 0.4 kg.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShowcaseConfig {
    pub theta: [f64; 3],
    pub x0: [f64; 4],
    /// Protocol settings; `runs` is ignored.
    pub study: StudyConfig,
}

impl Default for ShowcaseConfig {
    fn default() -> Self {
        ShowcaseConfig {
            theta: DoublePendulumParams::from_masses(0.6, 0.9, 0.3, 0.4).theta(),
            x0: [0.6, 0.0, -0.4, 0.0],
            study: StudyConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShowcaseResult {
    pub theta_true: [f64; 3],
    pub report: TrainReport,
    pub abs_err: Vec<f64>,
    /// Share of samples inside `ξ ± 2σ_total`, per channel.
    pub coverage: Vec<f64>,
}

/// Simulates, measures and identifies the showcase scenario.
pub fn run_showcase(
    cfg: &ShowcaseConfig,
    profile: &IdentProfile,
) -> Result<(ShowcaseResult, MeasurementSeries, MeanNet, CovNet)> {
    cfg.study.validate()?;
    let scenario = Scenario {
        index: 0,
        theta: cfg.theta,
        x0: cfg.x0,
        noise_seed: crate::seed::derive_seed(cfg.study.seed, "showcase-noise", 0),
    };
    let series = scenario.measure(&cfg.study, cfg.study.frequency_hz)?;
    let r = cfg.study.r();
    let (report, mean, cov) = profile.identify(&series, &DoublePendulum::undamped(), &cfg.x0, &r, &mut |_| {})?;
    let r_diag: Vec<f64> = (0..4).map(|i| r[(i, i)]).collect();
    let coverage = band_coverage(&series, &mean, &cov, &r_diag)?;
    let abs_err = report.theta_hat.iter().zip(&cfg.theta).map(|(a, b)| (a - b).abs()).collect();
    Ok((ShowcaseResult { theta_true: cfg.theta, report, abs_err, coverage }, series, mean, cov))
}

/// Fraction of measured (non-synthetic) samples per channel within
/// `ξⱼ ± 2·sqrt(ψⱼⱼ + Rⱼⱼ)`.
pub fn band_coverage(series: &MeasurementSeries, mean: &MeanNet, cov: &CovNet, r_diag: &[f64]) -> Result<Vec<f64>> {
    let q = series.output_dim();
    let mut hits = vec![0usize; q];
    let mut count = 0usize;
    for (i, (&t, y)) in series.times.iter().zip(&series.samples).enumerate() {
        if series.synthetic[i] {
            continue;
        }
        count += 1;
        let (xi, _) = mean.forward(t)?;
        let (psi, _) = cov.forward(t)?;
        for j in 0..q {
            let sigma = (psi[(j, j)] + r_diag[j]).sqrt();
            if (y[j] - xi[j]).abs() <= 2.0 * sigma {
                hits[j] += 1;
            }
        }
    }
    Ok(hits.iter().map(|&h| h as f64 / count.max(1) as f64).collect())
}

/// Writes one row per sample: `t`, then for each channel `j` the
/// measurement, `ξⱼ`, the `ξⱼ ± 2·sqrt(ψⱼⱼ)` band and the wider band that
/// includes the measurement noise.
pub fn export_showcase(
    series: &MeasurementSeries,
    mean: &MeanNet,
    cov: &CovNet,
    r_diag: &[f64],
    path: &Path,
) -> Result<()> {
    let q = series.output_dim();
    let mut out = String::from("t");
    for j in 1..=q {
        write!(out, ",y{j},xi{j},lo{j},hi{j},lo_total{j},hi_total{j}").expect("string write");
    }
    out.push('\n');
    for (&t, y) in series.times.iter().zip(&series.samples) {
        let (xi, _) = mean.forward(t)?;
        let (psi, _) = cov.forward(t)?;
        write!(out, "{t:?}").expect("string write");
        for j in 0..q {
            let s = psi[(j, j)].max(0.0).sqrt();
            let st = (psi[(j, j)] + r_diag[j]).sqrt();
            write!(
                out,
                ",{:?},{:?},{:?},{:?},{:?},{:?}",
                y[j],
                xi[j],
                xi[j] - 2.0 * s,
                xi[j] + 2.0 * s,
                xi[j] - 2.0 * st,
                xi[j] + 2.0 * st
            )
            .expect("string write");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
