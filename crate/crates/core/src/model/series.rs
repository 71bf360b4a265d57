use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Provenance of a measurement series; written as a JSON sidecar next to the CSV.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub frequency_hz: f64,
    /// Diagonal of the measurement noise covariance used to generate the data.
    #[serde(default)]
    pub r_diag: Option<Vec<f64>>,
    /// True parameters, when the data is synthetic.
    #[serde(default)]
    pub truth: Option<Vec<f64>>,
    /// Initial state of the generating trajectory.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Noisy output samples `ȳ(tᵢ)` at strictly increasing instants.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementSeries {
    pub times: Vec<f64>,
    /// `N × q` samples, one row per instant.
    pub samples: Vec<Vec<f64>>,
    /// Rows appended by extrapolation rather than measured.
    pub synthetic: Vec<bool>,
    pub meta: SeriesMeta,
}

impl MeasurementSeries {
    pub fn new(times: Vec<f64>, samples: Vec<Vec<f64>>, meta: SeriesMeta) -> Result<Self> {
        let synthetic = vec![false; times.len()];
        let s = MeasurementSeries { times, samples, synthetic, meta };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn output_dim(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.samples.len() || self.times.len() != self.synthetic.len() {
            return Err(Error::Config(format!(
                "series has {} times, {} sample rows and {} flags",
                self.times.len(),
                self.samples.len(),
                self.synthetic.len()
            )));
        }
        let q = self.output_dim();
        for (i, row) in self.samples.iter().enumerate() {
            if row.len() != q {
                return Err(Error::Config(format!("sample row {i} has {} columns, expected {q}", row.len())));
            }
            if row.iter().any(|v| !v.is_finite()) || !self.times[i].is_finite() {
                return Err(Error::Config(format!("sample row {i} is not finite")));
            }
        }
        if let Some(i) = self.times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!("times are not strictly increasing at row {}", i + 1)));
        }
        Ok(())
    }

    /// Sampling frequency from the median sample spacing.
    pub fn inferred_frequency(&self) -> f64 {
        let mut d: Vec<f64> = self.times.windows(2).map(|w| w[1] - w[0]).collect();
        if d.is_empty() {
            return 0.0;
        }
        d.sort_by(f64::total_cmp);
        1.0 / d[d.len() / 2]
    }

    pub fn t_max(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }
}

/// Writes `t,y1,…,yq` with shortest round-trip float formatting.
pub fn save_measurements(series: &MeasurementSeries, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let q = series.output_dim();
    let header: Vec<String> = std::iter::once("t".to_string()).chain((1..=q).map(|j| format!("y{j}"))).collect();
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for (t, row) in series.times.iter().zip(&series.samples) {
        write!(w, "{t:?}").map_err(io)?;
        for v in row {
            write!(w, ",{v:?}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Parses a measurement CSV. Errors carry 1-based file line numbers.
pub fn load_measurements(path: &Path) -> Result<MeasurementSeries> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(file);
    let headers = rdr.headers().map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?.clone();
    if headers.get(0).map(str::trim) != Some("t") || headers.len() < 2 {
        return Err(Error::Parse { line: 1, msg: "header must be `t,y1,...,yq`".into() });
    }
    for (j, h) in headers.iter().enumerate().skip(1) {
        if h.trim() != format!("y{j}") {
            return Err(Error::Parse { line: 1, msg: format!("column {} should be `y{j}`, found `{h}`", j + 1) });
        }
    }
    let cols = headers.len();
    let mut times = Vec::new();
    let mut samples = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        if rec.len() != cols {
            return Err(Error::Parse { line, msg: format!("expected {cols} fields, found {}", rec.len()) });
        }
        let mut vals = Vec::with_capacity(cols);
        for cell in rec.iter() {
            let v: f64 =
                cell.trim().parse().map_err(|_| Error::Parse { line, msg: format!("`{cell}` is not a number") })?;
            if !v.is_finite() {
                return Err(Error::Parse { line, msg: format!("`{cell}` is not finite") });
            }
            vals.push(v);
        }
        let t = vals[0];
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(Error::Parse { line, msg: format!("time {t} does not increase (previous {prev})") });
            }
        }
        times.push(t);
        samples.push(vals[1..].to_vec());
    }
    if times.is_empty() {
        return Err(Error::Parse { line: 2, msg: "no data rows".into() });
    }
    let mut s = MeasurementSeries::new(times, samples, SeriesMeta::default())?;
    s.meta.frequency_hz = s.inferred_frequency();
    Ok(s)
}
