use serde::{Deserialize, Serialize};

/// Arithmetic mean; `NaN` for an empty slice.
pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population standard deviation (divides by `n`), so a single value has
/// spread 0.
pub fn std_dev(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt()
}

/// Quantile with linear interpolation between order statistics at
/// `h = (n − 1)·p` (the inclusive definition).
pub fn quantile(x: &[f64], p: f64) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let h = (s.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

pub fn median(x: &[f64]) -> f64 {
    quantile(x, 0.5)
}

/// Five-number summary for box plots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub n: usize,
}

impl BoxStats {
    pub fn of(x: &[f64]) -> Self {
        BoxStats {
            min: quantile(x, 0.0),
            q1: quantile(x, 0.25),
            median: quantile(x, 0.5),
            q3: quantile(x, 0.75),
            max: quantile(x, 1.0),
            n: x.len(),
        }
    }
}

/// Mean, spread and median of one error column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(x: &[f64]) -> Self {
        Summary { mean: mean(x), std: std_dev(x), median: median(x), n: x.len() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_element_quantiles() {
        let x = [7.0, 1.0, 3.0, 9.0, 5.0];
        let b = BoxStats::of(&x);
        assert_eq!((b.min, b.q1, b.median, b.q3, b.max), (1.0, 3.0, 5.0, 7.0, 9.0));
        let y = [0.0, 10.0, 20.0, 30.0, 100.0];
        assert_eq!(quantile(&y, 0.1), 4.0);
        assert_eq!(quantile(&y, 0.9), 72.0);
    }

    #[test]
    fn even_count_median_interpolates() {
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn single_value_has_zero_spread() {
        let s = Summary::of(&[0.37]);
        assert_eq!((s.mean, s.std, s.median), (0.37, 0.0, 0.37));
    }

    #[test]
    fn std_reference() {
        assert!((std_dev(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]) - 2.0).abs() < 1e-15);
    }
}
