use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn check_percentile(p: f64) -> Result<()> {
    if p > 0.0 && p <= 100.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("percentile {p} outside (0, 100]")))
    }
}

/// Nearest-rank percentile: the `ceil(p/100 * n)`-th smallest value.
pub fn nearest_rank(values: &[f64], percentile: f64) -> Result<f64> {
    check_percentile(percentile)?;
    if values.is_empty() {
        return Err(Error::invalid("percentile of an empty set"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("percentile input"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[rank_index(sorted.len(), percentile)])
}

/// Zero-based index of the nearest-rank order statistic.
pub fn rank_index(n: usize, percentile: f64) -> usize {
    // the small slack keeps e.g. 0.9 * 10 from rounding up to 10
    let rank = (percentile / 100.0 * n as f64 - 1e-9).ceil() as usize;
    rank.clamp(1, n) - 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub count: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub p100: f64,
}

impl Distribution {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("distribution of an empty set"));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let at = |p: f64| sorted[rank_index(n, p)];
        Ok(Self {
            count: n,
            min: sorted[0],
            max: sorted[n - 1],
            mean: sorted.iter().sum::<f64>() / n as f64,
            p50: at(50.0),
            p90: at(90.0),
            p99: at(99.0),
            p100: at(100.0),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_definition() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 99.0).unwrap(), 99.0);
        assert_eq!(nearest_rank(&v, 100.0).unwrap(), 100.0);
        assert_eq!(nearest_rank(&v, 0.5).unwrap(), 1.0);
        let ten: Vec<f64> = (1..=10).rev().map(f64::from).collect();
        assert_eq!(nearest_rank(&ten, 90.0).unwrap(), 9.0);
        assert_eq!(nearest_rank(&ten, 91.0).unwrap(), 10.0);
        assert!(nearest_rank(&ten, 0.0).is_err());
        assert!(nearest_rank(&ten, 100.5).is_err());
        assert!(nearest_rank(&[], 50.0).is_err());
    }

    #[test]
    fn distribution_summary() {
        let d = Distribution::from_values(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((d.min, d.max, d.p50, d.p100), (1.0, 4.0, 2.0, 4.0));
        assert_eq!(d.mean, 2.5);
    }
}
