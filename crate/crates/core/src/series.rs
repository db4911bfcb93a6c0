//! Univariate series, chronological splits, standardization and sliding windows.
//!
//! Indexing convention: observations are 0-based internally. A window's
//! `anchor` is the 0-based index of its last input observation, so the input
//! covers `anchor+1-L ..= anchor` and the target `anchor+1 ..= anchor+H`. In
//! 1-based notation the anchor `t` runs over `L ..= T-H`.

use serde::{Deserialize, Serialize};

use crate::error::{ForecastError, Result};

/// A named univariate sequence of finite observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    name: String,
    values: Vec<f64>,
    /// 0-based position of `values[0]` in the series this one was cut from.
    start: usize,
}

impl TimeSeries {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        Self::with_start(name, values, 0)
    }

    pub fn with_start(name: impl Into<String>, values: Vec<f64>, start: usize) -> Result<Self> {
        let name = name.into();
        if values.is_empty() {
            return Err(ForecastError::EmptyData(format!("series '{name}' has no values")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(ForecastError::param(format!(
                "series '{name}' has a non-finite value at index {i}"
            )));
        }
        Ok(Self {
            name,
            values,
            start,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn start(&self) -> usize {
        self.start
    }

    fn slice(&self, suffix: &str, from: usize, to: usize) -> TimeSeries {
        TimeSeries {
            name: format!("{}:{suffix}", self.name),
            values: self.values[from..to].to_vec(),
            start: self.start + from,
        }
    }
}

/// Chronological split proportions plus the overlap policy for holdout splits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub test_ratio: f64,
    /// Prefix val and test with the preceding `L` observations.
    pub overlap: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_ratio: 0.7,
            val_ratio: 0.1,
            test_ratio: 0.2,
            overlap: true,
        }
    }
}

impl SplitSpec {
    pub fn new(train_ratio: f64, val_ratio: f64, test_ratio: f64, overlap: bool) -> Result<Self> {
        let spec = Self {
            train_ratio,
            val_ratio,
            test_ratio,
            overlap,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for (label, r) in [
            ("train_ratio", self.train_ratio),
            ("val_ratio", self.val_ratio),
            ("test_ratio", self.test_ratio),
        ] {
            if !(r > 0.0 && r < 1.0) {
                return Err(ForecastError::param(format!("{label} must lie in (0, 1), got {r}")));
            }
        }
        let sum = self.train_ratio + self.val_ratio + self.test_ratio;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ForecastError::param(format!("split ratios must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: TimeSeries,
    pub val: TimeSeries,
    pub test: TimeSeries,
}

/// Splits a series chronologically into train/val/test.
///
/// Sizes are `floor(T·train)`, `floor(T·test)` and the remainder for val.
/// Every split must hold at least `lookback + 1` observations (counting the
/// overlap prefix) so that a window with a one-step target exists.
pub fn split_series(series: &TimeSeries, spec: &SplitSpec, lookback: usize) -> Result<Splits> {
    spec.validate()?;
    let total = series.len();
    let n_train = (total as f64 * spec.train_ratio).floor() as usize;
    let n_test = (total as f64 * spec.test_ratio).floor() as usize;
    let n_val = total.saturating_sub(n_train + n_test);

    let val_nominal = n_train;
    let test_nominal = n_train + n_val;
    let prefix = if spec.overlap { lookback } else { 0 };

    let bounds = [
        ("train", 0usize, 0usize, n_train),
        ("val", val_nominal, prefix, test_nominal),
        ("test", test_nominal, prefix, total),
    ];

    let mut failing = Vec::new();
    for (label, nominal, pre, end) in bounds {
        let Some(begin) = nominal.checked_sub(pre) else {
            failing.push(format!(
                "{label} (needs {pre} observations before index {nominal})"
            ));
            continue;
        };
        let len = end - begin;
        if len < lookback + 1 {
            failing.push(format!(
                "{label} ({len} observations, need at least {})",
                lookback + 1
            ));
        }
    }
    if !failing.is_empty() {
        let split = failing
            .iter()
            .map(|f| f.split(' ').next().unwrap_or_default())
            .collect::<Vec<_>>()
            .join(", ");
        return Err(ForecastError::InsufficientData {
            split,
            detail: format!("T={total}, L={lookback}: {}", failing.join("; ")),
        });
    }

    Ok(Splits {
        train: series.slice("train", 0, n_train),
        val: series.slice("val", val_nominal - prefix, test_nominal),
        test: series.slice("test", test_nominal - prefix, total),
    })
}

/// Standardization parameters estimated on the training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: f64,
    pub std: f64,
}

/// Mean and population standard deviation of the training values.
pub fn fit_scaler(train: &TimeSeries) -> Result<Scaler> {
    let v = train.values();
    if v.len() < 2 {
        return Err(ForecastError::InsufficientData {
            split: train.name().to_string(),
            detail: "need at least 2 values to fit a scaler".into(),
        });
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 0.0) || std <= f64::EPSILON * mean.abs().max(1.0) {
        return Err(ForecastError::ZeroVariance);
    }
    Ok(Scaler { mean, std })
}

impl Scaler {
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }

    pub fn apply_series(&self, series: &TimeSeries) -> TimeSeries {
        TimeSeries {
            name: series.name.clone(),
            values: series.values.iter().map(|&x| self.apply(x)).collect(),
            start: series.start,
        }
    }

    pub fn invert_slice(&self, z: &[f64]) -> Vec<f64> {
        z.iter().map(|&v| self.invert(v)).collect()
    }
}

/// One supervised example cut from a series.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPair {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
    /// 0-based index (in the source series) of the last input observation.
    pub anchor: usize,
}

/// Sliding windows with stride 1, in chronological order.
pub fn make_windows(series: &TimeSeries, lookback: usize, horizon: usize) -> Result<Vec<WindowPair>> {
    if lookback == 0 || horizon == 0 {
        return Err(ForecastError::param("lookback and horizon must be at least 1"));
    }
    let t = series.len();
    if t < lookback + horizon {
        return Err(ForecastError::InsufficientData {
            split: series.name().to_string(),
            detail: format!("T={t} < L+H={}", lookback + horizon),
        });
    }
    let v = series.values();
    Ok((lookback..=t - horizon)
        .map(|end| WindowPair {
            input: v[end - lookback..end].to_vec(),
            target: v[end..end + horizon].to_vec(),
            anchor: series.start() + end - 1,
        })
        .collect())
}

/// Stacks window targets into a `num_windows × H` matrix.
pub fn targets_matrix(windows: &[WindowPair]) -> Result<crate::Matrix> {
    let h = windows.first().map_or(0, |w| w.target.len());
    crate::Matrix::from_rows(h, windows.iter().map(|w| &w.target))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> TimeSeries {
        TimeSeries::new("ramp", (0..n).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn proportional_split_without_overlap() {
        let spec = SplitSpec::new(0.7, 0.1, 0.2, false).unwrap();
        let s = split_series(&ramp(100), &spec, 0).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 10, 20));
    }

    #[test]
    fn overlap_prefixes_holdout_splits() {
        // Hand enumeration: nominal val = 70..79, test = 80..99; shifted back by L=5.
        let spec = SplitSpec::new(0.7, 0.1, 0.2, true).unwrap();
        let s = split_series(&ramp(100), &spec, 5).unwrap();
        assert_eq!(s.val.values().first(), Some(&65.0));
        assert_eq!(s.val.values().last(), Some(&79.0));
        assert_eq!(s.val.len(), 15);
        assert_eq!(s.test.values().first(), Some(&75.0));
        assert_eq!(s.test.values().last(), Some(&99.0));
        assert_eq!(s.test.len(), 25);
        assert_eq!(s.test.start(), 75);
    }

    #[test]
    fn tiny_series_is_insufficient_for_val() {
        let spec = SplitSpec::new(0.7, 0.1, 0.2, true).unwrap();
        let err = split_series(&ramp(10), &spec, 9).unwrap_err();
        match err {
            ForecastError::InsufficientData { split, .. } => assert!(split.contains("val"), "{split}"),
            other => panic!("unexpected {other}"),
        }
        let no_overlap = SplitSpec::new(0.7, 0.1, 0.2, false).unwrap();
        let err = split_series(&ramp(10), &no_overlap, 9).unwrap_err();
        assert!(err.to_string().contains("val"));
    }

    #[test]
    fn bad_ratios_rejected() {
        assert!(SplitSpec::new(0.7, 0.2, 0.2, false).is_err());
        assert!(SplitSpec::new(1.0, 0.0, 0.0, false).is_err());
    }

    #[test]
    fn scaler_matches_hand_values() {
        let s = TimeSeries::new("x", vec![0.0, 0.0, 0.0, 4.0]).unwrap();
        let sc = fit_scaler(&s).unwrap();
        assert_eq!(sc.mean, 1.0);
        assert!((sc.std - 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn constant_series_has_zero_variance() {
        let s = TimeSeries::new("x", vec![5.0, 5.0, 5.0]).unwrap();
        assert!(matches!(fit_scaler(&s), Err(ForecastError::ZeroVariance)));
    }

    #[test]
    fn standardized_series_has_unit_moments() {
        let s = TimeSeries::new("x", (0..57).map(|i| ((i * 7) % 13) as f64 * 1.3 + 4.0).collect())
            .unwrap();
        let z = fit_scaler(&s).unwrap().apply_series(&s);
        let n = z.len() as f64;
        let mean = z.values().iter().sum::<f64>() / n;
        let var = z.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-9);
        assert!((var.sqrt() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn window_enumeration_by_hand() {
        let s = TimeSeries::new("x", vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let w = make_windows(&s, 2, 1).unwrap();
        let pairs: Vec<_> = w.iter().map(|p| (p.input.clone(), p.target.clone())).collect();
        assert_eq!(
            pairs,
            vec![
                (vec![1.0, 2.0], vec![3.0]),
                (vec![2.0, 3.0], vec![4.0]),
                (vec![3.0, 4.0], vec![5.0]),
            ]
        );

        let s = TimeSeries::new("x", (1..=10).map(f64::from).collect()).unwrap();
        let w = make_windows(&s, 3, 2).unwrap();
        assert_eq!(w.len(), 6);
        assert_eq!(w[0].input, vec![1.0, 2.0, 3.0]);
        assert_eq!(w[0].target, vec![4.0, 5.0]);
        // 1-based anchor t = L = 3 is 0-based index 2.
        assert_eq!(w[0].anchor, 2);
        assert_eq!(w[5].anchor, 7);
    }

    #[test]
    fn exact_fit_gives_one_window() {
        let w = make_windows(&ramp(7), 4, 3).unwrap();
        assert_eq!(w.len(), 1);
        assert!(make_windows(&ramp(6), 4, 3).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(TimeSeries::new("x", vec![1.0, f64::NAN]).is_err());
        assert!(TimeSeries::new("x", vec![]).is_err());
    }
}
