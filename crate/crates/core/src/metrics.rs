//! Point-forecast accuracy: MSE, MAE and relative gain over a base model.

use serde::{Deserialize, Serialize};

use crate::error::{ForecastError, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub model_label: String,
    pub horizon: usize,
    pub mse: f64,
    pub mae: f64,
    /// Percent improvement over the attached base model; `None` when no base is attached.
    pub gain_mse_pct: Option<f64>,
    pub gain_mae_pct: Option<f64>,
}

/// MSE and MAE over all windows and steps.
pub fn evaluate(preds: &Matrix, targets: &Matrix) -> Result<EvalResult> {
    if preds.shape() != targets.shape() {
        return Err(ForecastError::Shape {
            context: "evaluation",
            expected: targets.as_slice().len(),
            got: preds.as_slice().len(),
        });
    }
    let n = preds.as_slice().len();
    if n == 0 {
        return Err(ForecastError::EmptyData("nothing to evaluate".into()));
    }
    let (mut se, mut ae) = (0.0, 0.0);
    for (p, t) in preds.as_slice().iter().zip(targets.as_slice()) {
        let d = p - t;
        se += d * d;
        ae += d.abs();
    }
    Ok(EvalResult {
        model_label: String::new(),
        horizon: preds.cols(),
        mse: se / n as f64,
        mae: ae / n as f64,
        gain_mse_pct: None,
        gain_mae_pct: None,
    })
}

/// `100 · (base − improved) / base`; positive means improvement.
pub fn gain_percent(base: f64, improved: f64) -> Result<f64> {
    if !(base > 0.0) {
        return Err(ForecastError::param(format!("gain needs a positive base, got {base}")));
    }
    Ok(100.0 * (base - improved) / base)
}

impl EvalResult {
    pub fn labeled(mut self, label: impl Into<String>) -> Self {
        self.model_label = label.into();
        self
    }

    /// Attaches gains relative to `base`. A zero base metric leaves that gain empty.
    pub fn with_base(mut self, base: &EvalResult) -> Self {
        self.gain_mse_pct = gain_percent(base.mse, self.mse).ok();
        self.gain_mae_pct = gain_percent(base.mae, self.mae).ok();
        self
    }
}

/// Rounds a percentage to one decimal place for display.
pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluate_examples() {
        let p = Matrix::from_rows(2, [[0.0, 0.0]]).unwrap();
        let t = Matrix::from_rows(2, [[1.0, -1.0]]).unwrap();
        let r = evaluate(&p, &t).unwrap();
        assert_eq!((r.mse, r.mae), (1.0, 1.0));
        let r = evaluate(&t, &t).unwrap();
        assert_eq!((r.mse, r.mae), (0.0, 0.0));
        assert!(evaluate(&p, &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn evaluate_matches_loop_oracle() {
        let cell = |i: usize, j: usize, s: f64| ((i * 31 + j * 17) as f64 * s).sin();
        let p = Matrix::from_rows(24, (0..50).map(|i| (0..24).map(|j| cell(i, j, 0.37)).collect::<Vec<_>>())).unwrap();
        let t = Matrix::from_rows(24, (0..50).map(|i| (0..24).map(|j| cell(i, j, 0.11)).collect::<Vec<_>>())).unwrap();
        let r = evaluate(&p, &t).unwrap();
        let (mut se, mut ae) = (0.0, 0.0);
        for i in 0..50 {
            for j in 0..24 {
                let d = cell(i, j, 0.37) - cell(i, j, 0.11);
                se += d * d;
                ae += d.abs();
            }
        }
        assert!((r.mse - se / 1200.0).abs() < 1e-12);
        assert!((r.mae - ae / 1200.0).abs() < 1e-12);
        assert!(r.mae <= r.mse.sqrt());
    }

    #[test]
    fn gains_from_reported_table_values() {
        assert_eq!(round1(gain_percent(1.6197, 0.7097).unwrap()), 56.2);
        assert_eq!(round1(gain_percent(0.7035, 0.6475).unwrap()), 8.0);
        assert_eq!(gain_percent(0.5, 0.5).unwrap(), 0.0);
        assert!(gain_percent(0.0, 0.1).is_err());
        assert!(gain_percent(-1.0, 0.1).is_err());
    }

    #[test]
    fn gains_absent_without_base() {
        let t = Matrix::from_rows(1, [[1.0]]).unwrap();
        let r = evaluate(&Matrix::zeros(1, 1), &t).unwrap();
        assert!(r.gain_mse_pct.is_none());
        let base = r.clone();
        let better = evaluate(&Matrix::from_rows(1, [[0.5]]).unwrap(), &t).unwrap().with_base(&base);
        assert_eq!(better.gain_mse_pct, Some(75.0));
        assert_eq!(better.gain_mae_pct, Some(50.0));
    }
}
