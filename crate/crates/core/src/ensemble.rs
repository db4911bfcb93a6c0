//! Step-wise top-K ensembling and selection of K from observable prediction
//! statistics.
//!
//! Members are passed as rank-ordered prediction slices (`num_windows × H`
//! each, best member first). For a candidate size `K`:
//!
//! - `V(K)`: population variance across the top-K members in each cell,
//!   averaged over all cells.
//! - `R(K)`: mean Pearson correlation over all member pairs of the flattened
//!   prediction vectors. A pair with a constant vector contributes 0.
//! - `S(K)`: min-max normalized `V` plus min-max normalized `R` over the grid.
//!
//! `K*` is the smallest `K` with minimal `S`.

use serde::{Deserialize, Serialize};

use crate::error::{ForecastError, Result};
use crate::matrix::Matrix;

pub const DEFAULT_EPSILON: f64 = 1e-8;
pub const DEFAULT_STEP: usize = 5;

/// Candidate ensemble sizes `{M, 2M, …} ∩ [1, N]`, with `N` appended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KGrid {
    pub step: usize,
    pub candidates: Vec<usize>,
}

impl KGrid {
    pub fn new(step: usize, pool_size: usize) -> Result<Self> {
        if step == 0 {
            return Err(ForecastError::param("ensemble step M must be at least 1"));
        }
        if pool_size == 0 {
            return Err(ForecastError::param("ensemble grid needs at least one member"));
        }
        let mut candidates: Vec<usize> = (1..).map(|i| i * step).take_while(|k| *k <= pool_size).collect();
        if candidates.last() != Some(&pool_size) {
            candidates.push(pool_size);
        }
        Ok(Self { step, candidates })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub k: usize,
    pub v: f64,
    pub r: f64,
    pub s: f64,
}

fn check_members(preds: &[Matrix], k: usize) -> Result<()> {
    if k == 0 || k > preds.len() {
        return Err(ForecastError::param(format!(
            "K must lie in [1, {}], got {k}",
            preds.len()
        )));
    }
    let shape = preds[0].shape();
    if let Some(bad) = preds[..k].iter().find(|p| p.shape() != shape) {
        return Err(ForecastError::Shape {
            context: "ensemble member cells",
            expected: shape.0 * shape.1,
            got: bad.rows() * bad.cols(),
        });
    }
    Ok(())
}

/// Element-wise mean of the first `k` members.
pub fn topk_average(ranked_preds: &[Matrix], k: usize) -> Result<Matrix> {
    check_members(ranked_preds, k)?;
    let (rows, cols) = ranked_preds[0].shape();
    let mut sum = vec![0.0; rows * cols];
    for m in &ranked_preds[..k] {
        for (s, v) in sum.iter_mut().zip(m.as_slice()) {
            *s += v;
        }
    }
    let kf = k as f64;
    Matrix::from_vec(rows, cols, sum.into_iter().map(|s| s / kf).collect())
}

/// `V(K)`; defined as 0 for `K = 1`.
pub fn variance_stat(ranked_preds: &[Matrix], k: usize) -> Result<f64> {
    check_members(ranked_preds, k)?;
    if k == 1 {
        return Ok(0.0);
    }
    let cells = ranked_preds[0].as_slice().len();
    if cells == 0 {
        return Ok(0.0);
    }
    let members = &ranked_preds[..k];
    let kf = k as f64;
    let mut total = 0.0;
    for c in 0..cells {
        let mean = members.iter().map(|m| m.as_slice()[c]).sum::<f64>() / kf;
        total += members
            .iter()
            .map(|m| {
                let d = m.as_slice()[c] - mean;
                d * d
            })
            .sum::<f64>()
            / kf;
    }
    Ok(total / cells as f64)
}

/// Pearson correlation of two equal-length vectors; 0 if either is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    if a.is_empty() {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

/// Pairwise correlation matrix of the members' flattened predictions.
fn correlation_matrix(preds: &[Matrix]) -> Vec<Vec<f64>> {
    let n = preds.len();
    let mut c = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let r = pearson(preds[i].as_slice(), preds[j].as_slice());
            c[i][j] = r;
            c[j][i] = r;
        }
    }
    c
}

fn mean_upper(corr: &[Vec<f64>], k: usize) -> f64 {
    if k < 2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            sum += corr[i][j];
        }
    }
    sum / (k * (k - 1) / 2) as f64
}

/// `R(K)`; defined as 1 for `K = 1`.
pub fn meancorr_stat(ranked_preds: &[Matrix], k: usize) -> Result<f64> {
    check_members(ranked_preds, k)?;
    Ok(mean_upper(&correlation_matrix(&ranked_preds[..k]), k))
}

/// `S(K)` for each `(V, R)` pair of the grid, normalized over the grid.
pub fn score(stats: &[(f64, f64)], epsilon: f64) -> Vec<f64> {
    let fold = |f: fn(&(f64, f64)) -> f64| {
        stats.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
            (lo.min(x), hi.max(x))
        })
    };
    let (v_min, v_max) = fold(|s| s.0);
    let (r_min, r_max) = fold(|s| s.1);
    stats
        .iter()
        .map(|(v, r)| (v - v_min) / (v_max - v_min + epsilon) + (r - r_min) / (r_max - r_min + epsilon))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub k_star: usize,
    pub stats: Vec<EnsembleStats>,
    pub forecast: Matrix,
}

/// Computes `V`, `R`, `S` over the grid and averages the top `K*` members.
pub fn select_k(ranked_preds: &[Matrix], grid: &KGrid, epsilon: f64) -> Result<Selection> {
    if grid.candidates.is_empty() {
        return Err(ForecastError::param("empty ensemble grid"));
    }
    if !(epsilon > 0.0) {
        return Err(ForecastError::param("epsilon must be positive"));
    }
    let k_max = *grid.candidates.iter().max().expect("non-empty");
    check_members(ranked_preds, k_max)?;
    if grid.candidates.contains(&0) {
        return Err(ForecastError::param("ensemble grid contains K = 0"));
    }

    let corr = correlation_matrix(&ranked_preds[..k_max]);
    let vr: Vec<(f64, f64)> = grid
        .candidates
        .iter()
        .map(|&k| Ok((variance_stat(ranked_preds, k)?, mean_upper(&corr, k))))
        .collect::<Result<_>>()?;
    let s = score(&vr, epsilon);

    let mut best = 0;
    for i in 1..s.len() {
        if s[i] < s[best] || (s[i] == s[best] && grid.candidates[i] < grid.candidates[best]) {
            best = i;
        }
    }
    let stats = grid
        .candidates
        .iter()
        .zip(vr.iter().zip(&s))
        .map(|(&k, (&(v, r), &s))| EnsembleStats { k, v, r, s })
        .collect();
    let k_star = grid.candidates[best];
    Ok(Selection {
        k_star,
        stats,
        forecast: topk_average(ranked_preds, k_star)?,
    })
}

/// Empirical bias/variance/covariance split of the top-K ensemble MSE.
///
/// Errors are `ε_i = pred_i − y` per cell and all moments are taken over
/// cells around the ensemble bias `b = mean_i mean_cells ε_i`:
///
/// - `variance = (1/K) Σ_i mean(d_i²)` with `d_i = ε_i − b`
/// - `mean_covariance = 2/(K(K−1)) Σ_{i<j} mean(d_i d_j)`
/// - `covariance_term = (1 − 1/K) · mean_covariance`
///
/// so that `bias² + variance/K + covariance_term` equals the ensemble MSE
/// exactly for noise-free targets. `residual` is the measured MSE minus those
/// three terms; it stands in for the unobservable noise variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorDecomposition {
    pub k: usize,
    pub bias_sq: f64,
    pub variance: f64,
    pub variance_term: f64,
    pub mean_covariance: f64,
    pub covariance_term: f64,
    pub covariance_defined: bool,
    pub modeled_total: f64,
    pub measured_mse: f64,
    pub residual: f64,
}

pub fn decompose_error(ranked_preds: &[Matrix], targets: &Matrix, k: usize) -> Result<ErrorDecomposition> {
    check_members(ranked_preds, k)?;
    if ranked_preds[0].shape() != targets.shape() {
        return Err(ForecastError::Shape {
            context: "decomposition targets",
            expected: ranked_preds[0].as_slice().len(),
            got: targets.as_slice().len(),
        });
    }
    let cells = targets.as_slice().len();
    if cells == 0 {
        return Err(ForecastError::EmptyData("no cells to decompose".into()));
    }
    let n = cells as f64;
    let kf = k as f64;
    let y = targets.as_slice();
    let errors: Vec<Vec<f64>> = ranked_preds[..k]
        .iter()
        .map(|p| p.as_slice().iter().zip(y).map(|(a, b)| a - b).collect())
        .collect();
    let bias = errors.iter().flatten().sum::<f64>() / (n * kf);
    let dev: Vec<Vec<f64>> = errors
        .iter()
        .map(|e| e.iter().map(|v| v - bias).collect())
        .collect();
    let variance = dev.iter().map(|d| d.iter().map(|v| v * v).sum::<f64>() / n).sum::<f64>() / kf;

    let (mean_covariance, covariance_term, covariance_defined) = if k < 2 {
        (0.0, 0.0, false)
    } else {
        let mut sum = 0.0;
        for i in 0..k {
            for j in i + 1..k {
                sum += dev[i].iter().zip(&dev[j]).map(|(a, b)| a * b).sum::<f64>() / n;
            }
        }
        let mean = 2.0 * sum / (kf * (kf - 1.0));
        (mean, (1.0 - 1.0 / kf) * mean, true)
    };

    let measured_mse = (0..cells)
        .map(|c| {
            let e = errors.iter().map(|e| e[c]).sum::<f64>() / kf;
            e * e
        })
        .sum::<f64>()
        / n;
    let bias_sq = bias * bias;
    let variance_term = variance / kf;
    let modeled_total = bias_sq + variance_term + covariance_term;
    Ok(ErrorDecomposition {
        k,
        bias_sq,
        variance,
        variance_term,
        mean_covariance,
        covariance_term,
        covariance_defined,
        modeled_total,
        measured_mse,
        residual: measured_mse - modeled_total,
    })
}
