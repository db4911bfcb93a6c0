//! End-to-end experiment runs: config file in, report out.
//!
//! Per horizon the pipeline is split → scale → window → first-stage training
//! → first-stage forecasts → segment enumeration → second-stage pool training
//! → pool predictions → K selection → evaluation against the first-stage
//! forecast. A failing horizon is recorded in the report and the remaining
//! horizons still run.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::augment::{default_segment_width, enumerate_segments, first_stage_forecasts, ForecastCache};
use crate::codec::write_atomic;
use crate::ensemble::{decompose_error, select_k, ErrorDecomposition, KGrid, DEFAULT_EPSILON, DEFAULT_STEP};
use crate::error::{ForecastError, Result};
use crate::ingest::{load_csv, DatasetFormat, DatasetSpec};
use crate::linear::{init_model, train, Examples, ModelKind, Optimizer, Strategy, TrainConfig};
use crate::matrix::Matrix;
use crate::metrics::{evaluate, round1, EvalResult};
use crate::refine::{mean_abs_delta, pool_predict, train_pool, PoolSettings, SegmentData};
use crate::series::{fit_scaler, make_windows, split_series, targets_matrix, Scaler, SplitSpec, WindowPair};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerName {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatsSplit {
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSpace {
    Standardized,
    Raw,
}

/// Training hyperparameters shared by both stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "defaults::patience")]
    pub patience: usize,
    #[serde(default = "defaults::optimizer")]
    pub optimizer: OptimizerName,
    #[serde(default = "defaults::beta1")]
    pub beta1: f64,
    #[serde(default = "defaults::beta2")]
    pub beta2: f64,
    #[serde(default = "defaults::adam_eps")]
    pub adam_eps: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            learning_rate: defaults::learning_rate(),
            batch_size: defaults::batch_size(),
            max_epochs: defaults::max_epochs(),
            patience: defaults::patience(),
            optimizer: defaults::optimizer(),
            beta1: defaults::beta1(),
            beta2: defaults::beta2(),
            adam_eps: defaults::adam_eps(),
        }
    }
}

mod defaults {
    use super::*;

    pub fn learning_rate() -> f64 {
        5e-3
    }
    pub fn batch_size() -> usize {
        32
    }
    pub fn max_epochs() -> usize {
        20
    }
    pub fn patience() -> usize {
        3
    }
    pub fn optimizer() -> OptimizerName {
        OptimizerName::Adam
    }
    pub fn beta1() -> f64 {
        0.9
    }
    pub fn beta2() -> f64 {
        0.999
    }
    pub fn adam_eps() -> f64 {
        1e-8
    }
    pub fn kind() -> ModelKind {
        ModelKind::Plain
    }
    pub fn strategy() -> Strategy {
        Strategy::EarlyStopping
    }
    pub fn step() -> usize {
        DEFAULT_STEP
    }
    pub fn epsilon() -> f64 {
        DEFAULT_EPSILON
    }
    pub fn kernel() -> usize {
        25
    }
    pub fn stats_split() -> StatsSplit {
        StatsSplit::Test
    }
    pub fn eval_space() -> EvalSpace {
        EvalSpace::Standardized
    }
}

/// Experiment description as read from a TOML file. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub dataset: DatasetSpec,
    /// Defaults to 104 for ILI and 336 otherwise.
    #[serde(default)]
    pub lookback: Option<usize>,
    pub horizons: Vec<usize>,
    #[serde(default = "defaults::kind")]
    pub base_kind: ModelKind,
    #[serde(default = "defaults::kernel")]
    pub kernel: usize,
    #[serde(default = "defaults::strategy")]
    pub stage1_strategy: Strategy,
    #[serde(default = "defaults::strategy")]
    pub stage2_strategy: Strategy,
    /// Overrides the one-third-of-horizon segment width.
    #[serde(default)]
    pub segment_window: Option<usize>,
    /// Defaults to `[1]` for ILI and `[1, 2, 4, 8]` otherwise.
    #[serde(default)]
    pub strides: Option<Vec<usize>>,
    #[serde(default = "defaults::step")]
    pub ensemble_step: usize,
    #[serde(default = "defaults::epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "defaults::stats_split")]
    pub stats_split: StatsSplit,
    #[serde(default = "defaults::eval_space")]
    pub eval_space: EvalSpace,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub training: TrainingSection,
    /// Report destination; the CLI `--out` flag takes precedence.
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Where first-stage models, forecast caches and pools are written.
    #[serde(default)]
    pub artifacts_dir: Option<PathBuf>,
}

/// Every value the run actually used, echoed into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub dataset_name: String,
    pub dataset_path: PathBuf,
    pub dataset_format: DatasetFormat,
    pub target_column: String,
    pub lookback: usize,
    pub horizons: Vec<usize>,
    pub base_kind: ModelKind,
    pub kernel: usize,
    pub strategy_label: String,
    pub strides: Vec<usize>,
    pub segment_window_override: Option<usize>,
    pub ensemble_step: usize,
    pub epsilon: f64,
    pub base_seed: u64,
    pub stats_split: StatsSplit,
    pub eval_space: EvalSpace,
    pub split: SplitSpec,
    pub stage1_training: TrainConfig,
    pub stage2_training: TrainConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| ForecastError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; a relative dataset path resolves against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ForecastError::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if cfg.dataset.path.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.dataset.path = dir.join(&cfg.dataset.path);
            }
        }
        Ok(cfg)
    }

    pub fn format(&self) -> DatasetFormat {
        self.dataset.resolved_format()
    }

    pub fn resolved_lookback(&self) -> usize {
        self.lookback.unwrap_or(match self.format() {
            DatasetFormat::Ili => 104,
            _ => 336,
        })
    }

    pub fn resolved_strides(&self) -> Vec<usize> {
        self.strides.clone().unwrap_or_else(|| match self.format() {
            DatasetFormat::Ili => vec![1],
            _ => vec![1, 2, 4, 8],
        })
    }

    pub fn strategy_label(&self) -> String {
        format!("{}-{}", self.stage1_strategy.label(), self.stage2_strategy.label())
    }

    pub fn segment_width(&self, horizon: usize) -> usize {
        self.segment_window.unwrap_or_else(|| default_segment_width(horizon))
    }

    fn train_config(&self, strategy: Strategy, seed: u64) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            strategy,
            patience: t.patience,
            seed,
            optimizer: match t.optimizer {
                OptimizerName::Sgd => Optimizer::Sgd,
                OptimizerName::Adam => Optimizer::Adam {
                    beta1: t.beta1,
                    beta2: t.beta2,
                    eps: t.adam_eps,
                },
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ForecastError::Config(m));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return bad(format!(
                "unsupported schema_version {} (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.horizons.is_empty() {
            return bad("at least one horizon is required".into());
        }
        if let Some(w) = self.segment_window {
            if let Some(h) = self.horizons.iter().find(|h| **h < w) {
                return bad(format!("segment_window {w} exceeds horizon {h}"));
            }
            if w == 0 {
                return bad("segment_window must be at least 1".into());
            }
        } else if let Some(h) = self.horizons.iter().find(|h| **h < 3) {
            return bad(format!(
                "horizon {h} is below 3; the one-third segment width needs H >= 3 (or set segment_window)"
            ));
        }
        if self.resolved_lookback() == 0 {
            return bad("lookback must be at least 1".into());
        }
        if self.ensemble_step == 0 {
            return bad("ensemble_step must be at least 1".into());
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.resolved_strides().iter().any(|s| *s == 0) || self.resolved_strides().is_empty() {
            return bad("strides must be non-empty and >= 1".into());
        }
        if self.base_kind == ModelKind::Dlinear && (self.kernel == 0 || self.kernel % 2 == 0) {
            return bad(format!("kernel must be odd and >= 1, got {}", self.kernel));
        }
        if self.training.max_epochs == 0 {
            return bad("training.max_epochs must be at least 1".into());
        }
        self.split
            .validate()
            .map_err(|e| ForecastError::Config(e.to_string()))?;
        for strategy in [self.stage1_strategy, self.stage2_strategy] {
            self.train_config(strategy, 0)
                .normalized()
                .map_err(|e| ForecastError::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn resolve(&self, target_column: &str) -> Result<ResolvedConfig> {
        Ok(ResolvedConfig {
            dataset_name: self.dataset.name.clone(),
            dataset_path: self.dataset.path.clone(),
            dataset_format: self.format(),
            target_column: target_column.to_string(),
            lookback: self.resolved_lookback(),
            horizons: self.horizons.clone(),
            base_kind: self.base_kind,
            kernel: self.kernel,
            strategy_label: self.strategy_label(),
            strides: self.resolved_strides(),
            segment_window_override: self.segment_window,
            ensemble_step: self.ensemble_step,
            epsilon: self.epsilon,
            base_seed: self.base_seed,
            stats_split: self.stats_split,
            eval_space: self.eval_space,
            split: self.split,
            stage1_training: self
                .train_config(self.stage1_strategy, self.base_seed)
                .normalized()?,
            stage2_training: self
                .train_config(self.stage2_strategy, self.base_seed)
                .normalized()?,
        })
    }
}

/// Execution knobs that do not change results.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub workers: usize,
    /// Also train each pool sequentially, time both and require identical pools.
    pub compare_sequential: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            compare_sequential: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub k: usize,
    pub v: f64,
    pub r: f64,
    pub s: f64,
    pub chosen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolMemberSummary {
    pub rank: usize,
    pub segment_index: usize,
    pub start: usize,
    pub end: usize,
    pub val_mse: f64,
    /// Mean |second stage − first stage| on the test split.
    pub mean_abs_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonTimings {
    pub stage1_ms: f64,
    pub stage2_ms: f64,
    pub selection_ms: f64,
    pub stage2_sequential_ms: Option<f64>,
    pub stage2_parallel_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonRecord {
    pub horizon: usize,
    pub strategy_label: String,
    pub segment_width: usize,
    pub n: usize,
    pub k_grid: Vec<usize>,
    pub k_star: usize,
    pub windows: WindowCounts,
    pub base: EvalResult,
    pub bttf: EvalResult,
    pub grid: Vec<GridRow>,
    pub stage1: StageSummary,
    pub first_stage_hash: String,
    pub pool: Vec<PoolMemberSummary>,
    /// Labeled diagnostic on the test split at `K*`.
    pub error_decomposition: ErrorDecomposition,
    pub parallel_check: Option<bool>,
    pub timings: HorizonTimings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum HorizonOutcome {
    Ok(Box<HorizonRecord>),
    Failed { horizon: usize, error: String },
}

impl HorizonOutcome {
    pub fn record(&self) -> Option<&HorizonRecord> {
        match self {
            HorizonOutcome::Ok(r) => Some(r),
            HorizonOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub schema_version: u32,
    pub config: ResolvedConfig,
    pub rows_loaded: usize,
    pub results: Vec<HorizonOutcome>,
}

struct Prepared {
    scaler: Scaler,
    train: Vec<WindowPair>,
    val: Vec<WindowPair>,
    test: Vec<WindowPair>,
}

fn prepare(series: &crate::series::TimeSeries, cfg: &ExperimentConfig, horizon: usize) -> Result<Prepared> {
    let lookback = cfg.resolved_lookback();
    let splits = split_series(series, &cfg.split, lookback).map_err(|e| e.in_stage("split"))?;
    let scaler = fit_scaler(&splits.train).map_err(|e| e.in_stage("scale"))?;
    let window = |s| make_windows(&scaler.apply_series(s), lookback, horizon).map_err(|e| e.in_stage("window"));
    Ok(Prepared {
        scaler,
        train: window(&splits.train)?,
        val: window(&splits.val)?,
        test: window(&splits.test)?,
    })
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn cached_forecasts(
    model: &crate::linear::LinearForecaster,
    hash: &str,
    windows: &[WindowPair],
    split: &str,
    dir: Option<&Path>,
) -> Result<Matrix> {
    if let Some(dir) = dir {
        if let Some(c) = ForecastCache::load(dir, hash, split)? {
            if c.forecasts.rows() == windows.len() {
                return Ok(c.forecasts);
            }
        }
    }
    let forecasts = first_stage_forecasts(model, windows)?;
    if let Some(dir) = dir {
        ForecastCache {
            model_hash: hash.to_string(),
            split: split.to_string(),
            forecasts: forecasts.clone(),
        }
        .save(dir)?;
    }
    Ok(forecasts)
}

fn to_raw(m: &Matrix, scaler: &Scaler) -> Matrix {
    Matrix::from_vec(m.rows(), m.cols(), scaler.invert_slice(m.as_slice())).expect("same shape")
}

/// Runs the whole pipeline for one horizon.
pub fn run_horizon(
    series: &crate::series::TimeSeries,
    cfg: &ExperimentConfig,
    horizon: usize,
    options: &RunOptions,
) -> Result<HorizonRecord> {
    let data = prepare(series, cfg, horizon)?;
    let lookback = cfg.resolved_lookback();
    let artifacts = cfg
        .artifacts_dir
        .as_ref()
        .map(|d| d.join(format!("h{horizon}")));
    let artifacts = artifacts.as_deref();

    // Stage 1.
    let t1 = Instant::now();
    let stage1_cfg = cfg.train_config(cfg.stage1_strategy, cfg.base_seed);
    let (stage1, stage1_report) = (|| {
        let model = init_model(cfg.base_kind, lookback, horizon, cfg.kernel, cfg.base_seed)?;
        let train_set = Examples::from_windows(&data.train)?;
        let val_set = Examples::from_windows(&data.val)?;
        train(model, &train_set, Some(&val_set), &stage1_cfg)
    })()
    .map_err(|e| e.in_stage("stage1"))?;
    let hash = stage1.content_hash();
    let forecasts = (|| {
        if let Some(dir) = artifacts {
            stage1.save(&dir.join("stage1.bin"))?;
        }
        Ok::<_, ForecastError>((
            cached_forecasts(&stage1, &hash, &data.train, "train", artifacts)?,
            cached_forecasts(&stage1, &hash, &data.val, "val", artifacts)?,
            cached_forecasts(&stage1, &hash, &data.test, "test", artifacts)?,
        ))
    })()
    .map_err(|e| e.in_stage("forecast"))?;
    let (fc_train, fc_val, fc_test) = forecasts;
    let stage1_ms = elapsed_ms(t1);

    // Stage 2.
    let t2 = Instant::now();
    let width = cfg.segment_width(horizon);
    let segments = enumerate_segments(horizon, width, &cfg.resolved_strides()).map_err(|e| e.in_stage("segments"))?;
    let datasets = segments
        .iter()
        .map(|s| SegmentData::build(*s, &data.train, &fc_train, &data.val, &fc_val))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("augment"))?;
    let settings = PoolSettings {
        kind: cfg.base_kind,
        kernel: cfg.kernel,
        train: cfg.train_config(cfg.stage2_strategy, cfg.base_seed),
        base_seed: cfg.base_seed,
    };
    let tp = Instant::now();
    let pool = train_pool(&datasets, &settings, options.workers).map_err(|e| e.in_stage("stage2"))?;
    let pool_ms = elapsed_ms(tp);
    let (mut seq_ms, mut par_ms, mut parallel_check) = (None, None, None);
    if options.compare_sequential {
        let ts = Instant::now();
        let sequential = train_pool(&datasets, &settings, 1).map_err(|e| e.in_stage("stage2"))?;
        seq_ms = Some(elapsed_ms(ts));
        par_ms = Some(pool_ms);
        let same = sequential.to_bytes() == pool.to_bytes();
        if !same {
            return Err(ForecastError::param(format!(
                "pool trained with {} workers differs from the sequential pool",
                options.workers
            ))
            .in_stage("stage2"));
        }
        parallel_check = Some(same);
    }
    if let Some(dir) = artifacts {
        pool.save(&dir.join("pool"), &hash).map_err(|e| e.in_stage("stage2"))?;
    }
    let stage2_ms = elapsed_ms(t2);

    // Selection.
    let t3 = Instant::now();
    let test_preds = pool_predict(&pool, &data.test, &fc_test).map_err(|e| e.in_stage("predict"))?;
    let grid = KGrid::new(cfg.ensemble_step, pool.len()).map_err(|e| e.in_stage("select"))?;
    let stats_preds = match cfg.stats_split {
        StatsSplit::Test => None,
        StatsSplit::Val => Some(pool_predict(&pool, &data.val, &fc_val).map_err(|e| e.in_stage("predict"))?),
    };
    let selection = select_k(stats_preds.as_deref().unwrap_or(&test_preds), &grid, cfg.epsilon)
        .map_err(|e| e.in_stage("select"))?;
    let final_forecast = crate::ensemble::topk_average(&test_preds, selection.k_star).map_err(|e| e.in_stage("select"))?;
    let selection_ms = elapsed_ms(t3);

    // Evaluation.
    let targets = targets_matrix(&data.test).map_err(|e| e.in_stage("evaluate"))?;
    let (base_pred, final_pred, eval_targets) = match cfg.eval_space {
        EvalSpace::Standardized => (fc_test.clone(), final_forecast, targets.clone()),
        EvalSpace::Raw => (
            to_raw(&fc_test, &data.scaler),
            to_raw(&final_forecast, &data.scaler),
            to_raw(&targets, &data.scaler),
        ),
    };
    let label = cfg.base_kind.label();
    let base = evaluate(&base_pred, &eval_targets)
        .map_err(|e| e.in_stage("evaluate"))?
        .labeled(label);
    let bttf = evaluate(&final_pred, &eval_targets)
        .map_err(|e| e.in_stage("evaluate"))?
        .labeled(format!("{label}+BTTF"))
        .with_base(&base);
    let decomposition = decompose_error(&test_preds, &targets, selection.k_star).map_err(|e| e.in_stage("evaluate"))?;
    let deltas = mean_abs_delta(&test_preds, &fc_test).map_err(|e| e.in_stage("evaluate"))?;

    let pool_summary = pool
        .ranked()
        .iter()
        .zip(deltas)
        .map(|(e, d)| PoolMemberSummary {
            rank: e.rank,
            segment_index: e.segment.index,
            start: e.segment.start,
            end: e.segment.end,
            val_mse: e.val_mse,
            mean_abs_delta: d,
        })
        .collect();

    Ok(HorizonRecord {
        horizon,
        strategy_label: cfg.strategy_label(),
        segment_width: width,
        n: pool.len(),
        k_grid: grid.candidates.clone(),
        k_star: selection.k_star,
        windows: WindowCounts {
            train: data.train.len(),
            val: data.val.len(),
            test: data.test.len(),
        },
        base,
        bttf,
        grid: selection
            .stats
            .iter()
            .map(|s| GridRow {
                k: s.k,
                v: s.v,
                r: s.r,
                s: s.s,
                chosen: s.k == selection.k_star,
            })
            .collect(),
        stage1: StageSummary {
            epochs_run: stage1_report.stopped_epoch,
            best_epoch: stage1_report.best_epoch,
            best_val_loss: stage1_report.best_val_loss,
        },
        first_stage_hash: hash,
        pool: pool_summary,
        error_decomposition: decomposition,
        parallel_check,
        timings: HorizonTimings {
            stage1_ms,
            stage2_ms,
            selection_ms,
            stage2_sequential_ms: seq_ms,
            stage2_parallel_ms: par_ms,
        },
    })
}

/// Loads the dataset and runs every horizon in order.
pub fn run_experiment(cfg: &ExperimentConfig, options: &RunOptions) -> Result<ForecastReport> {
    cfg.validate()?;
    let loaded = load_csv(&cfg.dataset).map_err(|e| e.in_stage("load"))?;
    let resolved = cfg.resolve(&loaded.target_column)?;
    let results = cfg
        .horizons
        .iter()
        .map(|&h| match run_horizon(&loaded.series, cfg, h, options) {
            Ok(r) => HorizonOutcome::Ok(Box::new(r)),
            Err(e) => HorizonOutcome::Failed {
                horizon: h,
                error: e.to_string(),
            },
        })
        .collect();
    Ok(ForecastReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: resolved,
        rows_loaded: loaded.rows,
        results,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ForecastReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Flat accuracy table: one row per model per horizon. Gains are rounded
    /// to one decimal and left empty for base rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset,horizon,strategy,model,mse,mae,gain_mse_pct,gain_mae_pct\n");
        let opt = |g: Option<f64>| g.map(|v| format!("{:.1}", round1(v))).unwrap_or_default();
        for rec in self.results.iter().filter_map(HorizonOutcome::record) {
            for r in [&rec.base, &rec.bttf] {
                out.push_str(&format!(
                    "{},{},{},{},{:.4},{:.4},{},{}\n",
                    self.config.dataset_name,
                    rec.horizon,
                    rec.strategy_label,
                    r.model_label,
                    r.mse,
                    r.mae,
                    opt(r.gain_mse_pct),
                    opt(r.gain_mae_pct)
                ));
            }
        }
        out
    }
}

/// Writes the report atomically in the requested format.
pub fn emit_report(report: &ForecastReport, format: ReportFormat, path: &Path) -> Result<()> {
    let body = match format {
        ReportFormat::Json => report.to_json()?,
        ReportFormat::Csv => report.to_csv(),
    };
    write_atomic(path, body.as_bytes())
}
