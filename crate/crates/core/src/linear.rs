//! Direct multi-step linear forecasters (Linear and DLinear).
//!
//! A forecaster maps an input window of length `input_len` to all `horizon`
//! future values in one pass. The DLinear kind first splits the window into
//! a moving-average trend and a seasonal remainder and applies one linear map
//! to each branch.
//!
//! Parameters are stored flat. Plain: `W (H×in)` then `b (H)`. DLinear: the
//! trend branch `W_t, b_t` followed by the seasonal branch `W_s, b_s`.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ForecastError, Result};
use crate::matrix::Matrix;
use crate::series::WindowPair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Plain,
    Dlinear,
}

impl ModelKind {
    /// Label used in reports, e.g. "Linear" or "DLinear".
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Plain => "Linear",
            ModelKind::Dlinear => "DLinear",
        }
    }

    fn branches(self) -> usize {
        match self {
            ModelKind::Plain => 1,
            ModelKind::Dlinear => 2,
        }
    }

    fn tag(self) -> u8 {
        match self {
            ModelKind::Plain => 0,
            ModelKind::Dlinear => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearForecaster {
    kind: ModelKind,
    input_len: usize,
    horizon: usize,
    kernel: usize,
    seed: u64,
    params: Vec<f64>,
}

/// Seeded model with weights uniform on `[-1/input_len, 1/input_len]` and zero bias.
pub fn init_model(
    kind: ModelKind,
    input_len: usize,
    horizon: usize,
    kernel: usize,
    seed: u64,
) -> Result<LinearForecaster> {
    if input_len == 0 || horizon == 0 {
        return Err(ForecastError::param("input_len and horizon must be at least 1"));
    }
    if kind == ModelKind::Dlinear && (kernel == 0 || kernel % 2 == 0) {
        return Err(ForecastError::param(format!(
            "moving-average kernel must be odd and >= 1, got {kernel}"
        )));
    }
    let kernel = if kind == ModelKind::Plain { 0 } else { kernel };
    let bound = 1.0 / input_len as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block = horizon * input_len;
    let mut params = Vec::with_capacity(kind.branches() * (block + horizon));
    for _ in 0..kind.branches() {
        params.extend((0..block).map(|_| rng.gen_range(-bound..=bound)));
        params.extend(std::iter::repeat(0.0).take(horizon));
    }
    Ok(LinearForecaster {
        kind,
        input_len,
        horizon,
        kernel,
        seed,
        params,
    })
}

/// Centered moving average with replicate padding, plus the remainder.
pub fn decompose(window: &[f64], kernel: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if window.is_empty() {
        return Err(ForecastError::param("cannot decompose an empty window"));
    }
    if kernel == 0 || kernel % 2 == 0 {
        return Err(ForecastError::param(format!("kernel must be odd and >= 1, got {kernel}")));
    }
    let half = (kernel - 1) / 2;
    let n = window.len();
    let at = |j: isize| window[j.clamp(0, n as isize - 1) as usize];
    // Averaging offsets from the center value keeps constant stretches exact.
    let trend: Vec<f64> = (0..n as isize)
        .map(|i| {
            let center = at(i);
            let offset: f64 = (i - half as isize..=i + half as isize).map(|j| at(j) - center).sum();
            center + offset / kernel as f64
        })
        .collect();
    let seasonal = window.iter().zip(&trend).map(|(x, t)| x - t).collect();
    Ok((trend, seasonal))
}

impl LinearForecaster {
    /// Builds a model from explicit parameters (layout described at module level).
    pub fn from_params(
        kind: ModelKind,
        input_len: usize,
        horizon: usize,
        kernel: usize,
        seed: u64,
        params: Vec<f64>,
    ) -> Result<Self> {
        let mut model = init_model(kind, input_len, horizon, kernel.max(1), seed)?;
        if params.len() != model.params.len() {
            return Err(ForecastError::Shape {
                context: "parameter vector",
                expected: model.params.len(),
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(ForecastError::param("parameters must be finite"));
        }
        model.params = params;
        Ok(model)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn branch_len(&self) -> usize {
        self.horizon * self.input_len + self.horizon
    }

    /// Weight matrix (H×input_len) of branch 0 (plain / trend) or 1 (seasonal).
    pub fn weights(&self, branch: usize) -> Matrix {
        let off = branch * self.branch_len();
        let block = self.horizon * self.input_len;
        Matrix::from_vec(self.horizon, self.input_len, self.params[off..off + block].to_vec())
            .expect("block size matches")
    }

    pub fn bias(&self, branch: usize) -> &[f64] {
        let off = branch * self.branch_len() + self.horizon * self.input_len;
        &self.params[off..off + self.horizon]
    }

    /// The per-branch inputs the linear maps act on: the raw window for the
    /// plain kind, trend then seasonal for DLinear.
    fn branch_inputs(&self, input: &[f64]) -> Vec<f64> {
        match self.kind {
            ModelKind::Plain => input.to_vec(),
            ModelKind::Dlinear => {
                let (trend, seasonal) =
                    decompose(input, self.kernel).expect("kernel validated at construction");
                let mut f = trend;
                f.extend(seasonal);
                f
            }
        }
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_len {
            return Err(ForecastError::Shape {
                context: "forecaster input",
                expected: self.input_len,
                got: input.len(),
            });
        }
        Ok(())
    }

    fn forward_features(&self, features: &[f64], out: &mut [f64]) {
        let (h, l) = (self.horizon, self.input_len);
        out.fill(0.0);
        for b in 0..self.kind.branches() {
            let off = b * self.branch_len();
            let x = &features[b * l..(b + 1) * l];
            let w = &self.params[off..off + h * l];
            let bias = &self.params[off + h * l..off + h * l + h];
            for (k, o) in out.iter_mut().enumerate() {
                let row = &w[k * l..(k + 1) * l];
                *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + bias[k];
            }
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let features = self.branch_inputs(input);
        let mut out = vec![0.0; self.horizon];
        self.forward_features(&features, &mut out);
        Ok(out)
    }

    /// Forecasts for every row of `inputs`, as a `rows × H` matrix.
    pub fn predict(&self, inputs: &Matrix) -> Result<Matrix> {
        if inputs.cols() != self.input_len {
            return Err(ForecastError::Shape {
                context: "forecaster input",
                expected: self.input_len,
                got: inputs.cols(),
            });
        }
        let mut out = Matrix::zeros(inputs.rows(), self.horizon);
        for (i, x) in inputs.iter_rows().enumerate() {
            let f = self.branch_inputs(x);
            self.forward_features(&f, out.row_mut(i));
        }
        Ok(out)
    }

    const MAGIC: &'static [u8; 4] = b"BTLF";
    pub const FORMAT_VERSION: u32 = 1;

    /// Self-describing little-endian record: magic, version, kind, dims,
    /// kernel, seed, parameter count, then the parameters as IEEE-754 doubles.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(53 + 8 * self.params.len());
        out.extend_from_slice(Self::MAGIC);
        out.extend_from_slice(&Self::FORMAT_VERSION.to_le_bytes());
        out.push(self.kind.tag());
        for v in [
            self.input_len as u64,
            self.horizon as u64,
            self.kernel as u64,
            self.seed,
            self.params.len() as u64,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |detail: &str| ForecastError::Format {
            path: "<model record>".into(),
            detail: detail.to_string(),
        };
        let mut cur = crate::codec::Reader::new(bytes);
        if cur.take(4).ok_or_else(|| bad("truncated magic"))? != Self::MAGIC {
            return Err(bad("bad magic"));
        }
        let version = cur.u32().ok_or_else(|| bad("truncated version"))?;
        if version != Self::FORMAT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let kind = match cur.take(1).ok_or_else(|| bad("truncated kind"))?[0] {
            0 => ModelKind::Plain,
            1 => ModelKind::Dlinear,
            t => return Err(bad(&format!("unknown kind tag {t}"))),
        };
        let mut dims = [0u64; 5];
        for d in &mut dims {
            *d = cur.u64().ok_or_else(|| bad("truncated header"))?;
        }
        let [input_len, horizon, kernel, seed, count] = dims;
        let params = (0..count)
            .map(|_| cur.f64().ok_or_else(|| bad("truncated parameters")))
            .collect::<Result<Vec<_>>>()?;
        if !cur.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Self::from_params(
            kind,
            input_len as usize,
            horizon as usize,
            kernel as usize,
            seed,
            params,
        )
    }

    /// Hex SHA-256 of the serialized record.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::codec::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| ForecastError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            ForecastError::Format { detail, .. } => ForecastError::Format {
                path: path.to_path_buf(),
                detail,
            },
            other => other,
        })
    }
}

/// Supervised examples as aligned input/target matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Examples {
    pub inputs: Matrix,
    pub targets: Matrix,
}

impl Examples {
    pub fn new(inputs: Matrix, targets: Matrix) -> Result<Self> {
        if inputs.rows() != targets.rows() {
            return Err(ForecastError::Shape {
                context: "examples rows",
                expected: inputs.rows(),
                got: targets.rows(),
            });
        }
        Ok(Self { inputs, targets })
    }

    pub fn from_windows(windows: &[WindowPair]) -> Result<Self> {
        let l = windows.first().map_or(0, |w| w.input.len());
        let h = windows.first().map_or(0, |w| w.target.len());
        Self::new(
            Matrix::from_rows(l, windows.iter().map(|w| &w.input))?,
            Matrix::from_rows(h, windows.iter().map(|w| &w.target))?,
        )
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }
}

/// Mean squared error over all elements.
pub fn loss_mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(ForecastError::Shape {
            context: "loss inputs",
            expected: target.len(),
            got: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(ForecastError::param("loss over an empty vector"));
    }
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64)
}

/// MSE of the model over a set of examples.
pub fn dataset_mse(model: &LinearForecaster, data: &Examples) -> Result<f64> {
    let pred = model.predict(&data.inputs)?;
    loss_mse(pred.as_slice(), data.targets.as_slice())
}

/// Loss and exact gradient of the batch MSE with respect to every parameter.
pub fn grad_mse(model: &LinearForecaster, batch: &Examples) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(ForecastError::param("gradient of an empty batch"));
    }
    if batch.inputs.cols() != model.input_len {
        return Err(ForecastError::Shape {
            context: "batch inputs",
            expected: model.input_len,
            got: batch.inputs.cols(),
        });
    }
    if batch.targets.cols() != model.horizon {
        return Err(ForecastError::Shape {
            context: "batch targets",
            expected: model.horizon,
            got: batch.targets.cols(),
        });
    }
    let features: Vec<Vec<f64>> = batch.inputs.iter_rows().map(|x| model.branch_inputs(x)).collect();
    let rows: Vec<usize> = (0..batch.len()).collect();
    Ok(grad_on_features(model, &features, &batch.targets, &rows))
}

fn grad_on_features(
    model: &LinearForecaster,
    features: &[Vec<f64>],
    targets: &Matrix,
    rows: &[usize],
) -> (f64, Vec<f64>) {
    let (h, l) = (model.horizon, model.input_len);
    let scale = 2.0 / (rows.len() * h) as f64;
    let mut grad = vec![0.0; model.params.len()];
    let mut pred = vec![0.0; h];
    let mut loss = 0.0;
    for &r in rows {
        let f = &features[r];
        model.forward_features(f, &mut pred);
        let target = targets.row(r);
        for k in 0..h {
            let err = pred[k] - target[k];
            loss += err * err;
            let g = scale * err;
            for b in 0..model.kind.branches() {
                let off = b * model.branch_len();
                let x = &f[b * l..(b + 1) * l];
                let gw = &mut grad[off + k * l..off + (k + 1) * l];
                for (gj, xj) in gw.iter_mut().zip(x) {
                    *gj += g * xj;
                }
                grad[off + h * l + k] += g;
            }
        }
    }
    (loss / (rows.len() * h) as f64, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "ES")]
    EarlyStopping,
    #[serde(rename = "1E")]
    SingleEpoch,
}

impl Strategy {
    pub fn label(self) -> &'static str {
        match self {
            Strategy::EarlyStopping => "ES",
            Strategy::SingleEpoch => "1E",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub strategy: Strategy,
    pub patience: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-3,
            batch_size: 32,
            max_epochs: 20,
            strategy: Strategy::EarlyStopping,
            patience: 3,
            seed: 0,
            optimizer: Optimizer::default(),
        }
    }
}

impl TrainConfig {
    /// Applies the strategy's constraints (1E forces a single epoch).
    pub fn normalized(mut self) -> Result<Self> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ForecastError::param(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(ForecastError::param("batch_size must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(ForecastError::param("max_epochs must be at least 1"));
        }
        match self.strategy {
            Strategy::SingleEpoch => self.max_epochs = 1,
            Strategy::EarlyStopping if self.patience == 0 => {
                return Err(ForecastError::param("patience must be at least 1 under ES"))
            }
            Strategy::EarlyStopping => {}
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return Err(ForecastError::param("adam requires beta1, beta2 in [0,1) and eps > 0"));
            }
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Last epoch that ran (1-based).
    pub stopped_epoch: usize,
    /// Epoch whose parameters were returned (1-based).
    pub best_epoch: usize,
    pub best_val_loss: Option<f64>,
}

/// Patience-based stopping rule over a stream of validation losses.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records the loss observed after `epoch` (1-based). Returns whether it
    /// is a new best; the caller snapshots parameters when it is.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        (self.best_epoch > 0).then_some((self.best_epoch, self.best))
    }
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

/// One optimizer over a model's flat parameters.
pub struct Trainer {
    lr: f64,
    optimizer: Optimizer,
    adam: Option<AdamState>,
}

impl Trainer {
    pub fn new(config: &TrainConfig, num_params: usize) -> Self {
        let adam = matches!(config.optimizer, Optimizer::Adam { .. }).then(|| AdamState {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        });
        Self {
            lr: config.learning_rate,
            optimizer: config.optimizer,
            adam,
        }
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        match (self.optimizer, self.adam.as_mut()) {
            (Optimizer::Adam { beta1, beta2, eps }, Some(st)) => {
                st.step += 1;
                let c1 = 1.0 - beta1.powi(st.step);
                let c2 = 1.0 - beta2.powi(st.step);
                for i in 0..params.len() {
                    st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * grad[i];
                    st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * grad[i] * grad[i];
                    let m_hat = st.m[i] / c1;
                    let v_hat = st.v[i] / c2;
                    params[i] -= self.lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
            _ => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
        }
    }

    /// One gradient step on the given batch; returns the pre-update batch loss.
    pub fn step(&mut self, model: &mut LinearForecaster, batch: &Examples) -> Result<f64> {
        let (loss, grad) = grad_mse(model, batch)?;
        self.apply(&mut model.params, &grad);
        Ok(loss)
    }
}

/// Mini-batch training with a seeded per-epoch shuffle.
///
/// Under ES the returned parameters are the best-validation snapshot; under
/// 1E the parameters after the single pass are returned.
pub fn train(
    mut model: LinearForecaster,
    train_set: &Examples,
    val_set: Option<&Examples>,
    config: &TrainConfig,
) -> Result<(LinearForecaster, TrainReport)> {
    let config = config.normalized()?;
    if train_set.is_empty() {
        return Err(ForecastError::EmptyData("training requires at least one window".into()));
    }
    let val_set = val_set.filter(|v| !v.is_empty());
    if config.strategy == Strategy::EarlyStopping && val_set.is_none() {
        return Err(ForecastError::EmptyData(
            "early stopping requires at least one validation window".into(),
        ));
    }
    if train_set.inputs.cols() != model.input_len || train_set.targets.cols() != model.horizon {
        return Err(ForecastError::Shape {
            context: "training set columns",
            expected: model.input_len,
            got: train_set.inputs.cols(),
        });
    }

    let features: Vec<Vec<f64>> = train_set
        .inputs
        .iter_rows()
        .map(|x| model.branch_inputs(x))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut trainer = Trainer::new(&config, model.params.len());
    let mut stopper = EarlyStopping::new(config.patience);
    let mut snapshot = model.params.clone();
    let mut report = TrainReport {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        stopped_epoch: 0,
        best_epoch: 0,
        best_val_loss: None,
    };

    for epoch in 1..=config.max_epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for rows in order.chunks(config.batch_size) {
            let (loss, grad) = grad_on_features(&model, &features, &train_set.targets, rows);
            if !loss.is_finite() {
                return Err(ForecastError::Divergence { epoch });
            }
            trainer.apply(&mut model.params, &grad);
            loss_sum += loss;
            batches += 1;
        }
        if model.params.iter().any(|p| !p.is_finite()) {
            return Err(ForecastError::Divergence { epoch });
        }
        report.train_loss.push(loss_sum / batches as f64);
        report.stopped_epoch = epoch;

        if let Some(val) = val_set {
            let vl = dataset_mse(&model, val)?;
            if !vl.is_finite() {
                return Err(ForecastError::Divergence { epoch });
            }
            report.val_loss.push(vl);
            if config.strategy == Strategy::EarlyStopping {
                if stopper.observe(epoch, vl) {
                    snapshot.clone_from(&model.params);
                }
                if stopper.should_stop() {
                    break;
                }
            }
        }
    }

    match config.strategy {
        Strategy::EarlyStopping => {
            let (best_epoch, best) = stopper.best().expect("at least one epoch observed");
            model.params = snapshot;
            report.best_epoch = best_epoch;
            report.best_val_loss = Some(best);
        }
        Strategy::SingleEpoch => {
            report.best_epoch = report.stopped_epoch;
            report.best_val_loss = report.val_loss.last().copied();
        }
    }
    Ok((model, report))
}
