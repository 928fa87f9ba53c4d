//! The four training regimes and their loss functions.
//!
//! All four share the same data pipeline, optimizer, and ½-mean-squared
//! loss core; they differ in how the constraints enter:
//!
//! - `nn`: constraints ignored.
//! - `pinn`: the squared constraint residual is added to the loss with
//!   weight λ (soft constraint). The penalty is excluded from reported
//!   RMSE so the regimes stay comparable.
//! - `kkt_hpinn`: predictions pass through the projection layers both in
//!   the loss and at evaluation; gradients are routed back through the
//!   projector.
//! - `nn_post`: the training trajectory is bit-identical to `nn` (same
//!   seed, same batches, same updates); the projection is applied only
//!   when the model is evaluated.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{dot, Mat};
use crate::network::{Gradients, Mlp};
use crate::projection::{
    apply_projection_batch, build_projection, projection_backward_batch, ConstraintSpec,
    ProjectionParams,
};
use crate::seeds::mix;
use crate::AdamState;

const SPLIT_TAG: u64 = 0x5350_4c49_5400;
const EPOCH_TAG: u64 = 0x4550_4f43_0000_0000;

/// Training regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Nn,
    Pinn { lambda: f64 },
    KktHpinn,
    NnPost,
}

impl TrainMode {
    pub fn tag(&self) -> &'static str {
        match self {
            TrainMode::Nn => "nn",
            TrainMode::Pinn { .. } => "pinn",
            TrainMode::KktHpinn => "kkt_hpinn",
            TrainMode::NnPost => "nn_post",
        }
    }

    /// Does evaluation project predictions onto the constraint set?
    pub fn projects_at_eval(&self) -> bool {
        matches!(self, TrainMode::KktHpinn | TrainMode::NnPost)
    }

    pub fn validate(&self) -> Result<()> {
        if let TrainMode::Pinn { lambda } = self {
            if !lambda.is_finite() || *lambda <= 0.0 {
                return Err(Error::Config(format!(
                    "pinn penalty weight must be > 0, got {lambda}"
                )));
            }
        }
        Ok(())
    }

    /// Builds a mode from its tag, attaching `lambda` for `pinn`.
    pub fn from_tag(tag: &str, lambda: f64) -> Result<TrainMode> {
        let mode = match tag {
            "nn" => TrainMode::Nn,
            "pinn" => TrainMode::Pinn { lambda },
            "kkt_hpinn" => TrainMode::KktHpinn,
            "nn_post" => TrainMode::NnPost,
            other => {
                return Err(Error::Config(format!(
                    "unknown mode '{other}' (expected nn, pinn, kkt_hpinn, or nn_post)"
                )))
            }
        };
        mode.validate()?;
        Ok(mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1000,
            batch_size: 16,
            learning_rate: 1e-4,
            seed: 0,
            validation_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation fraction must be in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

/// Test/validation metrics. RMSE is the root of the mean squared error
/// over (samples × selected output coordinates), in the units of the data
/// the model was trained on. The split follows the constraint structure:
/// `rmse_constrained` covers outputs appearing in at least one constraint,
/// `rmse_unconstrained` the rest (absent when a side is empty).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse_overall: f64,
    pub rmse_constrained: Option<f64>,
    pub rmse_unconstrained: Option<f64>,
    /// Mean over samples of the 2-norm constraint residual.
    pub mean_violation: f64,
}

/// Everything recorded about one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: String,
    pub seed: u64,
    pub config: TrainConfig,
    /// Per-epoch RMSE on the training partition (mode-consistent
    /// predictions, penalty excluded).
    pub train_rmse: Vec<f64>,
    pub val_rmse: Vec<f64>,
    /// Per-epoch mean violation of the validation predictions.
    pub val_violation: Vec<f64>,
    pub final_val: Metrics,
    /// Filled by the harness after held-out evaluation.
    pub final_test: Option<Metrics>,
}

impl RunReport {
    /// Per-epoch series as CSV: `epoch,train_rmse,val_rmse,mean_violation`.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut out = String::from("epoch,train_rmse,val_rmse,mean_violation\n");
        for e in 0..self.train_rmse.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e + 1,
                self.train_rmse[e],
                self.val_rmse[e],
                self.val_violation[e]
            ));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn write_json(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<RunReport> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

fn batch_checks(x: &Mat, y: &Mat) -> Result<usize> {
    if x.rows() == 0 {
        return Err(Error::Data("empty batch".into()));
    }
    if x.rows() != y.rows() {
        return Err(Error::Shape(format!(
            "batch has {} inputs but {} targets",
            x.rows(),
            y.rows()
        )));
    }
    Ok(x.rows())
}

fn half_mean_square(diff: &Mat) -> f64 {
    let n = diff.rows() as f64;
    diff.data().iter().map(|v| v * v).sum::<f64>() / (2.0 * n)
}

/// Plain regression loss `(1/2N)·Σᵢ‖ŷᵢ-yᵢ‖²` and its parameter gradients.
pub fn loss_nn(net: &Mlp, x: &Mat, y: &Mat) -> Result<(f64, Gradients)> {
    let n = batch_checks(x, y)? as f64;
    let (y_hat, trace) = net.forward(x)?;
    let mut diff = y_hat;
    for (d, t) in diff.data_mut().iter_mut().zip(y.data()) {
        *d -= t;
    }
    let value = half_mean_square(&diff);
    let mut upstream = diff;
    for v in upstream.data_mut() {
        *v /= n;
    }
    let grads = net.backward(&trace, &upstream)?;
    Ok((value, grads))
}

/// Soft-constraint loss: the regression term plus `λ` times the squared
/// constraint residual, `(1/2N)·Σᵢ(‖ŷᵢ-yᵢ‖² + λ‖A·xᵢ+B·ŷᵢ-b‖²)`.
pub fn loss_pinn(
    net: &Mlp,
    x: &Mat,
    y: &Mat,
    spec: &ConstraintSpec,
    lambda: f64,
) -> Result<(f64, Gradients)> {
    if !lambda.is_finite() || lambda <= 0.0 {
        return Err(Error::Config(format!(
            "pinn penalty weight must be > 0, got {lambda}"
        )));
    }
    let n = batch_checks(x, y)? as f64;
    let (y_hat, trace) = net.forward(x)?;
    let residual = spec.residual_batch(x, &y_hat)?;

    let mut diff = y_hat;
    for (d, t) in diff.data_mut().iter_mut().zip(y.data()) {
        *d -= t;
    }
    let value = half_mean_square(&diff)
        + lambda * residual.data().iter().map(|v| v * v).sum::<f64>() / (2.0 * n);

    // ∂/∂ŷᵢ = (ŷᵢ-yᵢ)/N + (λ/N)·Bᵀrᵢ
    let mut upstream = diff;
    for v in upstream.data_mut() {
        *v /= n;
    }
    let penalty_grad = residual.matmul(spec.b())?;
    for (u, p) in upstream.data_mut().iter_mut().zip(penalty_grad.data()) {
        *u += lambda / n * p;
    }
    let grads = net.backward(&trace, &upstream)?;
    Ok((value, grads))
}

/// Hard-constraint loss: predictions are projected before the error is
/// measured, `(1/2N)·Σᵢ‖proj(xᵢ, ŷᵢ)-yᵢ‖²`, and the gradient flows back
/// through the projector.
pub fn loss_kkt(net: &Mlp, proj: &ProjectionParams, x: &Mat, y: &Mat) -> Result<(f64, Gradients)> {
    let n = batch_checks(x, y)? as f64;
    let (y_hat, trace) = net.forward(x)?;
    let projected = apply_projection_batch(proj, x, &y_hat)?;
    let mut diff = projected;
    for (d, t) in diff.data_mut().iter_mut().zip(y.data()) {
        *d -= t;
    }
    let value = half_mean_square(&diff);
    let mut upstream = diff;
    for v in upstream.data_mut() {
        *v /= n;
    }
    let routed = projection_backward_batch(proj, &upstream)?;
    let grads = net.backward(&trace, &routed)?;
    Ok((value, grads))
}

/// Mode-consistent predictions: raw network output for `nn`/`pinn`,
/// projected output for `kkt_hpinn`/`nn_post`.
fn predict_mode(net: &Mlp, mode: &TrainMode, x: &Mat, proj: &ProjectionParams) -> Result<Mat> {
    let y_hat = net.predict(x)?;
    if mode.projects_at_eval() {
        apply_projection_batch(proj, x, &y_hat)
    } else {
        Ok(y_hat)
    }
}

fn rmse_all(pred: &Mat, target: &Mat) -> f64 {
    let count = (pred.rows() * pred.cols()) as f64;
    let sq: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    (sq / count).sqrt()
}

fn rmse_cols(pred: &Mat, target: &Mat, cols: &[usize]) -> Option<f64> {
    if cols.is_empty() {
        return None;
    }
    let mut sq = 0.0;
    for i in 0..pred.rows() {
        for &j in cols {
            let d = pred[(i, j)] - target[(i, j)];
            sq += d * d;
        }
    }
    Some((sq / (pred.rows() * cols.len()) as f64).sqrt())
}

fn mean_violation(spec: &ConstraintSpec, x: &Mat, y: &Mat) -> Result<f64> {
    let res = spec.residual_batch(x, y)?;
    let total: f64 = (0..res.rows()).map(|i| dot(res.row(i), res.row(i)).sqrt()).sum();
    Ok(total / res.rows() as f64)
}

fn metrics_for(spec: &ConstraintSpec, pred: &Mat, target: &Mat, x: &Mat) -> Result<Metrics> {
    let constrained = spec.constrained_outputs();
    let unconstrained: Vec<usize> =
        (0..spec.output_dim()).filter(|j| !constrained.contains(j)).collect();
    Ok(Metrics {
        rmse_overall: rmse_all(pred, target),
        rmse_constrained: rmse_cols(pred, target, &constrained),
        rmse_unconstrained: rmse_cols(pred, target, &unconstrained),
        mean_violation: mean_violation(spec, x, pred)?,
    })
}

/// Evaluates a network on a dataset partition, with mode-consistent
/// predictions and the RMSE split described on [`Metrics`].
pub fn evaluate(net: &Mlp, mode: &TrainMode, partition: &Dataset) -> Result<Metrics> {
    if partition.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty partition".into()));
    }
    let spec = partition.scaled_spec()?;
    let proj = build_projection(&spec)?;
    let pred = predict_mode(net, mode, partition.x(), &proj)?;
    metrics_for(&spec, &pred, partition.y(), partition.x())
}

/// Trains a network on `data` (which is split internally into training and
/// validation parts) and records per-epoch metrics.
///
/// Minibatches are reshuffled every epoch with a seed derived from
/// `config.seed`, so a (seed, data) pair fully determines the resulting
/// parameters.
pub fn train(
    net: Mlp,
    mode: &TrainMode,
    data: &Dataset,
    config: &TrainConfig,
) -> Result<(Mlp, RunReport)> {
    mode.validate()?;
    config.validate()?;
    let n = data.len();
    if n < 2 {
        return Err(Error::Data(format!(
            "need at least 2 samples to split train/validation, got {n}"
        )));
    }
    if net.input_dim() != data.input_dim() || net.output_dim() != data.output_dim() {
        return Err(Error::Shape(format!(
            "network is {}->{} but dataset is {}->{}",
            net.input_dim(),
            net.output_dim(),
            data.input_dim(),
            data.output_dim()
        )));
    }
    let spec = data.scaled_spec()?;
    let proj = build_projection(&spec)?;

    // deterministic validation split
    let mut indices: Vec<usize> = (0..n).collect();
    let mut split_rng = ChaCha8Rng::seed_from_u64(mix(config.seed, SPLIT_TAG));
    indices.shuffle(&mut split_rng);
    let val_count = ((n as f64 * config.validation_fraction).round() as usize).clamp(1, n - 1);
    let (val_idx, train_idx) = indices.split_at(val_count);
    let x_train = data.x().select_rows(train_idx);
    let y_train = data.y().select_rows(train_idx);
    let x_val = data.x().select_rows(val_idx);
    let y_val = data.y().select_rows(val_idx);

    let mut net = net;
    let mut adam = AdamState::new(&net, config.learning_rate);
    let mut train_rmse = Vec::with_capacity(config.epochs);
    let mut val_rmse = Vec::with_capacity(config.epochs);
    let mut val_violation = Vec::with_capacity(config.epochs);

    let mut order: Vec<usize> = (0..x_train.rows()).collect();
    for epoch in 0..config.epochs {
        let mut epoch_rng = ChaCha8Rng::seed_from_u64(mix(config.seed, EPOCH_TAG | epoch as u64));
        order.shuffle(&mut epoch_rng);
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let xb = x_train.select_rows(chunk);
            let yb = y_train.select_rows(chunk);
            let (loss, grads) = match mode {
                TrainMode::Nn | TrainMode::NnPost => loss_nn(&net, &xb, &yb)?,
                TrainMode::Pinn { lambda } => loss_pinn(&net, &xb, &yb, &spec, *lambda)?,
                TrainMode::KktHpinn => loss_kkt(&net, &proj, &xb, &yb)?,
            };
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    batch: batch_idx,
                    reason: format!("loss became {loss}"),
                });
            }
            adam.step(&mut net, &grads).map_err(|e| Error::Training {
                epoch,
                batch: batch_idx,
                reason: e.to_string(),
            })?;
        }
        let train_pred = predict_mode(&net, mode, &x_train, &proj)?;
        train_rmse.push(rmse_all(&train_pred, &y_train));
        let val_pred = predict_mode(&net, mode, &x_val, &proj)?;
        val_rmse.push(rmse_all(&val_pred, &y_val));
        val_violation.push(mean_violation(&spec, &x_val, &val_pred)?);
    }

    let val_pred = predict_mode(&net, mode, &x_val, &proj)?;
    let final_val = metrics_for(&spec, &val_pred, &y_val, &x_val)?;
    let report = RunReport {
        mode: mode.tag().to_string(),
        seed: config.seed,
        config: config.clone(),
        train_rmse,
        val_rmse,
        val_violation,
        final_val,
        final_test: None,
    };
    Ok((net, report))
}
