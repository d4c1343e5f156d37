//! Subgradient descent and Adam for score vectors and linear models, plus a
//! central finite-difference gradient used as a test oracle.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{LossFamily, LossSpec};
use crate::seed::{derive_seed, rng_from_seed};
use crate::synth::Dataset;
use crate::topk::{check_k, top_k_error, TieBreakPolicy};

/// Central differences `(f(x + h e_i) − f(x − h e_i)) / 2h`.
pub fn finite_diff_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("step h = {h} must be positive")));
    }
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFiniteObjective(format!(
                "f is not finite within h = {h} of x along axis {i}"
            )));
        }
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Step size as a function of the 1-based iteration `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepSchedule {
    Constant(f64),
    /// `lr0 / √t`
    InvSqrt(f64),
}

impl StepSchedule {
    pub fn at(self, t: usize) -> f64 {
        match self {
            StepSchedule::Constant(lr) => lr,
            StepSchedule::InvSqrt(lr0) => lr0 / (t as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentConfig {
    pub schedule: StepSchedule,
    pub max_iter: usize,
    /// Stop once the subgradient norm drops below this.
    pub grad_tol: f64,
    /// Objective values above this count as divergence.
    pub divergence_bound: f64,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            schedule: StepSchedule::InvSqrt(1.0),
            max_iter: 5000,
            grad_tol: 1e-12,
            divergence_bound: 1e12,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DescentResult {
    pub last: Vec<f64>,
    /// Best iterate seen, including the start.
    pub best: Vec<f64>,
    pub best_value: f64,
    /// Objective at every iterate, starting with `s0`.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_grad_norm: f64,
}

impl DescentResult {
    /// Running minimum of the trace.
    pub fn best_so_far(&self) -> Vec<f64> {
        self.trace
            .iter()
            .scan(f64::INFINITY, |best, &v| {
                *best = best.min(v);
                Some(*best)
            })
            .collect()
    }
}

/// Subgradient descent `s ← s − step_t · g_t`. `objective(s, grad)` returns
/// the value at `s` and overwrites `grad` with a subgradient.
pub fn minimize_scores(
    mut objective: impl FnMut(&[f64], &mut [f64]) -> f64,
    s0: &[f64],
    cfg: &DescentConfig,
) -> Result<DescentResult> {
    let mut s = s0.to_vec();
    let mut grad = vec![0.0; s.len()];
    let mut trace = Vec::with_capacity(cfg.max_iter + 1);
    let mut best = s.clone();
    let mut best_value = f64::INFINITY;
    let mut converged = false;
    let mut grad_norm = f64::INFINITY;
    let mut iterations = 0;

    for t in 0..=cfg.max_iter {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let value = objective(&s, &mut grad);
        if !value.is_finite() || value > cfg.divergence_bound {
            return Err(Error::NonFiniteObjective(format!(
                "objective reached {value} at iteration {t}"
            )));
        }
        trace.push(value);
        if value < best_value {
            best_value = value;
            best.copy_from_slice(&s);
        }
        grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if grad_norm < cfg.grad_tol {
            converged = true;
            break;
        }
        if t == cfg.max_iter {
            break;
        }
        let step = cfg.schedule.at(t + 1);
        for (si, gi) in s.iter_mut().zip(&grad) {
            *si -= step * gi;
        }
        iterations = t + 1;
    }

    Ok(DescentResult {
        last: s,
        best,
        best_value,
        trace,
        iterations,
        converged,
        final_grad_norm: grad_norm,
    })
}

/// Scores `W x̃` where `x̃` is `x` with a trailing 1 when `bias` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    /// Row-major `M × cols` weights.
    pub weights: Vec<f64>,
    pub num_classes: usize,
    /// Input dimension, excluding the bias column.
    pub input_dim: usize,
    pub bias: bool,
}

impl LinearModel {
    pub fn zeros(num_classes: usize, input_dim: usize, bias: bool) -> Self {
        let cols = input_dim + usize::from(bias);
        Self {
            weights: vec![0.0; num_classes * cols],
            num_classes,
            input_dim,
            bias,
        }
    }

    /// Builds a bias-free model from rows of `W`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch(d, r.len()));
        }
        let weights: Vec<f64> = rows.concat();
        if let Some((index, &value)) = weights.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Self {
            weights,
            num_classes: rows.len(),
            input_dim: d,
            bias: false,
        })
    }

    pub fn cols(&self) -> usize {
        self.input_dim + usize::from(self.bias)
    }

    pub fn row(&self, class: usize) -> &[f64] {
        let c = self.cols();
        &self.weights[class * c..(class + 1) * c]
    }

    pub fn scores_into(&self, x: &[f64], out: &mut [f64]) {
        let c = self.cols();
        for (m, o) in out.iter_mut().enumerate() {
            let w = &self.weights[m * c..(m + 1) * c];
            let mut acc: f64 = w[..self.input_dim].iter().zip(x).map(|(a, b)| a * b).sum();
            if self.bias {
                acc += w[self.input_dim];
            }
            *o = acc;
        }
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_classes];
        self.scores_into(x, &mut out);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Optimizer {
    SubgradDescent,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Init {
    Zero,
    /// Every weight drawn from `U(−bound, bound)`.
    Uniform { bound: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub fit_bias: bool,
    pub init: Init,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Adam,
            lr: 0.1,
            epochs: 500,
            seed: 0,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            fit_bias: true,
            init: Init::Zero,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub model: LinearModel,
    pub loss: LossSpec,
    /// Mean training loss of the returned model.
    pub final_loss: f64,
    /// An EntTr evaluation underflowed during training.
    pub unstable: bool,
}

/// Mean loss over the dataset and its gradient with respect to the weights.
fn batch_loss_and_grad(
    loss: &LossSpec,
    model: &LinearModel,
    data: &Dataset,
    grad: &mut [f64],
    scores: &mut [f64],
    score_grad: &mut [f64],
) -> (f64, bool) {
    let n = data.len() as f64;
    let cols = model.cols();
    let d = model.input_dim;
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut total = 0.0;
    let mut unstable = false;
    let check_unstable = matches!(loss.family, LossFamily::EntTr1 | LossFamily::EntTr2);
    for (x, y) in data.iter() {
        model.scores_into(x, scores);
        score_grad.iter_mut().for_each(|g| *g = 0.0);
        total += loss.accumulate(scores, y, 1.0 / n, Some(score_grad));
        if check_unstable {
            unstable |= crate::losses::ent_tr_is_unstable(scores, y, loss.k);
        }
        for (m, &gm) in score_grad.iter().enumerate() {
            if gm == 0.0 {
                continue;
            }
            let row = &mut grad[m * cols..(m + 1) * cols];
            for (r, xi) in row[..d].iter_mut().zip(x) {
                *r += gm * xi;
            }
            if model.bias {
                row[d] += gm;
            }
        }
    }
    (total / n, unstable)
}

/// Mean training loss `(1/n) Σ ψ(W x_i, y_i)`.
pub fn mean_loss(loss: &LossSpec, model: &LinearModel, data: &Dataset) -> Result<f64> {
    check_model(loss, model, data)?;
    let mut scores = vec![0.0; model.num_classes];
    let total: f64 = data
        .iter()
        .map(|(x, y)| {
            model.scores_into(x, &mut scores);
            loss.accumulate(&scores, y, 0.0, None)
        })
        .sum();
    Ok(total / data.len() as f64)
}

fn check_model(loss: &LossSpec, model: &LinearModel, data: &Dataset) -> Result<()> {
    if model.num_classes != data.num_classes() {
        return Err(Error::DimensionMismatch(model.num_classes, data.num_classes()));
    }
    if model.input_dim != data.dim() {
        return Err(Error::DimensionMismatch(model.input_dim, data.dim()));
    }
    loss.check(model.num_classes)
}

/// Full-batch training of a linear scorer on `(1/n) Σ ψ(W x_i, y_i)`.
pub fn train_linear(loss: &LossSpec, data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    if !(cfg.lr > 0.0) || cfg.epochs == 0 {
        return Err(Error::InvalidParameter(format!(
            "need lr > 0 and epochs >= 1, got lr = {}, epochs = {}",
            cfg.lr, cfg.epochs
        )));
    }
    let mut model = LinearModel::zeros(data.num_classes(), data.dim(), cfg.fit_bias);
    check_model(loss, &model, data)?;
    if let Init::Uniform { bound } = cfg.init {
        let mut rng = rng_from_seed(cfg.seed);
        for w in model.weights.iter_mut() {
            *w = rng.random_range(-bound..=bound);
        }
    }

    let p = model.weights.len();
    let mut grad = vec![0.0; p];
    let mut first = vec![0.0; p];
    let mut second = vec![0.0; p];
    let mut scores = vec![0.0; model.num_classes];
    let mut score_grad = vec![0.0; model.num_classes];
    let (b1, b2) = cfg.adam_betas;
    let mut unstable = false;

    for epoch in 1..=cfg.epochs {
        let (value, flag) =
            batch_loss_and_grad(loss, &model, data, &mut grad, &mut scores, &mut score_grad);
        unstable |= flag;
        if !value.is_finite() {
            return Err(Error::NonFiniteObjective(format!(
                "{loss} training loss became {value} at epoch {epoch}"
            )));
        }
        match cfg.optimizer {
            Optimizer::SubgradDescent => {
                for (w, g) in model.weights.iter_mut().zip(&grad) {
                    *w -= cfg.lr * g;
                }
            }
            Optimizer::Adam => {
                let c1 = 1.0 - b1.powi(epoch as i32);
                let c2 = 1.0 - b2.powi(epoch as i32);
                for i in 0..p {
                    first[i] = b1 * first[i] + (1.0 - b1) * grad[i];
                    second[i] = b2 * second[i] + (1.0 - b2) * grad[i] * grad[i];
                    let m_hat = first[i] / c1;
                    let v_hat = second[i] / c2;
                    model.weights[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
                }
            }
        }
    }

    let final_loss = mean_loss(loss, &model, data)?;
    if !final_loss.is_finite() {
        return Err(Error::NonFiniteObjective(format!(
            "{loss} final training loss is {final_loss}"
        )));
    }
    Ok(TrainReport {
        model,
        loss: *loss,
        final_loss,
        unstable,
    })
}

/// Trains from `restarts` initializations, seeded `derive_seed(cfg.seed, r)`,
/// and keeps the lowest final training loss (the earliest on ties).
pub fn train_linear_multistart(
    loss: &LossSpec,
    data: &Dataset,
    cfg: &TrainConfig,
    restarts: usize,
) -> Result<TrainReport> {
    if restarts == 0 {
        return Err(Error::InvalidParameter("need at least one restart".into()));
    }
    let mut best: Option<TrainReport> = None;
    for r in 0..restarts {
        let run = train_linear(loss, data, &TrainConfig { seed: derive_seed(cfg.seed, r as u64), ..*cfg })?;
        if best.as_ref().is_none_or(|b| run.final_loss < b.final_loss) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Fraction of examples whose label lies in the predicted top-k set.
pub fn top_k_accuracy(
    model: &LinearModel,
    data: &Dataset,
    k: usize,
    policy: TieBreakPolicy,
) -> Result<f64> {
    if model.num_classes != data.num_classes() {
        return Err(Error::DimensionMismatch(model.num_classes, data.num_classes()));
    }
    check_k(k, model.num_classes, 1, model.num_classes - 1)?;
    let mut scores = vec![0.0; model.num_classes];
    let mut hits = 0usize;
    for (x, y) in data.iter() {
        model.scores_into(x, &mut scores);
        if top_k_error(&scores, y, k, policy)? == 0 {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}
