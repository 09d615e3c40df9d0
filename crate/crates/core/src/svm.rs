//! Linear SVM trained in the primal.
//!
//! The default loss is the L2-regularized squared hinge
//!
//! ```text
//! P(w, b) = ½‖w‖² + C · Σᵢ max(0, 1 − yᵢ(w·xᵢ + b))²
//! ```
//!
//! with an unregularized intercept `b`, minimized by cyclic coordinate
//! descent: each coordinate takes a one-dimensional Newton step followed by a
//! backtracking line search that enforces sufficient decrease, so the
//! objective never increases between epochs.
//!
//! The plain hinge variant is available for sensitivity checks. It is solved
//! by dual coordinate descent over an augmented constant feature, so its
//! intercept is (lightly) regularized.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::corpus::State;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SvmLoss {
    #[default]
    SquaredHinge,
    Hinge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    /// Relative objective change per epoch below which training stops.
    pub tol: f64,
    /// Maximum number of passes over the coordinates.
    pub max_iter: usize,
    pub loss: SvmLoss,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c: 1.0,
            tol: 1e-6,
            max_iter: 10_000,
            loss: SvmLoss::SquaredHinge,
        }
    }
}

impl SvmParams {
    pub fn with_c(c: f64) -> Self {
        SvmParams {
            c,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub weights: Array1<f64>,
    pub bias: f64,
    pub c: f64,
}

/// A trained model plus solver diagnostics.
#[derive(Debug, Clone)]
pub struct SvmFit {
    pub model: SvmModel,
    /// False when `max_iter` was exhausted; the model is then the last iterate.
    pub converged: bool,
    pub epochs: usize,
    /// Primal objective after each epoch, starting with the initial point.
    pub objective_trace: Vec<f64>,
}

impl SvmFit {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace holds the initial objective")
    }
}

fn validate(x: &Array2<f64>, y: &[f64], params: &SvmParams) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} rows but {} labels",
            x.nrows(),
            y.len()
        )));
    }
    if x.nrows() < 2 {
        return Err(Error::TooFewRows {
            needed: 2,
            got: x.nrows(),
        });
    }
    if let Some(bad) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
        return Err(Error::InvalidParameter(format!("label {bad} is not ±1")));
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(Error::SingleClass);
    }
    if !(params.c.is_finite() && params.c > 0.0) {
        return Err(Error::InvalidParameter(format!("C must be positive, got {}", params.c)));
    }
    if !(params.tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol must be positive, got {}", params.tol)));
    }
    Ok(())
}

/// Evaluates the primal objective for the given loss.
pub fn primal_objective(
    x: &Array2<f64>,
    y: &[f64],
    weights: ArrayView1<f64>,
    bias: f64,
    c: f64,
    loss: SvmLoss,
) -> f64 {
    let scores = x.dot(&weights);
    let data: f64 = scores
        .iter()
        .zip(y)
        .map(|(s, yi)| {
            let slack = (1.0 - yi * (s + bias)).max(0.0);
            match loss {
                SvmLoss::SquaredHinge => slack * slack,
                SvmLoss::Hinge => slack,
            }
        })
        .sum();
    0.5 * weights.dot(&weights) + c * data
}

/// Trains on rows of `x` with labels `y ∈ {−1, +1}` (−1 = OFF, +1 = ON).
pub fn train_svm(x: &Array2<f64>, y: &[f64], params: &SvmParams) -> Result<SvmFit> {
    validate(x, y, params)?;
    let fit = match params.loss {
        SvmLoss::SquaredHinge => squared_hinge_cd(x, y, params),
        SvmLoss::Hinge => hinge_smo(x, y, params),
    };
    if !fit.converged {
        log::warn!(
            "SVM (C={}) did not converge in {} epochs; returning last iterate",
            params.c,
            params.max_iter
        );
    }
    Ok(fit)
}

fn squared_hinge_cd(x: &Array2<f64>, y: &[f64], params: &SvmParams) -> SvmFit {
    const SIGMA: f64 = 0.01;
    const MAX_HALVINGS: usize = 40;

    let (n, k) = x.dim();
    let c = params.c;
    let mut w = Array1::<f64>::zeros(k);
    let mut bias = 0.0;
    // slack[i] = 1 − yᵢ(w·xᵢ + b)
    let mut slack = vec![1.0; n];
    let objective = |w: &Array1<f64>, slack: &[f64]| {
        0.5 * w.dot(w) + c * slack.iter().map(|s| s.max(0.0).powi(2)).sum::<f64>()
    };
    let mut trace = vec![objective(&w, &slack)];
    let mut converged = false;
    let mut epochs = 0;

    // Coordinate k is the intercept: feature value 1, no penalty.
    let feature = |i: usize, j: usize| if j == k { 1.0 } else { x[[i, j]] };
    while epochs < params.max_iter {
        epochs += 1;
        for j in 0..=k {
            let (reg, wj) = if j == k { (0.0, 0.0) } else { (1.0, w[j]) };
            let mut grad = reg * wj;
            let mut hess = reg;
            for i in 0..n {
                if slack[i] > 0.0 {
                    let xij = feature(i, j);
                    grad -= 2.0 * c * y[i] * xij * slack[i];
                    hess += 2.0 * c * xij * xij;
                }
            }
            if hess <= 0.0 || grad == 0.0 {
                continue;
            }
            let d = -grad / hess;
            let mut step = d;
            let mut accepted = false;
            for _ in 0..MAX_HALVINGS {
                let mut delta = reg * (wj * step + 0.5 * step * step);
                for i in 0..n {
                    let old = slack[i].max(0.0);
                    let new = (slack[i] - y[i] * feature(i, j) * step).max(0.0);
                    delta += c * (new * new - old * old);
                }
                if delta <= -SIGMA * step * step {
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                continue;
            }
            if j == k {
                bias += step;
            } else {
                w[j] += step;
            }
            for i in 0..n {
                slack[i] -= y[i] * feature(i, j) * step;
            }
        }
        let prev = *trace.last().unwrap();
        let cur = objective(&w, &slack);
        trace.push(cur);
        if (prev - cur).abs() <= params.tol * cur.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    SvmFit {
        model: SvmModel {
            weights: w,
            bias,
            c,
        },
        converged,
        epochs,
        objective_trace: trace,
    }
}

/// SMO on the dual with the equality constraint `Σ αᵢyᵢ = 0`, so the intercept
/// stays unregularized. Each step moves the maximal violating pair.
fn hinge_smo(x: &Array2<f64>, y: &[f64], params: &SvmParams) -> SvmFit {
    let (n, k) = x.dim();
    let c = params.c;
    let mut w = Array1::<f64>::zeros(k);
    let mut alpha = vec![0.0; n];
    let mut trace = vec![primal_objective(x, y, w.view(), 0.0, c, SvmLoss::Hinge)];
    let mut converged = false;
    let mut epochs = 0;
    // −yₜ·∇ₜ of the dual, i.e. yₜ − w·xₜ.
    let score = |w: &Array1<f64>, t: usize| y[t] - x.row(t).dot(w);
    let in_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let in_low = |a: f64, yt: f64| (yt < 0.0 && a < c) || (yt > 0.0 && a > 0.0);
    let mut midpoint = 0.0;
    'outer: loop {
        epochs += 1;
        for _ in 0..n {
            let mut i = usize::MAX;
            let mut j = usize::MAX;
            let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
            for t in 0..n {
                let s = score(&w, t);
                if in_up(alpha[t], y[t]) && s > hi {
                    hi = s;
                    i = t;
                }
                if in_low(alpha[t], y[t]) && s < lo {
                    lo = s;
                    j = t;
                }
            }
            if i == usize::MAX || j == usize::MAX || hi - lo <= params.tol {
                if i != usize::MAX && j != usize::MAX {
                    midpoint = 0.5 * (hi + lo);
                }
                converged = true;
                break 'outer;
            }
            // αᵢ += yᵢ·t, αⱼ −= yⱼ·t keeps Σ αy fixed; w moves by t·(xᵢ − xⱼ).
            let diff = &x.row(i) - &x.row(j);
            let eta = diff.dot(&diff).max(1e-12);
            let mut step = (hi - lo) / eta;
            let room = |a: f64, dir: f64| if dir > 0.0 { c - a } else { a };
            step = step.min(room(alpha[i], y[i])).min(room(alpha[j], -y[j]));
            alpha[i] = (alpha[i] + y[i] * step).clamp(0.0, c);
            alpha[j] = (alpha[j] - y[j] * step).clamp(0.0, c);
            w.scaled_add(step, &diff);
        }
        let b = free_bias(x, y, &w, &alpha, c).unwrap_or(0.0);
        trace.push(primal_objective(x, y, w.view(), b, c, SvmLoss::Hinge));
        if epochs >= params.max_iter {
            break;
        }
    }
    let bias = free_bias(x, y, &w, &alpha, c).unwrap_or(midpoint);
    trace.push(primal_objective(x, y, w.view(), bias, c, SvmLoss::Hinge));
    SvmFit {
        model: SvmModel { weights: w, bias, c },
        converged,
        epochs,
        objective_trace: trace,
    }
}

/// Intercept averaged over margin support vectors, if any.
fn free_bias(x: &Array2<f64>, y: &[f64], w: &Array1<f64>, alpha: &[f64], c: f64) -> Option<f64> {
    let free: Vec<f64> = (0..y.len())
        .filter(|&t| alpha[t] > 0.0 && alpha[t] < c)
        .map(|t| y[t] - x.row(t).dot(w))
        .collect();
    (!free.is_empty()).then(|| free.iter().sum::<f64>() / free.len() as f64)
}

impl SvmModel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn decision(&self, x: ArrayView1<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "model has {} weights, input has {} values",
                self.dim(),
                x.len()
            )));
        }
        Ok(self.weights.dot(&x) + self.bias)
    }

    /// ON for a positive decision value, OFF for negative, ON on an exact tie.
    pub fn predict(&self, x: ArrayView1<f64>) -> Result<State> {
        Ok(state_from_decision(self.decision(x)?))
    }

    pub fn objective(&self, x: &Array2<f64>, y: &[f64], loss: SvmLoss) -> f64 {
        primal_objective(x, y, self.weights.view(), self.bias, self.c, loss)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(12 + 8 * (self.dim() + 2));
        buf.extend_from_slice(SVM_MAGIC);
        buf.extend_from_slice(&SVM_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        for w in &self.weights {
            buf.extend_from_slice(&w.to_le_bytes());
        }
        buf.extend_from_slice(&self.bias.to_le_bytes());
        buf.extend_from_slice(&self.c.to_le_bytes());
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<SvmModel> {
        if bytes.len() < 4 || &bytes[..4] != SVM_MAGIC {
            return Err(Error::BadMagic { expected: "SVMM" });
        }
        if bytes.len() < 12 {
            return Err(Error::DimensionMismatch("truncated SVMM header".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != SVM_VERSION {
            return Err(Error::BadVersion(version));
        }
        let k = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let payload = &bytes[12..];
        if payload.len() != 8 * (k + 2) {
            return Err(Error::DimensionMismatch(format!(
                "SVMM declares k={k}, payload holds {} bytes",
                payload.len()
            )));
        }
        let vals: Vec<f64> = payload
            .chunks_exact(8)
            .map(|ch| f64::from_le_bytes(ch.try_into().unwrap()))
            .collect();
        if let Some(col) = vals.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { row: 0, col });
        }
        Ok(SvmModel {
            weights: Array1::from(vals[..k].to_vec()),
            bias: vals[k],
            c: vals[k + 1],
        })
    }
}

const SVM_MAGIC: &[u8; 4] = b"SVMM";
const SVM_VERSION: u32 = 1;

pub fn state_from_decision(score: f64) -> State {
    if score >= 0.0 {
        State::On
    } else {
        State::Off
    }
}

pub fn svm_decision(m: &SvmModel, x: ArrayView1<f64>) -> Result<f64> {
    m.decision(x)
}

pub fn svm_predict(m: &SvmModel, x: ArrayView1<f64>) -> Result<State> {
    m.predict(x)
}
