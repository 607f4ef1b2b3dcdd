//! Linear SVM trained with Pegasos: stochastic sub-gradient steps on
//!
//! ```text
//! λ/2 · (‖w‖² + b²) + 1/n · Σ max(0, 1 − yᵢ(w·xᵢ + b))
//! ```
//!
//! with step size `1/(λt)` and projection onto the ball of radius `1/√λ`.
//! The bias is handled as a weight on a constant feature, so it is
//! regularized along with `w`. The weight vector is stored as
//! `scale · v` so that the per-step shrink costs O(1) instead of O(dim).

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::sparse::SparseVector;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub lambda: f64,
    pub epochs: u32,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            lambda: 1e-4,
            epochs: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub training_config: SvmConfig,
}

impl LinearModel {
    pub fn decision(&self, x: &SparseVector) -> Result<f64> {
        if x.dim() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                actual: x.dim(),
            });
        }
        Ok(x.dot_dense(&self.weights) + self.bias)
    }
}

/// `sign(w·x + b)`, with an exact zero resolving to `+1`.
pub fn predict(model: &LinearModel, x: &SparseVector) -> Result<i8> {
    Ok(if model.decision(x)? >= 0.0 { 1 } else { -1 })
}

/// The regularized hinge objective minimized by [`train_linear_svm`].
pub fn hinge_objective(model: &LinearModel, x: &[SparseVector], y: &[i8], lambda: f64) -> f64 {
    let reg = model.weights.iter().map(|w| w * w).sum::<f64>() + model.bias * model.bias;
    let loss: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, &yi)| {
            let m = f64::from(yi) * (xi.dot_dense(&model.weights) + model.bias);
            (1.0 - m).max(0.0)
        })
        .sum();
    lambda / 2.0 * reg + loss / x.len() as f64
}

pub fn train_linear_svm(x: &[SparseVector], y: &[i8], config: &SvmConfig) -> Result<LinearModel> {
    if x.len() != y.len() {
        return Err(Error::Training(format!("{} vectors but {} labels", x.len(), y.len())));
    }
    if y.iter().any(|l| *l != 1 && *l != -1) {
        return Err(Error::Training("labels must be +1 or -1".into()));
    }
    if !(y.contains(&1) && y.contains(&-1)) {
        return Err(Error::Training("both classes must be present".into()));
    }
    if !(config.lambda > 0.0 && config.lambda.is_finite()) || config.epochs == 0 {
        return Err(Error::Training("lambda must be positive and epochs >= 1".into()));
    }
    let dim = x[0].dim();
    if let Some(bad) = x.iter().find(|v| v.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: bad.dim(),
        });
    }

    let lambda = config.lambda;
    let radius = 1.0 / lambda.sqrt();
    let mut v = vec![0.0; dim];
    let mut vb = 0.0;
    let mut scale = 1.0;
    let mut norm_sq = 0.0; // of (v, vb)
    let x_norm_sq: Vec<f64> = x.iter().map(|xi| xi.norm_sq() + 1.0).collect();

    let mut rng = seed::rng(config.seed);
    let mut order: Vec<usize> = (0..x.len()).collect();
    let mut t: u64 = 0;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let yi = f64::from(y[i]);
            let vx = x[i].dot_dense(&v) + vb;
            let violated = yi * scale * vx < 1.0;

            if t == 1 {
                // (1 - ηλ) = 0 wipes the (zero) initial iterate.
                v.iter_mut().for_each(|w| *w = 0.0);
                vb = 0.0;
                norm_sq = 0.0;
                scale = 1.0;
            } else {
                scale *= 1.0 - 1.0 / t as f64;
            }

            if violated {
                let c = eta * yi / scale;
                let vx_now = if t == 1 { 0.0 } else { vx };
                norm_sq += 2.0 * c * vx_now + c * c * x_norm_sq[i];
                for (j, val) in x[i].entries() {
                    v[*j] += c * val;
                }
                vb += c;
            }

            let w_norm = scale * norm_sq.max(0.0).sqrt();
            if w_norm > radius {
                scale *= radius / w_norm;
            }
            if scale < 1e-9 {
                v.iter_mut().for_each(|w| *w *= scale);
                vb *= scale;
                norm_sq *= scale * scale;
                scale = 1.0;
            }
        }
    }

    let weights: Vec<f64> = v.iter().map(|w| w * scale).collect();
    let bias = vb * scale;
    if weights.iter().any(|w| !w.is_finite()) || !bias.is_finite() {
        return Err(Error::Training("weights diverged".into()));
    }
    Ok(LinearModel {
        weights,
        bias,
        training_config: *config,
    })
}
