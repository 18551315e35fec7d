//! Learned dynamics: an E(n)-equivariant graph network mapping current
//! particle positions and canonical push features to positions at the end of
//! the push, plus its training loss, gradient, optimiser and checkpoint format.

mod network;
mod params;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::action::CanonicalAction;
use crate::error::{check_len, Error, Result};
use crate::types::Vec3;

pub use network::{backward_from, egnn_forward, egnn_forward_cached, ForwardCache};
pub use params::{Dense, EgnnConfig, EgnnLayer, EgnnParams, GradientBundle};

/// Magic string at the head of every checkpoint file.
pub const CHECKPOINT_MAGIC: &str = "GDYN-EGNN";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Loss breakdown for one prediction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub dynamics: f64,
    pub shape: f64,
}

/// Mean squared particle error plus `shape_weight` times the mean squared
/// error of relative displacements over `pairs`.
pub fn weighted_loss(pred: &[Vec3], target: &[Vec3], pairs: &[(usize, usize)], shape_weight: f64) -> Result<LossParts> {
    check_len(pred.len(), target.len())?;
    if pred.is_empty() {
        return Err(Error::InvalidInput("empty prediction".into()));
    }
    for &(r, s) in pairs {
        if r >= pred.len() || s >= pred.len() {
            return Err(Error::InvalidInput(format!("pair ({r}, {s}) out of range")));
        }
    }
    let dynamics = pred.iter().zip(target).map(|(p, t)| (*p - *t).norm_sq()).sum::<f64>() / pred.len() as f64;
    let shape = if pairs.is_empty() {
        0.0
    } else {
        pairs
            .iter()
            .map(|&(r, s)| ((pred[r] - pred[s]) - (target[r] - target[s])).norm_sq())
            .sum::<f64>()
            / pairs.len() as f64
    };
    Ok(LossParts {
        total: dynamics + shape_weight * shape,
        dynamics,
        shape,
    })
}

/// Unit-weight loss, returned as `(total, dynamics, shape)`.
pub fn loss(pred: &[Vec3], target: &[Vec3], pairs: &[(usize, usize)]) -> Result<(f64, f64, f64)> {
    let l = weighted_loss(pred, target, pairs, 1.0)?;
    Ok((l.total, l.dynamics, l.shape))
}

/// `dL/dpred` for [`weighted_loss`].
pub fn loss_grad(pred: &[Vec3], target: &[Vec3], pairs: &[(usize, usize)], shape_weight: f64) -> Vec<Vec3> {
    let n = pred.len() as f64;
    let mut g: Vec<Vec3> = pred.iter().zip(target).map(|(p, t)| (*p - *t) * (2.0 / n)).collect();
    if !pairs.is_empty() {
        let c = 2.0 * shape_weight / pairs.len() as f64;
        for &(r, s) in pairs {
            let d = ((pred[r] - pred[s]) - (target[r] - target[s])) * c;
            g[r] += d;
            g[s] -= d;
        }
    }
    g
}

/// One supervised example: the state before a push, its canonical features,
/// the message-passing graph, and the tracked state after the push.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub positions: Vec<Vec3>,
    pub features: CanonicalAction,
    pub edges: Vec<(usize, usize)>,
    pub target: Vec<Vec3>,
}

impl TrainingSample {
    pub fn predict(&self, params: &EgnnParams) -> Result<Vec<Vec3>> {
        egnn_forward(&self.positions, &self.features, &self.edges, params)
    }

    pub fn evaluate(&self, params: &EgnnParams, shape_weight: f64) -> Result<LossParts> {
        weighted_loss(&self.predict(params)?, &self.target, &self.edges, shape_weight)
    }
}

/// Gradient of the mean batch loss with unit shape weight.
pub fn backward(batch: &[TrainingSample], params: &EgnnParams) -> Result<(GradientBundle, f64)> {
    backward_weighted(batch, params, 1.0)
}

/// Gradient of the mean over `batch` of [`weighted_loss`].
pub fn backward_weighted(batch: &[TrainingSample], params: &EgnnParams, shape_weight: f64) -> Result<(GradientBundle, f64)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let mut grads = GradientBundle::zeros_like(params);
    let mut total = 0.0;
    for s in batch {
        check_len(s.positions.len(), s.target.len())?;
        let cache = egnn_forward_cached(&s.positions, &s.features, &s.edges, params)?;
        let l = weighted_loss(&cache.output, &s.target, &s.edges, shape_weight)?;
        total += l.total;
        let g = loss_grad(&cache.output, &s.target, &s.edges, shape_weight);
        backward_from(&cache, &g, params, &mut grads);
    }
    let inv = 1.0 / batch.len() as f64;
    grads.scale(inv);
    let total = total * inv;
    if !total.is_finite() || grads.0.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
        return Err(Error::Numeric("non-finite loss or gradient".into()));
    }
    Ok((grads, total))
}

/// First and second moment estimates for Adam.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(params: &EgnnParams) -> Self {
        Self::with_len(params.num_params())
    }

    pub fn with_len(n: usize) -> Self {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// Applies one bias-corrected step to `values` in place.
    pub fn step_slice(&mut self, values: &mut [&mut Vec<f64>], grads: &[&Vec<f64>], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut k = 0;
        for (vals, gs) in values.iter_mut().zip(grads) {
            for (x, g) in vals.iter_mut().zip(gs.iter()) {
                let m = &mut self.m[k];
                let v = &mut self.v[k];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *x -= lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
                k += 1;
            }
        }
    }
}

/// In-place Adam step on the network weights.
pub fn adam_update(params: &mut EgnnParams, grads: &GradientBundle, state: &mut AdamState, lr: f64) -> Result<()> {
    let n = params.num_params();
    check_len(n, grads.0.num_params())?;
    check_len(n, state.m.len())?;
    let g = grads.0.tensors();
    let mut p = params.tensors_mut();
    state.step_slice(&mut p, &g, lr);
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    magic: String,
    version: u32,
    params: EgnnParams,
}

pub fn save_checkpoint(path: &Path, params: &EgnnParams) -> Result<()> {
    let ck = Checkpoint {
        magic: CHECKPOINT_MAGIC.to_string(),
        version: CHECKPOINT_VERSION,
        params: params.clone(),
    };
    fs::write(path, serde_json::to_vec(&ck)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<EgnnParams> {
    let bytes = fs::read(path)?;
    let ck: Checkpoint = serde_json::from_slice(&bytes)?;
    if ck.magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("not a model checkpoint (magic {:?})", ck.magic)));
    }
    if ck.version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {}", ck.version)));
    }
    ck.params.validate()?;
    Ok(ck.params)
}
