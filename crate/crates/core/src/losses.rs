//! Differentiable training objectives.
//!
//! Every loss is a batch mean and comes in two flavours: a value-only
//! function and a `*_with_grad` variant that also returns the gradient with
//! respect to the *student* argument. Target arguments (peer logits, peer
//! features, teacher logits) are treated as constants: no gradient is ever
//! produced for them.
//!
//! Distillation terms use `KL(target || student)` on temperature-softened
//! distributions and carry the `tau^2` factor internally.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::augment::SoftLabelBatch;
use crate::error::{Error, Result};

/// Floor applied to probabilities before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

/// Tolerance on target rows summing to one.
pub const SIMPLEX_TOL: f64 = 1e-5;

/// Loss weights and distillation temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    /// Number of peer students.
    pub num_peers: usize,
    pub tau: f64,
    /// Weight of the mutual logit term.
    pub alpha: f64,
    /// Weight of the feature MMD term.
    pub beta: f64,
    /// Weight of the peer-teacher term.
    pub gamma: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            num_peers: 2,
            tau: 3.0,
            alpha: 0.6,
            beta: 0.2,
            gamma: 0.1,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_peers < 2 {
            return Err(Error::Configuration(format!(
                "need at least 2 peers, got {}",
                self.num_peers
            )));
        }
        check_tau(self.tau)?;
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Configuration(format!("{name} must be >= 0, got {w}")));
            }
        }
        Ok(())
    }
}

/// The four per-peer loss components.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub ce: f64,
    pub dml: f64,
    pub mmd: f64,
    pub pt: f64,
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("temperature must be > 0, got {tau}")))
    }
}

fn check_same_shape(a: &ArrayView2<f64>, b: &ArrayView2<f64>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Validation(format!(
            "{what}: shape {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    if a.nrows() == 0 {
        return Err(Error::Validation(format!("{what}: empty batch")));
    }
    Ok(())
}

/// `softmax(logits / tau)` with max subtraction.
pub fn softmax(logits: ArrayView1<f64>, tau: f64) -> Result<Array1<f64>> {
    check_tau(tau)?;
    Ok(softmax_unchecked(logits, tau))
}

fn softmax_unchecked(logits: ArrayView1<f64>, tau: f64) -> Array1<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = logits.mapv(|z| ((z - max) / tau).exp());
    let sum = out.sum();
    out /= sum;
    out
}

fn softmax_rows(logits: ArrayView2<f64>, tau: f64) -> Array2<f64> {
    let mut out = Array2::zeros(logits.dim());
    for (row, mut dst) in logits.rows().into_iter().zip(out.rows_mut()) {
        dst.assign(&softmax_unchecked(row, tau));
    }
    out
}

#[inline]
fn flog(p: f64) -> f64 {
    p.max(LOG_FLOOR).ln()
}

/// Mean soft-target cross-entropy at temperature 1.
pub fn soft_ce(logits: ArrayView2<f64>, targets: &SoftLabelBatch) -> Result<f64> {
    soft_ce_with_grad(logits, targets).map(|(v, _)| v)
}

pub fn soft_ce_with_grad(
    logits: ArrayView2<f64>,
    targets: &SoftLabelBatch,
) -> Result<(f64, Array2<f64>)> {
    let y = targets.probs.view();
    check_same_shape(&logits, &y, "soft_ce")?;
    for (i, row) in y.rows().into_iter().enumerate() {
        let sum = row.sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL || row.iter().any(|&v| v < -SIMPLEX_TOL) {
            return Err(Error::Validation(format!(
                "target row {i} is not a probability vector (sum {sum})"
            )));
        }
    }
    let n = logits.nrows() as f64;
    let p = softmax_rows(logits, 1.0);
    let mut value = 0.0;
    let mut grad = Array2::zeros(logits.dim());
    for ((prow, yrow), mut grow) in p.rows().into_iter().zip(y.rows()).zip(grad.rows_mut()) {
        let ysum = yrow.sum();
        for k in 0..prow.len() {
            if yrow[k] != 0.0 {
                value -= yrow[k] * flog(prow[k]);
            }
            grow[k] = (prow[k] * ysum - yrow[k]) / n;
        }
    }
    Ok((value / n, grad))
}

/// `tau^2 * mean_i KL(softmax(teacher_i / tau) || softmax(student_i / tau))`.
pub fn kd_kl(student: ArrayView2<f64>, teacher: ArrayView2<f64>, tau: f64) -> Result<f64> {
    kd_kl_with_grad(student, teacher, tau).map(|(v, _)| v)
}

pub fn kd_kl_with_grad(
    student: ArrayView2<f64>,
    teacher: ArrayView2<f64>,
    tau: f64,
) -> Result<(f64, Array2<f64>)> {
    check_tau(tau)?;
    check_same_shape(&student, &teacher, "kd_kl")?;
    let n = student.nrows() as f64;
    let p = softmax_rows(student, tau);
    let q = softmax_rows(teacher, tau);
    let mut kl = 0.0;
    for (prow, qrow) in p.rows().into_iter().zip(q.rows()) {
        for (&pk, &qk) in prow.iter().zip(qrow.iter()) {
            if qk > 0.0 {
                kl += qk * (flog(qk) - flog(pk));
            }
        }
    }
    // d/dz_s of tau^2 * KL(q || softmax(z_s / tau)) = tau * (p - q)
    let grad = (&p - &q) * (tau / n);
    Ok((tau * tau * kl / n, grad))
}

/// Mutual logit distillation for peer `j`: the mean of
/// [`kd_kl`]`(z_j, z_k, tau)` over every other peer `k`.
pub fn dml_loss(all_logits: &[ArrayView2<f64>], j: usize, tau: f64) -> Result<f64> {
    dml_loss_with_grad(all_logits, j, tau).map(|(v, _)| v)
}

pub fn dml_loss_with_grad(
    all_logits: &[ArrayView2<f64>],
    j: usize,
    tau: f64,
) -> Result<(f64, Array2<f64>)> {
    check_peers(all_logits.len(), j)?;
    let others = (all_logits.len() - 1) as f64;
    let mut value = 0.0;
    let mut grad = Array2::zeros(all_logits[j].dim());
    for (k, zk) in all_logits.iter().enumerate() {
        if k == j {
            continue;
        }
        let (v, g) = kd_kl_with_grad(all_logits[j], *zk, tau)?;
        value += v;
        grad += &g;
    }
    grad /= others;
    Ok((value / others, grad))
}

/// Linear-kernel MMD for peer `j`: mean over the other peers of the squared
/// distance between batch-mean features.
pub fn mmd_loss(all_features: &[ArrayView2<f64>], j: usize) -> Result<f64> {
    mmd_loss_with_grad(all_features, j).map(|(v, _)| v)
}

pub fn mmd_loss_with_grad(
    all_features: &[ArrayView2<f64>],
    j: usize,
) -> Result<(f64, Array2<f64>)> {
    check_peers(all_features.len(), j)?;
    let fj = all_features[j];
    for (k, fk) in all_features.iter().enumerate() {
        if fk.ncols() != fj.ncols() {
            return Err(Error::Validation(format!(
                "peer {k} has feature width {}, peer {j} has {}",
                fk.ncols(),
                fj.ncols()
            )));
        }
        if fk.nrows() == 0 {
            return Err(Error::Validation(format!("peer {k} has an empty batch")));
        }
    }
    let others = (all_features.len() - 1) as f64;
    let n = fj.nrows() as f64;
    let mean_j = fj.mean_axis(Axis(0)).expect("non-empty");
    let mut value = 0.0;
    let mut diff_sum = Array1::<f64>::zeros(fj.ncols());
    for (k, fk) in all_features.iter().enumerate() {
        if k == j {
            continue;
        }
        let diff = &mean_j - &fk.mean_axis(Axis(0)).expect("non-empty");
        value += diff.dot(&diff);
        diff_sum += &diff;
    }
    let row = diff_sum * (2.0 / (others * n));
    let grad = Array2::from_shape_fn(fj.dim(), |(_, c)| row[c]);
    Ok((value / others, grad))
}

/// Distillation from the peer-teacher logits; same contract as [`kd_kl`].
pub fn pt_loss(student: ArrayView2<f64>, teacher: ArrayView2<f64>, tau: f64) -> Result<f64> {
    kd_kl(student, teacher, tau)
}

pub fn pt_loss_with_grad(
    student: ArrayView2<f64>,
    teacher: ArrayView2<f64>,
    tau: f64,
) -> Result<(f64, Array2<f64>)> {
    kd_kl_with_grad(student, teacher, tau)
}

/// `ce + alpha * dml + beta * mmd + gamma * pt`.
pub fn total_loss(cfg: &DistillConfig, parts: &LossParts) -> f64 {
    parts.ce + cfg.alpha * parts.dml + cfg.beta * parts.mmd + cfg.gamma * parts.pt
}

fn check_peers(num_peers: usize, j: usize) -> Result<()> {
    if num_peers < 2 {
        return Err(Error::Configuration(format!(
            "mutual losses need at least 2 peers, got {num_peers}"
        )));
    }
    if j >= num_peers {
        return Err(Error::Parameter(format!(
            "peer index {j} out of range for {num_peers} peers"
        )));
    }
    Ok(())
}
