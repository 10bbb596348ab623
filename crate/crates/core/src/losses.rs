//! Next-token training losses: cross-entropy, label smoothing, focal, and
//! symmetric cross-entropy, each returning the loss and its analytic
//! gradient with respect to the logits.
//!
//! Softmax always goes through the max-subtracted log-sum-exp path. The
//! reduction identities (focal at gamma 0, label smoothing at epsilon 0,
//! symmetric CE at beta 0) hold bit-for-bit, not just approximately, so
//! training runs configured either way produce identical logs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamKey;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Ce,
    CeLabelSmoothing,
    Focal,
    SymmetricCe,
}

impl LossKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::CeLabelSmoothing => "ls",
            LossKind::Focal => "focal",
            LossKind::SymmetricCe => "sce",
        }
    }

    /// CLI spelling: ce | ls | focal | sce.
    pub fn parse(s: &str) -> Option<LossKind> {
        match s {
            "ce" => Some(LossKind::Ce),
            "ls" => Some(LossKind::CeLabelSmoothing),
            "focal" => Some(LossKind::Focal),
            "sce" => Some(LossKind::SymmetricCe),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    #[serde(default = "default_epsilon_smooth")]
    pub epsilon_smooth: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
}

fn default_epsilon_smooth() -> f64 {
    0.1
}
fn default_gamma() -> f64 {
    2.0
}
fn default_alpha() -> f64 {
    1.0
}
fn default_beta() -> f64 {
    0.13
}
fn default_eta() -> f64 {
    0.0004
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        LossSpec {
            kind,
            epsilon_smooth: default_epsilon_smooth(),
            gamma: default_gamma(),
            alpha: default_alpha(),
            beta: default_beta(),
            eta: default_eta(),
        }
    }

    pub fn check(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.epsilon_smooth) && self.gamma >= 0.0 && self.eta > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::BadConfig {
                detail: "loss spec out of range".to_string(),
            })
        }
    }
}

/// Log-softmax with max subtraction, written into `out`.
fn log_softmax_into(logits: &[f64], out: &mut Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max
        + logits
            .iter()
            .map(|&z| (z - max).exp())
            .sum::<f64>()
            .ln();
    out.clear();
    out.extend(logits.iter().map(|&z| z - lse));
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut logp = Vec::new();
    log_softmax_into(logits, &mut logp);
    logp.iter().map(|&lp| lp.exp()).collect()
}

fn check_target(logits: &[f64], target: usize) -> Result<()> {
    if target >= logits.len() || logits.is_empty() {
        Err(Error::BadConfig {
            detail: format!("bad-target: target {} with {} logits", target, logits.len()),
        })
    } else {
        Ok(())
    }
}

/// Allocation-free loss evaluation for the training hot loop. Writes the
/// gradient with respect to the logits into `grad` and returns the loss.
pub fn loss_into(
    spec: &LossSpec,
    logits: &[f64],
    target: usize,
    grad: &mut Vec<f64>,
    logp: &mut Vec<f64>,
) -> Result<f64> {
    check_target(logits, target)?;
    log_softmax_into(logits, logp);
    let c = logits.len();
    grad.clear();
    grad.resize(c, 0.0);

    match spec.kind {
        LossKind::Ce => {
            for i in 0..c {
                grad[i] = logp[i].exp() - if i == target { 1.0 } else { 0.0 };
            }
            Ok(-logp[target])
        }
        LossKind::CeLabelSmoothing => {
            let eps = spec.epsilon_smooth;
            let uniform = eps / c as f64;
            let mut sum_logp = 0.0;
            for &lp in logp.iter() {
                sum_logp += lp;
            }
            for i in 0..c {
                let smooth_target =
                    (1.0 - eps) * if i == target { 1.0 } else { 0.0 } + uniform;
                grad[i] = logp[i].exp() - smooth_target;
            }
            Ok(-((1.0 - eps) * logp[target]) - uniform * sum_logp)
        }
        LossKind::Focal => {
            let gamma = spec.gamma;
            let logpt = logp[target];
            let pt = logpt.exp();
            let om = 1.0 - pt;
            // d/dz_i of (1-pt)^g * (-log pt) factors as bracket * (delta_i - p_i).
            let bracket = if gamma == 0.0 {
                -1.0
            } else if om <= 0.0 {
                0.0
            } else {
                gamma * om.powf(gamma - 1.0) * pt * logpt - om.powf(gamma)
            };
            for i in 0..c {
                let delta = if i == target { 1.0 } else { 0.0 };
                grad[i] = bracket * (delta - logp[i].exp());
            }
            Ok(om.powf(gamma) * -logpt)
        }
        LossKind::SymmetricCe => {
            let (alpha, beta, eta) = (spec.alpha, spec.beta, spec.eta);
            let log_eta = eta.ln();
            let log_one_eta = (1.0 + eta).ln();
            // Reverse CE: -sum_i p_i * log(y_i + eta) with one-hot y.
            let mut rce = 0.0;
            let mut cbar = 0.0; // sum_i c_i p_i where c_i = log(y_i + eta)
            for i in 0..c {
                let p = logp[i].exp();
                let ci = if i == target { log_one_eta } else { log_eta };
                rce -= p * ci;
                cbar += ci * p;
            }
            for i in 0..c {
                let p = logp[i].exp();
                let delta = if i == target { 1.0 } else { 0.0 };
                let ci = if i == target { log_one_eta } else { log_eta };
                grad[i] = alpha * (p - delta) + beta * (p * (cbar - ci));
            }
            Ok(alpha * -logp[target] + beta * rce)
        }
    }
}

fn eval(spec: &LossSpec, logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    let mut grad = Vec::new();
    let mut logp = Vec::new();
    let loss = loss_into(spec, logits, target, &mut grad, &mut logp)?;
    Ok((loss, grad))
}

/// Standard cross-entropy against a one-hot target.
pub fn loss_ce(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    eval(&LossSpec::new(LossKind::Ce), logits, target)
}

/// Cross-entropy against the label-smoothed target (1-eps)*onehot + eps/C.
pub fn loss_label_smoothing(
    logits: &[f64],
    target: usize,
    epsilon_smooth: f64,
) -> Result<(f64, Vec<f64>)> {
    let spec = LossSpec {
        epsilon_smooth,
        ..LossSpec::new(LossKind::CeLabelSmoothing)
    };
    eval(&spec, logits, target)
}

/// Focal loss (1 - p_t)^gamma * CE.
pub fn loss_focal(logits: &[f64], target: usize, gamma: f64) -> Result<(f64, Vec<f64>)> {
    let spec = LossSpec {
        gamma,
        ..LossSpec::new(LossKind::Focal)
    };
    eval(&spec, logits, target)
}

/// Symmetric cross-entropy alpha*CE + beta*RCE with
/// RCE = -sum_i p_i * log(y_i + eta).
pub fn loss_symmetric_ce(
    logits: &[f64],
    target: usize,
    alpha: f64,
    beta: f64,
    eta: f64,
) -> Result<(f64, Vec<f64>)> {
    let spec = LossSpec {
        alpha,
        beta,
        eta,
        ..LossSpec::new(LossKind::SymmetricCe)
    };
    eval(&spec, logits, target)
}

/// Compare the analytic gradient of a loss against central finite
/// differences on random logits (C = 512). Returns the max relative error
/// with the denominator floored at 1e-5.
pub fn grad_check(spec: &LossSpec, trials: usize, seed: u64) -> f64 {
    use rand::Rng;
    let c = 512;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let mut rng = StreamKey::new(seed).with_str("loss-grad").with_u64(trial as u64).rng();
        let mut logits: Vec<f64> = (0..c).map(|_| rng.random_range(-3.0..3.0)).collect();
        let target = rng.random_range(0..c);
        let (_, grad) = eval(spec, &logits, target).unwrap();
        let mut coords: Vec<usize> = (0..8).map(|_| rng.random_range(0..c)).collect();
        coords.push(target);
        for &i in &coords {
            let orig = logits[i];
            logits[i] = orig + h;
            let up = eval(spec, &logits, target).unwrap().0;
            logits[i] = orig - h;
            let down = eval(spec, &logits, target).unwrap().0;
            logits[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let denom = grad[i].abs().max(numeric.abs()).max(1e-5);
            worst = worst.max((grad[i] - numeric).abs() / denom);
        }
    }
    worst
}
