//! Classification losses over probabilistic embeddings.
//!
//! The distribution loss scores a sample posterior against every class prior
//! by KL divergence: logit_k = -D(q || p_k) + ln w_k, cross-entropy over the
//! softmax of those logits, plus a weighted KL regularizer pulling each
//! posterior toward its labeled prior. The Gaussian-mixture (GM) loss is the
//! point-feature baseline where logit_k is the class log likelihood instead.
//! Soft labels are derived from pairwise Wasserstein distances between the
//! learned priors, tempered by tau.
//!
//! Graph-building variants (`*_graph`) record onto a [`Tape`] so gradients
//! reach posterior outputs and prior parameters; plain variants compute
//! values only and serve evaluation and test oracles.

use crate::gaussian::{kl_divergence, wasserstein_sq, DiagGaussian, GaussianError, VARIANCE_FLOOR};
use crate::rng::Rng;
use crate::tensor::{softplus, softplus_inverse, Tape, Tensor, TensorError, TensorId};
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum LossError {
    DimensionMismatch { detail: String },
    LabelOutOfRange { label: usize, classes: usize },
    BatchMismatch { detail: String },
    InvalidConfig { detail: String },
    InvalidTarget { detail: String },
    Tensor(TensorError),
}

impl fmt::Display for LossError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossError::DimensionMismatch { detail} => write!(f, "dimension mismatch: {detail}"),
            LossError::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} out of range for {classes} classes")
            }
            LossError::BatchMismatch { detail } => write!(f, "batch mismatch: {detail}"),
            LossError::InvalidConfig { detail } => write!(f, "invalid config: {detail}"),
            LossError::InvalidTarget { detail } => write!(f, "invalid target: {detail}"),
            LossError::Tensor(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for LossError {}

impl From<TensorError> for LossError {
    fn from(e: TensorError) -> Self {
        LossError::Tensor(e)
    }
}

impl From<GaussianError> for LossError {
    fn from(e: GaussianError) -> Self {
        LossError::DimensionMismatch { detail: e.to_string() }
    }
}

pub type Result<T> = std::result::Result<T, LossError>;

/// Hyper-parameters of the distribution loss and soft labels.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossConfig {
    /// Weight of the KL regularizer.
    pub lambda: f64,
    /// Soft-label temperature in (0, 1].
    pub tau: f64,
    /// Label-smoothing mass in [0, 1).
    pub smoothing_epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 0.1,
            tau: 0.17,
            smoothing_epsilon: 0.1,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(LossError::InvalidConfig {
                detail: format!("lambda {} must be >= 0", self.lambda),
            });
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(LossError::InvalidConfig {
                detail: format!("tau {} must be in (0, 1]", self.tau),
            });
        }
        if !(0.0..1.0).contains(&self.smoothing_epsilon) {
            return Err(LossError::InvalidConfig {
                detail: format!("smoothing epsilon {} must be in [0, 1)", self.smoothing_epsilon),
            });
        }
        Ok(())
    }
}

/// K trainable diagonal-Gaussian class priors plus class weights.
///
/// Variances are realized as softplus(rho) + floor so optimization stays
/// unconstrained while every realized variance is strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorBank {
    means: Tensor,
    rho: Tensor,
    class_weights: Vec<f64>,
}

impl PriorBank {
    /// Means drawn from N(0, 0.1^2); rho set so the realized variance is 1.
    pub fn init(classes: usize, dim: usize, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let means = Tensor::randn(&[classes, dim], 0.1, &mut rng);
        let rho = Tensor::full(&[classes, dim], softplus_inverse(1.0 - VARIANCE_FLOOR));
        PriorBank {
            means,
            rho,
            class_weights: vec![1.0 / classes as f64; classes],
        }
    }

    pub fn from_parts(means: Tensor, rho: Tensor, class_weights: Vec<f64>) -> Result<Self> {
        if means.shape().len() != 2 || means.shape() != rho.shape() {
            return Err(LossError::DimensionMismatch {
                detail: format!("means {:?} vs rho {:?}", means.shape(), rho.shape()),
            });
        }
        let k = means.shape()[0];
        if class_weights.len() != k {
            return Err(LossError::DimensionMismatch {
                detail: format!("{} class weights for {k} classes", class_weights.len()),
            });
        }
        let sum: f64 = class_weights.iter().sum();
        if class_weights.iter().any(|&w| w < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(LossError::InvalidConfig {
                detail: format!("class weights must be non-negative and sum to 1, sum {sum}"),
            });
        }
        Ok(PriorBank {
            means,
            rho,
            class_weights,
        })
    }

    pub fn classes(&self) -> usize {
        self.means.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.means.shape()[1]
    }

    pub fn means(&self) -> &Tensor {
        &self.means
    }

    pub fn rho(&self) -> &Tensor {
        &self.rho
    }

    pub fn means_mut(&mut self) -> &mut Tensor {
        &mut self.means
    }

    pub fn rho_mut(&mut self) -> &mut Tensor {
        &mut self.rho
    }

    /// Both trainable tensors at once, for optimizer parameter sweeps.
    pub fn tensors_mut(&mut self) -> (&mut Tensor, &mut Tensor) {
        (&mut self.means, &mut self.rho)
    }

    pub fn class_weights(&self) -> &[f64] {
        &self.class_weights
    }

    pub fn realized_variance(&self, class: usize, dim: usize) -> f64 {
        softplus(self.rho.data()[class * self.dim() + dim]) + VARIANCE_FLOOR
    }

    /// The class prior as a value-level Gaussian.
    pub fn prior(&self, class: usize) -> Result<DiagGaussian> {
        if class >= self.classes() {
            return Err(LossError::LabelOutOfRange {
                label: class,
                classes: self.classes(),
            });
        }
        let d = self.dim();
        let mean = self.means.data()[class * d..(class + 1) * d].to_vec();
        let variance = (0..d).map(|i| self.realized_variance(class, i)).collect();
        Ok(DiagGaussian::new(mean, variance)?)
    }

    /// Inserts the trainable parameters as named tape leaves.
    pub fn insert(&self, tape: &mut Tape) -> BankNodes {
        let means = tape.named_leaf("prior.means", self.means.clone(), true);
        let rho = tape.named_leaf("prior.rho", self.rho.clone(), true);
        let log_weights = tape.constant(Tensor::from_vec(
            self.class_weights.iter().map(|&w| w.ln()).collect(),
        ));
        BankNodes {
            means,
            rho,
            log_weights,
            classes: self.classes(),
            dim: self.dim(),
        }
    }

    /// Per-row soft labels: row r is the softmax over classes of
    /// -D_w(prior_r, prior_k) / tau. Each row sums to 1 and the diagonal is a
    /// row maximum (strict when priors are pairwise distinct).
    pub fn soft_labels(&self, tau: f64) -> Result<Vec<Vec<f64>>> {
        if tau <= 0.0 {
            return Err(LossError::InvalidConfig {
                detail: format!("tau {tau} must be positive"),
            });
        }
        let k = self.classes();
        let priors: Vec<DiagGaussian> = (0..k).map(|c| self.prior(c)).collect::<Result<_>>()?;
        let mut rows = Vec::with_capacity(k);
        for r in 0..k {
            let scores: Vec<f64> = (0..k)
                .map(|c| Ok(-wasserstein_sq(&priors[r], &priors[c])? / tau))
                .collect::<Result<_>>()?;
            rows.push(softmax_slice(&scores));
        }
        Ok(rows)
    }
}

/// Tape handles for an inserted [`PriorBank`].
#[derive(Debug, Clone, Copy)]
pub struct BankNodes {
    pub means: TensorId,
    pub rho: TensorId,
    pub log_weights: TensorId,
    pub classes: usize,
    pub dim: usize,
}

impl BankNodes {
    /// Realized prior variances, softplus(rho) + floor, shape [K, d].
    pub fn variances(&self, tape: &mut Tape) -> Result<TensorId> {
        let sp = tape.softplus(self.rho)?;
        Ok(tape.add_scalar(sp, VARIANCE_FLOOR)?)
    }
}

/// Posterior mean and variance nodes for one sample, both shape [d].
#[derive(Debug, Clone, Copy)]
pub struct PosteriorNodes {
    pub mean: TensorId,
    pub variance: TensorId,
}

/// A K-vector of non-negative class masses summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetDistribution(Vec<f64>);

impl TargetDistribution {
    pub fn new(masses: Vec<f64>) -> Result<Self> {
        if masses.is_empty() || masses.iter().any(|&m| m < 0.0 || !m.is_finite()) {
            return Err(LossError::InvalidTarget {
                detail: "entries must be non-negative and finite".into(),
            });
        }
        let sum: f64 = masses.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(LossError::InvalidTarget {
                detail: format!("masses sum to {sum}, expected 1"),
            });
        }
        Ok(TargetDistribution(masses))
    }

    pub fn one_hot(label: usize, classes: usize) -> Result<Self> {
        if label >= classes {
            return Err(LossError::LabelOutOfRange { label, classes });
        }
        let mut masses = vec![0.0; classes];
        masses[label] = 1.0;
        Ok(TargetDistribution(masses))
    }

    /// (1 - eps) * one-hot + eps / K.
    pub fn smoothed(label: usize, classes: usize, epsilon: f64) -> Result<Self> {
        if label >= classes {
            return Err(LossError::LabelOutOfRange { label, classes });
        }
        if !(0.0..1.0).contains(&epsilon) {
            return Err(LossError::InvalidConfig {
                detail: format!("epsilon {epsilon} must be in [0, 1)"),
            });
        }
        let base = epsilon / classes as f64;
        let mut masses = vec![base; classes];
        masses[label] += 1.0 - epsilon;
        Ok(TargetDistribution(masses))
    }

    pub fn masses(&self) -> &[f64] {
        &self.0
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self
            .0
            .iter()
            .filter(|&&m| m > 0.0)
            .map(|&m| m * m.ln())
            .sum::<f64>()
    }
}

/// How per-sample targets are built from integer labels.
#[derive(Debug, Clone)]
pub enum TargetMode<'a> {
    OneHot,
    Smoothed(f64),
    Soft(&'a [Vec<f64>]),
}

pub fn make_targets(labels: &[usize], mode: &TargetMode, classes: usize) -> Result<Vec<TargetDistribution>> {
    labels
        .iter()
        .map(|&y| match mode {
            TargetMode::OneHot => TargetDistribution::one_hot(y, classes),
            TargetMode::Smoothed(eps) => TargetDistribution::smoothed(y, classes, *eps),
            TargetMode::Soft(matrix) => {
                if y >= matrix.len() {
                    return Err(LossError::LabelOutOfRange {
                        label: y,
                        classes: matrix.len(),
                    });
                }
                TargetDistribution::new(matrix[y].clone())
            }
        })
        .collect()
}

// ---- plain (value-level) forms ----

pub fn softmax_slice(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax_slice(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|&x| x - lse).collect()
}

/// Distribution-loss logits: logit_k = -D(posterior || prior_k) + ln w_k.
pub fn class_logits(posterior: &DiagGaussian, bank: &PriorBank) -> Result<Vec<f64>> {
    if posterior.dim() != bank.dim() {
        return Err(LossError::DimensionMismatch {
            detail: format!("posterior dim {} vs bank dim {}", posterior.dim(), bank.dim()),
        });
    }
    (0..bank.classes())
        .map(|k| {
            let kl = kl_divergence(posterior, &bank.prior(k)?)?;
            Ok(-kl + bank.class_weights()[k].ln())
        })
        .collect()
}

/// GM logits for a point feature: logit_k = ln N(feature; prior_k) + ln w_k.
pub fn gm_class_logits(feature: &[f64], bank: &PriorBank) -> Result<Vec<f64>> {
    if feature.len() != bank.dim() {
        return Err(LossError::DimensionMismatch {
            detail: format!("feature dim {} vs bank dim {}", feature.len(), bank.dim()),
        });
    }
    (0..bank.classes())
        .map(|k| Ok(bank.prior(k)?.log_pdf(feature)? + bank.class_weights()[k].ln()))
        .collect()
}

/// Mean cross-entropy of target rows against log-softmax of logit rows.
pub fn cls_loss(logits_batch: &[Vec<f64>], targets: &[TargetDistribution]) -> Result<f64> {
    if logits_batch.len() != targets.len() || logits_batch.is_empty() {
        return Err(LossError::BatchMismatch {
            detail: format!("{} logit rows vs {} targets", logits_batch.len(), targets.len()),
        });
    }
    let mut total = 0.0;
    for (logits, target) in logits_batch.iter().zip(targets) {
        if logits.len() != target.classes() {
            return Err(LossError::BatchMismatch {
                detail: format!("{} logits vs {} target masses", logits.len(), target.classes()),
            });
        }
        let lsm = log_softmax_slice(logits);
        total -= target
            .masses()
            .iter()
            .zip(&lsm)
            .filter(|(&m, _)| m > 0.0)
            .map(|(&m, &l)| m * l)
            .sum::<f64>();
    }
    Ok(total / logits_batch.len() as f64)
}

/// Batch mean of D(posterior_i || prior_{label_i}).
pub fn kl_regularizer(posteriors: &[DiagGaussian], labels: &[usize], bank: &PriorBank) -> Result<f64> {
    if posteriors.len() != labels.len() || posteriors.is_empty() {
        return Err(LossError::BatchMismatch {
            detail: format!("{} posteriors vs {} labels", posteriors.len(), labels.len()),
        });
    }
    let mut total = 0.0;
    for (q, &y) in posteriors.iter().zip(labels) {
        total += kl_divergence(q, &bank.prior(y)?)?;
    }
    Ok(total / posteriors.len() as f64)
}

// ---- graph (differentiable) forms ----

/// Per-class KL divergences from one posterior to every prior, shape [K].
fn kl_all_classes_graph(tape: &mut Tape, posterior: &PosteriorNodes, bank: &BankNodes) -> Result<TensorId> {
    let prior_var = bank.variances(tape)?; // [K, d]
    let ratio_log = {
        let r = tape.div(prior_var, posterior.variance)?;
        tape.ln(r)?
    };
    let ratio = tape.div(posterior.variance, prior_var)?; // [K, d] via broadcast
    let diff = tape.sub(posterior.mean, bank.means)?; // [K, d]
    let diff_sq = tape.mul(diff, diff)?;
    let quad = tape.div(diff_sq, prior_var)?;
    let mut acc = tape.add(ratio_log, ratio)?;
    acc = tape.add(acc, quad)?;
    acc = tape.add_scalar(acc, -1.0)?;
    let summed = tape.sum_axis(acc, 1)?; // [K]
    Ok(tape.mul_scalar(summed, 0.5)?)
}

/// Distribution-loss logits node, shape [K]: -KL + ln w.
pub fn class_logits_graph(tape: &mut Tape, posterior: &PosteriorNodes, bank: &BankNodes) -> Result<TensorId> {
    let kl = kl_all_classes_graph(tape, posterior, bank)?;
    let neg = tape.neg(kl)?;
    Ok(tape.add(neg, bank.log_weights)?)
}

/// GM logits node, shape [K]: class log likelihood of a point feature + ln w.
pub fn gm_class_logits_graph(tape: &mut Tape, feature: TensorId, bank: &BankNodes) -> Result<TensorId> {
    let prior_var = bank.variances(tape)?; // [K, d]
    let log_var = tape.ln(prior_var)?;
    let norm = tape.add_scalar(log_var, (2.0 * std::f64::consts::PI).ln())?;
    let diff = tape.sub(feature, bank.means)?;
    let diff_sq = tape.mul(diff, diff)?;
    let quad = tape.div(diff_sq, prior_var)?;
    let acc = tape.add(norm, quad)?;
    let summed = tape.sum_axis(acc, 1)?;
    let log_pdf = tape.mul_scalar(summed, -0.5)?;
    Ok(tape.add(log_pdf, bank.log_weights)?)
}

/// Stacks per-sample [K] logit nodes into [N, K] and takes the mean
/// cross-entropy against fixed target rows.
pub fn cls_loss_graph(
    tape: &mut Tape,
    logit_rows: &[TensorId],
    targets: &[TargetDistribution],
) -> Result<TensorId> {
    if logit_rows.len() != targets.len() || logit_rows.is_empty() {
        return Err(LossError::BatchMismatch {
            detail: format!("{} logit rows vs {} targets", logit_rows.len(), targets.len()),
        });
    }
    let k = targets[0].classes();
    let mut rows = Vec::with_capacity(logit_rows.len());
    for &id in logit_rows {
        rows.push(tape.reshape(id, vec![1, k])?);
    }
    let stacked = tape.concat(&rows, 0)?; // [N, K]
    let lsm = tape.log_softmax(stacked)?;
    let mut target_data = Vec::with_capacity(targets.len() * k);
    for t in targets {
        if t.classes() != k {
            return Err(LossError::BatchMismatch {
                detail: "uneven target widths".into(),
            });
        }
        target_data.extend_from_slice(t.masses());
    }
    let target_mat = tape.constant(Tensor::new(vec![targets.len(), k], target_data).expect("targets"));
    let weighted = tape.mul(lsm, target_mat)?;
    let total = tape.sum_all(weighted)?;
    Ok(tape.mul_scalar(total, -1.0 / targets.len() as f64)?)
}

/// The three scalar nodes of a loss evaluation: total = cls + lambda * kl.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: TensorId,
    pub cls: TensorId,
    pub kl: TensorId,
}

/// Full distribution loss over a batch of posteriors.
pub fn distribution_loss_graph(
    tape: &mut Tape,
    posteriors: &[PosteriorNodes],
    targets: &[TargetDistribution],
    labels: &[usize],
    bank: &BankNodes,
    config: &LossConfig,
) -> Result<LossParts> {
    config.validate()?;
    if posteriors.len() != targets.len() || posteriors.len() != labels.len() || posteriors.is_empty() {
        return Err(LossError::BatchMismatch {
            detail: format!(
                "{} posteriors, {} targets, {} labels",
                posteriors.len(),
                targets.len(),
                labels.len()
            ),
        });
    }
    let mut logit_rows = Vec::with_capacity(posteriors.len());
    let mut kl_terms = Vec::with_capacity(posteriors.len());
    for (posterior, &label) in posteriors.iter().zip(labels) {
        if label >= bank.classes {
            return Err(LossError::LabelOutOfRange {
                label,
                classes: bank.classes,
            });
        }
        let kl_vec = kl_all_classes_graph(tape, posterior, bank)?;
        let neg = tape.neg(kl_vec)?;
        logit_rows.push(tape.add(neg, bank.log_weights)?);
        kl_terms.push(tape.slice_axis(kl_vec, 0, label, 1)?); // [1]
    }
    let cls = cls_loss_graph(tape, &logit_rows, targets)?;
    let kl_stack = tape.concat(&kl_terms, 0)?; // [N]
    let kl = tape.mean_all(kl_stack)?;
    let weighted_kl = tape.mul_scalar(kl, config.lambda)?;
    let total = tape.add(cls, weighted_kl)?;
    Ok(LossParts { total, cls, kl })
}

/// GM loss over a batch of point features: cross-entropy over likelihood
/// logits plus lambda times the mean negative log likelihood under the
/// labeled prior.
pub fn gm_loss_graph(
    tape: &mut Tape,
    features: &[TensorId],
    targets: &[TargetDistribution],
    labels: &[usize],
    bank: &BankNodes,
    lambda_lkd: f64,
) -> Result<LossParts> {
    if features.len() != targets.len() || features.len() != labels.len() || features.is_empty() {
        return Err(LossError::BatchMismatch {
            detail: format!(
                "{} features, {} targets, {} labels",
                features.len(),
                targets.len(),
                labels.len()
            ),
        });
    }
    let mut logit_rows = Vec::with_capacity(features.len());
    let mut nll_terms = Vec::with_capacity(features.len());
    for (&feature, &label) in features.iter().zip(labels) {
        if label >= bank.classes {
            return Err(LossError::LabelOutOfRange {
                label,
                classes: bank.classes,
            });
        }
        let logits = gm_class_logits_graph(tape, feature, bank)?;
        // strip the weight term back off for the likelihood regularizer
        let log_pdf_row = tape.sub(logits, bank.log_weights)?;
        let picked = tape.slice_axis(log_pdf_row, 0, label, 1)?;
        nll_terms.push(tape.neg(picked)?);
        logit_rows.push(logits);
    }
    let cls = cls_loss_graph(tape, &logit_rows, targets)?;
    let nll_stack = tape.concat(&nll_terms, 0)?;
    let kl = tape.mean_all(nll_stack)?;
    let weighted = tape.mul_scalar(kl, lambda_lkd)?;
    let total = tape.add(cls, weighted)?;
    Ok(LossParts { total, cls, kl })
}

/// Soft-label matrix as CSV: K rows of K comma-separated decimals.
pub fn soft_labels_csv(matrix: &[Vec<f64>]) -> String {
    let mut out = String::new();
    for row in matrix {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.12}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}
