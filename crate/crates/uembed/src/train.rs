//! Two-stage training loop with warmup and step decay.
//!
//! Stage one trains with smoothed one-hot targets. Stage two recomputes the
//! prior-derived soft-label matrix from the current bank at every epoch start
//! and trains against those rows instead; the matrix is frozen within the
//! epoch. All shuffling and dropout seeds derive from the config seed, so a
//! (config, seed, data) triple reproduces checkpoints bit-exactly.

use crate::loss::{
    cls_loss_graph, distribution_loss_graph, gm_loss_graph, make_targets, LossConfig, LossError,
    LossParts, TargetMode,
};
use crate::model::{EmbedModel, ModelError};
use crate::rng::{seed_chain, Rng};
use crate::tensor::{Phase, Tape, Tensor, TensorError};
use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

#[derive(Debug)]
pub enum TrainError {
    InvalidConfig { detail: String },
    NonFinite { tensor: String },
    EmptyDataset,
    Loss(LossError),
    Model(ModelError),
    Tensor(TensorError),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::InvalidConfig { detail } => write!(f, "invalid train config: {detail}"),
            TrainError::NonFinite { tensor } => {
                write!(f, "non-finite loss; first bad tensor: {tensor}")
            }
            TrainError::EmptyDataset => write!(f, "empty dataset"),
            TrainError::Loss(e) => write!(f, "{e}"),
            TrainError::Model(e) => write!(f, "{e}"),
            TrainError::Tensor(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for TrainError {}

impl From<LossError> for TrainError {
    fn from(e: LossError) -> Self {
        TrainError::Loss(e)
    }
}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        TrainError::Model(e)
    }
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Tensor(e)
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    Distribution,
    Gm,
    CrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetKind {
    OneHot,
    Smoothed,
    Soft,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub loss_mode: LossMode,
    pub loss: LossConfig,
    pub stage1_targets: TargetKind,
    pub stage2_targets: TargetKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage1_epochs: 40,
            stage2_epochs: 10,
            base_lr: 3.5e-4,
            warmup_epochs: 5,
            decay_epochs: vec![20, 30],
            decay_factor: 3.0,
            batch_size: 32,
            seed: 0,
            loss_mode: LossMode::Distribution,
            loss: LossConfig::default(),
            stage1_targets: TargetKind::Smoothed,
            stage2_targets: TargetKind::Soft,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stage1_epochs == 0 {
            return Err(TrainError::InvalidConfig {
                detail: "stage1_epochs must be positive".into(),
            });
        }
        if self.warmup_epochs >= self.stage1_epochs {
            return Err(TrainError::InvalidConfig {
                detail: format!(
                    "warmup {} must be below stage1 epochs {}",
                    self.warmup_epochs, self.stage1_epochs
                ),
            });
        }
        if !self.decay_epochs.windows(2).all(|w| w[0] < w[1]) {
            return Err(TrainError::InvalidConfig {
                detail: "decay epochs must be strictly increasing".into(),
            });
        }
        if self.base_lr < 0.0 || self.decay_factor <= 0.0 {
            return Err(TrainError::InvalidConfig {
                detail: "base_lr must be >= 0 and decay_factor > 0".into(),
            });
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig {
                detail: "batch_size must be positive".into(),
            });
        }
        self.loss.validate()?;
        Ok(())
    }
}

/// Linear ramp from base_lr / warmup to base_lr over the warmup epochs, then
/// division by decay_factor at each decay epoch.
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> f64 {
    let ramp = if config.warmup_epochs > 0 && epoch < config.warmup_epochs {
        (epoch + 1) as f64 / config.warmup_epochs as f64
    } else {
        1.0
    };
    let decays = config.decay_epochs.iter().filter(|&&d| d <= epoch).count();
    config.base_lr * ramp / config.decay_factor.powi(decays as i32)
}

/// Adaptive-moment optimizer; moments are kept per parameter name.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }
}

impl Adam {
    pub fn new() -> Self {
        Adam::default()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Marks the start of one optimizer step; bias correction uses the
    /// resulting counter for every tensor updated until the next call.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    pub fn update(&mut self, name: &str, param: &mut Tensor, grad: &Tensor, lr: f64) -> Result<()> {
        if param.shape() != grad.shape() {
            return Err(TrainError::InvalidConfig {
                detail: format!(
                    "gradient shape {:?} does not match parameter {name} {:?}",
                    grad.shape(),
                    param.shape()
                ),
            });
        }
        let (m, v) = self
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (Tensor::zeros(param.shape()), Tensor::zeros(param.shape())));
        let t = self.step.max(1) as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        let p = param.data_mut();
        for i in 0..p.len() {
            let g = grad.data()[i];
            let mi = self.beta1 * m.data()[i] + (1.0 - self.beta1) * g;
            let vi = self.beta2 * v.data()[i] + (1.0 - self.beta2) * g * g;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let m_hat = mi / bias1;
            let v_hat = vi / bias2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }

    pub fn moments(&self, name: &str) -> Option<(&Tensor, &Tensor)> {
        self.moments.get(name).map(|(m, v)| (m, v))
    }

    /// Optimizer state as checkpoint entries.
    pub fn state_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![("adam.step".to_string(), Tensor::scalar(self.step as f64))];
        for (name, (m, v)) in &self.moments {
            out.push((format!("adam.m.{name}"), m.clone()));
            out.push((format!("adam.v.{name}"), v.clone()));
        }
        out
    }

    pub fn load_state(&mut self, entries: &[(String, Tensor)]) {
        self.moments.clear();
        self.step = 0;
        for (name, tensor) in entries {
            if name == "adam.step" {
                self.step = tensor.item() as u64;
            } else if let Some(param) = name.strip_prefix("adam.m.") {
                self.moments
                    .entry(param.to_string())
                    .or_insert_with(|| (Tensor::zeros(tensor.shape()), Tensor::zeros(tensor.shape())))
                    .0 = tensor.clone();
            } else if let Some(param) = name.strip_prefix("adam.v.") {
                self.moments
                    .entry(param.to_string())
                    .or_insert_with(|| (Tensor::zeros(tensor.shape()), Tensor::zeros(tensor.shape())))
                    .1 = tensor.clone();
            }
        }
    }
}

/// One training input: a tensor (image or vector) and its class label.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub input: Tensor,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: u8,
    pub lr: f64,
    pub total: f64,
    pub cls: f64,
    pub kl: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EvalSnapshot {
    pub epoch: usize,
    pub rank1: f64,
    pub map: f64,
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    pub eval_snapshots: Vec<EvalSnapshot>,
}

impl TrainLog {
    /// Equality of everything except wall-clock fields.
    pub fn same_trajectory(&self, other: &TrainLog) -> bool {
        self.records.len() == other.records.len()
            && self
                .records
                .iter()
                .zip(&other.records)
                .all(|(a, b)| {
                    a.epoch == b.epoch
                        && a.stage == b.stage
                        && a.lr == b.lr
                        && a.total == b.total
                        && a.cls == b.cls
                        && a.kl == b.kl
                })
            && self.eval_snapshots == other.eval_snapshots
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,total,cls,kl,wall_ms\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{:.10e},{:.12e},{:.12e},{:.12e},{}\n",
                r.epoch, r.lr, r.total, r.cls, r.kl, r.wall_ms
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("log serializes")
    }
}

/// Owns the optimizer and drives epochs over a model.
pub struct Trainer<'a> {
    pub model: &'a mut EmbedModel,
    pub config: TrainConfig,
    pub adam: Adam,
    pub log: TrainLog,
    epoch: usize,
    /// Soft-label matrix used by the most recent stage-2 epoch.
    pub last_soft_matrix: Option<Vec<Vec<f64>>>,
}

impl<'a> Trainer<'a> {
    pub fn new(model: &'a mut EmbedModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if config.loss_mode == LossMode::CrossEntropy && model.classifier.is_none() {
            return Err(TrainError::InvalidConfig {
                detail: "cross-entropy mode requires a model with a classifier head".into(),
            });
        }
        Ok(Trainer {
            model,
            config,
            adam: Adam::new(),
            log: TrainLog::default(),
            epoch: 0,
            last_soft_matrix: None,
        })
    }

    pub fn current_epoch(&self) -> usize {
        self.epoch
    }

    pub fn record_eval(&mut self, rank1: f64, map: f64) {
        self.log.eval_snapshots.push(EvalSnapshot {
            epoch: self.epoch,
            rank1,
            map,
        });
    }

    pub fn train_stage1(&mut self, data: &[TrainSample]) -> Result<()> {
        for _ in 0..self.config.stage1_epochs {
            self.run_epoch(data, 1)?;
        }
        Ok(())
    }

    pub fn train_stage2(&mut self, data: &[TrainSample]) -> Result<()> {
        for _ in 0..self.config.stage2_epochs {
            self.run_epoch(data, 2)?;
        }
        Ok(())
    }

    /// Runs one epoch. Stage 2 refreshes the soft-label matrix from the
    /// current bank before touching any batch.
    pub fn run_epoch(&mut self, data: &[TrainSample], stage: u8) -> Result<()> {
        if data.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let started = Instant::now();
        let target_kind = if stage == 1 {
            self.config.stage1_targets
        } else {
            self.config.stage2_targets
        };
        let soft_matrix = if target_kind == TargetKind::Soft {
            let matrix = self.model.bank.soft_labels(self.config.loss.tau)?;
            self.last_soft_matrix = Some(matrix.clone());
            Some(matrix)
        } else {
            None
        };

        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut shuffle_rng = Rng::new(seed_chain(&[self.config.seed, 0x5F0F, self.epoch as u64]));
        shuffle_rng.shuffle(&mut order);

        let lr = lr_schedule(self.epoch, &self.config);
        let mut sums = (0.0, 0.0, 0.0);
        let mut batches = 0usize;
        for (step, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let (total, cls, kl) = self.run_batch(data, chunk, step, lr, target_kind, soft_matrix.as_deref())?;
            sums.0 += total;
            sums.1 += cls;
            sums.2 += kl;
            batches += 1;
        }
        let n = batches as f64;
        self.log.records.push(EpochRecord {
            epoch: self.epoch,
            stage,
            lr,
            total: sums.0 / n,
            cls: sums.1 / n,
            kl: sums.2 / n,
            wall_ms: started.elapsed().as_millis() as u64,
        });
        self.epoch += 1;
        Ok(())
    }

    fn run_batch(
        &mut self,
        data: &[TrainSample],
        indices: &[usize],
        step: usize,
        lr: f64,
        target_kind: TargetKind,
        soft_matrix: Option<&[Vec<f64>]>,
    ) -> Result<(f64, f64, f64)> {
        let mut tape = Tape::new();
        let nodes = self.model.insert(&mut tape);
        let labels: Vec<usize> = indices.iter().map(|&i| data[i].label).collect();
        let classes = self.model.bank.classes();

        let mode = match target_kind {
            TargetKind::OneHot => TargetMode::OneHot,
            TargetKind::Smoothed => TargetMode::Smoothed(self.config.loss.smoothing_epsilon),
            TargetKind::Soft => TargetMode::Soft(soft_matrix.expect("soft matrix prepared")),
        };
        let targets = make_targets(&labels, &mode, classes)?;

        let mut samples = Vec::with_capacity(indices.len());
        for (j, &i) in indices.iter().enumerate() {
            let seed = seed_chain(&[
                self.config.seed,
                0xD0,
                self.epoch as u64,
                step as u64,
                j as u64,
            ]);
            samples.push(self.model.forward_sample(&mut tape, &nodes, &data[i].input, Phase::Train, seed)?);
        }

        let parts: LossParts = match self.config.loss_mode {
            LossMode::Distribution => {
                let posteriors: Vec<_> = samples.iter().map(|s| s.posterior()).collect();
                distribution_loss_graph(
                    &mut tape,
                    &posteriors,
                    &targets,
                    &labels,
                    &nodes.bank,
                    &self.config.loss,
                )?
            }
            LossMode::Gm => {
                let features: Vec<_> = samples.iter().map(|s| s.mean).collect();
                gm_loss_graph(
                    &mut tape,
                    &features,
                    &targets,
                    &labels,
                    &nodes.bank,
                    self.config.loss.lambda,
                )?
            }
            LossMode::CrossEntropy => {
                let mut rows = Vec::with_capacity(samples.len());
                for s in &samples {
                    rows.push(self.model.classifier_logits(&mut tape, &nodes, s.mean)?);
                }
                let cls = cls_loss_graph(&mut tape, &rows, &targets)?;
                let zero = tape.constant(Tensor::scalar(0.0));
                LossParts {
                    total: cls,
                    cls,
                    kl: zero,
                }
            }
        };

        let total_value = tape.value(parts.total).item();
        if !total_value.is_finite() {
            let tensor = tape
                .first_non_finite()
                .unwrap_or_else(|| "loss output".to_string());
            return Err(TrainError::NonFinite { tensor });
        }
        let cls_value = tape.value(parts.cls).item();
        let kl_value = tape.value(parts.kl).item();

        tape.backward(parts.total)?;
        let leaf_ids: std::collections::HashMap<String, crate::tensor::TensorId> =
            tape.named_leaves().into_iter().collect();
        self.adam.begin_step();
        for (name, param) in self.model.named_tensors_mut() {
            let id = leaf_ids
                .get(&name)
                .copied()
                .expect("all model parameters are tape leaves");
            let grad = tape.grad_or_zeros(id);
            self.adam.update(&name, param, &grad, lr)?;
        }
        Ok((total_value, cls_value, kl_value))
    }
}
