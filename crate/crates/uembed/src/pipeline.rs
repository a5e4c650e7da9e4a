//! End-to-end runs: a dataset through two-stage training and retrieval
//! evaluation, plus corrupted-query evaluation sweeps.

use crate::corrupt::{self, CorruptionKind};
use crate::data::{Dataset, Split};
use crate::eval::{evaluate, DistanceMode, EvalError, EvalReport, RetrievalSet};
use crate::model::{Checkpoint, EmbedModel, ModelError};
use crate::rng::seed_chain;
use crate::tensor::Tensor;
use crate::train::{TrainConfig, TrainError, TrainLog, Trainer};
use std::fmt;

#[derive(Debug)]
pub enum PipelineError {
    Train(TrainError),
    Model(ModelError),
    Eval(EvalError),
    Corrupt(corrupt::CorruptError),
    Data(crate::data::DataError),
    Invalid { detail: String },
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PipelineError::Train(e) => write!(f, "train: {e}"),
            PipelineError::Model(e) => write!(f, "model: {e}"),
            PipelineError::Eval(e) => write!(f, "eval: {e}"),
            PipelineError::Corrupt(e) => write!(f, "corrupt: {e}"),
            PipelineError::Data(e) => write!(f, "data: {e}"),
            PipelineError::Invalid { detail } => write!(f, "pipeline: {detail}"),
        }
    }
}

impl std::error::Error for PipelineError {}

impl From<TrainError> for PipelineError {
    fn from(e: TrainError) -> Self {
        PipelineError::Train(e)
    }
}
impl From<ModelError> for PipelineError {
    fn from(e: ModelError) -> Self {
        PipelineError::Model(e)
    }
}
impl From<EvalError> for PipelineError {
    fn from(e: EvalError) -> Self {
        PipelineError::Eval(e)
    }
}
impl From<corrupt::CorruptError> for PipelineError {
    fn from(e: corrupt::CorruptError) -> Self {
        PipelineError::Corrupt(e)
    }
}
impl From<crate::data::DataError> for PipelineError {
    fn from(e: crate::data::DataError) -> Self {
        PipelineError::Data(e)
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// Embeds one split of a dataset into a retrieval set carrying posteriors.
pub fn embed_split(model: &EmbedModel, dataset: &Dataset, split: Split) -> Result<RetrievalSet> {
    let side = dataset.retrieval_side(split);
    if side.is_empty() {
        return Err(PipelineError::Invalid {
            detail: format!("dataset has no {split:?} entries"),
        });
    }
    let inputs: Vec<Tensor> = side.iter().map(|(i, _, _)| dataset.tensor(*i).clone()).collect();
    let ids: Vec<i64> = side.iter().map(|(_, id, _)| *id).collect();
    let cams: Vec<u32> = side.iter().map(|(_, _, cam)| *cam).collect();
    let distractor: Vec<bool> = side
        .iter()
        .map(|(i, _, _)| dataset.index.entries[*i].distractor)
        .collect();
    embed_images(model, &inputs, ids, cams)?
        .with_distractors(distractor)
        .map_err(PipelineError::Eval)
}

/// Runs eval-mode inference and packages the posteriors.
pub fn embed_images(
    model: &EmbedModel,
    inputs: &[Tensor],
    ids: Vec<i64>,
    cams: Vec<u32>,
) -> Result<RetrievalSet> {
    let outputs = model.infer_batch(inputs, false)?;
    let posteriors = outputs.into_iter().map(|o| o.posterior).collect();
    RetrievalSet::from_posteriors(posteriors, ids, cams).map_err(PipelineError::Eval)
}

/// Evaluates retrieval on a dataset's query/gallery splits. A corruption,
/// when given, degrades the query images only (per-image seeds derive from
/// the base seed by XOR with the image index); the gallery stays clean.
pub fn evaluate_model(
    model: &EmbedModel,
    dataset: &Dataset,
    distance: DistanceMode,
    corruption: Option<(&CorruptionKind, u64)>,
) -> Result<EvalReport> {
    let gallery = embed_split(model, dataset, Split::Gallery)?;
    let side = dataset.retrieval_side(Split::Query);
    if side.is_empty() {
        return Err(PipelineError::Invalid {
            detail: "dataset has no query entries".into(),
        });
    }
    let mut inputs: Vec<Tensor> = side.iter().map(|(i, _, _)| dataset.tensor(*i).clone()).collect();
    if let Some((kind, seed)) = corruption {
        let fill = corrupt::channel_means(&inputs)?;
        for (index, image) in inputs.iter_mut().enumerate() {
            *image = corrupt::apply_image(image, kind, &fill, seed ^ index as u64)?;
        }
    }
    let ids: Vec<i64> = side.iter().map(|(_, id, _)| *id).collect();
    let cams: Vec<u32> = side.iter().map(|(_, _, cam)| *cam).collect();
    let queries = embed_images(model, &inputs, ids, cams)?;
    evaluate(&queries, &gallery, distance).map_err(PipelineError::Eval)
}

/// A full training run's outputs.
pub struct RunOutcome {
    pub log: TrainLog,
    pub report: EvalReport,
    pub adam: crate::train::Adam,
    pub epochs_run: usize,
}

/// Trains a model in place (stage one, then stage two when configured),
/// evaluating on the held-out query/gallery split after each stage. An
/// optional label-noise fraction corrupts the training labels up front.
pub fn train_and_evaluate(
    model: &mut EmbedModel,
    dataset: &Dataset,
    config: &TrainConfig,
    distance: DistanceMode,
    train_label_noise: Option<f64>,
) -> Result<RunOutcome> {
    let mut samples = dataset.train_samples();
    if samples.is_empty() {
        return Err(PipelineError::Invalid {
            detail: "dataset has no training samples".into(),
        });
    }
    if let Some(fraction) = train_label_noise {
        let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
        let noisy = corrupt::corrupt_labels(
            &labels,
            fraction,
            dataset.index.classes,
            seed_chain(&[config.seed, 0x4015E]),
        )?;
        for (sample, label) in samples.iter_mut().zip(noisy) {
            sample.label = label;
        }
    }

    let run_stage2 = config.stage2_epochs > 0;
    let mut trainer = Trainer::new(model, config.clone())?;
    trainer.train_stage1(&samples)?;
    let stage1_report = {
        let report = evaluate_model(trainer.model, dataset, distance, None)?;
        trainer.record_eval(report.rank(1), report.map);
        report
    };
    let final_report = if run_stage2 {
        trainer.train_stage2(&samples)?;
        let report = evaluate_model(trainer.model, dataset, distance, None)?;
        trainer.record_eval(report.rank(1), report.map);
        report
    } else {
        stage1_report
    };
    let epochs_run = trainer.current_epoch();
    let adam = std::mem::take(&mut trainer.adam);
    Ok(RunOutcome {
        log: trainer.log,
        report: final_report,
        adam,
        epochs_run,
    })
}

/// Packs the model, optimizer state, epoch counter, and the model config
/// into one checkpoint container.
pub fn run_checkpoint(model: &EmbedModel, adam: &crate::train::Adam, epoch: usize) -> Checkpoint {
    let mut checkpoint = Checkpoint::default();
    for (name, tensor) in model.named_tensors() {
        checkpoint.tensors.push((name, tensor.clone()));
    }
    checkpoint.tensors.extend(adam.state_tensors());
    checkpoint
        .tensors
        .push(("meta.epoch".to_string(), Tensor::scalar(epoch as f64)));
    let config_json = serde_json::to_vec(&model.config).expect("model config serializes");
    checkpoint.blobs.push(("meta.model_config".to_string(), config_json));
    checkpoint
}

/// Rebuilds a model from a checkpoint written by [`run_checkpoint`].
pub fn restore_model(checkpoint: &Checkpoint) -> Result<EmbedModel> {
    let blob = checkpoint
        .blob("meta.model_config")
        .ok_or_else(|| PipelineError::Invalid {
            detail: "checkpoint has no model config".into(),
        })?;
    let config: crate::model::ModelConfig =
        serde_json::from_slice(blob).map_err(|e| PipelineError::Invalid {
            detail: format!("bad model config in checkpoint: {e}"),
        })?;
    let mut model = EmbedModel::init(config, 0)?;
    model.load_named_tensors(&checkpoint.tensors)?;
    Ok(model)
}
