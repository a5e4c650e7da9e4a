//! Full embedding model: backbone -> (mean branch, variance head) -> one
//! diagonal-Gaussian posterior per input, next to the trainable prior bank.
//!
//! Two backbones are provided. The tiny conv stack maps small RGB images
//! (H x W x 3) through three conv/norm/relu blocks with average-pool
//! downsampling (the final block pools at stride 1), ending at C channels.
//! The identity backbone passes d-vectors straight through as 1 x 1 x d maps
//! so feature-level behavior can be tested without a backbone.

use crate::gaussian::DiagGaussian;
use crate::loss::{BankNodes, PosteriorNodes, PriorBank};
use crate::rng::{seed_chain, Rng};
use crate::sigma::{
    affine_norm_graph, bm_forward_graph, mlp_forward_graph, sigma_forward_graph, MlpNodes,
    MlpParams, SigmaNetConfig, SigmaNetNodes, SigmaNetParams,
};
use crate::tensor::{write_tensor, Phase, PoolKind, Tape, Tensor, TensorError, TensorId};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

pub const GCKP_MAGIC: &[u8; 4] = b"GCKP";
pub const GCKP_VERSION: u32 = 1;

#[derive(Debug)]
pub enum ModelError {
    Tensor(TensorError),
    Geometry { detail: String },
    Checkpoint { detail: String },
    ShapeMismatch { tensor: String, expected: Vec<usize>, found: Vec<usize> },
    MissingTensor { tensor: String },
    Io(std::io::Error),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::Tensor(e) => write!(f, "{e}"),
            ModelError::Geometry { detail } => write!(f, "model geometry: {detail}"),
            ModelError::Checkpoint { detail } => write!(f, "checkpoint: {detail}"),
            ModelError::ShapeMismatch { tensor, expected, found } => write!(
                f,
                "checkpoint tensor {tensor}: shape {found:?} does not match model {expected:?}"
            ),
            ModelError::MissingTensor { tensor } => {
                write!(f, "checkpoint is missing tensor {tensor}")
            }
            ModelError::Io(e) => write!(f, "io: {e}"),
        }
    }
}

impl std::error::Error for ModelError {}

impl From<TensorError> for ModelError {
    fn from(e: TensorError) -> Self {
        ModelError::Tensor(e)
    }
}

impl From<std::io::Error> for ModelError {
    fn from(e: std::io::Error) -> Self {
        ModelError::Io(e)
    }
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneKind {
    TinyConv,
    IdentityVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    Sigma,
    Bilinear,
    Mlp,
    None,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneKind,
    /// Embedding dimension C; the tiny conv backbone ends at C channels and
    /// the identity backbone expects C-dimensional input vectors.
    pub channels: usize,
    /// Input image extents for the tiny conv backbone.
    pub input_hw: (usize, usize),
    pub head: HeadKind,
    pub sigma: SigmaNetConfig,
    pub classes: usize,
    /// Allocate a linear classifier head (used by the cross-entropy baseline).
    pub with_classifier: bool,
}

impl ModelConfig {
    pub fn tiny_conv(channels: usize, classes: usize) -> Self {
        ModelConfig {
            backbone: BackboneKind::TinyConv,
            channels,
            input_hw: (64, 32),
            head: HeadKind::Sigma,
            sigma: SigmaNetConfig::new(channels),
            classes,
            with_classifier: false,
        }
    }

    pub fn identity_vector(dim: usize, classes: usize) -> Self {
        ModelConfig {
            backbone: BackboneKind::IdentityVector,
            channels: dim,
            input_hw: (1, 1),
            head: HeadKind::Sigma,
            sigma: SigmaNetConfig::new(dim),
            classes,
            with_classifier: false,
        }
    }
}

/// Tiny conv backbone parameters: three conv/norm blocks, 3 -> 16 -> 32 -> C.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyConvParams {
    pub conv1_w: Tensor, // [3,3,3,16]
    pub conv1_b: Tensor,
    pub norm1_gamma: Tensor,
    pub norm1_beta: Tensor,
    pub conv2_w: Tensor, // [3,3,16,32]
    pub conv2_b: Tensor,
    pub norm2_gamma: Tensor,
    pub norm2_beta: Tensor,
    pub conv3_w: Tensor, // [3,3,32,C]
    pub conv3_b: Tensor,
    pub norm3_gamma: Tensor,
    pub norm3_beta: Tensor,
}

const PLAN: [usize; 2] = [16, 32]; // third stage widens to the configured C

impl TinyConvParams {
    fn he(shape: &[usize], rng: &mut Rng) -> Tensor {
        let fan_in: usize = shape[..3].iter().product();
        Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), rng)
    }

    pub fn init(channels: usize, rng: &mut Rng) -> Self {
        TinyConvParams {
            conv1_w: Self::he(&[3, 3, 3, PLAN[0]], rng),
            conv1_b: Tensor::zeros(&[PLAN[0]]),
            norm1_gamma: Tensor::full(&[PLAN[0]], 1.0),
            norm1_beta: Tensor::zeros(&[PLAN[0]]),
            conv2_w: Self::he(&[3, 3, PLAN[0], PLAN[1]], rng),
            conv2_b: Tensor::zeros(&[PLAN[1]]),
            norm2_gamma: Tensor::full(&[PLAN[1]], 1.0),
            norm2_beta: Tensor::zeros(&[PLAN[1]]),
            conv3_w: Self::he(&[3, 3, PLAN[1], channels], rng),
            conv3_b: Tensor::zeros(&[channels]),
            norm3_gamma: Tensor::full(&[channels], 1.0),
            norm3_beta: Tensor::zeros(&[channels]),
        }
    }

    pub fn zeros(channels: usize) -> Self {
        TinyConvParams {
            conv1_w: Tensor::zeros(&[3, 3, 3, PLAN[0]]),
            conv1_b: Tensor::zeros(&[PLAN[0]]),
            norm1_gamma: Tensor::zeros(&[PLAN[0]]),
            norm1_beta: Tensor::zeros(&[PLAN[0]]),
            conv2_w: Tensor::zeros(&[3, 3, PLAN[0], PLAN[1]]),
            conv2_b: Tensor::zeros(&[PLAN[1]]),
            norm2_gamma: Tensor::zeros(&[PLAN[1]]),
            norm2_beta: Tensor::zeros(&[PLAN[1]]),
            conv3_w: Tensor::zeros(&[3, 3, PLAN[1], channels]),
            conv3_b: Tensor::zeros(&[channels]),
            norm3_gamma: Tensor::zeros(&[channels]),
            norm3_beta: Tensor::zeros(&[channels]),
        }
    }

    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("conv1_w", &self.conv1_w),
            ("conv1_b", &self.conv1_b),
            ("norm1_gamma", &self.norm1_gamma),
            ("norm1_beta", &self.norm1_beta),
            ("conv2_w", &self.conv2_w),
            ("conv2_b", &self.conv2_b),
            ("norm2_gamma", &self.norm2_gamma),
            ("norm2_beta", &self.norm2_beta),
            ("conv3_w", &self.conv3_w),
            ("conv3_b", &self.conv3_b),
            ("norm3_gamma", &self.norm3_gamma),
            ("norm3_beta", &self.norm3_beta),
        ]
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("conv1_w", &mut self.conv1_w),
            ("conv1_b", &mut self.conv1_b),
            ("norm1_gamma", &mut self.norm1_gamma),
            ("norm1_beta", &mut self.norm1_beta),
            ("conv2_w", &mut self.conv2_w),
            ("conv2_b", &mut self.conv2_b),
            ("norm2_gamma", &mut self.norm2_gamma),
            ("norm2_beta", &mut self.norm2_beta),
            ("conv3_w", &mut self.conv3_w),
            ("conv3_b", &mut self.conv3_b),
            ("norm3_gamma", &mut self.norm3_gamma),
            ("norm3_beta", &mut self.norm3_beta),
        ]
    }

    fn insert(&self, tape: &mut Tape) -> TinyConvNodes {
        let mut leaf = |name: &str, t: &Tensor| tape.named_leaf(&format!("backbone.{name}"), t.clone(), true);
        TinyConvNodes {
            conv1_w: leaf("conv1_w", &self.conv1_w),
            conv1_b: leaf("conv1_b", &self.conv1_b),
            norm1_gamma: leaf("norm1_gamma", &self.norm1_gamma),
            norm1_beta: leaf("norm1_beta", &self.norm1_beta),
            conv2_w: leaf("conv2_w", &self.conv2_w),
            conv2_b: leaf("conv2_b", &self.conv2_b),
            norm2_gamma: leaf("norm2_gamma", &self.norm2_gamma),
            norm2_beta: leaf("norm2_beta", &self.norm2_beta),
            conv3_w: leaf("conv3_w", &self.conv3_w),
            conv3_b: leaf("conv3_b", &self.conv3_b),
            norm3_gamma: leaf("norm3_gamma", &self.norm3_gamma),
            norm3_beta: leaf("norm3_beta", &self.norm3_beta),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TinyConvNodes {
    conv1_w: TensorId,
    conv1_b: TensorId,
    norm1_gamma: TensorId,
    norm1_beta: TensorId,
    conv2_w: TensorId,
    conv2_b: TensorId,
    norm2_gamma: TensorId,
    norm2_beta: TensorId,
    conv3_w: TensorId,
    conv3_b: TensorId,
    norm3_gamma: TensorId,
    norm3_beta: TensorId,
}

/// Linear classifier head for the cross-entropy baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub w: Tensor, // [C, K]
    pub b: Tensor, // [K]
}

impl ClassifierParams {
    pub fn init(channels: usize, classes: usize, rng: &mut Rng) -> Self {
        ClassifierParams {
            w: Tensor::randn(&[channels, classes], (1.0 / channels as f64).sqrt(), rng),
            b: Tensor::zeros(&[classes]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HeadParams {
    Sigma(SigmaNetParams),
    Bilinear(SigmaNetParams),
    Mlp(MlpParams),
    None,
}

#[derive(Debug, Clone, Copy)]
enum HeadNodes {
    Sigma(SigmaNetNodes),
    Bilinear(SigmaNetNodes),
    Mlp(MlpNodes),
    None,
}

/// The complete trainable model.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedModel {
    pub config: ModelConfig,
    pub backbone: Option<TinyConvParams>,
    pub head: HeadParams,
    pub bank: PriorBank,
    pub classifier: Option<ClassifierParams>,
}

/// Tape handles for one inserted model.
pub struct ModelNodes {
    backbone: Option<TinyConvNodes>,
    head: HeadNodes,
    pub bank: BankNodes,
    pub classifier: Option<(TensorId, TensorId)>,
}

/// Posterior produced for one input.
#[derive(Debug, Clone)]
pub struct ModelOutput {
    pub posterior: DiagGaussian,
    /// Backbone feature map, kept only on request.
    pub feature: Option<Tensor>,
}

impl EmbedModel {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.sigma.validate()?;
        if config.channels == 0 || config.classes == 0 {
            return Err(ModelError::Geometry {
                detail: "channels and classes must be positive".into(),
            });
        }
        if config.backbone == BackboneKind::TinyConv {
            Self::validate_geometry(&config)?;
        }
        let mut rng = Rng::new(seed_chain(&[seed, 0xBAC0]));
        let backbone = match config.backbone {
            BackboneKind::TinyConv => Some(TinyConvParams::init(config.channels, &mut rng)),
            BackboneKind::IdentityVector => None,
        };
        let mut head_rng = Rng::new(seed_chain(&[seed, 0x516A]));
        let head = match config.head {
            HeadKind::Sigma => HeadParams::Sigma(SigmaNetParams::init(&config.sigma, &mut head_rng)),
            HeadKind::Bilinear => HeadParams::Bilinear(SigmaNetParams::init(&config.sigma, &mut head_rng)),
            HeadKind::Mlp => HeadParams::Mlp(MlpParams::init(&config.sigma, &mut head_rng)),
            HeadKind::None => HeadParams::None,
        };
        let bank = PriorBank::init(config.classes, config.channels, seed_chain(&[seed, 0xBA4C]));
        let classifier = if config.with_classifier {
            let mut cls_rng = Rng::new(seed_chain(&[seed, 0xC15]));
            Some(ClassifierParams::init(config.channels, config.classes, &mut cls_rng))
        } else {
            None
        };
        Ok(EmbedModel {
            config,
            backbone,
            head,
            bank,
            classifier,
        })
    }

    fn validate_geometry(config: &ModelConfig) -> Result<()> {
        let (h, w) = config.input_hw;
        // two stride-2 pools then one stride-1 pool, all 2x2
        let stage = |extent: usize, stride: usize| -> Option<usize> {
            if extent < 2 {
                return None;
            }
            Some((extent - 2) / stride + 1)
        };
        let mut cur = (h, w);
        for stride in [2usize, 2, 1] {
            cur = match (stage(cur.0, stride), stage(cur.1, stride)) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(ModelError::Geometry {
                        detail: format!("input {h}x{w} too small for the conv stack"),
                    })
                }
            };
        }
        Ok(())
    }

    /// Every trainable tensor under its checkpoint name.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        if let Some(backbone) = &self.backbone {
            for (name, t) in backbone.named_tensors() {
                out.push((format!("backbone.{name}"), t));
            }
        }
        match &self.head {
            HeadParams::Sigma(p) | HeadParams::Bilinear(p) => {
                for (name, t) in p.named_tensors() {
                    out.push((format!("sigma.{name}"), t));
                }
            }
            HeadParams::Mlp(p) => {
                for (name, t) in p.named_tensors() {
                    out.push((format!("mlp.{name}"), t));
                }
            }
            HeadParams::None => {}
        }
        out.push(("prior.means".to_string(), self.bank.means()));
        out.push(("prior.rho".to_string(), self.bank.rho()));
        if let Some(cls) = &self.classifier {
            out.push(("cls.w".to_string(), &cls.w));
            out.push(("cls.b".to_string(), &cls.b));
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        if let Some(backbone) = &mut self.backbone {
            for (name, t) in backbone.named_tensors_mut() {
                out.push((format!("backbone.{name}"), t));
            }
        }
        match &mut self.head {
            HeadParams::Sigma(p) | HeadParams::Bilinear(p) => {
                for (name, t) in p.named_tensors_mut() {
                    out.push((format!("sigma.{name}"), t));
                }
            }
            HeadParams::Mlp(p) => {
                for (name, t) in p.named_tensors_mut() {
                    out.push((format!("mlp.{name}"), t));
                }
            }
            HeadParams::None => {}
        }
        let (means, rho) = self.bank.tensors_mut();
        out.push(("prior.means".to_string(), means));
        out.push(("prior.rho".to_string(), rho));
        if let Some(cls) = &mut self.classifier {
            out.push(("cls.w".to_string(), &mut cls.w));
            out.push(("cls.b".to_string(), &mut cls.b));
        }
        out
    }

    /// Copies checkpoint tensors into the model, shape-checked per tensor.
    pub fn load_named_tensors(&mut self, entries: &[(String, Tensor)]) -> Result<()> {
        for (name, target) in self.named_tensors_mut() {
            let source = entries
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| ModelError::MissingTensor { tensor: name.clone() })?;
            if source.shape() != target.shape() {
                return Err(ModelError::ShapeMismatch {
                    tensor: name.clone(),
                    expected: target.shape().to_vec(),
                    found: source.shape().to_vec(),
                });
            }
            target.data_mut().copy_from_slice(source.data());
        }
        Ok(())
    }

    /// Inserts all parameters as trainable leaves on a fresh step tape.
    pub fn insert(&self, tape: &mut Tape) -> ModelNodes {
        let backbone = self.backbone.as_ref().map(|b| b.insert(tape));
        let head = match &self.head {
            HeadParams::Sigma(p) => HeadNodes::Sigma(p.insert(tape, "sigma")),
            HeadParams::Bilinear(p) => HeadNodes::Bilinear(p.insert(tape, "sigma")),
            HeadParams::Mlp(p) => HeadNodes::Mlp(p.insert(tape, "mlp")),
            HeadParams::None => HeadNodes::None,
        };
        let bank = self.bank.insert(tape);
        let classifier = self.classifier.as_ref().map(|c| {
            (
                tape.named_leaf("cls.w", c.w.clone(), true),
                tape.named_leaf("cls.b", c.b.clone(), true),
            )
        });
        ModelNodes {
            backbone,
            head,
            bank,
            classifier,
        }
    }

    fn backbone_graph(&self, tape: &mut Tape, nodes: &ModelNodes, input: &Tensor) -> Result<TensorId> {
        match self.config.backbone {
            BackboneKind::IdentityVector => {
                let d = self.config.channels;
                if input.numel() != d {
                    return Err(ModelError::Geometry {
                        detail: format!("identity backbone expects {d}-vectors, got {:?}", input.shape()),
                    });
                }
                let leaf = tape.constant(input.clone());
                Ok(tape.reshape(leaf, vec![1, 1, d])?)
            }
            BackboneKind::TinyConv => {
                let (h, w) = self.config.input_hw;
                if input.shape() != [h, w, 3] {
                    return Err(ModelError::Geometry {
                        detail: format!("expected image [{h}, {w}, 3], got {:?}", input.shape()),
                    });
                }
                let b = nodes.backbone.as_ref().expect("tiny conv nodes");
                let x = tape.constant(input.clone());
                let x = conv_block(tape, x, b.conv1_w, b.conv1_b, b.norm1_gamma, b.norm1_beta, 2)?;
                let x = conv_block(tape, x, b.conv2_w, b.conv2_b, b.norm2_gamma, b.norm2_beta, 2)?;
                let x = conv_block(tape, x, b.conv3_w, b.conv3_b, b.norm3_gamma, b.norm3_beta, 1)?;
                Ok(x)
            }
        }
    }

    /// Forward pass for one input: feature map, posterior mean and variance
    /// nodes. `seed` drives dropout inside the variance head.
    pub fn forward_sample(
        &self,
        tape: &mut Tape,
        nodes: &ModelNodes,
        input: &Tensor,
        phase: Phase,
        seed: u64,
    ) -> Result<SampleNodes> {
        let feature = self.backbone_graph(tape, nodes, input)?;
        let mean = tape.spatial_mean(feature)?;
        let variance = match &nodes.head {
            HeadNodes::Sigma(h) => {
                sigma_forward_graph(tape, feature, h, &self.config.sigma, phase, seed)?
            }
            HeadNodes::Bilinear(h) => bm_forward_graph(tape, feature, h, &self.config.sigma)?,
            HeadNodes::Mlp(h) => mlp_forward_graph(tape, feature, h, &self.config.sigma)?,
            HeadNodes::None => tape.constant(Tensor::full(&[self.config.channels], 1.0)),
        };
        Ok(SampleNodes {
            feature,
            mean,
            variance,
        })
    }

    /// Classifier logits for the cross-entropy baseline.
    pub fn classifier_logits(
        &self,
        tape: &mut Tape,
        nodes: &ModelNodes,
        mean: TensorId,
    ) -> Result<TensorId> {
        let (w, b) = nodes.classifier.ok_or_else(|| ModelError::Geometry {
            detail: "model has no classifier head".into(),
        })?;
        Ok(tape.linear(mean, w, b)?)
    }

    /// Eval-phase inference. Parameters are inserted once per internal chunk;
    /// the result is a pure function of (inputs, parameters).
    pub fn infer_batch(&self, inputs: &[Tensor], keep_features: bool) -> Result<Vec<ModelOutput>> {
        let mut outputs = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(16) {
            let mut tape = Tape::new();
            let nodes = self.insert(&mut tape);
            for input in chunk {
                let sample = self.forward_sample(&mut tape, &nodes, input, Phase::Eval, 0)?;
                let mean = tape.value(sample.mean).data().to_vec();
                let variance = tape.value(sample.variance).data().to_vec();
                let posterior = DiagGaussian::new(mean, variance).map_err(|e| ModelError::Geometry {
                    detail: e.to_string(),
                })?;
                outputs.push(ModelOutput {
                    posterior,
                    feature: keep_features.then(|| tape.value(sample.feature).clone()),
                });
            }
        }
        Ok(outputs)
    }
}

/// Tape ids produced by one sample's forward pass.
#[derive(Debug, Clone, Copy)]
pub struct SampleNodes {
    pub feature: TensorId,
    pub mean: TensorId,
    pub variance: TensorId,
}

impl SampleNodes {
    pub fn posterior(&self) -> PosteriorNodes {
        PosteriorNodes {
            mean: self.mean,
            variance: self.variance,
        }
    }
}

fn conv_block(
    tape: &mut Tape,
    x: TensorId,
    w: TensorId,
    b: TensorId,
    gamma: TensorId,
    beta: TensorId,
    pool_stride: usize,
) -> Result<TensorId> {
    let conv = tape.conv2d(x, w, b, (1, 1), (1, 1))?;
    let normed = affine_norm_graph(tape, conv, gamma, beta)?;
    let activated = tape.relu(normed)?;
    Ok(tape.pool(
        PoolKind::Avg,
        activated,
        (2, 2),
        (pool_stride, pool_stride),
        (0, 0),
    )?)
}

// ---- checkpoint container ----

/// Entries of a checkpoint file: named tensors plus named byte blobs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
    pub blobs: Vec<(String, Vec<u8>)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn blob(&self, name: &str) -> Option<&[u8]> {
        self.blobs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b.as_slice())
    }
}

fn crc32(bytes: &[u8]) -> u32 {
    // IEEE 802.3 polynomial, bit-reflected
    let mut table = [0u32; 256];
    for (i, entry) in table.iter_mut().enumerate() {
        let mut c = i as u32;
        for _ in 0..8 {
            c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
        }
        *entry = c;
    }
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc = table[((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8);
    }
    crc ^ 0xFFFF_FFFF
}

pub fn write_checkpoint(w: &mut impl Write, checkpoint: &Checkpoint) -> Result<()> {
    let mut body: Vec<u8> = Vec::new();
    body.extend_from_slice(GCKP_MAGIC);
    body.extend_from_slice(&GCKP_VERSION.to_le_bytes());
    let count = (checkpoint.tensors.len() + checkpoint.blobs.len()) as u32;
    body.extend_from_slice(&count.to_le_bytes());
    let write_name = |body: &mut Vec<u8>, name: &str| {
        body.extend_from_slice(&(name.len() as u32).to_le_bytes());
        body.extend_from_slice(name.as_bytes());
    };
    for (name, tensor) in &checkpoint.tensors {
        write_name(&mut body, name);
        write_tensor(&mut body, tensor)?;
    }
    for (name, blob) in &checkpoint.blobs {
        write_name(&mut body, name);
        crate::tensor::io_write_bytes(&mut body, blob)?;
    }
    let crc = crc32(&body);
    w.write_all(&body)?;
    w.write_all(&crc.to_le_bytes())?;
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 16 {
        return Err(ModelError::Checkpoint {
            detail: "file too short".into(),
        });
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let computed = crc32(body);
    if stored != computed {
        return Err(ModelError::Checkpoint {
            detail: format!("checksum mismatch: stored {stored:08x}, computed {computed:08x}"),
        });
    }
    if &body[0..4] != GCKP_MAGIC {
        return Err(ModelError::Checkpoint {
            detail: "bad magic".into(),
        });
    }
    let version = u32::from_le_bytes(body[4..8].try_into().unwrap());
    if version != GCKP_VERSION {
        return Err(ModelError::Checkpoint {
            detail: format!("unsupported version {version}"),
        });
    }
    let count = u32::from_le_bytes(body[8..12].try_into().unwrap()) as usize;
    let mut cursor = &body[12..];
    let mut checkpoint = Checkpoint::default();
    for _ in 0..count {
        if cursor.len() < 4 {
            return Err(ModelError::Checkpoint {
                detail: "truncated entry name".into(),
            });
        }
        let name_len = u32::from_le_bytes(cursor[0..4].try_into().unwrap()) as usize;
        cursor = &cursor[4..];
        if cursor.len() < name_len {
            return Err(ModelError::Checkpoint {
                detail: "truncated entry name".into(),
            });
        }
        let name = String::from_utf8(cursor[..name_len].to_vec()).map_err(|_| {
            ModelError::Checkpoint {
                detail: "entry name is not utf-8".into(),
            }
        })?;
        cursor = &cursor[name_len..];
        match crate::tensor::io_read_payload(&mut cursor).map_err(ModelError::Tensor)? {
            crate::tensor::PayloadValue::F64(t) => checkpoint.tensors.push((name, t)),
            crate::tensor::PayloadValue::Bytes(b) => checkpoint.blobs.push((name, b)),
        }
    }
    Ok(checkpoint)
}

pub fn save_checkpoint_file(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    write_checkpoint(&mut file, checkpoint)
}

pub fn load_checkpoint_file(path: &Path) -> Result<Checkpoint> {
    let mut file = std::fs::File::open(path)?;
    read_checkpoint(&mut file)
}
