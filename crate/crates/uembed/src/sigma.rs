//! Variance heads: the networks that turn a feature map F in R^{HxWxC} into
//! a strictly positive posterior variance vector in R^C.
//!
//! The full second-order head combines a first-order shortcut branch with two
//! reduced branches whose local min/max pooled maps are cross-multiplied in
//! an uncertainty fusion block. The ablation heads are a plain MLP
//! (first-order only) and a bilinear model that keeps the two branches but
//! multiplies them directly instead of running the fusion block.

use crate::rng::Rng;
use crate::tensor::{Phase, PoolKind, Tape, Tensor, TensorId};
use crate::tensor::TensorError;

/// Spatial standardization epsilon inside the affine-norm layer.
const NORM_EPS: f64 = 1e-5;

pub type Result<T> = std::result::Result<T, TensorError>;

/// Static geometry and rates of the variance heads.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SigmaNetConfig {
    /// Feature channels C; must be divisible by 4.
    pub channels: usize,
    /// Dropout rate inside the fusion block.
    pub dropout_rate: f64,
    /// Added to the softplus output so the variance never touches zero.
    pub output_floor: f64,
}

impl SigmaNetConfig {
    pub fn new(channels: usize) -> Self {
        SigmaNetConfig {
            channels,
            dropout_rate: 0.25,
            output_floor: 1e-6,
        }
    }

    /// Reduced width C/4 used by the branches and the fused map.
    pub fn reduced(&self) -> usize {
        self.channels / 4
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || !self.channels.is_multiple_of(4) {
            return Err(TensorError::InvalidConfig {
                detail: format!("channels {} must be a positive multiple of 4", self.channels),
            });
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(TensorError::InvalidConfig {
                detail: format!("dropout rate {} outside [0,1)", self.dropout_rate),
            });
        }
        if self.output_floor <= 0.0 {
            return Err(TensorError::InvalidConfig {
                detail: "output floor must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Trainable tensors of the second-order head. The bilinear ablation uses the
/// same set minus the fusion conv and norm.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaNetParams {
    pub shortcut_w: Tensor, // [C, C]
    pub shortcut_b: Tensor, // [C]
    pub branch1_w: Tensor,  // [C, C/4]
    pub branch1_b: Tensor,  // [C/4]
    pub branch2_w: Tensor,  // [C, C/4]
    pub branch2_b: Tensor,  // [C/4]
    pub fusion_w: Tensor,   // [C, C/4] after the four-way concat
    pub fusion_b: Tensor,   // [C/4]
    pub fusion_gamma: Tensor, // [C/4]
    pub fusion_beta: Tensor,  // [C/4]
    pub out_w: Tensor,      // [C/4, C]
    pub out_b: Tensor,      // [C]
}

fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

impl SigmaNetParams {
    pub fn init(config: &SigmaNetConfig, rng: &mut Rng) -> Self {
        let c = config.channels;
        let r = config.reduced();
        SigmaNetParams {
            shortcut_w: Tensor::randn(&[c, c], he_std(c), rng),
            shortcut_b: Tensor::zeros(&[c]),
            branch1_w: Tensor::randn(&[c, r], he_std(c), rng),
            branch1_b: Tensor::zeros(&[r]),
            branch2_w: Tensor::randn(&[c, r], he_std(c), rng),
            branch2_b: Tensor::zeros(&[r]),
            fusion_w: Tensor::randn(&[c, r], he_std(c), rng),
            fusion_b: Tensor::zeros(&[r]),
            fusion_gamma: Tensor::full(&[r], 1.0),
            fusion_beta: Tensor::zeros(&[r]),
            out_w: Tensor::randn(&[r, c], he_std(r), rng),
            out_b: Tensor::zeros(&[c]),
        }
    }

    pub fn zeros(config: &SigmaNetConfig) -> Self {
        let c = config.channels;
        let r = config.reduced();
        SigmaNetParams {
            shortcut_w: Tensor::zeros(&[c, c]),
            shortcut_b: Tensor::zeros(&[c]),
            branch1_w: Tensor::zeros(&[c, r]),
            branch1_b: Tensor::zeros(&[r]),
            branch2_w: Tensor::zeros(&[c, r]),
            branch2_b: Tensor::zeros(&[r]),
            fusion_w: Tensor::zeros(&[c, r]),
            fusion_b: Tensor::zeros(&[r]),
            fusion_gamma: Tensor::zeros(&[r]),
            fusion_beta: Tensor::zeros(&[r]),
            out_w: Tensor::zeros(&[r, c]),
            out_b: Tensor::zeros(&[c]),
        }
    }

    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("shortcut_w", &self.shortcut_w),
            ("shortcut_b", &self.shortcut_b),
            ("branch1_w", &self.branch1_w),
            ("branch1_b", &self.branch1_b),
            ("branch2_w", &self.branch2_w),
            ("branch2_b", &self.branch2_b),
            ("fusion_w", &self.fusion_w),
            ("fusion_b", &self.fusion_b),
            ("fusion_gamma", &self.fusion_gamma),
            ("fusion_beta", &self.fusion_beta),
            ("out_w", &self.out_w),
            ("out_b", &self.out_b),
        ]
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("shortcut_w", &mut self.shortcut_w),
            ("shortcut_b", &mut self.shortcut_b),
            ("branch1_w", &mut self.branch1_w),
            ("branch1_b", &mut self.branch1_b),
            ("branch2_w", &mut self.branch2_w),
            ("branch2_b", &mut self.branch2_b),
            ("fusion_w", &mut self.fusion_w),
            ("fusion_b", &mut self.fusion_b),
            ("fusion_gamma", &mut self.fusion_gamma),
            ("fusion_beta", &mut self.fusion_beta),
            ("out_w", &mut self.out_w),
            ("out_b", &mut self.out_b),
        ]
    }

    /// Inserts every tensor as a trainable leaf named `prefix.field`.
    pub fn insert(&self, tape: &mut Tape, prefix: &str) -> SigmaNetNodes {
        let mut leaf = |name: &str, t: &Tensor| tape.named_leaf(&format!("{prefix}.{name}"), t.clone(), true);
        SigmaNetNodes {
            shortcut_w: leaf("shortcut_w", &self.shortcut_w),
            shortcut_b: leaf("shortcut_b", &self.shortcut_b),
            branch1_w: leaf("branch1_w", &self.branch1_w),
            branch1_b: leaf("branch1_b", &self.branch1_b),
            branch2_w: leaf("branch2_w", &self.branch2_w),
            branch2_b: leaf("branch2_b", &self.branch2_b),
            fusion_w: leaf("fusion_w", &self.fusion_w),
            fusion_b: leaf("fusion_b", &self.fusion_b),
            fusion_gamma: leaf("fusion_gamma", &self.fusion_gamma),
            fusion_beta: leaf("fusion_beta", &self.fusion_beta),
            out_w: leaf("out_w", &self.out_w),
            out_b: leaf("out_b", &self.out_b),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SigmaNetNodes {
    pub shortcut_w: TensorId,
    pub shortcut_b: TensorId,
    pub branch1_w: TensorId,
    pub branch1_b: TensorId,
    pub branch2_w: TensorId,
    pub branch2_b: TensorId,
    pub fusion_w: TensorId,
    pub fusion_b: TensorId,
    pub fusion_gamma: TensorId,
    pub fusion_beta: TensorId,
    pub out_w: TensorId,
    pub out_b: TensorId,
}

/// First-order-only ablation head: softplus(linear(relu(linear(gap(F))))).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub hidden_w: Tensor, // [C, C/4]
    pub hidden_b: Tensor, // [C/4]
    pub out_w: Tensor,    // [C/4, C]
    pub out_b: Tensor,    // [C]
}

impl MlpParams {
    pub fn init(config: &SigmaNetConfig, rng: &mut Rng) -> Self {
        let c = config.channels;
        let r = config.reduced();
        MlpParams {
            hidden_w: Tensor::randn(&[c, r], he_std(c), rng),
            hidden_b: Tensor::zeros(&[r]),
            out_w: Tensor::randn(&[r, c], he_std(r), rng),
            out_b: Tensor::zeros(&[c]),
        }
    }

    pub fn zeros(config: &SigmaNetConfig) -> Self {
        let c = config.channels;
        let r = config.reduced();
        MlpParams {
            hidden_w: Tensor::zeros(&[c, r]),
            hidden_b: Tensor::zeros(&[r]),
            out_w: Tensor::zeros(&[r, c]),
            out_b: Tensor::zeros(&[c]),
        }
    }

    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("hidden_w", &self.hidden_w),
            ("hidden_b", &self.hidden_b),
            ("out_w", &self.out_w),
            ("out_b", &self.out_b),
        ]
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("hidden_w", &mut self.hidden_w),
            ("hidden_b", &mut self.hidden_b),
            ("out_w", &mut self.out_w),
            ("out_b", &mut self.out_b),
        ]
    }

    pub fn insert(&self, tape: &mut Tape, prefix: &str) -> MlpNodes {
        let mut leaf = |name: &str, t: &Tensor| tape.named_leaf(&format!("{prefix}.{name}"), t.clone(), true);
        MlpNodes {
            hidden_w: leaf("hidden_w", &self.hidden_w),
            hidden_b: leaf("hidden_b", &self.hidden_b),
            out_w: leaf("out_w", &self.out_w),
            out_b: leaf("out_b", &self.out_b),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MlpNodes {
    pub hidden_w: TensorId,
    pub hidden_b: TensorId,
    pub out_w: TensorId,
    pub out_b: TensorId,
}

/// Per-channel standardization over the spatial cells followed by a
/// learnable affine. Runs statistics-free: each forward standardizes
/// against the current map only.
pub fn affine_norm_graph(
    tape: &mut Tape,
    x: TensorId,
    gamma: TensorId,
    beta: TensorId,
) -> Result<TensorId> {
    let mean = tape.spatial_mean(x)?;
    let centered = tape.sub(x, mean)?;
    let sq = tape.mul(centered, centered)?;
    let var = tape.spatial_mean(sq)?;
    let var_eps = tape.add_scalar(var, NORM_EPS)?;
    let std = tape.sqrt(var_eps)?;
    let normed = tape.div(centered, std)?;
    let scaled = tape.mul(normed, gamma)?;
    tape.add(scaled, beta)
}

/// The four cross products of local min/max pooled maps, concatenated along
/// channels: [H,W,C/4] x 2 -> [H,W,C]. Pooling is 3x3 stride 1 padding 1 so
/// the spatial extents are preserved.
pub fn cross_products_graph(tape: &mut Tape, f1: TensorId, f2: TensorId) -> Result<TensorId> {
    if tape.shape(f1) != tape.shape(f2) {
        return Err(TensorError::IncompatibleShape {
            op: "uncertainty_fusion",
            detail: format!("{:?} vs {:?}", tape.shape(f1), tape.shape(f2)),
        });
    }
    let min1 = tape.pool(PoolKind::Min, f1, (3, 3), (1, 1), (1, 1))?;
    let max1 = tape.pool(PoolKind::Max, f1, (3, 3), (1, 1), (1, 1))?;
    let min2 = tape.pool(PoolKind::Min, f2, (3, 3), (1, 1), (1, 1))?;
    let max2 = tape.pool(PoolKind::Max, f2, (3, 3), (1, 1), (1, 1))?;
    let p_min_min = tape.mul(min1, min2)?;
    let p_min_max = tape.mul(min1, max2)?;
    let p_max_min = tape.mul(max1, min2)?;
    let p_max_max = tape.mul(max1, max2)?;
    tape.concat(&[p_min_min, p_min_max, p_max_min, p_max_max], 2)
}

/// Uncertainty fusion block: cross products, dropout, 1x1 conv back down to
/// C/4 with affine-norm and ReLU. Output spatial size equals the input's.
#[allow(clippy::too_many_arguments)]
pub fn uncertainty_fusion_graph(
    tape: &mut Tape,
    f1: TensorId,
    f2: TensorId,
    nodes: &SigmaNetNodes,
    config: &SigmaNetConfig,
    phase: Phase,
    seed: u64,
) -> Result<TensorId> {
    let stacked = cross_products_graph(tape, f1, f2)?;
    let dropped = tape.dropout(stacked, config.dropout_rate, phase, seed)?;
    let reduced = tape.conv1x1(dropped, nodes.fusion_w, nodes.fusion_b)?;
    let normed = affine_norm_graph(tape, reduced, nodes.fusion_gamma, nodes.fusion_beta)?;
    tape.relu(normed)
}

fn first_order_graph(tape: &mut Tape, feature: TensorId, nodes: &SigmaNetNodes) -> Result<TensorId> {
    let shortcut = tape.conv1x1(feature, nodes.shortcut_w, nodes.shortcut_b)?;
    tape.spatial_mean(shortcut)
}

fn positive_output(tape: &mut Tape, raw: TensorId, floor: f64) -> Result<TensorId> {
    let sp = tape.softplus(raw)?;
    tape.add_scalar(sp, floor)
}

/// Full second-order head: sigma = softplus(f1 + f2) + floor with f1 the
/// shortcut branch and f2 the fused second-order branch.
pub fn sigma_forward_graph(
    tape: &mut Tape,
    feature: TensorId,
    nodes: &SigmaNetNodes,
    config: &SigmaNetConfig,
    phase: Phase,
    seed: u64,
) -> Result<TensorId> {
    config.validate()?;
    check_channels(tape, feature, config)?;
    let f1 = first_order_graph(tape, feature, nodes)?;
    let b1 = tape.conv1x1(feature, nodes.branch1_w, nodes.branch1_b)?;
    let b2 = tape.conv1x1(feature, nodes.branch2_w, nodes.branch2_b)?;
    let fused = uncertainty_fusion_graph(tape, b1, b2, nodes, config, phase, seed)?;
    let pooled = tape.spatial_mean(fused)?;
    let f2 = tape.linear(pooled, nodes.out_w, nodes.out_b)?;
    let raw = tape.add(f1, f2)?;
    positive_output(tape, raw, config.output_floor)
}

/// Bilinear ablation: the fusion block degenerates to a direct elementwise
/// product of the two branches.
pub fn bm_forward_graph(
    tape: &mut Tape,
    feature: TensorId,
    nodes: &SigmaNetNodes,
    config: &SigmaNetConfig,
) -> Result<TensorId> {
    config.validate()?;
    check_channels(tape, feature, config)?;
    let f1 = first_order_graph(tape, feature, nodes)?;
    let b1 = tape.conv1x1(feature, nodes.branch1_w, nodes.branch1_b)?;
    let b2 = tape.conv1x1(feature, nodes.branch2_w, nodes.branch2_b)?;
    let product = tape.mul(b1, b2)?;
    let pooled = tape.spatial_mean(product)?;
    let f2 = tape.linear(pooled, nodes.out_w, nodes.out_b)?;
    let raw = tape.add(f1, f2)?;
    positive_output(tape, raw, config.output_floor)
}

/// MLP ablation: first-order information only.
pub fn mlp_forward_graph(
    tape: &mut Tape,
    feature: TensorId,
    nodes: &MlpNodes,
    config: &SigmaNetConfig,
) -> Result<TensorId> {
    config.validate()?;
    check_channels(tape, feature, config)?;
    let pooled = tape.spatial_mean(feature)?;
    let hidden = tape.linear(pooled, nodes.hidden_w, nodes.hidden_b)?;
    let activated = tape.relu(hidden)?;
    let raw = tape.linear(activated, nodes.out_w, nodes.out_b)?;
    positive_output(tape, raw, config.output_floor)
}

fn check_channels(tape: &Tape, feature: TensorId, config: &SigmaNetConfig) -> Result<()> {
    let shape = tape.shape(feature);
    if shape.len() != 3 || shape[2] != config.channels {
        return Err(TensorError::IncompatibleShape {
            op: "variance_head",
            detail: format!("feature {shape:?} vs configured channels {}", config.channels),
        });
    }
    Ok(())
}
