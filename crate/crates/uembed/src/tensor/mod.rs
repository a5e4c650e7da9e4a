//! Dense `f64` tensors and a reverse-mode differentiation tape.
//!
//! Data is row-major; feature maps use height x width x channel order, so a
//! per-channel vector broadcasts against a feature map under the
//! trailing-dimension rule with no reshaping. A scalar is a rank-0 tensor
//! (empty shape, one element).

mod io;
mod kernels;
mod tape;

pub use io::{read_tensor, write_tensor, GTEN_MAGIC, GTEN_VERSION};
pub(crate) use io::{
    read_payload as io_read_payload, write_bytes_payload as io_write_bytes, Payload as PayloadValue,
};
pub use tape::{Phase, PoolKind, Tape, TensorId};

use crate::rng::Rng;
use std::fmt;

/// Errors from tensor construction and tape operations.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// Operand shapes cannot be combined (broadcast, matmul, concat, ...).
    IncompatibleShape { op: &'static str, detail: String },
    /// A value outside an operation's domain (log/sqrt of a non-positive).
    Domain { op: &'static str, detail: String },
    /// Bad configuration value, e.g. a dropout rate outside [0, 1).
    InvalidConfig { detail: String },
    /// Pooling/convolution window geometry that yields no valid output.
    InvalidGeometry { detail: String },
    /// An API contract was violated (e.g. backward from a non-scalar).
    Contract { detail: String },
    /// Tensor file I/O and format problems.
    Io { detail: String },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::IncompatibleShape { op, detail } => {
                write!(f, "incompatible shapes in {op}: {detail}")
            }
            TensorError::Domain { op, detail } => write!(f, "domain error in {op}: {detail}"),
            TensorError::InvalidConfig { detail } => write!(f, "invalid config: {detail}"),
            TensorError::InvalidGeometry { detail } => write!(f, "invalid geometry: {detail}"),
            TensorError::Contract { detail } => write!(f, "contract violation: {detail}"),
            TensorError::Io { detail } => write!(f, "tensor io: {detail}"),
        }
    }
}

impl std::error::Error for TensorError {}

pub type Result<T> = std::result::Result<T, TensorError>;

/// A dense row-major tensor of 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(TensorError::IncompatibleShape {
                op: "new",
                detail: format!("shape {:?} wants {} values, got {}", shape, numel, data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    /// Rank-0 scalar.
    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// Entries drawn i.i.d. from N(0, std^2).
    pub fn randn(shape: &[usize], std: f64, rng: &mut Rng) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..numel).map(|_| std * rng.normal()).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar(), "item() on non-scalar {:?}", self.shape);
        self.data[0]
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Numerically stable softplus: ln(1 + e^x).
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// d/dx softplus(x) = sigmoid(x).
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of softplus: the x with softplus(x) = y, for y > 0.
pub fn softplus_inverse(y: f64) -> f64 {
    // ln(e^y - 1), stable for large y
    if y > 30.0 {
        y
    } else {
        (y.exp() - 1.0).ln()
    }
}

/// Broadcast shape of `a` and `b` under trailing-dimension alignment.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize], op: &'static str) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da != db && da != 1 && db != 1 {
            return Err(TensorError::IncompatibleShape {
                op,
                detail: format!("{a:?} vs {b:?}"),
            });
        }
        out[i] = da.max(db);
    }
    Ok(out)
}

/// Expands `data` of shape `shape` to `out_shape` (must be broadcast-compatible).
pub(crate) fn broadcast_expand(data: &[f64], shape: &[usize], out_shape: &[usize]) -> Vec<f64> {
    if shape == out_shape {
        return data.to_vec();
    }
    let rank = out_shape.len();
    let mut padded = vec![1usize; rank];
    padded[rank - shape.len()..].copy_from_slice(shape);

    // strides of the source in the padded coordinate system, 0 on broadcast axes
    let mut strides = vec![0usize; rank];
    let mut acc = 1usize;
    for d in (0..rank).rev() {
        strides[d] = if padded[d] == 1 { 0 } else { acc };
        if padded[d] != 1 {
            acc *= padded[d];
        }
    }

    let numel: usize = out_shape.iter().product();
    let mut out = vec![0.0; numel];
    let mut coords = vec![0usize; rank];
    for slot in out.iter_mut().take(numel) {
        let mut src = 0usize;
        for d in 0..rank {
            src += coords[d] * strides[d];
        }
        *slot = data[src];
        for d in (0..rank).rev() {
            coords[d] += 1;
            if coords[d] < out_shape[d] {
                break;
            }
            coords[d] = 0;
        }
    }
    out
}

/// Sums `grad` (shaped `grad_shape`) down to `target_shape`, undoing a broadcast.
pub(crate) fn reduce_to_shape(grad: &[f64], grad_shape: &[usize], target_shape: &[usize]) -> Vec<f64> {
    if grad_shape == target_shape {
        return grad.to_vec();
    }
    let rank = grad_shape.len();
    let mut padded = vec![1usize; rank];
    padded[rank - target_shape.len()..].copy_from_slice(target_shape);

    let mut strides = vec![0usize; rank];
    let mut acc = 1usize;
    for d in (0..rank).rev() {
        strides[d] = if padded[d] == 1 { 0 } else { acc };
        if padded[d] != 1 {
            acc *= padded[d];
        }
    }

    let target_numel: usize = target_shape.iter().product();
    let mut out = vec![0.0; target_numel];
    let mut coords = vec![0usize; rank];
    for &g in grad {
        let mut dst = 0usize;
        for d in 0..rank {
            dst += coords[d] * strides[d];
        }
        out[dst] += g;
        for d in (0..rank).rev() {
            coords[d] += 1;
            if coords[d] < grad_shape[d] {
                break;
            }
            coords[d] = 0;
        }
    }
    out
}
