//! Reverse-mode differentiation tape.
//!
//! Operations append nodes in execution order, so node ids are already a
//! topological order and backward is a single reverse sweep that visits each
//! node once. Gradients accumulate into persistent per-node buffers across
//! repeated backward calls until [`Tape::zero_grads`].

use super::kernels::{self, ConvGeometry, PoolGeometry};
use super::{broadcast_expand, broadcast_shape, reduce_to_shape, sigmoid, softplus, Result, Tensor, TensorError};
use crate::rng::Rng;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Avg,
    Min,
    Max,
}

impl PoolKind {
    pub fn name(&self) -> &'static str {
        match self {
            PoolKind::Avg => "avg",
            PoolKind::Min => "min",
            PoolKind::Max => "max",
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Div(TensorId, TensorId),
    AddScalar(TensorId),
    MulScalar(TensorId, f64),
    Exp(TensorId),
    Ln(TensorId),
    Sqrt(TensorId),
    Softplus(TensorId),
    Relu(TensorId),
    Neg(TensorId),
    Matmul(TensorId, TensorId),
    Conv2d {
        input: TensorId,
        weight: TensorId,
        bias: TensorId,
        geom: ConvGeomBox,
    },
    Pool {
        input: TensorId,
        kind: PoolKind,
        geom: PoolGeomBox,
        chosen: Vec<usize>,
    },
    Concat {
        inputs: Vec<TensorId>,
        axis: usize,
    },
    SliceAxis {
        input: TensorId,
        axis: usize,
        start: usize,
    },
    Reshape(TensorId),
    LogSoftmax(TensorId),
    SumAll(TensorId),
    SumAxis {
        input: TensorId,
        axis: usize,
    },
    SpatialMean(TensorId),
    Dropout {
        input: TensorId,
        mask: Vec<f64>,
    },
}

// Geometry structs are plain data; boxed aliases keep the Op enum small.
pub(crate) type ConvGeomBox = Box<ConvGeometry>;
pub(crate) type PoolGeomBox = Box<PoolGeometry>;

impl std::fmt::Debug for ConvGeometry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ConvGeometry")
    }
}
impl Clone for ConvGeometry {
    fn clone(&self) -> Self {
        ConvGeometry {
            in_h: self.in_h,
            in_w: self.in_w,
            in_c: self.in_c,
            k_h: self.k_h,
            k_w: self.k_w,
            out_c: self.out_c,
            stride: self.stride,
            padding: self.padding,
            out_h: self.out_h,
            out_w: self.out_w,
        }
    }
}
impl std::fmt::Debug for PoolGeometry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PoolGeometry")
    }
}
impl Clone for PoolGeometry {
    fn clone(&self) -> Self {
        PoolGeometry {
            in_h: self.in_h,
            in_w: self.in_w,
            channels: self.channels,
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
            out_h: self.out_h,
            out_w: self.out_w,
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    name: Option<String>,
}

/// Record of executed operations plus their values and gradients.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> TensorId {
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
            name: None,
        });
        id
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> TensorId {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn named_leaf(&mut self, name: &str, value: Tensor, requires_grad: bool) -> TensorId {
        let id = self.leaf(value, requires_grad);
        self.nodes[id.0].name = Some(name.to_string());
        id
    }

    /// Leaf that gradients never flow into.
    pub fn constant(&mut self, value: Tensor) -> TensorId {
        self.leaf(value, false)
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn leaf_name(&self, id: TensorId) -> Option<&str> {
        self.nodes[id.0].name.as_deref()
    }

    pub fn is_leaf(&self, id: TensorId) -> bool {
        matches!(self.nodes[id.0].op, Op::Leaf)
    }

    /// Id of the named leaf, if one was inserted under that name.
    pub fn find_named(&self, name: &str) -> Option<TensorId> {
        self.nodes
            .iter()
            .position(|n| n.name.as_deref() == Some(name))
            .map(TensorId)
    }

    /// All named leaves in insertion order.
    pub fn named_leaves(&self) -> Vec<(String, TensorId)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.name.clone().map(|name| (name, TensorId(i))))
            .collect()
    }

    /// Accumulated gradient, if backward has reached this tensor.
    pub fn grad(&self, id: TensorId) -> Option<Tensor> {
        let node = &self.nodes[id.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    /// Gradient, or zeros when backward never touched the tensor.
    pub fn grad_or_zeros(&self, id: TensorId) -> Tensor {
        self.grad(id)
            .unwrap_or_else(|| Tensor::zeros(self.nodes[id.0].value.shape()))
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Name of the first tensor on the tape holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<String> {
        self.nodes
            .iter()
            .enumerate()
            .find(|(_, n)| !n.value.all_finite())
            .map(|(i, n)| self.describe_node(i, n))
    }

    fn describe_node(&self, index: usize, node: &Node) -> String {
        match &node.name {
            Some(name) => format!("{name} (node {index})"),
            None => format!("{} (node {index})", op_kind(&node.op)),
        }
    }

    fn any_grad(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    // ---- elementwise ----

    fn binary(
        &mut self,
        op_name: &'static str,
        a: TensorId,
        b: TensorId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<TensorId> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let out_shape = broadcast_shape(&sa, &sb, op_name)?;
        let ea = broadcast_expand(self.nodes[a.0].value.data(), &sa, &out_shape);
        let eb = broadcast_expand(self.nodes[b.0].value.data(), &sb, &out_shape);
        let data: Vec<f64> = ea.iter().zip(&eb).map(|(&x, &y)| f(x, y)).collect();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(out_shape, data).expect("binary shape"), op, rg))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn add_scalar(&mut self, a: TensorId, c: f64) -> Result<TensorId> {
        let value = self.nodes[a.0].value.map(|x| x + c);
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(value, Op::AddScalar(a), rg))
    }

    pub fn mul_scalar(&mut self, a: TensorId, c: f64) -> Result<TensorId> {
        let value = self.nodes[a.0].value.map(|x| x * c);
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(value, Op::MulScalar(a, c), rg))
    }

    fn unary(
        &mut self,
        a: TensorId,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> TensorId {
        let value = self.nodes[a.0].value.map(&f);
        let rg = self.nodes[a.0].requires_grad;
        self.push(value, op, rg)
    }

    pub fn exp(&mut self, a: TensorId) -> Result<TensorId> {
        Ok(self.unary(a, f64::exp, Op::Exp(a)))
    }

    pub fn ln(&mut self, a: TensorId) -> Result<TensorId> {
        if let Some(&bad) = self.nodes[a.0].value.data().iter().find(|v| **v <= 0.0) {
            return Err(TensorError::Domain {
                op: "ln",
                detail: format!("non-positive input {bad}"),
            });
        }
        Ok(self.unary(a, f64::ln, Op::Ln(a)))
    }

    pub fn sqrt(&mut self, a: TensorId) -> Result<TensorId> {
        if let Some(&bad) = self.nodes[a.0].value.data().iter().find(|v| **v <= 0.0) {
            return Err(TensorError::Domain {
                op: "sqrt",
                detail: format!("non-positive input {bad}"),
            });
        }
        Ok(self.unary(a, f64::sqrt, Op::Sqrt(a)))
    }

    pub fn softplus(&mut self, a: TensorId) -> Result<TensorId> {
        Ok(self.unary(a, softplus, Op::Softplus(a)))
    }

    pub fn relu(&mut self, a: TensorId) -> Result<TensorId> {
        Ok(self.unary(a, |x| x.max(0.0), Op::Relu(a)))
    }

    pub fn neg(&mut self, a: TensorId) -> Result<TensorId> {
        Ok(self.unary(a, |x| -x, Op::Neg(a)))
    }

    pub fn square(&mut self, a: TensorId) -> Result<TensorId> {
        self.mul(a, a)
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::IncompatibleShape {
                op: "matmul",
                detail: format!("{sa:?} x {sb:?}"),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(self.nodes[a.0].value.data(), self.nodes[b.0].value.data(), m, k, n);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], data).expect("matmul shape"), Op::Matmul(a, b), rg))
    }

    /// x [d] . w [d,n] + b [n] -> [n]
    pub fn linear(&mut self, x: TensorId, w: TensorId, b: TensorId) -> Result<TensorId> {
        let d = match self.shape(x) {
            [d] => *d,
            other => {
                return Err(TensorError::IncompatibleShape {
                    op: "linear",
                    detail: format!("expected vector input, got {other:?}"),
                })
            }
        };
        let row = self.reshape(x, vec![1, d])?;
        let prod = self.matmul(row, w)?;
        let n = self.shape(prod)[1];
        let flat = self.reshape(prod, vec![n])?;
        self.add(flat, b)
    }

    /// input [H,W,Cin], weight [kh,kw,Cin,Cout], bias [Cout]; zero padding.
    pub fn conv2d(
        &mut self,
        input: TensorId,
        weight: TensorId,
        bias: TensorId,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<TensorId> {
        let si = self.shape(input).to_vec();
        let sw = self.shape(weight).to_vec();
        let sb = self.shape(bias).to_vec();
        if si.len() != 3 || sw.len() != 4 || sb.len() != 1 {
            return Err(TensorError::IncompatibleShape {
                op: "conv2d",
                detail: format!("input {si:?}, weight {sw:?}, bias {sb:?}"),
            });
        }
        if sw[2] != si[2] || sb[0] != sw[3] {
            return Err(TensorError::IncompatibleShape {
                op: "conv2d",
                detail: format!("channels: input {}, weight in {}, out {}, bias {}", si[2], sw[2], sw[3], sb[0]),
            });
        }
        let out_h = kernels::out_extent(si[0], sw[0], stride.0, padding.0);
        let out_w = kernels::out_extent(si[1], sw[1], stride.1, padding.1);
        let (Some(out_h), Some(out_w)) = (out_h, out_w) else {
            return Err(TensorError::InvalidGeometry {
                detail: format!(
                    "conv window {}x{} stride {:?} padding {:?} on {}x{}",
                    sw[0], sw[1], stride, padding, si[0], si[1]
                ),
            });
        };
        let geom = Box::new(ConvGeometry {
            in_h: si[0],
            in_w: si[1],
            in_c: si[2],
            k_h: sw[0],
            k_w: sw[1],
            out_c: sw[3],
            stride,
            padding,
            out_h,
            out_w,
        });
        let data = kernels::conv2d_forward(
            self.nodes[input.0].value.data(),
            self.nodes[weight.0].value.data(),
            self.nodes[bias.0].value.data(),
            &geom,
        );
        let rg = self.any_grad(&[input, weight, bias]);
        Ok(self.push(
            Tensor::new(vec![out_h, out_w, sw[3]], data).expect("conv shape"),
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            rg,
        ))
    }

    /// Per-pixel linear map: input [H,W,Cin], weight [Cin,Cout], bias [Cout].
    pub fn conv1x1(&mut self, input: TensorId, weight: TensorId, bias: TensorId) -> Result<TensorId> {
        let sw = self.shape(weight).to_vec();
        if sw.len() != 2 {
            return Err(TensorError::IncompatibleShape {
                op: "conv1x1",
                detail: format!("weight must be [Cin,Cout], got {sw:?}"),
            });
        }
        let w4 = self.reshape(weight, vec![1, 1, sw[0], sw[1]])?;
        self.conv2d(input, w4, bias, (1, 1), (0, 0))
    }

    /// Windowed per-channel reduction on [H,W,C]. Padding must be smaller than
    /// the kernel on each axis so every window overlaps the input; min/max
    /// treat padded cells as +/- infinity sentinels (they never win) and avg
    /// divides by the true in-bounds cell count.
    pub fn pool(
        &mut self,
        kind: PoolKind,
        input: TensorId,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<TensorId> {
        let si = self.shape(input).to_vec();
        if si.len() != 3 {
            return Err(TensorError::IncompatibleShape {
                op: "pool",
                detail: format!("expected [H,W,C], got {si:?}"),
            });
        }
        if kernel.0 == 0 || kernel.1 == 0 || stride.0 == 0 || stride.1 == 0 {
            return Err(TensorError::InvalidGeometry {
                detail: format!("pool kernel {kernel:?} stride {stride:?}"),
            });
        }
        if padding.0 >= kernel.0 || padding.1 >= kernel.1 {
            return Err(TensorError::InvalidGeometry {
                detail: format!("padding {padding:?} must be < kernel {kernel:?}"),
            });
        }
        let out_h = kernels::out_extent(si[0], kernel.0, stride.0, padding.0);
        let out_w = kernels::out_extent(si[1], kernel.1, stride.1, padding.1);
        let (Some(out_h), Some(out_w)) = (out_h, out_w) else {
            return Err(TensorError::InvalidGeometry {
                detail: format!(
                    "pool window {kernel:?} stride {stride:?} padding {padding:?} larger than padded input {}x{}",
                    si[0], si[1]
                ),
            });
        };
        let geom = Box::new(PoolGeometry {
            in_h: si[0],
            in_w: si[1],
            channels: si[2],
            kernel,
            stride,
            padding,
            out_h,
            out_w,
        });
        let (data, chosen) = kernels::pool_forward(self.nodes[input.0].value.data(), kind, &geom);
        let rg = self.nodes[input.0].requires_grad;
        Ok(self.push(
            Tensor::new(vec![out_h, out_w, si[2]], data).expect("pool shape"),
            Op::Pool {
                input,
                kind,
                geom,
                chosen,
            },
            rg,
        ))
    }

    // ---- shape ops ----

    pub fn concat(&mut self, inputs: &[TensorId], axis: usize) -> Result<TensorId> {
        if inputs.is_empty() {
            return Err(TensorError::Contract {
                detail: "concat of zero tensors".into(),
            });
        }
        let first = self.shape(inputs[0]).to_vec();
        if axis >= first.len() {
            return Err(TensorError::IncompatibleShape {
                op: "concat",
                detail: format!("axis {axis} out of range for rank {}", first.len()),
            });
        }
        let mut axis_total = 0usize;
        for &id in inputs {
            let s = self.shape(id);
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(d, (a, b))| d != axis && a != b)
            {
                return Err(TensorError::IncompatibleShape {
                    op: "concat",
                    detail: format!("{s:?} vs {first:?} along axis {axis}"),
                });
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;

        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = vec![0.0; outer * axis_total * inner];
        let mut offset = 0usize;
        for &id in inputs {
            let s = self.shape(id).to_vec();
            let extent = s[axis];
            let src = self.nodes[id.0].value.data();
            for o in 0..outer {
                let dst_base = (o * axis_total + offset) * inner;
                let src_base = o * extent * inner;
                data[dst_base..dst_base + extent * inner]
                    .copy_from_slice(&src[src_base..src_base + extent * inner]);
            }
            offset += extent;
        }
        let rg = self.any_grad(inputs);
        Ok(self.push(
            Tensor::new(out_shape, data).expect("concat shape"),
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    pub fn slice_axis(&mut self, input: TensorId, axis: usize, start: usize, len: usize) -> Result<TensorId> {
        let s = self.shape(input).to_vec();
        if axis >= s.len() || start + len > s[axis] || len == 0 {
            return Err(TensorError::IncompatibleShape {
                op: "slice",
                detail: format!("axis {axis} range {start}..{} of {s:?}", start + len),
            });
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let mut out_shape = s.clone();
        out_shape[axis] = len;
        let src = self.nodes[input.0].value.data();
        let mut data = vec![0.0; outer * len * inner];
        for o in 0..outer {
            let src_base = (o * s[axis] + start) * inner;
            let dst_base = o * len * inner;
            data[dst_base..dst_base + len * inner].copy_from_slice(&src[src_base..src_base + len * inner]);
        }
        let rg = self.nodes[input.0].requires_grad;
        Ok(self.push(
            Tensor::new(out_shape, data).expect("slice shape"),
            Op::SliceAxis { input, axis, start },
            rg,
        ))
    }

    pub fn reshape(&mut self, input: TensorId, shape: Vec<usize>) -> Result<TensorId> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[input.0].value.numel() {
            return Err(TensorError::IncompatibleShape {
                op: "reshape",
                detail: format!("{:?} -> {shape:?}", self.shape(input)),
            });
        }
        let data = self.nodes[input.0].value.data().to_vec();
        let rg = self.nodes[input.0].requires_grad;
        Ok(self.push(Tensor::new(shape, data).expect("reshape"), Op::Reshape(input), rg))
    }

    // ---- reductions & softmax ----

    pub fn sum_all(&mut self, input: TensorId) -> Result<TensorId> {
        let s: f64 = self.nodes[input.0].value.data().iter().sum();
        let rg = self.nodes[input.0].requires_grad;
        Ok(self.push(Tensor::scalar(s), Op::SumAll(input), rg))
    }

    pub fn mean_all(&mut self, input: TensorId) -> Result<TensorId> {
        let n = self.nodes[input.0].value.numel();
        let total = self.sum_all(input)?;
        self.mul_scalar(total, 1.0 / n as f64)
    }

    pub fn sum_axis(&mut self, input: TensorId, axis: usize) -> Result<TensorId> {
        let s = self.shape(input).to_vec();
        if axis >= s.len() {
            return Err(TensorError::IncompatibleShape {
                op: "sum_axis",
                detail: format!("axis {axis} of {s:?}"),
            });
        }
        let outer: usize = s[..axis].iter().product();
        let extent = s[axis];
        let inner: usize = s[axis + 1..].iter().product();
        let src = self.nodes[input.0].value.data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..extent {
                let base = (o * extent + a) * inner;
                for i in 0..inner {
                    data[o * inner + i] += src[base + i];
                }
            }
        }
        let mut out_shape = s.clone();
        out_shape.remove(axis);
        let rg = self.nodes[input.0].requires_grad;
        Ok(self.push(
            Tensor::new(out_shape, data).expect("sum_axis shape"),
            Op::SumAxis { input, axis },
            rg,
        ))
    }

    /// Mean over the two leading spatial axes: [H,W,C] -> [C]. This is global
    /// average pooling.
    pub fn spatial_mean(&mut self, input: TensorId) -> Result<TensorId> {
        let s = self.shape(input).to_vec();
        if s.len() != 3 {
            return Err(TensorError::IncompatibleShape {
                op: "spatial_mean",
                detail: format!("expected [H,W,C], got {s:?}"),
            });
        }
        let (h, w, c) = (s[0], s[1], s[2]);
        let src = self.nodes[input.0].value.data();
        let mut data = vec![0.0; c];
        for cell in 0..h * w {
            for ch in 0..c {
                data[ch] += src[cell * c + ch];
            }
        }
        let scale = 1.0 / (h * w) as f64;
        for v in &mut data {
            *v *= scale;
        }
        let rg = self.nodes[input.0].requires_grad;
        Ok(self.push(
            Tensor::new(vec![c], data).expect("spatial_mean shape"),
            Op::SpatialMean(input),
            rg,
        ))
    }

    /// Log of softmax along the last axis, stabilized by max subtraction.
    pub fn log_softmax(&mut self, input: TensorId) -> Result<TensorId> {
        let s = self.shape(input).to_vec();
        if s.is_empty() {
            return Err(TensorError::IncompatibleShape {
                op: "log_softmax",
                detail: "rank-0 input".into(),
            });
        }
        let k = s[s.len() - 1];
        let src = self.nodes[input.0].value.data();
        let mut data = vec![0.0; src.len()];
        for row in 0..src.len() / k {
            let chunk = &src[row * k..(row + 1) * k];
            let max = chunk.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = chunk.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
            for (j, &x) in chunk.iter().enumerate() {
                data[row * k + j] = x - lse;
            }
        }
        let rg = self.nodes[input.0].requires_grad;
        Ok(self.push(
            Tensor::new(s, data).expect("log_softmax shape"),
            Op::LogSoftmax(input),
            rg,
        ))
    }

    /// In train phase, zeroes each element with probability `rate` and scales
    /// survivors by 1/(1-rate); the mask is a pure function of (seed, numel).
    /// Eval phase and rate 0 return the input unchanged.
    pub fn dropout(&mut self, input: TensorId, rate: f64, phase: Phase, seed: u64) -> Result<TensorId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::InvalidConfig {
                detail: format!("dropout rate {rate} outside [0,1)"),
            });
        }
        if phase == Phase::Eval || rate == 0.0 {
            return Ok(input);
        }
        let mut rng = Rng::new(seed);
        let keep_scale = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.nodes[input.0].value.numel())
            .map(|_| if rng.next_f64() < rate { 0.0 } else { keep_scale })
            .collect();
        let data: Vec<f64> = self.nodes[input.0]
            .value
            .data()
            .iter()
            .zip(&mask)
            .map(|(&x, &m)| x * m)
            .collect();
        let shape = self.shape(input).to_vec();
        let rg = self.nodes[input.0].requires_grad;
        Ok(self.push(
            Tensor::new(shape, data).expect("dropout shape"),
            Op::Dropout { input, mask },
            rg,
        ))
    }

    // ---- backward ----

    /// Reverse sweep from a scalar loss. Gradients accumulate into every
    /// requires-grad tensor reachable from `loss`; repeated calls without
    /// [`Tape::zero_grads`] keep accumulating.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(TensorError::Contract {
                detail: format!("backward from non-scalar shape {:?}", self.shape(loss)),
            });
        }
        let mut adj: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(grad) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            // persist
            match &mut self.nodes[i].grad {
                Some(existing) => {
                    for (e, g) in existing.iter_mut().zip(&grad) {
                        *e += g;
                    }
                }
                slot => *slot = Some(grad.clone()),
            }
            let op = self.nodes[i].op.clone();
            self.propagate(i, &op, &grad, &mut adj);
        }
        Ok(())
    }

    fn accumulate(&self, adj: &mut [Option<Vec<f64>>], target: TensorId, contribution: Vec<f64>) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        match &mut adj[target.0] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(&contribution) {
                    *e += c;
                }
            }
            slot => *slot = Some(contribution),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn binary_backward(
        &self,
        node: usize,
        a: TensorId,
        b: TensorId,
        grad: &[f64],
        adj: &mut [Option<Vec<f64>>],
        da: impl Fn(f64, f64, f64) -> f64,
        db: impl Fn(f64, f64, f64) -> f64,
    ) {
        let out_shape = self.nodes[node].value.shape().to_vec();
        let sa = self.nodes[a.0].value.shape().to_vec();
        let sb = self.nodes[b.0].value.shape().to_vec();
        let ea = broadcast_expand(self.nodes[a.0].value.data(), &sa, &out_shape);
        let eb = broadcast_expand(self.nodes[b.0].value.data(), &sb, &out_shape);
        if self.nodes[a.0].requires_grad {
            let full: Vec<f64> = grad
                .iter()
                .zip(ea.iter().zip(&eb))
                .map(|(&g, (&x, &y))| da(g, x, y))
                .collect();
            self.accumulate(adj, a, reduce_to_shape(&full, &out_shape, &sa));
        }
        if self.nodes[b.0].requires_grad {
            let full: Vec<f64> = grad
                .iter()
                .zip(ea.iter().zip(&eb))
                .map(|(&g, (&x, &y))| db(g, x, y))
                .collect();
            self.accumulate(adj, b, reduce_to_shape(&full, &out_shape, &sb));
        }
    }

    fn propagate(&self, node: usize, op: &Op, grad: &[f64], adj: &mut [Option<Vec<f64>>]) {
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.binary_backward(node, *a, *b, grad, adj, |g, _, _| g, |g, _, _| g)
            }
            Op::Sub(a, b) => {
                self.binary_backward(node, *a, *b, grad, adj, |g, _, _| g, |g, _, _| -g)
            }
            Op::Mul(a, b) => {
                self.binary_backward(node, *a, *b, grad, adj, |g, _, y| g * y, |g, x, _| g * x)
            }
            Op::Div(a, b) => self.binary_backward(
                node,
                *a,
                *b,
                grad,
                adj,
                |g, _, y| g / y,
                |g, x, y| -g * x / (y * y),
            ),
            Op::AddScalar(a) => self.accumulate(adj, *a, grad.to_vec()),
            Op::MulScalar(a, c) => {
                self.accumulate(adj, *a, grad.iter().map(|&g| g * c).collect())
            }
            Op::Exp(a) => {
                let out = self.nodes[node].value.data();
                self.accumulate(adj, *a, grad.iter().zip(out).map(|(&g, &y)| g * y).collect());
            }
            Op::Ln(a) => {
                let x = self.nodes[a.0].value.data();
                self.accumulate(adj, *a, grad.iter().zip(x).map(|(&g, &v)| g / v).collect());
            }
            Op::Sqrt(a) => {
                let out = self.nodes[node].value.data();
                self.accumulate(
                    adj,
                    *a,
                    grad.iter().zip(out).map(|(&g, &y)| g * 0.5 / y).collect(),
                );
            }
            Op::Softplus(a) => {
                let x = self.nodes[a.0].value.data();
                self.accumulate(
                    adj,
                    *a,
                    grad.iter().zip(x).map(|(&g, &v)| g * sigmoid(v)).collect(),
                );
            }
            Op::Relu(a) => {
                let x = self.nodes[a.0].value.data();
                self.accumulate(
                    adj,
                    *a,
                    grad.iter()
                        .zip(x)
                        .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
                        .collect(),
                );
            }
            Op::Neg(a) => self.accumulate(adj, *a, grad.iter().map(|&g| -g).collect()),
            Op::Matmul(a, b) => {
                let sa = self.nodes[a.0].value.shape();
                let sb = self.nodes[b.0].value.shape();
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let a_data = self.nodes[a.0].value.data();
                let b_data = self.nodes[b.0].value.data();
                if self.nodes[a.0].requires_grad {
                    // dA = G . B^T
                    let mut bt = vec![0.0; n * k];
                    for p in 0..k {
                        for j in 0..n {
                            bt[j * k + p] = b_data[p * n + j];
                        }
                    }
                    self.accumulate(adj, *a, kernels::matmul(grad, &bt, m, n, k));
                }
                if self.nodes[b.0].requires_grad {
                    // dB = A^T . G
                    let mut at = vec![0.0; k * m];
                    for i2 in 0..m {
                        for p in 0..k {
                            at[p * m + i2] = a_data[i2 * k + p];
                        }
                    }
                    self.accumulate(adj, *b, kernels::matmul(&at, grad, k, m, n));
                }
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let mut gi = vec![0.0; self.nodes[input.0].value.numel()];
                let mut gw = vec![0.0; self.nodes[weight.0].value.numel()];
                let mut gb = vec![0.0; self.nodes[bias.0].value.numel()];
                kernels::conv2d_backward(
                    grad,
                    self.nodes[input.0].value.data(),
                    self.nodes[weight.0].value.data(),
                    geom,
                    &mut gi,
                    &mut gw,
                    &mut gb,
                );
                self.accumulate(adj, *input, gi);
                self.accumulate(adj, *weight, gw);
                self.accumulate(adj, *bias, gb);
            }
            Op::Pool {
                input,
                kind,
                geom,
                chosen,
            } => {
                let mut gi = vec![0.0; self.nodes[input.0].value.numel()];
                kernels::pool_backward(grad, *kind, chosen, geom, &mut gi);
                self.accumulate(adj, *input, gi);
            }
            Op::Concat { inputs, axis } => {
                let out_shape = self.nodes[node].value.shape();
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[*axis + 1..].iter().product();
                let axis_total = out_shape[*axis];
                let mut offset = 0usize;
                for &id in inputs {
                    let extent = self.nodes[id.0].value.shape()[*axis];
                    if self.nodes[id.0].requires_grad {
                        let mut part = vec![0.0; outer * extent * inner];
                        for o in 0..outer {
                            let src_base = (o * axis_total + offset) * inner;
                            let dst_base = o * extent * inner;
                            part[dst_base..dst_base + extent * inner]
                                .copy_from_slice(&grad[src_base..src_base + extent * inner]);
                        }
                        self.accumulate(adj, id, part);
                    }
                    offset += extent;
                }
            }
            Op::SliceAxis { input, axis, start } => {
                let in_shape = self.nodes[input.0].value.shape();
                let out_shape = self.nodes[node].value.shape();
                let outer: usize = in_shape[..*axis].iter().product();
                let inner: usize = in_shape[*axis + 1..].iter().product();
                let len = out_shape[*axis];
                let mut gi = vec![0.0; self.nodes[input.0].value.numel()];
                for o in 0..outer {
                    let dst_base = (o * in_shape[*axis] + start) * inner;
                    let src_base = o * len * inner;
                    gi[dst_base..dst_base + len * inner]
                        .copy_from_slice(&grad[src_base..src_base + len * inner]);
                }
                self.accumulate(adj, *input, gi);
            }
            Op::Reshape(a) => self.accumulate(adj, *a, grad.to_vec()),
            Op::LogSoftmax(a) => {
                let out = self.nodes[node].value.data();
                let shape = self.nodes[node].value.shape();
                let k = shape[shape.len() - 1];
                let mut gi = vec![0.0; out.len()];
                for row in 0..out.len() / k {
                    let g_row = &grad[row * k..(row + 1) * k];
                    let y_row = &out[row * k..(row + 1) * k];
                    let g_sum: f64 = g_row.iter().sum();
                    for j in 0..k {
                        gi[row * k + j] = g_row[j] - y_row[j].exp() * g_sum;
                    }
                }
                self.accumulate(adj, *a, gi);
            }
            Op::SumAll(a) => {
                let n = self.nodes[a.0].value.numel();
                self.accumulate(adj, *a, vec![grad[0]; n]);
            }
            Op::SumAxis { input, axis } => {
                let in_shape = self.nodes[input.0].value.shape();
                let outer: usize = in_shape[..*axis].iter().product();
                let extent = in_shape[*axis];
                let inner: usize = in_shape[*axis + 1..].iter().product();
                let mut gi = vec![0.0; self.nodes[input.0].value.numel()];
                for o in 0..outer {
                    for a2 in 0..extent {
                        let base = (o * extent + a2) * inner;
                        for i2 in 0..inner {
                            gi[base + i2] = grad[o * inner + i2];
                        }
                    }
                }
                self.accumulate(adj, *input, gi);
            }
            Op::SpatialMean(a) => {
                let s = self.nodes[a.0].value.shape();
                let (h, w, c) = (s[0], s[1], s[2]);
                let scale = 1.0 / (h * w) as f64;
                let mut gi = vec![0.0; h * w * c];
                for cell in 0..h * w {
                    for ch in 0..c {
                        gi[cell * c + ch] = grad[ch] * scale;
                    }
                }
                self.accumulate(adj, *a, gi);
            }
            Op::Dropout { input, mask } => {
                self.accumulate(
                    adj,
                    *input,
                    grad.iter().zip(mask).map(|(&g, &m)| g * m).collect(),
                );
            }
        }
    }
}

fn op_kind(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Div(..) => "div",
        Op::AddScalar(..) => "add_scalar",
        Op::MulScalar(..) => "mul_scalar",
        Op::Exp(..) => "exp",
        Op::Ln(..) => "ln",
        Op::Sqrt(..) => "sqrt",
        Op::Softplus(..) => "softplus",
        Op::Relu(..) => "relu",
        Op::Neg(..) => "neg",
        Op::Matmul(..) => "matmul",
        Op::Conv2d { .. } => "conv2d",
        Op::Pool { .. } => "pool",
        Op::Concat { .. } => "concat",
        Op::SliceAxis { .. } => "slice",
        Op::Reshape(..) => "reshape",
        Op::LogSoftmax(..) => "log_softmax",
        Op::SumAll(..) => "sum_all",
        Op::SumAxis { .. } => "sum_axis",
        Op::SpatialMean(..) => "spatial_mean",
        Op::Dropout { .. } => "dropout",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn add_vectors() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[2], &[1.0, 2.0]), false);
        let b = tape.leaf(t(&[2], &[3.0, 4.0]), false);
        let c = tape.add(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn square_gradient_is_two_x() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1], &[2.0]), true);
        let y = tape.mul(x, x).unwrap();
        let loss = tape.sum_all(y).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[4.0]);
    }

    #[test]
    fn softplus_at_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0), false);
        let y = tape.softplus(x).unwrap();
        assert!((tape.value(y).item() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[2, 3], &[0.0; 6]), false);
        let b = tape.leaf(t(&[4], &[0.0; 4]), false);
        assert!(matches!(
            tape.add(a, b),
            Err(TensorError::IncompatibleShape { .. })
        ));
    }

    #[test]
    fn ln_of_non_positive_is_domain_error() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[2], &[1.0, 0.0]), false);
        assert!(matches!(tape.ln(a), Err(TensorError::Domain { .. })));
        let b = tape.leaf(t(&[1], &[-1.0]), false);
        assert!(matches!(tape.sqrt(b), Err(TensorError::Domain { .. })));
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let eye = tape.leaf(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]), false);
        let m = tape.leaf(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]), false);
        let p = tape.matmul(eye, m).unwrap();
        assert_eq!(tape.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_row_times_column() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[1, 2], &[1.0, 0.0]), false);
        let b = tape.leaf(t(&[2, 1], &[0.0, 5.0]), false);
        let p = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(p).data(), &[0.0]);
        let bad = tape.leaf(t(&[3, 1], &[0.0; 3]), false);
        assert!(tape.matmul(a, bad).is_err());
    }

    #[test]
    fn conv1x1_identity_weight_is_identity() {
        let mut tape = Tape::new();
        let input = tape.leaf(
            Tensor::randn(&[3, 2, 2], 1.0, &mut crate::rng::Rng::new(5)),
            false,
        );
        let eye = tape.leaf(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]), false);
        let bias = tape.leaf(t(&[2], &[0.0, 0.0]), false);
        let out = tape.conv1x1(input, eye, bias).unwrap();
        assert_eq!(tape.value(out).data(), tape.value(input).data());
    }

    #[test]
    fn conv1x1_channel_sum() {
        let mut tape = Tape::new();
        let input = tape.leaf(Tensor::full(&[2, 2, 3], 2.0), false);
        let w = tape.leaf(t(&[3, 1], &[1.0, 1.0, 1.0]), false);
        let b = tape.leaf(t(&[1], &[0.0]), false);
        let out = tape.conv1x1(input, w, b).unwrap();
        assert_eq!(tape.shape(out), &[2, 2, 1]);
        assert!(tape.value(out).data().iter().all(|&v| (v - 6.0).abs() < 1e-12));
    }

    #[test]
    fn global_avg_pool_of_constant() {
        let mut tape = Tape::new();
        let input = tape.leaf(Tensor::full(&[4, 3, 2], 7.5), false);
        let out = tape.pool(PoolKind::Avg, input, (4, 3), (1, 1), (0, 0)).unwrap();
        assert_eq!(tape.shape(out), &[1, 1, 2]);
        assert_eq!(tape.value(out).data(), &[7.5, 7.5]);
    }

    #[test]
    fn max_pool_two_by_two() {
        let mut tape = Tape::new();
        let input = tape.leaf(t(&[2, 2, 1], &[1.0, 2.0, 3.0, 4.0]), false);
        let out = tape.pool(PoolKind::Max, input, (2, 2), (2, 2), (0, 0)).unwrap();
        assert_eq!(tape.value(out).data(), &[4.0]);
    }

    #[test]
    fn min_pool_padded_matches_nested_loop_oracle() {
        let mut rng = crate::rng::Rng::new(77);
        let input = Tensor::randn(&[4, 4, 1], 1.0, &mut rng);
        let mut tape = Tape::new();
        let id = tape.leaf(input.clone(), false);
        let out = tape.pool(PoolKind::Min, id, (3, 3), (1, 1), (1, 1)).unwrap();
        assert_eq!(tape.shape(out), &[4, 4, 1]);
        // independent nested-loop evaluation
        for oy in 0..4usize {
            for ox in 0..4usize {
                let mut best = f64::INFINITY;
                for ky in 0..3usize {
                    for kx in 0..3usize {
                        let iy = oy as isize + ky as isize - 1;
                        let ix = ox as isize + kx as isize - 1;
                        if !(0..4).contains(&iy) || !(0..4).contains(&ix) {
                            continue;
                        }
                        best = best.min(input.data()[(iy * 4 + ix) as usize]);
                    }
                }
                assert_eq!(tape.value(out).data()[oy * 4 + ox], best);
            }
        }
    }

    #[test]
    fn pool_kernel_one_is_identity() {
        let mut rng = crate::rng::Rng::new(3);
        let input = Tensor::randn(&[3, 5, 2], 1.0, &mut rng);
        for kind in [PoolKind::Avg, PoolKind::Min, PoolKind::Max] {
            let mut tape = Tape::new();
            let id = tape.leaf(input.clone(), false);
            let out = tape.pool(kind, id, (1, 1), (1, 1), (0, 0)).unwrap();
            assert_eq!(tape.value(out), &input, "{}", kind.name());
        }
    }

    #[test]
    fn oversized_window_is_invalid_geometry() {
        let mut tape = Tape::new();
        let input = tape.leaf(Tensor::zeros(&[2, 2, 1]), false);
        assert!(matches!(
            tape.pool(PoolKind::Avg, input, (5, 5), (1, 1), (0, 0)),
            Err(TensorError::InvalidGeometry { .. })
        ));
    }

    #[test]
    fn concat_single_is_identity_and_slice_round_trips() {
        let mut rng = crate::rng::Rng::new(8);
        let a = Tensor::randn(&[2, 2, 2], 1.0, &mut rng);
        let b = Tensor::randn(&[2, 2, 2], 1.0, &mut rng);
        let mut tape = Tape::new();
        let ia = tape.leaf(a.clone(), false);
        let ib = tape.leaf(b.clone(), false);
        let single = tape.concat(&[ia], 2).unwrap();
        assert_eq!(tape.value(single), &a);
        let both = tape.concat(&[ia, ib], 2).unwrap();
        assert_eq!(tape.shape(both), &[2, 2, 4]);
        let back_a = tape.slice_axis(both, 2, 0, 2).unwrap();
        let back_b = tape.slice_axis(both, 2, 2, 2).unwrap();
        assert_eq!(tape.value(back_a), &a);
        assert_eq!(tape.value(back_b), &b);
    }

    #[test]
    fn concat_mismatched_extents_rejected() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]), false);
        let b = tape.leaf(Tensor::zeros(&[3, 3]), false);
        assert!(tape.concat(&[a, b], 1).is_err());
    }

    #[test]
    fn log_softmax_symmetry_and_shift_invariance() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[2], &[0.0, 0.0]), false);
        let out = tape.log_softmax(a).unwrap();
        for &v in tape.value(out).data() {
            assert!((v - 0.5f64.ln()).abs() < 1e-15);
        }
        let b = tape.leaf(t(&[3], &[1.0, 2.0, 3.0]), false);
        let shifted = tape.add_scalar(b, 17.25).unwrap();
        let lb = tape.log_softmax(b).unwrap();
        let ls = tape.log_softmax(shifted).unwrap();
        for (x, y) in tape.value(lb).data().iter().zip(tape.value(ls).data()) {
            assert!((x - y).abs() < 1e-12);
        }
        // direct evaluation oracle for [1,2,3]
        let probs: Vec<f64> = tape.value(lb).data().iter().map(|&v| v.exp()).collect();
        let expected = [0.0900, 0.2447, 0.6652];
        for (p, e) in probs.iter().zip(expected) {
            assert!((p - e).abs() < 5e-5, "{p} vs {e}");
        }
        let total: f64 = probs.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[5.0, -1.0, 2.0]), true);
        let s = tape.sum_all(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn detached_leaf_gets_zero_grad() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]), true);
        let y = tape.leaf(t(&[2], &[3.0, 4.0]), true);
        let s = tape.sum_all(y).unwrap();
        tape.backward(s).unwrap();
        assert!(tape.grad(x).is_none());
        assert_eq!(tape.grad_or_zeros(x).data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_from_non_scalar_is_contract_violation() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]), true);
        assert!(matches!(
            tape.backward(x),
            Err(TensorError::Contract { .. })
        ));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]), true);
        let s = tape.sum_all(x).unwrap();
        tape.backward(s).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 2.0]);
        tape.zero_grads();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn dropout_rate_zero_and_eval_are_identity() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[4], &[1.0, 2.0, 3.0, 4.0]), false);
        assert_eq!(tape.dropout(x, 0.0, Phase::Train, 1).unwrap(), x);
        assert_eq!(tape.dropout(x, 0.9, Phase::Eval, 1).unwrap(), x);
        assert!(tape.dropout(x, 1.0, Phase::Train, 1).is_err());
    }

    #[test]
    fn dropout_survivor_fraction() {
        let n = 100_000;
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::full(&[n], 1.0), false);
        let y = tape.dropout(x, 0.5, Phase::Train, 99).unwrap();
        let survivors = tape.value(y).data().iter().filter(|&&v| v != 0.0).count();
        let fraction = survivors as f64 / n as f64;
        assert!((fraction - 0.5).abs() < 0.01, "fraction {fraction}");
        // determinism
        let mut tape2 = Tape::new();
        let x2 = tape2.leaf(Tensor::full(&[n], 1.0), false);
        let y2 = tape2.dropout(x2, 0.5, Phase::Train, 99).unwrap();
        assert_eq!(tape.value(y), tape2.value(y2));
    }

    #[test]
    fn sum_axis_last() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), false);
        let s = tape.sum_axis(x, 1).unwrap();
        assert_eq!(tape.shape(s), &[2]);
        assert_eq!(tape.value(s).data(), &[6.0, 15.0]);
        let s0 = tape.sum_axis(x, 0).unwrap();
        assert_eq!(tape.value(s0).data(), &[5.0, 7.0, 9.0]);
    }

    #[test]
    fn spatial_mean_is_gap() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 2, 2], &[1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0]), false);
        let m = tape.spatial_mean(x).unwrap();
        assert_eq!(tape.value(m).data(), &[2.5, 25.0]);
    }

    #[test]
    fn first_non_finite_names_the_node() {
        let mut tape = Tape::new();
        let x = tape.named_leaf("weights", t(&[1], &[f64::NAN]), false);
        let _ = x;
        let report = tape.first_non_finite().unwrap();
        assert!(report.contains("weights"), "{report}");
    }
}
