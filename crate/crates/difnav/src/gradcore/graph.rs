//! Eager reverse-mode autodiff graph.
//!
//! Every op validates shapes, computes its value immediately, and records
//! enough structure for an exact backward pass. Node ids are creation order,
//! so reverse iteration is already a reverse topological order.

use crate::error::{Error, Result};
use crate::gradcore::tensor::ParamSet;
use std::collections::HashMap;

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param { name: String },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// a[r,c] + b[c] broadcast over rows.
    AddRow(NodeId, NodeId),
    /// a[c,l] + b[c] broadcast along the length axis.
    AddChan(NodeId, NodeId),
    /// a[c,l] * s[c] broadcast along the length axis.
    MulChan(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    Gelu(NodeId),
    Mish(NodeId),
    Sigmoid(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    },
    /// Row-wise softmax over the last axis; masked entries get exactly zero
    /// weight and zero gradient.
    SoftmaxMasked {
        x: NodeId,
        mask: Option<Vec<bool>>,
    },
    Conv1d {
        x: NodeId,
        w: NodeId,
        stride: usize,
        padding: usize,
    },
    GatherRows {
        x: NodeId,
        idx: Vec<usize>,
    },
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceRows {
        x: NodeId,
        start: usize,
        end: usize,
    },
    SliceCols {
        x: NodeId,
        start: usize,
        end: usize,
    },
    MeanRows(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    Reshape(NodeId),
    /// Mean binary cross-entropy against fixed targets, computed from logits
    /// in the stable softplus form. `pos_weight` scales the positive term.
    BceWithLogits {
        z: NodeId,
        targets: Vec<f64>,
        pos_weight: f64,
    },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    value: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_nodes: HashMap<String, NodeId>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn dims2(shape: &[usize], op: &'static str) -> Result<(usize, usize)> {
    if shape.len() != 2 {
        return Err(Error::ShapeMismatch {
            op,
            lhs: shape.to_vec(),
            rhs: vec![],
        });
    }
    Ok((shape[0], shape[1]))
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-(x.abs())).exp().ln_1p()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_deriv(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn mish(x: f64) -> f64 {
    x * softplus(x).tanh()
}

fn mish_deriv(x: f64) -> f64 {
    let sp = softplus(x);
    let t = sp.tanh();
    t + x * (1.0 - t * t) * stable_sigmoid(x)
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].shape
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].value
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id].value.len(), 1);
        self.nodes[id].value[0]
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<f64>) -> NodeId {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node { op, shape, value });
        self.nodes.len() - 1
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<NodeId> {
        if numel(&shape) != data.len() {
            return Err(Error::Parameter(format!(
                "input shape {:?} needs {} values, got {}",
                shape,
                numel(&shape),
                data.len()
            )));
        }
        Ok(self.push(Op::Input, shape, data))
    }

    /// Constant row vector with shape [1, n].
    pub fn row_input(&mut self, data: Vec<f64>) -> NodeId {
        let n = data.len();
        self.push(Op::Input, vec![1, n], data)
    }

    /// Parameter leaf. Repeated requests for the same name return the same
    /// node so gradient contributions accumulate in one place.
    pub fn param(&mut self, params: &ParamSet, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.param_nodes.get(name) {
            return Ok(id);
        }
        let tensor = params
            .get(name)
            .ok_or_else(|| Error::Parameter(format!("unknown parameter '{name}'")))?;
        let id = self.push(
            Op::Param {
                name: name.to_string(),
            },
            tensor.shape().to_vec(),
            tensor.data().to_vec(),
        );
        self.param_nodes.insert(name.to_string(), id);
        Ok(id)
    }

    fn binary_same_shape(
        &mut self,
        op_name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        if self.nodes[a].shape != self.nodes[b].shape {
            return Err(Error::ShapeMismatch {
                op: op_name,
                lhs: self.nodes[a].shape.clone(),
                rhs: self.nodes[b].shape.clone(),
            });
        }
        let shape = self.nodes[a].shape.clone();
        let value: Vec<f64> = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.push(op, shape, value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (r, c) = dims2(&self.nodes[a].shape, "add_row")?;
        if self.nodes[b].shape != [c] {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                lhs: self.nodes[a].shape.clone(),
                rhs: self.nodes[b].shape.clone(),
            });
        }
        let mut value = self.nodes[a].value.clone();
        for i in 0..r {
            for j in 0..c {
                value[i * c + j] += self.nodes[b].value[j];
            }
        }
        Ok(self.push(Op::AddRow(a, b), vec![r, c], value))
    }

    pub fn add_chan(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (c, l) = dims2(&self.nodes[a].shape, "add_chan")?;
        if self.nodes[b].shape != [c] {
            return Err(Error::ShapeMismatch {
                op: "add_chan",
                lhs: self.nodes[a].shape.clone(),
                rhs: self.nodes[b].shape.clone(),
            });
        }
        let mut value = self.nodes[a].value.clone();
        for ch in 0..c {
            for t in 0..l {
                value[ch * l + t] += self.nodes[b].value[ch];
            }
        }
        Ok(self.push(Op::AddChan(a, b), vec![c, l], value))
    }

    pub fn mul_chan(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        let (c, l) = dims2(&self.nodes[a].shape, "mul_chan")?;
        if self.nodes[s].shape != [c] {
            return Err(Error::ShapeMismatch {
                op: "mul_chan",
                lhs: self.nodes[a].shape.clone(),
                rhs: self.nodes[s].shape.clone(),
            });
        }
        let mut value = self.nodes[a].value.clone();
        for ch in 0..c {
            for t in 0..l {
                value[ch * l + t] *= self.nodes[s].value[ch];
            }
        }
        Ok(self.push(Op::MulChan(a, s), vec![c, l], value))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let shape = self.nodes[a].shape.clone();
        let value = self.nodes[a].value.iter().map(|&x| x * k).collect();
        self.push(Op::Scale(a, k), shape, value)
    }

    pub fn add_scalar(&mut self, a: NodeId, k: f64) -> NodeId {
        let shape = self.nodes[a].shape.clone();
        let value = self.nodes[a].value.iter().map(|&x| x + k).collect();
        self.push(Op::AddScalar(a), shape, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, ka) = dims2(&self.nodes[a].shape, "matmul")?;
        let (kb, n) = dims2(&self.nodes[b].shape, "matmul")?;
        if ka != kb {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.nodes[a].shape.clone(),
                rhs: self.nodes[b].shape.clone(),
            });
        }
        let av = &self.nodes[a].value;
        let bv = &self.nodes[b].value;
        let mut value = vec![0.0; m * n];
        for i in 0..m {
            for k in 0..ka {
                let aik = av[i * ka + k];
                if aik == 0.0 {
                    continue;
                }
                let brow = &bv[k * n..(k + 1) * n];
                let out = &mut value[i * n..(i + 1) * n];
                for j in 0..n {
                    out[j] += aik * brow[j];
                }
            }
        }
        Ok(self.push(Op::Matmul(a, b), vec![m, n], value))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = dims2(&self.nodes[a].shape, "transpose")?;
        let av = &self.nodes[a].value;
        let mut value = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                value[j * m + i] = av[i * n + j];
            }
        }
        Ok(self.push(Op::Transpose(a), vec![n, m], value))
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let shape = self.nodes[a].shape.clone();
        let value = self.nodes[a].value.iter().map(|&x| f(x)).collect();
        self.push(op, shape, value)
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, gelu, Op::Gelu(a))
    }

    pub fn mish(&mut self, a: NodeId) -> NodeId {
        self.unary(a, mish, Op::Mish(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, stable_sigmoid, Op::Sigmoid(a))
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        if eps <= 0.0 {
            return Err(Error::Parameter(format!(
                "layer_norm eps must be positive, got {eps}"
            )));
        }
        let (r, c) = dims2(&self.nodes[x].shape, "layer_norm")?;
        if self.nodes[gain].shape != [c] || self.nodes[bias].shape != [c] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: self.nodes[x].shape.clone(),
                rhs: self.nodes[gain].shape.clone(),
            });
        }
        let xv = &self.nodes[x].value;
        let gv = &self.nodes[gain].value;
        let bv = &self.nodes[bias].value;
        let mut value = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..c {
                value[i * c + j] = gv[j] * (row[j] - mean) * inv + bv[j];
            }
        }
        Ok(self.push(Op::LayerNorm { x, gain, bias, eps }, vec![r, c], value))
    }

    pub fn softmax_masked(&mut self, x: NodeId, mask: Option<&[bool]>) -> Result<NodeId> {
        let (r, c) = dims2(&self.nodes[x].shape, "softmax")?;
        if let Some(m) = mask {
            if m.len() != r * c {
                return Err(Error::ShapeMismatch {
                    op: "softmax",
                    lhs: vec![r, c],
                    rhs: vec![m.len()],
                });
            }
        }
        let xv = &self.nodes[x].value;
        let mut value = vec![0.0; r * c];
        for i in 0..r {
            let keep = |j: usize| mask.is_none_or(|m| m[i * c + j]);
            let mut max = f64::NEG_INFINITY;
            for j in 0..c {
                if keep(j) {
                    max = max.max(xv[i * c + j]);
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(Error::DegenerateMask(i));
            }
            let mut denom = 0.0;
            for j in 0..c {
                if keep(j) {
                    let e = (xv[i * c + j] - max).exp();
                    value[i * c + j] = e;
                    denom += e;
                }
            }
            for j in 0..c {
                value[i * c + j] /= denom;
            }
        }
        Ok(self.push(
            Op::SoftmaxMasked {
                x,
                mask: mask.map(|m| m.to_vec()),
            },
            vec![r, c],
            value,
        ))
    }

    /// Scaled dot-product attention: softmax(q kᵀ / sqrt(d), mask) v.
    /// `mask[i*n + j] = false` forbids query i from attending to key j.
    pub fn attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        mask: Option<&[bool]>,
    ) -> Result<NodeId> {
        let (_, dq) = dims2(&self.nodes[q].shape, "attention")?;
        let (nk, dk) = dims2(&self.nodes[k].shape, "attention")?;
        let (nv, _) = dims2(&self.nodes[v].shape, "attention")?;
        if dq != dk || nk != nv {
            return Err(Error::ShapeMismatch {
                op: "attention",
                lhs: self.nodes[q].shape.clone(),
                rhs: self.nodes[k].shape.clone(),
            });
        }
        let kt = self.transpose(k)?;
        let scores = self.matmul(q, kt)?;
        let scaled = self.scale(scores, 1.0 / (dq as f64).sqrt());
        let weights = self.softmax_masked(scaled, mask)?;
        self.matmul(weights, v)
    }

    /// Cross-correlation along the sequence axis. x is [c_in, l], w is
    /// [c_out, c_in, k]; zero padding on both sides.
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, stride: usize, padding: usize) -> Result<NodeId> {
        if stride == 0 {
            return Err(Error::Parameter("conv1d stride must be >= 1".into()));
        }
        let (c_in, l_in) = dims2(&self.nodes[x].shape, "conv1d")?;
        let wshape = self.nodes[w].shape.clone();
        if wshape.len() != 3 || wshape[1] != c_in {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                lhs: vec![c_in, l_in],
                rhs: wshape,
            });
        }
        let (c_out, k) = (wshape[0], wshape[2]);
        let padded = l_in + 2 * padding;
        if k > padded {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                lhs: vec![c_in, l_in],
                rhs: wshape,
            });
        }
        let l_out = (padded - k) / stride + 1;
        let xv = &self.nodes[x].value;
        let wv = &self.nodes[w].value;
        let mut value = vec![0.0; c_out * l_out];
        for o in 0..c_out {
            for t in 0..l_out {
                let mut acc = 0.0;
                for i in 0..c_in {
                    for dk in 0..k {
                        let pos = t * stride + dk;
                        if pos < padding || pos - padding >= l_in {
                            continue;
                        }
                        acc += xv[i * l_in + (pos - padding)] * wv[(o * c_in + i) * k + dk];
                    }
                }
                value[o * l_out + t] = acc;
            }
        }
        Ok(self.push(
            Op::Conv1d {
                x,
                w,
                stride,
                padding,
            },
            vec![c_out, l_out],
            value,
        ))
    }

    pub fn gather_rows(&mut self, x: NodeId, idx: &[usize]) -> Result<NodeId> {
        let (r, c) = dims2(&self.nodes[x].shape, "gather_rows")?;
        for &i in idx {
            if i >= r {
                return Err(Error::Parameter(format!(
                    "gather_rows index {i} out of range for {r} rows"
                )));
            }
        }
        let xv = &self.nodes[x].value;
        let mut value = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            value.extend_from_slice(&xv[i * c..(i + 1) * c]);
        }
        Ok(self.push(
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            vec![idx.len(), c],
            value,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Parameter("concat_rows needs at least one input".into()));
        }
        let (_, c) = dims2(&self.nodes[parts[0]].shape, "concat_rows")?;
        let mut rows = 0;
        for &p in parts {
            let (pr, pc) = dims2(&self.nodes[p].shape, "concat_rows")?;
            if pc != c {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.nodes[parts[0]].shape.clone(),
                    rhs: self.nodes[p].shape.clone(),
                });
            }
            rows += pr;
        }
        let mut value = Vec::with_capacity(rows * c);
        for &p in parts {
            value.extend_from_slice(&self.nodes[p].value);
        }
        Ok(self.push(Op::ConcatRows(parts.to_vec()), vec![rows, c], value))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Parameter("concat_cols needs at least one input".into()));
        }
        let (r, _) = dims2(&self.nodes[parts[0]].shape, "concat_cols")?;
        let mut cols = 0;
        for &p in parts {
            let (pr, pc) = dims2(&self.nodes[p].shape, "concat_cols")?;
            if pr != r {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.nodes[parts[0]].shape.clone(),
                    rhs: self.nodes[p].shape.clone(),
                });
            }
            cols += pc;
        }
        let mut value = Vec::with_capacity(r * cols);
        for i in 0..r {
            for &p in parts {
                let pc = self.nodes[p].shape[1];
                value.extend_from_slice(&self.nodes[p].value[i * pc..(i + 1) * pc]);
            }
        }
        Ok(self.push(Op::ConcatCols(parts.to_vec()), vec![r, cols], value))
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let (r, c) = dims2(&self.nodes[x].shape, "slice_rows")?;
        if start >= end || end > r {
            return Err(Error::Parameter(format!(
                "slice_rows range {start}..{end} invalid for {r} rows"
            )));
        }
        let value = self.nodes[x].value[start * c..end * c].to_vec();
        Ok(self.push(Op::SliceRows { x, start, end }, vec![end - start, c], value))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let (r, c) = dims2(&self.nodes[x].shape, "slice_cols")?;
        if start >= end || end > c {
            return Err(Error::Parameter(format!(
                "slice_cols range {start}..{end} invalid for {c} cols"
            )));
        }
        let xv = &self.nodes[x].value;
        let mut value = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            value.extend_from_slice(&xv[i * c + start..i * c + end]);
        }
        Ok(self.push(Op::SliceCols { x, start, end }, vec![r, end - start], value))
    }

    pub fn mean_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (r, c) = dims2(&self.nodes[x].shape, "mean_rows")?;
        let xv = &self.nodes[x].value;
        let mut value = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                value[j] += xv[i * c + j];
            }
        }
        for v in &mut value {
            *v /= r as f64;
        }
        Ok(self.push(Op::MeanRows(x), vec![1, c], value))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let total: f64 = self.nodes[x].value.iter().sum();
        self.push(Op::SumAll(x), vec![1], vec![total])
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = self.nodes[x].value.len().max(1);
        let total: f64 = self.nodes[x].value.iter().sum();
        self.push(Op::MeanAll(x), vec![1], vec![total / n as f64])
    }

    pub fn reshape(&mut self, x: NodeId, new_shape: Vec<usize>) -> Result<NodeId> {
        if numel(&new_shape) != self.nodes[x].value.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.nodes[x].shape.clone(),
                rhs: new_shape,
            });
        }
        let value = self.nodes[x].value.clone();
        Ok(self.push(Op::Reshape(x), new_shape, value))
    }

    /// Mean squared error between two same-shape nodes (mean over elements).
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean_all(sq))
    }

    /// Mean binary cross-entropy from logits; `targets` in [0, 1], fixed.
    pub fn bce_with_logits(
        &mut self,
        z: NodeId,
        targets: &[f64],
        pos_weight: f64,
    ) -> Result<NodeId> {
        if targets.len() != self.nodes[z].value.len() {
            return Err(Error::ShapeMismatch {
                op: "bce_with_logits",
                lhs: self.nodes[z].shape.clone(),
                rhs: vec![targets.len()],
            });
        }
        if pos_weight <= 0.0 {
            return Err(Error::Parameter(format!(
                "bce pos_weight must be positive, got {pos_weight}"
            )));
        }
        let n = targets.len() as f64;
        let mut total = 0.0;
        for (&zi, &ti) in self.nodes[z].value.iter().zip(targets) {
            total += pos_weight * ti * softplus(-zi) + (1.0 - ti) * softplus(zi);
        }
        Ok(self.push(
            Op::BceWithLogits {
                z,
                targets: targets.to_vec(),
                pos_weight,
            },
            vec![1],
            vec![total / n],
        ))
    }

    /// Reverse pass from a scalar loss. Gradients accumulate into `params`:
    /// existing grads are added to, missing ones are created, and parameters
    /// the loss never touched end up with explicit zeros.
    pub fn backward(&self, loss: NodeId, params: &mut ParamSet) -> Result<()> {
        if self.nodes[loss].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss] = Some(vec![1.0]);

        for id in (0..=loss).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Input => {}
                Op::Param { name } => {
                    let tensor = params.get_mut(name).ok_or_else(|| {
                        Error::Parameter(format!("parameter '{name}' missing at backward"))
                    })?;
                    tensor.accumulate_grad(&g)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    accumulate(&mut grads, *b, &g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    let neg: Vec<f64> = g.iter().map(|&v| -v).collect();
                    accumulate(&mut grads, *b, &neg);
                }
                Op::Mul(a, b) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[*b].value)
                        .map(|(&gv, &bv)| gv * bv)
                        .collect();
                    let gb: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[*a].value)
                        .map(|(&gv, &av)| gv * av)
                        .collect();
                    accumulate(&mut grads, *a, &ga);
                    accumulate(&mut grads, *b, &gb);
                }
                Op::AddRow(a, b) => {
                    let (r, c) = (node.shape[0], node.shape[1]);
                    accumulate(&mut grads, *a, &g);
                    let mut gb = vec![0.0; c];
                    for i in 0..r {
                        for j in 0..c {
                            gb[j] += g[i * c + j];
                        }
                    }
                    accumulate(&mut grads, *b, &gb);
                }
                Op::AddChan(a, b) => {
                    let (c, l) = (node.shape[0], node.shape[1]);
                    accumulate(&mut grads, *a, &g);
                    let mut gb = vec![0.0; c];
                    for ch in 0..c {
                        for t in 0..l {
                            gb[ch] += g[ch * l + t];
                        }
                    }
                    accumulate(&mut grads, *b, &gb);
                }
                Op::MulChan(a, s) => {
                    let (c, l) = (node.shape[0], node.shape[1]);
                    let sv = &self.nodes[*s].value;
                    let av = &self.nodes[*a].value;
                    let mut ga = vec![0.0; c * l];
                    let mut gs = vec![0.0; c];
                    for ch in 0..c {
                        for t in 0..l {
                            ga[ch * l + t] = g[ch * l + t] * sv[ch];
                            gs[ch] += g[ch * l + t] * av[ch * l + t];
                        }
                    }
                    accumulate(&mut grads, *a, &ga);
                    accumulate(&mut grads, *s, &gs);
                }
                Op::Scale(a, k) => {
                    let ga: Vec<f64> = g.iter().map(|&v| v * k).collect();
                    accumulate(&mut grads, *a, &ga);
                }
                Op::AddScalar(a) => {
                    accumulate(&mut grads, *a, &g);
                }
                Op::Matmul(a, b) => {
                    let (m, k) = (self.nodes[*a].shape[0], self.nodes[*a].shape[1]);
                    let n = self.nodes[*b].shape[1];
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    // dA = G Bᵀ, dB = Aᵀ G
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        for kk in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g[i * n + j] * bv[kk * n + j];
                            }
                            ga[i * k + kk] = acc;
                        }
                    }
                    let mut gb = vec![0.0; k * n];
                    for kk in 0..k {
                        for i in 0..m {
                            let aik = av[i * k + kk];
                            if aik == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                gb[kk * n + j] += aik * g[i * n + j];
                            }
                        }
                    }
                    accumulate(&mut grads, *a, &ga);
                    accumulate(&mut grads, *b, &gb);
                }
                Op::Transpose(a) => {
                    let (n, m) = (node.shape[0], node.shape[1]);
                    let mut ga = vec![0.0; m * n];
                    for i in 0..n {
                        for j in 0..m {
                            ga[j * n + i] = g[i * m + j];
                        }
                    }
                    accumulate(&mut grads, *a, &ga);
                }
                Op::Gelu(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[*a].value)
                        .map(|(&gv, &x)| gv * gelu_deriv(x))
                        .collect();
                    accumulate(&mut grads, *a, &ga);
                }
                Op::Mish(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[*a].value)
                        .map(|(&gv, &x)| gv * mish_deriv(x))
                        .collect();
                    accumulate(&mut grads, *a, &ga);
                }
                Op::Sigmoid(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&node.value)
                        .map(|(&gv, &y)| gv * y * (1.0 - y))
                        .collect();
                    accumulate(&mut grads, *a, &ga);
                }
                Op::LayerNorm { x, gain, bias, eps } => {
                    let (r, c) = (node.shape[0], node.shape[1]);
                    let xv = &self.nodes[*x].value;
                    let gv = &self.nodes[*gain].value;
                    let mut gx = vec![0.0; r * c];
                    let mut ggain = vec![0.0; c];
                    let mut gbias = vec![0.0; c];
                    for i in 0..r {
                        let row = &xv[i * c..(i + 1) * c];
                        let mean = row.iter().sum::<f64>() / c as f64;
                        let var =
                            row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                        let inv = 1.0 / (var + eps).sqrt();
                        let xhat: Vec<f64> = row.iter().map(|&v| (v - mean) * inv).collect();
                        let dy = &g[i * c..(i + 1) * c];
                        let mut dot1 = 0.0;
                        let mut dot2 = 0.0;
                        for j in 0..c {
                            let gdy = gv[j] * dy[j];
                            dot1 += gdy;
                            dot2 += gdy * xhat[j];
                            ggain[j] += dy[j] * xhat[j];
                            gbias[j] += dy[j];
                        }
                        let n = c as f64;
                        for j in 0..c {
                            let gdy = gv[j] * dy[j];
                            gx[i * c + j] = inv * (gdy - dot1 / n - xhat[j] * dot2 / n);
                        }
                    }
                    accumulate(&mut grads, *x, &gx);
                    accumulate(&mut grads, *gain, &ggain);
                    accumulate(&mut grads, *bias, &gbias);
                }
                Op::SoftmaxMasked { x, mask } => {
                    let (r, c) = (node.shape[0], node.shape[1]);
                    let y = &node.value;
                    let mut gx = vec![0.0; r * c];
                    for i in 0..r {
                        let keep =
                            |j: usize| mask.as_ref().is_none_or(|m| m[i * c + j]);
                        let mut dot = 0.0;
                        for j in 0..c {
                            if keep(j) {
                                dot += g[i * c + j] * y[i * c + j];
                            }
                        }
                        for j in 0..c {
                            if keep(j) {
                                gx[i * c + j] = y[i * c + j] * (g[i * c + j] - dot);
                            }
                        }
                    }
                    accumulate(&mut grads, *x, &gx);
                }
                Op::Conv1d {
                    x,
                    w,
                    stride,
                    padding,
                } => {
                    let (c_out, l_out) = (node.shape[0], node.shape[1]);
                    let (c_in, l_in) = (self.nodes[*x].shape[0], self.nodes[*x].shape[1]);
                    let k = self.nodes[*w].shape[2];
                    let xv = &self.nodes[*x].value;
                    let wv = &self.nodes[*w].value;
                    let mut gx = vec![0.0; c_in * l_in];
                    let mut gw = vec![0.0; c_out * c_in * k];
                    for o in 0..c_out {
                        for t in 0..l_out {
                            let go = g[o * l_out + t];
                            if go == 0.0 {
                                continue;
                            }
                            for i in 0..c_in {
                                for dk in 0..k {
                                    let pos = t * stride + dk;
                                    if pos < *padding || pos - padding >= l_in {
                                        continue;
                                    }
                                    let xi = pos - padding;
                                    gx[i * l_in + xi] += go * wv[(o * c_in + i) * k + dk];
                                    gw[(o * c_in + i) * k + dk] += go * xv[i * l_in + xi];
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *x, &gx);
                    accumulate(&mut grads, *w, &gw);
                }
                Op::GatherRows { x, idx } => {
                    let c = node.shape[1];
                    let rows = self.nodes[*x].shape[0];
                    let mut gx = vec![0.0; rows * c];
                    for (out_row, &src) in idx.iter().enumerate() {
                        for j in 0..c {
                            gx[src * c + j] += g[out_row * c + j];
                        }
                    }
                    accumulate(&mut grads, *x, &gx);
                }
                Op::ConcatRows(parts) => {
                    let c = node.shape[1];
                    let mut offset = 0;
                    for &p in parts {
                        let pr = self.nodes[p].shape[0];
                        accumulate(&mut grads, p, &g[offset * c..(offset + pr) * c]);
                        offset += pr;
                    }
                }
                Op::ConcatCols(parts) => {
                    let r = node.shape[0];
                    let c = node.shape[1];
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.nodes[p].shape[1];
                        let mut gp = vec![0.0; r * pc];
                        for i in 0..r {
                            gp[i * pc..(i + 1) * pc]
                                .copy_from_slice(&g[i * c + offset..i * c + offset + pc]);
                        }
                        accumulate(&mut grads, p, &gp);
                        offset += pc;
                    }
                }
                Op::SliceRows { x, start, end } => {
                    let c = node.shape[1];
                    let rows = self.nodes[*x].shape[0];
                    let mut gx = vec![0.0; rows * c];
                    gx[start * c..end * c].copy_from_slice(&g);
                    accumulate(&mut grads, *x, &gx);
                }
                Op::SliceCols { x, start, end } => {
                    let r = node.shape[0];
                    let c = self.nodes[*x].shape[1];
                    let w = end - start;
                    let mut gx = vec![0.0; r * c];
                    for i in 0..r {
                        gx[i * c + start..i * c + end].copy_from_slice(&g[i * w..(i + 1) * w]);
                    }
                    accumulate(&mut grads, *x, &gx);
                }
                Op::MeanRows(x) => {
                    let c = node.shape[1];
                    let rows = self.nodes[*x].shape[0];
                    let mut gx = vec![0.0; rows * c];
                    for i in 0..rows {
                        for j in 0..c {
                            gx[i * c + j] = g[j] / rows as f64;
                        }
                    }
                    accumulate(&mut grads, *x, &gx);
                }
                Op::SumAll(x) => {
                    let n = self.nodes[*x].value.len();
                    let gx = vec![g[0]; n];
                    accumulate(&mut grads, *x, &gx);
                }
                Op::MeanAll(x) => {
                    let n = self.nodes[*x].value.len();
                    let gx = vec![g[0] / n as f64; n];
                    accumulate(&mut grads, *x, &gx);
                }
                Op::Reshape(x) => {
                    accumulate(&mut grads, *x, &g);
                }
                Op::BceWithLogits {
                    z,
                    targets,
                    pos_weight,
                } => {
                    let n = targets.len() as f64;
                    let zv = &self.nodes[*z].value;
                    let gz: Vec<f64> = zv
                        .iter()
                        .zip(targets)
                        .map(|(&zi, &ti)| {
                            let s = stable_sigmoid(zi);
                            g[0] * (-pos_weight * ti * (1.0 - s) + (1.0 - ti) * s) / n
                        })
                        .collect();
                    accumulate(&mut grads, *z, &gz);
                }
            }
        }

        for (_, tensor) in params.iter_mut() {
            if tensor.grad().is_none() {
                let n = tensor.numel();
                tensor.set_grad(vec![0.0; n])?;
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, g: &[f64]) {
    match &mut grads[id] {
        Some(existing) => {
            for (e, &v) in existing.iter_mut().zip(g) {
                *e += v;
            }
        }
        slot @ None => {
            *slot = Some(g.to_vec());
        }
    }
}
