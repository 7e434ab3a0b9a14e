//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records a directed acyclic graph of tensor operations as it
//! evaluates them. [`Tape::backward`] walks the tape once in reverse,
//! accumulating gradients for tracked input tensors and flushing parameter
//! gradients into the owning [`ParameterStore`].
//!
//! The op set is intentionally small: exactly what the unrolled networks
//! and their losses need. There is no broadcasting and no graph fusion.

pub mod conv;
pub mod gradcheck;
mod store;

use std::sync::Arc;

pub use store::{Param, ParamId, ParameterStore};

use crate::error::{Error, Result};
use crate::operators::LinearOperator;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub usize);

enum Op {
    /// Constant input (no gradient tracked).
    Leaf,
    /// Input with gradient tracked across backward calls.
    Var,
    /// Copy of a parameter value from the store.
    Param(ParamId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// scalar (1-element node) times tensor
    ScalarMul {
        scalar: NodeId,
        tensor: NodeId,
    },
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
    },
    Relu(NodeId),
    SoftThreshold {
        input: NodeId,
        theta: NodeId,
    },
    Softplus(NodeId),
    Reciprocal(NodeId),
    LinearApply {
        input: NodeId,
        op: Arc<dyn LinearOperator>,
    },
    LinearAdjoint {
        input: NodeId,
        op: Arc<dyn LinearOperator>,
    },
    /// Solves (A^T A + rho I) x = rhs for the captured operator.
    NormalSolve {
        rhs: NodeId,
        rho: NodeId,
        op: Arc<dyn LinearOperator>,
    },
    ConcatChannels(Vec<NodeId>),
    SliceChannels {
        input: NodeId,
        start: usize,
        len: usize,
    },
    Sum(NodeId),
    SumSquares(NodeId),
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Records operations for one forward pass; single-threaded per instance.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// Persistent gradients for `Var` leaves, accumulated across backward calls.
    var_grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last backward root w.r.t. a `Var` leaf.
    pub fn var_grad(&self, id: NodeId) -> Option<&[f64]> {
        self.var_grads[id.0].as_deref()
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        self.var_grads.push(None);
        id
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Constant input; no gradient is tracked through it.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    pub fn constant(&mut self, value: f64) -> NodeId {
        self.leaf(Tensor::scalar(value))
    }

    /// Input whose gradient is retained on the tape (for tests and probes).
    pub fn var(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Var, value, true)
    }

    /// Copy a parameter value from the store onto the tape. The store must
    /// not be mutated while this tape is alive.
    pub fn param(&mut self, store: &ParameterStore, id: ParamId) -> NodeId {
        self.push(Op::Param(id), store.value(id).clone_value(), true)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add(a, b), v, ng))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Sub(a, b), v, ng))
    }

    pub fn scalar_mul(&mut self, scalar: NodeId, tensor: NodeId) -> Result<NodeId> {
        let s = self.value(scalar).scalar_value()?;
        let v = self.value(tensor).scale(s);
        let ng = self.needs(scalar) || self.needs(tensor);
        Ok(self.push(Op::ScalarMul { scalar, tensor }, v, ng))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let x = self.value(input);
        let data = x.data.iter().map(|&v| v.max(0.0)).collect();
        let v = Tensor {
            shape: x.shape.clone(),
            data,
            requires_grad: false,
            grad: None,
        };
        let ng = self.needs(input);
        self.push(Op::Relu(input), v, ng)
    }

    /// Elementwise soft threshold with a learnable scalar threshold node.
    pub fn soft_threshold(&mut self, input: NodeId, theta: NodeId) -> Result<NodeId> {
        let t = self.value(theta).scalar_value()?;
        if t < 0.0 {
            return Err(Error::Argument(format!(
                "soft_threshold requires theta >= 0, got {t}"
            )));
        }
        let v = crate::tensor::soft_threshold(self.value(input), t)?;
        let ng = self.needs(input) || self.needs(theta);
        Ok(self.push(Op::SoftThreshold { input, theta }, v, ng))
    }

    pub fn softplus(&mut self, input: NodeId) -> NodeId {
        let x = self.value(input);
        let data = x.data.iter().map(|&v| softplus(v)).collect();
        let v = Tensor {
            shape: x.shape.clone(),
            data,
            requires_grad: false,
            grad: None,
        };
        let ng = self.needs(input);
        self.push(Op::Softplus(input), v, ng)
    }

    pub fn reciprocal(&mut self, input: NodeId) -> NodeId {
        let x = self.value(input);
        let data = x.data.iter().map(|&v| 1.0 / v).collect();
        let v = Tensor {
            shape: x.shape.clone(),
            data,
            requires_grad: false,
            grad: None,
        };
        let ng = self.needs(input);
        self.push(Op::Reciprocal(input), v, ng)
    }

    /// 3x3 convolution, zero padding 1, stride 1, same spatial size.
    pub fn conv2d(&mut self, input: NodeId, kernel: NodeId, bias: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        let k = self.value(kernel);
        let b = self.value(bias);
        if x.shape.len() != 3 {
            return Err(Error::Shape(format!(
                "conv2d input must be [H,W,C], got {:?}",
                x.shape
            )));
        }
        let (h, w, cin) = (x.shape[0], x.shape[1], x.shape[2]);
        if k.shape.len() != 4 || k.shape[0] != 3 || k.shape[1] != 3 {
            return Err(Error::Shape(format!(
                "conv2d kernel must be [3,3,Cin,Cout], got {:?}",
                k.shape
            )));
        }
        if k.shape[2] != cin {
            return Err(Error::Shape(format!(
                "conv2d channel mismatch: input has {cin}, kernel expects {}",
                k.shape[2]
            )));
        }
        if h < 3 || w < 3 {
            return Err(Error::Shape(format!(
                "conv2d spatial dims must be >= 3, got {h}x{w}"
            )));
        }
        let cout = k.shape[3];
        if b.shape != [cout] {
            return Err(Error::Shape(format!(
                "conv2d bias must be [{cout}], got {:?}",
                b.shape
            )));
        }
        let mut out = vec![0.0; h * w * cout];
        conv::forward(&x.data, h, w, cin, &k.data, cout, &b.data, &mut out);
        let v = Tensor::new(vec![h, w, cout], out)?;
        let ng = self.needs(input) || self.needs(kernel) || self.needs(bias);
        Ok(self.push(
            Op::Conv2d {
                input,
                kernel,
                bias,
            },
            v,
            ng,
        ))
    }

    pub fn linear_apply(&mut self, op: &Arc<dyn LinearOperator>, input: NodeId) -> Result<NodeId> {
        let v = op.apply(self.value(input))?;
        let ng = self.needs(input);
        Ok(self.push(
            Op::LinearApply {
                input,
                op: Arc::clone(op),
            },
            v,
            ng,
        ))
    }

    pub fn linear_adjoint(
        &mut self,
        op: &Arc<dyn LinearOperator>,
        input: NodeId,
    ) -> Result<NodeId> {
        let v = op.adjoint(self.value(input))?;
        let ng = self.needs(input);
        Ok(self.push(
            Op::LinearAdjoint {
                input,
                op: Arc::clone(op),
            },
            v,
            ng,
        ))
    }

    /// x = (A^T A + rho I)^{-1} rhs, differentiable in rhs and rho.
    pub fn normal_solve(
        &mut self,
        op: &Arc<dyn LinearOperator>,
        rhs: NodeId,
        rho: NodeId,
    ) -> Result<NodeId> {
        let r = self.value(rho).scalar_value()?;
        if r <= 0.0 {
            return Err(Error::Argument(format!(
                "normal_solve requires rho > 0, got {r}"
            )));
        }
        let v = op.normal_solve(self.value(rhs), r)?;
        let ng = self.needs(rhs) || self.needs(rho);
        Ok(self.push(
            Op::NormalSolve {
                rhs,
                rho,
                op: Arc::clone(op),
            },
            v,
            ng,
        ))
    }

    /// Concatenate along the channel (last) axis; spatial dims must agree.
    pub fn concat_channels(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(Error::Argument("concat_channels of nothing".into()));
        }
        let first = self.value(inputs[0]);
        if first.shape.len() != 3 {
            return Err(Error::Shape(format!(
                "concat_channels expects [H,W,C] tensors, got {:?}",
                first.shape
            )));
        }
        let (h, w) = (first.shape[0], first.shape[1]);
        let mut ctot = 0;
        for &id in inputs {
            let t = self.value(id);
            if t.shape.len() != 3 || t.shape[0] != h || t.shape[1] != w {
                return Err(Error::Shape(format!(
                    "concat_channels spatial mismatch: {:?} vs [{h},{w},_]",
                    t.shape
                )));
            }
            ctot += t.shape[2];
        }
        let mut data = vec![0.0; h * w * ctot];
        let mut coff = 0;
        for &id in inputs {
            let t = self.value(id);
            let c = t.shape[2];
            for p in 0..h * w {
                data[p * ctot + coff..p * ctot + coff + c]
                    .copy_from_slice(&t.data[p * c..(p + 1) * c]);
            }
            coff += c;
        }
        let v = Tensor::new(vec![h, w, ctot], data)?;
        let ng = inputs.iter().any(|&id| self.needs(id));
        Ok(self.push(Op::ConcatChannels(inputs.to_vec()), v, ng))
    }

    /// Take `len` channels starting at `start` from a [H,W,C] tensor.
    pub fn slice_channels(&mut self, input: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let t = self.value(input);
        if t.shape.len() != 3 {
            return Err(Error::Shape(format!(
                "slice_channels expects [H,W,C], got {:?}",
                t.shape
            )));
        }
        let (h, w, c) = (t.shape[0], t.shape[1], t.shape[2]);
        if start + len > c {
            return Err(Error::Shape(format!(
                "slice_channels {start}..{} out of {c} channels",
                start + len
            )));
        }
        let mut data = vec![0.0; h * w * len];
        for p in 0..h * w {
            data[p * len..(p + 1) * len].copy_from_slice(&t.data[p * c + start..p * c + start + len]);
        }
        let v = Tensor::new(vec![h, w, len], data)?;
        let ng = self.needs(input);
        Ok(self.push(Op::SliceChannels { input, start, len }, v, ng))
    }

    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let s: f64 = self.value(input).data.iter().sum();
        let ng = self.needs(input);
        self.push(Op::Sum(input), Tensor::scalar(s), ng)
    }

    pub fn sum_squares(&mut self, input: NodeId) -> NodeId {
        let s: f64 = self.value(input).data.iter().map(|v| v * v).sum();
        let ng = self.needs(input);
        self.push(Op::SumSquares(input), Tensor::scalar(s), ng)
    }

    /// Reverse pass from a scalar root. Parameter gradients accumulate into
    /// `store`; `Var` leaf gradients accumulate on the tape.
    pub fn backward(&mut self, root: NodeId, store: &mut ParameterStore) -> Result<()> {
        if !self.value(root).is_scalar() {
            return Err(Error::Argument(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        grads[root.0] = Some(vec![1.0]);

        // Reverse insertion order is a reverse topological order.
        for i in (0..n).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g, &mut grads, store)?;
        }
        // Parameters on this tape that the root does not depend on have a
        // structurally zero gradient; their buffers already hold it.
        for node in &self.nodes {
            if let Op::Param(pid) = node.op {
                store.mark_grad_seen(pid);
            }
        }
        Ok(())
    }

    fn accum(
        &self,
        grads: &mut [Option<Vec<f64>>],
        id: NodeId,
        update: impl FnOnce(&mut [f64]),
    ) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        let slot = &mut grads[id.0];
        if slot.is_none() {
            *slot = Some(vec![0.0; self.nodes[id.0].value.len()]);
        }
        update(slot.as_mut().unwrap());
    }

    fn propagate(
        &mut self,
        i: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        store: &mut ParameterStore,
    ) -> Result<()> {
        // Split borrows: the node's op and value stay immutable here.
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Var => {
                let slot = &mut self.var_grads[i];
                if slot.is_none() {
                    *slot = Some(vec![0.0; g.len()]);
                }
                for (a, b) in slot.as_mut().unwrap().iter_mut().zip(g.iter()) {
                    *a += b;
                }
            }
            Op::Param(pid) => {
                store.accumulate_grad(*pid, g)?;
            }
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                self.accum(grads, a, |ga| {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y)
                });
                self.accum(grads, b, |gb| {
                    gb.iter_mut().zip(g).for_each(|(x, y)| *x += y)
                });
            }
            Op::Sub(a, b) => {
                let (a, b) = (*a, *b);
                self.accum(grads, a, |ga| {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y)
                });
                self.accum(grads, b, |gb| {
                    gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y)
                });
            }
            Op::ScalarMul { scalar, tensor } => {
                let (scalar, tensor) = (*scalar, *tensor);
                let s = self.nodes[scalar.0].value.data[0];
                let tdata = &self.nodes[tensor.0].value.data;
                let dot: f64 = tdata.iter().zip(g).map(|(a, b)| a * b).sum();
                self.accum(grads, scalar, |gs| gs[0] += dot);
                self.accum(grads, tensor, |gt| {
                    gt.iter_mut().zip(g).for_each(|(x, y)| *x += s * y)
                });
            }
            Op::Relu(input) => {
                let input = *input;
                let x = &self.nodes[input.0].value.data;
                self.accum(grads, input, |gi| {
                    for ((o, &xv), &gv) in gi.iter_mut().zip(x.iter()).zip(g.iter()) {
                        if xv > 0.0 {
                            *o += gv;
                        }
                    }
                });
            }
            Op::SoftThreshold { input, theta } => {
                let (input, theta) = (*input, *theta);
                let t = self.nodes[theta.0].value.data[0];
                let x = &self.nodes[input.0].value.data;
                let mut gtheta = 0.0;
                for (&xv, &gv) in x.iter().zip(g.iter()) {
                    if xv.abs() > t {
                        gtheta -= gv * xv.signum();
                    }
                }
                self.accum(grads, input, |gi| {
                    for ((o, &xv), &gv) in gi.iter_mut().zip(x.iter()).zip(g.iter()) {
                        if xv.abs() > t {
                            *o += gv;
                        }
                    }
                });
                self.accum(grads, theta, |gt| gt[0] += gtheta);
            }
            Op::Softplus(input) => {
                let input = *input;
                let x = &self.nodes[input.0].value.data;
                self.accum(grads, input, |gi| {
                    for ((o, &xv), &gv) in gi.iter_mut().zip(x.iter()).zip(g.iter()) {
                        *o += gv * sigmoid(xv);
                    }
                });
            }
            Op::Reciprocal(input) => {
                let input = *input;
                let y = &self.nodes[i].value.data;
                self.accum(grads, input, |gi| {
                    for ((o, &yv), &gv) in gi.iter_mut().zip(y.iter()).zip(g.iter()) {
                        *o -= gv * yv * yv;
                    }
                });
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
            } => {
                let (input, kernel, bias) = (*input, *kernel, *bias);
                let x = &self.nodes[input.0].value;
                let k = &self.nodes[kernel.0].value;
                let (h, w, cin) = (x.shape[0], x.shape[1], x.shape[2]);
                let cout = k.shape[3];
                if self.nodes[input.0].needs_grad {
                    let xs = x.shape.clone();
                    let kdata = k.data.clone();
                    self.accum(grads, input, |gi| {
                        conv::backward_input(g, xs[0], xs[1], cout, &kdata, xs[2], gi)
                    });
                }
                if self.nodes[kernel.0].needs_grad {
                    let xdata = x.data.clone();
                    self.accum(grads, kernel, |gk| {
                        conv::backward_kernel(&xdata, h, w, cin, g, cout, gk)
                    });
                }
                if self.nodes[bias.0].needs_grad {
                    self.accum(grads, bias, |gb| conv::backward_bias(g, cout, gb));
                }
            }
            Op::LinearApply { input, op } => {
                let input = *input;
                let op = Arc::clone(op);
                let gt = Tensor::new(self.nodes[i].value.shape.clone(), g.to_vec())?;
                let back = op.adjoint(&gt)?;
                self.accum(grads, input, |gi| {
                    gi.iter_mut().zip(back.data.iter()).for_each(|(a, b)| *a += b)
                });
            }
            Op::LinearAdjoint { input, op } => {
                let input = *input;
                let op = Arc::clone(op);
                let gt = Tensor::new(self.nodes[i].value.shape.clone(), g.to_vec())?;
                let back = op.apply(&gt)?;
                self.accum(grads, input, |gi| {
                    gi.iter_mut().zip(back.data.iter()).for_each(|(a, b)| *a += b)
                });
            }
            Op::NormalSolve { rhs, rho, op } => {
                let (rhs, rho) = (*rhs, *rho);
                let op = Arc::clone(op);
                let r = self.nodes[rho.0].value.data[0];
                let gt = Tensor::new(self.nodes[i].value.shape.clone(), g.to_vec())?;
                // s = (A^T A + rho I)^{-1} g; the solve is self-adjoint.
                let s = op.normal_solve(&gt, r)?;
                let m = &self.nodes[i].value;
                let ds: f64 = s.data.iter().zip(m.data.iter()).map(|(a, b)| a * b).sum();
                self.accum(grads, rhs, |gr| {
                    gr.iter_mut().zip(s.data.iter()).for_each(|(a, b)| *a += b)
                });
                self.accum(grads, rho, |gr| gr[0] -= ds);
            }
            Op::ConcatChannels(inputs) => {
                let inputs = inputs.clone();
                let ctot = self.nodes[i].value.shape[2];
                let hw = self.nodes[i].value.shape[0] * self.nodes[i].value.shape[1];
                let mut coff = 0;
                for id in inputs {
                    let c = self.nodes[id.0].value.shape[2];
                    self.accum(grads, id, |gi| {
                        for p in 0..hw {
                            for cc in 0..c {
                                gi[p * c + cc] += g[p * ctot + coff + cc];
                            }
                        }
                    });
                    coff += c;
                }
            }
            Op::SliceChannels { input, start, len } => {
                let (input, start, len) = (*input, *start, *len);
                let c = self.nodes[input.0].value.shape[2];
                let hw = self.nodes[input.0].value.shape[0] * self.nodes[input.0].value.shape[1];
                self.accum(grads, input, |gi| {
                    for p in 0..hw {
                        for cc in 0..len {
                            gi[p * c + start + cc] += g[p * len + cc];
                        }
                    }
                });
            }
            Op::Sum(input) => {
                let input = *input;
                let gv = g[0];
                self.accum(grads, input, |gi| gi.iter_mut().for_each(|x| *x += gv));
            }
            Op::SumSquares(input) => {
                let input = *input;
                let gv = g[0];
                let x = &self.nodes[input.0].value.data;
                self.accum(grads, input, |gi| {
                    for (o, &xv) in gi.iter_mut().zip(x.iter()) {
                        *o += 2.0 * gv * xv;
                    }
                });
            }
        }
        Ok(())
    }
}

/// Numerically stable ln(1 + exp(x)).
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of softplus: returns raw such that softplus(raw) == y (y > 0).
/// Values of y at or below f64 resolution map to a deeply negative raw
/// value whose softplus underflows to an exact numerical zero.
pub fn softplus_inverse(y: f64) -> f64 {
    if y <= 0.0 {
        return -800.0;
    }
    if y > 30.0 {
        return y;
    }
    // ln(e^y - 1)
    y.exp_m1().ln()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
