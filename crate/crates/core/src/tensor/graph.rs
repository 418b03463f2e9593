//! Reverse-mode differentiation over a recorded tape.
//!
//! Every op is evaluated eagerly and appended to the tape together with the
//! ids of its inputs. Vector-Jacobian products are themselves expressed as
//! tape ops, so differentiating with `create_graph = true` records the
//! backward pass and the result can be differentiated again. The gradient
//! penalty relies on this: it differentiates a function of `dD/dx`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels as k;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a tensor recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise nonlinearities used by the generator and discriminator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Pointwise {
    /// Slope 0.2 on the negative side.
    LeakyRelu,
    Tanh,
    /// Normalises each spatial location across channels, epsilon 1e-8.
    PixelNorm,
}

pub const LEAKY_SLOPE: f64 = 0.2;
pub const PIXELNORM_EPS: f64 = 1e-8;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, pad: usize },
    ConvWeightGrad { x: Var, gy: Var, k: usize, pad: usize },
    FlipTranspose { w: Var },
    BroadcastChannel { b: Var },
    ChannelSum { x: Var },
    ChannelSumKeep { x: Var },
    ExpandChannels { x: Var },
    RowSum { x: Var },
    ExpandRows { x: Var },
    SumAll { x: Var },
    BroadcastScalar { x: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, s: f64 },
    AddScalar { a: Var },
    Powf { a: Var, p: f64 },
    LeakyRelu { x: Var, slope: f64 },
    Tanh { x: Var },
    Upsample { x: Var },
    AvgPool { x: Var },
    Blend { low: Var, high: Var, alpha: f64 },
    Linear { x: Var, w: Var },
    MatMulNN { a: Var, b: Var },
    MatMulTN { a: Var, b: Var },
    Reshape { x: Var },
}

impl Op {
    fn inputs(&self) -> ([Option<Var>; 2], usize) {
        use Op::*;
        match *self {
            Leaf => ([None, None], 0),
            Conv2d { x, w, .. } => ([Some(x), Some(w)], 2),
            ConvWeightGrad { x, gy, .. } => ([Some(x), Some(gy)], 2),
            Add { a, b } | Mul { a, b } | MatMulNN { a, b } | MatMulTN { a, b } => {
                ([Some(a), Some(b)], 2)
            }
            Linear { x, w } => ([Some(x), Some(w)], 2),
            Blend { low, high, .. } => ([Some(low), Some(high)], 2),
            FlipTranspose { w: x }
            | BroadcastChannel { b: x }
            | ChannelSum { x }
            | ChannelSumKeep { x }
            | ExpandChannels { x }
            | RowSum { x }
            | ExpandRows { x }
            | SumAll { x }
            | BroadcastScalar { x }
            | Scale { a: x, .. }
            | AddScalar { a: x }
            | Powf { a: x, .. }
            | LeakyRelu { x, .. }
            | Tanh { x }
            | Upsample { x }
            | AvgPool { x }
            | Reshape { x } => ([Some(x), None], 1),
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// A single-threaded differentiation session.
///
/// Nodes are only ever appended, so every op's inputs precede it on the
/// tape. Drop the graph to release all recorded values.
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grad_enabled: true }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated by [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].grad.take()
    }

    /// Toggles recording of differentiable provenance; returns the previous
    /// setting. Values produced while disabled behave as constants.
    pub fn set_grad_enabled(&mut self, enabled: bool) -> bool {
        core::mem::replace(&mut self.grad_enabled, enabled)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor<T>, op: Op) -> Var {
        let (ins, n) = op.inputs();
        let requires_grad = self.grad_enabled
            && ins[..n].iter().flatten().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    // ---- primitive ops -------------------------------------------------

    pub fn conv2d(&mut self, x: Var, w: Var, pad: usize) -> Result<Var> {
        let y = k::conv2d(self.val(x), self.val(w), pad)?;
        Ok(self.push(y, Op::Conv2d { x, w, pad }))
    }

    pub fn conv2d_weight_grad(&mut self, x: Var, gy: Var, ksize: usize, pad: usize) -> Result<Var> {
        let y = k::conv2d_weight_grad(self.val(x), self.val(gy), ksize, pad)?;
        Ok(self.push(y, Op::ConvWeightGrad { x, gy, k: ksize, pad }))
    }

    pub fn flip_transpose(&mut self, w: Var) -> Result<Var> {
        let y = k::flip_transpose(self.val(w))?;
        Ok(self.push(y, Op::FlipTranspose { w }))
    }

    pub fn broadcast_channel(&mut self, b: Var, shape: &[usize]) -> Result<Var> {
        let y = k::broadcast_channel(self.val(b), shape)?;
        Ok(self.push(y, Op::BroadcastChannel { b }))
    }

    pub fn channel_sum(&mut self, x: Var) -> Result<Var> {
        let y = k::channel_sum(self.val(x))?;
        Ok(self.push(y, Op::ChannelSum { x }))
    }

    pub fn channel_sum_keep(&mut self, x: Var) -> Result<Var> {
        let y = k::channel_sum_keep(self.val(x))?;
        Ok(self.push(y, Op::ChannelSumKeep { x }))
    }

    pub fn expand_channels(&mut self, x: Var, c: usize) -> Result<Var> {
        let y = k::expand_channels(self.val(x), c)?;
        Ok(self.push(y, Op::ExpandChannels { x }))
    }

    /// Per-sample sum over all trailing axes, `[N,...] -> [N]`.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let y = k::row_sum(self.val(x));
        self.push(y, Op::RowSum { x })
    }

    pub fn expand_rows(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = k::expand_rows(self.val(x), shape)?;
        Ok(self.push(y, Op::ExpandRows { x }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let y = k::sum_all(self.val(x));
        self.push(y, Op::SumAll { x })
    }

    pub fn broadcast_scalar(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = k::broadcast_scalar(self.val(x), shape)?;
        Ok(self.push(y, Op::BroadcastScalar { x }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = k::add(self.val(a), self.val(b))?;
        Ok(self.push(y, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = k::mul(self.val(a), self.val(b))?;
        Ok(self.push(y, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let y = k::scale(self.val(a), T::from_f64(s));
        self.push(y, Op::Scale { a, s })
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let y = k::add_scalar(self.val(a), T::from_f64(c));
        self.push(y, Op::AddScalar { a })
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        let y = k::powf(self.val(a), T::from_f64(p));
        self.push(y, Op::Powf { a, p })
    }

    pub fn leaky_relu(&mut self, x: Var) -> Var {
        let y = k::leaky_relu(self.val(x), T::from_f64(LEAKY_SLOPE));
        self.push(y, Op::LeakyRelu { x, slope: LEAKY_SLOPE })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = k::tanh(self.val(x));
        self.push(y, Op::Tanh { x })
    }

    pub fn upsample(&mut self, x: Var) -> Result<Var> {
        let y = k::upsample2x(self.val(x))?;
        Ok(self.push(y, Op::Upsample { x }))
    }

    pub fn avgpool(&mut self, x: Var) -> Result<Var> {
        let y = k::avgpool2x(self.val(x))?;
        Ok(self.push(y, Op::AvgPool { x }))
    }

    pub fn blend(&mut self, low: Var, high: Var, alpha: f64) -> Result<Var> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::contract(format!("blend alpha {alpha} outside [0, 1]")));
        }
        let y = k::blend(self.val(low), self.val(high), T::from_f64(alpha))?;
        Ok(self.push(y, Op::Blend { low, high, alpha }))
    }

    /// `x [N,I] * w [O,I]^T`.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var> {
        let y = k::linear(self.val(x), self.val(w))?;
        Ok(self.push(y, Op::Linear { x, w }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = k::matmul_nn(self.val(a), self.val(b))?;
        Ok(self.push(y, Op::MatMulNN { a, b }))
    }

    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = k::matmul_tn(self.val(a), self.val(b))?;
        Ok(self.push(y, Op::MatMulTN { a, b }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.val(x).reshape(shape)?;
        Ok(self.push(y, Op::Reshape { x }))
    }

    // ---- composites ----------------------------------------------------

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.val(x).numel();
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Adds `b: [C]` along axis 1.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let bb = self.broadcast_channel(b, &shape)?;
        self.add(x, bb)
    }

    /// Convolution plus per-channel bias.
    pub fn conv2d_bias(&mut self, x: Var, w: Var, b: Var, pad: usize) -> Result<Var> {
        let y = self.conv2d(x, w, pad)?;
        self.add_bias(y, b)
    }

    /// Fully connected layer `x w^T + b`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.linear(x, w)?;
        self.add_bias(y, b)
    }

    /// `x / sqrt(mean_c(x^2) + eps)` at every spatial location.
    pub fn pixelnorm(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::shape("pixelnorm", format!("tensor {shape:?} has no channel axis")));
        }
        let c = shape[1];
        let sq = self.mul(x, x)?;
        let s = self.channel_sum_keep(sq)?;
        let m = self.scale(s, 1.0 / c as f64);
        let m = self.add_scalar(m, PIXELNORM_EPS);
        let r = self.powf(m, -0.5);
        let r = self.expand_channels(r, c)?;
        self.mul(x, r)
    }

    pub fn pointwise(&mut self, x: Var, kind: Pointwise) -> Result<Var> {
        match kind {
            Pointwise::LeakyRelu => Ok(self.leaky_relu(x)),
            Pointwise::Tanh => Ok(self.tanh(x)),
            Pointwise::PixelNorm => self.pixelnorm(x),
        }
    }

    // ---- differentiation -----------------------------------------------

    /// Vector-Jacobian product of node `i` against upstream gradient `g`,
    /// restricted to the inputs for which `need` holds.
    fn vjp(&mut self, i: usize, g: Var, need: &dyn Fn(Var) -> bool) -> Result<Vec<(Var, Var)>> {
        use Op::*;
        let y = Var(i);
        let op = self.nodes[i].op.clone();
        let mut out = Vec::with_capacity(2);
        match op {
            Leaf => {}
            Conv2d { x, w, pad } => {
                let ks = self.shape(w)[2];
                if need(x) {
                    let wf = self.flip_transpose(w)?;
                    out.push((x, self.conv2d(g, wf, ks - 1 - pad)?));
                }
                if need(w) {
                    out.push((w, self.conv2d_weight_grad(x, g, ks, pad)?));
                }
            }
            ConvWeightGrad { x, gy, k: ks, pad } => {
                if need(x) {
                    let gf = self.flip_transpose(g)?;
                    out.push((x, self.conv2d(gy, gf, ks - 1 - pad)?));
                }
                if need(gy) {
                    out.push((gy, self.conv2d(x, g, pad)?));
                }
            }
            FlipTranspose { w } => out.push((w, self.flip_transpose(g)?)),
            BroadcastChannel { b } => out.push((b, self.channel_sum(g)?)),
            ChannelSum { x } => {
                let shape = self.shape(x).to_vec();
                out.push((x, self.broadcast_channel(g, &shape)?));
            }
            ChannelSumKeep { x } => {
                let c = self.shape(x)[1];
                out.push((x, self.expand_channels(g, c)?));
            }
            ExpandChannels { x } => out.push((x, self.channel_sum_keep(g)?)),
            RowSum { x } => {
                let shape = self.shape(x).to_vec();
                out.push((x, self.expand_rows(g, &shape)?));
            }
            ExpandRows { x } => out.push((x, self.row_sum(g))),
            SumAll { x } => {
                let shape = self.shape(x).to_vec();
                out.push((x, self.broadcast_scalar(g, &shape)?));
            }
            BroadcastScalar { x } => out.push((x, self.sum(g))),
            Add { a, b } => {
                if need(a) {
                    out.push((a, g));
                }
                if need(b) {
                    out.push((b, g));
                }
            }
            Mul { a, b } => {
                if need(a) {
                    out.push((a, self.mul(g, b)?));
                }
                if need(b) {
                    out.push((b, self.mul(g, a)?));
                }
            }
            Scale { a, s } => out.push((a, self.scale(g, s))),
            AddScalar { a } => out.push((a, g)),
            Powf { a, p } => {
                let d = self.powf(a, p - 1.0);
                let d = self.scale(d, p);
                out.push((a, self.mul(g, d)?));
            }
            LeakyRelu { x, slope } => {
                // second derivative is zero almost everywhere: the mask is a constant
                let mask = k::leaky_relu_mask(self.val(x), T::from_f64(slope));
                let m = self.constant(mask);
                out.push((x, self.mul(g, m)?));
            }
            Tanh { x } => {
                let y2 = self.mul(y, y)?;
                let d = self.scale(y2, -1.0);
                let d = self.add_scalar(d, 1.0);
                out.push((x, self.mul(g, d)?));
            }
            Upsample { x } => {
                let p = self.avgpool(g)?;
                out.push((x, self.scale(p, 4.0)));
            }
            AvgPool { x } => {
                let u = self.upsample(g)?;
                out.push((x, self.scale(u, 0.25)));
            }
            Blend { low, high, alpha } => {
                if need(low) {
                    out.push((low, self.scale(g, 1.0 - alpha)));
                }
                if need(high) {
                    out.push((high, self.scale(g, alpha)));
                }
            }
            Linear { x, w } => {
                if need(x) {
                    out.push((x, self.matmul(g, w)?));
                }
                if need(w) {
                    out.push((w, self.matmul_tn(g, x)?));
                }
            }
            MatMulNN { a, b } => {
                if need(a) {
                    out.push((a, self.linear(g, b)?));
                }
                if need(b) {
                    out.push((b, self.matmul_tn(a, g)?));
                }
            }
            MatMulTN { a, b } => {
                if need(a) {
                    out.push((a, self.linear(b, g)?));
                }
                if need(b) {
                    out.push((b, self.matmul(a, g)?));
                }
            }
            Reshape { x } => {
                let shape = self.shape(x).to_vec();
                out.push((x, self.reshape(g, &shape)?));
            }
        }
        Ok(out)
    }

    fn adjoints(&mut self, output: Var, wrt: &[Var], create_graph: bool) -> Result<Vec<Option<Var>>> {
        if self.val(output).numel() != 1 {
            return Err(Error::contract(format!(
                "differentiation needs a scalar output, got shape {:?}",
                self.shape(output)
            )));
        }
        let n = output.0 + 1;
        let mut relevant = vec![false; n];
        for w in wrt {
            if w.0 < n && self.nodes[w.0].requires_grad {
                relevant[w.0] = true;
            }
        }
        for i in 0..n {
            if relevant[i] || !self.nodes[i].requires_grad {
                continue;
            }
            let (ins, k) = self.nodes[i].op.inputs();
            relevant[i] = ins[..k].iter().flatten().any(|v| relevant[v.0]);
        }

        let mut grads: Vec<Option<Var>> = vec![None; n];
        let seed = Tensor::full(self.shape(output), T::ONE);
        grads[output.0] = Some(self.constant(seed));

        let prev = self.set_grad_enabled(create_graph);
        let result = (|| {
            for i in (0..n).rev() {
                if !relevant[i] {
                    continue;
                }
                let Some(g) = grads[i] else { continue };
                let need = |v: Var| relevant[v.0];
                for (input, gi) in self.vjp(i, g, &need)? {
                    grads[input.0] = Some(match grads[input.0] {
                        Some(acc) => self.add(acc, gi)?,
                        None => gi,
                    });
                }
            }
            Ok(())
        })();
        self.set_grad_enabled(prev);
        result?;
        Ok(wrt.iter().map(|w| grads.get(w.0).copied().flatten()).collect())
    }

    /// Gradients of scalar `output` with respect to each of `wrt`.
    ///
    /// With `create_graph` the gradient computation is itself recorded, so
    /// the returned vars can be differentiated again.
    pub fn grad_of(&mut self, output: Var, wrt: &[Var], create_graph: bool) -> Result<Vec<Var>> {
        let adj = self.adjoints(output, wrt, create_graph)?;
        adj.into_iter()
            .zip(wrt)
            .map(|(g, w)| {
                g.ok_or_else(|| {
                    Error::contract(format!("var {} is not on the provenance path of the output", w.0))
                })
            })
            .collect()
    }

    /// `d output / d input` as a differentiable var.
    pub fn input_gradient(&mut self, output: Var, input: Var) -> Result<Var> {
        Ok(self.grad_of(output, &[input], true)?[0])
    }

    /// Accumulates `d loss / d leaf` into the gradient buffer of every leaf
    /// that requires a gradient. Leaves the loss does not depend on receive
    /// zeros.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let leaves: Vec<Var> = (0..=loss.0)
            .filter(|&i| matches!(self.nodes[i].op, Op::Leaf) && self.nodes[i].requires_grad)
            .map(Var)
            .collect();
        let adj = self.adjoints(loss, &leaves, false)?;
        for (leaf, g) in leaves.into_iter().zip(adj) {
            let add = match g {
                Some(g) => self.nodes[g.0].value.clone(),
                None => Tensor::zeros(self.shape(leaf)),
            };
            let node = &mut self.nodes[leaf.0];
            node.grad = Some(match node.grad.take() {
                Some(prev) => k::add(&prev, &add)?,
                None => add,
            });
        }
        Ok(())
    }
}
