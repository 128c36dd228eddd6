//! Recorded computation graphs over tensors with reverse-mode
//! differentiation.
//!
//! The op set is closed and small: convolutions (both paddings and their
//! adjoints), the pointwise registry, add/scale/mul, reductions, channel
//! affine ops, and zero pad/crop. Differentiation is graph-to-graph: `grad`
//! appends the nodes computing the requested cotangents, so gradients of
//! gradients (Hessian-vector products, mixed parameter-image products) are
//! obtained by differentiating again. Kernel-gradient and parameter-
//! derivative nodes are terminal: asking for their derivatives fails fast.

use super::pointwise::PwKind;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{conv2d, conv2d_adjoint, conv2d_kernel_grad, conv_out_len, Padding, Tensor};
use std::collections::HashMap;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(u32);

impl NodeId {
    #[inline]
    fn idx(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone)]
enum Node<T: Scalar> {
    Leaf { name: String },
    Constant(Tensor<T>),
    Add(NodeId, NodeId),
    Scale(NodeId, T),
    Mul(NodeId, NodeId),
    /// Tensor times a single-element node, broadcast.
    MulScalar(NodeId, NodeId),
    Sum(NodeId),
    Dot(NodeId, NodeId),
    Conv {
        input: NodeId,
        kernel: NodeId,
        padding: Padding,
        stride: usize,
    },
    ConvAdj {
        cotangent: NodeId,
        kernel: NodeId,
        padding: Padding,
        stride: usize,
        in_h: usize,
        in_w: usize,
    },
    ConvKernelGrad {
        input: NodeId,
        cotangent: NodeId,
        padding: Padding,
        stride: usize,
        kshape: [usize; 4],
    },
    Pointwise {
        kind: PwKind,
        order: u8,
        input: NodeId,
        param: Option<NodeId>,
    },
    /// `d/dbeta` of the order-`order` derivative of a pointwise function.
    PointwiseBeta {
        kind: PwKind,
        order: u8,
        input: NodeId,
        param: NodeId,
    },
    /// `[C,H,W] * [C]`, channelwise.
    ChannelScale { input: NodeId, scales: NodeId },
    /// Per-channel inner product of two `[C,H,W]` tensors -> `[C]`.
    ChannelDot(NodeId, NodeId),
    /// `[C,H,W] + [C]`, channelwise.
    ChannelBias { input: NodeId, bias: NodeId },
    /// Per-channel sum -> `[C]`.
    ChannelSum(NodeId),
    PadZero { input: NodeId, pad: usize },
    Crop { input: NodeId, pad: usize },
    Reshape { input: NodeId, shape: Vec<usize> },
}

/// Named tensors bound to graph leaves for one evaluation.
#[derive(Debug, Clone, Default)]
pub struct Bindings<T: Scalar> {
    map: HashMap<String, Tensor<T>>,
}

impl<T: Scalar> Bindings<T> {
    pub fn new() -> Self {
        Bindings { map: HashMap::new() }
    }

    pub fn set(&mut self, name: impl Into<String>, value: Tensor<T>) -> &mut Self {
        self.map.insert(name.into(), value);
        self
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.map.get(name)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    shapes: Vec<Vec<usize>>,
    leaves: HashMap<String, NodeId>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            shapes: Vec::new(),
            leaves: HashMap::new(),
        }
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.shapes[id.idx()]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf_id(&self, name: &str) -> Option<NodeId> {
        self.leaves.get(name).copied()
    }

    fn push(&mut self, node: Node<T>, shape: Vec<usize>) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(node);
        self.shapes.push(shape);
        id
    }

    fn numel(&self, id: NodeId) -> usize {
        self.shapes[id.idx()].iter().product()
    }

    fn expect_scalar(&self, id: NodeId, context: &'static str) -> Result<()> {
        if self.numel(id) != 1 {
            return Err(Error::ShapeMismatch {
                context,
                expected: vec![1],
                got: self.shapes[id.idx()].clone(),
                axis: 0,
            });
        }
        Ok(())
    }

    fn expect_chw(&self, id: NodeId, context: &'static str) -> Result<(usize, usize, usize)> {
        let s = &self.shapes[id.idx()];
        if s.len() != 3 {
            return Err(Error::ShapeMismatch {
                context,
                expected: vec![3],
                got: s.clone(),
                axis: 0,
            });
        }
        Ok((s[0], s[1], s[2]))
    }

    fn expect_same(&self, a: NodeId, b: NodeId, context: &'static str) -> Result<()> {
        if self.shapes[a.idx()] != self.shapes[b.idx()] {
            return Err(Error::ShapeMismatch {
                context,
                expected: self.shapes[a.idx()].clone(),
                got: self.shapes[b.idx()].clone(),
                axis: 0,
            });
        }
        Ok(())
    }

    // ----- builders -----

    /// Named input; each name may appear once.
    pub fn leaf(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<NodeId> {
        let name = name.into();
        if self.leaves.contains_key(&name) {
            return Err(Error::Parameter(format!("duplicate leaf '{name}'")));
        }
        let id = self.push(Node::Leaf { name: name.clone() }, shape.to_vec());
        self.leaves.insert(name, id);
        Ok(id)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        let shape = value.shape().to_vec();
        self.push(Node::Constant(value), shape)
    }

    pub fn scalar_const(&mut self, v: T) -> NodeId {
        self.constant(Tensor::scalar(v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.expect_same(a, b, "graph add")?;
        let shape = self.shapes[a.idx()].clone();
        Ok(self.push(Node::Add(a, b), shape))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let nb = self.scale(b, -T::one());
        self.add(a, nb)
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> NodeId {
        let shape = self.shapes[a.idx()].clone();
        self.push(Node::Scale(a, c), shape)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.expect_same(a, b, "graph mul")?;
        let shape = self.shapes[a.idx()].clone();
        Ok(self.push(Node::Mul(a, b), shape))
    }

    pub fn mul_scalar(&mut self, tensor: NodeId, scalar: NodeId) -> Result<NodeId> {
        self.expect_scalar(scalar, "graph mul_scalar")?;
        let shape = self.shapes[tensor.idx()].clone();
        Ok(self.push(Node::MulScalar(tensor, scalar), shape))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Node::Sum(a), vec![1])
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.numel(a);
        let s = self.sum(a);
        self.scale(s, T::one() / T::of(n as f64))
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.expect_same(a, b, "graph dot")?;
        Ok(self.push(Node::Dot(a, b), vec![1]))
    }

    pub fn conv(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        padding: Padding,
        stride: usize,
    ) -> Result<NodeId> {
        let (c_in, h, w) = self.expect_chw(input, "graph conv input")?;
        let ks = &self.shapes[kernel.idx()];
        if ks.len() != 4 || ks[1] != c_in {
            return Err(Error::ShapeMismatch {
                context: "graph conv kernel",
                expected: vec![0, c_in, 0, 0],
                got: ks.clone(),
                axis: 1,
            });
        }
        let oh = conv_out_len(h, ks[2], padding, stride)?;
        let ow = conv_out_len(w, ks[3], padding, stride)?;
        let shape = vec![ks[0], oh, ow];
        Ok(self.push(
            Node::Conv {
                input,
                kernel,
                padding,
                stride,
            },
            shape,
        ))
    }

    pub fn conv_adjoint(
        &mut self,
        cotangent: NodeId,
        kernel: NodeId,
        padding: Padding,
        stride: usize,
        in_h: usize,
        in_w: usize,
    ) -> Result<NodeId> {
        let ks = self.shapes[kernel.idx()].clone();
        if ks.len() != 4 {
            return Err(Error::ShapeMismatch {
                context: "graph conv_adjoint kernel",
                expected: vec![4],
                got: ks,
                axis: 0,
            });
        }
        let oh = conv_out_len(in_h, ks[2], padding, stride)?;
        let ow = conv_out_len(in_w, ks[3], padding, stride)?;
        let cs = &self.shapes[cotangent.idx()];
        if cs != &[ks[0], oh, ow] {
            return Err(Error::ShapeMismatch {
                context: "graph conv_adjoint cotangent",
                expected: vec![ks[0], oh, ow],
                got: cs.clone(),
                axis: 0,
            });
        }
        let shape = vec![ks[1], in_h, in_w];
        Ok(self.push(
            Node::ConvAdj {
                cotangent,
                kernel,
                padding,
                stride,
                in_h,
                in_w,
            },
            shape,
        ))
    }

    pub fn pointwise(
        &mut self,
        kind: PwKind,
        input: NodeId,
        param: Option<NodeId>,
    ) -> Result<NodeId> {
        self.pointwise_order(kind, 0, input, param)
    }

    fn pointwise_order(
        &mut self,
        kind: PwKind,
        order: u8,
        input: NodeId,
        param: Option<NodeId>,
    ) -> Result<NodeId> {
        if kind.has_param() != param.is_some() {
            return Err(Error::Parameter(format!(
                "pointwise {kind:?}: parameter node {}",
                if kind.has_param() { "required" } else { "not accepted" }
            )));
        }
        if let Some(p) = param {
            self.expect_scalar(p, "pointwise param")?;
        }
        if order > kind.max_order() {
            return Err(Error::Unsupported(format!(
                "{kind:?} has no order-{order} derivative"
            )));
        }
        let shape = self.shapes[input.idx()].clone();
        Ok(self.push(
            Node::Pointwise {
                kind,
                order,
                input,
                param,
            },
            shape,
        ))
    }

    pub fn channel_scale(&mut self, input: NodeId, scales: NodeId) -> Result<NodeId> {
        let (c, _, _) = self.expect_chw(input, "graph channel_scale")?;
        if self.shapes[scales.idx()] != [c] {
            return Err(Error::ShapeMismatch {
                context: "graph channel_scale scales",
                expected: vec![c],
                got: self.shapes[scales.idx()].clone(),
                axis: 0,
            });
        }
        let shape = self.shapes[input.idx()].clone();
        Ok(self.push(Node::ChannelScale { input, scales }, shape))
    }

    pub fn channel_dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.expect_same(a, b, "graph channel_dot")?;
        let (c, _, _) = self.expect_chw(a, "graph channel_dot")?;
        Ok(self.push(Node::ChannelDot(a, b), vec![c]))
    }

    pub fn channel_bias(&mut self, input: NodeId, bias: NodeId) -> Result<NodeId> {
        let (c, _, _) = self.expect_chw(input, "graph channel_bias")?;
        if self.shapes[bias.idx()] != [c] {
            return Err(Error::ShapeMismatch {
                context: "graph channel_bias bias",
                expected: vec![c],
                got: self.shapes[bias.idx()].clone(),
                axis: 0,
            });
        }
        let shape = self.shapes[input.idx()].clone();
        Ok(self.push(Node::ChannelBias { input, bias }, shape))
    }

    pub fn channel_sum(&mut self, input: NodeId) -> Result<NodeId> {
        let (c, _, _) = self.expect_chw(input, "graph channel_sum")?;
        Ok(self.push(Node::ChannelSum(input), vec![c]))
    }

    pub fn pad_zero(&mut self, input: NodeId, pad: usize) -> Result<NodeId> {
        let (c, h, w) = self.expect_chw(input, "graph pad_zero")?;
        Ok(self.push(
            Node::PadZero { input, pad },
            vec![c, h + 2 * pad, w + 2 * pad],
        ))
    }

    pub fn crop(&mut self, input: NodeId, pad: usize) -> Result<NodeId> {
        let (c, h, w) = self.expect_chw(input, "graph crop")?;
        if h <= 2 * pad || w <= 2 * pad {
            return Err(Error::Parameter(format!(
                "crop of {pad} exceeds spatial size {h}x{w}"
            )));
        }
        Ok(self.push(Node::Crop { input, pad }, vec![c, h - 2 * pad, w - 2 * pad]))
    }

    pub fn reshape(&mut self, input: NodeId, shape: &[usize]) -> Result<NodeId> {
        let n: usize = shape.iter().product();
        if n != self.numel(input) {
            return Err(Error::ShapeMismatch {
                context: "graph reshape",
                expected: shape.to_vec(),
                got: self.shapes[input.idx()].clone(),
                axis: 0,
            });
        }
        Ok(self.push(
            Node::Reshape {
                input,
                shape: shape.to_vec(),
            },
            shape.to_vec(),
        ))
    }

    // ----- differentiation -----

    /// Append the nodes computing `d output / d wrt[i]` and return their
    /// ids, in the order of `wrt`. `output` must be scalar. Nodes without a
    /// path to `output` receive zero constants.
    pub fn grad(&mut self, output: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
        self.expect_scalar(output, "grad output")?;
        let n = output.idx() + 1;
        let mut cot: Vec<Option<NodeId>> = vec![None; n];
        cot[output.idx()] = Some(self.scalar_const(T::one()));

        for i in (0..n).rev() {
            let u = match cot[i] {
                Some(u) => u,
                None => continue,
            };
            // clone the node to appease the borrow checker; nodes are small
            let node = self.nodes[i].clone();
            match node {
                Node::Leaf { .. } | Node::Constant(_) => {}
                Node::Add(a, b) => {
                    self.accumulate(&mut cot, a, u)?;
                    self.accumulate(&mut cot, b, u)?;
                }
                Node::Scale(a, c) => {
                    let g = self.scale(u, c);
                    self.accumulate(&mut cot, a, g)?;
                }
                Node::Mul(a, b) => {
                    let ga = self.mul(u, b)?;
                    self.accumulate(&mut cot, a, ga)?;
                    let gb = self.mul(u, a)?;
                    self.accumulate(&mut cot, b, gb)?;
                }
                Node::MulScalar(t, s) => {
                    let gt = self.mul_scalar(u, s)?;
                    self.accumulate(&mut cot, t, gt)?;
                    let gs = self.dot(u, t)?;
                    self.accumulate(&mut cot, s, gs)?;
                }
                Node::Sum(a) => {
                    let ones = self.constant(Tensor::ones(&self.shapes[a.idx()].clone()));
                    let g = self.mul_scalar(ones, u)?;
                    self.accumulate(&mut cot, a, g)?;
                }
                Node::Dot(a, b) => {
                    let ga = self.mul_scalar(b, u)?;
                    self.accumulate(&mut cot, a, ga)?;
                    let gb = self.mul_scalar(a, u)?;
                    self.accumulate(&mut cot, b, gb)?;
                }
                Node::Conv {
                    input,
                    kernel,
                    padding,
                    stride,
                } => {
                    let (_, h, w) = self.expect_chw(input, "grad conv")?;
                    let gi = self.conv_adjoint(u, kernel, padding, stride, h, w)?;
                    self.accumulate(&mut cot, input, gi)?;
                    let ks = &self.shapes[kernel.idx()];
                    let kshape = [ks[0], ks[1], ks[2], ks[3]];
                    let gk = self.push(
                        Node::ConvKernelGrad {
                            input,
                            cotangent: u,
                            padding,
                            stride,
                            kshape,
                        },
                        kshape.to_vec(),
                    );
                    self.accumulate(&mut cot, kernel, gk)?;
                }
                Node::ConvAdj {
                    cotangent,
                    kernel,
                    padding,
                    stride,
                    ..
                } => {
                    let gc = self.conv(u, kernel, padding, stride)?;
                    self.accumulate(&mut cot, cotangent, gc)?;
                    let ks = &self.shapes[kernel.idx()];
                    let kshape = [ks[0], ks[1], ks[2], ks[3]];
                    // <adjoint(c; K), u> == <c, conv(u; K)>
                    let gk = self.push(
                        Node::ConvKernelGrad {
                            input: u,
                            cotangent,
                            padding,
                            stride,
                            kshape,
                        },
                        kshape.to_vec(),
                    );
                    self.accumulate(&mut cot, kernel, gk)?;
                }
                Node::ConvKernelGrad { .. } => {
                    return Err(Error::Unsupported(
                        "differentiating through a kernel-gradient node".into(),
                    ))
                }
                Node::Pointwise {
                    kind,
                    order,
                    input,
                    param,
                } => {
                    let d = self.pointwise_order(kind, order + 1, input, param)?;
                    let gi = self.mul(u, d)?;
                    self.accumulate(&mut cot, input, gi)?;
                    if let Some(p) = param {
                        if order > 2 {
                            return Err(Error::Unsupported(format!(
                                "{kind:?}: no mixed beta derivative at order {order}"
                            )));
                        }
                        let db = self.push(
                            Node::PointwiseBeta {
                                kind,
                                order,
                                input,
                                param: p,
                            },
                            self.shapes[input.idx()].clone(),
                        );
                        let prod = self.mul(u, db)?;
                        let gp = self.sum(prod);
                        self.accumulate(&mut cot, p, gp)?;
                    }
                }
                Node::PointwiseBeta { .. } => {
                    return Err(Error::Unsupported(
                        "differentiating through a pointwise parameter-derivative node".into(),
                    ))
                }
                Node::ChannelScale { input, scales } => {
                    let gi = self.channel_scale(u, scales)?;
                    self.accumulate(&mut cot, input, gi)?;
                    let gs = self.channel_dot(u, input)?;
                    self.accumulate(&mut cot, scales, gs)?;
                }
                Node::ChannelDot(a, b) => {
                    let ga = self.channel_scale(b, u)?;
                    self.accumulate(&mut cot, a, ga)?;
                    let gb = self.channel_scale(a, u)?;
                    self.accumulate(&mut cot, b, gb)?;
                }
                Node::ChannelBias { input, bias } => {
                    self.accumulate(&mut cot, input, u)?;
                    let gb = self.channel_sum(u)?;
                    self.accumulate(&mut cot, bias, gb)?;
                }
                Node::ChannelSum(a) => {
                    let ones = self.constant(Tensor::ones(&self.shapes[a.idx()].clone()));
                    let g = self.channel_scale(ones, u)?;
                    self.accumulate(&mut cot, a, g)?;
                }
                Node::PadZero { input, pad } => {
                    let g = self.crop(u, pad)?;
                    self.accumulate(&mut cot, input, g)?;
                }
                Node::Crop { input, pad } => {
                    let g = self.pad_zero(u, pad)?;
                    self.accumulate(&mut cot, input, g)?;
                }
                Node::Reshape { input, .. } => {
                    let s = self.shapes[input.idx()].clone();
                    let g = self.reshape(u, &s)?;
                    self.accumulate(&mut cot, input, g)?;
                }
            }
        }

        let mut out = Vec::with_capacity(wrt.len());
        for &w in wrt {
            match cot.get(w.idx()).copied().flatten() {
                Some(id) => out.push(id),
                None => {
                    let z = Tensor::zeros(&self.shapes[w.idx()].clone());
                    out.push(self.constant(z));
                }
            }
        }
        Ok(out)
    }

    fn accumulate(
        &mut self,
        cot: &mut [Option<NodeId>],
        target: NodeId,
        contribution: NodeId,
    ) -> Result<()> {
        let slot = &mut cot[target.idx()];
        match *slot {
            None => *slot = Some(contribution),
            Some(existing) => {
                let summed = self.add(existing, contribution)?;
                cot[target.idx()] = Some(summed);
            }
        }
        Ok(())
    }

    // ----- evaluation -----

    /// Evaluate the requested nodes under the given leaf bindings.
    /// Only nodes reachable from `outputs` are computed.
    pub fn eval(&self, outputs: &[NodeId], bindings: &Bindings<T>) -> Result<Vec<Tensor<T>>> {
        let mut needed = vec![false; self.nodes.len()];
        let mut stack: Vec<usize> = outputs.iter().map(|o| o.idx()).collect();
        while let Some(i) = stack.pop() {
            if needed[i] {
                continue;
            }
            needed[i] = true;
            self.for_each_input(i, |j| stack.push(j));
        }

        let mut values: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        for i in 0..self.nodes.len() {
            if !needed[i] {
                continue;
            }
            let v = self.eval_node(i, &values, bindings)?;
            if !v.all_finite() {
                return Err(Error::Numerical {
                    message: format!("non-finite value at graph node {i}"),
                    trace: vec![],
                });
            }
            values[i] = Some(v);
        }
        Ok(outputs
            .iter()
            .map(|o| values[o.idx()].clone().expect("needed node computed"))
            .collect())
    }

    /// Evaluate a single scalar output.
    pub fn eval_scalar(&self, output: NodeId, bindings: &Bindings<T>) -> Result<T> {
        let v = self.eval(&[output], bindings)?;
        Ok(v[0].data()[0])
    }

    fn for_each_input(&self, i: usize, mut f: impl FnMut(usize)) {
        match &self.nodes[i] {
            Node::Leaf { .. } | Node::Constant(_) => {}
            Node::Add(a, b) | Node::Mul(a, b) | Node::Dot(a, b) | Node::ChannelDot(a, b) => {
                f(a.idx());
                f(b.idx());
            }
            Node::MulScalar(a, b) => {
                f(a.idx());
                f(b.idx());
            }
            Node::Scale(a, _) | Node::Sum(a) | Node::ChannelSum(a) => f(a.idx()),
            Node::Conv { input, kernel, .. } => {
                f(input.idx());
                f(kernel.idx());
            }
            Node::ConvAdj {
                cotangent, kernel, ..
            } => {
                f(cotangent.idx());
                f(kernel.idx());
            }
            Node::ConvKernelGrad {
                input, cotangent, ..
            } => {
                f(input.idx());
                f(cotangent.idx());
            }
            Node::Pointwise { input, param, .. } => {
                f(input.idx());
                if let Some(p) = param {
                    f(p.idx());
                }
            }
            Node::PointwiseBeta { input, param, .. } => {
                f(input.idx());
                f(param.idx());
            }
            Node::ChannelScale { input, scales } => {
                f(input.idx());
                f(scales.idx());
            }
            Node::ChannelBias { input, bias } => {
                f(input.idx());
                f(bias.idx());
            }
            Node::PadZero { input, .. } | Node::Crop { input, .. } | Node::Reshape { input, .. } => {
                f(input.idx())
            }
        }
    }

    fn eval_node(
        &self,
        i: usize,
        values: &[Option<Tensor<T>>],
        bindings: &Bindings<T>,
    ) -> Result<Tensor<T>> {
        let val = |id: NodeId| -> &Tensor<T> {
            values[id.idx()]
                .as_ref()
                .expect("inputs precede node in graph order")
        };
        Ok(match &self.nodes[i] {
            Node::Leaf { name } => {
                let t = bindings
                    .get(name)
                    .ok_or_else(|| Error::UnboundLeaf(name.clone()))?;
                if t.shape() != self.shapes[i] {
                    return Err(Error::ShapeMismatch {
                        context: "leaf binding",
                        expected: self.shapes[i].clone(),
                        got: t.shape().to_vec(),
                        axis: 0,
                    });
                }
                t.clone()
            }
            Node::Constant(t) => t.clone(),
            Node::Add(a, b) => val(*a).add(val(*b))?,
            Node::Scale(a, c) => val(*a).scale(*c),
            Node::Mul(a, b) => val(*a).mul(val(*b))?,
            Node::MulScalar(a, s) => {
                let c = val(*s).data()[0];
                val(*a).scale(c)
            }
            Node::Sum(a) => Tensor::scalar(val(*a).sum()),
            Node::Dot(a, b) => Tensor::scalar(val(*a).dot(val(*b))?),
            Node::Conv {
                input,
                kernel,
                padding,
                stride,
            } => conv2d(val(*input), val(*kernel), *padding, *stride)?,
            Node::ConvAdj {
                cotangent,
                kernel,
                padding,
                stride,
                in_h,
                in_w,
            } => conv2d_adjoint(val(*cotangent), val(*kernel), *padding, *stride, *in_h, *in_w)?,
            Node::ConvKernelGrad {
                input,
                cotangent,
                padding,
                stride,
                kshape,
            } => conv2d_kernel_grad(val(*input), val(*cotangent), *padding, *stride, kshape)?,
            Node::Pointwise {
                kind,
                order,
                input,
                param,
            } => {
                let beta = param.map(|p| val(p).data()[0]).unwrap_or_else(T::one);
                let x = val(*input);
                let mut data = Vec::with_capacity(x.len());
                for &t in x.data() {
                    data.push(kind.eval(*order, t, beta)?);
                }
                Tensor::new(x.shape().to_vec(), data)?
            }
            Node::PointwiseBeta {
                kind,
                order,
                input,
                param,
            } => {
                let beta = val(*param).data()[0];
                let x = val(*input);
                let mut data = Vec::with_capacity(x.len());
                for &t in x.data() {
                    data.push(kind.eval_beta(*order, t, beta)?);
                }
                Tensor::new(x.shape().to_vec(), data)?
            }
            Node::ChannelScale { input, scales } => {
                let x = val(*input);
                let s = val(*scales);
                let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let mut data = Vec::with_capacity(x.len());
                for ci in 0..c {
                    let a = s.data()[ci];
                    for &v in &x.data()[ci * h * w..(ci + 1) * h * w] {
                        data.push(a * v);
                    }
                }
                Tensor::new(x.shape().to_vec(), data)?
            }
            Node::ChannelDot(a, b) => {
                let x = val(*a);
                let y = val(*b);
                let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let mut data = Vec::with_capacity(c);
                for ci in 0..c {
                    let mut acc = T::zero();
                    for k in ci * h * w..(ci + 1) * h * w {
                        acc += x.data()[k] * y.data()[k];
                    }
                    data.push(acc);
                }
                Tensor::new(vec![c], data)?
            }
            Node::ChannelBias { input, bias } => {
                let x = val(*input);
                let b = val(*bias);
                let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let mut data = Vec::with_capacity(x.len());
                for ci in 0..c {
                    let a = b.data()[ci];
                    for &v in &x.data()[ci * h * w..(ci + 1) * h * w] {
                        data.push(v + a);
                    }
                }
                Tensor::new(x.shape().to_vec(), data)?
            }
            Node::ChannelSum(a) => {
                let x = val(*a);
                let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let mut data = Vec::with_capacity(c);
                for ci in 0..c {
                    let mut acc = T::zero();
                    for k in ci * h * w..(ci + 1) * h * w {
                        acc += x.data()[k];
                    }
                    data.push(acc);
                }
                Tensor::new(vec![c], data)?
            }
            Node::PadZero { input, pad } => {
                let x = val(*input);
                let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let (nh, nw) = (h + 2 * pad, w + 2 * pad);
                let mut data = vec![T::zero(); c * nh * nw];
                for ci in 0..c {
                    for r in 0..h {
                        for cc in 0..w {
                            data[(ci * nh + r + pad) * nw + cc + pad] =
                                x.data()[(ci * h + r) * w + cc];
                        }
                    }
                }
                Tensor::new(vec![c, nh, nw], data)?
            }
            Node::Crop { input, pad } => {
                let x = val(*input);
                let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let (nh, nw) = (h - 2 * pad, w - 2 * pad);
                let mut data = Vec::with_capacity(c * nh * nw);
                for ci in 0..c {
                    for r in 0..nh {
                        for cc in 0..nw {
                            data.push(x.data()[(ci * h + r + pad) * w + cc + pad]);
                        }
                    }
                }
                Tensor::new(vec![c, nh, nw], data)?
            }
            Node::Reshape { input, shape } => val(*input).reshape(shape)?,
        })
    }
}
