use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::kernels::{self, ConvGeom};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

pub type NodeId = usize;
pub type ParamId = usize;

const BN_EPS: f64 = 1e-5;

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    /// Reads graph input `slot`.
    Input { slot: usize },
    Conv2d {
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
        cin: usize,
        cout: usize,
        weight: ParamId,
        bias: Option<ParamId>,
    },
    /// Padded positions are excluded from the divisor.
    AvgPool2d { k: usize, stride: usize, pad: usize },
    Relu,
    /// Batch statistics only: no running averages, no affine parameters.
    BatchNorm2d { channels: usize },
    Linear {
        din: usize,
        dout: usize,
        weight: ParamId,
        bias: Option<ParamId>,
    },
    Add,
    Mul,
    Tanh,
    Sigmoid,
    GlobalAvgPool,
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNode {
    pub kind: LayerKind,
    pub inputs: Vec<NodeId>,
}

/// A layer DAG with owned parameters. Nodes may only reference earlier
/// nodes, so every graph is acyclic and stored in topological order.
#[derive(Clone, Debug)]
pub struct Graph<T> {
    id: u64,
    nodes: Vec<LayerNode>,
    params: Vec<Tensor<T>>,
    /// Fan-in for weight tensors; `None` marks biases (zero-initialized).
    fan_in: Vec<Option<usize>>,
    outputs: Vec<NodeId>,
    requires_grad: Vec<bool>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Activations recorded by [`Graph::forward`], consumed by [`Graph::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    graph_id: u64,
    values: Vec<Tensor<T>>,
    inv_stds: Vec<Option<Vec<T>>>,
    outputs: Vec<NodeId>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn output(&self, i: usize) -> &Tensor<T> {
        &self.values[self.outputs[i]]
    }

    pub fn outputs(&self) -> Vec<&Tensor<T>> {
        self.outputs.iter().map(|&n| &self.values[n]).collect()
    }

    pub fn value(&self, node: NodeId) -> &Tensor<T> {
        &self.values[node]
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            params: Vec::new(),
            fan_in: Vec::new(),
            outputs: Vec::new(),
            requires_grad: Vec::new(),
        }
    }

    pub fn nodes(&self) -> &[LayerNode] {
        &self.nodes
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn output_ids(&self) -> &[NodeId] {
        &self.outputs
    }

    pub fn set_outputs(&mut self, outputs: Vec<NodeId>) {
        self.outputs = outputs;
    }

    /// Registers a zero-filled parameter. `fan_in: None` marks a bias.
    pub fn add_param(&mut self, shape: &[usize], fan_in: Option<usize>) -> ParamId {
        self.params.push(Tensor::zeros(shape));
        self.fan_in.push(fan_in);
        self.params.len() - 1
    }

    /// Appends a node. Panics if an input refers to a node not yet defined.
    pub fn push(&mut self, kind: LayerKind, inputs: Vec<NodeId>) -> NodeId {
        let id = self.nodes.len();
        assert!(
            inputs.iter().all(|&i| i < id),
            "node inputs must reference earlier nodes"
        );
        let has_params = matches!(kind, LayerKind::Conv2d { .. } | LayerKind::Linear { .. });
        let rg = has_params || inputs.iter().any(|&i| self.requires_grad[i]);
        self.nodes.push(LayerNode { kind, inputs });
        self.requires_grad.push(rg);
        id
    }

    pub fn input(&mut self, slot: usize) -> NodeId {
        self.push(LayerKind::Input { slot }, vec![])
    }

    pub fn conv2d(&mut self, x: NodeId, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> NodeId {
        let weight = self.add_param(&[cout, cin, k, k], Some(cin * k * k));
        let bias = self.add_param(&[cout], None);
        self.push(
            LayerKind::Conv2d {
                kh: k,
                kw: k,
                stride,
                pad,
                cin,
                cout,
                weight,
                bias: Some(bias),
            },
            vec![x],
        )
    }

    pub fn avg_pool(&mut self, x: NodeId, k: usize, stride: usize, pad: usize) -> NodeId {
        self.push(LayerKind::AvgPool2d { k, stride, pad }, vec![x])
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.push(LayerKind::Relu, vec![x])
    }

    pub fn batch_norm(&mut self, x: NodeId, channels: usize) -> NodeId {
        self.push(LayerKind::BatchNorm2d { channels }, vec![x])
    }

    pub fn linear(&mut self, x: NodeId, din: usize, dout: usize, bias: bool) -> NodeId {
        let weight = self.add_param(&[dout, din], Some(din));
        let bias = bias.then(|| self.add_param(&[dout], None));
        self.linear_shared(x, weight, bias)
    }

    /// Linear layer over existing parameters, for weight sharing across unrolled steps.
    pub fn linear_shared(&mut self, x: NodeId, weight: ParamId, bias: Option<ParamId>) -> NodeId {
        let (dout, din) = (self.params[weight].shape()[0], self.params[weight].shape()[1]);
        self.push(
            LayerKind::Linear {
                din,
                dout,
                weight,
                bias,
            },
            vec![x],
        )
    }

    pub fn add(&mut self, xs: &[NodeId]) -> NodeId {
        if xs.len() == 1 {
            return xs[0];
        }
        self.push(LayerKind::Add, xs.to_vec())
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(LayerKind::Mul, vec![a, b])
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.push(LayerKind::Tanh, vec![x])
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.push(LayerKind::Sigmoid, vec![x])
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> NodeId {
        self.push(LayerKind::GlobalAvgPool, vec![x])
    }

    pub fn identity(&mut self, x: NodeId) -> NodeId {
        self.push(LayerKind::Identity, vec![x])
    }

    /// Uniform `±1/√fan_in` for weights, zero for biases. Values are drawn in
    /// double precision so `f32` and `f64` graphs built alike start identical.
    pub fn init_params<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for (p, fan_in) in self.params.iter_mut().zip(&self.fan_in) {
            match fan_in {
                Some(fan) => {
                    let bound = 1.0 / (*fan as f64).sqrt();
                    for v in p.data_mut() {
                        *v = T::from_f64(rng.random_range(-bound..bound));
                    }
                }
                None => p.data_mut().fill(T::ZERO),
            }
        }
    }

    /// Copies structure and parameters into another precision.
    pub fn cast<U: Scalar>(&self) -> Graph<U> {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: self.nodes.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
            fan_in: self.fan_in.clone(),
            outputs: self.outputs.clone(),
            requires_grad: self.requires_grad.clone(),
        }
    }

    pub fn forward(&self, inputs: &[Tensor<T>]) -> Result<ForwardCache<T>> {
        let mut values: Vec<Tensor<T>> = Vec::with_capacity(self.nodes.len());
        let mut inv_stds = vec![None; self.nodes.len()];
        for (id, node) in self.nodes.iter().enumerate() {
            let arg = |i: usize| &values[node.inputs[i]];
            let out = match &node.kind {
                LayerKind::Input { slot } => inputs
                    .get(*slot)
                    .cloned()
                    .ok_or(Error::ShapeMismatch {
                        context: "graph input slot",
                        expected: vec![*slot + 1],
                        got: vec![inputs.len()],
                    })?,
                LayerKind::Conv2d {
                    kh,
                    kw,
                    stride,
                    pad,
                    cin,
                    cout,
                    weight,
                    bias,
                } => {
                    let x = arg(0);
                    let (b, c, h, w) = x.dims4()?;
                    let g = conv_geom(c, *cin, h, w, *kh, *kw, *stride, *pad, x.shape())?;
                    let mut y = Tensor::zeros(&[b, *cout, g.oh, g.ow]);
                    kernels::conv2d_forward(
                        x.data(),
                        b,
                        &g,
                        self.params[*weight].data(),
                        bias.map(|p| self.params[p].data()),
                        *cout,
                        y.data_mut(),
                    );
                    y
                }
                LayerKind::AvgPool2d { k, stride, pad } => {
                    let x = arg(0);
                    let (b, c, h, w) = x.dims4()?;
                    let g = conv_geom(c, c, h, w, *k, *k, *stride, *pad, x.shape())?;
                    let mut y = Tensor::zeros(&[b, c, g.oh, g.ow]);
                    kernels::avg_pool_forward(x.data(), b * c, &g, y.data_mut());
                    y
                }
                LayerKind::Relu => arg(0).map(|v| if v > T::ZERO { v } else { T::ZERO }),
                LayerKind::BatchNorm2d { channels } => {
                    let x = arg(0);
                    let (b, c, h, w) = x.dims4()?;
                    if c != *channels {
                        return Err(Error::ShapeMismatch {
                            context: "batchnorm2d channels",
                            expected: vec![*channels],
                            got: x.shape().to_vec(),
                        });
                    }
                    let mut y = Tensor::zeros(x.shape());
                    let s = kernels::batch_norm_forward(x.data(), b, c, h * w, BN_EPS, y.data_mut());
                    inv_stds[id] = Some(s);
                    y
                }
                LayerKind::Linear {
                    din,
                    dout,
                    weight,
                    bias,
                } => {
                    let x = arg(0);
                    let (rows, d) = x.dims2()?;
                    if d != *din {
                        return Err(Error::ShapeMismatch {
                            context: "linear input width",
                            expected: vec![rows, *din],
                            got: x.shape().to_vec(),
                        });
                    }
                    let mut y = Tensor::zeros(&[rows, *dout]);
                    kernels::linear_forward(
                        x.data(),
                        rows,
                        *din,
                        self.params[*weight].data(),
                        bias.map(|p| self.params[p].data()),
                        *dout,
                        y.data_mut(),
                    );
                    y
                }
                LayerKind::Add => {
                    let mut y = arg(0).clone();
                    for i in 1..node.inputs.len() {
                        y.add_assign(arg(i))?;
                    }
                    y
                }
                LayerKind::Mul => {
                    let (a, b) = (arg(0), arg(1));
                    a.check_same_shape(b, "mul")?;
                    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
                    Tensor::from_vec(a.shape(), data)?
                }
                LayerKind::Tanh => arg(0).map(|v| v.tanh()),
                LayerKind::Sigmoid => arg(0).map(sigmoid),
                LayerKind::GlobalAvgPool => {
                    let x = arg(0);
                    let (b, c, h, w) = x.dims4()?;
                    let plane = h * w;
                    let scale = T::from_f64(1.0 / plane as f64);
                    let data = x
                        .data()
                        .chunks(plane)
                        .map(|p| {
                            let mut s = T::ZERO;
                            for &v in p {
                                s += v;
                            }
                            s * scale
                        })
                        .collect();
                    Tensor::from_vec(&[b, c], data)?
                }
                LayerKind::Identity => arg(0).clone(),
            };
            if !out.all_finite() {
                return Err(Error::Diverged(format!("activation of node {id} ({:?})", node.kind)));
            }
            values.push(out);
        }
        Ok(ForwardCache {
            graph_id: self.id,
            values,
            inv_stds,
            outputs: self.outputs.clone(),
        })
    }

    /// Parameter gradients for upstream gradients `output_grads` (one per
    /// graph output). Parameters not reached from any output get zeros.
    pub fn backward(&self, cache: &ForwardCache<T>, output_grads: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        if cache.graph_id != self.id || cache.values.len() != self.nodes.len() {
            return Err(Error::MissingForwardCache);
        }
        if output_grads.len() != self.outputs.len() {
            return Err(Error::ShapeMismatch {
                context: "backward output gradients",
                expected: vec![self.outputs.len()],
                got: vec![output_grads.len()],
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        for (&node, g) in self.outputs.iter().zip(output_grads) {
            cache.values[node].check_same_shape(g, "output gradient")?;
            accumulate(&mut grads[node], g.clone());
        }
        let mut pgrads: Vec<Tensor<T>> = self.params.iter().map(|p| Tensor::zeros(p.shape())).collect();

        for id in (0..self.nodes.len()).rev() {
            let Some(dy) = grads[id].take() else { continue };
            if !self.requires_grad[id] {
                continue;
            }
            let node = &self.nodes[id];
            let y = &cache.values[id];
            let x_of = |i: usize| &cache.values[node.inputs[i]];
            let wants = |i: usize| self.requires_grad[node.inputs[i]];
            match &node.kind {
                LayerKind::Input { .. } => {}
                LayerKind::Conv2d {
                    kh,
                    kw,
                    stride,
                    pad,
                    cin,
                    cout,
                    weight,
                    bias,
                } => {
                    let x = x_of(0);
                    let (b, _, h, w) = x.dims4()?;
                    let g = conv_geom(*cin, *cin, h, w, *kh, *kw, *stride, *pad, x.shape())?;
                    let mut dx = wants(0).then(|| Tensor::zeros(x.shape()));
                    let (dw, db) = split_param_grads(&mut pgrads, *weight, *bias);
                    kernels::conv2d_backward(
                        x.data(),
                        b,
                        &g,
                        self.params[*weight].data(),
                        *cout,
                        dy.data(),
                        dw,
                        db,
                        dx.as_mut().map(|t| t.data_mut()),
                    );
                    if let Some(dx) = dx {
                        accumulate(&mut grads[node.inputs[0]], dx);
                    }
                }
                LayerKind::AvgPool2d { k, stride, pad } => {
                    if wants(0) {
                        let x = x_of(0);
                        let (b, c, h, w) = x.dims4()?;
                        let g = conv_geom(c, c, h, w, *k, *k, *stride, *pad, x.shape())?;
                        let mut dx = Tensor::zeros(x.shape());
                        kernels::avg_pool_backward(dy.data(), b * c, &g, dx.data_mut());
                        accumulate(&mut grads[node.inputs[0]], dx);
                    }
                }
                LayerKind::Relu => {
                    if wants(0) {
                        let data = y
                            .data()
                            .iter()
                            .zip(dy.data())
                            .map(|(&o, &g)| if o > T::ZERO { g } else { T::ZERO })
                            .collect();
                        accumulate(&mut grads[node.inputs[0]], Tensor::from_vec(y.shape(), data)?);
                    }
                }
                LayerKind::BatchNorm2d { .. } => {
                    if wants(0) {
                        let (b, c, h, w) = y.dims4()?;
                        let inv_std = cache.inv_stds[id].as_ref().ok_or(Error::MissingForwardCache)?;
                        let mut dx = Tensor::zeros(y.shape());
                        kernels::batch_norm_backward(y.data(), inv_std, dy.data(), b, c, h * w, dx.data_mut());
                        accumulate(&mut grads[node.inputs[0]], dx);
                    }
                }
                LayerKind::Linear {
                    din,
                    dout,
                    weight,
                    bias,
                } => {
                    let x = x_of(0);
                    let (rows, _) = x.dims2()?;
                    let mut dx = wants(0).then(|| Tensor::zeros(x.shape()));
                    let (dw, db) = split_param_grads(&mut pgrads, *weight, *bias);
                    kernels::linear_backward(
                        x.data(),
                        rows,
                        *din,
                        self.params[*weight].data(),
                        *dout,
                        dy.data(),
                        dw,
                        db,
                        dx.as_mut().map(|t| t.data_mut()),
                    );
                    if let Some(dx) = dx {
                        accumulate(&mut grads[node.inputs[0]], dx);
                    }
                }
                LayerKind::Add => {
                    for &inp in &node.inputs {
                        if self.requires_grad[inp] {
                            accumulate(&mut grads[inp], dy.clone());
                        }
                    }
                }
                LayerKind::Mul => {
                    let (a, b) = (x_of(0), x_of(1));
                    if wants(0) {
                        let data = dy.data().iter().zip(b.data()).map(|(&g, &v)| g * v).collect();
                        accumulate(&mut grads[node.inputs[0]], Tensor::from_vec(a.shape(), data)?);
                    }
                    if wants(1) {
                        let data = dy.data().iter().zip(a.data()).map(|(&g, &v)| g * v).collect();
                        accumulate(&mut grads[node.inputs[1]], Tensor::from_vec(b.shape(), data)?);
                    }
                }
                LayerKind::Tanh => {
                    if wants(0) {
                        let data = y
                            .data()
                            .iter()
                            .zip(dy.data())
                            .map(|(&o, &g)| g * (T::ONE - o * o))
                            .collect();
                        accumulate(&mut grads[node.inputs[0]], Tensor::from_vec(y.shape(), data)?);
                    }
                }
                LayerKind::Sigmoid => {
                    if wants(0) {
                        let data = y
                            .data()
                            .iter()
                            .zip(dy.data())
                            .map(|(&o, &g)| g * o * (T::ONE - o))
                            .collect();
                        accumulate(&mut grads[node.inputs[0]], Tensor::from_vec(y.shape(), data)?);
                    }
                }
                LayerKind::GlobalAvgPool => {
                    if wants(0) {
                        let x = x_of(0);
                        let (_, _, h, w) = x.dims4()?;
                        let plane = h * w;
                        let scale = T::from_f64(1.0 / plane as f64);
                        let mut dx = Tensor::zeros(x.shape());
                        for (chunk, &g) in dx.data_mut().chunks_mut(plane).zip(dy.data()) {
                            chunk.fill(g * scale);
                        }
                        accumulate(&mut grads[node.inputs[0]], dx);
                    }
                }
                LayerKind::Identity => {
                    if wants(0) {
                        accumulate(&mut grads[node.inputs[0]], dy);
                    }
                }
            }
        }
        Ok(pgrads)
    }
}

fn sigmoid<T: Scalar>(v: T) -> T {
    T::ONE / (T::ONE + (-v).exp())
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => {
            for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

/// Borrows the weight gradient and (optional, distinct) bias gradient mutably.
fn split_param_grads<T: Scalar>(
    pgrads: &mut [Tensor<T>],
    weight: ParamId,
    bias: Option<ParamId>,
) -> (&mut [T], Option<&mut [T]>) {
    match bias {
        None => (pgrads[weight].data_mut(), None),
        Some(b) => {
            assert_ne!(weight, b);
            if weight < b {
                let (lo, hi) = pgrads.split_at_mut(b);
                (lo[weight].data_mut(), Some(hi[0].data_mut()))
            } else {
                let (lo, hi) = pgrads.split_at_mut(weight);
                (hi[0].data_mut(), Some(lo[b].data_mut()))
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_geom(
    c: usize,
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    shape: &[usize],
) -> Result<ConvGeom> {
    if c != cin {
        return Err(Error::ShapeMismatch {
            context: "conv/pool input channels",
            expected: vec![shape[0], cin, h, w],
            got: shape.to_vec(),
        });
    }
    ConvGeom::new(cin, h, w, kh, kw, stride, pad).ok_or(Error::ShapeMismatch {
        context: "conv/pool window larger than padded input",
        expected: vec![kh, kw],
        got: shape.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ones(shape: &[usize]) -> Tensor<f64> {
        Tensor::full(shape, 1.0)
    }

    #[test]
    fn conv_all_ones_3x3() {
        let mut g = Graph::<f64>::new();
        let x = g.input(0);
        let y = g.conv2d(x, 1, 1, 3, 1, 1);
        g.set_outputs(vec![y]);
        g.params_mut()[0].data_mut().fill(1.0);
        let out = g.forward(&[ones(&[1, 1, 3, 3])]).unwrap();
        assert_eq!(out.output(0).data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn identity_and_relu() {
        let mut g = Graph::<f64>::new();
        let x = g.input(0);
        let i = g.identity(x);
        let r = g.relu(x);
        g.set_outputs(vec![i, r]);
        let input = Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        let out = g.forward(std::slice::from_ref(&input)).unwrap();
        assert_eq!(out.output(0), &input);
        assert_eq!(out.output(1).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn identity_kernel_conv_is_identity() {
        let mut g = Graph::<f64>::new();
        let x = g.input(0);
        let y = g.conv2d(x, 2, 2, 3, 1, 1);
        g.set_outputs(vec![y]);
        let w = g.params_mut()[0].data_mut();
        w.fill(0.0);
        // weight layout (cout, cin, 3, 3): center tap of the matching channel
        w[4] = 1.0;
        w[(2 + 1) * 9 + 4] = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = (0..2 * 2 * 5 * 5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let input = Tensor::from_vec(&[2, 2, 5, 5], data).unwrap();
        let out = g.forward(std::slice::from_ref(&input)).unwrap();
        assert_eq!(out.output(0), &input);
    }

    #[test]
    fn batch_norm_normalizes_per_channel() {
        let mut g = Graph::<f64>::new();
        let x = g.input(0);
        let y = g.batch_norm(x, 3);
        g.set_outputs(vec![y]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data = (0..4 * 3 * 6 * 6).map(|_| rng.random_range(-5.0..20.0)).collect();
        let out = g.forward(&[Tensor::from_vec(&[4, 3, 6, 6], data).unwrap()]).unwrap();
        let y = out.output(0).data();
        for c in 0..3 {
            let vals: Vec<f64> = (0..4).flat_map(|b| y[(b * 3 + c) * 36..(b * 3 + c + 1) * 36].to_vec()).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_param_grads() {
        let mut g = Graph::<f64>::new();
        let x = g.input(0);
        let y = g.linear(x, 3, 2, true);
        g.set_outputs(vec![y]);
        g.init_params(&mut ChaCha8Rng::seed_from_u64(1));
        let cache = g.forward(&[ones(&[4, 3])]).unwrap();
        let grads = g.backward(&cache, &[Tensor::zeros(&[4, 2])]).unwrap();
        assert!(grads.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn unreached_params_get_zero_grads() {
        let mut g = Graph::<f64>::new();
        let x = g.input(0);
        let used = g.linear(x, 2, 2, false);
        let _unused = g.linear(x, 2, 2, false);
        g.set_outputs(vec![used]);
        g.init_params(&mut ChaCha8Rng::seed_from_u64(1));
        let cache = g.forward(&[ones(&[1, 2])]).unwrap();
        let grads = g.backward(&cache, &[ones(&[1, 2])]).unwrap();
        assert!(grads[0].data().iter().all(|&v| v != 0.0));
        assert!(grads[1].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_foreign_cache() {
        let mut a = Graph::<f64>::new();
        let x = a.input(0);
        a.set_outputs(vec![x]);
        let b = a.clone().cast::<f64>();
        let cache = b.forward(&[ones(&[1])]).unwrap();
        assert!(matches!(a.backward(&cache, &[ones(&[1])]), Err(Error::MissingForwardCache)));
    }

    #[test]
    fn non_finite_activation_is_divergence() {
        let mut g = Graph::<f64>::new();
        let x = g.input(0);
        let y = g.relu(x);
        g.set_outputs(vec![y]);
        let input = Tensor::from_vec(&[1], vec![f64::INFINITY]).unwrap();
        assert!(matches!(g.forward(&[input]), Err(Error::Diverged(_))));
    }

    #[test]
    fn conv_shape_mismatch() {
        let mut g = Graph::<f64>::new();
        let x = g.input(0);
        let y = g.conv2d(x, 3, 4, 3, 1, 1);
        g.set_outputs(vec![y]);
        assert!(matches!(g.forward(&[ones(&[1, 2, 4, 4])]), Err(Error::ShapeMismatch { .. })));
    }
}
