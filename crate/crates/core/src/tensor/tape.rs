use std::collections::HashMap;

use super::kernels as k;
use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// User-supplied vector-Jacobian product: given the upstream gradient and the
/// input values, return one gradient per input.
pub type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[&Tensor<T>]) -> Vec<Tensor<T>> + Send>;

enum Op<T: Scalar> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var> },
    Depthwise { x: Var, w: Var, b: Option<Var> },
    LeakyRelu { x: Var, slope: f64 },
    Relu { x: Var },
    Sigmoid { x: Var },
    GlobalAvgPool { x: Var },
    FullyConnected { x: Var, w: Var, b: Option<Var> },
    PixelShuffle { x: Var, r: usize },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    MulChannelwise { x: Var, g: Var },
    Concat { parts: Vec<Var> },
    Slice { x: Var, offset: usize },
    Sum { x: Var },
    WeightedSum { x: Var, weights: Tensor<T> },
    L1 { pred: Var, target: Tensor<T> },
    Mse { pred: Var, target: Tensor<T> },
    Custom { inputs: Vec<Var>, backward: BackwardFn<T> },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records operations during a forward pass and replays them in reverse to
/// compute gradients. One tape per training step.
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: HashMap::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last [`backward`](Self::backward) loss w.r.t. `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// The leaf registered for `id`, if the forward pass touched it.
    pub fn param_var(&self, id: ParamId) -> Option<Var> {
        self.params.get(&id).copied()
    }

    /// Gradients for every parameter of `store`, in store order. Parameters the
    /// forward pass never used get zeros.
    pub fn param_grads(&self, store: &ParamStore<T>) -> Vec<Tensor<T>> {
        store
            .ids()
            .map(|id| {
                self.param_var(id)
                    .and_then(|v| self.grad(v).cloned())
                    .unwrap_or_else(|| Tensor::zeros(store.get(id).shape()))
            })
            .collect()
    }

    pub(super) fn param_leaf(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.leaf(store.get(id).clone(), true);
        self.params.insert(id, v);
        v
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn record(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let rg = self.needs(inputs);
        self.push(value, op, rg)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let value = k::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let inputs: Vec<Var> = [x, w].into_iter().chain(b).collect();
        Ok(self.record(value, Op::Conv2d { x, w, b }, &inputs))
    }

    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let value = k::depthwise_conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let inputs: Vec<Var> = [x, w].into_iter().chain(b).collect();
        Ok(self.record(value, Op::Depthwise { x, w, b }, &inputs))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let value = k::leaky_relu(self.value(x), slope);
        self.record(value, Op::LeakyRelu { x, slope }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = k::relu(self.value(x));
        self.record(value, Op::Relu { x }, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = k::sigmoid(self.value(x));
        self.record(value, Op::Sigmoid { x }, &[x])
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let value = k::global_avg_pool(self.value(x));
        self.record(value, Op::GlobalAvgPool { x }, &[x])
    }

    pub fn fully_connected(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let value = k::fully_connected(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let inputs: Vec<Var> = [x, w].into_iter().chain(b).collect();
        Ok(self.record(value, Op::FullyConnected { x, w, b }, &inputs))
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let value = k::pixel_shuffle(self.value(x), r)?;
        Ok(self.record(value, Op::PixelShuffle { x, r }, &[x]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = k::add(self.value(a), self.value(b))?;
        Ok(self.record(value, Op::Add { a, b }, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = k::mul(self.value(a), self.value(b))?;
        Ok(self.record(value, Op::Mul { a, b }, &[a, b]))
    }

    pub fn mul_channelwise(&mut self, x: Var, g: Var) -> Result<Var> {
        let value = k::mul_channelwise(self.value(x), self.value(g))?;
        Ok(self.record(value, Op::MulChannelwise { x, g }, &[x, g]))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&v| self.value(v)).collect();
        let value = k::concat_channels(&values)?;
        Ok(self.record(
            value,
            Op::Concat {
                parts: parts.to_vec(),
            },
            parts,
        ))
    }

    pub fn split_channels(&mut self, x: Var, sizes: &[usize]) -> Result<Vec<Var>> {
        let total: usize = sizes.iter().sum();
        if total != self.value(x).shape().c {
            return Err(Error::shape(
                "split_channels",
                format!("sizes {sizes:?} do not sum to {} channels", self.value(x).shape().c),
            ));
        }
        let mut offset = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &len in sizes {
            let value = k::slice_channels(self.value(x), offset, len)?;
            out.push(self.record(value, Op::Slice { x, offset }, &[x]));
            offset += len;
        }
        Ok(out)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.record(value, Op::Sum { x }, &[x])
    }

    /// `Σ weights ⊙ x` with constant weights.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor<T>) -> Result<Var> {
        let prod = k::mul(self.value(x), &weights)?;
        let value = Tensor::scalar(prod.sum());
        Ok(self.record(value, Op::WeightedSum { x, weights }, &[x]))
    }

    /// Mean absolute error against a constant target.
    pub fn l1_loss(&mut self, pred: Var, target: Tensor<T>) -> Result<Var> {
        if self.value(pred).shape() != target.shape() {
            return Err(Error::shape(
                "l1_loss",
                format!("{} vs {}", self.value(pred).shape(), target.shape()),
            ));
        }
        let p = self.value(pred);
        let total: T = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| (a - b).abs())
            .sum();
        let value = Tensor::scalar(total / T::from_f64(p.numel() as f64));
        Ok(self.record(value, Op::L1 { pred, target }, &[pred]))
    }

    /// Mean squared error against a constant target.
    pub fn mse_loss(&mut self, pred: Var, target: Tensor<T>) -> Result<Var> {
        if self.value(pred).shape() != target.shape() {
            return Err(Error::shape(
                "mse_loss",
                format!("{} vs {}", self.value(pred).shape(), target.shape()),
            ));
        }
        let p = self.value(pred);
        let total: T = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        let value = Tensor::scalar(total / T::from_f64(p.numel() as f64));
        Ok(self.record(value, Op::Mse { pred, target }, &[pred]))
    }

    /// Record an op whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor<T>, backward: BackwardFn<T>) -> Var {
        self.record(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                backward,
            },
            inputs,
        )
    }

    /// Reverse-mode sweep from a scalar `loss`. Replaces the gradients of any
    /// previous call; every leaf that requires a gradient ends up with one
    /// (zeros when unreachable from `loss`).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.nodes.iter().any(|n| !matches!(n.op, Op::Leaf)) {
            return Err(Error::Backward("tape has no recorded operations".into()));
        }
        let ls = self.value(loss).shape();
        if ls.numel() != 1 {
            return Err(Error::Backward(format!(
                "loss must be a scalar, got shape {ls}"
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(ls, T::one()));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.shape()));
            }
            if !node.requires_grad {
                grads[i] = None;
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, t: Tensor<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => {
                    for (a, b) in existing.data_mut().iter_mut().zip(t.data()) {
                        *a = *a + *b;
                    }
                }
                slot @ None => *slot = Some(t),
            }
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b } => {
                let (gx, gw, gb) = k::conv2d_backward(val(*x), val(*w), g, rg(*x));
                if let Some(gx) = gx {
                    acc(*x, gx);
                }
                acc(*w, gw);
                if let Some(b) = b {
                    acc(*b, gb);
                }
            }
            Op::Depthwise { x, w, b } => {
                let (gx, gw, gb) = k::depthwise_conv2d_backward(val(*x), val(*w), g);
                acc(*x, gx);
                acc(*w, gw);
                if let Some(b) = b {
                    acc(*b, gb);
                }
            }
            Op::LeakyRelu { x, slope } => acc(*x, k::leaky_relu_backward(val(*x), g, *slope)),
            Op::Relu { x } => acc(*x, k::relu_backward(val(*x), g)),
            Op::Sigmoid { x } => acc(*x, k::sigmoid_backward(&self.nodes[i].value, g)),
            Op::GlobalAvgPool { x } => acc(*x, k::global_avg_pool_backward(val(*x).shape(), g)),
            Op::FullyConnected { x, w, b } => {
                let (gx, gw, gb) = k::fully_connected_backward(val(*x), val(*w), g);
                acc(*x, gx);
                acc(*w, gw);
                if let Some(b) = b {
                    acc(*b, gb);
                }
            }
            Op::PixelShuffle { x, r } => {
                acc(*x, k::pixel_unshuffle(g, *r).expect("shuffle adjoint"));
            }
            Op::Add { a, b } => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Mul { a, b } => {
                acc(*a, k::zip_map(g, val(*b), |g, y| g * y));
                acc(*b, k::zip_map(g, val(*a), |g, x| g * x));
            }
            Op::MulChannelwise { x, g: gate } => {
                let (gx, gg) = k::mul_channelwise_backward(val(*x), val(*gate), g);
                acc(*x, gx);
                acc(*gate, gg);
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let c = val(p).shape().c;
                    acc(p, k::slice_channels(g, offset, c).expect("concat adjoint"));
                    offset += c;
                }
            }
            Op::Slice { x, offset } => {
                let xs = val(*x).shape();
                let mut full = vec![T::zero(); xs.numel()];
                let (p, len) = (xs.plane(), g.shape().c);
                for n in 0..xs.n {
                    let dst = (n * xs.c + offset) * p;
                    full[dst..dst + len * p]
                        .copy_from_slice(&g.data()[n * len * p..(n + 1) * len * p]);
                }
                acc(*x, Tensor::new(xs, full).expect("shape"));
            }
            Op::Sum { x } => {
                let s = g.data()[0];
                acc(*x, Tensor::full(val(*x).shape(), s));
            }
            Op::WeightedSum { x, weights } => {
                let s = g.data()[0];
                acc(*x, weights.map(|w| w * s));
            }
            Op::L1 { pred, target } => {
                let p = val(*pred);
                let scale = g.data()[0] / T::from_f64(p.numel() as f64);
                acc(
                    *pred,
                    k::zip_map(p, target, |a, b| {
                        if a > b {
                            scale
                        } else if a < b {
                            -scale
                        } else {
                            T::zero()
                        }
                    }),
                );
            }
            Op::Mse { pred, target } => {
                let p = val(*pred);
                let scale = T::from_f64(2.0) * g.data()[0] / T::from_f64(p.numel() as f64);
                acc(*pred, k::zip_map(p, target, |a, b| (a - b) * scale));
            }
            Op::Custom { inputs, backward } => {
                let values: Vec<&Tensor<T>> = inputs.iter().map(|&v| val(v)).collect();
                let gs = backward(g, &values);
                for (&v, gv) in inputs.iter().zip(gs) {
                    acc(v, gv);
                }
            }
        }
    }
}

/// Shape of a recorded value, for callers that only hold a [`Var`].
impl<T: Scalar> Tape<T> {
    pub fn shape(&self, v: Var) -> Shape {
        self.value(v).shape()
    }

    /// Sign of every input to a piecewise-linear op (ReLU, LeakyReLU, L1), in
    /// recording order. Two evaluations with equal patterns lie in the same
    /// linear piece of each of those ops.
    pub fn kink_pattern(&self) -> Vec<i8> {
        let sign = |v: T| {
            if v > T::zero() {
                1
            } else if v < T::zero() {
                -1
            } else {
                0
            }
        };
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::LeakyRelu { x, .. } | Op::Relu { x } => {
                    out.extend(self.value(*x).data().iter().map(|&v| sign(v)));
                }
                Op::L1 { pred, target } => {
                    let p = self.value(*pred).data();
                    out.extend(p.iter().zip(target.data()).map(|(&a, &b)| sign(a - b)));
                }
                _ => {}
            }
        }
        out
    }
}
