use std::borrow::Cow;
use std::collections::BTreeMap;

use crate::error::{invalid, Result, TensorError};
use crate::ops::conv::ConvGeom;
use crate::ops::shape::Broadcast;
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

/// Recorded operation with whatever the backward pass needs.
pub(crate) enum Op<T> {
    Leaf,
    Param(ParamId),
    Linear {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        rows: usize,
        din: usize,
        dout: usize,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    AddBroadcast {
        a: NodeId,
        b: NodeId,
        map: Broadcast,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    MulBroadcast {
        a: NodeId,
        b: NodeId,
        map: Broadcast,
    },
    Scale {
        x: NodeId,
        s: T,
    },
    Gelu {
        x: NodeId,
    },
    Softmax {
        x: NodeId,
    },
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        d: usize,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    BatchNorm2d {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        batch: usize,
        channels: usize,
        plane: usize,
        xhat: Vec<T>,
        rstd: Vec<T>,
        training: bool,
    },
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        groups: usize,
        nq: usize,
        nk: usize,
        d: usize,
        dv: usize,
        scale: T,
        probs: Vec<T>,
    },
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        geom: ConvGeom,
    },
    Permute {
        x: NodeId,
        in_shape: Vec<usize>,
        perm: Vec<usize>,
    },
    Reshape {
        x: NodeId,
    },
    Concat {
        inputs: Vec<NodeId>,
        outer: usize,
        inner: usize,
        extents: Vec<usize>,
    },
    Slice {
        x: NodeId,
        outer: usize,
        inner: usize,
        full: usize,
        start: usize,
        len: usize,
    },
    MeanAxis {
        x: NodeId,
        outer: usize,
        n: usize,
        inner: usize,
    },
    Sum {
        x: NodeId,
    },
    Mean {
        x: NodeId,
    },
    Mse {
        pred: NodeId,
        target: Vec<T>,
    },
    WeightedCe {
        probs: NodeId,
        labels: Vec<T>,
        alpha: T,
        clamp: T,
    },
}

pub(crate) struct Node<'a, T: Real> {
    pub(crate) value: Cow<'a, Tensor<T>>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

/// Batch statistics observed by a training-mode batch-norm call, to be folded
/// into the running buffers once the graph is dropped.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub mean: Vec<f64>,
    pub var_unbiased: Vec<f64>,
}

/// Define-by-run tape. Operations evaluate eagerly and record what reverse
/// mode needs; [`Graph::backward`] walks the tape once in reverse.
pub struct Graph<'a, T: Real> {
    store: Option<&'a ParamStore<T>>,
    pub(crate) nodes: Vec<Node<'a, T>>,
    param_nodes: Vec<Option<NodeId>>,
    grad_enabled: bool,
    training: bool,
    bn_updates: Vec<BnUpdate>,
    fault: Option<T>,
}

impl<'a, T: Real> Graph<'a, T> {
    /// Gradient-recording graph over `store`; batch norm in inference mode.
    pub fn new(store: &'a ParamStore<T>) -> Self {
        Self {
            store: Some(store),
            nodes: Vec::new(),
            param_nodes: vec![None; store.len()],
            grad_enabled: true,
            training: false,
            bn_updates: Vec::new(),
            fault: None,
        }
    }

    /// Inference graph: nothing requires gradients.
    pub fn no_grad(store: &'a ParamStore<T>) -> Self {
        let mut g = Self::new(store);
        g.grad_enabled = false;
        g
    }

    /// Graph without parameters (free-standing op tests, oracles).
    pub fn detached() -> Self {
        Self {
            store: None,
            nodes: Vec::new(),
            param_nodes: Vec::new(),
            grad_enabled: true,
            training: false,
            bn_updates: Vec::new(),
            fault: None,
        }
    }

    /// Switches batch normalization to batch statistics.
    pub fn with_training(mut self, training: bool) -> Self {
        self.training = training;
        self
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    /// Scales every gradient returned by [`backward`](Self::backward).
    /// Negative control for gradient checking only.
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, factor: f64) {
        self.fault = Some(T::from_f64(factor));
    }

    pub fn store(&self) -> Result<&'a ParamStore<T>> {
        self.store
            .ok_or_else(|| invalid("Graph::store", "graph has no parameter store"))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate> {
        std::mem::take(&mut self.bn_updates)
    }

    pub(crate) fn push_bn_update(&mut self, u: BnUpdate) {
        self.bn_updates.push(u);
    }

    /// Constant input.
    pub fn constant(&mut self, t: Tensor<T>) -> NodeId {
        self.nodes.push(Node {
            value: Cow::Owned(t),
            op: Op::Leaf,
            requires_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Input leaf whose gradient is reported by [`Gradients::input`].
    pub fn input(&mut self, t: Tensor<T>) -> NodeId {
        let req = self.grad_enabled;
        self.nodes.push(Node {
            value: Cow::Owned(t),
            op: Op::Leaf,
            requires_grad: req,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf bound to a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes.get(id.index()).copied().flatten() {
            return n;
        }
        let store = self.store.expect("Graph::param on a detached graph");
        let p = store.param(id);
        let req = self.grad_enabled
            && !p.frozen
            && p.kind == crate::params::ParamKind::Trainable;
        self.nodes.push(Node {
            value: Cow::Borrowed(&p.value),
            op: Op::Param(id),
            requires_grad: req,
        });
        let n = NodeId(self.nodes.len() - 1);
        if self.param_nodes.len() <= id.index() {
            self.param_nodes.resize(id.index() + 1, None);
        }
        self.param_nodes[id.index()] = Some(n);
        n
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[NodeId]) -> NodeId {
        let req = self.grad_enabled && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op: if req { op } else { Op::Leaf },
            requires_grad: req,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(invalid(
                "backward",
                format!("loss must be scalar, got shape {:?}", lv.shape()),
            ));
        }
        if !lv.item().is_finite() {
            return Err(TensorError::NonFinite(format!("loss = {}", lv.item())));
        }
        let mut buf = GradBuf::new(&self.nodes);
        let n_params = self.store.map(|s| s.len()).unwrap_or(0);
        let mut out = Gradients {
            params: vec![None; n_params],
            inputs: BTreeMap::new(),
        };
        if !self.nodes[loss.0].requires_grad {
            return Ok(out);
        }
        buf.g[loss.0] = Some(vec![T::ONE]);
        for i in (0..=loss.0).rev() {
            let Some(gout) = buf.g[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    if node.requires_grad {
                        out.inputs.insert(NodeId(i), self.finish(node.value.shape(), gout)?);
                    }
                }
                Op::Param(pid) => {
                    out.params[pid.index()] = Some(self.finish(node.value.shape(), gout)?);
                }
                op => self.backprop(op, NodeId(i), &gout, &mut buf)?,
            }
        }
        Ok(out)
    }

    fn finish(&self, shape: &[usize], mut g: Vec<T>) -> Result<Tensor<T>> {
        if let Some(f) = self.fault {
            for v in &mut g {
                *v *= f;
            }
        }
        Tensor::new(shape, g)
    }

    fn backprop(&self, op: &Op<T>, out: NodeId, gout: &[T], buf: &mut GradBuf<T>) -> Result<()> {
        use crate::ops::*;
        let v = |id: NodeId| self.nodes[id.0].value.data();
        match op {
            Op::Leaf | Op::Param(_) => unreachable!(),
            Op::Linear {
                x,
                w,
                b,
                rows,
                din,
                dout,
            } => linalg::linear_backward(
                gout,
                (*x, v(*x)),
                (*w, v(*w)),
                *b,
                (*rows, *din, *dout),
                buf,
            ),
            Op::Add { a, b } => {
                buf.add(*a, gout);
                buf.add(*b, gout);
            }
            Op::AddBroadcast { a, b, map } => {
                buf.add(*a, gout);
                if let Some(gb) = buf.get(*b) {
                    map.reduce_into(gout, gb);
                }
            }
            Op::Mul { a, b } => elementwise::mul_backward(gout, (*a, v(*a)), (*b, v(*b)), buf),
            Op::MulBroadcast { a, b, map } => {
                elementwise::mul_broadcast_backward(gout, (*a, v(*a)), (*b, v(*b)), map, buf)
            }
            Op::Scale { x, s } => {
                if let Some(gx) = buf.get(*x) {
                    for (g, &o) in gx.iter_mut().zip(gout) {
                        *g += o * *s;
                    }
                }
            }
            Op::Gelu { x } => elementwise::gelu_backward(gout, *x, v(*x), buf),
            Op::Softmax { x } => {
                elementwise::softmax_backward(gout, *x, self.value(out), buf)
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                d,
                xhat,
                rstd,
            } => norm::layer_norm_backward(gout, *x, (*gamma, v(*gamma)), *beta, *d, xhat, rstd, buf),
            Op::BatchNorm2d {
                x,
                gamma,
                beta,
                batch,
                channels,
                plane,
                xhat,
                rstd,
                training,
            } => norm::batch_norm_backward(
                gout,
                *x,
                (*gamma, v(*gamma)),
                *beta,
                (*batch, *channels, *plane),
                xhat,
                rstd,
                *training,
                buf,
            ),
            Op::Attention {
                q,
                k,
                v: vv,
                groups,
                nq,
                nk,
                d,
                dv,
                scale,
                probs,
            } => attention::attention_backward(
                gout,
                [(*q, v(*q)), (*k, v(*k)), (*vv, v(*vv))],
                (*groups, *nq, *nk, *d, *dv),
                *scale,
                probs,
                buf,
            ),
            Op::Conv2d { x, w, b, geom } => {
                conv::conv2d_backward(gout, (*x, v(*x)), (*w, v(*w)), *b, geom, buf)
            }
            Op::Permute { x, in_shape, perm } => {
                if let Some(gx) = buf.get(*x) {
                    shape::permute_scatter(gout, in_shape, perm, gx);
                }
            }
            Op::Reshape { x } => buf.add(*x, gout),
            Op::Concat {
                inputs,
                outer,
                inner,
                extents,
            } => shape::concat_backward(gout, inputs, *outer, *inner, extents, buf),
            Op::Slice {
                x,
                outer,
                inner,
                full,
                start,
                len,
            } => {
                if let Some(gx) = buf.get(*x) {
                    shape::slice_scatter(gout, *outer, *inner, *full, *start, *len, gx);
                }
            }
            Op::MeanAxis { x, outer, n, inner } => {
                if let Some(gx) = buf.get(*x) {
                    shape::mean_axis_scatter(gout, *outer, *n, *inner, gx);
                }
            }
            Op::Sum { x } => {
                if let Some(gx) = buf.get(*x) {
                    for g in gx.iter_mut() {
                        *g += gout[0];
                    }
                }
            }
            Op::Mean { x } => {
                if let Some(gx) = buf.get(*x) {
                    let s = gout[0] / T::from_f64(gx.len() as f64);
                    for g in gx.iter_mut() {
                        *g += s;
                    }
                }
            }
            Op::Mse { pred, target } => loss::mse_backward(gout[0], *pred, v(*pred), target, buf),
            Op::WeightedCe {
                probs,
                labels,
                alpha,
                clamp,
            } => loss::weighted_ce_backward(gout[0], *probs, v(*probs), labels, *alpha, *clamp, buf),
        }
        Ok(())
    }
}

/// Gradient accumulators for the nodes that require them.
pub(crate) struct GradBuf<T> {
    pub(crate) g: Vec<Option<Vec<T>>>,
    req: Vec<bool>,
    sizes: Vec<usize>,
}

impl<T: Real> GradBuf<T> {
    fn new(nodes: &[Node<'_, T>]) -> Self {
        Self {
            g: (0..nodes.len()).map(|_| None).collect(),
            req: nodes.iter().map(|n| n.requires_grad).collect(),
            sizes: nodes.iter().map(|n| n.value.numel()).collect(),
        }
    }

    /// Zero-initialized accumulator for `id`, or `None` when `id` needs no gradient.
    pub(crate) fn get(&mut self, id: NodeId) -> Option<&mut [T]> {
        if !self.req[id.0] {
            return None;
        }
        let n = self.sizes[id.0];
        Some(self.g[id.0].get_or_insert_with(|| vec![T::ZERO; n]))
    }

    pub(crate) fn add(&mut self, id: NodeId, v: &[T]) {
        if !self.req[id.0] {
            return;
        }
        match &mut self.g[id.0] {
            Some(g) => {
                for (a, &b) in g.iter_mut().zip(v) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(v.to_vec()),
        }
    }
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    params: Vec<Option<Tensor<T>>>,
    inputs: BTreeMap<NodeId, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(id.index()).and_then(|g| g.as_ref())
    }

    pub fn input(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.inputs.get(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = (usize, &Tensor<T>)> {
        self.params
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (i, g)))
    }

    /// Elementwise `self += other`, used to accumulate micro-batches.
    pub fn accumulate(&mut self, other: Gradients<T>) {
        if self.params.len() < other.params.len() {
            self.params.resize(other.params.len(), None);
        }
        for (slot, g) in self.params.iter_mut().zip(other.params) {
            match (slot.as_mut(), g) {
                (Some(a), Some(b)) => {
                    for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                        *x += y;
                    }
                }
                (None, Some(b)) => *slot = Some(b),
                _ => {}
            }
        }
    }

    /// Every gradient finite.
    pub fn all_finite(&self) -> bool {
        self.params.iter().flatten().all(|g| g.is_finite())
            && self.inputs.values().all(|g| g.is_finite())
    }
}
