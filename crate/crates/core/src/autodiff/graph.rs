//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Every op appends a node whose parents already exist, so insertion order is
//! a topological order and `backward` is a single reverse sweep.

use std::collections::HashMap;
use std::sync::Arc;

use super::kernels::{col2im, gemm, im2col, sigmoid, ConvGeom, MatRef};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::spiking::{if_backward, if_forward, select_segments, Surrogate};
use crate::tensor::{Float, Tensor};

pub const BN_EPS: Float = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Variable,
    Param(ParamId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, Float),
    Square(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    MatMul(NodeId, NodeId),
    Reshape(NodeId),
    Linear {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        geom: ConvGeom,
        cols: Vec<Float>,
    },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<Float>,
        inv_std: Vec<Float>,
        stats: Option<BatchStats>,
    },
    IfNeurons {
        x: NodeId,
        steps: usize,
        threshold: Float,
        surrogate: Surrogate,
        v_pre: Vec<Float>,
    },
    Modulate {
        x: NodeId,
        bank: NodeId,
        segments: usize,
        context: Vec<Float>,
        winners: Vec<usize>,
        factors: Vec<Float>,
    },
    MeanTime {
        x: NodeId,
        steps: usize,
    },
    Dueling {
        value: NodeId,
        advantage: NodeId,
    },
    MseGather {
        q: NodeId,
        actions: Vec<usize>,
        targets: Vec<Float>,
    },
}

/// Per-channel statistics of one train-mode batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<Float>,
    /// Unbiased variance, as used for running estimates.
    pub var: Vec<Float>,
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    params: Vec<Tensor>,
    nodes: HashMap<usize, Tensor>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> &Tensor {
        &self.params[id.0]
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    /// Gradient of a [`Graph::variable`] leaf.
    pub fn wrt(&self, node: NodeId) -> Option<&Tensor> {
        self.nodes.get(&node.0)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(Tensor::is_finite)
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    inputs: HashMap<String, NodeId>,
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl Graph {
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

    /// Parent indices of a node, for topology checks.
    pub fn parents(&self, id: NodeId) -> Vec<NodeId> {
        match &self.nodes[id.0].op {
            Op::Input | Op::Variable | Op::Param(_) => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Square(a)
            | Op::Sigmoid(a)
            | Op::Relu(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Reshape(a) => vec![*a],
            Op::Linear { x, w, b } | Op::Conv2d { x, w, b, .. } => vec![*x, *w, *b],
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::IfNeurons { x, .. } | Op::MeanTime { x, .. } => vec![*x],
            Op::Modulate { x, bank, .. } => vec![*x, *bank],
            Op::Dueling { value, advantage } => vec![*value, *advantage],
            Op::MseGather { q, .. } => vec![*q],
        }
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|i| self.nodes[i.0].needs_grad)
    }

    /// Named constant input.
    pub fn input(&mut self, name: &str, value: Tensor) -> NodeId {
        let id = self.push(value, Op::Input, false);
        self.inputs.insert(name.to_string(), id);
        id
    }

    pub fn input_named(&self, name: &str) -> Option<NodeId> {
        self.inputs.get(name).copied()
    }

    /// Constant leaf that does not take part in differentiation.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Input, false)
    }

    /// Leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Variable, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.nodes.push(Node {
            value: store.shared(id),
            op: Op::Param(id),
            needs_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn elementwise(
        &mut self,
        name: &str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(Float, Float) -> Float,
        op: Op,
    ) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape(name, va, vb)?;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_parts(va.shape().to_vec(), data);
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, op, ng))
    }

    fn map(&mut self, a: NodeId, f: impl Fn(Float) -> Float, op: Op) -> NodeId {
        let va = self.value(a);
        let out = Tensor::from_parts(va.shape().to_vec(), va.data().iter().map(|&x| f(x)).collect());
        let ng = self.needs(&[a]);
        self.push(out, op, ng)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, k: Float) -> NodeId {
        self.map(a, |x| x * k, Op::Scale(a, k))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.map(a, |x| x * x, Op::Square(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().sum();
        let ng = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let s = v.data().iter().sum::<Float>() / v.len() as Float;
        let ng = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), ng)
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = (*self.nodes[a.0].value).clone().reshape(shape)?;
        let ng = self.needs(&[a]);
        Ok(self.push(v, Op::Reshape(a), ng))
    }

    /// Collapses everything after the leading axis.
    pub fn flatten(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a);
        let shape = [v.rows(), v.row_len()];
        self.reshape(a, &shape)
    }

    /// Plain matrix product `[m, k] · [k, n]`; 1-D right operands are column vectors.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape().len() != 2 || vb.shape().len() > 2 {
            return Err(Error::shape(
                "matmul",
                format!("{:?} · {:?}", va.shape(), vb.shape()),
            ));
        }
        let (m, k) = (va.shape()[0], va.shape()[1]);
        let n = if vb.shape().len() == 2 { vb.shape()[1] } else { 1 };
        if vb.shape()[0] != k {
            return Err(Error::shape(
                "matmul",
                format!("{:?} · {:?}", va.shape(), vb.shape()),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, MatRef::row_major(va.data(), k), MatRef::row_major(vb.data(), n), 0.0, &mut out);
        let shape = if vb.shape().len() == 2 { vec![m, n] } else { vec![m] };
        let ng = self.needs(&[a, b]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MatMul(a, b), ng))
    }

    /// `x · wᵀ + b` with `x: [n, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, name: &str, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        if vx.shape().len() != 2
            || vw.shape().len() != 2
            || vw.shape()[1] != vx.shape()[1]
            || vb.shape() != [vw.shape()[0]]
        {
            return Err(Error::shape(
                name,
                format!(
                    "input {:?}, weight {:?}, bias {:?}",
                    vx.shape(),
                    vw.shape(),
                    vb.shape()
                ),
            ));
        }
        let (n, fin, fout) = (vx.shape()[0], vx.shape()[1], vw.shape()[0]);
        let mut out = Vec::with_capacity(n * fout);
        for _ in 0..n {
            out.extend_from_slice(vb.data());
        }
        gemm(
            n,
            fin,
            fout,
            MatRef::row_major(vx.data(), fin),
            MatRef::transposed(vw.data(), fin),
            1.0,
            &mut out,
        );
        let ng = self.needs(&[x, w, b]);
        Ok(self.push(Tensor::from_parts(vec![n, fout], out), Op::Linear { x, w, b }, ng))
    }

    /// Unpadded convolution of `x: [n, c, h, w]` with `w: [o, c, k, k]`.
    pub fn conv2d(
        &mut self,
        name: &str,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
    ) -> Result<NodeId> {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        let (xs, ws) = (vx.shape(), vw.shape());
        if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || ws[2] != ws[3] {
            return Err(Error::shape(name, format!("input {xs:?}, kernel {ws:?}")));
        }
        if vb.shape() != [ws[0]] {
            return Err(Error::shape(name, format!("bias {:?} for {} filters", vb.shape(), ws[0])));
        }
        if stride == 0 {
            return Err(Error::shape(name, "stride must be at least 1"));
        }
        if ws[2] > xs[2] || ws[3] > xs[3] {
            return Err(Error::shape(
                name,
                format!("kernel {}x{} larger than input {}x{}", ws[2], ws[3], xs[2], xs[3]),
            ));
        }
        let geom = ConvGeom {
            batch: xs[0],
            in_channels: xs[1],
            height: xs[2],
            width: xs[3],
            kernel: ws[2],
            stride,
        };
        let filters = ws[0];
        let (p, kk) = (geom.positions(), geom.patch_len());
        let np = geom.batch * p;
        let cols = im2col(vx.data(), &geom);
        let mut mat = vec![0.0; filters * np];
        gemm(
            filters,
            kk,
            np,
            MatRef::row_major(vw.data(), kk),
            MatRef::row_major(&cols, np),
            0.0,
            &mut mat,
        );
        let mut out = vec![0.0; filters * np];
        for n in 0..geom.batch {
            for o in 0..filters {
                let bias = vb.data()[o];
                let dst = &mut out[(n * filters + o) * p..(n * filters + o + 1) * p];
                let src = &mat[o * np + n * p..o * np + (n + 1) * p];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s + bias;
                }
            }
        }
        let shape = vec![geom.batch, filters, geom.out_height(), geom.out_width()];
        let ng = self.needs(&[x, w, b]);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Conv2d { x, w, b, geom, cols },
            ng,
        ))
    }

    /// Batch normalization over every axis except the channel axis (axis 1).
    ///
    /// With `running = None` the batch statistics are used and recorded for
    /// [`Graph::batch_stats`]; otherwise the supplied `(mean, var)` are used.
    pub fn batch_norm(
        &mut self,
        name: &str,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running: Option<(&[Float], &[Float])>,
    ) -> Result<NodeId> {
        let (vx, vg, vb) = (self.value(x), self.value(gamma), self.value(beta));
        let xs = vx.shape();
        if xs.len() < 2 || vg.shape() != [xs[1]] || vb.shape() != [xs[1]] {
            return Err(Error::shape(
                name,
                format!("input {xs:?}, scale {:?}, shift {:?}", vg.shape(), vb.shape()),
            ));
        }
        let (n, c) = (xs[0], xs[1]);
        let s: usize = xs[2..].iter().product();
        let m = (n * s) as Float;
        let data = vx.data();
        let (mean, var, stats) = match running {
            Some((rm, rv)) => {
                if rm.len() != c || rv.len() != c {
                    return Err(Error::shape(name, "running statistics length"));
                }
                (rm.to_vec(), rv.to_vec(), None)
            }
            None => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for b in 0..n {
                    for ch in 0..c {
                        let sl = &data[(b * c + ch) * s..(b * c + ch + 1) * s];
                        mean[ch] += sl.iter().sum::<Float>();
                    }
                }
                mean.iter_mut().for_each(|v| *v /= m);
                for b in 0..n {
                    for ch in 0..c {
                        let sl = &data[(b * c + ch) * s..(b * c + ch + 1) * s];
                        var[ch] += sl.iter().map(|v| (v - mean[ch]) * (v - mean[ch])).sum::<Float>();
                    }
                }
                let unbiased = var
                    .iter()
                    .map(|v| if m > 1.0 { v / (m - 1.0) } else { 0.0 })
                    .collect();
                var.iter_mut().for_each(|v| *v /= m);
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, var, Some(stats))
            }
        };
        let inv_std: Vec<Float> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = vec![0.0; data.len()];
        let mut out = vec![0.0; data.len()];
        for b in 0..n {
            for ch in 0..c {
                let r = (b * c + ch) * s..(b * c + ch + 1) * s;
                let (g, sh) = (vg.data()[ch], vb.data()[ch]);
                for i in r {
                    let h = (data[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = g * h + sh;
                }
            }
        }
        let ng = self.needs(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::from_parts(xs.to_vec(), out),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                stats,
            },
            ng,
        ))
    }

    /// Statistics recorded by a train-mode [`Graph::batch_norm`] node.
    pub fn batch_stats(&self, id: NodeId) -> Option<&BatchStats> {
        match &self.nodes[id.0].op {
            Op::BatchNorm { stats, .. } => stats.as_ref(),
            _ => None,
        }
    }

    /// Integrate-and-fire layer unrolled over `steps` simulation steps.
    ///
    /// `x` is either `[steps * batch, ...]` (one current per step, step-major)
    /// or `[batch, ...]` with `broadcast = true`, in which case the same
    /// current is injected every step. Output is `[steps * batch, ...]` spikes.
    /// With `relaxed = true` spikes are replaced by the smooth surrogate primitive.
    pub fn if_neurons(
        &mut self,
        x: NodeId,
        steps: usize,
        broadcast: bool,
        threshold: Float,
        surrogate: Surrogate,
        relaxed: bool,
    ) -> Result<NodeId> {
        let vx = self.value(x);
        let rows = vx.rows();
        let neurons = if broadcast {
            vx.len()
        } else {
            if rows % steps != 0 {
                return Err(Error::shape(
                    "if_neurons",
                    format!("{rows} rows not divisible by {steps} steps"),
                ));
            }
            vx.len() / steps
        };
        let (spikes, v_pre) = if_forward(
            vx.data(),
            neurons,
            steps,
            threshold,
            relaxed.then_some(&surrogate),
        );
        let mut shape = vx.shape().to_vec();
        if broadcast {
            shape[0] *= steps;
        }
        let ng = self.needs(&[x]);
        Ok(self.push(
            Tensor::from_parts(shape, spikes),
            Op::IfNeurons {
                x,
                steps,
                threshold,
                surrogate,
                v_pre,
            },
            ng,
        ))
    }

    /// Gates `x: [rows, neurons]` by `sigmoid(max_j d_jᵀc)` of its dendrite bank.
    ///
    /// `bank` is `[neurons, J, C]` (one bank per neuron) or `[J, C]` (shared).
    pub fn modulate(&mut self, x: NodeId, bank: NodeId, context: &[Float]) -> Result<NodeId> {
        let (vx, vd) = (self.value(x), self.value(bank));
        let ds = vd.shape();
        if vx.shape().len() != 2 {
            return Err(Error::shape("modulate", format!("input {:?}", vx.shape())));
        }
        let neurons = vx.shape()[1];
        let (banks, segments, cdim) = match ds.len() {
            2 => (1, ds[0], ds[1]),
            3 => (ds[0], ds[1], ds[2]),
            _ => return Err(Error::shape("modulate", format!("bank {ds:?}"))),
        };
        if banks != 1 && banks != neurons {
            return Err(Error::shape(
                "modulate",
                format!("{banks} banks for {neurons} neurons"),
            ));
        }
        if context.len() != cdim {
            return Err(Error::ContextLength {
                expected: cdim,
                got: context.len(),
            });
        }
        let gates = select_segments(vd.data(), segments, context);
        let winners: Vec<usize> = gates.iter().map(|g| g.segment).collect();
        let factors: Vec<Float> = gates.iter().map(|g| g.factor).collect();
        let mut out = vx.data().to_vec();
        for row in out.chunks_mut(neurons) {
            for (n, v) in row.iter_mut().enumerate() {
                *v *= factors[if banks == 1 { 0 } else { n }];
            }
        }
        let ng = self.needs(&[x, bank]);
        Ok(self.push(
            Tensor::from_parts(vx.shape().to_vec(), out),
            Op::Modulate {
                x,
                bank,
                segments,
                context: context.to_vec(),
                winners,
                factors,
            },
            ng,
        ))
    }

    /// Averages a step-major `[steps * batch, ...]` tensor over steps.
    pub fn mean_time(&mut self, x: NodeId, steps: usize) -> Result<NodeId> {
        let vx = self.value(x);
        if vx.rows() % steps != 0 {
            return Err(Error::shape(
                "mean_time",
                format!("{} rows not divisible by {steps} steps", vx.rows()),
            ));
        }
        let chunk = vx.len() / steps;
        let mut out = vec![0.0; chunk];
        for t in 0..steps {
            for (o, v) in out.iter_mut().zip(&vx.data()[t * chunk..(t + 1) * chunk]) {
                *o += v;
            }
        }
        let k = 1.0 / steps as Float;
        out.iter_mut().for_each(|v| *v *= k);
        let mut shape = vx.shape().to_vec();
        shape[0] /= steps;
        let ng = self.needs(&[x]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MeanTime { x, steps }, ng))
    }

    /// `Q = V + A - mean_a A` for `value: [b, 1]`, `advantage: [b, actions]`.
    pub fn dueling(&mut self, value: NodeId, advantage: NodeId) -> Result<NodeId> {
        let (vv, va) = (self.value(value), self.value(advantage));
        if va.shape().len() != 2 || vv.shape() != [va.shape()[0], 1] {
            return Err(Error::shape(
                "dueling",
                format!("value {:?}, advantage {:?}", vv.shape(), va.shape()),
            ));
        }
        let a = va.shape()[1];
        let mut out = va.data().to_vec();
        for (b, row) in out.chunks_mut(a).enumerate() {
            let mean = row.iter().sum::<Float>() / a as Float;
            let v = vv.data()[b];
            row.iter_mut().for_each(|q| *q = v + (*q - mean));
        }
        let ng = self.needs(&[value, advantage]);
        Ok(self.push(
            Tensor::from_parts(va.shape().to_vec(), out),
            Op::Dueling { value, advantage },
            ng,
        ))
    }

    /// `mean_b (targets[b] - q[b, actions[b]])²`; targets carry no gradient.
    pub fn mse_gather(&mut self, q: NodeId, actions: &[usize], targets: &[Float]) -> Result<NodeId> {
        let vq = self.value(q);
        let (b, a) = (vq.rows(), vq.row_len());
        if actions.len() != b || targets.len() != b {
            return Err(Error::shape(
                "mse_gather",
                format!("{b} rows, {} actions, {} targets", actions.len(), targets.len()),
            ));
        }
        if let Some(&bad) = actions.iter().find(|&&x| x >= a) {
            return Err(Error::ActionOutOfRange { action: bad, count: a });
        }
        let loss = actions
            .iter()
            .zip(targets)
            .enumerate()
            .map(|(i, (&act, &y))| {
                let d = y - vq.data()[i * a + act];
                d * d
            })
            .sum::<Float>()
            / b as Float;
        let ng = self.needs(&[q]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::MseGather {
                q,
                actions: actions.to_vec(),
                targets: targets.to_vec(),
            },
            ng,
        ))
    }

    /// Reverse sweep from a scalar `loss`, seeding `∂loss/∂loss = 1`.
    ///
    /// Every parameter of `store` receives a gradient tensor (zeros when unused).
    pub fn backward(&self, loss: NodeId, store: &ParamStore) -> Result<Gradients> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::BackwardBeforeForward);
        }
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_parts(lv.shape().to_vec(), vec![1.0]));
        let mut out = Gradients {
            params: store.ids().map(|id| Tensor::zeros(store.get(id).shape())).collect(),
            nodes: HashMap::new(),
        };

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backprop_node(i, node, g, &mut grads, &mut out)?;
        }
        Ok(out)
    }

    fn backprop_node(
        &self,
        idx: usize,
        node: &Node,
        g: Tensor,
        grads: &mut [Option<Tensor>],
        out: &mut Gradients,
    ) -> Result<()> {
        let gd = g.data();
        // accumulate into a parent only if it participates in differentiation
        let mut acc = |id: NodeId, f: &dyn Fn() -> Vec<Float>| {
            if !self.nodes[id.0].needs_grad {
                return;
            }
            let contrib = f();
            match &mut grads[id.0] {
                Some(t) => t.data_mut().iter_mut().zip(&contrib).for_each(|(a, b)| *a += b),
                slot @ None => {
                    *slot = Some(Tensor::from_parts(self.value(id).shape().to_vec(), contrib))
                }
            }
        };
        match &node.op {
            Op::Input => {}
            Op::Variable => {
                out.nodes.insert(idx, g);
            }
            Op::Param(pid) => {
                let dst = out.params[pid.0].data_mut();
                dst.iter_mut().zip(gd).for_each(|(a, b)| *a += b);
            }
            Op::Add(a, b) => {
                acc(*a, &|| gd.to_vec());
                acc(*b, &|| gd.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, &|| gd.to_vec());
                acc(*b, &|| gd.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &|| gd.iter().zip(vb).map(|(g, y)| g * y).collect());
                acc(*b, &|| gd.iter().zip(va).map(|(g, x)| g * x).collect());
            }
            Op::Scale(a, k) => acc(*a, &|| gd.iter().map(|v| v * k).collect()),
            Op::Square(a) => {
                let va = self.value(*a).data();
                acc(*a, &|| gd.iter().zip(va).map(|(g, x)| 2.0 * g * x).collect());
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                acc(*a, &|| gd.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)).collect());
            }
            Op::Relu(a) => {
                let va = self.value(*a).data();
                acc(*a, &|| {
                    gd.iter()
                        .zip(va)
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect()
                });
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                acc(*a, &|| vec![gd[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                acc(*a, &|| vec![gd[0] / n as Float; n]);
            }
            Op::Reshape(a) => acc(*a, &|| gd.to_vec()),
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.len() / k;
                acc(*a, &|| {
                    let mut d = vec![0.0; m * k];
                    gemm(m, n, k, MatRef::row_major(gd, n), MatRef::transposed(vb.data(), n), 0.0, &mut d);
                    d
                });
                acc(*b, &|| {
                    let mut d = vec![0.0; k * n];
                    gemm(k, m, n, MatRef::transposed(va.data(), k), MatRef::row_major(gd, n), 0.0, &mut d);
                    d
                });
            }
            Op::Linear { x, w, b } => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let (n, fin) = (vx.shape()[0], vx.shape()[1]);
                let fout = vw.shape()[0];
                acc(*x, &|| {
                    let mut d = vec![0.0; n * fin];
                    gemm(n, fout, fin, MatRef::row_major(gd, fout), MatRef::row_major(vw.data(), fin), 0.0, &mut d);
                    d
                });
                acc(*w, &|| {
                    let mut d = vec![0.0; fout * fin];
                    gemm(fout, n, fin, MatRef::transposed(gd, fout), MatRef::row_major(vx.data(), fin), 0.0, &mut d);
                    d
                });
                acc(*b, &|| {
                    let mut d = vec![0.0; fout];
                    for row in gd.chunks(fout) {
                        d.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    }
                    d
                });
            }
            Op::Conv2d { x, w, b, geom, cols } => {
                let vw = self.value(*w);
                let filters = vw.shape()[0];
                let (p, kk) = (geom.positions(), geom.patch_len());
                let np = geom.batch * p;
                let mut dmat = vec![0.0; filters * np];
                for n in 0..geom.batch {
                    for o in 0..filters {
                        let src = &gd[(n * filters + o) * p..(n * filters + o + 1) * p];
                        dmat[o * np + n * p..o * np + (n + 1) * p].copy_from_slice(src);
                    }
                }
                acc(*w, &|| {
                    let mut d = vec![0.0; filters * kk];
                    gemm(filters, np, kk, MatRef::row_major(&dmat, np), MatRef::transposed(cols, np), 0.0, &mut d);
                    d
                });
                acc(*b, &|| {
                    (0..filters)
                        .map(|o| dmat[o * np..(o + 1) * np].iter().sum())
                        .collect()
                });
                acc(*x, &|| {
                    let mut dcols = vec![0.0; kk * np];
                    gemm(kk, filters, np, MatRef::transposed(vw.data(), kk), MatRef::row_major(&dmat, np), 0.0, &mut dcols);
                    let mut dx = vec![0.0; self.value(*x).len()];
                    col2im(&dcols, geom, &mut dx);
                    dx
                });
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                stats,
            } => {
                let vx = self.value(*x);
                let xs = vx.shape();
                let (n, c) = (xs[0], xs[1]);
                let s: usize = xs[2..].iter().product();
                let m = (n * s) as Float;
                let vg = self.value(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for bi in 0..n {
                    for ch in 0..c {
                        for i in (bi * c + ch) * s..(bi * c + ch + 1) * s {
                            dgamma[ch] += gd[i] * xhat[i];
                            dbeta[ch] += gd[i];
                        }
                    }
                }
                acc(*gamma, &|| dgamma.clone());
                acc(*beta, &|| dbeta.clone());
                acc(*x, &|| {
                    let mut dx = vec![0.0; vx.len()];
                    for bi in 0..n {
                        for ch in 0..c {
                            for i in (bi * c + ch) * s..(bi * c + ch + 1) * s {
                                let dxhat = gd[i] * vg[ch];
                                dx[i] = if stats.is_some() {
                                    // sum_i dxhat_i = gamma * dbeta, sum_i dxhat_i xhat_i = gamma * dgamma
                                    inv_std[ch] / m
                                        * (m * dxhat - vg[ch] * dbeta[ch] - xhat[i] * vg[ch] * dgamma[ch])
                                } else {
                                    dxhat * inv_std[ch]
                                };
                            }
                        }
                    }
                    dx
                });
            }
            Op::IfNeurons {
                x,
                steps,
                threshold,
                surrogate,
                v_pre,
            } => {
                let vx = self.value(*x);
                let broadcast = vx.rows() != node.value.rows();
                let neurons = node.value.len() / steps;
                acc(*x, &|| {
                    if_backward(gd, node.value.data(), v_pre, neurons, *steps, *threshold, surrogate, broadcast)
                });
            }
            Op::Modulate {
                x,
                bank,
                segments,
                context,
                winners,
                factors,
            } => {
                let vx = self.value(*x);
                let neurons = vx.shape()[1];
                let shared = factors.len() == 1;
                let fac = |n: usize| factors[if shared { 0 } else { n }];
                acc(*x, &|| {
                    gd.iter()
                        .enumerate()
                        .map(|(i, g)| g * fac(i % neurons))
                        .collect()
                });
                acc(*bank, &|| {
                    let cdim = context.len();
                    let mut d = vec![0.0; self.value(*bank).len()];
                    // d(out)/d(activation) summed over rows, per bank
                    let mut per_bank = vec![0.0; factors.len()];
                    for (i, (g, xv)) in gd.iter().zip(vx.data()).enumerate() {
                        let n = i % neurons;
                        per_bank[if shared { 0 } else { n }] += g * xv;
                    }
                    for (bidx, s) in per_bank.iter().enumerate() {
                        let f = factors[bidx];
                        let dact = s * f * (1.0 - f);
                        let seg = winners[bidx];
                        let off = (bidx * segments + seg) * cdim;
                        for (k, cv) in context.iter().enumerate() {
                            d[off + k] += dact * cv;
                        }
                    }
                    d
                });
            }
            Op::MeanTime { x, steps } => {
                let k = 1.0 / *steps as Float;
                acc(*x, &|| {
                    let mut d = Vec::with_capacity(gd.len() * steps);
                    for _ in 0..*steps {
                        d.extend(gd.iter().map(|v| v * k));
                    }
                    d
                });
            }
            Op::Dueling { value, advantage } => {
                let a = node.value.row_len();
                acc(*value, &|| gd.chunks(a).map(|row| row.iter().sum()).collect());
                acc(*advantage, &|| {
                    let mut d = Vec::with_capacity(gd.len());
                    for row in gd.chunks(a) {
                        let mean = row.iter().sum::<Float>() / a as Float;
                        d.extend(row.iter().map(|g| g - mean));
                    }
                    d
                });
            }
            Op::MseGather { q, actions, targets } => {
                let vq = self.value(*q);
                let (b, a) = (vq.rows(), vq.row_len());
                acc(*q, &|| {
                    let mut d = vec![0.0; b * a];
                    for (i, (&act, &y)) in actions.iter().zip(targets).enumerate() {
                        d[i * a + act] = -2.0 / b as Float * (y - vq.data()[i * a + act]) * gd[0];
                    }
                    d
                });
            }
        }
        Ok(())
    }
}
