//! Tape-based reverse-mode autograd.
//!
//! Ops evaluate eagerly when a node is added; [`Graph::backward`] walks the
//! tape in reverse and accumulates gradients. Node creation order is the
//! topological order, which makes the backward pass a plain reverse loop.

use super::backend;
use super::tensor::Tensor;
use super::NnError;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    Add {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        a: NodeId,
        c: f64,
    },
    MulConst {
        a: NodeId,
        mask: Tensor,
    },
    MatMul {
        a: NodeId,
        b: NodeId,
    },
    AddBias {
        a: NodeId,
        bias: NodeId,
    },
    BmmNn {
        a: NodeId,
        b: NodeId,
    },
    BmmNt {
        a: NodeId,
        b: NodeId,
    },
    Relu {
        a: NodeId,
    },
    Gelu {
        a: NodeId,
    },
    SoftmaxLast {
        a: NodeId,
    },
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    Conv1d {
        x: NodeId,
        w: NodeId,
        bias: NodeId,
    },
    Reshape {
        a: NodeId,
    },
    Permute {
        a: NodeId,
        perm: Vec<usize>,
    },
    MeanAxis1 {
        a: NodeId,
    },
    ConcatLast {
        a: NodeId,
        b: NodeId,
    },
    SumAll {
        a: NodeId,
    },
    WeightedSum {
        a: NodeId,
        weights: Tensor,
    },
    CrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Tensor,
    },
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn any_requires(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Constant input; gradients are not tracked through it.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    /// Differentiable leaf (parameter or input under test).
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err("add", va, vb));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::from_vec(va.shape(), data);
        Ok(self.push(Op::Add { a, b }, value, self.any_requires(&[a, b])))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let va = self.value(a);
        let data = va.data().iter().map(|x| x * c).collect();
        let value = Tensor::from_vec(va.shape(), data);
        let req = self.nodes[a.0].requires_grad;
        self.push(Op::Scale { a, c }, value, req)
    }

    /// Elementwise product with a constant tensor (dropout masks and the like).
    pub fn mul_const(&mut self, a: NodeId, mask: Tensor) -> Result<NodeId, NnError> {
        let va = self.value(a);
        if va.shape() != mask.shape() {
            return Err(shape_err("mul_const", va, &mask));
        }
        let data = va
            .data()
            .iter()
            .zip(mask.data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::from_vec(va.shape(), data);
        let req = self.nodes[a.0].requires_grad;
        Ok(self.push(Op::MulConst { a, mask }, value, req))
    }

    /// 2-D matrix product `[m,k] . [k,n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let (va, vb) = (self.value(a), self.value(b));
        match (va.shape(), vb.shape()) {
            ([m, k], [k2, n]) if k == k2 => {
                let (m, k, n) = (*m, *k, *n);
                let mut out = Tensor::zeros(&[m, n]);
                backend::mm(va.data(), vb.data(), out.data_mut(), m, k, n);
                Ok(self.push(Op::MatMul { a, b }, out, self.any_requires(&[a, b])))
            }
            _ => Err(shape_err("matmul", va, vb)),
        }
    }

    /// Broadcast-add a `[n]` bias over the last dimension.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, NnError> {
        let (va, vb) = (self.value(a), self.value(bias));
        let n = *va.shape().last().unwrap_or(&0);
        if vb.shape() != [n] || n == 0 {
            return Err(shape_err("add_bias", va, vb));
        }
        let mut out = va.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, &bv) in row.iter_mut().zip(vb.data()) {
                *o += bv;
            }
        }
        Ok(self.push(Op::AddBias { a, bias }, out, self.any_requires(&[a, bias])))
    }

    /// Batched matmul `[N,p,q] . [N,q,r]`.
    pub fn bmm(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let (va, vb) = (self.value(a), self.value(b));
        match (va.shape(), vb.shape()) {
            ([bn, p, q], [bn2, q2, r]) if bn == bn2 && q == q2 => {
                let (bn, p, q, r) = (*bn, *p, *q, *r);
                let mut out = Tensor::zeros(&[bn, p, r]);
                backend::bmm_nn(va.data(), vb.data(), out.data_mut(), bn, p, q, r);
                Ok(self.push(Op::BmmNn { a, b }, out, self.any_requires(&[a, b])))
            }
            _ => Err(shape_err("bmm", va, vb)),
        }
    }

    /// Batched matmul with transposed rhs: `[N,p,q] . [N,r,q]^T`.
    pub fn bmm_t(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let (va, vb) = (self.value(a), self.value(b));
        match (va.shape(), vb.shape()) {
            ([bn, p, q], [bn2, r, q2]) if bn == bn2 && q == q2 => {
                let (bn, p, q, r) = (*bn, *p, *q, *r);
                let mut out = Tensor::zeros(&[bn, p, r]);
                backend::bmm_nt(va.data(), vb.data(), out.data_mut(), bn, p, q, r);
                Ok(self.push(Op::BmmNt { a, b }, out, self.any_requires(&[a, b])))
            }
            _ => Err(shape_err("bmm_t", va, vb)),
        }
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| x.max(0.0)).collect();
        let value = Tensor::from_vec(va.shape(), data);
        let req = self.nodes[a.0].requires_grad;
        self.push(Op::Relu { a }, value, req)
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| gelu(x)).collect();
        let value = Tensor::from_vec(va.shape(), data);
        let req = self.nodes[a.0].requires_grad;
        self.push(Op::Gelu { a }, value, req)
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        let n = *va.shape().last().expect("softmax on 0-rank tensor");
        let mut out = va.clone();
        for row in out.data_mut().chunks_mut(n) {
            softmax_row(row);
        }
        let req = self.nodes[a.0].requires_grad;
        self.push(Op::SoftmaxLast { a }, out, req)
    }

    /// Layer normalization over the last dimension with affine gain/bias.
    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    ) -> Result<NodeId, NnError> {
        let (vx, vg, vb) = (self.value(x), self.value(gain), self.value(bias));
        let n = *vx.shape().last().unwrap_or(&0);
        if n == 0 || vg.shape() != [n] || vb.shape() != [n] {
            return Err(shape_err("layer_norm", vx, vg));
        }
        let rows = vx.numel() / n;
        let mut xhat = Tensor::zeros(vx.shape());
        let mut inv_std = vec![0.0; rows];
        let mut out = Tensor::zeros(vx.shape());
        for r in 0..rows {
            let xr = &vx.data()[r * n..(r + 1) * n];
            let mean = xr.iter().sum::<f64>() / n as f64;
            let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            let xh = &mut xhat.data_mut()[r * n..(r + 1) * n];
            let or = &mut out.data_mut()[r * n..(r + 1) * n];
            for j in 0..n {
                xh[j] = (xr[j] - mean) * is;
                or[j] = xh[j] * vg.data()[j] + vb.data()[j];
            }
        }
        let req = self.any_requires(&[x, gain, bias]);
        Ok(self.push(
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            out,
            req,
        ))
    }

    /// Same-padded stride-1 1-D convolution.
    /// `x: [batch, c_in, time]`, `w: [c_out, c_in, k]` (k odd), `bias: [c_out]`.
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, bias: NodeId) -> Result<NodeId, NnError> {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(bias));
        match (vx.shape(), vw.shape()) {
            ([bsz, c_in, t], [c_out, c_in2, k]) if c_in == c_in2 && k % 2 == 1 => {
                let (bsz, c_in, t, c_out, k) = (*bsz, *c_in, *t, *c_out, *k);
                if vb.shape() != [c_out] {
                    return Err(shape_err("conv1d", vw, vb));
                }
                let mut out = Tensor::zeros(&[bsz, c_out, t]);
                backend::conv1d(
                    vx.data(),
                    vw.data(),
                    vb.data(),
                    out.data_mut(),
                    bsz,
                    c_in,
                    t,
                    c_out,
                    k,
                );
                let req = self.any_requires(&[x, w, bias]);
                Ok(self.push(Op::Conv1d { x, w, bias }, out, req))
            }
            _ => Err(shape_err("conv1d", vx, vw)),
        }
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId, NnError> {
        let value = self.value(a).reshaped(shape)?;
        let req = self.nodes[a.0].requires_grad;
        Ok(self.push(Op::Reshape { a }, value, req))
    }

    /// Axis permutation (generalized transpose).
    pub fn permute(&mut self, a: NodeId, perm: &[usize]) -> Result<NodeId, NnError> {
        let va = self.value(a);
        let rank = va.shape().len();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(NnError::InvalidConfig(format!(
                "permute: {:?} is not a permutation of rank {}",
                perm, rank
            )));
        }
        let value = permute_tensor(va, perm);
        let req = self.nodes[a.0].requires_grad;
        Ok(self.push(
            Op::Permute {
                a,
                perm: perm.to_vec(),
            },
            value,
            req,
        ))
    }

    /// Mean over axis 1 of a rank-3 tensor: `[b, s, e] -> [b, e]`.
    pub fn mean_axis1(&mut self, a: NodeId) -> Result<NodeId, NnError> {
        let va = self.value(a);
        match va.shape() {
            [b, s, e] => {
                let (b, s, e) = (*b, *s, *e);
                let mut out = Tensor::zeros(&[b, e]);
                for bi in 0..b {
                    let orow = &mut out.data_mut()[bi * e..(bi + 1) * e];
                    for si in 0..s {
                        let xrow = &va.data()[(bi * s + si) * e..(bi * s + si + 1) * e];
                        for (o, &xv) in orow.iter_mut().zip(xrow) {
                            *o += xv;
                        }
                    }
                    for o in orow.iter_mut() {
                        *o /= s as f64;
                    }
                }
                let req = self.nodes[a.0].requires_grad;
                Ok(self.push(Op::MeanAxis1 { a }, out, req))
            }
            _ => Err(NnError::InvalidConfig(format!(
                "mean_axis1 expects rank 3, got {:?}",
                va.shape()
            ))),
        }
    }

    /// Concatenate two rank-2 tensors along the last dimension.
    pub fn concat_last(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let (va, vb) = (self.value(a), self.value(b));
        match (va.shape(), vb.shape()) {
            ([m, p], [m2, q]) if m == m2 => {
                let (m, p, q) = (*m, *p, *q);
                let mut data = Vec::with_capacity(m * (p + q));
                for i in 0..m {
                    data.extend_from_slice(&va.data()[i * p..(i + 1) * p]);
                    data.extend_from_slice(&vb.data()[i * q..(i + 1) * q]);
                }
                let value = Tensor::from_vec(&[m, p + q], data);
                Ok(self.push(Op::ConcatLast { a, b }, value, self.any_requires(&[a, b])))
            }
            _ => Err(shape_err("concat_last", va, vb)),
        }
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().sum();
        let req = self.nodes[a.0].requires_grad;
        self.push(Op::SumAll { a }, Tensor::scalar(s), req)
    }

    /// Scalar projection `sum(a * weights)`; handy for reducing an op output
    /// to a scalar loss in gradient checks.
    pub fn weighted_sum(&mut self, a: NodeId, weights: Tensor) -> Result<NodeId, NnError> {
        let va = self.value(a);
        if va.shape() != weights.shape() {
            return Err(shape_err("weighted_sum", va, &weights));
        }
        let s = va
            .data()
            .iter()
            .zip(weights.data())
            .map(|(x, w)| x * w)
            .sum();
        let req = self.nodes[a.0].requires_grad;
        Ok(self.push(Op::WeightedSum { a, weights }, Tensor::scalar(s), req))
    }

    /// Mean softmax cross-entropy over the batch. `logits: [batch, classes]`.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId, NnError> {
        let vl = self.value(logits);
        match vl.shape() {
            [b, c] if *b == labels.len() => {
                let (b, c) = (*b, *c);
                if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
                    return Err(NnError::LabelOutOfRange {
                        label: bad,
                        classes: c,
                    });
                }
                let mut probs = vl.clone();
                let mut loss = 0.0;
                for (bi, row) in probs.data_mut().chunks_mut(c).enumerate() {
                    softmax_row(row);
                    loss -= row[labels[bi]].max(f64::MIN_POSITIVE).ln();
                }
                loss /= b as f64;
                let req = self.nodes[logits.0].requires_grad;
                Ok(self.push(
                    Op::CrossEntropy {
                        logits,
                        labels: labels.to_vec(),
                        probs,
                    },
                    Tensor::scalar(loss),
                    req,
                ))
            }
            _ => Err(NnError::ShapeMismatch {
                op: "cross_entropy",
                lhs: vl.shape().to_vec(),
                rhs: vec![labels.len()],
            }),
        }
    }

    /// Reverse pass from a scalar loss node. Returns per-node gradients.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, NnError> {
        if self.value(loss).numel() != 1 {
            return Err(NnError::InvalidConfig(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            if grads[id].is_none() || !self.nodes[id].requires_grad {
                continue;
            }
            let g = grads[id].take().unwrap();
            self.accumulate_inputs(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn ensure<'a>(
        &self,
        grads: &'a mut [Option<Tensor>],
        id: NodeId,
    ) -> &'a mut Tensor {
        let slot = &mut grads[id.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.value(id).shape()));
        }
        slot.as_mut().unwrap()
    }

    fn accumulate_inputs(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add { a, b } => {
                for &input in &[*a, *b] {
                    if self.needs(input) {
                        let da = self.ensure(grads, input);
                        axpy(1.0, g.data(), da.data_mut());
                    }
                }
            }
            Op::Scale { a, c } => {
                if self.needs(*a) {
                    let da = self.ensure(grads, *a);
                    axpy(*c, g.data(), da.data_mut());
                }
            }
            Op::MulConst { a, mask } => {
                if self.needs(*a) {
                    let da = self.ensure(grads, *a);
                    for ((d, &gv), &mv) in da.data_mut().iter_mut().zip(g.data()).zip(mask.data()) {
                        *d += gv * mv;
                    }
                }
            }
            Op::MatMul { a, b } => {
                let (sa, sb) = (self.value(*a).shape().to_vec(), self.value(*b).shape().to_vec());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.needs(*a) {
                    let bv = self.value(*b).data().to_vec();
                    let da = self.ensure(grads, *a);
                    backend::mm_bt(g.data(), &bv, da.data_mut(), m, n, k);
                }
                if self.needs(*b) {
                    let av = self.value(*a).data().to_vec();
                    let db = self.ensure(grads, *b);
                    backend::mm_at(&av, g.data(), db.data_mut(), m, k, n);
                }
            }
            Op::AddBias { a, bias } => {
                if self.needs(*a) {
                    let da = self.ensure(grads, *a);
                    axpy(1.0, g.data(), da.data_mut());
                }
                if self.needs(*bias) {
                    let n = self.value(*bias).numel();
                    let db = self.ensure(grads, *bias);
                    for row in g.data().chunks(n) {
                        for (d, &gv) in db.data_mut().iter_mut().zip(row) {
                            *d += gv;
                        }
                    }
                }
            }
            Op::BmmNn { a, b } => {
                let sa = self.value(*a).shape().to_vec();
                let sg = g.shape().to_vec();
                let (bn, p, q, r) = (sa[0], sa[1], sa[2], sg[2]);
                if self.needs(*a) {
                    let bv = self.value(*b).data().to_vec();
                    let da = self.ensure(grads, *a);
                    backend::bmm_nt(g.data(), &bv, da.data_mut(), bn, p, r, q);
                }
                if self.needs(*b) {
                    let av = self.value(*a).data().to_vec();
                    let db = self.ensure(grads, *b);
                    backend::bmm_tn(&av, g.data(), db.data_mut(), bn, p, q, r);
                }
            }
            Op::BmmNt { a, b } => {
                let sa = self.value(*a).shape().to_vec();
                let sg = g.shape().to_vec();
                let (bn, p, q, r) = (sa[0], sa[1], sa[2], sg[2]);
                if self.needs(*a) {
                    let bv = self.value(*b).data().to_vec();
                    let da = self.ensure(grads, *a);
                    backend::bmm_nn(g.data(), &bv, da.data_mut(), bn, p, r, q);
                }
                if self.needs(*b) {
                    let av = self.value(*a).data().to_vec();
                    let db = self.ensure(grads, *b);
                    backend::bmm_tn(g.data(), &av, db.data_mut(), bn, p, r, q);
                }
            }
            Op::Relu { a } => {
                if self.needs(*a) {
                    let xs = self.value(*a).data().to_vec();
                    let da = self.ensure(grads, *a);
                    for ((d, &gv), &x) in da.data_mut().iter_mut().zip(g.data()).zip(&xs) {
                        if x > 0.0 {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Gelu { a } => {
                if self.needs(*a) {
                    let xs = self.value(*a).data().to_vec();
                    let da = self.ensure(grads, *a);
                    for ((d, &gv), &x) in da.data_mut().iter_mut().zip(g.data()).zip(&xs) {
                        *d += gv * gelu_grad(x);
                    }
                }
            }
            Op::SoftmaxLast { a } => {
                if self.needs(*a) {
                    let y = self.value(id_of(id)).data().to_vec();
                    let n = *self.value(*a).shape().last().unwrap();
                    let da = self.ensure(grads, *a);
                    for (ri, (drow, grow)) in da
                        .data_mut()
                        .chunks_mut(n)
                        .zip(g.data().chunks(n))
                        .enumerate()
                    {
                        let yrow = &y[ri * n..(ri + 1) * n];
                        let dot: f64 = grow.iter().zip(yrow).map(|(gv, yv)| gv * yv).sum();
                        for ((d, &gv), &yv) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += (gv - dot) * yv;
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let n = self.value(*gain).numel();
                let gain_v = self.value(*gain).data().to_vec();
                if self.needs(*x) {
                    let dx = self.ensure(grads, *x);
                    for (r, (dxrow, grow)) in dx
                        .data_mut()
                        .chunks_mut(n)
                        .zip(g.data().chunks(n))
                        .enumerate()
                    {
                        let xh = &xhat.data()[r * n..(r + 1) * n];
                        let is = inv_std[r];
                        let mut mean_dg = 0.0;
                        let mut mean_dg_xh = 0.0;
                        for j in 0..n {
                            let dg = grow[j] * gain_v[j];
                            mean_dg += dg;
                            mean_dg_xh += dg * xh[j];
                        }
                        mean_dg /= n as f64;
                        mean_dg_xh /= n as f64;
                        for j in 0..n {
                            let dg = grow[j] * gain_v[j];
                            dxrow[j] += is * (dg - mean_dg - xh[j] * mean_dg_xh);
                        }
                    }
                }
                if self.needs(*gain) {
                    let dgain = self.ensure(grads, *gain);
                    for (r, grow) in g.data().chunks(n).enumerate() {
                        let xh = &xhat.data()[r * n..(r + 1) * n];
                        for ((d, &gv), &xhv) in dgain.data_mut().iter_mut().zip(grow).zip(xh) {
                            *d += gv * xhv;
                        }
                    }
                }
                if self.needs(*bias) {
                    let dbias = self.ensure(grads, *bias);
                    for grow in g.data().chunks(n) {
                        for (d, &gv) in dbias.data_mut().iter_mut().zip(grow) {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Conv1d { x, w, bias } => {
                let sx = self.value(*x).shape().to_vec();
                let sw = self.value(*w).shape().to_vec();
                let (bsz, c_in, t, c_out, k) = (sx[0], sx[1], sx[2], sw[0], sw[2]);
                if self.needs(*x) {
                    let wv = self.value(*w).data().to_vec();
                    let dx = self.ensure(grads, *x);
                    backend::conv1d_dx(g.data(), &wv, dx.data_mut(), bsz, c_in, t, c_out, k);
                }
                if self.needs(*w) {
                    let xv = self.value(*x).data().to_vec();
                    let dw = self.ensure(grads, *w);
                    backend::conv1d_dw(g.data(), &xv, dw.data_mut(), bsz, c_in, t, c_out, k);
                }
                if self.needs(*bias) {
                    let db = self.ensure(grads, *bias);
                    for b in 0..bsz {
                        for o in 0..c_out {
                            let row = &g.data()[(b * c_out + o) * t..(b * c_out + o + 1) * t];
                            db.data_mut()[o] += row.iter().sum::<f64>();
                        }
                    }
                }
            }
            Op::Reshape { a } => {
                if self.needs(*a) {
                    let da = self.ensure(grads, *a);
                    axpy(1.0, g.data(), da.data_mut());
                }
            }
            Op::Permute { a, perm } => {
                if self.needs(*a) {
                    let mut inverse = vec![0; perm.len()];
                    for (i, &p) in perm.iter().enumerate() {
                        inverse[p] = i;
                    }
                    let gp = permute_tensor(g, &inverse);
                    let da = self.ensure(grads, *a);
                    axpy(1.0, gp.data(), da.data_mut());
                }
            }
            Op::MeanAxis1 { a } => {
                if self.needs(*a) {
                    let shape = self.value(*a).shape().to_vec();
                    let (b, s, e) = (shape[0], shape[1], shape[2]);
                    let da = self.ensure(grads, *a);
                    let inv = 1.0 / s as f64;
                    for bi in 0..b {
                        let grow = &g.data()[bi * e..(bi + 1) * e];
                        for si in 0..s {
                            let drow =
                                &mut da.data_mut()[(bi * s + si) * e..(bi * s + si + 1) * e];
                            for (d, &gv) in drow.iter_mut().zip(grow) {
                                *d += gv * inv;
                            }
                        }
                    }
                }
            }
            Op::ConcatLast { a, b } => {
                let p = *self.value(*a).shape().last().unwrap();
                let q = *self.value(*b).shape().last().unwrap();
                let rows = self.value(*a).numel() / p;
                if self.needs(*a) {
                    let da = self.ensure(grads, *a);
                    for i in 0..rows {
                        let grow = &g.data()[i * (p + q)..i * (p + q) + p];
                        axpy(1.0, grow, &mut da.data_mut()[i * p..(i + 1) * p]);
                    }
                }
                if self.needs(*b) {
                    let db = self.ensure(grads, *b);
                    for i in 0..rows {
                        let grow = &g.data()[i * (p + q) + p..(i + 1) * (p + q)];
                        axpy(1.0, grow, &mut db.data_mut()[i * q..(i + 1) * q]);
                    }
                }
            }
            Op::SumAll { a } => {
                if self.needs(*a) {
                    let gv = g.item();
                    let da = self.ensure(grads, *a);
                    for d in da.data_mut() {
                        *d += gv;
                    }
                }
            }
            Op::WeightedSum { a, weights } => {
                if self.needs(*a) {
                    let gv = g.item();
                    let da = self.ensure(grads, *a);
                    for (d, &wv) in da.data_mut().iter_mut().zip(weights.data()) {
                        *d += gv * wv;
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                if self.needs(*logits) {
                    let c = probs.numel() / labels.len();
                    let scale = g.item() / labels.len() as f64;
                    let dl = self.ensure(grads, *logits);
                    for (bi, (drow, prow)) in dl
                        .data_mut()
                        .chunks_mut(c)
                        .zip(probs.data().chunks(c))
                        .enumerate()
                    {
                        for (j, (d, &p)) in drow.iter_mut().zip(prow).enumerate() {
                            let onehot = if j == labels[bi] { 1.0 } else { 0.0 };
                            *d += (p - onehot) * scale;
                        }
                    }
                }
            }
        }
    }
}

// NodeId of the node currently being differentiated (index in the tape).
fn id_of(idx: usize) -> NodeId {
    NodeId(idx)
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> NnError {
    NnError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn axpy(c: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += c * xv;
    }
}

/// Numerically-stable in-place softmax of one row.
pub(crate) fn softmax_row(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

fn permute_tensor(t: &Tensor, perm: &[usize]) -> Tensor {
    let shape = t.shape();
    let rank = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();

    // in_strides, then the stride of each *output* axis in input coordinates.
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();

    let mut out = Tensor::zeros(&out_shape);
    let numel = t.numel();
    let mut coords = vec![0usize; rank];
    let mut in_idx = 0usize;
    for o in 0..numel {
        out.data_mut()[o] = t.data()[in_idx];
        // odometer increment over output coordinates
        for axis in (0..rank).rev() {
            coords[axis] += 1;
            in_idx += strides[axis];
            if coords[axis] < out_shape[axis] {
                break;
            }
            in_idx -= strides[axis] * out_shape[axis];
            coords[axis] = 0;
        }
    }
    out
}
