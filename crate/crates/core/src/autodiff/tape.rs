//! Operation tape and reverse sweep.

use crate::autodiff::conv::{self, Conv2dSpec};
use crate::autodiff::{ParamId, ParamStore, Tensor};
use crate::{Error, Result};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.9;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics.
    Eval,
}

/// Running-statistics update produced by a training-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BnUpdate {
    pub mean: ParamId,
    pub var: ParamId,
    pub new_mean: Vec<f64>,
    pub new_var: Vec<f64>,
}

enum Op {
    Leaf,
    Param(ParamId),
    Conv { x: Var, w: Var, b: Option<Var>, spec: Conv2dSpec },
    ConvT { x: Var, w: Var, b: Option<Var>, spec: Conv2dSpec },
    BatchNorm { x: Var, gamma: Var, beta: Var, mean: Vec<f64>, inv_std: Vec<f64>, train: bool },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Mul(Var, Var),
    Add(Var, Var),
    ConcatC(Var, Var),
    StackN(Vec<Var>),
    TileN(Var, usize),
    Sum(Var),
    LpLoss { x: Var, target: Tensor, weights: Vec<f64>, p: u8 },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records a forward computation for one reverse sweep.
pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    bn_updates: Vec<BnUpdate>,
    consumed: bool,
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    params: Vec<Option<Tensor>>,
    leaves: Vec<(usize, Tensor)>,
    shapes: Vec<[usize; 4]>,
}

impl Gradients {
    /// Gradient for a parameter; zeros when the parameter was not used.
    pub fn param(&self, id: ParamId) -> Tensor {
        self.params[id.0].clone().unwrap_or_else(|| Tensor::zeros(self.shapes[id.0]))
    }

    pub fn param_ref(&self, id: ParamId) -> Option<&Tensor> {
        self.params[id.0].as_ref()
    }

    /// Gradient for a leaf recorded with [`Tape::leaf`].
    pub fn leaf(&self, v: Var) -> Option<&Tensor> {
        self.leaves.iter().find(|(i, _)| *i == v.0).map(|(_, t)| t)
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_vec(t.shape(), t.data().iter().map(|&v| f(v)).collect()).expect("same length")
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self { store, nodes: Vec::new(), param_vars: vec![None; store.len()], bn_updates: Vec::new(), consumed: false }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Parameter handle; repeated calls return the same node so uses fan out.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let v = self.push(self.store.get(id).clone(), Op::Param(id));
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn param_named(&mut self, name: &str) -> Result<Var> {
        let id = self.store.id(name).ok_or_else(|| Error::invalid(format!("no parameter named {name}")))?;
        Ok(self.param(id))
    }

    pub fn bn_updates(&self) -> &[BnUpdate] {
        &self.bn_updates
    }

    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate> {
        std::mem::take(&mut self.bn_updates)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: Conv2dSpec) -> Result<Var> {
        let y = conv::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), spec)?;
        Ok(self.push(y, Op::Conv { x, w, b, spec }))
    }

    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: Conv2dSpec,
        out_hw: (usize, usize),
    ) -> Result<Var> {
        let y = conv::conv_transpose2d(self.value(x), self.value(w), b.map(|b| self.value(b)), spec, out_hw)?;
        Ok(self.push(y, Op::ConvT { x, w, b, spec }))
    }

    /// Per-channel batch normalization.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: ParamId,
        running_var: ParamId,
        mode: BnMode,
    ) -> Result<Var> {
        let xt = self.value(x);
        let [n, c, h, w] = xt.shape();
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(Error::shape(format!("batch norm over {c} channels with wrong gamma/beta")));
        }
        let hw = h * w;
        let m = (n * hw) as f64;
        let mut update = None;
        let (mean, var) = match mode {
            BnMode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for b in 0..n {
                        s += xt.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().sum::<f64>();
                    }
                    let mu = s / m;
                    let mut q = 0.0;
                    for b in 0..n {
                        q += xt.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw]
                            .iter()
                            .map(|v| (v - mu) * (v - mu))
                            .sum::<f64>();
                    }
                    mean[ch] = mu;
                    var[ch] = q / m;
                }
                let rm = self.store.get(running_mean).data();
                let rv = self.store.get(running_var).data();
                let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
                update = Some(BnUpdate {
                    mean: running_mean,
                    var: running_var,
                    new_mean: (0..c).map(|i| BN_MOMENTUM * rm[i] + (1.0 - BN_MOMENTUM) * mean[i]).collect(),
                    new_var: (0..c).map(|i| BN_MOMENTUM * rv[i] + (1.0 - BN_MOMENTUM) * var[i] * unbias).collect(),
                });
                (mean, var)
            }
            BnMode::Eval => (self.store.get(running_mean).data().to_vec(), self.store.get(running_var).data().to_vec()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut y = Tensor::zeros(xt.shape());
        for b in 0..n {
            for ch in 0..c {
                let r = (b * c + ch) * hw..(b * c + ch + 1) * hw;
                let (scale, shift) = (g[ch] * inv_std[ch], bt[ch] - g[ch] * inv_std[ch] * mean[ch]);
                for (o, v) in y.data_mut()[r.clone()].iter_mut().zip(&xt.data()[r]) {
                    *o = scale * v + shift;
                }
            }
        }
        let train = mode == BnMode::Train;
        self.bn_updates.extend(update);
        Ok(self.push(y, Op::BatchNorm { x, gamma, beta, mean, inv_std, train }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = map(self.value(x), |v| if v > 0.0 { v } else { 0.0 });
        self.push(y, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = map(self.value(x), sigmoid);
        self.push(y, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = map(self.value(x), f64::tanh);
        self.push(y, Op::Tanh(x))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "mul")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let y = Tensor::from_vec(self.value(a).shape(), data)?;
        Ok(self.push(y, Op::Mul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "add")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let y = Tensor::from_vec(self.value(a).shape(), data)?;
        Ok(self.push(y, Op::Add(a, b)))
    }

    /// Concatenation along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let [n, ca, h, w] = ta.shape();
        let [nb, cb, hb, wb] = tb.shape();
        if (n, h, w) != (nb, hb, wb) {
            return Err(Error::shape(format!("concat: {:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let (sa, sb) = (ca * h * w, cb * h * w);
        let mut data = Vec::with_capacity(n * (sa + sb));
        for i in 0..n {
            data.extend_from_slice(&ta.data()[i * sa..(i + 1) * sa]);
            data.extend_from_slice(&tb.data()[i * sb..(i + 1) * sb]);
        }
        let y = Tensor::from_vec([n, ca + cb, h, w], data)?;
        Ok(self.push(y, Op::ConcatC(a, b)))
    }

    /// Stacks values along the batch axis.
    pub fn stack_n(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor> = parts.iter().map(|&v| self.value(v)).collect();
        let y = Tensor::stack_n(&refs)?;
        Ok(self.push(y, Op::StackN(parts.to_vec())))
    }

    /// Repeats the whole batch `reps` times along the batch axis.
    pub fn tile_n(&mut self, x: Var, reps: usize) -> Result<Var> {
        if reps == 0 {
            return Err(Error::shape("tile with zero repetitions"));
        }
        let t = self.value(x);
        let refs = vec![t; reps];
        let y = Tensor::stack_n(&refs)?;
        Ok(self.push(y, Op::TileN(x, reps)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::filled([1, 1, 1, 1], s), Op::Sum(x))
    }

    /// `sum_i weights_i * |x_i - target_i|^p` for `p` in {1, 2}.
    pub fn lp_loss(&mut self, x: Var, target: Tensor, weights: Vec<f64>, p: u8) -> Result<Var> {
        same_shape(self.value(x), &target, "loss target")?;
        if weights.len() != target.len() {
            return Err(Error::shape("loss weights differ in length from target"));
        }
        if p != 1 && p != 2 {
            return Err(Error::invalid("loss norm must be 1 or 2"));
        }
        let v: f64 = self
            .value(x)
            .data()
            .iter()
            .zip(target.data())
            .zip(&weights)
            .map(|((a, b), w)| {
                let d = (a - b).abs();
                w * if p == 1 { d } else { d * d }
            })
            .sum();
        Ok(self.push(Tensor::filled([1, 1, 1, 1], v), Op::LpLoss { x, target, weights, p }))
    }

    /// Reverse sweep from scalar `loss`. A tape supports one sweep.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::BackwardTwice);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward needs a scalar loss"));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));
        let mut params: Vec<Option<Tensor>> = vec![None; self.store.len()];
        let mut leaves = Vec::new();
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => leaves.push((idx, g)),
                Op::Param(id) => params[id.0] = Some(g),
                Op::Conv { x, w, b, spec } => {
                    let (dx, dw) = conv::conv2d_backward(self.value(*x), self.value(*w), &g, *spec);
                    if let Some(b) = b {
                        let db = conv::bias_grad(&g);
                        acc(&mut grads, *b, Tensor::from_vec(self.value(*b).shape(), db)?);
                    }
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *w, dw);
                }
                Op::ConvT { x, w, b, spec } => {
                    let (dx, dw) = conv::conv_transpose2d_backward(self.value(*x), self.value(*w), &g, *spec);
                    if let Some(b) = b {
                        let db = conv::bias_grad(&g);
                        acc(&mut grads, *b, Tensor::from_vec(self.value(*b).shape(), db)?);
                    }
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *w, dw);
                }
                Op::BatchNorm { x, gamma, beta, mean, inv_std, train } => {
                    let xt = self.value(*x);
                    let [n, c, h, w] = xt.shape();
                    let hw = h * w;
                    let m = (n * hw) as f64;
                    let gm = self.value(*gamma).data();
                    let mut dgamma = vec![0.0; c];
                    let mut dbeta = vec![0.0; c];
                    for b in 0..n {
                        for ch in 0..c {
                            let r = (b * c + ch) * hw..(b * c + ch + 1) * hw;
                            for (dy, xv) in g.data()[r.clone()].iter().zip(&xt.data()[r]) {
                                dbeta[ch] += dy;
                                dgamma[ch] += dy * (xv - mean[ch]) * inv_std[ch];
                            }
                        }
                    }
                    let mut dx = Tensor::zeros(xt.shape());
                    for b in 0..n {
                        for ch in 0..c {
                            let r = (b * c + ch) * hw..(b * c + ch + 1) * hw;
                            let k = gm[ch] * inv_std[ch];
                            let out = &mut dx.data_mut()[r.clone()];
                            for ((o, dy), xv) in out.iter_mut().zip(&g.data()[r.clone()]).zip(&xt.data()[r]) {
                                *o = if *train {
                                    let xhat = (xv - mean[ch]) * inv_std[ch];
                                    k * (dy - dbeta[ch] / m - xhat * dgamma[ch] / m)
                                } else {
                                    k * dy
                                };
                            }
                        }
                    }
                    let gshape = self.value(*gamma).shape();
                    let bshape = self.value(*beta).shape();
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *gamma, Tensor::from_vec(gshape, dgamma)?);
                    acc(&mut grads, *beta, Tensor::from_vec(bshape, dbeta)?);
                }
                Op::Relu(x) => {
                    let xt = self.value(*x);
                    let data = g.data().iter().zip(xt.data()).map(|(d, v)| if *v > 0.0 { *d } else { 0.0 }).collect();
                    acc(&mut grads, *x, Tensor::from_vec(xt.shape(), data)?);
                }
                Op::Sigmoid(x) => {
                    let data = g.data().iter().zip(node.value.data()).map(|(d, y)| d * y * (1.0 - y)).collect();
                    acc(&mut grads, *x, Tensor::from_vec(g.shape(), data)?);
                }
                Op::Tanh(x) => {
                    let data = g.data().iter().zip(node.value.data()).map(|(d, y)| d * (1.0 - y * y)).collect();
                    acc(&mut grads, *x, Tensor::from_vec(g.shape(), data)?);
                }
                Op::Mul(a, b) => {
                    let ta = self.value(*a);
                    let tb = self.value(*b);
                    let da = g.data().iter().zip(tb.data()).map(|(d, y)| d * y).collect();
                    let db = g.data().iter().zip(ta.data()).map(|(d, x)| d * x).collect();
                    acc(&mut grads, *a, Tensor::from_vec(g.shape(), da)?);
                    acc(&mut grads, *b, Tensor::from_vec(g.shape(), db)?);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::ConcatC(a, b) => {
                    let [n, ca, h, w] = self.value(*a).shape();
                    let cb = self.value(*b).c();
                    let (sa, sb) = (ca * h * w, cb * h * w);
                    let mut da = Vec::with_capacity(n * sa);
                    let mut db = Vec::with_capacity(n * sb);
                    for i in 0..n {
                        let base = i * (sa + sb);
                        da.extend_from_slice(&g.data()[base..base + sa]);
                        db.extend_from_slice(&g.data()[base + sa..base + sa + sb]);
                    }
                    acc(&mut grads, *a, Tensor::from_vec([n, ca, h, w], da)?);
                    acc(&mut grads, *b, Tensor::from_vec([n, cb, h, w], db)?);
                }
                Op::StackN(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let count = self.value(*p).n();
                        acc(&mut grads, *p, g.slice_n(start, count)?);
                        start += count;
                    }
                }
                Op::TileN(x, reps) => {
                    let count = self.value(*x).n();
                    let mut dx = g.slice_n(0, count)?;
                    for r in 1..*reps {
                        let part = g.slice_n(r * count, count)?;
                        dx.data_mut().iter_mut().zip(part.data()).for_each(|(a, b)| *a += b);
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Sum(x) => {
                    let s = g.data()[0];
                    acc(&mut grads, *x, Tensor::filled(self.value(*x).shape(), s));
                }
                Op::LpLoss { x, target, weights, p } => {
                    let s = g.data()[0];
                    let xt = self.value(*x);
                    let data = xt
                        .data()
                        .iter()
                        .zip(target.data())
                        .zip(weights)
                        .map(|((a, b), w)| {
                            let d = a - b;
                            if *p == 1 {
                                s * w
                                    * if d > 0.0 {
                                        1.0
                                    } else if d < 0.0 {
                                        -1.0
                                    } else {
                                        0.0
                                    }
                            } else {
                                2.0 * s * w * d
                            }
                        })
                        .collect();
                    acc(&mut grads, *x, Tensor::from_vec(xt.shape(), data)?);
                }
            }
        }
        leaves.reverse();
        Ok(Gradients { params, leaves, shapes: self.store.entries().iter().map(|e| e.tensor.shape()).collect() })
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}
