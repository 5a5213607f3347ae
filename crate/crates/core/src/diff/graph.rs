use crate::scalar::{sigmoid, softplus, Real};

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm_a_bt_acc, gemm_acc, gemm_at_b_acc, Tensor};
use super::DiffError;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Exp,
    Log,
    Tanh,
    Relu,
    Softplus,
    Sigmoid,
    Sin,
    Cos,
    Square,
    Sqrt,
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Tanh => "tanh",
            Unary::Relu => "relu",
            Unary::Softplus => "softplus",
            Unary::Sigmoid => "sigmoid",
            Unary::Sin => "sin",
            Unary::Cos => "cos",
            Unary::Square => "square",
            Unary::Sqrt => "sqrt",
        }
    }

    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Tanh => x.tanh(),
            Unary::Relu => x.max(T::zero()),
            Unary::Softplus => softplus(x),
            Unary::Sigmoid => sigmoid(x),
            Unary::Sin => x.sin(),
            Unary::Cos => x.cos(),
            Unary::Square => x * x,
            Unary::Sqrt => x.sqrt(),
        }
    }

    /// d(out)/d(in) given input `x` and output `y`.
    fn derivative<T: Real>(self, x: T, y: T) -> T {
        match self {
            Unary::Exp => y,
            Unary::Log => T::one() / x,
            Unary::Tanh => T::one() - y * y,
            Unary::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Unary::Softplus => sigmoid(x),
            Unary::Sigmoid => y * (T::one() - y),
            Unary::Sin => x.cos(),
            Unary::Cos => -x.sin(),
            Unary::Square => T::lit(2.0) * x,
            Unary::Sqrt => T::lit(0.5) / y,
        }
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Minimum(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Unary(Var, Unary),
    Clip(Var, T, T),
    Softmax(Var),
    LogSumExp(Var),
    LayerNorm {
        x: Var,
        gain: Option<Var>,
        bias: Option<Var>,
        normalized: Tensor<T>,
        inv_std: Vec<T>,
        floored: Vec<bool>,
    },
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Reshape(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
    param: Option<(u64, ParamId)>,
}

/// Variance floor used by [`Graph::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// A single-use tape of tensor operations supporting reverse-mode gradients.
///
/// Values are computed eagerly as operations are recorded. Leaves created
/// with `requires_grad` accumulate gradients across [`Graph::backward`] calls
/// until [`Graph::zero_grad`].
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    substitutes: Vec<((u64, ParamId), Var)>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            substitutes: Vec::new(),
        }
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

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Binds a trainable parameter; its gradient flows back via
    /// [`Graph::accumulate_into`].
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(v) = self.substitute_for(store, id) {
            return v;
        }
        let v = self.leaf(store.value(id).clone(), true);
        self.nodes[v.0].param = Some((store.store_id(), id));
        v
    }

    /// Binds a parameter as a constant: no gradient is computed for it.
    pub fn frozen(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.leaf(store.value(id).clone(), false)
    }

    /// Makes later [`Graph::param`] bindings of `id` in `store` return `v`,
    /// so a network can be differentiated with respect to caller-owned
    /// leaves. Frozen bindings are unaffected.
    pub fn substitute(&mut self, store: &ParamStore<T>, id: ParamId, v: Var) -> Result<(), DiffError> {
        if self.value(v).shape() != store.value(id).shape() {
            return Err(DiffError::Shape(format!(
                "substitute {:?} for parameter of shape {:?}",
                self.value(v).shape(),
                store.value(id).shape()
            )));
        }
        self.substitutes.push(((store.store_id(), id), v));
        Ok(())
    }

    /// [`Graph::substitute`] for every parameter of `store`, in order.
    pub fn substitute_store(&mut self, store: &ParamStore<T>, vars: &[Var]) -> Result<(), DiffError> {
        if vars.len() != store.len() {
            return Err(DiffError::Shape(format!(
                "{} substitutes for {} parameters",
                vars.len(),
                store.len()
            )));
        }
        for (id, &v) in store.ids().zip(vars) {
            self.substitute(store, id, v)?;
        }
        Ok(())
    }

    fn substitute_for(&self, store: &ParamStore<T>, id: ParamId) -> Option<Var> {
        let key = (store.store_id(), id);
        self.substitutes.iter().find(|(k, _)| *k == key).map(|&(_, v)| v)
    }

    /// Adds the gradients of every parameter leaf bound from `store` into the
    /// store's gradient buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) {
        let sid = store.store_id();
        for n in &self.nodes {
            if let (Some((s, id)), Some(g)) = (n.param, n.grad.as_ref()) {
                if s == sid {
                    store.grad_mut(id).add_assign(g);
                }
            }
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, name: &str) -> Result<Var, DiffError> {
        if !value.is_finite() {
            return Err(DiffError::NonFinite(name.to_string()));
        }
        let requires_grad = self.op_inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
            param: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn op_inputs(&self, op: &Op<T>) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Minimum(a, b)
            | Op::AddBias(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Unary(a, _)
            | Op::Clip(a, _, _)
            | Op::Softmax(a)
            | Op::LogSumExp(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumLast(a)
            | Op::Slice(a, _)
            | Op::Reshape(a) => vec![*a],
            Op::LayerNorm { x, gain, bias, .. } => {
                let mut v = vec![*x];
                v.extend(gain.iter().chain(bias.iter()).copied());
                v
            }
            Op::Concat(vs) => vs.clone(),
        }
    }

    fn same_shape(&self, a: Var, b: Var, name: &str) -> Result<(), DiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(DiffError::Shape(format!(
                "{name}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    /// `a[m, k] · b[k, n]`; `a` may have any leading shape, flattened to rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.shape().len() != 2 || av.cols() != bv.shape()[0] {
            return Err(DiffError::Shape(format!(
                "matmul: {:?} x {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = vec![T::zero(); m * n];
        gemm_acc(av.data(), bv.data(), &mut out, m, k, n);
        self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b), "matmul")
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var, DiffError> {
        self.same_shape(a, b, name)?;
        let out = self.value(a).zip_map(self.value(b), f);
        self.push(out, op, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary(a, b, "minimum", |x, y| if y < x { y } else { x }, Op::Minimum(a, b))
    }

    /// Adds `bias` (one value per column) to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, DiffError> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.len() != av.cols() {
            return Err(DiffError::Shape(format!(
                "add_bias: {:?} + {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let c = av.cols();
        let mut out = av.clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, &b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddBias(a, bias), "add_bias")
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var, DiffError> {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s), "scale")
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, DiffError> {
        self.scale(a, -T::one())
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Result<Var, DiffError> {
        let out = self.value(a).map(|x| x + s);
        self.push(out, Op::AddScalar(a), "add_scalar")
    }

    fn unary(&mut self, a: Var, u: Unary) -> Result<Var, DiffError> {
        if matches!(u, Unary::Log | Unary::Sqrt) && self.value(a).data().iter().any(|&x| x < T::zero())
        {
            return Err(DiffError::NonFinite(format!("{} of negative input", u.name())));
        }
        let out = self.value(a).map(|x| u.apply(x));
        self.push(out, Op::Unary(a, u), u.name())
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary(a, Unary::Exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary(a, Unary::Log)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary(a, Unary::Tanh)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary(a, Unary::Relu)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary(a, Unary::Softplus)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn sin(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary(a, Unary::Sin)
    }

    pub fn cos(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary(a, Unary::Cos)
    }

    pub fn square(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary(a, Unary::Square)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary(a, Unary::Sqrt)
    }

    /// Clamps into `[lo, hi]`; gradient is zero outside the interval.
    pub fn clip(&mut self, a: Var, lo: T, hi: T) -> Result<Var, DiffError> {
        let out = self.value(a).map(|x| x.max(lo).min(hi));
        self.push(out, Op::Clip(a, lo, hi), "clip")
    }

    /// Softmax over the last axis, max-subtracted.
    pub fn softmax(&mut self, a: Var) -> Result<Var, DiffError> {
        let av = self.value(a);
        let c = av.cols();
        let mut out = av.clone();
        for row in out.data_mut().chunks_mut(c) {
            let m = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
            let mut z = T::zero();
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                z += *x;
            }
            for x in row.iter_mut() {
                *x /= z;
            }
        }
        self.push(out, Op::Softmax(a), "softmax")
    }

    /// `log Σ exp` over the last axis; output has a last axis of extent 1.
    pub fn logsumexp(&mut self, a: Var) -> Result<Var, DiffError> {
        let av = self.value(a);
        let c = av.cols();
        let out: Vec<T> = av
            .data()
            .chunks(c)
            .map(|row| {
                let m = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
                m + row.iter().map(|&x| (x - m).exp()).sum::<T>().ln()
            })
            .collect();
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = 1;
        let t = Tensor::new(&shape, out)?;
        self.push(t, Op::LogSumExp(a), "logsumexp")
    }

    /// Normalizes each row to zero mean and unit variance (variance floored at
    /// [`LAYER_NORM_EPS`]), then applies optional per-column gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Option<Var>, bias: Option<Var>) -> Result<Var, DiffError> {
        let xv = self.value(x);
        let c = xv.cols();
        for p in gain.iter().chain(bias.iter()) {
            if self.value(*p).len() != c {
                return Err(DiffError::Shape(format!(
                    "layer_norm affine {:?} for width {c}",
                    self.shape(*p)
                )));
            }
        }
        let eps = T::lit(LAYER_NORM_EPS);
        let n = T::from_usize(c).unwrap();
        let mut normalized = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.rows());
        let mut floored = Vec::with_capacity(xv.rows());
        for row in normalized.data_mut().chunks_mut(c) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is_floored = var < eps;
            let s = T::one() / var.max(eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * s;
            }
            inv_std.push(s);
            floored.push(is_floored);
        }
        let mut out = normalized.clone();
        if let Some(g) = gain {
            let gv = self.value(g).data().to_vec();
            for row in out.data_mut().chunks_mut(c) {
                for (o, &gg) in row.iter_mut().zip(&gv) {
                    *o *= gg;
                }
            }
        }
        if let Some(b) = bias {
            let bv = self.value(b).data().to_vec();
            for row in out.data_mut().chunks_mut(c) {
                for (o, &bb) in row.iter_mut().zip(&bv) {
                    *o += bb;
                }
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
                floored,
            },
            "layer_norm",
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, DiffError> {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, DiffError> {
        let v = self.value(a);
        let s = v.sum() / T::from_usize(v.len()).unwrap();
        self.push(Tensor::scalar(s), Op::Mean(a), "mean")
    }

    /// Sums over the last axis, keeping it with extent 1.
    pub fn sum_last(&mut self, a: Var) -> Result<Var, DiffError> {
        let av = self.value(a);
        let c = av.cols();
        let out: Vec<T> = av.data().chunks(c).map(|r| r.iter().copied().sum()).collect();
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = 1;
        let t = Tensor::new(&shape, out)?;
        self.push(t, Op::SumLast(a), "sum_last")
    }

    /// Concatenates along the last axis; all parts share their leading shape.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let first = parts
            .first()
            .ok_or_else(|| DiffError::Shape("concat of nothing".into()))?;
        let rows = self.value(*first).rows();
        let lead = self.shape(*first)[..self.shape(*first).len() - 1].to_vec();
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s[..s.len() - 1] != lead[..] {
                return Err(DiffError::Shape(format!(
                    "concat: leading shape {:?} vs {lead:?}",
                    s
                )));
            }
            total += self.value(p).cols();
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let mut shape = lead;
        shape.push(total);
        let t = Tensor::new(&shape, out)?;
        self.push(t, Op::Concat(parts.to_vec()), "concat")
    }

    /// Columns `[start, end)` of the last axis.
    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Result<Var, DiffError> {
        let av = self.value(a);
        let c = av.cols();
        if start >= end || end > c {
            return Err(DiffError::Shape(format!(
                "slice [{start}, {end}) of width {c}"
            )));
        }
        let out: Vec<T> = av
            .data()
            .chunks(c)
            .flat_map(|r| r[start..end].iter().copied())
            .collect();
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = end - start;
        let t = Tensor::new(&shape, out)?;
        self.push(t, Op::Slice(a, start), "slice")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, DiffError> {
        let t = self.value(a).clone().reshaped(shape)?;
        self.push(t, Op::Reshape(a), "reshape")
    }

    /// Reverse pass from a scalar `loss`. Gradients of `requires_grad` leaves
    /// are added to their accumulators.
    pub fn backward(&mut self, loss: Var) -> Result<(), DiffError> {
        if self.value(loss).len() != 1 {
            return Err(DiffError::Shape(format!(
                "backward from non-scalar {:?}",
                self.shape(loss)
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[idx].op {
                match &mut self.nodes[idx].grad {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
                continue;
            }
            self.propagate(idx, &g, &mut grads);
        }
        Ok(())
    }

    fn send(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.wants(*a) {
                    let mut da = vec![T::zero(); m * k];
                    gemm_a_bt_acc(g.data(), bv.data(), &mut da, m, k, n);
                    let t = Tensor::new(av.shape(), da).unwrap();
                    self.send(grads, *a, t);
                }
                if self.wants(*b) {
                    let mut db = vec![T::zero(); k * n];
                    gemm_at_b_acc(av.data(), g.data(), &mut db, m, k, n);
                    self.send(grads, *b, Tensor::matrix(k, n, db));
                }
            }
            Op::Add(a, b) => {
                self.send(grads, *a, g.clone());
                self.send(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.send(grads, *a, g.clone());
                if self.wants(*b) {
                    self.send(grads, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    self.send(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.wants(*b) {
                    self.send(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::Minimum(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut ga = g.clone();
                let mut gb = g.clone();
                for i in 0..g.len() {
                    if bv.data()[i] < av.data()[i] {
                        ga.data_mut()[i] = T::zero();
                    } else {
                        gb.data_mut()[i] = T::zero();
                    }
                }
                self.send(grads, *a, ga);
                self.send(grads, *b, gb);
            }
            Op::AddBias(a, b) => {
                self.send(grads, *a, g.clone());
                if self.wants(*b) {
                    let bv = self.value(*b);
                    let mut db = vec![T::zero(); bv.len()];
                    for row in g.data().chunks(bv.len()) {
                        for (d, &x) in db.iter_mut().zip(row) {
                            *d += x;
                        }
                    }
                    self.send(grads, *b, Tensor::new(bv.shape(), db).unwrap());
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.send(grads, *a, g.map(|x| x * s));
            }
            Op::AddScalar(a) => self.send(grads, *a, g.clone()),
            Op::Unary(a, u) => {
                let x = self.value(*a);
                let mut d = g.clone();
                for ((dv, &xv), &yv) in d.data_mut().iter_mut().zip(x.data()).zip(y.data()) {
                    *dv *= u.derivative(xv, yv);
                }
                self.send(grads, *a, d);
            }
            Op::Clip(a, lo, hi) => {
                let x = self.value(*a);
                let d = g.zip_map(x, |gv, xv| {
                    if xv >= *lo && xv <= *hi {
                        gv
                    } else {
                        T::zero()
                    }
                });
                self.send(grads, *a, d);
            }
            Op::Softmax(a) => {
                let c = y.cols();
                let mut d = g.clone();
                for (drow, yrow) in d.data_mut().chunks_mut(c).zip(y.data().chunks(c)) {
                    let dot: T = drow.iter().zip(yrow).map(|(&gv, &yv)| gv * yv).sum();
                    for (dv, &yv) in drow.iter_mut().zip(yrow) {
                        *dv = yv * (*dv - dot);
                    }
                }
                self.send(grads, *a, d);
            }
            Op::LogSumExp(a) => {
                let x = self.value(*a);
                let c = x.cols();
                let mut d = x.clone();
                for (r, row) in d.data_mut().chunks_mut(c).enumerate() {
                    let (lse, gr) = (y.data()[r], g.data()[r]);
                    for v in row.iter_mut() {
                        *v = gr * (*v - lse).exp();
                    }
                }
                self.send(grads, *a, d);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
                floored,
            } => {
                let c = normalized.cols();
                let n = T::from_usize(c).unwrap();
                if let Some(b) = bias {
                    if self.wants(*b) {
                        let mut db = vec![T::zero(); c];
                        for row in g.data().chunks(c) {
                            for (d, &v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        let t = Tensor::new(self.shape(*b), db).unwrap();
                        self.send(grads, *b, t);
                    }
                }
                let mut dxhat = g.clone();
                if let Some(gn) = gain {
                    if self.wants(*gn) {
                        let mut dg = vec![T::zero(); c];
                        for (grow, xrow) in g.data().chunks(c).zip(normalized.data().chunks(c)) {
                            for ((d, &gv), &xv) in dg.iter_mut().zip(grow).zip(xrow) {
                                *d += gv * xv;
                            }
                        }
                        let t = Tensor::new(self.shape(*gn), dg).unwrap();
                        self.send(grads, *gn, t);
                    }
                    let gv = self.value(*gn).data();
                    for row in dxhat.data_mut().chunks_mut(c) {
                        for (d, &s) in row.iter_mut().zip(gv) {
                            *d *= s;
                        }
                    }
                }
                if self.wants(*x) {
                    let mut dx = dxhat;
                    for (r, row) in dx.data_mut().chunks_mut(c).enumerate() {
                        let xr = &normalized.data()[r * c..(r + 1) * c];
                        let mean_d = row.iter().copied().sum::<T>() / n;
                        let mean_dx = if floored[r] {
                            T::zero()
                        } else {
                            row.iter().zip(xr).map(|(&d, &xv)| d * xv).sum::<T>() / n
                        };
                        for (d, &xv) in row.iter_mut().zip(xr) {
                            *d = inv_std[r] * (*d - mean_d - xv * mean_dx);
                        }
                    }
                    self.send(grads, *x, dx);
                }
            }
            Op::Sum(a) => {
                let s = g.item();
                self.send(grads, *a, Tensor::full(self.shape(*a), s));
            }
            Op::Mean(a) => {
                let n = T::from_usize(self.value(*a).len()).unwrap();
                let s = g.item() / n;
                self.send(grads, *a, Tensor::full(self.shape(*a), s));
            }
            Op::SumLast(a) => {
                let x = self.value(*a);
                let c = x.cols();
                let mut d = Tensor::zeros(x.shape());
                for (r, row) in d.data_mut().chunks_mut(c).enumerate() {
                    row.iter_mut().for_each(|v| *v = g.data()[r]);
                }
                self.send(grads, *a, d);
            }
            Op::Concat(parts) => {
                let total = y.cols();
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let w = pv.cols();
                    if self.wants(p) {
                        let data: Vec<T> = g
                            .data()
                            .chunks(total)
                            .flat_map(|r| r[offset..offset + w].iter().copied())
                            .collect();
                        self.send(grads, p, Tensor::new(pv.shape(), data).unwrap());
                    }
                    offset += w;
                }
            }
            Op::Slice(a, start) => {
                let x = self.value(*a);
                let (c, w) = (x.cols(), y.cols());
                let mut d = Tensor::zeros(x.shape());
                for (drow, grow) in d.data_mut().chunks_mut(c).zip(g.data().chunks(w)) {
                    drow[*start..*start + w].copy_from_slice(grow);
                }
                self.send(grads, *a, d);
            }
            Op::Reshape(a) => {
                let t = g.clone().reshaped(self.shape(*a)).unwrap();
                self.send(grads, *a, t);
            }
        }
    }
}
