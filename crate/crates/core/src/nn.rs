//! Dense layers on top of [`crate::diff`], shared by the field and the agent.

use rand::Rng;

use crate::diff::{DiffError, Graph, ParamId, ParamStore, Tensor, Var};
use crate::scalar::Real;

/// How parameters enter a graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binding {
    /// Gradients flow into the store.
    Trainable,
    /// Parameters are constants on the graph.
    Frozen,
}

pub(crate) fn bind<T: Real>(g: &mut Graph<T>, store: &ParamStore<T>, id: ParamId, b: Binding) -> Var {
    match b {
        Binding::Trainable => g.param(store, id),
        Binding::Frozen => g.frozen(store, id),
    }
}

/// Xavier/Glorot uniform matrix `[fan_in, fan_out]`.
pub fn xavier_uniform<T: Real, R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor<T> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| T::lit(rng.random_range(-a..a)))
        .collect();
    Tensor::matrix(fan_in, fan_out, data)
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), xavier_uniform(rng, fan_in, fan_out));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out]));
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    /// Looks up `{name}.weight` / `{name}.bias` in an existing store.
    pub fn find<T: Real>(store: &ParamStore<T>, name: &str) -> Result<Self, DiffError> {
        let missing = |p: &str| DiffError::Shape(format!("missing parameter {name}.{p}"));
        let weight = store.find(&format!("{name}.weight")).ok_or_else(|| missing("weight"))?;
        let bias = store.find(&format!("{name}.bias")).ok_or_else(|| missing("bias"))?;
        let ws = store.value(weight).shape();
        if ws.len() != 2 || store.value(bias).shape() != [ws[1]] {
            return Err(DiffError::Shape(format!("layer {name} has shapes {ws:?}")));
        }
        Ok(Self {
            weight,
            bias,
            fan_in: ws[0],
            fan_out: ws[1],
        })
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        b: Binding,
    ) -> Result<Var, DiffError> {
        let w = bind(g, store, self.weight, b);
        let bias = bind(g, store, self.bias, b);
        let h = g.matmul(x, w)?;
        g.add_bias(h, bias)
    }
}

/// Learnable gain and bias of a layer norm.
#[derive(Clone, Debug)]
pub struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl Norm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, width: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::full(&[width], T::one())),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[width])),
        }
    }

    pub fn find<T: Real>(store: &ParamStore<T>, name: &str) -> Result<Self, DiffError> {
        let missing = |p: &str| DiffError::Shape(format!("missing parameter {name}.{p}"));
        Ok(Self {
            gain: store.find(&format!("{name}.gain")).ok_or_else(|| missing("gain"))?,
            bias: store.find(&format!("{name}.bias")).ok_or_else(|| missing("bias"))?,
        })
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        b: Binding,
    ) -> Result<Var, DiffError> {
        let gain = bind(g, store, self.gain, b);
        let bias = bind(g, store, self.bias, b);
        g.layer_norm(x, Some(gain), Some(bias))
    }
}

/// `Linear → LayerNorm → ReLU` blocks followed by a plain linear output.
#[derive(Clone, Debug)]
pub struct Mlp {
    hidden: Vec<(Linear, Norm)>,
    out: Linear,
}

impl Mlp {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input: usize,
        hidden: &[usize],
        output: usize,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden.len());
        let mut width = input;
        for (i, &h) in hidden.iter().enumerate() {
            let lin = Linear::new(store, &format!("{prefix}.fc{i}"), width, h, rng);
            let norm = Norm::new(store, &format!("{prefix}.ln{i}"), h);
            layers.push((lin, norm));
            width = h;
        }
        let out = Linear::new(store, &format!("{prefix}.out"), width, output, rng);
        Self { hidden: layers, out }
    }

    pub fn find<T: Real>(store: &ParamStore<T>, prefix: &str, depth: usize) -> Result<Self, DiffError> {
        let hidden = (0..depth)
            .map(|i| {
                Ok((
                    Linear::find(store, &format!("{prefix}.fc{i}"))?,
                    Norm::find(store, &format!("{prefix}.ln{i}"))?,
                ))
            })
            .collect::<Result<Vec<_>, DiffError>>()?;
        let out = Linear::find(store, &format!("{prefix}.out"))?;
        Ok(Self { hidden, out })
    }

    pub fn input_width(&self) -> usize {
        self.hidden.first().map_or(self.out.fan_in, |(l, _)| l.fan_in)
    }

    pub fn output_width(&self) -> usize {
        self.out.fan_out
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        b: Binding,
    ) -> Result<Var, DiffError> {
        let mut h = x;
        for (lin, norm) in &self.hidden {
            h = lin.forward(g, store, h, b)?;
            h = norm.forward(g, store, h, b)?;
            h = g.relu(h)?;
        }
        self.out.forward(g, store, h, b)
    }
}
