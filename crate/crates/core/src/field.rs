//! Radiance field: positional encoding, a density trunk, and a Gaussian
//! mixture color head with an aleatoric/epistemic variance split.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{DiffError, Graph, ParamStore, Tensor, Var};
use crate::nn::{Binding, Linear};
use crate::scalar::{sigmoid, softplus, Real};

/// Floor added to every softplus variance.
pub const VARIANCE_FLOOR: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub pos_levels: usize,
    pub dir_levels: usize,
    /// Mixture components K.
    pub components: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 4,
            hidden_width: 64,
            pos_levels: 6,
            dir_levels: 4,
            components: 3,
        }
    }
}

impl FieldConfig {
    /// The 8 × 256 backbone of the full-size model.
    pub fn full_size() -> Self {
        Self {
            hidden_layers: 8,
            hidden_width: 256,
            pos_levels: 10,
            dir_levels: 4,
            components: 3,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.components == 0 {
            return Err("field.components must be at least 1".into());
        }
        if self.hidden_layers == 0 || self.hidden_width == 0 {
            return Err("field.hidden_layers and field.hidden_width must be at least 1".into());
        }
        Ok(())
    }

    /// Raw head outputs per sample: 3 means, 3 variances and 1 logit per component.
    pub fn head_width(&self) -> usize {
        7 * self.components
    }
}

/// `[x, sin(2^0 π x), cos(2^0 π x), …, sin(2^{L-1} π x), cos(2^{L-1} π x)]`,
/// each block holding the three coordinates; length `3 + 6L`.
pub fn positional_encode<T: Real>(x: [T; 3], levels: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(3 + 6 * levels);
    out.extend_from_slice(&x);
    let pi = T::lit(std::f64::consts::PI);
    for l in 0..levels {
        let f = T::lit((1u64 << l) as f64) * pi;
        out.extend(x.iter().map(|&v| (f * v).sin()));
        out.extend(x.iter().map(|&v| (f * v).cos()));
    }
    out
}

fn encode_rows<T: Real>(xs: &[[T; 3]], levels: usize) -> Tensor<T> {
    let w = 3 + 6 * levels;
    let data = xs.iter().flat_map(|&x| positional_encode(x, levels)).collect();
    Tensor::matrix(xs.len(), w, data)
}

/// Per-point Gaussian mixture over RGB.
#[derive(Clone, Debug, PartialEq)]
pub struct GmmColor<T> {
    pub pi: Vec<T>,
    pub mu: Vec<[T; 3]>,
    pub var: Vec<[T; 3]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmMoments<T> {
    pub expected: [T; 3],
    pub total_var: [T; 3],
    pub aleatoric: [T; 3],
    pub epistemic: [T; 3],
}

impl<T: Real> GmmColor<T> {
    pub fn components(&self) -> usize {
        self.pi.len()
    }

    /// Single component with zero spread around `c`; used for analytic colors.
    pub fn point(c: [T; 3]) -> Self {
        Self {
            pi: vec![T::one()],
            mu: vec![c],
            var: vec![[T::zero(); 3]],
        }
    }

    pub fn expected(&self) -> [T; 3] {
        let mut e = [T::zero(); 3];
        for (p, m) in self.pi.iter().zip(&self.mu) {
            for ch in 0..3 {
                e[ch] += *p * m[ch];
            }
        }
        e
    }

    pub fn moments(&self) -> GmmMoments<T> {
        gmm_moments(self)
    }
}

/// Mean, and the law-of-total-variance split of the mixture's variance.
pub fn gmm_moments<T: Real>(g: &GmmColor<T>) -> GmmMoments<T> {
    let expected = g.expected();
    let mut aleatoric = [T::zero(); 3];
    let mut epistemic = [T::zero(); 3];
    for k in 0..g.components() {
        for ch in 0..3 {
            aleatoric[ch] += g.pi[k] * g.var[k][ch];
            let d = g.mu[k][ch] - expected[ch];
            epistemic[ch] += g.pi[k] * d * d;
        }
    }
    let total_var = [0, 1, 2].map(|ch| aleatoric[ch] + epistemic[ch]);
    GmmMoments {
        expected,
        total_var,
        aleatoric,
        epistemic,
    }
}

/// `−log Σ_k π_k Π_ch N(c; μ_k, σ²_k)`, via log-sum-exp.
pub fn gmm_nll<T: Real>(g: &GmmColor<T>, c: [T; 3]) -> T {
    let half = T::lit(0.5);
    let log_2pi = T::lit((2.0 * std::f64::consts::PI).ln());
    let terms: Vec<T> = (0..g.components())
        .map(|k| {
            let mut lp = g.pi[k].ln();
            for ch in 0..3 {
                let d = c[ch] - g.mu[k][ch];
                let v = g.var[k][ch];
                lp -= half * (d * d / v + v.ln() + log_2pi);
            }
            lp
        })
        .collect();
    let m = terms.iter().fold(T::neg_infinity(), |m, &t| m.max(t));
    -(m + terms.iter().map(|&t| (t - m).exp()).sum::<T>().ln())
}

/// Graph form of [`gmm_nll`] over rows: `means`/`vars` are `[R, 3K]` with
/// component `k` in columns `3k..3k+3`, `log_weights` is `[R, K]`, `target`
/// is `[R, 3]`. Returns per-row NLL `[R, 1]`.
pub fn mixture_nll<T: Real>(
    g: &mut Graph<T>,
    means: Var,
    vars: Var,
    log_weights: Var,
    target: Var,
) -> Result<Var, DiffError> {
    let k = g.value(log_weights).cols();
    if g.value(means).cols() != 3 * k || g.value(vars).cols() != 3 * k || g.value(target).cols() != 3
    {
        return Err(DiffError::Shape("mixture_nll layout".into()));
    }
    let log_2pi = T::lit((2.0 * std::f64::consts::PI).ln());
    let mut comps = Vec::with_capacity(k);
    for c in 0..k {
        let mu = g.slice(means, 3 * c, 3 * c + 3)?;
        let var = g.slice(vars, 3 * c, 3 * c + 3)?;
        let d = g.sub(target, mu)?;
        let d2 = g.square(d)?;
        let log_var = g.log(var)?;
        let neg_log_var = g.neg(log_var)?;
        let inv_var = g.exp(neg_log_var)?;
        let maha = g.mul(d2, inv_var)?;
        let per_ch = g.add(maha, log_var)?;
        let per_ch = g.add_scalar(per_ch, log_2pi)?;
        let s = g.sum_last(per_ch)?;
        let ll = g.scale(s, T::lit(-0.5))?;
        let w = g.slice(log_weights, c, c + 1)?;
        comps.push(g.add(ll, w)?);
    }
    let all = g.concat(&comps)?;
    let lse = g.logsumexp(all)?;
    g.neg(lse)
}

/// Graph outputs for a batch of `P` points.
#[derive(Clone, Copy, Debug)]
pub struct FieldVars {
    /// `[P, 1]`, softplus-activated.
    pub sigma: Var,
    /// `[P, 3K]`, sigmoid-activated component means.
    pub mu: Var,
    /// `[P, 3K]`, softplus plus [`VARIANCE_FLOOR`].
    pub var: Var,
    /// `[P, K]`, softmax-normalized.
    pub pi: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldOutput<T> {
    pub sigma: T,
    pub color: GmmColor<T>,
}

/// The field network and its parameters.
#[derive(Clone, Debug)]
pub struct FieldModel<T: Real> {
    pub config: FieldConfig,
    pub params: ParamStore<T>,
    trunk: Vec<Linear>,
    density: Linear,
    head_hidden: Linear,
    head_out: Linear,
}

impl<T: Real> FieldModel<T> {
    pub fn new<R: Rng + ?Sized>(config: FieldConfig, rng: &mut R) -> Self {
        let mut params = ParamStore::new();
        let mut trunk = Vec::with_capacity(config.hidden_layers);
        let mut width = 3 + 6 * config.pos_levels;
        for i in 0..config.hidden_layers {
            trunk.push(Linear::new(&mut params, &format!("trunk.{i}"), width, config.hidden_width, rng));
            width = config.hidden_width;
        }
        let density = Linear::new(&mut params, "density", width, 1, rng);
        let head_in = width + 3 + 6 * config.dir_levels;
        let head_width = (config.hidden_width / 2).max(1);
        let head_hidden = Linear::new(&mut params, "head.hidden", head_in, head_width, rng);
        let head_out = Linear::new(&mut params, "head.out", head_width, config.head_width(), rng);
        Self {
            config,
            params,
            trunk,
            density,
            head_hidden,
            head_out,
        }
    }

    /// Rebuilds the layer layout over loaded parameters, checking every shape.
    pub fn from_params(config: FieldConfig, params: ParamStore<T>) -> Result<Self, DiffError> {
        let mut trunk = Vec::with_capacity(config.hidden_layers);
        for i in 0..config.hidden_layers {
            trunk.push(Linear::find(&params, &format!("trunk.{i}"))?);
        }
        let density = Linear::find(&params, "density")?;
        let head_hidden = Linear::find(&params, "head.hidden")?;
        let head_out = Linear::find(&params, "head.out")?;
        let expect_in = 3 + 6 * config.pos_levels;
        if trunk.first().map(|l| l.fan_in) != Some(expect_in)
            || head_out.fan_out != config.head_width()
            || head_hidden.fan_in != config.hidden_width + 3 + 6 * config.dir_levels
            || params.len() != 2 * (config.hidden_layers + 3)
        {
            return Err(DiffError::Shape("field parameters do not match config".into()));
        }
        Ok(Self {
            config,
            params,
            trunk,
            density,
            head_hidden,
            head_out,
        })
    }

    /// Records the network on `g` for points `xs` viewed along unit `dirs`.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        xs: &[[T; 3]],
        dirs: &[[T; 3]],
        binding: Binding,
    ) -> Result<FieldVars, DiffError> {
        if xs.len() != dirs.len() || xs.is_empty() {
            return Err(DiffError::Shape(format!(
                "{} points with {} directions",
                xs.len(),
                dirs.len()
            )));
        }
        let k = self.config.components;
        let store = &self.params;
        let mut h = g.constant(encode_rows(xs, self.config.pos_levels));
        for layer in &self.trunk {
            h = layer.forward(g, store, h, binding)?;
            h = g.relu(h)?;
        }
        let raw_sigma = self.density.forward(g, store, h, binding)?;
        let sigma = g.softplus(raw_sigma)?;
        let enc_d = g.constant(encode_rows(dirs, self.config.dir_levels));
        let hd = g.concat(&[h, enc_d])?;
        let hd = self.head_hidden.forward(g, store, hd, binding)?;
        let hd = g.relu(hd)?;
        let raw = self.head_out.forward(g, store, hd, binding)?;
        let mu_raw = g.slice(raw, 0, 3 * k)?;
        let var_raw = g.slice(raw, 3 * k, 6 * k)?;
        let logits = g.slice(raw, 6 * k, 7 * k)?;
        let mu = g.sigmoid(mu_raw)?;
        let var = g.softplus(var_raw)?;
        let var = g.add_scalar(var, T::lit(VARIANCE_FLOOR))?;
        let pi = g.softmax(logits)?;
        Ok(FieldVars { sigma, mu, var, pi })
    }

    /// Inference for a batch of points; no gradients are recorded.
    pub fn query_batch(&self, xs: &[[T; 3]], dirs: &[[T; 3]]) -> Result<Vec<FieldOutput<T>>, DiffError> {
        let mut g = Graph::new();
        let v = self.forward(&mut g, xs, dirs, Binding::Frozen)?;
        Ok(unpack_outputs(&g, &v, self.config.components))
    }

    /// Single-point query; `d` must be unit length within 1e-4.
    pub fn query(&self, x: [T; 3], d: [T; 3]) -> Result<FieldOutput<T>, DiffError> {
        let norm = d.iter().map(|&v| v * v).sum::<T>().sqrt();
        if (norm - T::one()).abs() > T::lit(1e-4) {
            return Err(DiffError::Shape(format!("direction norm {norm} is not 1")));
        }
        Ok(self.query_batch(&[x], &[d])?.remove(0))
    }
}

/// Anything that answers density and color queries for batches of points.
pub trait RadianceField<T: Real> {
    fn components(&self) -> usize;

    fn query_points(&self, xs: &[[T; 3]], dirs: &[[T; 3]]) -> Result<Vec<FieldOutput<T>>, DiffError>;
}

impl<T: Real> RadianceField<T> for FieldModel<T> {
    fn components(&self) -> usize {
        self.config.components
    }

    fn query_points(&self, xs: &[[T; 3]], dirs: &[[T; 3]]) -> Result<Vec<FieldOutput<T>>, DiffError> {
        self.query_batch(xs, dirs)
    }
}

/// Converts graph outputs to per-point mixtures.
pub fn unpack_outputs<T: Real>(g: &Graph<T>, v: &FieldVars, k: usize) -> Vec<FieldOutput<T>> {
    let (sigma, mu, var, pi) = (g.value(v.sigma), g.value(v.mu), g.value(v.var), g.value(v.pi));
    (0..sigma.rows())
        .map(|p| {
            let m = mu.row_slice(p);
            let s = var.row_slice(p);
            FieldOutput {
                sigma: sigma.data()[p],
                color: GmmColor {
                    pi: pi.row_slice(p).to_vec(),
                    mu: (0..k).map(|c| [m[3 * c], m[3 * c + 1], m[3 * c + 2]]).collect(),
                    var: (0..k).map(|c| [s[3 * c], s[3 * c + 1], s[3 * c + 2]]).collect(),
                },
            }
        })
        .collect()
}

/// Builds a mixture from unconstrained head outputs, applying the same
/// activations as the network.
pub fn gmm_from_raw<T: Real>(raw: &[T]) -> GmmColor<T> {
    assert!(raw.len() % 7 == 0 && !raw.is_empty(), "raw head width");
    let k = raw.len() / 7;
    let logits = &raw[6 * k..];
    let m = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let e: Vec<T> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: T = e.iter().copied().sum();
    GmmColor {
        pi: e.iter().map(|&x| x / z).collect(),
        mu: (0..k)
            .map(|c| [0, 1, 2].map(|ch| sigmoid(raw[3 * c + ch])))
            .collect(),
        var: (0..k)
            .map(|c| [0, 1, 2].map(|ch| softplus(raw[3 * k + 3 * c + ch]) + T::lit(VARIANCE_FLOOR)))
            .collect(),
    }
}
