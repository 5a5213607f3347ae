//! Sample placement as a Markov decision process over one or many rays.
//!
//! A state is the current set of sample depths on a ray. An action nudges
//! every depth by up to `Δ_max`, the result is projected back onto the
//! ordered, spaced, in-bounds set, and the frozen field is re-queried.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{stratified_samples, uniform_samples};
use crate::diff::DiffError;
use crate::field::{gmm_moments, RadianceField};
use crate::render::{composite, low_weight_count, RaySampleBatch, RenderError};
use crate::scalar::Real;
use crate::scenes::Ray;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("environment configuration: {0}")]
    Config(String),
    #[error("non-finite observation feature {0}")]
    NonFinite(String),
    #[error("action length {got}, expected {expected}")]
    ActionLength { got: usize, expected: usize },
    #[error("step called on a finished episode")]
    Finished,
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Render(#[from] RenderError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub n_samples: usize,
    pub components: usize,
    pub episode_len: usize,
    /// Largest per-step move, as a fraction of `t_f − t_n`.
    pub delta_max_frac: f64,
    /// Minimum gap between samples, as a fraction of `t_f − t_n`.
    pub delta_min_frac: f64,
    pub tau_w: f64,
    pub lambda_q: f64,
    pub lambda_e: f64,
    pub lambda_eff: f64,
    pub lambda_c: f64,
    pub gamma: f64,
    /// Floor on per-ray MSE inside the quality term.
    pub quality_eps: f64,
    /// When set, appends an exponential moving average of past weights
    /// (one entry per sample) with this decay.
    pub history_ema: Option<f64>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            n_samples: 32,
            components: 3,
            episode_len: 8,
            delta_max_frac: 0.1,
            delta_min_frac: 0.001,
            tau_w: 0.01,
            lambda_q: 1.0,
            lambda_e: 0.1,
            lambda_eff: 0.1,
            lambda_c: 0.01,
            gamma: 0.99,
            quality_eps: 1e-8,
            history_ema: None,
        }
    }
}

impl EnvConfig {
    pub fn obs_dim(&self) -> usize {
        let base = self.n_samples * PER_SAMPLE + GLOBAL + self.components * PER_COMPONENT;
        base + if self.history_ema.is_some() { self.n_samples } else { 0 }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |why: String| Err(EnvError::Config(why));
        if self.n_samples == 0 || self.components == 0 || self.episode_len == 0 {
            return bad("sample count, components and episode length must be positive".into());
        }
        if self.n_samples as f64 * self.delta_min_frac >= 1.0 || !(self.delta_min_frac >= 0.0) {
            return bad(format!(
                "{} samples cannot keep a {} minimum spacing",
                self.n_samples, self.delta_min_frac
            ));
        }
        if !(self.delta_max_frac > 0.0) || !(self.tau_w > 0.0 && self.tau_w < 1.0) {
            return bad("delta_max_frac must be positive and tau_w in (0, 1)".into());
        }
        let lambdas = [self.lambda_q, self.lambda_e, self.lambda_eff, self.lambda_c];
        if lambdas.iter().any(|l| !(*l >= 0.0)) {
            return bad(format!("reward weights must be non-negative: {lambdas:?}"));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(self.quality_eps > 0.0) {
            return bad("gamma must lie in [0, 1] and quality_eps be positive".into());
        }
        if let Some(b) = self.history_ema {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("history decay {b} outside [0, 1)"));
            }
        }
        Ok(())
    }
}

pub const PER_SAMPLE: usize = 9;
pub const GLOBAL: usize = 11;
pub const PER_COMPONENT: usize = 3;

/// Projects proposed moves onto ordered, spaced, in-bounds depths: clip,
/// sort, forward sweep for the minimum gap, then a backward sweep from the
/// far bound if the last sample overflowed.
pub fn apply_action<T: Real>(depths: &[T], action: &[T], cfg: &EnvConfig, bounds: [T; 2]) -> Result<Vec<T>, EnvError> {
    if action.len() != depths.len() {
        return Err(EnvError::ActionLength {
            got: action.len(),
            expected: depths.len(),
        });
    }
    let [tn, tf] = bounds;
    let range = tf - tn;
    let n = depths.len();
    let dmin = T::lit(cfg.delta_min_frac) * range;
    if T::from_usize(n).unwrap() * dmin >= range {
        return Err(EnvError::Config(format!("{n} samples cannot keep spacing {dmin} in {range}")));
    }
    let dmax = T::lit(cfg.delta_max_frac) * range;
    let mut t: Vec<T> = depths
        .iter()
        .zip(action)
        .map(|(&d, &a)| {
            let a = a.max(-T::one()).min(T::one());
            (d + a * dmax).max(tn).min(tf)
        })
        .collect();
    t.sort_by(|a, b| a.partial_cmp(b).expect("finite depths"));
    for i in 1..n {
        t[i] = t[i].max(t[i - 1] + dmin);
    }
    if t[n - 1] > tf {
        t[n - 1] = tf;
        for i in (0..n - 1).rev() {
            t[i] = t[i].min(t[i + 1] - dmin);
        }
    }
    Ok(t)
}

/// Rec. 709 luminance.
pub fn luminance<T: Real>(c: [T; 3]) -> T {
    T::lit(0.2126) * c[0] + T::lit(0.7152) * c[1] + T::lit(0.0722) * c[2]
}

fn mean3<T: Real>(v: [T; 3]) -> T {
    (v[0] + v[1] + v[2]) / T::lit(3.0)
}

/// Flat observation: per-sample `(t̂, E[c], ln(1+σ), T, w, α, var)`, then
/// `(o, d, t_n, t_f, u, v, step/T_ep)`, then per ray-level component
/// `(π̄, luminance of its mean, channel-mean variance)`, then the optional
/// weight history.
pub fn build_observation<T: Real>(
    batch: &RaySampleBatch<T>,
    ray: &Ray<T>,
    step: usize,
    cfg: &EnvConfig,
    bounds: [T; 2],
    history: Option<&[T]>,
) -> Result<Vec<T>, EnvError> {
    let [tn, tf] = bounds;
    let range = tf - tn;
    let mut obs = Vec::with_capacity(cfg.obs_dim());
    for i in 0..batch.len() {
        let m = gmm_moments(&batch.colors[i]);
        obs.push((batch.depths[i] - tn) / range);
        obs.extend(m.expected);
        obs.push(batch.sigma[i].ln_1p());
        obs.push(batch.trans[i]);
        obs.push(batch.weights[i]);
        obs.push(batch.alpha[i]);
        obs.push(mean3(m.total_var));
    }
    obs.extend(ray.origin);
    obs.extend(ray.dir);
    obs.push(tn);
    obs.push(tf);
    obs.extend(ray.uv);
    obs.push(T::from_usize(step).unwrap() / T::from_usize(cfg.episode_len).unwrap());
    let mix = batch.ray_mixture();
    for k in 0..mix.components() {
        obs.push(mix.pi[k]);
        obs.push(luminance(mix.mu[k]));
        obs.push(mean3(mix.var[k]));
    }
    if let Some(h) = history {
        obs.extend_from_slice(h);
    }
    if obs.len() != cfg.obs_dim() {
        return Err(EnvError::Config(format!(
            "observation length {} but configuration implies {}",
            obs.len(),
            cfg.obs_dim()
        )));
    }
    if let Some(i) = obs.iter().position(|v| !v.is_finite()) {
        return Err(EnvError::NonFinite(format!("index {i}")));
    }
    Ok(obs)
}

/// Reward terms; `r_e` already includes `λ_eff`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Reward<T> {
    pub r_q: T,
    pub r_e: T,
    pub r_c: T,
    pub total: T,
}

impl<T: Real> Reward<T> {
    pub fn combine(r_q: T, r_e: T, r_c: T, cfg: &EnvConfig) -> Self {
        Self {
            r_q,
            r_e,
            r_c,
            total: T::lit(cfg.lambda_q) * r_q + T::lit(cfg.lambda_e) * r_e + T::lit(cfg.lambda_c) * r_c,
        }
    }
}

pub fn ray_mse<T: Real>(c: [T; 3], gt: [T; 3]) -> T {
    let d = [0, 1, 2].map(|i| c[i] - gt[i]);
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) / T::lit(3.0)
}

/// `10 log10(max(prev, ε) / max(curr, ε))`.
pub fn quality_reward<T: Real>(mse_prev: T, mse_curr: T, eps: f64) -> T {
    let e = T::lit(eps);
    T::lit(10.0) * (mse_prev.max(e) / mse_curr.max(e)).log10()
}

pub fn efficiency_reward<T: Real>(weights: &[T], cfg: &EnvConfig) -> T {
    -T::lit(cfg.lambda_eff) * T::from_usize(low_weight_count(weights, T::lit(cfg.tau_w))).unwrap()
}

/// `−Σ (δ_{i+1} − δ_i)²` over consecutive gaps.
pub fn consistency_reward<T: Real>(depths: &[T]) -> T {
    let gaps: Vec<T> = depths.windows(2).map(|w| w[1] - w[0]).collect();
    -gaps.windows(2).map(|g| (g[1] - g[0]) * (g[1] - g[0])).sum::<T>()
}

pub fn compute_reward<T: Real>(
    prev: &RaySampleBatch<T>,
    curr: &RaySampleBatch<T>,
    gt: [T; 3],
    background: [T; 3],
    cfg: &EnvConfig,
) -> Reward<T> {
    let mse_prev = ray_mse(prev.color_over(background), gt);
    let mse_curr = ray_mse(curr.color_over(background), gt);
    Reward::combine(
        quality_reward(mse_prev, mse_curr, cfg.quality_eps),
        efficiency_reward(&curr.weights, cfg),
        consistency_reward(&curr.depths),
        cfg,
    )
}

/// Queries the field at every depth of every ray in one batch and composites.
pub fn sample_rays<T: Real, F: RadianceField<T> + ?Sized>(
    field: &F,
    rays: &[Ray<T>],
    depths: &[Vec<T>],
    t_far: T,
) -> Result<Vec<RaySampleBatch<T>>, EnvError> {
    let total: usize = depths.iter().map(Vec::len).sum();
    let mut xs = Vec::with_capacity(total);
    let mut ds = Vec::with_capacity(total);
    for (r, d) in rays.iter().zip(depths) {
        for &t in d {
            xs.push(r.at(t));
            ds.push(r.dir);
        }
    }
    let out = field.query_points(&xs, &ds)?;
    let mut it = out.into_iter();
    depths
        .iter()
        .map(|d| {
            let (sig, cols): (Vec<T>, Vec<_>) = it.by_ref().take(d.len()).map(|o| (o.sigma, o.color)).unzip();
            Ok(composite(d, &sig, &cols, t_far)?)
        })
        .collect()
}

/// How episodes choose their first depths.
pub enum Init<'r, R: Rng + ?Sized> {
    Stratified(&'r mut R),
    Uniform,
}

#[derive(Clone, Debug)]
pub struct Episode<T> {
    pub ray: Ray<T>,
    pub gt: [T; 3],
    pub batch: RaySampleBatch<T>,
    pub mse: T,
    pub step: usize,
    pub history: Option<Vec<T>>,
}

impl<T: Real> Episode<T> {
    pub fn depths(&self) -> &[T] {
        &self.batch.depths
    }
}

#[derive(Clone, Debug)]
pub struct StepOutcome<T> {
    pub obs: Vec<T>,
    pub reward: Reward<T>,
    pub done: bool,
}

/// Lock-step episodes on several rays sharing one field query per step.
pub struct VecEnv<'f, T: Real, F: RadianceField<T> + ?Sized> {
    pub field: &'f F,
    pub cfg: EnvConfig,
    pub bounds: [T; 2],
    pub background: [T; 3],
    pub episodes: Vec<Episode<T>>,
}

impl<'f, T: Real, F: RadianceField<T> + ?Sized> VecEnv<'f, T, F> {
    pub fn new(field: &'f F, cfg: EnvConfig, bounds: [T; 2], background: [T; 3]) -> Result<Self, EnvError> {
        cfg.validate()?;
        if field.components() != cfg.components {
            return Err(EnvError::Config(format!(
                "field has {} components, environment expects {}",
                field.components(),
                cfg.components
            )));
        }
        if !(bounds[0] < bounds[1]) {
            return Err(EnvError::Config(format!("bounds {bounds:?}")));
        }
        Ok(Self {
            field,
            cfg,
            bounds,
            background,
            episodes: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    fn observe(&self, e: &Episode<T>) -> Result<Vec<T>, EnvError> {
        build_observation(&e.batch, &e.ray, e.step, &self.cfg, self.bounds, e.history.as_deref())
    }

    pub fn observations(&self) -> Result<Vec<Vec<T>>, EnvError> {
        self.episodes.iter().map(|e| self.observe(e)).collect()
    }

    /// Starts episodes at explicit depths and step indices.
    pub fn start_from(&mut self, starts: Vec<(Ray<T>, [T; 3], Vec<T>, usize)>) -> Result<Vec<Vec<T>>, EnvError> {
        let rays: Vec<Ray<T>> = starts.iter().map(|s| s.0).collect();
        let depths: Vec<Vec<T>> = starts.iter().map(|s| s.2.clone()).collect();
        let batches = sample_rays(self.field, &rays, &depths, self.bounds[1])?;
        self.episodes = starts
            .into_iter()
            .zip(batches)
            .map(|((ray, gt, _, step), batch)| Episode {
                ray,
                gt,
                mse: ray_mse(batch.color_over(self.background), gt),
                history: self.cfg.history_ema.map(|_| batch.weights.clone()),
                batch,
                step,
            })
            .collect();
        self.observations()
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rays: Vec<(Ray<T>, [T; 3])>, init: Init<'_, R>) -> Result<Vec<Vec<T>>, EnvError> {
        let [tn, tf] = self.bounds;
        let n = self.cfg.n_samples;
        let starts = match init {
            Init::Stratified(rng) => rays
                .into_iter()
                .map(|(r, gt)| (r, gt, stratified_samples(tn, tf, n, rng), 0))
                .collect(),
            Init::Uniform => {
                let u = uniform_samples(tn, tf, n);
                rays.into_iter().map(|(r, gt)| (r, gt, u.clone(), 0)).collect()
            }
        };
        self.start_from(starts)
    }

    /// Advances every episode by one action each.
    pub fn step(&mut self, actions: &[Vec<T>]) -> Result<Vec<StepOutcome<T>>, EnvError> {
        if actions.len() != self.episodes.len() {
            return Err(EnvError::ActionLength {
                got: actions.len(),
                expected: self.episodes.len(),
            });
        }
        if self.episodes.iter().any(|e| e.step >= self.cfg.episode_len) {
            return Err(EnvError::Finished);
        }
        let depths = self
            .episodes
            .iter()
            .zip(actions)
            .map(|(e, a)| apply_action(e.depths(), a, &self.cfg, self.bounds))
            .collect::<Result<Vec<_>, _>>()?;
        let rays: Vec<Ray<T>> = self.episodes.iter().map(|e| e.ray).collect();
        let batches = sample_rays(self.field, &rays, &depths, self.bounds[1])?;
        let mut out = Vec::with_capacity(batches.len());
        for (i, batch) in batches.into_iter().enumerate() {
            let reward = {
                let e = &self.episodes[i];
                compute_reward(&e.batch, &batch, e.gt, self.background, &self.cfg)
            };
            let decay = self.cfg.history_ema.map(T::lit);
            let e = &mut self.episodes[i];
            e.mse = ray_mse(batch.color_over(self.background), e.gt);
            if let (Some(h), Some(b)) = (e.history.as_mut(), decay) {
                for (hv, &w) in h.iter_mut().zip(&batch.weights) {
                    *hv = b * *hv + (T::one() - b) * w;
                }
            }
            e.batch = batch;
            e.step += 1;
            let done = e.step == self.cfg.episode_len;
            let obs = self.observe(&self.episodes[i])?;
            out.push(StepOutcome { obs, reward, done });
        }
        Ok(out)
    }
}
