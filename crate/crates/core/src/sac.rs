//! Soft actor-critic: squashed Gaussian policy, twin critics with Polyak
//! targets, automatic entropy temperature and a uniform replay buffer.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::{polyak_update, Adam, AdamConfig, DiffError, Graph, ParamStore, Tensor, Var};
use crate::nn::{Binding, Mlp};
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SacError {
    #[error("learner diverged: {0}")]
    Diverged(String),
    #[error("replay holds {have} transitions, batch needs {need}")]
    NotEnoughData { have: usize, need: usize },
    #[error("bad transition: {0}")]
    Transition(String),
    #[error("sac configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Diff(DiffError),
}

impl From<DiffError> for SacError {
    fn from(e: DiffError) -> Self {
        match e {
            DiffError::NonFinite(w) | DiffError::NonFiniteGradient(w) => SacError::Diverged(w),
            other => SacError::Diff(other),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub warmup_steps: usize,
    pub init_alpha: f64,
    /// `None` uses the negative action dimension.
    pub target_entropy: Option<f64>,
    pub log_std_min: f64,
    pub log_std_max: f64,
    /// Treat `done` as truncation and keep bootstrapping through it.
    pub bootstrap_on_truncation: bool,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha_lr: 3e-4,
            gamma: 0.99,
            tau: 0.005,
            batch_size: 256,
            buffer_capacity: 1_000_000,
            warmup_steps: 1000,
            init_alpha: 1.0,
            target_entropy: None,
            log_std_min: -5.0,
            log_std_max: 2.0,
            bootstrap_on_truncation: false,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<(), SacError> {
        let bad = |w: &str| Err(SacError::Config(w.to_string()));
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden widths must be positive");
        }
        if [self.actor_lr, self.critic_lr, self.alpha_lr].iter().any(|l| !(*l > 0.0)) {
            return bad("learning rates must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("gamma must lie in [0, 1] and tau in (0, 1]");
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return bad("buffer capacity must cover at least one batch");
        }
        if !(self.init_alpha > 0.0) || !(self.log_std_min < self.log_std_max) {
            return bad("initial temperature must be positive and log-std bounds ordered");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition<T> {
    pub obs: Vec<T>,
    pub action: Vec<T>,
    pub reward: T,
    pub next_obs: Vec<T>,
    pub done: bool,
}

/// A sampled minibatch, copied out of the buffer.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub obs: Tensor<T>,
    pub action: Tensor<T>,
    pub reward: Vec<T>,
    pub next_obs: Tensor<T>,
    pub done: Vec<bool>,
}

/// Ring buffer with uniform sampling with replacement. Storage grows on
/// demand up to the capacity.
#[derive(Clone, Debug)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    obs_dim: usize,
    act_dim: usize,
    items: Vec<Transition<T>>,
    next: usize,
}

impl<T: Real> ReplayBuffer<T> {
    pub fn new(capacity: usize, obs_dim: usize, act_dim: usize) -> Self {
        assert!(capacity > 0, "replay capacity");
        Self {
            capacity,
            obs_dim,
            act_dim,
            items: Vec::new(),
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition<T>) -> Result<(), SacError> {
        if t.obs.len() != self.obs_dim || t.next_obs.len() != self.obs_dim || t.action.len() != self.act_dim {
            return Err(SacError::Transition(format!(
                "dims obs {} next {} action {}, expected {} and {}",
                t.obs.len(),
                t.next_obs.len(),
                t.action.len(),
                self.obs_dim,
                self.act_dim
            )));
        }
        if t.action.iter().any(|a| !(a.abs() <= T::one())) {
            return Err(SacError::Transition("action outside [-1, 1]".into()));
        }
        if !t.reward.is_finite() || t.obs.iter().chain(&t.next_obs).any(|v| !v.is_finite()) {
            return Err(SacError::Transition("non-finite reward or observation".into()));
        }
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Batch<T>, SacError> {
        if self.items.len() < batch || batch == 0 {
            return Err(SacError::NotEnoughData {
                have: self.items.len(),
                need: batch,
            });
        }
        let mut obs = Vec::with_capacity(batch * self.obs_dim);
        let mut next_obs = Vec::with_capacity(batch * self.obs_dim);
        let mut action = Vec::with_capacity(batch * self.act_dim);
        let mut reward = Vec::with_capacity(batch);
        let mut done = Vec::with_capacity(batch);
        for _ in 0..batch {
            let t = &self.items[rng.random_range(0..self.items.len())];
            obs.extend_from_slice(&t.obs);
            next_obs.extend_from_slice(&t.next_obs);
            action.extend_from_slice(&t.action);
            reward.push(t.reward);
            done.push(t.done);
        }
        Ok(Batch {
            obs: Tensor::matrix(batch, self.obs_dim, obs),
            action: Tensor::matrix(batch, self.act_dim, action),
            reward,
            next_obs: Tensor::matrix(batch, self.obs_dim, next_obs),
            done,
        })
    }
}

/// Guards `log(1 − a²)` against saturated actions.
pub const SQUASH_EPS: f64 = 1e-6;

pub fn standard_normal<T: Real, R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor<T> {
    let data = (0..rows * cols)
        .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Tensor::matrix(rows, cols, data)
}

/// `a = tanh(μ + e^{log σ} ε)` and its log density including the tanh
/// change-of-variables term `−Σ log(1 − a² + 1e-6)`. Returns `(a [B, A],
/// log π [B, 1])`.
pub fn squashed_sample<T: Real>(g: &mut Graph<T>, mu: Var, log_std: Var, noise: &Tensor<T>) -> Result<(Var, Var), DiffError> {
    let half_log_tau = T::lit(0.5 * std::f64::consts::TAU.ln());
    let gauss: Vec<T> = (0..noise.rows())
        .map(|r| {
            noise
                .row_slice(r)
                .iter()
                .map(|&e| -T::lit(0.5) * e * e - half_log_tau)
                .sum()
        })
        .collect();
    let eps = g.constant(noise.clone());
    let std = g.exp(log_std)?;
    let spread = g.mul(std, eps)?;
    let pre = g.add(mu, spread)?;
    let a = g.tanh(pre)?;
    let sum_log_std = g.sum_last(log_std)?;
    let gauss = g.constant(Tensor::matrix(noise.rows(), 1, gauss));
    let base = g.sub(gauss, sum_log_std)?;
    let a2 = g.square(a)?;
    let keep = g.neg(a2)?;
    let keep = g.add_scalar(keep, T::lit(1.0 + SQUASH_EPS))?;
    let log_keep = g.log(keep)?;
    let corr = g.sum_last(log_keep)?;
    let logp = g.sub(base, corr)?;
    Ok((a, logp))
}

#[derive(Clone, Debug)]
pub struct GaussianPolicy<T: Real> {
    pub params: ParamStore<T>,
    net: Mlp,
    act_dim: usize,
    log_std_bounds: (f64, f64),
}

impl<T: Real> GaussianPolicy<T> {
    pub const PREFIX: &'static str = "policy";

    pub fn new<R: Rng + ?Sized>(obs_dim: usize, act_dim: usize, hidden: &[usize], bounds: (f64, f64), rng: &mut R) -> Self {
        let mut params = ParamStore::new();
        let net = Mlp::new(&mut params, Self::PREFIX, obs_dim, hidden, 2 * act_dim, rng);
        Self {
            params,
            net,
            act_dim,
            log_std_bounds: bounds,
        }
    }

    /// Rebuilds a policy around stored parameters.
    pub fn from_params(params: ParamStore<T>, depth: usize, bounds: (f64, f64)) -> Result<Self, DiffError> {
        let net = Mlp::find(&params, Self::PREFIX, depth)?;
        if net.output_width() % 2 != 0 {
            return Err(DiffError::Shape(format!("policy output width {}", net.output_width())));
        }
        Ok(Self {
            act_dim: net.output_width() / 2,
            params,
            net,
            log_std_bounds: bounds,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_width()
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    /// Pre-squash mean and clamped log standard deviation, each `[B, A]`.
    pub fn heads(&self, g: &mut Graph<T>, obs: Var, b: Binding) -> Result<(Var, Var), DiffError> {
        let out = self.net.forward(g, &self.params, obs, b)?;
        let mu = g.slice(out, 0, self.act_dim)?;
        let raw = g.slice(out, self.act_dim, 2 * self.act_dim)?;
        let (lo, hi) = self.log_std_bounds;
        let log_std = g.clip(raw, T::lit(lo), T::lit(hi))?;
        Ok((mu, log_std))
    }

    pub fn rsample(&self, g: &mut Graph<T>, obs: Var, noise: &Tensor<T>, b: Binding) -> Result<(Var, Var), DiffError> {
        let (mu, log_std) = self.heads(g, obs, b)?;
        squashed_sample(g, mu, log_std, noise)
    }

    /// Actions for a batch of observations, with their log densities
    /// (stochastic mode only; deterministic mode returns `tanh(μ)` and zeros).
    pub fn act<R: Rng + ?Sized>(&self, obs: &Tensor<T>, deterministic: bool, rng: &mut R) -> Result<(Tensor<T>, Vec<T>), DiffError> {
        let mut g = Graph::new();
        let o = g.constant(obs.clone());
        if deterministic {
            let (mu, _) = self.heads(&mut g, o, Binding::Frozen)?;
            let a = g.tanh(mu)?;
            return Ok((g.value(a).clone(), vec![T::zero(); obs.rows()]));
        }
        let noise = standard_normal(rng, obs.rows(), self.act_dim);
        let (a, lp) = self.rsample(&mut g, o, &noise, Binding::Frozen)?;
        Ok((g.value(a).clone(), g.value(lp).data().to_vec()))
    }
}

#[derive(Clone, Debug)]
pub struct Critic<T: Real> {
    pub params: ParamStore<T>,
    net: Mlp,
}

impl<T: Real> Critic<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, obs_dim: usize, act_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut params = ParamStore::new();
        let net = Mlp::new(&mut params, name, obs_dim + act_dim, hidden, 1, rng);
        Self { params, net }
    }

    /// `Q(s, a)` as `[B, 1]` using the parameters in `store` (the online
    /// store or its target copy).
    pub fn q(&self, g: &mut Graph<T>, store: &ParamStore<T>, obs: Var, act: Var, b: Binding) -> Result<Var, DiffError> {
        let x = g.concat(&[obs, act])?;
        self.net.forward(g, store, x, b)
    }
}

/// `mean(α·log π(a|s) − Q(s, a))` with reparameterized `a`; returns the loss
/// and the per-row log densities.
pub fn policy_loss<T: Real>(
    g: &mut Graph<T>,
    policy: &GaussianPolicy<T>,
    obs: Var,
    noise: &Tensor<T>,
    alpha: T,
    q: impl FnOnce(&mut Graph<T>, Var, Var) -> Result<Var, DiffError>,
) -> Result<(Var, Var), DiffError> {
    let (a, logp) = policy.rsample(g, obs, noise, Binding::Trainable)?;
    let qv = q(g, obs, a)?;
    let scaled = g.scale(logp, alpha)?;
    let diff = g.sub(scaled, qv)?;
    Ok((g.mean(diff)?, logp))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: [f64; 2],
    pub policy_loss: f64,
    /// `−mean log π` over the batch.
    pub entropy: f64,
    pub alpha: f64,
}

pub struct SacAgent<T: Real> {
    pub cfg: SacConfig,
    pub policy: GaussianPolicy<T>,
    pub critics: [Critic<T>; 2],
    pub targets: [ParamStore<T>; 2],
    pub log_alpha: ParamStore<T>,
    pub target_entropy: f64,
    /// Trailing observation columns only the critics see.
    pub critic_extra: usize,
    policy_opt: Adam<T>,
    critic_opts: [Adam<T>; 2],
    alpha_opt: Adam<T>,
}

impl<T: Real> SacAgent<T> {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, act_dim: usize, cfg: SacConfig, rng: &mut R) -> Result<Self, SacError> {
        Self::asymmetric(obs_dim, 0, act_dim, cfg, rng)
    }

    /// Critics read `critic_extra` columns appended to the policy's
    /// observation; buffered observations carry both parts.
    pub fn asymmetric<R: Rng + ?Sized>(
        obs_dim: usize,
        critic_extra: usize,
        act_dim: usize,
        cfg: SacConfig,
        rng: &mut R,
    ) -> Result<Self, SacError> {
        cfg.validate()?;
        let bounds = (cfg.log_std_min, cfg.log_std_max);
        let policy = GaussianPolicy::new(obs_dim, act_dim, &cfg.hidden, bounds, rng);
        let critic_in = obs_dim + critic_extra;
        let critics = [
            Critic::new("q1", critic_in, act_dim, &cfg.hidden, rng),
            Critic::new("q2", critic_in, act_dim, &cfg.hidden, rng),
        ];
        let targets = [critics[0].params.clone(), critics[1].params.clone()];
        let mut log_alpha = ParamStore::new();
        log_alpha.add("log_alpha", Tensor::scalar(T::lit(cfg.init_alpha.ln())));
        let adam = |lr| AdamConfig::with_lr(lr);
        Ok(Self {
            target_entropy: cfg.target_entropy.unwrap_or(-(act_dim as f64)),
            critic_extra,
            policy_opt: Adam::new(&policy.params, adam(cfg.actor_lr)),
            critic_opts: [
                Adam::new(&critics[0].params, adam(cfg.critic_lr)),
                Adam::new(&critics[1].params, adam(cfg.critic_lr)),
            ],
            alpha_opt: Adam::new(&log_alpha, adam(cfg.alpha_lr)),
            cfg,
            policy,
            critics,
            targets,
            log_alpha,
        })
    }

    fn policy_view(&self, g: &mut Graph<T>, s: Var) -> Result<Var, DiffError> {
        if self.critic_extra == 0 {
            Ok(s)
        } else {
            g.slice(s, 0, self.policy.obs_dim())
        }
    }

    pub fn alpha(&self) -> T {
        self.log_alpha.iter().next().unwrap().value.item().exp()
    }

    /// `y = r + γ(1 − d)(min_i Q'_i(s', a') − α log π(a'|s'))`, `a'` fresh.
    pub fn critic_target<R: Rng + ?Sized>(&self, batch: &Batch<T>, rng: &mut R) -> Result<Vec<T>, SacError> {
        let noise = standard_normal(rng, batch.next_obs.rows(), self.policy.act_dim());
        self.critic_target_with_noise(batch, &noise)
    }

    pub fn critic_target_with_noise(&self, batch: &Batch<T>, noise: &Tensor<T>) -> Result<Vec<T>, SacError> {
        let mut g = Graph::new();
        let s2 = g.constant(batch.next_obs.clone());
        let p2 = self.policy_view(&mut g, s2)?;
        let (a2, logp) = self.policy.rsample(&mut g, p2, noise, Binding::Frozen)?;
        let q1 = self.critics[0].q(&mut g, &self.targets[0], s2, a2, Binding::Frozen)?;
        let q2 = self.critics[1].q(&mut g, &self.targets[1], s2, a2, Binding::Frozen)?;
        let qmin = g.minimum(q1, q2)?;
        let (qmin, logp) = (g.value(qmin).data(), g.value(logp).data());
        let alpha = self.alpha();
        let gamma = T::lit(self.cfg.gamma);
        Ok((0..batch.reward.len())
            .map(|i| {
                let boot = !batch.done[i] || self.cfg.bootstrap_on_truncation;
                let soft = qmin[i] - alpha * logp[i];
                batch.reward[i] + if boot { gamma * soft } else { T::zero() }
            })
            .collect())
    }

    /// One Adam step per critic towards shared targets; returns the
    /// pre-step mean squared errors.
    pub fn update_critics(&mut self, batch: &Batch<T>, y: &[T]) -> Result<[f64; 2], SacError> {
        let target = Tensor::matrix(y.len(), 1, y.to_vec());
        let mut losses = [0.0; 2];
        for i in 0..2 {
            let mut g = Graph::new();
            let s = g.constant(batch.obs.clone());
            let a = g.constant(batch.action.clone());
            let critic = &self.critics[i];
            let q = critic.q(&mut g, &critic.params, s, a, Binding::Trainable)?;
            let t = g.constant(target.clone());
            let d = g.sub(q, t)?;
            let d2 = g.square(d)?;
            let loss = g.mean(d2)?;
            g.backward(loss)?;
            losses[i] = g.value(loss).item().to_f64_lossless();
            let store = &mut self.critics[i].params;
            store.zero_grad();
            g.accumulate_into(store);
            self.critic_opts[i].step(store)?;
        }
        Ok(losses)
    }

    /// One policy step against the frozen twin-critic minimum; returns the
    /// loss and the batch-mean log density.
    pub fn update_policy<R: Rng + ?Sized>(&mut self, batch: &Batch<T>, rng: &mut R) -> Result<(f64, f64), SacError> {
        let noise = standard_normal(rng, batch.obs.rows(), self.policy.act_dim());
        let mut g = Graph::new();
        let s = g.constant(batch.obs.clone());
        let ps = self.policy_view(&mut g, s)?;
        let (c0, c1) = (&self.critics[0], &self.critics[1]);
        let (loss, logp) = policy_loss(&mut g, &self.policy, ps, &noise, self.alpha(), |g, _, a| {
            let q1 = c0.q(g, &c0.params, s, a, Binding::Frozen)?;
            let q2 = c1.q(g, &c1.params, s, a, Binding::Frozen)?;
            g.minimum(q1, q2)
        })?;
        g.backward(loss)?;
        let mean_logp = g.value(logp).data().iter().map(|v| v.to_f64_lossless()).sum::<f64>() / batch.obs.rows() as f64;
        self.policy.params.zero_grad();
        g.accumulate_into(&mut self.policy.params);
        self.policy_opt.step(&mut self.policy.params)?;
        Ok((g.value(loss).item().to_f64_lossless(), mean_logp))
    }

    /// Gradient of `−log α·(mean log π + H̄)` with respect to `log α`.
    pub fn temperature_gradient(&self, mean_logp: f64) -> f64 {
        -(mean_logp + self.target_entropy)
    }

    pub fn update_temperature(&mut self, mean_logp: f64) -> Result<f64, SacError> {
        let grad = self.temperature_gradient(mean_logp);
        let id = self.log_alpha.ids().next().unwrap();
        *self.log_alpha.grad_mut(id) = Tensor::scalar(T::lit(grad));
        self.alpha_opt.step(&mut self.log_alpha)?;
        Ok(self.alpha().to_f64_lossless())
    }

    pub fn update_targets(&mut self) -> Result<(), SacError> {
        let tau = T::lit(self.cfg.tau);
        for i in 0..2 {
            polyak_update(&self.critics[i].params, &mut self.targets[i], tau)?;
        }
        Ok(())
    }

    /// Critics, then policy, then temperature, then targets.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &Batch<T>, rng: &mut R) -> Result<UpdateStats, SacError> {
        let y = self.critic_target(batch, rng)?;
        let critic_loss = self.update_critics(batch, &y)?;
        let (policy_loss, mean_logp) = self.update_policy(batch, rng)?;
        let alpha = self.update_temperature(mean_logp)?;
        self.update_targets()?;
        let stats = UpdateStats {
            critic_loss,
            policy_loss,
            entropy: -mean_logp,
            alpha,
        };
        let all = [critic_loss[0], critic_loss[1], policy_loss, mean_logp, alpha];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(SacError::Diverged(format!("{stats:?}")));
        }
        Ok(stats)
    }

    /// Uniform random actions in `[−1, 1]`, used during warmup.
    pub fn random_actions<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> Tensor<T> {
        let a = self.policy.act_dim();
        Tensor::matrix(rows, a, (0..rows * a).map(|_| T::lit(rng.random_range(-1.0..=1.0))).collect())
    }
}

/// 1-D point mass: position starts uniform in `[−1, 1]`, velocity actions
/// move it by `0.2·a`, reward is `−(x − goal)²` after the move, 20 steps.
#[derive(Clone, Debug)]
pub struct PointMass {
    pub x: f64,
    pub t: usize,
    pub goal: f64,
}

impl PointMass {
    pub const HORIZON: usize = 20;
    pub const SPEED: f64 = 0.2;

    pub fn reset<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            x: rng.random_range(-1.0..=1.0),
            t: 0,
            goal: 0.0,
        }
    }

    pub fn obs(&self) -> Vec<f64> {
        vec![self.x]
    }

    pub fn step(&mut self, a: f64) -> (f64, bool) {
        self.x += Self::SPEED * a.clamp(-1.0, 1.0);
        self.t += 1;
        (-(self.x - self.goal).powi(2), self.t >= Self::HORIZON)
    }
}

/// Mean return of `episodes` point-mass episodes under `act`.
pub fn point_mass_return<R: Rng + ?Sized>(episodes: usize, rng: &mut R, mut act: impl FnMut(&[f64], &mut R) -> f64) -> f64 {
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut env = PointMass::reset(rng);
        loop {
            let a = act(&env.obs(), rng);
            let (r, done) = env.step(a);
            total += r;
            if done {
                break;
            }
        }
    }
    total / episodes as f64
}

/// SAC settings sized for the point-mass task.
pub fn point_mass_config() -> SacConfig {
    SacConfig {
        hidden: vec![32, 32],
        actor_lr: 1e-3,
        critic_lr: 1e-3,
        alpha_lr: 1e-3,
        batch_size: 64,
        buffer_capacity: 100_000,
        init_alpha: 0.2,
        ..SacConfig::default()
    }
}

/// Trains on the point mass for `steps` environment steps (one update per
/// step after warmup) and returns the agent.
pub fn train_point_mass<R: Rng + ?Sized>(steps: usize, cfg: SacConfig, rng: &mut R) -> Result<SacAgent<f32>, SacError> {
    let mut agent = SacAgent::<f32>::new(1, 1, cfg, rng)?;
    let mut buf = ReplayBuffer::new(agent.cfg.buffer_capacity, 1, 1);
    let mut env = PointMass::reset(rng);
    for step in 0..steps {
        let obs = vec![env.x as f32];
        let a = if step < agent.cfg.warmup_steps {
            agent.random_actions(1, rng).item()
        } else {
            agent.policy.act(&Tensor::matrix(1, 1, obs.clone()), false, rng)?.0.item()
        };
        let (r, done) = env.step(a as f64);
        buf.push(Transition {
            obs,
            action: vec![a],
            reward: r as f32,
            next_obs: vec![env.x as f32],
            done,
        })?;
        if done {
            env = PointMass::reset(rng);
        }
        if step + 1 >= agent.cfg.warmup_steps && buf.len() >= agent.cfg.batch_size {
            let batch = buf.sample(agent.cfg.batch_size, rng)?;
            agent.update(&batch, rng)?;
        }
    }
    Ok(agent)
}
