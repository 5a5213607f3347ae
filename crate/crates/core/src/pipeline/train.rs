use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::baselines::stratified_samples;
use crate::diff::{Adam, AdamConfig, DiffError, Graph, Tensor};
use crate::env::{Episode, Init, VecEnv};
use crate::field::FieldModel;
use crate::nn::Binding;
use crate::render::{composite_graph, effective_rate, psnr_from_mse, ray_mixture_nll};
use crate::sac::{GaussianPolicy, ReplayBuffer, SacAgent, Transition, UpdateStats};
use crate::scenes::{Ray, ViewDataset};

use super::checkpoint::Checkpoint;
use super::metrics::{Metrics, MetricsWriter, STAGE1_COLUMNS, STAGE2_COLUMNS};
use super::{PipelineError, TrainConfig};

/// Separate random streams so changing one stage never perturbs another.
pub(crate) const STAGE2_STREAM: u64 = 0x5ac0_0000_0000_0002;

pub fn field_to_checkpoint(field: &FieldModel<f32>, cfg: &TrainConfig) -> Checkpoint {
    Checkpoint::from_store("field", Value::Object(cfg.to_flat()), &field.params)
}

fn expect_kind(ck: &Checkpoint, kind: &str) -> Result<TrainConfig, PipelineError> {
    if ck.kind != kind {
        return Err(PipelineError::Data(format!("expected a {kind} checkpoint, found {}", ck.kind)));
    }
    let flat = ck
        .config
        .as_object()
        .ok_or_else(|| PipelineError::Data("checkpoint config is not an object".into()))?;
    TrainConfig::from_flat(flat)
}

pub fn field_from_checkpoint(ck: &Checkpoint) -> Result<(FieldModel<f32>, TrainConfig), PipelineError> {
    let cfg = expect_kind(ck, "field")?;
    let field = FieldModel::from_params(cfg.field, ck.to_store())?;
    Ok((field, cfg))
}

pub fn policy_to_checkpoint(policy: &GaussianPolicy<f32>, cfg: &TrainConfig) -> Checkpoint {
    Checkpoint::from_store("policy", Value::Object(cfg.to_flat()), &policy.params)
}

pub fn policy_from_checkpoint(ck: &Checkpoint) -> Result<(GaussianPolicy<f32>, TrainConfig), PipelineError> {
    let cfg = expect_kind(ck, "policy")?;
    let policy = GaussianPolicy::from_params(ck.to_store(), cfg.sac.hidden.len(), (cfg.sac.log_std_min, cfg.sac.log_std_max))?;
    if policy.obs_dim() != cfg.env.obs_dim() || policy.act_dim() != cfg.env.n_samples {
        return Err(PipelineError::Data(format!(
            "policy maps {} features to {} moves, config expects {} and {}",
            policy.obs_dim(),
            policy.act_dim(),
            cfg.env.obs_dim(),
            cfg.env.n_samples
        )));
    }
    Ok((policy, cfg))
}

/// SHA-256 over parameter names, shapes and value bits.
pub fn field_hash(field: &FieldModel<f32>) -> String {
    let mut h = Sha256::new();
    for p in field.params.iter() {
        h.update(p.name.as_bytes());
        for d in p.value.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

fn f32x3(v: [f64; 3]) -> [f32; 3] {
    v.map(|x| x as f32)
}

fn ray32(r: &Ray<f64>) -> Ray<f32> {
    r.cast()
}

struct Clock {
    start: Instant,
    enabled: bool,
}

impl Clock {
    fn new(enabled: bool) -> Self {
        Self {
            start: Instant::now(),
            enabled,
        }
    }

    fn ms(&self) -> f64 {
        if self.enabled {
            self.start.elapsed().as_millis() as f64
        } else {
            0.0
        }
    }
}

pub struct Stage1Output {
    pub field: FieldModel<f32>,
    pub metrics: Metrics,
}

struct Stage1Step {
    loss: f64,
    mse: f64,
    effective_rate: f64,
}

/// One minibatch: stratified depths on random training rays, photometric
/// loss plus the mixture-weight KL to uniform plus the ray-level NLL.
fn stage1_step<R: Rng>(
    field: &mut FieldModel<f32>,
    opt: &mut Adam<f32>,
    train: &ViewDataset,
    background: [f32; 3],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Stage1Step, PipelineError> {
    let n = cfg.env.n_samples;
    let r = cfg.batch_rays;
    let [tn, tf] = train.bounds.map(|b| b as f32);
    let total = train.num_rays();
    let mut xs = Vec::with_capacity(r * n);
    let mut dirs = Vec::with_capacity(r * n);
    let mut deltas = Vec::with_capacity(r * n);
    let mut targets = Vec::with_capacity(3 * r);
    for _ in 0..r {
        let (ray, gt) = train.ray(rng.random_range(0..total));
        let ray = ray32(&ray);
        let d = stratified_samples(tn, tf, n, rng);
        for (i, &t) in d.iter().enumerate() {
            xs.push(ray.at(t));
            dirs.push(ray.dir);
            deltas.push(d.get(i + 1).copied().unwrap_or(tf) - t);
        }
        targets.extend(f32x3(gt));
    }
    let mut g = Graph::new();
    let vars = field.forward(&mut g, &xs, &dirs, Binding::Trainable)?;
    let comp = composite_graph(&mut g, &vars, &Tensor::matrix(r, n, deltas), background)?;
    let target = g.constant(Tensor::matrix(r, 3, targets));
    let diff = g.sub(comp.color, target)?;
    let sq = g.square(diff)?;
    let mse = g.mean(sq)?;
    let mut loss = mse;
    if cfg.lambda_reg > 0.0 {
        // KL(π ‖ uniform) = Σ π log π + log K, averaged over points
        let k = cfg.field.components as f32;
        let p = g.add_scalar(vars.pi, 1e-8)?;
        let lp = g.log(p)?;
        let plp = g.mul(vars.pi, lp)?;
        let s = g.sum(plp)?;
        let s = g.scale(s, 1.0 / (r * n) as f32)?;
        let kl = g.add_scalar(s, k.ln())?;
        let kl = g.scale(kl, cfg.lambda_reg as f32)?;
        loss = g.add(loss, kl)?;
    }
    if cfg.lambda_nll > 0.0 {
        let nll = ray_mixture_nll(&mut g, &vars, comp.weights, target)?;
        let nll = g.mean(nll)?;
        let nll = g.scale(nll, cfg.lambda_nll as f32)?;
        loss = g.add(loss, nll)?;
    }
    let loss_v = g.value(loss).item() as f64;
    if !loss_v.is_finite() {
        return Err(DiffError::NonFinite(format!("stage-1 loss {loss_v}")).into());
    }
    g.backward(loss)?;
    field.params.zero_grad();
    g.accumulate_into(&mut field.params);
    opt.step(&mut field.params)?;
    field.params.zero_grad();
    let w = g.value(comp.weights);
    let tau = cfg.env.tau_w as f32;
    let eff = (0..r).map(|i| effective_rate(w.row_slice(i), tau) as f64).sum::<f64>() / r as f64;
    Ok(Stage1Step {
        loss: loss_v,
        mse: g.value(mse).item() as f64,
        effective_rate: eff,
    })
}

/// Fits a fresh field to the training views. A non-finite loss or gradient
/// aborts with the last finite parameters attached to the error.
pub fn stage1_pretrain(
    train: &ViewDataset,
    background: [f64; 3],
    cfg: &TrainConfig,
    metrics_path: Option<&Path>,
) -> Result<Stage1Output, PipelineError> {
    cfg.validate()?;
    if train.views.is_empty() || train.num_rays() == 0 {
        return Err(PipelineError::Data("training split has no pixels".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut field = FieldModel::<f32>::new(cfg.field, &mut rng);
    let mut opt = Adam::new(&field.params, AdamConfig::with_lr(cfg.lr_field));
    let mut log = MetricsWriter::new(&STAGE1_COLUMNS, metrics_path)?;
    let clock = Clock::new(cfg.record_wall_clock);
    let bg = f32x3(background);
    let (mut loss_acc, mut mse_acc, mut eff_acc, mut seen) = (0.0, 0.0, 0.0, 0usize);
    for iter in 0..cfg.stage1_iters {
        let last_good = field.params.clone();
        match stage1_step(&mut field, &mut opt, train, bg, cfg, &mut rng) {
            Ok(s) => {
                loss_acc += s.loss;
                mse_acc += s.mse;
                eff_acc += s.effective_rate;
                seen += 1;
            }
            Err(e) if e.is_divergence() => {
                field.params = last_good;
                return Err(PipelineError::Diverged {
                    stage: "stage 1",
                    iter,
                    why: e.to_string(),
                    last_good: Some(Box::new(field_to_checkpoint(&field, cfg))),
                });
            }
            Err(e) => return Err(e),
        }
        if (iter + 1) % cfg.log_every == 0 || iter + 1 == cfg.stage1_iters {
            let k = seen as f64;
            log.push(vec![
                (iter + 1) as f64,
                clock.ms(),
                loss_acc / k,
                psnr_from_mse(mse_acc / k),
                eff_acc / k,
            ])?;
            (loss_acc, mse_acc, eff_acc, seen) = (0.0, 0.0, 0.0, 0);
        }
    }
    Ok(Stage1Output {
        field,
        metrics: log.metrics,
    })
}

pub struct Stage2Output {
    pub agent: SacAgent<f32>,
    pub metrics: Metrics,
    /// Undiscounted return of every finished episode, in order.
    pub episode_returns: Vec<f64>,
    pub transitions: usize,
    pub updates: usize,
}

/// Target color plus log10 of the current ray error.
const PRIVILEGED: usize = 4;

fn draw_rays<R: Rng>(train: &ViewDataset, count: usize, rng: &mut R) -> Vec<(Ray<f32>, [f32; 3])> {
    let total = train.num_rays();
    (0..count)
        .map(|_| {
            let (ray, gt) = train.ray(rng.random_range(0..total));
            (ray32(&ray), f32x3(gt))
        })
        .collect()
}

#[derive(Default)]
struct Stage2Acc {
    r: [f64; 4],
    mse: f64,
    eff: f64,
    n: usize,
}

/// Trains the sampling policy against a frozen field. Episodes run in
/// lock-step on `parallel_envs` rays drawn uniformly over training pixels.
pub fn stage2_train_policy(
    field: &FieldModel<f32>,
    train: &ViewDataset,
    background: [f64; 3],
    cfg: &TrainConfig,
    metrics_path: Option<&Path>,
) -> Result<Stage2Output, PipelineError> {
    cfg.validate()?;
    if field.config != cfg.field {
        return Err(PipelineError::Config("field checkpoint does not match field.* settings".into()));
    }
    if train.num_rays() == 0 {
        return Err(PipelineError::Data("training split has no pixels".into()));
    }
    let hash_before = field_hash(field);
    let frozen_check = || -> Result<(), PipelineError> {
        if !field.params.grads_are_zero() {
            return Err(PipelineError::FrozenViolation("field gradient is nonzero".into()));
        }
        Ok(())
    };
    frozen_check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ STAGE2_STREAM);
    let n = cfg.env.n_samples;
    let obs_dim = cfg.env.obs_dim();
    let sac = cfg.sac_config();
    let extra = if cfg.privileged_critic { PRIVILEGED } else { 0 };
    let mut agent = SacAgent::<f32>::asymmetric(obs_dim, extra, n, sac.clone(), &mut rng)?;
    let mut buf = ReplayBuffer::new(sac.buffer_capacity.min(cfg.stage2_steps.max(sac.batch_size)), obs_dim + extra, n);
    let critic_obs = |obs: &[f32], e: &Episode<f32>| -> Vec<f32> {
        let mut v = obs.to_vec();
        if extra > 0 {
            v.extend(e.gt);
            v.push(e.mse.max(cfg.env.quality_eps as f32).log10());
        }
        v
    };
    let bounds = train.bounds.map(|b| b as f32);
    let mut env = VecEnv::new(field, cfg.env.clone(), bounds, f32x3(background))?;
    let p = cfg.parallel_envs;
    let mut log = MetricsWriter::new(&STAGE2_COLUMNS, metrics_path)?;
    let clock = Clock::new(cfg.record_wall_clock);

    let mut obs = env.reset(draw_rays(train, p, &mut rng), Init::Stratified(&mut rng))?;
    let mut returns = vec![0.0f64; p];
    let mut episode_returns = Vec::new();
    let mut acc = Stage2Acc::default();
    let mut last: Option<UpdateStats> = None;
    let (mut collected, mut updates, mut vstep) = (0usize, 0usize, 0usize);
    while collected < cfg.stage2_steps {
        let obs_t = Tensor::matrix(p, obs_dim, obs.concat());
        let before: Vec<Vec<f32>> = obs.iter().zip(&env.episodes).map(|(o, e)| critic_obs(o, e)).collect();
        let actions = if collected < sac.warmup_steps {
            agent.random_actions(p, &mut rng)
        } else {
            agent.policy.act(&obs_t, false, &mut rng)?.0
        };
        let act_rows: Vec<Vec<f32>> = (0..p).map(|i| actions.row_slice(i).to_vec()).collect();
        let outs = env.step(&act_rows)?;
        for (i, o) in outs.iter().enumerate() {
            let r = o.reward;
            returns[i] += r.total as f64;
            acc.r[0] += r.r_q as f64;
            acc.r[1] += r.r_e as f64;
            acc.r[2] += r.r_c as f64;
            acc.r[3] += r.total as f64;
            acc.mse += env.episodes[i].mse as f64;
            acc.eff += env.episodes[i].batch.effective_rate(cfg.env.tau_w as f32) as f64;
            acc.n += 1;
            buf.push(Transition {
                obs: before[i].clone(),
                action: act_rows[i].clone(),
                reward: r.total,
                next_obs: critic_obs(&o.obs, &env.episodes[i]),
                done: o.done,
            })?;
        }
        collected += p;
        obs = if outs.iter().all(|o| o.done) {
            episode_returns.extend(returns.iter().copied());
            returns.iter_mut().for_each(|r| *r = 0.0);
            env.reset(draw_rays(train, p, &mut rng), Init::Stratified(&mut rng))?
        } else {
            outs.into_iter().map(|o| o.obs).collect()
        };
        if collected >= sac.warmup_steps && buf.len() >= sac.batch_size {
            for _ in 0..cfg.updates_per_step {
                let batch = buf.sample(sac.batch_size, &mut rng)?;
                last = Some(agent.update(&batch, &mut rng)?);
                updates += 1;
            }
        }
        vstep += 1;
        if vstep % cfg.log_every == 0 || collected >= cfg.stage2_steps {
            frozen_check()?;
            let k = acc.n.max(1) as f64;
            let (loss, alpha, entropy) = last
                .as_ref()
                .map_or((f64::NAN, agent.alpha() as f64, f64::NAN), |s| {
                    (0.5 * (s.critic_loss[0] + s.critic_loss[1]), s.alpha, s.entropy)
                });
            log.push(vec![
                collected as f64,
                clock.ms(),
                loss,
                acc.r[0] / k,
                acc.r[1] / k,
                acc.r[2] / k,
                acc.r[3] / k,
                psnr_from_mse(acc.mse / k),
                acc.eff / k,
                alpha,
                entropy,
            ])?;
            acc = Stage2Acc::default();
        }
    }
    frozen_check()?;
    if field_hash(field) != hash_before {
        return Err(PipelineError::FrozenViolation("parameter hash changed".into()));
    }
    Ok(Stage2Output {
        agent,
        metrics: log.metrics,
        episode_returns,
        transitions: collected,
        updates,
    })
}
