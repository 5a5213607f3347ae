use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::env::EnvConfig;
use crate::field::FieldConfig;
use crate::sac::SacConfig;

use super::PipelineError;

/// Every setting that influences a run. Serialized verbatim into each
/// checkpoint and report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub stage1_iters: usize,
    /// Environment transitions collected in stage 2.
    pub stage2_steps: usize,
    pub lr_field: f64,
    /// Shared by actor, critics and temperature.
    pub lr_sac: f64,
    /// Rays per stage-1 minibatch.
    pub batch_rays: usize,
    pub lambda_reg: f64,
    pub lambda_nll: f64,
    /// Episodes stepped in lock-step during stage 2.
    pub parallel_envs: usize,
    /// Gradient updates per lock-step environment step.
    pub updates_per_step: usize,
    /// Metrics row interval, in iterations (stage 1) or vector steps (stage 2).
    pub log_every: usize,
    /// Rays per chunk when rendering views.
    pub render_chunk: usize,
    /// Fill the `wall_ms` columns; off keeps logs byte-reproducible.
    pub record_wall_clock: bool,
    /// Let the stage-2 critics also see each ray's target color and current
    /// log-error; the policy never does.
    pub privileged_critic: bool,
    pub field: FieldConfig,
    pub env: EnvConfig,
    pub sac: SacConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            stage1_iters: 5000,
            stage2_steps: 50_000,
            lr_field: 5e-4,
            lr_sac: 3e-4,
            batch_rays: 256,
            lambda_reg: 1e-3,
            lambda_nll: 1.0,
            parallel_envs: 16,
            updates_per_step: 4,
            log_every: 50,
            render_chunk: 1024,
            record_wall_clock: false,
            privileged_critic: true,
            field: FieldConfig::default(),
            env: EnvConfig::default(),
            // per-step rewards here span a few tenths, so the entropy bonus
            // has to start far below the generic α = 1
            sac: SacConfig {
                init_alpha: 5e-4,
                ..SacConfig::default()
            },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |w: String| Err(PipelineError::Config(w));
        if !(self.lr_field > 0.0) || !(self.lr_sac > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.batch_rays == 0 || self.parallel_envs == 0 || self.log_every == 0 || self.render_chunk == 0 {
            return bad("batch_rays, parallel_envs, log_every and render_chunk must be positive".into());
        }
        if !(self.lambda_reg >= 0.0) || !(self.lambda_nll >= 0.0) {
            return bad("lambda_reg and lambda_nll must be non-negative".into());
        }
        self.field.validate().map_err(PipelineError::Config)?;
        self.env.validate()?;
        if self.field.components != self.env.components {
            return bad(format!(
                "field.components = {} but env.components = {}",
                self.field.components, self.env.components
            ));
        }
        self.sac_config().validate()?;
        Ok(())
    }

    /// SAC settings with the shared learning rate applied.
    pub fn sac_config(&self) -> SacConfig {
        SacConfig {
            actor_lr: self.lr_sac,
            critic_lr: self.lr_sac,
            alpha_lr: self.lr_sac,
            ..self.sac.clone()
        }
    }

    /// Flat `{"dotted.key": value}` view.
    pub fn to_flat(&self) -> Map<String, Value> {
        flatten_json(&serde_json::to_value(self).expect("config serializes"))
    }

    pub fn to_flat_json(&self) -> String {
        serde_json::to_string_pretty(&Value::Object(self.to_flat())).unwrap() + "\n"
    }

    /// Parses a complete flat config: every key must be present and no
    /// unknown key is accepted.
    pub fn from_flat(flat: &Map<String, Value>) -> Result<Self, PipelineError> {
        let reference = Self::default().to_flat();
        if let Some(k) = reference.keys().find(|k| !flat.contains_key(*k)) {
            return Err(PipelineError::Config(format!("missing config key {k}")));
        }
        if let Some(k) = flat.keys().find(|k| !reference.contains_key(*k)) {
            return Err(PipelineError::Config(format!("unknown config key {k}")));
        }
        let cfg: Self = serde_json::from_value(unflatten_json(flat))
            .map_err(|e| PipelineError::Config(format!("invalid config value: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Replaces one dotted key, parsing `raw` as JSON and falling back to a
    /// plain string.
    pub fn with_override(&self, key: &str, raw: &str) -> Result<Self, PipelineError> {
        let mut flat = self.to_flat();
        if !flat.contains_key(key) {
            return Err(PipelineError::Config(format!("unknown config key {key}")));
        }
        let v = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        flat.insert(key.to_string(), v);
        Self::from_flat(&flat)
    }

    /// Hex SHA-256 of the canonical flat JSON.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(self.to_flat_json().as_bytes()))
    }
}

/// Flattens nested objects into dotted keys; arrays and scalars are leaves.
pub fn flatten_json(v: &Value) -> Map<String, Value> {
    fn go(prefix: &str, v: &Value, out: &mut Map<String, Value>) {
        match v {
            Value::Object(m) if !m.is_empty() => {
                for (k, child) in m {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    go(&key, child, out);
                }
            }
            other => {
                out.insert(prefix.to_string(), other.clone());
            }
        }
    }
    let mut out = Map::new();
    go("", v, &mut out);
    out
}

/// Inverse of [`flatten_json`].
pub fn unflatten_json(flat: &Map<String, Value>) -> Value {
    let mut root = Map::new();
    for (key, v) in flat {
        let parts: Vec<&str> = key.split('.').collect();
        let mut node = &mut root;
        for p in &parts[..parts.len() - 1] {
            let entry = node.entry(p.to_string()).or_insert_with(|| Value::Object(Map::new()));
            if !entry.is_object() {
                *entry = Value::Object(Map::new());
            }
            node = entry.as_object_mut().unwrap();
        }
        node.insert(parts[parts.len() - 1].to_string(), v.clone());
    }
    Value::Object(root)
}
