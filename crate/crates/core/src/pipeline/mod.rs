//! Two-stage training, checkpoints, metrics logs and the evaluation harness.
//!
//! Stage 1 fits the radiance field to posed images. Stage 2 freezes it and
//! trains the sampling policy with soft actor-critic on per-ray episodes.

mod checkpoint;
mod config;
mod eval;
mod metrics;
mod train;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, TensorEntry,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{flatten_json, unflatten_json, TrainConfig};
pub use eval::{
    evaluate, render_with_sampler, spacing_variance, Aggregate, EvalReport, RenderedView, ViewRow,
};
pub use metrics::{parse_metrics_csv, render_svg, Metrics, MetricsWriter, STAGE1_COLUMNS, STAGE2_COLUMNS};
pub use train::{
    field_from_checkpoint, field_hash, field_to_checkpoint, policy_from_checkpoint, policy_to_checkpoint,
    stage1_pretrain, stage2_train_policy, Stage1Output, Stage2Output,
};

use thiserror::Error;

use crate::diff::DiffError;
use crate::env::EnvError;
use crate::image::ImageError;
use crate::render::RenderError;
use crate::sac::SacError;
use crate::scenes::{load_pose_json, transforms_name, SceneError, SceneOracle, Split, ViewDataset};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    /// Carries the parameters from the last finite step when available.
    #[error("{stage} diverged at iteration {iter}: {why}")]
    Diverged {
        stage: &'static str,
        iter: usize,
        why: String,
        last_good: Option<Box<Checkpoint>>,
    },
    #[error("frozen field parameters changed during policy training: {0}")]
    FrozenViolation(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Sac(#[from] SacError),
}

impl PipelineError {
    pub(crate) fn io(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |source| PipelineError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Whether the failure is numerical rather than a data or usage problem.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            PipelineError::Diverged { .. }
                | PipelineError::Sac(SacError::Diverged(_))
                | PipelineError::Diff(DiffError::NonFinite(_) | DiffError::NonFiniteGradient(_))
                | PipelineError::Env(EnvError::NonFinite(_))
        )
    }
}

/// Both splits of a scene directory plus its background color.
pub struct SceneData {
    pub train: ViewDataset,
    pub test: ViewDataset,
    pub background: [f64; 3],
}

/// Bounds used when a pose file has no `near`/`far`.
pub const DEFAULT_BOUNDS: [f64; 2] = [2.0, 6.0];

/// Loads `transforms_{train,test}.json` from `dir`. The background comes
/// from `scene.json` when present, else black.
pub fn load_scene_dir(dir: &std::path::Path) -> Result<SceneData, PipelineError> {
    let split = |s: Split| load_pose_json(&dir.join(transforms_name(s)), s, 1, DEFAULT_BOUNDS);
    let scene = dir.join("scene.json");
    let background = if scene.exists() {
        SceneOracle::load(&scene)?.background
    } else {
        [0.0; 3]
    };
    Ok(SceneData {
        train: split(Split::Train)?,
        test: split(Split::Test)?,
        background,
    })
}
