use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{hierarchical_resample, hierarchical_split, stratified_samples, uniform_samples, SamplerKind};
use crate::diff::Tensor;
use crate::env::{sample_rays, Init, VecEnv};
use crate::field::FieldModel;
use crate::image::Image;
use crate::render::{effective_rate, low_weight_count, psnr, ssim, RaySampleBatch};
use crate::sac::GaussianPolicy;
use crate::scenes::{Camera, Ray, ViewDataset};

use super::{PipelineError, TrainConfig};

const EVAL_STREAM: u64 = 0xe7a1_0000_0000_0000;

/// Variance of the gaps between consecutive depths.
pub fn spacing_variance(depths: &[f32]) -> f64 {
    if depths.len() < 3 {
        return 0.0;
    }
    let gaps: Vec<f64> = depths.windows(2).map(|w| (w[1] - w[0]) as f64).collect();
    let m = gaps.iter().sum::<f64>() / gaps.len() as f64;
    gaps.iter().map(|g| (g - m) * (g - m)).sum::<f64>() / gaps.len() as f64
}

/// A rendered view plus per-ray sampling statistics averaged over rays.
#[derive(Clone, Debug)]
pub struct RenderedView {
    pub image: Image<f64>,
    pub effective_rate: f64,
    pub mean_low_weight: f64,
    pub spacing_variance: f64,
}

fn chunk_batches(
    field: &FieldModel<f32>,
    rays: &[(Ray<f32>, [f32; 3])],
    bounds: [f32; 2],
    background: [f32; 3],
    sampler: SamplerKind,
    policy: Option<&GaussianPolicy<f32>>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<RaySampleBatch<f32>>, PipelineError> {
    let [tn, tf] = bounds;
    let n = cfg.env.n_samples;
    let only: Vec<Ray<f32>> = rays.iter().map(|r| r.0).collect();
    let batches = match sampler {
        SamplerKind::Uniform => {
            let u = uniform_samples(tn, tf, n);
            sample_rays(field, &only, &vec![u; rays.len()], tf)?
        }
        SamplerKind::Stratified => {
            let d: Vec<Vec<f32>> = rays.iter().map(|_| stratified_samples(tn, tf, n, rng)).collect();
            sample_rays(field, &only, &d, tf)?
        }
        SamplerKind::Hierarchical => {
            let (nc, nf) = hierarchical_split(n);
            let coarse: Vec<Vec<f32>> = rays.iter().map(|_| stratified_samples(tn, tf, nc, rng)).collect();
            let cb = sample_rays(field, &only, &coarse, tf)?;
            let fine: Vec<Vec<f32>> = cb
                .iter()
                .map(|b| hierarchical_resample(tn, tf, &b.depths, &b.weights, nf, rng))
                .collect();
            sample_rays(field, &only, &fine, tf)?
        }
        SamplerKind::Policy => {
            let policy = policy.ok_or_else(|| PipelineError::Config("the policy sampler needs a policy checkpoint".into()))?;
            let mut env = VecEnv::new(field, cfg.env.clone(), bounds, background)?;
            let mut obs = env.reset::<ChaCha8Rng>(rays.to_vec(), Init::Uniform)?;
            for _ in 0..cfg.env.episode_len {
                let t = Tensor::matrix(obs.len(), cfg.env.obs_dim(), obs.concat());
                let (a, _) = policy.act(&t, true, rng)?;
                let rows: Vec<Vec<f32>> = (0..obs.len()).map(|i| a.row_slice(i).to_vec()).collect();
                obs = env.step(&rows)?.into_iter().map(|o| o.obs).collect();
            }
            env.episodes.into_iter().map(|e| e.batch).collect()
        }
    };
    Ok(batches)
}

/// Renders one camera with the chosen sampler. `gt` only feeds the
/// environment's reward bookkeeping for the policy sampler.
#[allow(clippy::too_many_arguments)]
pub fn render_with_sampler(
    field: &FieldModel<f32>,
    camera: &Camera,
    gt: Option<&Image<f64>>,
    bounds: [f64; 2],
    background: [f64; 3],
    sampler: SamplerKind,
    policy: Option<&GaussianPolicy<f32>>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<RenderedView, PipelineError> {
    if sampler == SamplerKind::Policy && policy.is_none() {
        return Err(PipelineError::Config("the policy sampler needs a policy checkpoint".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (camera.width, camera.height);
    let bg = background.map(|v| v as f32);
    let b32 = bounds.map(|v| v as f32);
    let tau = cfg.env.tau_w as f32;
    let mut image = Image::new(w, h);
    let (mut eff, mut low, mut spacing) = (0.0, 0.0, 0.0);
    let pixels: Vec<(usize, usize)> = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).collect();
    for chunk in pixels.chunks(cfg.render_chunk) {
        let rays: Vec<(Ray<f32>, [f32; 3])> = chunk
            .iter()
            .map(|&(x, y)| {
                let c = gt.map_or([0.0; 3], |g| g.pixel(x, y));
                (camera.ray(x, y).cast(), c.map(|v| v as f32))
            })
            .collect();
        let batches = chunk_batches(field, &rays, b32, bg, sampler, policy, cfg, &mut rng)?;
        for (&(x, y), b) in chunk.iter().zip(&batches) {
            image.set_pixel(x, y, b.color_over(bg).map(|v| v as f64));
            eff += effective_rate(&b.weights, tau) as f64;
            low += low_weight_count(&b.weights, tau) as f64;
            spacing += spacing_variance(&b.depths);
        }
    }
    let k = pixels.len().max(1) as f64;
    Ok(RenderedView {
        image,
        effective_rate: eff / k,
        mean_low_weight: low / k,
        spacing_variance: spacing / k,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewRow {
    pub view: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub effective_rate: f64,
    pub mean_low_weight: f64,
    pub spacing_variance: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub views: usize,
    pub rays: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub effective_rate: f64,
    pub mean_low_weight: f64,
    pub spacing_variance: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub sampler: SamplerKind,
    pub n_samples: usize,
    pub per_view: Vec<ViewRow>,
    pub aggregate: Aggregate,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

fn eval_view(
    field: &FieldModel<f32>,
    sampler: SamplerKind,
    policy: Option<&GaussianPolicy<f32>>,
    test: &ViewDataset,
    background: [f64; 3],
    cfg: &TrainConfig,
    i: usize,
) -> Result<ViewRow, PipelineError> {
    let start = Instant::now();
    let v = &test.views[i];
    let seed = cfg.seed ^ EVAL_STREAM ^ i as u64;
    let r = render_with_sampler(field, &v.camera, Some(&v.image), test.bounds, background, sampler, policy, cfg, seed)?;
    Ok(ViewRow {
        view: i,
        psnr: psnr(&r.image, &v.image)?,
        ssim: ssim(&r.image, &v.image)?,
        effective_rate: r.effective_rate,
        mean_low_weight: r.mean_low_weight,
        spacing_variance: r.spacing_variance,
        wall_ms: if cfg.record_wall_clock {
            start.elapsed().as_millis() as f64
        } else {
            0.0
        },
    })
}

/// Renders every test view, spreading views over up to `threads` workers.
/// Rows are independent of the thread count.
pub fn evaluate(
    field: &FieldModel<f32>,
    sampler: SamplerKind,
    policy: Option<&GaussianPolicy<f32>>,
    test: &ViewDataset,
    background: [f64; 3],
    cfg: &TrainConfig,
    threads: usize,
) -> Result<EvalReport, PipelineError> {
    if sampler == SamplerKind::Policy && policy.is_none() {
        return Err(PipelineError::Config("the policy sampler needs a policy checkpoint".into()));
    }
    if test.views.is_empty() {
        return Err(PipelineError::Data("test split has no views".into()));
    }
    let nv = test.views.len();
    let threads = threads.clamp(1, nv);
    let rows: Vec<ViewRow> = if threads == 1 {
        (0..nv)
            .map(|i| eval_view(field, sampler, policy, test, background, cfg, i))
            .collect::<Result<_, _>>()?
    } else {
        let per = nv.div_ceil(threads);
        let parts: Vec<Result<Vec<ViewRow>, PipelineError>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    s.spawn(move || {
                        (t * per..((t + 1) * per).min(nv))
                            .map(|i| eval_view(field, sampler, policy, test, background, cfg, i))
                            .collect()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
        });
        let mut rows = Vec::with_capacity(nv);
        for p in parts {
            rows.extend(p?);
        }
        rows
    };
    let k = rows.len() as f64;
    let mean = |f: fn(&ViewRow) -> f64| rows.iter().map(f).sum::<f64>() / k;
    let aggregate = Aggregate {
        views: rows.len(),
        rays: test.num_rays(),
        psnr: mean(|r| r.psnr),
        ssim: mean(|r| r.ssim),
        effective_rate: mean(|r| r.effective_rate),
        mean_low_weight: mean(|r| r.mean_low_weight),
        spacing_variance: mean(|r| r.spacing_variance),
        wall_ms: rows.iter().map(|r| r.wall_ms).sum(),
    };
    Ok(EvalReport {
        config_hash: cfg.hash(),
        sampler,
        n_samples: cfg.env.n_samples,
        per_view: rows,
        aggregate,
    })
}
