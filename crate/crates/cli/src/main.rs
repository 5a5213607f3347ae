//! Command-line driver: scene generation, the two training stages,
//! rendering, evaluation and training-curve reports.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use raysac::baselines::SamplerKind;
use raysac::pipeline::{
    evaluate, field_from_checkpoint, field_to_checkpoint, load_checkpoint, load_scene_dir, parse_metrics_csv,
    policy_from_checkpoint, policy_to_checkpoint, render_svg, render_with_sampler, save_checkpoint, stage1_pretrain,
    stage2_train_policy, PipelineError, TrainConfig,
};
use raysac::scenes::{generate_preset, write_generated};

#[derive(Parser)]
#[command(name = "raysac", version, about = "Learned ray sampling for small radiance fields")]
struct Cli {
    /// Worker threads for evaluation (1 keeps every run reproducible).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a preset scene with train and test views.
    GenScene {
        #[arg(long)]
        preset: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 20)]
        train_views: usize,
        #[arg(long, default_value_t = 4)]
        test_views: usize,
        /// Reference quadrature intervals per ray.
        #[arg(long, default_value_t = 256)]
        dense: usize,
    },
    /// Stage 1: fit the radiance field.
    Pretrain {
        #[arg(long)]
        scene_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Stage 2: train the sampling policy against a frozen field.
    TrainPolicy {
        #[arg(long)]
        field_ckpt: PathBuf,
        #[arg(long)]
        scene_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Render one test view to a PPM image.
    Render {
        #[arg(long)]
        field_ckpt: PathBuf,
        #[arg(long)]
        scene_dir: PathBuf,
        #[arg(long)]
        sampler: SamplerKind,
        #[arg(long)]
        policy_ckpt: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        view: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Render every test view and write a JSON report.
    Evaluate {
        #[arg(long)]
        field_ckpt: PathBuf,
        #[arg(long)]
        scene_dir: PathBuf,
        #[arg(long)]
        sampler: SamplerKind,
        #[arg(long)]
        policy_ckpt: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Plot metrics CSV columns as SVG polylines.
    Report {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated columns; defaults to every column except iter and wall_ms.
        #[arg(long, value_delimiter = ',')]
        columns: Vec<String>,
    },
    /// Print or write the default config as flat JSON.
    DefaultConfig {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Default)]
struct ConfigArgs {
    /// Complete flat JSON config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    stage1_iters: Option<usize>,
    #[arg(long)]
    stage2_steps: Option<usize>,
    /// Samples per ray (`env.n_samples`).
    #[arg(long)]
    n_samples: Option<usize>,
    /// Any config key, as `dotted.key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

enum Failure {
    Usage(String),
    Pipeline(PipelineError),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::Pipeline(e)
    }
}

type CmdResult = Result<(), Failure>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |source| {
        Failure::Pipeline(PipelineError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

fn read_config_file(path: &Path) -> Result<TrainConfig, Failure> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    let flat = v
        .as_object()
        .ok_or_else(|| PipelineError::Config(format!("{} must hold a JSON object", path.display())))?;
    Ok(TrainConfig::from_flat(flat)?)
}

impl ConfigArgs {
    /// File (or `base`) first, then flags.
    fn resolve(&self, base: TrainConfig) -> Result<TrainConfig, Failure> {
        let mut cfg = match &self.config {
            Some(p) => read_config_file(p)?,
            None => base,
        };
        let mut set = |k: &str, v: String| -> Result<(), Failure> {
            cfg = cfg.with_override(k, &v)?;
            Ok(())
        };
        if let Some(s) = self.seed {
            set("seed", s.to_string())?;
        }
        if let Some(s) = self.stage1_iters {
            set("stage1_iters", s.to_string())?;
        }
        if let Some(s) = self.stage2_steps {
            set("stage2_steps", s.to_string())?;
        }
        if let Some(n) = self.n_samples {
            set("env.n_samples", n.to_string())?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got {kv}")))?;
            set(k.trim(), v.trim().to_string())?;
        }
        Ok(cfg)
    }
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

fn load_field(path: &Path) -> Result<(raysac::field::FieldModel<f32>, TrainConfig), Failure> {
    let ck = load_checkpoint(path).map_err(PipelineError::from)?;
    Ok(field_from_checkpoint(&ck)?)
}

fn load_policy(
    sampler: SamplerKind,
    path: Option<&Path>,
) -> Result<Option<(raysac::sac::GaussianPolicy<f32>, TrainConfig)>, Failure> {
    match (sampler, path) {
        (SamplerKind::Policy, None) => Err(Failure::Usage("--sampler policy requires --policy-ckpt".into())),
        (_, Some(p)) => {
            let ck = load_checkpoint(p).map_err(PipelineError::from)?;
            Ok(Some(policy_from_checkpoint(&ck)?))
        }
        (_, None) => Ok(None),
    }
}

/// Settings that must agree between a field checkpoint and a run using it.
/// Rendering may change the sample count; policy training may not.
fn check_compatible(ckpt: &TrainConfig, run: &TrainConfig, what: &str, same_n: bool) -> CmdResult {
    let a = ckpt.to_flat();
    let b = run.to_flat();
    let keys = a
        .keys()
        .filter(|k| k.starts_with("field.") || *k == "env.components" || (same_n && *k == "env.n_samples"));
    for k in keys {
        if a[k] != b[k] {
            return Err(PipelineError::Config(format!("{k} is {} in the {what} but {} for this run", a[k], b[k])).into());
        }
    }
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    let threads = cli.threads.max(1);
    match cli.cmd {
        Command::GenScene {
            preset,
            out,
            width,
            height,
            train_views,
            test_views,
            dense,
        } => {
            let g = generate_preset(&preset, width, height, train_views, test_views, dense).map_err(PipelineError::from)?;
            write_generated(&out, &g).map_err(PipelineError::from)?;
            println!("wrote {} ({} train, {} test views)", out.display(), train_views, test_views);
        }
        Command::Pretrain { scene_dir, out, cfg } => {
            let cfg = cfg.resolve(TrainConfig::default())?;
            let scene = load_scene_dir(&scene_dir)?;
            fs::create_dir_all(&out).map_err(io_err(&out))?;
            write_text(&out.join("run_config.json"), &cfg.to_flat_json())?;
            match stage1_pretrain(&scene.train, scene.background, &cfg, Some(&out.join("stage1_metrics.csv"))) {
                Ok(o) => {
                    let p = out.join("field.ckpt");
                    save_checkpoint(&p, &field_to_checkpoint(&o.field, &cfg)).map_err(PipelineError::from)?;
                    println!("wrote {}", p.display());
                }
                Err(PipelineError::Diverged {
                    stage,
                    iter,
                    why,
                    last_good,
                }) => {
                    if let Some(ck) = last_good {
                        let p = out.join("field.last_good.ckpt");
                        save_checkpoint(&p, &ck).map_err(PipelineError::from)?;
                        eprintln!("saved last finite parameters to {}", p.display());
                    }
                    return Err(PipelineError::Diverged {
                        stage,
                        iter,
                        why,
                        last_good: None,
                    }
                    .into());
                }
                Err(e) => return Err(e.into()),
            }
        }
        Command::TrainPolicy {
            field_ckpt,
            scene_dir,
            out,
            cfg,
        } => {
            let (field, field_cfg) = load_field(&field_ckpt)?;
            let cfg = cfg.resolve(field_cfg.clone())?;
            check_compatible(&field_cfg, &cfg, "field checkpoint", true)?;
            let scene = load_scene_dir(&scene_dir)?;
            fs::create_dir_all(&out).map_err(io_err(&out))?;
            write_text(&out.join("run_config.json"), &cfg.to_flat_json())?;
            let o = stage2_train_policy(&field, &scene.train, scene.background, &cfg, Some(&out.join("stage2_metrics.csv")))?;
            let p = out.join("policy.ckpt");
            save_checkpoint(&p, &policy_to_checkpoint(&o.agent.policy, &cfg)).map_err(PipelineError::from)?;
            println!("wrote {} after {} transitions and {} updates", p.display(), o.transitions, o.updates);
        }
        Command::Render {
            field_ckpt,
            scene_dir,
            sampler,
            policy_ckpt,
            view,
            out,
            cfg,
        } => {
            let policy = load_policy(sampler, policy_ckpt.as_deref())?;
            let (field, field_cfg) = load_field(&field_ckpt)?;
            let base = policy.as_ref().map_or(field_cfg.clone(), |p| p.1.clone());
            let cfg = cfg.resolve(base)?;
            check_compatible(&field_cfg, &cfg, "field checkpoint", false)?;
            let scene = load_scene_dir(&scene_dir)?;
            let v = scene.test.views.get(view).ok_or_else(|| {
                Failure::Usage(format!("--view {view} out of range; the test split has {} views", scene.test.views.len()))
            })?;
            let r = render_with_sampler(
                &field,
                &v.camera,
                Some(&v.image),
                scene.test.bounds,
                scene.background,
                sampler,
                policy.as_ref().map(|p| &p.0),
                &cfg,
                cfg.seed,
            )?;
            r.image.write_ppm(&out).map_err(PipelineError::from)?;
            println!(
                "wrote {} (effective rate {:.4}, mean low-weight samples {:.2})",
                out.display(),
                r.effective_rate,
                r.mean_low_weight
            );
        }
        Command::Evaluate {
            field_ckpt,
            scene_dir,
            sampler,
            policy_ckpt,
            out,
            cfg,
        } => {
            let policy = load_policy(sampler, policy_ckpt.as_deref())?;
            let (field, field_cfg) = load_field(&field_ckpt)?;
            let base = policy.as_ref().map_or(field_cfg.clone(), |p| p.1.clone());
            let cfg = cfg.resolve(base)?;
            check_compatible(&field_cfg, &cfg, "field checkpoint", false)?;
            let scene = load_scene_dir(&scene_dir)?;
            let rep = evaluate(
                &field,
                sampler,
                policy.as_ref().map(|p| &p.0),
                &scene.test,
                scene.background,
                &cfg,
                threads,
            )?;
            write_text(&out, &rep.to_json())?;
            let cfg_path = out.with_extension("config.json");
            write_text(&cfg_path, &cfg.to_flat_json())?;
            println!(
                "{}: psnr {:.2} dB, ssim {:.4}, effective rate {:.4}",
                sampler, rep.aggregate.psnr, rep.aggregate.ssim, rep.aggregate.effective_rate
            );
        }
        Command::Report { metrics, out, columns } => {
            let text = fs::read_to_string(&metrics).map_err(io_err(&metrics))?;
            let m = parse_metrics_csv(&text)?;
            let columns = if columns.is_empty() {
                m.columns.iter().filter(|c| *c != "iter" && *c != "wall_ms").cloned().collect()
            } else {
                columns
            };
            write_text(&out, &render_svg(&m, &columns)?)?;
            println!("wrote {}", out.display());
        }
        Command::DefaultConfig { out } => {
            let text = TrainConfig::default().to_flat_json();
            match out {
                Some(p) => write_text(&p, &text)?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Pipeline(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_divergence() { 4 } else { 3 })
        }
    }
}
