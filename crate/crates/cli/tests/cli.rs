use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use raysac::image::Image;
use raysac::pipeline::{load_checkpoint, load_scene_dir, TrainConfig};
use raysac::scenes::{load_pose_json, Split};

fn raysac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_raysac"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = raysac(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small networks so each command finishes in well under a second.
const TINY: [&str; 12] = [
    "--set",
    "field.hidden_layers=2",
    "--set",
    "field.hidden_width=16",
    "--set",
    "sac.hidden=[16,16]",
    "--set",
    "sac.batch_size=16",
    "--set",
    "sac.warmup_steps=32",
    "--set",
    "batch_rays=32",
];

fn gen(dir: &Path, preset: &str, size: &str) -> PathBuf {
    let out = dir.join(preset);
    ok(&[
        "gen-scene",
        "--preset",
        preset,
        "--out",
        p(&out),
        "--width",
        size,
        "--height",
        size,
        "--train-views",
        "3",
        "--test-views",
        "1",
        "--dense",
        "64",
    ]);
    out
}

fn pretrain(scene: &Path, out: &Path, iters: &str, extra: &[&str]) -> Output {
    let mut args = vec!["pretrain", "--scene-dir", p(scene), "--out", p(out), "--stage1-iters", iters, "--n-samples", "8"];
    args.extend(TINY);
    args.extend(extra);
    raysac(&args)
}

#[test]
fn slab_center_pixel_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let scene = gen(dir.path(), "slab", "16");
    let ds = load_pose_json(&scene.join("transforms_test.json"), Split::Test, 1, [2.0, 6.0]).unwrap();
    let v = &ds.views[0];
    let (px, py) = (8, 8);
    let ray = v.camera.ray(px, py);
    // the ray crosses |z| ≤ 0.5 over a segment clipped to the depth bounds
    let (a, b) = ((-0.5 - ray.origin[2]) / ray.dir[2], (0.5 - ray.origin[2]) / ray.dir[2]);
    let (t0, t1) = (a.min(b).max(2.0), a.max(b).min(6.0));
    let opacity = 1.0 - (-5.0 * (t1 - t0).max(0.0)).exp();
    let got = v.image.pixel(px, py);
    for (ch, c) in [0.9, 0.6, 0.2].iter().enumerate() {
        assert!((got[ch] - c * opacity).abs() <= 1e-2, "{got:?} vs {}", c * opacity);
    }
}

#[test]
fn generated_scene_round_trips_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let scene = gen(dir.path(), "spheres", "12");
    let data = load_scene_dir(&scene).unwrap();
    assert_eq!(data.train.views.len(), 3);
    assert_eq!(data.test.views.len(), 1);
    let first = fs::read(scene.join("train/r_1.ppm")).unwrap();
    let json = fs::read(scene.join("transforms_train.json")).unwrap();
    gen(dir.path(), "spheres", "12");
    assert_eq!(fs::read(scene.join("train/r_1.ppm")).unwrap(), first);
    assert_eq!(fs::read(scene.join("transforms_train.json")).unwrap(), json);
}

#[test]
fn unknown_preset_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = raysac(&["gen-scene", "--preset", "torus", "--out", p(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("torus"));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(raysac(&["pretrain"]).status.code(), Some(2));
    assert_eq!(raysac(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn zero_iteration_pretrain_writes_initialization_and_header() {
    let dir = tempfile::tempdir().unwrap();
    let scene = gen(dir.path(), "slab", "12");
    let run = dir.path().join("run");
    let out = pretrain(&scene, &run, "0", &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(run.join("stage1_metrics.csv")).unwrap();
    assert_eq!(csv, "iter,wall_ms,loss,psnr,effective_rate\n");
    let ck = load_checkpoint(&run.join("field.ckpt")).unwrap();
    let cfg = TrainConfig::from_flat(ck.config.as_object().unwrap()).unwrap();
    let init = raysac::field::FieldModel::<f32>::new(cfg.field, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(cfg.seed));
    assert_eq!(ck.to_store::<f32>().named_values(), init.params.named_values());
    let resolved = fs::read_to_string(run.join("run_config.json")).unwrap();
    assert!(resolved.contains("\"stage1_iters\": 0"));
}

#[test]
fn config_file_must_be_complete() {
    let dir = tempfile::tempdir().unwrap();
    let scene = gen(dir.path(), "slab", "12");
    let cfg_path = dir.path().join("cfg.json");
    ok(&["default-config", "--out", p(&cfg_path)]);
    let mut flat: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(&fs::read_to_string(&cfg_path).unwrap()).unwrap();
    flat.remove("env.lambda_c");
    fs::write(&cfg_path, serde_json::to_string(&flat).unwrap()).unwrap();
    let out = pretrain(&scene, &dir.path().join("run"), "0", &["--config", p(&cfg_path)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("env.lambda_c"));
}

#[test]
fn policy_training_rendering_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let scene = gen(dir.path(), "spheres", "12");
    let run = dir.path().join("run");
    let out = pretrain(&scene, &run, "4", &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let field = run.join("field.ckpt");

    // the checkpoint was trained with 8 samples per ray
    let bad = raysac(&[
        "train-policy", "--field-ckpt", p(&field), "--scene-dir", p(&scene), "--out", p(&run), "--n-samples", "16",
    ]);
    assert_eq!(bad.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("env.n_samples"));

    let train = |out: &Path| {
        ok(&[
            "train-policy", "--field-ckpt", p(&field), "--scene-dir", p(&scene), "--out", p(out),
            "--stage2-steps", "96", "--set", "log_every=2", "--set", "env.episode_len=3",
        ])
    };
    let (a, b) = (dir.path().join("pa"), dir.path().join("pb"));
    train(&a);
    train(&b);
    let csv = fs::read_to_string(a.join("stage2_metrics.csv")).unwrap();
    assert_eq!(csv, fs::read_to_string(b.join("stage2_metrics.csv")).unwrap());
    assert!(csv.starts_with("iter,wall_ms,loss,r_q,r_e,r_c,r_total,psnr,effective_rate,alpha,entropy\n"));
    assert!(csv.lines().count() >= 4);

    let img = dir.path().join("view.ppm");
    let no_policy = raysac(&[
        "render", "--field-ckpt", p(&field), "--scene-dir", p(&scene), "--sampler", "policy", "--out", p(&img),
    ]);
    assert_eq!(no_policy.status.code(), Some(2));
    let policy = a.join("policy.ckpt");
    ok(&[
        "render", "--field-ckpt", p(&field), "--scene-dir", p(&scene), "--sampler", "policy",
        "--policy-ckpt", p(&policy), "--out", p(&img),
    ]);
    let bytes = fs::read(&img).unwrap();
    assert!(bytes.starts_with(b"P6"));
    let decoded = Image::<f64>::decode_ppm(&bytes, "view").unwrap();
    assert_eq!((decoded.width, decoded.height), (12, 12));

    let rep = dir.path().join("report.json");
    ok(&[
        "evaluate", "--field-ckpt", p(&field), "--scene-dir", p(&scene), "--sampler", "hierarchical", "--out", p(&rep),
    ]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&rep).unwrap()).unwrap();
    let rows = v["per_view"].as_array().unwrap();
    let mean = rows.iter().map(|r| r["psnr"].as_f64().unwrap()).sum::<f64>() / rows.len() as f64;
    assert!((v["aggregate"]["psnr"].as_f64().unwrap() - mean).abs() < 1e-9);
    assert_eq!(v["config_hash"].as_str().unwrap().len(), 64);

    let svg = dir.path().join("curves.svg");
    ok(&[
        "report", "--metrics", p(&a.join("stage2_metrics.csv")), "--out", p(&svg), "--columns", "r_total,alpha,psnr",
    ]);
    assert_eq!(fs::read_to_string(&svg).unwrap().matches("<polyline").count(), 3);
}

#[test]
fn report_on_empty_csv_fails() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("m.csv");
    fs::write(&csv, "iter,wall_ms,loss\n").unwrap();
    let out = raysac(&["report", "--metrics", p(&csv), "--out", p(&dir.path().join("x.svg"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no data rows"));
}
