//! Analytic scenes, pinhole cameras, ray generation and pose-JSON datasets.
//!
//! Scene geometry and ground-truth rendering run in `f64`; rays are cast to
//! the working precision when they enter the field.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::diff::DiffError;
use crate::field::{FieldOutput, GmmColor, RadianceField, VARIANCE_FLOOR};
use crate::image::{Image, ImageError};
use crate::scalar::Real;

pub type Vec3 = [f64; 3];

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(a: Vec3) -> Vec3 {
    let n = dot(a, a).sqrt();
    a.map(|v| v / n)
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error("invalid camera: {0}")]
    Camera(String),
    #[error("non-invertible transform in frame {0}")]
    NonInvertible(String),
    #[error("no views in {0}")]
    NoViews(String),
    #[error("malformed JSON in {path}: {why}")]
    Json { path: String, why: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("unknown preset {0}; expected slab, spheres or boxes")]
    UnknownPreset(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SceneError + '_ {
    move |source| SceneError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    /// `{x : lo ≤ normal·x ≤ hi}`, unbounded laterally.
    Slab { normal: Vec3, lo: f64, hi: f64 },
    Sphere { center: Vec3, radius: f64 },
    /// Axis-aligned box.
    Box { min: Vec3, max: Vec3 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(flatten)]
    pub shape: Shape,
    pub sigma: f64,
    pub color: Vec3,
}

impl Primitive {
    pub fn contains(&self, x: Vec3) -> bool {
        match &self.shape {
            Shape::Slab { normal, lo, hi } => {
                let s = dot(*normal, x);
                *lo <= s && s <= *hi
            }
            Shape::Sphere { center, radius } => {
                let d = sub(x, *center);
                dot(d, d) <= radius * radius
            }
            Shape::Box { min, max } => (0..3).all(|i| min[i] <= x[i] && x[i] <= max[i]),
        }
    }

    /// Parameter interval `[t0, t1]` where `o + t·d` lies inside, if any.
    pub fn ray_interval(&self, o: Vec3, d: Vec3) -> Option<(f64, f64)> {
        let slab_range = |s0: f64, ds: f64, lo: f64, hi: f64| -> Option<(f64, f64)> {
            if ds == 0.0 {
                return (lo <= s0 && s0 <= hi).then_some((f64::NEG_INFINITY, f64::INFINITY));
            }
            let (a, b) = ((lo - s0) / ds, (hi - s0) / ds);
            Some((a.min(b), a.max(b)))
        };
        match &self.shape {
            Shape::Slab { normal, lo, hi } => slab_range(dot(*normal, o), dot(*normal, d), *lo, *hi),
            Shape::Sphere { center, radius } => {
                let oc = sub(o, *center);
                let a = dot(d, d);
                let b = dot(oc, d);
                let c = dot(oc, oc) - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                Some(((-b - s) / a, (-b + s) / a))
            }
            Shape::Box { min, max } => {
                let mut t0 = f64::NEG_INFINITY;
                let mut t1 = f64::INFINITY;
                for i in 0..3 {
                    let (a, b) = slab_range(o[i], d[i], min[i], max[i])?;
                    t0 = t0.max(a);
                    t1 = t1.min(b);
                }
                (t0 <= t1).then_some((t0, t1))
            }
        }
    }

    fn validate(&self) -> Result<(), SceneError> {
        let bad = |why: String| Err(SceneError::Invalid(why));
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("density {} must be finite and non-negative", self.sigma));
        }
        if self.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return bad(format!("color {:?} outside [0, 1]", self.color));
        }
        match &self.shape {
            Shape::Slab { normal, lo, hi } => {
                if (dot(*normal, *normal).sqrt() - 1.0).abs() > 1e-6 || lo > hi {
                    return bad(format!("slab normal {normal:?} range [{lo}, {hi}]"));
                }
            }
            Shape::Sphere { radius, .. } => {
                if !(*radius > 0.0) {
                    return bad(format!("sphere radius {radius}"));
                }
            }
            Shape::Box { min, max } => {
                if (0..3).any(|i| !(min[i] < max[i])) {
                    return bad(format!("box {min:?}..{max:?}"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneOracle {
    pub bounds: [f64; 2],
    pub background: Vec3,
    pub primitives: Vec<Primitive>,
}

impl SceneOracle {
    pub fn new(bounds: [f64; 2], background: Vec3, primitives: Vec<Primitive>) -> Result<Self, SceneError> {
        let s = Self {
            bounds,
            background,
            primitives,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let [tn, tf] = self.bounds;
        if !(tn >= 0.0 && tn < tf && tf.is_finite()) {
            return Err(SceneError::Invalid(format!("bounds [{tn}, {tf}]")));
        }
        self.primitives.iter().try_for_each(Primitive::validate)
    }

    pub fn near(&self) -> f64 {
        self.bounds[0]
    }

    pub fn far(&self) -> f64 {
        self.bounds[1]
    }

    /// Summed density of containing primitives and their density-weighted
    /// mean color; `(0, black)` outside everything.
    pub fn query(&self, x: Vec3) -> (f64, Vec3) {
        let mut sigma = 0.0;
        let mut acc = [0.0; 3];
        for p in self.primitives.iter().filter(|p| p.contains(x)) {
            sigma += p.sigma;
            for c in 0..3 {
                acc[c] += p.sigma * p.color[c];
            }
        }
        if sigma > 0.0 {
            (sigma, acc.map(|v| v / sigma))
        } else {
            (0.0, [0.0; 3])
        }
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self, SceneError> {
        let s: Self = serde_json::from_str(text).map_err(|e| SceneError::Json {
            path: origin.to_string(),
            why: e.to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, SceneError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    pub fn preset(name: &str) -> Result<Self, SceneError> {
        let prim = |shape, sigma, color| Primitive { shape, sigma, color };
        let primitives = match name {
            "slab" => vec![prim(
                Shape::Slab {
                    normal: [0.0, 0.0, 1.0],
                    lo: -0.5,
                    hi: 0.5,
                },
                5.0,
                [0.9, 0.6, 0.2],
            )],
            "spheres" => vec![
                prim(
                    Shape::Sphere {
                        center: [-0.8, 0.0, -0.4],
                        radius: 0.6,
                    },
                    8.0,
                    [0.9, 0.15, 0.1],
                ),
                prim(
                    Shape::Sphere {
                        center: [0.7, 0.3, 0.2],
                        radius: 0.5,
                    },
                    8.0,
                    [0.1, 0.8, 0.2],
                ),
                prim(
                    Shape::Sphere {
                        center: [0.0, -0.6, 0.7],
                        radius: 0.45,
                    },
                    8.0,
                    [0.15, 0.3, 0.95],
                ),
            ],
            "boxes" => vec![
                prim(
                    Shape::Box {
                        min: [-1.0, -0.8, -1.0],
                        max: [1.0, 0.8, 1.0],
                    },
                    0.6,
                    [0.85, 0.85, 0.8],
                ),
                prim(
                    Shape::Box {
                        min: [-0.35, -0.35, -0.35],
                        max: [0.35, 0.35, 0.35],
                    },
                    12.0,
                    [0.8, 0.2, 0.6],
                ),
            ],
            other => return Err(SceneError::UnknownPreset(other.to_string())),
        };
        Self::new([2.0, 6.0], [0.0; 3], primitives)
    }
}

/// Exposes an analytic scene through the field interface: exact density,
/// and the exact color replicated over `components` equal-weight components
/// with the variance floor.
pub struct OracleField<'a> {
    pub oracle: &'a SceneOracle,
    pub components: usize,
}

impl<T: Real> RadianceField<T> for OracleField<'_> {
    fn components(&self) -> usize {
        self.components
    }

    fn query_points(&self, xs: &[[T; 3]], _dirs: &[[T; 3]]) -> Result<Vec<FieldOutput<T>>, DiffError> {
        let k = self.components;
        let w = T::one() / T::from_usize(k).unwrap();
        Ok(xs
            .iter()
            .map(|x| {
                let (sigma, c) = self.oracle.query(x.map(|v| v.to_f64_lossless()));
                let c = c.map(T::lit);
                FieldOutput {
                    sigma: T::lit(sigma),
                    color: GmmColor {
                        pi: vec![w; k],
                        mu: vec![c; k],
                        var: vec![[T::lit(VARIANCE_FLOOR); 3]; k],
                    },
                }
            })
            .collect())
    }
}

pub const PRESETS: [&str; 3] = ["slab", "spheres", "boxes"];

/// A camera ray in working precision.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray<T> {
    pub origin: [T; 3],
    pub dir: [T; 3],
    /// Pixel-center coordinates normalized to `[0, 1]`.
    pub uv: [T; 2],
}

impl<T: Real> Ray<T> {
    pub fn cast<U: Real>(&self) -> Ray<U> {
        let c = |v: T| U::lit(v.to_f64_lossless());
        Ray {
            origin: self.origin.map(c),
            dir: self.dir.map(c),
            uv: self.uv.map(c),
        }
    }

    pub fn at(&self, t: T) -> [T; 3] {
        [0, 1, 2].map(|i| self.origin[i] + t * self.dir[i])
    }
}

/// Pinhole camera. `rotation` is camera-to-world with columns (right, up,
/// back); the camera looks along its local −z.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub position: Vec3,
    pub rotation: [[f64; 3]; 3],
    pub focal: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(position: Vec3, rotation: [[f64; 3]; 3], focal: f64, width: usize, height: usize) -> Result<Self, SceneError> {
        let c = Self {
            position,
            rotation,
            focal,
            width,
            height,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.width == 0 || self.height == 0 || !(self.focal > 0.0 && self.focal.is_finite()) {
            return Err(SceneError::Camera(format!(
                "{}x{} focal {}",
                self.width, self.height, self.focal
            )));
        }
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (d - expect).abs() > 1e-5 {
                    return Err(SceneError::Camera(format!("rotation not orthonormal: {r:?}")));
                }
            }
        }
        Ok(())
    }

    pub fn look_at(position: Vec3, target: Vec3, angle_x: f64, width: usize, height: usize) -> Result<Self, SceneError> {
        let back = normalize(sub(position, target));
        let mut up_hint = [0.0, 1.0, 0.0];
        if dot(back, up_hint).abs() > 0.999 {
            up_hint = [0.0, 0.0, -1.0];
        }
        let right = normalize(cross(up_hint, back));
        let up = cross(back, right);
        let rotation = [0, 1, 2].map(|i| [right[i], up[i], back[i]]);
        Self::new(position, rotation, focal_from_angle(angle_x, width), width, height)
    }

    pub fn angle_x(&self) -> f64 {
        2.0 * (self.width as f64 / (2.0 * self.focal)).atan()
    }

    pub fn optical_axis(&self) -> Vec3 {
        [0, 1, 2].map(|i| -self.rotation[i][2])
    }

    pub fn ray(&self, px: usize, py: usize) -> Ray<f64> {
        let x = (px as f64 + 0.5 - self.width as f64 / 2.0) / self.focal;
        let y = -(py as f64 + 0.5 - self.height as f64 / 2.0) / self.focal;
        let local = [x, y, -1.0];
        let r = &self.rotation;
        let world = [0, 1, 2].map(|i| r[i][0] * local[0] + r[i][1] * local[1] + r[i][2] * local[2]);
        Ray {
            origin: self.position,
            dir: normalize(world),
            uv: [
                (px as f64 + 0.5) / self.width as f64,
                (py as f64 + 0.5) / self.height as f64,
            ],
        }
    }

    /// One ray per pixel, row-major.
    pub fn generate_rays(&self) -> Vec<Ray<f64>> {
        (0..self.height)
            .flat_map(|py| (0..self.width).map(move |px| (px, py)))
            .map(|(px, py)| self.ray(px, py))
            .collect()
    }

    /// 4×4 camera-to-world matrix, row-major.
    pub fn transform_matrix(&self) -> [[f64; 4]; 4] {
        let r = &self.rotation;
        let p = self.position;
        [
            [r[0][0], r[0][1], r[0][2], p[0]],
            [r[1][0], r[1][1], r[1][2], p[1]],
            [r[2][0], r[2][1], r[2][2], p[2]],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }
}

pub fn focal_from_angle(angle_x: f64, width: usize) -> f64 {
    width as f64 / (2.0 * (angle_x / 2.0).tan())
}

/// Emission-absorption rendering of an analytic scene over `n_dense` equal
/// intervals of `[t_n, t_f]`. Each interval carries its exact optical depth
/// from the analytic ray/primitive overlaps and the depth-weighted mean color
/// of what it overlaps; the background is added under the residual
/// transmittance.
pub fn reference_render(oracle: &SceneOracle, ray: &Ray<f64>, n_dense: usize) -> Vec3 {
    let [tn, tf] = oracle.bounds;
    let h = (tf - tn) / n_dense as f64;
    let spans: Vec<(f64, f64, &Primitive)> = oracle
        .primitives
        .iter()
        .filter(|p| p.sigma > 0.0)
        .filter_map(|p| {
            let (a, b) = p.ray_interval(ray.origin, ray.dir)?;
            let (a, b) = (a.max(tn), b.min(tf));
            (a < b).then_some((a, b, p))
        })
        .collect();
    let mut color = [0.0; 3];
    let mut trans = 1.0;
    if !spans.is_empty() {
        for i in 0..n_dense {
            let (lo, hi) = (tn + i as f64 * h, tn + (i + 1) as f64 * h);
            let mut tau = 0.0;
            let mut acc = [0.0; 3];
            for &(a, b, p) in &spans {
                let overlap = (b.min(hi) - a.max(lo)).max(0.0);
                if overlap > 0.0 {
                    let t = p.sigma * overlap;
                    tau += t;
                    for c in 0..3 {
                        acc[c] += t * p.color[c];
                    }
                }
            }
            if tau > 0.0 {
                let alpha = -(-tau).exp_m1();
                for c in 0..3 {
                    color[c] += trans * alpha * acc[c] / tau;
                }
                trans *= (-tau).exp();
            }
        }
    }
    [0, 1, 2].map(|c| (color[c] + trans * oracle.background[c]).clamp(0.0, 1.0))
}

pub fn render_view(oracle: &SceneOracle, camera: &Camera, n_dense: usize) -> Image<f64> {
    let mut img = Image::new(camera.width, camera.height);
    for py in 0..camera.height {
        for px in 0..camera.width {
            img.set_pixel(px, py, reference_render(oracle, &camera.ray(px, py), n_dense));
        }
    }
    img
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub camera: Camera,
    pub image: Image<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewDataset {
    pub split: Split,
    pub bounds: [f64; 2],
    pub views: Vec<View>,
}

impl ViewDataset {
    pub fn num_rays(&self) -> usize {
        self.views.iter().map(|v| v.image.pixels()).sum()
    }

    /// Ray and ground-truth color for a global pixel index.
    pub fn ray(&self, mut index: usize) -> (Ray<f64>, Vec3) {
        for v in &self.views {
            let n = v.image.pixels();
            if index < n {
                let (px, py) = (index % v.image.width, index / v.image.width);
                return (v.camera.ray(px, py), v.image.pixel(px, py));
            }
            index -= n;
        }
        panic!("ray index out of range");
    }
}

/// Cameras on a horizontal ring at the given elevation, all aimed at the
/// origin. `arc` below 2π spreads views evenly over `[−arc/2, arc/2]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ring {
    pub radius: f64,
    pub elevation: f64,
    pub arc: f64,
    pub angle_x: f64,
}

impl Ring {
    pub fn for_preset(name: &str) -> Self {
        let (elevation, arc) = match name {
            "slab" => (0.0, std::f64::consts::FRAC_PI_2),
            _ => (0.35, std::f64::consts::TAU),
        };
        Self {
            radius: 4.0,
            elevation,
            arc,
            angle_x: 0.69,
        }
    }

    /// `n` cameras; `offset` in view units shifts the whole ring (test views
    /// use 0.5 to fall between the training views).
    pub fn cameras(&self, n: usize, offset: f64, width: usize, height: usize) -> Result<Vec<Camera>, SceneError> {
        let full = self.arc >= std::f64::consts::TAU - 1e-9;
        (0..n)
            .map(|i| {
                let s = i as f64 + offset;
                let az = if full {
                    self.arc * s / n as f64
                } else if n == 1 {
                    self.arc * (offset - 0.5).clamp(-0.5, 0.5)
                } else {
                    self.arc * (s / (n - 1) as f64 - 0.5)
                };
                let (ce, se) = (self.elevation.cos(), self.elevation.sin());
                let pos = [
                    self.radius * ce * az.sin(),
                    self.radius * se,
                    self.radius * ce * az.cos(),
                ];
                Camera::look_at(pos, [0.0; 3], self.angle_x, width, height)
            })
            .collect()
    }
}

pub fn synthesize_dataset(oracle: &SceneOracle, cameras: &[Camera], n_dense: usize, split: Split) -> ViewDataset {
    ViewDataset {
        split,
        bounds: oracle.bounds,
        views: cameras
            .iter()
            .map(|c| View {
                camera: c.clone(),
                image: render_view(oracle, c, n_dense),
            })
            .collect(),
    }
}

pub fn transforms_name(split: Split) -> String {
    format!("transforms_{}.json", split.name())
}

/// Writes `transforms_<split>.json` and `<split>/r_<i>.ppm` under `dir`.
pub fn write_dataset(dir: &Path, ds: &ViewDataset) -> Result<(), SceneError> {
    let sub_dir = dir.join(ds.split.name());
    fs::create_dir_all(&sub_dir).map_err(io_err(&sub_dir))?;
    let angle_x = ds.views.first().map_or(0.0, |v| v.camera.angle_x());
    let mut frames = Vec::with_capacity(ds.views.len());
    for (i, v) in ds.views.iter().enumerate() {
        let rel = format!("./{}/r_{i}.ppm", ds.split.name());
        v.image.write_ppm(&dir.join(&rel))?;
        frames.push(json!({
            "file_path": rel,
            "transform_matrix": v.camera.transform_matrix(),
        }));
    }
    let doc = json!({
        "camera_angle_x": angle_x,
        "near": ds.bounds[0],
        "far": ds.bounds[1],
        "frames": frames,
    });
    let path = dir.join(transforms_name(ds.split));
    fs::write(&path, serde_json::to_string_pretty(&doc).unwrap() + "\n").map_err(io_err(&path))
}

/// Reads a NeRF-style pose file. Image paths without an extension get
/// `.ppm`. Bounds come from optional `near`/`far` keys, else `default_bounds`.
pub fn load_pose_json(
    path: &Path,
    split: Split,
    downsample: usize,
    default_bounds: [f64; 2],
) -> Result<ViewDataset, SceneError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let shown = path.display().to_string();
    let malformed = |why: &str| SceneError::Json {
        path: shown.clone(),
        why: why.to_string(),
    };
    let doc: Value = serde_json::from_str(&text).map_err(|e| malformed(&e.to_string()))?;
    let angle_x = doc["camera_angle_x"]
        .as_f64()
        .ok_or_else(|| malformed("missing numeric camera_angle_x"))?;
    if !(angle_x > 0.0 && angle_x < std::f64::consts::PI) {
        return Err(malformed("camera_angle_x must lie in (0, π)"));
    }
    let frames = doc["frames"].as_array().ok_or_else(|| malformed("missing frames array"))?;
    if frames.is_empty() {
        return Err(SceneError::NoViews(shown));
    }
    let bounds = match (doc["near"].as_f64(), doc["far"].as_f64()) {
        (Some(n), Some(f)) => [n, f],
        _ => default_bounds,
    };
    let base = path.parent().unwrap_or(Path::new("."));
    let mut views = Vec::with_capacity(frames.len());
    for (i, fr) in frames.iter().enumerate() {
        let rel = fr["file_path"]
            .as_str()
            .ok_or_else(|| malformed(&format!("frame {i} lacks file_path")))?;
        let m = parse_matrix(&fr["transform_matrix"]).ok_or_else(|| malformed(&format!("frame {i} transform_matrix must be 4x4")))?;
        let mut img_path: PathBuf = base.join(rel);
        if img_path.extension().is_none() {
            img_path.set_extension("ppm");
        }
        let image = Image::<f64>::read(&img_path)?.downsample(downsample)?;
        let camera = camera_from_matrix(&m, angle_x, image.width, image.height, &format!("{i} ({rel})"))?;
        views.push(View { camera, image });
    }
    Ok(ViewDataset { split, bounds, views })
}

fn parse_matrix(v: &Value) -> Option<[[f64; 4]; 4]> {
    let rows = v.as_array()?;
    if rows.len() != 4 {
        return None;
    }
    let mut m = [[0.0; 4]; 4];
    for (i, r) in rows.iter().enumerate() {
        let r = r.as_array()?;
        if r.len() != 4 {
            return None;
        }
        for (j, x) in r.iter().enumerate() {
            m[i][j] = x.as_f64()?;
        }
    }
    Some(m)
}

fn camera_from_matrix(m: &[[f64; 4]; 4], angle_x: f64, width: usize, height: usize, frame: &str) -> Result<Camera, SceneError> {
    let r = [0, 1, 2].map(|i| [m[i][0], m[i][1], m[i][2]]);
    let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
    if det.abs() < 1e-9 || m[3] != [0.0, 0.0, 0.0, 1.0] {
        return Err(SceneError::NonInvertible(frame.to_string()));
    }
    Camera::new(
        [m[0][3], m[1][3], m[2][3]],
        r,
        focal_from_angle(angle_x, width),
        width,
        height,
    )
}

/// Preset scene, default ring, train and test splits.
pub struct GeneratedScene {
    pub oracle: SceneOracle,
    pub train: ViewDataset,
    pub test: ViewDataset,
}

pub fn generate_preset(
    name: &str,
    width: usize,
    height: usize,
    n_train: usize,
    n_test: usize,
    n_dense: usize,
) -> Result<GeneratedScene, SceneError> {
    let oracle = SceneOracle::preset(name)?;
    let ring = Ring::for_preset(name);
    let train = synthesize_dataset(&oracle, &ring.cameras(n_train, 0.0, width, height)?, n_dense, Split::Train);
    let test = synthesize_dataset(&oracle, &ring.cameras(n_test, 0.5, width, height)?, n_dense, Split::Test);
    Ok(GeneratedScene { oracle, train, test })
}

/// Writes `scene.json` plus both splits.
pub fn write_generated(dir: &Path, g: &GeneratedScene) -> Result<(), SceneError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let p = dir.join("scene.json");
    fs::write(&p, g.oracle.to_json() + "\n").map_err(io_err(&p))?;
    write_dataset(dir, &g.train)?;
    write_dataset(dir, &g.test)
}
