//! Analytic-versus-finite-difference gradient verification.
//!
//! The analytic gradient is taken on a graph over the scalar type under test;
//! the central differences are always evaluated in `f64` so the oracle's own
//! rounding stays well below the tolerance being checked.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Real;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use super::DiffError;

/// A scalar-valued function of several tensor inputs, expressible over any
/// [`Real`] so it can be evaluated at two precisions.
pub trait Objective {
    /// The point at which gradients are compared.
    fn inputs(&self) -> Vec<Tensor<f64>>;

    fn eval<T: Real>(&self, g: &mut Graph<T>, inputs: &[Var]) -> Result<Var, DiffError>;
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Central difference half-step.
    pub step: f64,
    pub tolerance: f64,
    /// Coordinates whose gradients are below this fraction of the largest
    /// gradient magnitude are compared on that absolute scale instead.
    pub relative_floor: f64,
    /// Random subset of coordinates to probe per input; `None` probes all.
    pub max_coords_per_input: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            tolerance: 1e-3,
            relative_floor: 1e-2,
            max_coords_per_input: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` of the worst disagreement.
    pub worst: (usize, usize),
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub coords_checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

fn loss_at<O: Objective>(obj: &O, inputs: &[Tensor<f64>]) -> Result<f64, DiffError> {
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = obj.eval(&mut g, &vars)?;
    if g.value(out).len() != 1 {
        return Err(DiffError::Shape("objective must be scalar".into()));
    }
    Ok(g.value(out).item())
}

/// Compares the analytic gradient (computed in `T`) with central finite
/// differences of step `config.step`.
pub fn gradient_check<T: Real, O: Objective>(
    obj: &O,
    config: GradCheckConfig,
) -> Result<GradCheckReport, DiffError> {
    let point = obj.inputs();
    let mut g = Graph::<T>::new();
    let vars: Vec<Var> = point.iter().map(|t| g.leaf(t.cast(), true)).collect();
    let loss = obj.eval(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(&point)
        .map(|(v, p)| {
            g.grad(*v)
                .map(|t| t.cast())
                .unwrap_or_else(|| Tensor::zeros(p.shape()))
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut probes = vec![];
    for (i, p) in point.iter().enumerate() {
        let coords: Vec<usize> = match config.max_coords_per_input {
            Some(k) if k < p.len() => {
                let mut c = sample(&mut rng, p.len(), k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..p.len()).collect(),
        };
        for c in coords {
            let mut plus = point.clone();
            plus[i].data_mut()[c] += config.step;
            let mut minus = point.clone();
            minus[i].data_mut()[c] -= config.step;
            let numeric = (loss_at(obj, &plus)? - loss_at(obj, &minus)?) / (2.0 * config.step);
            probes.push((i, c, analytic[i].data()[c], numeric));
        }
    }
    let scale = probes
        .iter()
        .fold(0.0f64, |m, p| m.max(p.2.abs()).max(p.3.abs()));
    let floor = (config.relative_floor * scale).max(1e-12);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        coords_checked: probes.len(),
        tolerance: config.tolerance,
        passed: true,
    };
    for (i, c, a, n) in probes {
        let err = (a - n).abs() / a.abs().max(n.abs()).max(floor);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = (i, c);
            report.analytic_at_worst = a;
            report.numeric_at_worst = n;
        }
    }
    report.passed = report.max_rel_error <= config.tolerance;
    Ok(report)
}
