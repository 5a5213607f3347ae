//! Heuristic depth samplers used as comparison points for the learned policy.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Uniform,
    Stratified,
    /// Coarse stratified pass of `N/2` plus `N − N/2` inverse-CDF samples.
    Hierarchical,
    Policy,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 4] = [
        SamplerKind::Uniform,
        SamplerKind::Stratified,
        SamplerKind::Hierarchical,
        SamplerKind::Policy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Uniform => "uniform",
            SamplerKind::Stratified => "stratified",
            SamplerKind::Hierarchical => "hierarchical",
            SamplerKind::Policy => "policy",
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown sampler {s}; expected uniform, stratified, hierarchical or policy"))
    }
}

/// Midpoints of `n` equal bins.
pub fn uniform_samples<T: Real>(tn: T, tf: T, n: usize) -> Vec<T> {
    let h = (tf - tn) / T::from_usize(n).unwrap();
    (0..n)
        .map(|i| tn + (T::from_usize(i).unwrap() + T::lit(0.5)) * h)
        .collect()
}

/// One uniform draw per equal bin.
pub fn stratified_samples<T: Real, R: Rng + ?Sized>(tn: T, tf: T, n: usize, rng: &mut R) -> Vec<T> {
    let h = (tf - tn) / T::from_usize(n).unwrap();
    (0..n)
        .map(|i| {
            let u: f64 = rng.random();
            (tn + (T::from_usize(i).unwrap() + T::lit(u)) * h).min(tf)
        })
        .collect()
}

/// Bin edges around sorted coarse depths: the range ends and the midpoints
/// between neighbours.
fn coarse_edges<T: Real>(tn: T, tf: T, coarse: &[T]) -> Vec<T> {
    let half = T::lit(0.5);
    let mut edges = Vec::with_capacity(coarse.len() + 1);
    edges.push(tn);
    edges.extend(coarse.windows(2).map(|w| (w[0] + w[1]) * half));
    edges.push(tf);
    edges
}

/// Draws `n_fine` depths from the piecewise-constant density proportional to
/// `coarse_weights` over the bins around `coarse_depths`, using stratified
/// uniforms, and merges them with the coarse depths. All-zero weights fall
/// back to stratified sampling over the range.
pub fn hierarchical_resample<T: Real, R: Rng + ?Sized>(
    tn: T,
    tf: T,
    coarse_depths: &[T],
    coarse_weights: &[T],
    n_fine: usize,
    rng: &mut R,
) -> Vec<T> {
    assert_eq!(coarse_depths.len(), coarse_weights.len(), "one weight per coarse depth");
    let total: T = coarse_weights.iter().map(|w| w.max(T::zero())).sum();
    let fine = if coarse_depths.is_empty() || !(total > T::zero()) {
        stratified_samples(tn, tf, n_fine, rng)
    } else {
        let edges = coarse_edges(tn, tf, coarse_depths);
        let mut cdf = Vec::with_capacity(coarse_weights.len() + 1);
        cdf.push(T::zero());
        let mut acc = T::zero();
        for w in coarse_weights {
            acc += w.max(T::zero()) / total;
            cdf.push(acc);
        }
        let last = cdf.len() - 1;
        cdf[last] = T::one();
        let step = T::one() / T::from_usize(n_fine.max(1)).unwrap();
        (0..n_fine)
            .map(|j| {
                let u = (T::from_usize(j).unwrap() + T::lit(rng.random::<f64>())) * step;
                let u = u.min(T::one());
                // first bin whose upper cdf reaches u, skipping empty bins
                let b = cdf[1..].partition_point(|&c| c < u).min(coarse_weights.len() - 1);
                let (c0, c1) = (cdf[b], cdf[b + 1]);
                let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { T::lit(0.5) };
                let frac = frac.max(T::zero()).min(T::one());
                edges[b] + frac * (edges[b + 1] - edges[b])
            })
            .collect()
    };
    let mut merged: Vec<T> = coarse_depths.iter().copied().chain(fine).collect();
    merged.sort_by(|a, b| a.partial_cmp(b).expect("finite depths"));
    merged
}

/// Splits a total budget between the coarse and fine passes.
pub fn hierarchical_split(n: usize) -> (usize, usize) {
    let coarse = (n / 2).max(1);
    (coarse, n - coarse)
}
