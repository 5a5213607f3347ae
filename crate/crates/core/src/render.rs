//! Discrete volume rendering, ray-level mixture compositing, and image
//! quality metrics.

use thiserror::Error;

use crate::diff::{DiffError, Graph, Tensor, Var};
use crate::field::{gmm_moments, mixture_nll, FieldVars, GmmColor, VARIANCE_FLOOR};
use crate::image::Image;
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("depths must be non-decreasing and within the far bound: {0}")]
    NonAscending(String),
    #[error("image dimensions differ: {0}")]
    Dimensions(String),
    #[error("image too small for an 11x11 SSIM window: {0}x{1}")]
    TooSmall(usize, usize),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// Samples along one ray with their quadrature quantities.
#[derive(Clone, Debug, PartialEq)]
pub struct RaySampleBatch<T> {
    pub depths: Vec<T>,
    pub sigma: Vec<T>,
    pub colors: Vec<GmmColor<T>>,
    pub delta: Vec<T>,
    pub alpha: Vec<T>,
    /// Transmittance reaching each sample; `trans[0] == 1`.
    pub trans: Vec<T>,
    pub weights: Vec<T>,
    /// Transmittance past the last sample, `T_{N+1}`.
    pub residual: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderResult<T> {
    pub color: [T; 3],
    pub ray_variance: [T; 3],
    pub weights: Vec<T>,
    pub residual_transmittance: T,
}

/// Quadrature of the emission-absorption integral. The final interval runs
/// from the last sample to `t_far`.
pub fn composite<T: Real>(
    depths: &[T],
    sigmas: &[T],
    colors: &[GmmColor<T>],
    t_far: T,
) -> Result<RaySampleBatch<T>, RenderError> {
    let n = depths.len();
    if n == 0 || sigmas.len() != n || colors.len() != n {
        return Err(RenderError::NonAscending(format!(
            "{n} depths, {} densities, {} colors",
            sigmas.len(),
            colors.len()
        )));
    }
    if depths.windows(2).any(|w| w[1] < w[0]) || depths[n - 1] > t_far {
        return Err(RenderError::NonAscending(format!("{depths:?}")));
    }
    let delta: Vec<T> = (0..n)
        .map(|i| if i + 1 < n { depths[i + 1] - depths[i] } else { t_far - depths[i] })
        .collect();
    let mut alpha = Vec::with_capacity(n);
    let mut trans = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut t = T::one();
    for i in 0..n {
        let a = -(-sigmas[i] * delta[i]).exp_m1();
        let w = t * a;
        alpha.push(a);
        trans.push(t);
        weights.push(w);
        t -= w;
        t = t.max(T::zero());
    }
    Ok(RaySampleBatch {
        depths: depths.to_vec(),
        sigma: sigmas.to_vec(),
        colors: colors.to_vec(),
        delta,
        alpha,
        trans,
        weights,
        residual: t,
    })
}

impl<T: Real> RaySampleBatch<T> {
    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }

    /// `Σ w_i E[c_i]`, clipped to `[0, 1]`, with no background term.
    pub fn color(&self) -> [T; 3] {
        let mut c = [T::zero(); 3];
        for (w, col) in self.weights.iter().zip(&self.colors) {
            let e = col.expected();
            for ch in 0..3 {
                c[ch] += *w * e[ch];
            }
        }
        c.map(|v| v.max(T::zero()).min(T::one()))
    }

    /// Color over a uniform background: `C + T_{N+1} · bg`.
    pub fn color_over(&self, background: [T; 3]) -> [T; 3] {
        let c = self.color();
        [0, 1, 2].map(|ch| (c[ch] + self.residual * background[ch]).min(T::one()))
    }

    /// Ray-level mixture: component means `Σ w_i μ_{k,i}`, variances
    /// `Σ w_i² σ²_{k,i}` (plus the variance floor), and weights proportional
    /// to `Σ w_i π_{k,i}`.
    pub fn ray_mixture(&self) -> GmmColor<T> {
        let k = self.colors.first().map_or(1, GmmColor::components);
        let eps = T::lit(RAY_WEIGHT_EPS);
        let mut pi = vec![eps / T::from_usize(k).unwrap(); k];
        let mut mu = vec![[T::zero(); 3]; k];
        let mut var = vec![[T::lit(VARIANCE_FLOOR); 3]; k];
        for (w, col) in self.weights.iter().zip(&self.colors) {
            for c in 0..k {
                pi[c] += *w * col.pi[c];
                for ch in 0..3 {
                    mu[c][ch] += *w * col.mu[c][ch];
                    var[c][ch] += *w * *w * col.var[c][ch];
                }
            }
        }
        let z: T = pi.iter().copied().sum();
        GmmColor {
            pi: pi.into_iter().map(|p| p / z).collect(),
            mu,
            var,
        }
    }

    pub fn render(&self) -> RenderResult<T> {
        RenderResult {
            color: self.color(),
            ray_variance: gmm_moments(&self.ray_mixture()).total_var,
            weights: self.weights.clone(),
            residual_transmittance: self.residual,
        }
    }

    pub fn effective_rate(&self, tau_w: T) -> T {
        effective_rate(&self.weights, tau_w)
    }
}

/// Stabilizer added to ray-level mixture weights so empty rays stay defined.
pub const RAY_WEIGHT_EPS: f64 = 1e-6;

/// Fraction of samples whose weight is at least `tau_w`.
pub fn effective_rate<T: Real>(weights: &[T], tau_w: T) -> T {
    if weights.is_empty() {
        return T::zero();
    }
    let hits = weights.iter().filter(|&&w| w >= tau_w).count();
    T::from_usize(hits).unwrap() / T::from_usize(weights.len()).unwrap()
}

/// Number of samples whose weight is below `tau_w`.
pub fn low_weight_count<T: Real>(weights: &[T], tau_w: T) -> usize {
    weights.iter().filter(|&&w| w < tau_w).count()
}

/// Graph quantities for `R` rays of `N` samples each.
#[derive(Clone, Copy, Debug)]
pub struct CompositeVars {
    /// `[R, N]`
    pub weights: Var,
    /// `[R, 1]`
    pub residual: Var,
    /// `[R, 3]`, including the background term, unclipped.
    pub color: Var,
}

/// `strict[j, i] = 1` when `j < i`, so `x · strict` is an exclusive prefix sum.
fn strict_prefix_matrix<T: Real>(n: usize) -> Tensor<T> {
    let mut m = vec![T::zero(); n * n];
    for j in 0..n {
        for i in j + 1..n {
            m[j * n + i] = T::one();
        }
    }
    Tensor::matrix(n, n, m)
}

/// Per-sample channel `ch` of `Σ_k π_k μ_k`, reshaped to `[R, N]`.
fn expected_channel<T: Real>(
    g: &mut Graph<T>,
    field: &FieldVars,
    k: usize,
    ch: usize,
    rays: usize,
    n: usize,
) -> Result<Var, DiffError> {
    let mut acc = None;
    for c in 0..k {
        let p = g.slice(field.pi, c, c + 1)?;
        let m = g.slice(field.mu, 3 * c + ch, 3 * c + ch + 1)?;
        let t = g.mul(p, m)?;
        acc = Some(match acc {
            None => t,
            Some(a) => g.add(a, t)?,
        });
    }
    g.reshape(acc.unwrap(), &[rays, n])
}

/// Differentiable form of [`composite`] for `R × N` field outputs laid out
/// ray-major, with `deltas` `[R, N]` precomputed from the depths.
pub fn composite_graph<T: Real>(
    g: &mut Graph<T>,
    field: &FieldVars,
    deltas: &Tensor<T>,
    background: [T; 3],
) -> Result<CompositeVars, DiffError> {
    let (rays, n) = (deltas.rows(), deltas.cols());
    let k = g.value(field.pi).cols();
    let sigma = g.reshape(field.sigma, &[rays, n])?;
    let d = g.constant(deltas.clone());
    let tau = g.mul(sigma, d)?;
    let neg_tau = g.neg(tau)?;
    let keep = g.exp(neg_tau)?;
    let neg_keep = g.neg(keep)?;
    let alpha = g.add_scalar(neg_keep, T::one())?;
    let strict = g.constant(strict_prefix_matrix(n));
    let cum = g.matmul(tau, strict)?;
    let neg_cum = g.neg(cum)?;
    let trans = g.exp(neg_cum)?;
    let weights = g.mul(trans, alpha)?;
    let total = g.sum_last(tau)?;
    let neg_total = g.neg(total)?;
    let residual = g.exp(neg_total)?;
    let mut chans = Vec::with_capacity(3);
    for (ch, &bg) in background.iter().enumerate() {
        let e = expected_channel(g, field, k, ch, rays, n)?;
        let we = g.mul(weights, e)?;
        let c = g.sum_last(we)?;
        let c = if bg != T::zero() {
            let b = g.scale(residual, bg)?;
            g.add(c, b)?
        } else {
            c
        };
        chans.push(c);
    }
    let color = g.concat(&chans)?;
    Ok(CompositeVars {
        weights,
        residual,
        color,
    })
}

/// Negative log-likelihood of per-ray targets `[R, 3]` under the ray-level
/// mixture built from the samples' weights `[R, N]`. Returns `[R, 1]`.
pub fn ray_mixture_nll<T: Real>(
    g: &mut Graph<T>,
    field: &FieldVars,
    weights: Var,
    target: Var,
) -> Result<Var, DiffError> {
    let (rays, n) = {
        let s = g.shape(weights);
        (s[0], s[1])
    };
    let k = g.value(field.pi).cols();
    let w2 = g.square(weights)?;
    let mut means = Vec::with_capacity(3 * k);
    let mut vars = Vec::with_capacity(3 * k);
    let mut mass = Vec::with_capacity(k);
    for c in 0..k {
        for ch in 0..3 {
            let col = 3 * c + ch;
            let m = g.slice(field.mu, col, col + 1)?;
            let m = g.reshape(m, &[rays, n])?;
            let wm = g.mul(weights, m)?;
            means.push(g.sum_last(wm)?);
            let v = g.slice(field.var, col, col + 1)?;
            let v = g.reshape(v, &[rays, n])?;
            let wv = g.mul(w2, v)?;
            let s = g.sum_last(wv)?;
            vars.push(g.add_scalar(s, T::lit(VARIANCE_FLOOR))?);
        }
        let p = g.slice(field.pi, c, c + 1)?;
        let p = g.reshape(p, &[rays, n])?;
        let wp = g.mul(weights, p)?;
        let s = g.sum_last(wp)?;
        mass.push(g.add_scalar(s, T::lit(RAY_WEIGHT_EPS / k as f64))?);
    }
    let means = g.concat(&means)?;
    let vars = g.concat(&vars)?;
    let mass = g.concat(&mass)?;
    let log_mass = g.log(mass)?;
    let pi = g.softmax(log_mass)?;
    let log_pi = g.log(pi)?;
    mixture_nll(g, means, vars, log_pi, target)
}

/// `−10 log10(mse)` with the MSE floored at 1e-10 (so at most 100 dB).
pub fn psnr_from_mse(mse: f64) -> f64 {
    -10.0 * mse.max(1e-10).log10()
}

pub fn mse<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<f64, RenderError> {
    if a.width != b.width || a.height != b.height {
        return Err(RenderError::Dimensions(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let s: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x.to_f64_lossless() - y.to_f64_lossless();
            d * d
        })
        .sum();
    Ok(s / a.data.len() as f64)
}

pub fn psnr<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<f64, RenderError> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - r;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable "valid" filtering of a row-major plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut horiz = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            horiz[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * horiz[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean local SSIM of the channel-mean grayscale images, 11×11 Gaussian
/// window with σ = 1.5, dynamic range 1.
pub fn ssim<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<f64, RenderError> {
    if a.width != b.width || a.height != b.height {
        return Err(RenderError::Dimensions(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(RenderError::TooSmall(a.width, a.height));
    }
    let (w, h) = (a.width, a.height);
    let x: Vec<f64> = a.gray().iter().map(|v| v.to_f64_lossless()).collect();
    let y: Vec<f64> = b.gray().iter().map(|v| v.to_f64_lossless()).collect();
    let k = gaussian_window();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let mx = filter_valid(&x, w, h, &k);
    let my = filter_valid(&y, w, h, &k);
    let sxx = filter_valid(&xx, w, h, &k);
    let syy = filter_valid(&yy, w, h, &k);
    let sxy = filter_valid(&xy, w, h, &k);
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let vx = sxx[i] - ux * ux;
        let vy = syy[i] - uy * uy;
        let cxy = sxy[i] - ux * uy;
        total += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cxy + SSIM_C2))
            / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
    }
    Ok(total / mx.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{gradient_check, GradCheckConfig, Objective};
    use crate::field::{gmm_from_raw, FieldVars};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grey(k: usize, c: f64) -> Vec<GmmColor<f64>> {
        vec![GmmColor::point([c; 3]); k]
    }

    #[test]
    fn empty_space_renders_black() {
        let b = composite(&[1.0, 2.0, 3.0], &[0.0; 3], &grey(3, 0.7), 4.0).unwrap();
        assert_eq!(b.color(), [0.0; 3]);
        assert_eq!(b.residual, 1.0);
        assert!(b.weights.iter().all(|&w| w == 0.0));
        assert_eq!(b.trans, vec![1.0; 3]);
    }

    #[test]
    fn opaque_single_sample_takes_its_color() {
        let b = composite(&[1.0], &[1e6], &grey(1, 0.3), 2.0).unwrap();
        assert!((b.weights[0] - 1.0).abs() < 1e-12);
        assert!((b.color()[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn half_alpha_closed_form() {
        let l2 = 2f64.ln();
        let b = composite(&[0.0, l2], &[1.0, 1.0], &grey(2, 1.0), 2.0 * l2).unwrap();
        assert!((b.alpha[0] - 0.5).abs() < 1e-15);
        assert!((b.weights[0] - 0.5).abs() < 1e-15);
        assert!((b.weights[1] - 0.25).abs() < 1e-15);
        assert!((b.residual - 0.25).abs() < 1e-15);
    }

    #[test]
    fn descending_depths_are_rejected() {
        assert!(composite(&[1.0, 0.5], &[1.0, 1.0], &grey(2, 0.5), 2.0).is_err());
        assert!(composite(&[1.0, 3.0], &[1.0, 1.0], &grey(2, 0.5), 2.0).is_err());
    }

    #[test]
    fn partition_of_unity_and_monotone_transmittance() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let n = rng.random_range(1..40);
            let mut depths: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
            depths.sort_by(f64::total_cmp);
            let sig: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..20.0)).collect();
            let b = composite(&depths, &sig, &grey(n, 0.5), 5.0).unwrap();
            let s: f64 = b.weights.iter().sum::<f64>() + b.residual;
            assert!((s - 1.0).abs() < 1e-12);
            assert!(b.trans.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn ray_mixture_of_point_colors() {
        let l2 = 2f64.ln();
        let b = composite(&[0.0, l2], &[1.0, 1.0], &grey(2, 0.8), 2.0 * l2).unwrap();
        let m = b.ray_mixture();
        assert!((m.pi[0] - 1.0).abs() < 1e-12);
        assert!((m.mu[0][0] - 0.75 * 0.8).abs() < 1e-12);
        let r = b.render();
        assert!((r.color[1] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn effective_rate_counts() {
        assert_eq!(effective_rate(&[0.0f64; 4], 0.01), 0.0);
        assert_eq!(effective_rate(&[0.5, 0.005, 0.02, 0.0], 0.01), 0.5);
        assert_eq!(low_weight_count(&[0.5, 0.005, 0.02, 0.0], 0.01), 2);
    }

    #[test]
    fn psnr_closed_forms() {
        assert_eq!(psnr_from_mse(0.0), 100.0);
        assert!((psnr_from_mse(0.01) - 20.0).abs() < 1e-12);
        assert!((psnr_from_mse(0.001) - 30.0).abs() < 1e-12);
        let a = Image::<f32>::filled(4, 4, [0.5; 3]);
        assert_eq!(psnr(&a, &a).unwrap(), 100.0);
        assert!(psnr(&a, &Image::new(3, 4)).is_err());
    }

    /// Direct 2-D window evaluation, independent of the separable path.
    fn brute_ssim(a: &Image<f64>, b: &Image<f64>) -> f64 {
        let (x, y) = (a.gray(), b.gray());
        let k = gaussian_window();
        let (w, h) = (a.width, a.height);
        let mut total = 0.0;
        let mut count = 0;
        for oy in 0..=h - 11 {
            for ox in 0..=w - 11 {
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wt = k[i] * k[j];
                        mx += wt * x[(oy + i) * w + ox + j];
                        my += wt * y[(oy + i) * w + ox + j];
                    }
                }
                let (mut vx, mut vy, mut c) = (0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wt = k[i] * k[j];
                        let dx = x[(oy + i) * w + ox + j] - mx;
                        let dy = y[(oy + i) * w + ox + j] - my;
                        vx += wt * dx * dx;
                        vy += wt * dy * dy;
                        c += wt * dx * dy;
                    }
                }
                total += ((2.0 * mx * my + 1e-4) * (2.0 * c + 9e-4))
                    / ((mx * mx + my * my + 1e-4) * (vx + vy + 9e-4));
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn ssim_identical_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut a = Image::<f64>::new(16, 13);
        a.data.iter_mut().for_each(|v| *v = rng.random());
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_checkerboard_vs_negative_is_strongly_negative() {
        let mut a = Image::<f64>::new(16, 16);
        for y in 0..16 {
            for x in 0..16 {
                a.set_pixel(x, y, [((x + y) % 2) as f64; 3]);
            }
        }
        let neg = Image {
            data: a.data.iter().map(|v| 1.0 - v).collect(),
            ..a.clone()
        };
        let s = ssim(&a, &neg).unwrap();
        assert!((s - brute_ssim(&a, &neg)).abs() < 1e-9);
        assert!(s < -0.9, "{s}");
    }

    #[test]
    fn ssim_random_images_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = Image::<f64>::new(17, 14);
        let mut b = Image::<f64>::new(17, 14);
        a.data.iter_mut().for_each(|v| *v = rng.random());
        b.data.iter_mut().for_each(|v| *v = rng.random());
        assert!((ssim(&a, &b).unwrap() - brute_ssim(&a, &b)).abs() < 1e-9);
    }

    #[test]
    fn ssim_constant_images_reduce_to_luminance() {
        let (m1, m2) = (0.3, 0.7);
        let a = Image::<f64>::filled(12, 12, [m1; 3]);
        let b = Image::<f64>::filled(12, 12, [m2; 3]);
        let expect = (2.0 * m1 * m2 + 1e-4) / (m1 * m1 + m2 * m2 + 1e-4);
        assert!((ssim(&a, &b).unwrap() - expect).abs() < 1e-9);
        assert!(matches!(
            ssim(&Image::<f64>::new(10, 20), &Image::new(10, 20)),
            Err(RenderError::TooSmall(10, 20))
        ));
    }

    /// Field-like raw outputs → composite → photometric loss, for gradient checks.
    struct CompositeObjective {
        sigma_raw: Tensor<f64>,
        head_raw: Tensor<f64>,
        deltas: Tensor<f64>,
        target: Tensor<f64>,
        with_nll: bool,
    }

    impl Objective for CompositeObjective {
        fn inputs(&self) -> Vec<Tensor<f64>> {
            vec![self.sigma_raw.clone(), self.head_raw.clone()]
        }
        fn eval<T: Real>(&self, g: &mut Graph<T>, v: &[Var]) -> Result<Var, DiffError> {
            let k = 3;
            let sigma = g.softplus(v[0])?;
            let mu_raw = g.slice(v[1], 0, 3 * k)?;
            let var_raw = g.slice(v[1], 3 * k, 6 * k)?;
            let logits = g.slice(v[1], 6 * k, 7 * k)?;
            let mu = g.sigmoid(mu_raw)?;
            let var = g.softplus(var_raw)?;
            let var = g.add_scalar(var, T::lit(VARIANCE_FLOOR))?;
            let pi = g.softmax(logits)?;
            let fv = FieldVars { sigma, mu, var, pi };
            let cv = composite_graph(g, &fv, &self.deltas.cast(), [T::lit(0.2); 3])?;
            let target = g.constant(self.target.cast());
            if self.with_nll {
                let nll = ray_mixture_nll(g, &fv, cv.weights, target)?;
                return g.mean(nll);
            }
            let d = g.sub(cv.color, target)?;
            let d2 = g.square(d)?;
            g.mean(d2)
        }
    }

    fn objective(seed: u64, with_nll: bool) -> CompositeObjective {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (rays, n) = (3, 5);
        let mut r = |lo: f64, hi: f64, len: usize| -> Vec<f64> {
            (0..len).map(|_| rng.random_range(lo..hi)).collect()
        };
        CompositeObjective {
            sigma_raw: Tensor::matrix(rays * n, 1, r(-2.0, 2.0, rays * n)),
            head_raw: Tensor::matrix(rays * n, 21, r(-2.0, 2.0, rays * n * 21)),
            deltas: Tensor::matrix(rays, n, r(0.05, 0.6, rays * n)),
            target: Tensor::matrix(rays, 3, r(0.0, 1.0, rays * 3)),
            with_nll,
        }
    }

    #[test]
    fn graph_composite_matches_scalar_composite() {
        let obj = objective(7, false);
        let mut g = Graph::<f64>::new();
        let vars: Vec<Var> = obj.inputs().into_iter().map(|t| g.constant(t)).collect();
        let sigma = g.softplus(vars[0]).unwrap();
        let raw = obj.head_raw.clone();
        let mu_raw = g.slice(vars[1], 0, 9).unwrap();
        let var_raw = g.slice(vars[1], 9, 18).unwrap();
        let logits = g.slice(vars[1], 18, 21).unwrap();
        let mu = g.sigmoid(mu_raw).unwrap();
        let var = g.softplus(var_raw).unwrap();
        let var = g.add_scalar(var, VARIANCE_FLOOR).unwrap();
        let pi = g.softmax(logits).unwrap();
        let fv = FieldVars { sigma, mu, var, pi };
        let cv = composite_graph(&mut g, &fv, &obj.deltas, [0.0; 3]).unwrap();
        let target = g.constant(obj.target.clone());
        let nll = ray_mixture_nll(&mut g, &fv, cv.weights, target).unwrap();
        for r in 0..3 {
            let mut depths = vec![0.0];
            for i in 0..4 {
                depths.push(depths[i] + obj.deltas.at(r, i));
            }
            let t_far = depths[4] + obj.deltas.at(r, 4);
            let sig: Vec<f64> = (0..5).map(|i| g.value(sigma).data()[r * 5 + i]).collect();
            let cols: Vec<GmmColor<f64>> = (0..5).map(|i| gmm_from_raw(raw.row_slice(r * 5 + i))).collect();
            let b = composite(&depths, &sig, &cols, t_far).unwrap();
            for i in 0..5 {
                assert!((b.weights[i] - g.value(cv.weights).at(r, i)).abs() < 1e-12);
            }
            let c = b.color();
            for ch in 0..3 {
                assert!((c[ch] - g.value(cv.color).at(r, ch)).abs() < 1e-12);
            }
            let t = [0, 1, 2].map(|ch| obj.target.at(r, ch));
            let scalar_nll = crate::field::gmm_nll(&b.ray_mixture(), t);
            assert!((scalar_nll - g.value(nll).data()[r]).abs() < 1e-9);
        }
    }

    #[test]
    fn composite_photometric_loss_gradient_check() {
        for seed in 0..3 {
            let r = gradient_check::<f32, _>(&objective(seed, false), GradCheckConfig::default()).unwrap();
            assert!(r.passed, "{r:?}");
        }
    }

    #[test]
    fn ray_mixture_nll_gradient_check() {
        let r = gradient_check::<f32, _>(&objective(9, true), GradCheckConfig::default()).unwrap();
        assert!(r.passed, "{r:?}");
    }
}
