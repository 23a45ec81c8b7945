//! Diagonal Gaussian mixtures and their exact perturbations.
//!
//! A mixture `Σ w_k N(μ_k, diag(σ_k²))` pushed through any of the affine
//! forward SDEs stays a mixture: component `k` becomes
//! `N(m(t)μ_k, m(t)²σ_k² + s(t)²)`. That closure gives exact scores,
//! densities, component posteriors and Tweedie estimates at every `t`, which
//! the rest of the crate uses as ground truth.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{normal, uniform, ChainRng};
use crate::score::{ScoreFunction, ScoreSource};
use crate::sde::{Kernel, Sde};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const MIN_RESPONSIBILITY: f64 = 1e-300;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    dim: usize,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::param("weights", "mixture needs at least one component"));
        }
        if means.len() != weights.len() || variances.len() != weights.len() {
            return Err(Error::param(
                "means",
                "weights, means and variances must have the same length",
            ));
        }
        if weights.iter().any(|&w| !(w.is_finite() && w > 0.0)) {
            return Err(Error::param("weights", "weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::param("weights", format!("weights sum to {total}, not 1")));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::param("means", "dimension must be positive"));
        }
        for (mu, var) in means.iter().zip(&variances) {
            if mu.len() != dim || var.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: if mu.len() != dim { mu.len() } else { var.len() },
                });
            }
            if mu.iter().any(|v| !v.is_finite()) {
                return Err(Error::param("means", "means must be finite"));
            }
            if var.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
                return Err(Error::param("variances", "variances must be positive"));
            }
        }
        Ok(Self {
            dim,
            weights,
            means,
            variances,
        })
    }

    /// Isotropic components with per-component standard deviation.
    pub fn isotropic(weights: Vec<f64>, means: Vec<Vec<f64>>, stds: Vec<f64>) -> Result<Self> {
        let variances = means.iter().zip(&stds).map(|(mu, s)| vec![s * s; mu.len()]).collect();
        if stds.len() != means.len() {
            return Err(Error::param("stds", "one std per component"));
        }
        Self::new(weights, means, variances)
    }

    /// Like [`GaussianMixture::new`] but rescales the weights to sum to one.
    pub fn normalized(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::param("weights", "weights must be positive"));
        }
        Self::new(weights.iter().map(|w| w / total).collect(), means, variances)
    }

    pub fn standard_normal(dim: usize) -> Self {
        Self::new(vec![1.0], vec![vec![0.0; dim]], vec![vec![1.0; dim]]).expect("valid standard normal")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[Vec<f64>] {
        &self.variances
    }

    pub fn sample_one<R: RngCore + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u = uniform(rng, 0.0, 1.0);
        let mut acc = 0.0;
        let mut k = self.components() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        self.means[k]
            .iter()
            .zip(&self.variances[k])
            .map(|(mu, var)| mu + var.sqrt() * normal(rng))
            .collect()
    }

    pub fn sample<R: RngCore + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }

    /// Exact mean and (full) covariance.
    pub fn moments(&self) -> (Vec<f64>, Vec<Vec<f64>>) {
        let d = self.dim;
        let mut mean = vec![0.0; d];
        for (w, mu) in self.weights.iter().zip(&self.means) {
            for j in 0..d {
                mean[j] += w * mu[j];
            }
        }
        let mut cov = vec![vec![0.0; d]; d];
        for ((w, mu), var) in self.weights.iter().zip(&self.means).zip(&self.variances) {
            for a in 0..d {
                for b in 0..d {
                    let within = if a == b { var[a] } else { 0.0 };
                    cov[a][b] += w * (within + (mu[a] - mean[a]) * (mu[b] - mean[b]));
                }
            }
        }
        (mean, cov)
    }

    /// Time-`t` marginal under `sde`.
    pub fn perturb(&self, sde: &Sde, t: f64) -> PerturbedMixture {
        let k = sde.kernel(t);
        PerturbedMixture::from_kernel(self, sde.clamp_time(t), k.mean_coeff, k.std)
    }

    /// Score of the mixture pushed through `kernel`, without building a
    /// [`PerturbedMixture`]. Matches [`PerturbedMixture::score`].
    pub fn score_with_kernel(&self, kernel: &Kernel, x: &[f64]) -> Vec<f64> {
        let log_weights: Vec<f64> = self.weights.iter().map(|w| w.ln()).collect();
        self.score_with_log_weights(&log_weights, kernel, x)
    }

    fn score_with_log_weights(&self, log_weights: &[f64], kernel: &Kernel, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.score_into(log_weights, kernel, x, &mut out);
        out
    }

    fn score_into(&self, log_weights: &[f64], kernel: &Kernel, x: &[f64], out: &mut [f64]) {
        let (m, s2) = (kernel.mean_coeff, kernel.variance());
        if self.weights.len() == 1 {
            for ((o, xi), (mu, v)) in out.iter_mut().zip(x).zip(self.means[0].iter().zip(&self.variances[0])) {
                *o = -(xi - m * mu) / (m * m * v + s2);
            }
            return;
        }
        let mut r: Vec<f64> = (0..self.weights.len())
            .map(|k| {
                let mut lj = log_weights[k];
                for ((xi, mu), v) in x.iter().zip(&self.means[k]).zip(&self.variances[k]) {
                    let var = m * m * v + s2;
                    let d = xi - m * mu;
                    lj -= 0.5 * (d * d / var + var.ln());
                }
                lj
            })
            .collect();
        let max = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        r.iter_mut().for_each(|l| *l = (*l - max).exp());
        let total: f64 = r.iter().sum();
        r.iter_mut().for_each(|v| *v = (*v / total).max(MIN_RESPONSIBILITY));
        let total: f64 = r.iter().sum();
        out.fill(0.0);
        for (k, rk) in r.iter().enumerate() {
            let rk = rk / total;
            for ((o, xi), (mu, v)) in out.iter_mut().zip(x).zip(self.means[k].iter().zip(&self.variances[k])) {
                *o -= rk * (xi - m * mu) / (m * m * v + s2);
            }
        }
    }

    /// `∇ₓ log p_t(x | y = k)`: the score of the perturbed component `k`.
    pub fn class_score(&self, sde: &Sde, k: usize, x: &[f64], t: f64) -> Result<Vec<f64>> {
        if k >= self.components() {
            return Err(Error::InvalidLabel {
                label: k,
                components: self.components(),
            });
        }
        let kern = sde.kernel(t);
        let (m, s2) = (kern.mean_coeff, kern.variance());
        Ok(x.iter()
            .zip(&self.means[k])
            .zip(&self.variances[k])
            .map(|((xi, mu), var)| -(xi - m * mu) / (m * m * var + s2))
            .collect())
    }
}

/// Free-function form of [`GaussianMixture::perturb`].
pub fn perturb_gmm(gmm: &GaussianMixture, sde: &Sde, t: f64) -> PerturbedMixture {
    gmm.perturb(sde, t)
}

/// A mixture with component means `m·μ_k` and variances `m²σ_k² + s²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbedMixture {
    pub t: f64,
    pub m: f64,
    pub s: f64,
    log_weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
    /// `-½ Σ_j ln(2π v_kj)` per component.
    log_norms: Vec<f64>,
}

impl PerturbedMixture {
    pub fn from_kernel(base: &GaussianMixture, t: f64, m: f64, s: f64) -> Self {
        let means: Vec<Vec<f64>> = base.means.iter().map(|mu| mu.iter().map(|v| m * v).collect()).collect();
        let variances: Vec<Vec<f64>> = base
            .variances
            .iter()
            .map(|var| var.iter().map(|v| m * m * v + s * s).collect())
            .collect();
        let log_norms = variances
            .iter()
            .map(|var| -0.5 * var.iter().map(|v| LN_2PI + v.ln()).sum::<f64>())
            .collect();
        Self {
            t,
            m,
            s,
            log_weights: base.weights.iter().map(|w| w.ln()).collect(),
            means,
            variances,
            log_norms,
        }
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn components(&self) -> usize {
        self.means.len()
    }

    pub fn component_means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn component_variances(&self) -> &[Vec<f64>] {
        &self.variances
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|l| l.exp()).collect()
    }

    /// `log w_k + log N(x; μ_k(t), v_k(t))` for every component.
    pub fn component_log_joint(&self, x: &[f64]) -> Vec<f64> {
        (0..self.components())
            .map(|k| {
                let quad: f64 = x
                    .iter()
                    .zip(&self.means[k])
                    .zip(&self.variances[k])
                    .map(|((xi, mu), v)| (xi - mu) * (xi - mu) / v)
                    .sum();
                self.log_weights[k] + self.log_norms[k] - 0.5 * quad
            })
            .collect()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        log_sum_exp(&self.component_log_joint(x))
    }

    /// `p(y = k | x_t = x)`, clamped below at 1e-300 before renormalizing.
    pub fn component_posterior(&self, x: &[f64]) -> Vec<f64> {
        let logs = self.component_log_joint(x);
        let lse = log_sum_exp(&logs);
        let mut r: Vec<f64> = logs.iter().map(|l| (l - lse).exp().max(MIN_RESPONSIBILITY)).collect();
        let total: f64 = r.iter().sum();
        r.iter_mut().for_each(|v| *v /= total);
        r
    }

    /// Score of a single perturbed component.
    pub fn component_score(&self, k: usize, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.means[k])
            .zip(&self.variances[k])
            .map(|((xi, mu), v)| -(xi - mu) / v)
            .collect()
    }

    pub fn score(&self, x: &[f64]) -> Vec<f64> {
        let r = self.component_posterior(x);
        let mut out = vec![0.0; x.len()];
        for (k, rk) in r.iter().enumerate() {
            for (j, g) in self.component_score(k, x).into_iter().enumerate() {
                out[j] += rk * g;
            }
        }
        out
    }

    /// `∇ₓ log p(y = k | x)` = component score minus mixture score.
    pub fn log_posterior_grad(&self, k: usize, x: &[f64]) -> Vec<f64> {
        let total = self.score(x);
        self.component_score(k, x)
            .iter()
            .zip(&total)
            .map(|(c, s)| c - s)
            .collect()
    }

    /// `∇ₓ · score` = trace of the Hessian of `log p`.
    pub fn score_divergence(&self, x: &[f64]) -> f64 {
        let r = self.component_posterior(x);
        let mut total = vec![0.0; x.len()];
        let mut acc = 0.0;
        for (k, rk) in r.iter().enumerate() {
            let g = self.component_score(k, x);
            let inv_var: f64 = self.variances[k].iter().map(|v| -1.0 / v).sum();
            acc += rk * (inv_var + g.iter().map(|v| v * v).sum::<f64>());
            for (tj, gj) in total.iter_mut().zip(&g) {
                *tj += rk * gj;
            }
        }
        acc - total.iter().map(|v| v * v).sum::<f64>()
    }

    /// Mixture CDF of coordinate `axis`.
    pub fn marginal_cdf(&self, axis: usize, x: f64) -> f64 {
        self.log_weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((lw, mu), v)| lw.exp() * normal_cdf((x - mu[axis]) / v[axis].sqrt()))
            .sum()
    }
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Tweedie estimate `E[x₀ | x_t = x] = (x + s(t)² score(x, t)) / m(t)`.
pub fn tweedie_denoise<S: ScoreFunction + ?Sized>(x: &[f64], t: f64, score_fn: &S, sde: &Sde) -> Vec<f64> {
    let g = score_fn.score(x, t);
    tweedie_from_score(x, &g, t, sde)
}

pub(crate) fn tweedie_from_score(x: &[f64], g: &[f64], t: f64, sde: &Sde) -> Vec<f64> {
    let k = sde.kernel(t);
    let s2 = k.variance();
    x.iter().zip(g).map(|(xi, gi)| (xi + s2 * gi) / k.mean_coeff).collect()
}

/// Exact score of a mixture perturbed by `sde`.
#[derive(Clone, Debug)]
pub struct MixtureScore {
    gmm: GaussianMixture,
    sde: Sde,
    log_weights: Vec<f64>,
}

impl MixtureScore {
    pub fn new(gmm: GaussianMixture, sde: Sde) -> Self {
        let log_weights = gmm.weights.iter().map(|w| w.ln()).collect();
        Self { gmm, sde, log_weights }
    }

    pub fn gmm(&self) -> &GaussianMixture {
        &self.gmm
    }

    pub fn sde(&self) -> &Sde {
        &self.sde
    }

    pub fn at(&self, t: f64) -> PerturbedMixture {
        self.gmm.perturb(&self.sde, t)
    }
}

impl ScoreFunction for MixtureScore {
    fn dim(&self) -> usize {
        self.gmm.dim()
    }
    fn source(&self) -> ScoreSource {
        ScoreSource::Oracle
    }
    fn score(&self, x: &[f64], t: f64) -> Vec<f64> {
        self.gmm
            .score_with_log_weights(&self.log_weights, &self.sde.kernel(t), x)
    }
    fn score_with_rng_into(&self, x: &[f64], t: f64, _rng: &mut ChainRng, out: &mut [f64]) {
        self.gmm.score_into(&self.log_weights, &self.sde.kernel(t), x, out);
    }
    fn exact_divergence(&self, x: &[f64], t: f64) -> Option<f64> {
        Some(self.at(t).score_divergence(x))
    }
}

/// Exact score of one perturbed component (class-conditional oracle).
#[derive(Clone, Debug)]
pub struct ClassScore {
    gmm: GaussianMixture,
    sde: Sde,
    label: usize,
}

impl ClassScore {
    pub fn new(gmm: GaussianMixture, sde: Sde, label: usize) -> Result<Self> {
        if label >= gmm.components() {
            return Err(Error::InvalidLabel {
                label,
                components: gmm.components(),
            });
        }
        Ok(Self { gmm, sde, label })
    }
}

impl ScoreFunction for ClassScore {
    fn dim(&self) -> usize {
        self.gmm.dim()
    }
    fn source(&self) -> ScoreSource {
        ScoreSource::Oracle
    }
    fn score(&self, x: &[f64], t: f64) -> Vec<f64> {
        self.gmm
            .class_score(&self.sde, self.label, x, t)
            .expect("label validated at construction")
    }
    fn exact_divergence(&self, _x: &[f64], t: f64) -> Option<f64> {
        let k = self.sde.kernel(t);
        Some(
            self.gmm.variances()[self.label]
                .iter()
                .map(|v| -1.0 / (k.mean_coeff * k.mean_coeff * v + k.variance()))
                .sum(),
        )
    }
}

/// A mixture expressed in rotated coordinates: `x = C u` with `u` drawn from
/// `inner`. Isotropic perturbations commute with `C`, so the score is
/// `C · score_u(Cᵀ x)`. Used for correlated Gaussian fixtures.
#[derive(Clone, Debug)]
pub struct RotatedMixtureScore {
    inner: MixtureScore,
    rotation: Matrix,
}

impl RotatedMixtureScore {
    pub fn new(inner: MixtureScore, rotation: Matrix) -> Result<Self> {
        if rotation.rows != inner.dim() || rotation.cols != inner.dim() {
            return Err(Error::DimensionMismatch {
                expected: inner.dim(),
                got: rotation.rows,
            });
        }
        if rotation.orthogonality_defect() > 1e-10 {
            return Err(Error::param("rotation", "matrix is not orthogonal"));
        }
        Ok(Self { inner, rotation })
    }

    /// Draw from the data distribution in `x` coordinates.
    pub fn sample<R: RngCore + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        self.inner
            .gmm
            .sample(n, rng)
            .iter()
            .map(|u| self.rotation.mul_vec(u))
            .collect()
    }

    pub fn log_density(&self, x: &[f64], t: f64) -> f64 {
        self.inner.at(t).log_density(&self.rotation.tr_mul_vec(x))
    }
}

impl ScoreFunction for RotatedMixtureScore {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn source(&self) -> ScoreSource {
        ScoreSource::Oracle
    }
    fn score(&self, x: &[f64], t: f64) -> Vec<f64> {
        let mut u = self.rotation.tr_mul_vec(x);
        let s = self.inner.score(&u, t);
        self.rotation.mul_vec_into(&s, &mut u);
        u
    }
    fn score_with_rng_into(&self, x: &[f64], t: f64, rng: &mut ChainRng, out: &mut [f64]) {
        let mut stack = [0.0; 8];
        let mut heap = Vec::new();
        let u = if x.len() <= stack.len() {
            &mut stack[..x.len()]
        } else {
            heap.resize(x.len(), 0.0);
            &mut heap[..]
        };
        self.rotation.tr_mul_vec_into(x, u);
        self.inner.score_with_rng_into(u, t, rng, out);
        u.copy_from_slice(out);
        self.rotation.mul_vec_into(u, out);
    }
    fn exact_divergence(&self, x: &[f64], t: f64) -> Option<f64> {
        self.inner.exact_divergence(&self.rotation.tr_mul_vec(x), t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn two_mixture_1d() -> GaussianMixture {
        GaussianMixture::isotropic(vec![0.5, 0.5], vec![vec![-2.0], vec![2.0]], vec![0.5, 0.5]).unwrap()
    }

    fn random_mixture(rng: &mut impl RngCore, dim: usize) -> GaussianMixture {
        let k = rng.random_range(1..4);
        let weights: Vec<f64> = (0..k).map(|_| uniform(rng, 0.2, 1.0)).collect();
        let means = (0..k)
            .map(|_| (0..dim).map(|_| uniform(rng, -3.0, 3.0)).collect())
            .collect();
        let vars = (0..k)
            .map(|_| (0..dim).map(|_| uniform(rng, 0.1, 2.0)).collect())
            .collect();
        GaussianMixture::normalized(weights, means, vars).unwrap()
    }

    #[test]
    fn rejects_bad_mixtures() {
        assert!(GaussianMixture::new(vec![0.5, 0.4], vec![vec![0.0], vec![1.0]], vec![vec![1.0], vec![1.0]]).is_err());
        assert!(GaussianMixture::new(vec![1.0], vec![vec![0.0]], vec![vec![0.0]]).is_err());
        assert!(GaussianMixture::new(
            vec![0.5, 0.5],
            vec![vec![0.0], vec![1.0, 2.0]],
            vec![vec![1.0], vec![1.0, 1.0]]
        )
        .is_err());
    }

    #[test]
    fn perturbing_unit_gaussian_under_vp_keeps_unit_variance() {
        let g = GaussianMixture::standard_normal(1);
        let sde = Sde::vp();
        for &t in &[0.01, 0.3, 0.9] {
            let pm = g.perturb(&sde, t);
            assert!((pm.component_variances()[0][0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn eps_train_is_near_identity_for_vp() {
        let g = two_mixture_1d();
        let sde = Sde::vp();
        let pm = g.perturb(&sde, sde.eps_train);
        for k in 0..2 {
            assert!((pm.component_means()[k][0] - g.means()[k][0]).abs() < 1e-4);
            assert!((pm.component_variances()[k][0] - g.variances()[k][0]).abs() < 1e-4);
        }
    }

    #[test]
    fn ve_adds_exactly_sigma_squared() {
        let g = two_mixture_1d();
        let sde = Sde::ve();
        let pm = g.perturb(&sde, 1.0);
        for k in 0..2 {
            assert_eq!(pm.component_variances()[k][0], 0.25 + 50.0 * 50.0);
        }
    }

    #[test]
    fn log_density_examples() {
        let pm = GaussianMixture::standard_normal(2).perturb(&Sde::vp(), 0.0);
        assert!((pm.log_density(&[0.0, 0.0]) + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
        let pm = two_mixture_1d().perturb(&Sde::ve(), 0.3);
        assert_eq!(pm.log_density(&[1.3]), pm.log_density(&[-1.3]));
    }

    #[test]
    fn density_matches_convolution_quadrature() {
        // p_t(x) = ∫ p₀(x₀) N(x; m x₀, s²) dx₀ by composite Simpson on a wide grid.
        let g = GaussianMixture::isotropic(vec![0.3, 0.7], vec![vec![-1.0], vec![1.5]], vec![0.4, 0.8]).unwrap();
        let sde = Sde::vp();
        for &t in &[0.05, 0.2, 0.6] {
            let pm = g.perturb(&sde, t);
            let base = g.perturb(&sde, 0.0);
            for &x in &[-2.0, -0.3, 0.0, 0.7, 2.4] {
                let n = 20_000;
                let (lo, hi) = (-10.0, 10.0);
                let h = (hi - lo) / n as f64;
                let f = |x0: f64| {
                    let d = x - pm.m * x0;
                    base.log_density(&[x0]).exp() * (-0.5 * d * d / (pm.s * pm.s)).exp()
                        / (pm.s * (2.0 * std::f64::consts::PI).sqrt())
                };
                let mut acc = f(lo) + f(hi);
                for i in 1..n {
                    let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                    acc += w * f(lo + i as f64 * h);
                }
                let quad = acc * h / 3.0;
                assert!((quad - pm.log_density(&[x]).exp()).abs() < 1e-6, "t={t} x={x}");
            }
        }
    }

    #[test]
    fn normalization_by_quadrature() {
        let g = GaussianMixture::isotropic(vec![0.2, 0.8], vec![vec![-3.0], vec![1.0]], vec![0.3, 1.1]).unwrap();
        for sde in [Sde::ve(), Sde::vp(), Sde::sub_vp()] {
            for &t in &[sde.eps_train, 0.1, 0.5, 1.0] {
                let pm = g.perturb(&sde, t);
                let half = 12.0 * (pm.s + 3.0) + 3.0;
                let n = 40_000;
                let h = 2.0 * half / n as f64;
                let total: f64 = (0..=n)
                    .map(|i| {
                        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                        w * pm.log_density(&[-half + i as f64 * h]).exp()
                    })
                    .sum::<f64>()
                    * h;
                assert!((total - 1.0).abs() < 1e-6, "{:?} t={t}: {total}", sde.kind);
            }
        }
    }

    #[test]
    fn score_examples() {
        let pm = two_mixture_1d().perturb(&Sde::ve(), 0.4);
        assert!(pm.score(&[0.0])[0].abs() < 1e-15);
        // VE, single N(0, 1) with s = 1 → variance 2, score -x/2
        let g = GaussianMixture::standard_normal(2);
        let pm = PerturbedMixture::from_kernel(&g, 0.5, 1.0, 1.0);
        let s = pm.score(&[1.0, 0.0]);
        assert!((s[0] + 0.5).abs() < 1e-15 && s[1] == 0.0);
    }

    #[test]
    fn score_matches_finite_difference() {
        let mut rng = stream(11, "mixture-fd", 0);
        for trial in 0..300 {
            let dim = 1 + trial % 3;
            let g = random_mixture(&mut rng, dim);
            let sde = Sde::with_defaults([crate::SdeKind::Ve, crate::SdeKind::Vp, crate::SdeKind::SubVp][trial % 3]);
            let t = uniform(&mut rng, 0.01, 1.0);
            let pm = g.perturb(&sde, t);
            let scale = pm.s.max(0.5) * 2.0;
            let x: Vec<f64> = (0..dim).map(|_| uniform(&mut rng, -scale, scale)).collect();
            let s = pm.score(&x);
            for j in 0..dim {
                let h = 1e-5 * (1.0 + x[j].abs());
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let fd = (pm.log_density(&xp) - pm.log_density(&xm)) / (2.0 * h);
                let denom = crate::linalg::norm(&s).max(1e-3);
                assert!((fd - s[j]).abs() / denom < 1e-5, "trial {trial}: {fd} vs {}", s[j]);
            }
        }
    }

    #[test]
    fn posterior_examples() {
        let pm = two_mixture_1d().perturb(&Sde::vp(), 0.2);
        let r = pm.component_posterior(&[0.0]);
        assert!((r[0] - 0.5).abs() < 1e-15 && (r[1] - 0.5).abs() < 1e-15);
        let r = pm.component_posterior(&[40.0]);
        assert!(r[1] > 1.0 - 1e-12);
        let r = pm.component_posterior(&[1e4]);
        assert!(r.iter().all(|v| v.is_finite()) && (r.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn posterior_is_bayes_rule() {
        let mut rng = stream(3, "bayes", 0);
        for _ in 0..100 {
            let g = random_mixture(&mut rng, 2);
            let pm = g.perturb(&Sde::vp(), uniform(&mut rng, 0.01, 1.0));
            let x = [uniform(&mut rng, -3.0, 3.0), uniform(&mut rng, -3.0, 3.0)];
            let joint: Vec<f64> = (0..g.components())
                .map(|k| {
                    let mu = &pm.component_means()[k];
                    let v = &pm.component_variances()[k];
                    let dens: f64 = (0..2)
                        .map(|j| {
                            (-(x[j] - mu[j]).powi(2) / (2.0 * v[j])).exp() / (2.0 * std::f64::consts::PI * v[j]).sqrt()
                        })
                        .product();
                    g.weights()[k] * dens
                })
                .collect();
            let z: f64 = joint.iter().sum();
            for (a, b) in pm.component_posterior(&x).iter().zip(&joint) {
                assert!((a - b / z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn direct_score_matches_perturbed_mixture() {
        let mut rng = stream(21, "direct", 0);
        for _ in 0..200 {
            let g = random_mixture(&mut rng, 3);
            for sde in [Sde::ve(), Sde::vp(), Sde::sub_vp()] {
                let t = uniform(&mut rng, 1e-5, 1.0);
                let x: Vec<f64> = (0..3).map(|_| uniform(&mut rng, -3.0, 3.0)).collect();
                let a = MixtureScore::new(g.clone(), sde).score(&x, t);
                let b = g.perturb(&sde, t).score(&x);
                for j in 0..3 {
                    assert!((a[j] - b[j]).abs() <= 1e-12 * (1.0 + b[j].abs()));
                }
            }
        }
    }

    #[test]
    fn score_is_posterior_weighted_component_scores() {
        let mut rng = stream(5, "bayes-score", 0);
        for _ in 0..200 {
            let g = random_mixture(&mut rng, 3);
            let pm = g.perturb(&Sde::sub_vp(), uniform(&mut rng, 0.01, 1.0));
            let x: Vec<f64> = (0..3).map(|_| uniform(&mut rng, -3.0, 3.0)).collect();
            let r = pm.component_posterior(&x);
            let mut mix = vec![0.0; 3];
            for (k, rk) in r.iter().enumerate() {
                crate::linalg::axpy(*rk, &pm.component_score(k, &x), &mut mix);
            }
            let s = pm.score(&x);
            for j in 0..3 {
                assert!((mix[j] - s[j]).abs() <= 1e-12 * (1.0 + s[j].abs()));
            }
        }
    }

    #[test]
    fn class_score_examples() {
        let g = two_mixture_1d();
        let sde = Sde::vp();
        let t = 0.3;
        let k = sde.kernel(t);
        let x = [0.7];
        let cs = g.class_score(&sde, 0, &x, t).unwrap();
        let expected = -(0.7 - k.mean_coeff * -2.0) / (k.mean_coeff.powi(2) * 0.25 + k.variance());
        assert!((cs[0] - expected).abs() < 1e-14);
        assert!(matches!(g.class_score(&sde, 2, &x, t), Err(Error::InvalidLabel { .. })));

        // decomposition: class_score - score = ∇ log posterior_k (finite differences)
        let pm = g.perturb(&sde, t);
        let h = 1e-5;
        let lp = |x: f64| pm.component_posterior(&[x])[0].ln();
        let fd = (lp(x[0] + h) - lp(x[0] - h)) / (2.0 * h);
        let diff = cs[0] - pm.score(&x)[0];
        assert!((fd - diff).abs() / diff.abs() < 1e-4);

        let single = GaussianMixture::standard_normal(2);
        let a = single.class_score(&sde, 0, &[0.3, -1.0], t).unwrap();
        let b = single.perturb(&sde, t).score(&[0.3, -1.0]);
        assert_eq!(a, b);
    }

    #[test]
    fn tweedie_matches_gaussian_posterior_mean() {
        let mu = 1.5;
        let var0 = 0.3f64;
        let g = GaussianMixture::new(vec![1.0], vec![vec![mu]], vec![vec![var0]]).unwrap();
        for sde in [Sde::vp(), Sde::ve(), Sde::sub_vp()] {
            let oracle = MixtureScore::new(g.clone(), sde);
            for &t in &[0.01, 0.2, 0.7] {
                let k = sde.kernel(t);
                let (m, s2) = (k.mean_coeff, k.variance());
                for &x in &[-2.0, 0.0, 0.4, 3.0] {
                    // x₀ | x_t ~ N(μ + var0 m (x - mμ)/(m² var0 + s²), ...)
                    let post = mu + var0 * m * (x - m * mu) / (m * m * var0 + s2);
                    let est = tweedie_denoise(&[x], t, &oracle, &sde)[0];
                    assert!(
                        (est - post).abs() < 1e-10 * (1.0 + post.abs()),
                        "{:?} {t} {x}",
                        sde.kind
                    );
                }
            }
        }
        let zero = crate::score::FnScore::new(1, |x: &[f64], _t| vec![0.0; x.len()]);
        let ve = Sde::ve();
        let k = ve.kernel(0.5);
        let expected = 2.0 + k.variance() * 0.0;
        assert_eq!(tweedie_denoise(&[2.0], 0.5, &zero, &ve)[0], expected);
    }

    #[test]
    fn exact_divergence_matches_finite_difference() {
        let mut rng = stream(8, "div", 0);
        for _ in 0..50 {
            let g = random_mixture(&mut rng, 2);
            let pm = g.perturb(&Sde::vp(), uniform(&mut rng, 0.02, 1.0));
            let x = [uniform(&mut rng, -3.0, 3.0), uniform(&mut rng, -3.0, 3.0)];
            let mut fd = 0.0;
            for j in 0..2 {
                let h = 1e-5;
                let (mut xp, mut xm) = (x, x);
                xp[j] += h;
                xm[j] -= h;
                fd += (pm.score(&xp)[j] - pm.score(&xm)[j]) / (2.0 * h);
            }
            let exact = pm.score_divergence(&x);
            assert!((fd - exact).abs() < 1e-5 * (1.0 + exact.abs()), "{fd} vs {exact}");
        }
    }

    #[test]
    fn rotated_score_matches_correlated_gaussian() {
        // ρ = 0.8 with unit variances: eigenvalues 1.8, 0.2.
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let c = Matrix::from_rows(&[vec![h, h], vec![h, -h]]).unwrap();
        let inner = GaussianMixture::new(vec![1.0], vec![vec![0.0, 0.0]], vec![vec![1.8, 0.2]]).unwrap();
        let sde = Sde::ve();
        let rot = RotatedMixtureScore::new(MixtureScore::new(inner, sde), c).unwrap();
        let t = 0.2;
        let s2 = sde.kernel(t).variance();
        let (a, b, d) = (1.0 + s2, 0.8, 1.0 + s2);
        let det = a * d - b * b;
        let x = [0.3, -1.1];
        let expected = [-(d * x[0] - b * x[1]) / det, -(-b * x[0] + a * x[1]) / det];
        let got = rot.score(&x, t);
        assert!((got[0] - expected[0]).abs() < 1e-12 && (got[1] - expected[1]).abs() < 1e-12);
    }
}
