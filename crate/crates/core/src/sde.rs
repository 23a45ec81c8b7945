//! Forward SDE families, their closed-form perturbation kernels and the
//! discrete noise chains they generalize.
//!
//! Three families share one type, [`Sde`]:
//!
//! * `VE`: `dx = σ(t)·√(2 ln(σmax/σmin)) dw`, with `σ(t) = σmin·(σmax/σmin)^t`.
//! * `VP`: `dx = -½β(t)x dt + √β(t) dw`, with `β(t) = βmin + t(βmax - βmin)`.
//! * `SubVP`: same drift as VP, diffusion `√(β(t)(1 - e^{-2∫β}))`.
//!
//! `∫₀ᵗβ` is always evaluated in closed form. The VE kernel is discontinuous
//! at `t = 0` (`σ(0⁺) = σmin`), so VE time arguments are clamped to
//! `[eps_train, t_max]`; VP and sub-VP are evaluated on `[0, t_max]`.

use std::cell::Cell;
use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::normal;

pub const DEFAULT_SIGMA_MIN: f64 = 0.01;
pub const DEFAULT_SIGMA_MAX: f64 = 50.0;
pub const DEFAULT_BETA_MIN: f64 = 0.1;
pub const DEFAULT_BETA_MAX: f64 = 20.0;
pub const DEFAULT_EPS_TRAIN: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SdeKind {
    #[serde(rename = "VE")]
    Ve,
    #[serde(rename = "VP")]
    Vp,
    #[serde(rename = "SubVP")]
    SubVp,
}

impl SdeKind {
    pub fn default_eps_sample(self) -> f64 {
        match self {
            SdeKind::Ve => 1e-5,
            SdeKind::Vp | SdeKind::SubVp => 1e-3,
        }
    }
}

impl fmt::Display for SdeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SdeKind::Ve => "VE",
            SdeKind::Vp => "VP",
            SdeKind::SubVp => "SubVP",
        })
    }
}

impl FromStr for SdeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "ve" => Ok(SdeKind::Ve),
            "vp" => Ok(SdeKind::Vp),
            "subvp" => Ok(SdeKind::SubVp),
            _ => Err(Error::param("sde.kind", format!("unknown SDE kind `{s}`"))),
        }
    }
}

/// Optional overrides for [`build_sde`]; `None` picks the default.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SdeParams {
    pub sigma_min: Option<f64>,
    pub sigma_max: Option<f64>,
    pub beta_min: Option<f64>,
    pub beta_max: Option<f64>,
    pub t_max: Option<f64>,
    pub eps_train: Option<f64>,
    pub eps_sample: Option<f64>,
}

/// A validated forward SDE. Immutable and `Copy`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sde {
    pub kind: SdeKind,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    pub t_max: f64,
    pub eps_train: f64,
    pub eps_sample: f64,
}

/// Gaussian transition `N(mean_coeff · x₀, std² I)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub mean_coeff: f64,
    pub std: f64,
}

impl Kernel {
    pub fn variance(&self) -> f64 {
        self.std * self.std
    }
}

/// `1 - e^{-u}` without cancellation for small `u`.
#[inline]
pub fn one_minus_exp_neg(u: f64) -> f64 {
    -(-u).exp_m1()
}

fn positive(field: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::param(field, format!("must be positive and finite, got {v}")))
    }
}

/// Validate parameters and fill defaults.
pub fn build_sde(kind: SdeKind, params: SdeParams) -> Result<Sde> {
    let sigma_min = positive("sigma_min", params.sigma_min.unwrap_or(DEFAULT_SIGMA_MIN))?;
    let sigma_max = positive("sigma_max", params.sigma_max.unwrap_or(DEFAULT_SIGMA_MAX))?;
    let beta_min = positive("beta_min", params.beta_min.unwrap_or(DEFAULT_BETA_MIN))?;
    let beta_max = positive("beta_max", params.beta_max.unwrap_or(DEFAULT_BETA_MAX))?;
    let t_max = positive("t_max", params.t_max.unwrap_or(1.0))?;
    let eps_train = positive("eps_train", params.eps_train.unwrap_or(DEFAULT_EPS_TRAIN))?;
    let eps_sample = positive("eps_sample", params.eps_sample.unwrap_or(kind.default_eps_sample()))?;

    match kind {
        SdeKind::Ve if sigma_min >= sigma_max => {
            return Err(Error::param(
                "sigma_max",
                format!("sigma_min ({sigma_min}) must be below sigma_max ({sigma_max})"),
            ))
        }
        SdeKind::Vp | SdeKind::SubVp if beta_min >= beta_max => {
            return Err(Error::param(
                "beta_max",
                format!("beta_min ({beta_min}) must be below beta_max ({beta_max})"),
            ))
        }
        _ => {}
    }
    if eps_train > eps_sample {
        return Err(Error::param(
            "eps_train",
            format!("eps_train ({eps_train}) must not exceed eps_sample ({eps_sample})"),
        ));
    }
    if eps_sample >= t_max {
        return Err(Error::param(
            "eps_sample",
            format!("eps_sample ({eps_sample}) must be below t_max ({t_max})"),
        ));
    }
    Ok(Sde {
        kind,
        sigma_min,
        sigma_max,
        beta_min,
        beta_max,
        t_max,
        eps_train,
        eps_sample,
    })
}

impl Sde {
    pub fn ve() -> Self {
        build_sde(SdeKind::Ve, SdeParams::default()).expect("defaults are valid")
    }

    pub fn vp() -> Self {
        build_sde(SdeKind::Vp, SdeParams::default()).expect("defaults are valid")
    }

    pub fn sub_vp() -> Self {
        build_sde(SdeKind::SubVp, SdeParams::default()).expect("defaults are valid")
    }

    pub fn with_defaults(kind: SdeKind) -> Self {
        build_sde(kind, SdeParams::default()).expect("defaults are valid")
    }

    /// Smallest time at which the kernel is evaluated.
    pub fn t_min(&self) -> f64 {
        match self.kind {
            SdeKind::Ve => self.eps_train,
            SdeKind::Vp | SdeKind::SubVp => 0.0,
        }
    }

    /// Clamp `t` into `[t_min, t_max]`.
    #[inline]
    pub fn clamp_time(&self, t: f64) -> f64 {
        t.clamp(self.t_min(), self.t_max)
    }

    /// Reject non-finite or out-of-range times; VE times in `[0, eps_train)`
    /// are clamped up to `eps_train`.
    pub fn check_time(&self, t: f64) -> Result<f64> {
        if !t.is_finite() || t < 0.0 || t > self.t_max {
            return Err(Error::TimeOutOfRange {
                t,
                lo: 0.0,
                hi: self.t_max,
            });
        }
        Ok(self.clamp_time(t))
    }

    /// `β(t)` for the VP family (also used by sub-VP).
    #[inline]
    pub fn beta(&self, t: f64) -> f64 {
        self.beta_min + t * (self.beta_max - self.beta_min)
    }

    /// `∫₀ᵗ β(s) ds`.
    #[inline]
    pub fn int_beta(&self, t: f64) -> f64 {
        self.beta_min * t + 0.5 * t * t * (self.beta_max - self.beta_min)
    }

    /// VE noise level `σ(t) = σmin (σmax/σmin)^t`.
    #[inline]
    pub fn sigma(&self, t: f64) -> f64 {
        // One-entry memo per thread.
        thread_local!(static LAST: Cell<[f64; 4]> = const { Cell::new([f64::NAN; 4]) });
        LAST.with(|last| {
            let [lo, hi, at, value] = last.get();
            if lo.to_bits() == self.sigma_min.to_bits()
                && hi.to_bits() == self.sigma_max.to_bits()
                && at.to_bits() == t.to_bits()
            {
                return value;
            }
            let value = self.sigma_min * (self.sigma_max / self.sigma_min).powf(t);
            last.set([self.sigma_min, self.sigma_max, t, value]);
            value
        })
    }

    /// Scalar `c(t)` with `f(x, t) = c(t)·x`.
    #[inline]
    pub fn drift_coeff(&self, t: f64) -> f64 {
        match self.kind {
            SdeKind::Ve => 0.0,
            SdeKind::Vp | SdeKind::SubVp => -0.5 * self.beta(self.clamp_time(t)),
        }
    }

    pub fn drift(&self, x: &[f64], t: f64) -> Vec<f64> {
        let c = self.drift_coeff(t);
        x.iter().map(|&v| c * v).collect()
    }

    /// Scalar diffusion coefficient `g(t)`.
    pub fn diffusion(&self, t: f64) -> f64 {
        let t = self.clamp_time(t);
        match self.kind {
            SdeKind::Ve => self.sigma(t) * (2.0 * (self.sigma_max / self.sigma_min).ln()).sqrt(),
            SdeKind::Vp => self.beta(t).sqrt(),
            SdeKind::SubVp => (self.beta(t) * one_minus_exp_neg(2.0 * self.int_beta(t))).sqrt(),
        }
    }

    /// Perturbation kernel `p₀ₜ(xₜ | x₀)`.
    pub fn kernel(&self, t: f64) -> Kernel {
        let t = self.clamp_time(t);
        match self.kind {
            SdeKind::Ve => Kernel {
                mean_coeff: 1.0,
                std: self.sigma(t),
            },
            SdeKind::Vp => {
                let b = self.int_beta(t);
                Kernel {
                    mean_coeff: (-0.5 * b).exp(),
                    std: one_minus_exp_neg(b).sqrt(),
                }
            }
            SdeKind::SubVp => {
                let b = self.int_beta(t);
                Kernel {
                    mean_coeff: (-0.5 * b).exp(),
                    std: one_minus_exp_neg(b),
                }
            }
        }
    }

    /// Conditional kernel `p(x_t | x_s)` for `s ≤ t`.
    pub fn transition(&self, s: f64, t: f64) -> Kernel {
        let (s, t) = (self.clamp_time(s), self.clamp_time(t));
        match self.kind {
            SdeKind::Ve => {
                let (a, b) = (self.sigma(s), self.sigma(t));
                Kernel {
                    mean_coeff: 1.0,
                    std: ((b - a) * (b + a)).max(0.0).sqrt(),
                }
            }
            SdeKind::Vp => {
                let db = self.int_beta(t) - self.int_beta(s);
                Kernel {
                    mean_coeff: (-0.5 * db).exp(),
                    std: one_minus_exp_neg(db).sqrt(),
                }
            }
            SdeKind::SubVp => {
                let (bs, bt) = (self.int_beta(s), self.int_beta(t));
                // (1 - e^{-(Bt-Bs)})(1 - e^{-(Bt+Bs)})
                let var = one_minus_exp_neg(bt - bs) * one_minus_exp_neg(bt + bs);
                Kernel {
                    mean_coeff: (-0.5 * (bt - bs)).exp(),
                    std: var.sqrt(),
                }
            }
        }
    }

    /// Standard deviation of the isotropic prior `p_T`.
    pub fn prior_std(&self) -> f64 {
        match self.kind {
            SdeKind::Ve => self.sigma_max,
            SdeKind::Vp | SdeKind::SubVp => 1.0,
        }
    }

    /// Per-coordinate variance of `x(t)` for isotropic initial variance
    /// `sigma0_sq`. Only defined for VP and sub-VP.
    pub fn variance_trajectory(&self, sigma0_sq: f64, t: f64) -> Result<f64> {
        if !(sigma0_sq.is_finite() && sigma0_sq >= 0.0) {
            return Err(Error::param("sigma0_sq", "must be non-negative"));
        }
        let decay = (-self.int_beta(self.clamp_time(t))).exp();
        match self.kind {
            SdeKind::Ve => Err(Error::Unsupported(
                "variance trajectory of VE; use the perturbation kernel".into(),
            )),
            SdeKind::Vp => Ok(1.0 + decay * (sigma0_sq - 1.0)),
            SdeKind::SubVp => Ok(1.0 + decay * decay + decay * (sigma0_sq - 2.0)),
        }
    }

    /// Uniform sampling grid `eps_sample = t₀ < … < t_N = t_max`.
    pub fn time_grid(&self, n: usize) -> Vec<f64> {
        let (lo, hi) = (self.eps_sample, self.t_max);
        (0..=n)
            .map(|i| {
                if i == n {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / n as f64
                }
            })
            .collect()
    }

    /// The discrete chain this SDE generalizes (SMLD for VE, DDPM for VP).
    pub fn discrete_schedule(&self, n: usize) -> Result<DiscreteSchedule> {
        match self.kind {
            SdeKind::Ve => DiscreteSchedule::smld(n, self.sigma_min, self.sigma_max),
            SdeKind::Vp => DiscreteSchedule::ddpm(n, self.beta_min, self.beta_max),
            SdeKind::SubVp => Err(Error::Unsupported(
                "sub-VP has no discrete Markov chain counterpart".into(),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiscreteKind {
    #[serde(rename = "SMLD")]
    Smld,
    #[serde(rename = "DDPM")]
    Ddpm,
}

/// Discrete noise scales. Index `i` (0-based) is scale `i + 1` of the chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteSchedule {
    pub kind: DiscreteKind,
    /// `σ₁ < … < σ_N` for SMLD, `β₁, …, β_N` for DDPM.
    pub values: Vec<f64>,
    /// `αᵢ = ∏_{j≤i}(1 - βⱼ)`; empty for SMLD.
    pub alphas: Vec<f64>,
}

impl DiscreteSchedule {
    /// Geometric `σᵢ = σmin (σmax/σmin)^{(i-1)/(N-1)}`; `N = 1` gives `σmax`.
    pub fn smld(n: usize, sigma_min: f64, sigma_max: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("n", "must be at least 1"));
        }
        let ratio = sigma_max / sigma_min;
        let values = if n == 1 {
            vec![sigma_max]
        } else {
            (0..n)
                .map(|i| sigma_min * ratio.powf(i as f64 / (n - 1) as f64))
                .collect()
        };
        Self::from_values(DiscreteKind::Smld, values)
    }

    /// Arithmetic `βᵢ = β̄min/N + (i-1)/(N(N-1))·(β̄max - β̄min)`.
    pub fn ddpm(n: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("n", "must be at least 1"));
        }
        let nf = n as f64;
        let values = (0..n)
            .map(|i| {
                let step = if n == 1 { 0.0 } else { i as f64 / (nf * (nf - 1.0)) };
                beta_min / nf + step * (beta_max - beta_min)
            })
            .collect();
        Self::from_values(DiscreteKind::Ddpm, values)
    }

    pub fn from_values(kind: DiscreteKind, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::param("values", "schedule is empty"));
        }
        let alphas = match kind {
            DiscreteKind::Smld => {
                if values.iter().any(|&s| !(s.is_finite() && s > 0.0)) || values.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::param(
                        "values",
                        "SMLD scales must be positive and strictly increasing",
                    ));
                }
                Vec::new()
            }
            DiscreteKind::Ddpm => {
                if values.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
                    return Err(Error::param("values", "DDPM betas must lie in (0, 1)"));
                }
                values
                    .iter()
                    .scan(1.0, |acc, &b| {
                        *acc *= 1.0 - b;
                        Some(*acc)
                    })
                    .collect()
            }
        };
        Ok(Self { kind, values, alphas })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Std of the discrete kernel `p(xᵢ | x₀)`.
    pub fn std_at(&self, i: usize) -> f64 {
        match self.kind {
            DiscreteKind::Smld => self.values[i],
            DiscreteKind::Ddpm => (1.0 - self.alphas[i]).sqrt(),
        }
    }

    /// Mean coefficient of the discrete kernel.
    pub fn mean_coeff_at(&self, i: usize) -> f64 {
        match self.kind {
            DiscreteKind::Smld => 1.0,
            DiscreteKind::Ddpm => self.alphas[i].sqrt(),
        }
    }

    /// Grid time `i/N` matching scale `i` (1-based) to the continuous process.
    pub fn grid_time(&self, i: usize) -> f64 {
        (i + 1) as f64 / self.len() as f64
    }

    /// Continuous time at which a discrete-index model evaluates scale `i`:
    /// the time whose continuous noise level equals the scale for SMLD
    /// (`(i-1)/(N-1)`), and the grid time for DDPM.
    pub fn model_time(&self, i: usize) -> f64 {
        match self.kind {
            DiscreteKind::Smld if self.len() > 1 => i as f64 / (self.len() - 1) as f64,
            DiscreteKind::Smld => 1.0,
            DiscreteKind::Ddpm => self.grid_time(i),
        }
    }
}

/// Run one chain `x₀ → x₁ → … → x_N`; returns the `N` visited states.
pub fn simulate_discrete_chain<R: RngCore + ?Sized>(
    schedule: &DiscreteSchedule,
    x0: &[f64],
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let mut x = x0.to_vec();
    let mut out = Vec::with_capacity(schedule.len());
    let mut prev_sigma = 0.0;
    for &v in &schedule.values {
        match schedule.kind {
            DiscreteKind::Smld => {
                let step = (v * v - prev_sigma * prev_sigma).sqrt();
                for xi in x.iter_mut() {
                    *xi += step * normal(rng);
                }
                prev_sigma = v;
            }
            DiscreteKind::Ddpm => {
                let (keep, noise) = ((1.0 - v).sqrt(), v.sqrt());
                for xi in x.iter_mut() {
                    *xi = keep * *xi + noise * normal(rng);
                }
            }
        }
        out.push(x.clone());
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelMatchRow {
    pub t: f64,
    pub discrete_std: f64,
    pub continuous_std: f64,
    pub discrete_mean_coeff: f64,
    pub continuous_mean_coeff: f64,
}

/// Discrete-vs-continuous kernel comparison.
///
/// `max_rel_*` are pointwise `max |d - c| / |c|`; `max_scaled_*` divide the
/// largest absolute gap by the largest continuous value in the column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelMatchReport {
    pub kind: SdeKind,
    pub n: usize,
    pub rows: Vec<KernelMatchRow>,
    pub max_rel_std: f64,
    pub max_rel_mean_coeff: f64,
    pub max_scaled_std: f64,
    pub max_scaled_mean_coeff: f64,
}

pub fn kernel_match_report(sde: &Sde, n: usize) -> Result<KernelMatchReport> {
    if n < 2 {
        return Err(Error::param("n", "kernel match needs at least 2 scales"));
    }
    let schedule = sde.discrete_schedule(n)?;
    let rows: Vec<KernelMatchRow> = (0..n)
        .map(|i| {
            let t = schedule.grid_time(i);
            let k = sde.kernel(t);
            KernelMatchRow {
                t,
                discrete_std: schedule.std_at(i),
                continuous_std: k.std,
                discrete_mean_coeff: schedule.mean_coeff_at(i),
                continuous_mean_coeff: k.mean_coeff,
            }
        })
        .collect();

    let rel = |d: f64, c: f64| (d - c).abs() / c.abs();
    let max_of = |it: &mut dyn Iterator<Item = f64>| it.fold(0.0f64, f64::max);
    let max_rel_std = max_of(&mut rows.iter().map(|r| rel(r.discrete_std, r.continuous_std)));
    let max_rel_mean_coeff = max_of(&mut rows.iter().map(|r| rel(r.discrete_mean_coeff, r.continuous_mean_coeff)));
    let peak_std = max_of(&mut rows.iter().map(|r| r.continuous_std.abs()));
    let peak_mean = max_of(&mut rows.iter().map(|r| r.continuous_mean_coeff.abs()));
    let max_scaled_std = max_of(&mut rows.iter().map(|r| (r.discrete_std - r.continuous_std).abs())) / peak_std;
    let max_scaled_mean_coeff = max_of(
        &mut rows
            .iter()
            .map(|r| (r.discrete_mean_coeff - r.continuous_mean_coeff).abs()),
    ) / peak_mean;

    Ok(KernelMatchReport {
        kind: sde.kind,
        n,
        rows,
        max_rel_std,
        max_rel_mean_coeff,
        max_scaled_std,
        max_scaled_mean_coeff,
    })
}
