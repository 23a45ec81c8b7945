//! Reverse-time samplers: predictors, the Langevin corrector and their
//! predictor-corrector composition.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::mixture::tweedie_from_score;
use crate::rng::{self, normal_vec, ChainRng};
use crate::score::ScoreFunction;
use crate::sde::{Sde, SdeKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predictor {
    EulerMaruyama,
    ReverseDiffusion,
    Ancestral,
    ProbFlow,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corrector {
    Langevin,
    None,
}

impl fmt::Display for Predictor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Predictor::EulerMaruyama => "euler_maruyama",
            Predictor::ReverseDiffusion => "reverse_diffusion",
            Predictor::Ancestral => "ancestral",
            Predictor::ProbFlow => "prob_flow",
            Predictor::None => "none",
        })
    }
}

impl FromStr for Predictor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "euler_maruyama" | "em" => Ok(Predictor::EulerMaruyama),
            "reverse_diffusion" | "rd" => Ok(Predictor::ReverseDiffusion),
            "ancestral" => Ok(Predictor::Ancestral),
            "prob_flow" | "pf" => Ok(Predictor::ProbFlow),
            "none" => Ok(Predictor::None),
            _ => Err(Error::param("sampler.predictor", format!("unknown predictor `{s}`"))),
        }
    }
}

impl fmt::Display for Corrector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Corrector::Langevin => "langevin",
            Corrector::None => "none",
        })
    }
}

impl FromStr for Corrector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "langevin" | "ald" => Ok(Corrector::Langevin),
            "none" => Ok(Corrector::None),
            _ => Err(Error::param("sampler.corrector", format!("unknown corrector `{s}`"))),
        }
    }
}

/// Default signal-to-noise ratio for the Langevin corrector.
pub fn default_snr(kind: SdeKind) -> f64 {
    match kind {
        SdeKind::Ve => 0.16,
        SdeKind::Vp | SdeKind::SubVp => 0.01,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcConfig {
    pub predictor: Predictor,
    pub corrector: Corrector,
    /// Predictor steps `N`.
    pub steps: usize,
    /// Corrector steps per predictor step `M`.
    pub corrector_steps: usize,
    pub snr: f64,
    pub denoise: bool,
    /// Overrides the SDE's sampling cutoff when set.
    pub eps_sample: Option<f64>,
    pub batch_size: usize,
    pub seed: u64,
    pub record_trajectory: bool,
}

impl PcConfig {
    /// Reverse-diffusion predictor, one Langevin step, `N = 1000`.
    pub fn for_sde(sde: &Sde) -> Self {
        PcConfig {
            predictor: Predictor::ReverseDiffusion,
            corrector: Corrector::Langevin,
            steps: 1000,
            corrector_steps: 1,
            snr: default_snr(sde.kind),
            denoise: true,
            eps_sample: None,
            batch_size: 1000,
            seed: 0,
            record_trajectory: false,
        }
    }

    pub fn eps(&self, sde: &Sde) -> f64 {
        self.eps_sample.unwrap_or(sde.eps_sample)
    }

    pub fn validate(&self, sde: &Sde) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::param("sampler.steps", "need at least one step"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("sampler.batch_size", "must be positive"));
        }
        if self.corrector == Corrector::Langevin && !(self.snr > 0.0 && self.snr.is_finite()) {
            return Err(Error::param("sampler.snr", "must be positive and finite"));
        }
        if self.predictor == Predictor::None && (self.corrector == Corrector::None || self.corrector_steps == 0) {
            return Err(Error::param(
                "sampler.predictor",
                "corrector-only sampling needs a Langevin corrector with at least one step",
            ));
        }
        if self.predictor == Predictor::Ancestral && sde.kind == SdeKind::SubVp {
            return Err(Error::Unsupported(
                "ancestral sampling is defined for VE and VP only".into(),
            ));
        }
        let eps = self.eps(sde);
        if !(eps >= sde.eps_train && eps < sde.t_max) {
            return Err(Error::param("sampler.eps_sample", "must lie in [eps_train, t_max)"));
        }
        Ok(())
    }

    /// Score evaluations spent per chain.
    pub fn score_evals(&self) -> usize {
        let per_step = usize::from(self.predictor != Predictor::None)
            + if self.corrector == Corrector::Langevin {
                self.corrector_steps
            } else {
                0
            };
        self.steps * per_step + usize::from(self.denoise)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub samples: Vec<Vec<f64>>,
    pub seed: u64,
    pub config: PcConfig,
    /// States after initialization and after every predictor-corrector step.
    pub trajectories: Option<Vec<Vec<Vec<f64>>>>,
    pub score_evals: usize,
}

/// Uniform grid `t_0 = eps < … < t_N = t_max`.
pub fn time_grid(eps: f64, t_max: f64, n: usize) -> Vec<f64> {
    (0..=n)
        .map(|i| {
            if i == n {
                t_max
            } else {
                eps + (t_max - eps) * i as f64 / n as f64
            }
        })
        .collect()
}

/// Discrete `β` of the VP step `t_from → t_to`: `1 - α(t_to)/α(t_from)`
/// with cumulative `α(t) = exp(-∫₀ᵗβ)`, so `1 - exp(-(B(t_from) - B(t_to)))`.
pub fn vp_step_beta(sde: &Sde, t_from: f64, t_to: f64) -> f64 {
    -(-(sde.int_beta(t_from) - sde.int_beta(t_to))).exp_m1()
}

/// One predictor update from `t_from` to `t_to < t_from` given the score at
/// `(x, t_from)` and a standard-normal draw `z`.
pub fn predictor_update(
    kind: Predictor,
    x: &[f64],
    score: &[f64],
    z: &[f64],
    t_from: f64,
    t_to: f64,
    sde: &Sde,
) -> Result<Vec<f64>> {
    let mut out = x.to_vec();
    predictor_update_in_place(kind, &mut out, score, z, t_from, t_to, sde)?;
    Ok(out)
}

/// [`predictor_update`] overwriting `x`.
pub fn predictor_update_in_place(
    kind: Predictor,
    x: &mut [f64],
    score: &[f64],
    z: &[f64],
    t_from: f64,
    t_to: f64,
    sde: &Sde,
) -> Result<()> {
    apply_coefficients(predictor_coefficients(kind, t_from, t_to, sde)?, x, score, z);
    Ok(())
}

/// Every predictor update has the form `x <- a·x + b·score + c·z`.
fn apply_coefficients((a, b, c): (f64, f64, f64), x: &mut [f64], score: &[f64], z: &[f64]) {
    for ((xi, si), zi) in x.iter_mut().zip(score).zip(z) {
        *xi = a * *xi + b * si + c * zi;
    }
}

fn predictor_coefficients(kind: Predictor, t_from: f64, t_to: f64, sde: &Sde) -> Result<(f64, f64, f64)> {
    let dt = t_from - t_to;
    let generic = |noise: bool, score_weight: f64| {
        let g = sde.diffusion(t_from);
        let noise = if noise { g * dt.sqrt() } else { 0.0 };
        (1.0 - sde.drift_coeff(t_from) * dt, score_weight * g * g * dt, noise)
    };
    Ok(match kind {
        Predictor::EulerMaruyama => generic(true, 1.0),
        Predictor::ProbFlow => generic(false, 0.5),
        Predictor::ReverseDiffusion => match sde.kind {
            SdeKind::Ve => {
                let d = sde.sigma(t_from).powi(2) - sde.sigma(t_to).powi(2);
                (1.0, d, d.sqrt())
            }
            SdeKind::Vp => {
                let beta = vp_step_beta(sde, t_from, t_to);
                (2.0 - (1.0 - beta).sqrt(), beta, beta.sqrt())
            }
            SdeKind::SubVp => generic(true, 1.0),
        },
        Predictor::Ancestral => match sde.kind {
            SdeKind::Ve => {
                let (sf2, st2) = (sde.sigma(t_from).powi(2), sde.sigma(t_to).powi(2));
                let d = sf2 - st2;
                (1.0, d, (st2 * d / sf2).sqrt())
            }
            SdeKind::Vp => {
                let beta = vp_step_beta(sde, t_from, t_to);
                let inv = 1.0 / (1.0 - beta).sqrt();
                (inv, beta * inv, beta.sqrt())
            }
            SdeKind::SubVp => {
                return Err(Error::Unsupported(
                    "ancestral sampling is defined for VE and VP only".into(),
                ))
            }
        },
        Predictor::None => (1.0, 0.0, 0.0),
    })
}

/// Evaluate the score, draw noise and apply one predictor update.
pub fn predictor_step<S: ScoreFunction + ?Sized>(
    kind: Predictor,
    x: &[f64],
    t_from: f64,
    t_to: f64,
    score_fn: &S,
    sde: &Sde,
    rng: &mut ChainRng,
) -> Result<Vec<f64>> {
    if kind == Predictor::None {
        return Ok(x.to_vec());
    }
    let s = score_fn.score_with_rng(x, t_from, rng);
    let z = if kind == Predictor::ProbFlow {
        vec![0.0; x.len()]
    } else {
        normal_vec(rng, x.len())
    };
    predictor_update(kind, x, &s, &z, t_from, t_to, sde)
}

/// `α` in the corrector step size: 1 for VE, `m(t)²` otherwise.
pub fn corrector_alpha(sde: &Sde, t: f64) -> f64 {
    match sde.kind {
        SdeKind::Ve => 1.0,
        SdeKind::Vp | SdeKind::SubVp => (-sde.int_beta(t)).exp(),
    }
}

/// `ε = 2α (r‖z‖/‖g‖)²`; `None` when `‖g‖ = 0`.
pub fn langevin_step_size(snr: f64, z_norm: f64, g_norm: f64, alpha: f64) -> Option<f64> {
    (g_norm > 0.0).then(|| 2.0 * alpha * (snr * z_norm / g_norm).powi(2))
}

/// Batches smaller than this use `√d` in place of the noise norm.
pub const SMALL_BATCH: usize = 8;

/// One Langevin corrector step on a single chain (`‖z‖` replaced by `√d`).
pub fn corrector_step<S: ScoreFunction + ?Sized>(
    x: &[f64],
    t: f64,
    score_fn: &S,
    sde: &Sde,
    snr: f64,
    rng: &mut ChainRng,
) -> Vec<f64> {
    let g = score_fn.score_with_rng(x, t, rng);
    let z = normal_vec(rng, x.len());
    match langevin_step_size(snr, (x.len() as f64).sqrt(), norm(&g), corrector_alpha(sde, t)) {
        Some(eps) => {
            let mut out = x.to_vec();
            langevin_update(&mut out, &g, &z, eps);
            out
        }
        None => x.to_vec(),
    }
}

fn langevin_update(x: &mut [f64], g: &[f64], z: &[f64], eps: f64) {
    let sn = (2.0 * eps).sqrt();
    for ((xi, gi), zi) in x.iter_mut().zip(g).zip(z) {
        *xi += eps * gi + sn * zi;
    }
}

/// Per-chain state adjustments applied before every score evaluation.
pub trait StateHook: Sync {
    fn apply(&self, x: &mut [f64], t: f64, rng: &mut ChainRng);

    /// Called once on each final sample.
    fn finish(&self, _x: &mut [f64]) {}
}

/// The hook that does nothing.
pub struct NoHook;

impl StateHook for NoHook {
    fn apply(&self, _x: &mut [f64], _t: f64, _rng: &mut ChainRng) {}
}

struct Chain {
    x: Vec<f64>,
    g: Vec<f64>,
    z: Vec<f64>,
    rng: ChainRng,
}

impl Chain {
    fn new(x: Vec<f64>, rng: ChainRng) -> Self {
        let z = vec![0.0; x.len()];
        Chain {
            x,
            g: z.clone(),
            z,
            rng,
        }
    }
}

fn fill_normal(rng: &mut ChainRng, z: &mut [f64]) {
    z.iter_mut().for_each(|v| *v = rng::normal(rng));
}

fn first_non_finite(chains: &[Chain], step: usize) -> Result<()> {
    if chains.iter().any(|c| c.x.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite { step });
    }
    Ok(())
}

/// Predictor-corrector sampling from the prior down to `eps_sample`.
pub fn pc_sample<S: ScoreFunction + ?Sized>(sde: &Sde, score_fn: &S, cfg: &PcConfig) -> Result<SampleBatch> {
    pc_sample_with_hook(sde, score_fn, cfg, &NoHook)
}

/// [`pc_sample`] with a [`StateHook`] run before each score evaluation.
///
/// Chain `i` draws from stream `(seed, "pc", i)`. The corrector step size
/// couples chains through batch-averaged norms, which are reduced in chain
/// order, so results do not depend on the thread count.
pub fn pc_sample_with_hook<S, H>(sde: &Sde, score_fn: &S, cfg: &PcConfig, hook: &H) -> Result<SampleBatch>
where
    S: ScoreFunction + ?Sized,
    H: StateHook + ?Sized,
{
    cfg.validate(sde)?;
    let dim = score_fn.dim();
    let grid = time_grid(cfg.eps(sde), sde.t_max, cfg.steps);
    let prior_std = sde.prior_std();
    let mut chains: Vec<Chain> = (0..cfg.batch_size)
        .map(|i| {
            let mut rng = rng::stream(cfg.seed, "pc", i as u64);
            let x = normal_vec(&mut rng, dim).into_iter().map(|v| v * prior_std).collect();
            Chain::new(x, rng)
        })
        .collect();
    let mut trajectories = cfg
        .record_trajectory
        .then(|| chains.iter().map(|c| vec![c.x.clone()]).collect::<Vec<_>>());

    for i in (0..cfg.steps).rev() {
        let (t_from, t_to) = (grid[i + 1], grid[i]);
        if cfg.predictor != Predictor::None {
            let coeffs = predictor_coefficients(cfg.predictor, t_from, t_to, sde)?;
            crate::par::map_mut(&mut chains, |_, c| {
                hook.apply(&mut c.x, t_from, &mut c.rng);
                score_fn.score_with_rng_into(&c.x, t_from, &mut c.rng, &mut c.g);
                if cfg.predictor == Predictor::ProbFlow {
                    c.z.fill(0.0);
                } else {
                    fill_normal(&mut c.rng, &mut c.z);
                }
                apply_coefficients(coeffs, &mut c.x, &c.g, &c.z);
            });
        }
        if cfg.corrector == Corrector::Langevin {
            for _ in 0..cfg.corrector_steps {
                langevin_batch_step(&mut chains, t_to, score_fn, sde, cfg.snr, hook);
            }
        }
        first_non_finite(&chains, i)?;
        if let Some(tr) = trajectories.as_mut() {
            for (t, c) in tr.iter_mut().zip(&chains) {
                t.push(c.x.clone());
            }
        }
    }

    let eps = grid[0];
    crate::par::map_mut(&mut chains, |_, c| {
        if cfg.denoise {
            hook.apply(&mut c.x, eps, &mut c.rng);
            let g = score_fn.score_with_rng(&c.x, eps, &mut c.rng);
            c.x = tweedie_from_score(&c.x, &g, eps, sde);
        }
        hook.finish(&mut c.x);
    });
    first_non_finite(&chains, 0)?;

    Ok(SampleBatch {
        samples: chains.into_iter().map(|c| c.x).collect(),
        seed: cfg.seed,
        config: cfg.clone(),
        trajectories,
        score_evals: cfg.score_evals(),
    })
}

fn langevin_batch_step<S, H>(chains: &mut [Chain], t: f64, score_fn: &S, sde: &Sde, snr: f64, hook: &H)
where
    S: ScoreFunction + ?Sized,
    H: StateHook + ?Sized,
{
    let norms: Vec<(f64, f64)> = crate::par::map_mut(chains, |_, c| {
        hook.apply(&mut c.x, t, &mut c.rng);
        score_fn.score_with_rng_into(&c.x, t, &mut c.rng, &mut c.g);
        fill_normal(&mut c.rng, &mut c.z);
        (norm(&c.g), norm(&c.z))
    });
    let n = norms.len() as f64;
    let g_norm = norms.iter().map(|(g, _)| g).sum::<f64>() / n;
    let z_norm = if norms.len() < SMALL_BATCH {
        (chains[0].x.len() as f64).sqrt()
    } else {
        norms.iter().map(|(_, z)| z).sum::<f64>() / n
    };
    let Some(eps) = langevin_step_size(snr, z_norm, g_norm, corrector_alpha(sde, t)) else {
        return;
    };
    crate::par::map_mut(chains, |_, c| langevin_update(&mut c.x, &c.g, &c.z, eps));
}
