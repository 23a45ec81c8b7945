//! A small time-conditioned MLP score model, its training objectives and an
//! Adam optimizer, all with hand-written reverse-mode gradients.
//!
//! Parameters live in one flat vector so optimizers, gradient checks and
//! checkpoints treat every model alike.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::draw_probes;
use crate::ode::ProbeKind;
use crate::rng::{self, normal_vec, ChainRng};
use crate::score::{ScoreFunction, ScoreSource};
use crate::sde::{DiscreteKind, DiscreteSchedule, Sde};

/// A differentiable score model with flat parameters.
pub trait ScoreModel: Send + Sync {
    fn dim(&self) -> usize;

    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    fn forward(&self, x: &[f64], t: f64) -> Vec<f64>;

    /// Add `∂⟨upstream, forward(x, t)⟩/∂θ` into `grad`.
    fn backward(&self, x: &[f64], t: f64, upstream: &[f64], grad: &mut [f64]);

    fn num_params(&self) -> usize {
        self.params().len()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub embed_width: usize,
    pub fourier_scale: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            hidden: vec![64, 64],
            embed_width: 32,
            fourier_scale: 16.0,
        }
    }
}

/// Fully connected SiLU network `s_θ(x, t) = out(x̃, e(t)) / s(t)`.
///
/// The input is `x̃ = x / √(m(t)² + s(t)²)` joined with random Fourier
/// features `sin(2πωt), cos(2πωt)` (ω fixed at construction) and the two
/// smooth features `t` and `ln s(t) / 4`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpScoreNet {
    dim: usize,
    config: NetConfig,
    sde: Sde,
    freqs: Vec<f64>,
    sizes: Vec<usize>,
    params: Vec<f64>,
}

const SMOOTH_FEATURES: usize = 2;

struct Cache {
    /// Layer inputs; `acts[0]` is the feature vector.
    acts: Vec<Vec<f64>>,
    /// Hidden pre-activations.
    pres: Vec<Vec<f64>>,
    out_scale: f64,
}

impl MlpScoreNet {
    pub fn new(dim: usize, config: NetConfig, sde: Sde, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("net.dim", "must be positive"));
        }
        if config.embed_width == 0 || !config.embed_width.is_multiple_of(2) {
            return Err(Error::param("net.embed_width", "must be a positive even number"));
        }
        if config.hidden.contains(&0) {
            return Err(Error::param("net.hidden", "widths must be positive"));
        }
        if !(config.fourier_scale > 0.0 && config.fourier_scale.is_finite()) {
            return Err(Error::param("net.fourier_scale", "must be positive"));
        }
        let mut rng = rng::stream(seed, "net-init", 0);
        let freqs: Vec<f64> = normal_vec(&mut rng, config.embed_width / 2)
            .into_iter()
            .map(|w| w * config.fourier_scale)
            .collect();
        let mut sizes = vec![dim + config.embed_width + SMOOTH_FEATURES];
        sizes.extend(&config.hidden);
        sizes.push(dim);
        let mut params = Vec::new();
        for w in sizes.windows(2) {
            let scale = (1.0 / w[0] as f64).sqrt();
            params.extend(normal_vec(&mut rng, w[0] * w[1]).into_iter().map(|v| v * scale));
            params.extend(std::iter::repeat_n(0.0, w[1]));
        }
        Ok(MlpScoreNet {
            dim,
            config,
            sde,
            freqs,
            sizes,
            params,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn sde(&self) -> &Sde {
        &self.sde
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.freqs
    }

    /// Set the output layer to zero, making the model output zero everywhere.
    pub fn zero_head(&mut self) {
        let n = self.sizes.len();
        let last = self.sizes[n - 2] * self.sizes[n - 1] + self.sizes[n - 1];
        let len = self.params.len();
        self.params[len - last..].fill(0.0);
    }

    fn features(&self, x: &[f64], t: f64) -> (Vec<f64>, f64) {
        let k = self.sde.kernel(t);
        let c_in = 1.0 / (k.mean_coeff * k.mean_coeff + k.variance()).sqrt();
        let mut f = Vec::with_capacity(self.sizes[0]);
        f.extend(x.iter().map(|v| v * c_in));
        for w in &self.freqs {
            let a = 2.0 * PI * w * t;
            f.push(a.sin());
            f.push(a.cos());
        }
        f.push(t);
        f.push(0.25 * k.std.ln());
        (f, 1.0 / k.std)
    }

    fn run(&self, x: &[f64], t: f64) -> (Vec<f64>, Cache) {
        assert_eq!(x.len(), self.dim, "input dimension mismatch");
        let (feat, out_scale) = self.features(x, t);
        let layers = self.sizes.len() - 1;
        let mut acts = vec![feat];
        let mut pres = Vec::with_capacity(layers - 1);
        let mut off = 0;
        let mut out = Vec::new();
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            let a = acts.last().expect("input layer present");
            let z: Vec<f64> = (0..n_out)
                .map(|r| {
                    let row = &w[r * n_in..(r + 1) * n_in];
                    b[r] + row.iter().zip(a).map(|(p, q)| p * q).sum::<f64>()
                })
                .collect();
            if l + 1 == layers {
                out = z.iter().map(|v| v * out_scale).collect();
            } else {
                acts.push(z.iter().map(|&v| silu(v)).collect());
                pres.push(z);
            }
        }
        (out, Cache { acts, pres, out_scale })
    }
}

impl ScoreModel for MlpScoreNet {
    fn dim(&self) -> usize {
        self.dim
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward(&self, x: &[f64], t: f64) -> Vec<f64> {
        self.run(x, t).0
    }

    fn backward(&self, x: &[f64], t: f64, upstream: &[f64], grad: &mut [f64]) {
        let (_, cache) = self.run(x, t);
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for l in 0..layers {
            offsets.push(off);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut delta: Vec<f64> = upstream.iter().map(|u| u * cache.out_scale).collect();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let o = offsets[l];
            let a = &cache.acts[l];
            for r in 0..n_out {
                let d = delta[r];
                if d != 0.0 {
                    let g = &mut grad[o + r * n_in..o + (r + 1) * n_in];
                    for (gi, ai) in g.iter_mut().zip(a) {
                        *gi += d * ai;
                    }
                }
                grad[o + n_in * n_out + r] += d;
            }
            if l == 0 {
                break;
            }
            let w = &self.params[o..o + n_in * n_out];
            let pre = &cache.pres[l - 1];
            let mut prev = vec![0.0; n_in];
            for (r, d) in delta.iter().enumerate() {
                if *d != 0.0 {
                    for (p, wi) in prev.iter_mut().zip(&w[r * n_in..(r + 1) * n_in]) {
                        *p += d * wi;
                    }
                }
            }
            for (p, z) in prev.iter_mut().zip(pre) {
                *p *= silu_grad(*z);
            }
            delta = prev;
        }
    }
}

impl ScoreFunction for MlpScoreNet {
    fn dim(&self) -> usize {
        self.dim
    }

    fn source(&self) -> ScoreSource {
        ScoreSource::Network
    }

    fn score(&self, x: &[f64], t: f64) -> Vec<f64> {
        self.forward(x, t)
    }
}

/// Time-independent affine score `Wx + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearScore {
    dim: usize,
    params: Vec<f64>,
}

impl LinearScore {
    pub fn new(dim: usize, weights: &[f64], bias: &[f64]) -> Result<Self> {
        if weights.len() != dim * dim || bias.len() != dim {
            return Err(Error::param("linear", "weights must be d×d and bias length d"));
        }
        let mut params = weights.to_vec();
        params.extend_from_slice(bias);
        Ok(LinearScore { dim, params })
    }

    pub fn zeros(dim: usize) -> Self {
        LinearScore {
            dim,
            params: vec![0.0; dim * dim + dim],
        }
    }
}

impl ScoreModel for LinearScore {
    fn dim(&self) -> usize {
        self.dim
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward(&self, x: &[f64], _t: f64) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|r| {
                self.params[d * d + r]
                    + self.params[r * d..(r + 1) * d]
                        .iter()
                        .zip(x)
                        .map(|(w, v)| w * v)
                        .sum::<f64>()
            })
            .collect()
    }

    fn backward(&self, x: &[f64], _t: f64, upstream: &[f64], grad: &mut [f64]) {
        let d = self.dim;
        for r in 0..d {
            for c in 0..d {
                grad[r * d + c] += upstream[r] * x[c];
            }
            grad[d * d + r] += upstream[r];
        }
    }
}

impl ScoreFunction for LinearScore {
    fn dim(&self) -> usize {
        self.dim
    }

    fn source(&self) -> ScoreSource {
        ScoreSource::Network
    }

    fn score(&self, x: &[f64], t: f64) -> Vec<f64> {
        self.forward(x, t)
    }
}

/// How training times are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum TimeSampler {
    /// `t ~ U[eps_train, t_max]`.
    Uniform,
    Fixed(f64),
}

impl TimeSampler {
    fn draw<R: RngCore + ?Sized>(self, sde: &Sde, rng: &mut R) -> f64 {
        match self {
            TimeSampler::Uniform => rng::uniform(rng, sde.eps_train, sde.t_max),
            TimeSampler::Fixed(t) => t,
        }
    }
}

fn check_batch(dim: usize, batch: &[Vec<f64>]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::param("batch", "must be nonempty"));
    }
    if let Some(x) = batch.iter().find(|x| x.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: x.len(),
        });
    }
    Ok(())
}

/// `‖std · s_θ(x̃, t) + z‖²` for `x̃ = m·x₀ + std·z`, with its gradient.
#[allow(clippy::too_many_arguments)]
fn dsm_term<M: ScoreModel + ?Sized>(
    model: &M,
    x0: &[f64],
    z: &[f64],
    t: f64,
    m: f64,
    std: f64,
    weight: f64,
    grad: &mut [f64],
) -> f64 {
    let xt: Vec<f64> = x0.iter().zip(z).map(|(x, e)| m * x + std * e).collect();
    let s = model.forward(&xt, t);
    let r: Vec<f64> = s.iter().zip(z).map(|(si, zi)| std * si + zi).collect();
    let up: Vec<f64> = r.iter().map(|ri| 2.0 * weight * std * ri).collect();
    model.backward(&xt, t, &up, grad);
    weight * r.iter().map(|v| v * v).sum::<f64>()
}

/// Continuous denoising score matching with `λ(t) = s(t)²`:
/// mean of `‖s(t)·s_θ(x_t, t) + z‖²` and its gradient.
pub fn dsm_loss_continuous<M: ScoreModel + ?Sized, R: RngCore + ?Sized>(
    model: &M,
    x0_batch: &[Vec<f64>],
    sde: &Sde,
    times: TimeSampler,
    rng: &mut R,
) -> Result<(f64, Vec<f64>)> {
    check_batch(model.dim(), x0_batch)?;
    let mut grad = vec![0.0; model.num_params()];
    let w = 1.0 / x0_batch.len() as f64;
    let mut loss = 0.0;
    for x0 in x0_batch {
        let t = times.draw(sde, rng);
        let z = normal_vec(rng, x0.len());
        let k = sde.kernel(t);
        loss += dsm_term(model, x0, &z, t, k.mean_coeff, k.std, w, &mut grad);
    }
    Ok((loss, grad))
}

/// One scale's weighted term `‖stdᵢ · s_θ(x̃, tᵢ) + z‖²` for a fixed `(x₀, z)`.
pub fn discrete_term<M: ScoreModel + ?Sized>(
    model: &M,
    x0: &[f64],
    z: &[f64],
    schedule: &DiscreteSchedule,
    i: usize,
) -> f64 {
    let mut scratch = vec![0.0; model.num_params()];
    dsm_term(
        model,
        x0,
        z,
        schedule.model_time(i),
        schedule.mean_coeff_at(i),
        schedule.std_at(i),
        1.0,
        &mut scratch,
    )
}

/// The SMLD (weights `σᵢ²`) or DDPM (weights `1 - αᵢ`) objective, averaged
/// over scales by drawing one index per sample.
pub fn discrete_loss<M: ScoreModel + ?Sized, R: RngCore + ?Sized>(
    model: &M,
    x0_batch: &[Vec<f64>],
    schedule: &DiscreteSchedule,
    rng: &mut R,
) -> Result<(f64, Vec<f64>)> {
    check_batch(model.dim(), x0_batch)?;
    let mut grad = vec![0.0; model.num_params()];
    let w = 1.0 / x0_batch.len() as f64;
    let mut loss = 0.0;
    for x0 in x0_batch {
        let i = if schedule.len() == 1 {
            0
        } else {
            rng.random_range(0..schedule.len())
        };
        let z = normal_vec(rng, x0.len());
        loss += dsm_term(
            model,
            x0,
            &z,
            schedule.model_time(i),
            schedule.mean_coeff_at(i),
            schedule.std_at(i),
            w,
            &mut grad,
        );
    }
    Ok((loss, grad))
}

/// Directional derivative `vᵀ (f(x+hv) - f(x-hv)) / 2h`.
pub fn directional_jacobian<F: Fn(&[f64]) -> Vec<f64>>(f: F, x: &[f64], v: &[f64], h: f64) -> f64 {
    let xp: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + h * b).collect();
    let xm: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - h * b).collect();
    let (fp, fm) = (f(&xp), f(&xm));
    v.iter()
        .zip(fp.iter().zip(&fm))
        .map(|(vi, (p, m))| vi * (p - m))
        .sum::<f64>()
        / (2.0 * h)
}

/// Sliced score matching on perturbed data with `λ(t) = s(t)²`:
/// mean of `λ(½‖s_θ‖² + vᵀ∇ₓs_θ v)` with a finite-difference directional derivative.
pub fn ssm_loss<M: ScoreModel + ?Sized, R: RngCore + ?Sized>(
    model: &M,
    x0_batch: &[Vec<f64>],
    sde: &Sde,
    times: TimeSampler,
    probe: ProbeKind,
    h: f64,
    rng: &mut R,
) -> Result<(f64, Vec<f64>)> {
    check_batch(model.dim(), x0_batch)?;
    if !(1e-5..=1e-2).contains(&h) {
        return Err(Error::param("train.ssm_h", "must lie in [1e-5, 1e-2]"));
    }
    let mut grad = vec![0.0; model.num_params()];
    let w = 1.0 / x0_batch.len() as f64;
    let mut loss = 0.0;
    for x0 in x0_batch {
        let t = times.draw(sde, rng);
        let z = normal_vec(rng, x0.len());
        let v = draw_probes(rng, probe, x0.len(), 1).pop().expect("one probe");
        let k = sde.kernel(t);
        let lam = w * k.variance();
        let xt: Vec<f64> = x0.iter().zip(&z).map(|(x, e)| k.mean_coeff * x + k.std * e).collect();
        let s = model.forward(&xt, t);
        let dir = directional_jacobian(|p| model.forward(p, t), &xt, &v, h);
        loss += lam * (0.5 * s.iter().map(|a| a * a).sum::<f64>() + dir);

        let up: Vec<f64> = s.iter().map(|a| lam * a).collect();
        model.backward(&xt, t, &up, &mut grad);
        let c = lam / (2.0 * h);
        let xp: Vec<f64> = xt.iter().zip(&v).map(|(a, b)| a + h * b).collect();
        let xm: Vec<f64> = xt.iter().zip(&v).map(|(a, b)| a - h * b).collect();
        let vp: Vec<f64> = v.iter().map(|a| c * a).collect();
        let vm: Vec<f64> = v.iter().map(|a| -c * a).collect();
        model.backward(&xp, t, &vp, &mut grad);
        model.backward(&xm, t, &vm, &mut grad);
    }
    Ok((loss, grad))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    #[serde(rename = "dsm")]
    DsmContinuous,
    #[serde(rename = "smld")]
    SmldDiscrete,
    #[serde(rename = "ddpm")]
    DdpmDiscrete,
    #[serde(rename = "ssm")]
    Ssm,
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::DsmContinuous => "dsm",
            Objective::SmldDiscrete => "smld",
            Objective::DdpmDiscrete => "ddpm",
            Objective::Ssm => "ssm",
        })
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "dsm" | "dsm_cont" => Ok(Objective::DsmContinuous),
            "smld" | "smld_discrete" => Ok(Objective::SmldDiscrete),
            "ddpm" | "ddpm_discrete" => Ok(Objective::DdpmDiscrete),
            "ssm" => Ok(Objective::Ssm),
            _ => Err(Error::param("train.objective", format!("unknown objective `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: Objective,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Scales of the discrete objectives.
    pub discrete_steps: usize,
    pub probe: ProbeKind,
    pub ssm_h: f64,
    /// Iterations per loss-curve entry.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            objective: Objective::DsmContinuous,
            iterations: 20_000,
            batch_size: 128,
            lr: 1e-3,
            seed: 0,
            discrete_steps: 1000,
            probe: ProbeKind::Rademacher,
            ssm_h: 1e-4,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::param("train.iterations", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("train.batch_size", "must be positive"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::param("train.lr", "must be finite and non-negative"));
        }
        if self.log_every == 0 {
            return Err(Error::param("train.log_every", "must be positive"));
        }
        if self.discrete_steps == 0 {
            return Err(Error::param("train.discrete_steps", "must be positive"));
        }
        if !(1e-5..=1e-2).contains(&self.ssm_h) {
            return Err(Error::param("train.ssm_h", "must lie in [1e-5, 1e-2]"));
        }
        Ok(())
    }
}

/// Mean loss over one logging window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub loss: f64,
}

/// Train `model` in place on minibatches from `data`.
///
/// Data come from stream `(seed, "train-data", 0)` and objective noise from
/// `(seed, "train-noise", 0)`, so runs are reproducible per seed.
pub fn train<M, D>(model: &mut M, data: D, sde: &Sde, cfg: &TrainConfig) -> Result<Vec<LossRecord>>
where
    M: ScoreModel + ?Sized,
    D: Fn(usize, &mut ChainRng) -> Vec<Vec<f64>>,
{
    cfg.validate()?;
    let schedule = match cfg.objective {
        Objective::SmldDiscrete => Some(DiscreteSchedule::smld(
            cfg.discrete_steps,
            sde.sigma_min,
            sde.sigma_max,
        )?),
        Objective::DdpmDiscrete => Some(DiscreteSchedule::ddpm(cfg.discrete_steps, sde.beta_min, sde.beta_max)?),
        _ => None,
    };
    let mut data_rng = rng::stream(cfg.seed, "train-data", 0);
    let mut noise_rng = rng::stream(cfg.seed, "train-noise", 0);
    let mut opt = Adam::new(model.num_params(), cfg.lr);
    let mut curve = Vec::new();
    let mut window = 0.0;
    for it in 0..cfg.iterations {
        let batch = data(cfg.batch_size, &mut data_rng);
        let (loss, grad) = match (cfg.objective, &schedule) {
            (Objective::DsmContinuous, _) => {
                dsm_loss_continuous(&*model, &batch, sde, TimeSampler::Uniform, &mut noise_rng)?
            }
            (Objective::Ssm, _) => ssm_loss(
                &*model,
                &batch,
                sde,
                TimeSampler::Uniform,
                cfg.probe,
                cfg.ssm_h,
                &mut noise_rng,
            )?,
            (_, Some(s)) => discrete_loss(&*model, &batch, s, &mut noise_rng)?,
            (_, None) => unreachable!("discrete objectives always build a schedule"),
        };
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { iteration: it, loss });
        }
        opt.update(model.params_mut(), &grad);
        if model.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFiniteLoss { iteration: it, loss });
        }
        window += loss;
        if (it + 1) % cfg.log_every == 0 || it + 1 == cfg.iterations {
            let len = (it % cfg.log_every) + 1;
            curve.push(LossRecord {
                iteration: it + 1,
                loss: window / len as f64,
            });
            window = 0.0;
        }
    }
    Ok(curve)
}

/// Squared error of `model` against `oracle` over points × times, and the
/// oracle's mean squared norm on the same set.
pub fn score_mse<A, B>(model: &A, oracle: &B, points: &[Vec<f64>], times: &[f64]) -> (f64, f64)
where
    A: ScoreFunction + ?Sized,
    B: ScoreFunction + ?Sized,
{
    let (mut err, mut norm2) = (0.0, 0.0);
    for &t in times {
        for x in points {
            let (a, b) = (model.score(x, t), oracle.score(x, t));
            err += a.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
            norm2 += b.iter().map(|q| q * q).sum::<f64>();
        }
    }
    let n = (points.len() * times.len()) as f64;
    (err / n, norm2 / n)
}

pub const CHECKPOINT_FORMAT: &str = "sdelab-mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    #[serde(flatten)]
    net: MlpScoreNet,
}

impl MlpScoreNet {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            net: self.clone(),
        })
        .expect("network serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        let net = ck.net;
        let mut expect_sizes = vec![net.dim + net.config.embed_width + SMOOTH_FEATURES];
        expect_sizes.extend(&net.config.hidden);
        expect_sizes.push(net.dim);
        let expect_params: usize = expect_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if net.sizes != expect_sizes
            || net.params.len() != expect_params
            || net.freqs.len() * 2 != net.config.embed_width
        {
            return Err(Error::Checkpoint(
                "architecture header does not match parameters".into(),
            ));
        }
        if net.params.iter().chain(&net.freqs).any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        Ok(net)
    }
}

/// Index of the discrete scale whose model time is nearest to `t`.
pub fn nearest_index(schedule: &DiscreteSchedule, t: f64) -> usize {
    let n = schedule.len();
    let pos = match schedule.kind {
        DiscreteKind::Smld if n > 1 => t * (n - 1) as f64,
        DiscreteKind::Smld => 0.0,
        DiscreteKind::Ddpm => t * n as f64 - 1.0,
    };
    (pos.round().max(0.0) as usize).min(n - 1)
}

/// A model trained on a discrete objective, queried at the scale nearest to `t`.
pub struct DiscreteIndexScore<M> {
    pub model: M,
    pub schedule: DiscreteSchedule,
}

impl<M: ScoreModel> ScoreFunction for DiscreteIndexScore<M> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn source(&self) -> ScoreSource {
        ScoreSource::Network
    }

    fn score(&self, x: &[f64], t: f64) -> Vec<f64> {
        let i = nearest_index(&self.schedule, t);
        self.model.forward(x, self.schedule.model_time(i))
    }
}
