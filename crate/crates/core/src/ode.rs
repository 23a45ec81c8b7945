//! Dormand–Prince 5(4) with an embedded error estimate and PI step control.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeKind {
    Rademacher,
    Gaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DivergenceMode {
    /// Skilling–Hutchinson trace estimate with finite-difference JVPs.
    Hutchinson,
    /// Closed-form divergence supplied by the score (oracles only).
    Exact,
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProbeKind::Rademacher => "rademacher",
            ProbeKind::Gaussian => "gaussian",
        })
    }
}

impl FromStr for ProbeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rademacher" => Ok(ProbeKind::Rademacher),
            "gaussian" => Ok(ProbeKind::Gaussian),
            _ => Err(Error::param("probe", format!("unknown probe distribution `{s}`"))),
        }
    }
}

impl fmt::Display for DivergenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DivergenceMode::Hutchinson => "hutchinson",
            DivergenceMode::Exact => "exact",
        })
    }
}

impl FromStr for DivergenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hutchinson" => Ok(DivergenceMode::Hutchinson),
            "exact" => Ok(DivergenceMode::Exact),
            _ => Err(Error::param("ode.divergence", format!("unknown divergence mode `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdeConfig {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// `None` selects the initial step automatically.
    pub first_step: Option<f64>,
    pub probes: usize,
    pub probe: ProbeKind,
    pub divergence: DivergenceMode,
}

impl Default for OdeConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-5,
            atol: 1e-5,
            max_steps: 100_000,
            first_step: None,
            probes: 1,
            probe: ProbeKind::Rademacher,
            divergence: DivergenceMode::Hutchinson,
        }
    }
}

impl OdeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.rtol.is_finite()) {
            return Err(Error::param("ode.rtol", "must be positive"));
        }
        if !(self.atol > 0.0 && self.atol.is_finite()) {
            return Err(Error::param("ode.atol", "must be positive"));
        }
        if self.max_steps == 0 {
            return Err(Error::param("ode.max_steps", "must be positive"));
        }
        if self.probes == 0 {
            return Err(Error::param("ode.probes", "need at least one probe"));
        }
        if let Some(h) = self.first_step {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::param("ode.first_step", "must be positive"));
            }
        }
        Ok(())
    }

    /// Same configuration with both tolerances multiplied by `factor`.
    pub fn scaled_tolerances(mut self, factor: f64) -> Self {
        self.rtol *= factor;
        self.atol *= factor;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OdeSolution {
    pub y: Vec<f64>,
    pub nfe: usize,
    pub accepted: usize,
    pub rejected: usize,
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// Fifth-order minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;
const PI_BETA: f64 = 0.04;

fn rms_scaled(v: &[f64], y0: &[f64], y1: &[f64], cfg: &OdeConfig) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let sum: f64 = v
        .iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| {
            let scale = cfg.atol + cfg.rtol * a.abs().max(b.abs());
            (e / scale).powi(2)
        })
        .sum();
    (sum / v.len() as f64).sqrt()
}

fn initial_step<F>(rhs: &mut F, t0: f64, y0: &[f64], f0: &[f64], dir: f64, cfg: &OdeConfig, span: f64) -> (f64, usize)
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let d0 = rms_scaled(y0, y0, y0, cfg);
    let d1 = rms_scaled(f0, y0, y0, cfg);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + dir * h0 * f).collect();
    let mut f1 = vec![0.0; y0.len()];
    rhs(t0 + dir * h0, &y1, &mut f1);
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| (a - b) / h0).collect();
    let d2 = rms_scaled(&diff, y0, y0, cfg);
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    ((100.0 * h0).min(h1).min(span), 1)
}

/// Integrate `dy/dt = rhs(t, y)` from `t0` to `t1` (either direction).
///
/// `rhs(t, y, out)` writes the derivative into `out`. Returns the terminal
/// state and the number of right-hand-side evaluations.
pub fn rk45_integrate<F>(mut rhs: F, y0: &[f64], t0: f64, t1: f64, cfg: &OdeConfig) -> Result<OdeSolution>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    cfg.validate()?;
    if !(t0.is_finite() && t1.is_finite()) || t0 == t1 {
        return Err(Error::param("t1", "integration interval must be finite and non-empty"));
    }
    let n = y0.len();
    let dir = (t1 - t0).signum();
    let span = (t1 - t0).abs();

    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut y = y0.to_vec();
    let mut y_new = vec![0.0; n];
    let mut stage = vec![0.0; n];
    let mut err = vec![0.0; n];

    let mut t = t0;
    rhs(t, &y, &mut k[0]);
    let mut nfe = 1;
    let mut h = match cfg.first_step {
        Some(h) => h.min(span),
        None => {
            let (h, used) = initial_step(&mut rhs, t0, &y, &k[0].clone(), dir, cfg, span);
            nfe += used;
            h
        }
    };

    let mut err_old = 1e-4f64;
    let mut last_rejected = false;
    let (mut accepted, mut rejected) = (0usize, 0usize);

    loop {
        if accepted + rejected >= cfg.max_steps {
            return Err(Error::MaxStepsExceeded {
                max_steps: cfg.max_steps,
                t,
            });
        }
        let remaining = (t1 - t).abs();
        let min_step = 10.0 * f64::EPSILON * t.abs().max(f64::MIN_POSITIVE);
        if h < min_step {
            return Err(Error::StepUnderflow { t, h });
        }
        let last = h >= remaining;
        if last {
            h = remaining;
        }
        let hs = dir * h;

        for s in 1..7 {
            stage.copy_from_slice(&y);
            for (j, kj) in k.iter().enumerate().take(s) {
                let a = A[s][j];
                if a != 0.0 {
                    for (st, kv) in stage.iter_mut().zip(kj) {
                        *st += hs * a * kv;
                    }
                }
            }
            let ts = if s == 6 { t + hs } else { t + C[s] * hs };
            if s == 6 {
                y_new.copy_from_slice(&stage);
            }
            rhs(ts, &stage, &mut k[s]);
            nfe += 1;
        }

        for i in 0..n {
            err[i] = hs * (0..7).map(|s| E[s] * k[s][i]).sum::<f64>();
        }
        let err_norm = rms_scaled(&err, &y, &y_new, cfg);

        if err_norm <= 1.0 {
            accepted += 1;
            t = if last { t1 } else { t + hs };
            y.copy_from_slice(&y_new);
            k.swap(0, 6);
            if last {
                return Ok(OdeSolution {
                    y,
                    nfe,
                    accepted,
                    rejected,
                });
            }
            let mut factor = if err_norm == 0.0 {
                MAX_FACTOR
            } else {
                SAFETY * err_norm.powf(-(0.2 - 0.75 * PI_BETA)) * err_old.powf(PI_BETA)
            };
            factor = factor.clamp(MIN_FACTOR, MAX_FACTOR);
            if last_rejected {
                factor = factor.min(1.0);
            }
            h *= factor;
            err_old = err_norm.max(1e-4);
            last_rejected = false;
        } else {
            rejected += 1;
            h *= if err_norm.is_finite() {
                (SAFETY * err_norm.powf(-0.2)).clamp(MIN_FACTOR, 1.0)
            } else {
                MIN_FACTOR
            };
            last_rejected = true;
        }
    }
}
