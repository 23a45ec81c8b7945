//! Controllable generation: conditional scores, class-conditional sampling,
//! imputation, decoupled imputation in a rotated basis and linear inverse
//! problems.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::mixture::{ClassScore, GaussianMixture};
use crate::rng::{normal, normal_vec, ChainRng};
use crate::samplers::{pc_sample, pc_sample_with_hook, PcConfig, SampleBatch, StateHook};
use crate::score::{ScoreFunction, ScoreSource};
use crate::sde::Sde;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Observation {
    Class(usize),
    Mask { indices: Vec<usize>, values: Vec<f64> },
    Linear { a: Matrix, y: Vec<f64>, noise_std: f64 },
}

impl Observation {
    /// Check the observation against a data dimension and, for class
    /// labels, a component count.
    pub fn validate(&self, dim: usize, components: Option<usize>) -> Result<()> {
        match self {
            Observation::Class(k) => match components {
                Some(c) if *k < c => Ok(()),
                Some(c) => Err(Error::InvalidLabel {
                    label: *k,
                    components: c,
                }),
                None => Err(Error::Unsupported("class observations need a mixture".into())),
            },
            Observation::Mask { indices, values } => validate_mask(dim, indices, values),
            Observation::Linear { a, y, noise_std } => {
                if a.cols != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: a.cols,
                    });
                }
                if y.len() != a.rows {
                    return Err(Error::DimensionMismatch {
                        expected: a.rows,
                        got: y.len(),
                    });
                }
                if !(*noise_std >= 0.0 && noise_std.is_finite()) {
                    return Err(Error::param("observation.noise_std", "must be finite and non-negative"));
                }
                if a.rank(1e-10) < a.rows {
                    return Err(Error::param("observation.a", "must have full row rank"));
                }
                Ok(())
            }
        }
    }
}

fn validate_mask(dim: usize, indices: &[usize], values: &[f64]) -> Result<()> {
    if indices.is_empty() || indices.len() >= dim {
        return Err(Error::param(
            "observation.indices",
            "mask must be a nonempty proper subset",
        ));
    }
    if indices.len() != values.len() {
        return Err(Error::DimensionMismatch {
            expected: indices.len(),
            got: values.len(),
        });
    }
    let mut seen = vec![false; dim];
    for &i in indices {
        if i >= dim || seen[i] {
            return Err(Error::param(
                "observation.indices",
                "indices must be unique and in range",
            ));
        }
        seen[i] = true;
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("observation.values", "must be finite"));
    }
    Ok(())
}

/// `base(x, t) + obs_grad(x, t)`.
pub struct ConditionalScore<B, G> {
    base: B,
    obs_grad: G,
}

pub fn conditional_score<B, G>(base: B, obs_grad: G) -> ConditionalScore<B, G>
where
    B: ScoreFunction,
    G: Fn(&[f64], f64) -> Vec<f64> + Send + Sync,
{
    ConditionalScore { base, obs_grad }
}

impl<B, G> ScoreFunction for ConditionalScore<B, G>
where
    B: ScoreFunction,
    G: Fn(&[f64], f64) -> Vec<f64> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn source(&self) -> ScoreSource {
        ScoreSource::Conditional
    }

    fn score(&self, x: &[f64], t: f64) -> Vec<f64> {
        let mut s = self.base.score(x, t);
        for (a, b) in s.iter_mut().zip((self.obs_grad)(x, t)) {
            *a += b;
        }
        s
    }

    fn score_with_rng(&self, x: &[f64], t: f64, rng: &mut ChainRng) -> Vec<f64> {
        let mut s = self.base.score_with_rng(x, t, rng);
        for (a, b) in s.iter_mut().zip((self.obs_grad)(x, t)) {
            *a += b;
        }
        s
    }
}

/// PC sampling from mixture component `k` through its exact class score.
pub fn class_conditional_sample(gmm: &GaussianMixture, sde: &Sde, k: usize, cfg: &PcConfig) -> Result<SampleBatch> {
    let score = ClassScore::new(gmm.clone(), *sde, k)?;
    pc_sample(sde, &score, cfg)
}

/// Overwrites known coordinates with draws from `N(m(t)·y, s(t)²)` before
/// every score evaluation and with `y` itself at the end.
pub struct ImputeHook {
    sde: Sde,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl ImputeHook {
    pub fn new(sde: Sde, dim: usize, indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        validate_mask(dim, &indices, &values)?;
        Ok(ImputeHook { sde, indices, values })
    }
}

impl StateHook for ImputeHook {
    fn apply(&self, x: &mut [f64], t: f64, rng: &mut ChainRng) {
        let k = self.sde.kernel(t);
        for (&i, &y) in self.indices.iter().zip(&self.values) {
            x[i] = k.mean_coeff * y + k.std * normal(rng);
        }
    }

    fn finish(&self, x: &mut [f64]) {
        for (&i, &y) in self.indices.iter().zip(&self.values) {
            x[i] = y;
        }
    }
}

/// Sample the unknown coordinates given `x[indices] = values`. Returned
/// vectors are full-length with the known coordinates echoed.
pub fn impute<S: ScoreFunction + ?Sized>(
    score_fn: &S,
    sde: &Sde,
    indices: &[usize],
    values: &[f64],
    cfg: &PcConfig,
) -> Result<SampleBatch> {
    let hook = ImputeHook::new(*sde, score_fn.dim(), indices.to_vec(), values.to_vec())?;
    pc_sample_with_hook(sde, score_fn, cfg, &hook)
}

/// Drop the coordinates listed in `indices` from every sample.
pub fn unknown_coordinates(samples: &[Vec<f64>], indices: &[usize]) -> Vec<Vec<f64>> {
    samples
        .iter()
        .map(|x| {
            x.iter()
                .enumerate()
                .filter(|(i, _)| !indices.contains(i))
                .map(|(_, v)| *v)
                .collect()
        })
        .collect()
}

/// Score of `u = Cᵀx`: `Cᵀ score(Cu, t)`.
pub struct RotatedScore<'a, S: ?Sized> {
    inner: &'a S,
    c: Matrix,
}

impl<'a, S: ScoreFunction + ?Sized> RotatedScore<'a, S> {
    pub fn new(inner: &'a S, c: Matrix) -> Result<Self> {
        check_orthogonal(&c, inner.dim())?;
        Ok(RotatedScore { inner, c })
    }
}

impl<S: ScoreFunction + ?Sized> ScoreFunction for RotatedScore<'_, S> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn source(&self) -> ScoreSource {
        self.inner.source()
    }

    fn score(&self, u: &[f64], t: f64) -> Vec<f64> {
        self.c.tr_mul_vec(&self.inner.score(&self.c.mul_vec(u), t))
    }

    fn score_with_rng(&self, u: &[f64], t: f64, rng: &mut ChainRng) -> Vec<f64> {
        self.c
            .tr_mul_vec(&self.inner.score_with_rng(&self.c.mul_vec(u), t, rng))
    }
}

pub const ORTHOGONALITY_TOL: f64 = 1e-10;

fn check_orthogonal(c: &Matrix, dim: usize) -> Result<()> {
    if c.rows != dim || c.cols != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: c.rows.max(c.cols),
        });
    }
    if c.orthogonality_defect() > ORTHOGONALITY_TOL {
        return Err(Error::param("c", "matrix is not orthogonal"));
    }
    Ok(())
}

/// Impute in the basis `u = Cᵀx` and map the samples back to `x = Cu`.
/// `indices` and `values` refer to coordinates of `u`.
pub fn decoupled_impute<S: ScoreFunction + ?Sized>(
    score_fn: &S,
    sde: &Sde,
    c: &Matrix,
    indices: &[usize],
    values: &[f64],
    cfg: &PcConfig,
) -> Result<SampleBatch> {
    let rotated = RotatedScore::new(score_fn, c.clone())?;
    let mut batch = impute(&rotated, sde, indices, values, cfg)?;
    for x in batch.samples.iter_mut() {
        *x = c.mul_vec(x);
    }
    if let Some(tr) = batch.trajectories.as_mut() {
        for x in tr.iter_mut().flatten() {
            *x = c.mul_vec(x);
        }
    }
    Ok(batch)
}

/// The orthonormal matrix used to separate an RGB pixel into an intensity
/// channel and two colour channels, built from exact square roots.
pub fn decoupling_matrix() -> Matrix {
    let (a, b, c, d) = (
        1.0 / 3f64.sqrt(),
        (2.0f64 / 3.0).sqrt(),
        1.0 / 6f64.sqrt(),
        1.0 / 2f64.sqrt(),
    );
    Matrix::from_rows(&[vec![a, -b, 0.0], vec![a, c, d], vec![a, c, -d]]).expect("3×3 rows")
}

/// Base score plus the gradient of `log N(ŷ(t); Ax, (σ_y² + s(t)²)I)` with
/// `ŷ(t) ~ N(m(t)y, s(t)²I)` drawn per evaluation from the chain stream.
/// Without a stream, `ŷ(t)` is replaced by its mean.
pub struct LinearInverseScore<B> {
    base: B,
    sde: Sde,
    a: Matrix,
    y: Vec<f64>,
    noise_std: f64,
}

pub fn linear_inverse_score<B: ScoreFunction>(
    base: B,
    sde: Sde,
    a: Matrix,
    y: Vec<f64>,
    noise_std: f64,
) -> Result<LinearInverseScore<B>> {
    let obs = Observation::Linear { a, y, noise_std };
    obs.validate(base.dim(), None)?;
    let Observation::Linear { a, y, noise_std } = obs else {
        unreachable!()
    };
    Ok(LinearInverseScore {
        base,
        sde,
        a,
        y,
        noise_std,
    })
}

impl<B: ScoreFunction> LinearInverseScore<B> {
    fn with_observation(&self, mut s: Vec<f64>, x: &[f64], y_hat: &[f64], t: f64) -> Vec<f64> {
        let var = self.noise_std.powi(2) + self.sde.kernel(t).variance();
        let ax = self.a.mul_vec(x);
        let resid: Vec<f64> = y_hat.iter().zip(&ax).map(|(p, q)| (p - q) / var).collect();
        for (a, b) in s.iter_mut().zip(self.a.tr_mul_vec(&resid)) {
            *a += b;
        }
        s
    }
}

impl<B: ScoreFunction> ScoreFunction for LinearInverseScore<B> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn source(&self) -> ScoreSource {
        ScoreSource::Conditional
    }

    fn score(&self, x: &[f64], t: f64) -> Vec<f64> {
        let m = self.sde.kernel(t).mean_coeff;
        let y_hat: Vec<f64> = self.y.iter().map(|v| m * v).collect();
        self.with_observation(self.base.score(x, t), x, &y_hat, t)
    }

    fn score_with_rng(&self, x: &[f64], t: f64, rng: &mut ChainRng) -> Vec<f64> {
        let k = self.sde.kernel(t);
        let y_hat: Vec<f64> = self
            .y
            .iter()
            .zip(normal_vec(rng, self.y.len()))
            .map(|(v, z)| k.mean_coeff * v + k.std * z)
            .collect();
        let base = self.base.score_with_rng(x, t, rng);
        self.with_observation(base, x, &y_hat, t)
    }
}
