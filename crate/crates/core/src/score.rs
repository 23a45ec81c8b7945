//! The score-function contract shared by analytic oracles, trained networks
//! and conditional compositions.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::rng::ChainRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreSource {
    Oracle,
    Network,
    Conditional,
}

/// `score(x, t) ≈ ∇ₓ log p_t(x)`.
///
/// Implementations must return finite values for finite `x` and
/// `t ∈ [eps_train, t_max]`, and must be callable from many threads.
pub trait ScoreFunction: Send + Sync {
    fn dim(&self) -> usize;

    fn source(&self) -> ScoreSource;

    fn score(&self, x: &[f64], t: f64) -> Vec<f64>;

    /// Scores that draw auxiliary randomness (forward-perturbed observations)
    /// override this; samplers always call it with the chain's stream.
    fn score_with_rng(&self, x: &[f64], t: f64, _rng: &mut ChainRng) -> Vec<f64> {
        self.score(x, t)
    }

    /// [`ScoreFunction::score_with_rng`] written into `out`.
    fn score_with_rng_into(&self, x: &[f64], t: f64, rng: &mut ChainRng, out: &mut [f64]) {
        out.copy_from_slice(&self.score_with_rng(x, t, rng));
    }

    /// Closed-form `∇ₓ · score`, when known.
    fn exact_divergence(&self, _x: &[f64], _t: f64) -> Option<f64> {
        None
    }
}

macro_rules! forward_score {
    ($($ptr:ty),*) => {$(
        impl<S: ScoreFunction + ?Sized> ScoreFunction for $ptr {
            fn dim(&self) -> usize {
                (**self).dim()
            }
            fn source(&self) -> ScoreSource {
                (**self).source()
            }
            fn score(&self, x: &[f64], t: f64) -> Vec<f64> {
                (**self).score(x, t)
            }
            fn score_with_rng(&self, x: &[f64], t: f64, rng: &mut ChainRng) -> Vec<f64> {
                (**self).score_with_rng(x, t, rng)
            }
            fn score_with_rng_into(&self, x: &[f64], t: f64, rng: &mut ChainRng, out: &mut [f64]) {
                (**self).score_with_rng_into(x, t, rng, out)
            }
            fn exact_divergence(&self, x: &[f64], t: f64) -> Option<f64> {
                (**self).exact_divergence(x, t)
            }
        }
    )*};
}

forward_score!(&S, Box<S>, Arc<S>);

/// Adapter for a closure `(x, t) -> score`.
pub struct FnScore<F> {
    dim: usize,
    source: ScoreSource,
    f: F,
}

impl<F> FnScore<F>
where
    F: Fn(&[f64], f64) -> Vec<f64> + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self {
            dim,
            source: ScoreSource::Oracle,
            f,
        }
    }

    pub fn with_source(mut self, source: ScoreSource) -> Self {
        self.source = source;
        self
    }
}

impl<F> ScoreFunction for FnScore<F>
where
    F: Fn(&[f64], f64) -> Vec<f64> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn source(&self) -> ScoreSource {
        self.source
    }
    fn score(&self, x: &[f64], t: f64) -> Vec<f64> {
        (self.f)(x, t)
    }
}
