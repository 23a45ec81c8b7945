//! Score-based generative modeling through stochastic differential equations,
//! at a scale where every quantity can be checked against a closed form.
//!
//! * [`sde`]: VE / VP / sub-VP forward processes, kernels and discrete chains.
//! * [`mixture`]: Gaussian-mixture data with exact time-`t` scores.
//! * [`net`]: a small time-conditioned MLP score model and its objectives.
//! * [`samplers`]: reverse-time predictors, Langevin correctors and PC sampling.
//! * [`flow`]: the probability-flow ODE, likelihoods and encodings.
//! * [`ode`]: an adaptive Dormand–Prince integrator.
//! * [`conditional`]: class-conditional sampling, imputation, inverse problems.
//! * [`metrics`]: moments, MMD, KS and Wasserstein statistics.

pub mod conditional;
pub mod error;
pub mod flow;
pub mod linalg;
pub mod metrics;
pub mod mixture;
pub mod net;
pub mod ode;
pub(crate) mod par;
pub mod rng;
pub mod samplers;
pub mod score;
pub mod sde;

pub use error::{Error, Result};
pub use flow::LikelihoodResult;
pub use mixture::{GaussianMixture, MixtureScore, PerturbedMixture};
pub use net::{MlpScoreNet, NetConfig, ScoreModel, TrainConfig};
pub use ode::OdeConfig;
pub use rng::ChainRng;
pub use samplers::{pc_sample, Corrector, PcConfig, Predictor, SampleBatch};
pub use score::{ScoreFunction, ScoreSource};
pub use sde::{build_sde, DiscreteSchedule, Kernel, Sde, SdeKind, SdeParams};
