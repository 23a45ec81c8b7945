//! Flat `key=value` experiment configuration.
//!
//! A config is a list of dotted keys, one per line; `#` starts a comment.
//! Command-line `--set` overrides are applied on top of the file. Unknown
//! keys are rejected, and every key has a default except `task`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use sdelab::linalg::Matrix;
use sdelab::net::{NetConfig, Objective, TrainConfig};
use sdelab::ode::{DivergenceMode, OdeConfig, ProbeKind};
use sdelab::samplers::default_snr;
use sdelab::{build_sde, Corrector, GaussianMixture, PcConfig, Predictor, Sde, SdeKind, SdeParams};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Sample,
    Train,
    Likelihood,
    Encode,
    Decode,
    Impute,
    Condition,
    KernelCheck,
    VarianceCheck,
    SamplerBench,
    Identifiability,
}

impl Task {
    pub const ALL: [Task; 11] = [
        Task::Sample,
        Task::Train,
        Task::Likelihood,
        Task::Encode,
        Task::Decode,
        Task::Impute,
        Task::Condition,
        Task::KernelCheck,
        Task::VarianceCheck,
        Task::SamplerBench,
        Task::Identifiability,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::Sample => "sample",
            Task::Train => "train",
            Task::Likelihood => "likelihood",
            Task::Encode => "encode",
            Task::Decode => "decode",
            Task::Impute => "impute",
            Task::Condition => "condition",
            Task::KernelCheck => "kernel-check",
            Task::VarianceCheck => "variance-check",
            Task::SamplerBench => "sampler-bench",
            Task::Identifiability => "identifiability",
        }
    }

    /// Config blocks the task reads.
    pub fn blocks(self) -> &'static str {
        match self {
            Task::Sample => "sde, data, score, sampler, metrics",
            Task::Train => "sde, data, net, train",
            Task::Likelihood => "sde, data, score, ode, points",
            Task::Encode => "sde, data, score, ode, points",
            Task::Decode => "sde, data, score, ode, points",
            Task::Impute => "sde, data, score, sampler, impute",
            Task::Condition => "sde, data, score, sampler, condition",
            Task::KernelCheck => "sde, check",
            Task::VarianceCheck => "sde, check",
            Task::SamplerBench => "sde, data, score, sampler, bench, metrics",
            Task::Identifiability => "sde, data, net, train, ode, ident",
        }
    }

    pub fn summary(self) -> &'static str {
        match self {
            Task::Sample => "predictor-corrector sampling",
            Task::Train => "train a score network and write a checkpoint",
            Task::Likelihood => "exact log-likelihood through the probability flow",
            Task::Encode => "map data points to latents with the probability flow",
            Task::Decode => "decode prior draws with the probability flow",
            Task::Impute => "sample unknown coordinates given observed ones",
            Task::Condition => "class-conditional or linear-inverse sampling",
            Task::KernelCheck => "discrete vs continuous perturbation kernels",
            Task::VarianceCheck => "VP and sub-VP variance trajectories",
            Task::SamplerBench => "PC vs predictor-only at equal score budget",
            Task::Identifiability => "latent agreement of two independently trained nets",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        Task::ALL
            .into_iter()
            .find(|t| t.name() == key)
            .ok_or_else(|| CliError::new("invalid_value", "task", format!("unknown task `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ScoreSpec {
    Oracle,
    Checkpoint(PathBuf),
    Train,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConditionKind {
    Class,
    Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointsSpec {
    pub count: usize,
    pub file: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImputeSpec {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    pub decouple: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionSpec {
    pub kind: ConditionKind,
    pub class: usize,
    pub a: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub noise_std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckSpec {
    pub steps: usize,
    pub grid: usize,
    pub sigma0_sq: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchSpec {
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdentSpec {
    pub width_a: usize,
    pub width_b: usize,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub seed: u64,
    pub out: PathBuf,
    pub sde: Sde,
    pub data: GaussianMixture,
    pub score: ScoreSpec,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub sampler: PcConfig,
    pub ode: OdeConfig,
    pub points: PointsSpec,
    pub impute: ImputeSpec,
    pub condition: ConditionSpec,
    pub check: CheckSpec,
    pub bench: BenchSpec,
    pub ident: IdentSpec,
    pub bandwidth: f64,
}

/// Raw `key=value` entries, later entries overriding earlier ones.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse_text(text: &str) -> CliResult<Self> {
        let mut raw = RawConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            raw.set_pair(line).map_err(|mut e| {
                e.message = format!("line {}: {}", lineno + 1, e.message);
                e
            })?;
        }
        Ok(raw)
    }

    /// Apply one `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> CliResult<()> {
        let (key, value) = pair.split_once('=').ok_or_else(|| CliError {
            code: "syntax",
            field: None,
            message: format!("expected key=value, got `{pair}`"),
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(CliError {
                code: "syntax",
                field: None,
                message: format!("empty key in `{pair}`"),
            });
        }
        self.entries.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }
}

struct Reader {
    entries: BTreeMap<String, String>,
}

impl Reader {
    fn raw(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    fn get<T: FromStr>(&mut self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| CliError::new("invalid_value", key, format!("cannot parse `{v}`: {e}"))),
        }
    }

    fn or<T: FromStr>(&mut self, key: &str, default: T) -> CliResult<T>
    where
        T::Err: fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn list<T: FromStr>(&mut self, key: &str, default: Vec<T>) -> CliResult<Vec<T>>
    where
        T::Err: fmt::Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => parse_list(&v).map_err(|m| CliError::new("invalid_value", key, m)),
        }
    }

    fn nested(&mut self, key: &str, default: Vec<Vec<f64>>) -> CliResult<Vec<Vec<f64>>> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) if v.is_empty() => Ok(Vec::new()),
            Some(v) => v
                .split(';')
                .map(parse_list)
                .collect::<Result<_, _>>()
                .map_err(|m| CliError::new("invalid_value", key, m)),
        }
    }

    fn positive(&mut self, key: &str, default: f64) -> CliResult<f64> {
        let v: f64 = self.or(key, default)?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(CliError::new("out_of_range", key, format!("must be positive, got {v}")));
        }
        Ok(v)
    }

    fn count(&mut self, key: &str, default: usize) -> CliResult<usize> {
        let v: usize = self.or(key, default)?;
        if v == 0 {
            return Err(CliError::new("out_of_range", key, "must be at least 1"));
        }
        Ok(v)
    }
}

fn parse_list<T: FromStr>(text: &str) -> Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|e| format!("cannot parse `{}`: {e}", s.trim()))
        })
        .collect()
}

fn join<T: fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn join_nested(xs: &[Vec<f64>]) -> String {
    xs.iter().map(|x| join(x)).collect::<Vec<_>>().join(";")
}

fn located(key: &str) -> impl Fn(sdelab::Error) -> CliError + '_ {
    move |e| {
        let mut c = CliError::from(e);
        if c.field.is_none() {
            c.field = Some(key.to_string());
        }
        c.code = "invalid_config";
        c
    }
}

impl ExperimentConfig {
    /// Resolve raw entries into a validated config.
    pub fn from_raw(raw: &RawConfig) -> CliResult<Self> {
        let mut r = Reader {
            entries: raw.entries.clone(),
        };
        let task: Task = r
            .get("task")?
            .ok_or_else(|| CliError::new("missing_key", "task", "no task given"))?;
        let seed: u64 = r.or("seed", 0)?;
        let out = PathBuf::from(r.raw("out").unwrap_or_else(|| "out".into()));

        let kind: SdeKind = r.or("sde.kind", SdeKind::Vp).map_err(|mut e| {
            e.field = Some("sde.kind".into());
            e
        })?;
        let params = SdeParams {
            sigma_min: r.get("sde.sigma_min")?,
            sigma_max: r.get("sde.sigma_max")?,
            beta_min: r.get("sde.beta_min")?,
            beta_max: r.get("sde.beta_max")?,
            t_max: r.get("sde.t_max")?,
            eps_train: r.get("sde.eps_train")?,
            eps_sample: r.get("sde.eps_sample")?,
        };
        let sde = build_sde(kind, params).map_err(|e| prefix_field(e, "sde."))?;

        let weights: Vec<f64> = r.list("data.weights", vec![0.3, 0.7])?;
        let means = r.nested("data.means", vec![vec![-2.0], vec![2.0]])?;
        let variances = r.nested("data.variances", vec![vec![0.25], vec![0.25]])?;
        let data = GaussianMixture::new(weights, means, variances).map_err(|e| prefix_field(e, "data."))?;

        let score = match r.raw("score.source").as_deref().unwrap_or("oracle") {
            "oracle" => ScoreSpec::Oracle,
            "train" => ScoreSpec::Train,
            "checkpoint" => ScoreSpec::Checkpoint(PathBuf::new()),
            other => {
                return Err(CliError::new(
                    "invalid_value",
                    "score.source",
                    format!("expected oracle, checkpoint or train, got `{other}`"),
                ))
            }
        };
        let checkpoint = r.raw("score.checkpoint").unwrap_or_default();
        let score = match score {
            ScoreSpec::Checkpoint(_) if checkpoint.is_empty() => {
                return Err(CliError::new(
                    "missing_key",
                    "score.checkpoint",
                    "score.source=checkpoint needs a checkpoint path",
                ))
            }
            ScoreSpec::Checkpoint(_) => ScoreSpec::Checkpoint(PathBuf::from(checkpoint)),
            other => other,
        };

        let net_default = NetConfig::default();
        let net = NetConfig {
            hidden: r.list("net.hidden", net_default.hidden)?,
            embed_width: r.count("net.embed_width", net_default.embed_width)?,
            fourier_scale: r.positive("net.fourier_scale", net_default.fourier_scale)?,
        };
        if net.hidden.contains(&0) {
            return Err(CliError::new("out_of_range", "net.hidden", "widths must be positive"));
        }

        let td = TrainConfig::default();
        let objective = match r.raw("train.objective") {
            None => td.objective,
            Some(v) => v.parse::<Objective>().map_err(located("train.objective"))?,
        };
        let probe = match r.raw("train.probe") {
            None => td.probe,
            Some(v) => v.parse::<ProbeKind>().map_err(located("train.probe"))?,
        };
        let train = TrainConfig {
            objective,
            iterations: r.or("train.iterations", td.iterations)?,
            batch_size: r.or("train.batch_size", td.batch_size)?,
            lr: r.or("train.lr", td.lr)?,
            seed,
            discrete_steps: r.or("train.discrete_steps", td.discrete_steps)?,
            probe,
            ssm_h: r.or("train.ssm_h", td.ssm_h)?,
            log_every: r.or("train.log_every", td.log_every)?,
        };
        train.validate()?;

        let sd = PcConfig::for_sde(&sde);
        let predictor = match r.raw("sampler.predictor") {
            None => sd.predictor,
            Some(v) => v.parse::<Predictor>().map_err(located("sampler.predictor"))?,
        };
        let corrector = match r.raw("sampler.corrector") {
            None => sd.corrector,
            Some(v) => v.parse::<Corrector>().map_err(located("sampler.corrector"))?,
        };
        let sampler = PcConfig {
            predictor,
            corrector,
            steps: r.or("sampler.steps", sd.steps)?,
            corrector_steps: r.or("sampler.corrector_steps", sd.corrector_steps)?,
            snr: r.or("sampler.snr", default_snr(kind))?,
            denoise: r.or("sampler.denoise", sd.denoise)?,
            eps_sample: None,
            batch_size: r.or("sampler.batch_size", sd.batch_size)?,
            seed,
            record_trajectory: false,
        };
        sampler.validate(&sde)?;

        let od = OdeConfig::default();
        let ode_probe = match r.raw("ode.probe") {
            None => od.probe,
            Some(v) => v.parse::<ProbeKind>().map_err(located("ode.probe"))?,
        };
        let divergence = match r.raw("ode.divergence") {
            None => od.divergence,
            Some(v) => v.parse::<DivergenceMode>().map_err(located("ode.divergence"))?,
        };
        let ode = OdeConfig {
            rtol: r.or("ode.rtol", od.rtol)?,
            atol: r.or("ode.atol", od.atol)?,
            max_steps: r.or("ode.max_steps", od.max_steps)?,
            first_step: None,
            probes: r.or("ode.probes", od.probes)?,
            probe: ode_probe,
            divergence,
        };
        ode.validate()?;

        let points = PointsSpec {
            count: r.count("points.count", 64)?,
            file: r.raw("points.file").filter(|s| !s.is_empty()).map(PathBuf::from),
        };

        let impute = ImputeSpec {
            indices: r.list("impute.indices", Vec::new())?,
            values: r.list("impute.values", Vec::new())?,
            decouple: r.or("impute.decouple", false)?,
        };
        if impute.indices.len() != impute.values.len() {
            return Err(CliError::new(
                "invalid_value",
                "impute.values",
                format!("{} values for {} indices", impute.values.len(), impute.indices.len()),
            ));
        }

        let condition_kind = match r.raw("condition.kind").as_deref().unwrap_or("class") {
            "class" => ConditionKind::Class,
            "linear" => ConditionKind::Linear,
            other => {
                return Err(CliError::new(
                    "invalid_value",
                    "condition.kind",
                    format!("expected class or linear, got `{other}`"),
                ))
            }
        };
        let condition = ConditionSpec {
            kind: condition_kind,
            class: r.or("condition.class", 0)?,
            a: r.nested("condition.a", Vec::new())?,
            y: r.list("condition.y", Vec::new())?,
            noise_std: r.positive("condition.noise_std", 0.5)?,
        };
        if condition.class >= data.components() {
            return Err(CliError::new(
                "out_of_range",
                "condition.class",
                format!(
                    "label {} for a mixture with {} components",
                    condition.class,
                    data.components()
                ),
            ));
        }

        let check = CheckSpec {
            steps: r.or("check.steps", 1000)?,
            grid: r.or("check.grid", 101)?,
            sigma0_sq: r.positive("check.sigma0_sq", 1.0)?,
        };
        if check.steps < 2 {
            return Err(CliError::new("out_of_range", "check.steps", "need at least 2 scales"));
        }
        if check.grid < 2 {
            return Err(CliError::new(
                "out_of_range",
                "check.grid",
                "need at least 2 grid points",
            ));
        }
        let bench = BenchSpec {
            steps: r.count("bench.steps", 100)?,
        };
        let ident = IdentSpec {
            width_a: r.count("ident.width_a", 64)?,
            width_b: r.count("ident.width_b", 128)?,
            points: r.count("ident.points", 64)?,
        };
        let bandwidth = r.positive("metrics.bandwidth", 1.0)?;

        if let Some(key) = r.entries.keys().next() {
            return Err(CliError::new(
                "unknown_key",
                key.clone(),
                format!("unknown key `{key}`"),
            ));
        }

        Ok(ExperimentConfig {
            task,
            seed,
            out,
            sde,
            data,
            score,
            net,
            train,
            sampler,
            ode,
            points,
            impute,
            condition,
            check,
            bench,
            ident,
            bandwidth,
        })
    }

    /// Every resolved key in a fixed order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let s = &self.sde;
        let (score, checkpoint) = match &self.score {
            ScoreSpec::Oracle => ("oracle", String::new()),
            ScoreSpec::Train => ("train", String::new()),
            ScoreSpec::Checkpoint(p) => ("checkpoint", p.display().to_string()),
        };
        let variances: Vec<Vec<f64>> = self.data.variances().to_vec();
        let v: Vec<(&str, String)> = vec![
            ("task", self.task.to_string()),
            ("seed", self.seed.to_string()),
            ("out", self.out.display().to_string()),
            ("sde.kind", s.kind.to_string()),
            ("sde.sigma_min", s.sigma_min.to_string()),
            ("sde.sigma_max", s.sigma_max.to_string()),
            ("sde.beta_min", s.beta_min.to_string()),
            ("sde.beta_max", s.beta_max.to_string()),
            ("sde.t_max", s.t_max.to_string()),
            ("sde.eps_train", s.eps_train.to_string()),
            ("sde.eps_sample", s.eps_sample.to_string()),
            ("data.weights", join(self.data.weights())),
            ("data.means", join_nested(self.data.means())),
            ("data.variances", join_nested(&variances)),
            ("score.source", score.to_string()),
            ("score.checkpoint", checkpoint),
            ("net.hidden", join(&self.net.hidden)),
            ("net.embed_width", self.net.embed_width.to_string()),
            ("net.fourier_scale", self.net.fourier_scale.to_string()),
            ("train.objective", self.train.objective.to_string()),
            ("train.iterations", self.train.iterations.to_string()),
            ("train.batch_size", self.train.batch_size.to_string()),
            ("train.lr", self.train.lr.to_string()),
            ("train.discrete_steps", self.train.discrete_steps.to_string()),
            ("train.probe", self.train.probe.to_string()),
            ("train.ssm_h", self.train.ssm_h.to_string()),
            ("train.log_every", self.train.log_every.to_string()),
            ("sampler.predictor", self.sampler.predictor.to_string()),
            ("sampler.corrector", self.sampler.corrector.to_string()),
            ("sampler.steps", self.sampler.steps.to_string()),
            ("sampler.corrector_steps", self.sampler.corrector_steps.to_string()),
            ("sampler.snr", self.sampler.snr.to_string()),
            ("sampler.denoise", self.sampler.denoise.to_string()),
            ("sampler.batch_size", self.sampler.batch_size.to_string()),
            ("ode.rtol", self.ode.rtol.to_string()),
            ("ode.atol", self.ode.atol.to_string()),
            ("ode.max_steps", self.ode.max_steps.to_string()),
            ("ode.probes", self.ode.probes.to_string()),
            ("ode.probe", self.ode.probe.to_string()),
            ("ode.divergence", self.ode.divergence.to_string()),
            ("points.count", self.points.count.to_string()),
            (
                "points.file",
                self.points
                    .file
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
            ),
            ("impute.indices", join(&self.impute.indices)),
            ("impute.values", join(&self.impute.values)),
            ("impute.decouple", self.impute.decouple.to_string()),
            (
                "condition.kind",
                match self.condition.kind {
                    ConditionKind::Class => "class",
                    ConditionKind::Linear => "linear",
                }
                .to_string(),
            ),
            ("condition.class", self.condition.class.to_string()),
            ("condition.a", join_nested(&self.condition.a)),
            ("condition.y", join(&self.condition.y)),
            ("condition.noise_std", self.condition.noise_std.to_string()),
            ("check.steps", self.check.steps.to_string()),
            ("check.grid", self.check.grid.to_string()),
            ("check.sigma0_sq", self.check.sigma0_sq.to_string()),
            ("bench.steps", self.bench.steps.to_string()),
            ("ident.width_a", self.ident.width_a.to_string()),
            ("ident.width_b", self.ident.width_b.to_string()),
            ("ident.points", self.ident.points.to_string()),
            ("metrics.bandwidth", self.bandwidth.to_string()),
        ];
        v.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// The resolved config as `key=value` lines.
    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// SHA-256 of the resolved config without the output directory, so the
    /// same experiment hashes identically wherever it is written.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if k != "out" {
                h.update(format!("{k}={v}\n").as_bytes());
            }
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// The condition block's observation matrix.
    pub fn condition_matrix(&self) -> CliResult<Matrix> {
        if self.condition.a.is_empty() {
            return Err(CliError::new(
                "missing_key",
                "condition.a",
                "linear conditioning needs a matrix",
            ));
        }
        Matrix::from_rows(&self.condition.a).map_err(located("condition.a"))
    }
}

fn prefix_field(e: sdelab::Error, prefix: &str) -> CliError {
    let mut c = CliError::from(e);
    if let Some(f) = c.field.as_mut() {
        if !f.contains('.') {
            *f = format!("{prefix}{f}");
        }
    }
    c
}
