//! One entry point per task. Each writes its artifacts into the output
//! directory and returns nothing else; all randomness is keyed by the
//! config seed.

use std::fs;
use std::path::PathBuf;

use rayon::prelude::*;
use serde_json::{json, Value};

use sdelab::conditional::{conditional_score, decoupled_impute, decoupling_matrix, impute, linear_inverse_score};
use sdelab::flow::{encode, flow_sample, identifiability_report, log_likelihood};
use sdelab::metrics::{ks_1d, mean_var, mmd_rbf_to_mixture, wasserstein1_to_cdf, MetricReport};
use sdelab::net::{score_mse, train, LossRecord};
use sdelab::rng::{derive_seed, stream};
use sdelab::samplers::pc_sample;
use sdelab::sde::kernel_match_report;
use sdelab::{
    build_sde, Corrector, GaussianMixture, MixtureScore, MlpScoreNet, NetConfig, PcConfig, PerturbedMixture,
    ScoreFunction, ScoreModel, SdeKind, SdeParams,
};

use crate::config::{ConditionKind, ExperimentConfig, ScoreSpec, Task};
use crate::error::{CliError, CliResult};
use crate::output::{columns, Artifacts};
use crate::svg::{histogram, Plot, Series};

/// Run the configured task; returns the files written.
pub fn run(cfg: &ExperimentConfig) -> CliResult<Vec<PathBuf>> {
    let mut art = Artifacts::create(&cfg.out, cfg.seed, &cfg.hash())?;
    let resolved: String = cfg
        .entries()
        .into_iter()
        .filter(|(k, _)| k != "out")
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect();
    art.text("config.txt", &resolved)?;
    match cfg.task {
        Task::Sample => sample(cfg, &mut art)?,
        Task::Train => train_task(cfg, &mut art)?,
        Task::Likelihood => likelihood(cfg, &mut art)?,
        Task::Encode => encode_task(cfg, &mut art)?,
        Task::Decode => decode_task(cfg, &mut art)?,
        Task::Impute => impute_task(cfg, &mut art)?,
        Task::Condition => condition(cfg, &mut art)?,
        Task::KernelCheck => kernel_check(cfg, &mut art)?,
        Task::VarianceCheck => variance_check(cfg, &mut art)?,
        Task::SamplerBench => sampler_bench(cfg, &mut art)?,
        Task::Identifiability => identifiability(cfg, &mut art)?,
    }
    Ok(art.written().to_vec())
}

fn core_err(e: sdelab::Error) -> CliError {
    let mut c = CliError::from(e);
    c.code = "runtime";
    c
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("plain data serializes")
}

/// Checkpoints are written wrapped as `{"checkpoint": …}`; bare network
/// JSON is accepted too.
pub fn load_checkpoint(path: &PathBuf) -> CliResult<MlpScoreNet> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::new("io", "score.checkpoint", format!("{}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::new("invalid_checkpoint", "score.checkpoint", e.to_string()))?;
    let inner = match value.get("checkpoint") {
        Some(c) => c.to_string(),
        None => text,
    };
    MlpScoreNet::from_json(&inner).map_err(|e| CliError::new("invalid_checkpoint", "score.checkpoint", e.to_string()))
}

fn train_net(
    cfg: &ExperimentConfig,
    hidden: Vec<usize>,
    init_seed: u64,
    train_seed: u64,
) -> CliResult<(MlpScoreNet, Vec<LossRecord>)> {
    let net_cfg = NetConfig {
        hidden,
        ..cfg.net.clone()
    };
    let mut net = MlpScoreNet::new(cfg.data.dim(), net_cfg, cfg.sde, init_seed).map_err(core_err)?;
    let tc = sdelab::TrainConfig {
        seed: train_seed,
        ..cfg.train.clone()
    };
    let data = cfg.data.clone();
    let log = train(&mut net, move |n, r| data.sample(n, r), &cfg.sde, &tc).map_err(core_err)?;
    Ok((net, log))
}

fn build_score(cfg: &ExperimentConfig) -> CliResult<Box<dyn ScoreFunction>> {
    Ok(match &cfg.score {
        ScoreSpec::Oracle => Box::new(MixtureScore::new(cfg.data.clone(), cfg.sde)),
        ScoreSpec::Checkpoint(path) => {
            let net = load_checkpoint(path)?;
            if *net.sde() != cfg.sde {
                return Err(CliError::new(
                    "invalid_checkpoint",
                    "score.checkpoint",
                    "network was trained for a different SDE than the sde block",
                ));
            }
            if ScoreFunction::dim(&net) != cfg.data.dim() {
                return Err(CliError::new(
                    "invalid_checkpoint",
                    "score.checkpoint",
                    format!(
                        "network dimension {} differs from data dimension {}",
                        ScoreFunction::dim(&net),
                        cfg.data.dim()
                    ),
                ));
            }
            Box::new(net)
        }
        ScoreSpec::Train => Box::new(train_net(cfg, cfg.net.hidden.clone(), cfg.seed, cfg.seed)?.0),
    })
}

fn data_cdf(data: &GaussianMixture) -> impl Fn(f64) -> f64 + '_ {
    let exact = PerturbedMixture::from_kernel(data, 0.0, 1.0, 0.0);
    move |x| exact.marginal_cdf(0, x)
}

/// Points from `points.file`, or `points.count` draws from the data.
fn load_points(cfg: &ExperimentConfig) -> CliResult<Vec<Vec<f64>>> {
    let d = cfg.data.dim();
    let Some(path) = &cfg.points.file else {
        return Ok(cfg.data.sample(cfg.points.count, &mut stream(cfg.seed, "points", 0)));
    };
    let text =
        fs::read_to_string(path).map_err(|e| CliError::new("io", "points.file", format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for line in text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
    {
        let row: Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        match row {
            Ok(row) if row.len() == d => out.push(row),
            Ok(row) => {
                return Err(CliError::new(
                    "invalid_value",
                    "points.file",
                    format!("row has {} columns, data dimension is {d}", row.len()),
                ))
            }
            Err(_) if out.is_empty() => continue,
            Err(e) => return Err(CliError::new("invalid_value", "points.file", e.to_string())),
        }
    }
    if out.is_empty() {
        return Err(CliError::new("invalid_value", "points.file", "no data rows"));
    }
    Ok(out)
}

fn sample_report(cfg: &ExperimentConfig, samples: &[Vec<f64>]) -> CliResult<MetricReport> {
    let mut r = MetricReport::new("data mixture", cfg.seed);
    for j in 0..cfg.data.dim() {
        let col: Vec<f64> = samples.iter().map(|x| x[j]).collect();
        let (m, v) = mean_var(&col).map_err(core_err)?;
        r.insert(&format!("mean_{j}"), m).map_err(core_err)?;
        r.insert(&format!("var_{j}"), v).map_err(core_err)?;
    }
    if samples.len() >= 2 {
        let mmd = mmd_rbf_to_mixture(samples, &cfg.data, cfg.bandwidth).map_err(core_err)?;
        r.insert("mmd2", mmd).map_err(core_err)?;
    }
    if cfg.data.dim() == 1 {
        let xs: Vec<f64> = samples.iter().map(|x| x[0]).collect();
        let cdf = data_cdf(&cfg.data);
        let ks = ks_1d(&xs, &cdf).map_err(core_err)?;
        r.insert("ks_statistic", ks.statistic).map_err(core_err)?;
        r.insert("ks_p_value", ks.p_value).map_err(core_err)?;
        r.insert("wasserstein1", wasserstein1_to_cdf(&xs, &cdf).map_err(core_err)?)
            .map_err(core_err)?;
    }
    r.count("samples", samples.len()).map_err(core_err)?;
    Ok(r)
}

fn samples_plot(cfg: &ExperimentConfig, title: &str, named: &[(&str, &[Vec<f64>])]) -> Plot {
    if cfg.data.dim() == 1 {
        let mut plot = Plot::new(title, "x", "density");
        for (name, s) in named {
            let xs: Vec<f64> = s.iter().map(|x| x[0]).collect();
            plot = plot.with(Series::line(*name, histogram(&xs, 60)));
        }
        let exact = PerturbedMixture::from_kernel(&cfg.data, 0.0, 1.0, 0.0);
        let (lo, hi) = named
            .iter()
            .flat_map(|(_, s)| s.iter().map(|x| x[0]))
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if lo < hi {
            let curve = (0..=200)
                .map(|i| {
                    let x = lo + (hi - lo) * i as f64 / 200.0;
                    (x, exact.log_density(&[x]).exp())
                })
                .collect();
            plot = plot.with(Series::line("data density", curve));
        }
        plot
    } else {
        let mut plot = Plot::new(title, "x_0", "x_1");
        for (name, s) in named {
            let pts = s.iter().take(10_000).map(|x| (x[0], x[1])).collect();
            plot = plot.with(Series::scatter(*name, pts));
        }
        plot
    }
}

fn sample(cfg: &ExperimentConfig, art: &mut Artifacts) -> CliResult<()> {
    let score = build_score(cfg)?;
    let batch = pc_sample(&cfg.sde, score.as_ref(), &cfg.sampler).map_err(core_err)?;
    art.csv("samples.csv", &[], &columns("x", cfg.data.dim()), &batch.samples)?;
    let report = sample_report(cfg, &batch.samples)?;
    let mut body = to_value(&report);
    body["score_evals_per_chain"] = json!(batch.score_evals);
    art.json("metrics.json", body)?;
    art.svg(
        "report.svg",
        &samples_plot(cfg, "PC samples", &[("samples", &batch.samples)]),
    )?;
    Ok(())
}

/// Evaluation points for score MSE: a 32×32 grid in 2D, data draws otherwise.
fn eval_points(cfg: &ExperimentConfig) -> Vec<Vec<f64>> {
    if cfg.data.dim() != 2 {
        return cfg.data.sample(1024, &mut stream(cfg.seed, "eval", 0));
    }
    let (mean, cov) = cfg.data.moments();
    let half: Vec<f64> = (0..2).map(|j| 3.0 * cov[j][j].sqrt()).collect();
    (0..32)
        .flat_map(|i| {
            let (mean, half) = (mean.clone(), half.clone());
            (0..32).map(move |j| {
                let u = -1.0 + 2.0 * i as f64 / 31.0;
                let v = -1.0 + 2.0 * j as f64 / 31.0;
                vec![mean[0] + u * half[0], mean[1] + v * half[1]]
            })
        })
        .collect()
}

pub const EVAL_TIMES: [f64; 3] = [0.1, 0.5, 0.9];

fn train_task(cfg: &ExperimentConfig, art: &mut Artifacts) -> CliResult<()> {
    let (net, log) = train_net(cfg, cfg.net.hidden.clone(), cfg.seed, cfg.seed)?;
    let checkpoint: Value = serde_json::from_str(&net.to_json()).expect("checkpoint is JSON");
    art.json("checkpoint.json", json!({ "checkpoint": checkpoint }))?;
    let rows: Vec<Vec<f64>> = log.iter().map(|r| vec![r.iteration as f64, r.loss]).collect();
    art.csv("loss.csv", &[], &["iteration".into(), "loss".into()], &rows)?;

    let oracle = MixtureScore::new(cfg.data.clone(), cfg.sde);
    let points = eval_points(cfg);
    let mut report = MetricReport::new("oracle score of the data mixture", cfg.seed);
    for t in EVAL_TIMES {
        let (mse, norm2) = score_mse(&net, &oracle, &points, &[t]);
        report
            .insert(&format!("relative_mse_t{t}"), mse / norm2)
            .map_err(core_err)?;
    }
    let (mse, norm2) = score_mse(&net, &oracle, &points, &EVAL_TIMES);
    report.insert("relative_mse", mse / norm2).map_err(core_err)?;
    report
        .insert("final_loss", log.last().map_or(f64::NAN, |r| r.loss))
        .map_err(core_err)?;
    report.count("eval_points", points.len()).map_err(core_err)?;
    report.count("parameters", net.num_params()).map_err(core_err)?;
    art.json("metrics.json", to_value(&report))?;
    let curve: Vec<(f64, f64)> = log.iter().map(|r| (r.iteration as f64, r.loss)).collect();
    art.svg(
        "report.svg",
        &Plot::new("training loss", "iteration", "loss").with(Series::line(cfg.train.objective.to_string(), curve)),
    )?;
    Ok(())
}

fn likelihood(cfg: &ExperimentConfig, art: &mut Artifacts) -> CliResult<()> {
    let score = build_score(cfg)?;
    let points = load_points(cfg)?;
    let reference = cfg.data.perturb(&cfg.sde, cfg.sde.eps_train);
    let results: Vec<_> = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(cfg.seed, "likelihood", i as u64);
            log_likelihood(&points[i], score.as_ref(), &cfg.sde, &cfg.ode, &mut rng)
        })
        .collect::<Result<_, _>>()
        .map_err(core_err)?;
    let n = points.len() as f64;
    let mut rows = Vec::new();
    let mut max_err: f64 = 0.0;
    for (i, (x, r)) in points.iter().zip(&results).enumerate() {
        let exact = reference.log_density(x);
        max_err = max_err.max((r.log_prob - exact).abs());
        rows.push(json!({
            "index": i,
            "x": x,
            "log_prob": r.log_prob,
            "bits_per_dim": r.bits_per_dim,
            "prior_term": r.prior_term,
            "divergence_integral": r.divergence_integral,
            "nfe": r.nfe,
            "reference_log_prob": exact,
        }));
    }
    art.json(
        "likelihood.json",
        json!({
            "points": rows,
            "mean_log_prob": results.iter().map(|r| r.log_prob).sum::<f64>() / n,
            "mean_bits_per_dim": results.iter().map(|r| r.bits_per_dim).sum::<f64>() / n,
            "max_abs_error_vs_reference": max_err,
            "reference": "analytic log-density of the data perturbed to eps_train",
            "divergence": cfg.ode.divergence.to_string(),
        }),
    )?;
    let pts: Vec<(f64, f64)> = points
        .iter()
        .zip(&results)
        .map(|(x, r)| (reference.log_density(x), r.log_prob))
        .collect();
    art.svg(
        "report.svg",
        &Plot::new("probability-flow log-likelihood", "analytic log p", "computed log p")
            .with(Series::line("identity", {
                let (lo, hi) = pts
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
                vec![(lo, lo), (hi, hi)]
            }))
            .with(Series::scatter("points", pts)),
    )?;
    Ok(())
}

fn encode_task(cfg: &ExperimentConfig, art: &mut Artifacts) -> CliResult<()> {
    let score = build_score(cfg)?;
    let points = load_points(cfg)?;
    let encoded: Vec<_> = points
        .par_iter()
        .map(|x| encode(x, score.as_ref(), &cfg.sde, &cfg.ode))
        .collect::<Result<_, _>>()
        .map_err(core_err)?;
    let d = cfg.data.dim();
    let mut header = columns("x", d);
    header.extend(columns("z", d));
    header.push("nfe".into());
    let rows: Vec<Vec<f64>> = points
        .iter()
        .zip(&encoded)
        .map(|(x, r)| x.iter().chain(&r.state).copied().chain([r.nfe as f64]).collect())
        .collect();
    art.csv("latents.csv", &[], &header, &rows)?;
    let pts: Vec<(f64, f64)> = if d == 1 {
        points.iter().zip(&encoded).map(|(x, r)| (x[0], r.state[0])).collect()
    } else {
        encoded.iter().map(|r| (r.state[0], r.state[1])).collect()
    };
    let plot = if d == 1 {
        Plot::new("probability-flow encoding", "x", "z")
    } else {
        Plot::new("probability-flow latents", "z_0", "z_1")
    };
    art.svg("report.svg", &plot.with(Series::scatter("latents", pts)))?;
    Ok(())
}

fn decode_task(cfg: &ExperimentConfig, art: &mut Artifacts) -> CliResult<()> {
    let score = build_score(cfg)?;
    let samples = flow_sample(&cfg.sde, score.as_ref(), cfg.points.count, &cfg.ode, cfg.seed).map_err(core_err)?;
    art.csv("samples.csv", &[], &columns("x", cfg.data.dim()), &samples)?;
    art.json("metrics.json", to_value(&sample_report(cfg, &samples)?))?;
    art.svg(
        "report.svg",
        &samples_plot(cfg, "probability-flow samples", &[("decoded", &samples)]),
    )?;
    Ok(())
}

fn impute_task(cfg: &ExperimentConfig, art: &mut Artifacts) -> CliResult<()> {
    let spec = &cfg.impute;
    if spec.indices.is_empty() {
        return Err(CliError::new(
            "missing_key",
            "impute.indices",
            "no observed coordinates given",
        ));
    }
    let score = build_score(cfg)?;
    let d = cfg.data.dim();
    let batch = if spec.decouple {
        if d != 3 {
            return Err(CliError::new(
                "invalid_value",
                "impute.decouple",
                "the decoupling basis is defined for 3-dimensional data",
            ));
        }
        decoupled_impute(
            score.as_ref(),
            &cfg.sde,
            &decoupling_matrix(),
            &spec.indices,
            &spec.values,
            &cfg.sampler,
        )
    } else {
        impute(score.as_ref(), &cfg.sde, &spec.indices, &spec.values, &cfg.sampler)
    }
    .map_err(core_err)?;
    let mask: Vec<String> = (0..d)
        .map(|j| if spec.indices.contains(&j) { "1" } else { "0" }.to_string())
        .collect();
    let basis = if spec.decouple { "decoupled" } else { "standard" };
    art.csv(
        "samples.csv",
        &[format!("mask={} basis={basis}", mask.join(","))],
        &columns("x", d),
        &batch.samples,
    )?;
    let mut report = MetricReport::new("imputed coordinates", cfg.seed);
    for j in 0..d {
        let col: Vec<f64> = batch.samples.iter().map(|x| x[j]).collect();
        let (m, v) = mean_var(&col).map_err(core_err)?;
        report.insert(&format!("mean_{j}"), m).map_err(core_err)?;
        report.insert(&format!("var_{j}"), v).map_err(core_err)?;
    }
    report.count("samples", batch.samples.len()).map_err(core_err)?;
    art.json("metrics.json", to_value(&report))?;
    art.svg(
        "report.svg",
        &samples_plot(cfg, "imputed samples", &[("imputed", &batch.samples)]),
    )?;
    Ok(())
}

fn condition(cfg: &ExperimentConfig, art: &mut Artifacts) -> CliResult<()> {
    let base = build_score(cfg)?;
    let d = cfg.data.dim();
    let mut report = MetricReport::new("conditional samples", cfg.seed);
    let samples = match cfg.condition.kind {
        ConditionKind::Class => {
            let (data, sde, k) = (cfg.data.clone(), cfg.sde, cfg.condition.class);
            let guided = conditional_score(base, move |x: &[f64], t: f64| {
                data.perturb(&sde, t).log_posterior_grad(k, x)
            });
            let batch = pc_sample(&cfg.sde, &guided, &cfg.sampler).map_err(core_err)?;
            let exact = PerturbedMixture::from_kernel(&cfg.data, 0.0, 1.0, 0.0);
            let hits = batch
                .samples
                .iter()
                .filter(|x| {
                    let post = exact.component_posterior(x);
                    let best = (0..post.len()).fold(0, |b, i| if post[i] > post[b] { i } else { b });
                    best == k
                })
                .count();
            report
                .insert("fraction_at_class", hits as f64 / batch.samples.len() as f64)
                .map_err(core_err)?;
            batch.samples
        }
        ConditionKind::Linear => {
            let a = cfg.condition_matrix()?;
            let score = linear_inverse_score(base, cfg.sde, a, cfg.condition.y.clone(), cfg.condition.noise_std)
                .map_err(|e| {
                    let mut c = CliError::from(e);
                    c.field = Some("condition.a".into());
                    c
                })?;
            pc_sample(&cfg.sde, &score, &cfg.sampler).map_err(core_err)?.samples
        }
    };
    for j in 0..d {
        let col: Vec<f64> = samples.iter().map(|x| x[j]).collect();
        let (m, v) = mean_var(&col).map_err(core_err)?;
        report.insert(&format!("mean_{j}"), m).map_err(core_err)?;
        report.insert(&format!("var_{j}"), v).map_err(core_err)?;
    }
    report.count("samples", samples.len()).map_err(core_err)?;
    art.csv("samples.csv", &[], &columns("x", d), &samples)?;
    art.json("metrics.json", to_value(&report))?;
    art.svg(
        "report.svg",
        &samples_plot(cfg, "conditional samples", &[("samples", &samples)]),
    )?;
    Ok(())
}

fn kernel_check(cfg: &ExperimentConfig, art: &mut Artifacts) -> CliResult<()> {
    let n = cfg.check.steps;
    let coarse = kernel_match_report(&cfg.sde, n).map_err(core_err)?;
    let fine = kernel_match_report(&cfg.sde, 2 * n).map_err(core_err)?;
    let header: Vec<String> = [
        "t",
        "discrete_std",
        "continuous_std",
        "discrete_mean_coeff",
        "continuous_mean_coeff",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let rows: Vec<Vec<f64>> = coarse
        .rows
        .iter()
        .map(|r| {
            vec![
                r.t,
                r.discrete_std,
                r.continuous_std,
                r.discrete_mean_coeff,
                r.continuous_mean_coeff,
            ]
        })
        .collect();
    art.csv("kernel.csv", &[], &header, &rows)?;
    let ratio = |a: f64, b: f64| if a > 0.0 { b / a } else { 0.0 };
    art.json(
        "metrics.json",
        json!({
            "kind": cfg.sde.kind.to_string(),
            "n": n,
            "max_rel_std": coarse.max_rel_std,
            "max_rel_mean_coeff": coarse.max_rel_mean_coeff,
            "max_rel_std_2n": fine.max_rel_std,
            "max_rel_mean_coeff_2n": fine.max_rel_mean_coeff,
            "halving_ratio_std": ratio(coarse.max_rel_std, fine.max_rel_std),
            "halving_ratio_mean_coeff": ratio(coarse.max_rel_mean_coeff, fine.max_rel_mean_coeff),
        }),
    )?;
    art.svg(
        "report.svg",
        &Plot::new(format!("{} kernel std, N = {n}", cfg.sde.kind), "t", "std")
            .with(Series::line(
                "discrete",
                coarse.rows.iter().map(|r| (r.t, r.discrete_std)).collect(),
            ))
            .with(Series::line(
                "continuous",
                coarse.rows.iter().map(|r| (r.t, r.continuous_std)).collect(),
            )),
    )?;
    Ok(())
}

fn variance_check(cfg: &ExperimentConfig, art: &mut Artifacts) -> CliResult<()> {
    let params = SdeParams {
        beta_min: Some(cfg.sde.beta_min),
        beta_max: Some(cfg.sde.beta_max),
        t_max: Some(cfg.sde.t_max),
        ..SdeParams::default()
    };
    let vp = build_sde(SdeKind::Vp, params).map_err(core_err)?;
    let sub = build_sde(SdeKind::SubVp, params).map_err(core_err)?;
    let s0 = cfg.check.sigma0_sq;
    let g = cfg.check.grid;
    let mut rows = Vec::with_capacity(g);
    for i in 0..g {
        let t = cfg.sde.t_max * i as f64 / (g - 1) as f64;
        let a = vp.variance_trajectory(s0, t).map_err(core_err)?;
        let b = sub.variance_trajectory(s0, t).map_err(core_err)?;
        rows.push(vec![t, a, b]);
    }
    let violations = rows.iter().filter(|r| r[2] > r[1]).count();
    let max_dev = rows.iter().map(|r| (r[1] - s0).abs()).fold(0.0, f64::max);
    let last = rows.last().expect("grid has at least two points");
    art.csv(
        "variance.csv",
        &[],
        &["t".into(), "var_vp".into(), "var_subvp".into()],
        &rows,
    )?;
    art.json(
        "metrics.json",
        json!({
            "sigma0_sq": s0,
            "grid": g,
            "max_abs_vp_change": max_dev,
            "var_vp_end": last[1],
            "var_subvp_end": last[2],
            "subvp_above_vp_rows": violations,
        }),
    )?;
    art.svg(
        "report.svg",
        &Plot::new("variance trajectories", "t", "variance")
            .with(Series::line("VP", rows.iter().map(|r| (r[0], r[1])).collect()))
            .with(Series::line("sub-VP", rows.iter().map(|r| (r[0], r[2])).collect())),
    )?;
    if violations > 0 {
        return Err(CliError::runtime(
            "assertion",
            format!("sub-VP variance exceeds VP variance on {violations} grid rows"),
        ));
    }
    Ok(())
}

/// The PC configuration and the predictor-only configuration that spends
/// the same number of score evaluations per chain.
pub fn bench_configs(cfg: &ExperimentConfig) -> (PcConfig, PcConfig) {
    let m = cfg.sampler.corrector_steps.max(1);
    let pc = PcConfig {
        steps: cfg.bench.steps,
        corrector: Corrector::Langevin,
        corrector_steps: m,
        ..cfg.sampler.clone()
    };
    let p = PcConfig {
        steps: cfg.bench.steps * (1 + m),
        corrector: Corrector::None,
        corrector_steps: 0,
        ..cfg.sampler.clone()
    };
    (pc, p)
}

fn sampler_bench(cfg: &ExperimentConfig, art: &mut Artifacts) -> CliResult<()> {
    let score = build_score(cfg)?;
    let (pc_cfg, p_cfg) = bench_configs(cfg);
    let pc = pc_sample(&cfg.sde, score.as_ref(), &pc_cfg).map_err(core_err)?;
    let p = pc_sample(&cfg.sde, score.as_ref(), &p_cfg).map_err(core_err)?;
    let pc_report = sample_report(cfg, &pc.samples)?;
    let p_report = sample_report(cfg, &p.samples)?;
    let (a, b) = (pc_report.metrics["mmd2"], p_report.metrics["mmd2"]);
    art.json(
        "metrics.json",
        json!({
            "pc": to_value(&pc_report),
            "predictor_only": to_value(&p_report),
            "pc_steps": pc_cfg.steps,
            "predictor_only_steps": p_cfg.steps,
            "score_evals_pc": pc.score_evals,
            "score_evals_predictor_only": p.score_evals,
            "pc_lower_mmd2": a < b,
        }),
    )?;
    let d = cfg.data.dim();
    let mut header = columns("pc_x", d);
    header.extend(columns("p_x", d));
    let rows: Vec<Vec<f64>> = pc
        .samples
        .iter()
        .zip(&p.samples)
        .map(|(x, y)| x.iter().chain(y).copied().collect())
        .collect();
    art.csv("samples.csv", &[], &header, &rows)?;
    art.svg(
        "report.svg",
        &samples_plot(
            cfg,
            "PC vs predictor-only",
            &[("PC", &pc.samples), ("predictor only", &p.samples)],
        ),
    )?;
    Ok(())
}

fn identifiability(cfg: &ExperimentConfig, art: &mut Artifacts) -> CliResult<()> {
    let mut nets = Vec::new();
    for (tag, width) in [("ident-a", cfg.ident.width_a), ("ident-b", cfg.ident.width_b)] {
        let depth = cfg.net.hidden.len().max(1);
        let (net, _) = train_net(
            cfg,
            vec![width; depth],
            derive_seed(cfg.seed, tag, 0),
            derive_seed(cfg.seed, tag, 1),
        )?;
        nets.push(net);
    }
    let xs = cfg.data.sample(cfg.ident.points, &mut stream(cfg.seed, "points", 0));
    let rep = identifiability_report(&nets[0], &nets[1], &xs, &cfg.sde, &cfg.ode, cfg.seed).map_err(core_err)?;
    art.json(
        "metrics.json",
        json!({
            "width_a": cfg.ident.width_a,
            "width_b": cfg.ident.width_b,
            "points": xs.len(),
            "correlations": rep.correlations,
            "shuffled_correlations": rep.shuffled_correlations,
            "max_abs_diff": rep.max_abs_diff,
            "min_correlation": rep.min_correlation,
            "max_abs_shuffled_correlation": rep.max_abs_shuffled_correlation,
        }),
    )?;
    let d = cfg.data.dim();
    let mut header = columns("x", d);
    header.extend(columns("za", d));
    header.extend(columns("zb", d));
    let rows: Vec<Vec<f64>> = xs
        .iter()
        .zip(rep.encodings_a.iter().zip(&rep.encodings_b))
        .map(|(x, (a, b))| x.iter().chain(a).chain(b).copied().collect())
        .collect();
    art.csv("encodings.csv", &[], &header, &rows)?;
    let mut plot = Plot::new("latents of two independently trained nets", "net A", "net B");
    for j in 0..d {
        let pts = rep
            .encodings_a
            .iter()
            .zip(&rep.encodings_b)
            .map(|(a, b)| (a[j], b[j]))
            .collect();
        plot = plot.with(Series::scatter(format!("z_{j}"), pts));
    }
    art.svg("report.svg", &plot)?;
    Ok(())
}
