//! End-to-end acceptance criteria. Each test prints one `PASS` or `FAIL`
//! line with the measured quantities, its runtime and the budget, then
//! asserts the outcome.
//!
//! Criteria hold a shared lock, so runtimes are measured one at a time.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use sdelab::conditional::{class_conditional_sample, impute, linear_inverse_score, unknown_coordinates};
use sdelab::flow::{divergence_with_probes, draw_probes, flow_sample, identifiability_report, log_likelihood};
use sdelab::linalg::{norm, Matrix};
use sdelab::metrics::{ks_1d, ks_2sample, ks_critical_2sample, mean_var, mmd_rbf_to_mixture};
use sdelab::mixture::RotatedMixtureScore;
use sdelab::net::{discrete_loss, dsm_loss_continuous, score_mse, ssm_loss, train, TimeSampler};
use sdelab::ode::ProbeKind;
use sdelab::rng::{normal, stream, uniform};
use sdelab::sde::kernel_match_report;
use sdelab::{
    Corrector, DiscreteSchedule, GaussianMixture, MixtureScore, MlpScoreNet, NetConfig, OdeConfig, PcConfig, Predictor,
    ScoreModel, Sde, SdeKind, TrainConfig,
};
use sdelab_cli::app::{execute, Args};
use validation::{benchmark_2d, bimodal, exclusive, grid_2d, report, within};

fn first_coords(samples: &[Vec<f64>]) -> Vec<f64> {
    samples.iter().map(|x| x[0]).collect()
}

fn cdf_of(g: &GaussianMixture) -> impl Fn(f64) -> f64 + '_ {
    let pm = g.perturb(&Sde::vp(), 0.0);
    move |x| pm.marginal_cdf(0, x)
}

#[test]
fn criterion_01_kernel_match() {
    let _serial = exclusive();
    let start = Instant::now();
    let n = 1000;
    let ve = Sde::ve();
    let vp = Sde::vp();
    let ve1 = kernel_match_report(&ve, n).unwrap();
    let ve2 = kernel_match_report(&ve, 2 * n).unwrap();
    let vp1 = kernel_match_report(&vp, n).unwrap();
    let vp2 = kernel_match_report(&vp, 2 * n).unwrap();
    let errors = [
        ("SMLD std", ve1.max_rel_std, ve2.max_rel_std),
        ("DDPM std", vp1.max_rel_std, vp2.max_rel_std),
        ("DDPM mean", vp1.max_rel_mean_coeff, vp2.max_rel_mean_coeff),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, e1, e2) in errors {
        let ratio = e2 / e1;
        pass &= e1 < 0.01 && (0.25..=0.75).contains(&ratio);
        parts.push(format!("{name} {:.3}% (2N ratio {ratio:.3})", 100.0 * e1));
    }
    let elapsed = start.elapsed();
    pass &= within(elapsed, 5);
    report(
        1,
        "discrete kernels match continuous kernels",
        pass,
        &parts.join(", "),
        elapsed,
        Some(Duration::from_secs(5)),
    );
}

#[test]
fn criterion_02_variance_laws() {
    let _serial = exclusive();
    let start = Instant::now();
    let (vp, sub) = (Sde::vp(), Sde::sub_vp());
    let mut max_vp_dev: f64 = 0.0;
    let mut ordered = true;
    for i in 0..=100 {
        let t = i as f64 / 100.0;
        let a = vp.variance_trajectory(1.0, t).unwrap();
        let b = sub.variance_trajectory(1.0, t).unwrap();
        max_vp_dev = max_vp_dev.max((a - 1.0).abs());
        ordered &= b <= a;
    }
    let end_vp = (vp.variance_trajectory(1.0, 1.0).unwrap() - 1.0).abs();
    let end_sub = (sub.variance_trajectory(1.0, 1.0).unwrap() - 1.0).abs();
    let elapsed = start.elapsed();
    let pass = max_vp_dev <= 1e-12 && ordered && end_vp < 1e-4 && end_sub < 1e-4 && within(elapsed, 1);
    report(
        2,
        "VP variance conserved, sub-VP below VP",
        pass,
        &format!("max |VP-1| {max_vp_dev:.1e}, subVP<=VP {ordered}, |var(1)-1| VP {end_vp:.1e} subVP {end_sub:.1e}"),
        elapsed,
        Some(Duration::from_secs(1)),
    );
}

fn random_mixture(rng: &mut sdelab::ChainRng, dim: usize) -> GaussianMixture {
    let k = 1 + (uniform(rng, 0.0, 3.0) as usize).min(2);
    let raw: Vec<f64> = (0..k).map(|_| uniform(rng, 0.2, 1.0)).collect();
    let total: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| w / total).collect();
    let means = (0..k)
        .map(|_| (0..dim).map(|_| uniform(rng, -3.0, 3.0)).collect())
        .collect();
    let vars = (0..k)
        .map(|_| (0..dim).map(|_| uniform(rng, 0.1, 2.0)).collect())
        .collect();
    GaussianMixture::new(weights, means, vars).unwrap()
}

#[test]
fn criterion_03_score_oracle_finite_differences() {
    let _serial = exclusive();
    let start = Instant::now();
    let mut rng = stream(3, "acceptance-fd", 0);
    let mut worst: f64 = 0.0;
    for trial in 0..1000 {
        let dim = 1 + trial % 3;
        let g = random_mixture(&mut rng, dim);
        let sde = Sde::with_defaults([SdeKind::Ve, SdeKind::Vp, SdeKind::SubVp][trial % 3]);
        let t = uniform(&mut rng, sde.eps_train, 1.0);
        let pm = g.perturb(&sde, t);
        let k = sde.kernel(t);
        let spread = (k.mean_coeff * 3.0).abs() + 2.0 * k.std;
        let x: Vec<f64> = (0..dim).map(|_| uniform(&mut rng, -spread, spread)).collect();
        let s = pm.score(&x);
        // Richardson-extrapolated central differences, step scaled to the local width.
        let width = (k.mean_coeff * k.mean_coeff * 0.1 + k.std * k.std).sqrt();
        let fd: Vec<f64> = (0..dim)
            .map(|j| {
                let central = |h: f64| {
                    let (mut xp, mut xm) = (x.clone(), x.clone());
                    xp[j] += h;
                    xm[j] -= h;
                    (pm.log_density(&xp) - pm.log_density(&xm)) / (2.0 * h)
                };
                let h = 1e-3 * width;
                (4.0 * central(h / 2.0) - central(h)) / 3.0
            })
            .collect();
        let diff: Vec<f64> = s.iter().zip(&fd).map(|(a, b)| a - b).collect();
        let rel = norm(&diff) / norm(&s).max(1.0 / width);
        worst = worst.max(rel);
    }
    let elapsed = start.elapsed();
    let pass = worst < 1e-5 && within(elapsed, 10);
    report(
        3,
        "closed-form score equals gradient of log-density",
        pass,
        &format!("worst relative error {worst:.2e} over 1000 cases"),
        elapsed,
        Some(Duration::from_secs(10)),
    );
}

fn pc_config(sde: &Sde, n: usize, seed: u64) -> PcConfig {
    PcConfig {
        batch_size: n,
        seed,
        ..PcConfig::for_sde(sde)
    }
}

#[test]
fn criterion_04_sampler_correctness() {
    let _serial = exclusive();
    let start = Instant::now();
    let data = bimodal();
    let cdf = cdf_of(&data);
    let mut parts = Vec::new();
    let mut pass = true;
    for (sde, snr) in [(Sde::ve(), 0.16), (Sde::vp(), 0.01)] {
        let cfg = PcConfig {
            snr,
            ..pc_config(&sde, 10_000, 4)
        };
        let batch = sdelab::pc_sample(&sde, &MixtureScore::new(data.clone(), sde), &cfg).unwrap();
        let ks = ks_1d(&first_coords(&batch.samples), &cdf).unwrap();
        pass &= ks.p_value > 0.01;
        parts.push(format!("{} KS p {:.3}", sde.kind, ks.p_value));
    }

    let mut small = Sde::vp();
    small.beta_min *= 1e-3;
    small.beta_max *= 1e-3;
    let oracle = MixtureScore::new(data.clone(), small);
    let run = |predictor| {
        let cfg = PcConfig {
            predictor,
            corrector: Corrector::None,
            corrector_steps: 0,
            denoise: false,
            record_trajectory: true,
            ..pc_config(&small, 200, 5)
        };
        sdelab::pc_sample(&small, &oracle, &cfg).unwrap().trajectories.unwrap()
    };
    let (anc, rd) = (run(Predictor::Ancestral), run(Predictor::ReverseDiffusion));
    let mut max_dev: f64 = 0.0;
    for (a, r) in anc.iter().zip(&rd) {
        for (xa, xr) in a.iter().zip(r) {
            for (u, v) in xa.iter().zip(xr) {
                max_dev = max_dev.max((u - v).abs());
            }
        }
    }
    pass &= max_dev < 1e-6;
    parts.push(format!("ancestral vs reverse diffusion max deviation {max_dev:.1e}"));
    let elapsed = start.elapsed();
    pass &= within(elapsed, 60);
    report(
        4,
        "PC sampling matches the data law",
        pass,
        &parts.join(", "),
        elapsed,
        Some(Duration::from_secs(60)),
    );
}

#[test]
fn criterion_05_pc_beats_predictor_only() {
    let _serial = exclusive();
    let start = Instant::now();
    let data = bimodal();
    let sde = Sde::ve();
    let oracle = MixtureScore::new(data.clone(), sde);
    let pc = PcConfig {
        steps: 100,
        ..pc_config(&sde, 10_000, 5)
    };
    let p = PcConfig {
        steps: 200,
        corrector: Corrector::None,
        corrector_steps: 0,
        ..pc.clone()
    };
    assert_eq!(pc.score_evals(), p.score_evals());
    let pc_s = sdelab::pc_sample(&sde, &oracle, &pc).unwrap().samples;
    let p_s = sdelab::pc_sample(&sde, &oracle, &p).unwrap().samples;
    let a = mmd_rbf_to_mixture(&pc_s, &data, 1.0).unwrap();
    let b = mmd_rbf_to_mixture(&p_s, &data, 1.0).unwrap();
    let elapsed = start.elapsed();
    let pass = a < b && within(elapsed, 60);
    report(
        5,
        "PC beats predictor-only at equal score budget",
        pass,
        &format!(
            "MMD² PC(N=100, M=1) {a:.3e} vs P(N=200) {b:.3e}, {} evals each",
            pc.score_evals()
        ),
        elapsed,
        Some(Duration::from_secs(60)),
    );
}

#[test]
fn criterion_06_probability_flow_equivalence() {
    let _serial = exclusive();
    let start = Instant::now();
    let data = bimodal();
    let sde = Sde::vp();
    let oracle = MixtureScore::new(data, sde);
    let n = 10_000;
    let flow = flow_sample(&sde, &oracle, n, &OdeConfig::default(), 6).unwrap();
    let pc = sdelab::pc_sample(&sde, &oracle, &pc_config(&sde, n, 6))
        .unwrap()
        .samples;
    let ks = ks_2sample(&first_coords(&flow), &first_coords(&pc)).unwrap();
    let crit = ks_critical_2sample(0.01, n, n);
    let elapsed = start.elapsed();
    let pass = ks.statistic < crit && within(elapsed, 120);
    report(
        6,
        "probability-flow samples match PC samples",
        pass,
        &format!("two-sample KS {:.4} vs 1% critical {crit:.4}", ks.statistic),
        elapsed,
        Some(Duration::from_secs(120)),
    );
}

/// Max |computed − reference| and max change under 10× tighter tolerances.
fn likelihood_errors(data: &GaussianMixture, xs: &[f64]) -> (f64, f64) {
    let sde = Sde::vp();
    let oracle = MixtureScore::new(data.clone(), sde);
    let reference = data.perturb(&sde, sde.eps_train);
    let cfg = OdeConfig::default();
    let tight = cfg.scaled_tolerances(0.1);
    let (mut err, mut change): (f64, f64) = (0.0, 0.0);
    for (i, &x) in xs.iter().enumerate() {
        let a = log_likelihood(&[x], &oracle, &sde, &cfg, &mut stream(7, "likelihood", i as u64)).unwrap();
        let b = log_likelihood(&[x], &oracle, &sde, &tight, &mut stream(7, "likelihood", i as u64)).unwrap();
        err = err.max((a.log_prob - reference.log_density(&[x])).abs());
        change = change.max((a.log_prob - b.log_prob).abs());
    }
    (err, change)
}

#[test]
fn criterion_07_exact_likelihood() {
    let _serial = exclusive();
    let start = Instant::now();
    let grid = |lo: f64, hi: f64| -> Vec<f64> { (0..21).map(|i| lo + (hi - lo) * i as f64 / 20.0).collect() };
    let gauss = GaussianMixture::new(vec![1.0], vec![vec![0.0]], vec![vec![0.25]]).unwrap();
    let (g_err, g_change) = likelihood_errors(&gauss, &grid(-1.5, 1.5));
    let mix = GaussianMixture::new(
        vec![0.5, 0.5],
        vec![vec![-1.5], vec![1.5]],
        vec![vec![0.25], vec![0.25]],
    )
    .unwrap();
    let (m_err, m_change) = likelihood_errors(&mix, &grid(-3.0, 3.0));
    let elapsed = start.elapsed();
    let pass = g_err < 1e-3 && m_err < 2e-3 && g_change < 1e-3 && m_change < 1e-3 && within(elapsed, 120);
    report(
        7,
        "probability-flow likelihood matches closed form",
        pass,
        &format!(
            "Gaussian max err {g_err:.1e} nats, mixture max err {m_err:.1e} nats, tolerance x0.1 change {:.1e}",
            g_change.max(m_change)
        ),
        elapsed,
        Some(Duration::from_secs(120)),
    );
}

#[test]
fn criterion_08_hutchinson() {
    let _serial = exclusive();
    let start = Instant::now();
    let mut rng = stream(8, "hutchinson", 0);
    let d = 8;

    let diag: Vec<f64> = (0..d).map(|_| uniform(&mut rng, -2.0, 2.0)).collect();
    let trace: f64 = diag.iter().sum();
    let diag_field = |x: &[f64]| x.iter().zip(&diag).map(|(a, b)| a * b).collect::<Vec<f64>>();
    let mut diag_err: f64 = 0.0;
    for _ in 0..1000 {
        let x: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
        let probe = draw_probes(&mut rng, ProbeKind::Rademacher, d, 1);
        diag_err = diag_err.max((divergence_with_probes(diag_field, &x, &probe) - trace).abs());
    }

    let trials = 200;
    let mut normalized = Vec::new();
    for k in [16usize, 256, 4096] {
        let mut sq = 0.0;
        for _ in 0..trials {
            let a: Vec<f64> = (0..d * d).map(|_| normal(&mut rng)).collect();
            let tr: f64 = (0..d).map(|i| a[i * d + i]).sum();
            let field = |x: &[f64]| {
                (0..d)
                    .map(|i| (0..d).map(|j| a[i * d + j] * x[j]).sum())
                    .collect::<Vec<f64>>()
            };
            let x: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
            let probes = draw_probes(&mut rng, ProbeKind::Rademacher, d, k);
            sq += (divergence_with_probes(field, &x, &probes) - tr).powi(2);
        }
        normalized.push(((sq / trials as f64).sqrt() * (k as f64).sqrt(), k));
    }
    let lo = normalized.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = normalized.iter().map(|p| p.0).fold(0.0, f64::max);
    let elapsed = start.elapsed();
    let pass = diag_err < 1e-9 && hi / lo <= 1.5 && within(elapsed, 30);
    let trend: Vec<String> = normalized.iter().map(|(v, k)| format!("K={k}: {v:.3}")).collect();
    report(
        8,
        "Hutchinson divergence estimator",
        pass,
        &format!(
            "diagonal per-probe max err {diag_err:.1e}; RMS·√K {} (spread {:.3})",
            trend.join(", "),
            hi / lo
        ),
        elapsed,
        Some(Duration::from_secs(30)),
    );
}

struct Trained {
    net: MlpScoreNet,
    seconds: f64,
}

fn train_benchmark(width: usize, seed: u64) -> Trained {
    let start = Instant::now();
    let sde = Sde::vp();
    let data = benchmark_2d();
    let cfg = NetConfig {
        hidden: vec![width, width],
        ..NetConfig::default()
    };
    let mut net = MlpScoreNet::new(2, cfg, sde, seed).unwrap();
    let tc = TrainConfig {
        iterations: 20_000,
        seed,
        ..TrainConfig::default()
    };
    train(&mut net, move |n, r| data.sample(n, r), &sde, &tc).unwrap();
    Trained {
        net,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn net_64() -> &'static Trained {
    static NET: OnceLock<Trained> = OnceLock::new();
    NET.get_or_init(|| train_benchmark(64, 1))
}

fn net_128() -> &'static Trained {
    static NET: OnceLock<Trained> = OnceLock::new();
    NET.get_or_init(|| train_benchmark(128, 2))
}

#[test]
fn criterion_09_identifiability() {
    let _serial = exclusive();
    let (a, b) = (net_64(), net_128());
    let start = Instant::now();
    let sde = Sde::vp();
    let xs = benchmark_2d().sample(64, &mut stream(9, "points", 0));
    let rep = identifiability_report(&a.net, &b.net, &xs, &sde, &OdeConfig::default(), 9).unwrap();
    let elapsed = start.elapsed() + Duration::from_secs_f64(a.seconds + b.seconds);
    let pass = rep.min_correlation > 0.95 && rep.max_abs_shuffled_correlation < 0.3 && within(elapsed, 900);
    report(
        9,
        "independently trained nets give matching encodings",
        pass,
        &format!(
            "correlations {:?}, shuffled max |rho| {:.3}",
            rep.correlations.iter().map(|c| format!("{c:.4}")).collect::<Vec<_>>(),
            rep.max_abs_shuffled_correlation
        ),
        elapsed,
        Some(Duration::from_secs(900)),
    );
}

#[test]
fn criterion_10_conditional_generation() {
    let _serial = exclusive();
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;

    // Imputation: unit-variance bivariate Gaussian with correlation 0.8,
    // written as a rotated diagonal Gaussian; x₁ = 1 observed.
    let sde = Sde::ve();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let rotation = Matrix::from_rows(&[vec![h, h], vec![h, -h]]).unwrap();
    let diag = GaussianMixture::new(vec![1.0], vec![vec![0.0, 0.0]], vec![vec![1.8, 0.2]]).unwrap();
    let corr = RotatedMixtureScore::new(MixtureScore::new(diag, sde), rotation).unwrap();
    let n = 100_000;
    let cfg = PcConfig {
        corrector_steps: 2,
        snr: 0.1,
        ..pc_config(&sde, n, 10)
    };
    let y = 1.0;
    let batch = impute(&corr, &sde, &[1], &[y], &cfg).unwrap();
    let xs: Vec<f64> = unknown_coordinates(&batch.samples, &[1]).iter().map(|v| v[0]).collect();
    let (mean, var) = mean_var(&xs).unwrap();
    let (se_mean, se_var) = ((0.36 / n as f64).sqrt(), 0.36 * (2.0 / (n as f64 - 1.0)).sqrt());
    let imputation_ok = (mean - 0.8 * y).abs() <= 3.0 * se_mean && (var - 0.36).abs() <= 3.0 * se_var;
    pass &= imputation_ok;
    parts.push(format!(
        "imputed mean {mean:.4} ({:.1} SE), var {var:.4} ({:.1} SE)",
        (mean - 0.8 * y) / se_mean,
        (var - 0.36) / se_var
    ));

    // Class-conditional sampling on components 10σ apart.
    let sep = GaussianMixture::new(vec![0.8, 0.2], vec![vec![0.0], vec![10.0]], vec![vec![1.0], vec![1.0]]).unwrap();
    let sde = Sde::ve();
    let batch = class_conditional_sample(&sep, &sde, 1, &pc_config(&sde, 2000, 10)).unwrap();
    let exact = sep.perturb(&Sde::vp(), 0.0);
    let hits = batch
        .samples
        .iter()
        .filter(|x| {
            let post = exact.component_posterior(x);
            post[1] > post[0]
        })
        .count();
    let frac = hits as f64 / batch.samples.len() as f64;
    pass &= frac >= 0.99;
    parts.push(format!("class mass {:.2}%", 100.0 * frac));

    // Linear-Gaussian inverse problem: prior N(0, I), A = (1 0), y = 2, noise 0.5.
    let sde = Sde::ve();
    let prior = GaussianMixture::standard_normal(2);
    let a = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
    let score = linear_inverse_score(MixtureScore::new(prior, sde), sde, a, vec![2.0], 0.5).unwrap();
    let n = 10_000;
    let batch = sdelab::pc_sample(&sde, &score, &pc_config(&sde, n, 11)).unwrap();
    let (m1, _) = mean_var(&first_coords(&batch.samples)).unwrap();
    let se = (0.2 / n as f64).sqrt();
    pass &= (m1 - 1.6).abs() <= 3.0 * se;
    parts.push(format!(
        "inverse posterior mean {m1:.4} vs 1.6 ({:.1} SE)",
        (m1 - 1.6) / se
    ));

    let elapsed = start.elapsed();
    pass &= within(elapsed, 120);
    report(
        10,
        "conditional generation",
        pass,
        &parts.join(", "),
        elapsed,
        Some(Duration::from_secs(120)),
    );
}

fn probe_net(seed: u64) -> MlpScoreNet {
    let cfg = NetConfig {
        hidden: vec![2],
        embed_width: 2,
        fourier_scale: 16.0,
    };
    let mut net = MlpScoreNet::new(1, cfg, Sde::vp(), seed).unwrap();
    let mut rng = stream(seed, "probe-params", 0);
    for p in net.params_mut() {
        *p += 0.3 * normal(&mut rng);
    }
    net
}

/// Max over parameters of |analytic − FD| / max(|FD|∞, 1e-8).
fn gradient_error(net: &MlpScoreNet, loss: impl Fn(&MlpScoreNet) -> (f64, Vec<f64>)) -> f64 {
    let (_, g) = loss(net);
    let fd: Vec<f64> = (0..net.num_params())
        .map(|k| {
            let h = 1e-6 * (1.0 + net.params()[k].abs());
            let (mut p, mut m) = (net.clone(), net.clone());
            p.params_mut()[k] += h;
            m.params_mut()[k] -= h;
            (loss(&p).0 - loss(&m).0) / (2.0 * h)
        })
        .collect();
    let scale = fd.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-8);
    g.iter()
        .zip(&fd)
        .map(|(a, b)| (a - b).abs() / scale)
        .fold(0.0, f64::max)
}

#[test]
fn criterion_11_training_sanity() {
    let _serial = exclusive();
    let trained = net_64();
    let start = Instant::now();
    let batch = vec![vec![0.5], vec![-1.2], vec![2.0]];
    let smld = DiscreteSchedule::smld(10, 0.01, 50.0).unwrap();
    let ddpm = DiscreteSchedule::ddpm(100, 0.1, 20.0).unwrap();
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    for point in 0..100u64 {
        let net = probe_net(point);
        let sde = *net.sde();
        let ve = Sde::ve();
        let errs = [
            (
                "dsm",
                gradient_error(&net, |m| {
                    dsm_loss_continuous(m, &batch, &sde, TimeSampler::Uniform, &mut stream(point, "l", 0)).unwrap()
                }),
            ),
            (
                "smld",
                gradient_error(&net, |m| {
                    discrete_loss(m, &batch, &smld, &mut stream(point, "l", 1)).unwrap()
                }),
            ),
            (
                "ddpm",
                gradient_error(&net, |m| {
                    discrete_loss(m, &batch, &ddpm, &mut stream(point, "l", 2)).unwrap()
                }),
            ),
            (
                "ssm",
                gradient_error(&net, |m| {
                    ssm_loss(
                        m,
                        &batch,
                        &ve,
                        TimeSampler::Uniform,
                        ProbeKind::Rademacher,
                        1e-4,
                        &mut stream(point, "l", 3),
                    )
                    .unwrap()
                }),
            ),
        ];
        for (name, e) in errs {
            let w = worst.entry(name).or_insert(0.0);
            *w = w.max(e);
        }
    }
    let grads_ok = worst.values().all(|&e| e < 1e-4);

    let oracle = MixtureScore::new(benchmark_2d(), Sde::vp());
    let grid = grid_2d();
    let (mse, norm2) = score_mse(&trained.net, &oracle, &grid, &[0.1, 0.5, 0.9]);
    let rel = mse / norm2;
    let per_t: Vec<String> = [0.1, 0.5, 0.9]
        .iter()
        .map(|&t| {
            let (m, n2) = score_mse(&trained.net, &oracle, &grid, &[t]);
            format!("t={t}: {:.2}%", 100.0 * m / n2)
        })
        .collect();
    let elapsed = start.elapsed() + Duration::from_secs_f64(trained.seconds);
    let pass = grads_ok && rel < 0.05 && within(elapsed, 900);
    let grads: Vec<String> = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
    report(
        11,
        "objective gradients and DSM training",
        pass,
        &format!(
            "worst gradient error {}; oracle MSE {:.2}% of mean squared norm ({})",
            grads.join(", "),
            100.0 * rel,
            per_t.join(", ")
        ),
        elapsed,
        Some(Duration::from_secs(900)),
    );
}

/// Per-task overrides that keep every CLI task small.
fn cli_cases(checkpoint: &Path) -> Vec<(&'static str, Vec<String>)> {
    let two_d = [
        "data.weights=0.5,0.5",
        "data.means=-1,0;1,0.5",
        "data.variances=0.5,0.5;0.5,0.5",
    ];
    let small_sampler = ["sampler.batch_size=200", "sampler.steps=100"];
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    vec![
        ("sample", s(&small_sampler)),
        ("train", s(&["train.iterations=200", "net.hidden=16,16"])),
        (
            "sample",
            [
                s(&small_sampler),
                vec![
                    "score.source=checkpoint".into(),
                    format!("score.checkpoint={}", checkpoint.display()),
                ],
            ]
            .concat(),
        ),
        ("likelihood", s(&["points.count=8"])),
        ("encode", s(&["points.count=8"])),
        ("decode", s(&["points.count=50"])),
        (
            "impute",
            [
                s(&two_d),
                s(&small_sampler),
                s(&["impute.indices=1", "impute.values=0.3"]),
            ]
            .concat(),
        ),
        ("condition", [s(&small_sampler), s(&["condition.class=1"])].concat()),
        (
            "condition",
            [
                s(&two_d),
                s(&small_sampler),
                s(&["condition.kind=linear", "condition.a=1,0", "condition.y=0.5"]),
            ]
            .concat(),
        ),
        ("kernel-check", vec![]),
        ("variance-check", vec![]),
        ("sampler-bench", s(&["sampler.batch_size=200", "bench.steps=20"])),
        (
            "identifiability",
            s(&["train.iterations=100", "net.hidden=16,16", "ident.points=8"]),
        ),
    ]
}

/// Run one CLI invocation in-process on a pool of `threads` workers.
fn run_cli(task: &str, sets: &[String], out: &Path, threads: usize) {
    let mut argv = vec![
        "sdelab".to_string(),
        task.to_string(),
        "--seed".into(),
        "12".into(),
        "--out".into(),
        out.display().to_string(),
    ];
    for s in sets {
        argv.push("--set".into());
        argv.push(s.clone());
    }
    let args = Args::parse_from_argv(argv).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    if let Err(e) = pool.install(|| execute(&args)) {
        panic!("{task} failed: {}", e.to_json_line());
    }
}

fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

#[test]
fn criterion_12_cli_determinism() {
    let _serial = exclusive();
    let start = Instant::now();
    let root = tempfile::tempdir().unwrap();
    let ckpt_dir = root.path().join("ckpt");
    run_cli(
        "train",
        &["train.iterations=200".into(), "net.hidden=16,16".into()],
        &ckpt_dir,
        1,
    );
    let checkpoint = ckpt_dir.join("checkpoint.json");
    let mut mismatches = Vec::new();
    let mut files = 0;
    for (i, (task, sets)) in cli_cases(&checkpoint).iter().enumerate() {
        let runs: Vec<_> = [(1usize, "a"), (1, "b"), (4, "c")]
            .iter()
            .map(|&(threads, tag)| {
                let out = root.path().join(format!("{i}-{tag}"));
                run_cli(task, sets, &out, threads);
                dir_contents(&out)
            })
            .collect();
        files += runs[0].len();
        if runs.iter().any(|r| r != &runs[0]) {
            mismatches.push(format!("{task}#{i}"));
        }
    }
    let elapsed = start.elapsed();
    let pass = mismatches.is_empty();
    report(
        12,
        "CLI artifacts are byte-identical across reruns and thread counts",
        pass,
        &format!(
            "{} task runs x3 ({files} files each), mismatches: {}",
            cli_cases(&checkpoint).len(),
            if mismatches.is_empty() {
                "none".to_string()
            } else {
                mismatches.join(", ")
            }
        ),
        elapsed,
        None,
    );
}
