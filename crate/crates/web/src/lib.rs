//! WebAssembly bindings for the browser demo. Every export returns a flat
//! `Float64Array`; the layout is documented on each function.

use sdelab::samplers::time_grid;
use sdelab::sde::kernel_match_report;
use sdelab::{pc_sample, Corrector, GaussianMixture, MixtureScore, PcConfig, Predictor, Sde, SdeKind};
use wasm_bindgen::prelude::*;

fn sde_of(kind: &str) -> Result<Sde, String> {
    let kind: SdeKind = kind.parse().map_err(|e: sdelab::Error| e.to_string())?;
    Ok(Sde::with_defaults(kind))
}

/// Two modes at `∓half_gap` with variance 0.25; `right_weight` on the right one.
fn bimodal(right_weight: f64, half_gap: f64) -> Result<GaussianMixture, String> {
    GaussianMixture::new(
        vec![1.0 - right_weight, right_weight],
        vec![vec![-half_gap], vec![half_gap]],
        vec![vec![0.25], vec![0.25]],
    )
    .map_err(|e| e.to_string())
}

pub fn kernel_rows(kind: &str, steps: usize) -> Result<Vec<f64>, String> {
    let report = kernel_match_report(&sde_of(kind)?, steps).map_err(|e| e.to_string())?;
    Ok(report
        .rows
        .iter()
        .flat_map(|r| {
            [
                r.t,
                r.discrete_std,
                r.continuous_std,
                r.discrete_mean_coeff,
                r.continuous_mean_coeff,
            ]
        })
        .collect())
}

#[allow(clippy::too_many_arguments)]
pub fn sample_histogram(
    kind: &str,
    steps: usize,
    corrector_steps: usize,
    snr: f64,
    n: usize,
    seed: u64,
    right_weight: f64,
    half_gap: f64,
    bins: usize,
) -> Result<Vec<f64>, String> {
    if bins == 0 {
        return Err("bins must be positive".into());
    }
    let sde = sde_of(kind)?;
    let data = bimodal(right_weight, half_gap)?;
    let cfg = PcConfig {
        steps,
        corrector: if corrector_steps > 0 {
            Corrector::Langevin
        } else {
            Corrector::None
        },
        corrector_steps,
        snr,
        batch_size: n,
        seed,
        ..PcConfig::for_sde(&sde)
    };
    let batch = pc_sample(&sde, &MixtureScore::new(data.clone(), sde), &cfg).map_err(|e| e.to_string())?;
    let (lo, hi) = (-half_gap - 2.0, half_gap + 2.0);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0.0; bins];
    for x in &batch.samples {
        let i = ((x[0] - lo) / width).floor();
        if i >= 0.0 && (i as usize) < bins {
            counts[i as usize] += 1.0;
        }
    }
    let exact = data.perturb(&sde, 0.0);
    let centers: Vec<f64> = (0..bins).map(|i| lo + (i as f64 + 0.5) * width).collect();
    let mut out = centers.clone();
    out.extend(counts.iter().map(|c| c / (n as f64 * width)));
    out.extend(centers.iter().map(|&x| exact.log_density(&[x]).exp()));
    Ok(out)
}

pub fn flow_rows(
    kind: &str,
    paths: usize,
    steps: usize,
    seed: u64,
    right_weight: f64,
    half_gap: f64,
) -> Result<Vec<f64>, String> {
    let sde = sde_of(kind)?;
    let cfg = PcConfig {
        predictor: Predictor::ProbFlow,
        corrector: Corrector::None,
        corrector_steps: 0,
        steps,
        denoise: false,
        batch_size: paths,
        seed,
        record_trajectory: true,
        ..PcConfig::for_sde(&sde)
    };
    let score = MixtureScore::new(bimodal(right_weight, half_gap)?, sde);
    let batch = pc_sample(&sde, &score, &cfg).map_err(|e| e.to_string())?;
    let traj = batch.trajectories.ok_or("trajectory not recorded")?;
    let times = time_grid(cfg.eps(&sde), sde.t_max, steps);
    let mut out = Vec::with_capacity((steps + 1) * (paths + 1));
    for k in 0..=steps {
        out.push(times[steps - k]);
        out.extend(traj.iter().map(|chain| chain[k][0]));
    }
    Ok(out)
}

/// Rows of `(t, discrete_std, continuous_std, discrete_mean_coeff,
/// continuous_mean_coeff)`, one per discrete scale.
#[wasm_bindgen(js_name = kernelCurves)]
pub fn kernel_curves(kind: &str, steps: usize) -> Result<Vec<f64>, JsError> {
    kernel_rows(kind, steps).map_err(|e| JsError::new(&e))
}

/// PC samples of a 1D two-mode mixture binned on `[-gap-2, gap+2]`:
/// `bins` centers, then sampled density, then exact density.
#[wasm_bindgen(js_name = pcHistogram)]
#[allow(clippy::too_many_arguments)]
pub fn pc_histogram(
    kind: &str,
    steps: usize,
    corrector_steps: usize,
    snr: f64,
    n: usize,
    seed: u32,
    right_weight: f64,
    half_gap: f64,
    bins: usize,
) -> Result<Vec<f64>, JsError> {
    sample_histogram(
        kind,
        steps,
        corrector_steps,
        snr,
        n,
        seed.into(),
        right_weight,
        half_gap,
        bins,
    )
    .map_err(|e| JsError::new(&e))
}

/// Probability-flow paths from prior draws to data: `steps + 1` rows of
/// `(t, x_1 … x_paths)`, starting at `t = t_max`.
#[wasm_bindgen(js_name = flowPaths)]
pub fn flow_paths(
    kind: &str,
    paths: usize,
    steps: usize,
    seed: u32,
    right_weight: f64,
    half_gap: f64,
) -> Result<Vec<f64>, JsError> {
    flow_rows(kind, paths, steps, seed.into(), right_weight, half_gap).map_err(|e| JsError::new(&e))
}
