//! Sample-quality statistics against analytic or sampled references.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::GaussianMixture;

fn check_samples(samples: &[Vec<f64>], min: usize) -> Result<usize> {
    if samples.len() < min {
        return Err(Error::param("samples", format!("need at least {min} samples")));
    }
    let d = samples[0].len();
    if let Some(x) = samples.iter().find(|x| x.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: x.len(),
        });
    }
    Ok(d)
}

/// Sample mean and unbiased covariance.
pub fn moments(samples: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let d = check_samples(samples, 2)?;
    let n = samples.len() as f64;
    let mut mean = vec![0.0; d];
    for x in samples {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = vec![vec![0.0; d]; d];
    for x in samples {
        for i in 0..d {
            let di = x[i] - mean[i];
            for j in 0..d {
                cov[i][j] += di * (x[j] - mean[j]);
            }
        }
    }
    cov.iter_mut().flatten().for_each(|c| *c /= n - 1.0);
    Ok((mean, cov))
}

/// Mean and unbiased variance of scalars.
pub fn mean_var(xs: &[f64]) -> Result<(f64, f64)> {
    if xs.len() < 2 {
        return Err(Error::param("samples", "need at least 2 samples"));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Median pairwise distance over the pooled sample (first 1000 of each set).
pub fn median_bandwidth(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let pool: Vec<&Vec<f64>> = a.iter().take(1000).chain(b.iter().take(1000)).collect();
    let mut d: Vec<f64> = Vec::with_capacity(pool.len() * pool.len() / 2);
    for i in 0..pool.len() {
        for j in i + 1..pool.len() {
            d.push(sq_dist(pool[i], pool[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let med = d[d.len() / 2];
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

fn kernel_row_sums(x: &[Vec<f64>], y: &[Vec<f64>], gamma: f64, skip_diag: bool) -> f64 {
    let rows = crate::par::map_indices(x.len(), |i| {
        y.iter()
            .enumerate()
            .filter(|(j, _)| !(skip_diag && *j == i))
            .map(|(_, yj)| (-gamma * sq_dist(&x[i], yj)).exp())
            .sum::<f64>()
    });
    rows.into_iter().sum()
}

/// Unbiased MMD² with kernel `exp(-‖x-y‖²/(2h²))`; `None` picks `h` by the
/// median heuristic. The estimate can be slightly negative.
pub fn mmd_rbf(a: &[Vec<f64>], b: &[Vec<f64>], bandwidth: Option<f64>) -> Result<f64> {
    let da = check_samples(a, 2)?;
    let db = check_samples(b, 2)?;
    if da != db {
        return Err(Error::DimensionMismatch { expected: da, got: db });
    }
    let h = bandwidth.unwrap_or_else(|| median_bandwidth(a, b));
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::param("bandwidth", "must be positive"));
    }
    let gamma = 1.0 / (2.0 * h * h);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let kaa = kernel_row_sums(a, a, gamma, true) / (n * (n - 1.0));
    let kbb = kernel_row_sums(b, b, gamma, true) / (m * (m - 1.0));
    let kab = kernel_row_sums(a, b, gamma, false) / (n * m);
    Ok(kaa + kbb - 2.0 * kab)
}

/// Biased (V-statistic) MMD², always non-negative.
pub fn mmd_rbf_biased(a: &[Vec<f64>], b: &[Vec<f64>], bandwidth: f64) -> Result<f64> {
    check_samples(a, 1)?;
    check_samples(b, 1)?;
    let gamma = 1.0 / (2.0 * bandwidth * bandwidth);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let kaa = kernel_row_sums(a, a, gamma, false) / (n * n);
    let kbb = kernel_row_sums(b, b, gamma, false) / (m * m);
    let kab = kernel_row_sums(a, b, gamma, false) / (n * m);
    Ok((kaa + kbb - 2.0 * kab).max(0.0))
}

/// Unbiased squared RBF MMD between `samples` and an analytic Gaussian
/// mixture, with the mixture expectations in closed form.
pub fn mmd_rbf_to_mixture(samples: &[Vec<f64>], gmm: &GaussianMixture, bandwidth: f64) -> Result<f64> {
    let d = check_samples(samples, 2)?;
    if d != gmm.dim() {
        return Err(Error::DimensionMismatch {
            expected: gmm.dim(),
            got: d,
        });
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::param("bandwidth", "must be positive"));
    }
    let h2 = bandwidth * bandwidth;
    let gauss = |diff: f64, v: f64| (h2 / (h2 + v)).sqrt() * (-diff * diff / (2.0 * (h2 + v))).exp();
    let (w, mu, var) = (gmm.weights(), gmm.means(), gmm.variances());
    let mut kpp = 0.0;
    for k in 0..w.len() {
        for l in 0..w.len() {
            let prod: f64 = (0..d)
                .map(|j| gauss(mu[k][j] - mu[l][j], var[k][j] + var[l][j]))
                .product();
            kpp += w[k] * w[l] * prod;
        }
    }
    let cross: f64 = crate::par::map_indices(samples.len(), |i| {
        let x = &samples[i];
        (0..w.len())
            .map(|k| w[k] * (0..d).map(|j| gauss(x[j] - mu[k][j], var[k][j])).product::<f64>())
            .sum::<f64>()
    })
    .into_iter()
    .sum();
    let n = samples.len() as f64;
    let kxx = kernel_row_sums(samples, samples, 1.0 / (2.0 * h2), true) / (n * (n - 1.0));
    Ok(kxx + kpp - 2.0 * cross / n)
}

/// Asymptotic Kolmogorov tail `P(K > λ)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

fn sorted_finite(xs: &[f64]) -> Result<Vec<f64>> {
    if xs.is_empty() {
        return Err(Error::param("samples", "need at least one sample"));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::param("samples", "must be finite"));
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

fn ks_p(d: f64, n_eff: f64) -> f64 {
    let s = n_eff.sqrt();
    kolmogorov_sf((s + 0.12 + 0.11 / s) * d)
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF.
pub fn ks_1d<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<KsResult> {
    let xs = sorted_finite(samples)?;
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    Ok(KsResult {
        statistic: d,
        p_value: ks_p(d, n),
    })
}

/// Two-sample Kolmogorov–Smirnov test.
pub fn ks_2sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    let (xa, xb) = (sorted_finite(a)?, sorted_finite(b)?);
    let (n, m) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < xa.len() && j < xb.len() {
        let v = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= v {
            i += 1;
        }
        while j < xb.len() && xb[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    Ok(KsResult {
        statistic: d,
        p_value: ks_p(d, n * m / (n + m)),
    })
}

/// `c(α)` with `P(K > c) = α` for the asymptotic Kolmogorov law.
pub fn kolmogorov_quantile(alpha: f64) -> f64 {
    let (mut lo, mut hi) = (0.2, 5.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if kolmogorov_sf(mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Two-sample KS critical value at level `alpha`.
pub fn ks_critical_2sample(alpha: f64, n: usize, m: usize) -> f64 {
    let (n, m) = (n as f64, m as f64);
    kolmogorov_quantile(alpha) * ((n + m) / (n * m)).sqrt()
}

/// `W₁` between two empirical distributions: `∫|F_a - F_b|`.
pub fn wasserstein1_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    let (xa, xb) = (sorted_finite(a)?, sorted_finite(b)?);
    let (n, m) = (xa.len() as f64, xb.len() as f64);
    let mut pts: Vec<f64> = xa.iter().chain(&xb).copied().collect();
    pts.sort_by(f64::total_cmp);
    let (mut i, mut j, mut total) = (0usize, 0usize, 0.0);
    for w in pts.windows(2) {
        while i < xa.len() && xa[i] <= w[0] {
            i += 1;
        }
        while j < xb.len() && xb[j] <= w[0] {
            j += 1;
        }
        total += (i as f64 / n - j as f64 / m).abs() * (w[1] - w[0]);
    }
    Ok(total)
}

/// `W₁` between an empirical distribution and a continuous CDF,
/// `∫|F_n - F|`, by composite Simpson quadrature between order statistics
/// and over tails extended until `F` is within `1e-12` of 0 or 1.
pub fn wasserstein1_to_cdf<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<f64> {
    let xs = sorted_finite(samples)?;
    let n = xs.len() as f64;
    let spread = (xs[xs.len() - 1] - xs[0]).max(1.0);
    let simpson = |lo: f64, hi: f64, level: f64| -> f64 {
        let k = 8;
        let h = (hi - lo) / k as f64;
        (0..=k)
            .map(|i| {
                let w = if i == 0 || i == k {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                w * (level - cdf(lo + i as f64 * h)).abs()
            })
            .sum::<f64>()
            * h
            / 3.0
    };
    let mut total = 0.0;
    let mut lo = xs[0];
    let mut step = spread;
    while cdf(lo) > 1e-12 && step < 1e6 {
        total += simpson(lo - step, lo, 0.0);
        lo -= step;
        step *= 2.0;
    }
    for (i, w) in xs.windows(2).enumerate() {
        if w[1] > w[0] {
            total += simpson(w[0], w[1], (i + 1) as f64 / n);
        }
    }
    let mut hi = xs[xs.len() - 1];
    let mut step = spread;
    while 1.0 - cdf(hi) > 1e-12 && step < 1e6 {
        total += simpson(hi, hi + step, 1.0);
        hi += step;
        step *= 2.0;
    }
    Ok(total)
}

/// `KL(P_hist ‖ P_ref)` between a histogram of `samples` on `bins` equal
/// cells over `[lo, hi]` and a reference CDF integrated over the same cells.
/// Samples outside the range are dropped.
pub fn histogram_kl<F: Fn(f64) -> f64>(samples: &[f64], cdf: F, lo: f64, hi: f64, bins: usize) -> Result<f64> {
    if bins == 0 || hi <= lo {
        return Err(Error::param("bins", "need a nonempty range and at least one bin"));
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &x in samples {
        if x >= lo && x < hi {
            counts[(((x - lo) / width) as usize).min(bins - 1)] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::param("samples", "no samples inside the histogram range"));
    }
    let mass = cdf(hi) - cdf(lo);
    let mut kl = 0.0;
    for (b, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let p = c as f64 / total as f64;
        let a = lo + b as f64 * width;
        let q = ((cdf(a + width) - cdf(a)) / mass).max(1e-300);
        kl += p * (p / q).ln();
    }
    Ok(kl)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metrics: BTreeMap<String, f64>,
    pub counts: BTreeMap<String, usize>,
    pub reference: String,
    pub seed: u64,
}

impl MetricReport {
    pub fn new(reference: impl Into<String>, seed: u64) -> Self {
        MetricReport {
            reference: reference.into(),
            seed,
            ..Default::default()
        }
    }

    pub fn insert(&mut self, name: &str, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::param("metric", format!("`{name}` is not finite")));
        }
        self.metrics.insert(name.to_string(), value);
        Ok(())
    }

    pub fn count(&mut self, name: &str, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::param("count", format!("`{name}` must be positive")));
        }
        self.counts.insert(name.to_string(), n);
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn csv_header(&self) -> String {
        let mut cols = vec!["seed".to_string(), "reference".to_string()];
        cols.extend(self.metrics.keys().cloned());
        cols.extend(self.counts.keys().map(|k| format!("n_{k}")));
        cols.join(",")
    }

    /// One CSV row matching [`MetricReport::csv_header`], floats at 17 significant digits.
    pub fn csv_row(&self) -> String {
        let mut cols = vec![self.seed.to_string(), self.reference.replace(',', ";")];
        cols.extend(self.metrics.values().map(|v| format!("{v:.16e}")));
        cols.extend(self.counts.values().map(|n| n.to_string()));
        cols.join(",")
    }
}
