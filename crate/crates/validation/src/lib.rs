//! Benchmark distributions and reporting for the acceptance suite in
//! `tests/acceptance.rs`.

use std::io::Write;
use std::sync::{Mutex, MutexGuard};
use std::time::Duration;

use sdelab::GaussianMixture;

/// Print one `PASS`/`FAIL` line past the harness capture, then assert.
pub fn report(id: u32, name: &str, pass: bool, detail: &str, elapsed: Duration, budget: Option<Duration>) {
    let timing = match budget {
        Some(b) => format!("{:.1}s / budget {:.0}s", elapsed.as_secs_f64(), b.as_secs_f64()),
        None => format!("{:.1}s", elapsed.as_secs_f64()),
    };
    let line = format!(
        "{} [{id:>2}] {name}: {detail} ({timing})\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "{}", line.trim_end());
}

/// Held for the duration of a criterion so criteria never overlap.
pub fn exclusive() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

pub fn within(elapsed: Duration, secs: u64) -> bool {
    elapsed <= Duration::from_secs(secs)
}

/// The 1D bimodal benchmark: weights 0.3/0.7, means ∓2, variances 0.25.
pub fn bimodal() -> GaussianMixture {
    GaussianMixture::new(
        vec![0.3, 0.7],
        vec![vec![-2.0], vec![2.0]],
        vec![vec![0.25], vec![0.25]],
    )
    .unwrap()
}

/// The 2D two-component benchmark used for training.
pub fn benchmark_2d() -> GaussianMixture {
    GaussianMixture::isotropic(vec![0.5, 0.5], vec![vec![-1.5, -1.0], vec![1.5, 1.0]], vec![0.5, 0.5]).unwrap()
}

/// 32×32 grid over `[-3, 3]²`.
pub fn grid_2d() -> Vec<Vec<f64>> {
    (0..32)
        .flat_map(|i| (0..32).map(move |j| vec![-3.0 + 6.0 * i as f64 / 31.0, -3.0 + 6.0 * j as f64 / 31.0]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_have_expected_shapes() {
        assert_eq!(bimodal().dim(), 1);
        assert_eq!(benchmark_2d().components(), 2);
        let grid = grid_2d();
        assert_eq!(grid.len(), 1024);
        assert_eq!(grid[0], vec![-3.0, -3.0]);
        assert_eq!(grid[1023], vec![3.0, 3.0]);
    }
}
