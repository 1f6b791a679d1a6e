//! Bootstrap confidence intervals for the heritability estimate.
//!
//! The rotated response is whitened with the fitted covariance, its
//! components are resampled with replacement, each replicate is recolored
//! and refitted, and the interval is read off the sorted replicate
//! estimates.

use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::mle::{fit_heritability, HeritabilityFit, KinshipEigen};
use crate::par;
use crate::rng::{self, label};

/// How resampled white noise is mapped back to the data scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Recolor {
    /// Multiply by `Gamma^{1/2}`, the inverse of the whitening.
    #[default]
    SqrtGamma,
    /// Multiply by `Gamma` itself.
    FullGamma,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
    pub recolor: Recolor,
    /// Largest tolerated fraction of replicates whose refit fails.
    pub max_dropped_fraction: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replicates: 80,
            seed: 0,
            recolor: Recolor::SqrtGamma,
            max_dropped_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BootstrapResult {
    /// Estimates of the successful replicates, in replicate order.
    pub replicate_etas: Vec<f64>,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Sample variance of the replicate estimates.
    pub variance: f64,
    /// Replicates requested.
    pub k: usize,
    pub dropped: usize,
}

impl BootstrapResult {
    pub fn width(&self) -> f64 {
        self.ci_high - self.ci_low
    }

    pub fn covers(&self, eta: f64) -> bool {
        self.ci_low <= eta && eta <= self.ci_high
    }
}

/// Diagonal of the fitted covariance, `sigma^2 (eta (lambda_i - 1) + 1)`.
pub fn fitted_variances(ke: &KinshipEigen, fit: &HeritabilityFit) -> Vec<f64> {
    ke.lambdas
        .iter()
        .map(|&l| fit.sigma2_hat * (fit.eta_hat * (l - 1.0) + 1.0))
        .collect()
}

pub fn whiten(ke: &KinshipEigen, fit: &HeritabilityFit) -> Vec<f64> {
    fitted_variances(ke, fit)
        .iter()
        .zip(&ke.rotated)
        .map(|(&g, &y)| y / libm::sqrt(g))
        .collect()
}

/// Maps `white[idx[i]]` back to the data scale of component `i`.
pub fn recolor(gamma: &[f64], white: &[f64], idx: &[usize], mode: Recolor) -> Vec<f64> {
    gamma
        .iter()
        .zip(idx)
        .map(|(&g, &k)| match mode {
            Recolor::SqrtGamma => libm::sqrt(g) * white[k],
            Recolor::FullGamma => g * white[k],
        })
        .collect()
}

/// The `k`-th smallest value, 1-based, with `k` clamped to `[1, len]`.
fn order_statistic(sorted: &[f64], k: usize) -> f64 {
    sorted[k.clamp(1, sorted.len()) - 1]
}

pub fn bootstrap_ci(ke: &KinshipEigen, fit: &HeritabilityFit, cfg: &BootstrapConfig) -> Result<BootstrapResult> {
    if cfg.replicates < 20 {
        return Err(Error::InvalidConfig("at least 20 bootstrap replicates are required"));
    }
    if fit.n_obs != ke.n() {
        return Err(Error::DimensionMismatch {
            what: "fit observation count",
            expected: ke.n(),
            found: fit.n_obs,
        });
    }
    let n = ke.n();
    let gamma = fitted_variances(ke, fit);
    let white = whiten(ke, fit);
    let etas: Vec<Option<f64>> = par::map_indexed(cfg.replicates, |b| {
        let mut rng = rng::stream(cfg.seed, &[label::BOOTSTRAP, b as u64]);
        let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        let sample = recolor(&gamma, &white, &idx, cfg.recolor);
        fit_heritability(&ke.with_rotated(sample)).ok().map(|f| f.eta_hat)
    });
    let replicate_etas: Vec<f64> = etas.iter().filter_map(|e| *e).collect();
    let dropped = cfg.replicates - replicate_etas.len();
    if dropped as f64 > cfg.max_dropped_fraction * cfg.replicates as f64 || replicate_etas.len() < 2 {
        return Err(Error::TooManyDroppedReplicates {
            dropped,
            total: cfg.replicates,
        });
    }
    let m = replicate_etas.len();
    let mut sorted = replicate_etas.clone();
    sorted.sort_by(f64::total_cmp);
    let ci_low = order_statistic(&sorted, libm::floor(0.025 * m as f64) as usize);
    let ci_high = order_statistic(&sorted, libm::floor(0.975 * m as f64) as usize);
    let mean = replicate_etas.iter().sum::<f64>() / m as f64;
    let variance = replicate_etas.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (m - 1) as f64;
    Ok(BootstrapResult {
        replicate_etas,
        ci_low,
        ci_high,
        variance,
        k: cfg.replicates,
        dropped,
    })
}
