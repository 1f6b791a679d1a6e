//! Stability selection: screening and a Lasso path on random half-samples,
//! keeping the columns that enter the smallest-penalty active set often
//! enough.
//!
//! Selection frequencies do not depend on the threshold, so they are
//! computed once ([`selection_frequencies`]) and thresholded as often as
//! needed ([`SelectionFrequencies::select`]).

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;

use crate::error::{Error, Result};
use crate::lasso::{lasso_path_tolerant, LassoOptions};
use crate::matrix::ColMatrix;
use crate::par;
use crate::rng::{self, label};
use crate::screening::sis_screen_rows;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StabilityConfig {
    pub n_subsamples: usize,
    pub subsample_fraction: f64,
    pub threshold: f64,
    pub seed: u64,
    pub n_lambdas: usize,
    pub lambda_min_ratio: f64,
    pub lasso: LassoOptions,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            n_subsamples: 50,
            subsample_fraction: 0.5,
            threshold: 0.76,
            seed: 0,
            n_lambdas: 100,
            lambda_min_ratio: 1e-3,
            lasso: LassoOptions::default(),
        }
    }
}

impl StabilityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidConfig("threshold must lie in (0, 1)"));
        }
        if self.n_subsamples < 2 {
            return Err(Error::InvalidConfig("need at least two subsamples"));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction < 1.0) {
            return Err(Error::InvalidConfig("subsample_fraction must lie in (0, 1)"));
        }
        Ok(())
    }

    fn subsample_size(&self, n: usize) -> usize {
        libm::floor(n as f64 * self.subsample_fraction) as usize
    }
}

/// Per-column counts of appearances in the smallest-penalty active set.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SelectionFrequencies {
    pub counts: Vec<u32>,
    pub n_subsamples: usize,
    /// Lasso paths computed to build the table.
    pub paths_run: usize,
    /// Subsamples where some path point hit the sweep limit; their best
    /// iterate was used.
    pub unconverged_paths: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SelectionResult {
    /// Selection frequency of every column.
    pub frequencies: Vec<f64>,
    /// Columns with frequency at or above the threshold, increasing.
    pub selected: Vec<usize>,
    pub threshold: f64,
}

impl SelectionResult {
    pub fn n_final(&self) -> usize {
        self.selected.len()
    }
}

impl SelectionFrequencies {
    pub fn frequency(&self, j: usize) -> f64 {
        f64::from(self.counts[j]) / self.n_subsamples as f64
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.counts.len()).map(|j| self.frequency(j)).collect()
    }

    /// Thresholds the table; an empty selection is not an error here.
    pub fn select(&self, threshold: f64) -> SelectionResult {
        let frequencies = self.frequencies();
        let selected = frequencies
            .iter()
            .enumerate()
            .filter(|(_, &f)| f >= threshold)
            .map(|(j, _)| j)
            .collect();
        SelectionResult {
            frequencies,
            selected,
            threshold,
        }
    }
}

/// Runs screening plus a Lasso path on each subsample. `screen_n_max` caps
/// the screened columns per subsample; `None` means the subsample size.
pub fn selection_frequencies(
    y: &[f64],
    z: &ColMatrix,
    cfg: &StabilityConfig,
    screen_n_max: Option<usize>,
) -> Result<SelectionFrequencies> {
    cfg.validate()?;
    let n = z.nrows();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            what: "phenotype length",
            expected: n,
            found: y.len(),
        });
    }
    if n < 4 {
        return Err(Error::InvalidConfig("stability selection needs at least four observations"));
    }
    let m = cfg.subsample_size(n);
    let n_max = screen_n_max.unwrap_or(m).min(m).max(1);

    let per_subsample: Vec<Result<(Vec<usize>, bool)>> = par::map_indexed(cfg.n_subsamples, |b| {
        let mut rng = rng::stream(cfg.seed, &[label::SUBSAMPLE, b as u64]);
        let mut rows = index::sample(&mut rng, n, m).into_vec();
        rows.sort_unstable();
        let y_sub: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
        let screen = sis_screen_rows(&y_sub, z, &rows, n_max)?;
        let z_red = z.select(&rows, &screen.kept);
        let (path, unconverged) =
            lasso_path_tolerant(&y_sub, &z_red, cfg.n_lambdas, cfg.lambda_min_ratio, &cfg.lasso)?;
        let active = path.last().active_set.iter().map(|&k| screen.kept[k]).collect();
        Ok((active, !unconverged.is_empty()))
    });

    let mut counts = vec![0u32; z.ncols()];
    let mut unconverged_paths = 0;
    for r in per_subsample {
        let (active, stalled) = r?;
        for j in active {
            counts[j] += 1;
        }
        unconverged_paths += usize::from(stalled);
    }
    Ok(SelectionFrequencies {
        counts,
        n_subsamples: cfg.n_subsamples,
        paths_run: cfg.n_subsamples,
        unconverged_paths,
    })
}

pub fn stability_select(
    y: &[f64],
    z: &ColMatrix,
    cfg: &StabilityConfig,
    screen_n_max: Option<usize>,
) -> Result<SelectionResult> {
    let freq = selection_frequencies(y, z, cfg, screen_n_max)?;
    let sel = freq.select(cfg.threshold);
    if sel.selected.is_empty() {
        return Err(Error::EmptySelection);
    }
    Ok(sel)
}
