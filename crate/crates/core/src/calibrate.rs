//! Threshold calibration by simulation, and the rule choosing between the
//! selection-based and the no-selection estimator.
//!
//! The rule sweeps the stability threshold, computes a bootstrap interval
//! at each value and asks how many intervals overlap. A stable estimate
//! across thresholds means selection is trustworthy.

use alloc::vec::Vec;

use crate::bootstrap::{bootstrap_ci, BootstrapResult};
use crate::data::{FixedEffects, Phenotype, StandardizedMatrix, TraitParams};
use crate::error::{Error, Result};
use crate::mle::HeritabilityFit;
use crate::par;
use crate::pipeline::{self, fit_on_columns, prepare, Mode, PipelineConfig, RunResult};
use crate::rng::{derive_seed, label};
use crate::simulate::{simulate_trait, solve_sigma_e};
use crate::stability::SelectionResult;

/// `0.70, 0.71, ..., 0.85`.
pub fn default_thresholds() -> Vec<f64> {
    (70..=85).map(|k| f64::from(k) / 100.0).collect()
}

pub const DEFAULT_CUTOFF: f64 = 10.0;

/// Mean over intervals of the number of intervals (itself included) that
/// intersect it. `None` marks a threshold with no interval; it counts only
/// itself and meets nothing.
pub fn overlap_count(intervals: &[Option<(f64, f64)>]) -> f64 {
    if intervals.is_empty() {
        return 0.0;
    }
    let total: usize = intervals
        .iter()
        .map(|a| match a {
            None => 1,
            Some((l, h)) => intervals
                .iter()
                .filter(|b| matches!(b, Some((l2, h2)) if l2 <= h && l <= h2))
                .count(),
        })
        .sum();
    total as f64 / intervals.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ThresholdCell {
    pub threshold: f64,
    pub n_selected: usize,
    /// `None` when the threshold selects nothing.
    pub eta_hat: Option<f64>,
    pub ci: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ThresholdSweep {
    pub cells: Vec<ThresholdCell>,
    pub overlap_count: f64,
    /// Lasso paths run to build the shared frequency table.
    pub paths_run: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Verdict {
    EstHer,
    HiLMM,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Decision {
    pub verdict: Verdict,
    pub overlap_count: f64,
    pub cutoff: f64,
}

pub fn verdict(overlap: f64, cutoff: f64) -> Verdict {
    if overlap > cutoff {
        Verdict::EstHer
    } else {
        Verdict::HiLMM
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DecideConfig {
    /// Its mode is ignored; its threshold is the one used if selection wins.
    pub pipeline: PipelineConfig,
    pub thresholds: Vec<f64>,
    pub cutoff: f64,
}

impl Default for DecideConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            thresholds: default_thresholds(),
            cutoff: DEFAULT_CUTOFF,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DecisionReport {
    pub decision: Decision,
    pub sweep: ThresholdSweep,
    /// Estimate from the estimator the rule picked.
    pub result: RunResult,
    /// Every threshold selected nothing; the verdict was forced.
    pub all_empty: bool,
    /// Selection won but the working threshold selected nothing, so the
    /// no-selection estimate is returned.
    pub fell_back: bool,
}

fn check_thresholds(t: &[f64]) -> Result<()> {
    if t.len() < 2 {
        return Err(Error::InvalidConfig("the sweep needs at least two thresholds"));
    }
    if t.windows(2).any(|w| !(w[0] < w[1])) || t.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
        return Err(Error::InvalidConfig("thresholds must increase strictly within (0, 1)"));
    }
    Ok(())
}

struct CellFit {
    selection: SelectionResult,
    fit: HeritabilityFit,
    bootstrap: BootstrapResult,
}

pub fn decide(
    y: &Phenotype,
    z: &StandardizedMatrix,
    x: Option<&FixedEffects>,
    cfg: &DecideConfig,
) -> Result<DecisionReport> {
    check_thresholds(&cfg.thresholds)?;
    let pcfg = &cfg.pipeline;
    let boot = pcfg.bootstrap_config();
    let prep = prepare(y, z, x, pcfg.restandardize)?;
    let freq = pipeline::frequencies(&prep, pcfg)?;

    // thresholds selecting the same set share one fit
    let selections: Vec<SelectionResult> = cfg.thresholds.iter().map(|&t| freq.select(t)).collect();
    let mut distinct: Vec<usize> = Vec::new();
    let mut owner = Vec::with_capacity(selections.len());
    for (i, s) in selections.iter().enumerate() {
        match distinct.iter().position(|&d| selections[d].selected == s.selected) {
            Some(p) => owner.push(p),
            None => {
                owner.push(distinct.len());
                distinct.push(i);
            }
        }
    }
    let fits: Vec<Option<Result<(HeritabilityFit, BootstrapResult)>>> = par::map_indexed(distinct.len(), |k| {
        let sel = &selections[distinct[k]].selected;
        if sel.is_empty() {
            return None;
        }
        Some(fit_on_columns(&prep, Some(sel)).and_then(|(ke, fit)| Ok((fit.clone(), bootstrap_ci(&ke, &fit, &boot)?))))
    });
    let mut cells = Vec::with_capacity(selections.len());
    let mut cell_fits: Vec<Option<CellFit>> = Vec::with_capacity(selections.len());
    for (i, sel) in selections.into_iter().enumerate() {
        let f = match &fits[owner[i]] {
            None => None,
            Some(Ok(v)) => Some(v.clone()),
            Some(Err(e)) => return Err(e.clone()),
        };
        cells.push(ThresholdCell {
            threshold: cfg.thresholds[i],
            n_selected: sel.selected.len(),
            eta_hat: f.as_ref().map(|(fit, _)| fit.eta_hat),
            ci: f.as_ref().map(|(_, b)| (b.ci_low, b.ci_high)),
        });
        cell_fits.push(f.map(|(fit, bootstrap)| CellFit {
            selection: sel,
            fit,
            bootstrap,
        }));
    }
    let intervals: Vec<Option<(f64, f64)>> = cells.iter().map(|c| c.ci).collect();
    let overlap = overlap_count(&intervals);
    let all_empty = cells.iter().all(|c| c.ci.is_none());
    let mut v = if all_empty { Verdict::HiLMM } else { verdict(overlap, cfg.cutoff) };
    let sweep = ThresholdSweep {
        cells,
        overlap_count: overlap,
        paths_run: freq.paths_run,
    };

    let mut fell_back = false;
    let mut result = None;
    if v == Verdict::EstHer {
        let t = pcfg.stability.threshold;
        let in_sweep = cfg.thresholds.iter().position(|&s| s == t).and_then(|i| cell_fits[i].take());
        let chosen = match in_sweep {
            Some(c) => Some(c),
            None => {
                let selection = freq.select(t);
                if selection.selected.is_empty() {
                    None
                } else {
                    let (ke, fit) = fit_on_columns(&prep, Some(&selection.selected))?;
                    let bootstrap = bootstrap_ci(&ke, &fit, &boot)?;
                    Some(CellFit {
                        selection,
                        fit,
                        bootstrap,
                    })
                }
            }
        };
        match chosen {
            Some(c) => {
                result = Some(RunResult {
                    mode: Mode::EstHer,
                    fit: c.fit,
                    bootstrap: c.bootstrap,
                    selection: Some(c.selection),
                    unconverged_paths: freq.unconverged_paths,
                })
            }
            None => fell_back = true,
        }
    }
    let result = match result {
        Some(r) => r,
        None => {
            if fell_back {
                v = Verdict::HiLMM;
            }
            let (ke, fit) = fit_on_columns(&prep, None)?;
            let bootstrap = bootstrap_ci(&ke, &fit, &boot)?;
            RunResult {
                mode: Mode::HiLMM,
                fit,
                bootstrap,
                selection: None,
                unconverged_paths: 0,
            }
        }
    };
    Ok(DecisionReport {
        decision: Decision {
            verdict: v,
            overlap_count: overlap,
            cutoff: cfg.cutoff,
        },
        sweep,
        result,
        all_empty,
        fell_back,
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CalibrationConfig {
    pub eta_grid: Vec<f64>,
    pub q_grid: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub reps: usize,
    /// Variance of each non-null effect; the noise variance is solved from
    /// the target heritability.
    pub sigma_u2: f64,
    /// Mode and bootstrap settings are unused.
    pub pipeline: PipelineConfig,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            eta_grid: alloc::vec![0.4, 0.5, 0.6, 0.7],
            q_grid: alloc::vec![0.002],
            thresholds: (60..=90).step_by(2).map(|k| f64::from(k) / 100.0).collect(),
            reps: 5,
            sigma_u2: 1.0,
            pipeline: PipelineConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CalibrationRow {
    pub eta: f64,
    pub q: f64,
    pub threshold: f64,
    /// Mean of `|eta - eta_hat|`; an empty selection counts as `eta_hat = 0`.
    pub mean_abs_error: f64,
    pub reps: usize,
    /// Replicates where the threshold selected nothing.
    pub empty: usize,
    /// Replicates where the pipeline failed outright.
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CalibrationTable {
    /// Ordered by `eta`, then `q`, then threshold.
    pub rows: Vec<CalibrationRow>,
    pub best_threshold: f64,
}

impl CalibrationTable {
    /// Largest mean error over the simulation settings, per threshold.
    pub fn worst_case_errors(&self, thresholds: &[f64]) -> Vec<f64> {
        thresholds
            .iter()
            .map(|&t| {
                self.rows
                    .iter()
                    .filter(|r| r.threshold == t)
                    .map(|r| r.mean_abs_error)
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    }
}

/// Simulates traits on `z` for every `(eta, q)` setting and scores each
/// threshold by its mean absolute error. The best threshold minimizes the
/// worst error over settings; ties go to the smaller threshold.
pub fn calibrate_threshold(z: &StandardizedMatrix, cfg: &CalibrationConfig) -> Result<CalibrationTable> {
    check_thresholds(&cfg.thresholds)?;
    if cfg.eta_grid.is_empty() || cfg.q_grid.is_empty() {
        return Err(Error::InvalidConfig("calibration grids must be non-empty"));
    }
    if cfg.reps < 2 {
        return Err(Error::InvalidConfig("calibration needs at least two replicates"));
    }
    if cfg.eta_grid.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
        return Err(Error::InvalidConfig("target heritabilities must lie in (0, 1)"));
    }
    let n_source = z.source_columns().last().map_or(0, |&s| s + 1);
    let settings: Vec<(f64, f64)> = cfg
        .eta_grid
        .iter()
        .flat_map(|&e| cfg.q_grid.iter().map(move |&q| (e, q)))
        .collect();
    let n_t = cfg.thresholds.len();
    let jobs = settings.len() * cfg.reps;
    // per job: an estimate per threshold, `None` for empty, `Err` for failure
    let outcomes: Vec<core::result::Result<Vec<Option<f64>>, ()>> = par::map_indexed(jobs, |job| {
        let (s, rep) = (job / cfg.reps, job % cfg.reps);
        let (eta, q) = settings[s];
        let trial = || -> Result<Vec<Option<f64>>> {
            let sigma_e2 = solve_sigma_e(n_source, q, cfg.sigma_u2, eta);
            let params = TraitParams::new(q, cfg.sigma_u2, sigma_e2)?;
            let seed = derive_seed(cfg.seed, &[label::CALIBRATION, s as u64, rep as u64]);
            let (y, _, _) = simulate_trait(z, &params, seed)?;
            let pcfg = PipelineConfig {
                seed,
                ..cfg.pipeline.clone()
            };
            let prep = prepare(&y, z, None, false)?;
            let freq = pipeline::frequencies(&prep, &pcfg)?;
            let mut out: Vec<Option<f64>> = Vec::with_capacity(n_t);
            let mut last: Option<(Vec<usize>, f64)> = None;
            for &t in &cfg.thresholds {
                let sel = freq.select(t).selected;
                if sel.is_empty() {
                    out.push(None);
                    continue;
                }
                let eta_hat = match &last {
                    Some((prev, e)) if *prev == sel => *e,
                    _ => fit_on_columns(&prep, Some(&sel))?.1.eta_hat,
                };
                out.push(Some(eta_hat));
                last = Some((sel, eta_hat));
            }
            Ok(out)
        };
        trial().map_err(|_| ())
    });
    let mut rows = Vec::with_capacity(settings.len() * n_t);
    for (s, &(eta, q)) in settings.iter().enumerate() {
        let reps = &outcomes[s * cfg.reps..(s + 1) * cfg.reps];
        for (ti, &threshold) in cfg.thresholds.iter().enumerate() {
            let (mut sum, mut used, mut empty, mut failed) = (0.0, 0usize, 0usize, 0usize);
            for r in reps {
                match r {
                    Err(()) => failed += 1,
                    Ok(v) => {
                        let e = v[ti].unwrap_or_else(|| {
                            empty += 1;
                            0.0
                        });
                        sum += (eta - e).abs();
                        used += 1;
                    }
                }
            }
            rows.push(CalibrationRow {
                eta,
                q,
                threshold,
                mean_abs_error: if used > 0 { sum / used as f64 } else { f64::INFINITY },
                reps: cfg.reps,
                empty,
                failed,
            });
        }
    }
    let mut table = CalibrationTable {
        rows,
        best_threshold: cfg.thresholds[0],
    };
    let worst = table.worst_case_errors(&cfg.thresholds);
    let best = (0..n_t).fold(0, |b, i| if worst[i] < worst[b] { i } else { b });
    table.best_threshold = cfg.thresholds[best];
    Ok(table)
}
