//! End-to-end estimation: fixed-effect removal, optional variable
//! selection, likelihood maximization and bootstrap interval.

use alloc::vec::Vec;

use crate::bootstrap::{bootstrap_ci, BootstrapConfig, BootstrapResult};
use crate::data::{FixedEffects, Phenotype, StandardizedMatrix};
use crate::error::{Error, Result};
use crate::matrix::{sum_sq, ColMatrix};
use crate::mle::{fit_heritability, kinship_eigen, HeritabilityFit, KinshipEigen};
use crate::projection::{build_projector, project};
use crate::rng::{derive_seed, label};
use crate::stability::{selection_frequencies, SelectionFrequencies, SelectionResult, StabilityConfig};

/// Which columns feed the kinship matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Mode {
    /// Stability-selected columns.
    EstHer,
    /// Every column, no selection.
    HiLMM,
    /// A known support, as column indices of the standardized matrix.
    Oracle(Vec<usize>),
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::EstHer => "esther",
            Mode::HiLMM => "hilmm",
            Mode::Oracle(_) => "oracle",
        }
    }
}

/// Seeds inside `stability` and `bootstrap` are ignored; both are derived
/// from `seed`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PipelineConfig {
    pub mode: Mode,
    pub stability: StabilityConfig,
    /// Columns kept by screening; `None` means the sample size.
    pub screen_n_max: Option<usize>,
    pub bootstrap: BootstrapConfig,
    /// Rescale projected columns to unit variance.
    pub restandardize: bool,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::EstHer,
            stability: StabilityConfig::default(),
            screen_n_max: None,
            bootstrap: BootstrapConfig::default(),
            restandardize: false,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn stability_config(&self) -> StabilityConfig {
        StabilityConfig {
            seed: derive_seed(self.seed, &[label::STABILITY]),
            ..self.stability.clone()
        }
    }

    pub fn bootstrap_config(&self) -> BootstrapConfig {
        BootstrapConfig {
            seed: derive_seed(self.seed, &[label::BOOTSTRAP]),
            ..self.bootstrap
        }
    }
}

/// Response and genotypes after fixed effects are removed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub y: Vec<f64>,
    pub z: StandardizedMatrix,
    /// Rank of the fixed-effect design that was projected out, intercept
    /// included.
    pub fixed_rank: usize,
}

/// Projects `y` and `z` onto the orthogonal complement of the intercept
/// and the columns of `x`. Even without covariates the intercept is
/// projected out rather than subtracted: a centered `y` keeps an exactly
/// zero component along the null direction of `Z Z'`, which would push
/// the likelihood to infinity as `eta -> 1`.
pub fn prepare(
    y: &Phenotype,
    z: &StandardizedMatrix,
    x: Option<&FixedEffects>,
    restandardize: bool,
) -> Result<Prepared> {
    if y.len() != z.n() {
        return Err(Error::DimensionMismatch {
            what: "phenotype length",
            expected: z.n(),
            found: y.len(),
        });
    }
    let n = z.n();
    let mut cols: Vec<Vec<f64>> = alloc::vec![alloc::vec![1.0; n]];
    if let Some(x) = x {
        if x.n() != n {
            return Err(Error::DimensionMismatch {
                what: "covariate rows",
                expected: n,
                found: x.n(),
            });
        }
        cols.extend(x.matrix().columns().map(<[f64]>::to_vec));
    }
    let design = FixedEffects::new(ColMatrix::from_columns(n, &cols)?)?;
    let proj = build_projector(&design)?;
    let (y_proj, z_proj) = project(&proj, y, z, restandardize)?;
    // what survives projection of an exactly explained phenotype is round-off
    let floor = 1e3 * f64::EPSILON * libm::sqrt(sum_sq(y.values()));
    if !(libm::sqrt(sum_sq(&y_proj)) > floor) {
        return Err(Error::NoResidualVariance);
    }
    Ok(Prepared {
        y: y_proj,
        z: z_proj,
        fixed_rank: proj.rank(),
    })
}

/// Likelihood fit on the listed columns (`None`: all of them).
pub fn fit_on_columns(prep: &Prepared, cols: Option<&[usize]>) -> Result<(KinshipEigen, HeritabilityFit)> {
    let zm = prep.z.matrix();
    let ke = match cols {
        None => kinship_eigen(zm, &prep.y)?,
        Some(c) => {
            if c.is_empty() {
                return Err(Error::EmptySelection);
            }
            if let Some(&bad) = c.iter().find(|&&j| j >= zm.ncols()) {
                return Err(Error::DimensionMismatch {
                    what: "column index",
                    expected: zm.ncols(),
                    found: bad,
                });
            }
            kinship_eigen(&zm.select_columns(c), &prep.y)?
        }
    };
    let fit = fit_heritability(&ke)?;
    Ok((ke, fit))
}

pub fn frequencies(prep: &Prepared, cfg: &PipelineConfig) -> Result<SelectionFrequencies> {
    selection_frequencies(&prep.y, prep.z.matrix(), &cfg.stability_config(), cfg.screen_n_max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Prepare,
    Selection,
    Likelihood,
    Bootstrap,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RunResult {
    pub mode: Mode,
    pub fit: HeritabilityFit,
    pub bootstrap: BootstrapResult,
    /// Present in EstHer mode.
    pub selection: Option<SelectionResult>,
    /// Subsamples whose Lasso path hit the sweep limit somewhere.
    pub unconverged_paths: usize,
}

pub fn run(y: &Phenotype, z: &StandardizedMatrix, x: Option<&FixedEffects>, cfg: &PipelineConfig) -> Result<RunResult> {
    run_observed(y, z, x, cfg, &mut |_| {})
}

/// [`run`], calling `on_stage` as each stage completes.
pub fn run_observed(
    y: &Phenotype,
    z: &StandardizedMatrix,
    x: Option<&FixedEffects>,
    cfg: &PipelineConfig,
    on_stage: &mut dyn FnMut(Stage),
) -> Result<RunResult> {
    if let Mode::Oracle(s) = &cfg.mode {
        if s.is_empty() {
            return Err(Error::InvalidConfig("oracle mode needs a non-empty support"));
        }
    }
    let prep = prepare(y, z, x, cfg.restandardize)?;
    on_stage(Stage::Prepare);
    let (selection, unconverged_paths) = match &cfg.mode {
        Mode::EstHer => {
            let freq = frequencies(&prep, cfg)?;
            on_stage(Stage::Selection);
            let sel = freq.select(cfg.stability.threshold);
            if sel.selected.is_empty() {
                return Err(Error::EmptySelection);
            }
            (Some(sel), freq.unconverged_paths)
        }
        _ => (None, 0),
    };
    let cols: Option<&[usize]> = match &cfg.mode {
        Mode::EstHer => selection.as_ref().map(|s| s.selected.as_slice()),
        Mode::HiLMM => None,
        Mode::Oracle(s) => Some(s),
    };
    let (ke, fit) = fit_on_columns(&prep, cols)?;
    on_stage(Stage::Likelihood);
    let bootstrap = bootstrap_ci(&ke, &fit, &cfg.bootstrap_config())?;
    on_stage(Stage::Bootstrap);
    Ok(RunResult {
        mode: cfg.mode.clone(),
        fit,
        bootstrap,
        selection,
        unconverged_paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TraitParams;
    use crate::simulate::{simulate, SimConfig};

    fn quick(mode: Mode) -> PipelineConfig {
        PipelineConfig {
            mode,
            stability: StabilityConfig {
                n_subsamples: 10,
                n_lambdas: 30,
                ..StabilityConfig::default()
            },
            bootstrap: BootstrapConfig {
                replicates: 20,
                ..BootstrapConfig::default()
            },
            seed: 5,
            ..PipelineConfig::default()
        }
    }

    fn sim(fixed: usize) -> crate::simulate::SimOutput {
        simulate(&SimConfig {
            n: 120,
            n_snps: 300,
            params: TraitParams::new(0.02, 1.0, 1.0).unwrap(),
            target_eta: Some(0.7),
            fixed_effect_count: fixed,
            seed: 9,
            ..SimConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn oracle_on_every_column_is_hilmm() {
        let s = sim(0);
        let all: Vec<usize> = (0..s.z.n_snps()).collect();
        let a = run(&s.y, &s.z, None, &quick(Mode::HiLMM)).unwrap();
        let b = run(&s.y, &s.z, None, &quick(Mode::Oracle(all))).unwrap();
        assert_eq!(a.fit, b.fit);
        assert_eq!(a.bootstrap, b.bootstrap);
    }

    #[test]
    fn fixed_effects_do_not_change_the_estimate() {
        let s = sim(3);
        let x = s.x.as_ref().unwrap();
        let shift = x.matrix().mul_vec(&[4.0, -2.0, 7.5]);
        let y2 = Phenotype::new(s.y.values().iter().zip(&shift).map(|(a, b)| a + b).collect()).unwrap();
        for mode in [Mode::HiLMM, Mode::Oracle(s.support.clone())] {
            let a = run(&s.y, &s.z, Some(x), &quick(mode.clone())).unwrap();
            let b = run(&y2, &s.z, Some(x), &quick(mode)).unwrap();
            assert!((a.fit.eta_hat - b.fit.eta_hat).abs() < 1e-10);
        }
    }

    #[test]
    fn esther_selects_and_reports() {
        let s = sim(0);
        let mut stages = Vec::new();
        let r = run_observed(&s.y, &s.z, None, &quick(Mode::EstHer), &mut |st| stages.push(st)).unwrap();
        assert_eq!(stages, [Stage::Prepare, Stage::Selection, Stage::Likelihood, Stage::Bootstrap]);
        let sel = r.selection.as_ref().unwrap();
        assert_eq!(r.fit.n_columns, sel.selected.len());
        assert!(r.bootstrap.ci_low <= r.bootstrap.ci_high);
        assert_eq!(r, run(&s.y, &s.z, None, &quick(Mode::EstHer)).unwrap());
    }

    #[test]
    fn constant_phenotype_has_nothing_to_explain() {
        let s = sim(0);
        let y = Phenotype::new(alloc::vec![2.5; s.z.n()]).unwrap();
        assert!(matches!(run(&y, &s.z, None, &quick(Mode::HiLMM)), Err(Error::NoResidualVariance)));
    }

    #[test]
    fn rejects_empty_oracle_support() {
        let s = sim(0);
        assert!(run(&s.y, &s.z, None, &quick(Mode::Oracle(Vec::new()))).is_err());
    }
}
