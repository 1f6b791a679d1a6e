use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Deserialize;

use herit_core::bootstrap::{BootstrapConfig, Recolor};
use herit_core::calibrate::{
    calibrate_threshold, decide, default_thresholds, CalibrationConfig, CalibrationTable, DecideConfig,
    Verdict, DEFAULT_CUTOFF,
};
use herit_core::data::{standardize, FixedEffects, Phenotype, StandardizedMatrix, TraitParams};
use herit_core::diagnostics::recovery_metrics;
use herit_core::pipeline::{run_observed, Mode, PipelineConfig, RunResult, Stage};
use herit_core::simulate::{simulate, SimConfig};
use herit_core::stability::StabilityConfig;

use crate::error::{CliError, CliResult};
use crate::io;
use crate::report::{
    self, Cell, DataSummary, DecideReport, Diagnostics, Estimate, Inputs, Manifest, RunReport, Settings,
    StageTiming, Timings,
};

/// Simulation settings file. Give either `sigma_e2` or `target_eta`; with
/// neither, `target_eta` defaults to 0.6.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimFile {
    pub n: usize,
    pub n_snps: usize,
    pub q: f64,
    pub sigma_u2: f64,
    pub sigma_e2: Option<f64>,
    pub target_eta: Option<f64>,
    pub maf_low: f64,
    pub maf_high: f64,
    /// Fixed-effect columns including the intercept; 0 writes no
    /// covariate file.
    pub fixed_effects: usize,
    pub seed: u64,
}

impl Default for SimFile {
    fn default() -> Self {
        let d = SimConfig::default();
        Self {
            n: d.n,
            n_snps: d.n_snps,
            q: d.params.q,
            sigma_u2: d.params.sigma_u2,
            sigma_e2: None,
            target_eta: None,
            maf_low: d.maf_range.0,
            maf_high: d.maf_range.1,
            fixed_effects: 0,
            seed: 0,
        }
    }
}

impl SimFile {
    pub fn to_config(&self) -> CliResult<SimConfig> {
        let (sigma_e2, target_eta) = match (self.sigma_e2, self.target_eta) {
            (Some(_), Some(_)) => return Err(CliError::Usage("give sigma_e2 or target_eta, not both".into())),
            (Some(s), None) => (s, None),
            (None, t) => (1.0, Some(t.unwrap_or(0.6))),
        };
        let cfg = SimConfig {
            n: self.n,
            n_snps: self.n_snps,
            params: TraitParams {
                q: self.q,
                sigma_u2: self.sigma_u2,
                sigma_e2,
            },
            target_eta,
            maf_range: (self.maf_low, self.maf_high),
            fixed_effect_count: self.fixed_effects,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn snp_ids(n_snps: usize) -> Vec<String> {
    (0..n_snps).map(|j| format!("snp{j}")).collect()
}

/// Writes `genotypes.csv`, `phenotype.csv`, `covariates.csv` (with fixed
/// effects) and `truth.toml` into `out_dir`; returns the manifest.
pub fn cmd_simulate(config: &Path, seed: Option<u64>, out_dir: &Path) -> CliResult<Manifest> {
    let text = std::fs::read_to_string(config).map_err(|e| CliError::io(config, e))?;
    let mut file: SimFile = toml::from_str(&text).map_err(|e| CliError::parse(config, e.to_string()))?;
    if let Some(s) = seed {
        file.seed = s;
    }
    let cfg = file.to_config()?;
    let sim = simulate(&cfg)?;
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let ids = snp_ids(cfg.n_snps);
    io::write_genotypes(&out_dir.join("genotypes.csv"), &ids, &sim.w)?;
    io::write_vector(&out_dir.join("phenotype.csv"), "y", sim.y.values())?;
    if let Some(x) = &sim.x {
        let names: Vec<String> = (0..x.p())
            .map(|j| if j == 0 { "intercept".to_string() } else { format!("x{j}") })
            .collect();
        io::write_matrix(&out_dir.join("covariates.csv"), &names, x.matrix())?;
    }
    let manifest = Manifest {
        seed: cfg.seed,
        n: cfg.n,
        n_snps: cfg.n_snps,
        q: sim.params.q,
        sigma_u2: sim.params.sigma_u2,
        sigma_e2: sim.params.sigma_e2,
        eta: sim.eta,
        maf_low: cfg.maf_range.0,
        maf_high: cfg.maf_range.1,
        fixed_effects: cfg.fixed_effect_count,
        support_ids: sim.support.iter().map(|&j| ids[j].clone()).collect(),
        effects: sim.support.iter().map(|&j| sim.u[j]).collect(),
        support: sim.support,
        beta: sim.beta,
    };
    report::write(&out_dir.join("truth.toml"), &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModeArg {
    Esther,
    Hilmm,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum RecolorArg {
    Sqrt,
    Full,
}

impl RecolorArg {
    fn name(self) -> &'static str {
        match self {
            RecolorArg::Sqrt => "sqrt",
            RecolorArg::Full => "full",
        }
    }

    fn value(self) -> Recolor {
        match self {
            RecolorArg::Sqrt => Recolor::SqrtGamma,
            RecolorArg::Full => Recolor::FullGamma,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DataArgs {
    pub genotypes: PathBuf,
    pub phenotype: PathBuf,
    pub covariates: Option<PathBuf>,
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunArgs {
    pub threshold: f64,
    pub subsamples: usize,
    pub bootstrap_k: usize,
    pub screen_n_max: Option<usize>,
    pub restandardize: bool,
    pub recolor: RecolorArg,
    pub seed: u64,
}

impl Default for RunArgs {
    fn default() -> Self {
        Self {
            threshold: 0.76,
            subsamples: 50,
            bootstrap_k: 80,
            screen_n_max: None,
            restandardize: false,
            recolor: RecolorArg::Sqrt,
            seed: 0,
        }
    }
}

impl RunArgs {
    fn pipeline(&self, mode: Mode) -> PipelineConfig {
        PipelineConfig {
            mode,
            stability: StabilityConfig {
                n_subsamples: self.subsamples,
                threshold: self.threshold,
                ..StabilityConfig::default()
            },
            screen_n_max: self.screen_n_max,
            bootstrap: BootstrapConfig {
                replicates: self.bootstrap_k,
                recolor: self.recolor.value(),
                ..BootstrapConfig::default()
            },
            restandardize: self.restandardize,
            seed: self.seed,
        }
    }

    fn settings(&self) -> Settings {
        Settings {
            threshold: self.threshold,
            subsamples: self.subsamples,
            bootstrap_k: self.bootstrap_k,
            screen_n_max: self.screen_n_max,
            restandardize: self.restandardize,
            recolor: self.recolor.name().to_string(),
        }
    }
}

struct Loaded {
    ids: Vec<String>,
    z: StandardizedMatrix,
    y: Phenotype,
    x: Option<FixedEffects>,
    truth: Option<Manifest>,
    inputs: Inputs,
    data: DataSummary,
}

fn path_string(p: &Path) -> String {
    p.display().to_string()
}

fn load(args: &DataArgs) -> CliResult<Loaded> {
    let (ids, w) = io::read_genotypes(&args.genotypes)?;
    let (_, y) = io::read_vector(&args.phenotype)?;
    if y.len() != w.n() {
        return Err(CliError::Usage(format!(
            "{} has {} rows but {} has {} individuals",
            args.phenotype.display(),
            y.len(),
            args.genotypes.display(),
            w.n()
        )));
    }
    let x = match &args.covariates {
        None => None,
        Some(p) => {
            let (_, m) = io::read_matrix(p)?;
            if m.nrows() != w.n() {
                return Err(CliError::Usage(format!(
                    "{} has {} rows but {} has {} individuals",
                    p.display(),
                    m.nrows(),
                    args.genotypes.display(),
                    w.n()
                )));
            }
            Some(FixedEffects::new(m).map_err(|e| CliError::parse(p, e.to_string()))?)
        }
    };
    let truth: Option<Manifest> = args.truth.as_deref().map(report::read).transpose()?;
    if let Some(t) = &truth {
        if t.n_snps != w.n_snps() {
            return Err(CliError::Usage(format!(
                "{} describes {} SNPs but {} has {}",
                args.truth.as_ref().map_or(String::new(), |p| path_string(p)),
                t.n_snps,
                args.genotypes.display(),
                w.n_snps()
            )));
        }
    }
    let z = standardize(&w)?;
    let data = DataSummary {
        n: w.n(),
        n_snps: w.n_snps(),
        excluded_snps: z.excluded().len(),
        covariates: x.as_ref().map_or(0, FixedEffects::p),
    };
    Ok(Loaded {
        ids,
        z,
        y: Phenotype::new(y).map_err(|e| CliError::parse(&args.phenotype, e.to_string()))?,
        x,
        truth,
        inputs: Inputs {
            genotypes: path_string(&args.genotypes),
            phenotype: path_string(&args.phenotype),
            covariates: args.covariates.as_deref().map(path_string),
            truth: args.truth.as_deref().map(path_string),
        },
        data,
    })
}

/// Genotype columns the fit used.
fn used_columns(r: &RunResult, z: &StandardizedMatrix) -> Vec<usize> {
    let src = z.source_columns();
    match &r.mode {
        Mode::HiLMM => src.to_vec(),
        Mode::Oracle(cols) => cols.iter().map(|&k| src[k]).collect(),
        Mode::EstHer => r
            .selection
            .as_ref()
            .map(|s| s.selected.iter().map(|&k| src[k]).collect())
            .unwrap_or_default(),
    }
}

fn diagnostics(r: &RunResult, d: &Loaded) -> CliResult<Option<Diagnostics>> {
    let Some(t) = &d.truth else { return Ok(None) };
    let u = t.effect_vector()?;
    Ok(Some(Diagnostics::from(&recovery_metrics(&used_columns(r, &d.z), &u)?)))
}

fn oracle_mode(d: &Loaded) -> CliResult<Mode> {
    let t = d
        .truth
        .as_ref()
        .ok_or_else(|| CliError::Usage("oracle mode needs --truth".into()))?;
    let cols: Vec<usize> = t.support.iter().filter_map(|&j| d.z.position_of_source(j)).collect();
    if cols.is_empty() {
        return Err(CliError::Usage("no true-support column survives standardization".into()));
    }
    Ok(Mode::Oracle(cols))
}

fn seconds(since: Instant) -> f64 {
    since.elapsed().as_secs_f64()
}

fn timings(start: Instant, stages: Vec<(&str, f64)>) -> Timings {
    Timings {
        total: seconds(start),
        stages: stages
            .into_iter()
            .map(|(s, t)| StageTiming {
                stage: s.to_string(),
                seconds: t,
            })
            .collect(),
    }
}

/// The report always carries timings; callers drop them unless asked.
pub fn cmd_estimate(data: &DataArgs, mode: ModeArg, run: &RunArgs) -> CliResult<RunReport> {
    let start = Instant::now();
    let d = load(data)?;
    let mut stages = vec![("read", seconds(start))];
    let mode = match mode {
        ModeArg::Esther => Mode::EstHer,
        ModeArg::Hilmm => Mode::HiLMM,
        ModeArg::Oracle => oracle_mode(&d)?,
    };
    let cfg = run.pipeline(mode);
    let mut mark = Instant::now();
    let result = run_observed(&d.y, &d.z, d.x.as_ref(), &cfg, &mut |s| {
        let name = match s {
            Stage::Prepare => "prepare",
            Stage::Selection => "selection",
            Stage::Likelihood => "likelihood",
            Stage::Bootstrap => "bootstrap",
        };
        stages.push((name, seconds(mark)));
        mark = Instant::now();
    })?;
    Ok(RunReport {
        command: "estimate".into(),
        seed: run.seed,
        mode: result.mode.name().to_string(),
        diagnostics: diagnostics(&result, &d)?,
        estimate: Estimate::from_run(&result, &d.ids, d.z.source_columns()),
        inputs: d.inputs,
        settings: run.settings(),
        data: d.data,
        timings: Some(timings(start, stages)),
    })
}

pub fn cmd_decide(data: &DataArgs, run: &RunArgs, thresholds: Option<Vec<f64>>, cutoff: f64) -> CliResult<DecideReport> {
    let start = Instant::now();
    let d = load(data)?;
    let read = seconds(start);
    let cfg = DecideConfig {
        pipeline: run.pipeline(Mode::EstHer),
        thresholds: thresholds.unwrap_or_else(default_thresholds),
        cutoff,
    };
    let mark = Instant::now();
    let rep = decide(&d.y, &d.z, d.x.as_ref(), &cfg)?;
    let sweep = seconds(mark);
    let verdict = match rep.decision.verdict {
        Verdict::EstHer => "esther",
        Verdict::HiLMM => "hilmm",
    };
    Ok(DecideReport {
        command: "decide".into(),
        seed: run.seed,
        verdict: verdict.into(),
        overlap_count: rep.decision.overlap_count,
        cutoff: rep.decision.cutoff,
        all_empty: rep.all_empty,
        fell_back: rep.fell_back,
        thresholds: cfg.thresholds.clone(),
        cells: rep
            .sweep
            .cells
            .iter()
            .map(|c| Cell {
                threshold: c.threshold,
                n_selected: c.n_selected,
                eta_hat: c.eta_hat,
                ci_low: c.ci.map(|v| v.0),
                ci_high: c.ci.map(|v| v.1),
            })
            .collect(),
        diagnostics: diagnostics(&rep.result, &d)?,
        estimate: Estimate::from_run(&rep.result, &d.ids, d.z.source_columns()),
        inputs: d.inputs,
        settings: run.settings(),
        data: d.data,
        timings: Some(timings(start, vec![("read", read), ("decide", sweep)])),
    })
}

#[derive(Debug, Clone)]
pub struct CalibrateArgs {
    pub genotypes: PathBuf,
    pub eta_grid: Vec<f64>,
    pub q_grid: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub reps: usize,
    pub subsamples: usize,
    pub seed: u64,
}

pub fn cmd_calibrate(args: &CalibrateArgs) -> CliResult<CalibrationTable> {
    let (_, w) = io::read_genotypes(&args.genotypes)?;
    let z = standardize(&w)?;
    let defaults = PipelineConfig::default();
    let cfg = CalibrationConfig {
        eta_grid: args.eta_grid.clone(),
        q_grid: args.q_grid.clone(),
        thresholds: args.thresholds.clone(),
        reps: args.reps,
        pipeline: PipelineConfig {
            stability: StabilityConfig {
                n_subsamples: args.subsamples,
                ..defaults.stability.clone()
            },
            seed: args.seed,
            ..defaults
        },
        seed: args.seed,
        ..CalibrationConfig::default()
    };
    Ok(calibrate_threshold(&z, &cfg)?)
}

pub fn calibration_csv(table: &CalibrationTable) -> String {
    let mut s = String::from("eta,q,threshold,mean_abs_error,reps,empty,failed\n");
    for r in &table.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.eta, r.q, r.threshold, r.mean_abs_error, r.reps, r.empty, r.failed
        );
    }
    s
}

fn estimate_lines(s: &mut String, e: &Estimate) {
    let _ = writeln!(s, "mode          {}", e.mode);
    match e.se {
        Some(se) => {
            let _ = writeln!(s, "eta_hat       {:.4} (se {:.4})", e.eta_hat, se);
        }
        None => {
            let _ = writeln!(s, "eta_hat       {:.4}", e.eta_hat);
        }
    }
    let _ = writeln!(s, "95% CI        [{:.4}, {:.4}]", e.ci_low, e.ci_high);
    let _ = writeln!(s, "sigma2_hat    {:.6}", e.sigma2_hat);
    let _ = writeln!(s, "columns used  {}", e.n_final);
    if e.unidentifiable {
        let _ = writeln!(s, "warning: the kinship spectrum is flat; eta is not identifiable");
    }
    if e.at_boundary {
        let _ = writeln!(s, "note: the estimate sits on the boundary of [0, 1]");
    }
    if e.unconverged_paths > 0 {
        let _ = writeln!(s, "note: {} subsample paths hit the sweep limit", e.unconverged_paths);
    }
    if !e.selected.is_empty() {
        let ids: Vec<&str> = e.selected.iter().take(20).map(|v| v.id.as_str()).collect();
        let more = e.selected.len().saturating_sub(20);
        let tail = if more > 0 { format!(" (+{more} more)") } else { String::new() };
        let _ = writeln!(s, "selected      {}{}", ids.join(" "), tail);
    }
}

fn tail_lines(s: &mut String, diag: Option<&Diagnostics>, t: Option<&Timings>) {
    if let Some(d) = diag {
        let _ = writeln!(
            s,
            "recovery      {:.3} of {} true effects",
            d.capture_fraction, d.true_support_size
        );
        if let Some(c) = d.deciles.first().and_then(|g| g.capture) {
            let _ = writeln!(s, "top decile    {c:.3}");
        }
    }
    if let Some(t) = t {
        let parts: Vec<String> = t.stages.iter().map(|v| format!("{} {:.2}s", v.stage, v.seconds)).collect();
        let _ = writeln!(s, "time          {:.2}s ({})", t.total, parts.join(", "));
    }
}

pub fn summarize_run(r: &RunReport) -> String {
    let mut s = String::new();
    estimate_lines(&mut s, &r.estimate);
    tail_lines(&mut s, r.diagnostics.as_ref(), r.timings.as_ref());
    s
}

pub fn summarize_decision(r: &DecideReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "verdict       {} (overlap {:.2}, cutoff {})", r.verdict, r.overlap_count, r.cutoff);
    if r.all_empty {
        let _ = writeln!(s, "note: no threshold selected any column");
    }
    if r.fell_back {
        let _ = writeln!(s, "note: the working threshold selected nothing; reporting the estimate without selection");
    }
    for c in &r.cells {
        match (c.eta_hat, c.ci_low, c.ci_high) {
            (Some(e), Some(l), Some(h)) => {
                let _ = writeln!(s, "  {:.2}  {:>4} columns  eta {:.4}  [{:.4}, {:.4}]", c.threshold, c.n_selected, e, l, h);
            }
            _ => {
                let _ = writeln!(s, "  {:.2}  {:>4} columns  -", c.threshold, c.n_selected);
            }
        }
    }
    estimate_lines(&mut s, &r.estimate);
    tail_lines(&mut s, r.diagnostics.as_ref(), r.timings.as_ref());
    s
}

pub const fn default_cutoff() -> f64 {
    DEFAULT_CUTOFF
}
