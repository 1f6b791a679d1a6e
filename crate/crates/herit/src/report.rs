//! Machine-readable reports and the simulation manifest, stored as TOML.
//! Keys are emitted in declaration order, so reports diff cleanly.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use herit_core::diagnostics::RecoveryReport;
use herit_core::pipeline::RunResult;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedSnp {
    pub id: String,
    /// Genotype column, counted from zero.
    pub column: usize,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mode: String,
    pub eta_hat: f64,
    pub sigma2_hat: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se: Option<f64>,
    pub ci_low: f64,
    pub ci_high: f64,
    pub loglik: f64,
    pub n_obs: usize,
    pub n_final: usize,
    pub unidentifiable: bool,
    pub at_boundary: bool,
    pub bootstrap_replicates: usize,
    pub bootstrap_dropped: usize,
    pub unconverged_paths: usize,
    #[serde(default)]
    pub selected: Vec<SelectedSnp>,
}

impl Estimate {
    /// `ids` and `source` map standardized columns back to SNP ids.
    pub fn from_run(r: &RunResult, ids: &[String], source: &[usize]) -> Self {
        let selected = r
            .selection
            .as_ref()
            .map(|s| {
                s.selected
                    .iter()
                    .map(|&k| SelectedSnp {
                        id: ids[source[k]].clone(),
                        column: source[k],
                        frequency: s.frequencies[k],
                    })
                    .collect()
            })
            .unwrap_or_default();
        Self {
            mode: r.mode.name().to_string(),
            eta_hat: r.fit.eta_hat,
            sigma2_hat: r.fit.sigma2_hat,
            se: r.fit.se,
            ci_low: r.bootstrap.ci_low,
            ci_high: r.bootstrap.ci_high,
            loglik: r.fit.loglik,
            n_obs: r.fit.n_obs,
            n_final: r.fit.n_columns,
            unidentifiable: r.fit.unidentifiable,
            at_boundary: r.fit.at_boundary,
            bootstrap_replicates: r.bootstrap.replicate_etas.len(),
            bootstrap_dropped: r.bootstrap.dropped,
            unconverged_paths: r.unconverged_paths,
            selected,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub n: usize,
    pub n_snps: usize,
    /// Constant genotype columns left out.
    pub excluded_snps: usize,
    pub covariates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inputs {
    pub genotypes: String,
    pub phenotype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariates: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub threshold: f64,
    pub subsamples: usize,
    pub bootstrap_k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screen_n_max: Option<usize>,
    pub restandardize: bool,
    pub recolor: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decile {
    pub decile: usize,
    pub size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capture: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub selected_size: usize,
    pub true_support_size: usize,
    pub capture_fraction: f64,
    pub deciles: Vec<Decile>,
}

impl From<&RecoveryReport> for Diagnostics {
    fn from(r: &RecoveryReport) -> Self {
        Self {
            selected_size: r.selected_size,
            true_support_size: r.true_support_size,
            capture_fraction: r.capture_fraction,
            deciles: (0..10)
                .map(|g| Decile {
                    decile: g + 1,
                    size: r.decile_sizes[g],
                    capture: r.decile_capture[g],
                })
                .collect(),
        }
    }
}

/// Wall-clock seconds per stage; only written when asked for, since they
/// differ between runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total: f64,
    pub stages: Vec<StageTiming>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    /// TOML integers are signed, so seeds stop at `i64::MAX`.
    pub seed: u64,
    pub mode: String,
    pub inputs: Inputs,
    pub settings: Settings,
    pub data: DataSummary,
    pub estimate: Estimate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Diagnostics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub threshold: f64,
    pub n_selected: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_hat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci_low: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci_high: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecideReport {
    pub command: String,
    pub seed: u64,
    pub verdict: String,
    pub overlap_count: f64,
    pub cutoff: f64,
    /// No threshold selected anything.
    pub all_empty: bool,
    /// The sweep favoured selection but the working threshold selected
    /// nothing, so the no-selection estimate is reported.
    pub fell_back: bool,
    pub thresholds: Vec<f64>,
    pub inputs: Inputs,
    pub settings: Settings,
    pub data: DataSummary,
    pub cells: Vec<Cell>,
    pub estimate: Estimate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Diagnostics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
}

/// Written next to simulated data; `support` indexes genotype columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub n: usize,
    pub n_snps: usize,
    pub q: f64,
    pub sigma_u2: f64,
    pub sigma_e2: f64,
    pub eta: f64,
    pub maf_low: f64,
    pub maf_high: f64,
    pub fixed_effects: usize,
    pub support: Vec<usize>,
    pub support_ids: Vec<String>,
    /// Effect of each support column, in the same order.
    pub effects: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
}

impl Manifest {
    /// Effects over all genotype columns.
    pub fn effect_vector(&self) -> CliResult<Vec<f64>> {
        if self.support.len() != self.effects.len() {
            return Err(CliError::Usage("manifest support and effects differ in length".into()));
        }
        let mut u = vec![0.0; self.n_snps];
        for (&j, &v) in self.support.iter().zip(&self.effects) {
            *u.get_mut(j)
                .ok_or_else(|| CliError::Usage(format!("manifest support column {j} is out of range")))? = v;
        }
        Ok(u)
    }
}

pub fn emit<T: Serialize>(value: &T) -> String {
    toml::to_string(value).expect("report types serialize")
}

pub fn parse<T: DeserializeOwned>(text: &str) -> Result<T, toml::de::Error> {
    toml::from_str(text)
}

pub fn write<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    std::fs::write(path, emit(value)).map_err(|e| CliError::io(path, e))
}

pub fn read<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse(&text).map_err(|e| CliError::parse(path, e.to_string()))
}
