use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{self, CalibrateArgs, DataArgs, ModeArg, RecolorArg, RunArgs};
use crate::error::{CliError, CliResult};
use crate::report;

/// Seeds are written to TOML reports, whose integers are signed.
fn seed_parser() -> clap::builder::RangedU64ValueParser<u64> {
    clap::value_parser!(u64).range(..=i64::MAX as u64)
}

#[derive(Debug, Parser)]
#[command(name = "herit", version, about = "Heritability estimation with sparse variable selection")]
pub struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "HERIT_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate genotypes and a trait from a settings file.
    Simulate {
        /// TOML settings: n, n_snps, q, sigma_u2, sigma_e2 or target_eta,
        /// maf_low, maf_high, fixed_effects, seed.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Overrides the seed in the settings file.
        #[arg(long, value_parser = seed_parser())]
        seed: Option<u64>,
    },
    /// Estimate heritability.
    Estimate {
        #[command(flatten)]
        data: DataOpts,
        #[arg(long, value_enum, default_value = "esther")]
        mode: ModeArg,
        #[command(flatten)]
        run: RunOpts,
        #[command(flatten)]
        out: OutOpts,
    },
    /// Choose between estimation with and without selection.
    Decide {
        #[command(flatten)]
        data: DataOpts,
        /// Comma-separated stability thresholds to sweep.
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        #[arg(long, default_value_t = commands::default_cutoff())]
        cutoff: f64,
        #[command(flatten)]
        run: RunOpts,
        #[command(flatten)]
        out: OutOpts,
    },
    /// Tabulate estimation error against the stability threshold on
    /// traits simulated over the given genotypes.
    Calibrate {
        #[arg(long)]
        genotypes: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.4,0.5,0.6,0.7")]
        eta_grid: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.002")]
        q_grid: Vec<f64>,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "0.6,0.62,0.64,0.66,0.68,0.7,0.72,0.74,0.76,0.78,0.8,0.82,0.84,0.86,0.88,0.9"
        )]
        thresholds: Vec<f64>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 50)]
        subsamples: usize,
        #[arg(long, default_value_t = 0, value_parser = seed_parser())]
        seed: u64,
        /// CSV error table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct DataOpts {
    #[arg(long)]
    pub genotypes: PathBuf,
    #[arg(long)]
    pub phenotype: PathBuf,
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    /// Manifest written by `simulate`; enables oracle mode and recovery
    /// diagnostics.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunOpts {
    #[arg(long, default_value_t = 0.76)]
    pub threshold: f64,
    #[arg(long, default_value_t = 50)]
    pub subsamples: usize,
    #[arg(long = "bootstrap-k", alias = "bootstrap-K", default_value_t = 80)]
    pub bootstrap_k: usize,
    /// Columns kept by screening in each subsample (default: subsample size).
    #[arg(long)]
    pub screen_n_max: Option<usize>,
    /// Rescale columns to unit variance after removing covariates.
    #[arg(long)]
    pub restandardize: bool,
    #[arg(long, value_enum, default_value = "sqrt")]
    pub recolor: RecolorArg,
    #[arg(long, default_value_t = 0, value_parser = seed_parser())]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct OutOpts {
    /// Machine-readable TOML report.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Include wall-clock timings in the report.
    #[arg(long)]
    pub timings: bool,
}

impl DataOpts {
    fn args(&self) -> DataArgs {
        DataArgs {
            genotypes: self.genotypes.clone(),
            phenotype: self.phenotype.clone(),
            covariates: self.covariates.clone(),
            truth: self.truth.clone(),
        }
    }
}

impl RunOpts {
    fn args(&self) -> RunArgs {
        RunArgs {
            threshold: self.threshold,
            subsamples: self.subsamples,
            bootstrap_k: self.bootstrap_k,
            screen_n_max: self.screen_n_max,
            restandardize: self.restandardize,
            recolor: self.recolor,
            seed: self.seed,
        }
    }
}

fn write_text(path: &std::path::Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Runs one command; returns the text for stdout.
pub fn execute(cmd: &Command) -> CliResult<String> {
    match cmd {
        Command::Simulate { config, out_dir, seed } => {
            let m = commands::cmd_simulate(config, *seed, out_dir)?;
            Ok(format!(
                "wrote {} individuals x {} SNPs to {} (eta {:.4}, {} causal)\n",
                m.n,
                m.n_snps,
                out_dir.display(),
                m.eta,
                m.support.len()
            ))
        }
        Command::Estimate { data, mode, run, out } => {
            let mut r = commands::cmd_estimate(&data.args(), *mode, &run.args())?;
            let text = commands::summarize_run(&r);
            if !out.timings {
                r.timings = None;
            }
            if let Some(p) = &out.out {
                report::write(p, &r)?;
            }
            Ok(text)
        }
        Command::Decide {
            data,
            thresholds,
            cutoff,
            run,
            out,
        } => {
            let mut r = commands::cmd_decide(&data.args(), &run.args(), thresholds.clone(), *cutoff)?;
            let text = commands::summarize_decision(&r);
            if !out.timings {
                r.timings = None;
            }
            if let Some(p) = &out.out {
                report::write(p, &r)?;
            }
            Ok(text)
        }
        Command::Calibrate {
            genotypes,
            eta_grid,
            q_grid,
            thresholds,
            reps,
            subsamples,
            seed,
            out,
        } => {
            let table = commands::cmd_calibrate(&CalibrateArgs {
                genotypes: genotypes.clone(),
                eta_grid: eta_grid.clone(),
                q_grid: q_grid.clone(),
                thresholds: thresholds.clone(),
                reps: *reps,
                subsamples: *subsamples,
                seed: *seed,
            })?;
            let csv = commands::calibration_csv(&table);
            if let Some(p) = out {
                write_text(p, &csv)?;
            }
            let worst = table.worst_case_errors(thresholds);
            let mut text = String::from("threshold  worst-case mean |eta - eta_hat|\n");
            for (t, e) in thresholds.iter().zip(&worst) {
                text.push_str(&format!("{t:<9}  {e:.4}\n"));
            }
            text.push_str(&format!("best threshold: {}\n", table.best_threshold));
            Ok(text)
        }
    }
}

/// Parses arguments, runs inside a pool of the requested size and returns
/// the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let threads = cli
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from))
        .max(1);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start {threads} worker threads: {e}");
            return 2;
        }
    };
    match pool.install(|| execute(&cli.command)) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
