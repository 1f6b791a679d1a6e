use alloc::boxed::Box;

use crate::lasso::LassoFit;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    #[error("genotype entry {value} at row {row}, column {col} is not 0, 1 or 2")]
    InvalidGenotype { row: usize, col: usize, value: u8 },

    #[error("every genotype column is constant")]
    AllColumnsConstant,

    #[error("dimension mismatch: {what} (expected {expected}, found {found})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),

    #[error("fixed-effect design has full row rank ({0}); nothing left after projection")]
    DegenerateDesign(usize),

    #[error("coordinate descent did not converge within {iterations} sweeps")]
    NonConvergence {
        iterations: usize,
        best: Box<LassoFit>,
    },

    #[error("the fixed effects explain the phenotype exactly; no variance is left")]
    NoResidualVariance,

    #[error("stability selection kept no column")]
    EmptySelection,

    #[error("profile likelihood is degenerate at eta = {eta}")]
    DegenerateLikelihood { eta: f64 },

    #[error("{dropped} of {total} bootstrap replicates failed to fit")]
    TooManyDroppedReplicates { dropped: usize, total: usize },

    #[error("true effect vector has an empty support")]
    EmptyTrueSupport,
}
