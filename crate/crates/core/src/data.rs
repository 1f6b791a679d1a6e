//! Domain types: genotypes, their standardized form, phenotypes, fixed
//! effects and the generative trait parameters.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::ColMatrix;
use crate::par;

/// Allele counts (0, 1 or 2) for `n` individuals at `n_snps` loci, stored
/// column-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenotypeMatrix {
    n: usize,
    n_snps: usize,
    values: Vec<u8>,
}

impl GenotypeMatrix {
    pub fn new(n: usize, n_snps: usize, values: Vec<u8>) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidConfig("need at least two individuals"));
        }
        if n_snps < 1 {
            return Err(Error::InvalidConfig("need at least one SNP"));
        }
        if values.len() != n * n_snps {
            return Err(Error::DimensionMismatch {
                what: "genotype buffer length",
                expected: n * n_snps,
                found: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|&v| v > 2) {
            return Err(Error::InvalidGenotype {
                row: pos % n,
                col: pos / n,
                value: values[pos],
            });
        }
        Ok(Self { n, n_snps, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_snps(&self) -> usize {
        self.n_snps
    }

    pub fn column(&self, j: usize) -> &[u8] {
        &self.values[j * self.n..(j + 1) * self.n]
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.values[j * self.n + i]
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.values
    }
}

/// Column-centered, unit-variance genotypes.
///
/// Columns are scaled by the population standard deviation (divide by `n`),
/// so every retained column satisfies `sum_i z_ij^2 = n`. Monomorphic
/// columns are dropped; `source_columns[k]` is the genotype column that
/// became column `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedMatrix {
    matrix: ColMatrix,
    source_columns: Vec<usize>,
    excluded: Vec<usize>,
}

impl StandardizedMatrix {
    /// Wraps an already standardized real matrix; columns map to themselves.
    pub fn from_matrix(matrix: ColMatrix) -> Self {
        let source_columns = (0..matrix.ncols()).collect();
        Self {
            matrix,
            source_columns,
            excluded: Vec::new(),
        }
    }

    /// Same column bookkeeping, new values (e.g. after projection).
    pub(crate) fn with_matrix(&self, matrix: ColMatrix) -> Self {
        debug_assert_eq!(matrix.ncols(), self.source_columns.len());
        Self {
            matrix,
            source_columns: self.source_columns.clone(),
            excluded: self.excluded.clone(),
        }
    }

    pub fn matrix(&self) -> &ColMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ColMatrix {
        self.matrix
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_snps(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn source_columns(&self) -> &[usize] {
        &self.source_columns
    }

    /// Genotype columns dropped for being constant.
    pub fn excluded(&self) -> &[usize] {
        &self.excluded
    }

    /// Maps a genotype column index to its standardized column, if retained.
    pub fn position_of_source(&self, source: usize) -> Option<usize> {
        self.source_columns.binary_search(&source).ok()
    }
}

pub fn standardize(w: &GenotypeMatrix) -> Result<StandardizedMatrix> {
    let n = w.n();
    let cols: Vec<Option<Vec<f64>>> = par::map_indexed(w.n_snps(), |j| {
        let mut c: Vec<f64> = w.column(j).iter().map(|&v| f64::from(v)).collect();
        center_normalize(&mut c).then_some(c)
    });
    let mut data = Vec::with_capacity(n * cols.len());
    let mut source_columns = Vec::new();
    let mut excluded = Vec::new();
    for (j, c) in cols.into_iter().enumerate() {
        match c {
            Some(c) => {
                data.extend_from_slice(&c);
                source_columns.push(j);
            }
            None => excluded.push(j),
        }
    }
    if source_columns.is_empty() {
        return Err(Error::AllColumnsConstant);
    }
    let matrix = ColMatrix::from_col_major(n, source_columns.len(), data)?;
    Ok(StandardizedMatrix {
        matrix,
        source_columns,
        excluded,
    })
}

/// Centers `c` and scales it to population standard deviation one.
/// Returns `false` (leaving `c` centered) when the column is constant.
pub fn center_normalize(c: &mut [f64]) -> bool {
    let n = c.len() as f64;
    let mean = c.iter().sum::<f64>() / n;
    for v in c.iter_mut() {
        *v -= mean;
    }
    // second pass removes the residual mean left by round-off
    let resid = c.iter().sum::<f64>() / n;
    for v in c.iter_mut() {
        *v -= resid;
    }
    let ss: f64 = c.iter().map(|v| v * v).sum();
    let max_abs = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if ss == 0.0 || max_abs <= 1e-12 * (1.0 + mean.abs()) {
        return false;
    }
    let scale = libm::sqrt(n / ss);
    for v in c.iter_mut() {
        *v *= scale;
    }
    true
}

/// Applies [`center_normalize`] to every column; returns which columns were
/// non-constant.
pub fn center_normalize_columns(m: &mut ColMatrix) -> Vec<bool> {
    let n = m.nrows();
    let mut flags = alloc::vec![false; m.ncols()];
    for (j, f) in flags.iter_mut().enumerate() {
        *f = center_normalize(m.col_mut(j));
    }
    debug_assert!(n == 0 || flags.len() == m.ncols());
    flags
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phenotype(Vec<f64>);

impl Phenotype {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("phenotype"));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Fixed-effect design `X`. Only its column space is ever used.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedEffects(ColMatrix);

impl FixedEffects {
    pub fn new(x: ColMatrix) -> Result<Self> {
        if x.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("fixed effects"));
        }
        Ok(Self(x))
    }

    pub fn matrix(&self) -> &ColMatrix {
        &self.0
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn p(&self) -> usize {
        self.0.ncols()
    }
}

/// Sparse random-effect model: each effect is zero with probability `1 - q`
/// and `N(0, sigma_u2)` otherwise; the environmental noise has variance
/// `sigma_e2`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TraitParams {
    pub q: f64,
    pub sigma_u2: f64,
    pub sigma_e2: f64,
}

impl TraitParams {
    pub fn new(q: f64, sigma_u2: f64, sigma_e2: f64) -> Result<Self> {
        let p = Self {
            q,
            sigma_u2,
            sigma_e2,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(Error::InvalidConfig("q must lie in (0, 1]"));
        }
        if !(self.sigma_u2 > 0.0 && self.sigma_u2.is_finite()) {
            return Err(Error::InvalidConfig("sigma_u2 must be positive"));
        }
        if !(self.sigma_e2 >= 0.0 && self.sigma_e2.is_finite()) {
            return Err(Error::InvalidConfig("sigma_e2 must be non-negative"));
        }
        Ok(())
    }
}

/// Heritability implied by the generative parameters over `n_snps` loci.
pub fn implied_heritability(params: &TraitParams, n_snps: usize) -> f64 {
    let genetic = n_snps as f64 * params.q * params.sigma_u2;
    let total = genetic + params.sigma_e2;
    if total == 0.0 {
        0.0
    } else {
        genetic / total
    }
}
