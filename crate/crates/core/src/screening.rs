//! Sure independence screening: rank columns by `C_j = |sum_i Y_i Z_ij|`
//! and keep the strongest.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::{dot, ColMatrix};
use crate::par;

#[derive(Debug, Clone, PartialEq)]
pub struct ScreenResult {
    /// Column indices, by decreasing score; ties by increasing index.
    pub kept: Vec<usize>,
    pub scores: Vec<f64>,
}

pub fn sis_screen(y: &[f64], z: &ColMatrix, n_max: usize) -> Result<ScreenResult> {
    if y.len() != z.nrows() {
        return Err(Error::DimensionMismatch {
            what: "phenotype length",
            expected: z.nrows(),
            found: y.len(),
        });
    }
    let scores = par::map_indexed(z.ncols(), |j| dot(y, z.col(j)).abs());
    Ok(top_scores(scores, n_max))
}

/// Screening restricted to the rows in `rows`; `y_rows[k]` is the response
/// of row `rows[k]`.
pub fn sis_screen_rows(y_rows: &[f64], z: &ColMatrix, rows: &[usize], n_max: usize) -> Result<ScreenResult> {
    if y_rows.len() != rows.len() {
        return Err(Error::DimensionMismatch {
            what: "subsample response length",
            expected: rows.len(),
            found: y_rows.len(),
        });
    }
    // evaluated serially: callers already parallelize over subsamples
    let mut buf = alloc::vec![0.0; rows.len()];
    let scores = (0..z.ncols())
        .map(|j| {
            let c = z.col(j);
            for (b, &i) in buf.iter_mut().zip(rows) {
                *b = c[i];
            }
            dot(y_rows, &buf).abs()
        })
        .collect();
    Ok(top_scores(scores, n_max))
}

fn top_scores(scores: Vec<f64>, n_max: usize) -> ScreenResult {
    let keep = n_max.min(scores.len());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    let cmp = |&a: &usize, &b: &usize| scores[b].total_cmp(&scores[a]).then(a.cmp(&b));
    if keep < order.len() {
        if keep > 0 {
            order.select_nth_unstable_by(keep - 1, cmp);
        }
        order.truncate(keep);
    }
    order.sort_unstable_by(cmp);
    let kept_scores = order.iter().map(|&j| scores[j]).collect();
    ScreenResult {
        kept: order,
        scores: kept_scores,
    }
}
