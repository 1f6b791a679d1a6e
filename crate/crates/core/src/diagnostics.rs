//! How much of the true support a selection recovers, overall and by
//! effect-size decile.

use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RecoveryReport {
    pub selected_size: usize,
    pub true_support_size: usize,
    /// `|selected & true| / |true|`.
    pub capture_fraction: f64,
    /// Non-null effects in each decile, largest magnitudes first.
    pub decile_sizes: [usize; 10],
    /// Captured fraction per decile; `None` for an empty decile.
    pub decile_capture: [Option<f64>; 10],
}

/// `selected` and the indices of `u_true` share one labeling.
pub fn recovery_metrics(selected: &[usize], u_true: &[f64]) -> Result<RecoveryReport> {
    let mut support: Vec<usize> = (0..u_true.len()).filter(|&i| u_true[i] != 0.0).collect();
    if support.is_empty() {
        return Err(Error::EmptyTrueSupport);
    }
    support.sort_by(|&a, &b| u_true[b].abs().total_cmp(&u_true[a].abs()).then(a.cmp(&b)));
    let mut chosen: Vec<usize> = selected.to_vec();
    chosen.sort_unstable();
    chosen.dedup();
    let hit = |j: &usize| chosen.binary_search(j).is_ok();
    let s = support.len();
    let mut decile_sizes = [0usize; 10];
    let mut decile_capture = [None; 10];
    for g in 0..10 {
        let part = &support[g * s / 10..(g + 1) * s / 10];
        decile_sizes[g] = part.len();
        if !part.is_empty() {
            decile_capture[g] = Some(part.iter().filter(|j| hit(j)).count() as f64 / part.len() as f64);
        }
    }
    Ok(RecoveryReport {
        selected_size: chosen.len(),
        true_support_size: s,
        capture_fraction: support.iter().filter(|j| hit(j)).count() as f64 / s as f64,
        decile_sizes,
        decile_capture,
    })
}
