//! Heritability by maximum likelihood in the rotated coordinates.
//!
//! With `R = Z Z' / N` diagonalized as `U R U' = diag(lambda)`, the rotated
//! response `U'Y` has independent components of variance
//! `sigma^2 (eta (lambda_i - 1) + 1)`. Profiling out `sigma^2` leaves
//!
//! `L_n(eta) = -log((1/n) sum Y_i^2 / d_i) - (1/n) sum log d_i`,
//! `d_i = eta (lambda_i - 1) + 1`,
//!
//! which is maximized over `[0, 1)`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::ColMatrix;
use crate::optimize::brent_minimize;

/// Largest heritability the optimizer evaluates.
pub const ETA_MAX: f64 = 1.0 - 1e-9;
/// Eigenvalues below this are set to zero.
pub const EIGEN_FLOOR: f64 = 1e-10;
const GRID_POINTS: usize = 1000;
const FD_STEP: f64 = 1e-4;

/// Eigenvalues of `R` and the response in its eigenbasis.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KinshipEigen {
    /// Non-negative, in decreasing order.
    pub lambdas: Vec<f64>,
    /// `U'Y`, aligned with `lambdas`.
    pub rotated: Vec<f64>,
    /// Columns used to build `R`.
    pub n_sel: usize,
}

impl KinshipEigen {
    pub fn new(lambdas: Vec<f64>, rotated: Vec<f64>, n_sel: usize) -> Result<Self> {
        if lambdas.len() != rotated.len() {
            return Err(Error::DimensionMismatch {
                what: "rotated response length",
                expected: lambdas.len(),
                found: rotated.len(),
            });
        }
        if lambdas.is_empty() {
            return Err(Error::InvalidConfig("empty eigenstructure"));
        }
        if lambdas.iter().chain(&rotated).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("eigenstructure"));
        }
        let lambdas = lambdas.into_iter().map(|l| if l < EIGEN_FLOOR { 0.0 } else { l }).collect();
        Ok(Self { lambdas, rotated, n_sel })
    }

    pub fn n(&self) -> usize {
        self.lambdas.len()
    }

    /// Same eigenvalues, different response.
    pub fn with_rotated(&self, rotated: Vec<f64>) -> Self {
        assert_eq!(rotated.len(), self.lambdas.len());
        Self {
            lambdas: self.lambdas.clone(),
            rotated,
            n_sel: self.n_sel,
        }
    }
}

/// Eigendecomposition of `R`, kept so several responses can be rotated.
#[derive(Debug, Clone)]
pub struct KinshipBasis {
    lambdas: Vec<f64>,
    vectors: ColMatrix,
    n_sel: usize,
}

impl KinshipBasis {
    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// Eigenvectors as columns, aligned with [`Self::lambdas`].
    pub fn vectors(&self) -> &ColMatrix {
        &self.vectors
    }

    pub fn n_sel(&self) -> usize {
        self.n_sel
    }

    pub fn rotate(&self, y: &[f64]) -> Result<KinshipEigen> {
        if y.len() != self.vectors.nrows() {
            return Err(Error::DimensionMismatch {
                what: "response length",
                expected: self.vectors.nrows(),
                found: y.len(),
            });
        }
        Ok(KinshipEigen {
            lambdas: self.lambdas.clone(),
            rotated: self.vectors.tr_mul_vec(y),
            n_sel: self.n_sel,
        })
    }
}

/// Diagonalizes `R = Z Z' / N` for the columns of `z`.
pub fn kinship_basis(z: &ColMatrix) -> Result<KinshipBasis> {
    let n_sel = z.ncols();
    if n_sel == 0 {
        return Err(Error::InvalidConfig("kinship needs at least one column"));
    }
    if z.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("genotype matrix"));
    }
    let zm = z.to_nalgebra();
    let r = (&zm * zm.transpose()) / n_sel as f64;
    let eig = nalgebra::SymmetricEigen::new(r);
    let n = z.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let lambdas = order
        .iter()
        .map(|&k| {
            let l = eig.eigenvalues[k];
            if l < EIGEN_FLOOR {
                0.0
            } else {
                l
            }
        })
        .collect();
    let mut vectors = ColMatrix::zeros(n, n);
    for (dst, &k) in order.iter().enumerate() {
        vectors.col_mut(dst).copy_from_slice(eig.eigenvectors.column(k).as_slice());
    }
    Ok(KinshipBasis { lambdas, vectors, n_sel })
}

pub fn kinship_eigen(z: &ColMatrix, y: &[f64]) -> Result<KinshipEigen> {
    kinship_basis(z)?.rotate(y)
}

/// `L_n(eta)`. Fails where some `d_i` is not positive or the weighted
/// sum of squares vanishes.
pub fn profile_loglik(eta: f64, ke: &KinshipEigen) -> Result<f64> {
    let n = ke.n() as f64;
    let mut ss = 0.0;
    let mut logdet = 0.0;
    for (&l, &y) in ke.lambdas.iter().zip(&ke.rotated) {
        let d = eta * (l - 1.0) + 1.0;
        if !(d > 1e-12) {
            return Err(Error::DegenerateLikelihood { eta });
        }
        ss += y * y / d;
        logdet += libm::log(d);
    }
    if !(ss > 0.0) {
        return Err(Error::DegenerateLikelihood { eta });
    }
    Ok(-libm::log(ss / n) - logdet / n)
}

/// Plug-in variance scale at `eta`: `(1/n) sum Y_i^2 / d_i`.
pub fn sigma2_at(eta: f64, ke: &KinshipEigen) -> f64 {
    let ss: f64 = ke
        .lambdas
        .iter()
        .zip(&ke.rotated)
        .map(|(&l, &y)| y * y / (eta * (l - 1.0) + 1.0))
        .sum();
    ss / ke.n() as f64
}

/// Full Gaussian log-density of the rotated response at `(eta, sigma2)`.
pub fn gaussian_loglik(eta: f64, sigma2: f64, ke: &KinshipEigen) -> f64 {
    let mut out = -0.5 * ke.n() as f64 * libm::log(2.0 * core::f64::consts::PI);
    for (&l, &y) in ke.lambdas.iter().zip(&ke.rotated) {
        let v = sigma2 * (eta * (l - 1.0) + 1.0);
        out -= 0.5 * (libm::log(v) + y * y / v);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HeritabilityFit {
    pub eta_hat: f64,
    pub sigma2_hat: f64,
    /// `L_n(eta_hat)`.
    pub loglik: f64,
    /// Observed-information standard error; `None` when the curvature is
    /// not negative.
    pub se: Option<f64>,
    /// Observations (rotated components) used.
    pub n_obs: usize,
    /// Columns behind the kinship matrix.
    pub n_columns: usize,
    /// All eigenvalues equal: the likelihood does not depend on `eta`.
    pub unidentifiable: bool,
    /// The maximizer sits on an end of `[0, ETA_MAX]`; `se` is unreliable.
    pub at_boundary: bool,
}

fn identifiable(ke: &KinshipEigen) -> bool {
    let (lo, hi) = ke
        .lambdas
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &l| (lo.min(l), hi.max(l)));
    hi - lo > 1e-12 * hi.max(1.0)
}

/// `-L_n` on the response divided by its mean square, which makes the
/// search path independent of the response scale.
fn neg_loglik(ke: &KinshipEigen) -> impl Fn(f64) -> f64 + '_ {
    let n = ke.n() as f64;
    let scale = ke.rotated.iter().map(|y| y * y).sum::<f64>() / n;
    move |eta| {
        let mut ss = 0.0;
        let mut logdet = 0.0;
        for (&l, &y) in ke.lambdas.iter().zip(&ke.rotated) {
            let d = eta * (l - 1.0) + 1.0;
            if !(d > 1e-12) {
                return f64::INFINITY;
            }
            ss += y * y / d;
            logdet += libm::log(d);
        }
        let v = libm::log(ss / (n * scale)) + logdet / n;
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    }
}

/// Maximizes `L_n` on `[0, ETA_MAX]`: grid prescan, then bisection on the
/// derivative inside the best grid cell, with Brent when it is not bracketed.
fn argmax(ke: &KinshipEigen) -> Result<f64> {
    let f = neg_loglik(ke);
    let step = ETA_MAX / (GRID_POINTS - 1) as f64;
    let mut best = (0usize, f64::INFINITY);
    for k in 0..GRID_POINTS {
        let v = f(k as f64 * step);
        if v < best.1 {
            best = (k, v);
        }
    }
    if !best.1.is_finite() {
        return Err(Error::DegenerateLikelihood { eta: 0.0 });
    }
    let lo = best.0.saturating_sub(1) as f64 * step;
    let hi = ((best.0 + 1).min(GRID_POINTS - 1) as f64 * step).min(ETA_MAX);
    let (da, db) = (derivative(ke, lo), derivative(ke, hi));
    if lo == 0.0 && da <= 0.0 {
        return Ok(0.0);
    }
    if hi == ETA_MAX && db >= 0.0 {
        return Ok(ETA_MAX);
    }
    if da > 0.0 && db < 0.0 {
        // the derivative crosses zero transversally, so bisection locates
        // the maximizer to round-off, unlike a search on the flat objective
        let (mut a, mut b) = (lo, hi);
        loop {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            if derivative(ke, m) > 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        let x = if f(a) <= f(b) { a } else { b };
        return Ok(x);
    }
    let (x, fx) = brent_minimize(&f, lo, hi, 1e-11, 200);
    // Brent never evaluates the bracket ends; keep a grid point if it wins
    Ok(if fx <= best.1 { x } else { best.0 as f64 * step })
}

/// `L_n'(eta) = B / A - C / n` with `A = sum Y^2 / d`,
/// `B = sum Y^2 (lambda - 1) / d^2`, `C = sum (lambda - 1) / d`.
fn derivative(ke: &KinshipEigen, eta: f64) -> f64 {
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for (&l, &y) in ke.lambdas.iter().zip(&ke.rotated) {
        let d = eta * (l - 1.0) + 1.0;
        let s = y * y / d;
        a += s;
        b += s * (l - 1.0) / d;
        c += (l - 1.0) / d;
    }
    b / a - c / ke.n() as f64
}

/// Second derivative of `L_n` by Richardson-refined central differences.
fn curvature(ke: &KinshipEigen, eta: f64) -> Option<f64> {
    let c = eta.clamp(FD_STEP, ETA_MAX - FD_STEP);
    let l = |x: f64| profile_loglik(x, ke).ok();
    let d = |h: f64| -> Option<f64> { Some((l(c + h)? - 2.0 * l(c)? + l(c - h)?) / (h * h)) };
    let (d1, d2) = (d(FD_STEP)?, d(0.5 * FD_STEP)?);
    Some((4.0 * d2 - d1) / 3.0)
}

pub fn fit_heritability(ke: &KinshipEigen) -> Result<HeritabilityFit> {
    let n = ke.n();
    if !identifiable(ke) {
        let loglik = profile_loglik(0.0, ke)?;
        return Ok(HeritabilityFit {
            eta_hat: 0.0,
            sigma2_hat: sigma2_at(0.0, ke),
            loglik,
            se: None,
            n_obs: n,
            n_columns: ke.n_sel,
            unidentifiable: true,
            at_boundary: false,
        });
    }
    let eta = argmax(ke)?;
    let loglik = profile_loglik(eta, ke)?;
    let info = curvature(ke, eta).map(|c| -0.5 * n as f64 * c);
    let se = info.filter(|&i| i > 0.0 && i.is_finite()).map(|i| 1.0 / libm::sqrt(i));
    Ok(HeritabilityFit {
        eta_hat: eta,
        sigma2_hat: sigma2_at(eta, ke),
        loglik,
        se,
        n_obs: n,
        n_columns: ke.n_sel,
        unidentifiable: false,
        at_boundary: eta <= 1e-8 || eta >= ETA_MAX - 1e-8,
    })
}

/// Two-parameter maximization of the Gaussian density, alternating the
/// closed-form `sigma^2` with a scalar search over `eta`. Used to check the
/// profile route.
pub fn fit_full_gaussian(ke: &KinshipEigen) -> Result<(f64, f64)> {
    if !identifiable(ke) {
        return Ok((0.0, sigma2_at(0.0, ke)));
    }
    let step = ETA_MAX / (GRID_POINTS - 1) as f64;
    let mut eta = 0.5;
    let mut sigma2 = sigma2_at(eta, ke);
    let mut current = gaussian_loglik(eta, sigma2, ke);
    for it in 0..10_000 {
        let f = |x: f64| -gaussian_loglik(x, sigma2, ke);
        // a full prescan first, then a local bracket around the iterate
        let (lo, hi) = if it == 0 {
            let k = (0..GRID_POINTS)
                .map(|k| (k, f(k as f64 * step)))
                .fold((0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b })
                .0;
            (k.saturating_sub(1) as f64 * step, ((k + 1) as f64 * step).min(ETA_MAX))
        } else {
            ((eta - 0.05).max(0.0), (eta + 0.05).min(ETA_MAX))
        };
        let (mut next, fx) = brent_minimize(f, lo, hi, 1e-12, 200);
        for edge in [lo, hi] {
            if f(edge) < fx {
                next = edge;
            }
        }
        let next_sigma2 = sigma2_at(next, ke);
        let value = gaussian_loglik(next, next_sigma2, ke);
        let step_size = (next - eta).abs();
        let gain = value - current;
        eta = next;
        sigma2 = next_sigma2;
        current = value;
        if step_size < 1e-11 || gain <= 1e-15 * value.abs() {
            break;
        }
    }
    if !(sigma2 > 0.0) {
        return Err(Error::DegenerateLikelihood { eta });
    }
    Ok((eta, sigma2))
}
