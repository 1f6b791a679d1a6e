//! L1-penalized least squares by cyclic coordinate descent.
//!
//! The criterion is the un-halved residual sum of squares
//! `||Y - Z u||^2 + lambda ||u||_1`, so the coordinate update is
//! `u_j <- S(z_j' r_j, lambda / 2) / ||z_j||^2` with `r_j` the partial
//! residual, and the smallest penalty with an empty solution is
//! `lambda_max = 2 max_j |z_j' Y|`.
//!
//! Each outer iteration checks the KKT conditions on every column, runs one
//! full sweep, takes Newton steps on the criterion restricted to the
//! current support and signs, then sweeps the active set until its
//! coefficients settle, with periodic Anderson extrapolation.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::{axpy, dot, gram, sum_sq, ColMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LassoOptions {
    /// KKT tolerance, relative to `lambda_max`.
    pub tol: f64,
    /// Maximum number of coordinate sweeps per penalty value.
    pub max_iter: usize,
    /// Record the criterion after every sweep.
    pub record_trace: bool,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 10_000,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub lambda: f64,
    /// One coefficient per column of the design.
    pub coefficients: Vec<f64>,
    /// Columns with a non-zero coefficient, increasing.
    pub active_set: Vec<usize>,
    pub objective: f64,
    /// Coordinate sweeps used.
    pub iterations: usize,
    pub converged: bool,
    /// Criterion after each sweep, when requested.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoPath {
    /// Strictly decreasing penalties starting at `lambda_max`.
    pub lambdas: Vec<f64>,
    pub fits: Vec<LassoFit>,
}

impl LassoPath {
    /// Fit at the smallest penalty.
    pub fn last(&self) -> &LassoFit {
        self.fits.last().expect("a path has at least two fits")
    }
}

#[inline]
pub fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// `2 max_j |z_j' y|`
pub fn lambda_max(y: &[f64], z: &ColMatrix) -> f64 {
    2.0 * z.columns().map(|c| dot(c, y).abs()).fold(0.0, f64::max)
}

/// `||y - Z u||^2 + lambda ||u||_1`, computed from scratch.
pub fn objective(y: &[f64], z: &ColMatrix, u: &[f64], lambda: f64) -> f64 {
    let fitted = z.mul_vec(u);
    let rss: f64 = y.iter().zip(&fitted).map(|(a, b)| (a - b) * (a - b)).sum();
    rss + lambda * u.iter().map(|v| v.abs()).sum::<f64>()
}

/// Iterates kept for Anderson extrapolation of the active-set sweeps.
const ANDERSON_DEPTH: usize = 5;

/// Restricted Newton steps per outer iteration; a truncated step drops the
/// coordinates that crossed zero and retries.
const NEWTON_REPEATS: usize = 10;

/// Coordinate descent in covariance form: the gradient `g = Z'r` is kept
/// up to date through the Gram matrix, so an update costs one column of
/// `Z'Z` rather than a pass over the rows.
struct Solver<'a> {
    y: &'a [f64],
    z: &'a ColMatrix,
    yy: f64,
    zy: Vec<f64>,
    gram: ColMatrix,
    beta: Vec<f64>,
    grad: Vec<f64>,
    scale: f64,
}

impl<'a> Solver<'a> {
    fn new(y: &'a [f64], z: &'a ColMatrix, init: Option<&[f64]>) -> Self {
        let zy = z.tr_mul_vec(y);
        let scale = 2.0 * zy.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let beta = init.map_or_else(|| vec![0.0; z.ncols()], <[f64]>::to_vec);
        let mut s = Self {
            y,
            z,
            yy: sum_sq(y),
            grad: zy.clone(),
            zy,
            gram: gram(z),
            beta,
            scale,
        };
        s.refresh_gradient();
        s
    }

    fn refresh_gradient(&mut self) {
        let mut g = self.zy.clone();
        for (j, &b) in self.beta.iter().enumerate() {
            if b != 0.0 {
                axpy(-b, self.gram.col(j), &mut g);
            }
        }
        self.grad = g;
    }

    /// `||r||^2 + lambda ||beta||_1` with `||r||^2 = y'y - beta'Z'y - beta'g`.
    fn objective(&self, lambda: f64) -> f64 {
        let rss = self.yy - dot(&self.zy, &self.beta) - dot(&self.grad, &self.beta);
        rss + lambda * self.beta.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// One coordinate update; returns `2 ||z_j||^2 |delta|`, the induced
    /// change in the gradient of column `j`.
    #[inline]
    fn update(&mut self, j: usize, lambda: f64) -> f64 {
        let nj = self.gram.get(j, j);
        if nj == 0.0 {
            return 0.0;
        }
        let old = self.beta[j];
        let rho = self.grad[j] + nj * old;
        let new = soft_threshold(rho, 0.5 * lambda) / nj;
        if new != old {
            axpy(old - new, self.gram.col(j), &mut self.grad);
            self.beta[j] = new;
            2.0 * nj * (new - old).abs()
        } else {
            0.0
        }
    }

    fn sweep_all(&mut self, lambda: f64) -> f64 {
        (0..self.beta.len()).fold(0.0, |m, j| m.max(self.update(j, lambda)))
    }

    fn sweep_active(&mut self, active: &[usize], lambda: f64) -> f64 {
        active.iter().fold(0.0, |m, &j| m.max(self.update(j, lambda)))
    }

    /// Largest KKT violation over all columns.
    fn kkt_violation(&self, lambda: f64) -> f64 {
        let mut worst = 0.0f64;
        for (j, (&g, &b)) in self.grad.iter().zip(&self.beta).enumerate() {
            if self.gram.get(j, j) == 0.0 {
                continue;
            }
            let g = 2.0 * g;
            let v = if b == 0.0 {
                (g.abs() - lambda).max(0.0)
            } else {
                (g - lambda * b.signum()).abs()
            };
            worst = worst.max(v);
        }
        worst
    }

    /// Anderson extrapolation over the stored active-set iterates. The
    /// extrapolated point is kept only if it lowers the criterion.
    fn extrapolate(&mut self, active: &[usize], history: &[Vec<f64>], lambda: f64) {
        let k = history.len() - 1;
        let diffs: Vec<Vec<f64>> = (0..k)
            .map(|i| history[i + 1].iter().zip(&history[i]).map(|(a, b)| a - b).collect())
            .collect();
        let mut c = nalgebra::DMatrix::<f64>::zeros(k, k);
        for i in 0..k {
            for j in 0..=i {
                let v = dot(&diffs[i], &diffs[j]);
                c[(i, j)] = v;
                c[(j, i)] = v;
            }
        }
        let trace = c.trace();
        if !(trace > 0.0) {
            return;
        }
        for i in 0..k {
            c[(i, i)] += 1e-10 * trace;
        }
        let Some(chol) = c.cholesky() else { return };
        let w = chol.solve(&nalgebra::DVector::from_element(k, 1.0));
        let total = w.sum();
        if !(total.abs() > 0.0) || !w.iter().all(|v| v.is_finite()) {
            return;
        }
        let current = self.objective(lambda);
        let saved_beta: Vec<f64> = active.iter().map(|&j| self.beta[j]).collect();
        let saved_grad = self.grad.clone();
        for (pos, &j) in active.iter().enumerate() {
            self.beta[j] = (0..k).map(|i| w[i] / total * history[i + 1][pos]).sum();
        }
        self.refresh_gradient();
        if !(self.objective(lambda) < current) {
            for (pos, &j) in active.iter().enumerate() {
                self.beta[j] = saved_beta[pos];
            }
            self.grad = saved_grad;
        }
    }

    /// Moves the active coefficients toward the minimizer of the criterion
    /// restricted to the current support and sign pattern, stopping at the
    /// first sign change. The criterion is convex along the segment and
    /// decreasing toward its end, so the move never increases it. Returns
    /// whether the full step was taken (or nothing more can be done).
    fn newton_step(&mut self, active: &[usize], lambda: f64) -> bool {
        let k = active.len();
        if k == 0 {
            return true;
        }
        let mut g = nalgebra::DMatrix::<f64>::zeros(k, k);
        for (b, &j) in active.iter().enumerate() {
            let col = self.gram.col(j);
            for (a, &i) in active.iter().enumerate() {
                g[(a, b)] = col[i];
            }
        }
        let rhs = nalgebra::DVector::from_iterator(
            k,
            active.iter().map(|&j| self.zy[j] - 0.5 * lambda * self.beta[j].signum()),
        );
        let Some(chol) = g.cholesky() else { return true };
        let target = chol.solve(&rhs);
        if !target.iter().all(|v| v.is_finite()) {
            return true;
        }
        let mut t = 1.0f64;
        for (a, &j) in active.iter().enumerate() {
            let (from, to) = (self.beta[j], target[a]);
            if to * from < 0.0 || to == 0.0 {
                t = t.min(from / (from - to));
            }
        }
        let current = self.objective(lambda);
        let saved: Vec<f64> = active.iter().map(|&j| self.beta[j]).collect();
        let saved_grad = self.grad.clone();
        for (a, &j) in active.iter().enumerate() {
            let (from, to) = (saved[a], target[a]);
            let v = from + t * (to - from);
            // coefficients reaching zero leave the support exactly
            self.beta[j] = if v * from <= 0.0 { 0.0 } else { v };
        }
        self.refresh_gradient();
        if !(self.objective(lambda) <= current) {
            for (a, &j) in active.iter().enumerate() {
                self.beta[j] = saved[a];
            }
            self.grad = saved_grad;
            return true;
        }
        t >= 1.0
    }

    fn solve(&mut self, lambda: f64, opts: &LassoOptions) -> LassoFit {
        let mut trace = Vec::new();
        let mut iterations = 0;
        let mut converged = false;
        let tol = opts.tol * self.scale;
        if self.scale == 0.0 {
            // Z'y = 0: zero is optimal for every penalty
            self.beta.iter_mut().for_each(|b| *b = 0.0);
            self.refresh_gradient();
            converged = true;
        }
        while !converged {
            self.refresh_gradient();
            if self.kkt_violation(lambda) <= tol {
                converged = true;
                break;
            }
            if iterations >= opts.max_iter {
                break;
            }
            self.sweep_all(lambda);
            iterations += 1;
            if opts.record_trace {
                trace.push(self.objective(lambda));
            }
            let mut active: Vec<usize> = (0..self.beta.len()).filter(|&j| self.beta[j] != 0.0).collect();
            for _ in 0..NEWTON_REPEATS {
                let done = self.newton_step(&active, lambda);
                if opts.record_trace {
                    trace.push(self.objective(lambda));
                }
                if done {
                    break;
                }
                active = (0..self.beta.len()).filter(|&j| self.beta[j] != 0.0).collect();
            }
            let active: Vec<usize> = (0..self.beta.len()).filter(|&j| self.beta[j] != 0.0).collect();
            let mut history: Vec<Vec<f64>> = Vec::with_capacity(ANDERSON_DEPTH + 1);
            while iterations < opts.max_iter {
                let change = self.sweep_active(&active, lambda);
                iterations += 1;
                if change <= tol {
                    if opts.record_trace {
                        trace.push(self.objective(lambda));
                    }
                    break;
                }
                history.push(active.iter().map(|&j| self.beta[j]).collect());
                if history.len() == ANDERSON_DEPTH + 1 {
                    self.extrapolate(&active, &history, lambda);
                    history.clear();
                }
                if opts.record_trace {
                    trace.push(self.objective(lambda));
                }
            }
        }
        let active_set = (0..self.beta.len()).filter(|&j| self.beta[j] != 0.0).collect();
        LassoFit {
            lambda,
            objective: objective(self.y, self.z, &self.beta, lambda),
            coefficients: self.beta.clone(),
            active_set,
            iterations,
            converged,
            trace,
        }
    }
}

fn check_dims(y: &[f64], z: &ColMatrix) -> Result<()> {
    if y.len() != z.nrows() {
        return Err(Error::DimensionMismatch {
            what: "response length",
            expected: z.nrows(),
            found: y.len(),
        });
    }
    Ok(())
}

pub fn lasso_solve(
    y: &[f64],
    z: &ColMatrix,
    lambda: f64,
    init: Option<&[f64]>,
    opts: &LassoOptions,
) -> Result<LassoFit> {
    check_dims(y, z)?;
    if !(lambda >= 0.0) {
        return Err(Error::InvalidConfig("lambda must be non-negative"));
    }
    if let Some(b) = init {
        if b.len() != z.ncols() {
            return Err(Error::DimensionMismatch {
                what: "initial coefficients",
                expected: z.ncols(),
                found: b.len(),
            });
        }
    }
    let fit = Solver::new(y, z, init).solve(lambda, opts);
    if fit.converged {
        Ok(fit)
    } else {
        Err(Error::NonConvergence {
            iterations: fit.iterations,
            best: Box::new(fit),
        })
    }
}

/// Log-spaced grid from `lambda_max` down to `lambda_max * min_ratio`.
pub fn lambda_grid(lambda_max: f64, n_lambdas: usize, min_ratio: f64) -> Vec<f64> {
    let step = libm::log(min_ratio) / (n_lambdas - 1) as f64;
    (0..n_lambdas)
        .map(|k| lambda_max * libm::exp(step * k as f64))
        .collect()
}

pub fn lasso_path(
    y: &[f64],
    z: &ColMatrix,
    n_lambdas: usize,
    lambda_min_ratio: f64,
    opts: &LassoOptions,
) -> Result<LassoPath> {
    let (path, unconverged) = lasso_path_tolerant(y, z, n_lambdas, lambda_min_ratio, opts)?;
    if let Some(k) = unconverged.first() {
        let best = path.fits[*k].clone();
        return Err(Error::NonConvergence {
            iterations: best.iterations,
            best: Box::new(best),
        });
    }
    Ok(path)
}

/// Like [`lasso_path`] but keeps the best iterate where descent stalls and
/// reports which grid points did not converge.
pub fn lasso_path_tolerant(
    y: &[f64],
    z: &ColMatrix,
    n_lambdas: usize,
    lambda_min_ratio: f64,
    opts: &LassoOptions,
) -> Result<(LassoPath, Vec<usize>)> {
    check_dims(y, z)?;
    if n_lambdas < 2 {
        return Err(Error::InvalidConfig("a path needs at least two penalties"));
    }
    if !(lambda_min_ratio > 0.0 && lambda_min_ratio < 1.0) {
        return Err(Error::InvalidConfig("lambda_min_ratio must lie in (0, 1)"));
    }
    let mut solver = Solver::new(y, z, None);
    let lambdas = lambda_grid(solver.scale, n_lambdas, lambda_min_ratio);
    let mut fits = Vec::with_capacity(n_lambdas);
    let mut unconverged = Vec::new();
    for (k, &lam) in lambdas.iter().enumerate() {
        let fit = solver.solve(lam, opts);
        if !fit.converged {
            unconverged.push(k);
        }
        fits.push(fit);
    }
    Ok((LassoPath { lambdas, fits }, unconverged))
}
