//! Removal of fixed effects by projecting onto the orthogonal complement of
//! `Im(X)`.
//!
//! The projector is kept in factored form: `d` Householder reflectors from
//! a column-pivoted QR of `X`, where `d` is the numerical rank. With
//! `Q = H_1 ... H_d`, the basis `A` is the trailing `n - d` columns of `Q`,
//! so `A'v` is the tail of `Q'v` and costs `O(n d)` per vector.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::{center_normalize, FixedEffects, Phenotype, StandardizedMatrix};
use crate::error::{Error, Result};
use crate::matrix::{dot, ColMatrix};
use crate::par;

#[derive(Debug, Clone)]
struct Reflector {
    start: usize,
    v: Vec<f64>,
    beta: f64,
}

impl Reflector {
    #[inline]
    fn apply(&self, x: &mut [f64]) {
        let tail = &mut x[self.start..];
        let s = self.beta * dot(&self.v, tail);
        if s != 0.0 {
            for (t, vi) in tail.iter_mut().zip(&self.v) {
                *t -= s * vi;
            }
        }
    }
}

/// Orthonormal basis of `Im(X)^perp`, applied implicitly.
#[derive(Debug, Clone)]
pub struct Projector {
    n: usize,
    rank: usize,
    reflectors: Vec<Reflector>,
}

impl Projector {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Numerical rank `d` of the design.
    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Dimension `n - d` of the projected space.
    pub fn dim(&self) -> usize {
        self.n - self.rank
    }

    /// Identity projector (no fixed effects).
    pub fn identity(n: usize) -> Self {
        Self {
            n,
            rank: 0,
            reflectors: Vec::new(),
        }
    }

    /// `A' v`, length `n - d`.
    pub fn apply_transpose(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n);
        let mut w = v.to_vec();
        for r in &self.reflectors {
            r.apply(&mut w);
        }
        w.drain(..self.rank);
        w
    }

    /// `A w` for `w` of length `n - d`.
    pub fn apply(&self, w: &[f64]) -> Vec<f64> {
        assert_eq!(w.len(), self.dim());
        let mut v = vec![0.0; self.rank];
        v.extend_from_slice(w);
        for r in self.reflectors.iter().rev() {
            r.apply(&mut v);
        }
        v
    }

    /// The explicit `n x (n - d)` basis.
    pub fn basis(&self) -> ColMatrix {
        let m = self.dim();
        let mut a = ColMatrix::zeros(self.n, m);
        let mut e = vec![0.0; m];
        for j in 0..m {
            e[j] = 1.0;
            a.col_mut(j).copy_from_slice(&self.apply(&e));
            e[j] = 0.0;
        }
        a
    }
}

pub fn build_projector(x: &FixedEffects) -> Result<Projector> {
    let n = x.n();
    let p = x.p();
    if p == 0 {
        return Ok(Projector::identity(n));
    }
    let rank = numerical_rank(x.matrix());
    if rank >= n {
        return Err(Error::DegenerateDesign(rank));
    }
    let mut work = x.matrix().clone();
    let mut used = vec![false; p];
    let mut reflectors = Vec::with_capacity(rank);
    for k in 0..rank {
        // pivot: largest remaining column norm below row k, ties to the lowest index
        let mut best = None;
        let mut best_norm = -1.0;
        for j in (0..p).filter(|&j| !used[j]) {
            let c = &work.col(j)[k..];
            let nrm = dot(c, c);
            if nrm > best_norm {
                best_norm = nrm;
                best = Some(j);
            }
        }
        let j = best.expect("rank never exceeds column count");
        used[j] = true;
        let x_tail = &work.col(j)[k..];
        let norm = libm::sqrt(best_norm);
        let alpha = if x_tail[0] >= 0.0 { -norm } else { norm };
        let mut v = x_tail.to_vec();
        v[0] -= alpha;
        let vv = dot(&v, &v);
        if vv == 0.0 {
            return Err(Error::DegenerateDesign(k));
        }
        let r = Reflector {
            start: k,
            v,
            beta: 2.0 / vv,
        };
        for jj in (0..p).filter(|&jj| !used[jj]) {
            r.apply(work.col_mut(jj));
        }
        reflectors.push(r);
    }
    Ok(Projector {
        n,
        rank,
        reflectors,
    })
}

/// Count of singular values above `n * eps * sigma_max`.
fn numerical_rank(x: &ColMatrix) -> usize {
    let svd = x.to_nalgebra().svd(false, false);
    let sv = svd.singular_values;
    let smax = sv.iter().fold(0.0f64, |m, &s| m.max(s));
    if smax == 0.0 {
        return 0;
    }
    let tol = x.nrows().max(x.ncols()) as f64 * f64::EPSILON * smax;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Returns `(A'Y, A'Z)`. Columns of `A'Z` are rescaled to the
/// standardization convention only when `restandardize` is set.
pub fn project(
    proj: &Projector,
    y: &Phenotype,
    z: &StandardizedMatrix,
    restandardize: bool,
) -> Result<(Vec<f64>, StandardizedMatrix)> {
    if y.len() != proj.n() {
        return Err(Error::DimensionMismatch {
            what: "phenotype length",
            expected: proj.n(),
            found: y.len(),
        });
    }
    if z.n() != proj.n() {
        return Err(Error::DimensionMismatch {
            what: "genotype rows",
            expected: proj.n(),
            found: z.n(),
        });
    }
    let y_proj = proj.apply_transpose(y.values());
    let m = proj.dim();
    let src = z.matrix();
    let mut data = vec![0.0; m * src.ncols()];
    par::for_each_chunk_mut(&mut data, m, |j, c| {
        let mut pc = proj.apply_transpose(src.col(j));
        if restandardize {
            center_normalize(&mut pc);
        }
        c.copy_from_slice(&pc);
    });
    let out = ColMatrix::from_col_major(m, src.ncols(), data)?;
    Ok((y_proj, z.with_matrix(out)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, label};
    use rand_distr::{Distribution, StandardNormal};

    fn fixed(rows: &[&[f64]]) -> FixedEffects {
        FixedEffects::new(ColMatrix::from_rows(rows).unwrap()).unwrap()
    }

    fn random_matrix(n: usize, p: usize, seed: u64) -> ColMatrix {
        let mut rng = rng::stream(seed, &[label::FIXED]);
        let data = (0..n * p).map(|_| StandardNormal.sample(&mut rng)).collect();
        ColMatrix::from_col_major(n, p, data).unwrap()
    }

    fn max_abs_dev(a: &ColMatrix, f: impl Fn(usize, usize) -> f64) -> f64 {
        let mut m = 0.0f64;
        for j in 0..a.ncols() {
            for i in 0..a.nrows() {
                m = m.max((a.get(i, j) - f(i, j)).abs());
            }
        }
        m
    }

    #[test]
    fn intercept_projection_centers() {
        let x = fixed(&[&[1.0], &[1.0], &[1.0], &[1.0]]);
        let p = build_projector(&x).unwrap();
        assert_eq!(p.rank(), 1);
        let y = [3.0, -1.0, 4.0, 2.0];
        let proj = p.apply_transpose(&y);
        let mean = 2.0;
        let centered: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
        assert!((dot(&proj, &proj) - centered).abs() < 1e-12);
    }

    #[test]
    fn duplicate_columns_do_not_add_rank() {
        let x1 = fixed(&[&[1.0, 1.0], &[2.0, 2.0], &[0.5, 0.5], &[-1.0, -1.0], &[3.0, 3.0]]);
        let x2 = fixed(&[&[1.0], &[2.0], &[0.5], &[-1.0], &[3.0]]);
        let p1 = build_projector(&x1).unwrap();
        let p2 = build_projector(&x2).unwrap();
        assert_eq!(p1.rank(), 1);
        let a1 = p1.basis();
        let a2 = p2.basis();
        // same projector AA'
        for i in 0..5 {
            for k in 0..5 {
                let s1: f64 = (0..4).map(|j| a1.get(i, j) * a1.get(k, j)).sum();
                let s2: f64 = (0..4).map(|j| a2.get(i, j) * a2.get(k, j)).sum();
                assert!((s1 - s2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn projector_identities_hold() {
        let (n, p) = (10, 3);
        let xm = random_matrix(n, p, 1);
        let proj = build_projector(&FixedEffects::new(xm.clone()).unwrap()).unwrap();
        assert_eq!(proj.rank(), 3);
        let a = proj.basis();
        // A'A = I
        let ata = |i: usize, j: usize| dot(a.col(i), a.col(j));
        let mut dev = 0.0f64;
        for i in 0..a.ncols() {
            for j in 0..a.ncols() {
                dev = dev.max((ata(i, j) - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        assert!(dev <= 1e-10);
        // AA' = I - X (X'X)^-1 X'
        let xn = xm.to_nalgebra();
        let px = nalgebra::DMatrix::<f64>::identity(n, n)
            - &xn * (xn.transpose() * &xn).try_inverse().unwrap() * xn.transpose();
        let an = a.to_nalgebra();
        let aat = ColMatrix::from_nalgebra(&(&an * an.transpose()));
        assert!(max_abs_dev(&aat, |i, j| px[(i, j)]) <= 1e-8);
        // A'X v is negligible
        let mut rng = rng::stream(2, &[label::FIXED]);
        for _ in 0..100 {
            let v: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
            let xv = xm.mul_vec(&v);
            let r = proj.apply_transpose(&xv);
            assert!(libm::sqrt(dot(&r, &r)) <= 1e-8 * libm::sqrt(dot(&xv, &xv)));
        }
    }

    #[test]
    fn full_rank_design_is_degenerate() {
        let x = FixedEffects::new(random_matrix(4, 4, 3)).unwrap();
        assert!(matches!(build_projector(&x), Err(Error::DegenerateDesign(4))));
    }

    #[test]
    fn projected_norm_matches_quadratic_form() {
        let (n, p) = (12, 2);
        let xm = random_matrix(n, p, 4);
        let proj = build_projector(&FixedEffects::new(xm.clone()).unwrap()).unwrap();
        let y = random_matrix(n, 1, 5).col(0).to_vec();
        let yp = proj.apply_transpose(&y);
        let xn = xm.to_nalgebra();
        let yn = nalgebra::DVector::from_column_slice(&y);
        let px = nalgebra::DMatrix::<f64>::identity(n, n)
            - &xn * (xn.transpose() * &xn).try_inverse().unwrap() * xn.transpose();
        let quad = (yn.transpose() * px * &yn)[(0, 0)];
        assert!((dot(&yp, &yp) - quad).abs() <= 1e-8 * quad);
        // a response inside Im(X) vanishes
        let inside = xm.mul_vec(&[0.7, -2.0]);
        let r = proj.apply_transpose(&inside);
        assert!(libm::sqrt(dot(&r, &r)) <= 1e-8 * libm::sqrt(dot(&inside, &inside)));
    }

    #[test]
    fn empty_design_is_identity() {
        let x = FixedEffects::new(ColMatrix::zeros(5, 0)).unwrap();
        let p = build_projector(&x).unwrap();
        assert_eq!(p.rank(), 0);
        let y = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(p.apply_transpose(&y), y.to_vec());
    }

    #[test]
    fn project_checks_dimensions() {
        let p = Projector::identity(3);
        let z = StandardizedMatrix::from_matrix(ColMatrix::zeros(3, 2));
        let y = Phenotype::new(vec![1.0, 2.0]).unwrap();
        assert!(project(&p, &y, &z, false).is_err());
    }
}
