//! Synthetic data under the sparse linear mixed model
//! `Y = X beta + Z u + e`.
//!
//! Genotype column `j` holds `n` independent Binomial(2, p_j) allele counts
//! with `p_j` uniform on the minor-allele-frequency range.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{
    implied_heritability, standardize, FixedEffects, GenotypeMatrix, Phenotype,
    StandardizedMatrix, TraitParams,
};
use crate::error::{Error, Result};
use crate::matrix::{axpy, ColMatrix};
use crate::par;
use crate::rng::{self, label, Rng};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimConfig {
    pub n: usize,
    pub n_snps: usize,
    pub params: TraitParams,
    /// When set, `params.sigma_e2` is replaced by the value that yields this
    /// heritability.
    pub target_eta: Option<f64>,
    pub maf_range: (f64, f64),
    /// Total fixed-effect columns including the intercept; zero means no
    /// fixed effects.
    pub fixed_effect_count: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 500,
            n_snps: 5000,
            params: TraitParams {
                q: 0.002,
                sigma_u2: 1.0,
                sigma_e2: 1.0,
            },
            target_eta: Some(0.6),
            maf_range: (0.1, 0.5),
            fixed_effect_count: 0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.n_snps < 1 {
            return Err(Error::InvalidConfig("need n >= 2 and at least one SNP"));
        }
        let (lo, hi) = self.maf_range;
        if !(lo > 0.0 && lo <= hi && hi <= 0.5) {
            return Err(Error::InvalidConfig("maf_range must satisfy 0 < lo <= hi <= 0.5"));
        }
        if let Some(eta) = self.target_eta {
            if !(eta > 0.0 && eta < 1.0) {
                return Err(Error::InvalidConfig("target_eta must lie in (0, 1)"));
            }
        }
        if self.fixed_effect_count >= self.n {
            return Err(Error::InvalidConfig("too many fixed-effect columns"));
        }
        self.params.validate()
    }

    /// Parameters with `sigma_e2` solved from `target_eta` when present.
    pub fn effective_params(&self) -> TraitParams {
        let mut p = self.params;
        if let Some(eta) = self.target_eta {
            p.sigma_e2 = solve_sigma_e(self.n_snps, p.q, p.sigma_u2, eta);
        }
        p
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub w: GenotypeMatrix,
    pub z: StandardizedMatrix,
    /// One effect per genotype column (length `N`).
    pub u: Vec<f64>,
    /// Genotype columns with a non-zero effect.
    pub support: Vec<usize>,
    pub e: Vec<f64>,
    pub x: Option<FixedEffects>,
    pub beta: Option<Vec<f64>>,
    pub y: Phenotype,
    pub params: TraitParams,
    pub eta: f64,
}

/// `sigma_e2 = N q sigma_u2 (1 - eta) / eta`
pub fn solve_sigma_e(n_snps: usize, q: f64, sigma_u2: f64, target_eta: f64) -> f64 {
    n_snps as f64 * q * sigma_u2 * (1.0 - target_eta) / target_eta
}

pub fn simulate_genotypes(n: usize, n_snps: usize, maf_range: (f64, f64), seed: u64) -> GenotypeMatrix {
    let (lo, hi) = maf_range;
    let cols: Vec<Vec<u8>> = par::map_indexed(n_snps, |j| {
        let mut rng = rng::stream(seed, &[label::GENOTYPE, j as u64]);
        let p = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        (0..n)
            .map(|_| u8::from(rng.gen_bool(p)) + u8::from(rng.gen_bool(p)))
            .collect()
    });
    let values = cols.concat();
    GenotypeMatrix::new(n, n_snps, values).expect("simulated genotypes are valid")
}

/// Draws `u_i ~ (1 - q) delta_0 + q N(0, sigma_u2)` independently.
pub fn simulate_effects(n_snps: usize, params: &TraitParams, rng: &mut Rng) -> (Vec<f64>, Vec<usize>) {
    let sd = libm::sqrt(params.sigma_u2);
    let mut u = vec![0.0; n_snps];
    let mut support = Vec::new();
    for (i, ui) in u.iter_mut().enumerate() {
        let causal = params.q >= 1.0 || rng.gen_bool(params.q);
        if causal {
            let g: f64 = StandardNormal.sample(rng);
            let v = sd * g;
            if v != 0.0 {
                *ui = v;
                support.push(i);
            }
        }
    }
    (u, support)
}

/// `Y = X beta + Z u + e` with `e_i ~ N(0, sigma_e2)`. `u` is indexed by
/// genotype column; effects on dropped columns contribute nothing.
pub fn simulate_phenotype(
    z: &StandardizedMatrix,
    u: &[f64],
    sigma_e2: f64,
    fixed: Option<(&FixedEffects, &[f64])>,
    rng: &mut Rng,
) -> Result<(Phenotype, Vec<f64>)> {
    let n = z.n();
    let n_source = z.source_columns().last().map_or(0, |&s| s + 1);
    if u.len() < n_source {
        return Err(Error::DimensionMismatch {
            what: "effect vector length",
            expected: n_source,
            found: u.len(),
        });
    }
    let mut y = vec![0.0; n];
    if let Some((x, beta)) = fixed {
        if x.n() != n {
            return Err(Error::DimensionMismatch {
                what: "fixed-effect rows",
                expected: n,
                found: x.n(),
            });
        }
        if beta.len() != x.p() {
            return Err(Error::DimensionMismatch {
                what: "fixed-effect coefficients",
                expected: x.p(),
                found: beta.len(),
            });
        }
        y = x.matrix().mul_vec(beta);
    }
    for (k, &src) in z.source_columns().iter().enumerate() {
        let uk = u[src];
        if uk != 0.0 {
            axpy(uk, z.matrix().col(k), &mut y);
        }
    }
    let sd = libm::sqrt(sigma_e2);
    let e: Vec<f64> = (0..n)
        .map(|_| {
            let g: f64 = StandardNormal.sample(rng);
            sd * g
        })
        .collect();
    for (yi, ei) in y.iter_mut().zip(&e) {
        *yi += ei;
    }
    Ok((Phenotype::new(y)?, e))
}

/// Intercept plus `count - 1` standard Gaussian columns, with standard
/// Gaussian coefficients.
pub fn simulate_fixed_effects(n: usize, count: usize, rng: &mut Rng) -> (FixedEffects, Vec<f64>) {
    let mut x = ColMatrix::zeros(n, count);
    for j in 0..count {
        for i in 0..n {
            let v = if j == 0 {
                1.0
            } else {
                StandardNormal.sample(rng)
            };
            x.set(i, j, v);
        }
    }
    let beta = (0..count).map(|_| StandardNormal.sample(rng)).collect();
    (FixedEffects::new(x).expect("finite"), beta)
}

/// Simulates effects and a phenotype on an existing standardized matrix.
/// Used by calibration, which reuses one genotype matrix across many traits.
pub fn simulate_trait(
    z: &StandardizedMatrix,
    params: &TraitParams,
    seed: u64,
) -> Result<(Phenotype, Vec<f64>, Vec<usize>)> {
    let n_source = z.source_columns().last().map_or(0, |&s| s + 1);
    let mut effects_rng = rng::stream(seed, &[label::EFFECTS]);
    let (u, support) = simulate_effects(n_source, params, &mut effects_rng);
    let mut noise_rng = rng::stream(seed, &[label::NOISE]);
    let (y, _) = simulate_phenotype(z, &u, params.sigma_e2, None, &mut noise_rng)?;
    Ok((y, u, support))
}

pub fn simulate(cfg: &SimConfig) -> Result<SimOutput> {
    cfg.validate()?;
    let params = cfg.effective_params();
    let w = simulate_genotypes(cfg.n, cfg.n_snps, cfg.maf_range, cfg.seed);
    let z = standardize(&w)?;
    let mut effects_rng = rng::stream(cfg.seed, &[label::EFFECTS]);
    let (u, support) = simulate_effects(cfg.n_snps, &params, &mut effects_rng);
    let fixed = (cfg.fixed_effect_count > 0).then(|| {
        let mut rng = rng::stream(cfg.seed, &[label::FIXED]);
        simulate_fixed_effects(cfg.n, cfg.fixed_effect_count, &mut rng)
    });
    let mut noise_rng = rng::stream(cfg.seed, &[label::NOISE]);
    let (y, e) = simulate_phenotype(
        &z,
        &u,
        params.sigma_e2,
        fixed.as_ref().map(|(x, b)| (x, b.as_slice())),
        &mut noise_rng,
    )?;
    let (x, beta) = match fixed {
        Some((x, b)) => (Some(x), Some(b)),
        None => (None, None),
    };
    Ok(SimOutput {
        eta: implied_heritability(&params, cfg.n_snps),
        w,
        z,
        u,
        support,
        e,
        x,
        beta,
        y,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_e_closed_form() {
        assert!((solve_sigma_e(100_000, 1e-3, 1.0, 0.5) - 100.0).abs() < 1e-9);
        assert!((solve_sigma_e(100_000, 1e-3, 1.0, 0.999) - 100.0 * 0.001 / 0.999).abs() < 1e-12);
        assert!((solve_sigma_e(100_000, 1e-3, 1.0, 0.999) - 0.1001).abs() < 1e-4);
        assert!((solve_sigma_e(1, 1.0, 1.0, 0.5) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn solved_sigma_e_reproduces_target() {
        for &eta in &[0.1, 0.4, 0.5, 0.6, 0.77, 0.95] {
            for &(n_snps, q, su) in &[(5000usize, 0.002, 1.0), (100_000, 1e-3, 2.5), (10, 1.0, 0.3)] {
                let p = TraitParams::new(q, su, solve_sigma_e(n_snps, q, su, eta)).unwrap();
                assert!((implied_heritability(&p, n_snps) - eta).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn genotype_moments_at_half_frequency() {
        let n = 20_000;
        let w = simulate_genotypes(n, 2, (0.5, 0.5), 11);
        for j in 0..2 {
            let c: Vec<f64> = w.column(j).iter().map(|&v| f64::from(v)).collect();
            let mean = c.iter().sum::<f64>() / n as f64;
            let var = c.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            // sd of the sample mean is sqrt(0.5 / n); of the variance, about sqrt(0.25 / n)
            assert!((mean - 1.0).abs() < 5.0 * libm::sqrt(0.5 / n as f64));
            assert!((var - 0.5).abs() < 5.0 * libm::sqrt(0.25 / n as f64));
        }
    }

    #[test]
    fn homozygous_minor_rate_is_p_squared() {
        let n = 50_000;
        let w = simulate_genotypes(n, 1, (0.1, 0.1), 3);
        let twos = w.column(0).iter().filter(|&&v| v == 2).count() as f64 / n as f64;
        assert!((twos - 0.01).abs() < 5.0 * libm::sqrt(0.01 * 0.99 / n as f64));
        assert!(w.as_slice().iter().all(|&v| v <= 2));
    }

    #[test]
    fn effect_support_matches_nonzeros() {
        let mut rng = rng::stream(5, &[label::EFFECTS]);
        let (u, s) = simulate_effects(300, &TraitParams::new(1.0, 1.0, 1.0).unwrap(), &mut rng);
        assert_eq!(s.len(), 300);
        assert_eq!(u.iter().filter(|v| **v != 0.0).count(), 300);
        let (u, s) = simulate_effects(100_000, &TraitParams::new(1e-3, 1.0, 1.0).unwrap(), &mut rng);
        assert_eq!(s.len(), u.iter().filter(|v| **v != 0.0).count());
        // Binomial(1e5, 1e-3): mean 100, sd ~ 10
        assert!((s.len() as f64 - 100.0).abs() < 50.0);
    }

    #[test]
    fn phenotype_is_exact_without_noise() {
        let cfg = SimConfig {
            n: 40,
            n_snps: 30,
            params: TraitParams::new(0.3, 1.0, 0.0).unwrap(),
            target_eta: None,
            fixed_effect_count: 2,
            seed: 9,
            ..SimConfig::default()
        };
        let out = simulate(&cfg).unwrap();
        let x = out.x.as_ref().unwrap();
        let mut expect = x.matrix().mul_vec(out.beta.as_ref().unwrap());
        for (k, &src) in out.z.source_columns().iter().enumerate() {
            axpy(out.u[src], out.z.matrix().col(k), &mut expect);
        }
        for (a, b) in out.y.values().iter().zip(&expect) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
        }
        assert!(out.e.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pure_noise_has_unit_variance() {
        let cfg = SimConfig {
            n: 4000,
            n_snps: 3,
            params: TraitParams::new(1.0, 1.0, 1.0).unwrap(),
            target_eta: None,
            seed: 1,
            ..SimConfig::default()
        };
        let out = simulate(&cfg).unwrap();
        let zero = vec![0.0; out.u.len()];
        let mut rng = rng::stream(2, &[label::NOISE]);
        let (y, _) = simulate_phenotype(&out.z, &zero, 1.0, None, &mut rng).unwrap();
        let n = y.len() as f64;
        let m = y.values().iter().sum::<f64>() / n;
        let v = y.values().iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1.0);
        assert!((v - 1.0).abs() < 5.0 * libm::sqrt(2.0 / n));
    }

    #[test]
    fn simulation_is_reproducible() {
        let cfg = SimConfig {
            n: 50,
            n_snps: 200,
            fixed_effect_count: 2,
            seed: 42,
            ..SimConfig::default()
        };
        let a = simulate(&cfg).unwrap();
        let b = simulate(&cfg).unwrap();
        assert_eq!(a.w, b.w);
        assert_eq!(a.u, b.u);
        assert_eq!(a.y, b.y);
        assert_eq!(a.x, b.x);
        let c = simulate(&SimConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a.w, c.w);
    }

    #[test]
    fn rejects_invalid_configs() {
        let base = SimConfig::default();
        assert!(SimConfig { target_eta: Some(1.0), ..base.clone() }.validate().is_err());
        assert!(SimConfig { maf_range: (0.0, 0.5), ..base.clone() }.validate().is_err());
        assert!(SimConfig { maf_range: (0.2, 0.6), ..base.clone() }.validate().is_err());
        let mut q0 = base;
        q0.params.q = 0.0;
        assert!(q0.validate().is_err());
    }
}
