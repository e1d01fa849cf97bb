//! Non-central chi-square distribution: CDF by Poisson mixture of central
//! chi-square CDFs, and exact sampling.

use rand_distr::{ChiSquared, Distribution, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{invalid, Error, Result};

/// Default truncation tolerance for the mixture series.
pub const SERIES_TOL: f64 = 1e-14;
/// Hard cap on the number of mixture terms.
pub const MAX_TERMS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NcChiSqParams {
    pub dof: f64,
    pub noncentrality: f64,
}

impl NcChiSqParams {
    pub fn new(dof: f64, noncentrality: f64) -> Result<Self> {
        if !(dof >= 0.0) || !dof.is_finite() {
            return invalid(format!("degrees of freedom must be >= 0, got {dof}"));
        }
        if !(noncentrality >= 0.0) || !noncentrality.is_finite() {
            return invalid(format!("noncentrality must be >= 0, got {noncentrality}"));
        }
        Ok(Self { dof, noncentrality })
    }

    /// Mass of the atom at zero (nonzero only for `dof == 0`).
    pub fn atom(&self) -> f64 {
        if self.dof == 0.0 {
            (-0.5 * self.noncentrality).exp()
        } else {
            0.0
        }
    }
}

/// Central chi-square CDF with `k >= 0` degrees of freedom; `k = 0` is the
/// unit step at zero.
pub fn chi2_cdf(x: f64, k: f64) -> f64 {
    if x < 0.0 {
        return 0.0;
    }
    if k == 0.0 {
        return 1.0;
    }
    if x == 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    gamma_lr(0.5 * k, 0.5 * x)
}

/// Poisson(mu) probability of `j`, in log space.
fn poisson_ln_weight(j: usize, mu: f64) -> f64 {
    if mu == 0.0 {
        return if j == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    -mu + j as f64 * mu.ln() - ln_gamma(j as f64 + 1.0)
}

/// `sum_{j >= first} w_j F_{dof + 2j}(x)` with Poisson(l/2) weights `w_j`.
fn mixture_sum(x: f64, p: &NcChiSqParams, first: usize, tol: f64) -> Result<f64> {
    let mu = 0.5 * p.noncentrality;
    let mut sum = 0.0;
    let mut mass = 0.0;
    for j in 0..MAX_TERMS {
        let w = poisson_ln_weight(j, mu).exp();
        mass += w;
        if j >= first {
            let f = chi2_cdf(x, p.dof + 2.0 * j as f64);
            sum += w * f;
            // Terms ahead are bounded by (remaining mass) * F_{dof+2j}(x),
            // since the central CDF decreases in the degrees of freedom.
            let remaining = (1.0 - mass).max(0.0);
            if remaining * f <= tol * sum.max(f64::MIN_POSITIVE) || remaining <= tol * 1e-2 {
                return Ok(sum);
            }
            if f == 0.0 && j as f64 > mu {
                return Ok(sum);
            }
        }
        if mu == 0.0 && j >= first {
            return Ok(sum);
        }
        // Past the mode a geometric bound on the remaining weights is tighter
        // than 1 - mass, which loses accuracy to rounding.
        if j as f64 > mu + 1.0 {
            let ratio = mu / (j as f64 + 1.0);
            if w * ratio / (1.0 - ratio) <= tol * sum.max(f64::MIN_POSITIVE) {
                return Ok(sum);
            }
        }
    }
    Err(Error::SeriesCap { terms: MAX_TERMS })
}

/// `P(Y <= x)` for `Y ~ chi'^2(dof, noncentrality)`.
pub fn ncx2_cdf(x: f64, params: &NcChiSqParams) -> Result<f64> {
    ncx2_cdf_tol(x, params, SERIES_TOL)
}

pub fn ncx2_cdf_tol(x: f64, params: &NcChiSqParams, tol: f64) -> Result<f64> {
    let p = NcChiSqParams::new(params.dof, params.noncentrality)?;
    if x < 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    Ok(mixture_sum(x, &p, 0, tol)?.min(1.0))
}

/// The CDF minus its atom at zero, summed directly so that no cancellation
/// occurs when the atom dominates.
pub fn ncx2_cdf_continuous_part(x: f64, params: &NcChiSqParams) -> Result<f64> {
    let p = NcChiSqParams::new(params.dof, params.noncentrality)?;
    if x <= 0.0 {
        return Ok(0.0);
    }
    if p.dof > 0.0 {
        return ncx2_cdf(x, &p);
    }
    if p.noncentrality == 0.0 {
        return Ok(0.0);
    }
    mixture_sum(x, &p, 1, SERIES_TOL)
}

/// Exact draw by the Poisson mixture `chi^2(dof + 2N)`, `N ~ Poisson(l/2)`.
pub fn ncx2_sample<R: rand::Rng + ?Sized>(params: &NcChiSqParams, rng: &mut R) -> Result<f64> {
    let p = NcChiSqParams::new(params.dof, params.noncentrality)?;
    if p.dof == 0.0 && p.noncentrality == 0.0 {
        return invalid("degenerate non-central chi-square: dof and noncentrality both zero");
    }
    let n = if p.noncentrality > 0.0 {
        let pois = Poisson::new(0.5 * p.noncentrality)
            .map_err(|e| Error::InvalidParameter(format!("Poisson parameter: {e}")))?;
        pois.sample(rng)
    } else {
        0.0
    };
    let k = p.dof + 2.0 * n;
    if k == 0.0 {
        return Ok(0.0);
    }
    let chi = ChiSquared::new(k).map_err(|e| Error::InvalidParameter(format!("chi-square dof: {e}")))?;
    Ok(chi.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_statistic, mean_stderr};
    use crate::stochastic::RngStream;
    use gauss_quad::GaussLegendre;
    use proptest::prelude::*;
    use std::num::NonZeroUsize;

    fn p(dof: f64, l: f64) -> NcChiSqParams {
        NcChiSqParams::new(dof, l).unwrap()
    }

    /// Central chi-square density integrated by composite Gauss-Legendre.
    fn chi2_cdf_by_quadrature(x: f64, k: f64) -> f64 {
        let quad = GaussLegendre::new(NonZeroUsize::new(40).unwrap());
        let h = 0.5 * k;
        let lg = ln_gamma(h);
        let dens = |y: f64| {
            if y <= 0.0 {
                0.0
            } else {
                ((h - 1.0) * y.ln() - 0.5 * y - h * 2f64.ln() - lg).exp()
            }
        };
        let pieces = 200;
        let w = x / pieces as f64;
        (0..pieces)
            .map(|i| quad.integrate(i as f64 * w, (i + 1) as f64 * w, dens))
            .sum()
    }

    #[test]
    fn support_and_atom() {
        assert_eq!(ncx2_cdf(-1.0, &p(4.0, 3.0)).unwrap(), 0.0);
        assert_eq!(ncx2_cdf(-1e-300, &p(0.0, 3.0)).unwrap(), 0.0);
        let a = ncx2_cdf(0.0, &p(0.0, 2.0)).unwrap();
        assert!((a - (-1.0f64).exp()).abs() < 1e-12);
        assert!((p(0.0, 2.0).atom() - 0.36787944117144233).abs() < 1e-16);
        assert_eq!(ncx2_cdf_continuous_part(0.0, &p(0.0, 2.0)).unwrap(), 0.0);
        assert!(NcChiSqParams::new(-1.0, 0.0).is_err());
        assert!(NcChiSqParams::new(1.0, -0.5).is_err());
    }

    #[test]
    fn central_quantile_fixture() {
        // Oracle: quadrature of the chi-square(4) density.
        let oracle = chi2_cdf_by_quadrature(9.48773, 4.0);
        let v = ncx2_cdf(9.48773, &p(4.0, 0.0)).unwrap();
        assert!((v - oracle).abs() < 1e-10);
        assert!((v - 0.95).abs() < 1e-6, "{v}");
    }

    #[test]
    fn mixture_terms_match_quadrature() {
        for &(x, nu, l) in &[(3.0, 4.0, 3.0), (10.0, 2.0, 7.5), (0.8, 0.0, 1.2)] {
            let mu: f64 = 0.5 * l;
            let mut direct = if nu == 0.0 { (-mu).exp() } else { 0.0 };
            for j in 0..200usize {
                let k = nu + 2.0 * j as f64;
                if k == 0.0 {
                    continue;
                }
                let w = poisson_ln_weight(j, mu).exp();
                direct += w * chi2_cdf_by_quadrature(x, k);
            }
            let v = ncx2_cdf(x, &p(nu, l)).unwrap();
            assert!((v - direct).abs() < 1e-10, "({x},{nu},{l}): {v} vs {direct}");
        }
    }

    #[test]
    fn limits_at_infinity() {
        for &(nu, l) in &[(0.0, 5.0), (2.0, 0.0), (4.0, 50.0)] {
            assert!(ncx2_cdf(-1e6, &p(nu, l)).unwrap().abs() < 1e-10);
            assert!((ncx2_cdf(1e6, &p(nu, l)).unwrap() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn tolerance_stability_on_lattice() {
        for &nu in &[0.0, 2.0, 4.0] {
            for li in 0..=10 {
                let l = 5.0 * li as f64;
                for xi in 0..=20 {
                    let x = 5.0 * xi as f64;
                    let a = ncx2_cdf_tol(x, &p(nu, l), SERIES_TOL).unwrap();
                    let b = ncx2_cdf_tol(x, &p(nu, l), 10.0 * SERIES_TOL).unwrap();
                    assert!((a - b).abs() <= 1e-10, "({x},{nu},{l})");
                }
            }
        }
    }

    #[test]
    fn continuous_part_plus_atom() {
        for &(x, l) in &[(0.3, 1.0), (5.0, 20.0), (1e-3, 40.0)] {
            let a = ncx2_cdf(x, &p(0.0, l)).unwrap();
            let b = ncx2_cdf_continuous_part(x, &p(0.0, l)).unwrap() + p(0.0, l).atom();
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn sample_means() {
        let mut rng = RngStream::new(3, 0).rng();
        let a: Vec<f64> = (0..1_000_000).map(|_| ncx2_sample(&p(4.0, 0.0), &mut rng).unwrap()).collect();
        assert!(mean_stderr(&a).z_score(4.0).abs() < 4.0);
        let b: Vec<f64> = (0..1_000_000).map(|_| ncx2_sample(&p(4.0, 3.0), &mut rng).unwrap()).collect();
        assert!(mean_stderr(&b).z_score(7.0).abs() < 4.0);
        assert!(ncx2_sample(&p(0.0, 0.0), &mut rng).is_err());
    }

    #[test]
    fn sample_ks_against_cdf() {
        let mut rng = RngStream::new(4, 0).rng();
        let s: Vec<f64> = (0..100_000).map(|_| ncx2_sample(&p(4.0, 3.0), &mut rng).unwrap()).collect();
        let d = ks_statistic(&s, |x| ncx2_cdf(x, &p(4.0, 3.0)).unwrap());
        assert!(d < 0.01, "KS {d}");
    }

    proptest! {
        #[test]
        fn cdf_monotone(x in 0.0f64..100.0, dx in 0.0f64..10.0, nu in prop::sample::select(vec![0.0, 1.0, 2.0, 4.0, 7.5]), l in 0.0f64..50.0) {
            let a = ncx2_cdf(x, &p(nu, l)).unwrap();
            let b = ncx2_cdf(x + dx, &p(nu, l)).unwrap();
            prop_assert!(b >= a - 1e-14);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn zero_dof_atom(l in 0.0f64..60.0) {
            let a = ncx2_cdf(0.0, &p(0.0, l)).unwrap();
            prop_assert!((a - (-0.5 * l).exp()).abs() < 1e-12);
        }
    }
}
