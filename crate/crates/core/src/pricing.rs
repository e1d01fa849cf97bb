//! Real-world pricing: closed forms for the stylized MMM (zero-coupon bond,
//! index put), Monte Carlo estimates, and the default/recovery overlay with
//! its recovery martingale Psi.

use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{ncx2_cdf, ncx2_cdf_continuous_part, NcChiSqParams};
use crate::error::{invalid, Error, Result};
use crate::models::StylizedMmmParams;
use crate::regression::{conditional_expectation, BasisConfig};
use crate::stats::{excess_kurtosis, mean_stderr, MeanEstimate};
use crate::stochastic::{domain, PathBundle, RngStream, TimeGrid};

/// Benchmarked zero-coupon bond quote.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BondQuote {
    pub t: f64,
    pub maturity: f64,
    pub p_hat: f64,
    pub f_t: f64,
}

/// `f(t) = 2 beta / (alpha0 (e^{beta T} - e^{beta t}))`.
pub fn bond_f(params: &StylizedMmmParams, t: f64, maturity: f64) -> Result<f64> {
    if !(t < maturity) {
        return invalid(format!("need t < T, got t = {t}, T = {maturity}"));
    }
    let gap = (params.beta * t).exp() * (params.beta * (maturity - t)).exp_m1();
    Ok(2.0 * params.beta / (params.alpha0 * gap))
}

/// `s (1 - e^{-f/s})`, accurate for large and small `f/s`.
fn saturating(s: f64, f: f64) -> f64 {
    -s * (-f / s).exp_m1()
}

/// `P_hat(t,T) = e^{-rT} (1 - exp(-f(t) / S_hat0_t)) S_hat0_t`. The factor
/// `e^{-rT}` turns the benchmarked savings account into the benchmarked unit
/// payoff; it is one at `r = 0`.
pub fn zcb_price(t: f64, s_hat_0: f64, params: &StylizedMmmParams, maturity: f64) -> Result<BondQuote> {
    params.validate()?;
    if !(s_hat_0 > 0.0) {
        return invalid(format!("benchmarked savings account must be positive, got {s_hat_0}"));
    }
    let f_t = bond_f(params, t, maturity)?;
    let p_hat = (-params.r * maturity).exp() * saturating(s_hat_0, f_t);
    Ok(BondQuote { t, maturity, p_hat, f_t })
}

/// Invert the bond formula for `S_hat0_t`. The map `s -> s (1 - e^{-f/s})`
/// is increasing with supremum `f`.
pub fn s_hat_from_bond(p_hat: f64, t: f64, params: &StylizedMmmParams, maturity: f64) -> Result<f64> {
    let f = bond_f(params, t, maturity)?;
    let target = p_hat * (params.r * maturity).exp();
    if !(target > 0.0 && target < f) {
        return invalid(format!("bond price {p_hat} outside the attainable range (0, {})", f * (-params.r * maturity).exp()));
    }
    // Safeguarded Newton on g(s) - target with bracket [lo, hi].
    let g = |s: f64| saturating(s, f) - target;
    let dg = |s: f64| {
        let x = f / s;
        -(-x).exp_m1() - x * (-x).exp()
    };
    let (mut lo, mut hi) = (target, target);
    while g(hi) < 0.0 {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Numerical("bond inversion failed to bracket".into()));
        }
    }
    while g(lo) > 0.0 {
        lo *= 0.5;
    }
    let mut s = 0.5 * (lo + hi);
    for _ in 0..200 {
        let v = g(s);
        if v == 0.0 {
            return Ok(s);
        }
        if v < 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        let d = dg(s);
        let mut next = s - v / d;
        if !(next > lo && next < hi) || !d.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - s).abs() <= 1e-15 * s {
            return Ok(next);
        }
        s = next;
    }
    Ok(s)
}

/// Closed-form terms of the put. `d1 = K e^{-rT} / (s(T) - s(t))` and
/// `l2 = Z_t / (s(T) - s(t))`, the BESQ^4 noncentrality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PutClosedFormTerms {
    pub d1: f64,
    pub l2: f64,
    pub strike: f64,
    pub maturity: f64,
}

pub fn put_terms(t: f64, strike: f64, s_hat_0: f64, params: &StylizedMmmParams, maturity: f64) -> Result<PutClosedFormTerms> {
    params.validate()?;
    if !(t < maturity) {
        return invalid(format!("need t < T, got t = {t}, T = {maturity}"));
    }
    if !(strike >= 0.0) || !strike.is_finite() {
        return invalid(format!("strike must be nonnegative, got {strike}"));
    }
    if !(s_hat_0 > 0.0) {
        return invalid(format!("benchmarked savings account must be positive, got {s_hat_0}"));
    }
    let ds = params.clock_increment(t, maturity);
    Ok(PutClosedFormTerms {
        d1: strike * (-params.r * maturity).exp() / ds,
        l2: 1.0 / (s_hat_0 * ds),
        strike,
        maturity,
    })
}

/// Benchmarked put `E_t[(K P_hat(T,T) - 1)^+]`:
/// `c s (F(d1; 0, l2) - e^{-l2/2}) - F(d1; 4, l2)` with `c = K e^{-rT}` and
/// `s = S_hat0_t`.
pub fn put_price(t: f64, strike: f64, s_hat_0: f64, params: &StylizedMmmParams, maturity: f64) -> Result<f64> {
    let terms = put_terms(t, strike, s_hat_0, params, maturity)?;
    if strike == 0.0 {
        return Ok(0.0);
    }
    let c = strike * (-params.r * maturity).exp();
    let f0 = ncx2_cdf_continuous_part(terms.d1, &NcChiSqParams::new(0.0, terms.l2)?)?;
    let f4 = ncx2_cdf(terms.d1, &NcChiSqParams::new(4.0, terms.l2)?)?;
    Ok((c * s_hat_0 * f0 - f4).max(0.0))
}

/// Put price as a function of the bond price.
pub fn put_price_from_bond(t: f64, strike: f64, p_hat: f64, params: &StylizedMmmParams, maturity: f64) -> Result<f64> {
    let s = s_hat_from_bond(p_hat, t, params, maturity)?;
    put_price(t, strike, s, params, maturity)
}

/// Monte Carlo price with its standard error and the per-path conditional
/// values at the pricing node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McPrice {
    pub estimate: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub excess_kurtosis: f64,
    pub conditional: Vec<f64>,
    pub ridge_used: bool,
}

/// Excess kurtosis above which a payoff sample is flagged as unstable.
pub const KURTOSIS_WARNING: f64 = 1e3;

/// `E[H | F_t]` with `H = payoff(terminal values of channels)`. At node 0 the
/// plain mean; later by regression on the `state` channels at `t_index`.
pub fn real_world_price_mc<F>(
    paths: &PathBundle,
    channels: &[&str],
    payoff: F,
    t_index: usize,
    state: &[&str],
    basis: BasisConfig,
) -> Result<McPrice>
where
    F: Fn(&[f64]) -> f64,
{
    let n = paths.grid.n_nodes();
    if t_index >= n {
        return invalid(format!("t_index {t_index} outside grid of {n} nodes"));
    }
    let terminal: Vec<Vec<f64>> = channels
        .iter()
        .map(|c| paths.column(c, n - 1))
        .collect::<Result<_>>()?;
    let mut buf = vec![0.0; channels.len()];
    let h: Vec<f64> = (0..paths.n_paths)
        .map(|p| {
            for (b, col) in buf.iter_mut().zip(&terminal) {
                *b = col[p];
            }
            payoff(&buf)
        })
        .collect();
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite payoff".into()));
    }
    let est = mean_stderr(&h);
    let kurt = excess_kurtosis(&h);
    let (conditional, ridge_used) = if t_index == 0 || state.is_empty() {
        (vec![est.mean; h.len()], false)
    } else {
        let cols: Vec<Vec<f64>> = state.iter().map(|c| paths.column(c, t_index)).collect::<Result<_>>()?;
        let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
        conditional_expectation(&refs, &h, basis)?
    };
    Ok(McPrice {
        estimate: est.mean,
        stderr: est.stderr,
        n_paths: h.len(),
        excess_kurtosis: kurt,
        conditional,
        ridge_used,
    })
}

/// Recovery fraction `h(s)` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Recovery {
    Constant { value: f64 },
    /// Linear interpolation from `start` at 0 to `end` at the maturity.
    Linear { start: f64, end: f64 },
}

impl Recovery {
    pub fn eval(&self, s: f64, maturity: f64) -> f64 {
        match *self {
            Recovery::Constant { value } => value,
            Recovery::Linear { start, end } => start + (end - start) * (s / maturity).clamp(0.0, 1.0),
        }
    }

    fn bounds(&self) -> (f64, f64) {
        match *self {
            Recovery::Constant { value } => (value, value),
            Recovery::Linear { start, end } => (start.min(end), start.max(end)),
        }
    }
}

/// Constant default intensity with a recovery fraction paid at maturity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefaultModel {
    pub lambda: f64,
    pub recovery: Recovery,
    pub maturity: f64,
}

const QUAD_POINTS: usize = 32;
const QUAD_PIECES: usize = 8;

impl DefaultModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return invalid(format!("default intensity must be nonnegative, got {}", self.lambda));
        }
        if !(self.maturity > 0.0) {
            return invalid(format!("maturity must be positive, got {}", self.maturity));
        }
        let (lo, hi) = self.recovery.bounds();
        if !(lo >= 0.0 && hi <= 1.0) {
            return invalid(format!("recovery must lie in [0, 1], got range [{lo}, {hi}]"));
        }
        Ok(())
    }

    pub fn h(&self, s: f64) -> f64 {
        self.recovery.eval(s, self.maturity)
    }

    /// `F_t = P(tau <= t)`.
    pub fn cdf(&self, t: f64) -> f64 {
        -(-self.lambda * t).exp_m1()
    }

    /// `G(s) = int_s^T h(u) lambda e^{-lambda (u - s)} du`.
    pub fn recovery_integral(&self, s: f64) -> f64 {
        let tm = self.maturity;
        if s >= tm || self.lambda == 0.0 {
            return 0.0;
        }
        let l = self.lambda;
        match self.recovery {
            Recovery::Constant { value } => -value * (-l * (tm - s)).exp_m1(),
            Recovery::Linear { .. } => {
                let quad = GaussLegendre::new(NonZeroUsize::new(QUAD_POINTS).unwrap());
                let w = (tm - s) / QUAD_PIECES as f64;
                (0..QUAD_PIECES)
                    .map(|k| {
                        let a = s + k as f64 * w;
                        quad.integrate(a, a + w, |u| self.h(u) * l * (-l * (u - s)).exp())
                    })
                    .sum()
            }
        }
    }

    /// `E[g(tau)]` with `g(x) = h(x ^ T) 1_{x < T}`.
    pub fn expected_recovery(&self) -> f64 {
        self.recovery_integral(0.0)
    }

    /// Closed form of `Psi_t = E[1 + (h(tau ^ T) - 1) D_T | F_t]`.
    pub fn psi(&self, t: f64, tau: f64) -> f64 {
        if tau <= t {
            return self.h(tau.min(self.maturity));
        }
        if self.lambda == 0.0 || t >= self.maturity {
            return 1.0;
        }
        let survival = (-self.lambda * (self.maturity - t)).exp();
        match self.recovery {
            // h + (1 - h) e^{-lambda (T - t)}, exact for h = 0 and h = 1
            Recovery::Constant { value } => value + (1.0 - value) * survival,
            Recovery::Linear { .. } => survival + self.recovery_integral(t),
        }
    }

    /// Integrand of the compensated-jump representation of Psi:
    /// `k(s) = h(s) - G(s) - e^{-lambda (T - s)}`.
    pub fn psi_integrand(&self, s: f64) -> f64 {
        self.h(s) - self.recovery_integral(s) - (-self.lambda * (self.maturity - s)).exp()
    }

    /// `Psi_0 + int_0^t k dQ` with `Q_t = D_t - lambda (tau ^ t)`.
    pub fn psi_by_representation(&self, t: f64, tau: f64) -> f64 {
        let psi0 = self.expected_recovery() + (1.0 - self.cdf(self.maturity));
        let upper = tau.min(t).min(self.maturity);
        let compensator = if self.lambda == 0.0 || upper <= 0.0 {
            0.0
        } else {
            match self.recovery {
                Recovery::Constant { value } => {
                    // k(s) = (value - 1) e^{-lambda (T - s)}
                    let tm = self.maturity;
                    (value - 1.0) * ((-self.lambda * (tm - upper)).exp() - (-self.lambda * tm).exp())
                }
                Recovery::Linear { .. } => {
                    let quad = GaussLegendre::new(NonZeroUsize::new(QUAD_POINTS).unwrap());
                    let w = upper / QUAD_PIECES as f64;
                    self.lambda
                        * (0..QUAD_PIECES)
                            .map(|k| {
                                let a = k as f64 * w;
                                quad.integrate(a, a + w, |s| self.psi_integrand(s))
                            })
                            .sum::<f64>()
                }
            }
        };
        let jump = if tau <= t && tau < self.maturity { self.psi_integrand(tau) } else { 0.0 };
        psi0 + jump - compensator
    }
}

/// Default times and indicator channel.
#[derive(Debug, Clone, PartialEq)]
pub struct DefaultSample {
    pub tau: Vec<f64>,
    /// Row-major `n_paths x n_nodes` values of `D_t = 1_{tau <= t}`.
    pub indicator: Vec<f64>,
}

/// `tau ~ Exp(lambda)` drawn from each path's default stream, independent of
/// all Wiener streams.
pub fn default_times(model: &DefaultModel, grid: &TimeGrid, n_paths: usize, seed: u64) -> Result<DefaultSample> {
    model.validate()?;
    let times = grid.times();
    let mut tau = Vec::with_capacity(n_paths);
    let mut indicator = Vec::with_capacity(n_paths * times.len());
    for p in 0..n_paths {
        let t = if model.lambda == 0.0 {
            f64::INFINITY
        } else {
            let mut rng = RngStream::for_path(seed, domain::DEFAULT, p).rng();
            let u: f64 = 1.0 - rng.random::<f64>();
            -u.ln() / model.lambda
        };
        tau.push(t);
        indicator.extend(times.iter().map(|&s| if t <= s { 1.0 } else { 0.0 }));
    }
    Ok(DefaultSample { tau, indicator })
}

/// Insert the default indicator into a bundle.
pub fn attach_defaults(paths: &mut PathBundle, sample: &DefaultSample) -> Result<()> {
    paths.insert(crate::stochastic::channel::DEFAULT, sample.indicator.clone(), true)
}

/// Psi along one path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsiPath {
    pub values: Vec<f64>,
    /// First node with `tau <= t`, if any.
    pub jump_index: Option<usize>,
}

pub fn psi_process(model: &DefaultModel, tau: f64, grid: &TimeGrid) -> Result<PsiPath> {
    model.validate()?;
    let times = grid.times();
    let values: Vec<f64> = times.iter().map(|&t| model.psi(t, tau)).collect();
    if let Some(i) = values.iter().position(|v| !(*v >= -1e-15 && *v <= 1.0 + 1e-15)) {
        return Err(Error::Numerical(format!("Psi left [0, 1] at node {i}: {}", values[i])));
    }
    let jump_index = times.iter().position(|&t| tau <= t);
    Ok(PsiPath { values, jump_index })
}

/// Compensated default process `Q_t = D_t - lambda (tau ^ t)` at the nodes.
pub fn compensated_default(model: &DefaultModel, tau: f64, grid: &TimeGrid) -> Vec<f64> {
    grid.times()
        .iter()
        .map(|&t| {
            let d = if tau <= t { 1.0 } else { 0.0 };
            d - model.lambda * tau.min(t)
        })
        .collect()
}

/// Benchmarked defaultable put `p_hat * Psi_t`.
pub fn defaultable_put_price(
    t: f64,
    strike: f64,
    s_hat_0: f64,
    params: &StylizedMmmParams,
    maturity: f64,
    psi: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&psi) {
        return invalid(format!("Psi must lie in [0, 1], got {psi}"));
    }
    Ok(put_price(t, strike, s_hat_0, params, maturity)? * psi)
}

/// Mean of a per-path quantity.
pub fn mc_mean(values: &[f64]) -> MeanEstimate {
    mean_stderr(values)
}
