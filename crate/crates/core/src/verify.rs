//! Statistical verification of supermartingale and martingale properties,
//! the strict local martingale defect, the cost identity under a change of
//! numeraire, and orthogonality preservation.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::models::{benchmarked_loadings, market_price_of_risk, stylized_path, AssetCoefficients, StylizedMmmParams};
use crate::pricing::{bond_f, zcb_price};
use crate::hedging::psi_integrand_stylized;
use crate::stats::{mean_stderr, MeanEstimate};
use crate::stochastic::{channel, domain, PathBundle, RngStream, TimeGrid};

/// Two-sided threshold for drift and orthogonality tests.
pub const Z_THRESHOLD: f64 = 4.0;
/// Threshold for quantitative matches against an oracle.
pub const MATCH_THRESHOLD: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftTest {
    /// Mean increments are zero.
    TwoSided,
    /// Mean increments are not positive.
    Supermartingale,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NodeDrift {
    pub t: f64,
    pub mean: f64,
    pub stderr: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftReport {
    pub test: DriftTest,
    pub nodes: Vec<NodeDrift>,
    pub max_abs_z: f64,
    pub max_z: f64,
    /// Sum over steps of the mean increments.
    pub cumulative_drift: f64,
    pub cumulative_stderr: f64,
    pub pass: bool,
}

/// Per-step cross-path drift statistics of a row-major channel.
pub fn drift_report(values: &[f64], n_paths: usize, grid: &TimeGrid, test: DriftTest) -> Result<DriftReport> {
    let nn = grid.n_nodes();
    if values.len() != n_paths * nn {
        return Err(Error::ShapeMismatch(format!("{} values for {n_paths} paths x {nn} nodes", values.len())));
    }
    if n_paths < 2 {
        return invalid("drift tests need at least two paths");
    }
    let nodes: Vec<NodeDrift> = (0..grid.n_steps)
        .into_par_iter()
        .map(|i| {
            let inc: Vec<f64> = (0..n_paths).map(|p| values[p * nn + i + 1] - values[p * nn + i]).collect();
            let e = mean_stderr(&inc);
            NodeDrift { t: grid.time(i), mean: e.mean, stderr: e.stderr, z: e.z_score(0.0) }
        })
        .collect();
    let max_abs_z = nodes.iter().map(|n| n.z.abs()).fold(0.0, f64::max);
    let max_z = nodes.iter().map(|n| n.z).fold(f64::NEG_INFINITY, f64::max);
    let total: Vec<f64> = (0..n_paths).map(|p| values[p * nn + nn - 1] - values[p * nn]).collect();
    let tot = mean_stderr(&total);
    let pass = match test {
        DriftTest::TwoSided => max_abs_z <= Z_THRESHOLD,
        DriftTest::Supermartingale => max_z <= Z_THRESHOLD,
    };
    Ok(DriftReport {
        test,
        nodes,
        max_abs_z,
        max_z,
        cumulative_drift: tot.mean,
        cumulative_stderr: tot.stderr,
        pass,
    })
}

/// One-sided test that a nonnegative channel has no positive drift.
pub fn supermartingale_check(paths: &PathBundle, name: &str) -> Result<DriftReport> {
    let v = paths.channel(name)?;
    if v.iter().any(|x| *x < 0.0) {
        return invalid(format!("channel `{name}` must be nonnegative"));
    }
    drift_report(v, paths.n_paths, &paths.grid, DriftTest::Supermartingale)
}

/// Two-sided zero-drift test.
pub fn martingale_check(paths: &PathBundle, name: &str) -> Result<DriftReport> {
    drift_report(paths.channel(name)?, paths.n_paths, &paths.grid, DriftTest::TwoSided)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StrictLocalMartingaleReport {
    pub lambda_t: MeanEstimate,
    /// `1 - e^{-f(0) Z_0}` when known.
    pub expected: Option<f64>,
    pub z_vs_expected: Option<f64>,
    /// `1 - E[Lambda_T]`.
    pub defect: f64,
    /// Defect in standard errors.
    pub defect_z: f64,
}

/// `E[Lambda_T]` with `Lambda_t = (Z_t / Z_0)^{1 - dim/2}` from terminal Z.
pub fn lambda_defect(z_terminal: &[f64], z0: f64, bessel_dim: f64, expected: Option<f64>) -> StrictLocalMartingaleReport {
    let lam: Vec<f64> = z_terminal.iter().map(|z| (z / z0).powf(1.0 - 0.5 * bessel_dim)).collect();
    let e = mean_stderr(&lam);
    StrictLocalMartingaleReport {
        lambda_t: e,
        expected,
        z_vs_expected: expected.map(|x| e.z_score(x)),
        defect: 1.0 - e.mean,
        defect_z: -e.z_score(1.0),
    }
}

/// Strict local martingale check for the stylized MMM (dimension four,
/// uncorrelated scaling): `E[Lambda_T] = 1 - e^{-f(0) Z_0}`.
pub fn strict_local_martingale_check(paths: &PathBundle, params: &StylizedMmmParams) -> Result<StrictLocalMartingaleReport> {
    let n = paths.grid.n_nodes();
    let zt = paths.column(channel::Z, n - 1)?;
    let z0 = paths.column(channel::Z, 0)?;
    if z0.iter().any(|z| *z != params.z0) {
        return invalid("paths do not start at the model's z0");
    }
    let f0 = bond_f(params, paths.grid.t0, paths.grid.t_end)?;
    let expected = -(-f0 * params.z0).exp_m1();
    Ok(lambda_defect(&zt, params.z0, 4.0, Some(expected)))
}

/// Control case: `E[exp(sigma W_T - sigma^2 T / 2)]`, a true martingale.
pub fn geometric_martingale_control(sigma: f64, grid: &TimeGrid, n_paths: usize, seed: u64) -> StrictLocalMartingaleReport {
    let span = grid.t_end - grid.t0;
    let vals: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = RngStream::for_path(seed, domain::WIENER, p).rng();
            let e: f64 = StandardNormal.sample(&mut rng);
            (sigma * span.sqrt() * e - 0.5 * sigma * sigma * span).exp()
        })
        .collect();
    let e = mean_stderr(&vals);
    StrictLocalMartingaleReport {
        lambda_t: e,
        expected: Some(1.0),
        z_vs_expected: Some(e.z_score(1.0)),
        defect: 1.0 - e.mean,
        defect_z: -e.z_score(1.0),
    }
}

/// Largest `|dC_hat - S0_i dC_bar - dC_bar dS0|` over steps and paths.
pub fn cost_numeraire_relation(c_bar: &[f64], s_hat_0: &[f64], c_hat: &[f64], n_nodes: usize) -> Result<f64> {
    if c_bar.len() != s_hat_0.len() || c_bar.len() != c_hat.len() || !c_bar.len().is_multiple_of(n_nodes) {
        return Err(Error::ShapeMismatch("cost and numeraire paths are misaligned".into()));
    }
    let np = c_bar.len() / n_nodes;
    let mut worst = 0.0f64;
    for p in 0..np {
        for i in 0..n_nodes - 1 {
            let k = p * n_nodes + i;
            let dcb = c_bar[k + 1] - c_bar[k];
            let ds = s_hat_0[k + 1] - s_hat_0[k];
            let dch = c_hat[k + 1] - c_hat[k];
            worst = worst.max((dch - s_hat_0[k] * dcb - dcb * ds).abs());
        }
    }
    Ok(worst)
}

/// Largest `|dC_hat - S0_i dC_bar - d<C_bar, S0>|` with the predictable
/// covariation increment in place of the realized one. Unlike the realized
/// form this is a discretization error and shrinks with the step.
pub fn compensated_cost_relation(
    c_bar: &[f64],
    s_hat_0: &[f64],
    c_hat: &[f64],
    bracket: &[f64],
    n_nodes: usize,
) -> Result<f64> {
    if c_bar.len() != s_hat_0.len() || c_bar.len() != c_hat.len() || !c_bar.len().is_multiple_of(n_nodes) {
        return Err(Error::ShapeMismatch("cost and numeraire paths are misaligned".into()));
    }
    let np = c_bar.len() / n_nodes;
    if bracket.len() != np * (n_nodes - 1) {
        return Err(Error::ShapeMismatch("covariation increments misaligned with costs".into()));
    }
    let mut worst = 0.0f64;
    for p in 0..np {
        for i in 0..n_nodes - 1 {
            let k = p * n_nodes + i;
            let dcb = c_bar[k + 1] - c_bar[k];
            let dch = c_hat[k + 1] - c_hat[k];
            worst = worst.max((dch - s_hat_0[k] * dcb - bracket[p * (n_nodes - 1) + i]).abs());
        }
    }
    Ok(worst)
}

/// Cross-path test that the realized covariation of a cost with a channel
/// has zero mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovariationTest {
    pub channel: String,
    pub covariation: MeanEstimate,
    pub z: f64,
    pub pass: bool,
}

pub fn covariation_test(name: &str, cost: &[f64], x: &[f64], n_nodes: usize) -> Result<CovariationTest> {
    if cost.len() != x.len() || !cost.len().is_multiple_of(n_nodes) {
        return Err(Error::ShapeMismatch(format!("channel `{name}` misaligned with cost")));
    }
    let q: Vec<f64> = cost
        .chunks(n_nodes)
        .zip(x.chunks(n_nodes))
        .map(|(c, y)| realized_covariation(c, y))
        .collect();
    Ok(covariation_from_samples(name, &q))
}

/// Sum of increment products along one path.
pub fn realized_covariation(a: &[f64], b: &[f64]) -> f64 {
    a.windows(2).zip(b.windows(2)).map(|(u, v)| (u[1] - u[0]) * (v[1] - v[0])).sum()
}

/// Covariation test from per-path realized covariations.
pub fn covariation_from_samples(name: &str, q: &[f64]) -> CovariationTest {
    let e = mean_stderr(q);
    let z = e.z_score(0.0);
    CovariationTest { channel: name.to_string(), covariation: e, z, pass: z.abs() <= Z_THRESHOLD }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrthogonalityReport {
    pub savings_numeraire: Vec<CovariationTest>,
    pub benchmark_numeraire: Vec<CovariationTest>,
    /// The hypothesis (orthogonality under the savings-account numeraire)
    /// holds empirically.
    pub applicable: bool,
    /// Applicable and preserved.
    pub pass: bool,
}

/// Orthogonality of `c_bar` to the discounted channels and of `c_hat` to the
/// benchmarked channels.
pub fn orthogonality_preservation(
    c_bar: &[f64],
    discounted: &[(&str, &[f64])],
    c_hat: &[f64],
    benchmarked: &[(&str, &[f64])],
    n_nodes: usize,
) -> Result<OrthogonalityReport> {
    let a: Vec<CovariationTest> = discounted
        .iter()
        .map(|(n, x)| covariation_test(n, c_bar, x, n_nodes))
        .collect::<Result<_>>()?;
    let b: Vec<CovariationTest> = benchmarked
        .iter()
        .map(|(n, x)| covariation_test(n, c_hat, x, n_nodes))
        .collect::<Result<_>>()?;
    Ok(OrthogonalityReport::from_tests(a, b))
}

impl OrthogonalityReport {
    pub fn from_tests(savings_numeraire: Vec<CovariationTest>, benchmark_numeraire: Vec<CovariationTest>) -> Self {
        let applicable = savings_numeraire.iter().all(|t| t.pass);
        let pass = applicable && benchmark_numeraire.iter().all(|t| t.pass);
        Self { savings_numeraire, benchmark_numeraire, applicable, pass }
    }
}

/// Strategy used in the change-of-numeraire experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NumeraireStrategy {
    /// Hedge the W exposure of the discounted asset with the discounted
    /// bond, the rest in the savings account.
    LocallyRiskMinimizing,
    /// One bond held throughout.
    SelfFinancingBond,
    /// Locally risk-minimizing but with the bond holding computed from the
    /// benchmarked loadings, so the cost retains W exposure.
    WExposed,
}

/// Cost paths of one strategy under both numeraires along one path.
#[derive(Debug, Clone, PartialEq)]
pub struct NumerairePath {
    pub s_hat_0: Vec<f64>,
    pub p_hat: Vec<f64>,
    pub p_bar: Vec<f64>,
    pub s_hat_j: Vec<f64>,
    pub c_bar: Vec<f64>,
    pub c_hat: Vec<f64>,
    /// Bond units held over each step.
    pub eta: Vec<f64>,
    /// Predictable covariation increment of `c_bar` with `s_hat_0` over
    /// each step, from the left-point loadings.
    pub bracket: Vec<f64>,
}

impl NumerairePath {
    /// Gross magnitude of the terms entering the cost bookkeeping, the scale
    /// at which rounding in the identity residual is measured.
    pub fn gross_scale(&self) -> f64 {
        let s_max = self.s_hat_0.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let term = self
            .eta
            .iter()
            .enumerate()
            .map(|(i, e)| e.abs() * (self.p_hat[i].abs() + self.p_bar[i].abs()) + self.s_hat_j[i].abs())
            .fold(1.0f64, f64::max);
        s_max * term
    }
}

/// Costs of a strategy in the benchmarked asset `asset`, the bond and the
/// savings account. Units in the savings account make the portfolio worth
/// the target value, so the strategy is the same under both numeraires.
#[allow(clippy::too_many_arguments)]
pub fn numeraire_change_path(
    params: &StylizedMmmParams,
    assets: &dyn AssetCoefficients,
    asset: usize,
    bond_maturity: f64,
    grid: &TimeGrid,
    seed: u64,
    path: usize,
    strategy: NumeraireStrategy,
) -> Result<NumerairePath> {
    let sp = stylized_path(params, grid, seed, path)?;
    let n = grid.n_steps;
    let dt = grid.dt();
    let s0: Vec<f64> = sp.z.iter().map(|z| 1.0 / z).collect();
    let mut p_hat = Vec::with_capacity(n + 1);
    for (i, &s) in s0.iter().enumerate() {
        let t = grid.time(i);
        p_hat.push(if t < bond_maturity {
            zcb_price(t, s, params, bond_maturity)?.p_hat
        } else {
            (-params.r * bond_maturity).exp() * s
        });
    }
    let mut sj = vec![assets.s0()[asset] * s0[0] * (-params.r * grid.t0).exp()];
    let mut eta = Vec::with_capacity(n);
    let mut bracket = Vec::with_capacity(n);
    for i in 0..n {
        let t = grid.time(i);
        let vol = assets.vol(t);
        let theta = market_price_of_risk(vol, assets.appreciation(t), params.r)?;
        let (cw, cp) = benchmarked_loadings(vol[asset], theta).ok_or(Error::ZeroMarketPriceOfRisk { path, node: i })?;
        let z = sp.z[i];
        let sigma_z = (params.alpha(t) * z).sqrt();
        let psi = psi_integrand_stylized(t, s0[i], params, bond_maturity)?;
        // W loadings of the discounted target and bond
        let load_v = z * sj[i] * cw + sj[i] * sigma_z;
        let load_p = z * psi + p_hat[i] * sigma_z;
        let h = match strategy {
            NumeraireStrategy::SelfFinancingBond => 1.0,
            NumeraireStrategy::LocallyRiskMinimizing => {
                if load_p == 0.0 {
                    return Err(Error::ZeroIntegrand { node: i });
                }
                load_v / load_p
            }
            NumeraireStrategy::WExposed => sj[i] * cw / psi,
        };
        eta.push(h);
        let cost_load = match strategy {
            NumeraireStrategy::SelfFinancingBond => 0.0,
            _ => load_v - h * load_p,
        };
        bracket.push(-cost_load * sigma_z / (z * z) * dt);
        let x = cw * sp.dw[i] + cp * sp.dw_perp[i] - 0.5 * (cw * cw + cp * cp) * dt;
        sj.push(sj[i] * x.exp());
    }
    let p_bar: Vec<f64> = p_hat.iter().zip(&s0).map(|(p, s)| p / s).collect();
    let value_hat: Vec<f64> = match strategy {
        NumeraireStrategy::SelfFinancingBond => p_hat.clone(),
        _ => sj.clone(),
    };
    let value_bar: Vec<f64> = value_hat.iter().zip(&s0).map(|(v, s)| v / s).collect();
    let mut c_bar = vec![value_bar[0]];
    let mut c_hat = vec![value_hat[0]];
    let (mut gb, mut gh) = (0.0, 0.0);
    for i in 0..n {
        let units0 = value_bar[i] - eta[i] * p_bar[i];
        gb += eta[i] * (p_bar[i + 1] - p_bar[i]);
        gh += eta[i] * (p_hat[i + 1] - p_hat[i]) + units0 * (s0[i + 1] - s0[i]);
        c_bar.push(value_bar[i + 1] - gb);
        c_hat.push(value_hat[i + 1] - gh);
    }
    Ok(NumerairePath { s_hat_0: s0, p_hat, p_bar, s_hat_j: sj, c_bar, c_hat, eta, bracket })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{simulate_stylized_mmm, ConstantAssets};
    use crate::stochastic::make_time_grid;

    fn sty() -> StylizedMmmParams {
        StylizedMmmParams { alpha0: 0.05, beta: 0.05, r: 0.0, z0: 1.0 }
    }

    #[test]
    fn injected_drift_fails() {
        let g = make_time_grid(0.0, 1.0, 10).unwrap();
        let mut b = simulate_stylized_mmm(&sty(), &g, 4000, 3).unwrap();
        let w = b.channel(channel::W).unwrap().to_vec();
        assert!(martingale_check(&b, channel::W).unwrap().pass);
        // add a drift of one per unit time
        let shifted: Vec<f64> = w.iter().enumerate().map(|(k, x)| x + (k % 11) as f64 * g.dt() + 10.0).collect();
        b.insert("shifted", shifted, true).unwrap();
        let r = supermartingale_check(&b, "shifted").unwrap();
        assert!(!r.pass, "max z {}", r.max_z);
    }

    #[test]
    fn short_horizon_has_no_defect() {
        let p = sty();
        let g = make_time_grid(0.0, 1e-3, 1).unwrap();
        let b = simulate_stylized_mmm(&p, &g, 20_000, 8).unwrap();
        let r = strict_local_martingale_check(&b, &p).unwrap();
        assert!((r.expected.unwrap() - 1.0).abs() < 1e-12);
        assert!(r.defect.abs() < 1e-3);
    }

    #[test]
    fn geometric_control_is_a_martingale() {
        let g = make_time_grid(0.0, 2.0, 1).unwrap();
        let r = geometric_martingale_control(0.3, &g, 100_000, 4);
        assert!(r.z_vs_expected.unwrap().abs() < MATCH_THRESHOLD);
    }

    #[test]
    fn numeraire_identity_is_exact() {
        let p = sty();
        let g = make_time_grid(0.0, 5.0, 20).unwrap();
        let a = ConstantAssets::reference(0.0);
        for strategy in [NumeraireStrategy::LocallyRiskMinimizing, NumeraireStrategy::SelfFinancingBond] {
            let np = numeraire_change_path(&p, &a, 0, 10.0, &g, 2, 0, strategy).map_err(|e| e.to_string()).unwrap();
            let r = cost_numeraire_relation(&np.c_bar, &np.s_hat_0, &np.c_hat, 21).unwrap();
            assert!(r < 1e-14, "{strategy:?}: {r}");
        }
        let np = numeraire_change_path(&p, &a, 0, 10.0, &g, 2, 0, NumeraireStrategy::SelfFinancingBond).unwrap();
        assert!(np.c_bar.iter().all(|c| (c - np.c_bar[0]).abs() < 1e-14));
        assert!(np.c_hat.iter().all(|c| (c - np.c_hat[0]).abs() < 1e-14));
        let mut bad = np.c_hat.clone();
        bad[7] += 1e-6;
        assert!(cost_numeraire_relation(&np.c_bar, &np.s_hat_0, &bad, 21).unwrap() > 1e-7);
    }

    #[test]
    fn zero_cost_is_orthogonal() {
        let x: Vec<f64> = (0..40).map(|k| (k as f64).sin()).collect();
        let c = vec![1.0; 40];
        let r = orthogonality_preservation(&c, &[("x", &x)], &c, &[("x", &x)], 10).unwrap();
        assert!(r.pass && r.applicable);
    }
}
