//! Benchmarked risk-minimizing strategies: the explicit bond/W_perp hedge of
//! a benchmarked primary account, cost and risk processes, a regression
//! (LSMC) decomposition for claims without a closed form, and the
//! defaultable put hedge.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::models::{benchmarked_loadings, stylized_path, AssetCoefficients, StylizedMmmParams};
use crate::pricing::{put_price, zcb_price, DefaultModel};
use crate::regression::{least_squares, BasisConfig, PolyBasis};
use crate::stats::{mean_stderr, neumaier_sum, MeanEstimate};
use crate::stochastic::{RngStream, TimeGrid};

/// `psi_t` with `dP_hat(t,T) = psi_t dW_t` in the stylized MMM:
/// `-P_hat (S0 - f e^{-f/S0} / (1 - e^{-f/S0})) sqrt(alpha_t / S0)`.
pub fn psi_integrand_stylized(t: f64, s_hat_0: f64, params: &StylizedMmmParams, maturity: f64) -> Result<f64> {
    let q = zcb_price(t, s_hat_0, params, maturity)?;
    let x = q.f_t / s_hat_0;
    let tail = if x > 700.0 { 0.0 } else { q.f_t / x.exp_m1() };
    Ok(-q.p_hat * (s_hat_0 - tail) * (params.alpha(t) / s_hat_0).sqrt())
}

/// `eta = (S^j / psi) (theta . b^j / |theta| - |theta|)`.
pub fn eta_strategy(s_hat_j: f64, theta: [f64; 2], vol_row: [f64; 2], psi: f64, node: usize) -> Result<f64> {
    if psi == 0.0 || !psi.is_finite() {
        return Err(Error::ZeroIntegrand { node });
    }
    let (cw, _) = benchmarked_loadings(vol_row, theta).ok_or(Error::ZeroMarketPriceOfRisk { path: 0, node })?;
    Ok(s_hat_j * cw / psi)
}

/// `nu = (S^j / |theta|) (theta_2 b^{j1} - theta_1 b^{j2})`.
pub fn nu_residual(s_hat_j: f64, theta: [f64; 2], vol_row: [f64; 2], node: usize) -> Result<f64> {
    let (_, cp) = benchmarked_loadings(vol_row, theta).ok_or(Error::ZeroMarketPriceOfRisk { path: 0, node })?;
    Ok(s_hat_j * cp)
}

/// Stylized closed form of eta:
/// `(S^j / (alpha P_hat)) (|theta|^2 - theta . b^j) (S0 - f e^{-f/S0}/(1 - e^{-f/S0}))^{-1}`.
/// Equals `eta_strategy` with `psi_integrand_stylized` when
/// `|theta|^2 = alpha_t S0_t`, the market price of risk of the stylized MMM.
#[allow(clippy::too_many_arguments)]
pub fn eta_strategy_stylized(
    s_hat_j: f64,
    theta: [f64; 2],
    vol_row: [f64; 2],
    t: f64,
    s_hat_0: f64,
    params: &StylizedMmmParams,
    maturity: f64,
    node: usize,
) -> Result<f64> {
    let q = zcb_price(t, s_hat_0, params, maturity)?;
    let x = q.f_t / s_hat_0;
    let tail = if x > 700.0 { 0.0 } else { q.f_t / x.exp_m1() };
    let denom = params.alpha(t) * q.p_hat * (s_hat_0 - tail);
    if denom == 0.0 || !denom.is_finite() {
        return Err(Error::ZeroIntegrand { node });
    }
    let n2 = theta[0] * theta[0] + theta[1] * theta[1];
    let dot = theta[0] * vol_row[0] + theta[1] * vol_row[1];
    Ok(s_hat_j * (n2 - dot) / denom)
}

/// Holdings per instrument; `holdings[k][p * n_steps + i]` is held over step
/// `i -> i+1` and uses node-`i` information only.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Strategy {
    pub labels: Vec<String>,
    pub n_paths: usize,
    pub n_steps: usize,
    pub holdings: Vec<Vec<f64>>,
}

impl Strategy {
    pub fn zeros(labels: &[&str], n_paths: usize, n_steps: usize) -> Self {
        Self {
            labels: labels.iter().map(|s| s.to_string()).collect(),
            n_paths,
            n_steps,
            holdings: vec![vec![0.0; n_paths * n_steps]; labels.len()],
        }
    }

    pub fn get(&self, k: usize, p: usize, i: usize) -> f64 {
        self.holdings[k][p * self.n_steps + i]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostProcess {
    pub n_paths: usize,
    pub n_nodes: usize,
    /// Row-major per-path cost `C_t = V_t - sum_{s<t} holding . dX`.
    pub cost: Vec<f64>,
    /// Mean over paths of `(C_T - C_0)^2`.
    pub risk0: MeanEstimate,
}

impl CostProcess {
    pub fn path(&self, p: usize) -> &[f64] {
        &self.cost[p * self.n_nodes..(p + 1) * self.n_nodes]
    }
}

/// Cost process of `strategy` against instrument value paths, with `value`
/// the portfolio value path (all row-major `n_paths x n_nodes`).
pub fn cost_process(strategy: &Strategy, instruments: &[&[f64]], value: &[f64]) -> Result<CostProcess> {
    let (np, ns) = (strategy.n_paths, strategy.n_steps);
    let nn = ns + 1;
    if instruments.len() != strategy.holdings.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} instruments for {} holdings",
            instruments.len(),
            strategy.holdings.len()
        )));
    }
    if value.len() != np * nn || instruments.iter().any(|x| x.len() != np * nn) {
        return Err(Error::ShapeMismatch("value or instrument path has the wrong length".into()));
    }
    if strategy.holdings.iter().any(|h| h.len() != np * ns) {
        return Err(Error::ShapeMismatch("holdings must have one entry per path and step".into()));
    }
    let mut cost = vec![0.0; np * nn];
    for p in 0..np {
        let mut gains = 0.0;
        cost[p * nn] = value[p * nn];
        for i in 0..ns {
            for (k, x) in instruments.iter().enumerate() {
                gains += strategy.get(k, p, i) * (x[p * nn + i + 1] - x[p * nn + i]);
            }
            cost[p * nn + i + 1] = value[p * nn + i + 1] - gains;
        }
    }
    let sq: Vec<f64> = (0..np)
        .map(|p| {
            let d = cost[p * nn + ns] - cost[p * nn];
            d * d
        })
        .collect();
    Ok(CostProcess { n_paths: np, n_nodes: nn, cost, risk0: mean_stderr(&sq) })
}

/// The triple `(H_0, xi, L)` with `H = H_0 + sum xi dX + L_T` per path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompositionResult {
    pub h0: f64,
    pub integrand: Strategy,
    pub residual_terminal: Vec<f64>,
    /// Row-major `n_paths x n_nodes`, zero at node 0.
    pub residual_path: Vec<f64>,
    /// Row-major `n_paths x n_nodes` value process.
    pub value_path: Vec<f64>,
    /// Nodes where the ridge fallback was needed.
    pub ridge_nodes: Vec<usize>,
}

impl DecompositionResult {
    pub fn n_nodes(&self) -> usize {
        self.integrand.n_steps + 1
    }

    /// `H_0 + sum xi dX` per path.
    pub fn hedgeable_terminal(&self, instruments: &[&[f64]]) -> Vec<f64> {
        let s = &self.integrand;
        let nn = s.n_steps + 1;
        (0..s.n_paths)
            .map(|p| {
                self.h0
                    + neumaier_sum((0..s.n_steps).flat_map(|i| {
                        instruments
                            .iter()
                            .enumerate()
                            .map(move |(k, x)| s.get(k, p, i) * (x[p * nn + i + 1] - x[p * nn + i]))
                    }))
            })
            .collect()
    }
}

/// Regression decomposition by backward induction. At step `i` the value
/// `V_{i+1}` is regressed on `[phi(x_i), phi(x_i) dX^k_i]`; the first block
/// gives `V_i`, the others the integrand. Node 0 uses the constant basis.
pub fn gkw_regression(
    payoff: &[f64],
    labels: &[&str],
    instruments: &[&[f64]],
    states: &[&[f64]],
    n_nodes: usize,
    basis: BasisConfig,
) -> Result<DecompositionResult> {
    let np = payoff.len();
    let m = instruments.len();
    if n_nodes < 2 {
        return invalid("need at least one step");
    }
    if m == 0 || labels.len() != m {
        return Err(Error::ShapeMismatch("one label per hedging instrument required".into()));
    }
    if instruments.iter().chain(states).any(|c| c.len() != np * n_nodes) {
        return Err(Error::ShapeMismatch("instrument and state channels must be n_paths x n_nodes".into()));
    }
    if payoff.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite payoff".into()));
    }
    let ns = n_nodes - 1;
    let mut value = vec![0.0; np * n_nodes];
    for p in 0..np {
        value[p * n_nodes + ns] = payoff[p];
    }
    let mut integrand = Strategy::zeros(labels, np, ns);
    let mut ridge_nodes = Vec::new();
    for i in (0..ns).rev() {
        let cols: Vec<Vec<f64>> = states
            .iter()
            .map(|c| (0..np).map(|p| c[p * n_nodes + i]).collect())
            .collect();
        let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
        let pb = if i == 0 {
            PolyBasis::constant(states.len())
        } else {
            PolyBasis::fit(&refs, basis.degree)
        };
        let nb = pb.len();
        let dx: Vec<Vec<f64>> = instruments
            .iter()
            .map(|x| (0..np).map(|p| x[p * n_nodes + i + 1] - x[p * n_nodes + i]).collect())
            .collect();
        let row = |p: usize, out: &mut [f64]| {
            let x: Vec<f64> = cols.iter().map(|c| c[p]).collect();
            pb.eval(&x, &mut out[..nb]);
            for k in 0..m {
                for b in 0..nb {
                    out[(k + 1) * nb + b] = out[b] * dx[k][p];
                }
            }
        };
        let y: Vec<f64> = (0..np).map(|p| value[p * n_nodes + i + 1]).collect();
        let fit = least_squares(np, nb * (m + 1), row, &y)?;
        if fit.ridge_used {
            ridge_nodes.push(i);
        }
        let fitted: Vec<(f64, Vec<f64>)> = (0..np)
            .into_par_iter()
            .map(|p| {
                let mut phi = vec![0.0; nb];
                let x: Vec<f64> = cols.iter().map(|c| c[p]).collect();
                pb.eval(&x, &mut phi);
                let v = phi.iter().zip(&fit.coef[..nb]).map(|(a, b)| a * b).sum();
                let xi = (0..m)
                    .map(|k| {
                        phi.iter()
                            .zip(&fit.coef[(k + 1) * nb..(k + 2) * nb])
                            .map(|(a, b)| a * b)
                            .sum()
                    })
                    .collect();
                (v, xi)
            })
            .collect();
        for (p, (v, xi)) in fitted.into_iter().enumerate() {
            value[p * n_nodes + i] = v;
            for k in 0..m {
                integrand.holdings[k][p * ns + i] = xi[k];
            }
        }
    }
    ridge_nodes.reverse();
    let h0 = value[0];
    let mut residual_path = vec![0.0; np * n_nodes];
    for p in 0..np {
        let mut acc = 0.0;
        for i in 0..ns {
            let b = p * n_nodes + i;
            let mut dl = value[b + 1] - value[b];
            for k in 0..m {
                dl -= integrand.holdings[k][p * ns + i] * (instruments[k][b + 1] - instruments[k][b]);
            }
            acc += dl;
            residual_path[b + 1] = acc;
        }
    }
    let residual_terminal = (0..np).map(|p| residual_path[p * n_nodes + ns]).collect();
    Ok(DecompositionResult { h0, integrand, residual_terminal, residual_path, value_path: value, ridge_nodes })
}

/// `(H^h, H^u) = (H_0 + sum xi dX, L_T)` per path.
pub fn split_hedgeable(decomposition: &DecompositionResult, instruments: &[&[f64]]) -> (Vec<f64>, Vec<f64>) {
    let hedgeable = decomposition.hedgeable_terminal(instruments);
    (hedgeable, decomposition.residual_terminal.clone())
}

/// Empirical check of the orthogonal split at time 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitReport {
    pub unhedgeable_mean: MeanEstimate,
    /// Mean of `(H^h - mean)(H^u - mean)`; zero for an orthogonal split.
    pub cross_moment: MeanEstimate,
    pub var_total: f64,
    pub var_hedgeable: f64,
    pub var_unhedgeable: f64,
}

pub fn split_report(hedgeable: &[f64], unhedgeable: &[f64]) -> SplitReport {
    let mh = mean_stderr(hedgeable).mean;
    let mu = mean_stderr(unhedgeable).mean;
    let cross: Vec<f64> = hedgeable.iter().zip(unhedgeable).map(|(a, b)| (a - mh) * (b - mu)).collect();
    let total: Vec<f64> = hedgeable.iter().zip(unhedgeable).map(|(a, b)| a + b).collect();
    SplitReport {
        unhedgeable_mean: mean_stderr(unhedgeable),
        cross_moment: mean_stderr(&cross),
        var_total: crate::stats::variance(&total),
        var_hedgeable: crate::stats::variance(hedgeable),
        var_unhedgeable: crate::stats::variance(unhedgeable),
    }
}

/// Result of adding one perturbation to an integrand.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationOutcome {
    pub risk: f64,
    /// Mean and error of the per-path increase of the squared cost.
    pub increase: MeanEstimate,
}

/// Perturb the integrand by `amplitude * sin(w x_i + phase)` of the first
/// state channel (bounded and predictable) and report the risk change, for
/// `count` random `(w, phase, instrument)` draws.
pub fn perturbation_study(
    decomposition: &DecompositionResult,
    payoff: &[f64],
    instruments: &[&[f64]],
    state: &[f64],
    amplitude: f64,
    count: usize,
    seed: u64,
) -> Vec<PerturbationOutcome> {
    use rand::Rng;
    let s = &decomposition.integrand;
    let nn = s.n_steps + 1;
    let base = decomposition.hedgeable_terminal(instruments);
    let mut rng = RngStream::new(seed, u64::MAX).rng();
    (0..count)
        .map(|_| {
            let w: f64 = rng.random_range(0.5..5.0);
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let k = rng.random_range(0..instruments.len());
            let inc: Vec<(f64, f64)> = (0..s.n_paths)
                .map(|p| {
                    let e0 = payoff[p] - base[p];
                    let extra: f64 = (0..s.n_steps)
                        .map(|i| {
                            let b = p * nn + i;
                            amplitude * (w * state[b] + phase).sin() * (instruments[k][b + 1] - instruments[k][b])
                        })
                        .sum();
                    let e1 = e0 - extra;
                    (e1 * e1, e1 * e1 - e0 * e0)
                })
                .collect();
            let risk: Vec<f64> = inc.iter().map(|x| x.0).collect();
            let diff: Vec<f64> = inc.iter().map(|x| x.1).collect();
            PerturbationOutcome { risk: mean_stderr(&risk).mean, increase: mean_stderr(&diff) }
        })
        .collect()
}

/// Central finite difference of a price in the bond price.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HedgeRatio {
    pub value: f64,
    pub half_step_value: f64,
    /// Relative change when the step is halved.
    pub richardson_change: f64,
}

pub const DEFAULT_REL_STEP: f64 = 1e-5;
pub const RICHARDSON_TOL: f64 = 1e-6;

pub fn hedge_ratio_fd<F>(price_fn: F, p_hat: f64, rel_step: f64) -> Result<HedgeRatio>
where
    F: Fn(f64) -> Result<f64>,
{
    let h = p_hat.abs() * rel_step;
    if !(h > 0.0) || p_hat + h == p_hat || p_hat - 0.5 * h == p_hat {
        return Err(Error::Numerical(format!("finite-difference step underflows at {p_hat}")));
    }
    let d = |h: f64| -> Result<f64> { Ok((price_fn(p_hat + h)? - price_fn(p_hat - h)?) / (2.0 * h)) };
    let value = d(h)?;
    let half = d(0.5 * h)?;
    let scale = value.abs().max(half.abs());
    let change = if scale <= 1e-300 { 0.0 } else { (value - half).abs() / scale };
    Ok(HedgeRatio { value: half, half_step_value: value, richardson_change: change })
}

/// `xi^{H,0}_t = Psi_{t-} * dp/dP_hat`.
pub fn defaultable_hedge(psi_left_limit: f64, hedge_ratio: f64) -> f64 {
    psi_left_limit * hedge_ratio
}

/// Explicit bond/W_perp hedge of a benchmarked primary account along one
/// stylized-MMM path.
#[derive(Debug, Clone, PartialEq)]
pub struct AssetHedgePath {
    pub s_hat_0: Vec<f64>,
    pub s_hat_j: Vec<f64>,
    pub p_hat: Vec<f64>,
    pub eta: Vec<f64>,
    pub nu: Vec<f64>,
    pub dw: Vec<f64>,
    pub dw_perp: Vec<f64>,
}

impl AssetHedgePath {
    /// `S^j_T - (S^j_0 + sum eta dP_hat + sum nu dW_perp)`.
    pub fn replication_error(&self) -> f64 {
        let n = self.eta.len();
        let gains: f64 = (0..n)
            .map(|i| self.eta[i] * (self.p_hat[i + 1] - self.p_hat[i]) + self.nu[i] * self.dw_perp[i])
            .sum();
        self.s_hat_j[n] - self.s_hat_j[0] - gains
    }

    /// Cost of the bond-only hedge: `C_t = S^j_t - sum_{s<t} eta dP_hat`.
    pub fn cost(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.s_hat_j.len());
        let mut g = 0.0;
        out.push(self.s_hat_j[0]);
        for i in 0..self.eta.len() {
            g += self.eta[i] * (self.p_hat[i + 1] - self.p_hat[i]);
            out.push(self.s_hat_j[i + 1] - g);
        }
        out
    }

    /// `sum nu^2 dt`, the discrete `int nu^2 dt`.
    pub fn nu_quadratic_variation(&self, dt: f64) -> f64 {
        self.nu.iter().map(|v| v * v * dt).sum()
    }
}

/// Hedge of `S_hat^j` (`asset` 0 or 1) with the bond maturing at
/// `bond_maturity >= grid.t_end`.
pub fn stylized_asset_hedge_path(
    params: &StylizedMmmParams,
    assets: &dyn AssetCoefficients,
    asset: usize,
    bond_maturity: f64,
    grid: &TimeGrid,
    seed: u64,
    path: usize,
) -> Result<AssetHedgePath> {
    if asset > 1 {
        return invalid(format!("asset index must be 0 or 1, got {asset}"));
    }
    if bond_maturity < grid.t_end {
        return invalid("bond must not mature before the hedge horizon");
    }
    let sp = stylized_path(params, grid, seed, path)?;
    let n = grid.n_steps;
    let dt = grid.dt();
    let s_hat_0: Vec<f64> = sp.z.iter().map(|z| 1.0 / z).collect();
    let mut p_hat = Vec::with_capacity(n + 1);
    for (i, &s) in s_hat_0.iter().enumerate() {
        let t = grid.time(i);
        p_hat.push(if t < bond_maturity {
            zcb_price(t, s, params, bond_maturity)?.p_hat
        } else {
            (-params.r * bond_maturity).exp() * s
        });
    }
    let mut s_hat_j = Vec::with_capacity(n + 1);
    s_hat_j.push(assets.s0()[asset] * s_hat_0[0] * (-params.r * grid.t0).exp());
    let mut eta = Vec::with_capacity(n);
    let mut nu = Vec::with_capacity(n);
    for i in 0..n {
        let t = grid.time(i);
        let vol = assets.vol(t);
        let theta = crate::models::market_price_of_risk(vol, assets.appreciation(t), params.r)?;
        let (cw, cp) = benchmarked_loadings(vol[asset], theta).ok_or(Error::ZeroMarketPriceOfRisk { path, node: i })?;
        let psi = psi_integrand_stylized(t, s_hat_0[i], params, bond_maturity)?;
        let sj = s_hat_j[i];
        eta.push(eta_strategy(sj, theta, vol[asset], psi, i)?);
        nu.push(nu_residual(sj, theta, vol[asset], i)?);
        let x = cw * sp.dw[i] + cp * sp.dw_perp[i] - 0.5 * (cw * cw + cp * cp) * dt;
        s_hat_j.push(sj * x.exp());
    }
    Ok(AssetHedgePath { s_hat_0, s_hat_j, p_hat, eta, nu, dw: sp.dw, dw_perp: sp.dw_perp })
}

/// Defaultable put along one path: put, Psi, product, hedge and cost.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DefaultableHedgePath {
    pub p_hat: Vec<f64>,
    pub put: Vec<f64>,
    pub psi: Vec<f64>,
    pub value: Vec<f64>,
    pub hedge_ratio: Vec<f64>,
    pub xi: Vec<f64>,
    pub cost: Vec<f64>,
    /// Largest `|dU - (p dPsi + Psi_- dp + dPsi dp)|` along the path.
    pub product_rule_residual: f64,
    /// `C_T - (U_0 + sum p_{i+1} dPsi_i)`, the discretization gap to the
    /// jump-integral cost.
    pub jump_cost_gap: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn defaultable_hedge_path(
    params: &StylizedMmmParams,
    model: &DefaultModel,
    strike: f64,
    grid: &TimeGrid,
    z: &[f64],
    tau: f64,
) -> Result<DefaultableHedgePath> {
    let n = grid.n_steps;
    let tm = model.maturity;
    if (grid.t_end - tm).abs() > 1e-12 {
        return invalid("defaultable hedge grid must end at the claim maturity");
    }
    if z.len() != n + 1 {
        return Err(Error::ShapeMismatch("Z path length differs from grid".into()));
    }
    let disc = (-params.r * tm).exp();
    let mut p_hat = Vec::with_capacity(n + 1);
    let mut put = Vec::with_capacity(n + 1);
    let mut psi = Vec::with_capacity(n + 1);
    let mut hr = Vec::with_capacity(n);
    for i in 0..=n {
        let t = grid.time(i);
        let s = 1.0 / z[i];
        psi.push(model.psi(t, tau));
        if i < n {
            let q = zcb_price(t, s, params, tm)?;
            p_hat.push(q.p_hat);
            put.push(put_price(t, strike, s, params, tm)?);
            let ratio = hedge_ratio_fd(
                |pb| crate::pricing::put_price_from_bond(t, strike, pb, params, tm),
                q.p_hat,
                DEFAULT_REL_STEP,
            )?;
            if !(ratio.value.is_finite() && ratio.value.abs() <= strike * 10.0 + 1.0) {
                return Err(Error::Numerical(format!("hedge ratio unbounded at node {i}: {}", ratio.value)));
            }
            hr.push(ratio.value);
        } else {
            p_hat.push(disc * s);
            put.push((strike * disc * s - 1.0).max(0.0));
        }
    }
    if psi.iter().any(|v| !(-1e-15..=1.0 + 1e-15).contains(v)) {
        return Err(Error::Numerical("Psi left [0, 1]".into()));
    }
    let value: Vec<f64> = put.iter().zip(&psi).map(|(a, b)| a * b).collect();
    let xi: Vec<f64> = (0..n).map(|i| defaultable_hedge(psi[i], hr[i])).collect();
    let mut cost = Vec::with_capacity(n + 1);
    let mut gains = 0.0;
    let mut residual = 0.0f64;
    let mut jump_cost = value[0];
    cost.push(value[0]);
    for i in 0..n {
        gains += xi[i] * (p_hat[i + 1] - p_hat[i]);
        cost.push(value[i + 1] - gains);
        let (dp, dpsi) = (put[i + 1] - put[i], psi[i + 1] - psi[i]);
        let du = value[i + 1] - value[i];
        residual = residual.max((du - (put[i] * dpsi + psi[i] * dp + dpsi * dp)).abs());
        jump_cost += put[i + 1] * dpsi;
    }
    Ok(DefaultableHedgePath {
        jump_cost_gap: cost[n] - jump_cost,
        p_hat,
        put,
        psi,
        value,
        hedge_ratio: hr,
        xi,
        cost,
        product_rule_residual: residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ConstantAssets;
    use crate::pricing::{put_price_from_bond, Recovery};
    use crate::stochastic::make_time_grid;
    use proptest::prelude::{prop_assert, proptest};

    fn sty() -> StylizedMmmParams {
        StylizedMmmParams { alpha0: 0.05, beta: 0.05, r: 0.0, z0: 1.0 }
    }

    #[test]
    fn eta_and_nu_fixtures() {
        let theta = [0.2, 0.0];
        let b = [0.1, 0.3];
        let eta = eta_strategy(1.0, theta, b, -0.5, 0).unwrap();
        assert!((eta - 0.2).abs() < 1e-15);
        let nu = nu_residual(1.0, theta, b, 0).unwrap();
        assert!((nu + 0.3).abs() < 1e-15);
        assert_eq!(eta_strategy(1.0, [0.2, 0.1], [0.2, 0.1], -0.5, 0).unwrap(), 0.0);
        assert!(matches!(eta_strategy(1.0, theta, b, 0.0, 7), Err(Error::ZeroIntegrand { node: 7 })));
        assert!(nu_residual(1.0, [0.0, 0.0], b, 3).is_err());
        // rows parallel to theta are fully hedgeable
        assert!(nu_residual(2.0, [0.2, 0.1], [0.4, 0.2], 0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn psi_matches_bond_sensitivity() {
        // psi = dP_hat/dS0 times the diffusion -sqrt(alpha) S0^{3/2} of S0.
        let p = sty();
        for (t, s) in [(0.0, 1.0), (4.0, 0.6), (9.5, 1.7)] {
            let h = 1e-6 * s;
            let d = (zcb_price(t, s + h, &p, 10.0).unwrap().p_hat - zcb_price(t, s - h, &p, 10.0).unwrap().p_hat) / (2.0 * h);
            let oracle = -d * p.alpha(t).sqrt() * s.powf(1.5);
            let v = psi_integrand_stylized(t, s, &p, 10.0).unwrap();
            assert!((v - oracle).abs() < 1e-8 * oracle.abs(), "{v} vs {oracle}");
        }
    }

    #[test]
    fn psi_bounded_near_maturity() {
        let p = sty();
        let mut last = 0.0f64;
        for k in 1..12 {
            let t = 10.0 - 10f64.powi(-k);
            let v = psi_integrand_stylized(t, 1.0, &p, 10.0).unwrap();
            assert!(v.is_finite() && v.abs() <= 1.0);
            last = v;
        }
        // limit -S0 sqrt(alpha_T S0)
        assert!((last + p.alpha(10.0).sqrt()).abs() < 1e-8);
    }

    #[test]
    fn stylized_eta_consistency() {
        let p = sty();
        let (t, s) = (3.0, 0.8);
        let n = (p.alpha(t) * s).sqrt();
        let theta = [0.6 * n, 0.8 * n];
        let b = [0.3, -0.1];
        let psi = psi_integrand_stylized(t, s, &p, 10.0).unwrap();
        let a = eta_strategy(1.3, theta, b, psi, 0).unwrap();
        let c = eta_strategy_stylized(1.3, theta, b, t, s, &p, 10.0, 0).unwrap();
        assert!((a - c).abs() < 1e-12 * a.abs().max(1.0));
        assert_eq!(eta_strategy_stylized(1.0, theta, theta, t, s, &p, 10.0, 0).unwrap(), 0.0);
    }

    #[test]
    fn linear_claim_is_represented() {
        let g = make_time_grid(0.0, 1.0, 4).unwrap();
        let np = 2000;
        let mut x = vec![0.0; np * 5];
        let mut st = vec![0.0; np * 5];
        let mut rng = RngStream::new(1, 0).rng();
        use rand::Rng;
        for p in 0..np {
            for i in 1..5 {
                x[p * 5 + i] = x[p * 5 + i - 1] + rng.random_range(-1.0..1.0);
                st[p * 5 + i] = x[p * 5 + i];
            }
        }
        let payoff: Vec<f64> = (0..np).map(|p| 0.7 + 1.5 * x[p * 5 + 4]).collect();
        let d = gkw_regression(&payoff, &["X"], &[&x], &[&st], g.n_nodes(), BasisConfig::default()).unwrap();
        assert!((d.h0 - 0.7).abs() < 1e-9);
        assert!(d.integrand.holdings[0].iter().all(|v| (v - 1.5).abs() < 1e-8));
        assert!(d.residual_terminal.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn orthogonal_claim_has_no_integrand() {
        let np = 20_000;
        let nn = 5;
        let mut rng = RngStream::new(2, 0).rng();
        use rand_distr::{Distribution, StandardNormal};
        let mut x = vec![0.0; np * nn];
        let mut y = vec![0.0; np * nn];
        for p in 0..np {
            for i in 1..nn {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                x[p * nn + i] = x[p * nn + i - 1] + 0.5 * a;
                y[p * nn + i] = y[p * nn + i - 1] + 0.5 * b;
            }
        }
        let payoff: Vec<f64> = (0..np).map(|p| y[p * nn + nn - 1].powi(2)).collect();
        let d = gkw_regression(&payoff, &["X"], &[&x], &[&y], nn, BasisConfig { degree: 2 }).unwrap();
        let rms = (d.integrand.holdings[0].iter().map(|v| v * v).sum::<f64>() / (np * 4) as f64).sqrt();
        assert!(rms < 0.05, "rms {rms}");
    }

    #[test]
    fn cost_of_zero_strategy_is_value() {
        let s = Strategy::zeros(&["X"], 3, 2);
        let x = vec![1.0, 2.0, 3.0, 1.0, 0.0, -1.0, 5.0, 5.0, 5.0];
        let v = vec![1.0, 1.5, 2.0, 1.0, 1.2, 0.8, 1.0, 1.0, 1.0];
        let c = cost_process(&s, &[&x], &v).unwrap();
        assert_eq!(c.cost, v);
        assert!(cost_process(&s, &[&x[..8]], &v).is_err());
    }

    #[test]
    fn replicating_strategy_has_constant_cost() {
        let mut s = Strategy::zeros(&["X"], 1, 3);
        s.holdings[0] = vec![2.0, 2.0, 2.0];
        let x = vec![1.0, 1.5, 0.5, 3.0];
        let v: Vec<f64> = x.iter().map(|x| 2.0 * x + 1.0).collect();
        let c = cost_process(&s, &[&x], &v).unwrap();
        assert!(c.cost.iter().all(|&c| (c - 3.0).abs() < 1e-15));
        assert_eq!(c.risk0.mean, 0.0);
    }

    #[test]
    fn split_with_zero_residual() {
        let d = DecompositionResult {
            h0: 1.0,
            integrand: Strategy { labels: vec!["X".into()], n_paths: 2, n_steps: 1, holdings: vec![vec![1.0, 1.0]] },
            residual_terminal: vec![0.0, 0.0],
            residual_path: vec![0.0; 4],
            value_path: vec![1.0, 2.0, 1.0, 0.5],
            ridge_nodes: vec![],
        };
        let x = vec![0.0, 1.0, 0.0, -0.5];
        let (h, u) = split_hedgeable(&d, &[&x]);
        assert_eq!(h, vec![2.0, 0.5]);
        assert_eq!(u, vec![0.0, 0.0]);
    }

    #[test]
    fn hedge_ratio_limits() {
        let p = sty();
        let bond = zcb_price(0.0, 1.0, &p, 10.0).unwrap().p_hat;
        let zero = hedge_ratio_fd(|b| put_price_from_bond(0.0, 0.0, b, &p, 10.0), bond, DEFAULT_REL_STEP).unwrap();
        assert_eq!(zero.value, 0.0);
        let deep = hedge_ratio_fd(|b| put_price_from_bond(0.0, 100.0, b, &p, 10.0), bond, DEFAULT_REL_STEP).unwrap();
        assert!((deep.value - 100.0).abs() < 1e-3, "{}", deep.value);
        let mid = hedge_ratio_fd(|b| put_price_from_bond(0.0, 1.0, b, &p, 10.0), bond, DEFAULT_REL_STEP).unwrap();
        assert!(mid.richardson_change < RICHARDSON_TOL, "{}", mid.richardson_change);
        assert!(hedge_ratio_fd(Ok, 0.0, 1e-5).is_err());
    }

    #[test]
    fn defaultable_hedge_cases() {
        assert_eq!(defaultable_hedge(1.0, 0.37), 0.37);
        assert_eq!(defaultable_hedge(0.0, 0.37), 0.0);
    }

    #[test]
    fn defaultable_path_identities() {
        let p = sty();
        let g = make_time_grid(0.0, 10.0, 20).unwrap();
        let sp = stylized_path(&p, &g, 3, 0).unwrap();
        let model = DefaultModel { lambda: 0.1, recovery: Recovery::Constant { value: 0.4 }, maturity: 10.0 };
        let h = defaultable_hedge_path(&p, &model, 1.0, &g, &sp.z, 4.3).unwrap();
        assert!(h.product_rule_residual < 1e-8);
        // after default with h = 0.4 the hedge is scaled by 0.4
        let i = 10;
        assert!((h.xi[i] - 0.4 * h.hedge_ratio[i]).abs() < 1e-15);
        let none = DefaultModel { recovery: Recovery::Constant { value: 1.0 }, ..model };
        let h1 = defaultable_hedge_path(&p, &none, 1.0, &g, &sp.z, 4.3).unwrap();
        assert_eq!(h1.xi, h1.hedge_ratio);
    }

    #[test]
    fn asset_path_matches_bundle_route() {
        let p = sty();
        let g = make_time_grid(0.0, 2.0, 8).unwrap();
        let a = ConstantAssets::reference(0.0);
        let mut b = crate::models::simulate_stylized_mmm(&p, &g, 3, 5).unwrap();
        crate::models::simulate_primary_accounts(&mut b, &a, 0.0).unwrap();
        for path in 0..3 {
            let h = stylized_asset_hedge_path(&p, &a, 0, 2.0, &g, 5, path).unwrap();
            let s = b.path(crate::stochastic::channel::S_HAT_1, path).unwrap();
            for i in 0..9 {
                assert!((h.s_hat_j[i] - s[i]).abs() < 1e-13 * s[i]);
            }
        }
    }

    proptest! {
        #[test]
        fn hedge_ratio_within_strike(k in 0.1f64..5.0, s in 0.3f64..3.0, t in 0.0f64..9.0) {
            let p = sty();
            let bond = zcb_price(t, s, &p, 10.0).unwrap().p_hat;
            let r = hedge_ratio_fd(|b| put_price_from_bond(t, k, b, &p, 10.0), bond, DEFAULT_REL_STEP).unwrap();
            prop_assert!(r.value >= -1e-6 && r.value <= k * (1.0 + 1e-6), "ratio {} strike {}", r.value, k);
        }

        #[test]
        fn eta_consistency_on_stylized_theta(t in 0.0f64..9.5, s in 0.2f64..4.0, ang in 0.0f64..std::f64::consts::TAU, b0 in -1.0f64..1.0, b1 in -1.0f64..1.0) {
            let p = sty();
            let n = (p.alpha(t) * s).sqrt();
            let theta = [n * ang.cos(), n * ang.sin()];
            let psi = psi_integrand_stylized(t, s, &p, 10.0).unwrap();
            let a = eta_strategy(0.9, theta, [b0, b1], psi, 0).unwrap();
            let c = eta_strategy_stylized(0.9, theta, [b0, b1], t, s, &p, 10.0, 0).unwrap();
            prop_assert!((a - c).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}
