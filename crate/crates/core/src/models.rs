//! Minimal market models: the random-scaling MMM (Euler with full
//! truncation for the pair `(Z, gamma)`), the stylized MMM (exact BESQ^4 in
//! a deterministic clock) and benchmarked primary security accounts.

use std::sync::Arc;

use nalgebra::{Matrix2, Vector2};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::stochastic::{
    besq_exact_step, channel, cumulate, domain, euler_step_full_truncation, PathBundle, RngStream, TimeGrid,
};

/// Volatility matrices with a condition number above this are rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// Solve `b theta = a - r 1`.
pub fn market_price_of_risk(vol: [[f64; 2]; 2], appreciation: [f64; 2], r: f64) -> Result<[f64; 2]> {
    let b = Matrix2::new(vol[0][0], vol[0][1], vol[1][0], vol[1][1]);
    let sv = b.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned { condition });
    }
    let rhs = Vector2::new(appreciation[0] - r, appreciation[1] - r);
    let theta = b
        .lu()
        .solve(&rhs)
        .ok_or(Error::IllConditioned { condition: f64::INFINITY })?;
    Ok([theta[0], theta[1]])
}

/// Condition number of a 2x2 volatility matrix.
pub fn condition_number(vol: [[f64; 2]; 2]) -> f64 {
    let sv = Matrix2::new(vol[0][0], vol[0][1], vol[1][0], vol[1][1]).singular_values();
    if sv.min() > 0.0 {
        sv.max() / sv.min()
    } else {
        f64::INFINITY
    }
}

/// Appreciation rates and volatility rows of the two risky primary accounts.
pub trait AssetCoefficients: Send + Sync {
    fn appreciation(&self, t: f64) -> [f64; 2];
    fn vol(&self, t: f64) -> [[f64; 2]; 2];
    fn s0(&self) -> [f64; 2];
}

/// Constant coefficients: `dS^j = S^j (a^j dt + sum_k b^{jk} dW^k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantAssets {
    pub appreciation: [f64; 2],
    pub vol: [[f64; 2]; 2],
    pub s0: [f64; 2],
}

impl ConstantAssets {
    /// The shipped test configuration: `b = [[0.2, 0], [0.1, 0.3]]`,
    /// `a - r 1 = (0.04, 0.05)`, hence `theta = (0.2, 0.1)`.
    pub fn reference(r: f64) -> Self {
        Self {
            appreciation: [r + 0.04, r + 0.05],
            vol: [[0.2, 0.0], [0.1, 0.3]],
            s0: [1.0, 1.0],
        }
    }
}

impl AssetCoefficients for ConstantAssets {
    fn appreciation(&self, _t: f64) -> [f64; 2] {
        self.appreciation
    }
    fn vol(&self, _t: f64) -> [[f64; 2]; 2] {
        self.vol
    }
    fn s0(&self) -> [f64; 2] {
        self.s0
    }
}

/// Coefficients `a(t, gamma)` and `b(t, gamma)` of the scaling process.
pub trait ScalingDynamics: Send + Sync {
    fn drift(&self, t: f64, gamma: f64) -> f64;
    fn diffusion(&self, t: f64, gamma: f64) -> f64;
}

/// `a = level + slope * gamma`, `b = vol * gamma^vol_power`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineScaling {
    pub level: f64,
    pub slope: f64,
    pub vol: f64,
    pub vol_power: f64,
}

impl ScalingDynamics for AffineScaling {
    fn drift(&self, _t: f64, gamma: f64) -> f64 {
        self.level + self.slope * gamma
    }
    fn diffusion(&self, _t: f64, gamma: f64) -> f64 {
        if self.vol == 0.0 {
            0.0
        } else {
            self.vol * gamma.max(0.0).powf(self.vol_power)
        }
    }
}

#[derive(Clone)]
pub struct MmmRandomScalingParams {
    pub bessel_dim: f64,
    pub z0: f64,
    pub gamma0: f64,
    pub scaling: Arc<dyn ScalingDynamics>,
    pub rho: f64,
    pub r: f64,
    pub assets: Arc<dyn AssetCoefficients>,
}

impl MmmRandomScalingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.bessel_dim > 2.0) {
            return invalid(format!("bessel_dim must exceed 2, got {}", self.bessel_dim));
        }
        if !(self.z0 > 0.0) {
            return invalid(format!("z0 must be positive, got {}", self.z0));
        }
        // gamma0 = 0 is the degenerate stub with a frozen Z.
        if !(self.gamma0 >= 0.0) {
            return invalid(format!("gamma0 must be nonnegative, got {}", self.gamma0));
        }
        if !(self.rho.abs() <= 1.0) {
            return invalid(format!("rho must lie in [-1, 1], got {}", self.rho));
        }
        if !(self.r >= 0.0) {
            return invalid(format!("r must be nonnegative, got {}", self.r));
        }
        if self.assets.s0().iter().any(|s| !(*s > 0.0)) {
            return invalid("initial asset values must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StylizedMmmParams {
    pub alpha0: f64,
    pub beta: f64,
    pub r: f64,
    pub z0: f64,
}

impl StylizedMmmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha0 > 0.0) || !(self.beta > 0.0) {
            return invalid(format!(
                "alpha0 and beta must be positive, got {} and {}",
                self.alpha0, self.beta
            ));
        }
        if !(self.r >= 0.0) {
            return invalid(format!("r must be nonnegative, got {}", self.r));
        }
        if !(self.z0 > 0.0) {
            return invalid(format!("z0 must be positive, got {}", self.z0));
        }
        Ok(())
    }

    pub fn alpha(&self, t: f64) -> f64 {
        self.alpha0 * (self.beta * t).exp()
    }

    /// BESQ^4 clock `s(t) = alpha0 / (4 beta) (e^{beta t} - 1)`.
    pub fn clock(&self, t: f64) -> f64 {
        self.alpha0 / (4.0 * self.beta) * (self.beta * t).exp_m1()
    }

    /// `s(t1) - s(t0)` without cancellation.
    pub fn clock_increment(&self, t0: f64, t1: f64) -> f64 {
        self.alpha0 / (4.0 * self.beta) * (self.beta * t0).exp() * (self.beta * (t1 - t0)).exp_m1()
    }
}

/// Per-node market price of risk from the asset coefficients.
pub fn theta_on_grid(assets: &dyn AssetCoefficients, r: f64, grid: &TimeGrid) -> Result<Vec<[f64; 2]>> {
    grid.times()
        .into_iter()
        .map(|t| market_price_of_risk(assets.vol(t), assets.appreciation(t), r))
        .collect()
}

/// `(dW, dW_perp)` from `(dW1, dW2)` by the rotation defined by theta.
pub fn rotate(theta: [f64; 2], dw1: f64, dw2: f64) -> Option<(f64, f64)> {
    let n = theta[0].hypot(theta[1]);
    if !(n > 0.0) {
        return None;
    }
    let (u1, u2) = (theta[0] / n, theta[1] / n);
    Some((u1 * dw1 + u2 * dw2, u2 * dw1 - u1 * dw2))
}

/// Inverse of [`rotate`].
pub fn unrotate(theta: [f64; 2], dw: f64, dw_perp: f64) -> Option<(f64, f64)> {
    let n = theta[0].hypot(theta[1]);
    if !(n > 0.0) {
        return None;
    }
    let (u1, u2) = (theta[0] / n, theta[1] / n);
    Some((u1 * dw + u2 * dw_perp, u2 * dw - u1 * dw_perp))
}

/// Add `W` and `W_perp` (cumulative, zero at t0) built from `W1`, `W2` and
/// the theta channels.
pub fn orthogonal_drivers(paths: &mut PathBundle) -> Result<()> {
    let n = paths.grid.n_nodes();
    let (w1, w2) = (paths.channel(channel::W1)?, paths.channel(channel::W2)?);
    let (t1, t2) = (paths.channel(channel::THETA1)?, paths.channel(channel::THETA2)?);
    let mut w = vec![0.0; w1.len()];
    let mut wp = vec![0.0; w1.len()];
    for p in 0..paths.n_paths {
        for i in 0..n - 1 {
            let k = p * n + i;
            let theta = [t1[k], t2[k]];
            let (a, b) = rotate(theta, w1[k + 1] - w1[k], w2[k + 1] - w2[k])
                .ok_or(Error::ZeroMarketPriceOfRisk { path: p, node: i })?;
            w[k + 1] = w[k] + a;
            wp[k + 1] = wp[k] + b;
        }
    }
    paths.insert(channel::W, w, false)?;
    paths.insert(channel::W_PERP, wp, false)
}

struct RandomScalingPath {
    z: Vec<f64>,
    gamma: Vec<f64>,
    w1: Vec<f64>,
    w2: Vec<f64>,
    w_tilde: Vec<f64>,
}

fn random_scaling_path(
    params: &MmmRandomScalingParams,
    grid: &TimeGrid,
    theta: &[[f64; 2]],
    seed: u64,
    path: usize,
) -> Result<RandomScalingPath> {
    let n = grid.n_steps;
    let dt = grid.dt();
    let sd = dt.sqrt();
    let mut rng = RngStream::for_path(seed, domain::WIENER, path).rng();
    let (mut z, mut gamma) = (Vec::with_capacity(n + 1), Vec::with_capacity(n + 1));
    let (mut d1, mut d2, mut d3) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    z.push(params.z0);
    gamma.push(params.gamma0);
    let corr = (1.0 - params.rho * params.rho).max(0.0).sqrt();
    let mut state = [params.z0, params.gamma0];
    for i in 0..n {
        let t = grid.time(i);
        let e1: f64 = StandardNormal.sample(&mut rng);
        let e2: f64 = StandardNormal.sample(&mut rng);
        let e3: f64 = StandardNormal.sample(&mut rng);
        let (dw1, dw2, dwt) = (sd * e1, sd * e2, sd * e3);
        let (dw, _) = rotate(theta[i], dw1, dw2).ok_or(Error::ZeroMarketPriceOfRisk { path, node: i })?;
        let (zc, gc) = (state[0].max(0.0), state[1].max(0.0));
        let b = params.scaling.diffusion(t, gc);
        let drift = [0.25 * params.bessel_dim * gc, params.scaling.drift(t, gc)];
        let diffusion = [(gc * zc).sqrt(), 0.0, b * params.rho, b * corr];
        let next = euler_step_full_truncation(&state, &[true, true], &drift, &diffusion, &[dw, dwt], dt)?;
        state = [next[0], next[1]];
        z.push(state[0]);
        gamma.push(state[1]);
        d1.push(dw1);
        d2.push(dw2);
        d3.push(dwt);
    }
    Ok(RandomScalingPath {
        z,
        gamma,
        w1: cumulate(&d1),
        w2: cumulate(&d2),
        w_tilde: cumulate(&d3),
    })
}

/// Discounted numeraire portfolio, its drift and the benchmarked savings
/// account from Z and gamma.
fn derived_channels(dim: f64, z: &[f64], gamma: &[f64], path: usize) -> Result<[Vec<f64>; 3]> {
    let q = 0.5 * dim - 1.0;
    let alpha: Vec<f64> = z
        .iter()
        .zip(gamma)
        .map(|(&z, &g)| q * q * g * z.powf(0.5 * (dim - 4.0)))
        .collect();
    let s_bar: Vec<f64> = z.iter().map(|&z| z.powf(0.5 * dim - 1.0)).collect();
    let mut s_hat0 = Vec::with_capacity(z.len());
    for (i, &sb) in s_bar.iter().enumerate() {
        if !(sb > 0.0) {
            return Err(Error::Numerical(format!(
                "Z reached zero at path {path}, node {i}; refine the grid"
            )));
        }
        // S^0 / S^{delta*} = 1 / discounted NP; r cancels.
        s_hat0.push(1.0 / sb);
    }
    Ok([alpha, s_bar, s_hat0])
}

/// Simulate the MMM with random scaling on `grid`. Channels: Z, gamma,
/// alpha, discounted_np, s_hat_0, W1, W2, W_tilde, theta1, theta2, W, W_perp.
pub fn simulate_random_scaling_mmm(
    params: &MmmRandomScalingParams,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathBundle> {
    params.validate()?;
    let theta = theta_on_grid(params.assets.as_ref(), params.r, grid)?;
    if let Some(i) = theta.iter().position(|t| !(t[0].hypot(t[1]) > 0.0)) {
        return Err(Error::ZeroMarketPriceOfRisk { path: 0, node: i });
    }
    let rows: Vec<RandomScalingPath> = (0..n_paths)
        .into_par_iter()
        .map(|p| random_scaling_path(params, grid, &theta, seed, p))
        .collect::<Result<_>>()?;
    let derived: Vec<[Vec<f64>; 3]> = rows
        .par_iter()
        .enumerate()
        .map(|(p, r)| derived_channels(params.bessel_dim, &r.z, &r.gamma, p))
        .collect::<Result<_>>()?;
    let mut b = PathBundle::new(*grid, n_paths);
    let mut alpha = Vec::new();
    let mut s_bar = Vec::new();
    let mut s_hat0 = Vec::new();
    for d in derived {
        let [a, sb, s0] = d;
        alpha.extend(a);
        s_bar.extend(sb);
        s_hat0.extend(s0);
    }
    b.insert(channel::ALPHA, alpha, true)?;
    b.insert(channel::DISCOUNTED_NP, s_bar, true)?;
    b.insert(channel::S_HAT_0, s_hat0, true)?;
    let mut z = Vec::new();
    let mut g = Vec::new();
    let mut w1 = Vec::new();
    let mut w2 = Vec::new();
    let mut wt = Vec::new();
    for r in rows {
        z.extend(r.z);
        g.extend(r.gamma);
        w1.extend(r.w1);
        w2.extend(r.w2);
        wt.extend(r.w_tilde);
    }
    b.insert(channel::Z, z, true)?;
    b.insert(channel::GAMMA, g, true)?;
    b.insert(channel::W1, w1, false)?;
    b.insert(channel::W2, w2, false)?;
    b.insert(channel::W_TILDE, wt, false)?;
    insert_theta(&mut b, &theta)?;
    orthogonal_drivers(&mut b)?;
    Ok(b)
}

fn insert_theta(b: &mut PathBundle, theta: &[[f64; 2]]) -> Result<()> {
    let t1: Vec<f64> = theta.iter().map(|t| t[0]).collect();
    let t2: Vec<f64> = theta.iter().map(|t| t[1]).collect();
    b.insert(channel::THETA1, t1.repeat(b.n_paths), false)?;
    b.insert(channel::THETA2, t2.repeat(b.n_paths), false)
}

/// One stylized-MMM path: Z at the nodes and the increments of W and W_perp.
#[derive(Debug, Clone, PartialEq)]
pub struct StylizedPath {
    pub z: Vec<f64>,
    pub dw: Vec<f64>,
    pub dw_perp: Vec<f64>,
}

/// Simulate path `path` of the stylized MMM: exact BESQ^4 transitions in the
/// clock `s(t)`, W recovered from the Z increments so that
/// `dZ = 4 ds + 2 sqrt(Z ds/dt) dW` holds step by step, W_perp independent.
pub fn stylized_path(params: &StylizedMmmParams, grid: &TimeGrid, seed: u64, path: usize) -> Result<StylizedPath> {
    let n = grid.n_steps;
    let dt = grid.dt();
    let mut rng = RngStream::for_path(seed, domain::WIENER, path).rng();
    let mut aux = RngStream::for_path(seed, domain::AUX, path).rng();
    let sd = dt.sqrt();
    let mut z = Vec::with_capacity(n + 1);
    let mut dw = Vec::with_capacity(n);
    let mut dw_perp = Vec::with_capacity(n);
    let mut cur = params.z0;
    z.push(cur);
    for i in 0..n {
        let ds = params.clock_increment(grid.time(i), grid.time(i + 1));
        let next = besq_exact_step(cur, 4.0, ds, &mut rng)?;
        dw.push((next - cur - 4.0 * ds) / (2.0 * (cur * ds / dt).sqrt()));
        let e: f64 = StandardNormal.sample(&mut aux);
        dw_perp.push(sd * e);
        cur = next;
        if !(cur > 0.0) {
            return Err(Error::Numerical(format!("Z reached zero at path {path}, node {}", i + 1)));
        }
        z.push(cur);
    }
    Ok(StylizedPath { z, dw, dw_perp })
}

/// Simulate the stylized MMM. Channels: Z, gamma (= alpha), alpha,
/// discounted_np (= Z), s_hat_0 (= 1/Z), W, W_perp.
pub fn simulate_stylized_mmm(params: &StylizedMmmParams, grid: &TimeGrid, n_paths: usize, seed: u64) -> Result<PathBundle> {
    params.validate()?;
    let rows: Vec<StylizedPath> = (0..n_paths)
        .into_par_iter()
        .map(|p| stylized_path(params, grid, seed, p))
        .collect::<Result<_>>()?;
    let alpha_row: Vec<f64> = grid.times().iter().map(|&t| params.alpha(t)).collect();
    let mut b = PathBundle::new(*grid, n_paths);
    let mut z = Vec::with_capacity(n_paths * grid.n_nodes());
    let mut w = Vec::with_capacity(z.capacity());
    let mut wp = Vec::with_capacity(z.capacity());
    for r in rows {
        z.extend_from_slice(&r.z);
        w.extend(cumulate(&r.dw));
        wp.extend(cumulate(&r.dw_perp));
    }
    let s_hat0: Vec<f64> = z.iter().map(|z| 1.0 / z).collect();
    b.insert(channel::DISCOUNTED_NP, z.clone(), true)?;
    b.insert(channel::Z, z, true)?;
    b.insert(channel::S_HAT_0, s_hat0, true)?;
    b.insert(channel::ALPHA, alpha_row.repeat(n_paths), true)?;
    b.insert(channel::GAMMA, alpha_row.repeat(n_paths), true)?;
    b.insert(channel::W, w, false)?;
    b.insert(channel::W_PERP, wp, false)?;
    Ok(b)
}

/// Log-coefficients `(c_W, c_perp)` of `dS^j / S^j = c_W dW + c_perp dW_perp`
/// for a volatility row and market price of risk theta.
pub fn benchmarked_loadings(vol_row: [f64; 2], theta: [f64; 2]) -> Option<(f64, f64)> {
    let n = theta[0].hypot(theta[1]);
    if !(n > 0.0) {
        return None;
    }
    let cw = (vol_row[0] * theta[0] + vol_row[1] * theta[1]) / n - n;
    let cp = (vol_row[0] * theta[1] - vol_row[1] * theta[0]) / n;
    Some((cw, cp))
}

/// Add benchmarked primary accounts `s_hat_1`, `s_hat_2` by log-Euler
/// integration against the `W`, `W_perp` channels. Theta channels are
/// added from the asset coefficients when absent.
pub fn simulate_primary_accounts(paths: &mut PathBundle, assets: &dyn AssetCoefficients, r: f64) -> Result<()> {
    let grid = paths.grid;
    let n = grid.n_nodes();
    let dt = grid.dt();
    if !paths.has(channel::THETA1) || !paths.has(channel::THETA2) {
        let theta = theta_on_grid(assets, r, &grid)?;
        insert_theta(paths, &theta)?;
    }
    let (w, wp) = (paths.channel(channel::W)?, paths.channel(channel::W_PERP)?);
    let (t1, t2) = (paths.channel(channel::THETA1)?, paths.channel(channel::THETA2)?);
    let s_hat0 = paths.channel(channel::S_HAT_0)?;
    let s0 = assets.s0();
    let discount = (-r * grid.t0).exp();
    let mut out = [vec![0.0; w.len()], vec![0.0; w.len()]];
    for j in 0..2 {
        for p in 0..paths.n_paths {
            let base = p * n;
            out[j][base] = s0[j] * s_hat0[base] * discount;
            for i in 0..n - 1 {
                let k = base + i;
                let vol = assets.vol(grid.time(i));
                let (cw, cp) = benchmarked_loadings(vol[j], [t1[k], t2[k]])
                    .ok_or(Error::ZeroMarketPriceOfRisk { path: p, node: i })?;
                let x = cw * (w[k + 1] - w[k]) + cp * (wp[k + 1] - wp[k]) - 0.5 * (cw * cw + cp * cp) * dt;
                out[j][k + 1] = out[j][k] * x.exp();
            }
        }
    }
    let [a, b] = out;
    paths.insert(channel::S_HAT_1, a, true)?;
    paths.insert(channel::S_HAT_2, b, true)
}
