//! Time grids, per-path random streams, Wiener increments, exact squared
//! Bessel transitions and a full-truncation Euler step.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::distributions::{ncx2_sample, NcChiSqParams};
use crate::error::{invalid, Error, Result};

/// Uniform grid `t_i = t0 + i (t_end - t0) / n_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub t_end: f64,
    pub n_steps: usize,
}

pub fn make_time_grid(t0: f64, t_end: f64, n_steps: usize) -> Result<TimeGrid> {
    if !t0.is_finite() || !t_end.is_finite() {
        return invalid(format!("grid endpoints must be finite, got [{t0}, {t_end}]"));
    }
    if t0 >= t_end {
        return invalid(format!("grid needs t0 < T, got t0 = {t0}, T = {t_end}"));
    }
    if n_steps == 0 {
        return invalid("grid needs at least one step");
    }
    Ok(TimeGrid { t0, t_end, n_steps })
}

impl TimeGrid {
    pub fn dt(&self) -> f64 {
        (self.t_end - self.t0) / self.n_steps as f64
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    /// Node time; the last node is exactly `t_end`.
    pub fn time(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.t_end
        } else {
            self.t0 + i as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_nodes()).map(|i| self.time(i)).collect()
    }
}

/// Stream domains. Each path owns one stream per domain, so adding a new
/// source of randomness never shifts the draws of an existing one.
pub mod domain {
    pub const WIENER: u64 = 0;
    pub const DEFAULT: u64 = 1;
    pub const AUX: u64 = 2;
}

/// A reproducible random stream identified by `(master_seed, stream_id)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self { master_seed, stream_id }
    }

    /// Stream for `path` within `domain`.
    pub fn for_path(master_seed: u64, domain: u64, path: usize) -> Self {
        debug_assert!((path as u64) < (1u64 << 48));
        Self::new(master_seed, (domain << 48) | path as u64)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// I.i.d. `N(0, dt)` increments, laid out step-major: `out[i * dims + k]`.
pub fn sample_wiener_increments(grid: &TimeGrid, dims: usize, stream: RngStream) -> Result<Vec<f64>> {
    if dims == 0 {
        return invalid("need at least one Wiener dimension");
    }
    let mut rng = stream.rng();
    let sd = grid.dt().sqrt();
    Ok((0..grid.n_steps * dims)
        .map(|_| {
            let n: f64 = StandardNormal.sample(&mut rng);
            sd * n
        })
        .collect())
}

/// Exact BESQ^dim transition over a clock increment `ds`:
/// `Z' = ds * chi'^2(dim, z / ds)`, mean `z + dim ds`.
pub fn besq_exact_step<R: rand::Rng + ?Sized>(z: f64, dim: f64, ds: f64, rng: &mut R) -> Result<f64> {
    if !(dim > 2.0) {
        return invalid(format!("Bessel dimension must exceed 2, got {dim}"));
    }
    if !(ds > 0.0) || !ds.is_finite() {
        return invalid(format!("clock increment must be positive, got {ds}"));
    }
    if !(z >= 0.0) {
        return invalid(format!("BESQ state must be nonnegative, got {z}"));
    }
    let params = NcChiSqParams::new(dim, z / ds)?;
    Ok(ds * ncx2_sample(&params, rng)?)
}

/// Clip the declared-nonnegative components at zero.
pub fn truncate(state: &[f64], nonnegative: &[bool]) -> Vec<f64> {
    state
        .iter()
        .zip(nonnegative)
        .map(|(&x, &nn)| if nn { x.max(0.0) } else { x })
        .collect()
}

/// One Euler step `x + b dt + sigma dW`. `drift` and `diffusion` must have
/// been evaluated at `truncate(state, nonnegative)`; `diffusion` is
/// row-major `state.len() x dw.len()`. Nonnegative components are clipped
/// after the step.
pub fn euler_step_full_truncation(
    state: &[f64],
    nonnegative: &[bool],
    drift: &[f64],
    diffusion: &[f64],
    dw: &[f64],
    dt: f64,
) -> Result<Vec<f64>> {
    let n = state.len();
    let m = dw.len();
    if nonnegative.len() != n || drift.len() != n || diffusion.len() != n * m {
        return Err(Error::ShapeMismatch(format!(
            "state {n}, flags {}, drift {}, diffusion {} (expected {}), noise {m}",
            nonnegative.len(),
            drift.len(),
            diffusion.len(),
            n * m
        )));
    }
    if !(dt > 0.0) {
        return invalid(format!("time step must be positive, got {dt}"));
    }
    let x = truncate(state, nonnegative);
    Ok((0..n)
        .map(|r| {
            let noise: f64 = (0..m).map(|c| diffusion[r * m + c] * dw[c]).sum();
            let next = x[r] + drift[r] * dt + noise;
            if nonnegative[r] {
                next.max(0.0)
            } else {
                next
            }
        })
        .collect())
}

/// Standard channel names.
pub mod channel {
    pub const Z: &str = "Z";
    pub const GAMMA: &str = "gamma";
    pub const ALPHA: &str = "alpha";
    pub const DISCOUNTED_NP: &str = "discounted_np";
    pub const S_HAT_0: &str = "s_hat_0";
    pub const S_HAT_1: &str = "s_hat_1";
    pub const S_HAT_2: &str = "s_hat_2";
    pub const W: &str = "W";
    pub const W_PERP: &str = "W_perp";
    pub const W1: &str = "W1";
    pub const W2: &str = "W2";
    pub const W_TILDE: &str = "W_tilde";
    pub const THETA1: &str = "theta1";
    pub const THETA2: &str = "theta2";
    pub const DEFAULT: &str = "default_indicator";
    pub const TAU: &str = "tau";

    pub fn s_hat(j: usize) -> String {
        format!("s_hat_{j}")
    }
}

/// Per-path arrays over grid nodes, one row per path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    pub grid: TimeGrid,
    pub n_paths: usize,
    channels: BTreeMap<String, Vec<f64>>,
    nonnegative: BTreeSet<String>,
}

impl PathBundle {
    pub fn new(grid: TimeGrid, n_paths: usize) -> Self {
        Self {
            grid,
            n_paths,
            channels: BTreeMap::new(),
            nonnegative: BTreeSet::new(),
        }
    }

    /// Insert a row-major `n_paths x n_nodes` channel.
    pub fn insert(&mut self, name: &str, data: Vec<f64>, nonnegative: bool) -> Result<()> {
        let expected = self.n_paths * self.grid.n_nodes();
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "channel `{name}` has {} values, expected {expected}",
                data.len()
            )));
        }
        if nonnegative {
            if let Some(pos) = data.iter().position(|v| !(*v >= 0.0)) {
                return Err(Error::Numerical(format!(
                    "channel `{name}` declared nonnegative has value {} at path {}, node {}",
                    data[pos],
                    pos / self.grid.n_nodes(),
                    pos % self.grid.n_nodes()
                )));
            }
            self.nonnegative.insert(name.to_string());
        }
        self.channels.insert(name.to_string(), data);
        Ok(())
    }

    /// Insert a channel from per-path rows.
    pub fn insert_rows(&mut self, name: &str, rows: Vec<Vec<f64>>, nonnegative: bool) -> Result<()> {
        if rows.len() != self.n_paths {
            return Err(Error::ShapeMismatch(format!(
                "channel `{name}` has {} rows, expected {}",
                rows.len(),
                self.n_paths
            )));
        }
        self.insert(name, rows.concat(), nonnegative)
    }

    pub fn has(&self, name: &str) -> bool {
        self.channels.contains_key(name)
    }

    pub fn is_nonnegative(&self, name: &str) -> bool {
        self.nonnegative.contains(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.channels.keys().map(String::as_str)
    }

    pub fn channel(&self, name: &str) -> Result<&[f64]> {
        self.channels
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingChannel(name.to_string()))
    }

    pub fn path(&self, name: &str, p: usize) -> Result<&[f64]> {
        let n = self.grid.n_nodes();
        Ok(&self.channel(name)?[p * n..(p + 1) * n])
    }

    /// Values of a channel across paths at node `i`.
    pub fn column(&self, name: &str, i: usize) -> Result<Vec<f64>> {
        let n = self.grid.n_nodes();
        if i >= n {
            return invalid(format!("node {i} outside grid of {n} nodes"));
        }
        let data = self.channel(name)?;
        Ok((0..self.n_paths).map(|p| data[p * n + i]).collect())
    }

    /// One-step increments of a channel across paths for step `i -> i+1`.
    pub fn increments(&self, name: &str, i: usize) -> Result<Vec<f64>> {
        let n = self.grid.n_nodes();
        if i + 1 >= n {
            return invalid(format!("step {i} outside grid of {} steps", n - 1));
        }
        let data = self.channel(name)?;
        Ok((0..self.n_paths)
            .map(|p| data[p * n + i + 1] - data[p * n + i])
            .collect())
    }
}

/// Cumulate increments into a path starting at zero.
pub fn cumulate(increments: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(increments.len() + 1);
    let mut acc = 0.0;
    out.push(acc);
    for d in increments {
        acc += d;
        out.push(acc);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_two_sample, mean_stderr};
    use proptest::prelude::*;

    #[test]
    fn grid_nodes() {
        let g = make_time_grid(0.0, 1.0, 4).unwrap();
        assert_eq!(g.times(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(make_time_grid(0.0, 1.0, 1).unwrap().times(), vec![0.0, 1.0]);
        assert!(make_time_grid(0.5, 0.5, 4).is_err());
        assert!(make_time_grid(1.0, 0.0, 4).is_err());
        assert!(make_time_grid(0.0, f64::INFINITY, 4).is_err());
        assert!(make_time_grid(0.0, 1.0, 0).is_err());
    }

    #[test]
    fn wiener_moments() {
        let g = make_time_grid(0.0, 10_000.0, 1_000_000).unwrap();
        let dw = sample_wiener_increments(&g, 1, RngStream::new(7, 0)).unwrap();
        let m = mean_stderr(&dw);
        assert!(m.z_score(0.0).abs() < 4.0);
        let sq: Vec<f64> = dw.iter().map(|x| x * x).collect();
        let v = mean_stderr(&sq);
        assert!(v.z_score(0.01).abs() < 4.0, "variance z {}", v.z_score(0.01));
    }

    #[test]
    fn wiener_is_reproducible_and_streams_differ() {
        let g = make_time_grid(0.0, 1.0, 16).unwrap();
        let a = sample_wiener_increments(&g, 2, RngStream::new(1, 3)).unwrap();
        let b = sample_wiener_increments(&g, 2, RngStream::new(1, 3)).unwrap();
        let c = sample_wiener_increments(&g, 2, RngStream::new(1, 4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(sample_wiener_increments(&g, 0, RngStream::new(1, 3)).is_err());
    }

    #[test]
    fn besq_mean() {
        let mut rng = RngStream::new(11, 0).rng();
        let draws: Vec<f64> = (0..1_000_000)
            .map(|_| besq_exact_step(1.0, 4.0, 0.1, &mut rng).unwrap())
            .collect();
        let m = mean_stderr(&draws);
        assert!(m.z_score(1.4).abs() < 4.0, "z = {}", m.z_score(1.4));
        let var = crate::stats::variance(&draws);
        // 2 dim ds^2 + 4 z ds
        assert!((var - 0.48).abs() < 0.01, "var = {var}");
    }

    #[test]
    fn besq_from_zero_is_positive() {
        let mut rng = RngStream::new(5, 0).rng();
        for _ in 0..10_000 {
            assert!(besq_exact_step(0.0, 4.0, 0.1, &mut rng).unwrap() > 0.0);
        }
        assert!(besq_exact_step(1.0, 2.0, 0.1, &mut rng).is_err());
        assert!(besq_exact_step(1.0, 4.0, 0.0, &mut rng).is_err());
    }

    /// Fine-step Euler of dZ = (dim/4) dt + sqrt(Z) dW, whose clock is t/4.
    fn euler_besq(z0: f64, dim: f64, t: f64, steps: usize, rng: &mut ChaCha8Rng) -> f64 {
        let dt = t / steps as f64;
        let sd = dt.sqrt();
        let mut z = z0;
        for _ in 0..steps {
            let n: f64 = StandardNormal.sample(rng);
            z = euler_step_full_truncation(&[z], &[true], &[dim / 4.0], &[z.max(0.0).sqrt()], &[sd * n], dt)
                .unwrap()[0];
        }
        z
    }

    #[test]
    fn besq_matches_euler_oracle() {
        let n = 100_000;
        let mut rng = RngStream::new(21, 0).rng();
        let exact: Vec<f64> = (0..n)
            .map(|_| besq_exact_step(1.0, 4.0, 0.1, &mut rng).unwrap())
            .collect();
        let mut rng = RngStream::new(21, 1).rng();
        let euler: Vec<f64> = (0..n).map(|_| euler_besq(1.0, 4.0, 0.4, 400, &mut rng)).collect();
        let d = ks_two_sample(&exact, &euler);
        assert!(d < 0.01, "KS distance {d}");
    }

    #[test]
    fn euler_basic_cases() {
        let s = euler_step_full_truncation(&[1.5], &[false], &[0.0], &[0.0], &[0.3], 0.1).unwrap();
        assert_eq!(s, vec![1.5]);
        let s = euler_step_full_truncation(&[1.0], &[false], &[2.0], &[0.0], &[0.0], 0.5).unwrap();
        assert_eq!(s, vec![2.0]);
        let s = euler_step_full_truncation(&[0.1], &[true], &[0.0], &[1.0], &[-5.0], 0.1).unwrap();
        assert_eq!(s, vec![0.0]);
        assert!(euler_step_full_truncation(&[1.0, 2.0], &[false], &[0.0], &[0.0], &[0.0], 0.1).is_err());
    }

    #[test]
    fn bundle_shape_and_sign_checks() {
        let g = make_time_grid(0.0, 1.0, 2).unwrap();
        let mut b = PathBundle::new(g, 2);
        assert!(b.insert("x", vec![0.0; 5], false).is_err());
        assert!(b.insert("x", vec![1.0, 1.0, -1.0, 1.0, 1.0, 1.0], true).is_err());
        b.insert("x", vec![1.0, 2.0, 4.0, 0.0, 1.0, 3.0], true).unwrap();
        assert_eq!(b.path("x", 1).unwrap(), &[0.0, 1.0, 3.0]);
        assert_eq!(b.column("x", 2).unwrap(), vec![4.0, 3.0]);
        assert_eq!(b.increments("x", 0).unwrap(), vec![1.0, 1.0]);
        assert!(matches!(b.channel("y"), Err(Error::MissingChannel(_))));
    }

    proptest! {
        #[test]
        fn grid_strictly_increasing(t0 in -5.0f64..5.0, len in 1e-3f64..50.0, n in 1usize..500) {
            let g = make_time_grid(t0, t0 + len, n).unwrap();
            let t = g.times();
            prop_assert_eq!(t.len(), n + 1);
            prop_assert!(t.windows(2).all(|w| w[1] > w[0]));
            prop_assert_eq!(t[n], t0 + len);
        }

        #[test]
        fn truncation_never_negative(x in -10.0f64..10.0, b in -5.0f64..5.0, s in 0.0f64..3.0, dw in -3.0f64..3.0) {
            let next = euler_step_full_truncation(&[x], &[true], &[b], &[s], &[dw], 0.1).unwrap();
            prop_assert!(next[0] >= 0.0);
        }

        #[test]
        fn besq_draw_is_nonnegative(z in 0.0f64..20.0, dim in 2.01f64..8.0, ds in 1e-4f64..2.0, seed in 0u64..1000) {
            let mut rng = RngStream::new(seed, 0).rng();
            prop_assert!(besq_exact_step(z, dim, ds, &mut rng).unwrap() >= 0.0);
        }
    }
}
