//! Polynomial least squares for Monte Carlo conditional expectations.
//!
//! Normal equations are accumulated over fixed-size row chunks whose partial
//! sums are combined in chunk order, so the fitted coefficients do not depend
//! on the number of worker threads.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::stats::{mean, variance};

/// Ridge added to the equilibrated Gram matrix when it is rank deficient.
pub const RIDGE: f64 = 1e-8;
const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    /// Total degree of the monomials in the state variables.
    pub degree: usize,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self { degree: 3 }
    }
}

/// Monomials of total degree `<= degree` in standardized state variables.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyBasis {
    exponents: Vec<Vec<u32>>,
    center: Vec<f64>,
    scale: Vec<f64>,
}

fn exponent_sets(vars: usize, degree: usize) -> Vec<Vec<u32>> {
    let mut out = vec![vec![0u32; vars]];
    for total in 1..=degree as u32 {
        let mut cur = vec![0u32; vars];
        fill(&mut out, &mut cur, 0, total);
    }
    out
}

fn fill(out: &mut Vec<Vec<u32>>, cur: &mut Vec<u32>, k: usize, rest: u32) {
    if k + 1 == cur.len() {
        cur[k] = rest;
        out.push(cur.clone());
        cur[k] = 0;
        return;
    }
    for e in (0..=rest).rev() {
        cur[k] = e;
        fill(out, cur, k + 1, rest - e);
    }
    cur[k] = 0;
}

impl PolyBasis {
    /// Basis on the given state samples; variables with zero spread only
    /// contribute the constant.
    pub fn fit(vars: &[&[f64]], degree: usize) -> Self {
        let mut center = Vec::new();
        let mut scale = Vec::new();
        let mut live = Vec::new();
        for v in vars {
            let sd = variance(v).sqrt();
            if sd > 0.0 && sd.is_finite() {
                live.push(true);
                center.push(mean(v));
                scale.push(1.0 / sd);
            } else {
                live.push(false);
                center.push(0.0);
                scale.push(0.0);
            }
        }
        let n_live = live.iter().filter(|l| **l).count();
        let exponents = if n_live == 0 || degree == 0 {
            vec![vec![0; vars.len()]]
        } else {
            exponent_sets(n_live, degree)
                .into_iter()
                .map(|e| {
                    let mut it = e.into_iter();
                    live.iter().map(|&l| if l { it.next().unwrap() } else { 0 }).collect()
                })
                .collect()
        };
        Self { exponents, center, scale }
    }

    /// The constant basis only.
    pub fn constant(vars: usize) -> Self {
        Self {
            exponents: vec![vec![0; vars]],
            center: vec![0.0; vars],
            scale: vec![0.0; vars],
        }
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        for (o, e) in out.iter_mut().zip(&self.exponents) {
            let mut v = 1.0;
            for (k, &p) in e.iter().enumerate() {
                if p > 0 {
                    v *= ((x[k] - self.center[k]) * self.scale[k]).powi(p as i32);
                }
            }
            *o = v;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquaresFit {
    pub coef: Vec<f64>,
    /// The ridge fallback was used because the Gram matrix was rank deficient.
    pub ridge_used: bool,
}

/// Fit `y ~ X b` where row `i` of X is produced by `row(i, &mut buf)`.
pub fn least_squares<F>(n_rows: usize, n_cols: usize, row: F, y: &[f64]) -> Result<LeastSquaresFit>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    if y.len() != n_rows {
        return Err(Error::ShapeMismatch(format!("{} targets for {n_rows} rows", y.len())));
    }
    if n_rows == 0 || n_cols == 0 {
        return invalid("empty regression");
    }
    let n_chunks = n_rows.div_ceil(CHUNK);
    let partial: Vec<(Vec<f64>, Vec<f64>)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut g = vec![0.0; n_cols * n_cols];
            let mut b = vec![0.0; n_cols];
            let mut buf = vec![0.0; n_cols];
            for i in c * CHUNK..((c + 1) * CHUNK).min(n_rows) {
                row(i, &mut buf);
                for a in 0..n_cols {
                    let xa = buf[a];
                    b[a] += xa * y[i];
                    for bb in a..n_cols {
                        g[a * n_cols + bb] += xa * buf[bb];
                    }
                }
            }
            (g, b)
        })
        .collect();
    let mut gram = vec![0.0; n_cols * n_cols];
    let mut rhs = vec![0.0; n_cols];
    for (g, b) in &partial {
        for k in 0..gram.len() {
            gram[k] += g[k];
        }
        for k in 0..n_cols {
            rhs[k] += b[k];
        }
    }
    for a in 0..n_cols {
        for bb in 0..a {
            gram[a * n_cols + bb] = gram[bb * n_cols + a];
        }
    }
    solve_normal(n_cols, gram, rhs)
}

fn solve_normal(n: usize, gram: Vec<f64>, rhs: Vec<f64>) -> Result<LeastSquaresFit> {
    // Equilibrate to a unit diagonal; columns that vanish identically get
    // coefficient zero.
    let d: Vec<f64> = (0..n)
        .map(|k| {
            let g = gram[k * n + k];
            if g > 0.0 {
                1.0 / g.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut m = DMatrix::from_fn(n, n, |a, b| gram[a * n + b] * d[a] * d[b]);
    for k in 0..n {
        if d[k] == 0.0 {
            m[(k, k)] = 1.0;
        }
    }
    let rb = DVector::from_fn(n, |a, _| rhs[a] * d[a]);
    let eig = m.clone().symmetric_eigen().eigenvalues;
    let (emin, emax) = (eig.min(), eig.max());
    let mut ridge_used = false;
    if !(emin > 1e-12 * emax) {
        ridge_used = true;
        for k in 0..n {
            m[(k, k)] += RIDGE;
        }
    }
    let sol = m
        .cholesky()
        .map(|c| c.solve(&rb))
        .ok_or_else(|| Error::Numerical("normal equations are not positive definite".into()))?;
    let coef: Vec<f64> = (0..n).map(|k| sol[k] * d[k]).collect();
    if coef.iter().any(|c| !c.is_finite()) {
        return Err(Error::Numerical("non-finite regression coefficients".into()));
    }
    Ok(LeastSquaresFit { coef, ridge_used })
}

/// Conditional expectation of `y` given the state variables, evaluated at
/// the sample points.
pub fn conditional_expectation(vars: &[&[f64]], y: &[f64], basis: BasisConfig) -> Result<(Vec<f64>, bool)> {
    let n = y.len();
    if vars.iter().any(|v| v.len() != n) {
        return Err(Error::ShapeMismatch("state variables and targets differ in length".into()));
    }
    let pb = PolyBasis::fit(vars, basis.degree);
    let k = pb.len();
    let row = |i: usize, out: &mut [f64]| {
        let x: Vec<f64> = vars.iter().map(|v| v[i]).collect();
        pb.eval(&x, out);
    };
    let fit = least_squares(n, k, row, y)?;
    let fitted = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut buf = vec![0.0; k];
            row(i, &mut buf);
            buf.iter().zip(&fit.coef).map(|(a, b)| a * b).sum()
        })
        .collect();
    Ok((fitted, fit.ridge_used))
}
