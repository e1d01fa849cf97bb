//! Exact decompositions and optimality checks on a tree.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::{json, Value};

use super::linalg::least_norm_solve;
use super::scalar::Scalar;
use super::{
    Filtration, Information, TreeModel, TreeProcess, TreeVecProcess, BRUTE_FORCE_MAX_BRANCHES,
    BRUTE_FORCE_MAX_LEVELS,
};
use crate::error::{Error, Result};

fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter()
        .zip(b)
        .fold(S::zero(), |acc, (x, y)| acc + x.clone() * y.clone())
}

fn abs_max<S: Scalar>(values: impl IntoIterator<Item = S>) -> S {
    values.into_iter().fold(S::zero(), |m, v| {
        let a = v.abs_value();
        if a > m {
            a
        } else {
            m
        }
    })
}

fn zeros_vec<S: Scalar>(tree: &TreeModel<S>, d: usize) -> TreeVecProcess<S> {
    vec![vec![vec![S::zero(); d]; tree.n_leaves()]; tree.horizon + 1]
}

fn zeros<S: Scalar>(tree: &TreeModel<S>) -> TreeProcess<S> {
    vec![vec![S::zero(); tree.n_leaves()]; tree.horizon + 1]
}

fn check_vec_shape<S: Scalar>(tree: &TreeModel<S>, x: &TreeVecProcess<S>, what: &str) -> Result<usize> {
    let d = x.first().and_then(|r| r.first()).map_or(0, Vec::len);
    let ok = x.len() == tree.horizon + 1
        && x.iter().all(|r| r.len() == tree.n_leaves() && r.iter().all(|v| v.len() == d));
    if ok && d > 0 {
        Ok(d)
    } else {
        Err(Error::ShapeMismatch(format!(
            "{what} must have {} dates of {} leaves with a common dimension",
            tree.horizon + 1,
            tree.n_leaves()
        )))
    }
}

fn check_claim<S: Scalar>(tree: &TreeModel<S>, claim: &[S]) -> Result<()> {
    if claim.len() == tree.n_leaves() {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "claim has {} values for {} leaves",
            claim.len(),
            tree.n_leaves()
        )))
    }
}

fn column<S: Scalar>(x: &TreeVecProcess<S>, t: usize, k: usize) -> Vec<S> {
    x[t].iter().map(|v| v[k].clone()).collect()
}

/// Check that `xi[t]` is known one date earlier, for every step.
fn check_predictable<S: Scalar>(tree: &TreeModel<S>, filt: &Filtration, xi: &TreeVecProcess<S>) -> Result<()> {
    let d = check_vec_shape(tree, xi, "strategy")?;
    for t in 1..=tree.horizon {
        for k in 0..d {
            if !tree.is_measurable(filt, t - 1, &column(xi, t, k)) {
                return Err(Error::Tree(format!("strategy at step {t} is not predictable")));
            }
        }
    }
    Ok(())
}

/// One step into date `step`, taken from atom `atom` at date `step - 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepAtom {
    pub step: usize,
    pub atom: usize,
    pub rank: usize,
    pub nodes: Vec<String>,
}

/// Doob decomposition `X = X_0 + M + V` with `M` a martingale and `V`
/// predictable, both null at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Doob<S> {
    pub m: TreeVecProcess<S>,
    pub v: TreeVecProcess<S>,
}

pub fn doob_decomposition<S: Scalar>(
    tree: &TreeModel<S>,
    info: Information,
    x: &TreeVecProcess<S>,
) -> Result<Doob<S>> {
    let d = check_vec_shape(tree, x, "process")?;
    let filt = tree.filtration(info);
    for t in 0..=tree.horizon {
        for k in 0..d {
            if !tree.is_measurable(filt, t, &column(x, t, k)) {
                return Err(Error::Tree(format!("process is not adapted at date {t}")));
            }
        }
    }
    let mut m = zeros_vec(tree, d);
    let mut v = zeros_vec(tree, d);
    for t in 1..=tree.horizon {
        for (a, atom) in filt.atoms[t - 1].iter().enumerate() {
            let drift: Vec<S> = (0..d)
                .map(|k| tree.atom_expect(filt, t - 1, a, |l| x[t][l][k].clone() - x[t - 1][l][k].clone()))
                .collect();
            for &l in atom {
                for k in 0..d {
                    let dx = x[t][l][k].clone() - x[t - 1][l][k].clone();
                    v[t][l][k] = v[t - 1][l][k].clone() + drift[k].clone();
                    m[t][l][k] = m[t - 1][l][k].clone() + dx - drift[k].clone();
                }
            }
        }
    }
    Ok(Doob { m, v })
}

/// Output of the structure-condition solve.
#[derive(Debug, Clone)]
pub struct StructureResult<S> {
    /// `lambda[t]` applies to the step into date `t`; `lambda[0]` is zero.
    pub lambda: TreeVecProcess<S>,
    pub k_hat: TreeProcess<S>,
    pub z_hat: TreeProcess<S>,
    pub degenerate: Vec<StepAtom>,
    /// Largest |E[X_t Ẑ_t | F_{t-1}] - X_{t-1} Ẑ_{t-1}| over steps and assets.
    pub xz_martingale_residual: S,
    pub xz_martingale: bool,
    pub z_hat_positive: bool,
}

/// Solve `⟨M⟩ λ = A` step by step for the assets of `tree`, accumulate the
/// mean-variance tradeoff and build the discrete stochastic exponential.
pub fn structure_condition<S: Scalar>(tree: &TreeModel<S>, info: Information) -> Result<StructureResult<S>> {
    let x = tree.asset_process();
    let doob = doob_decomposition(tree, info, &x)?;
    let filt = tree.filtration(info);
    let d = tree.dims;
    let mut lambda = zeros_vec(tree, d);
    let mut k_hat = zeros(tree);
    let mut z_hat = zeros(tree);
    z_hat[0] = vec![S::one(); tree.n_leaves()];
    let mut degenerate = Vec::new();
    for t in 1..=tree.horizon {
        for (a, atom) in filt.atoms[t - 1].iter().enumerate() {
            let dm = |l: usize, k: usize| doob.m[t][l][k].clone() - doob.m[t - 1][l][k].clone();
            let cov: Vec<Vec<S>> = (0..d)
                .map(|j| (0..d).map(|k| tree.atom_expect(filt, t - 1, a, |l| dm(l, j) * dm(l, k))).collect())
                .collect();
            let l0 = atom[0];
            let drift: Vec<S> = (0..d)
                .map(|k| doob.v[t][l0][k].clone() - doob.v[t - 1][l0][k].clone())
                .collect();
            let sol = least_norm_solve(&cov, &drift).ok_or_else(|| {
                Error::StructureCondition(format!(
                    "drift at step {t} from {:?} is outside the range of the conditional covariance",
                    tree.atom_ids(filt, t - 1, a)
                ))
            })?;
            if sol.rank < d {
                degenerate.push(StepAtom { step: t, atom: a, rank: sol.rank, nodes: tree.atom_ids(filt, t - 1, a) });
            }
            let cov_l: Vec<S> = (0..d).map(|j| dot(&cov[j], &sol.x)).collect();
            let tradeoff = dot(&sol.x, &cov_l);
            for &l in atom {
                let dml: Vec<S> = (0..d).map(|k| dm(l, k)).collect();
                lambda[t][l] = sol.x.clone();
                k_hat[t][l] = k_hat[t - 1][l].clone() + tradeoff.clone();
                z_hat[t][l] = z_hat[t - 1][l].clone() * (S::one() - dot(&sol.x, &dml));
            }
        }
    }
    let mut residuals = Vec::new();
    for t in 1..=tree.horizon {
        for a in 0..filt.n_atoms(t - 1) {
            let l0 = filt.atoms[t - 1][a][0];
            for k in 0..d {
                let e = tree.atom_expect(filt, t - 1, a, |l| x[t][l][k].clone() * z_hat[t][l].clone());
                residuals.push(e - x[t - 1][l0][k].clone() * z_hat[t - 1][l0].clone());
            }
            let ez = tree.atom_expect(filt, t - 1, a, |l| z_hat[t][l].clone());
            residuals.push(ez - z_hat[t - 1][l0].clone());
        }
    }
    let xz_martingale_residual = abs_max(residuals);
    let z_hat_positive = z_hat
        .iter()
        .all(|row| row.iter().all(|z| *z > S::zero() && !z.is_negligible()));
    Ok(StructureResult {
        lambda,
        k_hat,
        z_hat,
        degenerate,
        xz_martingale: xz_martingale_residual.is_negligible(),
        xz_martingale_residual,
        z_hat_positive,
    })
}

/// Decomposition `H = V_0 + Σ ξ ΔŜ + L_T` on a tree.
#[derive(Debug, Clone)]
pub struct TreeDecomposition<S> {
    pub info: Information,
    /// Value process; `value[0]` is the initial capital on each F_0-atom.
    pub value: TreeProcess<S>,
    /// `xi[t]` is held over the step into date `t`; `xi[0]` is zero.
    pub xi: TreeVecProcess<S>,
    /// Cumulative trading gains `Σ_{s≤t} ξ_s ΔŜ_s`.
    pub gains: TreeProcess<S>,
    /// Cost process `V_t - gains_t`.
    pub cost: TreeProcess<S>,
    /// Residual `L_t = C_t - C_0`.
    pub residual: TreeProcess<S>,
    pub degenerate: Vec<StepAtom>,
    /// Largest leafwise |H - V_0 - gains_T - L_T|.
    pub identity_residual: S,
}

impl<S: Scalar> TreeDecomposition<S> {
    /// True when the residual vanishes at every leaf.
    pub fn is_replicating(&self) -> bool {
        self.residual
            .last()
            .is_some_and(|row| row.iter().all(Scalar::is_negligible))
    }
}

/// Cumulative gains of a strategy against the tree's assets.
pub fn trading_gains<S: Scalar>(tree: &TreeModel<S>, xi: &TreeVecProcess<S>) -> TreeProcess<S> {
    let s = tree.asset_process();
    let mut g = zeros(tree);
    for t in 1..=tree.horizon {
        for l in 0..tree.n_leaves() {
            let ds: Vec<S> = (0..tree.dims)
                .map(|k| s[t][l][k].clone() - s[t - 1][l][k].clone())
                .collect();
            g[t][l] = g[t - 1][l].clone() + dot(&xi[t][l], &ds);
        }
    }
    g
}

fn assemble<S: Scalar>(
    tree: &TreeModel<S>,
    claim: &[S],
    info: Information,
    value: TreeProcess<S>,
    xi: TreeVecProcess<S>,
    degenerate: Vec<StepAtom>,
) -> TreeDecomposition<S> {
    let gains = trading_gains(tree, &xi);
    let cost: TreeProcess<S> = value
        .iter()
        .zip(&gains)
        .map(|(v, g)| v.iter().zip(g).map(|(a, b)| a.clone() - b.clone()).collect())
        .collect();
    let residual: TreeProcess<S> = cost
        .iter()
        .map(|c| c.iter().zip(&cost[0]).map(|(a, b)| a.clone() - b.clone()).collect())
        .collect();
    let n = tree.horizon;
    let identity_residual = abs_max((0..tree.n_leaves()).map(|l| {
        claim[l].clone() - value[0][l].clone() - gains[n][l].clone() - residual[n][l].clone()
    }));
    TreeDecomposition { info, value, xi, gains, cost, residual, degenerate, identity_residual }
}

/// Backward induction for the locally risk-minimizing decomposition: at each
/// atom, ξ solves Cov(ΔŜ, ΔŜ) ξ = Cov(ΔŜ, V_t) and
/// V_{t-1} = E[V_t] - ξ·E[ΔŜ].
pub fn fs_decompose<S: Scalar>(tree: &TreeModel<S>, claim: &[S], info: Information) -> Result<TreeDecomposition<S>> {
    check_claim(tree, claim)?;
    let filt = tree.filtration(info);
    let s = tree.asset_process();
    let d = tree.dims;
    let mut value = zeros(tree);
    value[tree.horizon] = claim.to_vec();
    let mut xi = zeros_vec(tree, d);
    let mut degenerate = Vec::new();
    for t in (1..=tree.horizon).rev() {
        for (a, atom) in filt.atoms[t - 1].iter().enumerate() {
            let ds = |l: usize, k: usize| s[t][l][k].clone() - s[t - 1][l][k].clone();
            let mean_ds: Vec<S> = (0..d).map(|k| tree.atom_expect(filt, t - 1, a, |l| ds(l, k))).collect();
            let mean_v = tree.atom_expect(filt, t - 1, a, |l| value[t][l].clone());
            let cov: Vec<Vec<S>> = (0..d)
                .map(|j| {
                    (0..d)
                        .map(|k| {
                            tree.atom_expect(filt, t - 1, a, |l| ds(l, j) * ds(l, k))
                                - mean_ds[j].clone() * mean_ds[k].clone()
                        })
                        .collect()
                })
                .collect();
            let rhs: Vec<S> = (0..d)
                .map(|j| {
                    tree.atom_expect(filt, t - 1, a, |l| ds(l, j) * value[t][l].clone())
                        - mean_ds[j].clone() * mean_v.clone()
                })
                .collect();
            let sol = least_norm_solve(&cov, &rhs).ok_or_else(|| {
                Error::Numerical(format!("normal equations at step {t} are inconsistent"))
            })?;
            if sol.rank < d {
                degenerate.push(StepAtom { step: t, atom: a, rank: sol.rank, nodes: tree.atom_ids(filt, t - 1, a) });
            }
            let v_prev = mean_v - dot(&sol.x, &mean_ds);
            for &l in atom {
                value[t - 1][l] = v_prev.clone();
                xi[t][l] = sol.x.clone();
            }
        }
    }
    Ok(assemble(tree, claim, info, value, xi, degenerate))
}

/// Decomposition induced by a given predictable strategy, with the value
/// process chosen so that the cost is a martingale ending at the claim.
pub fn decomposition_from_strategy<S: Scalar>(
    tree: &TreeModel<S>,
    claim: &[S],
    info: Information,
    xi: &TreeVecProcess<S>,
) -> Result<TreeDecomposition<S>> {
    check_claim(tree, claim)?;
    let filt = tree.filtration(info);
    check_predictable(tree, filt, xi)?;
    let gains = trading_gains(tree, xi);
    let n = tree.horizon;
    let terminal_cost: Vec<S> = (0..tree.n_leaves())
        .map(|l| claim[l].clone() - gains[n][l].clone())
        .collect();
    let value: TreeProcess<S> = (0..=n)
        .map(|t| {
            let c = tree.cond_exp(filt, t, &terminal_cost);
            c.into_iter().zip(&gains[t]).map(|(a, b)| a + b.clone()).collect()
        })
        .collect();
    Ok(assemble(tree, claim, info, value, xi.clone(), Vec::new()))
}

/// Add `eps` to holding `dim` over step `step` on atom `atom` of date
/// `step - 1`.
pub fn perturb_strategy<S: Scalar>(
    tree: &TreeModel<S>,
    info: Information,
    xi: &TreeVecProcess<S>,
    step: usize,
    atom: usize,
    dim: usize,
    eps: S,
) -> Result<TreeVecProcess<S>> {
    let filt = tree.filtration(info);
    if step == 0 || step > tree.horizon || atom >= filt.n_atoms(step - 1) || dim >= tree.dims {
        return Err(Error::InvalidParameter(format!("no perturbation site ({step}, {atom}, {dim})")));
    }
    let mut out = xi.clone();
    for &l in &filt.atoms[step - 1][atom] {
        out[step][l][dim] = out[step][l][dim].clone() + eps.clone();
    }
    Ok(out)
}

/// Risk notion used by the perturbation check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskCriterion {
    /// Ŝ is a martingale: remaining cost variance E[(C_T - C_t)² | F_t].
    Global,
    /// Ŝ has drift: one-step cost variance Var(ΔC_t | F_{t-1}).
    Local,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskFailure {
    /// Date and atom where the perturbed strategy has lower risk.
    pub time: usize,
    pub atom: usize,
    pub nodes: Vec<String>,
    /// Perturbation site and size.
    pub step: usize,
    pub perturbed_atom: usize,
    pub dim: usize,
    pub eps: f64,
    pub decrease: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimalityVerdict {
    pub criterion: RiskCriterion,
    pub terminal_match: bool,
    pub cost_martingale: bool,
    pub cost_martingale_residual: f64,
    /// Orthogonality of the remaining cost to gains from the martingale part.
    pub orthogonality: bool,
    pub orthogonality_residual: f64,
    /// Same test against gains from Ŝ itself; equal to the above when Ŝ is
    /// a martingale.
    pub orthogonality_price_residual: f64,
    pub risk_minimal: bool,
    pub risk_failures: Vec<RiskFailure>,
    /// Candidate risk at each F_0-atom.
    pub initial_risk: Vec<f64>,
    pub pass: bool,
}

/// Perturbation sizes tried at every site.
pub const PERTURBATION_SIZES: [&str; 4] = ["-1", "-1/10", "1/10", "1"];

/// Exhaustive optimality check of a candidate decomposition.
pub fn brute_force_optimality<S: Scalar>(
    tree: &TreeModel<S>,
    claim: &[S],
    candidate: &TreeDecomposition<S>,
) -> Result<OptimalityVerdict> {
    if tree.horizon > BRUTE_FORCE_MAX_LEVELS || tree.max_branching() > BRUTE_FORCE_MAX_BRANCHES {
        return Err(Error::TooLarge(format!(
            "brute-force check needs at most {BRUTE_FORCE_MAX_LEVELS} levels and {BRUTE_FORCE_MAX_BRANCHES} branches"
        )));
    }
    check_claim(tree, claim)?;
    let info = candidate.info;
    let filt = tree.filtration(info);
    check_predictable(tree, filt, &candidate.xi)?;
    let n = tree.horizon;
    let d = tree.dims;
    let s = tree.asset_process();
    let doob = doob_decomposition(tree, info, &s)?;
    let cost = &candidate.cost;

    let terminal_match =
        (0..tree.n_leaves()).all(|l| (candidate.value[n][l].clone() - claim[l].clone()).is_negligible());

    // (a) martingale cost.
    let mut mart = Vec::new();
    for t in 1..=n {
        for a in 0..filt.n_atoms(t - 1) {
            let l0 = filt.atoms[t - 1][a][0];
            mart.push(tree.atom_expect(filt, t - 1, a, |l| cost[t][l].clone()) - cost[t - 1][l0].clone());
        }
    }
    let mart = abs_max(mart);

    // (b) orthogonality against indicator-times-unit perturbations at every
    // step, conditioned at every earlier date.
    let mut orth_m = Vec::new();
    let mut orth_s = Vec::new();
    for step in 1..=n {
        for (a, atom) in filt.atoms[step - 1].iter().enumerate() {
            for k in 0..d {
                for t in 0..step {
                    let b = filt.atom_of[t][atom[0]];
                    let term = |y: &TreeVecProcess<S>| {
                        let inside = |l: usize| filt.atom_of[step - 1][l] == a;
                        tree.atom_expect(filt, t, b, |l| {
                            if inside(l) {
                                (cost[n][l].clone() - cost[t][l].clone())
                                    * (y[step][l][k].clone() - y[step - 1][l][k].clone())
                            } else {
                                S::zero()
                            }
                        })
                    };
                    orth_m.push(term(&doob.m));
                    orth_s.push(term(&s));
                }
            }
        }
    }
    let orth_m = abs_max(orth_m);
    let orth_s = abs_max(orth_s);

    // (c) perturbation check.
    let drift_free = doob.v.iter().all(|row| row.iter().all(|v| v.iter().all(Scalar::is_negligible)));
    let criterion = if drift_free { RiskCriterion::Global } else { RiskCriterion::Local };
    let global_risk = |xi: &TreeVecProcess<S>, t: usize| -> Vec<S> {
        let g = trading_gains(tree, xi);
        let rest: Vec<S> = (0..tree.n_leaves())
            .map(|l| claim[l].clone() - (g[n][l].clone() - g[t][l].clone()))
            .collect();
        (0..filt.n_atoms(t))
            .map(|b| {
                let m = tree.atom_expect(filt, t, b, |l| rest[l].clone());
                tree.atom_expect(filt, t, b, |l| {
                    let e = rest[l].clone() - m.clone();
                    e.clone() * e
                })
            })
            .collect()
    };
    let local_risk = |xi: &TreeVecProcess<S>, step: usize, a: usize| -> S {
        let inc = |l: usize| {
            let ds: Vec<S> = (0..d).map(|k| s[step][l][k].clone() - s[step - 1][l][k].clone()).collect();
            candidate.value[step][l].clone() - dot(&xi[step][l], &ds)
        };
        let m = tree.atom_expect(filt, step - 1, a, inc);
        tree.atom_expect(filt, step - 1, a, |l| {
            let e = inc(l) - m.clone();
            e.clone() * e
        })
    };
    let base_global: Vec<Vec<S>> = (0..n).map(|t| global_risk(&candidate.xi, t)).collect();
    let mut failures = Vec::new();
    for step in 1..=n {
        for a in 0..filt.n_atoms(step - 1) {
            let l0 = filt.atoms[step - 1][a][0];
            for k in 0..d {
                for eps_text in PERTURBATION_SIZES {
                    let eps = S::parse(eps_text)?;
                    let xi = perturb_strategy(tree, info, &candidate.xi, step, a, k, eps.clone())?;
                    let mut record = |time: usize, atom: usize, diff: S| {
                        if diff < S::zero() && !diff.is_negligible() {
                            failures.push(RiskFailure {
                                time,
                                atom,
                                nodes: tree.atom_ids(filt, time, atom),
                                step,
                                perturbed_atom: a,
                                dim: k,
                                eps: eps.to_f64(),
                                decrease: -diff.to_f64(),
                            });
                        }
                    };
                    match criterion {
                        RiskCriterion::Global => {
                            for t in 0..step {
                                let b = filt.atom_of[t][l0];
                                let new = global_risk(&xi, t);
                                record(t, b, new[b].clone() - base_global[t][b].clone());
                            }
                        }
                        RiskCriterion::Local => {
                            let diff = local_risk(&xi, step, a) - local_risk(&candidate.xi, step, a);
                            record(step - 1, a, diff);
                        }
                    }
                }
            }
        }
    }
    let initial_risk: Vec<f64> = global_risk(&candidate.xi, 0).iter().map(Scalar::to_f64).collect();
    let cost_martingale = mart.is_negligible();
    let orthogonality = orth_m.is_negligible();
    let risk_minimal = failures.is_empty();
    Ok(OptimalityVerdict {
        criterion,
        terminal_match,
        cost_martingale,
        cost_martingale_residual: mart.to_f64(),
        orthogonality,
        orthogonality_residual: orth_m.to_f64(),
        orthogonality_price_residual: orth_s.to_f64(),
        risk_minimal,
        risk_failures: failures,
        initial_risk,
        pass: terminal_match && cost_martingale && orthogonality && risk_minimal,
    })
}

/// ξ_t = E[ξ̃_t | F_{t-1}] for an F̃-predictable strategy.
pub fn predictable_projection<S: Scalar>(tree: &TreeModel<S>, fine_xi: &TreeVecProcess<S>) -> Result<TreeVecProcess<S>> {
    if !tree.has_labels {
        return Err(Error::Tree("predictable projection needs fine labels".into()));
    }
    check_predictable(tree, &tree.fine, fine_xi)?;
    let d = check_vec_shape(tree, fine_xi, "strategy")?;
    let mut out = zeros_vec(tree, d);
    for t in 1..=tree.horizon {
        for k in 0..d {
            let proj = tree.cond_exp(&tree.coarse, t - 1, &column(fine_xi, t, k));
            for (l, v) in proj.into_iter().enumerate() {
                out[t][l][k] = v;
            }
        }
    }
    Ok(out)
}

/// Exact check of the projected decomposition under coarse information.
#[derive(Debug, Clone)]
pub struct IncompleteInfoReport<S> {
    /// Fine initial capital H̃_0 and its projection Ĥ_0 = E[H̃_0 | F_0].
    pub h_tilde0: Vec<S>,
    pub h0: Vec<S>,
    pub fine_xi: TreeVecProcess<S>,
    pub xi: TreeVecProcess<S>,
    /// L_t = E[L_T | F_t].
    pub residual: TreeProcess<S>,
    pub identity_residual: S,
    pub l0_residual: S,
    pub martingale_residual: S,
    pub orthogonality_residual: S,
    pub identity_holds: bool,
    pub martingale_null_at_zero: bool,
    pub orthogonal: bool,
    pub residual_nonzero: bool,
    /// F̃- and F-conditional drifts of ΔŜ agree.
    pub drift_agreement: bool,
    /// F̃- and F-conditional second moments of ΔŜ agree.
    pub covariance_agreement: bool,
    /// Decomposition computed directly under F, for comparison.
    pub coarse: TreeDecomposition<S>,
    pub coarse_orthogonality_residual: S,
    pub strategy_gap: S,
    pub strategies_agree: bool,
    pub pass: bool,
}

fn orthogonality_to_martingale<S: Scalar>(
    tree: &TreeModel<S>,
    filt: &Filtration,
    l: &TreeProcess<S>,
    m: &TreeVecProcess<S>,
) -> S {
    let mut out = Vec::new();
    for t in 1..=tree.horizon {
        for a in 0..filt.n_atoms(t - 1) {
            for k in 0..tree.dims {
                out.push(tree.atom_expect(filt, t - 1, a, |i| {
                    (l[t][i].clone() - l[t - 1][i].clone()) * (m[t][i][k].clone() - m[t - 1][i][k].clone())
                }));
            }
        }
    }
    abs_max(out)
}

pub fn verify_incomplete_info<S: Scalar>(tree: &TreeModel<S>, claim: &[S]) -> Result<IncompleteInfoReport<S>> {
    if !tree.has_labels {
        return Err(Error::Tree("incomplete-information check needs fine labels".into()));
    }
    let fine = fs_decompose(tree, claim, Information::Fine)?;
    if !fine.is_replicating() {
        return Err(Error::NotAttainable(format!(
            "claim is not replicable under full information (residual {:.3e})",
            abs_max(fine.residual[tree.horizon].clone()).to_f64()
        )));
    }
    let n = tree.horizon;
    let coarse_f = &tree.coarse;
    let xi = predictable_projection(tree, &fine.xi)?;
    let h_tilde0 = fine.value[0].clone();
    let h0 = tree.cond_exp(coarse_f, 0, &h_tilde0);
    let gains = trading_gains(tree, &xi);
    let gap: TreeVecProcess<S> = fine
        .xi
        .iter()
        .zip(&xi)
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(|(u, v)| u.iter().zip(v).map(|(p, q)| p.clone() - q.clone()).collect())
                .collect()
        })
        .collect();
    let gap_gains = trading_gains(tree, &gap);
    let l_terminal: Vec<S> = (0..tree.n_leaves())
        .map(|l| h_tilde0[l].clone() - h0[l].clone() + gap_gains[n][l].clone())
        .collect();
    let identity_residual = abs_max((0..tree.n_leaves()).map(|l| {
        claim[l].clone() - h0[l].clone() - gains[n][l].clone() - l_terminal[l].clone()
    }));
    let residual: TreeProcess<S> = (0..=n).map(|t| tree.cond_exp(coarse_f, t, &l_terminal)).collect();
    let l0_residual = abs_max(residual[0].clone());
    let mut mart = Vec::new();
    for t in 1..=n {
        let e = tree.cond_exp(coarse_f, t - 1, &residual[t]);
        mart.extend(e.into_iter().zip(&residual[t - 1]).map(|(a, b)| a - b.clone()));
    }
    let martingale_residual = abs_max(mart);
    let s = tree.asset_process();
    let doob = doob_decomposition(tree, Information::Coarse, &s)?;
    let orthogonality_residual = orthogonality_to_martingale(tree, coarse_f, &residual, &doob.m);

    let mut drift_gap = Vec::new();
    let mut cov_gap = Vec::new();
    for t in 1..=n {
        for j in 0..tree.dims {
            let dj: Vec<S> = (0..tree.n_leaves()).map(|l| s[t][l][j].clone() - s[t - 1][l][j].clone()).collect();
            let fine_m = tree.cond_exp(&tree.fine, t - 1, &dj);
            let coarse_m = tree.cond_exp(coarse_f, t - 1, &dj);
            drift_gap.extend(fine_m.into_iter().zip(coarse_m).map(|(a, b)| a - b));
            for k in 0..tree.dims {
                let p: Vec<S> = (0..tree.n_leaves())
                    .map(|l| dj[l].clone() * (s[t][l][k].clone() - s[t - 1][l][k].clone()))
                    .collect();
                let fine_c = tree.cond_exp(&tree.fine, t - 1, &p);
                let coarse_c = tree.cond_exp(coarse_f, t - 1, &p);
                cov_gap.extend(fine_c.into_iter().zip(coarse_c).map(|(a, b)| a - b));
            }
        }
    }
    let coarse = fs_decompose(tree, claim, Information::Coarse)?;
    let coarse_orthogonality_residual = orthogonality_to_martingale(tree, coarse_f, &coarse.residual, &doob.m);
    let strategy_gap = abs_max(
        (1..=n).flat_map(|t| {
            (0..tree.n_leaves())
                .flat_map(move |l| (0..tree.dims).map(move |k| (t, l, k)))
        })
        .map(|(t, l, k)| coarse.xi[t][l][k].clone() - xi[t][l][k].clone()),
    );
    let identity_holds = identity_residual.is_negligible();
    let martingale_null_at_zero = l0_residual.is_negligible() && martingale_residual.is_negligible();
    let orthogonal = orthogonality_residual.is_negligible();
    Ok(IncompleteInfoReport {
        residual_nonzero: !abs_max(l_terminal.clone()).is_negligible(),
        h_tilde0,
        h0,
        fine_xi: fine.xi,
        xi,
        residual,
        drift_agreement: abs_max(drift_gap).is_negligible(),
        covariance_agreement: abs_max(cov_gap).is_negligible(),
        strategies_agree: strategy_gap.is_negligible(),
        strategy_gap,
        coarse,
        coarse_orthogonality_residual,
        pass: identity_holds && martingale_null_at_zero && orthogonal,
        identity_holds,
        martingale_null_at_zero,
        orthogonal,
        identity_residual,
        l0_residual,
        martingale_residual,
        orthogonality_residual,
    })
}

/// Values of an adapted process keyed by node id.
pub fn node_values<S: Scalar>(tree: &TreeModel<S>, x: &TreeProcess<S>) -> BTreeMap<String, Value> {
    let mut out = BTreeMap::new();
    for (t, row) in x.iter().enumerate() {
        for (l, v) in row.iter().enumerate() {
            out.entry(tree.nodes[tree.path[t][l]].id.clone()).or_insert_with(|| v.to_json());
        }
    }
    out
}

/// Holdings of a predictable strategy keyed by the node where they are set.
pub fn node_holdings<S: Scalar>(tree: &TreeModel<S>, xi: &TreeVecProcess<S>) -> BTreeMap<String, Value> {
    let mut out = BTreeMap::new();
    for t in 1..xi.len() {
        for (l, v) in xi[t].iter().enumerate() {
            out.entry(tree.nodes[tree.path[t - 1][l]].id.clone())
                .or_insert_with(|| Value::Array(v.iter().map(Scalar::to_json).collect()));
        }
    }
    out
}

impl<S: Scalar> Doob<S> {
    pub fn to_json(&self, tree: &TreeModel<S>) -> Value {
        json!({
            "martingale": node_holdings(tree, &self.m),
            "predictable": node_holdings(tree, &self.v),
        })
    }
}

impl<S: Scalar> TreeDecomposition<S> {
    pub fn to_json(&self, tree: &TreeModel<S>) -> Value {
        json!({
            "information": format!("{:?}", self.info).to_lowercase(),
            "value": node_values(tree, &self.value),
            "xi": node_holdings(tree, &self.xi),
            "cost": node_values(tree, &self.cost),
            "residual": node_values(tree, &self.residual),
            "degenerate": self.degenerate,
            "identity_residual": self.identity_residual.to_f64(),
            "replicating": self.is_replicating(),
        })
    }
}

impl<S: Scalar> StructureResult<S> {
    pub fn to_json(&self, tree: &TreeModel<S>) -> Value {
        json!({
            "lambda_hat": node_holdings(tree, &self.lambda),
            "k_hat": node_values(tree, &self.k_hat),
            "z_hat": node_values(tree, &self.z_hat),
            "degenerate": self.degenerate,
            "xz_martingale": self.xz_martingale,
            "xz_martingale_residual": self.xz_martingale_residual.to_f64(),
            "z_hat_positive": self.z_hat_positive,
        })
    }
}

impl<S: Scalar> IncompleteInfoReport<S> {
    pub fn to_json(&self, tree: &TreeModel<S>) -> Value {
        json!({
            "h_tilde0": node_values(tree, &vec![self.h_tilde0.clone()]),
            "h0": node_values(tree, &vec![self.h0.clone()]),
            "fine_xi": node_holdings(tree, &self.fine_xi),
            "projected_xi": node_holdings(tree, &self.xi),
            "residual": node_values(tree, &self.residual),
            "identity_residual": self.identity_residual.to_f64(),
            "l0_residual": self.l0_residual.to_f64(),
            "martingale_residual": self.martingale_residual.to_f64(),
            "orthogonality_residual": self.orthogonality_residual.to_f64(),
            "identity_holds": self.identity_holds,
            "martingale_null_at_zero": self.martingale_null_at_zero,
            "orthogonal": self.orthogonal,
            "residual_nonzero": self.residual_nonzero,
            "drift_agreement": self.drift_agreement,
            "covariance_agreement": self.covariance_agreement,
            "coarse_decomposition": self.coarse.to_json(tree),
            "coarse_orthogonality_residual": self.coarse_orthogonality_residual.to_f64(),
            "strategy_gap": self.strategy_gap.to_f64(),
            "strategies_agree": self.strategies_agree,
            "pass": self.pass,
        })
    }
}
