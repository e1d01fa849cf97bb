use bench_hedge::verify::{
    compensated_cost_relation, cost_numeraire_relation, covariation_from_samples, martingale_check,
    numeraire_change_path, realized_covariation, strict_local_martingale_check, supermartingale_check,
    NumeraireStrategy, OrthogonalityReport, MATCH_THRESHOLD, Z_THRESHOLD,
};
use bench_hedge::stochastic::make_time_grid;
use rayon::prelude::*;
use serde_json::{json, Value};

use super::{bond_path, simulate_model, Context};
use crate::config::{Check, ModelConfig, VerifyTask, ALL_CHECKS};
use crate::error::CliError;
use crate::output::{Artifacts, Cell, Table};

/// Largest rounding residual of the realized-covariation identity relative
/// to the gross term scale that still counts as exact.
const IDENTITY_TOLERANCE: f64 = 1e-12;

struct Entry {
    test: &'static str,
    statistic: f64,
    threshold: f64,
    verdict: bool,
    details: Value,
}

pub fn run(ctx: &Context) -> Result<Artifacts, CliError> {
    let task: VerifyTask = ctx.cfg.task("verify")?;
    let stylized = matches!(ctx.cfg.model()?, ModelConfig::Stylized { .. });
    let checks: Vec<Check> = match &task.checks {
        Some(list) => list.clone(),
        None if stylized => ALL_CHECKS.to_vec(),
        None => vec![Check::Supermartingale],
    };
    let grid = ctx.cfg.time_grid()?;
    let bond_maturity = task.bond_maturity.unwrap_or(grid.t_end);
    if bond_maturity < grid.t_end {
        return Err(CliError::Config("task.verify: bond_maturity must not precede the grid end".into()));
    }
    for c in &checks {
        if !stylized && *c != Check::Supermartingale {
            return Err(CliError::Config(format!("check `{c:?}` requires model variant `stylized`")));
        }
    }
    let mut paths = simulate_model(ctx)?;
    let mut entries = Vec::new();
    for check in checks {
        entries.push(match check {
            Check::Supermartingale => {
                let r = supermartingale_check(&paths, bench_hedge::stochastic::channel::S_HAT_0)?;
                Entry {
                    test: "supermartingale_s_hat_0",
                    statistic: r.max_z,
                    threshold: Z_THRESHOLD,
                    verdict: r.pass,
                    details: json!(r),
                }
            }
            Check::Martingale => {
                let params = ctx.cfg.stylized("verify")?;
                if !paths.has("p_hat") {
                    let times = grid.times();
                    let s0 = paths.channel(bench_hedge::stochastic::channel::S_HAT_0)?;
                    let nn = grid.n_nodes();
                    let mut bond = Vec::with_capacity(s0.len());
                    for row in s0.chunks(nn) {
                        bond.extend(bond_path(&params, &times, row, bond_maturity)?);
                    }
                    paths.insert("p_hat", bond, true)?;
                }
                let r = martingale_check(&paths, "p_hat")?;
                Entry { test: "martingale_p_hat", statistic: r.max_abs_z, threshold: Z_THRESHOLD, verdict: r.pass, details: json!(r) }
            }
            Check::StrictLocalMartingale => {
                let params = ctx.cfg.stylized("verify")?;
                let r = strict_local_martingale_check(&paths, &params)?;
                let z = r.z_vs_expected.unwrap_or(f64::NAN);
                Entry {
                    test: "strict_local_martingale",
                    statistic: z,
                    threshold: MATCH_THRESHOLD,
                    verdict: z.abs() <= MATCH_THRESHOLD,
                    details: json!(r),
                }
            }
            Check::NumeraireIdentity => numeraire_identity(ctx, &task, bond_maturity)?,
            Check::Orthogonality => orthogonality(ctx, &task, bond_maturity)?,
        });
    }
    let mut art = Artifacts::default();
    let mut table = Table::new("verify", &["test", "statistic", "threshold", "verdict"]);
    let mut docs = Vec::new();
    for e in entries {
        table.push(vec![Cell::from(e.test), Cell::F(e.statistic), Cell::F(e.threshold), Cell::B(e.verdict)]);
        docs.push(json!({
            "test": e.test,
            "statistic": e.statistic,
            "threshold": e.threshold,
            "verdict": if e.verdict { "pass" } else { "fail" },
            "details": e.details,
        }));
    }
    art.tables.push(table);
    art.document("verify", Value::Array(docs));
    Ok(art)
}

fn numeraire_identity(ctx: &Context, task: &VerifyTask, bond_maturity: f64) -> Result<Entry, CliError> {
    let params = ctx.cfg.stylized("verify")?;
    let assets = ctx.cfg.model()?.assets();
    let grid = ctx.cfg.time_grid()?;
    let mc = ctx.cfg.mc()?;
    let nn = grid.n_nodes();
    let rows = (0..mc.n_paths)
        .into_par_iter()
        .map(|k| -> bench_hedge::error::Result<[f64; 3]> {
            let lrm = numeraire_change_path(&params, &assets, task.asset, bond_maturity, &grid, mc.master_seed, k, NumeraireStrategy::LocallyRiskMinimizing)?;
            let exact = cost_numeraire_relation(&lrm.c_bar, &lrm.s_hat_0, &lrm.c_hat, nn)?;
            let comp = compensated_cost_relation(&lrm.c_bar, &lrm.s_hat_0, &lrm.c_hat, &lrm.bracket, nn)?;
            let sf = numeraire_change_path(&params, &assets, task.asset, bond_maturity, &grid, mc.master_seed, k, NumeraireStrategy::SelfFinancingBond)?;
            let drift = |c: &[f64]| c.iter().map(|v| (v - c[0]).abs()).fold(0.0, f64::max);
            Ok([exact / lrm.gross_scale(), comp, drift(&sf.c_bar).max(drift(&sf.c_hat))])
        })
        .collect::<Result<Vec<_>, _>>()?;
    let worst = |j: usize| rows.iter().map(|r| r[j]).fold(0.0, f64::max);
    let (relative, compensated, self_financing) = (worst(0), worst(1), worst(2));
    let verdict = relative <= IDENTITY_TOLERANCE && self_financing <= IDENTITY_TOLERANCE;
    Ok(Entry {
        test: "numeraire_identity",
        statistic: relative.max(self_financing),
        threshold: IDENTITY_TOLERANCE,
        verdict,
        details: json!({
            "realized_residual_relative": relative,
            "compensated_residual": compensated,
            "dt": grid.dt(),
            "self_financing_cost_change": self_financing,
        }),
    })
}

fn orthogonality(ctx: &Context, task: &VerifyTask, bond_maturity: f64) -> Result<Entry, CliError> {
    let params = ctx.cfg.stylized("verify")?;
    let assets = ctx.cfg.model()?.assets();
    let base = ctx.cfg.time_grid()?;
    let grid = match task.orthogonality_steps {
        Some(n) => make_time_grid(base.t0, base.t_end, n)?,
        None => base,
    };
    let mc = ctx.cfg.mc()?;
    let run = |strategy| -> Result<OrthogonalityReport, CliError> {
        let q = (0..mc.n_paths)
            .into_par_iter()
            .map(|k| -> bench_hedge::error::Result<[f64; 3]> {
                let r = numeraire_change_path(&params, &assets, task.asset, bond_maturity, &grid, mc.master_seed, k, strategy)?;
                Ok([
                    realized_covariation(&r.c_bar, &r.p_bar),
                    realized_covariation(&r.c_hat, &r.p_hat),
                    realized_covariation(&r.c_hat, &r.s_hat_0),
                ])
            })
            .collect::<Result<Vec<_>, _>>()?;
        let col = |j: usize| -> Vec<f64> { q.iter().map(|v| v[j]).collect() };
        Ok(OrthogonalityReport::from_tests(
            vec![covariation_from_samples("p_bar", &col(0))],
            vec![covariation_from_samples("p_hat", &col(1)), covariation_from_samples("s_hat_0", &col(2))],
        ))
    };
    let lrm = run(NumeraireStrategy::LocallyRiskMinimizing)?;
    let control = run(NumeraireStrategy::WExposed)?;
    let statistic = lrm
        .savings_numeraire
        .iter()
        .chain(&lrm.benchmark_numeraire)
        .map(|t| t.z.abs())
        .fold(0.0, f64::max);
    Ok(Entry {
        test: "orthogonality_preservation",
        statistic,
        threshold: Z_THRESHOLD,
        verdict: lrm.pass,
        details: json!({ "n_steps": grid.n_steps, "locally_risk_minimizing": lrm, "w_exposed_control": control }),
    })
}
