use bench_hedge::hedging::{defaultable_hedge_path, stylized_asset_hedge_path, AssetHedgePath};
use bench_hedge::models::simulate_stylized_mmm;
use bench_hedge::pricing::{default_times, DefaultModel};
use bench_hedge::stats::{linear_fit, mean_stderr};
use bench_hedge::stochastic::{channel, make_time_grid, TimeGrid};
use bench_hedge::verify::{drift_report, DriftTest};
use rayon::prelude::*;
use serde_json::json;

use super::{node_means, Context};
use crate::config::HedgeTask;
use crate::error::CliError;
use crate::output::{Artifacts, Cell, Table};

pub fn run(ctx: &Context) -> Result<Artifacts, CliError> {
    match ctx.cfg.task("hedge")? {
        HedgeTask::Asset { asset, bond_maturity, convergence_steps } => asset_hedge(ctx, asset, bond_maturity, &convergence_steps),
        HedgeTask::DefaultablePut { strike, default } => {
            let grid = ctx.cfg.time_grid()?;
            let model = DefaultModel { lambda: default.lambda, recovery: default.recovery, maturity: grid.t_end };
            defaultable(ctx, strike, model)
        }
    }
}

/// Value, cost and remaining risk `(C_T - C_t)^2` series over the grid.
fn process_table(grid: &TimeGrid, value: &[f64], cost: &[f64], art: &mut Artifacts) -> Table {
    let nn = grid.n_nodes();
    let risk: Vec<f64> = cost
        .chunks(nn)
        .flat_map(|c| {
            let end = c[nn - 1];
            c.iter().map(move |x| (end - x).powi(2))
        })
        .collect();
    let mut table = Table::new(
        "hedge",
        &["t", "value_mean", "value_stderr", "cost_mean", "cost_stderr", "risk_mean", "risk_stderr"],
    );
    let (v, c, r) = (node_means(value, nn), node_means(cost, nn), node_means(&risk, nn));
    for (i, t) in grid.times().into_iter().enumerate() {
        table.push(vec![
            Cell::F(t),
            Cell::F(v[i].mean),
            Cell::F(v[i].stderr),
            Cell::F(c[i].mean),
            Cell::F(c[i].stderr),
            Cell::F(r[i].mean),
            Cell::F(r[i].stderr),
        ]);
        art.point("value", t, v[i].mean, Some(v[i].stderr));
        art.point("cost", t, c[i].mean, Some(c[i].stderr));
        art.point("risk", t, r[i].mean, Some(r[i].stderr));
    }
    table
}

fn hedge_paths(
    ctx: &Context,
    asset: usize,
    bond_maturity: f64,
    grid: &TimeGrid,
) -> Result<Vec<AssetHedgePath>, CliError> {
    let params = ctx.cfg.stylized("hedge")?;
    let assets = ctx.cfg.model()?.assets();
    let mc = ctx.cfg.mc()?;
    Ok((0..mc.n_paths)
        .into_par_iter()
        .map(|k| stylized_asset_hedge_path(&params, &assets, asset, bond_maturity, grid, mc.master_seed, k))
        .collect::<Result<_, _>>()?)
}

fn asset_hedge(ctx: &Context, asset: usize, bond_maturity: f64, convergence: &[usize]) -> Result<Artifacts, CliError> {
    let grid = ctx.cfg.time_grid()?;
    let paths = hedge_paths(ctx, asset, bond_maturity, &grid)?;
    let mut art = Artifacts::default();
    let value: Vec<f64> = paths.iter().flat_map(|h| h.s_hat_j.iter().copied()).collect();
    let cost: Vec<f64> = paths.iter().flat_map(AssetHedgePath::cost).collect();
    let table = process_table(&grid, &value, &cost, &mut art);
    art.tables.push(table);

    let errors: Vec<f64> = paths.iter().map(AssetHedgePath::replication_error).collect();
    let rms = (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt();
    let drift = drift_report(&cost, paths.len(), &grid, DriftTest::TwoSided)?;
    // Cost variance against the expected quadratic variation of the
    // unhedgeable part, paired per path.
    let spread: Vec<f64> = paths.iter().map(|h| {
        let c = h.cost();
        c[c.len() - 1] - c[0]
    }).collect();
    let m = mean_stderr(&spread).mean;
    let paired: Vec<f64> = paths
        .iter()
        .zip(&spread)
        .map(|(h, s)| (s - m).powi(2) - h.nu_quadratic_variation(grid.dt()))
        .collect();
    let gap = mean_stderr(&paired);

    let mut study = Vec::new();
    if !convergence.is_empty() {
        let mut table = Table::new("convergence", &["n_steps", "dt", "rms_error"]);
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for &n in convergence {
            let g = make_time_grid(grid.t0, grid.t_end, n)?;
            let errs: Vec<f64> = hedge_paths(ctx, asset, bond_maturity, &g)?
                .iter()
                .map(AssetHedgePath::replication_error)
                .collect();
            let r = (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt();
            table.push(vec![Cell::from(n), Cell::F(g.dt()), Cell::F(r)]);
            art.point("rms_error", g.dt(), r, None);
            xs.push(g.dt().ln());
            ys.push(r.ln());
            study.push(json!({ "n_steps": n, "dt": g.dt(), "rms_error": r }));
        }
        art.tables.push(table);
        let slope = if xs.len() >= 2 { Some(linear_fit(&xs, &ys).0) } else { None };
        study.push(json!({ "log_log_slope": slope }));
    }
    art.document(
        "hedge_summary",
        json!({
            "target": "asset",
            "asset": asset,
            "bond_maturity": bond_maturity,
            "n_paths": paths.len(),
            "replication_rms": rms,
            "cost_martingale": drift,
            "variance_identity": { "gap": gap, "z": gap.z_score(0.0) },
            "convergence": study,
        }),
    );
    Ok(art)
}

fn defaultable(ctx: &Context, strike: f64, model: DefaultModel) -> Result<Artifacts, CliError> {
    let params = ctx.cfg.stylized("hedge")?;
    model.validate()?;
    let grid = ctx.cfg.time_grid()?;
    let mc = ctx.cfg.mc()?;
    let paths = simulate_stylized_mmm(&params, &grid, mc.n_paths, mc.master_seed)?;
    let defaults = default_times(&model, &grid, mc.n_paths, mc.master_seed)?;
    let z = paths.channel(channel::Z)?;
    let nn = grid.n_nodes();
    let hedges = (0..mc.n_paths)
        .into_par_iter()
        .map(|k| defaultable_hedge_path(&params, &model, strike, &grid, &z[k * nn..(k + 1) * nn], defaults.tau[k]))
        .collect::<Result<Vec<_>, _>>()?;
    let mut art = Artifacts::default();
    let value: Vec<f64> = hedges.iter().flat_map(|h| h.value.iter().copied()).collect();
    let cost: Vec<f64> = hedges.iter().flat_map(|h| h.cost.iter().copied()).collect();
    let table = process_table(&grid, &value, &cost, &mut art);
    art.tables.push(table);
    let drift = drift_report(&cost, hedges.len(), &grid, DriftTest::TwoSided)?;
    let product = hedges.iter().map(|h| h.product_rule_residual).fold(0.0, f64::max);
    let jump_gap = mean_stderr(&hedges.iter().map(|h| h.jump_cost_gap).collect::<Vec<_>>());
    let defaulted = defaults.tau.iter().filter(|&&t| t <= model.maturity).count();
    art.document(
        "hedge_summary",
        json!({
            "target": "defaultable_put",
            "strike": strike,
            "default_model": model,
            "n_paths": hedges.len(),
            "defaulted_paths": defaulted,
            "initial_value": hedges.first().map(|h| h.value[0]),
            "cost_martingale": drift,
            "product_rule_residual_max": product,
            "jump_cost_gap": jump_gap,
        }),
    );
    Ok(art)
}
