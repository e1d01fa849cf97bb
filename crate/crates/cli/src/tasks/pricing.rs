use bench_hedge::models::{simulate_stylized_mmm, StylizedMmmParams};
use bench_hedge::pricing::{
    default_times, defaultable_put_price, put_terms, put_price, real_world_price_mc, zcb_price, DefaultModel,
};
use bench_hedge::regression::BasisConfig;
use bench_hedge::stats::{mean_stderr, MeanEstimate};
use bench_hedge::stochastic::{channel, make_time_grid, PathBundle};
use serde_json::json;

use super::Context;
use crate::config::{DefaultablePutTask, PutTask, ZcbTask};
use crate::error::CliError;
use crate::output::{Artifacts, Cell, Table};

/// Valuation date and state, defaulting to the model's initial state.
fn valuation_point(ctx: &Context, params: &StylizedMmmParams, t: Option<f64>, s: Option<f64>) -> (f64, f64) {
    let t0 = ctx.cfg.grid.map_or(0.0, |g| g.t0);
    (t.unwrap_or(t0), s.unwrap_or(1.0 / params.z0))
}

/// Paths from the valuation point to `maturity`; Monte Carlo starts from
/// the model's initial state only.
fn mc_paths(ctx: &Context, params: &StylizedMmmParams, t: f64, s: f64, maturity: f64) -> Result<PathBundle, CliError> {
    let grid = ctx.cfg.grid()?;
    let mc = ctx.cfg.mc()?;
    if t != grid.t0 || s != 1.0 / params.z0 {
        return Err(CliError::Config(
            "monte_carlo requires the valuation point to be the grid start and the initial state".into(),
        ));
    }
    let g = make_time_grid(t, maturity, grid.n_steps)?;
    Ok(simulate_stylized_mmm(params, &g, mc.n_paths, mc.master_seed)?)
}

fn mc_cells(est: &MeanEstimate, exact: f64) -> Vec<Cell> {
    vec![Cell::F(est.mean), Cell::F(est.stderr), Cell::F(est.z_score(exact))]
}

fn with_mc(base: &[&'static str], mc: bool) -> Vec<&'static str> {
    let mut c = base.to_vec();
    if mc {
        c.extend(["mc_mean", "mc_stderr", "mc_z"]);
    }
    c
}

pub fn zcb(ctx: &Context) -> Result<Artifacts, CliError> {
    let task: ZcbTask = ctx.cfg.task("price-zcb")?;
    let params = ctx.cfg.stylized("price-zcb")?;
    let (t, s) = valuation_point(ctx, &params, task.t, task.s_hat_0);
    let mut table = Table::new("zcb", &with_mc(&["t", "T", "p_hat", "f_t"], task.monte_carlo));
    let mut art = Artifacts::default();
    for &maturity in &task.maturities {
        let q = zcb_price(t, s, &params, maturity)?;
        let mut row = vec![Cell::F(q.t), Cell::F(q.maturity), Cell::F(q.p_hat), Cell::F(q.f_t)];
        art.point("p_hat", maturity, q.p_hat, None);
        if task.monte_carlo {
            let paths = mc_paths(ctx, &params, t, s, maturity)?;
            let est = mean_stderr(&paths.column(channel::S_HAT_0, paths.grid.n_steps)?);
            art.point("p_hat_mc", maturity, est.mean, Some(est.stderr));
            row.extend(mc_cells(&est, q.p_hat));
        }
        table.push(row);
    }
    art.tables.push(table);
    Ok(art)
}

pub fn put(ctx: &Context) -> Result<Artifacts, CliError> {
    let task: PutTask = ctx.cfg.task("price-put")?;
    let params = ctx.cfg.stylized("price-put")?;
    let (t, s) = valuation_point(ctx, &params, task.t, task.s_hat_0);
    let paths = if task.monte_carlo { Some(mc_paths(ctx, &params, t, s, task.maturity)?) } else { None };
    let mut table = Table::new("put", &with_mc(&["t", "T", "strike", "d1", "l2", "price"], task.monte_carlo));
    let mut art = Artifacts::default();
    for &strike in &task.strikes {
        let terms = put_terms(t, strike, s, &params, task.maturity)?;
        let price = put_price(t, strike, s, &params, task.maturity)?;
        let mut row = vec![
            Cell::F(t),
            Cell::F(task.maturity),
            Cell::F(strike),
            Cell::F(terms.d1),
            Cell::F(terms.l2),
            Cell::F(price),
        ];
        art.point("put", strike, price, None);
        if let Some(paths) = &paths {
            let mc = real_world_price_mc(
                paths,
                &[channel::S_HAT_0],
                |x| (strike * x[0] - 1.0).max(0.0),
                0,
                &[],
                BasisConfig::default(),
            )?;
            let est = MeanEstimate { mean: mc.estimate, stderr: mc.stderr, n: mc.n_paths };
            art.point("put_mc", strike, est.mean, Some(est.stderr));
            row.extend(mc_cells(&est, price));
        }
        table.push(row);
    }
    art.tables.push(table);
    Ok(art)
}

pub fn defaultable_put(ctx: &Context) -> Result<Artifacts, CliError> {
    let task: DefaultablePutTask = ctx.cfg.task("price-defaultable-put")?;
    let params = ctx.cfg.stylized("price-defaultable-put")?;
    let (t, s) = valuation_point(ctx, &params, task.t, task.s_hat_0);
    let model = DefaultModel { lambda: task.default.lambda, recovery: task.default.recovery, maturity: task.maturity };
    model.validate()?;
    // Valuation before default.
    let psi = model.psi(t, f64::INFINITY);
    let joint = if task.monte_carlo {
        let paths = mc_paths(ctx, &params, t, s, task.maturity)?;
        let defaults = default_times(&model, &paths.grid, paths.n_paths, ctx.cfg.mc()?.master_seed)?;
        Some((paths.column(channel::S_HAT_0, paths.grid.n_steps)?, defaults.tau))
    } else {
        None
    };
    let mut table = Table::new(
        "defaultable_put",
        &with_mc(&["t", "T", "strike", "put", "psi", "price"], task.monte_carlo),
    );
    let mut art = Artifacts::default();
    for &strike in &task.strikes {
        let plain = put_price(t, strike, s, &params, task.maturity)?;
        let price = defaultable_put_price(t, strike, s, &params, task.maturity, psi)?;
        let mut row = vec![
            Cell::F(t),
            Cell::F(task.maturity),
            Cell::F(strike),
            Cell::F(plain),
            Cell::F(psi),
            Cell::F(price),
        ];
        art.point("defaultable_put", strike, price, None);
        if let Some((s_t, tau)) = &joint {
            let payoff: Vec<f64> = s_t
                .iter()
                .zip(tau)
                .map(|(&x, &tau)| (strike * x - 1.0).max(0.0) * model.psi(task.maturity, tau))
                .collect();
            let est = mean_stderr(&payoff);
            art.point("defaultable_put_mc", strike, est.mean, Some(est.stderr));
            row.extend(mc_cells(&est, price));
        }
        table.push(row);
    }
    art.tables.push(table);
    art.document("defaultable_put", json!({ "default_model": model, "psi_t": psi }));
    Ok(art)
}
