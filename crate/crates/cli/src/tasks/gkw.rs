use bench_hedge::hedging::{
    gkw_regression, perturbation_study, split_hedgeable, split_report, stylized_asset_hedge_path, AssetHedgePath,
};
use bench_hedge::pricing::put_price;
use bench_hedge::regression::BasisConfig;
use bench_hedge::stats::mean_stderr;
use rayon::prelude::*;
use serde_json::json;

use super::Context;
use crate::config::{GkwPayoff, GkwTask};
use crate::error::CliError;
use crate::output::{Artifacts, Cell, Table};

pub fn run(ctx: &Context) -> Result<Artifacts, CliError> {
    let task: GkwTask = ctx.cfg.task("gkw-regress")?;
    let params = ctx.cfg.stylized("gkw-regress")?;
    let assets = ctx.cfg.model()?.assets();
    let grid = ctx.cfg.time_grid()?;
    let mc = ctx.cfg.mc()?;
    let asset = match task.payoff {
        GkwPayoff::Asset { asset } => asset,
        GkwPayoff::Put { .. } => 0,
    };
    let paths: Vec<AssetHedgePath> = (0..mc.n_paths)
        .into_par_iter()
        .map(|k| stylized_asset_hedge_path(&params, &assets, asset, task.bond_maturity, &grid, mc.master_seed, k))
        .collect::<Result<_, _>>()?;
    let n = grid.n_steps;
    let nn = grid.n_nodes();
    let flat = |f: fn(&AssetHedgePath) -> &Vec<f64>| -> Vec<f64> { paths.iter().flat_map(|h| f(h).iter().copied()).collect() };
    let p_hat = flat(|h| &h.p_hat);
    let s_j = flat(|h| &h.s_hat_j);
    let z: Vec<f64> = flat(|h| &h.s_hat_0).iter().map(|s| 1.0 / s).collect();
    let (payoff, states, exact_h0): (Vec<f64>, Vec<&[f64]>, f64) = match task.payoff {
        GkwPayoff::Asset { .. } => (paths.iter().map(|h| h.s_hat_j[n]).collect(), vec![&z, &s_j], paths[0].s_hat_j[0]),
        GkwPayoff::Put { strike } => (
            paths.iter().map(|h| (strike * h.s_hat_0[n] - 1.0).max(0.0)).collect(),
            vec![&z],
            put_price(grid.t0, strike, 1.0 / params.z0, &params, grid.t_end)?,
        ),
    };
    let dec = gkw_regression(&payoff, &["bond"], &[&p_hat], &states, nn, BasisConfig { degree: task.degree })?;

    let mut art = Artifacts::default();
    let closed_form = matches!(task.payoff, GkwPayoff::Asset { .. });
    let mut columns = vec!["t", "integrand_mean", "integrand_stderr", "value_mean", "value_stderr"];
    if closed_form {
        columns.extend(["closed_form_mean", "closed_form_stderr"]);
    }
    let mut table = Table::new("gkw", &columns);
    let (mut num, mut den) = (0.0, 0.0);
    for (i, t) in grid.times().into_iter().enumerate() {
        let value = mean_stderr(&(0..paths.len()).map(|p| dec.value_path[p * nn + i]).collect::<Vec<_>>());
        let mut row = vec![Cell::F(t)];
        if i < n {
            let fitted = mean_stderr(&(0..paths.len()).map(|p| dec.integrand.get(0, p, i)).collect::<Vec<_>>());
            row.extend([Cell::F(fitted.mean), Cell::F(fitted.stderr)]);
            art.point("integrand", t, fitted.mean, Some(fitted.stderr));
        } else {
            row.extend([Cell::F(f64::NAN), Cell::F(f64::NAN)]);
        }
        row.extend([Cell::F(value.mean), Cell::F(value.stderr)]);
        art.point("value", t, value.mean, Some(value.stderr));
        if closed_form {
            if i < n {
                let eta = mean_stderr(&paths.iter().map(|h| h.eta[i]).collect::<Vec<_>>());
                for (p, h) in paths.iter().enumerate() {
                    num += (dec.integrand.get(0, p, i) - h.eta[i]).powi(2);
                    den += h.eta[i].powi(2);
                }
                row.extend([Cell::F(eta.mean), Cell::F(eta.stderr)]);
                art.point("closed_form", t, eta.mean, Some(eta.stderr));
            } else {
                row.extend([Cell::F(f64::NAN), Cell::F(f64::NAN)]);
            }
        }
        table.push(row);
    }
    art.tables.push(table);

    let (hedgeable, unhedgeable) = split_hedgeable(&dec, &[&p_hat]);
    let split = split_report(&hedgeable, &unhedgeable);
    let perturbations = if task.perturbations > 0 {
        perturbation_study(&dec, &payoff, &[&p_hat], &z, task.amplitude, task.perturbations, mc.master_seed)
    } else {
        Vec::new()
    };
    let payoff_mean = mean_stderr(&payoff);
    art.document(
        "gkw_summary",
        json!({
            "payoff": format!("{:?}", task.payoff),
            "degree": task.degree,
            "n_paths": paths.len(),
            "h0": dec.h0,
            "h0_exact": exact_h0,
            "payoff_mean": payoff_mean,
            "h0_z": payoff_mean.z_score(exact_h0),
            "integrand_relative_gap": if closed_form { Some((num / den).sqrt()) } else { None },
            "ridge_nodes": dec.ridge_nodes,
            "split": split,
            "perturbations": perturbations,
        }),
    );
    Ok(art)
}
