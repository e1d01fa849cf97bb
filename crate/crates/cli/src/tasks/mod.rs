//! One module per task. Each turns a validated config into artifacts.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use bench_hedge::stats::MeanEstimate;
use bench_hedge::models::{
    simulate_primary_accounts, simulate_random_scaling_mmm, simulate_stylized_mmm, MmmRandomScalingParams,
};
use bench_hedge::stochastic::{channel, PathBundle};
use clap::ValueEnum;

use crate::config::{ExperimentConfig, ModelConfig};
use crate::error::CliError;
use crate::output::Artifacts;

mod gkw;
mod hedge;
mod pricing;
mod simulate;
mod tree_lab;
mod verify;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Task {
    Simulate,
    PriceZcb,
    PricePut,
    PriceDefaultablePut,
    Hedge,
    GkwRegress,
    Verify,
    TreeLab,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Simulate => "simulate",
            Task::PriceZcb => "price-zcb",
            Task::PricePut => "price-put",
            Task::PriceDefaultablePut => "price-defaultable-put",
            Task::Hedge => "hedge",
            Task::GkwRegress => "gkw-regress",
            Task::Verify => "verify",
            Task::TreeLab => "tree-lab",
        }
    }
}

/// Config plus the directory its relative paths refer to.
pub struct Context<'a> {
    pub cfg: &'a ExperimentConfig,
    pub config_dir: PathBuf,
}

impl Context<'_> {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.config_dir.join(p)
        }
    }
}

pub fn run(task: Task, ctx: &Context) -> Result<Artifacts, CliError> {
    match task {
        Task::Simulate => simulate::run(ctx),
        Task::PriceZcb => pricing::zcb(ctx),
        Task::PricePut => pricing::put(ctx),
        Task::PriceDefaultablePut => pricing::defaultable_put(ctx),
        Task::Hedge => hedge::run(ctx),
        Task::GkwRegress => gkw::run(ctx),
        Task::Verify => verify::run(ctx),
        Task::TreeLab => tree_lab::run(ctx),
    }
}

/// Cross-path mean and standard error at every node of a row-major array.
fn node_means(values: &[f64], n_nodes: usize) -> Vec<MeanEstimate> {
    let n_paths = values.len() / n_nodes;
    (0..n_nodes)
        .map(|i| {
            let col: Vec<f64> = (0..n_paths).map(|p| values[p * n_nodes + i]).collect();
            bench_hedge::stats::mean_stderr(&col)
        })
        .collect()
}

/// Benchmarked bond path from the benchmarked savings account.
fn bond_path(
    params: &bench_hedge::models::StylizedMmmParams,
    times: &[f64],
    s_hat_0: &[f64],
    maturity: f64,
) -> Result<Vec<f64>, CliError> {
    times
        .iter()
        .zip(s_hat_0)
        .map(|(&t, &s)| {
            if t < maturity {
                Ok(bench_hedge::pricing::zcb_price(t, s, params, maturity)?.p_hat)
            } else {
                Ok((-params.r * maturity).exp() * s)
            }
        })
        .collect()
}

/// Simulate the configured model with its primary accounts.
fn simulate_model(ctx: &Context) -> Result<PathBundle, CliError> {
    let model = ctx.cfg.model()?;
    let grid = ctx.cfg.time_grid()?;
    let mc = ctx.cfg.mc()?;
    let assets = model.assets();
    let mut paths = match *model {
        ModelConfig::Stylized { .. } => {
            let p = ctx.cfg.stylized("simulate")?;
            simulate_stylized_mmm(&p, &grid, mc.n_paths, mc.master_seed)?
        }
        ModelConfig::RandomScaling { bessel_dim, z0, gamma0, rho, r, scaling, .. } => {
            let params = MmmRandomScalingParams {
                bessel_dim,
                z0,
                gamma0,
                scaling: Arc::new(scaling),
                rho,
                r,
                assets: Arc::new(assets),
            };
            simulate_random_scaling_mmm(&params, &grid, mc.n_paths, mc.master_seed)?
        }
    };
    let r = match *model {
        ModelConfig::Stylized { r, .. } | ModelConfig::RandomScaling { r, .. } => r,
    };
    if !paths.has(channel::S_HAT_1) {
        simulate_primary_accounts(&mut paths, &assets, r)?;
    }
    Ok(paths)
}
