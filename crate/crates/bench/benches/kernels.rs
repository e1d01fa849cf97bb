use bench_hedge::distributions::{ncx2_cdf, NcChiSqParams};
use bench_hedge::hedging::{gkw_regression, AssetHedgePath};
use bench_hedge::models::simulate_stylized_mmm;
use bench_hedge::regression::BasisConfig;
use bench_hedge::stochastic::{besq_exact_step, make_time_grid, RngStream};
use bench_hedge::tree::{fs_decompose, Information, TreeModel};
use bench_hedge_bench::{binomial_tree_json, hedge_paths, PARAMS};
use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use num_rational::BigRational;

fn distributions(c: &mut Criterion) {
    let mut g = c.benchmark_group("ncx2_cdf");
    for (name, dof, nc) in [("small_nc", 4.0, 0.5), ("large_nc", 4.0, 200.0), ("zero_dof", 0.0, 3.0)] {
        let p = NcChiSqParams::new(dof, nc).unwrap();
        g.bench_function(name, |b| b.iter(|| ncx2_cdf(black_box(nc + dof), &p).unwrap()));
    }
    g.finish();
}

fn besq(c: &mut Criterion) {
    c.bench_function("besq_exact_step", |b| {
        let mut rng = RngStream::new(1, 0).rng();
        b.iter(|| besq_exact_step(black_box(1.0), 4.0, 0.01, &mut rng).unwrap())
    });
}

fn simulation(c: &mut Criterion) {
    let grid = make_time_grid(0.0, 5.0, 100).unwrap();
    let mut g = c.benchmark_group("simulate_stylized_mmm");
    g.sample_size(10);
    g.bench_function("1000_paths_100_steps", |b| b.iter(|| simulate_stylized_mmm(&PARAMS, &grid, 1000, 7).unwrap()));
    g.finish();
}

fn regression(c: &mut Criterion) {
    let n_steps = 16;
    let paths = hedge_paths(5000, n_steps, 3);
    let nn = n_steps + 1;
    let flat = |f: fn(&AssetHedgePath) -> &Vec<f64>| -> Vec<f64> { paths.iter().flat_map(|h| f(h).iter().copied()).collect() };
    let p_hat = flat(|h| &h.p_hat);
    let s_j = flat(|h| &h.s_hat_j);
    let z: Vec<f64> = flat(|h| &h.s_hat_0).iter().map(|s| 1.0 / s).collect();
    let payoff: Vec<f64> = paths.iter().map(|h| h.s_hat_j[n_steps]).collect();
    let mut g = c.benchmark_group("gkw_regression");
    g.sample_size(10);
    g.bench_function("5000_paths_16_steps_degree_3", |b| {
        b.iter(|| gkw_regression(&payoff, &["bond"], &[&p_hat], &[&z, &s_j], nn, BasisConfig { degree: 3 }).unwrap())
    });
    g.finish();
}

fn trees(c: &mut Criterion) {
    let text = binomial_tree_json(8);
    let mut g = c.benchmark_group("fs_decompose_binomial_depth_8");
    g.bench_function("f64", |b| {
        let tree = TreeModel::<f64>::from_json_str(&text).unwrap();
        let claim = tree.claim.clone().unwrap();
        b.iter(|| fs_decompose(&tree, &claim, Information::Fine).unwrap())
    });
    g.bench_function("exact", |b| {
        let tree = TreeModel::<BigRational>::from_json_str(&text).unwrap();
        b.iter_batched(|| tree.claim.clone().unwrap(), |claim| fs_decompose(&tree, &claim, Information::Fine).unwrap(), BatchSize::SmallInput)
    });
    g.finish();
}

criterion_group!(benches, distributions, besq, simulation, regression, trees);
criterion_main!(benches);
