use bench_hedge::models::{simulate_stylized_mmm, StylizedMmmParams};
use bench_hedge::pricing::zcb_price;
use bench_hedge::stochastic::{channel, make_time_grid};
use bench_hedge::verify::{martingale_check, strict_local_martingale_check, supermartingale_check};

const PARAMS: StylizedMmmParams = StylizedMmmParams { alpha0: 0.05, beta: 0.05, r: 0.0, z0: 1.0 };

#[test]
fn simulated_bond_prices_are_martingales_below_the_savings_account() {
    let grid = make_time_grid(0.0, 5.0, 20).unwrap();
    let mut paths = simulate_stylized_mmm(&PARAMS, &grid, 4000, 21).unwrap();
    let times = grid.times();
    let nn = grid.n_nodes();
    let s0 = paths.channel(channel::S_HAT_0).unwrap().to_vec();
    let mut bond = Vec::with_capacity(s0.len());
    for row in s0.chunks(nn) {
        for (&t, &s) in times.iter().zip(row) {
            let q = zcb_price(t, s, &PARAMS, 10.0).unwrap();
            assert!(q.p_hat > 0.0 && q.p_hat < s);
            bond.push(q.p_hat);
        }
    }
    paths.insert("p_hat", bond, true).unwrap();
    assert!(martingale_check(&paths, "p_hat").unwrap().pass);
    assert!(supermartingale_check(&paths, channel::S_HAT_0).unwrap().pass);
    let slm = strict_local_martingale_check(&paths, &PARAMS).unwrap();
    assert!(slm.z_vs_expected.unwrap().abs() <= 3.0);
    let expected = slm.expected.unwrap();
    assert!(expected > 0.99 && expected < 1.0);
}

#[test]
fn simulation_is_reproducible_and_seed_sensitive() {
    let grid = make_time_grid(0.0, 1.0, 10).unwrap();
    let a = simulate_stylized_mmm(&PARAMS, &grid, 50, 1).unwrap();
    let b = simulate_stylized_mmm(&PARAMS, &grid, 50, 1).unwrap();
    let c = simulate_stylized_mmm(&PARAMS, &grid, 50, 2).unwrap();
    let z = |p: &bench_hedge::stochastic::PathBundle| p.channel(channel::Z).unwrap().to_vec();
    assert_eq!(z(&a), z(&b));
    assert_ne!(z(&a), z(&c));
}
