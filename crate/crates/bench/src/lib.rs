//! Shared fixtures for the benchmarks.

use bench_hedge::hedging::{stylized_asset_hedge_path, AssetHedgePath};
use bench_hedge::models::{ConstantAssets, StylizedMmmParams};
use bench_hedge::stochastic::make_time_grid;

pub const PARAMS: StylizedMmmParams = StylizedMmmParams { alpha0: 0.05, beta: 0.05, r: 0.0, z0: 1.0 };

/// Hedge paths for the reference assets on `[0, 5]` with a bond maturing at 10.
pub fn hedge_paths(n_paths: usize, n_steps: usize, seed: u64) -> Vec<AssetHedgePath> {
    let grid = make_time_grid(0.0, 5.0, n_steps).expect("valid grid");
    let assets = ConstantAssets::reference(PARAMS.r);
    (0..n_paths)
        .map(|k| stylized_asset_hedge_path(&PARAMS, &assets, 0, 10.0, &grid, seed, k).expect("valid path"))
        .collect()
}

/// A complete binary tree of depth `levels` with a single asset moving by
/// 6/5 or 4/5, and the call `(S_T - 1)^+`, in the fixture JSON format.
pub fn binomial_tree_json(levels: usize) -> String {
    struct Node {
        id: String,
        parent: Option<String>,
        time: usize,
        prob: &'static str,
        num: i64,
        den: i64,
    }
    let mut nodes = vec![Node { id: "r".into(), parent: None, time: 0, prob: "1", num: 1, den: 1 }];
    let mut frontier = vec![0];
    for t in 1..=levels {
        let mut next = Vec::new();
        for &i in &frontier {
            for (tag, prob, mul) in [("u", "2/5", 6), ("d", "3/5", 4)] {
                let p = &nodes[i];
                let id = if p.id == "r" { tag.to_string() } else { format!("{}{tag}", p.id) };
                let node = Node { id, parent: Some(p.id.clone()), time: t, prob, num: p.num * mul, den: p.den * 5 };
                nodes.push(node);
                next.push(nodes.len() - 1);
            }
        }
        frontier = next;
    }
    let node_json: Vec<String> = nodes
        .iter()
        .map(|n| {
            let parent = n.parent.as_ref().map_or("null".to_string(), |p| format!("\"{p}\""));
            format!(
                "{{\"id\":\"{}\",\"time\":{},\"parent\":{parent},\"prob\":\"{}\",\"assets\":[\"{}/{}\"]}}",
                n.id, n.time, n.prob, n.num, n.den
            )
        })
        .collect();
    let claim: Vec<String> = frontier
        .iter()
        .map(|&i| {
            let n = &nodes[i];
            format!("\"{}\":\"{}/{}\"", n.id, (n.num - n.den).max(0), n.den)
        })
        .collect();
    format!("{{\"nodes\":[{}],\"claim\":{{{}}}}}", node_json.join(","), claim.join(","))
}

#[cfg(test)]
mod tests {
    use super::*;
    use bench_hedge::tree::TreeModel;

    #[test]
    fn binomial_fixture_parses() {
        let tree = TreeModel::<f64>::from_json_str(&binomial_tree_json(3)).unwrap();
        assert_eq!(tree.horizon, 3);
        assert_eq!(tree.n_leaves(), 8);
        assert!(tree.claim.is_some());
    }
}
