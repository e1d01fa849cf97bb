use std::collections::BTreeMap;

use bench_hedge::tree::{
    brute_force_optimality, doob_decomposition, fs_decompose, structure_condition, verify_incomplete_info,
    Information, Scalar, TreeModel, BRUTE_FORCE_MAX_BRANCHES, BRUTE_FORCE_MAX_LEVELS,
};
use num_rational::BigRational;
use serde_json::{json, Map, Value};

use super::Context;
use crate::config::{Arithmetic, InfoConfig, TreeLabTask, TreeOperation};
use crate::error::CliError;
use crate::output::Artifacts;

pub fn run(ctx: &Context) -> Result<Artifacts, CliError> {
    let task: TreeLabTask = ctx.cfg.task("tree-lab")?;
    let path = ctx.resolve(&task.tree);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Config(format!("cannot read tree file {}: {e}", path.display())))?;
    let doc = match task.arithmetic {
        Arithmetic::Exact => lab::<BigRational>(&task, &text)?,
        Arithmetic::Float => lab::<f64>(&task, &text)?,
    };
    let mut art = Artifacts::default();
    art.document("tree_lab", doc);
    Ok(art)
}

fn lab<S: Scalar>(task: &TreeLabTask, text: &str) -> Result<Value, CliError> {
    let tree = TreeModel::<S>::from_json_str(text)?;
    let claim = match &task.claim {
        Some(map) => {
            let converted: BTreeMap<String, Value> = map
                .iter()
                .map(|(k, v)| (k.clone(), serde_json::to_value(v).expect("TOML values convert to JSON")))
                .collect();
            Some(tree.claim_from_map(&converted)?)
        }
        None => tree.claim.clone(),
    };
    let info = match task.information {
        InfoConfig::Fine => Information::Fine,
        InfoConfig::Coarse => Information::Coarse,
    };
    let fits_brute_force = tree.horizon <= BRUTE_FORCE_MAX_LEVELS && tree.max_branching() <= BRUTE_FORCE_MAX_BRANCHES;
    let explicit = task.operations.is_some();
    let ops = task.operations.clone().unwrap_or_else(|| {
        let mut v = vec![TreeOperation::Doob, TreeOperation::Structure];
        if claim.is_some() {
            v.push(TreeOperation::Decompose);
            if fits_brute_force {
                v.push(TreeOperation::Optimality);
            }
            if tree.has_labels {
                v.push(TreeOperation::IncompleteInfo);
            }
        }
        v
    });
    let need_claim = |op: &str| -> Result<&Vec<S>, CliError> {
        claim
            .as_ref()
            .ok_or_else(|| CliError::Config(format!("operation `{op}` needs a claim in the tree file or task.tree-lab.claim")))
    };

    let mut out = Map::new();
    out.insert("arithmetic".into(), json!(if S::EXACT { "exact" } else { "float" }));
    out.insert("information".into(), json!(format!("{info:?}").to_lowercase()));
    out.insert(
        "tree".into(),
        json!({
            "horizon": tree.horizon,
            "dims": tree.dims,
            "nodes": tree.nodes.len(),
            "leaves": tree.n_leaves(),
            "has_labels": tree.has_labels,
            "fine_atoms": (0..=tree.horizon).map(|t| tree.fine.n_atoms(t)).collect::<Vec<_>>(),
            "coarse_atoms": (0..=tree.horizon).map(|t| tree.coarse.n_atoms(t)).collect::<Vec<_>>(),
        }),
    );
    for op in ops {
        match op {
            TreeOperation::Doob => {
                let d = doob_decomposition(&tree, info, &tree.asset_process())?;
                out.insert("doob".into(), d.to_json(&tree));
            }
            TreeOperation::Structure => {
                let s = structure_condition(&tree, info)?;
                out.insert("structure".into(), s.to_json(&tree));
            }
            TreeOperation::Decompose => {
                let dec = fs_decompose(&tree, need_claim("decompose")?, info)?;
                out.insert("decomposition".into(), dec.to_json(&tree));
            }
            TreeOperation::Optimality => {
                let c = need_claim("optimality")?;
                if !fits_brute_force && !explicit {
                    continue;
                }
                let dec = fs_decompose(&tree, c, info)?;
                let verdict = brute_force_optimality(&tree, c, &dec)?;
                out.insert("optimality".into(), json!(verdict));
            }
            TreeOperation::IncompleteInfo => {
                let r = verify_incomplete_info(&tree, need_claim("incomplete_info")?)?;
                out.insert("incomplete_info".into(), r.to_json(&tree));
            }
        }
    }
    Ok(Value::Object(out))
}
