//! Exact finite-tree laboratory.
//!
//! A tree file lists nodes `{id, time, parent, prob, assets, fine_label}`.
//! Every node is an atom of the fine filtration F̃; `prob` is the transition
//! probability from the parent (the initial probability for roots). Nodes at
//! the same date carrying the same `fine_label` are merged into one atom of
//! the coarse filtration F; unlabelled nodes are their own F-atom. Assets
//! must therefore agree across nodes that share a label.

mod lab;
pub mod linalg;
pub mod scalar;

use std::collections::{BTreeMap, HashMap};

use serde::Deserialize;

use crate::error::{Error, Result};

pub use lab::*;
pub use scalar::{from_json, Scalar, F64_TOL};

/// Maximum depth and branching accepted by the brute-force checks.
pub const BRUTE_FORCE_MAX_LEVELS: usize = 4;
pub const BRUTE_FORCE_MAX_BRANCHES: usize = 4;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawNode {
    pub id: String,
    pub time: usize,
    pub parent: Option<String>,
    pub prob: serde_json::Value,
    pub assets: Vec<serde_json::Value>,
    #[serde(default)]
    pub fine_label: Option<String>,
}

/// Tree file contents before typing the numbers.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawTree {
    pub nodes: Vec<RawNode>,
    /// Claim payoff by leaf id.
    #[serde(default)]
    pub claim: Option<BTreeMap<String, serde_json::Value>>,
}

impl RawTree {
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Tree(format!("tree file: {e}")))
    }
}

#[derive(Debug, Clone)]
pub struct TreeNode<S> {
    pub id: String,
    pub time: usize,
    pub parent: Option<usize>,
    pub prob: S,
    pub assets: Vec<S>,
    pub fine_label: Option<String>,
    pub children: Vec<usize>,
}

/// Partition of the leaves at each date.
#[derive(Debug, Clone, PartialEq)]
pub struct Filtration {
    /// `atoms[t][a]` lists the leaf indices of atom `a` at date `t`.
    pub atoms: Vec<Vec<Vec<usize>>>,
    /// `atom_of[t][leaf]` is the atom index containing the leaf.
    pub atom_of: Vec<Vec<usize>>,
}

impl Filtration {
    fn from_keys<K: std::hash::Hash + Eq + Clone>(keys: Vec<Vec<K>>) -> Self {
        let mut atoms = Vec::with_capacity(keys.len());
        let mut atom_of = Vec::with_capacity(keys.len());
        for row in keys {
            let mut index: HashMap<K, usize> = HashMap::new();
            let mut groups: Vec<Vec<usize>> = Vec::new();
            let mut of = Vec::with_capacity(row.len());
            for (leaf, key) in row.into_iter().enumerate() {
                let a = *index.entry(key).or_insert_with(|| {
                    groups.push(Vec::new());
                    groups.len() - 1
                });
                groups[a].push(leaf);
                of.push(a);
            }
            atoms.push(groups);
            atom_of.push(of);
        }
        Self { atoms, atom_of }
    }

    pub fn n_atoms(&self, t: usize) -> usize {
        self.atoms[t].len()
    }

    /// True when every atom of `self` at each date lies inside one atom of
    /// `other`.
    pub fn refines(&self, other: &Filtration) -> bool {
        self.atoms.iter().enumerate().all(|(t, atoms)| {
            atoms
                .iter()
                .all(|atom| atom.iter().all(|&l| other.atom_of[t][l] == other.atom_of[t][atom[0]]))
        })
    }
}

/// Which filtration an operation conditions on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Information {
    /// The node filtration F̃.
    Fine,
    /// The label-merged filtration F.
    Coarse,
}

/// Validated finite filtered probability space.
#[derive(Debug, Clone)]
pub struct TreeModel<S> {
    pub nodes: Vec<TreeNode<S>>,
    pub horizon: usize,
    pub dims: usize,
    /// Node index of each leaf, in file order.
    pub leaves: Vec<usize>,
    pub leaf_prob: Vec<S>,
    /// `path[t][leaf]` is the node visited at date `t`.
    pub path: Vec<Vec<usize>>,
    pub fine: Filtration,
    pub coarse: Filtration,
    pub has_labels: bool,
    /// Claim payoff per leaf, if the file provides one.
    pub claim: Option<Vec<S>>,
}

/// Leaf-indexed values per date: `values[t][leaf]`.
pub type TreeProcess<S> = Vec<Vec<S>>;
/// Leaf-indexed vectors per date: `values[t][leaf][k]`.
pub type TreeVecProcess<S> = Vec<Vec<Vec<S>>>;

impl<S: Scalar> TreeModel<S> {
    pub fn from_json_str(text: &str) -> Result<Self> {
        Self::from_raw(&RawTree::from_json_str(text)?)
    }

    pub fn from_raw(raw: &RawTree) -> Result<Self> {
        if raw.nodes.is_empty() {
            return Err(Error::Tree("tree has no nodes".into()));
        }
        let mut index: HashMap<&str, usize> = HashMap::new();
        for (i, n) in raw.nodes.iter().enumerate() {
            if index.insert(n.id.as_str(), i).is_some() {
                return Err(Error::Tree(format!("duplicate node id `{}`", n.id)));
            }
        }
        let dims = raw.nodes[0].assets.len();
        if dims == 0 {
            return Err(Error::Tree("nodes need at least one asset".into()));
        }
        let mut nodes = Vec::with_capacity(raw.nodes.len());
        for n in &raw.nodes {
            if n.assets.len() != dims {
                return Err(Error::Tree(format!("node `{}` has {} assets, expected {dims}", n.id, n.assets.len())));
            }
            let parent = match &n.parent {
                None => None,
                Some(p) => Some(
                    *index
                        .get(p.as_str())
                        .ok_or_else(|| Error::Tree(format!("node `{}` has unknown parent `{p}`", n.id)))?,
                ),
            };
            let prob: S = from_json(&n.prob)?;
            if prob <= S::zero() || prob.is_negligible() {
                return Err(Error::Tree(format!("node `{}` has non-positive probability", n.id)));
            }
            let assets = n.assets.iter().map(from_json).collect::<Result<Vec<S>>>()?;
            if assets.iter().any(|a| *a < S::zero() && !a.is_negligible()) {
                return Err(Error::Tree(format!("node `{}` has a negative asset value", n.id)));
            }
            nodes.push(TreeNode {
                id: n.id.clone(),
                time: n.time,
                parent,
                prob,
                assets,
                fine_label: n.fine_label.clone(),
                children: Vec::new(),
            });
        }
        for i in 0..nodes.len() {
            match nodes[i].parent {
                None if nodes[i].time != 0 => {
                    return Err(Error::Tree(format!("root `{}` must be at time 0", nodes[i].id)))
                }
                Some(p) if nodes[p].time + 1 != nodes[i].time => {
                    return Err(Error::Tree(format!("node `{}` is not one date after its parent", nodes[i].id)))
                }
                Some(p) => nodes[p].children.push(i),
                None => {}
            }
        }
        let one_off = |total: S| (total - S::one()).is_negligible();
        let roots: Vec<usize> = (0..nodes.len()).filter(|&i| nodes[i].parent.is_none()).collect();
        if !one_off(roots.iter().fold(S::zero(), |a, &r| a + nodes[r].prob.clone())) {
            return Err(Error::Tree("root probabilities must sum to 1".into()));
        }
        for n in &nodes {
            if !n.children.is_empty()
                && !one_off(n.children.iter().fold(S::zero(), |a, &c| a + nodes[c].prob.clone()))
            {
                return Err(Error::Tree(format!("children of `{}` must have probabilities summing to 1", n.id)));
            }
        }
        let leaves: Vec<usize> = (0..nodes.len()).filter(|&i| nodes[i].children.is_empty()).collect();
        let horizon = nodes[leaves[0]].time;
        if horizon == 0 {
            return Err(Error::Tree("tree needs at least one period".into()));
        }
        if let Some(&l) = leaves.iter().find(|&&l| nodes[l].time != horizon) {
            return Err(Error::Tree(format!("leaf `{}` is not at the final date {horizon}", nodes[l].id)));
        }
        // Paths from each leaf back to its root.
        let mut path = vec![vec![0usize; leaves.len()]; horizon + 1];
        let mut leaf_prob = Vec::with_capacity(leaves.len());
        for (li, &l) in leaves.iter().enumerate() {
            let mut node = l;
            let mut p = S::one();
            loop {
                path[nodes[node].time][li] = node;
                p = p * nodes[node].prob.clone();
                match nodes[node].parent {
                    Some(q) => node = q,
                    None => break,
                }
            }
            leaf_prob.push(p);
        }
        let fine = Filtration::from_keys(path.to_vec());
        let has_labels = nodes.iter().any(|n| n.fine_label.is_some());
        let coarse = Filtration::from_keys(
            path.iter()
                .map(|row| {
                    row.iter()
                        .map(|&n| match &nodes[n].fine_label {
                            Some(label) => format!("label:{label}"),
                            None => format!("node:{}", nodes[n].id),
                        })
                        .collect::<Vec<_>>()
                })
                .collect(),
        );
        let tree = Self {
            nodes,
            horizon,
            dims,
            leaves,
            leaf_prob,
            path,
            fine,
            coarse,
            has_labels,
            claim: None,
        };
        tree.check_coarse()?;
        let claim = match &raw.claim {
            None => None,
            Some(map) => Some(tree.claim_from_map(map)?),
        };
        Ok(Self { claim, ..tree })
    }

    fn check_coarse(&self) -> Result<()> {
        for t in 0..=self.horizon {
            for atom in &self.coarse.atoms[t] {
                let first = self.path[t][atom[0]];
                for &l in atom {
                    let n = self.path[t][l];
                    if self.nodes[n].assets != self.nodes[first].assets {
                        return Err(Error::Tree(format!(
                            "nodes `{}` and `{}` share a label but carry different assets",
                            self.nodes[first].id, self.nodes[n].id
                        )));
                    }
                    if t > 0 && self.coarse.atom_of[t - 1][l] != self.coarse.atom_of[t - 1][atom[0]] {
                        return Err(Error::Tree(format!(
                            "label of `{}` merges nodes whose parents are distinguishable",
                            self.nodes[n].id
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Claim per leaf from values keyed by leaf id; every leaf must appear.
    pub fn claim_from_map(&self, map: &BTreeMap<String, serde_json::Value>) -> Result<Vec<S>> {
        let mut out = Vec::with_capacity(self.leaves.len());
        for &l in &self.leaves {
            let id = &self.nodes[l].id;
            let v = map
                .get(id)
                .ok_or_else(|| Error::Tree(format!("claim has no value for leaf `{id}`")))?;
            out.push(from_json(v)?);
        }
        if let Some(extra) = map.keys().find(|k| !self.leaves.iter().any(|&l| &self.nodes[l].id == *k)) {
            return Err(Error::Tree(format!("claim refers to `{extra}`, which is not a leaf")));
        }
        Ok(out)
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn filtration(&self, info: Information) -> &Filtration {
        match info {
            Information::Fine => &self.fine,
            Information::Coarse => &self.coarse,
        }
    }

    /// Largest number of children at any node.
    pub fn max_branching(&self) -> usize {
        self.nodes.iter().map(|n| n.children.len()).max().unwrap_or(0)
    }

    /// Asset values per date along each leaf's path.
    pub fn asset_process(&self) -> TreeVecProcess<S> {
        self.path
            .iter()
            .map(|row| row.iter().map(|&n| self.nodes[n].assets.clone()).collect())
            .collect()
    }

    /// Asset `k` along each leaf's path.
    pub fn asset(&self, k: usize) -> TreeProcess<S> {
        self.path
            .iter()
            .map(|row| row.iter().map(|&n| self.nodes[n].assets[k].clone()).collect())
            .collect()
    }

    pub fn atom_mass(&self, filt: &Filtration, t: usize, a: usize) -> S {
        filt.atoms[t][a]
            .iter()
            .fold(S::zero(), |acc, &l| acc + self.leaf_prob[l].clone())
    }

    /// Conditional expectation of `f(leaf)` given atom `a` at date `t`.
    pub fn atom_expect(&self, filt: &Filtration, t: usize, a: usize, f: impl Fn(usize) -> S) -> S {
        let atom = &filt.atoms[t][a];
        let mut num = S::zero();
        let mut den = S::zero();
        for &l in atom {
            num = num + self.leaf_prob[l].clone() * f(l);
            den = den + self.leaf_prob[l].clone();
        }
        num / den
    }

    /// E[x | filtration at date t], as a leaf-indexed vector.
    pub fn cond_exp(&self, filt: &Filtration, t: usize, x: &[S]) -> Vec<S> {
        let per_atom: Vec<S> = (0..filt.n_atoms(t))
            .map(|a| self.atom_expect(filt, t, a, |l| x[l].clone()))
            .collect();
        filt.atom_of[t].iter().map(|&a| per_atom[a].clone()).collect()
    }

    pub fn expectation(&self, x: &[S]) -> S {
        x.iter()
            .zip(&self.leaf_prob)
            .fold(S::zero(), |acc, (v, p)| acc + v.clone() * p.clone())
    }

    /// True when `x` is constant on every atom of `filt` at date `t`.
    pub fn is_measurable(&self, filt: &Filtration, t: usize, x: &[S]) -> bool {
        filt.atoms[t]
            .iter()
            .all(|atom| atom.iter().all(|&l| (x[l].clone() - x[atom[0]].clone()).is_negligible()))
    }

    /// Node ids making up atom `a` at date `t`.
    pub fn atom_ids(&self, filt: &Filtration, t: usize, a: usize) -> Vec<String> {
        let mut ids: Vec<String> = filt.atoms[t][a]
            .iter()
            .map(|&l| self.nodes[self.path[t][l]].id.clone())
            .collect();
        ids.dedup();
        ids.sort();
        ids.dedup();
        ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;

    pub(crate) const TWO_STEP: &str = r#"{
      "nodes": [
        {"id": "r", "time": 0, "parent": null, "prob": 1, "assets": [1]},
        {"id": "u", "time": 1, "parent": "r", "prob": 0.4, "assets": [1.2]},
        {"id": "d", "time": 1, "parent": "r", "prob": 0.6, "assets": [0.8]},
        {"id": "uu", "time": 2, "parent": "u", "prob": 0.5, "assets": [1.4]},
        {"id": "ud", "time": 2, "parent": "u", "prob": 0.5, "assets": [1.0]},
        {"id": "du", "time": 2, "parent": "d", "prob": 0.5, "assets": [0.9]},
        {"id": "dd", "time": 2, "parent": "d", "prob": 0.5, "assets": [0.7]}
      ],
      "claim": {"uu": 1, "ud": 0, "du": 0, "dd": 0}
    }"#;

    #[test]
    fn parses_and_builds_filtrations() {
        let t: TreeModel<BigRational> = TreeModel::from_json_str(TWO_STEP).unwrap();
        assert_eq!((t.horizon, t.dims, t.n_leaves()), (2, 1, 4));
        assert_eq!(t.fine, t.coarse);
        assert!(!t.has_labels);
        let total = t.leaf_prob.iter().fold(BigRational::from_usize(0), |a, p| a + p.clone());
        assert_eq!(total, BigRational::from_usize(1));
        assert_eq!(t.fine.n_atoms(1), 2);
        assert_eq!(t.claim.as_ref().unwrap()[0], BigRational::from_usize(1));
    }

    #[test]
    fn tower_property_is_exact() {
        let t: TreeModel<BigRational> = TreeModel::from_json_str(TWO_STEP).unwrap();
        let s2 = &t.asset(0)[2];
        let e1 = t.cond_exp(&t.fine, 1, s2);
        let e0 = t.cond_exp(&t.fine, 0, &e1);
        assert_eq!(e0, t.cond_exp(&t.fine, 0, s2));
        assert!(t.is_measurable(&t.fine, 1, &e1));
        assert!(!t.is_measurable(&t.fine, 1, s2));
    }

    #[test]
    fn rejects_malformed_trees() {
        let bad = |s: &str| TreeModel::<f64>::from_json_str(s).unwrap_err();
        let probs = TWO_STEP.replace("\"prob\": 0.6", "\"prob\": 0.5");
        assert!(matches!(bad(&probs), Error::Tree(_)));
        let negative = TWO_STEP.replace("[0.7]", "[-0.7]");
        assert!(matches!(bad(&negative), Error::Tree(_)));
        let orphan = TWO_STEP.replace("\"parent\": \"d\", \"prob\": 0.5, \"assets\": [0.7]", "\"parent\": \"x\", \"prob\": 0.5, \"assets\": [0.7]");
        assert!(matches!(bad(&orphan), Error::Tree(_)));
        let missing = TWO_STEP.replace(", \"dd\": 0", "");
        assert!(matches!(bad(&missing), Error::Tree(_)));
        let zero = TWO_STEP.replace("\"prob\": 0.4", "\"prob\": 0").replace("\"prob\": 0.6", "\"prob\": 1");
        assert!(matches!(bad(&zero), Error::Tree(_)));
        assert!(matches!(bad("{\"nodes\": [], \"extra\": 1}"), Error::Tree(_)));
    }

    #[test]
    fn labels_must_agree_on_assets() {
        let text = TWO_STEP
            .replace("\"assets\": [1.2]}", "\"assets\": [1.2], \"fine_label\": \"m\"}")
            .replace("\"assets\": [0.8]}", "\"assets\": [0.8], \"fine_label\": \"m\"}");
        let err = TreeModel::<f64>::from_json_str(&text).unwrap_err();
        assert!(matches!(err, Error::Tree(_)));
    }
}
