use bench_hedge::tree::{
    brute_force_optimality, fs_decompose, structure_condition, verify_incomplete_info, Information, Scalar, TreeModel,
};
use num_rational::BigRational;
use num_traits::Zero;

fn fixture(name: &str) -> String {
    std::fs::read_to_string(format!("{}/fixtures/trees/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

fn flatten<S: Scalar>(x: &[Vec<S>]) -> Vec<f64> {
    x.iter().flatten().map(Scalar::to_f64).collect()
}

fn flatten_vec<S: Scalar>(x: &[Vec<Vec<S>>]) -> Vec<f64> {
    x.iter().flatten().flatten().map(Scalar::to_f64).collect()
}

#[test]
fn exact_and_float_decompositions_agree() {
    for name in ["trinomial.json", "trinomial_drift.json", "coarsened_binomial.json"] {
        let text = fixture(name);
        let exact = TreeModel::<BigRational>::from_json_str(&text).unwrap();
        let float = TreeModel::<f64>::from_json_str(&text).unwrap();
        let de = fs_decompose(&exact, exact.claim.as_ref().unwrap(), Information::Fine).unwrap();
        let df = fs_decompose(&float, float.claim.as_ref().unwrap(), Information::Fine).unwrap();
        assert!(de.identity_residual.is_zero(), "{name}");
        for (a, b) in flatten(&de.value).iter().zip(flatten(&df.value)) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{name}: value {a} vs {b}");
        }
        for (a, b) in flatten_vec(&de.xi).iter().zip(flatten_vec(&df.xi)) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{name}: xi {a} vs {b}");
        }
    }
}

#[test]
fn fixtures_pass_brute_force_optimality() {
    for name in ["trinomial.json", "trinomial_drift.json", "coarsened_binomial.json"] {
        let tree = TreeModel::<BigRational>::from_json_str(&fixture(name)).unwrap();
        let claim = tree.claim.clone().unwrap();
        let dec = fs_decompose(&tree, &claim, Information::Fine).unwrap();
        let verdict = brute_force_optimality(&tree, &claim, &dec).unwrap();
        assert!(verdict.pass, "{name}: {verdict:?}");
    }
}

#[test]
fn structure_condition_holds_on_fixtures() {
    for name in ["trinomial.json", "trinomial_drift.json", "coarsened_binomial.json"] {
        let tree = TreeModel::<BigRational>::from_json_str(&fixture(name)).unwrap();
        let s = structure_condition(&tree, Information::Fine).unwrap();
        assert!(s.xz_martingale, "{name}");
        assert!(s.xz_martingale_residual.is_zero(), "{name}");
    }
}

#[test]
fn coarsened_fixture_has_unhedgeable_residual() {
    let tree = TreeModel::<BigRational>::from_json_str(&fixture("coarsened_binomial.json")).unwrap();
    assert!(tree.has_labels);
    let r = verify_incomplete_info(&tree, tree.claim.as_ref().unwrap()).unwrap();
    assert!(r.pass);
    assert!(r.residual_nonzero);
    assert!(r.identity_residual.is_zero());
}
