use molmm_chem::fingerprint::{environment_hashes, Fingerprint, DEFAULT_BITS, DEFAULT_RADIUS};
use molmm_chem::{morgan_fingerprint, parse_smiles, tanimoto};
use proptest::prelude::*;
use std::collections::HashSet;

fn fp(s: &str) -> Fingerprint {
    morgan_fingerprint(&parse_smiles(s).unwrap(), DEFAULT_RADIUS, DEFAULT_BITS).unwrap()
}

fn from_bits(bits: &[bool]) -> Fingerprint {
    let mut f = Fingerprint::new(64.max(bits.len().next_power_of_two())).unwrap();
    for (i, &b) in bits.iter().enumerate() {
        if b {
            f.set(i);
        }
    }
    f
}

#[test]
fn methane_sets_a_bit() {
    assert!(fp("C").count_ones() >= 1);
}

#[test]
fn deterministic() {
    assert_eq!(fp("c1ccccc1"), fp("c1ccccc1"));
    assert_eq!(fp("c1ccccc1"), fp("C1=CC=CC=C1"));
}

#[test]
fn benzene_and_methane_share_no_environment() {
    let a: HashSet<u64> = environment_hashes(&parse_smiles("c1ccccc1").unwrap(), 2).into_iter().collect();
    let b: HashSet<u64> = environment_hashes(&parse_smiles("C").unwrap(), 2).into_iter().collect();
    assert!(a.is_disjoint(&b));
    assert_eq!(tanimoto(&fp("c1ccccc1"), &fp("C")).unwrap(), 0.0);
}

#[test]
fn small_vectors() {
    let a = from_bits(&[true, true, false, false]);
    let b = from_bits(&[true, false, true, false]);
    assert!((tanimoto(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    let c = from_bits(&[false, false, false, true]);
    assert_eq!(tanimoto(&a, &c).unwrap(), 0.0);
    assert_eq!(tanimoto(&a, &a).unwrap(), 1.0);
}

proptest! {
    #[test]
    fn tanimoto_axioms(x in prop::collection::vec(any::<bool>(), 64), y in prop::collection::vec(any::<bool>(), 64)) {
        let (a, b) = (from_bits(&x), from_bits(&y));
        let ab = tanimoto(&a, &b).unwrap();
        prop_assert_eq!(ab, tanimoto(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(tanimoto(&a, &a).unwrap(), 1.0);
        let inter = x.iter().zip(&y).filter(|(p, q)| **p && **q).count();
        let union = x.iter().zip(&y).filter(|(p, q)| **p || **q).count();
        let expected = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
        prop_assert!((ab - expected).abs() < 1e-12);
    }
}
