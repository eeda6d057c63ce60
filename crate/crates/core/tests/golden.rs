//! Pins the seeded permutation so persisted `perm` models stay loadable across releases.

use serde::Deserialize;
use symfeat::make_permutation;

#[derive(Deserialize)]
struct Golden {
    seed: u64,
    permutation: Vec<usize>,
    fixed_points: usize,
}

#[test]
fn permutation_for_seed_zero_is_stable() {
    let golden: Golden = serde_json::from_str(include_str!("golden/permutation_seed0.json")).unwrap();
    let p = make_permutation(golden.seed);
    assert_eq!(p.as_slice(), golden.permutation.as_slice());
    assert_eq!(p.fixed_points(), golden.fixed_points);
    let counted = golden.permutation.iter().enumerate().filter(|(i, &v)| *i == v).count();
    assert_eq!(counted, golden.fixed_points);
}
