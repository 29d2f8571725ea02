mod common;

use std::collections::BTreeSet;

use fsf::nn::ParamGroup;

#[test]
fn finite_differences_agree_for_every_group() {
    let mut groups = BTreeSet::new();
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        for c in common::gradient_check(seed, 1e-5, 4, 1e-8) {
            groups.insert(c.group.as_str());
            assert!(
                c.rel_error < 1e-4,
                "seed {seed} {}[{}]: analytic {:e} numeric {:e} rel {:e}",
                c.path,
                c.index,
                c.analytic,
                c.numeric,
                c.rel_error
            );
            worst = worst.max(c.rel_error);
        }
    }
    let expected: BTreeSet<&str> = ParamGroup::ALL.iter().map(|g| g.as_str()).collect();
    assert_eq!(groups, expected);
    println!("worst relative error {worst:e}");
}
