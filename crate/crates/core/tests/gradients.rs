mod common;

use proptest::prelude::*;

#[test]
fn autodiff_matches_central_differences_on_twenty_mlps() {
    for seed in 0..20 {
        let err = common::gradient_check(seed, 1e-4);
        assert!(err < 1e-4, "seed {seed}: relative error {err:e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn autodiff_matches_central_differences(seed in any::<u64>()) {
        prop_assert!(common::gradient_check(seed, 1e-4) < 1e-4);
    }
}
