mod common;

use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn mlp_gradients_match_central_differences(seed in any::<u64>()) {
        let err = common::mlp_grad_instance(seed);
        prop_assert!(err <= 1e-3, "relative error {err}");
    }

    #[test]
    fn kcl_gradients_match_central_differences(seed in any::<u64>()) {
        let err = common::kcl_grad_instance(seed);
        prop_assert!(err <= 1e-3, "relative error {err}");
    }
}
