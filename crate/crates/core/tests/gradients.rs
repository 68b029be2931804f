mod common;

use common::{adapter_gradient_check, model_gradient_check};
use proptest::prelude::*;

const H: f64 = 1e-3;
// gradients below this are compared in absolute terms
const FLOOR: f64 = 1e-6;
const TOL: f64 = 1e-6;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn model_gradients_match_central_differences(seed in any::<u64>()) {
        let err = model_gradient_check(seed, H, FLOOR);
        prop_assert!(err < TOL, "max rel err {err}");
    }

    #[test]
    fn adapter_gradients_match_central_differences(seed in any::<u64>()) {
        let err = adapter_gradient_check(seed, H, FLOOR);
        prop_assert!(err < TOL, "max rel err {err}");
    }
}
