mod support;

use graphrunner_core::eval::{inference_cost, rouge_l, PricingTable};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

use support::criteria::{cost_exactness, rouge_exactness};

#[test]
fn cost_matches_rational_arithmetic() {
    cost_exactness(&mut StdRng::seed_from_u64(11), 200).unwrap();
}

#[test]
fn rouge_matches_table_lcs() {
    rouge_exactness(&mut StdRng::seed_from_u64(12), 200).unwrap();
}

proptest! {
    #[test]
    fn cost_is_additive(a in 0u64..1 << 40, b in 0u64..1 << 40, c in 0u64..1 << 40, d in 0u64..1 << 40) {
        let p = PricingTable::from_decimal("2.5", "10.000001").unwrap();
        let sum = inference_cost(a, b, &p) + inference_cost(c, d, &p);
        prop_assert_eq!(sum, inference_cost(a + c, b + d, &p));
    }

    #[test]
    fn rouge_f1_is_symmetric_and_bounded(a in "[a-d ]{0,40}", b in "[a-d ]{0,40}") {
        let x = rouge_l(&a, &b);
        let y = rouge_l(&b, &a);
        prop_assert!((x.f1 - y.f1).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&x.f1));
        prop_assert_eq!(x.precision, y.recall);
    }
}
