mod common;

use common::{arb_record, arb_selector};
use perturbkit::selector::{preset, SelectorExpr, PRESETS};
use proptest::prelude::*;

proptest! {
    #[test]
    fn de_morgan(a in arb_selector(), b in arb_selector(), rec in arb_record()) {
        let lhs = SelectorExpr::negate(SelectorExpr::and(a.clone(), b.clone()));
        let rhs = SelectorExpr::or(SelectorExpr::negate(a.clone()), SelectorExpr::negate(b.clone()));
        prop_assert_eq!(lhs.matches(&rec), rhs.matches(&rec));
        let lhs = SelectorExpr::negate(SelectorExpr::or(a.clone(), b.clone()));
        let rhs = SelectorExpr::and(SelectorExpr::negate(a), SelectorExpr::negate(b));
        prop_assert_eq!(lhs.matches(&rec), rhs.matches(&rec));
    }

    #[test]
    fn printed_selectors_parse_back(sel in arb_selector()) {
        let text = sel.to_string();
        let back: SelectorExpr = text.parse().unwrap();
        prop_assert_eq!(back, sel);
    }

    #[test]
    fn weight_and_bias_presets_are_disjoint(rec in arb_record(), layers in 2u32..12) {
        let bias = preset("bias", layers).unwrap();
        let weights = preset("weights", layers).unwrap();
        prop_assert!(!(bias.matches(&rec) && weights.matches(&rec)));
        let low = preset("layer_zone_low", layers).unwrap();
        let high = preset("layer_zone_high", layers).unwrap();
        prop_assert!(!(low.matches(&rec) && high.matches(&rec)));
    }

    #[test]
    fn double_negation(sel in arb_selector(), rec in arb_record()) {
        prop_assert_eq!(SelectorExpr::negate(SelectorExpr::negate(sel.clone())).matches(&rec), sel.matches(&rec));
    }
}

#[test]
fn every_preset_resolves() {
    for name in PRESETS {
        assert!(preset(name, 4).is_ok(), "{name}");
        assert!(preset(&name.to_uppercase(), 4).is_ok(), "{name}");
    }
    assert!(preset("nope", 4).is_err());
}
