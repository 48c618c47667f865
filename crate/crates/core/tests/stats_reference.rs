use maskrate::stats::{self, GroupedSamples, TTestKind, TableOptions};
use proptest::prelude::*;

include!("fixtures/welch_cases.rs");

#[test]
fn welch_matches_scipy() {
    for (x, y, welch, _) in CASES {
        let p = stats::one_sided_t(x, y, TTestKind::Welch).unwrap().p;
        assert!((p - welch).abs() < 1e-9, "{x:?} {y:?}: {p} vs {welch}");
    }
}

#[test]
fn pooled_matches_scipy() {
    for (x, y, _, pooled) in CASES {
        let p = stats::one_sided_t(x, y, TTestKind::Pooled).unwrap().p;
        assert!((p - pooled).abs() < 1e-9, "{x:?} {y:?}: {p} vs {pooled}");
    }
}

#[test]
fn close_means_example() {
    let p = stats::one_sided_t(&[83.7, 83.9, 83.6], &[84.2, 84.4, 84.3], TTestKind::Welch)
        .unwrap()
        .p;
    assert!((p - 0.004365514615796582).abs() < 1e-9, "{p}");
}

fn three_schedules() -> GroupedSamples {
    let mut task = std::collections::BTreeMap::new();
    task.insert(
        "linear-0.3-0.15".to_string(),
        vec![84.29, 84.335, 84.249, 84.156, 84.222],
    );
    task.insert(
        "constant-0.15".to_string(),
        vec![83.971, 84.129, 84.321, 84.046, 84.027],
    );
    task.insert("constant-0.3".to_string(), vec![83.903, 83.884, 83.846, 83.69, 83.826]);
    let mut g = GroupedSamples::new();
    g.insert("glue".to_string(), task);
    g
}

// Reference pattern from an independent script (scipy Welch + statsmodels
// simes-hochberg): both alternatives rejected, raw p 0.03447 and 1.519e-5.
#[test]
fn three_schedule_pattern_matches_reference_script() {
    let r = stats::parity_table(&three_schedules(), &TableOptions::default()).unwrap();
    let t = &r.tasks["glue"];
    assert_eq!(t.best, "linear-0.3-0.15");
    assert!((t.comparisons["constant-0.15"].p - 0.03446531050353941).abs() < 1e-9);
    assert!((t.comparisons["constant-0.3"].p - 1.518951004293056e-05).abs() < 1e-9);
    assert_eq!(t.parity, vec!["linear-0.3-0.15"]);
    // At alpha 0.01: p_(2) = 0.0345 > 0.01, p_(1) = 1.5e-5 <= 0.005, so only constant-0.3 is rejected.
    let strict = TableOptions {
        alpha: 0.01,
        ..TableOptions::default()
    };
    let r = stats::parity_table(&three_schedules(), &strict).unwrap();
    assert_eq!(r.tasks["glue"].parity, vec!["constant-0.15", "linear-0.3-0.15"]);
}

proptest! {
    #[test]
    fn antisymmetric(x in prop::collection::vec(-10.0f64..10.0, 2..8),
                     y in prop::collection::vec(-10.0f64..10.0, 2..8)) {
        let a = stats::one_sided_t(&x, &y, TTestKind::Welch).unwrap();
        let b = stats::one_sided_t(&y, &x, TTestKind::Welch).unwrap();
        prop_assume!(!a.degenerate);
        prop_assert!((a.p + b.p - 1.0).abs() < 1e-9);
    }

    #[test]
    fn hochberg_is_monotone(p in prop::collection::vec(0.0f64..=1.0, 1..12),
                            which in any::<prop::sample::Index>(),
                            factor in 0.0f64..1.0) {
        let before = stats::hochberg(&p, 0.05).unwrap();
        let mut lowered = p.clone();
        let i = which.index(p.len());
        lowered[i] *= factor;
        let after = stats::hochberg(&lowered, 0.05).unwrap();
        for (b, a) in before.iter().zip(&after) {
            prop_assert!(!b || *a);
        }
    }

    #[test]
    fn best_is_always_in_parity(shift in -1.0f64..1.0, alpha in 0.001f64..0.5) {
        let mut g = three_schedules();
        for v in g.get_mut("glue").unwrap().get_mut("constant-0.15").unwrap() {
            *v += shift;
        }
        let opts = TableOptions { alpha, ..TableOptions::default() };
        let r = stats::parity_table(&g, &opts).unwrap();
        let t = &r.tasks["glue"];
        prop_assert!(t.parity.contains(&t.best));
        prop_assert!(!t.comparisons.contains_key(&t.best));
    }
}
