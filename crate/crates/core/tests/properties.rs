//! Property tests for the structural invariants.

mod common;

use common::random_desk_program;
use progmerge::antiunify::{anti_unify, compressions};
use progmerge::likelihood::log_sum_exp;
use progmerge::model::{
    desugar, generator_for_program, program_size, replace_gaussian, rng_from_seed, sample,
};
use progmerge::sexpr::{all_subexprs, parse, print, sexpr_size, transform_sexpr, SExpr};
use progmerge::unify::unify;
use progmerge::SymbolGenerator;
use proptest::prelude::*;

// λ is deliberately excluded: a variable never binds the bare λ symbol, so
// expressions containing it are the one documented exception to the
// anti-unify/unify roundtrip.
fn atom() -> impl Strategy<Value = SExpr> {
    prop_oneof![
        prop_oneof![Just("a"), Just("b"), Just("node"), Just("f"), Just("+")]
            .prop_map(SExpr::sym),
        (-50i32..50).prop_map(|n| SExpr::real(n as f64)),
        (0.01f64..100.0).prop_map(SExpr::real),
        ((1i64..30), (1i64..30)).prop_map(|(p, q)| SExpr::ratio(p, q)),
    ]
}

fn sexpr() -> impl Strategy<Value = SExpr> {
    atom().prop_recursive(4, 24, 4, |inner| {
        prop::collection::vec(inner, 0..4).prop_map(SExpr::list)
    })
}

fn list_node_count(e: &SExpr) -> usize {
    match e {
        SExpr::List(items) => 1 + items.iter().map(list_node_count).sum::<usize>(),
        _ => 0,
    }
}

proptest! {
    #[test]
    fn print_parse_roundtrip(e in sexpr()) {
        prop_assert_eq!(parse(&print(&e)).unwrap(), e);
    }

    #[test]
    fn identity_transform_is_identity(e in sexpr()) {
        let out = transform_sexpr(&|_| false, &|_| SExpr::sym("x"), &e);
        prop_assert_eq!(out, e);
    }

    #[test]
    fn subexpr_count_matches_list_nodes(e in sexpr()) {
        prop_assert_eq!(all_subexprs(&e).len(), list_node_count(&e));
    }

    #[test]
    fn size_is_additive(a in sexpr(), b in sexpr()) {
        let pair = SExpr::list(vec![a.clone(), b.clone()]);
        prop_assert_eq!(sexpr_size(&pair), sexpr_size(&a) + sexpr_size(&b));
    }

    /// Both anti-unification sources unify back against the pattern, and the
    /// bindings reproduce each source exactly.
    #[test]
    fn anti_unify_unify_roundtrip(e1 in sexpr(), e2 in sexpr()) {
        let mut gen = SymbolGenerator::for_exprs([&e1, &e2]);
        let au = anti_unify(&e1, &e2, &mut gen);
        for e in [&e1, &e2] {
            let sub = unify(e, &au.pattern, &au.variables);
            prop_assert!(sub.is_some(), "{} failed against {}", e, au.pattern);
            prop_assert_eq!(&sub.unwrap().apply(&au.pattern), e);
        }
    }

    #[test]
    fn anti_unify_variables_each_occur_once(e1 in sexpr(), e2 in sexpr()) {
        let mut gen = SymbolGenerator::for_exprs([&e1, &e2]);
        let au = anti_unify(&e1, &e2, &mut gen);
        let text = au.pattern.to_string();
        for v in &au.variables {
            let occurrences = text.split([' ', '(', ')'])
                .filter(|tok| tok == v)
                .count();
            prop_assert_eq!(occurrences, 1, "{} occurs {} times in {}", v, occurrences, text);
        }
    }

    #[test]
    fn log_sum_exp_is_shift_invariant(
        xs in prop::collection::vec(-40.0f64..40.0, 1..12),
        c in -500.0f64..500.0,
    ) {
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let direct = log_sum_exp(&xs);
        let naive = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        prop_assert!((direct - naive).abs() < 1e-9);
        prop_assert!((log_sum_exp(&shifted) - (direct + c)).abs() < 1e-8);
    }

    #[test]
    fn desugar_and_replace_gaussian_commute(seed in 0u64..500) {
        let p = random_desk_program(seed, 4);
        let a = replace_gaussian(&desugar(&p).unwrap()).unwrap();
        let b = desugar(&replace_gaussian(&p).unwrap()).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(program_size(&desugar(&p).unwrap()) >= program_size(&p));
    }

    /// Every filtered compression is a valid program no larger than the
    /// original plus one.
    #[test]
    fn compressions_are_wellformed_and_bounded(seed in 0u64..200) {
        let p = random_desk_program(seed, 4);
        let mut gen = generator_for_program(&p);
        for cp in compressions(&p, &mut gen, false) {
            prop_assert!(program_size(&cp) <= program_size(&p) + 1);
            prop_assert!(cp.validate().is_ok(), "invalid candidate from seed {}", seed);
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed(seed in 0u64..200, rng_seed in 0u64..50) {
        let p = random_desk_program(seed, 4);
        let a = sample(&p, &mut rng_from_seed(rng_seed)).unwrap();
        let b = sample(&p, &mut rng_from_seed(rng_seed)).unwrap();
        prop_assert_eq!(a, b);
    }
}
