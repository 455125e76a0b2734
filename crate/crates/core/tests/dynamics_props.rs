mod common;

use common::{arb_expr, rel_close};
use lyapfind_core::dynamics::{detokenize, load_system, registry, tokenize_system, SystemFile};
use lyapfind_core::expr::simplify;
use lyapfind_core::{rng, Domain, DynamicalSystem, Expr, Token};
use proptest::prelude::*;

/// Constants with at most four significant digits survive tokenization
/// exactly.
fn arb_short_constant() -> impl Strategy<Value = f64> {
    (1..10_000u32, -3..4i32).prop_map(|(m, e)| format!("{m}e{e}").parse::<f64>().unwrap())
}

fn is_short(c: f64) -> bool {
    (c.fract() == 0.0 && c.abs() < 1e15) || format!("{c:.3e}").parse::<f64>() == Ok(c)
}

/// Components `c · x_i · e`, which vanish at the origin without any
/// shifting constant, keeping every folded constant short.
fn arb_system(n: usize) -> impl Strategy<Value = DynamicalSystem> {
    proptest::collection::vec((arb_expr(n, 4), arb_short_constant(), 0..n), n).prop_filter_map(
        "short constants and an equilibrium at the origin",
        move |fs| {
            let comps: Vec<Expr> = fs
                .into_iter()
                .map(|(e, c, i)| Expr::mul(Expr::constant(c), Expr::mul(Expr::var(i), e)))
                .collect();
            let short = comps
                .iter()
                .all(|e| simplify(e).to_prefix().iter().all(|t| !matches!(t, Token::Const(c) if !is_short(*c))));
            short.then_some(())?;
            DynamicalSystem::with_default_names("random", comps, Domain::cube(n, 1.5)).ok()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn tokenization_round_trips(s in (1..4usize).prop_flat_map(arb_system), seed in any::<u64>()) {
        let n = s.dim();
        let tk = tokenize_system(&s);
        let back = detokenize(&tk, n).map_err(|e| TestCaseError::fail(format!("{e}: {tk} from {:?}", s.components())))?;
        let x = s.domain().sample(100, &mut rng::stream(seed, &[]));
        for row in x.rows() {
            let p = row.to_vec();
            for (a, b) in s.components().iter().zip(&back) {
                let (ya, yb) = (a.eval(&p), b.eval(&p));
                if ya.is_finite() {
                    prop_assert!(rel_close(ya, yb, 1e-9), "{} vs {}", ya, yb);
                }
            }
        }
    }

    #[test]
    fn system_files_round_trip(s in (1..4usize).prop_flat_map(arb_system)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sys.json");
        std::fs::write(&path, serde_json::to_string(&SystemFile::from_system(&s)).unwrap()).unwrap();
        let t = load_system(&path).unwrap();
        prop_assert_eq!(t.components(), s.components());
        prop_assert_eq!(t.domain(), s.domain());
    }
}

#[test]
fn registry_round_trips_within_four_digit_rounding() {
    for b in registry() {
        let s = b.system();
        assert!(s.eval(&vec![0.0; s.dim()]).iter().all(|v| v.abs() <= 1e-9), "{}", b.name);
        let back = detokenize(&tokenize_system(&s), s.dim()).unwrap();
        let x = s.domain().sample(100, &mut rng::stream(7, &[]));
        for row in x.rows() {
            let p = row.to_vec();
            for (a, c) in s.components().iter().zip(&back) {
                let (ya, yc) = (a.eval(&p), c.eval(&p));
                // Each constant moves by at most half a unit in its fourth
                // digit.
                assert!((ya - yc).abs() <= 1e-3 * (1.0 + ya.abs()) * 10.0, "{}: {ya} vs {yc}", b.name);
            }
        }
    }
}
