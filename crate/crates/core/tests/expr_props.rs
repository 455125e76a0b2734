mod common;

use common::{arb_expr, arb_point, rel_close};
use lyapfind_core::expr::{arity_balance_end, diff, lie_derivative, simplify};
use lyapfind_core::Expr;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn prefix_round_trip(e in arb_expr(3, 8)) {
        let p = e.to_prefix();
        let back = Expr::from_prefix(&p, 3).unwrap();
        prop_assert_eq!(&back, &e);
        let s = e.to_prefix_strings();
        prop_assert_eq!(Expr::from_prefix_strings(&s, 3).unwrap(), e);
    }

    #[test]
    fn arity_balance_closes_on_last_token(e in arb_expr(3, 8)) {
        let p = e.to_prefix();
        prop_assert_eq!(arity_balance_end(&p), Some(p.len() - 1));
        // Every proper prefix is still open.
        prop_assert_eq!(arity_balance_end(&p[..p.len() - 1]), None);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn derivative_matches_central_differences(
        e in arb_expr(2, 4),
        x in arb_point(2, 1.0),
        i in 0..2usize,
    ) {
        let d = diff(&e, i).eval(&x);
        let h = 1e-5;
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp[i] += h;
        xm[i] -= h;
        let (fp, fm) = (e.eval(&xp), e.eval(&xm));
        // Keep to moderate magnitudes, where central differences with this
        // step are themselves accurate to well under the tolerance.
        prop_assume!(fp.abs() < 10.0 && fm.abs() < 10.0 && d.abs() < 1e3);
        let fd = (fp - fm) / (2.0 * h);
        prop_assert!((d - fd).abs() / (1.0 + d.abs()) < 1e-6, "d={} fd={}", d, fd);
    }

    #[test]
    fn lie_derivative_is_linear(
        v1 in arb_expr(2, 4),
        v2 in arb_expr(2, 4),
        f1 in arb_expr(2, 3),
        f2 in arb_expr(2, 3),
        a in -3.0..3.0f64,
        b in -3.0..3.0f64,
        x in arb_point(2, 1.0),
    ) {
        let f = [f1, f2];
        let combo = Expr::add(
            Expr::mul(Expr::constant(a), v1.clone()),
            Expr::mul(Expr::constant(b), v2.clone()),
        );
        let lhs = lie_derivative(&combo, &f).unwrap().eval(&x);
        let l1 = lie_derivative(&v1, &f).unwrap().eval(&x);
        let l2 = lie_derivative(&v2, &f).unwrap().eval(&x);
        let rhs = a * l1 + b * l2;
        let scale = 1.0 + (a * l1).abs() + (b * l2).abs();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * scale, "lhs={} rhs={}", lhs, rhs);
    }

    #[test]
    fn simplify_preserves_values(e in arb_expr(3, 6), xs in proptest::collection::vec(arb_point(3, 2.0), 100)) {
        let s = simplify(&e);
        prop_assert!(s.complexity() <= e.complexity());
        for x in &xs {
            let (a, b) = (e.eval(x), s.eval(x));
            if a.is_finite() {
                prop_assert!(rel_close(a, b, 1e-12), "{} vs {} at {:?}", a, b, x);
            }
        }
    }
}
