mod common;

use common::arb_expr;
use lyapfind_core::certifier::{certify, interval_eval, CertVerdict, CertifyConfig, Interval};
use lyapfind_core::expr::parse_infix;
use lyapfind_core::{benchmark, Domain, DynamicalSystem, Expr};
use proptest::prelude::*;

fn arb_box(n: usize) -> impl Strategy<Value = Vec<Interval>> {
    proptest::collection::vec((-2.0..2.0f64, 0.0..1.5f64), n)
        .prop_map(|v| v.into_iter().map(|(lo, w)| Interval::new(lo, lo + w)).collect())
}

/// Grid of `k` points per axis over the box, endpoints included.
fn grid(bx: &[(f64, f64)], k: usize) -> impl Iterator<Item = Vec<f64>> + '_ {
    let n = bx.len();
    (0..k.pow(n as u32)).map(move |mut idx| {
        (0..n)
            .map(|j| {
                let i = idx % k;
                idx /= k;
                let (lo, hi) = bx[j];
                lo + (hi - lo) * i as f64 / (k - 1) as f64
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn interval_encloses_sampled_range(e in arb_expr(2, 5), bx in arb_box(2)) {
        let iv = interval_eval(&e, &bx);
        let b: Vec<(f64, f64)> = bx.iter().map(|i| (i.lo, i.hi)).collect();
        for x in grid(&b, 21) {
            let y = e.eval(&x);
            if y.is_finite() {
                prop_assert!(iv.contains(y), "{} outside [{}, {}] at {:?}", y, iv.lo, iv.hi, x);
            }
        }
    }
}

/// Points of a `k`-per-axis grid over the domain, outside the origin ball,
/// where a condition fails.
fn grid_violation(v: &Expr, f: &DynamicalSystem, eps: f64, k: usize) -> Option<Vec<f64>> {
    let lie = f.lie_derivative(v).unwrap();
    let (cv, cl) = (v.compile(), lie.compile());
    let d = f.domain();
    let b: Vec<(f64, f64)> = (0..f.dim()).map(|j| (d.lower[j], d.upper[j])).collect();
    let hit = grid(&b, k).find(|x| {
        x.iter().map(|t| t * t).sum::<f64>().sqrt() > eps && {
            let (a, l) = (cv.eval_point(x), cl.eval_point(x));
            !(a > 0.0) || !(l < 0.0)
        }
    });
    hit
}

fn fixtures() -> Vec<(DynamicalSystem, &'static str)> {
    let poly = benchmark("poly_2d").unwrap();
    let vdp = benchmark("van_der_pol").unwrap();
    let pend = benchmark("pendulum").unwrap();
    vec![
        (poly.clone(), "9*x1^2 + x2^2"),
        (poly.clone(), "x1^2 + x2^2"),
        (poly.clone(), "x1^2 + x1*x2 + x2^2"),
        (poly, "x1^2 - x2^2"),
        (vdp.clone(), "x1^2 + x2^2"),
        (vdp.clone(), "2*x1^2 + x1*x2 + 2*x2^2 + x1*x2^3"),
        (vdp.clone(), "x1^2"),
        (vdp, "x1^2 + x1*x2 + x2^2"),
        (pend.clone(), "2*(1 - cos(x1)) + x2^2"),
        (pend, "x1^2 + x2^2"),
    ]
}

#[test]
fn certificates_survive_a_million_point_grid() {
    let cfg = CertifyConfig {
        time_limit_s: 20.0,
        ..CertifyConfig::default()
    };
    let mut certified = 0;
    for (f, src) in fixtures() {
        let v = parse_infix(src, f.dim()).unwrap();
        let c = certify(&v, &f, &cfg);
        let g = grid_violation(&v, &f, cfg.eps, 1000);
        if c.is_certified() {
            certified += 1;
            assert!(g.is_none(), "{src} on {} certified but grid finds {g:?}", f.name());
        }
        if g.is_some() {
            assert!(!c.is_certified());
        }
        if let CertVerdict::Counterexample { x, v: vx, lie } = &c.verdict {
            assert!(!(*vx > cfg.delta) || !(*lie < -cfg.delta), "{src}: reported point is not a violation");
            assert!(f.domain().contains(x));
        }
    }
    assert!(certified >= 2, "the fixture suite has provable members");
}

#[test]
fn larger_budgets_never_flip_a_certificate() {
    for (f, src) in fixtures() {
        let v = parse_infix(src, f.dim()).unwrap();
        let small = CertifyConfig {
            max_boxes: 2_000,
            ..CertifyConfig::default()
        };
        let large = CertifyConfig {
            max_boxes: 200_000,
            ..CertifyConfig::default()
        };
        let (a, b) = (certify(&v, &f, &small), certify(&v, &f, &large));
        if a.is_certified() {
            assert!(b.is_certified(), "{src}");
        }
        if matches!(a.verdict, CertVerdict::Counterexample { .. }) {
            assert!(!b.is_certified(), "{src}");
        }
    }
}

#[test]
fn boxes_inside_the_origin_ball_are_discharged() {
    // The whole domain lies inside the excluded ball, so even a negative
    // definite candidate has nothing left to check.
    let f = DynamicalSystem::with_default_names(
        "decay",
        vec![parse_infix("-x1", 2).unwrap(), parse_infix("-x2", 2).unwrap()],
        Domain::cube(2, 0.1),
    )
    .unwrap();
    let v = parse_infix("-(x1^2 + x2^2)", 2).unwrap();
    let cfg = CertifyConfig {
        eps: 1.0,
        ..CertifyConfig::default()
    };
    let c = certify(&v, &f, &cfg);
    assert!(c.is_certified());
    assert_eq!(c.boxes, 1);
    let tight = CertifyConfig {
        eps: 0.05,
        ..CertifyConfig::default()
    };
    assert!(!certify(&v, &f, &tight).is_certified());
}
