#![allow(dead_code)]

use lyapfind_core::Expr;
use proptest::prelude::*;

/// Arity-complete trees over `n` variables, integer constants 1–9 and the
/// full operator set, at most `depth` levels of nesting.
pub fn arb_expr(n: usize, depth: u32) -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        3 => (0..n).prop_map(Expr::var),
        1 => (1..=9u8).prop_map(|c| Expr::constant(c as f64)),
    ];
    leaf.prop_recursive(depth, 64, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone(), 0..3u8).prop_map(|(a, b, k)| match k {
                0 => Expr::add(a, b),
                1 => Expr::sub(a, b),
                _ => Expr::mul(a, b),
            }),
            (inner, 0..3u8).prop_map(|(a, k)| match k {
                0 => Expr::sin(a),
                1 => Expr::cos(a),
                _ => Expr::neg(a),
            }),
        ]
    })
}

pub fn arb_point(n: usize, r: f64) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-r..r, n)
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
