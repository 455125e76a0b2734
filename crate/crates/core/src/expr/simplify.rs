//! Conservative simplification: constant folding and the additive /
//! multiplicative identities. Trigonometric structure is never rewritten.

use super::{Expr, ExprError, Token};

/// Bottom-up folding of constant subtrees and identity elimination.
pub fn simplify(e: &Expr) -> Expr {
    if e.children().is_empty() {
        return e.clone();
    }
    let kids: Vec<Expr> = e.children().iter().map(simplify).collect();
    let out = rebuild(e.token(), kids);
    if out == *e {
        e.clone()
    } else {
        out
    }
}

/// Applies one simplification step to a node whose children are already
/// simplified. Used by the differentiator to keep derivatives small.
pub(crate) fn rebuild(token: Token, kids: Vec<Expr>) -> Expr {
    match token {
        Token::Neg => s_neg(kids[0].clone()),
        Token::Sin | Token::Cos => {
            if let Some(c) = kids[0].as_const() {
                let v = if token == Token::Sin { c.sin() } else { c.cos() };
                if v.is_finite() {
                    return Expr::constant(v);
                }
            }
            Expr::node(token, kids)
        }
        Token::Add => s_add(kids[0].clone(), kids[1].clone()),
        Token::Sub => s_sub(kids[0].clone(), kids[1].clone()),
        Token::Mul => s_mul(kids[0].clone(), kids[1].clone()),
        Token::Var(_) | Token::Const(_) => Expr::node(token, kids),
    }
}

fn fold(a: &Expr, b: &Expr, f: impl Fn(f64, f64) -> f64) -> Option<Expr> {
    let v = f(a.as_const()?, b.as_const()?);
    v.is_finite().then(|| Expr::constant(v))
}

pub(crate) fn s_neg(a: Expr) -> Expr {
    if let Some(c) = a.as_const() {
        return Expr::constant(-c);
    }
    if a.token() == Token::Neg {
        return a.child(0).clone();
    }
    Expr::neg(a)
}

pub(crate) fn s_add(a: Expr, b: Expr) -> Expr {
    if let Some(e) = fold(&a, &b, |x, y| x + y) {
        return e;
    }
    if b.is_const(0.0) {
        return a;
    }
    if a.is_const(0.0) {
        return b;
    }
    Expr::add(a, b)
}

pub(crate) fn s_sub(a: Expr, b: Expr) -> Expr {
    if let Some(e) = fold(&a, &b, |x, y| x - y) {
        return e;
    }
    if b.is_const(0.0) {
        return a;
    }
    if a.is_const(0.0) {
        return s_neg(b);
    }
    Expr::sub(a, b)
}

pub(crate) fn s_mul(a: Expr, b: Expr) -> Expr {
    if let Some(e) = fold(&a, &b, |x, y| x * y) {
        return e;
    }
    if a.is_const(0.0) || b.is_const(0.0) {
        return Expr::zero();
    }
    if b.is_const(1.0) {
        return a;
    }
    if a.is_const(1.0) {
        return b;
    }
    Expr::mul(a, b)
}

/// Shifts `e` so that it vanishes at the origin of an `n`-dimensional space.
pub fn subtract_origin(e: &Expr, n: usize) -> Result<Expr, ExprError> {
    let c = e.eval_at_origin(n);
    if !c.is_finite() {
        return Err(ExprError::NonFiniteAtOrigin);
    }
    let s = simplify(e);
    Ok(if c == 0.0 {
        s
    } else if c < 0.0 {
        Expr::add(s, Expr::constant(-c))
    } else {
        Expr::sub(s, Expr::constant(c))
    })
}
