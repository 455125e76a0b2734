use super::simplify::{s_add, s_mul, s_neg, s_sub, simplify};
use super::{Expr, ExprError, Token};

/// Symbolic partial derivative with respect to variable `var` (0-based).
/// The result is simplified as it is built.
pub fn diff(e: &Expr, var: usize) -> Expr {
    if !e.free_vars().contains(var) {
        return Expr::zero();
    }
    let k = e.children();
    match e.token() {
        Token::Var(j) => {
            if j == var {
                Expr::one()
            } else {
                Expr::zero()
            }
        }
        Token::Const(_) => Expr::zero(),
        Token::Add => s_add(diff(&k[0], var), diff(&k[1], var)),
        Token::Sub => s_sub(diff(&k[0], var), diff(&k[1], var)),
        Token::Mul => s_add(
            s_mul(diff(&k[0], var), k[1].clone()),
            s_mul(k[0].clone(), diff(&k[1], var)),
        ),
        Token::Neg => s_neg(diff(&k[0], var)),
        Token::Sin => s_mul(Expr::cos(k[0].clone()), diff(&k[0], var)),
        Token::Cos => s_mul(s_neg(Expr::sin(k[0].clone())), diff(&k[0], var)),
    }
}

/// `[∂e/∂x_0, .., ∂e/∂x_{n-1}]`.
pub fn gradient(e: &Expr, n: usize) -> Vec<Expr> {
    (0..n).map(|i| diff(e, i)).collect()
}

/// `Σ_i ∂V/∂x_i · f_i`, simplified.
pub fn lie_derivative(v: &Expr, f: &[Expr]) -> Result<Expr, ExprError> {
    let span = v.free_vars().span();
    if span > f.len() {
        return Err(ExprError::DimensionMismatch {
            expected: span,
            got: f.len(),
        });
    }
    let mut acc = Expr::zero();
    for (i, fi) in f.iter().enumerate() {
        let d = diff(v, i);
        if d.is_const(0.0) {
            continue;
        }
        acc = s_add(acc, s_mul(d, fi.clone()));
    }
    Ok(simplify(&acc))
}
