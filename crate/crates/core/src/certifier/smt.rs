//! SMT-LIB2 export. The script asserts the negation of the Lyapunov
//! conditions on `D \ B_ε(0)`, so `unsat` from a solver means certified.

use std::fmt::Write;

use crate::dynamics::{Domain, DynamicalSystem};
use crate::expr::{Expr, Token};

/// Real literal in SMT-LIB2 decimal syntax (no exponent, `(- …)` for sign).
pub fn smt_real(v: f64) -> String {
    assert!(v.is_finite(), "cannot export {v}");
    let a = v.abs();
    let mut s = format!("{a}");
    if !s.contains('.') {
        s.push_str(".0");
    }
    if v.is_sign_negative() && v != 0.0 {
        format!("(- {s})")
    } else {
        s
    }
}

fn symbol(name: &str) -> String {
    let simple = !name.is_empty()
        && !name.starts_with(|c: char| c.is_ascii_digit())
        && name.chars().all(|c| c.is_ascii_alphanumeric() || "_.".contains(c));
    if simple {
        name.to_string()
    } else {
        format!("|{}|", name.replace('|', "_").replace('\\', "_"))
    }
}

/// S-expression for `e` with the given variable names.
pub fn to_sexpr(e: &Expr, names: &[String]) -> String {
    let mut out = String::new();
    write_sexpr(e, names, &mut out);
    out
}

fn write_sexpr(e: &Expr, names: &[String], out: &mut String) {
    match e.token() {
        Token::Var(i) => out.push_str(&symbol(&names[i])),
        Token::Const(c) => out.push_str(&smt_real(c)),
        t => {
            out.push('(');
            out.push_str(match t {
                Token::Add => "+",
                Token::Sub | Token::Neg => "-",
                Token::Mul => "*",
                Token::Sin => "sin",
                _ => "cos",
            });
            for c in e.children() {
                out.push(' ');
                write_sexpr(c, names, out);
            }
            out.push(')');
        }
    }
}

/// Full script for `(V, f)` over `d`.
pub fn export_smtlib(v: &Expr, f: &DynamicalSystem, d: &Domain, eps: f64, delta: f64) -> String {
    let names = f.variables();
    let lie = f
        .lie_derivative(v)
        .expect("candidate variables are within the system dimension");
    let mut s = String::new();
    let _ = writeln!(s, "; system: {}", f.name());
    let _ = writeln!(s, "; V = {}", v.display_with(names));
    let _ = writeln!(s, "; negated conditions on D \\ B_eps(0): unsat means certified");
    let _ = writeln!(s, "(set-logic QF_NRA)");
    for n in names {
        let _ = writeln!(s, "(declare-fun {} () Real)", symbol(n));
    }
    for (j, n) in names.iter().enumerate() {
        let x = symbol(n);
        let _ = writeln!(
            s,
            "(assert (and (<= {} {x}) (<= {x} {})))",
            smt_real(d.lower[j]),
            smt_real(d.upper[j])
        );
    }
    let sq: Vec<String> = names
        .iter()
        .map(|n| {
            let x = symbol(n);
            format!("(* {x} {x})")
        })
        .collect();
    let norm2 = if sq.len() == 1 {
        sq[0].clone()
    } else {
        format!("(+ {})", sq.join(" "))
    };
    let _ = writeln!(s, "(assert (>= {norm2} {}))", smt_real(eps * eps));
    let _ = writeln!(
        s,
        "(assert (or (<= {} {}) (>= {} {})))",
        to_sexpr(v, names),
        smt_real(delta),
        to_sexpr(&lie, names),
        smt_real(-delta)
    );
    let _ = writeln!(s, "(check-sat)");
    let _ = writeln!(s, "(exit)");
    s
}
