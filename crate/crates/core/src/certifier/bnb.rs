use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::interval::{Interval, IntervalProgram};
use crate::dynamics::{Domain, DynamicalSystem};
use crate::expr::{CompiledExpr, Expr};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifyConfig {
    /// Radius of the excluded origin ball.
    pub eps: f64,
    /// Margin both conditions must clear.
    pub delta: f64,
    pub max_boxes: u64,
    pub time_limit_s: f64,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        CertifyConfig {
            eps: 1e-3,
            delta: 1e-12,
            max_boxes: 2_000_000,
            time_limit_s: 60.0,
        }
    }
}

impl CertifyConfig {
    /// The looser tolerances used for quick per-epoch checks.
    pub fn coarse() -> Self {
        CertifyConfig {
            eps: 1e-1,
            delta: 1e-6,
            ..CertifyConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CertVerdict {
    Certified,
    Counterexample { x: Vec<f64>, v: f64, lie: f64 },
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub verdict: CertVerdict,
    pub boxes: u64,
    pub max_depth: u32,
    pub eps: f64,
    pub delta: f64,
}

impl Certificate {
    pub fn is_certified(&self) -> bool {
        self.verdict == CertVerdict::Certified
    }
}

fn corner_dist2(bx: &[Interval]) -> f64 {
    bx.iter()
        .map(|iv| iv.lo.abs().max(iv.hi.abs()).powi(2))
        .sum()
}

fn mid(bx: &[Interval]) -> Vec<f64> {
    bx.iter().map(|iv| iv.mid()).collect()
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Up to this dimension every box checks its `2^n` corners.
const CORNER_DIMS: usize = 4;

fn corner_violation(
    bx: &[Interval],
    cv: &CompiledExpr,
    cl: &CompiledExpr,
    eps2: f64,
    delta: f64,
) -> Option<(Vec<f64>, f64, f64)> {
    let n = bx.len().min(16);
    (0..1u32 << n).find_map(|mask| {
        let x: Vec<f64> = bx
            .iter()
            .enumerate()
            .map(|(j, iv)| if j < n && mask >> j & 1 == 1 { iv.hi } else { iv.lo })
            .collect();
        if norm2(&x) <= eps2 {
            return None;
        }
        let (v, l) = (cv.eval_point(&x), cl.eval_point(&x));
        (!(v > delta) || !(l < -delta)).then_some((x, v, l))
    })
}

/// Proves `V > δ` and `L_f V < −δ` on `D \ B_ε(0)` by interval
/// branch-and-bound, or finds a point where one fails.
pub fn certify(v: &Expr, f: &DynamicalSystem, cfg: &CertifyConfig) -> Certificate {
    let lie = match f.lie_derivative(v) {
        Ok(l) => l,
        Err(_) => {
            return Certificate {
                verdict: CertVerdict::BudgetExhausted,
                boxes: 0,
                max_depth: 0,
                eps: cfg.eps,
                delta: cfg.delta,
            }
        }
    };
    certify_with_lie(v, &lie, f.domain(), cfg)
}

/// [`certify`] with a precomputed Lie derivative.
pub fn certify_with_lie(v: &Expr, lie: &Expr, d: &Domain, cfg: &CertifyConfig) -> Certificate {
    let pv = IntervalProgram::new(v);
    let pl = IntervalProgram::new(lie);
    let cv = v.compile();
    let cl = lie.compile();
    let eps2 = cfg.eps * cfg.eps;
    let delta = cfg.delta;
    let start = Instant::now();
    let limit = Duration::from_secs_f64(cfg.time_limit_s.max(0.0));
    let mut stack: Vec<(Vec<Interval>, u32)> = vec![(
        (0..d.dim())
            .map(|j| Interval::new(d.lower[j], d.upper[j]))
            .collect(),
        0,
    )];
    let mut scratch = Vec::new();
    let mut boxes = 0u64;
    let mut max_depth = 0u32;
    let done = |verdict, boxes, max_depth| Certificate {
        verdict,
        boxes,
        max_depth,
        eps: cfg.eps,
        delta: cfg.delta,
    };

    while let Some((bx, depth)) = stack.pop() {
        if boxes >= cfg.max_boxes || (boxes % 1024 == 0 && start.elapsed() > limit) {
            return done(CertVerdict::BudgetExhausted, boxes, max_depth);
        }
        boxes += 1;
        max_depth = max_depth.max(depth);

        // Strictly inside the excluded ball (with a relative guard for the
        // rounding in the squared distance).
        if corner_dist2(&bx) < eps2 * (1.0 - 1e-12) {
            continue;
        }
        let iv = pv.eval(&bx, &mut scratch);
        let il = pl.eval(&bx, &mut scratch);
        if iv.lo > delta && il.hi < -delta {
            continue;
        }

        let m = mid(&bx);
        if norm2(&m) > eps2 {
            let (vm, lm) = (cv.eval_point(&m), cl.eval_point(&m));
            if !(vm > delta) || !(lm < -delta) {
                return done(
                    CertVerdict::Counterexample { x: m, v: vm, lie: lm },
                    boxes,
                    max_depth,
                );
            }
        }

        // Low-dimensional boxes also test their corners, which catches
        // violations sitting on the domain boundary.
        if bx.len() <= CORNER_DIMS {
            if let Some((x, v, lie)) = corner_violation(&bx, &cv, &cl, eps2, delta) {
                return done(CertVerdict::Counterexample { x, v, lie }, boxes, max_depth);
            }
        }

        let (j, w) = bx
            .iter()
            .enumerate()
            .map(|(j, iv)| (j, iv.width()))
            .fold((0, -1.0), |acc, c| if c.1 > acc.1 { c } else { acc });
        let split = bx[j].mid();
        if !(w > 0.0) || split <= bx[j].lo || split >= bx[j].hi {
            // Cannot bisect further. Typically a condition degenerates on
            // the box boundary, where no midpoint ever lands: try corners.
            let verdict = corner_violation(&bx, &cv, &cl, eps2, delta)
                .map_or(CertVerdict::BudgetExhausted, |(x, v, lie)| CertVerdict::Counterexample { x, v, lie });
            return done(verdict, boxes, max_depth);
        }
        let mut a = bx.clone();
        let mut b = bx;
        a[j].hi = split;
        b[j].lo = split;
        stack.push((b, depth + 1));
        stack.push((a, depth + 1));
    }
    done(CertVerdict::Certified, boxes, max_depth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::benchmark;
    use crate::expr::parse_infix;

    fn saddle() -> DynamicalSystem {
        let f = vec![parse_infix("x2", 2).unwrap(), parse_infix("x1", 2).unwrap()];
        DynamicalSystem::with_default_names("saddle", f, Domain::cube(2, 1.0)).unwrap()
    }

    #[test]
    fn saddle_is_rejected() {
        let v = parse_infix("x1^2 + x2^2", 2).unwrap();
        let c = certify(&v, &saddle(), &CertifyConfig::default());
        match c.verdict {
            CertVerdict::Counterexample { x, lie, .. } => {
                assert!(lie >= -1e-12);
                assert!(4.0 * x[0] * x[1] >= -1e-12);
            }
            other => panic!("expected counterexample, got {other:?}"),
        }
    }

    #[test]
    fn strict_polynomial_certifies() {
        let f = benchmark("poly_2d").unwrap();
        let v = parse_infix("9*x1^2 + x2^2", 2).unwrap();
        let c = certify(&v, &f, &CertifyConfig::default());
        assert!(c.is_certified(), "{c:?}");
    }

    #[test]
    fn impossible_margin_never_certifies() {
        let f = benchmark("poly_2d").unwrap();
        let v = parse_infix("9*x1^2 + x2^2", 2).unwrap();
        let cfg = CertifyConfig {
            delta: 100.0,
            max_boxes: 10_000,
            ..CertifyConfig::default()
        };
        assert!(!certify(&v, &f, &cfg).is_certified());
    }

    #[test]
    fn tiny_budget_is_exhausted() {
        let f = benchmark("poly_2d").unwrap();
        let v = parse_infix("9*x1^2 + x2^2", 2).unwrap();
        let cfg = CertifyConfig {
            max_boxes: 3,
            ..CertifyConfig::default()
        };
        assert_eq!(certify(&v, &f, &cfg).verdict, CertVerdict::BudgetExhausted);
    }
}
