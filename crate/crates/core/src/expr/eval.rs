use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::{Expr, ExprError, Token};

/// Row-major `N × n` matrix of state points.
pub type Points = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Var(usize),
    Const(f64),
    Neg,
    Sin,
    Cos,
    Add,
    Sub,
    Mul,
}

/// Postfix program for column-at-a-time evaluation over a batch of points.
#[derive(Debug, Clone)]
pub struct CompiledExpr {
    ops: Vec<Op>,
    depth: usize,
    span: usize,
}

impl CompiledExpr {
    pub fn new(e: &Expr) -> Self {
        let mut ops = Vec::with_capacity(e.complexity());
        emit(e, &mut ops);
        let mut depth = 0usize;
        let mut cur = 0usize;
        for op in &ops {
            match op {
                Op::Var(_) | Op::Const(_) => cur += 1,
                Op::Neg | Op::Sin | Op::Cos => {}
                Op::Add | Op::Sub | Op::Mul => cur -= 1,
            }
            depth = depth.max(cur);
        }
        CompiledExpr {
            ops,
            depth,
            span: e.free_vars().span(),
        }
    }

    /// Smallest dimension the points must have.
    pub fn min_dim(&self) -> usize {
        self.span
    }

    /// Evaluates at every row of `points`. Non-finite values propagate.
    pub fn eval_batch(&self, points: ArrayView2<f64>) -> Result<Array1<f64>, ExprError> {
        let mut out = Array1::zeros(points.nrows());
        self.eval_into(points, out.as_slice_mut().expect("fresh array is contiguous"))?;
        Ok(out)
    }

    /// As [`CompiledExpr::eval_batch`], writing into `out` (length `N`).
    pub fn eval_into(&self, points: ArrayView2<f64>, out: &mut [f64]) -> Result<(), ExprError> {
        if points.ncols() < self.span {
            return Err(ExprError::DimensionMismatch {
                expected: self.span,
                got: points.ncols(),
            });
        }
        let n = points.nrows();
        assert_eq!(out.len(), n);
        if n == 0 {
            return Ok(());
        }
        let cols: Vec<ArrayView1<f64>> = (0..points.ncols()).map(|j| points.column(j)).collect();
        let mut stack: Vec<Vec<f64>> = (0..self.depth).map(|_| vec![0.0; n]).collect();
        let mut top = 0usize;
        for op in &self.ops {
            match *op {
                Op::Var(j) => {
                    let dst = &mut stack[top];
                    for (d, s) in dst.iter_mut().zip(cols[j].iter()) {
                        *d = *s;
                    }
                    top += 1;
                }
                Op::Const(c) => {
                    stack[top].fill(c);
                    top += 1;
                }
                Op::Neg => stack[top - 1].iter_mut().for_each(|v| *v = -*v),
                Op::Sin => stack[top - 1].iter_mut().for_each(|v| *v = v.sin()),
                Op::Cos => stack[top - 1].iter_mut().for_each(|v| *v = v.cos()),
                Op::Add | Op::Sub | Op::Mul => {
                    let (lo, hi) = stack.split_at_mut(top - 1);
                    let a = &mut lo[top - 2];
                    let b = &hi[0];
                    match *op {
                        Op::Add => a.iter_mut().zip(b).for_each(|(x, y)| *x += *y),
                        Op::Sub => a.iter_mut().zip(b).for_each(|(x, y)| *x -= *y),
                        _ => a.iter_mut().zip(b).for_each(|(x, y)| *x *= *y),
                    }
                    top -= 1;
                }
            }
        }
        debug_assert_eq!(top, 1);
        out.copy_from_slice(&stack[0]);
        Ok(())
    }

    /// Evaluates at a single point.
    pub fn eval_point(&self, x: &[f64]) -> f64 {
        let mut stack: Vec<f64> = Vec::with_capacity(self.depth);
        for op in &self.ops {
            match *op {
                Op::Var(j) => stack.push(x[j]),
                Op::Const(c) => stack.push(c),
                Op::Neg => {
                    let v = stack.last_mut().unwrap();
                    *v = -*v;
                }
                Op::Sin => {
                    let v = stack.last_mut().unwrap();
                    *v = v.sin();
                }
                Op::Cos => {
                    let v = stack.last_mut().unwrap();
                    *v = v.cos();
                }
                Op::Add | Op::Sub | Op::Mul => {
                    let b = stack.pop().unwrap();
                    let a = stack.last_mut().unwrap();
                    match *op {
                        Op::Add => *a += b,
                        Op::Sub => *a -= b,
                        _ => *a *= b,
                    }
                }
            }
        }
        stack[0]
    }
}

fn emit(e: &Expr, ops: &mut Vec<Op>) {
    for c in e.children() {
        emit(c, ops);
    }
    ops.push(match e.token() {
        Token::Var(j) => Op::Var(j),
        Token::Const(c) => Op::Const(c),
        Token::Neg => Op::Neg,
        Token::Sin => Op::Sin,
        Token::Cos => Op::Cos,
        Token::Add => Op::Add,
        Token::Sub => Op::Sub,
        Token::Mul => Op::Mul,
    });
}

impl Expr {
    /// Evaluates at every row of an `N × n` matrix.
    pub fn eval_batch(&self, points: ArrayView2<f64>) -> Result<Array1<f64>, ExprError> {
        self.compile().eval_batch(points)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::f64::consts::FRAC_PI_2;

    fn x(i: usize) -> Expr {
        Expr::var(i - 1)
    }

    #[test]
    fn batch_matches_examples() {
        let e = x(1) * x(1) + x(2) * x(2);
        let v = e.eval_batch(array![[3.0, 4.0], [0.0, 0.0]].view()).unwrap();
        assert_eq!(v.to_vec(), vec![25.0, 0.0]);

        let s = Expr::sin(x(1));
        assert_eq!(s.eval_batch(array![[0.0]].view()).unwrap()[0], 0.0);

        let pend = 2.0 * (1.0 - Expr::cos(x(1))) + x(2) * x(2);
        let v = pend.eval_batch(array![[FRAC_PI_2, 1.0]].view()).unwrap();
        assert!((v[0] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch() {
        let e = x(3);
        assert_eq!(
            e.eval_batch(array![[1.0, 2.0]].view()),
            Err(ExprError::DimensionMismatch {
                expected: 3,
                got: 2
            })
        );
    }

    #[test]
    fn overflow_propagates() {
        let mut e = x(1);
        for _ in 0..12 {
            e = Expr::square(e);
        }
        let v = e.eval_batch(array![[10.0]].view()).unwrap();
        assert!(v[0].is_infinite());
        let nan = e.clone() - e;
        assert!(nan.eval_batch(array![[10.0]].view()).unwrap()[0].is_nan());
    }

    #[test]
    fn point_and_batch_agree() {
        let e = Expr::cos(x(2) * x(1)) - Expr::sin(-x(1)) * 0.5;
        let pts = array![[0.3, -1.2], [2.0, 0.7], [-0.1, 0.0]];
        let c = e.compile();
        let b = c.eval_batch(pts.view()).unwrap();
        for (i, row) in pts.rows().into_iter().enumerate() {
            let r = row.to_vec();
            assert_eq!(c.eval_point(&r), b[i]);
            assert_eq!(e.eval(&r), b[i]);
        }
    }

    #[test]
    fn empty_batch() {
        let e = x(1);
        let pts = Array2::<f64>::zeros((0, 1));
        assert_eq!(e.eval_batch(pts.view()).unwrap().len(), 0);
    }
}
