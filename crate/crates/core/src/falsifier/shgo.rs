//! Sampling-based global minimization over a box.
//!
//! Each round adds quasi-random samples, links every point to its `2n`
//! nearest neighbours (in box-normalized coordinates) with edges directed
//! toward lower values, and takes the sinks of that directed complex as the
//! minimizer pool. Pool members are polished by projected gradient descent
//! with backtracking, and the next round adds samples around them.

use ndarray::ArrayView2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::quasi::Halton;
use crate::dynamics::Domain;
use crate::expr::{gradient, CompiledExpr, Expr};

/// A differentiable objective on a box.
pub trait Objective {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], g: &mut [f64]);
    /// Values at every row of `pts`.
    fn values(&self, pts: ArrayView2<f64>, out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(pts.rows()) {
            *o = self.value(row.as_slice().expect("row-major points"));
        }
    }
}

/// An [`Expr`] with its symbolic gradient, compiled.
#[derive(Debug, Clone)]
pub struct ExprObjective {
    f: CompiledExpr,
    grad: Vec<Option<CompiledExpr>>,
}

impl ExprObjective {
    pub fn new(e: &Expr, n: usize) -> Self {
        ExprObjective {
            f: e.compile(),
            grad: gradient(e, n)
                .iter()
                .map(|g| (!g.is_const(0.0)).then(|| g.compile()))
                .collect(),
        }
    }
}

impl Objective for ExprObjective {
    fn value(&self, x: &[f64]) -> f64 {
        self.f.eval_point(x)
    }

    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        for (gi, c) in g.iter_mut().zip(&self.grad) {
            *gi = c.as_ref().map_or(0.0, |c| c.eval_point(x));
        }
    }

    fn values(&self, pts: ArrayView2<f64>, out: &mut [f64]) {
        self.f.eval_into(pts, out).expect("dimension checked");
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShgoConfig {
    /// Quasi-random samples added per round.
    pub starts: usize,
    pub iterations: usize,
    /// Largest number of pool members polished per round.
    pub pool_cap: usize,
    /// Iteration cap of the local descent.
    pub local_steps: usize,
}

impl Default for ShgoConfig {
    fn default() -> Self {
        ShgoConfig {
            starts: 2048,
            iterations: 3,
            pool_cap: 16,
            local_steps: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimizer {
    pub x: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShgoResult {
    pub best: Minimizer,
    /// Polished pool of the final round, best first.
    pub pool: Vec<Minimizer>,
    pub evaluations: usize,
}

fn key(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Global minimization of `obj` over `d`.
pub fn shgo_minimize<O: Objective + ?Sized, R: Rng + ?Sized>(
    obj: &O,
    d: &Domain,
    cfg: &ShgoConfig,
    rng: &mut R,
) -> ShgoResult {
    let n = d.dim();
    let k = 2 * n;
    let inv_w: Vec<f64> = (0..n).map(|j| 1.0 / d.width(j)).collect();
    let mut halton = Halton::new(n, rng);
    let mut pts: Vec<f64> = Vec::new();
    let mut vals: Vec<f64> = Vec::new();
    let mut pool: Vec<Minimizer> = Vec::new();
    let mut best: Option<Minimizer> = None;
    let mut evals = 0usize;

    for round in 0..cfg.iterations.max(1) {
        let start = vals.len();
        for _ in 0..cfg.starts.max(1) {
            pts.extend(halton.next_in(&d.lower, &d.upper));
        }
        if !pool.is_empty() {
            let per = (cfg.starts / (4 * pool.len())).max(1);
            let half = 0.05 * 0.5f64.powi(round as i32 - 1);
            for m in &pool {
                for _ in 0..per {
                    for j in 0..n {
                        let h = half * d.width(j);
                        let v = m.x[j] + rng.gen_range(-h..=h);
                        pts.push(v.clamp(d.lower[j], d.upper[j]));
                    }
                }
            }
        }
        let total = pts.len() / n;
        vals.resize(total, 0.0);
        let view = ArrayView2::from_shape((total - start, n), &pts[start * n..]).unwrap();
        obj.values(view, &mut vals[start..]);
        evals += total - start;

        // Sinks of the directed k-NN complex, scanned in value order.
        let mut order: Vec<usize> = (0..total).collect();
        order.sort_by(|&a, &b| key(vals[a]).total_cmp(&key(vals[b])).then(a.cmp(&b)));
        let mut sinks: Vec<usize> = Vec::new();
        let scan = (8 * cfg.pool_cap).min(total);
        for &i in &order[..scan] {
            if sinks.len() >= cfg.pool_cap || !vals[i].is_finite() {
                break;
            }
            if is_sink(i, &pts, &vals, n, k, &inv_w) {
                sinks.push(i);
            }
        }
        if sinks.is_empty() {
            sinks.push(order[0]);
        }

        pool.clear();
        for &i in &sinks {
            let (x, v, e) = polish(obj, d, &pts[i * n..(i + 1) * n], vals[i], cfg.local_steps);
            evals += e;
            if !pool.iter().any(|m| dist2(&m.x, &x, &inv_w) < 1e-16) {
                pool.push(Minimizer { x, value: v });
            }
        }
        pool.sort_by(|a, b| key(a.value).total_cmp(&key(b.value)));
        for m in &pool {
            pts.extend_from_slice(&m.x);
            vals.push(m.value);
            if best.as_ref().map_or(true, |b| key(m.value) < key(b.value)) {
                best = Some(m.clone());
            }
        }
    }
    ShgoResult {
        best: best.expect("at least one round"),
        pool,
        evaluations: evals,
    }
}

fn dist2(a: &[f64], b: &[f64], inv_w: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(inv_w)
        .map(|((x, y), w)| ((x - y) * w).powi(2))
        .sum()
}

/// True when no point among the `k` nearest neighbours of `i` is lower.
fn is_sink(i: usize, pts: &[f64], vals: &[f64], n: usize, k: usize, inv_w: &[f64]) -> bool {
    let xi = &pts[i * n..(i + 1) * n];
    let mut nn: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for j in 0..vals.len() {
        if j == i {
            continue;
        }
        let dj = dist2(xi, &pts[j * n..(j + 1) * n], inv_w);
        if nn.len() < k || dj < nn[nn.len() - 1].0 {
            let at = nn.partition_point(|&(d, _)| d <= dj);
            nn.insert(at, (dj, j));
            nn.truncate(k);
        }
    }
    nn.iter().all(|&(_, j)| key(vals[j]) >= key(vals[i]))
}

/// Projected gradient descent with Armijo backtracking.
fn polish<O: Objective + ?Sized>(
    obj: &O,
    d: &Domain,
    x0: &[f64],
    f0: f64,
    steps: usize,
) -> (Vec<f64>, f64, usize) {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f0;
    let mut g = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut alpha = 0.1 * d.max_width();
    let mut evals = 0;
    for _ in 0..steps {
        obj.gradient(&x, &mut g);
        if g.iter().any(|v| !v.is_finite()) {
            break;
        }
        let mut accepted = None;
        while alpha > 1e-14 {
            for j in 0..n {
                trial[j] = (x[j] - alpha * g[j]).clamp(d.lower[j], d.upper[j]);
            }
            let decrease: f64 = (0..n).map(|j| g[j] * (x[j] - trial[j])).sum();
            if decrease <= 0.0 {
                // Projected step is zero: a KKT point of the box problem.
                break;
            }
            let ft = obj.value(&trial);
            evals += 1;
            if ft.is_finite() && ft <= fx - 1e-4 * decrease {
                accepted = Some(ft);
                break;
            }
            alpha *= 0.5;
        }
        let Some(ft) = accepted else { break };
        let moved = x
            .iter()
            .zip(&trial)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let gain = fx - ft;
        x.copy_from_slice(&trial);
        fx = ft;
        alpha = (alpha * 2.0).min(d.max_width());
        if moved < 1e-13 || gain <= 1e-16 * (1.0 + fx.abs()) {
            break;
        }
    }
    (x, fx, evals)
}
