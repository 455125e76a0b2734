//! Empirical Lyapunov risk, the bounded reward `1 / (1 + risk)`, and the
//! projected-gradient pre-pass that sharpens the scoring set.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Domain, DynamicalSystem};
use crate::expr::{gradient, CompiledExpr, Expr, VarSet};
use crate::rng;

/// Points closer than this to the origin are never counted as violations.
pub const ORIGIN_EXCLUSION: f64 = 1e-3;

/// A candidate whose `|V|` stays below this on every scoring point is
/// treated as identically zero (e.g. `cos(a*b) - cos(b*a)` up to rounding).
pub const ZERO_TOLERANCE: f64 = 1e-9;

/// Where a stored point came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PointSource {
    /// Uniform training sample drawn before the first epoch.
    Initial,
    ShgoV,
    ShgoLie,
    Random,
    Pgd,
    Certifier,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoreEntry {
    pub epoch: usize,
    pub source: PointSource,
}

/// The training set `X`: grows monotonically, every point inside the box.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CounterexampleStore {
    domain: Domain,
    data: Vec<f64>,
    log: Vec<StoreEntry>,
}

impl CounterexampleStore {
    pub fn new(domain: Domain) -> Self {
        CounterexampleStore {
            domain,
            data: Vec::new(),
            log: Vec::new(),
        }
    }

    /// A store seeded with `n` uniform points.
    pub fn with_uniform<R: Rng + ?Sized>(domain: Domain, n: usize, rng: &mut R) -> Self {
        let mut s = CounterexampleStore::new(domain);
        let pts = s.domain.sample(n, rng);
        for row in pts.rows() {
            s.push(row.as_slice().unwrap(), 0, PointSource::Initial);
        }
        s
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn len(&self) -> usize {
        self.log.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log.is_empty()
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    /// Appends a point. Points outside the box are rejected (returns false).
    pub fn push(&mut self, x: &[f64], epoch: usize, source: PointSource) -> bool {
        if !self.domain.contains(x) || x.iter().any(|v| !v.is_finite()) {
            return false;
        }
        self.data.extend_from_slice(x);
        self.log.push(StoreEntry { epoch, source });
        true
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.len(), self.dim()), &self.data).expect("consistent shape")
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let n = self.dim();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn log(&self) -> &[StoreEntry] {
        &self.log
    }

    pub fn count_from(&self, source: PointSource) -> usize {
        self.log.iter().filter(|e| e.source == source).count()
    }
}

/// A candidate with its Lie derivative compiled for batch evaluation.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub v: Expr,
    pub lie: Expr,
    v_c: CompiledExpr,
    lie_c: CompiledExpr,
}

impl Prepared {
    pub fn new(v: &Expr, f: &DynamicalSystem) -> Option<Self> {
        let lie = f.lie_derivative(v).ok()?;
        Some(Prepared {
            v_c: v.compile(),
            lie_c: lie.compile(),
            v: v.clone(),
            lie,
        })
    }

    pub fn v_compiled(&self) -> &CompiledExpr {
        &self.v_c
    }

    pub fn lie_compiled(&self) -> &CompiledExpr {
        &self.lie_c
    }

    /// `(Σ hinge, all V values exactly zero)` over the rows of `x`.
    fn hinge_sum(&self, x: ArrayView2<f64>) -> (f64, bool) {
        if x.nrows() == 0 {
            return (0.0, true);
        }
        let v = self.v_c.eval_batch(x).expect("dimension checked");
        let l = self.lie_c.eval_batch(x).expect("dimension checked");
        let mut sum = 0.0;
        let mut zero = true;
        for (&vi, &li) in v.iter().zip(l.iter()) {
            if !(vi.is_finite() && li.is_finite()) {
                return (f64::INFINITY, false);
            }
            zero &= vi.abs() <= ZERO_TOLERANCE;
            sum += li.max(0.0) + (-vi).max(0.0);
        }
        (sum, zero)
    }

    /// Risk over the union of several point sets. Returns `None` when `V`
    /// numerically vanishes at every point (a degenerate, effectively variable-free
    /// candidate).
    pub fn risk_over(&self, sets: &[ArrayView2<f64>]) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        let mut zero = true;
        for s in sets {
            let (h, z) = self.hinge_sum(s.view());
            sum += h;
            n += s.nrows();
            zero &= z;
        }
        if n == 0 {
            return Some(0.0);
        }
        if zero {
            return None;
        }
        Some(sum / n as f64)
    }
}

/// `(1/N) Σ [max(0, L_f V(x_i)) + max(0, −V(x_i))]`; non-finite → `+∞`.
pub fn lyapunov_risk(v: &Expr, f: &DynamicalSystem, x: ArrayView2<f64>) -> f64 {
    match Prepared::new(v, f) {
        None => f64::INFINITY,
        Some(p) => {
            let n = x.nrows().max(1) as f64;
            p.hinge_sum(x).0 / n
        }
    }
}

/// `1 / (1 + risk)`, or 0 for invalid candidates and non-finite risk.
pub fn reward_from_risk(risk: f64, valid: bool) -> f64 {
    if !valid || !risk.is_finite() || risk < 0.0 {
        0.0
    } else {
        1.0 / (1.0 + risk)
    }
}

/// Structural validity: every state variable appears.
pub fn uses_all_variables(v: &Expr, n: usize) -> bool {
    v.free_vars().is_superset(VarSet::full(n))
}

/// Reward of one candidate over `x`.
pub fn reward(v: &Expr, f: &DynamicalSystem, x: ArrayView2<f64>, valid: bool) -> f64 {
    if !valid || !uses_all_variables(v, f.dim()) {
        return 0.0;
    }
    match Prepared::new(v, f).and_then(|p| p.risk_over(&[x])) {
        Some(r) => reward_from_risk(r, true),
        None => 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgdConfig {
    pub starts: usize,
    pub steps: usize,
    /// Step size as a fraction of the widest box side.
    pub step_frac: f64,
}

impl Default for PgdConfig {
    fn default() -> Self {
        PgdConfig {
            starts: 256,
            steps: 50,
            step_frac: 0.05,
        }
    }
}

/// `x ← clip(x − η ∇e(x))` from `starts` uniform points.
pub fn pgd_minimize<R: Rng + ?Sized>(
    e: &Expr,
    d: &Domain,
    starts: usize,
    steps: usize,
    step_size: f64,
    rng: &mut R,
) -> Array2<f64> {
    let x0 = d.sample(starts, rng);
    pgd_from(e, d, x0, steps, step_size)
}

/// [`pgd_minimize`] from given initial points.
pub fn pgd_from(e: &Expr, d: &Domain, mut x: Array2<f64>, steps: usize, eta: f64) -> Array2<f64> {
    let n = d.dim();
    let grads: Vec<Option<CompiledExpr>> = gradient(e, n)
        .iter()
        .map(|g| (!g.is_const(0.0)).then(|| g.compile()))
        .collect();
    let m = x.nrows();
    let mut g = vec![0.0; m];
    let mut step = Array2::<f64>::zeros((m, n));
    for _ in 0..steps {
        for (j, gj) in grads.iter().enumerate() {
            match gj {
                Some(c) => {
                    c.eval_into(x.view(), &mut g).expect("dimension checked");
                    for i in 0..m {
                        step[[i, j]] = g[i];
                    }
                }
                None => step.column_mut(j).fill(0.0),
            }
        }
        for i in 0..m {
            for j in 0..n {
                let s = step[[i, j]];
                // A non-finite gradient leaves the coordinate in place.
                let next = if s.is_finite() { x[[i, j]] - eta * s } else { x[[i, j]] };
                x[[i, j]] = next.clamp(d.lower[j], d.upper[j]);
            }
        }
    }
    x
}

/// Violation test shared by scoring and falsification.
pub fn violates(v: f64, l: f64) -> bool {
    !(v > 0.0 && l < 0.0)
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Outcome of [`score_batch`].
#[derive(Debug, Clone, Default)]
pub struct BatchScores {
    pub rewards: Vec<f64>,
    pub risks: Vec<f64>,
    /// Number of temporary PGD points used for this batch.
    pub temporary: usize,
}

/// Scores a batch. PGD minimizes `V` and `−L_f V` for every valid
/// candidate; the violating end points form a temporary set that is added to
/// `X` for scoring the whole batch and then discarded.
pub fn score_batch(
    candidates: &[Option<Prepared>],
    f: &DynamicalSystem,
    store: &CounterexampleStore,
    pgd: Option<&PgdConfig>,
    seed: u64,
) -> BatchScores {
    let n = f.dim();
    let d = f.domain();
    let mut temp: Vec<f64> = Vec::new();
    if let Some(cfg) = pgd {
        let eta = cfg.step_frac * d.max_width();
        for (i, c) in candidates.iter().enumerate() {
            let Some(p) = c else { continue };
            let mut r = rng::stream(seed, &[i as u64]);
            for target in [p.v.clone(), -p.lie.clone()] {
                let pts = pgd_minimize(&target, d, cfg.starts, cfg.steps, eta, &mut r);
                for row in pts.rows() {
                    let x = row.as_slice().unwrap();
                    if norm(x) <= ORIGIN_EXCLUSION {
                        continue;
                    }
                    if violates(p.v_c.eval_point(x), p.lie_c.eval_point(x)) {
                        temp.extend_from_slice(x);
                    }
                }
            }
        }
    }
    let t_rows = temp.len() / n;
    let t = ArrayView2::from_shape((t_rows, n), &temp).expect("consistent shape");
    let x = store.points();
    let mut out = BatchScores {
        rewards: Vec::with_capacity(candidates.len()),
        risks: Vec::with_capacity(candidates.len()),
        temporary: t_rows,
    };
    for c in candidates {
        let risk = c
            .as_ref()
            .and_then(|p| p.risk_over(&[x.view(), t.view()]))
            .unwrap_or(f64::INFINITY);
        out.risks.push(risk);
        out.rewards.push(reward_from_risk(risk, c.is_some()));
    }
    out
}
