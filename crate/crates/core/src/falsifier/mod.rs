//! Numerical verification: locate the minimizers of `V` and `−L_f V`, sample
//! around them and across the box, and report every violating point.

mod quasi;
mod shgo;

use ndarray::ArrayView2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{Domain, DynamicalSystem};
use crate::expr::Expr;
use crate::reward::{
    norm, pgd_minimize, violates, CounterexampleStore, PgdConfig, PointSource, Prepared,
    ORIGIN_EXCLUSION,
};
use crate::rng;

pub use quasi::Halton;
pub use shgo::{shgo_minimize, ExprObjective, Minimizer, Objective, ShgoConfig, ShgoResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FalsifierMode {
    /// Minimizer search by the k-NN complex, then local and uniform sampling.
    Shgo,
    /// Uniform sampling only.
    Random,
    /// Minimizers from plain projected gradient descent.
    Pgd,
}

impl std::str::FromStr for FalsifierMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "shgo" => Ok(FalsifierMode::Shgo),
            "random" => Ok(FalsifierMode::Random),
            "pgd" | "pgd-only" => Ok(FalsifierMode::Pgd),
            _ => Err(format!("unknown falsifier `{s}` (expected shgo, random or pgd)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FalsifierConfig {
    pub mode: FalsifierMode,
    pub shgo: ShgoConfig,
    pub pgd: PgdConfig,
    /// Neighbourhood radius as a fraction of the box diameter.
    pub radius_frac: f64,
    /// Samples per bucket: around `x1*`, around `x2*`, uniform.
    pub samples: usize,
    pub origin_exclusion: f64,
    /// Keep at most this many counterexamples per candidate (worst first).
    pub max_counterexamples: usize,
}

impl Default for FalsifierConfig {
    fn default() -> Self {
        FalsifierConfig {
            mode: FalsifierMode::Shgo,
            shgo: ShgoConfig::default(),
            pgd: PgdConfig::default(),
            radius_frac: 0.05,
            samples: 800,
            origin_exclusion: ORIGIN_EXCLUSION,
            max_counterexamples: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    NumericallyValid,
    Violated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub x: Vec<f64>,
    pub v: f64,
    pub lie: f64,
    pub source: PointSource,
}

impl Counterexample {
    /// `max(0, −V) + max(0, L_f V)`.
    pub fn severity(&self) -> f64 {
        (-self.v).max(0.0) + self.lie.max(0.0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FalsifyReport {
    pub verdict: Verdict,
    pub counterexamples: Vec<Counterexample>,
    /// Minimizer of `V`.
    pub x_v: Option<Minimizer>,
    /// Minimizer of `−L_f V` (value is `−L_f V`).
    pub x_lie: Option<Minimizer>,
    /// Samples drawn around `x_v`, around `x_lie`, and uniformly.
    pub samples: [usize; 3],
    /// Violating points already in the training set.
    pub store_violations: usize,
}

/// Uniform samples from `B_r(c) ∩ box`. Rejection from the ball is capped at
/// 10× oversampling; any shortfall is drawn from the bounding box of the
/// intersection.
pub fn sample_ball_in_box<R: Rng + ?Sized>(
    c: &[f64],
    r: f64,
    d: &Domain,
    count: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let n = c.len();
    let mut out = Vec::with_capacity(count);
    let mut tries = 0;
    while out.len() < count && tries < 10 * count {
        tries += 1;
        let dir: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let len = norm(&dir);
        if len == 0.0 {
            continue;
        }
        let rad = r * rng.gen::<f64>().powf(1.0 / n as f64);
        let x: Vec<f64> = c.iter().zip(&dir).map(|(ci, di)| ci + rad * di / len).collect();
        if d.contains(&x) {
            out.push(x);
        }
    }
    while out.len() < count {
        let x = (0..n)
            .map(|j| {
                let lo = (c[j] - r).max(d.lower[j]);
                let hi = (c[j] + r).min(d.upper[j]);
                if lo < hi {
                    rng.gen_range(lo..=hi)
                } else {
                    lo
                }
            })
            .collect();
        out.push(x);
    }
    out
}

fn best_pgd<R: Rng + ?Sized>(e: &Expr, d: &Domain, cfg: &PgdConfig, rng: &mut R) -> Minimizer {
    let eta = cfg.step_frac * d.max_width();
    let pts = pgd_minimize(e, d, cfg.starts, cfg.steps, eta, rng);
    let c = e.compile();
    let mut best = Minimizer {
        x: pts.row(0).to_vec(),
        value: f64::INFINITY,
    };
    for row in pts.rows() {
        let x = row.as_slice().unwrap();
        let v = c.eval_point(x);
        if v < best.value {
            best = Minimizer {
                x: x.to_vec(),
                value: v,
            };
        }
    }
    best
}

/// Checks one candidate.
pub fn verify_prepared<R: Rng + ?Sized>(
    p: &Prepared,
    f: &DynamicalSystem,
    cfg: &FalsifierConfig,
    store: Option<&CounterexampleStore>,
    rng: &mut R,
) -> FalsifyReport {
    let d = f.domain();
    let n = f.dim();
    let neg_lie = -p.lie.clone();
    let (x_v, x_lie) = match cfg.mode {
        FalsifierMode::Shgo => {
            let a = shgo_minimize(&ExprObjective::new(&p.v, n), d, &cfg.shgo, rng).best;
            let b = shgo_minimize(&ExprObjective::new(&neg_lie, n), d, &cfg.shgo, rng).best;
            (Some(a), Some(b))
        }
        FalsifierMode::Pgd => (
            Some(best_pgd(&p.v, d, &cfg.pgd, rng)),
            Some(best_pgd(&neg_lie, d, &cfg.pgd, rng)),
        ),
        FalsifierMode::Random => (None, None),
    };
    let r = cfg.radius_frac * d.diameter();
    let mut buckets: Vec<(PointSource, Vec<Vec<f64>>)> = Vec::new();
    let local_source = |s| if cfg.mode == FalsifierMode::Pgd { PointSource::Pgd } else { s };
    if let Some(m) = &x_v {
        buckets.push((
            local_source(PointSource::ShgoV),
            sample_ball_in_box(&m.x, r, d, cfg.samples, rng),
        ));
    }
    if let Some(m) = &x_lie {
        buckets.push((
            local_source(PointSource::ShgoLie),
            sample_ball_in_box(&m.x, r, d, cfg.samples, rng),
        ));
    }
    // Random mode spends the whole sample budget uniformly.
    let uniform = if cfg.mode == FalsifierMode::Random {
        3 * cfg.samples
    } else {
        cfg.samples
    };
    let u = d.sample(uniform, rng);
    buckets.push((
        PointSource::Random,
        u.rows().into_iter().map(|r| r.to_vec()).collect(),
    ));

    let mut samples = [0usize; 3];
    let mut ce = Vec::new();
    for (bi, (source, pts)) in buckets.iter().enumerate() {
        let slot = if cfg.mode == FalsifierMode::Random { 2 } else { bi };
        samples[slot] = pts.len();
        for x in pts {
            if norm(x) <= cfg.origin_exclusion {
                continue;
            }
            let v = p.v_compiled().eval_point(x);
            let l = p.lie_compiled().eval_point(x);
            if violates(v, l) {
                ce.push(Counterexample {
                    x: x.clone(),
                    v,
                    lie: l,
                    source: *source,
                });
            }
        }
    }
    ce.sort_by(|a, b| b.severity().total_cmp(&a.severity()));
    ce.truncate(cfg.max_counterexamples);

    let store_violations = store.map_or(0, |s| count_violations(p, s.points(), cfg.origin_exclusion));
    let verdict = if ce.is_empty() && store_violations == 0 {
        Verdict::NumericallyValid
    } else {
        Verdict::Violated
    };
    FalsifyReport {
        verdict,
        counterexamples: ce,
        x_v,
        x_lie,
        samples,
        store_violations,
    }
}

fn count_violations(p: &Prepared, x: ArrayView2<f64>, eps: f64) -> usize {
    if x.nrows() == 0 {
        return 0;
    }
    let v = p.v_compiled().eval_batch(x).expect("dimension checked");
    let l = p.lie_compiled().eval_batch(x).expect("dimension checked");
    x.rows()
        .into_iter()
        .enumerate()
        .filter(|(i, row)| norm(row.as_slice().unwrap()) > eps && violates(v[*i], l[*i]))
        .count()
}

/// [`verify_prepared`] for a bare expression.
pub fn verify_candidate<R: Rng + ?Sized>(
    v: &Expr,
    f: &DynamicalSystem,
    cfg: &FalsifierConfig,
    rng: &mut R,
) -> FalsifyReport {
    match Prepared::new(v, f) {
        Some(p) => verify_prepared(&p, f, cfg, None, rng),
        None => FalsifyReport {
            verdict: Verdict::Violated,
            counterexamples: Vec::new(),
            x_v: None,
            x_lie: None,
            samples: [0; 3],
            store_violations: 0,
        },
    }
}

/// Outcome of [`verify_batch`].
#[derive(Debug, Clone)]
pub struct BatchVerification {
    /// Index (into the input slice) of the first numerically valid candidate.
    pub valid: Option<usize>,
    /// Indices actually checked, in order.
    pub checked: Vec<usize>,
    pub reports: Vec<FalsifyReport>,
    /// Points appended to the store.
    pub added: usize,
}

/// Verifies candidates in descending reward order (at most `top_m`),
/// stopping at the first numerically valid one. Counterexamples are appended
/// to the store.
#[allow(clippy::too_many_arguments)]
pub fn verify_batch(
    candidates: &[Option<Prepared>],
    rewards: &[f64],
    f: &DynamicalSystem,
    cfg: &FalsifierConfig,
    store: &mut CounterexampleStore,
    top_m: usize,
    epoch: usize,
    seed: u64,
) -> BatchVerification {
    let mut order: Vec<usize> = (0..candidates.len())
        .filter(|&i| candidates[i].is_some())
        .collect();
    order.sort_by(|&a, &b| rewards[b].total_cmp(&rewards[a]).then(a.cmp(&b)));
    order.truncate(top_m);
    let mut out = BatchVerification {
        valid: None,
        checked: Vec::new(),
        reports: Vec::new(),
        added: 0,
    };
    for i in order {
        let p = candidates[i].as_ref().unwrap();
        let mut r = rng::stream(seed, &[i as u64]);
        let rep = verify_prepared(p, f, cfg, Some(store), &mut r);
        for c in &rep.counterexamples {
            if store.push(&c.x, epoch, c.source) {
                out.added += 1;
            }
        }
        let ok = rep.verdict == Verdict::NumericallyValid;
        out.checked.push(i);
        out.reports.push(rep);
        if ok {
            out.valid = Some(i);
            break;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::benchmark;
    use crate::expr::parse_infix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quick() -> FalsifierConfig {
        FalsifierConfig {
            shgo: ShgoConfig {
                starts: 512,
                ..ShgoConfig::default()
            },
            ..FalsifierConfig::default()
        }
    }

    #[test]
    fn vdp_quadratic_passes() {
        let f = benchmark("van_der_pol").unwrap();
        let v = parse_infix("x1^2 + x2^2", 2).unwrap();
        let rep = verify_candidate(&v, &f, &quick(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(rep.verdict, Verdict::NumericallyValid);
        assert_eq!(rep.samples, [800, 800, 800]);
    }

    #[test]
    fn shifted_square_is_falsified() {
        let f = benchmark("van_der_pol").unwrap();
        let v = parse_infix("(x1 + x2)^2 + x2", 2).unwrap();
        let rep = verify_candidate(&v, &f, &quick(), &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(rep.verdict, Verdict::Violated);
        assert!(rep.counterexamples.iter().any(|c| c.v <= 0.0));
        for c in &rep.counterexamples {
            assert_eq!(v.eval(&c.x), c.v);
            assert!(c.v <= 0.0 || c.lie >= 0.0);
            assert!(norm(&c.x) > ORIGIN_EXCLUSION);
        }
    }

    #[test]
    fn missing_variable_is_falsified() {
        let f = benchmark("van_der_pol").unwrap();
        let v = parse_infix("x1^2", 2).unwrap();
        let rep = verify_candidate(&v, &f, &quick(), &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(rep.verdict, Verdict::Violated);
        assert!(rep.counterexamples.iter().any(|c| c.lie > 0.0));
    }

    #[test]
    fn ball_sampling_stays_in_box() {
        let d = Domain::cube(3, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = sample_ball_in_box(&[1.0, 1.0, 1.0], 0.3, &d, 500, &mut rng);
        assert_eq!(pts.len(), 500);
        for p in &pts {
            assert!(d.contains(p));
            let dist = norm(&[p[0] - 1.0, p[1] - 1.0, p[2] - 1.0]);
            assert!(dist <= 0.3 * 3f64.sqrt() + 1e-12);
        }
    }

    #[test]
    fn batch_appends_exactly_reported_points() {
        let f = benchmark("van_der_pol").unwrap();
        let mut store = CounterexampleStore::new(f.domain().clone());
        let bad = Prepared::new(&parse_infix("x1^2", 2).unwrap(), &f);
        let good = Prepared::new(&parse_infix("x1^2 + x2^2", 2).unwrap(), &f);
        let res = verify_batch(
            &[bad, good, None],
            &[0.9, 0.8, 1.0],
            &f,
            &quick(),
            &mut store,
            10,
            1,
            0,
        );
        assert_eq!(res.checked, vec![0, 1]);
        assert_eq!(res.valid, Some(1));
        assert_eq!(store.len(), res.added);
        assert_eq!(res.added, res.reports[0].counterexamples.len());
    }
}
