//! The discovery loop: sample candidates from the policy, refine them with
//! GP, falsify the best, certify survivors, and update the policy with the
//! risk-seeking gradient and the expert-guidance loss.

use std::collections::{HashMap, HashSet};
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::certifier::{certify_with_lie, CertVerdict, Certificate, CertifyConfig};
use crate::dynamics::{tokenize_system, DynamicalSystem, SystemTokenization};
use crate::expr::{subtract_origin, Expr, Token};
use crate::falsifier::{verify_prepared, FalsifierConfig, FalsifierMode, ShgoConfig, Verdict};
use crate::gp::{self, elite_set, GpConfig, Member};
use crate::policy::{
    replay, Adam, ArchConfig, Candidate, LogLikGrad, Policy, PolicyError, SampleConfig, Weighted,
};
use crate::reward::{score_batch, uses_all_variables, CounterexampleStore, PgdConfig, PointSource, Prepared};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRunConfig {
    pub seed: u64,
    /// Risk-seeking quantile: the top `α` fraction of each batch is used.
    pub alpha: f64,
    /// Candidates sampled per epoch (`Q`).
    pub batch: usize,
    pub k_max: usize,
    /// Falsifier neighbourhood radius as a fraction of the box diameter.
    pub radius_frac: f64,
    pub epochs: usize,
    pub wall_clock_s: f64,
    pub lr: f64,
    pub gp: GpConfig,
    pub falsifier: FalsifierMode,
    pub shgo: ShgoConfig,
    pub gp_refine: bool,
    pub expert_guidance: bool,
    pub constants_in_policy: bool,
    pub entropy_coeff: f64,
    /// GP without policy learning: later epochs evolve the previous
    /// population instead of sampling.
    pub gp_only: bool,
    /// Candidates per epoch handed to the falsifier.
    pub top_m: usize,
    /// Uniform points in the training set before the first epoch.
    pub initial_points: usize,
    /// PGD pre-pass used when scoring; `None` disables it.
    pub pgd: Option<PgdConfig>,
    pub budget_mask: bool,
    /// Optimizer steps per epoch for each of the two losses.
    pub grad_steps: usize,
    pub arch: ArchConfig,
    pub certify: CertifyConfig,
    /// Save a checkpoint every this many epochs (0: never).
    pub checkpoint_every: usize,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            seed: 0,
            alpha: 0.1,
            batch: 500,
            k_max: 30,
            radius_frac: 0.05,
            epochs: 1000,
            wall_clock_s: 7200.0,
            lr: 1e-4,
            gp: GpConfig::default(),
            falsifier: FalsifierMode::Shgo,
            shgo: ShgoConfig::default(),
            gp_refine: true,
            expert_guidance: true,
            constants_in_policy: false,
            entropy_coeff: 0.0,
            gp_only: false,
            top_m: 10,
            initial_points: 1000,
            pgd: Some(PgdConfig::default()),
            budget_mask: true,
            grad_steps: 1,
            arch: ArchConfig::default(),
            certify: CertifyConfig::default(),
            checkpoint_every: 0,
        }
    }
}

impl TrainRunConfig {
    /// Settings sized for a single CPU core: a small network, a smaller
    /// batch and cheaper minimizer searches.
    pub fn desk() -> Self {
        TrainRunConfig {
            batch: 200,
            epochs: 300,
            wall_clock_s: 1800.0,
            lr: 1e-3,
            k_max: 20,
            gp: GpConfig {
                k_max: 20,
                ..GpConfig::default()
            },
            shgo: ShgoConfig {
                starts: 512,
                ..ShgoConfig::default()
            },
            pgd: Some(PgdConfig {
                starts: 64,
                steps: 30,
                ..PgdConfig::default()
            }),
            initial_points: 500,
            arch: ArchConfig::small(),
            certify: CertifyConfig {
                time_limit_s: 20.0,
                ..CertifyConfig::default()
            },
            ..TrainRunConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        if self.batch == 0 {
            return Err("batch must be at least 1".into());
        }
        if self.k_max == 0 {
            return Err("k_max must be at least 1".into());
        }
        if !(self.radius_frac > 0.0) {
            return Err("radius fraction must be positive".into());
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err("learning rate must be positive".into());
        }
        if !(self.wall_clock_s >= 0.0) {
            return Err("wall-clock cap must be non-negative".into());
        }
        if !(self.entropy_coeff >= 0.0) {
            return Err("entropy coefficient must be non-negative".into());
        }
        for (name, p) in [
            ("mutation", self.gp.mutation_prob),
            ("crossover", self.gp.crossover_prob),
            ("elite fraction", self.gp.elite_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("GP {name} probability must lie in [0, 1]"));
            }
        }
        self.arch.validate()
    }

    pub fn sample_config(&self) -> SampleConfig {
        SampleConfig {
            k_max: self.k_max,
            constants: self.constants_in_policy,
            budget_mask: self.budget_mask,
        }
    }

    pub fn falsifier_config(&self) -> FalsifierConfig {
        FalsifierConfig {
            mode: self.falsifier,
            shgo: self.shgo,
            pgd: self.pgd.unwrap_or_default(),
            radius_frac: self.radius_frac,
            ..FalsifierConfig::default()
        }
    }
}

/// Named ablation studies; each expands into labelled run configurations.
pub const ABLATIONS: [&str; 3] = ["alpha-sweep", "verifier-swap", "gp-toggle"];

/// The runs of ablation `name` derived from `base`.
pub fn ablation_runs(name: &str, base: &TrainRunConfig) -> Option<Vec<(String, TrainRunConfig)>> {
    let with = |label: &str, edit: &dyn Fn(&mut TrainRunConfig)| {
        let mut c = base.clone();
        edit(&mut c);
        (label.to_string(), c)
    };
    Some(match name {
        // Policy gradient alone, so the quantile is the only difference.
        "alpha-sweep" => [0.1, 0.5, 1.0]
            .iter()
            .map(|&a| {
                with(&format!("alpha={a}"), &|c| {
                    c.alpha = a;
                    c.gp_refine = false;
                    c.expert_guidance = false;
                })
            })
            .collect(),
        "verifier-swap" => [FalsifierMode::Shgo, FalsifierMode::Random, FalsifierMode::Pgd]
            .iter()
            .map(|&m| {
                let label = serde_json::to_value(m).unwrap().as_str().unwrap().to_string();
                with(&format!("falsifier={label}"), &|c| c.falsifier = m)
            })
            .collect(),
        "gp-toggle" => vec![
            with("transformer", &|c| {
                c.gp_refine = false;
                c.expert_guidance = false;
            }),
            with("gp-only", &|c| {
                c.gp_only = true;
                c.expert_guidance = false;
            }),
            with("transformer+gp", &|c| {
                c.gp_refine = true;
                c.expert_guidance = false;
            }),
            with("full", &|c| {
                c.gp_refine = true;
                c.expert_guidance = true;
            }),
        ],
        _ => return None,
    })
}

/// Lower empirical `(1 − α)`-quantile: the `⌈(1 − α)·N⌉`-th smallest reward.
pub fn risk_quantile(rewards: &[f64], alpha: f64) -> f64 {
    assert!(!rewards.is_empty(), "empty reward batch");
    let mut s = rewards.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    // The guard keeps e.g. (1 − 0.9)·10 from rounding up to 2.
    let k = (((1.0 - alpha) * n as f64) - 1e-9).ceil().max(1.0) as usize;
    s[k.min(n) - 1]
}

/// Threshold and per-candidate log-likelihood coefficients
/// `(R̃ − R_i) / (αN)` for `R_i ≥ R̃`, exactly zero otherwise.
pub fn risk_seeking_weights(rewards: &[f64], alpha: f64) -> (f64, Vec<f64>) {
    let t = risk_quantile(rewards, alpha);
    let scale = alpha * rewards.len() as f64;
    let w = rewards
        .iter()
        .map(|&r| if r >= t { (t - r) / scale } else { 0.0 })
        .collect();
    (t, w)
}

/// Gradient of the risk-seeking surrogate
/// `(1/αN) Σ (R̃ − R_i) 1{R_i ≥ R̃} log p(τ_i)` (minus an optional entropy
/// bonus on the selected set). Candidates below the threshold are not even
/// replayed.
pub fn risk_seeking_grad(
    policy: &Policy,
    t: &SystemTokenization,
    batch: &[(&[Token], f64)],
    alpha: f64,
    entropy_coeff: f64,
    cfg: &SampleConfig,
) -> Result<(f64, LogLikGrad), PolicyError> {
    let rewards: Vec<f64> = batch.iter().map(|b| b.1).collect();
    let (thr, w) = risk_seeking_weights(&rewards, alpha);
    let scale = alpha * batch.len() as f64;
    let seqs: Vec<Weighted> = batch
        .iter()
        .zip(&w)
        .filter(|(b, _)| b.1 >= thr)
        .map(|(b, &weight)| Weighted {
            tokens: b.0,
            weight,
            entropy: -entropy_coeff / scale,
        })
        .collect();
    Ok((thr, policy.weighted_loglik(t, &seqs, cfg)?))
}

/// Coefficients `−R_i / (G·k_i)` of the expert-guidance loss.
pub fn expert_guidance_weights(elite: &[(usize, f64)]) -> Vec<f64> {
    let g = elite.len() as f64;
    elite.iter().map(|&(k, r)| -r / (g * k.max(1) as f64)).collect()
}

/// Value and gradient of `(1/G) Σ_i (R_i/k_i) Σ_j −log p(τ_ij | τ_i,<j)`.
pub fn expert_guidance_grad(
    policy: &Policy,
    t: &SystemTokenization,
    elite: &[(&[Token], f64)],
    cfg: &SampleConfig,
) -> Result<LogLikGrad, PolicyError> {
    let w = expert_guidance_weights(&elite.iter().map(|e| (e.0.len(), e.1)).collect::<Vec<_>>());
    let seqs: Vec<Weighted> = elite
        .iter()
        .zip(w)
        .map(|(e, weight)| Weighted {
            tokens: e.0,
            weight,
            entropy: 0.0,
        })
        .collect();
    policy.weighted_loglik(t, &seqs, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Best reward over the whole batch (policy samples and GP population).
    pub best_reward: f64,
    pub best_expr: String,
    /// Best reward among the policy samples alone.
    pub policy_best: f64,
    pub policy_mean: f64,
    /// Risk-seeking threshold over the policy samples.
    pub threshold: f64,
    pub valid_fraction: f64,
    pub unique_candidates: usize,
    pub counterexamples_added: usize,
    pub verified: usize,
    pub certifier_calls: usize,
    pub store_size: usize,
    /// Kept out of the serialized log so reruns are byte-identical.
    #[serde(skip)]
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    Policy,
    Gp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discovery {
    /// The certified function (origin-shifted).
    pub expr: Expr,
    /// The generated tree it was derived from.
    pub raw: Expr,
    pub reward: f64,
    pub epoch: usize,
    pub origin: Origin,
    pub certificate: Certificate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestCandidate {
    pub expr: Expr,
    pub raw: Expr,
    pub reward: f64,
    pub epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    EpochCap,
    WallClock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Outcome {
    Found(Discovery),
    Exhausted {
        best: Option<BestCandidate>,
        reason: StopReason,
    },
}

impl Outcome {
    pub fn found(&self) -> Option<&Discovery> {
        match self {
            Outcome::Found(d) => Some(d),
            Outcome::Exhausted { .. } => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub outcome: Outcome,
    pub records: Vec<EpochRecord>,
    pub store_size: usize,
    pub policy: Policy,
}

/// One distinct candidate of an epoch's union batch.
struct Entry {
    raw: Expr,
    prepared: Option<Prepared>,
    origin: Origin,
}

/// Deduplicates raw trees by their origin-shifted form.
#[derive(Default)]
struct Batch {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

impl Batch {
    fn insert(&mut self, raw: &Expr, f: &DynamicalSystem, origin: Origin) -> Option<usize> {
        let n = f.dim();
        let v = subtract_origin(raw, n).ok()?;
        let key = v.to_string();
        if let Some(&i) = self.index.get(&key) {
            return Some(i);
        }
        let prepared = uses_all_variables(&v, n).then(|| Prepared::new(&v, f)).flatten();
        let i = self.entries.len();
        self.entries.push(Entry {
            raw: raw.clone(),
            prepared,
            origin,
        });
        self.index.insert(key, i);
        Some(i)
    }
}

/// Runs the discovery loop with a fresh policy.
pub fn train(f: &DynamicalSystem, cfg: &TrainRunConfig) -> TrainResult {
    train_with(f, cfg, None, &mut |_, _| {})
}

/// Runs the discovery loop, starting from `policy` if given, and calls
/// `observe` after every epoch.
pub fn train_with(
    f: &DynamicalSystem,
    cfg: &TrainRunConfig,
    policy: Option<Policy>,
    observe: &mut dyn FnMut(&EpochRecord, &Policy),
) -> TrainResult {
    let start = Instant::now();
    let n = f.dim();
    let seed = cfg.seed;
    let mut policy = policy.unwrap_or_else(|| Policy::new(&cfg.arch, n, seed));
    let mut opt = Adam::new(cfg.lr);
    let sys = tokenize_system(f);
    let scfg = cfg.sample_config();
    let fcfg = cfg.falsifier_config();
    let mut store = CounterexampleStore::with_uniform(f.domain().clone(), cfg.initial_points, &mut rng::stream(seed, &[1]));
    let mut records = Vec::new();
    let mut best: Option<BestCandidate> = None;
    // Trees the certifier could not decide; not retried.
    let mut undecided: HashSet<String> = HashSet::new();
    let mut gp_population: Vec<Expr> = Vec::new();

    let exhausted = |best: Option<BestCandidate>, reason, records, store: &CounterexampleStore, policy| TrainResult {
        outcome: Outcome::Exhausted { best, reason },
        records,
        store_size: store.len(),
        policy,
    };

    for epoch in 0..cfg.epochs {
        if start.elapsed().as_secs_f64() > cfg.wall_clock_s {
            return exhausted(best, StopReason::WallClock, records, &store, policy);
        }
        let e = epoch as u64;
        let store_before = store.len();

        // Sample.
        let sampling = !(cfg.gp_only && epoch > 0 && !gp_population.is_empty());
        let candidates: Vec<Candidate> = if sampling {
            match policy.context(&sys) {
                Ok(ctx) => policy
                    .sample(&ctx, &scfg, cfg.batch, &mut rng::stream(seed, &[2, e]))
                    .into_iter()
                    .map(|s| Candidate::from_sample(s, n))
                    .collect(),
                Err(_) => Vec::new(),
            }
        } else {
            Vec::new()
        };

        // GP refinement seeded by the samples (or the previous population).
        let mut refined: Vec<Member> = Vec::new();
        if cfg.gp_refine || cfg.gp_only {
            let initial: Vec<Expr> = if sampling {
                candidates.iter().filter_map(|c| c.raw.clone()).collect()
            } else {
                gp_population.clone()
            };
            if !initial.is_empty() {
                let x = store.points();
                let mut cache: HashMap<Vec<String>, f64> = HashMap::new();
                let evo = gp::evolve_with(&initial, n, &cfg.gp, &mut rng::stream(seed, &[3, e]), |t| {
                    *cache
                        .entry(t.to_prefix_strings())
                        .or_insert_with(|| gp::lyapunov_fitness(t, f, x.view()))
                });
                refined = evo.population;
                gp_population = refined.iter().map(|m| m.expr.clone()).collect();
            }
        }

        // Union batch, deduplicated by the shifted form.
        let mut batch = Batch::default();
        let policy_ids: Vec<Option<usize>> = candidates
            .iter()
            .map(|c| c.raw.as_ref().and_then(|r| batch.insert(r, f, Origin::Policy)))
            .collect();
        let gp_ids: Vec<Option<usize>> = refined
            .iter()
            .map(|m| batch.insert(&m.expr, f, Origin::Gp))
            .collect();

        let prepared: Vec<Option<Prepared>> = batch.entries.iter().map(|en| en.prepared.clone()).collect();
        let scores = score_batch(&prepared, f, &store, cfg.pgd.as_ref(), rng::derive_seed(seed, &[4, e]));
        let rewards = &scores.rewards;

        // Falsify the best distinct candidates; certify the survivors.
        let mut order: Vec<usize> = (0..prepared.len())
            .filter(|&i| prepared[i].is_some() && !undecided.contains(&batch.entries[i].raw.to_string()))
            .collect();
        order.sort_by(|&a, &b| rewards[b].total_cmp(&rewards[a]).then(a.cmp(&b)));
        order.truncate(cfg.top_m);
        let mut verified = 0;
        let mut certifier_calls = 0;
        let mut found: Option<Discovery> = None;
        for &i in &order {
            let p = prepared[i].as_ref().unwrap();
            let mut r = rng::stream(seed, &[5, e, i as u64]);
            let rep = verify_prepared(p, f, &fcfg, Some(&store), &mut r);
            verified += 1;
            for c in &rep.counterexamples {
                store.push(&c.x, epoch, c.source);
            }
            if rep.verdict != Verdict::NumericallyValid {
                continue;
            }
            certifier_calls += 1;
            let cert = certify_with_lie(&p.v, &p.lie, f.domain(), &cfg.certify);
            match &cert.verdict {
                CertVerdict::Certified => {
                    found = Some(Discovery {
                        expr: p.v.clone(),
                        raw: batch.entries[i].raw.clone(),
                        reward: rewards[i],
                        epoch,
                        origin: batch.entries[i].origin,
                        certificate: cert,
                    });
                    break;
                }
                CertVerdict::Counterexample { x, .. } => {
                    store.push(x, epoch, PointSource::Certifier);
                }
                CertVerdict::BudgetExhausted => {
                    undecided.insert(batch.entries[i].raw.to_string());
                }
            }
        }

        // Bookkeeping.
        let policy_rewards: Vec<f64> = policy_ids
            .iter()
            .map(|id| id.map_or(0.0, |i| rewards[i]))
            .collect();
        let (best_i, best_r) = rewards
            .iter()
            .enumerate()
            .fold((None, -1.0), |acc, (i, &r)| if r > acc.1 { (Some(i), r) } else { acc });
        if let Some(i) = best_i {
            if best.as_ref().map_or(true, |b| best_r > b.reward) {
                best = Some(BestCandidate {
                    expr: prepared[i].as_ref().map_or_else(|| batch.entries[i].raw.clone(), |p| p.v.clone()),
                    raw: batch.entries[i].raw.clone(),
                    reward: best_r,
                    epoch,
                });
            }
        }
        let threshold = if policy_rewards.is_empty() {
            0.0
        } else {
            risk_quantile(&policy_rewards, cfg.alpha)
        };
        let np = policy_rewards.len().max(1) as f64;
        let mut record = EpochRecord {
            epoch,
            best_reward: best_r.max(0.0),
            best_expr: best_i.map_or_else(String::new, |i| match &prepared[i] {
                Some(p) => p.v.to_string(),
                None => batch.entries[i].raw.to_string(),
            }),
            policy_best: policy_rewards.iter().cloned().fold(0.0, f64::max),
            policy_mean: policy_rewards.iter().sum::<f64>() / np,
            threshold,
            valid_fraction: candidates.iter().filter(|c| c.valid).count() as f64 / np,
            unique_candidates: batch.entries.len(),
            counterexamples_added: store.len() - store_before,
            verified,
            certifier_calls,
            store_size: store.len(),
            wall_time_s: 0.0,
        };

        if let Some(d) = found {
            record.wall_time_s = start.elapsed().as_secs_f64();
            observe(&record, &policy);
            records.push(record);
            return TrainResult {
                outcome: Outcome::Found(d),
                records,
                store_size: store.len(),
                policy,
            };
        }

        // Policy updates: risk-seeking first, then expert guidance.
        if !cfg.gp_only && !candidates.is_empty() {
            let seqs: Vec<(&[Token], f64)> = candidates
                .iter()
                .zip(&policy_rewards)
                .map(|(c, &r)| (c.tokens.as_slice(), r))
                .collect();
            for _ in 0..cfg.grad_steps {
                if let Ok((_, g)) = risk_seeking_grad(&policy, &sys, &seqs, cfg.alpha, cfg.entropy_coeff, &scfg) {
                    let _ = policy.apply_gradient(&mut opt, &g.grads);
                }
            }
            if cfg.expert_guidance && !refined.is_empty() {
                let elite = elite_set(&refined, cfg.gp.elite_fraction);
                let elite_tokens: Vec<(Vec<Token>, f64)> = elite
                    .iter()
                    .filter_map(|m| {
                        let toks = m.expr.to_prefix();
                        let id = gp_ids[refined.iter().position(|r| r.expr.ptr_eq(&m.expr))?]?;
                        replay(&toks, policy.vocab(), &scfg).ok()?;
                        Some((toks, rewards[id]))
                    })
                    .collect();
                if !elite_tokens.is_empty() {
                    let seqs: Vec<(&[Token], f64)> = elite_tokens.iter().map(|(t, r)| (t.as_slice(), *r)).collect();
                    for _ in 0..cfg.grad_steps {
                        if let Ok(g) = expert_guidance_grad(&policy, &sys, &seqs, &scfg) {
                            let _ = policy.apply_gradient(&mut opt, &g.grads);
                        }
                    }
                }
            }
        }

        record.wall_time_s = start.elapsed().as_secs_f64();
        observe(&record, &policy);
        records.push(record);
    }
    exhausted(best, StopReason::EpochCap, records, &store, policy)
}

/// Sum of squares of every gradient entry; handy for tests and logging.
pub fn grad_norm2(g: &[Array2<f64>]) -> f64 {
    g.iter().map(|a| a.iter().map(|x| x * x).sum::<f64>()).sum()
}
