//! Genetic-programming refinement: subtree mutation, subtree crossover and
//! tournament selection over expression trees.

use std::cmp::Ordering;

use ndarray::ArrayView2;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::DynamicalSystem;
use crate::expr::{subtract_origin, Expr};
use crate::library::Library;
use crate::reward;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpConfig {
    pub mutation_prob: f64,
    pub crossover_prob: f64,
    /// `None` → `2n + 3`.
    pub tournament_size: Option<usize>,
    /// `None` → `2n`.
    pub generations: Option<usize>,
    pub elite_fraction: f64,
    /// Ephemeral integer constants 1–9 in mutation subtrees.
    pub constants: bool,
    /// Carry the best member into the next generation.
    pub elitism: bool,
    pub max_subtree_depth: usize,
    pub k_max: usize,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            mutation_prob: 0.5,
            crossover_prob: 0.5,
            tournament_size: None,
            generations: None,
            elite_fraction: 0.1,
            constants: false,
            elitism: true,
            max_subtree_depth: 3,
            k_max: 30,
        }
    }
}

impl GpConfig {
    pub fn tournament_size_for(&self, n: usize) -> usize {
        self.tournament_size.unwrap_or(2 * n + 3).max(1)
    }

    pub fn generations_for(&self, n: usize) -> usize {
        self.generations.unwrap_or(2 * n)
    }

    pub fn library(&self, n: usize) -> Library {
        Library::new(n, self.constants)
    }
}

/// A population member with its fitness.
#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub expr: Expr,
    pub fitness: f64,
}

/// Higher fitness first, then lower complexity.
fn better(a: &Member, b: &Member) -> Ordering {
    b.fitness
        .total_cmp(&a.fitness)
        .then(a.expr.complexity().cmp(&b.expr.complexity()))
}

/// Random arity-complete tree of depth at most `max_depth` (a leaf has depth
/// 1). Every library token is equally likely above the last level.
pub fn random_tree<R: Rng + ?Sized>(lib: &Library, max_depth: usize, rng: &mut R) -> Expr {
    let terms = lib.terminals();
    let all = lib.tokens();
    grow(&terms, &all, max_depth.max(1), rng)
}

fn grow<R: Rng + ?Sized>(
    terms: &[crate::expr::Token],
    all: &[crate::expr::Token],
    depth: usize,
    rng: &mut R,
) -> Expr {
    let pool = if depth <= 1 { terms } else { all };
    let t = pool[rng.gen_range(0..pool.len())];
    let children = (0..t.arity())
        .map(|_| grow(terms, all, depth - 1, rng))
        .collect();
    Expr::node(t, children)
}

const RETRIES: usize = 10;

/// Replaces a uniformly chosen subtree with a fresh random one; gives up and
/// returns the input after ten oversize attempts.
pub fn mutate<R: Rng + ?Sized>(e: &Expr, lib: &Library, cfg: &GpConfig, rng: &mut R) -> Expr {
    for _ in 0..RETRIES {
        let pos = rng.gen_range(0..e.complexity());
        let sub = random_tree(lib, cfg.max_subtree_depth, rng);
        let out = e.replace_at(pos, &sub);
        if out.complexity() <= cfg.k_max {
            return out;
        }
    }
    e.clone()
}

/// Swaps uniformly chosen subtrees of `a` and `b`.
pub fn crossover<R: Rng + ?Sized>(a: &Expr, b: &Expr, k_max: usize, rng: &mut R) -> (Expr, Expr) {
    for _ in 0..RETRIES {
        let pa = rng.gen_range(0..a.complexity());
        let pb = rng.gen_range(0..b.complexity());
        let na = a.replace_at(pa, b.subtree_at(pb));
        let nb = b.replace_at(pb, a.subtree_at(pa));
        if na.complexity() <= k_max && nb.complexity() <= k_max {
            return (na, nb);
        }
    }
    (a.clone(), b.clone())
}

/// Best of `l` distinct members drawn uniformly; returns its index.
pub fn tournament_select<R: Rng + ?Sized>(pop: &[Member], l: usize, rng: &mut R) -> usize {
    assert!(!pop.is_empty(), "empty population");
    let l = l.clamp(1, pop.len());
    let mut picks = index::sample(rng, pop.len(), l).into_vec();
    picks.sort_unstable();
    picks
        .into_iter()
        .min_by(|&i, &j| better(&pop[i], &pop[j]).then(i.cmp(&j)))
        .unwrap()
}

/// Final population plus the best fitness after each generation (entry 0 is
/// the initial population).
#[derive(Debug, Clone)]
pub struct Evolution {
    pub population: Vec<Member>,
    pub best_per_generation: Vec<f64>,
}

fn best_index(pop: &[Member]) -> usize {
    (0..pop.len())
        .min_by(|&i, &j| better(&pop[i], &pop[j]).then(i.cmp(&j)))
        .unwrap()
}

fn best_fitness(pop: &[Member]) -> f64 {
    pop.iter().map(|m| m.fitness).fold(f64::NEG_INFINITY, f64::max)
}

/// Runs the generational loop with an arbitrary fitness function.
pub fn evolve_with<R, F>(
    initial: &[Expr],
    n: usize,
    cfg: &GpConfig,
    rng: &mut R,
    mut fitness: F,
) -> Evolution
where
    R: Rng + ?Sized,
    F: FnMut(&Expr) -> f64,
{
    assert!(!initial.is_empty(), "empty population");
    let lib = cfg.library(n);
    let l = cfg.tournament_size_for(n);
    let mut pop: Vec<Member> = initial
        .iter()
        .map(|e| Member {
            expr: e.clone(),
            fitness: fitness(e),
        })
        .collect();
    let mut best = vec![best_fitness(&pop)];

    for _ in 0..cfg.generations_for(n) {
        let champion = pop[best_index(&pop)].clone();
        let mut next: Vec<Member> = (0..pop.len())
            .map(|_| pop[tournament_select(&pop, l, rng)].clone())
            .collect();
        let mut changed = vec![false; next.len()];
        for i in (0..next.len().saturating_sub(1)).step_by(2) {
            if rng.gen_bool(cfg.crossover_prob) {
                let (a, b) = crossover(&next[i].expr, &next[i + 1].expr, cfg.k_max, rng);
                next[i].expr = a;
                next[i + 1].expr = b;
                changed[i] = true;
                changed[i + 1] = true;
            }
        }
        for (m, c) in next.iter_mut().zip(changed.iter_mut()) {
            if rng.gen_bool(cfg.mutation_prob) {
                m.expr = mutate(&m.expr, &lib, cfg, rng);
                *c = true;
            }
        }
        for (m, c) in next.iter_mut().zip(&changed) {
            if *c {
                m.fitness = fitness(&m.expr);
            }
        }
        if cfg.elitism {
            // The champion replaces the weakest offspring.
            let worst = (0..next.len())
                .max_by(|&i, &j| better(&next[i], &next[j]).then(i.cmp(&j)))
                .unwrap();
            next[worst] = champion;
        }
        pop = next;
        best.push(best_fitness(&pop));
    }
    Evolution {
        population: pop,
        best_per_generation: best,
    }
}

/// Fitness of a raw tree: the reward of its origin-shifted form over `x`.
pub fn lyapunov_fitness(e: &Expr, f: &DynamicalSystem, x: ArrayView2<f64>) -> f64 {
    match subtract_origin(e, f.dim()) {
        Ok(v) => reward::reward(&v, f, x, true),
        Err(_) => 0.0,
    }
}

/// Evolves with reward over `x` as fitness.
pub fn evolve<R: Rng + ?Sized>(
    initial: &[Expr],
    f: &DynamicalSystem,
    x: ArrayView2<f64>,
    cfg: &GpConfig,
    rng: &mut R,
) -> Evolution {
    evolve_with(initial, f.dim(), cfg, rng, |e| lyapunov_fitness(e, f, x))
}

/// Top `⌈fraction · Q⌉` members, best first (ties by lower complexity).
pub fn elite_set(pop: &[Member], fraction: f64) -> Vec<Member> {
    let q = pop.len();
    let k = ((fraction.clamp(0.0, 1.0) * q as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&i, &j| better(&pop[i], &pop[j]).then(i.cmp(&j)));
    order.into_iter().take(k.min(q)).map(|i| pop[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::benchmark;
    use crate::expr::{arity_balance_end, parse_infix};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn leaf(i: usize) -> Expr {
        Expr::var(i)
    }

    #[test]
    fn leaves_swap_under_crossover() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (a, b) = crossover(&leaf(0), &leaf(1), 30, &mut rng);
        assert_eq!((a, b), (leaf(1), leaf(0)));
    }

    #[test]
    fn identical_parents() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(crossover(&leaf(0), &leaf(0), 30, &mut rng), (leaf(0), leaf(0)));
        let e = parse_infix("x1*x1 + sin(x2)", 2).unwrap();
        for _ in 0..50 {
            let (a, b) = crossover(&e, &e, 30, &mut rng);
            assert_eq!(a.complexity() + b.complexity(), 2 * e.complexity());
        }
    }

    #[test]
    fn random_trees_respect_depth() {
        let lib = Library::new(3, true);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let t = random_tree(&lib, 3, &mut rng);
            assert!(t.depth() <= 3);
            assert_eq!(arity_balance_end(&t.to_prefix()), Some(t.complexity() - 1));
        }
    }

    #[test]
    fn mutation_respects_cap() {
        let lib = Library::new(2, false);
        let cfg = GpConfig {
            k_max: 8,
            ..GpConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut e = parse_infix("x1*x1 + x2", 2).unwrap();
        for _ in 0..1000 {
            e = mutate(&e, &lib, &cfg, &mut rng);
            assert!(e.complexity() <= 8);
        }
    }

    fn members(f: &[f64]) -> Vec<Member> {
        f.iter()
            .enumerate()
            .map(|(i, &fit)| Member {
                expr: Expr::var(i % 2),
                fitness: fit,
            })
            .collect()
    }

    #[test]
    fn full_tournament_is_argmax() {
        let pop = members(&[0.1, 0.9, 0.3, 0.9]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            assert_eq!(tournament_select(&pop, 4, &mut rng), 1);
        }
    }

    #[test]
    fn unit_tournament_covers_population() {
        let pop = members(&[0.0; 5]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut seen = [false; 5];
        for _ in 0..200 {
            seen[tournament_select(&pop, 1, &mut rng)] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn tournament_prefers_simpler_on_ties() {
        let pop = vec![
            Member {
                expr: parse_infix("x1 + x1", 1).unwrap(),
                fitness: 1.0,
            },
            Member {
                expr: leaf(0),
                fitness: 1.0,
            },
        ];
        assert_eq!(tournament_select(&pop, 2, &mut ChaCha8Rng::seed_from_u64(0)), 1);
    }

    #[test]
    fn elite_quota() {
        let pop = members(&vec![0.0; 500]);
        assert_eq!(elite_set(&pop, 0.1).len(), 50);
        let pop = members(&[0.2, 0.8, 0.5]);
        let all = elite_set(&pop, 1.0);
        let fits: Vec<f64> = all.iter().map(|m| m.fitness).collect();
        assert_eq!(fits, vec![0.8, 0.5, 0.2]);
    }

    #[test]
    fn zero_generations_is_identity() {
        let f = benchmark("van_der_pol").unwrap();
        let x = f.domain().sample(50, &mut ChaCha8Rng::seed_from_u64(0));
        let init = vec![parse_infix("x1*x1 + x2", 2).unwrap(), leaf(1)];
        let cfg = GpConfig {
            generations: Some(0),
            ..GpConfig::default()
        };
        let ev = evolve(&init, &f, x.view(), &cfg, &mut ChaCha8Rng::seed_from_u64(1));
        let out: Vec<Expr> = ev.population.iter().map(|m| m.expr.clone()).collect();
        assert_eq!(out, init);
    }

    #[test]
    fn elitism_is_monotone_and_size_preserving() {
        let f = benchmark("van_der_pol").unwrap();
        let x = f.domain().sample(200, &mut ChaCha8Rng::seed_from_u64(0));
        let lib = Library::new(2, false);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let init: Vec<Expr> = (0..40).map(|_| random_tree(&lib, 3, &mut rng)).collect();
        let cfg = GpConfig {
            generations: Some(10),
            ..GpConfig::default()
        };
        let ev = evolve(&init, &f, x.view(), &cfg, &mut rng);
        assert_eq!(ev.population.len(), 40);
        assert_eq!(ev.best_per_generation.len(), 11);
        for w in ev.best_per_generation.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let f = benchmark("van_der_pol").unwrap();
        let x = f.domain().sample(100, &mut ChaCha8Rng::seed_from_u64(0));
        let lib = Library::new(2, true);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let init: Vec<Expr> = (0..20).map(|_| random_tree(&lib, 3, &mut rng)).collect();
            let cfg = GpConfig {
                constants: true,
                ..GpConfig::default()
            };
            evolve(&init, &f, x.view(), &cfg, &mut rng).population
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn fitness_uses_origin_shift() {
        let f = benchmark("van_der_pol").unwrap();
        let x = f.domain().sample(100, &mut ChaCha8Rng::seed_from_u64(0));
        // cos(x1) + x2² is positive on the box, but cos(x1) − 1 + x2² is not.
        let e = parse_infix("cos(x1) + x2*x2", 2).unwrap();
        assert!(lyapunov_fitness(&e, &f, x.view()) < 1.0);
        let e = parse_infix("x1*x1 + x2*x2", 2).unwrap();
        assert_eq!(lyapunov_fitness(&e, &f, x.view()), 1.0);
    }
}
