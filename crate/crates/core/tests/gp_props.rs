mod common;

use lyapfind_core::expr::arity_balance_end;
use lyapfind_core::gp::{crossover, evolve_with, mutate, random_tree, GpConfig};
use lyapfind_core::rng;
use lyapfind_core::Expr;
use proptest::prelude::*;

fn complete(e: &Expr, n: usize) -> bool {
    let p = e.to_prefix();
    arity_balance_end(&p) == Some(p.len() - 1) && Expr::from_prefix(&p, n).is_ok()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn mutation_is_complete_and_capped(seed in any::<u64>(), n in 1..5usize, k_max in 5..30usize, constants in any::<bool>()) {
        let cfg = GpConfig { k_max, constants, ..GpConfig::default() };
        let lib = cfg.library(n);
        let mut r = rng::stream(seed, &[]);
        let mut e = random_tree(&lib, 3, &mut r);
        prop_assume!(e.complexity() <= k_max);
        for _ in 0..5 {
            e = mutate(&e, &lib, &cfg, &mut r);
            prop_assert!(complete(&e, n));
            prop_assert!(e.complexity() <= k_max, "{} > {}", e.complexity(), k_max);
        }
    }

    #[test]
    fn crossover_is_complete_and_capped(seed in any::<u64>(), n in 1..5usize, k_max in 5..30usize) {
        let cfg = GpConfig { k_max, ..GpConfig::default() };
        let lib = cfg.library(n);
        let mut r = rng::stream(seed, &[]);
        let a = random_tree(&lib, 3, &mut r);
        let b = random_tree(&lib, 3, &mut r);
        prop_assume!(a.complexity() <= k_max && b.complexity() <= k_max);
        let (c, d) = crossover(&a, &b, k_max, &mut r);
        prop_assert!(complete(&c, n) && complete(&d, n));
        prop_assert!(c.complexity() <= k_max && d.complexity() <= k_max);
        // Material is exchanged, not created.
        prop_assert_eq!(c.complexity() + d.complexity(), a.complexity() + b.complexity());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn evolution_outputs_are_valid_and_elitist(seed in any::<u64>()) {
        let cfg = GpConfig { k_max: 15, generations: Some(6), ..GpConfig::default() };
        let lib = cfg.library(2);
        let mut r = rng::stream(seed, &[0]);
        let init: Vec<Expr> = (0..16).map(|_| random_tree(&lib, 3, &mut r)).filter(|e| e.complexity() <= 15).collect();
        prop_assume!(!init.is_empty());
        // Any deterministic score will do.
        let fit = |e: &Expr| 1.0 / (1.0 + (e.eval(&[0.3, -0.7]) - 1.0).abs());
        let run = |s| evolve_with(&init, 2, &cfg, &mut rng::stream(s, &[1]), fit);
        let ev = run(seed);
        for m in &ev.population {
            prop_assert!(complete(&m.expr, 2));
            prop_assert!(m.expr.complexity() <= 15);
        }
        prop_assert!(ev.best_per_generation.windows(2).all(|w| w[1] >= w[0]));
        let again = run(seed);
        prop_assert_eq!(
            ev.population.iter().map(|m| m.expr.clone()).collect::<Vec<_>>(),
            again.population.iter().map(|m| m.expr.clone()).collect::<Vec<_>>()
        );
    }
}
