use lyapfind_core::dynamics::tokenize_system;
use lyapfind_core::expr::arity_balance_end;
use lyapfind_core::policy::{ArchConfig, GenerationState, Policy, SampleConfig};
use lyapfind_core::{benchmark, rng, Expr};
use proptest::prelude::*;
use rand::Rng;

fn tiny() -> ArchConfig {
    ArchConfig {
        d_model: 16,
        heads: 2,
        dyn_layers: 1,
        tree_layers: 1,
        dec_layers: 1,
        latent_p: 4,
        latent_k: 4,
        ff_dim: 16,
        max_vars: 8,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn distributions_are_valid_under_their_masks(seed in any::<u64>(), constants in any::<bool>(), k_max in 3..20usize) {
        let f = benchmark("van_der_pol").unwrap();
        let t = tokenize_system(&f);
        let p = Policy::new(&tiny(), 2, seed);
        let ctx = p.context(&t).unwrap();
        let cfg = SampleConfig { k_max, constants, budget_mask: true };
        let mut r = rng::stream(seed, &[1]);
        let s = p.sample(&ctx, &cfg, 1, &mut r).pop().unwrap();
        // A random prefix of a sampled traversal is a reachable state.
        let cut = r.gen_range(0..s.tokens.len());
        let mut st = GenerationState::new();
        for &tok in &s.tokens[..cut] {
            st.push(tok);
        }
        let mask = st.mask(p.vocab(), &cfg);
        prop_assume!(mask.iter().any(|&m| m));
        let psi = p.next_token_dist(&ctx, &st, &mask).unwrap();
        prop_assert_eq!(psi.len(), mask.len());
        prop_assert!((psi.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        for (q, &m) in psi.iter().zip(&mask) {
            prop_assert!(*q >= 0.0 && *q <= 1.0);
            if !m {
                prop_assert_eq!(*q, 0.0);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn samples_are_grammatical_and_logprobs_replay(seed in any::<u64>(), k_max in 2..25usize, system in 0..3usize) {
        let name = ["van_der_pol", "trig3d", "poly_2d"][system];
        let f = benchmark(name).unwrap();
        let n = f.dim();
        let t = tokenize_system(&f);
        let p = Policy::new(&tiny(), n, seed);
        let ctx = p.context(&t).unwrap();
        let cfg = SampleConfig { k_max, ..SampleConfig::default() };
        for s in p.sample(&ctx, &cfg, 8, &mut rng::stream(seed, &[2])) {
            prop_assert!(s.tokens.len() <= k_max);
            prop_assert_eq!(s.tokens.len(), s.logprobs.len());
            if s.complete {
                prop_assert_eq!(arity_balance_end(&s.tokens), Some(s.tokens.len() - 1));
                prop_assert!(Expr::from_prefix(&s.tokens, n).is_ok());
                let replayed = p.logprob(&s.tokens, &t, &cfg).unwrap();
                prop_assert_eq!(replayed.len(), s.logprobs.len());
                for (a, b) in replayed.iter().zip(&s.logprobs) {
                    prop_assert!((a - b).abs() <= 1e-9, "{} vs {}", a, b);
                }
                prop_assert!((replayed.iter().sum::<f64>() - s.total_logprob()).abs() <= 1e-9);
            } else {
                prop_assert_eq!(arity_balance_end(&s.tokens), None);
            }
        }
    }
}
