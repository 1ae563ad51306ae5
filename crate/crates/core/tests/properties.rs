//! Invariants checked over random inputs against brute-force oracles.

use bertrand_core::auditor::best_response;
use bertrand_core::distributions::solve_extremal_cce;
use bertrand_core::engine::{lemma2_cap, run, EvalMode, GameConfig};
use bertrand_core::grid::{bertrand_payoffs, expected_min, expected_utility_fixed_price, PriceDist, PriceGrid};
use bertrand_core::learners::{hedge_regret_bound, Hedge, PayoffVector, RegretTracker};
use bertrand_core::strategy::{random_profile, DefectionSpec, FixedSequence, StrategySpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid(k: u32) -> PriceGrid {
    PriceGrid::new(k).unwrap()
}

fn dist(k: u32) -> impl Strategy<Value = PriceDist> {
    prop::collection::vec(0.0f64..1.0, (k + 1) as usize).prop_filter_map("zero weights", move |w| {
        (w.iter().sum::<f64>() > 1e-6).then(|| PriceDist::from_weights(grid(k), w).unwrap())
    })
}

/// Every joint outcome of independent dists with its probability.
fn outcomes(dists: &[&PriceDist]) -> Vec<(Vec<u32>, f64)> {
    let mut out = vec![(Vec::new(), 1.0)];
    for d in dists {
        let mut next = Vec::new();
        for (prices, p) in &out {
            for (i, m) in d.masses().iter().enumerate() {
                if *m > 0.0 {
                    let mut v: Vec<u32> = prices.clone();
                    v.push(i as u32);
                    next.push((v, p * m));
                }
            }
        }
        out = next;
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn payoffs_pay_the_minimum_split_among_winners(k in 2u32..50, prices in prop::collection::vec(0u32..50, 1..8)) {
        let g = grid(k);
        let prices: Vec<u32> = prices.into_iter().map(|p| p % (k + 1)).collect();
        let pay = bertrand_payoffs(g, &prices);
        let low = *prices.iter().min().unwrap();
        prop_assert!((pay.iter().sum::<f64>() - g.price(low as usize)).abs() < 1e-12);
        let winners: Vec<_> = pay.iter().zip(&prices).filter(|(_, &p)| p == low).map(|(v, _)| *v).collect();
        prop_assert!(winners.windows(2).all(|w| w[0] == w[1]));
        prop_assert!(pay.iter().zip(&prices).all(|(v, &p)| p == low || *v == 0.0));
    }

    #[test]
    fn expected_min_matches_enumeration(a in dist(4), b in dist(4), c in dist(4)) {
        let g = grid(4);
        let ds = [&a, &b, &c];
        let brute: f64 = outcomes(&ds)
            .iter()
            .map(|(v, p)| p * g.price(*v.iter().min().unwrap() as usize))
            .sum();
        prop_assert!((expected_min(&ds).unwrap() - brute).abs() < 1e-12);
    }

    #[test]
    fn fixed_price_utility_matches_enumeration(price in 0usize..5, a in dist(4), b in dist(4)) {
        let g = grid(4);
        let brute: f64 = outcomes(&[&a, &b])
            .iter()
            .map(|(v, p)| {
                let mut all = vec![price as u32];
                all.extend(v);
                p * bertrand_payoffs(g, &all)[0]
            })
            .sum();
        let got = expected_utility_fixed_price(price, &[&a, &b]).unwrap();
        prop_assert!((got - brute).abs() < 1e-12);
    }

    #[test]
    fn distribution_tails_are_consistent(d in dist(12), i in 0usize..13) {
        prop_assert!((d.at_least(i) + d.below(i) - 1.0).abs() < 1e-12);
        prop_assert!((d.at_least(i) - d.mass(i) - d.above(i)).abs() < 1e-12);
        let mean: f64 = d.masses().iter().enumerate().map(|(j, m)| m * d.grid().price(j)).sum();
        prop_assert!((d.mean() - mean).abs() < 1e-12);
    }

    #[test]
    fn hedge_stays_within_its_regret_bound(k in 2u32..12, t in 1u64..300, seed: u64) {
        let g = grid(k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut h = Hedge::new(g, t);
        let mut tracker = RegretTracker::new(g);
        for _ in 0..t {
            let v: Vec<f64> = (0..g.len()).map(|_| rng.random::<f64>()).collect();
            let obtained: f64 = h.next().masses().iter().zip(&v).map(|(m, x)| m * x).sum();
            tracker.observe(&v, obtained);
            h.update(&PayoffVector::new(v).unwrap());
        }
        prop_assert!(tracker.regret() <= hedge_regret_bound(t, g) + 1e-9);
    }

    #[test]
    fn cap_never_undercuts_the_defector(c in 0.0f64..1.0, r in 0.0f64..0.5, k in 2u32..1000) {
        let cap = lemma2_cap(c, r, grid(k));
        prop_assert!(cap.reported <= 1.0);
        prop_assert!(cap.reported >= c.min(1.0) || cap.vacuous);
        prop_assert!(lemma2_cap(c, r + 0.1, grid(k)).reported >= cap.reported);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn runs_are_deterministic_and_conserve_welfare(seed: u64, n in 2usize..5, k in 2u32..12, t in 1u64..80) {
        let g = grid(k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let profile = random_profile(&mut rng, n, g, &[]).unwrap();
        let cfg = GameConfig::new(profile, t, EvalMode::monte_carlo(3, seed));
        let (_, a) = run(&cfg).unwrap();
        let (_, b) = run(&cfg).unwrap();
        prop_assert_eq!(a.market_price.to_bits(), b.market_price.to_bits());
        prop_assert_eq!(&a.utilities, &b.utilities);
        prop_assert!(a.welfare_residual < 1e-9);
        prop_assert!((0.0..=1.0).contains(&a.market_price));
        prop_assert!((a.total_utility() - a.market_price).abs() < 1e-9);
    }

    #[test]
    fn best_response_dominates_random_scripts(seed: u64, n in 2usize..4, k in 2u32..6, t in 2u64..10) {
        let g = grid(k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let profile = random_profile(&mut rng, n, g, &[]).unwrap();
        prop_assume!(profile.is_closed_loop_free());
        let dev = rng.random_range(0..n);
        let br = best_response(&profile, dev, t);
        for _ in 0..50 {
            let script: Vec<u32> = (0..t).map(|_| rng.random_range(0..=k)).collect();
            let d = DefectionSpec::uniform(vec![dev], StrategySpec::FixedSequence(FixedSequence::new(g, script).unwrap())).unwrap();
            let (_, m) = run(&GameConfig::new(profile.clone(), t, EvalMode::ExactAutomaton).with_defection(d)).unwrap();
            prop_assert!(br.value / t as f64 >= m.utilities[dev] - 1e-9, "{} < {}", br.value / t as f64, m.utilities[dev]);
        }
    }

    #[test]
    fn exact_and_monte_carlo_agree(seed: u64, n in 2usize..4, k in 2u32..8, t in 1u64..30) {
        let g = grid(k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let profile = random_profile(&mut rng, n, g, &[]).unwrap();
        prop_assume!(profile.is_closed_loop_free());
        let (_, exact) = run(&GameConfig::new(profile.clone(), t, EvalMode::ExactAutomaton)).unwrap();
        let (_, mc) = run(&GameConfig::new(profile, t, EvalMode::monte_carlo(400, seed))).unwrap();
        prop_assert!(exact.welfare_residual < 1e-9);
        prop_assert!((exact.market_price - mc.market_price).abs() <= 6.0 * mc.stderr + 0.01,
            "exact {} vs mc {} ± {}", exact.market_price, mc.market_price, mc.stderr);
    }

    #[test]
    fn cce_solutions_certify(m in 2usize..4, k in 2u32..9) {
        let sol = solve_extremal_cce(m, grid(k), 1e-9).unwrap();
        prop_assert!(sol.certify(1e-7).is_ok());
        prop_assert!(sol.objective > 0.0 && sol.objective < 1.0);
    }
}
