//! Exact propagation of the joint state distribution for profiles made only
//! of automata and fixed sequences.

use std::collections::{BTreeMap, HashMap};

use super::{for_each_outcome, Categories, ReplicateOutcome, StaticEntry, TraceRound};
use crate::error::Result;
use crate::grid::PriceDist;
use crate::strategy::{PlayerSet, Profile, StrategySpec};

/// Probability mass below this is dropped from the state distribution.
const PRUNE: f64 = 1e-300;

pub(crate) fn run_exact(profile: &Profile, horizon: u64, record: bool) -> Result<ReplicateOutcome> {
    let grid = profile.grid;
    let n = profile.n();
    let cats = Categories::of_profile(profile);
    let watched = profile
        .members
        .iter()
        .filter_map(|m| match m {
            StrategySpec::Automaton(a) => Some(a.watched()),
            _ => None,
        })
        .fold(PlayerSet::EMPTY, PlayerSet::union);
    let has_scripts = profile
        .members
        .iter()
        .any(|m| matches!(m, StrategySpec::FixedSequence(_)));

    let start: Vec<u32> = profile
        .members
        .iter()
        .map(|m| match m {
            StrategySpec::Automaton(a) => a.start() as u32,
            _ => 0,
        })
        .collect();
    let mut dist: BTreeMap<Vec<u32>, f64> = BTreeMap::from([(start, 1.0)]);
    let mut entries: HashMap<Vec<u32>, StaticEntry> = HashMap::new();
    let mut transitions: HashMap<Vec<u32>, Vec<(Vec<u32>, f64)>> = HashMap::new();
    let seats: Vec<usize> = (0..n).collect();

    let mut price_sum = 0.0;
    let mut util_sums = vec![0.0; n];
    let mut welfare_residual: f64 = 0.0;
    let mut rounds = record.then(Vec::new);

    for t in 0..horizon as usize {
        // Entry key: automaton state, or the scripted price this round.
        let key_of = |states: &[u32]| -> Vec<u32> {
            profile
                .members
                .iter()
                .zip(states)
                .map(|(m, &s)| match m {
                    StrategySpec::FixedSequence(f) => f.price_at(t),
                    _ => s,
                })
                .collect()
        };
        let mut price = 0.0;
        let mut utils = vec![0.0; n];
        let mut next: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        for (states, &w) in &dist {
            let key = key_of(states);
            let entry = entries.entry(key.clone()).or_insert_with(|| {
                let owned: Vec<PriceDist> = profile
                    .members
                    .iter()
                    .zip(&key)
                    .map(|(m, &k)| match m {
                        StrategySpec::Automaton(a) => (**a.output(k as usize)).clone(),
                        _ => PriceDist::point(grid, k as usize).expect("validated script"),
                    })
                    .collect();
                let refs: Vec<&PriceDist> = owned.iter().collect();
                StaticEntry::build(grid, n, seats.clone(), &refs, 0)
            });
            price += w * entry.price0;
            for (u, e) in utils.iter_mut().zip(&entry.utilities0) {
                *u += w * e;
            }

            let cached = (!has_scripts).then(|| transitions.get(states)).flatten();
            let succ = match cached {
                Some(s) => s.clone(),
                None => {
                    let s = successors(profile, &cats, watched, states, &key);
                    if !has_scripts {
                        transitions.insert(states.clone(), s.clone());
                    }
                    s
                }
            };
            for (s, p) in succ {
                let m = w * p;
                if m > PRUNE {
                    *next.entry(s).or_insert(0.0) += m;
                }
            }
        }
        price_sum += price;
        for (a, b) in util_sums.iter_mut().zip(&utils) {
            *a += b;
        }
        welfare_residual = welfare_residual.max((utils.iter().sum::<f64>() - price).abs());
        if let Some(rs) = rounds.as_mut() {
            rs.push(TraceRound {
                realized: vec![],
                price,
                payoffs: utils,
                dists: None,
            });
        }
        dist = next;
    }
    Ok(ReplicateOutcome {
        price_sum,
        util_sums,
        learners: vec![],
        welfare_residual,
        rounds,
    })
}

/// Next joint states from `states` and their probabilities.
fn successors(
    profile: &Profile,
    cats: &Categories,
    watched: PlayerSet,
    states: &[u32],
    key: &[u32],
) -> Vec<(Vec<u32>, f64)> {
    let cells: Vec<Vec<(u32, f64)>> = profile
        .members
        .iter()
        .enumerate()
        .map(|(i, m)| {
            if !watched.contains(i) {
                return vec![(0, 1.0)];
            }
            match m {
                StrategySpec::Automaton(a) => cats.split(a.output(key[i] as usize)),
                _ => vec![(cats.representative(cats.of_price(key[i] as usize)), 1.0)],
            }
        })
        .collect();
    let mut out: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    for_each_outcome(&cells, |prices, p| {
        let s: Vec<u32> = profile
            .members
            .iter()
            .zip(states)
            .map(|(m, &s)| match m {
                StrategySpec::Automaton(a) => a.next(s as usize, prices) as u32,
                _ => s,
            })
            .collect();
        *out.entry(s).or_insert(0.0) += p;
    });
    out.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use crate::grid::PriceGrid;
    use crate::strategy::{make_cyclic_erd, make_simple_grim, FixedSequence};

    #[test]
    fn exact_matches_monte_carlo() {
        let g = PriceGrid::new(10).unwrap();
        let p = make_simple_grim(3, g).unwrap();
        let d = DefectionSpec::uniform(
            vec![0],
            StrategySpec::FixedSequence(FixedSequence::switch_at(g, 10, 5, 9).unwrap()),
        )
        .unwrap();
        let exact = run(&GameConfig::new(p.clone(), 40, EvalMode::ExactAutomaton).with_defection(d.clone()))
            .unwrap()
            .1;
        let mc = run(&GameConfig::new(p, 40, EvalMode::monte_carlo(50, 3)).with_defection(d))
            .unwrap()
            .1;
        // Deterministic path: both agree exactly.
        assert!((exact.market_price - mc.market_price).abs() < 1e-12);
        assert!((exact.market_price - (5.0 + 0.9 + 34.0 * 0.3) / 40.0).abs() < 1e-12);
    }

    #[test]
    fn cyclic_exact_within_mc_error() {
        let g = PriceGrid::new(10).unwrap();
        let p = make_cyclic_erd(3, g, 200, None).unwrap();
        let d = DefectionSpec::uniform(
            vec![0],
            StrategySpec::FixedSequence(FixedSequence::constant(g, 4).unwrap()),
        )
        .unwrap();
        let exact = run(&GameConfig::new(p.clone(), 200, EvalMode::ExactAutomaton).with_defection(d.clone()))
            .unwrap()
            .1;
        let mc = run(&GameConfig::new(p, 200, EvalMode::monte_carlo(200, 5)).with_defection(d))
            .unwrap()
            .1;
        assert!(
            (exact.market_price - mc.market_price).abs() <= 4.0 * mc.stderr + 1e-9,
            "exact {} mc {} se {}",
            exact.market_price,
            mc.market_price,
            mc.stderr
        );
        assert!(exact.welfare_residual < 1e-9);
    }
}
