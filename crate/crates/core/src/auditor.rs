//! Equilibrium audits: exact best-response dynamic programming against
//! automaton opponents, and engine-measured deviation sets otherwise.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{for_each_outcome, run, Categories, EvalMode, GameConfig, StaticEntry};
use crate::error::{Error, Result};
use crate::grid::{PriceDist, PriceGrid};
use crate::learners::LearnerSpec;
use crate::strategy::{DefectionSpec, FixedSequence, PlayerSet, Profile, StrategySpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditMethod {
    ExactDp,
    CanonicalDeviations,
    NoregretOnly,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlayerAudit {
    pub player: usize,
    pub equilibrium_utility: f64,
    pub best_deviation_utility: f64,
    pub gain: f64,
    /// Deviation achieving `best_deviation_utility`.
    pub witness: String,
    /// Prices of the witness along its most likely path (exact DP only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub witness_prices: Vec<u32>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AuditReport {
    pub construction: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: u32,
    #[serde(rename = "T")]
    pub horizon: u64,
    pub method: AuditMethod,
    pub players: Vec<PlayerAudit>,
    /// Largest gain over audited players, floored at 0.
    pub eq_slack: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl AuditReport {
    fn new(
        profile: &Profile,
        horizon: u64,
        method: AuditMethod,
        players: Vec<PlayerAudit>,
        warnings: Vec<String>,
    ) -> Self {
        let eq_slack = players.iter().map(|p| p.gain).fold(0.0, f64::max);
        Self {
            construction: profile.construction.clone(),
            n: profile.n(),
            k: profile.grid.k(),
            horizon,
            method,
            players,
            eq_slack,
            warnings,
        }
    }

    pub fn within(&self, ceiling: f64) -> bool {
        self.eq_slack <= ceiling
    }

    pub fn max_gain(&self) -> f64 {
        self.players.iter().map(|p| p.gain).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Monte Carlo settings for audits that cannot be solved exactly.
#[derive(Clone, Copy, Debug)]
pub struct SampledAudit {
    pub replicates: usize,
    pub seed: u64,
}

impl Default for SampledAudit {
    fn default() -> Self {
        Self {
            replicates: 16,
            seed: 0,
        }
    }
}

impl SampledAudit {
    fn mode(&self) -> EvalMode {
        EvalMode::monte_carlo(self.replicates, self.seed)
    }
}

fn all_static(profile: &Profile) -> bool {
    profile.is_closed_loop_free()
}

/// Audits every player of an all-automaton profile exactly. Profiles with
/// learners fall back to canonical deviations.
pub fn audit_exact(profile: &Profile, horizon: u64) -> Result<AuditReport> {
    let players: Vec<usize> = (0..profile.n()).collect();
    audit_players(profile, horizon, &players, SampledAudit::default())
}

fn audit_players(profile: &Profile, horizon: u64, players: &[usize], sampled: SampledAudit) -> Result<AuditReport> {
    if let Some(i) = profile.open_seats().first() {
        return Err(Error::Config(format!("seat {i} is open; fill it before auditing")));
    }
    if horizon == 0 {
        return Err(Error::Usage("horizon T must be at least 1".into()));
    }
    if !all_static(profile) {
        let msg = format!(
            "`{}` has non-automaton seats; falling back to canonical deviations",
            profile.construction
        );
        log::warn!("{msg}");
        return canonical_audit(profile, horizon, players, sampled, vec![msg]);
    }
    let (_, eq) = run(&GameConfig::new(profile.clone(), horizon, EvalMode::ExactAutomaton))?;
    let audits = players
        .par_iter()
        .map(|&i| {
            let br = best_response(profile, i, horizon);
            let best = br.value / horizon as f64;
            PlayerAudit {
                player: i,
                equilibrium_utility: eq.utilities[i],
                best_deviation_utility: best,
                gain: best - eq.utilities[i],
                witness: describe_prices(profile.grid, &br.path),
                witness_prices: br.path,
            }
        })
        .collect();
    Ok(AuditReport::new(profile, horizon, AuditMethod::ExactDp, audits, vec![]))
}

/// Replaces each audited player by `learner` and measures the change in its
/// utility.
pub fn audit_adoption(
    profile: &Profile,
    learner: &LearnerSpec,
    horizon: u64,
    players: Option<&[usize]>,
    sampled: SampledAudit,
) -> Result<AuditReport> {
    let all: Vec<usize> = (0..profile.n()).collect();
    let players = players.unwrap_or(&all);
    let base_mode = if all_static(profile) {
        EvalMode::ExactAutomaton
    } else {
        sampled.mode()
    };
    let (_, eq) = run(&GameConfig::new(profile.clone(), horizon, base_mode))?;
    let audits = players
        .par_iter()
        .map(|&i| {
            let d = DefectionSpec::uniform(vec![i], StrategySpec::Learner(learner.clone()))?;
            let (_, m) = run(&GameConfig::new(profile.clone(), horizon, sampled.mode()).with_defection(d))?;
            Ok(PlayerAudit {
                player: i,
                equilibrium_utility: eq.utilities[i],
                best_deviation_utility: m.utilities[i],
                gain: m.utilities[i] - eq.utilities[i],
                witness: learner.name().to_string(),
                witness_prices: vec![],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AuditReport::new(
        profile,
        horizon,
        AuditMethod::NoregretOnly,
        audits,
        vec![],
    ))
}

/// Audits the players of `J` (default: everyone but `i`) with seat `i`
/// fixed to `s_i`. Automaton or scripted `s_i` is folded into the
/// environment of an exact DP; learners force canonical deviations.
pub fn audit_defection_aware(
    profile: &Profile,
    i: usize,
    s_i: StrategySpec,
    horizon: u64,
    audited: Option<&[usize]>,
    sampled: SampledAudit,
) -> Result<AuditReport> {
    let filled = profile.with_defection(&DefectionSpec::new(vec![i], vec![s_i])?)?;
    let default: Vec<usize> = (0..profile.n()).filter(|&j| j != i).collect();
    let players = audited.unwrap_or(&default);
    if players.contains(&i) {
        return Err(Error::Usage(format!(
            "player {i} is the fixed defector and cannot be audited"
        )));
    }
    audit_players(&filled, horizon, players, sampled)
}

/// Fixed prices, undercut-once-then-fixed, and Hedge, each measured by the
/// engine under common random numbers.
fn canonical_audit(
    profile: &Profile,
    horizon: u64,
    players: &[usize],
    sampled: SampledAudit,
    warnings: Vec<String>,
) -> Result<AuditReport> {
    let grid = profile.grid;
    let (_, eq) = run(&GameConfig::new(profile.clone(), horizon, sampled.mode()))?;
    let mut audits = Vec::with_capacity(players.len());
    for &i in players {
        let candidates = canonical_deviations(grid)?;
        let measured = candidates
            .par_iter()
            .map(|(label, spec)| {
                let d = DefectionSpec::uniform(vec![i], spec.clone())?;
                let (_, m) = run(&GameConfig::new(profile.clone(), horizon, sampled.mode()).with_defection(d))?;
                Ok((label.clone(), m.utilities[i]))
            })
            .collect::<Result<Vec<_>>>()?;
        let (witness, best) =
            measured.into_iter().fold(
                (String::new(), f64::NEG_INFINITY),
                |acc, (l, u)| {
                    if u > acc.1 {
                        (l, u)
                    } else {
                        acc
                    }
                },
            );
        audits.push(PlayerAudit {
            player: i,
            equilibrium_utility: eq.utilities[i],
            best_deviation_utility: best,
            gain: best - eq.utilities[i],
            witness,
            witness_prices: vec![],
        });
    }
    Ok(AuditReport::new(
        profile,
        horizon,
        AuditMethod::CanonicalDeviations,
        audits,
        warnings,
    ))
}

/// Candidate deviations. Fixed prices are thinned to about 100 on large
/// grids, always keeping the top two.
pub fn canonical_deviations(grid: PriceGrid) -> Result<Vec<(String, StrategySpec)>> {
    let k = grid.top();
    let stride = (k / 100).max(1);
    let mut prices: Vec<usize> = (0..=k).step_by(stride).collect();
    for p in [k.saturating_sub(1), k] {
        if !prices.contains(&p) {
            prices.push(p);
        }
    }
    let mut out = Vec::new();
    for &p in &prices {
        out.push((
            format!("fixed {:.4}", grid.price(p)),
            StrategySpec::FixedSequence(FixedSequence::constant(grid, p)?),
        ));
    }
    for &p in &prices {
        out.push((
            format!(
                "undercut to {:.4} once, then fixed {:.4}",
                grid.price(k - 1),
                grid.price(p)
            ),
            StrategySpec::FixedSequence(FixedSequence::switch_at(grid, k - 1, 1, p)?),
        ));
    }
    out.push(("hedge".into(), StrategySpec::Learner(LearnerSpec::Hedge)));
    Ok(out)
}

/// Optimal total payoff of a deviator against fixed automaton/scripted
/// opponents, with the optimal policy's most likely price path.
pub struct BestResponse {
    pub value: f64,
    pub path: Vec<u32>,
}

struct DpTables<'a> {
    profile: &'a Profile,
    deviator: usize,
    cats: Categories,
    watched: PlayerSet,
    has_scripts: bool,
    ids: HashMap<Vec<u32>, usize>,
    states: Vec<Vec<u32>>,
    /// Per entry key: best immediate payoff and price in each category.
    rewards: HashMap<Vec<u32>, Vec<(f64, u32)>>,
    /// `(t or 0, state, category)` -> successors.
    succ: HashMap<(usize, usize, usize), Vec<(usize, f64)>>,
}

impl<'a> DpTables<'a> {
    fn intern(&mut self, s: Vec<u32>) -> usize {
        if let Some(&id) = self.ids.get(&s) {
            return id;
        }
        let id = self.states.len();
        self.ids.insert(s.clone(), id);
        self.states.push(s);
        id
    }

    fn key(&self, t: usize, s: &[u32]) -> Vec<u32> {
        self.profile
            .members
            .iter()
            .zip(s)
            .enumerate()
            .map(|(j, (m, &x))| match m {
                _ if j == self.deviator => 0,
                StrategySpec::FixedSequence(f) => f.price_at(t),
                _ => x,
            })
            .collect()
    }

    fn dist_of(&self, j: usize, key: &[u32]) -> PriceDist {
        match &self.profile.members[j] {
            StrategySpec::Automaton(a) => (**a.output(key[j] as usize)).clone(),
            _ => PriceDist::point(self.profile.grid, key[j] as usize).expect("validated script"),
        }
    }

    fn rewards(&mut self, key: &[u32]) -> &[(f64, u32)] {
        if !self.rewards.contains_key(key) {
            let n = self.profile.n();
            let seats: Vec<usize> = (0..n).filter(|&j| j != self.deviator).collect();
            let owned: Vec<PriceDist> = seats.iter().map(|&j| self.dist_of(j, key)).collect();
            let refs: Vec<&PriceDist> = owned.iter().collect();
            let entry = StaticEntry::build(self.profile.grid, n, seats, &refs, 0);
            let v = entry.single_vector().values();
            let best = (0..self.cats.count())
                .map(|c| {
                    let lo = self.cats.representative(c) as usize;
                    let hi = self.cats.upper(c);
                    (lo..hi).fold((f64::NEG_INFINITY, lo as u32), |acc, p| {
                        if v[p] > acc.0 {
                            (v[p], p as u32)
                        } else {
                            acc
                        }
                    })
                })
                .collect();
            self.rewards.insert(key.to_vec(), best);
        }
        &self.rewards[key]
    }

    fn successors(&mut self, t: usize, s: usize, c: usize) -> &[(usize, f64)] {
        let slot = (if self.has_scripts { t } else { 0 }, s, c);
        if !self.succ.contains_key(&slot) {
            let state = self.states[s].clone();
            let key = self.key(t, &state);
            let rep = self.cats.representative(c);
            let cells: Vec<Vec<(u32, f64)>> = (0..self.profile.n())
                .map(|j| {
                    if j == self.deviator {
                        vec![(rep, 1.0)]
                    } else if !self.watched.contains(j) {
                        vec![(0, 1.0)]
                    } else {
                        match &self.profile.members[j] {
                            StrategySpec::Automaton(a) => self.cats.split(a.output(key[j] as usize)),
                            _ => vec![(self.cats.representative(self.cats.of_price(key[j] as usize)), 1.0)],
                        }
                    }
                })
                .collect();
            let mut merged: std::collections::BTreeMap<Vec<u32>, f64> = Default::default();
            for_each_outcome(&cells, |prices, p| {
                let next: Vec<u32> = self
                    .profile
                    .members
                    .iter()
                    .zip(&state)
                    .enumerate()
                    .map(|(j, (m, &x))| match m {
                        StrategySpec::Automaton(a) if j != self.deviator => a.next(x as usize, prices) as u32,
                        _ => 0,
                    })
                    .collect();
                *merged.entry(next).or_insert(0.0) += p;
            });
            let list = merged.into_iter().map(|(k, p)| (self.intern(k), p)).collect();
            self.succ.insert(slot, list);
        }
        &self.succ[&slot]
    }
}

/// Backward induction over (joint opponent state, round). Actions are pure
/// prices grouped by trigger category; within a category the best immediate
/// payoff is taken, since transitions cannot tell the prices apart.
pub fn best_response(profile: &Profile, deviator: usize, horizon: u64) -> BestResponse {
    let watched = profile
        .members
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != deviator)
        .filter_map(|(_, m)| match m {
            StrategySpec::Automaton(a) => Some(a.watched()),
            _ => None,
        })
        .fold(PlayerSet::EMPTY, PlayerSet::union);
    let mut tb = DpTables {
        profile,
        deviator,
        cats: Categories::of_profile(profile),
        watched,
        has_scripts: profile
            .members
            .iter()
            .any(|m| matches!(m, StrategySpec::FixedSequence(_))),
        ids: HashMap::new(),
        states: Vec::new(),
        rewards: HashMap::new(),
        succ: HashMap::new(),
    };
    let start: Vec<u32> = profile
        .members
        .iter()
        .enumerate()
        .map(|(j, m)| match m {
            StrategySpec::Automaton(a) if j != deviator => a.start() as u32,
            _ => 0,
        })
        .collect();
    let s0 = tb.intern(start);
    let t_max = horizon as usize;
    let n_cats = tb.cats.count();

    // Forward reachability, layer by layer.
    let mut layers: Vec<Vec<usize>> = vec![vec![s0]];
    let mut seen_at = Vec::new();
    for t in 0..t_max.saturating_sub(1) {
        seen_at.clear();
        let mut next = Vec::new();
        for idx in 0..layers[t].len() {
            let s = layers[t][idx];
            for c in 0..n_cats {
                let succ: Vec<usize> = tb.successors(t, s, c).iter().map(|&(x, _)| x).collect();
                for x in succ {
                    if seen_at.len() <= x {
                        seen_at.resize(x + 1, false);
                    }
                    if !seen_at[x] {
                        seen_at[x] = true;
                        next.push(x);
                    }
                }
            }
        }
        next.sort_unstable();
        layers.push(next);
    }

    // Backward values and the greedy policy.
    let mut v_next = vec![0.0; tb.states.len()];
    let mut v_cur = vec![0.0; tb.states.len()];
    let mut policy: Vec<Vec<(usize, u32)>> = vec![Vec::new(); t_max];
    for t in (0..t_max).rev() {
        let mut pol = Vec::with_capacity(layers[t].len());
        for idx in 0..layers[t].len() {
            let s = layers[t][idx];
            let key = tb.key(t, &tb.states[s].clone());
            let rewards = tb.rewards(&key).to_vec();
            let mut best = (f64::NEG_INFINITY, 0usize, 0u32);
            for (c, &(r, p)) in rewards.iter().enumerate() {
                if r == f64::NEG_INFINITY {
                    continue;
                }
                let cont: f64 = if t + 1 < t_max {
                    tb.successors(t, s, c).iter().map(|&(x, w)| w * v_next[x]).sum()
                } else {
                    0.0
                };
                let total = r + cont;
                if total > best.0 + 1e-15 {
                    best = (total, c, p);
                }
            }
            v_cur[s] = best.0;
            pol.push((best.1, best.2));
        }
        policy[t] = pol;
        std::mem::swap(&mut v_cur, &mut v_next);
    }
    let value = v_next[s0];

    let mut path = Vec::with_capacity(t_max);
    let mut s = s0;
    for t in 0..t_max {
        let idx = layers[t].binary_search(&s).unwrap_or(0);
        let (c, p) = policy[t][idx];
        path.push(p);
        if t + 1 < t_max {
            s = tb
                .successors(t, s, c)
                .iter()
                .fold((s, -1.0), |acc, &(x, w)| if w > acc.1 { (x, w) } else { acc })
                .0;
        }
    }
    BestResponse { value, path }
}

/// Run-length summary such as `rounds 0-998 at 1.0000; round 999 at 0.9900`.
fn describe_prices(grid: PriceGrid, path: &[u32]) -> String {
    let mut parts = Vec::new();
    let mut start = 0;
    for t in 1..=path.len() {
        if t == path.len() || path[t] != path[start] {
            let price = grid.price(path[start] as usize);
            parts.push(if t - start == 1 {
                format!("round {start} at {price:.4}")
            } else {
                format!("rounds {start}-{} at {price:.4}", t - 1)
            });
            start = t;
        }
    }
    parts.join("; ")
}
