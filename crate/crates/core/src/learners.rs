//! Full-information no-regret learners over the price grid.

use std::borrow::Cow;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::distributions::CceSolution;
use crate::error::{Error, Result};
use crate::grid::{PriceDist, PriceGrid};

/// `sqrt(T ln(K+1) / 2)`, the Hedge regret guarantee with the tuned rate.
pub fn hedge_regret_bound(horizon: u64, grid: PriceGrid) -> f64 {
    (horizon as f64 * (grid.len() as f64).ln() / 2.0).sqrt()
}

/// `sqrt(8 ln(K+1) / T)`.
pub fn hedge_learning_rate(horizon: u64, grid: PriceGrid) -> f64 {
    (8.0 * (grid.len() as f64).ln() / horizon as f64).sqrt()
}

/// Expected payoff of every fixed price in one round, with the exponential
/// factors used by Hedge cached on first use.
#[derive(Debug)]
pub struct PayoffVector {
    values: Vec<f64>,
    factors: OnceLock<(f64, Vec<f64>)>,
}

impl PayoffVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(-1e-12..=1.0 + 1e-12).contains(*v))
        {
            return Err(Error::Usage(format!("payoff {v} at price index {i} outside [0, 1]")));
        }
        Ok(Self::new_unchecked(values))
    }

    pub(crate) fn new_unchecked(values: Vec<f64>) -> Self {
        Self {
            values,
            factors: OnceLock::new(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `exp(eta * v)`; cached for the first rate requested.
    pub fn factors(&self, eta: f64) -> Cow<'_, [f64]> {
        let (cached_eta, f) = self
            .factors
            .get_or_init(|| (eta, self.values.iter().map(|v| (eta * v).exp()).collect()));
        if *cached_eta == eta {
            Cow::Borrowed(f)
        } else {
            Cow::Owned(self.values.iter().map(|v| (eta * v).exp()).collect())
        }
    }
}

/// Cumulative payoff of each fixed price against what was obtained.
#[derive(Clone, Debug)]
pub struct RegretTracker {
    cumulative: Vec<f64>,
    obtained: f64,
    rounds: u64,
}

impl RegretTracker {
    pub fn new(grid: PriceGrid) -> Self {
        Self {
            cumulative: vec![0.0; grid.len()],
            obtained: 0.0,
            rounds: 0,
        }
    }

    pub fn observe(&mut self, payoffs: &[f64], obtained: f64) {
        for (c, v) in self.cumulative.iter_mut().zip(payoffs) {
            *c += v;
        }
        self.obtained += obtained;
        self.rounds += 1;
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    pub fn obtained(&self) -> f64 {
        self.obtained
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    /// Best fixed price in hindsight, ties to the lowest index.
    pub fn best_fixed(&self) -> (usize, f64) {
        argmax_lowest(&self.cumulative)
    }

    pub fn regret(&self) -> f64 {
        self.best_fixed().1 - self.obtained
    }

    pub fn record(&self, bound: f64) -> RegretRecord {
        let (best, _) = self.best_fixed();
        RegretRecord {
            measured_regret: self.regret(),
            theoretical_bound: bound,
            best_fixed_price: best,
            rounds: self.rounds,
        }
    }
}

fn argmax_lowest(values: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &v) in values.iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretRecord {
    pub measured_regret: f64,
    pub theoretical_bound: f64,
    pub best_fixed_price: usize,
    pub rounds: u64,
}

const RESYNC_EVERY: u64 = 64;

/// Hedge with a rate tuned to a known horizon.
///
/// Weights are kept in log space (`eta` times cumulative payoff), so they
/// stay strictly positive however long the run; the normal-space copy is a
/// multiplicative shortcut, recomputed from the log weights every
/// `RESYNC_EVERY` rounds so that underflowed entries can recover.
#[derive(Clone, Debug)]
pub struct Hedge {
    grid: PriceGrid,
    eta: f64,
    log_weights: Vec<f64>,
    weights: Vec<f64>,
    dist: PriceDist,
    rounds: u64,
}

impl Hedge {
    pub fn new(grid: PriceGrid, horizon: u64) -> Self {
        Self::with_rate(grid, hedge_learning_rate(horizon.max(1), grid))
    }

    pub fn with_rate(grid: PriceGrid, eta: f64) -> Self {
        let n = grid.len();
        Self {
            grid,
            eta,
            log_weights: vec![0.0; n],
            weights: vec![1.0 / n as f64; n],
            dist: PriceDist::uniform(grid),
            rounds: 0,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.eta
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn rounds_seen(&self) -> u64 {
        self.rounds
    }

    /// Current output distribution.
    pub fn next(&self) -> &PriceDist {
        &self.dist
    }

    pub fn update(&mut self, payoffs: &PayoffVector) {
        let v = payoffs.values();
        for (lw, x) in self.log_weights.iter_mut().zip(v) {
            *lw += self.eta * x;
        }
        self.rounds += 1;
        let factors = payoffs.factors(self.eta);
        let mut total = 0.0;
        for (w, f) in self.weights.iter_mut().zip(factors.iter()) {
            *w *= f;
            total += *w;
        }
        if self.rounds % RESYNC_EVERY == 0 || !total.is_normal() {
            self.resync();
        } else {
            self.weights.iter_mut().for_each(|w| *w /= total);
        }
        let dist = match PriceDist::new(self.grid, self.weights.clone()) {
            Ok(d) => d,
            Err(_) => {
                self.resync();
                PriceDist::new(self.grid, self.weights.clone()).expect("softmax of finite weights")
            }
        };
        self.dist = dist;
    }

    fn resync(&mut self) {
        let top = self.log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (w, lw) in self.weights.iter_mut().zip(&self.log_weights) {
            *w = (lw - top).exp();
            total += *w;
        }
        self.weights.iter_mut().for_each(|w| *w /= total);
    }
}

/// When a guarded learner abandons its base distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum GuardRule {
    /// Cumulative regret may not exceed `rate * t` after `t` rounds.
    AverageRate { rate: f64 },
    /// Cumulative regret may not exceed `bound` at any time.
    Absolute { bound: f64 },
}

impl GuardRule {
    /// `2/K` per round.
    pub fn default_for(grid: PriceGrid) -> Self {
        GuardRule::AverageRate {
            rate: 2.0 * grid.step(),
        }
    }

    pub fn threshold(&self, rounds: u64) -> f64 {
        match *self {
            GuardRule::AverageRate { rate } => rate * rounds as f64,
            GuardRule::Absolute { bound } => bound,
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            GuardRule::AverageRate { rate } => format!("cumulative regret <= {rate}*t"),
            GuardRule::Absolute { bound } => format!("cumulative regret <= {bound}"),
        }
    }
}

/// Plays `base` while its regret stays within the guard, then hands over
/// to a fresh Hedge for good.
#[derive(Clone, Debug)]
pub struct Guarded {
    base: Arc<PriceDist>,
    rule: GuardRule,
    tracker: RegretTracker,
    horizon: u64,
    hedge: Option<Hedge>,
    breach_round: Option<u64>,
}

impl Guarded {
    pub fn new(base: Arc<PriceDist>, rule: GuardRule, horizon: u64) -> Self {
        let grid = base.grid();
        Self {
            base,
            rule,
            tracker: RegretTracker::new(grid),
            horizon,
            hedge: None,
            breach_round: None,
        }
    }

    pub fn next(&self) -> &PriceDist {
        match &self.hedge {
            Some(h) => h.next(),
            None => &self.base,
        }
    }

    pub fn is_breached(&self) -> bool {
        self.hedge.is_some()
    }

    /// Round (1-based count of observed rounds) at which the guard failed.
    pub fn breach_round(&self) -> Option<u64> {
        self.breach_round
    }

    /// `obtained` is the expected payoff of what was actually played.
    pub fn update(&mut self, payoffs: &PayoffVector, obtained: f64) {
        if let Some(h) = &mut self.hedge {
            h.update(payoffs);
            return;
        }
        self.tracker.observe(payoffs.values(), obtained);
        if self.tracker.regret() > self.rule.threshold(self.tracker.rounds()) + 1e-12 {
            self.breach_round = Some(self.tracker.rounds());
            self.hedge = Some(Hedge::new(self.base.grid(), self.horizon));
        }
    }
}

/// Replacement strategy that learns.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerSpec {
    Hedge,
    Guarded {
        base: PriceDist,
        #[serde(default)]
        rule: Option<GuardRule>,
    },
    /// Guarded play of a CCE. In correlated mode every seat holding the same
    /// solution forms one coalition drawing a shared joint atom.
    CceGuarded {
        cce: Arc<CceSolution>,
        #[serde(default)]
        rule: Option<GuardRule>,
    },
}

impl LearnerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LearnerSpec::Hedge => "hedge",
            LearnerSpec::Guarded { .. } => "guarded",
            LearnerSpec::CceGuarded { .. } => "cce_guarded",
        }
    }
}

/// Best fixed price over a payoff history; ties go to the lowest index.
pub fn best_fixed_price(history: &[Vec<f64>]) -> Result<(usize, f64)> {
    let first = history
        .first()
        .ok_or_else(|| Error::Usage("empty payoff history".into()))?;
    let mut total = vec![0.0; first.len()];
    for round in history {
        if round.len() != total.len() {
            return Err(Error::Usage("payoff vectors of different lengths".into()));
        }
        for (t, v) in total.iter_mut().zip(round) {
            *t += v;
        }
    }
    Ok(argmax_lowest(&total))
}

/// `sum_t (1 - P_t(p_star))`.
pub fn count_bad_rounds<'a>(outputs: impl IntoIterator<Item = &'a PriceDist>, p_star: usize) -> f64 {
    outputs.into_iter().map(|d| 1.0 - d.mass(p_star)).sum()
}

/// Outcome of Hedge facing the same payoff vector every round.
#[derive(Clone, Debug)]
pub struct StationaryRun {
    pub regret: RegretRecord,
    /// `sum_t (1 - P_t(p_star))` for the argmax of the payoff vector.
    pub bad_rounds: f64,
    pub final_dist: PriceDist,
}

/// Hedge against an oblivious opponent whose expected-payoff vector does not
/// change between rounds.
pub fn hedge_stationary(payoffs: &PayoffVector, grid: PriceGrid, horizon: u64) -> StationaryRun {
    let mut hedge = Hedge::new(grid, horizon);
    let mut tracker = RegretTracker::new(grid);
    let (p_star, _) = argmax_lowest(payoffs.values());
    let mut bad = 0.0;
    for _ in 0..horizon {
        let d = hedge.next();
        bad += 1.0 - d.mass(p_star);
        let obtained: f64 = d.masses().iter().zip(payoffs.values()).map(|(m, v)| m * v).sum();
        tracker.observe(payoffs.values(), obtained);
        hedge.update(payoffs);
    }
    StationaryRun {
        regret: tracker.record(hedge_regret_bound(horizon, grid)),
        bad_rounds: bad,
        final_dist: hedge.next().clone(),
    }
}
