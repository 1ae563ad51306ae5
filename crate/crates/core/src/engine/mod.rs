//! Repeated-game execution: Rao-Blackwellized Monte Carlo over realized
//! trigger paths, or exact propagation of the joint automaton state.

mod categories;
pub mod eval;
mod exact;

use std::collections::HashMap;
use std::rc::Rc;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub(crate) use categories::{for_each_outcome, Categories};
pub use eval::{Factor, RawEval, RoundEval, StaticEntry};

use crate::distributions::SamplingMode;
use crate::error::{Error, Result};
use crate::grid::{PriceDist, PriceGrid};
use crate::learners::{
    hedge_regret_bound, GuardRule, Guarded, Hedge, LearnerSpec, PayoffVector, RegretRecord, RegretTracker,
};
use crate::strategy::{Automaton, DefectionSpec, FixedSequence, Profile, StrategySpec};

pub const DEFAULT_REPLICATES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EvalMode {
    MonteCarlo { replicates: usize, seed: u64 },
    ExactAutomaton,
}

impl Default for EvalMode {
    fn default() -> Self {
        EvalMode::MonteCarlo {
            replicates: DEFAULT_REPLICATES,
            seed: 0,
        }
    }
}

impl EvalMode {
    pub fn monte_carlo(replicates: usize, seed: u64) -> Self {
        EvalMode::MonteCarlo { replicates, seed }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EvalMode::MonteCarlo { .. } => "monte_carlo",
            EvalMode::ExactAutomaton => "exact_automaton",
        }
    }

    pub fn replicates(&self) -> usize {
        match *self {
            EvalMode::MonteCarlo { replicates, .. } => replicates,
            EvalMode::ExactAutomaton => 1,
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match *self {
            EvalMode::MonteCarlo { seed, .. } => Some(seed),
            EvalMode::ExactAutomaton => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GameConfig {
    pub profile: Profile,
    pub horizon: u64,
    pub defection: Option<DefectionSpec>,
    pub mode: EvalMode,
    /// Keep the per-round trace of the first replicate.
    pub record_trace: bool,
    /// Also keep every seat's output distribution in that trace.
    pub record_distributions: bool,
}

impl GameConfig {
    pub fn new(profile: Profile, horizon: u64, mode: EvalMode) -> Self {
        Self {
            profile,
            horizon,
            defection: None,
            mode,
            record_trace: false,
            record_distributions: false,
        }
    }

    pub fn with_defection(mut self, defection: DefectionSpec) -> Self {
        self.defection = Some(defection);
        self
    }

    pub fn with_trace(mut self, distributions: bool) -> Self {
        self.record_trace = true;
        self.record_distributions = distributions;
        self
    }

    /// The profile actually played.
    pub fn effective_profile(&self) -> Result<Profile> {
        match &self.defection {
            Some(d) => self.profile.with_defection(d),
            None => Ok(self.profile.clone()),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Usage("horizon T must be at least 1".into()));
        }
        if let EvalMode::MonteCarlo { replicates: 0, .. } = self.mode {
            return Err(Error::Usage("at least one replicate is required".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceRound {
    /// Realized prices (empty in exact mode).
    pub realized: Vec<u32>,
    /// Conditional expected minimum price.
    pub price: f64,
    /// Conditional expected payoff per seat.
    pub payoffs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dists: Option<Vec<PriceDist>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trace {
    pub construction: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: u32,
    #[serde(rename = "T")]
    pub horizon: u64,
    pub mode: EvalMode,
    pub replicate: usize,
    pub rounds: Vec<TraceRound>,
    pub learners: Vec<LearnerSummary>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LearnerSummary {
    pub player: usize,
    pub learner: String,
    pub regret_bound: f64,
    pub max_regret: f64,
    pub mean_regret: f64,
    /// Best fixed price of the first replicate.
    pub best_fixed_price: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard_rule: Option<String>,
    /// Share of replicates whose guard failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breach_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_breach_round: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunMetrics {
    pub market_price: f64,
    /// Standard error of the market price across replicates.
    pub stderr: f64,
    pub utilities: Vec<f64>,
    pub utility_stderr: Vec<f64>,
    pub replicates: usize,
    pub horizon: u64,
    pub mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling_mode: Option<SamplingMode>,
    pub learners: Vec<LearnerSummary>,
    /// Largest per-round `|sum_i u_i - E[min]|` seen in any replicate.
    pub welfare_residual: f64,
    pub replicate_prices: Vec<f64>,
}

impl RunMetrics {
    pub fn total_utility(&self) -> f64 {
        self.utilities.iter().sum()
    }

    pub fn max_regret(&self) -> Option<f64> {
        self.learners.iter().map(|l| l.max_regret).reduce(f64::max)
    }

    fn aggregate(
        horizon: u64,
        mode: EvalMode,
        sampling_mode: Option<SamplingMode>,
        reps: Vec<ReplicateOutcome>,
        specs: &[(usize, String, Option<String>, f64)],
    ) -> Self {
        let t = horizon as f64;
        let r = reps.len();
        let prices: Vec<f64> = reps.iter().map(|o| o.price_sum / t).collect();
        let (market_price, stderr) = mean_stderr(&prices);
        let n = reps[0].util_sums.len();
        let mut utilities = Vec::with_capacity(n);
        let mut utility_stderr = Vec::with_capacity(n);
        for i in 0..n {
            let u: Vec<f64> = reps.iter().map(|o| o.util_sums[i] / t).collect();
            let (m, s) = mean_stderr(&u);
            utilities.push(m);
            utility_stderr.push(s);
        }
        let learners = specs
            .iter()
            .enumerate()
            .map(|(l, (player, name, rule, bound))| {
                let regrets: Vec<f64> = reps.iter().map(|o| o.learners[l].0.measured_regret).collect();
                let breaches: Vec<Option<u64>> = reps.iter().map(|o| o.learners[l].1).collect();
                let breached: Vec<f64> = breaches.iter().flatten().map(|&b| b as f64).collect();
                LearnerSummary {
                    player: *player,
                    learner: name.clone(),
                    regret_bound: *bound,
                    max_regret: regrets.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    mean_regret: regrets.iter().sum::<f64>() / r as f64,
                    best_fixed_price: reps[0].learners[l].0.best_fixed_price,
                    guard_rule: rule.clone(),
                    breach_fraction: rule.as_ref().map(|_| breached.len() as f64 / r as f64),
                    mean_breach_round: (rule.is_some() && !breached.is_empty())
                        .then(|| breached.iter().sum::<f64>() / breached.len() as f64),
                }
            })
            .collect();
        RunMetrics {
            market_price,
            stderr,
            utilities,
            utility_stderr,
            replicates: r,
            horizon,
            mode: mode.name().into(),
            seed: mode.seed(),
            sampling_mode,
            learners,
            welfare_residual: reps.iter().map(|o| o.welfare_residual).fold(0.0, f64::max),
            replicate_prices: prices,
        }
    }
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

struct ReplicateOutcome {
    price_sum: f64,
    util_sums: Vec<f64>,
    learners: Vec<(RegretRecord, Option<u64>)>,
    welfare_residual: f64,
    rounds: Option<Vec<TraceRound>>,
}

/// Runs the game and returns the first replicate's trace (if requested)
/// with the aggregate metrics.
pub fn run(config: &GameConfig) -> Result<(Option<Trace>, RunMetrics)> {
    config.validate()?;
    let profile = config.effective_profile()?;
    if let Some(i) = profile.open_seats().first() {
        return Err(Error::Config(format!(
            "seat {i} of `{}` is open; a defection must fill it",
            profile.construction
        )));
    }
    let plan = Plan::new(&profile, config.horizon)?;
    let (reps, mode) = match config.mode {
        EvalMode::ExactAutomaton => {
            if !profile.is_closed_loop_free() {
                return Err(Error::Config(
                    "exact_automaton mode needs every seat to be an automaton or a fixed sequence".into(),
                ));
            }
            let out = exact::run_exact(&profile, config.horizon, config.record_trace)?;
            (vec![out], config.mode)
        }
        EvalMode::MonteCarlo { replicates, seed } => {
            let reps: Vec<ReplicateOutcome> = (0..replicates)
                .into_par_iter()
                .map(|r| {
                    let record = config.record_trace && r == 0;
                    Runner::new(&plan, &profile, config.horizon).run(
                        seed,
                        r as u64,
                        record,
                        config.record_distributions,
                    )
                })
                .collect();
            (reps, config.mode)
        }
    };
    let specs = plan.learner_specs(config.horizon);
    let mut reps = reps;
    let rounds = reps[0].rounds.take();
    let metrics = RunMetrics::aggregate(config.horizon, mode, plan.sampling_mode, reps, &specs);
    let trace = rounds.map(|rounds| Trace {
        construction: profile.construction.clone(),
        n: profile.n(),
        k: profile.grid.k(),
        horizon: config.horizon,
        mode,
        replicate: 0,
        rounds,
        learners: metrics.learners.clone(),
    });
    Ok((trace, metrics))
}

/// Defected price alongside the no-defection price of the same profile.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DefectedPrice {
    pub defected: RunMetrics,
    /// Absent when the baseline has open seats.
    pub baseline: Option<RunMetrics>,
}

pub fn defected_price(
    baseline: &Profile,
    defection: &DefectionSpec,
    horizon: u64,
    mode: EvalMode,
) -> Result<DefectedPrice> {
    let cfg = GameConfig::new(baseline.clone(), horizon, mode).with_defection(defection.clone());
    let (_, defected) = run(&cfg)?;
    let base = if baseline.open_seats().is_empty() {
        let mode = if baseline.is_closed_loop_free() {
            EvalMode::ExactAutomaton
        } else {
            mode
        };
        Some(run(&GameConfig::new(baseline.clone(), horizon, mode))?.1)
    } else {
        None
    };
    Ok(DefectedPrice {
        defected,
        baseline: base,
    })
}

/// Market-price ceiling implied by an `r(T)`-regret player earning `c`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Cap {
    pub value: f64,
    /// `min(value, 1)`.
    pub reported: f64,
    /// True when the cap says nothing (`c <= 0` or `value >= 1`).
    pub vacuous: bool,
}

/// `c + 1/K + (c + r/T)(1 + ln(1/c))`.
pub fn lemma2_cap(c: f64, r_over_t: f64, grid: PriceGrid) -> Lemma2Cap {
    if c <= 0.0 {
        return Lemma2Cap {
            value: 1.0,
            reported: 1.0,
            vacuous: true,
        };
    }
    let value = c + grid.step() + (c + r_over_t) * (1.0 + (1.0 / c.min(1.0)).ln());
    Lemma2Cap {
        value,
        reported: value.min(1.0),
        vacuous: value >= 1.0,
    }
}

enum SeatPlan {
    Auto(Arc<Automaton>),
    Script(FixedSequence),
    Learner(usize),
}

enum LearnerPlan {
    Hedge,
    Guarded {
        base: Arc<PriceDist>,
        rule: GuardRule,
    },
    Member {
        pos: usize,
        base: Arc<PriceDist>,
        rule: GuardRule,
    },
}

struct CoalitionPlan {
    /// Learner index of each position in the joint table.
    learners: Vec<usize>,
    ordered: Vec<(Vec<u32>, f64)>,
    cumulative: Vec<f64>,
}

/// Seat layout shared by all replicates.
struct Plan {
    grid: PriceGrid,
    seats: Vec<SeatPlan>,
    static_seats: Vec<usize>,
    learner_seats: Vec<usize>,
    learners: Vec<LearnerPlan>,
    learner_names: Vec<String>,
    coalition: Option<CoalitionPlan>,
    sampling_mode: Option<SamplingMode>,
}

impl Plan {
    fn new(profile: &Profile, _horizon: u64) -> Result<Self> {
        let grid = profile.grid;
        let mut seats = Vec::new();
        let mut static_seats = Vec::new();
        let mut learner_seats = Vec::new();
        let mut learners = Vec::new();
        let mut learner_names = Vec::new();
        let mut coalition_cce = None;
        let mut coalition_learners = Vec::new();
        let mut sampling_mode = None;
        for (i, m) in profile.members.iter().enumerate() {
            match m {
                StrategySpec::Automaton(a) => {
                    static_seats.push(i);
                    seats.push(SeatPlan::Auto(a.clone()));
                }
                StrategySpec::FixedSequence(f) => {
                    static_seats.push(i);
                    seats.push(SeatPlan::Script(f.clone()));
                }
                StrategySpec::Open => unreachable!("open seats rejected earlier"),
                StrategySpec::Learner(spec) => {
                    let l = learners.len();
                    learner_seats.push(i);
                    learner_names.push(spec.name().to_string());
                    seats.push(SeatPlan::Learner(l));
                    learners.push(match spec {
                        LearnerSpec::Hedge => LearnerPlan::Hedge,
                        LearnerSpec::Guarded { base, rule } => LearnerPlan::Guarded {
                            base: Arc::new(base.clone()),
                            rule: rule.unwrap_or_else(|| GuardRule::default_for(grid)),
                        },
                        LearnerSpec::CceGuarded { cce, rule } => {
                            let rule = rule.unwrap_or_else(|| GuardRule::default_for(grid));
                            let base = Arc::new(cce.marginal.clone());
                            match sampling_mode {
                                Some(mode) if mode != cce.sampling_mode => {
                                    return Err(Error::Config("CCE seats mix sampling modes".into()));
                                }
                                _ => sampling_mode = Some(cce.sampling_mode),
                            }
                            match cce.sampling_mode {
                                SamplingMode::Iid => LearnerPlan::Guarded { base, rule },
                                SamplingMode::Correlated => {
                                    match &coalition_cce {
                                        None => coalition_cce = Some(cce.clone()),
                                        Some(c) if Arc::ptr_eq(c, cce) || **c == **cce => {}
                                        Some(_) => {
                                            return Err(Error::Config(
                                                "correlated CCE seats must share one solution".into(),
                                            ))
                                        }
                                    }
                                    coalition_learners.push(l);
                                    LearnerPlan::Member {
                                        pos: coalition_learners.len() - 1,
                                        base,
                                        rule,
                                    }
                                }
                            }
                        }
                    });
                }
            }
        }
        let coalition = match coalition_cce {
            None => None,
            Some(cce) => {
                if coalition_learners.len() != cce.m {
                    return Err(Error::Config(format!(
                        "correlated CCE for M={} played by {} seats",
                        cce.m,
                        coalition_learners.len()
                    )));
                }
                let ordered = cce.ordered_atoms();
                let mut acc = 0.0;
                let cumulative = ordered
                    .iter()
                    .map(|(_, w)| {
                        acc += w;
                        acc
                    })
                    .collect();
                Some(CoalitionPlan {
                    learners: coalition_learners,
                    ordered,
                    cumulative,
                })
            }
        };
        Ok(Self {
            grid,
            seats,
            static_seats,
            learner_seats,
            learners,
            learner_names,
            coalition,
            sampling_mode,
        })
    }

    fn learner_specs(&self, horizon: u64) -> Vec<(usize, String, Option<String>, f64)> {
        self.learners
            .iter()
            .enumerate()
            .map(|(l, lp)| {
                let rule = match lp {
                    LearnerPlan::Hedge => None,
                    LearnerPlan::Guarded { rule, .. } | LearnerPlan::Member { rule, .. } => Some(rule.describe()),
                };
                (
                    self.learner_seats[l],
                    self.learner_names[l].clone(),
                    rule,
                    hedge_regret_bound(horizon, self.grid),
                )
            })
            .collect()
    }
}

impl PartialEq for crate::distributions::CceSolution {
    fn eq(&self, other: &Self) -> bool {
        self.m == other.m && self.grid == other.grid && self.atoms == other.atoms
    }
}

enum SeatRt {
    Auto { a: Arc<Automaton>, state: usize },
    Script(FixedSequence),
    Learner(usize),
}

enum LearnerRt {
    Hedge(Hedge),
    Guarded(Guarded),
    Member { pos: usize, guard: Guarded },
}

impl LearnerRt {
    fn dist(&self) -> &PriceDist {
        match self {
            LearnerRt::Hedge(h) => h.next(),
            LearnerRt::Guarded(g) | LearnerRt::Member { guard: g, .. } => g.next(),
        }
    }

    fn active_member(&self) -> Option<usize> {
        match self {
            LearnerRt::Member { pos, guard } if !guard.is_breached() => Some(*pos),
            _ => None,
        }
    }

    fn update(&mut self, v: &PayoffVector, obtained: f64) {
        match self {
            LearnerRt::Hedge(h) => h.update(v),
            LearnerRt::Guarded(g) | LearnerRt::Member { guard: g, .. } => g.update(v, obtained),
        }
    }

    fn breach(&self) -> Option<u64> {
        match self {
            LearnerRt::Hedge(_) => None,
            LearnerRt::Guarded(g) | LearnerRt::Member { guard: g, .. } => g.breach_round(),
        }
    }
}

type Scenario = (Vec<(usize, u32)>, f64);

struct Runner<'p> {
    plan: &'p Plan,
    n: usize,
    horizon: u64,
    seats: Vec<SeatRt>,
    learners: Vec<LearnerRt>,
    trackers: Vec<RegretTracker>,
    entries: HashMap<Vec<u32>, Rc<StaticEntry>>,
    joint: HashMap<(Vec<u32>, u64), Rc<RoundEval>>,
    scenarios: HashMap<u64, Rc<Vec<Scenario>>>,
}

impl<'p> Runner<'p> {
    fn new(plan: &'p Plan, profile: &Profile, horizon: u64) -> Self {
        let seats = plan
            .seats
            .iter()
            .map(|s| match s {
                SeatPlan::Auto(a) => SeatRt::Auto {
                    a: a.clone(),
                    state: a.start(),
                },
                SeatPlan::Script(f) => SeatRt::Script(f.clone()),
                SeatPlan::Learner(l) => SeatRt::Learner(*l),
            })
            .collect();
        let learners = plan
            .learners
            .iter()
            .map(|l| match l {
                LearnerPlan::Hedge => LearnerRt::Hedge(Hedge::new(plan.grid, horizon)),
                LearnerPlan::Guarded { base, rule } => LearnerRt::Guarded(Guarded::new(base.clone(), *rule, horizon)),
                LearnerPlan::Member { pos, base, rule } => LearnerRt::Member {
                    pos: *pos,
                    guard: Guarded::new(base.clone(), *rule, horizon),
                },
            })
            .collect();
        Self {
            plan,
            n: profile.n(),
            horizon,
            seats,
            learners,
            trackers: vec![RegretTracker::new(plan.grid); plan.learners.len()],
            entries: HashMap::new(),
            joint: HashMap::new(),
            scenarios: HashMap::new(),
        }
    }

    fn static_key(&self, t: usize) -> Vec<u32> {
        self.plan
            .static_seats
            .iter()
            .map(|&s| match &self.seats[s] {
                SeatRt::Auto { state, .. } => *state as u32,
                SeatRt::Script(f) => f.price_at(t),
                SeatRt::Learner(_) => unreachable!(),
            })
            .collect()
    }

    fn entry(&mut self, key: &[u32]) -> Rc<StaticEntry> {
        if let Some(e) = self.entries.get(key) {
            return e.clone();
        }
        let dists: Vec<PriceDist> = self
            .plan
            .static_seats
            .iter()
            .zip(key)
            .map(|(&s, &k)| match &self.seats[s] {
                SeatRt::Auto { a, .. } => (**a.output(k as usize)).clone(),
                SeatRt::Script(_) => PriceDist::point(self.plan.grid, k as usize).expect("validated"),
                SeatRt::Learner(_) => unreachable!(),
            })
            .collect();
        let refs: Vec<&PriceDist> = dists.iter().collect();
        let e = Rc::new(StaticEntry::build(
            self.plan.grid,
            self.n,
            self.plan.static_seats.clone(),
            &refs,
            self.plan.learners.len(),
        ));
        self.entries.insert(key.to_vec(), e.clone());
        e
    }

    fn active_mask(&self) -> u64 {
        self.learners
            .iter()
            .filter_map(|l| l.active_member())
            .fold(0, |acc, pos| acc | (1 << pos))
    }

    /// Joint atoms marginalized onto the active coalition positions.
    fn scenarios(&mut self, mask: u64) -> Rc<Vec<Scenario>> {
        if let Some(s) = self.scenarios.get(&mask) {
            return s.clone();
        }
        let c = self.plan.coalition.as_ref().expect("coalition present");
        let mut merged: std::collections::BTreeMap<Vec<(usize, u32)>, f64> = Default::default();
        for (tuple, w) in &c.ordered {
            let key: Vec<(usize, u32)> = (0..tuple.len())
                .filter(|&pos| mask & (1 << pos) != 0)
                .map(|pos| (c.learners[pos], tuple[pos]))
                .collect();
            *merged.entry(key).or_insert(0.0) += w;
        }
        let s = Rc::new(merged.into_iter().collect::<Vec<_>>());
        self.scenarios.insert(mask, s.clone());
        s
    }

    fn mixture(&self, entry: &StaticEntry, scenarios: &[Scenario]) -> RoundEval {
        let plan = self.plan;
        let mut acc = RawEval::zero(self.n, self.learners.len(), plan.grid.len());
        for (assign, w) in scenarios {
            let factors: Vec<Factor> = self
                .learners
                .iter()
                .enumerate()
                .map(|(l, rt)| match assign.iter().find(|(al, _)| *al == l) {
                    Some(&(_, p)) => Factor::Point(p),
                    None => Factor::Dist(rt.dist()),
                })
                .collect();
            let raw = entry.eval(&plan.learner_seats, &factors);
            acc.add_scaled(&raw, *w);
        }
        acc.freeze()
    }

    fn evaluate(&mut self, key: &[u32], entry: &Rc<StaticEntry>) -> Rc<RoundEval> {
        let plan = self.plan;
        if self.learners.is_empty() {
            return Rc::new(RoundEval {
                price: entry.price0,
                utilities: entry.utilities0.clone(),
                vectors: vec![],
            });
        }
        if plan.coalition.is_none() && self.learners.len() == 1 {
            return Rc::new(entry.eval_single(plan.learner_seats[0], Factor::Dist(self.learners[0].dist())));
        }
        let mask = if plan.coalition.is_some() {
            self.active_mask()
        } else {
            0
        };
        let all_active = mask != 0 && self.learners.iter().all(|l| l.active_member().is_some());
        if all_active {
            let k = (key.to_vec(), mask);
            if let Some(r) = self.joint.get(&k) {
                return r.clone();
            }
            let sc = self.scenarios(mask);
            let r = Rc::new(self.mixture(entry, &sc));
            self.joint.insert(k, r.clone());
            return r;
        }
        let sc = if mask != 0 {
            self.scenarios(mask)
        } else {
            Rc::new(vec![(vec![], 1.0)])
        };
        Rc::new(self.mixture(entry, &sc))
    }

    fn run(mut self, seed: u64, replicate: u64, record: bool, record_dists: bool) -> ReplicateOutcome {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(replicate);
        let n = self.n;
        let mut price_sum = 0.0;
        let mut util_sums = vec![0.0; n];
        let mut welfare_residual: f64 = 0.0;
        let mut rounds = record.then(|| Vec::with_capacity(self.horizon as usize));
        let mut prices = vec![0u32; n];
        let mut key = self.static_key(0);
        let mut entry = self.entry(&key);
        let has_scripts = self
            .plan
            .static_seats
            .iter()
            .any(|&s| matches!(self.seats[s], SeatRt::Script(_)));
        for t in 0..self.horizon as usize {
            let eval = self.evaluate(&key, &entry);
            price_sum += eval.price;
            for (a, b) in util_sums.iter_mut().zip(&eval.utilities) {
                *a += b;
            }
            welfare_residual = welfare_residual.max((eval.utilities.iter().sum::<f64>() - eval.price).abs());

            // Realize this round's prices from this round's distributions.
            let mask = if self.plan.coalition.is_some() {
                self.active_mask()
            } else {
                0
            };
            if mask != 0 {
                let c = self.plan.coalition.as_ref().expect("coalition");
                let u: f64 = rng.random();
                let idx = c.cumulative.partition_point(|&x| x <= u).min(c.ordered.len() - 1);
                let tuple = &c.ordered[idx].0;
                for (pos, &l) in c.learners.iter().enumerate() {
                    if mask & (1 << pos) != 0 {
                        prices[self.plan.learner_seats[l]] = tuple[pos];
                    }
                }
            }
            for (i, seat) in self.seats.iter().enumerate() {
                prices[i] = match seat {
                    SeatRt::Auto { a, state } => a.output(*state).sample(&mut rng) as u32,
                    SeatRt::Script(f) => f.price_at(t),
                    SeatRt::Learner(l) => match self.learners[*l].active_member() {
                        Some(_) => prices[i],
                        None => self.learners[*l].dist().sample(&mut rng) as u32,
                    },
                };
            }
            if let Some(rs) = rounds.as_mut() {
                let dists = record_dists.then(|| {
                    self.seats
                        .iter()
                        .map(|s| match s {
                            SeatRt::Auto { a, state } => (**a.output(*state)).clone(),
                            SeatRt::Script(f) => {
                                PriceDist::point(self.plan.grid, f.price_at(t) as usize).expect("valid")
                            }
                            SeatRt::Learner(l) => self.learners[*l].dist().clone(),
                        })
                        .collect()
                });
                rs.push(TraceRound {
                    realized: prices.clone(),
                    price: eval.price,
                    payoffs: eval.utilities.clone(),
                    dists,
                });
            }

            for (l, v) in eval.vectors.iter().enumerate() {
                let obtained = eval.utilities[self.plan.learner_seats[l]];
                self.trackers[l].observe(v.values(), obtained);
                self.learners[l].update(v, obtained);
            }
            let mut changed = has_scripts;
            for seat in self.seats.iter_mut() {
                if let SeatRt::Auto { a, state } = seat {
                    let next = a.next(*state, &prices);
                    changed |= next != *state;
                    *state = next;
                }
            }
            if changed {
                key = self.static_key(t + 1);
                entry = self.entry(&key);
            }
        }
        let bound = hedge_regret_bound(self.horizon, self.plan.grid);
        ReplicateOutcome {
            price_sum,
            util_sums,
            learners: self
                .trackers
                .iter()
                .zip(&self.learners)
                .map(|(tr, l)| (tr.record(bound), l.breach()))
                .collect(),
            welfare_residual,
            rounds,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strategy::{make_simple_grim, make_zero_grim};
    use approx::assert_relative_eq;

    fn grid(k: u32) -> PriceGrid {
        PriceGrid::new(k).unwrap()
    }

    #[test]
    fn cap_values() {
        let g = grid(1_000_000);
        let cap = lemma2_cap(1.0, 0.0, g);
        assert!((cap.value - 2.0).abs() < 1e-5);
        assert_eq!(cap.reported, 1.0);
        assert!(cap.vacuous);
        let cap = lemma2_cap(0.0, 0.1, g);
        assert!(cap.vacuous && cap.reported == 1.0);
        let g = grid(100);
        let c = 0.05;
        let cap = lemma2_cap(c, 0.01, g);
        assert_relative_eq!(
            cap.value,
            c + 0.01 + (c + 0.01) * (1.0 + (1.0 / c).ln()),
            epsilon = 1e-15
        );
        assert!(!cap.vacuous);
    }

    #[test]
    fn grim_without_defection_prices_at_one() {
        for mode in [EvalMode::ExactAutomaton, EvalMode::monte_carlo(3, 1)] {
            let p = make_simple_grim(4, grid(10)).unwrap();
            let (_, m) = run(&GameConfig::new(p, 50, mode)).unwrap();
            assert_eq!(m.market_price, 1.0);
            for u in &m.utilities {
                assert_relative_eq!(*u, 0.25, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn open_seats_and_exact_with_learners_are_rejected() {
        let p = crate::strategy::make_defection_aware(0, 3, grid(10)).unwrap();
        assert!(matches!(
            run(&GameConfig::new(p, 10, EvalMode::default())),
            Err(Error::Config(_))
        ));
        let p = make_zero_grim(3, grid(10)).unwrap();
        let d = DefectionSpec::uniform(vec![0], StrategySpec::Learner(LearnerSpec::Hedge)).unwrap();
        let cfg = GameConfig::new(p.clone(), 10, EvalMode::ExactAutomaton).with_defection(d);
        assert!(matches!(run(&cfg), Err(Error::Config(_))));
        assert!(run(&GameConfig::new(p.clone(), 0, EvalMode::default())).is_err());
        assert!(run(&GameConfig::new(p, 5, EvalMode::monte_carlo(0, 1))).is_err());
    }

    #[test]
    fn zero_grim_collapses_under_hedge() {
        let p = make_zero_grim(3, grid(20)).unwrap();
        let d = DefectionSpec::uniform(vec![0], StrategySpec::Learner(LearnerSpec::Hedge)).unwrap();
        let out = defected_price(&p, &d, 2000, EvalMode::monte_carlo(4, 9)).unwrap();
        assert!(out.defected.market_price < 0.01, "{}", out.defected.market_price);
        assert_eq!(out.baseline.unwrap().market_price, 1.0);
    }

    #[test]
    fn trace_is_deterministic_and_consistent() {
        let p = make_simple_grim(3, grid(10)).unwrap();
        let d = DefectionSpec::uniform(vec![1], StrategySpec::Learner(LearnerSpec::Hedge)).unwrap();
        let cfg = GameConfig::new(p, 200, EvalMode::monte_carlo(3, 42))
            .with_defection(d)
            .with_trace(true);
        let (t1, m1) = run(&cfg).unwrap();
        let (t2, m2) = run(&cfg).unwrap();
        let (t1, t2) = (t1.unwrap(), t2.unwrap());
        assert_eq!(serde_json::to_string(&t1).unwrap(), serde_json::to_string(&t2).unwrap());
        assert_eq!(m1.replicate_prices, m2.replicate_prices);
        for r in &t1.rounds {
            let dists = r.dists.as_ref().unwrap();
            let refs: Vec<&PriceDist> = dists.iter().collect();
            assert_relative_eq!(r.price, crate::grid::expected_min(&refs).unwrap(), epsilon = 1e-12);
        }
        assert!(m1.welfare_residual < 1e-12);
    }

    #[test]
    fn correlated_coalition_reaches_lp_value() {
        let g = grid(20);
        let cce = Arc::new(crate::distributions::solve_extremal_cce(2, g, 1e-9).unwrap());
        let seat = StrategySpec::Learner(LearnerSpec::CceGuarded {
            cce: cce.clone(),
            rule: None,
        });
        let p = Profile::new("coalition", g, vec![seat.clone(), seat]).unwrap();
        let (_, m) = run(&GameConfig::new(p, 3000, EvalMode::monte_carlo(4, 2))).unwrap();
        assert_relative_eq!(m.market_price, cce.objective, epsilon = 1e-9);
        assert!(m.learners.iter().all(|l| l.breach_fraction == Some(0.0)));
        assert!(m.welfare_residual < 1e-12);
    }
}
