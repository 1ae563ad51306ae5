//! Strategies as maps from realized history to a price distribution:
//! finite threat automata, open-loop price scripts and learners.

mod factories;

pub use factories::{
    cyclic_parameters, make_cyclic_erd, make_defection_aware, make_grim, make_multidefector_base, make_pathological,
    make_simple_grim, make_welfare_aware, make_zero_grim, median_profit_set, random_automaton, random_profile,
    CyclicParams, ProfileSpec, WELFARE_DEFAULT_PERTURB,
};

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{PriceDist, PriceGrid};
use crate::learners::LearnerSpec;

/// Most events one automaton may watch; its transition table has
/// `states * 2^events` entries.
pub const MAX_EVENTS: usize = 8;

/// Set of player indices, `N <= 64`.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct PlayerSet(u64);

impl PlayerSet {
    pub const EMPTY: PlayerSet = PlayerSet(0);

    pub fn all(n: usize) -> Self {
        assert!(n <= 64, "at most 64 players");
        if n == 64 {
            PlayerSet(u64::MAX)
        } else {
            PlayerSet((1u64 << n) - 1)
        }
    }

    pub fn single(i: usize) -> Self {
        PlayerSet(1 << i)
    }

    pub fn from_players(players: impl IntoIterator<Item = usize>) -> Self {
        PlayerSet(players.into_iter().fold(0, |acc, i| acc | (1 << i)))
    }

    pub fn without(self, i: usize) -> Self {
        PlayerSet(self.0 & !(1 << i))
    }

    pub fn with(self, i: usize) -> Self {
        PlayerSet(self.0 | (1 << i))
    }

    pub fn union(self, other: PlayerSet) -> Self {
        PlayerSet(self.0 | other.0)
    }

    pub fn contains(self, i: usize) -> bool {
        i < 64 && self.0 & (1 << i) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn max_player(self) -> Option<usize> {
        (self.0 != 0).then(|| 63 - self.0.leading_zeros() as usize)
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..64).filter(move |&i| self.contains(i))
    }
}

impl fmt::Debug for PlayerSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl Serialize for PlayerSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for PlayerSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let players = Vec::<usize>::deserialize(d)?;
        if let Some(bad) = players.iter().find(|&&p| p >= 64) {
            return Err(serde::de::Error::custom(format!("player index {bad} >= 64")));
        }
        Ok(PlayerSet::from_players(players))
    }
}

/// Trigger predicate on one round's realized prices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    /// Some player in `players` priced strictly below `threshold`.
    AnyoneBelow { players: PlayerSet, threshold: u32 },
    /// Exactly one player in `players` priced strictly below `threshold`.
    ExactlyOneBelow { players: PlayerSet, threshold: u32 },
}

impl Event {
    pub fn anyone_below_one(players: PlayerSet, grid: PriceGrid) -> Self {
        Event::AnyoneBelow {
            players,
            threshold: grid.top() as u32,
        }
    }

    pub fn exactly_one_below_one(players: PlayerSet, grid: PriceGrid) -> Self {
        Event::ExactlyOneBelow {
            players,
            threshold: grid.top() as u32,
        }
    }

    /// Evaluated while everyone has priced at 1 so far, this is "`j` is the
    /// first deviator".
    pub fn first_deviator_is(j: usize, grid: PriceGrid) -> Self {
        Self::anyone_below_one(PlayerSet::single(j), grid)
    }

    pub fn own_price_below_one(owner: usize, grid: PriceGrid) -> Self {
        Self::anyone_below_one(PlayerSet::single(owner), grid)
    }

    pub fn players(&self) -> PlayerSet {
        match *self {
            Event::AnyoneBelow { players, .. } | Event::ExactlyOneBelow { players, .. } => players,
        }
    }

    pub fn threshold(&self) -> u32 {
        match *self {
            Event::AnyoneBelow { threshold, .. } | Event::ExactlyOneBelow { threshold, .. } => threshold,
        }
    }

    pub fn holds(&self, prices: &[u32]) -> bool {
        let below = self
            .players()
            .iter()
            .take_while(|&j| j < prices.len())
            .filter(|&j| prices[j] < self.threshold())
            .count();
        match self {
            Event::AnyoneBelow { .. } => below > 0,
            Event::ExactlyOneBelow { .. } => below == 1,
        }
    }
}

/// Finite-state threat automaton. Transitions read only realized prices
/// through the event predicates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AutomatonSpec", into = "AutomatonSpec")]
pub struct Automaton {
    name: String,
    state_names: Vec<String>,
    outputs: Vec<Arc<PriceDist>>,
    start: usize,
    events: Vec<Event>,
    /// `table[state << events.len() | outcome_bits]`
    table: Vec<u32>,
}

/// JSON form of an [`Automaton`]. `transitions[s][bits]` is the next state
/// from `s` when bit `e` of `bits` records whether event `e` held.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AutomatonSpec {
    pub name: String,
    pub start: usize,
    pub states: Vec<StateSpec>,
    pub events: Vec<Event>,
    pub transitions: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StateSpec {
    pub name: String,
    pub output: PriceDist,
}

impl TryFrom<AutomatonSpec> for Automaton {
    type Error = Error;

    fn try_from(spec: AutomatonSpec) -> Result<Self> {
        let n_states = spec.states.len();
        let width = 1usize << spec.events.len().min(MAX_EVENTS + 1);
        if spec.transitions.len() != n_states || spec.transitions.iter().any(|r| r.len() != width) {
            return Err(Error::Config(format!(
                "automaton `{}`: transition table must be {n_states} x {width}",
                spec.name
            )));
        }
        let table = spec.transitions.clone();
        Automaton::new(
            spec.name,
            spec.states.into_iter().map(|s| (s.name, s.output)).collect(),
            spec.start,
            spec.events,
            |s, bits| table[s][bits as usize],
        )
    }
}

impl From<Automaton> for AutomatonSpec {
    fn from(a: Automaton) -> Self {
        let width = 1usize << a.events.len();
        AutomatonSpec {
            transitions: (0..a.num_states())
                .map(|s| (0..width).map(|b| a.table[s * width + b] as usize).collect())
                .collect(),
            states: a
                .state_names
                .iter()
                .zip(&a.outputs)
                .map(|(n, o)| StateSpec {
                    name: n.clone(),
                    output: (**o).clone(),
                })
                .collect(),
            name: a.name,
            start: a.start,
            events: a.events,
        }
    }
}

impl Automaton {
    /// Builds the table from `transition(state, outcome_bits)`.
    pub fn new(
        name: impl Into<String>,
        states: Vec<(String, PriceDist)>,
        start: usize,
        events: Vec<Event>,
        transition: impl Fn(usize, u32) -> usize,
    ) -> Result<Self> {
        let name = name.into();
        if states.is_empty() {
            return Err(Error::Config(format!("automaton `{name}` has no states")));
        }
        if start >= states.len() {
            return Err(Error::Config(format!(
                "automaton `{name}`: start state {start} out of range"
            )));
        }
        if events.len() > MAX_EVENTS {
            return Err(Error::Config(format!(
                "automaton `{name}` watches {} events (max {MAX_EVENTS})",
                events.len()
            )));
        }
        let grid = states[0].1.grid();
        if states.iter().any(|(_, d)| d.grid() != grid) {
            return Err(Error::Config(format!("automaton `{name}` mixes price grids")));
        }
        if let Some(e) = events.iter().find(|e| e.threshold() as usize > grid.top()) {
            return Err(Error::Config(format!(
                "automaton `{name}`: threshold of {e:?} beyond {grid}"
            )));
        }
        let width = 1u32 << events.len();
        let mut table = Vec::with_capacity(states.len() * width as usize);
        for s in 0..states.len() {
            for bits in 0..width {
                let next = transition(s, bits);
                if next >= states.len() {
                    return Err(Error::Config(format!(
                        "automaton `{name}`: transition ({s}, {bits:#b}) -> {next} out of range"
                    )));
                }
                table.push(next as u32);
            }
        }
        let (state_names, outputs) = states.into_iter().map(|(n, d)| (n, Arc::new(d))).unzip();
        Ok(Self {
            name,
            state_names,
            outputs,
            start,
            events,
            table,
        })
    }

    /// One state, no events.
    pub fn stationary(name: impl Into<String>, output: PriceDist) -> Self {
        Self::new(name, vec![("PLAY".into(), output)], 0, vec![], |_, _| 0).expect("trivially valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn grid(&self) -> PriceGrid {
        self.outputs[0].grid()
    }

    pub fn num_states(&self) -> usize {
        self.outputs.len()
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn state_name(&self, s: usize) -> &str {
        &self.state_names[s]
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.state_names.iter().position(|n| n == name)
    }

    pub fn output(&self, s: usize) -> &Arc<PriceDist> {
        &self.outputs[s]
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn outcome_bits(&self, prices: &[u32]) -> u32 {
        self.events
            .iter()
            .enumerate()
            .fold(0, |acc, (e, ev)| acc | ((ev.holds(prices) as u32) << e))
    }

    pub fn next_from_bits(&self, s: usize, bits: u32) -> usize {
        self.table[(s << self.events.len()) | bits as usize] as usize
    }

    pub fn next(&self, s: usize, prices: &[u32]) -> usize {
        self.next_from_bits(s, self.outcome_bits(prices))
    }

    /// Players whose prices can move this automaton.
    pub fn watched(&self) -> PlayerSet {
        self.events
            .iter()
            .fold(PlayerSet::EMPTY, |acc, e| PlayerSet(acc.0 | e.players().0))
    }

    /// True when no event can move any state.
    pub fn is_static(&self) -> bool {
        let width = 1usize << self.events.len();
        (0..self.num_states()).all(|s| (0..width).all(|b| self.table[s * width + b] as usize == s))
    }
}

/// Open-loop script: `prices[t]` in round `t`, the last entry repeated.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedSequence {
    pub prices: Vec<u32>,
}

impl FixedSequence {
    pub fn new(grid: PriceGrid, prices: Vec<u32>) -> Result<Self> {
        if prices.is_empty() {
            return Err(Error::Usage("empty price sequence".into()));
        }
        for &p in &prices {
            grid.check_index(p as usize)?;
        }
        Ok(Self { prices })
    }

    pub fn constant(grid: PriceGrid, price: usize) -> Result<Self> {
        Self::new(grid, vec![price as u32])
    }

    /// `before` until round `at`, then `after` forever.
    pub fn switch_at(grid: PriceGrid, before: usize, at: usize, after: usize) -> Result<Self> {
        let mut prices = vec![before as u32; at];
        prices.push(after as u32);
        Self::new(grid, prices)
    }

    pub fn price_at(&self, round: usize) -> u32 {
        self.prices[round.min(self.prices.len() - 1)]
    }
}

/// One seat of a profile.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StrategySpec {
    Automaton(Arc<Automaton>),
    FixedSequence(FixedSequence),
    Learner(LearnerSpec),
    /// Seat that must be filled by a defection before the game can run.
    Open,
}

impl StrategySpec {
    pub fn automaton(a: Automaton) -> Self {
        StrategySpec::Automaton(Arc::new(a))
    }

    pub fn label(&self) -> String {
        match self {
            StrategySpec::Automaton(a) => a.name().to_string(),
            StrategySpec::FixedSequence(_) => "fixed_sequence".into(),
            StrategySpec::Learner(l) => l.name().into(),
            StrategySpec::Open => "open".into(),
        }
    }

    pub fn is_learner(&self) -> bool {
        matches!(self, StrategySpec::Learner(_))
    }
}

/// Players `defectors[k]` switch to `replacements[k]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DefectionSpec {
    pub defectors: Vec<usize>,
    pub replacements: Vec<StrategySpec>,
}

impl DefectionSpec {
    pub fn new(defectors: Vec<usize>, replacements: Vec<StrategySpec>) -> Result<Self> {
        if defectors.len() != replacements.len() {
            return Err(Error::Usage(format!(
                "{} defectors but {} replacement strategies",
                defectors.len(),
                replacements.len()
            )));
        }
        let mut sorted = defectors.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Usage(format!("repeated defector in {defectors:?}")));
        }
        Ok(Self {
            defectors,
            replacements,
        })
    }

    /// Every listed player switches to the same strategy.
    pub fn uniform(defectors: Vec<usize>, strategy: StrategySpec) -> Result<Self> {
        let r = vec![strategy; defectors.len()];
        Self::new(defectors, r)
    }

    pub fn players(&self) -> PlayerSet {
        PlayerSet::from_players(self.defectors.iter().copied())
    }
}

/// A full seat assignment for an `N`-player game.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Profile {
    pub construction: String,
    pub grid: PriceGrid,
    pub members: Vec<StrategySpec>,
}

impl Profile {
    pub fn new(construction: impl Into<String>, grid: PriceGrid, members: Vec<StrategySpec>) -> Result<Self> {
        let p = Self {
            construction: construction.into(),
            grid,
            members,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn n(&self) -> usize {
        self.members.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if !(2..=64).contains(&n) {
            return Err(Error::Config(format!("{n} players; need 2..=64")));
        }
        for (i, m) in self.members.iter().enumerate() {
            match m {
                StrategySpec::Automaton(a) => {
                    if a.grid() != self.grid {
                        return Err(Error::Config(format!(
                            "seat {i}: automaton on {} in a {} game",
                            a.grid(),
                            self.grid
                        )));
                    }
                    if let Some(j) = a.watched().max_player().filter(|&j| j >= n) {
                        return Err(Error::Config(format!("seat {i}: automaton watches player {j} of {n}")));
                    }
                }
                StrategySpec::FixedSequence(f) => {
                    for &p in &f.prices {
                        self.grid.check_index(p as usize)?;
                    }
                }
                StrategySpec::Learner(LearnerSpec::Guarded { base, .. }) if base.grid() != self.grid => {
                    return Err(Error::Config(format!("seat {i}: guarded base on {}", base.grid())));
                }
                StrategySpec::Learner(LearnerSpec::CceGuarded { cce, .. }) if cce.grid != self.grid => {
                    return Err(Error::Config(format!("seat {i}: CCE on {}", cce.grid)));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn with_defection(&self, defection: &DefectionSpec) -> Result<Profile> {
        let mut out = self.clone();
        for (&i, s) in defection.defectors.iter().zip(&defection.replacements) {
            if i >= self.n() {
                return Err(Error::Usage(format!("defector {i} outside 0..{}", self.n())));
            }
            out.members[i] = s.clone();
        }
        out.validate()?;
        Ok(out)
    }

    pub fn open_seats(&self) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| matches!(self.members[i], StrategySpec::Open))
            .collect()
    }

    /// Every seat is an automaton or a fixed script.
    pub fn is_closed_loop_free(&self) -> bool {
        self.members
            .iter()
            .all(|m| matches!(m, StrategySpec::Automaton(_) | StrategySpec::FixedSequence(_)))
    }

    pub fn automaton(&self, i: usize) -> Option<&Arc<Automaton>> {
        match &self.members[i] {
            StrategySpec::Automaton(a) => Some(a),
            _ => None,
        }
    }
}

/// Realized play of one round, optionally with the output distributions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RoundRecord {
    pub realized: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dists: Option<Vec<PriceDist>>,
}

/// Append-only record of past rounds.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct History {
    records: Vec<RoundRecord>,
}

impl History {
    pub fn push(&mut self, record: RoundRecord) {
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[RoundRecord] {
        &self.records
    }

    /// Replays `automaton` over the recorded prices and returns its state
    /// before each round, then the final state.
    pub fn replay(&self, automaton: &Automaton) -> Vec<usize> {
        let mut s = automaton.start();
        let mut out = vec![s];
        for r in &self.records {
            s = automaton.next(s, &r.realized);
            out.push(s);
        }
        out
    }
}
