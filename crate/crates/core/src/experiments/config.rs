//! JSON configuration for single runs, sweeps and audits.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{join_players, ResultRow};
use crate::auditor::{audit_adoption, audit_defection_aware, audit_exact, AuditReport, SampledAudit};
use crate::distributions::{solve_extremal_cce, SamplingMode};
use crate::engine::{run, EvalMode, GameConfig, RunMetrics, Trace, DEFAULT_REPLICATES};
use crate::error::{Error, Result};
use crate::grid::PriceGrid;
use crate::learners::{hedge_regret_bound, GuardRule, LearnerSpec};
use crate::strategy::{median_profit_set, DefectionSpec, FixedSequence, Profile, ProfileSpec, StrategySpec};

/// Deserializes `text`, reporting the path of the offending field.
pub fn parse_json<T: DeserializeOwned>(text: &str, what: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Usage(format!("{what}: field `{path}`: {}", e.inner()))
    })
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_json(&text, &path.display().to_string())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    MonteCarlo,
    ExactAutomaton,
}

impl ModeName {
    pub fn with(self, replicates: usize, seed: u64) -> EvalMode {
        match self {
            ModeName::MonteCarlo => EvalMode::monte_carlo(replicates, seed),
            ModeName::ExactAutomaton => EvalMode::ExactAutomaton,
        }
    }
}

impl std::str::FromStr for ModeName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "monte_carlo" => Ok(ModeName::MonteCarlo),
            "exact_automaton" => Ok(ModeName::ExactAutomaton),
            other => Err(Error::Usage(format!(
                "unknown mode `{other}` (expected monte_carlo or exact_automaton)"
            ))),
        }
    }
}

/// How defector seats are chosen.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum DefectorRule {
    /// The `M` lowest-utility players of the baseline.
    #[default]
    MedianProfit,
    /// Seats `index..index+M`.
    FixedIndex { index: usize },
    /// Exactly these seats.
    Players { players: Vec<usize> },
    /// One cell per `M`-subset of the seats.
    AllSubsetsOfSizeM,
}

/// What the defectors switch to.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LearnerKind {
    #[default]
    Hedge,
    /// Guarded play of the extremal `M`-player CCE on the same grid.
    CceGuarded {
        #[serde(default)]
        sampling_mode: SamplingMode,
        #[serde(default)]
        rule: Option<GuardRule>,
    },
    /// Any strategy, copied to every defector.
    Strategy { strategy: StrategySpec },
}

impl LearnerKind {
    pub fn name(&self) -> String {
        match self {
            LearnerKind::Hedge => "hedge".into(),
            LearnerKind::CceGuarded { .. } => "cce_guarded".into(),
            LearnerKind::Strategy { strategy } => strategy.label(),
        }
    }

    pub fn sampling_mode(&self) -> Option<SamplingMode> {
        match self {
            LearnerKind::CceGuarded { sampling_mode, .. } => Some(*sampling_mode),
            _ => None,
        }
    }

    /// One replacement per defector.
    pub fn replacements(&self, grid: PriceGrid, m: usize) -> Result<Vec<StrategySpec>> {
        let spec = match self {
            LearnerKind::Hedge => StrategySpec::Learner(LearnerSpec::Hedge),
            LearnerKind::CceGuarded { sampling_mode, rule } => {
                let cce = solve_extremal_cce(m, grid, 1e-9)?.with_mode(*sampling_mode);
                StrategySpec::Learner(LearnerSpec::CceGuarded {
                    cce: Arc::new(cce),
                    rule: *rule,
                })
            }
            LearnerKind::Strategy { strategy } => strategy.clone(),
        };
        Ok(vec![spec; m])
    }
}

/// Defector sets for `rule`. Profiles with open seats always defect exactly
/// there.
pub fn resolve_defectors(rule: &DefectorRule, profile: &Profile, m: usize) -> Result<Vec<Vec<usize>>> {
    let n = profile.n();
    let open = profile.open_seats();
    if !open.is_empty() {
        let agrees = match rule {
            DefectorRule::MedianProfit | DefectorRule::AllSubsetsOfSizeM => true,
            DefectorRule::FixedIndex { index } => open == (*index..index + m).collect::<Vec<_>>(),
            DefectorRule::Players { players } => *players == open,
        };
        if !agrees || open.len() != m {
            return Err(Error::Config(format!(
                "`{}` leaves seats {open:?} open; defectors must be exactly those (M = {m})",
                profile.construction
            )));
        }
        return Ok(vec![open]);
    }
    if m == 0 || m > n {
        return Err(Error::Config(format!("M = {m} defectors among N = {n}")));
    }
    match rule {
        DefectorRule::MedianProfit => {
            let mode = if profile.is_closed_loop_free() {
                EvalMode::ExactAutomaton
            } else {
                EvalMode::monte_carlo(DEFAULT_REPLICATES, 0)
            };
            // Baseline length does not change which players earn least in
            // the shipped stationary-on-path constructions.
            let (_, base) = run(&GameConfig::new(profile.clone(), 1, mode))?;
            let set = median_profit_set(&base.utilities);
            if m > set.len() {
                return Err(Error::Config(format!(
                    "median-profit set has {} players, M = {m}",
                    set.len()
                )));
            }
            Ok(vec![set[..m].to_vec()])
        }
        DefectorRule::FixedIndex { index } => {
            if index + m > n {
                return Err(Error::Config(format!("seats {index}..{} outside N = {n}", index + m)));
            }
            Ok(vec![(*index..index + m).collect()])
        }
        DefectorRule::Players { players } => {
            if players.len() != m {
                return Err(Error::Config(format!("{} players listed, M = {m}", players.len())));
            }
            Ok(vec![players.clone()])
        }
        DefectorRule::AllSubsetsOfSizeM => Ok(subsets(n, m)),
    }
}

fn subsets(n: usize, m: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(m);
    fn rec(start: usize, n: usize, m: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == m {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, m, cur, out);
            cur.pop();
        }
    }
    rec(0, n, m, &mut cur, &mut out);
    out
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefectionConfig {
    #[serde(default)]
    pub defectors: DefectorRule,
    #[serde(default)]
    pub learner: LearnerKind,
    #[serde(rename = "M", default = "one")]
    pub m: usize,
}

fn one() -> usize {
    1
}

fn default_replicates() -> usize {
    DEFAULT_REPLICATES
}

/// Input of `bertrand run`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub experiment_id: Option<String>,
    pub profile: ProfileSpec,
    #[serde(rename = "T")]
    pub t: u64,
    #[serde(default)]
    pub defection: Option<DefectionConfig>,
    #[serde(default)]
    pub mode: Option<ModeName>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub record_distributions: bool,
}

pub struct RunOutcome {
    pub trace: Option<Trace>,
    pub metrics: RunMetrics,
    pub row: ResultRow,
}

impl RunConfig {
    pub fn execute(&self) -> Result<RunOutcome> {
        let profile = self.profile.build()?;
        let mode = self
            .mode
            .unwrap_or(ModeName::MonteCarlo)
            .with(self.replicates, self.seed);
        let id = self.experiment_id.clone().unwrap_or_else(|| "run".into());
        let cell = Cell {
            experiment_id: id,
            profile,
            horizon: self.t,
            defection: self.defection.clone(),
            defectors: None,
            mode,
        };
        cell.execute(true, self.record_distributions)
    }
}

/// A grid of runs over `N x K x T x M` and defector sets.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub experiment_id: String,
    pub construction: String,
    #[serde(rename = "N", default)]
    pub n: Vec<usize>,
    #[serde(rename = "K", default)]
    pub k: Vec<u32>,
    #[serde(rename = "T", default)]
    pub t: Vec<u64>,
    #[serde(rename = "M", default = "default_m")]
    pub m: Vec<usize>,
    #[serde(default)]
    pub defectors: DefectorRule,
    #[serde(default)]
    pub learner: LearnerKind,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: Option<ModeName>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Extra construction fields (`i_star`, `perturb`, ...).
    #[serde(default)]
    pub params: serde_json::Map<String, serde_json::Value>,
}

fn default_m() -> Vec<usize> {
    vec![1]
}

impl SweepSpec {
    fn profile_for(&self, n: usize, k: u32, t: u64) -> Result<Profile> {
        let mut obj = self.params.clone();
        obj.insert("construction".into(), self.construction.clone().into());
        if self.construction != "custom" {
            obj.insert("N".into(), n.into());
        }
        obj.insert("K".into(), k.into());
        if self.construction == "cyclic_erd" {
            obj.insert("T".into(), t.into());
        }
        let spec: ProfileSpec = parse_json(&serde_json::Value::Object(obj).to_string(), "sweep cell")?;
        spec.build()
    }

    fn cells(&self) -> Result<Vec<Cell>> {
        let mut cells = Vec::new();
        for &n in &self.n {
            for &k in &self.k {
                for &t in &self.t {
                    let profile = self
                        .profile_for(n, k, t)
                        .map_err(|e| Error::Config(format!("cell N={n} K={k} T={t}: {e}")))?;
                    for &m in &self.m {
                        let sets = resolve_defectors(&self.defectors, &profile, m)
                            .map_err(|e| Error::Config(format!("cell N={n} K={k} T={t} M={m}: {e}")))?;
                        for set in sets {
                            cells.push(Cell {
                                experiment_id: self.experiment_id.clone(),
                                profile: profile.clone(),
                                horizon: t,
                                defection: Some(DefectionConfig {
                                    defectors: DefectorRule::Players { players: set.clone() },
                                    learner: self.learner.clone(),
                                    m,
                                }),
                                defectors: Some(set),
                                mode: self
                                    .mode
                                    .unwrap_or(ModeName::MonteCarlo)
                                    .with(self.replicates, self.seed),
                            });
                        }
                    }
                }
            }
        }
        Ok(cells)
    }
}

/// Runs every cell (in parallel) and returns rows in cell order. Cells are
/// validated before any of them runs.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<ResultRow>> {
    let cells = spec.cells()?;
    cells
        .par_iter()
        .map(|c| c.execute(false, false).map(|o| o.row))
        .collect()
}

struct Cell {
    experiment_id: String,
    profile: Profile,
    horizon: u64,
    defection: Option<DefectionConfig>,
    defectors: Option<Vec<usize>>,
    mode: EvalMode,
}

impl Cell {
    fn execute(&self, trace: bool, dists: bool) -> Result<RunOutcome> {
        let grid = self.profile.grid;
        let (defectors, learner, m, sampling) = match &self.defection {
            None => (vec![], "none".to_string(), 0, None),
            Some(d) => {
                let set = match &self.defectors {
                    Some(s) => s.clone(),
                    None => {
                        let sets = resolve_defectors(&d.defectors, &self.profile, d.m)?;
                        if sets.len() != 1 {
                            return Err(Error::Usage(
                                "this defector rule yields several sets; use `sweep`".into(),
                            ));
                        }
                        sets.into_iter().next().expect("one set")
                    }
                };
                (set, d.learner.name(), d.m, d.learner.sampling_mode())
            }
        };
        let mut cfg = GameConfig::new(self.profile.clone(), self.horizon, self.mode);
        if let Some(d) = &self.defection {
            cfg = cfg.with_defection(DefectionSpec::new(defectors.clone(), d.learner.replacements(grid, m)?)?);
        }
        if trace {
            cfg = cfg.with_trace(dists);
        }
        let (trace, metrics) = run(&cfg)?;
        let baseline = if self.defection.is_some() && self.profile.open_seats().is_empty() {
            let mode = if self.profile.is_closed_loop_free() {
                EvalMode::ExactAutomaton
            } else {
                self.mode
            };
            Some(
                run(&GameConfig::new(self.profile.clone(), self.horizon, mode))?
                    .1
                    .market_price,
            )
        } else {
            None
        };
        let row = make_row(
            &self.experiment_id,
            &self.profile,
            self.horizon,
            &defectors,
            &learner,
            sampling,
            &metrics,
            baseline,
        );
        Ok(RunOutcome { trace, metrics, row })
    }
}

/// CSV row for one run.
#[allow(clippy::too_many_arguments)]
pub(crate) fn make_row(
    experiment_id: &str,
    profile: &Profile,
    horizon: u64,
    defectors: &[usize],
    learner: &str,
    sampling_mode: Option<SamplingMode>,
    metrics: &RunMetrics,
    baseline_price: Option<f64>,
) -> ResultRow {
    let in_set: Vec<_> = metrics
        .learners
        .iter()
        .filter(|l| defectors.contains(&l.player))
        .collect();
    ResultRow {
        experiment_id: experiment_id.into(),
        construction: profile.construction.clone(),
        n: profile.n(),
        k: profile.grid.k(),
        t: horizon,
        m: defectors.len(),
        defectors: join_players(defectors),
        learner: learner.into(),
        mode: metrics.mode.clone(),
        sampling_mode: sampling_mode.map(|s| s.as_str().to_string()),
        replicates: metrics.replicates,
        seed: metrics.seed,
        market_price: metrics.market_price,
        stderr: metrics.stderr,
        baseline_price,
        defector_utility_mean: (!defectors.is_empty())
            .then(|| defectors.iter().map(|&d| metrics.utilities[d]).sum::<f64>() / defectors.len() as f64),
        regret_measured_max: in_set.iter().map(|l| l.max_regret).reduce(f64::max),
        regret_bound: (!in_set.is_empty()).then(|| hedge_regret_bound(horizon, profile.grid)),
        bound_id: None,
        bound_value: None,
        pass: None,
    }
}

/// Which audit to perform.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditKind {
    /// Exact DP for closed profiles, defection-aware for profiles with an
    /// open seat.
    #[default]
    Auto,
    Exact,
    Adoption,
    DefectionAware,
}

/// Input of `bertrand audit`. A bare profile object is also accepted.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    pub profile: ProfileSpec,
    #[serde(rename = "T", default = "default_audit_t")]
    pub t: u64,
    #[serde(default)]
    pub kind: AuditKind,
    /// Strategy of the open seat; defaults to a constant `1 - 1/K`.
    #[serde(default)]
    pub fill: Option<StrategySpec>,
    #[serde(default)]
    pub audited: Option<Vec<usize>>,
    #[serde(default = "default_audit_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_audit_t() -> u64 {
    1000
}

fn default_audit_replicates() -> usize {
    SampledAudit::default().replicates
}

impl AuditConfig {
    pub fn for_profile(profile: ProfileSpec, t: u64) -> Self {
        Self {
            profile,
            t,
            kind: AuditKind::Auto,
            fill: None,
            audited: None,
            replicates: default_audit_replicates(),
            seed: 0,
        }
    }

    /// Either `{"profile": ..}` or a bare profile.
    pub fn from_json(text: &str, what: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Usage(format!("{what}: {e}")))?;
        if value.get("profile").is_some() {
            parse_json(text, what)
        } else {
            Ok(Self::for_profile(parse_json(text, what)?, default_audit_t()))
        }
    }

    pub fn execute(&self) -> Result<AuditReport> {
        let profile = self.profile.build()?;
        let grid = profile.grid;
        let sampled = SampledAudit {
            replicates: self.replicates,
            seed: self.seed,
        };
        let open = profile.open_seats();
        let kind = match self.kind {
            AuditKind::Auto if open.is_empty() => AuditKind::Exact,
            AuditKind::Auto => AuditKind::DefectionAware,
            k => k,
        };
        match kind {
            AuditKind::Exact => audit_exact(&profile, self.t),
            AuditKind::Adoption => {
                audit_adoption(&profile, &LearnerSpec::Hedge, self.t, self.audited.as_deref(), sampled)
            }
            AuditKind::DefectionAware => {
                let [i] = open[..] else {
                    return Err(Error::Config(format!(
                        "defection-aware audit needs exactly one open seat, `{}` has {}",
                        profile.construction,
                        open.len()
                    )));
                };
                let fill = match &self.fill {
                    Some(s) => s.clone(),
                    None => StrategySpec::FixedSequence(FixedSequence::constant(grid, grid.below_top())?),
                };
                let audited = match (&self.audited, &self.profile) {
                    (Some(a), _) => a.clone(),
                    // The leader's reply is not part of the followers' equilibrium.
                    (None, ProfileSpec::WelfareAware { leader, .. }) => {
                        (0..profile.n()).filter(|&j| j != i && j != *leader).collect()
                    }
                    (None, _) => (0..profile.n()).filter(|&j| j != i).collect(),
                };
                audit_defection_aware(&profile, i, fill, self.t, Some(&audited), sampled)
            }
            AuditKind::Auto => unreachable!(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn malformed_config_names_the_field() {
        let err = parse_json::<RunConfig>(
            r#"{"profile": {"construction": "simple_grim", "N": "four", "K": 10}, "T": 5}"#,
            "cfg",
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("profile.N") || msg.contains("profile"), "{msg}");
        let err = parse_json::<RunConfig>(
            r#"{"profile": {"construction": "simple_grim", "N": 4, "K": 10}, "T": 5, "extra": 1}"#,
            "cfg",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn run_config_executes() {
        let cfg: RunConfig = parse_json(
            r#"{"profile": {"construction": "simple_grim", "N": 4, "K": 20}, "T": 300,
                "defection": {"defectors": {"rule": "median_profit"}, "learner": {"kind": "hedge"}},
                "replicates": 3, "seed": 5}"#,
            "cfg",
        )
        .unwrap();
        let out = cfg.execute().unwrap();
        assert_eq!(out.row.defectors, "0");
        assert_eq!(out.row.baseline_price, Some(1.0));
        assert_eq!(out.row.seed, Some(5));
        assert!(out.trace.is_some());
        assert!(out.row.regret_measured_max.is_some());
    }

    #[test]
    fn sweep_cells_and_empty_sweep() {
        let mut spec: SweepSpec = parse_json(
            r#"{"experiment_id": "s", "construction": "zero_grim", "N": [2, 3], "K": [10], "T": [50],
                "defectors": {"rule": "all_subsets_of_size_m"}, "replicates": 2}"#,
            "sweep",
        )
        .unwrap();
        let rows = run_sweep(&spec).unwrap();
        assert_eq!(rows.len(), 2 + 3);
        assert_eq!(rows[2].defectors, "0");
        assert_eq!(rows[4].defectors, "2");
        spec.n.clear();
        assert!(run_sweep(&spec).unwrap().is_empty());
    }

    #[test]
    fn invalid_cells_fail_before_running() {
        let spec: SweepSpec = parse_json(
            r#"{"experiment_id": "s", "construction": "welfare_aware", "N": [5, 3], "K": [10], "T": [50]}"#,
            "sweep",
        )
        .unwrap();
        assert!(matches!(run_sweep(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn subsets_count() {
        assert_eq!(subsets(5, 2).len(), 10);
        assert_eq!(subsets(3, 3), vec![vec![0, 1, 2]]);
    }

    #[test]
    fn bare_profile_audits() {
        let cfg = AuditConfig::from_json(r#"{"construction": "simple_grim", "N": 3, "K": 20}"#, "a").unwrap();
        let rep = cfg.execute().unwrap();
        assert!(rep.within(2.0 / 1000.0));
        let cfg = AuditConfig::from_json(
            r#"{"profile": {"construction": "defection_aware", "N": 3, "K": 20}, "T": 200}"#,
            "a",
        )
        .unwrap();
        let rep = cfg.execute().unwrap();
        assert_eq!(rep.players.len(), 2);
        assert!(rep.within(2.0 / 200.0), "{}", rep.eq_slack);
    }
}
