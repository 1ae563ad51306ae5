//! Bound-verification suites. Each runs its constructions at desk scale and
//! substitutes the theoretical Hedge regret bound for `r(T)`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::make_row;
use super::{BoundCheck, BoundId, ResultRow, Side};
use crate::distributions::{solve_extremal_cce, CceSolution, DerdParams, PerturbedErd, SamplingMode};
use crate::engine::{defected_price, lemma2_cap, EvalMode, RunMetrics};
use crate::error::{Error, Result};
use crate::grid::PriceGrid;
use crate::learners::{hedge_regret_bound, hedge_stationary, LearnerSpec, PayoffVector};
use crate::strategy::{
    cyclic_parameters, make_cyclic_erd, make_defection_aware, make_multidefector_base, make_pathological,
    make_simple_grim, make_welfare_aware, make_zero_grim, median_profit_set, random_profile, DefectionSpec, Profile,
    StrategySpec, WELFARE_DEFAULT_PERTURB,
};

/// Leader utility floor for the welfare-sharing construction.
pub const THM6_LEADER_FLOOR: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Prop1,
    Thm1,
    Thm3,
    Thm4,
    Prop5,
    Thm5,
    Lemma1,
    Lemma2,
    Prop2,
    Thm6,
}

impl Suite {
    pub const ALL: [Suite; 10] = [
        Suite::Prop1,
        Suite::Thm1,
        Suite::Thm3,
        Suite::Thm4,
        Suite::Prop5,
        Suite::Thm5,
        Suite::Lemma1,
        Suite::Lemma2,
        Suite::Prop2,
        Suite::Thm6,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Suite::Prop1 => "prop1",
            Suite::Thm1 => "thm1",
            Suite::Thm3 => "thm3",
            Suite::Thm4 => "thm4",
            Suite::Prop5 => "prop5",
            Suite::Thm5 => "thm5",
            Suite::Lemma1 => "lemma1",
            Suite::Lemma2 => "lemma2",
            Suite::Prop2 => "prop2",
            Suite::Thm6 => "thm6",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL.into_iter().find(|x| x.as_str() == s).ok_or_else(|| {
            let known: Vec<_> = Suite::ALL.iter().map(|x| x.as_str()).collect();
            Error::Usage(format!("unknown suite `{s}` (known: {})", known.join(", ")))
        })
    }
}

/// Scale of a suite run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteParams {
    #[serde(rename = "N")]
    pub n: Vec<usize>,
    #[serde(rename = "K")]
    pub k: u32,
    #[serde(rename = "T")]
    pub t: u64,
    #[serde(rename = "M")]
    pub m: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    /// Random profiles drawn by the property suites.
    pub profiles: usize,
    /// Sampling modes for the CCE suites.
    pub sampling_modes: Vec<SamplingMode>,
}

impl SuiteParams {
    pub fn defaults(suite: Suite) -> Self {
        let base = SuiteParams {
            n: vec![2, 4, 8],
            k: 1000,
            t: 20_000,
            m: vec![],
            replicates: 100,
            seed: 0,
            profiles: 0,
            sampling_modes: vec![],
        };
        match suite {
            Suite::Prop1 | Suite::Thm3 => base,
            Suite::Thm1 => SuiteParams {
                n: vec![3, 4, 8],
                k: 200,
                t: 10_000,
                replicates: 10,
                ..base
            },
            Suite::Lemma1 => SuiteParams { n: vec![4], ..base },
            Suite::Lemma2 => SuiteParams {
                n: vec![2, 3, 4, 5, 6],
                k: 100,
                t: 5000,
                replicates: 4,
                profiles: 200,
                ..base
            },
            Suite::Prop5 => SuiteParams {
                n: vec![],
                k: 50,
                m: vec![2, 3],
                sampling_modes: vec![SamplingMode::Correlated, SamplingMode::Iid],
                ..base
            },
            Suite::Thm4 => SuiteParams {
                n: vec![],
                k: 50,
                t: 5000,
                m: vec![2, 3],
                replicates: 10,
                profiles: 10,
                sampling_modes: vec![SamplingMode::Correlated, SamplingMode::Iid],
                ..base
            },
            Suite::Thm5 | Suite::Prop2 => SuiteParams {
                n: vec![4],
                k: 100,
                ..base
            },
            Suite::Thm6 => SuiteParams {
                n: vec![5],
                replicates: 20,
                ..base
            },
        }
    }

    fn grid(&self) -> Result<PriceGrid> {
        PriceGrid::new(self.k)
    }

    fn mode(&self) -> EvalMode {
        EvalMode::monte_carlo(self.replicates, self.seed)
    }

    fn r_over_t(&self) -> Result<f64> {
        Ok(hedge_regret_bound(self.t, self.grid()?) / self.t as f64)
    }
}

fn tolerance(m: &RunMetrics) -> f64 {
    3.0 * m.stderr + 0.01
}

fn ln(x: usize) -> f64 {
    (x as f64).ln()
}

/// `(ln N + 1) / N`.
fn single_defection_price(n: usize) -> f64 {
    (ln(n) + 1.0) / n as f64
}

/// `M / e^(M-1)`.
fn multi_defection_price(m: usize) -> f64 {
    m as f64 / (m as f64 - 1.0).exp()
}

struct Measured {
    metrics: RunMetrics,
    row: ResultRow,
}

fn measure(
    suite: Suite,
    profile: &Profile,
    defectors: Vec<usize>,
    replacement: StrategySpec,
    sampling: Option<SamplingMode>,
    p: &SuiteParams,
) -> Result<Measured> {
    let learner = replacement.label();
    let d = DefectionSpec::uniform(defectors.clone(), replacement)?;
    let out = defected_price(profile, &d, p.t, p.mode())?;
    let row = make_row(
        suite.as_str(),
        profile,
        p.t,
        &defectors,
        &learner,
        sampling,
        &out.defected,
        out.baseline.map(|b| b.market_price),
    );
    Ok(Measured {
        metrics: out.defected,
        row,
    })
}

fn hedge() -> StrategySpec {
    StrategySpec::Learner(LearnerSpec::Hedge)
}

/// The median-profit set of a short baseline run.
fn median_defectors(profile: &Profile, horizon: u64) -> Result<Vec<usize>> {
    let mode = if profile.is_closed_loop_free() {
        EvalMode::ExactAutomaton
    } else {
        EvalMode::monte_carlo(8, 0)
    };
    let (_, m) = crate::engine::run(&crate::engine::GameConfig::new(profile.clone(), horizon.min(50), mode))?;
    Ok(median_profit_set(&m.utilities))
}

/// The lowest-utility baseline player.
fn median_defector(profile: &Profile, horizon: u64) -> Result<usize> {
    Ok(median_defectors(profile, horizon)?[0])
}

/// Runs `suite` and returns its checks. Failed inequalities are data; only
/// construction or configuration problems are errors.
pub fn verify_suite(suite: Suite, p: &SuiteParams) -> Result<Vec<BoundCheck>> {
    if p.replicates == 0 || p.t == 0 {
        return Err(Error::Usage("replicates and T must be positive".into()));
    }
    match suite {
        Suite::Prop1 => prop1(p),
        Suite::Thm1 => thm1(p),
        Suite::Thm3 => thm3(p),
        Suite::Thm4 => thm4(p),
        Suite::Prop5 => prop5(p),
        Suite::Thm5 => high_price_lower(p, Suite::Thm5),
        Suite::Prop2 => high_price_lower(p, Suite::Prop2),
        Suite::Lemma1 => lemma1(p),
        Suite::Lemma2 => lemma2(p),
        Suite::Thm6 => thm6(p),
    }
}

fn prop1(p: &SuiteParams) -> Result<Vec<BoundCheck>> {
    let grid = p.grid()?;
    let r = p.r_over_t()?;
    p.n.iter()
        .map(|&n| {
            let profile = make_simple_grim(n, grid)?;
            let i = median_defector(&profile, p.t)?;
            let m = measure(Suite::Prop1, &profile, vec![i], hedge(), None, p)?;
            let bound = 1.0 / n as f64 - 2.0 * grid.step() - r;
            Ok(BoundCheck::new(
                format!("prop1 N={n}"),
                BoundId::Prop1Lower,
                m.metrics.market_price,
                Side::AtLeast { bound },
                tolerance(&m.metrics),
                m.row,
            )
            .with_welfare(m.metrics.welfare_residual))
        })
        .collect()
}

fn thm3(p: &SuiteParams) -> Result<Vec<BoundCheck>> {
    let grid = p.grid()?;
    let r_total = hedge_regret_bound(p.t, grid);
    p.n.iter()
        .map(|&n| {
            let profile = make_cyclic_erd(n, grid, p.t, None)?;
            let i = median_defector(&profile, p.t)?;
            let m = measure(Suite::Thm3, &profile, vec![i], hedge(), None, p)?;
            let target = single_defection_price(n);
            let lower = target - 3.0 * ln(n) / p.k as f64 - 2.0 * (r_total * (ln(n) + 1.0) / p.t as f64).sqrt();
            // The upper side allows 0.02 rather than 0.01.
            let upper = target + 0.01;
            Ok(BoundCheck::new(
                format!("thm3 N={n}"),
                BoundId::Thm3TwoSided,
                m.metrics.market_price,
                Side::Between { lower, upper },
                tolerance(&m.metrics),
                m.row,
            )
            .with_welfare(m.metrics.welfare_residual))
        })
        .collect()
}

fn thm1(p: &SuiteParams) -> Result<Vec<BoundCheck>> {
    let grid = p.grid()?;
    let r = p.r_over_t()?;
    let mut checks = Vec::new();
    for &n in &p.n {
        let mut profiles = vec![
            make_simple_grim(n, grid)?,
            make_zero_grim(n, grid)?,
            make_multidefector_base(n, grid)?,
            make_cyclic_erd(n, grid, p.t, None)?,
        ];
        if n >= 3 {
            profiles.push(make_pathological(0, n, grid)?);
        }
        for profile in profiles {
            for i in median_defectors(&profile, p.t)? {
                let m = measure(Suite::Thm1, &profile, vec![i], hedge(), None, p)?;
                let bound = 4.0 * single_defection_price(n) + (r + 1.0 / p.t as f64) * ln(n) + grid.step();
                checks.push(
                    BoundCheck::new(
                        format!("thm1 {} N={n} defector {i}", profile.construction),
                        BoundId::Thm1Upper,
                        m.metrics.market_price,
                        Side::AtMost { bound },
                        3.0 * m.metrics.stderr + 0.02,
                        m.row,
                    )
                    .with_welfare(m.metrics.welfare_residual),
                );
            }
        }
    }
    Ok(checks)
}

fn cce_seat(cce: &Arc<CceSolution>) -> StrategySpec {
    StrategySpec::Learner(LearnerSpec::CceGuarded {
        cce: cce.clone(),
        rule: None,
    })
}

fn solve_cce(m: usize, grid: PriceGrid, mode: SamplingMode) -> Result<Arc<CceSolution>> {
    Ok(Arc::new(solve_extremal_cce(m, grid, 1e-9)?.with_mode(mode)))
}

fn prop5(p: &SuiteParams) -> Result<Vec<BoundCheck>> {
    let grid = p.grid()?;
    let mut checks = Vec::new();
    for &m in &p.m {
        for &mode in &p.sampling_modes {
            let cce = solve_cce(m, grid, mode)?;
            let profile = make_multidefector_base(m + 2, grid)?;
            let meas = measure(Suite::Prop5, &profile, (0..m).collect(), cce_seat(&cce), Some(mode), p)?;
            let target = multi_defection_price(m);
            let tol = tolerance(&meas.metrics);
            checks.push(
                BoundCheck::new(
                    format!("prop5 M={m} {}", mode.as_str()),
                    BoundId::Prop5Lower,
                    meas.metrics.market_price,
                    Side::AtLeast {
                        bound: target - 5.0 * grid.step(),
                    },
                    tol,
                    meas.row.clone(),
                )
                .with_welfare(meas.metrics.welfare_residual),
            );
            checks.push(
                BoundCheck::new(
                    format!("thm4 M={m} {} base", mode.as_str()),
                    BoundId::Thm4Upper,
                    meas.metrics.market_price,
                    Side::AtMost { bound: 1.1 * target },
                    tol,
                    meas.row,
                )
                .with_welfare(meas.metrics.welfare_residual),
            );
        }
    }
    Ok(checks)
}

fn thm4(p: &SuiteParams) -> Result<Vec<BoundCheck>> {
    let grid = p.grid()?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut jobs = Vec::new();
    for &m in &p.m {
        for &mode in &p.sampling_modes {
            let cce = solve_cce(m, grid, mode)?;
            for j in 0..p.profiles {
                let open: Vec<usize> = (0..m).collect();
                let mut profile = random_profile(&mut rng, m + 2, grid, &open)?;
                profile.construction = format!("random_bystanders_{j}");
                jobs.push((m, mode, cce.clone(), profile));
            }
        }
    }
    jobs.par_iter()
        .map(|(m, mode, cce, profile)| {
            let meas = measure(Suite::Thm4, profile, (0..*m).collect(), cce_seat(cce), Some(*mode), p)?;
            Ok(BoundCheck::new(
                format!("thm4 M={m} {} {}", mode.as_str(), profile.construction),
                BoundId::Thm4Upper,
                meas.metrics.market_price,
                Side::AtMost {
                    bound: 1.1 * multi_defection_price(*m),
                },
                tolerance(&meas.metrics),
                meas.row,
            )
            .with_welfare(meas.metrics.welfare_residual))
        })
        .collect()
}

/// Defection-aware and pathological profiles keep the price near 1.
fn high_price_lower(p: &SuiteParams, suite: Suite) -> Result<Vec<BoundCheck>> {
    let grid = p.grid()?;
    let r = p.r_over_t()?;
    p.n.iter()
        .map(|&n| {
            let (profile, id) = match suite {
                Suite::Thm5 => (make_defection_aware(0, n, grid)?, BoundId::Thm5Lower),
                _ => (make_pathological(0, n, grid)?, BoundId::Prop2Lower),
            };
            let m = measure(suite, &profile, vec![0], hedge(), None, p)?;
            Ok(BoundCheck::new(
                format!("{suite} N={n}"),
                id,
                m.metrics.market_price,
                Side::AtLeast {
                    bound: 1.0 - grid.step() - r,
                },
                tolerance(&m.metrics),
                m.row,
            )
            .with_welfare(m.metrics.welfare_residual))
        })
        .collect()
}

fn lemma1(p: &SuiteParams) -> Result<Vec<BoundCheck>> {
    let grid = p.grid()?;
    let mut checks = Vec::new();
    for &n in &p.n {
        let params = cyclic_parameters(n, grid, p.t, None)?;
        let high = PerturbedErd::new(DerdParams::new(grid, params.c_index)?, params.perturb)?;
        let payoffs = PayoffVector::new(high.utilities())?;
        let run = hedge_stationary(&payoffs, grid, p.t);
        let regret = run.regret.measured_regret.max(0.0);
        let row = ResultRow {
            experiment_id: "lemma1".into(),
            construction: "perturbed_erd_opponent".into(),
            n,
            k: grid.k(),
            t: p.t,
            m: 1,
            defectors: "0".into(),
            learner: "hedge".into(),
            mode: "exact_expectation".into(),
            replicates: 1,
            market_price: f64::NAN,
            stderr: 0.0,
            regret_measured_max: Some(run.regret.measured_regret),
            regret_bound: Some(hedge_regret_bound(p.t, grid)),
            ..Default::default()
        };
        for (label, margin) in [("nominal gap", high.gap()), ("exact margin", high.exact_margin())] {
            checks.push(BoundCheck::new(
                format!("lemma1 N={n} {label}"),
                BoundId::Lemma1,
                run.bad_rounds,
                Side::AtMost { bound: regret / margin },
                1e-6,
                row.clone(),
            ));
        }
    }
    Ok(checks)
}

fn lemma2(p: &SuiteParams) -> Result<Vec<BoundCheck>> {
    let grid = p.grid()?;
    let r = p.r_over_t()?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let profiles = (0..p.profiles)
        .map(|j| {
            let n =
                *p.n.choose(&mut rng)
                    .ok_or_else(|| Error::Usage("lemma2 needs N values".into()))?;
            let mut profile = random_profile(&mut rng, n, grid, &[0])?;
            profile.construction = format!("random_{j}");
            Ok(profile)
        })
        .collect::<Result<Vec<_>>>()?;
    profiles
        .par_iter()
        .map(|profile| {
            let m = measure(Suite::Lemma2, profile, vec![0], hedge(), None, p)?;
            let cap = lemma2_cap(m.metrics.utilities[0], r, grid);
            Ok(BoundCheck::new(
                format!("lemma2 {}", profile.construction),
                BoundId::Lemma2,
                m.metrics.market_price,
                Side::AtMost { bound: cap.reported },
                tolerance(&m.metrics),
                m.row,
            )
            .with_welfare(m.metrics.welfare_residual))
        })
        .collect()
}

fn thm6(p: &SuiteParams) -> Result<Vec<BoundCheck>> {
    let grid = p.grid()?;
    let (i, leader) = (0, 1);
    let mut checks = Vec::new();
    for &n in &p.n {
        let profile = make_welfare_aware(i, leader, n, grid, 1.0 / std::f64::consts::E, WELFARE_DEFAULT_PERTURB)?;
        let m = measure(Suite::Thm6, &profile, vec![i], hedge(), None, p)?;
        let agents: f64 = (0..n).filter(|&j| j != i).map(|j| m.metrics.utilities[j]).sum();
        let lead = m.metrics.utilities[leader];
        checks.push(
            BoundCheck::new(
                format!("thm6 N={n} agents >= leader"),
                BoundId::Thm6Welfare,
                agents,
                Side::AtLeast { bound: lead },
                1e-9,
                m.row.clone(),
            )
            .with_welfare(m.metrics.welfare_residual),
        );
        checks.push(
            BoundCheck::new(
                format!("thm6 N={n} leader floor"),
                BoundId::Thm6Welfare,
                lead,
                Side::AtLeast {
                    bound: THM6_LEADER_FLOOR,
                },
                3.0 * m.metrics.utility_stderr[leader],
                m.row,
            )
            .with_welfare(m.metrics.welfare_residual),
        );
    }
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(suite: Suite) -> SuiteParams {
        let mut p = SuiteParams::defaults(suite);
        p.k = p.k.min(50);
        p.t = 2000;
        p.replicates = 4;
        p.profiles = p.profiles.min(3);
        p
    }

    #[test]
    fn suite_names_roundtrip() {
        for s in Suite::ALL {
            assert_eq!(s.as_str().parse::<Suite>().unwrap(), s);
        }
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn small_single_defector_suite_passes() {
        let mut p = small(Suite::Prop1);
        p.n = vec![2, 4];
        let checks = verify_suite(Suite::Prop1, &p).unwrap();
        assert_eq!(checks.len(), 2);
        assert!(
            checks.iter().all(|c| c.pass),
            "{:?}",
            checks.iter().map(|c| c.summary()).collect::<Vec<_>>()
        );
        assert_eq!(checks[0].row.baseline_price, Some(1.0));
    }

    #[test]
    fn small_defection_aware_suite_has_blank_baseline() {
        let checks = verify_suite(Suite::Thm5, &small(Suite::Thm5)).unwrap();
        assert!(checks[0].row.baseline_price.is_none());
        assert!(checks[0].pass, "{}", checks[0].summary());
    }

    #[test]
    fn bad_round_bound_holds_with_exact_margin() {
        let mut p = small(Suite::Lemma1);
        p.k = 200;
        let checks = verify_suite(Suite::Lemma1, &p).unwrap();
        assert!(checks.iter().find(|c| c.name.contains("exact")).unwrap().pass);
    }

    #[test]
    fn suites_are_deterministic() {
        let p = small(Suite::Lemma2);
        let a = verify_suite(Suite::Lemma2, &p).unwrap();
        let b = verify_suite(Suite::Lemma2, &p).unwrap();
        assert_eq!(a.len(), 3);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.row, y.row);
        }
    }
}
