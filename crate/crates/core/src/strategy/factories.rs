use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Automaton, Event, PlayerSet, Profile, StrategySpec};
use crate::distributions::{gap_for, DerdParams, PerturbedErd};
use crate::error::{Error, Result};
use crate::grid::{PriceDist, PriceGrid};
use crate::learners::hedge_regret_bound;

const COOPERATE: usize = 0;
const PUNISH: usize = 1;

fn need_players(n: usize, min: usize, what: &str) -> Result<()> {
    if n < min {
        return Err(Error::Construction(format!("{what} needs N >= {min}, got {n}")));
    }
    if n > 64 {
        return Err(Error::Construction(format!("{what}: at most 64 players, got {n}")));
    }
    Ok(())
}

fn check_player(i: usize, n: usize, role: &str) -> Result<()> {
    if i >= n {
        return Err(Error::Construction(format!("{role} {i} outside 0..{n}")));
    }
    Ok(())
}

/// Prices 1 until someone in `watch` prices below 1, then `punish` forever.
pub fn make_grim(name: &str, grid: PriceGrid, watch: PlayerSet, punish: PriceDist) -> Automaton {
    Automaton::new(
        name,
        vec![
            ("COOPERATE".into(), PriceDist::point(grid, grid.top()).expect("top")),
            ("PUNISH".into(), punish),
        ],
        COOPERATE,
        vec![Event::anyone_below_one(watch, grid)],
        |s, bits| {
            if s == PUNISH || bits & 1 == 1 {
                PUNISH
            } else {
                COOPERATE
            }
        },
    )
    .expect("two-state grim is valid")
}

fn grim_profile(name: &str, n: usize, grid: PriceGrid, punish: usize) -> Result<Profile> {
    let punish = PriceDist::point(grid, punish)?;
    let a = std::sync::Arc::new(make_grim(name, grid, PlayerSet::all(n), punish));
    Profile::new(name, grid, vec![StrategySpec::Automaton(a); n])
}

/// Grim trigger with threat price `floor(1/N)`.
pub fn make_simple_grim(n: usize, grid: PriceGrid) -> Result<Profile> {
    need_players(n, 2, "simple_grim")?;
    grim_profile("simple_grim", n, grid, grid.floor_index(1.0 / n as f64)?)
}

/// Grim trigger with threat price 0.
pub fn make_zero_grim(n: usize, grid: PriceGrid) -> Result<Profile> {
    need_players(n, 2, "zero_grim")?;
    grim_profile("zero_grim", n, grid, 0)
}

/// `i_star` posts `1 - 1/K` forever; everyone else runs a zero-threat grim
/// trigger that ignores `i_star`.
pub fn make_pathological(i_star: usize, n: usize, grid: PriceGrid) -> Result<Profile> {
    need_players(n, 3, "pathological")?;
    check_player(i_star, n, "high-profit player")?;
    let fixed = StrategySpec::automaton(Automaton::stationary(
        "pathological_high",
        PriceDist::point(grid, grid.below_top())?,
    ));
    let others = std::sync::Arc::new(make_grim(
        "pathological_grim",
        grid,
        PlayerSet::all(n).without(i_star),
        PriceDist::point(grid, 0)?,
    ));
    let members = (0..n)
        .map(|j| {
            if j == i_star {
                fixed.clone()
            } else {
                StrategySpec::Automaton(others.clone())
            }
        })
        .collect();
    Profile::new("pathological", grid, members)
}

/// Resolved parameters of the cyclic construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CyclicParams {
    pub perturb: f64,
    pub gap: f64,
    /// Grid index of `c = floor(1/N - 2 gap)`.
    pub c_index: usize,
}

/// Default perturbation `sqrt(r(T) / (T (ln N + 1)))` with the Hedge bound
/// standing in for `r(T)`.
pub fn cyclic_parameters(n: usize, grid: PriceGrid, horizon: u64, perturb: Option<f64>) -> Result<CyclicParams> {
    let perturb = perturb.unwrap_or_else(|| {
        let r = hedge_regret_bound(horizon, grid);
        (r / (horizon as f64 * ((n as f64).ln() + 1.0))).sqrt()
    });
    if !(perturb > 0.0 && perturb < 1.0) {
        return Err(Error::Construction(format!("perturbation {perturb} outside (0, 1)")));
    }
    let gap = gap_for(perturb, grid);
    if gap <= 0.0 {
        return Err(Error::Construction(format!(
            "perturbation {perturb} leaves no best-reply gap on {grid}"
        )));
    }
    let target = 1.0 / n as f64 - 2.0 * gap;
    let c_index = if target > 0.0 { grid.floor_index(target)? } else { 0 };
    if c_index == 0 {
        return Err(Error::Construction(format!(
            "threat level floor(1/N - 2 gap) = floor({target:.4}) is 0 on {grid} for N={n}; \
             the grid is too coarse for N players (need K well above 2N) or the perturbation too large"
        )));
    }
    Ok(CyclicParams { perturb, gap, c_index })
}

/// Player `i` watches `pi(i) = i+1 mod N`: if `pi(i)` deviates first it
/// punishes with i.i.d. `P^high` draws forever; if someone else deviates
/// first it stays at 1 forever.
pub fn make_cyclic_erd(n: usize, grid: PriceGrid, horizon: u64, perturb: Option<f64>) -> Result<Profile> {
    need_players(n, 2, "cyclic_erd")?;
    let params = cyclic_parameters(n, grid, horizon, perturb)?;
    let high = PerturbedErd::new(DerdParams::new(grid, params.c_index)?, params.perturb)?.pmf();
    let top = PriceDist::point(grid, grid.top())?;
    let members = (0..n)
        .map(|i| {
            let target = (i + 1) % n;
            let a = Automaton::new(
                "cyclic_erd",
                vec![
                    ("COOPERATE".into(), top.clone()),
                    ("PUNISH".into(), high.clone()),
                    ("PASSIVE".into(), top.clone()),
                ],
                COOPERATE,
                vec![
                    Event::first_deviator_is(target, grid),
                    Event::anyone_below_one(PlayerSet::all(n).without(target), grid),
                ],
                |s, bits| match s {
                    COOPERATE if bits & 1 == 1 => PUNISH,
                    COOPERATE if bits & 2 == 2 => 2,
                    s => s,
                },
            )
            .expect("valid");
            StrategySpec::automaton(a)
        })
        .collect();
    Profile::new("cyclic_erd", grid, members)
}

/// Exactly one first deviator below 1: everybody prices 0 forever. Several
/// at once: everybody stays at 1 forever.
pub fn make_multidefector_base(n: usize, grid: PriceGrid) -> Result<Profile> {
    need_players(n, 2, "multidefector_base")?;
    let all = PlayerSet::all(n);
    let a = Automaton::new(
        "multidefector_base",
        vec![
            ("COOPERATE".into(), PriceDist::point(grid, grid.top())?),
            ("PUNISH".into(), PriceDist::point(grid, 0)?),
            ("TOLERATE".into(), PriceDist::point(grid, grid.top())?),
        ],
        COOPERATE,
        vec![
            Event::exactly_one_below_one(all, grid),
            Event::anyone_below_one(all, grid),
        ],
        |s, bits| match s {
            COOPERATE if bits & 1 == 1 => PUNISH,
            COOPERATE if bits & 2 == 2 => 2,
            s => s,
        },
    )?;
    let a = std::sync::Arc::new(a);
    Profile::new("multidefector_base", grid, vec![StrategySpec::Automaton(a); n])
}

/// Zero-threat grim among `J = [N] \ {i}`; seat `i` is left open for the
/// known defector.
pub fn make_defection_aware(i: usize, n: usize, grid: PriceGrid) -> Result<Profile> {
    need_players(n, 2, "defection_aware")?;
    check_player(i, n, "defector")?;
    let grim = std::sync::Arc::new(make_grim(
        "defection_aware",
        grid,
        PlayerSet::all(n).without(i),
        PriceDist::point(grid, 0)?,
    ));
    let members = (0..n)
        .map(|j| {
            if j == i {
                StrategySpec::Open
            } else {
                StrategySpec::Automaton(grim.clone())
            }
        })
        .collect();
    Profile::new("defection_aware", grid, members)
}

/// Followers `J \ {leader}` run zero-threat grim among themselves; the
/// leader posts i.i.d. `P^high_{c,K,perturb}` draws; seat `i` is open.
pub fn make_welfare_aware(i: usize, leader: usize, n: usize, grid: PriceGrid, c: f64, perturb: f64) -> Result<Profile> {
    need_players(n, 4, "welfare_aware")?;
    check_player(i, n, "defector")?;
    check_player(leader, n, "leader")?;
    if i == leader {
        return Err(Error::Construction("leader must differ from the defector".into()));
    }
    let high = PerturbedErd::new(DerdParams::floor_c(grid, c)?, perturb)?;
    let lead = StrategySpec::automaton(Automaton::stationary("welfare_leader", high.pmf()));
    let followers = PlayerSet::all(n).without(i).without(leader);
    let grim = std::sync::Arc::new(make_grim(
        "welfare_follower",
        grid,
        followers,
        PriceDist::point(grid, 0)?,
    ));
    let members = (0..n)
        .map(|j| match j {
            j if j == i => StrategySpec::Open,
            j if j == leader => lead.clone(),
            _ => StrategySpec::Automaton(grim.clone()),
        })
        .collect();
    Profile::new("welfare_aware", grid, members)
}

/// The `floor(N/2)` players with the lowest utilities; ties go to the lower
/// index.
pub fn median_profit_set(utilities: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..utilities.len()).collect();
    order.sort_by(|&a, &b| utilities[a].total_cmp(&utilities[b]).then(a.cmp(&b)));
    let mut out: Vec<usize> = order.into_iter().take(utilities.len() / 2).collect();
    out.sort_unstable();
    out
}

fn random_dist<R: Rng + ?Sized>(rng: &mut R, grid: PriceGrid) -> PriceDist {
    match rng.random_range(0..3) {
        0 => PriceDist::point(grid, rng.random_range(0..=grid.top())).expect("in range"),
        1 => {
            let m = rng.random_range(1..grid.top());
            let d = DerdParams::new(grid, m).expect("in range");
            crate::distributions::derd_pmf(d)
        }
        _ => {
            let support = rng.random_range(1..=4.min(grid.len()));
            let mut w = vec![0.0; grid.len()];
            for _ in 0..support {
                w[rng.random_range(0..=grid.top())] += rng.random::<f64>() + 0.05;
            }
            PriceDist::from_weights(grid, w).expect("positive weights")
        }
    }
}

/// A random threat automaton for seat `owner`: start at a (mostly high)
/// cooperative price, random trigger sets and thresholds, random punishment
/// distributions.
pub fn random_automaton<R: Rng + ?Sized>(rng: &mut R, n: usize, grid: PriceGrid, owner: usize) -> Automaton {
    let n_states = rng.random_range(2..=3);
    let mut states = Vec::with_capacity(n_states);
    let start_price = if rng.random_bool(0.7) {
        grid.top()
    } else {
        rng.random_range(grid.top() / 2..=grid.top())
    };
    states.push(("S0".to_string(), PriceDist::point(grid, start_price).expect("in range")));
    for s in 1..n_states {
        states.push((format!("S{s}"), random_dist(rng, grid)));
    }
    let n_events = rng.random_range(1..=2);
    let mut others: Vec<usize> = (0..n).filter(|&j| j != owner).collect();
    let events: Vec<Event> = (0..n_events)
        .map(|_| {
            others.shuffle(rng);
            let k = rng.random_range(1..=others.len());
            let players = PlayerSet::from_players(others[..k].iter().copied());
            let threshold = rng.random_range(1..=grid.top() as u32);
            if rng.random_bool(0.8) {
                Event::AnyoneBelow { players, threshold }
            } else {
                Event::ExactlyOneBelow { players, threshold }
            }
        })
        .collect();
    let width = 1usize << n_events;
    let table: Vec<usize> = (0..n_states * width)
        .map(|idx| {
            let (s, bits) = (idx / width, idx % width);
            if bits == 0 {
                s
            } else {
                rng.random_range(0..n_states)
            }
        })
        .collect();
    Automaton::new("random", states, 0, events, |s, bits| table[s * width + bits as usize]).expect("valid")
}

/// `n` random automata; the listed seats are left open.
pub fn random_profile<R: Rng + ?Sized>(rng: &mut R, n: usize, grid: PriceGrid, open: &[usize]) -> Result<Profile> {
    need_players(n, 2, "random")?;
    let members = (0..n)
        .map(|j| {
            if open.contains(&j) {
                StrategySpec::Open
            } else {
                StrategySpec::automaton(random_automaton(rng, n, grid, j))
            }
        })
        .collect();
    Profile::new("random", grid, members)
}

/// Profile constructions addressable from JSON, tagged by `construction`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "construction", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSpec {
    SimpleGrim {
        #[serde(rename = "N")]
        n: usize,
        #[serde(rename = "K")]
        k: u32,
    },
    ZeroGrim {
        #[serde(rename = "N")]
        n: usize,
        #[serde(rename = "K")]
        k: u32,
    },
    Pathological {
        #[serde(rename = "N")]
        n: usize,
        #[serde(rename = "K")]
        k: u32,
        #[serde(default)]
        i_star: usize,
    },
    CyclicErd {
        #[serde(rename = "N")]
        n: usize,
        #[serde(rename = "K")]
        k: u32,
        #[serde(rename = "T")]
        t: u64,
        #[serde(default)]
        perturb: Option<f64>,
    },
    MultidefectorBase {
        #[serde(rename = "N")]
        n: usize,
        #[serde(rename = "K")]
        k: u32,
    },
    DefectionAware {
        #[serde(rename = "N")]
        n: usize,
        #[serde(rename = "K")]
        k: u32,
        #[serde(default)]
        i: usize,
    },
    WelfareAware {
        #[serde(rename = "N")]
        n: usize,
        #[serde(rename = "K")]
        k: u32,
        #[serde(default)]
        i: usize,
        #[serde(default = "default_leader")]
        leader: usize,
        #[serde(default)]
        c: Option<f64>,
        #[serde(default)]
        perturb: Option<f64>,
    },
    Custom {
        #[serde(rename = "K")]
        k: u32,
        members: Vec<StrategySpec>,
    },
}

fn default_leader() -> usize {
    1
}

/// Leader defaults: `c = floor(1/e)`, perturbation 0.05.
pub const WELFARE_DEFAULT_PERTURB: f64 = 0.05;

impl ProfileSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ProfileSpec::SimpleGrim { .. } => "simple_grim",
            ProfileSpec::ZeroGrim { .. } => "zero_grim",
            ProfileSpec::Pathological { .. } => "pathological",
            ProfileSpec::CyclicErd { .. } => "cyclic_erd",
            ProfileSpec::MultidefectorBase { .. } => "multidefector_base",
            ProfileSpec::DefectionAware { .. } => "defection_aware",
            ProfileSpec::WelfareAware { .. } => "welfare_aware",
            ProfileSpec::Custom { .. } => "custom",
        }
    }

    pub fn build(&self) -> Result<Profile> {
        match *self {
            ProfileSpec::SimpleGrim { n, k } => make_simple_grim(n, PriceGrid::new(k)?),
            ProfileSpec::ZeroGrim { n, k } => make_zero_grim(n, PriceGrid::new(k)?),
            ProfileSpec::Pathological { n, k, i_star } => make_pathological(i_star, n, PriceGrid::new(k)?),
            ProfileSpec::CyclicErd { n, k, t, perturb } => make_cyclic_erd(n, PriceGrid::new(k)?, t, perturb),
            ProfileSpec::MultidefectorBase { n, k } => make_multidefector_base(n, PriceGrid::new(k)?),
            ProfileSpec::DefectionAware { n, k, i } => make_defection_aware(i, n, PriceGrid::new(k)?),
            ProfileSpec::WelfareAware {
                n,
                k,
                i,
                leader,
                c,
                perturb,
            } => make_welfare_aware(
                i,
                leader,
                n,
                PriceGrid::new(k)?,
                c.unwrap_or(1.0 / std::f64::consts::E),
                perturb.unwrap_or(WELFARE_DEFAULT_PERTURB),
            ),
            ProfileSpec::Custom { k, ref members } => Profile::new("custom", PriceGrid::new(k)?, members.clone()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(k: u32) -> PriceGrid {
        PriceGrid::new(k).unwrap()
    }

    fn punish_price(p: &Profile, seat: usize) -> Option<usize> {
        p.automaton(seat).unwrap().output(PUNISH).is_point()
    }

    #[test]
    fn grim_threat_prices() {
        assert_eq!(punish_price(&make_simple_grim(4, grid(10)).unwrap(), 0), Some(2));
        assert_eq!(punish_price(&make_simple_grim(2, grid(3)).unwrap(), 1), Some(1));
        assert_eq!(punish_price(&make_zero_grim(5, grid(10)).unwrap(), 3), Some(0));
        assert!(make_simple_grim(1, grid(10)).is_err());
    }

    #[test]
    fn grim_transitions() {
        let p = make_zero_grim(3, grid(10)).unwrap();
        let a = p.automaton(0).unwrap();
        assert_eq!(a.next(COOPERATE, &[10, 10, 10]), COOPERATE);
        assert_eq!(a.next(COOPERATE, &[10, 10, 4]), PUNISH);
        assert_eq!(a.next(PUNISH, &[10, 10, 10]), PUNISH);
    }

    #[test]
    fn pathological_shape() {
        assert!(matches!(make_pathological(0, 2, grid(10)), Err(Error::Construction(_))));
        let p = make_pathological(1, 4, grid(10)).unwrap();
        assert_eq!(p.automaton(1).unwrap().output(0).is_point(), Some(9));
        let other = p.automaton(0).unwrap();
        // i_star's undercut is ignored, anyone else's is not.
        assert_eq!(other.next(COOPERATE, &[10, 9, 10, 10]), COOPERATE);
        assert_eq!(other.next(COOPERATE, &[10, 9, 10, 3]), PUNISH);
    }

    #[test]
    fn cyclic_parameters_and_errors() {
        let g = grid(1000);
        let p = cyclic_parameters(8, g, 20_000, None).unwrap();
        assert!((p.perturb - 0.0653).abs() < 1e-3, "{p:?}");
        assert_eq!(p.c_index, 60);
        assert!(matches!(
            make_cyclic_erd(12, grid(10), 1000, None),
            Err(Error::Construction(_))
        ));
        assert!(make_cyclic_erd(2, grid(100), 1000, Some(0.001)).is_err());
    }

    #[test]
    fn cyclic_single_punisher() {
        let n = 5;
        let p = make_cyclic_erd(n, grid(200), 5000, None).unwrap();
        // player 2 deviates alone: only player 1 (who watches 2) punishes.
        let mut prices = vec![200u32; n];
        prices[2] = 150;
        let next: Vec<usize> = (0..n)
            .map(|i| p.automaton(i).unwrap().next(COOPERATE, &prices))
            .collect();
        assert_eq!(next.iter().filter(|&&s| s == PUNISH).count(), 1);
        assert_eq!(next[1], PUNISH);
        // simultaneous first deviation by 2 and 4: both watchers punish.
        prices[4] = 10;
        let next: Vec<usize> = (0..n)
            .map(|i| p.automaton(i).unwrap().next(COOPERATE, &prices))
            .collect();
        assert_eq!(next, vec![2, PUNISH, 2, PUNISH, 2]);
    }

    #[test]
    fn multidefector_transitions() {
        let p = make_multidefector_base(4, grid(10)).unwrap();
        let a = p.automaton(0).unwrap();
        assert_eq!(a.next(COOPERATE, &[10, 9, 10, 10]), PUNISH);
        assert_eq!(a.next(COOPERATE, &[10, 9, 8, 10]), 2);
        assert_eq!(a.output(2).is_point(), Some(10));
        assert_eq!(a.next(2, &[0, 0, 10, 10]), 2);
    }

    #[test]
    fn defection_and_welfare_aware() {
        let p = make_defection_aware(0, 3, grid(10)).unwrap();
        assert_eq!(p.open_seats(), vec![0]);
        let a = p.automaton(1).unwrap();
        assert_eq!(a.next(COOPERATE, &[0, 10, 10]), COOPERATE);
        assert_eq!(a.next(COOPERATE, &[10, 10, 9]), PUNISH);

        assert!(make_welfare_aware(0, 1, 3, grid(100), 0.3, 0.05).is_err());
        assert!(make_welfare_aware(0, 0, 5, grid(100), 0.3, 0.05).is_err());
        let w = make_welfare_aware(0, 1, 5, grid(100), 0.3, 0.05).unwrap();
        let f = w.automaton(2).unwrap();
        // followers ignore both the defector and the leader
        assert_eq!(f.next(COOPERATE, &[0, 5, 100, 100, 100]), COOPERATE);
        assert_eq!(f.next(COOPERATE, &[0, 5, 100, 99, 100]), PUNISH);
        assert!(w.automaton(1).unwrap().is_static());
    }

    #[test]
    fn median_profit_examples() {
        assert_eq!(median_profit_set(&[0.25; 4]), vec![0, 1]);
        assert_eq!(median_profit_set(&[0.1, 0.5, 0.2]), vec![0]);
        // pathological: the high-profit player is never in the set
        assert_eq!(median_profit_set(&[0.0, 0.9, 0.0, 0.0, 0.0]), vec![0, 2]);
    }

    #[test]
    fn random_profiles_validate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let n = rng.random_range(2..6);
            let p = random_profile(&mut rng, n, grid(20), &[0]).unwrap();
            assert_eq!(p.open_seats(), vec![0]);
        }
    }

    #[test]
    fn profile_spec_json() {
        let s: ProfileSpec = serde_json::from_str(r#"{"construction":"simple_grim","N":4,"K":10}"#).unwrap();
        assert_eq!(s.build().unwrap().n(), 4);
        let s: ProfileSpec = serde_json::from_str(r#"{"construction":"cyclic_erd","N":2,"K":100,"T":1000}"#).unwrap();
        assert_eq!(s.build().unwrap().construction, "cyclic_erd");
        assert!(serde_json::from_str::<ProfileSpec>(r#"{"construction":"simple_grim","N":4,"K":10,"x":1}"#).is_err());
        let w: ProfileSpec = serde_json::from_str(r#"{"construction":"welfare_aware","N":5,"K":100}"#).unwrap();
        assert_eq!(w.build().unwrap().open_seats(), vec![0]);
    }
}
