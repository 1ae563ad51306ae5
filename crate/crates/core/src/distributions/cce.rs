use serde::{Deserialize, Serialize};

use super::lp::{LinearProgram, Relation};
use crate::error::{Error, Result};
use crate::grid::{bertrand_payoffs, expected_min, expected_utility_fixed_price, PriceDist, PriceGrid};

/// Largest number of symmetric joint atoms the dense solver will accept.
pub const MAX_CCE_COLUMNS: usize = 60_000;

/// How a coalition of defectors turns a [`CceSolution`] into play.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Each defector draws independently from the symmetric marginal.
    Iid,
    /// One joint atom per round, shared by the coalition.
    #[default]
    Correlated,
}

impl SamplingMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SamplingMode::Iid => "iid",
            SamplingMode::Correlated => "correlated",
        }
    }
}

impl std::str::FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(SamplingMode::Iid),
            "correlated" => Ok(SamplingMode::Correlated),
            other => Err(Error::Usage(format!("unknown sampling mode `{other}`"))),
        }
    }
}

/// A multiset of price indices (sorted ascending) with its probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CceAtom {
    pub prices: Vec<u32>,
    pub prob: f64,
}

/// Symmetric coarse correlated equilibrium maximizing the expected minimum
/// price, with support restricted to prices below 1.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CceSolution {
    pub m: usize,
    pub grid: PriceGrid,
    pub objective: f64,
    pub atoms: Vec<CceAtom>,
    pub marginal: PriceDist,
    pub sampling_mode: SamplingMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CceCertificate {
    /// `max_{i,p} E[u_i(p, a_{-i})] - E[u_i(a)]`; non-positive for an exact CCE.
    pub max_violation: f64,
    /// Largest difference between two players' marginals.
    pub asymmetry: f64,
    pub objective: f64,
}

fn multisets(m: usize, values: u32) -> Vec<Vec<u32>> {
    fn rec(m: usize, lo: u32, values: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() == m {
            out.push(cur.clone());
            return;
        }
        for v in lo..values {
            cur.push(v);
            rec(m, v, values, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(m, 0, values, &mut Vec::with_capacity(m), &mut out);
    out
}

fn binomial(n: usize, k: usize) -> Option<usize> {
    let mut acc: usize = 1;
    for i in 0..k {
        acc = acc.checked_mul(n - i)? / (i + 1);
    }
    Some(acc)
}

/// Deterministic payoff of price `p` against `others` with uniform ties.
fn payoff_against(grid: PriceGrid, p: u32, others: &[u32]) -> f64 {
    let lowest = others.iter().copied().min().unwrap_or(u32::MAX);
    if p < lowest {
        grid.price(p as usize)
    } else if p == lowest {
        let ties = others.iter().filter(|&&o| o == p).count();
        grid.price(p as usize) / (ties + 1) as f64
    } else {
        0.0
    }
}

/// Solves the symmetric CCE linear program for `m` players. `tolerance`
/// bounds the violation accepted by the post-solve certification.
pub fn solve_extremal_cce(m: usize, grid: PriceGrid, tolerance: f64) -> Result<CceSolution> {
    if m < 2 {
        return Err(Error::Usage(format!("CCE needs at least two players, got {m}")));
    }
    let values = grid.top() as u32;
    let columns = binomial(values as usize + m - 1, m).unwrap_or(usize::MAX);
    if columns > MAX_CCE_COLUMNS {
        return Err(Error::Config(format!(
            "symmetric CCE table for M={m}, {grid} has {columns} atoms (limit {MAX_CCE_COLUMNS})"
        )));
    }
    let atoms = multisets(m, values);
    let objective: Vec<f64> = atoms.iter().map(|a| grid.price(a[0] as usize)).collect();
    let mut lp = LinearProgram::maximize(objective);
    lp.add_row(vec![1.0; atoms.len()], Relation::Eq, 1.0)?;

    // Player 0's view of each atom: with probability c_v/M it holds v and
    // faces the remaining M-1 prices.
    let views: Vec<Vec<(f64, u32, Vec<u32>)>> = atoms
        .iter()
        .map(|a| {
            let mut out = Vec::new();
            let mut i = 0;
            while i < a.len() {
                let v = a[i];
                let count = a.iter().filter(|&&x| x == v).count();
                let mut others = a.clone();
                others.remove(i);
                out.push((count as f64 / m as f64, v, others));
                i += count;
            }
            out
        })
        .collect();
    for p in 0..=grid.top() as u32 {
        let coeffs = views
            .iter()
            .map(|view| {
                view.iter()
                    .map(|(w, v, others)| w * (payoff_against(grid, p, others) - payoff_against(grid, *v, others)))
                    .sum()
            })
            .collect();
        lp.add_row(coeffs, Relation::Le, 0.0)?;
    }
    let sol = lp.solve()?;
    log::debug!("CCE M={m} {grid}: {} pivots", sol.pivots);

    let total: f64 = sol.x.iter().filter(|&&x| x > 1e-13).sum();
    let atoms: Vec<CceAtom> = atoms
        .into_iter()
        .zip(&sol.x)
        .filter(|(_, &x)| x > 1e-13)
        .map(|(prices, &x)| CceAtom {
            prices,
            prob: x / total,
        })
        .collect();
    let marginal = marginal_of(grid, m, &atoms)?;
    let mut out = CceSolution {
        m,
        grid,
        objective: 0.0,
        atoms,
        marginal,
        sampling_mode: SamplingMode::default(),
    };
    out.objective = out
        .atoms
        .iter()
        .map(|a| a.prob * grid.price(a.prices[0] as usize))
        .sum();
    let cert = out.certify(tolerance)?;
    log::debug!("CCE certificate {cert:?}");
    Ok(out)
}

fn marginal_of(grid: PriceGrid, m: usize, atoms: &[CceAtom]) -> Result<PriceDist> {
    let mut mass = vec![0.0; grid.len()];
    for a in atoms {
        for &p in &a.prices {
            mass[p as usize] += a.prob / m as f64;
        }
    }
    PriceDist::from_weights(grid, mass)
}

fn permutations(prices: &[u32]) -> Vec<Vec<u32>> {
    let mut cur = prices.to_vec();
    cur.sort_unstable();
    let mut out = vec![cur.clone()];
    // Lexicographic next-permutation enumerates distinct orderings once.
    loop {
        let Some(i) = (0..cur.len().saturating_sub(1)).rev().find(|&i| cur[i] < cur[i + 1]) else {
            return out;
        };
        let j = (i + 1..cur.len()).rev().find(|&j| cur[j] > cur[i]).expect("exists");
        cur.swap(i, j);
        cur[i + 1..].reverse();
        out.push(cur.clone());
    }
}

impl CceSolution {
    pub fn with_mode(mut self, mode: SamplingMode) -> Self {
        self.sampling_mode = mode;
        self
    }

    /// Ordered joint outcomes: each multiset's probability split evenly over
    /// its distinct orderings.
    pub fn ordered_atoms(&self) -> Vec<(Vec<u32>, f64)> {
        let mut out = Vec::new();
        for a in &self.atoms {
            let perms = permutations(&a.prices);
            let w = a.prob / perms.len() as f64;
            out.extend(perms.into_iter().map(|p| (p, w)));
        }
        out
    }

    /// Re-evaluates every deviation constraint directly on the ordered joint
    /// table. Fails when any violation exceeds `tolerance`.
    pub fn certify(&self, tolerance: f64) -> Result<CceCertificate> {
        let ordered = self.ordered_atoms();
        let mass: f64 = ordered.iter().map(|(_, w)| w).sum();
        if (mass - 1.0).abs() > 1e-9 {
            return Err(Error::Solver(format!("joint mass {mass} != 1")));
        }
        let mut max_violation = f64::NEG_INFINITY;
        let mut marginals = vec![vec![0.0; self.grid.len()]; self.m];
        let mut objective = 0.0;
        for (tuple, w) in &ordered {
            objective += w * self.grid.price(*tuple.iter().min().expect("nonempty") as usize);
            for (i, &p) in tuple.iter().enumerate() {
                marginals[i][p as usize] += w;
            }
        }
        for i in 0..self.m {
            let eq: f64 = ordered.iter().map(|(t, w)| w * bertrand_payoffs(self.grid, t)[i]).sum();
            for p in self.grid.indices() {
                let dev: f64 = ordered
                    .iter()
                    .map(|(t, w)| {
                        let mut t = t.clone();
                        t[i] = p as u32;
                        w * bertrand_payoffs(self.grid, &t)[i]
                    })
                    .sum();
                max_violation = max_violation.max(dev - eq);
            }
        }
        let asymmetry = marginals
            .iter()
            .flat_map(|row| row.iter().zip(&marginals[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        let cert = CceCertificate {
            max_violation,
            asymmetry,
            objective,
        };
        if max_violation > tolerance || asymmetry > 1e-9 {
            return Err(Error::Solver(format!(
                "CCE certification failed: violation {max_violation:.3e}, asymmetry {asymmetry:.3e}"
            )));
        }
        Ok(cert)
    }

    /// Expected minimum when every player draws independently from the
    /// marginal.
    pub fn iid_price(&self) -> f64 {
        let dists: Vec<&PriceDist> = (0..self.m).map(|_| &self.marginal).collect();
        expected_min(&dists).expect("nonempty")
    }

    /// Per-round regret of a player in the i.i.d. product: best fixed price
    /// against `M-1` marginal copies minus the player's own expected payoff.
    pub fn iid_regret_per_round(&self) -> f64 {
        let others: Vec<&PriceDist> = (0..self.m - 1).map(|_| &self.marginal).collect();
        let u: Vec<f64> = self
            .grid
            .indices()
            .map(|p| expected_utility_fixed_price(p, &others).expect("same grid"))
            .collect();
        let own: f64 = self.marginal.masses().iter().zip(&u).map(|(m, v)| m * v).sum();
        u.iter().copied().fold(f64::NEG_INFINITY, f64::max) - own
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(k: u32) -> PriceGrid {
        PriceGrid::new(k).unwrap()
    }

    #[test]
    fn multiset_counts() {
        assert_eq!(multisets(2, 4).len(), 10);
        assert_eq!(multisets(3, 5).len(), 35);
        assert_eq!(binomial(52, 3), Some(22100));
    }

    #[test]
    fn distinct_permutations() {
        assert_eq!(permutations(&[1, 1, 2]).len(), 3);
        assert_eq!(permutations(&[0, 1, 2]).len(), 6);
        assert_eq!(permutations(&[3, 3]).len(), 1);
    }

    #[test]
    fn two_players_k10() {
        let s = solve_extremal_cce(2, grid(10), 1e-8).unwrap();
        let target = 2.0 / std::f64::consts::E;
        assert!(s.objective <= target + 1e-9);
        assert!(s.objective >= target - 5.0 / 10.0);
        assert_eq!(s.marginal.mass(10), 0.0);
    }

    #[test]
    fn rejects_oversized_tables_and_single_player() {
        assert!(matches!(solve_extremal_cce(4, grid(60), 1e-8), Err(Error::Config(_))));
        assert!(matches!(solve_extremal_cce(1, grid(10), 1e-8), Err(Error::Usage(_))));
    }

    #[test]
    fn certifier_rejects_non_equilibria() {
        let g = grid(10);
        // Both at 0.9 is not a CCE: undercutting to 0.8 earns 0.8 > 0.45.
        let atoms = vec![CceAtom {
            prices: vec![9, 9],
            prob: 1.0,
        }];
        let s = CceSolution {
            m: 2,
            grid: g,
            objective: 0.9,
            marginal: marginal_of(g, 2, &atoms).unwrap(),
            atoms,
            sampling_mode: SamplingMode::Iid,
        };
        assert!(s.certify(1e-8).is_err());
    }

    #[test]
    fn json_roundtrip() {
        let s = solve_extremal_cce(2, grid(6), 1e-8)
            .unwrap()
            .with_mode(SamplingMode::Iid);
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains("\"sampling_mode\":\"iid\""));
        let back: CceSolution = serde_json::from_str(&text).unwrap();
        assert_eq!(back.atoms, s.atoms);
    }
}
