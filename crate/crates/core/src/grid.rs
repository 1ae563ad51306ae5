//! Price grid arithmetic and one-shot Bertrand payoffs.
//!
//! Prices live on the grid `{0, 1/K, ..., 1}` and are always carried as
//! integer indices `0..=K`; floats only appear when a payoff or an
//! expectation is computed.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute drift in total mass tolerated before a distribution is
/// renormalized.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Inputs further than this from unit mass are rejected outright.
const MASS_REJECT: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct PriceGrid {
    k: u32,
}

impl PriceGrid {
    pub fn new(k: u32) -> Result<Self> {
        if k < 2 {
            return Err(Error::Usage(format!("grid resolution K must be >= 2, got {k}")));
        }
        Ok(Self { k })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    /// Number of grid points, `K + 1`.
    pub fn len(&self) -> usize {
        self.k as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of price 1.
    pub fn top(&self) -> usize {
        self.k as usize
    }

    /// Index of `1 - 1/K`, the highest price that undercuts 1.
    pub fn below_top(&self) -> usize {
        self.k as usize - 1
    }

    pub fn step(&self) -> f64 {
        1.0 / self.k as f64
    }

    pub fn price(&self, index: usize) -> f64 {
        index as f64 / self.k as f64
    }

    pub fn indices(&self) -> std::ops::RangeInclusive<usize> {
        0..=self.k as usize
    }

    fn scaled(&self, x: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) || x.is_nan() {
            return Err(Error::Usage(format!("price {x} outside [0, 1]")));
        }
        let y = x * self.k as f64;
        let r = y.round();
        // Snap values that are a grid point up to floating error.
        Ok(if (y - r).abs() < 1e-9 { r } else { y })
    }

    /// Largest grid index whose price is `<= x`.
    pub fn floor_index(&self, x: f64) -> Result<usize> {
        Ok(self.scaled(x)?.floor() as usize)
    }

    /// Smallest grid index whose price is `>= x`.
    pub fn ceil_index(&self, x: f64) -> Result<usize> {
        Ok(self.scaled(x)?.ceil() as usize)
    }

    pub fn check_index(&self, index: usize) -> Result<()> {
        if index > self.top() {
            return Err(Error::Usage(format!("price index {index} outside grid 0..={}", self.k)));
        }
        Ok(())
    }
}

impl TryFrom<u32> for PriceGrid {
    type Error = Error;

    fn try_from(k: u32) -> Result<Self> {
        PriceGrid::new(k)
    }
}

impl From<PriceGrid> for u32 {
    fn from(g: PriceGrid) -> u32 {
        g.k
    }
}

impl fmt::Display for PriceGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "K={}", self.k)
    }
}

/// A probability distribution over the grid.
///
/// Alongside the mass vector the tail `Pr[X > p]` and the support are kept,
/// since every payoff computation reads them.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDist", into = "RawDist")]
pub struct PriceDist {
    grid: PriceGrid,
    mass: Vec<f64>,
    above: Vec<f64>,
    support: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct RawDist {
    k: u32,
    mass: Vec<f64>,
}

impl TryFrom<RawDist> for PriceDist {
    type Error = Error;

    fn try_from(raw: RawDist) -> Result<Self> {
        PriceDist::new(PriceGrid::new(raw.k)?, raw.mass)
    }
}

impl From<PriceDist> for RawDist {
    fn from(d: PriceDist) -> RawDist {
        RawDist {
            k: d.grid.k,
            mass: d.mass,
        }
    }
}

impl fmt::Debug for PriceDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut m = f.debug_map();
        for &i in &self.support {
            m.entry(&i, &self.mass[i as usize]);
        }
        m.finish()
    }
}

impl PriceDist {
    /// Validates and, if the total mass drifted by more than
    /// [`MASS_TOLERANCE`], renormalizes.
    pub fn new(grid: PriceGrid, mut mass: Vec<f64>) -> Result<Self> {
        if mass.len() != grid.len() {
            return Err(Error::Usage(format!(
                "distribution has {} masses, grid {grid} needs {}",
                mass.len(),
                grid.len()
            )));
        }
        if let Some((i, m)) = mass.iter().enumerate().find(|(_, m)| !(**m >= 0.0) || !m.is_finite()) {
            return Err(Error::Usage(format!("mass {m} at index {i} is not a probability")));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > MASS_REJECT {
            return Err(Error::Usage(format!("masses sum to {total}, expected 1")));
        }
        if (total - 1.0).abs() > MASS_TOLERANCE {
            mass.iter_mut().for_each(|m| *m /= total);
        }
        Ok(Self::from_normalized(grid, mass))
    }

    /// Normalizes arbitrary nonnegative weights.
    pub fn from_weights(grid: PriceGrid, mut weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Usage(format!("weights sum to {total}")));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Self::new(grid, weights)
    }

    fn from_normalized(grid: PriceGrid, mass: Vec<f64>) -> Self {
        let n = mass.len();
        let mut above = vec![0.0; n];
        for p in (0..n - 1).rev() {
            above[p] = (above[p + 1] + mass[p + 1]).min(1.0);
        }
        let support = (0..n as u32).filter(|&i| mass[i as usize] > 0.0).collect();
        Self {
            grid,
            mass,
            above,
            support,
        }
    }

    pub fn point(grid: PriceGrid, index: usize) -> Result<Self> {
        grid.check_index(index)?;
        let mut mass = vec![0.0; grid.len()];
        mass[index] = 1.0;
        Ok(Self::from_normalized(grid, mass))
    }

    pub fn uniform(grid: PriceGrid) -> Self {
        let n = grid.len();
        Self::from_normalized(grid, vec![1.0 / n as f64; n])
    }

    pub fn grid(&self) -> PriceGrid {
        self.grid
    }

    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    pub fn mass(&self, index: usize) -> f64 {
        self.mass[index]
    }

    /// `Pr[X > p]`.
    pub fn above(&self, index: usize) -> f64 {
        self.above[index]
    }

    /// `Pr[X >= p]`.
    pub fn at_least(&self, index: usize) -> f64 {
        (self.mass[index] + self.above[index]).min(1.0)
    }

    /// `Pr[X < p]`.
    pub fn below(&self, index: usize) -> f64 {
        (1.0 - self.at_least(index)).max(0.0)
    }

    pub fn support(&self) -> &[u32] {
        &self.support
    }

    pub fn is_point(&self) -> Option<usize> {
        match self.support.as_slice() {
            [i] => Some(*i as usize),
            _ => None,
        }
    }

    pub fn mean(&self) -> f64 {
        self.support
            .iter()
            .map(|&i| self.mass[i as usize] * self.grid.price(i as usize))
            .sum()
    }

    /// Inverse-CDF draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if let Some(i) = self.is_point() {
            return i;
        }
        let u: f64 = rng.random();
        let target = 1.0 - u;
        // `above` is nonincreasing; the first index whose tail drops below
        // 1-u is the draw.
        let i = self.above.partition_point(|&a| a >= target);
        i.min(self.grid.top())
    }

    /// `(1 - w) * self + w * other`.
    pub fn mix(&self, other: &PriceDist, w: f64) -> Result<Self> {
        same_grid(self.grid, other.grid)?;
        let mass = self
            .mass
            .iter()
            .zip(&other.mass)
            .map(|(a, b)| (1.0 - w) * a + w * b)
            .collect();
        Self::new(self.grid, mass)
    }
}

fn same_grid(a: PriceGrid, b: PriceGrid) -> Result<()> {
    if a != b {
        return Err(Error::Config(format!("distributions on different grids ({a} vs {b})")));
    }
    Ok(())
}

/// One round of realized prices, one grid index per player.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RealizedProfile(pub Vec<u32>);

impl RealizedProfile {
    pub fn new(grid: PriceGrid, prices: Vec<u32>) -> Result<Self> {
        for &p in &prices {
            grid.check_index(p as usize)?;
        }
        Ok(Self(prices))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn min_index(&self) -> Option<u32> {
        self.0.iter().copied().min()
    }
}

/// Bertrand payoffs for one realized profile: the lowest price wins and
/// ties at the minimum split it evenly.
pub fn bertrand_payoffs(grid: PriceGrid, prices: &[u32]) -> Vec<f64> {
    let Some(&low) = prices.iter().min() else {
        return Vec::new();
    };
    let winners = prices.iter().filter(|&&p| p == low).count();
    let share = grid.price(low as usize) / winners as f64;
    prices.iter().map(|&p| if p == low { share } else { 0.0 }).collect()
}

/// Expected payoff of posting `price` against independent opponents.
///
/// Runs a DP over opponents on the number tied at `price`, restricted to the
/// event that nobody is strictly lower; O(N^2).
pub fn expected_utility_fixed_price(price: usize, opponents: &[&PriceDist]) -> Result<f64> {
    let Some(first) = opponents.first() else {
        return Err(Error::Usage("no opponents".into()));
    };
    let grid = first.grid;
    grid.check_index(price)?;
    // ties[k] = Pr[exactly k opponents at `price`, the rest strictly above]
    let mut ties = vec![1.0];
    for d in opponents {
        same_grid(grid, d.grid)?;
        let (at, above) = (d.mass(price), d.above(price));
        let mut next = vec![0.0; ties.len() + 1];
        for (k, &t) in ties.iter().enumerate() {
            next[k] += t * above;
            next[k + 1] += t * at;
        }
        ties = next;
    }
    let share: f64 = ties.iter().enumerate().map(|(k, t)| t / (k + 1) as f64).sum();
    Ok(grid.price(price) * share)
}

/// `E[min_i X_i]` for independent prices, `(1/K) * sum_{g=1..K} prod_i Pr[X_i >= g/K]`.
pub fn expected_min(dists: &[&PriceDist]) -> Result<f64> {
    let Some(first) = dists.first() else {
        return Err(Error::Usage("expected_min of an empty list".into()));
    };
    let grid = first.grid;
    for d in dists {
        same_grid(grid, d.grid)?;
    }
    let total: f64 = (1..=grid.top())
        .map(|g| dists.iter().map(|d| d.at_least(g)).product::<f64>())
        .sum();
    Ok(total * grid.step())
}
