//! Equal-revenue price distributions on the grid and the extremal coarse
//! correlated equilibrium used by multi-defector experiments.

mod cce;
pub mod lp;

pub use cce::{solve_extremal_cce, CceCertificate, CceSolution, SamplingMode, MAX_CCE_COLUMNS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{expected_utility_fixed_price, PriceDist, PriceGrid};

/// `H_n = sum_{j=1..n} 1/j`; `H_0 = 0`.
pub fn harmonic(n: usize) -> f64 {
    (1..=n).map(|j| 1.0 / j as f64).sum()
}

/// Parameters of the discretized equal-revenue distribution `P_{c,K}` with
/// `c = m/K`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerdParams {
    pub grid: PriceGrid,
    pub m: usize,
}

impl DerdParams {
    pub fn new(grid: PriceGrid, m: usize) -> Result<Self> {
        if m == 0 || m >= grid.top() {
            return Err(Error::Construction(format!(
                "equal-revenue parameter m={m} must lie in 1..={} for {grid}",
                grid.top() - 1
            )));
        }
        Ok(Self { grid, m })
    }

    /// Rounds `c` down to the grid.
    pub fn floor_c(grid: PriceGrid, c: f64) -> Result<Self> {
        let c = c.clamp(0.0, 1.0);
        Self::new(grid, grid.floor_index(c)?)
    }

    pub fn c(&self) -> f64 {
        self.grid.price(self.m)
    }

    /// `c (H_K - H_m + 1)`.
    pub fn mean_closed_form(&self) -> f64 {
        let k = self.grid.top();
        self.c() * (harmonic(k) - harmonic(self.m) + 1.0)
    }
}

/// Mass `c` at 1 and `c (1/p_i - 1/p_{i+1})` on `m..K-1`.
pub fn derd_pmf(params: DerdParams) -> PriceDist {
    let grid = params.grid;
    let k = grid.top();
    let c = params.c();
    let mut mass = vec![0.0; grid.len()];
    mass[k] = c;
    for (i, slot) in mass.iter_mut().enumerate().take(k).skip(params.m) {
        // c (K/i - K/(i+1)) = c K / (i (i+1))
        *slot = c * k as f64 / (i as f64 * (i + 1) as f64);
    }
    PriceDist::new(grid, mass).expect("telescoping masses sum to one")
}

/// `P^high_{c,K,perturb}`: the DERD with extra mass `perturb` moved onto
/// price 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbedErd {
    pub base: DerdParams,
    pub perturb: f64,
}

impl PerturbedErd {
    pub fn new(base: DerdParams, perturb: f64) -> Result<Self> {
        if !(perturb > 0.0 && perturb < 1.0) {
            return Err(Error::Construction(format!("perturbation {perturb} outside (0, 1)")));
        }
        let p = Self { base, perturb };
        if p.gap() <= 0.0 {
            return Err(Error::Construction(format!(
                "perturbation {perturb} too small for {}: gap {} <= 0",
                base.grid,
                p.gap()
            )));
        }
        Ok(p)
    }

    /// The nominal gap `(perturb - (1 - perturb)/K) / 2`.
    pub fn gap(&self) -> f64 {
        gap_for(self.perturb, self.base.grid)
    }

    /// `1 - 1/K`.
    pub fn best_price(&self) -> usize {
        self.base.grid.below_top()
    }

    pub fn pmf(&self) -> PriceDist {
        let grid = self.base.grid;
        let base = derd_pmf(self.base);
        let mut mass: Vec<f64> = base.masses().iter().map(|m| m * (1.0 - self.perturb)).collect();
        mass[grid.top()] += self.perturb;
        PriceDist::new(grid, mass).expect("mixture of distributions")
    }

    /// One-shot utility of every fixed price against a single draw, uniform
    /// tie splitting.
    pub fn utilities(&self) -> Vec<f64> {
        let d = self.pmf();
        self.base
            .grid
            .indices()
            .map(|p| expected_utility_fixed_price(p, &[&d]).expect("same grid"))
            .collect()
    }

    /// Exact margin `u(1 - 1/K) - max_{p != 1 - 1/K} u(p)`. Positive means
    /// `1 - 1/K` is the strict best reply.
    pub fn exact_margin(&self) -> f64 {
        let u = self.utilities();
        let star = self.best_price();
        let rest = u
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != star)
            .map(|(_, v)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        u[star] - rest
    }
}

/// `(perturb - (1 - perturb)/K) / 2`.
pub fn gap_for(perturb: f64, grid: PriceGrid) -> f64 {
    (perturb - (1.0 - perturb) * grid.step()) / 2.0
}

/// A price distribution on `(0, 1]` given by its left CDF.
pub trait ContinuousPrice {
    /// `Pr[X < x]`.
    fn prob_below(&self, x: f64) -> f64;
}

/// Finite list of `(price, probability)` atoms.
#[derive(Clone, Debug)]
pub struct Atoms(pub Vec<(f64, f64)>);

impl ContinuousPrice for Atoms {
    fn prob_below(&self, x: f64) -> f64 {
        self.0.iter().filter(|(v, _)| *v < x).map(|(_, w)| w).sum()
    }
}

/// Continuous equal-revenue distribution on `[c, 1]` with its atom `c` at 1.
#[derive(Clone, Copy, Debug)]
pub struct ContinuousErd {
    pub c: f64,
}

impl ContinuousPrice for ContinuousErd {
    fn prob_below(&self, x: f64) -> f64 {
        if x <= self.c {
            0.0
        } else if x <= 1.0 {
            1.0 - self.c / x
        } else {
            1.0
        }
    }
}

/// Push-forward under `x -> floor(Kx)/K` with 1 sent to `1 - 1/K`; the
/// result never has mass at price 1.
pub fn discretize_distribution(dist: &dyn ContinuousPrice, grid: PriceGrid) -> Result<PriceDist> {
    let k = grid.top();
    let mut mass = vec![0.0; grid.len()];
    let mut prev = dist.prob_below(0.0);
    for (i, slot) in mass.iter_mut().enumerate().take(k - 1) {
        let next = dist.prob_below(grid.price(i + 1));
        *slot = (next - prev).max(0.0);
        prev = next;
    }
    mass[k - 1] = (1.0 - prev).max(0.0);
    PriceDist::new(grid, mass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::expected_min;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(k: u32) -> PriceGrid {
        PriceGrid::new(k).unwrap()
    }

    #[test]
    fn harmonic_values() {
        assert_eq!(harmonic(1), 1.0);
        assert_relative_eq!(harmonic(4), 25.0 / 12.0, epsilon = 1e-15);
        assert_eq!(harmonic(0), 0.0);
    }

    #[test]
    fn harmonic_log_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let m = rng.random_range(1..200usize);
            let n = rng.random_range(m..400usize);
            let d = harmonic(n) - harmonic(m);
            let lo = ((n + 1) as f64 / (m + 1) as f64).ln();
            let hi = (n as f64 / m as f64).ln();
            assert!(lo <= d + 1e-12 && d <= hi + 1e-12, "m={m} n={n}");
        }
    }

    #[test]
    fn half_on_two_point_grid() {
        let d = derd_pmf(DerdParams::new(grid(2), 1).unwrap());
        assert_eq!(d.masses(), &[0.0, 0.5, 0.5]);
        assert_relative_eq!(d.mean(), 0.75, epsilon = 1e-15);
        assert_relative_eq!(DerdParams::new(grid(2), 1).unwrap().mean_closed_form(), 0.75);
    }

    #[test]
    fn derd_masses_and_mean() {
        for k in [5u32, 17, 100, 1000] {
            for m in [1usize, 2, (k / 3) as usize, (k - 1) as usize] {
                let p = DerdParams::new(grid(k), m).unwrap();
                let d = derd_pmf(p);
                let total: f64 = d.masses().iter().sum();
                assert!((total - 1.0).abs() < 1e-12);
                assert!(d.masses()[..m].iter().all(|&x| x == 0.0));
                assert_relative_eq!(d.mean(), p.mean_closed_form(), epsilon = 1e-12);
                let c = p.c();
                let lo = c * (((k + 1) as f64 / (m + 1) as f64).ln() + 1.0);
                let hi = c * ((k as f64 / m as f64).ln() + 1.0);
                assert!(lo - 1e-12 <= d.mean() && d.mean() <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn equal_revenue_with_favorable_ties() {
        let g = grid(40);
        let p = DerdParams::new(g, 12).unwrap();
        let d = derd_pmf(p);
        for price in p.m..=g.top() {
            // ties resolved in our favour: p * Pr[X >= p]
            let rev = g.price(price) * d.at_least(price);
            assert_relative_eq!(rev, p.c(), epsilon = 1e-12);
        }
    }

    #[test]
    fn equal_revenue_within_one_step_under_uniform_ties() {
        let g = grid(40);
        let p = DerdParams::new(g, 12).unwrap();
        let d = derd_pmf(p);
        for price in p.m..g.top() {
            let u = expected_utility_fixed_price(price, &[&d]).unwrap();
            assert!((u - p.c()).abs() <= g.step() + 1e-12, "p={price} u={u}");
        }
    }

    #[test]
    fn invalid_parameters() {
        assert!(DerdParams::new(grid(10), 0).is_err());
        assert!(DerdParams::new(grid(10), 10).is_err());
        let base = DerdParams::new(grid(10), 3).unwrap();
        // (0.05 - 0.095) / 2 < 0
        assert!(matches!(PerturbedErd::new(base, 0.05), Err(Error::Construction(_))));
        assert!(PerturbedErd::new(base, 0.0).is_err());
    }

    #[test]
    fn zero_perturbation_is_the_base() {
        let base = DerdParams::new(grid(20), 5).unwrap();
        let high = PerturbedErd { base, perturb: 0.0 };
        assert_eq!(high.pmf().masses(), derd_pmf(base).masses());
    }

    #[test]
    fn best_reply_is_strict_but_margin_is_order_perturb_over_k() {
        for (k, m, eps) in [(100u32, 33usize, 0.17), (1000, 412, 0.088), (1000, 60, 0.065)] {
            let base = DerdParams::new(grid(k), m).unwrap();
            let high = PerturbedErd::new(base, eps).unwrap();
            let margin = high.exact_margin();
            assert!(margin > 0.0, "1 - 1/K must be the unique best price");
            // The runner-up is 1 - 2/K and loses roughly perturb/K, far less
            // than the nominal gap.
            assert!(margin < high.gap());
            assert!(margin > 0.5 * eps / k as f64);
        }
    }

    #[test]
    fn perturbed_mean_dominates() {
        let g = grid(500);
        let base = DerdParams::floor_c(g, 0.2).unwrap();
        let high = PerturbedErd::new(base, 0.1).unwrap();
        let c = base.c();
        assert!(high.pmf().mean() >= c * ((1.0 / c).ln() + 1.0) - g.step());
    }

    #[test]
    fn discretization_conventions() {
        let g = grid(10);
        let d = discretize_distribution(&Atoms(vec![(1.0, 1.0)]), g).unwrap();
        assert_eq!(d.is_point(), Some(9));
        let aligned = Atoms(vec![(0.3, 0.5), (0.7, 0.25), (0.0, 0.25)]);
        let d = discretize_distribution(&aligned, g).unwrap();
        assert_relative_eq!(d.mass(3), 0.5);
        assert_relative_eq!(d.mass(7), 0.25);
        assert_relative_eq!(d.mass(0), 0.25);
        let erd = discretize_distribution(&ContinuousErd { c: 0.3 }, g).unwrap();
        assert_eq!(erd.mass(10), 0.0);
    }

    #[test]
    fn discretization_moves_prices_by_at_most_one_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let k: u32 = rng.random_range(5..80);
            let g = grid(k);
            let n = rng.random_range(1..6);
            let mut w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.01).collect();
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= s);
            let atoms: Vec<(f64, f64)> = w.iter().map(|&p| (rng.random_range(0.01..=1.0f64), p)).collect();
            let d = discretize_distribution(&Atoms(atoms.clone()), g).unwrap();
            // E[min] of two i.i.d. copies shifts by at most 1/K.
            let mut cont = 0.0;
            for (a, pa) in &atoms {
                for (b, pb) in &atoms {
                    cont += pa * pb * a.min(*b);
                }
            }
            let disc = expected_min(&[&d, &d]).unwrap();
            assert!(disc <= cont + 1e-12 && cont - disc <= g.step() + 1e-12);
            // Revenue of the best fixed price against one copy moves by O(1/K).
            let best_disc = g
                .indices()
                .map(|p| expected_utility_fixed_price(p, &[&d]).unwrap())
                .fold(0.0, f64::max);
            let best_cont = (0..=4000)
                .map(|i| {
                    let x = i as f64 / 4000.0;
                    let above: f64 = atoms.iter().filter(|(v, _)| *v > x).map(|(_, w)| w).sum();
                    let at: f64 = atoms.iter().filter(|(v, _)| *v == x).map(|(_, w)| w).sum();
                    x * above + x * at / 2.0
                })
                .fold(0.0, f64::max);
            assert!((best_disc - best_cont).abs() <= 2.0 * g.step() + 1e-3, "k={k}");
        }
    }
}
