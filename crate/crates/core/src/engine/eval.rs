//! Exact one-round expectations under independent play.
//!
//! For player `i` at price `p`, let `b_j = Pr[X_j > p]` and `a_j = Pr[X_j = p]`.
//! Uniform tie splitting gives
//! `u_i(p) = p * E[1/(1+ties)] = p * int_0^1 prod_{j != i} (b_j + a_j z) dz`.
//! Players whose distribution is fixed for a stretch of rounds (automata
//! in a given state, scripts) are folded into cached polynomial moments;
//! learners enter as extra linear factors each round.

use std::sync::{Arc, OnceLock};

use crate::grid::{PriceDist, PriceGrid};
use crate::learners::PayoffVector;

/// A learner's contribution to one round: its own distribution, or a
/// realized point for coalition members inside a joint scenario.
#[derive(Clone, Copy, Debug)]
pub enum Factor<'a> {
    Dist(&'a PriceDist),
    Point(u32),
}

impl Factor<'_> {
    /// `(Pr[X > p], Pr[X = p])`
    #[inline]
    fn split(&self, p: usize) -> (f64, f64) {
        match *self {
            Factor::Dist(d) => (d.above(p), d.mass(p)),
            Factor::Point(x) => {
                let x = x as usize;
                ((p < x) as u8 as f64, (p == x) as u8 as f64)
            }
        }
    }

    #[inline]
    fn at_least(&self, p: usize) -> f64 {
        match *self {
            Factor::Dist(d) => d.at_least(p),
            Factor::Point(x) => (p <= x as usize) as u8 as f64,
        }
    }
}

/// Expected outcome of one round.
#[derive(Clone, Debug)]
pub struct RoundEval {
    pub price: f64,
    /// Expected payoff per seat.
    pub utilities: Vec<f64>,
    /// Payoff of every fixed price, per learner (in learner order).
    pub vectors: Vec<Arc<PayoffVector>>,
}

/// Cached quantities for one assignment of fixed distributions to the
/// static seats.
#[derive(Debug)]
pub struct StaticEntry {
    grid: PriceGrid,
    /// Seat index of each static player.
    seats: Vec<usize>,
    n_seats: usize,
    /// Number of learner factors the moments are prepared for.
    degree: usize,
    /// `prod_static Pr[X_j >= g]`
    surv: Vec<f64>,
    /// `int z^k prod_static (b_j + a_j z) dz`, row-major `(K+1) x (degree+1)`.
    mom: Vec<f64>,
    /// Per static player: `(p, Pr[X_s = p], moments without s)` over its support.
    excl: Vec<Vec<(usize, f64, Vec<f64>)>>,
    /// Values when there are no learners.
    pub price0: f64,
    pub utilities0: Vec<f64>,
    single: OnceLock<Arc<PayoffVector>>,
}

fn mul_linear(poly: &mut Vec<f64>, b: f64, a: f64) {
    poly.push(0.0);
    for m in (0..poly.len()).rev() {
        let lower = if m > 0 { poly[m - 1] } else { 0.0 };
        poly[m] = poly[m] * b + lower * a;
    }
}

fn moments(poly: &[f64], degree: usize, out: &mut Vec<f64>) {
    out.clear();
    for k in 0..=degree {
        out.push(poly.iter().enumerate().map(|(m, c)| c / (m + k + 1) as f64).sum());
    }
}

impl StaticEntry {
    /// `seats[j]` holds `dists[j]`; `n_seats` is the total seat count and
    /// `degree` the number of learner factors that will be multiplied in.
    pub fn build(grid: PriceGrid, n_seats: usize, seats: Vec<usize>, dists: &[&PriceDist], degree: usize) -> Self {
        let len = grid.len();
        let mut surv = vec![1.0; len];
        for d in dists {
            for (g, s) in surv.iter_mut().enumerate() {
                *s *= d.at_least(g);
            }
        }
        let mut mom = Vec::with_capacity(len * (degree + 1));
        let mut poly = Vec::with_capacity(dists.len() + 1);
        let mut buf = Vec::new();
        for p in 0..len {
            poly.clear();
            poly.push(1.0);
            for d in dists {
                mul_linear(&mut poly, d.above(p), d.mass(p));
            }
            moments(&poly, degree, &mut buf);
            mom.extend_from_slice(&buf);
        }
        let excl: Vec<Vec<(usize, f64, Vec<f64>)>> = (0..dists.len())
            .map(|s| {
                dists[s]
                    .support()
                    .iter()
                    .map(|&p| {
                        let p = p as usize;
                        poly.clear();
                        poly.push(1.0);
                        for (j, d) in dists.iter().enumerate() {
                            if j != s {
                                mul_linear(&mut poly, d.above(p), d.mass(p));
                            }
                        }
                        let mut m = Vec::new();
                        moments(&poly, degree, &mut m);
                        (p, dists[s].mass(p), m)
                    })
                    .collect()
            })
            .collect();
        let price0 = surv[1..].iter().sum::<f64>() * grid.step();
        let mut utilities0 = vec![0.0; n_seats];
        for (s, rows) in excl.iter().enumerate() {
            utilities0[seats[s]] = rows.iter().map(|(p, w, m)| w * grid.price(*p) * m[0]).sum();
        }
        Self {
            grid,
            seats,
            n_seats,
            degree,
            surv,
            mom,
            excl,
            price0,
            utilities0,
            single: OnceLock::new(),
        }
    }

    #[inline]
    fn mom(&self, p: usize, k: usize) -> f64 {
        self.mom[p * (self.degree + 1) + k]
    }

    /// Payoff of each fixed price for a player facing exactly the static
    /// seats.
    pub fn single_vector(&self) -> &Arc<PayoffVector> {
        self.single.get_or_init(|| {
            let v = self
                .grid
                .indices()
                .map(|p| (self.grid.price(p) * self.mom(p, 0)).clamp(0.0, 1.0))
                .collect();
            Arc::new(PayoffVector::new_unchecked(v))
        })
    }

    /// Round outcome with one learner at `learner_seat` playing `f`, reusing
    /// the cached payoff vector.
    pub fn eval_single(&self, learner_seat: usize, f: Factor<'_>) -> RoundEval {
        let v = self.single_vector().clone();
        let mut price = 0.0;
        for g in 1..self.grid.len() {
            price += self.surv[g] * f.at_least(g);
        }
        price *= self.grid.step();
        let mut utilities = vec![0.0; self.n_seats];
        for (s, rows) in self.excl.iter().enumerate() {
            utilities[self.seats[s]] = rows
                .iter()
                .map(|(p, w, m)| {
                    let (b, a) = f.split(*p);
                    w * self.grid.price(*p) * (b * m[0] + a * m[1])
                })
                .sum();
        }
        utilities[learner_seat] = match f {
            Factor::Dist(d) => d
                .support()
                .iter()
                .map(|&p| d.mass(p as usize) * v.values()[p as usize])
                .sum(),
            Factor::Point(x) => v.values()[x as usize],
        };
        RoundEval {
            price,
            utilities,
            vectors: vec![v],
        }
    }

    /// General evaluation with learners at `learner_seats` playing `factors`.
    pub fn eval(&self, learner_seats: &[usize], factors: &[Factor<'_>]) -> RawEval {
        let d = factors.len();
        debug_assert!(d <= self.degree && learner_seats.len() == d);
        if d == 0 {
            return RawEval {
                price: self.price0,
                utilities: self.utilities0.clone(),
                vectors: vec![],
            };
        }
        let len = self.grid.len();
        let mut price = 0.0;
        for g in 1..len {
            let mut s = self.surv[g];
            for f in factors {
                s *= f.at_least(g);
            }
            price += s;
        }
        price *= self.grid.step();

        let mut vectors = vec![vec![0.0; len]; d];
        // Product of all learner factors at every price, for static seats.
        let mut all = vec![0.0; len * (d + 1)];
        let mut splits = vec![(0.0, 0.0); d];
        let mut poly = Vec::with_capacity(d + 1);
        for p in 0..len {
            for (slot, f) in splits.iter_mut().zip(factors) {
                *slot = f.split(p);
            }
            let price_p = self.grid.price(p);
            for (l, vec) in vectors.iter_mut().enumerate() {
                poly.clear();
                poly.push(1.0);
                for (m, &(b, a)) in splits.iter().enumerate() {
                    if m != l {
                        mul_linear(&mut poly, b, a);
                    }
                }
                let integral: f64 = poly.iter().enumerate().map(|(k, c)| c * self.mom(p, k)).sum();
                vec[p] = (price_p * integral).clamp(0.0, 1.0);
            }
            poly.clear();
            poly.push(1.0);
            for &(b, a) in &splits {
                mul_linear(&mut poly, b, a);
            }
            all[p * (d + 1)..(p + 1) * (d + 1)].copy_from_slice(&poly);
        }
        let mut utilities = vec![0.0; self.n_seats];
        for (s, rows) in self.excl.iter().enumerate() {
            utilities[self.seats[s]] = rows
                .iter()
                .map(|(p, w, m)| {
                    let r = &all[p * (d + 1)..(p + 1) * (d + 1)];
                    let integral: f64 = r.iter().zip(m).map(|(c, mk)| c * mk).sum();
                    w * self.grid.price(*p) * integral
                })
                .sum();
        }
        for (l, f) in factors.iter().enumerate() {
            let v = &vectors[l];
            utilities[learner_seats[l]] = match *f {
                Factor::Dist(dist) => dist
                    .support()
                    .iter()
                    .map(|&p| dist.mass(p as usize) * v[p as usize])
                    .sum(),
                Factor::Point(x) => v[x as usize],
            };
        }
        RawEval {
            price,
            utilities,
            vectors,
        }
    }
}

/// [`RoundEval`] before payoff vectors are frozen, so scenarios can be mixed.
#[derive(Clone, Debug)]
pub struct RawEval {
    pub price: f64,
    pub utilities: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

impl RawEval {
    pub fn zero(n_seats: usize, n_learners: usize, len: usize) -> Self {
        Self {
            price: 0.0,
            utilities: vec![0.0; n_seats],
            vectors: vec![vec![0.0; len]; n_learners],
        }
    }

    pub fn add_scaled(&mut self, other: &RawEval, w: f64) {
        self.price += w * other.price;
        for (a, b) in self.utilities.iter_mut().zip(&other.utilities) {
            *a += w * b;
        }
        for (va, vb) in self.vectors.iter_mut().zip(&other.vectors) {
            for (a, b) in va.iter_mut().zip(vb) {
                *a += w * b;
            }
        }
    }

    pub fn freeze(self) -> RoundEval {
        RoundEval {
            price: self.price,
            utilities: self.utilities,
            vectors: self
                .vectors
                .into_iter()
                .map(|v| {
                    Arc::new(PayoffVector::new_unchecked(
                        v.into_iter().map(|x| x.clamp(0.0, 1.0)).collect(),
                    ))
                })
                .collect(),
        }
    }
}
