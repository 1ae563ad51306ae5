//! Dense two-phase primal simplex for small linear programs.
//!
//! Maximizes `c.x` subject to linear rows and `x >= 0`. Dantzig pricing,
//! switching to Bland's rule during long degenerate stretches.

use crate::error::{Error, Result};

const PIVOT_EPS: f64 = 1e-11;
const OPT_EPS: f64 = 1e-10;
const DEGENERATE_SWITCH: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Clone, Debug)]
pub struct Row {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Clone, Debug, Default)]
pub struct LinearProgram {
    objective: Vec<f64>,
    rows: Vec<Row>,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

impl LinearProgram {
    /// A maximization problem over `objective.len()` nonnegative variables.
    pub fn maximize(objective: Vec<f64>) -> Self {
        Self {
            objective,
            rows: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_row(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) -> Result<()> {
        if coeffs.len() != self.num_vars() {
            return Err(Error::Usage(format!(
                "row has {} coefficients for {} variables",
                coeffs.len(),
                self.num_vars()
            )));
        }
        self.rows.push(Row { coeffs, relation, rhs });
        Ok(())
    }

    pub fn solve(&self) -> Result<LpSolution> {
        Tableau::build(self).run(&self.objective)
    }
}

struct Tableau {
    m: usize,
    n: usize,
    /// Structural + slack/surplus columns; artificials follow.
    n_real: usize,
    stride: usize,
    a: Vec<f64>,
    basis: Vec<usize>,
    obj: Vec<f64>,
    pivots: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let m = lp.rows.len();
        let nv = lp.num_vars();
        let n_slack = lp.rows.iter().filter(|r| r.relation != Relation::Eq).count();
        // Rows with rhs < 0 are negated first, which flips Le and Ge.
        let needs_art: Vec<bool> = lp
            .rows
            .iter()
            .map(|r| {
                let rel = if r.rhs < 0.0 { flip(r.relation) } else { r.relation };
                rel != Relation::Le
            })
            .collect();
        let n_art = needs_art.iter().filter(|&&b| b).count();
        let n_real = nv + n_slack;
        let n = n_real + n_art;
        let stride = n + 1;
        let mut a = vec![0.0; m * stride];
        let mut basis = vec![0; m];
        let mut slack = nv;
        let mut art = n_real;
        for (i, row) in lp.rows.iter().enumerate() {
            let sign = if row.rhs < 0.0 { -1.0 } else { 1.0 };
            let rel = if row.rhs < 0.0 {
                flip(row.relation)
            } else {
                row.relation
            };
            let r = &mut a[i * stride..(i + 1) * stride];
            for (dst, &v) in r.iter_mut().zip(&row.coeffs) {
                *dst = sign * v;
            }
            r[n] = sign * row.rhs;
            match rel {
                Relation::Le => {
                    r[slack] = 1.0;
                    basis[i] = slack;
                    slack += 1;
                }
                Relation::Ge => {
                    r[slack] = -1.0;
                    slack += 1;
                    r[art] = 1.0;
                    basis[i] = art;
                    art += 1;
                }
                Relation::Eq => {
                    r[art] = 1.0;
                    basis[i] = art;
                    art += 1;
                }
            }
        }
        Self {
            m,
            n,
            n_real,
            stride,
            a,
            basis,
            obj: vec![0.0; stride],
            pivots: 0,
        }
    }

    fn run(mut self, objective: &[f64]) -> Result<LpSolution> {
        if self.n > self.n_real {
            let mut cost = vec![0.0; self.n];
            for c in cost.iter_mut().skip(self.n_real) {
                *c = -1.0;
            }
            self.price_out(&cost);
            self.iterate(self.n)?;
            let infeasibility = -self.obj[self.n];
            if infeasibility > 1e-8 {
                return Err(Error::Solver(format!(
                    "infeasible program (phase one residual {infeasibility:.3e})"
                )));
            }
            self.evict_artificials();
        }
        let mut cost = vec![0.0; self.n];
        cost[..objective.len()].copy_from_slice(objective);
        self.price_out(&cost);
        self.iterate(self.n_real)?;

        let mut x = vec![0.0; objective.len()];
        for (i, &b) in self.basis.iter().enumerate() {
            if b < x.len() {
                x[b] = self.a[i * self.stride + self.n].max(0.0);
            }
        }
        let value = x.iter().zip(objective).map(|(a, b)| a * b).sum();
        Ok(LpSolution {
            x,
            objective: value,
            pivots: self.pivots,
        })
    }

    /// Reduced-cost row `obj_j = c_B B^{-1} A_j - c_j`, with the current
    /// objective value in the last slot.
    fn price_out(&mut self, cost: &[f64]) {
        self.obj.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..self.n {
            self.obj[j] = -cost[j];
        }
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.a[i * self.stride..(i + 1) * self.stride];
                for (o, &v) in self.obj.iter_mut().zip(row) {
                    *o += cb * v;
                }
            }
        }
    }

    fn iterate(&mut self, allowed: usize) -> Result<()> {
        let limit = 200 * (self.m + allowed) + 10_000;
        let mut degenerate_run = 0usize;
        for _ in 0..limit {
            let bland = degenerate_run >= DEGENERATE_SWITCH;
            let entering = if bland {
                (0..allowed).find(|&j| self.obj[j] < -OPT_EPS)
            } else {
                let mut best = None;
                let mut most = -OPT_EPS;
                for j in 0..allowed {
                    if self.obj[j] < most {
                        most = self.obj[j];
                        best = Some(j);
                    }
                }
                best
            };
            let Some(col) = entering else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let aij = self.a[i * self.stride + col];
                if aij > PIVOT_EPS {
                    let ratio = self.a[i * self.stride + self.n] / aij;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((r, best)) => {
                            let better =
                                ratio < best - 1e-12 || (ratio <= best + 1e-12 && self.basis[i] < self.basis[r]);
                            if better {
                                Some((i, ratio))
                            } else {
                                Some((r, best))
                            }
                        }
                    };
                }
            }
            let Some((row, ratio)) = leave else {
                return Err(Error::Solver("unbounded program".into()));
            };
            if ratio.abs() <= 1e-12 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.pivot(row, col);
        }
        Err(Error::Solver(format!("no convergence after {limit} pivots")))
    }

    fn pivot(&mut self, row: usize, col: usize) {
        self.pivots += 1;
        let s = self.stride;
        let p = self.a[row * s + col];
        {
            let r = &mut self.a[row * s..(row + 1) * s];
            r.iter_mut().for_each(|v| *v /= p);
        }
        let pivot_row: Vec<f64> = self.a[row * s..(row + 1) * s].to_vec();
        let nz: Vec<usize> = (0..s).filter(|&j| pivot_row[j] != 0.0).collect();
        for i in 0..self.m {
            if i == row {
                continue;
            }
            let f = self.a[i * s + col];
            if f != 0.0 {
                let r = &mut self.a[i * s..(i + 1) * s];
                for &j in &nz {
                    r[j] -= f * pivot_row[j];
                }
                r[col] = 0.0;
            }
        }
        let f = self.obj[col];
        if f != 0.0 {
            for &j in &nz {
                self.obj[j] -= f * pivot_row[j];
            }
            self.obj[col] = 0.0;
        }
        self.basis[row] = col;
    }

    /// Pivots zero-valued artificials out of the basis; rows with no real
    /// nonzero are redundant and are dropped.
    fn evict_artificials(&mut self) {
        let mut i = 0;
        while i < self.m {
            if self.basis[i] >= self.n_real {
                let s = self.stride;
                let col = (0..self.n_real).find(|&j| self.a[i * s + j].abs() > 1e-9);
                match col {
                    Some(j) => {
                        self.pivot(i, j);
                        i += 1;
                    }
                    None => {
                        self.a.drain(i * s..(i + 1) * s);
                        self.basis.remove(i);
                        self.m -= 1;
                    }
                }
            } else {
                i += 1;
            }
        }
    }
}

fn flip(r: Relation) -> Relation {
    match r {
        Relation::Le => Relation::Ge,
        Relation::Ge => Relation::Le,
        Relation::Eq => Relation::Eq,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn textbook_problem() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36
        let mut lp = LinearProgram::maximize(vec![3.0, 5.0]);
        lp.add_row(vec![1.0, 0.0], Relation::Le, 4.0).unwrap();
        lp.add_row(vec![0.0, 2.0], Relation::Le, 12.0).unwrap();
        lp.add_row(vec![3.0, 2.0], Relation::Le, 18.0).unwrap();
        let s = lp.solve().unwrap();
        assert_relative_eq!(s.objective, 36.0, epsilon = 1e-9);
        assert_relative_eq!(s.x[0], 2.0, epsilon = 1e-9);
        assert_relative_eq!(s.x[1], 6.0, epsilon = 1e-9);
    }

    #[test]
    fn equality_and_ge_rows() {
        // max x + 2y + 3z, x + y + z = 1, x >= 0.2, z <= 0.5
        let mut lp = LinearProgram::maximize(vec![1.0, 2.0, 3.0]);
        lp.add_row(vec![1.0, 1.0, 1.0], Relation::Eq, 1.0).unwrap();
        lp.add_row(vec![1.0, 0.0, 0.0], Relation::Ge, 0.2).unwrap();
        lp.add_row(vec![0.0, 0.0, 1.0], Relation::Le, 0.5).unwrap();
        let s = lp.solve().unwrap();
        assert_relative_eq!(s.objective, 0.2 + 0.6 + 1.5, epsilon = 1e-9);
    }

    #[test]
    fn negative_rhs_and_redundant_rows() {
        // -x - y <= -1 and a duplicated equality
        let mut lp = LinearProgram::maximize(vec![-1.0, -2.0]);
        lp.add_row(vec![-1.0, -1.0], Relation::Le, -1.0).unwrap();
        lp.add_row(vec![1.0, 1.0], Relation::Eq, 1.0).unwrap();
        lp.add_row(vec![2.0, 2.0], Relation::Eq, 2.0).unwrap();
        let s = lp.solve().unwrap();
        assert_relative_eq!(s.objective, -1.0, epsilon = 1e-9);
        assert_relative_eq!(s.x[0], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LinearProgram::maximize(vec![1.0]);
        lp.add_row(vec![1.0], Relation::Le, 1.0).unwrap();
        lp.add_row(vec![1.0], Relation::Ge, 2.0).unwrap();
        assert!(matches!(lp.solve(), Err(Error::Solver(_))));

        let mut lp = LinearProgram::maximize(vec![1.0, 0.0]);
        lp.add_row(vec![1.0, -1.0], Relation::Le, 1.0).unwrap();
        assert!(matches!(lp.solve(), Err(Error::Solver(_))));
    }

    #[test]
    fn wrong_row_length() {
        let mut lp = LinearProgram::maximize(vec![1.0, 1.0]);
        assert!(lp.add_row(vec![1.0], Relation::Le, 1.0).is_err());
    }

    #[test]
    fn degenerate_cycling_example() {
        // Beale's example cycles under naive Dantzig pricing.
        let mut lp = LinearProgram::maximize(vec![0.75, -150.0, 0.02, -6.0]);
        lp.add_row(vec![0.25, -60.0, -0.04, 9.0], Relation::Le, 0.0).unwrap();
        lp.add_row(vec![0.5, -90.0, -0.02, 3.0], Relation::Le, 0.0).unwrap();
        lp.add_row(vec![0.0, 0.0, 1.0, 0.0], Relation::Le, 1.0).unwrap();
        let s = lp.solve().unwrap();
        assert_relative_eq!(s.objective, 0.05, epsilon = 1e-9);
    }
}
