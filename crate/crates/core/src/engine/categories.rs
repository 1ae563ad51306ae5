use crate::grid::{PriceDist, PriceGrid};
use crate::strategy::{Profile, StrategySpec};

/// Partition of the grid by every trigger threshold in a profile. Prices in
/// the same cell fire exactly the same events, so each cell is represented
/// by its lowest price.
#[derive(Clone, Debug)]
pub(crate) struct Categories {
    grid: PriceGrid,
    cuts: Vec<usize>,
}

impl Categories {
    pub fn of_profile(profile: &Profile) -> Self {
        let mut cuts: Vec<usize> = profile
            .members
            .iter()
            .filter_map(|m| match m {
                StrategySpec::Automaton(a) => Some(a.events().iter().map(|e| e.threshold() as usize)),
                _ => None,
            })
            .flatten()
            .filter(|&t| t > 0)
            .collect();
        cuts.sort_unstable();
        cuts.dedup();
        Self {
            grid: profile.grid,
            cuts,
        }
    }

    pub fn count(&self) -> usize {
        self.cuts.len() + 1
    }

    pub fn representative(&self, c: usize) -> u32 {
        if c == 0 {
            0
        } else {
            self.cuts[c - 1] as u32
        }
    }

    /// One past the highest price of cell `c`.
    pub fn upper(&self, c: usize) -> usize {
        self.cuts.get(c).copied().unwrap_or(self.grid.len())
    }

    pub fn of_price(&self, p: usize) -> usize {
        self.cuts.partition_point(|&t| t <= p)
    }

    /// Nonzero `(representative, probability)` cells of `d`.
    pub fn split(&self, d: &PriceDist) -> Vec<(u32, f64)> {
        if let Some(p) = d.is_point() {
            return vec![(self.representative(self.of_price(p)), 1.0)];
        }
        (0..self.count())
            .filter_map(|c| {
                let lo = self.representative(c) as usize;
                let hi = self.upper(c);
                let hi_tail = if hi > self.grid.top() { 0.0 } else { d.at_least(hi) };
                let w = (d.at_least(lo) - hi_tail).max(0.0);
                (w > 0.0).then(|| (self.representative(c), w))
            })
            .collect()
    }
}

/// Odometer over a product of small discrete distributions.
pub(crate) fn for_each_outcome(cells: &[Vec<(u32, f64)>], mut f: impl FnMut(&[u32], f64)) {
    let n = cells.len();
    let mut idx = vec![0usize; n];
    let mut prices: Vec<u32> = cells.iter().map(|c| c[0].0).collect();
    loop {
        let prob: f64 = idx.iter().zip(cells).map(|(&i, c)| c[i].1).product();
        f(&prices, prob);
        let mut j = 0;
        loop {
            if j == n {
                return;
            }
            idx[j] += 1;
            if idx[j] < cells[j].len() {
                prices[j] = cells[j][idx[j]].0;
                break;
            }
            idx[j] = 0;
            prices[j] = cells[j][0].0;
            j += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strategy::make_simple_grim;

    #[test]
    fn cells_and_representatives() {
        let g = PriceGrid::new(10).unwrap();
        let p = make_simple_grim(3, g).unwrap();
        let c = Categories::of_profile(&p);
        assert_eq!(c.count(), 2);
        assert_eq!(c.of_price(9), 0);
        assert_eq!(c.of_price(10), 1);
        let cells = c.split(&PriceDist::uniform(g));
        assert_eq!(cells.len(), 2);
        assert!((cells[0].1 - 10.0 / 11.0).abs() < 1e-12);
        assert_eq!(cells[1].0, 10);
    }

    #[test]
    fn odometer_visits_product() {
        let cells = vec![vec![(0, 0.5), (1, 0.5)], vec![(3, 1.0)], vec![(0, 0.25), (2, 0.75)]];
        let mut seen = 0;
        let mut total = 0.0;
        for_each_outcome(&cells, |_, p| {
            seen += 1;
            total += p;
        });
        assert_eq!(seen, 4);
        assert!((total - 1.0).abs() < 1e-15);
    }
}
