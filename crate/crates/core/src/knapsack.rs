//! Multi-choice knapsack over grid units.
//!
//! Each group offers a menu of `(cost, value)` choices and exactly one choice
//! is taken per group; total cost must fit in the capacity. Among optimal
//! selections the one whose cost vector is lexicographically smallest is
//! returned, so results do not depend on the solving method.

use serde::{Deserialize, Serialize};

use crate::grid::UTILITY_TOL;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Choice {
    pub cost: u32,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Table over every capacity value.
    Dense,
    /// Table compressed to its non-dominated `(cost, value)` breakpoints.
    #[default]
    Sparse,
    /// Depth-first search over choices with an optimistic value bound.
    BranchAndBound,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub value: f64,
    /// Index of the chosen entry in each group's menu.
    pub picks: Vec<usize>,
    /// Cost of each pick.
    pub costs: Vec<u32>,
}

/// Returns `None` when no selection fits (some group has no affordable
/// choice).
pub fn solve(groups: &[Vec<Choice>], capacity: u32, method: Method) -> Option<Solution> {
    if groups.iter().any(|g| g.is_empty()) {
        return None;
    }
    match method {
        Method::Dense => reconstruct(groups, capacity, &DenseTable::build(groups, capacity)),
        Method::Sparse => reconstruct(groups, capacity, &SparseTable::build(groups, capacity)),
        Method::BranchAndBound => branch_and_bound(groups, capacity),
    }
}

/// Best achievable value of groups `i..` within a budget.
trait SuffixTable {
    fn best(&self, i: usize, budget: u32) -> Option<f64>;
}

struct DenseTable {
    // rows[i][c] = best value of groups i.. with capacity c; NaN when infeasible.
    rows: Vec<Vec<f64>>,
}

impl DenseTable {
    fn build(groups: &[Vec<Choice>], capacity: u32) -> Self {
        let width = capacity as usize + 1;
        let n = groups.len();
        let mut rows = vec![vec![f64::NAN; width]; n + 1];
        rows[n].iter_mut().for_each(|v| *v = 0.0);
        for i in (0..n).rev() {
            let (head, tail) = rows.split_at_mut(i + 1);
            let (row, next) = (&mut head[i], &tail[0]);
            for c in 0..width {
                let mut best = f64::NAN;
                for ch in &groups[i] {
                    let cost = ch.cost as usize;
                    if cost > c {
                        continue;
                    }
                    let rest = next[c - cost];
                    if rest.is_nan() {
                        continue;
                    }
                    let v = ch.value + rest;
                    if best.is_nan() || v > best {
                        best = v;
                    }
                }
                row[c] = best;
            }
        }
        DenseTable { rows }
    }
}

impl SuffixTable for DenseTable {
    fn best(&self, i: usize, budget: u32) -> Option<f64> {
        let v = self.rows[i][budget as usize];
        (!v.is_nan()).then_some(v)
    }
}

/// Pareto frontier: costs strictly increasing, values strictly increasing.
pub(crate) type Frontier = Vec<(u32, f64)>;

pub(crate) fn frontier_best(f: &Frontier, budget: u32) -> Option<f64> {
    let k = f.partition_point(|&(c, _)| c <= budget);
    (k > 0).then(|| f[k - 1].1)
}

/// Combines a frontier with one more group of choices.
pub(crate) fn extend_frontier(f: &Frontier, group: &[Choice], capacity: u32) -> Frontier {
    let mut all: Vec<(u32, f64)> = Vec::with_capacity(f.len() * group.len());
    for &(c, v) in f {
        for ch in group {
            let cost = c as u64 + ch.cost as u64;
            if cost <= capacity as u64 {
                all.push((cost as u32, v + ch.value));
            }
        }
    }
    prune_frontier(all)
}

pub(crate) fn prune_frontier(mut all: Vec<(u32, f64)>) -> Frontier {
    all.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let mut out: Frontier = Vec::with_capacity(all.len());
    for (c, v) in all {
        match out.last() {
            Some(&(_, lv)) if v <= lv => {}
            _ => out.push((c, v)),
        }
    }
    out
}

struct SparseTable {
    frontiers: Vec<Frontier>,
}

impl SparseTable {
    fn build(groups: &[Vec<Choice>], capacity: u32) -> Self {
        let n = groups.len();
        let mut frontiers = vec![Vec::new(); n + 1];
        frontiers[n] = vec![(0, 0.0)];
        for i in (0..n).rev() {
            frontiers[i] = extend_frontier(&frontiers[i + 1], &groups[i], capacity);
        }
        SparseTable { frontiers }
    }
}

impl SuffixTable for SparseTable {
    fn best(&self, i: usize, budget: u32) -> Option<f64> {
        frontier_best(&self.frontiers[i], budget)
    }
}

fn reconstruct(
    groups: &[Vec<Choice>],
    capacity: u32,
    table: &impl SuffixTable,
) -> Option<Solution> {
    let target = table.best(0, capacity)?;
    let mut remaining = capacity;
    let mut picks = Vec::with_capacity(groups.len());
    let mut costs = Vec::with_capacity(groups.len());
    let mut value = 0.0;
    let mut need = target;
    for (i, group) in groups.iter().enumerate() {
        let mut order: Vec<usize> = (0..group.len()).collect();
        order.sort_by_key(|&k| group[k].cost);
        let mut chosen = None;
        for k in order {
            let ch = group[k];
            if ch.cost > remaining {
                break;
            }
            if let Some(rest) = table.best(i + 1, remaining - ch.cost) {
                if ch.value + rest >= need - UTILITY_TOL {
                    chosen = Some((k, rest));
                    break;
                }
            }
        }
        let (k, rest) = chosen?;
        let ch = group[k];
        picks.push(k);
        costs.push(ch.cost);
        value += ch.value;
        remaining -= ch.cost;
        need = rest;
    }
    Some(Solution {
        value,
        picks,
        costs,
    })
}

fn branch_and_bound(groups: &[Vec<Choice>], capacity: u32) -> Option<Solution> {
    let n = groups.len();
    let sorted: Vec<Vec<(usize, Choice)>> = groups
        .iter()
        .map(|g| {
            let mut v: Vec<(usize, Choice)> = g.iter().copied().enumerate().collect();
            v.sort_by_key(|(_, c)| c.cost);
            v
        })
        .collect();
    // Optimistic completion values, ignoring capacity.
    let mut suffix_max = vec![0.0; n + 1];
    let mut suffix_min_cost = vec![0u64; n + 1];
    for i in (0..n).rev() {
        let best = groups[i]
            .iter()
            .map(|c| c.value)
            .fold(f64::NEG_INFINITY, f64::max);
        suffix_max[i] = suffix_max[i + 1] + best;
        suffix_min_cost[i] =
            suffix_min_cost[i + 1] + groups[i].iter().map(|c| c.cost as u64).min().unwrap_or(0);
    }

    struct Search<'a> {
        sorted: &'a [Vec<(usize, Choice)>],
        suffix_max: &'a [f64],
        suffix_min_cost: &'a [u64],
        stack: Vec<usize>,
        best: Option<(f64, Vec<usize>)>,
    }

    impl Search<'_> {
        fn go(&mut self, i: usize, remaining: u32, acc: f64) {
            if self.suffix_min_cost[i] > remaining as u64 {
                return;
            }
            if let Some((b, _)) = &self.best {
                if acc + self.suffix_max[i] <= *b + UTILITY_TOL {
                    return;
                }
            }
            if i == self.sorted.len() {
                self.best = Some((acc, self.stack.clone()));
                return;
            }
            for &(k, ch) in &self.sorted[i] {
                if ch.cost > remaining {
                    break;
                }
                self.stack.push(k);
                self.go(i + 1, remaining - ch.cost, acc + ch.value);
                self.stack.pop();
            }
        }
    }

    let mut s = Search {
        sorted: &sorted,
        suffix_max: &suffix_max,
        suffix_min_cost: &suffix_min_cost,
        stack: Vec::with_capacity(n),
        best: None,
    };
    s.go(0, capacity, 0.0);
    let (value, picks) = s.best?;
    let costs = picks.iter().zip(groups).map(|(&k, g)| g[k].cost).collect();
    Some(Solution {
        value,
        picks,
        costs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ch(cost: u32, value: f64) -> Choice {
        Choice { cost, value }
    }

    fn brute(groups: &[Vec<Choice>], cap: u32) -> Option<f64> {
        fn rec(groups: &[Vec<Choice>], cap: i64, acc: f64, best: &mut Option<f64>) {
            if cap < 0 {
                return;
            }
            match groups.split_first() {
                None => {
                    if best.is_none_or(|b| acc > b) {
                        *best = Some(acc);
                    }
                }
                Some((g, rest)) => {
                    for c in g {
                        rec(rest, cap - c.cost as i64, acc + c.value, best);
                    }
                }
            }
        }
        let mut best = None;
        rec(groups, cap as i64, 0.0, &mut best);
        best
    }

    #[test]
    fn small_instance() {
        let groups = vec![
            vec![ch(0, 0.0), ch(6, 10.0)],
            vec![ch(0, 0.0), ch(1, 6.0), ch(6, 8.0)],
        ];
        for m in [Method::Dense, Method::Sparse, Method::BranchAndBound] {
            let s = solve(&groups, 10, m).unwrap();
            assert_eq!(s.value, 16.0);
            assert_eq!(s.costs, vec![6, 1]);
        }
    }

    #[test]
    fn infeasible_when_forced_costs_exceed_capacity() {
        let groups = vec![vec![ch(6, 1.0)], vec![ch(5, 1.0)]];
        for m in [Method::Dense, Method::Sparse, Method::BranchAndBound] {
            assert!(solve(&groups, 10, m).is_none());
        }
    }

    #[test]
    fn lexicographic_tie_break() {
        // Both (2, 0) and (0, 2) reach value 5.
        let groups = vec![vec![ch(0, 0.0), ch(2, 5.0)], vec![ch(0, 0.0), ch(2, 5.0)]];
        for m in [Method::Dense, Method::Sparse, Method::BranchAndBound] {
            let s = solve(&groups, 3, m).unwrap();
            assert_eq!(s.costs, vec![0, 2], "{m:?}");
        }
    }

    fn arb_groups() -> impl Strategy<Value = (Vec<Vec<Choice>>, u32)> {
        let group = prop::collection::vec((0u32..20, 0u32..50), 1..5)
            .prop_map(|v| v.into_iter().map(|(c, x)| ch(c, x as f64 * 0.5)).collect());
        (prop::collection::vec(group, 1..5), 0u32..40)
    }

    proptest! {
        #[test]
        fn methods_agree_with_brute_force((groups, cap) in arb_groups()) {
            let expect = brute(&groups, cap);
            let mut costs = None;
            for m in [Method::Dense, Method::Sparse, Method::BranchAndBound] {
                let got = solve(&groups, cap, m);
                prop_assert_eq!(got.as_ref().map(|s| s.value), expect);
                if let Some(s) = got {
                    let total: u32 = s.costs.iter().sum();
                    prop_assert!(total <= cap);
                    match &costs {
                        None => costs = Some(s.costs.clone()),
                        Some(c) => prop_assert_eq!(c, &s.costs),
                    }
                }
            }
        }
    }
}
