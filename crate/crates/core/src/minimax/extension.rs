//! Exact minimum of max regret over the exhaustive allocations supported by
//! one pointwise allocation.
//!
//! Write such an allocation as `p + d`, where each `d_i` stays inside the bin
//! just above `p_i` and `Σ d = δ`. The worst case for `p + d` is the upper
//! envelope everywhere except that WM `i`'s bin just above `p_i` (its
//! "contested" bin) only pays off from `p_i + d_i + 1` on. So a witness that
//! claims the contested bins of a set `S` of WMs pays an extra `d(S)` grid
//! units and nothing else changes. Tabulating, for every `S`, the best
//! witness value as a function of that extra cost turns the inner
//! maximization into a table lookup, and the outer minimization becomes a
//! search over bounded compositions of the surplus.

use crate::grid::{Units, UTILITY_TOL};
use crate::knapsack::{extend_frontier, frontier_best, Choice, Frontier};
use crate::utility::SampleSet;

pub(crate) struct ExtensionGame {
    /// WMs whose bin above `p_i` has a positive gap.
    pub contested: Vec<usize>,
    /// Most surplus each WM can take without leaving its bin.
    pub caps: Vec<Units>,
    pub delta: u32,
    /// Surplus placed on contested WMs. Witness value never increases when
    /// a contested WM gets more, so they take as much as their caps allow.
    pub contested_total: u32,
    /// `tables[mask][x]`: best witness value when the contested bins in
    /// `mask` are claimed and cost `x` extra in total.
    tables: Vec<Vec<f64>>,
    pub base_value: f64,
}

impl ExtensionGame {
    /// `None` when `p` supports no exhaustive allocation.
    pub fn new(samples: &[SampleSet], p: &[Units], delta: u32) -> Option<Self> {
        let capacity = samples[0].grid().resolution();
        let mut contested = Vec::new();
        let mut caps = Vec::with_capacity(samples.len());
        let mut free: Vec<Vec<Choice>> = Vec::with_capacity(samples.len());
        let mut forced: Vec<Option<Choice>> = Vec::with_capacity(samples.len());
        for (i, (s, &pi)) in samples.iter().zip(p).enumerate() {
            let cap = s.next_threshold(pi).map_or(0, |next| next - pi - 1);
            let bin_start = pi + 1;
            let mut own = None;
            let mut rest = Vec::new();
            for l in s.upper_utility().levels() {
                let ch = Choice {
                    cost: l.start,
                    value: l.value,
                };
                if pi < s.a_top() && l.start == bin_start {
                    own = Some(ch);
                } else {
                    rest.push(ch);
                }
            }
            if own.is_some() {
                contested.push(i);
            }
            caps.push(cap);
            free.push(rest);
            forced.push(own);
        }
        if caps.iter().map(|&c| c as u64).sum::<u64>() < delta as u64 {
            return None;
        }
        let contested_caps: u64 = contested.iter().map(|&i| caps[i] as u64).sum();
        let contested_total = contested_caps.min(delta as u64) as u32;

        let c = contested.len();
        let mut tables = Vec::with_capacity(1 << c);
        for mask in 0..(1usize << c) {
            let mut frontier: Frontier = vec![(0, 0.0)];
            for i in 0..samples.len() {
                let group = match contested.iter().position(|&k| k == i) {
                    Some(bit) if mask & (1 << bit) != 0 => vec![forced[i].expect("contested")],
                    _ => free[i].clone(),
                };
                frontier = extend_frontier(&frontier, &group, capacity);
            }
            let row = (0..=contested_total)
                .map(|x| {
                    capacity
                        .checked_sub(x)
                        .and_then(|b| frontier_best(&frontier, b))
                        .unwrap_or(f64::NEG_INFINITY)
                })
                .collect();
            tables.push(row);
        }

        let base_value = samples
            .iter()
            .zip(p)
            .map(|(s, &x)| s.value_at_threshold(x).expect("pointwise share"))
            .sum();

        Some(ExtensionGame {
            contested,
            caps,
            delta,
            contested_total,
            tables,
            base_value,
        })
    }

    /// Best witness value against the extension that gives `split[k]` to
    /// `contested[k]`.
    pub fn witness_value(&self, split: &[u32]) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for (mask, row) in self.tables.iter().enumerate() {
            let x: u32 = split
                .iter()
                .enumerate()
                .filter(|(bit, _)| mask & (1 << bit) != 0)
                .map(|(_, &d)| d)
                .sum();
            best = best.max(row[x as usize]);
        }
        best
    }

    pub fn regret(&self, split: &[u32]) -> f64 {
        (self.witness_value(split) - self.base_value).max(0.0)
    }

    /// The full allocation for a contested split. Surplus the contested
    /// WMs cannot hold goes to the other WMs, highest index first.
    pub fn allocation(&self, p: &[Units], split: &[u32]) -> Vec<Units> {
        let mut shares = p.to_vec();
        for (&i, &d) in self.contested.iter().zip(split) {
            shares[i] += d;
        }
        let mut left = self.delta - self.contested_total;
        for i in (0..shares.len()).rev() {
            if left == 0 {
                break;
            }
            if self.contested.contains(&i) {
                continue;
            }
            let add = self.caps[i].min(left);
            shares[i] += add;
            left -= add;
        }
        debug_assert_eq!(left, 0);
        shares
    }

    /// Lower bound on the witness value for any completion of a partial
    /// split whose unassigned entries share `remaining` units.
    fn bound(&self, assigned: &[u32], remaining: u32) -> f64 {
        let c = self.contested.len();
        let t = assigned.len();
        let mut best = f64::NEG_INFINITY;
        for (mask, row) in self.tables.iter().enumerate() {
            let mut x: u32 = (0..t)
                .filter(|b| mask & (1 << b) != 0)
                .map(|b| assigned[b])
                .sum();
            if (t..c).any(|b| mask & (1 << b) != 0) {
                x += remaining;
            }
            best = best.max(row[x as usize]);
        }
        best
    }

    /// Minimizes regret over every split of the contested surplus. Splits
    /// whose regret exceeds `ceiling` (plus tolerance) are not reported;
    /// among equally good splits the first in search order wins.
    pub fn minimize(&self, ceiling: Option<f64>) -> Option<(Vec<u32>, f64)> {
        let c = self.contested.len();
        if c == 0 {
            let r = self.regret(&[]);
            return (ceiling.is_none_or(|m| r <= m + UTILITY_TOL)).then(|| (Vec::new(), r));
        }
        let mut state = Search {
            limit: ceiling.map_or(f64::INFINITY, |r| r + self.base_value + UTILITY_TOL),
            best_value: f64::INFINITY,
            best: None,
        };
        let suffix_caps: Vec<u32> = (0..=c)
            .map(|k| self.contested[k..].iter().map(|&i| self.caps[i]).sum())
            .collect();
        let mut split = Vec::with_capacity(c);
        self.search(&mut split, self.contested_total, &suffix_caps, &mut state);
        state.best.map(|s| {
            let r = self.regret(&s);
            (s, r)
        })
    }

    fn search(
        &self,
        split: &mut Vec<u32>,
        remaining: u32,
        suffix_caps: &[u32],
        state: &mut Search,
    ) {
        let c = self.contested.len();
        let k = split.len();
        if remaining > suffix_caps[k] {
            return;
        }
        let lb = self.bound(split, remaining);
        if lb > state.limit || lb >= state.best_value - UTILITY_TOL {
            return;
        }
        if k + 1 == c {
            split.push(remaining);
            let v = self.witness_value(split);
            if v <= state.limit && v < state.best_value - UTILITY_TOL {
                state.best_value = v;
                state.best = Some(split.clone());
            }
            split.pop();
            return;
        }
        let cap = self.caps[self.contested[k]];
        for d in 0..=remaining.min(cap) {
            split.push(d);
            self.search(split, remaining - d, suffix_caps, state);
            split.pop();
        }
    }
}

struct Search {
    limit: f64,
    best_value: f64,
    best: Option<Vec<u32>>,
}
