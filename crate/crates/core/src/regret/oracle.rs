//! Exhaustive reference computations for small instances.
//!
//! Nothing here shares code with the knapsack search: the worst-case curve
//! is evaluated pointwise from its definition and every witness allocation
//! on the grid is enumerated.

use crate::error::{Error, Result};
use crate::grid::Units;
use crate::regret::Allocation;
use crate::utility::SampleSet;

pub const MAX_ORACLE_GRID: u32 = 200;
pub const MAX_ORACLE_WMS: usize = 3;

/// Worst-case utility at `y` for a WM whose subject share is `x`, read
/// straight off the sample list.
fn worst_case_at(s: &SampleSet, x: Units, y: Units) -> f64 {
    let pts: Vec<(Units, f64)> = s
        .thresholds()
        .iter()
        .copied()
        .zip(s.values().iter().copied())
        .collect();
    if let Some(&(_, v)) = pts.iter().find(|&&(t, _)| t == y) {
        return v;
    }
    if y > s.a_top() {
        return s.top_value();
    }
    let (lo, ulo) = *pts
        .iter()
        .rev()
        .find(|&&(t, _)| t < y)
        .expect("0 is sampled");
    let (hi, uhi) = *pts.iter().find(|&&(t, _)| t > y).expect("y below a_top");
    let x_inside = lo < x && x < hi;
    if x_inside && y <= x {
        ulo
    } else {
        uhi
    }
}

fn guard(samples: &[SampleSet]) -> Result<u32> {
    let g = samples
        .first()
        .ok_or_else(|| Error::domain("no workload managers"))?
        .grid()
        .resolution();
    if g > MAX_ORACLE_GRID || samples.len() > MAX_ORACLE_WMS {
        return Err(Error::TooLarge(format!(
            "{} WMs on a grid of {g}; the oracle accepts at most {MAX_ORACLE_WMS} WMs and grid {MAX_ORACLE_GRID}",
            samples.len()
        )));
    }
    Ok(g)
}

/// Visits every allocation with `shares[i] <= caps[i]` and total at most
/// `budget`.
fn for_each_allocation(caps: &[Units], budget: u32, f: &mut impl FnMut(&[Units])) {
    fn rec(caps: &[Units], budget: u32, cur: &mut Vec<Units>, f: &mut impl FnMut(&[Units])) {
        let i = cur.len();
        if i == caps.len() {
            f(cur);
            return;
        }
        for x in 0..=caps[i].min(budget) {
            cur.push(x);
            rec(caps, budget - x, cur, f);
            cur.pop();
        }
    }
    rec(caps, budget, &mut Vec::with_capacity(caps.len()), f);
}

/// Max regret of `a` by enumerating every witness on the grid.
pub fn oracle_max_regret(samples: &[SampleSet], a: &Allocation) -> Result<f64> {
    let g = guard(samples)?;
    if a.len() != samples.len() || a.total() > g as u64 {
        return Err(Error::domain("infeasible subject allocation"));
    }
    let tables: Vec<Vec<f64>> = samples
        .iter()
        .zip(&a.shares)
        .map(|(s, &x)| (0..=s.a_top()).map(|y| worst_case_at(s, x, y)).collect())
        .collect();
    let subject: f64 = samples
        .iter()
        .zip(&a.shares)
        .map(|(s, &x)| worst_case_at(s, x, x))
        .sum();
    let caps: Vec<Units> = samples.iter().map(|s| s.a_top()).collect();
    let mut best = f64::NEG_INFINITY;
    for_each_allocation(&caps, g, &mut |w| {
        let v: f64 = w.iter().zip(&tables).map(|(&y, t)| t[y as usize]).sum();
        if v > best {
            best = v;
        }
    });
    Ok((best - subject).max(0.0))
}

/// Minimum of [`oracle_max_regret`] over every feasible grid allocation.
/// Ties go to the lexicographically smallest allocation.
pub fn oracle_minimax(samples: &[SampleSet]) -> Result<(f64, Allocation)> {
    let g = guard(samples)?;
    let caps: Vec<Units> = samples.iter().map(|s| s.a_top()).collect();
    let mut best: Option<(f64, Allocation)> = None;
    let mut err = None;
    for_each_allocation(&caps, g, &mut |a| {
        if err.is_some() {
            return;
        }
        let alloc = Allocation::new(a.to_vec());
        match oracle_max_regret(samples, &alloc) {
            Ok(r) => {
                if best
                    .as_ref()
                    .is_none_or(|(b, _)| r < *b - crate::grid::UTILITY_TOL)
                {
                    best = Some((r, alloc));
                }
            }
            Err(e) => err = Some(e),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    Ok(best.expect("the zero allocation is always feasible"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    fn i2() -> Vec<SampleSet> {
        let g = Grid::new(10).unwrap();
        vec![
            SampleSet::new("wm1", g, vec![(0, 0.0), (5, 4.0), (10, 10.0)]).unwrap(),
            SampleSet::new("wm2", g, vec![(0, 0.0), (5, 6.0), (10, 8.0)]).unwrap(),
        ]
    }

    #[test]
    fn oracle_examples() {
        let s = i2();
        assert_eq!(oracle_max_regret(&s, &vec![5, 5].into()).unwrap(), 6.0);
        assert_eq!(oracle_max_regret(&s, &vec![0, 10].into()).unwrap(), 8.0);
        assert_eq!(oracle_max_regret(&s, &vec![10, 0].into()).unwrap(), 6.0);
        assert_eq!(oracle_minimax(&s).unwrap(), (6.0, vec![5, 5].into()));
    }

    #[test]
    fn fully_sampled_optimum_has_zero_regret() {
        let g = Grid::new(4).unwrap();
        let s = vec![
            SampleSet::new(
                "a",
                g,
                vec![(0, 0.0), (1, 3.0), (2, 4.0), (3, 4.5), (4, 5.0)],
            )
            .unwrap(),
            SampleSet::new(
                "b",
                g,
                vec![(0, 0.0), (1, 1.0), (2, 5.0), (3, 5.5), (4, 6.0)],
            )
            .unwrap(),
        ];
        // True optimum: a=2 (4) + b=2 (5) = 9.
        assert_eq!(oracle_max_regret(&s, &vec![2, 2].into()).unwrap(), 0.0);
        assert!(oracle_max_regret(&s, &vec![1, 3].into()).unwrap() > 0.0);
        let (r, a) = oracle_minimax(&s).unwrap();
        assert_eq!(r, 0.0);
        assert_eq!(a.shares, vec![2, 2]);
    }

    #[test]
    fn refuses_large_instances() {
        let g = Grid::new(1000).unwrap();
        let s = vec![SampleSet::new("a", g, vec![(0, 0.0), (1000, 1.0)]).unwrap()];
        assert!(matches!(
            oracle_max_regret(&s, &vec![0].into()),
            Err(Error::TooLarge(_))
        ));
    }
}
