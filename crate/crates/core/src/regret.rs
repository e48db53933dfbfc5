//! Max regret of an allocation and its witness.
//!
//! For a fixed subject allocation the worst-case utility vector is known in
//! closed form (see [`SampleSet::adversarial_utility`]), so the search for a
//! regret-maximizing witness reduces to a multi-choice knapsack: each WM
//! picks one level of its adversarial step curve, paying the level's first
//! grid point.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Units};
use crate::knapsack::{self, Choice, Method};
use crate::utility::{SampleSet, StepUtility, UtilityVector};

pub mod oracle;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Allocation {
    pub shares: Vec<Units>,
}

impl Allocation {
    pub fn new(shares: Vec<Units>) -> Self {
        Allocation { shares }
    }

    pub fn len(&self) -> usize {
        self.shares.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shares.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.shares.iter().map(|&s| s as u64).sum()
    }

    pub fn to_real(&self, grid: Grid) -> Vec<f64> {
        self.shares.iter().map(|&s| grid.to_real(s)).collect()
    }
}

impl From<Vec<Units>> for Allocation {
    fn from(shares: Vec<Units>) -> Self {
        Allocation { shares }
    }
}

/// Max regret of `subject` together with the evidence for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretCertificate {
    pub regret: f64,
    pub subject: Allocation,
    pub witness: Allocation,
    pub adversary: UtilityVector,
}

impl RegretCertificate {
    /// Regret recomputed from the witness and adversary.
    pub fn recompute(&self) -> Result<f64> {
        Ok(
            (value(&self.witness, &self.adversary)? - value(&self.subject, &self.adversary)?)
                .max(0.0),
        )
    }
}

/// Total utility of an allocation under a utility vector.
pub fn value(a: &Allocation, u: &[StepUtility]) -> Result<f64> {
    if a.len() != u.len() {
        return Err(Error::domain(format!(
            "allocation has {} shares but utility vector has {} entries",
            a.len(),
            u.len()
        )));
    }
    Ok(a.shares.iter().zip(u).map(|(&x, ui)| ui.eval(x)).sum())
}

/// Checks that `a` is a feasible allocation for `samples`.
pub fn check_allocation(samples: &[SampleSet], a: &Allocation) -> Result<Grid> {
    let grid = common_grid(samples)?;
    if a.len() != samples.len() {
        return Err(Error::domain(format!(
            "allocation has {} shares for {} WMs",
            a.len(),
            samples.len()
        )));
    }
    if a.total() > grid.resolution() as u64 {
        return Err(Error::domain(format!(
            "allocation uses {} of {} grid units",
            a.total(),
            grid.resolution()
        )));
    }
    for (s, &x) in samples.iter().zip(&a.shares) {
        if x > s.a_top() {
            return Err(Error::domain(format!(
                "{}: share {x} exceeds saturation point {}",
                s.wm_id(),
                s.a_top()
            )));
        }
    }
    Ok(grid)
}

pub fn common_grid(samples: &[SampleSet]) -> Result<Grid> {
    let first = samples
        .first()
        .ok_or_else(|| Error::domain("no workload managers"))?
        .grid();
    if samples.iter().any(|s| s.grid() != first) {
        return Err(Error::domain("sample sets use different grids"));
    }
    Ok(first)
}

/// The worst-case utility vector for `a`.
pub fn adversary(samples: &[SampleSet], a: &Allocation) -> Result<UtilityVector> {
    samples
        .iter()
        .zip(&a.shares)
        .map(|(s, &x)| s.adversarial_utility(x))
        .collect()
}

/// Max regret of `a` with respect to one competing allocation.
pub fn pairwise_max_regret(
    samples: &[SampleSet],
    a: &Allocation,
    other: &Allocation,
) -> Result<f64> {
    check_allocation(samples, a)?;
    check_allocation(samples, other)?;
    let adv = adversary(samples, a)?;
    Ok(value(other, &adv)? - value(a, &adv)?)
}

/// Same as [`pairwise_max_regret`] without feasibility checks; used in hot
/// loops on allocations already known to be valid.
pub(crate) fn pairwise_unchecked(samples: &[SampleSet], a: &Allocation, other: &Allocation) -> f64 {
    samples
        .iter()
        .zip(a.shares.iter().zip(&other.shares))
        .map(|(s, (&x, &y))| adversarial_eval(s, x, y) - adversarial_eval(s, x, x))
        .sum()
}

/// Value at `y` of the adversarial curve for subject share `x`.
#[inline]
pub(crate) fn adversarial_eval(s: &SampleSet, x: Units, y: Units) -> f64 {
    if y >= s.a_top() {
        return s.top_value();
    }
    let th = s.thresholds();
    let vals = s.values();
    match th.binary_search(&y) {
        Ok(j) => vals[j],
        Err(j) => {
            // y lies strictly inside bin j.
            let inside_subject_bin = x > th[j - 1] && x < th[j];
            if inside_subject_bin && y <= x {
                vals[j - 1]
            } else {
                vals[j]
            }
        }
    }
}

/// Max regret of `a`, solved exactly as a knapsack over adversarial levels.
pub fn max_regret(samples: &[SampleSet], a: &Allocation) -> Result<RegretCertificate> {
    max_regret_with(samples, a, Method::default())
}

pub fn max_regret_with(
    samples: &[SampleSet],
    a: &Allocation,
    method: Method,
) -> Result<RegretCertificate> {
    let grid = check_allocation(samples, a)?;
    let adv = adversary(samples, a)?;
    let groups: Vec<Vec<Choice>> = adv
        .iter()
        .map(|u| {
            u.levels()
                .iter()
                .map(|l| Choice {
                    cost: l.start,
                    value: l.value,
                })
                .collect()
        })
        .collect();
    let sol = knapsack::solve(&groups, grid.resolution(), method)
        .expect("level 0 of every adversarial curve costs nothing");
    let witness = Allocation::new(sol.costs);
    let subject_value = value(a, &adv)?;
    let regret = (sol.value - subject_value).max(0.0);
    Ok(RegretCertificate {
        regret,
        subject: a.clone(),
        witness,
        adversary: adv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn i2() -> Vec<SampleSet> {
        let g = Grid::new(10).unwrap();
        vec![
            SampleSet::new("wm1", g, vec![(0, 0.0), (5, 4.0), (10, 10.0)]).unwrap(),
            SampleSet::new("wm2", g, vec![(0, 0.0), (5, 6.0), (10, 8.0)]).unwrap(),
        ]
    }

    #[test]
    fn value_cases() {
        let s = i2();
        let upper: Vec<_> = s.iter().map(|x| x.upper_utility()).collect();
        assert_eq!(value(&vec![5, 5].into(), &upper).unwrap(), 10.0);
        assert_eq!(value(&vec![0, 0].into(), &upper).unwrap(), 0.0);
        let one = SampleSet::new("w", Grid::new(10).unwrap(), vec![(0, 0.0), (10, 10.0)]).unwrap();
        assert_eq!(
            value(&vec![10].into(), &[one.upper_utility()]).unwrap(),
            10.0
        );
        assert!(value(&vec![1].into(), &upper).is_err());
    }

    #[test]
    fn pairwise_cases() {
        let s = i2();
        assert_eq!(
            pairwise_max_regret(&s, &vec![5, 5].into(), &vec![6, 4].into()).unwrap(),
            6.0
        );
        assert_eq!(
            pairwise_max_regret(&s, &vec![10, 0].into(), &vec![4, 6].into()).unwrap(),
            2.0
        );
        let a: Allocation = vec![3, 7].into();
        assert_eq!(pairwise_max_regret(&s, &a, &a).unwrap(), 0.0);
    }

    #[test]
    fn max_regret_cases() {
        let s = i2();
        let c = max_regret(&s, &vec![5, 5].into()).unwrap();
        assert_eq!(c.regret, 6.0);
        assert_eq!(c.witness.shares, vec![6, 1]);
        assert_eq!(c.recompute().unwrap(), 6.0);

        // Witness (6, 4) scores 10 + 6 under the all-upper adversary.
        let c = max_regret(&s, &vec![10, 0].into()).unwrap();
        assert_eq!(c.regret, 6.0);
        assert_eq!(c.witness.shares, vec![6, 1]);

        let one = SampleSet::new("w", Grid::new(10).unwrap(), vec![(0, 0.0), (10, 10.0)]).unwrap();
        assert_eq!(max_regret(&[one], &vec![10].into()).unwrap().regret, 0.0);
    }

    #[test]
    fn infeasible_allocation_rejected() {
        let s = i2();
        assert!(max_regret(&s, &vec![6, 5].into()).is_err());
        assert!(max_regret(&s, &vec![6].into()).is_err());
    }

    #[test]
    fn adversarial_eval_matches_step_curve() {
        for s in i2() {
            for x in 0..=10 {
                let u = s.adversarial_utility(x).unwrap();
                for y in 0..=10 {
                    assert_eq!(adversarial_eval(&s, x, y), u.eval(y), "x={x} y={y}");
                }
            }
        }
    }

    #[test]
    fn methods_agree() {
        let s = i2();
        for a in 0..=10u32 {
            let alloc: Allocation = vec![a, 10 - a].into();
            let r: Vec<f64> = [Method::Dense, Method::Sparse, Method::BranchAndBound]
                .into_iter()
                .map(|m| max_regret_with(&s, &alloc, m).unwrap().regret)
                .collect();
            assert!(r.windows(2).all(|w| w[0] == w[1]), "{r:?}");
        }
    }
}
