//! The workload-manager side of a negotiation: utility oracles.
//!
//! A [`WmModel`] serves transaction classes through M/M/1 queues and earns
//! contract payments that depend on response time; its utility at a
//! resource level is the best revenue over ways of splitting that resource
//! among its classes. [`SyntheticWm`] generates simpler curves for tests,
//! including a near-step family whose WMs can only all be satisfied when
//! every step point is pinned exactly.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Units, UTILITY_TOL};
use crate::utility::StepUtility;

/// Mean response time of an M/M/1 queue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResponseTime {
    Finite(f64),
    /// Arrivals at least as fast as service: the queue grows without bound.
    Unstable,
}

pub fn mm1_response_time(lambda: f64, mu: f64) -> Result<ResponseTime> {
    if !(lambda >= 0.0) {
        return Err(Error::domain(format!("arrival rate {lambda} is negative")));
    }
    if !(mu > 0.0) {
        return Err(Error::domain(format!("service rate {mu} is not positive")));
    }
    Ok(if mu > lambda {
        ResponseTime::Finite(1.0 / (mu - lambda))
    } else {
        ResponseTime::Unstable
    })
}

/// Payment for one transaction class as a function of response time: `P`
/// below the threshold `R`, nothing above, with a logistic ramp of width
/// `w` in between (`w = 0` is a hard step).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractSpec {
    pub payment: f64,
    pub response_threshold: f64,
    #[serde(default)]
    pub smoothing_width: f64,
}

impl ContractSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.payment >= 0.0) {
            return Err(Error::domain("contract payment must be nonnegative"));
        }
        if !(self.response_threshold > 0.0) {
            return Err(Error::domain(
                "contract response threshold must be positive",
            ));
        }
        if !(self.smoothing_width >= 0.0) {
            return Err(Error::domain(
                "contract smoothing width must be nonnegative",
            ));
        }
        Ok(())
    }
}

pub fn contract_payment(c: &ContractSpec, t: ResponseTime) -> f64 {
    let ResponseTime::Finite(t) = t else {
        return 0.0;
    };
    if c.smoothing_width == 0.0 {
        if t <= c.response_threshold {
            c.payment
        } else {
            0.0
        }
    } else {
        let z = (c.response_threshold - t) / c.smoothing_width;
        c.payment / (1.0 + (-z).exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransactionClass {
    pub arrival_rate: f64,
    pub contract: ContractSpec,
}

fn default_split_grid() -> usize {
    101
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WmModel {
    pub wm_id: String,
    pub classes: Vec<TransactionClass>,
    /// Service rate available per unit of resource.
    pub capacity_rate: f64,
    /// Candidate fractions per class in the inner split search.
    #[serde(default = "default_split_grid")]
    pub split_grid: usize,
}

impl WmModel {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::domain(format!(
                "{}: no transaction classes",
                self.wm_id
            )));
        }
        if !(self.capacity_rate > 0.0) {
            return Err(Error::domain(format!(
                "{}: capacity rate must be positive",
                self.wm_id
            )));
        }
        if self.split_grid < 2 {
            return Err(Error::domain(format!(
                "{}: split grid must be at least 2",
                self.wm_id
            )));
        }
        for c in &self.classes {
            if !(c.arrival_rate >= 0.0) {
                return Err(Error::domain(format!(
                    "{}: negative arrival rate",
                    self.wm_id
                )));
            }
            c.contract.validate()?;
        }
        Ok(())
    }

    /// Best total payment with `a` (a fraction of the whole resource).
    pub fn utility(&self, a: f64) -> f64 {
        let steps = self.split_grid - 1;
        let total_rate = self.capacity_rate * a;
        let mut best = 0.0f64;
        let mut parts = vec![0usize; self.classes.len()];
        for_each_composition(steps, &mut parts, 0, &mut |parts| {
            let revenue: f64 = self
                .classes
                .iter()
                .zip(parts.iter())
                .map(|(c, &k)| {
                    let mu = total_rate * k as f64 / steps as f64;
                    let t = mm1_response_time(c.arrival_rate, mu).unwrap_or(ResponseTime::Unstable);
                    contract_payment(&c.contract, t)
                })
                .sum();
            best = best.max(revenue);
        });
        best
    }

    pub fn max_revenue(&self) -> f64 {
        self.classes.iter().map(|c| c.contract.payment).sum()
    }
}

/// Calls `f` with every way of writing `total` as an ordered sum of
/// `parts.len()` nonnegative integers.
fn for_each_composition(total: usize, parts: &mut [usize], k: usize, f: &mut impl FnMut(&[usize])) {
    if k + 1 == parts.len() {
        parts[k] = total;
        f(parts);
        return;
    }
    for x in 0..=total {
        parts[k] = x;
        for_each_composition(total - x, parts, k + 1, f);
    }
}

pub fn wm_utility(m: &WmModel, a: Units, grid: Grid) -> f64 {
    m.utility(grid.to_real(a))
}

/// Synthetic utility curves, as fractions of the whole resource.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SyntheticWm {
    /// 0 below `jump`, rising linearly to `plateau` over `ramp`.
    NearStep { jump: f64, plateau: f64, ramp: f64 },
    /// Piecewise linear through `knots` random points, from 0 up to at
    /// most `scale`.
    RandomMonotone { seed: u64, knots: usize, scale: f64 },
}

impl SyntheticWm {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SyntheticWm::NearStep {
                jump,
                plateau,
                ramp,
            } => {
                if !(jump > 0.0 && jump < 1.0) {
                    return Err(Error::domain("near-step jump must lie in (0, 1)"));
                }
                if !(plateau >= 0.0 && ramp >= 0.0) {
                    return Err(Error::domain(
                        "near-step plateau and ramp must be nonnegative",
                    ));
                }
            }
            SyntheticWm::RandomMonotone { knots, scale, .. } => {
                if knots == 0 || !(scale >= 0.0) {
                    return Err(Error::domain(
                        "random-monotone needs knots ≥ 1 and scale ≥ 0",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn utility(&self, x: f64) -> f64 {
        match *self {
            SyntheticWm::NearStep {
                jump,
                plateau,
                ramp,
            } => {
                if x <= jump {
                    0.0
                } else if x >= jump + ramp {
                    plateau
                } else {
                    plateau * (x - jump) / ramp
                }
            }
            SyntheticWm::RandomMonotone { seed, knots, scale } => {
                let pts = random_knots(seed, knots, scale);
                let j = pts.partition_point(|&(t, _)| t <= x);
                if j == pts.len() {
                    return pts[j - 1].1;
                }
                let (x0, y0) = pts[j - 1];
                let (x1, y1) = pts[j];
                y0 + (y1 - y0) * (x - x0) / (x1 - x0)
            }
        }
    }

    /// Total utility gap `u(1) − u(0)`.
    pub fn epsilon(&self) -> f64 {
        self.utility(1.0) - self.utility(0.0)
    }
}

/// Knots from `(0, 0)` to `(1, top)` with nondecreasing values.
fn random_knots(seed: u64, knots: usize, scale: f64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs: Vec<f64> = (0..knots).map(|_| rng.gen_range(0.0..1.0)).collect();
    let mut ys: Vec<f64> = (0..knots + 1).map(|_| rng.gen_range(0.0..=scale)).collect();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let mut pts = vec![(0.0, 0.0)];
    pts.extend(xs.into_iter().zip(ys.iter().copied()));
    pts.push((1.0, ys[knots]));
    pts.dedup_by(|b, a| b.0 <= a.0);
    pts
}

pub fn synthetic_utility(g: &SyntheticWm, x: Units, grid: Grid) -> f64 {
    g.utility(grid.to_real(x))
}

/// A WM that answers utility queries on a grid.
pub trait UtilityOracle: Send + Sync {
    fn wm_id(&self) -> &str;
    /// Smallest grid point from which utility stays flat.
    fn a_top(&self, grid: Grid) -> Units;
    fn utility(&self, x: Units, grid: Grid) -> f64;
}

/// Smallest grid point whose utility is within tolerance of the utility
/// at the full resource. Relies on monotonicity.
fn saturation_point(grid: Grid, u: impl Fn(Units) -> f64) -> Units {
    let top = u(grid.resolution());
    let (mut lo, mut hi) = (0, grid.resolution());
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if u(mid) >= top - UTILITY_TOL {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    lo
}

impl UtilityOracle for WmModel {
    fn wm_id(&self) -> &str {
        &self.wm_id
    }

    fn a_top(&self, grid: Grid) -> Units {
        saturation_point(grid, |x| wm_utility(self, x, grid))
    }

    fn utility(&self, x: Units, grid: Grid) -> f64 {
        wm_utility(self, x, grid)
    }
}

/// A synthetic WM with an id. Reports the whole resource as its saturation
/// point, as the halving analysis assumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedSynthetic {
    pub wm_id: String,
    #[serde(flatten)]
    pub curve: SyntheticWm,
}

impl UtilityOracle for NamedSynthetic {
    fn wm_id(&self) -> &str {
        &self.wm_id
    }

    fn a_top(&self, grid: Grid) -> Units {
        grid.resolution()
    }

    fn utility(&self, x: Units, grid: Grid) -> f64 {
        synthetic_utility(&self.curve, x, grid)
    }
}

/// A WM whose true utility is a known step function.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOracle {
    pub wm_id: String,
    pub curve: StepUtility,
}

impl UtilityOracle for StepOracle {
    fn wm_id(&self) -> &str {
        &self.wm_id
    }

    fn a_top(&self, _grid: Grid) -> Units {
        self.curve.levels().last().map_or(0, |l| l.start)
    }

    fn utility(&self, x: Units, _grid: Grid) -> f64 {
        self.curve.eval(x)
    }
}

/// Any of the configurable WM kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum WmSpec {
    Model(WmModel),
    Synthetic(NamedSynthetic),
}

impl WmSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            WmSpec::Model(m) => m.validate(),
            WmSpec::Synthetic(s) => s.curve.validate(),
        }
    }
}

impl UtilityOracle for WmSpec {
    fn wm_id(&self) -> &str {
        match self {
            WmSpec::Model(m) => m.wm_id(),
            WmSpec::Synthetic(s) => s.wm_id(),
        }
    }

    fn a_top(&self, grid: Grid) -> Units {
        match self {
            WmSpec::Model(m) => m.a_top(grid),
            WmSpec::Synthetic(s) => s.a_top(grid),
        }
    }

    fn utility(&self, x: Units, grid: Grid) -> f64 {
        match self {
            WmSpec::Model(m) => UtilityOracle::utility(m, x, grid),
            WmSpec::Synthetic(s) => UtilityOracle::utility(s, x, grid),
        }
    }
}

/// Wraps an oracle and counts the queries made through it.
pub struct CountingOracle<O> {
    inner: O,
    queries: AtomicUsize,
}

impl<O: UtilityOracle> CountingOracle<O> {
    pub fn new(inner: O) -> Self {
        CountingOracle {
            inner,
            queries: AtomicUsize::new(0),
        }
    }

    pub fn query(&self, x: Units, grid: Grid) -> f64 {
        self.queries.fetch_add(1, Ordering::Relaxed);
        self.inner.utility(x, grid)
    }

    pub fn queries(&self) -> usize {
        self.queries.load(Ordering::Relaxed)
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }
}

/// The data-center WM used in experiments: two classes with distinct
/// demand and contracts, parameterized by an index so that a configuration
/// of several WMs gets varied curves.
pub fn standard_wm(index: usize) -> WmModel {
    let variants = [
        (2.0, 1.0, 10.0, 0.5, 4.0, 0.25),
        (1.5, 2.5, 6.0, 0.8, 8.0, 0.4),
        (3.0, 1.0, 8.0, 0.4, 5.0, 0.6),
        (1.0, 2.0, 12.0, 0.6, 6.0, 0.3),
    ];
    let (l1, l2, p1, r1, p2, r2) = variants[index % variants.len()];
    let class = |arrival_rate: f64, payment: f64, response_threshold: f64| TransactionClass {
        arrival_rate,
        contract: ContractSpec {
            payment,
            response_threshold,
            smoothing_width: response_threshold * 0.02,
        },
    };
    WmModel {
        wm_id: format!("wm{index}"),
        classes: vec![class(l1, p1, r1), class(l2, p2, r2)],
        capacity_rate: 20.0,
        split_grid: 101,
    }
}

/// `n` near-step WMs whose step points exactly use up the resource: WM `i`
/// jumps at the left end of its slice of a random partition of the grid
/// (cuts drawn from the middle 80%) and ramps up over one grid unit to a
/// plateau drawn from `[1, 10)`. Every WM can be satisfied only by
/// allocations that pin all steps exactly. Returns the WMs and the largest
/// plateau.
pub fn near_step_family(n: usize, seed: u64, grid: Grid) -> (Vec<NamedSynthetic>, f64) {
    let g = grid.resolution();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cuts: Vec<u32> = (1..n).map(|_| rng.gen_range(g / 10..g * 9 / 10)).collect();
    cuts.push(0);
    cuts.push(g);
    cuts.sort_unstable();
    let ramp = 1.0 / g as f64;
    let mut eps_max: f64 = 0.0;
    let wms = (0..n)
        .map(|i| {
            let plateau: f64 = rng.gen_range(1.0..10.0);
            eps_max = eps_max.max(plateau);
            let width = cuts[i + 1] - cuts[i];
            NamedSynthetic {
                wm_id: format!("step{i}"),
                curve: SyntheticWm::NearStep {
                    jump: (width.max(2) - 1) as f64 / g as f64,
                    plateau,
                    ramp,
                },
            }
        })
        .collect();
    (wms, eps_max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn near_step_family_is_tight() {
        let grid = Grid::new(1000).unwrap();
        for seed in 0..20 {
            let (wms, eps) = near_step_family(3, seed, grid);
            // The first grid points at full plateau sum to exactly the grid.
            let mut total = 0;
            for w in &wms {
                let step = (0..=1000)
                    .find(|&x| w.utility(x, grid) >= w.curve.epsilon())
                    .unwrap();
                assert_eq!(w.utility(step - 1, grid), 0.0);
                total += step;
            }
            assert_eq!(total, 1000);
            assert!(wms.iter().all(|w| w.curve.epsilon() <= eps));
        }
    }

    fn two_class() -> WmModel {
        let class = TransactionClass {
            arrival_rate: 1.0,
            contract: ContractSpec {
                payment: 10.0,
                response_threshold: 1.0,
                smoothing_width: 0.0,
            },
        };
        WmModel {
            wm_id: "m".into(),
            classes: vec![class, class],
            capacity_rate: 20.0,
            split_grid: 101,
        }
    }

    #[test]
    fn mm1_cases() {
        assert_eq!(
            mm1_response_time(1.0, 2.0).unwrap(),
            ResponseTime::Finite(1.0)
        );
        assert_eq!(
            mm1_response_time(0.0, 4.0).unwrap(),
            ResponseTime::Finite(0.25)
        );
        assert_eq!(mm1_response_time(2.0, 2.0).unwrap(), ResponseTime::Unstable);
        assert!(mm1_response_time(1.0, 0.0).is_err());
        assert!(mm1_response_time(-1.0, 1.0).is_err());
    }

    #[test]
    fn contract_cases() {
        let hard = ContractSpec {
            payment: 10.0,
            response_threshold: 2.0,
            smoothing_width: 0.0,
        };
        assert_eq!(contract_payment(&hard, ResponseTime::Finite(1.0)), 10.0);
        assert_eq!(contract_payment(&hard, ResponseTime::Finite(3.0)), 0.0);
        assert_eq!(contract_payment(&hard, ResponseTime::Unstable), 0.0);
        let soft = ContractSpec {
            smoothing_width: 0.5,
            ..hard
        };
        assert_eq!(contract_payment(&soft, ResponseTime::Finite(2.0)), 5.0);
    }

    #[test]
    fn wm_utility_cases() {
        let m = two_class();
        let g = Grid::new(10).unwrap();
        assert_eq!(wm_utility(&m, 3, g), 20.0);
        assert_eq!(wm_utility(&m, 0, g), 0.0);
        // All capacity to one class: μ = 2, T = 1 ≤ R pays 10; the even split
        // leaves both classes unstable.
        assert_eq!(wm_utility(&m, 1, g), 10.0);
    }

    #[test]
    fn wm_utility_is_monotone_and_bounded() {
        let g = Grid::new(200).unwrap();
        for m in (0..4).map(standard_wm).chain([two_class()]) {
            let mut prev = 0.0;
            for x in 0..=200 {
                let u = wm_utility(&m, x, g);
                assert!(u >= prev - 1e-12, "{} at {x}", m.wm_id);
                assert!(u <= m.max_revenue() + 1e-12);
                prev = u;
            }
        }
    }

    #[test]
    fn near_step_cases() {
        let s = SyntheticWm::NearStep {
            jump: 0.5,
            plateau: 8.0,
            ramp: 0.001,
        };
        assert_eq!(s.utility(0.4), 0.0);
        assert_eq!(s.utility(0.6), 8.0);
        assert!((s.utility(0.5005) - 4.0).abs() < 1e-9);
        assert_eq!(s.epsilon(), 8.0);
    }

    #[test]
    fn random_monotone_is_monotone_and_deterministic() {
        let s = SyntheticWm::RandomMonotone {
            seed: 3,
            knots: 5,
            scale: 10.0,
        };
        let g = Grid::new(500).unwrap();
        let vals: Vec<f64> = (0..=500).map(|x| synthetic_utility(&s, x, g)).collect();
        assert_eq!(vals[0], 0.0);
        assert!(vals.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(
            vals,
            (0..=500)
                .map(|x| synthetic_utility(&s, x, g))
                .collect::<Vec<_>>()
        );
    }

    #[test]
    fn saturation_and_counting() {
        let g = Grid::new(100).unwrap();
        let m = standard_wm(0);
        let top = m.a_top(g);
        assert!((wm_utility(&m, top, g) - wm_utility(&m, 100, g)).abs() <= UTILITY_TOL);
        assert!(top == 0 || wm_utility(&m, top - 1, g) < wm_utility(&m, 100, g) - UTILITY_TOL);

        let c = CountingOracle::new(m);
        c.query(3, g);
        c.query(3, g);
        assert_eq!(c.queries(), 2);
    }
}
