//! Partially known utility curves.
//!
//! A [`SampleSet`] holds the points a workload manager has revealed. Between
//! two consecutive sampled thresholds the true curve is only known to lie
//! between the two sampled values, so every set of samples describes a band
//! of feasible monotone curves. [`SampleSet::adversarial_utility`] picks the
//! member of that band that is worst for a given allocation and best for
//! every competitor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Units, UTILITY_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Lower,
    Upper,
}

/// Where a point sits relative to the sampled thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinPosition {
    /// Bin index `j`: the point lies in `(τ^{j-1}, τ^j)`, or equals `τ^j`.
    pub index: usize,
    pub at_threshold: bool,
}

/// The interval between two consecutive sampled thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bin {
    /// 1-based bin index.
    pub index: usize,
    pub lo: Units,
    pub hi: Units,
    pub u_lo: f64,
    pub u_hi: f64,
}

impl Bin {
    pub fn gap(&self) -> f64 {
        self.u_hi - self.u_lo
    }

    pub fn width(&self) -> Units {
        self.hi - self.lo
    }

    /// Grid midpoint, rounded down; `None` when the bin has no interior point.
    pub fn midpoint(&self) -> Option<Units> {
        (self.width() >= 2).then(|| self.lo + (self.hi - self.lo) / 2)
    }
}

/// Sampled utility points of one workload manager.
///
/// Thresholds are strictly increasing, start at 0 and end at the saturation
/// point `a_top`; utility is constant beyond `a_top`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SampleRecord", into = "SampleRecord")]
pub struct SampleSet {
    wm_id: String,
    grid: Grid,
    thresholds: Vec<Units>,
    values: Vec<f64>,
}

/// Plain text form of a [`SampleSet`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRecord {
    pub wm_id: String,
    pub grid: u32,
    /// `(threshold_units, utility)` pairs.
    pub samples: Vec<(Units, f64)>,
}

impl TryFrom<SampleRecord> for SampleSet {
    type Error = Error;

    fn try_from(r: SampleRecord) -> Result<Self> {
        SampleSet::new(r.wm_id, Grid::new(r.grid)?, r.samples)
    }
}

impl From<SampleSet> for SampleRecord {
    fn from(s: SampleSet) -> Self {
        SampleRecord {
            wm_id: s.wm_id,
            grid: s.grid.resolution(),
            samples: s.thresholds.into_iter().zip(s.values).collect(),
        }
    }
}

impl SampleSet {
    /// Builds a sample set from `(threshold, utility)` pairs. The last pair
    /// is taken as the saturation point.
    pub fn new(wm_id: impl Into<String>, grid: Grid, samples: Vec<(Units, f64)>) -> Result<Self> {
        let wm_id = wm_id.into();
        if samples.is_empty() {
            return Err(Error::domain(format!("{wm_id}: no samples")));
        }
        if samples[0].0 != 0 {
            return Err(Error::domain(format!(
                "{wm_id}: first sample must be at 0, got {}",
                samples[0].0
            )));
        }
        let mut thresholds = Vec::with_capacity(samples.len());
        let mut values: Vec<f64> = Vec::with_capacity(samples.len());
        for (x, v) in samples {
            grid.check(x)?;
            if !v.is_finite() {
                return Err(Error::domain(format!(
                    "{wm_id}: utility {v} at {x} is not finite"
                )));
            }
            if let (Some(&px), Some(&pv)) = (thresholds.last(), values.last()) {
                if x <= px {
                    return Err(Error::domain(format!(
                        "{wm_id}: thresholds must be strictly increasing ({px} then {x})"
                    )));
                }
                if v < pv - UTILITY_TOL {
                    return Err(Error::Consistency {
                        wm: wm_id,
                        msg: format!("utility decreases from {pv} at {px} to {v} at {x}"),
                    });
                }
                thresholds.push(x);
                values.push(v.max(pv));
            } else {
                thresholds.push(x);
                values.push(v);
            }
        }
        Ok(SampleSet {
            wm_id,
            grid,
            thresholds,
            values,
        })
    }

    pub fn wm_id(&self) -> &str {
        &self.wm_id
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn thresholds(&self) -> &[Units] {
        &self.thresholds
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn a_top(&self) -> Units {
        *self.thresholds.last().expect("non-empty")
    }

    pub fn top_value(&self) -> f64 {
        *self.values.last().expect("non-empty")
    }

    pub fn num_bins(&self) -> usize {
        self.thresholds.len() - 1
    }

    /// Bin `j`, 1-based.
    pub fn bin(&self, j: usize) -> Bin {
        assert!(j >= 1 && j <= self.num_bins(), "bin index {j} out of range");
        Bin {
            index: j,
            lo: self.thresholds[j - 1],
            hi: self.thresholds[j],
            u_lo: self.values[j - 1],
            u_hi: self.values[j],
        }
    }

    pub fn bins(&self) -> impl Iterator<Item = Bin> + '_ {
        (1..=self.num_bins()).map(|j| self.bin(j))
    }

    pub fn is_sampled(&self, x: Units) -> bool {
        self.thresholds.binary_search(&x).is_ok()
    }

    /// Index of the bin holding `x`; at a threshold `τ^j` the index is `j`.
    pub fn bin_index(&self, x: Units) -> Result<BinPosition> {
        self.grid.check(x)?;
        if x > self.a_top() {
            return Err(Error::domain(format!(
                "{}: {x} lies above the saturation point {}",
                self.wm_id,
                self.a_top()
            )));
        }
        Ok(match self.thresholds.binary_search(&x) {
            Ok(j) => BinPosition {
                index: j,
                at_threshold: true,
            },
            Err(j) => BinPosition {
                index: j,
                at_threshold: false,
            },
        })
    }

    /// Bounds on the utility at `x` implied by the samples and monotonicity.
    pub fn envelope(&self, x: Units, side: Side) -> f64 {
        if x >= self.a_top() {
            return self.top_value();
        }
        match self.thresholds.binary_search(&x) {
            Ok(j) => self.values[j],
            Err(j) => match side {
                Side::Lower => self.values[j - 1],
                Side::Upper => self.values[j],
            },
        }
    }

    pub fn lower(&self, x: Units) -> f64 {
        self.envelope(x, Side::Lower)
    }

    pub fn upper(&self, x: Units) -> f64 {
        self.envelope(x, Side::Upper)
    }

    /// Greatest sampled threshold at or below `x`.
    pub fn floor_threshold(&self, x: Units) -> Units {
        match self.thresholds.binary_search(&x) {
            Ok(j) => self.thresholds[j],
            Err(j) => self.thresholds[j - 1],
        }
    }

    /// Least sampled threshold strictly above `x`, if any.
    pub fn next_threshold(&self, x: Units) -> Option<Units> {
        let j = self.thresholds.partition_point(|&t| t <= x);
        self.thresholds.get(j).copied()
    }

    pub fn value_at_threshold(&self, t: Units) -> Option<f64> {
        self.thresholds
            .binary_search(&t)
            .ok()
            .map(|j| self.values[j])
    }

    /// The feasible curve sitting on the upper envelope everywhere.
    pub fn upper_utility(&self) -> StepUtility {
        let mut b = LevelBuilder::new(self.values[0]);
        for bin in self.bins() {
            b.push(bin.lo + 1, bin.u_hi);
        }
        b.finish()
    }

    /// The feasible curve that gives `a` its least utility and every other
    /// point its greatest.
    ///
    /// Inside the bin holding `a` the curve stays at the bin's lower value up
    /// to and including `a` and jumps to the upper value right after it;
    /// every other bin sits at its upper value. At a threshold this is just
    /// the upper envelope.
    pub fn adversarial_utility(&self, a: Units) -> Result<StepUtility> {
        let pos = self.bin_index(a)?;
        if pos.at_threshold {
            return Ok(self.upper_utility());
        }
        let mut b = LevelBuilder::new(self.values[0]);
        for bin in self.bins() {
            if bin.index == pos.index {
                b.push(a + 1, bin.u_hi);
            } else {
                b.push(bin.lo + 1, bin.u_hi);
            }
        }
        Ok(b.finish())
    }

    /// Records a new sample. Re-sending an existing sample is a no-op.
    pub fn add_sample(&self, x: Units, u: f64) -> Result<SampleSet> {
        let pos = self.bin_index(x)?;
        if !u.is_finite() {
            return Err(self.inconsistent(format!("utility {u} at {x} is not finite")));
        }
        if pos.at_threshold {
            let known = self.values[pos.index];
            if (known - u).abs() > UTILITY_TOL {
                return Err(
                    self.inconsistent(format!("{x} was sampled at {known}, new response {u}"))
                );
            }
            return Ok(self.clone());
        }
        let (lo, hi) = (self.lower(x), self.upper(x));
        if u < lo - UTILITY_TOL || u > hi + UTILITY_TOL {
            return Err(self.inconsistent(format!(
                "response {u} at {x} is outside the envelope [{lo}, {hi}]"
            )));
        }
        let mut next = self.clone();
        next.thresholds.insert(pos.index, x);
        next.values.insert(pos.index, u.clamp(lo, hi));
        Ok(next)
    }

    fn inconsistent(&self, msg: String) -> Error {
        Error::Consistency {
            wm: self.wm_id.clone(),
            msg,
        }
    }
}

/// Largest bin gap over all workload managers.
pub fn epsilon_max(sets: &[SampleSet]) -> Result<f64> {
    if sets.is_empty() {
        return Err(Error::domain("epsilon_max of an empty WM list"));
    }
    Ok(sets
        .iter()
        .flat_map(|s| s.bins().map(|b| b.gap()))
        .fold(0.0, f64::max))
}

/// One constant piece of a [`StepUtility`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Level {
    /// First grid point carrying `value`.
    pub start: Units,
    pub value: f64,
}

/// A nondecreasing step function on the grid.
///
/// Stored as levels `(start, value)`; level `ℓ` covers
/// `[start_ℓ, start_{ℓ+1})`, which on the grid is the right-closed interval
/// `(start_ℓ − 1, start_{ℓ+1} − 1]`. The last level extends to the end of the
/// grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepUtility {
    levels: Vec<Level>,
}

impl StepUtility {
    pub fn from_levels(levels: Vec<Level>) -> Result<Self> {
        match levels.first() {
            Some(l) if l.start == 0 => {}
            _ => return Err(Error::domain("step utility must start with a level at 0")),
        }
        for w in levels.windows(2) {
            if w[1].start <= w[0].start || w[1].value < w[0].value {
                return Err(Error::domain(
                    "step utility levels must have increasing starts and nondecreasing values",
                ));
            }
        }
        Ok(StepUtility { levels })
    }

    pub fn constant(value: f64) -> Self {
        StepUtility {
            levels: vec![Level { start: 0, value }],
        }
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn eval(&self, x: Units) -> f64 {
        let i = self.levels.partition_point(|l| l.start <= x);
        self.levels[i - 1].value
    }

    /// Value at 0 followed by right-closed `(end, value)` pieces.
    pub fn breakpoints(&self, grid: Grid) -> (f64, Vec<(Units, f64)>) {
        let mut out = Vec::with_capacity(self.levels.len());
        for (i, l) in self.levels.iter().enumerate().skip(1) {
            let end = self
                .levels
                .get(i + 1)
                .map_or(grid.resolution(), |n| n.start - 1);
            out.push((end, l.value));
        }
        // The first level may also cover points above 0.
        let first_end = self
            .levels
            .get(1)
            .map_or(grid.resolution(), |n| n.start - 1);
        let base = self.levels[0].value;
        if first_end > 0 {
            out.insert(0, (first_end, base));
        }
        (base, out)
    }

    /// True when the curve is nondecreasing and reproduces every sample.
    pub fn is_feasible_for(&self, s: &SampleSet) -> bool {
        let monotone = self.levels.windows(2).all(|w| w[1].value >= w[0].value);
        monotone
            && s.thresholds()
                .iter()
                .zip(s.values())
                .all(|(&t, &v)| (self.eval(t) - v).abs() <= UTILITY_TOL)
            && (self.eval(s.grid().resolution()) - s.top_value()).abs() <= UTILITY_TOL
    }
}

/// Appends levels, dropping those that would not raise the value.
struct LevelBuilder {
    levels: Vec<Level>,
}

impl LevelBuilder {
    fn new(base: f64) -> Self {
        LevelBuilder {
            levels: vec![Level {
                start: 0,
                value: base,
            }],
        }
    }

    fn push(&mut self, start: Units, value: f64) {
        let last = self.levels.last().expect("non-empty");
        if value > last.value {
            debug_assert!(start > last.start);
            self.levels.push(Level { start, value });
        }
    }

    fn finish(self) -> StepUtility {
        StepUtility {
            levels: self.levels,
        }
    }
}

/// One feasible curve per workload manager.
pub type UtilityVector = Vec<StepUtility>;

#[cfg(test)]
mod tests {
    use super::*;

    fn g10() -> Grid {
        Grid::new(10).unwrap()
    }

    fn wm1() -> SampleSet {
        SampleSet::new("wm1", g10(), vec![(0, 0.0), (5, 4.0), (10, 10.0)]).unwrap()
    }

    #[test]
    fn bin_index_cases() {
        let s = wm1();
        assert_eq!(
            s.bin_index(7).unwrap(),
            BinPosition {
                index: 2,
                at_threshold: false
            }
        );
        assert_eq!(
            s.bin_index(5).unwrap(),
            BinPosition {
                index: 1,
                at_threshold: true
            }
        );
        assert_eq!(
            s.bin_index(0).unwrap(),
            BinPosition {
                index: 0,
                at_threshold: true
            }
        );
        assert!(s.bin_index(11).is_err());
    }

    #[test]
    fn bin_index_above_saturation_is_error() {
        let s = SampleSet::new("w", g10(), vec![(0, 0.0), (8, 9.0)]).unwrap();
        assert!(s.bin_index(9).is_err());
    }

    #[test]
    fn envelope_cases() {
        let s = wm1();
        assert_eq!((s.lower(7), s.upper(7)), (4.0, 10.0));
        assert_eq!((s.lower(5), s.upper(5)), (4.0, 4.0));
        let sat = SampleSet::new(
            "w",
            Grid::new(20).unwrap(),
            vec![(0, 0.0), (8, 5.0), (16, 9.0)],
        )
        .unwrap();
        assert_eq!((sat.lower(19), sat.upper(19)), (9.0, 9.0));
    }

    #[test]
    fn adversarial_interior() {
        let s = wm1();
        let u = s.adversarial_utility(7).unwrap();
        assert_eq!(u.eval(0), 0.0);
        for x in 1..=7 {
            assert_eq!(u.eval(x), 4.0, "x={x}");
        }
        for x in 8..=10 {
            assert_eq!(u.eval(x), 10.0);
        }
        assert!(u.is_feasible_for(&s));
    }

    #[test]
    fn adversarial_threshold_is_upper_envelope() {
        let s = wm1();
        let at5 = s.adversarial_utility(5).unwrap();
        let at0 = s.adversarial_utility(0).unwrap();
        assert_eq!(at5, s.upper_utility());
        assert_eq!(at0, at5);
        assert_eq!(at5.eval(3), 4.0);
        assert_eq!(at5.eval(5), 4.0);
        assert_eq!(at5.eval(6), 10.0);
    }

    #[test]
    fn epsilon_max_cases() {
        let wm2 = SampleSet::new("wm2", g10(), vec![(0, 0.0), (5, 6.0), (10, 8.0)]).unwrap();
        assert_eq!(epsilon_max(&[wm1(), wm2]).unwrap(), 6.0);
        let one = SampleSet::new("w", g10(), vec![(0, 0.0), (10, 10.0)]).unwrap();
        assert_eq!(epsilon_max(&[one]).unwrap(), 10.0);
        let flat = SampleSet::new("f", g10(), vec![(0, 5.0), (10, 5.0)]).unwrap();
        let small = SampleSet::new("s", g10(), vec![(0, 0.0), (10, 3.0)]).unwrap();
        assert_eq!(epsilon_max(&[flat, small]).unwrap(), 3.0);
        assert!(epsilon_max(&[]).is_err());
    }

    #[test]
    fn add_sample_cases() {
        let s = SampleSet::new("wm1", g10(), vec![(0, 0.0), (10, 10.0)]).unwrap();
        let s2 = s.add_sample(5, 4.0).unwrap();
        assert_eq!(s2, wm1());
        assert_eq!(s2.add_sample(5, 4.0).unwrap(), s2);
        assert!(matches!(
            s2.add_sample(2, 5.0),
            Err(Error::Consistency { .. })
        ));
        assert!(matches!(
            s2.add_sample(5, 4.5),
            Err(Error::Consistency { .. })
        ));
    }

    #[test]
    fn decreasing_samples_rejected() {
        assert!(SampleSet::new("w", g10(), vec![(0, 1.0), (10, 0.0)]).is_err());
        assert!(SampleSet::new("w", g10(), vec![(1, 0.0), (10, 1.0)]).is_err());
    }

    #[test]
    fn breakpoints_are_right_closed() {
        let u = wm1().adversarial_utility(7).unwrap();
        let (base, bp) = u.breakpoints(g10());
        assert_eq!(base, 0.0);
        assert_eq!(bp, vec![(7, 4.0), (10, 10.0)]);
    }

    #[test]
    fn record_round_trip() {
        let text = toml::to_string(&wm1()).unwrap();
        let back: SampleSet = toml::from_str(&text).unwrap();
        assert_eq!(back, wm1());
    }
}
