//! Query strategies and the negotiation loop.
//!
//! A negotiation bootstraps every WM with a few samples, then alternates
//! between solving for a minimax-regret allocation and asking each WM one
//! more utility query, until regret is small enough, the round budget runs
//! out, or no WM has a bin left to split.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Units, UTILITY_TOL};
use crate::minimax::{minimax_allocation, MmrResult, SolveOptions};
use crate::regret::{self, Allocation};
use crate::sim::{CountingOracle, UtilityOracle};
use crate::utility::{Bin, SampleSet};

/// Scaled height plus scaled width of bin `j` (1-based). `None` for a WM
/// with nothing to query (saturated at 0).
pub fn bin_score(s: &SampleSet, j: usize) -> Option<f64> {
    if s.a_top() == 0 {
        return None;
    }
    Some(score(s, &s.bin(j)))
}

fn score(s: &SampleSet, bin: &Bin) -> f64 {
    let top = s.top_value();
    let du = if top > 0.0 { bin.gap() / top } else { 0.0 };
    du + bin.width() as f64 / s.a_top() as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub wm_id: String,
    pub point: Units,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StrategySpec {
    /// One uniformly random unsampled point per WM.
    Random,
    /// The midpoint of each WM's widest bin.
    HalveAll,
    /// The midpoint of the higher-scoring of the allocation's bin and the
    /// witness's bin. With `exact_point`, the witness's share itself is
    /// asked instead when it is unsampled.
    HeuristicSplit {
        #[serde(default)]
        exact_point: bool,
    },
}

impl StrategySpec {
    pub fn name(&self) -> &'static str {
        match self {
            StrategySpec::Random => "random",
            StrategySpec::HalveAll => "halve-all",
            StrategySpec::HeuristicSplit { exact_point: false } => "heuristic-split",
            StrategySpec::HeuristicSplit { exact_point: true } => "heuristic-exact",
        }
    }
}

impl std::str::FromStr for StrategySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(StrategySpec::Random),
            "halve-all" => Ok(StrategySpec::HalveAll),
            "heuristic-split" => Ok(StrategySpec::HeuristicSplit { exact_point: false }),
            "heuristic-exact" => Ok(StrategySpec::HeuristicSplit { exact_point: true }),
            other => Err(Error::domain(format!(
                "unknown strategy {other:?} (expected random, halve-all, heuristic-split or heuristic-exact)"
            ))),
        }
    }
}

impl std::fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// The bin a share belongs to. Bins are closed on the right, so a share at
/// a threshold belongs to the bin it ends; a share of 0 belongs to bin 1.
fn bin_of(s: &SampleSet, x: Units) -> usize {
    let x = x.min(s.a_top());
    s.bin_index(x).map_or(s.num_bins(), |p| p.index.max(1))
}

/// Bins of `s` ordered by score, best first, ties to the lower index.
fn ranked_bins(s: &SampleSet) -> Vec<Bin> {
    let mut bins: Vec<Bin> = s.bins().collect();
    bins.sort_by(|a, b| {
        score(s, b)
            .total_cmp(&score(s, a))
            .then(a.index.cmp(&b.index))
    });
    bins
}

fn random_point(s: &SampleSet, rng: &mut impl Rng) -> Option<Units> {
    let free = (s.a_top() as usize + 1).saturating_sub(s.thresholds().len());
    if free == 0 {
        return None;
    }
    let mut k = rng.gen_range(0..free);
    for x in 0..=s.a_top() {
        if !s.is_sampled(x) {
            if k == 0 {
                return Some(x);
            }
            k -= 1;
        }
    }
    unreachable!("free count matches unsampled points")
}

fn halving_point(s: &SampleSet) -> Option<Units> {
    s.bins()
        .filter(|b| b.width() >= 2)
        .fold(None::<Bin>, |best, b| match best {
            Some(w) if w.width() >= b.width() => Some(w),
            _ => Some(b),
        })
        .and_then(|b| b.midpoint())
}

fn heuristic_point(
    s: &SampleSet,
    share: Units,
    witness: Units,
    exact_point: bool,
) -> Option<Units> {
    if exact_point && witness <= s.a_top() && !s.is_sampled(witness) {
        return Some(witness);
    }
    let own = s.bin(bin_of(s, share));
    let wit = s.bin(bin_of(s, witness));
    let first = if score(s, &wit) > score(s, &own) + UTILITY_TOL {
        [wit, own]
    } else {
        [own, wit]
    };
    first
        .into_iter()
        .chain(ranked_bins(s))
        .find_map(|b| b.midpoint())
}

/// Outcome of asking a strategy for the next round of queries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NextQueries {
    /// At most one query per WM; WMs with nothing to split are left out.
    Queries(Vec<Query>),
    /// No WM has a bin that can be split.
    Exhausted,
}

/// The provisioner's view of a negotiation in progress.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegotiationState {
    pub samples: Vec<SampleSet>,
    pub round: usize,
    pub queries_per_wm: Vec<usize>,
    pub current: Option<MmrResult>,
    pub strategy: StrategySpec,
    pub regret_threshold: f64,
    pub max_rounds: usize,
    pub rng_seed: u64,
}

pub fn next_queries(state: &NegotiationState, rng: &mut impl Rng) -> Result<NextQueries> {
    let mut out = Vec::new();
    for (i, s) in state.samples.iter().enumerate() {
        if s.a_top() == 0 {
            continue;
        }
        let point = match state.strategy {
            StrategySpec::Random => random_point(s, rng),
            StrategySpec::HalveAll => halving_point(s),
            StrategySpec::HeuristicSplit { exact_point } => {
                let cur = state
                    .current
                    .as_ref()
                    .ok_or_else(|| Error::domain("heuristic split needs a solved allocation"))?;
                heuristic_point(
                    s,
                    cur.allocation.shares[i],
                    cur.certificate.witness.shares[i],
                    exact_point,
                )
            }
        };
        if let Some(point) = point {
            out.push(Query {
                wm_id: s.wm_id().to_string(),
                point,
            });
        }
    }
    Ok(if out.is_empty() {
        NextQueries::Exhausted
    } else {
        NextQueries::Queries(out)
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NegotiationConfig {
    pub grid: Grid,
    pub strategy: StrategySpec,
    pub regret_threshold: f64,
    pub max_rounds: usize,
    pub seed: u64,
    pub solve: SolveOptions,
    /// Random points asked of each WM before the first solve, on top of 0
    /// and its saturation point.
    #[serde(default = "default_bootstrap")]
    pub bootstrap_random: usize,
}

fn default_bootstrap() -> usize {
    2
}

/// One solve step of a negotiation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub queries_per_wm: Vec<usize>,
    pub mmr: f64,
    pub allocation: Vec<Units>,
    pub witness: Vec<Units>,
    pub solve_ms: f64,
    pub prunes: usize,
    pub mr_evaluations: usize,
    /// The fresh solve was worse than the previous allocation, which was
    /// kept.
    pub kept_incumbent: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Threshold,
    MaxRounds,
    Exhausted,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NegotiationTrace {
    pub rounds: Vec<RoundRecord>,
    pub stop: StopReason,
    pub state: NegotiationState,
}

fn ask<O: UtilityOracle>(
    oracle: &CountingOracle<O>,
    s: &SampleSet,
    x: Units,
    grid: Grid,
) -> Result<SampleSet> {
    let u = oracle.query(x, grid);
    s.add_sample(x, u)
}

/// Runs a full negotiation against the given WMs.
pub fn run_negotiation<O: UtilityOracle>(
    oracles: &[CountingOracle<O>],
    cfg: &NegotiationConfig,
) -> Result<NegotiationTrace> {
    if oracles.is_empty() {
        return Err(Error::domain(
            "negotiation needs at least one workload manager",
        ));
    }
    if !(cfg.regret_threshold >= 0.0) {
        return Err(Error::domain("regret threshold must be nonnegative"));
    }
    let grid = cfg.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base: Vec<usize> = oracles.iter().map(|o| o.queries()).collect();

    // Bootstrap: both ends of the useful range plus a few random points.
    let mut samples = Vec::with_capacity(oracles.len());
    for o in oracles {
        let top = o.inner().a_top(grid);
        let mut points = vec![top];
        let mut inner: Vec<Units> = (1..top).collect();
        inner.shuffle(&mut rng);
        points.extend(inner.into_iter().take(cfg.bootstrap_random));
        let mut s = SampleSet::new(o.inner().wm_id(), grid, vec![(0, o.query(0, grid))])?;
        // `top` goes first so later points fall inside the sampled range.
        for x in points.into_iter().filter(|&x| x > 0) {
            let u = o.query(x, grid);
            s = if x > s.a_top() {
                extend_top(&s, x, u)?
            } else {
                s.add_sample(x, u)?
            };
        }
        samples.push(s);
    }

    let mut state = NegotiationState {
        queries_per_wm: oracles
            .iter()
            .zip(&base)
            .map(|(o, b)| o.queries() - b)
            .collect(),
        samples,
        round: 0,
        current: None,
        strategy: cfg.strategy,
        regret_threshold: cfg.regret_threshold,
        max_rounds: cfg.max_rounds,
        rng_seed: cfg.seed,
    };
    let mut rounds = Vec::new();
    let stop = loop {
        let opts = SolveOptions {
            seed: cfg
                .solve
                .seed
                .wrapping_add(cfg.seed)
                .wrapping_add(state.round as u64),
            ..cfg.solve.clone()
        };
        let started = Instant::now();
        let solution = minimax_allocation(&state.samples, &opts)?;
        let mut result = solution.result;
        let mut kept_incumbent = false;
        if let Some(prev) = &state.current {
            let cert = regret::max_regret_with(&state.samples, &prev.allocation, opts.method)?;
            if cert.regret < result.regret - UTILITY_TOL {
                kept_incumbent = true;
                result = MmrResult {
                    allocation: prev.allocation.clone(),
                    regret: cert.regret,
                    certificate: cert,
                    epa: prev.epa.clone(),
                    iterations: 0,
                };
            }
        }
        let solve_ms = started.elapsed().as_secs_f64() * 1e3;
        rounds.push(RoundRecord {
            round: state.round,
            queries_per_wm: state.queries_per_wm.clone(),
            mmr: result.regret,
            allocation: result.allocation.shares.clone(),
            witness: result.certificate.witness.shares.clone(),
            solve_ms,
            prunes: solution.stats.pruned,
            mr_evaluations: solution.stats.mr_evaluations,
            kept_incumbent,
        });
        log::debug!(
            "round {}: mmr {} at {:?}",
            state.round,
            result.regret,
            result.allocation.shares
        );
        state.current = Some(result);

        if state
            .current
            .as_ref()
            .is_some_and(|c| c.regret <= cfg.regret_threshold)
        {
            break StopReason::Threshold;
        }
        if rounds.len() >= cfg.max_rounds {
            break StopReason::MaxRounds;
        }
        let queries = match next_queries(&state, &mut rng)? {
            NextQueries::Exhausted => break StopReason::Exhausted,
            NextQueries::Queries(q) => q,
        };
        for q in queries {
            let i = state
                .samples
                .iter()
                .position(|s| s.wm_id() == q.wm_id)
                .expect("query targets a known WM");
            state.samples[i] = ask(&oracles[i], &state.samples[i], q.point, grid)?;
            state.queries_per_wm[i] = oracles[i].queries() - base[i];
        }
        state.round += 1;
    };
    Ok(NegotiationTrace {
        rounds,
        stop,
        state,
    })
}

/// Appends a sample beyond the current top threshold (bootstrap only).
fn extend_top(s: &SampleSet, x: Units, u: f64) -> Result<SampleSet> {
    if u < s.top_value() - UTILITY_TOL {
        return Err(Error::Consistency {
            wm: s.wm_id().to_string(),
            msg: format!(
                "response {u} at {x} is below the sample {} at {}",
                s.top_value(),
                s.a_top()
            ),
        });
    }
    let mut pts: Vec<(Units, f64)> = s
        .thresholds()
        .iter()
        .copied()
        .zip(s.values().iter().copied())
        .collect();
    pts.push((x, u.max(s.top_value())));
    SampleSet::new(s.wm_id(), s.grid(), pts)
}

/// Max regret of the allocation reported for a round, recomputed from the
/// samples known at that point.
pub fn recheck(samples: &[SampleSet], allocation: &[Units]) -> Result<f64> {
    Ok(regret::max_regret(samples, &Allocation::new(allocation.to_vec()))?.regret)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::StepOracle;
    use crate::utility::StepUtility;

    fn g10() -> Grid {
        Grid::new(10).unwrap()
    }

    fn i2() -> Vec<SampleSet> {
        vec![
            SampleSet::new("wm1", g10(), vec![(0, 0.0), (5, 4.0), (10, 10.0)]).unwrap(),
            SampleSet::new("wm2", g10(), vec![(0, 0.0), (5, 6.0), (10, 8.0)]).unwrap(),
        ]
    }

    fn state(samples: Vec<SampleSet>, strategy: StrategySpec) -> NegotiationState {
        NegotiationState {
            queries_per_wm: vec![0; samples.len()],
            samples,
            round: 0,
            current: None,
            strategy,
            regret_threshold: 0.0,
            max_rounds: 10,
            rng_seed: 0,
        }
    }

    #[test]
    fn bin_score_cases() {
        let s = i2();
        assert!((bin_score(&s[0], 2).unwrap() - 1.1).abs() < 1e-12);
        let flat = SampleSet::new(
            "f",
            Grid::new(4).unwrap(),
            vec![(0, 0.0), (1, 2.0), (2, 2.0), (4, 3.0)],
        )
        .unwrap();
        assert!((bin_score(&flat, 2).unwrap() - 0.25).abs() < 1e-12);
        let one = SampleSet::new("o", g10(), vec![(0, 0.0), (10, 1e-6)]).unwrap();
        assert_eq!(bin_score(&one, 1).unwrap(), 2.0);
        let zero = SampleSet::new("z", g10(), vec![(0, 0.0)]).unwrap();
        assert_eq!(bin_score(&zero, 1), None);
    }

    #[test]
    fn halve_all_queries_midpoints() {
        let s = SampleSet::new("a", g10(), vec![(0, 1.0), (10, 5.0)]).unwrap();
        let st = state(vec![s], StrategySpec::HalveAll);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            next_queries(&st, &mut rng).unwrap(),
            NextQueries::Queries(vec![Query {
                wm_id: "a".into(),
                point: 5
            }])
        );
    }

    #[test]
    fn heuristic_split_picks_higher_scoring_bin() {
        let s = i2();
        let mut st = state(
            s.clone(),
            StrategySpec::HeuristicSplit { exact_point: false },
        );
        let cert = crate::regret::max_regret(&s, &vec![10, 0].into()).unwrap();
        let mut cert = cert;
        cert.witness = vec![4, 6].into();
        st.current = Some(MmrResult {
            allocation: vec![10, 0].into(),
            regret: cert.regret,
            certificate: cert,
            epa: crate::minimax::PointwiseAllocation {
                shares: vec![10, 0],
            },
            iterations: 0,
        });
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let NextQueries::Queries(q) = next_queries(&st, &mut rng).unwrap() else {
            panic!("expected queries");
        };
        assert_eq!(q[0].point, 7);
        assert!(heuristic_point(&s[0], 10, 4, false) == Some(7));
    }

    #[test]
    fn random_is_reproducible_and_unsampled() {
        let st = state(i2(), StrategySpec::Random);
        let a = next_queries(&st, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = next_queries(&st, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        let NextQueries::Queries(q) = a else { panic!() };
        assert!(q
            .iter()
            .all(|q| q.point != 0 && q.point != 5 && q.point != 10));
    }

    #[test]
    fn fully_sampled_is_exhausted() {
        let s = SampleSet::new(
            "a",
            Grid::new(2).unwrap(),
            vec![(0, 0.0), (1, 1.0), (2, 2.0)],
        )
        .unwrap();
        for strategy in [StrategySpec::Random, StrategySpec::HalveAll] {
            let st = state(vec![s.clone()], strategy);
            assert_eq!(
                next_queries(&st, &mut ChaCha8Rng::seed_from_u64(0)).unwrap(),
                NextQueries::Exhausted
            );
        }
    }

    fn step_oracles(sets: &[SampleSet]) -> Vec<CountingOracle<StepOracle>> {
        sets.iter()
            .map(|s| {
                // True curve: jumps to each sampled value right after the
                // previous threshold.
                CountingOracle::new(StepOracle {
                    wm_id: s.wm_id().to_string(),
                    curve: s.upper_utility(),
                })
            })
            .collect()
    }

    #[test]
    fn single_wm_reaches_zero_regret() {
        let curve = StepUtility::from_levels(vec![
            crate::utility::Level {
                start: 0,
                value: 0.0,
            },
            crate::utility::Level {
                start: 37,
                value: 5.0,
            },
            crate::utility::Level {
                start: 100,
                value: 6.0,
            },
        ])
        .unwrap();
        let oracles = vec![CountingOracle::new(StepOracle {
            wm_id: "solo".into(),
            curve,
        })];
        let cfg = NegotiationConfig {
            grid: Grid::new(100).unwrap(),
            strategy: StrategySpec::HalveAll,
            regret_threshold: 0.0,
            max_rounds: 5,
            seed: 1,
            solve: SolveOptions::exact(),
            bootstrap_random: 2,
        };
        let t = run_negotiation(&oracles, &cfg).unwrap();
        assert_eq!(t.stop, StopReason::Threshold);
        assert_eq!(t.rounds.len(), 1);
        assert_eq!(t.rounds[0].allocation, vec![100]);
        assert_eq!(t.rounds[0].mmr, 0.0);
        assert_eq!(t.rounds[0].queries_per_wm, vec![oracles[0].queries()]);
    }

    #[test]
    fn step_oracle_negotiation_terminates_at_zero() {
        let g = Grid::new(20).unwrap();
        let truth = vec![
            SampleSet::new("wm1", g, vec![(0, 0.0), (10, 4.0), (20, 10.0)]).unwrap(),
            SampleSet::new("wm2", g, vec![(0, 0.0), (10, 6.0), (20, 8.0)]).unwrap(),
        ];
        let oracles = step_oracles(&truth);
        let cfg = NegotiationConfig {
            grid: g,
            strategy: StrategySpec::HeuristicSplit { exact_point: false },
            regret_threshold: 0.0,
            max_rounds: 100,
            seed: 3,
            solve: SolveOptions::exact(),
            bootstrap_random: 2,
        };
        let t = run_negotiation(&oracles, &cfg).unwrap();
        assert_eq!(t.stop, StopReason::Threshold);
        assert!(t.rounds.windows(2).all(|w| w[1].mmr <= w[0].mmr + 1e-9));
        assert_eq!(t.rounds.last().unwrap().mmr, 0.0);
        for (o, &q) in oracles.iter().zip(&t.state.queries_per_wm) {
            assert_eq!(o.queries(), q);
        }
    }

    #[test]
    fn inconsistent_oracle_is_reported() {
        struct Liar;
        impl UtilityOracle for Liar {
            fn wm_id(&self) -> &str {
                "liar"
            }
            fn a_top(&self, g: Grid) -> Units {
                g.resolution()
            }
            fn utility(&self, x: Units, _: Grid) -> f64 {
                if x == 0 {
                    0.0
                } else {
                    10.0 - x as f64 / 10.0
                }
            }
        }
        let cfg = NegotiationConfig {
            grid: Grid::new(100).unwrap(),
            strategy: StrategySpec::HalveAll,
            regret_threshold: 0.0,
            max_rounds: 5,
            seed: 0,
            solve: SolveOptions::default(),
            bootstrap_random: 2,
        };
        let err = run_negotiation(&[CountingOracle::new(Liar)], &cfg).unwrap_err();
        assert!(matches!(err, Error::Consistency { ref wm, .. } if wm == "liar"));
    }
}
