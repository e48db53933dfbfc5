//! Minimax-regret allocations.
//!
//! Every allocation sits on a pointwise allocation (its SPA) plus a surplus
//! kept inside the bins just above it. Giving out more resource never
//! raises max regret, so only exhaustive allocations need to be searched,
//! and they are grouped by their SPA:
//!
//! * [`SolveMode::Exact`] searches every pointwise support exactly.
//! * [`SolveMode::Epa`] restricts the search to extensions of exhaustive
//!   pointwise allocations (EPAs), refining the surplus split iteratively
//!   and then certifying it. This is the classic formulation; it can miss
//!   the optimum when the best allocation leaves some WM below a threshold
//!   it could have reached.
//! * [`SolveMode::Approx`] evaluates a few extensions of each EPA.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Units, UTILITY_TOL};
use crate::knapsack::{self, Choice, Method};
use crate::regret::{self, common_grid, Allocation, RegretCertificate};
use crate::utility::SampleSet;

mod extension;

use extension::ExtensionGame;

/// An allocation placing every WM exactly at one of its sampled thresholds;
/// its value is known exactly.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PointwiseAllocation {
    pub shares: Vec<Units>,
}

impl PointwiseAllocation {
    pub fn to_allocation(&self) -> Allocation {
        Allocation::new(self.shares.clone())
    }

    pub fn total(&self) -> u64 {
        self.shares.iter().map(|&s| s as u64).sum()
    }
}

/// Resource an allocation holds beyond its supporting pointwise allocation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Surplus {
    pub total: Units,
    pub split: Vec<Units>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmrResult {
    pub allocation: Allocation,
    pub regret: f64,
    pub certificate: RegretCertificate,
    pub epa: PointwiseAllocation,
    /// Max-regret evaluations spent by the iterative surplus refinement.
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum SolveMode {
    /// Exact minimum over every exhaustive allocation.
    Exact,
    /// Exact minimum over the extensions of EPAs.
    Epa,
    /// Per EPA, the best of a few extensions (one deterministic, the rest
    /// random). The reported regret is still the true max regret of the
    /// returned allocation.
    Approx { extensions: usize },
}

impl Default for SolveMode {
    fn default() -> Self {
        SolveMode::Approx { extensions: 3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveOptions {
    pub mode: SolveMode,
    pub pruning: bool,
    pub seed: u64,
    pub method: Method,
    pub trace: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            mode: SolveMode::default(),
            pruning: true,
            seed: 0,
            method: Method::default(),
            trace: false,
        }
    }
}

impl SolveOptions {
    pub fn exact() -> Self {
        SolveOptions {
            mode: SolveMode::Exact,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveStats {
    /// Supports visited: pointwise allocations in exact mode, EPAs
    /// otherwise.
    pub epas: usize,
    /// Candidates (whole supports in the exact modes, single extensions in
    /// approx mode) skipped on the witness lower bound.
    pub pruned: usize,
    /// Full max-regret computations performed.
    pub mr_evaluations: usize,
    /// Refinement steps whose regret went up instead of down.
    pub refinement_increases: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpaTrace {
    pub epa: PointwiseAllocation,
    pub bound: Option<f64>,
    pub pruned: bool,
    pub regret: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub result: MmrResult,
    pub stats: SolveStats,
    pub trace: Vec<EpaTrace>,
}

/// Supporting pointwise allocation of `a` and the surplus above it.
pub fn spa(samples: &[SampleSet], a: &Allocation) -> Result<(PointwiseAllocation, Surplus)> {
    regret::check_allocation(samples, a)?;
    let shares: Vec<Units> = samples
        .iter()
        .zip(&a.shares)
        .map(|(s, &x)| s.floor_threshold(x))
        .collect();
    let split: Vec<Units> = a.shares.iter().zip(&shares).map(|(&x, &p)| x - p).collect();
    Ok((
        PointwiseAllocation { shares },
        Surplus {
            total: split.iter().sum(),
            split,
        },
    ))
}

pub fn is_epa(samples: &[SampleSet], p: &[Units]) -> bool {
    let g = samples[0].grid().resolution() as u64;
    let total: u64 = p.iter().map(|&x| x as u64).sum();
    total <= g
        && samples.iter().zip(p).all(|(s, &x)| {
            s.is_sampled(x)
                && s.next_threshold(x)
                    .is_none_or(|next| total - x as u64 + next as u64 > g)
        })
}

/// Whether `p` supports at least one exhaustive allocation: the surplus
/// fits inside the bins just above the shares.
pub fn is_support(samples: &[SampleSet], p: &[Units]) -> bool {
    let g = samples[0].grid().resolution() as u64;
    let total: u64 = p.iter().map(|&x| x as u64).sum();
    let room: u64 = samples
        .iter()
        .zip(p)
        .map(|(s, &x)| s.next_threshold(x).map_or(0, |next| (next - x - 1) as u64))
        .sum();
    total <= g && samples.iter().zip(p).all(|(s, &x)| s.is_sampled(x)) && total + room >= g
}

/// Lazily enumerates pointwise allocations in lexicographic order of
/// threshold indices, yielding those accepted by a filter.
pub struct PointwiseIter<'a> {
    samples: &'a [SampleSet],
    idx: Vec<usize>,
    capacity: u64,
    done: bool,
    keep: fn(&[SampleSet], &[Units]) -> bool,
}

/// Every EPA, in lexicographic order.
pub fn enumerate_epas(samples: &[SampleSet]) -> PointwiseIter<'_> {
    PointwiseIter::new(samples, is_epa)
}

/// Every SPA of an exhaustive allocation, in lexicographic order.
pub fn enumerate_supports(samples: &[SampleSet]) -> PointwiseIter<'_> {
    PointwiseIter::new(samples, is_support)
}

impl<'a> PointwiseIter<'a> {
    fn new(samples: &'a [SampleSet], keep: fn(&[SampleSet], &[Units]) -> bool) -> Self {
        PointwiseIter {
            samples,
            idx: vec![0; samples.len()],
            capacity: samples.first().map_or(0, |s| s.grid().resolution() as u64),
            done: samples.is_empty(),
            keep,
        }
    }

    fn share(&self, i: usize) -> u64 {
        self.samples[i].thresholds()[self.idx[i]] as u64
    }

    /// Moves to the next index vector. Thresholds increase, so once a
    /// prefix overspends every later index at that position does too and
    /// the whole subtree is skipped.
    fn advance(&mut self) {
        let n = self.idx.len();
        let mut pos = n - 1;
        let mut prefix = 0u64;
        for i in 0..n {
            prefix += self.share(i);
            if prefix > self.capacity {
                pos = i;
                break;
            }
        }
        let mut overspent = prefix > self.capacity;
        loop {
            for k in pos + 1..n {
                self.idx[k] = 0;
            }
            if !overspent {
                self.idx[pos] += 1;
                if self.idx[pos] < self.samples[pos].thresholds().len() {
                    return;
                }
            }
            overspent = false;
            self.idx[pos] = 0;
            if pos == 0 {
                self.done = true;
                return;
            }
            pos -= 1;
        }
    }
}

impl Iterator for PointwiseIter<'_> {
    type Item = PointwiseAllocation;

    fn next(&mut self) -> Option<PointwiseAllocation> {
        while !self.done {
            let shares: Vec<Units> = (0..self.idx.len())
                .map(|i| self.share(i) as Units)
                .collect();
            self.advance();
            if (self.keep)(self.samples, &shares) {
                return Some(PointwiseAllocation { shares });
            }
        }
        None
    }
}

fn check_nontrivial(samples: &[SampleSet]) -> Result<Grid> {
    let grid = common_grid(samples)?;
    let total: u64 = samples.iter().map(|s| s.a_top() as u64).sum();
    if total < grid.resolution() as u64 {
        return Err(Error::TrivialInstance {
            total,
            grid: grid.resolution(),
        });
    }
    Ok(grid)
}

fn surplus_of(samples: &[SampleSet], p: &PointwiseAllocation) -> u32 {
    let g = samples[0].grid().resolution() as u64;
    g.saturating_sub(p.total()) as u32
}

fn gap_above(s: &SampleSet, p: Units) -> f64 {
    match s.next_threshold(p) {
        Some(next) => {
            s.value_at_threshold(next).expect("threshold")
                - s.value_at_threshold(p).expect("threshold")
        }
        None => 0.0,
    }
}

fn extend(p: &PointwiseAllocation, split: &[(usize, u32)]) -> Allocation {
    let mut shares = p.shares.clone();
    for &(i, d) in split {
        shares[i] += d;
    }
    Allocation::new(shares)
}

/// The extension the refinement starts from: all surplus on the WM whose
/// bin above `p` has the largest gap.
fn initial_extension(samples: &[SampleSet], p: &PointwiseAllocation, delta: u32) -> Allocation {
    let movable: Vec<usize> = (0..samples.len())
        .filter(|&i| p.shares[i] < samples[i].a_top())
        .collect();
    let Some(&first) = movable.first() else {
        return p.to_allocation();
    };
    let target = movable.iter().copied().fold(first, |best, i| {
        if gap_above(&samples[i], p.shares[i]) > gap_above(&samples[best], p.shares[best]) {
            i
        } else {
            best
        }
    });
    extend(p, &[(target, delta)])
}

/// Why the iterative refinement stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefineStop {
    NoSurplus,
    NoSharedBins,
    RepeatedWitness,
    WitnessSurplusExceeds,
    Unchanged,
    IterationCap,
}

pub(crate) struct Refinement {
    pub best: RegretCertificate,
    pub evaluations: usize,
    pub increases: usize,
    pub stop: RefineStop,
    pub witnesses: Vec<Allocation>,
}

const REFINE_CAP: usize = 10_000;

/// Iterative surplus reallocation inside `E(p)`.
///
/// Each round computes the witness of the current extension. Where the
/// witness sits inside one of our bins just above `p` (a shared bin), it
/// claims that bin's upper value by spending more than our surplus there.
/// If the witness has `γ` free units to spend on shared bins, a bin is safe
/// once it holds at least `γ` units of our surplus, so `⌊δ/γ⌋` of the
/// largest-gap bins get `γ` each and the remainder goes to the next one.
pub(crate) fn refine_extensions(
    samples: &[SampleSet],
    p: &PointwiseAllocation,
    method: Method,
) -> Refinement {
    let grid = samples[0].grid().resolution() as i64;
    let delta = surplus_of(samples, p);
    let mut current = initial_extension(samples, p, delta);
    let first = regret::max_regret_with(samples, &current, method).expect("extension is feasible");
    let mut out = Refinement {
        witnesses: vec![first.witness.clone()],
        best: first.clone(),
        evaluations: 1,
        increases: 0,
        stop: RefineStop::NoSurplus,
    };
    if delta == 0 {
        return out;
    }
    let contested: Vec<usize> = (0..samples.len())
        .filter(|&i| p.shares[i] < samples[i].a_top() && gap_above(&samples[i], p.shares[i]) > 0.0)
        .collect();
    let mut ranked = contested.clone();
    ranked.sort_by(|&a, &b| {
        gap_above(&samples[b], p.shares[b])
            .total_cmp(&gap_above(&samples[a], p.shares[a]))
            .then(a.cmp(&b))
    });

    let mut seen: HashSet<Vec<Units>> = HashSet::new();
    let mut cert = first;
    loop {
        let w = &cert.witness.shares;
        let shared: Vec<usize> = contested
            .iter()
            .copied()
            .filter(|&i| {
                let next = samples[i].next_threshold(p.shares[i]).expect("contested");
                p.shares[i] < w[i] && w[i] < next
            })
            .collect();
        if shared.is_empty() {
            out.stop = RefineStop::NoSharedBins;
            break;
        }
        let witness_spa: Vec<Units> = samples
            .iter()
            .zip(w)
            .map(|(s, &x)| s.floor_threshold(x))
            .collect();
        if !seen.insert(witness_spa) {
            out.stop = RefineStop::RepeatedWitness;
            break;
        }
        let spent_elsewhere: i64 = (0..samples.len())
            .map(|i| {
                if shared.contains(&i) {
                    p.shares[i] as i64
                } else {
                    w[i] as i64
                }
            })
            .sum();
        let gamma = grid - spent_elsewhere;
        if gamma >= delta as i64 + shared.len() as i64 {
            out.stop = RefineStop::WitnessSurplusExceeds;
            break;
        }
        let gamma = gamma.max(1) as u32;
        let m = (delta / gamma) as usize;
        let mut split = vec![0u32; samples.len()];
        let covered = m.min(ranked.len());
        for &i in &ranked[..covered] {
            split[i] = gamma;
        }
        let rest = delta - gamma * covered as u32;
        let sink = ranked.get(covered).or(ranked.first()).copied();
        if let Some(i) = sink {
            split[i] += rest;
        }
        let pairs: Vec<(usize, u32)> = split.iter().copied().enumerate().collect();
        let next = extend(p, &pairs);
        if next == current {
            out.stop = RefineStop::Unchanged;
            break;
        }
        let next_cert =
            regret::max_regret_with(samples, &next, method).expect("extension is feasible");
        out.evaluations += 1;
        out.witnesses.push(next_cert.witness.clone());
        if next_cert.regret > cert.regret + UTILITY_TOL {
            out.increases += 1;
            log::debug!(
                "refinement in E({:?}) raised regret from {} to {}",
                p.shares,
                cert.regret,
                next_cert.regret
            );
        }
        if better(&next_cert, &out.best) {
            out.best = next_cert.clone();
        }
        current = next;
        cert = next_cert;
        if out.evaluations >= REFINE_CAP {
            out.stop = RefineStop::IterationCap;
            break;
        }
    }
    out
}

fn better(a: &RegretCertificate, b: &RegretCertificate) -> bool {
    a.regret < b.regret - UTILITY_TOL
        || ((a.regret - b.regret).abs() <= UTILITY_TOL && a.subject < b.subject)
}

/// Minimax-regret allocation restricted to the extensions of EPA `p`.
///
/// The iterative refinement runs first; with `certify` its result is then
/// used as the ceiling of an exhaustive search over surplus splits, which
/// only replaces it with better extensions.
pub fn mmr_over_extensions(
    samples: &[SampleSet],
    p: &PointwiseAllocation,
    certify: bool,
) -> Result<MmrResult> {
    mmr_over_extensions_with(samples, p, certify, Method::default()).map(|(r, _)| r)
}

fn mmr_over_extensions_with(
    samples: &[SampleSet],
    p: &PointwiseAllocation,
    certify: bool,
    method: Method,
) -> Result<(MmrResult, Refinement)> {
    common_grid(samples)?;
    if !is_epa(samples, &p.shares) {
        return Err(Error::domain(format!("{:?} is not an EPA", p.shares)));
    }
    let refinement = refine_extensions(samples, p, method);
    let mut best = refinement.best.clone();
    if certify {
        if let Some(cert) = search_support(samples, p, Some(best.regret), method)? {
            if better(&cert, &best) {
                best = cert;
            }
        }
    }
    Ok((
        MmrResult {
            allocation: best.subject.clone(),
            regret: best.regret,
            certificate: best,
            epa: p.clone(),
            iterations: refinement.evaluations,
        },
        refinement,
    ))
}

/// Exact minimax-regret allocation among the exhaustive allocations whose
/// SPA is `p`.
pub fn mmr_over_support(samples: &[SampleSet], p: &PointwiseAllocation) -> Result<MmrResult> {
    common_grid(samples)?;
    let cert = search_support(samples, p, None, Method::default())?.ok_or_else(|| {
        Error::domain(format!("{:?} supports no exhaustive allocation", p.shares))
    })?;
    Ok(MmrResult {
        allocation: cert.subject.clone(),
        regret: cert.regret,
        certificate: cert,
        epa: p.clone(),
        iterations: 0,
    })
}

/// Best extension of `p` with regret at most `ceiling`, certified by a full
/// max-regret computation.
fn search_support(
    samples: &[SampleSet],
    p: &PointwiseAllocation,
    ceiling: Option<f64>,
    method: Method,
) -> Result<Option<RegretCertificate>> {
    if !samples.iter().zip(&p.shares).all(|(s, &x)| s.is_sampled(x)) {
        return Err(Error::domain(format!("{:?} is not pointwise", p.shares)));
    }
    let g = samples[0].grid().resolution() as u64;
    if p.total() > g {
        return Ok(None);
    }
    let delta = (g - p.total()) as u32;
    let Some(game) = ExtensionGame::new(samples, &p.shares, delta) else {
        return Ok(None);
    };
    let Some((split, r)) = game.minimize(ceiling) else {
        return Ok(None);
    };
    let a = Allocation::new(game.allocation(&p.shares, &split));
    let cert = regret::max_regret_with(samples, &a, method)?;
    debug_assert!((cert.regret - r).abs() <= 1e-6, "{} vs {}", cert.regret, r);
    Ok(Some(cert))
}

/// Lower bound on the max regret of every extension of `p`, from a single
/// competing allocation `w`.
///
/// Against `p` itself `w` gains `MR(p, w)`. An extension can only cancel the
/// part `w` earns inside bins just above `p`, and cancelling bin `i` costs
/// `w_i − p_i` units of surplus; the best such cover is a tiny 0/1 knapsack.
pub fn extension_lower_bound(
    samples: &[SampleSet],
    p: &PointwiseAllocation,
    w: &Allocation,
) -> f64 {
    let delta = surplus_of(samples, p) as u64;
    let mut base = 0.0;
    let mut items: Vec<(u64, f64)> = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let (pi, wi) = (p.shares[i], w.shares[i]);
        let pv = s.value_at_threshold(pi).expect("pointwise share");
        let wv = s.upper(wi);
        base += wv - pv;
        if let Some(next) = s.next_threshold(pi) {
            if pi < wi && wi < next && wv > pv {
                items.push(((wi - pi) as u64, wv - pv));
            }
        }
    }
    let best_cover = if items.len() <= 16 {
        (0usize..(1 << items.len()))
            .filter_map(|mask| {
                let picked = items
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| mask & (1 << k) != 0);
                let (cost, gain) =
                    picked.fold((0u64, 0.0), |(c, g), (_, &(ci, gi))| (c + ci, g + gi));
                (cost <= delta).then_some(gain)
            })
            .fold(0.0, f64::max)
    } else {
        // Too many to enumerate: assuming every bin can be cancelled keeps
        // the bound valid, just weaker.
        items.iter().map(|&(_, g)| g).sum()
    };
    base - best_cover
}

/// Witnesses collected during a solve, used for lower bounds.
struct WitnessPool {
    list: Vec<Allocation>,
    seen: HashSet<Allocation>,
}

impl WitnessPool {
    fn new() -> Self {
        WitnessPool {
            list: Vec::new(),
            seen: HashSet::new(),
        }
    }

    fn add(&mut self, w: &Allocation) {
        if self.seen.insert(w.clone()) {
            self.list.push(w.clone());
        }
    }

    fn support_bound(&self, samples: &[SampleSet], p: &PointwiseAllocation) -> f64 {
        self.list
            .iter()
            .map(|w| extension_lower_bound(samples, p, w))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn allocation_bound(&self, samples: &[SampleSet], a: &Allocation) -> f64 {
        self.list
            .iter()
            .map(|w| regret::pairwise_unchecked(samples, a, w))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Finds a minimax-regret allocation.
///
/// With pruning on, a support (or, in approx mode, a single extension) is
/// skipped when its regret against some witness seen so far already exceeds
/// the incumbent. The result does not depend on pruning.
pub fn minimax_allocation(samples: &[SampleSet], opts: &SolveOptions) -> Result<Solution> {
    let grid = check_nontrivial(samples)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut stats = SolveStats::default();
    let mut trace = Vec::new();
    let mut incumbent: Option<MmrResult> = None;
    let mut pool = WitnessPool::new();

    // With pruning on, the optimistic allocation seeds both the witness pool
    // and the pruning threshold. It is never returned itself, so the result
    // is the same with pruning off.
    let mut seed_regret = f64::INFINITY;
    if opts.pruning {
        let a = optimistic_allocation(samples)?;
        let cert = regret::max_regret_with(samples, &a, opts.method)?;
        stats.mr_evaluations += 1;
        seed_regret = cert.regret;
        pool.add(&cert.witness);
    }

    let supports = match opts.mode {
        SolveMode::Exact => enumerate_supports(samples),
        _ => enumerate_epas(samples),
    };
    for p in supports {
        stats.epas += 1;
        let delta = surplus_of(samples, &p);
        let threshold = incumbent
            .as_ref()
            .map_or(seed_regret, |inc| inc.regret.min(seed_regret));
        match opts.mode {
            SolveMode::Exact | SolveMode::Epa => {
                let bound = opts.pruning.then(|| pool.support_bound(samples, &p));
                if let Some(b) = bound {
                    if b > threshold + UTILITY_TOL {
                        stats.pruned += 1;
                        if opts.trace {
                            trace.push(EpaTrace {
                                epa: p,
                                bound,
                                pruned: true,
                                regret: None,
                            });
                        }
                        continue;
                    }
                }
                let found = if opts.mode == SolveMode::Exact {
                    let ceiling = opts.pruning.then_some(threshold);
                    let cert = search_support(samples, &p, ceiling, opts.method)?;
                    stats.mr_evaluations += usize::from(cert.is_some());
                    cert.map(|c| MmrResult {
                        allocation: c.subject.clone(),
                        regret: c.regret,
                        certificate: c,
                        epa: p.clone(),
                        iterations: 0,
                    })
                } else {
                    let (r, refinement) = mmr_over_extensions_with(samples, &p, true, opts.method)?;
                    stats.mr_evaluations += refinement.evaluations + usize::from(delta > 0);
                    stats.refinement_increases += refinement.increases;
                    for w in &refinement.witnesses {
                        pool.add(w);
                    }
                    Some(r)
                };
                if opts.trace {
                    trace.push(EpaTrace {
                        epa: p.clone(),
                        bound,
                        pruned: false,
                        regret: found.as_ref().map(|r| r.regret),
                    });
                }
                if let Some(r) = found {
                    pool.add(&r.certificate.witness);
                    if incumbent
                        .as_ref()
                        .is_none_or(|inc| better(&r.certificate, &inc.certificate))
                    {
                        incumbent = Some(r);
                    }
                }
            }
            SolveMode::Approx { extensions } => {
                let mut candidates = vec![initial_extension(samples, &p, delta)];
                let movable: Vec<usize> = (0..samples.len())
                    .filter(|&i| p.shares[i] < samples[i].a_top())
                    .collect();
                if delta > 0 && !movable.is_empty() {
                    for _ in 0..extensions {
                        candidates.push(random_extension(&p, &movable, delta, &mut rng));
                    }
                }
                let mut epa_best: Option<f64> = None;
                let mut epa_bound: Option<f64> = None;
                let mut all_pruned = true;
                for a in candidates {
                    if opts.pruning {
                        let threshold = incumbent
                            .as_ref()
                            .map_or(seed_regret, |inc| inc.regret.min(seed_regret));
                        let lb = pool.allocation_bound(samples, &a);
                        epa_bound = Some(epa_bound.map_or(lb, |b: f64| b.min(lb)));
                        if lb > threshold + UTILITY_TOL {
                            stats.pruned += 1;
                            continue;
                        }
                    }
                    all_pruned = false;
                    let cert = regret::max_regret_with(samples, &a, opts.method)?;
                    stats.mr_evaluations += 1;
                    pool.add(&cert.witness);
                    epa_best = Some(epa_best.map_or(cert.regret, |b: f64| b.min(cert.regret)));
                    if incumbent
                        .as_ref()
                        .is_none_or(|inc| better(&cert, &inc.certificate))
                    {
                        incumbent = Some(MmrResult {
                            allocation: a,
                            regret: cert.regret,
                            certificate: cert,
                            epa: p.clone(),
                            iterations: 0,
                        });
                    }
                }
                if opts.trace {
                    trace.push(EpaTrace {
                        epa: p,
                        bound: epa_bound,
                        pruned: all_pruned,
                        regret: epa_best,
                    });
                }
            }
        }
    }
    let result = incumbent
        .ok_or_else(|| Error::domain(format!("no support found on grid {}", grid.resolution())))?;
    Ok(Solution {
        result,
        stats,
        trace,
    })
}

/// Uniformly random split of `delta` over the `movable` WMs.
fn random_extension(
    p: &PointwiseAllocation,
    movable: &[usize],
    delta: u32,
    rng: &mut impl Rng,
) -> Allocation {
    let mut cuts: Vec<u32> = (0..movable.len() - 1)
        .map(|_| rng.gen_range(0..=delta))
        .collect();
    cuts.push(0);
    cuts.push(delta);
    cuts.sort_unstable();
    let split: Vec<(usize, u32)> = movable
        .iter()
        .copied()
        .zip(cuts.windows(2).map(|w| w[1] - w[0]))
        .collect();
    extend(p, &split)
}

/// Best allocation if every WM's utility sat on its upper envelope,
/// extended to use all usable resource (lexicographically smallest).
pub fn optimistic_allocation(samples: &[SampleSet]) -> Result<Allocation> {
    let grid = common_grid(samples)?;
    let groups: Vec<Vec<Choice>> = samples
        .iter()
        .map(|s| {
            s.upper_utility()
                .levels()
                .iter()
                .map(|l| Choice {
                    cost: l.start,
                    value: l.value,
                })
                .collect()
        })
        .collect();
    let sol = knapsack::solve(&groups, grid.resolution(), Method::default())
        .expect("zero allocation is always feasible");
    let mut shares = sol.costs;
    let mut left = grid.resolution() - shares.iter().sum::<u32>();
    for (i, s) in samples.iter().enumerate().rev() {
        let room = s.a_top() - shares[i];
        let add = room.min(left);
        shares[i] += add;
        left -= add;
    }
    Ok(Allocation::new(shares))
}

/// Builds an EPA by repeatedly raising the WM with the best utility gain per
/// unit of resource to its next threshold.
pub fn greedy_epa(samples: &[SampleSet]) -> Result<PointwiseAllocation> {
    let grid = common_grid(samples)?;
    let g = grid.resolution() as u64;
    let mut shares: Vec<Units> = vec![0; samples.len()];
    loop {
        let total: u64 = shares.iter().map(|&x| x as u64).sum();
        let mut best: Option<(usize, Units, f64)> = None;
        for (i, s) in samples.iter().enumerate() {
            let Some(next) = s.next_threshold(shares[i]) else {
                continue;
            };
            let step = next - shares[i];
            if total + step as u64 > g {
                continue;
            }
            let gain = s.value_at_threshold(next).expect("threshold")
                - s.value_at_threshold(shares[i]).expect("threshold");
            let score = gain / grid.to_real(step);
            if best.is_none_or(|(_, _, b)| score > b) {
                best = Some((i, next, score));
            }
        }
        match best {
            Some((i, next, _)) => shares[i] = next,
            None => return Ok(PointwiseAllocation { shares }),
        }
    }
}
