use mmr_alloc::instance::random_instance;
use mmr_alloc::minimax::{minimax_allocation, optimistic_allocation, spa, SolveMode, SolveOptions};
use mmr_alloc::regret::pairwise_max_regret;
use mmr_alloc::utility::epsilon_max;
use mmr_alloc::{max_regret, Allocation, Grid, SampleSet};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-9;

fn instance(seed: u64, n: usize, g: u32) -> (ChaCha8Rng, Vec<SampleSet>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sets = random_instance(&mut rng, n, 4, Grid::new(g).unwrap());
    (rng, sets)
}

fn allocation(rng: &mut ChaCha8Rng, sets: &[SampleSet], g: u32) -> Allocation {
    let mut left = g;
    Allocation::new(
        sets.iter()
            .map(|s| {
                let x = rng.gen_range(0..=left.min(s.a_top()));
                left -= x;
                x
            })
            .collect(),
    )
}

/// Adds one consistent sample at a random unsampled point, if any.
fn refine(rng: &mut ChaCha8Rng, sets: &[SampleSet]) -> Option<Vec<SampleSet>> {
    let i = rng.gen_range(0..sets.len());
    let s = &sets[i];
    let free: Vec<u32> = (0..=s.a_top()).filter(|&x| !s.is_sampled(x)).collect();
    if free.is_empty() {
        return None;
    }
    let x = free[rng.gen_range(0..free.len())];
    let (lo, hi) = (s.lower(x), s.upper(x));
    let u = lo + (hi - lo) * rng.gen_range(0..=4) as f64 / 4.0;
    let mut out = sets.to_vec();
    out[i] = s.add_sample(x, u).unwrap();
    Some(out)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn max_regret_dominates_every_pairwise_regret(seed: u64, n in 1usize..=3, g in 5u32..=40) {
        let (mut rng, sets) = instance(seed, n, g);
        let a = allocation(&mut rng, &sets, g);
        let mr = max_regret(&sets, &a).unwrap();
        for _ in 0..5 {
            let b = allocation(&mut rng, &sets, g);
            prop_assert!(pairwise_max_regret(&sets, &a, &b).unwrap() <= mr.regret + TOL);
        }
        prop_assert!((pairwise_max_regret(&sets, &a, &mr.witness).unwrap() - mr.regret).abs() <= TOL);
    }

    #[test]
    fn rounding_down_never_lowers_max_regret(seed: u64, n in 1usize..=4, g in 5u32..=200) {
        let (mut rng, sets) = instance(seed, n, g);
        let a = allocation(&mut rng, &sets, g);
        let (p, _) = spa(&sets, &a).unwrap();
        let p = p.to_allocation();
        prop_assert!(max_regret(&sets, &a).unwrap().regret <= max_regret(&sets, &p).unwrap().regret + TOL);
    }

    #[test]
    fn optimistic_regret_is_within_the_summed_gaps(seed: u64, n in 1usize..=4, g in 5u32..=200) {
        let (_, sets) = instance(seed, n, g);
        let a = optimistic_allocation(&sets).unwrap();
        let mr = max_regret(&sets, &a).unwrap().regret;
        let gaps: f64 = sets.iter().zip(&a.shares).map(|(s, &x)| s.upper(x) - s.lower(x)).sum();
        prop_assert!(mr <= gaps + TOL);
        prop_assert!(mr <= n as f64 * epsilon_max(&sets).unwrap() + TOL);
        if n <= 2 {
            prop_assert!(mr <= 2.0 * epsilon_max(&sets).unwrap() + TOL);
        }
    }

    #[test]
    fn new_samples_tighten_envelopes(seed: u64, n in 1usize..=3, g in 5u32..=60) {
        let (mut rng, sets) = instance(seed, n, g);
        if let Some(next) = refine(&mut rng, &sets) {
            for (old, new) in sets.iter().zip(&next) {
                for x in 0..=g {
                    prop_assert!(new.upper(x) <= old.upper(x) + TOL);
                    prop_assert!(new.lower(x) >= old.lower(x) - TOL);
                }
            }
        }
    }

    #[test]
    fn new_samples_never_raise_minimax_regret(seed: u64, n in 1usize..=3, g in 5u32..=30) {
        let (mut rng, sets) = instance(seed, n, g);
        let before = minimax_allocation(&sets, &SolveOptions::exact()).unwrap().result;
        if let Some(next) = refine(&mut rng, &sets) {
            let after = minimax_allocation(&next, &SolveOptions::exact()).unwrap().result;
            prop_assert!(after.regret <= before.regret + TOL);
            // The old allocation's regret can only shrink as well.
            prop_assert!(max_regret(&next, &before.allocation).unwrap().regret <= before.regret + TOL);
        }
    }

    #[test]
    fn approximations_never_beat_the_exact_solver(seed: u64, n in 1usize..=3, g in 5u32..=30, extensions in 1usize..=4) {
        let (_, sets) = instance(seed, n, g);
        let exact = minimax_allocation(&sets, &SolveOptions::exact()).unwrap().result;
        for mode in [SolveMode::Epa, SolveMode::Approx { extensions }] {
            let opts = SolveOptions { mode, seed, ..SolveOptions::default() };
            let approx = minimax_allocation(&sets, &opts).unwrap().result;
            prop_assert!(approx.regret >= exact.regret - TOL);
            prop_assert!((max_regret(&sets, &approx.allocation).unwrap().regret - approx.regret).abs() <= TOL);
        }
    }

    #[test]
    fn solver_allocations_are_exhaustive(seed: u64, n in 1usize..=3, g in 5u32..=30) {
        let (_, sets) = instance(seed, n, g);
        for opts in [SolveOptions::exact(), SolveOptions::default()] {
            let a = minimax_allocation(&sets, &opts).unwrap().result.allocation;
            prop_assert_eq!(a.total(), g as u64);
            prop_assert!(sets.iter().zip(&a.shares).all(|(s, &x)| x <= s.a_top()));
        }
    }
}
