//! Serialized problem instances and random instance generation.

use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Units};
use crate::regret::Allocation;
use crate::utility::SampleSet;

/// One negotiation snapshot: the samples of every WM, optionally with an
/// allocation to evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    /// Grid resolution; 0 (or absent) leaves the choice to the reader.
    #[serde(default)]
    pub grid: u32,
    #[serde(rename = "wm")]
    pub wms: Vec<WmSamples>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allocation: Option<Vec<Units>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WmSamples {
    pub id: String,
    /// `(grid point, utility)` pairs.
    pub samples: Vec<(Units, f64)>,
}

impl Instance {
    pub fn from_sample_sets(sets: &[SampleSet], allocation: Option<&Allocation>) -> Self {
        Instance {
            grid: sets.first().map_or(0, |s| s.grid().resolution()),
            wms: sets
                .iter()
                .map(|s| WmSamples {
                    id: s.wm_id().to_string(),
                    samples: s
                        .thresholds()
                        .iter()
                        .copied()
                        .zip(s.values().iter().copied())
                        .collect(),
                })
                .collect(),
            allocation: allocation.map(|a| a.shares.clone()),
        }
    }

    pub fn sample_sets(&self) -> Result<Vec<SampleSet>> {
        let grid = Grid::new(self.grid)?;
        if self.wms.is_empty() {
            return Err(Error::domain("instance has no workload managers"));
        }
        self.wms
            .iter()
            .map(|w| SampleSet::new(w.id.clone(), grid, w.samples.clone()))
            .collect()
    }

    pub fn allocation(&self) -> Option<Allocation> {
        self.allocation.clone().map(Allocation::new)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        toml::from_str(&text).map_err(|e| Error::config(path.display().to_string(), e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("instance serializes")
    }
}

/// A random sample set with `bins` bins whose last threshold is `a_top`,
/// utilities drawn as nondecreasing integers up to `max_value`.
pub fn random_sample_set<R: Rng>(
    rng: &mut R,
    id: &str,
    grid: Grid,
    bins: usize,
    a_top: Units,
    max_value: u32,
) -> SampleSet {
    let bins = bins.clamp(1, a_top.max(1) as usize);
    let mut thresholds: Vec<Units> = if a_top == 0 {
        vec![0]
    } else {
        let mut inner: Vec<Units> = sample(rng, a_top as usize - 1, bins - 1)
            .into_iter()
            .map(|x| x as Units + 1)
            .collect();
        inner.sort_unstable();
        let mut t = vec![0];
        t.extend(inner);
        t.push(a_top);
        t
    };
    thresholds.dedup();
    let mut values: Vec<f64> = (0..thresholds.len())
        .map(|i| {
            if i == 0 {
                0.0
            } else {
                rng.gen_range(0..=max_value) as f64
            }
        })
        .collect();
    values.sort_by(f64::total_cmp);
    SampleSet::new(id, grid, thresholds.into_iter().zip(values).collect())
        .expect("generated samples are valid")
}

/// Random non-trivial instance: `n` WMs with 1..=`max_bins` bins each and
/// saturation points summing to at least the grid.
pub fn random_instance<R: Rng>(
    rng: &mut R,
    n: usize,
    max_bins: usize,
    grid: Grid,
) -> Vec<SampleSet> {
    let g = grid.resolution();
    loop {
        let tops: Vec<Units> = (0..n)
            .map(|_| {
                if rng.gen_bool(0.6) {
                    g
                } else {
                    rng.gen_range(1..=g)
                }
            })
            .collect();
        if tops.iter().map(|&t| t as u64).sum::<u64>() < g as u64 {
            continue;
        }
        return tops
            .iter()
            .enumerate()
            .map(|(i, &top)| {
                let bins = rng.gen_range(1..=max_bins);
                random_sample_set(rng, &format!("wm{i}"), grid, bins, top, 20)
            })
            .collect();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn toml_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sets = random_instance(&mut rng, 3, 4, Grid::new(50).unwrap());
        let inst = Instance::from_sample_sets(&sets, Some(&vec![10, 20, 20].into()));
        let back: Instance = toml::from_str(&inst.to_toml()).unwrap();
        assert_eq!(back, inst);
        assert_eq!(back.sample_sets().unwrap(), sets);
    }

    #[test]
    fn random_instances_are_nontrivial() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let sets = random_instance(&mut rng, 3, 4, Grid::new(20).unwrap());
            assert!(sets.iter().map(|s| s.a_top() as u64).sum::<u64>() >= 20);
            assert!(sets.iter().all(|s| s.num_bins() <= 4));
        }
    }
}
