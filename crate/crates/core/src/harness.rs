//! Strategy-comparison experiments: configuration, runs, CSV records and
//! plot data.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elicit::{run_negotiation, NegotiationConfig, StrategySpec};
use crate::error::{Error, Result};
use crate::grid::{Grid, Units, DEFAULT_RESOLUTION};
use crate::knapsack::Method;
use crate::minimax::{SolveMode, SolveOptions};
use crate::sim::{CountingOracle, WmSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeName {
    Exact,
    Epa,
    Approx,
}

fn default_extensions() -> usize {
    3
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub mode: ModeName,
    #[serde(default = "default_extensions")]
    pub extensions: usize,
    #[serde(default = "default_true")]
    pub pruning: bool,
    #[serde(default)]
    pub method: Method,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            mode: ModeName::Approx,
            extensions: default_extensions(),
            pruning: true,
            method: Method::default(),
        }
    }
}

impl SolverConfig {
    pub fn options(&self) -> SolveOptions {
        SolveOptions {
            mode: match self.mode {
                ModeName::Exact => SolveMode::Exact,
                ModeName::Epa => SolveMode::Epa,
                ModeName::Approx => SolveMode::Approx {
                    extensions: self.extensions,
                },
            },
            pruning: self.pruning,
            seed: 0,
            method: self.method,
            trace: false,
        }
    }
}

fn default_grid() -> u32 {
    DEFAULT_RESOLUTION
}

fn default_bootstrap() -> usize {
    2
}

/// A full experiment, usually read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_grid")]
    pub grid: u32,
    /// Optional cross-check on the number of `[[wm]]` entries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_wms: Option<usize>,
    pub strategies: Vec<String>,
    pub seeds: Vec<u64>,
    /// Solve rounds per run (rows per run in the output).
    pub rounds: usize,
    #[serde(default)]
    pub regret_threshold: f64,
    #[serde(default = "default_bootstrap")]
    pub bootstrap_random: usize,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Record solve wall time. Off makes output files byte-for-byte
    /// reproducible.
    #[serde(default = "default_true")]
    pub timing: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(rename = "wm")]
    pub wms: Vec<WmSpec>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::config(origin, e.to_string()))?;
        cfg.validate(origin)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn strategies(&self) -> Result<Vec<StrategySpec>> {
        self.strategies
            .iter()
            .enumerate()
            .map(|(i, s)| {
                s.parse()
                    .map_err(|e: Error| Error::config(format!("strategies[{i}]"), e.to_string()))
            })
            .collect()
    }

    pub fn validate(&self, origin: &str) -> Result<()> {
        let fail = |field: &str, msg: String| Err(Error::config(format!("{origin}: {field}"), msg));
        if self.grid < 100 {
            return fail("grid", format!("must be at least 100, got {}", self.grid));
        }
        if self.wms.is_empty() {
            return fail("wm", "at least one workload manager is required".into());
        }
        if let Some(n) = self.n_wms {
            if n != self.wms.len() {
                return fail(
                    "n_wms",
                    format!("is {n} but {} [[wm]] entries are given", self.wms.len()),
                );
            }
        }
        if self.seeds.is_empty() {
            return fail("seeds", "must not be empty".into());
        }
        if self.strategies.is_empty() {
            return fail("strategies", "must not be empty".into());
        }
        self.strategies().map_err(|e| match e {
            Error::Config { path, msg } => Error::Config {
                path: format!("{origin}: {path}"),
                msg,
            },
            other => other,
        })?;
        if self.rounds == 0 {
            return fail("rounds", "must be at least 1".into());
        }
        if !(self.regret_threshold >= 0.0) {
            return fail("regret_threshold", "must be nonnegative".into());
        }
        for (i, wm) in self.wms.iter().enumerate() {
            if let Err(e) = wm.validate() {
                return fail(&format!("wm[{i}]"), e.to_string());
            }
        }
        let mut ids: Vec<&str> = self
            .wms
            .iter()
            .map(crate::sim::UtilityOracle::wm_id)
            .collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return fail("wm", format!("duplicate wm_id {:?}", w[0]));
        }
        Ok(())
    }
}

/// One row of experiment output.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_id: usize,
    pub seed: u64,
    pub strategy: String,
    pub round: usize,
    /// Queries asked of the most-queried WM so far.
    pub queries_per_wm: usize,
    pub mmr: f64,
    pub allocation: Vec<Units>,
    pub solve_ms: f64,
    pub prunes: usize,
}

/// Runs one negotiation with the WMs, grid and solver of `cfg` and returns
/// its rows.
pub fn run_single(
    cfg: &ExperimentConfig,
    strategy: StrategySpec,
    seed: u64,
    run_id: usize,
) -> Result<Vec<RunRecord>> {
    let grid = Grid::new(cfg.grid)?;
    let oracles: Vec<CountingOracle<WmSpec>> =
        cfg.wms.iter().cloned().map(CountingOracle::new).collect();
    let ncfg = NegotiationConfig {
        grid,
        strategy,
        regret_threshold: cfg.regret_threshold,
        max_rounds: cfg.rounds,
        seed,
        solve: cfg.solver.options(),
        bootstrap_random: cfg.bootstrap_random,
    };
    let trace = run_negotiation(&oracles, &ncfg)?;
    log::info!(
        "run {run_id} ({strategy}, seed {seed}): {} rounds, final mmr {}, stop {:?}",
        trace.rounds.len(),
        trace.rounds.last().map_or(f64::NAN, |r| r.mmr),
        trace.stop
    );
    Ok(trace
        .rounds
        .into_iter()
        .map(|r| RunRecord {
            run_id,
            seed,
            strategy: strategy.name().to_string(),
            round: r.round,
            queries_per_wm: r.queries_per_wm.iter().copied().max().unwrap_or(0),
            mmr: r.mmr,
            allocation: r.allocation,
            solve_ms: if cfg.timing { r.solve_ms } else { 0.0 },
            prunes: r.prunes,
        })
        .collect())
}

/// Runs every (seed, strategy) pair, in parallel, and returns the rows in
/// canonical order: by run id (seed-major), then round.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    cfg.validate("config")?;
    let strategies = cfg.strategies()?;
    let runs: Vec<(usize, u64, StrategySpec)> = cfg
        .seeds
        .iter()
        .flat_map(|&seed| strategies.iter().map(move |&s| (seed, s)))
        .enumerate()
        .map(|(id, (seed, s))| (id, seed, s))
        .collect();
    let per_run: Vec<Vec<RunRecord>> = runs
        .par_iter()
        .map(|&(run_id, seed, strategy)| run_single(cfg, strategy, seed, run_id))
        .collect::<Result<_>>()?;
    // `par_iter().collect()` keeps input order, which is run-id order.
    Ok(per_run.into_iter().flatten().collect())
}

const FIXED_COLUMNS: [&str; 6] = [
    "run_id",
    "seed",
    "strategy",
    "round",
    "queries_per_wm",
    "mmr",
];

pub fn write_csv<W: Write>(records: &[RunRecord], out: W) -> Result<()> {
    let n = records.first().map_or(0, |r| r.allocation.len());
    if records.iter().any(|r| r.allocation.len() != n) {
        return Err(Error::domain("records disagree on the number of WMs"));
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((0..n).map(|i| format!("alloc_{i}")));
    header.push("solve_ms".into());
    header.push("prunes".into());
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.run_id.to_string(),
            r.seed.to_string(),
            r.strategy.clone(),
            r.round.to_string(),
            r.queries_per_wm.to_string(),
            r.mmr.to_string(),
        ];
        row.extend(r.allocation.iter().map(|a| a.to_string()));
        row.push(r.solve_ms.to_string());
        row.push(r.prunes.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    let n = header.iter().filter(|h| h.starts_with("alloc_")).count();
    let expected: Vec<String> = FIXED_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain((0..n).map(|i| format!("alloc_{i}")))
        .chain(["solve_ms".to_string(), "prunes".to_string()])
        .collect();
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::domain(format!("unexpected CSV header {header:?}")));
    }
    let bad = |line: usize, what: &str| Error::domain(format!("CSV row {line}: bad {what}"));
    let mut out = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row?;
        let field = |i: usize| row.get(i).unwrap_or("");
        out.push(RunRecord {
            run_id: field(0).parse().map_err(|_| bad(line, "run_id"))?,
            seed: field(1).parse().map_err(|_| bad(line, "seed"))?,
            strategy: field(2).to_string(),
            round: field(3).parse().map_err(|_| bad(line, "round"))?,
            queries_per_wm: field(4).parse().map_err(|_| bad(line, "queries_per_wm"))?,
            mmr: field(5).parse().map_err(|_| bad(line, "mmr"))?,
            allocation: (0..n)
                .map(|i| field(6 + i).parse().map_err(|_| bad(line, "allocation")))
                .collect::<Result<_>>()?,
            solve_ms: field(6 + n).parse().map_err(|_| bad(line, "solve_ms"))?,
            prunes: field(7 + n).parse().map_err(|_| bad(line, "prunes"))?,
        });
    }
    Ok(out)
}

/// One point of a per-strategy regret curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesPoint {
    pub strategy: String,
    pub queries_per_wm: usize,
    pub mean_mmr: f64,
    pub min_mmr: f64,
    pub max_mmr: f64,
    pub runs: usize,
}

/// Regret of one run as a step function of queries per WM: the last
/// recorded value at or below `q`, held after the run stops.
pub fn mmr_at(rows: &[&RunRecord], q: usize) -> Option<f64> {
    rows.iter()
        .take_while(|r| r.queries_per_wm <= q)
        .last()
        .map(|r| r.mmr)
}

/// Mean, min and max regret per (strategy, queries per WM) over runs. A run
/// that stopped early keeps its final regret for later query counts.
pub fn aggregate(records: &[RunRecord]) -> Result<Vec<SeriesPoint>> {
    if records.is_empty() {
        return Err(Error::domain("no records to aggregate"));
    }
    let mut by_strategy: BTreeMap<&str, BTreeMap<usize, Vec<&RunRecord>>> = BTreeMap::new();
    for r in records {
        by_strategy
            .entry(&r.strategy)
            .or_default()
            .entry(r.run_id)
            .or_default()
            .push(r);
    }
    let mut out = Vec::new();
    for (strategy, runs) in by_strategy {
        let mut qs: Vec<usize> = runs.values().flatten().map(|r| r.queries_per_wm).collect();
        qs.sort_unstable();
        qs.dedup();
        for q in qs {
            let vals: Vec<f64> = runs
                .values()
                .filter_map(|rows| {
                    let mut rows = rows.clone();
                    rows.sort_by_key(|r| r.round);
                    mmr_at(&rows, q)
                })
                .collect();
            if vals.is_empty() {
                continue;
            }
            out.push(SeriesPoint {
                strategy: strategy.to_string(),
                queries_per_wm: q,
                mean_mmr: vals.iter().sum::<f64>() / vals.len() as f64,
                min_mmr: vals.iter().copied().fold(f64::INFINITY, f64::min),
                max_mmr: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                runs: vals.len(),
            });
        }
    }
    Ok(out)
}

fn write_series<W: Write>(points: &[SeriesPoint], mut out: W, note: &str) -> Result<()> {
    writeln!(out, "# {note}")?;
    writeln!(
        out,
        "# strategy queries_per_wm mean_mmr min_mmr max_mmr runs"
    )?;
    let mut last: Option<&str> = None;
    for p in points {
        if last.is_some_and(|s| s != p.strategy) {
            // Blank lines separate data blocks for gnuplot-style tools.
            writeln!(out)?;
            writeln!(out)?;
        }
        last = Some(&p.strategy);
        writeln!(
            out,
            "{} {} {} {} {} {}",
            p.strategy, p.queries_per_wm, p.mean_mmr, p.min_mmr, p.max_mmr, p.runs
        )?;
    }
    Ok(())
}

/// Writes `<stem>.dat` and `<stem>_log.dat` next to `path` (whose extension
/// is ignored). Both hold the same columns; the second is meant for a
/// log-scaled regret axis. Returns the two paths.
pub fn emit_plot_data(records: &[RunRecord], path: &Path) -> Result<(PathBuf, PathBuf)> {
    let points = aggregate(records)?;
    let linear = path.with_extension("dat");
    let stem = linear
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("plot");
    let log = linear.with_file_name(format!("{stem}_log.dat"));
    write_series(
        &points,
        std::fs::File::create(&linear)?,
        "minimax regret by queries per WM",
    )?;
    write_series(
        &points,
        std::fs::File::create(&log)?,
        "minimax regret by queries per WM; plot the mmr columns on a log axis (zeros are kept)",
    )?;
    Ok((linear, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
name = "small"
grid = 200
strategies = ["heuristic-split", "random", "halve-all"]
seeds = [1, 2]
rounds = 4
timing = false

[solver]
mode = "approx"

[[wm]]
type = "synthetic"
wm_id = "a"
kind = "near-step"
jump = 0.3
plateau = 5.0
ramp = 0.005

[[wm]]
type = "synthetic"
wm_id = "b"
kind = "random-monotone"
seed = 4
knots = 3
scale = 8.0
"#;

    #[test]
    fn config_parses_and_validates() {
        let cfg = ExperimentConfig::from_toml(SMALL, "small.toml").unwrap();
        assert_eq!(cfg.wms.len(), 2);
        assert_eq!(cfg.solver.extensions, 3);
        let back = ExperimentConfig::from_toml(&cfg.to_toml(), "again").unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn config_errors_name_the_field() {
        let bad = SMALL.replace("grid = 200", "grid = 50");
        let err = ExperimentConfig::from_toml(&bad, "x.toml")
            .unwrap_err()
            .to_string();
        assert!(err.contains("grid"), "{err}");
        let bad = SMALL.replace("seeds = [1, 2]", "seeds = []");
        assert!(ExperimentConfig::from_toml(&bad, "x")
            .unwrap_err()
            .to_string()
            .contains("seeds"));
        let bad = SMALL.replace("\"random\"", "\"coin\"");
        assert!(ExperimentConfig::from_toml(&bad, "x")
            .unwrap_err()
            .to_string()
            .contains("strategies[1]"));
        let bad = SMALL.replace("jump = 0.3", "jump = 1.3");
        assert!(ExperimentConfig::from_toml(&bad, "x")
            .unwrap_err()
            .to_string()
            .contains("wm[0]"));
        let bad = SMALL.replace("rounds = 4", "rounds = 4\nn_wms = 3");
        assert!(ExperimentConfig::from_toml(&bad, "x")
            .unwrap_err()
            .to_string()
            .contains("n_wms"));
    }

    #[test]
    fn experiment_is_deterministic_and_round_trips() {
        let cfg = ExperimentConfig::from_toml(SMALL, "small").unwrap();
        let a = run_experiment(&cfg).unwrap();
        assert!(a.len() <= 6 * 4);
        let runs: std::collections::BTreeSet<usize> = a.iter().map(|r| r.run_id).collect();
        assert_eq!(runs.len(), 6);
        assert!(a
            .windows(2)
            .all(|w| (w[0].run_id, w[0].round) < (w[1].run_id, w[1].round)));

        let mut first = Vec::new();
        write_csv(&a, &mut first).unwrap();
        let mut second = Vec::new();
        write_csv(&run_experiment(&cfg).unwrap(), &mut second).unwrap();
        assert_eq!(first, second);
        assert_eq!(read_csv(first.as_slice()).unwrap(), a);
    }

    fn rec(run_id: usize, strategy: &str, round: usize, q: usize, mmr: f64) -> RunRecord {
        RunRecord {
            run_id,
            seed: run_id as u64,
            strategy: strategy.into(),
            round,
            queries_per_wm: q,
            mmr,
            allocation: vec![1, 2],
            solve_ms: 0.5,
            prunes: 0,
        }
    }

    #[test]
    fn aggregation_holds_final_values() {
        let rows = vec![
            rec(0, "a", 0, 4, 6.0),
            rec(0, "a", 1, 5, 2.0),
            rec(1, "a", 0, 4, 4.0),
            rec(2, "b", 0, 4, 0.0),
        ];
        let pts = aggregate(&rows).unwrap();
        assert_eq!(pts.len(), 3);
        assert_eq!(
            (pts[0].mean_mmr, pts[0].min_mmr, pts[0].max_mmr),
            (5.0, 4.0, 6.0)
        );
        assert_eq!((pts[1].queries_per_wm, pts[1].mean_mmr), (5, 3.0));
        assert_eq!(
            (pts[2].strategy.as_str(), pts[2].mean_mmr, pts[2].runs),
            ("b", 0.0, 1)
        );
        assert!(aggregate(&[]).is_err());
    }
}
