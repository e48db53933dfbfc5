use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mmr_alloc::elicit::StrategySpec;
use mmr_alloc::harness::{self, ExperimentConfig, ModeName};
use mmr_alloc::instance::Instance;
use mmr_alloc::knapsack::Method;
use mmr_alloc::minimax::{minimax_allocation, SolveMode, SolveOptions};
use mmr_alloc::regret::max_regret_with;
use mmr_alloc::sim::UtilityOracle;
use mmr_alloc::{Error, Grid, RegretCertificate, Result, SampleSet, Units};
use serde::Serialize;

/// Minimax-regret resource allocation from sampled utility curves.
#[derive(Parser)]
#[command(name = "mmr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Minimax-regret allocation for a sampled instance (TOML).
    Solve(SolveArgs),
    /// One negotiation with the WMs of an experiment config; one CSV row
    /// per round.
    Elicit(ElicitArgs),
    /// Every (seed, strategy) run of an experiment config, written as CSV
    /// plus plot data.
    Experiment(ExperimentArgs),
    /// Evaluate the WM utility curves of an experiment config at grid
    /// points.
    Oracle(OracleArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Exact,
    Epa,
    Approx,
}

impl From<ModeArg> for ModeName {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Exact => ModeName::Exact,
            ModeArg::Epa => ModeName::Epa,
            ModeArg::Approx => ModeName::Approx,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Dense,
    Sparse,
    BranchAndBound,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Dense => Method::Dense,
            MethodArg::Sparse => Method::Sparse,
            MethodArg::BranchAndBound => Method::BranchAndBound,
        }
    }
}

#[derive(clap::Args)]
struct SolveArgs {
    /// Instance file: grid, `[[wm]]` sample lists and an optional
    /// allocation to evaluate.
    instance: PathBuf,
    #[arg(long, value_enum, default_value = "exact")]
    mode: ModeArg,
    /// Extensions tried per EPA in approx mode.
    #[arg(long, default_value_t = 3)]
    extensions: usize,
    /// Disable witness-bound pruning.
    #[arg(long)]
    no_pruning: bool,
    #[arg(long, value_enum, default_value = "sparse")]
    method: MethodArg,
    /// Grid resolution for instances that do not state one.
    #[arg(long)]
    grid: Option<u32>,
    /// Seed for the random extensions of approx mode.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also print one record per visited support.
    #[arg(long)]
    trace: bool,
}

/// Overrides shared by `elicit` and `experiment`.
#[derive(clap::Args)]
struct RunOverrides {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    grid: Option<u32>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    extensions: Option<usize>,
    /// Stop once minimax regret is at most this.
    #[arg(long)]
    threshold: Option<f64>,
    /// Solve rounds per run.
    #[arg(long)]
    max_rounds: Option<usize>,
    /// Use only this seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl RunOverrides {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(g) = self.grid {
            cfg.grid = g;
        }
        if let Some(m) = self.mode {
            cfg.solver.mode = m.into();
        }
        if let Some(e) = self.extensions {
            cfg.solver.extensions = e;
        }
        if let Some(t) = self.threshold {
            cfg.regret_threshold = t;
        }
        if let Some(r) = self.max_rounds {
            cfg.rounds = r;
        }
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        cfg.validate("command line")?;
        Ok(cfg)
    }
}

#[derive(clap::Args)]
struct ElicitArgs {
    #[command(flatten)]
    run: RunOverrides,
    /// Strategy name; defaults to the first one in the config.
    #[arg(long)]
    strategy: Option<String>,
    /// CSV output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ExperimentArgs {
    #[command(flatten)]
    run: RunOverrides,
    /// CSV output file. Defaults to the config's `output`, then to
    /// `<out-dir>/<name>.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for outputs when neither `--out` nor the config names a
    /// file.
    #[arg(long, env = "MMR_OUT_DIR", default_value = "results")]
    out_dir: PathBuf,
}

#[derive(clap::Args)]
struct OracleArgs {
    /// Experiment config (TOML) describing the WMs.
    #[arg(long)]
    config: PathBuf,
    /// Only this WM.
    #[arg(long)]
    wm: Option<String>,
    /// Comma-separated grid points; defaults to every tenth of the grid.
    #[arg(long, value_delimiter = ',')]
    points: Vec<Units>,
    #[arg(long)]
    grid: Option<u32>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match cli.command {
        Command::Solve(a) => solve(a),
        Command::Elicit(a) => elicit(a),
        Command::Experiment(a) => experiment(a),
        Command::Oracle(a) => oracle(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Io(_) | Error::Csv(_) => 1,
        Error::Consistency { .. } => 2,
        Error::TrivialInstance { .. } | Error::TooLarge(_) | Error::Domain(_) => 3,
    }
}

#[derive(Serialize)]
struct CurveReport {
    wm: String,
    /// Utility at zero, then right-closed `[end, value]` pieces.
    at_zero: f64,
    breakpoints: Vec<(Units, f64)>,
}

#[derive(Serialize)]
struct CertificateReport {
    regret: f64,
    allocation: Vec<Units>,
    witness: Vec<Units>,
    adversary: Vec<CurveReport>,
}

impl CertificateReport {
    fn new(c: &RegretCertificate, samples: &[SampleSet]) -> Self {
        let grid = samples[0].grid();
        CertificateReport {
            regret: c.regret,
            allocation: c.subject.shares.clone(),
            witness: c.witness.shares.clone(),
            adversary: c
                .adversary
                .iter()
                .zip(samples)
                .map(|(u, s)| {
                    let (at_zero, breakpoints) = u.breakpoints(grid);
                    CurveReport {
                        wm: s.wm_id().to_string(),
                        at_zero,
                        breakpoints,
                    }
                })
                .collect(),
        }
    }
}

#[derive(Serialize)]
struct TraceReport {
    epa: Vec<Units>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bound: Option<f64>,
    pruned: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    regret: Option<f64>,
}

#[derive(Serialize)]
struct SolveReport {
    mode: &'static str,
    regret: f64,
    allocation: Vec<Units>,
    epa: Vec<Units>,
    supports_visited: usize,
    pruned: usize,
    mr_evaluations: usize,
    certificate: CertificateReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    evaluated: Option<CertificateReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    trace: Vec<TraceReport>,
}

/// Domain errors while reading a file are problems with the file.
fn as_config(path: &Path, e: Error) -> Error {
    match e {
        Error::Domain(msg) => Error::Config {
            path: path.display().to_string(),
            msg,
        },
        other => other,
    }
}

fn solve(a: SolveArgs) -> Result<()> {
    let mut inst = Instance::load(&a.instance)?;
    match (inst.grid, a.grid) {
        (0, g) => inst.grid = g.unwrap_or(mmr_alloc::grid::DEFAULT_RESOLUTION),
        (g, Some(flag)) if g != flag => {
            return Err(Error::Config {
                path: "--grid".into(),
                msg: format!("instance is on grid {g}, not {flag}"),
            })
        }
        _ => {}
    }
    let samples = inst.sample_sets().map_err(|e| as_config(&a.instance, e))?;
    let method: Method = a.method.into();
    let evaluated = match inst.allocation() {
        Some(alloc) => Some(CertificateReport::new(
            &max_regret_with(&samples, &alloc, method)?,
            &samples,
        )),
        None => None,
    };
    let opts = SolveOptions {
        mode: match a.mode {
            ModeArg::Exact => SolveMode::Exact,
            ModeArg::Epa => SolveMode::Epa,
            ModeArg::Approx => SolveMode::Approx {
                extensions: a.extensions,
            },
        },
        pruning: !a.no_pruning,
        seed: a.seed,
        method,
        trace: a.trace,
    };
    let sol = minimax_allocation(&samples, &opts)?;
    let report = SolveReport {
        mode: match a.mode {
            ModeArg::Exact => "exact",
            ModeArg::Epa => "epa",
            ModeArg::Approx => "approx",
        },
        regret: sol.result.regret,
        allocation: sol.result.allocation.shares.clone(),
        epa: sol.result.epa.shares.clone(),
        supports_visited: sol.stats.epas,
        pruned: sol.stats.pruned,
        mr_evaluations: sol.stats.mr_evaluations,
        certificate: CertificateReport::new(&sol.result.certificate, &samples),
        evaluated,
        trace: sol
            .trace
            .iter()
            .map(|t| TraceReport {
                epa: t.epa.shares.clone(),
                bound: t.bound,
                pruned: t.pruned,
                regret: t.regret,
            })
            .collect(),
    };
    print!("{}", toml::to_string(&report).expect("report serializes"));
    Ok(())
}

fn elicit(a: ElicitArgs) -> Result<()> {
    let mut cfg = a.run.load()?;
    if let Some(s) = &a.strategy {
        cfg.strategies = vec![s.clone()];
        cfg.validate("--strategy")?;
    }
    let strategy: StrategySpec = cfg.strategies()?[0];
    let rows = harness::run_single(&cfg, strategy, cfg.seeds[0], 0)?;
    match &a.out {
        Some(path) => harness::write_csv(&rows, std::fs::File::create(path)?)?,
        None => harness::write_csv(&rows, std::io::stdout().lock())?,
    }
    Ok(())
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    let cfg = a.run.load()?;
    let out = a
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| {
            let name = if cfg.name.is_empty() {
                "experiment"
            } else {
                &cfg.name
            };
            a.out_dir.join(format!("{name}.csv"))
        });
    let rows = harness::run_experiment(&cfg)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    harness::write_csv(&rows, std::fs::File::create(&out)?)?;
    let (linear, log) = harness::emit_plot_data(&rows, &out)?;
    let mut err = std::io::stderr().lock();
    writeln!(err, "wrote {} rows to {}", rows.len(), out.display())?;
    writeln!(
        err,
        "plot data in {} and {}",
        linear.display(),
        log.display()
    )?;
    Ok(())
}

fn oracle(a: OracleArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(g) = a.grid {
        cfg.grid = g;
        cfg.validate("--grid")?;
    }
    let grid = Grid::new(cfg.grid)?;
    let wms: Vec<_> = cfg
        .wms
        .iter()
        .filter(|w| a.wm.as_deref().is_none_or(|id| w.wm_id() == id))
        .collect();
    if wms.is_empty() {
        return Err(Error::Config {
            path: "--wm".into(),
            msg: format!("no WM named {:?}", a.wm.unwrap_or_default()),
        });
    }
    let g = grid.resolution();
    let points: Vec<Units> = if a.points.is_empty() {
        (0..=10)
            .map(|k| g / 10 * k)
            .chain(std::iter::once(g))
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect()
    } else {
        a.points.clone()
    };
    if let Some(&p) = points.iter().find(|&&p| p > g) {
        return Err(Error::Domain(format!(
            "point {p} is off the grid of {g} units"
        )));
    }
    let mut out = std::io::stdout().lock();
    writeln!(out, "wm_id,point,utility")?;
    for w in wms {
        for &p in &points {
            writeln!(out, "{},{p},{}", w.wm_id(), w.utility(p, grid))?;
        }
    }
    Ok(())
}
