//! Runs the stages of a [`RunConfig`] and writes their artifacts.
//!
//! Artifacts in the output directory:
//! - `field.csv` (export stage)
//! - `oracle_compare.csv` (oracle-compare stage)
//! - `trajectory_<name>.csv` (simulate stage, one per run)
//! - `summary.json`, always
//!
//! Everything except the `timing` block of the summary is a deterministic
//! function of the configuration and the seed.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, OracleCompareSection, RunConfig, Stage, StartPoint};
use crate::geometry::JunctionPoint;
use crate::io::{write_field_csv, write_table_csv, write_trajectory_csv, IoError};
use crate::oracle::{oracle_value, ExampleRegime, OracleError};
use crate::problem::{ControllabilityMode, ProblemSpec};
use crate::solver::{solve, GridSpec, SolveReport, SolverError, ValueField};
use crate::trajectory::{
    brute_force_value, cost, extract_policy, simulate, trajectory_dpp_residual, ControlSchedule, CostBreakdown,
    TrajectoryError,
};
use crate::verify::{
    check_controllability_regime, check_sandwich, check_viscosity_residual_interior, ControllabilityReport, Regime,
    ResidualReport, SandwichReport, VerifyError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] IoError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("oracle comparison needs the two half-plane example at λ = {regime}, got λ = {spec} with {branches} half-planes")]
    OracleMismatch { regime: f64, spec: f64, branches: usize },
}

impl PipelineError {
    /// 2 for configuration problems, 1 for anything that failed while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            _ => 1,
        }
    }
}

/// What the command line asked for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// The configured pipeline as written.
    Run,
    Solve,
    Verify,
    Compare,
    Simulate,
}

impl Task {
    /// Stages executed for this task.
    pub fn stages(self, config: &RunConfig) -> Result<Vec<Stage>, ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        Ok(match self {
            Task::Run => config.pipeline.stages.clone(),
            Task::Solve => vec![Stage::Solve, Stage::Export],
            Task::Verify => vec![Stage::Solve, Stage::Verify],
            Task::Compare => {
                let mut s = vec![Stage::Solve];
                if config.example_regime().is_some() {
                    s.push(Stage::OracleCompare);
                }
                if config.brute_force.is_some() {
                    s.push(Stage::BruteForceCompare);
                }
                if s.len() == 1 {
                    return invalid("compare needs the built-in example or a [brute_force] section");
                }
                s
            }
            Task::Simulate => {
                let Some(sim) = &config.simulate else {
                    return invalid("simulate needs a [simulate] section");
                };
                if sim.runs.iter().any(|r| r.policy_horizon.is_some()) {
                    vec![Stage::Solve, Stage::Simulate]
                } else {
                    vec![Stage::Simulate]
                }
            }
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Only reorders brute-force enumeration; results do not depend on it.
    pub seed: u64,
    pub task: Task,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRow {
    pub branch: usize,
    pub xi: f64,
    pub x0: f64,
    pub solver: f64,
    pub oracle: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleTable {
    pub rows: Vec<OracleRow>,
    pub max_error: f64,
    pub mean_error: f64,
    /// Largest error per half-plane, `P_1` first.
    pub max_error_by_branch: Vec<f64>,
    pub worst: Option<OracleRow>,
}

/// Lattice of `(branch, xi, x0)` samples on each half-plane: `n × n` points
/// at least `margin` from the truncation boundary, minus those within
/// `seam_band_h · h` of the seams `|x0| = 1`.
pub fn default_oracle_samples(
    grid: &GridSpec,
    section: &OracleCompareSection,
    n_branches: usize,
) -> Vec<(usize, f64, f64)> {
    let n = section.lattice.max(2);
    let xi_hi = (grid.xi_max - section.margin).max(0.0);
    let (x0_lo, x0_hi) = (grid.x0_min + section.margin, grid.x0_max - section.margin);
    let band = section.seam_band_h * grid.h;
    let mut out = Vec::new();
    for b in 1..=n_branches {
        for a in 0..n {
            let xi = xi_hi * a as f64 / (n - 1) as f64;
            for c in 0..n {
                let x0 = x0_lo + (x0_hi - x0_lo) * c as f64 / (n - 1) as f64;
                if (x0.abs() - 1.0).abs() <= band {
                    continue;
                }
                out.push((b, xi, x0));
            }
        }
    }
    out
}

/// Solver against closed form at the given samples. Interface samples are
/// compared with the one-sided limit from their half-plane.
pub fn compare_to_oracle(
    spec: &ProblemSpec,
    grid: &GridSpec,
    field: &ValueField,
    regime: &ExampleRegime,
    samples: &[(usize, f64, f64)],
) -> Result<OracleTable, PipelineError> {
    if spec.n_branches() != 2 || spec.lambda() != regime.lambda() {
        return Err(PipelineError::OracleMismatch {
            regime: regime.lambda(),
            spec: spec.lambda(),
            branches: spec.n_branches(),
        });
    }
    let mut rows = Vec::with_capacity(samples.len());
    for &(branch, xi, x0) in samples {
        let p = JunctionPoint::new(branch, xi, x0).map_err(|_| OracleError::BranchOutOfRange(branch))?;
        let oracle = oracle_value(regime, &p)?.seen_from(branch);
        let solver = field.interpolate_plane(grid, branch, xi, x0);
        rows.push(OracleRow {
            branch,
            xi,
            x0,
            solver,
            oracle,
            error: (solver - oracle).abs(),
        });
    }
    let max_error = rows.iter().map(|r| r.error).fold(0.0, f64::max);
    let mean_error = if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|r| r.error).sum::<f64>() / rows.len() as f64
    };
    let max_error_by_branch = (1..=2)
        .map(|b| {
            rows.iter()
                .filter(|r| r.branch == b)
                .map(|r| r.error)
                .fold(0.0, f64::max)
        })
        .collect();
    let worst = rows.iter().max_by(|a, b| a.error.total_cmp(&b.error)).cloned();
    Ok(OracleTable {
        rows,
        max_error,
        mean_error,
        max_error_by_branch,
        worst,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveSummary {
    pub iterations: usize,
    pub converged: bool,
    pub final_change: f64,
    pub final_residual: f64,
    pub contraction_ratio: f64,
    pub expected_ratio: f64,
    pub history_monotone: bool,
    pub warnings: Vec<String>,
}

impl From<&SolveReport> for SolveSummary {
    fn from(r: &SolveReport) -> Self {
        Self {
            iterations: r.iterations,
            converged: r.converged,
            final_change: r.final_change,
            final_residual: r.final_residual,
            contraction_ratio: r.contraction_ratio,
            expected_ratio: r.expected_ratio,
            history_monotone: r.history_monotone,
            warnings: r.warnings.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifySummary {
    pub sandwich: SandwichReport,
    pub residual: ResidualReport,
    pub controllability: ControllabilityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSummary {
    pub samples: usize,
    pub tolerance: f64,
    pub max_error: f64,
    pub mean_error: f64,
    pub max_error_by_branch: Vec<f64>,
    pub worst: Option<OracleRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BruteForceRow {
    pub start: StartPoint,
    pub value: f64,
    pub tail_bound: f64,
    pub solver: f64,
    pub oracle: Option<f64>,
    pub schedules: u128,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateRow {
    pub name: String,
    pub entries: usize,
    pub exits: usize,
    pub end_time: f64,
    pub cost: CostBreakdown,
    pub total: f64,
    /// Present when a solved field was available.
    pub dpp_residual: Option<f64>,
    pub artifact: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageStatus {
    pub stage: Stage,
    pub passed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Timing {
    pub solve_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub name: Option<String>,
    pub seed: u64,
    pub lambda: f64,
    pub n_branches: usize,
    pub grid: GridSpec,
    pub stages: Vec<StageStatus>,
    pub solve: Option<SolveSummary>,
    pub verify: Option<VerifySummary>,
    pub oracle_compare: Option<OracleSummary>,
    pub brute_force: Option<Vec<BruteForceRow>>,
    pub simulate: Option<Vec<SimulateRow>>,
    pub failures: Vec<String>,
    pub artifacts: Vec<String>,
    pub timing: Timing,
}

impl RunSummary {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }
}

struct Runner<'a> {
    config: &'a RunConfig,
    spec: ProblemSpec,
    opts: &'a RunOptions,
    field: Option<ValueField>,
    summary: RunSummary,
}

fn create(path: &Path) -> Result<BufWriter<File>, PipelineError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| PipelineError::Io {
            context: format!("cannot create {}", path.display()),
            source,
        })
}

impl Runner<'_> {
    fn fail(&mut self, stage: Stage, msg: String) {
        log::warn!("{}: {msg}", stage.name());
        self.summary.failures.push(format!("{}: {msg}", stage.name()));
    }

    fn field(&self) -> &ValueField {
        self.field.as_ref().expect("stage order checked: solve ran first")
    }

    fn artifact(&mut self, name: &str) -> Result<BufWriter<File>, PipelineError> {
        self.summary.artifacts.push(name.to_string());
        create(&self.opts.out_dir.join(name))
    }

    fn run_stage(&mut self, stage: Stage) -> Result<bool, PipelineError> {
        let before = self.summary.failures.len();
        log::info!("stage {}", stage.name());
        match stage {
            Stage::Solve => self.solve()?,
            Stage::Verify => self.verify()?,
            Stage::OracleCompare => self.oracle_compare()?,
            Stage::BruteForceCompare => self.brute_force()?,
            Stage::Simulate => self.simulate()?,
            Stage::Export => {
                let mut w = self.artifact("field.csv")?;
                write_field_csv(&mut w, &self.config.grid, self.field())?;
            }
        }
        Ok(self.summary.failures.len() == before)
    }

    fn solve(&mut self) -> Result<(), PipelineError> {
        let grid = &self.config.grid;
        let init = ValueField::initial(&self.spec, grid);
        let (field, report) = solve(
            &self.spec,
            grid,
            init,
            self.config.solve.tol,
            self.config.solve.max_iter,
        )?;
        log::info!(
            "solved in {} sweeps, final change {:.3e}",
            report.iterations,
            report.final_change
        );
        self.summary.timing.solve_s = report.wall_time_s;
        if !report.converged {
            self.fail(
                Stage::Solve,
                format!("not converged after {} sweeps", report.iterations),
            );
        }
        self.summary.solve = Some(SolveSummary::from(&report));
        self.field = Some(field);
        Ok(())
    }

    fn verify(&mut self) -> Result<(), PipelineError> {
        let grid = &self.config.grid;
        let field = self.field();
        let sandwich = check_sandwich(&self.spec, grid, field, self.config.solve.tol);
        let residual = check_viscosity_residual_interior(&self.spec, grid, field)?;
        let controllability = check_controllability_regime(&self.spec, grid)?;
        if !sandwich.passed() {
            self.fail(
                Stage::Verify,
                format!("sandwich: {} violations", sandwich.violations.len()),
            );
        }
        if let Some(limit) = self.config.verify.max_residual {
            if residual.sup_residual > limit {
                self.fail(
                    Stage::Verify,
                    format!("residual {:.3e} exceeds {limit:.3e}", residual.sup_residual),
                );
            }
        }
        if self.config.verify.require_controllability {
            let ok = match self.spec.controllability() {
                ControllabilityMode::Strong => controllability.regime == Regime::Strong,
                ControllabilityMode::Moderate => controllability.regime != Regime::Neither,
            };
            if !ok {
                self.fail(
                    Stage::Verify,
                    format!(
                        "controllability: declared {:?}, audited {:?}",
                        self.spec.controllability(),
                        controllability.regime
                    ),
                );
            }
        }
        self.summary.verify = Some(VerifySummary {
            sandwich,
            residual,
            controllability,
        });
        Ok(())
    }

    fn oracle_compare(&mut self) -> Result<(), PipelineError> {
        let regime = self.config.example_regime().expect("checked at parse time");
        let section = self.config.oracle_compare;
        let samples = default_oracle_samples(&self.config.grid, &section, self.spec.n_branches());
        let table = compare_to_oracle(&self.spec, &self.config.grid, self.field(), &regime, &samples)?;
        let rows: Vec<Vec<f64>> = table
            .rows
            .iter()
            .map(|r| vec![r.branch as f64, r.xi, r.x0, r.solver, r.oracle, r.error])
            .collect();
        let mut w = self.artifact("oracle_compare.csv")?;
        write_table_csv(&mut w, &["branch", "xi", "x0", "solver", "oracle", "error"], &rows)?;
        if table.max_error > section.tolerance {
            self.fail(
                Stage::OracleCompare,
                format!("max error {:.3e} exceeds {:.3e}", table.max_error, section.tolerance),
            );
        }
        self.summary.oracle_compare = Some(OracleSummary {
            samples: table.rows.len(),
            tolerance: section.tolerance,
            max_error: table.max_error,
            mean_error: table.mean_error,
            max_error_by_branch: table.max_error_by_branch,
            worst: table.worst,
        });
        Ok(())
    }

    fn brute_force(&mut self) -> Result<(), PipelineError> {
        let section = self.config.brute_force.as_ref().expect("checked at parse time");
        let bf = section.to_config(&self.spec)?;
        let regime = self.config.example_regime();
        let mut rows = Vec::new();
        for start in &section.points {
            let p = start.point().map_err(ConfigError::from)?;
            let r = brute_force_value(&self.spec, p, &bf, self.opts.seed)?;
            let solver = self.field().value_at(&self.config.grid, &p);
            let oracle = match &regime {
                Some(reg) => Some(oracle_value(reg, &p)?.seen_from(start.branch.max(1))),
                None => None,
            };
            let tol = section.tolerance;
            let passed = r.value >= solver - tol && oracle.is_none_or(|o| (r.value - o).abs() <= tol);
            if !passed {
                self.fail(
                    Stage::BruteForceCompare,
                    format!(
                        "at {:?}: brute force {:.4}, solver {:.4}, oracle {:?}",
                        start, r.value, solver, oracle
                    ),
                );
            }
            rows.push(BruteForceRow {
                start: *start,
                value: r.value,
                tail_bound: r.tail_bound,
                solver,
                oracle,
                schedules: r.enumerated,
                passed,
            });
        }
        self.summary.brute_force = Some(rows);
        Ok(())
    }

    fn simulate(&mut self) -> Result<(), PipelineError> {
        let section = self.config.simulate.as_ref().expect("checked at parse time");
        let grid = &self.config.grid;
        let mut rows = Vec::new();
        for run in &section.runs {
            let start = run.start.point().map_err(ConfigError::from)?;
            let traj = match (&run.segments, run.policy_horizon) {
                (Some(segs), _) => {
                    let schedule = ControlSchedule::from_ids(&self.spec, segs)?;
                    simulate(&self.spec, start, &schedule, section.dt_int)?
                }
                (None, Some(h)) => {
                    let field = self.field.as_ref().expect("stage order checked: solve ran first");
                    extract_policy(&self.spec, grid, field).rollout(start, h, section.dt_int)?
                }
                (None, None) => unreachable!("checked at parse time"),
            };
            let name = format!("trajectory_{}.csv", run.name);
            let mut w = self.artifact(&name)?;
            write_trajectory_csv(&mut w, &traj)?;
            let c = cost(&self.spec, &traj);
            rows.push(SimulateRow {
                name: run.name.clone(),
                entries: traj.entry_events().len(),
                exits: traj.exit_events().len(),
                end_time: traj.end_time(),
                cost: c,
                total: c.total(),
                dpp_residual: self
                    .field
                    .as_ref()
                    .map(|f| trajectory_dpp_residual(&self.spec, grid, f, &traj)),
                artifact: name,
            });
        }
        self.summary.simulate = Some(rows);
        Ok(())
    }
}

/// Executes the stages of `opts.task` and writes `summary.json`. Stage
/// failures are collected in the summary; errors abort the run.
pub fn run(config: &RunConfig, opts: &RunOptions) -> Result<RunSummary, PipelineError> {
    let start = Instant::now();
    let stages = opts.task.stages(config)?;
    let spec = config.problem_spec()?;
    std::fs::create_dir_all(&opts.out_dir).map_err(|source| PipelineError::Io {
        context: format!("cannot create {}", opts.out_dir.display()),
        source,
    })?;
    let mut runner = Runner {
        config,
        opts,
        field: None,
        summary: RunSummary {
            schema_version: config.schema_version,
            name: config.name.clone(),
            seed: opts.seed,
            lambda: spec.lambda(),
            n_branches: spec.n_branches(),
            grid: config.grid,
            stages: Vec::new(),
            solve: None,
            verify: None,
            oracle_compare: None,
            brute_force: None,
            simulate: None,
            failures: Vec::new(),
            artifacts: Vec::new(),
            timing: Timing::default(),
        },
        spec,
    };
    for stage in stages {
        let passed = runner.run_stage(stage)?;
        runner.summary.stages.push(StageStatus { stage, passed });
    }
    runner.summary.artifacts.push("summary.json".into());
    runner.summary.timing.total_s = start.elapsed().as_secs_f64();
    let mut w = create(&opts.out_dir.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut w, &runner.summary).map_err(|e| PipelineError::Io {
        context: "cannot write summary.json".into(),
        source: e.into(),
    })?;
    std::io::Write::flush(&mut w).map_err(|source| PipelineError::Io {
        context: "cannot write summary.json".into(),
        source,
    })?;
    Ok(runner.summary)
}

/// Loads a config file, or a built-in config when `name_or_path` is one of
/// [`crate::config::BUILTIN_CONFIGS`] and no such file exists.
pub fn load_config(name_or_path: &str) -> Result<RunConfig, ConfigError> {
    let path = Path::new(name_or_path);
    if !path.exists() && crate::config::BUILTIN_CONFIGS.contains(&name_or_path) {
        return RunConfig::builtin(name_or_path);
    }
    RunConfig::load(path)
}
