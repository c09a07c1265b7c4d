//! TOML run configuration.
//!
//! ```toml
//! schema_version = 1
//!
//! [problem]
//! builtin = "paper-example"
//! lambda = 0.25
//!
//! [grid]
//! xi_max = 6.0
//! x0_min = -4.0
//! x0_max = 4.0
//! h = 0.025
//! dt = 0.01
//!
//! [solve]
//! tol = 1e-5
//! max_iter = 100000
//!
//! [pipeline]
//! stages = ["solve", "verify", "oracle-compare", "export"]
//! ```
//!
//! Instead of `builtin`, `[problem.inline]` describes a problem directly; see
//! `configs/` for complete files. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, JunctionGeometry, JunctionPoint};
use crate::oracle::{example_spec_with, ExampleRegime, DEFAULT_DISC_SAMPLES, DEFAULT_FIRST_ENTRY_COST};
use crate::problem::{
    ControlSampling, ControllabilityMode, Dynamics, EntryCost, HalfPlaneSpec, ProblemError, ProblemSpec, RunningCost,
};
use crate::solver::GridSpec;
use crate::trajectory::{BruteForceConfig, ControlSchedule, TrajectoryError};

pub const SCHEMA_VERSION: u32 = 1;
/// Built-in configurations, also shipped under `configs/`.
pub const BUILTIN_CONFIGS: [&str; 2] = ["paper-example-saturated", "paper-example-entering"];

const MAX_BRANCHES: usize = 64;
const MAX_CONTROLS: usize = 100_000;
const MAX_SEGMENTS: usize = 64;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    Schema(u32),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error("unknown built-in config {0:?}")]
    UnknownBuiltin(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Solve,
    Verify,
    OracleCompare,
    BruteForceCompare,
    Simulate,
    Export,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Solve => "solve",
            Stage::Verify => "verify",
            Stage::OracleCompare => "oracle-compare",
            Stage::BruteForceCompare => "brute-force-compare",
            Stage::Simulate => "simulate",
            Stage::Export => "export",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Label copied into the run summary.
    #[serde(default)]
    pub name: Option<String>,
    pub problem: ProblemSection,
    pub grid: GridSpec,
    pub solve: SolveSection,
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub oracle_compare: OracleCompareSection,
    #[serde(default)]
    pub simulate: Option<SimulateSection>,
    #[serde(default)]
    pub brute_force: Option<BruteForceSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    /// Only `"paper-example"` is known.
    #[serde(default)]
    pub builtin: Option<String>,
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Boundary samples of the built-in example's control discs.
    #[serde(default)]
    pub disc_samples: Option<usize>,
    #[serde(default)]
    pub inline: Option<InlineProblem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineProblem {
    pub lambda: f64,
    #[serde(default = "default_tangency")]
    pub tangency_eps: f64,
    pub controllability: ControllabilityMode,
    pub delta: f64,
    #[serde(default)]
    pub geometry: Option<GeometrySection>,
    pub planes: Vec<PlaneSection>,
}

fn default_tangency() -> f64 {
    1e-9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GeometrySection {
    EvenlySpaced(usize),
    Explicit { e0: [f64; 3], planes: Vec<[f64; 3]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneSection {
    pub controls: ControlSampling,
    pub dynamics: Dynamics,
    pub running_cost: RunningCost,
    pub entry_cost: EntryCost,
    pub bound_m: f64,
    pub lipschitz_l: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSection {
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    pub stages: Vec<Stage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    /// Fail the stage when the interior residual exceeds this. The residual
    /// is only reported when unset.
    #[serde(default)]
    pub max_residual: Option<f64>,
    /// Fail the stage when the declared controllability mode is not
    /// confirmed by the audit.
    #[serde(default = "yes")]
    pub require_controllability: bool,
}

fn yes() -> bool {
    true
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            max_residual: None,
            require_controllability: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleCompareSection {
    /// Largest accepted error on the sample lattice.
    #[serde(default = "default_oracle_tol")]
    pub tolerance: f64,
    #[serde(default = "default_lattice")]
    pub lattice: usize,
    /// Minimum distance of samples from the truncation boundary.
    #[serde(default = "default_margin")]
    pub margin: f64,
    /// Half-width of the excluded band around `|x0| = 1`, in units of `h`.
    #[serde(default = "default_seam")]
    pub seam_band_h: f64,
}

fn default_oracle_tol() -> f64 {
    5e-2
}
fn default_lattice() -> usize {
    21
}
fn default_margin() -> f64 {
    1.5
}
fn default_seam() -> f64 {
    2.0
}

impl Default for OracleCompareSection {
    fn default() -> Self {
        Self {
            tolerance: default_oracle_tol(),
            lattice: default_lattice(),
            margin: default_margin(),
            seam_band_h: default_seam(),
        }
    }
}

/// A state given by branch label (0 for the interface) and coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartPoint {
    pub branch: usize,
    #[serde(default)]
    pub xi: f64,
    pub x0: f64,
}

impl StartPoint {
    pub fn point(&self) -> Result<JunctionPoint, GeometryError> {
        if self.branch == 0 {
            if !self.x0.is_finite() {
                return Err(GeometryError::NonFinite);
            }
            Ok(JunctionPoint::interface(self.x0))
        } else {
            JunctionPoint::new(self.branch, self.xi, self.x0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub dt_int: f64,
    pub runs: Vec<SimulateRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateRun {
    pub name: String,
    pub start: StartPoint,
    /// Open-loop schedule as `[duration, branch, control id]` triples.
    #[serde(default)]
    pub segments: Option<Vec<(f64, usize, usize)>>,
    /// Closed-loop rollout of the solved field's policy for this long.
    #[serde(default)]
    pub policy_horizon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateSection {
    /// Every control of these half-planes.
    #[serde(default)]
    pub all_of: Vec<usize>,
    /// Further `[branch, control id]` pairs.
    #[serde(default)]
    pub extra: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DurationMesh {
    pub step: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BruteForceSection {
    pub horizon: f64,
    pub segments: usize,
    pub candidates: CandidateSection,
    /// Durations `step, 2 step, …, count·step`.
    pub durations: DurationMesh,
    pub dt_int: f64,
    #[serde(default = "default_budget")]
    pub budget: u64,
    /// Accepted gap to the solver (and, for the built-in example, to the
    /// closed form).
    pub tolerance: f64,
    pub points: Vec<StartPoint>,
}

fn default_budget() -> u64 {
    1_000_000
}

impl BruteForceSection {
    pub fn to_config(&self, spec: &ProblemSpec) -> Result<BruteForceConfig, ConfigError> {
        let mut candidates = Vec::new();
        for &b in &self.candidates.all_of {
            if b == 0 || b > spec.n_branches() {
                return invalid(format!("brute_force.candidates.all_of: no half-plane {b}"));
            }
            candidates.extend(spec.plane(b).controls.iter().map(|c| (b, c.id)));
        }
        candidates.extend(self.candidates.extra.iter().copied());
        Ok(BruteForceConfig {
            horizon: self.horizon,
            segments: self.segments,
            candidates,
            durations: (1..=self.durations.count)
                .map(|k| k as f64 * self.durations.step)
                .collect(),
            dt_int: self.dt_int,
            budget: self.budget as u128,
        })
    }
}

impl RunConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: RunConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// One of [`BUILTIN_CONFIGS`].
    pub fn builtin(name: &str) -> Result<Self, ConfigError> {
        let text = match name {
            "paper-example-saturated" => include_str!("../configs/paper-example-saturated.toml"),
            "paper-example-entering" => include_str!("../configs/paper-example-entering.toml"),
            _ => return Err(ConfigError::UnknownBuiltin(name.to_string())),
        };
        Self::from_toml_str(text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The closed-form regime when the problem is the built-in example.
    pub fn example_regime(&self) -> Option<ExampleRegime> {
        match (&self.problem.builtin, self.problem.lambda) {
            (Some(_), Some(lambda)) => ExampleRegime::new(lambda).ok(),
            _ => None,
        }
    }

    pub fn problem_spec(&self) -> Result<ProblemSpec, ConfigError> {
        let p = &self.problem;
        match (&p.builtin, &p.inline) {
            (Some(name), None) => {
                if name != "paper-example" {
                    return invalid(format!("unknown built-in problem {name:?}"));
                }
                let Some(lambda) = p.lambda else {
                    return invalid("problem.lambda is required with a built-in problem");
                };
                let samples = p.disc_samples.unwrap_or(DEFAULT_DISC_SAMPLES);
                if samples > MAX_CONTROLS {
                    return invalid("problem.disc_samples is too large");
                }
                Ok(example_spec_with(lambda, samples, DEFAULT_FIRST_ENTRY_COST)?)
            }
            (None, Some(inline)) => {
                if p.lambda.is_some() || p.disc_samples.is_some() {
                    return invalid("problem.lambda and problem.disc_samples only apply to built-in problems");
                }
                inline.build()
            }
            (Some(_), Some(_)) => invalid("problem: give either builtin or inline, not both"),
            (None, None) => invalid("problem: one of builtin or inline is required"),
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Schema(self.schema_version));
        }
        let spec = self.problem_spec()?;
        self.grid
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("grid: {e}")))?;
        if !(self.solve.tol > 0.0 && self.solve.tol.is_finite()) {
            return invalid(format!("solve.tol must be positive, got {}", self.solve.tol));
        }
        if self.solve.max_iter == 0 {
            return invalid("solve.max_iter must be at least 1");
        }
        self.validate_stages()?;
        if let Some(r) = self.verify.max_residual {
            if !(r >= 0.0) {
                return invalid("verify.max_residual must be nonnegative");
            }
        }
        let oc = &self.oracle_compare;
        if !(oc.tolerance >= 0.0 && oc.margin >= 0.0 && oc.seam_band_h >= 0.0) || oc.lattice < 2 || oc.lattice > 10_000
        {
            return invalid(
                "oracle_compare: tolerance, margin and seam band must be nonnegative, lattice in 2..=10000",
            );
        }
        if let Some(sim) = &self.simulate {
            self.validate_simulate(sim, &spec)?;
        }
        if let Some(bf) = &self.brute_force {
            self.validate_brute_force(bf, &spec)?;
        }
        Ok(())
    }

    fn validate_stages(&self) -> Result<(), ConfigError> {
        let stages = &self.pipeline.stages;
        if stages.is_empty() {
            return invalid("pipeline.stages is empty");
        }
        let solved_before = |i: usize| stages[..i].contains(&Stage::Solve);
        for (i, stage) in stages.iter().enumerate() {
            if stages[..i].contains(stage) {
                return invalid(format!("stage {} listed twice", stage.name()));
            }
            let needs_solve = match stage {
                Stage::Verify | Stage::OracleCompare | Stage::BruteForceCompare | Stage::Export => true,
                Stage::Simulate => self
                    .simulate
                    .as_ref()
                    .is_some_and(|s| s.runs.iter().any(|r| r.policy_horizon.is_some())),
                Stage::Solve => false,
            };
            if needs_solve && !solved_before(i) {
                return invalid(format!("stage {} needs solve earlier in the pipeline", stage.name()));
            }
        }
        if stages.contains(&Stage::OracleCompare) && self.example_regime().is_none() {
            return invalid("oracle-compare needs builtin = \"paper-example\"");
        }
        if stages.contains(&Stage::Simulate) && self.simulate.is_none() {
            return invalid("simulate stage needs a [simulate] section");
        }
        if stages.contains(&Stage::BruteForceCompare) && self.brute_force.is_none() {
            return invalid("brute-force-compare stage needs a [brute_force] section");
        }
        Ok(())
    }

    fn validate_simulate(&self, sim: &SimulateSection, spec: &ProblemSpec) -> Result<(), ConfigError> {
        if !(sim.dt_int > 0.0 && sim.dt_int.is_finite()) {
            return invalid("simulate.dt_int must be positive");
        }
        let mut names = std::collections::HashSet::new();
        for run in &sim.runs {
            if run.name.is_empty()
                || !run
                    .name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
            {
                return invalid(format!(
                    "simulate run name {:?} must be nonempty [A-Za-z0-9_-]",
                    run.name
                ));
            }
            if !names.insert(run.name.as_str()) {
                return invalid(format!("simulate run {:?} listed twice", run.name));
            }
            let start = run.start.point()?;
            if let crate::geometry::Branch::Plane(b) = start.branch() {
                if b > spec.n_branches() {
                    return invalid(format!("simulate run {:?} starts on missing half-plane {b}", run.name));
                }
            }
            match (&run.segments, run.policy_horizon) {
                (Some(segs), None) => {
                    if segs.len() > MAX_SEGMENTS * 16 {
                        return invalid("too many segments");
                    }
                    ControlSchedule::from_ids(spec, segs)?;
                }
                (None, Some(h)) => {
                    if !(h > 0.0 && h.is_finite()) {
                        return invalid("policy_horizon must be positive");
                    }
                }
                _ => {
                    return invalid(format!(
                        "simulate run {:?}: give exactly one of segments or policy_horizon",
                        run.name
                    ))
                }
            }
        }
        Ok(())
    }

    fn validate_brute_force(&self, bf: &BruteForceSection, spec: &ProblemSpec) -> Result<(), ConfigError> {
        if bf.segments == 0 || bf.segments > MAX_SEGMENTS {
            return invalid(format!("brute_force.segments must be in 1..={MAX_SEGMENTS}"));
        }
        if !(bf.horizon > 0.0 && bf.horizon.is_finite()) || !(bf.dt_int > 0.0 && bf.dt_int.is_finite()) {
            return invalid("brute_force.horizon and dt_int must be positive");
        }
        if !(bf.durations.step > 0.0 && bf.durations.step.is_finite()) || bf.durations.count == 0 {
            return invalid("brute_force.durations needs a positive step and count");
        }
        if bf.durations.count > MAX_CONTROLS {
            return invalid("brute_force.durations.count is too large");
        }
        if !(bf.tolerance >= 0.0) {
            return invalid("brute_force.tolerance must be nonnegative");
        }
        if bf.points.is_empty() {
            return invalid("brute_force.points is empty");
        }
        for p in &bf.points {
            p.point()?;
        }
        let config = bf.to_config(spec)?;
        if config.candidates.is_empty() {
            return invalid("brute_force.candidates is empty");
        }
        for &(b, id) in &config.candidates {
            if spec.control(b, id).is_none() {
                return invalid(format!("brute_force candidate ({b}, {id}) does not exist"));
            }
        }
        Ok(())
    }
}

impl InlineProblem {
    pub fn build(&self) -> Result<ProblemSpec, ConfigError> {
        if self.planes.len() > MAX_BRANCHES {
            return invalid(format!("at most {MAX_BRANCHES} half-planes are supported"));
        }
        let geometry = match &self.geometry {
            None => JunctionGeometry::evenly_spaced(self.planes.len())?,
            Some(GeometrySection::EvenlySpaced(n)) => {
                if *n != self.planes.len() {
                    return invalid(format!(
                        "geometry has {n} half-planes but {} are described",
                        self.planes.len()
                    ));
                }
                JunctionGeometry::evenly_spaced(*n)?
            }
            Some(GeometrySection::Explicit { e0, planes }) => JunctionGeometry::new(*e0, planes.clone())?,
        };
        let mut planes = Vec::with_capacity(self.planes.len());
        for (k, p) in self.planes.iter().enumerate() {
            let too_many = match &p.controls {
                ControlSampling::Disc { boundary, .. } => *boundary > MAX_CONTROLS,
                ControlSampling::List(v) => v.len() > MAX_CONTROLS,
            };
            if too_many {
                return invalid(format!("half-plane {}: too many controls", k + 1));
            }
            planes.push(HalfPlaneSpec {
                controls: p.controls.build(k + 1)?,
                dynamics: p.dynamics.clone(),
                running_cost: p.running_cost.clone(),
                entry_cost: p.entry_cost.clone(),
                bound_m: p.bound_m,
                lipschitz_l: p.lipschitz_l,
            });
        }
        Ok(ProblemSpec::new(
            geometry,
            planes,
            self.lambda,
            self.tangency_eps,
            self.controllability,
            self.delta,
        )?)
    }
}
