//! Controlled trajectories on the junction.
//!
//! Trajectories are integrated with explicit Euler steps in intrinsic
//! coordinates. A step that would cross the interface is cut at the crossing,
//! located by linear interpolation, and the state lands exactly on the
//! interface. From there a control of half-plane `j` either
//!
//! * points into `P_j` (normal velocity above the tangency tolerance): the
//!   state enters `P_j` and an entry event is recorded;
//! * is tangential: the state slides along the interface, no event;
//! * points out of `P_j`: the control cannot act, and the current schedule
//!   segment ends early.
//!
//! Costs combine a trapezoidal discounted running cost with the discounted
//! entry costs of the recorded events. The infinite-horizon remainder is not
//! simulated; its bound `M e^{-λT}/λ` is reported next to the cost.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Branch, JunctionPoint};
use crate::problem::{ControlSample, ProblemSpec};
use crate::solver::{Clauses, GridSpec, ValueField};

/// Leftover segment time below this is dropped.
const TIME_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum TrajectoryError {
    #[error("schedule has no segments")]
    EmptySchedule,
    #[error("segment durations must be positive and finite, got {0}")]
    BadDuration(f64),
    #[error("integration step must be positive, got {0}")]
    BadStep(f64),
    #[error("horizon must be positive and finite, got {0}")]
    BadHorizon(f64),
    #[error("half-plane {branch} has no control with id {id}")]
    UnknownControl { branch: usize, id: usize },
    #[error("at t = {t} the state is inside P_{state} but the schedule uses a control of P_{control}")]
    Inadmissible { t: f64, state: usize, control: usize },
    #[error("brute force needs {needed} schedules, budget is {budget}")]
    BudgetExceeded { needed: u128, budget: u128 },
    #[error("brute force needs at least one segment, one candidate and one duration")]
    EmptyEnumeration,
}

/// One piece of a piecewise-constant control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub duration: f64,
    pub control: ControlSample,
}

impl Segment {
    pub fn branch(&self) -> usize {
        self.control.branch
    }
}

/// Piecewise-constant open-loop control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSchedule {
    segments: Vec<Segment>,
}

impl ControlSchedule {
    pub fn new(segments: Vec<Segment>) -> Result<Self, TrajectoryError> {
        if segments.is_empty() {
            return Err(TrajectoryError::EmptySchedule);
        }
        if let Some(s) = segments.iter().find(|s| !(s.duration > 0.0 && s.duration.is_finite())) {
            return Err(TrajectoryError::BadDuration(s.duration));
        }
        Ok(Self { segments })
    }

    /// Builds segments from `(duration, branch, control id)` triples.
    pub fn from_ids(spec: &ProblemSpec, parts: &[(f64, usize, usize)]) -> Result<Self, TrajectoryError> {
        let segments = parts
            .iter()
            .map(|&(duration, branch, id)| {
                Ok(Segment {
                    duration,
                    control: *lookup(spec, branch, id)?,
                })
            })
            .collect::<Result<Vec<_>, TrajectoryError>>()?;
        Self::new(segments)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn horizon(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }
}

fn lookup(spec: &ProblemSpec, branch: usize, id: usize) -> Result<&ControlSample, TrajectoryError> {
    if branch == 0 || branch > spec.n_branches() {
        return Err(TrajectoryError::UnknownControl { branch, id });
    }
    spec.control(branch, id)
        .ok_or(TrajectoryError::UnknownControl { branch, id })
}

/// One integration step: the control acting on `[t0, t1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Step {
    pub t0: f64,
    pub t1: f64,
    pub from: JunctionPoint,
    pub to: JunctionPoint,
    pub control: ControlSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntryEvent {
    pub branch: usize,
    pub t: f64,
    pub x0: f64,
    /// Index of the sample at which the state leaves the interface.
    pub sample: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExitEvent {
    pub branch: usize,
    pub t: f64,
    /// Index of the sample that lands on the interface.
    pub sample: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    samples: Vec<(f64, JunctionPoint)>,
    steps: Vec<Step>,
    entry_events: Vec<EntryEvent>,
    exit_events: Vec<ExitEvent>,
}

impl Trajectory {
    fn start(t: f64, p: JunctionPoint) -> Self {
        Self {
            samples: vec![(t, p)],
            steps: Vec::new(),
            entry_events: Vec::new(),
            exit_events: Vec::new(),
        }
    }

    pub fn samples(&self) -> &[(f64, JunctionPoint)] {
        &self.samples
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn entry_events(&self) -> &[EntryEvent] {
        &self.entry_events
    }

    pub fn exit_events(&self) -> &[ExitEvent] {
        &self.exit_events
    }

    pub fn end_time(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.0)
    }

    pub fn end_point(&self) -> JunctionPoint {
        self.samples.last().expect("a trajectory has a start sample").1
    }

    /// Same path with the entry events removed, so that its cost is the
    /// running cost alone.
    pub fn stripped(&self) -> Self {
        Self {
            entry_events: Vec::new(),
            ..self.clone()
        }
    }

    fn current(&self) -> (f64, JunctionPoint) {
        *self.samples.last().expect("a trajectory has a start sample")
    }

    /// Applies one Euler step of length at most `h`. Returns the time used,
    /// which is zero when the control cannot act at the current state.
    fn advance(&mut self, spec: &ProblemSpec, c: &ControlSample, h: f64) -> Result<f64, TrajectoryError> {
        let (t, p) = self.current();
        let plane = spec.plane(c.branch);
        let f = plane.velocity(p.xi(), p.x0(), c);
        let (to, used) = match p.branch() {
            Branch::Plane(i) if i != c.branch => {
                return Err(TrajectoryError::Inadmissible {
                    t,
                    state: i,
                    control: c.branch,
                })
            }
            Branch::Plane(_) => {
                let xi = p.xi() + h * f.normal;
                if xi > crate::geometry::INTERFACE_SNAP {
                    (plane_point(c.branch, xi, p.x0() + h * f.tangential), h)
                } else {
                    let theta = if f.normal < 0.0 {
                        (p.xi() / (-h * f.normal)).clamp(0.0, 1.0)
                    } else {
                        1.0
                    };
                    let used = theta * h;
                    (JunctionPoint::interface(p.x0() + used * f.tangential), used)
                }
            }
            Branch::Interface => {
                let eps = spec.tangency_eps();
                if f.normal > eps {
                    (plane_point(c.branch, h * f.normal, p.x0() + h * f.tangential), h)
                } else if f.normal >= -eps {
                    (JunctionPoint::interface(p.x0() + h * f.tangential), h)
                } else {
                    return Ok(0.0);
                }
            }
        };
        if used <= 0.0 {
            return Ok(0.0);
        }
        let sample = self.samples.len() - 1;
        match (p.is_interface(), to.is_interface()) {
            (true, false) => self.entry_events.push(EntryEvent {
                branch: c.branch,
                t,
                x0: p.x0(),
                sample,
            }),
            (false, true) => self.exit_events.push(ExitEvent {
                branch: c.branch,
                t: t + used,
                sample: sample + 1,
            }),
            _ => {}
        }
        self.steps.push(Step {
            t0: t,
            t1: t + used,
            from: p,
            to,
            control: *c,
        });
        self.samples.push((t + used, to));
        Ok(used)
    }
}

fn plane_point(branch: usize, xi: f64, x0: f64) -> JunctionPoint {
    JunctionPoint::new(branch, xi.max(0.0), x0).expect("finite intrinsic coordinates")
}

fn check_step(dt_int: f64) -> Result<(), TrajectoryError> {
    if dt_int > 0.0 && dt_int.is_finite() {
        Ok(())
    } else {
        Err(TrajectoryError::BadStep(dt_int))
    }
}

/// Integrates `schedule` from `start`.
pub fn simulate(
    spec: &ProblemSpec,
    start: JunctionPoint,
    schedule: &ControlSchedule,
    dt_int: f64,
) -> Result<Trajectory, TrajectoryError> {
    simulate_capped(spec, start, schedule, dt_int, f64::INFINITY)
}

fn simulate_capped(
    spec: &ProblemSpec,
    start: JunctionPoint,
    schedule: &ControlSchedule,
    dt_int: f64,
    cap: f64,
) -> Result<Trajectory, TrajectoryError> {
    check_step(dt_int)?;
    let mut traj = Trajectory::start(0.0, start);
    for seg in &schedule.segments {
        let c = lookup(spec, seg.control.branch, seg.control.id)?;
        let mut left = seg.duration.min(cap - traj.end_time());
        while left > TIME_EPS {
            let used = traj.advance(spec, c, dt_int.min(left))?;
            if used == 0.0 {
                break;
            }
            left -= used;
        }
    }
    Ok(traj)
}

/// Cost of a simulated trajectory over its own time span.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostBreakdown {
    /// Trapezoidal `∫ ℓ e^{-λt} dt`.
    pub running: f64,
    /// `Σ c_i(x_ik) e^{-λ t_ik}`.
    pub entry: f64,
    /// Bound `M e^{-λT}/λ` on the running cost after the last sample.
    pub tail_bound: f64,
    pub horizon: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.running + self.entry
    }
}

pub fn cost(spec: &ProblemSpec, traj: &Trajectory) -> CostBreakdown {
    let lambda = spec.lambda();
    let running = traj
        .steps
        .iter()
        .map(|s| {
            let plane = spec.plane(s.control.branch);
            let a = plane.running_cost(s.from.xi(), s.from.x0(), &s.control) * (-lambda * s.t0).exp();
            let b = plane.running_cost(s.to.xi(), s.to.x0(), &s.control) * (-lambda * s.t1).exp();
            0.5 * (s.t1 - s.t0) * (a + b)
        })
        .sum();
    let entry = traj
        .entry_events
        .iter()
        .map(|e| spec.plane(e.branch).entry_cost(e.x0) * (-lambda * e.t).exp())
        .sum();
    let horizon = traj.end_time();
    CostBreakdown {
        running,
        entry,
        tail_bound: spec.bound_m() * (-lambda * horizon).exp() / lambda,
        horizon,
    }
}

/// What the feedback policy does at a state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    /// Keep going with this control: an interior control of the occupied
    /// half-plane, or a tangential control on the interface.
    Move(ControlSample),
    /// Leave the interface into `control.branch`, paying its entry cost.
    Enter(ControlSample),
}

impl Action {
    pub fn control(&self) -> &ControlSample {
        match self {
            Action::Move(c) | Action::Enter(c) => c,
        }
    }
}

/// Feedback policy read off the argmins of the scheme clauses.
pub struct Policy<'a> {
    spec: &'a ProblemSpec,
    clauses: Clauses<'a>,
}

pub fn extract_policy<'a>(spec: &'a ProblemSpec, grid: &'a GridSpec, field: &'a ValueField) -> Policy<'a> {
    Policy {
        spec,
        clauses: Clauses::new(spec, grid, field),
    }
}

impl Policy<'_> {
    /// `None` only when no control is available at all.
    pub fn action(&self, p: &JunctionPoint) -> Option<Action> {
        let pick = |choice: crate::solver::Choice| *self.spec.control(choice.branch, choice.control).unwrap();
        match p.branch() {
            Branch::Plane(i) => self
                .clauses
                .interior(i, p.xi(), p.x0())
                .1
                .map(|c| Action::Move(pick(c))),
            Branch::Interface => {
                let (tv, tc) = self.clauses.tangential(p.x0());
                let (ev, ec) = self.clauses.entry(p.x0());
                match (tc, ec) {
                    (Some(t), Some(e)) => Some(if ev < tv {
                        Action::Enter(pick(e))
                    } else {
                        Action::Move(pick(t))
                    }),
                    (Some(t), None) => Some(Action::Move(pick(t))),
                    (None, Some(e)) => Some(Action::Enter(pick(e))),
                    (None, None) => None,
                }
            }
        }
    }

    /// Closed-loop trajectory over `[0, horizon]`, re-evaluating the policy
    /// every `dt_int`.
    pub fn rollout(&self, start: JunctionPoint, horizon: f64, dt_int: f64) -> Result<Trajectory, TrajectoryError> {
        check_step(dt_int)?;
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(TrajectoryError::BadHorizon(horizon));
        }
        let mut traj = Trajectory::start(0.0, start);
        while horizon - traj.end_time() > TIME_EPS {
            let (t, p) = traj.current();
            let Some(action) = self.action(&p) else { break };
            if traj.advance(self.spec, action.control(), dt_int.min(horizon - t))? == 0.0 {
                break;
            }
        }
        Ok(traj)
    }
}

/// Realized cost of a trajectory plus the discounted field value at its end,
/// minus the field value at its start. Dynamic programming makes this
/// nonnegative up to the scheme error for every admissible path, and close to
/// zero along optimal ones.
pub fn trajectory_dpp_residual(spec: &ProblemSpec, grid: &GridSpec, field: &ValueField, traj: &Trajectory) -> f64 {
    let c = cost(spec, traj);
    let (t_end, end) = traj.current();
    let start = traj.samples[0].1;
    c.total() + (-spec.lambda() * t_end).exp() * field.value_at(grid, &end) - field.value_at(grid, &start)
}

/// DPP residual of the extracted policy from `start` over `horizon`, with the
/// policy re-evaluated every `grid.dt`.
pub fn dpp_residual(
    spec: &ProblemSpec,
    grid: &GridSpec,
    field: &ValueField,
    start: JunctionPoint,
    horizon: f64,
) -> Result<f64, TrajectoryError> {
    let traj = extract_policy(spec, grid, field).rollout(start, horizon, grid.dt)?;
    Ok(trajectory_dpp_residual(spec, grid, field, &traj))
}

/// DPP residual of an arbitrary open-loop schedule.
pub fn schedule_dpp_residual(
    spec: &ProblemSpec,
    grid: &GridSpec,
    field: &ValueField,
    start: JunctionPoint,
    schedule: &ControlSchedule,
    dt_int: f64,
) -> Result<f64, TrajectoryError> {
    let traj = simulate(spec, start, schedule, dt_int)?;
    Ok(trajectory_dpp_residual(spec, grid, field, &traj))
}

/// Search space of [`brute_force_value`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BruteForceConfig {
    /// Total time `T`. The last segment runs until `T`; schedules whose
    /// trajectory stops before `T` are incomplete and skipped.
    pub horizon: f64,
    pub segments: usize,
    /// `(branch, control id)` pairs tried on every segment.
    pub candidates: Vec<(usize, usize)>,
    /// Durations tried for every segment but the last.
    pub durations: Vec<f64>,
    pub dt_int: f64,
    /// Largest number of schedules to enumerate.
    pub budget: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BruteForceResult {
    /// Smallest finite-horizon cost found.
    pub value: f64,
    /// Tail bound of the best schedule's trajectory.
    pub tail_bound: f64,
    pub best: Option<ControlSchedule>,
    pub enumerated: u128,
    pub admissible: u128,
}

impl BruteForceConfig {
    fn count(&self) -> Option<u128> {
        let c = self.candidates.len() as u128;
        let d = self.durations.len() as u128;
        let k = u32::try_from(self.segments).ok()?;
        c.checked_pow(k)?.checked_mul(d.checked_pow(k.checked_sub(1)?)?)
    }

    fn decode(&self, spec: &ProblemSpec, mut index: u128) -> Result<Option<ControlSchedule>, TrajectoryError> {
        let nc = self.candidates.len() as u128;
        let nd = self.durations.len() as u128;
        let mut segments = Vec::with_capacity(self.segments);
        let mut used = 0.0;
        for s in 0..self.segments {
            let (branch, id) = self.candidates[(index % nc) as usize];
            index /= nc;
            let duration = if s + 1 == self.segments {
                self.horizon
            } else {
                let d = self.durations[(index % nd) as usize];
                index /= nd;
                d
            };
            if s + 1 < self.segments {
                used += duration;
                if used >= self.horizon {
                    return Ok(None);
                }
            }
            segments.push(Segment {
                duration,
                control: *lookup(spec, branch, id)?,
            });
        }
        ControlSchedule::new(segments).map(Some)
    }
}

/// Smallest cost over every schedule of `config.segments` pieces with
/// controls from the candidate list and durations from the mesh. Schedules
/// that are inadmissible from `start`, or that get stuck before the horizon,
/// are skipped. `seed` only shuffles the
/// evaluation order; the reduction picks the lowest enumeration index among
/// equal costs, so the result does not depend on it.
pub fn brute_force_value(
    spec: &ProblemSpec,
    start: JunctionPoint,
    config: &BruteForceConfig,
    seed: u64,
) -> Result<BruteForceResult, TrajectoryError> {
    if config.segments == 0 || config.candidates.is_empty() || config.durations.is_empty() {
        return Err(TrajectoryError::EmptyEnumeration);
    }
    check_step(config.dt_int)?;
    if !(config.horizon > 0.0 && config.horizon.is_finite()) {
        return Err(TrajectoryError::BadHorizon(config.horizon));
    }
    if let Some(d) = config.durations.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
        return Err(TrajectoryError::BadDuration(*d));
    }
    for &(branch, id) in &config.candidates {
        lookup(spec, branch, id)?;
    }
    let needed = config.count().unwrap_or(u128::MAX);
    if needed > config.budget {
        return Err(TrajectoryError::BudgetExceeded {
            needed,
            budget: config.budget,
        });
    }
    let mut order: Vec<u128> = (0..needed).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let evaluated: Vec<Option<(f64, f64, u128)>> = order
        .par_iter()
        .map(|&index| {
            let schedule = config.decode(spec, index).ok().flatten()?;
            let traj = simulate_capped(spec, start, &schedule, config.dt_int, config.horizon).ok()?;
            if traj.end_time() < config.horizon - 1e-9 {
                return None;
            }
            let c = cost(spec, &traj);
            Some((c.total(), c.tail_bound, index))
        })
        .collect();
    let admissible = evaluated.iter().flatten().count() as u128;
    let best = evaluated
        .into_iter()
        .flatten()
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
    Ok(match best {
        Some((value, tail_bound, index)) => BruteForceResult {
            value,
            tail_bound,
            best: config.decode(spec, index)?,
            enumerated: needed,
            admissible,
        },
        None => BruteForceResult {
            value: f64::INFINITY,
            tail_bound: f64::INFINITY,
            best: None,
            enumerated: needed,
            admissible,
        },
    })
}
