//! Control-problem data on each half-plane and the assumption audits.
//!
//! Control sets are finite samples. Dynamics, running costs and entry costs
//! come from a small set of declarative parametric families so that problem
//! files never carry executable code.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{geodesic_distance, JunctionGeometry, JunctionPoint};

/// Slack allowed on declared bounds and Lipschitz constants.
pub const AUDIT_SLACK: f64 = 1e-9;
/// Tolerance of the 2-D hull membership tests.
pub const HULL_TOL: f64 = 1e-9;
/// Default number of directions swept by the strong controllability audit.
pub const DEFAULT_AUDIT_DIRECTIONS: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum ProblemError {
    #[error("discount rate must be positive and finite, got {0}")]
    BadDiscount(f64),
    #[error("tangency tolerance must be positive, got {0}")]
    BadTangency(f64),
    #[error("geometry has {geometry} half-planes but {planes} plane specs were given")]
    PlaneCount { geometry: usize, planes: usize },
    #[error("half-plane {0} has an empty control set")]
    EmptyControls(usize),
    #[error("control {id} listed on half-plane {expected} claims branch {found}")]
    ForeignControl { id: usize, expected: usize, found: usize },
    #[error("control ids on half-plane {branch} must be 0..n in order (found {id} at slot {slot})")]
    ControlIds { branch: usize, id: usize, slot: usize },
    #[error("half-plane {branch}: tabulated running cost has {values} values for {controls} controls")]
    TableLength {
        branch: usize,
        values: usize,
        controls: usize,
    },
    #[error("half-plane {0}: entry cost must be bounded below by a positive constant")]
    NonPositiveEntryCost(usize),
    #[error("half-plane {0}: parameters must be finite")]
    NonFinite(usize),
    #[error("half-plane {0}: disc control sample needs at least 3 boundary points")]
    SmallDisc(usize),
    #[error("controllability radius must be positive, got {0}")]
    BadRadius(f64),
}

/// One sampled control. `param` is the control value `a = (a_n, a_t)`; what it
/// means is decided by the half-plane's dynamics and cost families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlSample {
    pub branch: usize,
    pub id: usize,
    pub param: [f64; 2],
}

/// Velocity in intrinsic components: along `e_i` and along `e_0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Velocity {
    pub normal: f64,
    pub tangential: f64,
}

impl Velocity {
    pub fn norm(&self) -> f64 {
        self.normal.hypot(self.tangential)
    }
}

/// How a control sample list is generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlSampling {
    /// `boundary` points evenly spaced on the unit circle starting at angle 0,
    /// plus the centre when `center` is set.
    Disc { boundary: usize, center: bool },
    /// Explicit control values.
    List(Vec<[f64; 2]>),
}

impl ControlSampling {
    pub fn build(&self, branch: usize) -> Result<Vec<ControlSample>, ProblemError> {
        let params: Vec<[f64; 2]> = match self {
            ControlSampling::Disc { boundary, center } => {
                if *boundary < 3 {
                    return Err(ProblemError::SmallDisc(branch));
                }
                let mut v: Vec<[f64; 2]> = (0..*boundary).map(|k| unit_direction(k, *boundary)).collect();
                if *center {
                    v.push([0.0, 0.0]);
                }
                v
            }
            ControlSampling::List(v) => v.clone(),
        };
        Ok(params
            .into_iter()
            .enumerate()
            .map(|(id, param)| ControlSample { branch, id, param })
            .collect())
    }
}

/// `k`-th of `n` evenly spaced unit vectors, with exact zeros on the axes.
pub fn unit_direction(k: usize, n: usize) -> [f64; 2] {
    if (4 * k).is_multiple_of(n) {
        return match (4 * k) / n {
            0 => [1.0, 0.0],
            1 => [0.0, 1.0],
            2 => [-1.0, 0.0],
            _ => [0.0, -1.0],
        };
    }
    let theta = std::f64::consts::TAU * k as f64 / n as f64;
    [theta.cos(), theta.sin()]
}

fn identity() -> [[f64; 2]; 2] {
    [[1.0, 0.0], [0.0, 1.0]]
}

fn zero2() -> [[f64; 2]; 2] {
    [[0.0; 2]; 2]
}

/// Dynamics families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Dynamics {
    /// `f(x, a) = drift + gain · a + state_gain · (xi, x0)`, rows ordered
    /// (normal, tangential).
    Affine {
        #[serde(default)]
        drift: [f64; 2],
        #[serde(default = "identity")]
        gain: [[f64; 2]; 2],
        #[serde(default = "zero2")]
        state_gain: [[f64; 2]; 2],
    },
}

impl Dynamics {
    /// `f(x, a) = a`.
    pub fn control_velocity() -> Self {
        Dynamics::Affine {
            drift: [0.0; 2],
            gain: identity(),
            state_gain: zero2(),
        }
    }

    #[inline]
    pub fn eval(&self, xi: f64, x0: f64, a: &[f64; 2]) -> Velocity {
        match self {
            Dynamics::Affine {
                drift,
                gain,
                state_gain,
            } => Velocity {
                normal: drift[0]
                    + gain[0][0] * a[0]
                    + gain[0][1] * a[1]
                    + state_gain[0][0] * xi
                    + state_gain[0][1] * x0,
                tangential: drift[1]
                    + gain[1][0] * a[0]
                    + gain[1][1] * a[1]
                    + state_gain[1][0] * xi
                    + state_gain[1][1] * x0,
            },
        }
    }

    /// Whether `f(x, a)` does not depend on `x`.
    pub fn is_state_independent(&self) -> bool {
        match self {
            Dynamics::Affine { state_gain, .. } => state_gain.iter().flatten().all(|v| *v == 0.0),
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            Dynamics::Affine {
                drift,
                gain,
                state_gain,
            } => drift
                .iter()
                .chain(gain.iter().flatten())
                .chain(state_gain.iter().flatten())
                .all(|v| v.is_finite()),
        }
    }
}

/// Running cost families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum RunningCost {
    /// `base + control · a + state · (xi, x0)`.
    Affine {
        base: f64,
        #[serde(default)]
        control: [f64; 2],
        #[serde(default)]
        state: [f64; 2],
    },
    /// `base + control · a`, plus `jump` wherever `x0 >= at`.
    Step {
        base: f64,
        #[serde(default)]
        control: [f64; 2],
        jump: f64,
        at: f64,
    },
    /// One value per control id, independent of the state.
    Table { values: Vec<f64> },
}

impl RunningCost {
    pub fn constant(base: f64) -> Self {
        RunningCost::Affine {
            base,
            control: [0.0; 2],
            state: [0.0; 2],
        }
    }

    #[inline]
    pub fn eval(&self, xi: f64, x0: f64, control: &ControlSample) -> f64 {
        let a = &control.param;
        match self {
            RunningCost::Affine { base, control, state } => {
                base + control[0] * a[0] + control[1] * a[1] + state[0] * xi + state[1] * x0
            }
            RunningCost::Step {
                base,
                control,
                jump,
                at,
            } => {
                let step = if x0 >= *at { *jump } else { 0.0 };
                base + control[0] * a[0] + control[1] * a[1] + step
            }
            RunningCost::Table { values } => values[control.id],
        }
    }

    /// Whether `ℓ(x, a)` does not depend on `x`.
    pub fn is_state_independent(&self) -> bool {
        match self {
            RunningCost::Affine { state, .. } => state.iter().all(|v| *v == 0.0),
            RunningCost::Step { jump, .. } => *jump == 0.0,
            RunningCost::Table { .. } => true,
        }
    }

    /// Same family with every value raised by `delta`.
    pub fn shifted(&self, delta: f64) -> Self {
        let mut out = self.clone();
        match &mut out {
            RunningCost::Affine { base, .. } | RunningCost::Step { base, .. } => *base += delta,
            RunningCost::Table { values } => values.iter_mut().for_each(|v| *v += delta),
        }
        out
    }

    fn is_finite(&self) -> bool {
        match self {
            RunningCost::Affine { base, control, state } => {
                base.is_finite() && control.iter().chain(state).all(|v| v.is_finite())
            }
            RunningCost::Step {
                base,
                control,
                jump,
                at,
            } => base.is_finite() && jump.is_finite() && at.is_finite() && control.iter().all(|v| v.is_finite()),
            RunningCost::Table { values } => values.iter().all(|v| v.is_finite()),
        }
    }
}

/// Entry cost families on the interface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EntryCost {
    Constant {
        value: f64,
    },
    /// `max(floor, peak - slope * |x0 - center|)`.
    Tent {
        peak: f64,
        slope: f64,
        floor: f64,
        #[serde(default)]
        center: f64,
    },
}

impl EntryCost {
    #[inline]
    pub fn eval(&self, x0: f64) -> f64 {
        match self {
            EntryCost::Constant { value } => *value,
            EntryCost::Tent {
                peak,
                slope,
                floor,
                center,
            } => floor.max(peak - slope * (x0 - center).abs()),
        }
    }

    /// Guaranteed positive lower bound of the family.
    pub fn lower_bound(&self) -> f64 {
        match self {
            EntryCost::Constant { value } => *value,
            EntryCost::Tent { floor, .. } => *floor,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            EntryCost::Constant { value } => EntryCost::Constant { value: value * factor },
            EntryCost::Tent {
                peak,
                slope,
                floor,
                center,
            } => EntryCost::Tent {
                peak: peak * factor,
                slope: slope * factor,
                floor: floor * factor,
                center: *center,
            },
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            EntryCost::Constant { value } => value.is_finite(),
            EntryCost::Tent {
                peak,
                slope,
                floor,
                center,
            } => [peak, slope, floor, center].iter().all(|v| v.is_finite()),
        }
    }
}

/// Data attached to one half-plane `P_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfPlaneSpec {
    pub controls: Vec<ControlSample>,
    pub dynamics: Dynamics,
    pub running_cost: RunningCost,
    pub entry_cost: EntryCost,
    /// Declared bound on `|f|` and `|ℓ|`.
    pub bound_m: f64,
    /// Declared Lipschitz constant of `f`, `ℓ` and the entry cost.
    pub lipschitz_l: f64,
}

impl HalfPlaneSpec {
    #[inline]
    pub fn velocity(&self, xi: f64, x0: f64, control: &ControlSample) -> Velocity {
        self.dynamics.eval(xi, x0, &control.param)
    }

    #[inline]
    pub fn running_cost(&self, xi: f64, x0: f64, control: &ControlSample) -> f64 {
        self.running_cost.eval(xi, x0, control)
    }

    #[inline]
    pub fn entry_cost(&self, x0: f64) -> f64 {
        self.entry_cost.eval(x0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllabilityMode {
    Strong,
    Moderate,
}

/// A complete problem: half-planes, discount, and the tolerances that decide
/// tangency and controllability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    geometry: JunctionGeometry,
    planes: Vec<HalfPlaneSpec>,
    lambda: f64,
    tangency_eps: f64,
    controllability: ControllabilityMode,
    delta: f64,
}

impl ProblemSpec {
    pub fn new(
        geometry: JunctionGeometry,
        planes: Vec<HalfPlaneSpec>,
        lambda: f64,
        tangency_eps: f64,
        controllability: ControllabilityMode,
        delta: f64,
    ) -> Result<Self, ProblemError> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(ProblemError::BadDiscount(lambda));
        }
        if !(tangency_eps > 0.0 && tangency_eps.is_finite()) {
            return Err(ProblemError::BadTangency(tangency_eps));
        }
        if !delta.is_finite() {
            return Err(ProblemError::BadRadius(delta));
        }
        if planes.len() != geometry.n_branches() {
            return Err(ProblemError::PlaneCount {
                geometry: geometry.n_branches(),
                planes: planes.len(),
            });
        }
        for (k, plane) in planes.iter().enumerate() {
            let branch = k + 1;
            if plane.controls.is_empty() {
                return Err(ProblemError::EmptyControls(branch));
            }
            for (slot, c) in plane.controls.iter().enumerate() {
                if c.branch != branch {
                    return Err(ProblemError::ForeignControl {
                        id: c.id,
                        expected: branch,
                        found: c.branch,
                    });
                }
                if c.id != slot {
                    return Err(ProblemError::ControlIds { branch, id: c.id, slot });
                }
                if !c.param.iter().all(|v| v.is_finite()) {
                    return Err(ProblemError::NonFinite(branch));
                }
            }
            if let RunningCost::Table { values } = &plane.running_cost {
                if values.len() != plane.controls.len() {
                    return Err(ProblemError::TableLength {
                        branch,
                        values: values.len(),
                        controls: plane.controls.len(),
                    });
                }
            }
            if !(plane.dynamics.is_finite()
                && plane.running_cost.is_finite()
                && plane.entry_cost.is_finite()
                && plane.bound_m.is_finite()
                && plane.lipschitz_l.is_finite())
            {
                return Err(ProblemError::NonFinite(branch));
            }
            if !(plane.entry_cost.lower_bound() > 0.0) {
                return Err(ProblemError::NonPositiveEntryCost(branch));
            }
        }
        Ok(Self {
            geometry,
            planes,
            lambda,
            tangency_eps,
            controllability,
            delta,
        })
    }

    pub fn geometry(&self) -> &JunctionGeometry {
        &self.geometry
    }

    pub fn n_branches(&self) -> usize {
        self.planes.len()
    }

    /// Half-plane `P_i`, 1-based. Panics on an out-of-range index.
    pub fn plane(&self, branch: usize) -> &HalfPlaneSpec {
        &self.planes[branch - 1]
    }

    pub fn planes(&self) -> &[HalfPlaneSpec] {
        &self.planes
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn tangency_eps(&self) -> f64 {
        self.tangency_eps
    }

    pub fn controllability(&self) -> ControllabilityMode {
        self.controllability
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `M = max_i M_i`.
    pub fn bound_m(&self) -> f64 {
        self.planes.iter().map(|p| p.bound_m).fold(0.0, f64::max)
    }

    pub fn control(&self, branch: usize, id: usize) -> Option<&ControlSample> {
        self.planes.get(branch.checked_sub(1)?)?.controls.get(id)
    }

    /// Copy with every running cost shifted by `delta`.
    pub fn with_shifted_running_costs(&self, delta: f64) -> Self {
        let mut out = self.clone();
        for p in &mut out.planes {
            p.running_cost = p.running_cost.shifted(delta);
            p.bound_m += delta.abs();
        }
        out
    }

    /// Copy with half-plane `branch`'s data replaced.
    pub fn with_plane(&self, branch: usize, plane: HalfPlaneSpec) -> Result<Self, ProblemError> {
        let mut planes = self.planes.clone();
        planes[branch - 1] = plane;
        Self::new(
            self.geometry.clone(),
            planes,
            self.lambda,
            self.tangency_eps,
            self.controllability,
            self.delta,
        )
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self, ProblemError> {
        Self::new(
            self.geometry.clone(),
            self.planes.clone(),
            lambda,
            self.tangency_eps,
            self.controllability,
            self.delta,
        )
    }

    /// Velocities `f_i(x, a)` of every sampled control of `P_i` at the
    /// interface point `x0`.
    pub fn interface_velocities(&self, branch: usize, x0: f64) -> Vec<Velocity> {
        let plane = self.plane(branch);
        plane.controls.iter().map(|c| plane.velocity(0.0, x0, c)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    DynamicsLipschitz,
    RunningCostLipschitz,
    EntryCostLipschitz,
    DynamicsBound,
    RunningCostBound,
    EntryCostNonPositive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub branch: usize,
    pub control: Option<usize>,
    pub at: JunctionPoint,
    pub other: Option<JunctionPoint>,
    /// Measured quotient or value.
    pub measured: f64,
    /// Declared limit it was compared with.
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub violations: Vec<Violation>,
    /// Largest empirical Lipschitz quotient over all pairs and controls.
    pub max_lipschitz_quotient: f64,
    /// Smallest audited entry cost per branch (`+inf` when no interface
    /// sample was given).
    pub min_entry_cost: Vec<f64>,
    /// `C = min_i min_entry_cost[i]`.
    pub entry_cost_floor: f64,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Empirical check of the boundedness, Lipschitz and entry-cost positivity
/// assumptions on the given sample points.
pub fn audit_regularity(spec: &ProblemSpec, samples: &[JunctionPoint]) -> AuditReport {
    let mut violations = Vec::new();
    let mut max_q: f64 = 0.0;
    let mut min_entry = vec![f64::INFINITY; spec.n_branches()];

    for branch in 1..=spec.n_branches() {
        let plane = spec.plane(branch);
        let pts: Vec<&JunctionPoint> = samples.iter().filter(|p| p.lies_on(branch)).collect();
        let limit_l = plane.lipschitz_l + AUDIT_SLACK;
        let limit_m = plane.bound_m + AUDIT_SLACK;

        for p in &pts {
            for c in &plane.controls {
                let v = plane.velocity(p.xi(), p.x0(), c).norm();
                if v > limit_m {
                    violations.push(Violation {
                        kind: ViolationKind::DynamicsBound,
                        branch,
                        control: Some(c.id),
                        at: **p,
                        other: None,
                        measured: v,
                        limit: plane.bound_m,
                    });
                }
                let l = plane.running_cost(p.xi(), p.x0(), c).abs();
                if l > limit_m {
                    violations.push(Violation {
                        kind: ViolationKind::RunningCostBound,
                        branch,
                        control: Some(c.id),
                        at: **p,
                        other: None,
                        measured: l,
                        limit: plane.bound_m,
                    });
                }
            }
            if p.is_interface() {
                let e = plane.entry_cost(p.x0());
                min_entry[branch - 1] = min_entry[branch - 1].min(e);
                if !(e > 0.0) {
                    violations.push(Violation {
                        kind: ViolationKind::EntryCostNonPositive,
                        branch,
                        control: None,
                        at: **p,
                        other: None,
                        measured: e,
                        limit: 0.0,
                    });
                }
            }
        }

        for (k, a) in pts.iter().enumerate() {
            for b in &pts[k + 1..] {
                let d = geodesic_distance(a, b);
                if d <= 0.0 {
                    continue;
                }
                for c in &plane.controls {
                    let fa = plane.velocity(a.xi(), a.x0(), c);
                    let fb = plane.velocity(b.xi(), b.x0(), c);
                    let qf = (fa.normal - fb.normal).hypot(fa.tangential - fb.tangential) / d;
                    let qa = plane.running_cost(a.xi(), a.x0(), c);
                    let qb = plane.running_cost(b.xi(), b.x0(), c);
                    let ql = (qa - qb).abs() / d;
                    max_q = max_q.max(qf).max(ql);
                    for (kind, q) in [
                        (ViolationKind::DynamicsLipschitz, qf),
                        (ViolationKind::RunningCostLipschitz, ql),
                    ] {
                        if q > limit_l {
                            violations.push(Violation {
                                kind,
                                branch,
                                control: Some(c.id),
                                at: **a,
                                other: Some(**b),
                                measured: q,
                                limit: plane.lipschitz_l,
                            });
                        }
                    }
                }
                if a.is_interface() && b.is_interface() {
                    let q = (plane.entry_cost(a.x0()) - plane.entry_cost(b.x0())).abs() / d;
                    max_q = max_q.max(q);
                    if q > limit_l {
                        violations.push(Violation {
                            kind: ViolationKind::EntryCostLipschitz,
                            branch,
                            control: None,
                            at: **a,
                            other: Some(**b),
                            measured: q,
                            limit: plane.lipschitz_l,
                        });
                    }
                }
            }
        }
    }

    let floor = min_entry.iter().copied().fold(f64::INFINITY, f64::min);
    AuditReport {
        violations,
        max_lipschitz_quotient: max_q,
        min_entry_cost: min_entry,
        entry_cost_floor: floor,
    }
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Counter-clockwise convex hull (monotone chain), collinear points dropped.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], *p) <= 0.0 {
            lower.pop();
        }
        lower.push(*p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], *p) <= 0.0 {
            upper.pop();
        }
        upper.push(*p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Membership in a counter-clockwise hull, allowing `tol` distance outside.
pub fn hull_contains(hull: &[[f64; 2]], p: [f64; 2], tol: f64) -> bool {
    if hull.len() < 3 {
        return false;
    }
    (0..hull.len()).all(|k| {
        let a = hull[k];
        let b = hull[(k + 1) % hull.len()];
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        cross(a, b, p) >= -tol * len
    })
}

fn check_radius(delta: f64) -> Result<(), ProblemError> {
    if delta > 0.0 && delta.is_finite() {
        Ok(())
    } else {
        Err(ProblemError::BadRadius(delta))
    }
}

/// Whether, for every half-plane, the disc of radius `delta` lies in the
/// convex hull of the sampled velocities at the interface point `x0`.
///
/// The disc is swept at `directions` evenly spaced angles; the four axis
/// directions are always included.
pub fn audit_strong_controllability(
    spec: &ProblemSpec,
    x0: f64,
    delta: f64,
    directions: usize,
) -> Result<bool, ProblemError> {
    check_radius(delta)?;
    let n = directions.max(4);
    for branch in 1..=spec.n_branches() {
        let pts: Vec<[f64; 2]> = spec
            .interface_velocities(branch, x0)
            .iter()
            .map(|v| [v.normal, v.tangential])
            .collect();
        let hull = convex_hull(&pts);
        let sweep = (0..n)
            .map(|k| unit_direction(k, n))
            .chain([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]);
        for d in sweep {
            if !hull_contains(&hull, [delta * d[0], delta * d[1]], HULL_TOL) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Range of the tangential component over the convex hull of `pts` sliced by
/// the line `normal = 0`. `None` when the slice is empty.
pub fn tangential_slice(pts: &[Velocity], eps: f64) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in pts {
        if p.normal.abs() <= eps {
            lo = lo.min(p.tangential);
            hi = hi.max(p.tangential);
        }
    }
    for p in pts.iter().filter(|p| p.normal < -eps) {
        for q in pts.iter().filter(|q| q.normal > eps) {
            let s = -p.normal / (q.normal - p.normal);
            let t = p.tangential + s * (q.tangential - p.tangential);
            lo = lo.min(t);
            hi = hi.max(t);
        }
    }
    (lo <= hi).then_some((lo, hi))
}

/// Moderate controllability at interface point `x0`:
/// (a) on every half-plane the normal components reach `[-delta, delta]`;
/// (b) on some half-plane the tangential velocities reach `[-delta, delta]`
/// along the interface.
///
/// Both clauses read the sampled velocity sets through their convex hulls;
/// the endpoint tolerance is `max(tangency_eps, HULL_TOL)`.
pub fn audit_moderate_controllability(spec: &ProblemSpec, x0: f64, delta: f64) -> Result<bool, ProblemError> {
    check_radius(delta)?;
    let tol = spec.tangency_eps().max(HULL_TOL);
    let mut tangential_ok = false;
    for branch in 1..=spec.n_branches() {
        let vel = spec.interface_velocities(branch, x0);
        let lo = vel.iter().map(|v| v.normal).fold(f64::INFINITY, f64::min);
        let hi = vel.iter().map(|v| v.normal).fold(f64::NEG_INFINITY, f64::max);
        if lo > -delta + tol || hi < delta - tol {
            return Ok(false);
        }
        if let Some((tlo, thi)) = tangential_slice(&vel, spec.tangency_eps()) {
            if tlo <= -delta + tol && thi >= delta - tol {
                tangential_ok = true;
            }
        }
    }
    Ok(tangential_ok)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn disc_plane(branch: usize, running: RunningCost, entry: f64) -> HalfPlaneSpec {
        HalfPlaneSpec {
            controls: ControlSampling::Disc {
                boundary: 64,
                center: true,
            }
            .build(branch)
            .unwrap(),
            dynamics: Dynamics::control_velocity(),
            running_cost: running,
            entry_cost: EntryCost::Constant { value: entry },
            bound_m: 2.0,
            lipschitz_l: 1.0,
        }
    }

    fn two_plane(p1: HalfPlaneSpec, p2: HalfPlaneSpec) -> ProblemSpec {
        ProblemSpec::new(
            JunctionGeometry::evenly_spaced(2).unwrap(),
            vec![p1, p2],
            1.0,
            1e-9,
            ControllabilityMode::Strong,
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn disc_sampling_is_exact_on_axes() {
        let c = ControlSampling::Disc {
            boundary: 64,
            center: true,
        }
        .build(1)
        .unwrap();
        assert_eq!(c.len(), 65);
        assert_eq!(c[16].param, [0.0, 1.0]);
        assert_eq!(c[32].param, [-1.0, 0.0]);
        assert_eq!(c[48].param, [0.0, -1.0]);
        assert_eq!(c[64].param, [0.0, 0.0]);
    }

    #[test]
    fn construction_rejects_bad_specs() {
        let g = JunctionGeometry::evenly_spaced(2).unwrap();
        let p = disc_plane(1, RunningCost::constant(1.0), 1.0);
        let q = disc_plane(2, RunningCost::constant(1.0), 1.0);
        let mk = |planes: Vec<HalfPlaneSpec>, lambda: f64, eps: f64| {
            ProblemSpec::new(g.clone(), planes, lambda, eps, ControllabilityMode::Strong, 0.5)
        };
        assert_eq!(
            mk(vec![p.clone(), q.clone()], 0.0, 1e-9),
            Err(ProblemError::BadDiscount(0.0))
        );
        assert_eq!(
            mk(vec![p.clone(), q.clone()], 1.0, 0.0),
            Err(ProblemError::BadTangency(0.0))
        );
        assert!(matches!(
            mk(vec![p.clone()], 1.0, 1e-9),
            Err(ProblemError::PlaneCount { .. })
        ));
        // controls of P_1 reused on P_2 break disjointness
        assert!(matches!(
            mk(vec![p.clone(), p.clone()], 1.0, 1e-9),
            Err(ProblemError::ForeignControl { .. })
        ));
        let mut free = q.clone();
        free.entry_cost = EntryCost::Tent {
            peak: 3.0,
            slope: 1.0,
            floor: 0.0,
            center: 0.0,
        };
        assert_eq!(
            mk(vec![p.clone(), free], 1.0, 1e-9),
            Err(ProblemError::NonPositiveEntryCost(2))
        );
        let mut table = q.clone();
        table.running_cost = RunningCost::Table { values: vec![1.0; 3] };
        assert!(matches!(
            mk(vec![p, table], 1.0, 1e-9),
            Err(ProblemError::TableLength { .. })
        ));
    }

    #[test]
    fn step_cost_breaks_zero_lipschitz() {
        let mut p1 = disc_plane(
            1,
            RunningCost::Step {
                base: 1.0,
                control: [0.0; 2],
                jump: 0.5,
                at: 0.0,
            },
            1.0,
        );
        p1.lipschitz_l = 0.0;
        let mut p2 = disc_plane(2, RunningCost::constant(1.0), 1.0);
        p2.lipschitz_l = 0.0;
        let spec = two_plane(p1, p2);
        let samples: Vec<JunctionPoint> = (-4..=4)
            .map(|k| JunctionPoint::new(1, 1.0, k as f64 * 0.25).unwrap())
            .collect();
        let report = audit_regularity(&spec, &samples);
        assert!(!report.is_clean());
        assert!(report
            .violations
            .iter()
            .all(|v| v.kind == ViolationKind::RunningCostLipschitz && v.branch == 1));
        // every violating pair straddles the step
        assert!(report
            .violations
            .iter()
            .all(|v| (v.at.x0() < 0.0) != (v.other.unwrap().x0() < 0.0)));
    }

    #[test]
    fn bound_violation_is_reported() {
        let mut p1 = disc_plane(1, RunningCost::constant(5.0), 1.0);
        p1.bound_m = 2.0;
        let spec = two_plane(p1, disc_plane(2, RunningCost::constant(1.0), 1.0));
        let report = audit_regularity(&spec, &[JunctionPoint::new(1, 1.0, 0.0).unwrap()]);
        assert!(report
            .violations
            .iter()
            .any(|v| v.kind == ViolationKind::RunningCostBound));
    }

    #[test]
    fn hull_basics() {
        let sq = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]];
        let h = convex_hull(&sq);
        assert_eq!(h.len(), 4);
        assert!(hull_contains(&h, [0.5, 0.5], 0.0));
        assert!(hull_contains(&h, [1.0, 0.5], 1e-12));
        assert!(!hull_contains(&h, [1.1, 0.5], 1e-9));
    }

    #[test]
    fn one_sided_dynamics_is_not_strongly_controllable() {
        let mut p1 = disc_plane(1, RunningCost::constant(1.0), 1.0);
        // normal component restricted to [0, 1]
        p1.controls = ControlSampling::List(
            (0..=32)
                .map(|k| unit_direction(k, 64))
                .filter(|a| a[0] >= 0.0)
                .chain([[0.0, 0.0]])
                .collect(),
        )
        .build(1)
        .unwrap();
        let spec = two_plane(p1, disc_plane(2, RunningCost::constant(1.0), 1.0));
        assert!(!audit_strong_controllability(&spec, 0.0, 0.1, 64).unwrap());
        assert!(!audit_moderate_controllability(&spec, 0.0, 0.1).unwrap());
    }

    #[test]
    fn no_tangential_motion_fails_moderate_clause_b() {
        let mut p1 = disc_plane(1, RunningCost::constant(1.0), 1.0);
        p1.dynamics = Dynamics::Affine {
            drift: [0.0; 2],
            gain: [[1.0, 0.0], [0.0, 0.0]],
            state_gain: [[0.0; 2]; 2],
        };
        let mut p2 = p1.clone();
        p2.controls = p1.controls.iter().map(|c| ControlSample { branch: 2, ..*c }).collect();
        let spec = two_plane(p1, p2);
        assert!(!audit_moderate_controllability(&spec, 0.0, 0.5).unwrap());
        assert!(!audit_strong_controllability(&spec, 0.0, 0.5, 64).unwrap());
    }

    #[test]
    fn radius_must_be_positive() {
        let spec = two_plane(
            disc_plane(1, RunningCost::constant(1.0), 1.0),
            disc_plane(2, RunningCost::constant(1.0), 1.0),
        );
        assert_eq!(
            audit_strong_controllability(&spec, 0.0, 0.0, 64),
            Err(ProblemError::BadRadius(0.0))
        );
        assert_eq!(
            audit_moderate_controllability(&spec, 0.0, -1.0),
            Err(ProblemError::BadRadius(-1.0))
        );
    }

    #[test]
    fn tangential_slice_of_a_diamond() {
        let v = |n: f64, t: f64| Velocity {
            normal: n,
            tangential: t,
        };
        let pts = [v(1.0, 1.0), v(-1.0, 1.0), v(1.0, -3.0), v(-1.0, -1.0)];
        let (lo, hi) = tangential_slice(&pts, 1e-9).unwrap();
        assert!((hi - 1.0).abs() < 1e-12);
        assert!((lo + 2.0).abs() < 1e-12);
        assert!(tangential_slice(&[v(1.0, 0.0)], 1e-9).is_none());
    }
}
