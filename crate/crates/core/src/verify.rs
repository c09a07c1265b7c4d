//! Structural checks run on solved fields.
//!
//! * the sandwich `max_i v_i <= u <= min_i (v_i + c_i)` at every interface node;
//! * ordering of converged fields for dominated problem pairs (the scheme
//!   counterpart of the comparison principle) and the additive-constant
//!   identity;
//! * the pointwise residual `λ v_i + H_i(x, ∇v_i)` away from kinks;
//! * the controllability regime at every interface node.

use serde::Serialize;
use thiserror::Error;

use crate::geometry::JunctionPoint;
use crate::hamiltonians::{hamiltonian, Covector};
use crate::problem::{
    audit_moderate_controllability, audit_strong_controllability, ProblemError, ProblemSpec, DEFAULT_AUDIT_DIRECTIONS,
};
use crate::solver::{sl_update_into, GridSpec, SolverError, StepWeights, ValueField};

/// A node is treated as a kink when an undivided second difference exceeds
/// this multiple of `h²`.
pub const KINK_THRESHOLD: f64 = 10.0;
/// Slack on the pointwise domination preconditions.
const DOMINATION_SLACK: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum VerifyError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("problems differ in {0}; comparison needs the same controls and dynamics")]
    Incomparable(&'static str),
    #[error("domination fails on P_{branch} at (xi = {xi}, x0 = {x0}): {what}")]
    NotDominated {
        branch: usize,
        xi: f64,
        x0: f64,
        what: &'static str,
    },
    #[error("paired solve did not converge within {0} sweeps")]
    NotConverged(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SandwichSide {
    /// `v_i > u`.
    Lower,
    /// `u > v_i + c_i`.
    Upper,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichViolation {
    pub x0: f64,
    pub branch: usize,
    pub side: SandwichSide,
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichReport {
    pub nodes: usize,
    pub slack: f64,
    /// Largest `max_i v_i - u` over the nodes.
    pub worst_lower: f64,
    /// Largest `u - min_i (v_i + c_i)` over the nodes; values near zero mean
    /// the upper bound is tight.
    pub worst_upper: f64,
    pub violations: Vec<SandwichViolation>,
}

impl SandwichReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Sandwich inequality at every interface node, with slack
/// `2 tol / (1 - e^{-λ dt})` for a field converged to sweep change `tol`.
pub fn check_sandwich(spec: &ProblemSpec, grid: &GridSpec, field: &ValueField, tol: f64) -> SandwichReport {
    let beta = StepWeights::new(spec.lambda(), grid.dt).discount;
    let slack = 2.0 * tol / (1.0 - beta);
    let mut worst_lower = f64::NEG_INFINITY;
    let mut worst_upper = f64::NEG_INFINITY;
    let mut violations = Vec::new();
    for j in 0..grid.n_x0() {
        let x0 = grid.x0_at(j);
        let u = field.gamma()[j];
        let mut upper = f64::INFINITY;
        let mut upper_branch = 0;
        for b in 1..=spec.n_branches() {
            let v = field.node(b, 0, j);
            let lower = v - u;
            worst_lower = worst_lower.max(lower);
            if lower > slack {
                violations.push(SandwichViolation {
                    x0,
                    branch: b,
                    side: SandwichSide::Lower,
                    excess: lower,
                });
            }
            let bound = v + spec.plane(b).entry_cost(x0);
            if bound < upper {
                upper = bound;
                upper_branch = b;
            }
        }
        worst_upper = worst_upper.max(u - upper);
        if u - upper > slack {
            violations.push(SandwichViolation {
                x0,
                branch: upper_branch,
                side: SandwichSide::Upper,
                excess: u - upper,
            });
        }
    }
    SandwichReport {
        nodes: grid.n_x0(),
        slack,
        worst_lower,
        worst_upper,
        violations,
    }
}

/// Two problems iterated in lockstep from given starts.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSolve {
    pub a: ValueField,
    pub b: ValueField,
    pub iterations: usize,
}

/// Iterates both schemes together until both sweep changes drop below `tol`.
pub fn paired_solve(
    spec_a: &ProblemSpec,
    spec_b: &ProblemSpec,
    grid: &GridSpec,
    init_a: ValueField,
    init_b: ValueField,
    tol: f64,
    max_iter: usize,
) -> Result<PairedSolve, VerifyError> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(SolverError::BadTolerance(tol).into());
    }
    grid.validate()?;
    if !init_a.matches(spec_a, grid) || !init_b.matches(spec_b, grid) {
        return Err(SolverError::ShapeMismatch.into());
    }
    let (mut a, mut b) = (init_a, init_b);
    let (mut na, mut nb) = (a.clone(), b.clone());
    for it in 1..=max_iter {
        sl_update_into(spec_a, grid, &a, &mut na)?;
        sl_update_into(spec_b, grid, &b, &mut nb)?;
        let change = na.sup_distance(&a).max(nb.sup_distance(&b));
        std::mem::swap(&mut a, &mut na);
        std::mem::swap(&mut b, &mut nb);
        if !change.is_finite() {
            return Err(SolverError::NonFinite.into());
        }
        if change < tol {
            return Ok(PairedSolve { a, b, iterations: it });
        }
    }
    Err(VerifyError::NotConverged(max_iter))
}

fn check_comparable(a: &ProblemSpec, b: &ProblemSpec) -> Result<(), VerifyError> {
    if a.n_branches() != b.n_branches() {
        return Err(VerifyError::Incomparable("number of half-planes"));
    }
    if a.lambda() != b.lambda() {
        return Err(VerifyError::Incomparable("discount rate"));
    }
    if a.tangency_eps() != b.tangency_eps() {
        return Err(VerifyError::Incomparable("tangency tolerance"));
    }
    for (p, q) in a.planes().iter().zip(b.planes()) {
        if p.controls != q.controls {
            return Err(VerifyError::Incomparable("control samples"));
        }
        if p.dynamics != q.dynamics {
            return Err(VerifyError::Incomparable("dynamics"));
        }
    }
    Ok(())
}

/// Checks `ℓ^B >= ℓ^A` at every node and control, and `c^B >= c^A` at every
/// interface node.
fn check_domination(a: &ProblemSpec, b: &ProblemSpec, grid: &GridSpec) -> Result<(), VerifyError> {
    for (idx, (p, q)) in a.planes().iter().zip(b.planes()).enumerate() {
        let branch = idx + 1;
        for j in 0..grid.n_x0() {
            let x0 = grid.x0_at(j);
            if q.entry_cost(x0) < p.entry_cost(x0) - DOMINATION_SLACK {
                return Err(VerifyError::NotDominated {
                    branch,
                    xi: 0.0,
                    x0,
                    what: "entry cost",
                });
            }
            for k in 0..grid.n_xi() {
                let xi = grid.xi_at(k);
                for c in &p.controls {
                    if q.running_cost(xi, x0, c) < p.running_cost(xi, x0, c) - DOMINATION_SLACK {
                        return Err(VerifyError::NotDominated {
                            branch,
                            xi,
                            x0,
                            what: "running cost",
                        });
                    }
                }
            }
        }
    }
    Ok(())
}

/// Common start that is a supersolution of both schemes.
fn common_supersolution(a: &ProblemSpec, b: &ProblemSpec, grid: &GridSpec) -> ValueField {
    let ia = ValueField::initial(a, grid);
    let ib = ValueField::initial(b, grid);
    ia.zip_with(&ib, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub iterations: usize,
    pub tol: f64,
    /// Largest `field_A - field_B` over all nodes.
    pub max_excess: f64,
    pub bitwise_equal: bool,
}

impl ComparisonReport {
    pub fn passed(&self) -> bool {
        self.max_excess <= 2.0 * self.tol
    }
}

/// Solves a dominated pair (`B` costs at least as much as `A`) from a common
/// supersolution and measures how far `field_A` exceeds `field_B`.
pub fn check_monotone_comparison(
    spec_a: &ProblemSpec,
    spec_b: &ProblemSpec,
    grid: &GridSpec,
    tol: f64,
    max_iter: usize,
) -> Result<ComparisonReport, VerifyError> {
    grid.validate()?;
    check_comparable(spec_a, spec_b)?;
    check_domination(spec_a, spec_b, grid)?;
    let init = common_supersolution(spec_a, spec_b, grid);
    let pair = paired_solve(spec_a, spec_b, grid, init.clone(), init, tol, max_iter)?;
    Ok(ComparisonReport {
        iterations: pair.iterations,
        tol,
        max_excess: pair.a.max_excess_over(&pair.b),
        bitwise_equal: pair.a == pair.b,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftReport {
    pub shift: f64,
    pub iterations: usize,
    pub tol: f64,
    /// `sup |field(ℓ + shift) - field(ℓ) - shift/λ|`.
    pub max_deviation: f64,
}

impl ShiftReport {
    pub fn passed(&self) -> bool {
        self.max_deviation <= 2.0 * self.tol
    }
}

/// Adding a constant to every running cost raises every value by
/// `shift / λ`.
pub fn check_shift_identity(
    spec: &ProblemSpec,
    grid: &GridSpec,
    shift: f64,
    tol: f64,
    max_iter: usize,
) -> Result<ShiftReport, VerifyError> {
    let shifted = spec.with_shifted_running_costs(shift);
    let pair = paired_solve(
        spec,
        &shifted,
        grid,
        ValueField::initial(spec, grid),
        ValueField::initial(&shifted, grid),
        tol,
        max_iter,
    )?;
    let offset = shift / spec.lambda();
    let max_deviation = pair
        .b
        .iter_values()
        .zip(pair.a.iter_values())
        .map(|(b, a)| (b - a - offset).abs())
        .fold(0.0, f64::max);
    Ok(ShiftReport {
        shift,
        iterations: pair.iterations,
        tol,
        max_deviation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualNode {
    pub branch: usize,
    pub xi: f64,
    pub x0: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    pub checked: usize,
    pub excluded_kinks: usize,
    /// Sup of `|λ v_i + H_i(x, ∇v_i)|` over the checked nodes.
    pub sup_residual: f64,
    pub mean_residual: f64,
    /// Largest signed residual; positive values mean `v` is too steep.
    pub max_signed: f64,
    pub worst: Option<ResidualNode>,
    /// Largest `|v_i(h, x0) - v_i(0, x0)| / h` over the interface nodes, the
    /// measured Lipschitz quotient next to the interface.
    pub interface_lipschitz_quotient: f64,
}

/// `λ v_i + H_i(x, ∇v_i)` with centred differences at interior nodes at
/// least `2h` from every edge of the box, skipping kinks and their
/// neighbours.
pub fn check_viscosity_residual_interior(
    spec: &ProblemSpec,
    grid: &GridSpec,
    field: &ValueField,
) -> Result<ResidualReport, VerifyError> {
    grid.validate()?;
    if !field.matches(spec, grid) {
        return Err(SolverError::ShapeMismatch.into());
    }
    let (n_xi, n_x0) = (grid.n_xi(), grid.n_x0());
    let h = grid.h;
    let limit = KINK_THRESHOLD * h * h;
    let mut checked = 0;
    let mut excluded = 0;
    let mut sum = 0.0;
    let mut sup = 0.0f64;
    let mut max_signed = f64::NEG_INFINITY;
    let mut worst = None;
    let mut quotient = 0.0f64;
    for b in 1..=spec.n_branches() {
        let v = |k: usize, j: usize| field.node(b, k, j);
        for j in 0..n_x0 {
            if n_xi > 1 {
                quotient = quotient.max((v(1, j) - v(0, j)).abs() / h);
            }
        }
        let kink = |k: usize, j: usize| {
            let d_xi = if k > 0 && k + 1 < n_xi {
                (v(k + 1, j) - 2.0 * v(k, j) + v(k - 1, j)).abs()
            } else {
                0.0
            };
            let d_x0 = if j > 0 && j + 1 < n_x0 {
                (v(k, j + 1) - 2.0 * v(k, j) + v(k, j - 1)).abs()
            } else {
                0.0
            };
            d_xi >= limit || d_x0 >= limit
        };
        if n_xi < 5 || n_x0 < 5 {
            continue;
        }
        for k in 2..n_xi - 2 {
            for j in 2..n_x0 - 2 {
                let near_kink = (k - 1..=k + 1).any(|kk| (j - 1..=j + 1).any(|jj| kink(kk, jj)));
                if near_kink {
                    excluded += 1;
                    continue;
                }
                let (xi, x0) = (grid.xi_at(k), grid.x0_at(j));
                let p = Covector::new(
                    (v(k + 1, j) - v(k - 1, j)) / (2.0 * h),
                    (v(k, j + 1) - v(k, j - 1)) / (2.0 * h),
                );
                let x = JunctionPoint::new(b, xi, x0).expect("interior node");
                let Ok(ham) = hamiltonian(spec, b, &x, p) else {
                    continue;
                };
                let r = spec.lambda() * v(k, j) + ham;
                checked += 1;
                sum += r.abs();
                max_signed = max_signed.max(r);
                if r.abs() > sup {
                    sup = r.abs();
                    worst = Some(ResidualNode {
                        branch: b,
                        xi,
                        x0,
                        residual: r,
                    });
                }
            }
        }
    }
    Ok(ResidualReport {
        checked,
        excluded_kinks: excluded,
        sup_residual: sup,
        mean_residual: if checked > 0 { sum / checked as f64 } else { 0.0 },
        max_signed,
        worst,
        interface_lipschitz_quotient: quotient,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Strong,
    Moderate,
    Neither,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControllabilityReport {
    pub delta: f64,
    pub nodes: usize,
    pub strong_nodes: usize,
    pub moderate_nodes: usize,
    pub regime: Regime,
    /// First interface node failing the strong audit.
    pub first_strong_failure: Option<f64>,
    /// Whether the convergence and Lipschitz guarantees of either
    /// controllability assumption apply.
    pub guarantees_hold: bool,
}

/// Controllability audit at every interface node with the declared radius.
pub fn check_controllability_regime(spec: &ProblemSpec, grid: &GridSpec) -> Result<ControllabilityReport, VerifyError> {
    check_controllability_with(spec, grid, spec.delta())
}

/// Same audit with an explicit radius.
pub fn check_controllability_with(
    spec: &ProblemSpec,
    grid: &GridSpec,
    delta: f64,
) -> Result<ControllabilityReport, VerifyError> {
    grid.validate()?;
    let mut strong_nodes = 0;
    let mut moderate_nodes = 0;
    let mut first_strong_failure = None;
    for j in 0..grid.n_x0() {
        let x0 = grid.x0_at(j);
        if audit_strong_controllability(spec, x0, delta, DEFAULT_AUDIT_DIRECTIONS)? {
            strong_nodes += 1;
        } else if first_strong_failure.is_none() {
            first_strong_failure = Some(x0);
        }
        if audit_moderate_controllability(spec, x0, delta)? {
            moderate_nodes += 1;
        }
    }
    let nodes = grid.n_x0();
    let regime = if strong_nodes == nodes {
        Regime::Strong
    } else if moderate_nodes == nodes {
        Regime::Moderate
    } else {
        Regime::Neither
    };
    Ok(ControllabilityReport {
        delta,
        nodes,
        strong_nodes,
        moderate_nodes,
        regime,
        first_strong_failure,
        guarantees_hold: regime != Regime::Neither,
    })
}
