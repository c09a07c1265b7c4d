//! The Hamiltonians of the junction system, evaluated by exact maximisation
//! over the sampled control sets.
//!
//! * `H_i(x, p)   = max_{a ∈ A_i}      -f_i(x,a)·p - ℓ_i(x,a)`
//! * `H_i^+(x, p) = max_{a ∈ A_i^+(x)} -f_i(x,a)·p - ℓ_i(x,a)` (controls that do
//!   not leave `P_i`)
//! * `H_Γ(x, p0)  = max_i max_{a ∈ A_i^Γ(x)} -(f_i(x,a)·e_0) p0 - ℓ_i(x,a)`
//!
//! Ties in every argmax break towards the lowest `(branch, control id)`.

use thiserror::Error;

use crate::geometry::JunctionPoint;
use crate::problem::{ControlSample, ProblemSpec};

#[derive(Debug, Error, PartialEq)]
pub enum HamiltonianError {
    #[error("no admissible control on half-plane {0}")]
    EmptyControlSet(usize),
    #[error("no half-plane has a tangential control at x0 = {0}")]
    NoTangentialControl(f64),
    #[error("point does not lie on half-plane {0}")]
    WrongPlane(usize),
}

/// Gradient components: along `e_i` and along `e_0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Covector {
    pub normal: f64,
    pub tangential: f64,
}

impl Covector {
    pub fn new(normal: f64, tangential: f64) -> Self {
        Self { normal, tangential }
    }

    pub fn norm(&self) -> f64 {
        self.normal.hypot(self.tangential)
    }
}

/// Controls of `P_i` whose normal velocity at the interface point `x0` is
/// at least `-tangency_eps`.
pub fn control_set_plus(spec: &ProblemSpec, branch: usize, x0: f64) -> Vec<&ControlSample> {
    let plane = spec.plane(branch);
    let eps = spec.tangency_eps();
    plane
        .controls
        .iter()
        .filter(|c| plane.velocity(0.0, x0, c).normal >= -eps)
        .collect()
}

/// Controls of `P_i` whose normal velocity at `x0` is within `tangency_eps`
/// of zero.
pub fn control_set_gamma(spec: &ProblemSpec, branch: usize, x0: f64) -> Vec<&ControlSample> {
    let plane = spec.plane(branch);
    let eps = spec.tangency_eps();
    plane
        .controls
        .iter()
        .filter(|c| plane.velocity(0.0, x0, c).normal.abs() <= eps)
        .collect()
}

fn integrand(spec: &ProblemSpec, c: &ControlSample, xi: f64, x0: f64, p: Covector) -> f64 {
    let plane = spec.plane(c.branch);
    let f = plane.velocity(xi, x0, c);
    -(f.normal * p.normal + f.tangential * p.tangential) - plane.running_cost(xi, x0, c)
}

fn argmax<'a>(
    spec: &ProblemSpec,
    controls: impl IntoIterator<Item = &'a ControlSample>,
    xi: f64,
    x0: f64,
    p: Covector,
) -> Option<(f64, &'a ControlSample)> {
    let mut best: Option<(f64, &ControlSample)> = None;
    for c in controls {
        let v = integrand(spec, c, xi, x0, p);
        if best.is_none_or(|(b, _)| v > b) {
            best = Some((v, c));
        }
    }
    best
}

fn check_plane(x: &JunctionPoint, branch: usize) -> Result<(), HamiltonianError> {
    if x.lies_on(branch) {
        Ok(())
    } else {
        Err(HamiltonianError::WrongPlane(branch))
    }
}

/// `H_i(x, p)` and the maximising control.
pub fn hamiltonian_argmax<'a>(
    spec: &'a ProblemSpec,
    branch: usize,
    x: &JunctionPoint,
    p: Covector,
) -> Result<(f64, &'a ControlSample), HamiltonianError> {
    check_plane(x, branch)?;
    argmax(spec, &spec.plane(branch).controls, x.xi(), x.x0(), p).ok_or(HamiltonianError::EmptyControlSet(branch))
}

pub fn hamiltonian(spec: &ProblemSpec, branch: usize, x: &JunctionPoint, p: Covector) -> Result<f64, HamiltonianError> {
    hamiltonian_argmax(spec, branch, x, p).map(|(v, _)| v)
}

/// `H_i^+(x, p)` at the interface point `x0`.
pub fn hamiltonian_plus(spec: &ProblemSpec, branch: usize, x0: f64, p: Covector) -> Result<f64, HamiltonianError> {
    argmax(spec, control_set_plus(spec, branch, x0), 0.0, x0, p)
        .map(|(v, _)| v)
        .ok_or(HamiltonianError::EmptyControlSet(branch))
}

/// `H_Γ(x, p0)` and the maximising tangential control.
pub fn hamiltonian_gamma_argmax(
    spec: &ProblemSpec,
    x0: f64,
    p0: f64,
) -> Result<(f64, &ControlSample), HamiltonianError> {
    let p = Covector::new(0.0, p0);
    let mut best: Option<(f64, &ControlSample)> = None;
    for branch in 1..=spec.n_branches() {
        if let Some((v, c)) = argmax(spec, control_set_gamma(spec, branch, x0), 0.0, x0, p) {
            if best.is_none_or(|(b, _)| v > b) {
                best = Some((v, c));
            }
        }
    }
    best.ok_or(HamiltonianError::NoTangentialControl(x0))
}

pub fn hamiltonian_gamma(spec: &ProblemSpec, x0: f64, p0: f64) -> Result<f64, HamiltonianError> {
    hamiltonian_gamma_argmax(spec, x0, p0).map(|(v, _)| v)
}
