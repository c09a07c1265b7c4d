//! Closed-form value function of the two half-plane example.
//!
//! Controls on both half-planes are the unit disc with `f(x, a) = a`. Staying
//! in `P_1` costs 1 per unit time; in `P_2` the cost is `1 - a_n`, so moving
//! straight away from the interface is free. Entering `P_2` at `x0` costs
//! `max(2, 3 - |x0|)`; entering `P_1` costs a large constant.
//!
//! When `λ >= 1/2` no entry is ever worth paying and `V = 1/λ` on `P_1`.
//! Otherwise the optimal path from `P_1` runs straight to the cheapest reachable
//! entry point: the orthogonal foot when `|x0| >= 1`, the nearer of `(0, ±1)`
//! when `|x0| < 1`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Branch, JunctionGeometry, JunctionPoint};
use crate::problem::{
    ControlSampling, ControllabilityMode, Dynamics, EntryCost, HalfPlaneSpec, ProblemError, ProblemSpec, RunningCost,
};

pub const DEFAULT_DISC_SAMPLES: usize = 64;
pub const DEFAULT_FIRST_ENTRY_COST: f64 = 10.0;
/// Declared controllability radius of the example.
pub const EXAMPLE_DELTA: f64 = 0.9;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("the example junction has two half-planes; got branch {0}")]
    BranchOutOfRange(usize),
    #[error("regime {regime:?} is inconsistent with lambda = {lambda}")]
    RegimeMismatch { lambda: f64, regime: Regime },
    #[error("discount rate must be positive, got {0}")]
    BadDiscount(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `2 >= 1/λ`: never enter `P_2` from `P_1`.
    Saturated,
    /// `2 < 1/λ`: run to the interface and enter `P_2`.
    Entering,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExampleRegime {
    lambda: f64,
    regime: Regime,
}

impl ExampleRegime {
    pub fn new(lambda: f64) -> Result<Self, OracleError> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(OracleError::BadDiscount(lambda));
        }
        let regime = if 2.0 * lambda >= 1.0 {
            Regime::Saturated
        } else {
            Regime::Entering
        };
        Ok(Self { lambda, regime })
    }

    pub fn with_regime(lambda: f64, regime: Regime) -> Result<Self, OracleError> {
        let r = Self::new(lambda)?;
        if r.regime != regime {
            return Err(OracleError::RegimeMismatch { lambda, regime });
        }
        Ok(r)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    /// Value of paying the cheapest entry cost 2 after running for `tau`.
    fn run_then_enter(&self, tau: f64) -> f64 {
        let decay = (-self.lambda * tau).exp();
        (1.0 - decay) / self.lambda + 2.0 * decay
    }

    /// Value on `P_1` at normal distance `xi >= 0` (the `xi -> 0` limit when
    /// `xi == 0`).
    pub fn first_plane_value(&self, xi: f64, x0: f64) -> f64 {
        match self.regime {
            Regime::Saturated => 1.0 / self.lambda,
            Regime::Entering => {
                let s = x0.abs();
                let tau = if s >= 1.0 { xi } else { xi.hypot(1.0 - s) };
                self.run_then_enter(tau)
            }
        }
    }

    /// Value of a state sitting on the interface: the cheapest of staying on
    /// `P_1`'s side of the strategy set and entering `P_2` right away.
    pub fn interface_value(&self, x0: f64) -> f64 {
        self.first_plane_value(0.0, x0).min(second_entry_cost(x0))
    }
}

/// `c_2(ζ) = 3 - |ζ|` for `|ζ| <= 1`, `2` otherwise.
pub fn second_entry_cost(x0: f64) -> f64 {
    (3.0 - x0.abs()).max(2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleValue {
    Value(f64),
    /// One-sided limits at an interface point.
    Interface {
        from_first: f64,
        from_second: f64,
    },
}

impl OracleValue {
    /// The value seen from half-plane `branch` (interface limits resolved to
    /// that side).
    pub fn seen_from(&self, branch: usize) -> f64 {
        match *self {
            OracleValue::Value(v) => v,
            OracleValue::Interface {
                from_first,
                from_second,
            } => {
                if branch == 1 {
                    from_first
                } else {
                    from_second
                }
            }
        }
    }
}

pub fn oracle_value(reg: &ExampleRegime, x: &JunctionPoint) -> Result<OracleValue, OracleError> {
    match x.branch() {
        Branch::Plane(1) => Ok(OracleValue::Value(reg.first_plane_value(x.xi(), x.x0()))),
        Branch::Plane(2) => Ok(OracleValue::Value(0.0)),
        Branch::Plane(i) => Err(OracleError::BranchOutOfRange(i)),
        Branch::Interface => Ok(OracleValue::Interface {
            from_first: reg.first_plane_value(0.0, x.x0()),
            from_second: 0.0,
        }),
    }
}

/// The example problem with the default sampling.
pub fn oracle_example_spec(lambda: f64) -> Result<ProblemSpec, ProblemError> {
    example_spec_with(lambda, DEFAULT_DISC_SAMPLES, DEFAULT_FIRST_ENTRY_COST)
}

/// The example problem with `disc_samples` boundary controls (plus the
/// centre) per half-plane and entry cost `first_entry_cost` on `P_1`.
pub fn example_spec_with(lambda: f64, disc_samples: usize, first_entry_cost: f64) -> Result<ProblemSpec, ProblemError> {
    let sampling = ControlSampling::Disc {
        boundary: disc_samples,
        center: true,
    };
    let first = HalfPlaneSpec {
        controls: sampling.build(1)?,
        dynamics: Dynamics::control_velocity(),
        running_cost: RunningCost::constant(1.0),
        entry_cost: EntryCost::Constant {
            value: first_entry_cost,
        },
        bound_m: 2.0,
        lipschitz_l: 1.0,
    };
    let second = HalfPlaneSpec {
        controls: sampling.build(2)?,
        dynamics: Dynamics::control_velocity(),
        running_cost: RunningCost::Affine {
            base: 1.0,
            control: [-1.0, 0.0],
            state: [0.0, 0.0],
        },
        entry_cost: EntryCost::Tent {
            peak: 3.0,
            slope: 1.0,
            floor: 2.0,
            center: 0.0,
        },
        bound_m: 2.0,
        lipschitz_l: 1.0,
    };
    ProblemSpec::new(
        JunctionGeometry::evenly_spaced(2).expect("two half-planes"),
        vec![first, second],
        lambda,
        1e-9,
        ControllabilityMode::Strong,
        EXAMPLE_DELTA,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pt(i: usize, xi: f64, x0: f64) -> JunctionPoint {
        JunctionPoint::new(i, xi, x0).unwrap()
    }

    #[test]
    fn saturated_value() {
        let r = ExampleRegime::new(1.0).unwrap();
        assert_eq!(r.regime(), Regime::Saturated);
        assert_eq!(oracle_value(&r, &pt(1, 5.0, 0.0)).unwrap(), OracleValue::Value(1.0));
    }

    #[test]
    fn entering_values() {
        let r = ExampleRegime::new(0.25).unwrap();
        let v = oracle_value(&r, &pt(1, 4.0, 2.0)).unwrap().seen_from(1);
        assert_relative_eq!(v, 4.0 - 2.0 * (-1.0f64).exp(), epsilon = 1e-12);
        assert_relative_eq!(v, 3.2642, epsilon = 1e-4);
        let tip = r.first_plane_value(0.0, 0.0);
        assert_relative_eq!(tip, 4.0 - 2.0 * (-0.25f64).exp(), epsilon = 1e-12);
        assert_relative_eq!(tip, 2.4424, epsilon = 1e-4);
        assert_eq!(oracle_value(&r, &pt(2, 1.0, 0.3)).unwrap(), OracleValue::Value(0.0));
    }

    #[test]
    fn interface_limits_are_one_sided() {
        let r = ExampleRegime::new(0.25).unwrap();
        let OracleValue::Interface {
            from_first,
            from_second,
        } = oracle_value(&r, &JunctionPoint::interface(0.0)).unwrap()
        else {
            panic!("expected interface limits");
        };
        assert_eq!(from_second, 0.0);
        assert!(from_first >= 2.0);
        assert_relative_eq!(r.interface_value(0.0), from_first, epsilon = 1e-15);
        assert_eq!(r.interface_value(3.0), 2.0);
    }

    #[test]
    fn regime_consistency() {
        assert_eq!(ExampleRegime::new(0.5).unwrap().regime(), Regime::Saturated);
        assert!(matches!(
            ExampleRegime::with_regime(1.0, Regime::Entering),
            Err(OracleError::RegimeMismatch { .. })
        ));
        assert!(ExampleRegime::new(0.0).is_err());
        let r = ExampleRegime::new(0.25).unwrap();
        assert_eq!(
            oracle_value(&r, &pt(3, 1.0, 0.0)),
            Err(OracleError::BranchOutOfRange(3))
        );
    }

    #[test]
    fn seam_continuity_and_range() {
        let r = ExampleRegime::new(0.25).unwrap();
        for xi in [0.0, 0.3, 1.0, 4.0] {
            let inside = r.first_plane_value(xi, 1.0 - 1e-12);
            let outside = r.first_plane_value(xi, 1.0);
            assert!((inside - outside).abs() < 1e-10);
            for x0 in [-2.0, -0.5, 0.0, 0.7, 3.0] {
                let v = r.first_plane_value(xi, x0);
                assert!((2.0..4.0).contains(&v));
            }
        }
    }

    #[test]
    fn example_spec_data() {
        let spec = oracle_example_spec(0.25).unwrap();
        let p2 = spec.plane(2);
        assert_eq!(p2.entry_cost(0.0), 3.0);
        assert_eq!(p2.entry_cost(1.5), 2.0);
        assert_eq!(p2.entry_cost(-0.5), 2.5);
        let out = spec.control(2, 0).unwrap();
        assert_eq!(out.param, [1.0, 0.0]);
        assert_eq!(p2.running_cost(1.0, 0.0, out), 0.0);
        assert_eq!(spec.plane(1).entry_cost(0.0), DEFAULT_FIRST_ENTRY_COST);
        assert_eq!(spec.plane(1).controls.len(), 65);
    }
}
