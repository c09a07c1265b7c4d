//! Junction geometry: N closed half-planes glued along a common line.
//!
//! Every computation works in intrinsic coordinates `(branch, xi, x0)`:
//! `xi >= 0` is the distance from the interface along the half-plane's own
//! normal direction `e_i`, and `x0` is the signed position along the shared
//! line direction `e_0`. The embedding into R³ is only used for export.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Normal coordinates below this value snap onto the interface.
pub const INTERFACE_SNAP: f64 = 1e-12;

const UNIT_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("normal coordinate {0} is negative")]
    NegativeNormal(f64),
    #[error("coordinate is not finite")]
    NonFinite,
    #[error("branch index 0 is reserved for the interface; half-planes are numbered from 1")]
    ZeroBranch,
    #[error("branch {branch} out of range for a junction with {n} half-planes")]
    BranchOutOfRange { branch: usize, n: usize },
    #[error("a junction needs at least two half-planes, got {0}")]
    TooFewBranches(usize),
    #[error("embedding vector {index} is not a unit vector (norm {norm})")]
    NotUnit { index: usize, norm: f64 },
    #[error("embedding vector {index} is not orthogonal to e_0 (dot {dot})")]
    NotOrthogonal { index: usize, dot: f64 },
    #[error("embedding vectors {0} and {1} coincide")]
    Coincident(usize, usize),
}

/// Where a point sits: on the shared interface line, or strictly inside a
/// half-plane (1-based index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Branch {
    Interface,
    Plane(usize),
}

impl Branch {
    /// Numeric label used in exports: 0 for the interface, `i` for `P_i`.
    pub fn label(self) -> usize {
        match self {
            Branch::Interface => 0,
            Branch::Plane(i) => i,
        }
    }
}

/// A point of the junction in canonical intrinsic coordinates.
///
/// Constructors canonicalize, so derived equality is equality of canonical
/// forms: a point with `xi` below [`INTERFACE_SNAP`] is stored as
/// `Branch::Interface` with `xi == 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JunctionPoint {
    branch: Branch,
    xi: f64,
    x0: f64,
}

impl JunctionPoint {
    /// Point on half-plane `branch` (1-based) at normal distance `xi`.
    pub fn new(branch: usize, xi: f64, x0: f64) -> Result<Self, GeometryError> {
        if branch == 0 {
            return Err(GeometryError::ZeroBranch);
        }
        if !xi.is_finite() || !x0.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        if xi < -INTERFACE_SNAP {
            return Err(GeometryError::NegativeNormal(xi));
        }
        Ok(Self::canonical(Branch::Plane(branch), xi, x0))
    }

    pub fn interface(x0: f64) -> Self {
        Self {
            branch: Branch::Interface,
            xi: 0.0,
            x0,
        }
    }

    fn canonical(branch: Branch, xi: f64, x0: f64) -> Self {
        if xi < INTERFACE_SNAP || branch == Branch::Interface {
            Self::interface(x0)
        } else {
            Self { branch, xi, x0 }
        }
    }

    /// Re-applies canonicalization. Idempotent.
    pub fn canonicalize(self) -> Self {
        Self::canonical(self.branch, self.xi, self.x0)
    }

    pub fn branch(&self) -> Branch {
        self.branch
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn is_interface(&self) -> bool {
        self.branch == Branch::Interface
    }

    /// Whether the point belongs to the closed half-plane `P_i`
    /// (interface points belong to every half-plane).
    pub fn lies_on(&self, plane: usize) -> bool {
        match self.branch {
            Branch::Interface => true,
            Branch::Plane(i) => i == plane,
        }
    }
}

/// Geodesic distance on the junction.
///
/// Within one closed half-plane this is the planar distance; across two
/// half-planes the shortest path crosses the interface, which unfolds to
/// `sqrt(|dx0|^2 + (xi_a + xi_b)^2)`.
pub fn geodesic_distance(a: &JunctionPoint, b: &JunctionPoint) -> f64 {
    let d0 = a.x0 - b.x0;
    let same_plane = match (a.branch, b.branch) {
        (Branch::Plane(i), Branch::Plane(j)) => i == j,
        _ => true,
    };
    let dn = if same_plane { a.xi - b.xi } else { a.xi + b.xi };
    d0.hypot(dn)
}

/// Embedding data for export: `e_0` spans the interface, `e_i` points into
/// `P_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JunctionGeometry {
    e0: [f64; 3],
    planes: Vec<[f64; 3]>,
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl JunctionGeometry {
    pub fn new(e0: [f64; 3], planes: Vec<[f64; 3]>) -> Result<Self, GeometryError> {
        if planes.len() < 2 {
            return Err(GeometryError::TooFewBranches(planes.len()));
        }
        let check_unit = |index: usize, v: &[f64; 3]| {
            let norm = dot(v, v).sqrt();
            if (norm - 1.0).abs() > UNIT_TOL {
                Err(GeometryError::NotUnit { index, norm })
            } else {
                Ok(())
            }
        };
        check_unit(0, &e0)?;
        for (k, e) in planes.iter().enumerate() {
            check_unit(k + 1, e)?;
            let d = dot(e, &e0);
            if d.abs() > UNIT_TOL {
                return Err(GeometryError::NotOrthogonal { index: k + 1, dot: d });
            }
            for (m, other) in planes.iter().enumerate().take(k) {
                let diff = [e[0] - other[0], e[1] - other[1], e[2] - other[2]];
                if dot(&diff, &diff).sqrt() < UNIT_TOL {
                    return Err(GeometryError::Coincident(m + 1, k + 1));
                }
            }
        }
        Ok(Self { e0, planes })
    }

    /// `e_0 = (1, 0, 0)` and the `e_i` spread evenly in the orthogonal plane.
    /// For two half-planes this is the flat picture `P_1 ∪ P_2 = R²`.
    pub fn evenly_spaced(n: usize) -> Result<Self, GeometryError> {
        if n < 2 {
            return Err(GeometryError::TooFewBranches(n));
        }
        let planes = (0..n)
            .map(|k| {
                let theta = std::f64::consts::TAU * k as f64 / n as f64;
                [0.0, theta.cos(), theta.sin()]
            })
            .collect();
        Self::new([1.0, 0.0, 0.0], planes)
    }

    pub fn n_branches(&self) -> usize {
        self.planes.len()
    }

    pub fn e0(&self) -> [f64; 3] {
        self.e0
    }

    pub fn plane_direction(&self, branch: usize) -> Result<[f64; 3], GeometryError> {
        if branch == 0 || branch > self.planes.len() {
            return Err(GeometryError::BranchOutOfRange {
                branch,
                n: self.planes.len(),
            });
        }
        Ok(self.planes[branch - 1])
    }

    /// `x0 e_0 + xi e_branch`.
    pub fn embed_r3(&self, p: &JunctionPoint) -> Result<[f64; 3], GeometryError> {
        let mut out = [p.x0 * self.e0[0], p.x0 * self.e0[1], p.x0 * self.e0[2]];
        if let Branch::Plane(i) = p.branch {
            let e = self.plane_direction(i)?;
            for k in 0..3 {
                out[k] += p.xi * e[k];
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(i: usize, xi: f64, x0: f64) -> JunctionPoint {
        JunctionPoint::new(i, xi, x0).unwrap()
    }

    #[test]
    fn same_plane_is_planar() {
        assert_eq!(geodesic_distance(&p(1, 3.0, 0.0), &p(1, 0.0, 4.0)), 5.0);
    }

    #[test]
    fn cross_plane_unfolds_through_interface() {
        assert_eq!(geodesic_distance(&p(1, 1.0, 0.0), &p(2, 2.0, 0.0)), 3.0);
    }

    #[test]
    fn identical_interface_points() {
        let g = JunctionPoint::interface(7.0);
        assert_eq!(geodesic_distance(&g, &g), 0.0);
    }

    #[test]
    fn tiny_normal_snaps_to_interface() {
        let a = p(2, 5e-13, 1.5);
        assert!(a.is_interface());
        assert_eq!(a, JunctionPoint::interface(1.5));
        assert_eq!(a.canonicalize(), a);
        assert_eq!(p(1, 0.0, 1.5), p(2, 0.0, 1.5));
    }

    #[test]
    fn rejects_bad_points() {
        assert_eq!(
            JunctionPoint::new(1, -0.5, 0.0),
            Err(GeometryError::NegativeNormal(-0.5))
        );
        assert_eq!(JunctionPoint::new(0, 1.0, 0.0), Err(GeometryError::ZeroBranch));
        assert_eq!(JunctionPoint::new(1, f64::NAN, 0.0), Err(GeometryError::NonFinite));
    }

    #[test]
    fn embedding() {
        let g = JunctionGeometry::new([1.0, 0.0, 0.0], vec![[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(g.embed_r3(&JunctionPoint::interface(2.0)).unwrap(), [2.0, 0.0, 0.0]);
        assert_eq!(g.embed_r3(&p(1, 1.0, 0.0)).unwrap(), [0.0, 1.0, 0.0]);
        assert_eq!(g.embed_r3(&p(2, 2.0, 3.0)).unwrap(), [3.0, 0.0, 2.0]);
        assert!(matches!(
            g.embed_r3(&p(3, 1.0, 0.0)),
            Err(GeometryError::BranchOutOfRange { branch: 3, n: 2 })
        ));
    }

    #[test]
    fn geometry_validation() {
        assert!(matches!(
            JunctionGeometry::new([1.0, 0.0, 0.0], vec![[0.0, 1.0, 0.0]]),
            Err(GeometryError::TooFewBranches(1))
        ));
        assert!(matches!(
            JunctionGeometry::new([1.0, 0.0, 0.0], vec![[0.0, 1.0, 0.0], [0.6, 0.8, 0.0]]),
            Err(GeometryError::NotOrthogonal { index: 2, .. })
        ));
        assert!(matches!(
            JunctionGeometry::new([1.0, 0.0, 0.0], vec![[0.0, 2.0, 0.0], [0.0, 0.0, 1.0]]),
            Err(GeometryError::NotUnit { index: 1, .. })
        ));
        assert!(matches!(
            JunctionGeometry::new([1.0, 0.0, 0.0], vec![[0.0, 1.0, 0.0], [0.0, 1.0, 0.0]]),
            Err(GeometryError::Coincident(1, 2))
        ));
        let g = JunctionGeometry::evenly_spaced(5).unwrap();
        assert_eq!(g.n_branches(), 5);
    }
}
