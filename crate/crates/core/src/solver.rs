//! Semi-Lagrangian fixed-point solver for the junction system.
//!
//! Unknowns are one rectangular array `v_i` per half-plane (rows at
//! `xi = 0, h, 2h, …`, columns along the interface window) plus a 1-D array
//! `u` for the value of a state sitting on the interface. One sweep is the
//! one-step dynamic programming principle with bilinear interpolation at the
//! foot of each characteristic:
//!
//! * interior rows of `P_i`:
//!   `v_i(x) = min_{a ∈ A_i} w ℓ_i(x,a) + β I[v_i](x + dt f_i(x,a))`
//! * interface row of `P_i`: `v_i(x) = min(u(x0), P_i(x0))` where `P_i` is the
//!   same minimum restricted to controls that do not leave `P_i`
//! * interface: `u(x0) = min( min_i P_i(x0) + c_i(x0),
//!   min_{tangential a} w ℓ + β I[u](x0 + dt f0) )`
//!
//! with `β = e^{-λ dt}` and `w = (1 - β)/λ`, the exact discounted length of
//! one step. Every branch of every minimum carries one factor `β`, so a sweep
//! is monotone and a `β`-contraction in the sup norm. Entry into another
//! half-plane is only possible through `u`, which is where entry costs are
//! paid; feet that cross the interface stay on the same array's `xi = 0` row.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Branch, JunctionPoint};
use crate::problem::ProblemSpec;

const INTEGRAL_TOL: f64 = 1e-9;
/// Iterations excluded from the monotone-history check.
pub const BURN_IN: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("invalid grid: {0}")]
    BadGrid(String),
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("field shape does not match the grid and problem")]
    ShapeMismatch,
    #[error("field contains a non-finite entry")]
    NonFinite,
    #[error("no inward or tangential control is available at interface node x0 = {0}")]
    NoInterfaceMotion(f64),
}

/// Truncated computational box and discretisation steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub xi_max: f64,
    pub x0_min: f64,
    pub x0_max: f64,
    pub h: f64,
    pub dt: f64,
}

fn integral_ratio(len: f64, h: f64) -> Option<usize> {
    let r = len / h;
    let n = r.round();
    ((r - n).abs() <= INTEGRAL_TOL * r.max(1.0) && n >= 1.0).then_some(n as usize)
}

impl GridSpec {
    pub fn new(xi_max: f64, x0_min: f64, x0_max: f64, h: f64, dt: f64) -> Result<Self, SolverError> {
        let g = Self {
            xi_max,
            x0_min,
            x0_max,
            h,
            dt,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let all = [self.xi_max, self.x0_min, self.x0_max, self.h, self.dt];
        if !all.iter().all(|v| v.is_finite()) {
            return Err(SolverError::BadGrid("non-finite parameter".into()));
        }
        if !(self.h > 0.0) || !(self.dt > 0.0) {
            return Err(SolverError::BadGrid("h and dt must be positive".into()));
        }
        if !(self.xi_max > 0.0) || !(self.x0_max > self.x0_min) {
            return Err(SolverError::BadGrid("empty box".into()));
        }
        if integral_ratio(self.xi_max, self.h).is_none() {
            return Err(SolverError::BadGrid("xi_max is not a multiple of h".into()));
        }
        if integral_ratio(self.x0_max - self.x0_min, self.h).is_none() {
            return Err(SolverError::BadGrid("interface window is not a multiple of h".into()));
        }
        let nodes = (self.n_xi() as f64) * (self.n_x0() as f64);
        if nodes > 5e8 {
            return Err(SolverError::BadGrid("grid too large".into()));
        }
        Ok(())
    }

    /// Number of rows along the normal direction, `xi = 0` included.
    pub fn n_xi(&self) -> usize {
        integral_ratio(self.xi_max, self.h).unwrap_or(1) + 1
    }

    pub fn n_x0(&self) -> usize {
        integral_ratio(self.x0_max - self.x0_min, self.h).unwrap_or(1) + 1
    }

    pub fn xi_at(&self, k: usize) -> f64 {
        k as f64 * self.h
    }

    pub fn x0_at(&self, j: usize) -> f64 {
        self.x0_min + j as f64 * self.h
    }

    /// Feet travel at most `dt·M`; beyond `2h` the interpolation stencil is no
    /// longer adjacent to the node.
    pub fn locality_warning(&self, bound_m: f64) -> Option<String> {
        (self.dt * bound_m > 2.0 * self.h).then(|| {
            format!(
                "dt*M = {:.3e} exceeds 2h = {:.3e}; interpolation feet are non-local",
                self.dt * bound_m,
                2.0 * self.h
            )
        })
    }

    /// Distance from `(xi, x0)` to the artificial truncation boundary
    /// (the interface itself is not artificial).
    pub fn distance_to_truncation(&self, xi: f64, x0: f64) -> f64 {
        (self.xi_max - xi).min(x0 - self.x0_min).min(self.x0_max - x0)
    }
}

#[inline]
fn locate(s: f64, n: usize) -> (usize, f64) {
    let s = s.clamp(0.0, (n - 1) as f64);
    let k = (s as usize).min(n - 2);
    (k, s - k as f64)
}

/// The discrete unknowns: `v_i` per half-plane plus `u` on the interface.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    n_xi: usize,
    n_x0: usize,
    planes: Vec<Vec<f64>>,
    gamma: Vec<f64>,
}

impl ValueField {
    pub fn constant(n_branches: usize, grid: &GridSpec, plane_value: f64, gamma_value: f64) -> Self {
        let (n_xi, n_x0) = (grid.n_xi(), grid.n_x0());
        Self {
            n_xi,
            n_x0,
            planes: vec![vec![plane_value; n_xi * n_x0]; n_branches],
            gamma: vec![gamma_value; n_x0],
        }
    }

    /// Supersolution start: `v_i ≡ M/λ`, `u ≡ M/λ + max c`.
    pub fn initial(spec: &ProblemSpec, grid: &GridSpec) -> Self {
        let m = spec.bound_m() / spec.lambda();
        Self::constant(spec.n_branches(), grid, m, m + max_entry_cost(spec, grid))
    }

    pub fn from_parts(grid: &GridSpec, planes: Vec<Vec<f64>>, gamma: Vec<f64>) -> Result<Self, SolverError> {
        let (n_xi, n_x0) = (grid.n_xi(), grid.n_x0());
        if gamma.len() != n_x0 || planes.iter().any(|p| p.len() != n_xi * n_x0) || planes.is_empty() {
            return Err(SolverError::ShapeMismatch);
        }
        Ok(Self {
            n_xi,
            n_x0,
            planes,
            gamma,
        })
    }

    pub fn n_branches(&self) -> usize {
        self.planes.len()
    }

    pub fn n_xi(&self) -> usize {
        self.n_xi
    }

    pub fn n_x0(&self) -> usize {
        self.n_x0
    }

    /// Row-major array of `v_i`: index `k * n_x0 + j` for `xi = k h`.
    pub fn plane(&self, branch: usize) -> &[f64] {
        &self.planes[branch - 1]
    }

    pub fn plane_mut(&mut self, branch: usize) -> &mut [f64] {
        &mut self.planes[branch - 1]
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn gamma_mut(&mut self) -> &mut [f64] {
        &mut self.gamma
    }

    #[inline]
    pub fn node(&self, branch: usize, k: usize, j: usize) -> f64 {
        self.planes[branch - 1][k * self.n_x0 + j]
    }

    pub fn matches(&self, spec: &ProblemSpec, grid: &GridSpec) -> bool {
        self.n_xi == grid.n_xi() && self.n_x0 == grid.n_x0() && self.planes.len() == spec.n_branches()
    }

    pub fn iter_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.planes.iter().flatten().chain(self.gamma.iter()).copied()
    }

    pub fn all_finite(&self) -> bool {
        self.iter_values().all(f64::is_finite)
    }

    pub fn sup_norm(&self) -> f64 {
        self.iter_values().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |self - other|` over every entry.
    pub fn sup_distance(&self, other: &ValueField) -> f64 {
        self.iter_values()
            .zip(other.iter_values())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// `max (self - other)` over every entry.
    pub fn max_excess_over(&self, other: &ValueField) -> f64 {
        self.iter_values()
            .zip(other.iter_values())
            .fold(f64::NEG_INFINITY, |m, (a, b)| m.max(a - b))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            n_xi: self.n_xi,
            n_x0: self.n_x0,
            planes: self.planes.iter().map(|p| p.iter().map(|v| f(*v)).collect()).collect(),
            gamma: self.gamma.iter().map(|v| f(*v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &ValueField, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            n_xi: self.n_xi,
            n_x0: self.n_x0,
            planes: self
                .planes
                .iter()
                .zip(&other.planes)
                .map(|(p, q)| p.iter().zip(q).map(|(a, b)| f(*a, *b)).collect())
                .collect(),
            gamma: self.gamma.iter().zip(&other.gamma).map(|(a, b)| f(*a, *b)).collect(),
        }
    }

    /// Bilinear interpolation of `v_i`, with the query clamped into the box.
    #[inline]
    pub fn interpolate_plane(&self, grid: &GridSpec, branch: usize, xi: f64, x0: f64) -> f64 {
        interp2(&self.planes[branch - 1], self.n_xi, self.n_x0, grid, xi, x0)
    }

    /// Linear interpolation of `u`, clamped into the window.
    #[inline]
    pub fn interpolate_gamma(&self, grid: &GridSpec, x0: f64) -> f64 {
        interp1(&self.gamma, grid, x0)
    }

    /// Field value at a junction point: `u` on the interface, `v_i` inside `P_i`.
    pub fn value_at(&self, grid: &GridSpec, p: &JunctionPoint) -> f64 {
        match p.branch() {
            Branch::Interface => self.interpolate_gamma(grid, p.x0()),
            Branch::Plane(i) => self.interpolate_plane(grid, i, p.xi(), p.x0()),
        }
    }
}

#[inline]
fn interp2(values: &[f64], n_xi: usize, n_x0: usize, grid: &GridSpec, xi: f64, x0: f64) -> f64 {
    let (k, s) = locate(xi / grid.h, n_xi);
    let (j, t) = locate((x0 - grid.x0_min) / grid.h, n_x0);
    let r0 = k * n_x0 + j;
    let r1 = r0 + n_x0;
    let a = values[r0] + t * (values[r0 + 1] - values[r0]);
    let b = values[r1] + t * (values[r1 + 1] - values[r1]);
    a + s * (b - a)
}

#[inline]
fn interp1(values: &[f64], grid: &GridSpec, x0: f64) -> f64 {
    let (j, t) = locate((x0 - grid.x0_min) / grid.h, values.len());
    values[j] + t * (values[j + 1] - values[j])
}

/// Largest entry cost over the interface nodes of the grid.
pub fn max_entry_cost(spec: &ProblemSpec, grid: &GridSpec) -> f64 {
    (0..grid.n_x0())
        .flat_map(|j| spec.planes().iter().map(move |p| p.entry_cost(grid.x0_at(j))))
        .fold(0.0, f64::max)
}

/// `M/λ + max c`: bound on the value of any state.
pub fn a_priori_bound(spec: &ProblemSpec, grid: &GridSpec) -> f64 {
    spec.bound_m() / spec.lambda() + max_entry_cost(spec, grid)
}

/// Per-step constants of the scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepWeights {
    /// `β = e^{-λ dt}`.
    pub discount: f64,
    /// `w = (1 - β)/λ = ∫_0^dt e^{-λ s} ds`.
    pub cost: f64,
}

impl StepWeights {
    pub fn new(lambda: f64, dt: f64) -> Self {
        let discount = (-lambda * dt).exp();
        Self {
            discount,
            cost: -(-lambda * dt).exp_m1() / lambda,
        }
    }
}

/// Which control attains a clause minimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Choice {
    pub branch: usize,
    pub control: usize,
}

/// Scheme clauses evaluated at arbitrary (possibly off-grid) points against a
/// frozen field. The sweep and the feedback policy share these.
pub struct Clauses<'a> {
    spec: &'a ProblemSpec,
    grid: &'a GridSpec,
    field: &'a ValueField,
    weights: StepWeights,
}

impl<'a> Clauses<'a> {
    pub fn new(spec: &'a ProblemSpec, grid: &'a GridSpec, field: &'a ValueField) -> Self {
        Self {
            spec,
            grid,
            field,
            weights: StepWeights::new(spec.lambda(), grid.dt),
        }
    }

    pub fn weights(&self) -> StepWeights {
        self.weights
    }

    /// `min_{a ∈ A_i} w ℓ + β I[v_i](foot)`, all controls.
    #[inline]
    pub fn interior(&self, branch: usize, xi: f64, x0: f64) -> (f64, Option<Choice>) {
        self.plane_min(branch, xi, x0, f64::NEG_INFINITY)
    }

    /// Same minimum at the interface restricted to `A_i^+`.
    #[inline]
    pub fn inward(&self, branch: usize, x0: f64) -> (f64, Option<Choice>) {
        self.plane_min(branch, 0.0, x0, -self.spec.tangency_eps())
    }

    #[inline]
    fn plane_min(&self, branch: usize, xi: f64, x0: f64, min_normal: f64) -> (f64, Option<Choice>) {
        let plane = self.spec.plane(branch);
        let values = self.field.plane(branch);
        let (n_xi, n_x0) = (self.field.n_xi, self.field.n_x0);
        let dt = self.grid.dt;
        let mut best = f64::INFINITY;
        let mut arg = None;
        for c in &plane.controls {
            let f = plane.velocity(xi, x0, c);
            if f.normal < min_normal {
                continue;
            }
            let v = self.weights.cost * plane.running_cost(xi, x0, c)
                + self.weights.discount
                    * interp2(
                        values,
                        n_xi,
                        n_x0,
                        self.grid,
                        xi + dt * f.normal,
                        x0 + dt * f.tangential,
                    );
            if v < best {
                best = v;
                arg = Some(Choice { branch, control: c.id });
            }
        }
        (best, arg)
    }

    /// Motion along the interface with tangential controls of any branch.
    pub fn tangential(&self, x0: f64) -> (f64, Option<Choice>) {
        let eps = self.spec.tangency_eps();
        let dt = self.grid.dt;
        let mut best = f64::INFINITY;
        let mut arg = None;
        for (k, plane) in self.spec.planes().iter().enumerate() {
            for c in &plane.controls {
                let f = plane.velocity(0.0, x0, c);
                if f.normal.abs() > eps {
                    continue;
                }
                let v = self.weights.cost * plane.running_cost(0.0, x0, c)
                    + self.weights.discount * interp1(&self.field.gamma, self.grid, x0 + dt * f.tangential);
                if v < best {
                    best = v;
                    arg = Some(Choice {
                        branch: k + 1,
                        control: c.id,
                    });
                }
            }
        }
        (best, arg)
    }

    /// Cheapest entry: `min_i P_i(x0) + c_i(x0)`.
    pub fn entry(&self, x0: f64) -> (f64, Option<Choice>) {
        let mut best = f64::INFINITY;
        let mut arg = None;
        for branch in 1..=self.spec.n_branches() {
            let (p, choice) = self.inward(branch, x0);
            let v = p + self.spec.plane(branch).entry_cost(x0);
            if v < best {
                best = v;
                arg = choice;
            }
        }
        (best, arg)
    }
}

/// Precomputed interpolation stencil of one control for state-independent
/// dynamics and cost: the foot of node `(k, j)` is always at the same offset.
struct Stencil {
    cost: f64,
    offset: isize,
    w: [f64; 4],
}

/// Stencils of every control plus the node ranges where no foot is clamped.
struct UniformKernel {
    stencils: Vec<Stencil>,
    rows: (usize, usize),
    cols: (usize, usize),
}

fn uniform_kernel(spec: &ProblemSpec, grid: &GridSpec, branch: usize) -> Option<UniformKernel> {
    let plane = spec.plane(branch);
    if !plane.dynamics.is_state_independent() || !plane.running_cost.is_state_independent() {
        return None;
    }
    let weights = StepWeights::new(spec.lambda(), grid.dt);
    let (n_xi, n_x0) = (grid.n_xi() as isize, grid.n_x0() as isize);
    let (mut di_lo, mut di_hi, mut dj_lo, mut dj_hi) = (0isize, 0isize, 0isize, 0isize);
    let mut stencils = Vec::with_capacity(plane.controls.len());
    for c in &plane.controls {
        let f = plane.velocity(0.0, 0.0, c);
        let oxi = grid.dt * f.normal / grid.h;
        let ox0 = grid.dt * f.tangential / grid.h;
        let (di, dj) = (oxi.floor(), ox0.floor());
        let (s, t) = (oxi - di, ox0 - dj);
        let (di, dj) = (di as isize, dj as isize);
        di_lo = di_lo.min(di);
        di_hi = di_hi.max(di);
        dj_lo = dj_lo.min(dj);
        dj_hi = dj_hi.max(dj);
        let b = weights.discount;
        stencils.push(Stencil {
            cost: weights.cost * plane.running_cost(0.0, 0.0, c),
            offset: di * n_x0 + dj,
            w: [
                b * (1.0 - s) * (1.0 - t),
                b * (1.0 - s) * t,
                b * s * (1.0 - t),
                b * s * t,
            ],
        });
    }
    let rows = ((-di_lo).max(1), n_xi - 2 - di_hi);
    let cols = ((-dj_lo).max(0), n_x0 - 2 - dj_hi);
    if rows.0 > rows.1 || cols.0 > cols.1 {
        return None;
    }
    Some(UniformKernel {
        stencils,
        rows: (rows.0 as usize, rows.1 as usize),
        cols: (cols.0 as usize, cols.1 as usize),
    })
}

impl UniformKernel {
    #[inline]
    fn eval(&self, values: &[f64], n_x0: usize, node: usize) -> f64 {
        let mut best = f64::INFINITY;
        for st in &self.stencils {
            let r0 = (node as isize + st.offset) as usize;
            let r1 = r0 + n_x0;
            let v = st.cost
                + st.w[0] * values[r0]
                + st.w[1] * values[r0 + 1]
                + st.w[2] * values[r1]
                + st.w[3] * values[r1 + 1];
            if v < best {
                best = v;
            }
        }
        best
    }
}

/// One Jacobi sweep of the scheme.
pub fn sl_update(spec: &ProblemSpec, grid: &GridSpec, field: &ValueField) -> Result<ValueField, SolverError> {
    let mut out = field.clone();
    sl_update_into(spec, grid, field, &mut out)?;
    Ok(out)
}

/// [`sl_update`] writing into a preallocated output of the same shape.
pub fn sl_update_into(
    spec: &ProblemSpec,
    grid: &GridSpec,
    field: &ValueField,
    out: &mut ValueField,
) -> Result<(), SolverError> {
    if !field.matches(spec, grid) || !out.matches(spec, grid) {
        return Err(SolverError::ShapeMismatch);
    }
    let clauses = Clauses::new(spec, grid, field);
    let n_x0 = field.n_x0;

    for branch in 1..=spec.n_branches() {
        let kernel = uniform_kernel(spec, grid, branch);
        let values = field.plane(branch);
        out.planes[branch - 1][n_x0..]
            .par_chunks_mut(n_x0)
            .enumerate()
            .for_each(|(r, row)| {
                let k = r + 1;
                let xi = grid.xi_at(k);
                match &kernel {
                    Some(kern) if kern.rows.0 <= k && k <= kern.rows.1 => {
                        let (lo, hi) = kern.cols;
                        for (j, slot) in row.iter_mut().enumerate() {
                            *slot = if lo <= j && j <= hi {
                                kern.eval(values, n_x0, k * n_x0 + j)
                            } else {
                                clauses.interior(branch, xi, grid.x0_at(j)).0
                            };
                        }
                    }
                    _ => {
                        for (j, slot) in row.iter_mut().enumerate() {
                            *slot = clauses.interior(branch, xi, grid.x0_at(j)).0;
                        }
                    }
                }
            });
    }

    let n = spec.n_branches();
    let mut inward = vec![0.0; n];
    for j in 0..n_x0 {
        let x0 = grid.x0_at(j);
        let mut u = clauses.tangential(x0).0;
        for (b, slot) in inward.iter_mut().enumerate() {
            *slot = clauses.inward(b + 1, x0).0;
            u = u.min(*slot + spec.plane(b + 1).entry_cost(x0));
        }
        if !u.is_finite() {
            return Err(SolverError::NoInterfaceMotion(x0));
        }
        out.gamma[j] = u;
        for (b, p) in inward.iter().enumerate() {
            out.planes[b][j] = u.min(*p);
        }
    }
    Ok(())
}

/// Discrete residual `(W - T W)/dt` at every node.
pub fn residual(spec: &ProblemSpec, grid: &GridSpec, field: &ValueField) -> Result<ValueField, SolverError> {
    let next = sl_update(spec, grid, field)?;
    let dt = grid.dt;
    Ok(field.zip_with(&next, |a, b| (a - b) / dt))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub converged: bool,
    /// Sup-norm change of the last sweep.
    pub final_change: f64,
    /// `final_change / dt`, the sup norm of the discrete residual of the
    /// previous iterate.
    pub final_residual: f64,
    pub residual_history: Vec<f64>,
    /// Ratio of the last two sweep changes.
    pub contraction_ratio: f64,
    /// `e^{-λ dt}`.
    pub expected_ratio: f64,
    /// Sweep changes never grew after the burn-in.
    pub history_monotone: bool,
    /// Largest pointwise increase seen between consecutive iterates.
    pub max_increase: f64,
    pub wall_time_s: f64,
    pub warnings: Vec<String>,
}

impl SolveReport {
    /// Empirical contraction within 20% of `e^{-λ dt}`.
    pub fn contraction_matches(&self) -> bool {
        (self.contraction_ratio - self.expected_ratio).abs() <= 0.2 * self.expected_ratio
    }
}

/// Iterates [`sl_update`] until the sup-norm change drops below `tol` or
/// `max_iter` sweeps have run. A non-converged run still returns the last
/// iterate, with `converged == false` in the report.
pub fn solve(
    spec: &ProblemSpec,
    grid: &GridSpec,
    init: ValueField,
    tol: f64,
    max_iter: usize,
) -> Result<(ValueField, SolveReport), SolverError> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(SolverError::BadTolerance(tol));
    }
    grid.validate()?;
    if !init.matches(spec, grid) {
        return Err(SolverError::ShapeMismatch);
    }
    if !init.all_finite() {
        return Err(SolverError::NonFinite);
    }
    let start = Instant::now();
    let mut warnings: Vec<String> = grid.locality_warning(spec.bound_m()).into_iter().collect();
    let mut current = init;
    let mut next = current.clone();
    let mut history = Vec::new();
    let mut monotone = true;
    let mut max_increase = f64::NEG_INFINITY;
    let mut converged = false;

    for it in 0..max_iter {
        sl_update_into(spec, grid, &current, &mut next)?;
        let change = next.sup_distance(&current);
        max_increase = max_increase.max(next.max_excess_over(&current));
        if let Some(&prev) = history.last() {
            if it >= BURN_IN && change > prev * (1.0 + 1e-9) + 1e-15 {
                monotone = false;
            }
        }
        history.push(change);
        std::mem::swap(&mut current, &mut next);
        if !change.is_finite() {
            return Err(SolverError::NonFinite);
        }
        if change < tol {
            converged = true;
            break;
        }
    }

    let final_change = history.last().copied().unwrap_or(0.0);
    let contraction_ratio = match history.as_slice() {
        [.., a, b] if *a > 0.0 => b / a,
        _ => f64::NAN,
    };
    if !converged {
        warnings.push(format!("not converged after {max_iter} sweeps"));
    }
    if !monotone {
        warnings.push("sweep change increased after burn-in".into());
    }
    let report = SolveReport {
        iterations: history.len(),
        converged,
        final_change,
        final_residual: final_change / grid.dt,
        residual_history: history,
        contraction_ratio,
        expected_ratio: StepWeights::new(spec.lambda(), grid.dt).discount,
        history_monotone: monotone,
        max_increase,
        wall_time_s: start.elapsed().as_secs_f64(),
        warnings,
    };
    Ok((current, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::oracle_example_spec;
    use crate::problem::{EntryCost, RunningCost};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_grid() -> GridSpec {
        GridSpec::new(2.0, -1.0, 1.0, 0.25, 0.1).unwrap()
    }

    fn random_field(spec: &ProblemSpec, grid: &GridSpec, rng: &mut ChaCha8Rng, scale: f64) -> ValueField {
        let planes = (0..spec.n_branches())
            .map(|_| {
                (0..grid.n_xi() * grid.n_x0())
                    .map(|_| rng.gen_range(-scale..scale))
                    .collect()
            })
            .collect();
        let gamma = (0..grid.n_x0()).map(|_| rng.gen_range(-scale..scale)).collect();
        ValueField::from_parts(grid, planes, gamma).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(1.0, 0.0, 1.0, 0.3, 0.1).is_err());
        assert!(GridSpec::new(1.0, 0.0, 1.0, 0.25, 0.0).is_err());
        assert!(GridSpec::new(1.0, 1.0, 1.0, 0.25, 0.1).is_err());
        let g = GridSpec::new(6.0, -4.0, 4.0, 0.05, 0.02).unwrap();
        assert_eq!((g.n_xi(), g.n_x0()), (121, 161));
        assert!(g.locality_warning(2.0).is_none());
        assert!(GridSpec::new(1.0, 0.0, 1.0, 0.1, 0.5)
            .unwrap()
            .locality_warning(2.0)
            .is_some());
    }

    #[test]
    fn interpolation_reproduces_bilinear_functions() {
        let grid = small_grid();
        let mut f = ValueField::constant(2, &grid, 0.0, 0.0);
        let n_x0 = grid.n_x0();
        for k in 0..grid.n_xi() {
            for j in 0..n_x0 {
                f.plane_mut(1)[k * n_x0 + j] = 1.0 + 2.0 * grid.xi_at(k) - 3.0 * grid.x0_at(j);
            }
        }
        let v = f.interpolate_plane(&grid, 1, 0.6, 0.1);
        assert!((v - (1.0 + 1.2 - 0.3)).abs() < 1e-12);
        // clamped outside the box
        let v = f.interpolate_plane(&grid, 1, -0.3, 5.0);
        assert!((v - (1.0 - 3.0)).abs() < 1e-12);
    }

    #[test]
    fn constant_field_is_stationary_for_matching_cost() {
        let k = 2.5;
        let base = oracle_example_spec(0.5).unwrap();
        let mut spec = base.clone();
        for b in 1..=2 {
            let mut p = spec.plane(b).clone();
            p.running_cost = RunningCost::constant(spec.lambda() * k);
            spec = spec.with_plane(b, p).unwrap();
        }
        let grid = small_grid();
        let f = ValueField::constant(2, &grid, k, k);
        let next = sl_update(&spec, &grid, &f).unwrap();
        let n_x0 = grid.n_x0();
        for b in 1..=2 {
            for v in &next.plane(b)[n_x0..] {
                assert!((v - k).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_field_keeps_second_plane_at_zero() {
        let spec = oracle_example_spec(0.25).unwrap();
        let grid = small_grid();
        let f = ValueField::constant(2, &grid, 0.0, 0.0);
        let next = sl_update(&spec, &grid, &f).unwrap();
        assert!(next.plane(2).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn update_is_monotone_and_contracting() {
        let spec = oracle_example_spec(0.25).unwrap();
        let grid = small_grid();
        let beta = StepWeights::new(spec.lambda(), grid.dt).discount;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let w = random_field(&spec, &grid, &mut rng, 5.0);
            let bump = random_field(&spec, &grid, &mut rng, 1.0).map(f64::abs);
            let z = w.zip_with(&bump, |a, b| a + b);
            let tw = sl_update(&spec, &grid, &w).unwrap();
            let tz = sl_update(&spec, &grid, &z).unwrap();
            assert!(tw.max_excess_over(&tz) <= 1e-12);
            let ratio = tw.sup_distance(&tz) / w.sup_distance(&z);
            assert!(ratio <= beta + 1e-12, "ratio {ratio} > {beta}");
        }
    }

    #[test]
    fn residual_vanishes_at_fixed_point_and_scales_with_shift() {
        let spec = oracle_example_spec(0.25).unwrap();
        let grid = small_grid();
        let (field, report) = solve(&spec, &grid, ValueField::initial(&spec, &grid), 1e-13, 100_000).unwrap();
        assert!(report.converged);
        let r = residual(&spec, &grid, &field).unwrap();
        assert!(r.sup_norm() < 1e-11);
        let eps = 0.3;
        let shifted = field.map(|v| v + eps);
        let r = residual(&spec, &grid, &shifted).unwrap();
        let beta = StepWeights::new(spec.lambda(), grid.dt).discount;
        let expected = eps * (1.0 - beta) / grid.dt;
        for v in r.iter_values() {
            assert!((v - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_cost_problem_converges_to_cost_over_lambda() {
        let mut spec = oracle_example_spec(0.5).unwrap();
        for b in 1..=2 {
            let mut p = spec.plane(b).clone();
            p.running_cost = RunningCost::constant(0.7);
            p.entry_cost = EntryCost::Constant { value: 1e3 };
            spec = spec.with_plane(b, p).unwrap();
        }
        let grid = small_grid();
        let (field, report) = solve(&spec, &grid, ValueField::initial(&spec, &grid), 1e-12, 100_000).unwrap();
        assert!(report.converged);
        for v in field.iter_values() {
            assert!((v - 1.4).abs() < 1e-9, "{v}");
        }
        assert!(report.contraction_matches(), "{}", report.contraction_ratio);
        assert!(report.history_monotone);
        assert!(report.max_increase <= 0.0);
    }

    #[test]
    fn iterates_respect_a_priori_bound() {
        let spec = oracle_example_spec(0.25).unwrap();
        let grid = small_grid();
        let bound = a_priori_bound(&spec, &grid);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vmax = spec.bound_m() / spec.lambda();
        let mut f = random_field(&spec, &grid, &mut rng, vmax);
        f.gamma_mut().iter_mut().for_each(|u| *u = rng.gen_range(-vmax..bound));
        for _ in 0..200 {
            f = sl_update(&spec, &grid, &f).unwrap();
            assert!(f.sup_norm() <= bound + 1e-12);
        }
    }

    #[test]
    fn bad_inputs() {
        let spec = oracle_example_spec(0.25).unwrap();
        let grid = small_grid();
        let init = ValueField::initial(&spec, &grid);
        assert_eq!(
            solve(&spec, &grid, init.clone(), 0.0, 10).unwrap_err(),
            SolverError::BadTolerance(0.0)
        );
        let other = GridSpec::new(1.0, -1.0, 1.0, 0.25, 0.1).unwrap();
        assert_eq!(sl_update(&spec, &other, &init).unwrap_err(), SolverError::ShapeMismatch);
        let nan = init.map(|_| f64::NAN);
        assert_eq!(solve(&spec, &grid, nan, 1e-6, 10).unwrap_err(), SolverError::NonFinite);
        let (_, report) = solve(&spec, &grid, init, 1e-12, 3).unwrap();
        assert!(!report.converged);
        assert_eq!(report.iterations, 3);
    }
}
