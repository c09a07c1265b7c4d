//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any fails.

use std::error::Error;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use junction_hjb::config::{OracleCompareSection, RunConfig};
use junction_hjb::geometry::{geodesic_distance, Branch, JunctionGeometry, JunctionPoint};
use junction_hjb::oracle::{oracle_example_spec, oracle_value, ExampleRegime};
use junction_hjb::pipeline::{compare_to_oracle, default_oracle_samples};
use junction_hjb::problem::{
    audit_moderate_controllability, audit_strong_controllability, ControlSampling, ControllabilityMode, Dynamics,
    EntryCost, HalfPlaneSpec, ProblemSpec, RunningCost, DEFAULT_AUDIT_DIRECTIONS,
};
use junction_hjb::solver::{sl_update, solve, GridSpec, ValueField};
use junction_hjb::trajectory::{
    brute_force_value, cost, extract_policy, schedule_dpp_residual, simulate, trajectory_dpp_residual, ControlSchedule,
};
use junction_hjb::verify::{
    check_controllability_with, check_monotone_comparison, check_sandwich, check_shift_identity, Regime,
};

type Outcome = Result<(bool, String), Box<dyn Error>>;

const MAX_ITER: usize = 50_000;
const ENTERING_TOL: f64 = 1e-5;

/// The λ = 1/4 solve shared by the entering-regime criteria.
struct Entering {
    spec: ProblemSpec,
    grid: GridSpec,
    field: ValueField,
    regime: ExampleRegime,
}

impl Entering {
    fn solve() -> Result<Self, Box<dyn Error>> {
        let spec = oracle_example_spec(0.25)?;
        let grid = GridSpec::new(6.0, -4.0, 4.0, 0.025, 0.01)?;
        let (field, report) = solve(&spec, &grid, ValueField::initial(&spec, &grid), ENTERING_TOL, MAX_ITER)?;
        if !report.converged {
            return Err(format!("λ = 1/4 solve did not converge in {} sweeps", report.iterations).into());
        }
        println!(
            "     (λ = 1/4 solve: {} sweeps, {:.1} s)",
            report.iterations, report.wall_time_s
        );
        Ok(Self {
            spec,
            grid,
            field,
            regime: ExampleRegime::new(0.25)?,
        })
    }
}

/// Affine dynamics around the identity with small drift: strongly
/// controllable at radius 0.5 by construction, confirmed by the audit.
fn random_strong_spec(rng: &mut ChaCha8Rng, lambda: f64) -> Result<ProblemSpec, Box<dyn Error>> {
    loop {
        let n = rng.gen_range(2..=3);
        let mut planes = Vec::with_capacity(n);
        for branch in 1..=n {
            let s: f64 = rng.gen_range(1.0..1.5);
            let th: f64 = rng.gen_range(-0.3..0.3);
            planes.push(HalfPlaneSpec {
                controls: ControlSampling::Disc {
                    boundary: 16,
                    center: true,
                }
                .build(branch)?,
                dynamics: Dynamics::Affine {
                    drift: [rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2)],
                    gain: [[s * th.cos(), -s * th.sin()], [s * th.sin(), s * th.cos()]],
                    state_gain: [[0.0; 2]; 2],
                },
                running_cost: RunningCost::Affine {
                    base: rng.gen_range(0.5..1.5),
                    control: [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)],
                    state: [0.0; 2],
                },
                entry_cost: EntryCost::Constant {
                    value: rng.gen_range(0.5..3.0),
                },
                bound_m: 3.0,
                lipschitz_l: 1.0,
            });
        }
        let spec = ProblemSpec::new(
            JunctionGeometry::evenly_spaced(n)?,
            planes,
            lambda,
            1e-9,
            ControllabilityMode::Strong,
            0.5,
        )?;
        if audit_strong_controllability(&spec, 0.0, spec.delta(), DEFAULT_AUDIT_DIRECTIONS)? {
            return Ok(spec);
        }
    }
}

fn random_field(rng: &mut ChaCha8Rng, spec: &ProblemSpec, grid: &GridSpec, scale: f64) -> ValueField {
    let n = grid.n_xi() * grid.n_x0();
    let planes = (0..spec.n_branches())
        .map(|_| (0..n).map(|_| rng.gen_range(-scale..scale)).collect())
        .collect();
    let gamma = (0..grid.n_x0()).map(|_| rng.gen_range(-scale..scale)).collect();
    ValueField::from_parts(grid, planes, gamma).expect("shape from grid")
}

fn small_grid() -> GridSpec {
    GridSpec::new(3.0, -2.0, 2.0, 0.1, 0.05).expect("valid grid")
}

fn saturated_reproduction() -> Outcome {
    let spec = oracle_example_spec(1.0)?;
    let grid = GridSpec::new(6.0, -4.0, 4.0, 0.05, 0.02)?;
    let (field, report) = solve(&spec, &grid, ValueField::initial(&spec, &grid), 1e-6, MAX_ITER)?;
    let (mut e1, mut e2) = (0.0f64, 0.0f64);
    for k in 0..grid.n_xi() {
        for j in 0..grid.n_x0() {
            if grid.distance_to_truncation(grid.xi_at(k), grid.x0_at(j)) < 1.5 {
                continue;
            }
            e1 = e1.max((field.node(1, k, j) - 1.0).abs());
            e2 = e2.max(field.node(2, k, j).abs());
        }
    }
    Ok((
        report.converged && e1 <= 2e-2 && e2 <= 2e-2 && report.wall_time_s <= 60.0,
        format!(
            "max|v1-1| = {e1:.2e}, max|v2| = {e2:.2e} (≤ 2e-2), {} sweeps in {:.1} s (≤ 60 s)",
            report.iterations, report.wall_time_s
        ),
    ))
}

fn entering_reproduction(e: &Entering) -> Outcome {
    let samples = default_oracle_samples(&e.grid, &OracleCompareSection::default(), 2);
    let table = compare_to_oracle(&e.spec, &e.grid, &e.field, &e.regime, &samples)?;
    let at = e.field.interpolate_plane(&e.grid, 1, 4.0, 2.0);
    let point_err = (at - 3.2642).abs();
    Ok((
        table.max_error <= 5e-2 && point_err <= 5e-2,
        format!(
            "lattice max error {:.2e}, mean {:.2e} over {} samples; v1(4, 2) = {at:.4} vs 3.2642 (≤ 5e-2)",
            table.max_error,
            table.mean_error,
            table.rows.len()
        ),
    ))
}

fn brute_force_adjudication(e: &Entering) -> Outcome {
    let config = RunConfig::builtin("paper-example-entering")?;
    let section = config
        .brute_force
        .as_ref()
        .ok_or("built-in config lacks [brute_force]")?;
    let bf = section.to_config(&e.spec)?;
    let mut ok = section.points.len() == 5;
    let mut worst_oracle = 0.0f64;
    let mut worst_solver = f64::INFINITY;
    for start in &section.points {
        let p = start.point()?;
        let r = brute_force_value(&e.spec, p, &bf, 0)?;
        let oracle = oracle_value(&e.regime, &p)?.seen_from(start.branch.max(1));
        let solver = e.field.value_at(&e.grid, &p);
        worst_oracle = worst_oracle.max((r.value - oracle).abs());
        worst_solver = worst_solver.min(r.value - solver);
        ok &= (r.value - oracle).abs() <= 5e-2 && r.value >= solver - 5e-2;
    }
    Ok((
        ok,
        format!(
            "{} points: max |bf - oracle| = {worst_oracle:.2e}, min (bf - solver) = {worst_solver:.2e} (tolerance 5e-2)",
            section.points.len()
        ),
    ))
}

fn sandwich(e: &Entering) -> Outcome {
    let example = check_sandwich(&e.spec, &e.grid, &e.field, ENTERING_TOL);
    let mut ok = example.passed();
    let mut lines = vec![format!("example at h = 0.025: {} violations", example.violations.len())];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let tol = 1e-7;
    let grid = small_grid();
    for _ in 0..3 {
        let spec = random_strong_spec(&mut rng, 0.5)?;
        let (field, report) = solve(&spec, &grid, ValueField::initial(&spec, &grid), tol, MAX_ITER)?;
        let r = check_sandwich(&spec, &grid, &field, tol);
        ok &= report.converged && r.passed();
        lines.push(format!("random {}-plane: {}", spec.n_branches(), r.violations.len()));
    }
    Ok((ok, lines.join(", ")))
}

fn contraction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let grid = small_grid();
    let specs = [
        oracle_example_spec(0.25)?,
        random_strong_spec(&mut rng, 1.0)?,
        random_strong_spec(&mut rng, 0.5)?,
    ];
    let mut worst = f64::NEG_INFINITY;
    for k in 0..100 {
        let spec = &specs[k % specs.len()];
        let beta = (-spec.lambda() * grid.dt).exp();
        let w = random_field(&mut rng, spec, &grid, 5.0);
        let z = if k % 2 == 0 {
            random_field(&mut rng, spec, &grid, 5.0)
        } else {
            let bump = random_field(&mut rng, spec, &grid, 1e-3);
            w.zip_with(&bump, |a, b| a + b)
        };
        let ratio = sl_update(spec, &grid, &w)?.sup_distance(&sl_update(spec, &grid, &z)?) / w.sup_distance(&z);
        worst = worst.max(ratio - beta);
    }
    Ok((
        worst <= 1e-12,
        format!("100 pairs: max (ratio - e^(-λdt)) = {worst:.2e} (≤ 1e-12)"),
    ))
}

fn comparison() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let grid = small_grid();
    let tol = 1e-7;
    let mut ok = true;
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let a = random_strong_spec(&mut rng, 0.5)?;
        let mut b = a.clone();
        for branch in 1..=a.n_branches() {
            let mut plane = a.plane(branch).clone();
            if let RunningCost::Affine { base, .. } = &mut plane.running_cost {
                *base += rng.gen_range(0.0..0.5);
            }
            plane.entry_cost = plane.entry_cost.scaled(rng.gen_range(1.0..2.0));
            b = b.with_plane(branch, plane)?;
        }
        let r = check_monotone_comparison(&a, &b, &grid, tol, MAX_ITER)?;
        ok &= r.passed();
        worst = worst.max(r.max_excess);
    }
    let shift = check_shift_identity(&oracle_example_spec(0.5)?, &grid, 1.0, tol, MAX_ITER)?;
    ok &= shift.passed();
    Ok((
        ok,
        format!(
            "10 pairs: max excess {worst:.2e}; shift identity deviation {:.2e} (≤ 2 tol = {:.0e})",
            shift.max_deviation,
            2.0 * tol
        ),
    ))
}

/// Adds random segments whose controls are admissible where the previous
/// prefix ends.
fn random_schedule(
    rng: &mut ChaCha8Rng,
    spec: &ProblemSpec,
    start: JunctionPoint,
) -> Result<ControlSchedule, Box<dyn Error>> {
    let mut parts = Vec::new();
    let mut at = start;
    for _ in 0..rng.gen_range(1..=3) {
        let branch = match at.branch() {
            Branch::Plane(i) => i,
            Branch::Interface => rng.gen_range(1..=spec.n_branches()),
        };
        let id = rng.gen_range(0..spec.plane(branch).controls.len());
        parts.push((rng.gen_range(0.5..3.0), branch, id));
        let schedule = ControlSchedule::from_ids(spec, &parts)?;
        at = simulate(spec, start, &schedule, 0.01)?.end_point();
    }
    Ok(ControlSchedule::from_ids(spec, &parts)?)
}

fn dpp(e: &Entering) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let policy = extract_policy(&e.spec, &e.grid, &e.field);
    let mut worst_policy = 0.0f64;
    let mut worst_schedule = f64::INFINITY;
    for _ in 0..20 {
        let start = JunctionPoint::new(rng.gen_range(1..=2), rng.gen_range(0.2..4.0), rng.gen_range(-2.0..2.0))?;
        let traj = policy.rollout(start, 8.0, e.grid.dt)?;
        worst_policy = worst_policy.max(trajectory_dpp_residual(&e.spec, &e.grid, &e.field, &traj).abs());
    }
    for _ in 0..20 {
        let start = JunctionPoint::new(rng.gen_range(1..=2), rng.gen_range(0.2..4.0), rng.gen_range(-2.0..2.0))?;
        let schedule = random_schedule(&mut rng, &e.spec, start)?;
        let r = schedule_dpp_residual(&e.spec, &e.grid, &e.field, start, &schedule, 0.01)?;
        worst_schedule = worst_schedule.min(r);
    }
    Ok((
        worst_policy <= 5e-2 && worst_schedule >= -5e-2,
        format!(
            "policy |cost - value| max {worst_policy:.2e}; schedules min (cost - value) {worst_schedule:.2e} (tolerance 5e-2)"
        ),
    ))
}

fn entry_accounting() -> Outcome {
    let spec = oracle_example_spec(0.25)?;
    let schedule = ControlSchedule::from_ids(
        &spec,
        &[
            (1.0, 1, 32),
            (0.5, 1, 16),
            (1.0, 2, 0),
            (1.0, 2, 32),
            (1.0, 1, 0),
            (1.0, 1, 32),
            (0.5, 2, 16),
            (1.0, 2, 0),
        ],
    )?;
    let traj = simulate(&spec, JunctionPoint::new(1, 1.0, 0.0)?, &schedule, 0.25)?;
    let events = traj.entry_events();
    let expected: f64 = events
        .iter()
        .map(|ev| spec.plane(ev.branch).entry_cost(ev.x0) * (-spec.lambda() * ev.t).exp())
        .sum();
    let full = cost(&spec, &traj);
    let stripped = cost(&spec, &traj.stripped());
    let gap = (full.total() - (stripped.total() + expected)).abs();
    Ok((
        events.len() == 3 && stripped.entry == 0.0 && gap <= 1e-12,
        format!(
            "{} entries, |cost - stripped - Σ c e^(-λt)| = {gap:.1e} (≤ 1e-12)",
            events.len()
        ),
    ))
}

fn random_point(rng: &mut ChaCha8Rng, n: usize) -> JunctionPoint {
    let b = rng.gen_range(0..=n);
    let x0 = rng.gen_range(-5.0..5.0);
    if b == 0 {
        JunctionPoint::interface(x0)
    } else {
        JunctionPoint::new(b, rng.gen_range(0.0..5.0), x0).expect("finite coordinates")
    }
}

/// Length of the shortest path through an interface waypoint, by ternary
/// search over the waypoint's position (the length is convex in it).
fn waypoint_distance(a: &JunctionPoint, b: &JunctionPoint) -> f64 {
    let len = |z: f64| (a.x0() - z).hypot(a.xi()) + (b.x0() - z).hypot(b.xi());
    let (mut lo, mut hi) = (a.x0().min(b.x0()) - 1.0, a.x0().max(b.x0()) + 1.0);
    for _ in 0..200 {
        let (m1, m2) = (lo + (hi - lo) / 3.0, hi - (hi - lo) / 3.0);
        if len(m1) < len(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    len(0.5 * (lo + hi))
}

fn metric() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut symmetric = true;
    let mut worst_triangle = f64::NEG_INFINITY;
    let mut worst_waypoint = 0.0f64;
    for _ in 0..10_000 {
        let (a, b, c) = (
            random_point(&mut rng, 3),
            random_point(&mut rng, 3),
            random_point(&mut rng, 3),
        );
        let ab = geodesic_distance(&a, &b);
        symmetric &= ab == geodesic_distance(&b, &a);
        worst_triangle = worst_triangle.max(geodesic_distance(&a, &c) - ab - geodesic_distance(&b, &c));
        if a.branch() != b.branch() {
            worst_waypoint = worst_waypoint.max((ab - waypoint_distance(&a, &b)).abs());
        }
    }
    Ok((
        symmetric && worst_triangle <= 1e-12 && worst_waypoint <= 1e-6,
        format!(
            "symmetry exact: {symmetric}; max triangle excess {worst_triangle:.1e} (≤ 1e-12); max waypoint gap {worst_waypoint:.1e} (≤ 1e-6)"
        ),
    ))
}

fn controllability() -> Outcome {
    let grid = small_grid();
    let example = oracle_example_spec(0.25)?;
    let at_09 = check_controllability_with(&example, &grid, 0.9)?;
    let at_11 = check_controllability_with(&example, &grid, 1.1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut specs = vec![example];
    for _ in 0..3 {
        specs.push(random_strong_spec(&mut rng, 0.5)?);
    }
    let mut implication = true;
    let mut strong_seen = 0;
    for spec in &specs {
        for j in 0..grid.n_x0() {
            for delta in [0.3, 0.5, 0.9, 1.1] {
                let x0 = grid.x0_at(j);
                if audit_strong_controllability(spec, x0, delta, DEFAULT_AUDIT_DIRECTIONS)? {
                    strong_seen += 1;
                    implication &= audit_moderate_controllability(spec, x0, delta)?;
                }
            }
        }
    }
    Ok((
        at_09.regime == Regime::Strong && at_11.regime != Regime::Strong && implication && strong_seen > 0,
        format!(
            "δ = 0.9: {:?}, δ = 1.1: {:?}; strong ⇒ moderate on {strong_seen} strong audits: {implication}",
            at_09.regime, at_11.regime
        ),
    ))
}

fn report(id: usize, name: &str, outcome: Outcome, failures: &mut usize) {
    let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    if !passed {
        *failures += 1;
    }
    println!("{} {id:>2} {name}: {detail}", if passed { "PASS" } else { "FAIL" });
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut failures = 0;
    report(1, "saturated regime", saturated_reproduction(), &mut failures);
    let entering = Entering::solve().map_err(|e| e.to_string());
    let shared = |f: fn(&Entering) -> Outcome| match &entering {
        Ok(e) => f(e),
        Err(msg) => Err(format!("shared λ = 1/4 solve failed: {msg}").into()),
    };
    report(2, "entering regime", shared(entering_reproduction), &mut failures);
    report(
        3,
        "brute-force adjudication",
        shared(brute_force_adjudication),
        &mut failures,
    );
    report(4, "sandwich", shared(sandwich), &mut failures);
    report(5, "contraction", contraction(), &mut failures);
    report(6, "comparison", comparison(), &mut failures);
    report(7, "dynamic programming", shared(dpp), &mut failures);
    report(8, "entry-cost accounting", entry_accounting(), &mut failures);
    report(9, "metric", metric(), &mut failures);
    report(10, "controllability audits", controllability(), &mut failures);
    println!(
        "acceptance: {} of 10 passed in {:.0} s",
        10 - failures,
        start.elapsed().as_secs_f64()
    );
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
