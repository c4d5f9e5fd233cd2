//! Equilibrium solves and path continuation.
//!
//! Newton iteration on the free dofs provides equilibria at fixed load; on
//! top of it sit three continuation methods: plain load stepping, single-dof
//! displacement control, and spherical arc-length control that traverses
//! limit points by letting the load factor fall as the constraint surface
//! dictates. Every accepted point is annotated with strain energy and
//! stability indicators so downstream analyses never re-solve the path.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corotational::{assemble, reference_force, total_strain_energy, AssembleError};
use crate::model::{DofMap, Model, ModelError};

/// A configuration plus the load factor that holds it in equilibrium.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub q: DVector<f64>,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContinuationMethod {
    LoadControl,
    DisplacementControl,
    ArcLength,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContinuationSettings {
    pub method: ContinuationMethod,
    /// Global dof id driven by displacement control and monitored by
    /// `target_displacement`.
    pub control_dof: Option<usize>,
    pub initial_step: f64,
    pub min_step: f64,
    pub max_step: f64,
    pub max_steps: usize,
    pub newton_tol: f64,
    pub max_newton_iters: usize,
    /// Stop once the load factor reaches or crosses this value.
    pub target_lambda: Option<f64>,
    /// Stop once the control dof reaches or crosses this value.
    pub target_displacement: Option<f64>,
}

impl Default for ContinuationSettings {
    fn default() -> Self {
        ContinuationSettings {
            method: ContinuationMethod::ArcLength,
            control_dof: None,
            initial_step: 0.01,
            min_step: 1e-10,
            max_step: 0.05,
            max_steps: 2000,
            newton_tol: 1e-8,
            max_newton_iters: 30,
            target_lambda: None,
            target_displacement: None,
        }
    }
}

impl ContinuationSettings {
    pub fn check(&self) -> Result<(), SolveError> {
        let bad = |msg: &str| Err(SolveError::InvalidSettings(msg.to_string()));
        for (name, v) in [
            ("initial_step", self.initial_step),
            ("min_step", self.min_step),
            ("max_step", self.max_step),
            ("newton_tol", self.newton_tol),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(SolveError::InvalidSettings(format!(
                    "{name} must be finite and positive"
                )));
            }
        }
        if self.min_step > self.initial_step || self.initial_step > self.max_step {
            return bad("steps must satisfy min_step <= initial_step <= max_step");
        }
        if self.newton_tol > 1e-2 {
            return bad("newton_tol must be at most 1e-2");
        }
        if self.max_steps == 0 || self.max_newton_iters == 0 {
            return bad("max_steps and max_newton_iters must be at least 1");
        }
        if self.method == ContinuationMethod::DisplacementControl && self.control_dof.is_none() {
            return bad("displacement control requires control_dof");
        }
        if self.target_displacement.is_some() && self.control_dof.is_none() {
            return bad("target_displacement requires control_dof");
        }
        Ok(())
    }
}

/// Accepted equilibrium point with its stability annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct PathPoint {
    pub state: State,
    /// Total strain energy at the state.
    pub energy: f64,
    /// Smallest eigenvalue of the constrained tangent.
    pub min_eigenvalue: f64,
    /// Sign of the constrained tangent determinant (-1, 0, +1).
    pub det_sign: i8,
    /// Newton iterations spent on this point.
    pub newton_iters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    TargetReached,
    MaxSteps,
    StepUnderflow,
    Divergence,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::TargetReached => "target_reached",
            Termination::MaxSteps => "max_steps",
            Termination::StepUnderflow => "step_underflow",
            Termination::Divergence => "divergence",
        }
    }
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumPath {
    pub points: Vec<PathPoint>,
    pub termination: Termination,
    /// Number of leading points that belong to the gravity-preload step of
    /// the two-step protocol (0 when the protocol was not used).
    pub preload_points: usize,
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("invalid solver settings: {0}")]
    InvalidSettings(String),
    #[error("no convergence at lambda={lambda:.6e}: residual {residual:.3e} after {iterations} Newton iterations")]
    NoConvergence {
        lambda: f64,
        residual: f64,
        iterations: usize,
    },
    #[error("singular tangent stiffness")]
    SingularTangent,
    #[error("continuation diverged on the first step")]
    FirstStepDiverged,
    #[error("control dof is not free")]
    ControlDofNotFree,
    #[error(transparent)]
    Assembly(#[from] AssembleError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Recoverable failure of one continuation step; the driver reacts by
/// halving the step size.
#[derive(Debug)]
enum StepFailure {
    NoConvergence { residual: f64, iterations: usize },
    Assembly(AssembleError),
    Singular,
    NoRoot,
}

impl From<AssembleError> for StepFailure {
    fn from(e: AssembleError) -> Self {
        StepFailure::Assembly(e)
    }
}

fn step_failure_to_error(f: StepFailure, lambda: f64) -> SolveError {
    match f {
        StepFailure::NoConvergence {
            residual,
            iterations,
        } => SolveError::NoConvergence {
            lambda,
            residual,
            iterations,
        },
        StepFailure::Assembly(e) => SolveError::Assembly(e),
        StepFailure::Singular | StepFailure::NoRoot => SolveError::SingularTangent,
    }
}

/// Newton iteration at fixed lambda, updating `q` in place. Convergence is
/// a relative residual check against `(|lambda| * ||f_ref|| + 1)`; divergence
/// is declared after `max_newton_iters` or three consecutive residual
/// growths.
fn newton(
    model: &Model,
    map: &DofMap,
    q: &mut DVector<f64>,
    lambda: f64,
    fref_norm: f64,
    settings: &ContinuationSettings,
) -> Result<usize, StepFailure> {
    map.apply(q);
    let scale = lambda.abs() * fref_norm + 1.0;
    let mut prev_residual = f64::INFINITY;
    let mut growth = 0usize;
    for iteration in 0..=settings.max_newton_iters {
        let sys = assemble(model, map, q, lambda)?;
        let residual = sys.residual.norm();
        if !residual.is_finite() {
            return Err(StepFailure::NoConvergence {
                residual,
                iterations: iteration,
            });
        }
        if residual <= settings.newton_tol * scale {
            return Ok(iteration);
        }
        if residual >= prev_residual {
            growth += 1;
            if growth >= 3 {
                return Err(StepFailure::NoConvergence {
                    residual,
                    iterations: iteration,
                });
            }
        } else {
            growth = 0;
        }
        if iteration == settings.max_newton_iters {
            return Err(StepFailure::NoConvergence {
                residual,
                iterations: iteration,
            });
        }
        let lu = sys.tangent.lu();
        let delta = lu.solve(&(-&sys.residual)).ok_or(StepFailure::Singular)?;
        map.add_free(q, &delta);
        prev_residual = residual;
    }
    unreachable!("newton loop always returns");
}

/// Equilibrium at a fixed load factor starting from `q0`. Returns the state
/// and the Newton iteration count (0 when `q0` already satisfies the
/// tolerance, e.g. the rest state at lambda = 0).
pub fn solve_at_load(
    model: &Model,
    lambda: f64,
    q0: &DVector<f64>,
    settings: &ContinuationSettings,
) -> Result<(State, usize), SolveError> {
    settings.check()?;
    let map = DofMap::new(model)?;
    solve_constrained(model, &map, lambda, q0, settings)
}

/// [`solve_at_load`] under a caller-supplied constraint map, e.g. with an
/// extra dof held at a prescribed displacement.
pub fn solve_constrained(
    model: &Model,
    map: &DofMap,
    lambda: f64,
    q0: &DVector<f64>,
    settings: &ContinuationSettings,
) -> Result<(State, usize), SolveError> {
    let fref_norm = map.reduce(&reference_force(model)).norm();
    let mut q = q0.clone();
    let iterations = newton(model, map, &mut q, lambda, fref_norm, settings)
        .map_err(|f| step_failure_to_error(f, lambda))?;
    Ok((State { q, lambda }, iterations))
}

/// Initial equilibrium of a continuation run (lambda = 0, gravity at full
/// value when enabled). Falls back to substepping gravity if the direct
/// solve fails.
fn solve_preload(
    model: &Model,
    map: &DofMap,
    q: &mut DVector<f64>,
    fref_norm: f64,
    settings: &ContinuationSettings,
) -> Result<usize, SolveError> {
    match newton(model, map, q, 0.0, fref_norm, settings) {
        Ok(iters) => return Ok(iters),
        Err(failure) => {
            if !model.load.gravity_enabled {
                return Err(step_failure_to_error(failure, 0.0));
            }
        }
    }
    let mut last_failure = None;
    for substeps in [4usize, 16, 64] {
        q.fill(0.0);
        map.apply(q);
        let mut scaled = model.clone();
        let mut iters = 0;
        let mut failed = false;
        for k in 1..=substeps {
            let factor = k as f64 / substeps as f64;
            scaled.load.gravity = [model.load.gravity[0] * factor, model.load.gravity[1] * factor];
            match newton(&scaled, map, q, 0.0, fref_norm, settings) {
                Ok(it) => iters = it,
                Err(failure) => {
                    last_failure = Some(failure);
                    failed = true;
                    break;
                }
            }
        }
        if !failed {
            return Ok(iters);
        }
    }
    Err(step_failure_to_error(last_failure.expect("ramp failed"), 0.0))
}

struct Annotator<'m> {
    model: &'m Model,
    map: &'m DofMap,
}

impl Annotator<'_> {
    fn point(&self, q: DVector<f64>, lambda: f64, newton_iters: usize) -> Result<PathPoint, SolveError> {
        let energy = total_strain_energy(self.model, &q)?;
        let sys = assemble(self.model, self.map, &q, lambda)?;
        let min_eigenvalue = smallest_eigenvalue(&sys.tangent);
        let det_sign = determinant_sign(&sys.tangent);
        Ok(PathPoint {
            state: State { q, lambda },
            energy,
            min_eigenvalue,
            det_sign,
            newton_iters,
        })
    }
}

/// Traces the equilibrium path from the rest state according to the settings.
pub fn continue_path(model: &Model, settings: &ContinuationSettings) -> Result<EquilibriumPath, SolveError> {
    continue_path_until(model, settings, |_| false)
}

/// Gravity-aware loading protocol: the first path point equilibrates the
/// structure under gravity alone (lambda = 0), then the reference load is
/// continued with gravity held at full value. The returned path marks the
/// preload point so reports can separate the two steps. With gravity
/// disabled the result is identical to [`continue_path`].
pub fn two_step_protocol(model: &Model, settings: &ContinuationSettings) -> Result<EquilibriumPath, SolveError> {
    let mut path = continue_path(model, settings)?;
    path.preload_points = 1;
    Ok(path)
}

/// [`continue_path`] with an extra stop predicate evaluated on the accepted
/// points after every step; returning true terminates the run as
/// target-reached. Used by bistability searches that stop on path shape
/// rather than on a fixed target.
pub fn continue_path_until(
    model: &Model,
    settings: &ContinuationSettings,
    mut stop: impl FnMut(&[PathPoint]) -> bool,
) -> Result<EquilibriumPath, SolveError> {
    settings.check()?;
    let map = DofMap::new(model)?;
    let annotator = Annotator { model, map: &map };

    let control = match settings.control_dof {
        Some(dof) => Some(map.free_index(dof).ok_or(SolveError::ControlDofNotFree)?),
        None => None,
    };
    let control_required = settings.method == ContinuationMethod::DisplacementControl
        || settings.target_displacement.is_some();
    if control_required && control.is_none() {
        return Err(SolveError::ControlDofNotFree);
    }

    let fref_full = reference_force(model);
    let fref_red = map.reduce(&fref_full);
    let fref_norm = fref_red.norm();
    // Spherical constraint metric: |dq|^2 + psi2 * dlambda^2.
    let psi2 = fref_norm * fref_norm;

    let mut q = DVector::zeros(model.dof_count());
    map.apply(&mut q);
    let preload_iters = solve_preload(model, &map, &mut q, fref_norm, settings)?;
    let mut points = vec![annotator.point(q.clone(), 0.0, preload_iters)?];

    if fref_norm == 0.0 {
        // Nothing to continue in; the preload equilibrium is the whole path.
        return Ok(EquilibriumPath {
            points,
            termination: Termination::TargetReached,
            preload_points: 0,
        });
    }

    // First-step direction: make lambda grow towards the target if one is
    // given, otherwise grow positively.
    let lambda_direction = match settings.target_lambda {
        Some(t) if t < 0.0 => -1.0,
        _ => 1.0,
    };

    let mut step = settings.initial_step;
    let mut previous_increment: Option<(DVector<f64>, f64)> = None;
    let termination;

    loop {
        if stop(&points) || target_hit(&points, settings) {
            termination = Termination::TargetReached;
            break;
        }
        if points.len() - 1 >= settings.max_steps {
            termination = Termination::MaxSteps;
            break;
        }

        let last = points.last().expect("path never empty");
        let attempt = match settings.method {
            ContinuationMethod::LoadControl => load_control_step(
                model, &map, last, step, lambda_direction, fref_norm, settings,
            ),
            ContinuationMethod::DisplacementControl | ContinuationMethod::ArcLength => {
                bordered_step(
                    model,
                    &map,
                    last,
                    step,
                    lambda_direction,
                    &fref_red,
                    psi2,
                    control,
                    previous_increment.as_ref(),
                    settings,
                )
            }
        };

        match attempt {
            Ok((q_new, lambda_new, iterations)) => {
                let increment_q = map.reduce(&q_new) - map.reduce(&last.state.q);
                let increment_lambda = lambda_new - last.state.lambda;
                points.push(annotator.point(q_new, lambda_new, iterations)?);
                previous_increment = Some((increment_q, increment_lambda));
                if iterations <= 4 {
                    step = (step * 1.5).min(settings.max_step);
                }
            }
            Err(failure) => {
                let newton_diverged = matches!(failure, StepFailure::NoConvergence { .. });
                step *= 0.5;
                if step < settings.min_step {
                    if points.len() == 1 {
                        return Err(SolveError::FirstStepDiverged);
                    }
                    // Underflow driven by Newton refusing to converge even at
                    // the smallest step is divergence (no solution nearby —
                    // e.g. load control pushed past the limit load); underflow
                    // from constraint-geometry failures keeps its own name.
                    termination = if newton_diverged {
                        Termination::Divergence
                    } else {
                        Termination::StepUnderflow
                    };
                    break;
                }
            }
        }
    }

    Ok(EquilibriumPath {
        points,
        termination,
        preload_points: 0,
    })
}

fn target_hit(points: &[PathPoint], settings: &ContinuationSettings) -> bool {
    if points.len() < 2 {
        return false;
    }
    let prev = &points[points.len() - 2];
    let last = &points[points.len() - 1];
    if let Some(target) = settings.target_lambda {
        if (prev.state.lambda - target) * (last.state.lambda - target) <= 0.0 {
            return true;
        }
    }
    if let (Some(target), Some(dof)) = (settings.target_displacement, settings.control_dof) {
        if (prev.state.q[dof] - target) * (last.state.q[dof] - target) <= 0.0 {
            return true;
        }
    }
    false
}

fn load_control_step(
    model: &Model,
    map: &DofMap,
    last: &PathPoint,
    step: f64,
    direction: f64,
    fref_norm: f64,
    settings: &ContinuationSettings,
) -> Result<(DVector<f64>, f64, usize), StepFailure> {
    let mut lambda = last.state.lambda + direction * step;
    if let Some(target) = settings.target_lambda {
        // Land exactly on the target instead of stepping past it.
        if (lambda - target) * direction > 0.0 {
            lambda = target;
        }
    }
    let mut q = last.state.q.clone();
    let iterations = newton(model, map, &mut q, lambda, fref_norm, settings)?;
    Ok((q, lambda, iterations))
}

/// One predictor-corrector step for the constrained methods. The corrector
/// solves the bordered system with a single LU factorization per iteration
/// (two right-hand sides); the constraint itself is satisfied exactly at
/// every iterate, so convergence is judged on the residual alone.
#[allow(clippy::too_many_arguments)]
fn bordered_step(
    model: &Model,
    map: &DofMap,
    last: &PathPoint,
    step: f64,
    lambda_direction: f64,
    fref_red: &DVector<f64>,
    psi2: f64,
    control: Option<usize>,
    previous_increment: Option<&(DVector<f64>, f64)>,
    settings: &ContinuationSettings,
) -> Result<(DVector<f64>, f64, usize), StepFailure> {
    let arc = settings.method == ContinuationMethod::ArcLength;

    // Predictor: tangent direction at the last accepted point, scaled to the
    // step and oriented along the previous increment (first step: towards
    // growing lambda).
    let sys = assemble(model, map, &last.state.q, last.state.lambda)?;
    let lu = sys.tangent.lu();
    let tangent_q = lu.solve(fref_red).ok_or(StepFailure::Singular)?;

    let mut d_lambda = if arc {
        step / (tangent_q.norm_squared() + psi2).sqrt()
    } else {
        let c = control.expect("displacement control has a control dof");
        if tangent_q[c] == 0.0 {
            return Err(StepFailure::Singular);
        }
        step / tangent_q[c].abs()
    };
    let oriented = match previous_increment {
        Some((prev_q, prev_lambda)) => {
            tangent_q.dot(prev_q) + psi2 * prev_lambda < 0.0
        }
        None => lambda_direction < 0.0,
    };
    if oriented {
        d_lambda = -d_lambda;
    }
    let mut delta_q = &tangent_q * d_lambda;
    let mut delta_lambda = d_lambda;
    // Displacement control drives the control dof to exactly this increment.
    let control_step = control.map(|c| delta_q[c]);

    let mut q = last.state.q.clone();
    map.add_free(&mut q, &delta_q);
    let mut lambda = last.state.lambda + delta_lambda;

    let fref_norm = psi2.sqrt();
    let mut prev_residual = f64::INFINITY;
    let mut growth = 0usize;

    for iteration in 1..=settings.max_newton_iters {
        let sys = assemble(model, map, &q, lambda)?;
        let residual_norm = sys.residual.norm();
        if !residual_norm.is_finite() {
            return Err(StepFailure::NoConvergence {
                residual: residual_norm,
                iterations: iteration,
            });
        }
        if residual_norm <= settings.newton_tol * (lambda.abs() * fref_norm + 1.0) {
            return Ok((q, lambda, iteration - 1));
        }
        if residual_norm >= prev_residual {
            growth += 1;
            if growth >= 3 {
                return Err(StepFailure::NoConvergence {
                    residual: residual_norm,
                    iterations: iteration,
                });
            }
        } else {
            growth = 0;
        }
        prev_residual = residual_norm;

        let lu = sys.tangent.lu();
        let correction = lu.solve(&(-&sys.residual)).ok_or(StepFailure::Singular)?;
        let tangent_q = lu.solve(fref_red).ok_or(StepFailure::Singular)?;

        let d_lambda = if arc {
            arc_root(&delta_q, delta_lambda, &correction, &tangent_q, psi2, step)?
        } else {
            let c = control.expect("displacement control has a control dof");
            if tangent_q[c] == 0.0 {
                return Err(StepFailure::Singular);
            }
            (control_step.expect("set above") - delta_q[c] - correction[c]) / tangent_q[c]
        };

        let update = correction + &tangent_q * d_lambda;
        map.add_free(&mut q, &update);
        delta_q += update;
        lambda += d_lambda;
        delta_lambda += d_lambda;
    }
    Err(StepFailure::NoConvergence {
        residual: prev_residual,
        iterations: settings.max_newton_iters,
    })
}

/// Solves the spherical constraint quadratic for the load-factor correction
/// and picks the root whose updated increment has the larger cosine with the
/// running increment (ties: smaller correction).
fn arc_root(
    delta_q: &DVector<f64>,
    delta_lambda: f64,
    correction: &DVector<f64>,
    tangent_q: &DVector<f64>,
    psi2: f64,
    step: f64,
) -> Result<f64, StepFailure> {
    let base = delta_q + correction;
    let a = tangent_q.norm_squared() + psi2;
    let b = 2.0 * (tangent_q.dot(&base) + psi2 * delta_lambda);
    let c = base.norm_squared() + psi2 * delta_lambda * delta_lambda - step * step;
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 || a == 0.0 {
        return Err(StepFailure::NoRoot);
    }
    let sq = disc.sqrt();
    let roots = [(-b + sq) / (2.0 * a), (-b - sq) / (2.0 * a)];
    let alignment = |root: f64| {
        let new_q = &base + tangent_q * root;
        new_q.dot(delta_q) + psi2 * (delta_lambda + root) * delta_lambda
    };
    let (a0, a1) = (alignment(roots[0]), alignment(roots[1]));
    let root = if (a0 - a1).abs() <= 1e-12 * (a0.abs() + a1.abs()) {
        if roots[0].abs() <= roots[1].abs() {
            roots[0]
        } else {
            roots[1]
        }
    } else if a0 > a1 {
        roots[0]
    } else {
        roots[1]
    };
    Ok(root)
}

// ---------------------------------------------------------------------------
// Stability indicators
// ---------------------------------------------------------------------------

/// Smallest eigenvalue of a symmetric matrix.
///
/// The eigenvalue is first bracketed by bisection on the shift at which the
/// Cholesky factorization of `k - t I` stops succeeding (Gershgorin bound to
/// smallest diagonal), then polished by inverse iteration with the shift just
/// below the bracket, started from the normalized all-ones vector. Fully
/// deterministic.
pub fn smallest_eigenvalue(k: &DMatrix<f64>) -> f64 {
    smallest_eigenpair(k).0
}

/// [`smallest_eigenvalue`] plus the corresponding eigenvector estimate (the
/// final inverse-iteration vector; a normalized all-ones vector if the
/// iteration could not run).
pub(crate) fn smallest_eigenpair(k: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let n = k.nrows();
    if n == 0 {
        return (f64::INFINITY, DVector::zeros(0));
    }
    let mut lo = f64::INFINITY;
    let mut upper = f64::INFINITY;
    let mut scale = 0.0f64;
    for i in 0..n {
        let d = k[(i, i)];
        let radius: f64 = (0..n).filter(|&j| j != i).map(|j| k[(i, j)].abs()).sum();
        lo = lo.min(d - radius);
        upper = upper.min(d);
        scale = scale.max(d.abs() + radius);
    }
    if scale == 0.0 {
        return (0.0, DVector::from_element(n, 1.0 / (n as f64).sqrt()));
    }
    let width_target = 1e-12 * scale;
    let mut lo = lo - width_target;
    let mut hi = upper + width_target;
    while hi - lo > width_target {
        let mid = 0.5 * (lo + hi);
        let mut shifted = k.clone();
        for i in 0..n {
            shifted[(i, i)] -= mid;
        }
        if shifted.cholesky().is_some() {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let bisected = 0.5 * (lo + hi);
    let sigma = lo - width_target;
    let mut shifted = k.clone();
    for i in 0..n {
        shifted[(i, i)] -= sigma;
    }
    let lu = shifted.lu();
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut mu = bisected;
    for _ in 0..100 {
        let Some(w) = lu.solve(&v) else { break };
        let norm = w.norm();
        if !norm.is_finite() || norm == 0.0 {
            break;
        }
        v = w / norm;
        let next = v.dot(&(k * &v));
        if (next - mu).abs() <= 1e-14 * scale {
            mu = next;
            break;
        }
        mu = next;
    }
    // The refinement must stay inside the bracket; if the start vector had
    // no overlap with the lowest mode the bisection value is still correct.
    if mu.is_finite() && mu >= lo - 2.0 * width_target && mu <= hi + 2.0 * width_target {
        (mu, v)
    } else {
        (bisected, v)
    }
}

/// Sign of the determinant of `k` from the LU factorization diagonal,
/// without evaluating the (over/underflowing) determinant itself.
pub fn determinant_sign(k: &DMatrix<f64>) -> i8 {
    let n = k.nrows();
    if n == 0 {
        return 1;
    }
    let scale = k.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if scale == 0.0 {
        return 0;
    }
    let lu = k.clone().lu();
    let mut sign: i8 = if lu.p().len() % 2 == 0 { 1 } else { -1 };
    let u = lu.u();
    for i in 0..n {
        let d = u[(i, i)];
        if d.abs() <= 1e-14 * scale {
            return 0;
        }
        if d < 0.0 {
            sign = -sign;
        }
    }
    sign
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        dof_index, BoundaryConditions, DofKind, ElementDef, LoadCase, Material, NodeGeom,
        PointForce,
    };
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn cantilever(n: usize, length: f64) -> Model {
        let nodes = (0..=n)
            .map(|i| NodeGeom {
                id: i,
                x: length * i as f64 / n as f64,
                y: 0.0,
            })
            .collect();
        let connectivity = (0..n)
            .map(|i| ElementDef {
                node_a: i,
                node_b: i + 1,
                material: "m".into(),
            })
            .collect();
        let mut materials = BTreeMap::new();
        materials.insert(
            "m".to_string(),
            Material {
                youngs_modulus: 1e4,
                area: 1.0,
                second_moment: 1e-4,
                density: 0.0,
            },
        );
        let bcs = BoundaryConditions {
            fixed: vec![(0, DofKind::U), (0, DofKind::W), (0, DofKind::Theta)],
            prescribed: vec![],
        };
        let load = LoadCase {
            forces: vec![PointForce {
                node: n,
                dof: DofKind::W,
                value: 1.0,
            }],
            ..LoadCase::default()
        };
        Model::new(nodes, connectivity, materials, bcs, load).unwrap()
    }

    #[test]
    fn rest_state_converges_in_zero_iterations() {
        let model = cantilever(4, 1.0);
        let q0 = DVector::zeros(model.dof_count());
        let settings = ContinuationSettings::default();
        let (state, iterations) = solve_at_load(&model, 0.0, &q0, &settings).unwrap();
        assert_eq!(iterations, 0);
        assert_eq!(state.q, q0);
    }

    #[test]
    fn tiny_tip_load_matches_linear_theory() {
        // P L^3 / (3 E I) with a load small enough to stay linear
        let model = cantilever(8, 1.0);
        let p = 1e-4;
        let settings = ContinuationSettings::default();
        let (state, _) =
            solve_at_load(&model, p, &DVector::zeros(model.dof_count()), &settings).unwrap();
        let tip = state.q[dof_index(8, DofKind::W)];
        let expected = p / 3.0; // L = 1, EI = 1
        assert_relative_eq!(tip, expected, max_relative = 1e-4);
    }

    #[test]
    fn load_control_reaches_target_exactly_and_is_deterministic() {
        let model = cantilever(8, 1.0);
        let settings = ContinuationSettings {
            method: ContinuationMethod::LoadControl,
            initial_step: 0.3,
            min_step: 1e-8,
            max_step: 0.4,
            target_lambda: Some(1.0),
            ..ContinuationSettings::default()
        };
        let path = continue_path(&model, &settings).unwrap();
        assert_eq!(path.termination, Termination::TargetReached);
        assert_eq!(path.points.last().unwrap().state.lambda, 1.0);
        for pair in path.points.windows(2) {
            assert!(pair[0].state.lambda < pair[1].state.lambda);
        }
        let again = continue_path(&model, &settings).unwrap();
        assert_eq!(path, again);
    }

    #[test]
    fn strain_energy_matches_external_work_along_path() {
        // gravity-off load control: U at the end equals the trapezoidal work
        // integral of lambda * f_ref . dq within 1%
        let model = cantilever(8, 1.0);
        let settings = ContinuationSettings {
            method: ContinuationMethod::LoadControl,
            initial_step: 0.02,
            min_step: 1e-10,
            max_step: 0.02,
            max_steps: 200,
            target_lambda: Some(1.0),
            ..ContinuationSettings::default()
        };
        let path = continue_path(&model, &settings).unwrap();
        let fref = reference_force(&model);
        let mut work = 0.0;
        for pair in path.points.windows(2) {
            let dq = &pair[1].state.q - &pair[0].state.q;
            let mean_lambda = 0.5 * (pair[0].state.lambda + pair[1].state.lambda);
            work += mean_lambda * fref.dot(&dq);
        }
        let energy = path.points.last().unwrap().energy;
        assert_relative_eq!(energy, work, max_relative = 0.01);
    }

    #[test]
    fn eigen_and_det_sign_match_dense_eigendecomposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [1usize, 2, 5, 12, 30] {
            for _ in 0..8 {
                let raw = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
                let mut sym = &raw + raw.transpose();
                // occasionally spread the spectrum strongly
                if rng.gen_bool(0.5) {
                    for i in 0..n {
                        sym[(i, i)] += rng.gen_range(-2.0..8.0) * 10f64.powi(rng.gen_range(0..6));
                    }
                }
                let eig = sym.clone().symmetric_eigen();
                let expected = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
                let got = smallest_eigenvalue(&sym);
                let scale = eig.eigenvalues.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
                assert!(
                    (got - expected).abs() <= 1e-9 * scale.max(1.0),
                    "n={n}: got {got}, expected {expected}"
                );
                let det: f64 = eig.eigenvalues.iter().product();
                let expected_sign = if det == 0.0 { 0 } else { det.signum() as i8 };
                assert_eq!(determinant_sign(&sym), expected_sign);
            }
        }
    }

    #[test]
    fn settings_validation_rejects_bad_steps() {
        let settings = ContinuationSettings {
            initial_step: 1.0,
            max_step: 0.5,
            ..ContinuationSettings::default()
        };
        assert!(matches!(
            settings.check(),
            Err(SolveError::InvalidSettings(_))
        ));
        let settings = ContinuationSettings {
            method: ContinuationMethod::DisplacementControl,
            control_dof: None,
            ..ContinuationSettings::default()
        };
        assert!(settings.check().is_err());
    }

    #[test]
    fn zero_reference_load_gives_single_point_path() {
        let mut model = cantilever(4, 1.0);
        model.load.forces.clear();
        model.load.gravity_enabled = true;
        model.materials[0].1.density = 10.0;
        let settings = ContinuationSettings::default();
        let path = two_step_protocol(&model, &settings).unwrap();
        assert_eq!(path.points.len(), 1);
        assert_eq!(path.termination, Termination::TargetReached);
        assert_eq!(path.preload_points, 1);
    }
}
