//! Post-processing and search on top of the path solver: limit points,
//! stability classification, discovery of the second stable state, the
//! double-well energy landscape, and the snap-through trigger force.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::corotational::{
    assemble, gravity_force, internal_forces_full, reference_force, total_strain_energy,
    AssembleError,
};
use crate::model::{DofMap, Model, ModelError};
use crate::solver::{
    continue_path_until, smallest_eigenpair, solve_at_load, solve_constrained,
    ContinuationSettings, EquilibriumPath, PathPoint, SolveError, State, Termination,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitPointKind {
    Maximum,
    Minimum,
}

/// A fold of the equilibrium path: the load factor reverses direction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitPoint {
    /// Path segment `(i, i+1)` containing the interpolated fold.
    pub interval: (usize, usize),
    /// Load factor at the fold, from a quadratic fit through the three
    /// points nearest the discrete reversal.
    pub lambda_star: f64,
    pub kind: LimitPointKind,
}

/// An unloaded equilibrium together with its stability verdict. For these
/// polished zero-load states `stable` means the smallest constrained-tangent
/// eigenvalue is strictly positive; the noise-guarded threshold of
/// [`classify_stability`] applies only to arbitrary mid-path states.
#[derive(Debug, Clone, PartialEq)]
pub struct StableState {
    pub state: State,
    pub energy: f64,
    pub min_eigenvalue: f64,
    pub stable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stability {
    pub stable: bool,
    pub min_eigenvalue: f64,
}

/// One point of the single-coordinate energy landscape. `energy` and
/// `reaction` are `None` when the constrained solve did not converge.
#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeSample {
    pub control_displacement: f64,
    pub energy: Option<f64>,
    pub reaction: Option<f64>,
}

#[derive(Debug, Error)]
pub enum BistabilityError {
    #[error("{0}")]
    Invalid(String),
    #[error("state is not an equilibrium: residual {residual:.3e} exceeds {allowed:.3e}")]
    NotEquilibrium { residual: f64, allowed: f64 },
    #[error("monostable: {0}")]
    Monostable(String),
    #[error("search ended ({0:?}) before the far branch returned to zero load")]
    Incomplete(Termination),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Assembly(#[from] AssembleError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Finds every reversal of the load factor along a traced path. Returns one
/// entry per sign change of the discrete dlambda sequence (zero increments
/// carry the previous sign); an empty list for monotone or short paths.
pub fn find_limit_points(points: &[PathPoint]) -> Vec<LimitPoint> {
    if points.len() < 3 {
        return Vec::new();
    }
    // Arc-length-like abscissa for the quadratic fit.
    let mut s = Vec::with_capacity(points.len());
    s.push(0.0);
    for pair in points.windows(2) {
        let dq = (&pair[1].state.q - &pair[0].state.q).norm();
        let dl = pair[1].state.lambda - pair[0].state.lambda;
        s.push(s.last().unwrap() + dq.hypot(dl));
    }
    let lambda = |i: usize| points[i].state.lambda;

    let mut out = Vec::new();
    let mut prev: Option<(f64, usize)> = None; // (sign, left index of increment)
    for i in 0..points.len() - 1 {
        let d = lambda(i + 1) - lambda(i);
        if d == 0.0 {
            continue;
        }
        let sign = d.signum();
        if let Some((prev_sign, prev_left)) = prev {
            if sign != prev_sign {
                // Extremal sample is point i; fit through the previous
                // increment's left point and both ends of this increment.
                let (a, b, c) = (prev_left, i, i + 1);
                let kind = if prev_sign > 0.0 {
                    LimitPointKind::Maximum
                } else {
                    LimitPointKind::Minimum
                };
                out.push(fit_limit_point(&s, points, a, b, c, kind));
            }
        }
        prev = Some((sign, i));
    }
    out
}

/// Quadratic fit of lambda(s) through three samples; the vertex gives the
/// fold position and load factor.
fn fit_limit_point(
    s: &[f64],
    points: &[PathPoint],
    a: usize,
    b: usize,
    c: usize,
    kind: LimitPointKind,
) -> LimitPoint {
    let (x0, x1, x2) = (s[a], s[b], s[c]);
    let (y0, y1, y2) = (
        points[a].state.lambda,
        points[b].state.lambda,
        points[c].state.lambda,
    );
    let c1 = (y1 - y0) / (x1 - x0);
    let c2 = ((y2 - y1) / (x2 - x1) - c1) / (x2 - x0);
    if c2 == 0.0 || !c2.is_finite() {
        return LimitPoint {
            interval: (b.saturating_sub(1), b),
            lambda_star: y1,
            kind,
        };
    }
    let x_star = 0.5 * (x0 + x1) - c1 / (2.0 * c2);
    let x_star = x_star.clamp(x0, x2);
    let lambda_star = y0 + c1 * (x_star - x0) + c2 * (x_star - x0) * (x_star - x1);
    let interval = if x_star <= x1 {
        (b.saturating_sub(1), b)
    } else {
        (b, b + 1)
    };
    LimitPoint {
        interval,
        lambda_star,
        kind,
    }
}

/// Scale below which a constrained-tangent eigenvalue counts as zero:
/// 1e-8 of the largest diagonal of the rest tangent.
pub fn stability_threshold(model: &Model) -> Result<f64, BistabilityError> {
    let map = DofMap::new(model)?;
    let mut q = DVector::zeros(model.dof_count());
    map.apply(&mut q);
    let sys = assemble(model, &map, &q, 0.0)?;
    let scale = (0..sys.tangent.nrows()).fold(0.0f64, |acc, i| acc.max(sys.tangent[(i, i)].abs()));
    Ok(1e-8 * scale)
}

/// Verifies that `state` is an equilibrium and classifies it by the smallest
/// eigenvalue of the constrained tangent against the model's stability
/// threshold.
pub fn classify_stability(
    model: &Model,
    state: &State,
    settings: &ContinuationSettings,
) -> Result<Stability, BistabilityError> {
    let map = DofMap::new(model)?;
    let fref_norm = map.reduce(&reference_force(model)).norm();
    let sys = assemble(model, &map, &state.q, state.lambda)?;
    let residual = sys.residual.norm();
    let allowed = settings.newton_tol * (state.lambda.abs() * fref_norm + 1.0);
    if !(residual <= allowed) {
        return Err(BistabilityError::NotEquilibrium { residual, allowed });
    }
    let (min_eigenvalue, _) = smallest_eigenpair(&sys.tangent);
    Ok(Stability {
        stable: min_eigenvalue > stability_threshold(model)?,
        min_eigenvalue,
    })
}

/// Indices `m` of every pair `(m-1, m)` whose load factors straddle zero
/// strictly after the second dlambda reversal — the candidate points where
/// the far branch comes back through zero load.
fn far_branch_zero_crossings(points: &[PathPoint]) -> Vec<usize> {
    let mut reversals = 0usize;
    let mut second_reversal = None;
    let mut prev_sign = 0.0f64;
    for i in 0..points.len().saturating_sub(1) {
        let d = points[i + 1].state.lambda - points[i].state.lambda;
        if d == 0.0 {
            continue;
        }
        let sign = d.signum();
        if prev_sign != 0.0 && sign != prev_sign {
            reversals += 1;
            if reversals == 2 {
                second_reversal = Some(i);
            }
        }
        prev_sign = sign;
    }
    let Some(second) = second_reversal else {
        return Vec::new();
    };
    (second + 1..points.len())
        .filter(|&m| {
            let a = points[m - 1].state.lambda;
            let b = points[m].state.lambda;
            a * b <= 0.0 && (a != 0.0 || b != 0.0)
        })
        .collect()
}

enum CrossingOutcome {
    /// Polished back into the starting well: the branch closed a loop home.
    FirstWell,
    Stable(StableState),
    /// Unstable equilibrium (a hilltop crossing) or failed polish; keep
    /// tracing.
    Rejected,
}

/// Newton-polishes the zero-load state interpolated across crossing `m` and
/// classifies where it landed.
fn examine_crossing(
    model: &Model,
    settings: &ContinuationSettings,
    points: &[PathPoint],
    m: usize,
) -> CrossingOutcome {
    let (before, after) = (&points[m - 1].state, &points[m].state);
    let denom = before.lambda - after.lambda;
    let t = if denom == 0.0 {
        0.0
    } else {
        before.lambda / denom
    };
    let guess = &before.q + (&after.q - &before.q) * t;
    let Ok((state, _)) = solve_at_load(model, 0.0, &guess, settings) else {
        return CrossingOutcome::Rejected;
    };
    if (&state.q - &points[0].state.q).norm() < 1e-6 * model.geometry_scale() {
        return CrossingOutcome::FirstWell;
    }
    let Ok(map) = DofMap::new(model) else {
        return CrossingOutcome::Rejected;
    };
    let Ok(sys) = assemble(model, &map, &state.q, 0.0) else {
        return CrossingOutcome::Rejected;
    };
    let (min_eigenvalue, _) = smallest_eigenpair(&sys.tangent);
    if min_eigenvalue <= 0.0 {
        return CrossingOutcome::Rejected;
    }
    let Ok(energy) = total_strain_energy(model, &state.q) else {
        return CrossingOutcome::Rejected;
    };
    CrossingOutcome::Stable(StableState {
        state,
        energy,
        min_eigenvalue,
        stable: true,
    })
}

/// Traces the path through both folds and onwards, polishing the unloaded
/// state at every zero-load crossing of the far branch until one lands in a
/// genuinely distinct minimum. Crossings that polish onto an unstable
/// intermediate equilibrium are skipped and the trace continues — paths of
/// deeper arches can wind through several unstable crossings before
/// reaching the inverted well.
fn search_second_state(
    model: &Model,
    settings: &ContinuationSettings,
) -> Result<(EquilibriumPath, Option<StableState>), BistabilityError> {
    let mut verdict = None;
    let mut examined = 0usize;
    let path = continue_path_until(model, settings, |points| {
        let crossings = far_branch_zero_crossings(points);
        while examined < crossings.len() {
            let m = crossings[examined];
            examined += 1;
            match examine_crossing(model, settings, points, m) {
                CrossingOutcome::FirstWell => {
                    verdict = Some(None);
                    return true;
                }
                CrossingOutcome::Stable(s) => {
                    verdict = Some(Some(s));
                    return true;
                }
                CrossingOutcome::Rejected => {}
            }
        }
        false
    })?;
    if let Some(result) = verdict {
        return Ok((path, result));
    }
    // No crossing settled the question. Without any fold the model is
    // monostable; with folds but a completed run the far branch never comes
    // back to zero load in a new well — unloading slides back home.
    if find_limit_points(&path.points).is_empty() || path.termination == Termination::TargetReached
    {
        return Ok((path, None));
    }
    Err(BistabilityError::Incomplete(path.termination))
}

/// Arc-length continues past both limit points and back to zero load, then
/// Newton-polishes the unloaded far-branch equilibrium. `Ok(None)` means
/// monostable: no fold, or the far branch never settles into a well distinct
/// from the starting one (state distance < 1e-6 x model scale).
pub fn find_second_stable_state(
    model: &Model,
    settings: &ContinuationSettings,
) -> Result<Option<StableState>, BistabilityError> {
    search_second_state(model, settings).map(|(_, second)| second)
}

/// Sweeps one dof over `range`, solving the constrained equilibrium at zero
/// load for each sample, and reports the strain energy plus the conjugate
/// reaction force at the control dof. Non-convergence flags the sample
/// instead of aborting the sweep.
pub fn energy_landscape(
    model: &Model,
    control_dof: usize,
    range: (f64, f64),
    samples: usize,
    settings: &ContinuationSettings,
) -> Result<Vec<LandscapeSample>, BistabilityError> {
    if samples < 2 {
        return Err(BistabilityError::Invalid(
            "energy landscape needs at least 2 samples".into(),
        ));
    }
    let gravity = gravity_force(model);
    let mut out = Vec::with_capacity(samples);
    let mut warm = DVector::zeros(model.dof_count());
    for k in 0..samples {
        let d = range.0 + (range.1 - range.0) * k as f64 / (samples - 1) as f64;
        let map = DofMap::with_prescribed(model, &[(control_dof, d)])?;
        match solve_constrained(model, &map, 0.0, &warm, settings) {
            Ok((state, _)) => {
                let energy = total_strain_energy(model, &state.q)?;
                let reaction = internal_forces_full(model, &state.q)?[control_dof]
                    - gravity[control_dof];
                warm = state.q;
                out.push(LandscapeSample {
                    control_displacement: d,
                    energy: Some(energy),
                    reaction: Some(reaction),
                });
            }
            Err(_) => out.push(LandscapeSample {
                control_displacement: d,
                energy: None,
                reaction: None,
            }),
        }
    }
    Ok(out)
}

/// Minimum quasi-static push force that commits the structure to snap
/// through: the first limit point's load factor times the reference load
/// magnitude. The fold is located on a traced path and then polished to
/// machine precision by a bordered fold solve.
pub fn trigger_force(
    model: &Model,
    settings: &ContinuationSettings,
) -> Result<f64, BistabilityError> {
    let fref = reference_force(model);
    if fref.norm() == 0.0 {
        return Err(BistabilityError::Invalid("zero reference load".into()));
    }
    let path = continue_path_until(model, settings, |points| {
        !find_limit_points(points).is_empty()
    })?;
    let limit_points = find_limit_points(&path.points);
    trigger_from_limit_points(model, settings, &path.points, &limit_points)
}

fn trigger_from_limit_points(
    model: &Model,
    settings: &ContinuationSettings,
    points: &[PathPoint],
    limit_points: &[LimitPoint],
) -> Result<f64, BistabilityError> {
    let Some(first) = limit_points.first() else {
        return Err(BistabilityError::Monostable("no limit point".into()));
    };
    if first.kind != LimitPointKind::Maximum || first.lambda_star <= 0.0 {
        return Err(BistabilityError::Monostable(
            "first limit point is not a load maximum at positive load".into(),
        ));
    }
    let (a, b) = (&points[first.interval.0].state, &points[first.interval.1].state);
    let lambda_star = match polish_fold(model, a, b, settings) {
        Some(polished)
            if polished > 0.0 && (polished / first.lambda_star - 1.0).abs() < 0.25 =>
        {
            polished
        }
        _ => first.lambda_star,
    };
    Ok(lambda_star * reference_force(model).norm())
}

/// Newton on the bordered fold system: equilibrium, a null vector of the
/// tangent, and a fixed normalization. The null vector is seeded with the
/// path tangent across the bracketing segment — at a fold that is the
/// buckling mode, and the fixed normalization keeps the iteration from
/// drifting to a nearby bifurcation of a different (e.g. asymmetric) mode.
/// Returns the fold load factor, or `None` when the iteration fails —
/// callers fall back to the interpolated value.
fn polish_fold(
    model: &Model,
    a: &State,
    b: &State,
    settings: &ContinuationSettings,
) -> Option<f64> {
    let map = DofMap::new(model).ok()?;
    let fref = map.reduce(&reference_force(model));
    let n = fref.len();
    if n == 0 {
        return None;
    }
    let fref_norm = fref.norm();

    let anchor = if a.lambda >= b.lambda { a } else { b };
    let mut q = anchor.q.clone();
    let mut lambda = anchor.lambda;
    let mut v = map.reduce(&(&b.q - &a.q));
    let norm = v.norm();
    if norm == 0.0 {
        return None;
    }
    v /= norm;
    let normalizer = v.clone();
    let mut lambda_settled = false;

    for _ in 0..30 {
        let sys = assemble(model, &map, &q, lambda).ok()?;
        let tangent = &sys.tangent;
        let kv = tangent * &v;

        // Bordered Jacobian: rows = [equilibrium, null-vector, normalization].
        let mut jac = DMatrix::zeros(2 * n + 1, 2 * n + 1);
        jac.view_mut((0, 0), (n, n)).copy_from(tangent);
        for i in 0..n {
            jac[(i, 2 * n)] = -fref[i];
        }
        // d(K v)/dq by central differences on the tangent.
        for j in 0..n {
            let global = map.global_of_free(j);
            let h = 1e-7 * (1.0 + q[global].abs());
            let mut qp = q.clone();
            qp[global] += h;
            let mut qm = q.clone();
            qm[global] -= h;
            let kp = assemble(model, &map, &qp, lambda).ok()?.tangent;
            let km = assemble(model, &map, &qm, lambda).ok()?.tangent;
            let col = (kp * &v - km * &v) / (2.0 * h);
            for i in 0..n {
                jac[(n + i, j)] = col[i];
            }
        }
        jac.view_mut((n, n), (n, n)).copy_from(tangent);
        for j in 0..n {
            jac[(2 * n, n + j)] = normalizer[j];
        }

        let mut rhs = DVector::zeros(2 * n + 1);
        for i in 0..n {
            rhs[i] = -sys.residual[i];
            rhs[n + i] = -kv[i];
        }
        rhs[2 * n] = 1.0 - normalizer.dot(&v);

        let delta = jac.lu().solve(&rhs)?;
        if !delta.iter().all(|x| x.is_finite()) {
            return None;
        }
        let dq = delta.rows(0, n).into_owned();
        let dv = delta.rows(n, n).into_owned();
        let d_lambda = delta[2 * n];

        map.add_free(&mut q, &dq);
        v += dv;
        lambda += d_lambda;

        // The update noise floor is set by the differenced tangent, so only
        // the load factor converges to machine precision; require it twice
        // in a row to rule out a lucky small step.
        if d_lambda.abs() <= 1e-12 * (1.0 + lambda.abs()) {
            if lambda_settled {
                // Final sanity: the polished point must still be an equilibrium.
                let check = assemble(model, &map, &q, lambda).ok()?;
                let allowed = 10.0 * settings.newton_tol * (lambda.abs() * fref_norm + 1.0);
                return (check.residual.norm() <= allowed).then_some(lambda);
            }
            lambda_settled = true;
        } else {
            lambda_settled = false;
        }
    }
    None
}

/// Everything the bistability report needs from a single traced path: folds,
/// both unloaded states, the energy barrier, and the trigger force.
#[derive(Debug, Clone)]
pub struct BistabilityAnalysis {
    pub bistable: bool,
    pub limit_points: Vec<LimitPoint>,
    pub first_state: StableState,
    pub second_state: Option<StableState>,
    /// Interior path-energy maximum above the first well; `None` when
    /// monostable.
    pub energy_barrier: Option<f64>,
    pub trigger_force: Option<f64>,
    pub path: EquilibriumPath,
}

pub fn analyze(
    model: &Model,
    settings: &ContinuationSettings,
) -> Result<BistabilityAnalysis, BistabilityError> {
    if reference_force(model).norm() == 0.0 {
        return Err(BistabilityError::Invalid(
            "bistability analysis needs a reference load to trace against".into(),
        ));
    }
    let (path, second_state) = search_second_state(model, settings)?;
    let limit_points = find_limit_points(&path.points);

    let first_point = &path.points[0];
    let first_state = StableState {
        state: first_point.state.clone(),
        energy: first_point.energy,
        min_eigenvalue: first_point.min_eigenvalue,
        stable: first_point.min_eigenvalue > 0.0,
    };

    // The trace stops at the crossing that produced the second state, so the
    // highest energy seen is the ridge separating the two wells.
    let energy_barrier = second_state.as_ref().map(|_| {
        let peak = path
            .points
            .iter()
            .map(|p| p.energy)
            .fold(f64::NEG_INFINITY, f64::max);
        peak - first_state.energy
    });
    let trigger_force = match trigger_from_limit_points(model, settings, &path.points, &limit_points)
    {
        Ok(f) => Some(f),
        Err(BistabilityError::Monostable(_)) => None,
        Err(e) => return Err(e),
    };

    Ok(BistabilityAnalysis {
        bistable: second_state.is_some(),
        limit_points,
        first_state,
        second_state,
        energy_barrier,
        trigger_force,
        path,
    })
}
