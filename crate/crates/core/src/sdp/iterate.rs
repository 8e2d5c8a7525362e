use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ProblemInstance;
use crate::moments::Policy;
use crate::scalar::Scalar;
use crate::sdp::assemble::assemble;
use crate::sdp::certify::{certify, Certificate};
use crate::sdp::solution::{recover_policy, solve_relaxation, RelaxationOutcome, RelaxedSolution};
use crate::solver::{SolveStatus, SolverBackend, SolverSettings};
use crate::tighten::LinearizationSchedule;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub status: SolveStatus,
    pub objective_value: Option<f64>,
    pub pass: Option<bool>,
    pub max_violation: Option<f64>,
    pub solver_iterations: u32,
    pub solve_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct PlanResult<T: Scalar> {
    pub solution: RelaxedSolution<T>,
    pub policy: Policy<T>,
    pub certificate: Certificate<T>,
    pub schedule: LinearizationSchedule<T>,
    pub log: Vec<IterationRecord>,
    /// 1-based iteration the result was taken from.
    pub best_iteration: usize,
    /// Set when a later iteration failed and an earlier iterate was kept.
    pub warning: Option<String>,
}

struct Iterate<T: Scalar> {
    solution: RelaxedSolution<T>,
    policy: Policy<T>,
    certificate: Certificate<T>,
    schedule: LinearizationSchedule<T>,
    iteration: usize,
}

/// `true` when `a` should replace the incumbent `b`.
fn better<T: Scalar>(a: &Iterate<T>, b: &Iterate<T>) -> bool {
    match (a.certificate.pass, b.certificate.pass) {
        (true, false) => true,
        (false, true) => false,
        (true, true) => a.certificate.objective_value < b.certificate.objective_value,
        (false, false) => a.certificate.max_violation() < b.certificate.max_violation(),
    }
}

/// Solves, then re-linearizes the tangent bounds at the previous relaxed
/// covariances until the objective settles or `max_iters` is reached.
pub fn iterate_relinearize<T: Scalar>(
    instance: &ProblemInstance<T>,
    max_iters: usize,
    rel_tol: f64,
    backend: &dyn SolverBackend<T>,
    settings: &SolverSettings,
) -> Result<PlanResult<T>> {
    if max_iters == 0 {
        return Err(Error::invariant("max_iters", "at least one iteration is required"));
    }
    let mut schedule = LinearizationSchedule::interpolated(instance)?;
    let mut log = Vec::new();
    let mut best: Option<Iterate<T>> = None;
    let mut previous: Option<f64> = None;
    let mut warning = None;

    for iteration in 1..=max_iters {
        let program = assemble(instance, &schedule)?;
        let outcome = match solve_relaxation(&program, backend, settings) {
            Ok(o) => o,
            Err(e) if best.is_some() => {
                warning = Some(format!("iteration {iteration} failed: {e}"));
                break;
            }
            Err(e) => return Err(e),
        };
        let info = outcome.info().clone();
        let solution = match outcome {
            RelaxationOutcome::Optimal(s) => *s,
            other => {
                log.push(IterationRecord {
                    iteration,
                    status: info.status,
                    objective_value: None,
                    pass: None,
                    max_violation: None,
                    solver_iterations: info.iterations,
                    solve_seconds: info.solve_seconds,
                });
                if best.is_none() {
                    let what = if matches!(other, RelaxationOutcome::Unbounded(_)) {
                        "unbounded"
                    } else {
                        "infeasible"
                    };
                    return Err(Error::Infeasible(format!(
                        "relaxation is {what} ({} after {} iterations)",
                        info.backend_status, info.iterations
                    )));
                }
                warning = Some(format!(
                    "iteration {iteration} returned {:?}; keeping iteration {}",
                    info.status,
                    best.as_ref().map_or(0, |b| b.iteration)
                ));
                break;
            }
        };
        let policy = recover_policy(&solution)?;
        let certificate = certify(instance, &policy, &solution)?;
        let objective = solution.objective_value.as_f64();
        log.push(IterationRecord {
            iteration,
            status: info.status,
            objective_value: Some(objective),
            pass: Some(certificate.pass),
            max_violation: Some(certificate.max_violation()),
            solver_iterations: info.iterations,
            solve_seconds: info.solve_seconds,
        });

        let next_schedule =
            LinearizationSchedule::from_covariances(instance, &solution.sigma_bar_x, &solution.sigma_bar_u)?;
        let current = Iterate {
            solution,
            policy,
            certificate,
            schedule: std::mem::replace(&mut schedule, next_schedule),
            iteration,
        };
        if best.as_ref().is_none_or(|b| better(&current, b)) {
            best = Some(current);
        }
        if let Some(prev) = previous {
            if (objective - prev).abs() <= rel_tol * prev.abs().max(1.0) {
                break;
            }
        }
        previous = Some(objective);
    }

    let best = best.expect("first iteration either succeeds or returns early");
    Ok(PlanResult {
        solution: best.solution,
        policy: best.policy,
        certificate: best.certificate,
        schedule: best.schedule,
        log,
        best_iteration: best.iteration,
        warning,
    })
}

/// Result of [`plan_with_fallback`].
#[derive(Debug, Clone)]
pub struct FallbackPlan<T: Scalar> {
    pub result: PlanResult<T>,
    /// Instance actually planned, including any regularization applied.
    pub instance: ProblemInstance<T>,
    /// Set when the strict terminal bound failed and `Σ_F + ε·I` was used.
    pub fallback_applied: Option<T>,
    /// Why the strict attempt was abandoned.
    pub strict_failure: Option<String>,
}

/// Plans `instance` as given; if it carries no regularization and the strict
/// attempt is infeasible or numerically unresolved, retries once with
/// `Σ_F + fallback·I`.
///
/// A relaxation that solves but pins `Σ̄_x` to a singular bound fails gain
/// recovery; that counts as unresolved too.
pub fn plan_with_fallback<T: Scalar>(
    instance: &ProblemInstance<T>,
    max_iters: usize,
    rel_tol: f64,
    fallback: Option<T>,
    backend: &dyn SolverBackend<T>,
    settings: &SolverSettings,
) -> Result<FallbackPlan<T>> {
    let strict = iterate_relinearize(instance, max_iters, rel_tol, backend, settings);
    let (eps, reason) = match (strict, fallback) {
        (Ok(result), _) => {
            return Ok(FallbackPlan {
                result,
                instance: instance.clone(),
                fallback_applied: None,
                strict_failure: None,
            })
        }
        (Err(e @ (Error::Infeasible(_) | Error::Solver(_) | Error::Factorization(_))), Some(eps))
            if instance.sigma_f_regularization == T::zero() && eps > T::zero() =>
        {
            (eps, e.to_string())
        }
        (Err(e), _) => return Err(e),
    };
    let regularized = instance.with_sigma_f_regularization(eps);
    let result = iterate_relinearize(&regularized, max_iters, rel_tol, backend, settings)?;
    Ok(FallbackPlan {
        result,
        instance: regularized,
        fallback_applied: Some(eps),
        strict_failure: Some(reason),
    })
}
