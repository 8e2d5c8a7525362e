//! Solving the relaxed program, reading back the moment variables, and
//! recovering the feedback gains.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::moments::Policy;
use crate::scalar::Scalar;
use crate::sdp::assemble::{name_c, name_sigma_j, name_sigma_u, name_sigma_ux, name_sigma_x, name_u_bar, name_x_bar};
use crate::sdp::program::{triangle_index, ConicProgram, ProgramResiduals};
use crate::solver::{SolveInfo, SolveStatus, SolverBackend, SolverSettings};

/// Relative jitter added once to a near-singular `Σ̄_x[k]` before
/// factorization.
pub const RECOVERY_JITTER: f64 = 1e-10;

/// Optimal point of the relaxed program, indexed by time step.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedSolution<T: Scalar> {
    pub c: Vec<DVector<T>>,
    pub sigma_bar_ux: Vec<DMatrix<T>>,
    pub sigma_bar_u: Vec<DMatrix<T>>,
    /// `k = 0..N`; entry 0 equals `Σ_I`.
    pub sigma_bar_x: Vec<DMatrix<T>>,
    /// `[j][k]`
    pub sigma_bar_j: Vec<Vec<DMatrix<T>>>,
    pub x_bar: Vec<DVector<T>>,
    pub u_bar: Vec<DVector<T>>,
    pub objective_value: T,
    pub solver: SolveInfo,
    /// Constraint violations of the returned point, re-evaluated in-tree.
    pub residuals: ProgramResiduals,
}

impl<T: Scalar> RelaxedSolution<T> {
    pub fn horizon(&self) -> usize {
        self.c.len()
    }

    pub fn to_doc(&self) -> SolutionDoc {
        let mats = |v: &[DMatrix<T>]| v.iter().map(linalg::to_rows).collect::<Vec<_>>();
        let vecs = |v: &[DVector<T>]| v.iter().map(linalg::to_list).collect::<Vec<_>>();
        SolutionDoc {
            objective_value: self.objective_value.as_f64(),
            solver_status: self.solver.status,
            solver: self.solver.clone(),
            residuals: self.residuals,
            c: vecs(&self.c),
            x_bar: vecs(&self.x_bar),
            u_bar: vecs(&self.u_bar),
            sigma_bar_x: mats(&self.sigma_bar_x),
            sigma_bar_u: mats(&self.sigma_bar_u),
            sigma_bar_ux: mats(&self.sigma_bar_ux),
            sigma_bar_j: self.sigma_bar_j.iter().map(|s| mats(s)).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolutionDoc {
    pub objective_value: f64,
    pub solver_status: SolveStatus,
    pub solver: SolveInfo,
    pub residuals: ProgramResiduals,
    pub c: Vec<Vec<f64>>,
    pub x_bar: Vec<Vec<f64>>,
    pub u_bar: Vec<Vec<f64>>,
    #[serde(rename = "Sigma_bar_x")]
    pub sigma_bar_x: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "Sigma_bar_u")]
    pub sigma_bar_u: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "Sigma_bar_ux")]
    pub sigma_bar_ux: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "Sigma_bar_j")]
    pub sigma_bar_j: Vec<Vec<Vec<Vec<f64>>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RelaxationOutcome<T: Scalar> {
    Optimal(Box<RelaxedSolution<T>>),
    Infeasible(SolveInfo),
    Unbounded(SolveInfo),
}

impl<T: Scalar> RelaxationOutcome<T> {
    pub fn info(&self) -> &SolveInfo {
        match self {
            RelaxationOutcome::Optimal(s) => &s.solver,
            RelaxationOutcome::Infeasible(i) | RelaxationOutcome::Unbounded(i) => i,
        }
    }

    pub fn optimal(self) -> Option<RelaxedSolution<T>> {
        match self {
            RelaxationOutcome::Optimal(s) => Some(*s),
            _ => None,
        }
    }
}

fn block<'a, T: Scalar>(p: &ConicProgram<T>, z: &'a [T], name: &str) -> Result<&'a [T]> {
    let r = p
        .range(name)
        .ok_or_else(|| Error::invariant("var_map", format!("missing range `{name}`")))?;
    Ok(&z[r.start..r.start + r.len])
}

fn sym<T: Scalar>(v: &[T], n: usize) -> DMatrix<T> {
    DMatrix::from_fn(n, n, |i, j| v[triangle_index(i, j)])
}

/// Reads the relaxed moments back out of a primal point by variable name.
pub fn extract<T: Scalar>(program: &ConicProgram<T>, z: &[T], solver: SolveInfo) -> Result<RelaxedSolution<T>> {
    if z.len() != program.num_vars {
        return Err(Error::dim("primal vector", program.num_vars, z.len()));
    }
    let n_x = block(program, z, &name_x_bar(0))?.len();
    let n_u = block(program, z, &name_c(0))?.len();
    let horizon = (0..).take_while(|&k| program.range(&name_c(k)).is_some()).count();
    let m = (0..)
        .take_while(|&j| program.range(&name_sigma_j(j, 0)).is_some())
        .count();
    let vector = |name: String| block(program, z, &name).map(|v| DVector::from_column_slice(v));

    let mut sol = RelaxedSolution {
        c: Vec::with_capacity(horizon),
        sigma_bar_ux: Vec::with_capacity(horizon),
        sigma_bar_u: Vec::with_capacity(horizon),
        sigma_bar_x: Vec::with_capacity(horizon + 1),
        sigma_bar_j: vec![Vec::with_capacity(horizon); m],
        x_bar: Vec::with_capacity(horizon + 1),
        u_bar: Vec::with_capacity(horizon),
        objective_value: program.objective_value(z),
        solver,
        residuals: program.residuals(z),
    };
    for k in 0..=horizon {
        sol.x_bar.push(vector(name_x_bar(k))?);
        sol.sigma_bar_x.push(sym(block(program, z, &name_sigma_x(k))?, n_x));
    }
    for k in 0..horizon {
        sol.c.push(vector(name_c(k))?);
        sol.u_bar.push(vector(name_u_bar(k))?);
        sol.sigma_bar_u.push(sym(block(program, z, &name_sigma_u(k))?, n_u));
        sol.sigma_bar_ux
            .push(DMatrix::from_row_slice(n_u, n_x, block(program, z, &name_sigma_ux(k))?));
        for (j, col) in sol.sigma_bar_j.iter_mut().enumerate() {
            col.push(sym(block(program, z, &name_sigma_j(j, k))?, n_x));
        }
    }
    Ok(sol)
}

/// Solves `program` and maps the backend status onto the relaxation.
///
/// Infeasible and unbounded programs are outcomes, not errors; any other
/// non-optimal status is an error carrying the backend diagnostics.
pub fn solve_relaxation<T: Scalar>(
    program: &ConicProgram<T>,
    backend: &dyn SolverBackend<T>,
    settings: &SolverSettings,
) -> Result<RelaxationOutcome<T>> {
    program.well_formed().map_err(Error::Solver)?;
    let out = backend.solve(program, settings)?;
    let info = out.info;
    match info.status {
        SolveStatus::Optimal => Ok(RelaxationOutcome::Optimal(Box::new(extract(program, &out.x, info)?))),
        SolveStatus::PrimalInfeasible => Ok(RelaxationOutcome::Infeasible(info)),
        SolveStatus::DualInfeasible => Ok(RelaxationOutcome::Unbounded(info)),
        other => Err(Error::Solver(format!(
            "{} returned {other:?} ({}) after {} iterations: primal residual {:e}, dual residual {:e}, gap {:e}",
            backend.name(),
            info.backend_status,
            info.iterations,
            info.primal_residual,
            info.dual_residual,
            info.duality_gap
        ))),
    }
}

/// `L_k = Σ̄_ux[k] Σ̄_x[k]⁻¹` via Cholesky, with `c_k` copied.
pub fn recover_policy<T: Scalar>(sol: &RelaxedSolution<T>) -> Result<Policy<T>> {
    let mut gains = Vec::with_capacity(sol.horizon());
    for k in 0..sol.horizon() {
        gains.push(recover_gain(&sol.sigma_bar_ux[k], &sol.sigma_bar_x[k], k)?);
    }
    Ok(Policy {
        gains,
        feedforward: sol.c.clone(),
    })
}

/// Solves `L Σ = S` for `L`.
pub fn recover_gain<T: Scalar>(sigma_ux: &DMatrix<T>, sigma_x: &DMatrix<T>, k: usize) -> Result<DMatrix<T>> {
    let mut s = linalg::symmetrize(sigma_x);
    let n = s.nrows();
    let trace = s.trace();
    let threshold = T::lit(RECOVERY_JITTER) * trace;
    if linalg::min_eigenvalue(&s) <= threshold {
        s += DMatrix::identity(n, n) * threshold;
    }
    let chol = Cholesky::new(s).ok_or_else(|| {
        Error::Factorization(format!(
            "Sigma_bar_x[{k}] is singular even after jitter (trace {trace})"
        ))
    })?;
    Ok(chol.solve(&sigma_ux.transpose()).transpose())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    #[test]
    fn zero_cross_covariance_gives_open_loop() {
        let l = recover_gain::<f64>(&DMatrix::zeros(2, 3), &DMatrix::identity(3, 3), 0).unwrap();
        assert_eq!(l, DMatrix::zeros(2, 3));
    }

    #[test]
    fn identity_covariance_returns_cross_term() {
        let s = m(2, 3, &[1.0, -2.0, 0.5, 3.0, 0.0, 4.0]);
        let l = recover_gain(&s, &DMatrix::identity(3, 3), 0).unwrap();
        assert!((l - s).abs().max() < 1e-15);
    }

    #[test]
    fn scalar_gain_is_a_ratio() {
        let l = recover_gain(&m(1, 1, &[2.0]), &m(1, 1, &[4.0]), 0).unwrap();
        assert!((l[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn singular_covariance_is_jittered_once() {
        let s = m(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let l = recover_gain(&m(1, 2, &[1.0, 0.0]), &s, 0).unwrap();
        assert!((l[(0, 0)] - 1.0).abs() < 1e-9);
        assert!(l[(0, 1)].abs() < 1e-9);
        assert!(matches!(
            recover_gain(&m(1, 2, &[1.0, 0.0]), &DMatrix::zeros(2, 2), 3),
            Err(Error::Factorization(_))
        ));
    }
}
