//! Checks a recovered policy against the exact moments of the true system.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::Result;
use crate::linalg;
use crate::model::{HalfspaceConstraint, ProblemInstance};
use crate::moments::{self, MomentTrajectory, Policy};
use crate::scalar::Scalar;
use crate::sdp::solution::RelaxedSolution;
use crate::tighten::cantelli_residual;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// Absolute, on `‖x̄_N − μ_F‖∞`.
    pub mean: f64,
    /// Relative PSD slack: a margin passes when `≥ −psd·(1 + ‖M‖₂)`.
    pub psd: f64,
    /// Absolute, on Cantelli residuals.
    pub residual: f64,
    /// Relative slack of the objective upper bound.
    pub objective: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            mean: 1e-6,
            psd: 1e-7,
            residual: 1e-8,
            objective: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate<T: Scalar> {
    pub exact_traj: MomentTrajectory<T>,
    pub objective_value: f64,
    pub exact_cost: f64,
    pub terminal_mean_error: f64,
    /// `λ_min(Σ_F_eff − Σ_x[N])`
    pub terminal_cov_margin: f64,
    /// `None` when there are no constraints of that kind.
    pub worst_state_residual: Option<f64>,
    pub worst_input_residual: Option<f64>,
    /// `min_k λ_min(Σ̄_x[k] − Σ_x[k])`
    pub dominance_margin: f64,
    /// Step attaining [`Self::dominance_margin`].
    pub dominance_step: usize,
    /// `J̄* − exact cost`; nonnegative when the relaxation upper-bounds.
    pub objective_gap: f64,
    pub terminal_cov_ok: bool,
    pub dominance_ok: bool,
    pub objective_bound_ok: bool,
    pub pass: bool,
    pub tolerances: Tolerances,
}

/// JSON report of a [`Certificate`]; the trajectory is written separately.
#[derive(Debug, Clone, Serialize)]
pub struct CertificateDoc {
    pub objective_value: f64,
    pub exact_cost: f64,
    pub terminal_mean_error: f64,
    pub terminal_cov_margin: f64,
    pub worst_state_residual: Option<f64>,
    pub worst_input_residual: Option<f64>,
    pub dominance_margin: f64,
    pub dominance_step: usize,
    pub objective_gap: f64,
    pub terminal_cov_ok: bool,
    pub dominance_ok: bool,
    pub objective_bound_ok: bool,
    pub pass: bool,
    pub tolerances: Tolerances,
}

impl<T: Scalar> Certificate<T> {
    pub fn to_doc(&self) -> CertificateDoc {
        CertificateDoc {
            objective_value: self.objective_value,
            exact_cost: self.exact_cost,
            terminal_mean_error: self.terminal_mean_error,
            terminal_cov_margin: self.terminal_cov_margin,
            worst_state_residual: self.worst_state_residual,
            worst_input_residual: self.worst_input_residual,
            dominance_margin: self.dominance_margin,
            dominance_step: self.dominance_step,
            objective_gap: self.objective_gap,
            terminal_cov_ok: self.terminal_cov_ok,
            dominance_ok: self.dominance_ok,
            objective_bound_ok: self.objective_bound_ok,
            pass: self.pass,
            tolerances: self.tolerances,
        }
    }

    /// Largest violation over the pass conditions, zero when all hold.
    pub fn max_violation(&self) -> f64 {
        [
            self.terminal_mean_error - self.tolerances.mean,
            -self.terminal_cov_margin,
            self.worst_state_residual.unwrap_or(0.0),
            self.worst_input_residual.unwrap_or(0.0),
            -self.dominance_margin,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(linalg::symmetrize(m))
        .eigenvalues
        .iter()
        .fold(0.0, |a: f64, &b| a.max(b.abs()))
}

fn worst_residual<T: Scalar>(
    constraints: &[HalfspaceConstraint<T>],
    means: &[nalgebra::DVector<T>],
    covs: &[DMatrix<T>],
) -> Result<Option<f64>> {
    let mut worst: Option<f64> = None;
    for con in constraints {
        for (mean, cov) in means.iter().zip(covs) {
            let r = cantelli_residual(con, mean, cov)?.as_f64();
            worst = Some(worst.map_or(r, |w| w.max(r)));
        }
    }
    Ok(worst)
}

pub fn certify<T: Scalar>(
    instance: &ProblemInstance<T>,
    policy: &Policy<T>,
    sol: &RelaxedSolution<T>,
) -> Result<Certificate<T>> {
    certify_with(instance, policy, sol, Tolerances::default())
}

/// Propagates `policy` exactly on `instance` and tests every condition the
/// relaxation is supposed to guarantee.
pub fn certify_with<T: Scalar>(
    instance: &ProblemInstance<T>,
    policy: &Policy<T>,
    sol: &RelaxedSolution<T>,
    tolerances: Tolerances,
) -> Result<Certificate<T>> {
    let n = instance.horizon();
    let b = &instance.boundary;
    let traj = moments::propagate(&instance.model, policy, &b.mu_i, &b.sigma_i)?;
    let to64 = |m: &DMatrix<T>| m.map(|v| v.as_f64());

    let terminal_mean_error = (&traj.x_bar[n] - &b.mu_f)
        .iter()
        .fold(0.0, |a: f64, v| a.max(v.as_f64().abs()));
    let sigma_f = to64(&instance.sigma_f_effective());
    let terminal_gap = &sigma_f - to64(&traj.sigma_x[n]);
    let terminal_cov_margin = linalg::min_eigenvalue(&terminal_gap);
    let terminal_cov_ok = terminal_cov_margin >= -tolerances.psd * (1.0 + spectral_norm(&sigma_f));

    let worst_state_residual =
        worst_residual(&instance.chance.state_constraints, &traj.x_bar[..n], &traj.sigma_x[..n])?;
    let worst_input_residual = worst_residual(&instance.chance.input_constraints, &traj.u_bar, &traj.sigma_u)?;

    let mut dominance_margin = f64::INFINITY;
    let mut dominance_step = 0;
    let mut dominance_ok = true;
    for (k, (bar, exact)) in sol.sigma_bar_x.iter().zip(&traj.sigma_x).enumerate() {
        let bar = to64(bar);
        let margin = linalg::min_eigenvalue(&(&bar - to64(exact)));
        if margin < dominance_margin {
            dominance_margin = margin;
            dominance_step = k;
        }
        dominance_ok &= margin >= -tolerances.psd * (1.0 + spectral_norm(&bar));
    }

    let exact_cost = moments::exact_cost(&traj, &instance.cost)?.as_f64();
    let objective_value = sol.objective_value.as_f64();
    let objective_gap = objective_value - exact_cost;
    let objective_bound_ok = objective_gap >= -tolerances.objective * (1.0 + objective_value.abs());

    let residual_ok = |r: Option<f64>| r.is_none_or(|v| v <= tolerances.residual);
    let pass = terminal_mean_error <= tolerances.mean
        && terminal_cov_ok
        && residual_ok(worst_state_residual)
        && residual_ok(worst_input_residual)
        && dominance_ok;

    Ok(Certificate {
        exact_traj: traj,
        objective_value,
        exact_cost,
        terminal_mean_error,
        terminal_cov_margin,
        worst_state_residual,
        worst_input_residual,
        dominance_margin,
        dominance_step,
        objective_gap,
        terminal_cov_ok,
        dominance_ok,
        objective_bound_ok,
        pass,
        tolerances,
    })
}
