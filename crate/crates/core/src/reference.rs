//! The planar double-integrator benchmark with state- and input-dependent
//! noise, parameterized by the noise intensity `θ`.
//!
//! State ordering is `[v_x, v_y, p_x, p_y]`: the first two states are the
//! velocities driven by the inputs, the last two integrate them.

use nalgebra::{DMatrix, DVector};

use crate::model::{BoundaryMoments, ChanceSpec, CostWeights, HalfspaceConstraint, ProblemInstance, SystemModel};
use crate::scalar::Scalar;

pub const TIME_STEP: f64 = 0.1;
pub const HORIZON: usize = 50;
/// Noise intensities of the benchmark sweep.
pub const THETAS: [f64; 3] = [0.1, 0.5, 1.0];
/// Terminal-covariance regularization used when the rank-deficient `Σ_F`
/// cannot be met exactly.
pub const SIGMA_F_FALLBACK: f64 = 1e-4;

fn mat<T: Scalar>(rows: usize, cols: usize, v: &[f64]) -> DMatrix<T> {
    DMatrix::from_row_slice(rows, cols, &v.iter().map(|&x| T::lit(x)).collect::<Vec<_>>())
}

fn vec<T: Scalar>(v: &[f64]) -> DVector<T> {
    DVector::from_iterator(v.len(), v.iter().map(|&x| T::lit(x)))
}

pub fn double_integrator_model<T: Scalar>(theta: f64, dt: f64) -> SystemModel<T> {
    let s = theta * dt;
    let ad = 0.1 * dt;
    SystemModel {
        a_bar: mat(
            4,
            4,
            &[
                1.0, 0.0, 0.0, 0.0, //
                0.0, 1.0, 0.0, 0.0, //
                dt, 0.0, 1.0, 0.0, //
                0.0, dt, 0.0, 1.0,
            ],
        ),
        b_bar: mat(4, 2, &[dt, 0.0, 0.0, dt, 0.0, 0.0, 0.0, 0.0]),
        d_bar: vec(&[0.0; 4]),
        a_tilde: vec![
            mat(
                4,
                4,
                &[
                    0.0, 0.0, 0.0, 0.0, //
                    0.0, 0.0, 0.0, 0.0, //
                    s, 0.0, 0.0, 0.0, //
                    0.0, s, 0.0, 0.0,
                ],
            ),
            mat(
                4,
                4,
                &[
                    s, 0.0, 0.0, 0.0, //
                    0.0, s, 0.0, 0.0, //
                    0.0, 0.0, 0.0, 0.0, //
                    0.0, 0.0, 0.0, 0.0,
                ],
            ),
        ],
        b_tilde: vec![
            mat(4, 2, &[s, 0.0, 0.0, s, 0.0, 0.0, 0.0, 0.0]),
            mat(4, 2, &[0.0, s, s, 0.0, 0.0, 0.0, 0.0, 0.0]),
        ],
        d_tilde: vec![vec(&[ad, ad, 0.0, 0.0]), vec(&[0.0, 0.0, ad, ad])],
    }
}

/// Full benchmark instance at noise intensity `theta` with the strict
/// (unregularized) terminal covariance bound.
pub fn double_integrator<T: Scalar>(theta: f64) -> ProblemInstance<T> {
    let model = double_integrator_model::<T>(theta, TIME_STEP);
    let mut sigma_f = DMatrix::zeros(4, 4);
    for d in &model.d_tilde {
        sigma_f += d * d.transpose();
    }
    sigma_f *= T::lit(10.0);
    let boundary = BoundaryMoments {
        mu_i: vec(&[0.0, 0.0, -1.0, -1.0]),
        sigma_i: DMatrix::identity(4, 4) * T::lit(0.02),
        mu_f: vec(&[0.0; 4]),
        sigma_f,
        horizon: HORIZON,
    };
    let chance = ChanceSpec {
        state_constraints: vec![
            HalfspaceConstraint::new(vec(&[0.0, 0.0, -0.5, 1.0]), T::lit(0.1), T::lit(0.2)),
            HalfspaceConstraint::new(vec(&[0.0, 0.0, 2.0, -1.0]), T::lit(0.2), T::lit(0.2)),
        ],
        input_constraints: Vec::new(),
        p_x_total: T::lit(0.4),
        p_u_total: T::lit(0.4),
    };
    let cost = CostWeights::constant(DMatrix::identity(4, 4), DMatrix::identity(2, 2));
    ProblemInstance {
        model,
        boundary,
        chance,
        cost,
        sigma_f_regularization: T::zero(),
    }
}
