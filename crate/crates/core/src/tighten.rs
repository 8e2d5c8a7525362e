//! Deterministic surrogates for the halfspace chance constraints.
//!
//! A constraint `Pr(αᵀv ≥ β) ≤ p` is enforced through the Cantelli
//! residual `αᵀv̄ + √(αᵀΣα)·√((1−p)/p) − β ≤ 0`. The convex program cannot
//! hold the square root, so it uses the tangent of `√·` at a point `λ`:
//! `√s ≤ √λ/2 + s/(2√λ)`, which is affine in `Σ` and never below the
//! Cantelli residual.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{HalfspaceConstraint, ProblemInstance};
use crate::scalar::Scalar;

/// Smallest admissible linearization point.
pub const LAMBDA_FLOOR: f64 = 1e-12;

/// Splits `p_total` over `n` constraints, uniformly or proportionally to
/// strictly positive `weights`. The last share absorbs rounding so the
/// shares sum to `p_total`.
pub fn allocate_risk<T: Scalar>(p_total: T, n: usize, weights: Option<&[T]>) -> Result<Vec<T>> {
    if !(p_total > T::zero() && p_total < T::lit(0.5)) {
        return Err(Error::invariant("p_total", format!("{p_total} must lie in (0, 0.5)")));
    }
    if n == 0 {
        return Err(Error::invariant("n", "at least one constraint required"));
    }
    let mut shares: Vec<T> = match weights {
        None => vec![p_total / T::from_usize_lossy(n); n],
        Some(w) => {
            if w.len() != n {
                return Err(Error::dim("weights", n, w.len()));
            }
            if w.iter().any(|&x| !(x > T::zero())) {
                return Err(Error::invariant("weights", "weights must be strictly positive"));
            }
            let sum = w.iter().fold(T::zero(), |a, &b| a + b);
            w.iter().map(|&x| p_total * x / sum).collect()
        }
    };
    let head = shares[..n - 1].iter().fold(T::zero(), |a, &b| a + b);
    shares[n - 1] = p_total - head;
    Ok(shares)
}

fn variance<T: Scalar>(alpha: &DVector<T>, sigma: &DMatrix<T>) -> Result<T> {
    if sigma.nrows() != alpha.len() || sigma.ncols() != alpha.len() {
        return Err(Error::dim(
            "Sigma",
            format!("{0}x{0}", alpha.len()),
            format!("{}x{}", sigma.nrows(), sigma.ncols()),
        ));
    }
    let v = linalg::quad_form(alpha, sigma);
    if v < T::lit(-1e-12) {
        return Err(Error::invariant(
            "Sigma",
            format!("indefinite: alpha' Sigma alpha = {v}"),
        ));
    }
    Ok(v.max(T::zero()))
}

fn mean_term<T: Scalar>(con: &HalfspaceConstraint<T>, mean: &DVector<T>) -> Result<T> {
    if mean.len() != con.alpha.len() {
        return Err(Error::dim("mean", con.alpha.len(), mean.len()));
    }
    Ok(con.alpha.dot(mean))
}

/// `αᵀx̄ + √(αᵀΣα)·√((1−p)/p) − β`; nonpositive certifies `Pr(αᵀx ≥ β) ≤ p`
/// for every distribution with these two moments.
pub fn cantelli_residual<T: Scalar>(con: &HalfspaceConstraint<T>, mean: &DVector<T>, sigma: &DMatrix<T>) -> Result<T> {
    let var = variance(&con.alpha, sigma)?;
    Ok(mean_term(con, mean)? + var.sqrt() * con.cantelli_factor() - con.beta)
}

/// Tangent-line upper bound of [`cantelli_residual`] at `lambda`.
pub fn tangent_residual<T: Scalar>(
    con: &HalfspaceConstraint<T>,
    lambda: T,
    mean: &DVector<T>,
    sigma_bar: &DMatrix<T>,
) -> Result<T> {
    if !(lambda >= T::lit(LAMBDA_FLOOR)) {
        return Err(Error::invariant(
            "lambda",
            format!("{lambda} below floor {LAMBDA_FLOOR}"),
        ));
    }
    let var = variance(&con.alpha, sigma_bar)?;
    let root = lambda.sqrt();
    let two = T::lit(2.0);
    Ok(mean_term(con, mean)? + (root / two + var / (two * root)) * con.cantelli_factor() - con.beta)
}

/// Affine coefficients `(offset, slope)` of the tangent bound, so that the
/// tightened constraint reads `αᵀv̄ + offset + slope·αᵀΣ̄α − β ≤ 0`.
pub fn tangent_coefficients<T: Scalar>(con: &HalfspaceConstraint<T>, lambda: T) -> (T, T) {
    let root = lambda.sqrt();
    let kappa = con.cantelli_factor();
    let two = T::lit(2.0);
    (kappa * root / two, kappa / (two * root))
}

/// Linear interpolation `Σ_I + k/(N−1)·(Σ_F − Σ_I)` for `k = 0..N−1`.
pub fn nominal_schedule<T: Scalar>(
    sigma_i: &DMatrix<T>,
    sigma_f: &DMatrix<T>,
    horizon: usize,
) -> Result<Vec<DMatrix<T>>> {
    if sigma_i.shape() != sigma_f.shape() {
        return Err(Error::dim(
            "Sigma_F",
            format!("{}x{}", sigma_i.nrows(), sigma_i.ncols()),
            format!("{}x{}", sigma_f.nrows(), sigma_f.ncols()),
        ));
    }
    if horizon <= 1 {
        return Ok(vec![linalg::symmetrize(sigma_i); horizon]);
    }
    let steps = T::from_usize_lossy(horizon - 1);
    let delta = sigma_f - sigma_i;
    Ok((0..horizon)
        .map(|k| linalg::symmetrize(&(sigma_i + &delta * (T::from_usize_lossy(k) / steps))))
        .collect())
}

/// `λ[i][k] = max(αᵢᵀ Σ[k] αᵢ, λ_floor)`.
pub fn linearization_points<T: Scalar>(
    schedule: &[DMatrix<T>],
    constraints: &[HalfspaceConstraint<T>],
) -> Result<Vec<Vec<T>>> {
    let floor = T::lit(LAMBDA_FLOOR);
    constraints
        .iter()
        .map(|con| {
            schedule
                .iter()
                .map(|s| {
                    if s.nrows() != con.alpha.len() {
                        return Err(Error::dim("schedule", con.alpha.len(), s.nrows()));
                    }
                    Ok(linalg::quad_form(&con.alpha, s).max(floor))
                })
                .collect()
        })
        .collect()
}

/// Tangent points for every chance constraint and step `k = 0..N−1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizationSchedule<T: Scalar> {
    pub lambda_state: Vec<Vec<T>>,
    pub lambda_input: Vec<Vec<T>>,
    /// Nominal state covariances the state points were generated from.
    pub sigma_nom: Vec<DMatrix<T>>,
}

impl<T: Scalar> LinearizationSchedule<T> {
    /// First-pass schedule: state points from the `Σ_I → Σ_F` interpolation.
    ///
    /// No nominal input covariance exists before a solve, so each input
    /// point is `(β/(2κ))²`: the variance that spends half of the margin of a
    /// zero-mean input, floored.
    pub fn interpolated(instance: &ProblemInstance<T>) -> Result<Self> {
        let n = instance.horizon();
        let sigma_nom = nominal_schedule(&instance.boundary.sigma_i, &instance.sigma_f_effective(), n)?;
        let lambda_state = linearization_points(&sigma_nom, &instance.chance.state_constraints)?;
        let floor = T::lit(LAMBDA_FLOOR);
        let lambda_input = instance
            .chance
            .input_constraints
            .iter()
            .map(|con| {
                let half = con.beta / (T::lit(2.0) * con.cantelli_factor());
                vec![(half * half).max(floor); n]
            })
            .collect();
        Ok(Self {
            lambda_state,
            lambda_input,
            sigma_nom,
        })
    }

    /// Re-linearization at a previous solution's covariance bounds.
    pub fn from_covariances(
        instance: &ProblemInstance<T>,
        sigma_x: &[DMatrix<T>],
        sigma_u: &[DMatrix<T>],
    ) -> Result<Self> {
        let n = instance.horizon();
        if sigma_x.len() < n || sigma_u.len() < n {
            return Err(Error::dim(
                "relinearization covariances",
                n,
                sigma_x.len().min(sigma_u.len()),
            ));
        }
        let sigma_nom: Vec<_> = sigma_x[..n].to_vec();
        Ok(Self {
            lambda_state: linearization_points(&sigma_nom, &instance.chance.state_constraints)?,
            lambda_input: linearization_points(&sigma_u[..n], &instance.chance.input_constraints)?,
            sigma_nom,
        })
    }

    pub fn horizon(&self) -> usize {
        self.sigma_nom.len()
    }

    /// CSV with header `constraint_index,k,lambda`. State constraints come
    /// first; input constraint `i` is numbered `N_s + i`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("constraint_index,k,lambda\n");
        for (i, row) in self.lambda_state.iter().chain(self.lambda_input.iter()).enumerate() {
            for (k, l) in row.iter().enumerate() {
                let _ = writeln!(out, "{i},{k},{}", l.as_f64());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;

    fn con(alpha: &[f64], beta: f64, p: f64) -> HalfspaceConstraint<f64> {
        HalfspaceConstraint::new(DVector::from_row_slice(alpha), beta, p)
    }

    #[test]
    fn allocation_examples() {
        assert_eq!(allocate_risk(0.4, 2, None).unwrap(), vec![0.2, 0.2]);
        assert_eq!(allocate_risk(0.1, 1, None).unwrap(), vec![0.1]);
        let w: Vec<f64> = allocate_risk(0.3, 3, Some(&[1.0, 1.0, 2.0])).unwrap();
        for (a, b) in w.iter().zip([0.075, 0.075, 0.15]) {
            assert!((a - b).abs() < 1e-16);
        }
        assert!(allocate_risk(0.6, 2, None).is_err());
        assert!(allocate_risk(0.3, 2, Some(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn cantelli_examples() {
        let sigma = DMatrix::identity(1, 1);
        let r = cantelli_residual(&con(&[1.0], 1.0, 0.5), &DVector::from_row_slice(&[0.0]), &sigma).unwrap();
        assert!(r.abs() < 1e-15);

        let zero = DMatrix::zeros(2, 2);
        let c = con(&[1.0, 2.0], 0.7, 0.1);
        let x = DVector::from_row_slice(&[0.3, 0.1]);
        assert!((cantelli_residual(&c, &x, &zero).unwrap() - (0.5 - 0.7)).abs() < 1e-15);

        // sqrt(0.8/0.2) = 2; alpha' Sigma alpha = 0.04.
        let c = con(&[1.0], 0.1, 0.2);
        let r = cantelli_residual(
            &c,
            &DVector::from_row_slice(&[0.05]),
            &DMatrix::from_element(1, 1, 0.04),
        )
        .unwrap();
        assert!((r - 0.35).abs() < 1e-14);

        let indefinite = DMatrix::from_element(1, 1, -1.0);
        assert!(cantelli_residual(&c, &DVector::from_row_slice(&[0.0]), &indefinite).is_err());
    }

    #[test]
    fn tangent_examples() {
        let c = con(&[1.0], 0.0, 0.2);
        let x = DVector::from_row_slice(&[0.0]);
        let s = DMatrix::from_element(1, 1, 4.0);
        assert!((tangent_residual(&c, 1.0, &x, &s).unwrap() - 5.0).abs() < 1e-14);
        assert!((cantelli_residual(&c, &x, &s).unwrap() - 4.0).abs() < 1e-14);
        // Exact at the tangent point.
        let t = tangent_residual(&c, 4.0, &x, &s).unwrap();
        assert!((t - 4.0).abs() < 1e-14);

        let c = con(&[1.0], 0.3, 0.2);
        let zero = DMatrix::zeros(1, 1);
        let x = DVector::from_row_slice(&[0.1]);
        let t = tangent_residual(&c, LAMBDA_FLOOR, &x, &zero).unwrap();
        let expect = 0.1 - 0.3 + LAMBDA_FLOOR.sqrt() / 2.0 * 2.0;
        assert!((t - expect).abs() < 1e-15);
        assert!(tangent_residual(&c, 1e-13, &x, &zero).is_err());
    }

    #[test]
    fn schedule_examples() {
        let s = DMatrix::from_element(1, 1, 2.0);
        let sched = nominal_schedule(&s, &s, 4).unwrap();
        assert!(sched.iter().all(|m| *m == s));

        let sched = nominal_schedule(&DMatrix::from_element(1, 1, 1.0), &DMatrix::from_element(1, 1, 3.0), 3).unwrap();
        let vals: Vec<f64> = sched.iter().map(|m| m[(0, 0)]).collect();
        assert_eq!(vals, vec![1.0, 2.0, 3.0]);

        let one = nominal_schedule(&DMatrix::from_element(1, 1, 1.0), &DMatrix::from_element(1, 1, 3.0), 1).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0][(0, 0)], 1.0);

        let inst = reference::double_integrator::<f64>(0.1);
        let sched = nominal_schedule(&inst.boundary.sigma_i, &inst.boundary.sigma_f, 50).unwrap();
        assert_eq!(sched.len(), 50);
        assert_eq!(sched[0], inst.boundary.sigma_i);
        assert!((&sched[49] - &inst.boundary.sigma_f).abs().max() < 1e-15);
        // N = 50 has no exact midpoint index; k/(N-1) is linear in k.
        let mid = (&sched[24] + &sched[25]) * 0.5;
        let avg = (&inst.boundary.sigma_i + &inst.boundary.sigma_f) * 0.5;
        assert!((mid - avg).abs().max() < 1e-15);

        assert!(nominal_schedule(&DMatrix::<f64>::zeros(2, 2), &DMatrix::zeros(3, 3), 5).is_err());
    }

    #[test]
    fn linearization_examples() {
        let sched = vec![DMatrix::identity(3, 3) * 0.7; 2];
        let l = linearization_points(&sched, &[con(&[1.0, 0.0, 0.0], 1.0, 0.1)]).unwrap();
        assert_eq!(l, vec![vec![0.7, 0.7]]);

        let degenerate = vec![DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0])];
        let l = linearization_points(&degenerate, &[con(&[1.0, 0.0], 1.0, 0.1)]).unwrap();
        assert_eq!(l[0][0], LAMBDA_FLOOR);

        let inst = reference::double_integrator::<f64>(0.1);
        let sched = LinearizationSchedule::interpolated(&inst).unwrap();
        assert!((sched.lambda_state[0][0] - 0.025).abs() < 1e-15);
        assert_eq!(sched.lambda_state.len(), 2);
        assert_eq!(sched.lambda_state[1].len(), 50);
        assert!(sched.lambda_input.is_empty());
        assert!(sched.to_csv().starts_with("constraint_index,k,lambda\n0,0,0.025"));
    }
}
