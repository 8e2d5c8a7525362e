//! Exact first- and second-moment propagation of the closed loop under an
//! affine policy `u = L(x − x̄) + c`.
//!
//! With the noise channels independent of the current state and input, the
//! mean follows the nominal dynamics and the covariance obeys
//!
//! ```text
//! Σₖ₊₁ = ĀΣĀᵀ + ĀΣ_xuB̄ᵀ + B̄Σ_xuᵀĀᵀ + B̄Σ_uB̄ᵀ
//!      + Σⱼ (ÃⱼΣÃⱼᵀ + ÃⱼΣ_xuB̃ⱼᵀ + B̃ⱼΣ_xuᵀÃⱼᵀ + B̃ⱼΣ_uB̃ⱼᵀ)
//!      + Σⱼ wⱼwⱼᵀ,    wⱼ = Ãⱼx̄ + B̃ⱼū + d̃ⱼ
//! ```

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{CostWeights, SystemModel};
use crate::scalar::Scalar;

/// Affine feedback sequence `{Lₖ, cₖ}`, `k = 0..N−1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy<T: Scalar> {
    pub gains: Vec<DMatrix<T>>,
    pub feedforward: Vec<DVector<T>>,
}

impl<T: Scalar> Policy<T> {
    pub fn horizon(&self) -> usize {
        self.feedforward.len()
    }

    /// Zero gains and zero feedforward.
    pub fn zero(n_x: usize, n_u: usize, horizon: usize) -> Self {
        Self {
            gains: vec![DMatrix::zeros(n_u, n_x); horizon],
            feedforward: vec![DVector::zeros(n_u); horizon],
        }
    }

    pub fn open_loop(feedforward: Vec<DVector<T>>, n_x: usize) -> Self {
        let gains = feedforward.iter().map(|c| DMatrix::zeros(c.len(), n_x)).collect();
        Self { gains, feedforward }
    }

    pub fn check(&self, model: &SystemModel<T>, horizon: usize) -> Result<()> {
        if self.gains.len() != horizon || self.feedforward.len() != horizon {
            return Err(Error::dim(
                "policy length",
                horizon,
                format!("{} gains / {} feedforward", self.gains.len(), self.feedforward.len()),
            ));
        }
        for (k, (l, c)) in self.gains.iter().zip(&self.feedforward).enumerate() {
            linalg::check_shape(&format!("policy.L[{k}]"), l, model.n_u(), model.n_x())?;
            linalg::check_len(&format!("policy.c[{k}]"), c, model.n_u())?;
            if !linalg::all_finite(l) || c.iter().any(|v| !v.is_finite_value()) {
                return Err(Error::NonFinite {
                    context: "policy".into(),
                    step: k,
                });
            }
        }
        Ok(())
    }

    pub fn to_doc(&self) -> PolicyDoc {
        PolicyDoc {
            gains: self.gains.iter().map(linalg::to_rows).collect(),
            feedforward: self.feedforward.iter().map(linalg::to_list).collect(),
        }
    }

    pub fn from_doc(doc: &PolicyDoc, n_x: usize) -> Result<Self> {
        if doc.gains.len() != doc.feedforward.len() {
            return Err(Error::dim("policy.L", doc.feedforward.len(), doc.gains.len()));
        }
        Ok(Self {
            gains: doc
                .gains
                .iter()
                .enumerate()
                .map(|(k, l)| linalg::from_rows(&format!("policy.L[{k}]"), l, n_x))
                .collect::<Result<_>>()?,
            feedforward: doc
                .feedforward
                .iter()
                .enumerate()
                .map(|(k, c)| linalg::from_list(&format!("policy.c[{k}]"), c))
                .collect::<Result<_>>()?,
        })
    }
}

/// JSON form of a [`Policy`]: `{"L": [[[..]]], "c": [[..]]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDoc {
    #[serde(rename = "L")]
    pub gains: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "c")]
    pub feedforward: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanSequences<T: Scalar> {
    /// `x̄₀..x̄_N`
    pub x_bar: Vec<DVector<T>>,
    /// `ū₀..ū_{N−1}`
    pub u_bar: Vec<DVector<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentTrajectory<T: Scalar> {
    pub x_bar: Vec<DVector<T>>,
    pub sigma_x: Vec<DMatrix<T>>,
    pub u_bar: Vec<DVector<T>>,
    pub sigma_u: Vec<DMatrix<T>>,
    pub sigma_xu: Vec<DMatrix<T>>,
}

/// `x̄ₖ₊₁ = Āx̄ₖ + B̄cₖ + d̄`, `ūₖ = cₖ`.
pub fn propagate_mean<T: Scalar>(
    model: &SystemModel<T>,
    feedforward: &[DVector<T>],
    mu_i: &DVector<T>,
    horizon: usize,
) -> Result<MeanSequences<T>> {
    if feedforward.len() != horizon {
        return Err(Error::dim("feedforward", horizon, feedforward.len()));
    }
    linalg::check_len("mu_I", mu_i, model.n_x())?;
    let mut x_bar = Vec::with_capacity(horizon + 1);
    x_bar.push(mu_i.clone());
    for (k, c) in feedforward.iter().enumerate() {
        linalg::check_len(&format!("c[{k}]"), c, model.n_u())?;
        let next = &model.a_bar * &x_bar[k] + &model.b_bar * c + &model.d_bar;
        x_bar.push(next);
    }
    Ok(MeanSequences {
        x_bar,
        u_bar: feedforward.to_vec(),
    })
}

/// Propagates the covariance under `policy`, symmetrizing after every step.
pub fn propagate_covariance<T: Scalar>(
    model: &SystemModel<T>,
    policy: &Policy<T>,
    means: &MeanSequences<T>,
    sigma_i: &DMatrix<T>,
) -> Result<MomentTrajectory<T>> {
    let n = policy.horizon();
    policy.check(model, n)?;
    if means.x_bar.len() != n + 1 || means.u_bar.len() != n {
        return Err(Error::dim("means", n + 1, means.x_bar.len()));
    }
    linalg::check_shape("Sigma_I", sigma_i, model.n_x(), model.n_x())?;

    let mut sigma_x = Vec::with_capacity(n + 1);
    let mut sigma_u = Vec::with_capacity(n);
    let mut sigma_xu = Vec::with_capacity(n);
    sigma_x.push(linalg::symmetrize(sigma_i));
    for k in 0..n {
        let s = &sigma_x[k];
        let l = &policy.gains[k];
        let sxu = s * l.transpose();
        let su = linalg::symmetrize(&(l * &sxu));
        let next = covariance_step(model, s, &sxu, &su, &means.x_bar[k], &means.u_bar[k]);
        if !linalg::all_finite(&next) {
            return Err(Error::NonFinite {
                context: "covariance propagation".into(),
                step: k + 1,
            });
        }
        sigma_u.push(su);
        sigma_xu.push(sxu);
        sigma_x.push(next);
    }
    Ok(MomentTrajectory {
        x_bar: means.x_bar.clone(),
        sigma_x,
        u_bar: means.u_bar.clone(),
        sigma_u,
        sigma_xu,
    })
}

/// One step of the exact covariance recursion given the joint moments.
pub fn covariance_step<T: Scalar>(
    model: &SystemModel<T>,
    sigma: &DMatrix<T>,
    sigma_xu: &DMatrix<T>,
    sigma_u: &DMatrix<T>,
    x_bar: &DVector<T>,
    u_bar: &DVector<T>,
) -> DMatrix<T> {
    let joint = |a: &DMatrix<T>, b: &DMatrix<T>| {
        let axb = a * sigma_xu * b.transpose();
        a * sigma * a.transpose() + &axb + axb.transpose() + b * sigma_u * b.transpose()
    };
    let mut next = joint(&model.a_bar, &model.b_bar);
    for j in 0..model.m() {
        next += joint(&model.a_tilde[j], &model.b_tilde[j]);
        let w = model.channel_offset(j, x_bar, u_bar);
        next += &w * w.transpose();
    }
    linalg::symmetrize(&next)
}

/// Mean and covariance trajectory from `(μ_I, Σ_I)` under `policy`.
pub fn propagate<T: Scalar>(
    model: &SystemModel<T>,
    policy: &Policy<T>,
    mu_i: &DVector<T>,
    sigma_i: &DMatrix<T>,
) -> Result<MomentTrajectory<T>> {
    let means = propagate_mean(model, &policy.feedforward, mu_i, policy.horizon())?;
    propagate_covariance(model, policy, &means, sigma_i)
}

/// `Σₖ x̄ᵀQₖx̄ + tr(QₖΣₓ) + ūᵀRₖū + tr(RₖΣᵤ)` over `k = 0..N−1`.
pub fn exact_cost<T: Scalar>(traj: &MomentTrajectory<T>, cost: &CostWeights<T>) -> Result<T> {
    let n = traj.u_bar.len();
    if traj.x_bar.len() < n || traj.sigma_x.len() < n || traj.sigma_u.len() < n {
        return Err(Error::dim("trajectory", n, traj.sigma_x.len()));
    }
    let mut total = T::zero();
    for k in 0..n {
        let q = cost.q_at(k);
        let r = cost.r_at(k);
        linalg::check_shape("Q", q, traj.x_bar[k].len(), traj.x_bar[k].len())?;
        linalg::check_shape("R", r, traj.u_bar[k].len(), traj.u_bar[k].len())?;
        total += linalg::quad_form(&traj.x_bar[k], q)
            + (q * &traj.sigma_x[k]).trace()
            + linalg::quad_form(&traj.u_bar[k], r)
            + (r * &traj.sigma_u[k]).trace();
    }
    Ok(total)
}

fn matrix_header(out: &mut String, name: &str, dim: usize) {
    for i in 0..dim {
        for j in 0..dim {
            if dim <= 10 {
                let _ = write!(out, ",{name}_{i}{j}");
            } else {
                let _ = write!(out, ",{name}_{i}_{j}");
            }
        }
    }
}

impl<T: Scalar> MomentTrajectory<T> {
    pub fn horizon(&self) -> usize {
        self.u_bar.len()
    }

    /// One row per `k`; input columns are left empty at `k = N`.
    pub fn to_csv(&self) -> String {
        let nx = self.x_bar.first().map_or(0, DVector::len);
        let nu = self.u_bar.first().map_or(0, DVector::len);
        let mut out = String::from("k");
        for i in 0..nx {
            let _ = write!(out, ",x_bar_{i}");
        }
        matrix_header(&mut out, "Sigma_x", nx);
        for i in 0..nu {
            let _ = write!(out, ",u_bar_{i}");
        }
        matrix_header(&mut out, "Sigma_u", nu);
        out.push('\n');
        for k in 0..self.x_bar.len() {
            let _ = write!(out, "{k}");
            for v in self.x_bar[k].iter() {
                let _ = write!(out, ",{}", v.as_f64());
            }
            for i in 0..nx {
                for j in 0..nx {
                    let _ = write!(out, ",{}", self.sigma_x[k][(i, j)].as_f64());
                }
            }
            if k < self.u_bar.len() {
                for v in self.u_bar[k].iter() {
                    let _ = write!(out, ",{}", v.as_f64());
                }
                for i in 0..nu {
                    for j in 0..nu {
                        let _ = write!(out, ",{}", self.sigma_u[k][(i, j)].as_f64());
                    }
                }
            } else {
                for _ in 0..(nu + nu * nu) {
                    out.push(',');
                }
            }
            out.push('\n');
        }
        out
    }
}
