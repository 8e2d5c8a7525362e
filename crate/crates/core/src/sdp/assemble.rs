//! Builds the convex covariance-steering program over the relaxed moment
//! variables.
//!
//! Symmetric matrix variables store their upper triangle only, in the same
//! column-major order as PSD blocks. `Σ̄_ux[k]` is an `n_u × n_x` matrix
//! stored row-major.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{validate, ProblemInstance, ViolationKind};
use crate::scalar::Scalar;
use crate::sdp::program::{triangle_index, triangle_len, ConicProgram, LinExpr, PsdBlock, RowBlock, SocBlock};
use crate::tighten::{tangent_coefficients, LinearizationSchedule, LAMBDA_FLOOR};

/// Start index of a symmetric `n × n` variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct SymVar {
    pub start: usize,
    pub n: usize,
}

impl SymVar {
    pub fn at(&self, i: usize, j: usize) -> usize {
        self.start + triangle_index(i, j)
    }
}

/// Start index of a dense `rows × cols` variable, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct DenseVar {
    pub start: usize,
    pub rows: usize,
    pub cols: usize,
}

impl DenseVar {
    pub fn at(&self, i: usize, j: usize) -> usize {
        self.start + i * self.cols + j
    }
}

pub(crate) fn name_c(k: usize) -> String {
    format!("c[{k}]")
}
pub(crate) fn name_u_bar(k: usize) -> String {
    format!("u_bar[{k}]")
}
pub(crate) fn name_x_bar(k: usize) -> String {
    format!("x_bar[{k}]")
}
pub(crate) fn name_sigma_x(k: usize) -> String {
    format!("Sigma_bar_x[{k}]")
}
pub(crate) fn name_sigma_ux(k: usize) -> String {
    format!("Sigma_bar_ux[{k}]")
}
pub(crate) fn name_sigma_u(k: usize) -> String {
    format!("Sigma_bar_u[{k}]")
}
pub(crate) fn name_sigma_j(j: usize, k: usize) -> String {
    format!("Sigma_bar_j[{j}][{k}]")
}
pub(crate) fn name_t(k: usize) -> String {
    format!("t[{k}]")
}
pub(crate) fn name_s(k: usize) -> String {
    format!("s[{k}]")
}

struct Layout {
    c: Vec<usize>,
    u_bar: Vec<usize>,
    x_bar: Vec<usize>,
    sigma_x: Vec<SymVar>,
    sigma_ux: Vec<DenseVar>,
    sigma_u: Vec<SymVar>,
    sigma_j: Vec<Vec<SymVar>>,
    t: Vec<usize>,
    s: Vec<usize>,
}

fn layout<T: Scalar>(p: &mut ConicProgram<T>, n_x: usize, n_u: usize, m: usize, n: usize) -> Layout {
    let sym = |p: &mut ConicProgram<T>, name: String, dim: usize| SymVar {
        start: p.add_vars(name, triangle_len(dim)),
        n: dim,
    };
    let mut l = Layout {
        c: Vec::new(),
        u_bar: Vec::new(),
        x_bar: Vec::new(),
        sigma_x: Vec::new(),
        sigma_ux: Vec::new(),
        sigma_u: Vec::new(),
        sigma_j: vec![Vec::new(); m],
        t: Vec::new(),
        s: Vec::new(),
    };
    for k in 0..=n {
        l.x_bar.push(p.add_vars(name_x_bar(k), n_x));
        l.sigma_x.push(sym(p, name_sigma_x(k), n_x));
    }
    for k in 0..n {
        l.c.push(p.add_vars(name_c(k), n_u));
        l.u_bar.push(p.add_vars(name_u_bar(k), n_u));
        l.sigma_ux.push(DenseVar {
            start: p.add_vars(name_sigma_ux(k), n_u * n_x),
            rows: n_u,
            cols: n_x,
        });
        l.sigma_u.push(sym(p, name_sigma_u(k), n_u));
        for (j, col) in l.sigma_j.iter_mut().enumerate() {
            col.push(sym(p, name_sigma_j(j, k), n_x));
        }
        l.t.push(p.add_vars(name_t(k), 1));
        l.s.push(p.add_vars(name_s(k), 1));
    }
    l
}

/// Adds entry `(r, c)` of `M S Mᵀ` to `e`, with `S` a symmetric variable.
fn add_congruence<T: Scalar>(e: &mut LinExpr<T>, r: usize, c: usize, mat: &DMatrix<T>, s: SymVar) {
    for q in 0..s.n {
        for p in 0..=q {
            let mut coef = mat[(r, p)] * mat[(c, q)];
            if p != q {
                coef += mat[(r, q)] * mat[(c, p)];
            }
            e.add_term(s.at(p, q), coef);
        }
    }
}

/// Adds entry `(r, c)` of `A Sᵀ Bᵀ + B S Aᵀ` to `e`, with `S` the dense
/// `n_u × n_x` cross-covariance variable.
fn add_cross<T: Scalar>(e: &mut LinExpr<T>, r: usize, c: usize, a: &DMatrix<T>, b: &DMatrix<T>, s: DenseVar) {
    for q in 0..s.rows {
        for p in 0..s.cols {
            let coef = a[(r, p)] * b[(c, q)] + b[(r, q)] * a[(c, p)];
            e.add_term(s.at(q, p), coef);
        }
    }
}

/// `W x̄ + V ū + d` as affine expressions, one per row.
fn affine_rows<T: Scalar>(
    w: &DMatrix<T>,
    x_bar: usize,
    v: &DMatrix<T>,
    u_bar: usize,
    d: &DVector<T>,
) -> Vec<LinExpr<T>> {
    (0..w.nrows())
        .map(|r| {
            let mut e = LinExpr::constant(d[r]);
            for p in 0..w.ncols() {
                e.add_term(x_bar + p, w[(r, p)]);
            }
            for q in 0..v.ncols() {
                e.add_term(u_bar + q, v[(r, q)]);
            }
            e
        })
        .collect()
}

/// Rotated cone `t ≥ ‖F v‖²` written as `((t+1)/2, (t−1)/2, F v) ∈ SOC`.
fn epigraph<T: Scalar>(label: String, t: usize, factor: &DMatrix<T>, v: usize) -> SocBlock<T> {
    let half = T::lit(0.5);
    let mut head = LinExpr::constant(half);
    head.add_term(t, half);
    let mut second = LinExpr::constant(-half);
    second.add_term(t, half);
    let mut exprs = vec![head, second];
    for r in 0..factor.nrows() {
        let mut e = LinExpr::default();
        for p in 0..factor.ncols() {
            e.add_term(v + p, factor[(r, p)]);
        }
        exprs.push(e);
    }
    SocBlock { label, exprs }
}

fn check_schedule<T: Scalar>(instance: &ProblemInstance<T>, schedule: &LinearizationSchedule<T>) -> Result<()> {
    let n = instance.horizon();
    let cs = &instance.chance;
    let families = [
        (
            "schedule.lambda_state",
            &schedule.lambda_state,
            cs.state_constraints.len(),
        ),
        (
            "schedule.lambda_input",
            &schedule.lambda_input,
            cs.input_constraints.len(),
        ),
    ];
    for (field, rows, count) in families {
        if rows.len() != count {
            return Err(Error::dim(field, count, rows.len()));
        }
        for row in rows.iter() {
            if row.len() != n {
                return Err(Error::dim(field, n, row.len()));
            }
            if let Some(bad) = row.iter().find(|&&l| !(l >= T::lit(LAMBDA_FLOOR))) {
                return Err(Error::invariant(
                    field,
                    format!("point {bad} below floor {LAMBDA_FLOOR}"),
                ));
            }
        }
    }
    Ok(())
}

/// Encodes the relaxed program for `instance` linearized at `schedule`.
pub fn assemble<T: Scalar>(
    instance: &ProblemInstance<T>,
    schedule: &LinearizationSchedule<T>,
) -> Result<ConicProgram<T>> {
    if let Some(v) = validate(instance).into_iter().next() {
        if v.kind == ViolationKind::Invariant && v.field.starts_with("cost.") {
            return Err(Error::Factorization(v.to_string()));
        }
        return Err(v.into_error());
    }
    check_schedule(instance, schedule)?;

    let model = &instance.model;
    let (n_x, n_u, m, n) = (model.n_x(), model.n_u(), model.m(), instance.horizon());
    let mut p = ConicProgram::new();
    let l = layout(&mut p, n_x, n_u, m, n);

    // Boundary conditions and the mean recursion.
    let mut boundary = Vec::new();
    for r in 0..n_x {
        let mut e = LinExpr::var(l.x_bar[0] + r);
        e.constant = -instance.boundary.mu_i[r];
        boundary.push(e);
    }
    for jc in 0..n_x {
        for ic in 0..=jc {
            let mut e = LinExpr::var(l.sigma_x[0].at(ic, jc));
            e.constant = -instance.boundary.sigma_i[(ic, jc)];
            boundary.push(e);
        }
    }
    for r in 0..n_x {
        let mut e = LinExpr::var(l.x_bar[n] + r);
        e.constant = -instance.boundary.mu_f[r];
        boundary.push(e);
    }
    p.equalities.push(RowBlock {
        label: "boundary".into(),
        rows: boundary,
    });

    let mut mean_rows = Vec::with_capacity(n * (n_x + n_u));
    for k in 0..n {
        for (r, mut e) in affine_rows(&model.a_bar, l.x_bar[k], &model.b_bar, l.c[k], &model.d_bar)
            .into_iter()
            .enumerate()
        {
            e.add_term(l.x_bar[k + 1] + r, -T::one());
            mean_rows.push(e.compress());
        }
        for r in 0..n_u {
            let mut e = LinExpr::var(l.u_bar[k] + r);
            e.add_term(l.c[k] + r, -T::one());
            mean_rows.push(e);
        }
    }
    p.equalities.push(RowBlock {
        label: "mean recursion".into(),
        rows: mean_rows,
    });

    // Relaxed covariance recursion, upper triangle entrywise.
    let mut cov_rows = Vec::with_capacity(n * triangle_len(n_x));
    for k in 0..n {
        for c in 0..n_x {
            for r in 0..=c {
                let mut e = LinExpr::default();
                let mut pair = |a: &DMatrix<T>, b: &DMatrix<T>| {
                    add_congruence(&mut e, r, c, a, l.sigma_x[k]);
                    add_cross(&mut e, r, c, a, b, l.sigma_ux[k]);
                    add_congruence(&mut e, r, c, b, l.sigma_u[k]);
                };
                pair(&model.a_bar, &model.b_bar);
                for j in 0..m {
                    pair(&model.a_tilde[j], &model.b_tilde[j]);
                }
                for j in 0..m {
                    e.add_term(l.sigma_j[j][k].at(r, c), T::one());
                }
                e.add_term(l.sigma_x[k + 1].at(r, c), -T::one());
                cov_rows.push(e.compress());
            }
        }
    }
    p.equalities.push(RowBlock {
        label: "covariance recursion".into(),
        rows: cov_rows,
    });

    // Channel Schur blocks [[Σ̄_jk, w], [wᵀ, 1]] ⪰ 0.
    for k in 0..n {
        for j in 0..m {
            let w = affine_rows(
                &model.a_tilde[j],
                l.x_bar[k],
                &model.b_tilde[j],
                l.u_bar[k],
                &model.d_tilde[j],
            );
            let mut blk = PsdBlock::new(format!("channel[{j}][{k}]"), n_x + 1);
            let sj = l.sigma_j[j][k];
            for (c, wc) in w.iter().enumerate() {
                for r in 0..=c {
                    *blk.entry_mut(r, c) = LinExpr::var(sj.at(r, c));
                }
                *blk.entry_mut(c, n_x) = wc.clone().compress();
            }
            *blk.entry_mut(n_x, n_x) = LinExpr::constant(T::one());
            p.psds.push(blk);
        }
    }

    // Joint input/state blocks [[Σ̄_u, Σ̄_ux], [Σ̄_uxᵀ, Σ̄_x]] ⪰ 0.
    for k in 0..n {
        let mut blk = PsdBlock::new(format!("joint[{k}]"), n_u + n_x);
        for c in 0..n_u {
            for r in 0..=c {
                *blk.entry_mut(r, c) = LinExpr::var(l.sigma_u[k].at(r, c));
            }
        }
        for c in 0..n_x {
            for r in 0..n_u {
                *blk.entry_mut(r, n_u + c) = LinExpr::var(l.sigma_ux[k].at(r, c));
            }
            for r in 0..=c {
                *blk.entry_mut(n_u + r, n_u + c) = LinExpr::var(l.sigma_x[k].at(r, c));
            }
        }
        p.psds.push(blk);
    }

    let sigma_f = instance.sigma_f_effective();
    let mut terminal = PsdBlock::new("terminal", n_x);
    for c in 0..n_x {
        for r in 0..=c {
            let mut e = LinExpr::constant(sigma_f[(r, c)]);
            e.add_term(l.sigma_x[n].at(r, c), -T::one());
            *terminal.entry_mut(r, c) = e;
        }
    }
    p.psds.push(terminal);

    // Tangent-tightened chance constraints.
    let tangent_rows =
        |constraints: &[crate::model::HalfspaceConstraint<T>], lambdas: &[Vec<T>], mean: &[usize], cov: &[SymVar]| {
            let mut rows = Vec::new();
            for (con, lam) in constraints.iter().zip(lambdas) {
                for k in 0..n {
                    let (offset, slope) = tangent_coefficients(con, lam[k]);
                    let mut e = LinExpr::constant(offset - con.beta);
                    for (a, &coef) in con.alpha.iter().enumerate() {
                        e.add_term(mean[k] + a, coef);
                    }
                    let s = cov[k];
                    for c in 0..s.n {
                        for r in 0..=c {
                            let mut coef = con.alpha[r] * con.alpha[c];
                            if r != c {
                                coef += coef;
                            }
                            e.add_term(s.at(r, c), coef * slope);
                        }
                    }
                    rows.push(e.compress());
                }
            }
            rows
        };
    p.inequalities.push(RowBlock {
        label: "state chance".into(),
        rows: tangent_rows(
            &instance.chance.state_constraints,
            &schedule.lambda_state,
            &l.x_bar,
            &l.sigma_x,
        ),
    });
    p.inequalities.push(RowBlock {
        label: "input chance".into(),
        rows: tangent_rows(
            &instance.chance.input_constraints,
            &schedule.lambda_input,
            &l.u_bar,
            &l.sigma_u,
        ),
    });

    // Objective: covariance traces plus SOC epigraphs of the mean costs.
    let mut obj = LinExpr::default();
    for k in 0..n {
        let q = linalg::clamp_psd("cost.Q", instance.cost.q_at(k))?;
        let r = linalg::clamp_psd("cost.R", instance.cost.r_at(k))?;
        add_trace(&mut obj, &q, l.sigma_x[k]);
        add_trace(&mut obj, &r, l.sigma_u[k]);
        obj.add_term(l.t[k], T::one());
        obj.add_term(l.s[k], T::one());
        let fq = linalg::psd_factor("cost.Q", &q)?;
        let fr = linalg::psd_factor("cost.R", &r)?;
        p.socs
            .push(epigraph(format!("state cost[{k}]"), l.t[k], &fq, l.x_bar[k]));
        p.socs
            .push(epigraph(format!("input cost[{k}]"), l.s[k], &fr, l.u_bar[k]));
    }
    p.objective = obj.compress();

    debug_assert!(p.well_formed().is_ok());
    Ok(p)
}

/// `tr(W S)` for symmetric `W` and variable `S`.
fn add_trace<T: Scalar>(e: &mut LinExpr<T>, w: &DMatrix<T>, s: SymVar) {
    for c in 0..s.n {
        for r in 0..=c {
            let coef = if r == c { w[(r, r)] } else { w[(r, c)] + w[(c, r)] };
            e.add_term(s.at(r, c), coef);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BoundaryMoments, ChanceSpec, CostWeights, SystemModel};
    use crate::reference;

    fn assignment_for_sym(z: &mut [f64], s: SymVar, m: &DMatrix<f64>) {
        for c in 0..s.n {
            for r in 0..=c {
                z[s.at(r, c)] = m[(r, c)];
            }
        }
    }

    #[test]
    fn benchmark_block_census() {
        let inst = reference::double_integrator::<f64>(1.0).with_sigma_f_regularization(1e-4);
        let sched = LinearizationSchedule::interpolated(&inst).unwrap();
        let p = assemble(&inst, &sched).unwrap();
        let census = p.census();
        assert_eq!(census.psd_dims.get(&6), Some(&50));
        assert_eq!(census.psd_dims.get(&5), Some(&100));
        assert_eq!(census.psd_dims.get(&4), Some(&1));
        assert_eq!(census.psd_dims.values().sum::<usize>(), 151);
        assert_eq!(census.inequality_rows, 100);
        // 50 mean steps of (4 + 2) rows, 50 covariance steps of 10 rows, and
        // 4 + 10 + 4 boundary rows.
        assert_eq!(census.equality_rows, 50 * 6 + 50 * 10 + 18);
        assert!(p.well_formed().is_ok());
    }

    #[test]
    fn deterministic_scalar_case_has_no_channel_terms() {
        let model = SystemModel::deterministic(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::zeros(1),
        );
        let inst = ProblemInstance {
            model,
            boundary: BoundaryMoments {
                mu_i: DVector::from_element(1, 1.0),
                sigma_i: DMatrix::from_element(1, 1, 1.0),
                mu_f: DVector::zeros(1),
                sigma_f: DMatrix::from_element(1, 1, 10.0),
                horizon: 1,
            },
            chance: ChanceSpec::unconstrained(),
            cost: CostWeights::constant(DMatrix::identity(1, 1), DMatrix::identity(1, 1)),
            sigma_f_regularization: 0.0,
        };
        let sched = LinearizationSchedule::interpolated(&inst).unwrap();
        let p = assemble(&inst, &sched).unwrap();
        assert!(p.var_map.iter().all(|r| !r.name.starts_with("Sigma_bar_j")));
        assert_eq!(p.census().psd_dims.get(&2), Some(&1));
        assert_eq!(p.inequality_rows(), 0);
        let cov = &p
            .equalities
            .iter()
            .find(|b| b.label == "covariance recursion")
            .unwrap()
            .rows;
        assert_eq!(cov.len(), 1);
        // Σ̄_x₁ = Σ̄_x₀ + 2Σ̄_ux₀ + Σ̄_u₀
        let mut coefs: Vec<f64> = cov[0].terms.iter().map(|t| t.1).collect();
        coefs.sort_by(f64::total_cmp);
        assert_eq!(coefs, vec![-1.0, 1.0, 1.0, 2.0]);
    }

    #[test]
    fn covariance_rows_vanish_at_exact_moments() {
        // Exact moments of any policy satisfy the relaxed recursion when
        // Σ̄_jk = w wᵀ and the joint blocks are the true ones.
        let inst = reference::double_integrator::<f64>(0.5).with_sigma_f_regularization(1e-4);
        let model = &inst.model;
        let n = inst.horizon();
        let mut policy = crate::moments::Policy::zero(4, 2, n);
        for k in 0..n {
            policy.gains[k] = DMatrix::from_fn(2, 4, |i, j| 0.1 * (i as f64 + 1.0) - 0.05 * j as f64 - 0.01 * k as f64);
            policy.feedforward[k] = DVector::from_vec(vec![0.2, -0.1 * k as f64 / n as f64]);
        }
        let traj = crate::moments::propagate(model, &policy, &inst.boundary.mu_i, &inst.boundary.sigma_i).unwrap();
        let sched = LinearizationSchedule::interpolated(&inst).unwrap();
        let p = assemble(&inst, &sched).unwrap();
        let mut z = vec![0.0; p.num_vars];
        let idx = |name: String| p.range(&name).unwrap().start;
        for k in 0..=n {
            let xs = idx(name_x_bar(k));
            z[xs..xs + 4].copy_from_slice(traj.x_bar[k].as_slice());
            assignment_for_sym(
                &mut z,
                SymVar {
                    start: idx(name_sigma_x(k)),
                    n: 4,
                },
                &traj.sigma_x[k],
            );
        }
        for k in 0..n {
            for name in [name_c(k), name_u_bar(k)] {
                let s = idx(name);
                z[s..s + 2].copy_from_slice(traj.u_bar[k].as_slice());
            }
            assignment_for_sym(
                &mut z,
                SymVar {
                    start: idx(name_sigma_u(k)),
                    n: 2,
                },
                &traj.sigma_u[k],
            );
            let ux = idx(name_sigma_ux(k));
            for r in 0..2 {
                for c in 0..4 {
                    z[ux + r * 4 + c] = traj.sigma_xu[k][(c, r)];
                }
            }
            for j in 0..2 {
                let w = model.channel_offset(j, &traj.x_bar[k], &traj.u_bar[k]);
                assignment_for_sym(
                    &mut z,
                    SymVar {
                        start: idx(name_sigma_j(j, k)),
                        n: 4,
                    },
                    &(&w * w.transpose()),
                );
            }
        }
        let cov = &p
            .equalities
            .iter()
            .find(|b| b.label == "covariance recursion")
            .unwrap()
            .rows;
        let mean = &p.equalities.iter().find(|b| b.label == "mean recursion").unwrap().rows;
        for e in cov.iter().chain(mean) {
            assert!(e.eval(&z).abs() < 1e-12, "{}", e.eval(&z));
        }
        for blk in p
            .psds
            .iter()
            .filter(|b| b.label.starts_with("channel") || b.label.starts_with("joint"))
        {
            assert!(linalg::min_eigenvalue(&blk.eval(&z)) > -1e-12, "{}", blk.label);
        }
    }

    #[test]
    fn schedule_shape_is_checked() {
        let inst = reference::double_integrator::<f64>(0.1);
        let mut sched = LinearizationSchedule::interpolated(&inst).unwrap();
        sched.lambda_state[0].pop();
        assert!(matches!(assemble(&inst, &sched), Err(Error::Dimension { .. })));
        let mut sched = LinearizationSchedule::interpolated(&inst).unwrap();
        sched.lambda_state[1][3] = 0.0;
        assert!(matches!(assemble(&inst, &sched), Err(Error::Invariant { .. })));
    }
}
