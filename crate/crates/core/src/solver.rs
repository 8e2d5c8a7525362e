//! Conic optimizer contract and the Clarabel adapter.
//!
//! Clarabel solves `min qᵀx  s.t.  Ax + s = b,  s ∈ K`. Every constraint of
//! a [`ConicProgram`] is an affine expression `e(z) = aᵀz + c`:
//!
//! * `e = 0` and `e ≤ 0` both become the row `a` with right-hand side `−c`
//!   in the zero or nonnegative cone (`s = −e`);
//! * cone memberships `e ∈ K` become the row `−a` with right-hand side `c`
//!   (`s = e`).
//!
//! PSD blocks use Clarabel's scaled triangle: upper triangle by columns with
//! off-diagonal entries multiplied by `√2`.

use std::time::Instant;

use clarabel::algebra::{CscMatrix, FloatT};
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus as ClarabelStatus, SupportedConeT,
};
use serde::{Deserialize, Serialize};

// Links the system OpenBLAS used by Clarabel's dense PSD kernels.
use openblas_src as _;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sdp::program::{triangle_index, triangle_len, ConicProgram, LinExpr};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iterations: u32,
    pub verbose: bool,
    pub time_limit_seconds: Option<f64>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            abs_tol: 1e-8,
            rel_tol: 1e-8,
            max_iterations: 20_000,
            verbose: false,
            time_limit_seconds: None,
        }
    }
}

impl SolverSettings {
    pub fn check(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(Error::invariant("solver settings", "tolerances must be positive"));
        }
        if let Some(t) = self.time_limit_seconds {
            if !(t > 0.0) {
                return Err(Error::invariant("solver settings", "time limit must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    PrimalInfeasible,
    /// Unbounded primal.
    DualInfeasible,
    NumericalFailure,
    IterationLimit,
    TimeLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveInfo {
    pub status: SolveStatus,
    pub iterations: u32,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub duality_gap: f64,
    pub solve_seconds: f64,
    /// Norm of the infeasibility certificate when one was produced.
    pub certificate_norm: Option<f64>,
    /// Backend-specific status text.
    pub backend_status: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutput<T: Scalar> {
    pub info: SolveInfo,
    /// Primal point; meaningful only for [`SolveStatus::Optimal`].
    pub x: Vec<T>,
    pub objective: T,
}

pub trait SolverBackend<T: Scalar> {
    fn name(&self) -> &'static str;

    fn solve(&self, program: &ConicProgram<T>, settings: &SolverSettings) -> Result<SolveOutput<T>>;
}

/// Adapter to the Clarabel interior-point solver.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClarabelBackend;

/// Scaled-vectorized upper triangle of a symmetric matrix in Clarabel order
/// (off-diagonals times `√2`).
pub fn svec<T: Scalar>(m: &nalgebra::DMatrix<T>) -> Vec<T> {
    let n = m.nrows();
    let r2 = T::lit(std::f64::consts::SQRT_2);
    let mut out = vec![T::zero(); triangle_len(n)];
    for j in 0..n {
        for i in 0..=j {
            out[triangle_index(i, j)] = if i == j { m[(i, j)] } else { m[(i, j)] * r2 };
        }
    }
    out
}

/// Inverse of [`svec`].
pub fn smat<T: Scalar>(v: &[T], n: usize) -> nalgebra::DMatrix<T> {
    let r2 = T::lit(std::f64::consts::SQRT_2);
    nalgebra::DMatrix::from_fn(n, n, |i, j| {
        let x = v[triangle_index(i, j)];
        if i == j {
            x
        } else {
            x / r2
        }
    })
}

struct Triplets<T> {
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<T>,
    rhs: Vec<T>,
}

impl<T: Scalar> Triplets<T> {
    /// Appends `sign·e` as one row with right-hand side `−sign·c`... see
    /// module docs for the two sign conventions.
    fn push(&mut self, e: &LinExpr<T>, row_sign: T, rhs: T) {
        let r = self.rhs.len();
        for &(col, coef) in &e.terms {
            self.rows.push(r);
            self.cols.push(col);
            self.vals.push(coef * row_sign);
        }
        self.rhs.push(rhs);
    }
}

fn csc<T: Scalar + FloatT>(m: usize, n: usize, rows: &[usize], cols: &[usize], vals: &[T]) -> CscMatrix<T> {
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by_key(|&k| (cols[k], rows[k]));
    let mut colptr = vec![0usize; n + 1];
    let mut rowval = Vec::with_capacity(vals.len());
    let mut nzval: Vec<T> = Vec::with_capacity(vals.len());
    let mut last: Option<(usize, usize)> = None;
    for &k in &order {
        let key = (cols[k], rows[k]);
        if last == Some(key) {
            let acc = nzval.last_mut().expect("entry exists");
            *acc += vals[k];
            continue;
        }
        last = Some(key);
        rowval.push(rows[k]);
        nzval.push(vals[k]);
        colptr[cols[k] + 1] += 1;
    }
    for c in 0..n {
        colptr[c + 1] += colptr[c];
    }
    CscMatrix::new(m, n, colptr, rowval, nzval)
}

fn map_status(s: ClarabelStatus) -> SolveStatus {
    match s {
        ClarabelStatus::Solved => SolveStatus::Optimal,
        ClarabelStatus::PrimalInfeasible => SolveStatus::PrimalInfeasible,
        ClarabelStatus::DualInfeasible => SolveStatus::DualInfeasible,
        ClarabelStatus::MaxIterations => SolveStatus::IterationLimit,
        ClarabelStatus::MaxTime => SolveStatus::TimeLimit,
        // Reduced-accuracy outcomes do not meet the configured tolerances.
        _ => SolveStatus::NumericalFailure,
    }
}

impl<T: Scalar + FloatT> SolverBackend<T> for ClarabelBackend {
    fn name(&self) -> &'static str {
        "clarabel"
    }

    fn solve(&self, program: &ConicProgram<T>, settings: &SolverSettings) -> Result<SolveOutput<T>> {
        settings.check()?;
        program.well_formed().map_err(Error::Solver)?;
        let n = program.num_vars;
        let mut t = Triplets {
            rows: Vec::new(),
            cols: Vec::new(),
            vals: Vec::new(),
            rhs: Vec::new(),
        };
        let mut cones: Vec<SupportedConeT<T>> = Vec::new();
        let one = T::one();
        let neg = -T::one();

        let eq = program.equality_rows();
        for row in program.equalities.iter().flat_map(|b| b.rows.iter()) {
            t.push(row, one, -row.constant);
        }
        if eq > 0 {
            cones.push(SupportedConeT::ZeroConeT(eq));
        }
        let ineq = program.inequality_rows();
        for row in program.inequalities.iter().flat_map(|b| b.rows.iter()) {
            t.push(row, one, -row.constant);
        }
        if ineq > 0 {
            cones.push(SupportedConeT::NonnegativeConeT(ineq));
        }
        for soc in &program.socs {
            for e in &soc.exprs {
                t.push(e, neg, e.constant);
            }
            cones.push(SupportedConeT::SecondOrderConeT(soc.exprs.len()));
        }
        let r2 = T::lit(std::f64::consts::SQRT_2);
        for psd in &program.psds {
            for j in 0..psd.dim {
                for i in 0..=j {
                    let e = &psd.entries[triangle_index(i, j)];
                    let scale = if i == j { one } else { r2 };
                    t.push(e, neg * scale, e.constant * scale);
                }
            }
            cones.push(SupportedConeT::PSDTriangleConeT(psd.dim));
        }

        let m = t.rhs.len();
        let a = csc(m, n, &t.rows, &t.cols, &t.vals);
        let p = CscMatrix::<T>::zeros((n, n));
        let mut q = vec![T::zero(); n];
        for &(i, c) in &program.objective.terms {
            q[i] += c;
        }

        let mut builder = DefaultSettingsBuilder::<T>::default();
        builder
            .verbose(settings.verbose)
            .max_iter(settings.max_iterations)
            .tol_gap_abs(T::lit(settings.abs_tol))
            .tol_gap_rel(T::lit(settings.rel_tol))
            .tol_feas(T::lit(settings.abs_tol));
        if let Some(limit) = settings.time_limit_seconds {
            builder.time_limit(limit);
        }
        let clarabel_settings = builder.build().map_err(|e| Error::Solver(e.to_string()))?;

        let started = Instant::now();
        let mut solver = DefaultSolver::new(&p, &q, &a, &t.rhs, &cones, clarabel_settings)
            .map_err(|e| Error::Solver(format!("{e:?}")))?;
        solver.solve();
        let elapsed = started.elapsed().as_secs_f64();

        let sol = &solver.solution;
        let status = map_status(sol.status);
        let certificate_norm = match status {
            SolveStatus::PrimalInfeasible => Some(sol.z.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt()),
            SolveStatus::DualInfeasible => Some(sol.x.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt()),
            _ => None,
        };
        let x = sol.x.clone();
        let objective = program.objective_value(&x);
        let info = SolveInfo {
            status,
            iterations: sol.iterations,
            primal_residual: solver.info.res_primal.as_f64(),
            dual_residual: solver.info.res_dual.as_f64(),
            duality_gap: solver.info.gap_abs.as_f64(),
            solve_seconds: elapsed,
            certificate_norm,
            backend_status: format!("{:?}", sol.status),
        };
        Ok(SolveOutput { info, x, objective })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdp::program::{PsdBlock, RowBlock, SocBlock};
    use nalgebra::DMatrix;

    /// min t  s.t.  [[t, 1], [1, t]] ⪰ 0
    fn psd_boundary(scale: f64) -> ConicProgram<f64> {
        let mut p = ConicProgram::new();
        let t = p.add_vars("t", 1);
        p.objective = LinExpr {
            terms: vec![(t, scale)],
            constant: 0.0,
        };
        let mut blk = PsdBlock::new("2x2", 2);
        *blk.entry_mut(0, 0) = LinExpr::var(t);
        *blk.entry_mut(1, 1) = LinExpr::var(t);
        *blk.entry_mut(0, 1) = LinExpr::constant(1.0);
        p.psds.push(blk);
        p
    }

    /// min x  s.t.  x ≥ 3
    fn halfline(scale: f64) -> ConicProgram<f64> {
        let mut p = ConicProgram::new();
        let x = p.add_vars("x", 1);
        p.objective = LinExpr {
            terms: vec![(x, scale)],
            constant: 0.0,
        };
        p.inequalities.push(RowBlock {
            label: "x >= 3".into(),
            rows: vec![LinExpr {
                terms: vec![(x, -1.0)],
                constant: 3.0,
            }],
        });
        p
    }

    /// min t  s.t.  ‖(3, 4)‖ ≤ t
    fn norm(scale: f64) -> ConicProgram<f64> {
        let mut p = ConicProgram::new();
        let t = p.add_vars("t", 1);
        p.objective = LinExpr {
            terms: vec![(t, scale)],
            constant: 0.0,
        };
        p.socs.push(SocBlock {
            label: "norm".into(),
            exprs: vec![LinExpr::var(t), LinExpr::constant(3.0), LinExpr::constant(4.0)],
        });
        p
    }

    #[test]
    fn trivial_programs_reach_known_optima() {
        let s = SolverSettings::default();
        for (prog, expect) in [(psd_boundary(1.0), 1.0), (halfline(1.0), 3.0), (norm(1.0), 5.0)] {
            let out = ClarabelBackend.solve(&prog, &s).unwrap();
            assert_eq!(out.info.status, SolveStatus::Optimal);
            assert!((out.objective - expect).abs() < 1e-7, "{} vs {expect}", out.objective);
            assert!(out.info.duality_gap <= 1e-7);
            let r = prog.residuals(&out.x);
            assert!(r.max_inequality < 1e-7 && r.max_soc < 1e-7 && r.max_psd < 1e-7);
        }
    }

    #[test]
    fn objective_scaling_scales_the_optimum() {
        let s = SolverSettings::default();
        for build in [psd_boundary as fn(f64) -> ConicProgram<f64>, halfline, norm] {
            let base = ClarabelBackend.solve(&build(1.0), &s).unwrap();
            let big = ClarabelBackend.solve(&build(1e3), &s).unwrap();
            assert_eq!(big.info.status, SolveStatus::Optimal);
            assert!((big.objective - 1e3 * base.objective).abs() <= 1e-6 * big.objective.abs());
            assert!((big.x[0] - base.x[0]).abs() <= 1e-6 * base.x[0].abs());
        }
    }

    #[test]
    fn infeasible_program_is_reported() {
        let mut p = halfline(1.0);
        let x = 0;
        p.inequalities.push(RowBlock {
            label: "x <= 1".into(),
            rows: vec![LinExpr {
                terms: vec![(x, 1.0)],
                constant: -1.0,
            }],
        });
        let out = ClarabelBackend.solve(&p, &SolverSettings::default()).unwrap();
        assert_eq!(out.info.status, SolveStatus::PrimalInfeasible);
        assert!(out.info.certificate_norm.is_some());
    }

    #[test]
    fn unbounded_program_is_reported() {
        let mut p = ConicProgram::<f64>::new();
        let x = p.add_vars("x", 1);
        p.objective = LinExpr {
            terms: vec![(x, 1.0)],
            constant: 0.0,
        };
        let out = ClarabelBackend.solve(&p, &SolverSettings::default()).unwrap();
        assert_eq!(out.info.status, SolveStatus::DualInfeasible);
    }

    #[test]
    fn svec_round_trip_is_exact_on_representable_entries() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, -2.0, 0.5, 3.0, 0.25, -2.0, 0.25, 4.0]);
        let v = svec(&m);
        assert_eq!(v.len(), 6);
        assert_eq!(v[0], 1.0);
        assert_eq!(v[2], 3.0);
        assert!((v[1] - 0.5 * std::f64::consts::SQRT_2).abs() < 1e-16);
        let back = smat(&v, 3);
        assert!((back - m).abs().max() < 1e-15);
    }

    #[test]
    fn repeated_solves_are_deterministic() {
        let a = ClarabelBackend
            .solve(&psd_boundary(1.0), &SolverSettings::default())
            .unwrap();
        let b = ClarabelBackend
            .solve(&psd_boundary(1.0), &SolverSettings::default())
            .unwrap();
        assert_eq!(a.x, b.x);
    }

    #[test]
    fn f32_backend_solves_trivial_program() {
        let mut p = ConicProgram::<f32>::new();
        let x = p.add_vars("x", 1);
        p.objective = LinExpr {
            terms: vec![(x, 1.0)],
            constant: 0.0,
        };
        p.inequalities.push(RowBlock {
            label: "x >= 3".into(),
            rows: vec![LinExpr {
                terms: vec![(x, -1.0)],
                constant: 3.0,
            }],
        });
        let s = SolverSettings {
            abs_tol: 1e-5,
            rel_tol: 1e-5,
            ..Default::default()
        };
        let out = ClarabelBackend.solve(&p, &s).unwrap();
        assert_eq!(out.info.status, SolveStatus::Optimal);
        assert!((out.objective - 3.0).abs() < 1e-3);
    }
}
