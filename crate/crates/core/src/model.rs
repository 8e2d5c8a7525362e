//! Problem data: the uncertain linear system, boundary moments, chance
//! constraints and quadratic cost, plus JSON ingestion and validation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, PSD_CLAMP};
use crate::scalar::Scalar;
use crate::tighten;

/// Constant dynamics `Ā, B̄, d̄` plus `m` scalar noise channels, each
/// scaling the triple `(Ãⱼ, B̃ⱼ, d̃ⱼ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel<T: Scalar> {
    pub a_bar: DMatrix<T>,
    pub b_bar: DMatrix<T>,
    pub d_bar: DVector<T>,
    pub a_tilde: Vec<DMatrix<T>>,
    pub b_tilde: Vec<DMatrix<T>>,
    pub d_tilde: Vec<DVector<T>>,
}

impl<T: Scalar> SystemModel<T> {
    pub fn n_x(&self) -> usize {
        self.a_bar.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b_bar.ncols()
    }

    /// Number of disturbance channels.
    pub fn m(&self) -> usize {
        self.d_tilde.len()
    }

    /// Deterministic model (`m = 0`).
    pub fn deterministic(a_bar: DMatrix<T>, b_bar: DMatrix<T>, d_bar: DVector<T>) -> Self {
        Self {
            a_bar,
            b_bar,
            d_bar,
            a_tilde: Vec::new(),
            b_tilde: Vec::new(),
            d_tilde: Vec::new(),
        }
    }

    /// Noise-channel mean offset `Ãⱼx̄ + B̃ⱼū + d̃ⱼ`.
    pub fn channel_offset(&self, j: usize, x_bar: &DVector<T>, u_bar: &DVector<T>) -> DVector<T> {
        &self.a_tilde[j] * x_bar + &self.b_tilde[j] * u_bar + &self.d_tilde[j]
    }

    fn check_dims(&self, out: &mut Vec<Violation>) {
        let n = self.n_x();
        let nu = self.n_u();
        if self.a_bar.ncols() != n {
            out.push(Violation::dim("system.A_bar", format!("{n}x{n}"), shape(&self.a_bar)));
        }
        if self.b_bar.nrows() != n {
            out.push(Violation::dim("system.B_bar", format!("{n}x{nu}"), shape(&self.b_bar)));
        }
        if self.d_bar.len() != n {
            out.push(Violation::dim("system.d_bar", n, self.d_bar.len()));
        }
        let m = self.m();
        if self.a_tilde.len() != m || self.b_tilde.len() != m {
            out.push(Violation::dim(
                "system.A_tilde/B_tilde",
                format!("{m} channels"),
                format!("{} and {}", self.a_tilde.len(), self.b_tilde.len()),
            ));
        }
        for (j, a) in self.a_tilde.iter().enumerate() {
            if a.nrows() != n || a.ncols() != n {
                out.push(Violation::dim(
                    format!("system.A_tilde[{j}]"),
                    format!("{n}x{n}"),
                    shape(a),
                ));
            }
        }
        for (j, b) in self.b_tilde.iter().enumerate() {
            if b.nrows() != n || b.ncols() != nu {
                out.push(Violation::dim(
                    format!("system.B_tilde[{j}]"),
                    format!("{n}x{nu}"),
                    shape(b),
                ));
            }
        }
        for (j, d) in self.d_tilde.iter().enumerate() {
            if d.len() != n {
                out.push(Violation::dim(format!("system.d_tilde[{j}]"), n, d.len()));
            }
        }
        let finite = linalg::all_finite(&self.a_bar)
            && linalg::all_finite(&self.b_bar)
            && self.d_bar.iter().all(|v| v.is_finite_value())
            && self.a_tilde.iter().all(linalg::all_finite)
            && self.b_tilde.iter().all(linalg::all_finite)
            && self.d_tilde.iter().all(|d| d.iter().all(|v| v.is_finite_value()));
        if !finite {
            out.push(Violation::invariant("system", "non-finite matrix entry"));
        }
    }
}

fn shape<T: Scalar>(m: &DMatrix<T>) -> String {
    format!("{}x{}", m.nrows(), m.ncols())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryMoments<T: Scalar> {
    pub mu_i: DVector<T>,
    pub sigma_i: DMatrix<T>,
    pub mu_f: DVector<T>,
    pub sigma_f: DMatrix<T>,
    /// Horizon length `N` in steps.
    pub horizon: usize,
}

/// Halfspace `αᵀv ≤ β` that must hold with probability at least `1 − p`.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfspaceConstraint<T: Scalar> {
    pub alpha: DVector<T>,
    pub beta: T,
    pub p: T,
}

impl<T: Scalar> HalfspaceConstraint<T> {
    pub fn new(alpha: DVector<T>, beta: T, p: T) -> Self {
        Self { alpha, beta, p }
    }

    /// Cantelli multiplier `√((1 − p)/p)`.
    pub fn cantelli_factor(&self) -> T {
        ((T::one() - self.p) / self.p).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChanceSpec<T: Scalar> {
    pub state_constraints: Vec<HalfspaceConstraint<T>>,
    pub input_constraints: Vec<HalfspaceConstraint<T>>,
    pub p_x_total: T,
    pub p_u_total: T,
}

impl<T: Scalar> ChanceSpec<T> {
    pub fn unconstrained() -> Self {
        Self {
            state_constraints: Vec::new(),
            input_constraints: Vec::new(),
            p_x_total: T::lit(0.25),
            p_u_total: T::lit(0.25),
        }
    }
}

/// Stage cost `xᵀQₖx + uᵀRₖu`. Per-step sequences override the constant
/// pair when present.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights<T: Scalar> {
    pub q: DMatrix<T>,
    pub r: DMatrix<T>,
    pub q_seq: Option<Vec<DMatrix<T>>>,
    pub r_seq: Option<Vec<DMatrix<T>>>,
}

impl<T: Scalar> CostWeights<T> {
    pub fn constant(q: DMatrix<T>, r: DMatrix<T>) -> Self {
        Self {
            q,
            r,
            q_seq: None,
            r_seq: None,
        }
    }

    pub fn q_at(&self, k: usize) -> &DMatrix<T> {
        self.q_seq.as_ref().and_then(|s| s.get(k)).unwrap_or(&self.q)
    }

    pub fn r_at(&self, k: usize) -> &DMatrix<T> {
        self.r_seq.as_ref().and_then(|s| s.get(k)).unwrap_or(&self.r)
    }

    fn all_q(&self) -> impl Iterator<Item = (String, &DMatrix<T>)> {
        std::iter::once(("cost.Q".to_string(), &self.q)).chain(
            self.q_seq
                .iter()
                .flatten()
                .enumerate()
                .map(|(k, q)| (format!("cost.Q_k[{k}]"), q)),
        )
    }

    fn all_r(&self) -> impl Iterator<Item = (String, &DMatrix<T>)> {
        std::iter::once(("cost.R".to_string(), &self.r)).chain(
            self.r_seq
                .iter()
                .flatten()
                .enumerate()
                .map(|(k, r)| (format!("cost.R_k[{k}]"), r)),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance<T: Scalar> {
    pub model: SystemModel<T>,
    pub boundary: BoundaryMoments<T>,
    pub chance: ChanceSpec<T>,
    pub cost: CostWeights<T>,
    /// `ε` in `Σ_F + ε·I`; zero keeps the terminal bound as given.
    pub sigma_f_regularization: T,
}

impl<T: Scalar> ProblemInstance<T> {
    pub fn horizon(&self) -> usize {
        self.boundary.horizon
    }

    /// Terminal covariance bound actually imposed: `Σ_F + ε·I`.
    pub fn sigma_f_effective(&self) -> DMatrix<T> {
        let n = self.boundary.sigma_f.nrows();
        &self.boundary.sigma_f + DMatrix::identity(n, n) * self.sigma_f_regularization
    }

    pub fn with_sigma_f_regularization(&self, eps: T) -> Self {
        Self {
            sigma_f_regularization: eps,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ViolationKind {
    Dimension,
    Invariant,
}

/// One violated invariant, naming the offending field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: String,
    pub kind: ViolationKind,
    pub message: String,
}

impl Violation {
    fn dim(field: impl Into<String>, expected: impl ToString, found: impl ToString) -> Self {
        Self {
            field: field.into(),
            kind: ViolationKind::Dimension,
            message: format!("expected {}, found {}", expected.to_string(), found.to_string()),
        }
    }

    fn invariant(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            kind: ViolationKind::Invariant,
            message: message.into(),
        }
    }

    pub fn into_error(self) -> Error {
        match self.kind {
            ViolationKind::Dimension => Error::Dimension {
                field: self.field,
                expected: String::new(),
                found: self.message,
            },
            ViolationKind::Invariant => Error::Invariant {
                field: self.field,
                message: self.message,
            },
        }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn symmetric_tol<T: Scalar>(m: &DMatrix<T>) -> T {
    T::lit(1e-9) * (T::one() + m.abs().max())
}

/// Lists every violated invariant of `instance`; empty when valid.
pub fn validate<T: Scalar>(instance: &ProblemInstance<T>) -> Vec<Violation> {
    let mut out = Vec::new();
    let model = &instance.model;
    model.check_dims(&mut out);
    let n = model.n_x();
    let nu = model.n_u();

    let b = &instance.boundary;
    if b.horizon < 1 {
        out.push(Violation::invariant("boundary.N", "horizon must be at least 1"));
    }
    if b.mu_i.len() != n {
        out.push(Violation::dim("boundary.mu_I", n, b.mu_i.len()));
    }
    if b.mu_f.len() != n {
        out.push(Violation::dim("boundary.mu_F", n, b.mu_f.len()));
    }
    if b.mu_i.iter().chain(b.mu_f.iter()).any(|v| !v.is_finite_value()) {
        out.push(Violation::invariant("boundary", "non-finite mean entry"));
    }
    for (field, s) in [("Sigma_I", &b.sigma_i), ("Sigma_F", &b.sigma_f)] {
        let path = format!("boundary.{field}");
        if s.nrows() != n || s.ncols() != n {
            out.push(Violation::dim(path, format!("{n}x{n}"), shape(s)));
            continue;
        }
        if !linalg::all_finite(s) {
            out.push(Violation::invariant(path, "non-finite entry"));
            continue;
        }
        if linalg::max_asymmetry(s) > symmetric_tol(s) {
            out.push(Violation::invariant(path, format!("{field} not symmetric")));
            continue;
        }
        let min_eig = linalg::min_eigenvalue(s);
        if field == "Sigma_I" && min_eig <= T::zero() {
            out.push(Violation::invariant(path, "Sigma_I not positive definite"));
        } else if field == "Sigma_F" && min_eig < T::lit(-PSD_CLAMP) {
            out.push(Violation::invariant(path, "Sigma_F not positive semidefinite"));
        }
    }
    if !(instance.sigma_f_regularization >= T::zero()) {
        out.push(Violation::invariant(
            "sigma_f_regularization",
            "regularization must be nonnegative",
        ));
    }

    let c = &instance.chance;
    check_group(&mut out, "state", &c.state_constraints, n, c.p_x_total, "p_x");
    check_group(&mut out, "input", &c.input_constraints, nu, c.p_u_total, "p_u");

    let cost = &instance.cost;
    for (field, q) in cost.all_q() {
        check_weight(&mut out, &field, q, n);
    }
    for (field, r) in cost.all_r() {
        check_weight(&mut out, &field, r, nu);
    }
    for (field, seq) in [("cost.Q_k", &cost.q_seq), ("cost.R_k", &cost.r_seq)] {
        if let Some(s) = seq {
            if s.len() != b.horizon {
                out.push(Violation::dim(field, b.horizon, s.len()));
            }
        }
    }
    out
}

fn check_group<T: Scalar>(
    out: &mut Vec<Violation>,
    kind: &str,
    cons: &[HalfspaceConstraint<T>],
    dim: usize,
    total: T,
    total_name: &str,
) {
    let total_field = format!("chance.{total_name}_total");
    let half = T::lit(0.5);
    if !(total > T::zero() && total < half) {
        out.push(Violation::invariant(
            &total_field,
            format!("{total_name} must lie in (0, 0.5)"),
        ));
    }
    let mut sum = T::zero();
    for (i, con) in cons.iter().enumerate() {
        let field = format!("chance.{kind}_constraints[{i}]");
        if con.alpha.len() != dim {
            out.push(Violation::dim(format!("{field}.alpha"), dim, con.alpha.len()));
        }
        if !con.alpha.iter().all(|v| v.is_finite_value()) || !con.beta.is_finite_value() {
            out.push(Violation::invariant(&field, "non-finite coefficient"));
        }
        if con.alpha.iter().all(|v| *v == T::zero()) {
            out.push(Violation::invariant(
                format!("{field}.alpha"),
                format!("{kind} constraint {i} has a zero alpha vector"),
            ));
        }
        if con.beta < T::zero() {
            out.push(Violation::invariant(
                format!("{field}.beta"),
                "beta must be nonnegative",
            ));
        }
        if !(con.p > T::zero() && con.p < half) {
            out.push(Violation::invariant(format!("{field}.p"), "p must lie in (0, 0.5)"));
        }
        sum += con.p;
    }
    // Summation noise from a uniform split must not trip the budget check.
    if sum > total * (T::one() + T::lit(1e-12)) {
        out.push(Violation::invariant(
            total_field,
            format!("risk budget exceeded: sum of {kind} p_i = {sum} > {total}"),
        ));
    }
}

fn check_weight<T: Scalar>(out: &mut Vec<Violation>, field: &str, w: &DMatrix<T>, dim: usize) {
    if w.nrows() != dim || w.ncols() != dim {
        out.push(Violation::dim(field, format!("{dim}x{dim}"), shape(w)));
        return;
    }
    if !linalg::all_finite(w) {
        out.push(Violation::invariant(field, "non-finite entry"));
        return;
    }
    if linalg::max_asymmetry(w) > symmetric_tol(w) {
        out.push(Violation::invariant(field, "weight not symmetric"));
        return;
    }
    if linalg::min_eigenvalue(w) < T::lit(-PSD_CLAMP) {
        out.push(Violation::invariant(field, "weight not positive semidefinite"));
    }
}

/// Planning model that ignores the multiplicative channels: every `Ãⱼ` and
/// `B̃ⱼ` is zeroed while the additive `d̃ⱼ` are retained.
pub fn naive_variant<T: Scalar>(instance: &ProblemInstance<T>) -> ProblemInstance<T> {
    let mut out = instance.clone();
    for a in &mut out.model.a_tilde {
        a.fill(T::zero());
    }
    for b in &mut out.model.b_tilde {
        b.fill(T::zero());
    }
    out
}

// ---------------------------------------------------------------------------
// JSON document
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemDoc {
    #[serde(rename = "A_bar")]
    pub a_bar: Vec<Vec<f64>>,
    #[serde(rename = "B_bar")]
    pub b_bar: Vec<Vec<f64>>,
    pub d_bar: Vec<f64>,
    #[serde(rename = "A_tilde", default)]
    pub a_tilde: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "B_tilde", default)]
    pub b_tilde: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub d_tilde: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryDoc {
    #[serde(rename = "mu_I")]
    pub mu_i: Vec<f64>,
    #[serde(rename = "Sigma_I")]
    pub sigma_i: Vec<Vec<f64>>,
    #[serde(rename = "mu_F")]
    pub mu_f: Vec<f64>,
    #[serde(rename = "Sigma_F")]
    pub sigma_f: Vec<Vec<f64>>,
    #[serde(rename = "N")]
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintDoc {
    pub alpha: Vec<f64>,
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChanceDoc {
    pub p_x_total: f64,
    pub p_u_total: f64,
    #[serde(default)]
    pub state_constraints: Vec<ConstraintDoc>,
    #[serde(default)]
    pub input_constraints: Vec<ConstraintDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostDoc {
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    #[serde(rename = "Q_k", default, skip_serializing_if = "Option::is_none")]
    pub q_k: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(rename = "R_k", default, skip_serializing_if = "Option::is_none")]
    pub r_k: Option<Vec<Vec<Vec<f64>>>>,
}

/// On-disk configuration document. Matrices are arrays of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDoc {
    pub system: SystemDoc,
    pub boundary: BoundaryDoc,
    pub chance: ChanceDoc,
    pub cost: CostDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_f_regularization: Option<f64>,
}

/// Parses and validates a JSON configuration.
///
/// Constraints without an explicit `p` share whatever budget the explicit
/// ones leave, split uniformly (all omitted means `p_total / count`).
/// `Q` and `R` eigenvalues in `[-1e-10, 0)` are clamped to zero.
pub fn load_config<T: Scalar>(text: &str) -> Result<ProblemInstance<T>> {
    let doc: ConfigDoc = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    instance_from_doc(&doc)
}

pub fn instance_from_doc<T: Scalar>(doc: &ConfigDoc) -> Result<ProblemInstance<T>> {
    let s = &doc.system;
    let n_x = s.a_bar.len();
    let a_bar = linalg::from_rows("system.A_bar", &s.a_bar, n_x)?;
    let b_bar = linalg::from_rows("system.B_bar", &s.b_bar, 0)?;
    let n_u = b_bar.ncols();
    let model = SystemModel {
        a_bar,
        b_bar,
        d_bar: linalg::from_list("system.d_bar", &s.d_bar)?,
        a_tilde: s
            .a_tilde
            .iter()
            .enumerate()
            .map(|(j, m)| linalg::from_rows(&format!("system.A_tilde[{j}]"), m, n_x))
            .collect::<Result<_>>()?,
        b_tilde: s
            .b_tilde
            .iter()
            .enumerate()
            .map(|(j, m)| linalg::from_rows(&format!("system.B_tilde[{j}]"), m, n_u))
            .collect::<Result<_>>()?,
        d_tilde: s
            .d_tilde
            .iter()
            .enumerate()
            .map(|(j, v)| linalg::from_list(&format!("system.d_tilde[{j}]"), v))
            .collect::<Result<_>>()?,
    };

    let b = &doc.boundary;
    let boundary = BoundaryMoments {
        mu_i: linalg::from_list("boundary.mu_I", &b.mu_i)?,
        sigma_i: linalg::from_rows("boundary.Sigma_I", &b.sigma_i, n_x)?,
        mu_f: linalg::from_list("boundary.mu_F", &b.mu_f)?,
        sigma_f: linalg::from_rows("boundary.Sigma_F", &b.sigma_f, n_x)?,
        horizon: b.n,
    };

    let c = &doc.chance;
    let chance = ChanceSpec {
        state_constraints: constraints_from_doc("state", &c.state_constraints, c.p_x_total)?,
        input_constraints: constraints_from_doc("input", &c.input_constraints, c.p_u_total)?,
        p_x_total: T::lit(c.p_x_total),
        p_u_total: T::lit(c.p_u_total),
    };

    let seq = |name: &str, s: &Option<Vec<Vec<Vec<f64>>>>, dim: usize| -> Result<Option<Vec<DMatrix<T>>>> {
        s.as_ref()
            .map(|mats| {
                mats.iter()
                    .enumerate()
                    .map(|(k, m)| linalg::from_rows(&format!("cost.{name}[{k}]"), m, dim))
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()
    };
    let cost = CostWeights {
        q: linalg::from_rows("cost.Q", &doc.cost.q, n_x)?,
        r: linalg::from_rows("cost.R", &doc.cost.r, n_u)?,
        q_seq: seq("Q_k", &doc.cost.q_k, n_x)?,
        r_seq: seq("R_k", &doc.cost.r_k, n_u)?,
    };

    let instance = ProblemInstance {
        model,
        boundary,
        chance,
        cost,
        sigma_f_regularization: T::lit(doc.sigma_f_regularization.unwrap_or(0.0)),
    };
    if let Some(v) = validate(&instance).into_iter().next() {
        return Err(v.into_error());
    }
    clamp_weights(instance)
}

fn clamp_weights<T: Scalar>(mut instance: ProblemInstance<T>) -> Result<ProblemInstance<T>> {
    let cost = &mut instance.cost;
    cost.q = linalg::clamp_psd("cost.Q", &cost.q)?;
    cost.r = linalg::clamp_psd("cost.R", &cost.r)?;
    if let Some(s) = cost.q_seq.as_mut() {
        for q in s.iter_mut() {
            *q = linalg::clamp_psd("cost.Q_k", q)?;
        }
    }
    if let Some(s) = cost.r_seq.as_mut() {
        for r in s.iter_mut() {
            *r = linalg::clamp_psd("cost.R_k", r)?;
        }
    }
    Ok(instance)
}

fn constraints_from_doc<T: Scalar>(
    kind: &str,
    docs: &[ConstraintDoc],
    total: f64,
) -> Result<Vec<HalfspaceConstraint<T>>> {
    let explicit: f64 = docs.iter().filter_map(|d| d.p).sum();
    let omitted = docs.iter().filter(|d| d.p.is_none()).count();
    let shares = if omitted == 0 {
        Vec::new()
    } else {
        let total_name = if kind == "state" { "p_x" } else { "p_u" };
        if !(total > 0.0 && total < 0.5) {
            return Err(Error::invariant(
                format!("chance.{total_name}_total"),
                format!("{total_name} must lie in (0, 0.5)"),
            ));
        }
        let remaining = total - explicit;
        if !(remaining > 0.0) {
            return Err(Error::invariant(
                format!("chance.{kind}_constraints"),
                format!("risk budget exceeded: nothing left to split among {omitted} constraints"),
            ));
        }
        tighten::allocate_risk(remaining, omitted, None)
            .map_err(|e| Error::invariant(format!("chance.{kind}_constraints"), e.to_string()))?
    };
    let mut shares = shares.into_iter();
    docs.iter()
        .enumerate()
        .map(|(i, d)| {
            let p = match d.p {
                Some(p) => p,
                None => shares.next().expect("one share per omitted p"),
            };
            Ok(HalfspaceConstraint {
                alpha: linalg::from_list(&format!("chance.{kind}_constraints[{i}].alpha"), &d.alpha)?,
                beta: T::lit(d.beta),
                p: T::lit(p),
            })
        })
        .collect()
}

/// Inverse of [`instance_from_doc`]; every constraint carries its resolved `p`.
pub fn to_doc<T: Scalar>(instance: &ProblemInstance<T>) -> ConfigDoc {
    let m = &instance.model;
    let b = &instance.boundary;
    let c = &instance.chance;
    let cons = |v: &[HalfspaceConstraint<T>]| {
        v.iter()
            .map(|h| ConstraintDoc {
                alpha: linalg::to_list(&h.alpha),
                beta: h.beta.as_f64(),
                p: Some(h.p.as_f64()),
            })
            .collect()
    };
    let seq = |s: &Option<Vec<DMatrix<T>>>| s.as_ref().map(|v| v.iter().map(linalg::to_rows).collect());
    let eps = instance.sigma_f_regularization.as_f64();
    ConfigDoc {
        system: SystemDoc {
            a_bar: linalg::to_rows(&m.a_bar),
            b_bar: linalg::to_rows(&m.b_bar),
            d_bar: linalg::to_list(&m.d_bar),
            a_tilde: m.a_tilde.iter().map(linalg::to_rows).collect(),
            b_tilde: m.b_tilde.iter().map(linalg::to_rows).collect(),
            d_tilde: m.d_tilde.iter().map(linalg::to_list).collect(),
        },
        boundary: BoundaryDoc {
            mu_i: linalg::to_list(&b.mu_i),
            sigma_i: linalg::to_rows(&b.sigma_i),
            mu_f: linalg::to_list(&b.mu_f),
            sigma_f: linalg::to_rows(&b.sigma_f),
            n: b.horizon,
        },
        chance: ChanceDoc {
            p_x_total: c.p_x_total.as_f64(),
            p_u_total: c.p_u_total.as_f64(),
            state_constraints: cons(&c.state_constraints),
            input_constraints: cons(&c.input_constraints),
        },
        cost: CostDoc {
            q: linalg::to_rows(&instance.cost.q),
            r: linalg::to_rows(&instance.cost.r),
            q_k: seq(&instance.cost.q_seq),
            r_k: seq(&instance.cost.r_seq),
        },
        sigma_f_regularization: Some(eps),
    }
}

pub fn serialize_config<T: Scalar>(instance: &ProblemInstance<T>) -> String {
    serde_json::to_string_pretty(&to_doc(instance)).expect("config document serializes")
}
