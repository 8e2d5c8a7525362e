//! Solver-agnostic conic program: linear objective, affine equalities and
//! inequalities, second-order cones and PSD blocks over one flat variable
//! vector.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::scalar::Scalar;

/// Sparse affine expression `Σ coef·z[var] + constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinExpr<T: Scalar> {
    pub terms: Vec<(usize, T)>,
    pub constant: T,
}

impl<T: Scalar> Default for LinExpr<T> {
    fn default() -> Self {
        Self::constant(T::zero())
    }
}

impl<T: Scalar> LinExpr<T> {
    pub fn constant(c: T) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(index: usize) -> Self {
        Self {
            terms: vec![(index, T::one())],
            constant: T::zero(),
        }
    }

    pub fn add_term(&mut self, index: usize, coef: T) {
        if coef != T::zero() {
            self.terms.push((index, coef));
        }
    }

    pub fn add_scaled(&mut self, other: &LinExpr<T>, scale: T) {
        for &(i, c) in &other.terms {
            self.add_term(i, c * scale);
        }
        self.constant += other.constant * scale;
    }

    /// Merges duplicate indices and drops exact zeros.
    pub fn compress(mut self) -> Self {
        self.terms.sort_by_key(|&(i, _)| i);
        let mut merged: Vec<(usize, T)> = Vec::with_capacity(self.terms.len());
        for (i, c) in self.terms {
            match merged.last_mut() {
                Some((j, acc)) if *j == i => *acc += c,
                _ => merged.push((i, c)),
            }
        }
        merged.retain(|&(_, c)| c != T::zero());
        self.terms = merged;
        self
    }

    pub fn eval(&self, z: &[T]) -> T {
        self.terms.iter().fold(self.constant, |acc, &(i, c)| acc + c * z[i])
    }

    pub fn max_index(&self) -> Option<usize> {
        self.terms.iter().map(|&(i, _)| i).max()
    }
}

/// Labelled group of rows sharing one cone type.
#[derive(Debug, Clone, PartialEq)]
pub struct RowBlock<T: Scalar> {
    pub label: String,
    pub rows: Vec<LinExpr<T>>,
}

/// `exprs[0] ≥ ‖exprs[1..]‖₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct SocBlock<T: Scalar> {
    pub label: String,
    pub exprs: Vec<LinExpr<T>>,
}

/// Symmetric matrix `M(z) ⪰ 0` of size `dim`, stored as its upper triangle
/// column by column: entry `(i, j)`, `i ≤ j`, lives at `j(j+1)/2 + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdBlock<T: Scalar> {
    pub label: String,
    pub dim: usize,
    pub entries: Vec<LinExpr<T>>,
}

#[inline]
pub fn triangle_index(i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    j * (j + 1) / 2 + i
}

#[inline]
pub fn triangle_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

impl<T: Scalar> PsdBlock<T> {
    pub fn new(label: impl Into<String>, dim: usize) -> Self {
        Self {
            label: label.into(),
            dim,
            entries: vec![LinExpr::default(); triangle_len(dim)],
        }
    }

    pub fn entry_mut(&mut self, i: usize, j: usize) -> &mut LinExpr<T> {
        &mut self.entries[triangle_index(i, j)]
    }

    pub fn eval(&self, z: &[T]) -> DMatrix<T> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.entries[triangle_index(i, j)].eval(z))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VarRange {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicProgram<T: Scalar> {
    pub num_vars: usize,
    /// Minimized; the constant is carried into the reported objective.
    pub objective: LinExpr<T>,
    /// Rows constrained to `expr = 0`.
    pub equalities: Vec<RowBlock<T>>,
    /// Rows constrained to `expr ≤ 0`.
    pub inequalities: Vec<RowBlock<T>>,
    pub socs: Vec<SocBlock<T>>,
    pub psds: Vec<PsdBlock<T>>,
    pub var_map: Vec<VarRange>,
}

/// Worst violation of each constraint family at a point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProgramResiduals {
    pub max_equality: f64,
    pub max_inequality: f64,
    pub max_soc: f64,
    /// Most negative eigenvalue over PSD blocks, reported as a nonnegative
    /// violation.
    pub max_psd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockCensus {
    pub num_vars: usize,
    pub equality_rows: usize,
    pub inequality_rows: usize,
    pub soc_dims: BTreeMap<usize, usize>,
    pub psd_dims: BTreeMap<usize, usize>,
}

/// Debug dump of a program's layout.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProgramDump {
    pub var_map: Vec<VarRange>,
    pub census: BlockCensus,
    pub equality_blocks: Vec<(String, usize)>,
    pub inequality_blocks: Vec<(String, usize)>,
}

impl<T: Scalar> ConicProgram<T> {
    pub fn new() -> Self {
        Self {
            num_vars: 0,
            objective: LinExpr::default(),
            equalities: Vec::new(),
            inequalities: Vec::new(),
            socs: Vec::new(),
            psds: Vec::new(),
            var_map: Vec::new(),
        }
    }

    /// Reserves `len` fresh variables under `name` and returns the first index.
    pub fn add_vars(&mut self, name: impl Into<String>, len: usize) -> usize {
        let start = self.num_vars;
        self.var_map.push(VarRange {
            name: name.into(),
            start,
            len,
        });
        self.num_vars += len;
        start
    }

    pub fn range(&self, name: &str) -> Option<&VarRange> {
        self.var_map.iter().find(|r| r.name == name)
    }

    pub fn equality_rows(&self) -> usize {
        self.equalities.iter().map(|b| b.rows.len()).sum()
    }

    pub fn inequality_rows(&self) -> usize {
        self.inequalities.iter().map(|b| b.rows.len()).sum()
    }

    pub fn census(&self) -> BlockCensus {
        let mut soc_dims = BTreeMap::new();
        for s in &self.socs {
            *soc_dims.entry(s.exprs.len()).or_insert(0) += 1;
        }
        let mut psd_dims = BTreeMap::new();
        for p in &self.psds {
            *psd_dims.entry(p.dim).or_insert(0) += 1;
        }
        BlockCensus {
            num_vars: self.num_vars,
            equality_rows: self.equality_rows(),
            inequality_rows: self.inequality_rows(),
            soc_dims,
            psd_dims,
        }
    }

    pub fn dump(&self) -> ProgramDump {
        ProgramDump {
            var_map: self.var_map.clone(),
            census: self.census(),
            equality_blocks: self
                .equalities
                .iter()
                .map(|b| (b.label.clone(), b.rows.len()))
                .collect(),
            inequality_blocks: self
                .inequalities
                .iter()
                .map(|b| (b.label.clone(), b.rows.len()))
                .collect(),
        }
    }

    /// Checks every variable index and PSD block size. Returns the first
    /// problem found.
    pub fn well_formed(&self) -> Result<(), String> {
        let exprs = self
            .equalities
            .iter()
            .chain(&self.inequalities)
            .flat_map(|b| b.rows.iter())
            .chain(self.socs.iter().flat_map(|s| s.exprs.iter()))
            .chain(self.psds.iter().flat_map(|p| p.entries.iter()))
            .chain(std::iter::once(&self.objective));
        for e in exprs {
            if let Some(i) = e.max_index() {
                if i >= self.num_vars {
                    return Err(format!("variable index {i} out of range ({} vars)", self.num_vars));
                }
            }
        }
        for p in &self.psds {
            if p.entries.len() != triangle_len(p.dim) {
                return Err(format!(
                    "PSD block `{}` has {} entries for dim {}",
                    p.label,
                    p.entries.len(),
                    p.dim
                ));
            }
        }
        for s in &self.socs {
            if s.exprs.is_empty() {
                return Err(format!("SOC block `{}` is empty", s.label));
            }
        }
        let mut covered = vec![false; self.num_vars];
        for r in &self.var_map {
            for c in &mut covered[r.start..r.start + r.len] {
                if *c {
                    return Err(format!("variable range `{}` overlaps another", r.name));
                }
                *c = true;
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, z: &[T]) -> T {
        self.objective.eval(z)
    }

    pub fn residuals(&self, z: &[T]) -> ProgramResiduals {
        let mut max_equality = 0.0f64;
        for row in self.equalities.iter().flat_map(|b| b.rows.iter()) {
            max_equality = max_equality.max(row.eval(z).as_f64().abs());
        }
        let mut max_inequality = 0.0f64;
        for row in self.inequalities.iter().flat_map(|b| b.rows.iter()) {
            max_inequality = max_inequality.max(row.eval(z).as_f64());
        }
        let mut max_soc = 0.0f64;
        for s in &self.socs {
            let head = s.exprs[0].eval(z).as_f64();
            let tail: f64 = s.exprs[1..]
                .iter()
                .map(|e| e.eval(z).as_f64().powi(2))
                .sum::<f64>()
                .sqrt();
            max_soc = max_soc.max(tail - head);
        }
        let mut max_psd = 0.0f64;
        for p in &self.psds {
            let m = p.eval(z).map(|v| v.as_f64());
            let min = SymmetricEigen::new(m)
                .eigenvalues
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            max_psd = max_psd.max(-min);
        }
        ProgramResiduals {
            max_equality,
            max_inequality,
            max_soc,
            max_psd,
        }
    }
}

impl<T: Scalar> Default for ConicProgram<T> {
    fn default() -> Self {
        Self::new()
    }
}
