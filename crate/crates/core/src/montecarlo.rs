//! Seeded Monte Carlo simulation of the closed loop on the stochastic
//! system.
//!
//! Rollout `r` draws from its own ChaCha8 stream: the generator is seeded
//! with the master seed and switched to stream `r`, so the draws of a rollout
//! do not depend on which thread runs it or in what order. Each stream yields
//! the `n_x` normals for the initial state first, then `q[j][k]` with `j`
//! varying fastest. Rollouts are computed in parallel but reduced
//! sequentially in rollout order, which makes the statistics bit-identical
//! for any thread count.

use std::fmt::Write as _;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{HalfspaceConstraint, ProblemInstance, SystemModel};
use crate::moments::{self, Policy};
use crate::scalar::Scalar;

/// Default number of rollouts written to `paths.csv`.
pub const DEFAULT_PATH_SUBSAMPLE: usize = 100;

/// Scalar noise draws `q[j][k]` of one rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSequence<T: Scalar> {
    pub q: Vec<Vec<T>>,
    pub master_seed: u64,
    pub rollout_index: u64,
}

/// Generator for rollout `rollout_index` under `master_seed`.
pub fn rollout_rng(master_seed: u64, rollout_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(rollout_index);
    rng
}

impl<T: Scalar> NoiseSequence<T> {
    pub fn draw(rng: &mut ChaCha8Rng, m: usize, horizon: usize, master_seed: u64, rollout_index: u64) -> Self {
        let mut q = vec![Vec::with_capacity(horizon); m];
        for _ in 0..horizon {
            for row in q.iter_mut() {
                row.push(T::sample_standard_normal(rng));
            }
        }
        Self {
            q,
            master_seed,
            rollout_index,
        }
    }

    /// Fixed draws, for hand-checked rollouts.
    pub fn from_values(q: Vec<Vec<T>>) -> Self {
        Self {
            q,
            master_seed: 0,
            rollout_index: 0,
        }
    }

    pub fn horizon(&self) -> usize {
        self.q.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath<T: Scalar> {
    /// `x₀..x_N`
    pub x: Vec<DVector<T>>,
    /// `u₀..u_{N−1}`
    pub u: Vec<DVector<T>>,
}

/// Simulates one trajectory of the closed loop `u = L(x − x̄) + c`.
pub fn rollout<T: Scalar>(
    model: &SystemModel<T>,
    policy: &Policy<T>,
    x0: &DVector<T>,
    x_bar: &[DVector<T>],
    noise: &NoiseSequence<T>,
) -> Result<SamplePath<T>> {
    let n = policy.horizon();
    let m = model.m();
    if x_bar.len() < n {
        return Err(Error::dim("mean trajectory", n, x_bar.len()));
    }
    if noise.q.len() != m || noise.q.iter().any(|row| row.len() != n) {
        return Err(Error::dim(
            "noise",
            format!("{m}x{n}"),
            format!("{}x{}", noise.q.len(), noise.horizon()),
        ));
    }
    if !x0.iter().all(|v| v.is_finite_value()) {
        return Err(Error::NonFinite {
            context: "initial state".into(),
            step: 0,
        });
    }
    let mut x = Vec::with_capacity(n + 1);
    let mut u = Vec::with_capacity(n);
    x.push(x0.clone());
    for k in 0..n {
        let xk = &x[k];
        let uk = &policy.gains[k] * (xk - &x_bar[k]) + &policy.feedforward[k];
        let mut next = &model.a_bar * xk + &model.b_bar * &uk + &model.d_bar;
        for j in 0..m {
            let q = noise.q[j][k];
            next += (&model.a_tilde[j] * xk + &model.b_tilde[j] * &uk + &model.d_tilde[j]) * q;
        }
        if !next.iter().all(|v| v.is_finite_value()) {
            return Err(Error::NonFinite {
                context: "rollout".into(),
                step: k + 1,
            });
        }
        u.push(uk);
        x.push(next);
    }
    Ok(SamplePath { x, u })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOptions {
    /// `None` uses the global rayon pool.
    pub threads: Option<usize>,
    pub path_subsample: usize,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            threads: None,
            path_subsample: DEFAULT_PATH_SUBSAMPLE,
        }
    }
}

/// Empirical moments and constraint statistics of a batch of rollouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    #[serde(rename = "M")]
    pub m: usize,
    pub master_seed: u64,
    /// Rollouts that overflowed; excluded from every statistic below.
    pub diverged: usize,
    pub emp_mean: Vec<Vec<f64>>,
    pub emp_cov: Vec<Vec<Vec<f64>>>,
    /// `[i][k]` for `k = 0..N−1`.
    pub violation_freq_state: Vec<Vec<f64>>,
    pub violation_freq_input: Vec<Vec<f64>>,
    pub emp_cost_mean: f64,
    pub emp_cost_stderr: f64,
    #[serde(rename = "terminal_cov_vs_F")]
    pub terminal_cov_vs_f: f64,
    /// Jackknife standard error of `terminal_cov_vs_F`; `None` below three
    /// usable rollouts.
    pub terminal_cov_jackknife_stderr: Option<f64>,
    /// Subsampled paths, rollout index first.
    #[serde(skip)]
    pub paths: Vec<(usize, Vec<Vec<f64>>)>,
    /// Terminal states of every usable rollout, kept for re-evaluating the
    /// terminal statistic against another bound.
    #[serde(skip)]
    pub terminal_samples: Vec<Vec<f64>>,
}

impl EnsembleStats {
    pub fn horizon(&self) -> usize {
        self.emp_mean.len().saturating_sub(1)
    }

    pub fn n_x(&self) -> usize {
        self.emp_mean.first().map_or(0, Vec::len)
    }

    pub fn terminal_cov(&self) -> DMatrix<f64> {
        let rows = self.emp_cov.last().cloned().unwrap_or_default();
        let n = rows.len();
        DMatrix::from_fn(n, n, |i, j| rows[i][j])
    }

    /// `3·stderr`, the allowance below zero still read as respecting the
    /// terminal bound.
    pub fn terminal_margin(&self) -> Option<f64> {
        self.terminal_cov_jackknife_stderr.map(|s| 3.0 * s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }

    /// CSV with header `rollout,k,x_0..x_{n_x-1}`.
    pub fn paths_csv(&self) -> String {
        let n = self.n_x();
        let mut out = String::from("rollout,k");
        for i in 0..n {
            let _ = write!(out, ",x_{i}");
        }
        out.push('\n');
        for (r, path) in &self.paths {
            for (k, x) in path.iter().enumerate() {
                let _ = write!(out, "{r},{k}");
                for v in x {
                    let _ = write!(out, ",{v}");
                }
                out.push('\n');
            }
        }
        out
    }
}

fn to_f64<T: Scalar>(v: &DVector<T>) -> DVector<f64> {
    v.map(|x| x.as_f64())
}

/// Sample mean and unbiased covariance, summed in input order.
fn moments_of(samples: &[&DVector<f64>], n: usize) -> (DVector<f64>, DMatrix<f64>) {
    let count = samples.len();
    let mut mean = DVector::zeros(n);
    for s in samples {
        mean += *s;
    }
    if count > 0 {
        mean /= count as f64;
    }
    let mut cov = DMatrix::zeros(n, n);
    for s in samples {
        let d = *s - &mean;
        cov += &d * d.transpose();
    }
    if count > 1 {
        cov /= (count - 1) as f64;
    }
    (mean, linalg::symmetrize(&cov))
}

fn violation_freqs(
    constraints: &[HalfspaceConstraint<f64>],
    series: &[Vec<DVector<f64>>],
    horizon: usize,
) -> Vec<Vec<f64>> {
    let count = series.len().max(1) as f64;
    constraints
        .iter()
        .map(|con| {
            (0..horizon)
                .map(|k| series.iter().filter(|path| con.alpha.dot(&path[k]) > con.beta).count() as f64 / count)
                .collect()
        })
        .collect()
}

/// Jackknife standard error of `λ_min(Σ_F − Ĉ)` over leave-one-out
/// sample covariances, via rank-one downdates of the scatter matrix.
pub fn terminal_jackknife(samples: &[DVector<f64>], sigma_f: &DMatrix<f64>) -> Option<f64> {
    let count = samples.len();
    if count < 3 {
        return None;
    }
    let n = sigma_f.nrows();
    let refs: Vec<&DVector<f64>> = samples.iter().collect();
    let (mean, cov) = moments_of(&refs, n);
    let scatter = cov * (count - 1) as f64;
    let scale = count as f64 / (count - 1) as f64;
    let loo: Vec<f64> = samples
        .iter()
        .map(|x| {
            let d = x - &mean;
            let s = &scatter - (&d * d.transpose()) * scale;
            linalg::min_eigenvalue(&(sigma_f - s / (count - 2) as f64))
        })
        .collect();
    let avg = loo.iter().sum::<f64>() / count as f64;
    let var = loo.iter().map(|v| (v - avg).powi(2)).sum::<f64>() * (count - 1) as f64 / count as f64;
    Some(var.sqrt())
}

/// Runs `m` rollouts of `policy` on `instance` with `x₀ ~ N(μ_I, Σ_I)`.
pub fn run_batch<T: Scalar>(
    instance: &ProblemInstance<T>,
    policy: &Policy<T>,
    m: usize,
    master_seed: u64,
    options: &BatchOptions,
) -> Result<EnsembleStats> {
    if m < 2 {
        return Err(Error::invariant("M", "at least two rollouts are required"));
    }
    let model = &instance.model;
    let n = instance.horizon();
    let n_x = model.n_x();
    policy.check(model, n)?;
    let means = moments::propagate_mean(model, &policy.feedforward, &instance.boundary.mu_i, n)?;
    let chol = Cholesky::new(linalg::symmetrize(&instance.boundary.sigma_i))
        .ok_or_else(|| Error::Factorization("Sigma_I is not positive definite".into()))?;
    let root = chol.l();

    let simulate = |r: usize| -> Result<SamplePath<T>> {
        let mut rng = rollout_rng(master_seed, r as u64);
        let z = DVector::from_iterator(n_x, (0..n_x).map(|_| T::sample_standard_normal(&mut rng)));
        let x0 = &instance.boundary.mu_i + &root * z;
        let noise = NoiseSequence::draw(&mut rng, model.m(), n, master_seed, r as u64);
        rollout(model, policy, &x0, &means.x_bar, &noise)
    };
    let results: Vec<Result<SamplePath<T>>> = match options.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| Error::invariant("threads", e.to_string()))?
            .install(|| (0..m).into_par_iter().map(simulate).collect()),
        None => (0..m).into_par_iter().map(simulate).collect(),
    };

    let mut diverged = 0;
    let mut states: Vec<Vec<DVector<f64>>> = Vec::with_capacity(m);
    let mut inputs: Vec<Vec<DVector<f64>>> = Vec::with_capacity(m);
    let mut paths = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(path) => {
                let xs: Vec<DVector<f64>> = path.x.iter().map(to_f64).collect();
                if r < options.path_subsample {
                    paths.push((r, xs.iter().map(|x| x.as_slice().to_vec()).collect()));
                }
                states.push(xs);
                inputs.push(path.u.iter().map(to_f64).collect());
            }
            Err(Error::NonFinite { .. }) => diverged += 1,
            Err(e) => return Err(e),
        }
    }

    let mut emp_mean = Vec::with_capacity(n + 1);
    let mut emp_cov = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let col: Vec<&DVector<f64>> = states.iter().map(|p| &p[k]).collect();
        let (mu, cov) = moments_of(&col, n_x);
        emp_mean.push(mu.as_slice().to_vec());
        emp_cov.push(linalg::to_rows(&cov));
    }

    let cast = |cons: &[HalfspaceConstraint<T>]| -> Vec<HalfspaceConstraint<f64>> {
        cons.iter()
            .map(|c| HalfspaceConstraint::new(to_f64(&c.alpha), c.beta.as_f64(), c.p.as_f64()))
            .collect()
    };
    let violation_freq_state = violation_freqs(&cast(&instance.chance.state_constraints), &states, n);
    let violation_freq_input = violation_freqs(&cast(&instance.chance.input_constraints), &inputs, n);

    let q: Vec<DMatrix<f64>> = (0..n).map(|k| instance.cost.q_at(k).map(|v| v.as_f64())).collect();
    let rw: Vec<DMatrix<f64>> = (0..n).map(|k| instance.cost.r_at(k).map(|v| v.as_f64())).collect();
    let costs: Vec<f64> = states
        .iter()
        .zip(&inputs)
        .map(|(xs, us)| {
            (0..n)
                .map(|k| linalg::quad_form(&xs[k], &q[k]) + linalg::quad_form(&us[k], &rw[k]))
                .sum()
        })
        .collect();
    let used = costs.len();
    let emp_cost_mean = if used > 0 {
        costs.iter().sum::<f64>() / used as f64
    } else {
        f64::NAN
    };
    let emp_cost_stderr = if used > 1 {
        let var = costs.iter().map(|c| (c - emp_cost_mean).powi(2)).sum::<f64>() / (used - 1) as f64;
        (var / used as f64).sqrt()
    } else {
        f64::NAN
    };

    let sigma_f = instance.sigma_f_effective().map(|v| v.as_f64());
    let terminal_samples: Vec<DVector<f64>> = states.iter().map(|p| p[n].clone()).collect();
    let terminal_cov = DMatrix::from_fn(n_x, n_x, |i, j| emp_cov[n][i][j]);
    Ok(EnsembleStats {
        m,
        master_seed,
        diverged,
        emp_mean,
        emp_cov,
        violation_freq_state,
        violation_freq_input,
        emp_cost_mean,
        emp_cost_stderr,
        terminal_cov_vs_f: linalg::min_eigenvalue(&(&sigma_f - terminal_cov)),
        terminal_cov_jackknife_stderr: terminal_jackknife(&terminal_samples, &sigma_f),
        paths,
        terminal_samples: terminal_samples.iter().map(|x| x.as_slice().to_vec()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    #[serde(rename = "M")]
    pub m: usize,
    pub diverged: usize,
    #[serde(rename = "terminal_cov_vs_F")]
    pub terminal_cov_vs_f: f64,
    /// Three jackknife standard errors; `None` when too few rollouts.
    pub margin: Option<f64>,
    pub terminal_bound_respected: bool,
    pub verdict: String,
    pub worst_state_violation_freq: Option<f64>,
    pub worst_input_violation_freq: Option<f64>,
    pub emp_cost_mean: f64,
    pub emp_cost_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub runs: Vec<RunSummary>,
    /// Labels ordered by increasing empirical cost.
    pub cost_order: Vec<String>,
}

fn worst(freqs: &[Vec<f64>]) -> Option<f64> {
    freqs.iter().flatten().copied().reduce(f64::max)
}

fn summarize(label: &str, stats: &EnsembleStats, sigma_f: &DMatrix<f64>) -> RunSummary {
    let cov = stats.terminal_cov();
    let value = linalg::min_eigenvalue(&(sigma_f - cov));
    let se = if stats.terminal_samples.is_empty() {
        stats.terminal_cov_jackknife_stderr
    } else {
        let samples: Vec<DVector<f64>> = stats
            .terminal_samples
            .iter()
            .map(|s| DVector::from_column_slice(s))
            .collect();
        terminal_jackknife(&samples, sigma_f)
    };
    let margin = se.map(|s| 3.0 * s);
    let respected = value >= -margin.unwrap_or(0.0);
    RunSummary {
        label: label.to_string(),
        m: stats.m,
        diverged: stats.diverged,
        terminal_cov_vs_f: value,
        margin,
        terminal_bound_respected: respected,
        verdict: if respected {
            "terminal bound respected".into()
        } else {
            "terminal bound violated".into()
        },
        worst_state_violation_freq: worst(&stats.violation_freq_state),
        worst_input_violation_freq: worst(&stats.violation_freq_input),
        emp_cost_mean: stats.emp_cost_mean,
        emp_cost_stderr: stats.emp_cost_stderr,
    }
}

/// Side-by-side terminal, constraint and cost summary of two batches
/// against the bound `sigma_f`.
pub fn compare(a: (&str, &EnsembleStats), b: (&str, &EnsembleStats), sigma_f: &DMatrix<f64>) -> Result<CompareReport> {
    let (sa, sb) = (a.1, b.1);
    if sa.horizon() != sb.horizon() {
        return Err(Error::dim("horizon", sa.horizon(), sb.horizon()));
    }
    if sa.n_x() != sb.n_x() || sigma_f.nrows() != sa.n_x() || sigma_f.ncols() != sa.n_x() {
        return Err(Error::dim("state dimension", sa.n_x(), sb.n_x()));
    }
    let runs = vec![summarize(a.0, sa, sigma_f), summarize(b.0, sb, sigma_f)];
    let mut order: Vec<&RunSummary> = runs.iter().collect();
    order.sort_by(|x, y| x.emp_cost_mean.total_cmp(&y.emp_cost_mean));
    let cost_order = order.iter().map(|r| r.label.clone()).collect();
    Ok(CompareReport { runs, cost_order })
}

/// CSV with one row per metric and one column per run.
pub fn compare_csv(report: &CompareReport) -> String {
    let mut out = String::from("metric");
    for r in &report.runs {
        let _ = write!(out, ",{}", r.label);
    }
    out.push('\n');
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    type Cell<'a> = Box<dyn Fn(&RunSummary) -> String + 'a>;
    let rows: [(&str, Cell); 9] = [
        ("M", Box::new(|r| r.m.to_string())),
        ("diverged", Box::new(|r| r.diverged.to_string())),
        ("terminal_cov_vs_F", Box::new(|r| r.terminal_cov_vs_f.to_string())),
        ("margin", Box::new(move |r| opt(r.margin))),
        (
            "terminal_bound_respected",
            Box::new(|r| r.terminal_bound_respected.to_string()),
        ),
        (
            "worst_state_violation_freq",
            Box::new(move |r| opt(r.worst_state_violation_freq)),
        ),
        (
            "worst_input_violation_freq",
            Box::new(move |r| opt(r.worst_input_violation_freq)),
        ),
        ("emp_cost_mean", Box::new(|r| r.emp_cost_mean.to_string())),
        ("emp_cost_stderr", Box::new(|r| r.emp_cost_stderr.to_string())),
    ];
    for (name, f) in rows.iter() {
        out.push_str(name);
        for r in &report.runs {
            let _ = write!(out, ",{}", f(r));
        }
        out.push('\n');
    }
    out
}
