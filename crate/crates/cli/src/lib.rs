//! Batch front end: `solve`, `simulate`, `compare` and `emit-plot-data`.
//!
//! Every command writes `manifest.json` into its output directory before
//! any result artifact. Exit codes are 0 on success, 1 on error, 2 when the
//! relaxation is infeasible and 3 when a solved plan fails certification.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;
use sha2::{Digest, Sha256};

use covsteer::model::{self, ProblemInstance};
use covsteer::moments::{Policy, PolicyDoc};
use covsteer::montecarlo::{self, BatchOptions, EnsembleStats};
use covsteer::reference::SIGMA_F_FALLBACK;
use covsteer::sdp::{self, FallbackPlan};
use covsteer::solver::{ClarabelBackend, SolverSettings};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_UNCERTIFIED: i32 = 3;

/// Points per plotted ellipse.
pub const ELLIPSE_POINTS: usize = 128;

#[derive(Debug, Parser)]
#[command(name = "covsteer", version, about = "Chance-constrained covariance steering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Plan a policy and certify it against the exact moments.
    Solve(SolveArgs),
    /// Monte Carlo simulation of a policy on a config's model.
    Simulate(SimulateArgs),
    /// Simulate two policies on one truth config and compare them.
    Compare(CompareArgs),
    /// Terminal covariance ellipses and constraint lines for plotting.
    EmitPlotData(PlotArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Master seed, recorded in the manifest.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct SolverFlags {
    #[arg(long, default_value_t = 1e-8)]
    pub abs_tol: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub rel_tol: f64,
    #[arg(long, default_value_t = 20_000)]
    pub max_iters: u32,
    /// Seconds per conic solve.
    #[arg(long)]
    pub time_limit: Option<f64>,
    #[arg(long)]
    pub verbose_solver: bool,
}

impl SolverFlags {
    fn settings(&self) -> SolverSettings {
        SolverSettings {
            abs_tol: self.abs_tol,
            rel_tol: self.rel_tol,
            max_iterations: self.max_iters,
            verbose: self.verbose_solver,
            time_limit_seconds: self.time_limit,
        }
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub solver: SolverFlags,
    /// Re-linearization iterations.
    #[arg(long, default_value_t = 1)]
    pub iters: usize,
    /// Relative objective change that stops re-linearization.
    #[arg(long, default_value_t = 1e-4)]
    pub iter_tol: f64,
    /// Plan on the model with the multiplicative channels removed.
    #[arg(long)]
    pub naive: bool,
    /// `ε` retried as `Σ_F + ε·I` when the strict terminal bound fails.
    #[arg(long, default_value_t = SIGMA_F_FALLBACK)]
    pub sigma_f_fallback: f64,
    /// Fail instead of retrying with the regularized terminal bound.
    #[arg(long)]
    pub no_fallback: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub policy: PathBuf,
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub batch: BatchFlags,
}

#[derive(Debug, Args)]
pub struct BatchFlags {
    /// Rollout count.
    #[arg(long = "M", short = 'M', default_value_t = 2000)]
    pub m: usize,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Rollouts written to `paths.csv`.
    #[arg(long, default_value_t = montecarlo::DEFAULT_PATH_SUBSAMPLE)]
    pub paths: usize,
    /// Overrides the config's terminal regularization when scoring the
    /// terminal covariance.
    #[arg(long)]
    pub sigma_f_regularization: Option<f64>,
}

impl BatchFlags {
    fn options(&self) -> BatchOptions {
        BatchOptions {
            threads: self.threads,
            path_subsample: self.paths,
        }
    }
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Model both policies are simulated on.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub config_a: PathBuf,
    #[arg(long)]
    pub policy_a: PathBuf,
    #[arg(long, default_value = "a")]
    pub label_a: String,
    #[arg(long)]
    pub config_b: PathBuf,
    #[arg(long)]
    pub policy_b: PathBuf,
    #[arg(long, default_value = "b")]
    pub label_b: String,
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub batch: BatchFlags,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub stats: PathBuf,
    #[arg(long)]
    pub paths: PathBuf,
    /// Config whose state constraints become `constraint_lines.csv`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Coordinate pairs such as `x_2,x_3`; repeatable.
    #[arg(long = "pair", default_values_t = vec!["x_2,x_3".to_string()])]
    pub pairs: Vec<String>,
    /// Ellipse radius in standard deviations.
    #[arg(long, default_value_t = 2.0)]
    pub sigmas: f64,
    #[command(flatten)]
    pub common: Common,
}

/// Failure carrying the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let error = e.into();
        let code = match error.downcast_ref::<covsteer::Error>() {
            Some(covsteer::Error::Infeasible(_)) => EXIT_INFEASIBLE,
            _ => EXIT_ERROR,
        };
        Self { code, error }
    }
}

#[derive(Debug, Serialize)]
pub struct InputFile {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub argv: Vec<String>,
    pub inputs: Vec<InputFile>,
    pub settings: serde_json::Value,
    pub out_dir: String,
    pub master_seed: u64,
    pub started_at: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

struct Run {
    out_dir: PathBuf,
    quiet: bool,
}

impl Run {
    /// Creates the output directory and writes the manifest.
    fn start(
        command: &str,
        common: &Common,
        inputs: &[(&str, &Path, &[u8])],
        settings: serde_json::Value,
    ) -> anyhow::Result<Self> {
        fs::create_dir_all(&common.out_dir).with_context(|| format!("creating {}", common.out_dir.display()))?;
        let manifest = RunManifest {
            tool: "covsteer",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            argv: std::env::args().collect(),
            inputs: inputs
                .iter()
                .map(|(role, path, bytes)| InputFile {
                    role: role.to_string(),
                    path: path.display().to_string(),
                    sha256: sha256_hex(bytes),
                })
                .collect(),
            settings,
            out_dir: common.out_dir.display().to_string(),
            master_seed: common.seed,
            started_at: chrono::Utc::now().to_rfc3339(),
        };
        let run = Self {
            out_dir: common.out_dir.clone(),
            quiet: common.quiet,
        };
        run.write_json("manifest.json", &manifest)?;
        Ok(run)
    }

    fn write(&self, name: &str, contents: &str) -> anyhow::Result<()> {
        let path = self.out_dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
    }

    fn write_json<S: Serialize>(&self, name: &str, value: &S) -> anyhow::Result<()> {
        self.write(name, &(serde_json::to_string_pretty(value)? + "\n"))
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }
}

fn read(path: &Path) -> anyhow::Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn load_instance(bytes: &[u8], path: &Path) -> anyhow::Result<ProblemInstance<f64>> {
    let text = std::str::from_utf8(bytes).with_context(|| format!("{} is not UTF-8", path.display()))?;
    model::load_config(text).with_context(|| format!("loading {}", path.display()))
}

fn load_policy(bytes: &[u8], path: &Path, instance: &ProblemInstance<f64>) -> anyhow::Result<Policy<f64>> {
    let doc: PolicyDoc = serde_json::from_slice(bytes).with_context(|| format!("parsing {}", path.display()))?;
    let policy = Policy::from_doc(&doc, instance.model.n_x())?;
    policy
        .check(&instance.model, instance.horizon())
        .with_context(|| format!("{} does not match the config", path.display()))?;
    Ok(policy)
}

pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Solve(a) => cmd_solve(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::EmitPlotData(a) => cmd_emit_plot_data(&a),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            f.code
        }
    }
}

#[derive(Serialize)]
struct SolutionReport<'a> {
    planning_model: &'static str,
    sigma_f_regularization: f64,
    fallback_applied: bool,
    strict_failure: Option<&'a str>,
    best_iteration: usize,
    warning: Option<&'a str>,
    iterations: &'a [sdp::IterationRecord],
    #[serde(flatten)]
    solution: sdp::SolutionDoc,
}

pub fn cmd_solve(args: &SolveArgs) -> Result<i32, Failure> {
    let bytes = read(&args.config)?;
    let settings = args.solver.settings();
    let run = Run::start(
        "solve",
        &args.common,
        &[("config", &args.config, &bytes)],
        serde_json::json!({
            "solver": settings,
            "iters": args.iters,
            "iter_tol": args.iter_tol,
            "naive": args.naive,
            "sigma_f_fallback": if args.no_fallback { None } else { Some(args.sigma_f_fallback) },
        }),
    )?;
    let truth = load_instance(&bytes, &args.config)?;
    let instance = if args.naive {
        model::naive_variant(&truth)
    } else {
        truth
    };
    let fallback = (!args.no_fallback).then_some(args.sigma_f_fallback);

    let FallbackPlan {
        result,
        instance: planned,
        fallback_applied,
        strict_failure,
    } = sdp::plan_with_fallback(
        &instance,
        args.iters,
        args.iter_tol,
        fallback,
        &ClarabelBackend,
        &settings,
    )?;
    if let Some(eps) = fallback_applied {
        run.say(format!(
            "strict terminal bound failed; planned with Sigma_F + {eps:e}*I"
        ));
    }

    let report = SolutionReport {
        planning_model: if args.naive { "naive" } else { "config" },
        sigma_f_regularization: planned.sigma_f_regularization,
        fallback_applied: fallback_applied.is_some(),
        strict_failure: strict_failure.as_deref(),
        best_iteration: result.best_iteration,
        warning: result.warning.as_deref(),
        iterations: &result.log,
        solution: result.solution.to_doc(),
    };
    run.write_json("solution.json", &report)?;
    run.write_json("policy.json", &result.policy.to_doc())?;
    run.write_json("certificate.json", &result.certificate.to_doc())?;
    run.write("moments.csv", &result.certificate.exact_traj.to_csv())?;
    run.write("linearization.csv", &result.schedule.to_csv())?;

    let c = &result.certificate;
    run.say(format!(
        "objective {:.9} exact cost {:.9} terminal margin {:e} dominance {:e} pass {}",
        c.objective_value, c.exact_cost, c.terminal_cov_margin, c.dominance_margin, c.pass
    ));
    if let Some(w) = &result.warning {
        eprintln!("warning: {w}");
    }
    Ok(if c.pass { EXIT_OK } else { EXIT_UNCERTIFIED })
}

fn scoring_instance(instance: ProblemInstance<f64>, flags: &BatchFlags) -> ProblemInstance<f64> {
    match flags.sigma_f_regularization {
        Some(eps) => instance.with_sigma_f_regularization(eps),
        None => instance,
    }
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<i32, Failure> {
    let cfg = read(&args.config)?;
    let pol = read(&args.policy)?;
    let run = Run::start(
        "simulate",
        &args.common,
        &[("config", &args.config, &cfg), ("policy", &args.policy, &pol)],
        serde_json::json!({
            "M": args.batch.m,
            "threads": args.batch.threads,
            "paths": args.batch.paths,
            "sigma_f_regularization": args.batch.sigma_f_regularization,
        }),
    )?;
    let instance = scoring_instance(load_instance(&cfg, &args.config)?, &args.batch);
    let policy = load_policy(&pol, &args.policy, &instance)?;
    let stats = montecarlo::run_batch(
        &instance,
        &policy,
        args.batch.m,
        args.common.seed,
        &args.batch.options(),
    )?;
    run.write("stats.json", &(stats.to_json() + "\n"))?;
    run.write("paths.csv", &stats.paths_csv())?;
    run.say(format!(
        "M {} diverged {} terminal_cov_vs_F {:e} margin {:?}",
        stats.m,
        stats.diverged,
        stats.terminal_cov_vs_f,
        stats.terminal_margin()
    ));
    Ok(EXIT_OK)
}

pub fn cmd_compare(args: &CompareArgs) -> Result<i32, Failure> {
    let truth_bytes = read(&args.truth)?;
    let files = [
        read(&args.config_a)?,
        read(&args.policy_a)?,
        read(&args.config_b)?,
        read(&args.policy_b)?,
    ];
    let run = Run::start(
        "compare",
        &args.common,
        &[
            ("truth", &args.truth, &truth_bytes),
            ("config_a", &args.config_a, &files[0]),
            ("policy_a", &args.policy_a, &files[1]),
            ("config_b", &args.config_b, &files[2]),
            ("policy_b", &args.policy_b, &files[3]),
        ],
        serde_json::json!({
            "M": args.batch.m,
            "threads": args.batch.threads,
            "labels": [args.label_a, args.label_b],
            "sigma_f_regularization": args.batch.sigma_f_regularization,
        }),
    )?;
    let truth = scoring_instance(load_instance(&truth_bytes, &args.truth)?, &args.batch);
    let plan_a = load_instance(&files[0], &args.config_a)?;
    let plan_b = load_instance(&files[2], &args.config_b)?;
    for (label, plan) in [(&args.label_a, &plan_a), (&args.label_b, &plan_b)] {
        if plan.horizon() != truth.horizon()
            || plan.model.n_x() != truth.model.n_x()
            || plan.model.n_u() != truth.model.n_u()
        {
            return Err(anyhow!(
                "run `{label}` has horizon {} and dimensions {}x{}, truth has {} and {}x{}",
                plan.horizon(),
                plan.model.n_x(),
                plan.model.n_u(),
                truth.horizon(),
                truth.model.n_x(),
                truth.model.n_u()
            )
            .into());
        }
    }
    let policy_a = load_policy(&files[1], &args.policy_a, &truth)?;
    let policy_b = load_policy(&files[3], &args.policy_b, &truth)?;
    let options = args.batch.options();
    let stats_a = montecarlo::run_batch(&truth, &policy_a, args.batch.m, args.common.seed, &options)?;
    let stats_b = montecarlo::run_batch(&truth, &policy_b, args.batch.m, args.common.seed, &options)?;
    let report = montecarlo::compare(
        (&args.label_a, &stats_a),
        (&args.label_b, &stats_b),
        &truth.sigma_f_effective(),
    )?;
    run.write(&format!("stats_{}.json", args.label_a), &(stats_a.to_json() + "\n"))?;
    run.write(&format!("stats_{}.json", args.label_b), &(stats_b.to_json() + "\n"))?;
    run.write_json("compare.json", &report)?;
    run.write("compare.csv", &montecarlo::compare_csv(&report))?;
    for r in &report.runs {
        run.say(format!(
            "{}: terminal_cov_vs_F {:e} margin {:?} -> {}",
            r.label, r.terminal_cov_vs_f, r.margin, r.verdict
        ));
    }
    Ok(EXIT_OK)
}

/// Index of a coordinate named `x_<i>`.
pub fn coordinate_index(name: &str, n_x: usize) -> anyhow::Result<usize> {
    let idx = name
        .trim()
        .strip_prefix("x_")
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| {
            anyhow!(
                "unknown coordinate `{name}` (expected x_0..x_{})",
                n_x.saturating_sub(1)
            )
        })?;
    if idx >= n_x {
        bail!("unknown coordinate `{name}`: state has {n_x} components");
    }
    Ok(idx)
}

fn parse_pair(pair: &str, n_x: usize) -> anyhow::Result<(usize, usize)> {
    let (a, b) = pair
        .split_once(',')
        .ok_or_else(|| anyhow!("coordinate pair `{pair}` must look like x_2,x_3"))?;
    let pair = (coordinate_index(a, n_x)?, coordinate_index(b, n_x)?);
    if pair.0 == pair.1 {
        bail!("coordinate pair `{a},{b}` repeats a coordinate");
    }
    Ok(pair)
}

/// `ELLIPSE_POINTS` points of `{μ + r·Σ^{1/2}(cos t, sin t)}`.
pub fn ellipse_points(center: [f64; 2], cov: &DMatrix<f64>, radius: f64) -> Vec<[f64; 2]> {
    let eig = SymmetricEigen::new(cov.clone());
    let axes = eig.eigenvalues.map(|l| l.max(0.0).sqrt() * radius);
    (0..ELLIPSE_POINTS)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / ELLIPSE_POINTS as f64;
            let unit = DVector::from_vec(vec![axes[0] * t.cos(), axes[1] * t.sin()]);
            let p = &eig.eigenvectors * unit;
            [center[0] + p[0], center[1] + p[1]]
        })
        .collect()
}

/// Terminal positions from a `paths.csv` payload, keyed by rollout.
fn terminal_rows(paths_csv: &str, n_x: usize) -> anyhow::Result<Vec<Vec<f64>>> {
    let mut lines = paths_csv.lines();
    let header = lines.next().ok_or_else(|| anyhow!("paths.csv is empty"))?;
    if header.split(',').count() != n_x + 2 {
        bail!(
            "paths.csv has {} columns, expected {}",
            header.split(',').count(),
            n_x + 2
        );
    }
    let mut last: Vec<(String, Vec<f64>)> = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let mut cols = line.split(',');
        let rollout = cols.next().unwrap_or_default().to_string();
        cols.next();
        let x = cols
            .map(|v| {
                v.parse::<f64>()
                    .with_context(|| format!("bad number `{v}` in paths.csv"))
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        match last.last_mut() {
            Some((r, v)) if *r == rollout => *v = x,
            _ => last.push((rollout, x)),
        }
    }
    Ok(last.into_iter().map(|(_, x)| x).collect())
}

pub fn cmd_emit_plot_data(args: &PlotArgs) -> Result<i32, Failure> {
    let stats_bytes = read(&args.stats)?;
    let paths_bytes = read(&args.paths)?;
    let mut inputs: Vec<(&str, &Path, &[u8])> = vec![
        ("stats", &args.stats, &stats_bytes),
        ("paths", &args.paths, &paths_bytes),
    ];
    let config_bytes = args.config.as_ref().map(|p| read(p)).transpose()?;
    if let (Some(p), Some(b)) = (&args.config, &config_bytes) {
        inputs.push(("config", p, b));
    }
    let run = Run::start(
        "emit-plot-data",
        &args.common,
        &inputs,
        serde_json::json!({ "pairs": args.pairs, "sigmas": args.sigmas, "points": ELLIPSE_POINTS }),
    )?;
    let stats: EnsembleStats = serde_json::from_slice(&stats_bytes).context("parsing stats.json")?;
    let n_x = stats.n_x();
    let pairs = args
        .pairs
        .iter()
        .map(|p| parse_pair(p, n_x))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let paths_text = std::str::from_utf8(&paths_bytes).context("paths.csv is not UTF-8")?;
    let terminals = terminal_rows(paths_text, n_x)?;
    let cov = stats.terminal_cov();
    let mean = stats.emp_mean.last().cloned().unwrap_or_default();

    let mut ellipse = String::from("pair,point,x,y\n");
    for &(i, j) in &pairs {
        let sub = DMatrix::from_row_slice(2, 2, &[cov[(i, i)], cov[(i, j)], cov[(j, i)], cov[(j, j)]]);
        for (p, xy) in ellipse_points([mean[i], mean[j]], &sub, args.sigmas).iter().enumerate() {
            ellipse.push_str(&format!("x_{i}:x_{j},{p},{},{}\n", xy[0], xy[1]));
        }
    }
    run.write("ellipse.csv", &ellipse)?;

    let mut lines = String::from("pair,constraint_index,point,x,y\n");
    if let Some(bytes) = &config_bytes {
        let instance = load_instance(bytes, args.config.as_deref().expect("config path present"))?;
        if instance.model.n_x() != n_x {
            return Err(anyhow!("config has {} states, stats have {n_x}", instance.model.n_x()).into());
        }
        for &(i, j) in &pairs {
            let (lo, hi) = bounding_box(&terminals, &stats.emp_mean, i, j);
            for (idx, con) in instance.chance.state_constraints.iter().enumerate() {
                let others = (0..n_x).filter(|&c| c != i && c != j).any(|c| con.alpha[c] != 0.0);
                if others {
                    continue;
                }
                if let Some(seg) = clip_line(con.alpha[i], con.alpha[j], con.beta, lo, hi) {
                    for (p, xy) in seg.iter().enumerate() {
                        lines.push_str(&format!("x_{i}:x_{j},{idx},{p},{},{}\n", xy[0], xy[1]));
                    }
                }
            }
        }
    }
    run.write("constraint_lines.csv", &lines)?;
    run.say(format!(
        "{} ellipse(s) from {} terminal samples",
        pairs.len(),
        terminals.len()
    ));
    Ok(EXIT_OK)
}

/// Box around every sampled point and mean of the pair, padded by 10 %.
fn bounding_box(terminals: &[Vec<f64>], means: &[Vec<f64>], i: usize, j: usize) -> ([f64; 2], [f64; 2]) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in terminals.iter().chain(means) {
        for (d, c) in [i, j].into_iter().enumerate() {
            lo[d] = lo[d].min(p[c]);
            hi[d] = hi[d].max(p[c]);
        }
    }
    for d in 0..2 {
        let pad = 0.1 * (hi[d] - lo[d]).max(1e-9);
        lo[d] -= pad;
        hi[d] += pad;
    }
    (lo, hi)
}

/// Segment of `a·x + b·y = β` inside the box, if it crosses it.
pub fn clip_line(a: f64, b: f64, beta: f64, lo: [f64; 2], hi: [f64; 2]) -> Option<[[f64; 2]; 2]> {
    let mut pts: Vec<[f64; 2]> = Vec::new();
    if b != 0.0 {
        for x in [lo[0], hi[0]] {
            let y = (beta - a * x) / b;
            if y >= lo[1] && y <= hi[1] {
                pts.push([x, y]);
            }
        }
    }
    if a != 0.0 {
        for y in [lo[1], hi[1]] {
            let x = (beta - b * y) / a;
            if x >= lo[0] && x <= hi[0] {
                pts.push([x, y]);
            }
        }
    }
    pts.sort_by(|p, q| p[0].total_cmp(&q[0]).then(p[1].total_cmp(&q[1])));
    pts.dedup();
    match pts.as_slice() {
        [first, .., last] => Some([*first, *last]),
        _ => None,
    }
}
