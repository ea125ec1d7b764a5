//! Experiment driver: configuration, the adaptive time loop, CSV output and
//! convergence studies.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use log::{debug, info, warn};

use crate::adapt::{
    adapt_epsilon, alpha_coeffs, est_epsilon, est_time_first, est_time_second, guard_epsilon,
    propose_step, vsvo_select, ControllerState, StepPhase, Tolerances,
};
use crate::error::{Error, Result};
use crate::fespace::{FeSpace, Field};
use crate::linsolve::SolverKind;
use crate::mesh::{build_rect_mesh, load_mesh, Mesh};
use crate::par;
use crate::problems::{Domain, Problem};
use crate::stepper::{apply_time_filter, compute_d2, discrete_accel, extrapolate, Stepper};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    /// Constant step, adaptive penalty.
    ConstK,
    FirstVarK,
    SecondVarK,
    Vsvo,
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alg1-const-k" => Ok(Algorithm::ConstK),
            "first-var-k" => Ok(Algorithm::FirstVarK),
            "second-var-k" => Ok(Algorithm::SecondVarK),
            "vsvo" => Ok(Algorithm::Vsvo),
            _ => Err(Error::Config(format!("unknown algorithm `{s}`"))),
        }
    }
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::ConstK => "alg1-const-k",
            Algorithm::FirstVarK => "first-var-k",
            Algorithm::SecondVarK => "second-var-k",
            Algorithm::Vsvo => "vsvo",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: String,
    pub algorithm: Algorithm,
    pub nx: usize,
    pub ny: usize,
    pub mesh_file: Option<PathBuf>,
    pub nu: Option<f64>,
    pub k0: f64,
    pub eps0: f64,
    pub tolerances: Tolerances,
    pub t_end: Option<f64>,
    pub filter: bool,
    pub guard: bool,
    pub solver: SolverKind,
    pub solver_tol: f64,
    pub output: Option<PathBuf>,
    pub seed: u64,
    pub max_rejects: usize,
    /// Divide the penalty parameter by `eps_drop_factor` at the first step
    /// reaching this time.
    pub eps_drop_time: Option<f64>,
    pub eps_drop_factor: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let tolerances = Tolerances::default();
        RunConfig {
            problem: "vortex_square".into(),
            algorithm: Algorithm::ConstK,
            nx: 48,
            ny: 48,
            mesh_file: None,
            nu: None,
            k0: 0.01,
            eps0: tolerances.eps_min,
            tolerances,
            t_end: None,
            filter: true,
            guard: true,
            solver: SolverKind::Direct,
            solver_tol: 1e-10,
            output: None,
            seed: 0,
            max_rejects: 10,
            eps_drop_time: None,
            eps_drop_factor: 100.0,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_switch(key: &str, value: &str) -> Result<bool> {
    match value {
        "on" | "true" | "yes" => Ok(true),
        "off" | "false" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "`{key}` must be on or off, got `{value}`"
        ))),
    }
}

impl RunConfig {
    /// Parses `key = value` lines. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(key.trim(), value.trim()).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", i + 1)),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.tolerances;
        match key {
            "problem" => self.problem = value.to_string(),
            "algorithm" => self.algorithm = value.parse()?,
            "mesh_n" => {
                self.nx = parse_num(key, value)?;
                self.ny = self.nx;
            }
            "nx" => self.nx = parse_num(key, value)?,
            "ny" => self.ny = parse_num(key, value)?,
            "mesh_file" => self.mesh_file = Some(PathBuf::from(value)),
            "nu" => self.nu = Some(parse_num(key, value)?),
            "k0" => self.k0 = parse_num(key, value)?,
            "eps0" => self.eps0 = parse_num(key, value)?,
            "tol" => t.tol = parse_num(key, value)?,
            "min_tol" => t.min_tol = parse_num(key, value)?,
            "t_tol" => t.t_tol = parse_num(key, value)?,
            "min_t_tol" => t.min_t_tol = parse_num(key, value)?,
            "eps_min" => t.eps_min = parse_num(key, value)?,
            "eps_max" => t.eps_max = parse_num(key, value)?,
            "alpha" => t.alpha = parse_num(key, value)?,
            "safety" => t.safety = parse_num(key, value)?,
            "t_end" => self.t_end = Some(parse_num(key, value)?),
            "filter" => self.filter = parse_switch(key, value)?,
            "guard" => self.guard = parse_switch(key, value)?,
            "solver" => {
                self.solver = match value {
                    "direct" => SolverKind::Direct,
                    "gmres" => SolverKind::Gmres {
                        restart: 50,
                        max_iter: 2000,
                    },
                    _ => return Err(Error::Config(format!("unknown solver `{value}`"))),
                }
            }
            "gmres_restart" | "gmres_max_iter" => {
                let n: usize = parse_num(key, value)?;
                let SolverKind::Gmres { restart, max_iter } = &mut self.solver else {
                    return Err(Error::Config(format!(
                        "`{key}` needs `solver = gmres` first"
                    )));
                };
                *(if key == "gmres_restart" {
                    restart
                } else {
                    max_iter
                }) = n;
            }
            "solver_tol" => self.solver_tol = parse_num(key, value)?,
            "output" => self.output = Some(PathBuf::from(value)),
            "seed" => self.seed = parse_num(key, value)?,
            "max_rejects" => self.max_rejects = parse_num(key, value)?,
            "eps_drop_time" => self.eps_drop_time = Some(parse_num(key, value)?),
            "eps_drop_factor" => self.eps_drop_factor = parse_num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.tolerances.validate()?;
        let t = &self.tolerances;
        if !(self.k0 > 0.0) {
            return Err(Error::Config("k0 must be positive".into()));
        }
        if !(self.eps0 >= t.eps_min && self.eps0 <= t.eps_max) {
            return Err(Error::Config(format!(
                "eps0 = {} outside [{}, {}]",
                self.eps0, t.eps_min, t.eps_max
            )));
        }
        if self.nx == 0 || self.ny == 0 {
            return Err(Error::Config(
                "mesh needs at least one cell per side".into(),
            ));
        }
        if !(self.solver_tol > 0.0) {
            return Err(Error::Config("solver_tol must be positive".into()));
        }
        if !(self.eps_drop_factor >= 1.0) {
            return Err(Error::Config("eps_drop_factor must be at least 1".into()));
        }
        if let Some(te) = self.t_end {
            if !(te > 0.0) {
                return Err(Error::Config("t_end must be positive".into()));
            }
        }
        Problem::by_name(&self.problem)?;
        Ok(())
    }

    pub fn resolved_problem(&self) -> Result<Problem> {
        let mut p = Problem::by_name(&self.problem)?;
        if let Some(nu) = self.nu {
            p = p.with_nu(nu);
        }
        if let Some(te) = self.t_end {
            p.t_end = te;
        }
        Ok(p)
    }

    pub fn build_mesh(&self, problem: &Problem) -> Result<Mesh> {
        if let Some(f) = &self.mesh_file {
            return load_mesh(f);
        }
        match &problem.domain {
            Domain::Rect { x0, y0, x1, y1 } => {
                build_rect_mesh(self.nx, self.ny, *x0, *y0, *x1, *y1)
            }
            Domain::MeshFile(f) => load_mesh(f),
        }
    }
}

/// One accepted step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub k: f64,
    pub eps: f64,
    pub order: u8,
    pub est_e: f64,
    pub test1: Option<f64>,
    pub test2: Option<f64>,
    pub div_u: f64,
    pub grad_u: f64,
    pub ut_norm: f64,
    pub rejects: usize,
    pub u_err_l2: Option<f64>,
    pub u_err_linf: Option<f64>,
    pub p_err_linf: Option<f64>,
    /// Energy balance residual of the unfiltered solve, relative to its largest term.
    pub energy_residual: f64,
    /// `max_q |(div u + eps p, q)|`
    pub penalty_residual: f64,
    /// Accepted because the rejection cap was hit.
    pub forced: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub problem: String,
    pub algorithm: Algorithm,
    pub steps: usize,
    pub rejects: usize,
    pub forced_accepts: usize,
    pub t_final: f64,
    pub u_err_l2: Option<f64>,
    pub u_err_linf: Option<f64>,
    pub p_err_linf: Option<f64>,
    pub max_ut: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub records: Vec<StepRecord>,
    pub summary: RunSummary,
    pub final_u: Field,
}

pub const TIMESERIES_HEADER: &str =
    "t,k,eps,order,est_e,test1,test2,div_u,grad_u,ut_norm,rejects,u_err_l2,u_err_linf,p_err_linf";
pub const SUMMARY_HEADER: &str =
    "problem,algorithm,steps,rejects,forced_accepts,t_final,u_err_l2,u_err_linf,p_err_linf,max_ut";

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

pub fn timeseries_csv(records: &[StepRecord]) -> String {
    let mut s = String::from(TIMESERIES_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.k,
            r.eps,
            r.order,
            r.est_e,
            opt(r.test1),
            opt(r.test2),
            r.div_u,
            r.grad_u,
            r.ut_norm,
            r.rejects,
            opt(r.u_err_l2),
            opt(r.u_err_linf),
            opt(r.p_err_linf)
        );
    }
    s
}

pub fn summary_csv(s: &RunSummary) -> String {
    format!(
        "{SUMMARY_HEADER}\n{},{},{},{},{},{},{},{},{},{}\n",
        s.problem,
        s.algorithm.name(),
        s.steps,
        s.rejects,
        s.forced_accepts,
        s.t_final,
        opt(s.u_err_l2),
        opt(s.u_err_linf),
        opt(s.p_err_linf),
        s.max_ut
    )
}

/// Max nodal pressure error after removing the mean from both fields.
fn pressure_error(p_h: &Field, exact: &crate::fespace::ScalarFn, t: f64, area: f64) -> Result<f64> {
    let pe = Field::interpolate_scalar(p_h.space(), exact, t)?;
    let (mh, me) = (p_h.integral() / area, pe.integral() / area);
    Ok(p_h
        .coeffs
        .iter()
        .zip(&pe.coeffs)
        .fold(0.0, |m, (a, b)| m.max(((a - mh) - (b - me)).abs())))
}

/// Runs one experiment. Writes `timeseries.csv` and `summary.csv` when the
/// config names an output directory.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunResult> {
    cfg.validate()?;
    let problem = cfg.resolved_problem()?;
    let mesh = Arc::new(cfg.build_mesh(&problem)?);
    let space = FeSpace::p2_vector(mesh.clone());
    let result = run_on_space(cfg, &problem, space)?;
    if let Some(dir) = &cfg.output {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("timeseries.csv"), timeseries_csv(&result.records))?;
        fs::write(dir.join("summary.csv"), summary_csv(&result.summary))?;
    }
    Ok(result)
}

/// The adaptive time loop on a prepared velocity space.
pub fn run_on_space(cfg: &RunConfig, problem: &Problem, space: Arc<FeSpace>) -> Result<RunResult> {
    let tol = cfg.tolerances;
    let alg = cfg.algorithm;
    let area = space.mesh().total_area();
    let mut stepper = Stepper::new(space.clone(), cfg.solver, cfg.solver_tol)?;
    info!(
        "{} / {}: {} velocity DOFs, k0 = {}, T = {}",
        problem.name,
        alg.name(),
        space.dof_count(),
        cfg.k0,
        problem.t_end
    );

    let exact = problem.exact_u.clone();
    let (mut u_n, mut u_nm1) = match &exact {
        Some(u) => (
            Field::interpolate_vector(&space, u.as_ref(), 0.0)?,
            Field::interpolate_vector(&space, u.as_ref(), -cfg.k0)?,
        ),
        None => {
            let u0 = Field::zeros(&space);
            (u0.clone(), u0)
        }
    };
    let start_history = exact.is_some();

    let mut state = ControllerState::new(cfg.k0, cfg.eps0);
    let mut records: Vec<StepRecord> = Vec::new();
    let mut drop_pending = cfg.eps_drop_time.is_some();
    let (mut total_rejects, mut forced_accepts) = (0usize, 0usize);
    let t_stop = problem.t_end * (1.0 - 1e-12);

    while state.t < t_stop {
        let k = state.k_np1;
        let t_np1 = if alg == Algorithm::ConstK {
            (records.len() + 1) as f64 * cfg.k0
        } else {
            state.t + k
        };
        if drop_pending
            && state.reject_count == 0
            && t_np1 >= cfg.eps_drop_time.unwrap_or(f64::INFINITY)
        {
            state.eps_np1 = (state.eps_np1 / cfg.eps_drop_factor).max(tol.eps_min);
            drop_pending = false;
            info!("forcing eps drop to {:e} at t = {t_np1}", state.eps_np1);
        }
        let mut eps = state.eps_np1.clamp(tol.eps_min, tol.eps_max);
        if cfg.guard {
            eps = guard_epsilon(state.eps_n, eps, k, tol.alpha);
        }

        let tau = k / state.k_n;
        let u_star = extrapolate(&u_n, &u_nm1, tau)?;
        let (u1, _) = stepper.be_penalty_step(
            &u_n,
            &u_star,
            k,
            eps,
            problem.nu,
            t_np1,
            problem.force.as_ref(),
            problem.boundary.as_ref(),
        )?;

        let have_history = start_history || !records.is_empty();
        let (alpha1, alpha2) = alpha_coeffs(state.k_n / state.k_nm1, tau);
        let d2 = if have_history {
            Some(compute_d2(&u1, &u_n, &u_nm1, k, state.k_n)?)
        } else {
            None
        };
        let filtered = match (&d2, cfg.filter || alg != Algorithm::ConstK) {
            (Some(d), true) => apply_time_filter(&u1, d, alpha1)?,
            _ => u1.clone(),
        };
        let test1 = d2.as_ref().map(|d| est_time_first(d, alpha1)).transpose()?;
        let test2 = match (&d2, &state.d2_prev) {
            (Some(d), Some(dp)) => Some(est_time_second(d, dp, k, state.k_n, state.k_nm1, alpha2)?),
            _ => test1,
        };

        let candidate = match alg {
            Algorithm::ConstK if !cfg.filter => &u1,
            Algorithm::FirstVarK => &u1,
            _ => &filtered,
        };
        let est = est_epsilon(candidate)?;
        let eps_dec = adapt_epsilon(eps, state.eps_n, est.est, k, &tol, cfg.guard);

        let time_est = match alg {
            Algorithm::ConstK => None,
            Algorithm::FirstVarK => test1,
            Algorithm::SecondVarK => test2,
            Algorithm::Vsvo => test1.zip(test2).map(|(a, b)| a.min(b)),
        };
        let time_reject = time_est.is_some_and(|e| e > tol.t_tol);
        let wants_reject = eps_dec.reject || time_reject;

        // retries scale from the rejected attempt; a retry identical to the
        // failed attempt is pointless, so it counts as a forced accept
        let k_retry = if time_reject {
            let proposal = match alg {
                Algorithm::FirstVarK => {
                    propose_step(1, test1.unwrap_or(0.0), k, k, &tol, StepPhase::Reject)
                }
                Algorithm::SecondVarK => {
                    propose_step(2, test2.unwrap_or(0.0), k, k, &tol, StepPhase::Reject)
                }
                _ => propose_step(1, test1.unwrap_or(0.0), k, k, &tol, StepPhase::Reject).max(
                    propose_step(2, test2.unwrap_or(0.0), k, k, &tol, StepPhase::Reject),
                ),
            };
            proposal.min(k).max(0.5 * state.k_n)
        } else {
            k
        };
        let retry_differs = eps_dec.reject || k_retry < k;
        if wants_reject && retry_differs && state.reject_count < cfg.max_rejects {
            let eps_retry = if eps_dec.reject {
                eps_dec.eps_next
            } else {
                eps
            };
            debug!(
                "reject at t = {t_np1}: est {:e}, tEST {:?}, k {k} -> {k_retry}, eps {eps:e} -> {eps_retry:e}",
                est.est, time_est
            );
            state.reject(k_retry, eps_retry);
            total_rejects += 1;
            continue;
        }
        if wants_reject {
            warn!(
                "accepting step at t = {t_np1} with tEST {time_est:?} after {} rejections",
                state.reject_count
            );
            forced_accepts += 1;
        }

        let grow = |order: u8, e: Option<f64>| {
            e.map_or(k, |e| {
                propose_step(order, e, k, state.k_n, &tol, StepPhase::Grow)
            })
        };
        let (order, u, k_next) = match alg {
            Algorithm::ConstK => (if cfg.filter { 2 } else { 1 }, candidate.clone(), cfg.k0),
            Algorithm::FirstVarK => {
                let kn = if test1.is_some_and(|e| e < tol.min_t_tol) {
                    grow(1, test1)
                } else {
                    k
                };
                (1, u1.clone(), kn)
            }
            Algorithm::SecondVarK => {
                let kn = if test2.is_some_and(|e| e < tol.min_t_tol) {
                    grow(2, test2)
                } else {
                    k
                };
                (2, filtered.clone(), kn)
            }
            Algorithm::Vsvo => {
                if have_history {
                    vsvo_select(grow(1, test1), grow(2, test2), u1.clone(), filtered.clone())
                } else {
                    (1, u1.clone(), k)
                }
            }
        };
        let est = if alg == Algorithm::Vsvo && order == 1 && have_history {
            est_epsilon(&u)?
        } else {
            est
        };

        let balance =
            stepper.energy_balance(&u1, &u_n, k, eps, problem.nu, t_np1, problem.force.as_ref())?;
        let p = stepper.recover_pressure(&u, eps)?;
        let penalty_residual = stepper.penalty_residual(&u, &p, eps);
        let ut_norm = discrete_accel(&u, &u_n, k)?;
        let (u_err_l2, u_err_linf) = match &exact {
            Some(e) => (
                Some(u.l2_error_vector(e.as_ref(), t_np1)),
                Some(u.linf_nodal_error_vector(e.as_ref(), t_np1)),
            ),
            None => (None, None),
        };
        let p_err_linf = problem
            .exact_p
            .as_ref()
            .map(|pe| pressure_error(&p, pe.as_ref(), t_np1, area))
            .transpose()?;

        records.push(StepRecord {
            t: t_np1,
            k,
            eps,
            order,
            est_e: est.est,
            test1,
            test2,
            div_u: est.div_norm,
            grad_u: est.grad_norm,
            ut_norm,
            rejects: state.reject_count,
            u_err_l2,
            u_err_linf,
            p_err_linf,
            energy_residual: balance.relative_residual(),
            penalty_residual,
            forced: wants_reject,
        });
        debug!(
            "t = {t_np1:.6}, k = {k:.3e}, eps = {eps:.3e}, EST = {:.3e}, tEST = {:?}",
            est.est, time_est
        );

        state.eps_np1 = eps;
        state.accept(d2, k_next, eps_dec.eps_next.clamp(tol.eps_min, tol.eps_max));
        if alg == Algorithm::ConstK {
            state.t = t_np1;
        }
        u_nm1 = std::mem::replace(&mut u_n, u);
    }

    let last = records.last();
    let summary = RunSummary {
        problem: problem.name.clone(),
        algorithm: alg,
        steps: records.len(),
        rejects: total_rejects,
        forced_accepts,
        t_final: state.t,
        u_err_l2: last.and_then(|r| r.u_err_l2),
        u_err_linf: last.and_then(|r| r.u_err_linf),
        p_err_linf: last.and_then(|r| r.p_err_linf),
        max_ut: records.iter().fold(0.0, |m, r| m.max(r.ut_norm)),
    };
    info!(
        "{} / {}: {} steps, {} rejects, final L2 error {:?}",
        summary.problem,
        alg.name(),
        summary.steps,
        summary.rejects,
        summary.u_err_l2
    );
    Ok(RunResult {
        records,
        summary,
        final_u: u_n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub k: f64,
    pub steps: usize,
    pub error: f64,
    /// `log2(e_prev / e) / log2(k_prev / k)` against the previous row.
    pub rate: Option<f64>,
}

pub const RATES_HEADER: &str = "k,steps,u_err_l2,rate";

pub fn rates_csv(rows: &[RateRow]) -> String {
    let mut s = String::from(RATES_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.k, r.steps, r.error, opt(r.rate));
    }
    s
}

/// Runs `cfg` at each constant step in `steps` (runs execute in parallel)
/// and fits successive rates of the final-time L2 velocity error.
pub fn convergence_study(cfg: &RunConfig, steps: &[f64]) -> Result<Vec<RateRow>> {
    if steps.is_empty() {
        return Err(Error::Config(
            "convergence study needs at least one step size".into(),
        ));
    }
    let problem = cfg.resolved_problem()?;
    if !problem.has_exact() {
        return Err(Error::NoExactSolution(problem.name));
    }
    let mesh = Arc::new(cfg.build_mesh(&problem)?);
    let space = FeSpace::p2_vector(mesh);
    let runs = par::map_slice(steps, |&k| {
        let mut c = cfg.clone();
        c.k0 = k;
        c.output = None;
        run_on_space(&c, &problem, space.clone())
    });
    let mut rows: Vec<RateRow> = Vec::with_capacity(steps.len());
    for (&k, run) in steps.iter().zip(runs) {
        let run = run?;
        let error = run
            .summary
            .u_err_l2
            .ok_or_else(|| Error::NoExactSolution(problem.name.clone()))?;
        let rate = rows
            .last()
            .map(|p| (p.error / error).log2() / (p.k / k).log2());
        rows.push(RateRow {
            k,
            steps: run.summary.steps,
            error,
            rate,
        });
    }
    if let Some(dir) = &cfg.output {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("rates.csv"), rates_csv(&rows))?;
    }
    Ok(rows)
}
