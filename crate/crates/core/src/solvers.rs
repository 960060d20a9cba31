//! First-order methods that see the matrix only through a `QuerySession`.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instances::Instance;
use crate::linalg;
use crate::oracle::{self, QuerySession, TraceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Cg,
    Gd,
    Nesterov,
    HeavyBall,
}

impl SolverKind {
    pub const ALL: [SolverKind; 4] = [SolverKind::Cg, SolverKind::Gd, SolverKind::Nesterov, SolverKind::HeavyBall];

    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Cg => "cg",
            SolverKind::Gd => "gd",
            SolverKind::Nesterov => "nesterov",
            SolverKind::HeavyBall => "heavy_ball",
        }
    }
}

impl std::str::FromStr for SolverKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SolverKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown solver {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Iterations after any spectrum estimation; each costs one query.
    pub steps: usize,
    /// Stop when |b - Ax| / |b| <= rtol.
    pub rtol: f64,
    /// Lanczos queries spent estimating (lambda_min, lambda_max) for GD and momentum methods.
    pub estimate_queries: usize,
    /// Multiplier applied to the estimated lambda_max.
    pub lmax_safety: f64,
    /// Known (lambda_min, lambda_max); skips estimation when set.
    pub spectrum: Option<(f64, f64)>,
    /// Fixed gradient-descent step size.
    pub step: Option<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { steps: 1000, rtol: 1e-10, estimate_queries: 10, lmax_safety: 1.1, spectrum: None, step: None }
    }
}

/// What a solver returns before ground-truth evaluation.
#[derive(Debug, Clone)]
pub struct SolverRun {
    pub x_hat: Vec<f64>,
    pub queries_used: usize,
    pub residual: f64,
    pub truncated: bool,
    pub converged: bool,
    pub spectrum_estimate: Option<(f64, f64)>,
}

/// Called with (queries so far, current iterate).
pub type Observer<'o> = dyn FnMut(usize, &[f64]) + 'o;

fn rel(r: &[f64], bn: f64) -> f64 {
    linalg::norm(r) / bn
}

fn diverged(res: f64) -> bool {
    !res.is_finite() || res > 1e8
}

/// Extreme Ritz values from `k` Lanczos steps started at b, with full reorthogonalization.
pub fn lanczos_extremes(session: &mut QuerySession, k: usize) -> Result<(f64, f64)> {
    let bn = linalg::norm(session.b());
    if bn == 0.0 || k == 0 {
        return Err(Error::InvalidInput("spectrum estimation needs b != 0 and at least one query".into()));
    }
    let mut qs: Vec<Vec<f64>> = vec![linalg::scaled(1.0 / bn, session.b())];
    let (mut alpha, mut beta) = (Vec::new(), Vec::new());
    for j in 0..k {
        let mut w = session.query(&qs[j])?;
        let a = linalg::dot(&w, &qs[j]);
        alpha.push(a);
        for _ in 0..2 {
            for q in &qs {
                let c = linalg::dot(q, &w);
                linalg::axpy(-c, q, &mut w);
            }
        }
        let bnext = linalg::norm(&w);
        if j + 1 == k || bnext <= 1e-12 * a.abs().max(1.0) {
            break;
        }
        beta.push(bnext);
        qs.push(linalg::scaled(1.0 / bnext, &w));
    }
    let n = alpha.len();
    let t = Mat::from_fn(n, n, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let ev = linalg::sym_eigenvalues(&t)?;
    Ok((ev[0], ev[n - 1]))
}

fn spectrum(session: &mut QuerySession, opts: &SolverOptions) -> Result<(f64, f64)> {
    let (lo, hi) = match opts.spectrum {
        Some(s) => s,
        None => lanczos_extremes(session, opts.estimate_queries)?,
    };
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::Numerical(format!("spectrum estimate ({lo}, {hi}) is not positive definite")));
    }
    Ok((lo, hi * opts.lmax_safety))
}

/// Iterate x_{t+1} = x_t - eta (A x_t - b) from x_0 = 0.
pub fn gradient_descent(session: &mut QuerySession, opts: &SolverOptions, obs: &mut Observer) -> Result<SolverRun> {
    let start = session.t_used();
    let d = session.dim();
    let bn = linalg::norm(session.b());
    let mut x = vec![0.0; d];
    obs(0, &x);
    let mut est = None;
    let eta = match opts.step {
        Some(e) => e,
        None => {
            let (lo, hi) = spectrum(session, opts)?;
            est = Some((lo, hi));
            2.0 / (hi + lo)
        }
    };
    let mut r = session.b().to_vec();
    momentum_loop(session, opts, obs, start, bn, &mut x, &mut r, est, |_, _| (eta, 0.0), false)
}

/// Nesterov's method with constant momentum (sqrt L - sqrt mu)/(sqrt L + sqrt mu) and step 1/L.
pub fn nesterov(session: &mut QuerySession, opts: &SolverOptions, obs: &mut Observer) -> Result<SolverRun> {
    let start = session.t_used();
    let d = session.dim();
    let bn = linalg::norm(session.b());
    let mut x = vec![0.0; d];
    obs(0, &x);
    let (mu, l) = spectrum(session, opts)?;
    let beta = (l.sqrt() - mu.sqrt()) / (l.sqrt() + mu.sqrt());
    let mut r = session.b().to_vec();
    momentum_loop(session, opts, obs, start, bn, &mut x, &mut r, Some((mu, l)), |_, _| (1.0 / l, beta), true)
}

/// Polyak heavy ball with alpha = 4/(sqrt L + sqrt mu)^2 and beta = ((sqrt L - sqrt mu)/(sqrt L + sqrt mu))^2.
pub fn heavy_ball(session: &mut QuerySession, opts: &SolverOptions, obs: &mut Observer) -> Result<SolverRun> {
    let start = session.t_used();
    let d = session.dim();
    let bn = linalg::norm(session.b());
    let mut x = vec![0.0; d];
    obs(0, &x);
    let (mu, l) = spectrum(session, opts)?;
    let alpha = 4.0 / (l.sqrt() + mu.sqrt()).powi(2);
    let beta = ((l.sqrt() - mu.sqrt()) / (l.sqrt() + mu.sqrt())).powi(2);
    let mut r = session.b().to_vec();
    momentum_loop(session, opts, obs, start, bn, &mut x, &mut r, Some((mu, l)), |_, _| (alpha, beta), false)
}

/// Shared loop. Residuals r = b - Ax are carried by recurrence, one query per iteration.
/// `lookahead` selects Nesterov's extrapolate-then-step form; otherwise heavy-ball form
/// (plain GD when the momentum is zero).
#[allow(clippy::too_many_arguments)]
fn momentum_loop(
    session: &mut QuerySession,
    opts: &SolverOptions,
    obs: &mut Observer,
    start: usize,
    bn: f64,
    x: &mut Vec<f64>,
    r: &mut Vec<f64>,
    est: Option<(f64, f64)>,
    params: impl Fn(usize, f64) -> (f64, f64),
    lookahead: bool,
) -> Result<SolverRun> {
    let d = x.len();
    let mut x_prev = x.clone();
    let mut r_prev = r.clone();
    let mut res = rel(r, bn);
    let mut truncated = false;
    let mut converged = res <= opts.rtol;
    for it in 0..opts.steps {
        if converged {
            break;
        }
        if session.remaining() == 0 {
            truncated = true;
            break;
        }
        let (step, beta) = params(it, res);
        let (mut xn, mut rn) = (vec![0.0; d], vec![0.0; d]);
        if lookahead {
            // y = x + beta (x - x_prev); x_next = y + step * (b - A y)
            let y: Vec<f64> = (0..d).map(|i| x[i] + beta * (x[i] - x_prev[i])).collect();
            let ry: Vec<f64> = (0..d).map(|i| r[i] + beta * (r[i] - r_prev[i])).collect();
            let ary = session.query(&ry)?;
            for i in 0..d {
                xn[i] = y[i] + step * ry[i];
                rn[i] = ry[i] - step * ary[i];
            }
        } else {
            // x_next = x + step * r + beta (x - x_prev)
            let ar = session.query(r)?;
            for i in 0..d {
                xn[i] = x[i] + step * r[i] + beta * (x[i] - x_prev[i]);
                rn[i] = r[i] - step * ar[i] + beta * (r[i] - r_prev[i]);
            }
        }
        x_prev = std::mem::replace(x, xn);
        r_prev = std::mem::replace(r, rn);
        res = rel(r, bn);
        session.annotate_residual(res);
        let used = session.t_used() - start;
        obs(used, x);
        if diverged(res) {
            return Err(Error::Diverged { queries: used, residual: res });
        }
        converged = res <= opts.rtol;
    }
    Ok(SolverRun {
        x_hat: x.clone(),
        queries_used: session.t_used() - start,
        residual: res,
        truncated,
        converged,
        spectrum_estimate: est,
    })
}

/// Conjugate gradient from x_0 = 0, one query per iteration.
pub fn conjugate_gradient(session: &mut QuerySession, opts: &SolverOptions, obs: &mut Observer) -> Result<SolverRun> {
    let start = session.t_used();
    let d = session.dim();
    let bn = linalg::norm(session.b());
    let mut x = vec![0.0; d];
    obs(0, &x);
    let mut r = session.b().to_vec();
    let mut p = r.clone();
    let mut rr = linalg::norm_sq(&r);
    let mut res = rel(&r, bn);
    let mut truncated = false;
    let mut converged = res <= opts.rtol;
    for _ in 0..opts.steps {
        if converged {
            break;
        }
        if session.remaining() == 0 {
            truncated = true;
            break;
        }
        let ap = session.query(&p)?;
        let pap = linalg::dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Breakdown(pap));
        }
        let alpha = rr / pap;
        linalg::axpy(alpha, &p, &mut x);
        linalg::axpy(-alpha, &ap, &mut r);
        let rr_new = linalg::norm_sq(&r);
        res = rr_new.sqrt() / bn;
        session.annotate_residual(res);
        obs(session.t_used() - start, &x);
        converged = res <= opts.rtol;
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..d {
            p[i] = r[i] + beta * p[i];
        }
    }
    Ok(SolverRun { x_hat: x, queries_used: session.t_used() - start, residual: res, truncated, converged, spectrum_estimate: None })
}

pub fn run(kind: SolverKind, session: &mut QuerySession, opts: &SolverOptions, obs: &mut Observer) -> Result<SolverRun> {
    match kind {
        SolverKind::Cg => conjugate_gradient(session, opts, obs),
        SolverKind::Gd => gradient_descent(session, opts, obs),
        SolverKind::Nesterov => nesterov(session, opts, obs),
        SolverKind::HeavyBall => heavy_ball(session, opts, obs),
    }
}

/// Unit vector along the solver output, registered with the session as its final direction.
pub fn plant_estimate(x_hat: &[f64], session: &mut QuerySession) -> Result<Vec<f64>> {
    let n = linalg::norm(x_hat);
    if n == 0.0 {
        return Err(Error::ZeroEstimate);
    }
    let dir = linalg::scaled(1.0 / n, x_hat);
    session.register_estimate(&dir);
    Ok(dir)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryPoint {
    pub queries: usize,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverResult {
    pub solver: SolverKind,
    pub x_hat: Vec<f64>,
    pub queries_used: usize,
    pub rel_err: f64,
    pub f_gap: f64,
    /// <x_hat/|x_hat|, u>^2, zero when x_hat = 0
    pub overlap: f64,
    pub residual: f64,
    pub truncated: bool,
    pub converged: bool,
    pub spectrum_estimate: Option<(f64, f64)>,
    pub history: Vec<HistoryPoint>,
}

/// Flat CSV form of a `SolverResult`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverRow {
    pub solver: SolverKind,
    pub queries_used: usize,
    pub rel_err: f64,
    pub f_gap: f64,
    pub overlap: f64,
    pub residual: f64,
    pub truncated: bool,
    pub converged: bool,
    pub lmin_est: Option<f64>,
    pub lmax_est: Option<f64>,
}

impl SolverResult {
    pub fn row(&self) -> SolverRow {
        SolverRow {
            solver: self.solver,
            queries_used: self.queries_used,
            rel_err: self.rel_err,
            f_gap: self.f_gap,
            overlap: self.overlap,
            residual: self.residual,
            truncated: self.truncated,
            converged: self.converged,
            lmin_est: self.spectrum_estimate.map(|s| s.0),
            lmax_est: self.spectrum_estimate.map(|s| s.1),
        }
    }
}

/// Ground-truth side: relative errors against x*.
pub struct Evaluator<'a> {
    inst: &'a Instance,
    x_star_norm: f64,
    pub history: Vec<HistoryPoint>,
}

impl<'a> Evaluator<'a> {
    pub fn new(inst: &'a Instance) -> Self {
        Evaluator { inst, x_star_norm: linalg::norm(&inst.x_star), history: Vec::new() }
    }

    pub fn rel_err(&self, x: &[f64]) -> f64 {
        linalg::norm(&linalg::sub(x, &self.inst.x_star)) / self.x_star_norm
    }

    pub fn observe(&mut self, queries: usize, x: &[f64]) {
        let e = self.rel_err(x);
        self.history.push(HistoryPoint { queries, rel_err: e });
    }

    /// f(x) - f(x*) = (x - x*)' A (x - x*) / 2
    pub fn f_gap(&self, x: &[f64]) -> f64 {
        let e = linalg::sub(x, &self.inst.x_star);
        0.5 * linalg::bilinear(&self.inst.a, &e, &e)
    }

    pub fn finish(self, kind: SolverKind, run: SolverRun) -> SolverResult {
        SolverResult {
            solver: kind,
            queries_used: run.queries_used,
            rel_err: self.rel_err(&run.x_hat),
            f_gap: self.f_gap(&run.x_hat),
            overlap: linalg::overlap(&run.x_hat, &self.inst.u).unwrap_or(0.0),
            residual: run.residual,
            truncated: run.truncated,
            converged: run.converged,
            spectrum_estimate: run.spectrum_estimate,
            history: self.history,
            x_hat: run.x_hat,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub result: SolverResult,
    /// Potential after each query, then once more with the registered estimate.
    pub phi: Vec<f64>,
    pub trace: Vec<TraceRecord>,
    pub orthonormality_error: f64,
}

/// Open a session on `inst`, run `kind`, register the plant estimate and evaluate.
pub fn solve_instance(kind: SolverKind, inst: &Instance, budget: usize, opts: &SolverOptions) -> Result<SolveOutcome> {
    let mut session = oracle::open_session(inst, budget);
    let mut ev = Evaluator::new(inst);
    let run = run(kind, &mut session, opts, &mut |q, x| ev.observe(q, x))?;
    if linalg::norm(&run.x_hat) > 0.0 {
        plant_estimate(&run.x_hat, &mut session)?;
    }
    let phi = session.potential_trajectory(&inst.u);
    let trace = session.trace(&inst.u);
    let orthonormality_error = session.orthonormality_error();
    Ok(SolveOutcome { result: ev.finish(kind, run), phi, trace, orthonormality_error })
}

/// First query count at which rel_err <= threshold, per threshold.
pub fn query_complexity_curve(history: &[HistoryPoint], thresholds: &[f64]) -> Vec<(f64, Option<usize>)> {
    thresholds
        .iter()
        .map(|&t| (t, history.iter().find(|h| h.rel_err <= t).map(|h| h.queries)))
        .collect()
}
