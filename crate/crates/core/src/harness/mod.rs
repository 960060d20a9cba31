//! Sweeps over grid points and trials, claim summaries, file output and the
//! acceptance suite.

pub mod emit;
pub mod summary;
pub mod verify;

use std::path::PathBuf;
use std::sync::mpsc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identities::{self, OverlapDecomposition};
use crate::instances::{self, Instance, InstanceParams};
use crate::linalg;
use crate::rng;
use crate::solvers::{self, HistoryPoint, SolverKind, SolverOptions};
use crate::spectral::{self, SpectralReport, StieltjesTransfer};

/// Draws per trial before it is recorded as failed.
pub const MAX_DRAWS: usize = 3;

/// Env var that overrides the configured thread count.
pub const THREADS_ENV: &str = "HARDQUAD_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Deformation {
    Lambda(f64),
    /// Resolved through `lambda_for_kappa`.
    Kappa(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tau0Policy {
    Fixed(f64),
    /// tau0 = (lambda - 1)^2
    GapSquared,
}

fn default_budget() -> usize {
    1000
}

fn default_thresholds() -> Vec<f64> {
    vec![0.9, 0.5, 0.25, 0.1, 0.05, 0.01, 1e-3, 1e-4, 1e-6]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub d: usize,
    pub deformation: Deformation,
    pub tau0: Tau0Policy,
    #[serde(default)]
    pub solvers: Vec<SolverKind>,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
    #[serde(default)]
    pub solver_options: SolverOptions,
    /// Eigenvalues of A and W (the expensive part of a trial).
    #[serde(default)]
    pub spectral: bool,
    /// Needs the eigenvalues of W.
    #[serde(default)]
    pub transfer: bool,
    #[serde(default)]
    pub decomposition: bool,
}

impl GridPoint {
    pub fn new(d: usize, deformation: Deformation, tau0: Tau0Policy) -> Self {
        GridPoint {
            d,
            deformation,
            tau0,
            solvers: Vec::new(),
            budget: default_budget(),
            thresholds: default_thresholds(),
            solver_options: SolverOptions::default(),
            spectral: false,
            transfer: false,
            decomposition: false,
        }
    }

    /// (lambda, tau0)
    pub fn resolve(&self) -> Result<(f64, f64)> {
        let lambda = match self.deformation {
            Deformation::Lambda(l) => l,
            Deformation::Kappa(k) => instances::lambda_for_kappa(k)?,
        };
        let tau0 = match self.tau0 {
            Tau0Policy::Fixed(t) => t,
            Tau0Policy::GapSquared => (lambda - 1.0).powi(2),
        };
        Ok((lambda, tau0))
    }

    pub fn params(&self, seed: u64) -> Result<InstanceParams> {
        let (lambda, tau0) = self.resolve()?;
        Ok(InstanceParams::new(self.d, lambda, tau0, seed))
    }

    fn validate(&self) -> Result<()> {
        self.params(0)?.validate()?;
        if !self.solvers.is_empty() && self.budget == 0 {
            return Err(Error::Config("solvers need a positive query budget".into()));
        }
        let needs_estimate = self.solvers.iter().any(|k| *k != SolverKind::Cg) && self.solver_options.spectrum.is_none();
        if needs_estimate && self.budget <= self.solver_options.estimate_queries {
            return Err(Error::Config(format!(
                "budget {} leaves nothing after {} spectrum-estimation queries",
                self.budget, self.solver_options.estimate_queries
            )));
        }
        if self.thresholds.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Config("curve thresholds must be positive".into()));
        }
        Ok(())
    }
}

fn default_nu() -> f64 {
    std::f64::consts::SQRT_2
}

fn default_eps() -> f64 {
    0.01
}

fn default_c() -> f64 {
    spectral::DEFAULT_LIPSCHITZ_C
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub grid: Vec<GridPoint>,
    pub trials: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub threads: Option<usize>,
    /// Slack in the E_A event.
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default = "default_eps")]
    pub transfer_eps: f64,
    #[serde(default = "default_c")]
    pub lipschitz_c: f64,
}

impl ExperimentConfig {
    pub fn new(name: &str, grid: Vec<GridPoint>, trials: usize, master_seed: u64) -> Self {
        ExperimentConfig {
            name: name.into(),
            grid,
            trials,
            master_seed,
            out_dir: None,
            threads: None,
            nu: default_nu(),
            transfer_eps: default_eps(),
            lipschitz_c: default_c(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.grid.is_empty() {
            return Err(Error::Config("empty grid".into()));
        }
        if !(self.nu > 1.0) || !(self.transfer_eps > 0.0) || !(self.lipschitz_c > 0.0) {
            return Err(Error::Config("need nu > 1, transfer_eps > 0, lipschitz_c > 0".into()));
        }
        for (i, p) in self.grid.iter().enumerate() {
            p.validate().map_err(|e| Error::Config(format!("grid point {i}: {e}")))?;
        }
        Ok(())
    }

    pub fn seed_for(&self, point: usize, trial: usize, draw: usize) -> u64 {
        rng::derive(self.master_seed, &[point as u64, trial as u64, draw as u64])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub queries: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub solver: SolverKind,
    /// Set when the solver stopped with an error; the numeric fields are then absent.
    pub error: Option<String>,
    pub queries_used: Option<usize>,
    pub rel_err: Option<f64>,
    pub f_gap: Option<f64>,
    pub overlap: Option<f64>,
    pub residual: Option<f64>,
    pub truncated: Option<bool>,
    pub converged: Option<bool>,
    pub lmin_est: Option<f64>,
    pub lmax_est: Option<f64>,
    /// Potential after the last query.
    pub phi_queries: Option<f64>,
    /// Potential once the estimate direction is included.
    pub phi_final: Option<f64>,
    pub orthonormality_error: Option<f64>,
    pub curve: Vec<CurvePoint>,
    pub history: Vec<HistoryPoint>,
}

impl SolverSummary {
    fn failed(solver: SolverKind, e: &Error) -> Self {
        SolverSummary {
            solver,
            error: Some(e.to_string()),
            queries_used: None,
            rel_err: None,
            f_gap: None,
            overlap: None,
            residual: None,
            truncated: None,
            converged: None,
            lmin_est: None,
            lmax_est: None,
            phi_queries: None,
            phi_final: None,
            orthonormality_error: None,
            curve: Vec::new(),
            history: Vec::new(),
        }
    }

    /// Queries needed to reach `threshold`, when it is on the curve grid.
    pub fn queries_to(&self, threshold: f64) -> Option<usize> {
        self.curve.iter().find(|c| c.threshold == threshold).and_then(|c| c.queries)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub schema: String,
    pub point: usize,
    pub trial: usize,
    /// Seed of the draw that was used.
    pub seed: u64,
    pub resamples: usize,
    pub d: usize,
    pub lambda: f64,
    pub tau0: f64,
    pub gamma: f64,
    pub cond_target: f64,
    pub solve_rel_residual: f64,
    /// <b/|b|, u>^2, the overlap available before any query.
    pub b_overlap: f64,
    pub spectral: Option<SpectralReport>,
    pub transfer: Option<StieltjesTransfer>,
    pub decomposition: Option<OverlapDecomposition>,
    pub solvers: Vec<SolverSummary>,
}

impl TrialRecord {
    pub fn solver(&self, kind: SolverKind) -> Option<&SolverSummary> {
        self.solvers.iter().find(|s| s.solver == kind && s.error.is_none())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedTrial {
    pub point: usize,
    pub trial: usize,
    pub seeds: Vec<u64>,
    pub reason: String,
}

pub type Sampler<'s> = dyn Fn(InstanceParams) -> Result<Instance> + Sync + 's;

pub fn run_trial(cfg: &ExperimentConfig, point: usize, trial: usize) -> std::result::Result<TrialRecord, FailedTrial> {
    run_trial_with(cfg, point, trial, &Instance::sample)
}

/// As `run_trial`, drawing instances through `sample` (tests inject degenerate draws here).
pub fn run_trial_with(
    cfg: &ExperimentConfig,
    point: usize,
    trial: usize,
    sample: &Sampler,
) -> std::result::Result<TrialRecord, FailedTrial> {
    let mut seeds = Vec::new();
    let fail = |seeds: &[u64], reason: String| FailedTrial { point, trial, seeds: seeds.to_vec(), reason };
    let gp = cfg.grid.get(point).ok_or_else(|| fail(&[], format!("no grid point {point}")))?;
    let mut last = String::new();
    for draw in 0..MAX_DRAWS {
        let seed = cfg.seed_for(point, trial, draw);
        seeds.push(seed);
        let params = gp.params(seed).map_err(|e| fail(&seeds, e.to_string()))?;
        match sample(params) {
            Ok(inst) => {
                return evaluate(cfg, gp, &inst, point, trial, draw).map_err(|e| fail(&seeds, e.to_string()));
            }
            Err(e @ Error::DegenerateInstance { .. }) => {
                log::info!("point {point} trial {trial}: resampling after draw {draw}: {e}");
                last = e.to_string();
            }
            Err(e) => return Err(fail(&seeds, e.to_string())),
        }
    }
    Err(fail(&seeds, format!("{MAX_DRAWS} consecutive degenerate draws; last: {last}")))
}

fn evaluate(cfg: &ExperimentConfig, gp: &GridPoint, inst: &Instance, point: usize, trial: usize, draw: usize) -> Result<TrialRecord> {
    let p = inst.params;
    let mut spec = None;
    let mut transfer = None;
    if gp.spectral || gp.transfer {
        let (rep, w_eigs) = spectral::spectral_report_with_eigs(inst, cfg.nu)?;
        if gp.transfer {
            transfer = Some(spectral::stieltjes_transfer(&w_eigs, p.lambda, cfg.transfer_eps, cfg.lipschitz_c)?);
        }
        if gp.spectral {
            spec = Some(rep);
        }
    }
    let decomposition = if gp.decomposition { Some(identities::overlap_decomposition(inst)?) } else { None };
    let solvers = gp.solvers.iter().map(|&k| summarize_solver(k, inst, gp)).collect();
    Ok(TrialRecord {
        schema: crate::SCHEMA_VERSION.into(),
        point,
        trial,
        seed: p.seed,
        resamples: draw,
        d: p.d,
        lambda: p.lambda,
        tau0: p.tau0,
        gamma: inst.gamma,
        cond_target: instances::cond_target(p.lambda)?,
        solve_rel_residual: inst.check_invariants().solve_rel_residual,
        b_overlap: linalg::overlap(&inst.b, &inst.u).unwrap_or(0.0),
        spectral: spec,
        transfer,
        decomposition,
        solvers,
    })
}

fn summarize_solver(kind: SolverKind, inst: &Instance, gp: &GridPoint) -> SolverSummary {
    let out = match solvers::solve_instance(kind, inst, gp.budget, &gp.solver_options) {
        Ok(o) => o,
        Err(e) => return SolverSummary::failed(kind, &e),
    };
    let r = &out.result;
    let curve = solvers::query_complexity_curve(&r.history, &gp.thresholds)
        .into_iter()
        .map(|(threshold, queries)| CurvePoint { threshold, queries })
        .collect();
    let t = r.queries_used;
    SolverSummary {
        solver: kind,
        error: None,
        queries_used: Some(t),
        rel_err: Some(r.rel_err),
        f_gap: Some(r.f_gap),
        overlap: Some(r.overlap),
        residual: Some(r.residual),
        truncated: Some(r.truncated),
        converged: Some(r.converged),
        lmin_est: r.spectrum_estimate.map(|s| s.0),
        lmax_est: r.spectrum_estimate.map(|s| s.1),
        phi_queries: Some(if t == 0 { 0.0 } else { out.phi[t - 1] }),
        phi_final: out.phi.last().copied().or(Some(0.0)),
        orthonormality_error: Some(out.orthonormality_error),
        curve,
        history: out.result.history.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutput {
    pub records: Vec<TrialRecord>,
    pub failures: Vec<FailedTrial>,
}

/// Thread count: env override, then config, then rayon's default.
pub fn thread_count(configured: Option<usize>) -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .or(configured.filter(|&n| n > 0))
}

/// Every (grid point, trial) pair on a work-stealing pool; output sorted by (point, trial).
pub fn sweep(cfg: &ExperimentConfig) -> Result<SweepOutput> {
    cfg.validate()?;
    linalg::sequential();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count(cfg.threads) {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let jobs: Vec<(usize, usize)> = (0..cfg.grid.len()).flat_map(|p| (0..cfg.trials).map(move |t| (p, t))).collect();
    let (tx, rx) = mpsc::channel();
    pool.install(|| {
        jobs.into_par_iter().for_each_with(tx, |tx, (p, t)| {
            // The receiver outlives the pool, so sending cannot fail.
            let _ = tx.send(run_trial(cfg, p, t));
        })
    });
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for r in rx {
        match r {
            Ok(rec) => records.push(rec),
            Err(f) => {
                log::warn!("trial {} at point {} failed: {}", f.trial, f.point, f.reason);
                failures.push(f);
            }
        }
    }
    records.sort_by_key(|r| (r.point, r.trial));
    failures.sort_by_key(|f| (f.point, f.trial));
    Ok(SweepOutput { records, failures })
}
