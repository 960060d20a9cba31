//! The acceptance suite: ten criteria, each a set of gating claims plus
//! supporting claims that are reported but do not decide the verdict.

use std::fs;
use std::path::Path;

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::emit::{self, Format};
use super::summary::{summarize, ClaimId, ClaimVerdict};
use super::{sweep, Deformation, ExperimentConfig, GridPoint, SweepOutput, Tau0Policy};
use crate::error::{Error, Result};
use crate::identities;
use crate::instances::{self, sample_goe, sample_plant};
use crate::linalg;
use crate::oracle;
use crate::replica;
use crate::rng;
use crate::solvers::SolverKind;
use crate::spectral;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// Trial counts and dimensions as stated by the criteria.
    Full,
    /// Small dimensions and counts; exercises every code path in seconds.
    Quick,
}

impl Scale {
    fn pick<T>(self, full: T, quick: T) -> T {
        match self {
            Scale::Full => full,
            Scale::Quick => quick,
        }
    }
}

pub const DEFAULT_SEED: u64 = 20240601;

const LAMBDA: f64 = 1.25;
const TAU0: f64 = 0.0625;

fn sub_seed(master: u64, tag: u64) -> u64 {
    rng::derive(master, &[tag])
}

/// d = 3000, lambda = 1.25, tau0 = 0.0625: spectra, transfer check and overlap decomposition.
pub fn spectral_config(scale: Scale, master: u64) -> ExperimentConfig {
    let mut gp = GridPoint::new(scale.pick(3000, 300), Deformation::Lambda(LAMBDA), Tau0Policy::Fixed(TAU0));
    gp.spectral = true;
    gp.transfer = true;
    gp.decomposition = true;
    ExperimentConfig::new("spectral", vec![gp], scale.pick(100, 6), sub_seed(master, 3))
}

/// d = 4000, lambda = 1.25, tau0 = (lambda - 1)^2: decomposition and a CG solve.
pub fn overlap_config(scale: Scale, master: u64) -> ExperimentConfig {
    let mut gp = GridPoint::new(scale.pick(4000, 300), Deformation::Lambda(LAMBDA), Tau0Policy::GapSquared);
    gp.decomposition = true;
    gp.solvers = vec![SolverKind::Cg];
    gp.budget = 1000;
    gp.solver_options.rtol = 1e-4;
    ExperimentConfig::new("overlap", vec![gp], scale.pick(50, 6), sub_seed(master, 4))
}

/// CG rounds in the potential sweep.
pub const POTENTIAL_ROUNDS: usize = 10;

/// d = 5000, lambda = 1.02, tau0 = (lambda - 1)^2: T = 10 CG queries.
pub fn potential_config(scale: Scale, master: u64) -> ExperimentConfig {
    let mut gp = GridPoint::new(scale.pick(5000, 800), Deformation::Lambda(1.02), Tau0Policy::GapSquared);
    gp.solvers = vec![SolverKind::Cg];
    gp.budget = POTENTIAL_ROUNDS;
    gp.solver_options.steps = POTENTIAL_ROUNDS;
    gp.solver_options.rtol = 0.0;
    ExperimentConfig::new("potential", vec![gp], scale.pick(100, 6), sub_seed(master, 5))
}

/// kappa = 400, d = 2000: all four solvers with a 1000-query budget.
pub fn solver_config(scale: Scale, master: u64) -> ExperimentConfig {
    let mut gp = GridPoint::new(scale.pick(2000, 300), Deformation::Kappa(400.0), Tau0Policy::GapSquared);
    gp.solvers = SolverKind::ALL.to_vec();
    gp.budget = 1000;
    gp.solver_options.steps = 1000;
    gp.solver_options.rtol = 1e-8;
    ExperimentConfig::new("solvers", vec![gp], scale.pick(30, 4), sub_seed(master, 7))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub number: u8,
    pub title: String,
    pub passed: bool,
    pub gating: Vec<ClaimVerdict>,
    pub supporting: Vec<ClaimVerdict>,
}

impl CriterionResult {
    fn new(number: u8, title: &str, gating: Vec<ClaimVerdict>, supporting: Vec<ClaimVerdict>) -> Self {
        let passed = !gating.is_empty() && gating.iter().all(ClaimVerdict::passed);
        CriterionResult { number, title: title.into(), passed, gating, supporting }
    }

    /// One-line summary: number, PASS/FAIL, title, then each gating claim.
    pub fn line(&self) -> String {
        let claims: Vec<String> = self
            .gating
            .iter()
            .map(|c| {
                let stat = c.statistic.map(|s| format!(" stat={s:.4}")).unwrap_or_default();
                format!("{}={} ({}/{}, need {}{stat})", c.claim, c.verdict.as_str(), c.successes, c.trials, c.required_successes)
            })
            .collect();
        format!("criterion {:>2} {} {}: {}", self.number, if self.passed { "PASS" } else { "FAIL" }, self.title, claims.join("; "))
    }

    /// Indented lines for the supporting claims.
    pub fn supporting_lines(&self) -> Vec<String> {
        self.supporting
            .iter()
            .map(|s| {
                let stat = s.statistic.map(|x| format!(", stat={x:.4}")).unwrap_or_default();
                format!("      supporting {}={} ({}/{}{stat})", s.claim, s.verdict.as_str(), s.successes, s.trials)
            })
            .collect()
    }

    pub fn claims(&self) -> impl Iterator<Item = &ClaimVerdict> {
        self.gating.iter().chain(&self.supporting)
    }
}

/// 1: Sherman-Morrison product and the second-order resolvent identity at d = 50.
pub fn criterion_1(scale: Scale, master: u64) -> Result<CriterionResult> {
    let (d, lambda) = (50usize, 1.3);
    let g = instances::gamma(lambda)?;
    let seeds = scale.pick(100, 20);
    let mut sm_errs = Vec::new();
    let mut so_errs = Vec::new();
    for s in 0..seeds as u64 {
        let mut r = rng::from_seed(rng::derive(master, &[1, s]));
        let w = sample_goe(d, &mut r)?;
        let u = sample_plant(d, &mut r)?;
        let b = linalg::shifted_negative(&w, g);
        let sm = identities::sherman_morrison_inverse(&linalg::dense_inverse(&b), &linalg::scaled(-lambda, &u), &u)?;
        let a = Mat::from_fn(d, d, |i, j| b[(i, j)] - lambda * u[i] * u[j]);
        let prod = linalg::matmul(&a, &sm);
        let dev = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| (prod[(i, j)] - if i == j { 1.0 } else { 0.0 }).powi(2)).sum::<f64>();
        sm_errs.push(dev.sqrt() / (d as f64).sqrt());
        so_errs.push(identities::second_order_identity_check(&w, g, lambda, &u)?.rel_err);
    }
    let ok = |v: &[f64]| v.iter().map(|&e| e <= 1e-8).collect::<Vec<_>>();
    Ok(CriterionResult::new(
        1,
        "exact resolvent identities",
        vec![
            ClaimVerdict::frequency("sherman_morrison", "|A (SM inverse) - I|_F / sqrt(d) <= 1e-8", &ok(&sm_errs), &sm_errs, seeds, 1.0),
            ClaimVerdict::frequency("second_order", "u'A^-2u denom^2 = u'(gI-W)^-2u to 1e-8", &ok(&so_errs), &so_errs, seeds, 1.0),
        ],
        vec![],
    ))
}

/// 2: Stieltjes closed forms and the bounds built from them.
pub fn criterion_2() -> Result<CriterionResult> {
    let grid: Vec<f64> = (0..20).map(|i| 2.05 + 3.95 * i as f64 / 19.0).collect();
    let mut quad_fail = 0;
    let mut fd_fail = 0;
    let mut worst_quad = 0.0f64;
    let mut worst_fd = 0.0f64;
    for &a in &grid {
        let s = spectral::stieltjes_s(a)?;
        let quad = (s * s - a * s + 1.0).abs();
        worst_quad = worst_quad.max(quad);
        quad_fail += usize::from(quad > 1e-12);
        let h = 1e-6;
        let fd = -(spectral::stieltjes_s(a + h)? - spectral::stieltjes_s(a - h)?) / (2.0 * h);
        let dev = (fd - spectral::stieltjes_q(a)?).abs();
        worst_fd = worst_fd.max(dev);
        fd_fail += usize::from(dev > 1e-6);
    }
    let lambdas: Vec<f64> = (1..=96).map(|i| 1.05 + 0.95 * i as f64 / 96.0).collect();
    let mut bound_fail = 0;
    for &l in std::iter::once(&1.05).chain(&lambdas) {
        bound_fail += usize::from(!spectral::stielt_bounds(l)?.holds());
    }
    Ok(CriterionResult::new(
        2,
        "Stieltjes self-consistency",
        vec![
            ClaimVerdict::exact("stieltjes_quadratic", "s^2 - a s + 1 = 0 to 1e-12", grid.len(), quad_fail, Some(worst_quad)),
            ClaimVerdict::exact("stieltjes_derivative", "q = -s' by central differences to 1e-6", grid.len(), fd_fail, Some(worst_fd)),
            ClaimVerdict::exact("stieltjes_bounds", "q s^2 <= 3/(2(l-1)) and 1 - l s <= l - 1 on (1.05, 2]", lambdas.len() + 1, bound_fail, None),
        ],
        vec![],
    ))
}

/// 3: normalized resolvent traces against s(2.1) and q(2.1).
pub fn criterion_3(spectral_sweep: &SweepOutput, scale: Scale) -> CriterionResult {
    let n = scale.pick(100, spectral_config(scale, 0).trials);
    let r = &spectral_sweep.records;
    CriterionResult::new(
        3,
        "normalized resolvent traces",
        vec![summarize(r, ClaimId::TraceResolvent1, n), summarize(r, ClaimId::TraceResolvent2, n)],
        vec![summarize(r, ClaimId::StieltjesTransfer, n), summarize(r, ClaimId::TopEigenvalue, n), summarize(r, ClaimId::GoeNorm, n)],
    )
}

/// 4: spectral event, conditioning and the minimizer overlap.
pub fn criterion_4(spectral_sweep: &SweepOutput, overlap_sweep: &SweepOutput, scale: Scale) -> CriterionResult {
    let n1 = scale.pick(100, spectral_config(scale, 0).trials);
    let n2 = scale.pick(50, overlap_config(scale, 0).trials);
    let (s, o) = (&spectral_sweep.records, &overlap_sweep.records);
    CriterionResult::new(
        4,
        "E_A event, cond(A) and minimizer overlap",
        vec![
            summarize(s, ClaimId::EventEa, n1),
            summarize(s, ClaimId::CondInterval, n1),
            summarize(o, ClaimId::OverlapMedian, n2),
            summarize(o, ClaimId::OverlapFloor, n2),
        ],
        vec![
            summarize(s, ClaimId::OverlapMedian, n1),
            summarize(s, ClaimId::OverlapFloor, n1),
            summarize(o, ClaimId::HansonWright, n2),
            summarize(o, ClaimId::CrossTermSmall, n2),
            summarize(o, ClaimId::BOverlapTrend, n2),
            summarize(o, ClaimId::CgOverlapFloor, n2),
        ],
    )
}

/// 5: potential growth of CG queries, and the gap check implication.
pub fn criterion_5(potential_sweep: &SweepOutput, scale: Scale) -> Result<CriterionResult> {
    // Frequency is over completed trials; see the failures file for draws that were never PD.
    let cfg = potential_config(scale, 0);
    let n = cfg.trials / 2;
    let phi = summarize(&potential_sweep.records, ClaimId::PotentialBound, n);
    let (lambda, tau0) = cfg.grid[0].resolve()?;
    let d = cfg.grid[0].d;
    let s = oracle::tau_schedule(lambda, tau0, d, None, POTENTIAL_ROUNDS)?;
    // Implication "valid => all true": vacuous when the schedule is invalid.
    let at_config = !s.valid || oracle::recursion_gap_check(&s).iter().all(|&b| b);
    let mut checked = 1;
    let mut failures = usize::from(!at_config);
    let boundary = oracle::tau_schedule(lambda, s.validity_threshold, d, None, POTENTIAL_ROUNDS)?;
    checked += 1;
    failures += usize::from(!boundary.valid || !oracle::recursion_gap_check(&boundary).iter().all(|&b| b));
    let gap = ClaimVerdict::exact("gap_check_when_valid", "recursion gap check all-true whenever tau0 >= validity threshold", checked, failures, Some(s.validity_threshold));
    let truncated = ClaimVerdict::exact(
        "potential_config_valid",
        "tau0 at the potential config meets the validity threshold",
        1,
        usize::from(!s.valid),
        Some(tau0 / s.validity_threshold),
    );
    let completed = ClaimVerdict::frequency(
        "potential_completed_trials",
        "trials with a positive definite draw within three attempts",
        &vec![true; potential_sweep.records.len()].into_iter().chain(vec![false; potential_sweep.failures.len()]).collect::<Vec<_>>(),
        &[],
        cfg.trials,
        0.9,
    );
    Ok(CriterionResult::new(5, "potential bound for T=10 CG queries", vec![phi, gap], vec![truncated, completed]))
}

/// Fraction of random orthonormal (k+1)-frames with Phi >= tau, and the bound.
pub fn small_ball_frequency(d: usize, k: usize, tau: f64, draws: usize, seed: u64) -> Result<(usize, f64)> {
    let bound = oracle::small_ball_bound(d, k, tau)?;
    const CHUNK: usize = 1000;
    let chunks = draws.div_ceil(CHUNK);
    let hits: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut r = rng::from_seed(rng::mix(seed, c as u64));
            let n = CHUNK.min(draws - c * CHUNK);
            let mut count = 0;
            for _ in 0..n {
                let u = rng::gaussian_vec(&mut r, d, (1.0 / d as f64).sqrt());
                let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k + 1);
                while basis.len() < k + 1 {
                    let v = rng::gaussian_vec(&mut r, d, 1.0);
                    if let Some(e) = oracle::orthonormal_extension(&basis, &v) {
                        basis.push(e);
                    }
                }
                count += usize::from(oracle::potential(&basis, &u) >= tau);
            }
            count
        })
        .sum();
    Ok((hits, bound))
}

/// 6: small-ball probability for random orthonormal frames.
pub fn criterion_6(scale: Scale, master: u64) -> Result<CriterionResult> {
    let (d, k, tau) = (200usize, 2usize, 0.1);
    let draws = scale.pick(100_000, 10_000);
    let (hits, bound) = small_ball_frequency(d, k, tau, draws, rng::derive(master, &[6]))?;
    let freq = hits as f64 / draws as f64;
    let v = ClaimVerdict::statistic_in("small_ball", "empirical Pr[Phi >= tau] <= exp(-(sqrt(d tau) - sqrt(2(k+1)))^2 / 2)", Some(freq), &[freq], 0.0, bound, 1);
    Ok(CriterionResult::new(6, "small-ball probability", vec![v], vec![]))
}

/// 7: query counts at kappa = 400.
pub fn criterion_7(solver_sweep: &SweepOutput, scale: Scale) -> CriterionResult {
    let n = scale.pick(30, solver_config(scale, 0).trials);
    let r = &solver_sweep.records;
    CriterionResult::new(
        7,
        "query complexity at kappa=400",
        vec![summarize(r, ClaimId::CgWithinBudget, n), summarize(r, ClaimId::NesterovWithinBudget, n), summarize(r, ClaimId::GdCgRatio, n)],
        vec![summarize(r, ClaimId::CurvesDominate, n)],
    )
}

/// 8: replica closed forms.
pub fn criterion_8() -> Result<CriterionResult> {
    let mut n_cv = 0;
    let mut cv_fail = 0;
    let mut worst_cv = 0.0f64;
    for i in 0..=29 {
        let rho = 1.1 + 2.9 * i as f64 / 29.0;
        for j in 0..=10 {
            let mu = j as f64 / 10.0;
            let dev = (replica::q_star_closed(rho, mu)?.q - replica::q_star_numeric(rho, mu)?).abs();
            worst_cv = worst_cv.max(dev);
            cv_fail += usize::from(dev > 1e-8);
            n_cv += 1;
        }
    }
    let rhos: Vec<f64> = (0..=60).map(|i| 1.05 + i as f64 * 0.25).collect();
    let zero_mu_fail = rhos.iter().filter(|&&rho| replica::q_star_closed(rho, 0.0).map_or(true, |q| q.q != 1.0 - 1.0 / rho)).count();
    let lambdas: Vec<f64> = (1..=100).map(|i| 1.0 + i as f64 / 100.0).collect();
    let mut cap_fail = 0;
    for &l in &lambdas {
        let a = replica::overlap_asymptote(l, (l - 1.0f64).powi(2))?;
        cap_fail += usize::from(a.within_nine_halves != Some(true));
    }
    let mut n_st = 0;
    let mut st_fail = 0;
    let mut worst_st = 0.0f64;
    for &rho in &rhos {
        for j in 0..=20 {
            let mu = j as f64 / 10.0;
            let q = replica::q_star_closed(rho, mu)?.q;
            let res = ((1.0 + q * rho) * ((1.0 + mu * mu) - q) - 1.0).abs();
            worst_st = worst_st.max(res);
            st_fail += usize::from(res > 1e-10);
            n_st += 1;
        }
    }
    Ok(CriterionResult::new(
        8,
        "replica closed forms",
        vec![
            ClaimVerdict::exact("q_star_cross_validation", "closed form vs golden section to 1e-8", n_cv, cv_fail, Some(worst_cv)),
            ClaimVerdict::exact("q_star_mu_zero", "mu = 0 gives 1 - 1/rho exactly", rhos.len(), zero_mu_fail, None),
            ClaimVerdict::exact("overlap_nine_halves", "overlap asymptote <= 9(lambda-1)/2 at tau0 = (lambda-1)^2", lambdas.len(), cap_fail, None),
            ClaimVerdict::exact("stationarity", "(1 + q rho)(1 + mu^2 - q) = 1 to 1e-10", n_st, st_fail, Some(worst_st)),
        ],
        vec![],
    ))
}

/// 9: importance-sampling posterior at d = 6.
pub fn criterion_9(scale: Scale, master: u64) -> Result<CriterionResult> {
    let (d, mu) = (6usize, 0.5);
    let inst = scale.pick(20, 4);
    let samples = scale.pick(200_000, 10_000);
    let seed = rng::derive(master, &[9]);
    let run = |rho: f64| replica::posterior_cross_mc(d, rho, mu, samples, inst, &mut rng::from_seed(seed));
    let zero = run(0.0)?;
    let low = run(1.5)?;
    let high = run(4.0)?;
    let paired: Vec<f64> = high.per_instance.iter().zip(&low.per_instance).map(|(h, l)| h - l).collect();
    let oracle = replica::prior_cross(d, mu);
    let dev = (zero.estimate - oracle).abs();
    let target = replica::q_star_closed(4.0, mu)?.q.powi(2);
    let ratio = high.estimate / target;
    let cap = (1.0 + mu * mu).powi(2);
    let inside = [&zero, &low, &high].iter().filter(|p| p.estimate >= 0.0 && p.estimate <= cap * (1.0 + 3.0 * p.stderr)).count();
    let fourth = replica::prior_fourth_moment(d, mu);
    let inside_fourth = [&zero, &low, &high].iter().filter(|p| p.estimate <= fourth * (1.0 + 3.0 * p.stderr)).count();
    let ess_ok = [&zero, &low, &high].iter().filter(|p| !p.unreliable).count();
    Ok(CriterionResult::new(
        9,
        "posterior Monte Carlo at d=6",
        vec![
            ClaimVerdict::statistic_in("posterior_prior_oracle", "rho = 0 estimate within 3 standard errors of the prior moment", Some(dev), &zero.per_instance, 0.0, 3.0 * zero.stderr, 1),
            ClaimVerdict::statistic_in("posterior_monotone", "estimate(rho=4) - estimate(rho=1.5) >= 0, paired seeds", Some(high.estimate - low.estimate), &paired, 0.0, f64::INFINITY, 1),
            ClaimVerdict::statistic_in("posterior_factor_two", "estimate(rho=4, mu=0.5) / q_star^2 in [1/2, 2]", Some(ratio), &high.per_instance, 0.5, 2.0, 1),
        ],
        vec![
            ClaimVerdict::exact("posterior_cap_prior_square", "estimate <= (E|u|^2)^2 (1 + 3 stderr)", 3, 3 - inside, Some(cap)),
            ClaimVerdict::exact("posterior_cap_fourth_moment", "estimate <= E|u|^4 (1 + 3 stderr)", 3, 3 - inside_fourth, Some(fourth)),
            ClaimVerdict::exact("posterior_ess", "effective sample size >= 50 on every instance", 3, 3 - ess_ok, Some(zero.min_ess.min(low.min_ess).min(high.min_ess))),
        ],
    ))
}

/// CSV bodies (comment line stripped) of every file a sweep emits, keyed by name.
pub fn sweep_bodies(name: &str, out: &SweepOutput, dir: &Path) -> Result<Vec<(String, String)>> {
    let mut bodies = Vec::new();
    if out.records.is_empty() {
        return Ok(bodies);
    }
    for p in emit::emit(dir, name, &out.records, &out.failures, Format::Csv)? {
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let file = p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
        bodies.push((file, emit::diffable_body(&text).to_string()));
    }
    Ok(bodies)
}

fn scratch_dir(tag: &str) -> Result<std::path::PathBuf> {
    let nanos = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_nanos());
    let dir = std::env::temp_dir().join(format!("hardquad-{tag}-{}-{nanos}", std::process::id()));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

/// 10: two quick sweeps with the same master seed write identical CSV bodies.
pub fn criterion_10(master: u64) -> Result<CriterionResult> {
    let mut bodies = Vec::new();
    for run in 0..2 {
        let dir = scratch_dir(&format!("repro{run}"))?;
        let mut all = Vec::new();
        for cfg in [spectral_config(Scale::Quick, master), overlap_config(Scale::Quick, master), potential_config(Scale::Quick, master), solver_config(Scale::Quick, master)] {
            let mut c = cfg.clone();
            // Different pool sizes on the two runs: order-normalized output must not care.
            c.threads = Some(run + 1);
            all.extend(sweep_bodies(&c.name, &sweep(&c)?, &dir)?);
        }
        let _ = fs::remove_dir_all(&dir);
        bodies.push(all);
    }
    let files = bodies[0].len();
    let mismatched = bodies[0].iter().zip(&bodies[1]).filter(|(a, b)| a != b).count() + bodies[0].len().abs_diff(bodies[1].len());
    Ok(CriterionResult::new(
        10,
        "reproducible CSV bodies",
        vec![ClaimVerdict::exact("byte_identical_csv", "repeated quick sweeps give byte-identical CSV bodies", files, mismatched, None)],
        vec![],
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub scale: Scale,
    pub master_seed: u64,
    pub criteria: Vec<CriterionResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }

    pub fn claims(&self) -> Vec<ClaimVerdict> {
        self.criteria.iter().flat_map(|c| c.claims().cloned()).collect()
    }
}

/// Run the selected criteria (all when `only` is empty), writing sweep CSVs and claims.csv to `out`.
pub fn run_verify(scale: Scale, master: u64, out: Option<&Path>, only: &[u8]) -> Result<VerifyReport> {
    let wanted = |n: u8| only.is_empty() || only.contains(&n);
    let run_sweep = |cfg: ExperimentConfig| -> Result<SweepOutput> {
        log::info!("sweep {}: {} trials", cfg.name, cfg.trials * cfg.grid.len());
        let o = sweep(&cfg)?;
        if let Some(dir) = out {
            if !o.records.is_empty() {
                emit::emit(dir, &cfg.name, &o.records, &o.failures, Format::Csv)?;
            }
        }
        Ok(o)
    };
    let spectral_sweep = if wanted(3) || wanted(4) { Some(run_sweep(spectral_config(scale, master))?) } else { None };
    let overlap_sweep = if wanted(4) { Some(run_sweep(overlap_config(scale, master))?) } else { None };
    let mut criteria = Vec::new();
    if wanted(1) {
        criteria.push(criterion_1(scale, master)?);
    }
    if wanted(2) {
        criteria.push(criterion_2()?);
    }
    if let (true, Some(s)) = (wanted(3), &spectral_sweep) {
        criteria.push(criterion_3(s, scale));
    }
    if let (Some(s), Some(o)) = (&spectral_sweep, &overlap_sweep) {
        criteria.push(criterion_4(s, o, scale));
    }
    if wanted(5) {
        criteria.push(criterion_5(&run_sweep(potential_config(scale, master))?, scale)?);
    }
    if wanted(6) {
        criteria.push(criterion_6(scale, master)?);
    }
    if wanted(7) {
        criteria.push(criterion_7(&run_sweep(solver_config(scale, master))?, scale));
    }
    if wanted(8) {
        criteria.push(criterion_8()?);
    }
    if wanted(9) {
        criteria.push(criterion_9(scale, master)?);
    }
    if wanted(10) {
        criteria.push(criterion_10(master)?);
    }
    let report = VerifyReport { scale, master_seed: master, criteria };
    if let Some(dir) = out {
        emit::write_claims_csv(&dir.join("claims.csv"), &report.claims())?;
        let path = dir.join("verify.json");
        let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Json { path: path.clone(), source: e })?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(report)
}
