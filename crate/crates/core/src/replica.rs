//! Replica-symmetric free energy for Gaussian priors, its maximizer, and a
//! small-dimension importance-sampling estimate of the posterior cross term.

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instances;
use crate::linalg::{self, SpdFactor};
use crate::rng::{self, Rng};

/// F(q; rho, mu) = (rho q / 2)((1 + mu^2) - q/2) - log(1 + q rho) / 2
pub fn free_energy_f(q: f64, rho: f64, mu: f64) -> f64 {
    rho * q / 2.0 * ((1.0 + mu * mu) - q / 2.0) - 0.5 * (q * rho).ln_1p()
}

/// dF/dq = (rho/2)((1 + mu^2) - q - 1/(1 + q rho))
pub fn free_energy_dq(q: f64, rho: f64, mu: f64) -> f64 {
    rho / 2.0 * ((1.0 + mu * mu) - q - 1.0 / (1.0 + q * rho))
}

/// F(q1) - F(q2) without forming either value.
fn free_energy_diff(q1: f64, q2: f64, rho: f64, mu: f64) -> f64 {
    let dq = q1 - q2;
    rho / 2.0 * dq * ((1.0 + mu * mu) - (q1 + q2) / 2.0) - 0.5 * (rho * dq / (1.0 + q2 * rho)).ln_1p()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QStar {
    pub q: f64,
    /// rho <= 1 with mu = 0: no informative maximizer.
    pub sub_threshold: bool,
}

/// Positive root of (1 + q rho)((1 + mu^2) - q) = 1.
pub fn q_star_closed(rho: f64, mu: f64) -> Result<QStar> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::Domain(format!("rho = {rho} must be positive")));
    }
    if mu == 0.0 && rho <= 1.0 {
        return Ok(QStar { q: 0.0, sub_threshold: true });
    }
    let a = 1.0 + mu * mu - 1.0 / rho;
    let disc = (a * a + 4.0 * mu * mu / rho).sqrt();
    // For a < 0 use the conjugate form to avoid cancellation.
    let q = if a >= 0.0 { (a + disc) / 2.0 } else { 2.0 * mu * mu / rho / (disc - a) };
    Ok(QStar { q, sub_threshold: false })
}

/// Golden-section maximization of F over [0, 4(1 + mu^2)].
pub fn q_star_numeric(rho: f64, mu: f64) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::Domain(format!("rho = {rho} must be positive")));
    }
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0f64, 4.0 * (1.0 + mu * mu));
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    while hi - lo > 1e-12 {
        if free_energy_diff(x1, x2, rho, mu) >= 0.0 {
            hi = x2;
            x2 = x1;
            x1 = hi - inv_phi * (hi - lo);
        } else {
            lo = x1;
            x1 = x2;
            x2 = lo + inv_phi * (hi - lo);
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Upper bound 1 + mu^2 - 1/rho + |mu| / sqrt(rho) on the maximizer.
pub fn q_star_upper(rho: f64, mu: f64) -> f64 {
    1.0 + mu * mu - 1.0 / rho + mu.abs() / rho.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicaPoint {
    pub rho: f64,
    pub mu: f64,
    pub q_star: f64,
    pub f_at_qstar: f64,
    /// q_star^2
    pub overlap_asymptote: f64,
}

pub fn replica_point(rho: f64, mu: f64) -> Result<ReplicaPoint> {
    let q = q_star_closed(rho, mu)?.q;
    Ok(ReplicaPoint { rho, mu, q_star: q, f_at_qstar: free_energy_f(q, rho, mu), overlap_asymptote: q * q })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapAsymptote {
    /// 1 - 1/lambda^2 + tau0 + sqrt(tau0)/lambda
    pub value: f64,
    /// (lambda-1)((lambda+1)/lambda^2 + (lambda-1) + 1/lambda), when tau0 = (lambda-1)^2
    pub factored: Option<f64>,
    /// value <= 9(lambda-1)/2, when tau0 = (lambda-1)^2
    pub within_nine_halves: Option<bool>,
}

pub fn overlap_asymptote(lambda: f64, tau0: f64) -> Result<OverlapAsymptote> {
    if !(lambda > 1.0) || !(tau0 >= 0.0) {
        return Err(Error::Domain(format!("need lambda > 1 and tau0 >= 0, got {lambda}, {tau0}")));
    }
    let value = 1.0 - 1.0 / (lambda * lambda) + tau0 + tau0.sqrt() / lambda;
    let on_curve = (tau0 - (lambda - 1.0).powi(2)).abs() <= 1e-12 * tau0.max(1e-300);
    let factored = on_curve.then(|| (lambda - 1.0) * ((lambda + 1.0) / (lambda * lambda) + (lambda - 1.0) + 1.0 / lambda));
    Ok(OverlapAsymptote { value, factored, within_nine_halves: on_curve.then(|| value <= 4.5 * (lambda - 1.0)) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoMu {
    pub rho: f64,
    pub mu: f64,
    pub sub_threshold: bool,
}

/// rho = (lambda / (1 + tau0))^2, mu = sqrt(tau0).
pub fn rho_mu_from(lambda: f64, tau0: f64) -> Result<RhoMu> {
    if !(lambda > 0.0) || !(tau0 >= 0.0) {
        return Err(Error::Domain(format!("need lambda > 0 and tau0 >= 0, got {lambda}, {tau0}")));
    }
    let rho = (lambda / (1.0 + tau0)).powi(2);
    Ok(RhoMu { rho, mu: tau0.sqrt(), sub_threshold: rho <= 1.0 })
}

/// u | b ~ N(mean_scale * b, variance * I).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalPlant {
    pub mean_scale: f64,
    pub variance: f64,
}

impl ConditionalPlant {
    pub fn mean(&self, b: &[f64]) -> Vec<f64> {
        b.iter().map(|x| self.mean_scale * x).collect()
    }
}

pub fn conditional_plant(tau0: f64, b: &[f64]) -> Result<ConditionalPlant> {
    if !(tau0 >= 0.0) || b.is_empty() {
        return Err(Error::Domain(format!("need tau0 >= 0 and nonempty b, got tau0 = {tau0}")));
    }
    Ok(ConditionalPlant { mean_scale: tau0.sqrt() / (1.0 + tau0), variance: 1.0 / (b.len() as f64 * (1.0 + tau0)) })
}

/// One replica-table row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicaRow {
    pub lambda: f64,
    pub tau0: f64,
    pub rho: f64,
    pub mu: f64,
    pub q_star: f64,
    pub overlap_asymptote: f64,
    pub bound_9_2: f64,
}

pub fn replica_row(lambda: f64, tau0: f64) -> Result<ReplicaRow> {
    let rm = rho_mu_from(lambda, tau0)?;
    Ok(ReplicaRow {
        lambda,
        tau0,
        rho: rm.rho,
        mu: rm.mu,
        q_star: q_star_closed(rm.rho, rm.mu)?.q,
        overlap_asymptote: overlap_asymptote(lambda, tau0)?.value,
        bound_9_2: 4.5 * (lambda - 1.0),
    })
}

/// Rows over a lambda grid with tau0 = (lambda - 1)^2.
pub fn replica_table(lambdas: &[f64]) -> Result<Vec<ReplicaRow>> {
    lambdas.iter().map(|&l| replica_row(l, (l - 1.0).powi(2))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorCross {
    pub estimate: f64,
    pub stderr: f64,
    pub per_instance: Vec<f64>,
    /// Weighted fourth moment of the proposals, an upper bound per instance.
    pub per_instance_bound: Vec<f64>,
    pub min_ess: f64,
    pub unreliable: bool,
}

/// E|u|^4 for u_i ~ N(mu/sqrt d, 1/d).
pub fn prior_fourth_moment(d: usize, mu: f64) -> f64 {
    let m2 = mu * mu;
    (1.0 + m2).powi(2) + (2.0 + 4.0 * m2) / d as f64
}

/// |E u u^T|_F^2 under the prior: mu^4 + 2 mu^2 / d + 1/d.
pub fn prior_cross(d: usize, mu: f64) -> f64 {
    let m2 = mu * mu;
    m2 * m2 + 2.0 * m2 / d as f64 + 1.0 / d as f64
}

pub const MIN_ESS: f64 = 50.0;

/// Which entries of M enter the likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observation {
    Full,
    OffDiagonal,
}

/// Average over instances of |E[u u^T | M]|_F^2 for M = W + sqrt(rho) u u^T, estimated by
/// self-normalized importance sampling.
pub fn posterior_cross_mc(d: usize, rho: f64, mu: f64, n_samples: usize, n_instances: usize, rng: &mut Rng) -> Result<PosteriorCross> {
    posterior_cross_mc_with(d, rho, mu, n_samples, n_instances, Observation::Full, rng)
}

pub fn posterior_cross_mc_with(
    d: usize,
    rho: f64,
    mu: f64,
    n_samples: usize,
    n_instances: usize,
    obs: Observation,
    rng: &mut Rng,
) -> Result<PosteriorCross> {
    if d < 2 || d > 12 {
        return Err(Error::Precondition(format!("posterior sampler supports 2 <= d <= 12, got {d}")));
    }
    if n_samples < 10_000 || n_instances == 0 {
        return Err(Error::Precondition(format!("need n_samples >= 10^4 and n_instances >= 1, got {n_samples}, {n_instances}")));
    }
    if !(rho >= 0.0) {
        return Err(Error::Domain(format!("rho = {rho} must be >= 0")));
    }
    let master: u64 = rand::Rng::random(rng);
    let results: Vec<Result<(f64, f64, f64)>> =
        (0..n_instances).into_par_iter().map(|i| one_instance(d, rho, mu, n_samples, obs, &mut rng::from_seed(rng::mix(master, i as u64)))).collect();
    let mut per_instance = Vec::with_capacity(n_instances);
    let mut per_instance_bound = Vec::with_capacity(n_instances);
    let mut min_ess = f64::INFINITY;
    for r in results {
        let (c, bound, ess) = r?;
        per_instance.push(c);
        per_instance_bound.push(bound);
        min_ess = min_ess.min(ess);
    }
    let n = n_instances as f64;
    let estimate = per_instance.iter().sum::<f64>() / n;
    let stderr = if n_instances > 1 {
        (per_instance.iter().map(|c| (c - estimate).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
    } else {
        f64::NAN
    };
    if min_ess < MIN_ESS {
        log::warn!("posterior sampler: effective sample size {min_ess:.1} below {MIN_ESS}");
    }
    Ok(PosteriorCross { estimate, stderr, per_instance, per_instance_bound, min_ess, unreliable: min_ess < MIN_ESS })
}

/// Negative log-likelihood of `v` given the observed M (up to a constant).
fn neg_log_lik(m: &[f64], v: &[f64], sr: f64, obs: Observation) -> f64 {
    let d = v.len();
    let df = d as f64;
    let mut ll = 0.0;
    for i in 0..d {
        if obs == Observation::Full {
            let e = m[i * d + i] - sr * v[i] * v[i];
            ll += df / 4.0 * e * e;
        }
        for j in (i + 1)..d {
            let e = m[i * d + j] - sr * v[i] * v[j];
            ll += df / 2.0 * e * e;
        }
    }
    ll
}

/// Gradient and Hessian of the negative log posterior at `v`.
fn posterior_curvature(m: &[f64], v: &[f64], sr: f64, shift: f64, obs: Observation) -> (Vec<f64>, Mat<f64>) {
    let d = v.len();
    let df = d as f64;
    let included = |k: usize, j: usize| k != j || obs == Observation::Full;
    let mut g: Vec<f64> = v.iter().map(|x| df * (x - shift)).collect();
    let mut h = Mat::<f64>::zeros(d, d);
    for k in 0..d {
        let mut sq = 0.0;
        for j in (0..d).filter(|&j| included(k, j)) {
            let e = m[k * d + j] - sr * v[k] * v[j];
            g[k] -= df * sr * e * v[j];
            sq += v[j] * v[j];
            h[(k, j)] += df * sr * sr * v[k] * v[j] - df * sr * e;
        }
        h[(k, k)] += df + df * sr * sr * sq;
    }
    (g, h)
}

/// Damped Newton on the negative log posterior. Returns the mode and the factored Hessian there.
fn laplace_mode(m: &[f64], start: Vec<f64>, sr: f64, shift: f64, obs: Observation) -> Option<(Vec<f64>, SpdFactor)> {
    let d = start.len();
    let energy = |v: &[f64]| neg_log_lik(m, v, sr, obs) + d as f64 / 2.0 * v.iter().map(|x| (x - shift).powi(2)).sum::<f64>();
    let mut v = start;
    let mut e = energy(&v);
    for _ in 0..100 {
        let (g, h) = posterior_curvature(m, &v, sr, shift, obs);
        if linalg::norm(&g) < 1e-10 * (1.0 + e.abs()) {
            break;
        }
        let mut damping = 0.0;
        let mut moved = false;
        while damping < 1e8 {
            let damped = Mat::from_fn(d, d, |i, j| h[(i, j)] + if i == j { damping } else { 0.0 });
            if let Some(f) = SpdFactor::new(&damped) {
                let step = f.solve(&g);
                let cand = linalg::sub(&v, &step);
                let ec = energy(&cand);
                if ec <= e {
                    moved = e - ec > 1e-14 * (1.0 + e.abs());
                    v = cand;
                    e = ec;
                    break;
                }
            }
            damping = if damping == 0.0 { 1e-3 * d as f64 } else { damping * 10.0 };
        }
        if !moved {
            break;
        }
    }
    let (_, h) = posterior_curvature(m, &v, sr, shift, obs);
    SpdFactor::new(&h).map(|f| (v, f))
}

/// Gaussian proposal component N(mean, (INFLATE^2) H^{-1}).
struct Component {
    mean: Vec<f64>,
    factor: SpdFactor,
    log_norm: f64,
}

/// Widens each Laplace component so its tails cover the posterior's.
const INFLATE: f64 = 1.2;

impl Component {
    fn new(mean: Vec<f64>, factor: SpdFactor) -> Self {
        let d = mean.len() as f64;
        let log_norm = 0.5 * factor.log_det() - d * INFLATE.ln();
        Component { mean, factor, log_norm }
    }

    fn draw(&self, r: &mut Rng) -> Vec<f64> {
        let z: Vec<f64> = (0..self.mean.len()).map(|_| INFLATE * rng::normal(r)).collect();
        let mut x = self.factor.solve_lt(&z);
        linalg::axpy(1.0, &self.mean, &mut x);
        x
    }

    /// log density without the common -(d/2) log 2 pi
    fn log_density(&self, x: &[f64]) -> f64 {
        let y = self.factor.lt_mul(&linalg::sub(x, &self.mean));
        self.log_norm - linalg::norm_sq(&y) / (2.0 * INFLATE * INFLATE)
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let top = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    top + xs.iter().map(|x| (x - top).exp()).sum::<f64>().ln()
}

fn one_instance(d: usize, rho: f64, mu: f64, n_samples: usize, obs: Observation, r: &mut Rng) -> Result<(f64, f64, f64)> {
    let w = instances::sample_goe(d, r)?;
    let sd = (1.0 / d as f64).sqrt();
    let shift = mu / (d as f64).sqrt();
    let u: Vec<f64> = (0..d).map(|_| shift + sd * rng::normal(r)).collect();
    let sr = rho.sqrt();
    let m: Vec<f64> = (0..d * d).map(|k| w[(k / d, k % d)] + sr * u[k / d] * u[k % d]).collect();
    posterior_moments(&m, d, rho, mu, n_samples, obs, r)
}

/// (|E[u u^T | M]|_F^2, E[|u|^4 | M], ESS) for row-major M. Proposal: half prior, half split over
/// Laplace fits at the distinct posterior modes. The prior half keeps every weight below twice the
/// likelihood.
fn posterior_moments(m: &[f64], d: usize, rho: f64, mu: f64, n_samples: usize, obs: Observation, r: &mut Rng) -> Result<(f64, f64, f64)> {
    let df = d as f64;
    let sd = (1.0 / df).sqrt();
    let shift = mu / df.sqrt();
    let sr = rho.sqrt();
    let draw_prior = |r: &mut Rng| -> Vec<f64> { (0..d).map(|_| shift + sd * rng::normal(r)).collect() };
    let log_prior = |v: &[f64]| 0.5 * df * df.ln() - df / 2.0 * v.iter().map(|x| (x - shift).powi(2)).sum::<f64>();

    let mut comps: Vec<Component> = Vec::new();
    if rho > 0.0 {
        let mm = Mat::from_fn(d, d, |i, j| m[i * d + j]);
        let eig = mm.self_adjoint_eigen(faer::Side::Lower).map_err(|e| Error::Numerical(format!("eigen-decomposition failed: {e:?}")))?;
        let top = eig.S().column_vector()[d - 1].max(0.0);
        let scale = (top / sr).sqrt();
        let e1: Vec<f64> = (0..d).map(|i| eig.U()[(i, d - 1)] * scale).collect();
        let starts = [e1.clone(), linalg::scaled(-1.0, &e1), vec![shift; d]];
        for s in starts {
            if let Some((mode, f)) = laplace_mode(m, s, sr, shift, obs) {
                if comps.iter().all(|c| linalg::norm(&linalg::sub(&c.mean, &mode)) > 1e-6 * (1.0 + linalg::norm(&mode))) {
                    comps.push(Component::new(mode, f));
                }
            }
        }
    }
    let prior_share: f64 = if comps.is_empty() { 1.0 } else { 0.5 };
    let log_shares: Vec<f64> = std::iter::once(prior_share.ln())
        .chain(comps.iter().map(|_| ((1.0 - prior_share) / comps.len() as f64).ln()))
        .collect();

    let mut cand = Vec::with_capacity(n_samples);
    let mut logw = Vec::with_capacity(n_samples);
    let mut terms = vec![0.0; comps.len() + 1];
    for _ in 0..n_samples {
        let pick: f64 = rand::Rng::random(r);
        let v = if pick < prior_share || comps.is_empty() {
            draw_prior(r)
        } else {
            let k = (((pick - prior_share) / (1.0 - prior_share)) * comps.len() as f64) as usize;
            comps[k.min(comps.len() - 1)].draw(r)
        };
        let lp = log_prior(&v);
        terms[0] = log_shares[0] + lp;
        for (t, (c, ls)) in terms[1..].iter_mut().zip(comps.iter().zip(&log_shares[1..])) {
            *t = ls + c.log_density(&v);
        }
        logw.push(lp - neg_log_lik(m, &v, sr, obs) - log_sum_exp(&terms));
        cand.push(v);
    }
    let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let wts: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = wts.iter().sum();
    let sq: f64 = wts.iter().map(|x| x * x).sum();
    let mut post = vec![0.0; d * d];
    let mut fourth = 0.0;
    for (v, wt) in cand.iter().zip(&wts) {
        let p = wt / total;
        for i in 0..d {
            for j in 0..d {
                post[i * d + j] += p * v[i] * v[j];
            }
        }
        fourth += p * linalg::norm_sq(v).powi(2);
    }
    let cross: f64 = post.iter().map(|x| x * x).sum();
    Ok((cross, fourth, total * total / sq))
}
