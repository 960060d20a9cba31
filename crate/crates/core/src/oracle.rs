//! Counted matrix-vector oracle, the projection potential, and the tau-recursion bounds.

use std::cell::Cell;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instances::Instance;
use crate::linalg;

/// Relative norm below which a query adds nothing to the basis.
pub const DROP_TOL: f64 = 1e-10;

/// A symmetric linear map reachable only through products.
pub trait MatVec {
    fn dim(&self) -> usize;
    fn apply(&self, v: &[f64]) -> Vec<f64>;
}

impl MatVec for Mat<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        linalg::matvec(self, v)
    }
}

/// Wraps a map and counts every product taken through it.
pub struct CountingMatVec<'a> {
    inner: &'a dyn MatVec,
    calls: Cell<usize>,
}

impl<'a> CountingMatVec<'a> {
    pub fn new(inner: &'a dyn MatVec) -> Self {
        CountingMatVec { inner, calls: Cell::new(0) }
    }
    pub fn calls(&self) -> usize {
        self.calls.get()
    }
}

impl MatVec for CountingMatVec<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.calls.set(self.calls.get() + 1);
        self.inner.apply(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub index: usize,
    pub phi: f64,
    pub residual: Option<f64>,
}

pub struct QuerySession<'a> {
    op: &'a dyn MatVec,
    b: Vec<f64>,
    basis: Vec<Vec<f64>>,
    raw_log: Vec<(Vec<f64>, Vec<f64>)>,
    basis_len: Vec<usize>,
    residuals: Vec<Option<f64>>,
    estimate: Option<Vec<f64>>,
    t_used: usize,
    budget: usize,
}

/// Session over `inst.a` revealing only `inst.b`.
pub fn open_session(inst: &Instance, budget: usize) -> QuerySession<'_> {
    QuerySession::new(&inst.a, inst.b.clone(), budget)
}

impl<'a> QuerySession<'a> {
    pub fn new(op: &'a dyn MatVec, b: Vec<f64>, budget: usize) -> Self {
        assert_eq!(op.dim(), b.len(), "b does not match the operator dimension");
        QuerySession {
            op,
            b,
            basis: Vec::new(),
            raw_log: Vec::new(),
            basis_len: Vec::new(),
            residuals: Vec::new(),
            estimate: None,
            t_used: 0,
            budget,
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn t_used(&self) -> usize {
        self.t_used
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn remaining(&self) -> usize {
        self.budget - self.t_used
    }

    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    pub fn raw_log(&self) -> &[(Vec<f64>, Vec<f64>)] {
        &self.raw_log
    }

    /// Returns A v. Every call is charged, including repeats and the zero vector.
    pub fn query(&mut self, v: &[f64]) -> Result<Vec<f64>> {
        if self.t_used >= self.budget {
            return Err(Error::BudgetExhausted(self.t_used));
        }
        if v.len() != self.dim() {
            return Err(Error::InvalidInput(format!("query of length {} in dimension {}", v.len(), self.dim())));
        }
        if !v.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidInput("query vector has non-finite entries".into()));
        }
        let w = self.op.apply(v);
        self.t_used += 1;
        if let Some(e) = orthonormal_extension(&self.basis, v) {
            self.basis.push(e);
        }
        self.raw_log.push((v.to_vec(), w.clone()));
        self.basis_len.push(self.basis.len());
        self.residuals.push(None);
        Ok(w)
    }

    /// Attach the caller's relative residual to the latest query.
    pub fn annotate_residual(&mut self, r: f64) {
        if let Some(last) = self.residuals.last_mut() {
            *last = Some(r);
        }
    }

    /// Record the final estimate direction; it joins the span for potential accounting only.
    pub fn register_estimate(&mut self, dir: &[f64]) {
        self.estimate = Some(dir.to_vec());
    }

    /// max |V^T V - I|
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for (i, a) in self.basis.iter().enumerate() {
            for (j, b) in self.basis.iter().enumerate().skip(i) {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((linalg::dot(a, b) - target).abs());
            }
        }
        worst
    }

    /// Potential after each query, plus one more entry when an estimate is registered.
    pub fn potential_trajectory(&self, u: &[f64]) -> Vec<f64> {
        let proj: Vec<f64> = self.basis.iter().map(|v| linalg::dot(v, u).powi(2)).collect();
        let mut prefix = Vec::with_capacity(proj.len() + 1);
        prefix.push(0.0);
        for p in &proj {
            prefix.push(prefix[prefix.len() - 1] + p);
        }
        let mut out: Vec<f64> = self.basis_len.iter().map(|&k| prefix[k]).collect();
        if let Some(e) = &self.estimate {
            let last = prefix[self.basis.len()];
            let extra = orthonormal_extension(&self.basis, e).map_or(0.0, |x| linalg::dot(&x, u).powi(2));
            out.push(last + extra);
        }
        out
    }

    pub fn potential(&self, u: &[f64]) -> f64 {
        potential(&self.basis, u)
    }

    /// One record per query, matching the potential trajectory.
    pub fn trace(&self, u: &[f64]) -> Vec<TraceRecord> {
        let phis = self.potential_trajectory(u);
        phis.iter()
            .take(self.t_used)
            .enumerate()
            .map(|(i, &phi)| TraceRecord { index: i + 1, phi, residual: self.residuals[i] })
            .collect()
    }
}

/// Normalized component of `v` orthogonal to `basis`, two Gram-Schmidt passes.
pub fn orthonormal_extension(basis: &[Vec<f64>], v: &[f64]) -> Option<Vec<f64>> {
    let nv = linalg::norm(v);
    if nv == 0.0 {
        return None;
    }
    let mut r = v.to_vec();
    for _ in 0..2 {
        for q in basis {
            let c = linalg::dot(q, &r);
            linalg::axpy(-c, q, &mut r);
        }
    }
    let nr = linalg::norm(&r);
    if nr <= DROP_TOL * nv {
        return None;
    }
    Some(linalg::scaled(1.0 / nr, &r))
}

/// Phi(V; u) = |V^T u|^2 for orthonormal columns `v`.
pub fn potential(v: &[Vec<f64>], u: &[f64]) -> f64 {
    v.iter().map(|col| {
        assert_eq!(col.len(), u.len(), "dimension mismatch in potential");
        linalg::dot(col, u).powi(2)
    })
    .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauSchedule {
    pub lambda: f64,
    pub tau0: f64,
    pub d: usize,
    pub delta: f64,
    pub rounds: usize,
    /// Schedule values indexed 0..=rounds+1, starting from zero.
    pub taus: Vec<f64>,
    /// lambda^2 / (d (lambda - 1)^3)
    pub validity_threshold: f64,
    pub valid: bool,
    /// 2 tau0 sum_{j=1}^{T} lambda^{5j}
    pub cap_sum: f64,
    /// 2 e tau0 T
    pub cap_simple: f64,
    /// T <= rounds_constant / (lambda - 1)
    pub cap_simple_applies: bool,
}

/// Plug-in failure level exp(-d lambda^2 tau0 (lambda - 1)).
pub fn default_delta(lambda: f64, tau0: f64, d: usize) -> f64 {
    (-(d as f64) * lambda * lambda * tau0 * (lambda - 1.0)).exp()
}

/// Round limit constant in T <= c / (lambda - 1). The default 1/5 is one of two variants.
pub const DEFAULT_ROUNDS_CONSTANT: f64 = 0.2;

pub fn tau_schedule(lambda: f64, tau0: f64, d: usize, delta: Option<f64>, rounds: usize) -> Result<TauSchedule> {
    tau_schedule_with(lambda, tau0, d, delta, rounds, DEFAULT_ROUNDS_CONSTANT)
}

pub fn tau_schedule_with(
    lambda: f64,
    tau0: f64,
    d: usize,
    delta: Option<f64>,
    rounds: usize,
    rounds_constant: f64,
) -> Result<TauSchedule> {
    if !(lambda > 1.0 && lambda <= 1.5) {
        return Err(Error::Domain(format!("lambda = {lambda} outside (1, 1.5]")));
    }
    if !(tau0 >= 0.0) || d == 0 {
        return Err(Error::Domain(format!("need tau0 >= 0 and d >= 1, got tau0 = {tau0}, d = {d}")));
    }
    // The plug-in level is handled through its exponent so that large d does not underflow.
    let log_inv_delta = match delta {
        Some(x) if x > 0.0 && x <= 1.0 => -x.ln(),
        Some(x) => return Err(Error::Domain(format!("delta = {x} outside (0, 1]"))),
        None => d as f64 * lambda * lambda * tau0 * (lambda - 1.0),
    };
    let delta = (-log_inv_delta).exp();
    let l5 = lambda.powi(5);
    let add = 2.0 * lambda * lambda / (d as f64 * (lambda - 1.0)) * log_inv_delta;
    let mut taus = vec![0.0];
    for k in 0..=rounds {
        let next = add + l5 * (taus[k] + tau0);
        taus.push(next);
    }
    let validity_threshold = lambda * lambda / (d as f64 * (lambda - 1.0).powi(3));
    let cap_sum = 2.0 * tau0 * (1..=rounds).map(|j| lambda.powi(5 * j as i32)).sum::<f64>();
    Ok(TauSchedule {
        lambda,
        tau0,
        d,
        delta,
        rounds,
        taus,
        validity_threshold,
        valid: tau0 >= validity_threshold,
        cap_sum,
        cap_simple: 2.0 * std::f64::consts::E * tau0 * rounds as f64,
        cap_simple_applies: rounds as f64 <= rounds_constant / (lambda - 1.0),
    })
}

impl TauSchedule {
    pub fn nondecreasing(&self) -> bool {
        self.taus.windows(2).all(|w| w[1] >= w[0])
    }
}

/// (sqrt(d tau_{k+1}) - sqrt(2k+2))^2 >= d tau_{k+1} / lambda for k = 0..=T.
pub fn recursion_gap_check(s: &TauSchedule) -> Vec<bool> {
    let d = s.d as f64;
    (0..=s.rounds)
        .map(|k| {
            let dt = d * s.taus[k + 1];
            let gap = (dt.sqrt() - ((2 * k + 2) as f64).sqrt()).powi(2);
            gap >= dt / s.lambda
        })
        .collect()
}

/// exp(-(sqrt(d tau) - sqrt(2(k+1)))^2 / 2), defined for d tau >= 2(k+1).
pub fn small_ball_bound(d: usize, k: usize, tau: f64) -> Result<f64> {
    let dt = d as f64 * tau;
    let m = 2.0 * (k + 1) as f64;
    if !(dt >= m) {
        return Err(Error::Domain(format!("d tau = {dt} below 2(k+1) = {m}; bound is vacuous")));
    }
    Ok((-0.5 * (dt.sqrt() - m.sqrt()).powi(2)).exp())
}

/// (1 + eps) eta (1 + eta) lambda^2 (tau_k + tau0) / 2, the per-dimension exponent.
pub fn likelihood_exponent(eta: f64, eps: f64, lambda: f64, tau_k: f64, tau0: f64) -> Result<f64> {
    if !(eta >= 0.0 && eps >= 0.0) {
        return Err(Error::Domain(format!("need eta, eps >= 0, got eta = {eta}, eps = {eps}")));
    }
    Ok((1.0 + eps) * eta * (1.0 + eta) * lambda * lambda * (tau_k + tau0) / 2.0)
}

/// Exponent of the one-round escape bound with eta = lambda - 1:
/// (lambda - 1)/(2 lambda) (d (1 + eps) lambda^3 (tau_k + tau0) - (sqrt(d tau_{k+1}) - sqrt(2k+2))^2).
pub fn recur_exponent(lambda: f64, eps: f64, d: usize, k: usize, tau_k: f64, tau0: f64, tau_next: f64) -> f64 {
    let d = d as f64;
    let gap = ((d * tau_next).sqrt() - ((2 * k + 2) as f64).sqrt()).powi(2);
    (lambda - 1.0) / (2.0 * lambda) * (d * (1.0 + eps) * lambda.powi(3) * (tau_k + tau0) - gap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn small_instance() -> Instance {
        crate::testutil::instance(100, 1.3, 0.09, 5)
    }

    #[test]
    fn zero_budget_refuses() {
        let inst = small_instance();
        let mut s = open_session(&inst, 0);
        assert!(matches!(s.query(&vec![1.0; 100]), Err(Error::BudgetExhausted(0))));
    }

    #[test]
    fn b_is_revealed_bitwise() {
        let inst = small_instance();
        let s = open_session(&inst, 3);
        assert_eq!(s.b(), inst.b.as_slice());
    }

    #[test]
    fn sessions_count_independently() {
        let inst = small_instance();
        let mut s1 = open_session(&inst, 5);
        let mut s2 = open_session(&inst, 5);
        s1.query(&inst.b).unwrap();
        s1.query(&inst.b).unwrap();
        s2.query(&inst.b).unwrap();
        assert_eq!((s1.t_used(), s2.t_used()), (2, 1));
    }

    #[test]
    fn zero_and_repeat_queries() {
        let inst = small_instance();
        let mut s = open_session(&inst, 10);
        let w = s.query(&vec![0.0; 100]).unwrap();
        assert!(w.iter().all(|x| *x == 0.0));
        assert_eq!(s.basis().len(), 0);
        let w1 = s.query(&inst.b).unwrap();
        let w2 = s.query(&inst.b).unwrap();
        assert_eq!(w1, w2);
        assert_eq!(s.basis().len(), 1);
        assert_eq!(s.t_used(), 3);
        assert_eq!(s.raw_log().len(), 3);
    }

    #[test]
    fn non_finite_query_rejected() {
        let inst = small_instance();
        let mut s = open_session(&inst, 10);
        let mut v = vec![0.0; 100];
        v[3] = f64::NAN;
        assert!(matches!(s.query(&v), Err(Error::InvalidInput(_))));
        assert_eq!(s.t_used(), 0);
    }

    #[test]
    fn random_queries_stay_orthonormal() {
        let inst = small_instance();
        let mut s = open_session(&inst, 100);
        let mut r = rng::from_seed(3);
        for k in 1..=60 {
            s.query(&rng::gaussian_vec(&mut r, 100, 1.0)).unwrap();
            assert_eq!(s.basis().len(), k);
            assert!(s.orthonormality_error() <= 1e-10);
        }
    }

    #[test]
    fn response_is_exact_product() {
        let inst = small_instance();
        let mut s = open_session(&inst, 1);
        let v: Vec<f64> = (0..100).map(|i| (i as f64).sin()).collect();
        assert_eq!(s.query(&v).unwrap(), linalg::matvec(&inst.a, &v));
    }

    #[test]
    fn counting_shim_sees_every_call() {
        let inst = small_instance();
        let shim = CountingMatVec::new(&inst.a);
        let mut s = QuerySession::new(&shim, inst.b.clone(), 4);
        for _ in 0..4 {
            s.query(&inst.b).unwrap();
        }
        assert!(s.query(&inst.b).is_err());
        assert_eq!(shim.calls(), 4);
    }

    #[test]
    fn potential_edge_cases() {
        assert_eq!(potential(&[], &[1.0, 2.0]), 0.0);
        let d = 5;
        let basis: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        let u = [0.3, -0.1, 0.2, 0.5, 0.9];
        assert!((potential(&basis, &u) - linalg::norm_sq(&u)).abs() < 1e-15);
        assert!((potential(&basis[..1], &[1.0, 0.0, 0.0, 0.0, 0.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn trajectory_is_monotone_and_bounded() {
        let inst = small_instance();
        let mut s = open_session(&inst, 30);
        assert!(s.potential_trajectory(&inst.u).is_empty());
        let mut r = rng::from_seed(8);
        for _ in 0..30 {
            s.query(&rng::gaussian_vec(&mut r, 100, 1.0)).unwrap();
        }
        s.register_estimate(&inst.x_star);
        let phi = s.potential_trajectory(&inst.u);
        assert_eq!(phi.len(), 31);
        assert!(phi.windows(2).all(|w| w[1] >= w[0]));
        assert!(*phi.last().unwrap() <= linalg::norm_sq(&inst.u) + 1e-12);
        assert_eq!(s.trace(&inst.u).len(), 30);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let inst = crate::testutil::instance(20, 1.4, 0.1, 2);
        let mut s = open_session(&inst, 1);
        let mut r = rng::from_seed(4);
        let v = rng::gaussian_vec(&mut r, 20, 1.0);
        let grad = linalg::sub(&s.query(&v).unwrap(), &inst.b);
        let h = 1e-5 * linalg::norm(&v);
        for i in 0..20 {
            let (mut p, mut m) = (v.clone(), v.clone());
            p[i] += h;
            m[i] -= h;
            let fd = (inst.objective(&p) - inst.objective(&m)) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-4 * linalg::norm(&grad));
        }
    }

    #[test]
    fn simple_cap_example() {
        let s = tau_schedule(1.2, 0.04, 1000, None, 1).unwrap();
        assert!((s.cap_simple - 0.21746).abs() < 1e-5);
        assert!(s.cap_simple_applies);
        assert_eq!(s.taus.len(), 3);
        assert_eq!(s.taus[0], 0.0);
        assert!(s.nondecreasing());
    }

    #[test]
    fn plug_in_delta_gives_additive_term() {
        // With the plug-in delta the additive term is 2 lambda^4 tau0.
        for &(lambda, tau0, d) in &[(1.02, 4e-4, 5000usize), (1.2, 0.04, 1000), (1.5, 0.25, 50)] {
            let s = tau_schedule(lambda, tau0, d, None, 3).unwrap();
            let add = s.taus[1] - lambda.powi(5) * tau0;
            let want = 2.0 * lambda.powi(4) * tau0;
            assert!((add - want).abs() <= 1e-12 * want, "{add} vs {want}");
            for k in 0..3 {
                let expect = add + lambda.powi(5) * (s.taus[k] + tau0);
                assert!((s.taus[k + 1] - expect).abs() <= 1e-12 * expect);
            }
        }
    }

    #[test]
    fn cap_sum_matches_geometric_series() {
        for &(lambda, rounds) in &[(1.02f64, 10usize), (1.05, 4), (1.1, 2)] {
            let tau0 = (lambda - 1.0).powi(2);
            let s = tau_schedule(lambda, tau0, 5000, None, rounds).unwrap();
            let r = lambda.powi(5);
            let closed = 2.0 * tau0 * r * (r.powi(rounds as i32) - 1.0) / (r - 1.0);
            assert!((s.cap_sum - closed).abs() <= 1e-10 * closed);
        }
    }

    #[test]
    fn simple_cap_dominates_on_grid() {
        for i in 1..=50 {
            let lambda = 1.0 + 0.5 * i as f64 / 50.0;
            let t_max = (0.2 / (lambda - 1.0)).floor() as usize;
            for t in 1..=t_max.max(1) {
                let s = tau_schedule(lambda, 0.01, 1000, None, t).unwrap();
                if s.cap_simple_applies {
                    assert!(s.cap_sum <= s.cap_simple * (1.0 + 1e-12), "lambda {lambda} T {t}");
                }
            }
        }
    }

    #[test]
    fn gap_check_at_boundary() {
        let (d, lambda) = (100_000usize, 1.1f64);
        let tau0 = lambda * lambda / (d as f64 * (lambda - 1.0).powi(3));
        let s = tau_schedule(lambda, tau0, d, None, 2).unwrap();
        assert!(s.valid);
        assert!(recursion_gap_check(&s).iter().all(|x| *x));
    }

    #[test]
    fn gap_check_far_below_boundary() {
        let (d, lambda) = (100_000usize, 1.1f64);
        let s = tau_schedule(lambda, 1.0 / d as f64, d, None, 10).unwrap();
        assert!(!s.valid);
        assert!(recursion_gap_check(&s).iter().any(|x| !*x));
    }

    #[test]
    fn gap_check_degenerate_guard() {
        // d tau_1 = 32, k = 0: (sqrt 32 - sqrt 2)^2 = 18 >= 32 / lambda once lambda is large
        let gap = (32f64.sqrt() - 2f64.sqrt()).powi(2);
        assert!((gap - 18.0).abs() < 1e-12);
        assert!(gap >= 32.0 / 1e12);
        assert!(gap >= 0.0);
    }

    #[test]
    fn small_ball_values() {
        let b = small_ball_bound(100, 0, 0.5).unwrap();
        assert!((b - (-16.0f64).exp()).abs() < 1e-20);
        assert_eq!(small_ball_bound(10, 4, 1.0).unwrap(), 1.0);
        assert!(small_ball_bound(10, 4, 0.9).is_err());
    }

    #[test]
    fn likelihood_values() {
        assert_eq!(likelihood_exponent(0.0, 0.3, 1.2, 0.1, 0.1).unwrap(), 0.0);
        let v = likelihood_exponent(0.2, 0.2, 1.2, 0.04, 0.04).unwrap();
        assert!((v - 1.2 * 0.2 * 1.2 * 1.44 * 0.08 / 2.0).abs() < 1e-15);
        assert!((v - 0.0165888).abs() < 1e-12);
        assert!(likelihood_exponent(-0.1, 0.0, 1.2, 0.0, 0.0).is_err());
    }

    #[test]
    fn recur_exponent_combines_likelihood_and_small_ball() {
        for &lambda in &[1.05, 1.2, 1.5] {
            let eta = lambda - 1.0;
            let (d, k, tk, t0, tn) = (2000usize, 3usize, 0.02, 0.01, 0.05);
            let lik = likelihood_exponent(eta, eta, lambda, tk, t0).unwrap();
            let gap = ((d as f64 * tn).sqrt() - ((2 * k + 2) as f64).sqrt()).powi(2);
            let combined = d as f64 * lik / (1.0 + eta) - eta / (2.0 * (1.0 + eta)) * gap;
            let direct = recur_exponent(lambda, eta, d, k, tk, t0, tn);
            assert!((combined - direct).abs() <= 1e-12 * direct.abs().max(1.0));
        }
    }

    proptest! {
        #[test]
        fn gap_check_false_only_inside_window(lambda in 1.01f64..1.5, dt_over in 0.01f64..200.0, k in 0usize..6) {
            // A literal evaluation fails exactly for 2(k+1)/(1+l^-1/2)^2 < d tau < 2(k+1)/(1-l^-1/2)^2.
            let m = (2 * k + 2) as f64;
            let dt = dt_over * m;
            let gap = (dt.sqrt() - m.sqrt()).powi(2);
            let holds = gap >= dt / lambda;
            let r = lambda.powf(-0.5);
            let lo = m / (1.0 + r).powi(2);
            let hi = m / (1.0 - r).powi(2);
            let margin = 1e-9 * hi;
            if dt < lo - margin || dt > hi + margin {
                prop_assert!(holds);
            } else if dt > lo + margin && dt < hi - margin {
                prop_assert!(!holds);
            }
        }

        #[test]
        fn schedule_nondecreasing(lambda in 1.001f64..=1.5, tau0 in 0.0f64..0.3, d in 10usize..100_000, t in 0usize..20) {
            let s = tau_schedule(lambda, tau0, d, None, t).unwrap();
            prop_assert!(s.nondecreasing());
            prop_assert_eq!(s.taus.len(), t + 2);
        }
    }
}
