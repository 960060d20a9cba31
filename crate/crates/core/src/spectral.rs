//! Semicircle Stieltjes transform, resolvent traces and eigenvalue-event checks.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instances::{self, Instance};
use crate::linalg;

/// Default constant in the Lipschitz bound L = C (lambda - 1)^{-3}.
pub const DEFAULT_LIPSCHITZ_C: f64 = 8.0;

fn check_branch(a: f64) -> Result<f64> {
    if !(a > 2.0) || !a.is_finite() {
        return Err(Error::Domain(format!("Stieltjes transform needs a > 2, got {a}")));
    }
    Ok((a * a - 4.0).sqrt())
}

/// s(a) = (a - sqrt(a^2 - 4)) / 2, evaluated in the cancellation-free form 2 / (a + sqrt(a^2 - 4)).
pub fn stieltjes_s(a: f64) -> Result<f64> {
    let disc = check_branch(a)?;
    Ok(2.0 / (a + disc))
}

/// q(a) = -s'(a) = s(a) / sqrt(a^2 - 4).
pub fn stieltjes_q(a: f64) -> Result<f64> {
    let disc = check_branch(a)?;
    Ok(2.0 / (a + disc) / disc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StieltjesPoint {
    pub a: f64,
    pub s: f64,
    pub q: f64,
}

impl StieltjesPoint {
    pub fn at(a: f64) -> Result<Self> {
        Ok(StieltjesPoint { a, s: stieltjes_s(a)?, q: stieltjes_q(a)? })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StieltBounds {
    pub lambda: f64,
    pub gamma: f64,
    /// q(gamma) / s(gamma)^2
    pub qs2: f64,
    pub qs2_cap: f64,
    /// 1 - lambda s(gamma), computed from s directly
    pub one_minus_ls: f64,
    /// (lambda - 1)(sqrt(lambda^2 + 1) - lambda)
    pub one_minus_ls_closed: f64,
    /// sqrt(gamma^2 - 4)
    pub sqrt_disc: f64,
    /// 2 (lambda - 1) sqrt(1 + lambda^-2)
    pub sqrt_disc_closed: f64,
}

impl StieltBounds {
    pub fn holds(&self) -> bool {
        self.qs2 <= self.qs2_cap && self.one_minus_ls <= self.lambda - 1.0
    }
}

pub fn stielt_bounds(lambda: f64) -> Result<StieltBounds> {
    if !(lambda > 1.0 && lambda <= 2.0) {
        return Err(Error::Domain(format!("lambda = {lambda} outside (1, 2]")));
    }
    let gamma = instances::gamma(lambda)?;
    let p = StieltjesPoint::at(gamma)?;
    Ok(StieltBounds {
        lambda,
        gamma,
        qs2: p.q / (p.s * p.s),
        qs2_cap: 1.5 / (lambda - 1.0),
        one_minus_ls: 1.0 - lambda * p.s,
        one_minus_ls_closed: (lambda - 1.0) * ((lambda * lambda + 1.0).sqrt() - lambda),
        sqrt_disc: (gamma * gamma - 4.0).sqrt(),
        sqrt_disc_closed: 2.0 * (lambda - 1.0) * (1.0 + 1.0 / (lambda * lambda)).sqrt(),
    })
}

/// (1/d) sum_i (gamma - e_i)^{-power} from precomputed eigenvalues.
pub fn trace_resolvent_from_eigs(eigs: &[f64], gamma: f64, power: u32) -> Result<f64> {
    if power != 1 && power != 2 {
        return Err(Error::InvalidInput(format!("resolvent power must be 1 or 2, got {power}")));
    }
    let max_eig = eigs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(gamma > max_eig) {
        return Err(Error::ResolventPole { gamma, detail: format!("max eigenvalue {max_eig} is not below gamma") });
    }
    let sum: f64 = eigs.iter().map(|e| (gamma - e).powi(-(power as i32))).sum();
    Ok(sum / eigs.len() as f64)
}

pub fn normalized_trace_resolvent(w: &Mat<f64>, gamma: f64, power: u32) -> Result<f64> {
    trace_resolvent_from_eigs(&linalg::sym_eigenvalues(w)?, gamma, power)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub nu: f64,
    pub lam_max_a: f64,
    pub lam_min_a: f64,
    pub cond_a: Option<f64>,
    pub lam1_m: f64,
    pub norm_w: f64,
    pub event_ea_holds: bool,
    pub trace_res1: Option<f64>,
    pub trace_res2: Option<f64>,
}

impl SpectralReport {
    /// `a_eigs` and `w_eigs` sorted ascending.
    pub fn from_eigenvalues(a_eigs: &[f64], w_eigs: &[f64], lambda: f64, gamma: f64, nu: f64) -> Result<Self> {
        if !(nu > 1.0) {
            return Err(Error::Domain(format!("nu must exceed 1, got {nu}")));
        }
        if a_eigs.is_empty() || w_eigs.is_empty() {
            return Err(Error::InvalidDimension(0));
        }
        let lam_min_a = a_eigs[0];
        let lam_max_a = a_eigs[a_eigs.len() - 1];
        let lower = (lambda - 1.0).powi(2) / lambda / nu;
        let upper = nu * 2.0 * (lambda + 1.0 / lambda);
        Ok(SpectralReport {
            nu,
            lam_max_a,
            lam_min_a,
            cond_a: (lam_min_a > 0.0).then(|| lam_max_a / lam_min_a),
            lam1_m: gamma - lam_min_a,
            norm_w: w_eigs[0].abs().max(w_eigs[w_eigs.len() - 1].abs()),
            event_ea_holds: lower <= lam_min_a && lam_max_a <= upper,
            trace_res1: trace_resolvent_from_eigs(w_eigs, gamma, 1).ok(),
            trace_res2: trace_resolvent_from_eigs(w_eigs, gamma, 2).ok(),
        })
    }
}

/// Report plus the eigenvalues of W, which callers reuse for further trace checks.
pub fn spectral_report_with_eigs(inst: &Instance, nu: f64) -> Result<(SpectralReport, Vec<f64>)> {
    let a_eigs = linalg::sym_eigenvalues(&inst.a)?;
    let w_eigs = linalg::sym_eigenvalues(&inst.w)?;
    let rep = SpectralReport::from_eigenvalues(&a_eigs, &w_eigs, inst.params.lambda, inst.gamma, nu)?;
    Ok((rep, w_eigs))
}

pub fn spectral_report(inst: &Instance, nu: f64) -> Result<SpectralReport> {
    spectral_report_with_eigs(inst, nu).map(|(r, _)| r)
}

/// Operator norm bound 2 + 23 d^{-1/3} log^{2/3}(d).
pub fn goe_norm_bound(d: usize) -> f64 {
    let d = d as f64;
    2.0 + 23.0 * d.powf(-1.0 / 3.0) * d.ln().powf(2.0 / 3.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferCheck {
    pub bound: f64,
    pub deviation: f64,
    pub ok: bool,
}

/// Compare the central difference of `f` at {x-t, x, x+t} against `g_deriv`.
pub fn concave_derivative_transfer(f_vals: [f64; 3], g_deriv: f64, l: f64, eps: f64, t: f64) -> Result<TransferCheck> {
    if !(l > 0.0 && eps > 0.0) {
        return Err(Error::Precondition(format!("need L > 0 and eps > 0, got L = {l}, eps = {eps}")));
    }
    let expect = (2.0 * eps / l).sqrt();
    if (t - expect).abs() > 1e-12 * expect.max(1.0) {
        return Err(Error::Precondition(format!("t = {t} but sqrt(2 eps / L) = {expect}")));
    }
    let bound = 2.0 * (2.0 * l * eps).sqrt();
    let deviation = ((f_vals[2] - f_vals[0]) / (2.0 * t) - g_deriv).abs();
    Ok(TransferCheck { bound, deviation, ok: deviation <= bound })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StieltjesTransfer {
    pub eps: f64,
    pub l: f64,
    pub t: f64,
    /// max over {gamma - t, gamma, gamma + t} of |tr resolvent - s|
    pub trace_dev: f64,
    /// trace deviations within eps and ||W|| below gamma - t
    pub event_holds: bool,
    pub check: TransferCheck,
}

/// Transfer check with f = -s at {gamma - t, gamma, gamma + t} and g' = (1/d) tr (gamma I - W)^{-2}.
pub fn stieltjes_transfer(w_eigs: &[f64], lambda: f64, eps: f64, c: f64) -> Result<StieltjesTransfer> {
    let gamma = instances::gamma(lambda)?;
    let l = c * (lambda - 1.0).powi(-3);
    let t = (2.0 * eps / l).sqrt();
    let pts = [gamma - t, gamma, gamma + t];
    let mut f_vals = [0.0; 3];
    let mut trace_dev = 0.0f64;
    for (k, &a) in pts.iter().enumerate() {
        let s = stieltjes_s(a)?;
        f_vals[k] = -s;
        if let Ok(tr) = trace_resolvent_from_eigs(w_eigs, a, 1) {
            trace_dev = trace_dev.max((tr - s).abs());
        } else {
            trace_dev = f64::INFINITY;
        }
    }
    let g_deriv = trace_resolvent_from_eigs(w_eigs, gamma, 2)?;
    let max_w = w_eigs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let check = concave_derivative_transfer(f_vals, g_deriv, l, eps, t)?;
    Ok(StieltjesTransfer { eps, l, t, trace_dev, event_holds: trace_dev <= eps && max_w < gamma - t, check })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn s_near_branch_point_is_one() {
        assert!((stieltjes_s(2.0 + 1e-14).unwrap() - 1.0).abs() < 1e-6);
        assert!(stieltjes_s(2.0).is_err());
        assert!(stieltjes_q(1.0).is_err());
        assert!(stieltjes_s(f64::NAN).is_err());
    }

    #[test]
    fn values_at_three() {
        let s = stieltjes_s(3.0).unwrap();
        let q = stieltjes_q(3.0).unwrap();
        assert!((s - (3.0 - 5f64.sqrt()) / 2.0).abs() < 1e-15);
        assert!((s - 0.381966).abs() < 1e-6);
        assert!((q - 0.170820).abs() < 1e-6);
    }

    #[test]
    fn s_at_gamma_at_least_inverse_gamma() {
        for i in 1..=100 {
            let lambda = 1.0 + i as f64 / 100.0;
            let g = instances::gamma(lambda).unwrap();
            let s = stieltjes_s(g).unwrap();
            assert!(s >= 1.0 / g && 1.0 / g >= 1.0 / 3.0 - 1e-15);
        }
    }

    #[test]
    fn grid_identities() {
        // 20 points in (2.05, 5]
        let mut prev = f64::INFINITY;
        for i in 0..20 {
            let a = 2.05 + (5.0 - 2.05) * (i + 1) as f64 / 20.0;
            let s = stieltjes_s(a).unwrap();
            assert!((s * s - a * s + 1.0).abs() <= 1e-12);
            let h = 1e-5;
            let fd = -(stieltjes_s(a + h).unwrap() - stieltjes_s(a - h).unwrap()) / (2.0 * h);
            assert!((fd - stieltjes_q(a).unwrap()).abs() <= 1e-6);
            assert!(s < prev);
            prev = s;
        }
    }

    #[test]
    fn stielt_bounds_at_two() {
        let b = stielt_bounds(2.0).unwrap();
        assert!((b.sqrt_disc - 5f64.sqrt()).abs() < 1e-14);
        assert!((b.sqrt_disc_closed - 2.0 * 1.25f64.sqrt()).abs() < 1e-14);
        assert!((b.one_minus_ls - (5f64.sqrt() - 2.0)).abs() < 1e-12);
        assert!((b.one_minus_ls_closed - 0.23607).abs() < 1e-5);
        let want = 1.0 / (stieltjes_s(3.0).unwrap() * 5f64.sqrt());
        assert!((b.qs2 - want).abs() < 1e-12);
        assert!((b.qs2 - 1.17082).abs() < 1e-5);
        assert!(b.holds());
        assert!(stielt_bounds(1.0).is_err());
        assert!(stielt_bounds(2.1).is_err());
    }

    #[test]
    fn trace_of_zero_matrix() {
        let w = Mat::<f64>::zeros(7, 7);
        assert!((normalized_trace_resolvent(&w, 3.0, 1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((normalized_trace_resolvent(&w, 3.0, 2).unwrap() - 1.0 / 9.0).abs() < 1e-15);
        assert!(matches!(normalized_trace_resolvent(&w, 0.0, 1), Err(Error::ResolventPole { .. })));
        assert!(normalized_trace_resolvent(&w, 3.0, 3).is_err());
    }

    #[test]
    fn power_two_is_minus_derivative_of_power_one() {
        let d = 6;
        let w = Mat::from_fn(d, d, |i, j| ((i * 7 + j * 7 + i * j) % 5) as f64 / 10.0 - 0.2);
        let w = Mat::from_fn(d, d, |i, j| 0.5 * (w[(i, j)] + w[(j, i)]));
        let g = 4.0;
        let h = 1e-5;
        let fd = -(normalized_trace_resolvent(&w, g + h, 1).unwrap() - normalized_trace_resolvent(&w, g - h, 1).unwrap()) / (2.0 * h);
        assert!((fd - normalized_trace_resolvent(&w, g, 2).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn report_for_identity() {
        let eigs = vec![1.0; 5];
        let w_eigs = vec![0.0; 5];
        let r = SpectralReport::from_eigenvalues(&eigs, &w_eigs, 1.5, instances::gamma(1.5).unwrap(), 2.0).unwrap();
        assert_eq!(r.cond_a, Some(1.0));
        // lower = 0.25 / 1.5 / 2, upper = 2 * 2 * (1.5 + 2/3)
        assert!(r.event_ea_holds);
        let r = SpectralReport::from_eigenvalues(&[1e-3, 1.0], &w_eigs, 1.5, 2.0 + 1.0 / 6.0, 2.0).unwrap();
        assert!(!r.event_ea_holds);
        assert!(SpectralReport::from_eigenvalues(&eigs, &w_eigs, 1.5, 2.2, 1.0).is_err());
    }

    #[test]
    fn spectral_report_on_small_instance() {
        let inst = Instance::sample(crate::instances::InstanceParams::new(200, 1.5, 0.25, 4)).unwrap();
        let r = spectral_report(&inst, 2f64.sqrt()).unwrap();
        assert!(r.lam_min_a > 0.0);
        assert!((r.cond_a.unwrap() - r.lam_max_a / r.lam_min_a).abs() < 1e-12);
        assert!((r.lam1_m - (inst.gamma - r.lam_min_a)).abs() < 1e-15);
    }

    #[test]
    fn transfer_identical_functions() {
        let (l, eps) = (2.0f64, 1e-4f64);
        let t = (2.0 * eps / l).sqrt();
        let x = 0.7;
        let f = [(x - t) * (x - t), x * x, (x + t) * (x + t)];
        let c = concave_derivative_transfer(f, 2.0 * x, l, eps, t).unwrap();
        assert!(c.deviation < 1e-12 && c.ok);
        assert!(concave_derivative_transfer(f, 2.0 * x, l, eps, t * 1.1).is_err());
        assert!(concave_derivative_transfer(f, 2.0 * x, 0.0, eps, t).is_err());
    }

    #[test]
    fn transfer_with_bounded_perturbation() {
        // f(x) = x^2 against g(x) = x^2 + perturbation bounded by eps at the three nodes
        let (l, x) = (2.0f64, 0.3f64);
        for &eps in &[1e-2f64, 1e-4, 1e-6] {
            let t = (2.0 * eps / l).sqrt();
            let f = [(x - t) * (x - t) + eps, x * x - eps, (x + t) * (x + t) - eps];
            let c = concave_derivative_transfer(f, 2.0 * x, l, eps, t).unwrap();
            assert!(c.ok, "{c:?}");
            assert!((c.bound - 2.0 * (4.0 * eps).sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn goe_bound_value() {
        let b = goe_norm_bound(3000);
        assert!(b > 2.0 && b < 10.0);
    }

    proptest! {
        #[test]
        fn semicircle_self_consistency(a in 2.0001f64..50.0) {
            let s = stieltjes_s(a).unwrap();
            prop_assert!((s * s - a * s + 1.0).abs() <= 1e-12 * a.max(1.0));
            prop_assert!(s > 0.0 && s <= 1.0);
            prop_assert!(stieltjes_q(a).unwrap() > 0.0);
        }

        #[test]
        fn stielt_bounds_hold(lambda in 1.0001f64..=2.0) {
            let b = stielt_bounds(lambda).unwrap();
            prop_assert!(b.holds());
            prop_assert!((b.one_minus_ls - b.one_minus_ls_closed).abs() <= 1e-12);
            prop_assert!((b.sqrt_disc - b.sqrt_disc_closed).abs() <= 1e-12);
        }
    }
}
