//! Rank-one resolvent identities and the minimizer/plant overlap prediction.

use faer::linalg::solvers::Solve;
use faer::{ColMut, Mat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instances::{self, Instance};
use crate::linalg::{self, SpdFactor};
use crate::spectral;

/// (B + x y^T)^{-1} from B^{-1}.
pub fn sherman_morrison_inverse(binv: &Mat<f64>, x: &[f64], y: &[f64]) -> Result<Mat<f64>> {
    let n = binv.nrows();
    if binv.ncols() != n || x.len() != n || y.len() != n {
        return Err(Error::InvalidInput("shape mismatch in rank-one update".into()));
    }
    let bx = linalg::matvec(binv, x);
    let yb = linalg::matvec(&binv.transpose().to_owned(), y);
    let denom = 1.0 + linalg::dot(y, &bx);
    if denom.abs() < 1e-12 {
        return Err(Error::RankOneSingular(denom));
    }
    Ok(Mat::from_fn(n, n, |i, j| binv[(i, j)] - bx[i] * yb[j] / denom))
}

/// Solve a general (possibly indefinite) shifted system, flagging poles.
fn resolvent_solve(mat: &Mat<f64>, rhs: &[f64], gamma: f64) -> Result<Vec<f64>> {
    let lu = mat.partial_piv_lu();
    let mut x = rhs.to_vec();
    lu.solve_in_place(ColMut::from_slice_mut(&mut x));
    let r = linalg::sub(&linalg::matvec(mat, &x), rhs);
    let rel = linalg::norm(&r) / linalg::norm(rhs).max(f64::MIN_POSITIVE);
    if !x.iter().all(|v| v.is_finite()) || rel > 1e-6 {
        return Err(Error::ResolventPole { gamma, detail: format!("shifted system is singular (relative residual {rel:e})") });
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderCheck {
    pub denom: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub rel_err: f64,
}

/// u^T A^{-2} u against u^T (gamma I - W)^{-2} u / denom^2 with A = gamma I - W - lambda u u^T.
pub fn second_order_identity_check(w: &Mat<f64>, gamma: f64, lambda: f64, u: &[f64]) -> Result<SecondOrderCheck> {
    let d = w.nrows();
    let shifted = linalg::shifted_negative(w, gamma);
    let a = Mat::from_fn(d, d, |i, j| shifted[(i, j)] - lambda * u[i] * u[j]);
    let ainv_u = resolvent_solve(&a, u, gamma)?;
    let r_u = resolvent_solve(&shifted, u, gamma)?;
    let denom = 1.0 - lambda * linalg::dot(u, &r_u);
    let lhs = linalg::norm_sq(&ainv_u);
    let rhs = linalg::norm_sq(&r_u) / (denom * denom);
    Ok(SecondOrderCheck { denom, lhs, rhs, rel_err: (lhs - rhs).abs() / rhs.abs() })
}

/// Limit of <x*/|x*|, u>^2: tau0 / (s^-2 q (tau0 + (1 - lambda s)^2)) at s = s(gamma), q = q(gamma).
pub fn overlap_prediction(lambda: f64, tau0: f64) -> Result<f64> {
    if !(lambda > 1.0 && lambda <= 2.0) {
        return Err(Error::Domain(format!("lambda = {lambda} outside (1, 2]")));
    }
    if !(tau0 >= 0.0) || !tau0.is_finite() {
        return Err(Error::Domain(format!("tau0 = {tau0} must be >= 0")));
    }
    let g = instances::gamma(lambda)?;
    let s = spectral::stieltjes_s(g)?;
    let q = spectral::stieltjes_q(g)?;
    let gap = 1.0 - lambda * s;
    Ok(tau0 / (q / (s * s) * (tau0 + gap * gap)))
}

/// Resolvent forms with R = (gamma I - W)^{-1}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapDecomposition {
    pub denom: f64,
    #[serde(rename = "uR1u")]
    pub u_r1_u: f64,
    #[serde(rename = "uR2u")]
    pub u_r2_u: f64,
    #[serde(rename = "zR1z")]
    pub z_r1_z: f64,
    #[serde(rename = "zR2z")]
    pub z_r2_z: f64,
    #[serde(rename = "uR1z")]
    pub u_r1_z: f64,
    #[serde(rename = "uR2z")]
    pub u_r2_z: f64,
    /// u^T A^{-2} z, the cross term inside |x*|^2
    #[serde(rename = "uA2z")]
    pub u_a2_z: f64,
    /// tr(R)/d
    pub trace_r1: f64,
    /// <x*/|x*|, u>^2 rebuilt from the forms above
    pub assembled: f64,
    pub predicted: f64,
    pub empirical: f64,
}

pub fn overlap_decomposition(inst: &Instance) -> Result<OverlapDecomposition> {
    let (lambda, gamma, tau0) = (inst.params.lambda, inst.gamma, inst.params.tau0);
    let shifted = linalg::shifted_negative(&inst.w, gamma);
    let f = SpdFactor::new(&shifted).ok_or_else(|| Error::ResolventPole {
        gamma,
        detail: "gamma I - W is not positive definite".into(),
    })?;
    let (u, z) = (&inst.u, &inst.z);
    let ru = f.solve_refined(&shifted, u);
    let rz = f.solve_refined(&shifted, z);
    let u_r1_u = linalg::dot(u, &ru);
    let u_r1_z = linalg::dot(u, &rz);
    let denom = 1.0 - lambda * u_r1_u;
    // A^{-1} u = R u / denom and A^{-1} z = R z + lambda R u (u^T R z) / denom
    let ainv_u = linalg::scaled(1.0 / denom, &ru);
    let mut ainv_z = rz.clone();
    linalg::axpy(lambda * u_r1_z / denom, &ru, &mut ainv_z);
    let u_a2_z = linalg::dot(&ainv_u, &ainv_z);
    let root = tau0.sqrt();
    let inner = root * u_r1_u / denom + u_r1_z / denom;
    let norm_sq = tau0 * linalg::norm_sq(&ainv_u) + 2.0 * root * u_a2_z + linalg::norm_sq(&ainv_z);
    Ok(OverlapDecomposition {
        denom,
        u_r1_u,
        u_r2_u: linalg::norm_sq(&ru),
        z_r1_z: linalg::dot(z, &rz),
        z_r2_z: linalg::norm_sq(&rz),
        u_r1_z,
        u_r2_z: linalg::dot(&ru, &rz),
        u_a2_z,
        trace_r1: f.trace_inverse() / inst.d() as f64,
        assembled: inner * inner / norm_sq,
        predicted: overlap_prediction(lambda, tau0)?,
        empirical: linalg::overlap(&inst.x_star, u).ok_or(Error::ZeroEstimate)?,
    })
}
