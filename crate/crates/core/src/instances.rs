//! Random deformed-Wigner quadratic instances.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SpdFactor};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceParams {
    pub d: usize,
    pub lambda: f64,
    pub tau0: f64,
    pub seed: u64,
    /// Enforce `tau0 <= (lambda - 1)^2`.
    #[serde(default)]
    pub strict_tau0: bool,
}

impl InstanceParams {
    pub fn new(d: usize, lambda: f64, tau0: f64, seed: u64) -> Self {
        InstanceParams { d, lambda, tau0, seed, strict_tau0: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::InvalidDimension(self.d));
        }
        if !(self.lambda > 1.0 && self.lambda <= 2.0) {
            return Err(Error::Domain(format!("lambda = {} outside (1, 2]", self.lambda)));
        }
        if !(self.tau0.is_finite() && self.tau0 >= 0.0) {
            return Err(Error::Domain(format!("tau0 = {} must be finite and >= 0", self.tau0)));
        }
        let cap = (self.lambda - 1.0).powi(2);
        if self.strict_tau0 && self.tau0 > cap * (1.0 + 1e-12) {
            return Err(Error::Domain(format!(
                "tau0 = {} exceeds (lambda-1)^2 = {cap} with strict_tau0 set",
                self.tau0
            )));
        }
        Ok(())
    }
}

/// gamma(lambda) = 2(lambda + 1/lambda) - 2
pub fn gamma(lambda: f64) -> Result<f64> {
    if !(lambda > 1.0) {
        return Err(Error::Domain(format!("gamma needs lambda > 1, got {lambda}")));
    }
    Ok(2.0 * (lambda + 1.0 / lambda) - 2.0)
}

/// Target condition number 2(lambda^2 + 1) / (lambda - 1)^2.
pub fn cond_target(lambda: f64) -> Result<f64> {
    if !(lambda > 1.0) {
        return Err(Error::Domain(format!("cond_target needs lambda > 1, got {lambda}")));
    }
    Ok(2.0 * (lambda * lambda + 1.0) / (lambda - 1.0).powi(2))
}

/// Invert `2 * cond_target(lambda) = kappa` on (1, 1.5] by bisection.
pub fn lambda_for_kappa(kappa: f64) -> Result<f64> {
    if !(kappa >= 52.0) || !kappa.is_finite() {
        return Err(Error::Domain(format!("kappa = {kappa} below 52 (lambda would exceed 1.5)")));
    }
    let f = |l: f64| 4.0 * (l * l + 1.0) / (l - 1.0).powi(2) - kappa;
    // f is decreasing in lambda on (1, inf); f(1.5) <= 0.
    let (mut lo, mut hi) = (1.0f64, 1.5f64);
    if f(hi) >= 0.0 {
        return Ok(hi);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// GOE draw: off-diagonal variance 1/d, diagonal variance 2/d.
pub fn sample_goe(d: usize, rng: &mut Rng) -> Result<Mat<f64>> {
    if d < 2 {
        return Err(Error::InvalidDimension(d));
    }
    let off = (1.0 / d as f64).sqrt();
    let diag = (2.0 / d as f64).sqrt();
    let mut w = Mat::<f64>::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let g = rng::normal(rng);
            if i == j {
                w[(i, i)] = diag * g;
            } else {
                let v = off * g;
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
    }
    Ok(w)
}

/// Plant vector with i.i.d. N(0, 1/d) entries.
pub fn sample_plant(d: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    if d == 0 {
        return Err(Error::InvalidDimension(d));
    }
    Ok(rng::gaussian_vec(rng, d, (1.0 / d as f64).sqrt()))
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub params: InstanceParams,
    pub gamma: f64,
    pub w: Mat<f64>,
    pub u: Vec<f64>,
    pub z: Vec<f64>,
    pub b: Vec<f64>,
    pub m: Mat<f64>,
    pub a: Mat<f64>,
    pub x_star: Vec<f64>,
}

/// Sample W, then u, then z from `rng` and assemble.
pub fn build_instance(params: InstanceParams, rng: &mut Rng) -> Result<Instance> {
    params.validate()?;
    let w = sample_goe(params.d, rng)?;
    let u = sample_plant(params.d, rng)?;
    let z = sample_plant(params.d, rng)?;
    Instance::from_parts(params, w, u, z)
}

impl Instance {
    /// Draw using an RNG seeded from `params.seed`.
    pub fn sample(params: InstanceParams) -> Result<Self> {
        build_instance(params, &mut rng::from_seed(params.seed))
    }

    /// Assemble from explicit (W, u, z). The caller is responsible for W's symmetry.
    pub fn from_parts(params: InstanceParams, w: Mat<f64>, u: Vec<f64>, z: Vec<f64>) -> Result<Self> {
        params.validate()?;
        let d = params.d;
        if w.nrows() != d || w.ncols() != d || u.len() != d || z.len() != d {
            return Err(Error::InvalidInput(format!("part shapes do not match d = {d}")));
        }
        let lambda = params.lambda;
        let gamma = gamma(lambda)?;
        let root = params.tau0.sqrt();
        let b: Vec<f64> = u.iter().zip(&z).map(|(ui, zi)| root * ui + zi).collect();
        let m = Mat::from_fn(d, d, |i, j| w[(i, j)] + lambda * u[i] * u[j]);
        let a = linalg::shifted_negative(&m, gamma);

        let degenerate = |detail: String| Error::DegenerateInstance { seed: params.seed, detail };
        let factor = SpdFactor::new(&a).ok_or_else(|| degenerate("Cholesky of A hit a nonpositive pivot".into()))?;
        let max_diag = (0..d).map(|i| a[(i, i)]).fold(0.0f64, f64::max);
        let min_pivot = factor.min_pivot_sq();
        if min_pivot <= 1e-12 * max_diag {
            return Err(degenerate(format!("smallest Cholesky pivot {min_pivot:e} vs max diagonal {max_diag:e}")));
        }
        let x_star = factor.solve_refined(&a, &b);
        Ok(Instance { params, gamma, w, u, z, b, m, a, x_star })
    }

    pub fn d(&self) -> usize {
        self.params.d
    }

    /// f(x) = x'Ax/2 - b'x
    pub fn objective(&self, x: &[f64]) -> f64 {
        0.5 * linalg::bilinear(&self.a, x, x) - linalg::dot(&self.b, x)
    }

    pub fn check_invariants(&self) -> InvariantReport {
        let d = self.d();
        let (lambda, gamma) = (self.params.lambda, self.gamma);
        let mut m_rel_err = 0.0f64;
        let mut a_exact = true;
        for j in 0..d {
            for i in 0..d {
                let want = self.w[(i, j)] + lambda * self.u[i] * self.u[j];
                let scale = want.abs().max(f64::MIN_POSITIVE);
                m_rel_err = m_rel_err.max((self.m[(i, j)] - want).abs() / scale);
                let a_want = if i == j { gamma - self.m[(i, j)] } else { -self.m[(i, j)] };
                a_exact &= self.a[(i, j)] == a_want;
            }
        }
        let root = self.params.tau0.sqrt();
        let b_exact = self.b.iter().zip(&self.u).zip(&self.z).all(|((b, u), z)| *b == root * u + z);
        let r = linalg::sub(&linalg::matvec(&self.a, &self.x_star), &self.b);
        InvariantReport {
            m_rel_err,
            a_exact,
            b_exact,
            solve_rel_residual: linalg::norm(&r) / linalg::norm(&self.b),
            asymmetry: linalg::max_asymmetry(&self.w)
                .max(linalg::max_asymmetry(&self.m))
                .max(linalg::max_asymmetry(&self.a)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InvariantReport {
    pub m_rel_err: f64,
    pub a_exact: bool,
    pub b_exact: bool,
    pub solve_rel_residual: f64,
    pub asymmetry: f64,
}

impl InvariantReport {
    pub fn holds(&self) -> bool {
        self.m_rel_err <= 1e-12 && self.a_exact && self.b_exact && self.solve_rel_residual <= 1e-8 && self.asymmetry <= 1e-12
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixDump {
    pub w: Vec<f64>,
    pub m: Vec<f64>,
    pub a: Vec<f64>,
}

/// JSON form of an instance. Matrices are rebuilt from the seed unless dumped explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceDump {
    pub schema: String,
    pub params: InstanceParams,
    pub seed: u64,
    pub u: Vec<f64>,
    pub z: Vec<f64>,
    pub b: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrices: Option<MatrixDump>,
}

fn row_major(m: &Mat<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

impl InstanceDump {
    pub fn new(inst: &Instance, full_matrices: bool) -> Self {
        InstanceDump {
            schema: crate::SCHEMA_VERSION.to_string(),
            params: inst.params,
            seed: inst.params.seed,
            u: inst.u.clone(),
            z: inst.z.clone(),
            b: inst.b.clone(),
            matrices: full_matrices.then(|| MatrixDump { w: row_major(&inst.w), m: row_major(&inst.m), a: row_major(&inst.a) }),
        }
    }

    /// Rebuild the instance from its seed and check it against the stored vectors.
    pub fn restore(&self) -> Result<Instance> {
        let mut params = self.params;
        params.seed = self.seed;
        let inst = Instance::sample(params)?;
        if inst.u != self.u || inst.z != self.z || inst.b != self.b {
            return Err(Error::InvalidInput(format!(
                "dump for seed {} does not match the regenerated instance",
                self.seed
            )));
        }
        Ok(inst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn gamma_values() {
        assert_eq!(gamma(2.0).unwrap(), 3.0);
        assert!((gamma(1.0 + 1e-9).unwrap() - 2.0).abs() < 1e-8);
        assert!(gamma(1.0).is_err());
        assert!(gamma(0.5).is_err());
    }

    #[test]
    fn cond_target_values() {
        assert!(close(cond_target(1.5).unwrap(), 26.0, 1e-14));
        assert!(close(2.0 * cond_target(1.5).unwrap(), 52.0, 1e-14));
        assert!(close(cond_target(1.25).unwrap(), 82.0, 1e-14));
        assert!(cond_target(1.0).is_err());
    }

    #[test]
    fn lambda_for_kappa_examples() {
        assert!((lambda_for_kappa(52.0).unwrap() - 1.5).abs() < 1e-10);
        let l = lambda_for_kappa(1e6).unwrap();
        // 2 cond_target ~ 8/(lambda-1)^2, so lambda - 1 ~ sqrt(8/kappa)
        let ratio = (l - 1.0) / (8.0 / 1e6f64).sqrt();
        assert!((ratio - 1.0).abs() < 5e-3, "ratio {ratio}");
        for k in [52.0, 100.0, 1e4] {
            let l = lambda_for_kappa(k).unwrap();
            let back = 2.0 * cond_target(l).unwrap();
            assert!((back - k).abs() <= 1e-6 * k, "kappa {k}: {back}");
        }
        assert!(lambda_for_kappa(51.9).is_err());
    }

    #[test]
    fn goe_small_is_symmetric() {
        let w = sample_goe(2, &mut rng::from_seed(11)).unwrap();
        assert_eq!(w[(0, 1)], w[(1, 0)]);
        assert!(sample_goe(1, &mut rng::from_seed(0)).is_err());
    }

    #[test]
    fn goe_entry_variances() {
        let d = 3000;
        let w = sample_goe(d, &mut rng::from_seed(5)).unwrap();
        let (mut off, mut n_off, mut diag) = (0.0, 0usize, 0.0);
        for j in 0..d {
            diag += w[(j, j)] * w[(j, j)];
            for i in (j + 1)..d {
                off += w[(i, j)] * w[(i, j)];
                n_off += 1;
            }
        }
        let off_var = off / n_off as f64 * d as f64;
        let diag_var = diag / 2.0;
        assert!((off_var - 1.0).abs() < 0.05, "{off_var}");
        assert!((diag_var - 1.0).abs() < 0.05, "{diag_var}");
    }

    #[test]
    fn plant_at_d1_is_standard_normal_draw() {
        let u = sample_plant(1, &mut rng::from_seed(9)).unwrap();
        assert_eq!(u.len(), 1);
        assert_eq!(u[0], rng::normal(&mut rng::from_seed(9)));
        assert!(sample_plant(0, &mut rng::from_seed(9)).is_err());
    }

    #[test]
    fn plant_norm_concentrates() {
        let mut r = rng::from_seed(21);
        let hits = (0..100)
            .filter(|_| {
                let u = sample_plant(10_000, &mut r).unwrap();
                (0.9..=1.1).contains(&linalg::norm_sq(&u))
            })
            .count();
        assert!(hits >= 99, "{hits}");
    }

    #[test]
    fn plant_coordinate_second_moment() {
        let d = 5000;
        let mut r = rng::from_seed(22);
        let mean: f64 = (0..1000).map(|_| sample_plant(d, &mut r).unwrap()[0].powi(2)).sum::<f64>() / 1000.0;
        let ratio = mean * d as f64;
        assert!(ratio > 1.0 / 1.5 && ratio < 1.5, "{ratio}");
    }

    #[test]
    fn build_instance_invariants_d500() {
        let inst = crate::testutil::instance(500, 1.25, 0.0625, 7);
        let rep = inst.check_invariants();
        assert!(rep.holds(), "{rep:?}");
        assert!(rep.solve_rel_residual <= 1e-8);
    }

    #[test]
    fn instance_is_deterministic() {
        let p = crate::testutil::instance(60, 1.3, 0.05, 99).params;
        let a = Instance::sample(p).unwrap();
        let b = Instance::sample(p).unwrap();
        assert_eq!(a.u, b.u);
        assert_eq!(a.z, b.z);
        assert_eq!(a.x_star, b.x_star);
        assert!(a.a == b.a);
    }

    #[test]
    fn params_validation() {
        assert!(InstanceParams::new(1, 1.2, 0.0, 0).validate().is_err());
        assert!(InstanceParams::new(10, 1.0, 0.0, 0).validate().is_err());
        assert!(InstanceParams::new(10, 2.5, 0.0, 0).validate().is_err());
        assert!(InstanceParams::new(10, 1.2, -0.1, 0).validate().is_err());
        let mut p = InstanceParams::new(10, 1.25, 0.07, 0);
        assert!(p.validate().is_ok());
        p.strict_tau0 = true;
        assert!(p.validate().is_err());
        p.tau0 = 0.0625;
        assert!(p.validate().is_ok());
    }

    #[test]
    fn degenerate_draw_reports_seed() {
        // W = 2I pushes gamma*I - M to be indefinite.
        let d = 4;
        let p = InstanceParams::new(d, 1.5, 0.0, 1234);
        let w = Mat::from_fn(d, d, |i, j| if i == j { 3.0 } else { 0.0 });
        let e = Instance::from_parts(p, w, vec![0.5; d], vec![0.1; d]).unwrap_err();
        match e {
            Error::DegenerateInstance { seed, .. } => assert_eq!(seed, 1234),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn dump_roundtrip() {
        let inst = crate::testutil::instance(40, 1.2, 0.04, 3);
        let dump = InstanceDump::new(&inst, false);
        let text = serde_json::to_string(&dump).unwrap();
        let back: InstanceDump = serde_json::from_str(&text).unwrap();
        assert_eq!(back, dump);
        let again = back.restore().unwrap();
        assert!(again.a == inst.a);
        let full = InstanceDump::new(&inst, true);
        assert_eq!(full.matrices.as_ref().unwrap().a.len(), 1600);
        let mut tampered = dump.clone();
        tampered.b[0] += 1.0;
        assert!(tampered.restore().is_err());
    }
}
