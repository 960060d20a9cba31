//! Thin dense helpers over `faer` plus slice-level vector arithmetic.

use faer::linalg::solvers::Solve;
use faer::{Accum, ColMut, ColRef, Mat, Par, Side};

use crate::error::{Error, Result};

/// Pin faer to one thread so results do not depend on the pool size.
pub fn sequential() {
    faer::set_global_parallelism(Par::Seq);
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

/// y += alpha * x
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn scaled(alpha: f64, x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| alpha * v).collect()
}

/// Squared cosine between `x` and `u`: <x/|x|, u/|u|>^2 scaled by |u|^2, i.e. <x/|x|, u>^2.
pub fn overlap(x: &[f64], u: &[f64]) -> Option<f64> {
    let nx = norm_sq(x);
    if nx == 0.0 {
        return None;
    }
    let c = dot(x, u);
    Some(c * c / nx)
}

pub fn matvec(a: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; a.nrows()];
    matvec_into(a, x, &mut y);
    y
}

pub fn matvec_into(a: &Mat<f64>, x: &[f64], y: &mut [f64]) {
    assert_eq!(a.ncols(), x.len());
    assert_eq!(a.nrows(), y.len());
    faer::linalg::matmul::matmul(
        ColMut::from_slice_mut(y),
        Accum::Replace,
        a.as_ref(),
        ColRef::from_slice(x),
        1.0,
        Par::Seq,
    );
}

/// x^T A y
pub fn bilinear(a: &Mat<f64>, x: &[f64], y: &[f64]) -> f64 {
    dot(x, &matvec(a, y))
}

/// `shift * I - w`
pub fn shifted_negative(w: &Mat<f64>, shift: f64) -> Mat<f64> {
    let n = w.nrows();
    Mat::from_fn(n, n, |i, j| if i == j { shift - w[(i, j)] } else { -w[(i, j)] })
}

pub fn max_asymmetry(a: &Mat<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Eigenvalues of a symmetric matrix in nondecreasing order (dense tridiagonal route).
pub fn sym_eigenvalues(a: &Mat<f64>) -> Result<Vec<f64>> {
    a.self_adjoint_eigenvalues(Side::Lower).map_err(|e| {
        Error::Numerical(format!(
            "symmetric eigensolve failed ({e:?}); d = {}, max entry magnitude {:.3e}, asymmetry {:.3e}",
            a.nrows(),
            max_abs(a),
            max_asymmetry(a)
        ))
    })
}

fn max_abs(a: &Mat<f64>) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max(a[(i, j)].abs());
        }
    }
    m
}

/// Cholesky factor of a symmetric positive definite matrix.
pub struct SpdFactor {
    llt: faer::linalg::solvers::Llt<f64>,
    dim: usize,
}

impl SpdFactor {
    /// Returns `None` when a pivot is nonpositive.
    pub fn new(a: &Mat<f64>) -> Option<Self> {
        a.llt(Side::Lower).ok().map(|llt| SpdFactor { llt, dim: a.nrows() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.llt.solve_in_place(ColMut::from_slice_mut(&mut x));
        x
    }

    /// Solve with one step of iterative refinement against the original matrix.
    pub fn solve_refined(&self, a: &Mat<f64>, b: &[f64]) -> Vec<f64> {
        let mut x = self.solve(b);
        let r = sub(b, &matvec(a, &x));
        let dx = self.solve(&r);
        axpy(1.0, &dx, &mut x);
        x
    }

    /// tr(A^{-1}) = |L^{-1}|_F^2
    pub fn trace_inverse(&self) -> f64 {
        let mut inv = Mat::<f64>::identity(self.dim, self.dim);
        faer::linalg::triangular_solve::solve_lower_triangular_in_place(self.llt.L(), inv.as_mut(), Par::Seq);
        inv.squared_norm_l2()
    }

    /// log det A = 2 sum log L_ii
    pub fn log_det(&self) -> f64 {
        let l = self.llt.L();
        2.0 * (0..self.dim).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    /// L^T x, so that |L^T x|^2 = x^T A x.
    pub fn lt_mul(&self, x: &[f64]) -> Vec<f64> {
        let l = self.llt.L();
        (0..self.dim).map(|i| (i..self.dim).map(|k| l[(k, i)] * x[k]).sum()).collect()
    }

    /// L^{-T} z; maps a standard normal z to a draw with covariance A^{-1}.
    pub fn solve_lt(&self, z: &[f64]) -> Vec<f64> {
        let mut x = z.to_vec();
        faer::linalg::triangular_solve::solve_upper_triangular_in_place(
            self.llt.L().transpose(),
            ColMut::from_slice_mut(&mut x).as_mat_mut(),
            Par::Seq,
        );
        x
    }

    /// Smallest diagonal entry of the Cholesky factor, squared; a cheap lower-side scale proxy.
    pub fn min_pivot_sq(&self) -> f64 {
        let l = self.llt.L();
        (0..self.dim).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min)
    }
}

/// Dense inverse through an LU factorization; test and oracle use only.
pub fn dense_inverse(a: &Mat<f64>) -> Mat<f64> {
    let n = a.nrows();
    let lu = a.partial_piv_lu();
    let mut inv = Mat::<f64>::identity(n, n);
    lu.solve_in_place(inv.as_mut());
    inv
}

pub fn matmul(a: &Mat<f64>, b: &Mat<f64>) -> Mat<f64> {
    a * b
}
