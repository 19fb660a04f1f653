//! Dense decompositions. SVD and symmetric eigen-decompositions are delegated
//! to faer, whose bidiagonal SVD stays accurate on rank-deficient inputs.

use faer::{Mat, MatRef, Side};
use nalgebra::{DMatrix, DVector, Matrix3};

use crate::error::{Error, Result};

fn to_faer(m: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn from_faer(m: MatRef<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("decomposition input contains non-finite entries".into()));
    }
    Ok(())
}

/// Thin SVD with descending singular values and a fixed sign convention:
/// the largest-magnitude component of every left singular vector is positive.
#[derive(Debug, Clone)]
pub struct SortedSvd {
    pub u: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

impl SortedSvd {
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        check_finite(m)?;
        let k = m.nrows().min(m.ncols());
        if k == 0 {
            return Ok(Self {
                u: DMatrix::zeros(m.nrows(), 0),
                sigma: DVector::zeros(0),
                v_t: DMatrix::zeros(0, m.ncols()),
            });
        }
        let svd = to_faer(m)
            .thin_svd()
            .map_err(|e| Error::Numeric(format!("SVD did not converge: {e:?}")))?;
        let mut u = from_faer(svd.U());
        let mut v_t = from_faer(svd.V()).transpose();
        let sv = svd.S().column_vector();
        let mut sigma = DVector::from_fn(k, |j, _| sv[j]);

        let mut order: Vec<usize> = (0..k).collect();
        // faer already sorts; keep a stable sort so the contract never depends on it
        order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
        if order.iter().enumerate().any(|(i, &o)| i != o) {
            let (u0, s0, v0) = (u.clone(), sigma.clone(), v_t.clone());
            for (dst, &src) in order.iter().enumerate() {
                u.set_column(dst, &u0.column(src));
                v_t.set_row(dst, &v0.row(src));
                sigma[dst] = s0[src];
            }
        }
        for j in 0..k {
            let pivot = u
                .column(j)
                .iter()
                .copied()
                .fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if pivot < 0.0 {
                u.column_mut(j).neg_mut();
                v_t.row_mut(j).neg_mut();
            }
        }
        Ok(Self { u, sigma, v_t })
    }

    /// Recomposes `U diag(values) V^T` using the first `values.len()` triplets.
    pub fn recompose(&self, values: &[f64]) -> DMatrix<f64> {
        let k = values.len().min(self.sigma.len());
        let mut out = DMatrix::zeros(self.u.nrows(), self.v_t.ncols());
        for j in 0..k {
            if values[j] == 0.0 {
                continue;
            }
            let uj = self.u.column(j);
            let vj = self.v_t.row(j);
            out.ger(values[j], &uj, &vj.transpose(), 1.0);
        }
        out
    }
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_finite(m)?;
    if m.is_empty() {
        return Ok(Vec::new());
    }
    let mut s = to_faer(m)
        .singular_values()
        .map_err(|e| Error::Numeric(format!("SVD did not converge: {e:?}")))?;
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// Symmetric eigen-decomposition with eigenvalues sorted in descending order.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_finite(m)?;
    let sym = (m + m.transpose()) * 0.5;
    let n = sym.nrows();
    let evd = to_faer(&sym)
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numeric(format!("eigen-decomposition failed: {e:?}")))?;
    let vals = evd.S().column_vector();
    let vecs = evd.U();
    // faer returns ascending order
    let mut out_vals = DVector::zeros(n);
    let mut out_vecs = DMatrix::zeros(n, n);
    for dst in 0..n {
        let src = n - 1 - dst;
        out_vals[dst] = vals[src];
        for r in 0..n {
            out_vecs[(r, dst)] = vecs[(r, src)];
        }
    }
    Ok((out_vals, out_vecs))
}

/// Numerical rank: singular values above `rel_tol * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let s = match singular_values(m) {
        Ok(s) if !s.is_empty() => s,
        _ => return 0,
    };
    let smax = s[0];
    if smax == 0.0 {
        return 0;
    }
    s.iter().filter(|&&x| x > rel_tol * smax).count()
}

/// Nearest rotation (in Frobenius norm) to an arbitrary 3x3 matrix.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let d = DMatrix::from_fn(3, 3, |i, j| m[(i, j)]);
    let svd = match SortedSvd::new(&d) {
        Ok(s) => s,
        Err(_) => return Matrix3::identity(),
    };
    let u = Matrix3::from_fn(|i, j| svd.u[(i, j)]);
    let v_t = Matrix3::from_fn(|i, j| svd.v_t[(i, j)]);
    // the smallest singular direction carries the sign correction
    let mut fix = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    u * fix * v_t
}
