//! Camera initialisation by orthographic factorisation, pseudo-inverse shapes
//! and low-rank completion of missing tracks.

use nalgebra::{DMatrix, DVector, Matrix3, RowVector3, Vector3};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{Rotation3, RotationSequence};
use crate::linalg::{sym_eigen_desc, SortedSvd};
use crate::seqdata::{CameraPath, CoordinateTag, MeasurementMatrix, ShapeSequence, VisibilityMask};

/// Singular values below this fraction of the largest count as missing rank.
pub const RANK_TOL: f64 = 1e-8;

/// Rank-`3K` factorisation `W ~ pi_hat * b_hat`.
#[derive(Debug, Clone)]
pub struct FactorizationResult {
    pub pi_hat: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
    pub k: usize,
}

pub fn factorize(w: &MeasurementMatrix, k: usize) -> Result<FactorizationResult> {
    let r = 3 * k;
    if k == 0 || r > w.w.nrows().min(w.w.ncols()) {
        return Err(Error::InvalidArgument(format!(
            "basis count {k} needs 3k <= min(2F, P) = {}",
            w.w.nrows().min(w.w.ncols())
        )));
    }
    let svd = SortedSvd::new(&w.w)?;
    if svd.sigma[0] == 0.0 || svd.sigma[r - 1] < RANK_TOL * svd.sigma[0] {
        return Err(Error::RankDeficient { required: r });
    }
    let mut pi_hat = svd.u.columns(0, r).into_owned();
    let mut b_hat = svd.v_t.rows(0, r).into_owned();
    for j in 0..r {
        let s = svd.sigma[j].sqrt();
        pi_hat.column_mut(j).scale_mut(s);
        b_hat.row_mut(j).scale_mut(s);
    }
    Ok(FactorizationResult { pi_hat, b_hat, k })
}

/// Orthonormality residuals of `G` for every frame plus one scale residual,
/// with the Jacobian with respect to the entries of `G` (column-major).
fn corrective_residuals(pi_hat: &DMatrix<f64>, g: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let f = pi_hat.nrows() / 2;
    let n = g.len();
    let rows = g.nrows();
    let mut res = DVector::zeros(2 * f + 1);
    let mut jac = DMatrix::zeros(2 * f + 1, n);
    let scale_w = (f as f64).sqrt();
    let mut total = 0.0;
    let mut total_grad = DMatrix::zeros(rows, 3);
    for i in 0..f {
        let a = pi_hat.row(2 * i).transpose();
        let b = pi_hat.row(2 * i + 1).transpose();
        let x: RowVector3<f64> = (a.transpose() * g).fixed_columns::<3>(0).into_owned();
        let y: RowVector3<f64> = (b.transpose() * g).fixed_columns::<3>(0).into_owned();
        res[2 * i] = x.norm_squared() - y.norm_squared();
        res[2 * i + 1] = x.dot(&y);
        let d1 = (&a * x - &b * y) * 2.0;
        let d2 = &a * y + &b * x;
        for (c, (v1, v2)) in d1.iter().zip(d2.iter()).enumerate() {
            jac[(2 * i, c)] = *v1;
            jac[(2 * i + 1, c)] = *v2;
        }
        total += x.norm_squared() + y.norm_squared();
        total_grad += (&a * x + &b * y) * 2.0;
    }
    res[2 * f] = scale_w * (total / (2.0 * f as f64) - 1.0);
    for (c, v) in total_grad.iter().enumerate() {
        jac[(2 * f, c)] = scale_w * v / (2.0 * f as f64);
    }
    (res, jac)
}

/// Linear least-squares estimate of the Gram matrix `G G^T`, truncated to
/// rank 3 and factored.
fn corrective_from_gram(pi_hat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let f = pi_hat.nrows() / 2;
    let r = pi_hat.ncols();
    let pairs: Vec<(usize, usize)> = (0..r).flat_map(|p| (p..r).map(move |q| (p, q))).collect();
    let n = pairs.len();
    let mut a_mat = DMatrix::zeros(2 * f + 1, n);
    let mut rhs = DVector::zeros(2 * f + 1);
    for i in 0..f {
        let a = pi_hat.row(2 * i);
        let b = pi_hat.row(2 * i + 1);
        for (c, &(p, q)) in pairs.iter().enumerate() {
            let (aa, bb, ab) = if p == q {
                (a[p] * a[p], b[p] * b[p], a[p] * b[p])
            } else {
                (
                    2.0 * a[p] * a[q],
                    2.0 * b[p] * b[q],
                    a[p] * b[q] + a[q] * b[p],
                )
            };
            a_mat[(2 * i, c)] = aa - bb;
            a_mat[(2 * i + 1, c)] = ab;
            a_mat[(2 * f, c)] += aa + bb;
        }
    }
    rhs[2 * f] = 2.0 * f as f64;
    let mut normal = a_mat.transpose() * &a_mat;
    let ridge = 1e-10 * normal.trace().max(f64::MIN_POSITIVE) / n as f64;
    for d in 0..n {
        normal[(d, d)] += ridge;
    }
    let x = normal
        .cholesky()
        .ok_or_else(|| Error::Numeric("Gram system is not positive definite".into()))?
        .solve(&(a_mat.transpose() * rhs));
    let mut q = DMatrix::zeros(r, r);
    for (c, &(p, s)) in pairs.iter().enumerate() {
        q[(p, s)] = x[c];
        q[(s, p)] = x[c];
    }
    let (vals, vecs) = sym_eigen_desc(&q)?;
    let mut g = DMatrix::zeros(r, 3);
    for j in 0..3 {
        let lam = vals[j].abs().max(1e-12);
        g.set_column(j, &(vecs.column(j) * lam.sqrt()));
    }
    Ok(g)
}

/// Levenberg-Marquardt refinement of the rank-3 corrective.
fn refine_corrective(pi_hat: &DMatrix<f64>, mut g: DMatrix<f64>) -> DMatrix<f64> {
    let n = g.len();
    let (mut res, mut jac) = corrective_residuals(pi_hat, &g);
    let mut cost = res.norm_squared();
    let mut lambda = 1e-3;
    for _ in 0..500 {
        if cost < 1e-28 {
            break;
        }
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &res;
        let mut accepted = false;
        for _ in 0..30 {
            let mut h = jtj.clone();
            for d in 0..n {
                h[(d, d)] += lambda * (1.0 + jtj[(d, d)]);
            }
            let Some(chol) = h.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&grad);
            let cand = &g - DMatrix::from_column_slice(g.nrows(), 3, step.as_slice());
            let (r2, j2) = corrective_residuals(pi_hat, &cand);
            let c2 = r2.norm_squared();
            if c2 < cost {
                let rel = (cost - c2) / cost;
                g = cand;
                res = r2;
                jac = j2;
                cost = c2;
                lambda = (lambda * 0.1).max(1e-15);
                accepted = rel > 1e-15;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    g
}

/// Rotation whose first two rows best match the (unnormalised) rows `x`, `y`.
fn rotation_from_rows(x: &Vector3<f64>, y: &Vector3<f64>) -> Rotation3 {
    let r1 = x.normalize();
    let r2 = y.normalize();
    let r3 = r1.cross(&r2);
    let m = Matrix3::from_rows(&[r1.transpose(), r2.transpose(), r3.transpose()]);
    Rotation3::project(&m)
}

/// Estimates per-frame rotations from centralised tracks with `k` shape bases.
///
/// Returns `R_p`, the camera-to-world rotations (transposes of the camera
/// rotations), determined up to one global rotation and a global depth flip.
pub fn init_rotations(w: &MeasurementMatrix, k: usize) -> Result<RotationSequence> {
    let fac = factorize(w, k)?;
    let g0 = corrective_from_gram(&fac.pi_hat)?;
    let g = refine_corrective(&fac.pi_hat, g0);
    let f = w.frames();
    let mut cams: Vec<Rotation3> = Vec::with_capacity(f);
    let flip_xy = Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0));
    for i in 0..f {
        let xr = fac.pi_hat.row(2 * i) * &g;
        let yr = fac.pi_hat.row(2 * i + 1) * &g;
        let x = Vector3::new(xr[0], xr[1], xr[2]);
        let y = Vector3::new(yr[0], yr[1], yr[2]);
        if x.norm() == 0.0 || y.norm() == 0.0 {
            return Err(Error::Degenerate(format!("frame {i} has a vanishing motion row")));
        }
        let r = rotation_from_rows(&x, &y);
        // a negative basis coefficient flips both projection rows
        let r = match cams.last() {
            Some(prev) => {
                let alt = Rotation3::project(&(flip_xy * r.matrix()));
                if alt.geodesic(prev) < r.geodesic(prev) {
                    alt
                } else {
                    r
                }
            }
            None => r,
        };
        cams.push(r);
    }
    Ok(RotationSequence::new(cams).transposed())
}

/// `S_i = Pi_i^T W_i`: minimum-norm shapes that reproject exactly.
pub fn init_shape_pinv(w: &MeasurementMatrix, path: &CameraPath) -> Result<ShapeSequence> {
    if path.frames() != w.frames() {
        return Err(Error::Dimension(format!(
            "{} projectors for {} frames",
            path.frames(),
            w.frames()
        )));
    }
    let mut s = DMatrix::zeros(3 * w.frames(), w.points());
    for (i, p) in path.pi.iter().enumerate() {
        s.rows_mut(3 * i, 3)
            .copy_from(&(p.transpose() * w.w.rows(2 * i, 2)));
    }
    ShapeSequence::new(s, CoordinateTag::Camera)
}

#[derive(Debug, Clone, Serialize)]
pub struct CompletionResult {
    #[serde(skip)]
    pub w: MeasurementMatrix,
    pub iterations: usize,
    pub converged: bool,
}

pub const COMPLETION_TOL: f64 = 1e-8;
pub const COMPLETION_MAX_ITERS: usize = 500;

/// Fills hidden cells by alternating a rank-`rank` projection with restoring
/// the visible cells. Visible entries are returned bit-exactly.
pub fn complete_matrix(
    w: &MeasurementMatrix,
    mask: &VisibilityMask,
    rank: usize,
) -> Result<CompletionResult> {
    mask.check_matches(w)?;
    if rank == 0 {
        return Err(Error::InvalidArgument("completion rank must be at least 1".into()));
    }
    let vis = mask.expanded();
    for r in 0..vis.nrows() {
        let c = vis.row(r).iter().filter(|&&v| v).count();
        if c < rank {
            return Err(Error::InvalidArgument(format!(
                "row {r} has {c} visible entries, fewer than the rank {rank}"
            )));
        }
    }
    for j in 0..vis.ncols() {
        let c = vis.column(j).iter().filter(|&&v| v).count();
        if c < rank {
            return Err(Error::InvalidArgument(format!(
                "point {j} has {c} visible entries, fewer than the rank {rank}"
            )));
        }
    }

    let mut x = w.w.clone();
    for r in 0..x.nrows() {
        let (sum, cnt) = (0..x.ncols())
            .filter(|&j| vis[(r, j)])
            .fold((0.0, 0usize), |(s, c), j| (s + w.w[(r, j)], c + 1));
        let mean = sum / cnt as f64;
        for j in 0..x.ncols() {
            if !vis[(r, j)] {
                x[(r, j)] = mean;
            }
        }
    }
    if mask.hidden_count() == 0 {
        return Ok(CompletionResult {
            w: w.clone(),
            iterations: 0,
            converged: true,
        });
    }

    let mut converged = false;
    let mut iterations = 0;
    for it in 0..COMPLETION_MAX_ITERS {
        iterations = it + 1;
        let svd = SortedSvd::new(&x)?;
        let k = rank.min(svd.sigma.len());
        let mut next = svd.recompose(&svd.sigma.as_slice()[..k]);
        for (dst, (src, &v)) in next.iter_mut().zip(w.w.iter().zip(vis.iter())) {
            if v {
                *dst = *src;
            }
        }
        let change = (&next - &x).norm() / x.norm().max(f64::MIN_POSITIVE);
        x = next;
        if change < COMPLETION_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("matrix completion stopped after {iterations} iterations without converging");
    }
    Ok(CompletionResult {
        w: MeasurementMatrix::new(x)?,
        iterations,
        converged,
    })
}
