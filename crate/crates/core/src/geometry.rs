//! SO(3) primitives: hat/vee, exponential and logarithm maps, orthogonal Procrustes.
//!
//! Rotations act on column vectors. Perturbations of a rotation `R` are applied on
//! the left, `exp(dphi) * R`, everywhere in this crate.

use nalgebra::{DMatrix, Dim, Matrix, Matrix3, Storage, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::nearest_rotation;

const SMALL_ANGLE: f64 = 1e-8;

/// A 3x3 rotation matrix (orthogonal, determinant +1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation3(Matrix3<f64>);

/// Axis-angle vector in so(3): direction is the axis, norm is the angle in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LieVec(pub Vector3<f64>);

impl LieVec {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self(Vector3::new(x, y, z))
    }

    pub fn zero() -> Self {
        Self(Vector3::zeros())
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }
}

impl Rotation3 {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Wraps a matrix that is already a rotation up to `tol`.
    pub fn try_from_matrix(m: Matrix3<f64>, tol: f64) -> Result<Self> {
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("rotation has non-finite entries".into()));
        }
        let orth = (m.transpose() * m - Matrix3::identity()).abs().max();
        let det = m.determinant();
        if orth > tol || (det - 1.0).abs() > tol {
            return Err(Error::InvalidArgument(format!(
                "not a rotation (orthogonality defect {orth:.3e}, det {det:.12})"
            )));
        }
        Ok(Self(m))
    }

    /// Projects an arbitrary matrix onto SO(3).
    pub fn project(m: &Matrix3<f64>) -> Self {
        Self(nearest_rotation(m))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn compose(&self, other: &Rotation3) -> Self {
        Self(self.0 * other.0)
    }

    /// Angle of the relative rotation `self^T other`, in `[0, pi]`.
    pub fn geodesic(&self, other: &Rotation3) -> f64 {
        log_so3(&Rotation3(self.0.transpose() * other.0)).angle()
    }

    /// Rotation by `angle` radians about the (unit) `axis`.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        exp_so3(&LieVec(axis / n * angle))
    }

    /// Orthogonality and determinant defects, both should be ~0.
    pub fn defects(&self) -> (f64, f64) {
        let m = &self.0;
        (
            (m.transpose() * m - Matrix3::identity()).abs().max(),
            (m.determinant() - 1.0).abs(),
        )
    }
}

impl std::ops::Mul for Rotation3 {
    type Output = Rotation3;
    fn mul(self, rhs: Rotation3) -> Rotation3 {
        self.compose(&rhs)
    }
}

/// Ordered per-frame rotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationSequence {
    pub rots: Vec<Rotation3>,
}

impl RotationSequence {
    pub fn new(rots: Vec<Rotation3>) -> Self {
        Self { rots }
    }

    pub fn identity(frames: usize) -> Self {
        Self {
            rots: vec![Rotation3::identity(); frames],
        }
    }

    pub fn len(&self) -> usize {
        self.rots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rots.is_empty()
    }

    pub fn transposed(&self) -> Self {
        Self {
            rots: self.rots.iter().map(Rotation3::transpose).collect(),
        }
    }

    /// Left-multiplies every element by `g`.
    pub fn left_mul(&self, g: &Rotation3) -> Self {
        Self {
            rots: self.rots.iter().map(|r| g.compose(r)).collect(),
        }
    }

    /// Element-wise product `self_i * other_i`.
    pub fn compose(&self, other: &RotationSequence) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::Dimension(format!(
                "rotation sequences of length {} and {}",
                self.len(),
                other.len()
            )));
        }
        Ok(Self {
            rots: self
                .rots
                .iter()
                .zip(&other.rots)
                .map(|(a, b)| a.compose(b))
                .collect(),
        })
    }

    /// Largest orthogonality/determinant defect over all frames.
    pub fn max_defect(&self) -> f64 {
        self.rots
            .iter()
            .map(|r| {
                let (o, d) = r.defects();
                o.max(d)
            })
            .fold(0.0, f64::max)
    }
}

/// Skew-symmetric (hat) matrix: `skew(v) * w == v x w`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rodrigues' formula. Uses a second-order Taylor expansion near the identity.
pub fn exp_so3(phi: &LieVec) -> Rotation3 {
    let theta = phi.0.norm();
    let k = skew(&phi.0);
    if theta < SMALL_ANGLE {
        return Rotation3::project(&(Matrix3::identity() + k + k * k * 0.5));
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    Rotation3(Matrix3::identity() + k * a + k * k * b)
}

/// Inverse of [`exp_so3`]; the returned angle lies in `[0, pi]`.
///
/// Near `pi` the axis is recovered from the symmetric part. At exactly `pi`
/// the axis sign is chosen so that its largest-magnitude component is positive.
pub fn log_so3(r: &Rotation3) -> LieVec {
    let m = &r.0;
    let s = vee(&(m - m.transpose())) * 0.5; // sin(theta) * axis
    let sin_t = s.norm();
    let cos_t = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = sin_t.atan2(cos_t);

    if theta < SMALL_ANGLE {
        // theta / sin(theta) ~ 1 + theta^2 / 6
        return LieVec(s * (1.0 + theta * theta / 6.0));
    }
    if sin_t > 1e-4 || cos_t > 0.0 {
        return LieVec(s * (theta / sin_t));
    }

    // symmetric part: (R + R^T)/2 = cos I + (1 - cos) a a^T
    let sym = (m + m.transpose()) * 0.5;
    let aat = (sym - Matrix3::identity() * cos_t) / (1.0 - cos_t);
    let k = (0..3)
        .max_by(|&i, &j| aat[(i, i)].total_cmp(&aat[(j, j)]))
        .unwrap_or(0);
    let mut axis: Vector3<f64> = aat.column(k).into_owned() / aat[(k, k)].max(0.0).sqrt();
    axis /= axis.norm();
    if sin_t > 1e-12 && axis.dot(&s) < 0.0 {
        axis = -axis;
    } else if sin_t <= 1e-12 {
        let big = (0..3)
            .max_by(|&i, &j| axis[i].abs().total_cmp(&axis[j].abs()))
            .unwrap_or(0);
        if axis[big] < 0.0 {
            axis = -axis;
        }
    }
    LieVec(axis * theta)
}

/// Best proper rotation `R` minimising `||R a - b||_F` for 3xN point sets.
///
/// Fails with [`Error::Degenerate`] when `a` has rank below 2.
pub fn procrustes_rotation<R1, C1, S1, R2, C2, S2>(
    a: &Matrix<f64, R1, C1, S1>,
    b: &Matrix<f64, R2, C2, S2>,
) -> Result<Rotation3>
where
    R1: Dim,
    C1: Dim,
    S1: Storage<f64, R1, C1>,
    R2: Dim,
    C2: Dim,
    S2: Storage<f64, R2, C2>,
{
    if a.nrows() != 3 || b.nrows() != 3 || a.ncols() != b.ncols() {
        return Err(Error::Dimension(format!(
            "procrustes expects two 3xN matrices, got {}x{} and {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    if a.ncols() < 3 {
        return Err(Error::Degenerate("procrustes needs at least 3 points".into()));
    }
    let a = DMatrix::from_iterator(a.nrows(), a.ncols(), a.iter().copied());
    let b = DMatrix::from_iterator(b.nrows(), b.ncols(), b.iter().copied());
    let aat: Matrix3<f64> = (&a * a.transpose()).fixed_view::<3, 3>(0, 0).into_owned();
    let ev = aat.symmetric_eigenvalues();
    let mut ev: Vec<f64> = ev.iter().copied().collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    if ev[0] <= 0.0 || ev[1] <= 1e-12 * ev[0] {
        return Err(Error::Degenerate(
            "source point set has rank < 2".to_string(),
        ));
    }
    let m: Matrix3<f64> = (&b * a.transpose()).fixed_view::<3, 3>(0, 0).into_owned();
    Ok(Rotation3(nearest_rotation(&m)))
}
