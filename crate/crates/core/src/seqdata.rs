//! Sequence containers and the basic operators on them.
//!
//! Layout conventions:
//! * a measurement matrix is `2F x P`; rows `2i, 2i+1` hold x and y of frame `i`;
//! * a shape sequence is `3F x P`; rows `3i..3i+3` hold x, y, z of frame `i`;
//! * the rearranged form is `F x 3P`; row `i` is `[x_i | y_i | z_i]`.

use nalgebra::{DMatrix, Matrix2x3, Matrix3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Rotation3, RotationSequence};

/// Stacked 2D tracks.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementMatrix {
    pub w: DMatrix<f64>,
}

impl MeasurementMatrix {
    pub fn new(w: DMatrix<f64>) -> Result<Self> {
        if w.nrows() == 0 || w.nrows() % 2 != 0 || w.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "measurement matrix must be 2F x P with F, P >= 1, got {}x{}",
                w.nrows(),
                w.ncols()
            )));
        }
        Ok(Self { w })
    }

    pub fn frames(&self) -> usize {
        self.w.nrows() / 2
    }

    pub fn points(&self) -> usize {
        self.w.ncols()
    }

    /// The 2xP block of frame `i`.
    pub fn frame(&self, i: usize) -> DMatrix<f64> {
        self.w.rows(2 * i, 2).into_owned()
    }
}

/// Which coordinate system a shape sequence lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum CoordinateTag {
    /// Camera coordinates (`S`).
    #[default]
    Camera,
    /// Aligned by the initial camera path (`S~ = R_p S`).
    Aligned,
    /// Canonical coordinates after the correction rotation (`S^ = Q S~`).
    Canonical,
    /// Spatially weighted proxy (`S^ Lambda`).
    Proxy,
}

/// Stacked 3D shapes, one 3xP block per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSequence {
    pub s: DMatrix<f64>,
    pub tag: CoordinateTag,
}

impl ShapeSequence {
    pub fn new(s: DMatrix<f64>, tag: CoordinateTag) -> Result<Self> {
        if s.nrows() == 0 || s.nrows() % 3 != 0 || s.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "shape sequence must be 3F x P with F, P >= 1, got {}x{}",
                s.nrows(),
                s.ncols()
            )));
        }
        Ok(Self { s, tag })
    }

    pub fn camera(s: DMatrix<f64>) -> Result<Self> {
        Self::new(s, CoordinateTag::Camera)
    }

    pub fn zeros(frames: usize, points: usize, tag: CoordinateTag) -> Self {
        Self {
            s: DMatrix::zeros(3 * frames, points),
            tag,
        }
    }

    pub fn frames(&self) -> usize {
        self.s.nrows() / 3
    }

    pub fn points(&self) -> usize {
        self.s.ncols()
    }

    pub fn frame(&self, i: usize) -> DMatrix<f64> {
        self.s.rows(3 * i, 3).into_owned()
    }

    pub fn set_frame(&mut self, i: usize, block: &DMatrix<f64>) {
        self.s.rows_mut(3 * i, 3).copy_from(block);
    }

    pub fn with_tag(mut self, tag: CoordinateTag) -> Self {
        self.tag = tag;
        self
    }

    /// Left-multiplies frame `i` by `rots[i]`.
    pub fn rotated(&self, rots: &RotationSequence) -> Result<Self> {
        self.check_rotations(rots)?;
        let mut out = self.s.clone();
        for (i, r) in rots.rots.iter().enumerate() {
            let block = r.matrix() * self.s.rows(3 * i, 3);
            out.rows_mut(3 * i, 3).copy_from(&block);
        }
        Ok(Self {
            s: out,
            tag: self.tag,
        })
    }

    /// Left-multiplies frame `i` by `rots[i]^T`.
    pub fn rotated_transpose(&self, rots: &RotationSequence) -> Result<Self> {
        self.rotated(&rots.transposed())
    }

    /// Applies a single rotation to every frame.
    pub fn rotated_global(&self, r: &Rotation3) -> Self {
        let rots = RotationSequence::new(vec![*r; self.frames()]);
        self.rotated(&rots).expect("length matches by construction")
    }

    /// Right-multiplies every frame by the translation-removal projector.
    pub fn centered(&self) -> Self {
        let mut out = self.s.clone();
        for mut row in out.row_iter_mut() {
            let mean = row.mean();
            row.add_scalar_mut(-mean);
        }
        Self {
            s: out,
            tag: self.tag,
        }
    }

    fn check_rotations(&self, rots: &RotationSequence) -> Result<()> {
        if rots.len() != self.frames() {
            return Err(Error::Dimension(format!(
                "{} rotations for {} frames",
                rots.len(),
                self.frames()
            )));
        }
        Ok(())
    }
}

/// `F x 3P` rearranged shape sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct RearrangedShape {
    pub s_sharp: DMatrix<f64>,
}

impl RearrangedShape {
    pub fn new(s_sharp: DMatrix<f64>) -> Result<Self> {
        if s_sharp.ncols() % 3 != 0 || s_sharp.nrows() == 0 || s_sharp.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "rearranged shape must be F x 3P, got {}x{}",
                s_sharp.nrows(),
                s_sharp.ncols()
            )));
        }
        Ok(Self { s_sharp })
    }
}

/// Binary per-frame visibility, `F x P`.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityMask {
    pub o: DMatrix<bool>,
}

impl VisibilityMask {
    /// Fails if some frame has no visible point.
    pub fn new(o: DMatrix<bool>) -> Result<Self> {
        for i in 0..o.nrows() {
            if !o.row(i).iter().any(|&v| v) {
                return Err(Error::FullyOccludedFrame { frame: i });
            }
        }
        Ok(Self { o })
    }

    pub fn all_visible(frames: usize, points: usize) -> Self {
        Self {
            o: DMatrix::from_element(frames, points, true),
        }
    }

    pub fn frames(&self) -> usize {
        self.o.nrows()
    }

    pub fn points(&self) -> usize {
        self.o.ncols()
    }

    pub fn visible(&self, frame: usize, point: usize) -> bool {
        self.o[(frame, point)]
    }

    pub fn visible_in_frame(&self, frame: usize) -> usize {
        self.o.row(frame).iter().filter(|&&v| v).count()
    }

    pub fn hidden_count(&self) -> usize {
        self.o.iter().filter(|&&v| !v).count()
    }

    /// The `2F x P` measurement-shaped mask.
    pub fn expanded(&self) -> DMatrix<bool> {
        DMatrix::from_fn(2 * self.frames(), self.points(), |r, c| self.o[(r / 2, c)])
    }

    pub fn check_matches(&self, w: &MeasurementMatrix) -> Result<()> {
        if self.frames() != w.frames() || self.points() != w.points() {
            return Err(Error::Dimension(format!(
                "mask is {}x{} but measurements have {} frames and {} points",
                self.frames(),
                self.points(),
                w.frames(),
                w.points()
            )));
        }
        Ok(())
    }
}

/// Per-frame orthographic projectors, each the first two rows of a rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPath {
    pub pi: Vec<Matrix2x3<f64>>,
}

impl CameraPath {
    pub fn new(pi: Vec<Matrix2x3<f64>>) -> Result<Self> {
        for (i, p) in pi.iter().enumerate() {
            let defect = (p * p.transpose() - nalgebra::Matrix2::identity()).abs().max();
            if defect > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "projector of frame {i} does not have orthonormal rows (defect {defect:.3e})"
                )));
            }
        }
        Ok(Self { pi })
    }

    /// `[I_2 | 0]` for every frame: projection of camera-frame coordinates.
    pub fn camera_frame(frames: usize) -> Self {
        Self {
            pi: vec![Matrix2x3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0); frames],
        }
    }

    pub fn from_rotations(rots: &RotationSequence) -> Self {
        Self {
            pi: rots
                .rots
                .iter()
                .map(|r| r.matrix().fixed_view::<2, 3>(0, 0).into_owned())
                .collect(),
        }
    }

    pub fn frames(&self) -> usize {
        self.pi.len()
    }

    /// Unit vector spanning the null space of frame `i`'s projector.
    pub fn view_direction(&self, i: usize) -> nalgebra::Vector3<f64> {
        let p = &self.pi[i];
        let r1 = p.row(0).transpose();
        let r2 = p.row(1).transpose();
        r1.cross(&r2)
    }

    /// `Pi_i^T Pi_i`.
    pub fn gram(&self, i: usize) -> Matrix3<f64> {
        self.pi[i].transpose() * self.pi[i]
    }

    /// Projects a shape sequence: `Pi S`.
    pub fn project(&self, s: &ShapeSequence) -> Result<MeasurementMatrix> {
        if s.frames() != self.frames() {
            return Err(Error::Dimension(format!(
                "camera path has {} frames, shapes have {}",
                self.frames(),
                s.frames()
            )));
        }
        let mut w = DMatrix::zeros(2 * s.frames(), s.points());
        for (i, p) in self.pi.iter().enumerate() {
            w.rows_mut(2 * i, 2).copy_from(&(p * s.s.rows(3 * i, 3)));
        }
        MeasurementMatrix::new(w)
    }
}

/// `3F x P` -> `F x 3P`, row `i` = `[x_i | y_i | z_i]`.
pub fn rearrange(s: &ShapeSequence) -> RearrangedShape {
    rearrange_raw(&s.s)
}

pub(crate) fn rearrange_raw(s: &DMatrix<f64>) -> RearrangedShape {
    let f = s.nrows() / 3;
    let p = s.ncols();
    let out = DMatrix::from_fn(f, 3 * p, |i, c| s[(3 * i + c / p, c % p)]);
    RearrangedShape { s_sharp: out }
}

/// Exact inverse of [`rearrange`].
pub fn inverse_rearrange(x: &RearrangedShape) -> ShapeSequence {
    ShapeSequence {
        s: inverse_rearrange_raw(&x.s_sharp),
        tag: CoordinateTag::Canonical,
    }
}

pub(crate) fn inverse_rearrange_raw(x: &DMatrix<f64>) -> DMatrix<f64> {
    let f = x.nrows();
    let p = x.ncols() / 3;
    DMatrix::from_fn(3 * f, p, |r, j| x[(r / 3, (r % 3) * p + j)])
}

/// `T = I - (1/P) 1 1^T`.
pub fn translation_matrix(p: usize) -> Result<DMatrix<f64>> {
    if p == 0 {
        return Err(Error::InvalidArgument("translation matrix needs P >= 1".into()));
    }
    let inv = 1.0 / p as f64;
    Ok(DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0 - inv
        } else {
            -inv
        }
    }))
}

/// Removes the per-row mean, computed over visible entries when a mask is given.
/// Hidden cells are left untouched.
pub fn centralize(
    w: &MeasurementMatrix,
    mask: Option<&VisibilityMask>,
) -> Result<MeasurementMatrix> {
    let mut out = w.w.clone();
    match mask {
        None => {
            for mut row in out.row_iter_mut() {
                let mean = row.mean();
                row.add_scalar_mut(-mean);
            }
        }
        Some(m) => {
            m.check_matches(w)?;
            for i in 0..w.frames() {
                let vis: Vec<usize> = (0..w.points()).filter(|&j| m.visible(i, j)).collect();
                if vis.is_empty() {
                    return Err(Error::FullyOccludedFrame { frame: i });
                }
                for r in [2 * i, 2 * i + 1] {
                    let mean = vis.iter().map(|&j| out[(r, j)]).sum::<f64>() / vis.len() as f64;
                    for &j in &vis {
                        out[(r, j)] -= mean;
                    }
                }
            }
        }
    }
    MeasurementMatrix::new(out)
}

/// Scales `W` to unit RMS entry magnitude. Returns the normalized matrix and the
/// factor that maps reconstructions back to the input units.
pub fn normalize_scale(w: &MeasurementMatrix) -> Result<(MeasurementMatrix, f64)> {
    normalize_scale_masked(w, None)
}

/// As [`normalize_scale`], with the RMS taken over visible cells only.
pub fn normalize_scale_masked(
    w: &MeasurementMatrix,
    mask: Option<&VisibilityMask>,
) -> Result<(MeasurementMatrix, f64)> {
    let (sum_sq, count) = match mask {
        None => (w.w.norm_squared(), w.w.len()),
        Some(m) => {
            m.check_matches(w)?;
            let e = m.expanded();
            w.w.iter()
                .zip(e.iter())
                .filter(|(_, &v)| v)
                .fold((0.0, 0usize), |(s, c), (x, _)| (s + x * x, c + 1))
        }
    };
    if sum_sq == 0.0 || count == 0 {
        return Err(Error::InvalidArgument(
            "cannot normalize an all-zero measurement matrix".into(),
        ));
    }
    let scale = (sum_sq / count as f64).sqrt();
    MeasurementMatrix::new(&w.w / scale).map(|m| (m, scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::numerical_rank;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn single_frame_layout() {
        let s = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let r = rearrange(&ShapeSequence::camera(s).unwrap());
        assert_eq!(r.s_sharp, DMatrix::from_row_slice(1, 6, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    }

    #[test]
    fn inverse_matches_index_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&mut rng, 2, 6);
        let s = inverse_rearrange(&RearrangedShape::new(x.clone()).unwrap());
        let p = 2;
        for f in 0..2 {
            for c in 0..3 {
                for j in 0..p {
                    assert_eq!(s.s[(3 * f + c, j)], x[(f, c * p + j)]);
                }
            }
        }
        let zero = inverse_rearrange(&RearrangedShape::new(DMatrix::zeros(2, 6)).unwrap());
        assert!(zero.s.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rank_of_basis_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for k in [1usize, 2, 3, 5] {
            let (f, p) = (20, 12);
            let bases: Vec<DMatrix<f64>> = (0..k).map(|_| random(&mut rng, 3, p)).collect();
            let mut s = DMatrix::zeros(3 * f, p);
            for i in 0..f {
                let mut frame = DMatrix::zeros(3, p);
                for b in &bases {
                    frame += b * rng.random_range(-1.0..1.0);
                }
                s.rows_mut(3 * i, 3).copy_from(&frame);
            }
            let r = rearrange_raw(&s);
            assert_eq!(numerical_rank(&r.s_sharp, 1e-10), k);
        }
    }

    #[test]
    fn translation_projector() {
        let t = translation_matrix(6).unwrap();
        let ones = DMatrix::from_element(6, 1, 1.0);
        assert!((&t * &ones).norm() < 1e-15);
        assert!((&t * &t - &t).norm() < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = random(&mut rng, 3, 6);
        let c = &s * &t;
        for row in c.row_iter() {
            assert!(row.mean().abs() < 1e-12);
        }
        assert!(translation_matrix(0).is_err());
    }

    #[test]
    fn centralize_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let w = MeasurementMatrix::new(random(&mut rng, 4, 5)).unwrap();
        let c = centralize(&w, None).unwrap();
        let c2 = centralize(&c, None).unwrap();
        assert!((c.w.clone() - c2.w).abs().max() < 1e-12);

        let constant = MeasurementMatrix::new(DMatrix::from_element(2, 4, 3.5)).unwrap();
        assert!(centralize(&constant, None).unwrap().w.iter().all(|&v| v.abs() < 1e-15));

        let mut o = DMatrix::from_element(2, 5, true);
        o[(0, 1)] = false;
        o[(1, 4)] = false;
        o[(1, 0)] = false;
        let mask = VisibilityMask::new(o).unwrap();
        let cm = centralize(&w, Some(&mask)).unwrap();
        for r in 0..4 {
            let vis: Vec<usize> = (0..5).filter(|&j| mask.visible(r / 2, j)).collect();
            let mean: f64 = vis.iter().map(|&j| cm.w[(r, j)]).sum::<f64>() / vis.len() as f64;
            assert!(mean.abs() < 1e-12);
            for j in 0..5 {
                if !mask.visible(r / 2, j) {
                    assert_eq!(cm.w[(r, j)], w.w[(r, j)]);
                }
            }
        }
    }

    #[test]
    fn fully_occluded_frame_is_reported() {
        let mut o = DMatrix::from_element(3, 4, true);
        for j in 0..4 {
            o[(1, j)] = false;
        }
        assert!(matches!(
            VisibilityMask::new(o.clone()),
            Err(Error::FullyOccludedFrame { frame: 1 })
        ));
        let mask = VisibilityMask { o };
        let w = MeasurementMatrix::new(DMatrix::zeros(6, 4)).unwrap();
        assert!(matches!(
            centralize(&w, Some(&mask)),
            Err(Error::FullyOccludedFrame { frame: 1 })
        ));
    }

    #[test]
    fn normalize_scale_cases() {
        let w = MeasurementMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]))
            .unwrap();
        let (n, s) = normalize_scale(&w).unwrap();
        assert_eq!(s, 1.0);
        assert_eq!(n, w);
        let w2 = MeasurementMatrix::new(&w.w * 2.0).unwrap();
        let (n2, s2) = normalize_scale(&w2).unwrap();
        assert_eq!(s2, 2.0);
        assert_eq!(n2, w);

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let w3 = MeasurementMatrix::new(random(&mut rng, 6, 7)).unwrap();
        let (n3, _) = normalize_scale(&w3).unwrap();
        let rms = n3.w.norm() / ((n3.w.len()) as f64).sqrt();
        assert!((rms - 1.0).abs() < 1e-12);

        let zero = MeasurementMatrix::new(DMatrix::zeros(2, 3)).unwrap();
        assert!(normalize_scale(&zero).is_err());
    }

    #[test]
    fn camera_path_projection() {
        let path = CameraPath::camera_frame(2);
        let s = ShapeSequence::camera(DMatrix::from_fn(6, 3, |i, j| (i * 3 + j) as f64)).unwrap();
        let w = path.project(&s).unwrap();
        assert_eq!(w.w.row(0), s.s.row(0));
        assert_eq!(w.w.row(3), s.s.row(4));
        assert_eq!(path.view_direction(0), nalgebra::Vector3::new(0.0, 0.0, 1.0));
        let bad = Matrix2x3::new(1.0, 0.0, 0.0, 1.0, 0.0, 0.0);
        assert!(CameraPath::new(vec![bad]).is_err());
    }
}
