//! Temporally-smooth Procrustean alignment.
//!
//! Finds per-frame rotations `Q_i` minimising
//! `1/2 sum_i ||Q_i S_i - Q_{i+1} S_{i+1}||_F^2` by sweeping the frames with
//! Levenberg-Marquardt steps on the Lie algebra, plus a generalized Procrustes
//! (mean-shape) baseline.
//!
//! Frame indices are 0-based throughout.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3xX, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{exp_so3, procrustes_rotation, skew, LieVec, Rotation3, RotationSequence};
use crate::seqdata::{CoordinateTag, ShapeSequence};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TpaOptions {
    pub max_outer_iters: usize,
    pub lm_damping_init: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    pub gradient_tolerance: f64,
    /// LM iterations spent on one frame per visit.
    pub inner_iters: usize,
}

impl Default for TpaOptions {
    fn default() -> Self {
        Self {
            max_outer_iters: 200,
            lm_damping_init: 1e-3,
            damping_up: 10.0,
            damping_down: 0.1,
            gradient_tolerance: 1e-9,
            inner_iters: 10,
        }
    }
}

impl TpaOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_outer_iters > 0
            && self.inner_iters > 0
            && self.lm_damping_init > 0.0
            && self.damping_up > 1.0
            && self.damping_down > 0.0
            && self.damping_down < 1.0
            && self.gradient_tolerance > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid TPA options {self:?}")))
        }
    }
}

/// Output of [`align_tpa`].
#[derive(Debug, Clone)]
pub struct TpaResult {
    pub rotations: RotationSequence,
    pub aligned: ShapeSequence,
    /// Loss after each outer sweep; element 0 is the loss at the identity.
    pub loss_history: Vec<f64>,
    pub converged: bool,
}

/// Output of [`align_gpa`].
#[derive(Debug, Clone)]
pub struct GpaResult {
    pub rotations: RotationSequence,
    pub mean_shape: DMatrix<f64>,
    pub iterations: usize,
}

/// The part of an objective that depends on a single frame's rotation.
///
/// `w_s/2 (||prev - Q S||^2 + ||Q S - next||^2)
///   + sum_j (beta/2 ||t_j - Q s_j||^2 + <y_j, t_j - Q s_j>)`
#[derive(Debug, Clone)]
pub(crate) struct FrameObjective<'a> {
    pub shape: &'a Matrix3xX<f64>,
    pub prev: Option<Matrix3xX<f64>>,
    pub next: Option<Matrix3xX<f64>>,
    pub smooth_weight: f64,
    pub coupling: Option<Coupling>,
}

#[derive(Debug, Clone)]
pub(crate) struct Coupling {
    pub beta: f64,
    pub target: Matrix3xX<f64>,
    pub multiplier: Matrix3xX<f64>,
}

impl FrameObjective<'_> {
    pub fn loss(&self, q: &Rotation3) -> f64 {
        let x = q.matrix() * self.shape;
        let mut l = 0.0;
        if let Some(p) = &self.prev {
            l += 0.5 * self.smooth_weight * (p - &x).norm_squared();
        }
        if let Some(n) = &self.next {
            l += 0.5 * self.smooth_weight * (&x - n).norm_squared();
        }
        if let Some(c) = &self.coupling {
            let r = &c.target - &x;
            l += 0.5 * c.beta * r.norm_squared() + c.multiplier.dot(&r);
        }
        l
    }

    /// Per-column weighted residual `v_j`, such that the gradient is
    /// `sum_j [(Q s_j)^]^T v_j`.
    fn weighted_residual(&self, x: &Matrix3xX<f64>) -> Matrix3xX<f64> {
        let mut v = Matrix3xX::zeros(x.ncols());
        if let Some(p) = &self.prev {
            v += (p - x) * self.smooth_weight;
        }
        if let Some(n) = &self.next {
            v -= (x - n) * self.smooth_weight;
        }
        if let Some(c) = &self.coupling {
            v += (&c.target - x) * c.beta + &c.multiplier;
        }
        v
    }

    pub fn gradient(&self, q: &Rotation3) -> Vector3<f64> {
        let x = q.matrix() * self.shape;
        let v = self.weighted_residual(&x);
        let mut g = Vector3::zeros();
        for j in 0..x.ncols() {
            let xj = Vector3::new(x[(0, j)], x[(1, j)], x[(2, j)]);
            let vj = Vector3::new(v[(0, j)], v[(1, j)], v[(2, j)]);
            // [x^]^T v = v x x
            g += vj.cross(&xj);
        }
        g
    }

    /// Gauss-Newton approximation of the Hessian.
    pub fn gn_hessian(&self, q: &Rotation3) -> Matrix3<f64> {
        let x = q.matrix() * self.shape;
        let terms = self.prev.is_some() as usize + self.next.is_some() as usize;
        let mut c = self.smooth_weight * terms as f64;
        if let Some(cp) = &self.coupling {
            c += cp.beta;
        }
        let mut h = Matrix3::zeros();
        for j in 0..x.ncols() {
            let xj = Vector3::new(x[(0, j)], x[(1, j)], x[(2, j)]);
            h += Matrix3::identity() * xj.norm_squared() - xj * xj.transpose();
        }
        h * c
    }

    /// One damped step. Returns the new rotation if the loss decreased.
    pub fn lm_step(
        &self,
        q: &Rotation3,
        lambda: &mut f64,
        opts: &TpaOptions,
    ) -> Option<Rotation3> {
        let g = self.gradient(q);
        if g.norm() <= opts.gradient_tolerance {
            return None;
        }
        let h = self.gn_hessian(q);
        let base = self.loss(q);
        let start = *lambda;
        for _ in 0..20 {
            let damped = h + Matrix3::identity() * *lambda;
            if let Some(chol) = damped.cholesky() {
                let delta = -chol.solve(&g);
                let cand = Rotation3::project(exp_so3(&LieVec(delta)).compose(q).matrix());
                if self.loss(&cand) < base {
                    *lambda = (*lambda * opts.damping_down).max(1e-15);
                    return Some(cand);
                }
            }
            *lambda *= opts.damping_up;
        }
        // no decrease representable at this frame; let later visits start afresh
        *lambda = start;
        None
    }
}

fn check_lengths(q: &RotationSequence, s: &ShapeSequence) -> Result<()> {
    if q.len() != s.frames() {
        return Err(Error::Dimension(format!(
            "{} rotations for {} frames",
            q.len(),
            s.frames()
        )));
    }
    Ok(())
}

fn check_frame(s: &ShapeSequence, i: usize) -> Result<()> {
    if i >= s.frames() {
        return Err(Error::InvalidArgument(format!(
            "frame index {i} out of range for {} frames",
            s.frames()
        )));
    }
    Ok(())
}

/// `1/2 sum_{i} ||Q_i S_i - Q_{i+1} S_{i+1}||_F^2`.
pub fn tpa_loss(q: &RotationSequence, s: &ShapeSequence) -> Result<f64> {
    check_lengths(q, s)?;
    let rotated: Vec<Matrix3xX<f64>> = (0..s.frames())
        .map(|i| q.rots[i].matrix() * s.s.fixed_rows::<3>(3 * i))
        .collect();
    Ok(rotated
        .windows(2)
        .map(|w| 0.5 * (&w[0] - &w[1]).norm_squared())
        .sum())
}

pub(crate) fn tpa_frame_objective<'a>(
    q: &RotationSequence,
    shapes: &'a [Matrix3xX<f64>],
    i: usize,
    smooth_weight: f64,
) -> FrameObjective<'a> {
    let f = shapes.len();
    FrameObjective {
        shape: &shapes[i],
        prev: (i > 0).then(|| q.rots[i - 1].matrix() * &shapes[i - 1]),
        next: (i + 1 < f).then(|| q.rots[i + 1].matrix() * &shapes[i + 1]),
        smooth_weight,
        coupling: None,
    }
}

pub(crate) fn split_frames(s: &DMatrix<f64>) -> Vec<Matrix3xX<f64>> {
    (0..s.nrows() / 3)
        .map(|i| s.fixed_rows::<3>(3 * i).into_owned())
        .collect()
}

/// Gradient of [`tpa_loss`] with respect to the left perturbation
/// `exp(dphi) Q_i` of frame `i`.
pub fn tpa_gradient(q: &RotationSequence, s: &ShapeSequence, i: usize) -> Result<LieVec> {
    check_lengths(q, s)?;
    check_frame(s, i)?;
    let shapes = split_frames(&s.s);
    Ok(LieVec(tpa_frame_objective(q, &shapes, i, 1.0).gradient(&q.rots[i])))
}

/// Stacked residual `r_i` (3P) paired with [`tpa_jacobian`]: `r^(1) - r^(0)` for
/// interior frames, `-r^(0)` for the first frame and `r^(1)` for the last.
pub fn tpa_residual(q: &RotationSequence, s: &ShapeSequence, i: usize) -> Result<DVector<f64>> {
    check_lengths(q, s)?;
    check_frame(s, i)?;
    let shapes = split_frames(&s.s);
    let obj = tpa_frame_objective(q, &shapes, i, 1.0);
    let x = q.rots[i].matrix() * &shapes[i];
    let v = obj.weighted_residual(&x);
    Ok(DVector::from_iterator(3 * x.ncols(), v.iter().copied()))
}

/// `3P x 3` Jacobian with blocks `[(Q_i s_{i,j})^]^T`; the gradient is `J^T r`.
pub fn tpa_jacobian(q: &RotationSequence, s: &ShapeSequence, i: usize) -> Result<DMatrix<f64>> {
    check_lengths(q, s)?;
    check_frame(s, i)?;
    let x = q.rots[i].matrix() * s.s.fixed_rows::<3>(3 * i);
    let p = x.ncols();
    let mut j = DMatrix::zeros(3 * p, 3);
    for c in 0..p {
        let xc = Vector3::new(x[(0, c)], x[(1, c)], x[(2, c)]);
        // J^T r must equal sum [x^]^T v, so each block of J is [x^]
        let block = skew(&xc);
        j.fixed_view_mut::<3, 3>(3 * c, 0).copy_from(&block);
    }
    Ok(j)
}

/// Runs forward-then-backward LM sweeps over frames starting from `q`.
pub(crate) fn sweep_frames<'a, F>(
    q: &mut RotationSequence,
    lambdas: &mut [f64],
    opts: &TpaOptions,
    sweeps: usize,
    build: F,
) where
    F: Fn(&RotationSequence, usize) -> FrameObjective<'a>,
{
    let f = q.len();
    let order: Vec<usize> = (0..f).chain((0..f).rev()).collect();
    for _ in 0..sweeps {
        for &i in &order {
            for _ in 0..opts.inner_iters {
                let obj = build(q, i);
                match obj.lm_step(&q.rots[i], &mut lambdas[i], opts) {
                    Some(r) => q.rots[i] = r,
                    None => break,
                }
            }
        }
    }
}

/// Aligns a shape sequence with TPA. The returned rotations are gauge-fixed so
/// that the first frame's rotation is the identity.
pub fn align_tpa(s: &ShapeSequence, opts: &TpaOptions) -> Result<TpaResult> {
    opts.validate()?;
    let f = s.frames();
    if f < 2 {
        return Err(Error::InvalidArgument("TPA needs at least two frames".into()));
    }
    let shapes = split_frames(&s.s);
    let mut q = RotationSequence::identity(f);
    let mut lambdas = vec![opts.lm_damping_init; f];
    let mut history = vec![tpa_loss(&q, s)?];
    let mut converged = false;

    for _ in 0..opts.max_outer_iters {
        sweep_frames(&mut q, &mut lambdas, opts, 1, |q, i| {
            tpa_frame_objective(q, &shapes, i, 1.0)
        });
        history.push(tpa_loss(&q, s)?);
        let max_grad = (0..f)
            .map(|i| tpa_frame_objective(&q, &shapes, i, 1.0).gradient(&q.rots[i]).norm())
            .fold(0.0, f64::max);
        if max_grad <= opts.gradient_tolerance {
            converged = true;
            break;
        }
        let n = history.len();
        // stalled: no measurable progress in a full sweep
        if history[n - 2] - history[n - 1] <= 1e-15 * history[n - 2].max(1e-300) {
            converged = max_grad <= opts.gradient_tolerance.sqrt();
            break;
        }
    }

    let gauge = q.rots[0].transpose();
    let rotations = q.left_mul(&gauge);
    let aligned = s.rotated(&rotations)?.with_tag(CoordinateTag::Canonical);
    Ok(TpaResult {
        rotations,
        aligned,
        loss_history: history,
        converged,
    })
}

/// Generalized Procrustes alignment against an iteratively re-estimated mean
/// shape. Shapes are centered before alignment.
pub fn align_gpa(s: &ShapeSequence, max_iters: usize) -> Result<GpaResult> {
    let f = s.frames();
    if f < 2 {
        return Err(Error::InvalidArgument("GPA needs at least two frames".into()));
    }
    let centered = s.centered();
    let shapes: Vec<DMatrix<f64>> = (0..f).map(|i| centered.frame(i)).collect();
    let mut mean = shapes[0].clone();
    let mut rots = vec![Rotation3::identity(); f];
    let mut iterations = 0;
    for it in 0..max_iters.max(1) {
        iterations = it + 1;
        for (i, sh) in shapes.iter().enumerate() {
            rots[i] = procrustes_rotation(sh, &mean)?;
        }
        let mut next = DMatrix::zeros(3, s.points());
        for (r, sh) in rots.iter().zip(&shapes) {
            next += r.matrix() * sh;
        }
        next /= f as f64;
        let change = (&next - &mean).norm();
        mean = next;
        if change < 1e-8 {
            break;
        }
    }
    Ok(GpaResult {
        rotations: RotationSequence::new(rots),
        mean_shape: mean,
        iterations,
    })
}
