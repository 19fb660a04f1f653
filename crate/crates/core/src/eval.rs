//! Reconstruction error and sequence diagnostics.

use nalgebra::{DMatrix, Matrix3};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{procrustes_rotation, Rotation3};
use crate::linalg::SortedSvd;
use crate::seqdata::{
    rearrange, CameraPath, MeasurementMatrix, ShapeSequence, VisibilityMask,
};

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub e3d: f64,
    pub per_frame_errors: Vec<f64>,
    /// Whether the estimate was depth-flipped (z negated) before rotating.
    pub flip_used: bool,
    /// Global rotation applied to the (possibly flipped) estimate.
    pub aligning_rotation: Rotation3,
}

fn concat_frames(s: &ShapeSequence) -> DMatrix<f64> {
    let f = s.frames();
    let p = s.points();
    DMatrix::from_fn(3, f * p, |r, c| s.s[(3 * (c / p) + r, c % p)])
}

/// Mean normalised per-frame error after removing one global rotation and,
/// if it helps, a global depth flip.
pub fn e3d(est: &ShapeSequence, gt: &ShapeSequence) -> Result<EvalReport> {
    if est.s.shape() != gt.s.shape() {
        return Err(Error::Dimension(format!(
            "estimate is {:?}, ground truth is {:?}",
            est.s.shape(),
            gt.s.shape()
        )));
    }
    let gt_c = gt.centered();
    let norms: Vec<f64> = (0..gt.frames())
        .map(|i| gt_c.s.rows(3 * i, 3).norm())
        .collect();
    if let Some(frame) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::ZeroNormFrame { frame });
    }
    let est_c = est.centered();
    let target = concat_frames(&gt_c);

    let evaluate = |flip: bool| -> Result<(Vec<f64>, Rotation3)> {
        let mut e = est_c.clone();
        if flip {
            for i in 0..e.frames() {
                e.s.row_mut(3 * i + 2).neg_mut();
            }
        }
        let r = procrustes_rotation(&concat_frames(&e), &target)?;
        let errs = (0..e.frames())
            .map(|i| {
                let diff = r.matrix() * e.s.fixed_rows::<3>(3 * i) - gt_c.s.fixed_rows::<3>(3 * i);
                diff.norm() / norms[i]
            })
            .collect();
        Ok((errs, r))
    };

    // a zero estimate has no usable orientation; fall back to the identity
    let (plain, flipped) = match (evaluate(false), evaluate(true)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(Error::Degenerate(_)), _) | (_, Err(Error::Degenerate(_))) => {
            let errs = (0..est.frames())
                .map(|i| {
                    (est_c.s.fixed_rows::<3>(3 * i) - gt_c.s.fixed_rows::<3>(3 * i)).norm()
                        / norms[i]
                })
                .collect();
            let a = (errs, Rotation3::identity());
            (a.clone(), a)
        }
        (Err(e), _) | (_, Err(e)) => return Err(e),
    };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (errs, rot, flip_used) = if mean(&flipped.0) < mean(&plain.0) {
        (flipped.0, flipped.1, true)
    } else {
        (plain.0, plain.1, false)
    };
    Ok(EvalReport {
        e3d: mean(&errs),
        per_frame_errors: errs,
        flip_used,
        aligning_rotation: rot,
    })
}

/// Applies the alignment found by [`e3d`] to an estimate.
pub fn apply_alignment(est: &ShapeSequence, report: &EvalReport) -> ShapeSequence {
    let mut e = est.centered();
    let flip = if report.flip_used {
        Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, 1.0, -1.0))
    } else {
        Matrix3::identity()
    };
    let m = report.aligning_rotation.matrix() * flip;
    for i in 0..e.frames() {
        let block = m * e.s.fixed_rows::<3>(3 * i);
        e.s.fixed_rows_mut::<3>(3 * i).copy_from(&block);
    }
    e
}

/// Sum of singular values of the rearranged `F x 3P` sequence.
pub fn nuclear_norm_diag(s: &ShapeSequence) -> Result<f64> {
    Ok(SortedSvd::new(&rearrange(s).s_sharp)?.sigma.sum())
}

/// `sum_i ||S_{i+1} - S_i||_F^2`.
pub fn smoothness_diag(s: &ShapeSequence) -> f64 {
    (1..s.frames())
        .map(|i| (s.s.rows(3 * i, 3) - s.s.rows(3 * (i - 1), 3)).norm_squared())
        .sum()
}

/// `||O (W - Pi S)||_F / ||O W||_F`.
pub fn reprojection_error(
    w: &MeasurementMatrix,
    pi: &CameraPath,
    s: &ShapeSequence,
    mask: Option<&VisibilityMask>,
) -> Result<f64> {
    let proj = pi.project(s)?;
    if proj.w.shape() != w.w.shape() {
        return Err(Error::Dimension(format!(
            "projection is {:?}, measurements are {:?}",
            proj.w.shape(),
            w.w.shape()
        )));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for r in 0..w.w.nrows() {
        for j in 0..w.w.ncols() {
            if mask.is_none_or(|m| m.visible(r / 2, j)) {
                num += (w.w[(r, j)] - proj.w[(r, j)]).powi(2);
                den += w.w[(r, j)].powi(2);
            }
        }
    }
    Ok(if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (num / den).sqrt()
    })
}
