//! Invariant checks shared by the property suite and the acceptance runner.
//! Each returns `Err` with a message on violation.
#![allow(dead_code)]

use nalgebra::{DMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tpa_nrsfm::geometry::{exp_so3, log_so3, LieVec, Rotation3};
use tpa_nrsfm::linalg::{singular_values, sym_eigen_desc};
use tpa_nrsfm::pipeline::{reconstruct, PipelineConfig};
use tpa_nrsfm::proxy::{build_weight_matrix, ProxyConfig};
use tpa_nrsfm::segment::SegmentationResult;
use tpa_nrsfm::seqdata::{inverse_rearrange, rearrange, translation_matrix};
use tpa_nrsfm::solver::SolverConfig;
use tpa_nrsfm::synth::{generate_sequence, SynthSpec};
use tpa_nrsfm::tpa::{align_tpa, TpaOptions};
use tpa_nrsfm::{RotationSequence, ShapeSequence};

pub type Check = std::result::Result<(), String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Check {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn so3_defect(r: &Rotation3) -> f64 {
    let m = r.matrix();
    let orth = (m.transpose() * m - nalgebra::Matrix3::identity()).abs().max();
    orth.max((m.determinant() - 1.0).abs())
}

/// `exp(phi)` is a rotation and `log` inverts it away from angle pi.
pub fn exp_log(phi: Vector3<f64>) -> Check {
    let r = exp_so3(&LieVec(phi));
    ensure(so3_defect(&r) < 1e-9, || format!("exp({phi:?}) leaves SO(3)"))?;
    if phi.norm() < std::f64::consts::PI - 1e-3 {
        let back = log_so3(&r).0;
        ensure((back - phi).norm() < 1e-9, || {
            format!("log(exp({phi:?})) = {back:?}")
        })?;
    }
    Ok(())
}

/// TPA-aligned rotations stay in SO(3) and the loss history never rises.
pub fn tpa_outputs_in_so3(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = rng.random_range(2..7);
    let p = rng.random_range(3..9);
    let s = ShapeSequence::camera(DMatrix::from_fn(3 * f, p, |_, _| rng.random_range(-1.0..1.0)))
        .map_err(|e| e.to_string())?;
    let out = align_tpa(
        &s,
        &TpaOptions {
            max_outer_iters: 20,
            ..TpaOptions::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let worst = out.rotations.rots.iter().map(so3_defect).fold(0.0, f64::max);
    ensure(worst < 1e-9, || format!("TPA rotation defect {worst:e}"))?;
    ensure(
        out.loss_history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)),
        || format!("TPA loss rose: {:?}", out.loss_history),
    )
}

/// Rearrangement followed by its inverse is the identity, bit for bit.
pub fn rearrange_round_trip(seed: u64, f: usize, p: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = ShapeSequence::camera(DMatrix::from_fn(3 * f, p, |_, _| rng.random::<f64>() - 0.5))
        .map_err(|e| e.to_string())?;
    let back = inverse_rearrange(&rearrange(&s));
    ensure(back.s == s.s, || "rearrange round trip is not exact".into())
}

/// A sequence built from `k` bases rearranges to a matrix of rank at most `k`.
pub fn basis_rank(seed: u64, f: usize, p: usize, k: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bases: Vec<DMatrix<f64>> = (0..k)
        .map(|_| DMatrix::from_fn(3, p, |_, _| rng.random_range(-1.0..1.0)))
        .collect();
    let mut s = DMatrix::zeros(3 * f, p);
    for i in 0..f {
        let mut frame = DMatrix::zeros(3, p);
        for b in &bases {
            frame += b * rng.random_range(-1.0..1.0);
        }
        s.rows_mut(3 * i, 3).copy_from(&frame);
    }
    let s = ShapeSequence::camera(s).map_err(|e| e.to_string())?;
    let sv = singular_values(&rearrange(&s).s_sharp).map_err(|e| e.to_string())?;
    let rank = sv.iter().filter(|&&x| x > 1e-9 * sv[0].max(1.0)).count();
    ensure(rank <= k, || format!("rank {rank} exceeds basis count {k}"))
}

/// `T = I - 11^T / P` has eigenvalue 0 once and 1 with multiplicity `P - 1`.
pub fn translation_projector(p: usize) -> Check {
    let t = translation_matrix(p).map_err(|e| e.to_string())?;
    let (vals, _) = sym_eigen_desc(&t).map_err(|e| e.to_string())?;
    for (n, v) in vals.iter().enumerate() {
        let want = if n + 1 == p { 0.0 } else { 1.0 };
        ensure((v - want).abs() < 1e-10, || {
            format!("eigenvalue {n} of T({p}) is {v}")
        })?;
    }
    Ok(())
}

fn seg_of(rigid: Vec<usize>, p: usize, alpha_r: f64) -> SegmentationResult {
    SegmentationResult {
        rigid_set: rigid,
        deform_freq: vec![0.0; p],
        alpha_r,
        m_f: 2,
    }
}

/// The weight matrix is a symmetric PSD Gram matrix whose rank is
/// `|rigid| + 1` for a proper rigid subset, with the closed-form spectrum
/// when every point is rigid.
pub fn weight_matrix_rank(seed: u64, p: usize, alpha_r: f64, delta_r: f64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ProxyConfig {
        alpha_r,
        delta_r,
        m_f: 2,
    };
    let n_rigid = tpa_nrsfm::segment::rigid_count(alpha_r, p);
    let mut idx: Vec<usize> = (0..p).collect();
    for i in (1..p).rev() {
        idx.swap(i, rng.random_range(0..=i));
    }
    let mut rigid = idx[..n_rigid].to_vec();
    rigid.sort_unstable();
    let lam = build_weight_matrix(&seg_of(rigid, p, alpha_r), &cfg)
        .map_err(|e| e.to_string())?
        .lambda;
    ensure(lam == lam.transpose(), || "weight matrix is not symmetric".into())?;
    let (vals, _) = sym_eigen_desc(&lam).map_err(|e| e.to_string())?;
    ensure(vals.iter().all(|&v| v > -1e-10), || {
        format!("weight matrix has a negative eigenvalue {vals:?}")
    })?;
    let sv = singular_values(&lam).map_err(|e| e.to_string())?;
    if n_rigid < p {
        let rank = sv.iter().filter(|&&x| x > 1e-10).count();
        ensure(rank == n_rigid + 1, || {
            format!("rank {rank}, expected {} (P={p}, alpha_r={alpha_r})", n_rigid + 1)
        })?;
    } else {
        let d2 = delta_r * delta_r;
        let top = 1.0 - d2 + p as f64 * d2;
        ensure((sv[0] - top).abs() < 1e-10, || format!("top singular value {}", sv[0]))?;
        for x in &sv[1..] {
            ensure((x - (1.0 - d2)).abs() < 1e-10, || format!("singular value {x}"))?;
        }
    }
    Ok(())
}

/// Same seed gives bit-identical synthetic data and reconstructions, whatever
/// the worker count.
pub fn determinism(seed: u64) -> Check {
    let spec = SynthSpec {
        frames: 12,
        points: 8,
        basis: 2,
        seed,
        ..SynthSpec::default()
    };
    let a = generate_sequence(&spec).map_err(|e| e.to_string())?;
    let b = generate_sequence(&spec).map_err(|e| e.to_string())?;
    ensure(a.w.w == b.w.w && a.shapes.s == b.shapes.s, || {
        "synthetic data differs between runs".into()
    })?;
    let cfg = PipelineConfig {
        solver: SolverConfig {
            max_iters_phase1: 30,
            max_iters_phase2: 30,
            ..SolverConfig::default()
        },
        init_basis: 2,
        ..PipelineConfig::default()
    };
    let cams: &RotationSequence = &a.rotations;
    let r1 = tpa_nrsfm::par::with_threads(1, || reconstruct(&a.w, None, Some(cams), &cfg))
        .map_err(|e| e.to_string())?;
    let r2 = tpa_nrsfm::par::with_threads(4, || reconstruct(&b.w, None, Some(cams), &cfg))
        .map_err(|e| e.to_string())?;
    ensure(r1.s.s == r2.s.s, || "reconstruction differs between runs".into())?;
    let q_same = r1
        .q
        .rots
        .iter()
        .zip(&r2.q.rots)
        .all(|(x, y)| x.matrix() == y.matrix());
    ensure(q_same, || "correction rotations differ between runs".into())
}
