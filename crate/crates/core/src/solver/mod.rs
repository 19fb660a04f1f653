//! Two-phase ADMM for the full reconstruction model.
//!
//! Phase 1 runs with `Q = I` and `Lambda = I`. The resulting canonical shapes
//! are segmented into nearly-rigid and deforming points, `Lambda` is built from
//! that split, and phase 2 continues with the correction rotations enabled.

mod shrink;
mod state;

pub use shrink::{
    pool_non_increasing, soft_threshold, weighted_singular_weights, weighted_svt, ShrinkResult,
};
pub use state::{solve_smoothing_system, Block, SolverState};

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::reprojection_error;
use crate::geometry::RotationSequence;
use crate::proxy::{build_weight_matrix, ProxyConfig};
use crate::segment::{segment_nearly_rigid, SegmentationResult};
use crate::seqdata::{rearrange_raw, MeasurementMatrix, ShapeSequence, VisibilityMask};
use crate::tpa::TpaOptions;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub mu1: f64,
    pub mu2: f64,
    pub mu3: f64,
    pub alpha_r: f64,
    pub delta_r: f64,
    pub m_f: usize,
    /// Fold spectrum bins above Nyquist onto their mirror frequency.
    pub fold: bool,
    /// Shape-basis dimension; `None` picks `min(10, F / 3)`.
    pub k_s: Option<usize>,
    pub xi: f64,
    pub gamma: f64,
    pub beta0: f64,
    pub beta_max: f64,
    pub lambda_growth: f64,
    pub beta_d: f64,
    pub eps: f64,
    pub q_inner_iters: usize,
    pub max_iters_phase1: usize,
    pub max_iters_phase2: usize,
    /// Keep `Q = I` in phase 2.
    pub freeze_q: bool,
    pub tpa: TpaOptions,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            mu1: 1.0,
            mu2: 0.1,
            mu3: 0.1,
            alpha_r: 0.5,
            delta_r: 1.0 / 3.0,
            m_f: 2,
            fold: true,
            k_s: None,
            xi: 1.0,
            gamma: 1e-6,
            beta0: 1e-4,
            beta_max: 1e10,
            lambda_growth: 1.1,
            beta_d: 1e-2,
            eps: 1e-6,
            q_inner_iters: 1,
            max_iters_phase1: 500,
            max_iters_phase2: 500,
            freeze_q: false,
            tpa: TpaOptions::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [self.mu1, self.mu2, self.mu3];
        let pos = [
            self.xi,
            self.gamma,
            self.beta0,
            self.beta_max,
            self.beta_d,
            self.eps,
        ];
        let bad = nonneg.iter().any(|x| !(x.is_finite() && *x >= 0.0))
            || pos.iter().any(|x| !(x.is_finite() && *x > 0.0))
            || !(self.lambda_growth >= 1.0)
            || self.beta0 > self.beta_max
            || self.beta_d > self.beta_max
            || !(1..=10).contains(&self.q_inner_iters)
            || self.max_iters_phase1 == 0
            || self.max_iters_phase2 == 0
            || self.k_s == Some(0);
        if bad {
            return Err(Error::InvalidArgument(format!("invalid solver config {self:?}")));
        }
        self.proxy().validate()?;
        self.tpa.validate()
    }

    pub fn proxy(&self) -> ProxyConfig {
        ProxyConfig {
            alpha_r: self.alpha_r,
            delta_r: self.delta_r,
            m_f: self.m_f,
        }
    }

    /// `k_s` if set, else `min(10, F / 3)`, clipped to `[1, min(F, 3P)]`.
    pub fn resolved_k_s(&self, frames: usize, points: usize) -> usize {
        let k = self.k_s.unwrap_or((frames / 3).min(10));
        k.clamp(1, frames.min(3 * points).max(1))
    }
}

/// One row of the per-iteration diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub phase: u8,
    pub iteration: usize,
    pub reprojection_error: f64,
    pub lagrangian: f64,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub beta: f64,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    /// Camera-frame shapes.
    pub s: ShapeSequence,
    /// Aligned shapes `S~`.
    pub s_tilde: ShapeSequence,
    /// Canonical shapes `S^ = Q S~`.
    pub s_hat: ShapeSequence,
    pub q: RotationSequence,
    pub segmentation: SegmentationResult,
    pub diagnostics: Vec<IterRecord>,
    pub phase1_iterations: usize,
    pub phase2_iterations: usize,
    /// Both phases stopped on the step tolerance rather than the cap.
    pub converged: bool,
    /// Shapes at the end of phase 1.
    pub phase1_s: ShapeSequence,
}

/// Writes diagnostics as CSV with the header
/// `iteration,reprojection_error,lagrangian,r1,r2,r3,beta`.
/// Iterations are numbered consecutively across both phases.
pub fn write_diagnostics_csv<W: Write>(records: &[IterRecord], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record([
        "iteration",
        "reprojection_error",
        "lagrangian",
        "r1",
        "r2",
        "r3",
        "beta",
    ])
    .map_err(csv_err)?;
    for (n, r) in records.iter().enumerate() {
        wtr.write_record(&[
            n.to_string(),
            r.reprojection_error.to_string(),
            r.lagrangian.to_string(),
            r.r1.to_string(),
            r.r2.to_string(),
            r.r3.to_string(),
            r.beta.to_string(),
        ])
        .map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn record(st: &SolverState, cfg: &SolverConfig, phase: u8, iteration: usize) -> Result<IterRecord> {
    let (r1, r2, r3) = st.residuals();
    Ok(IterRecord {
        phase,
        iteration,
        reprojection_error: reprojection_error(&st.w, &st.pi, &st.s, st.mask.as_ref())?,
        lagrangian: st.lagrangian(cfg)?,
        r1: r1.norm(),
        r2: r2.norm(),
        r3: r3.norm(),
        beta: st.beta,
    })
}

/// One ADMM iteration. Returns `||S_new - S||_inf`.
pub fn admm_iteration(st: &mut SolverState, cfg: &SolverConfig, with_q: bool) -> Result<f64> {
    let prev = st.s.s.clone();
    st.update_proxy_sharp(cfg)?;
    st.update_s_hat(cfg)?;
    st.update_s_tilde(cfg)?;
    st.update_s(cfg)?;
    if with_q {
        st.update_q(cfg)?;
    }
    st.update_multipliers_and_beta(cfg);
    let step = (&st.s.s - prev).abs().max();
    if !step.is_finite() {
        return Err(Error::Numeric("ADMM iterate became non-finite".into()));
    }
    Ok(step)
}

fn run_phase(
    st: &mut SolverState,
    cfg: &SolverConfig,
    phase: u8,
    with_q: bool,
    cap: usize,
    diags: &mut Vec<IterRecord>,
) -> Result<(usize, bool)> {
    for it in 0..cap {
        let step = admm_iteration(st, cfg, with_q)?;
        diags.push(record(st, cfg, phase, it)?);
        if step < cfg.eps {
            return Ok((it + 1, true));
        }
    }
    Ok((cap, false))
}

fn check_visibility(mask: &VisibilityMask) {
    for i in 0..mask.frames() {
        let n = mask.visible_in_frame(i);
        if n < 3 {
            log::warn!("frame {i} has only {n} visible points");
        }
    }
}

/// Full two-phase solve on centralised measurements. `r_p` maps camera
/// coordinates to the aligned frame. With a mask, the data term only sees
/// visible cells and shapes are re-centred inside the alignment constraint.
pub fn solve(
    w: &MeasurementMatrix,
    r_p: &RotationSequence,
    cfg: &SolverConfig,
    mask: Option<&VisibilityMask>,
) -> Result<SolveResult> {
    if let Some(m) = mask {
        check_visibility(m);
    }
    let mut st = SolverState::new(w, r_p, cfg, mask)?;
    let mut diags = Vec::new();

    let (it1, conv1) = run_phase(&mut st, cfg, 1, false, cfg.max_iters_phase1, &mut diags)?;
    log::info!("phase 1 finished after {it1} iterations (converged: {conv1})");
    let phase1_s = st.s.clone();

    let segmentation = segment_nearly_rigid(&st.s_hat, cfg.alpha_r, cfg.m_f, cfg.fold)?;
    st.set_weight_matrix(build_weight_matrix(&segmentation, &cfg.proxy())?)?;
    st.beta = cfg.beta_d;
    // the old proxy and its multiplier refer to the identity kernel
    st.s_breve_sharp = rearrange_raw(&st.proxy_raw());
    st.y1.fill(0.0);

    let (it2, conv2) = run_phase(
        &mut st,
        cfg,
        2,
        !cfg.freeze_q,
        cfg.max_iters_phase2,
        &mut diags,
    )?;
    log::info!("phase 2 finished after {it2} iterations (converged: {conv2})");

    Ok(SolveResult {
        s: st.s.clone(),
        s_tilde: st.s_tilde.clone(),
        s_hat: st.s_hat.clone(),
        q: st.q.clone(),
        segmentation,
        diagnostics: diags,
        phase1_iterations: it1,
        phase2_iterations: it2,
        converged: conv1 && conv2,
        phase1_s,
    })
}

/// [`solve`] with a required visibility mask.
pub fn solve_occluded(
    w: &MeasurementMatrix,
    r_p: &RotationSequence,
    cfg: &SolverConfig,
    mask: &VisibilityMask,
) -> Result<SolveResult> {
    solve(w, r_p, cfg, Some(mask))
}
