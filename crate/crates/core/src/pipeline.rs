//! End-to-end reconstruction: preprocessing, camera initialisation, solve,
//! de-normalisation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RotationSequence;
use crate::init::{complete_matrix, init_rotations, CompletionResult};
use crate::seqdata::{
    centralize, normalize_scale_masked, MeasurementMatrix, ShapeSequence, VisibilityMask,
};
use crate::solver::{solve, SolveResult, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    #[serde(flatten)]
    pub solver: SolverConfig,
    /// Number of shape bases assumed by the factorisation-based camera init.
    pub init_basis: usize,
    /// Fill hidden cells by low-rank completion before initialisation.
    pub complete: bool,
    /// Completion rank; `None` uses `3 * init_basis`.
    pub completion_rank: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            init_basis: 3,
            complete: true,
            completion_rank: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.init_basis == 0 || self.completion_rank == Some(0) {
            return Err(Error::InvalidArgument(
                "init_basis and completion_rank must be at least 1".into(),
            ));
        }
        self.solver.validate()
    }

    pub fn resolved_completion_rank(&self) -> usize {
        self.completion_rank.unwrap_or(3 * self.init_basis)
    }
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    /// Camera-frame shapes in the units of the input tracks.
    pub s: ShapeSequence,
    /// Canonical shapes `S^`, in input units.
    pub s_hat: ShapeSequence,
    /// Correction rotations.
    pub q: RotationSequence,
    /// Camera-to-aligned rotations used by the solver.
    pub r_p: RotationSequence,
    /// Factor that was divided out of the tracks.
    pub scale: f64,
    pub completion: Option<CompletionResult>,
    pub solve: SolveResult,
}

/// Reconstructs shapes from raw tracks. `cameras`, if given, are
/// world-to-camera rotations and bypass the factorisation init.
pub fn reconstruct(
    w: &MeasurementMatrix,
    mask: Option<&VisibilityMask>,
    cameras: Option<&RotationSequence>,
    cfg: &PipelineConfig,
) -> Result<Reconstruction> {
    cfg.validate()?;
    if let Some(c) = cameras {
        if c.len() != w.frames() {
            return Err(Error::Dimension(format!(
                "{} camera rotations for {} frames",
                c.len(),
                w.frames()
            )));
        }
    }
    let centred = centralize(w, mask)?;
    let (mut wn, scale) = normalize_scale_masked(&centred, mask)?;

    let completion = match mask {
        Some(m) if cfg.complete => {
            let c = complete_matrix(&wn, m, cfg.resolved_completion_rank())?;
            wn = c.w.clone();
            Some(c)
        }
        Some(m) => {
            for i in 0..wn.frames() {
                for j in 0..wn.points() {
                    if !m.visible(i, j) {
                        wn.w[(2 * i, j)] = 0.0;
                        wn.w[(2 * i + 1, j)] = 0.0;
                    }
                }
            }
            None
        }
        None => None,
    };

    let r_p = match cameras {
        Some(c) => c.transposed(),
        None => {
            if mask.is_some() && completion.is_none() {
                log::warn!("initialising cameras from zero-filled tracks");
            }
            init_rotations(&centralize(&wn, None)?, cfg.init_basis)?
        }
    };

    let out = solve(&wn, &r_p, &cfg.solver, mask)?;
    let denorm = |s: &ShapeSequence| ShapeSequence {
        s: &s.s * scale,
        tag: s.tag,
    };
    Ok(Reconstruction {
        s: denorm(&out.s),
        s_hat: denorm(&out.s_hat),
        q: out.q.clone(),
        r_p,
        scale,
        completion,
        solve: out,
    })
}
