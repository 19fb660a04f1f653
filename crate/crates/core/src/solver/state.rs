//! ADMM state and the closed-form block updates.

use nalgebra::{Cholesky, DMatrix, Dyn, Matrix3};

use crate::error::{Error, Result};
use crate::geometry::{LieVec, RotationSequence};
use crate::par;
use crate::proxy::WeightMatrix;
use crate::seqdata::{
    inverse_rearrange_raw, rearrange_raw, translation_matrix, CameraPath, CoordinateTag,
    MeasurementMatrix, RearrangedShape, ShapeSequence, VisibilityMask,
};
use crate::tpa::{split_frames, sweep_frames, Coupling, FrameObjective, TpaOptions};

use super::shrink::{weighted_singular_weights, weighted_svt};
use super::SolverConfig;

/// The variable blocks of one ADMM iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    ProxySharp,
    SHat,
    STilde,
    S,
    Q,
}

/// Every ADMM variable, multiplier and fixed input of one solve.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub w: MeasurementMatrix,
    pub mask: Option<VisibilityMask>,
    pub pi: CameraPath,
    pub r_p: RotationSequence,
    pub s: ShapeSequence,
    pub s_tilde: ShapeSequence,
    pub s_hat: ShapeSequence,
    pub s_breve_sharp: RearrangedShape,
    pub q: RotationSequence,
    pub y1: DMatrix<f64>,
    pub y2: DMatrix<f64>,
    pub y3: DMatrix<f64>,
    pub beta: f64,
    pub lam: WeightMatrix,
    /// Shape-basis dimension actually used by the shrinkage.
    pub k_s: usize,
    lm_damping: Vec<f64>,
    gram_factor: Option<Cholesky<f64, Dyn>>,
}

fn dims_err(what: &str, got: (usize, usize), want: (usize, usize)) -> Error {
    Error::Dimension(format!("{what} is {got:?}, expected {want:?}"))
}

impl SolverState {
    /// Initial state: pseudo-inverse shapes, `Q = I`, `Lambda = I`, zero
    /// multipliers and `beta = beta0`. Hidden cells of `w` only seed the
    /// initial shapes.
    pub fn new(
        w: &MeasurementMatrix,
        r_p: &RotationSequence,
        cfg: &SolverConfig,
        mask: Option<&VisibilityMask>,
    ) -> Result<Self> {
        cfg.validate()?;
        let f = w.frames();
        let p = w.points();
        if r_p.len() != f {
            return Err(Error::Dimension(format!("{} rotations for {f} frames", r_p.len())));
        }
        if let Some(m) = mask {
            m.check_matches(w)?;
        }
        let pi = CameraPath::camera_frame(f);
        let s = crate::init::init_shape_pinv(w, &pi)?;
        let mut st = Self {
            w: w.clone(),
            mask: mask.cloned(),
            pi,
            r_p: r_p.clone(),
            s_tilde: s.clone(),
            s_hat: s.clone(),
            s,
            s_breve_sharp: RearrangedShape {
                s_sharp: DMatrix::zeros(f, 3 * p),
            },
            q: RotationSequence::identity(f),
            y1: DMatrix::zeros(f, 3 * p),
            y2: DMatrix::zeros(3 * f, p),
            y3: DMatrix::zeros(3 * f, p),
            beta: cfg.beta0,
            lam: WeightMatrix::identity(p),
            k_s: cfg.resolved_k_s(f, p),
            lm_damping: vec![cfg.tpa.lm_damping_init; f],
            gram_factor: None,
        };
        st.s_tilde = ShapeSequence::new(st.r_p_s_t(), CoordinateTag::Aligned)?;
        st.s_hat = ShapeSequence::new(st.s_tilde.s.clone(), CoordinateTag::Canonical)?;
        st.s_breve_sharp = rearrange_raw(&st.proxy_raw());
        Ok(st)
    }

    pub fn frames(&self) -> usize {
        self.w.frames()
    }

    pub fn points(&self) -> usize {
        self.w.points()
    }

    pub fn occluded(&self) -> bool {
        self.mask.is_some()
    }

    /// Replaces `Lambda`, invalidating the cached factorisation.
    pub fn set_weight_matrix(&mut self, lam: WeightMatrix) -> Result<()> {
        if lam.points() != self.points() {
            return Err(dims_err(
                "weight matrix",
                lam.lambda.shape(),
                (self.points(), self.points()),
            ));
        }
        self.lam = lam;
        self.gram_factor = None;
        Ok(())
    }

    /// `Q S~` (3F x P).
    pub fn q_s_tilde(&self) -> DMatrix<f64> {
        self.s_tilde.rotated(&self.q).expect("lengths validated").s
    }

    /// `S^ Lambda`.
    pub fn proxy_raw(&self) -> DMatrix<f64> {
        &self.s_hat.s * &self.lam.lambda
    }

    /// `R_p S`, or `R_p S T` when a mask is present.
    pub fn r_p_s_t(&self) -> DMatrix<f64> {
        let rs = self.s.rotated(&self.r_p).expect("lengths validated").s;
        if self.occluded() {
            center_rows(rs)
        } else {
            rs
        }
    }

    fn gram(&mut self) -> Result<&Cholesky<f64, Dyn>> {
        if self.gram_factor.is_none() {
            let p = self.points();
            let m = DMatrix::identity(p, p) + &self.lam.lambda * self.lam.lambda.transpose();
            self.gram_factor = Some(
                m.cholesky()
                    .ok_or_else(|| Error::Numeric("I + Lambda Lambda^T is not PD".into()))?,
            );
        }
        Ok(self.gram_factor.as_ref().expect("just set"))
    }

    // ---- block updates -------------------------------------------------

    /// Weighted SVT of `g(S^ Lambda) - Y1 / beta`.
    pub fn update_proxy_sharp(&mut self, cfg: &SolverConfig) -> Result<()> {
        let c = rearrange_raw(&self.proxy_raw()).s_sharp - &self.y1 / self.beta;
        let out = weighted_svt(&c, cfg.mu2 / self.beta, self.k_s, cfg.xi, cfg.gamma)?;
        self.s_breve_sharp = RearrangedShape { s_sharp: out.x };
        Ok(())
    }

    /// Right-hand side of the `S^` normal equations.
    pub fn s_hat_rhs(&self) -> DMatrix<f64> {
        let lt = self.lam.lambda.transpose();
        self.q_s_tilde() - &self.y2 / self.beta
            + inverse_rearrange_raw(&self.s_breve_sharp.s_sharp) * &lt
            + inverse_rearrange_raw(&self.y1) * &lt / self.beta
    }

    /// Solves `S^ (I + Lambda Lambda^T) = rhs`.
    pub fn update_s_hat(&mut self, _cfg: &SolverConfig) -> Result<()> {
        let rhs_t = self.s_hat_rhs().transpose();
        let sol = self.gram()?.solve(&rhs_t).transpose();
        self.s_hat = ShapeSequence::new(sol, CoordinateTag::Canonical)?;
        Ok(())
    }

    /// Right-hand side of the `S~` equations:
    /// `Q^T S^ + Q^T Y2 / beta + R_p S (T) - Y3 / beta`.
    pub fn s_tilde_rhs(&self) -> DMatrix<f64> {
        let qt = self.q.transposed();
        let a = ShapeSequence::camera(&self.s_hat.s + &self.y2 / self.beta)
            .expect("shape")
            .rotated(&qt)
            .expect("lengths validated")
            .s;
        a + self.r_p_s_t() - &self.y3 / self.beta
    }

    /// Solves `(mu3/beta Q^T H^T H Q + 2I) S~ = rhs` by substituting
    /// `Z = Q S~`, which leaves a scalar tridiagonal system along frames.
    pub fn update_s_tilde(&mut self, cfg: &SolverConfig) -> Result<()> {
        let rhs = ShapeSequence::camera(self.s_tilde_rhs())?
            .rotated(&self.q)?
            .s;
        let z = solve_smoothing_system(&rhs, cfg.mu3 / self.beta);
        let s_tilde = ShapeSequence::camera(z)?.rotated(&self.q.transposed())?;
        self.s_tilde = s_tilde.with_tag(CoordinateTag::Aligned);
        Ok(())
    }

    /// Per-frame solve of `(mu1/beta Pi^T Pi + I) S_i = mu1/beta Pi^T W_i
    /// + R_p^T S~_i + R_p^T Y3_i / beta`.
    pub fn update_s(&mut self, cfg: &SolverConfig) -> Result<()> {
        if self.occluded() {
            return self.update_s_occluded(cfg);
        }
        let c = cfg.mu1 / self.beta;
        let blocks: Vec<Result<DMatrix<f64>>> = par::map_range(self.frames(), |i| {
            let a = self.pi.gram(i) * c + Matrix3::identity();
            let rt = self.r_p.rots[i].transpose();
            let rhs = self.pi.pi[i].transpose() * self.w.w.rows(2 * i, 2) * c
                + rt.matrix() * (self.s_tilde.s.rows(3 * i, 3) + self.y3.rows(3 * i, 3) / self.beta);
            let chol = a
                .cholesky()
                .ok_or_else(|| Error::Numeric(format!("S system of frame {i} is not PD")))?;
            Ok(DMatrix::from_iterator(3, rhs.ncols(), chol.solve(&rhs).iter().copied()))
        });
        for (i, b) in blocks.into_iter().enumerate() {
            self.s.set_frame(i, &b?);
        }
        Ok(())
    }

    /// Occluded per-frame system, assembled with `vec(A X B) = (B^T kron A) vec(X)`:
    /// `[mu1/beta (M kron Pi^T Pi) + (T kron I3) + G] vec(S_i)
    ///   = vec(mu1/beta Pi^T W_i M + R_p^T S~_i T + R_p^T Y3_i T / beta)`,
    /// where `M` is the frame's visibility diagonal and `G` pins the one
    /// direction (a shift along the viewing ray) the other terms leave free.
    pub fn update_s_occluded(&mut self, cfg: &SolverConfig) -> Result<()> {
        let mask = self.mask.as_ref().expect("occluded update needs a mask");
        let p = self.points();
        let c = cfg.mu1 / self.beta;
        let t = translation_matrix(p)?;
        let blocks: Vec<Result<DMatrix<f64>>> = par::map_range(self.frames(), |i| {
            let (a, rhs) = occluded_system(self, mask, &t, c, i);
            let chol = a.cholesky().ok_or_else(|| {
                Error::Numeric(format!("occluded S system of frame {i} is not PD"))
            })?;
            let x = chol.solve(&rhs);
            Ok(DMatrix::from_column_slice(3, p, x.as_slice()))
        });
        for (i, b) in blocks.into_iter().enumerate() {
            self.s.set_frame(i, &b?);
        }
        Ok(())
    }

    /// LM sweeps on each `Q_i` for the terms of the Lagrangian that involve it.
    pub fn update_q(&mut self, cfg: &SolverConfig) -> Result<()> {
        let shapes = split_frames(&self.s_tilde.s);
        let targets = split_frames(&self.s_hat.s);
        let mults = split_frames(&self.y2);
        let beta = self.beta;
        let opts = TpaOptions {
            inner_iters: 1,
            ..cfg.tpa
        };
        let mut q = self.q.clone();
        sweep_frames(&mut q, &mut self.lm_damping, &opts, cfg.q_inner_iters, |q, i| {
            q_frame_objective(q, &shapes, &targets, &mults, i, cfg.mu3, beta)
        });
        self.q = q;
        Ok(())
    }

    /// Dual ascent on the three constraints and the penalty schedule.
    pub fn update_multipliers_and_beta(&mut self, cfg: &SolverConfig) {
        let (r1, r2, r3) = self.residuals();
        self.y1 += r1 * self.beta;
        self.y2 += r2 * self.beta;
        self.y3 += r3 * self.beta;
        self.beta = (self.beta * cfg.lambda_growth).min(cfg.beta_max);
    }

    /// Constraint residuals `S#_breve - g(S^ Lambda)`, `S^ - Q S~`, `S~ - R_p S (T)`.
    pub fn residuals(&self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let r1 = &self.s_breve_sharp.s_sharp - rearrange_raw(&self.proxy_raw()).s_sharp;
        let r2 = &self.s_hat.s - self.q_s_tilde();
        let r3 = &self.s_tilde.s - self.r_p_s_t();
        (r1, r2, r3)
    }

    /// Masked data term `||O (W - Pi S)||_F^2`.
    pub fn data_residual_sq(&self) -> f64 {
        let mut total = 0.0;
        for i in 0..self.frames() {
            let proj = self.pi.pi[i] * self.s.s.fixed_rows::<3>(3 * i);
            for j in 0..self.points() {
                if self.mask.as_ref().is_none_or(|m| m.visible(i, j)) {
                    for r in 0..2 {
                        total += (self.w.w[(2 * i + r, j)] - proj[(r, j)]).powi(2);
                    }
                }
            }
        }
        total
    }

    /// Objective that the update of `block` minimises, evaluated at the
    /// current value of that block with everything else held fixed. For the
    /// proxy block the singular-value weights come from the shrinkage input.
    pub fn subproblem_objective(&self, cfg: &SolverConfig, block: Block) -> Result<f64> {
        let (r1, r2, r3) = self.residuals();
        let b = self.beta;
        let sq = |r: &DMatrix<f64>, y: &DMatrix<f64>| (r + y / b).norm_squared();
        Ok(match block {
            Block::ProxySharp => {
                let c = rearrange_raw(&self.proxy_raw()).s_sharp - &self.y1 / b;
                let wts = weighted_singular_weights(
                    &crate::linalg::singular_values(&c)?,
                    self.k_s,
                    cfg.xi,
                    cfg.gamma,
                );
                let sv = crate::linalg::singular_values(&self.s_breve_sharp.s_sharp)?;
                let nuc: f64 = sv.iter().zip(&wts).map(|(s, w)| s * w).sum();
                cfg.mu2 * nuc + 0.5 * b * (&self.s_breve_sharp.s_sharp - c).norm_squared()
            }
            Block::SHat => 0.5 * b * (sq(&r1, &self.y1) + sq(&r2, &self.y2)),
            Block::STilde => {
                cfg.mu3 * crate::tpa::tpa_loss(&self.q, &self.s_tilde)?
                    + 0.5 * b * (sq(&r2, &self.y2) + sq(&r3, &self.y3))
            }
            Block::S => 0.5 * cfg.mu1 * self.data_residual_sq() + 0.5 * b * sq(&r3, &self.y3),
            Block::Q => {
                cfg.mu3 * crate::tpa::tpa_loss(&self.q, &self.s_tilde)?
                    + self.y2.dot(&r2)
                    + 0.5 * b * r2.norm_squared()
            }
        })
    }

    /// Gradient of the `Q` objective with respect to `exp(dphi) Q_i`.
    pub fn q_gradient(&self, cfg: &SolverConfig, i: usize) -> Result<LieVec> {
        if i >= self.frames() {
            return Err(Error::InvalidArgument(format!(
                "frame index {i} out of range for {} frames",
                self.frames()
            )));
        }
        let shapes = split_frames(&self.s_tilde.s);
        let targets = split_frames(&self.s_hat.s);
        let mults = split_frames(&self.y2);
        let obj = q_frame_objective(&self.q, &shapes, &targets, &mults, i, cfg.mu3, self.beta);
        Ok(LieVec(obj.gradient(&self.q.rots[i])))
    }

    /// Augmented Lagrangian. The weighted nuclear norm uses the weights of
    /// the current proxy's own singular values.
    pub fn lagrangian(&self, cfg: &SolverConfig) -> Result<f64> {
        let sv = crate::linalg::singular_values(&self.s_breve_sharp.s_sharp)?;
        let wts = weighted_singular_weights(&sv, self.k_s, cfg.xi, cfg.gamma);
        let nuc: f64 = sv.iter().zip(&wts).map(|(s, w)| s * w).sum();
        let smooth = crate::tpa::tpa_loss(&self.q, &self.s_tilde)?;
        let (r1, r2, r3) = self.residuals();
        let aug = |y: &DMatrix<f64>, r: &DMatrix<f64>| y.dot(r) + 0.5 * self.beta * r.norm_squared();
        Ok(0.5 * cfg.mu1 * self.data_residual_sq()
            + cfg.mu2 * nuc
            + cfg.mu3 * smooth
            + aug(&self.y1, &r1)
            + aug(&self.y2, &r2)
            + aug(&self.y3, &r3))
    }
}

/// Per-frame objective of the `Q` block.
pub(crate) fn q_frame_objective<'a>(
    q: &RotationSequence,
    shapes: &'a [nalgebra::Matrix3xX<f64>],
    targets: &[nalgebra::Matrix3xX<f64>],
    mults: &[nalgebra::Matrix3xX<f64>],
    i: usize,
    mu3: f64,
    beta: f64,
) -> FrameObjective<'a> {
    let mut obj = crate::tpa::tpa_frame_objective(q, shapes, i, mu3);
    obj.coupling = Some(Coupling {
        beta,
        target: targets[i].clone(),
        multiplier: mults[i].clone(),
    });
    obj
}

fn center_rows(mut m: DMatrix<f64>) -> DMatrix<f64> {
    for mut row in m.row_iter_mut() {
        let mean = row.mean();
        row.add_scalar_mut(-mean);
    }
    m
}

/// Solves `(c H^T H + 2I) Z = rhs` frame-wise, where `H` is the first
/// difference operator along frames (Thomas algorithm, shared across all
/// `3P` scalar columns of a frame).
pub fn solve_smoothing_system(rhs: &DMatrix<f64>, c: f64) -> DMatrix<f64> {
    let f = rhs.nrows() / 3;
    let diag = |i: usize| {
        let deg = if f == 1 {
            0.0
        } else if i == 0 || i + 1 == f {
            1.0
        } else {
            2.0
        };
        2.0 + c * deg
    };
    let off = -c;
    // forward elimination
    let mut cp = vec![0.0; f];
    let mut dp = rhs.clone();
    let mut denom = diag(0);
    cp[0] = off / denom;
    {
        let mut first = dp.rows_mut(0, 3);
        first /= denom;
    }
    for i in 1..f {
        denom = diag(i) - off * cp[i - 1];
        cp[i] = off / denom;
        let prev = dp.rows(3 * (i - 1), 3).into_owned();
        let mut cur = dp.rows_mut(3 * i, 3);
        cur -= prev * off;
        cur /= denom;
    }
    for i in (0..f.saturating_sub(1)).rev() {
        let next = dp.rows(3 * (i + 1), 3).into_owned();
        let mut cur = dp.rows_mut(3 * i, 3);
        cur -= next * cp[i];
    }
    dp
}

/// Assembles the occluded per-frame system (matrix and right-hand side).
pub(crate) fn occluded_system(
    st: &SolverState,
    mask: &VisibilityMask,
    t: &DMatrix<f64>,
    c: f64,
    i: usize,
) -> (DMatrix<f64>, nalgebra::DVector<f64>) {
    let p = st.points();
    let n = 3 * p;
    let g = st.pi.gram(i);
    let visible: Vec<bool> = (0..p).map(|j| mask.visible(i, j)).collect();
    let view = if visible.iter().any(|&v| v) {
        st.pi.view_direction(i)
    } else {
        nalgebra::Vector3::zeros()
    };
    let gauge: Matrix3<f64> = if view.norm() > 0.0 {
        view * view.transpose()
    } else {
        Matrix3::identity()
    };
    let mut a = DMatrix::zeros(n, n);
    for j in 0..p {
        for k in 0..p {
            let mut block = Matrix3::identity() * t[(j, k)] + gauge / p as f64;
            if j == k && visible[j] {
                block += g * c;
            }
            a.fixed_view_mut::<3, 3>(3 * j, 3 * k).copy_from(&block);
        }
    }
    let rt = st.r_p.rots[i].transpose();
    let mut b = rt.matrix() * (st.s_tilde.s.rows(3 * i, 3) + st.y3.rows(3 * i, 3) / st.beta) * t;
    let pw = st.pi.pi[i].transpose() * st.w.w.rows(2 * i, 2);
    for j in 0..p {
        if visible[j] {
            for r in 0..3 {
                b[(r, j)] += c * pw[(r, j)];
            }
        }
    }
    (a, nalgebra::DVector::from_column_slice(b.as_slice()))
}
