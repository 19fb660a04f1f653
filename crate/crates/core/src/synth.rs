//! Seeded synthetic sequences: low-rank deforming shapes seen by an orbiting
//! orthographic camera, plus rotation noise, pixel noise and occlusion.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{exp_so3, LieVec, Rotation3, RotationSequence};
use crate::seqdata::{
    centralize, CameraPath, CoordinateTag, MeasurementMatrix, ShapeSequence, VisibilityMask,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CameraType {
    Fixed,
    OneCircle,
    MultiCircle,
}

impl std::str::FromStr for CameraType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Self::Fixed),
            "one-circle" => Ok(Self::OneCircle),
            "multi-circle" => Ok(Self::MultiCircle),
            other => Err(Error::InvalidArgument(format!(
                "unknown camera type {other:?} (expected fixed, one-circle or multi-circle)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OcclusionPattern {
    UniformRandom,
    PerFrameBlock,
}

impl std::str::FromStr for OcclusionPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform-random" => Ok(Self::UniformRandom),
            "per-frame-block" => Ok(Self::PerFrameBlock),
            other => Err(Error::InvalidArgument(format!(
                "unknown occlusion pattern {other:?}"
            ))),
        }
    }
}

/// Orbit speed of the multi-circle camera, degrees per frame.
pub const MULTI_CIRCLE_DEG_PER_FRAME: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub frames: usize,
    pub points: usize,
    pub basis: usize,
    pub camera_type: CameraType,
    /// Number of DCT atoms used for the smooth basis coefficients.
    pub coeff_band: usize,
    pub seed: u64,
    pub noise_sigma: f64,
    pub occlusion_rate: f64,
    pub occlusion_pattern: OcclusionPattern,
    /// Amplitude of the deforming coefficients relative to the mean shape.
    pub deform_scale: f64,
    /// Camera tilt above the orbit plane, degrees.
    pub elevation_deg: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            frames: 50,
            points: 30,
            basis: 3,
            camera_type: CameraType::OneCircle,
            coeff_band: 5,
            seed: 0,
            noise_sigma: 0.0,
            occlusion_rate: 0.0,
            occlusion_pattern: OcclusionPattern::UniformRandom,
            deform_scale: 0.5,
            elevation_deg: 20.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidArgument(m));
        if self.frames < 2 || self.points < 3 {
            return fail(format!(
                "need at least 2 frames and 3 points, got {}x{}",
                self.frames, self.points
            ));
        }
        if self.basis == 0 || self.basis > self.frames.min(self.points) {
            return fail(format!(
                "basis count {} must lie in 1..=min(F, P)",
                self.basis
            ));
        }
        if self.coeff_band == 0 {
            return fail("coeff_band must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.occlusion_rate) {
            return fail(format!("occlusion rate {} not in [0, 1)", self.occlusion_rate));
        }
        if !(self.noise_sigma >= 0.0 && self.deform_scale >= 0.0) {
            return fail("noise_sigma and deform_scale must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    /// Ground-truth shapes in camera coordinates (`R_i X_i`).
    pub shapes: ShapeSequence,
    /// The same shapes in world coordinates.
    pub shapes_world: ShapeSequence,
    /// World-to-camera rotations.
    pub rotations: RotationSequence,
    /// Centralised (noisy, if requested) measurements.
    pub w: MeasurementMatrix,
    pub mask: Option<VisibilityMask>,
}

/// Independent random stream `stream` derived from `seed`.
fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Orthonormal (in `R^{3P}`) translation-free basis shapes, scaled so a
/// typical point coordinate is of order one.
fn basis_shapes(rng: &mut ChaCha8Rng, k: usize, p: usize) -> Vec<DMatrix<f64>> {
    let mut out: Vec<DMatrix<f64>> = Vec::with_capacity(k);
    while out.len() < k {
        let mut b = DMatrix::from_fn(3, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        for mut row in b.row_iter_mut() {
            let m = row.mean();
            row.add_scalar_mut(-m);
        }
        for prev in &out {
            let d = b.dot(prev);
            b -= prev * d;
        }
        let n = b.norm();
        if n > 1e-8 {
            out.push(b / n);
        }
    }
    let scale = (p as f64).sqrt();
    out.into_iter().map(|b| b * scale).collect()
}

fn dct_atom(band: usize, t: usize, f: usize) -> f64 {
    (PI * band as f64 * (t as f64 + 0.5) / f as f64).cos()
}

/// Camera rotation at frame `i`: orbit about the world vertical (y) axis,
/// then a constant tilt about the camera x axis.
pub fn camera_rotation(kind: CameraType, i: usize, frames: usize, elevation_deg: f64) -> Rotation3 {
    let heading = match kind {
        CameraType::Fixed => 0.0,
        CameraType::OneCircle => 2.0 * PI * i as f64 / frames as f64,
        CameraType::MultiCircle => (MULTI_CIRCLE_DEG_PER_FRAME * i as f64).to_radians(),
    };
    let tilt = Rotation3::from_axis_angle(&Vector3::x(), elevation_deg.to_radians());
    let orbit = Rotation3::from_axis_angle(&Vector3::y(), heading);
    tilt.compose(&orbit)
}

/// Generates a seeded synthetic sequence.
pub fn generate_sequence(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let (f, p, k) = (spec.frames, spec.points, spec.basis);
    let mut rng = stream_rng(spec.seed, 0);
    let bases = basis_shapes(&mut rng, k, p);

    // first basis is the mean shape; the rest deform smoothly around it
    let mut coeffs = DMatrix::zeros(f, k);
    for c in 0..k {
        if c == 0 {
            coeffs.column_mut(0).fill(1.0);
            continue;
        }
        let amps: Vec<f64> = (0..spec.coeff_band)
            .map(|_| rng.sample::<f64, _>(StandardNormal) / (spec.coeff_band as f64).sqrt())
            .collect();
        for t in 0..f {
            let v: f64 = amps
                .iter()
                .enumerate()
                .map(|(b, a)| a * dct_atom(b + 1, t, f))
                .sum();
            coeffs[(t, c)] = spec.deform_scale * v;
        }
    }

    let mut world = DMatrix::zeros(3 * f, p);
    for t in 0..f {
        let mut x = DMatrix::zeros(3, p);
        for (c, b) in bases.iter().enumerate() {
            x += b * coeffs[(t, c)];
        }
        world.rows_mut(3 * t, 3).copy_from(&x);
    }
    let shapes_world = ShapeSequence::new(world, CoordinateTag::Camera)?;

    let rotations = RotationSequence::new(
        (0..f)
            .map(|i| camera_rotation(spec.camera_type, i, f, spec.elevation_deg))
            .collect(),
    );
    let shapes = shapes_world.rotated(&rotations)?;
    let mut w = CameraPath::camera_frame(f).project(&shapes)?;

    let mask = if spec.occlusion_rate > 0.0 {
        Some(inject_occlusion(
            f,
            p,
            spec.occlusion_rate,
            spec.occlusion_pattern,
            spec.seed.wrapping_add(1),
        )?)
    } else {
        None
    };
    if spec.noise_sigma > 0.0 {
        w = add_2d_noise(&w, spec.noise_sigma, mask.as_ref(), spec.seed.wrapping_add(2))?;
    }
    let w = centralize(&w, mask.as_ref())?;
    Ok(SynthOutput {
        shapes,
        shapes_world,
        rotations,
        w,
        mask,
    })
}

/// Left-multiplies each frame by `exp(phi_i)`, `phi_i ~ N(0, sigma^2 I)`.
/// Returns the disrupted sequence and the applied rotations.
pub fn disrupt_rotations(
    s: &ShapeSequence,
    sigma: f64,
    seed: u64,
) -> Result<(ShapeSequence, RotationSequence)> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {sigma}")));
    }
    let noise = sample_rotation_noise(s.frames(), sigma, seed);
    Ok((s.rotated(&noise)?, noise))
}

/// `frames` independent rotations `exp(N(0, sigma^2 I))`.
pub fn sample_rotation_noise(frames: usize, sigma: f64, seed: u64) -> RotationSequence {
    let mut rng = stream_rng(seed, 3);
    RotationSequence::new(
        (0..frames)
            .map(|_| {
                let mut v = || sigma * rng.sample::<f64, _>(StandardNormal);
                exp_so3(&LieVec::new(v(), v(), v()))
            })
            .collect(),
    )
}

/// Minimum visible points kept in every frame.
pub const MIN_VISIBLE_PER_FRAME: usize = 3;

/// Hides `round(rate F P)` cells while keeping at least three visible points
/// per frame.
pub fn inject_occlusion(
    frames: usize,
    points: usize,
    rate: f64,
    pattern: OcclusionPattern,
    seed: u64,
) -> Result<VisibilityMask> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("occlusion rate {rate} not in [0, 1)")));
    }
    let hidden = (rate * (frames * points) as f64).round() as usize;
    let capacity = frames * points.saturating_sub(MIN_VISIBLE_PER_FRAME);
    if hidden > capacity {
        return Err(Error::InvalidArgument(format!(
            "cannot hide {hidden} of {} cells while keeping {MIN_VISIBLE_PER_FRAME} visible points per frame",
            frames * points
        )));
    }
    let mut rng = stream_rng(seed, 4);
    let mut o = DMatrix::from_element(frames, points, true);
    match pattern {
        OcclusionPattern::UniformRandom => {
            let mut cells: Vec<(usize, usize)> = (0..frames)
                .flat_map(|i| (0..points).map(move |j| (i, j)))
                .collect();
            cells.shuffle(&mut rng);
            let mut visible = vec![points; frames];
            let mut count = 0;
            for (i, j) in cells {
                if count == hidden {
                    break;
                }
                if visible[i] > MIN_VISIBLE_PER_FRAME {
                    o[(i, j)] = false;
                    visible[i] -= 1;
                    count += 1;
                }
            }
        }
        OcclusionPattern::PerFrameBlock => {
            let base = hidden / frames;
            let mut extra_frames: Vec<usize> = (0..frames).collect();
            extra_frames.shuffle(&mut rng);
            extra_frames.truncate(hidden % frames);
            for i in 0..frames {
                let len = base + extra_frames.contains(&i) as usize;
                let start = rng.random_range(0..points);
                for d in 0..len {
                    o[(i, (start + d) % points)] = false;
                }
            }
        }
    }
    VisibilityMask::new(o)
}

/// Adds i.i.d. Gaussian noise to the visible cells.
pub fn add_2d_noise(
    w: &MeasurementMatrix,
    sigma: f64,
    mask: Option<&VisibilityMask>,
    seed: u64,
) -> Result<MeasurementMatrix> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {sigma}")));
    }
    if let Some(m) = mask {
        m.check_matches(w)?;
    }
    let mut rng = stream_rng(seed, 5);
    let mut out = w.w.clone();
    for j in 0..out.ncols() {
        for r in 0..out.nrows() {
            if mask.is_none_or(|m| m.visible(r / 2, j)) {
                out[(r, j)] += sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    MeasurementMatrix::new(out)
}
