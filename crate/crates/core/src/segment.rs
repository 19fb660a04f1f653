//! Trajectory spectra and nearly-rigid point segmentation.

use nalgebra::Vector3;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::seqdata::ShapeSequence;

/// Spectrum of one mean-centred 3D trajectory.
#[derive(Debug, Clone)]
pub struct TrajectorySpectrum {
    /// `d(w_k)` per bin, one complex 3-vector each.
    pub coeffs: Vec<[Complex64; 3]>,
    /// Scaled periodogram `(4/F) ||d(w_k)||^2`.
    pub periodogram: Vec<f64>,
    /// `w_k = k / F`.
    pub frequencies: Vec<f64>,
    /// Energy of the raw (uncentred) trajectory; used to decide whether the
    /// centred spectrum is numerically zero.
    raw_energy: f64,
}

impl TrajectorySpectrum {
    pub fn len(&self) -> usize {
        self.periodogram.len()
    }

    pub fn is_empty(&self) -> bool {
        self.periodogram.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationResult {
    /// Sorted indices of the nearly-rigid points.
    pub rigid_set: Vec<usize>,
    pub deform_freq: Vec<f64>,
    pub alpha_r: f64,
    pub m_f: usize,
}

impl SegmentationResult {
    pub fn points(&self) -> usize {
        self.deform_freq.len()
    }

    pub fn is_rigid(&self, j: usize) -> bool {
        self.rigid_set.binary_search(&j).is_ok()
    }
}

/// DFT of the mean-centred trajectory.
pub fn trajectory_spectrum(traj: &[Vector3<f64>]) -> Result<TrajectorySpectrum> {
    let f = traj.len();
    if f < 2 {
        return Err(Error::InvalidArgument(
            "a trajectory spectrum needs at least two frames".into(),
        ));
    }
    let mean = traj.iter().fold(Vector3::zeros(), |a, x| a + x) / f as f64;
    let raw_energy: f64 = traj.iter().map(|x| x.norm_squared()).sum();
    let fft = FftPlanner::new().plan_fft_forward(f);
    let norm = 1.0 / (f as f64).sqrt();

    let mut axes: Vec<Vec<Complex64>> = Vec::with_capacity(3);
    for a in 0..3 {
        let mut buf: Vec<Complex64> = traj
            .iter()
            .map(|x| Complex64::new(x[a] - mean[a], 0.0))
            .collect();
        fft.process(&mut buf);
        for c in &mut buf {
            *c *= norm;
        }
        axes.push(buf);
    }

    let mut periodogram: Vec<f64> = (0..f)
        .map(|k| (0..3).map(|a| axes[a][k].norm_sqr()).sum::<f64>() * 4.0 / f as f64)
        .collect();
    // a real input has |d(k)| = |d(F-k)|; make the tie exact
    for k in 1..f.div_ceil(2) {
        periodogram[f - k] = periodogram[k];
    }
    Ok(TrajectorySpectrum {
        coeffs: (0..f).map(|k| [axes[0][k], axes[1][k], axes[2][k]]).collect(),
        periodogram,
        frequencies: (0..f).map(|k| k as f64 / f as f64).collect(),
        raw_energy,
    })
}

/// Average frequency of the `m_f` strongest periodogram bins (ties toward
/// lower `k`). With `fold`, bin `k` reports `min(k, F-k)/F`, so both halves
/// of a conjugate pair count as the same frequency. A spectrum with no
/// energy has deformation frequency 0.
pub fn deformation_frequency(spec: &TrajectorySpectrum, m_f: usize, fold: bool) -> Result<f64> {
    let f = spec.len();
    if m_f == 0 || m_f > f {
        return Err(Error::InvalidArgument(format!(
            "m_f must lie in 1..={f}, got {m_f}"
        )));
    }
    let total: f64 = spec.periodogram.iter().sum();
    // centring leaves rounding residue on static trajectories
    if total <= 1e-24 * spec.raw_energy.max(f64::MIN_POSITIVE) * 4.0 / f as f64 {
        return Ok(0.0);
    }
    let mut order: Vec<usize> = (0..f).collect();
    order.sort_by(|&a, &b| spec.periodogram[b].total_cmp(&spec.periodogram[a]));
    let sum: f64 = order[..m_f]
        .iter()
        .map(|&k| {
            if fold {
                k.min(f - k) as f64 / f as f64
            } else {
                spec.frequencies[k]
            }
        })
        .sum();
    Ok(sum / m_f as f64)
}

/// Number of rigid points for a given fraction, rounding halves up.
pub fn rigid_count(alpha_r: f64, p: usize) -> usize {
    ((alpha_r * p as f64 + 0.5).floor() as usize).min(p)
}

/// Marks the `round(alpha_r * P)` points with the lowest deformation frequency
/// as nearly rigid (ties by index).
pub fn segment_nearly_rigid(
    s: &ShapeSequence,
    alpha_r: f64,
    m_f: usize,
    fold: bool,
) -> Result<SegmentationResult> {
    if !(alpha_r > 0.0 && alpha_r <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha_r must lie in (0, 1], got {alpha_r}"
        )));
    }
    let f = s.frames();
    let p = s.points();
    let freqs: Vec<Result<f64>> = par::map_range(p, |j| {
        let traj: Vec<Vector3<f64>> = (0..f)
            .map(|i| Vector3::new(s.s[(3 * i, j)], s.s[(3 * i + 1, j)], s.s[(3 * i + 2, j)]))
            .collect();
        deformation_frequency(&trajectory_spectrum(&traj)?, m_f, fold)
    });
    let deform_freq = freqs.into_iter().collect::<Result<Vec<f64>>>()?;

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| deform_freq[a].total_cmp(&deform_freq[b]));
    let mut rigid_set: Vec<usize> = order[..rigid_count(alpha_r, p)].to_vec();
    rigid_set.sort_unstable();
    Ok(SegmentationResult {
        rigid_set,
        deform_freq,
        alpha_r,
        m_f,
    })
}
