//! Spatial kernel `Lambda` and proxy shapes `S Lambda`.
//!
//! Nearly-rigid points keep their own feature direction while every other
//! point collapses onto one shared "super point", so the low-rank prior acts
//! mostly on the rigid region.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segment::SegmentationResult;
use crate::seqdata::{CoordinateTag, ShapeSequence};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxyConfig {
    pub alpha_r: f64,
    pub delta_r: f64,
    pub m_f: usize,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        Self {
            alpha_r: 0.5,
            delta_r: 1.0 / 3.0,
            m_f: 2,
        }
    }
}

impl ProxyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_r > 0.0 && self.alpha_r <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha_r must lie in (0, 1], got {}",
                self.alpha_r
            )));
        }
        if !(0.0..1.0).contains(&self.delta_r) {
            return Err(Error::InvalidArgument(format!(
                "delta_r must lie in [0, 1), got {}",
                self.delta_r
            )));
        }
        if self.m_f == 0 {
            return Err(Error::InvalidArgument("m_f must be at least 1".into()));
        }
        Ok(())
    }

    /// `1/sqrt((1 - alpha_r) P)`, or 0 when every point is rigid.
    pub fn delta_nr(&self, p: usize) -> f64 {
        if self.alpha_r >= 1.0 || p == 0 {
            0.0
        } else {
            1.0 / ((1.0 - self.alpha_r) * p as f64).sqrt()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub lambda: DMatrix<f64>,
    pub rigid_set: Vec<usize>,
    pub delta_r: f64,
    pub delta_nr: f64,
}

impl WeightMatrix {
    pub fn identity(p: usize) -> Self {
        Self {
            lambda: DMatrix::identity(p, p),
            rigid_set: (0..p).collect(),
            delta_r: 0.0,
            delta_nr: 0.0,
        }
    }

    pub fn points(&self) -> usize {
        self.lambda.nrows()
    }
}

/// Feature vector of point `i` in `R^{P+1}`.
pub fn feature_map(i: usize, seg: &SegmentationResult, cfg: &ProxyConfig) -> Result<DVector<f64>> {
    let p = seg.points();
    if i >= p {
        return Err(Error::InvalidArgument(format!(
            "point index {i} out of range for {p} points"
        )));
    }
    let mut v = DVector::zeros(p + 1);
    if seg.is_rigid(i) {
        v[i] = (1.0 - cfg.delta_r * cfg.delta_r).sqrt();
        v[p] = cfg.delta_r;
    } else {
        v[p] = cfg.delta_nr(p);
    }
    Ok(v)
}

/// Gram matrix of the feature vectors.
pub fn build_weight_matrix(seg: &SegmentationResult, cfg: &ProxyConfig) -> Result<WeightMatrix> {
    cfg.validate()?;
    let p = seg.points();
    let mut phi = DMatrix::zeros(p + 1, p);
    for i in 0..p {
        phi.set_column(i, &feature_map(i, seg, cfg)?);
    }
    let mut lambda = phi.transpose() * &phi;
    // the product is symmetric up to rounding; make it exact
    for i in 0..p {
        for j in 0..i {
            lambda[(i, j)] = lambda[(j, i)];
        }
    }
    Ok(WeightMatrix {
        lambda,
        rigid_set: seg.rigid_set.clone(),
        delta_r: cfg.delta_r,
        delta_nr: cfg.delta_nr(p),
    })
}

/// `S Lambda`.
pub fn proxy_shape(s_hat: &ShapeSequence, lam: &WeightMatrix) -> Result<ShapeSequence> {
    if s_hat.points() != lam.points() {
        return Err(Error::Dimension(format!(
            "{} points in the shape, {} in the weight matrix",
            s_hat.points(),
            lam.points()
        )));
    }
    ShapeSequence::new(&s_hat.s * &lam.lambda, CoordinateTag::Proxy)
}
