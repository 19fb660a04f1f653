//! Weighted, truncated singular-value shrinkage.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::linalg::SortedSvd;

/// `sign(sigma) max(|sigma| - tau, 0)`.
pub fn soft_threshold(sigma: f64, tau: f64) -> f64 {
    sigma.signum() * (sigma.abs() - tau).max(0.0)
}

/// Normalised weights for the leading `k_s` singular values; the tail gets
/// weight zero and passes through unshrunk.
///
/// `Theta_j = xi / (sigma_j + gamma)`,
/// `Theta~_j = xi Theta_j / sum_{i <= k_s} Theta_i` for `j <= k_s`.
pub fn weighted_singular_weights(sigmas: &[f64], k_s: usize, xi: f64, gamma: f64) -> Vec<f64> {
    let k = k_s.min(sigmas.len());
    let theta: Vec<f64> = sigmas.iter().map(|&s| xi / (s + gamma)).collect();
    let norm: f64 = theta[..k].iter().sum();
    theta
        .iter()
        .enumerate()
        .map(|(j, &t)| if j < k && norm > 0.0 { xi * t / norm } else { 0.0 })
        .collect()
}

/// Least-squares projection onto non-increasing sequences (pool adjacent
/// violators). Blocks are `(sum, count)`.
pub fn pool_non_increasing(y: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(y.len());
    for &v in y {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (s1, n1) = blocks[blocks.len() - 1];
            let (s0, n0) = blocks[blocks.len() - 2];
            if s0 / n0 as f64 >= s1 / n1 as f64 {
                break;
            }
            blocks.pop();
            *blocks.last_mut().unwrap() = (s0 + s1, n0 + n1);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(s, n)| std::iter::repeat_n(s / n as f64, n))
        .collect()
}

/// Result of a weighted shrinkage, with the singular values before and after.
#[derive(Debug, Clone)]
pub struct ShrinkResult {
    pub x: DMatrix<f64>,
    pub sigma_in: Vec<f64>,
    pub sigma_out: Vec<f64>,
    pub weights: Vec<f64>,
}

/// `U S_{tau Theta~}(Sigma) V^T` of `c`.
///
/// When the per-value thresholds would leave the shrunk values out of
/// descending order, the shrunk spectrum is pooled back into order before
/// clipping at zero. This makes the output the exact minimiser of
/// `tau sum_j Theta~_j sigma_j(X) + 1/2 ||X - c||^2` for any weight vector,
/// and changes nothing when the order survives.
pub fn weighted_svt(
    c: &DMatrix<f64>,
    tau: f64,
    k_s: usize,
    xi: f64,
    gamma: f64,
) -> Result<ShrinkResult> {
    let svd = SortedSvd::new(c)?;
    let sigma_in: Vec<f64> = svd.sigma.iter().copied().collect();
    let weights = weighted_singular_weights(&sigma_in, k_s, xi, gamma);
    let shifted: Vec<f64> = sigma_in
        .iter()
        .zip(&weights)
        .map(|(&s, &w)| s - tau * w)
        .collect();
    let sigma_out: Vec<f64> = pool_non_increasing(&shifted)
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    let x = if tau == 0.0 {
        c.clone()
    } else {
        svd.recompose(&sigma_out)
    };
    Ok(ShrinkResult {
        x,
        sigma_in,
        sigma_out,
        weights,
    })
}
