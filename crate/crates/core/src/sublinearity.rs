//! Sublinearity profiles of cocycles over growing boxes.
//!
//! For a field Psi on the lattice, the profile tracks
//!
//!   S(R) = R^{-(d+1)} sum_{|x|_inf <= R} |Psi(x)|
//!   W(R, eps) = R^{-d} #{ |x|_inf <= R : |Psi(x)| > eps R }
//!
//! over sup-norm boxes. A cocycle that grows sublinearly drives S(R) to
//! zero; a linearly growing field keeps it bounded away from zero, which
//! is the negative control.

use serde::Serialize;

use crate::corrector::CorrectorSolution;
use crate::error::CoreError;
use crate::Result;

/// Computed profile values with the trend verdict.
#[derive(Debug, Clone, Serialize)]
pub struct SublinearityProfile {
    pub radii: Vec<usize>,
    pub s_values: Vec<f64>,
    pub eps_list: Vec<f64>,
    /// `w_values[e][r]`: counting profile for `eps_list[e]` at `radii[r]`.
    pub w_values: Vec<Vec<f64>>,
    /// Least-squares slope of log S against log R.
    pub log_log_slope: f64,
    pub strictly_decreasing: bool,
    /// Radii were clipped to the half-period bound.
    pub clipped: bool,
}

/// Compute the profile of `psi` over centered sup-norm boxes.
///
/// Radii beyond `max_radius` (half the torus side, when given) are clipped
/// and flagged: past that point the periodic extension repeats.
pub fn sublinearity_profile(
    psi: impl Fn(&[i64]) -> f64,
    dim: usize,
    radii: &[usize],
    eps_list: &[f64],
    max_radius: Option<usize>,
) -> Result<SublinearityProfile> {
    if radii.is_empty() || radii.windows(2).any(|w| w[0] >= w[1]) || radii[0] == 0 {
        return Err(CoreError::Precondition(
            "radii must be positive and strictly increasing".into(),
        ));
    }
    let mut clipped = false;
    let radii: Vec<usize> = match max_radius {
        Some(cap) => {
            let kept: Vec<usize> = radii.iter().copied().filter(|&r| r <= cap).collect();
            clipped = kept.len() != radii.len();
            if kept.is_empty() {
                return Err(CoreError::Precondition(format!(
                    "all radii exceed the half-period bound {cap}"
                )));
            }
            kept
        }
        None => radii.to_vec(),
    };

    let mut s_values = Vec::with_capacity(radii.len());
    let mut w_values = vec![Vec::with_capacity(radii.len()); eps_list.len()];
    for &radius in &radii {
        let r = radius as i64;
        let side = (2 * radius + 1) as i64;
        let count = (side as usize).pow(dim as u32);
        let mut point = vec![-r; dim];
        let mut abs_sum = 0.0;
        let mut exceed = vec![0usize; eps_list.len()];
        for _ in 0..count {
            let value = psi(&point).abs();
            abs_sum += value;
            for (e, &eps) in eps_list.iter().enumerate() {
                if value > eps * radius as f64 {
                    exceed[e] += 1;
                }
            }
            for axis in (0..dim).rev() {
                point[axis] += 1;
                if point[axis] <= r {
                    break;
                }
                point[axis] = -r;
            }
        }
        let rf = radius as f64;
        s_values.push(abs_sum / rf.powi(dim as i32 + 1));
        for (e, &n) in exceed.iter().enumerate() {
            w_values[e].push(n as f64 / rf.powi(dim as i32));
        }
    }

    // least-squares slope of log S vs log R (zero values clamp far below)
    let logs: Vec<(f64, f64)> = radii
        .iter()
        .zip(&s_values)
        .map(|(&r, &s)| ((r as f64).ln(), s.max(1e-300).ln()))
        .collect();
    let n = logs.len() as f64;
    let mean_x = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let var_x = logs.iter().map(|p| (p.0 - mean_x) * (p.0 - mean_x)).sum::<f64>();
    let cov = logs
        .iter()
        .map(|p| (p.0 - mean_x) * (p.1 - mean_y))
        .sum::<f64>();
    let log_log_slope = if var_x > 0.0 { cov / var_x } else { 0.0 };

    let strictly_decreasing = s_values.windows(2).all(|w| w[1] < w[0]);

    Ok(SublinearityProfile {
        radii,
        s_values,
        eps_list: eps_list.to_vec(),
        w_values,
        log_log_slope,
        strictly_decreasing,
        clipped,
    })
}

/// Profile of the Euclidean norm of a solved corrector's cocycle.
pub fn corrector_profile(
    solution: &CorrectorSolution,
    radii: &[usize],
    eps_list: &[f64],
) -> Result<SublinearityProfile> {
    let g = solution.chi[0].geometry;
    let anchor: Vec<f64> = solution.chi.iter().map(|chi| chi.values[0]).collect();
    let psi = |point: &[i64]| -> f64 {
        let site = g.site_wrapped(point);
        solution
            .chi
            .iter()
            .zip(&anchor)
            .map(|(chi, a)| {
                let v = chi.values[site] - a;
                v * v
            })
            .sum::<f64>()
            .sqrt()
    };
    sublinearity_profile(psi, g.dim(), radii, eps_list, Some(g.side() / 2))
}
