//! Harmonic coordinates: corrector solves, cocycles and effective covariance.
//!
//! The corrector equation per target component is
//!
//!   sum_k p_k(x) (chi(x+k) - chi(x)) = phi(x),
//!
//! solved on zero-mean periodic fields. For the drift target the right-hand
//! sides are the components of the local quenched drift, and the resulting
//! cocycle corrects positions so that the corrected walk is a martingale.
//! The effective covariance is the conductance-weighted quadratic form of
//! the corrected step increments.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::dense::harmonic_residual;
use crate::environment::{drift_fields, TorusEnvironment};
use crate::error::CoreError;
use crate::fields::{GradientField, ScalarField};
use crate::solver::{solve_generator_system, SolveOptions, SolveStats};
use crate::Result;

/// What the corrector is solved against.
#[derive(Debug, Clone)]
pub enum CorrectorTarget {
    /// A single scalar right-hand side.
    Scalar(ScalarField),
    /// The d components of the local quenched drift.
    Drift,
}

/// Effective covariance: scalar for scalar targets, d x d for the drift.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Sigma2 {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

impl Sigma2 {
    /// Smallest eigenvalue (the matrix is symmetric).
    pub fn min_eigenvalue(&self) -> f64 {
        match self {
            Sigma2::Scalar(v) => *v,
            Sigma2::Matrix(m) => {
                let d = m.len();
                let dm = DMatrix::from_fn(d, d, |i, j| m[i][j]);
                SymmetricEigen::new(dm)
                    .eigenvalues
                    .iter()
                    .fold(f64::INFINITY, |a, &b| a.min(b))
            }
        }
    }

    /// Largest absolute eigenvalue (spectral norm for symmetric matrices).
    pub fn spectral_norm(&self) -> f64 {
        match self {
            Sigma2::Scalar(v) => v.abs(),
            Sigma2::Matrix(m) => {
                let d = m.len();
                let dm = DMatrix::from_fn(d, d, |i, j| m[i][j]);
                SymmetricEigen::new(dm)
                    .eigenvalues
                    .iter()
                    .fold(0.0f64, |a, &b| a.max(b.abs()))
            }
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        match self {
            Sigma2::Scalar(v) => vec![*v],
            Sigma2::Matrix(m) => (0..m.len()).map(|i| m[i][i]).collect(),
        }
    }
}

/// Solved corrector: periodic potentials, their gradients, residual and
/// effective covariance.
#[derive(Debug, Clone)]
pub struct CorrectorSolution {
    pub env_hash: String,
    /// One zero-mean potential per target component.
    pub chi: Vec<ScalarField>,
    /// `theta[c]` is the gradient of `chi[c]`.
    pub theta: Vec<GradientField>,
    /// The right-hand sides that were actually solved (zero-mean).
    pub targets: Vec<ScalarField>,
    /// Torus means removed from the raw targets.
    pub removed_means: Vec<f64>,
    /// Max over components of the max-norm harmonic defect.
    pub residual: f64,
    pub sigma2: Sigma2,
    pub stats: Vec<SolveStats>,
    pub is_drift_target: bool,
}

/// Options controlling the corrector solve.
#[derive(Debug, Clone, Default)]
pub struct CorrectorOptions {
    pub solve: SolveOptions,
    /// Permit removing a nonzero torus mean from a scalar target.
    pub allow_mean_removal: bool,
}

/// Solve the corrector equation for the given target.
pub fn solve_corrector(
    env: &TorusEnvironment,
    target: CorrectorTarget,
    opts: &CorrectorOptions,
) -> Result<CorrectorSolution> {
    let g = env.geometry();
    let (raw_targets, is_drift) = match target {
        CorrectorTarget::Scalar(f) => {
            if f.geometry != g {
                return Err(CoreError::Precondition("target does not match geometry".into()));
            }
            (vec![f], false)
        }
        CorrectorTarget::Drift => {
            let drift = drift_fields(env);
            let fields = drift
                .phi_star
                .into_iter()
                .map(|comp| ScalarField::from_values(g, comp))
                .collect();
            (fields, true)
        }
    };

    let mut targets = Vec::with_capacity(raw_targets.len());
    let mut removed_means = Vec::with_capacity(raw_targets.len());
    for mut f in raw_targets {
        let mean = f.mean();
        let mean_bearing = !f.zero_mean && mean.abs() > 1e-12 * f.scale().max(1.0);
        if mean_bearing && !is_drift && !opts.allow_mean_removal {
            return Err(CoreError::Precondition(format!(
                "target has torus mean {mean:.3e}; pass allow_mean_removal to subtract it"
            )));
        }
        removed_means.push(f.subtract_mean());
        targets.push(f);
    }

    let mut chi = Vec::with_capacity(targets.len());
    let mut theta = Vec::with_capacity(targets.len());
    let mut stats = Vec::with_capacity(targets.len());
    let mut residual = 0.0f64;
    for phi in &targets {
        let (c, st) = solve_generator_system(env, phi, &opts.solve)?;
        let grad = gradient_of(&c);
        residual = residual.max(harmonic_residual(env, &grad, phi));
        chi.push(c);
        theta.push(grad);
        stats.push(st);
    }

    let mut solution = CorrectorSolution {
        env_hash: env.content_hash(),
        chi,
        theta,
        targets,
        removed_means,
        residual,
        sigma2: Sigma2::Scalar(0.0),
        stats,
        is_drift_target: is_drift,
    };
    solution.sigma2 = effective_covariance(env, &solution)?.s_weighted;
    Ok(solution)
}

/// theta_k(x) = chi(x+k) - chi(x) for every signed step.
fn gradient_of(chi: &ScalarField) -> GradientField {
    let g = chi.geometry;
    let mut out = GradientField::zeros(g);
    for dir in g.directions() {
        let comp = out.comp_mut(dir);
        for (site, slot) in comp.iter_mut().enumerate() {
            *slot = chi.values[g.neighbor(site, dir)] - chi.values[site];
        }
    }
    out
}

/// Both weightings of the effective covariance and their disagreement.
#[derive(Debug, Clone)]
pub struct EffectiveCovariance {
    /// Conductance-weighted form (the defining one).
    pub s_weighted: Sigma2,
    /// Rate-weighted form; equal to `s_weighted` by the flow's skew symmetry.
    pub p_weighted: Sigma2,
    pub max_defect: f64,
}

/// Evaluate the effective covariance of a solved corrector.
///
/// Scalar targets get sum_k <s_k theta_k^2>; the drift target gets the
/// matrix sum_k <s_k (theta_k - k)_i (theta_k - k)_j>. The rate-weighted
/// version replaces s_k by p_k and must agree up to roundoff.
pub fn effective_covariance(
    env: &TorusEnvironment,
    solution: &CorrectorSolution,
) -> Result<EffectiveCovariance> {
    if solution.env_hash != env.content_hash() {
        return Err(CoreError::MismatchedTarget(
            "solution was computed for a different environment".into(),
        ));
    }
    let g = env.geometry();
    let sites = g.sites() as f64;
    if solution.is_drift_target {
        let d = g.dim();
        if solution.theta.len() != d {
            return Err(CoreError::MismatchedTarget(
                "drift covariance needs one corrector component per coordinate".into(),
            ));
        }
        let mut s_mat = vec![vec![0.0; d]; d];
        let mut p_mat = vec![vec![0.0; d]; d];
        for dir in g.directions() {
            for site in 0..g.sites() {
                let s = env.s(dir, site);
                let p = env.rate(dir, site);
                for i in 0..d {
                    let di = solution.theta[i].comp(dir)[site] - dir.component(i);
                    for j in i..d {
                        let dj = solution.theta[j].comp(dir)[site] - dir.component(j);
                        s_mat[i][j] += s * di * dj;
                        p_mat[i][j] += p * di * dj;
                    }
                }
            }
        }
        let mut defect = 0.0f64;
        for i in 0..d {
            for j in i..d {
                s_mat[i][j] /= sites;
                p_mat[i][j] /= sites;
                s_mat[j][i] = s_mat[i][j];
                p_mat[j][i] = p_mat[i][j];
                defect = defect.max((s_mat[i][j] - p_mat[i][j]).abs());
            }
        }
        Ok(EffectiveCovariance {
            s_weighted: Sigma2::Matrix(s_mat),
            p_weighted: Sigma2::Matrix(p_mat),
            max_defect: defect,
        })
    } else {
        let theta = &solution.theta[0];
        let mut s_acc = 0.0;
        let mut p_acc = 0.0;
        for dir in g.directions() {
            let comp = theta.comp(dir);
            for site in 0..g.sites() {
                let t2 = comp[site] * comp[site];
                s_acc += env.s(dir, site) * t2;
                p_acc += env.rate(dir, site) * t2;
            }
        }
        s_acc /= sites;
        p_acc /= sites;
        Ok(EffectiveCovariance {
            s_weighted: Sigma2::Scalar(s_acc),
            p_weighted: Sigma2::Scalar(p_acc),
            max_defect: (s_acc - p_acc).abs(),
        })
    }
}

/// Corrector cocycle sampled on a centered box.
#[derive(Debug, Clone)]
pub struct CocycleBox {
    pub radius: usize,
    pub dim: usize,
    /// `values[c][i]` over box points in lexicographic order, side 2R+1.
    pub values: Vec<Vec<f64>>,
    /// Set when the radius exceeds half the torus side, where the periodic
    /// extension starts repeating.
    pub periodic_reuse: bool,
}

impl CocycleBox {
    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    /// Euclidean norm of the cocycle vector at a box point.
    pub fn norm_at(&self, flat: usize) -> f64 {
        self.values
            .iter()
            .map(|comp| comp[flat] * comp[flat])
            .sum::<f64>()
            .sqrt()
    }

    /// Map an integer point in [-R, R]^d to its flat box index.
    pub fn flat_index(&self, point: &[i64]) -> usize {
        let side = self.side() as i64;
        point.iter().fold(0i64, |acc, &c| {
            debug_assert!(c.abs() <= self.radius as i64);
            acc * side + (c + self.radius as i64)
        }) as usize
    }
}

/// Evaluate the cocycle of one corrector component at an arbitrary integer
/// point: the potential is periodic, so the value is chi(x mod N) - chi(0).
pub fn cocycle_value(chi: &ScalarField, point: &[i64]) -> f64 {
    let g = chi.geometry;
    chi.values[g.site_wrapped(point)] - chi.values[0]
}

/// Sample the cocycle on the centered sup-norm box of the given radius.
///
/// Increments along any lattice path reproduce the gradient, and the value
/// at the origin is zero.
pub fn build_cocycle(solution: &CorrectorSolution, radius: usize) -> CocycleBox {
    let g = solution.chi[0].geometry;
    let d = g.dim();
    let side = 2 * radius + 1;
    let count = side.pow(d as u32);
    let mut values = vec![vec![0.0; count]; solution.chi.len()];
    let mut point = vec![-(radius as i64); d];
    for flat in 0..count {
        for (c, chi) in solution.chi.iter().enumerate() {
            values[c][flat] = cocycle_value(chi, &point);
        }
        // odometer over the box, last axis fastest
        for axis in (0..d).rev() {
            point[axis] += 1;
            if point[axis] <= radius as i64 {
                break;
            }
            point[axis] = -(radius as i64);
        }
    }
    CocycleBox {
        radius,
        dim: d,
        values,
        periodic_reuse: 2 * radius >= g.side(),
    }
}
