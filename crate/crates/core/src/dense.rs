//! Dense linear algebra on small tori.
//!
//! Everything here materializes operators as N^d x N^d matrices, so it is
//! gated at [`DENSE_LIMIT`] sites. Two things live here: the direct LU
//! solve of the harmonic-coordinate system (the oracle against which the
//! iterative solver is checked) and the operator-calculus solve that goes
//! through the square roots of the dissipative part and the skew core
//! C = S^{-1/2} A S^{-1/2}.
//!
//! The operator-calculus route: writing the corrector equation
//! L chi = phi with L = -S + A and pulling the gauge through the spectral
//! calculus,
//!
//!   chi = -S^{-1/2} (I - C)^{-1} S^{-1/2} phi,
//!
//! where the inverse square roots annihilate the constant mode. The
//! |Delta|^{1/2}-weighted unknown of the sandwich form is
//! w = |Delta|^{1/2} chi; for constant conductance c the whole chain
//! collapses to w = -(2/c)(I + (2/c)B)^{-1} |Delta|^{-1/2} phi with
//! B = -|Delta|^{-1/2} A |Delta|^{-1/2}, which is the resolvent of a skew
//! operator and therefore always solvable.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::environment::TorusEnvironment;
use crate::error::CoreError;
use crate::fields::{GradientField, ScalarField};
use crate::operators::OperatorContext;
use crate::Result;

/// Dense mode is allowed up to this many sites.
pub const DENSE_LIMIT: usize = 4096;

/// Relative eigenvalue threshold below which a mode counts as kernel.
const KERNEL_REL_TOL: f64 = 1e-9;

fn check_dense(env: &TorusEnvironment) -> Result<usize> {
    let sites = env.geometry().sites();
    if sites > DENSE_LIMIT {
        return Err(CoreError::GeometryTooLarge {
            sites,
            limit: DENSE_LIMIT,
        });
    }
    Ok(sites)
}

/// Materialize a scalar-field operator by applying it to basis vectors.
fn matrix_of(
    n: usize,
    geometry: crate::geometry::TorusGeometry,
    mut op: impl FnMut(&ScalarField) -> ScalarField,
) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let mut basis = vec![0.0; n];
    for j in 0..n {
        basis[j] = 1.0;
        let col = op(&ScalarField::from_values(geometry, basis.clone()));
        for i in 0..n {
            m[(i, j)] = col.values[i];
        }
        basis[j] = 0.0;
    }
    m
}

/// Dense generator matrix: (L f)(x) = sum_y `L[x][y]` f(y).
pub fn generator_matrix(env: &TorusEnvironment) -> Result<DMatrix<f64>> {
    let n = check_dense(env)?;
    let ctx = OperatorContext::new(env);
    Ok(matrix_of(n, env.geometry(), |f| ctx.generator(f)))
}

/// Direct solve of L chi = phi on zero-mean fields via LU with a rank-one
/// mean penalty (it vanishes on the zero-mean subspace and makes the
/// matrix invertible).
pub fn solve_dense(env: &TorusEnvironment, phi: &ScalarField) -> Result<ScalarField> {
    let n = check_dense(env)?;
    let mut m = generator_matrix(env)?;
    let penalty = 1.0 / n as f64;
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] += penalty;
        }
    }
    let rhs = DVector::from_column_slice(&phi.values);
    let lu = m.lu();
    let sol = lu
        .solve(&rhs)
        .ok_or_else(|| CoreError::Internal("singular dense generator system".into()))?;
    let mut chi = ScalarField::from_values(env.geometry(), sol.iter().copied().collect());
    chi.subtract_mean();
    Ok(chi)
}

/// Dense toolbox holding the spectral pieces of the operator-calculus solve.
pub struct DenseOperators<'a> {
    ctx: OperatorContext<'a>,
    n: usize,
    /// |Delta|^{1/2} (spectral, kernel annihilated).
    abs_lap_sqrt: DMatrix<f64>,
    /// S^{-1/2} from the symmetric eigendecomposition.
    sym_inv_sqrt: DMatrix<f64>,
    /// Skew core C = S^{-1/2} A S^{-1/2}.
    skew_core: DMatrix<f64>,
    /// Smallest nonzero eigenvalue of S (spectral floor check input).
    pub sym_min_eig: f64,
}

/// Spectral function of a symmetric PSD matrix with kernel annihilation.
fn spectral_power(m: &DMatrix<f64>, alpha: f64) -> (DMatrix<f64>, f64) {
    let eigen = SymmetricEigen::new(m.clone());
    let max_eig = eigen.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let cut = KERNEL_REL_TOL * max_eig;
    let mut min_nonzero = f64::INFINITY;
    let mut powered = eigen.eigenvalues.clone();
    for v in powered.iter_mut() {
        if v.abs() <= cut {
            *v = 0.0;
        } else {
            min_nonzero = min_nonzero.min(*v);
            *v = v.powf(alpha);
        }
    }
    let diag = DMatrix::from_diagonal(&powered);
    (&eigen.eigenvectors * diag * eigen.eigenvectors.transpose(), min_nonzero)
}

impl<'a> DenseOperators<'a> {
    pub fn new(env: &'a TorusEnvironment) -> Result<Self> {
        let n = check_dense(env)?;
        let ctx = OperatorContext::new(env);
        let g = env.geometry();

        let abs_lap_sqrt = matrix_of(n, g, |f| ctx.abs_lap_pow(f, 0.5).expect("positive power"));

        let sym = matrix_of(n, g, |f| ctx.sym_part(f));
        // symmetrize against roundoff before the eigendecomposition
        let sym = (&sym + sym.transpose()) * 0.5;
        let (sym_inv_sqrt, sym_min_eig) = spectral_power(&sym, -0.5);

        // spectral floor: the dissipative part dominates half the ellipticity
        // floor times |Delta| on the zero-mean subspace
        let lap_min = ctx
            .abs_lap_symbol()
            .iter()
            .filter(|&&l| l > 0.0)
            .fold(f64::INFINITY, |a, &b| a.min(b));
        let floor = env.s_star() * lap_min / 2.0;
        if sym_min_eig < floor * (1.0 - 1e-8) {
            return Err(CoreError::Internal(format!(
                "dissipative part spectral floor violated: {sym_min_eig} < {floor}"
            )));
        }

        let skew = matrix_of(n, g, |f| ctx.flow_form(f));
        let skew_core = &sym_inv_sqrt * skew * &sym_inv_sqrt;

        Ok(Self {
            ctx,
            n,
            abs_lap_sqrt,
            sym_inv_sqrt,
            skew_core,
            sym_min_eig,
        })
    }

    pub fn skew_core(&self) -> &DMatrix<f64> {
        &self.skew_core
    }

    /// Largest entry of C + C^T; the finite shadow of skew-self-adjointness.
    pub fn skew_core_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in 0..self.n {
                worst = worst.max((self.skew_core[(i, j)] + self.skew_core[(j, i)]).abs());
            }
        }
        worst
    }
}

/// Which chain the operator-calculus solve uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalculusMode {
    /// Requires constant conductances; goes through the skew resolvent
    /// (I + (2/c) B)^{-1} with B = -|Delta|^{-1/2} A |Delta|^{-1/2}.
    Simplified,
    /// Full chain through S^{+-1/2} and (I - C)^{-1}.
    General,
}

/// Result of the operator-calculus corrector solve.
#[derive(Debug, Clone)]
pub struct CalculusSolution {
    /// The corrector potential: theta = grad chi solves the harmonic system.
    pub chi: ScalarField,
    /// The |Delta|^{1/2}-weighted unknown of the sandwich equation.
    pub chi_weighted: ScalarField,
    pub theta: GradientField,
    /// Max-norm defect of sum_k p_k theta_k = phi.
    pub residual: f64,
    pub mode: CalculusMode,
    /// ||C + C^T||_max in general mode, 0 in simplified mode.
    pub skew_core_defect: f64,
}

/// Max-norm defect of the harmonic system sum_k p_k theta_k = phi.
pub fn harmonic_residual(
    env: &TorusEnvironment,
    theta: &GradientField,
    phi: &ScalarField,
) -> f64 {
    let g = env.geometry();
    let mut worst = 0.0f64;
    for site in 0..g.sites() {
        let mut acc = 0.0;
        for dir in g.directions() {
            acc += env.rate(dir, site) * theta.comp(dir)[site];
        }
        worst = worst.max((acc - phi.values[site]).abs());
    }
    worst
}

/// Solve the harmonic-coordinate equation by explicit spectral calculus.
///
/// Only dense-feasible geometries are accepted. `phi` must be zero-mean.
pub fn operator_calculus_corrector(
    env: &TorusEnvironment,
    phi: &ScalarField,
    mode: CalculusMode,
) -> Result<CalculusSolution> {
    let n = check_dense(env)?;
    let mean = phi.mean();
    if !phi.zero_mean && mean.abs() > 1e-12 * phi.scale().max(1.0) {
        return Err(CoreError::NonZeroMean {
            op: "operator_calculus_corrector",
            mean,
        });
    }
    let g = env.geometry();
    let rhs = DVector::from_column_slice(&phi.values);

    match mode {
        CalculusMode::Simplified => {
            let c = env.validation().min_s;
            if env.validation().max_s - env.validation().min_s > 1e-12 {
                return Err(CoreError::MismatchedTarget(
                    "simplified mode requires constant conductances".into(),
                ));
            }
            let ctx = OperatorContext::new(env);
            // B = -|Delta|^{-1/2} A |Delta|^{-1/2}, built column by column
            let b = matrix_of(n, g, |f| {
                let mut f = f.clone();
                f.zero_mean = true; // the resolvent lives on the zero-mean subspace
                let inner = ctx.abs_lap_pow(&f, -0.5).expect("projected");
                let mid = ctx.flow_form(&inner);
                let mut out = ctx.abs_lap_pow(&mid, -0.5).expect("zero-mean");
                for v in out.values.iter_mut() {
                    *v = -*v;
                }
                out
            });
            let scale = 2.0 / c;
            let system = DMatrix::identity(n, n) + &b * scale;
            let mut half = ctx.abs_lap_pow(phi, -0.5)?;
            for v in half.values.iter_mut() {
                *v *= -scale;
            }
            let w = system
                .lu()
                .solve(&DVector::from_column_slice(&half.values))
                .ok_or_else(|| CoreError::Internal("skew resolvent solve failed".into()))?;
            let mut chi_weighted = ScalarField::from_values(g, w.iter().copied().collect());
            chi_weighted.subtract_mean();
            let chi = ctx.abs_lap_pow(&chi_weighted, -0.5)?;
            let theta = ctx.grad_full(&chi);
            let residual = harmonic_residual(env, &theta, phi);
            Ok(CalculusSolution {
                chi,
                chi_weighted,
                theta,
                residual,
                mode,
                skew_core_defect: 0.0,
            })
        }
        CalculusMode::General => {
            let dense = DenseOperators::new(env)?;
            // chi = -S^{-1/2} (I - C)^{-1} S^{-1/2} phi
            let inner = &dense.sym_inv_sqrt * &rhs;
            let system = DMatrix::identity(n, n) - &dense.skew_core;
            let solved = system
                .lu()
                .solve(&inner)
                .ok_or_else(|| CoreError::Internal("skew-core resolvent solve failed".into()))?;
            let chi_vec = -(&dense.sym_inv_sqrt * solved);
            let mut chi = ScalarField::from_values(g, chi_vec.iter().copied().collect());
            chi.subtract_mean();
            let weighted = &dense.abs_lap_sqrt * DVector::from_column_slice(&chi.values);
            let mut chi_weighted = ScalarField::from_values(g, weighted.iter().copied().collect());
            chi_weighted.zero_mean = true;
            let theta = dense.ctx.grad_full(&chi);
            let residual = harmonic_residual(env, &theta, phi);
            Ok(CalculusSolution {
                chi,
                chi_weighted,
                theta,
                residual,
                mode,
                skew_core_defect: dense.skew_core_defect(),
            })
        }
    }
}
