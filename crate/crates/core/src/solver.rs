//! Matrix-free Krylov solver for the non-symmetric generator system.
//!
//! Solves L chi = phi on zero-mean fields with restarted GMRES, right
//! preconditioned by the inverse of the constant-coefficient dissipative
//! operator applied through the FFT. Right preconditioning keeps the
//! reported residual the true one. The preconditioner is exact for flat
//! conductances with no flow, and the dissipative part of every admissible
//! environment is spectrally equivalent to it, so iteration counts stay
//! essentially geometry-independent.

use crate::dense::solve_dense;
use crate::environment::TorusEnvironment;
use crate::error::CoreError;
use crate::fft::{abs_lap_symbol, NdFft};
use crate::fields::ScalarField;
use crate::Result;

/// Preconditioner selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preconditioner {
    None,
    /// Inverse of mean(s) * |Delta|/2 through the FFT.
    FftLaplacian,
}

/// Options for [`solve_generator_system`].
#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Relative-residual target.
    pub tol: f64,
    /// Cap on Krylov iterations; default is 10 sqrt(N^d).
    pub max_iter: Option<usize>,
    /// Restart length.
    pub restart: usize,
    pub preconditioner: Preconditioner,
    pub initial_guess: Option<ScalarField>,
    /// Fall back to a dense LU when GMRES stagnates on a small torus.
    pub dense_failover: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: None,
            restart: 50,
            preconditioner: Preconditioner::FftLaplacian,
            initial_guess: None,
            dense_failover: true,
        }
    }
}

/// Convergence record of one solve.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SolveStats {
    pub iterations: usize,
    /// Final relative residual.
    pub residual: f64,
    pub converged: bool,
    pub used_dense_failover: bool,
}

struct GeneratorOp<'a> {
    env: &'a TorusEnvironment,
    neighbors: Vec<usize>,
}

impl<'a> GeneratorOp<'a> {
    fn new(env: &'a TorusEnvironment) -> Self {
        Self {
            env,
            neighbors: env.geometry().neighbor_table(),
        }
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let g = self.env.geometry();
        let nd = g.num_directions();
        for (site, out) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            let base = site * nd;
            for dir in g.directions() {
                let idx = dir.index();
                let rate = self.env.rate_comp(dir)[site];
                acc += rate * (x[self.neighbors[base + idx]] - x[site]);
            }
            *out = acc;
        }
    }
}

struct FftPreconditioner {
    fft: NdFft,
    /// Inverse symbol of mean(s) * |Delta|/2; zero at the zero mode.
    inv_symbol: Vec<f64>,
}

impl FftPreconditioner {
    fn new(env: &TorusEnvironment) -> Self {
        let g = env.geometry();
        let mean_s = {
            let mut acc = 0.0;
            let mut count = 0usize;
            for comp in env.s_edges() {
                acc += comp.iter().sum::<f64>();
                count += comp.len();
            }
            acc / count as f64
        };
        let inv_symbol = abs_lap_symbol(g)
            .iter()
            .map(|&l| if l == 0.0 { 0.0 } else { 1.0 / (mean_s * l / 2.0) })
            .collect();
        Self {
            fft: NdFft::new(g),
            inv_symbol,
        }
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let field = ScalarField::from_values(self.fft.geometry(), r.to_vec());
        let out = self.fft.apply_multiplier(&field, &self.inv_symbol);
        z.copy_from_slice(&out.values);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn residual_norm(op: &GeneratorOp, x: &[f64], b: &[f64]) -> f64 {
    let mut lx = vec![0.0; b.len()];
    op.apply(x, &mut lx);
    b.iter()
        .zip(&lx)
        .map(|(bi, li)| (bi - li) * (bi - li))
        .sum::<f64>()
        .sqrt()
}

/// Solve L chi = phi for a zero-mean chi with restarted, right-preconditioned
/// GMRES. `phi` must be zero-mean; the returned field is gauge-fixed to zero
/// torus mean.
pub fn solve_generator_system(
    env: &TorusEnvironment,
    phi: &ScalarField,
    opts: &SolveOptions,
) -> Result<(ScalarField, SolveStats)> {
    let g = env.geometry();
    let n = g.sites();
    if phi.values.len() != n {
        return Err(CoreError::Precondition("rhs does not match geometry".into()));
    }
    let mean = phi.mean();
    if !phi.zero_mean && mean.abs() > 1e-12 * phi.scale().max(1.0) {
        return Err(CoreError::NonZeroMean {
            op: "solve_generator_system",
            mean,
        });
    }
    let op = GeneratorOp::new(env);
    let precond = match opts.preconditioner {
        Preconditioner::FftLaplacian => Some(FftPreconditioner::new(env)),
        Preconditioner::None => None,
    };
    let max_iter = opts
        .max_iter
        .unwrap_or_else(|| (10.0 * (n as f64).sqrt()).ceil() as usize);

    let b = &phi.values;
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok((
            ScalarField::zeros(g),
            SolveStats {
                iterations: 0,
                residual: 0.0,
                converged: true,
                used_dense_failover: false,
            },
        ));
    }

    let mut x = match &opts.initial_guess {
        Some(f) => f.values.clone(),
        None => vec![0.0; n],
    };
    let mut total_iter = 0usize;

    while total_iter < max_iter {
        // true residual r = b - L x
        let mut lx = vec![0.0; n];
        op.apply(&x, &mut lx);
        let mut r: Vec<f64> = b.iter().zip(&lx).map(|(bi, li)| bi - li).collect();
        let r_norm = norm(&r);
        if r_norm / b_norm < opts.tol {
            break;
        }

        // Arnoldi with modified Gram-Schmidt and Givens rotations
        let m = opts.restart.min(n);
        let mut v: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        let mut z: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut hess = vec![vec![0.0; m + 1]; m];
        let inv = 1.0 / r_norm;
        for ri in r.iter_mut() {
            *ri *= inv;
        }
        v.push(r);
        let mut gvec = vec![0.0; m + 1];
        gvec[0] = r_norm;
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];

        let mut k = 0;
        while k < m && total_iter < max_iter {
            total_iter += 1;

            // z_k = M^{-1} v_k, w = L z_k
            let zk = match &precond {
                Some(p) => {
                    let mut buf = vec![0.0; n];
                    p.apply(&v[k], &mut buf);
                    buf
                }
                None => v[k].clone(),
            };
            let mut w = vec![0.0; n];
            op.apply(&zk, &mut w);
            z.push(zk);

            for j in 0..=k {
                let hij = dot(&v[j], &w);
                hess[k][j] = hij;
                for (wi, vj) in w.iter_mut().zip(&v[j]) {
                    *wi -= hij * vj;
                }
            }
            let w_norm = norm(&w);
            hess[k][k + 1] = w_norm;
            if w_norm < 1e-300 {
                k += 1;
                break; // invariant subspace reached
            }
            let invw = 1.0 / w_norm;
            v.push(w.iter().map(|wi| wi * invw).collect());

            for j in 0..k {
                let t = cs[j] * hess[k][j] + sn[j] * hess[k][j + 1];
                hess[k][j + 1] = -sn[j] * hess[k][j] + cs[j] * hess[k][j + 1];
                hess[k][j] = t;
            }
            let (c, s) = givens(hess[k][k], hess[k][k + 1]);
            cs[k] = c;
            sn[k] = s;
            hess[k][k] = c * hess[k][k] + s * hess[k][k + 1];
            hess[k][k + 1] = 0.0;
            let t = c * gvec[k] + s * gvec[k + 1];
            gvec[k + 1] = -s * gvec[k] + c * gvec[k + 1];
            gvec[k] = t;

            k += 1;
            if gvec[k].abs() / b_norm < opts.tol {
                break;
            }
        }

        // back substitution, then update along the preconditioned directions
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut sum = gvec[i];
            for j in (i + 1)..k {
                sum -= hess[j][i] * y[j];
            }
            if hess[i][i].abs() > 1e-300 {
                y[i] = sum / hess[i][i];
            }
        }
        for i in 0..k {
            for (xj, zj) in x.iter_mut().zip(&z[i]) {
                *xj += y[i] * zj;
            }
        }
    }

    let rel = residual_norm(&op, &x, b) / b_norm;
    if rel < opts.tol {
        let mut chi = ScalarField::from_values(g, x);
        chi.subtract_mean();
        return Ok((
            chi,
            SolveStats {
                iterations: total_iter,
                residual: rel,
                converged: true,
                used_dense_failover: false,
            },
        ));
    }

    // stagnation: dense failover on small tori
    if opts.dense_failover && n <= crate::dense::DENSE_LIMIT {
        let chi = solve_dense(env, phi)?;
        let rel = residual_norm(&op, &chi.values, b) / b_norm;
        return Ok((
            chi,
            SolveStats {
                iterations: total_iter,
                residual: rel,
                converged: rel < opts.tol.max(1e-9),
                used_dense_failover: true,
            },
        ));
    }

    Err(CoreError::NonConvergence {
        residual: rel,
        iterations: total_iter,
        tol: opts.tol,
    })
}

fn givens(a: f64, b: f64) -> (f64, f64) {
    if b.abs() < 1e-300 {
        (1.0, 0.0)
    } else {
        let r = (a * a + b * b).sqrt();
        (a / r, b / r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{EnvironmentSpec, RescalePolicy, TorusEnvironment};
    use crate::operators::{random_zero_mean_field, OperatorContext};
    use crate::rng::stream_rng;
    use crate::stream::FieldLaw;

    fn random_env(n: usize, seed: u64) -> TorusEnvironment {
        TorusEnvironment::generate(&EnvironmentSpec {
            d: 2,
            n,
            seed,
            s: FieldLaw::IidUniform { lo: 1.0, hi: 2.0 },
            h: FieldLaw::IidUniform { lo: -1.0, hi: 1.0 },
            rescale: RescalePolicy::ShrinkH { margin: 0.1 },
            eps: 1.0,
        })
        .unwrap()
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let env = random_env(8, 1);
        let phi = ScalarField::zeros(env.geometry());
        let (chi, stats) = solve_generator_system(&env, &phi, &SolveOptions::default()).unwrap();
        assert!(stats.converged);
        assert_eq!(stats.iterations, 0);
        assert!(chi.scale() == 0.0);
    }

    #[test]
    fn control_case_converges_in_one_iteration() {
        // exact preconditioner: flat conductances, no flow
        let env = TorusEnvironment::generate(&EnvironmentSpec {
            d: 2,
            n: 16,
            seed: 0,
            s: FieldLaw::Constant { value: 1.0 },
            h: FieldLaw::Constant { value: 0.0 },
            rescale: RescalePolicy::Reject,
            eps: 1.0,
        })
        .unwrap();
        let mut rng = stream_rng(5, 0);
        let phi = random_zero_mean_field(env.geometry(), &mut rng);
        let (chi, stats) = solve_generator_system(&env, &phi, &SolveOptions::default()).unwrap();
        assert!(stats.converged);
        assert!(stats.iterations <= 2, "iterations {}", stats.iterations);
        let ctx = OperatorContext::new(&env);
        let mut res = ctx.generator(&chi);
        res.axpy(-1.0, &phi);
        assert!(res.scale() < 1e-9);
    }

    #[test]
    fn matches_dense_lu_on_random_environments() {
        for seed in [3u64, 7, 11] {
            let env = random_env(6, seed);
            let mut rng = stream_rng(seed, 9);
            let phi = random_zero_mean_field(env.geometry(), &mut rng);
            let opts = SolveOptions {
                tol: 1e-12,
                ..SolveOptions::default()
            };
            let (chi, stats) = solve_generator_system(&env, &phi, &opts).unwrap();
            assert!(stats.converged, "{stats:?}");
            assert!(!stats.used_dense_failover);
            let direct = crate::dense::solve_dense(&env, &phi).unwrap();
            let mut diff = chi.clone();
            diff.axpy(-1.0, &direct);
            assert!(diff.scale() < 1e-10, "seed {seed}: {}", diff.scale());
        }
    }

    #[test]
    fn initial_guess_does_not_change_the_solution() {
        let env = random_env(8, 13);
        let mut rng = stream_rng(17, 0);
        let phi = random_zero_mean_field(env.geometry(), &mut rng);
        let opts = SolveOptions {
            tol: 1e-12,
            ..SolveOptions::default()
        };
        let (a, _) = solve_generator_system(&env, &phi, &opts).unwrap();
        let guess = random_zero_mean_field(env.geometry(), &mut rng);
        let opts2 = SolveOptions {
            initial_guess: Some(guess),
            tol: 1e-12,
            ..SolveOptions::default()
        };
        let (b, _) = solve_generator_system(&env, &phi, &opts2).unwrap();
        let mut diff = a.clone();
        diff.axpy(-1.0, &b);
        assert!(diff.scale() < 1e-10, "{}", diff.scale());
    }

    #[test]
    fn reports_non_convergence_without_failover() {
        let env = random_env(8, 19);
        let mut rng = stream_rng(23, 0);
        let phi = random_zero_mean_field(env.geometry(), &mut rng);
        let opts = SolveOptions {
            tol: 1e-14,
            max_iter: Some(1),
            restart: 1,
            preconditioner: Preconditioner::None,
            initial_guess: None,
            dense_failover: false,
        };
        match solve_generator_system(&env, &phi, &opts) {
            Err(CoreError::NonConvergence { iterations, .. }) => assert!(iterations >= 1),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn failover_recovers_on_small_torus() {
        let env = random_env(4, 29);
        let mut rng = stream_rng(31, 0);
        let phi = random_zero_mean_field(env.geometry(), &mut rng);
        let opts = SolveOptions {
            tol: 1e-10,
            max_iter: Some(1),
            restart: 1,
            preconditioner: Preconditioner::None,
            initial_guess: None,
            dense_failover: true,
        };
        let (chi, stats) = solve_generator_system(&env, &phi, &opts).unwrap();
        assert!(stats.used_dense_failover);
        let ctx = OperatorContext::new(&env);
        let mut res = ctx.generator(&chi);
        res.axpy(-1.0, &phi);
        assert!(res.scale() < 1e-9);
    }
}
