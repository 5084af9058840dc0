//! Linear operators on torus fields.
//!
//! Shifts, gradients and the lattice Laplacian are stencils; fractional
//! powers of |Delta| act through the FFT with the zero mode annihilated,
//! matching the zero-mean subspace on which the negative powers live.
//!
//! The environment-bound operators decompose the generator of the
//! environment process: with the working normalization s_* = 1,
//!
//!   L = Delta/2 - T + A,  Delta := 2 sum_k (shift_k - I),
//!   T := -sum_k N_k grad_k (symmetric, >= 0),  N_k := (s_k - 1) *,
//!   A :=  sum_k M_k grad_k (skew),             M_k := v_k *,
//!
//! and L f(x) = sum_k p_k(x) (f(x+k) - f(x)) holds exactly. S := -Delta/2 + T
//! is the dissipative part; its quadratic form is pinched between the
//! |Delta| form times the ellipticity floor and times the rate ceiling.

use rand::Rng;

use crate::environment::TorusEnvironment;
use crate::error::CoreError;
use crate::fft::{abs_lap_symbol, NdFft};
use crate::fields::{FieldValue, GradientField, ScalarField, ZERO_MEAN_TOL};
use crate::geometry::Direction;
use crate::rng::stream_rng;
use crate::Result;

/// Tag naming one operator; the generic entry point of [`OperatorContext::apply`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OperatorHandle {
    /// f(x) -> f(x + k)
    Shift(Direction),
    /// grad_k = shift_k - I
    Grad(Direction),
    /// Delta = 2 sum_k grad_k
    Lap,
    /// |Delta|^alpha through the FFT; annihilates the zero mode.
    AbsLapPow(f64),
    /// Riesz component |Delta|^{-1/2} grad_k.
    Riesz(Direction),
    /// Multiplication by the conductance excess s_k - 1.
    CondMul(Direction),
    /// Multiplication by the flow component v_k.
    FlowMul(Direction),
    /// T = -sum_k CondMul_k grad_k; symmetric nonnegative.
    CondForm,
    /// A = sum_k FlowMul_k grad_k; skew.
    FlowForm,
    /// S = -Delta/2 + T; the dissipative part.
    SymPart,
    /// L = Delta/2 - T + A; the full generator.
    Generator,
    /// f -> (grad_k f)_k, a gradient field.
    GradFull,
    /// f -> (Riesz_k f)_k, a gradient field.
    RieszFull,
    /// g -> sum_k grad_{-k} g_k.
    GradAdj,
    /// g -> sum_k Riesz_{-k} g_k.
    RieszAdj,
}

/// Environment-bound operator toolbox with a cached FFT plan.
#[derive(Debug)]
pub struct OperatorContext<'a> {
    env: &'a TorusEnvironment,
    fft: NdFft,
    abs_lap: Vec<f64>,
}

impl<'a> OperatorContext<'a> {
    pub fn new(env: &'a TorusEnvironment) -> Self {
        let geometry = env.geometry();
        Self {
            env,
            fft: NdFft::new(geometry),
            abs_lap: abs_lap_symbol(geometry),
        }
    }

    pub fn env(&self) -> &TorusEnvironment {
        self.env
    }

    pub fn fft(&self) -> &NdFft {
        &self.fft
    }

    /// Fourier symbol of |Delta| on the dual torus.
    pub fn abs_lap_symbol(&self) -> &[f64] {
        &self.abs_lap
    }

    fn require_zero_mean(&self, f: &ScalarField, op: &'static str) -> Result<()> {
        let mean = f.mean();
        if !f.zero_mean && mean.abs() > ZERO_MEAN_TOL * f.scale().max(1.0) {
            return Err(CoreError::NonZeroMean { op, mean });
        }
        Ok(())
    }

    pub fn shift(&self, f: &ScalarField, dir: Direction) -> ScalarField {
        let g = f.geometry;
        let values = (0..g.sites()).map(|x| f.values[g.neighbor(x, dir)]).collect();
        ScalarField::from_values(g, values)
    }

    pub fn grad_dir(&self, f: &ScalarField, dir: Direction) -> ScalarField {
        let g = f.geometry;
        let values = (0..g.sites())
            .map(|x| f.values[g.neighbor(x, dir)] - f.values[x])
            .collect();
        let mut out = ScalarField::from_values(g, values);
        out.zero_mean = true; // differences telescope on the torus
        out
    }

    /// Delta f(x) = 2 sum_k (f(x+k) - f(x)).
    pub fn lap(&self, f: &ScalarField) -> ScalarField {
        let g = f.geometry;
        let values = (0..g.sites())
            .map(|x| {
                let mut acc = 0.0;
                for dir in g.directions() {
                    acc += f.values[g.neighbor(x, dir)] - f.values[x];
                }
                2.0 * acc
            })
            .collect();
        let mut out = ScalarField::from_values(g, values);
        out.zero_mean = true;
        out
    }

    /// |Delta|^alpha f through the FFT; the zero mode is set to zero.
    pub fn abs_lap_pow(&self, f: &ScalarField, alpha: f64) -> Result<ScalarField> {
        if alpha < 0.0 {
            self.require_zero_mean(f, "abs_lap_pow")?;
        }
        let multiplier: Vec<f64> = self
            .abs_lap
            .iter()
            .map(|&l| if l == 0.0 { 0.0 } else { l.powf(alpha) })
            .collect();
        let mut out = self.fft.apply_multiplier(f, &multiplier);
        out.zero_mean = true;
        Ok(out)
    }

    /// Riesz component |Delta|^{-1/2} grad_k f.
    pub fn riesz_dir(&self, f: &ScalarField, dir: Direction) -> Result<ScalarField> {
        self.require_zero_mean(f, "riesz")?;
        let grad = self.grad_dir(f, dir);
        self.abs_lap_pow(&grad, -0.5)
    }

    /// Multiplication by the conductance excess (s_k - 1).
    pub fn cond_mul(&self, f: &ScalarField, dir: Direction) -> ScalarField {
        let g = f.geometry;
        let values = (0..g.sites())
            .map(|x| (self.env.s(dir, x) - self.env.s_star()) * f.values[x])
            .collect();
        ScalarField::from_values(g, values)
    }

    /// Multiplication by the flow component v_k.
    pub fn flow_mul(&self, f: &ScalarField, dir: Direction) -> ScalarField {
        let g = f.geometry;
        let values = (0..g.sites())
            .map(|x| self.env.v(dir, x) * f.values[x])
            .collect();
        ScalarField::from_values(g, values)
    }

    /// T f(x) = -sum_k (s_k(x) - 1)(f(x+k) - f(x)).
    pub fn cond_form(&self, f: &ScalarField) -> ScalarField {
        let g = f.geometry;
        let s_star = self.env.s_star();
        let values = (0..g.sites())
            .map(|x| {
                let mut acc = 0.0;
                for dir in g.directions() {
                    acc -= (self.env.s(dir, x) - s_star)
                        * (f.values[g.neighbor(x, dir)] - f.values[x]);
                }
                acc
            })
            .collect();
        let mut out = ScalarField::from_values(g, values);
        out.zero_mean = true;
        out
    }

    /// A f(x) = sum_k v_k(x)(f(x+k) - f(x)).
    pub fn flow_form(&self, f: &ScalarField) -> ScalarField {
        let g = f.geometry;
        let values = (0..g.sites())
            .map(|x| {
                let mut acc = 0.0;
                for dir in g.directions() {
                    acc += self.env.v(dir, x) * (f.values[g.neighbor(x, dir)] - f.values[x]);
                }
                acc
            })
            .collect();
        let mut out = ScalarField::from_values(g, values);
        out.zero_mean = true;
        out
    }

    /// S f(x) = -sum_k s_k(x)(f(x+k) - f(x)); equals -Delta/2 + T.
    pub fn sym_part(&self, f: &ScalarField) -> ScalarField {
        let g = f.geometry;
        let values = (0..g.sites())
            .map(|x| {
                let mut acc = 0.0;
                for dir in g.directions() {
                    acc -= self.env.s(dir, x) * (f.values[g.neighbor(x, dir)] - f.values[x]);
                }
                acc
            })
            .collect();
        let mut out = ScalarField::from_values(g, values);
        out.zero_mean = true;
        out
    }

    /// L f(x) = sum_k p_k(x)(f(x+k) - f(x)).
    pub fn generator(&self, f: &ScalarField) -> ScalarField {
        let g = f.geometry;
        let values = (0..g.sites())
            .map(|x| {
                let mut acc = 0.0;
                for dir in g.directions() {
                    acc += self.env.rate(dir, x) * (f.values[g.neighbor(x, dir)] - f.values[x]);
                }
                acc
            })
            .collect();
        let mut out = ScalarField::from_values(g, values);
        out.zero_mean = true;
        out
    }

    pub fn grad_full(&self, f: &ScalarField) -> GradientField {
        let mut out = GradientField::zeros(f.geometry);
        for dir in f.geometry.directions() {
            out.comps[dir.index()] = self.grad_dir(f, dir).values;
        }
        out
    }

    pub fn riesz_full(&self, f: &ScalarField) -> Result<GradientField> {
        self.require_zero_mean(f, "riesz")?;
        let half_inv = self.abs_lap_pow(f, -0.5)?;
        Ok(self.grad_full(&half_inv))
    }

    /// grad* g = sum_k grad_{-k} g_k.
    pub fn grad_adj(&self, g: &GradientField) -> ScalarField {
        let geo = g.geometry;
        let values = (0..geo.sites())
            .map(|x| {
                let mut acc = 0.0;
                for dir in geo.directions() {
                    let comp = g.comp(dir);
                    acc += comp[geo.neighbor(x, dir.flip())] - comp[x];
                }
                acc
            })
            .collect();
        let mut out = ScalarField::from_values(geo, values);
        out.zero_mean = true;
        out
    }

    /// Riesz* g = |Delta|^{-1/2} grad* g.
    pub fn riesz_adj(&self, g: &GradientField) -> Result<ScalarField> {
        let div = self.grad_adj(g);
        self.abs_lap_pow(&div, -0.5)
    }

    /// Generic application; scalar operators reject gradient inputs and
    /// vice versa.
    pub fn apply(&self, op: OperatorHandle, value: FieldValue) -> Result<FieldValue> {
        use OperatorHandle::*;
        match (op, value) {
            (Shift(k), FieldValue::Scalar(f)) => Ok(FieldValue::Scalar(self.shift(&f, k))),
            (Grad(k), FieldValue::Scalar(f)) => Ok(FieldValue::Scalar(self.grad_dir(&f, k))),
            (Lap, FieldValue::Scalar(f)) => Ok(FieldValue::Scalar(self.lap(&f))),
            (AbsLapPow(a), FieldValue::Scalar(f)) => {
                Ok(FieldValue::Scalar(self.abs_lap_pow(&f, a)?))
            }
            (Riesz(k), FieldValue::Scalar(f)) => Ok(FieldValue::Scalar(self.riesz_dir(&f, k)?)),
            (CondMul(k), FieldValue::Scalar(f)) => Ok(FieldValue::Scalar(self.cond_mul(&f, k))),
            (FlowMul(k), FieldValue::Scalar(f)) => Ok(FieldValue::Scalar(self.flow_mul(&f, k))),
            (CondForm, FieldValue::Scalar(f)) => Ok(FieldValue::Scalar(self.cond_form(&f))),
            (FlowForm, FieldValue::Scalar(f)) => Ok(FieldValue::Scalar(self.flow_form(&f))),
            (SymPart, FieldValue::Scalar(f)) => Ok(FieldValue::Scalar(self.sym_part(&f))),
            (Generator, FieldValue::Scalar(f)) => Ok(FieldValue::Scalar(self.generator(&f))),
            (GradFull, FieldValue::Scalar(f)) => Ok(FieldValue::Gradient(self.grad_full(&f))),
            (RieszFull, FieldValue::Scalar(f)) => Ok(FieldValue::Gradient(self.riesz_full(&f)?)),
            (GradAdj, FieldValue::Gradient(g)) => Ok(FieldValue::Scalar(self.grad_adj(&g))),
            (RieszAdj, FieldValue::Gradient(g)) => Ok(FieldValue::Scalar(self.riesz_adj(&g)?)),
            (op, _) => Err(CoreError::Precondition(format!(
                "operator {op:?} applied to the wrong field kind"
            ))),
        }
    }
}

/// Random zero-mean field with independent standard Gaussian entries.
pub fn random_zero_mean_field(
    geometry: crate::geometry::TorusGeometry,
    rng: &mut impl Rng,
) -> ScalarField {
    let values: Vec<f64> = (0..geometry.sites())
        .map(|_| {
            let u: f64 = rng.gen::<f64>();
            let v: f64 = rng.gen::<f64>();
            (-2.0 * u.max(1e-300).ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
        })
        .collect();
    let mut f = ScalarField::from_values(geometry, values);
    f.subtract_mean();
    f
}

/// Worst defects of the exact operator identities over random fields.
#[derive(Debug, Clone)]
pub struct IdentityReport {
    pub trials: usize,
    /// || grad* grad f + Delta f ||
    pub grad_adj_grad: f64,
    /// || Riesz* Riesz f - f ||
    pub riesz_isometry: f64,
    /// || Riesz Riesz* g - g || for gradient-space g
    pub riesz_coisometry: f64,
    /// most negative <T f, f> seen (nonnegativity defect)
    pub cond_form_negativity: f64,
    /// max |<A f, f>| (skewness defect)
    pub flow_skewness: f64,
    /// most negative 2<S f, f> - s_* <|Delta| f, f> (lower Rayleigh margin)
    pub sandwich_lower: f64,
    /// most negative s^* <|Delta| f, f> - 2 <S f, f> (upper Rayleigh margin)
    pub sandwich_upper: f64,
    /// max |<L f, f> + <S f, f>|
    pub generator_form: f64,
    /// worst disagreement between the three equivalent expressions for T
    pub cond_form_variants: f64,
    /// worst disagreement between the two equivalent expressions for A
    pub flow_form_variants: f64,
    pub tol: f64,
}

impl IdentityReport {
    pub fn pass(&self) -> bool {
        self.max_defect() <= self.tol
    }

    pub fn max_defect(&self) -> f64 {
        [
            self.grad_adj_grad,
            self.riesz_isometry,
            self.riesz_coisometry,
            self.cond_form_negativity,
            self.flow_skewness,
            self.sandwich_lower,
            self.sandwich_upper,
            self.generator_form,
            self.cond_form_variants,
            self.flow_form_variants,
        ]
        .into_iter()
        .fold(0.0f64, f64::max)
    }
}

/// Check the operator identities on `trials` random zero-mean fields.
pub fn verify_identities(
    env: &TorusEnvironment,
    trials: usize,
    tol: f64,
    seed: u64,
) -> Result<IdentityReport> {
    let ctx = OperatorContext::new(env);
    let g = env.geometry();
    let mut rng = stream_rng(seed, 2);
    let mut report = IdentityReport {
        trials,
        grad_adj_grad: 0.0,
        riesz_isometry: 0.0,
        riesz_coisometry: 0.0,
        cond_form_negativity: 0.0,
        flow_skewness: 0.0,
        sandwich_lower: 0.0,
        sandwich_upper: 0.0,
        generator_form: 0.0,
        cond_form_variants: 0.0,
        flow_form_variants: 0.0,
        tol,
    };
    for _ in 0..trials {
        let f = random_zero_mean_field(g, &mut rng);

        // grad* grad = -Delta
        let grad = ctx.grad_full(&f);
        let mut gag = ctx.grad_adj(&grad);
        let lap = ctx.lap(&f);
        gag.axpy(1.0, &lap);
        report.grad_adj_grad = report.grad_adj_grad.max(gag.norm());

        // Riesz is an isometric isomorphism onto the gradient space
        let riesz = ctx.riesz_full(&f)?;
        let mut rr = ctx.riesz_adj(&riesz)?;
        rr.axpy(-1.0, &f);
        report.riesz_isometry = report.riesz_isometry.max(rr.norm());

        // and a co-isometry on gradient fields
        let back = ctx.riesz_adj(&grad)?;
        let wrapped = ctx.riesz_full(&back)?;
        let mut defect2 = 0.0;
        for (a, b) in wrapped.comps.iter().zip(&grad.comps) {
            defect2 += a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        }
        let defect = (defect2 / g.sites() as f64).sqrt();
        report.riesz_coisometry = report.riesz_coisometry.max(defect);

        // quadratic forms
        let tf = ctx.cond_form(&f);
        let af = ctx.flow_form(&f);
        let sf = ctx.sym_part(&f);
        let lf = ctx.generator(&f);
        let t_quad = tf.dot(&f);
        let a_quad = af.dot(&f);
        let s_quad = sf.dot(&f);
        let l_quad = lf.dot(&f);
        let abs_lap_quad = -lap.dot(&f);

        report.cond_form_negativity = report.cond_form_negativity.max((-t_quad).max(0.0));
        report.flow_skewness = report.flow_skewness.max(a_quad.abs());
        report.sandwich_lower = report
            .sandwich_lower
            .max((env.s_star() * abs_lap_quad - 2.0 * s_quad).max(0.0));
        report.sandwich_upper = report
            .sandwich_upper
            .max((2.0 * s_quad - env.s_upper() * abs_lap_quad).max(0.0));
        report.generator_form = report.generator_form.max((l_quad + s_quad).abs());

        // the stencil variants of T and A agree everywhere
        let t_left = apply_cond_left(&ctx, &f);
        let t_sandwich = apply_cond_sandwich(&ctx, &f);
        report.cond_form_variants = report
            .cond_form_variants
            .max(max_abs_diff(&tf.values, &t_left.values))
            .max(max_abs_diff(&tf.values, &t_sandwich.values));
        let a_left = apply_flow_left(&ctx, &f);
        report.flow_form_variants = report
            .flow_form_variants
            .max(max_abs_diff(&af.values, &a_left.values));
    }
    Ok(report)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f64, f64::max)
}

/// T written as -sum_k grad_{-k} CondMul_k.
fn apply_cond_left(ctx: &OperatorContext, f: &ScalarField) -> ScalarField {
    let g = f.geometry;
    let mut acc = ScalarField::zeros(g);
    for dir in g.directions() {
        let nf = ctx.cond_mul(f, dir);
        let shifted = ctx.grad_dir(&nf, dir.flip());
        acc.axpy(-1.0, &shifted);
    }
    acc
}

/// T written as (1/2) sum_k grad_{-k} CondMul_k grad_k.
fn apply_cond_sandwich(ctx: &OperatorContext, f: &ScalarField) -> ScalarField {
    let g = f.geometry;
    let mut acc = ScalarField::zeros(g);
    for dir in g.directions() {
        let inner = ctx.grad_dir(f, dir);
        let ninner = ctx.cond_mul(&inner, dir);
        let outer = ctx.grad_dir(&ninner, dir.flip());
        acc.axpy(0.5, &outer);
    }
    acc
}

/// A written as -sum_k grad_{-k} FlowMul_k.
fn apply_flow_left(ctx: &OperatorContext, f: &ScalarField) -> ScalarField {
    let g = f.geometry;
    let mut acc = ScalarField::zeros(g);
    for dir in g.directions() {
        let mf = ctx.flow_mul(f, dir);
        let shifted = ctx.grad_dir(&mf, dir.flip());
        acc.axpy(-1.0, &shifted);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{
        assemble_environment, EnvironmentSpec, RescalePolicy, TorusEnvironment,
    };
    use crate::geometry::TorusGeometry;
    use crate::stream::{FieldLaw, StreamTensor};

    fn control_env(n: usize) -> TorusEnvironment {
        let g = TorusGeometry::new(2, n).unwrap();
        let h = StreamTensor::zero(g, 1.0).unwrap();
        assemble_environment(&FieldLaw::Constant { value: 1.0 }, h, RescalePolicy::Reject, 0)
            .unwrap()
    }

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
    fn gradient_of_constant_vanishes() {
        let env = control_env(4);
        let ctx = OperatorContext::new(&env);
        let f = ScalarField::from_values(env.geometry(), vec![3.5; 16]);
        for dir in env.geometry().directions() {
            assert!(ctx.grad_dir(&f, dir).values.iter().all(|&v| v == 0.0));
        }
        assert!(ctx.lap(&f).values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn laplacian_stencil_on_point_mass() {
        // 2 sum_k (delta(x+k) - delta(x)): -2 * 2d at the origin, +2 at each
        // of the 2d neighbours, computed here with an independent loop
        let env = control_env(4);
        let g = env.geometry();
        let ctx = OperatorContext::new(&env);
        let mut delta = vec![0.0; g.sites()];
        delta[0] = 1.0;
        let f = ScalarField::from_values(g, delta.clone());
        let lap = ctx.lap(&f);
        for site in 0..g.sites() {
            let mut expected = 0.0;
            for dir in g.directions() {
                expected += 2.0 * (delta[g.neighbor(site, dir)] - delta[site]);
            }
            assert_eq!(lap.values[site], expected);
        }
        assert_eq!(lap.values[0], -8.0);
        for dir in g.directions() {
            assert_eq!(lap.values[g.neighbor(0, dir)], 2.0);
        }
        // mean removal does not change the image
        let mut centered = f.clone();
        centered.subtract_mean();
        let lap2 = ctx.lap(&centered);
        for (a, b) in lap.values.iter().zip(&lap2.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn riesz_isometry_on_random_fields() {
        let env = random_env(8, 7);
        let ctx = OperatorContext::new(&env);
        let mut rng = stream_rng(1, 0);
        for _ in 0..10 {
            let f = random_zero_mean_field(env.geometry(), &mut rng);
            let riesz = ctx.riesz_full(&f).unwrap();
            let mut round = ctx.riesz_adj(&riesz).unwrap();
            round.axpy(-1.0, &f);
            assert!(round.norm() < 1e-10, "defect {}", round.norm());
        }
    }

    #[test]
    fn rejects_non_zero_mean_input_to_negative_powers() {
        let env = control_env(4);
        let ctx = OperatorContext::new(&env);
        let f = ScalarField::from_values(env.geometry(), (0..16).map(|i| i as f64).collect());
        assert!(matches!(
            ctx.abs_lap_pow(&f, -0.5),
            Err(CoreError::NonZeroMean { .. })
        ));
        assert!(ctx.abs_lap_pow(&f, 0.5).is_ok());
        assert!(matches!(
            ctx.riesz_dir(&f, Direction::new(0, true)),
            Err(CoreError::NonZeroMean { .. })
        ));
    }

    #[test]
    fn control_environment_identities_are_exact() {
        // with unit conductances and no flow: T = 0, A = 0, L = Delta/2
        let env = control_env(8);
        let ctx = OperatorContext::new(&env);
        let mut rng = stream_rng(2, 0);
        let f = random_zero_mean_field(env.geometry(), &mut rng);
        assert!(ctx.cond_form(&f).norm() < 1e-14);
        assert!(ctx.flow_form(&f).norm() < 1e-14);
        let mut l = ctx.generator(&f);
        let lap = ctx.lap(&f);
        l.axpy(-0.5, &lap);
        assert!(l.norm() < 1e-13);
        let report = verify_identities(&env, 20, 1e-12, 3).unwrap();
        assert!(report.pass(), "{report:?}");
    }

    #[test]
    fn random_environment_identities() {
        let env = random_env(8, 7);
        let report = verify_identities(&env, 50, 1e-10, 3).unwrap();
        assert!(report.pass(), "{report:?}");
    }

    #[test]
    fn rayleigh_sandwich_with_wide_conductances() {
        let env = random_env(8, 11);
        let report = verify_identities(&env, 100, 1e-10, 5).unwrap();
        assert!(report.sandwich_lower <= 1e-10, "{report:?}");
        assert!(report.sandwich_upper <= 1e-10, "{report:?}");
    }

    #[test]
    fn generator_is_rate_weighted_difference() {
        // L f(x) = sum_k p_k(x)(f(x+k) - f(x)) written out independently
        let env = random_env(6, 4);
        let g = env.geometry();
        let ctx = OperatorContext::new(&env);
        let mut rng = stream_rng(9, 0);
        let f = random_zero_mean_field(g, &mut rng);
        let lf = ctx.generator(&f);
        for site in 0..g.sites() {
            let mut acc = 0.0;
            for dir in g.directions() {
                acc += env.rate(dir, site) * (f.values[g.neighbor(site, dir)] - f.values[site]);
            }
            assert!((lf.values[site] - acc).abs() < 1e-14);
        }
    }

    #[test]
    fn adjoint_pairing_of_gradients() {
        // <grad_k f, g> = <f, grad_{-k} g>
        let env = random_env(6, 8);
        let g = env.geometry();
        let ctx = OperatorContext::new(&env);
        let mut rng = stream_rng(12, 0);
        let f = random_zero_mean_field(g, &mut rng);
        let w = random_zero_mean_field(g, &mut rng);
        for dir in g.directions() {
            let left = ctx.grad_dir(&f, dir).dot(&w);
            let right = f.dot(&ctx.grad_dir(&w, dir.flip()));
            assert!((left - right).abs() < 1e-12);
        }
    }

    #[test]
    fn apply_is_linear() {
        let env = random_env(6, 2);
        let g = env.geometry();
        let ctx = OperatorContext::new(&env);
        let mut rng = stream_rng(21, 0);
        let f1 = random_zero_mean_field(g, &mut rng);
        let f2 = random_zero_mean_field(g, &mut rng);
        let (a, b) = (0.7, -1.3);
        let ops = [
            OperatorHandle::Lap,
            OperatorHandle::CondForm,
            OperatorHandle::FlowForm,
            OperatorHandle::SymPart,
            OperatorHandle::Generator,
            OperatorHandle::AbsLapPow(-0.5),
        ];
        for op in ops {
            let mut combo = ScalarField::zeros(g);
            combo.axpy(a, &f1);
            combo.axpy(b, &f2);
            combo.zero_mean = true;
            let lhs = ctx
                .apply(op, FieldValue::Scalar(combo))
                .unwrap()
                .into_scalar()
                .unwrap();
            let r1 = ctx
                .apply(op, FieldValue::Scalar(f1.clone()))
                .unwrap()
                .into_scalar()
                .unwrap();
            let r2 = ctx
                .apply(op, FieldValue::Scalar(f2.clone()))
                .unwrap()
                .into_scalar()
                .unwrap();
            let mut rhs = ScalarField::zeros(g);
            rhs.axpy(a, &r1);
            rhs.axpy(b, &r2);
            let defect = max_abs_diff(&lhs.values, &rhs.values);
            assert!(defect < 1e-12, "{op:?}: {defect}");
        }
    }

    #[test]
    fn grad_full_lands_in_gradient_space() {
        let env = random_env(6, 5);
        let ctx = OperatorContext::new(&env);
        let mut rng = stream_rng(31, 0);
        let f = random_zero_mean_field(env.geometry(), &mut rng);
        let grad = ctx.grad_full(&f);
        assert!(grad.skew_defect() < 1e-13);
        assert!(grad.curl_defect() < 1e-13);
    }

    #[test]
    fn apply_rejects_wrong_field_kind() {
        let env = control_env(4);
        let ctx = OperatorContext::new(&env);
        let g = GradientField::zeros(env.geometry());
        assert!(ctx.apply(OperatorHandle::Lap, FieldValue::Gradient(g)).is_err());
    }
}
