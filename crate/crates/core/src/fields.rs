//! Scalar and gradient fields on the torus.

use crate::geometry::{Direction, TorusGeometry};

/// Tolerance used when asserting a field has zero torus mean.
pub const ZERO_MEAN_TOL: f64 = 1e-12;

/// A real scalar field, one value per site.
#[derive(Debug, Clone)]
pub struct ScalarField {
    pub geometry: TorusGeometry,
    pub values: Vec<f64>,
    /// Marks membership in the zero-mean subspace.
    pub zero_mean: bool,
}

impl ScalarField {
    pub fn zeros(geometry: TorusGeometry) -> Self {
        Self {
            values: vec![0.0; geometry.sites()],
            geometry,
            zero_mean: true,
        }
    }

    pub fn from_values(geometry: TorusGeometry, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), geometry.sites());
        let mut f = Self {
            geometry,
            values,
            zero_mean: false,
        };
        f.zero_mean = f.mean().abs() <= ZERO_MEAN_TOL * f.scale().max(1.0);
        f
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Largest absolute value; used to scale tolerances.
    pub fn scale(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Subtract the torus mean, returning it.
    pub fn subtract_mean(&mut self) -> f64 {
        let m = self.mean();
        for v in &mut self.values {
            *v -= m;
        }
        self.zero_mean = true;
        m
    }

    /// Uniform-measure inner product N^{-d} sum_x f(x) g(x).
    pub fn dot(&self, other: &ScalarField) -> f64 {
        debug_assert_eq!(self.geometry, other.geometry);
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / self.values.len() as f64
    }

    /// Norm induced by [`ScalarField::dot`].
    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn axpy(&mut self, alpha: f64, other: &ScalarField) {
        for (v, o) in self.values.iter_mut().zip(&other.values) {
            *v += alpha * o;
        }
    }
}

/// A field indexed by site and signed unit step.
///
/// Elements of the gradient space satisfy the skew condition
/// g_k(x) + g_{-k}(x+k) = 0 and are curl-free:
/// g_k(x) + g_l(x+k) = g_l(x) + g_k(x+l).
#[derive(Debug, Clone)]
pub struct GradientField {
    pub geometry: TorusGeometry,
    /// One component per direction, indexed by `Direction::index()`.
    pub comps: Vec<Vec<f64>>,
}

impl GradientField {
    pub fn zeros(geometry: TorusGeometry) -> Self {
        Self {
            comps: vec![vec![0.0; geometry.sites()]; geometry.num_directions()],
            geometry,
        }
    }

    pub fn comp(&self, dir: Direction) -> &[f64] {
        &self.comps[dir.index()]
    }

    pub fn comp_mut(&mut self, dir: Direction) -> &mut Vec<f64> {
        &mut self.comps[dir.index()]
    }

    /// Inner product: sum over directions of the per-component products.
    pub fn dot(&self, other: &GradientField) -> f64 {
        let n = self.geometry.sites() as f64;
        self.comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
            .sum::<f64>()
            / n
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Largest defect of the skew condition g_k(x) + g_{-k}(x+k) = 0.
    pub fn skew_defect(&self) -> f64 {
        let g = &self.geometry;
        let mut worst = 0.0f64;
        for dir in g.directions() {
            let fwd = self.comp(dir);
            let bwd = self.comp(dir.flip());
            for site in 0..g.sites() {
                let at = g.neighbor(site, dir);
                worst = worst.max((fwd[site] + bwd[at]).abs());
            }
        }
        worst
    }

    /// Largest defect of the curl-free condition over all direction pairs.
    pub fn curl_defect(&self) -> f64 {
        let g = &self.geometry;
        let mut worst = 0.0f64;
        for k in g.directions() {
            for l in g.directions() {
                let gk = self.comp(k);
                let gl = self.comp(l);
                for site in 0..g.sites() {
                    let xk = g.neighbor(site, k);
                    let xl = g.neighbor(site, l);
                    let defect = gk[site] + gl[xk] - gl[site] - gk[xl];
                    worst = worst.max(defect.abs());
                }
            }
        }
        worst
    }
}

/// Either kind of field; the argument/return type of the generic operator
/// application entry point.
#[derive(Debug, Clone)]
pub enum FieldValue {
    Scalar(ScalarField),
    Gradient(GradientField),
}

impl FieldValue {
    pub fn into_scalar(self) -> Option<ScalarField> {
        match self {
            FieldValue::Scalar(f) => Some(f),
            FieldValue::Gradient(_) => None,
        }
    }

    pub fn into_gradient(self) -> Option<GradientField> {
        match self {
            FieldValue::Gradient(g) => Some(g),
            FieldValue::Scalar(_) => None,
        }
    }
}
