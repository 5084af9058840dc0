//! Stream tensors: antisymmetric plaquette fields on the torus.
//!
//! A stream tensor assigns a value h_{k,l}(x) to every site x and ordered
//! pair of steps (k, l). Only the components h_{e_i,e_j}(x) with i < j are
//! stored; every other entry follows from the symmetry rules
//!
//!   h_{k,l}(x) = -h_{-k,l}(x+k) = -h_{k,-l}(x+l) = -h_{l,k}(x),
//!
//! which also force h_{k,k} = h_{k,-k} = 0. The lattice curl of the tensor
//! is a divergence-free flow (see [`crate::environment::curl_to_drift`]),
//! which is how the non-reversible part of a doubly stochastic environment
//! is produced.

use rand::Rng;
use rand_distr::{Distribution, Normal, Pareto, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::geometry::{Direction, TorusGeometry};
use crate::rng::stream_rng;
use crate::Result;

/// Per-site scalar law used to fill field components i.i.d.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldLaw {
    Constant { value: f64 },
    IidUniform { lo: f64, hi: f64 },
    IidGaussian { sigma: f64 },
    /// Symmetrized Pareto with hard cap: sign * min(Pareto(alpha), cap).
    /// The cap is mandatory; an unbounded tail would break rate positivity.
    IidParetoTruncated { alpha: f64, cap: f64 },
}

impl FieldLaw {
    fn validate(&self) -> Result<()> {
        match self {
            FieldLaw::Constant { value } => {
                if !value.is_finite() {
                    return Err(CoreError::InvalidSpec("constant value must be finite".into()));
                }
            }
            FieldLaw::IidUniform { lo, hi } => {
                if !(lo < hi) {
                    return Err(CoreError::InvalidSpec(format!(
                        "uniform law needs lo < hi, got [{lo}, {hi})"
                    )));
                }
            }
            FieldLaw::IidGaussian { sigma } => {
                if !(*sigma > 0.0) {
                    return Err(CoreError::InvalidSpec("gaussian sigma must be > 0".into()));
                }
            }
            FieldLaw::IidParetoTruncated { alpha, cap } => {
                if !(*alpha > 0.0) {
                    return Err(CoreError::InvalidSpec("pareto alpha must be > 0".into()));
                }
                if !(*cap >= 1.0) {
                    return Err(CoreError::InvalidSpec("pareto cap must be >= 1".into()));
                }
            }
        }
        Ok(())
    }

    /// Draw one value.
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            FieldLaw::Constant { value } => value,
            FieldLaw::IidUniform { lo, hi } => Uniform::new(lo, hi).sample(rng),
            FieldLaw::IidGaussian { sigma } => Normal::new(0.0, sigma).unwrap().sample(rng),
            FieldLaw::IidParetoTruncated { alpha, cap } => {
                let magnitude = Pareto::new(1.0, alpha).unwrap().sample(rng).min(cap);
                if rng.gen::<bool>() {
                    magnitude
                } else {
                    -magnitude
                }
            }
        }
    }

    /// Lower bound of the law's support (used to check ellipticity floors).
    pub fn floor(&self) -> f64 {
        match *self {
            FieldLaw::Constant { value } => value,
            FieldLaw::IidUniform { lo, .. } => lo,
            FieldLaw::IidGaussian { .. } => f64::NEG_INFINITY,
            FieldLaw::IidParetoTruncated { cap, .. } => -cap,
        }
    }
}

/// Antisymmetric plaquette field with the independent components stored
/// per unordered axis pair.
#[derive(Debug, Clone)]
pub struct StreamTensor {
    geometry: TorusGeometry,
    /// `plaquettes[p][site]` holds h_{e_i,e_j}(site) for the p-th pair (i, j), i < j.
    plaquettes: Vec<Vec<f64>>,
    /// Exponent offset of the L^{2+eps} empirical norm recorded in `hstar`.
    eps: f64,
    /// Summed empirical L^{2+eps} norms over all ordered step pairs.
    hstar: f64,
}

/// Unordered axis pairs (i, j) with i < j in lexicographic order.
pub fn axis_pairs(d: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(d.saturating_sub(1) * d / 2);
    for i in 0..d {
        for j in (i + 1)..d {
            pairs.push((i, j));
        }
    }
    pairs
}

impl StreamTensor {
    /// Build from raw plaquette components (one vector per axis pair).
    ///
    /// In d = 1 there are no plaquettes; the tensor is identically zero,
    /// which is the reversible control case.
    pub fn from_plaquettes(
        geometry: TorusGeometry,
        plaquettes: Vec<Vec<f64>>,
        eps: f64,
    ) -> Result<Self> {
        let pairs = axis_pairs(geometry.dim());
        if plaquettes.len() != pairs.len() || plaquettes.iter().any(|p| p.len() != geometry.sites())
        {
            return Err(CoreError::InvalidSpec(
                "plaquette component count does not match geometry".into(),
            ));
        }
        if !(eps > 0.0) {
            return Err(CoreError::InvalidSpec("integrability eps must be > 0".into()));
        }
        let mut tensor = Self {
            geometry,
            plaquettes,
            eps,
            hstar: 0.0,
        };
        tensor.hstar = tensor.empirical_hstar(eps);
        Ok(tensor)
    }

    /// The identically-zero tensor (works in every dimension).
    pub fn zero(geometry: TorusGeometry, eps: f64) -> Result<Self> {
        let comps = vec![vec![0.0; geometry.sites()]; axis_pairs(geometry.dim()).len()];
        Self::from_plaquettes(geometry, comps, eps)
    }

    pub fn geometry(&self) -> TorusGeometry {
        self.geometry
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn hstar(&self) -> f64 {
        self.hstar
    }

    pub fn plaquettes(&self) -> &[Vec<f64>] {
        &self.plaquettes
    }

    fn pair_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j);
        axis_pairs(self.geometry.dim())
            .iter()
            .position(|&(a, b)| (a, b) == (i, j))
            .expect("valid axis pair")
    }

    /// Full tensor entry h_{k,l}(x), expanded through the symmetry rules.
    pub fn entry(&self, k: Direction, l: Direction, site: usize) -> f64 {
        if k.axis == l.axis {
            return 0.0;
        }
        let g = &self.geometry;
        // sign from orientation of each step and from ordering of the axes
        let mut sign = 1.0;
        if !k.positive {
            sign = -sign;
        }
        if !l.positive {
            sign = -sign;
        }
        let (i, j, swapped) = if k.axis < l.axis {
            (k.axis, l.axis, false)
        } else {
            (l.axis, k.axis, true)
        };
        if swapped {
            sign = -sign;
        }
        // negative steps read the stored component one cell back along their axis
        let mut at = site;
        if !k.positive {
            at = g.neighbor(at, Direction::new(k.axis, false));
        }
        if !l.positive {
            at = g.neighbor(at, Direction::new(l.axis, false));
        }
        sign * self.plaquettes[self.pair_index(i, j)][at]
    }

    /// Empirical h* for the given eps: the sum over all ordered step pairs
    /// of the torus-averaged L^{2+eps} norms of the expanded entries.
    pub fn empirical_hstar(&self, eps: f64) -> f64 {
        let g = &self.geometry;
        let p = 2.0 + eps;
        let mut total = 0.0;
        for k in g.directions() {
            for l in g.directions() {
                let mut moment = 0.0;
                for site in 0..g.sites() {
                    moment += self.entry(k, l, site).abs().powf(p);
                }
                moment /= g.sites() as f64;
                if moment > 0.0 {
                    total += moment.powf(1.0 / p);
                }
            }
        }
        total
    }

    /// Scale every component by `gamma` (recomputes `hstar`).
    pub fn scaled(&self, gamma: f64) -> Self {
        let plaquettes = self
            .plaquettes
            .iter()
            .map(|comp| comp.iter().map(|v| gamma * v).collect())
            .collect();
        let mut out = Self {
            geometry: self.geometry,
            plaquettes,
            eps: self.eps,
            hstar: 0.0,
        };
        out.hstar = out.empirical_hstar(out.eps);
        out
    }
}

/// Fill a stream tensor i.i.d. per site and plaquette from `law`.
///
/// The fill order (pair-major, then site) and the ChaCha stream keyed by
/// `seed` make generation reproducible.
pub fn generate_stream_tensor(
    geometry: TorusGeometry,
    law: &FieldLaw,
    eps: f64,
    seed: u64,
) -> Result<StreamTensor> {
    if geometry.dim() < 2 {
        return Err(CoreError::InvalidGeometry(
            "stream tensor needs d >= 2 (at least one plaquette axis pair)".into(),
        ));
    }
    law.validate()?;
    let mut rng = stream_rng(seed, 0);
    let pairs = axis_pairs(geometry.dim());
    let mut plaquettes = Vec::with_capacity(pairs.len());
    for _ in &pairs {
        let comp: Vec<f64> = (0..geometry.sites()).map(|_| law.sample(&mut rng)).collect();
        plaquettes.push(comp);
    }
    StreamTensor::from_plaquettes(geometry, plaquettes, eps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dir(axis: usize, positive: bool) -> Direction {
        Direction::new(axis, positive)
    }

    #[test]
    fn zero_law_gives_zero_tensor() {
        let g = TorusGeometry::new(2, 4).unwrap();
        let h = generate_stream_tensor(g, &FieldLaw::Constant { value: 0.0 }, 1.0, 1).unwrap();
        assert_eq!(h.hstar(), 0.0);
        for comp in h.plaquettes() {
            assert!(comp.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn constant_law_hstar_counts_eight_ordered_pairs_in_2d() {
        // every one of the 8 ordered nonzero step pairs contributes |c|
        let g = TorusGeometry::new(2, 4).unwrap();
        let c = 0.37;
        let h = generate_stream_tensor(g, &FieldLaw::Constant { value: c }, 1.0, 1).unwrap();
        let mut nonzero_pairs = 0usize;
        for k in g.directions() {
            for l in g.directions() {
                if h.entry(k, l, 0) != 0.0 {
                    nonzero_pairs += 1;
                }
            }
        }
        assert_eq!(nonzero_pairs, 8);
        assert!((h.hstar() - 8.0 * c).abs() < 1e-12);
    }

    #[test]
    fn uniform_law_hstar_matches_closed_form_moment() {
        // E|U|^3 = 1/4 for U ~ Uniform(-1,1), so each pair norm is (1/4)^(1/3)
        // and hstar -> 8 * (1/4)^(1/3) ~ 5.0397.
        let expected = 8.0 * 0.25f64.powf(1.0 / 3.0);
        // Monte Carlo band: Var|U|^3 = 1/7 - 1/16, the cube root divides the
        // relative error by 3; allow three standard errors.
        let sigma_rel = |samples: f64| (1.0f64 / 7.0 - 1.0 / 16.0).sqrt() / (samples.sqrt() * 0.25) / 3.0;

        let g = TorusGeometry::new(2, 16).unwrap();
        let h = generate_stream_tensor(g, &FieldLaw::IidUniform { lo: -1.0, hi: 1.0 }, 1.0, 7)
            .unwrap();
        let rel = (h.hstar() - expected).abs() / expected;
        assert!(
            rel < 3.0 * sigma_rel(256.0),
            "hstar {} vs {} (rel {})",
            h.hstar(),
            expected,
            rel
        );

        // larger sample: comfortably inside five percent
        let g = TorusGeometry::new(2, 32).unwrap();
        let h = generate_stream_tensor(g, &FieldLaw::IidUniform { lo: -1.0, hi: 1.0 }, 1.0, 7)
            .unwrap();
        let rel = (h.hstar() - expected).abs() / expected;
        assert!(rel < 0.05, "hstar {} vs {} (rel {})", h.hstar(), expected, rel);
    }

    #[test]
    fn symmetry_rules_hold_on_expanded_entries() {
        let g = TorusGeometry::new(3, 4).unwrap();
        let h = generate_stream_tensor(g, &FieldLaw::IidGaussian { sigma: 1.0 }, 1.0, 5).unwrap();
        for site in 0..g.sites() {
            for k in g.directions() {
                for l in g.directions() {
                    let v = h.entry(k, l, site);
                    // antisymmetry in the pair
                    assert_eq!(v, -h.entry(l, k, site));
                    // shift rules
                    let xk = g.neighbor(site, k);
                    assert_eq!(v, -h.entry(k.flip(), l, xk));
                    let xl = g.neighbor(site, l);
                    assert_eq!(v, -h.entry(k, l.flip(), xl));
                    // diagonal entries vanish
                    if k.axis == l.axis {
                        assert_eq!(v, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn reconstruction_is_order_independent() {
        // reduce h_{-e1,-e2}(x) by both rule orders and compare with entry()
        let g = TorusGeometry::new(2, 5).unwrap();
        let h = generate_stream_tensor(g, &FieldLaw::IidUniform { lo: -1.0, hi: 1.0 }, 1.0, 3)
            .unwrap();
        let k = dir(0, false);
        let l = dir(1, false);
        for site in 0..g.sites() {
            // order A: flip k first, then l
            let xk = g.neighbor(site, k);
            let xkl = g.neighbor(xk, l);
            let via_a = h.entry(k.flip(), l.flip(), xkl);
            // order B: flip l first, then k
            let xl = g.neighbor(site, l);
            let xlk = g.neighbor(xl, k);
            let via_b = h.entry(k.flip(), l.flip(), xlk);
            assert_eq!(via_a, h.entry(k, l, site));
            assert_eq!(via_b, h.entry(k, l, site));
        }
    }

    #[test]
    fn pareto_values_are_capped() {
        let g = TorusGeometry::new(2, 8).unwrap();
        let h = generate_stream_tensor(
            g,
            &FieldLaw::IidParetoTruncated { alpha: 0.8, cap: 5.0 },
            0.5,
            11,
        )
        .unwrap();
        for comp in h.plaquettes() {
            assert!(comp.iter().all(|v| v.abs() <= 5.0));
        }
    }

    #[test]
    fn rejects_one_dimensional_geometry() {
        let g = TorusGeometry::new(1, 8).unwrap();
        let err = generate_stream_tensor(g, &FieldLaw::Constant { value: 1.0 }, 1.0, 0);
        assert!(err.is_err());
    }

    #[test]
    fn rejects_malformed_laws() {
        let g = TorusGeometry::new(2, 4).unwrap();
        assert!(generate_stream_tensor(g, &FieldLaw::IidUniform { lo: 1.0, hi: 1.0 }, 1.0, 0).is_err());
        assert!(generate_stream_tensor(g, &FieldLaw::IidGaussian { sigma: 0.0 }, 1.0, 0).is_err());
        assert!(
            generate_stream_tensor(g, &FieldLaw::IidParetoTruncated { alpha: 1.5, cap: 0.5 }, 1.0, 0)
                .is_err()
        );
    }

    #[test]
    fn generation_is_reproducible() {
        let g = TorusGeometry::new(2, 8).unwrap();
        let law = FieldLaw::IidUniform { lo: -1.0, hi: 1.0 };
        let a = generate_stream_tensor(g, &law, 1.0, 42).unwrap();
        let b = generate_stream_tensor(g, &law, 1.0, 42).unwrap();
        assert_eq!(a.plaquettes(), b.plaquettes());
        let c = generate_stream_tensor(g, &law, 1.0, 43).unwrap();
        assert_ne!(a.plaquettes(), c.plaquettes());
    }
}
