//! Doubly stochastic periodic environments.
//!
//! An environment carries, per site x and step k, a symmetric conductance
//! part s_k(x) and a skew part v_k(x) obtained as the lattice curl of a
//! stream tensor. The jump rates are p_k(x) = s_k(x) + v_k(x). Because v
//! is divergence-free, total outflow equals total inflow at every site, so
//! the uniform measure is invariant for the walk.
//!
//! Rates are kept in the time normalization where the ellipticity floor of
//! the symmetric part is 1: generators must have s >= 1, and the recorded
//! `s_star` is the constant 1 used by the operator decomposition and the
//! entropy-production constant.

use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CoreError;
use crate::fft::{abs_lap_symbol, NdFft};
use crate::geometry::{Direction, TorusGeometry};
use crate::rng::stream_rng;
use crate::stream::{generate_stream_tensor, FieldLaw, StreamTensor};
use crate::Result;

/// How to restore rate positivity when the curl part dips below -s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RescalePolicy {
    /// Fail if any rate would be negative.
    Reject,
    /// Scale the stream tensor by the largest gamma <= 1 keeping
    /// min_x,k (s_k + gamma v_k) >= margin.
    ShrinkH { margin: f64 },
}

/// Full recipe for one environment; serializes to the JSON wire format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSpec {
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
    pub s: FieldLaw,
    pub h: FieldLaw,
    pub rescale: RescalePolicy,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_eps() -> f64 {
    1.0
}

/// Divergence-free skew part of the rates, one component per step.
#[derive(Debug, Clone)]
pub struct SkewFlow {
    pub geometry: TorusGeometry,
    /// `comps[dir.index()][site]` = v_dir(site)
    pub comps: Vec<Vec<f64>>,
}

impl SkewFlow {
    pub fn comp(&self, dir: Direction) -> &[f64] {
        &self.comps[dir.index()]
    }

    /// max_x |v_k(x) + v_{-k}(x+k)|
    pub fn skew_defect(&self) -> f64 {
        let g = &self.geometry;
        let mut worst = 0.0f64;
        for dir in g.directions() {
            let fwd = self.comp(dir);
            let bwd = self.comp(dir.flip());
            for site in 0..g.sites() {
                worst = worst.max((fwd[site] + bwd[g.neighbor(site, dir)]).abs());
            }
        }
        worst
    }

    /// max_x |sum_k v_k(x)|
    pub fn divergence_defect(&self) -> f64 {
        let g = &self.geometry;
        let mut worst = 0.0f64;
        for site in 0..g.sites() {
            let total: f64 = g.directions().map(|dir| self.comp(dir)[site]).sum();
            worst = worst.max(total.abs());
        }
        worst
    }

    /// max_k |N^{-d} sum_x v_k(x)|
    pub fn mean_defect(&self) -> f64 {
        let n = self.geometry.sites() as f64;
        self.comps
            .iter()
            .map(|comp| (comp.iter().sum::<f64>() / n).abs())
            .fold(0.0f64, f64::max)
    }
}

/// Lattice curl of the stream tensor: v_k(x) = sum_l h_{k,l}(x).
///
/// The result is exactly skew (v_k(x) = -v_{-k}(x+k)), divergence-free and
/// of zero torus mean, up to floating-point associativity.
pub fn curl_to_drift(h: &StreamTensor) -> SkewFlow {
    let g = h.geometry();
    let mut comps = vec![vec![0.0; g.sites()]; g.num_directions()];
    for k in g.directions() {
        let comp = &mut comps[k.index()];
        for (site, slot) in comp.iter_mut().enumerate() {
            let mut acc = 0.0;
            for l in g.directions() {
                if l.axis != k.axis {
                    acc += h.entry(k, l, site);
                }
            }
            *slot = acc;
        }
    }
    SkewFlow { geometry: g, comps }
}

/// Validation summary attached to every assembled environment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    /// max_x |sum_k p_k(x) - sum_k p_{-k}(x+k)|
    pub bistoch_defect: f64,
    /// max_x |sum_k v_k(x)|
    pub divergence_defect: f64,
    /// max_k |torus mean of v_k|
    pub drift_mean_defect: f64,
    pub min_rate: f64,
    pub max_rate: f64,
    pub min_s: f64,
    pub max_s: f64,
    /// Stream-tensor shrink factor that was applied (1 = untouched).
    pub gamma: f64,
}

/// Immutable doubly stochastic environment on a torus.
#[derive(Debug, Clone)]
pub struct TorusEnvironment {
    geometry: TorusGeometry,
    /// `s_edge[axis][site]` = s_{+e_axis}(site); the negative-step value is
    /// read one cell back along the axis.
    s_edge: Vec<Vec<f64>>,
    stream: StreamTensor,
    flow: SkewFlow,
    /// `rates[dir.index()][site]` = p_dir(site)
    rates: Vec<Vec<f64>>,
    /// Cached total outflow per site.
    total_rate: Vec<f64>,
    /// Ellipticity floor in the working time normalization (always 1).
    s_star: f64,
    /// Largest jump rate; upper bound of p_k.
    s_upper: f64,
    validation: ValidationReport,
    spec: Option<EnvironmentSpec>,
}

impl TorusEnvironment {
    pub fn geometry(&self) -> TorusGeometry {
        self.geometry
    }

    pub fn stream(&self) -> &StreamTensor {
        &self.stream
    }

    pub fn flow(&self) -> &SkewFlow {
        &self.flow
    }

    pub fn spec(&self) -> Option<&EnvironmentSpec> {
        self.spec.as_ref()
    }

    pub fn validation(&self) -> &ValidationReport {
        &self.validation
    }

    /// Ellipticity floor of the symmetric part (1 by normalization).
    pub fn s_star(&self) -> f64 {
        self.s_star
    }

    /// Upper bound of the jump rates.
    pub fn s_upper(&self) -> f64 {
        self.s_upper
    }

    /// Symmetric part s_k(x).
    pub fn s(&self, dir: Direction, site: usize) -> f64 {
        if dir.positive {
            self.s_edge[dir.axis][site]
        } else {
            let back = self.geometry.neighbor(site, dir);
            self.s_edge[dir.axis][back]
        }
    }

    /// Skew part v_k(x).
    pub fn v(&self, dir: Direction, site: usize) -> f64 {
        self.flow.comps[dir.index()][site]
    }

    /// Jump rate p_k(x) = s_k(x) + v_k(x).
    pub fn rate(&self, dir: Direction, site: usize) -> f64 {
        self.rates[dir.index()][site]
    }

    pub fn rate_comp(&self, dir: Direction) -> &[f64] {
        &self.rates[dir.index()]
    }

    /// Total outflow R(x) = sum_k p_k(x).
    pub fn total_rate(&self, site: usize) -> f64 {
        self.total_rate[site]
    }

    /// Largest total outflow over the torus; the uniformization constant.
    pub fn max_total_rate(&self) -> f64 {
        self.total_rate.iter().fold(0.0f64, |m, &r| m.max(r))
    }

    pub fn s_edges(&self) -> &[Vec<f64>] {
        &self.s_edge
    }

    /// Content hash of the defining fields (geometry, s, plaquettes).
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(b"dsre-env-v1");
        hasher.update((self.geometry.dim() as u64).to_le_bytes());
        hasher.update((self.geometry.side() as u64).to_le_bytes());
        for comp in &self.s_edge {
            for v in comp {
                hasher.update(v.to_le_bytes());
            }
        }
        for comp in self.stream.plaquettes() {
            for v in comp {
                hasher.update(v.to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Generate an environment from a complete spec.
    pub fn generate(spec: &EnvironmentSpec) -> Result<Self> {
        let geometry = TorusGeometry::new(spec.d, spec.n)?;
        let stream = if spec.d == 1 {
            match spec.h {
                FieldLaw::Constant { value: 0.0 } => StreamTensor::zero(geometry, spec.eps)?,
                _ => {
                    return Err(CoreError::InvalidSpec(
                        "d = 1 admits no stream tensor; use h = constant 0".into(),
                    ))
                }
            }
        } else {
            generate_stream_tensor(geometry, &spec.h, spec.eps, spec.seed)?
        };
        let mut env = assemble_environment(&spec.s, stream, spec.rescale, spec.seed)?;
        env.spec = Some(spec.clone());
        Ok(env)
    }
}

/// Snap shrink factors within one part in 10^12 of 1 to exactly 1, so that
/// re-assembling an already-shrunk environment is a no-op.
const GAMMA_SNAP: f64 = 1.0 - 1e-12;

/// Assemble an environment from a symmetric-part law and a stream tensor.
///
/// The symmetric law must be `constant` or `iid_uniform` with floor >= 1
/// (the working normalization). Under `ShrinkH`, the tensor is scaled by
/// the largest gamma <= 1 keeping every rate at or above `margin`; under
/// `Reject`, any negative rate is an error.
pub fn assemble_environment(
    s_law: &FieldLaw,
    stream: StreamTensor,
    policy: RescalePolicy,
    seed: u64,
) -> Result<TorusEnvironment> {
    let geometry = stream.geometry();
    match s_law {
        FieldLaw::Constant { .. } | FieldLaw::IidUniform { .. } => {}
        _ => {
            return Err(CoreError::InvalidSpec(
                "symmetric part must be constant or iid_uniform".into(),
            ))
        }
    }
    if s_law.floor() < 1.0 {
        return Err(CoreError::InvalidSpec(format!(
            "symmetric-part floor {} < 1 violates the ellipticity normalization",
            s_law.floor()
        )));
    }
    if let RescalePolicy::ShrinkH { margin } = policy {
        if !(margin > 0.0 && margin < 1.0) {
            return Err(CoreError::InvalidSpec(format!(
                "shrink margin {margin} outside (0, 1)"
            )));
        }
    }

    // symmetric conductances, one value per unoriented edge (site, axis);
    // its own stream so s does not depend on how many h values were drawn
    let mut rng = stream_rng(seed, 1);
    let s_edge: Vec<Vec<f64>> = (0..geometry.dim())
        .map(|_| {
            (0..geometry.sites())
                .map(|_| match *s_law {
                    FieldLaw::Constant { value } => value,
                    FieldLaw::IidUniform { lo, hi } => Uniform::new(lo, hi).sample(&mut rng),
                    _ => unreachable!(),
                })
                .collect()
        })
        .collect();

    let s_at = |dir: Direction, site: usize| -> f64 {
        if dir.positive {
            s_edge[dir.axis][site]
        } else {
            s_edge[dir.axis][geometry.neighbor(site, dir)]
        }
    };

    let flow = curl_to_drift(&stream);

    // largest admissible stream scale
    let s_star = 1.0;
    let mut gamma: f64 = 1.0;
    if let RescalePolicy::ShrinkH { margin } = policy {
        let floor = margin * s_star;
        for dir in geometry.directions() {
            let comp = flow.comp(dir);
            for site in 0..geometry.sites() {
                let v = comp[site];
                if v < 0.0 {
                    let s = s_at(dir, site);
                    // s + gamma v >= floor  =>  gamma <= (s - floor) / (-v)
                    gamma = gamma.min((s - floor) / (-v));
                }
            }
        }
        if gamma >= GAMMA_SNAP {
            gamma = 1.0;
        }
        if gamma < 0.0 {
            return Err(CoreError::Internal(
                "shrink produced a negative scale; margin exceeds the conductance floor".into(),
            ));
        }
    }

    let (stream, flow) = if gamma < 1.0 {
        let scaled = stream.scaled(gamma);
        let flow = curl_to_drift(&scaled);
        (scaled, flow)
    } else {
        (stream, flow)
    };

    // rates and validation
    let nd = geometry.num_directions();
    let mut rates = vec![vec![0.0; geometry.sites()]; nd];
    let mut min_rate = f64::INFINITY;
    let mut max_rate = f64::NEG_INFINITY;
    for dir in geometry.directions() {
        let comp = &mut rates[dir.index()];
        let vcomp = flow.comp(dir);
        for (site, slot) in comp.iter_mut().enumerate() {
            let p = s_at(dir, site) + vcomp[site];
            if p < 0.0 {
                if matches!(policy, RescalePolicy::Reject) {
                    return Err(CoreError::NegativeRate { site, rate: p });
                }
                // shrink keeps rates at the margin up to roundoff
                if p < -1e-12 {
                    return Err(CoreError::Internal(format!(
                        "rate {p:.3e} below zero after shrink at site {site}"
                    )));
                }
            }
            min_rate = min_rate.min(p);
            max_rate = max_rate.max(p);
            *slot = p;
        }
    }

    let mut min_s = f64::INFINITY;
    let mut max_s = f64::NEG_INFINITY;
    for comp in &s_edge {
        for &v in comp {
            min_s = min_s.min(v);
            max_s = max_s.max(v);
        }
    }

    let mut total_rate = vec![0.0; geometry.sites()];
    for (site, slot) in total_rate.iter_mut().enumerate() {
        *slot = (0..nd).map(|i| rates[i][site]).sum();
    }

    // double stochasticity: outflow vs inflow at every site
    let mut bistoch_defect = 0.0f64;
    for site in 0..geometry.sites() {
        let inflow: f64 = geometry
            .directions()
            .map(|dir| rates[dir.flip().index()][geometry.neighbor(site, dir)])
            .sum();
        bistoch_defect = bistoch_defect.max((total_rate[site] - inflow).abs());
    }

    let validation = ValidationReport {
        bistoch_defect,
        divergence_defect: flow.divergence_defect(),
        drift_mean_defect: flow.mean_defect(),
        min_rate,
        max_rate,
        min_s,
        max_s,
        gamma,
    };

    Ok(TorusEnvironment {
        geometry,
        s_edge,
        stream,
        flow,
        rates,
        total_rate,
        s_star,
        s_upper: max_rate,
        validation,
        spec: None,
    })
}

/// Rebuild an environment from stored fields (inverse of serialization).
pub fn environment_from_fields(
    geometry: TorusGeometry,
    s_edge: Vec<Vec<f64>>,
    plaquettes: Vec<Vec<f64>>,
    eps: f64,
    spec: Option<EnvironmentSpec>,
) -> Result<TorusEnvironment> {
    if s_edge.len() != geometry.dim() || s_edge.iter().any(|c| c.len() != geometry.sites()) {
        return Err(CoreError::InvalidSpec(
            "conductance component count does not match geometry".into(),
        ));
    }
    let stream = StreamTensor::from_plaquettes(geometry, plaquettes, eps)?;
    let flow = curl_to_drift(&stream);
    let nd = geometry.num_directions();
    let s_at = |dir: Direction, site: usize| -> f64 {
        if dir.positive {
            s_edge[dir.axis][site]
        } else {
            s_edge[dir.axis][geometry.neighbor(site, dir)]
        }
    };
    let mut rates = vec![vec![0.0; geometry.sites()]; nd];
    let mut min_rate = f64::INFINITY;
    let mut max_rate = f64::NEG_INFINITY;
    let mut min_s = f64::INFINITY;
    let mut max_s = f64::NEG_INFINITY;
    for dir in geometry.directions() {
        for site in 0..geometry.sites() {
            let p = s_at(dir, site) + flow.comp(dir)[site];
            rates[dir.index()][site] = p;
            min_rate = min_rate.min(p);
            max_rate = max_rate.max(p);
        }
    }
    for comp in &s_edge {
        for &v in comp {
            min_s = min_s.min(v);
            max_s = max_s.max(v);
        }
    }
    if min_s < 1.0 - 1e-12 {
        return Err(CoreError::InvalidSpec(format!(
            "stored conductances have floor {min_s} < 1"
        )));
    }
    if min_rate < -1e-12 {
        return Err(CoreError::InvalidSpec(format!(
            "stored fields produce negative rate {min_rate:.3e}"
        )));
    }
    let mut total_rate = vec![0.0; geometry.sites()];
    for (site, slot) in total_rate.iter_mut().enumerate() {
        *slot = (0..nd).map(|i| rates[i][site]).sum();
    }
    let mut bistoch_defect = 0.0f64;
    for site in 0..geometry.sites() {
        let inflow: f64 = geometry
            .directions()
            .map(|dir| rates[dir.flip().index()][geometry.neighbor(site, dir)])
            .sum();
        bistoch_defect = bistoch_defect.max((total_rate[site] - inflow).abs());
    }
    let validation = ValidationReport {
        bistoch_defect,
        divergence_defect: flow.divergence_defect(),
        drift_mean_defect: flow.mean_defect(),
        min_rate,
        max_rate,
        min_s,
        max_s,
        gamma: 1.0,
    };
    Ok(TorusEnvironment {
        geometry,
        s_edge,
        stream,
        flow,
        rates,
        total_rate,
        s_star: 1.0,
        s_upper: max_rate,
        validation,
        spec,
    })
}

/// Local drift decomposition.
#[derive(Debug, Clone)]
pub struct DriftFields {
    pub geometry: TorusGeometry,
    /// `psi[i][site]`: symmetric-part drift component i.
    pub psi: Vec<Vec<f64>>,
    /// `phi[i][site]`: skew-part drift component i.
    pub phi: Vec<Vec<f64>>,
    /// phi_star = psi + phi: the full local quenched drift.
    pub phi_star: Vec<Vec<f64>>,
    /// max over sites/coordinates of |phi_star_i(x) - sum_k p_k(x) k_i|.
    pub identity_defect: f64,
}

impl DriftFields {
    /// Torus mean of phi_star, one entry per coordinate.
    pub fn mean_drift(&self) -> Vec<f64> {
        let n = self.geometry.sites() as f64;
        self.phi_star
            .iter()
            .map(|comp| comp.iter().sum::<f64>() / n)
            .collect()
    }
}

/// Compute the local drift fields
/// psi_i(x) = s_{e_i}(x) - s_{e_i}(x - e_i), phi_i(x) = v_{e_i}(x) + v_{e_i}(x - e_i),
/// and cross-check phi_star against the rate-weighted mean step.
pub fn drift_fields(env: &TorusEnvironment) -> DriftFields {
    let g = env.geometry();
    let d = g.dim();
    let mut psi = vec![vec![0.0; g.sites()]; d];
    let mut phi = vec![vec![0.0; g.sites()]; d];
    let mut phi_star = vec![vec![0.0; g.sites()]; d];
    for axis in 0..d {
        let fwd = Direction::new(axis, true);
        let back = Direction::new(axis, false);
        for site in 0..g.sites() {
            let behind = g.neighbor(site, back);
            psi[axis][site] = env.s(fwd, site) - env.s(fwd, behind);
            phi[axis][site] = env.v(fwd, site) + env.v(fwd, behind);
            phi_star[axis][site] = psi[axis][site] + phi[axis][site];
        }
    }
    let mut identity_defect = 0.0f64;
    for site in 0..g.sites() {
        for axis in 0..d {
            let mut weighted: f64 = 0.0;
            for dir in g.directions() {
                weighted += env.rate(dir, site) * dir.component(axis);
            }
            identity_defect = identity_defect.max((phi_star[axis][site] - weighted).abs());
        }
    }
    DriftFields {
        geometry: g,
        psi,
        phi,
        phi_star,
        identity_defect,
    }
}

/// Infrared diagnostic of the skew drift field.
#[derive(Debug, Clone)]
pub struct H1Report {
    pub geometry: TorusGeometry,
    /// `spectrum[i][p]`: autocorrelation spectrum of phi_i at dual point p.
    pub spectrum: Vec<Vec<f64>>,
    /// N^{-d} sum over p != 0 of sum_i spectrum_i(p) / sum_j (1 - cos p_j).
    pub value: f64,
    /// Smallest spectrum entry (should be >= -1e-10; spectra are nonnegative).
    pub min_spectrum: f64,
    /// The p = 0 mode is excluded from the sum.
    pub excludes_zero: bool,
}

/// Weighted infrared sum of the drift autocorrelation spectrum.
///
/// The spectrum of each component is |DFT(phi_i)(p)|^2 / N^d, which is the
/// transform of the torus autocorrelation of phi_i. The weight at dual
/// point p is 1 / sum_j (1 - cos p_j); p = 0 carries no weight because the
/// flow has zero mean.
pub fn h_minus_one_report(env: &TorusEnvironment) -> H1Report {
    let g = env.geometry();
    let drift = drift_fields(env);
    let fft = NdFft::new(g);
    let sites = g.sites() as f64;
    let mut spectrum = Vec::with_capacity(g.dim());
    for comp in &drift.phi {
        let transformed = fft.forward_real(comp);
        spectrum.push(
            transformed
                .iter()
                .map(|c| c.norm_sqr() / sites)
                .collect::<Vec<f64>>(),
        );
    }
    // |Delta| symbol is 4 sum_j (1 - cos p_j)
    let symbol = abs_lap_symbol(g);
    let mut value = 0.0;
    for p in 1..g.sites() {
        let weight = 4.0 / symbol[p];
        let total: f64 = spectrum.iter().map(|comp| comp[p]).sum();
        value += weight * total;
    }
    value /= sites;
    let min_spectrum = spectrum
        .iter()
        .flat_map(|comp| comp.iter().copied())
        .fold(f64::INFINITY, f64::min);
    H1Report {
        geometry: g,
        spectrum,
        value,
        min_spectrum,
        excludes_zero: true,
    }
}
