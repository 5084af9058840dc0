//! Quenched continuous-time walks in a fixed environment.
//!
//! At site x the walker waits an exponential time with rate R(x) = sum_k
//! p_k(x) and jumps to x+k with probability p_k(x)/R(x). Positions are
//! tracked on the infinite lattice by unwrapping the torus winding, while
//! rates are read at the wrapped site. All randomness comes from one
//! counter-based stream per walk, so ensembles reproduce bit-identically
//! under any parallel schedule.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corrector::CorrectorSolution;
use crate::environment::TorusEnvironment;
use crate::error::CoreError;
use crate::geometry::Direction;
use crate::rng::stream_rng;
use crate::Result;

/// One realized trajectory: jump times and the visited lattice points.
#[derive(Debug, Clone)]
pub struct WalkPath {
    pub env_hash: String,
    pub start: usize,
    /// Strictly increasing jump times.
    pub jump_times: Vec<f64>,
    /// Wrapped site indices, one more entry than `jump_times`.
    pub sites: Vec<usize>,
    /// Unwrapped integer positions, aligned with `sites`.
    pub positions: Vec<Vec<i64>>,
    pub t_max: f64,
}

impl WalkPath {
    /// Unwrapped position at time `t` (the last state entered before `t`).
    pub fn position_at(&self, t: f64) -> &[i64] {
        let idx = self.jump_times.partition_point(|&jt| jt <= t);
        &self.positions[idx]
    }
}

/// Walker state advanced event by event.
struct Walker<'a> {
    env: &'a TorusEnvironment,
    rng: ChaCha8Rng,
    site: usize,
    pos: Vec<i64>,
    time: f64,
}

impl<'a> Walker<'a> {
    fn new(env: &'a TorusEnvironment, x0: usize, seed: u64, walk_id: u64) -> Self {
        let coords = env.geometry().coords(x0);
        Self {
            env,
            rng: stream_rng(seed, walk_id),
            site: x0,
            pos: coords.iter().map(|&c| c as i64).collect(),
            time: 0.0,
        }
    }

    fn total_rate(&self) -> f64 {
        let r = self.env.total_rate(self.site);
        assert!(r > 0.0, "zero total rate at site {}", self.site);
        r
    }

    fn jump(&mut self) {
        let g = self.env.geometry();
        let total = self.total_rate();
        let mut u: f64 = self.rng.gen::<f64>() * total;
        let mut chosen = None;
        for dir in g.directions() {
            let p = self.env.rate(dir, self.site);
            if u < p {
                chosen = Some(dir);
                break;
            }
            u -= p;
        }
        // roundoff in the cumulative sum can spill past the end
        let dir = chosen.unwrap_or_else(|| Direction::from_index(g.num_directions() - 1));
        self.site = g.neighbor(self.site, dir);
        self.pos[dir.axis] += dir.step();
    }

    /// Advance to time `t`, invoking `on_jump` after each jump. Residual
    /// holding times are resampled at the horizon; the exponential law is
    /// memoryless, so the truncated process has the right distribution.
    fn advance_to(&mut self, t: f64, mut on_jump: impl FnMut(&Walker, f64)) {
        loop {
            let rate = self.total_rate();
            let holding = -self.rng.gen::<f64>().max(f64::MIN_POSITIVE).ln() / rate;
            if self.time + holding > t {
                self.time = t;
                return;
            }
            self.time += holding;
            self.jump();
            on_jump(self, self.time);
        }
    }

    /// Advance to `t`, accumulating the time integral of a site observable.
    fn advance_integrating(&mut self, t: f64, obs: &[f64]) -> f64 {
        let mut acc = 0.0;
        loop {
            let rate = self.total_rate();
            let holding = -self.rng.gen::<f64>().max(f64::MIN_POSITIVE).ln() / rate;
            if self.time + holding > t {
                acc += (t - self.time) * obs[self.site];
                self.time = t;
                return acc;
            }
            acc += holding * obs[self.site];
            self.time += holding;
            self.jump();
        }
    }
}

/// Simulate one trajectory up to `t_max`, recording every jump.
pub fn simulate_walk(
    env: &TorusEnvironment,
    x0: usize,
    t_max: f64,
    seed: u64,
) -> Result<WalkPath> {
    if t_max < 0.0 {
        return Err(CoreError::Precondition("t_max must be nonnegative".into()));
    }
    let mut walker = Walker::new(env, x0, seed, 0);
    let mut path = WalkPath {
        env_hash: env.content_hash(),
        start: x0,
        jump_times: Vec::new(),
        sites: vec![x0],
        positions: vec![walker.pos.clone()],
        t_max,
    };
    let mut events: Vec<(f64, usize, Vec<i64>)> = Vec::new();
    walker.advance_to(t_max, |w, t| {
        events.push((t, w.site, w.pos.clone()));
    });
    for (t, site, pos) in events {
        path.jump_times.push(t);
        path.sites.push(site);
        path.positions.push(pos);
    }
    Ok(path)
}

/// A path together with its corrected positions at requested times.
#[derive(Debug, Clone)]
pub struct CorrectedPath {
    pub path: WalkPath,
    pub times: Vec<f64>,
    /// `y_star[i]` is the corrected position vector at `times[i]`.
    pub y_star: Vec<Vec<f64>>,
}

/// Corrected displacement since the start: the unwrapped displacement
/// minus the periodic cocycle increment read at the wrapped site.
pub fn corrected_displacement(
    solution: &CorrectorSolution,
    env: &TorusEnvironment,
    pos: &[i64],
    start_site: usize,
    start_coords: &[i64],
) -> Vec<f64> {
    let wrapped = env.geometry().site_wrapped(pos);
    solution
        .chi
        .iter()
        .enumerate()
        .map(|(i, chi)| {
            (pos[i] - start_coords[i]) as f64 - (chi.values[wrapped] - chi.values[start_site])
        })
        .collect()
}

/// Evaluate the corrected path at the given times.
pub fn corrected_path(
    env: &TorusEnvironment,
    path: WalkPath,
    solution: &CorrectorSolution,
    times: &[f64],
) -> Result<CorrectedPath> {
    if !solution.is_drift_target {
        return Err(CoreError::MismatchedTarget(
            "corrected paths need a drift-target corrector".into(),
        ));
    }
    if solution.env_hash != path.env_hash {
        return Err(CoreError::MismatchedTarget(
            "corrector and path come from different environments".into(),
        ));
    }
    let start_coords: Vec<i64> = env
        .geometry()
        .coords(path.start)
        .iter()
        .map(|&c| c as i64)
        .collect();
    let y_star = times
        .iter()
        .map(|&t| {
            corrected_displacement(solution, env, path.position_at(t), path.start, &start_coords)
        })
        .collect();
    Ok(CorrectedPath {
        path,
        times: times.to_vec(),
        y_star,
    })
}

/// Diffusively scaled displacement samples.
#[derive(Debug, Clone)]
pub struct DisplacementSamples {
    pub t_list: Vec<f64>,
    /// `raw[ti][walk]` = X(t)/sqrt(t) per coordinate.
    pub raw: Vec<Vec<Vec<f64>>>,
    /// Corrected samples Y*(t)/sqrt(t), when a corrector was supplied.
    pub corrected: Option<Vec<Vec<Vec<f64>>>>,
    /// Largest |X(t)|_inf / N seen; beyond 1/4 the infinite-lattice
    /// comparison becomes untrustworthy.
    pub max_wrap_ratio: f64,
    pub n_walks: usize,
    pub seed: u64,
    pub start: usize,
}

impl DisplacementSamples {
    pub fn wrap_warning(&self) -> bool {
        self.max_wrap_ratio > 0.25
    }
}

/// Draw `n_walks` independent trajectories and record the diffusively
/// scaled displacements at each requested time.
pub fn sample_displacements(
    env: &TorusEnvironment,
    correct: bool,
    solution: Option<&CorrectorSolution>,
    t_list: &[f64],
    n_walks: usize,
    seed: u64,
) -> Result<DisplacementSamples> {
    if correct && solution.is_none() {
        return Err(CoreError::Precondition(
            "corrected sampling requested without a corrector".into(),
        ));
    }
    if let Some(sol) = solution {
        if !sol.is_drift_target {
            return Err(CoreError::MismatchedTarget(
                "corrected sampling needs a drift-target corrector".into(),
            ));
        }
        if sol.env_hash != env.content_hash() {
            return Err(CoreError::MismatchedTarget(
                "corrector belongs to a different environment".into(),
            ));
        }
    }
    if t_list.is_empty() || t_list.windows(2).any(|w| w[0] >= w[1]) || t_list[0] <= 0.0 {
        return Err(CoreError::Precondition(
            "t_list must be strictly increasing and positive".into(),
        ));
    }
    let g = env.geometry();
    let d = g.dim();
    let x0 = 0usize;
    let start_coords: Vec<i64> = g.coords(x0).iter().map(|&c| c as i64).collect();
    let n_side = g.side() as f64;

    // one stream per walk; results are collected per walk and aggregated
    // in index order, so the ensemble is schedule-independent
    type WalkRows = (Vec<Vec<f64>>, Option<Vec<Vec<f64>>>, f64);
    let per_walk: Vec<WalkRows> = (0..n_walks as u64)
        .into_par_iter()
        .map(|walk_id| {
            let mut walker = Walker::new(env, x0, seed, walk_id);
            let mut raw_rows = Vec::with_capacity(t_list.len());
            let mut cor_rows = correct.then(|| Vec::with_capacity(t_list.len()));
            let mut wrap = 0.0f64;
            for &t in t_list {
                walker.advance_to(t, |_, _| {});
                let scale = t.sqrt().recip();
                let displaced: Vec<f64> = walker
                    .pos
                    .iter()
                    .zip(&start_coords)
                    .map(|(p, s)| (p - s) as f64)
                    .collect();
                for &v in &displaced {
                    wrap = wrap.max(v.abs() / n_side);
                }
                raw_rows.push(displaced.iter().map(|v| v * scale).collect());
                if let Some(rows) = cor_rows.as_mut() {
                    let sol = solution.expect("checked above");
                    let wrapped = walker.site;
                    let row: Vec<f64> = (0..d)
                        .map(|i| {
                            let correction =
                                sol.chi[i].values[wrapped] - sol.chi[i].values[x0];
                            (displaced[i] - correction) * scale
                        })
                        .collect();
                    rows.push(row);
                }
            }
            (raw_rows, cor_rows, wrap)
        })
        .collect();

    let mut raw = vec![Vec::with_capacity(n_walks); t_list.len()];
    let mut corrected = correct.then(|| vec![Vec::with_capacity(n_walks); t_list.len()]);
    let mut max_wrap_ratio = 0.0f64;
    for (raw_rows, cor_rows, wrap) in per_walk {
        max_wrap_ratio = max_wrap_ratio.max(wrap);
        for (ti, row) in raw_rows.into_iter().enumerate() {
            raw[ti].push(row);
        }
        if let (Some(all), Some(rows)) = (corrected.as_mut(), cor_rows) {
            for (ti, row) in rows.into_iter().enumerate() {
                all[ti].push(row);
            }
        }
    }
    Ok(DisplacementSamples {
        t_list: t_list.to_vec(),
        raw,
        corrected,
        max_wrap_ratio,
        n_walks,
        seed,
        start: x0,
    })
}

/// Time average of a site observable along independent trajectories.
#[derive(Debug, Clone)]
pub struct EnvironmentAverage {
    /// Mean over walks of (1/t) integral of the observable along the path.
    pub estimate: f64,
    /// The ergodic limit: plain torus mean of the observable.
    pub torus_mean: f64,
    pub std_error: f64,
    pub n_walks: usize,
    pub t: f64,
}

/// Estimate the long-run average of `observable` (one value per site) over
/// the environment seen from the walker.
pub fn environment_average(
    env: &TorusEnvironment,
    observable: &[f64],
    t: f64,
    seed: u64,
    n_walks: usize,
) -> Result<EnvironmentAverage> {
    if observable.len() != env.geometry().sites() {
        return Err(CoreError::Precondition(
            "observable does not match geometry".into(),
        ));
    }
    if t <= 0.0 || n_walks == 0 {
        return Err(CoreError::Precondition(
            "environment averaging needs t > 0 and at least one walk".into(),
        ));
    }
    let per_walk: Vec<f64> = (0..n_walks as u64)
        .into_par_iter()
        .map(|walk_id| {
            let mut walker = Walker::new(env, 0, seed, walk_id);
            walker.advance_integrating(t, observable) / t
        })
        .collect();
    let mean = per_walk.iter().sum::<f64>() / n_walks as f64;
    let var = per_walk
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / (n_walks.max(2) - 1) as f64;
    let torus_mean = observable.iter().sum::<f64>() / observable.len() as f64;
    Ok(EnvironmentAverage {
        estimate: mean,
        torus_mean,
        std_error: (var / n_walks as f64).sqrt(),
        n_walks,
        t,
    })
}

/// The heavy-tail ergodic observable
/// sum_k (s^* + sum_l |h_{k,l}(x)|)^{2+eps} used to probe the integrability
/// of the stream tensor along trajectories.
pub fn heavy_tail_observable(env: &TorusEnvironment, eps: f64) -> Vec<f64> {
    let g = env.geometry();
    let p = 2.0 + eps;
    let s_upper = env.s_upper();
    (0..g.sites())
        .map(|site| {
            g.directions()
                .map(|k| {
                    let tail: f64 = g
                        .directions()
                        .map(|l| env.stream().entry(k, l, site).abs())
                        .sum();
                    (s_upper + tail).powf(p)
                })
                .sum()
        })
        .collect()
}
