//! Moment, entropy and entropy-production diagnostics of heat kernels.
//!
//! From a quenched distribution q(t, .) the report tracks
//!
//!   M(t) = sum_x |x| q(t,x)                 (first absolute moment)
//!   H(t) = -sum_x q log q                   (entropy)
//!   D(t) = t^{d/2} max_x q(t,x)             (diagonal decay)
//!   F(t) = sum_{x,k} |dq/(q+q)|^2 q(x)      (Fisher form)
//!   G(t) = H/d - log(t)/2 + C2hat >= 0      (entropy gap)
//!
//! with C2hat = log(max_t D)/d chosen so the gap is nonnegative on the
//! computed grid. The entropy production dH/dt is estimated by centered
//! differences with a Richardson error estimate, and the production bound
//! dH/dt >= b s_* F(t) is checked with the variational constant
//!
//!   b = inf_{beta > 1} (beta+1)(beta-1)^{-2} (beta - 1 - log beta),
//!
//! located by golden-section search.

use serde::Serialize;

use crate::environment::TorusEnvironment;
use crate::error::CoreError;
use crate::heat_kernel::HeatKernel;
use crate::Result;

/// Golden-section minimizer of the entropy-production constant's
/// variational form. The function is 1 at both ends of (1, infinity) and
/// dips once in between.
pub fn nash_constant_b() -> f64 {
    let f = |beta: f64| (beta + 1.0) * (beta - 1.0 - beta.ln()) / ((beta - 1.0) * (beta - 1.0));
    golden_section(f, 1.0 + 1e-9, 1e3, 1e-12)
}

/// Golden-section search for the minimum of a unimodal function.
pub fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, xtol: f64) -> f64 {
    let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a) > xtol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    f(0.5 * (a + b))
}

/// Geometric time grid with relative step `step_frac`, suitable for the
/// centered differencing of the entropy series.
pub fn diagnostic_time_grid(t0: f64, t1: f64, step_frac: f64) -> Vec<f64> {
    assert!(t0 > 0.0 && t1 > t0 && step_frac > 0.0);
    let mut grid = vec![t0];
    let ratio = 1.0 + step_frac;
    let mut t = t0;
    while t * ratio < t1 {
        t *= ratio;
        grid.push(t);
    }
    grid.push(t1);
    grid
}

/// Time series of the moment/entropy functionals with empirical constants.
#[derive(Debug, Clone, Serialize)]
pub struct NashReport {
    pub times: Vec<f64>,
    pub moment: Vec<f64>,
    pub entropy: Vec<f64>,
    /// Entropy gap G(t) >= 0 by the choice of `c2hat`.
    pub gap: Vec<f64>,
    /// Centered-difference dH/dt at interior grid points.
    pub hdot: Vec<Option<f64>>,
    /// Richardson error estimate for `hdot` where a wide stencil exists.
    pub hdot_err: Vec<Option<f64>>,
    pub fisher: Vec<f64>,
    pub diag: Vec<f64>,
    /// (1/d) log sup_t D(t).
    pub c2hat: f64,
    /// min over {t : M(t) > 1} of M e^{-H/d}; infinite if M never exceeds 1.
    pub c1hat: f64,
    /// Entropy-production constant b s_*.
    pub c5: f64,
    pub bhat: f64,
    pub s_star: f64,
    pub t_wrap: f64,
    /// Largest drop between consecutive entropy values (0 when monotone).
    pub entropy_monotone_defect: f64,
    /// Grid points discarded because they lie beyond the wrap horizon.
    pub truncated_points: usize,
}

/// Compute the functional series of a heat kernel, restricted to times in
/// (0, t_wrap].
pub fn nash_functionals(hk: &HeatKernel, s_star: f64) -> Result<NashReport> {
    let g = hk.geometry;
    let d = g.dim() as f64;
    let kept: Vec<usize> = hk
        .times
        .iter()
        .enumerate()
        .filter(|(_, &t)| t > 0.0 && t <= hk.t_wrap)
        .map(|(i, _)| i)
        .collect();
    let truncated_points = hk.times.len() - kept.len();
    if kept.is_empty() {
        return Err(CoreError::Precondition(format!(
            "no grid times inside (0, t_wrap = {}]",
            hk.t_wrap
        )));
    }

    // |x| from the origin in centered representatives
    let norms: Vec<f64> = {
        let x0 = g.coords(hk.x0);
        (0..g.sites())
            .map(|site| {
                let xc = g.coords(site);
                let mut sum = 0.0;
                for (a, b) in xc.iter().zip(&x0) {
                    let delta = g.centered((a + g.side() - b) % g.side()) as f64;
                    sum += delta * delta;
                }
                sum.sqrt()
            })
            .collect()
    };

    let mut times = Vec::with_capacity(kept.len());
    let mut moment = Vec::with_capacity(kept.len());
    let mut entropy = Vec::with_capacity(kept.len());
    let mut fisher = Vec::with_capacity(kept.len());
    let mut diag = Vec::with_capacity(kept.len());
    for &idx in &kept {
        let t = hk.times[idx];
        let q = hk.snapshot(idx);
        times.push(t);
        moment.push(q.iter().zip(&norms).map(|(p, r)| p * r).sum());
        entropy.push(-q.iter().map(|&p| if p > 0.0 { p * p.ln() } else { 0.0 }).sum::<f64>());
        fisher.push(fisher_form(g, q));
        let max_q = q.iter().fold(0.0f64, |a, &b| a.max(b));
        diag.push(t.powf(d / 2.0) * max_q);
    }

    let c2hat = diag.iter().fold(0.0f64, |a, &b| a.max(b)).ln() / d;
    let gap: Vec<f64> = times
        .iter()
        .zip(&entropy)
        .map(|(&t, &h)| h / d - 0.5 * t.ln() + c2hat)
        .collect();

    let c1hat = times
        .iter()
        .zip(moment.iter().zip(&entropy))
        .filter(|(_, (m, _))| **m > 1.0)
        .map(|(_, (m, h))| m * (-h / d).exp())
        .fold(f64::INFINITY, f64::min);

    let (hdot, hdot_err) = centered_derivative(&times, &entropy);

    let entropy_monotone_defect = entropy
        .windows(2)
        .map(|w| (w[0] - w[1]).max(0.0))
        .fold(0.0f64, f64::max);

    let bhat = nash_constant_b();
    Ok(NashReport {
        times,
        moment,
        entropy,
        gap,
        hdot,
        hdot_err,
        fisher,
        diag,
        c2hat,
        c1hat,
        c5: bhat * s_star,
        bhat,
        s_star,
        t_wrap: hk.t_wrap,
        entropy_monotone_defect,
        truncated_points,
    })
}

/// Fisher form sum_{x,k} |(q(x+k)-q(x))/(q(x+k)+q(x))|^2 q(x), with empty
/// edges contributing zero.
pub fn fisher_form(g: crate::geometry::TorusGeometry, q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for site in 0..g.sites() {
        if q[site] == 0.0 {
            // the |.|^2 weight is bounded by 1, so the term vanishes
            continue;
        }
        for dir in g.directions() {
            let other = q[g.neighbor(site, dir)];
            let denom = other + q[site];
            if denom > 0.0 {
                let r = (other - q[site]) / denom;
                acc += r * r * q[site];
            }
        }
    }
    acc
}

/// Centered three-point derivative on a nonuniform grid, with a wide-stencil
/// Richardson error estimate where two neighbours exist on both sides.
fn centered_derivative(t: &[f64], h: &[f64]) -> (Vec<Option<f64>>, Vec<Option<f64>>) {
    let n = t.len();
    let mut deriv = vec![None; n];
    let mut err = vec![None; n];
    let three_point = |im: usize, i: usize, ip: usize| -> f64 {
        let dt0 = t[i] - t[im];
        let dt1 = t[ip] - t[i];
        (h[ip] * dt0 / dt1 - h[im] * dt1 / dt0 + h[i] * (dt1 / dt0 - dt0 / dt1)) / (dt0 + dt1)
    };
    for i in 1..n.saturating_sub(1) {
        deriv[i] = Some(three_point(i - 1, i, i + 1));
    }
    for i in 2..n.saturating_sub(2) {
        let wide = three_point(i - 2, i, i + 2);
        // halving the stencil scales the quadratic error by ~4
        err[i] = Some((deriv[i].unwrap() - wide).abs() / 3.0);
    }
    (deriv, err)
}

/// Outcome of the entropy-production bound check.
#[derive(Debug, Clone, Serialize)]
pub struct EntropyProductionReport {
    pub times: Vec<f64>,
    pub hdot: Vec<f64>,
    pub fisher: Vec<f64>,
    /// Allowed slack per point: twice the differencing error estimate.
    pub slack: Vec<f64>,
    pub c5: f64,
    /// min over points of hdot - c5 fisher + slack.
    pub min_margin: f64,
    /// min over points of hdot / (s_* fisher).
    pub min_ratio: f64,
    pub pass: bool,
    /// Points dropped because the differencing error exceeded a tenth of
    /// the bound they were supposed to check.
    pub coarse_points: usize,
}

/// Check dH/dt >= b s_* F(t) - slack on the kernel's grid.
///
/// Points whose differencing error estimate exceeds 10% of the bound are
/// excluded; if more than a fifth of the grid is excluded the grid counts
/// as too coarse and the check fails with an error.
pub fn entropy_production_check(
    env: &TorusEnvironment,
    hk: &HeatKernel,
) -> Result<EntropyProductionReport> {
    let report = nash_functionals(hk, env.s_star())?;
    let c5 = report.c5;
    let mut times = Vec::new();
    let mut hdot = Vec::new();
    let mut fisher = Vec::new();
    let mut slack = Vec::new();
    let mut coarse_points = 0usize;
    let mut usable = 0usize;
    for i in 0..report.times.len() {
        let (Some(d), Some(e)) = (report.hdot[i], report.hdot_err[i]) else {
            continue;
        };
        usable += 1;
        let bound = c5 * report.fisher[i];
        if e > 0.1 * bound && bound > 0.0 {
            coarse_points += 1;
            continue;
        }
        times.push(report.times[i]);
        hdot.push(d);
        fisher.push(report.fisher[i]);
        slack.push(2.0 * e);
    }
    if usable == 0 || coarse_points * 5 > usable {
        return Err(CoreError::Precondition(format!(
            "time grid too coarse for entropy differencing ({coarse_points} of {usable} points unusable)"
        )));
    }
    let mut min_margin = f64::INFINITY;
    let mut min_ratio = f64::INFINITY;
    for i in 0..times.len() {
        min_margin = min_margin.min(hdot[i] - c5 * fisher[i] + slack[i]);
        if fisher[i] > 0.0 {
            min_ratio = min_ratio.min(hdot[i] / (report.s_star * fisher[i]));
        }
    }
    let pass = min_margin >= 0.0;
    Ok(EntropyProductionReport {
        times,
        hdot,
        fisher,
        slack,
        c5,
        min_margin,
        min_ratio,
        pass,
        coarse_points,
    })
}

/// Outcome of the scaled-moment boundedness check.
#[derive(Debug, Clone, Serialize)]
pub struct MomentBoundReport {
    pub times: Vec<f64>,
    /// t^{-1/2} M(t).
    pub scaled_moment: Vec<f64>,
    /// rho(t) = t^{-1/2} M(t) (G(t) + 1/eps)^{-(1+eps)/(2+eps)}.
    pub rho: Vec<f64>,
    /// sup of rho over the grid.
    pub c4hat: f64,
    pub eps: f64,
    pub hstar: f64,
    /// Mean of the scaled moment over the last quarter of the grid divided
    /// by its mean over the middle half; the trend statistic.
    pub tail_to_middle: f64,
    pub pass: bool,
}

/// Trend check: the scaled moment t^{-1/2} M(t) must not grow; the last
/// quarter of the grid may not exceed the middle half by more than 10%.
pub fn moment_bound_check(report: &NashReport, eps: f64, hstar: f64) -> Result<MomentBoundReport> {
    let keep: Vec<usize> = (0..report.times.len())
        .filter(|&i| report.times[i] >= 1.0)
        .collect();
    if keep.len() < 8 {
        return Err(CoreError::Precondition(
            "moment trend needs at least eight grid points with t >= 1".into(),
        ));
    }
    let times: Vec<f64> = keep.iter().map(|&i| report.times[i]).collect();
    let scaled: Vec<f64> = keep
        .iter()
        .map(|&i| report.moment[i] / report.times[i].sqrt())
        .collect();
    let exponent = (1.0 + eps) / (2.0 + eps);
    let rho: Vec<f64> = keep
        .iter()
        .zip(&scaled)
        .map(|(&i, &m)| m * (report.gap[i] + 1.0 / eps).powf(-exponent))
        .collect();
    let c4hat = rho.iter().fold(0.0f64, |a, &b| a.max(b));

    let n = scaled.len();
    let middle: &[f64] = &scaled[n / 4..(3 * n) / 4];
    let tail: &[f64] = &scaled[(3 * n) / 4..];
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let tail_to_middle = mean(tail) / mean(middle);
    let pass = tail_to_middle <= 1.1;
    Ok(MomentBoundReport {
        times,
        scaled_moment: scaled,
        rho,
        c4hat,
        eps,
        hstar,
        tail_to_middle,
        pass,
    })
}
