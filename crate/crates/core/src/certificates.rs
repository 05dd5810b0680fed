//! Hessian eigenvalue bounds from RIP and coherence constants, conditioning
//! intervals, uniform bounds on parameter balls and explicit basin radii.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{c_h_compute, RadialKernel};
use crate::numeric::{derive_seed, dist2, random_in_ball, rng_from_seed};
use crate::objective::Objective;
use crate::spike_model::{pack, unpack, SpikeTrain};

/// Default multiplier applied to an empirical RIP constant before certifying.
pub const DEFAULT_GAMMA_INFLATION: f64 = 1.25;
/// Relative rounding allowance for the lower bound at the ball boundary.
const BOUNDARY_ROUNDING: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Empirical,
    AnalyticBound,
    User,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RipConstants {
    pub gamma: f64,
    pub mu: f64,
    pub provenance: Provenance,
}

impl RipConstants {
    pub fn new(gamma: f64, mu: f64, provenance: Provenance) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!("RIP constant must be finite and >= 0, got {gamma}")));
        }
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(Error::InvalidArgument(format!("coherence must be finite and >= 0, got {mu}")));
        }
        Ok(RipConstants { gamma, mu, provenance })
    }

    /// Empirical constants with `γ ← min(1, factor γ̂)`.
    pub fn inflated(gamma_hat: f64, mu: f64, factor: f64) -> Result<Self> {
        Self::new((factor * gamma_hat).min(1.0), mu, Provenance::Empirical)
    }

    /// `(k − 1) μ`.
    pub fn coherence_load(&self, k: usize) -> f64 {
        (k as f64 - 1.0) * self.mu
    }

    /// Whether the lower eigenvalue factors `1 − Γ` and `1 − (k−1)μ` are positive.
    pub fn is_nonvacuous(&self, k: usize) -> bool {
        self.gamma < 1.0 && self.coherence_load(k) < 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HessianBounds {
    pub lambda_max_ub: f64,
    pub lambda_min_lb: f64,
    pub xi: f64,
    /// Lower bound is not positive.
    pub vacuous: bool,
}

impl HessianBounds {
    /// Interval widened by `fraction` of its width on each side.
    pub fn widened(&self, fraction: f64) -> (f64, f64) {
        let w = (self.lambda_max_ub - self.lambda_min_lb).abs() * fraction;
        (self.lambda_min_lb - w, self.lambda_max_ub + w)
    }

    pub fn contains(&self, lambda: f64, fraction: f64) -> bool {
        let (lo, hi) = self.widened(fraction);
        lambda >= lo && lambda <= hi
    }
}

/// `ξ = 2(d+1) max(a_max √m D, √(1+Γ) √|ρ''(0)|) (gap + ‖e‖)`.
pub fn xi_formula(d: usize, a_max: f64, sqrt_m_d: f64, gamma: f64, rho2_abs: f64, gap: f64, noise: f64) -> f64 {
    2.0 * (d as f64 + 1.0) * (a_max * sqrt_m_d).max((1.0 + gamma).sqrt() * rho2_abs.sqrt()) * (gap + noise)
}

/// `ξ` at `theta`, with `residual_gap = ‖Aφ(θ) − Aφ(θ*)‖₂` and `sqrt_m_d = √m D_{A,R}`.
pub fn xi_bound(
    theta: &SpikeTrain,
    residual_gap: f64,
    noise_norm: f64,
    sqrt_m_d: f64,
    rip: &RipConstants,
    kernel: &RadialKernel,
) -> Result<f64> {
    if residual_gap < 0.0 || noise_norm < 0.0 || sqrt_m_d < 0.0 {
        return Err(Error::InvalidArgument("gap, noise and D must be nonnegative".into()));
    }
    let (_, a_max) = theta.amplitude_extremes();
    Ok(xi_formula(theta.d(), a_max, sqrt_m_d, rip.gamma, kernel.rho2_abs(), residual_gap, noise_norm))
}

fn bounds_from_extremes(k: usize, a_min: f64, a_max: f64, rip: &RipConstants, rho2_abs: f64, xi: f64) -> HessianBounds {
    let load = rip.coherence_load(k);
    let upper = 2.0 * (1.0 + rip.gamma) * (1.0 + load) * 1f64.max(a_max * a_max * rho2_abs) + xi;
    let lower = 2.0 * (1.0 - rip.gamma) * (1.0 - load) * 1f64.min(a_min * a_min * rho2_abs) - xi;
    HessianBounds { lambda_max_ub: upper, lambda_min_lb: lower, xi, vacuous: !(lower > 0.0) }
}

/// Eigenvalue bounds of the Hessian at `theta` for a given `ξ`.
pub fn eigen_bounds_at(theta: &SpikeTrain, rip: &RipConstants, kernel: &RadialKernel, xi: f64) -> HessianBounds {
    let (a_min, a_max) = theta.amplitude_extremes();
    bounds_from_extremes(theta.k(), a_min, a_max, rip, kernel.rho2_abs(), xi)
}

/// Interval for the condition number of the Hessian at a noiseless minimum.
pub fn conditioning_bounds(theta: &SpikeTrain, rip: &RipConstants, kernel: &RadialKernel) -> Result<(f64, f64)> {
    let (a_min, a_max) = theta.amplitude_extremes();
    if a_min == 0.0 {
        return Err(Error::ZeroAmplitude);
    }
    let rho = kernel.rho2_abs();
    let hi_term = 1f64.max(a_max * a_max * rho);
    let lo_term = 1f64.min(a_min * a_min * rho);
    let g = rip.gamma;
    let load = rip.coherence_load(theta.k());
    let lower = (1.0 - g) * hi_term / ((1.0 + g) * lo_term);
    let upper = (1.0 + g) * (1.0 + load) * hi_term / ((1.0 - g) * (1.0 - load) * lo_term);
    Ok((lower, upper))
}

fn check_ball_radius(theta_star: &SpikeTrain, beta: f64, constrained: bool) -> Result<()> {
    let (a_min, _) = theta_star.amplitude_extremes();
    if !(beta >= 0.0) {
        return Err(Error::BetaTooLarge { beta, reason: "radius must be nonnegative".into() });
    }
    if a_min == 0.0 {
        return Err(Error::ZeroAmplitude);
    }
    if beta >= a_min {
        return Err(Error::BetaTooLarge { beta, reason: format!("must stay below min |a_r| = {a_min}") });
    }
    let quarter = theta_star.config().epsilon / 4.0;
    if !constrained && beta > quarter {
        return Err(Error::BetaTooLarge { beta, reason: format!("unconstrained balls need beta <= epsilon/4 = {quarter}") });
    }
    Ok(())
}

/// Bounds valid on the whole ball `‖θ − θ*‖ < β` (intersected with the
/// separated set when `constrained`), with amplitude extremes `|a_1| − β`
/// and `|a_k| + β`. `ξ` uses the caller's supremum of the residual gap.
#[allow(clippy::too_many_arguments)]
pub fn uniform_bounds_on_ball(
    theta_star: &SpikeTrain,
    beta: f64,
    rip: &RipConstants,
    kernel: &RadialKernel,
    sup_residual_gap: f64,
    noise_norm: f64,
    sqrt_m_d: f64,
    constrained: bool,
) -> Result<HessianBounds> {
    check_ball_radius(theta_star, beta, constrained)?;
    let (a_min, a_max) = theta_star.amplitude_extremes();
    let rho = kernel.rho2_abs();
    let xi = xi_formula(theta_star.d(), a_max, sqrt_m_d, rip.gamma, rho, sup_residual_gap, noise_norm);
    Ok(bounds_from_extremes(theta_star.k(), a_min - beta, a_max + beta, rip, rho, xi))
}

/// `√(1+Γ) √(1+(k−1)μ) β √(1 + 2|ρ''(0)| ‖a*‖²)`, bounding `‖Aφ(θ) − Aφ(θ*)‖` on the ball.
pub fn analytic_gap_bound(theta_star: &SpikeTrain, beta: f64, rip: &RipConstants, kernel: &RadialKernel) -> f64 {
    let an = theta_star.amplitude_norm();
    (1.0 + rip.gamma).sqrt()
        * (1.0 + rip.coherence_load(theta_star.k())).sqrt()
        * beta
        * (1.0 + 2.0 * kernel.rho2_abs() * an * an).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapEstimate {
    /// Value to use inside `ξ`.
    pub value: f64,
    pub analytic: f64,
    pub empirical: f64,
    /// The sampled maximum exceeded the analytic bound.
    pub flagged: bool,
}

/// Supremum of `‖Aφ(θ) − Aφ(θ*)‖₂` over the closed ball of radius β:
/// the analytic bound, raised to the sampled maximum if sampling exceeds it.
///
/// Half the samples lie on the sphere, half uniformly inside.
pub fn sup_residual_gap_estimate(
    obj: &Objective,
    theta_star: &SpikeTrain,
    beta: f64,
    samples: usize,
    seed: u64,
    rip: &RipConstants,
    kernel: &RadialKernel,
) -> Result<GapEstimate> {
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be at least 1".into()));
    }
    if !(beta >= 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be nonnegative, got {beta}")));
    }
    let analytic = analytic_gap_bound(theta_star, beta, rip, kernel);
    if beta == 0.0 {
        return Ok(GapEstimate { value: 0.0, analytic: 0.0, empirical: 0.0, flagged: false });
    }
    let op = obj.operator();
    let base = op.apply(theta_star)?;
    let center = pack(theta_star);
    let cfg = *theta_star.config();
    let gaps: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from_seed(derive_seed(seed, i as u64));
            let mut delta = random_in_ball(&mut rng, center.len(), beta);
            if i % 2 == 0 {
                let n = dist2(&delta, &vec![0.0; delta.len()]);
                if n > 0.0 {
                    delta.iter_mut().for_each(|x| *x *= beta / n);
                }
            }
            let theta: Vec<f64> = center.iter().zip(&delta).map(|(c, x)| c + x).collect();
            let th = unpack(&cfg, &theta)?;
            Ok((&op.apply(&th)? - &base).norm())
        })
        .collect::<Result<_>>()?;
    let empirical = gaps.into_iter().fold(0.0, f64::max);
    let flagged = empirical > analytic;
    if flagged {
        log::warn!("sampled residual gap {empirical} exceeds analytic bound {analytic}");
    }
    Ok(GapEstimate { value: analytic.max(empirical), analytic, empirical, flagged })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinCertificate {
    pub beta_max: f64,
    pub c1: f64,
    pub c2_or_c3: f64,
    pub c_h_used: f64,
    pub q_relaxation: f64,
    /// Gradient Lipschitz bound on the ball of radius `beta_max`.
    #[serde(rename = "L")]
    pub lipschitz: f64,
    pub tau_max: f64,
    pub noise_budget: Option<f64>,
    pub noise_norm: Option<f64>,
    pub xi: f64,
    pub gap_bound: f64,
    pub bounds_at_beta: HessianBounds,
    pub gamma: f64,
    pub mu: f64,
    pub provenance: Provenance,
    pub rho2_abs: f64,
    pub sqrt_m_d: f64,
    pub vacuous: bool,
    pub assumptions_log: Vec<String>,
}

/// Scalar inputs of the basin-radius formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateInputs {
    pub k: usize,
    pub d: usize,
    pub epsilon: f64,
    /// `|a_1|`, the smallest amplitude magnitude.
    pub a_min: f64,
    /// `|a_k|`, the largest amplitude magnitude.
    pub a_max: f64,
    pub a_norm: f64,
    pub rho2_abs: f64,
    pub sqrt_m_d: f64,
    pub c_h: f64,
    pub q: f64,
    pub rip: RipConstants,
    /// `Some` selects the noisy radius.
    pub noise_norm: Option<f64>,
}

impl CertificateInputs {
    pub fn from_parts(
        theta_star: &SpikeTrain,
        rip: RipConstants,
        kernel: &RadialKernel,
        sqrt_m_d: f64,
        c_h: f64,
        q: f64,
        noise_norm: Option<f64>,
    ) -> Self {
        let (a_min, a_max) = theta_star.amplitude_extremes();
        CertificateInputs {
            k: theta_star.k(),
            d: theta_star.d(),
            epsilon: theta_star.config().epsilon,
            a_min,
            a_max,
            a_norm: theta_star.amplitude_norm(),
            rho2_abs: kernel.rho2_abs(),
            sqrt_m_d,
            c_h,
            q,
            rip,
            noise_norm,
        }
    }
}

/// Basin radius `β_max = min(c_h, |a_1|/2, C_1 C)` with `C = C_2` (noiseless)
/// or `C = C_3` (noisy), plus the step bound `τ_max = 1/L` on that ball.
pub fn certify(inputs: &CertificateInputs) -> Result<BasinCertificate> {
    let CertificateInputs { k, d, epsilon, a_min, a_max, a_norm, rho2_abs: rho, sqrt_m_d, c_h, q, rip, noise_norm } =
        *inputs;
    if a_min == 0.0 {
        return Err(Error::ZeroAmplitude);
    }
    if let Some(e) = noise_norm {
        if !(e >= 0.0) {
            return Err(Error::InvalidArgument(format!("noise norm must be nonnegative, got {e}")));
        }
    }
    let mut log = Vec::new();
    let g = rip.gamma;
    let load = rip.coherence_load(k);
    let root_g = (1.0 + g).sqrt();
    let root_load = (1.0 + load).sqrt();

    let c1 = (1.0 - g) * (1.0 - load) / ((d as f64 + 1.0) * root_g * root_load);
    let spread = (1.0 + 2.0 * rho * a_norm * a_norm).sqrt();
    let head = 1f64.min(a_min * a_min * rho / 4.0);
    let scale = (a_max * sqrt_m_d).max(root_g * rho.sqrt());
    let c = match noise_norm {
        None => head / (scale * spread),
        Some(_) => head / (scale * (1.0 + spread)),
    };
    let beta_max = c_h.min(a_min / 2.0).min(c1 * c);

    let gap_bound = root_g * root_load * beta_max.max(0.0) * spread;
    let noise = noise_norm.unwrap_or(0.0);
    let xi = xi_formula(d, a_max, sqrt_m_d, g, rho, gap_bound, noise);
    let bounds_at_beta = bounds_from_extremes(k, a_min - beta_max, a_max + beta_max, &rip, rho, xi);
    let lipschitz = bounds_at_beta.lambda_max_ub;
    let tau_max = 1.0 / lipschitz;

    let noise_budget = noise_norm.map(|_| root_g * root_load * beta_max);

    log.push(format!(
        "constants: gamma = {g} ({:?}), mu = {} so (k-1)mu = {load}; amplitudes |a_1| = {a_min}, |a_k| = {a_max}",
        rip.provenance, rip.mu
    ));
    log.push(format!("c_h = {c_h} at relaxation q = {q}"));
    log.push(format!(
        "residual gap on the ball bounded analytically by {gap_bound:e}; xi = {xi:e}"
    ));
    let mut vacuous = false;
    if g >= 1.0 {
        log.push("vacuous: RIP constant >= 1".into());
        vacuous = true;
    }
    if load >= 1.0 {
        log.push("vacuous: (k-1) mu >= 1".into());
        vacuous = true;
    }
    if !(beta_max > 0.0) {
        log.push(format!("vacuous: beta_max = {beta_max} is not positive"));
        vacuous = true;
    }
    // at beta_max the construction gives xi equal to the lower-bound head whenever
    // min(1, a_1^2 |rho''|) = 1, so the bound there is zero up to rounding
    let head_term = 2.0 * (1.0 - g) * (1.0 - load) * 1f64.min((a_min - beta_max).powi(2) * rho);
    if bounds_at_beta.lambda_min_lb < -BOUNDARY_ROUNDING * head_term.abs() || !(head_term > 0.0) {
        log.push(format!("vacuous: Hessian lower bound {} at beta_max is negative", bounds_at_beta.lambda_min_lb));
        vacuous = true;
    } else if bounds_at_beta.vacuous {
        log.push(format!(
            "Hessian lower bound at beta_max is {:e} (zero up to rounding); positive on the open ball",
            bounds_at_beta.lambda_min_lb
        ));
    }
    if beta_max > epsilon / 4.0 {
        log.push(format!("warning: beta_max exceeds epsilon/4 = {}, outside the unconstrained ball hypothesis", epsilon / 4.0));
    }
    if rip.provenance == Provenance::Empirical {
        log.push("RIP/coherence constants are sampled lower bounds, not proofs".into());
    }
    if let (Some(e), Some(budget)) = (noise_norm, noise_budget) {
        if e > budget {
            return Err(Error::NoiseBudgetExceeded { noise: e, budget });
        }
        log.push(format!("noise norm {e:e} within budget {budget:e}"));
    }

    Ok(BasinCertificate {
        beta_max,
        c1,
        c2_or_c3: c,
        c_h_used: c_h,
        q_relaxation: q,
        lipschitz,
        tau_max,
        noise_budget,
        noise_norm,
        xi,
        gap_bound,
        bounds_at_beta,
        gamma: g,
        mu: rip.mu,
        provenance: rip.provenance,
        rho2_abs: rho,
        sqrt_m_d,
        vacuous,
        assumptions_log: log,
    })
}

/// Noiseless basin certificate; `d_a_r` and `m` give `√m D_{A,R}`, and
/// `c_h` is computed from the kernel at relaxation `q`.
pub fn beta_max_noiseless(
    theta_star: &SpikeTrain,
    rip: &RipConstants,
    kernel: &RadialKernel,
    d_a_r: f64,
    m: usize,
    q: f64,
) -> Result<BasinCertificate> {
    let c_h = c_h_compute(kernel, theta_star.config().epsilon, q)?;
    let sqrt_m_d = (m as f64).sqrt() * d_a_r;
    certify(&CertificateInputs::from_parts(theta_star, *rip, kernel, sqrt_m_d, c_h, q, None))
}

/// Noisy basin certificate; fails with `NoiseBudgetExceeded` when
/// `noise_norm > √(1+Γ) √(1+(k−1)μ) β_max`.
pub fn beta_max_noisy(
    theta_star: &SpikeTrain,
    rip: &RipConstants,
    kernel: &RadialKernel,
    d_a_r: f64,
    m: usize,
    noise_norm: f64,
    q: f64,
) -> Result<BasinCertificate> {
    let c_h = c_h_compute(kernel, theta_star.config().epsilon, q)?;
    let sqrt_m_d = (m as f64).sqrt() * d_a_r;
    certify(&CertificateInputs::from_parts(theta_star, *rip, kernel, sqrt_m_d, c_h, q, Some(noise_norm)))
}

/// One CSV row per certificate: `gamma,mu,noise,beta_max,c1,c2_or_c3,L,tau_max,vacuous`.
pub fn write_sweep_csv<W: Write>(mut w: W, certificates: &[BasinCertificate]) -> Result<()> {
    writeln!(w, "gamma,mu,noise,beta_max,c1,c2_or_c3,L,tau_max,vacuous")?;
    for c in certificates {
        writeln!(
            w,
            "{},{},{},{:e},{:e},{:e},{:e},{:e},{}",
            c.gamma,
            c.mu,
            c.noise_norm.unwrap_or(0.0),
            c.beta_max,
            c.c1,
            c.c2_or_c3,
            c.lipschitz,
            c.tau_max,
            c.vacuous
        )?;
    }
    Ok(())
}
