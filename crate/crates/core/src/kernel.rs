//! Radial translation-invariant kernels `h(t, s) = ρ(‖t − s‖)` and the
//! bilinear calculus they induce on sums of generalized dipoles.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{derive_seed, dot, integrate, norm2, random_in_ball, random_unit_vector, rng_from_seed};
use crate::spike_model::{GeneralizedDipole, ModelConfig};

const QUAD_REL_TOL: f64 = 1e-9;

/// An even, C² convolution profile `K` on the real line.
pub trait ConvolutionProfile: Send + Sync + fmt::Debug {
    fn value(&self, x: f64) -> f64;
    fn derivative(&self, x: f64) -> f64;
    fn second_derivative(&self, x: f64) -> f64;
    fn name(&self) -> String;
}

/// `K(x) = exp(-x² / (2 w²))`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianProfile {
    pub width: f64,
}

impl ConvolutionProfile for GaussianProfile {
    fn value(&self, x: f64) -> f64 {
        (-x * x / (2.0 * self.width * self.width)).exp()
    }
    fn derivative(&self, x: f64) -> f64 {
        -x / (self.width * self.width) * self.value(x)
    }
    fn second_derivative(&self, x: f64) -> f64 {
        let w2 = self.width * self.width;
        (x * x / (w2 * w2) - 1.0 / w2) * self.value(x)
    }
    fn name(&self) -> String {
        format!("gaussian(width={})", self.width)
    }
}

#[derive(Clone)]
enum Shape {
    Gaussian {
        sigma: f64,
    },
    Convolution {
        profile: Arc<dyn ConvolutionProfile>,
        support: f64,
        scale: f64,
        rho2_at_0: f64,
    },
}

#[derive(Clone)]
pub struct RadialKernel {
    shape: Shape,
    name: String,
}

impl fmt::Debug for RadialKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RadialKernel").field("name", &self.name).finish()
    }
}

/// Gaussian kernel `ρ(u) = exp(-u² / (2σ²))`, so `ρ''(0) = -1/σ²`.
pub fn gaussian_kernel(sigma: f64) -> Result<RadialKernel> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    Ok(RadialKernel { shape: Shape::Gaussian { sigma }, name: format!("gaussian(sigma={sigma})") })
}

/// Width `σ_k = (2.4 ln(2k-1) + 24)^{-1/2}` tuned for unit separation.
pub fn sigma_from_k(k: usize) -> f64 {
    let k = k.max(1) as f64;
    (1.0 / (2.4 * (2.0 * k - 1.0).ln() + 24.0)).sqrt()
}

/// Coherence bound `3 / (4(k-1))` of the σ_k Gaussian at unit separation.
pub fn coherence_bound(k: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("coherence bound needs k >= 2, got {k}")));
    }
    Ok(3.0 / (4.0 * (k as f64 - 1.0)))
}

impl RadialKernel {
    pub fn name(&self) -> &str {
        &self.name
    }

    /// Gaussian width, if this is the built-in Gaussian.
    pub fn sigma(&self) -> Option<f64> {
        match self.shape {
            Shape::Gaussian { sigma } => Some(sigma),
            Shape::Convolution { .. } => None,
        }
    }

    /// Normalization `[K*K](0)` of a convolution kernel.
    pub fn convolution_scale(&self) -> Option<f64> {
        match self.shape {
            Shape::Convolution { scale, .. } => Some(scale),
            Shape::Gaussian { .. } => None,
        }
    }

    pub fn rho(&self, u: f64) -> f64 {
        match &self.shape {
            Shape::Gaussian { sigma } => (-u * u / (2.0 * sigma * sigma)).exp(),
            Shape::Convolution { profile, support, scale, .. } => {
                autocorrelation(profile.as_ref(), *support, u, |p, x| p.value(x)) / scale
            }
        }
    }

    /// `1 - ρ(u)`, computed without cancellation for the Gaussian.
    pub fn one_minus_rho(&self, u: f64) -> f64 {
        match &self.shape {
            Shape::Gaussian { sigma } => -(-u * u / (2.0 * sigma * sigma)).exp_m1(),
            Shape::Convolution { .. } => 1.0 - self.rho(u),
        }
    }

    pub fn rho1(&self, u: f64) -> f64 {
        match &self.shape {
            Shape::Gaussian { sigma } => -u / (sigma * sigma) * self.rho(u),
            Shape::Convolution { profile, support, scale, .. } => {
                autocorrelation(profile.as_ref(), *support, u, |p, x| p.derivative(x)) / scale
            }
        }
    }

    pub fn rho2(&self, u: f64) -> f64 {
        match &self.shape {
            Shape::Gaussian { sigma } => {
                let s2 = sigma * sigma;
                (u * u / (s2 * s2) - 1.0 / s2) * self.rho(u)
            }
            Shape::Convolution { profile, support, scale, .. } => {
                autocorrelation(profile.as_ref(), *support, u, |p, x| p.second_derivative(x)) / scale
            }
        }
    }

    pub fn rho2_at_0(&self) -> f64 {
        match &self.shape {
            Shape::Gaussian { sigma } => -1.0 / (sigma * sigma),
            Shape::Convolution { rho2_at_0, .. } => *rho2_at_0,
        }
    }

    /// `|ρ''(0)|`.
    pub fn rho2_abs(&self) -> f64 {
        self.rho2_at_0().abs()
    }

    /// `f(t) = ρ(‖t‖)`.
    pub fn f(&self, t: &[f64]) -> f64 {
        self.rho(norm2(t))
    }

    /// Directional derivative `f'_v(t) = ⟨∇f(t), v⟩`.
    pub fn f_dir(&self, t: &[f64], v: &[f64]) -> f64 {
        match self.shape {
            Shape::Gaussian { sigma } => -dot(v, t) / (sigma * sigma) * self.f(t),
            Shape::Convolution { .. } => {
                let r = norm2(t);
                if r == 0.0 {
                    0.0
                } else {
                    self.rho1(r) * dot(v, t) / r
                }
            }
        }
    }

    /// Second directional derivative `f''_{v1,v2}(t) = ⟨v1, ∇²f(t) v2⟩`.
    pub fn f_dir2(&self, t: &[f64], v1: &[f64], v2: &[f64]) -> f64 {
        match self.shape {
            Shape::Gaussian { sigma } => {
                let s2 = sigma * sigma;
                (dot(v1, t) * dot(v2, t) / (s2 * s2) - dot(v1, v2) / s2) * self.f(t)
            }
            Shape::Convolution { .. } => {
                let r = norm2(t);
                let v12 = dot(v1, v2);
                if r < 1e-12 {
                    return self.rho2_at_0() * v12;
                }
                let p1 = dot(v1, t) / r;
                let p2 = dot(v2, t) / r;
                self.rho2(r) * p1 * p2 + self.rho1(r) / r * (v12 - p1 * p2)
            }
        }
    }
}

fn autocorrelation<F>(profile: &dyn ConvolutionProfile, support: f64, u: f64, second: F) -> f64
where
    F: Fn(&dyn ConvolutionProfile, f64) -> f64,
{
    // ∫ K(s) G(s + u) ds over the overlap of both supports
    let lo = (-support).max(-support - u);
    let hi = support.min(support - u);
    if hi <= lo {
        return 0.0;
    }
    integrate(|s| profile.value(s) * second(profile, s + u), lo, hi, QUAD_REL_TOL, 1e-300)
        .unwrap_or(f64::NAN)
}

/// Kernel whose profile is the normalized autocorrelation `[K*K](u) / [K*K](0)`
/// of an even profile `K` supported on `[-support_radius, support_radius]` (d = 1).
pub fn kernel_from_convolution(
    profile: Arc<dyn ConvolutionProfile>,
    support_radius: f64,
) -> Result<RadialKernel> {
    if !(support_radius > 0.0 && support_radius.is_finite()) {
        return Err(Error::InvalidArgument(format!("support radius must be positive, got {support_radius}")));
    }
    let s = support_radius;
    let scale = integrate(|x| profile.value(x).powi(2), -s, s, QUAD_REL_TOL, 1e-300)?;
    if !(scale > 0.0) {
        return Err(Error::Quadrature(format!("degenerate autocorrelation at 0: {scale}")));
    }
    let raw2 = integrate(|x| profile.value(x) * profile.second_derivative(x), -s, s, QUAD_REL_TOL, 1e-300)?;
    let rho2_at_0 = raw2 / scale;
    if !(rho2_at_0 < 0.0) {
        return Err(Error::InvalidArgument(format!("profile gives rho''(0) = {rho2_at_0}, must be negative")));
    }
    let name = format!("convolution({}, support={s})", profile.name());
    Ok(RadialKernel { shape: Shape::Convolution { profile, support: s, scale, rho2_at_0 }, name })
}

/// Unnormalized `[K*K](u)`; the kernel's `ρ(u)` times its scale.
pub fn raw_autocorrelation(kernel: &RadialKernel, u: f64) -> Option<f64> {
    kernel.convolution_scale().map(|scale| kernel.rho(u) * scale)
}

/// Closed-form kernel inner product of two generalized dipoles:
/// `a1 a2 f(t1-t2) - a2 b1 f'_{v1}(t1-t2) - a1 b2 f'_{v2}(t2-t1) - b1 b2 f''_{v1,v2}(t1-t2)`.
pub fn dipole_inner(nu1: &GeneralizedDipole, nu2: &GeneralizedDipole, kernel: &RadialKernel) -> Result<f64> {
    for nu in [nu1, nu2] {
        if nu.b != 0.0 {
            let n = norm2(&nu.v);
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::NonUnitDirection { norm: n });
            }
        }
    }
    if nu1.t.len() != nu2.t.len() {
        return Err(Error::DimensionMismatch { expected: nu1.t.len(), got: nu2.t.len() });
    }
    let diff: Vec<f64> = nu1.t.iter().zip(&nu2.t).map(|(x, y)| x - y).collect();
    let neg: Vec<f64> = diff.iter().map(|x| -x).collect();
    let mut value = nu1.a * nu2.a * kernel.f(&diff);
    if nu1.b != 0.0 {
        value -= nu2.a * nu1.b * kernel.f_dir(&diff, &nu1.v);
    }
    if nu2.b != 0.0 {
        value -= nu1.a * nu2.b * kernel.f_dir(&neg, &nu2.v);
    }
    if nu1.b != 0.0 && nu2.b != 0.0 {
        value -= nu1.b * nu2.b * kernel.f_dir2(&diff, &nu1.v, &nu2.v);
    }
    Ok(value)
}

/// `‖Σ ν_i‖_h` by full bilinear expansion.
pub fn measure_norm_h(dipoles: &[GeneralizedDipole], kernel: &RadialKernel) -> Result<f64> {
    let sq = measure_norm_h_sq(dipoles, kernel)?;
    if sq < 0.0 {
        if sq < -1e-10 {
            log::warn!("kernel Gram form negative ({sq:e}); clamping to 0");
        }
        return Ok(0.0);
    }
    Ok(sq.sqrt())
}

/// `‖Σ ν_i‖²_h` without clamping.
pub fn measure_norm_h_sq(dipoles: &[GeneralizedDipole], kernel: &RadialKernel) -> Result<f64> {
    if dipoles.is_empty() {
        return Err(Error::InvalidArgument("empty dipole list".into()));
    }
    let mut total = 0.0;
    for (i, x) in dipoles.iter().enumerate() {
        total += dipole_inner(x, x, kernel)?;
        for y in &dipoles[i + 1..] {
            total += 2.0 * dipole_inner(x, y, kernel)?;
        }
    }
    Ok(total)
}

/// Largest radius `c ≤ ε/2` with `ρ(t) ≤ 1 - q |ρ''(0)| t² / 2` on `[0, c]`.
///
/// Scans a grid of step at most `c / 10⁴` for the first violation, then
/// bisects the crossing.
pub fn c_h_compute(kernel: &RadialKernel, epsilon: f64, q: f64) -> Result<f64> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidArgument(format!("relaxation q must lie in (0, 1], got {q}")));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    const GRID: usize = 10_000;
    let curvature = q * kernel.rho2_abs() / 2.0;
    // nonnegative exactly where the inequality holds
    let slack = |t: f64| kernel.one_minus_rho(t) - curvature * t * t;
    let cap = epsilon / 2.0;

    let bisect = |mut good: f64, mut bad: f64| {
        for _ in 0..200 {
            let mid = 0.5 * (good + bad);
            if slack(mid) >= 0.0 {
                good = mid;
            } else {
                bad = mid;
            }
            if bad - good <= f64::EPSILON * bad {
                break;
            }
        }
        good
    };

    let mut span = cap;
    loop {
        let h = span / GRID as f64;
        let first_bad = (1..=GRID).find(|&i| slack(i as f64 * h) < 0.0);
        match first_bad {
            None if span == cap => return Ok(cap),
            // the zoomed span ends at a known violation; only rounding gets here
            None => return Ok(bisect(span - h, span).min(cap)),
            Some(1) => {
                // below this scale the slack is lost to rounding
                if h < cap * 1e-7 {
                    return Err(Error::NoValidRadius { q });
                }
                span = h;
            }
            Some(i) if i < GRID => {
                // grid too coarse relative to the crossing; zoom in
                span = i as f64 * h;
            }
            Some(i) => return Ok(bisect((i - 1) as f64 * h, i as f64 * h).min(cap)),
        }
    }
}

fn random_generalized_dipole<R: Rng + ?Sized>(rng: &mut R, t: Vec<f64>) -> GeneralizedDipole {
    let d = t.len();
    let a: f64 = rng.random_range(-1.0..1.0);
    let b: f64 = rng.random_range(-1.0..1.0);
    GeneralizedDipole { a, b, v: random_unit_vector(rng, d), t }
}

/// Two generalized dipoles whose supports are more than `epsilon` apart.
pub fn sample_separated_pair<R: Rng + ?Sized>(
    rng: &mut R,
    config: &ModelConfig,
    epsilon: f64,
) -> (GeneralizedDipole, GeneralizedDipole) {
    let d = config.d;
    let t1 = random_in_ball(rng, d, config.radius);
    let t2 = if rng.random::<bool>() {
        // near the separation boundary, where coherence peaks
        let dir = random_unit_vector(rng, d);
        let r = epsilon * (1.0 + 1e-9 + 0.5 * rng.random::<f64>());
        t1.iter().zip(&dir).map(|(x, u)| x + r * u).collect()
    } else {
        loop {
            let cand = random_in_ball(rng, d, config.radius + epsilon);
            let sep = cand.iter().zip(&t1).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            if sep > epsilon {
                break cand;
            }
        }
    };
    (random_generalized_dipole(rng, t1), random_generalized_dipole(rng, t2))
}

/// Empirical mutual coherence: the largest normalized inner product over
/// `trials` random pairs of `config.epsilon`-separated generalized dipoles.
///
/// This is a lower bound on the true coherence constant.
pub fn coherence_estimate(kernel: &RadialKernel, config: &ModelConfig, trials: usize, seed: u64) -> Result<f64> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let eps = config.epsilon;
    let values: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from_seed(derive_seed(seed, i as u64));
            let (x, y) = sample_separated_pair(&mut rng, config, eps);
            normalized_inner(&x, &y, kernel)
        })
        .collect::<Result<_>>()?;
    Ok(values.into_iter().fold(0.0, f64::max))
}

/// `|⟨x, y⟩_h| / (‖x‖_h ‖y‖_h)`, or 0 when either norm vanishes.
pub fn normalized_inner(x: &GeneralizedDipole, y: &GeneralizedDipole, kernel: &RadialKernel) -> Result<f64> {
    let nx = dipole_inner(x, x, kernel)?.max(0.0).sqrt();
    let ny = dipole_inner(y, y, kernel)?.max(0.0).sqrt();
    if nx == 0.0 || ny == 0.0 {
        return Ok(0.0);
    }
    Ok(dipole_inner(x, y, kernel)?.abs() / (nx * ny))
}

/// Where the coherence constant used for certification came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoherenceSource {
    Empirical,
    AnalyticBound,
    User,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherenceChoice {
    pub mu: f64,
    pub source: CoherenceSource,
    pub empirical: f64,
    pub analytic_bound: Option<f64>,
}

/// Picks `max(empirical, 3/(4(k-1)))` when the kernel is the σ_k Gaussian
/// (positions rescaled by 1/ε, so σ = ε σ_k), the empirical value otherwise.
pub fn select_coherence(empirical: f64, kernel: &RadialKernel, config: &ModelConfig) -> CoherenceChoice {
    let analytic_bound = match kernel.sigma() {
        Some(sigma) if config.k >= 2 => {
            let target = config.epsilon * sigma_from_k(config.k);
            if ((sigma - target) / target).abs() < 1e-9 {
                coherence_bound(config.k).ok()
            } else {
                None
            }
        }
        _ => None,
    };
    match analytic_bound {
        Some(b) if b >= empirical => {
            log::info!("coherence: using analytic bound {b} (empirical {empirical})");
            CoherenceChoice { mu: b, source: CoherenceSource::AnalyticBound, empirical, analytic_bound }
        }
        _ => {
            log::info!("coherence: using empirical estimate {empirical}");
            CoherenceChoice { mu: empirical, source: CoherenceSource::Empirical, empirical, analytic_bound }
        }
    }
}

/// Kernel selection as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelSpec {
    Gaussian {
        sigma: f64,
    },
    /// Gaussian with σ = ε σ_k.
    GaussianAutoK,
    Convolution {
        profile: String,
        width: f64,
        #[serde(default)]
        support_radius: Option<f64>,
    },
}

impl KernelSpec {
    pub fn build(&self, config: &ModelConfig) -> Result<RadialKernel> {
        match self {
            KernelSpec::Gaussian { sigma } => gaussian_kernel(*sigma),
            KernelSpec::GaussianAutoK => gaussian_kernel(config.epsilon * sigma_from_k(config.k)),
            KernelSpec::Convolution { profile, width, support_radius } => {
                if config.d != 1 {
                    return Err(Error::InvalidConfig("convolution kernels need d = 1".into()));
                }
                if profile != "gaussian" {
                    return Err(Error::InvalidConfig(format!("unknown convolution profile '{profile}'")));
                }
                if !(*width > 0.0) {
                    return Err(Error::InvalidConfig(format!("profile width must be positive, got {width}")));
                }
                let support = support_radius.unwrap_or(12.0 * width);
                kernel_from_convolution(Arc::new(GaussianProfile { width: *width }), support)
            }
        }
    }
}
