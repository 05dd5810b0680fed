//! Built-in oracle suites run by `spikebasin validate`.
//!
//! Every check compares a library result against an independent evaluation
//! (finite differences, direct sums, quadrature, eigensolvers) and records
//! the observed discrepancy next to its tolerance.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::certificates::{beta_max_noiseless, beta_max_noisy, uniform_bounds_on_ball, Provenance, RipConstants};
use crate::error::{Error, Result};
use crate::experiment::{certify_scenario, generate, CertifyOptions, ScenarioConfig};
use crate::kernel::{
    dipole_inner, gaussian_kernel, kernel_from_convolution, measure_norm_h_sq, normalized_inner, raw_autocorrelation,
    ConvolutionProfile, GaussianProfile, RadialKernel,
};
use crate::linalg::symmetric_eigenvalues;
use crate::measurement::{draw_gaussian_operator, FourierOperator};
use crate::numeric::{derive_seed, integrate, random_unit_vector, rng_from_seed};
use crate::objective::Objective;
use crate::spike_model::{pack, perturb, sample_theta, AmplitudeRange, GeneralizedDipole, ModelConfig, SpikeTrain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Derivatives,
    Kernel,
    Bounds,
    All,
}

impl std::str::FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "derivatives" => Ok(Suite::Derivatives),
            "kernel" => Ok(Suite::Kernel),
            "bounds" => Ok(Suite::Bounds),
            "all" => Ok(Suite::All),
            _ => Err(Error::InvalidArgument(format!("unknown suite '{s}' (derivatives|kernel|bounds|all)"))),
        }
    }
}

/// How a check compares its value with the tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    AtMost,
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub suite: String,
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub comparison: Comparison,
    pub passed: bool,
}

impl Check {
    fn at_most(suite: &str, name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Check {
            suite: suite.into(),
            name: name.into(),
            value,
            tolerance,
            comparison: Comparison::AtMost,
            passed: value <= tolerance,
        }
    }

    fn at_least(suite: &str, name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Check {
            suite: suite.into(),
            name: name.into(),
            value,
            tolerance,
            comparison: Comparison::AtLeast,
            passed: value >= tolerance,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "suite,check,value,tolerance,comparison,passed")?;
        for c in &self.checks {
            let cmp = match c.comparison {
                Comparison::AtMost => "<=",
                Comparison::AtLeast => ">=",
            };
            writeln!(w, "{},{},{:e},{:e},{cmp},{}", c.suite, c.name, c.value, c.tolerance, c.passed)?;
        }
        Ok(())
    }
}

/// Gradient implementation under test; swapped out by mutation tests.
pub type GradientFn<'a> = &'a dyn Fn(&Objective, &SpikeTrain) -> Result<Vec<f64>>;

pub fn run(suite: Suite, seed: u64) -> Result<ValidationReport> {
    let mut report = ValidationReport::default();
    let wants = |s: Suite| suite == Suite::All || suite == s;
    if wants(Suite::Derivatives) {
        report.checks.extend(derivative_suite(seed, &|o, t| o.gradient(t))?);
    }
    if wants(Suite::Kernel) {
        report.checks.extend(kernel_suite(seed)?);
    }
    if wants(Suite::Bounds) {
        report.checks.extend(bounds_suite(seed)?);
    }
    Ok(report)
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `‖a − b‖∞ / max(‖b‖∞, floor)`.
fn rel_inf(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff = max_abs(a.iter().zip(b).map(|(x, y)| x - y));
    diff / max_abs(b.iter().copied()).max(floor)
}

/// Random instance: operator, data from one spike train, evaluation point another.
fn instance(k: usize, d: usize, m: usize, seed: u64) -> Result<(Objective, SpikeTrain)> {
    let config = ModelConfig::new(k, d, 0.5, 2.0)?;
    let range = AmplitudeRange::signed_magnitude(0.5, 2.0);
    let op = draw_gaussian_operator(m, 0.4, d, derive_seed(seed, 0))?;
    let truth = sample_theta(&config, &range, derive_seed(seed, 1))?;
    let theta = sample_theta(&config, &range, derive_seed(seed, 2))?;
    let y = op.apply(&truth)?;
    Ok((Objective::new(op, y, config)?, theta))
}

/// Central-difference gradient of `g`.
fn fd_gradient(obj: &Objective, theta: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(theta.len());
    let mut x = theta.to_vec();
    for i in 0..theta.len() {
        x[i] = theta[i] + h;
        let up = obj.eval_packed(&x)?;
        x[i] = theta[i] - h;
        let down = obj.eval_packed(&x)?;
        x[i] = theta[i];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

pub fn derivative_suite(seed: u64, gradient: GradientFn) -> Result<Vec<Check>> {
    const S: &str = "derivatives";
    let mut checks = Vec::new();
    let mut worst_grad = 0.0_f64;
    let mut worst_hess = 0.0_f64;
    let mut case = 0;
    for d in [1, 2] {
        for k in [1, 2, 3] {
            for rep in 0..2 {
                case += 1;
                let (obj, theta) = instance(k, d, 128, derive_seed(seed, 100 + case * 10 + rep))?;
                let p = pack(&theta);
                let g = gradient(&obj, &theta)?;
                worst_grad = worst_grad.max(rel_inf(&g, &fd_gradient(&obj, &p, 1e-5)?, 1e-8));

                let h = obj.hessian(&theta)?.h;
                let n = p.len();
                let mut x = p.clone();
                let mut fd = vec![0.0; n * n];
                for j in 0..n {
                    x[j] = p[j] + 1e-4;
                    let up = obj.gradient_packed(&x)?;
                    x[j] = p[j] - 1e-4;
                    let down = obj.gradient_packed(&x)?;
                    x[j] = p[j];
                    for i in 0..n {
                        fd[i * n + j] = (up[i] - down[i]) / 2e-4;
                    }
                }
                let analytic: Vec<f64> = (0..n * n).map(|e| h[(e / n, e % n)]).collect();
                worst_hess = worst_hess.max(rel_inf(&analytic, &fd, 1e-8));
            }
        }
    }
    checks.push(Check::at_most(S, "gradient_vs_central_differences", worst_grad, 1e-6));
    checks.push(Check::at_most(S, "hessian_vs_gradient_differences", worst_hess, 1e-5));

    let mut worst_g = 0.0_f64;
    for i in 0..20 {
        let (obj, theta) = instance(1 + i % 3, 1 + i % 2, 64, derive_seed(seed, 200 + i as u64))?;
        let mut rng = rng_from_seed(derive_seed(seed, 300 + i as u64));
        let u = random_unit_vector(&mut rng, theta.config().dim());
        let (a, b) = obj.quadratic_form_g_identity(&theta, &u)?;
        worst_g = worst_g.max((a - b).abs() / b.abs().max(1e-300));
    }
    checks.push(Check::at_most(S, "g_quadratic_form_identity", worst_g, 1e-10));

    let mut worst_f = 0.0_f64;
    for i in 0..10u64 {
        let (obj, _) = instance(1 + i as usize % 3, 1 + i as usize % 2, 128, derive_seed(seed, 400 + i))?;
        let truth = sample_theta(obj.config(), &AmplitudeRange::signed_magnitude(0.5, 2.0), derive_seed(seed, 500 + i))?;
        let clean = Objective::noiseless(obj.operator().clone(), &truth)?;
        let split = clean.hessian(&truth)?;
        worst_f = worst_f.max(max_abs(split.f.iter().copied()) / max_abs(split.g.iter().copied()));
    }
    checks.push(Check::at_most(S, "residual_part_vanishes_at_truth", worst_f, 1e-10));

    let op = draw_gaussian_operator(64, 0.5, 2, derive_seed(seed, 600))?;
    checks.push(Check::at_least(S, "operator_derivative_order", operator_derivative_order(&op, seed)?, 0.9));
    Ok(checks)
}

/// Log-log slope of `‖Aδ′ + A(δ_{t+ηv} − δ_t)/η‖` over `η ∈ {1e-2, 1e-3, 1e-4}`.
fn operator_derivative_order(op: &FourierOperator, seed: u64) -> Result<f64> {
    let mut rng = rng_from_seed(derive_seed(seed, 601));
    let d = op.d();
    let t: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let v = random_unit_vector(&mut rng, d);
    let exact = op.apply_dirac_derivative(&t, &v)?;
    let base = op.apply_dirac(&t)?;
    let errs: Vec<f64> = [1e-2, 1e-3, 1e-4]
        .iter()
        .map(|&eta| {
            let shifted: Vec<f64> = t.iter().zip(&v).map(|(a, b)| a + eta * b).collect();
            let fd = (&op.apply_dirac(&shifted)? - &base).scaled(-1.0 / eta);
            Ok((&fd - &exact).norm())
        })
        .collect::<Result<_>>()?;
    Ok(loglog_slope(&[1e-2, 1e-3, 1e-4], &errs))
}

/// Least-squares slope of `log err` against `log η`.
pub fn loglog_slope(etas: &[f64], errs: &[f64]) -> f64 {
    let xs: Vec<f64> = etas.iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.max(1e-300).ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Atoms `(weight, position)` of the finite-η dipole `aδ_t − b(δ_{t+ηv} − δ_t)/η`.
pub fn finite_dipole(nu: &GeneralizedDipole, eta: f64) -> Vec<(f64, Vec<f64>)> {
    let shifted: Vec<f64> = nu.t.iter().zip(&nu.v).map(|(a, b)| a + eta * b).collect();
    vec![(nu.a + nu.b / eta, nu.t.clone()), (-nu.b / eta, shifted)]
}

/// `Σ_ij w_i w_j ρ(‖x_i − y_j‖)` over two atom lists.
pub fn atoms_inner(x: &[(f64, Vec<f64>)], y: &[(f64, Vec<f64>)], kernel: &RadialKernel) -> f64 {
    let mut s = 0.0;
    for (wa, ta) in x {
        for (wb, tb) in y {
            let diff: Vec<f64> = ta.iter().zip(tb).map(|(p, q)| p - q).collect();
            s += wa * wb * kernel.f(&diff);
        }
    }
    s
}

fn random_dipole<R: Rng>(rng: &mut R, t: Vec<f64>) -> Result<GeneralizedDipole> {
    let v = random_unit_vector(rng, t.len());
    let a = rng.random_range(-2.0..2.0);
    let b = rng.random_range(-1.0..1.0);
    GeneralizedDipole::new(a, b, t, v)
}

pub fn kernel_suite(seed: u64) -> Result<Vec<Check>> {
    const S: &str = "kernel";
    let mut checks = Vec::new();
    let kernel = gaussian_kernel(0.7)?;
    let mut rng = rng_from_seed(derive_seed(seed, 700));

    let mut worst = [0.0_f64; 3];
    for _ in 0..20 {
        let t: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v = random_unit_vector(&mut rng, 2);
        let dirac = GeneralizedDipole::dirac(1.0, t.clone());
        let deriv = GeneralizedDipole::new(0.0, 1.0, t, v)?;
        worst[0] = worst[0].max((dipole_inner(&dirac, &dirac, &kernel)? - 1.0).abs());
        worst[1] = worst[1].max(dipole_inner(&dirac, &deriv, &kernel)?.abs());
        worst[2] = worst[2].max((dipole_inner(&deriv, &deriv, &kernel)? - kernel.rho2_abs()).abs());
    }
    checks.push(Check::at_most(S, "dirac_unit_norm", worst[0], 1e-12));
    checks.push(Check::at_most(S, "dirac_derivative_orthogonal", worst[1], 1e-12));
    checks.push(Check::at_most(S, "derivative_norm_is_rho2", worst[2], 1e-12));

    let etas = [1e-2, 1e-3, 1e-4];
    let mut worst_order = f64::INFINITY;
    for _ in 0..10 {
        let t1: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t2: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n1 = random_dipole(&mut rng, t1)?;
        let n2 = random_dipole(&mut rng, t2)?;
        let exact = dipole_inner(&n1, &n2, &kernel)?;
        let errs: Vec<f64> = etas
            .iter()
            .map(|&e| (atoms_inner(&finite_dipole(&n1, e), &finite_dipole(&n2, e), &kernel) - exact).abs())
            .collect();
        worst_order = worst_order.min(loglog_slope(&etas, &errs));
    }
    checks.push(Check::at_least(S, "dipole_limit_order", worst_order, 0.9));

    let width = 0.3;
    let profile: Arc<dyn ConvolutionProfile> = Arc::new(GaussianProfile { width });
    let support = 12.0 * width;
    let conv = kernel_from_convolution(profile.clone(), support)?;
    let mut worst_conv = 0.0_f64;
    for _ in 0..5 {
        let w = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let t: [f64; 2] = [0.0, rng.random_range(0.05..1.5)];
        let mut bilinear = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                bilinear += w[i] * w[j] * raw_autocorrelation(&conv, (t[i] - t[j]).abs()).unwrap_or(f64::NAN);
            }
        }
        let quad = integrate(
            |x| {
                let s = w[0] * profile.value(x - t[0]) + w[1] * profile.value(x - t[1]);
                s * s
            },
            -support,
            t[1] + support,
            1e-11,
            1e-300,
        )?;
        worst_conv = worst_conv.max((bilinear - quad).abs() / quad.abs());
    }
    checks.push(Check::at_most(S, "convolution_identity", worst_conv, 1e-6));

    let mut worst_sandwich = f64::NEG_INFINITY;
    for i in 0..100u64 {
        let k = 2 + (i as usize % 5);
        let config = ModelConfig::new(k, 2, 0.3, 2.0)?;
        let pos = sample_theta(&config, &AmplitudeRange::new(1.0, 1.0), derive_seed(seed, 800 + i))?;
        let dipoles: Vec<GeneralizedDipole> =
            pos.positions().map(|t| random_dipole(&mut rng, t.to_vec())).collect::<Result<_>>()?;
        worst_sandwich = worst_sandwich.max(sandwich_violation(&dipoles, &kernel)?);
    }
    checks.push(Check::at_most(S, "generalized_dipole_sandwich", worst_sandwich, 1e-9));
    Ok(checks)
}

/// Largest violation of `(1 − (k−1)μ̂)Σ‖ν_i‖² ≤ ‖Σν_i‖² ≤ (1 + (k−1)μ̂)Σ‖ν_i‖²`
/// with `μ̂` the largest normalized pairwise inner product of the collection,
/// relative to `Σ‖ν_i‖²`.
pub fn sandwich_violation(dipoles: &[GeneralizedDipole], kernel: &RadialKernel) -> Result<f64> {
    let k = dipoles.len();
    let mut mu = 0.0_f64;
    for i in 0..k {
        for j in i + 1..k {
            mu = mu.max(normalized_inner(&dipoles[i], &dipoles[j], kernel)?.abs());
        }
    }
    let diag: f64 = dipoles.iter().map(|d| dipole_inner(d, d, kernel)).sum::<Result<f64>>()?;
    let total = measure_norm_h_sq(dipoles, kernel)?;
    let load = (k as f64 - 1.0) * mu;
    let low = (1.0 - load) * diag - total;
    let high = total - (1.0 + load) * diag;
    Ok(low.max(high) / diag)
}

pub fn bounds_suite(seed: u64) -> Result<Vec<Check>> {
    const S: &str = "bounds";
    let mut checks = Vec::new();
    let unit = gaussian_kernel(1.0)?;
    let single = SpikeTrain::new(ModelConfig::new(1, 1, 0.4, 2.0)?, vec![1.0], vec![vec![0.0]])?;
    let exact = RipConstants::new(0.0, 0.0, Provenance::User)?;
    let quiet = beta_max_noiseless(&single, &exact, &unit, 2.0, 1, 0.5)?;
    let c2 = 0.25 / (2.0 * 3f64.sqrt());
    checks.push(Check::at_most(S, "worked_example_c1", (quiet.c1 - 0.5).abs(), 1e-12));
    checks.push(Check::at_most(S, "worked_example_c2", (quiet.c2_or_c3 - c2).abs(), 1e-12));
    checks.push(Check::at_most(S, "worked_example_beta_noiseless", (quiet.beta_max - 0.5 * c2).abs(), 1e-12));
    let noisy = beta_max_noisy(&single, &exact, &unit, 2.0, 1, 0.0, 0.5)?;
    let c3 = 0.25 / (2.0 * (1.0 + 3f64.sqrt()));
    checks.push(Check::at_most(S, "worked_example_c3", (noisy.c2_or_c3 - c3).abs(), 1e-12));
    checks.push(Check::at_most(S, "worked_example_beta_noisy", (noisy.beta_max - 0.5 * c3).abs(), 1e-12));

    let rip = RipConstants::new(0.1, 0.0, Provenance::User)?;
    let mut prev = uniform_bounds_on_ball(&single, 0.0, &rip, &unit, 0.0, 0.0, 2.0, false)?;
    let mut non_monotone = 0.0_f64;
    for beta in [0.02, 0.04, 0.08] {
        let b = uniform_bounds_on_ball(&single, beta, &rip, &unit, 0.0, 0.0, 2.0, false)?;
        non_monotone = non_monotone
            .max(b.lambda_min_lb - prev.lambda_min_lb)
            .max(prev.lambda_max_ub - b.lambda_max_ub);
        prev = b;
    }
    checks.push(Check::at_most(S, "ball_bounds_monotone_in_beta", non_monotone, 0.0));

    let config: ScenarioConfig = serde_json::from_value(serde_json::json!({
        "model": {"k": 2, "d": 1, "epsilon": 1.0, "R": 2.0},
        "kernel": {"type": "gaussian_auto_k"},
        "operator": {"type": "random", "m": 4000},
        "truth": {"amplitudes": [1.0, -1.5], "positions": [[-0.7], [0.6]]}
    }))?;
    let scenario = generate(&config, derive_seed(seed, 900), None)?;
    let opts = CertifyOptions { rip_trials: 300, coherence_trials: 1000, gap_samples: 20, seed, ..Default::default() };
    let report = certify_scenario(&scenario, &opts)?;
    let cert = &report.certificate;
    checks.push(Check::at_most(S, "certificate_nonvacuous", if cert.vacuous { 1.0 } else { 0.0 }, 0.0));
    if !cert.vacuous {
        let obj = scenario.objective()?;
        let samples = 40;
        let mut inside = 0;
        for i in 0..samples {
            let theta = if i == 0 {
                report.theta_star.clone()
            } else {
                perturb(&report.theta_star, cert.beta_max, derive_seed(seed, 1000 + i))?
            };
            let eig = symmetric_eigenvalues(&obj.hessian(&theta)?.h)?;
            if eig.iter().all(|&l| cert.bounds_at_beta.contains(l, 0.1)) {
                inside += 1;
            }
        }
        checks.push(Check::at_least(S, "eigenvalue_sandwich_fraction", inside as f64 / samples as f64, 0.95));
    }
    Ok(checks)
}

/// Fraction of `samples` points with all Hessian eigenvalues inside the
/// interval; exposed for external harnesses.
pub fn sandwich_fraction(
    obj: &Objective,
    theta_star: &SpikeTrain,
    beta: f64,
    lo: f64,
    hi: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let mut inside = 0;
    for i in 0..samples {
        let theta = perturb(theta_star, beta, derive_seed(seed, i as u64))?;
        let eig = symmetric_eigenvalues(&obj.hessian(&theta)?.h)?;
        if eig.iter().all(|&l| l >= lo && l <= hi) {
            inside += 1;
        }
    }
    Ok(inside as f64 / samples.max(1) as f64)
}
