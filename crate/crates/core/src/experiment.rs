//! Scenarios (configuration, operator, ground truth, data) and the batch
//! pipelines behind the command-line tool.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::certificates::{
    certify, sup_residual_gap_estimate, BasinCertificate, CertificateInputs, GapEstimate, Provenance, RipConstants,
    DEFAULT_GAMMA_INFLATION,
};
use crate::error::{Error, Result};
use crate::kernel::{c_h_compute, coherence_estimate, select_coherence, CoherenceChoice, KernelSpec, RadialKernel};
use crate::linalg::symmetric_eigenvalues;
use crate::measurement::{draw_random_operator, estimate_rip, grid_operator, FourierOperator, MeasurementVector, RipEstimate};
use crate::numeric::derive_seed;
use crate::objective::Objective;
use crate::solver::{gradient_descent, DescentSettings, StepRule, Termination};
use crate::spike_model::{is_in_theta, min_separation, sample_theta, AmplitudeRange, ModelConfig, SpikeTrain};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

// child-seed slots derived from the master seed
const SLOT_OPERATOR: u64 = 0;
const SLOT_TRUTH: u64 = 1;
const SLOT_NOISE: u64 = 2;
const SLOT_RIP: u64 = 3;
const SLOT_RIP_DIPOLES: u64 = 4;
const SLOT_COHERENCE: u64 = 5;
const SLOT_GAP: u64 = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OperatorSpec {
    /// Gaussian frequencies matched to the kernel width.
    Random {
        m: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Integer frequencies `-fc..=fc` (d = 1).
    Grid { fc: usize },
    /// A serialized operator, relative to the config file.
    File { path: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TruthSpec {
    Explicit { amplitudes: Vec<f64>, positions: Vec<Vec<f64>> },
    Sampled { sample: SampleSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub low: f64,
    pub high: f64,
    #[serde(default = "yes")]
    pub random_sign: bool,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Exact `‖e‖₂`.
    pub norm: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub model: ModelConfig,
    pub kernel: KernelSpec,
    pub operator: OperatorSpec,
    pub truth: TruthSpec,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

impl RunMeta {
    pub fn new<T: Serialize>(config: &T, seed: u64) -> Result<Self> {
        Ok(RunMeta { config_hash: config_hash(config)?, seed, version: VERSION.to_string() })
    }
}

/// SHA-256 of the compact JSON form of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let text = serde_json::to_string(value)?;
    let digest = Sha256::digest(text.as_bytes());
    Ok(hex::encode(digest))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub operator: FourierOperator,
    pub truth: SpikeTrain,
    pub noise: Option<NoiseSpec>,
    /// Data `y` as `[re, im]` pairs.
    #[serde(with = "complex_pairs")]
    pub y: MeasurementVector,
    pub meta: RunMeta,
}

mod complex_pairs {
    use num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::measurement::MeasurementVector;

    pub fn serialize<S: Serializer>(y: &MeasurementVector, s: S) -> Result<S::Ok, S::Error> {
        y.values.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<MeasurementVector, D::Error> {
        let pairs = Vec::<[f64; 2]>::deserialize(d)?;
        MeasurementVector::new(pairs.into_iter().map(|[re, im]| Complex64::new(re, im)).collect())
            .map_err(serde::de::Error::custom)
    }
}

/// Parses a JSON file, reporting position information on failure.
pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if let Some(n) = &self.noise {
            if !(n.norm >= 0.0 && n.norm.is_finite()) {
                return Err(Error::InvalidConfig(format!("noise norm must be finite and >= 0, got {}", n.norm)));
            }
        }
        match &self.operator {
            OperatorSpec::Random { m, .. } if *m == 0 => Err(Error::InvalidConfig("operator m must be >= 1".into())),
            OperatorSpec::Grid { .. } if self.model.d != 1 => {
                Err(Error::InvalidConfig("grid operators need d = 1".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn build_kernel(&self) -> Result<RadialKernel> {
        self.kernel.build(&self.model)
    }
}

/// Builds the scenario: operator, truth and `y = Aφ(θ₀) + e` with `‖e‖₂`
/// exactly the requested norm. Missing seeds derive from `seed`.
pub fn generate(config: &ScenarioConfig, seed: u64, base_dir: Option<&Path>) -> Result<Scenario> {
    config.validate()?;
    let kernel = config.build_kernel()?;
    let operator = match &config.operator {
        OperatorSpec::Random { m, seed: s } => {
            draw_random_operator(*m, &kernel, config.model.d, s.unwrap_or_else(|| derive_seed(seed, SLOT_OPERATOR)))?
        }
        OperatorSpec::Grid { fc } => grid_operator(*fc),
        OperatorSpec::File { path } => {
            let p = base_dir.map(|b| b.join(path)).unwrap_or_else(|| path.into());
            read_json(&p)?
        }
    };
    if operator.d() != config.model.d {
        return Err(Error::InvalidConfig(format!("operator has d = {}, model has d = {}", operator.d(), config.model.d)));
    }
    let truth = match &config.truth {
        TruthSpec::Explicit { amplitudes, positions } => {
            let truth = SpikeTrain::new(config.model, amplitudes.clone(), positions.clone())?;
            if !is_in_theta(&truth) {
                return Err(Error::InvalidConfig(format!(
                    "truth must be epsilon-separated inside the radius-R ball (min separation {}, epsilon {})",
                    min_separation(&truth),
                    config.model.epsilon
                )));
            }
            truth
        }
        TruthSpec::Sampled { sample } => {
            let range = AmplitudeRange { low: sample.low, high: sample.high, random_sign: sample.random_sign, nonvanishing: true };
            sample_theta(&config.model, &range, sample.seed.unwrap_or_else(|| derive_seed(seed, SLOT_TRUTH)))?
        }
    };
    let clean = operator.apply(&truth)?;
    let (y, noise) = match config.noise {
        Some(NoiseSpec { norm, seed: s }) if norm > 0.0 => {
            let s = s.unwrap_or_else(|| derive_seed(seed, SLOT_NOISE));
            let e = exact_norm_noise(operator.m(), norm, s);
            (&clean + &e, Some(NoiseSpec { norm, seed: Some(s) }))
        }
        other => (clean, other),
    };
    Ok(Scenario { config: config.clone(), operator, truth, noise, y, meta: RunMeta::new(config, seed)? })
}

/// Complex Gaussian direction rescaled to norm exactly `norm`.
pub fn exact_norm_noise(m: usize, norm: f64, seed: u64) -> MeasurementVector {
    let e = MeasurementVector::gaussian_noise(m, 1.0, seed);
    let n = e.norm();
    e.scaled(norm / n)
}

impl Scenario {
    pub fn objective(&self) -> Result<Objective> {
        Objective::new(self.operator.clone(), self.y.clone(), self.config.model)
    }

    pub fn kernel(&self) -> Result<RadialKernel> {
        self.config.build_kernel()
    }

    pub fn is_noisy(&self) -> bool {
        self.noise.is_some_and(|n| n.norm > 0.0)
    }

    /// Reads either a generated scenario or a scenario config (generated on the fly).
    pub fn load(path: &Path, seed: u64) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        if value.get("y").is_some() {
            serde_json::from_value(value).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
        } else {
            let cfg: ScenarioConfig =
                serde_json::from_value(value).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
            generate(&cfg, seed, path.parent())
        }
    }
}

/// Locates the minimizer near `start` by fixed-step descent with step
/// `1/(1.5 λ_max(H(start)))`, to gradient norm `grad_tol`.
pub fn locate_minimizer(obj: &Objective, start: &SpikeTrain, grad_tol: f64, max_iters: usize) -> Result<SpikeTrain> {
    let h = obj.hessian(start)?.h;
    let eig = symmetric_eigenvalues(&h)?;
    let top = eig[eig.len() - 1].abs().max(1e-300);
    let mut settings = DescentSettings::fixed(1.0 / (1.5 * top));
    settings.grad_tol = grad_tol;
    settings.max_iters = max_iters;
    let trace = gradient_descent(obj, start, &settings, None)?;
    if trace.termination != Termination::GradTol {
        log::warn!("minimizer search ended with {:?}, gradient norm {:e}", trace.termination, trace.final_grad_norm());
    }
    crate::spike_model::unpack(obj.config(), &trace.final_theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifyOptions {
    pub gamma: Option<f64>,
    pub mu: Option<f64>,
    pub rip_trials: usize,
    pub coherence_trials: usize,
    pub gap_samples: usize,
    pub q: f64,
    pub inflation: f64,
    /// Use constants at separation ε (constrained balls) instead of ε/2.
    pub constrained: bool,
    pub seed: u64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            gamma: None,
            mu: None,
            rip_trials: 1000,
            coherence_trials: 4000,
            gap_samples: 200,
            q: 0.5,
            inflation: DEFAULT_GAMMA_INFLATION,
            constrained: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyReport {
    pub certificate: BasinCertificate,
    pub theta_star: SpikeTrain,
    /// Separation at which RIP and coherence were estimated.
    pub separation: f64,
    pub rip_secants: Option<RipEstimate>,
    pub rip_dipoles: Option<RipEstimate>,
    pub gamma_raw: Option<f64>,
    pub coherence: Option<CoherenceChoice>,
    pub d_a_r: f64,
    pub m: usize,
    /// `‖y − Aφ(θ*)‖₂`, the noise seen from the minimizer.
    pub noise_norm: Option<f64>,
    pub gap_check: Option<GapEstimate>,
    pub options: CertifyOptions,
    pub kernel: String,
    pub meta: RunMeta,
}

/// Full certification pipeline: estimate constants, locate θ* (noisy case),
/// compute the basin radius, and sample-check the residual gap bound.
pub fn certify_scenario(scenario: &Scenario, opts: &CertifyOptions) -> Result<CertifyReport> {
    let kernel = scenario.kernel()?;
    let obj = scenario.objective()?;
    let model = scenario.config.model;
    let separation = if opts.constrained { model.epsilon } else { model.epsilon / 2.0 };
    let est_cfg = model.with_epsilon(separation);
    let op = &scenario.operator;

    let (rip_secants, rip_dipoles, gamma_raw, gamma) = match opts.gamma {
        Some(g) => (None, None, None, g),
        None => {
            let a = estimate_rip(op, &est_cfg, &kernel, opts.rip_trials, derive_seed(opts.seed, SLOT_RIP), false)?;
            let b = estimate_rip(op, &est_cfg, &kernel, opts.rip_trials, derive_seed(opts.seed, SLOT_RIP_DIPOLES), true)?;
            let raw = a.gamma_lower.max(b.gamma_lower);
            (Some(a), Some(b), Some(raw), (opts.inflation * raw).min(1.0))
        }
    };
    let (coherence, mu) = match opts.mu {
        Some(mu) => (None, mu),
        None if model.k == 1 => (None, 0.0),
        None => {
            let emp = coherence_estimate(&kernel, &est_cfg, opts.coherence_trials, derive_seed(opts.seed, SLOT_COHERENCE))?;
            // the analytic bound is stated for separation ε
            let choice = select_coherence(emp, &kernel, &model);
            (Some(choice), choice.mu)
        }
    };
    let provenance = if opts.gamma.is_some() || opts.mu.is_some() {
        Provenance::User
    } else if coherence.is_some_and(|c| c.source == crate::kernel::CoherenceSource::AnalyticBound) {
        Provenance::AnalyticBound
    } else {
        Provenance::Empirical
    };
    let rip = RipConstants::new(gamma, mu, provenance)?;

    let (theta_star, noise_norm) = if scenario.is_noisy() {
        let star = locate_minimizer(&obj, &scenario.truth, 1e-12, 200_000)?;
        let e = obj.residual(&star)?.norm();
        (star, Some(e))
    } else {
        (scenario.truth.clone(), None)
    };

    let c_h = c_h_compute(&kernel, model.epsilon, opts.q)?;
    let d_a_r = op.compute_d_a_r();
    let inputs = CertificateInputs::from_parts(&theta_star, rip, &kernel, op.sqrt_m_d_a_r(), c_h, opts.q, noise_norm);
    let mut certificate = certify(&inputs)?;
    if let Some(c) = &coherence {
        certificate.assumptions_log.push(format!(
            "coherence: empirical {} at separation {separation}, analytic {:?}, used {} ({:?})",
            c.empirical, c.analytic_bound, c.mu, c.source
        ));
    }
    if let Some(raw) = gamma_raw {
        certificate
            .assumptions_log
            .push(format!("RIP: sampled {raw} at separation {separation}, inflated by {} to {gamma}", opts.inflation));
    }
    if noise_norm.is_some() {
        certificate
            .assumptions_log
            .push("noisy: theta* located by descent from the truth; noise taken as y - A phi(theta*)".into());
    }
    let gap_check = if certificate.beta_max > 0.0 && opts.gap_samples > 0 {
        let g = sup_residual_gap_estimate(
            &obj,
            &theta_star,
            certificate.beta_max,
            opts.gap_samples,
            derive_seed(opts.seed, SLOT_GAP),
            &rip,
            &kernel,
        )?;
        if g.flagged {
            certificate.assumptions_log.push(format!(
                "warning: sampled residual gap {:e} exceeds the analytic bound {:e}",
                g.empirical, g.analytic
            ));
        }
        Some(g)
    } else {
        None
    };

    Ok(CertifyReport {
        certificate,
        theta_star,
        separation,
        rip_secants,
        rip_dipoles,
        gamma_raw,
        coherence,
        d_a_r,
        m: op.m(),
        noise_norm,
        gap_check,
        options: *opts,
        kernel: kernel.name().to_string(),
        meta: RunMeta::new(&scenario.config, opts.seed)?,
    })
}

impl CertifyReport {
    pub fn summary(&self) -> String {
        let c = &self.certificate;
        let mut s = String::new();
        s.push_str(&format!("kernel            {}\n", self.kernel));
        s.push_str(&format!("m                 {}\n", self.m));
        s.push_str(&format!("gamma used        {}\n", c.gamma));
        s.push_str(&format!("mu used           {}\n", c.mu));
        s.push_str(&format!("sqrt(m) D_A,R     {:e}\n", c.sqrt_m_d));
        s.push_str(&format!("c_h (q = {})     {}\n", c.q_relaxation, c.c_h_used));
        s.push_str(&format!("C1                {:e}\n", c.c1));
        s.push_str(&format!("C2/C3             {:e}\n", c.c2_or_c3));
        s.push_str(&format!("beta_max          {:e}\n", c.beta_max));
        s.push_str(&format!("L                 {:e}\n", c.lipschitz));
        s.push_str(&format!("tau_max           {:e}\n", c.tau_max));
        if let Some(b) = c.noise_budget {
            s.push_str(&format!("noise budget      {b:e} (noise {:e})\n", c.noise_norm.unwrap_or(0.0)));
        }
        s.push_str(&format!("vacuous           {}\n", c.vacuous));
        for line in &c.assumptions_log {
            s.push_str(&format!("  - {line}\n"));
        }
        s
    }
}

/// Parses a radius such as `0.01` or `0.9bmax` (a fraction of `beta_max`).
pub fn parse_radius(text: &str, beta_max: Option<f64>) -> Result<f64> {
    let t = text.trim();
    let bad = || Error::InvalidArgument(format!("cannot parse radius '{text}'"));
    if let Some(frac) = t.strip_suffix("bmax") {
        let f: f64 = if frac.is_empty() { 1.0 } else { frac.trim_end_matches('*').parse().map_err(|_| bad())? };
        let b = beta_max.ok_or_else(|| Error::InvalidArgument("radius relative to beta_max needs a certificate".into()))?;
        Ok(f * b)
    } else {
        t.parse().map_err(|_| bad())
    }
}

/// Whether `text` refers to the certified radius.
pub fn needs_certificate(text: &str) -> bool {
    text.trim().ends_with("bmax")
}

/// Step rule for `--tau`: `auto` uses `0.9 τ_max` from a nonvacuous
/// certificate, else Armijo backtracking from 1.
pub fn step_rule(tau: &str, certificate: Option<&BasinCertificate>) -> Result<StepRule> {
    if tau.trim() == "auto" {
        match certificate {
            Some(c) if !c.vacuous && c.tau_max.is_finite() && c.tau_max > 0.0 => Ok(StepRule::Fixed { tau: 0.9 * c.tau_max }),
            _ => {
                log::warn!("no usable certificate; falling back to Armijo backtracking");
                Ok(StepRule::Armijo { initial: 1.0 })
            }
        }
    } else {
        let v: f64 = tau.trim().parse().map_err(|_| Error::InvalidArgument(format!("cannot parse tau '{tau}'")))?;
        if !(v > 0.0) {
            return Err(Error::InvalidArgument(format!("tau must be positive, got {v}")));
        }
        Ok(StepRule::Fixed { tau: v })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(noise: Option<f64>) -> ScenarioConfig {
        serde_json::from_value(serde_json::json!({
            "model": {"k": 2, "d": 1, "epsilon": 1.0, "R": 2.0},
            "kernel": {"type": "gaussian_auto_k"},
            "operator": {"type": "random", "m": 500},
            "truth": {"sample": {"low": 1.0, "high": 2.0}},
            "noise": noise.map(|n| serde_json::json!({"norm": n}))
        }))
        .unwrap()
    }

    #[test]
    fn noiseless_generation() {
        let s = generate(&config(None), 3, None).unwrap();
        let clean = s.operator.apply(&s.truth).unwrap();
        assert_eq!((&s.y - &clean).norm(), 0.0);
        assert_eq!(s, generate(&config(None), 3, None).unwrap());
    }

    #[test]
    fn noise_norm_is_exact() {
        let s = generate(&config(Some(0.1)), 3, None).unwrap();
        let clean = s.operator.apply(&s.truth).unwrap();
        assert!(((&s.y - &clean).norm() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn scenario_json_round_trip() {
        let s = generate(&config(Some(0.1)), 4, None).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        let back: Scenario = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn explicit_truth_and_errors() {
        let mut c = config(None);
        c.truth = TruthSpec::Explicit { amplitudes: vec![1.0, -1.0], positions: vec![vec![-0.6], vec![0.6]] };
        let s = generate(&c, 0, None).unwrap();
        assert_eq!(s.truth.amplitudes(), &[1.0, -1.0]);
        c.model.epsilon = 10.0;
        assert!(matches!(generate(&c, 0, None), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn radius_parsing() {
        assert_eq!(parse_radius("0.25", None).unwrap(), 0.25);
        assert_eq!(parse_radius("0.5bmax", Some(0.2)).unwrap(), 0.1);
        assert_eq!(parse_radius("bmax", Some(0.2)).unwrap(), 0.2);
        assert!(parse_radius("0.5bmax", None).is_err());
        assert!(parse_radius("x", None).is_err());
    }

    #[test]
    fn hash_is_stable() {
        let a = config_hash(&config(None)).unwrap();
        assert_eq!(a, config_hash(&config(None)).unwrap());
        assert_ne!(a, config_hash(&config(Some(0.1))).unwrap());
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn user_constants_reproduce_formula() {
        let s = generate(&config(None), 5, None).unwrap();
        let opts = CertifyOptions { gamma: Some(0.0), mu: Some(0.0), gap_samples: 0, ..Default::default() };
        let r = certify_scenario(&s, &opts).unwrap();
        assert_eq!(r.certificate.provenance, Provenance::User);
        assert!(r.certificate.noise_budget.is_none());
        assert_eq!(r.certificate.gamma, 0.0);
    }
}
