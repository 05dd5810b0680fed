use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use spikebasin::certificates::BasinCertificate;
use spikebasin::error::{Error, Result};
use spikebasin::experiment::{
    certify_scenario, generate, locate_minimizer, needs_certificate, parse_radius, read_json, step_rule,
    CertifyOptions, CertifyReport, RunMeta, Scenario, ScenarioConfig,
};
use spikebasin::numeric::derive_seed;
use spikebasin::solver::{gradient_descent, probe_basin, DescentSettings, Termination};
use spikebasin::spike_model::{perturb, SpikeTrain};
use spikebasin::validation::{self, Suite};

const EXIT_VALIDATION: u8 = 2;
const EXIT_VACUOUS: u8 = 3;
const EXIT_CONFIG: u8 = 4;

#[derive(Parser)]
#[command(name = "spikebasin", version, about = "Sparse spike estimation: certified basins and descent experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario config (generate) or scenario file (other commands).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory for outputs.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CertifyArgs {
    /// Override the RIP constant instead of estimating it.
    #[arg(long)]
    gamma: Option<f64>,
    /// Override the coherence instead of estimating it.
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    rip_trials: usize,
    #[arg(long, default_value_t = 4000)]
    coherence_trials: usize,
    #[arg(long, default_value_t = 200)]
    gap_samples: usize,
    /// Relaxation of the quadratic-domination radius, in (0, 1].
    #[arg(long, default_value_t = 0.5)]
    q: f64,
    /// Multiplier applied to the sampled RIP constant.
    #[arg(long, default_value_t = spikebasin::certificates::DEFAULT_GAMMA_INFLATION)]
    inflation: f64,
    /// Estimate constants at separation ε (iterates kept ε-separated).
    #[arg(long)]
    constrained: bool,
}

impl CertifyArgs {
    fn options(&self, seed: u64) -> CertifyOptions {
        CertifyOptions {
            gamma: self.gamma,
            mu: self.mu,
            rip_trials: self.rip_trials,
            coherence_trials: self.coherence_trials,
            gap_samples: self.gap_samples,
            q: self.q,
            inflation: self.inflation,
            constrained: self.constrained,
            seed,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build operator, ground truth and data from a config.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Estimate constants and compute the certified basin radius.
    Certify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        cert: CertifyArgs,
    },
    /// Run gradient descent and write its trace.
    Descend {
        #[command(flatten)]
        common: Common,
        /// truth | perturb:RADIUS | file:PATH (RADIUS may be e.g. 0.9bmax).
        #[arg(long, default_value = "perturb:0.9bmax")]
        from: String,
        /// auto (0.9 τ_max, else Armijo) or a fixed step.
        #[arg(long, default_value = "auto")]
        tau: String,
        /// Keep iterates ε-separated (experimental).
        #[arg(long)]
        project: bool,
        #[arg(long, default_value_t = 10_000)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-10)]
        grad_tol: f64,
        /// Reuse a certificate report instead of recomputing it.
        #[arg(long)]
        certificate: Option<PathBuf>,
        #[command(flatten)]
        cert: CertifyArgs,
    },
    /// Success rate of descent over a grid of ball radii.
    Probe {
        #[command(flatten)]
        common: Common,
        /// Comma-separated radii, e.g. 0,0.5bmax,0.95bmax,0.1
        #[arg(long, default_value = "0,0.5bmax,0.95bmax")]
        beta_grid: String,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value = "auto")]
        tau: String,
        #[arg(long, default_value_t = 10_000)]
        max_iters: usize,
        #[arg(long)]
        certificate: Option<PathBuf>,
        #[command(flatten)]
        cert: CertifyArgs,
    },
    /// Run built-in oracle suites.
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "all")]
        suite: String,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::NoiseBudgetExceeded { .. } | Error::BetaTooLarge { .. } | Error::NoValidRadius { .. } => EXIT_VACUOUS,
        Error::InvalidConfig(_)
        | Error::InvalidArgument(_)
        | Error::Json(_)
        | Error::Io(_)
        | Error::DimensionMismatch { .. }
        | Error::SamplingExhausted { .. }
        | Error::InfeasibleSeparation { .. } => EXIT_CONFIG,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_CONFIG);
    }
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("SPIKEBASIN_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("SPIKEBASIN_THREADS must be a positive integer, got '{v}'")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    }
    Ok(())
}

fn config_path(common: &Common) -> Result<&Path> {
    common.config.as_deref().ok_or_else(|| Error::InvalidConfig("--config is required".into()))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(dir.join(name))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn run(command: Command) -> Result<u8> {
    match command {
        Command::Generate { common } => {
            let path = config_path(&common)?;
            let config: ScenarioConfig = read_json(path)?;
            let scenario = generate(&config, common.seed, path.parent())?;
            fs::create_dir_all(&common.out)?;
            let target = common.out.join("scenario.json");
            if fs::canonicalize(path).ok() == fs::canonicalize(&target).ok() && target.exists() {
                return Err(Error::InvalidConfig("refusing to overwrite the input file".into()));
            }
            write_json(&common.out, "scenario.json", &scenario)?;
            println!("wrote {}", target.display());
            Ok(0)
        }
        Command::Certify { common, cert } => {
            let path = config_path(&common)?;
            let scenario = Scenario::load(path, common.seed)?;
            fs::create_dir_all(&common.out)?;
            let report = certify_scenario(&scenario, &cert.options(common.seed))?;
            write_json(&common.out, "certificate.json", &report)?;
            let summary = report.summary();
            fs::write(common.out.join("certificate.txt"), &summary)?;
            print!("{summary}");
            if report.certificate.vacuous {
                eprintln!("certificate is vacuous: see assumptions in certificate.txt");
                return Ok(EXIT_VACUOUS);
            }
            Ok(0)
        }
        Command::Descend { common, from, tau, project, max_iters, grad_tol, certificate, cert } => {
            let path = config_path(&common)?;
            let scenario = Scenario::load(path, common.seed)?;
            fs::create_dir_all(&common.out)?;
            let wants_cert = tau.trim() == "auto" || from.strip_prefix("perturb:").is_some_and(needs_certificate);
            let report = certificate_for(&scenario, wants_cert, certificate.as_deref(), &cert, common.seed)?;
            let cert_ref = report.as_ref().map(|r| &r.certificate);
            let obj = scenario.objective()?;
            let reference = reference_point(&scenario, report.as_ref())?;
            let start = start_point(&from, &reference, &scenario, cert_ref, common.seed)?;
            let mut settings = DescentSettings::fixed(1.0);
            settings.step = step_rule(&tau, cert_ref)?;
            settings.max_iters = max_iters;
            settings.grad_tol = grad_tol;
            settings.project_separation = project;
            let trace = gradient_descent(&obj, &start, &settings, Some(&reference))?;
            trace.write_csv(BufWriter::new(File::create(common.out.join("trace.csv"))?))?;
            let summary = DescendSummary {
                from,
                step: settings.step,
                project,
                termination: trace.termination,
                iterations: trace.iterations(),
                initial_distance: trace.distances_to_ref.first().copied(),
                final_distance: trace.final_distance(),
                final_grad_norm: trace.final_grad_norm(),
                final_objective: trace.objective_values.last().copied(),
                meta: RunMeta::new(&scenario.config, common.seed)?,
            };
            write_json(&common.out, "descend.json", &summary)?;
            println!(
                "{:?} after {} iterations; distance {:e}, gradient norm {:e}",
                summary.termination,
                summary.iterations,
                summary.final_distance.unwrap_or(f64::NAN),
                summary.final_grad_norm
            );
            Ok(0)
        }
        Command::Probe { common, beta_grid, trials, tau, max_iters, certificate, cert } => {
            let path = config_path(&common)?;
            let scenario = Scenario::load(path, common.seed)?;
            fs::create_dir_all(&common.out)?;
            let radii: Vec<&str> = beta_grid.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
            if radii.is_empty() {
                return Err(Error::InvalidArgument("empty --beta-grid".into()));
            }
            let wants_cert = tau.trim() == "auto" || radii.iter().any(|r| needs_certificate(r));
            let report = certificate_for(&scenario, wants_cert, certificate.as_deref(), &cert, common.seed)?;
            let cert_ref = report.as_ref().map(|r| &r.certificate);
            let bmax = cert_ref.map(|c| c.beta_max);
            let obj = scenario.objective()?;
            let reference = reference_point(&scenario, report.as_ref())?;
            let mut settings = DescentSettings::fixed(1.0);
            settings.step = step_rule(&tau, cert_ref)?;
            settings.max_iters = max_iters;

            let mut w = BufWriter::new(File::create(common.out.join("probe.csv"))?);
            writeln!(w, "beta,trials,successes,success_rate,tau,mean_final_distance,max_final_distance,left_ball")?;
            let mut summaries = Vec::new();
            for (i, r) in radii.iter().enumerate() {
                let beta = parse_radius(r, bmax)?;
                let s = probe_basin(&obj, &reference, beta, trials, &settings, derive_seed(common.seed, 50 + i as u64))?;
                let dists: Vec<f64> = s.per_trial.iter().map(|t| t.final_distance).collect();
                let mean = dists.iter().sum::<f64>() / dists.len().max(1) as f64;
                let max = dists.iter().copied().fold(0.0, f64::max);
                let left = s.per_trial.iter().filter(|t| t.left_ball).count();
                writeln!(w, "{},{},{},{},{},{:e},{:e},{}", s.beta, s.trials, s.successes, s.success_rate(), s.tau, mean, max, left)?;
                println!("beta {:e}: {}/{} converged", s.beta, s.successes, s.trials);
                summaries.push(s);
            }
            w.flush()?;
            let rates: Vec<f64> = summaries.iter().map(|s| s.success_rate()).collect();
            if rates.windows(2).any(|p| p[1] > p[0]) {
                log::info!("success rate is not monotone over the grid (advisory)");
            }
            write_json(
                &common.out,
                "probe.json",
                &serde_json::json!({
                    "summaries": summaries,
                    "beta_max": bmax,
                    "meta": RunMeta::new(&scenario.config, common.seed)?,
                }),
            )?;
            Ok(0)
        }
        Command::Validate { common, suite } => {
            let suite: Suite = suite.parse()?;
            fs::create_dir_all(&common.out)?;
            let report = validation::run(suite, common.seed)?;
            report.write_csv(BufWriter::new(File::create(common.out.join("validation.csv"))?))?;
            for c in &report.checks {
                println!(
                    "{} {}/{}: {:e} (tolerance {:e})",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.suite,
                    c.name,
                    c.value,
                    c.tolerance
                );
            }
            Ok(if report.all_passed() { 0 } else { EXIT_VALIDATION })
        }
    }
}

#[derive(Serialize)]
struct DescendSummary {
    from: String,
    step: spikebasin::solver::StepRule,
    project: bool,
    termination: Termination,
    iterations: usize,
    initial_distance: Option<f64>,
    final_distance: Option<f64>,
    final_grad_norm: f64,
    final_objective: Option<f64>,
    meta: RunMeta,
}

fn certificate_for(
    scenario: &Scenario,
    wanted: bool,
    file: Option<&Path>,
    args: &CertifyArgs,
    seed: u64,
) -> Result<Option<CertifyReport>> {
    if let Some(p) = file {
        return Ok(Some(read_json(p)?));
    }
    if !wanted {
        return Ok(None);
    }
    let report = certify_scenario(scenario, &args.options(seed))?;
    if report.certificate.vacuous {
        log::warn!("certificate is vacuous; beta_max-relative radii and tau=auto are unreliable");
    }
    Ok(Some(report))
}

/// θ*: the truth for noiseless data, else the minimizer found near it.
fn reference_point(scenario: &Scenario, report: Option<&CertifyReport>) -> Result<SpikeTrain> {
    if !scenario.is_noisy() {
        return Ok(scenario.truth.clone());
    }
    if let Some(r) = report {
        return Ok(r.theta_star.clone());
    }
    locate_minimizer(&scenario.objective()?, &scenario.truth, 1e-12, 200_000)
}

fn start_point(
    from: &str,
    reference: &SpikeTrain,
    scenario: &Scenario,
    cert: Option<&BasinCertificate>,
    seed: u64,
) -> Result<SpikeTrain> {
    if from == "truth" {
        return Ok(scenario.truth.clone());
    }
    if let Some(r) = from.strip_prefix("perturb:") {
        let beta = parse_radius(r, cert.map(|c| c.beta_max))?;
        return perturb(reference, beta, derive_seed(seed, 40));
    }
    if let Some(p) = from.strip_prefix("file:") {
        let theta: SpikeTrain = read_json(Path::new(p))?;
        return theta.with_config(scenario.config.model);
    }
    Err(Error::InvalidArgument(format!("--from must be truth, perturb:RADIUS or file:PATH, got '{from}'")))
}
