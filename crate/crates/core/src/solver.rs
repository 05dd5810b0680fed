//! Fixed-step gradient descent on packed parameters, basin probing, a
//! separation-restoring projection heuristic and the d = 1 interpolation path.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{derive_seed, dist2, norm2};
use crate::objective::Objective;
use crate::spike_model::{is_in_theta, min_separation, pack, perturb, unpack, ModelConfig, SpikeTrain};

/// Stop when the objective grows beyond this multiple of its initial value.
pub const DIVERGENCE_FACTOR: f64 = 1e6;
/// Success threshold of [`probe_basin`] when no `dist_tol` is set.
pub const DEFAULT_SUCCESS_TOL: f64 = 1e-6;
const ARMIJO_FACTOR: f64 = 0.5;
const ARMIJO_SLOPE: f64 = 1e-4;
const ARMIJO_MAX_HALVINGS: usize = 60;
const SEPARATION_MARGIN: f64 = 1e-9;
const PUSH_APART_MAX_SWEEPS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StepRule {
    /// `θ_{n+1} = θ_n − τ ∇g(θ_n)`.
    Fixed { tau: f64 },
    /// Backtracking from `initial` (halving, sufficient decrease 1e-4).
    /// An extension without the convergence guarantees of the fixed step.
    Armijo { initial: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentSettings {
    pub step: StepRule,
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Stop once `‖θ_n − θ_ref‖ ≤ dist_tol` (needs a reference).
    pub dist_tol: Option<f64>,
    pub project_separation: bool,
    /// Keep every iterate, not just the last.
    pub record_trace: bool,
}

impl DescentSettings {
    pub fn fixed(tau: f64) -> Self {
        DescentSettings {
            step: StepRule::Fixed { tau },
            max_iters: 10_000,
            grad_tol: 1e-10,
            dist_tol: None,
            project_separation: false,
            record_trace: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let tau = match self.step {
            StepRule::Fixed { tau } | StepRule::Armijo { initial: tau } => tau,
        };
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("step size must be positive, got {tau}")));
        }
        if !(self.grad_tol >= 0.0) || self.dist_tol.is_some_and(|t| !(t >= 0.0)) {
            return Err(Error::InvalidArgument("tolerances must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn tau(&self) -> f64 {
        match self.step {
            StepRule::Fixed { tau } => tau,
            StepRule::Armijo { initial } => initial,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    GradTol,
    DistTol,
    MaxIters,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentTrace {
    /// All iterates when recording, otherwise only the final one.
    pub iterates: Vec<Vec<f64>>,
    pub objective_values: Vec<f64>,
    pub grad_norms: Vec<f64>,
    /// Empty without a reference.
    pub distances_to_ref: Vec<f64>,
    pub min_separations: Vec<f64>,
    pub termination: Termination,
    pub final_theta: Vec<f64>,
}

impl DescentTrace {
    pub fn iterations(&self) -> usize {
        self.objective_values.len().saturating_sub(1)
    }

    pub fn final_distance(&self) -> Option<f64> {
        self.distances_to_ref.last().copied()
    }

    pub fn final_grad_norm(&self) -> f64 {
        *self.grad_norms.last().expect("trace has at least the initial point")
    }

    /// Fraction of steps with `‖θ_{n+1} − θ_ref‖ ≤ ‖θ_n − θ_ref‖`.
    pub fn monotone_distance_fraction(&self) -> Option<f64> {
        if self.distances_to_ref.len() < 2 {
            return if self.distances_to_ref.is_empty() { None } else { Some(1.0) };
        }
        let steps = self.distances_to_ref.windows(2);
        let n = steps.len();
        let good = steps.filter(|w| w[1] <= w[0]).count();
        Some(good as f64 / n as f64)
    }

    /// CSV with columns `iter,g,grad_norm,dist_to_ref,min_separation`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iter,g,grad_norm,dist_to_ref,min_separation")?;
        for i in 0..self.objective_values.len() {
            let dist = self.distances_to_ref.get(i).map(|x| format!("{x:e}")).unwrap_or_default();
            writeln!(
                w,
                "{i},{:e},{:e},{dist},{:e}",
                self.objective_values[i], self.grad_norms[i], self.min_separations[i]
            )?;
        }
        Ok(())
    }
}

struct Recorder<'a> {
    config: &'a ModelConfig,
    reference: Option<Vec<f64>>,
    record_all: bool,
    trace: DescentTrace,
}

impl Recorder<'_> {
    fn push(&mut self, theta: &[f64], value: f64, grad_norm: f64) -> Result<Option<f64>> {
        if self.record_all {
            self.trace.iterates.push(theta.to_vec());
        }
        self.trace.objective_values.push(value);
        self.trace.grad_norms.push(grad_norm);
        self.trace.min_separations.push(min_separation(&unpack(self.config, theta)?));
        let dist = self.reference.as_ref().map(|r| dist2(theta, r));
        if let Some(d) = dist {
            self.trace.distances_to_ref.push(d);
        }
        Ok(dist)
    }

    fn finish(mut self, theta: Vec<f64>, termination: Termination) -> DescentTrace {
        if !self.record_all {
            self.trace.iterates.push(theta.clone());
        }
        self.trace.termination = termination;
        self.trace.final_theta = theta;
        self.trace
    }
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Gradient descent from `theta0`, optionally tracking the distance to `theta_ref`.
pub fn gradient_descent(
    obj: &Objective,
    theta0: &SpikeTrain,
    settings: &DescentSettings,
    theta_ref: Option<&SpikeTrain>,
) -> Result<DescentTrace> {
    settings.validate()?;
    let config = *obj.config();
    let mut rec = Recorder {
        config: &config,
        reference: theta_ref.map(pack),
        record_all: settings.record_trace,
        trace: DescentTrace {
            iterates: Vec::new(),
            objective_values: Vec::new(),
            grad_norms: Vec::new(),
            distances_to_ref: Vec::new(),
            min_separations: Vec::new(),
            termination: Termination::MaxIters,
            final_theta: Vec::new(),
        },
    };

    let mut theta = pack(theta0);
    let (mut value, mut grad) = obj.eval_and_gradient(&unpack(&config, &theta)?)?;
    let g0 = value;
    let mut grad_norm = norm2(&grad);
    let mut dist = rec.push(&theta, value, grad_norm)?;

    for _ in 0..=settings.max_iters {
        if !value.is_finite() || !all_finite(&theta) || !all_finite(&grad) || (g0 > 0.0 && value > DIVERGENCE_FACTOR * g0) {
            return Ok(rec.finish(theta, Termination::Diverged));
        }
        if grad_norm <= settings.grad_tol {
            return Ok(rec.finish(theta, Termination::GradTol));
        }
        if let (Some(d), Some(tol)) = (dist, settings.dist_tol) {
            if d <= tol {
                return Ok(rec.finish(theta, Termination::DistTol));
            }
        }
        if rec.trace.objective_values.len() > settings.max_iters {
            break;
        }

        let step = |tau: f64| -> Result<Vec<f64>> {
            let next: Vec<f64> = theta.iter().zip(&grad).map(|(x, g)| x - tau * g).collect();
            if settings.project_separation && all_finite(&next) {
                Ok(pack(&repel_projection(&unpack(&config, &next)?)?))
            } else {
                Ok(next)
            }
        };
        let (next, next_value, next_grad) = match settings.step {
            StepRule::Fixed { tau } => {
                let next = step(tau)?;
                let (v, g) = obj.eval_and_gradient(&unpack(&config, &next)?)?;
                (next, v, g)
            }
            StepRule::Armijo { initial } => {
                let mut tau = initial;
                let mut attempt = 0;
                loop {
                    let next = step(tau)?;
                    let v = obj.eval_packed(&next)?;
                    if v <= value - ARMIJO_SLOPE * tau * grad_norm * grad_norm || attempt == ARMIJO_MAX_HALVINGS {
                        let g = obj.gradient_packed(&next)?;
                        break (next, v, g);
                    }
                    tau *= ARMIJO_FACTOR;
                    attempt += 1;
                }
            }
        };
        theta = next;
        value = next_value;
        grad = next_grad;
        grad_norm = norm2(&grad);
        dist = if all_finite(&theta) { rec.push(&theta, value, grad_norm)? } else { None };
    }
    Ok(rec.finish(theta, Termination::MaxIters))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeTrial {
    pub seed: u64,
    pub initial_distance: f64,
    pub final_distance: f64,
    pub final_grad_norm: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub success: bool,
    /// Fraction of steps where the distance to θ* did not increase.
    pub monotone_fraction: f64,
    /// Some iterate left the starting ball of radius β.
    pub left_ball: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub beta: f64,
    pub trials: usize,
    pub successes: usize,
    pub tau: f64,
    pub seed: u64,
    pub success_tol: f64,
    pub per_trial: Vec<ProbeTrial>,
}

impl ProbeSummary {
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }
}

/// Runs `trials` descents from uniform draws in the ball of radius `beta`
/// around `theta_star`; success means ending within `dist_tol` (or 1e-6) of it.
pub fn probe_basin(
    obj: &Objective,
    theta_star: &SpikeTrain,
    beta: f64,
    trials: usize,
    settings: &DescentSettings,
    seed: u64,
) -> Result<ProbeSummary> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    settings.validate()?;
    let success_tol = settings.dist_tol.unwrap_or(DEFAULT_SUCCESS_TOL);
    let center = pack(theta_star);
    let per_trial: Vec<ProbeTrial> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let s = derive_seed(seed, i as u64);
            let start = perturb(theta_star, beta, s)?;
            let trace = gradient_descent(obj, &start, settings, Some(theta_star))?;
            let final_distance = dist2(&trace.final_theta, &center);
            Ok(ProbeTrial {
                seed: s,
                initial_distance: trace.distances_to_ref[0],
                final_distance,
                final_grad_norm: trace.final_grad_norm(),
                iterations: trace.iterations(),
                termination: trace.termination,
                success: trace.termination != Termination::Diverged && final_distance <= success_tol,
                monotone_fraction: trace.monotone_distance_fraction().unwrap_or(1.0),
                left_ball: trace.distances_to_ref.iter().any(|d| *d >= beta && beta > 0.0),
            })
        })
        .collect::<Result<_>>()?;
    let successes = per_trial.iter().filter(|t| t.success).count();
    Ok(ProbeSummary { beta, trials, successes, tau: settings.tau(), seed, success_tol, per_trial })
}

/// Least-squares isotonic fit (pool adjacent violators).
fn isotonic(u: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(u.len());
    for &x in u {
        blocks.push((x, 1));
        while blocks.len() > 1 {
            let (m2, n2) = blocks[blocks.len() - 1];
            let (m1, n1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let n = n1 + n2;
            *blocks.last_mut().expect("two blocks") = ((m1 * n1 as f64 + m2 * n2 as f64) / n as f64, n);
        }
    }
    blocks.into_iter().flat_map(|(m, n)| std::iter::repeat_n(m, n)).collect()
}

fn effective_radius(config: &ModelConfig) -> f64 {
    if config.strict_interior {
        config.radius * (1.0 - 1e-12)
    } else {
        config.radius
    }
}

/// Moves positions into the separated set; amplitudes are kept.
///
/// For d = 1 this is the minimal-displacement placement with sorted gaps of
/// at least `ε(1 + 1e-9)` inside `[-R, R]`. For d ≥ 2 it alternates pairwise
/// push-apart with projection onto the ball, a heuristic.
pub fn repel_projection(theta: &SpikeTrain) -> Result<SpikeTrain> {
    if is_in_theta(theta) {
        return Ok(theta.clone());
    }
    let cfg = *theta.config();
    let (k, d) = (cfg.k, cfg.d);
    let eps = cfg.epsilon * (1.0 + SEPARATION_MARGIN);
    let radius = effective_radius(&cfg);
    let infeasible = || Error::InfeasibleSeparation { k, epsilon: cfg.epsilon, radius: cfg.radius };
    if (k as f64 - 1.0) * eps > 2.0 * radius {
        return Err(infeasible());
    }

    let positions = if d == 1 {
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&i, &j| theta.position(i)[0].total_cmp(&theta.position(j)[0]));
        let u: Vec<f64> = order.iter().enumerate().map(|(i, &r)| theta.position(r)[0] - i as f64 * eps).collect();
        let hi = radius - (k as f64 - 1.0) * eps;
        let z = isotonic(&u);
        let mut out = vec![0.0; k];
        for (i, &r) in order.iter().enumerate() {
            out[r] = z[i].clamp(-radius, hi) + i as f64 * eps;
        }
        out
    } else {
        push_apart(theta, eps, radius).ok_or_else(infeasible)?
    };
    let result = SpikeTrain::from_flat(cfg, theta.amplitudes().to_vec(), positions)?;
    if !is_in_theta(&result) {
        return Err(infeasible());
    }
    Ok(result)
}

fn push_apart(theta: &SpikeTrain, eps: f64, radius: f64) -> Option<Vec<f64>> {
    let (k, d) = (theta.k(), theta.d());
    let mut pos: Vec<Vec<f64>> = theta.positions().map(<[f64]>::to_vec).collect();
    let target = eps * (1.0 + 1e-6);
    let project = |p: &mut Vec<f64>| {
        let n = norm2(p);
        if n > radius {
            p.iter_mut().for_each(|x| *x *= radius / n);
        }
    };
    pos.iter_mut().for_each(project);
    for _ in 0..PUSH_APART_MAX_SWEEPS {
        let mut moved = false;
        for r in 0..k {
            for s in r + 1..k {
                let gap = dist2(&pos[r], &pos[s]);
                if gap > eps {
                    continue;
                }
                moved = true;
                let dir: Vec<f64> = if gap > 0.0 {
                    pos[s].iter().zip(&pos[r]).map(|(a, b)| (a - b) / gap).collect()
                } else {
                    // coincident points: a fixed direction per pair
                    let angle = (r * k + s) as f64;
                    let mut v = vec![0.0; d];
                    v[0] = angle.cos();
                    v[1] = angle.sin();
                    v
                };
                let shift = 0.5 * (target - gap);
                for j in 0..d {
                    pos[r][j] -= shift * dir[j];
                    pos[s][j] += shift * dir[j];
                }
                project(&mut pos[r]);
                project(&mut pos[s]);
            }
        }
        if !moved {
            return Some(pos.concat());
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathPoint {
    pub lambda: f64,
    pub theta: SpikeTrain,
    pub value: f64,
    /// Number of objective evaluations along the path.
    pub evaluations: usize,
}

fn sorted_by_position(theta: &SpikeTrain) -> Result<Vec<f64>> {
    let k = theta.k();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| theta.position(i)[0].total_cmp(&theta.position(j)[0]));
    let mut packed = Vec::with_capacity(2 * k);
    packed.extend(order.iter().map(|&r| theta.amplitude(r)));
    packed.extend(order.iter().map(|&r| theta.position(r)[0]));
    Ok(packed)
}

/// For d = 1: finds λ with `g(θ_λ) = α` on the segment
/// `θ_λ = (1−λ) θ₀ + λ θ₁` between position-sorted endpoints, checking that
/// every evaluated point stays in the separated set.
pub fn interpolation_path_check(
    obj: &Objective,
    theta0: &SpikeTrain,
    theta1: &SpikeTrain,
    alpha: f64,
    grid: usize,
) -> Result<PathPoint> {
    let cfg = *obj.config();
    if cfg.d != 1 {
        return Err(Error::InvalidArgument("the interpolation path needs d = 1".into()));
    }
    if grid == 0 {
        return Err(Error::InvalidArgument("grid must be at least 1".into()));
    }
    for th in [theta0, theta1] {
        if !is_in_theta(th) {
            return Err(Error::InvalidArgument("endpoints must lie in the separated set".into()));
        }
    }
    let p0 = sorted_by_position(theta0)?;
    let p1 = sorted_by_position(theta1)?;
    let mut evaluations = 0;
    let mut at = |lambda: f64| -> Result<(SpikeTrain, f64)> {
        let packed: Vec<f64> = p0.iter().zip(&p1).map(|(x, y)| (1.0 - lambda) * x + lambda * y).collect();
        let th = unpack(&cfg, &packed)?;
        if !is_in_theta(&th) {
            return Err(Error::InvalidArgument(format!("path point at lambda = {lambda} left the separated set")));
        }
        evaluations += 1;
        let v = obj.eval(&th)?;
        Ok((th, v))
    };
    let (th0, g0) = at(0.0)?;
    let (th1, g1) = at(1.0)?;
    let (low, high) = (g0.min(g1), g0.max(g1));
    if !(alpha >= low && alpha <= high) {
        return Err(Error::AlphaOutOfRange { alpha, low, high });
    }
    if alpha == g0 {
        return Ok(PathPoint { lambda: 0.0, theta: th0, value: g0, evaluations });
    }
    if alpha == g1 {
        return Ok(PathPoint { lambda: 1.0, theta: th1, value: g1, evaluations });
    }
    let tol = 1e-8 * (1.0 + alpha);
    let mut prev = (0.0, g0);
    let mut bracket = None;
    for i in 1..=grid {
        let lambda = i as f64 / grid as f64;
        let (th, v) = if i == grid { (th1.clone(), g1) } else { at(lambda)? };
        if (v - alpha).abs() <= tol {
            return Ok(PathPoint { lambda, theta: th, value: v, evaluations });
        }
        if (prev.1 - alpha) * (v - alpha) < 0.0 {
            bracket = Some((prev, (lambda, v)));
            break;
        }
        prev = (lambda, v);
    }
    let ((mut lo, mut g_lo), (mut hi, _)) =
        bracket.ok_or_else(|| Error::InvalidArgument("no sign change found along the path".into()))?;
    let mut best = None;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let (th, v) = at(mid)?;
        if (v - alpha).abs() <= tol {
            best = Some(PathPoint { lambda: mid, theta: th, value: v, evaluations: 0 });
            break;
        }
        if (g_lo - alpha) * (v - alpha) < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            g_lo = v;
        }
        if hi - lo <= f64::EPSILON {
            best = Some(PathPoint { lambda: mid, theta: th, value: v, evaluations: 0 });
            break;
        }
    }
    let mut point = best.ok_or_else(|| Error::InvalidArgument("bisection did not converge".into()))?;
    point.evaluations = evaluations;
    Ok(point)
}
