//! Parameter vectors of k-spike trains and the separated model set.
//!
//! A train `Σ a_r δ_{t_r}` is packed as `(a_1..a_k, t_1..t_k)` with the
//! positions flattened row-major, giving a vector of length `k(d+1)`. Every
//! gradient and Hessian index in the crate follows this layout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{dist2, norm2, random_in_ball, rng_from_seed};

/// Attempt budget for rejection sampling of separated positions.
pub const DEFAULT_SAMPLING_BUDGET: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub k: usize,
    pub d: usize,
    pub epsilon: f64,
    #[serde(rename = "R")]
    pub radius: f64,
    /// Require positions in the open ball instead of the closed one.
    #[serde(default)]
    pub strict_interior: bool,
}

impl ModelConfig {
    pub fn new(k: usize, d: usize, epsilon: f64, radius: f64) -> Result<Self> {
        let cfg = Self { k, d, epsilon, radius, strict_interior: false };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if self.d == 0 {
            return Err(Error::InvalidConfig("d must be at least 1".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidConfig(format!("R must be positive, got {}", self.radius)));
        }
        if self.epsilon >= 2.0 * self.radius {
            return Err(Error::InvalidConfig(format!(
                "epsilon = {} must be below 2R = {}",
                self.epsilon,
                2.0 * self.radius
            )));
        }
        Ok(())
    }

    /// Length of a packed parameter vector, `k(d+1)`.
    pub fn dim(&self) -> usize {
        self.k * (self.d + 1)
    }

    /// Same model with the separation replaced by `epsilon`.
    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        Self { epsilon, ..*self }
    }

    fn in_domain(&self, t: &[f64]) -> bool {
        let n = norm2(t);
        if self.strict_interior {
            n < self.radius
        } else {
            n <= self.radius
        }
    }
}

/// A k-spike train `Σ a_r δ_{t_r}` together with its model metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeTrain {
    amplitudes: Vec<f64>,
    positions: Vec<f64>,
    config: ModelConfig,
}

impl SpikeTrain {
    /// `positions` holds one d-vector per spike.
    pub fn new(config: ModelConfig, amplitudes: Vec<f64>, positions: Vec<Vec<f64>>) -> Result<Self> {
        config.validate()?;
        if amplitudes.len() != config.k {
            return Err(Error::DimensionMismatch { expected: config.k, got: amplitudes.len() });
        }
        if positions.len() != config.k {
            return Err(Error::DimensionMismatch { expected: config.k, got: positions.len() });
        }
        let mut flat = Vec::with_capacity(config.k * config.d);
        for p in &positions {
            if p.len() != config.d {
                return Err(Error::DimensionMismatch { expected: config.d, got: p.len() });
            }
            flat.extend_from_slice(p);
        }
        Self::from_flat(config, amplitudes, flat)
    }

    /// Like [`SpikeTrain::new`] but with positions already flattened row-major.
    pub fn from_flat(config: ModelConfig, amplitudes: Vec<f64>, positions: Vec<f64>) -> Result<Self> {
        if amplitudes.len() != config.k {
            return Err(Error::DimensionMismatch { expected: config.k, got: amplitudes.len() });
        }
        if positions.len() != config.k * config.d {
            return Err(Error::DimensionMismatch { expected: config.k * config.d, got: positions.len() });
        }
        Ok(Self { amplitudes, positions, config })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn k(&self) -> usize {
        self.config.k
    }

    pub fn d(&self) -> usize {
        self.config.d
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn amplitude(&self, r: usize) -> f64 {
        self.amplitudes[r]
    }

    /// Flattened positions, `k * d` values.
    pub fn positions_flat(&self) -> &[f64] {
        &self.positions
    }

    pub fn position(&self, r: usize) -> &[f64] {
        let d = self.config.d;
        &self.positions[r * d..(r + 1) * d]
    }

    pub fn positions(&self) -> impl Iterator<Item = &[f64]> {
        self.positions.chunks_exact(self.config.d)
    }

    pub fn with_config(mut self, config: ModelConfig) -> Result<Self> {
        if config.k != self.config.k || config.d != self.config.d {
            return Err(Error::InvalidConfig("k and d must not change".into()));
        }
        self.config = config;
        Ok(self)
    }

    /// Smallest and largest amplitude magnitudes.
    pub fn amplitude_extremes(&self) -> (f64, f64) {
        self.amplitudes.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), a| {
            (lo.min(a.abs()), hi.max(a.abs()))
        })
    }

    pub fn amplitude_norm(&self) -> f64 {
        norm2(&self.amplitudes)
    }
}

/// Packs a train into `(a_1..a_k, t_1..t_k)`.
pub fn pack(spikes: &SpikeTrain) -> Vec<f64> {
    let mut theta = Vec::with_capacity(spikes.config.dim());
    theta.extend_from_slice(&spikes.amplitudes);
    theta.extend_from_slice(&spikes.positions);
    theta
}

/// Inverse of [`pack`].
pub fn unpack(config: &ModelConfig, theta: &[f64]) -> Result<SpikeTrain> {
    if theta.len() != config.dim() {
        return Err(Error::DimensionMismatch { expected: config.dim(), got: theta.len() });
    }
    let (a, t) = theta.split_at(config.k);
    SpikeTrain::from_flat(*config, a.to_vec(), t.to_vec())
}

/// Minimum pairwise ℓ² distance between positions; `+∞` when k = 1.
pub fn min_separation(spikes: &SpikeTrain) -> f64 {
    let mut best = f64::INFINITY;
    for r in 0..spikes.k() {
        for s in r + 1..spikes.k() {
            best = best.min(dist2(spikes.position(r), spikes.position(s)));
        }
    }
    best
}

/// Membership in the separated set: pairwise distances strictly above
/// epsilon and every position inside the domain ball.
pub fn is_in_theta(spikes: &SpikeTrain) -> bool {
    let cfg = &spikes.config;
    min_separation(spikes) > cfg.epsilon && spikes.positions().all(|t| cfg.in_domain(t))
}

/// Interval from which amplitudes are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeRange {
    pub low: f64,
    pub high: f64,
    /// Draw `|a|` from `[low, high]` and attach a uniformly random sign.
    #[serde(default)]
    pub random_sign: bool,
    /// Reject ranges that contain zero.
    #[serde(default)]
    pub nonvanishing: bool,
}

impl AmplitudeRange {
    pub fn new(low: f64, high: f64) -> Self {
        Self { low, high, random_sign: false, nonvanishing: false }
    }

    /// Magnitudes in `[low, high]` with random sign; zero excluded when `low > 0`.
    pub fn signed_magnitude(low: f64, high: f64) -> Self {
        Self { low, high, random_sign: true, nonvanishing: low > 0.0 }
    }

    fn validate(&self) -> Result<()> {
        if !(self.low <= self.high) || !self.low.is_finite() || !self.high.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "bad amplitude range [{}, {}]",
                self.low, self.high
            )));
        }
        if self.random_sign && self.low < 0.0 {
            return Err(Error::InvalidArgument("signed magnitude range needs low >= 0".into()));
        }
        if self.nonvanishing {
            let contains_zero = if self.random_sign {
                self.low <= 0.0
            } else {
                self.low <= 0.0 && self.high >= 0.0
            };
            if contains_zero {
                return Err(Error::InvalidArgument(format!(
                    "amplitude range [{}, {}] contains zero",
                    self.low, self.high
                )));
            }
        }
        Ok(())
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mag = if self.high > self.low {
            rng.random_range(self.low..=self.high)
        } else {
            self.low
        };
        if self.random_sign && rng.random::<bool>() {
            -mag
        } else {
            mag
        }
    }
}

/// Draws a train in the separated set, deterministically from `seed`.
pub fn sample_theta(config: &ModelConfig, amplitudes: &AmplitudeRange, seed: u64) -> Result<SpikeTrain> {
    sample_theta_with_budget(config, amplitudes, seed, DEFAULT_SAMPLING_BUDGET)
}

pub fn sample_theta_with_budget(
    config: &ModelConfig,
    amplitudes: &AmplitudeRange,
    seed: u64,
    budget: usize,
) -> Result<SpikeTrain> {
    config.validate()?;
    amplitudes.validate()?;
    let mut rng = rng_from_seed(seed);
    // Restart from scratch if one spike cannot be placed after this many tries.
    const PER_SPIKE_RETRIES: usize = 1000;
    let mut attempts = 0usize;
    let positions = 'outer: loop {
        let mut placed: Vec<Vec<f64>> = Vec::with_capacity(config.k);
        while placed.len() < config.k {
            let mut ok = false;
            for _ in 0..PER_SPIKE_RETRIES {
                if attempts >= budget {
                    return Err(Error::SamplingExhausted { attempts });
                }
                attempts += 1;
                let cand = random_in_ball(&mut rng, config.d, config.radius);
                if placed.iter().all(|p| dist2(p, &cand) > config.epsilon) {
                    placed.push(cand);
                    ok = true;
                    break;
                }
            }
            if !ok {
                continue 'outer;
            }
        }
        break placed;
    };
    let amps = (0..config.k).map(|_| amplitudes.sample(&mut rng)).collect();
    let train = SpikeTrain::new(*config, amps, positions)?;
    debug_assert!(is_in_theta(&train));
    Ok(train)
}

/// Uniform draw from the open ℓ² ball of radius `beta` around `spikes` in
/// parameter space.
pub fn perturb(spikes: &SpikeTrain, beta: f64, seed: u64) -> Result<SpikeTrain> {
    if !(beta >= 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be nonnegative, got {beta}")));
    }
    if beta == 0.0 {
        return Ok(spikes.clone());
    }
    let mut rng = rng_from_seed(seed);
    let n = spikes.config.dim();
    let delta = random_in_ball(&mut rng, n, beta);
    let theta: Vec<f64> = pack(spikes).iter().zip(&delta).map(|(x, dx)| x + dx).collect();
    unpack(&spikes.config, &theta)
}

#[derive(Serialize, Deserialize)]
struct SpikeTrainJson {
    k: usize,
    d: usize,
    epsilon: f64,
    #[serde(rename = "R")]
    radius: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    strict_interior: bool,
    amplitudes: Vec<f64>,
    positions: Vec<Vec<f64>>,
}

impl Serialize for SpikeTrain {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        SpikeTrainJson {
            k: self.config.k,
            d: self.config.d,
            epsilon: self.config.epsilon,
            radius: self.config.radius,
            strict_interior: self.config.strict_interior,
            amplitudes: self.amplitudes.clone(),
            positions: self.positions().map(|p| p.to_vec()).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SpikeTrain {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = SpikeTrainJson::deserialize(deserializer)?;
        let config = ModelConfig {
            k: raw.k,
            d: raw.d,
            epsilon: raw.epsilon,
            radius: raw.radius,
            strict_interior: raw.strict_interior,
        };
        SpikeTrain::new(config, raw.amplitudes, raw.positions).map_err(serde::de::Error::custom)
    }
}

/// `a δ_t + b δ'_{t,v}`: a Dirac plus a first-order directional derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedDipole {
    pub a: f64,
    pub b: f64,
    pub t: Vec<f64>,
    pub v: Vec<f64>,
}

impl GeneralizedDipole {
    /// Checks `‖v‖ = 1` (to 1e-9) whenever `b ≠ 0`.
    pub fn new(a: f64, b: f64, t: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if t.len() != v.len() {
            return Err(Error::DimensionMismatch { expected: t.len(), got: v.len() });
        }
        if b != 0.0 {
            let n = norm2(&v);
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::NonUnitDirection { norm: n });
            }
        }
        Ok(Self { a, b, t, v })
    }

    pub fn dirac(a: f64, t: Vec<f64>) -> Self {
        let d = t.len();
        let mut v = vec![0.0; d];
        if d > 0 {
            v[0] = 1.0;
        }
        Self { a, b: 0.0, t, v }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { a: c * self.a, b: c * self.b, t: self.t.clone(), v: self.v.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn cfg(k: usize, d: usize, eps: f64, r: f64) -> ModelConfig {
        ModelConfig::new(k, d, eps, r).unwrap()
    }

    #[test]
    fn pack_examples() {
        let s = SpikeTrain::new(cfg(1, 1, 0.1, 1.0), vec![2.0], vec![vec![0.5]]).unwrap();
        assert_eq!(pack(&s), vec![2.0, 0.5]);
        let s = SpikeTrain::new(cfg(2, 2, 0.1, 2.0), vec![1.0, -1.0], vec![vec![0.0, 0.0], vec![1.0, 1.0]])
            .unwrap();
        assert_eq!(pack(&s), vec![1.0, -1.0, 0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn separation_examples() {
        let s = SpikeTrain::new(cfg(3, 1, 0.5, 4.0), vec![1.0; 3], vec![vec![0.0], vec![1.0], vec![3.0]]).unwrap();
        assert_eq!(min_separation(&s), 1.0);
        let s = SpikeTrain::new(cfg(2, 2, 0.5, 6.0), vec![1.0; 2], vec![vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(min_separation(&s), 5.0);
        let s = SpikeTrain::new(cfg(1, 2, 0.5, 6.0), vec![1.0], vec![vec![0.0, 0.0]]).unwrap();
        assert_eq!(min_separation(&s), f64::INFINITY);
        assert!(is_in_theta(&s));
    }

    #[test]
    fn theta_membership_examples() {
        let t = |r: f64, x: f64| SpikeTrain::new(cfg(2, 1, 1.0, r), vec![1.0, 1.0], vec![vec![0.0], vec![x]]).unwrap();
        assert!(is_in_theta(&t(2.0, 1.5)));
        assert!(!is_in_theta(&t(2.0, 1.0)));
        assert!(!is_in_theta(&t(1.0, 1.5)));
    }

    #[test]
    fn strict_interior_excludes_sphere() {
        let mut c = cfg(1, 1, 0.5, 1.0);
        let s = SpikeTrain::new(c, vec![1.0], vec![vec![1.0]]).unwrap();
        assert!(is_in_theta(&s));
        c.strict_interior = true;
        assert!(!is_in_theta(&s.with_config(c).unwrap()));
    }

    #[test]
    fn config_rejects_bad_values() {
        assert!(ModelConfig::new(0, 1, 1.0, 1.0).is_err());
        assert!(ModelConfig::new(1, 0, 1.0, 1.0).is_err());
        assert!(ModelConfig::new(1, 1, 0.0, 1.0).is_err());
        assert!(ModelConfig::new(1, 1, 2.0, 1.0).is_err());
    }

    #[test]
    fn sampling_succeeds_and_is_deterministic() {
        let c = cfg(3, 1, 0.5, 2.0);
        let r = AmplitudeRange::signed_magnitude(0.5, 2.0);
        for seed in 0..50 {
            let s = sample_theta(&c, &r, seed).unwrap();
            assert!(is_in_theta(&s));
            assert!(s.amplitudes().iter().all(|a| a.abs() >= 0.5 && a.abs() <= 2.0));
            assert_eq!(s, sample_theta(&c, &r, seed).unwrap());
        }
        let one = sample_theta(&cfg(1, 3, 0.5, 1.0), &r, 9).unwrap();
        assert!(norm2(one.position(0)) < 1.0);
    }

    #[test]
    fn sampling_exhausts_when_model_empty() {
        // at most three points with spacing > 1 fit in [-1, 1]
        let c = cfg(10, 1, 1.0, 1.0);
        let err = sample_theta_with_budget(&c, &AmplitudeRange::new(1.0, 1.0), 1, 100_000).unwrap_err();
        assert!(matches!(err, Error::SamplingExhausted { .. }));
    }

    #[test]
    fn nonvanishing_range_rejects_zero() {
        let mut r = AmplitudeRange::new(-1.0, 1.0);
        r.nonvanishing = true;
        assert!(sample_theta(&cfg(1, 1, 0.5, 1.0), &r, 0).is_err());
    }

    #[test]
    fn perturb_zero_is_identity() {
        let s = sample_theta(&cfg(2, 2, 0.5, 2.0), &AmplitudeRange::new(1.0, 2.0), 4).unwrap();
        assert_eq!(perturb(&s, 0.0, 1).unwrap(), s);
    }

    #[test]
    fn perturb_stays_in_open_ball() {
        let s = sample_theta(&cfg(2, 2, 0.5, 2.0), &AmplitudeRange::new(1.0, 2.0), 4).unwrap();
        let base = pack(&s);
        for seed in 0..1000 {
            let p = perturb(&s, 0.3, seed).unwrap();
            assert!(dist2(&pack(&p), &base) < 0.3);
        }
    }

    #[test]
    fn perturb_radius_distribution() {
        // uniform in an n-ball: (r/beta)^n ~ U(0,1); Kolmogorov-Smirnov at level 1e-3
        let s = sample_theta(&cfg(2, 1, 0.5, 2.0), &AmplitudeRange::new(1.0, 2.0), 4).unwrap();
        let base = pack(&s);
        let n = base.len() as i32;
        let beta = 0.7;
        let draws = 10_000;
        let mut u: Vec<f64> = (0..draws)
            .map(|i| (dist2(&pack(&perturb(&s, beta, 1000 + i).unwrap()), &base) / beta).powi(n))
            .collect();
        u.sort_by(f64::total_cmp);
        let ks = u
            .iter()
            .enumerate()
            .map(|(i, x)| (x - i as f64 / draws as f64).max((i + 1) as f64 / draws as f64 - x))
            .fold(0.0, f64::max);
        assert!(ks * (draws as f64).sqrt() < 1.95, "KS statistic {ks}");
    }

    #[test]
    fn json_layout() {
        let s = SpikeTrain::new(cfg(2, 2, 0.5, 3.0), vec![1.0, -2.0], vec![vec![0.0, 1.0], vec![1.5, -1.0]]).unwrap();
        let v: serde_json::Value = serde_json::to_value(&s).unwrap();
        assert_eq!(v["k"], 2);
        assert_eq!(v["R"], 3.0);
        assert_eq!(v["positions"][1][0], 1.5);
        let back: SpikeTrain = serde_json::from_value(v).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn dipole_direction_checked() {
        assert!(GeneralizedDipole::new(1.0, 1.0, vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(GeneralizedDipole::new(1.0, 0.0, vec![0.0, 0.0], vec![1.0, 1.0]).is_ok());
    }

    proptest! {
        #[test]
        fn pack_unpack_round_trip(k in 1usize..5, d in 1usize..4, seed in any::<u64>()) {
            let c = cfg(k, d, 0.1, 10.0);
            let mut rng = rng_from_seed(seed);
            let theta: Vec<f64> = (0..c.dim()).map(|_| rng.random_range(-5.0..5.0)).collect();
            let s = unpack(&c, &theta).unwrap();
            prop_assert_eq!(pack(&s), theta);
        }
    }
}
