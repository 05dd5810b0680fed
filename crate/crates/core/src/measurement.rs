//! Weighted Fourier sampling `(Au)_l = (1/√m) ∫ c_l e^{-i⟨ω_l, t⟩} du(t)` applied
//! to Diracs and their first and second directional derivatives.

use std::io::{BufRead, Write};
use std::ops::{Add, Sub};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{measure_norm_h_sq, RadialKernel};
use crate::numeric::{derive_seed, norm2, pairwise_sum, random_unit_vector, rng_from_seed};
use crate::spike_model::{is_in_theta, perturb, sample_theta, AmplitudeRange, GeneralizedDipole, ModelConfig, SpikeTrain};

const UNIT_TOL: f64 = 1e-9;
const DEGENERATE_NORM_SQ: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FourierOperator {
    m: usize,
    d: usize,
    frequencies: Vec<f64>,
    weights: Vec<f64>,
    normalized: bool,
    seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct OperatorJson {
    m: usize,
    d: usize,
    frequencies: Vec<Vec<f64>>,
    weights: Vec<f64>,
    seed: Option<u64>,
    #[serde(default = "default_true")]
    normalized: bool,
}

fn default_true() -> bool {
    true
}

impl Serialize for FourierOperator {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        OperatorJson {
            m: self.m,
            d: self.d,
            frequencies: self.frequencies.chunks(self.d).map(<[f64]>::to_vec).collect(),
            weights: self.weights.clone(),
            seed: self.seed,
            normalized: self.normalized,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for FourierOperator {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = OperatorJson::deserialize(d)?;
        let mut op = FourierOperator::new(raw.d, raw.frequencies, raw.weights).map_err(serde::de::Error::custom)?;
        if op.m != raw.m {
            return Err(serde::de::Error::custom(format!("m = {} but {} frequencies given", raw.m, op.m)));
        }
        op.normalized = raw.normalized;
        op.seed = raw.seed;
        Ok(op)
    }
}

impl FourierOperator {
    /// Operator with explicit frequencies (one per row) and weights, normalized by `1/√m`.
    pub fn new(d: usize, frequencies: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let m = frequencies.len();
        if m == 0 {
            return Err(Error::InvalidArgument("operator needs at least one frequency".into()));
        }
        if d == 0 {
            return Err(Error::InvalidArgument("dimension d must be at least 1".into()));
        }
        if weights.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: weights.len() });
        }
        let mut flat = Vec::with_capacity(m * d);
        for w in &frequencies {
            if w.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: w.len() });
            }
            flat.extend_from_slice(w);
        }
        if flat.iter().chain(&weights).any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("frequencies and weights must be finite".into()));
        }
        Ok(FourierOperator { m, d, frequencies: flat, weights, normalized: true, seed: None })
    }

    /// Drops the `1/√m` factor when `normalized` is false.
    pub fn with_normalization(mut self, normalized: bool) -> Self {
        self.normalized = normalized;
        self
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn frequency(&self, l: usize) -> &[f64] {
        &self.frequencies[l * self.d..(l + 1) * self.d]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn scale(&self) -> f64 {
        if self.normalized {
            1.0 / (self.m as f64).sqrt()
        } else {
            1.0
        }
    }

    fn phase(&self, l: usize, t: &[f64]) -> f64 {
        self.frequency(l).iter().zip(t).map(|(w, x)| w * x).sum()
    }

    /// `α_l(t) = s c_l e^{-i⟨ω_l, t⟩}` with `s = 1/√m` when normalized.
    pub fn alpha(&self, l: usize, t: &[f64]) -> Complex64 {
        let p = self.phase(l, t);
        Complex64::new(p.cos(), -p.sin()) * (self.scale() * self.weights[l])
    }

    fn check_point(&self, t: &[f64]) -> Result<()> {
        if t.len() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: t.len() });
        }
        Ok(())
    }

    fn check_direction(&self, v: &[f64]) -> Result<()> {
        self.check_point(v)?;
        let n = norm2(v);
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(Error::NonUnitDirection { norm: n });
        }
        Ok(())
    }

    /// `A φ(θ) = (Σ_i a_i α_l(t_i))_l`.
    pub fn apply(&self, spikes: &SpikeTrain) -> Result<MeasurementVector> {
        if spikes.d() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: spikes.d() });
        }
        let r = spikes.config().radius;
        if spikes.positions().any(|t| norm2(t) > r) {
            log::warn!("applying operator to spikes outside the ball of radius {r}");
        }
        let values = (0..self.m)
            .map(|l| {
                spikes
                    .amplitudes()
                    .iter()
                    .zip(spikes.positions())
                    .map(|(a, t)| self.alpha(l, t) * *a)
                    .sum()
            })
            .collect();
        Ok(MeasurementVector { values })
    }

    /// `A δ_t`.
    pub fn apply_dirac(&self, t: &[f64]) -> Result<MeasurementVector> {
        self.check_point(t)?;
        Ok(MeasurementVector { values: (0..self.m).map(|l| self.alpha(l, t)).collect() })
    }

    /// `(A δ'_{t,v})_l = i⟨ω_l, v⟩ α_l(t)`.
    pub fn apply_dirac_derivative(&self, t: &[f64], v: &[f64]) -> Result<MeasurementVector> {
        self.check_point(t)?;
        self.check_direction(v)?;
        Ok(self.derivative_unchecked(t, v))
    }

    fn derivative_unchecked(&self, t: &[f64], v: &[f64]) -> MeasurementVector {
        let values = (0..self.m)
            .map(|l| {
                let wv: f64 = self.frequency(l).iter().zip(v).map(|(w, x)| w * x).sum();
                Complex64::new(0.0, wv) * self.alpha(l, t)
            })
            .collect();
        MeasurementVector { values }
    }

    /// `(A δ''_{t,v1,v2})_l = -⟨ω_l, v1⟩⟨ω_l, v2⟩ α_l(t)`.
    pub fn apply_dirac_second_derivative(&self, t: &[f64], v1: &[f64], v2: &[f64]) -> Result<MeasurementVector> {
        self.check_point(t)?;
        self.check_direction(v1)?;
        self.check_direction(v2)?;
        Ok(self.second_derivative_unchecked(t, v1, v2))
    }

    fn second_derivative_unchecked(&self, t: &[f64], v1: &[f64], v2: &[f64]) -> MeasurementVector {
        let values = (0..self.m)
            .map(|l| {
                let w = self.frequency(l);
                let p1: f64 = w.iter().zip(v1).map(|(a, b)| a * b).sum();
                let p2: f64 = w.iter().zip(v2).map(|(a, b)| a * b).sum();
                self.alpha(l, t) * (-p1 * p2)
            })
            .collect();
        MeasurementVector { values }
    }

    /// `A(Σ a_i δ_{t_i} + b_i δ'_{t_i, v_i})`.
    pub fn apply_dipoles(&self, dipoles: &[GeneralizedDipole]) -> Result<MeasurementVector> {
        let mut acc = MeasurementVector::zeros(self.m);
        for nu in dipoles {
            self.check_point(&nu.t)?;
            let mut part = self.apply_dirac(&nu.t)?.scaled(nu.a);
            if nu.b != 0.0 {
                self.check_direction(&nu.v)?;
                part = &part + &self.derivative_unchecked(&nu.t, &nu.v).scaled(nu.b);
            }
            acc = &acc + &part;
        }
        Ok(acc)
    }

    /// `D_{A,R} = max_l |c_l| ‖ω_l‖² s`, the exact supremum of `|α''_{l,v,w}(t)|`.
    pub fn compute_d_a_r(&self) -> f64 {
        (0..self.m)
            .map(|l| self.weights[l].abs() * self.frequency(l).iter().map(|w| w * w).sum::<f64>())
            .fold(0.0, f64::max)
            * self.scale()
    }

    /// `√m D_{A,R}`, the bound on `‖A δ''‖₂`.
    pub fn sqrt_m_d_a_r(&self) -> f64 {
        (self.m as f64).sqrt() * self.compute_d_a_r()
    }
}

/// Random operator with `ω_l ~ N(0, σ^{-2} I)` and unit weights, so that
/// `E ‖A δ_t - A δ_s‖² = 2 - 2ρ(‖t - s‖)` for the Gaussian kernel of width σ.
pub fn draw_random_operator(m: usize, kernel: &RadialKernel, d: usize, seed: u64) -> Result<FourierOperator> {
    let sigma = kernel
        .sigma()
        .ok_or_else(|| Error::InvalidArgument(format!("random Fourier operator needs a Gaussian kernel, got {}", kernel.name())))?;
    draw_gaussian_operator(m, sigma, d, seed)
}

pub fn draw_gaussian_operator(m: usize, sigma: f64, d: usize, seed: u64) -> Result<FourierOperator> {
    if m == 0 || d == 0 {
        return Err(Error::InvalidArgument(format!("need m >= 1 and d >= 1, got m={m}, d={d}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let mut rng = rng_from_seed(seed);
    let frequencies = (0..m * d).map(|_| rng.sample::<f64, _>(StandardNormal) / sigma).collect();
    Ok(FourierOperator { m, d, frequencies, weights: vec![1.0; m], normalized: true, seed: Some(seed) })
}

/// Regular Fourier sampling in d = 1 at integer frequencies `-fc..=fc`, unit weights.
pub fn grid_operator(fc: usize) -> FourierOperator {
    let frequencies: Vec<f64> = (-(fc as i64)..=fc as i64).map(|w| w as f64).collect();
    let m = frequencies.len();
    FourierOperator { m, d: 1, frequencies, weights: vec![1.0; m], normalized: true, seed: None }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeasurementVector {
    pub values: Vec<Complex64>,
}

impl MeasurementVector {
    pub fn new(values: Vec<Complex64>) -> Result<Self> {
        if values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidArgument("measurement entries must be finite".into()));
        }
        Ok(MeasurementVector { values })
    }

    pub fn zeros(m: usize) -> Self {
        MeasurementVector { values: vec![Complex64::new(0.0, 0.0); m] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, c: f64) -> Self {
        MeasurementVector { values: self.values.iter().map(|z| z * c).collect() }
    }

    /// `re⟨x, y⟩ = re Σ x_l conj(y_l)`, pairwise-summed.
    pub fn re_inner(&self, other: &Self) -> f64 {
        pairwise_sum(self.values.len(), |l| {
            let (x, y) = (self.values[l], other.values[l]);
            x.re * y.re + x.im * y.im
        })
    }

    pub fn norm_sq(&self) -> f64 {
        pairwise_sum(self.values.len(), |l| self.values[l].norm_sqr())
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Complex Gaussian noise with `E ‖e‖² = level²`.
    pub fn gaussian_noise(m: usize, level: f64, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let s = level / (2.0 * m as f64).sqrt();
        let values = (0..m)
            .map(|_| Complex64::new(rng.sample::<f64, _>(StandardNormal) * s, rng.sample::<f64, _>(StandardNormal) * s))
            .collect();
        MeasurementVector { values }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "index,real,imag")?;
        for (i, z) in self.values.iter().enumerate() {
            writeln!(w, "{i},{:e},{:e}", z.re, z.im)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut values = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if n == 0 || line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("line {}: {e}", n + 1)))
            };
            if cols.len() != 3 {
                return Err(Error::InvalidArgument(format!("line {}: expected 3 columns", n + 1)));
            }
            let idx = parse(cols[0])? as usize;
            if idx != values.len() {
                return Err(Error::InvalidArgument(format!("line {}: index {idx} out of order", n + 1)));
            }
            values.push(Complex64::new(parse(cols[1])?, parse(cols[2])?));
        }
        MeasurementVector::new(values)
    }
}

impl Add for &MeasurementVector {
    type Output = MeasurementVector;
    fn add(self, rhs: Self) -> MeasurementVector {
        MeasurementVector { values: self.values.iter().zip(&rhs.values).map(|(x, y)| x + y).collect() }
    }
}

impl Sub for &MeasurementVector {
    type Output = MeasurementVector;
    fn sub(self, rhs: Self) -> MeasurementVector {
        MeasurementVector { values: self.values.iter().zip(&rhs.values).map(|(x, y)| x - y).collect() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RipEstimate {
    /// `max(1 - ratio_min, ratio_max - 1)`; a lower bound on the true constant.
    pub gamma_lower: f64,
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub trials: usize,
    pub skipped: usize,
    pub seed: u64,
}

fn rip_amplitudes() -> AmplitudeRange {
    AmplitudeRange::signed_magnitude(0.2, 2.0)
}

fn rip_sample(
    op: &FourierOperator,
    config: &ModelConfig,
    kernel: &RadialKernel,
    include_derivatives: bool,
    seed: u64,
) -> Result<Option<f64>> {
    let mut rng = rng_from_seed(seed);
    let dipoles: Vec<GeneralizedDipole> = if include_derivatives {
        let centers = sample_theta(config, &AmplitudeRange::signed_magnitude(1.0, 1.0), rng.random())?;
        centers
            .positions()
            .map(|t| GeneralizedDipole {
                a: rng.random_range(-1.0..1.0),
                b: rng.random_range(-1.0..1.0),
                v: random_unit_vector(&mut rng, config.d),
                t: t.to_vec(),
            })
            .collect()
    } else {
        let th1 = sample_theta(config, &rip_amplitudes(), rng.random())?;
        // alternate between independent pairs and nearby pairs (the dipole regime)
        let th2 = if rng.random::<bool>() {
            let beta = config.epsilon * 0.25 * rng.random::<f64>();
            let near = perturb(&th1, beta, rng.random())?;
            if is_in_theta(&near) {
                near
            } else {
                sample_theta(config, &rip_amplitudes(), rng.random())?
            }
        } else {
            sample_theta(config, &rip_amplitudes(), rng.random())?
        };
        th1.positions()
            .zip(th1.amplitudes())
            .map(|(t, a)| GeneralizedDipole::dirac(*a, t.to_vec()))
            .chain(th2.positions().zip(th2.amplitudes()).map(|(t, a)| GeneralizedDipole::dirac(-*a, t.to_vec())))
            .collect()
    };
    let h_sq = measure_norm_h_sq(&dipoles, kernel)?;
    if h_sq < DEGENERATE_NORM_SQ {
        return Ok(None);
    }
    Ok(Some(op.apply_dipoles(&dipoles)?.norm_sq() / h_sq))
}

/// Empirical RIP deviation over random differences of separated spike trains
/// (or sums of separated generalized dipoles when `include_derivatives`).
pub fn estimate_rip(
    op: &FourierOperator,
    config: &ModelConfig,
    kernel: &RadialKernel,
    trials: usize,
    seed: u64,
    include_derivatives: bool,
) -> Result<RipEstimate> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    if config.d != op.d {
        return Err(Error::DimensionMismatch { expected: op.d, got: config.d });
    }
    let ratios: Vec<Option<f64>> = (0..trials)
        .into_par_iter()
        .map(|i| rip_sample(op, config, kernel, include_derivatives, derive_seed(seed, i as u64)))
        .collect::<Result<_>>()?;
    rip_from_ratios(&ratios, seed)
}

/// Summarizes sampled ratios `‖Ax‖² / ‖x‖²_h`; `None` marks a skipped sample.
pub fn rip_from_ratios(ratios: &[Option<f64>], seed: u64) -> Result<RipEstimate> {
    let kept: Vec<f64> = ratios.iter().flatten().copied().collect();
    if kept.is_empty() {
        return Err(Error::AllSamplesDegenerate);
    }
    let ratio_min = kept.iter().copied().fold(f64::INFINITY, f64::min);
    let ratio_max = kept.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(RipEstimate {
        gamma_lower: (1.0 - ratio_min).max(ratio_max - 1.0).max(0.0),
        ratio_min,
        ratio_max,
        trials: ratios.len(),
        skipped: ratios.len() - kept.len(),
        seed,
    })
}

/// RIP ratio of one explicit element `Σ ν_i`, or `None` if its kernel norm is degenerate.
pub fn rip_ratio(op: &FourierOperator, kernel: &RadialKernel, dipoles: &[GeneralizedDipole]) -> Result<Option<f64>> {
    let h_sq = measure_norm_h_sq(dipoles, kernel)?;
    if h_sq < DEGENERATE_NORM_SQ {
        return Ok(None);
    }
    Ok(Some(op.apply_dipoles(dipoles)?.norm_sq() / h_sq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::gaussian_kernel;
    use approx::assert_abs_diff_eq;

    fn one(w: Vec<f64>) -> FourierOperator {
        let d = w.len();
        FourierOperator::new(d, vec![w], vec![1.0]).unwrap()
    }

    fn spike(a: f64, t: f64) -> SpikeTrain {
        let cfg = ModelConfig::new(1, 1, 0.5, 2.0).unwrap();
        SpikeTrain::new(cfg, vec![a], vec![vec![t]]).unwrap()
    }

    #[test]
    fn zero_frequency_is_constant() {
        let op = one(vec![0.0]);
        let y = op.apply(&spike(1.0, 0.7)).unwrap();
        assert_eq!(y.values[0], Complex64::new(1.0, 0.0));
        assert_eq!(op.apply_dirac_derivative(&[0.3], &[1.0]).unwrap().norm(), 0.0);
        assert_eq!(op.apply_dirac_second_derivative(&[0.3], &[1.0], &[1.0]).unwrap().norm(), 0.0);
        assert_eq!(op.compute_d_a_r(), 0.0);
    }

    #[test]
    fn closed_form_points() {
        let op = one(vec![std::f64::consts::PI]);
        let y = op.apply(&spike(1.0, 1.0)).unwrap();
        assert_abs_diff_eq!(y.values[0].re, -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(y.values[0].im, 0.0, epsilon = 1e-15);
        let op = one(vec![1.0]);
        let z = op.apply_dirac_derivative(&[0.0], &[1.0]).unwrap().values[0];
        assert_eq!(z, Complex64::new(0.0, 1.0));
        let op = FourierOperator::new(2, vec![vec![3.0, 4.0]], vec![1.0]).unwrap();
        assert_eq!(op.compute_d_a_r(), 25.0);
    }

    #[test]
    fn rejects_non_unit_directions() {
        let op = one(vec![1.0]);
        assert!(matches!(op.apply_dirac_derivative(&[0.0], &[2.0]), Err(Error::NonUnitDirection { .. })));
        assert!(op.apply_dirac_second_derivative(&[0.0], &[1.0], &[0.5]).is_err());
    }

    #[test]
    fn single_spike_modulus() {
        let k = gaussian_kernel(0.5).unwrap();
        let op = draw_random_operator(64, &k, 1, 4).unwrap();
        let y = op.apply(&spike(1.0, 0.2)).unwrap();
        for z in &y.values {
            assert_abs_diff_eq!(z.norm(), 1.0 / 8.0, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(y.norm_sq(), 1.0, epsilon = 1e-13);
    }

    #[test]
    fn draw_is_deterministic() {
        let k = gaussian_kernel(0.3).unwrap();
        let a = draw_random_operator(100, &k, 2, 9).unwrap();
        assert_eq!(a, draw_random_operator(100, &k, 2, 9).unwrap());
        assert_ne!(a, draw_random_operator(100, &k, 2, 10).unwrap());
    }

    #[test]
    fn mean_cross_term_matches_kernel() {
        let sigma = 0.5;
        let k = gaussian_kernel(sigma).unwrap();
        let op = draw_random_operator(100_000, &k, 2, 17).unwrap();
        let (t, s) = ([0.1, 0.3], [-0.2, 0.5]);
        let x = op.apply_dirac(&t).unwrap();
        let y = op.apply_dirac(&s).unwrap();
        let expected = k.f(&[t[0] - s[0], t[1] - s[1]]);
        assert!((x.re_inner(&y) - expected).abs() <= 0.01);
    }

    #[test]
    fn grid_operator_layout() {
        let op = grid_operator(3);
        assert_eq!(op.m(), 7);
        assert_eq!(op.frequency(0), &[-3.0]);
        assert_abs_diff_eq!(op.compute_d_a_r(), 9.0 / 7f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn unnormalized_drops_scale() {
        let op = FourierOperator::new(1, vec![vec![2.0], vec![1.0]], vec![1.0, 3.0]).unwrap().with_normalization(false);
        assert_eq!(op.compute_d_a_r(), 4.0);
        assert_abs_diff_eq!(op.alpha(1, &[0.0]).re, 3.0);
    }

    #[test]
    fn json_layout_and_round_trip() {
        let k = gaussian_kernel(1.0).unwrap();
        let op = draw_random_operator(3, &k, 2, 5).unwrap();
        let text = serde_json::to_string(&op).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["m"], 3);
        assert_eq!(v["frequencies"].as_array().unwrap().len(), 3);
        assert_eq!(v["seed"], 5);
        let back: FourierOperator = serde_json::from_str(&text).unwrap();
        assert_eq!(back, op);
        let bad = r#"{"m":2,"d":1,"frequencies":[[1.0]],"weights":[1.0],"seed":null}"#;
        assert!(serde_json::from_str::<FourierOperator>(bad).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let y = MeasurementVector::gaussian_noise(10, 1.0, 2);
        let mut buf = Vec::new();
        y.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("index,real,imag\n"));
        let back = MeasurementVector::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, y);
    }

    #[test]
    fn rip_all_degenerate() {
        assert!(matches!(rip_from_ratios(&[None], 0), Err(Error::AllSamplesDegenerate)));
        let k = gaussian_kernel(1.0).unwrap();
        let op = one(vec![1.0]);
        let x = [GeneralizedDipole::dirac(1.0, vec![0.2]), GeneralizedDipole::dirac(-1.0, vec![0.2])];
        assert_eq!(rip_ratio(&op, &k, &x).unwrap(), None);
    }

    #[test]
    fn rip_estimate_is_consistent() {
        let cfg = ModelConfig::new(2, 1, 1.0, 2.0).unwrap();
        let k = gaussian_kernel(crate::kernel::sigma_from_k(2)).unwrap();
        let op = draw_random_operator(2000, &k, 1, 1).unwrap();
        for deriv in [false, true] {
            let est = estimate_rip(&op, &cfg, &k, 200, 3, deriv).unwrap();
            assert!(est.ratio_min <= est.ratio_max);
            assert!(est.gamma_lower >= 0.0);
            assert_eq!(est.gamma_lower, (1.0 - est.ratio_min).max(est.ratio_max - 1.0));
            assert_eq!(est.trials, 200);
        }
    }
}
