//! Small numerical utilities shared across modules: fixed-order pairwise
//! summation, seed derivation, ball sampling and adaptive quadrature.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const PAIRWISE_BLOCK: usize = 32;

/// Pairwise (cascade) summation of `term(i)` for `i` in `0..n`.
///
/// The reduction tree depends only on `n`, so results are bit-stable for a
/// given input regardless of thread count.
pub fn pairwise_sum<F: Fn(usize) -> f64>(n: usize, term: F) -> f64 {
    fn rec<F: Fn(usize) -> f64>(lo: usize, hi: usize, term: &F) -> f64 {
        if hi - lo <= PAIRWISE_BLOCK {
            let mut s = 0.0;
            for i in lo..hi {
                s += term(i);
            }
            s
        } else {
            let mid = lo + (hi - lo) / 2;
            rec(lo, mid, term) + rec(mid, hi, term)
        }
    }
    rec(0, n, &term)
}

/// Pairwise summation of a slice.
pub fn pairwise_sum_slice(values: &[f64]) -> f64 {
    pairwise_sum(values.len(), |i| values[i])
}

/// Deterministic child seed for trial `index` of a run seeded with `seed` (splitmix64).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Uniformly distributed unit vector in R^dim (normalized Gaussian).
pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm2(&v);
        if n > 1e-300 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Uniform point in the open ball of radius `radius` in R^dim.
pub fn random_in_ball<R: Rng + ?Sized>(rng: &mut R, dim: usize, radius: f64) -> Vec<f64> {
    let dir = random_unit_vector(rng, dim);
    // u in [0,1): radius * u^(1/dim) stays strictly inside
    let u: f64 = rng.random::<f64>();
    let r = radius * u.powf(1.0 / dim as f64);
    dir.into_iter().map(|x| x * r).collect()
}

// Gauss–Kronrod 7/15 abscissae and weights.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Globally adaptive Gauss–Kronrod quadrature of `f` over `[a, b]`.
///
/// Subdivides the interval with the largest error estimate until the summed
/// estimate drops below `max(abs_tol, rel_tol * |I|)`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64, abs_tol: f64) -> Result<f64> {
    const MAX_INTERVALS: usize = 4000;
    if a == b {
        return Ok(0.0);
    }
    let (v, e) = gk15(&f, a, b);
    let mut parts = vec![(a, b, v, e)];
    loop {
        let total: f64 = parts.iter().map(|p| p.2).sum();
        let err: f64 = parts.iter().map(|p| p.3).sum();
        if !total.is_finite() {
            return Err(Error::Quadrature("non-finite integrand".into()));
        }
        if err <= abs_tol.max(rel_tol * total.abs()) {
            return Ok(total);
        }
        if parts.len() >= MAX_INTERVALS {
            return Err(Error::Quadrature(format!(
                "error estimate {err:e} above tolerance after {MAX_INTERVALS} subintervals"
            )));
        }
        let (worst, _) = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("nonempty");
        let (lo, hi, _, _) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(&f, lo, mid);
        let (v2, e2) = gk15(&f, mid, hi);
        parts.push((lo, mid, v1, e1));
        parts.push((mid, hi, v2, e2));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let s = pairwise_sum(1000, |i| i as f64);
        assert_eq!(s, 499_500.0);
        assert_eq!(pairwise_sum(0, |_| 1.0), 0.0);
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(7, 0);
        let b = derive_seed(7, 1);
        let c = derive_seed(8, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(7, 0));
    }

    #[test]
    fn quadrature_gaussian_integral() {
        let v = integrate(|x| (-x * x).exp(), -10.0, 10.0, 1e-12, 0.0).unwrap();
        assert!((v - std::f64::consts::PI.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn quadrature_polynomial_exact() {
        let v = integrate(|x| x.powi(5) - 3.0 * x * x, 0.0, 2.0, 1e-14, 1e-14).unwrap();
        assert!((v - (64.0 / 6.0 - 8.0)).abs() < 1e-12);
    }

    #[test]
    fn ball_samples_inside() {
        let mut rng = rng_from_seed(3);
        for dim in 1..5 {
            for _ in 0..200 {
                let p = random_in_ball(&mut rng, dim, 2.5);
                assert!(norm2(&p) < 2.5);
            }
            let u = random_unit_vector(&mut rng, dim);
            assert!((norm2(&u) - 1.0).abs() < 1e-14);
        }
    }
}
