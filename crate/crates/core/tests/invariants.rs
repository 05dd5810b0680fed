use num_complex::Complex64;
use proptest::prelude::*;

use spikebasin::measurement::{draw_gaussian_operator, FourierOperator};
use spikebasin::objective::Objective;
use spikebasin::solver::{gradient_descent, DescentSettings};
use spikebasin::spike_model::{
    is_in_theta, pack, perturb, sample_theta, AmplitudeRange, GeneralizedDipole, ModelConfig, SpikeTrain,
};

fn operator(m: usize, d: usize, seed: u64) -> FourierOperator {
    draw_gaussian_operator(m, 0.5, d, seed).unwrap()
}

fn rel_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

fn unit(raw: &[f64]) -> Vec<f64> {
    let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    raw.iter().map(|x| x / n).collect()
}

fn direction(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, d).prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampled_trains_are_separated(k in 1usize..5, d in 1usize..4, seed in any::<u64>()) {
        let config = ModelConfig::new(k, d, 0.4, 2.0).unwrap();
        let theta = sample_theta(&config, &AmplitudeRange::signed_magnitude(0.5, 2.0), seed).unwrap();
        prop_assert!(is_in_theta(&theta));
    }

    #[test]
    fn apply_is_linear(
        d in 1usize..4,
        seed in any::<u64>(),
        c1 in -3.0..3.0f64,
        c2 in -3.0..3.0f64,
        t1 in prop::collection::vec(-2.0..2.0f64, 3),
        t2 in prop::collection::vec(-2.0..2.0f64, 3),
        v in direction(3),
    ) {
        let op = operator(40, d, seed);
        let (t1, t2) = (&t1[..d], &t2[..d]);
        prop_assume!(v[..d].iter().map(|x| x * x).sum::<f64>() > 1e-4);
        let v = unit(&v[..d]);
        let nus = [
            GeneralizedDipole::new(c1, c2, t1.to_vec(), v.clone()).unwrap(),
            GeneralizedDipole::new(c2, -c1, t2.to_vec(), v.clone()).unwrap(),
        ];
        let got = op.apply_dipoles(&nus).unwrap();
        let dirac = |t: &[f64]| op.apply_dirac(t).unwrap().values;
        let deriv = |t: &[f64]| op.apply_dirac_derivative(t, &v).unwrap().values;
        let expected: Vec<Complex64> = (0..op.m())
            .map(|l| dirac(t1)[l] * c1 + deriv(t1)[l] * c2 + dirac(t2)[l] * c2 - deriv(t2)[l] * c1)
            .collect();
        prop_assert!(rel_diff(&got.values, &expected) <= 1e-12);
    }

    #[test]
    fn derivative_superposes_along_coordinates(
        d in 1usize..4,
        seed in any::<u64>(),
        t in prop::collection::vec(-2.0..2.0f64, 3),
        u in prop::collection::vec(-2.0..2.0f64, 3),
    ) {
        let u = &u[..d];
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assume!(norm > 1e-3);
        let op = operator(40, d, seed);
        let t = &t[..d];
        let mut sum = vec![Complex64::new(0.0, 0.0); op.m()];
        for (j, uj) in u.iter().enumerate() {
            let mut e = vec![0.0; d];
            e[j] = 1.0;
            for (s, z) in sum.iter_mut().zip(op.apply_dirac_derivative(t, &e).unwrap().values) {
                *s += z * uj;
            }
        }
        let dir: Vec<f64> = u.iter().map(|x| x / norm).collect();
        let along: Vec<Complex64> =
            op.apply_dirac_derivative(t, &dir).unwrap().values.into_iter().map(|z| z * norm).collect();
        prop_assert!(rel_diff(&sum, &along) <= 1e-12);
    }

    #[test]
    fn d_a_r_dominates_second_derivatives(
        d in 1usize..4,
        seed in any::<u64>(),
        t in prop::collection::vec(-2.0..2.0f64, 3),
        v1 in direction(3),
        v2 in direction(3),
    ) {
        let op = operator(60, d, seed);
        prop_assume!(v1[..d].iter().chain(&v2[..d]).all(|x| x.abs() > 1e-2));
        let (v1, v2) = (unit(&v1[..d]), unit(&v2[..d]));
        let bound = op.compute_d_a_r();
        let second = op.apply_dirac_second_derivative(&t[..d], &v1, &v2).unwrap();
        for z in second.values {
            prop_assert!(z.norm() <= bound * (1.0 + 1e-12));
        }
    }

    #[test]
    fn objective_is_permutation_invariant(k in 2usize..5, d in 1usize..3, seed in any::<u64>(), shift in 1usize..4) {
        let config = ModelConfig::new(k, d, 0.5, 2.0).unwrap();
        let range = AmplitudeRange::signed_magnitude(0.5, 2.0);
        let truth = sample_theta(&config, &range, seed).unwrap();
        let theta = sample_theta(&config, &range, seed.wrapping_add(1)).unwrap();
        let obj = Objective::noiseless(operator(64, d, seed ^ 7), &truth).unwrap();

        let perm: Vec<usize> = (0..k).map(|r| (r + shift) % k).collect();
        let permuted = SpikeTrain::new(
            config,
            perm.iter().map(|&r| theta.amplitude(r)).collect(),
            perm.iter().map(|&r| theta.position(r).to_vec()).collect(),
        )
        .unwrap();
        // packed index of parameter i of the permuted train in the original
        let index = |i: usize| if i < k { perm[i] } else { k + perm[(i - k) / d] * d + (i - k) % d };

        let (g0, g1) = (obj.eval(&theta).unwrap(), obj.eval(&permuted).unwrap());
        prop_assert!((g0 - g1).abs() <= 1e-12 * g0.max(1.0));
        let (grad0, grad1) = (obj.gradient(&theta).unwrap(), obj.gradient(&permuted).unwrap());
        let h0 = obj.hessian(&theta).unwrap().h;
        let h1 = obj.hessian(&permuted).unwrap().h;
        let scale = h0.amax().max(1.0);
        for i in 0..grad1.len() {
            prop_assert!((grad1[i] - grad0[index(i)]).abs() <= 1e-10 * scale);
            for j in 0..grad1.len() {
                prop_assert!((h1[(i, j)] - h0[(index(i), index(j))]).abs() <= 1e-10 * scale);
            }
        }
        prop_assert!((&h0 - h0.transpose()).amax() <= 1e-12 * scale);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn small_steps_near_the_truth_decrease_monotonically(seed in any::<u64>()) {
        let config = ModelConfig::new(2, 1, 1.0, 2.0).unwrap();
        let truth = SpikeTrain::new(config, vec![1.0, -1.5], vec![vec![-0.7], vec![0.6]]).unwrap();
        let op = draw_gaussian_operator(400, spikebasin::kernel::sigma_from_k(2), 1, seed).unwrap();
        let obj = Objective::noiseless(op, &truth).unwrap();
        let start = perturb(&truth, 1e-3, seed.wrapping_add(1)).unwrap();
        let lmax = spikebasin::linalg::symmetric_eigenvalues(&obj.hessian(&truth).unwrap().h).unwrap()[3];
        let mut settings = DescentSettings::fixed(0.5 / lmax);
        settings.max_iters = 3000;
        settings.record_trace = true;
        let trace = gradient_descent(&obj, &start, &settings, Some(&truth)).unwrap();
        for w in trace.objective_values.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        prop_assert_eq!(trace.monotone_distance_fraction(), Some(1.0));
        prop_assert!(trace.final_distance().unwrap() < 1e-6, "{:?}", trace.final_distance());
        prop_assert_eq!(trace.final_theta.len(), pack(&truth).len());
    }
}
