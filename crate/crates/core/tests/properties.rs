use dfp_core::lossmodel::gradcheck::{numeric_gradient, random_instance, relative_error, FD_STEP};
use dfp_core::lossmodel::{
    basis, gradient, h_norm_sq, loss, Center, LossParams, LossProblem, OutputTransform,
    RadialFunction, SampleSet, TrainingSample,
};
use dfp_core::modelpred::{steepest_descent_step, Curvature, Filter};
use dfp_core::numerics::{conv_transpose, conv_valid, dot, norm_sq, ScoreMap, Tensor3};
use dfp_core::tracking::TargetBox;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tensor(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Tensor3<f64> {
    Tensor3::from_fn(h, w, c, |_, _, _| rng.gen_range(-1.0..1.0))
}

/// Quadratic instance: unit mask, random label and weight.
fn quadratic(seed: u64, h: usize, k: usize, c: usize, n: usize) -> (SampleSet<f64>, LossParams<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let knots = 6;
    let s = (h - k + 1) as f64;
    let set = SampleSet::from_samples(
        (0..n)
            .map(|_| {
                let x = tensor(&mut rng, h, h, c);
                TrainingSample::new(x, Center::new(rng.gen_range(0.0..s - 1.0), rng.gen_range(0.0..s - 1.0)))
                    .with_weight(rng.gen_range(0.5..2.0))
            })
            .collect(),
    );
    let params = LossParams::from_coefficients(
        0.7,
        (0..knots).map(|_| rng.gen_range(-0.5..1.0)).collect(),
        (0..knots).map(|_| rng.gen_range(0.3..1.5)).collect(),
        vec![60.0; knots],
        rng.gen_range(0.05..0.5),
    )
    .unwrap();
    (set, params)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_transpose_is_adjoint(seed in any::<u64>(), h in 3usize..9, w in 3usize..9, k in 1usize..4, c in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = tensor(&mut rng, h, w, c);
        let f = tensor(&mut rng, k.min(h), k.min(w), c);
        let s = conv_valid(&x, &f).unwrap();
        let g = ScoreMap::from_fn(s.height(), s.width(), |_, _| rng.gen_range(-1.0..1.0));
        let lhs = dot(&s, &g).unwrap();
        let rhs = dot(&f, &conv_transpose(&x, &g, (f.height(), f.width())).unwrap()).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn conv_is_linear_in_filter(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = tensor(&mut rng, 7, 6, 2);
        let f = tensor(&mut rng, 3, 2, 2);
        let g = tensor(&mut rng, 3, 2, 2);
        let combo = f.scale(a).axpy(b, &g).unwrap();
        let lhs = conv_valid(&x, &combo).unwrap();
        let sf = conv_valid(&x, &f).unwrap();
        let sg = conv_valid(&x, &g).unwrap();
        for i in 0..lhs.as_slice().len() {
            let rhs = a * sf.as_slice()[i] + b * sg.as_slice()[i];
            prop_assert!((lhs.as_slice()[i] - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn basis_partitions_unity(n in 2usize..24, spacing in 0.05f64..5.0, d in 0.0f64..200.0) {
        let sum: f64 = (0..n).map(|k| basis(k, n, spacing, d)).sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn constant_coefficients_give_constant_function(n in 2usize..16, c in -5.0f64..5.0, d in 0.0f64..50.0) {
        let rf = RadialFunction::new(vec![c; n], 0.8, OutputTransform::Identity).unwrap();
        prop_assert!((rf.eval(d).unwrap() - c).abs() <= 1e-12 * (1.0 + c.abs()));
    }

    #[test]
    fn rbf_matches_basis_expansion(seed in any::<u64>(), n in 2usize..12, d in 0.0f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let rf = RadialFunction::new(coeffs.clone(), 1.3, OutputTransform::Identity).unwrap();
        let expect: f64 = coeffs.iter().enumerate().map(|(k, c)| c * basis(k, n, 1.3, d)).sum();
        prop_assert!((rf.eval(d).unwrap() - expect).abs() <= 1e-12);
    }

    #[test]
    fn mask_stays_in_unit_interval(seed in any::<u64>(), d in 0.0f64..30.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs: Vec<f64> = (0..8).map(|_| rng.gen_range(-30.0..30.0)).collect();
        let rf = RadialFunction::new(coeffs, 1.0, OutputTransform::Sigmoid).unwrap();
        let m = rf.eval(d).unwrap();
        prop_assert!((0.0..=1.0).contains(&m));
    }

    #[test]
    fn gradient_matches_central_differences(seed in 0u64..10_000) {
        let inst = random_instance(seed).unwrap();
        let g = gradient(&inst.filter, &inst.set, &inst.params).unwrap();
        let num = numeric_gradient(&inst, FD_STEP).unwrap();
        prop_assert!(relative_error(&g, &num) < 1e-5);
    }

    #[test]
    fn curvature_dominates_regularizer(seed in 0u64..10_000) {
        let inst = random_instance(seed).unwrap();
        let g = gradient(&inst.filter, &inst.set, &inst.params).unwrap();
        let hh = h_norm_sq(&inst.filter, &g, &inst.set, &inst.params).unwrap();
        let lam = inst.params.lambda();
        prop_assert!(hh >= lam * lam * norm_sq(&g) * (1.0 - 1e-12));
    }

    #[test]
    fn loss_is_nonnegative(seed in 0u64..10_000) {
        let inst = random_instance(seed).unwrap();
        prop_assert!(loss(&inst.filter, &inst.set, &inst.params).unwrap() >= 0.0);
    }

    #[test]
    fn sd_step_is_exact_line_search_on_quadratics(seed in any::<u64>(), t in -1.0f64..1.0) {
        let (set, params) = quadratic(seed, 7, 3, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let f = Filter::new(tensor(&mut rng, 3, 3, 2)).unwrap();
        let problem = LossProblem::new(&set, &params, (3, 3)).unwrap();
        let (l0, g) = problem.loss_and_gradient(f.weights()).unwrap();
        let step = steepest_descent_step(&f, &problem, Curvature::GaussNewton).unwrap();
        let l1 = problem.loss(step.filter.weights()).unwrap();
        prop_assert!(l1 <= l0 + 1e-12 * l0.abs());
        let beta = step.alpha * (1.0 + t);
        let other = problem.loss(&f.weights().axpy(-beta, &g).unwrap()).unwrap();
        prop_assert!(l1 <= other + 1e-10 * (1.0 + other.abs()));
    }

    #[test]
    fn sample_set_evicts_oldest_first(cap in 1usize..12, pushes in 0usize..40) {
        let mut set = SampleSet::with_capacity(cap);
        for k in 0..pushes {
            let x = Tensor3::filled(2, 2, 1, k as f64);
            let evicted = set.push(TrainingSample::new(x, Center::new(0.0, 0.0))).unwrap();
            if k >= cap {
                prop_assert_eq!(evicted.unwrap().features.get(0, 0, 0), (k - cap) as f64);
            } else {
                prop_assert!(evicted.is_none());
            }
        }
        prop_assert_eq!(set.len(), pushes.min(cap));
        let first = pushes.saturating_sub(cap);
        for (i, s) in set.iter().enumerate() {
            prop_assert_eq!(s.features.get(0, 0, 0), (first + i) as f64);
        }
    }

    #[test]
    fn iou_is_symmetric_and_bounded(
        a in (0.0f64..100.0, 0.0f64..100.0, 1.0f64..50.0, 1.0f64..50.0),
        b in (0.0f64..100.0, 0.0f64..100.0, 1.0f64..50.0, 1.0f64..50.0),
    ) {
        let a = TargetBox::new(a.0, a.1, a.2, a.3).unwrap();
        let b = TargetBox::new(b.0, b.1, b.2, b.3).unwrap();
        let (ab, ba) = (a.iou(&b), b.iou(&a));
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((a.iou(&a) - 1.0).abs() < 1e-12);
    }
}
