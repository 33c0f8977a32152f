use nalgebra::DVector;
use proptest::prelude::*;
use rotd_core::environments::{collect_iid_samples, random_walk, Sample};
use rotd_core::features::FeatureMap;
use rotd_core::solvers::{
    gq_step, gq_trace_update, norm, project_ball, rogq_step, rotd_step, soft_threshold, td_step,
    tdc_step, Algorithm, DualNorm, GradientTdState, NormPair, PrimalDualState, SolverConfig,
    StepSize, TraceState,
};

fn vec_of(d: usize, r: f64) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-r..r, d).prop_map(DVector::from_vec)
}

fn sample_of(d: usize) -> impl Strategy<Value = Sample> {
    (vec_of(d, 1.0), -1.0f64..1.0, vec_of(d, 1.0)).prop_map(|(p, r, q)| Sample::new(p, r, q))
}

fn norms() -> impl Strategy<Value = DualNorm> {
    prop_oneof![Just(DualNorm::L1), Just(DualNorm::L2), Just(DualNorm::Linf)]
}

fn close(a: &DVector<f64>, b: &DVector<f64>, tol: f64) -> bool {
    (a - b).amax() <= tol
}

proptest! {
    #[test]
    fn soft_threshold_is_nonexpansive(
        (a, b) in (1usize..10).prop_flat_map(|d| (vec_of(d, 5.0), vec_of(d, 5.0))),
        rho in 0.0f64..3.0,
    ) {
        let lhs = (soft_threshold(&a, rho) - soft_threshold(&b, rho)).norm();
        prop_assert!(lhs <= (a - b).norm() + 1e-12);
    }

    #[test]
    fn soft_threshold_zero_set(x in (1usize..10).prop_flat_map(|d| vec_of(d, 3.0)), r1 in 0.0f64..2.0, r2 in 0.0f64..2.0) {
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        let s = soft_threshold(&x, lo);
        for i in 0..x.len() {
            if x[i].abs() <= lo {
                prop_assert_eq!(s[i], 0.0);
            }
        }
        let zeros = |v: &DVector<f64>| v.iter().filter(|c| **c == 0.0).count();
        prop_assert!(zeros(&soft_threshold(&x, hi)) >= zeros(&s));
    }

    #[test]
    fn projection_is_idempotent(y in (1usize..10).prop_flat_map(|d| vec_of(d, 4.0)), n in norms()) {
        let p = project_ball(&y, n);
        prop_assert!(norm(p.as_slice(), n) <= 1.0 + 1e-12);
        prop_assert!(close(&project_ball(&p, n), &p, 1e-14));
        if norm(y.as_slice(), n) <= 1.0 {
            prop_assert_eq!(p, y);
        }
    }

    #[test]
    fn gq_without_trace_is_tdc(
        (s, theta, w) in (2usize..8).prop_flat_map(|d| (sample_of(d), vec_of(d, 2.0), vec_of(d, 2.0))),
        alpha in 0.0f64..0.5, eta in 0.1f64..10.0, gamma in 0.0f64..1.0,
    ) {
        let mut a = GradientTdState { theta: theta.clone(), w: w.clone(), t: 0 };
        let mut b = a.clone();
        let mut tr = TraceState::new(s.dim(), 0.0);
        gq_trace_update(&mut tr, &s, gamma);
        gq_step(&mut a, &tr, &s, alpha, eta, gamma).unwrap();
        tdc_step(&mut b, &s, alpha, eta, gamma).unwrap();
        prop_assert!(close(&a.theta, &b.theta, 1e-14));
        prop_assert!(close(&a.w, &b.w, 1e-14));
    }

    #[test]
    fn tdc_with_zero_w_is_td(
        (s, theta) in (2usize..8).prop_flat_map(|d| (sample_of(d), vec_of(d, 2.0))),
        alpha in 0.0f64..0.5, eta in 0.1f64..10.0, gamma in 0.0f64..1.0,
    ) {
        let mut a = GradientTdState::with_theta(theta.clone());
        let mut b = GradientTdState::with_theta(theta);
        tdc_step(&mut a, &s, alpha, eta, gamma).unwrap();
        td_step(&mut b, &s, alpha, gamma).unwrap();
        prop_assert!(close(&a.theta, &b.theta, 1e-14));
    }

    #[test]
    fn rogq_without_trace_is_rotd(
        (s, x, y) in (2usize..8).prop_flat_map(|d| (sample_of(d), vec_of(2 * d, 1.0), vec_of(2 * d, 0.3))),
        alpha in 0.001f64..0.5, eta in 0.1f64..10.0, gamma in 0.0f64..1.0,
        rho1 in 0.0f64..0.5, rho2 in 0.0f64..0.5,
    ) {
        let mut cfg = SolverConfig::new(Algorithm::RoTd, alpha, eta, gamma);
        cfg.rho1 = rho1;
        cfg.rho2 = rho2;
        let mut a = PrimalDualState::zeros(x.len());
        a.x = x;
        a.y = y;
        let mut b = a.clone();
        rotd_step(&mut a, &s, &cfg).unwrap();
        let mut tr = TraceState::new(s.dim(), 0.0);
        gq_trace_update(&mut tr, &s, gamma);
        cfg.algorithm = Algorithm::RoGq;
        rogq_step(&mut b, &tr, &s, &cfg).unwrap();
        prop_assert!(close(&a.x, &b.x, 1e-14));
        prop_assert!(close(&a.y, &b.y, 1e-14));
    }

    #[test]
    fn dual_stays_feasible_and_average_in_hull(
        samples in (2usize..6).prop_flat_map(|d| prop::collection::vec(sample_of(d), 1..40)),
        alpha in 0.01f64..1.0,
        pair in prop_oneof![Just(NormPair::L2), Just(NormPair::L1Linf), Just(NormPair::LinfL1)],
        decay in any::<bool>(),
    ) {
        let mut cfg = SolverConfig::new(Algorithm::RoTd, alpha, 5.0, 0.9);
        cfg.norm = pair;
        cfg.rho1 = 0.01;
        if decay {
            cfg.step = StepSize::InvSqrt(alpha);
        }
        let n = 2 * samples[0].dim();
        let mut st = PrimalDualState::zeros(n);
        let mut lo = DVector::from_element(n, f64::INFINITY);
        let mut hi = DVector::from_element(n, f64::NEG_INFINITY);
        for s in &samples {
            rotd_step(&mut st, s, &cfg).unwrap();
            prop_assert!(norm(st.y.as_slice(), pair.dual()) <= 1.0 + 1e-12);
            prop_assert!(st.sum_alpha > 0.0);
            lo = lo.inf(&st.x);
            hi = hi.sup(&st.x);
        }
        let (xbar, _) = st.average_iterates().unwrap();
        for i in 0..n {
            prop_assert!(xbar[i] >= lo[i] - 1e-12 && xbar[i] <= hi[i] + 1e-12);
        }
    }
}

#[test]
fn constant_step_average_is_arithmetic_mean() {
    let model = random_walk();
    let fmap = FeatureMap::tabular(5).unwrap();
    let batch = collect_iid_samples(&model, &fmap, 50, 3).unwrap();
    let cfg = SolverConfig::new(Algorithm::RoTd, 0.05, 1.0, 0.9);
    let mut st = PrimalDualState::zeros(10);
    let mut sum = DVector::zeros(10);
    for s in &batch.samples {
        rotd_step(&mut st, s, &cfg).unwrap();
        sum += &st.x;
    }
    let (xbar, _) = st.average_iterates().unwrap();
    assert!(close(&xbar, &(sum / 50.0), 1e-14));
}

#[test]
fn runs_are_deterministic() {
    let model = random_walk();
    let fmap = FeatureMap::dependent(5).unwrap();
    let run = || {
        let batch = collect_iid_samples(&model, &fmap, 500, 11).unwrap();
        let mut cfg = SolverConfig::new(Algorithm::RoTd, 0.02, 2.0, 0.9);
        cfg.rho1 = 0.001;
        let mut st = PrimalDualState::zeros(2 * fmap.dim());
        for s in &batch.samples {
            rotd_step(&mut st, s, &cfg).unwrap();
        }
        st
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    let bits = |v: &DVector<f64>| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.x_weighted_sum), bits(&b.x_weighted_sum));
}
