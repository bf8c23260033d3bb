use bitstab::analysis::{
    check_lemma_max, check_normal_bound, epi_lower_bound, estimate_beta_moment, bounded_noise_certificate, default_grid,
};
use bitstab::noise::whitening_complement;
use bitstab::params::{
    derive_probe_factor, derive_round_length, min_bins, min_bins_for_gain, probe_terms, round_contraction, ControllerConfig,
    InitialState, Overrides, Scheme, SystemModel,
};
use bitstab::scalar::{bin_index, control_law, control_step, encode_step, CoderState, Mode, ZoomParams};
use bitstab::vector::{allocate_schedules, real_jordan, BallCode};
use bitstab::{simulate_trajectory, NoiseSpec, TrajectoryRng};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn derive(model: &SystemModel<f64>, o: Overrides<f64>) -> bitstab::CheckedConfig<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    ControllerConfig::derive(model, 2.0, 1.0, &o, &mut rng).unwrap().check(model).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn round_length_is_minimal(a in 1.01f64..4.9, extra in 0u32..3, delta in 0.01f64..0.3) {
        let m = min_bins_for_gain(a) + extra;
        let k = derive_round_length(a, m, delta).unwrap();
        let target = 1.0 - 3.0 * delta;
        prop_assert!(k >= 2);
        prop_assert!(round_contraction(a, m, k) <= target);
        prop_assert!(k == 2 || round_contraction(a, m, k - 1) > target);
    }

    #[test]
    fn probe_factor_meets_one_term_exactly(a in 1.01f64..3.0, k in 2u32..20, delta in 0.01f64..0.3, alpha in 1.1f64..6.0, frac in 0.05f64..1.0) {
        let gap = frac * (alpha - 0.5) / 3.0;
        let p = derive_probe_factor(a, k, delta, alpha, gap).unwrap();
        let terms = probe_terms(a, k, delta, alpha, gap);
        prop_assert!(terms.iter().all(|t| p >= a * t));
        prop_assert!(terms.iter().any(|t| p == a * t));
    }

    #[test]
    fn min_bins_is_monotone(a in 0.0f64..20.0, b in 0.0f64..20.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(min_bins_for_gain(lo) <= min_bins_for_gain(hi));
        prop_assert!(min_bins_for_gain(a) as f64 > a);
    }

    #[test]
    fn min_bins_ignores_change_of_basis(l1 in 0.2f64..1.9, l2 in 0.2f64..1.9, t in prop::array::uniform4(-1.0f64..1.0)) {
        let tm = DMatrix::from_row_slice(2, 2, &[2.0 + t[0], t[1], t[2], 2.0 + t[3]]);
        prop_assume!(tm.determinant().abs() > 0.5);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![l1, l2]));
        let a = &tm * &d * tm.clone().try_inverse().unwrap();
        let id = DMatrix::identity(2, 2);
        let m1 = min_bins(&SystemModel::<f64>::vector(d, id.clone(), NoiseSpec::zero(), InitialState::default())).unwrap();
        let m2 = min_bins(&SystemModel::<f64>::vector(a, id, NoiseSpec::zero(), InitialState::default())).unwrap();
        prop_assert_eq!(m1, m2);
    }

    #[test]
    fn control_law_is_odd(c in 0.01f64..1e6, m in 1u32..9, a in 0.5f64..8.0, seed in 0u32..100) {
        let b = seed % m;
        prop_assert_eq!(control_law(c, b, m, a), -control_law(c, m - 1 - b, m, a));
    }

    #[test]
    fn control_targets_the_bin_center(x in -10.0f64..10.0, c in 0.1f64..20.0, m in 2u32..9) {
        prop_assume!(x.abs() <= c);
        let b = bin_index(x, c, m);
        let center = control_law(c, b, m, 1.0);
        prop_assert!((x - center).abs() <= c / m as f64 * (1.0 + 1e-12));
    }

    #[test]
    fn whitening_completes_to_scaled_identity(c1 in -0.24f64..0.24, c2 in -0.24f64..0.24, n in 2usize..10) {
        let cov = DMatrix::from_fn(n, n, |i, j| match i.abs_diff(j) { 0 => 1.0, 1 => c1, 2 => c2, _ => 0.0 });
        let lambda = 1.0 + 2.0 * (c1.abs() + c2.abs());
        let comp = whitening_complement(&cov, lambda).unwrap();
        let sum = &cov + comp;
        prop_assert!((sum - DMatrix::identity(n, n) * lambda).amax() <= 1e-12);
    }

    #[test]
    fn ball_code_round_trip(r in 0.1f64..100.0, d in 1usize..4, k in 2u32..12, pts in prop::collection::vec(-1.0f64..1.0, 3)) {
        let budget = 2u64.pow(k);
        let code = BallCode::new(DVector::zeros(d), r, budget).unwrap();
        let x = DVector::from_fn(d, |i, _| pts[i] * r);
        let idx = code.encode(&x);
        prop_assert!(idx < code.codebook_size());
        prop_assert!(code.codebook_size() <= budget);
        let back = code.decode(idx);
        prop_assert!((back - &x).norm() <= code.child_radius() * (1.0 + 1e-9));
    }

    #[test]
    fn jordan_round_trip(vals in prop::collection::vec(-3.0f64..3.0, 9)) {
        let a = DMatrix::from_row_slice(3, 3, &vals);
        let dec = real_jordan(&a).unwrap();
        prop_assert!((dec.reconstruct() - &a).amax() <= 1e-6 * (1.0 + a.amax()));
        let dims: usize = dec.blocks.iter().map(|b| b.dim).sum();
        prop_assert_eq!(dims, 3);
        prop_assert!(dec.blocks.windows(2).all(|w| w[0].modulus >= w[1].modulus - 1e-9));
    }

    #[test]
    fn allocation_respects_rate(l in prop::collection::vec(0.3f64..1.6, 1..4), m in 2u32..4) {
        let product: f64 = l.iter().map(|v| v.max(1.0)).product();
        prop_assume!(product < m as f64 * 0.97);
        let a = DMatrix::from_diagonal(&DVector::from_vec(l.clone()));
        let dec = real_jordan(&a).unwrap();
        let s = allocate_schedules(&dec, m).unwrap();
        prop_assert!(s.total_density() < 1.0);
        for b in &s.blocks {
            prop_assert!(b.density > b.lower_bound);
            prop_assert!((m as f64).powf(b.density) > dec.blocks[b.block].modulus);
            let members = b.pattern.iter().filter(|&&v| v).count() as f64;
            prop_assert!(members >= b.density * s.period as f64);
        }
        for n in 1..=s.period {
            let owners = s.blocks.iter().filter(|b| b.pattern[n - 1]).count();
            prop_assert!(owners <= 1);
        }
    }

    #[test]
    fn entropy_power_verdict_matches_rate(a in 1.01f64..4.0, m in 1u32..5, nz in 0.01f64..5.0) {
        let e = epi_lower_bound(a, m, nz, 1.0, 50).unwrap();
        prop_assert_eq!(e.diverges, m as f64 <= a);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn encoder_and_controller_stay_in_step(xs in prop::collection::vec(-50.0f64..50.0, 1..200), m in 2u32..5) {
        let cfg = ControllerConfig { bins: m, round_len: 4, probe: 12.0, ..derive(&SystemModel::scalar(1.5, NoiseSpec::bounded(1.0), InitialState::default()), Overrides::default()).into_inner() };
        let p = ZoomParams::new(1.5, &cfg);
        let mut enc = CoderState::initial(&p, 4.0, false);
        let mut ctl = enc;
        for x in xs {
            let (sym, e) = encode_step(&p, &enc, x).unwrap();
            let (_, c) = control_step(&p, &ctl, sym).unwrap();
            prop_assert_eq!(e, c);
            prop_assert!(e.bound > 0.0);
            if let Mode::Emergency(j) = e.mode {
                prop_assert!(j >= 1);
            }
            enc = e;
            ctl = c;
        }
    }

    #[test]
    fn bounded_noise_never_escapes(a in 1.05f64..1.95, b in 1.0f64..5.0, scale in 1.0f64..4.0, seed in 0u64..1000) {
        let model = SystemModel::scalar(a, NoiseSpec::bounded(b), InitialState::Uniform { half_width: scale * b / (1.0 - a / 2.0) });
        let c1 = scale * b / (1.0 - a / 2.0);
        for scheme in [Scheme::BoundedNoise, Scheme::ZoomInOut] {
            let cfg = derive(&model, Overrides { initial_bound: Some(c1), scheme, ..Overrides::default() });
            let t = simulate_trajectory(&model, &cfg, 2000, TrajectoryRng::new(seed, 0)).unwrap();
            let rep = bounded_noise_certificate(&t, a, cfg.config()).unwrap();
            prop_assert!(rep.passed, "{:?} {:?}", scheme, rep);
        }
    }

    #[test]
    fn pathwise_bounds_hold(a in 1.05f64..1.95, seed in 0u64..10_000, dof in 2.2f64..6.0) {
        let model = SystemModel::scalar(a, NoiseSpec::student_t(dof, 2.0f64.min(dof - 0.1)), InitialState::Gaussian { sigma: 20.0 });
        let cfg = derive(&model, Overrides::default());
        let t = simulate_trajectory(&model, &cfg, 4000, TrajectoryRng::new(seed, 1)).unwrap();
        prop_assert!(!t.diverged());
        let lemma = check_lemma_max(&t, a, cfg.config()).unwrap();
        let normal = check_normal_bound(&t, a, cfg.config()).unwrap();
        prop_assert!(lemma.passed(), "{:?}", lemma.violations.first());
        prop_assert!(normal.passed(), "{:?}", normal.violations.first());
    }

    #[test]
    fn moment_estimate_is_deterministic(seed in 0u64..1000) {
        let model = SystemModel::scalar(1.5, NoiseSpec::student_t(3.0, 2.0), InitialState::default());
        let cfg = derive(&model, Overrides::default());
        let traces: Vec<_> = (0..30).map(|i| simulate_trajectory(&model, &cfg, 300, TrajectoryRng::new(seed, i)).unwrap()).collect();
        let grid = default_grid(300, 20);
        let e1 = estimate_beta_moment(&traces, 1.0, &grid).unwrap();
        let e2 = estimate_beta_moment(&traces, 1.0, &grid).unwrap();
        prop_assert_eq!(serde_json::to_string(&e1).unwrap(), serde_json::to_string(&e2).unwrap());
    }
}
