use bitstab::noise::{CorrelatedGaussianSpec, NoiseFamily};
use bitstab::params::{ControllerConfig, InitialState, Overrides, SystemModel, ViolationKind};
use bitstab::scalar::{run_loop, wrap_delay, wrap_schedule, CoderState, LoopPolicy, ZoomLoop, ZoomParams};
use bitstab::{simulate_trajectory, CheckedConfig, NoiseSpec, TransmissionSchedule, TrajectoryRng};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn checked<R: bitstab::Real>(model: &SystemModel<R>, o: Overrides<R>) -> CheckedConfig<R> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    ControllerConfig::derive(model, R::lit(2.0), R::lit(1.0), &o, &mut rng).unwrap().check(model).unwrap()
}

fn heavy_noise(n: usize, seed: u64) -> Vec<f64> {
    let mut s = NoiseSpec::student_t(3.0, 2.0).sampler().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| s.next(&mut rng)).collect()
}

fn zoom(cfg: &ControllerConfig<f64>) -> ZoomLoop<f64> {
    let p = ZoomParams::new(1.5, cfg);
    ZoomLoop::new(p, CoderState::initial(&p, cfg.initial_bound, false))
}

#[test]
fn identity_wrappers_change_nothing() {
    let model = SystemModel::<f64>::scalar(1.5, NoiseSpec::student_t(3.0, 2.0), InitialState::default());
    let cfg = checked(&model, Overrides::default()).into_inner();
    let z = heavy_noise(3000, 1);
    fn run(mut p: impl LoopPolicy<f64>, z: &[f64]) -> Vec<bitstab::scalar::StepRecord<f64>> {
        let mut it = z.iter();
        run_loop(&mut p, 1.5, 2.0, z.len(), || *it.next().unwrap()).unwrap().0
    }
    let plain = run(zoom(&cfg), &z);
    let delayed = run(wrap_delay(zoom(&cfg), 1.5, 0), &z);
    let scheduled = run(wrap_schedule(zoom(&cfg), TransmissionSchedule::EveryStep), &z);
    assert_eq!(plain, delayed);
    assert_eq!(plain, scheduled);
}

#[test]
fn delayed_prediction_matches_future_state() {
    let model = SystemModel::<f64>::scalar(1.5, NoiseSpec::student_t(3.0, 2.0), InitialState::Uniform { half_width: 5.0 });
    let cfg = checked(&model, Overrides { delay: 2, ..Overrides::default() });
    let t = simulate_trajectory(&model, &cfg, 5000, TrajectoryRng::new(4, 0)).unwrap();
    assert!(!t.diverged());
    // X_{n+2} = a^2 X~_n + a Z_n + Z_{n+1}.
    for w in t.steps.windows(3) {
        let expect = 2.25 * w[0].observed + 1.5 * w[0].z + w[1].z;
        assert!((w[2].x - expect).abs() <= 1e-9 * (1.0 + expect.abs()), "n={}", w[0].n);
    }
}

#[test]
fn delayed_noiseless_loop_stays_bounded() {
    let model = SystemModel::<f64>::scalar(1.5, NoiseSpec::zero(), InitialState::Uniform { half_width: 3.0 });
    let cfg = checked(&model, Overrides { delay: 2, noise_bound: Some(1.0), ..Overrides::default() });
    let t = simulate_trajectory(&model, &cfg, 5000, TrajectoryRng::new(4, 1)).unwrap();
    let worst = t.steps.iter().map(|s| s.x.abs()).fold(0.0, f64::max);
    assert!(worst < 1e3, "{worst}");
    // Noiseless, the bound cycles through a round whose largest value solves
    // C = 0.75(0.75(1.5 C + 1) + 1) + 1 at the test, then 1.5 C + 1 = 23.2.
    let cmax = t.steps[4000..].iter().map(|s| s.c).fold(0.0, f64::max);
    assert!((cmax - 23.2).abs() < 1e-9, "{cmax}");
    assert!(t.steps[4000..].iter().all(|s| s.observed.abs() <= s.c));
    assert!(t.steps[4000..].iter().all(|s| s.x.abs() <= 2.25 * cmax));
}

#[test]
fn dense_schedule_is_accepted_and_stable() {
    let sched = TransmissionSchedule::evenly_spread(8, 10, 0.7).unwrap();
    assert!(2f64.powf(0.7) > 1.5);
    let model = SystemModel::<f64>::scalar(1.5, NoiseSpec::bounded(1.0), InitialState::Uniform { half_width: 2.0 });
    let cfg = checked(&model, Overrides { schedule: sched, ..Overrides::default() });
    assert!(cfg.warnings().iter().all(|w| w.kind != ViolationKind::ScheduleRate), "{:?}", cfg.warnings());
    let t = simulate_trajectory(&model, &cfg, 20_000, TrajectoryRng::new(2, 0)).unwrap();
    assert!(t.steps.iter().all(|s| s.x.abs() <= s.c));
    let off = t.steps.iter().filter(|s| !s.scheduled).count();
    assert_eq!(off, 4000);
}

#[test]
fn thin_schedule_is_flagged() {
    let sched = TransmissionSchedule::evenly_spread(9, 10, 0.85).unwrap();
    let model = SystemModel::<f64>::scalar(1.9, NoiseSpec::bounded(1.0), InitialState::default());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = ControllerConfig::derive(&model, 2.0, 1.0, &Overrides { schedule: sched, ..Overrides::default() }, &mut rng).unwrap();
    let checked = cfg.check(&model).unwrap();
    assert!(checked.warnings().iter().any(|w| w.kind == ViolationKind::ScheduleRate));
}

#[test]
fn correlated_noise_is_whitened_in_trace() {
    let spec = CorrelatedGaussianSpec { autocovariance: vec![1.0, 0.25], window: 8, lambda: None };
    let noise = NoiseSpec::new(NoiseFamily::CorrelatedGaussian(spec), 4.0);
    let model = SystemModel::<f64>::scalar(1.5, noise, InitialState::default());
    let cfg = checked(&model, Overrides::default());
    let t = simulate_trajectory(&model, &cfg, 40_000, TrajectoryRng::new(6, 0)).unwrap();
    assert!(!t.diverged());
    let z: Vec<f64> = t.steps.iter().map(|s| s.z).collect();
    let n = z.len() as f64;
    let var = z.iter().map(|v| v * v).sum::<f64>() / n;
    let lag = z.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / (n - 1.0);
    // Row l1 bound of the covariance is 1.5.
    assert!((var - 1.5).abs() < 0.06, "{var}");
    assert!(lag.abs() < 0.06, "{lag}");
}

#[test]
fn single_precision_runs() {
    let model = SystemModel::<f32>::scalar(1.5, NoiseSpec::bounded(1.0), InitialState::Uniform { half_width: 4.0 });
    let cfg = checked(&model, Overrides::default());
    let t = simulate_trajectory(&model, &cfg, 5000, TrajectoryRng::new(3, 0)).unwrap();
    assert!(t.steps.iter().all(|s| s.x.abs() <= s.c * 1.0001));
    let t64 = simulate_trajectory(
        &SystemModel::<f64>::scalar(1.5, NoiseSpec::bounded(1.0), InitialState::Uniform { half_width: 4.0 }),
        &checked(&SystemModel::<f64>::scalar(1.5, NoiseSpec::bounded(1.0), InitialState::Uniform { half_width: 4.0 }), Overrides::default()),
        5000,
        TrajectoryRng::new(3, 0),
    )
    .unwrap();
    assert!((t.steps[0].x as f64 - t64.steps[0].x).abs() < 1e-6);
}

#[test]
fn same_seed_same_trace() {
    let model = SystemModel::<f64>::scalar(1.5, NoiseSpec::student_t(3.0, 2.0), InitialState::Gaussian { sigma: 3.0 });
    let cfg = checked(&model, Overrides::default());
    let a = simulate_trajectory(&model, &cfg, 3000, TrajectoryRng::new(99, 7)).unwrap();
    let b = simulate_trajectory(&model, &cfg, 3000, TrajectoryRng::new(99, 7)).unwrap();
    let c = simulate_trajectory(&model, &cfg, 3000, TrajectoryRng::new(99, 8)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.steps[5].x, c.steps[5].x);
}

#[test]
fn single_bin_grows_at_plant_rate() {
    let model = SystemModel::<f64>::scalar(1.5, NoiseSpec::zero(), InitialState::Uniform { half_width: 1.0 });
    let cfg = checked(&model, Overrides { bins: Some(1), noise_bound: Some(1.0), ..Overrides::default() });
    assert!(cfg.warnings().iter().any(|w| w.kind == ViolationKind::BinsBelowMinimum));
    let t = simulate_trajectory(&model, &cfg, 200, TrajectoryRng::new(0, 3)).unwrap();
    let r = t.steps[150].x / t.steps[149].x;
    assert!((r - 1.5).abs() < 1e-9, "{r}");
}
