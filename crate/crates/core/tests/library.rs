use nalgebra::DVector;
use res_core::{run, LossKind, Method, Objective, ResConfig, StepSchedule, SyntheticSpec};

// Plain-loop reference for the regularized squared-hinge objective.
fn naive_objective(set: &res_core::TrainingSet, w: &[f64], lambda: f64) -> f64 {
    let mut total = 0.0;
    for s in set.samples() {
        let dot: f64 = s.x.iter().zip(w).map(|(a, b)| a * b).sum();
        let m = (1.0 - s.y.as_f64() * dot).max(0.0);
        total += m * m;
    }
    0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>() + total / set.len() as f64
}

#[test]
fn objective_matches_naive_loop() {
    let set = SyntheticSpec::new(5, 400, 11).generate().unwrap();
    let w = [0.3, -0.2, 1.1, 0.0, 0.7];
    let obj = Objective::new(LossKind::SquaredHinge, 1e-3).unwrap();
    let got = obj
        .average_objective(&set, &DVector::from_column_slice(&w))
        .unwrap();
    let want = naive_objective(&set, &w, 1e-3);
    assert!((got - want).abs() <= 1e-13 * want.max(1.0));
}

#[test]
fn runs_are_reproducible_and_seed_sensitive() {
    let set = SyntheticSpec::new(4, 1000, 5).generate().unwrap();
    let cfg = ResConfig {
        max_iters: 50,
        seed: 5,
        ..ResConfig::default()
    };
    let a = run(&cfg, &set, Method::Res, 1).unwrap();
    let b = run(&cfg, &set, Method::Res, 1).unwrap();
    assert_eq!(a.w, b.w);
    assert_eq!(a.trajectory.entries, b.trajectory.entries);
    let c = run(
        &ResConfig {
            seed: 6,
            ..cfg.clone()
        },
        &set,
        Method::Res,
        1,
    )
    .unwrap();
    assert_ne!(a.w, c.w);
}

#[test]
fn sgd_first_step_from_origin() {
    let set = SyntheticSpec::new(3, 10, 2).generate().unwrap();
    let cfg = ResConfig {
        batch_size: 1,
        max_iters: 1,
        schedule: StepSchedule::Constant { eps: 0.5 },
        ..ResConfig::sgd_default()
    };
    let out = run(&cfg, &set, Method::Sgd, 1).unwrap();
    // From w = 0 every sample has margin 0, so the gradient is -2 y x and w1 = y x.
    let hit = set
        .samples()
        .iter()
        .any(|s| (&out.w - s.x.scale(s.y.as_f64())).norm() < 1e-15);
    assert!(hit, "w1 = {:?} is not y*x for any sample", out.w);
}
