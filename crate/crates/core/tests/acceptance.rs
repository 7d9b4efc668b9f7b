//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Property criteria (1-8, 14) are exact or tolerance checks; criteria 9-13
//! are stochastic band checks over fixed seed sets.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use res_core::experiments::{
    max_excursion_ratio, max_post_burn_in, median, AblationExperiment, ConvergenceExperiment,
    HistogramExperiment,
};
use res_core::{
    check_rate_condition, clairvoyant_accuracy, rate_bound, run, HessianApprox, Label, LossKind,
    Method, MethodLabel, OptimizerState, ResConfig, SyntheticSpec, UpdateOutcome,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() / n as f64
}

/// Criteria 1 and 2: chains of regularized updates with curvature pairs
/// `r̂ = (M + δI)v`, `M` PSD, so the guard `r̃ᵀv > 0` holds.
fn secant_and_floor_sweep() -> (Outcome, Outcome) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let deltas = [0.0, 1e-3, 0.5];
    let mut accepted = 0usize;
    let mut worst_secant = 0.0f64;
    let mut worst_floor = f64::INFINITY;
    let mut floor_ok = true;
    while accepted < 10_000 {
        let n = rng.random_range(2..=20);
        let delta = deltas[rng.random_range(0..deltas.len())];
        let mut h = HessianApprox::new(n, delta).unwrap();
        for _ in 0..10 {
            let m = random_psd(&mut rng, n) + DMatrix::identity(n, n) * rng.random_range(0.01..1.0);
            let v = random_vec(&mut rng, n, 1.0);
            let r_hat = (&m + DMatrix::identity(n, n) * delta) * &v;
            if h.update(&v, &r_hat).unwrap() == UpdateOutcome::Updated {
                accepted += 1;
                let residual = (h.matrix() * &v - &r_hat).norm() / (r_hat.norm() + 1.0);
                worst_secant = worst_secant.max(residual);
                let floor = h.min_eigenvalue();
                worst_floor = worst_floor.min(floor - delta);
                floor_ok &= floor >= delta - 1e-9;
            }
        }
    }
    (
        ensure(
            worst_secant <= 1e-8,
            format!("max ‖Bv − r̂‖/(‖r̂‖+1) = {worst_secant:.3e} over {accepted} updates (tol 1e-8)"),
        ),
        ensure(
            floor_ok,
            format!("min over updates of λ_min(B) − δ = {worst_floor:.3e} (tol −1e-9)"),
        ),
    )
}

fn direction_sandwich() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut violations = 0;
    let mut worst_low = f64::INFINITY;
    let mut worst_high = f64::INFINITY;
    for _ in 0..1_000 {
        let n = rng.random_range(2..=12);
        let delta = [1e-3, 0.1, 1.0][rng.random_range(0..3)];
        let q = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0))
            .qr()
            .q();
        let eig = DVector::from_fn(n, |_, _| delta + rng.random_range(0.0..10.0f64).powi(2));
        let b = &q * DMatrix::from_diagonal(&eig) * q.transpose();
        let b = (&b + b.transpose()) * 0.5;
        let h = HessianApprox::from_matrix(b, delta).unwrap();
        let gamma = rng.random_range(0.0..1.0);
        let s = random_vec(&mut rng, n, 5.0);
        let d = h.descent_direction(gamma, &s).unwrap();
        let sd = s.dot(&d);
        let s2 = s.norm_squared();
        let low = sd - gamma * s2;
        let high = (gamma + 1.0 / delta) * s2 + 1e-8 - sd;
        worst_low = worst_low.min(low);
        worst_high = worst_high.min(high);
        if low < 0.0 || high < 0.0 {
            violations += 1;
        }
    }
    ensure(
        violations == 0,
        format!("{violations} violations in 1000 draws; min lower slack {worst_low:.3e}, min upper slack {worst_high:.3e}"),
    )
}

fn gradient_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for kind in [LossKind::SquaredHinge, LossKind::Log] {
        for _ in 0..100 {
            let n = rng.random_range(2..=10);
            let x = random_vec(&mut rng, n, 2.0);
            let w = random_vec(&mut rng, n, 2.0);
            let y = if rng.random_bool(0.5) {
                Label::Pos
            } else {
                Label::Neg
            };
            let g = kind.gradient(&x, y, &w).unwrap();
            let fd = DVector::from_fn(n, |i, _| {
                let (mut p, mut m) = (w.clone(), w.clone());
                p[i] += h;
                m[i] -= h;
                (kind.value(&x, y, &p).unwrap() - kind.value(&x, y, &m).unwrap()) / (2.0 * h)
            });
            let diff = (&g - &fd).norm();
            // Relative error, with an absolute floor when the gradient vanishes.
            let rel = if g.norm() > 1e-6 {
                diff / g.norm()
            } else {
                diff
            };
            worst = worst.max(rel);
        }
    }
    ensure(
        worst < 1e-5,
        format!("max relative error {worst:.3e} over 200 points (tol 1e-5)"),
    )
}

fn lemma2_inequality() -> Outcome {
    let set = SyntheticSpec::new(4, 10_000, 0).generate().unwrap();
    let cfg = ResConfig::default();
    let mut state = OptimizerState::new(&cfg, 4).unwrap();
    let mut worst = f64::INFINITY;
    let mut accepted = 0;
    for _ in 0..1_000 {
        let step = state.res_step(&cfg, &set).unwrap();
        if step.outcome == UpdateOutcome::Updated {
            accepted += 1;
            let slack =
                step.pair.curvature() - (cfg.lambda - cfg.delta) * step.pair.v.norm_squared();
            worst = worst.min(slack);
        }
    }
    ensure(
        worst >= -1e-10,
        format!(
            "min r̃ᵀv − (λ−δ)‖v‖² = {worst:.3e} over {accepted} accepted of 1000 steps (tol −1e-10)"
        ),
    )
}

/// Textbook BFGS in inverse form, `H⁺ = (I − ρsyᵀ)H(I − ρysᵀ) + ρssᵀ`,
/// against the library's `B` update with `δ = Γ = 0` on `½wᵀAw − bᵀw`.
fn classical_bfgs_reduction() -> Outcome {
    let n = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = random_psd(&mut rng, n) + DMatrix::identity(n, n) * 0.5;
    let b = random_vec(&mut rng, n, 1.0);
    let grad = |w: &DVector<f64>| &a * w - &b;
    // Fixed step short of convergence: near the optimum `y` is rounding noise.
    let alpha = 0.2;

    let mut w_lib = DVector::zeros(n);
    let mut curv = HessianApprox::new(n, 0.0).unwrap();
    let mut w_ref = DVector::zeros(n);
    let mut h_ref = DMatrix::<f64>::identity(n, n);
    let mut worst_w = 0.0f64;
    let mut worst_h = 0.0f64;
    for _ in 0..20 {
        let g = grad(&w_lib);
        let d = curv.descent_direction(0.0, &g).unwrap();
        let next = &w_lib - &d * alpha;
        curv.update(&(&next - &w_lib), &(grad(&next) - &g)).unwrap();
        w_lib = next;

        let g = grad(&w_ref);
        let next = &w_ref - &h_ref * &g * alpha;
        let s = &next - &w_ref;
        let y = grad(&next) - &g;
        let rho = 1.0 / y.dot(&s);
        let left = DMatrix::identity(n, n) - &s * y.transpose() * rho;
        h_ref = &left * &h_ref * left.transpose() + &s * s.transpose() * rho;
        w_ref = next;

        worst_w = worst_w.max((&w_lib - &w_ref).amax());
        let b_inv = curv.matrix().clone().try_inverse().unwrap();
        worst_h = worst_h.max((b_inv - &h_ref).amax());
    }
    ensure(
        worst_w <= 1e-10 && worst_h <= 1e-10,
        format!(
            "max |Δw| = {worst_w:.3e}, max |B⁻¹ − H| = {worst_h:.3e} over 20 steps (tol 1e-10)"
        ),
    )
}

fn clairvoyant_oracle() -> Outcome {
    let exact = 1.0 - 0.8f64.powi(4) / 24.0;
    let value = clairvoyant_accuracy(4).unwrap();
    // Monte Carlo under the generative model: sign of the feature sum.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let draws = 1_000_000u32;
    let mut correct = 0u32;
    for i in 0..draws {
        let (lo, y) = if i % 2 == 0 {
            (-0.8, -1.0)
        } else {
            (-0.2, 1.0)
        };
        let sum: f64 = (0..4).map(|_| lo + rng.random::<f64>()).sum();
        if y * sum > 0.0 {
            correct += 1;
        }
    }
    let p = correct as f64 / draws as f64;
    let se = (p * (1.0 - p) / draws as f64).sqrt();
    let two_sig = (value * 100.0).round() / 100.0;
    ensure(
        (value - exact).abs() < 1e-12 && (value - p).abs() <= 3.0 * se && two_sig == 0.98,
        format!("exact {value:.9} (closed form {exact:.9}), Monte Carlo {p:.6} ± {se:.1e}, 2 s.f. {two_sig}"),
    )
}

fn determinism() -> Outcome {
    let set = SyntheticSpec::new(4, 2_000, 5).generate().unwrap();
    let cfg = ResConfig {
        max_iters: 300,
        seed: 11,
        ..Default::default()
    };
    let mut same = true;
    for method in [Method::Res, Method::Sgd] {
        let a = run(&cfg, &set, method, 1).unwrap();
        let b = run(&cfg, &set, method, 1).unwrap();
        same &= a.trajectory == b.trajectory && a.w == b.w;
    }
    let exp = HistogramExperiment {
        replications: 12,
        ..HistogramExperiment::desk(Method::Res, 40)
    };
    let in_pool = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| exp.run().unwrap())
    };
    let (serial, parallel) = (in_pool(1), in_pool(4));
    let reversed: Vec<f64> = (0..exp.replications)
        .rev()
        .map(|r| exp.replicate(r).unwrap().0)
        .collect();
    let order_free = reversed.iter().rev().eq(serial.accuracies.iter());
    ensure(
        same && serial == parallel && order_free,
        format!("trajectories identical: {same}; histogram 1 vs 4 threads identical: {}; reverse order identical: {order_free}", serial == parallel),
    )
}

fn finals(logs: &[res_core::TrajectoryLog], method: MethodLabel) -> Vec<f64> {
    logs.iter()
        .filter(|l| l.method == method)
        .map(|l| l.final_objective().unwrap())
        .collect()
}

fn fig1_convergence(logs: &[res_core::TrajectoryLog]) -> Outcome {
    let res = finals(logs, MethodLabel::Res);
    let sgd = finals(logs, MethodLabel::Sgd);
    let (mr, ms) = (median(&res), median(&sgd));
    let wins = res.iter().zip(&sgd).filter(|(r, s)| r < s).count();
    ensure(
        (3e-2..=5.5e-2).contains(&mr) && (5e-2..=8e-2).contains(&ms) && wins >= 9,
        format!(
            "median RES {mr:.4e} (band [3e-2, 5.5e-2]), median SGD {ms:.4e} (band [5e-2, 8e-2]), RES < SGD on {wins}/{} seeds (need 9)",
            res.len()
        ),
    )
}

fn fig1_crossing(logs: &[res_core::TrajectoryLog]) -> Outcome {
    let level = 6.5e-2;
    let reach = |m| -> Vec<f64> {
        logs.iter()
            .filter(|l| l.method == m)
            .map(|l| {
                l.samples_to_reach(level)
                    .map_or(f64::INFINITY, |s| s as f64)
            })
            .collect()
    };
    let (r, s) = (
        median(&reach(MethodLabel::Res)),
        median(&reach(MethodLabel::Sgd)),
    );
    ensure(
        r <= 600.0 && s >= 1200.0 && s / r >= 2.0,
        format!("median samples to F ≤ 6.5e-2: RES {r} (need ≤ 600), SGD {s} (need ≥ 1200), ratio {:.3} (need ≥ 2; inf = never reached)", s / r),
    )
}

fn fig2_convergence(logs: &[res_core::TrajectoryLog]) -> Outcome {
    let res = finals(logs, MethodLabel::Res);
    let sgd = finals(logs, MethodLabel::Sgd);
    let (mr, ms) = (median(&res), median(&sgd));
    let separated = res
        .iter()
        .zip(&sgd)
        .filter(|(r, s)| **s >= 10.0 * **r)
        .count();
    ensure(
        mr <= 5e-3 && ms >= 1e-2 && separated == res.len(),
        format!(
            "median RES {mr:.4e} (need ≤ 5e-3), median SGD {ms:.4e} (need ≥ 1e-2), 10× separation on {separated}/{} seeds",
            res.len()
        ),
    )
}

fn fig3_histogram() -> Outcome {
    let res = HistogramExperiment::desk(Method::Res, 0).run().unwrap();
    let sgd = HistogramExperiment::desk(Method::Sgd, 0).run().unwrap();
    let frac = res.fraction_above(sgd.max());
    ensure(
        res.mean >= 0.75 && sgd.max() <= 0.70 && frac >= 0.90,
        format!(
            "RES mean {:.4} (need ≥ 0.75), SGD max {:.4} (need ≤ 0.70), RES fraction above SGD max {frac:.3} (need ≥ 0.90); SGD mean {:.4}, clairvoyant {:.4}",
            res.mean,
            sgd.max(),
            sgd.mean,
            clairvoyant_accuracy(4).unwrap()
        ),
    )
}

fn fig4_ablation() -> Outcome {
    let budget = 10_000;
    let mut regularized_ok = 0;
    let mut unregularized_blowups = 0;
    let mut worst_reg = 0.0f64;
    let seeds = 20u64;
    for seed in 0..seeds {
        let logs = AblationExperiment::new(seed).run().unwrap();
        let reg = logs.iter().find(|l| l.method == MethodLabel::Res).unwrap();
        let unreg = logs
            .iter()
            .find(|l| l.method == MethodLabel::ResUnregularized)
            .unwrap();
        let ratio = max_excursion_ratio(reg, budget);
        worst_reg = worst_reg.max(ratio);
        if ratio < 10.0 {
            regularized_ok += 1;
        }
        let bound = 10.0 * max_post_burn_in(reg, budget);
        let blew_up = unreg.is_faulted()
            || max_excursion_ratio(unreg, budget) >= 10.0
            || max_post_burn_in(unreg, budget) > bound;
        if blew_up {
            unregularized_blowups += 1;
        }
    }
    ensure(
        regularized_ok == seeds && 2 * unregularized_blowups >= seeds,
        format!(
            "regularized within 10× running min on {regularized_ok}/{seeds} seeds (worst ratio {worst_reg:.3}); unregularized excursion or fault on {unregularized_blowups}/{seeds} (need ≥ 50%)"
        ),
    )
}

fn rate_diagnostics() -> Outcome {
    let paper = check_rate_condition(3e-2, 100.0, 1e-4);
    let (eps0, tau, gamma, k, gap) = (1.0, 100.0, 0.1, 1.0, 1.0);
    // ξ = max{ε₀²τ²K/(2ε₀τΓ − 1), (1+τ)·gap} = max{10⁴/19, 101}
    let xi = f64::max(
        eps0 * eps0 * tau * tau * k / (2.0 * eps0 * tau * gamma - 1.0),
        (1.0 + tau) * gap,
    );
    let seq: Vec<f64> = (0..=10_000u64)
        .map(|t| rate_bound(eps0, tau, gamma, k, gap, t).unwrap())
        .collect();
    let monotone = seq.windows(2).all(|w| w[1] <= w[0]);
    let worst = [0u64, 100, 10_000]
        .iter()
        .map(|&t| (seq[t as usize] - xi / (tau + t as f64)).abs())
        .fold(0.0, f64::max);
    ensure(
        !paper && monotone && worst <= 1e-12,
        format!("paper parameters satisfy 2ε₀τΓ > 1: {paper} (2ε₀τΓ = {:.1e}); bound non-increasing: {monotone}; max deviation from ξ/(τ+t) {worst:.1e}", 2.0 * 3e-2 * 100.0 * 1e-4),
    )
}

fn main() {
    let start = Instant::now();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let (c1, c2) = secant_and_floor_sweep();
    results.push((1, "secant condition", c1));
    results.push((2, "eigenvalue floor", c2));
    results.push((3, "direction sandwich", direction_sandwich()));
    results.push((4, "gradient checks", gradient_checks()));
    results.push((5, "curvature lower bound on RES steps", lemma2_inequality()));
    results.push((6, "classical BFGS reduction", classical_bfgs_reduction()));
    results.push((7, "clairvoyant accuracy", clairvoyant_oracle()));
    results.push((8, "determinism", determinism()));

    let seeds: Vec<u64> = (0..10).collect();
    let small = ConvergenceExperiment::small(seeds.clone()).run().unwrap();
    results.push((9, "n=4 convergence bands", fig1_convergence(&small)));
    results.push((10, "n=4 sample-efficiency crossing", fig1_crossing(&small)));
    let large = ConvergenceExperiment::large(seeds).run().unwrap();
    results.push((11, "n=40 convergence separation", fig2_convergence(&large)));
    results.push((12, "accuracy histograms", fig3_histogram()));
    results.push((13, "regularization ablation", fig4_ablation()));
    results.push((14, "rate condition and bound", rate_diagnostics()));

    let mut failed = 0;
    for (id, name, outcome) in &results {
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} criterion {id:>2} ({name}): {detail}");
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1}s",
        results.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
