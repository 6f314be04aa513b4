use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rank3::experiment::loads_examples123;
use rank3::laminate::*;
use rank3::moments::{optimize_moments, SolverOptions};
use rank3::recon::{reconstruct, Rank3Laminate};
use rank3::topopt::*;
use rank3::unitcell::build_cell;

fn small(f: f64) -> TopOptConfig {
    TopOptConfig { nx: 30, ny: 30, radius: 0.1, f, ..TopOptConfig::default() }
}

fn laminate_for(chi: f64, f: f64) -> (LoadSet, MaterialPair, f64, Rank3Laminate) {
    let loads = loads_examples123(chi).unwrap();
    let mat = MaterialPair::new(f).unwrap();
    let sol = optimize_moments(&loads, &mat, &SolverOptions::default()).unwrap();
    let lam = reconstruct(&sol.m, f).unwrap();
    (loads, mat, sol.energy, lam)
}

#[test]
fn full_chain_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let cell = build_cell(&Rank3Laminate::new([0.3, 0.3, 0.4], [0.3, 1.3, -0.5], 0.5)).unwrap();
    let rho: Vec<f64> = (0..400).map(|_| rng.random_range(0.05..0.95)).collect();
    let state = DesignState::new(cell, 20, 20, rho.clone()).unwrap();
    let loads = loads_examples123(0.4).unwrap();
    let mat = MaterialPair::new(0.5).unwrap();
    let cfg = TopOptConfig { nx: 20, ny: 20, radius: 0.12, ..TopOptConfig::default() };
    let eval = Evaluator::new(&state, &loads, &mat, &cfg).unwrap();
    for beta in [1.0, 8.0] {
        let base = eval.evaluate(&rho, beta).unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        let mut worst_vol: f64 = 0.0;
        for _ in 0..20 {
            let e = rng.random_range(0..400);
            let mut p = rho.clone();
            let mut m = rho.clone();
            p[e] += h;
            m[e] -= h;
            let (ep, em) = (eval.evaluate(&p, beta).unwrap(), eval.evaluate(&m, beta).unwrap());
            let fd = (ep.objective - em.objective) / (2.0 * h);
            worst = worst.max((base.gradient[e] - fd).abs() / fd.abs());
            let fdv = (ep.volume - em.volume) / (2.0 * h);
            worst_vol = worst_vol.max((base.volume_gradient[e] - fdv).abs() / fdv.abs());
        }
        assert!(worst <= 1e-4, "beta {beta}: objective gradient error {worst}");
        assert!(worst_vol <= 1e-4, "beta {beta}: volume gradient error {worst_vol}");
    }
}

#[test]
fn mapped_reference_laminate_has_its_volume() {
    let lam = Rank3Laminate::from_widths([PI / 3.0, -PI / 6.0, PI / 6.0], [0.2, 0.25, 0.5]);
    let cfg = TopOptConfig { nx: 200, ny: 200, f: 0.7, ..TopOptConfig::default() };
    let s = starting_guess(StartKind::Mapped, Some(&lam), &cfg).unwrap();
    let vol = s.rho.iter().sum::<f64>() / s.rho.len() as f64;
    assert!((vol - 0.7).abs() <= 2e-3, "{vol}");
    assert!(!s.cell.is_unit_square());
}

#[test]
fn optimized_design_respects_volume_and_bound() {
    let f = 0.5;
    let (loads, mat, bound, lam) = laminate_for(0.6, f);
    let cfg = small(f);
    let start = starting_guess(StartKind::Mapped, Some(&lam), &cfg).unwrap();
    let res = optimize(start, &loads, &mat, &cfg).unwrap();
    assert!(res.converged, "stopped after {} iterations", res.state.iteration);
    assert!(res.volume <= f + VOLUME_SLACK, "{}", res.volume);
    assert!(res.objective >= bound * (1.0 - 1e-3), "{} < {bound}", res.objective);
    assert!(res.state.rho_hat.iter().chain(&res.state.rho_bar).chain(&res.state.rho).all(|r| (0.0..=1.0).contains(r)));
    assert_eq!(res.state.beta, cfg.beta.cap);
    assert_eq!(res.fallback_steps, 0);

    // the objective mostly decreases between continuation steps
    let h = &res.state.history;
    let steps: Vec<bool> = h
        .windows(2)
        .filter(|w| w[0].beta == w[1].beta)
        .map(|w| w[1].objective <= w[0].objective)
        .collect();
    let share = steps.iter().filter(|&&d| d).count() as f64 / steps.len() as f64;
    assert!(share >= 0.9, "objective decreased in {share} of steps");
}

#[test]
fn restart_from_converged_design_stops_after_stabilization() {
    let f = 0.5;
    let (loads, mat, _, lam) = laminate_for(0.3, f);
    let cfg = small(f);
    let start = starting_guess(StartKind::Mapped, Some(&lam), &cfg).unwrap();
    let first = optimize(start, &loads, &mat, &cfg).unwrap();
    assert!(first.converged);
    let at_cap = TopOptConfig { beta: BetaSchedule { initial: cfg.beta.cap, ..cfg.beta }, ..cfg.clone() };
    let restart = DesignState::new(first.state.cell.clone(), 30, 30, first.state.rho.clone()).unwrap();
    let second = optimize(restart, &loads, &mat, &at_cap).unwrap();
    assert!(second.converged);
    assert_eq!(second.state.iteration, at_cap.beta.stabilization);
    let last = second.state.history.last().unwrap();
    assert!(last.max_design_change < cfg.conv_tol);
    assert!((second.objective - first.objective).abs() <= 0.01 * first.objective);
}

#[test]
fn runs_are_deterministic() {
    let f = 0.3;
    let loads = loads_examples123(0.5).unwrap();
    let mat = MaterialPair::new(f).unwrap();
    let cfg = TopOptConfig { max_iter: 25, seed: 9, ..small(f) };
    let run = || {
        let s = starting_guess(StartKind::Random, None, &cfg).unwrap();
        optimize(s, &loads, &mat, &cfg).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.state.history.len(), b.state.history.len());
    for (x, y) in a.state.history.iter().zip(&b.state.history) {
        assert!((x.objective - y.objective).abs() <= 1e-12 * x.objective);
    }
    assert_eq!(a.state.rho, b.state.rho);
}

#[test]
fn homogeneous_start_keeps_square_cell() {
    let f = 0.4;
    let loads = loads_examples123(0.0).unwrap();
    let mat = MaterialPair::new(f).unwrap();
    let cfg = TopOptConfig { max_iter: 10, ..small(f) };
    let s = starting_guess(StartKind::Homogeneous, None, &cfg).unwrap();
    assert!(s.cell.is_unit_square());
    let res = optimize(s, &loads, &mat, &cfg).unwrap();
    assert_eq!(res.state.history.len(), 10);
    assert!(res.state.history.iter().all(|r| r.objective.is_finite() && r.objective > 0.0));
}
