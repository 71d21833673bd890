//! Cross-module agreement: the generic solver pipeline against the
//! closed-form applications, and the statistical sanity of the particle
//! engine on the solved policies.

use lqmkv::apps::{
    liq_mean_inventory, liq_optimal_control, res_mean_reserve, res_optimal_control,
    LiquidationParams, ResourceParams,
};
use lqmkv::control::{mean_state_ode, optimal_control};
use lqmkv::model::{FactorKind, FactorModel};
use lqmkv::numerics::mean_and_stderr;
use lqmkv::simulate::{
    estimate_cost, simulate_particles, FactorNoiseMode, Perturbed, SimulationConfig,
};
use lqmkv::{solve_problem, Col, RiccatiOptions, TimeGrid};
use std::sync::Arc;

fn liquidation_params(q: f64, nu: f64, sigma: f64) -> LiquidationParams {
    LiquidationParams {
        x0: 30.0,
        horizon: 2.0,
        q,
        p: 10.0,
        nu,
        eta: 1.0,
        price: FactorModel::new(FactorKind::ArithmeticBrownian { sigma }, 10.0, 0),
    }
}

fn resource_params() -> ResourceParams {
    ResourceParams {
        x0: 1.0,
        sigma: 0.3,
        delta: 1.0,
        epsilon: 0.5,
        eta: 0.5,
        c: 1.0,
        rho: 0.5,
        price: FactorModel::new(FactorKind::ArithmeticBrownian { sigma: 0.2 }, 0.4, 1),
    }
}

#[test]
fn liquidation_control_agrees_with_the_generic_pipeline() {
    let params = liquidation_params(1.0, 1.0, 1.0);
    let problem = params.to_problem().unwrap();
    let solved = solve_problem(&problem, &RiccatiOptions::default()).unwrap();
    // Mean path of the optimal flow feeds the generic feedback evaluation.
    let grid = TimeGrid::new(0.0, 2.0, 2000);
    let mean = mean_state_ode(&problem, &solved.law, &grid, &Col::from_element(1, 30.0)).unwrap();
    // A handful of (t, x, s) points along a plausible path.
    let probes = [
        (0.0, 30.0, 10.0),
        (0.4, 21.0, 10.6),
        (1.0, 9.5, 9.1),
        (1.6, 3.0, 11.2),
        (2.0, 1.4, 10.0),
    ];
    for &(t, x, s) in &probes {
        let closed = liq_optimal_control(t, x, s, &params);
        let i = grid.locate(t).0 + usize::from(t == 2.0);
        let xb = &mean[if t == 2.0 { grid.n_steps() } else { i }];
        let generic = optimal_control(&solved.law, t, &Col::from_element(1, x), xb, s)[0];
        assert!(
            (closed - generic).abs() <= 1e-6,
            "t={t}: closed {closed} vs generic {generic}"
        );
    }
}

#[test]
fn liquidation_mean_path_matches_closed_form_everywhere() {
    let params = liquidation_params(1.0, 1.0, 1.0);
    let problem = params.to_problem().unwrap();
    let solved = solve_problem(&problem, &RiccatiOptions::default()).unwrap();
    let grid = TimeGrid::new(0.0, 2.0, 400);
    let mean = mean_state_ode(&problem, &solved.law, &grid, &Col::from_element(1, 30.0)).unwrap();
    let mut worst = 0.0f64;
    for (i, t) in grid.times().enumerate() {
        worst = worst.max((mean[i][0] - liq_mean_inventory(t, &params)).abs());
    }
    assert!(worst <= 1e-6, "mean path deviates by {worst:e}");
}

#[test]
fn resource_control_agrees_with_the_generic_pipeline() {
    let params = resource_params();
    let problem = params.to_problem().unwrap();
    let opts = RiccatiOptions {
        allow_indefinite: true,
        ..RiccatiOptions::default()
    };
    let solved = solve_problem(&problem, &opts).unwrap();
    let grid = TimeGrid::new(0.0, 20.0, 1000);
    let mean = mean_state_ode(&problem, &solved.law, &grid, &Col::from_element(1, 1.0)).unwrap();
    // Compare on coefficient-grid times so the generic law is evaluated at
    // its own nodes.
    for &(t, x, p0) in &[
        (0.0, 1.0, 0.4),
        (2.0, 0.8, 0.55),
        (8.0, 0.7, 0.3),
        (16.0, 0.65, 0.42),
    ] {
        let closed = res_optimal_control(t, x, p0, &params).unwrap();
        let i = grid.locate(t).0;
        let generic = optimal_control(&solved.law, t, &Col::from_element(1, x), &mean[i], p0)[0];
        assert!(
            (closed - generic).abs() <= 1e-6,
            "t={t}: closed {closed} vs generic {generic}"
        );
    }
}

#[test]
fn resource_mean_path_matches_closed_form() {
    let params = resource_params();
    let problem = params.to_problem().unwrap();
    let opts = RiccatiOptions {
        allow_indefinite: true,
        ..RiccatiOptions::default()
    };
    let solved = solve_problem(&problem, &opts).unwrap();
    let grid = TimeGrid::new(0.0, 30.0, 3000);
    let mean = mean_state_ode(&problem, &solved.law, &grid, &Col::from_element(1, 1.0)).unwrap();
    let mut worst = 0.0f64;
    for (i, t) in grid.times().enumerate() {
        worst = worst.max((mean[i][0] - res_mean_reserve(t, &params).unwrap()).abs());
    }
    assert!(worst <= 1e-6, "mean reserve deviates by {worst:e}");
}

#[test]
fn particle_mean_tracks_the_analytic_mean() {
    // The empirical particle mean under the optimal feedback agrees with the
    // mean ODE within three standard errors at every checkpoint.
    let params = liquidation_params(1.0, 1.0, 1.0);
    let problem = params.to_problem().unwrap();
    let solved = solve_problem(&problem, &RiccatiOptions::default()).unwrap();
    // The weak discretization bias must sit below the statistical
    // resolution; the optimal trader hedges the price noise so tightly in
    // this instance that the cross-sectional spread is tiny, hence the very
    // small step.
    let dt = 2e-5;
    let config = SimulationConfig {
        n_particles: 500,
        dt,
        seed: 31,
        factor_noise: FactorNoiseMode::PerParticle,
        store_paths: true,
        path_stride: 12_500,
        quantiles: false,
        ..SimulationConfig::default()
    };
    let ens = simulate_particles(&problem, &solved.law, &config).unwrap();
    let states = ens.states.as_ref().unwrap();
    let stored = ens.stored_steps.as_ref().unwrap();
    for &t in &[0.5f64, 1.0, 1.5, 2.0] {
        let step = (t / dt).round() as usize;
        let k = stored.iter().position(|&s| s == step).expect("stored checkpoint");
        let samples: Vec<f64> = states.iter().map(|p| p[k][0]).collect();
        let (mean, se) = mean_and_stderr(&samples);
        let analytic = liq_mean_inventory(t, &params);
        assert!(
            (mean - analytic).abs() <= 3.0 * se,
            "t={t}: particle {mean} vs analytic {analytic} (se {se})"
        );
    }
}

#[test]
fn liquidation_trading_martingale_property() {
    // Under a martingale unaffected price the combination
    // a_t + S_t/2 - q int_0^t X_s ds has constant expectation.
    let params = liquidation_params(1.0, 1.0, 1.0);
    let problem = params.to_problem().unwrap();
    let solved = solve_problem(&problem, &RiccatiOptions::default()).unwrap();
    let dt = 2e-3;
    let config = SimulationConfig {
        n_particles: 1000,
        dt,
        seed: 17,
        factor_noise: FactorNoiseMode::PerParticle,
        store_paths: true,
        quantiles: false,
        ..SimulationConfig::default()
    };
    let ens = simulate_particles(&problem, &solved.law, &config).unwrap();
    let states = ens.states.as_ref().unwrap();
    let controls = ens.controls.as_ref().unwrap();
    let factors = ens.factor_paths.as_ref().unwrap();
    let n = states.len();
    let steps = ens.times.len() - 1;
    let checkpoints: Vec<usize> = (0..=4).map(|i| i * steps / 4).collect();
    let mut m_vals: Vec<Vec<f64>> = vec![Vec::with_capacity(n); checkpoints.len()];
    for j in 0..n {
        let mut integral = 0.0;
        let mut cp_idx = 0;
        for k in 0..=steps {
            if checkpoints[cp_idx] == k {
                let m = controls[j][k][0] + 0.5 * factors[j][k] - integral;
                m_vals[cp_idx].push(m);
                cp_idx += 1;
                if cp_idx == checkpoints.len() {
                    break;
                }
            }
            if k < steps {
                // q = 1; trapezoid of the inventory integral.
                integral += 0.5 * dt * (states[j][k][0] + states[j][k + 1][0]);
            }
        }
    }
    let (m0, _) = mean_and_stderr(&m_vals[0]);
    for cp in 1..checkpoints.len() {
        let diffs: Vec<f64> = m_vals[cp]
            .iter()
            .zip(m_vals[0].iter())
            .map(|(a, b)| a - b)
            .collect();
        let (dm, dse) = mean_and_stderr(&diffs);
        assert!(
            dm.abs() <= 3.0 * dse.max(2e-3 * m0.abs()),
            "checkpoint {cp}: drift {dm} (se {dse})"
        );
    }
}

#[test]
fn cost_gap_grows_quadratically_in_the_perturbation() {
    // Deterministic price keeps the measurement noise-free: the cost gap of
    // a flat perturbation fits c eps^2 with near-perfect quality.
    let params = liquidation_params(1.0, 1.0, 0.0);
    let problem = params.to_problem().unwrap();
    let solved = solve_problem(&problem, &RiccatiOptions::default()).unwrap();
    let config = SimulationConfig {
        n_particles: 2,
        dt: 1e-4,
        seed: 3,
        quantiles: false,
        ..SimulationConfig::default()
    };
    let base = simulate_particles(&problem, &solved.law, &config).unwrap();
    let j0 = estimate_cost(&base, &problem).mean;
    let dir: Arc<dyn Fn(f64) -> Col + Send + Sync> = Arc::new(|_| Col::from_element(1, 1.0));
    let mut gaps = Vec::new();
    for &eps in &[0.05, 0.1, 0.2] {
        let policy = Perturbed {
            base: &solved.law,
            direction: dir.clone(),
            epsilon: eps,
            label: format!("flat+{eps}"),
        };
        let ens = simulate_particles(&problem, &policy, &config).unwrap();
        gaps.push(estimate_cost(&ens, &problem).mean - j0);
    }
    // Quadratic coefficient for a flat direction is the integrated mean
    // control weight: int_0^T S^ dt = T.
    for (i, &eps) in [0.05, 0.1, 0.2].iter().enumerate() {
        // The leftover linear-in-eps term is the Euler residual gradient of
        // the discretized flow, of size O(dt) per unit eps.
        assert!(
            (gaps[i] - 2.0 * eps * eps).abs() < 5e-3 * eps + 0.01 * eps * eps,
            "eps {eps}: gap {}",
            gaps[i]
        );
    }
    let r1 = gaps[1] / gaps[0];
    let r2 = gaps[2] / gaps[1];
    assert!((3.5..=4.5).contains(&r1), "ratio {r1}");
    assert!((3.5..=4.5).contains(&r2), "ratio {r2}");
}

#[test]
fn feedback_intercept_is_centered() {
    // Monte-Carlo check that the stochastic intercept of the feedback has
    // mean zero: sample the factor marginal and average xi - E[xi].
    use rand::SeedableRng;
    use rand_distr::Distribution;
    let params = liquidation_params(1.0, 1.0, 1.0);
    let problem = params.to_problem().unwrap();
    let solved = solve_problem(&problem, &RiccatiOptions::default()).unwrap();
    let law = &solved.law;
    let t = 0.9;
    let factor = law.factor.as_ref().unwrap();
    let sd = factor.variance(t).sqrt();
    let fbar = factor.mean(t);
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(9);
    let xbar = Col::from_element(1, 10.0);
    let at_mean = optimal_control(law, t, &xbar, &xbar, fbar)[0];
    let samples: Vec<f64> = (0..20_000)
        .map(|_| {
            let z: f64 = rand_distr::StandardNormal.sample(&mut rng);
            optimal_control(law, t, &xbar, &xbar, fbar + sd * z)[0] - at_mean
        })
        .collect();
    let (m, se) = mean_and_stderr(&samples);
    assert!(m.abs() <= 3.0 * se, "centered intercept drifts: {m} (se {se})");
}

#[test]
fn liquidation_stiff_penalty_limit() {
    // As the terminal penalty grows the mean inventory approaches the
    // closed bridge profile vanishing at the horizon, independent of the
    // crowding parameter and the price level.
    let mut params = liquidation_params(1.0, 1.0, 1.0);
    params.p = 1e6;
    let x0 = 30.0;
    let limit = |t: f64| {
        x0 * ((1.0f64 * t).cosh()
            - (2.0f64.cosh() / 2.0f64.sinh()) * (1.0f64 * t).sinh())
    };
    for &t in &[0.5, 1.0, 1.5, 2.0] {
        let e = liq_mean_inventory(t, &params);
        assert!(
            (e - limit(t)).abs() <= 1e-3,
            "t={t}: {e} vs limit {}",
            limit(t)
        );
    }
}

#[test]
fn comparative_statics_of_the_mean_inventory() {
    // Convexity in time, ordering in the crowding impact, ordering in the
    // inventory penalty.
    let base = liquidation_params(1.0, 1.0, 1.0);
    let nus = [0.1, 0.5, 1.0, 2.0];
    let mut curves: Vec<Vec<f64>> = Vec::new();
    let times: Vec<f64> = (0..=100).map(|i| 2.0 * i as f64 / 100.0).collect();
    for &nu in &nus {
        let mut p = base.clone();
        p.nu = nu;
        curves.push(times.iter().map(|&t| liq_mean_inventory(t, &p)).collect());
    }
    for curve in &curves {
        for w in curve.windows(3) {
            assert!(w[2] - 2.0 * w[1] + w[0] >= -1e-9, "convexity violated");
        }
    }
    // Smaller crowding drives the inventory down faster.
    let mid = times.len() / 2;
    for i in 1..nus.len() {
        assert!(curves[i][mid] > curves[i - 1][mid]);
    }
    // Larger inventory penalty drives it down faster.
    let qs = [0.0, 0.5, 1.0, 2.0, 4.0];
    let mut prev = f64::INFINITY;
    for &q in &qs {
        let mut p = base.clone();
        p.q = q;
        let v = liq_mean_inventory(1.0, &p);
        assert!(v < prev, "q={q}: {v} not below {prev}");
        prev = v;
    }
}
