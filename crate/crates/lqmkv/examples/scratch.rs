use lqmkv::apps::{res_gains, ResourceParams};
use lqmkv::model::{FactorKind, FactorModel};
use lqmkv::simulate::*;
use lqmkv::*;

fn main() {
    let params = ResourceParams {
        x0: 1.0, sigma: 0.3, delta: 1.0, epsilon: 0.5, eta: 0.5, c: 1.0, rho: 0.5,
        price: FactorModel::new(FactorKind::ArithmeticBrownian { sigma: 0.0 }, 0.4, 1),
    };
    let problem = params.to_problem().unwrap();
    let opts = RiccatiOptions { allow_indefinite: true, ..RiccatiOptions::default() };
    let solved = solve_problem(&problem, &opts).unwrap();
    let (k_eta, lambda_eps) = res_gains(&params).unwrap();
    let config = SimulationConfig {
        n_particles: 20_000, dt: 5e-3, seed: 100,
        factor_noise: FactorNoiseMode::PerParticle, quantiles: false,
        store_paths: true, path_stride: 1000,
        ..SimulationConfig::default()
    };
    let ens = simulate_particles(&problem, &solved.law, &config).unwrap();
    let states = ens.states.as_ref().unwrap();
    let stored = ens.stored_steps.as_ref().unwrap();

    // Exact moment ODEs.
    let kappa0 = -0.6 * 0.5 / (0.5 + lambda_eps) / 3.0;
    let (mut xb, mut m2) = (1.0f64, 0.0f64);
    let dt = 1e-4;
    let mut idx = 0;
    for k in 0..=((50.0 / dt) as usize) {
        let t = k as f64 * dt;
        if idx < stored.len() && (t - ens.times[stored[idx]]).abs() < 1e-9 {
            let samples: Vec<f64> = states.iter().map(|p| p[idx][0]).collect();
            let (m, _) = lqmkv::numerics::mean_and_stderr(&samples);
            let v: f64 = samples.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / samples.len() as f64;
            println!("t={t:5.1}: xbar sim {m:.5} ode {xb:.5} | m2 sim {v:.5} ode {m2:.5}");
            idx += 1;
        }
        let fx = |xb: f64| -(lambda_eps * xb + kappa0);
        let fm = |xb: f64, m2: f64| (0.09 - 2.0 * k_eta) * m2 + 0.09 * xb * xb;
        let (k1x, k1m) = (fx(xb), fm(xb, m2));
        let (k2x, k2m) = (fx(xb + 0.5 * dt * k1x), fm(xb + 0.5 * dt * k1x, m2 + 0.5 * dt * k1m));
        let (k3x, k3m) = (fx(xb + 0.5 * dt * k2x), fm(xb + 0.5 * dt * k2x, m2 + 0.5 * dt * k2m));
        let (k4x, k4m) = (fx(xb + dt * k3x), fm(xb + dt * k3x, m2 + dt * k3m));
        xb += dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
        m2 += dt / 6.0 * (k1m + 2.0 * k2m + 2.0 * k3m + k4m);
    }
}
