//! The particle engine: synchronized Euler-Maruyama stepping of all
//! particles, with per-particle generator substreams, trapezoidal cost
//! accumulation, and optional value-field checkpoints for the optimality
//! diagnostic.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::bsde::AdjointSolution;
use crate::error::{LqmkvError, Result};
use crate::model::{hat_coefficients, Problem};
use crate::numerics::stats::{pairwise_sum, quantile_nearest};
use crate::riccati::RiccatiSolution;
use crate::simulate::{EnsemblePath, FactorNoiseMode, MeanMode, Policy, SimulationConfig};
use crate::{Col, Mat};

pub(crate) struct DiagRaw {
    pub checkpoint_steps: Vec<usize>,
    /// [checkpoint][particle]
    pub s: Vec<Vec<f64>>,
}

struct Particle {
    x: Col,
    factor: f64,
    rng: ChaCha12Rng,
    sign: f64,
    z: Vec<f64>,
    alpha: Col,
    cost: f64,
    prev_f: f64,
    adm: f64,
    prev_a2: f64,
    tmp_d: Col,
    tmp_m: Col,
    drift: Col,
    diff: Col,
    states: Vec<Col>,
    controls: Vec<Col>,
    factors: Vec<f64>,
}

/// Deterministic coefficient values at one step time.
struct StepCoeffs {
    b: Mat,
    b_tilde: Mat,
    c: Mat,
    c_tilde: Mat,
    d: Vec<Mat>,
    d_tilde: Vec<Mat>,
    f: Vec<Mat>,
    f_tilde: Vec<Mat>,
    beta_base: Col,
    beta_load: Col,
    gamma_base: Vec<Col>,
    gamma_load: Vec<Col>,
    q: Mat,
    q_hat: Mat,
    i: Mat,
    i_hat: Mat,
    n: Mat,
    n_hat: Mat,
    m_base: Col,
    m_load: Col,
    h_base: Col,
    h_load: Col,
}

fn step_coeffs(problem: &Problem, t: f64) -> StepCoeffs {
    let dy = &problem.dynamics;
    let co = &problem.cost;
    let n = dy.n_noises();
    let hat = hat_coefficients(problem, t).expect("t inside horizon");
    StepCoeffs {
        b: dy.b.at(t),
        b_tilde: dy.b_tilde.at(t),
        c: dy.c.at(t),
        c_tilde: dy.c_tilde.at(t),
        d: (0..n).map(|i| dy.d[i].at(t)).collect(),
        d_tilde: (0..n).map(|i| dy.d_tilde[i].at(t)).collect(),
        f: (0..n).map(|i| dy.f[i].at(t)).collect(),
        f_tilde: (0..n).map(|i| dy.f_tilde[i].at(t)).collect(),
        beta_base: dy.beta.base.at(t),
        beta_load: dy.beta.loading.at(t),
        gamma_base: (0..n).map(|i| dy.gamma[i].base.at(t)).collect(),
        gamma_load: (0..n).map(|i| dy.gamma[i].loading.at(t)).collect(),
        q: co.q.at(t),
        q_hat: hat.q_hat,
        i: co.i.at(t),
        i_hat: hat.i_hat,
        n: co.n.at(t),
        n_hat: hat.n_hat,
        m_base: co.m_lin.base.at(t),
        m_load: co.m_lin.loading.at(t),
        h_base: co.h_lin.base.at(t),
        h_load: co.h_lin.loading.at(t),
    }
}

/// Quadratic form with no allocation.
fn qf(m: &Mat, v: &Col) -> f64 {
    let n = v.len();
    let mut acc = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += m[(i, j)] * v[j];
        }
        acc += v[i] * row;
    }
    acc
}

/// Bilinear form `a' M b` with no allocation.
fn bf(a: &Col, m: &Mat, b: &Col) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.len() {
        let mut row = 0.0;
        for j in 0..b.len() {
            row += m[(i, j)] * b[j];
        }
        acc += a[i] * row;
    }
    acc
}

/// Square root of a covariance matrix: Cholesky when definite, symmetric
/// eigenvalue square root otherwise.
fn cov_sqrt(cov: &Mat) -> Option<Mat> {
    if cov.iter().all(|&v| v == 0.0) {
        return None;
    }
    if let Some(ch) = cov.clone().cholesky() {
        return Some(ch.l());
    }
    let es = cov.clone().symmetric_eigen();
    let mut vals = es.eigenvalues.clone();
    for v in vals.iter_mut() {
        *v = v.max(0.0).sqrt();
    }
    Some(&es.eigenvectors * Mat::from_diagonal(&vals))
}

/// Precomputed value-field pieces at one checkpoint.
struct CheckpointField {
    step: usize,
    disc: f64,
    k: Mat,
    lambda: Mat,
    mean_y: Col,
    w_y: Col,
    r: f64,
    factor_mean: f64,
}

#[allow(clippy::too_many_lines)]
pub(crate) fn run(
    problem: &Problem,
    policy: &dyn Policy,
    config: &SimulationConfig,
    diag: Option<(&RiccatiSolution, &AdjointSolution)>,
) -> Result<(EnsemblePath, Option<DiagRaw>)> {
    let (t_end, steps) = config.validate(problem)?;
    let (d, m, n_noises) = problem.dims();
    if policy.control_dim() != m {
        return Err(LqmkvError::DimensionMismatch(
            "policy control dimension does not match the problem".into(),
        ));
    }
    let dt = t_end / steps as f64;
    let sqrt_dt = dt.sqrt();
    let rho = problem.rho();
    let np = config.n_particles;
    let factor = problem.factor.clone();
    let factor_idx = factor.as_ref().map(|f| f.noise_index);
    let times: Vec<f64> = (0..=steps)
        .map(|k| if k == steps { t_end } else { k as f64 * dt })
        .collect();

    // Analytic mean paths of the policy (exact for linear dynamics).
    let (xbar_path, abar_path) = if config.mean_mode == MeanMode::AnalyticOde {
        let (xp, ap) = policy_mean_paths(problem, policy, &times);
        (Some(xp), Some(ap))
    } else {
        (None, None)
    };

    // Common factor increments come from the dedicated stream 0.
    let common_z: Option<Vec<f64>> =
        if factor.is_some() && config.factor_noise == FactorNoiseMode::Common {
            let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
            rng.set_stream(0);
            Some((0..steps).map(|_| StandardNormal.sample(&mut rng)).collect())
        } else {
            None
        };

    // Particle initialization: one substream per particle index, antithetic
    // pairs sharing a substream with opposite signs.
    let chol = cov_sqrt(&problem.initial.cov);
    let mut particles: Vec<Particle> = (0..np)
        .map(|j| {
            let stream = if config.antithetic { (j / 2) as u64 } else { j as u64 };
            let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
            rng.set_stream(stream + 1);
            let sign = if config.antithetic && j % 2 == 1 { -1.0 } else { 1.0 };
            let mut x = problem.initial.mean.clone();
            if let Some(a) = &chol {
                let mut z = Col::zeros(d);
                for c in 0..d {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    z[c] = sign * v;
                }
                x += a * z;
            }
            Particle {
                x,
                factor: factor.as_ref().map(|f| f.initial).unwrap_or(0.0),
                rng,
                sign,
                z: vec![0.0; n_noises],
                alpha: Col::zeros(m),
                cost: 0.0,
                prev_f: 0.0,
                adm: 0.0,
                prev_a2: 0.0,
                tmp_d: Col::zeros(d),
                tmp_m: Col::zeros(m),
                drift: Col::zeros(d),
                diff: Col::zeros(d),
                states: Vec::new(),
                controls: Vec::new(),
                factors: Vec::new(),
            }
        })
        .collect();

    // Diagnostic checkpoints and the value-field data at each of them.
    let diag_fields: Option<Vec<CheckpointField>> = diag.map(|(riccati, adjoint)| {
        let ncp = config.n_checkpoints.clamp(2, steps + 1);
        let mut idx: Vec<usize> = (0..ncp)
            .map(|i| ((i as f64) * (steps as f64) / ((ncp - 1) as f64)).round() as usize)
            .collect();
        idx.dedup();
        idx.into_iter()
            .map(|k| {
                let t = times[k];
                CheckpointField {
                    step: k,
                    disc: (-rho * t).exp(),
                    k: riccati.k_at(t),
                    lambda: riccati.lambda_at(t),
                    mean_y: adjoint.mean_y_at(t),
                    w_y: adjoint.y_loading_at(t),
                    r: adjoint.r_at(t),
                    factor_mean: factor.as_ref().map(|f| f.mean(t)).unwrap_or(0.0),
                }
            })
            .collect()
    });
    let mut diag_s: Option<Vec<Vec<f64>>> = diag_fields
        .as_ref()
        .map(|cps| vec![vec![0.0; np]; cps.len()]);

    let mut mean_path: Vec<Col> = Vec::with_capacity(steps + 1);
    let mut mean_control: Vec<Col> = Vec::with_capacity(steps + 1);
    let mut mean_running: Vec<f64> = Vec::with_capacity(steps + 1);
    let mut q05: Vec<Col> = Vec::new();
    let mut q95: Vec<Col> = Vec::new();
    let mut scratch = vec![0.0; np];

    for k in 0..=steps {
        let t = times[k];
        let disc = (-rho * t).exp();
        let sc = step_coeffs(problem, t);

        // Cross-sectional state mean (always empirical, by definition).
        let mut xbar_emp = Col::zeros(d);
        for c in 0..d {
            for (j, p) in particles.iter().enumerate() {
                scratch[j] = p.x[c];
            }
            xbar_emp[c] = pairwise_sum(&scratch) / np as f64;
        }
        if config.quantiles {
            let mut lo = Col::zeros(d);
            let mut hi = Col::zeros(d);
            for c in 0..d {
                for (j, p) in particles.iter().enumerate() {
                    scratch[j] = p.x[c];
                }
                lo[c] = quantile_nearest(&mut scratch, 0.05);
                for (j, p) in particles.iter().enumerate() {
                    scratch[j] = p.x[c];
                }
                hi[c] = quantile_nearest(&mut scratch, 0.95);
            }
            q05.push(lo);
            q95.push(hi);
        }
        let xbar_dyn = match &xbar_path {
            Some(xp) => xp[k].clone(),
            None => xbar_emp.clone(),
        };

        // Pass A: controls at the current states.
        particles.par_iter_mut().for_each(|p| {
            let Particle {
                x, alpha, tmp_d, factor, ..
            } = p;
            policy.control_into(t, x, &xbar_dyn, *factor, tmp_d, alpha);
        });
        let mut abar_emp = Col::zeros(m);
        for c in 0..m {
            for (j, p) in particles.iter().enumerate() {
                scratch[j] = p.alpha[c];
            }
            abar_emp[c] = pairwise_sum(&scratch) / np as f64;
        }
        let abar_dyn = match &abar_path {
            Some(ap) => ap[k].clone(),
            None => abar_emp.clone(),
        };

        // Mean-argument pieces of the running cost, common to all particles.
        let cost_common = qf(&sc.q_hat, &xbar_emp)
            + 2.0 * bf(&abar_emp, &sc.i_hat, &xbar_emp)
            + qf(&sc.n_hat, &abar_emp);

        // Pass B: cost accrual, optional checkpoint, state update.
        let update = k < steps;
        let cz = common_z.as_ref().map(|v| if update { v[k] } else { 0.0 });
        let stride = config.path_stride.max(1);
        let store_here = config.store_paths && (k % stride == 0 || k == steps);
        let run_particle = |j: usize, p: &mut Particle| -> Result<()> {
            // Running cost (discounted), trapezoid against the previous node.
            let mut fx = cost_common;
            p.tmp_d.copy_from(&p.x);
            p.tmp_d -= &xbar_emp;
            fx += qf(&sc.q, &p.tmp_d);
            fx += 2.0 * bf(&p.alpha, &sc.i, &p.tmp_d);
            p.tmp_m.copy_from(&p.alpha);
            p.tmp_m -= &abar_emp;
            fx += qf(&sc.n, &p.tmp_m);
            for c in 0..d {
                fx += 2.0 * (sc.m_base[c] + sc.m_load[c] * p.factor) * p.x[c];
            }
            for c in 0..m {
                fx += 2.0 * (sc.h_base[c] + sc.h_load[c] * p.factor) * p.alpha[c];
            }
            let f_disc = disc * fx;
            if k > 0 {
                p.cost += 0.5 * dt * (p.prev_f + f_disc);
            }
            p.prev_f = f_disc;
            let a2 = p.alpha.norm_squared() * disc;
            if k > 0 {
                p.adm += 0.5 * dt * (p.prev_a2 + a2);
            }
            p.prev_a2 = a2;

            if store_here {
                p.states.push(p.x.clone());
                p.controls.push(p.alpha.clone());
                p.factors.push(p.factor);
            }

            if update {
                // One normal per Brownian index from this particle's
                // substream; a common factor overrides its slot.
                for zi in p.z.iter_mut() {
                    let v: f64 = StandardNormal.sample(&mut p.rng);
                    *zi = p.sign * v;
                }
                if let (Some(czv), Some(fi)) = (cz, factor_idx) {
                    p.z[fi] = czv;
                }
                p.drift.copy_from(&sc.beta_base);
                p.drift.axpy(p.factor, &sc.beta_load, 1.0);
                p.drift.gemv(1.0, &sc.b, &p.x, 1.0);
                p.drift.gemv(1.0, &sc.b_tilde, &xbar_dyn, 1.0);
                p.drift.gemv(1.0, &sc.c, &p.alpha, 1.0);
                p.drift.gemv(1.0, &sc.c_tilde, &abar_dyn, 1.0);
                for i in 0..n_noises {
                    p.diff.copy_from(&sc.gamma_base[i]);
                    p.diff.axpy(p.factor, &sc.gamma_load[i], 1.0);
                    p.diff.gemv(1.0, &sc.d[i], &p.x, 1.0);
                    p.diff.gemv(1.0, &sc.d_tilde[i], &xbar_dyn, 1.0);
                    p.diff.gemv(1.0, &sc.f[i], &p.alpha, 1.0);
                    p.diff.gemv(1.0, &sc.f_tilde[i], &abar_dyn, 1.0);
                    p.x.axpy(sqrt_dt * p.z[i], &p.diff, 1.0);
                }
                p.x.axpy(dt, &p.drift, 1.0);
                if let (Some(f), Some(fi)) = (&factor, factor_idx) {
                    p.factor = f.exact_step(p.factor, dt, p.z[fi]);
                }
                if !p.x.iter().all(|v| v.is_finite()) || !p.factor.is_finite() {
                    return Err(LqmkvError::ParticleBlowUp { particle: j, t });
                }
            }
            Ok(())
        };

        let diag_pos = diag_fields
            .as_ref()
            .and_then(|cps| cps.iter().position(|cp| cp.step == k));
        match diag_pos {
            Some(pos) => {
                let cp = &diag_fields.as_ref().unwrap()[pos];
                let col = &mut diag_s.as_mut().unwrap()[pos];
                particles
                    .par_iter_mut()
                    .enumerate()
                    .zip(col.par_iter_mut())
                    .try_for_each(|((j, p), slot)| -> Result<()> {
                        // Value field at the current state, before stepping.
                        p.tmp_d.copy_from(&p.x);
                        p.tmp_d -= &xbar_dyn;
                        let mut w = qf(&cp.k, &p.tmp_d) + qf(&cp.lambda, &xbar_dyn) + cp.r;
                        let mut ydotx = cp.mean_y.dot(&p.x);
                        if factor.is_some() {
                            ydotx += (p.factor - cp.factor_mean) * cp.w_y.dot(&p.x);
                        }
                        w += 2.0 * ydotx;
                        run_particle(j, p)?;
                        // After run_particle the trapezoid is closed at t_k,
                        // so p.cost is exactly the running integral to t_k.
                        *slot = cp.disc * w + p.cost;
                        Ok(())
                    })?;
            }
            None => {
                particles
                    .par_iter_mut()
                    .enumerate()
                    .try_for_each(|(j, p)| run_particle(j, p))?;
            }
        }

        // Empirical mean of the running-cost integrand, rescaled to the
        // undiscounted level for truncation-tail reporting.
        for (j, p) in particles.iter().enumerate() {
            scratch[j] = p.prev_f;
        }
        mean_running.push(pairwise_sum(&scratch) / np as f64 / disc);
        mean_path.push(xbar_emp);
        mean_control.push(abar_emp);
    }

    // Terminal cost on finite horizon.
    if problem.is_finite_horizon() {
        let p_mat = problem.terminal_k();
        let p_hat = problem.terminal_lambda();
        let l = problem.cost.l.clone();
        let disc = (-rho * t_end).exp();
        let xbar_t = mean_path[steps].clone();
        particles.par_iter_mut().for_each(|p| {
            p.tmp_d.copy_from(&p.x);
            p.tmp_d -= &xbar_t;
            let mut g = qf(&p_mat, &p.tmp_d) + qf(&p_hat, &xbar_t);
            if let Some(l) = &l {
                let lv = l.value(t_end, p.factor);
                g += 2.0 * lv.dot(&p.x);
            }
            p.cost += disc * g;
        });
    }

    let costs: Vec<f64> = particles.iter().map(|p| p.cost).collect();
    for (j, p) in particles.iter().enumerate() {
        scratch[j] = p.adm;
    }
    let admissibility = pairwise_sum(&scratch) / np as f64;

    let (states, controls, factors) = if config.store_paths {
        (
            Some(particles.iter().map(|p| p.states.clone()).collect()),
            Some(particles.iter().map(|p| p.controls.clone()).collect()),
            Some(particles.iter().map(|p| p.factors.clone()).collect()),
        )
    } else {
        (None, None, None)
    };

    let stride = config.path_stride.max(1);
    let stored_steps = if config.store_paths {
        let mut idx: Vec<usize> = (0..=steps).filter(|k| k % stride == 0).collect();
        if *idx.last().unwrap() != steps {
            idx.push(steps);
        }
        Some(idx)
    } else {
        None
    };
    let ensemble = EnsemblePath {
        times,
        stored_steps,
        mean: mean_path,
        q05: if config.quantiles { Some(q05) } else { None },
        q95: if config.quantiles { Some(q95) } else { None },
        mean_control,
        costs,
        mean_running_cost: mean_running,
        admissibility_integral: admissibility,
        states,
        controls,
        factor_paths: factors,
        antithetic: config.antithetic,
        truncated_horizon: !problem.is_finite_horizon(),
    };
    let diag_raw = diag_fields.map(|cps| DiagRaw {
        checkpoint_steps: cps.iter().map(|cp| cp.step).collect(),
        s: diag_s.unwrap(),
    });
    Ok((ensemble, diag_raw))
}

/// Mean state and mean control paths of a policy by forward RK4 of the mean
/// dynamics (exact for linear coefficients).
fn policy_mean_paths(problem: &Problem, policy: &dyn Policy, times: &[f64]) -> (Vec<Col>, Vec<Col>) {
    let factor = problem.factor.as_ref();
    let rhs = |t: f64, xbar: &Col| -> Col {
        let h = hat_coefficients(problem, t).expect("t inside horizon");
        let beta_bar = problem.dynamics.beta.mean(t, factor);
        beta_bar + &h.b_hat * xbar + &h.c_hat * policy.mean_control(t, xbar)
    };
    let mut xp = Vec::with_capacity(times.len());
    let mut ap = Vec::with_capacity(times.len());
    xp.push(problem.initial.mean.clone());
    for k in 0..times.len() - 1 {
        let (t0, t1) = (times[k], times[k + 1]);
        let h = t1 - t0;
        let x = &xp[k];
        let k1 = rhs(t0, x);
        let k2 = rhs(t0 + 0.5 * h, &(x + &k1 * (0.5 * h)));
        let k3 = rhs(t0 + 0.5 * h, &(x + &k2 * (0.5 * h)));
        let k4 = rhs(t1, &(x + &k3 * h));
        let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        xp.push(next);
    }
    for (k, &t) in times.iter().enumerate() {
        ap.push(policy.mean_control(t, &xp[k]));
    }
    (xp, ap)
}
