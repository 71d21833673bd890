//! Interacting-particle Euler-Maruyama simulation of the controlled
//! mean-field SDE, cost estimation, and the empirical optimality
//! diagnostics built on the weak martingale principle.
//!
//! Determinism contract: a fixed `(problem, policy, config)` triple produces
//! bit-identical output regardless of thread count. Each particle owns a
//! counter-based generator substream keyed by its index, and every reduction
//! is an index-ordered pairwise sum.

mod engine;
mod policy;

pub use policy::{Delayed, OpenLoop, Perturbed, Policy, Scaled, Shifted, ZeroPolicy};

use std::sync::Arc;

use crate::bsde::AdjointSolution;
use crate::control::FeedbackLaw;
use crate::error::{LqmkvError, Result};
use crate::model::Problem;
use crate::numerics::stats::{mean_and_stderr, pairwise_sum};
use crate::report::CsvTable;
use crate::riccati::RiccatiSolution;
use crate::Col;

/// How the mean-field arguments of the dynamics are supplied.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeanMode {
    /// Deterministic mean path from the (exact, for linear dynamics) mean
    /// ODE of the policy. This matches the unconditional expectations in the
    /// cost and is the reference mode.
    AnalyticOde,
    /// Interacting particles: the empirical cross-sectional mean feeds back
    /// into the dynamics. Consistency check for the analytic mode.
    Empirical,
}

/// Whether the exogenous factor path is shared by all particles (one common
/// price) or drawn independently per particle (i.i.d. copies of the
/// single-agent universe; the right mode for unbiased cost estimation).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FactorNoiseMode {
    Common,
    PerParticle,
}

#[derive(Clone, Debug)]
pub struct SimulationConfig {
    pub n_particles: usize,
    pub dt: f64,
    pub seed: u64,
    pub mean_mode: MeanMode,
    /// Required for infinite-horizon problems; ignored on finite horizon.
    pub horizon_truncation: Option<f64>,
    pub antithetic: bool,
    pub factor_noise: FactorNoiseMode,
    /// Keep full per-particle trajectories (memory-heavy; off by default).
    pub store_paths: bool,
    /// Keep only every n-th step of stored trajectories (terminal always
    /// kept); 1 keeps everything.
    pub path_stride: usize,
    /// Record 5%/95% cross-sectional quantiles per step.
    pub quantiles: bool,
    /// Checkpoints for the optimality diagnostic.
    pub n_checkpoints: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            n_particles: 20_000,
            dt: 1e-3,
            seed: 0,
            mean_mode: MeanMode::AnalyticOde,
            horizon_truncation: None,
            antithetic: false,
            factor_noise: FactorNoiseMode::Common,
            store_paths: false,
            path_stride: 1,
            quantiles: true,
            n_checkpoints: 6,
        }
    }
}

impl SimulationConfig {
    pub(crate) fn validate(&self, problem: &Problem) -> Result<(f64, usize)> {
        if self.dt <= 0.0 {
            return Err(LqmkvError::InvalidConfig("dt must be positive".into()));
        }
        if self.n_particles == 0 {
            return Err(LqmkvError::InvalidConfig("need at least one particle".into()));
        }
        if self.mean_mode == MeanMode::Empirical && self.n_particles < 2 {
            return Err(LqmkvError::InvalidConfig(
                "empirical mean mode needs at least two particles".into(),
            ));
        }
        if self.antithetic && self.n_particles % 2 != 0 {
            return Err(LqmkvError::InvalidConfig(
                "antithetic sampling needs an even particle count".into(),
            ));
        }
        let t_end = match problem.terminal_time() {
            Some(t) => t,
            None => self
                .horizon_truncation
                .unwrap_or_else(|| crate::bsde::default_truncation(problem.rho())),
        };
        let steps_f = t_end / self.dt;
        let steps = steps_f.round();
        if steps < 1.0 || (steps_f - steps).abs() > 1e-9 * steps.max(1.0) {
            return Err(LqmkvError::InvalidConfig(format!(
                "dt = {} does not divide the horizon {} evenly",
                self.dt, t_end
            )));
        }
        Ok((t_end, steps as usize))
    }
}

/// Simulated ensemble: per-step empirical summaries, per-particle discounted
/// costs, and (optionally) the full trajectories.
#[derive(Clone, Debug)]
pub struct EnsemblePath {
    pub times: Vec<f64>,
    /// Step indices at which trajectories were stored (when they were).
    pub stored_steps: Option<Vec<usize>>,
    /// Empirical mean state per step (always the arithmetic particle average).
    pub mean: Vec<Col>,
    pub q05: Option<Vec<Col>>,
    pub q95: Option<Vec<Col>>,
    /// Empirical mean control per step.
    pub mean_control: Vec<Col>,
    /// Per-particle realized discounted cost.
    pub costs: Vec<f64>,
    /// Empirical mean of the undiscounted running cost per step (used for
    /// truncation tail bounds).
    pub mean_running_cost: Vec<f64>,
    /// Sample value of the discounted control-energy integral.
    pub admissibility_integral: f64,
    pub states: Option<Vec<Vec<Col>>>,
    pub controls: Option<Vec<Vec<Col>>>,
    pub factor_paths: Option<Vec<Vec<f64>>>,
    pub antithetic: bool,
    pub truncated_horizon: bool,
    
}

impl EnsemblePath {
    /// CSV of per-step summaries (t, mean, quantiles).
    pub fn to_csv(&self, footer: Option<&str>) -> String {
        let d = self.mean[0].len();
        let mut header = vec!["t".to_string()];
        header.extend((0..d).map(|i| format!("mean_{i}")));
        if self.q05.is_some() {
            header.extend((0..d).map(|i| format!("q05_{i}")));
            header.extend((0..d).map(|i| format!("q95_{i}")));
        }
        let mut table = CsvTable::new(header);
        for (k, &t) in self.times.iter().enumerate() {
            let mut row = vec![t];
            row.extend(self.mean[k].iter().copied());
            if let (Some(q05), Some(q95)) = (&self.q05, &self.q95) {
                row.extend(q05[k].iter().copied());
                row.extend(q95[k].iter().copied());
            }
            table.push_row(row);
        }
        table.render(footer)
    }
}

/// Simulate the controlled mean-field SDE under `policy`.
pub fn simulate_particles(
    problem: &Problem,
    policy: &dyn Policy,
    config: &SimulationConfig,
) -> Result<EnsemblePath> {
    let (ensemble, _) = engine::run(problem, policy, config, None)?;
    Ok(ensemble)
}

/// Monte-Carlo cost estimate with standard error.
#[derive(Clone, Copy, Debug)]
pub struct CostEstimate {
    pub mean: f64,
    pub stderr: f64,
    /// Bound on the discarded discounted tail (infinite horizon only).
    pub tail_bound: Option<f64>,
}

/// Sample mean and standard error of the realized discounted costs, plus a
/// truncation tail bound on infinite horizon. Antithetic pairs are collapsed
/// before the standard error is formed.
pub fn estimate_cost(ensemble: &EnsemblePath, problem: &Problem) -> CostEstimate {
    let samples = collapse_pairs(&ensemble.costs, ensemble.antithetic);
    let (mean, stderr) = mean_and_stderr(&samples);
    let tail_bound = if ensemble.truncated_horizon {
        let rho = problem.rho();
        let t_end = *ensemble.times.last().unwrap();
        let n = ensemble.mean_running_cost.len();
        let tail_start = n - (n / 10).max(1);
        let sup_f = ensemble.mean_running_cost[tail_start..]
            .iter()
            .fold(0.0f64, |a, &b| a.max(b.abs()));
        // Safety factor 2 on the plateau estimate of |E f|.
        Some(2.0 * (-rho * t_end).exp() * sup_f / rho)
    } else {
        None
    };
    CostEstimate {
        mean,
        stderr,
        tail_bound,
    }
}

fn collapse_pairs(xs: &[f64], antithetic: bool) -> Vec<f64> {
    if !antithetic {
        return xs.to_vec();
    }
    xs.chunks(2).map(|c| 0.5 * (c[0] + c[1])).collect()
}

/// Empirical check of the weak martingale optimality principle: the expected
/// sum of the discounted value field and accumulated running cost must be
/// nondecreasing in time for any policy and flat exactly at the optimum.
#[derive(Clone, Debug)]
pub struct OptimalityDiagnostic {
    pub times: Vec<f64>,
    pub s_mean: Vec<f64>,
    pub s_stderr: Vec<f64>,
    /// Paired-sample increment statistics between consecutive checkpoints.
    pub increment_mean: Vec<f64>,
    pub increment_stderr: Vec<f64>,
    /// No increment decreases by more than three standard errors.
    pub nondecreasing: bool,
    /// Total variation of the increments within three (combined) standard
    /// errors of zero.
    pub flat: bool,
}

impl OptimalityDiagnostic {
    pub fn to_csv(&self, footer: Option<&str>) -> String {
        let mut table = CsvTable::new(["t", "s_mean", "s_stderr"]);
        for k in 0..self.times.len() {
            table.push_row(vec![self.times[k], self.s_mean[k], self.s_stderr[k]]);
        }
        table.render(footer)
    }
}

/// Estimate the diagnostic process at the configured checkpoints under an
/// arbitrary policy, using the solved value-field components.
pub fn martingale_diagnostic(
    problem: &Problem,
    riccati: &RiccatiSolution,
    adjoint: &AdjointSolution,
    policy: &dyn Policy,
    config: &SimulationConfig,
) -> Result<OptimalityDiagnostic> {
    let (ensemble, diag) = engine::run(problem, policy, config, Some((riccati, adjoint)))?;
    let raw = diag.expect("diagnostic requested");
    let n_cp = raw.checkpoint_steps.len();
    let mut s_mean = Vec::with_capacity(n_cp);
    let mut s_stderr = Vec::with_capacity(n_cp);
    for cp in 0..n_cp {
        let samples = collapse_pairs(&raw.s[cp], ensemble.antithetic);
        let (m, se) = mean_and_stderr(&samples);
        s_mean.push(m);
        s_stderr.push(se);
    }
    let mut increment_mean = Vec::with_capacity(n_cp.saturating_sub(1));
    let mut increment_stderr = Vec::with_capacity(n_cp.saturating_sub(1));
    let mut nondecreasing = true;
    let mut tv = 0.0;
    let mut tv_var = 0.0;
    for cp in 0..n_cp.saturating_sub(1) {
        let diffs: Vec<f64> = raw.s[cp + 1]
            .iter()
            .zip(raw.s[cp].iter())
            .map(|(a, b)| a - b)
            .collect();
        let samples = collapse_pairs(&diffs, ensemble.antithetic);
        let (m, se) = mean_and_stderr(&samples);
        if m < -3.0 * se - 1e-12 {
            nondecreasing = false;
        }
        tv += m.abs();
        tv_var += se * se;
        increment_mean.push(m);
        increment_stderr.push(se);
    }
    let flat = tv <= 3.0 * tv_var.sqrt() + 1e-12;
    let times = raw
        .checkpoint_steps
        .iter()
        .map(|&k| ensemble.times[k])
        .collect();
    Ok(OptimalityDiagnostic {
        times,
        s_mean,
        s_stderr,
        increment_mean,
        increment_stderr,
        nondecreasing,
        flat,
    })
}

/// One perturbation-direction measurement.
#[derive(Clone, Debug)]
pub struct PerturbationEntry {
    pub direction: String,
    pub epsilon: f64,
    pub delta_j: f64,
    pub stderr: f64,
}

/// Per-direction quadratic fit of the cost gap against the perturbation size.
#[derive(Clone, Debug)]
pub struct DirectionFit {
    pub direction: String,
    pub quad_coeff: f64,
    pub r_squared: f64,
}

#[derive(Clone, Debug)]
pub struct PerturbationReport {
    pub baseline_j: f64,
    pub baseline_stderr: f64,
    pub entries: Vec<PerturbationEntry>,
    pub fits: Vec<DirectionFit>,
    /// Consecutive-epsilon gap ratios per direction: (eps, 2 eps, ratio).
    pub ratios: Vec<(String, f64, f64)>,
    /// All gaps stayed above minus three standard errors.
    pub all_nonnegative: bool,
}

/// Measure the cost gap of deterministic perturbations of the optimal
/// feedback with common random numbers, and fit the quadratic growth in the
/// perturbation size.
pub fn perturbation_test(
    problem: &Problem,
    law: &FeedbackLaw,
    directions: &[(String, Arc<dyn Fn(f64) -> Col + Send + Sync>)],
    epsilons: &[f64],
    config: &SimulationConfig,
) -> Result<PerturbationReport> {
    let base = simulate_particles(problem, law, config)?;
    let base_est = estimate_cost(&base, problem);
    let mut entries = Vec::new();
    let mut fits = Vec::new();
    let mut ratios = Vec::new();
    let mut all_nonnegative = true;
    for (name, dir) in directions {
        let mut gaps = Vec::with_capacity(epsilons.len());
        for &eps in epsilons {
            let pert = Perturbed {
                base: law,
                direction: dir.clone(),
                epsilon: eps,
                label: format!("{name}+{eps}"),
            };
            let ens = simulate_particles(problem, &pert, config)?;
            // Common random numbers: identical substreams make the
            // per-particle cost differences directly comparable.
            let diffs: Vec<f64> = ens
                .costs
                .iter()
                .zip(base.costs.iter())
                .map(|(a, b)| a - b)
                .collect();
            let samples = collapse_pairs(&diffs, ens.antithetic);
            let (m, se) = mean_and_stderr(&samples);
            if m < -3.0 * se - 1e-12 {
                all_nonnegative = false;
            }
            gaps.push(m);
            entries.push(PerturbationEntry {
                direction: name.clone(),
                epsilon: eps,
                delta_j: m,
                stderr: se,
            });
        }
        // Least-squares fit delta_j ~ c eps^2 and its quality.
        let sxx: f64 = epsilons.iter().map(|e| e.powi(4)).sum();
        let sxy: f64 = epsilons
            .iter()
            .zip(gaps.iter())
            .map(|(e, g)| e.powi(2) * g)
            .sum();
        let c = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        let gbar = pairwise_sum(&gaps) / gaps.len() as f64;
        let ss_tot: f64 = gaps.iter().map(|g| (g - gbar).powi(2)).sum();
        let ss_res: f64 = epsilons
            .iter()
            .zip(gaps.iter())
            .map(|(e, g)| (g - c * e * e).powi(2))
            .sum();
        let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
        fits.push(DirectionFit {
            direction: name.clone(),
            quad_coeff: c,
            r_squared,
        });
        for (i, &eps) in epsilons.iter().enumerate() {
            if let Some(j) = epsilons.iter().position(|&e2| (e2 - 2.0 * eps).abs() < 1e-12) {
                if gaps[i] != 0.0 {
                    ratios.push((name.clone(), eps, gaps[j] / gaps[i]));
                }
            }
        }
    }
    Ok(PerturbationReport {
        baseline_j: base_est.mean,
        baseline_stderr: base_est.stderr,
        entries,
        fits,
        ratios,
        all_nonnegative,
    })
}
