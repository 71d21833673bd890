//! Backward matrix Riccati solvers.
//!
//! Finite horizon: the pair (K, Lambda) of symmetric gains solves two coupled
//! backward Riccati ODEs — K governs the centered (covariance) part of the
//! value field and Lambda the mean part, with the Lambda equation driven by K
//! through the hat coefficients. Integration is classical fixed-step RK4 with
//! post-step symmetrization and an optional step-halving guard.
//!
//! Infinite horizon: the algebraic stationary equations are solved by the
//! horizon-limit construction — integrate the finite-horizon equation from
//! zero terminal data over growing horizons until the initial value stops
//! moving, then verify the algebraic residual.

use crate::error::{LqmkvError, Result};
use crate::grid::TimeGrid;
use crate::linalg::{max_abs, max_asymmetry, min_eig_sym, spd_solve, symmetrize};
use crate::model::{hat_coefficients, Problem};
use crate::numerics::interp::{cubic4_weights, hermite_mid};
use crate::report::{mat_columns, push_mat, CsvTable};
use crate::Mat;

/// Convergence controls for the horizon-limit iteration.
#[derive(Clone, Copy, Debug)]
pub struct HorizonLimit {
    /// Horizon extension between convergence checks.
    pub t_step: f64,
    /// Max-norm change below which the limit is declared reached.
    pub tol: f64,
    /// Give up beyond this horizon.
    pub t_max: f64,
}

impl Default for HorizonLimit {
    fn default() -> Self {
        HorizonLimit {
            t_step: 5.0,
            tol: 1e-10,
            t_max: 500.0,
        }
    }
}

/// Solver options shared by the finite and infinite routes.
#[derive(Clone, Copy, Debug)]
pub struct RiccatiOptions {
    /// Fixed RK4 steps per unit of time (finite mode defaults; also the
    /// internal step of the horizon-limit integration).
    pub steps_per_unit: usize,
    /// Step-halving consistency guard; `None` disables it.
    pub halving_guard: Option<f64>,
    /// Proceed when the definiteness assumptions fail, checking positive
    /// definiteness of the gains pointwise instead of relying on K >= 0.
    pub allow_indefinite: bool,
    pub horizon_limit: HorizonLimit,
}

impl Default for RiccatiOptions {
    fn default() -> Self {
        RiccatiOptions {
            steps_per_unit: 2000,
            halving_guard: Some(1e-7),
            allow_indefinite: false,
            horizon_limit: HorizonLimit::default(),
        }
    }
}

/// Solved Riccati gains: time paths on a grid (finite mode) or stationary
/// matrices (infinite mode).
#[derive(Clone, Debug)]
pub struct RiccatiSolution {
    pub grid: Option<TimeGrid>,
    pub k: Vec<Mat>,
    pub lambda: Vec<Mat>,
}

impl RiccatiSolution {
    pub fn is_finite_mode(&self) -> bool {
        self.grid.is_some()
    }

    /// K at an arbitrary time (4-point interpolation on the grid; the
    /// stationary matrix in infinite mode).
    pub fn k_at(&self, t: f64) -> Mat {
        interp_mat(self.grid.as_ref(), &self.k, t)
    }

    pub fn lambda_at(&self, t: f64) -> Mat {
        interp_mat(self.grid.as_ref(), &self.lambda, t)
    }

    /// CSV dump: time, then row-major K, then row-major Lambda.
    pub fn to_csv(&self, footer: Option<&str>) -> String {
        let d = self.k[0].nrows();
        let mut header = vec!["t".to_string()];
        header.extend(mat_columns("k", d, d));
        header.extend(mat_columns("lambda", d, d));
        let mut table = CsvTable::new(header);
        match &self.grid {
            Some(grid) => {
                for (i, t) in grid.times().enumerate() {
                    let mut row = vec![t];
                    push_mat(&mut row, &self.k[i]);
                    push_mat(&mut row, &self.lambda[i]);
                    table.push_row(row);
                }
            }
            None => {
                let mut row = vec![0.0];
                push_mat(&mut row, &self.k[0]);
                push_mat(&mut row, &self.lambda[0]);
                table.push_row(row);
            }
        }
        table.render(footer)
    }
}

fn interp_mat(grid: Option<&TimeGrid>, values: &[Mat], t: f64) -> Mat {
    match grid {
        None => values[0].clone(),
        Some(g) => {
            let (idx, w) = cubic4_weights(g, t);
            let mut out = &values[idx[0]] * w[0];
            for k in 1..4 {
                out += &values[idx[k]] * w[k];
            }
            out
        }
    }
}

/// Right-hand side of the backward equation for K (the quantity whose sum
/// with dK/dt vanishes): drift and diffusion pushforwards of K, the running
/// state weight, minus the control-completion term `U' S^{-1} U`.
///
/// Errors when the control weight `S = N + sum_i F_i' K F_i` is not positive
/// definite at `t`.
pub fn riccati_rhs_k(problem: &Problem, t: f64, k: &Mat) -> Result<Mat> {
    if !k.iter().all(|v| v.is_finite()) {
        return Err(LqmkvError::RiccatiBlowUp { t });
    }
    let dy = &problem.dynamics;
    let co = &problem.cost;
    let rho = co.rho;
    let b = dy.b.at(t);
    let c = dy.c.at(t);
    let n_noises = dy.n_noises();

    let mut s = co.n.at(t);
    let mut u = co.i.at(t) + c.transpose() * k;
    let mut phi = co.q.at(t) - rho * k + k * &b + b.transpose() * k;
    for i in 0..n_noises {
        let d_i = dy.d[i].at(t);
        let f_i = dy.f[i].at(t);
        let kf = k * &f_i;
        let kd = k * &d_i;
        s += f_i.transpose() * &kf;
        u += f_i.transpose() * &kd;
        phi += d_i.transpose() * &kd;
    }
    let s_inv_u = spd_solve(&s, &u, t, "S")?;
    phi -= u.transpose() * s_inv_u;
    symmetrize(&mut phi);
    Ok(phi)
}

/// Right-hand side of the backward equation for Lambda given K: the same
/// completion applied to the hat (plain+tilde) coefficients, with the
/// diffusion pushforward still driven by K.
pub fn riccati_rhs_lambda(problem: &Problem, t: f64, k: &Mat, lambda: &Mat) -> Result<Mat> {
    if !k.iter().all(|v| v.is_finite()) || !lambda.iter().all(|v| v.is_finite()) {
        return Err(LqmkvError::RiccatiBlowUp { t });
    }
    let rho = problem.cost.rho;
    let h = hat_coefficients(problem, t)?;
    let n_noises = h.d_hat.len();

    let mut s_hat = h.n_hat.clone();
    let mut v = h.i_hat.clone() + h.c_hat.transpose() * lambda;
    let mut psi = h.q_hat.clone() - rho * lambda + lambda * &h.b_hat + h.b_hat.transpose() * lambda;
    for i in 0..n_noises {
        let kd = k * &h.d_hat[i];
        let kf = k * &h.f_hat[i];
        s_hat += h.f_hat[i].transpose() * &kf;
        v += h.f_hat[i].transpose() * &kd;
        psi += h.d_hat[i].transpose() * &kd;
    }
    let shat_inv_v = spd_solve(&s_hat, &v, t, "S^")?;
    psi -= v.transpose() * shat_inv_v;
    symmetrize(&mut psi);
    Ok(psi)
}

/// One backward RK4 step of `dX/dt = -rhs(t, X)` from `t1` down to `t0`.
fn rk4_back<F>(rhs: &F, t1: f64, t0: f64, x: &Mat) -> Result<Mat>
where
    F: Fn(f64, &Mat) -> Result<Mat>,
{
    let h = t0 - t1; // negative
    let tm = t1 + 0.5 * h;
    let k1 = rhs(t1, x)?;
    let k2 = rhs(tm, &(x - &k1 * (0.5 * h)))?;
    let k3 = rhs(tm, &(x - &k2 * (0.5 * h)))?;
    let k4 = rhs(t0, &(x - &k3 * h))?;
    let mut out = x - (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    symmetrize(&mut out);
    if !out.iter().all(|v| v.is_finite()) {
        return Err(LqmkvError::RiccatiBlowUp { t: t0 });
    }
    Ok(out)
}

fn integrate_k_backward(
    problem: &Problem,
    grid: &TimeGrid,
    terminal: &Mat,
) -> Result<Vec<Mat>> {
    let mut path = vec![Mat::zeros(terminal.nrows(), terminal.ncols()); grid.len()];
    path[grid.n_steps()] = terminal.clone();
    let rhs = |t: f64, k: &Mat| riccati_rhs_k(problem, t, k);
    for i in (1..=grid.n_steps()).rev() {
        path[i - 1] = rk4_back(&rhs, grid.t(i), grid.t(i - 1), &path[i])?;
    }
    Ok(path)
}

/// Backward solve of the K equation on `grid` from the terminal weight `P`,
/// with post-step symmetrization and the step-halving consistency guard.
pub fn solve_k_finite(problem: &Problem, grid: &TimeGrid, opts: &RiccatiOptions) -> Result<Vec<Mat>> {
    let terminal = problem.terminal_k();
    let path = integrate_k_backward(problem, grid, &terminal)?;
    if let Some(tol) = opts.halving_guard {
        let fine = integrate_k_backward(problem, &grid.refined(), &terminal)?;
        let mut change = 0.0f64;
        for i in 0..grid.len() {
            change = change.max(max_abs(&(&path[i] - &fine[2 * i])));
        }
        if change >= tol {
            return Err(LqmkvError::ConvergenceGuard { change, tol });
        }
    }
    check_gain_definiteness(problem, grid, &path, opts)?;
    Ok(path)
}

/// Backward solve of the Lambda equation given the solved K path.
///
/// RK4 midpoint stages use a cubic Hermite reconstruction of K built from the
/// supplied path and the K equation itself, so the pair retains fourth-order
/// accuracy without re-solving K.
pub fn solve_lambda_finite(
    problem: &Problem,
    k_path: &[Mat],
    grid: &TimeGrid,
    opts: &RiccatiOptions,
) -> Result<Vec<Mat>> {
    if k_path.len() != grid.len() {
        return Err(LqmkvError::DimensionMismatch(
            "K path length does not match the grid".into(),
        ));
    }
    let run = |g: &TimeGrid, ks: &[Mat]| -> Result<Vec<Mat>> {
        let mut path = vec![Mat::zeros(ks[0].nrows(), ks[0].ncols()); g.len()];
        path[g.n_steps()] = problem.terminal_lambda();
        for i in (1..=g.n_steps()).rev() {
            let (t1, t0) = (g.t(i), g.t(i - 1));
            let h = t0 - t1;
            let k1v = &ks[i];
            let k0v = &ks[i - 1];
            // Midpoint K via Hermite with ODE-consistent derivatives.
            let d1 = riccati_rhs_k(problem, t1, k1v)?; // dK/dt = -rhs
            let d0 = riccati_rhs_k(problem, t0, k0v)?;
            let step = t1 - t0;
            let mut km = Mat::zeros(k1v.nrows(), k1v.ncols());
            for r in 0..km.nrows() {
                for c in 0..km.ncols() {
                    km[(r, c)] = hermite_mid(
                        step,
                        k0v[(r, c)],
                        k1v[(r, c)],
                        -d0[(r, c)],
                        -d1[(r, c)],
                    );
                }
            }
            let tm = t1 + 0.5 * h;
            let l = &path[i];
            let s1 = riccati_rhs_lambda(problem, t1, k1v, l)?;
            let s2 = riccati_rhs_lambda(problem, tm, &km, &(l - &s1 * (0.5 * h)))?;
            let s3 = riccati_rhs_lambda(problem, tm, &km, &(l - &s2 * (0.5 * h)))?;
            let s4 = riccati_rhs_lambda(problem, t0, k0v, &(l - &s3 * h))?;
            let mut next = l - (s1 + s2 * 2.0 + s3 * 2.0 + s4) * (h / 6.0);
            symmetrize(&mut next);
            if !next.iter().all(|v| v.is_finite()) {
                return Err(LqmkvError::RiccatiBlowUp { t: t0 });
            }
            path[i - 1] = next;
        }
        Ok(path)
    };
    let path = run(grid, k_path)?;
    if let Some(tol) = opts.halving_guard {
        let fine_grid = grid.refined();
        let fine_k = integrate_k_backward(problem, &fine_grid, &problem.terminal_k())?;
        let fine = run(&fine_grid, &fine_k)?;
        let mut change = 0.0f64;
        for i in 0..grid.len() {
            change = change.max(max_abs(&(&path[i] - &fine[2 * i])));
        }
        if change >= tol {
            return Err(LqmkvError::ConvergenceGuard { change, tol });
        }
    }
    Ok(path)
}

/// Verify positive definiteness of the control weights along the solved path
/// and, outside the opt-in indefinite mode, nonnegativity of K itself.
fn check_gain_definiteness(
    problem: &Problem,
    grid: &TimeGrid,
    k_path: &[Mat],
    opts: &RiccatiOptions,
) -> Result<()> {
    for (i, t) in grid.times().enumerate() {
        let k = &k_path[i];
        gains_at(problem, t, k)?;
        if !opts.allow_indefinite && min_eig_sym(k) < -1e-8 {
            // K should stay nonnegative under the coercivity assumptions;
            // a clearly negative eigenvalue means they were violated.
            return Err(LqmkvError::RiccatiBlowUp { t });
        }
    }
    Ok(())
}

/// S and S^ at `(t, K)`, factorization-checked.
fn gains_at(problem: &Problem, t: f64, k: &Mat) -> Result<(Mat, Mat)> {
    let dy = &problem.dynamics;
    let mut s = problem.cost.n.at(t);
    for i in 0..dy.n_noises() {
        let f_i = dy.f[i].at(t);
        s += f_i.transpose() * k * f_i;
    }
    crate::linalg::spd_cholesky(&s, t, "S")?;
    let h = hat_coefficients(problem, t)?;
    let mut s_hat = h.n_hat.clone();
    for f_i in &h.f_hat {
        s_hat += f_i.transpose() * k * f_i;
    }
    crate::linalg::spd_cholesky(&s_hat, t, "S^")?;
    Ok((s, s_hat))
}

/// Stationary K by the horizon limit: integrate the finite-horizon equation
/// from zero terminal data over growing horizons until the initial value
/// settles, then check the algebraic residual.
pub fn solve_k_infinite(problem: &Problem, opts: &RiccatiOptions) -> Result<Mat> {
    let d = problem.state_dim();
    let rhs = |t: f64, k: &Mat| riccati_rhs_k(problem, t, k);
    horizon_limit(d, &rhs, opts, "S")
}

/// Stationary Lambda given the stationary K.
pub fn solve_lambda_infinite(problem: &Problem, k: &Mat, opts: &RiccatiOptions) -> Result<Mat> {
    let d = problem.state_dim();
    let rhs = |t: f64, l: &Mat| riccati_rhs_lambda(problem, t, k, l);
    horizon_limit(d, &rhs, opts, "S^")
}

fn horizon_limit<F>(d: usize, rhs: &F, opts: &RiccatiOptions, _what: &str) -> Result<Mat>
where
    F: Fn(f64, &Mat) -> Result<Mat>,
{
    let hl = opts.horizon_limit;
    let steps_per_block = ((hl.t_step * opts.steps_per_unit as f64).round() as usize).max(1);
    let h = hl.t_step / steps_per_block as f64;
    let mut m = Mat::zeros(d, d);
    let mut horizon = 0.0;
    while horizon < hl.t_max {
        let prev = m.clone();
        // Coefficients are constant, so growing the horizon is just more
        // backward time; each block applies the reverse-time flow map. The
        // step runs from t = h down to t = 0 to keep stage times inside the
        // horizon.
        for _ in 0..steps_per_block {
            m = rk4_back(rhs, h, 0.0, &m)?;
        }
        horizon += hl.t_step;
        if max_abs(&(&m - &prev)) < hl.tol {
            symmetrize(&mut m);
            let residual = max_abs(&rhs(0.0, &m)?);
            if residual > 1e-8 {
                return Err(LqmkvError::ResidualTooLarge {
                    residual,
                    tol: 1e-8,
                });
            }
            if !opts.allow_indefinite && min_eig_sym(&m) < -1e-10 {
                return Err(LqmkvError::RiccatiBlowUp { t: 0.0 });
            }
            return Ok(m);
        }
    }
    Err(LqmkvError::HorizonLimitDiverged { t_max: hl.t_max })
}

/// Solve both gains in the mode matching the problem horizon.
pub fn solve(problem: &Problem, grid: Option<&TimeGrid>, opts: &RiccatiOptions) -> Result<RiccatiSolution> {
    match problem.terminal_time() {
        Some(t_end) => {
            let grid = grid
                .cloned()
                .unwrap_or_else(|| TimeGrid::per_unit(t_end, opts.steps_per_unit));
            let k = solve_k_finite(problem, &grid, opts)?;
            let lambda = solve_lambda_finite(problem, &k, &grid, opts)?;
            Ok(RiccatiSolution {
                grid: Some(grid),
                k,
                lambda,
            })
        }
        None => {
            let k = solve_k_infinite(problem, opts)?;
            let lambda = solve_lambda_infinite(problem, &k, opts)?;
            Ok(RiccatiSolution {
                grid: None,
                k: vec![k],
                lambda: vec![lambda],
            })
        }
    }
}

/// Max-norm defect of the K equation at interval midpoints, using the cubic
/// Hermite reconstruction of the solved path. For a converged solve this
/// stays within the residual tolerance.
pub fn k_residual_at_midpoints(problem: &Problem, grid: &TimeGrid, k_path: &[Mat]) -> Result<f64> {
    let mut worst = 0.0f64;
    for i in 0..grid.n_steps() {
        let (t0, t1) = (grid.t(i), grid.t(i + 1));
        let h = t1 - t0;
        let d0 = riccati_rhs_k(problem, t0, &k_path[i])?;
        let d1 = riccati_rhs_k(problem, t1, &k_path[i + 1])?;
        let tm = t0 + 0.5 * h;
        let d = k_path[0].nrows();
        let mut km = Mat::zeros(d, d);
        let mut dm = Mat::zeros(d, d);
        for r in 0..d {
            for c in 0..d {
                km[(r, c)] = hermite_mid(
                    h,
                    k_path[i][(r, c)],
                    k_path[i + 1][(r, c)],
                    -d0[(r, c)],
                    -d1[(r, c)],
                );
                dm[(r, c)] = crate::numerics::interp::hermite_mid_deriv(
                    h,
                    k_path[i][(r, c)],
                    k_path[i + 1][(r, c)],
                    -d0[(r, c)],
                    -d1[(r, c)],
                );
            }
        }
        let defect = &dm + riccati_rhs_k(problem, tm, &km)?;
        worst = worst.max(max_abs(&defect));
    }
    Ok(worst)
}

/// Symmetry drift over a solved path.
pub fn max_path_asymmetry(path: &[Mat]) -> f64 {
    path.iter().map(max_asymmetry).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apps::{liq_k, liq_k_nu, LiquidationParams, ResourceParams};
    use crate::model::{
        Cost, Dynamics, FactorKind, FactorModel, Horizon, InitialLaw, MatPath, Problem,
    };
    use crate::Col;
    use approx::assert_relative_eq;

    fn liquidation(q: f64, nu: f64) -> Problem {
        LiquidationParams {
            x0: 30.0,
            horizon: 2.0,
            q,
            p: 10.0,
            nu,
            eta: 1.0,
            price: FactorModel::new(FactorKind::ArithmeticBrownian { sigma: 1.0 }, 10.0, 0),
        }
        .to_problem()
        .unwrap()
    }

    fn resource() -> (ResourceParams, Problem) {
        let params = ResourceParams {
            x0: 1.0,
            sigma: 0.3,
            delta: 1.0,
            epsilon: 0.5,
            eta: 0.5,
            c: 1.0,
            rho: 0.5,
            price: FactorModel::new(FactorKind::ArithmeticBrownian { sigma: 0.2 }, 0.4, 1),
        };
        let problem = params.to_problem().unwrap();
        (params, problem)
    }

    fn scalar(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    #[test]
    fn rhs_k_matches_scalar_reductions() {
        // Inventory-liquidation coefficients collapse the right-hand side to
        // q - K^2.
        let p = liquidation(1.3, 0.7);
        for &k in &[0.0, 0.5, 2.0, -1.0] {
            let v = riccati_rhs_k(&p, 0.4, &scalar(k)).unwrap();
            assert_relative_eq!(v[(0, 0)], 1.3 - k * k, max_relative = 1e-14);
        }

        // Zero data is a fixed point.
        let mut dy = Dynamics::zero(1, 1, 1);
        dy.c = MatPath::scalar(1.0);
        let mut co = Cost::zero(1, 1);
        co.n = MatPath::scalar(1.0);
        co.p = Some(scalar(0.0));
        let zero = Problem::new(
            dy,
            co,
            Horizon::Finite(1.0),
            InitialLaw::deterministic(Col::zeros(1)),
            None,
        )
        .unwrap();
        assert_eq!(riccati_rhs_k(&zero, 0.0, &scalar(0.0)).unwrap()[(0, 0)], 0.0);

        // Resource coefficients give -(rho - sigma^2) K - (K + c/2)^2 / (delta + eta).
        let (pr, p) = resource();
        let a = pr.rho - pr.sigma * pr.sigma;
        for &k in &[0.0, -0.2, 0.3] {
            let v = riccati_rhs_k(&p, 0.0, &scalar(k)).unwrap();
            let expected = -a * k - (k + 0.5 * pr.c).powi(2) / (pr.delta + pr.eta);
            assert_relative_eq!(v[(0, 0)], expected, max_relative = 1e-13);
        }
    }

    #[test]
    fn rhs_lambda_matches_scalar_reductions() {
        // Liquidation: q - (Lambda + nu)^2.
        let p = liquidation(1.3, 0.7);
        for &(k, l) in &[(0.5, 0.2), (1.0, -0.3)] {
            let v = riccati_rhs_lambda(&p, 0.4, &scalar(k), &scalar(l)).unwrap();
            assert_relative_eq!(v[(0, 0)], 1.3 - (l + 0.7) * (l + 0.7), max_relative = 1e-13);
        }
        // Resource: -rho Lambda + sigma^2 K - (Lambda + c/2)^2 / (delta + eps).
        let (pr, p) = resource();
        for &(k, l) in &[(-0.1, -0.2), (0.2, 0.1)] {
            let v = riccati_rhs_lambda(&p, 0.0, &scalar(k), &scalar(l)).unwrap();
            let expected = -pr.rho * l + pr.sigma * pr.sigma * k
                - (l + 0.5 * pr.c).powi(2) / (pr.delta + pr.epsilon);
            assert_relative_eq!(v[(0, 0)], expected, max_relative = 1e-13);
        }
    }

    #[test]
    fn rhs_lambda_reduces_to_rhs_k_without_mean_terms() {
        // With every tilde coefficient zero the two right-hand sides agree
        // on the diagonal K = Lambda.
        let mut dy = Dynamics::zero(2, 1, 1);
        dy.b = MatPath::constant(Mat::from_row_slice(2, 2, &[-0.5, 0.2, 0.1, -0.9]));
        dy.c = MatPath::constant(Mat::from_row_slice(2, 1, &[1.0, 0.3]));
        dy.d = vec![MatPath::constant(Mat::from_row_slice(2, 2, &[0.1, 0.0, 0.05, 0.2]))];
        dy.f = vec![MatPath::constant(Mat::from_row_slice(2, 1, &[0.05, 0.1]))];
        let mut co = Cost::zero(2, 1);
        co.q = MatPath::constant(Mat::identity(2, 2));
        co.n = MatPath::scalar(1.0);
        co.p = Some(Mat::identity(2, 2) * 0.5);
        let p = Problem::new(
            dy,
            co,
            Horizon::Finite(1.0),
            InitialLaw::deterministic(Col::zeros(2)),
            None,
        )
        .unwrap();
        let k = Mat::from_row_slice(2, 2, &[0.7, 0.1, 0.1, 0.4]);
        let a = riccati_rhs_k(&p, 0.3, &k).unwrap();
        let b = riccati_rhs_lambda(&p, 0.3, &k, &k).unwrap();
        assert!(max_abs(&(a - b)) < 1e-14);
    }

    #[test]
    fn finite_k_matches_hyperbolic_closed_form() {
        let p = liquidation(1.0, 0.0);
        let grid = TimeGrid::new(0.0, 2.0, 2000);
        let path = solve_k_finite(&p, &grid, &RiccatiOptions::default()).unwrap();
        let mut worst = 0.0f64;
        for (i, t) in grid.times().enumerate() {
            worst = worst.max((path[i][(0, 0)] - liq_k(t, 10.0, 1.0, 2.0)).abs());
        }
        assert!(worst <= 1e-6, "max error {worst:e}");
        // Terminal condition is stored bitwise.
        assert_eq!(path[2000][(0, 0)], 10.0);
    }

    #[test]
    fn finite_k_zero_data_stays_zero() {
        let mut dy = Dynamics::zero(1, 1, 1);
        dy.c = MatPath::scalar(1.0);
        let mut co = Cost::zero(1, 1);
        co.n = MatPath::scalar(1.0);
        co.p = Some(scalar(0.0));
        let p = Problem::new(
            dy,
            co,
            Horizon::Finite(1.0),
            InitialLaw::deterministic(Col::zeros(1)),
            None,
        )
        .unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 100);
        let path = solve_k_finite(&p, &grid, &RiccatiOptions::default()).unwrap();
        assert!(path.iter().all(|m| m[(0, 0)] == 0.0));
    }

    fn two_dim_instance() -> Problem {
        let mut dy = Dynamics::zero(2, 2, 1);
        dy.b = MatPath::constant(Mat::from_row_slice(2, 2, &[-0.4, 0.3, 0.0, -0.6]));
        dy.b_tilde = MatPath::constant(Mat::from_row_slice(2, 2, &[0.1, 0.0, -0.05, 0.08]));
        dy.c = MatPath::constant(Mat::identity(2, 2));
        dy.c_tilde = MatPath::constant(Mat::from_row_slice(2, 2, &[0.0, 0.1, 0.0, 0.0]));
        dy.d = vec![MatPath::constant(Mat::from_row_slice(2, 2, &[0.2, 0.0, 0.1, 0.15]))];
        dy.d_tilde = vec![MatPath::constant(Mat::from_row_slice(2, 2, &[0.0, 0.05, 0.0, 0.1]))];
        dy.f = vec![MatPath::constant(Mat::from_row_slice(2, 2, &[0.1, 0.0, 0.0, 0.05]))];
        dy.f_tilde = vec![MatPath::zeros(2, 2)];
        let mut co = Cost::zero(2, 2);
        co.q = MatPath::constant(Mat::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.8]));
        co.q_tilde = MatPath::constant(Mat::identity(2, 2) * 0.3);
        co.n = MatPath::constant(Mat::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 1.2]));
        co.n_tilde = MatPath::constant(Mat::identity(2, 2) * 0.2);
        co.p = Some(Mat::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.7]));
        co.p_tilde = Some(Mat::identity(2, 2) * 0.1);
        Problem::new(
            dy,
            co,
            Horizon::Finite(1.5),
            InitialLaw::deterministic(Col::from_row_slice(&[1.0, -0.5])),
            None,
        )
        .unwrap()
    }

    #[test]
    fn finite_pair_half_step_and_symmetry_invariants() {
        let p = two_dim_instance();
        let grid = TimeGrid::new(0.0, 1.5, 300);
        let opts = RiccatiOptions {
            halving_guard: None,
            ..RiccatiOptions::default()
        };
        let k = solve_k_finite(&p, &grid, &opts).unwrap();
        let lambda = solve_lambda_finite(&p, &k, &grid, &opts).unwrap();
        // Step-halving agreement on the shared points.
        let fine = TimeGrid::new(0.0, 1.5, 600);
        let k_fine = solve_k_finite(&p, &fine, &opts).unwrap();
        let mut worst = 0.0f64;
        for i in 0..grid.len() {
            worst = worst.max(max_abs(&(&k[i] - &k_fine[2 * i])));
        }
        assert!(worst < 1e-8, "half-step disagreement {worst:e}");
        // Symmetry along both paths.
        assert!(max_path_asymmetry(&k) <= 1e-10);
        assert!(max_path_asymmetry(&lambda) <= 1e-10);
        // Defect of the flow at interval midpoints.
        let defect = k_residual_at_midpoints(&p, &grid, &k).unwrap();
        assert!(defect <= 1e-8, "midpoint defect {defect:e}");
    }

    #[test]
    fn finite_lambda_matches_shifted_closed_form() {
        let p = liquidation(1.0, 1.0);
        let grid = TimeGrid::new(0.0, 2.0, 2000);
        let opts = RiccatiOptions::default();
        let k = solve_k_finite(&p, &grid, &opts).unwrap();
        let lambda = solve_lambda_finite(&p, &k, &grid, &opts).unwrap();
        let mut worst = 0.0f64;
        for (i, t) in grid.times().enumerate() {
            worst = worst.max((lambda[i][(0, 0)] + 1.0 - liq_k_nu(t, 10.0, 1.0, 1.0, 2.0)).abs());
        }
        assert!(worst <= 1e-6, "max error {worst:e}");
        // The mean gain dominates the centered gain for nonnegative crowding.
        for (i, t) in grid.times().enumerate() {
            assert!(lambda[i][(0, 0)] + 1.0 >= k[i][(0, 0)] - 1e-12, "t = {t}");
        }
    }

    #[test]
    fn finite_lambda_equals_k_without_mean_coupling() {
        let mut p = two_dim_instance();
        p.dynamics.b_tilde = MatPath::zeros(2, 2);
        p.dynamics.c_tilde = MatPath::zeros(2, 2);
        p.dynamics.d_tilde = vec![MatPath::zeros(2, 2)];
        p.dynamics.f_tilde = vec![MatPath::zeros(2, 2)];
        p.cost.q_tilde = MatPath::zeros(2, 2);
        p.cost.n_tilde = MatPath::zeros(2, 2);
        p.cost.p_tilde = None;
        let grid = TimeGrid::new(0.0, 1.5, 1500);
        let opts = RiccatiOptions::default();
        let k = solve_k_finite(&p, &grid, &opts).unwrap();
        let lambda = solve_lambda_finite(&p, &k, &grid, &opts).unwrap();
        let mut worst = 0.0f64;
        for i in 0..grid.len() {
            worst = worst.max(max_abs(&(&k[i] - &lambda[i])));
        }
        assert!(worst <= 1e-9, "Lambda deviates from K by {worst:e}");
    }

    #[test]
    fn finite_lambda_degenerate_inventory_weight() {
        // q = 0 with positive crowding: the mean gain can go negative but
        // the shifted flow still matches the rational closed form.
        let p = liquidation(0.0, 1.0);
        let grid = TimeGrid::new(0.0, 2.0, 2000);
        let opts = RiccatiOptions::default();
        let k = solve_k_finite(&p, &grid, &opts).unwrap();
        let lambda = solve_lambda_finite(&p, &k, &grid, &opts).unwrap();
        let mut worst = 0.0f64;
        let mut lambda_min = f64::INFINITY;
        for (i, t) in grid.times().enumerate() {
            let expected = 11.0 / (11.0 * (2.0 - t) + 1.0);
            worst = worst.max((lambda[i][(0, 0)] + 1.0 - expected).abs());
            lambda_min = lambda_min.min(lambda[i][(0, 0)]);
        }
        assert!(worst <= 1e-6, "max error {worst:e}");
        assert!(lambda_min < 0.0, "this instance exercises an indefinite mean gain");
    }

    #[test]
    fn step_halving_order_is_fourth() {
        let p = liquidation(1.0, 0.0);
        let opts = RiccatiOptions {
            halving_guard: None,
            ..RiccatiOptions::default()
        };
        let err_at = |steps: usize| -> f64 {
            let grid = TimeGrid::new(0.0, 2.0, steps);
            let path = solve_k_finite(&p, &grid, &opts).unwrap();
            grid.times()
                .enumerate()
                .map(|(i, t)| (path[i][(0, 0)] - liq_k(t, 10.0, 1.0, 2.0)).abs())
                .fold(0.0, f64::max)
        };
        let e_h = err_at(200);
        let e_h2 = err_at(400);
        let ratio = e_h / e_h2;
        assert!(
            (12.0..=20.0).contains(&ratio),
            "order ratio {ratio} (errors {e_h:e}, {e_h2:e})"
        );
    }

    #[test]
    fn infinite_gains_match_quadratic_oracle() {
        let (pr, p) = resource();
        let opts = RiccatiOptions {
            allow_indefinite: true,
            ..RiccatiOptions::default()
        };
        let k = solve_k_infinite(&p, &opts).unwrap();
        let lambda = solve_lambda_infinite(&p, &k, &opts).unwrap();
        let (k_eta, lambda_eps) = crate::apps::res_gains(&pr).unwrap();
        let k_eta_solved = (k[(0, 0)] + 0.5 * pr.c) / (pr.delta + pr.eta);
        let lam_eps_solved = (lambda[(0, 0)] + 0.5 * pr.c) / (pr.delta + pr.epsilon);
        assert!((k_eta_solved - k_eta).abs() <= 1e-8);
        assert!((lam_eps_solved - lambda_eps).abs() <= 1e-8);
        // Algebraic residuals of the stationary equations.
        assert!(max_abs(&riccati_rhs_k(&p, 0.0, &k).unwrap()) <= 1e-8);
        assert!(max_abs(&riccati_rhs_lambda(&p, 0.0, &k, &lambda).unwrap()) <= 1e-8);
    }

    #[test]
    fn infinite_zero_data_gives_zero() {
        let mut dy = Dynamics::zero(1, 1, 1);
        dy.c = MatPath::scalar(1.0);
        let mut co = Cost::zero(1, 1);
        co.n = MatPath::scalar(1.0);
        co.rho = 0.4;
        let p = Problem::new(
            dy,
            co,
            Horizon::Infinite,
            InitialLaw::deterministic(Col::zeros(1)),
            None,
        )
        .unwrap();
        let k = solve_k_infinite(&p, &RiccatiOptions::default()).unwrap();
        assert_eq!(k[(0, 0)], 0.0);
    }

    #[test]
    fn infinite_scalar_root_matches_bisection() {
        // B = -1, C = 1, D = F = 0, Q = N = 1, rho = 0.1: the stationary
        // equation is -K^2 - 2.1 K + 1 = 0 with positive root.
        let mut dy = Dynamics::zero(1, 1, 1);
        dy.b = MatPath::scalar(-1.0);
        dy.c = MatPath::scalar(1.0);
        let mut co = Cost::zero(1, 1);
        co.q = MatPath::scalar(1.0);
        co.n = MatPath::scalar(1.0);
        co.rho = 0.1;
        let p = Problem::new(
            dy,
            co,
            Horizon::Infinite,
            InitialLaw::deterministic(Col::zeros(1)),
            None,
        )
        .unwrap();
        let k = solve_k_infinite(&p, &RiccatiOptions::default()).unwrap()[(0, 0)];
        // Bisection on the right-hand side as the independent oracle.
        let f = |x: f64| riccati_rhs_k(&p, 0.0, &scalar(x)).unwrap()[(0, 0)];
        let (mut lo, mut hi) = (0.0, 2.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((k - 0.5 * (lo + hi)).abs() < 1e-10);
    }

    #[test]
    fn infinite_lambda_eps_sweep_keeps_residuals_small() {
        for eps in [0.1, 0.5, 1.0] {
            let params = ResourceParams {
                epsilon: eps,
                ..resource().0
            };
            let p = params.to_problem().unwrap();
            let opts = RiccatiOptions {
                allow_indefinite: true,
                ..RiccatiOptions::default()
            };
            let k = solve_k_infinite(&p, &opts).unwrap();
            let lambda = solve_lambda_infinite(&p, &k, &opts).unwrap();
            assert!(max_abs(&riccati_rhs_lambda(&p, 0.0, &k, &lambda).unwrap()) <= 1e-8);
        }
    }

    #[test]
    fn degenerate_control_weight_is_reported() {
        // N = 0 with no diffusion loading leaves S singular.
        let mut dy = Dynamics::zero(1, 1, 1);
        dy.c = MatPath::scalar(1.0);
        let mut co = Cost::zero(1, 1);
        co.q = MatPath::scalar(1.0);
        co.p = Some(scalar(1.0));
        let p = Problem::new(
            dy,
            co,
            Horizon::Finite(1.0),
            InitialLaw::deterministic(Col::zeros(1)),
            None,
        )
        .unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 10);
        match solve_k_finite(&p, &grid, &RiccatiOptions::default()) {
            Err(LqmkvError::DegenerateGain { what, .. }) => assert_eq!(what, "S"),
            other => panic!("expected a degenerate gain, got {other:?}"),
        }
    }

    #[test]
    fn infinite_nonnegativity_enforced_unless_opted_in() {
        let (_, p) = resource();
        // The resource instance has an indefinite centered gain; without the
        // opt-in the solver refuses it.
        let err = solve_k_infinite(&p, &RiccatiOptions::default());
        assert!(err.is_err());
    }

    #[test]
    fn csv_dump_shape() {
        let mut p = liquidation(1.0, 0.5);
        // Mild terminal weight so four coarse steps stay stable.
        p.cost.p = Some(scalar(0.5));
        let grid = TimeGrid::new(0.0, 2.0, 4);
        let opts = RiccatiOptions {
            halving_guard: None,
            ..RiccatiOptions::default()
        };
        let sol = solve(&p, Some(&grid), &opts).unwrap();
        let csv = sol.to_csv(Some("case=test"));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,k_00,lambda_00");
        assert_eq!(lines.len(), 1 + 5 + 1);
        assert!(lines.last().unwrap().starts_with("# "));
    }
}
