//! Adjoint equations: the linear mean-field BSDE for (Y, Z^Y) in its
//! tractable subclasses, and the scalar discounted integral for the
//! remainder term R.
//!
//! Two subclasses admit explicit representations and are the ones solved
//! here, mirroring the structure of the worked applications:
//!
//! * every random channel is deterministic — Y is deterministic, Z^Y = 0,
//!   and the BSDE collapses to a linear ODE;
//! * the random channels are affine in an exogenous factor driven by a
//!   Brownian motion that does not appear in the state dynamics — Y is
//!   adapted to the factor filtration, the state-noise components of Z^Y
//!   vanish, and both the mean of Y and its centered part have exponential
//!   kernel representations through the factor's conditional means.
//!
//! The general adapted-coefficient BSDE has no algorithmic recipe and is out
//! of scope; requesting it raises an unsupported-coupling error.

use crate::control::GainPaths;
use crate::error::{LqmkvError, Result};
use crate::grid::TimeGrid;
use crate::linalg::spd_solve_vec;
use crate::model::{hat_coefficients, FactorKind, FactorModel, Problem};
use crate::numerics::interp::{cubic4_weights, hermite};
use crate::numerics::quad::adaptive_simpson;
use crate::riccati::RiccatiSolution;
use crate::{Col, Mat};

/// Absolute tolerance for all kernel quadratures.
pub const QUAD_TOL: f64 = 1e-10;

/// Decay depth for infinite-horizon kernel truncation: integrals with kernel
/// rate `g` run over a window of `KERNEL_DECAY / g`.
const KERNEL_DECAY: f64 = 30.0;

/// Grid density for infinite-horizon adjoint evaluation; the paths there are
/// sums of a handful of exponentials, so a coarse grid plus 4-point
/// interpolation stays well below the solver tolerances.
pub const INFINITE_STEPS_PER_UNIT: usize = 50;

/// Coefficient bundle of the adjoint BSDE, evaluated lazily from the solved
/// Riccati gains: drift matrices for the centered and mean parts, per-noise
/// diffusion couplings, and the affine inhomogeneity split into its mean and
/// factor-loading parts.
pub struct BsdeCoefficients<'a> {
    pub problem: &'a Problem,
    pub riccati: &'a RiccatiSolution,
    pub gains: &'a GainPaths,
}

/// Assemble the BSDE coefficient bundle from the solved gains.
pub fn bsde_coefficients<'a>(
    problem: &'a Problem,
    riccati: &'a RiccatiSolution,
    gains: &'a GainPaths,
) -> BsdeCoefficients<'a> {
    BsdeCoefficients {
        problem,
        riccati,
        gains,
    }
}

impl BsdeCoefficients<'_> {
    /// Drift matrix of the centered part of Y.
    pub fn g_at(&self, t: f64) -> Mat {
        let d = self.problem.state_dim();
        let b = self.problem.dynamics.b.at(t);
        let c = self.problem.dynamics.c.at(t);
        Mat::identity(d, d) * self.problem.rho() - b + c * self.gains.s_inv_u_at(t)
    }

    /// Drift matrix of the mean of Y.
    pub fn g_hat_at(&self, t: f64) -> Mat {
        let d = self.problem.state_dim();
        let h = hat_coefficients(self.problem, t).expect("t inside horizon");
        Mat::identity(d, d) * self.problem.rho() - h.b_hat + h.c_hat * self.gains.shat_inv_v_at(t)
    }

    /// Per-noise coupling of the centered Z components.
    pub fn j_at(&self, t: f64, noise: usize) -> Mat {
        let dy = &self.problem.dynamics;
        -dy.d[noise].at(t) + dy.f[noise].at(t) * self.gains.s_inv_u_at(t)
    }

    /// Per-noise coupling of the mean Z components.
    pub fn j_hat_at(&self, t: f64, noise: usize) -> Mat {
        let h = hat_coefficients(self.problem, t).expect("t inside horizon");
        -h.d_hat[noise].clone() + h.f_hat[noise].clone() * self.gains.shat_inv_v_at(t)
    }

    /// Mean inhomogeneity split as `const + load * E[F_t]`: collects the
    /// linear cost weight, the intercept means pushed through the solved
    /// gains, and the completed-square corrections.
    pub fn theta_mean_parts(&self, t: f64) -> (Col, Col) {
        let p = self.problem;
        let dy = &p.dynamics;
        let co = &p.cost;
        let k = self.riccati.k_at(t);
        let lambda = self.riccati.lambda_at(t);
        let h = hat_coefficients(p, t).expect("t inside horizon");
        let v_t = self.gains.v_at(t);

        let mut parts = Vec::with_capacity(2);
        for pick_loading in [false, true] {
            let grab = |ch: &crate::model::FactorAffine| -> Col {
                if pick_loading {
                    ch.loading.at(t)
                } else {
                    ch.base.at(t)
                }
            };
            let m_part = grab(&co.m_lin);
            let beta_part = grab(&dy.beta);
            let h_part = grab(&co.h_lin);
            let mut out = -m_part - &lambda * beta_part;
            let mut inner = h_part;
            for i in 0..dy.n_noises() {
                let g_part = grab(&dy.gamma[i]);
                let kg = &k * &g_part;
                out -= h.d_hat[i].transpose() * &kg;
                inner += h.f_hat[i].transpose() * &kg;
            }
            out += v_t.transpose() * self.shat_solve(t, &inner);
            parts.push(out);
        }
        let load = parts.pop().unwrap();
        let cst = parts.pop().unwrap();
        (cst, load)
    }

    /// Mean of the inhomogeneity, `E[theta_t]`.
    pub fn theta_mean_at(&self, t: f64) -> Col {
        let (cst, load) = self.theta_mean_parts(t);
        match self.problem.factor.as_ref() {
            Some(f) => cst + load * f.mean(t),
            None => cst,
        }
    }

    /// Factor loading of the centered inhomogeneity,
    /// `theta_t - E[theta_t] = b(t) (F_t - E[F_t])`.
    pub fn theta_loading_at(&self, t: f64) -> Col {
        let p = self.problem;
        let dy = &p.dynamics;
        let co = &p.cost;
        let k = self.riccati.k_at(t);
        let b_m = co.m_lin.loading.at(t);
        let b_beta = dy.beta.loading.at(t);
        let b_h = co.h_lin.loading.at(t);

        let mut out = -b_m - &k * b_beta;
        let mut inner = b_h;
        for i in 0..dy.n_noises() {
            let b_gamma = dy.gamma[i].loading.at(t);
            let kg = &k * &b_gamma;
            out -= dy.d[i].at(t).transpose() * &kg;
            inner += dy.f[i].at(t).transpose() * &kg;
        }
        out += self.gains.u_at(t).transpose() * self.s_solve(t, &inner);
        out
    }

    fn s_solve(&self, t: f64, rhs: &Col) -> Col {
        spd_solve_vec(&self.gains.s_at(t), rhs, t, "S")
            .expect("S positive definite along the solved path")
    }

    fn shat_solve(&self, t: f64, rhs: &Col) -> Col {
        spd_solve_vec(&self.gains.s_hat_at(t), rhs, t, "S^")
            .expect("S^ positive definite along the solved path")
    }

    /// True when every random channel is deterministic (so theta is too).
    pub fn theta_deterministic(&self) -> bool {
        let p = self.problem;
        p.dynamics.beta.is_deterministic()
            && p.dynamics.gamma.iter().all(|g| g.is_deterministic())
            && p.cost.m_lin.is_deterministic()
            && p.cost.h_lin.is_deterministic()
            && p.cost.l.as_ref().map_or(true, |l| l.is_deterministic())
    }

    /// True when every channel path entering theta is constant in time.
    fn channels_constant(&self) -> bool {
        let p = self.problem;
        let ch = |c: &crate::model::FactorAffine| c.base.is_const() && c.loading.is_const();
        ch(&p.dynamics.beta)
            && p.dynamics.gamma.iter().all(ch)
            && ch(&p.cost.m_lin)
            && ch(&p.cost.h_lin)
    }
}

/// Flags describing the implicit representation of Z^Y in the supported
/// subclasses: the components along the state-driving noises vanish and the
/// factor-noise component is carried implicitly by the factor decomposition
/// of the centered part, never simulated.
#[derive(Clone, Copy, Debug)]
pub struct ZDecomposition {
    pub state_noise_components_zero: bool,
    pub factor_component_implicit: bool,
}

/// Solved adjoint data: the deterministic mean path of Y, the factor loading
/// of its centered part, the remainder path R, and bookkeeping about
/// integrability and truncation.
#[derive(Clone, Debug)]
pub struct AdjointSolution {
    /// Evaluation grid (the solver grid on finite horizon, the truncation
    /// grid on infinite horizon).
    pub grid: TimeGrid,
    pub infinite: bool,
    pub mean_y: Vec<Col>,
    /// Loading of `Y_t - E[Y_t]` on the centered factor `F_t - E[F_t]`.
    pub y_loading: Vec<Col>,
    pub r: Vec<f64>,
    /// Reported bound on the truncated tail of the remainder integral.
    pub r_tail_bound: Option<f64>,
    /// Whether the sufficient exponential-decay condition for discounted
    /// square-integrability of Y held on this route.
    pub y_integrable: bool,
    pub z: ZDecomposition,
}

impl AdjointSolution {
    fn interp(&self, values: &[Col], t: f64) -> Col {
        let (idx, w) = cubic4_weights(&self.grid, t.clamp(self.grid.t0(), self.grid.t_end()));
        let mut out = &values[idx[0]] * w[0];
        for k in 1..4 {
            out += &values[idx[k]] * w[k];
        }
        out
    }

    pub fn mean_y_at(&self, t: f64) -> Col {
        self.interp(&self.mean_y, t)
    }

    pub fn y_loading_at(&self, t: f64) -> Col {
        self.interp(&self.y_loading, t)
    }

    pub fn r_at(&self, t: f64) -> f64 {
        let tc = t.clamp(self.grid.t0(), self.grid.t_end());
        let (idx, w) = cubic4_weights(&self.grid, tc);
        (0..4).map(|k| w[k] * self.r[idx[k]]).sum()
    }

    /// Realized Y for a particle given its factor state.
    pub fn y_realized(&self, t: f64, factor_state: f64, factor: Option<&FactorModel>) -> Col {
        let mut y = self.mean_y_at(t);
        if let Some(f) = factor {
            let centered = factor_state - f.mean(t);
            if centered != 0.0 {
                y += self.y_loading_at(t) * centered;
            }
        }
        y
    }

    /// CSV dump of (t, E[Y_t], R_t).
    pub fn to_csv(&self, footer: Option<&str>) -> String {
        let d = self.mean_y[0].len();
        let mut header = vec!["t".to_string()];
        header.extend((0..d).map(|i| format!("mean_y_{i}")));
        header.push("r".to_string());
        let mut table = crate::report::CsvTable::new(header);
        for (i, t) in self.grid.times().enumerate() {
            let mut row = vec![t];
            row.extend(self.mean_y[i].iter().copied());
            row.push(self.r[i]);
            table.push_row(row);
        }
        table.render(footer)
    }
}

/// Cumulative antiderivative of a scalar rate path on a grid, by Simpson on
/// each interval, with cubic Hermite in-between. Used for the exponential
/// kernels `exp(-int_t^s g)` with time-varying rates.
struct CumulativeRate {
    grid: TimeGrid,
    a: Vec<f64>,
    g: Vec<f64>,
}

impl CumulativeRate {
    fn build(grid: &TimeGrid, rate: &impl Fn(f64) -> f64) -> Self {
        let n = grid.n_steps();
        let mut a = vec![0.0; n + 1];
        let mut g = vec![0.0; n + 1];
        for (i, slot) in g.iter_mut().enumerate() {
            *slot = rate(grid.t(i));
        }
        for i in 0..n {
            let t0 = grid.t(i);
            let t1 = grid.t(i + 1);
            let gm = rate(0.5 * (t0 + t1));
            a[i + 1] = a[i] + (t1 - t0) / 6.0 * (g[i] + 4.0 * gm + g[i + 1]);
        }
        CumulativeRate {
            grid: grid.clone(),
            a,
            g,
        }
    }

    fn at(&self, t: f64) -> f64 {
        let (i, w) = self.grid.locate(t);
        hermite(
            self.grid.step(),
            w,
            self.a[i],
            self.a[i + 1],
            self.g[i],
            self.g[i + 1],
        )
    }
}

/// Scalar 4-point interpolation over precomputed grid samples.
fn interp_scalar(grid: &TimeGrid, values: &[f64], t: f64) -> f64 {
    let (idx, w) = cubic4_weights(grid, t);
    (0..4).map(|k| w[k] * values[idx[k]]).sum()
}

/// Deterministic-channel route: Y solves a backward linear ODE, Z^Y = 0.
///
/// On infinite horizon the representation is the exponential integral of the
/// inhomogeneity; the decay condition ties integrability to the mean drift
/// matrix dominating the discount, and a non-vanishing inhomogeneity without
/// that decay is an inadmissible adjoint.
pub fn solve_y_deterministic(
    coeffs: &BsdeCoefficients<'_>,
    grid: &TimeGrid,
) -> Result<AdjointSolution> {
    if !coeffs.theta_deterministic() {
        return Err(LqmkvError::UnsupportedCoupling(
            "deterministic adjoint route requires deterministic channels".into(),
        ));
    }
    let p = coeffs.problem;
    let d = p.state_dim();
    let rho = p.rho();
    let z = ZDecomposition {
        state_noise_components_zero: true,
        factor_component_implicit: false,
    };

    if p.is_finite_horizon() {
        // Backward RK4 of dY/dt = theta + G^' Y from the terminal value.
        let mut mean_y = vec![Col::zeros(d); grid.len()];
        let terminal = p
            .cost
            .l
            .as_ref()
            .map(|l| l.mean(grid.t_end(), p.factor.as_ref()))
            .unwrap_or_else(|| Col::zeros(d));
        mean_y[grid.n_steps()] = terminal;
        let rhs =
            |t: f64, y: &Col| -> Col { coeffs.theta_mean_at(t) + coeffs.g_hat_at(t).transpose() * y };
        for i in (1..=grid.n_steps()).rev() {
            let (t1, t0) = (grid.t(i), grid.t(i - 1));
            let h = t0 - t1;
            let y = &mean_y[i];
            let k1 = rhs(t1, y);
            let k2 = rhs(t1 + 0.5 * h, &(y + &k1 * (0.5 * h)));
            let k3 = rhs(t1 + 0.5 * h, &(y + &k2 * (0.5 * h)));
            let k4 = rhs(t0, &(y + &k3 * h));
            mean_y[i - 1] = y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        return Ok(AdjointSolution {
            grid: grid.clone(),
            infinite: false,
            mean_y,
            y_loading: vec![Col::zeros(d); grid.len()],
            r: vec![0.0; grid.len()],
            r_tail_bound: None,
            y_integrable: true,
            z,
        });
    }

    // Infinite horizon: constant mean drift matrix.
    let g_hat = coeffs.g_hat_at(0.0);
    let mut mean_y = vec![Col::zeros(d); grid.len()];
    let mut integrable = true;
    if coeffs.channels_constant() {
        // Constant inhomogeneity: stationary Y = -(G^')^{-1} theta.
        let theta = coeffs.theta_mean_at(0.0);
        let y = -g_hat
            .transpose()
            .lu()
            .solve(&theta)
            .ok_or_else(|| LqmkvError::InadmissibleAdjoint("mean drift matrix is singular".into()))?;
        if theta.amax() > 0.0 {
            integrable = scalar_or_min_diag(&g_hat) - rho > 0.0;
            if !integrable {
                return Err(LqmkvError::InadmissibleAdjoint(format!(
                    "mean decay does not dominate the discount {rho}"
                )));
            }
        }
        for slot in mean_y.iter_mut() {
            slot.copy_from(&y);
        }
    } else {
        if d != 1 {
            return Err(LqmkvError::UnsupportedCoupling(
                "time-varying inhomogeneity on infinite horizon is solved in the scalar case only"
                    .into(),
            ));
        }
        let gh = g_hat[(0, 0)];
        integrable = gh - rho > 0.0;
        if !integrable {
            return Err(LqmkvError::InadmissibleAdjoint(format!(
                "mean decay rate {gh} does not dominate the discount {rho}"
            )));
        }
        let window = KERNEL_DECAY / gh;
        for (i, t) in grid.times().enumerate() {
            let v = adaptive_simpson(
                &|s| (-gh * (s - t)).exp() * coeffs.theta_mean_at(s)[0],
                t,
                t + window,
                QUAD_TOL,
            );
            mean_y[i] = Col::from_element(1, -v);
        }
    }
    Ok(AdjointSolution {
        grid: grid.clone(),
        infinite: true,
        mean_y,
        y_loading: vec![Col::zeros(d); grid.len()],
        r: vec![0.0; grid.len()],
        r_tail_bound: None,
        y_integrable: integrable,
        z,
    })
}

fn scalar_or_min_diag(m: &Mat) -> f64 {
    // Conservative decay proxy for the multi-dimensional constant route.
    crate::linalg::min_eig_sym(&(0.5 * (m + m.transpose())))
}

/// Factor route: the factor Brownian does not enter the state dynamics, so Y
/// is adapted to the factor filtration; the mean of Y follows an exponential
/// kernel integral of the mean inhomogeneity and the centered part a kernel
/// integral against the factor's conditional-mean coefficient.
///
/// Finite horizon evaluates the kernels by adaptive Simpson over precomputed
/// inhomogeneity samples; infinite horizon (constant coefficients) uses the
/// closed-form exponential integrals, which the tests cross-check against
/// quadrature.
pub fn solve_y_factor(
    coeffs: &BsdeCoefficients<'_>,
    factor: &FactorModel,
    grid: &TimeGrid,
) -> Result<AdjointSolution> {
    let p = coeffs.problem;
    let d = p.state_dim();
    let rho = p.rho();
    check_factor_decoupled(p, factor, grid)?;
    if coeffs.theta_deterministic() {
        // Degenerate factor: same answer as the deterministic route.
        return solve_y_deterministic(coeffs, grid);
    }
    if d != 1 {
        return Err(LqmkvError::UnsupportedCoupling(
            "factor-driven adjoint kernels are available in the scalar state case only".into(),
        ));
    }
    let z = ZDecomposition {
        state_noise_components_zero: true,
        factor_component_implicit: true,
    };

    let mut mean_y = vec![Col::zeros(1); grid.len()];
    let mut y_loading = vec![Col::zeros(1); grid.len()];
    let mut integrable = true;

    if p.is_finite_horizon() {
        let t_end = grid.t_end();
        let a_hat = CumulativeRate::build(grid, &|t| coeffs.g_hat_at(t)[(0, 0)]);
        let a_cen = CumulativeRate::build(grid, &|t| coeffs.g_at(t)[(0, 0)]);
        let th_mean: Vec<f64> = grid.times().map(|s| coeffs.theta_mean_at(s)[0]).collect();
        let th_load: Vec<f64> = grid.times().map(|s| coeffs.theta_loading_at(s)[0]).collect();
        let (l_mean, l_loading) = match &p.cost.l {
            Some(l) => (l.mean(t_end, Some(factor))[0], l.loading.at(t_end)[0]),
            None => (0.0, 0.0),
        };
        for (i, t) in grid.times().enumerate() {
            let at = a_hat.at(t);
            let mean = (-(a_hat.at(t_end) - at)).exp() * l_mean
                - adaptive_simpson(
                    &|s| (-(a_hat.at(s) - at)).exp() * interp_scalar(grid, &th_mean, s),
                    t,
                    t_end,
                    QUAD_TOL,
                );
            mean_y[i] = Col::from_element(1, mean);

            let act = a_cen.at(t);
            let loading = (-(a_cen.at(t_end) - act)).exp()
                * factor.cond_mean_affine(t, t_end).1
                * l_loading
                - adaptive_simpson(
                    &|s| {
                        (-(a_cen.at(s) - act)).exp()
                            * factor.cond_mean_affine(t, s).1
                            * interp_scalar(grid, &th_load, s)
                    },
                    t,
                    t_end,
                    QUAD_TOL,
                );
            y_loading[i] = Col::from_element(1, loading);
        }
    } else {
        let gh = coeffs.g_hat_at(0.0)[(0, 0)];
        let gc = coeffs.g_at(0.0)[(0, 0)];
        integrable = gh - rho > 0.0 && gc - rho > 0.0;
        let kappa = match factor.kind {
            FactorKind::OrnsteinUhlenbeck { kappa, .. } => kappa,
            _ => 0.0,
        };
        if gh <= 0.0 || gc + kappa <= 0.0 {
            return Err(LqmkvError::InadmissibleAdjoint(format!(
                "adjoint kernel rates ({gc}, {gh}) must be positive on infinite horizon"
            )));
        }
        if coeffs.channels_constant() {
            // E[F_s] = m_inf + (F_0 - m_inf) e^{-kappa s}; the exponential
            // integrals of the mean and the centered loading are explicit.
            let m_inf = factor.stationary_mean().unwrap_or(factor.initial);
            let (v_const, v_load) = coeffs.theta_mean_parts(0.0);
            let b_theta = coeffs.theta_loading_at(0.0)[0];
            let w_y = -b_theta / (gc + kappa);
            let base = -(v_const[0] + v_load[0] * m_inf) / gh;
            let dec = -v_load[0] * (factor.initial - m_inf) / (gh + kappa);
            for (i, t) in grid.times().enumerate() {
                mean_y[i] = Col::from_element(1, base + dec * (-kappa * t).exp());
                y_loading[i] = Col::from_element(1, w_y);
            }
        } else {
            let w_hat = KERNEL_DECAY / gh;
            let w_cen = KERNEL_DECAY / (gc + kappa);
            for (i, t) in grid.times().enumerate() {
                let mean = -adaptive_simpson(
                    &|s| (-gh * (s - t)).exp() * coeffs.theta_mean_at(s)[0],
                    t,
                    t + w_hat,
                    QUAD_TOL,
                );
                mean_y[i] = Col::from_element(1, mean);
                let loading = -adaptive_simpson(
                    &|s| {
                        (-gc * (s - t)).exp()
                            * factor.cond_mean_affine(t, s).1
                            * coeffs.theta_loading_at(s)[0]
                    },
                    t,
                    t + w_cen,
                    QUAD_TOL,
                );
                y_loading[i] = Col::from_element(1, loading);
            }
        }
    }

    Ok(AdjointSolution {
        grid: grid.clone(),
        infinite: !p.is_finite_horizon(),
        mean_y,
        y_loading,
        r: vec![0.0; grid.len()],
        r_tail_bound: None,
        y_integrable: integrable,
        z,
    })
}

/// The factor's Brownian must not drive the state: its index must carry zero
/// state/control diffusion loadings and a deterministic diffusion intercept.
fn check_factor_decoupled(p: &Problem, factor: &FactorModel, grid: &TimeGrid) -> Result<()> {
    let i = factor.noise_index;
    let dy = &p.dynamics;
    let loaded = dy.d[i].sup_norm_on(grid) != 0.0
        || dy.d_tilde[i].sup_norm_on(grid) != 0.0
        || dy.f[i].sup_norm_on(grid) != 0.0
        || dy.f_tilde[i].sup_norm_on(grid) != 0.0
        || !dy.gamma[i].is_zero();
    if loaded {
        return Err(LqmkvError::UnsupportedCoupling(format!(
            "factor noise index {i} also drives the state diffusion; the general coupled mean-field BSDE has no closed-form route"
        )));
    }
    Ok(())
}

/// Route dispatcher: deterministic channels use the ODE route, factor-affine
/// channels the kernel route.
pub fn solve_y(coeffs: &BsdeCoefficients<'_>, grid: &TimeGrid) -> Result<AdjointSolution> {
    if coeffs.theta_deterministic() {
        solve_y_deterministic(coeffs, grid)
    } else {
        let factor = coeffs.problem.factor.as_ref().ok_or_else(|| {
            LqmkvError::UnsupportedCoupling("stochastic channels without a factor model".into())
        })?;
        solve_y_factor(coeffs, factor, grid)
    }
}

/// Integrand of the discounted remainder integral at time `t`.
///
/// Collects the diffusion-intercept quadratic pushforward and the
/// intercept-adjoint cross term, and subtracts the completed-square variance
/// and mean-intercept corrections. The sign convention is fixed by requiring
/// the assembled value to equal the realized cost of the optimal control;
/// factor-quadratic expectations use the factor's closed-form variance.
pub fn h_integrand(
    problem: &Problem,
    riccati: &RiccatiSolution,
    adjoint: &AdjointSolution,
    gains: &GainPaths,
    t: f64,
) -> f64 {
    let dy = &problem.dynamics;
    let co = &problem.cost;
    let factor = problem.factor.as_ref();
    let k = riccati.k_at(t);
    let var_f = factor.map(|f| f.variance(t)).unwrap_or(0.0);
    let mean_y = adjoint.mean_y_at(t);
    let w_y = adjoint.y_loading_at(t);
    let h = hat_coefficients(problem, t).expect("t inside horizon");

    // E[gamma' K gamma] per noise, plus 2 E[beta' Y].
    let mut acc = 0.0;
    for i in 0..dy.n_noises() {
        let g_bar = dy.gamma[i].mean(t, factor);
        acc += (g_bar.transpose() * &k * &g_bar)[(0, 0)];
        let b_g = dy.gamma[i].loading.at(t);
        acc += (b_g.transpose() * &k * &b_g)[(0, 0)] * var_f;
    }
    let beta_bar = dy.beta.mean(t, factor);
    let b_beta = dy.beta.loading.at(t);
    acc += 2.0 * (beta_bar.dot(&mean_y) + b_beta.dot(&w_y) * var_f);

    // Centered intercept of the feedback: xi - E[xi] = b_xi (F - E[F]).
    let c = dy.c.at(t);
    let mut b_xi = co.h_lin.loading.at(t) + c.transpose() * &w_y;
    for i in 0..dy.n_noises() {
        b_xi += dy.f[i].at(t).transpose() * &k * dy.gamma[i].loading.at(t);
    }
    let s = gains.s_at(t);
    let s_inv_bxi = spd_solve_vec(&s, &b_xi, t, "S").expect("S positive definite");
    acc -= b_xi.dot(&s_inv_bxi) * var_f;

    // Mean intercept O and its completed square.
    let mut o = co.h_lin.mean(t, factor) + h.c_hat.transpose() * &mean_y;
    for i in 0..dy.n_noises() {
        o += h.f_hat[i].transpose() * &k * dy.gamma[i].mean(t, factor);
    }
    let s_hat = gains.s_hat_at(t);
    let shat_inv_o = spd_solve_vec(&s_hat, &o, t, "S^").expect("S^ positive definite");
    acc -= o.dot(&shat_inv_o);

    acc
}

/// Discounted remainder path: backward accumulation of the discounted
/// integral of `h` on the grid, with Simpson inside each interval.
///
/// Finite mode ends at zero; infinite mode truncates at the grid end and
/// reports the bound `e^{-rho (T - t0)} sup|h| / rho` on the discarded tail.
pub fn solve_r(
    problem: &Problem,
    h: &impl Fn(f64) -> f64,
    grid: &TimeGrid,
    tail_tol: f64,
) -> Result<(Vec<f64>, Option<f64>)> {
    let rho = problem.rho();
    let n = grid.n_steps();
    let mut r = vec![0.0; n + 1];
    let mut sup_h = 0.0f64;
    let mut h_right = h(grid.t(n));
    sup_h = sup_h.max(h_right.abs());
    for i in (0..n).rev() {
        let t0 = grid.t(i);
        let t1 = grid.t(i + 1);
        let dt = t1 - t0;
        let h_left = h(t0);
        let h_mid = h(t0 + 0.5 * dt);
        sup_h = sup_h.max(h_left.abs());
        // int_{t0}^{t1} e^{-rho (s - t0)} h(s) ds by Simpson on the weighted
        // integrand, then shift the accumulated remainder.
        let local = dt / 6.0
            * (h_left + 4.0 * (-rho * 0.5 * dt).exp() * h_mid + (-rho * dt).exp() * h_right);
        r[i] = (-rho * dt).exp() * r[i + 1] + local;
        h_right = h_left;
    }
    let tail = if problem.is_finite_horizon() {
        None
    } else {
        let bound = (-rho * (grid.t_end() - grid.t0())).exp() * sup_h / rho;
        if bound > tail_tol {
            return Err(LqmkvError::TruncationTooShort {
                bound,
                tol: tail_tol,
            });
        }
        Some(bound)
    };
    Ok((r, tail))
}

/// Solve the full adjoint stage: route-dispatched Y, the remainder integrand,
/// and the remainder path, written back into one `AdjointSolution`.
pub fn solve_adjoint(
    problem: &Problem,
    riccati: &RiccatiSolution,
    gains: &GainPaths,
    grid: &TimeGrid,
) -> Result<AdjointSolution> {
    let coeffs = bsde_coefficients(problem, riccati, gains);
    let mut adjoint = solve_y(&coeffs, grid)?;
    let h = |t: f64| h_integrand(problem, riccati, &adjoint, gains, t);
    let (r, tail) = solve_r(problem, &h, grid, 1e-6)?;
    adjoint.r = r;
    adjoint.r_tail_bound = tail;
    Ok(adjoint)
}

/// Default evaluation grid for the adjoint stage: the Riccati grid on finite
/// horizon, a truncation grid on infinite horizon.
pub fn adjoint_grid(problem: &Problem, riccati: &RiccatiSolution) -> TimeGrid {
    match &riccati.grid {
        Some(g) => g.clone(),
        None => {
            let t_end = default_truncation(problem.rho());
            TimeGrid::per_unit(t_end, INFINITE_STEPS_PER_UNIT)
        }
    }
}

/// Default truncation horizon for infinite-horizon evaluation.
pub fn default_truncation(rho: f64) -> f64 {
    (20.0 / rho).max(50.0)
}
