//! Assembly of the optimal feedback law, the value of the problem, and the
//! deterministic ODE for the mean of the optimally controlled state.

use crate::bsde::AdjointSolution;
use crate::error::{LqmkvError, Result};
use crate::grid::TimeGrid;
use crate::linalg::{spd_solve, spd_solve_vec};
use crate::model::{hat_coefficients, FactorModel, Problem};
use crate::numerics::interp::cubic4_weights;
use crate::report::{mat_columns, push_mat, CsvTable};
use crate::riccati::RiccatiSolution;
use crate::{Col, Mat};

/// Control-weight and gain paths derived from the Riccati solution: the
/// centered weight `S = N + F' K F`, the mean weight `S^` built from the hat
/// coefficients, the cross gains `U`, `V`, and the solved products
/// `S^{-1} U`, `S^^{-1} V`.
#[derive(Clone, Debug)]
pub struct GainPaths {
    pub grid: Option<TimeGrid>,
    pub s: Vec<Mat>,
    pub s_hat: Vec<Mat>,
    pub u: Vec<Mat>,
    pub v: Vec<Mat>,
    pub s_inv_u: Vec<Mat>,
    pub shat_inv_v: Vec<Mat>,
}

/// Build the gain paths on the Riccati grid (or as stationary matrices).
///
/// Errors with a degenerate-gain diagnostic when either control weight loses
/// positive definiteness.
pub fn gain_paths(problem: &Problem, riccati: &RiccatiSolution) -> Result<GainPaths> {
    let dy = &problem.dynamics;
    let times: Vec<f64> = match &riccati.grid {
        Some(g) => g.times().collect(),
        None => vec![0.0],
    };
    let mut s_v = Vec::with_capacity(times.len());
    let mut sh_v = Vec::with_capacity(times.len());
    let mut u_v = Vec::with_capacity(times.len());
    let mut v_v = Vec::with_capacity(times.len());
    let mut siu_v = Vec::with_capacity(times.len());
    let mut shv_v = Vec::with_capacity(times.len());
    for (i, &t) in times.iter().enumerate() {
        let k = &riccati.k[i];
        let lambda = &riccati.lambda[i];
        let c = dy.c.at(t);
        let mut s = problem.cost.n.at(t);
        let mut u = problem.cost.i.at(t) + c.transpose() * k;
        for j in 0..dy.n_noises() {
            let f_j = dy.f[j].at(t);
            let d_j = dy.d[j].at(t);
            s += f_j.transpose() * k * &f_j;
            u += f_j.transpose() * k * &d_j;
        }
        let h = hat_coefficients(problem, t)?;
        let mut s_hat = h.n_hat.clone();
        let mut v = h.i_hat.clone() + h.c_hat.transpose() * lambda;
        for j in 0..dy.n_noises() {
            s_hat += h.f_hat[j].transpose() * k * &h.f_hat[j];
            v += h.f_hat[j].transpose() * k * &h.d_hat[j];
        }
        let s_inv_u = spd_solve(&s, &u, t, "S")?;
        let shat_inv_v = spd_solve(&s_hat, &v, t, "S^")?;
        s_v.push(s);
        sh_v.push(s_hat);
        u_v.push(u);
        v_v.push(v);
        siu_v.push(s_inv_u);
        shv_v.push(shat_inv_v);
    }
    Ok(GainPaths {
        grid: riccati.grid.clone(),
        s: s_v,
        s_hat: sh_v,
        u: u_v,
        v: v_v,
        s_inv_u: siu_v,
        shat_inv_v: shv_v,
    })
}

impl GainPaths {
    fn cubic(&self, values: &[Mat], t: f64) -> Mat {
        match &self.grid {
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

    pub fn s_at(&self, t: f64) -> Mat {
        self.cubic(&self.s, t)
    }

    pub fn s_hat_at(&self, t: f64) -> Mat {
        self.cubic(&self.s_hat, t)
    }

    pub fn u_at(&self, t: f64) -> Mat {
        self.cubic(&self.u, t)
    }

    pub fn v_at(&self, t: f64) -> Mat {
        self.cubic(&self.v, t)
    }

    pub fn s_inv_u_at(&self, t: f64) -> Mat {
        self.cubic(&self.s_inv_u, t)
    }

    pub fn shat_inv_v_at(&self, t: f64) -> Mat {
        self.cubic(&self.shat_inv_v, t)
    }

    /// Stationary gains (infinite mode) for the admissibility validator.
    pub fn stationary(&self) -> Option<crate::model::StationaryGains> {
        if self.grid.is_none() {
            Some(crate::model::StationaryGains {
                s_inv_u: self.s_inv_u[0].clone(),
                shat_inv_v: self.shat_inv_v[0].clone(),
            })
        } else {
            None
        }
    }
}

/// The assembled optimal feedback law
/// `a(t, x, xbar, F) = -S^{-1}U (x - xbar) - S^^{-1}(V xbar + O)
///                     - S^{-1} b_xi (F - E[F])`,
/// with gains linearly interpolated between grid points at evaluation time.
#[derive(Clone, Debug)]
pub struct FeedbackLaw {
    pub gains: GainPaths,
    /// Grid carrying the intercept paths (O, xi) — the adjoint grid.
    pub coeff_grid: TimeGrid,
    pub infinite: bool,
    pub o: Vec<Col>,
    pub xi_mean: Vec<Col>,
    pub xi_loading: Vec<Col>,
    pub shat_inv_o: Vec<Col>,
    pub s_inv_xi_loading: Vec<Col>,
    pub factor: Option<FactorModel>,
}

/// Assemble the feedback law from the solved Riccati gains and adjoint.
pub fn feedback_coefficients(
    problem: &Problem,
    riccati: &RiccatiSolution,
    adjoint: &AdjointSolution,
) -> Result<FeedbackLaw> {
    let gains = gain_paths(problem, riccati)?;
    let dy = &problem.dynamics;
    let factor = problem.factor.clone();
    let grid = adjoint.grid.clone();
    let n_pts = grid.len();
    let mut o_v = Vec::with_capacity(n_pts);
    let mut xi_mean_v = Vec::with_capacity(n_pts);
    let mut xi_load_v = Vec::with_capacity(n_pts);
    let mut shat_inv_o_v = Vec::with_capacity(n_pts);
    let mut s_inv_bxi_v = Vec::with_capacity(n_pts);
    for (i, t) in grid.times().enumerate() {
        let k = riccati.k_at(t);
        let h = hat_coefficients(problem, t)?;
        let c = dy.c.at(t);
        let mean_y = &adjoint.mean_y[i];
        let w_y = &adjoint.y_loading[i];
        let h_bar = problem.cost.h_lin.mean(t, factor.as_ref());
        let b_h = problem.cost.h_lin.loading.at(t);

        let mut o = h_bar.clone() + h.c_hat.transpose() * mean_y;
        let mut xi_mean = h_bar + c.transpose() * mean_y;
        let mut b_xi = b_h + c.transpose() * w_y;
        for j in 0..dy.n_noises() {
            let g_bar = dy.gamma[j].mean(t, factor.as_ref());
            let b_g = dy.gamma[j].loading.at(t);
            let kg = &k * &g_bar;
            o += h.f_hat[j].transpose() * &kg;
            xi_mean += dy.f[j].at(t).transpose() * &kg;
            b_xi += dy.f[j].at(t).transpose() * &k * &b_g;
        }
        let shat_inv_o = spd_solve_vec(&gains.s_hat_at(t), &o, t, "S^")?;
        let s_inv_bxi = spd_solve_vec(&gains.s_at(t), &b_xi, t, "S")?;
        o_v.push(o);
        xi_mean_v.push(xi_mean);
        xi_load_v.push(b_xi);
        shat_inv_o_v.push(shat_inv_o);
        s_inv_bxi_v.push(s_inv_bxi);
    }
    Ok(FeedbackLaw {
        gains,
        coeff_grid: grid,
        infinite: adjoint.infinite,
        o: o_v,
        xi_mean: xi_mean_v,
        xi_loading: xi_load_v,
        shat_inv_o: shat_inv_o_v,
        s_inv_xi_loading: s_inv_bxi_v,
        factor,
    })
}

impl FeedbackLaw {
    pub fn control_dim(&self) -> usize {
        self.o[0].len()
    }

    pub fn state_dim(&self) -> usize {
        self.gains.s_inv_u[0].ncols()
    }

    fn locate_gain(&self, t: f64) -> Option<(usize, f64)> {
        self.gains.grid.as_ref().map(|g| g.locate(t.clamp(g.t0(), g.t_end())))
    }

    fn locate_coeff(&self, t: f64) -> (usize, f64) {
        let g = &self.coeff_grid;
        g.locate(t.clamp(g.t0(), g.t_end()))
    }

    /// Evaluate the control into `out`, reusing `tmp` (a state-dim buffer)
    /// as scratch; allocation-free on the hot path.
    pub fn control_into(&self, t: f64, x: &Col, xbar: &Col, factor_state: f64, tmp: &mut Col, out: &mut Col) {
        tmp.copy_from(x);
        *tmp -= xbar;
        match self.locate_gain(t) {
            Some((i, w)) => {
                out.gemv(-(1.0 - w), &self.gains.s_inv_u[i], tmp, 0.0);
                out.gemv(-w, &self.gains.s_inv_u[i + 1], tmp, 1.0);
                out.gemv(-(1.0 - w), &self.gains.shat_inv_v[i], xbar, 1.0);
                out.gemv(-w, &self.gains.shat_inv_v[i + 1], xbar, 1.0);
            }
            None => {
                out.gemv(-1.0, &self.gains.s_inv_u[0], tmp, 0.0);
                out.gemv(-1.0, &self.gains.shat_inv_v[0], xbar, 1.0);
            }
        }
        let (j, v) = self.locate_coeff(t);
        out.axpy(-(1.0 - v), &self.shat_inv_o[j], 1.0);
        out.axpy(-v, &self.shat_inv_o[j + 1], 1.0);
        if let Some(f) = &self.factor {
            let centered = factor_state - f.mean(t);
            if centered != 0.0 {
                out.axpy(-(1.0 - v) * centered, &self.s_inv_xi_loading[j], 1.0);
                out.axpy(-v * centered, &self.s_inv_xi_loading[j + 1], 1.0);
            }
        }
    }

    /// Mean control given the mean state: `-S^^{-1}(V xbar + O)`.
    pub fn mean_control_into(&self, t: f64, xbar: &Col, out: &mut Col) {
        match self.locate_gain(t) {
            Some((i, w)) => {
                out.gemv(-(1.0 - w), &self.gains.shat_inv_v[i], xbar, 0.0);
                out.gemv(-w, &self.gains.shat_inv_v[i + 1], xbar, 1.0);
            }
            None => {
                out.gemv(-1.0, &self.gains.shat_inv_v[0], xbar, 0.0);
            }
        }
        let (j, v) = self.locate_coeff(t);
        out.axpy(-(1.0 - v), &self.shat_inv_o[j], 1.0);
        out.axpy(-v, &self.shat_inv_o[j + 1], 1.0);
    }

    /// O path value with 4-point interpolation (solver-accuracy evaluation).
    pub fn o_at(&self, t: f64) -> Col {
        let g = &self.coeff_grid;
        let (idx, w) = cubic4_weights(g, t.clamp(g.t0(), g.t_end()));
        let mut out = &self.o[idx[0]] * w[0];
        for k in 1..4 {
            out += &self.o[idx[k]] * w[k];
        }
        out
    }

    fn shat_inv_o_cubic(&self, t: f64) -> Col {
        let g = &self.coeff_grid;
        let (idx, w) = cubic4_weights(g, t.clamp(g.t0(), g.t_end()));
        let mut out = &self.shat_inv_o[idx[0]] * w[0];
        for k in 1..4 {
            out += &self.shat_inv_o[idx[k]] * w[k];
        }
        out
    }

    /// Mean of the feedback intercept, `E[xi_t]`.
    pub fn xi_mean_at(&self, t: f64) -> Col {
        let g = &self.coeff_grid;
        let (idx, w) = cubic4_weights(g, t.clamp(g.t0(), g.t_end()));
        let mut out = &self.xi_mean[idx[0]] * w[0];
        for k in 1..4 {
            out += &self.xi_mean[idx[k]] * w[k];
        }
        out
    }

    /// CSV dump of (t, gain matrices, O, E[xi]).
    pub fn to_csv(&self, footer: Option<&str>) -> String {
        let m = self.control_dim();
        let d = self.state_dim();
        let mut header = vec!["t".to_string()];
        header.extend(mat_columns("s_inv_u", m, d));
        header.extend(mat_columns("shat_inv_v", m, d));
        header.extend((0..m).map(|i| format!("o_{i}")));
        header.extend((0..m).map(|i| format!("xi_mean_{i}")));
        let mut table = CsvTable::new(header);
        for (i, t) in self.coeff_grid.times().enumerate() {
            let mut row = vec![t];
            push_mat(&mut row, &self.gains.s_inv_u_at(t));
            push_mat(&mut row, &self.gains.shat_inv_v_at(t));
            row.extend(self.o[i].iter().copied());
            row.extend(self.xi_mean[i].iter().copied());
            table.push_row(row);
        }
        table.render(footer)
    }
}

/// Evaluate the optimal control at `(t, x, xbar, F)`.
pub fn optimal_control(law: &FeedbackLaw, t: f64, x: &Col, xbar: &Col, factor_state: f64) -> Col {
    let mut out = Col::zeros(law.control_dim());
    let mut tmp = Col::zeros(x.len());
    law.control_into(t, x, xbar, factor_state, &mut tmp, &mut out);
    out
}

/// Value of the problem at time zero:
/// `trace(K_0 Cov(X_0)) + E[X_0]' Lambda_0 E[X_0] + 2 E[Y_0' X_0] + R_0`.
///
/// `E[Y_0' X_0]` factorizes as `E[Y_0]' E[X_0]` plus the declared covariance
/// (zero unless the scenario overrides it; the initial state is independent
/// of the factor information by construction).
pub fn value(problem: &Problem, riccati: &RiccatiSolution, adjoint: &AdjointSolution) -> f64 {
    let k0 = riccati.k_at(0.0);
    let l0 = riccati.lambda_at(0.0);
    let x0 = &problem.initial.mean;
    let cov = &problem.initial.cov;
    let mean_y0 = adjoint.mean_y_at(0.0);
    let mut v = (&k0 * cov).trace();
    v += (x0.transpose() * &l0 * x0)[(0, 0)];
    v += 2.0 * (mean_y0.dot(x0) + problem.initial.adjoint_state_cov);
    v += adjoint.r_at(0.0);
    v
}

/// Mean path of the optimally controlled state: forward RK4 of
/// `d xbar/dt = (B^ - C^ S^^{-1} V) xbar + (E[beta] - C^ S^^{-1} O)`.
pub fn mean_state_ode(
    problem: &Problem,
    law: &FeedbackLaw,
    grid: &TimeGrid,
    xbar0: &Col,
) -> Result<Vec<Col>> {
    if !problem.in_horizon(grid.t_end()) {
        return Err(LqmkvError::OutOfHorizon { t: grid.t_end() });
    }
    let factor = problem.factor.as_ref();
    let rhs = |t: f64, xbar: &Col| -> Col {
        let h = hat_coefficients(problem, t).expect("t inside horizon");
        let beta_bar = problem.dynamics.beta.mean(t, factor);
        let mut out = beta_bar + &h.b_hat * xbar;
        out -= &h.c_hat * (law.gains.shat_inv_v_at(t) * xbar);
        out -= &h.c_hat * law.shat_inv_o_cubic(t);
        out
    };
    let mut path = vec![Col::zeros(xbar0.len()); grid.len()];
    path[0] = xbar0.clone();
    for i in 0..grid.n_steps() {
        let (t0, t1) = (grid.t(i), grid.t(i + 1));
        let h = t1 - t0;
        let x = &path[i];
        let k1 = rhs(t0, x);
        let k2 = rhs(t0 + 0.5 * h, &(x + &k1 * (0.5 * h)));
        let k3 = rhs(t0 + 0.5 * h, &(x + &k2 * (0.5 * h)));
        let k4 = rhs(t1, &(x + &k3 * h));
        path[i + 1] = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    Ok(path)
}
