//! Inventory liquidation with trade crowding.
//!
//! A trader unwinds `x0` shares over `[0, T]` at speed `a_t`; the execution
//! price carries a temporary impact `eta * a_t` and a permanent impact
//! `nu * int E[a]` from the average trading of the crowd. Costs are a running
//! inventory penalty `q X^2`, the trading cost `a (S + eta a)`, and a
//! terminal penalty `p X_T^2`. After normalizing by `eta`, the problem is a
//! scalar mean-field LQ instance whose gains have hyperbolic closed forms.

use crate::error::{LqmkvError, Result};
use crate::model::{
    Cost, Dynamics, FactorAffine, FactorModel, Horizon, InitialLaw, MatPath, Problem, VecPath,
};
use crate::numerics::quad::adaptive_simpson;
use crate::report::CsvTable;
use crate::{Col, Mat};

/// Market and preference parameters; `eta` is the temporary-impact slope the
/// other coefficients get normalized by.
#[derive(Clone, Debug)]
pub struct LiquidationParams {
    pub x0: f64,
    pub horizon: f64,
    pub q: f64,
    pub p: f64,
    pub nu: f64,
    pub eta: f64,
    /// Unaffected price process.
    pub price: FactorModel,
}

impl LiquidationParams {
    pub fn validate(&self) -> Result<()> {
        if self.horizon <= 0.0 {
            return Err(LqmkvError::InvalidConfig("horizon must be positive".into()));
        }
        if self.q < 0.0 || self.p < 0.0 || self.nu < 0.0 || self.eta <= 0.0 {
            return Err(LqmkvError::InvalidConfig(
                "impact and penalty parameters must be nonnegative (eta positive)".into(),
            ));
        }
        Ok(())
    }

    /// Parameters with the temporary impact normalized to one; the control
    /// is unchanged by this scaling and costs pick up a factor `eta`.
    pub fn normalized(&self) -> LiquidationParams {
        let mut price = self.price.clone();
        price.initial /= self.eta;
        price.kind = match price.kind {
            crate::model::FactorKind::Deterministic => crate::model::FactorKind::Deterministic,
            crate::model::FactorKind::ArithmeticBrownian { sigma } => {
                crate::model::FactorKind::ArithmeticBrownian {
                    sigma: sigma / self.eta,
                }
            }
            // Multiplicative noise is scale-free.
            crate::model::FactorKind::GeometricBrownian { sigma } => {
                crate::model::FactorKind::GeometricBrownian { sigma }
            }
            crate::model::FactorKind::OrnsteinUhlenbeck { kappa, mu, sigma } => {
                crate::model::FactorKind::OrnsteinUhlenbeck {
                    kappa,
                    mu: mu / self.eta,
                    sigma: sigma / self.eta,
                }
            }
        };
        LiquidationParams {
            x0: self.x0,
            horizon: self.horizon,
            q: self.q / self.eta,
            p: self.p / self.eta,
            nu: self.nu / self.eta,
            eta: 1.0,
            price,
        }
    }

    /// Costs of the normalized problem scale back by this factor.
    pub fn value_scale(&self) -> f64 {
        self.eta
    }

    /// The generic problem bundle for the normalized parameters: scalar state
    /// (inventory) driven only by the control, stochastic linear-control
    /// weight from the unaffected price, and the crowding term as a
    /// mean-control/mean-state cross weight.
    pub fn to_problem(&self) -> Result<Problem> {
        let n = self.normalized();
        let mut dy = Dynamics::zero(1, 1, 1);
        dy.c = MatPath::scalar(1.0);
        let mut co = Cost::zero(1, 1);
        co.q = MatPath::scalar(n.q);
        co.n = MatPath::scalar(1.0);
        co.i_tilde = MatPath::scalar(n.nu);
        // H_t = (S_t - nu x0) / 2.
        co.h_lin = FactorAffine::new(
            VecPath::scalar(-0.5 * n.nu * n.x0),
            VecPath::scalar(0.5),
        );
        co.p = Some(Mat::from_element(1, 1, n.p));
        co.p_tilde = Some(Mat::zeros(1, 1));
        co.l = Some(FactorAffine::zero(1));
        co.rho = 0.0;
        Problem::new(
            dy,
            co,
            Horizon::Finite(n.horizon),
            InitialLaw::deterministic(Col::from_element(1, n.x0)),
            Some(n.price.clone()),
        )
    }
}

/// Hyperbolic ratio `sqrt(q) (sqrt(q) sinh(sqrt(q) tau) + p cosh(...)) /
/// (p sinh(...) + sqrt(q) cosh(...))`, evaluated in an overflow-free form
/// with the dominant exponential cancelled.
fn k_closed_form(tau: f64, terminal: f64, q: f64) -> f64 {
    if q == 0.0 {
        // First-order limit of the Riccati flow.
        return terminal / (terminal * tau + 1.0);
    }
    let sq = q.sqrt();
    let u = (-2.0 * sq * tau).exp();
    // sinh x = e^x (1 - u) / 2, cosh x = e^x (1 + u) / 2 with u = e^{-2x}.
    sq * (sq * (1.0 - u) + terminal * (1.0 + u)) / (terminal * (1.0 - u) + sq * (1.0 + u))
}

/// Closed form of the centered-gain Riccati solution.
pub fn liq_k(t: f64, p: f64, q: f64, horizon: f64) -> f64 {
    k_closed_form(horizon - t, p, q)
}

/// Closed form of the mean-gain Riccati solution shifted by the crowding
/// parameter: the same flow with terminal value `p + nu`.
pub fn liq_k_nu(t: f64, p: f64, q: f64, nu: f64, horizon: f64) -> f64 {
    k_closed_form(horizon - t, p + nu, q)
}

/// The two normalized decay kernels of the mean-gain flow; both take values
/// in (0, 1].
pub fn liq_omega_pi(tau: f64, p: f64, q: f64, nu: f64) -> (f64, f64) {
    let pn = p + nu;
    if q == 0.0 {
        return (1.0, 1.0 / (1.0 + pn * tau));
    }
    let sq = q.sqrt();
    let x = sq * tau;
    let u = (-2.0 * x).exp();
    let e = (-x).exp();
    let omega = 2.0 * pn * e / (sq * (1.0 - u) + pn * (1.0 + u));
    let pi = 2.0 * sq * e / (sq * (1.0 + u) + pn * (1.0 - u));
    (omega, pi)
}

/// `exp(-int_t^s K^nu)` expressed through the decay kernel.
fn decay_between(t: f64, s: f64, p: f64, q: f64, nu: f64, horizon: f64) -> f64 {
    let (_, pi_t) = liq_omega_pi(horizon - t, p, q, nu);
    let (_, pi_s) = liq_omega_pi(horizon - s, p, q, nu);
    pi_t / pi_s
}

/// Mean of the unaffected price shifted by the permanent-impact offset.
fn mean_price_shifted(params: &LiquidationParams, s: f64) -> f64 {
    params.price.mean(s) - params.nu * params.x0
}

/// Mean optimal inventory at time `t` (normalized parameters expected).
///
/// Dispatch: martingale price with `q > 0` uses the hyperbolic closed form;
/// martingale price with `q = 0` the linear-decay formula; anything else the
/// kernel-integral representation by quadrature.
pub fn liq_mean_inventory(t: f64, params: &LiquidationParams) -> f64 {
    let n = params.normalized();
    let (x0, q, p, nu, big_t) = (n.x0, n.q, n.p, n.nu, n.horizon);
    if n.price.is_martingale() {
        let s0 = n.price.initial;
        if q > 0.0 {
            let sq = q.sqrt();
            let (_, pi_t) = liq_omega_pi(big_t, p, q, nu);
            let k0_nu = liq_k_nu(0.0, p, q, nu, big_t);
            let alpha0 = -x0 * (k0_nu - 0.5 * nu * pi_t) - 0.5 * s0 * pi_t;
            return x0 * (sq * t).cosh() + alpha0 / sq * (sq * t).sinh();
        }
        let denom = 1.0 + (p + nu) * big_t;
        return x0 * (1.0 - (p + 0.5 * nu) * t / denom) - 0.5 * s0 * t / denom;
    }
    // General price: mean inventory as a decay of the initial holding plus
    // the accumulated price-pressure terms.
    let inner = |s: f64| -> f64 {
        let kernel = |r: f64| {
            let (om_s, _) = liq_omega_pi(big_t - s, p, q, nu);
            let (om_r, _) = liq_omega_pi(big_t - r, p, q, nu);
            liq_k_nu(s, p, q, nu, big_t) * om_s / om_r * mean_price_shifted(&n, r)
        };
        adaptive_simpson(&kernel, s, big_t, 1e-11) - mean_price_shifted(&n, s)
    };
    let outer = |s: f64| decay_between(s, t, p, q, nu, big_t) * inner(s);
    x0 * decay_between(0.0, t, p, q, nu, big_t) + 0.5 * adaptive_simpson(&outer, 0.0, t, 1e-10)
}

/// Optimal trading speed at `(t, x)` given the current unaffected price
/// (normalized parameters expected). Conditional price means come from the
/// price model's kernel; the deterministic crowding corrections are
/// evaluated term by term with adaptive quadrature.
pub fn liq_optimal_control(t: f64, x: f64, s0_t: f64, params: &LiquidationParams) -> f64 {
    let n = params.normalized();
    let (x0, q, p, nu, big_t) = (n.x0, n.q, n.p, n.nu, n.horizon);
    let price = &n.price;
    let k_t = liq_k(t, p, q, big_t);
    let knu_t = liq_k_nu(t, p, q, nu, big_t);
    let (om0_t, _) = liq_omega_pi(big_t - t, p, q, 0.0);
    let (_, pinu_t) = liq_omega_pi(big_t - t, p, q, nu);

    // Expected-future-price incentive against the current price.
    let own_price = 0.5
        * (adaptive_simpson(
            &|s| {
                let (om0_s, _) = liq_omega_pi(big_t - s, p, q, 0.0);
                k_t * om0_t / om0_s * price.cond_mean(t, s, s0_t)
            },
            t,
            big_t,
            1e-11,
        ) - s0_t);

    // Deterministic crowding corrections.
    let term_init = x0 * 0.5 * nu * pinu_t;
    let ratio = |s: f64| -> f64 {
        let (_, pi_s) = liq_omega_pi(big_t - s, p, q, nu);
        pi_s / pinu_t
    };
    let (_, pinu_0) = liq_omega_pi(big_t, p, q, nu);
    let term_drag = -x0
        * (knu_t - k_t)
        * (pinu_0 / pinu_t
            + 0.5
                * nu
                * adaptive_simpson(
                    &|s| {
                        let (_, pi_s) = liq_omega_pi(big_t - s, p, q, nu);
                        ratio(s) * pi_s
                    },
                    0.0,
                    t,
                    1e-11,
                ));
    let mean_pressure = |s: f64| -> f64 {
        let inner = adaptive_simpson(
            &|r| {
                let (om_s, _) = liq_omega_pi(big_t - s, p, q, nu);
                let (om_r, _) = liq_omega_pi(big_t - r, p, q, nu);
                liq_k_nu(s, p, q, nu, big_t) * om_s / om_r * price.mean(r)
            },
            s,
            big_t,
            1e-11,
        );
        inner - price.mean(s)
    };
    let term_mean_hist = -0.5
        * (knu_t - k_t)
        * adaptive_simpson(&|s| ratio(s) * mean_pressure(s), 0.0, t, 1e-10);
    let term_mean_fut = 0.5
        * adaptive_simpson(
            &|s| {
                let (omnu_t, _) = liq_omega_pi(big_t - t, p, q, nu);
                let (omnu_s, _) = liq_omega_pi(big_t - s, p, q, nu);
                let (om0_s, _) = liq_omega_pi(big_t - s, p, q, 0.0);
                (knu_t * omnu_t / omnu_s - k_t * om0_t / om0_s) * price.mean(s)
            },
            t,
            big_t,
            1e-10,
        );

    -k_t * x + own_price + term_init + term_drag + term_mean_hist + term_mean_fut
}

/// Table of mean-inventory curves over a shared time grid, one column per
/// value of the swept parameter (crowding impact or inventory penalty).
pub fn figure_mean_inventory_table(
    base: &LiquidationParams,
    sweep_name: &str,
    sweep: &[f64],
    n_times: usize,
) -> CsvTable {
    let mut header = vec!["t".to_string()];
    for v in sweep {
        header.push(format!("mean_inventory_{sweep_name}_{v}"));
    }
    let mut table = CsvTable::new(header);
    for i in 0..n_times {
        let t = base.horizon * i as f64 / (n_times - 1) as f64;
        let mut row = vec![t];
        for &v in sweep {
            let mut params = base.clone();
            match sweep_name {
                "nu" => params.nu = v,
                "q" => params.q = v,
                other => panic!("unknown sweep parameter {other}"),
            }
            row.push(liq_mean_inventory(t, &params));
        }
        table.push_row(row);
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FactorKind;
    use approx::assert_relative_eq;

    fn params(q: f64, nu: f64) -> LiquidationParams {
        LiquidationParams {
            x0: 30.0,
            horizon: 2.0,
            q,
            p: 10.0,
            nu,
            eta: 1.0,
            price: FactorModel::new(FactorKind::ArithmeticBrownian { sigma: 1.0 }, 10.0, 0),
        }
    }

    #[test]
    fn gain_terminal_values() {
        // At t = T the flows sit at their terminal data.
        assert_relative_eq!(liq_k(2.0, 10.0, 1.0, 2.0), 10.0, max_relative = 1e-14);
        assert_relative_eq!(liq_k_nu(2.0, 10.0, 1.0, 1.0, 2.0), 11.0, max_relative = 1e-14);
    }

    #[test]
    fn gain_matches_independent_high_precision_value() {
        // Independent evaluation of the hyperbolic ratio at tau = 2 with
        // p + nu = 11, q = 1: (sinh 2 + 11 cosh 2) / (11 sinh 2 + cosh 2).
        let sinh2 = 2.0f64.sinh();
        let cosh2 = 2.0f64.cosh();
        let expected = (sinh2 + 11.0 * cosh2) / (11.0 * sinh2 + cosh2);
        assert_relative_eq!(
            liq_k_nu(0.0, 10.0, 1.0, 1.0, 2.0),
            expected,
            max_relative = 1e-14
        );
        // Matches the five-decimal reference value 1.03099(9).
        assert!((liq_k_nu(0.0, 10.0, 1.0, 1.0, 2.0) - 1.03099).abs() < 1e-5);
    }

    #[test]
    fn gain_q_to_zero_limit() {
        // The hyperbolic form converges to the rational q = 0 formula.
        let with_tiny_q = liq_k_nu(0.7, 10.0, 1e-10, 1.0, 2.0);
        let at_zero = liq_k_nu(0.7, 10.0, 0.0, 1.0, 2.0);
        assert!((with_tiny_q - at_zero).abs() < 1e-6);
        assert_relative_eq!(at_zero, 11.0 / (11.0 * 1.3 + 1.0), max_relative = 1e-14);
    }

    #[test]
    fn gain_is_overflow_safe_for_stiff_penalties() {
        let v = liq_k(0.0, 1e6, 900.0, 40.0);
        assert!(v.is_finite());
        // Far from the terminal time the gain forgets the penalty:
        // K ~ sqrt(q) tanh-like plateau at sqrt(q) = 30.
        assert_relative_eq!(v, 30.0, max_relative = 1e-9);
    }

    #[test]
    fn kernels_at_zero_lag_are_one() {
        let (om, pi) = liq_omega_pi(0.0, 10.0, 1.0, 1.0);
        assert_eq!(om, 1.0);
        assert_eq!(pi, 1.0);
    }

    #[test]
    fn kernel_value_and_monotonicity() {
        let (_, pi) = liq_omega_pi(2.0, 10.0, 1.0, 1.0);
        let expected = 1.0 / (2.0f64.cosh() + 11.0 * 2.0f64.sinh());
        assert_relative_eq!(pi, expected, max_relative = 1e-13);
        assert!((pi - 0.02291).abs() < 5e-6);
        let mut prev = f64::INFINITY;
        for i in 0..=40 {
            let tau = 2.0 * i as f64 / 40.0;
            let (om, pi) = liq_omega_pi(tau, 10.0, 1.0, 1.0);
            assert!(om > 0.0 && om <= 1.0 + 1e-15);
            assert!(pi > 0.0 && pi <= 1.0 + 1e-15);
            assert!(pi <= prev);
            prev = pi;
        }
    }

    #[test]
    fn decay_kernel_identity_by_quadrature() {
        // exp(-int_t^s K^nu) equals the kernel ratio.
        let (p, q, nu, big_t) = (10.0, 1.0, 1.0, 2.0);
        let (t, s) = (0.3, 1.4);
        let integral = adaptive_simpson(&|u| liq_k_nu(u, p, q, nu, big_t), t, s, 1e-12);
        assert!(((-integral).exp() - decay_between(t, s, p, q, nu, big_t)).abs() < 1e-10);
    }

    #[test]
    fn mean_inventory_reference_points() {
        let pr = params(1.0, 1.0);
        // Initial value is the initial holding.
        assert_relative_eq!(liq_mean_inventory(0.0, &pr), 30.0, max_relative = 1e-12);
        // The closed-form terminal mean for these parameters is 1.518...
        let e_t = liq_mean_inventory(2.0, &pr);
        assert!((e_t - 1.52).abs() < 0.01, "E(T) = {e_t}");
    }

    #[test]
    fn mean_inventory_zero_q_linear_decay() {
        let pr = params(0.0, 1.0);
        // Independent evaluation of the linear-decay formula at t = 1:
        // 30 (1 - 10.5 / 23) - 5 / 23.
        let expected = 30.0 * (1.0 - 10.5 / 23.0) - 5.0 / 23.0;
        assert_relative_eq!(liq_mean_inventory(1.0, &pr), expected, max_relative = 1e-12);
        // Quadrature route agrees with the dispatch formula.
        let mut general = pr.clone();
        general.price = FactorModel::new(
            FactorKind::OrnsteinUhlenbeck {
                kappa: 1e-12,
                mu: 10.0,
                sigma: 0.0,
            },
            10.0,
            0,
        );
        // (kappa ~ 0 keeps the mean path constant like the martingale case)
        let via_quadrature = liq_mean_inventory(1.0, &general);
        assert!((via_quadrature - expected).abs() < 1e-6);
    }

    #[test]
    fn quadrature_route_matches_closed_form_for_martingale_price() {
        let pr = params(1.0, 1.0);
        let mut forced_general = pr.clone();
        forced_general.price = FactorModel::new(
            FactorKind::OrnsteinUhlenbeck {
                kappa: 1e-12,
                mu: 10.0,
                sigma: 0.0,
            },
            10.0,
            0,
        );
        for &t in &[0.5, 1.0, 1.7, 2.0] {
            let closed = liq_mean_inventory(t, &pr);
            let quad = liq_mean_inventory(t, &forced_general);
            assert!((closed - quad).abs() < 1e-6, "t={t}: {closed} vs {quad}");
        }
    }

    #[test]
    fn control_reduces_without_crowding_for_martingale_price() {
        // nu = 0 and a martingale price: speed is the inventory tracker plus
        // the price-discount term.
        let pr = params(1.0, 0.0);
        let (t, x, s0) = (0.6, 12.0, 10.0);
        let k_t = liq_k(t, 10.0, 1.0, 2.0);
        let (_, pi0) = liq_omega_pi(2.0 - t, 10.0, 1.0, 0.0);
        let expected = -k_t * x - 0.5 * s0 * pi0;
        assert_relative_eq!(
            liq_optimal_control(t, x, s0, &pr),
            expected,
            max_relative = 1e-8
        );
    }

    #[test]
    fn control_at_time_zero_matches_mean_slope() {
        // d/dt of the mean inventory at zero equals the (deterministic)
        // initial control.
        let pr = params(1.0, 1.0);
        let a0 = liq_optimal_control(0.0, 30.0, 10.0, &pr);
        let dt = 1e-6;
        let slope = (liq_mean_inventory(dt, &pr) - liq_mean_inventory(0.0, &pr)) / dt;
        assert!((a0 - slope).abs() < 1e-4, "a0 = {a0}, slope = {slope}");
        // Two independent routes give -30.70 for this parameter set.
        assert!((a0 - (-30.701)).abs() < 1e-3, "a0 = {a0}");
    }

    #[test]
    fn eta_normalization_keeps_the_control_invariant() {
        let mut pr = params(1.0, 1.0);
        pr.eta = 2.0;
        pr.q = 2.0;
        pr.p = 20.0;
        pr.nu = 2.0;
        pr.price = FactorModel::new(FactorKind::ArithmeticBrownian { sigma: 2.0 }, 20.0, 0);
        // Normalized problem equals the eta = 1 instance.
        let reference = params(1.0, 1.0);
        for &t in &[0.0, 0.9, 1.8] {
            assert_relative_eq!(
                liq_mean_inventory(t, &pr),
                liq_mean_inventory(t, &reference),
                max_relative = 1e-12
            );
        }
    }
}
