//! Exhaustible-resource production with substitutable goods.
//!
//! A representative producer extracts at rate `a_t` from a reserve with
//! multiplicative noise; the received price is an exogenous process lowered
//! by the producer's own quantity (`delta`) and the average quantity of the
//! crowd (`epsilon`). Profit maximization with a production-variation
//! penalty `eta` and an extraction cost slope `c` is an infinite-horizon
//! scalar mean-field LQ problem whose stationary gains solve a pair of
//! quadratic equations with explicit positive roots.

use crate::error::{LqmkvError, Result};
use crate::model::{
    Cost, Dynamics, FactorAffine, FactorKind, FactorModel, Horizon, InitialLaw, MatPath, Problem,
    VecPath,
};
use crate::numerics::quad::adaptive_simpson;
use crate::Col;

#[derive(Clone, Debug)]
pub struct ResourceParams {
    /// Initial reserve level.
    pub x0: f64,
    /// Reserve volatility (noise proportional to the current level).
    pub sigma: f64,
    /// Own-quantity inverse-demand slope.
    pub delta: f64,
    /// Crowd-quantity inverse-demand slope (product substitutability).
    pub epsilon: f64,
    /// Production-variation penalty.
    pub eta: f64,
    /// Extraction cost slope.
    pub c: f64,
    /// Discount rate; must dominate the squared volatility.
    pub rho: f64,
    /// Exogenous price process, driven by its own independent noise.
    pub price: FactorModel,
}

impl ResourceParams {
    pub fn validate(&self) -> Result<()> {
        if self.rho <= self.sigma * self.sigma {
            return Err(LqmkvError::InvalidConfig(
                "discount must exceed the squared reserve volatility".into(),
            ));
        }
        if self.delta <= 0.0 || self.epsilon <= 0.0 || self.c <= 0.0 || self.eta < 0.0 {
            return Err(LqmkvError::InvalidConfig(
                "demand slopes and cost must be positive, variation penalty nonnegative".into(),
            ));
        }
        if !self.price.square_integrable(self.rho, true) {
            return Err(LqmkvError::InvalidConfig(
                "price process is not discounted square-integrable".into(),
            ));
        }
        Ok(())
    }

    /// The generic problem bundle: scalar reserve with multiplicative noise
    /// on index 0, the price factor on an independent index 1, the crowd
    /// substitutability as a mean-control weight, and the extraction cost as
    /// a control/state cross weight.
    pub fn to_problem(&self) -> Result<Problem> {
        self.validate()?;
        let mut dy = Dynamics::zero(1, 1, 2);
        dy.c = MatPath::scalar(-1.0);
        dy.d[0] = MatPath::scalar(self.sigma);
        let mut co = Cost::zero(1, 1);
        co.n = MatPath::scalar(self.delta + self.eta);
        co.n_tilde = MatPath::scalar(self.epsilon - self.eta);
        co.i = MatPath::scalar(-0.5 * self.c);
        // H_t = (c x0 - P_t) / 2.
        co.h_lin = FactorAffine::new(
            VecPath::scalar(0.5 * self.c * self.x0),
            VecPath::scalar(-0.5),
        );
        co.rho = self.rho;
        let mut price = self.price.clone();
        price.noise_index = 1;
        Problem::new(
            dy,
            co,
            Horizon::Infinite,
            InitialLaw::deterministic(Col::from_element(1, self.x0)),
            Some(price),
        )
    }
}

/// Normalized stationary gains `(K_eta, Lambda_eps)`: the positive roots of
/// the stationary gain equations, divided by the respective demand slopes.
pub fn res_gains(params: &ResourceParams) -> Result<(f64, f64)> {
    params.validate()?;
    let a = params.rho - params.sigma * params.sigma;
    let k_eta = 0.5
        * (-a + (a * a + 2.0 * params.c * a / (params.delta + params.eta)).sqrt());
    let k = k_eta * (params.delta + params.eta) - 0.5 * params.c;
    let s2k = 2.0 * params.sigma * params.sigma * k;
    let lambda_eps = 0.5
        * (-params.rho
            + (params.rho * params.rho
                + 2.0 * (params.rho * params.c + s2k) / (params.delta + params.epsilon))
                .sqrt());
    Ok((k_eta, lambda_eps))
}

/// Raw stationary gains `(K, Lambda)` behind the normalized pair.
pub fn res_raw_gains(params: &ResourceParams) -> Result<(f64, f64)> {
    let (k_eta, lambda_eps) = res_gains(params)?;
    Ok((
        k_eta * (params.delta + params.eta) - 0.5 * params.c,
        lambda_eps * (params.delta + params.epsilon) - 0.5 * params.c,
    ))
}

/// Inner discounted price integral `int_s^inf rate e^{-(rho+rate)(u-s)}
/// E[P_u] du`, explicit for the shipped price kernels (exponential mean
/// relaxation at speed kappa, zero for martingales).
fn discounted_future_mean_price(params: &ResourceParams, s: f64, rate: f64) -> f64 {
    let kappa = match params.price.kind {
        FactorKind::OrnsteinUhlenbeck { kappa, .. } => kappa,
        _ => 0.0,
    };
    let m_inf = params.price.stationary_mean().unwrap_or(params.price.initial);
    let p_s = params.price.mean(s);
    rate * (m_inf / (params.rho + rate) + (p_s - m_inf) / (params.rho + rate + kappa))
}

/// Mean optimal reserve at time `t`: exponential decay toward the stationary
/// level plus the accumulated mean price pressure, with the outer integral
/// by adaptive quadrature.
pub fn res_mean_reserve(t: f64, params: &ResourceParams) -> Result<f64> {
    let (_, lambda_eps) = res_gains(params)?;
    let rho = params.rho;
    let de = params.delta + params.epsilon;
    let decay = (-lambda_eps * t).exp();
    let mut v = params.x0 * decay;
    v += params.rho * params.c * params.x0 / (2.0 * de) * (1.0 - decay)
        / (lambda_eps * (rho + lambda_eps));
    let pressure = |s: f64| -> f64 {
        (-lambda_eps * (t - s)).exp()
            * (params.price.mean(s) - discounted_future_mean_price(params, s, lambda_eps))
    };
    v -= adaptive_simpson(&pressure, 0.0, t, 1e-10) / (2.0 * de);
    Ok(v)
}

/// Both algebraic forms of the stationary mean reserve: through the mean
/// gain, and through the normalized centered gain (they agree identically;
/// the level depends on the variation penalty but not on substitutability).
pub fn res_stationary_reserve_forms(params: &ResourceParams, pbar: f64) -> Result<(f64, f64)> {
    let (k_eta, lambda_eps) = res_gains(params)?;
    let rho = params.rho;
    let s2 = params.sigma * params.sigma;
    let via_lambda = rho * (params.c * params.x0 - pbar)
        / (2.0 * (params.delta + params.epsilon) * lambda_eps * (rho + lambda_eps));
    let via_k = (k_eta + rho - s2) / (k_eta + rho) * rho / (rho - s2)
        * (params.x0 - pbar / params.c);
    Ok((via_lambda, via_k))
}

/// Stationary mean reserve for a price with long-run mean `pbar`.
pub fn res_stationary_reserve(params: &ResourceParams, pbar: f64) -> Result<f64> {
    let (via_lambda, _) = res_stationary_reserve_forms(params, pbar)?;
    Ok(via_lambda)
}

/// Optimal extraction rate at `(t, x)` given the current price level.
///
/// The two price brackets are the centered price carried through the
/// centered-gain kernel and the mean price through the mean-gain kernel;
/// tail integrals are truncated at the kernel decay depth and evaluated by
/// adaptive quadrature.
pub fn res_optimal_control(t: f64, x: f64, p0_t: f64, params: &ResourceParams) -> Result<f64> {
    let (k_eta, lambda_eps) = res_gains(params)?;
    let rho = params.rho;
    let xbar = res_mean_reserve(t, params)?;
    let mut a = k_eta * (x - xbar) + lambda_eps * xbar;

    // Centered bracket: current price surprise net of its expected decay.
    let rate_c = rho + k_eta;
    let window_c = 30.0 / rate_c;
    let centered_tail = adaptive_simpson(
        &|s| {
            k_eta
                * (-rate_c * (s - t)).exp()
                * (params.price.cond_mean(t, s, p0_t) - params.price.mean(s))
        },
        t,
        t + window_c,
        1e-10,
    );
    a += ((p0_t - params.price.mean(t)) - centered_tail) / (2.0 * (params.delta + params.eta));

    // Mean bracket: mean price net of its discounted future average and the
    // stationary extraction-cost charge.
    let rate_m = rho + lambda_eps;
    let window_m = 30.0 / rate_m;
    let mean_tail = adaptive_simpson(
        &|s| lambda_eps * (-rate_m * (s - t)).exp() * params.price.mean(s),
        t,
        t + window_m,
        1e-10,
    );
    a += (params.price.mean(t) - mean_tail - params.c * params.x0 * rho / rate_m)
        / (2.0 * (params.delta + params.epsilon));
    Ok(a)
}
