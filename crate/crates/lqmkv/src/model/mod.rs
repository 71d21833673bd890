//! Problem data for linear-quadratic mean-field control: dynamics and cost
//! coefficient bundles, the exogenous factor abstraction behind random
//! coefficients, and validators for the admissibility assumptions.

mod assumptions;
mod factor;
mod paths;

pub use assumptions::{
    validate_finite_horizon, validate_infinite_horizon, AssumptionReport, ConditionVerdict,
    StationaryGains, Verdict,
};
pub use factor::{FactorKind, FactorModel};
pub use paths::{FactorAffine, MatPath, VecPath};

use crate::error::{LqmkvError, Result};
use crate::{Col, Mat};

/// Horizon of the control problem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Horizon {
    Finite(f64),
    Infinite,
}

impl Horizon {
    pub fn is_finite(&self) -> bool {
        matches!(self, Horizon::Finite(_))
    }

    pub fn terminal(&self) -> Option<f64> {
        match self {
            Horizon::Finite(t) => Some(*t),
            Horizon::Infinite => None,
        }
    }
}

/// Coefficients of the controlled mean-field SDE
/// `dX = (beta + B X + Bt E[X] + C a + Ct E[a]) dt
///      + sum_i (gamma_i + D_i X + Dt_i E[X] + F_i a + Ft_i E[a]) dW_i`.
///
/// `beta` and the `gamma_i` may be factor-affine; the matrix paths are
/// deterministic. One entry per Brownian index in the `per-noise` vectors.
#[derive(Clone, Debug)]
pub struct Dynamics {
    pub beta: FactorAffine,
    pub gamma: Vec<FactorAffine>,
    pub b: MatPath,
    pub b_tilde: MatPath,
    pub c: MatPath,
    pub c_tilde: MatPath,
    pub d: Vec<MatPath>,
    pub d_tilde: Vec<MatPath>,
    pub f: Vec<MatPath>,
    pub f_tilde: Vec<MatPath>,
}

impl Dynamics {
    /// All-zero dynamics with the given dimensions and noise count.
    pub fn zero(d: usize, m: usize, n_noises: usize) -> Self {
        Dynamics {
            beta: FactorAffine::zero(d),
            gamma: (0..n_noises).map(|_| FactorAffine::zero(d)).collect(),
            b: MatPath::zeros(d, d),
            b_tilde: MatPath::zeros(d, d),
            c: MatPath::zeros(d, m),
            c_tilde: MatPath::zeros(d, m),
            d: (0..n_noises).map(|_| MatPath::zeros(d, d)).collect(),
            d_tilde: (0..n_noises).map(|_| MatPath::zeros(d, d)).collect(),
            f: (0..n_noises).map(|_| MatPath::zeros(d, m)).collect(),
            f_tilde: (0..n_noises).map(|_| MatPath::zeros(d, m)).collect(),
        }
    }

    pub fn n_noises(&self) -> usize {
        self.gamma.len()
    }
}

/// Coefficients of the quadratic cost
/// `f = (x - xb)' Q (x - xb) + xb' (Q + Qt) xb + 2 a' I (x - xb)
///    + 2 ab' (I + It) xb + (a - ab)' N (a - ab) + ab' (N + Nt) ab
///    + 2 M' x + 2 H' a`,
/// with terminal `g = (x - xb)' P (x - xb) + xb' (P + Pt) xb + 2 L' x`
/// on finite horizon. `M`, `H` and `L` may be factor-affine.
#[derive(Clone, Debug)]
pub struct Cost {
    pub q: MatPath,
    pub q_tilde: MatPath,
    pub n: MatPath,
    pub n_tilde: MatPath,
    pub i: MatPath,
    pub i_tilde: MatPath,
    pub m_lin: FactorAffine,
    pub h_lin: FactorAffine,
    pub p: Option<Mat>,
    pub p_tilde: Option<Mat>,
    pub l: Option<FactorAffine>,
    pub rho: f64,
}

impl Cost {
    /// All-zero running cost with no terminal data and zero discount.
    pub fn zero(d: usize, m: usize) -> Self {
        Cost {
            q: MatPath::zeros(d, d),
            q_tilde: MatPath::zeros(d, d),
            n: MatPath::zeros(m, m),
            n_tilde: MatPath::zeros(m, m),
            i: MatPath::zeros(m, d),
            i_tilde: MatPath::zeros(m, d),
            m_lin: FactorAffine::zero(d),
            h_lin: FactorAffine::zero(m),
            p: None,
            p_tilde: None,
            l: None,
            rho: 0.0,
        }
    }
}

/// Square-integrable initial condition, given by its first two moments plus
/// an optional declared covariance between the initial adjoint value and the
/// initial state (zero by default: the initial state is independent of the
/// driving noises and the factor starts at a deterministic point).
#[derive(Clone, Debug)]
pub struct InitialLaw {
    pub mean: Col,
    pub cov: Mat,
    pub adjoint_state_cov: f64,
}

impl InitialLaw {
    pub fn deterministic(mean: Col) -> Self {
        let d = mean.len();
        InitialLaw {
            mean,
            cov: Mat::zeros(d, d),
            adjoint_state_cov: 0.0,
        }
    }

    pub fn gaussian(mean: Col, cov: Mat) -> Self {
        InitialLaw {
            mean,
            cov,
            adjoint_state_cov: 0.0,
        }
    }
}

/// Full problem bundle: dynamics, cost, horizon, initial law, and the optional
/// exogenous factor that feeds the random coefficient channels.
#[derive(Clone, Debug)]
pub struct Problem {
    pub dynamics: Dynamics,
    pub cost: Cost,
    pub horizon: Horizon,
    pub initial: InitialLaw,
    pub factor: Option<FactorModel>,
}

/// Summed plain+tilde coefficients at a fixed time.
#[derive(Clone, Debug)]
pub struct HatCoefficients {
    pub b_hat: Mat,
    pub c_hat: Mat,
    pub d_hat: Vec<Mat>,
    pub f_hat: Vec<Mat>,
    pub i_hat: Mat,
    pub n_hat: Mat,
    pub q_hat: Mat,
    pub p_hat: Option<Mat>,
}

impl Problem {
    pub fn new(
        dynamics: Dynamics,
        cost: Cost,
        horizon: Horizon,
        initial: InitialLaw,
        factor: Option<FactorModel>,
    ) -> Result<Self> {
        let p = Problem {
            dynamics,
            cost,
            horizon,
            initial,
            factor,
        };
        p.check_dims()?;
        Ok(p)
    }

    /// State dimension, control dimension, number of Brownian motions.
    pub fn dims(&self) -> (usize, usize, usize) {
        let (d, _) = self.dynamics.b.shape();
        let (_, m) = self.dynamics.c.shape();
        (d, m, self.dynamics.n_noises())
    }

    pub fn state_dim(&self) -> usize {
        self.dims().0
    }

    pub fn control_dim(&self) -> usize {
        self.dims().1
    }

    pub fn rho(&self) -> f64 {
        self.cost.rho
    }

    pub fn is_finite_horizon(&self) -> bool {
        self.horizon.is_finite()
    }

    pub fn terminal_time(&self) -> Option<f64> {
        self.horizon.terminal()
    }

    pub fn in_horizon(&self, t: f64) -> bool {
        if t < -1e-12 {
            return false;
        }
        match self.horizon {
            Horizon::Finite(tt) => t <= tt + 1e-12,
            Horizon::Infinite => true,
        }
    }

    fn check_dims(&self) -> Result<()> {
        let (d, m, n) = self.dims();
        let expect = |name: &str, got: (usize, usize), want: (usize, usize)| {
            if got == want {
                Ok(())
            } else {
                Err(LqmkvError::DimensionMismatch(format!(
                    "{name}: got {}x{}, want {}x{}",
                    got.0, got.1, want.0, want.1
                )))
            }
        };
        let dy = &self.dynamics;
        expect("B", dy.b.shape(), (d, d))?;
        expect("B~", dy.b_tilde.shape(), (d, d))?;
        expect("C", dy.c.shape(), (d, m))?;
        expect("C~", dy.c_tilde.shape(), (d, m))?;
        if dy.beta.dim() != d {
            return Err(LqmkvError::DimensionMismatch("beta".into()));
        }
        for (name, list, want) in [
            ("D", &dy.d, (d, d)),
            ("D~", &dy.d_tilde, (d, d)),
            ("F", &dy.f, (d, m)),
            ("F~", &dy.f_tilde, (d, m)),
        ] {
            if list.len() != n {
                return Err(LqmkvError::DimensionMismatch(format!(
                    "{name}: expected one entry per noise ({n})"
                )));
            }
            for p in list.iter() {
                expect(name, p.shape(), want)?;
            }
        }
        for g in &dy.gamma {
            if g.dim() != d {
                return Err(LqmkvError::DimensionMismatch("gamma".into()));
            }
        }
        let co = &self.cost;
        expect("Q", co.q.shape(), (d, d))?;
        expect("Q~", co.q_tilde.shape(), (d, d))?;
        expect("N", co.n.shape(), (m, m))?;
        expect("N~", co.n_tilde.shape(), (m, m))?;
        expect("I", co.i.shape(), (m, d))?;
        expect("I~", co.i_tilde.shape(), (m, d))?;
        if co.m_lin.dim() != d || co.h_lin.dim() != m {
            return Err(LqmkvError::DimensionMismatch("M/H".into()));
        }
        if self.initial.mean.len() != d || self.initial.cov.shape() != (d, d) {
            return Err(LqmkvError::DimensionMismatch("initial law".into()));
        }
        match self.horizon {
            Horizon::Finite(t) if t <= 0.0 => {
                return Err(LqmkvError::InvalidConfig("finite horizon must be > 0".into()))
            }
            Horizon::Finite(_) => {
                // Finite horizon <=> terminal data present.
                if self.cost.p.is_none() {
                    return Err(LqmkvError::InvalidConfig(
                        "finite horizon requires terminal quadratic weight P".into(),
                    ));
                }
            }
            Horizon::Infinite => {
                if self.cost.p.is_some() || self.cost.p_tilde.is_some() || self.cost.l.is_some() {
                    return Err(LqmkvError::InvalidConfig(
                        "infinite horizon excludes terminal data".into(),
                    ));
                }
                if self.cost.rho <= 0.0 {
                    return Err(LqmkvError::InvalidConfig(
                        "infinite horizon requires a strictly positive discount".into(),
                    ));
                }
            }
        }
        if let Some(f) = &self.factor {
            if f.noise_index >= n {
                return Err(LqmkvError::DimensionMismatch(format!(
                    "factor noise index {} out of range (n = {n})",
                    f.noise_index
                )));
            }
        } else {
            // Without a factor every affine channel must be deterministic.
            let channels_ok = dy.beta.is_deterministic()
                && dy.gamma.iter().all(|g| g.is_deterministic())
                && co.m_lin.is_deterministic()
                && co.h_lin.is_deterministic()
                && co.l.as_ref().map_or(true, |l| l.is_deterministic());
            if !channels_ok {
                return Err(LqmkvError::InvalidConfig(
                    "factor-loaded coefficient channels require a factor model".into(),
                ));
            }
        }
        Ok(())
    }

    /// Terminal matrix for the covariance Riccati gain (`P`, finite mode).
    pub fn terminal_k(&self) -> Mat {
        self.cost
            .p
            .clone()
            .unwrap_or_else(|| Mat::zeros(self.state_dim(), self.state_dim()))
    }

    /// Terminal matrix for the mean Riccati gain (`P + Pt`, finite mode).
    pub fn terminal_lambda(&self) -> Mat {
        let p = self.terminal_k();
        match &self.cost.p_tilde {
            Some(pt) => p + pt,
            None => p,
        }
    }

    /// Mean of a factor-affine channel at time `t`.
    pub fn channel_mean(&self, ch: &FactorAffine, t: f64) -> Col {
        ch.mean(t, self.factor.as_ref())
    }
}

/// Plain+tilde sums of every coefficient pair at time `t`.
///
/// Errors when `t` lies outside the horizon.
pub fn hat_coefficients(problem: &Problem, t: f64) -> Result<HatCoefficients> {
    if !problem.in_horizon(t) {
        return Err(LqmkvError::OutOfHorizon { t });
    }
    let dy = &problem.dynamics;
    let co = &problem.cost;
    let n = dy.n_noises();
    let p_hat = match (&co.p, &co.p_tilde) {
        (None, _) => None,
        (Some(p), None) => Some(p.clone()),
        (Some(p), Some(pt)) => Some(p + pt),
    };
    Ok(HatCoefficients {
        b_hat: dy.b.at(t) + dy.b_tilde.at(t),
        c_hat: dy.c.at(t) + dy.c_tilde.at(t),
        d_hat: (0..n).map(|i| dy.d[i].at(t) + dy.d_tilde[i].at(t)).collect(),
        f_hat: (0..n).map(|i| dy.f[i].at(t) + dy.f_tilde[i].at(t)).collect(),
        i_hat: co.i.at(t) + co.i_tilde.at(t),
        n_hat: co.n.at(t) + co.n_tilde.at(t),
        q_hat: co.q.at(t) + co.q_tilde.at(t),
        p_hat,
    })
}
