use std::sync::Arc;

use crate::control::FeedbackLaw;
use crate::Col;

/// A control policy usable by the particle engine.
///
/// `control_into` evaluates one particle's control (with a state-dim scratch
/// buffer so feedback laws stay allocation-free); `mean_control` gives the
/// control mean as a function of the mean state, which drives the analytic
/// mean ODE and the mean arguments of the running cost.
pub trait Policy: Sync {
    fn name(&self) -> &str {
        "policy"
    }

    fn control_into(
        &self,
        t: f64,
        x: &Col,
        xbar: &Col,
        factor_state: f64,
        tmp: &mut Col,
        out: &mut Col,
    );

    fn mean_control(&self, t: f64, xbar: &Col) -> Col;

    fn control_dim(&self) -> usize;
}

impl Policy for FeedbackLaw {
    fn name(&self) -> &str {
        "optimal-feedback"
    }

    fn control_into(
        &self,
        t: f64,
        x: &Col,
        xbar: &Col,
        factor_state: f64,
        tmp: &mut Col,
        out: &mut Col,
    ) {
        FeedbackLaw::control_into(self, t, x, xbar, factor_state, tmp, out);
    }

    fn mean_control(&self, t: f64, xbar: &Col) -> Col {
        let mut out = Col::zeros(self.control_dim());
        self.mean_control_into(t, xbar, &mut out);
        out
    }

    fn control_dim(&self) -> usize {
        FeedbackLaw::control_dim(self)
    }
}

/// The do-nothing policy.
pub struct ZeroPolicy {
    pub control_dim: usize,
}

impl Policy for ZeroPolicy {
    fn name(&self) -> &str {
        "zero"
    }

    fn control_into(&self, _t: f64, _x: &Col, _xbar: &Col, _f: f64, _tmp: &mut Col, out: &mut Col) {
        out.fill(0.0);
    }

    fn mean_control(&self, _t: f64, _xbar: &Col) -> Col {
        Col::zeros(self.control_dim)
    }

    fn control_dim(&self) -> usize {
        self.control_dim
    }
}

/// Deterministic open-loop control path.
pub struct OpenLoop {
    pub path: Arc<dyn Fn(f64) -> Col + Send + Sync>,
    pub control_dim: usize,
    pub label: String,
}

impl Policy for OpenLoop {
    fn name(&self) -> &str {
        &self.label
    }

    fn control_into(&self, t: f64, _x: &Col, _xbar: &Col, _f: f64, _tmp: &mut Col, out: &mut Col) {
        out.copy_from(&(self.path)(t));
    }

    fn mean_control(&self, t: f64, _xbar: &Col) -> Col {
        (self.path)(t)
    }

    fn control_dim(&self) -> usize {
        self.control_dim
    }
}

/// Optimal feedback plus a deterministic direction scaled by epsilon.
pub struct Perturbed<'a> {
    pub base: &'a FeedbackLaw,
    pub direction: Arc<dyn Fn(f64) -> Col + Send + Sync>,
    pub epsilon: f64,
    pub label: String,
}

impl Policy for Perturbed<'_> {
    fn name(&self) -> &str {
        &self.label
    }

    fn control_into(
        &self,
        t: f64,
        x: &Col,
        xbar: &Col,
        factor_state: f64,
        tmp: &mut Col,
        out: &mut Col,
    ) {
        self.base.control_into(t, x, xbar, factor_state, tmp, out);
        out.axpy(self.epsilon, &(self.direction)(t), 1.0);
    }

    fn mean_control(&self, t: f64, xbar: &Col) -> Col {
        let mut out = Col::zeros(self.control_dim());
        self.base.mean_control_into(t, xbar, &mut out);
        out.axpy(self.epsilon, &(self.direction)(t), 1.0);
        out
    }

    fn control_dim(&self) -> usize {
        self.base.control_dim()
    }
}

/// Optimal feedback with every control multiplied by a constant.
pub struct Scaled<'a> {
    pub base: &'a FeedbackLaw,
    pub gain: f64,
}

impl Policy for Scaled<'_> {
    fn name(&self) -> &str {
        "scaled-feedback"
    }

    fn control_into(
        &self,
        t: f64,
        x: &Col,
        xbar: &Col,
        factor_state: f64,
        tmp: &mut Col,
        out: &mut Col,
    ) {
        self.base.control_into(t, x, xbar, factor_state, tmp, out);
        *out *= self.gain;
    }

    fn mean_control(&self, t: f64, xbar: &Col) -> Col {
        let mut out = Col::zeros(self.control_dim());
        self.base.mean_control_into(t, xbar, &mut out);
        out * self.gain
    }

    fn control_dim(&self) -> usize {
        self.base.control_dim()
    }
}

/// Optimal feedback with a constant additive offset.
pub struct Shifted<'a> {
    pub base: &'a FeedbackLaw,
    pub offset: Col,
}

impl Policy for Shifted<'_> {
    fn name(&self) -> &str {
        "shifted-feedback"
    }

    fn control_into(
        &self,
        t: f64,
        x: &Col,
        xbar: &Col,
        factor_state: f64,
        tmp: &mut Col,
        out: &mut Col,
    ) {
        self.base.control_into(t, x, xbar, factor_state, tmp, out);
        *out += &self.offset;
    }

    fn mean_control(&self, t: f64, xbar: &Col) -> Col {
        let mut out = Col::zeros(self.control_dim());
        self.base.mean_control_into(t, xbar, &mut out);
        out + &self.offset
    }

    fn control_dim(&self) -> usize {
        self.base.control_dim()
    }
}

/// Optimal feedback evaluated with lagged coefficients (a stale-gain policy).
pub struct Delayed<'a> {
    pub base: &'a FeedbackLaw,
    pub lag: f64,
}

impl Policy for Delayed<'_> {
    fn name(&self) -> &str {
        "delayed-feedback"
    }

    fn control_into(
        &self,
        t: f64,
        x: &Col,
        xbar: &Col,
        factor_state: f64,
        tmp: &mut Col,
        out: &mut Col,
    ) {
        let lagged = (t - self.lag).max(0.0);
        self.base.control_into(lagged, x, xbar, factor_state, tmp, out);
    }

    fn mean_control(&self, t: f64, xbar: &Col) -> Col {
        let lagged = (t - self.lag).max(0.0);
        let mut out = Col::zeros(self.control_dim());
        self.base.mean_control_into(lagged, xbar, &mut out);
        out
    }

    fn control_dim(&self) -> usize {
        self.base.control_dim()
    }
}
