//! Exogenous scalar factor processes with closed-form conditional means.
//!
//! Random coefficients are restricted to the factor-affine class
//! `theta(t) = a(t) + b(t) * F_t`; everything the solvers need from `F` is its
//! mean path, variance path, and the affine conditional-mean kernel
//! `E[F_s | F_t] = c0(t, s) + c1(t, s) * F_t`.

/// Built-in factor dynamics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FactorKind {
    /// Constant path `F_t = F_0` (the degenerate deterministic factor).
    Deterministic,
    /// Driftless arithmetic Brownian motion `dF = sigma dW` (a martingale).
    ArithmeticBrownian { sigma: f64 },
    /// Driftless geometric Brownian motion `dF = sigma F dW` (a martingale).
    GeometricBrownian { sigma: f64 },
    /// Mean-reverting `dF = kappa (mu - F) dt + sigma dW`.
    OrnsteinUhlenbeck { kappa: f64, mu: f64, sigma: f64 },
}

/// Scalar exogenous factor: dynamics, initial point, and which Brownian index
/// of the problem drives it.
#[derive(Clone, Debug)]
pub struct FactorModel {
    pub kind: FactorKind,
    pub initial: f64,
    pub noise_index: usize,
}

impl FactorModel {
    pub fn new(kind: FactorKind, initial: f64, noise_index: usize) -> Self {
        if let FactorKind::OrnsteinUhlenbeck { kappa, .. } = kind {
            assert!(kappa > 0.0, "mean reversion speed must be positive");
        }
        FactorModel {
            kind,
            initial,
            noise_index,
        }
    }

    pub fn deterministic(value: f64) -> Self {
        FactorModel::new(FactorKind::Deterministic, value, 0)
    }

    /// Unconditional mean `E[F_t]`.
    pub fn mean(&self, t: f64) -> f64 {
        match self.kind {
            FactorKind::Deterministic
            | FactorKind::ArithmeticBrownian { .. }
            | FactorKind::GeometricBrownian { .. } => self.initial,
            FactorKind::OrnsteinUhlenbeck { kappa, mu, .. } => {
                mu + (self.initial - mu) * (-kappa * t).exp()
            }
        }
    }

    /// Unconditional variance `Var(F_t)` (initial point is deterministic).
    pub fn variance(&self, t: f64) -> f64 {
        match self.kind {
            FactorKind::Deterministic => 0.0,
            FactorKind::ArithmeticBrownian { sigma } => sigma * sigma * t,
            FactorKind::GeometricBrownian { sigma } => {
                self.initial * self.initial * ((sigma * sigma * t).exp() - 1.0)
            }
            FactorKind::OrnsteinUhlenbeck { kappa, sigma, .. } => {
                sigma * sigma * (1.0 - (-2.0 * kappa * t).exp()) / (2.0 * kappa)
            }
        }
    }

    /// Affine conditional-mean kernel: `E[F_s | F_t] = c0 + c1 * F_t`, `s >= t`.
    pub fn cond_mean_affine(&self, t: f64, s: f64) -> (f64, f64) {
        debug_assert!(s >= t - 1e-12);
        match self.kind {
            FactorKind::Deterministic => (self.initial, 0.0),
            FactorKind::ArithmeticBrownian { .. } | FactorKind::GeometricBrownian { .. } => {
                (0.0, 1.0)
            }
            FactorKind::OrnsteinUhlenbeck { kappa, mu, .. } => {
                let e = (-kappa * (s - t)).exp();
                (mu * (1.0 - e), e)
            }
        }
    }

    /// `E[F_s | F_t = f]`.
    pub fn cond_mean(&self, t: f64, s: f64, f: f64) -> f64 {
        let (c0, c1) = self.cond_mean_affine(t, s);
        c0 + c1 * f
    }

    /// Whether `E[F_s | F_t] = F_t` holds exactly.
    pub fn is_martingale(&self) -> bool {
        matches!(
            self.kind,
            FactorKind::Deterministic
                | FactorKind::ArithmeticBrownian { .. }
                | FactorKind::GeometricBrownian { .. }
        )
    }

    /// Long-run mean level, when one exists.
    pub fn stationary_mean(&self) -> Option<f64> {
        match self.kind {
            FactorKind::Deterministic
            | FactorKind::ArithmeticBrownian { .. }
            | FactorKind::GeometricBrownian { .. } => Some(self.initial),
            FactorKind::OrnsteinUhlenbeck { mu, .. } => Some(mu),
        }
    }

    /// Whether the discounted second moment `int e^{-rho t} E[F_t^2] dt` is
    /// finite, decided per model class.
    pub fn square_integrable(&self, rho: f64, infinite_horizon: bool) -> bool {
        if !infinite_horizon {
            return true;
        }
        match self.kind {
            FactorKind::Deterministic | FactorKind::OrnsteinUhlenbeck { .. } => rho > 0.0,
            FactorKind::ArithmeticBrownian { .. } => rho > 0.0,
            FactorKind::GeometricBrownian { sigma } => rho > sigma * sigma,
        }
    }

    /// Exact one-step transition given a standard normal draw.
    pub fn exact_step(&self, f: f64, dt: f64, z: f64) -> f64 {
        match self.kind {
            FactorKind::Deterministic => f,
            FactorKind::ArithmeticBrownian { sigma } => f + sigma * dt.sqrt() * z,
            FactorKind::GeometricBrownian { sigma } => {
                f * (-0.5 * sigma * sigma * dt + sigma * dt.sqrt() * z).exp()
            }
            FactorKind::OrnsteinUhlenbeck { kappa, mu, sigma } => {
                let e = (-kappa * dt).exp();
                let sd = sigma * ((1.0 - e * e) / (2.0 * kappa)).sqrt();
                mu + (f - mu) * e + sd * z
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn mc_check(model: &FactorModel, n_paths: usize) {
        // Kernel at (t, t) reproduces the state exactly.
        for &t in &[0.0, 0.7, 2.3] {
            let f = 1.37;
            assert_eq!(model.cond_mean(t, t, f), {
                let (c0, c1) = model.cond_mean_affine(t, t);
                c0 + c1 * f
            });
            if !matches!(model.kind, FactorKind::Deterministic) {
                assert!((model.cond_mean(t, t, f) - f).abs() < 1e-12);
            }
        }

        // Unconditional mean at s equals the kernel from time 0 applied to F_0,
        // and the tower property holds on a 3-point grid, both within
        // 3 standard errors of a Monte-Carlo estimate.
        let (r, t, s) = (0.4, 0.9, 1.6);
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let n_sub = 64;
        let mut tower = Vec::with_capacity(n_paths);
        let mut at_s = Vec::with_capacity(n_paths);
        for _ in 0..n_paths {
            let mut f = model.initial;
            let dt_r = r / n_sub as f64;
            for _ in 0..n_sub {
                let z: f64 = StandardNormal.sample(&mut rng);
                f = model.exact_step(f, dt_r, z);
            }
            let f_r = f;
            let dt_t = (t - r) / n_sub as f64;
            for _ in 0..n_sub {
                let z: f64 = StandardNormal.sample(&mut rng);
                f = model.exact_step(f, dt_t, z);
            }
            // E over paths of kernel(t, s, F_t) should equal kernel(r, s, F_r).
            tower.push(model.cond_mean(t, s, f) - model.cond_mean(r, s, f_r));
            let dt_s = (s - t) / n_sub as f64;
            for _ in 0..n_sub {
                let z: f64 = StandardNormal.sample(&mut rng);
                f = model.exact_step(f, dt_s, z);
            }
            at_s.push(f);
        }
        let (m, se) = crate::numerics::mean_and_stderr(&tower);
        assert!(m.abs() <= 3.0 * se + 1e-12, "tower violated: {m} vs {se}");
        let (m, se) = crate::numerics::mean_and_stderr(&at_s);
        assert!(
            (m - model.mean(s)).abs() <= 3.0 * se + 1e-12,
            "mean violated: {m} vs {} (se {se})",
            model.mean(s)
        );
    }

    #[test]
    fn arithmetic_brownian_kernels() {
        mc_check(
            &FactorModel::new(FactorKind::ArithmeticBrownian { sigma: 0.8 }, 2.0, 0),
            4000,
        );
    }

    #[test]
    fn geometric_brownian_kernels() {
        mc_check(
            &FactorModel::new(FactorKind::GeometricBrownian { sigma: 0.4 }, 1.5, 0),
            4000,
        );
    }

    #[test]
    fn ornstein_uhlenbeck_kernels() {
        let m = FactorModel::new(
            FactorKind::OrnsteinUhlenbeck {
                kappa: 1.3,
                mu: 0.7,
                sigma: 0.5,
            },
            2.0,
            0,
        );
        mc_check(&m, 4000);
        // OU mean path decays toward mu.
        assert!((m.mean(0.0) - 2.0).abs() < 1e-15);
        assert!((m.mean(1e9) - 0.7).abs() < 1e-9);
        assert_eq!(m.stationary_mean(), Some(0.7));
        assert!(!m.is_martingale());
    }

    #[test]
    fn square_integrability_rules() {
        let gbm = FactorModel::new(FactorKind::GeometricBrownian { sigma: 0.5 }, 1.0, 0);
        assert!(gbm.square_integrable(0.3, true));
        assert!(!gbm.square_integrable(0.2, true));
        assert!(gbm.square_integrable(0.0, false));
    }
}
