use std::fmt;
use std::sync::Arc;

use crate::grid::TimeGrid;
use crate::model::FactorModel;
use crate::{Col, Mat};

/// Deterministic matrix-valued coefficient path, either constant in time or
/// supplied as a callable sampled where needed.
#[derive(Clone)]
pub enum MatPath {
    Const(Mat),
    Varying {
        rows: usize,
        cols: usize,
        f: Arc<dyn Fn(f64) -> Mat + Send + Sync>,
    },
}

impl fmt::Debug for MatPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatPath::Const(m) => write!(f, "MatPath::Const({}x{})", m.nrows(), m.ncols()),
            MatPath::Varying { rows, cols, .. } => write!(f, "MatPath::Varying({rows}x{cols})"),
        }
    }
}

impl MatPath {
    pub fn constant(m: Mat) -> Self {
        MatPath::Const(m)
    }

    pub fn scalar(v: f64) -> Self {
        MatPath::Const(Mat::from_element(1, 1, v))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        MatPath::Const(Mat::zeros(rows, cols))
    }

    pub fn varying(
        rows: usize,
        cols: usize,
        f: impl Fn(f64) -> Mat + Send + Sync + 'static,
    ) -> Self {
        MatPath::Varying {
            rows,
            cols,
            f: Arc::new(f),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            MatPath::Const(m) => (m.nrows(), m.ncols()),
            MatPath::Varying { rows, cols, .. } => (*rows, *cols),
        }
    }

    pub fn at(&self, t: f64) -> Mat {
        match self {
            MatPath::Const(m) => m.clone(),
            MatPath::Varying { f, .. } => f(t),
        }
    }

    pub fn is_const(&self) -> bool {
        matches!(self, MatPath::Const(_))
    }

    /// Largest spectral norm over the sample grid.
    pub fn sup_norm_on(&self, grid: &TimeGrid) -> f64 {
        match self {
            MatPath::Const(m) => crate::linalg::op_norm(m),
            MatPath::Varying { f, .. } => grid
                .times()
                .map(|t| crate::linalg::op_norm(&f(t)))
                .fold(0.0, f64::max),
        }
    }
}

/// Deterministic vector-valued coefficient path.
#[derive(Clone)]
pub enum VecPath {
    Const(Col),
    Varying {
        dim: usize,
        f: Arc<dyn Fn(f64) -> Col + Send + Sync>,
    },
}

impl fmt::Debug for VecPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VecPath::Const(v) => write!(f, "VecPath::Const({})", v.len()),
            VecPath::Varying { dim, .. } => write!(f, "VecPath::Varying({dim})"),
        }
    }
}

impl VecPath {
    pub fn constant(v: Col) -> Self {
        VecPath::Const(v)
    }

    pub fn scalar(v: f64) -> Self {
        VecPath::Const(Col::from_element(1, v))
    }

    pub fn zeros(dim: usize) -> Self {
        VecPath::Const(Col::zeros(dim))
    }

    pub fn varying(dim: usize, f: impl Fn(f64) -> Col + Send + Sync + 'static) -> Self {
        VecPath::Varying {
            dim,
            f: Arc::new(f),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            VecPath::Const(v) => v.len(),
            VecPath::Varying { dim, .. } => *dim,
        }
    }

    pub fn at(&self, t: f64) -> Col {
        match self {
            VecPath::Const(v) => v.clone(),
            VecPath::Varying { f, .. } => f(t),
        }
    }

    pub fn is_const(&self) -> bool {
        matches!(self, VecPath::Const(_))
    }

    pub fn is_zero(&self) -> bool {
        match self {
            VecPath::Const(v) => v.iter().all(|&x| x == 0.0),
            VecPath::Varying { .. } => false,
        }
    }
}

/// Coefficient process affine in the scalar exogenous factor:
/// `theta(t) = base(t) + loading(t) * F_t`.
///
/// A zero loading makes the channel deterministic; the conditional and
/// unconditional means then follow from the factor's closed-form kernels.
#[derive(Clone, Debug)]
pub struct FactorAffine {
    pub base: VecPath,
    pub loading: VecPath,
}

impl FactorAffine {
    pub fn deterministic(base: VecPath) -> Self {
        let dim = base.dim();
        FactorAffine {
            base,
            loading: VecPath::zeros(dim),
        }
    }

    pub fn zero(dim: usize) -> Self {
        FactorAffine {
            base: VecPath::zeros(dim),
            loading: VecPath::zeros(dim),
        }
    }

    pub fn new(base: VecPath, loading: VecPath) -> Self {
        assert_eq!(base.dim(), loading.dim(), "affine channel dims must agree");
        FactorAffine { base, loading }
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn is_deterministic(&self) -> bool {
        self.loading.is_zero()
    }

    pub fn is_zero(&self) -> bool {
        self.base.is_zero() && self.loading.is_zero()
    }

    /// Realized value at time `t` given the factor state.
    pub fn value(&self, t: f64, factor_state: f64) -> Col {
        let mut v = self.base.at(t);
        if !self.loading.is_zero() {
            v.axpy(factor_state, &self.loading.at(t), 1.0);
        }
        v
    }

    /// Unconditional mean `E[theta_t]`.
    pub fn mean(&self, t: f64, factor: Option<&FactorModel>) -> Col {
        let mut v = self.base.at(t);
        if !self.loading.is_zero() {
            let fbar = factor
                .map(|f| f.mean(t))
                .expect("factor-loaded channel requires a factor model");
            v.axpy(fbar, &self.loading.at(t), 1.0);
        }
        v
    }
}
