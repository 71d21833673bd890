//! Solvers for linear-quadratic McKean-Vlasov (mean-field) stochastic control
//! on finite and infinite horizon.
//!
//! The controlled state follows a linear SDE whose drift and diffusion depend
//! on the state, the control, and their expectations; the cost is quadratic in
//! all four. The optimal feedback law is assembled from
//!
//! * a pair of backward matrix Riccati equations (finite horizon) or their
//!   algebraic counterparts obtained as a horizon limit (infinite horizon),
//! * a linear mean-field BSDE for the adjoint process, solved in the tractable
//!   subclasses where the random coefficients are affine in an exogenous
//!   factor process, and
//! * a scalar discounted-integral remainder term.
//!
//! The [`simulate`] module provides an interacting-particle Euler-Maruyama
//! engine with common-random-number policy comparisons and an empirical check
//! of the weak martingale optimality principle. The [`apps`] module carries
//! closed forms for two worked problems (inventory liquidation with trade
//! crowding, exhaustible-resource production) that double as analytic oracles
//! for the generic pipeline.

pub mod apps;
pub mod bsde;
pub mod control;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod model;
pub mod numerics;
pub mod report;
pub mod riccati;
pub mod simulate;

pub use error::{LqmkvError, Result};
pub use grid::TimeGrid;
pub use model::{
    AssumptionReport, Cost, Dynamics, FactorKind, FactorModel, HatCoefficients, Horizon,
    InitialLaw, Problem,
};
pub use riccati::{RiccatiOptions, RiccatiSolution};

/// Dense dynamically-sized matrix used throughout the crate.
pub type Mat = nalgebra::DMatrix<f64>;
/// Dense dynamically-sized column vector used throughout the crate.
pub type Col = nalgebra::DVector<f64>;

/// Everything the solver stage produces: the Riccati gains, the adjoint
/// (mean, factor loading, remainder), and the assembled feedback law.
pub struct Solved {
    pub riccati: RiccatiSolution,
    pub adjoint: bsde::AdjointSolution,
    pub law: control::FeedbackLaw,
}

impl Solved {
    /// Value of the problem at time zero.
    pub fn value(&self, problem: &Problem) -> f64 {
        control::value(problem, &self.riccati, &self.adjoint)
    }
}

/// Run the full solver stage for a problem: Riccati gains, adjoint, feedback.
pub fn solve_problem(problem: &Problem, opts: &RiccatiOptions) -> Result<Solved> {
    let riccati = riccati::solve(problem, None, opts)?;
    let gains = control::gain_paths(problem, &riccati)?;
    let grid = bsde::adjoint_grid(problem, &riccati);
    let adjoint = bsde::solve_adjoint(problem, &riccati, &gains, &grid)?;
    let law = control::feedback_coefficients(problem, &riccati, &adjoint)?;
    Ok(Solved {
        riccati,
        adjoint,
        law,
    })
}
